//! Service state as a pure fold over the event log.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::annotation::{majority_vote, AnnotationRecord, AnnotationTask, Assignment, GoldLabel};

/// An annotator's bearer token, stored only as its SHA-256 digest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionGrant {
    pub annotator_id: String,
    pub token_sha256: String,
    pub group: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Event {
    DatasetLoaded { tasks: Vec<AnnotationTask> },
    GroupsAssigned { assignment: Assignment, sessions: Vec<SessionGrant> },
    AnnotationSubmitted { record: AnnotationRecord },
    GoldResolved { gold: GoldLabel },
}

impl Event {
    pub fn kind(&self) -> &'static str {
        match self {
            Event::DatasetLoaded { .. } => "DATASET_LOADED",
            Event::GroupsAssigned { .. } => "GROUPS_ASSIGNED",
            Event::AnnotationSubmitted { .. } => "ANNOTATION_SUBMITTED",
            Event::GoldResolved { .. } => "GOLD_RESOLVED",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub seq: u64,
    pub timestamp: DateTime<Utc>,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ApplyError {
    #[error("expected seq {expected}, found {found}")]
    Sequence { expected: u64, found: u64 },
    #[error("seq {seq}: {reason}")]
    Rejected { seq: u64, reason: String },
}

/// Everything the service knows, derived only from applied events.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct State {
    pub tasks: Vec<AnnotationTask>,
    task_index: HashMap<String, usize>,
    pub assignment: Option<Assignment>,
    /// Token digest → grant.
    pub sessions: BTreeMap<String, SessionGrant>,
    /// Records per task in arrival order.
    pub records: BTreeMap<String, Vec<AnnotationRecord>>,
    pub golds: BTreeMap<String, GoldLabel>,
    /// Tasks whose gold has its own log entry.
    pub golds_logged: BTreeSet<String>,
    pub last_seq: u64,
    pub submissions: usize,
}

impl State {
    pub fn task(&self, task_id: &str) -> Option<(usize, &AnnotationTask)> {
        self.task_index.get(task_id).map(|&i| (i, &self.tasks[i]))
    }

    pub fn group_size(&self) -> Option<usize> {
        self.assignment.as_ref().and_then(|a| a.groups.first()).map(Vec::len)
    }

    pub fn has_submitted(&self, task_id: &str, annotator_id: &str) -> bool {
        self.records
            .get(task_id)
            .is_some_and(|rs| rs.iter().any(|r| r.annotator_id == annotator_id))
    }

    /// Lowest-index task in the annotator's slices they have not annotated.
    pub fn next_task(&self, annotator_id: &str) -> Option<(usize, &AnnotationTask)> {
        let assignment = self.assignment.as_ref()?;
        assignment
            .tasks_for(annotator_id)
            .into_iter()
            .map(|i| (i, &self.tasks[i]))
            .find(|(_, t)| !self.has_submitted(&t.pair_id, annotator_id))
    }

    pub fn annotated_by(&self, annotator_id: &str) -> usize {
        self.records
            .values()
            .filter(|rs| rs.iter().any(|r| r.annotator_id == annotator_id))
            .count()
    }

    /// Gold labels that exist for tasks at quorum but have no log entry yet.
    pub fn unlogged_golds(&self) -> Vec<GoldLabel> {
        self.golds
            .values()
            .filter(|g| !self.golds_logged.contains(&g.task_id))
            .cloned()
            .collect()
    }

    /// Applies one entry. Identical entry sequences always yield identical
    /// states, which is what recovery relies on.
    pub fn apply(&mut self, entry: &LogEntry) -> Result<(), ApplyError> {
        let expected = self.last_seq + 1;
        if entry.seq != expected {
            return Err(ApplyError::Sequence {
                expected,
                found: entry.seq,
            });
        }
        let reject = |reason: String| ApplyError::Rejected { seq: entry.seq, reason };
        match &entry.event {
            Event::DatasetLoaded { tasks } => {
                if self.assignment.is_some() {
                    return Err(reject("dataset reloaded after groups were assigned".into()));
                }
                let mut index = HashMap::new();
                for (i, t) in tasks.iter().enumerate() {
                    if index.insert(t.pair_id.clone(), i).is_some() {
                        return Err(reject(format!("duplicate task id {}", t.pair_id)));
                    }
                }
                self.tasks = tasks.clone();
                self.task_index = index;
            }
            Event::GroupsAssigned { assignment, sessions } => {
                if self.submissions > 0 {
                    return Err(reject("groups reassigned after submissions".into()));
                }
                if self.tasks.is_empty() {
                    return Err(reject("groups assigned before a dataset was loaded".into()));
                }
                self.assignment = Some(assignment.clone());
                self.sessions = sessions
                    .iter()
                    .map(|s| (s.token_sha256.clone(), s.clone()))
                    .collect();
            }
            Event::AnnotationSubmitted { record } => {
                let quorum = self.group_size().ok_or_else(|| reject("submission before assignment".into()))?;
                if self.task(&record.task_id).is_none() {
                    return Err(reject(format!("unknown task {}", record.task_id)));
                }
                if self.has_submitted(&record.task_id, &record.annotator_id) {
                    return Err(reject(format!(
                        "{} already annotated {}",
                        record.annotator_id, record.task_id
                    )));
                }
                let records = self.records.entry(record.task_id.clone()).or_default();
                if records.len() >= quorum {
                    return Err(reject(format!("task {} is already at quorum", record.task_id)));
                }
                records.push(record.clone());
                self.submissions += 1;
                if records.len() == quorum {
                    let gold = majority_vote(records).map_err(|e| reject(e.to_string()))?;
                    self.golds.insert(record.task_id.clone(), gold);
                }
            }
            Event::GoldResolved { gold } => match self.golds.get(&gold.task_id) {
                Some(derived) if derived == gold => {
                    self.golds_logged.insert(gold.task_id.clone());
                }
                Some(_) => return Err(reject(format!("gold for {} disagrees with its votes", gold.task_id))),
                None => return Err(reject(format!("gold for {} logged before quorum", gold.task_id))),
            },
        }
        self.last_seq = entry.seq;
        Ok(())
    }
}
