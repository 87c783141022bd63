//! Annotation service: task dispatch, validated submissions, progress, and
//! exports over a JSON REST API.
//!
//! Every state change is an entry in an append-only JSON Lines log that is
//! synced to disk before the request is acknowledged. On startup the log is
//! replayed from the beginning; an incomplete final line (a write cut short
//! by a crash) is dropped. Reads are served from an immutable snapshot that
//! is swapped after each successful append.

mod http;
mod log;
mod state;

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use chrono::Utc;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::annotation::{
    assign_groups, export_grammaticality_dataset, export_qa_dataset, validate_record, write_grammaticality_tsv,
    AnnotationRecord, AnnotationTask, AssignError, FieldVotes, Resolution, Submission, Violation,
    DEFAULT_GROUP_SIZE, DEFAULT_SLICE_FRACTION,
};
use crate::dataset::SquadDataset;

pub use self::http::{router, serve};
pub use self::log::{replay, EventLog, FaultPoint, LogError, RecoveryReport};
pub use self::state::{ApplyError, Event, LogEntry, SessionGrant, State};

pub const EVENT_LOG_FILE: &str = "events.jsonl";
const TOKEN_BYTES: usize = 32;
const MIN_ADMIN_TOKEN_LEN: usize = 16;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("missing or invalid token")]
    Unauthorized,
    #[error("{0}")]
    Forbidden(String),
    #[error("{0}")]
    Conflict(String),
    #[error("submission rejected")]
    Invalid(Vec<Violation>),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error(transparent)]
    Storage(#[from] LogError),
    #[error("configuration: {0}")]
    Config(String),
}

/// Settings read from a JSON file, then overridden by `QAFORGE_*`
/// environment variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
    pub port: u16,
    pub data_dir: PathBuf,
    pub admin_token: Option<String>,
    /// Directory with the web UI bundle, served at `/`.
    pub static_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1".into(),
            port: 8080,
            data_dir: PathBuf::from("annotation-data"),
            admin_token: None,
            static_dir: None,
        }
    }
}

impl ServiceConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, ServiceError> {
        let mut cfg = match path {
            Some(p) => crate::io::read_json(p).map_err(|e| ServiceError::Config(e.to_string()))?,
            None => Self::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<(), ServiceError> {
        if let Some(v) = get("QAFORGE_BIND") {
            self.bind = v;
        }
        if let Some(v) = get("QAFORGE_PORT") {
            self.port = v
                .parse()
                .map_err(|_| ServiceError::Config(format!("QAFORGE_PORT `{v}` is not a port number")))?;
        }
        if let Some(v) = get("QAFORGE_DATA_DIR") {
            self.data_dir = v.into();
        }
        if let Some(v) = get("QAFORGE_ADMIN_TOKEN") {
            self.admin_token = Some(v);
        }
        if let Some(v) = get("QAFORGE_STATIC_DIR") {
            self.static_dir = Some(v.into());
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        match &self.admin_token {
            Some(t) if t.len() >= MIN_ADMIN_TOKEN_LEN => Ok(()),
            Some(_) => Err(ServiceError::Config(format!(
                "admin token must be at least {MIN_ADMIN_TOKEN_LEN} characters"
            ))),
            None => Err(ServiceError::Config("admin token is not set (QAFORGE_ADMIN_TOKEN)".into())),
        }
    }
}

pub fn token_digest(token: &str) -> String {
    hex::encode(Sha256::digest(token.as_bytes()))
}

/// 256 random bits, hex encoded.
pub fn new_token() -> String {
    let mut bytes = [0u8; TOKEN_BYTES];
    rand::rng().fill_bytes(&mut bytes);
    hex::encode(bytes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResponse {
    pub task: AnnotationTask,
    pub done: usize,
    pub assigned: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitReceipt {
    pub seq: u64,
    pub gold_resolved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LoadRequest {
    Tasks { tasks: Vec<AnnotationTask> },
    Squad(SquadDataset),
}

impl LoadRequest {
    /// Answerable items of a SQuAD file become tasks with their first answer.
    pub fn into_tasks(self) -> Vec<AnnotationTask> {
        match self {
            LoadRequest::Tasks { tasks } => tasks,
            LoadRequest::Squad(ds) => ds
                .iter_qas()
                .filter(|(_, qa)| !qa.is_impossible && !qa.answers.is_empty())
                .map(|(p, qa)| AnnotationTask {
                    pair_id: qa.id.clone(),
                    context: p.context.clone(),
                    question: qa.question.clone(),
                    answer_text: qa.answers[0].text.clone(),
                    answer_start: qa.answers[0].answer_start,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadReceipt {
    pub seq: u64,
    pub tasks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignRequest {
    pub annotators: Vec<String>,
    #[serde(default = "default_group_size")]
    pub group_size: usize,
    #[serde(default = "default_slice_fraction")]
    pub slice_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_group_size() -> usize {
    DEFAULT_GROUP_SIZE
}

fn default_slice_fraction() -> f64 {
    DEFAULT_SLICE_FRACTION
}

/// A freshly issued annotator token. Only its digest is stored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IssuedSession {
    pub annotator_id: String,
    pub group: usize,
    pub token: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignResponse {
    pub seq: u64,
    pub groups: Vec<Vec<String>>,
    pub slices: usize,
    pub sessions: Vec<IssuedSession>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupProgress {
    pub group: usize,
    pub annotators: Vec<String>,
    /// Task-annotator pairs assigned to the group.
    pub assigned: usize,
    /// Submissions made by the group's annotators.
    pub annotated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskProgress {
    pub task_id: String,
    pub submissions: usize,
    pub votes: Option<FieldVotes>,
    pub gold: Option<Resolution>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub tasks: usize,
    pub submissions: usize,
    pub golds_resolved: usize,
    pub golds_unresolved: usize,
    pub groups: Vec<GroupProgress>,
    pub per_task: Vec<TaskProgress>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExportFile {
    pub body: Vec<u8>,
    pub content_type: &'static str,
    pub file_name: &'static str,
    /// Items (QA) or rows (grammaticality) in the file.
    pub count: usize,
    pub unresolved: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportKind {
    Qa,
    Grammaticality,
}

#[derive(Debug)]
struct Writer {
    log: EventLog,
    state: State,
}

/// The service core, independent of HTTP. Safe to share between threads.
#[derive(Debug)]
pub struct Service {
    writer: Mutex<Writer>,
    snapshot: RwLock<Arc<State>>,
    admin_digest: String,
    recovery: RecoveryReport,
}

impl Service {
    /// Opens the log in `data_dir`, replays it, and logs any gold label
    /// whose own entry was lost in a crash.
    pub fn open(data_dir: &Path, admin_token: &str) -> Result<Self, ServiceError> {
        let (mut log, mut state, recovery) = EventLog::open(data_dir.join(EVENT_LOG_FILE))?;
        let missing = state.unlogged_golds();
        if !missing.is_empty() {
            let entries = next_entries(&state, missing.into_iter().map(|gold| Event::GoldResolved { gold }));
            for e in &entries {
                state.apply(e).map_err(LogError::from)?;
            }
            log.append(&entries)?;
        }
        Ok(Self {
            snapshot: RwLock::new(Arc::new(state.clone())),
            writer: Mutex::new(Writer { log, state }),
            admin_digest: token_digest(admin_token),
            recovery,
        })
    }

    pub fn recovery(&self) -> &RecoveryReport {
        &self.recovery
    }

    pub fn snapshot(&self) -> Arc<State> {
        self.snapshot.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    fn check_admin(&self, token: Option<&str>) -> Result<(), ServiceError> {
        match token {
            Some(t) if token_digest(t) == self.admin_digest => Ok(()),
            _ => Err(ServiceError::Unauthorized),
        }
    }

    fn session(state: &State, token: Option<&str>) -> Result<SessionGrant, ServiceError> {
        token
            .and_then(|t| state.sessions.get(&token_digest(t)))
            .cloned()
            .ok_or(ServiceError::Unauthorized)
    }

    /// Appends events built from the current state and publishes the new
    /// state. Nothing changes unless the append is durable.
    fn commit<T>(
        &self,
        build: impl FnOnce(&State) -> Result<(Vec<Event>, T), ServiceError>,
    ) -> Result<(T, u64), ServiceError> {
        let mut w = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        let (events, out) = build(&w.state)?;
        let mut next = w.state.clone();
        let mut entries = next_entries(&next, events.into_iter());
        let mut i = 0;
        while i < entries.len() {
            next.apply(&entries[i]).map_err(|e| ServiceError::Conflict(e.to_string()))?;
            i += 1;
            // A submission that completes a quorum also logs the gold.
            if i == entries.len() {
                if let Some(gold) = next.unlogged_golds().into_iter().next() {
                    entries.push(LogEntry {
                        seq: next.last_seq + 1,
                        timestamp: Utc::now(),
                        event: Event::GoldResolved { gold },
                    });
                }
            }
        }
        w.log.append(&entries)?;
        let seq = entries.first().map_or(next.last_seq, |e| e.seq);
        w.state = next;
        *self.snapshot.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(w.state.clone());
        Ok((out, seq))
    }

    pub fn next_task(&self, token: Option<&str>) -> Result<Option<TaskResponse>, ServiceError> {
        let state = self.snapshot();
        let grant = Self::session(&state, token)?;
        let assigned = state
            .assignment
            .as_ref()
            .map_or(0, |a| a.tasks_for(&grant.annotator_id).len());
        Ok(state.next_task(&grant.annotator_id).map(|(_, task)| TaskResponse {
            task: task.clone(),
            done: state.annotated_by(&grant.annotator_id),
            assigned,
        }))
    }

    pub fn submit(&self, token: Option<&str>, submission: Submission) -> Result<SubmitReceipt, ServiceError> {
        let (gold_before, seq) = self.commit(|state| {
            let grant = Self::session(state, token)?;
            let assignment = state.assignment.as_ref().ok_or(ServiceError::Unauthorized)?;
            let (index, task) = state
                .task(&submission.task_id)
                .ok_or_else(|| ServiceError::Forbidden(format!("task {} is not assigned to you", submission.task_id)))?;
            if assignment.group_of_task(index) != Some(grant.group) {
                return Err(ServiceError::Forbidden(format!("task {} is not assigned to you", task.pair_id)));
            }
            if state.has_submitted(&task.pair_id, &grant.annotator_id) {
                return Err(ServiceError::Conflict(format!("task {} already annotated", task.pair_id)));
            }
            let record = AnnotationRecord::from_submission(submission, grant.annotator_id, Utc::now());
            let violations = validate_record(&record, task);
            if !violations.is_empty() {
                return Err(ServiceError::Invalid(violations));
            }
            let had_gold = state.golds.contains_key(&record.task_id);
            let task_id = record.task_id.clone();
            Ok((vec![Event::AnnotationSubmitted { record }], (had_gold, task_id)))
        })?;
        let (had_gold, task_id) = gold_before;
        Ok(SubmitReceipt {
            seq,
            gold_resolved: !had_gold && self.snapshot().golds.contains_key(&task_id),
        })
    }

    pub fn load(&self, admin_token: Option<&str>, request: LoadRequest) -> Result<LoadReceipt, ServiceError> {
        self.check_admin(admin_token)?;
        let tasks = request.into_tasks();
        if tasks.is_empty() {
            return Err(ServiceError::BadRequest("no tasks to load".into()));
        }
        if let Some(t) = tasks.iter().find(|t| !t.is_extractive()) {
            return Err(ServiceError::BadRequest(format!(
                "task {}: answer does not occur at answer_start",
                t.pair_id
            )));
        }
        let n = tasks.len();
        let ((), seq) = self.commit(|state| {
            if state.assignment.is_some() {
                return Err(ServiceError::Conflict("groups are already assigned".into()));
            }
            Ok((vec![Event::DatasetLoaded { tasks }], ()))
        })?;
        Ok(LoadReceipt { seq, tasks: n })
    }

    pub fn assign(&self, admin_token: Option<&str>, request: AssignRequest) -> Result<AssignResponse, ServiceError> {
        self.check_admin(admin_token)?;
        let ((groups, slices, sessions), seq) = self.commit(|state| {
            if state.tasks.is_empty() {
                return Err(ServiceError::Conflict("no dataset loaded".into()));
            }
            if state.submissions > 0 {
                return Err(ServiceError::Conflict("annotation has already started".into()));
            }
            let assignment = assign_groups(
                state.tasks.len(),
                &request.annotators,
                request.group_size,
                request.slice_fraction,
                request.seed,
            )
            .map_err(|e: AssignError| ServiceError::BadRequest(e.to_string()))?;
            let issued: Vec<IssuedSession> = assignment
                .groups
                .iter()
                .enumerate()
                .flat_map(|(g, members)| {
                    members.iter().map(move |a| IssuedSession {
                        annotator_id: a.clone(),
                        group: g,
                        token: new_token(),
                    })
                })
                .collect();
            let grants = issued
                .iter()
                .map(|s| SessionGrant {
                    annotator_id: s.annotator_id.clone(),
                    token_sha256: token_digest(&s.token),
                    group: s.group,
                })
                .collect();
            let out = (assignment.groups.clone(), assignment.slices.len(), issued);
            Ok((vec![Event::GroupsAssigned { assignment, sessions: grants }], out))
        })?;
        Ok(AssignResponse {
            seq,
            groups,
            slices,
            sessions,
        })
    }

    pub fn progress(&self, admin_token: Option<&str>) -> Result<Progress, ServiceError> {
        self.check_admin(admin_token)?;
        Ok(progress_of(&self.snapshot()))
    }

    pub fn export(&self, admin_token: Option<&str>, kind: ExportKind) -> Result<ExportFile, ServiceError> {
        self.check_admin(admin_token)?;
        let state = self.snapshot();
        let golds: Vec<_> = state.golds.values().cloned().collect();
        let unresolved = golds.iter().filter(|g| !g.is_resolved()).count();
        if golds.len() == unresolved {
            return Err(ServiceError::Conflict("no resolved gold labels yet".into()));
        }
        let internal = |e: crate::annotation::ExportError| ServiceError::Conflict(e.to_string());
        Ok(match kind {
            ExportKind::Qa => {
                let (ds, report) = export_qa_dataset(&golds, &state.tasks).map_err(internal)?;
                ExportFile {
                    body: ds.to_canonical_json().into_bytes(),
                    content_type: "application/json",
                    file_name: "annotated-squad.json",
                    count: report.answerable + report.unanswerable,
                    unresolved,
                }
            }
            ExportKind::Grammaticality => {
                let rows = export_grammaticality_dataset(&golds, &state.tasks).map_err(internal)?;
                let mut body = Vec::new();
                write_grammaticality_tsv(&rows, &mut body).map_err(internal)?;
                ExportFile {
                    body,
                    content_type: "text/tab-separated-values",
                    file_name: "grammaticality.tsv",
                    count: rows.len(),
                    unresolved,
                }
            }
        })
    }

    /// Arms a simulated crash for the next log append.
    #[doc(hidden)]
    pub fn inject_fault(&self, point: FaultPoint) {
        self.writer
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .log
            .inject_fault(point);
    }
}

fn next_entries(state: &State, events: impl Iterator<Item = Event>) -> Vec<LogEntry> {
    let now = Utc::now();
    events
        .enumerate()
        .map(|(i, event)| LogEntry {
            seq: state.last_seq + 1 + i as u64,
            timestamp: now,
            event,
        })
        .collect()
}

pub fn progress_of(state: &State) -> Progress {
    let groups = state
        .assignment
        .as_ref()
        .map(|a| {
            a.groups
                .iter()
                .enumerate()
                .map(|(g, members)| {
                    let slice_tasks: usize = a.slices.iter().filter(|s| s.group == g).map(|s| s.end - s.start).sum();
                    GroupProgress {
                        group: g,
                        annotators: members.clone(),
                        assigned: slice_tasks * members.len(),
                        annotated: members.iter().map(|m| state.annotated_by(m)).sum(),
                    }
                })
                .collect()
        })
        .unwrap_or_default();
    let per_task = state
        .tasks
        .iter()
        .map(|t| {
            let gold = state.golds.get(&t.pair_id);
            TaskProgress {
                task_id: t.pair_id.clone(),
                submissions: state.records.get(&t.pair_id).map_or(0, Vec::len),
                votes: gold.map(|g| g.votes.clone()),
                gold: gold.map(|g| g.resolution),
            }
        })
        .collect();
    Progress {
        tasks: state.tasks.len(),
        submissions: state.submissions,
        golds_resolved: state.golds.values().filter(|g| g.is_resolved()).count(),
        golds_unresolved: state.golds.values().filter(|g| !g.is_resolved()).count(),
        groups,
        per_task,
    }
}
