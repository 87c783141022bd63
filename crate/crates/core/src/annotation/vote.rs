//! Majority-vote gold labels.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{present, AnnotationRecord, AnnotationTask, AnswerQuality, UnsuitableReason};

pub const MIN_VOTERS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum VoteError {
    #[error("task {task_id} has {count} record(s); at least {MIN_VOTERS} are needed")]
    TooFewRecords { task_id: String, count: usize },
    #[error("annotator {annotator_id} voted more than once on task {task_id}")]
    DuplicateAnnotator { task_id: String, annotator_id: String },
    #[error("records for different tasks were mixed ({0} and {1})")]
    MixedTasks(String, String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Resolution {
    Majority,
    Unresolved,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldVotes {
    pub suitable: usize,
    pub unsuitable: usize,
    pub not_answerable: usize,
    pub not_relevant: usize,
    pub question_natural: usize,
    pub question_unnatural: usize,
    pub answer_natural: usize,
    pub answer_unnatural: usize,
    pub precise_correct: usize,
    pub adequate: usize,
    pub incorrect: usize,
}

/// Consensus judgement for one task. Fields of stages that were never
/// reached (e.g. naturalness of an unsuitable question) are `None`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldLabel {
    pub task_id: String,
    pub resolution: Resolution,
    /// Voters, sorted.
    pub annotators: Vec<String>,
    pub suitable: Option<bool>,
    pub unsuitable_reason: Option<UnsuitableReason>,
    pub question_natural: Option<bool>,
    pub rewritten_question: Option<String>,
    pub answer_natural: Option<bool>,
    pub rewritten_answer: Option<String>,
    pub quality: Option<AnswerQuality>,
    pub corrected_answer: Option<String>,
    pub votes: FieldVotes,
    /// Names of fields without a strict majority.
    pub unresolved_fields: Vec<String>,
}

impl GoldLabel {
    pub fn is_resolved(&self) -> bool {
        self.resolution == Resolution::Majority
    }

    pub fn is_unsuitable(&self) -> bool {
        self.is_resolved() && self.suitable == Some(false)
    }

    pub fn is_suitable(&self) -> bool {
        self.is_resolved() && self.suitable == Some(true)
    }

    /// Rewritten question if any, else the original.
    pub fn final_question<'a>(&'a self, task: &'a AnnotationTask) -> &'a str {
        self.rewritten_question.as_deref().unwrap_or(&task.question)
    }

    /// Corrected answer, else rewritten answer, else the original.
    pub fn final_answer<'a>(&'a self, task: &'a AnnotationTask) -> &'a str {
        self.corrected_answer
            .as_deref()
            .or(self.rewritten_answer.as_deref())
            .unwrap_or(&task.answer_text)
    }
}

/// The value held by more than half of `votes`, if any.
fn strict_majority<T: Ord + Copy>(votes: &[T]) -> Option<T> {
    let mut counts: BTreeMap<T, usize> = BTreeMap::new();
    for v in votes {
        *counts.entry(*v).or_default() += 1;
    }
    counts
        .into_iter()
        .find(|(_, c)| 2 * c > votes.len())
        .map(|(v, _)| v)
}

/// Resolves one task's records into a gold label. The result does not
/// depend on record order.
pub fn majority_vote(records: &[AnnotationRecord]) -> Result<GoldLabel, VoteError> {
    let Some(first) = records.first() else {
        return Err(VoteError::TooFewRecords {
            task_id: String::new(),
            count: 0,
        });
    };
    let task_id = first.task_id.clone();
    if let Some(other) = records.iter().find(|r| r.task_id != task_id) {
        return Err(VoteError::MixedTasks(task_id, other.task_id.clone()));
    }
    if records.len() < MIN_VOTERS {
        return Err(VoteError::TooFewRecords {
            task_id,
            count: records.len(),
        });
    }
    let mut sorted: Vec<&AnnotationRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.annotator_id.cmp(&b.annotator_id));
    let mut seen = BTreeSet::new();
    for r in &sorted {
        if !seen.insert(r.annotator_id.as_str()) {
            return Err(VoteError::DuplicateAnnotator {
                task_id,
                annotator_id: r.annotator_id.clone(),
            });
        }
    }

    let mut votes = FieldVotes::default();
    let mut unresolved = Vec::new();
    let mut gold = GoldLabel {
        task_id,
        resolution: Resolution::Majority,
        annotators: sorted.iter().map(|r| r.annotator_id.clone()).collect(),
        suitable: None,
        unsuitable_reason: None,
        question_natural: None,
        rewritten_question: None,
        answer_natural: None,
        rewritten_answer: None,
        quality: None,
        corrected_answer: None,
        votes: FieldVotes::default(),
        unresolved_fields: Vec::new(),
    };

    let suitability: Vec<bool> = sorted.iter().map(|r| r.question.suitable).collect();
    votes.suitable = suitability.iter().filter(|&&s| s).count();
    votes.unsuitable = suitability.len() - votes.suitable;
    let reasons: Vec<UnsuitableReason> = sorted.iter().filter_map(|r| r.question.unsuitable_reason).collect();
    votes.not_answerable = reasons.iter().filter(|&&r| r == UnsuitableReason::NotAnswerable).count();
    votes.not_relevant = reasons.len() - votes.not_answerable;

    // Later stages are voted on only by annotators who reached them.
    let judged: Vec<&AnnotationRecord> = sorted.iter().copied().filter(|r| r.question.suitable).collect();
    let q_natural: Vec<(bool, &AnnotationRecord)> = judged
        .iter()
        .filter_map(|r| r.question.reads_naturally.map(|n| (n, *r)))
        .collect();
    let answers: Vec<_> = judged.iter().filter_map(|r| r.answer.as_ref().map(|a| (a, *r))).collect();
    votes.question_natural = q_natural.iter().filter(|(n, _)| *n).count();
    votes.question_unnatural = q_natural.len() - votes.question_natural;
    votes.answer_natural = answers.iter().filter(|(a, _)| a.reads_naturally).count();
    votes.answer_unnatural = answers.len() - votes.answer_natural;
    for (a, _) in &answers {
        match a.quality {
            AnswerQuality::PreciseCorrect => votes.precise_correct += 1,
            AnswerQuality::Adequate => votes.adequate += 1,
            AnswerQuality::Incorrect => votes.incorrect += 1,
        }
    }

    gold.suitable = strict_majority(&suitability);
    match gold.suitable {
        None => unresolved.push("suitable"),
        Some(false) => gold.unsuitable_reason = strict_majority(&reasons),
        Some(true) => {
            let nat: Vec<bool> = q_natural.iter().map(|(n, _)| *n).collect();
            gold.question_natural = strict_majority(&nat);
            match gold.question_natural {
                None => unresolved.push("question_natural"),
                Some(true) => {}
                Some(false) => {
                    gold.rewritten_question = q_natural
                        .iter()
                        .filter(|(n, _)| !*n)
                        .find_map(|(_, r)| present(&r.question.rewritten_question))
                        .map(str::to_string);
                }
            }

            let nat: Vec<bool> = answers.iter().map(|(a, _)| a.reads_naturally).collect();
            gold.answer_natural = strict_majority(&nat);
            match gold.answer_natural {
                None => unresolved.push("answer_natural"),
                Some(true) => {}
                Some(false) => {
                    gold.rewritten_answer = answers
                        .iter()
                        .filter(|(a, _)| !a.reads_naturally)
                        .find_map(|(a, _)| present(&a.rewritten_answer))
                        .map(str::to_string);
                }
            }

            let qual: Vec<AnswerQuality> = answers.iter().map(|(a, _)| a.quality).collect();
            gold.quality = strict_majority(&qual);
            match gold.quality {
                None => unresolved.push("quality"),
                Some(AnswerQuality::PreciseCorrect) => {}
                Some(q) => {
                    gold.corrected_answer = answers
                        .iter()
                        .filter(|(a, _)| a.quality == q)
                        .find_map(|(a, _)| present(&a.corrected_answer))
                        .map(str::to_string);
                }
            }
        }
    }

    gold.votes = votes;
    if !unresolved.is_empty() {
        gold.resolution = Resolution::Unresolved;
    }
    gold.unresolved_fields = unresolved.into_iter().map(str::to_string).collect();
    Ok(gold)
}

/// Groups records by task and votes on every task with enough records.
/// Tasks with fewer than [`MIN_VOTERS`] records are skipped.
pub fn resolve_golds(records: &[AnnotationRecord]) -> Result<Vec<GoldLabel>, VoteError> {
    let mut by_task: BTreeMap<&str, Vec<AnnotationRecord>> = BTreeMap::new();
    for r in records {
        by_task.entry(r.task_id.as_str()).or_default().push(r.clone());
    }
    by_task
        .into_values()
        .filter(|rs| rs.len() >= MIN_VOTERS)
        .map(|rs| majority_vote(&rs))
        .collect()
}
