//! Human review of synthetic QA pairs: the judgement form as a validated
//! state machine, annotator group assignment, majority-vote gold labels, and
//! exports to grammaticality and QA datasets.
//!
//! The form is staged. A question is first judged suitable (answerable from
//! and relevant to the document) or not. Unsuitable questions carry a reason
//! and nothing else. Suitable ones are judged for naturalness, with a rewrite
//! when they do not read naturally, and their answer is judged for
//! naturalness and quality, with a correction unless it is precise and
//! correct. Rewritten and corrected answers must occur verbatim in the
//! document.

mod assign;
mod export;
mod vote;

use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::text::find_char;

pub use assign::{
    assign_groups, AssignError, Assignment, SliceAssignment, DEFAULT_GROUP_SIZE, DEFAULT_SLICE_FRACTION,
};
pub use export::{
    annotation_stats, export_grammaticality_dataset, export_qa_dataset, write_grammaticality_tsv,
    AnnotationStats, ExportError, GrammaticalityRow, QaExportReport, TextKind,
};
pub use vote::{majority_vote, resolve_golds, FieldVotes, GoldLabel, Resolution, VoteError, MIN_VOTERS};

/// A synthetic QA pair as shown to annotators.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationTask {
    pub pair_id: String,
    pub context: String,
    pub question: String,
    pub answer_text: String,
    /// Character offset of the answer in `context`.
    pub answer_start: usize,
}

impl AnnotationTask {
    pub fn is_extractive(&self) -> bool {
        crate::text::char_slice(
            &self.context,
            self.answer_start,
            self.answer_start + crate::text::char_len(&self.answer_text),
        ) == Some(self.answer_text.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum UnsuitableReason {
    NotAnswerable,
    NotRelevant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AnswerQuality {
    PreciseCorrect,
    Adequate,
    Incorrect,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct QuestionJudgement {
    pub suitable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unsuitable_reason: Option<UnsuitableReason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reads_naturally: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rewritten_question: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerJudgement {
    pub reads_naturally: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rewritten_answer: Option<String>,
    pub quality: AnswerQuality,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corrected_answer: Option<String>,
}

/// The form contents an annotator submits for one task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Submission {
    pub task_id: String,
    pub question: QuestionJudgement,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<AnswerJudgement>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub task_id: String,
    pub annotator_id: String,
    pub question: QuestionJudgement,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<AnswerJudgement>,
    pub timestamp: DateTime<Utc>,
}

impl AnnotationRecord {
    pub fn from_submission(s: Submission, annotator_id: impl Into<String>, timestamp: DateTime<Utc>) -> Self {
        Self {
            task_id: s.task_id,
            annotator_id: annotator_id.into(),
            question: s.question,
            answer: s.answer,
            timestamp,
        }
    }

    /// Shorthand for an unsuitable judgement, mostly for tests and fixtures.
    pub fn unsuitable(task_id: &str, annotator_id: &str, reason: UnsuitableReason) -> Self {
        Self {
            task_id: task_id.into(),
            annotator_id: annotator_id.into(),
            question: QuestionJudgement {
                suitable: false,
                unsuitable_reason: Some(reason),
                ..Default::default()
            },
            answer: None,
            timestamp: DateTime::UNIX_EPOCH,
        }
    }

    /// Suitable question that reads naturally with a natural answer of the
    /// given quality; non-precise answers are corrected to `correction`.
    pub fn suitable(task_id: &str, annotator_id: &str, quality: AnswerQuality, correction: Option<&str>) -> Self {
        Self {
            task_id: task_id.into(),
            annotator_id: annotator_id.into(),
            question: QuestionJudgement {
                suitable: true,
                reads_naturally: Some(true),
                ..Default::default()
            },
            answer: Some(AnswerJudgement {
                reads_naturally: true,
                rewritten_answer: None,
                quality,
                corrected_answer: correction.map(str::to_string),
            }),
            timestamp: DateTime::UNIX_EPOCH,
        }
    }
}

/// Which answer field a document-membership violation refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerField {
    RewrittenAnswer,
    CorrectedAnswer,
}

/// One broken rule of the judgement form.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "code", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Violation {
    TaskMismatch,
    ReasonRequired,
    ReasonOnSuitable,
    UnsuitableHasLabels,
    NaturalnessRequired,
    AnswerJudgementRequired,
    RewriteRequired,
    UnexpectedRewrite,
    AnswerRewriteRequired,
    UnexpectedAnswerRewrite,
    CorrectionRequired,
    UnexpectedCorrection,
    AnswerNotInDocument { field: AnswerField },
}

impl Violation {
    pub fn message(&self) -> &'static str {
        match self {
            Violation::TaskMismatch => "record does not belong to this task",
            Violation::ReasonRequired => "unsuitable questions need a reason",
            Violation::ReasonOnSuitable => "suitable questions take no unsuitability reason",
            Violation::UnsuitableHasLabels => "unsuitable questions are not labelled further",
            Violation::NaturalnessRequired => "question naturalness is required",
            Violation::AnswerJudgementRequired => "answer judgement is required",
            Violation::RewriteRequired => "rewrite required",
            Violation::UnexpectedRewrite => "natural questions take no rewrite",
            Violation::AnswerRewriteRequired => "answer rewrite required",
            Violation::UnexpectedAnswerRewrite => "natural answers take no rewrite",
            Violation::CorrectionRequired => "correction required",
            Violation::UnexpectedCorrection => "precise and correct answers take no correction",
            Violation::AnswerNotInDocument { .. } => "answer must appear within the document",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.message())
    }
}

/// Blank text fields count as absent.
fn blank(s: &Option<String>) -> bool {
    present(s).is_none()
}

pub(crate) fn present(s: &Option<String>) -> Option<&str> {
    s.as_deref().filter(|t| !t.trim().is_empty())
}

/// Every rule the submission breaks, in form order. Empty means valid.
pub fn validate_submission(
    task_id: &str,
    question: &QuestionJudgement,
    answer: Option<&AnswerJudgement>,
    task: &AnnotationTask,
) -> Vec<Violation> {
    let mut out = Vec::new();
    if task_id != task.pair_id {
        out.push(Violation::TaskMismatch);
    }
    if !question.suitable {
        if question.unsuitable_reason.is_none() {
            out.push(Violation::ReasonRequired);
        }
        if question.reads_naturally.is_some() || !blank(&question.rewritten_question) || answer.is_some() {
            out.push(Violation::UnsuitableHasLabels);
        }
        return out;
    }
    if question.unsuitable_reason.is_some() {
        out.push(Violation::ReasonOnSuitable);
    }
    match question.reads_naturally {
        None => out.push(Violation::NaturalnessRequired),
        Some(false) if blank(&question.rewritten_question) => out.push(Violation::RewriteRequired),
        Some(true) if !blank(&question.rewritten_question) => out.push(Violation::UnexpectedRewrite),
        _ => {}
    }
    let Some(a) = answer else {
        out.push(Violation::AnswerJudgementRequired);
        return out;
    };
    if !a.reads_naturally && blank(&a.rewritten_answer) {
        out.push(Violation::AnswerRewriteRequired);
    }
    if a.reads_naturally && !blank(&a.rewritten_answer) {
        out.push(Violation::UnexpectedAnswerRewrite);
    }
    let precise = a.quality == AnswerQuality::PreciseCorrect;
    if !precise && blank(&a.corrected_answer) {
        out.push(Violation::CorrectionRequired);
    }
    if precise && !blank(&a.corrected_answer) {
        out.push(Violation::UnexpectedCorrection);
    }
    for (field, text) in [
        (AnswerField::RewrittenAnswer, &a.rewritten_answer),
        (AnswerField::CorrectedAnswer, &a.corrected_answer),
    ] {
        if let Some(t) = present(text) {
            if find_char(&task.context, t).is_none() {
                out.push(Violation::AnswerNotInDocument { field });
            }
        }
    }
    out
}

pub fn validate_record(record: &AnnotationRecord, task: &AnnotationTask) -> Vec<Violation> {
    validate_submission(&record.task_id, &record.question, record.answer.as_ref(), task)
}
