//! Datasets and statistics derived from gold labels.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{AnnotationTask, AnswerQuality, GoldLabel};
use crate::dataset::{Answer, Article, Paragraph, QaItem, SquadDataset};
use crate::gateway::GrammaticalityLabel;
use crate::text::find_char;

/// Title of the single article in QA exports.
pub const EXPORT_TITLE: &str = "annotated";

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error("gold label refers to unknown task {0}")]
    UnknownTask(String),
    #[error("answer `{answer}` of task {task_id} does not occur in its context")]
    AnswerNotInContext { task_id: String, answer: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextKind {
    Question,
    Answer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrammaticalityRow {
    pub task_id: String,
    pub kind: TextKind,
    pub text: String,
    pub label: GrammaticalityLabel,
}

fn task_index(tasks: &[AnnotationTask]) -> HashMap<&str, &AnnotationTask> {
    tasks.iter().map(|t| (t.pair_id.as_str(), t)).collect()
}

fn label(natural: bool) -> GrammaticalityLabel {
    if natural {
        GrammaticalityLabel::Grammatical
    } else {
        GrammaticalityLabel::Ungrammatical
    }
}

/// Rows for training a grammaticality classifier. Each resolved suitable
/// task contributes its original question and answer labelled by the
/// consensus naturalness, plus any accepted rewrite labelled grammatical.
/// Unsuitable and unresolved tasks contribute nothing.
pub fn export_grammaticality_dataset(
    golds: &[GoldLabel],
    tasks: &[AnnotationTask],
) -> Result<Vec<GrammaticalityRow>, ExportError> {
    let index = task_index(tasks);
    let mut rows = Vec::new();
    for gold in golds.iter().filter(|g| g.is_suitable()) {
        let task = index
            .get(gold.task_id.as_str())
            .ok_or_else(|| ExportError::UnknownTask(gold.task_id.clone()))?;
        let mut push = |kind, text: &str, natural| {
            rows.push(GrammaticalityRow {
                task_id: gold.task_id.clone(),
                kind,
                text: text.to_string(),
                label: label(natural),
            })
        };
        let q_natural = gold.question_natural.unwrap_or(true);
        let a_natural = gold.answer_natural.unwrap_or(true);
        push(TextKind::Question, &task.question, q_natural);
        if let Some(rewrite) = &gold.rewritten_question {
            push(TextKind::Question, rewrite, true);
        }
        push(TextKind::Answer, &task.answer_text, a_natural);
        if let Some(rewrite) = &gold.rewritten_answer {
            push(TextKind::Answer, rewrite, true);
        }
    }
    Ok(rows)
}

/// Two tab-separated columns, `text` and `label`, with a header row.
pub fn write_grammaticality_tsv<W: Write>(rows: &[GrammaticalityRow], out: W) -> Result<(), ExportError> {
    let mut w = csv::WriterBuilder::new().delimiter(b'\t').from_writer(out);
    w.write_record(["text", "label"])?;
    for row in rows {
        let label = match row.label {
            GrammaticalityLabel::Grammatical => "grammatical",
            GrammaticalityLabel::Ungrammatical => "ungrammatical",
        };
        w.write_record([row.text.as_str(), label])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaExportReport {
    pub answerable: usize,
    pub unanswerable: usize,
    /// Golds without a strict majority on some field; not exported.
    pub unresolved: usize,
}

/// SQuAD 2.0 dataset from resolved golds, in task order. Suitable tasks
/// become answerable items with the consensus question and answer;
/// unsuitable ones become unanswerable items with the original question.
/// Edited answers are located at their first occurrence in the context.
pub fn export_qa_dataset(
    golds: &[GoldLabel],
    tasks: &[AnnotationTask],
) -> Result<(SquadDataset, QaExportReport), ExportError> {
    let index = task_index(tasks);
    if let Some(g) = golds.iter().find(|g| !index.contains_key(g.task_id.as_str())) {
        return Err(ExportError::UnknownTask(g.task_id.clone()));
    }
    let by_task: HashMap<&str, &GoldLabel> = golds.iter().map(|g| (g.task_id.as_str(), g)).collect();
    let mut report = QaExportReport {
        unresolved: golds.iter().filter(|g| !g.is_resolved()).count(),
        ..Default::default()
    };
    let mut paragraphs: Vec<Paragraph> = Vec::new();
    let mut slot: HashMap<&str, usize> = HashMap::new();
    for task in tasks {
        let Some(gold) = by_task.get(task.pair_id.as_str()).filter(|g| g.is_resolved()) else {
            continue;
        };
        let item = if gold.is_unsuitable() {
            report.unanswerable += 1;
            QaItem::impossible(task.pair_id.clone(), task.question.clone())
        } else {
            report.answerable += 1;
            let text = gold.final_answer(task);
            let start = if text == task.answer_text {
                task.answer_start
            } else {
                find_char(&task.context, text).ok_or_else(|| ExportError::AnswerNotInContext {
                    task_id: task.pair_id.clone(),
                    answer: text.to_string(),
                })?
            };
            QaItem::answerable(task.pair_id.clone(), gold.final_question(task), Answer::new(text, start))
        };
        let i = *slot.entry(task.context.as_str()).or_insert_with(|| {
            paragraphs.push(Paragraph::new(task.context.clone(), Vec::new()));
            paragraphs.len() - 1
        });
        paragraphs[i].qas.push(item);
    }
    let articles = if paragraphs.is_empty() {
        Vec::new()
    } else {
        vec![Article::new(EXPORT_TITLE, paragraphs)]
    };
    Ok((SquadDataset::new(articles), report))
}

/// Consensus shares, in percent. Naturalness and quality shares are over
/// suitable tasks only; `None` when the denominator is zero.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnnotationStats {
    /// Resolved golds the shares are computed over.
    pub n: usize,
    pub n_unresolved: usize,
    pub n_suitable: usize,
    pub suitable_pct: Option<f64>,
    pub natural_question_pct: Option<f64>,
    pub natural_answer_pct: Option<f64>,
    pub precise_pct: Option<f64>,
    pub adequate_pct: Option<f64>,
    pub incorrect_pct: Option<f64>,
    /// Suitable with a precise or adequate answer, over all tasks.
    pub suitable_correct_pct: Option<f64>,
    /// Unsuitable, rewritten, or with a corrected answer, over all tasks.
    pub needing_any_edit_pct: Option<f64>,
}

fn pct(count: usize, of: usize) -> Option<f64> {
    (of > 0).then(|| 100.0 * count as f64 / of as f64)
}

pub fn annotation_stats(golds: &[GoldLabel]) -> AnnotationStats {
    let resolved: Vec<&GoldLabel> = golds.iter().filter(|g| g.is_resolved()).collect();
    let suitable: Vec<&GoldLabel> = resolved.iter().copied().filter(|g| g.is_suitable()).collect();
    let n = resolved.len();
    let s = suitable.len();
    let count = |f: &dyn Fn(&GoldLabel) -> bool| suitable.iter().filter(|g| f(g)).count();
    let quality = |q| count(&|g| g.quality == Some(q));
    let correct = count(&|g| matches!(g.quality, Some(AnswerQuality::PreciseCorrect | AnswerQuality::Adequate)));
    let edited = resolved
        .iter()
        .filter(|g| {
            g.suitable == Some(false)
                || g.question_natural == Some(false)
                || g.answer_natural == Some(false)
                || g.quality != Some(AnswerQuality::PreciseCorrect)
        })
        .count();
    AnnotationStats {
        n,
        n_unresolved: golds.len() - n,
        n_suitable: s,
        suitable_pct: pct(s, n),
        natural_question_pct: pct(count(&|g| g.question_natural == Some(true)), s),
        natural_answer_pct: pct(count(&|g| g.answer_natural == Some(true)), s),
        precise_pct: pct(quality(AnswerQuality::PreciseCorrect), s),
        adequate_pct: pct(quality(AnswerQuality::Adequate), s),
        incorrect_pct: pct(quality(AnswerQuality::Incorrect), s),
        suitable_correct_pct: pct(correct, n),
        needing_any_edit_pct: pct(edited, n),
    }
}
