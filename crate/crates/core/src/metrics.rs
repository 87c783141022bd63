//! QA evaluation (SQuAD 2.0 exact match and token F1), macro-F1 for binary
//! classifiers, and round-trip evaluation of synthetic QA pairs.
//!
//! Normalization follows the official SQuAD 2.0 evaluation script: lowercase,
//! strip ASCII punctuation, replace the articles `a`/`an`/`the` with spaces,
//! then collapse whitespace. Scores in reports use a 0–100 scale.

use std::collections::{BTreeMap, HashMap};
use std::sync::LazyLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::dataset::SquadDataset;
use crate::gateway::QuestionAnswerer;

/// Share of failed QA calls above which round-trip evaluation logs a warning.
pub const ROUNDTRIP_ERROR_WARN_SHARE: f64 = 0.05;

static ARTICLES: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\b(a|an|the)\b").expect("valid article regex"));

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("{count} question(s) have no prediction: {}", .ids.join(", "))]
    MissingPredictions { count: usize, ids: Vec<String> },
    #[error("label lists differ in length ({gold} gold vs {pred} predicted)")]
    LengthMismatch { gold: usize, pred: usize },
    #[error("no labels to score")]
    Empty,
}

/// Python's `str.split()` also splits on the ASCII information separators.
fn is_python_whitespace(c: char) -> bool {
    c.is_whitespace() || ('\u{1c}'..='\u{1f}').contains(&c)
}

fn split_tokens(s: &str) -> impl Iterator<Item = &str> {
    s.split(is_python_whitespace).filter(|t| !t.is_empty())
}

pub fn normalize_answer(text: &str) -> String {
    let lowered = text.to_lowercase();
    let no_punct: String = lowered.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    let no_articles = ARTICLES.replace_all(&no_punct, " ");
    split_tokens(&no_articles).collect::<Vec<_>>().join(" ")
}

pub fn answer_tokens(text: &str) -> Vec<String> {
    split_tokens(&normalize_answer(text)).map(str::to_string).collect()
}

/// Golds as the official script sees them: answers that normalize to
/// nothing are dropped, and an empty list becomes the single no-answer gold.
fn effective_golds<S: AsRef<str>>(golds: &[S]) -> Vec<&str> {
    let kept: Vec<&str> = golds
        .iter()
        .map(AsRef::as_ref)
        .filter(|g| !normalize_answer(g).is_empty())
        .collect();
    if kept.is_empty() {
        vec![""]
    } else {
        kept
    }
}

/// 1.0 if the prediction matches any gold after normalization, else 0.0.
/// An empty gold list means the question has no answer.
pub fn exact_match<S: AsRef<str>>(pred: &str, golds: &[S]) -> f64 {
    let pred = normalize_answer(pred);
    let hit = effective_golds(golds)
        .iter()
        .any(|g| normalize_answer(g) == pred);
    if hit {
        1.0
    } else {
        0.0
    }
}

fn f1_single(pred_toks: &[String], gold: &str) -> f64 {
    let gold_toks = answer_tokens(gold);
    if gold_toks.is_empty() || pred_toks.is_empty() {
        return if gold_toks == pred_toks { 1.0 } else { 0.0 };
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &gold_toks {
        *counts.entry(t).or_default() += 1;
    }
    let mut same = 0usize;
    for t in pred_toks {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                same += 1;
            }
        }
    }
    if same == 0 {
        return 0.0;
    }
    let precision = same as f64 / pred_toks.len() as f64;
    let recall = same as f64 / gold_toks.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Maximum token-level F1 over the golds, in [0, 1].
pub fn token_f1<S: AsRef<str>>(pred: &str, golds: &[S]) -> f64 {
    let pred_toks = answer_tokens(pred);
    effective_golds(golds)
        .iter()
        .map(|g| f1_single(&pred_toks, g))
        .fold(0.0, f64::max)
}

/// A model's answer for one question.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub text: String,
    pub null_score: f64,
}

impl Prediction {
    pub fn new(text: impl Into<String>, null_score: f64) -> Self {
        Self {
            text: text.into(),
            null_score,
        }
    }
}

/// Accepts both `{"text": .., "null_score": ..}` and the official script's
/// bare-string form (null score 0).
impl<'de> Deserialize<'de> for Prediction {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Full {
            text: String,
            #[serde(default)]
            null_score: f64,
        }
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Text(String),
            Full(Full),
        }
        Ok(match Repr::deserialize(d)? {
            Repr::Text(text) => Prediction { text, null_score: 0.0 },
            Repr::Full(f) => Prediction {
                text: f.text,
                null_score: f.null_score,
            },
        })
    }
}

pub type Predictions = BTreeMap<String, Prediction>;

/// Per-question scores, in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemScore {
    pub id: String,
    pub answerable: bool,
    pub exact_match: f64,
    pub f1: f64,
    /// Scores the item gets when a threshold turns its prediction into an
    /// abstention: 1 for unanswerable questions, 0 otherwise.
    pub null_exact_match: f64,
    pub null_f1: f64,
    pub null_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaScore {
    pub em: f64,
    pub f1: f64,
    pub answerable_em: Option<f64>,
    pub answerable_f1: Option<f64>,
    pub unanswerable_em: Option<f64>,
    pub n_total: usize,
    pub n_answerable: usize,
    pub n_unanswerable: usize,
}

/// Scores every question in dataset order without applying any threshold.
pub fn score_items(dataset: &SquadDataset, predictions: &Predictions) -> Result<Vec<ItemScore>, MetricsError> {
    let missing: Vec<String> = dataset
        .iter_qas()
        .filter(|(_, qa)| !predictions.contains_key(&qa.id))
        .map(|(_, qa)| qa.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(MetricsError::MissingPredictions {
            count: missing.len(),
            ids: missing,
        });
    }
    Ok(dataset
        .iter_qas()
        .map(|(_, qa)| {
            let pred = &predictions[&qa.id];
            let golds: Vec<&str> = qa.answers.iter().map(|a| a.text.as_str()).collect();
            let null_credit = if qa.is_impossible { 1.0 } else { 0.0 };
            ItemScore {
                id: qa.id.clone(),
                answerable: !qa.is_impossible,
                exact_match: exact_match(&pred.text, &golds),
                f1: token_f1(&pred.text, &golds),
                // Abstaining is right exactly when the question has no
                // answer, even if every gold normalizes to nothing.
                null_exact_match: null_credit,
                null_f1: null_credit,
                null_score: pred.null_score,
            }
        })
        .collect())
}

fn pct_mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| 100.0 * sum / n as f64)
}

/// Aggregates item scores; items with `null_score > threshold` are scored
/// as abstentions.
pub fn aggregate(items: &[ItemScore], null_threshold: Option<f64>) -> QaScore {
    let nulled = |it: &ItemScore| null_threshold.is_some_and(|t| it.null_score > t);
    let em_of = |it: &ItemScore| if nulled(it) { it.null_exact_match } else { it.exact_match };
    let f1_of = |it: &ItemScore| if nulled(it) { it.null_f1 } else { it.f1 };
    let n_answerable = items.iter().filter(|i| i.answerable).count();
    QaScore {
        em: pct_mean(items.iter().map(em_of)).unwrap_or(0.0),
        f1: pct_mean(items.iter().map(f1_of)).unwrap_or(0.0),
        answerable_em: pct_mean(items.iter().filter(|i| i.answerable).map(em_of)),
        answerable_f1: pct_mean(items.iter().filter(|i| i.answerable).map(f1_of)),
        unanswerable_em: pct_mean(items.iter().filter(|i| !i.answerable).map(em_of)),
        n_total: items.len(),
        n_answerable,
        n_unanswerable: items.len() - n_answerable,
    }
}

pub fn evaluate_qa(
    dataset: &SquadDataset,
    predictions: &Predictions,
    null_threshold: Option<f64>,
) -> Result<QaScore, MetricsError> {
    Ok(aggregate(&score_items(dataset, predictions)?, null_threshold))
}

/// Unweighted mean of the per-class F1 of a binary classifier, 0–100. A class
/// with no true positives scores 0.
pub fn macro_f1(gold: &[bool], pred: &[bool]) -> Result<f64, MetricsError> {
    if gold.len() != pred.len() {
        return Err(MetricsError::LengthMismatch {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    if gold.is_empty() {
        return Err(MetricsError::Empty);
    }
    let class_f1 = |class: bool| {
        let (mut tp, mut fp, mut fnn) = (0usize, 0usize, 0usize);
        for (&g, &p) in gold.iter().zip(pred) {
            match (g == class, p == class) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fnn += 1,
                (false, false) => {}
            }
        }
        if tp == 0 {
            0.0
        } else {
            2.0 * tp as f64 / (2 * tp + fp + fnn) as f64
        }
    };
    Ok(100.0 * (class_f1(true) + class_f1(false)) / 2.0)
}

pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `1 − distance / max(len)`, with two empty sequences fully similar.
pub fn levenshtein_similarity<T: PartialEq>(a: &[T], b: &[T]) -> f64 {
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 1.0;
    }
    1.0 - levenshtein(a, b) as f64 / longest as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundtripItem {
    pub id: String,
    pub generated_answer: String,
    pub predicted_answer: String,
    pub exact_match: f64,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundtripScore {
    pub exact_match_pct: f64,
    pub similarity_pct: f64,
    /// Pairs scored.
    pub n: usize,
    /// QA calls that failed; excluded from the means.
    pub errors: usize,
    /// Unanswerable items, which have no generated answer to compare.
    pub skipped: usize,
}

/// Answers every generated question with `qa` against its own context and
/// compares the model's answer to the generated one.
pub fn roundtrip_evaluate(
    dataset: &SquadDataset,
    qa: &dyn QuestionAnswerer,
) -> (RoundtripScore, Vec<RoundtripItem>) {
    let pairs: Vec<_> = dataset
        .iter_qas()
        .filter(|(_, q)| !q.is_impossible && !q.answers.is_empty())
        .collect();
    let skipped = dataset.qa_count() - pairs.len();
    let results: Vec<Option<RoundtripItem>> = pairs
        .par_iter()
        .map(|(para, item)| {
            let generated = &item.answers[0].text;
            match qa.answer_question(&item.question, &para.context) {
                Ok(pred) => {
                    let ref_toks = answer_tokens(generated);
                    let pred_toks = answer_tokens(&pred.answer_text);
                    Some(RoundtripItem {
                        id: item.id.clone(),
                        generated_answer: generated.clone(),
                        exact_match: exact_match(&pred.answer_text, &[generated]),
                        similarity: levenshtein_similarity(&ref_toks, &pred_toks),
                        predicted_answer: pred.answer_text,
                    })
                }
                Err(e) => {
                    log::debug!("round trip for {} failed: {e}", item.id);
                    None
                }
            }
        })
        .collect();
    let errors = results.iter().filter(|r| r.is_none()).count();
    let items: Vec<RoundtripItem> = results.into_iter().flatten().collect();
    if !pairs.is_empty() && errors as f64 / pairs.len() as f64 > ROUNDTRIP_ERROR_WARN_SHARE {
        log::warn!("{errors} of {} round-trip QA calls failed", pairs.len());
    }
    let score = RoundtripScore {
        exact_match_pct: pct_mean(items.iter().map(|i| i.exact_match)).unwrap_or(0.0),
        similarity_pct: pct_mean(items.iter().map(|i| i.similarity)).unwrap_or(0.0),
        n: items.len(),
        errors,
        skipped,
    };
    (score, items)
}
