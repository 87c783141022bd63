//! SQuAD 2.0 datasets: reading, canonical writing, source markers, merging,
//! document-level splitting and class statistics.
//!
//! Unknown JSON fields at every level are kept in `extra` maps and written
//! back unchanged. Answer offsets are character offsets, as in the upstream
//! format.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::io::{write_atomic, IoError};
use crate::text::{byte_offset, char_len};

pub const SQUAD_VERSION: &str = "v2.0";

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("cannot split: {0}")]
    Split(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquadDataset {
    pub version: String,
    #[serde(rename = "data")]
    pub articles: Vec<Article>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Article {
    pub title: String,
    pub paragraphs: Vec<Paragraph>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Paragraph {
    pub context: String,
    pub qas: Vec<QaItem>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaItem {
    pub id: String,
    pub question: String,
    #[serde(default)]
    pub is_impossible: bool,
    #[serde(default)]
    pub answers: Vec<Answer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plausible_answers: Option<Vec<Answer>>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub text: String,
    pub answer_start: usize,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

impl Answer {
    pub fn new(text: impl Into<String>, answer_start: usize) -> Self {
        Self {
            text: text.into(),
            answer_start,
            extra: BTreeMap::new(),
        }
    }
}

impl QaItem {
    pub fn answerable(id: impl Into<String>, question: impl Into<String>, answer: Answer) -> Self {
        Self {
            id: id.into(),
            question: question.into(),
            is_impossible: false,
            answers: vec![answer],
            plausible_answers: None,
            extra: BTreeMap::new(),
        }
    }

    pub fn impossible(id: impl Into<String>, question: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            question: question.into(),
            is_impossible: true,
            answers: Vec::new(),
            plausible_answers: None,
            extra: BTreeMap::new(),
        }
    }
}

impl Paragraph {
    pub fn new(context: impl Into<String>, qas: Vec<QaItem>) -> Self {
        Self {
            context: context.into(),
            qas,
            extra: BTreeMap::new(),
        }
    }
}

impl Article {
    pub fn new(title: impl Into<String>, paragraphs: Vec<Paragraph>) -> Self {
        Self {
            title: title.into(),
            paragraphs,
            extra: BTreeMap::new(),
        }
    }
}

impl Default for SquadDataset {
    fn default() -> Self {
        Self::new(Vec::new())
    }
}

impl SquadDataset {
    pub fn new(articles: Vec<Article>) -> Self {
        Self {
            version: SQUAD_VERSION.to_string(),
            articles,
            extra: BTreeMap::new(),
        }
    }

    pub fn iter_qas(&self) -> impl Iterator<Item = (&Paragraph, &QaItem)> {
        self.articles
            .iter()
            .flat_map(|a| &a.paragraphs)
            .flat_map(|p| p.qas.iter().map(move |q| (p, q)))
    }

    pub fn qas_mut(&mut self) -> impl Iterator<Item = &mut QaItem> {
        self.articles
            .iter_mut()
            .flat_map(|a| &mut a.paragraphs)
            .flat_map(|p| &mut p.qas)
    }

    pub fn qa_count(&self) -> usize {
        self.iter_qas().count()
    }

    pub fn is_empty(&self) -> bool {
        self.qa_count() == 0
    }

    /// Checks every structural invariant; the error names the JSON path of
    /// the first offending node.
    pub fn validate(&self) -> Result<(), DatasetError> {
        let mut ids = HashSet::new();
        for (ai, article) in self.articles.iter().enumerate() {
            for (pi, para) in article.paragraphs.iter().enumerate() {
                for (qi, qa) in para.qas.iter().enumerate() {
                    let path = format!("data[{ai}].paragraphs[{pi}].qas[{qi}]");
                    if !ids.insert(qa.id.as_str()) {
                        return Err(schema(format!("{path}.id"), format!("duplicate qa id `{}`", qa.id)));
                    }
                    if qa.is_impossible && !qa.answers.is_empty() {
                        return Err(schema(
                            format!("{path}.answers"),
                            "is_impossible is true but answers is non-empty",
                        ));
                    }
                    for (ni, ans) in qa.answers.iter().enumerate() {
                        if !span_matches(&para.context, ans) {
                            return Err(schema(
                                format!("{path}.answers[{ni}].answer_start"),
                                format!(
                                    "context at offset {} does not start with `{}`",
                                    ans.answer_start, ans.text
                                ),
                            ));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn from_json_str(json: &str) -> Result<Self, DatasetError> {
        let de = &mut serde_json::Deserializer::from_str(json);
        let dataset: SquadDataset = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            schema(path, e.into_inner().to_string())
        })?;
        dataset.validate()?;
        Ok(dataset)
    }

    /// Sorted keys, two-space indent, trailing LF.
    pub fn to_canonical_json(&self) -> String {
        crate::io::canonical_json(self)
    }
}

fn schema(path: impl Into<String>, message: impl Into<String>) -> DatasetError {
    DatasetError::Schema {
        path: path.into(),
        message: message.into(),
    }
}

fn span_matches(context: &str, answer: &Answer) -> bool {
    byte_offset(context, answer.answer_start)
        .is_some_and(|b| context[b..].starts_with(answer.text.as_str()))
}

pub fn read_squad(path: impl AsRef<Path>) -> Result<SquadDataset, DatasetError> {
    let raw = crate::io::read_to_string(path.as_ref())?;
    SquadDataset::from_json_str(&raw)
}

pub fn write_squad(dataset: &SquadDataset, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    write_atomic(path.as_ref(), dataset.to_canonical_json().as_bytes())?;
    Ok(())
}

/// Which corpus a question came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum DatasetSource {
    Squad,
    Syfter,
}

impl DatasetSource {
    pub fn marker(self) -> &'static str {
        match self {
            DatasetSource::Squad => "[SQuAD]",
            DatasetSource::Syfter => "[SYFTER]",
        }
    }
}

/// `question + " " + marker`. Not idempotent: mark each question once.
pub fn append_source_marker(question: &str, source: DatasetSource) -> String {
    format!("{question} {}", source.marker())
}

pub fn mark_dataset(dataset: &SquadDataset, source: DatasetSource) -> SquadDataset {
    let mut marked = dataset.clone();
    for qa in marked.qas_mut() {
        qa.question = append_source_marker(&qa.question, source);
    }
    marked
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeReport {
    pub collisions: usize,
    /// Original id → new id for every re-suffixed question of `b`.
    pub renamed: BTreeMap<String, String>,
}

/// Articles of `a` then `b`. Ids in `b` that collide get the first free
/// `-2`, `-3`, ... suffix.
pub fn merge_datasets(a: &SquadDataset, b: &SquadDataset) -> (SquadDataset, MergeReport) {
    let mut taken: HashSet<String> = a.iter_qas().map(|(_, q)| q.id.clone()).collect();
    let mut report = MergeReport::default();
    let mut b = b.clone();
    for qa in b.qas_mut() {
        if taken.contains(&qa.id) {
            let fresh = (2..)
                .map(|n| format!("{}-{n}", qa.id))
                .find(|c| !taken.contains(c))
                .expect("unbounded suffix search");
            report.collisions += 1;
            report.renamed.insert(qa.id.clone(), fresh.clone());
            qa.id = fresh;
        }
        taken.insert(qa.id.clone());
    }
    let mut merged = a.clone();
    merged.articles.extend(b.articles);
    (merged, report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub documents: usize,
    pub train_documents: usize,
    pub test_documents: usize,
    pub train_questions: usize,
    pub test_questions: usize,
    pub target_test_questions: f64,
    pub seed: u64,
}

/// Splits by unique context string so no document lands on both sides.
///
/// Documents are visited in a seeded shuffle; each goes to the test side if
/// that brings the test question count closer to `test_fraction` of the
/// total. Both sides get at least one document.
pub fn split_by_document(
    dataset: &SquadDataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(SquadDataset, SquadDataset, SplitReport), DatasetError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DatasetError::Split(format!(
            "test fraction {test_fraction} must be in (0, 1)"
        )));
    }
    let mut order: Vec<&str> = Vec::new();
    let mut sizes: HashMap<&str, usize> = HashMap::new();
    for para in dataset.articles.iter().flat_map(|a| &a.paragraphs) {
        let entry = sizes.entry(para.context.as_str()).or_insert_with(|| {
            order.push(para.context.as_str());
            0
        });
        *entry += para.qas.len();
    }
    if order.len() < 2 {
        return Err(DatasetError::Split(format!(
            "need at least two documents, found {}",
            order.len()
        )));
    }

    let total: usize = sizes.values().sum();
    let target = test_fraction * total as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut test: Vec<&str> = Vec::new();
    let mut test_q = 0usize;
    for &doc in &order {
        let with = (test_q + sizes[doc]) as f64;
        if (with - target).abs() < (test_q as f64 - target).abs() {
            test.push(doc);
            test_q += sizes[doc];
        }
    }
    if test.is_empty() {
        test.push(order[0]);
        test_q += sizes[order[0]];
    } else if test.len() == order.len() {
        let last = test.pop().expect("non-empty");
        test_q -= sizes[last];
    }

    let test_set: HashSet<&str> = test.iter().copied().collect();
    let pick = |want_test: bool| {
        let articles = dataset
            .articles
            .iter()
            .filter_map(|a| {
                let paragraphs: Vec<Paragraph> = a
                    .paragraphs
                    .iter()
                    .filter(|p| test_set.contains(p.context.as_str()) == want_test)
                    .cloned()
                    .collect();
                (!paragraphs.is_empty()).then(|| Article {
                    title: a.title.clone(),
                    paragraphs,
                    extra: a.extra.clone(),
                })
            })
            .collect();
        SquadDataset {
            version: dataset.version.clone(),
            articles,
            extra: dataset.extra.clone(),
        }
    };
    let report = SplitReport {
        documents: order.len(),
        train_documents: order.len() - test.len(),
        test_documents: test.len(),
        train_questions: total - test_q,
        test_questions: test_q,
        target_test_questions: target,
        seed,
    };
    Ok((pick(false), pick(true), report))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub answerable: usize,
    pub unanswerable: usize,
    /// 0 for an empty dataset.
    pub unanswerable_share: f64,
}

pub fn class_stats(dataset: &SquadDataset) -> ClassStats {
    let (mut answerable, mut unanswerable) = (0, 0);
    for (_, qa) in dataset.iter_qas() {
        if qa.is_impossible {
            unanswerable += 1;
        } else {
            answerable += 1;
        }
    }
    let total = answerable + unanswerable;
    ClassStats {
        answerable,
        unanswerable,
        unanswerable_share: if total == 0 {
            0.0
        } else {
            unanswerable as f64 / total as f64
        },
    }
}

/// Character length of an answer, for end offsets.
pub fn answer_end(answer: &Answer) -> usize {
    answer.answer_start + char_len(&answer.text)
}
