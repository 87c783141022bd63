//! Synthetic QA generation: filter documents, walk their sentences, select
//! answer candidates, keep the extractive ones, generate a question for each
//! from a highlight prompt over the whole document, gate question and answer
//! on grammaticality, and emit a SQuAD 2.0 dataset.

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Answer, Article, Paragraph, QaItem, SquadDataset};
use crate::filter::{filter_corpus, Document, FilterConfig, FilterError};
use crate::gateway::{
    AnswerSelector, Gateway, GrammaticalityClassifier, QuestionGenerator, HL, QG_PREFIX,
};
use crate::text::{byte_offset, char_len, find_char};

pub const DEFAULT_GRAMMATICALITY_THRESHOLD: f64 = 0.5;

/// Lowercased tokens whose trailing period never ends a sentence.
const ABBREVIATIONS: &[&str] = &[
    "e.g.", "i.e.", "etc.", "cf.", "vs.", "mr.", "mrs.", "ms.", "dr.", "prof.", "inc.", "ltd.",
    "co.", "corp.", "no.", "nos.", "st.", "jr.", "sr.", "art.", "para.", "approx.", "fig.",
];

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid pipeline configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error("duplicate document id `{0}`")]
    DuplicateDocument(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("span {start}+{len} is outside a context of {context_len} characters")]
    InvalidSpan { start: usize, len: usize, context_len: usize },
    #[error("answer span is empty")]
    EmptySpan,
    #[error("context already contains the highlight marker")]
    MarkerInContext,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub filter: FilterConfig,
    pub enable_grammaticality: bool,
    /// Minimum P(grammatical) for both question and answer.
    pub grammaticality_threshold: f64,
    /// `None` keeps every candidate.
    pub max_candidates_per_sentence: Option<usize>,
    pub dedup: bool,
    /// When off, each document is one sentence.
    pub split_sentences: bool,
    /// Documents processed concurrently.
    pub jobs: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            filter: FilterConfig::default(),
            enable_grammaticality: true,
            grammaticality_threshold: DEFAULT_GRAMMATICALITY_THRESHOLD,
            max_candidates_per_sentence: None,
            dedup: true,
            split_sentences: true,
            jobs: 4,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(0.0..=1.0).contains(&self.grammaticality_threshold) {
            return Err(PipelineError::Config(format!(
                "grammaticality threshold {} is outside [0, 1]",
                self.grammaticality_threshold
            )));
        }
        if self.jobs == 0 {
            return Err(PipelineError::Config("jobs must be at least 1".into()));
        }
        if self.max_candidates_per_sentence == Some(0) {
            return Err(PipelineError::Config("max candidates per sentence must be at least 1".into()));
        }
        self.filter.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairGrammaticality {
    pub question_prob: f64,
    pub answer_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticQaPair {
    pub pair_id: String,
    pub doc_id: String,
    pub context: String,
    pub question: String,
    pub answer_text: String,
    /// Character offset of the answer in `context`.
    pub answer_start: usize,
    pub sentence_index: usize,
    pub candidate_index: usize,
    /// Absent when the grammaticality gate is off.
    pub grammaticality: Option<PairGrammaticality>,
}

/// Per-stage tallies. Every candidate ends in exactly one of the discard
/// counters or in `pairs`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub sentences: usize,
    pub selection_errors: usize,
    pub candidates: usize,
    pub extraction_discards: usize,
    pub generation_failures: usize,
    pub grammar_errors: usize,
    pub grammar_discards: usize,
    pub duplicates: usize,
    pub pairs: usize,
}

impl StageCounts {
    fn add(&mut self, o: &StageCounts) {
        self.sentences += o.sentences;
        self.selection_errors += o.selection_errors;
        self.candidates += o.candidates;
        self.extraction_discards += o.extraction_discards;
        self.generation_failures += o.generation_failures;
        self.grammar_errors += o.grammar_errors;
        self.grammar_discards += o.grammar_discards;
        self.duplicates += o.duplicates;
        self.pairs += o.pairs;
    }

    /// Candidates remaining after each stage, in stage order.
    pub fn funnel(&self) -> [usize; 5] {
        let extractive = self.candidates - self.extraction_discards;
        let generated = extractive - self.generation_failures;
        let grammatical = generated - self.grammar_errors - self.grammar_discards;
        [self.candidates, extractive, generated, grammatical, grammatical - self.duplicates]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DocOutcome {
    pub pairs: Vec<SyntheticQaPair>,
    pub counts: StageCounts,
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub docs_in: usize,
    pub docs_kept: usize,
    /// Rejections per filter stage or rule name.
    pub filter_rejections: BTreeMap<String, usize>,
    pub filter_errors: usize,
    pub counts: StageCounts,
    pub pairs_out: usize,
    /// First few per-item failures, for the log.
    pub sample_errors: Vec<String>,
}

const SAMPLE_ERRORS: usize = 20;

/// Splits on `.`, `?` or `!` followed by whitespace and an uppercase letter,
/// except after a known abbreviation. Returns trimmed sentences with their
/// character offsets.
pub fn split_sentences(text: &str) -> Vec<(String, usize)> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut bounds = Vec::new();
    let mut start = 0usize;
    for i in 0..chars.len() {
        let c = chars[i].1;
        if !matches!(c, '.' | '?' | '!') {
            continue;
        }
        let mut j = i + 1;
        while j < chars.len() && chars[j].1.is_whitespace() {
            j += 1;
        }
        if j == i + 1 || j >= chars.len() || !chars[j].1.is_uppercase() {
            continue;
        }
        if c == '.' {
            let word_start = chars[..i]
                .iter()
                .rposition(|(_, ch)| ch.is_whitespace())
                .map_or(0, |p| p + 1);
            let word: String = chars[word_start..=i].iter().map(|(_, ch)| *ch).collect::<String>().to_lowercase();
            if ABBREVIATIONS.contains(&word.as_str()) {
                continue;
            }
        }
        bounds.push((start, i + 1));
        start = j;
    }
    bounds.push((start, chars.len()));

    bounds
        .into_iter()
        .filter_map(|(s, e)| {
            let s = (s..e).find(|&k| !chars[k].1.is_whitespace())?;
            let e = (s..e).rev().find(|&k| !chars[k].1.is_whitespace())? + 1;
            let from = chars[s].0;
            let to = chars.get(e).map_or(text.len(), |(b, _)| *b);
            Some((text[from..to].to_string(), s))
        })
        .collect()
}

/// Character offset of the first exact, case-sensitive occurrence.
pub fn validate_extractive(candidate: &str, context: &str) -> Option<usize> {
    find_char(context, candidate)
}

/// `generate question: ` + context with `<hl>` around the span.
pub fn build_highlight_prompt(context: &str, answer_start: usize, answer_len: usize) -> Result<String, PromptError> {
    if answer_len == 0 {
        return Err(PromptError::EmptySpan);
    }
    let invalid = PromptError::InvalidSpan {
        start: answer_start,
        len: answer_len,
        context_len: char_len(context),
    };
    let from = byte_offset(context, answer_start).ok_or(invalid.clone())?;
    let to = byte_offset(context, answer_start + answer_len).ok_or(invalid)?;
    if context.contains(HL) {
        return Err(PromptError::MarkerInContext);
    }
    Ok(format!(
        "{QG_PREFIX}{}{HL}{}{HL}{}",
        &context[..from],
        &context[from..to],
        &context[to..]
    ))
}

/// Runs every stage after filtering on one document. Per-candidate failures
/// are counted and skipped.
pub fn generate_pairs_for_doc(doc: &Document, gateway: &Gateway, config: &PipelineConfig) -> DocOutcome {
    let mut out = DocOutcome::default();
    let sentences = if config.split_sentences {
        split_sentences(&doc.text)
    } else {
        vec![(doc.text.trim().to_string(), 0)]
    };
    let mut seen: HashSet<(String, String)> = HashSet::new();
    for (si, (sentence, sentence_start)) in sentences.iter().enumerate() {
        out.counts.sentences += 1;
        let mut candidates = match gateway.select_answers(sentence, &doc.text) {
            Ok(c) => c,
            Err(e) => {
                out.counts.selection_errors += 1;
                out.errors.push(format!("{} sentence {si}: {e}", doc.id));
                continue;
            }
        };
        if let Some(max) = config.max_candidates_per_sentence {
            candidates.truncate(max);
        }
        for (ci, candidate) in candidates.iter().enumerate() {
            out.counts.candidates += 1;
            // Highlight the occurrence in the sentence the answer came from.
            let in_sentence = find_char(sentence, &candidate.text).map(|p| sentence_start + p);
            let Some(start) = in_sentence.or_else(|| validate_extractive(&candidate.text, &doc.text)) else {
                out.counts.extraction_discards += 1;
                continue;
            };
            let question = build_highlight_prompt(&doc.text, start, char_len(&candidate.text))
                .map_err(|e| e.to_string())
                .and_then(|prompt| gateway.generate_question(&prompt).map_err(|e| e.to_string()))
                .and_then(|q| {
                    let q = q.trim().to_string();
                    if q.is_empty() {
                        Err("generator returned an empty question".to_string())
                    } else {
                        Ok(q)
                    }
                });
            let question = match question {
                Ok(q) => q,
                Err(e) => {
                    out.counts.generation_failures += 1;
                    out.errors.push(format!("{} s{si} c{ci}: {e}", doc.id));
                    continue;
                }
            };
            let grammaticality = if config.enable_grammaticality {
                let probs = gateway
                    .classify_grammatical(&question)
                    .and_then(|q| Ok((q, gateway.classify_grammatical(&candidate.text)?)));
                match probs {
                    Err(e) => {
                        out.counts.grammar_errors += 1;
                        out.errors.push(format!("{} s{si} c{ci}: {e}", doc.id));
                        continue;
                    }
                    Ok((q, a)) => {
                        let g = PairGrammaticality {
                            question_prob: q.grammatical_probability(),
                            answer_prob: a.grammatical_probability(),
                        };
                        let t = config.grammaticality_threshold;
                        if g.question_prob < t || g.answer_prob < t {
                            out.counts.grammar_discards += 1;
                            continue;
                        }
                        Some(g)
                    }
                }
            } else {
                None
            };
            if config.dedup && !seen.insert((question.clone(), candidate.text.clone())) {
                out.counts.duplicates += 1;
                continue;
            }
            out.counts.pairs += 1;
            out.pairs.push(SyntheticQaPair {
                pair_id: format!("{}-s{si}-c{ci}", doc.id),
                doc_id: doc.id.clone(),
                context: doc.text.clone(),
                question,
                answer_text: candidate.text.clone(),
                answer_start: start,
                sentence_index: si,
                candidate_index: ci,
                grammaticality,
            });
        }
    }
    out
}

/// SQuAD dataset with one article per document that produced pairs.
pub fn pairs_to_dataset(pairs: &[SyntheticQaPair]) -> SquadDataset {
    let mut articles: Vec<Article> = Vec::new();
    for pair in pairs {
        let qa = QaItem::answerable(
            pair.pair_id.clone(),
            pair.question.clone(),
            Answer::new(pair.answer_text.clone(), pair.answer_start),
        );
        match articles.last_mut() {
            Some(a) if a.title == pair.doc_id => a.paragraphs[0].qas.push(qa),
            _ => articles.push(Article::new(
                pair.doc_id.clone(),
                vec![Paragraph::new(pair.context.clone(), vec![qa])],
            )),
        }
    }
    SquadDataset::new(articles)
}

/// Filters the corpus and generates pairs for every kept document. Only
/// configuration problems abort; everything else is tallied in the report.
pub fn run_pipeline(
    corpus: &[Document],
    gateway: &Gateway,
    config: &PipelineConfig,
) -> Result<(SquadDataset, Vec<SyntheticQaPair>, PipelineReport), PipelineError> {
    config.validate()?;
    let mut ids = HashSet::new();
    if let Some(d) = corpus.iter().find(|d| !ids.insert(d.id.as_str())) {
        return Err(PipelineError::DuplicateDocument(d.id.clone()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(|e| PipelineError::Config(e.to_string()))?;

    let (filtered, outcomes) = pool.install(|| -> Result<_, PipelineError> {
        let tagger = config.filter.enable_pos.then_some(gateway as &dyn crate::gateway::PosTagger);
        let filtered = filter_corpus(corpus, &config.filter, tagger)?;
        let outcomes: Vec<DocOutcome> = filtered
            .kept
            .par_iter()
            .map(|doc| generate_pairs_for_doc(doc, gateway, config))
            .collect();
        Ok((filtered, outcomes))
    })?;

    let mut report = PipelineReport {
        docs_in: corpus.len(),
        docs_kept: filtered.kept.len(),
        filter_rejections: filtered.rejections_by_rule(),
        filter_errors: filtered.error_count(),
        ..Default::default()
    };
    let mut pairs = Vec::new();
    for o in outcomes {
        report.counts.add(&o.counts);
        for e in o.errors {
            if report.sample_errors.len() < SAMPLE_ERRORS {
                report.sample_errors.push(e);
            }
        }
        pairs.extend(o.pairs);
    }
    pairs.sort_by(|a, b| {
        (a.doc_id.as_str(), a.sentence_index, a.candidate_index).cmp(&(b.doc_id.as_str(), b.sentence_index, b.candidate_index))
    });
    if config.dedup {
        let mut seen = HashSet::new();
        let before = pairs.len();
        pairs.retain(|p| seen.insert((p.question.clone(), p.answer_text.clone(), p.context.clone())));
        report.counts.duplicates += before - pairs.len();
        report.counts.pairs = pairs.len();
    }
    report.pairs_out = pairs.len();
    for e in &report.sample_errors {
        log::debug!("{e}");
    }
    Ok((pairs_to_dataset(&pairs), pairs, report))
}
