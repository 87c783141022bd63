//! Two-stage document filtering.
//!
//! Stage one rejects documents that are too short or that match a RegEx
//! blocklist rule (with optional per-rule whitelists). Stage two keeps only
//! documents whose part-of-speech tags contain a verb, or an auxiliary verb
//! together with a proper noun.
//!
//! Rule patterns are compiled with multi-line semantics, so `^` and `$` bind
//! to line boundaries inside a document. A rule fires when any of its
//! (leftmost, non-overlapping) matches is not fully matched by one of the
//! rule's whitelist patterns.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};

use crate::gateway::{GatewayError, PosTagger, Upos};
use crate::text::tokenize_whitespace;

const DEFAULT_RULES_JSON: &str = include_str!("../data/default_rules.json");

/// Failure name recorded when the length stage rejects a document.
pub const LENGTH_STAGE: &str = "length";
/// Failure name recorded when the part-of-speech stage rejects a document.
pub const POS_STAGE: &str = "pos";

#[derive(Debug, thiserror::Error)]
pub enum FilterError {
    #[error("rule `{rule}`: invalid pattern `{pattern}`: {source}")]
    InvalidPattern {
        rule: String,
        pattern: String,
        #[source]
        source: Box<regex::Error>,
    },
    #[error("invalid filter configuration: {0}")]
    Config(String),
    #[error("reading rule table {path}: {source}")]
    RuleFile {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing rule table: {0}")]
    RuleJson(#[from] serde_json::Error),
    #[error("document `{doc_id}`: POS tagger failed: {source}")]
    Tagger {
        doc_id: String,
        #[source]
        source: GatewayError,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub source: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            source: String::new(),
            metadata: BTreeMap::new(),
        }
    }
}

/// One row of the rule table, as stored in JSON.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegexRule {
    pub name: String,
    pub pattern: String,
    #[serde(default)]
    pub whitelist_patterns: Vec<String>,
    #[serde(default)]
    pub purpose: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RuleTable {
    rules: Vec<RegexRule>,
}

/// The shipped rule table: seven blocklist rules, two whitelist patterns on
/// the contract-like rule.
pub fn default_rules() -> Vec<RegexRule> {
    let table: RuleTable =
        serde_json::from_str(DEFAULT_RULES_JSON).expect("bundled rule table is valid JSON");
    table.rules
}

pub fn load_rules(path: impl AsRef<Path>) -> Result<Vec<RegexRule>, FilterError> {
    let path = path.as_ref();
    let raw = std::fs::read_to_string(path).map_err(|source| FilterError::RuleFile {
        path: path.display().to_string(),
        source,
    })?;
    parse_rules(&raw)
}

/// Accepts either `{"rules": [...]}` or a bare array of rules.
pub fn parse_rules(json: &str) -> Result<Vec<RegexRule>, FilterError> {
    let value: serde_json::Value = serde_json::from_str(json)?;
    if value.is_array() {
        Ok(serde_json::from_value(value)?)
    } else {
        Ok(serde_json::from_value::<RuleTable>(value)?.rules)
    }
}

#[derive(Debug, Clone)]
struct CompiledRule {
    name: String,
    pattern: Regex,
    whitelist: Vec<Regex>,
}

/// Compiled rule table. Patterns are validated here, so matching never fails.
#[derive(Debug, Clone)]
pub struct RuleSet {
    rules: Vec<CompiledRule>,
}

impl RuleSet {
    pub fn compile(rules: &[RegexRule]) -> Result<Self, FilterError> {
        let invalid = |rule: &RegexRule, pattern: &str, e: regex::Error| FilterError::InvalidPattern {
            rule: rule.name.clone(),
            pattern: pattern.to_string(),
            source: Box::new(e),
        };
        let compiled = rules
            .iter()
            .map(|rule| {
                let pattern = RegexBuilder::new(&rule.pattern)
                    .multi_line(true)
                    .crlf(true)
                    .build()
                    .map_err(|e| invalid(rule, &rule.pattern, e))?;
                let whitelist = rule
                    .whitelist_patterns
                    .iter()
                    .map(|w| Regex::new(&format!("^(?:{w})$")).map_err(|e| invalid(rule, w, e)))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(CompiledRule {
                    name: rule.name.clone(),
                    pattern,
                    whitelist,
                })
            })
            .collect::<Result<Vec<_>, FilterError>>()?;
        Ok(Self { rules: compiled })
    }

    pub fn default_set() -> Self {
        Self::compile(&default_rules()).expect("bundled rules compile")
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.rules.iter().map(|r| r.name.as_str())
    }

    /// Matches of `rule_name` in `text` that are not whitelisted.
    pub fn offending_matches<'t>(&self, rule_name: &str, text: &'t str) -> Vec<&'t str> {
        self.rules
            .iter()
            .filter(|r| r.name == rule_name)
            .flat_map(|r| {
                r.pattern
                    .find_iter(text)
                    .map(|m| m.as_str())
                    .filter(|m| !r.whitelist.iter().any(|w| w.is_match(m)))
                    .collect::<Vec<_>>()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub min_tokens: usize,
    pub enable_length: bool,
    pub enable_regex: bool,
    pub enable_pos: bool,
    /// Not used by the document filter; read by the generation pipeline.
    pub enable_grammaticality: bool,
    pub rules: Vec<RegexRule>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            min_tokens: 10,
            enable_length: true,
            enable_regex: true,
            enable_pos: true,
            enable_grammaticality: true,
            rules: default_rules(),
        }
    }
}

impl FilterConfig {
    /// Every stage off; the filter becomes the identity.
    pub fn disabled() -> Self {
        Self {
            enable_length: false,
            enable_regex: false,
            enable_pos: false,
            enable_grammaticality: false,
            ..Self::default()
        }
    }

    pub fn disable(&mut self, stage: Stage) {
        match stage {
            Stage::Length => self.enable_length = false,
            Stage::Regex => self.enable_regex = false,
            Stage::Pos => self.enable_pos = false,
            Stage::Grammar => self.enable_grammaticality = false,
        }
    }

    pub fn validate(&self) -> Result<(), FilterError> {
        if self.min_tokens == 0 {
            return Err(FilterError::Config("min_tokens must be at least 1".into()));
        }
        Ok(())
    }
}

/// Independently toggleable filter stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Length,
    Regex,
    Pos,
    Grammar,
}

impl std::str::FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "length" => Ok(Stage::Length),
            "regex" => Ok(Stage::Regex),
            "pos" => Ok(Stage::Pos),
            "grammar" | "grammaticality" => Ok(Stage::Grammar),
            other => Err(format!("unknown filter stage `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WhitelistSave {
    pub rule: String,
    pub matched: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub doc_id: String,
    pub passed: bool,
    pub failed_rules: Vec<String>,
    pub whitelist_saves: Vec<WhitelistSave>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl FilterReport {
    fn new(doc_id: &str) -> Self {
        Self {
            doc_id: doc_id.to_string(),
            passed: true,
            failed_rules: Vec::new(),
            whitelist_saves: Vec::new(),
            error: None,
        }
    }

    fn fail(&mut self, name: &str) {
        self.failed_rules.push(name.to_string());
        self.passed = false;
    }
}

pub fn apply_length_filter(doc: &Document, min_tokens: usize) -> bool {
    tokenize_whitespace(&doc.text).len() >= min_tokens
}

pub fn apply_regex_filters(doc: &Document, rules: &RuleSet) -> FilterReport {
    let mut report = FilterReport::new(&doc.id);
    for rule in &rules.rules {
        let mut failed = false;
        for m in rule.pattern.find_iter(&doc.text) {
            if rule.whitelist.iter().any(|w| w.is_match(m.as_str())) {
                report.whitelist_saves.push(WhitelistSave {
                    rule: rule.name.clone(),
                    matched: m.as_str().to_string(),
                });
            } else {
                failed = true;
            }
        }
        if failed {
            report.fail(&rule.name);
        }
    }
    report
}

/// Keep iff the tags contain VERB, or both AUX and PROPN.
pub fn apply_pos_filter(doc: &Document, tagger: &dyn PosTagger) -> Result<bool, FilterError> {
    let tags = tagger
        .tag_pos(&doc.text)
        .map_err(|source| FilterError::Tagger {
            doc_id: doc.id.clone(),
            source,
        })?;
    Ok(pos_rule(tags.iter().map(|t| t.tag)))
}

fn pos_rule(tags: impl Iterator<Item = Upos>) -> bool {
    let (mut aux, mut propn) = (false, false);
    for tag in tags {
        match tag {
            Upos::Verb => return true,
            Upos::Aux => aux = true,
            Upos::Propn => propn = true,
            _ => {}
        }
    }
    aux && propn
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FilterOutcome {
    pub kept: Vec<Document>,
    pub reports: Vec<FilterReport>,
}

impl FilterOutcome {
    /// Rejections per failure name (stage or rule), for ablation tables.
    pub fn rejections_by_rule(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for name in self.reports.iter().flat_map(|r| &r.failed_rules) {
            *counts.entry(name.clone()).or_insert(0) += 1;
        }
        counts
    }

    pub fn error_count(&self) -> usize {
        self.reports.iter().filter(|r| r.error.is_some()).count()
    }
}

/// Runs length → regex → POS over every document. A document rejected by
/// one stage is not sent to later stages; within the regex stage every
/// failing rule is recorded.
pub fn filter_corpus(
    docs: &[Document],
    config: &FilterConfig,
    tagger: Option<&dyn PosTagger>,
) -> Result<FilterOutcome, FilterError> {
    config.validate()?;
    let rules = RuleSet::compile(&config.rules)?;
    if config.enable_pos && tagger.is_none() {
        return Err(FilterError::Config(
            "POS stage enabled but no tagger configured".into(),
        ));
    }

    let reports: Vec<FilterReport> = docs
        .par_iter()
        .map(|doc| filter_one(doc, config, &rules, tagger))
        .collect();
    let kept = docs
        .iter()
        .zip(&reports)
        .filter(|(_, r)| r.passed)
        .map(|(d, _)| d.clone())
        .collect();
    Ok(FilterOutcome { kept, reports })
}

fn filter_one(
    doc: &Document,
    config: &FilterConfig,
    rules: &RuleSet,
    tagger: Option<&dyn PosTagger>,
) -> FilterReport {
    let mut report = FilterReport::new(&doc.id);
    if config.enable_length && !apply_length_filter(doc, config.min_tokens) {
        report.fail(LENGTH_STAGE);
        return report;
    }
    if config.enable_regex {
        report = apply_regex_filters(doc, rules);
        if !report.passed {
            return report;
        }
    }
    if config.enable_pos {
        if let Some(tagger) = tagger {
            match apply_pos_filter(doc, tagger) {
                Ok(true) => {}
                Ok(false) => report.fail(POS_STAGE),
                Err(e) => {
                    report.fail(POS_STAGE);
                    report.error = Some(e.to_string());
                }
            }
        }
    }
    report
}
