//! Uniform access to the five external model capabilities.
//!
//! Each capability is a trait. Implementations are either deterministic
//! in-process stubs ([`stub`]) or a JSON-over-HTTP client ([`remote`]).
//! [`Gateway`] bundles one implementation per capability and checks every
//! response (span offsets, probabilities, non-empty questions) before it is
//! handed to the pipeline.
//!
//! All offsets are character offsets into the text the caller supplied.

pub mod remote;
pub mod stub;
pub mod wire;

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dataset::SquadDataset;
use crate::text::{char_slice, find_char};

/// Prefix every question-generation prompt starts with.
pub const QG_PREFIX: &str = "generate question: ";
/// Highlight marker placed on both sides of the answer span.
pub const HL: &str = "<hl>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Capability {
    AnswerSelect,
    QuestionGen,
    Grammaticality,
    Qa,
    PosTag,
}

impl Capability {
    pub const ALL: [Capability; 5] = [
        Capability::AnswerSelect,
        Capability::QuestionGen,
        Capability::Grammaticality,
        Capability::Qa,
        Capability::PosTag,
    ];

    /// Route under `/v1/` on a remote inference service.
    pub fn route(self) -> &'static str {
        match self {
            Capability::AnswerSelect => "select-answers",
            Capability::QuestionGen => "generate-question",
            Capability::Grammaticality => "grammaticality",
            Capability::Qa => "answer",
            Capability::PosTag => "pos-tags",
        }
    }
}

impl std::fmt::Display for Capability {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.route())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("{capability} @ {endpoint}: transport error: {message}")]
    Transport {
        capability: Capability,
        endpoint: String,
        message: String,
    },
    #[error("{capability} @ {endpoint}: HTTP status {status}")]
    Status {
        capability: Capability,
        endpoint: String,
        status: u16,
    },
    #[error("{capability} @ {endpoint}: invalid response: {reason}")]
    InvalidResponse {
        capability: Capability,
        endpoint: String,
        reason: String,
    },
    #[error("{capability}: precondition violated: {reason}")]
    Precondition {
        capability: Capability,
        #[source]
        reason: PreconditionError,
    },
    #[error("endpoint configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PreconditionError {
    #[error("{0} must not be empty")]
    Empty(&'static str),
    #[error("sentence is not a substring of the document")]
    SentenceNotInDocument,
    #[error("prompt must start with `generate question: `")]
    MissingPrefix,
    #[error("prompt must contain exactly two `<hl>` markers, found {0}")]
    MarkerCount(usize),
    #[error("highlighted region is empty")]
    EmptyHighlight,
}

impl GatewayError {
    fn precondition(capability: Capability, reason: PreconditionError) -> Self {
        GatewayError::Precondition { capability, reason }
    }

    fn invalid(capability: Capability, endpoint: &str, reason: impl Into<String>) -> Self {
        GatewayError::InvalidResponse {
            capability,
            endpoint: endpoint.to_string(),
            reason: reason.into(),
        }
    }
}

/// A candidate answer span. `start`/`end` are character offsets into the
/// full document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerSpan {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaPrediction {
    pub answer_text: String,
    pub start: usize,
    pub end: usize,
    pub score: f64,
    pub null_score: f64,
}

impl QaPrediction {
    pub fn null(null_score: f64) -> Self {
        Self {
            answer_text: String::new(),
            start: 0,
            end: 0,
            score: 0.0,
            null_score,
        }
    }

    pub fn is_null(&self) -> bool {
        self.answer_text.is_empty()
    }

    /// Checks the span against `context` and that both scores are finite.
    pub fn validate(&self, context: &str) -> Result<(), String> {
        if !self.score.is_finite() || !self.null_score.is_finite() {
            return Err("scores must be finite".into());
        }
        if !self.answer_text.is_empty()
            && char_slice(context, self.start, self.end) != Some(self.answer_text.as_str())
        {
            return Err(format!(
                "span [{}, {}) does not index `{}` in the context",
                self.start, self.end, self.answer_text
            ));
        }
        Ok(())
    }
}

/// Universal part-of-speech tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Upos {
    Adj,
    Adp,
    Adv,
    Aux,
    Cconj,
    Det,
    Intj,
    Noun,
    Num,
    Part,
    Pron,
    Propn,
    Punct,
    Sconj,
    Sym,
    Verb,
    X,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PosTag {
    pub token: String,
    pub tag: Upos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GrammaticalityLabel {
    Grammatical,
    Ungrammatical,
}

/// A label and the classifier's confidence in that label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grammaticality {
    pub label: GrammaticalityLabel,
    pub probability: f64,
}

impl Grammaticality {
    /// Probability mass on "grammatical", whatever label was returned.
    pub fn grammatical_probability(&self) -> f64 {
        match self.label {
            GrammaticalityLabel::Grammatical => self.probability,
            GrammaticalityLabel::Ungrammatical => 1.0 - self.probability,
        }
    }
}

pub trait AnswerSelector: Send + Sync {
    fn select_answers(&self, sentence: &str, document: &str) -> Result<Vec<AnswerSpan>, GatewayError>;
}

pub trait QuestionGenerator: Send + Sync {
    fn generate_question(&self, prompt: &str) -> Result<String, GatewayError>;
}

pub trait GrammaticalityClassifier: Send + Sync {
    fn classify_grammatical(&self, text: &str) -> Result<Grammaticality, GatewayError>;
}

pub trait QuestionAnswerer: Send + Sync {
    fn answer_question(&self, question: &str, context: &str) -> Result<QaPrediction, GatewayError>;
}

pub trait PosTagger: Send + Sync {
    fn tag_pos(&self, text: &str) -> Result<Vec<PosTag>, GatewayError>;
}

/// A parsed `generate question: ... <hl>answer<hl> ...` prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HighlightPrompt<'a> {
    pub before: &'a str,
    pub highlight: &'a str,
    pub after: &'a str,
}

pub fn parse_highlight_prompt(prompt: &str) -> Result<HighlightPrompt<'_>, PreconditionError> {
    let body = prompt
        .strip_prefix(QG_PREFIX)
        .ok_or(PreconditionError::MissingPrefix)?;
    let parts: Vec<&str> = body.split(HL).collect();
    if parts.len() != 3 {
        return Err(PreconditionError::MarkerCount(parts.len() - 1));
    }
    if parts[1].is_empty() {
        return Err(PreconditionError::EmptyHighlight);
    }
    Ok(HighlightPrompt {
        before: parts[0],
        highlight: parts[1],
        after: parts[2],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub capability: Capability,
    /// `http(s)://host[:port][/prefix]` or `stub:<name>`.
    pub base_url: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
}

fn default_timeout_ms() -> u64 {
    30_000
}
fn default_max_retries() -> u32 {
    2
}
fn default_max_in_flight() -> usize {
    8
}

impl EndpointConfig {
    pub fn stub(capability: Capability, name: &str) -> Self {
        Self::new(capability, format!("stub:{name}"))
    }

    pub fn new(capability: Capability, base_url: impl Into<String>) -> Self {
        Self {
            capability,
            base_url: base_url.into(),
            timeout_ms: default_timeout_ms(),
            max_retries: default_max_retries(),
            max_in_flight: default_max_in_flight(),
        }
    }

    pub fn stub_name(&self) -> Option<&str> {
        self.base_url.strip_prefix("stub:")
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.timeout_ms == 0 {
            return Err(GatewayError::Config(format!(
                "{}: timeout must be positive",
                self.capability
            )));
        }
        if self.max_in_flight == 0 {
            return Err(GatewayError::Config(format!(
                "{}: max_in_flight must be positive",
                self.capability
            )));
        }
        if self.stub_name().is_none() {
            remote::validate_base_url(&self.base_url).map_err(|reason| {
                GatewayError::Config(format!("{}: `{}`: {reason}", self.capability, self.base_url))
            })?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EndpointsFile {
    pub endpoints: Vec<EndpointConfig>,
}

pub fn load_endpoints(path: impl AsRef<Path>) -> Result<Vec<EndpointConfig>, GatewayError> {
    let path = path.as_ref();
    let raw = std::fs::read_to_string(path)
        .map_err(|e| GatewayError::Config(format!("reading {}: {e}", path.display())))?;
    let value: serde_json::Value =
        serde_json::from_str(&raw).map_err(|e| GatewayError::Config(e.to_string()))?;
    let endpoints = if value.is_array() {
        serde_json::from_value(value)
    } else {
        serde_json::from_value::<EndpointsFile>(value).map(|f| f.endpoints)
    };
    endpoints.map_err(|e| GatewayError::Config(e.to_string()))
}

/// One implementation per capability, with response validation.
#[derive(Clone)]
pub struct Gateway {
    selector: Arc<dyn AnswerSelector>,
    generator: Arc<dyn QuestionGenerator>,
    grammar: Arc<dyn GrammaticalityClassifier>,
    qa: Arc<dyn QuestionAnswerer>,
    tagger: Arc<dyn PosTagger>,
    labels: [String; 5],
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway").field("endpoints", &self.labels).finish()
    }
}

impl Default for Gateway {
    fn default() -> Self {
        Self::stubbed()
    }
}

impl Gateway {
    /// The default stub set: proper-noun selector, template generator,
    /// always-grammatical classifier, refusing QA model, lexicon tagger.
    pub fn stubbed() -> Self {
        Self {
            selector: Arc::new(stub::ProperNounSelector),
            generator: Arc::new(stub::TemplateGenerator),
            grammar: Arc::new(stub::AlwaysGrammatical),
            qa: Arc::new(stub::RefuserQa),
            tagger: Arc::new(stub::LexiconTagger),
            labels: [
                "stub:proper-noun".into(),
                "stub:template".into(),
                "stub:always-grammatical".into(),
                "stub:refuser".into(),
                "stub:lexicon".into(),
            ],
        }
    }

    /// Starts from [`Gateway::stubbed`] and replaces every capability named
    /// in `endpoints`. `gold` feeds the `oracle`/`corrupting` QA stubs.
    pub fn from_endpoints(
        endpoints: &[EndpointConfig],
        gold: Option<&SquadDataset>,
    ) -> Result<Self, GatewayError> {
        let mut gateway = Self::stubbed();
        for config in endpoints {
            config.validate()?;
            let label = config.base_url.clone();
            match config.stub_name() {
                Some(name) => stub::install(&mut gateway, config.capability, name, gold)?,
                None => {
                    let client = Arc::new(remote::RemoteEndpoint::new(config.clone())?);
                    gateway.set(config.capability, client);
                }
            }
            gateway.labels[config.capability as usize] = label;
        }
        Ok(gateway)
    }

    fn set(&mut self, capability: Capability, client: Arc<remote::RemoteEndpoint>) {
        match capability {
            Capability::AnswerSelect => self.selector = client,
            Capability::QuestionGen => self.generator = client,
            Capability::Grammaticality => self.grammar = client,
            Capability::Qa => self.qa = client,
            Capability::PosTag => self.tagger = client,
        }
    }

    pub fn with_selector(mut self, s: impl AnswerSelector + 'static) -> Self {
        self.selector = Arc::new(s);
        self
    }

    pub fn with_generator(mut self, g: impl QuestionGenerator + 'static) -> Self {
        self.generator = Arc::new(g);
        self
    }

    pub fn with_grammaticality(mut self, g: impl GrammaticalityClassifier + 'static) -> Self {
        self.grammar = Arc::new(g);
        self
    }

    pub fn with_qa(mut self, q: impl QuestionAnswerer + 'static) -> Self {
        self.qa = Arc::new(q);
        self
    }

    pub fn with_tagger(mut self, t: impl PosTagger + 'static) -> Self {
        self.tagger = Arc::new(t);
        self
    }

    pub fn endpoint_label(&self, capability: Capability) -> &str {
        &self.labels[capability as usize]
    }
}

impl AnswerSelector for Gateway {
    fn select_answers(&self, sentence: &str, document: &str) -> Result<Vec<AnswerSpan>, GatewayError> {
        let cap = Capability::AnswerSelect;
        if sentence.is_empty() {
            return Ok(Vec::new());
        }
        if find_char(document, sentence).is_none() {
            return Err(GatewayError::precondition(cap, PreconditionError::SentenceNotInDocument));
        }
        // Candidates that do not occur in the document are legitimate model
        // output; the pipeline discards them. Only malformed spans are errors.
        let spans = self.selector.select_answers(sentence, document)?;
        for span in &spans {
            if span.start > span.end || span.text.is_empty() {
                return Err(GatewayError::invalid(
                    cap,
                    self.endpoint_label(cap),
                    format!("malformed span [{}, {}) `{}`", span.start, span.end, span.text),
                ));
            }
        }
        Ok(spans)
    }
}

impl QuestionGenerator for Gateway {
    fn generate_question(&self, prompt: &str) -> Result<String, GatewayError> {
        let cap = Capability::QuestionGen;
        parse_highlight_prompt(prompt).map_err(|e| GatewayError::precondition(cap, e))?;
        let question = self.generator.generate_question(prompt)?;
        if question.trim().is_empty() {
            return Err(GatewayError::invalid(cap, self.endpoint_label(cap), "empty question"));
        }
        Ok(question)
    }
}

impl GrammaticalityClassifier for Gateway {
    fn classify_grammatical(&self, text: &str) -> Result<Grammaticality, GatewayError> {
        let cap = Capability::Grammaticality;
        if text.trim().is_empty() {
            return Err(GatewayError::precondition(cap, PreconditionError::Empty("text")));
        }
        let result = self.grammar.classify_grammatical(text)?;
        if !(0.0..=1.0).contains(&result.probability) {
            return Err(GatewayError::invalid(
                cap,
                self.endpoint_label(cap),
                format!("probability {} outside [0, 1]", result.probability),
            ));
        }
        Ok(result)
    }
}

impl QuestionAnswerer for Gateway {
    fn answer_question(&self, question: &str, context: &str) -> Result<QaPrediction, GatewayError> {
        let cap = Capability::Qa;
        if question.is_empty() {
            return Err(GatewayError::precondition(cap, PreconditionError::Empty("question")));
        }
        if context.is_empty() {
            return Err(GatewayError::precondition(cap, PreconditionError::Empty("context")));
        }
        let prediction = self.qa.answer_question(question, context)?;
        prediction
            .validate(context)
            .map_err(|reason| GatewayError::invalid(cap, self.endpoint_label(cap), reason))?;
        Ok(prediction)
    }
}

impl PosTagger for Gateway {
    fn tag_pos(&self, text: &str) -> Result<Vec<PosTag>, GatewayError> {
        self.tagger.tag_pos(text)
    }
}
