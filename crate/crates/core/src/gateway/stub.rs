//! Deterministic in-process stand-ins for the model capabilities.
//!
//! Every stub is a pure function of its input. They are selected in an
//! endpoint config with `base_url: "stub:<name>"`:
//!
//! | capability       | names |
//! |------------------|-------|
//! | `ANSWER_SELECT`  | `proper-noun` |
//! | `QUESTION_GEN`   | `template` |
//! | `GRAMMATICALITY` | `always-grammatical`, `always-ungrammatical`, `length-heuristic` |
//! | `QA`             | `oracle`, `refuser`, `corrupting`, `corrupting:<k>` |
//! | `POS_TAG`        | `lexicon` |

use std::collections::HashMap;
use std::sync::Arc;

use super::{
    parse_highlight_prompt, AnswerSelector, AnswerSpan, Capability, Gateway, GatewayError,
    Grammaticality, GrammaticalityClassifier, GrammaticalityLabel, PosTag, PosTagger,
    PreconditionError, QaPrediction, QuestionAnswerer, QuestionGenerator, Upos,
};
use crate::dataset::SquadDataset;
use crate::text::{char_len, char_slice, find_char};

const AUX: &[&str] = &[
    "is", "are", "was", "were", "be", "been", "being", "am", "has", "have", "had", "do", "does",
    "did", "will", "would", "shall", "should", "can", "could", "may", "might", "must",
];
const DET: &[&str] = &[
    "the", "a", "an", "this", "that", "these", "those", "each", "every", "some", "any", "no",
    "all", "its", "their", "his", "her", "our", "my", "your",
];
const ADP: &[&str] = &[
    "of", "in", "on", "at", "by", "for", "with", "to", "from", "as", "into", "about", "over",
    "under", "after", "before", "during", "between", "through",
];
const PRON: &[&str] = &["it", "he", "she", "they", "we", "you", "i", "who", "what", "which", "them", "us"];
const CCONJ: &[&str] = &["and", "or", "but", "nor"];
const VERB_SUFFIXES: &[&str] = &["ed", "ing"];
const ADJ_SUFFIXES: &[&str] = &["ly", "al", "ous", "ive", "ful", "able", "ible", "ic"];

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation() || matches!(c, '‘' | '’' | '“' | '”' | '–' | '—' | '…')
}

/// A token with its character span in the tagged text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedToken {
    pub start: usize,
    pub end: usize,
    pub text: String,
    pub tag: Upos,
}

/// Whitespace tokens, with leading and trailing punctuation split off into
/// one-character tokens. Offsets are in characters.
fn lexicon_tokens(text: &str) -> Vec<(usize, usize, String)> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && !chars[i].is_whitespace() {
            i += 1;
        }
        let (mut lo, mut hi) = (start, i);
        let mut trailing = Vec::new();
        while lo < hi && is_punct(chars[lo]) {
            out.push((lo, lo + 1, chars[lo].to_string()));
            lo += 1;
        }
        while hi > lo && is_punct(chars[hi - 1]) {
            trailing.push((hi - 1, hi, chars[hi - 1].to_string()));
            hi -= 1;
        }
        if lo < hi {
            out.push((lo, hi, chars[lo..hi].iter().collect()));
        }
        out.extend(trailing.into_iter().rev());
    }
    out
}

fn lexicon_tag(token: &str) -> Upos {
    if token.chars().all(is_punct) {
        return Upos::Punct;
    }
    if token.chars().any(|c| c.is_ascii_digit())
        && token.chars().all(|c| c.is_ascii_digit() || matches!(c, ',' | '.' | '%'))
    {
        return Upos::Num;
    }
    let lower = token.to_lowercase();
    let lower = lower.as_str();
    for (list, tag) in [
        (AUX, Upos::Aux),
        (DET, Upos::Det),
        (ADP, Upos::Adp),
        (PRON, Upos::Pron),
        (CCONJ, Upos::Cconj),
    ] {
        if list.contains(&lower) {
            return tag;
        }
    }
    if token.chars().next().is_some_and(char::is_uppercase) {
        return Upos::Propn;
    }
    let long = token.chars().count() >= 5;
    if long && VERB_SUFFIXES.iter().any(|s| lower.ends_with(s)) {
        return Upos::Verb;
    }
    if long && ADJ_SUFFIXES.iter().any(|s| lower.ends_with(s)) {
        return Upos::Adj;
    }
    Upos::Noun
}

/// Rule-based tagger: punctuation, numbers, closed-class lists, capitalised
/// words as proper nouns, `-ed`/`-ing` as verbs, a few adjective suffixes,
/// otherwise noun.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexiconTagger;

impl LexiconTagger {
    pub fn tag_tokens(text: &str) -> Vec<TaggedToken> {
        lexicon_tokens(text)
            .into_iter()
            .map(|(start, end, text)| {
                let tag = lexicon_tag(&text);
                TaggedToken { start, end, text, tag }
            })
            .collect()
    }
}

impl PosTagger for LexiconTagger {
    fn tag_pos(&self, text: &str) -> Result<Vec<PosTag>, GatewayError> {
        Ok(Self::tag_tokens(text)
            .into_iter()
            .map(|t| PosTag { token: t.text, tag: t.tag })
            .collect())
    }
}

/// Tagger that always fails; exercises per-document error reporting.
#[derive(Debug, Clone, Copy, Default)]
pub struct FailingTagger;

impl PosTagger for FailingTagger {
    fn tag_pos(&self, _text: &str) -> Result<Vec<PosTag>, GatewayError> {
        Err(GatewayError::Transport {
            capability: Capability::PosTag,
            endpoint: "stub:failing".into(),
            message: "tagger unavailable".into(),
        })
    }
}

/// Candidate answers are the maximal runs of PROPN tokens under
/// [`LexiconTagger`].
#[derive(Debug, Clone, Copy, Default)]
pub struct ProperNounSelector;

impl AnswerSelector for ProperNounSelector {
    fn select_answers(&self, sentence: &str, document: &str) -> Result<Vec<AnswerSpan>, GatewayError> {
        if sentence.is_empty() {
            return Ok(Vec::new());
        }
        let base = find_char(document, sentence).ok_or(GatewayError::Precondition {
            capability: Capability::AnswerSelect,
            reason: PreconditionError::SentenceNotInDocument,
        })?;
        let tokens = LexiconTagger::tag_tokens(sentence);
        let mut spans = Vec::new();
        let mut run: Option<(usize, usize)> = None;
        let mut flush = |run: &mut Option<(usize, usize)>| {
            if let Some((s, e)) = run.take() {
                let text = char_slice(sentence, s, e).unwrap_or_default().to_string();
                spans.push(AnswerSpan {
                    text,
                    start: base + s,
                    end: base + e,
                });
            }
        };
        for t in &tokens {
            if t.tag == Upos::Propn {
                run = Some(match run {
                    Some((s, _)) => (s, t.end),
                    None => (t.start, t.end),
                });
            } else {
                flush(&mut run);
            }
        }
        flush(&mut run);
        Ok(spans)
    }
}

/// Generates `What is the <highlight, lowercased>?`.
#[derive(Debug, Clone, Copy, Default)]
pub struct TemplateGenerator;

impl QuestionGenerator for TemplateGenerator {
    fn generate_question(&self, prompt: &str) -> Result<String, GatewayError> {
        let parsed = parse_highlight_prompt(prompt).map_err(|reason| GatewayError::Precondition {
            capability: Capability::QuestionGen,
            reason,
        })?;
        Ok(format!("What is the {}?", parsed.highlight.to_lowercase()))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AlwaysGrammatical;

impl GrammaticalityClassifier for AlwaysGrammatical {
    fn classify_grammatical(&self, _text: &str) -> Result<Grammaticality, GatewayError> {
        Ok(Grammaticality {
            label: GrammaticalityLabel::Grammatical,
            probability: 1.0,
        })
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AlwaysUngrammatical;

impl GrammaticalityClassifier for AlwaysUngrammatical {
    fn classify_grammatical(&self, _text: &str) -> Result<Grammaticality, GatewayError> {
        Ok(Grammaticality {
            label: GrammaticalityLabel::Ungrammatical,
            probability: 1.0,
        })
    }
}

/// Texts under three whitespace tokens are ungrammatical (p = 0.9), the rest
/// grammatical (p = 0.9).
#[derive(Debug, Clone, Copy, Default)]
pub struct LengthHeuristic;

impl GrammaticalityClassifier for LengthHeuristic {
    fn classify_grammatical(&self, text: &str) -> Result<Grammaticality, GatewayError> {
        let label = if text.split_whitespace().count() < 3 {
            GrammaticalityLabel::Ungrammatical
        } else {
            GrammaticalityLabel::Grammatical
        };
        Ok(Grammaticality { label, probability: 0.9 })
    }
}

/// Always predicts the null answer with full confidence.
#[derive(Debug, Clone, Copy, Default)]
pub struct RefuserQa;

impl QuestionAnswerer for RefuserQa {
    fn answer_question(&self, _q: &str, _c: &str) -> Result<QaPrediction, GatewayError> {
        Ok(QaPrediction::null(1.0))
    }
}

/// Gold answers keyed by (question, context).
#[derive(Debug, Clone, Default)]
pub struct GoldTable {
    answers: HashMap<(String, String), (usize, String)>,
}

impl GoldTable {
    pub fn insert(&mut self, question: &str, context: &str, start: usize, text: &str) {
        self.answers
            .insert((question.to_string(), context.to_string()), (start, text.to_string()));
    }

    /// First gold answer of every answerable question.
    pub fn from_dataset(dataset: &SquadDataset) -> Self {
        let mut table = Self::default();
        for (paragraph, qa) in dataset.iter_qas() {
            if let Some(answer) = qa.answers.first() {
                table.insert(&qa.question, &paragraph.context, answer.answer_start, &answer.text);
            }
        }
        table
    }

    pub fn lookup(&self, question: &str, context: &str) -> Option<(usize, &str)> {
        self.answers
            .get(&(question.to_string(), context.to_string()))
            .map(|(s, t)| (*s, t.as_str()))
    }

    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }
}

/// Returns the gold span with score 1 and null score 0; unknown questions
/// get the null answer.
#[derive(Debug, Clone, Default)]
pub struct OracleQa {
    gold: Arc<GoldTable>,
}

impl OracleQa {
    pub fn new(gold: GoldTable) -> Self {
        Self { gold: Arc::new(gold) }
    }

    pub fn from_dataset(dataset: &SquadDataset) -> Self {
        Self::new(GoldTable::from_dataset(dataset))
    }
}

impl QuestionAnswerer for OracleQa {
    fn answer_question(&self, question: &str, context: &str) -> Result<QaPrediction, GatewayError> {
        Ok(match self.gold.lookup(question, context) {
            Some((start, text)) => QaPrediction {
                answer_text: text.to_string(),
                start,
                end: start + char_len(text),
                score: 1.0,
                null_score: 0.0,
            },
            None => QaPrediction::null(1.0),
        })
    }
}

/// Like [`OracleQa`] but drops the last `drop_tokens` whitespace tokens of
/// the gold answer. Dropping every token yields the null answer.
#[derive(Debug, Clone, Default)]
pub struct CorruptingQa {
    gold: Arc<GoldTable>,
    drop_tokens: usize,
}

impl CorruptingQa {
    pub fn new(gold: GoldTable, drop_tokens: usize) -> Self {
        Self {
            gold: Arc::new(gold),
            drop_tokens,
        }
    }

    pub fn from_dataset(dataset: &SquadDataset, drop_tokens: usize) -> Self {
        Self::new(GoldTable::from_dataset(dataset), drop_tokens)
    }
}

/// `text` with its last `n` whitespace tokens removed (trailing space trimmed).
pub fn drop_last_tokens(text: &str, n: usize) -> &str {
    let mut bounds: Vec<(usize, usize)> = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        match (c.is_whitespace(), start) {
            (false, None) => start = Some(i),
            (true, Some(s)) => {
                bounds.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        bounds.push((s, text.len()));
    }
    let keep = bounds.len().saturating_sub(n);
    match keep {
        0 => "",
        k => &text[bounds[0].0..bounds[k - 1].1],
    }
}

impl QuestionAnswerer for CorruptingQa {
    fn answer_question(&self, question: &str, context: &str) -> Result<QaPrediction, GatewayError> {
        let Some((start, gold)) = self.gold.lookup(question, context) else {
            return Ok(QaPrediction::null(1.0));
        };
        let kept = drop_last_tokens(gold, self.drop_tokens);
        if kept.is_empty() {
            return Ok(QaPrediction {
                score: 0.0,
                ..QaPrediction::null(0.0)
            });
        }
        let leading = char_len(gold) - char_len(gold.trim_start());
        let start = start + leading;
        Ok(QaPrediction {
            answer_text: kept.to_string(),
            start,
            end: start + char_len(kept),
            score: 1.0,
            null_score: 0.0,
        })
    }
}

/// Installs stub `name` for `capability` on `gateway`.
pub fn install(
    gateway: &mut Gateway,
    capability: Capability,
    name: &str,
    gold: Option<&SquadDataset>,
) -> Result<(), GatewayError> {
    let unknown = || GatewayError::Config(format!("unknown stub `{name}` for {capability}"));
    let gold_table = || gold.map(GoldTable::from_dataset).unwrap_or_default();
    match capability {
        Capability::AnswerSelect => match name {
            "proper-noun" => gateway.selector = Arc::new(ProperNounSelector),
            _ => return Err(unknown()),
        },
        Capability::QuestionGen => match name {
            "template" => gateway.generator = Arc::new(TemplateGenerator),
            _ => return Err(unknown()),
        },
        Capability::Grammaticality => match name {
            "always-grammatical" => gateway.grammar = Arc::new(AlwaysGrammatical),
            "always-ungrammatical" => gateway.grammar = Arc::new(AlwaysUngrammatical),
            "length-heuristic" => gateway.grammar = Arc::new(LengthHeuristic),
            _ => return Err(unknown()),
        },
        Capability::Qa => match name {
            "oracle" => gateway.qa = Arc::new(OracleQa::new(gold_table())),
            "refuser" => gateway.qa = Arc::new(RefuserQa),
            "corrupting" => gateway.qa = Arc::new(CorruptingQa::new(gold_table(), 1)),
            other => {
                let k = other
                    .strip_prefix("corrupting:")
                    .and_then(|k| k.parse::<usize>().ok())
                    .ok_or_else(unknown)?;
                gateway.qa = Arc::new(CorruptingQa::new(gold_table(), k));
            }
        },
        Capability::PosTag => match name {
            "lexicon" => gateway.tagger = Arc::new(LexiconTagger),
            "failing" => gateway.tagger = Arc::new(FailingTagger),
            _ => return Err(unknown()),
        },
    }
    Ok(())
}
