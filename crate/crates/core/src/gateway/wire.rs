//! JSON bodies for `POST /v1/{route}` on a remote inference service.
//!
//! | route               | request                       | response |
//! |---------------------|-------------------------------|----------|
//! | `select-answers`    | `{"sentence", "document"}`    | `{"spans": [{"text", "start", "end"}]}` |
//! | `generate-question` | `{"prompt"}`                  | `{"question"}` |
//! | `grammaticality`    | `{"text"}`                    | `{"label": "grammatical"\|"ungrammatical", "prob"}` |
//! | `answer`            | `{"question", "context"}`     | `{"text", "start", "end", "score", "null_score"}` |
//! | `pos-tags`          | `{"text"}`                    | `{"tags": [{"token", "tag"}]}` |
//!
//! Offsets are character offsets into the `document`/`context` field of the
//! request. Unknown fields are rejected so protocol drift fails loudly.

use serde::{Deserialize, Serialize};

use super::{AnswerSpan, Grammaticality, GrammaticalityLabel, PosTag, QaPrediction};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectAnswersRequest {
    pub sentence: String,
    pub document: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectAnswersResponse {
    pub spans: Vec<AnswerSpan>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateQuestionRequest {
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateQuestionResponse {
    pub question: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextRequest {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrammaticalityResponse {
    pub label: GrammaticalityLabel,
    pub prob: f64,
}

impl From<GrammaticalityResponse> for Grammaticality {
    fn from(r: GrammaticalityResponse) -> Self {
        Grammaticality {
            label: r.label,
            probability: r.prob,
        }
    }
}

impl From<Grammaticality> for GrammaticalityResponse {
    fn from(g: Grammaticality) -> Self {
        GrammaticalityResponse {
            label: g.label,
            prob: g.probability,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnswerRequest {
    pub question: String,
    pub context: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnswerResponse {
    pub text: String,
    pub start: usize,
    pub end: usize,
    pub score: f64,
    pub null_score: f64,
}

impl From<AnswerResponse> for QaPrediction {
    fn from(r: AnswerResponse) -> Self {
        QaPrediction {
            answer_text: r.text,
            start: r.start,
            end: r.end,
            score: r.score,
            null_score: r.null_score,
        }
    }
}

impl From<QaPrediction> for AnswerResponse {
    fn from(p: QaPrediction) -> Self {
        AnswerResponse {
            text: p.answer_text,
            start: p.start,
            end: p.end,
            score: p.score,
            null_score: p.null_score,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PosTagsResponse {
    pub tags: Vec<PosTag>,
}
