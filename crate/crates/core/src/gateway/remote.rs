//! Blocking JSON-over-HTTP client for remote inference services.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::wire::{
    AnswerRequest, AnswerResponse, GenerateQuestionRequest, GenerateQuestionResponse,
    GrammaticalityResponse, PosTagsResponse, SelectAnswersRequest, SelectAnswersResponse,
    TextRequest,
};
use super::{
    AnswerSelector, AnswerSpan, Capability, EndpointConfig, GatewayError, Grammaticality,
    GrammaticalityClassifier, PosTag, PosTagger, QaPrediction, QuestionAnswerer,
    QuestionGenerator,
};

const BACKOFF_BASE_MS: u64 = 25;
const BACKOFF_CAP_MS: u64 = 2_000;

pub(crate) fn validate_base_url(url: &str) -> Result<(), &'static str> {
    let rest = url
        .strip_prefix("http://")
        .or_else(|| url.strip_prefix("https://"))
        .ok_or("expected an http(s) URL or `stub:<name>`")?;
    let host = rest.split('/').next().unwrap_or_default();
    if host.is_empty() || host.contains(char::is_whitespace) {
        return Err("missing or malformed host");
    }
    url.parse::<ureq::http::Uri>().map_err(|_| "malformed URL")?;
    Ok(())
}

/// Counting semaphore bounding concurrent requests to one endpoint.
#[derive(Debug)]
struct InFlight {
    free: Mutex<usize>,
    cond: Condvar,
}

impl InFlight {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n),
            cond: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cond.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a InFlight);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cond.notify_one();
    }
}

enum Attempt {
    Retry(GatewayError),
    Fatal(GatewayError),
}

/// One remote endpoint. Safe to share between threads.
#[derive(Debug)]
pub struct RemoteEndpoint {
    config: EndpointConfig,
    agent: ureq::Agent,
    in_flight: InFlight,
}

impl RemoteEndpoint {
    pub fn new(config: EndpointConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .new_agent();
        let in_flight = InFlight::new(config.max_in_flight);
        Ok(Self {
            config,
            agent,
            in_flight,
        })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    fn url(&self, capability: Capability) -> String {
        format!(
            "{}/v1/{}",
            self.config.base_url.trim_end_matches('/'),
            capability.route()
        )
    }

    /// POSTs `body`, retrying transport failures, 429 and 5xx with
    /// exponential backoff.
    fn call<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        capability: Capability,
        body: &Req,
    ) -> Result<Resp, GatewayError> {
        let url = self.url(capability);
        let _permit = self.in_flight.acquire();
        let mut attempt = 0;
        loop {
            match self.attempt(capability, &url, body) {
                Ok(resp) => return Ok(resp),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(e)) if attempt >= self.config.max_retries => return Err(e),
                Err(Attempt::Retry(e)) => {
                    let delay = (BACKOFF_BASE_MS << attempt.min(16)).min(BACKOFF_CAP_MS);
                    log::debug!("{e}; retrying in {delay} ms");
                    thread::sleep(Duration::from_millis(delay));
                    attempt += 1;
                }
            }
        }
    }

    fn attempt<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        capability: Capability,
        url: &str,
        body: &Req,
    ) -> Result<Resp, Attempt> {
        let endpoint = self.config.base_url.clone();
        let mut response = self.agent.post(url).send_json(body).map_err(|e| {
            Attempt::Retry(GatewayError::Transport {
                capability,
                endpoint: endpoint.clone(),
                message: e.to_string(),
            })
        })?;
        let status = response.status().as_u16();
        if !(200..300).contains(&status) {
            let err = GatewayError::Status {
                capability,
                endpoint,
                status,
            };
            return Err(if status == 429 || status >= 500 {
                Attempt::Retry(err)
            } else {
                Attempt::Fatal(err)
            });
        }
        response.body_mut().read_json::<Resp>().map_err(|e| {
            Attempt::Fatal(GatewayError::InvalidResponse {
                capability,
                endpoint,
                reason: e.to_string(),
            })
        })
    }
}

impl AnswerSelector for RemoteEndpoint {
    fn select_answers(&self, sentence: &str, document: &str) -> Result<Vec<AnswerSpan>, GatewayError> {
        let req = SelectAnswersRequest {
            sentence: sentence.to_string(),
            document: document.to_string(),
        };
        let resp: SelectAnswersResponse = self.call(Capability::AnswerSelect, &req)?;
        Ok(resp.spans)
    }
}

impl QuestionGenerator for RemoteEndpoint {
    fn generate_question(&self, prompt: &str) -> Result<String, GatewayError> {
        let req = GenerateQuestionRequest {
            prompt: prompt.to_string(),
        };
        let resp: GenerateQuestionResponse = self.call(Capability::QuestionGen, &req)?;
        Ok(resp.question)
    }
}

impl GrammaticalityClassifier for RemoteEndpoint {
    fn classify_grammatical(&self, text: &str) -> Result<Grammaticality, GatewayError> {
        let req = TextRequest { text: text.to_string() };
        let resp: GrammaticalityResponse = self.call(Capability::Grammaticality, &req)?;
        Ok(resp.into())
    }
}

impl QuestionAnswerer for RemoteEndpoint {
    fn answer_question(&self, question: &str, context: &str) -> Result<QaPrediction, GatewayError> {
        let req = AnswerRequest {
            question: question.to_string(),
            context: context.to_string(),
        };
        let resp: AnswerResponse = self.call(Capability::Qa, &req)?;
        Ok(resp.into())
    }
}

impl PosTagger for RemoteEndpoint {
    fn tag_pos(&self, text: &str) -> Result<Vec<PosTag>, GatewayError> {
        let req = TextRequest { text: text.to_string() };
        let resp: PosTagsResponse = self.call(Capability::PosTag, &req)?;
        Ok(resp.tags)
    }
}
