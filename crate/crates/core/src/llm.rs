//! Language-model adapter: transport, wire format, and response contracts.
//!
//! Everything the simulation asks of a model goes through `ChatClient`, which
//! has two implementations: `OpenAiChat` speaks the OpenAI-compatible chat
//! completions format over an injected `Transport`, and `ScriptedChat` replays
//! canned replies for deterministic runs and tests. Replies are free text; the
//! adapter extracts the first JSON object, validates it against the expected
//! contract, and retries once with a correction prompt before giving up.
//! Callers treat an exhausted retry budget as a signal to fall back to their
//! non-LLM path, so a flaky model degrades the simulation instead of
//! aborting it.
//!
//! API keys are read from the environment variable named in the config, never
//! from the config file itself.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("http status {status}: {body}")]
    Http { status: u16, body: String },
    #[error("api key variable `{0}` is not set")]
    MissingApiKey(String),
    #[error("response carried no message content")]
    EmptyResponse,
    #[error("no JSON object found in reply")]
    NoJsonFound,
    #[error("reply violates the {contract} contract: {reason}")]
    ContractViolation { contract: &'static str, reason: String },
    #[error("retries exhausted after {attempts} attempts: {last_error}")]
    RetriesExhausted { attempts: u32, last_error: String },
    #[error("prompt template left `{{{0}}}` unfilled")]
    UnfilledSlot(String),
}

// Nonzero default: destination and activity choices are meant to vary, and
// determinism in tests comes from the scripted client, not the sampler.
fn default_temperature() -> f64 {
    0.7
}

fn default_timeout_secs() -> u64 {
    30
}

fn default_max_retries() -> u32 {
    1
}

/// Connection settings for an OpenAI-compatible endpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmConfig {
    pub endpoint_url: String,
    pub model_name: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    /// Name of the environment variable holding the bearer token, if any.
    #[serde(default)]
    pub api_key_env: Option<String>,
}

/// One HTTP POST of a JSON body; the seam that keeps tests off the network.
pub trait Transport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &Value,
    ) -> Result<Value, LlmError>;
}

/// Blocking HTTP transport.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        Ok(Self { client })
    }
}

impl Transport for HttpTransport {
    fn post_json(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &Value,
    ) -> Result<Value, LlmError> {
        let mut request = self.client.post(url).json(body);
        for (name, value) in headers {
            request = request.header(name, value);
        }
        let response = request.send().map_err(|e| LlmError::Transport(e.to_string()))?;
        let status = response.status();
        let text = response.text().map_err(|e| LlmError::Transport(e.to_string()))?;
        if !status.is_success() {
            let mut body = text;
            body.truncate(500);
            return Err(LlmError::Http { status: status.as_u16(), body });
        }
        serde_json::from_str(&text).map_err(|e| LlmError::Transport(format!("invalid JSON response: {e}")))
    }
}

/// Transport that must never be reached; counts and rejects every call.
/// Wire it into offline runs to prove no network is touched.
#[derive(Debug, Default)]
pub struct SentinelTransport {
    calls: AtomicUsize,
}

impl SentinelTransport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Transport for SentinelTransport {
    fn post_json(&self, url: &str, _headers: &[(String, String)], _body: &Value) -> Result<Value, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Err(LlmError::Transport(format!("network disabled, attempted POST to {url}")))
    }
}

/// A system + user exchange returning the assistant's raw text.
pub trait ChatClient: Send + Sync {
    fn chat(&self, system: &str, user: &str) -> Result<String, LlmError>;
}

/// OpenAI-compatible chat completions client.
pub struct OpenAiChat {
    config: LlmConfig,
    headers: Vec<(String, String)>,
    transport: Box<dyn Transport>,
}

impl OpenAiChat {
    /// Resolves the API key from the configured environment variable at
    /// construction; a configured-but-missing variable is an error.
    pub fn new(config: LlmConfig, transport: Box<dyn Transport>) -> Result<Self, LlmError> {
        let mut headers = Vec::new();
        if let Some(var) = &config.api_key_env {
            let key = std::env::var(var).map_err(|_| LlmError::MissingApiKey(var.clone()))?;
            headers.push(("Authorization".to_string(), format!("Bearer {key}")));
        }
        Ok(Self { config, headers, transport })
    }
}

impl ChatClient for OpenAiChat {
    fn chat(&self, system: &str, user: &str) -> Result<String, LlmError> {
        let body = serde_json::json!({
            "model": self.config.model_name,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
            "temperature": self.config.temperature,
        });
        let response = self.transport.post_json(&self.config.endpoint_url, &self.headers, &body)?;
        response["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or(LlmError::EmptyResponse)
    }
}

/// Replays a fixed reply sequence; the last reply repeats once exhausted.
/// Records every prompt for assertions.
pub struct ScriptedChat {
    replies: Mutex<VecDeque<String>>,
    last: Mutex<String>,
    prompts: Mutex<Vec<String>>,
}

impl ScriptedChat {
    pub fn new(replies: Vec<String>) -> Self {
        assert!(!replies.is_empty(), "scripted client needs at least one reply");
        let last = replies.last().cloned().unwrap();
        Self {
            replies: Mutex::new(replies.into()),
            last: Mutex::new(last),
            prompts: Mutex::new(Vec::new()),
        }
    }

    /// User prompts seen so far, in call order.
    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().unwrap().clone()
    }
}

impl ChatClient for ScriptedChat {
    fn chat(&self, _system: &str, user: &str) -> Result<String, LlmError> {
        self.prompts.lock().unwrap().push(user.to_string());
        let next = self.replies.lock().unwrap().pop_front();
        match next {
            Some(reply) => {
                *self.last.lock().unwrap() = reply.clone();
                Ok(reply)
            }
            None => Ok(self.last.lock().unwrap().clone()),
        }
    }
}

/// Pull the first JSON object out of free text: a fenced ```json block if
/// present, otherwise the first parseable `{...}` value.
pub fn extract_json(text: &str) -> Option<Value> {
    if let Some(fence_start) = text.find("```") {
        let after = &text[fence_start + 3..];
        let body_start = after.find('\n').map(|i| i + 1).unwrap_or(0);
        if let Some(fence_end) = after[body_start..].find("```") {
            let body = &after[body_start..body_start + fence_end];
            if let Ok(v @ Value::Object(_)) = serde_json::from_str::<Value>(body.trim()) {
                return Some(v);
            }
        }
    }
    let start = text.find('{')?;
    let mut stream = serde_json::Deserializer::from_str(&text[start..]).into_iter::<Value>();
    match stream.next() {
        Some(Ok(v @ Value::Object(_))) => Some(v),
        _ => None,
    }
}

/// The JSON shape a reply must satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResponseContract {
    /// {"activity": str, "category": str, "duration_minutes": int in [5, 960]}
    NextActivity,
    /// {"poi_id": str}
    Destination,
    /// Object mapping each activity name to a nonempty list of category names.
    ActivityList,
}

impl ResponseContract {
    fn name(&self) -> &'static str {
        match self {
            ResponseContract::NextActivity => "next_activity",
            ResponseContract::Destination => "destination",
            ResponseContract::ActivityList => "activity_list",
        }
    }

    /// Short shape reminder used in correction prompts.
    pub fn shape_hint(&self) -> &'static str {
        match self {
            ResponseContract::NextActivity => {
                r#"{"activity": "<name>", "category": "<category>", "duration_minutes": <integer 5..960>}"#
            }
            ResponseContract::Destination => r#"{"poi_id": "<candidate id>"}"#,
            ResponseContract::ActivityList => {
                r#"{"<activity>": ["<category>", ...], ...} with at least one activity"#
            }
        }
    }

    pub fn validate(&self, value: &Value) -> Result<(), LlmError> {
        let fail = |reason: String| LlmError::ContractViolation { contract: self.name(), reason };
        let obj = value.as_object().ok_or_else(|| fail("not a JSON object".into()))?;
        match self {
            ResponseContract::NextActivity => {
                for field in ["activity", "category"] {
                    match obj.get(field).and_then(Value::as_str) {
                        Some(s) if !s.trim().is_empty() => {}
                        Some(_) => return Err(fail(format!("`{field}` is empty"))),
                        None => return Err(fail(format!("`{field}` missing or not a string"))),
                    }
                }
                let minutes = obj
                    .get("duration_minutes")
                    .and_then(Value::as_i64)
                    .ok_or_else(|| fail("`duration_minutes` missing or not an integer".into()))?;
                if !(5..=960).contains(&minutes) {
                    return Err(fail(format!("`duration_minutes` {minutes} outside [5, 960]")));
                }
            }
            ResponseContract::Destination => match obj.get("poi_id").and_then(Value::as_str) {
                Some(s) if !s.trim().is_empty() => {}
                Some(_) => return Err(fail("`poi_id` is empty".into())),
                None => return Err(fail("`poi_id` missing or not a string".into())),
            },
            ResponseContract::ActivityList => {
                if obj.is_empty() {
                    return Err(fail("no activities listed".into()));
                }
                for (activity, categories) in obj {
                    let list = categories
                        .as_array()
                        .ok_or_else(|| fail(format!("`{activity}` is not a list")))?;
                    if list.is_empty() {
                        return Err(fail(format!("`{activity}` has no categories")));
                    }
                    for c in list {
                        match c.as_str() {
                            Some(s) if !s.trim().is_empty() => {}
                            _ => return Err(fail(format!("`{activity}` has a non-string category"))),
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Ask for a contract-conforming JSON reply, correcting the model on failure.
///
/// Returns the validated value and how many retries it took. Every failed
/// attempt appends the violation to the prompt so the model can fix it.
pub fn request_json(
    client: &dyn ChatClient,
    contract: ResponseContract,
    system: &str,
    user: &str,
    max_retries: u32,
) -> Result<(Value, u32), LlmError> {
    let mut prompt = user.to_string();
    let mut last_error = String::new();
    let attempts = max_retries + 1;
    for attempt in 0..attempts {
        let text = client.chat(system, &prompt)?;
        let outcome = match extract_json(&text) {
            Some(value) => contract.validate(&value).map(|()| value),
            None => Err(LlmError::NoJsonFound),
        };
        match outcome {
            Ok(value) => return Ok((value, attempt)),
            Err(e) => {
                last_error = e.to_string();
                prompt = format!(
                    "{user}\n\nYour previous reply was invalid: {last_error}. \
                     Reply with only a JSON object of the form {}.",
                    contract.shape_hint()
                );
            }
        }
    }
    Err(LlmError::RetriesExhausted { attempts, last_error })
}

/// Fill `{slot}` placeholders; any placeholder left over is an error, so a
/// renamed slot fails loudly instead of leaking braces into a prompt.
pub fn render_template(template: &str, slots: &[(&str, &str)]) -> Result<String, LlmError> {
    let mut out = template.to_string();
    for (name, value) in slots {
        out = out.replace(&format!("{{{name}}}"), value);
    }
    let bytes = out.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            let mut j = i + 1;
            while j < bytes.len() && (bytes[j].is_ascii_lowercase() || bytes[j] == b'_') {
                j += 1;
            }
            if j > i + 1 && j < bytes.len() && bytes[j] == b'}' {
                return Err(LlmError::UnfilledSlot(out[i + 1..j].to_string()));
            }
        }
        i += 1;
    }
    Ok(out)
}

/// Prompt set for every model interaction in the pipeline.
#[derive(Debug, Clone)]
pub struct PromptTemplates {
    pub persona_system: String,
    pub persona_description: String,
    pub activity_list_system: String,
    pub activity_list: String,
    pub next_activity_system: String,
    pub next_activity: String,
    pub destination_system: String,
    pub destination: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            persona_system: "You write one-paragraph character sketches for residents of a city. \
                             Reply with plain text, no lists."
                .into(),
            persona_description: "Sketch a resident with these traits.\n\
                                  Gender: {gender}\nAge: {age}\nEmployment: {employment}\nOccupation: {occupation}\n\
                                  Personality (0 to 1): openness {openness}, conscientiousness {conscientiousness}, \
                                  extraversion {extraversion}, agreeableness {agreeableness}, neuroticism {neuroticism}"
                .into(),
            activity_list_system: "You map daily activities to venue categories. \
                                   Reply with only a JSON object: each key is an activity name, \
                                   each value a list of category names drawn from the provided list."
                .into(),
            activity_list: "Resident profile:\n{persona}\n\nAvailable venue categories:\n{categories}\n\n\
                            List this resident's routine activities (such as meals, work, errands, leisure) \
                            and for each the venue categories where it can happen."
                .into(),
            next_activity_system: "You schedule one activity at a time for a simulated resident. \
                                   Reply with only a JSON object: \
                                   {\"activity\": \"<name>\", \"category\": \"<category>\", \
                                   \"duration_minutes\": <integer 5..960>}. \
                                   The category must come from the resident's activity list."
                .into(),
            next_activity: "Resident profile:\n{persona}\n\nActivity list (activity: allowed categories):\n{activity_list}\n\n\
                            Today so far:\n{routine}\n\nLonger-term memory:\n{history}\n\n\
                            It is now minute {clock} of day {day} \
                            (0 is midnight; 480 is 8am). Time left today: {remaining} minutes.\n\
                            Choose the next activity, its venue category, and its duration in minutes."
                .into(),
            destination_system: "You pick one venue for a resident's activity. \
                                 Reply with only a JSON object: {\"poi_id\": \"<id>\"}. \
                                 The id must be one of the listed candidates."
                .into(),
            destination: "Resident profile:\n{persona}\n\nActivity: {activity}\n\n\
                          Relevant memories:\n{history}\n\nCandidate venues (id | name | distance km | past visits):\n\
                          {candidates}\n\nPick the single best venue id."
                .into(),
        }
    }
}
