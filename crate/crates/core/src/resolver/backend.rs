//! Model backends: an HTTP chat-completions client and a record/replay stub.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::RequestKind;
use crate::error::{Error, Result};

pub struct ModelCall<'a> {
    pub kind: RequestKind,
    pub prompt_id: &'a str,
    pub system: &'a str,
    pub user: &'a str,
    pub payload: &'a Value,
    pub attempt: u32,
}

pub trait ModelBackend: Send + Sync {
    fn id(&self) -> String;

    /// Raw JSON answer. `Value::Null` means the model declined.
    fn complete(&self, call: &ModelCall<'_>) -> Result<Value>;
}

/// JSON text with object keys sorted at every level.
pub(crate) fn canonical_json(v: &Value) -> String {
    fn sort(v: &Value) -> Value {
        match v {
            Value::Object(m) => {
                let mut keys: Vec<&String> = m.keys().collect();
                keys.sort();
                let mut out = serde_json::Map::new();
                for k in keys {
                    out.insert(k.clone(), sort(&m[k]));
                }
                Value::Object(out)
            }
            Value::Array(a) => Value::Array(a.iter().map(sort).collect()),
            other => other.clone(),
        }
    }
    sort(v).to_string()
}

pub(crate) struct Prompt {
    pub id: &'static str,
    template: &'static str,
}

impl Prompt {
    /// Splits the template at its `[system]` and `[user]` markers and fills
    /// `{{payload}}` and `{{context}}`.
    pub fn render(&self, payload: &Value, context: &str) -> (String, String) {
        let body = self
            .template
            .lines()
            .filter(|l| !l.starts_with('#'))
            .collect::<Vec<_>>()
            .join("\n");
        let (system, user) = body.split_once("[user]").unwrap_or((body.as_str(), "{{payload}}"));
        let system = system.replace("[system]", "").trim().to_string();
        let payload = serde_json::to_string_pretty(payload).expect("serializable");
        let user = user
            .replace("{{payload}}", &payload)
            .replace("{{context}}", context)
            .trim()
            .to_string();
        (system, user)
    }
}

pub(crate) fn prompt_for(kind: RequestKind) -> Prompt {
    match kind {
        RequestKind::Translate => Prompt {
            id: "translate@v1",
            template: include_str!("../../prompts/translate.v1.txt"),
        },
        RequestKind::NormalizeRecipe => Prompt {
            id: "normalize_recipe@v1",
            template: include_str!("../../prompts/normalize_recipe.v1.txt"),
        },
        RequestKind::NormalizeIngredient => Prompt {
            id: "normalize_ingredient@v1",
            template: include_str!("../../prompts/normalize_ingredient.v1.txt"),
        },
        RequestKind::ResolveName => Prompt {
            id: "resolve_name@v1",
            template: include_str!("../../prompts/resolve_name.v1.txt"),
        },
        RequestKind::AssignCategory => Prompt {
            id: "assign_category@v1",
            template: include_str!("../../prompts/assign_category.v1.txt"),
        },
        RequestKind::EstimateWeight => Prompt {
            id: "estimate_weight@v1",
            template: include_str!("../../prompts/estimate_weight.v1.txt"),
        },
        RequestKind::InferLatent => Prompt {
            id: "infer_latent@v1",
            template: include_str!("../../prompts/infer_latent.v1.txt"),
        },
    }
}

/// Chat-completions style endpoint. The response's first choice must carry
/// a JSON object as its message content.
pub struct HttpModelBackend {
    url: String,
    key: Option<String>,
    model: String,
    agent: ureq::Agent,
}

impl HttpModelBackend {
    pub fn new(url: impl Into<String>, key: Option<String>, model: impl Into<String>) -> Self {
        HttpModelBackend {
            url: url.into(),
            key,
            model: model.into(),
            agent: ureq::AgentBuilder::new().timeout(Duration::from_secs(60)).build(),
        }
    }

    pub fn from_env() -> Result<Self> {
        let url = std::env::var("THALI_MODEL_URL")
            .map_err(|_| Error::BackendUnavailable("THALI_MODEL_URL is not set".into()))?;
        let key = std::env::var("THALI_MODEL_KEY").ok();
        let model = std::env::var("THALI_MODEL_NAME").unwrap_or_else(|_| "default".into());
        Ok(HttpModelBackend::new(url, key, model))
    }
}

impl ModelBackend for HttpModelBackend {
    fn id(&self) -> String {
        format!("http:{}", self.model)
    }

    fn complete(&self, call: &ModelCall<'_>) -> Result<Value> {
        let body = json!({
            "model": self.model,
            "temperature": 0,
            "response_format": { "type": "json_object" },
            "messages": [
                { "role": "system", "content": call.system },
                { "role": "user", "content": call.user },
            ],
        });
        let mut req = self.agent.post(&self.url);
        if let Some(k) = &self.key {
            req = req.set("Authorization", &format!("Bearer {k}"));
        }
        let resp: Value = req
            .send_json(body)
            .map_err(|e| Error::BackendUnavailable(e.to_string()))?
            .into_json()
            .map_err(|e| Error::BackendUnavailable(format!("unreadable response: {e}")))?;
        let content = resp
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::InvalidModelOutput("response has no message content".into()))?;
        // malformed JSON counts as a failed attempt, not a transport error
        Ok(serde_json::from_str(content).unwrap_or(Value::String(content.to_string())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub kind: RequestKind,
    pub payload: Value,
    /// Successive answers; the last one repeats.
    pub outputs: Vec<Value>,
}

impl ReplayEntry {
    pub fn new(kind: RequestKind, payload: Value, outputs: Vec<Value>) -> Self {
        ReplayEntry { kind, payload, outputs }
    }
}

#[derive(Serialize, Deserialize)]
struct ReplayFile {
    entries: Vec<ReplayEntry>,
}

/// Answers from recorded fixtures, keyed by kind and canonical payload.
/// Unknown requests are declined. Counts every call.
pub struct ReplayBackend {
    entries: HashMap<(RequestKind, String), Vec<Value>>,
    seen: Mutex<HashMap<(RequestKind, String), usize>>,
    calls: AtomicUsize,
}

impl ReplayBackend {
    pub fn from_entries(entries: Vec<ReplayEntry>) -> Self {
        ReplayBackend {
            entries: entries
                .into_iter()
                .map(|e| ((e.kind, canonical_json(&e.payload)), e.outputs))
                .collect(),
            seen: Mutex::new(HashMap::new()),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let f: ReplayFile = serde_json::from_str(&text)?;
        Ok(ReplayBackend::from_entries(f.entries))
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ModelBackend for ReplayBackend {
    fn id(&self) -> String {
        "replay".into()
    }

    fn complete(&self, call: &ModelCall<'_>) -> Result<Value> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let key = (call.kind, canonical_json(call.payload));
        let Some(outputs) = self.entries.get(&key) else {
            return Ok(Value::Null);
        };
        let mut seen = self.seen.lock().expect("replay lock");
        let n = seen.entry(key).or_insert(0);
        let out = outputs
            .get(*n)
            .or_else(|| outputs.last())
            .cloned()
            .unwrap_or(Value::Null);
        *n += 1;
        Ok(out)
    }
}

/// Always fails, as an unreachable endpoint would.
pub struct UnavailableBackend;

impl ModelBackend for UnavailableBackend {
    fn id(&self) -> String {
        "unavailable".into()
    }

    fn complete(&self, _call: &ModelCall<'_>) -> Result<Value> {
        Err(Error::BackendUnavailable("model endpoint unreachable".into()))
    }
}
