use std::collections::HashMap;
use std::net::{TcpStream, ToSocketAddrs};
use std::path::Path;
use std::time::Duration;

use serde::Deserialize;

use super::{load_responses, BackendError, GenerationParams, ModelBackend};
use crate::error::{Error, Result};
use crate::finetune::{generate_text, LoraAdapter, TinyCausalLm};
use crate::text::words;

/// Returns the prompt verbatim.
#[derive(Debug, Clone)]
pub struct EchoBackend {
    name: String,
}

impl EchoBackend {
    pub fn new(name: impl Into<String>) -> Self {
        EchoBackend { name: name.into() }
    }
}

impl Default for EchoBackend {
    fn default() -> Self {
        Self::new("echo")
    }
}

impl ModelBackend for EchoBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn generate(&self, prompt: &str, _: &GenerationParams) -> Result<String, BackendError> {
        Ok(prompt.to_string())
    }
}

/// Serves responses recorded earlier in a `responses_<model>.csv` file. Questions without a
/// recorded response fail permanently, so they come back as missing again.
#[derive(Debug, Clone)]
pub struct ReplayBackend {
    name: String,
    source: String,
    answers: HashMap<String, String>,
}

impl ReplayBackend {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let set = load_responses(path)?;
        let answers = set
            .records
            .into_iter()
            .filter_map(|r| r.response.map(|resp| (r.question, resp)))
            .collect();
        Ok(ReplayBackend {
            name: set.model_name,
            source: path.display().to_string(),
            answers,
        })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }
}

impl ModelBackend for ReplayBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn generate(&self, prompt: &str, _: &GenerationParams) -> Result<String, BackendError> {
        self.answers
            .get(prompt)
            .cloned()
            .ok_or_else(|| BackendError::permanent("no recorded response"))
    }

    fn describe(&self) -> String {
        format!("replay:{}", self.source)
    }
}

#[derive(Debug, Deserialize)]
struct ChatMessage {
    content: String,
}

#[derive(Debug, Deserialize)]
struct ChatChoice {
    #[serde(default)]
    message: Option<ChatMessage>,
    #[serde(default)]
    text: Option<String>,
}

#[derive(Debug, Deserialize)]
struct Generated {
    generated_text: String,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum GenerationReply {
    Text { text: String },
    Response { response: String },
    Generated(Generated),
    GeneratedList(Vec<Generated>),
    Choices { choices: Vec<ChatChoice> },
}

impl GenerationReply {
    fn into_text(self) -> Option<String> {
        match self {
            GenerationReply::Text { text } => Some(text),
            GenerationReply::Response { response } => Some(response),
            GenerationReply::Generated(g) => Some(g.generated_text),
            GenerationReply::GeneratedList(v) => v.into_iter().next().map(|g| g.generated_text),
            GenerationReply::Choices { choices } => choices
                .into_iter()
                .next()
                .and_then(|c| c.message.map(|m| m.content).or(c.text)),
        }
    }
}

/// Generic JSON-over-HTTP text generation endpoint.
///
/// Request: `POST {"prompt", "max_new_tokens", "temperature"}`. Accepted replies:
/// `{"text"}`, `{"response"}`, `{"generated_text"}` (alone or in a list), or a chat-completion
/// style `{"choices": [{"message": {"content"}}]}`.
#[derive(Debug)]
pub struct HttpJsonBackend {
    name: String,
    endpoint: String,
    auth_env: Option<String>,
    agent: ureq::Agent,
}

impl HttpJsonBackend {
    pub fn new(name: impl Into<String>, endpoint: impl Into<String>, auth_env: Option<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        HttpJsonBackend {
            name: name.into(),
            endpoint: endpoint.into(),
            auth_env,
            agent,
        }
    }

    fn transport(&self, message: impl Into<String>) -> Error {
        Error::Transport {
            target: self.endpoint.clone(),
            message: message.into(),
        }
    }
}

impl ModelBackend for HttpJsonBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn check(&self) -> Result<()> {
        let uri: ureq::http::Uri = self
            .endpoint
            .parse()
            .map_err(|e| Error::Config(format!("bad endpoint {:?}: {e}", self.endpoint)))?;
        let host = uri
            .host()
            .ok_or_else(|| Error::Config(format!("endpoint {:?} has no host", self.endpoint)))?;
        let port = uri
            .port_u16()
            .unwrap_or(if uri.scheme_str() == Some("https") { 443 } else { 80 });
        let addrs: Vec<_> = (host, port)
            .to_socket_addrs()
            .map_err(|e| self.transport(e.to_string()))?
            .collect();
        let reachable = addrs
            .iter()
            .any(|a| TcpStream::connect_timeout(a, Duration::from_secs(5)).is_ok());
        if reachable {
            Ok(())
        } else {
            Err(self.transport("endpoint unreachable"))
        }
    }

    fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<String, BackendError> {
        let mut req = self.agent.post(&self.endpoint);
        if let Some(token) = self.auth_env.as_deref().and_then(|v| std::env::var(v).ok()) {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let body = serde_json::json!({
            "prompt": prompt,
            "max_new_tokens": params.max_new_tokens,
            "temperature": params.temperature,
        });
        let mut resp = req.send_json(body).map_err(|e| match e {
            ureq::Error::StatusCode(code) if code >= 500 || code == 429 => {
                BackendError::transient(format!("HTTP {code}"))
            }
            ureq::Error::StatusCode(code) => BackendError::permanent(format!("HTTP {code}")),
            other => BackendError::transient(other.to_string()),
        })?;
        let reply: GenerationReply = resp
            .body_mut()
            .read_json()
            .map_err(|e| BackendError::permanent(format!("malformed reply: {e}")))?;
        reply
            .into_text()
            .ok_or_else(|| BackendError::permanent("reply carried no text"))
    }

    fn describe(&self) -> String {
        format!("http:{}", self.endpoint)
    }
}

/// The bundled tiny causal model, optionally with a trained adapter.
///
/// Questions are rendered as `Question: {q} Answer:`, the prefix of the fine-tuning template,
/// and the continuation is returned. Sampling is seeded per prompt.
pub struct LocalModelBackend {
    name: String,
    source: String,
    model: TinyCausalLm<f64>,
    adapter: Option<LoraAdapter<f64>>,
    seed: u64,
}

impl LocalModelBackend {
    pub fn new(name: impl Into<String>, model: TinyCausalLm<f64>, adapter: Option<LoraAdapter<f64>>, seed: u64) -> Self {
        LocalModelBackend {
            name: name.into(),
            source: "in-memory".into(),
            model,
            adapter,
            seed,
        }
    }

    /// Loads a saved model (the bundled one when `model_path` is `None`) and,
    /// when given, an adapter directory.
    pub fn load(name: impl Into<String>, model_path: Option<&Path>, adapter_dir: Option<&Path>, seed: u64) -> Result<Self> {
        let (model, mut source) = match model_path {
            Some(p) => (TinyCausalLm::load(p)?, p.display().to_string()),
            None => (TinyCausalLm::bundled(), "bundled".to_string()),
        };
        let adapter = adapter_dir.map(LoraAdapter::load).transpose()?;
        if let Some(a) = &adapter {
            a.check_fits(model.config())?;
        }
        if let Some(dir) = adapter_dir {
            source.push_str(&format!("+{}", dir.display()));
        }
        Ok(LocalModelBackend {
            name: name.into(),
            source,
            model,
            adapter,
            seed,
        })
    }
}

impl ModelBackend for LocalModelBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<String, BackendError> {
        let rendered = format!("Question: {} Answer:", prompt.trim());
        let text = generate_text(
            &self.model,
            self.adapter.as_ref(),
            &rendered,
            params.max_new_tokens,
            params.temperature,
            self.seed,
        )
        .map_err(|e| BackendError::permanent(e.to_string()))?;
        if words(&text).is_empty() {
            return Err(BackendError::permanent("generated text has no word tokens"));
        }
        Ok(text.trim().to_string())
    }

    fn describe(&self) -> String {
        format!("local:{}", self.source)
    }
}
