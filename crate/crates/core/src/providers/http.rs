//! JSON-over-HTTP backends speaking the common chat-completion and
//! embedding endpoint shapes:
//!
//! * `POST {base_url}/embeddings` with `{"model", "input": [..]}`, answered by
//!   `{"data": [{"index", "embedding": [..]}]}`
//! * `POST {base_url}/chat/completions` with `{"model", "messages",
//!   "temperature"}`, answered by `{"choices": [{"message": {"content"}}]}`

use std::fmt;
use std::thread;
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::embedding::{check_batch, Embedder, Embedding};
use super::llm::{definition_prompt, merge_prompt, parse_merged_reply, single_paragraph, Llm};
use crate::error::ProviderError;

/// A secret that never shows up in debug output.
#[derive(Clone, PartialEq, Eq)]
pub struct Secret(String);

impl Secret {
    pub fn new(value: impl Into<String>) -> Self {
        Secret(value.into())
    }

    pub fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Secret(***)")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProviderConfig {
    pub base_url: String,
    pub model_name: String,
    pub auth_token: Option<Secret>,
    pub timeout: Duration,
    pub max_retries: u32,
    /// Sampling temperature; ignored by embedding requests.
    pub temperature: f64,
    pub batch_size: usize,
    /// Delay before the first retry; doubles on each further attempt.
    pub initial_backoff: Duration,
}

impl ProviderConfig {
    pub fn new(base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model_name: model_name.into(),
            auth_token: None,
            timeout: Duration::from_secs(120),
            max_retries: 3,
            temperature: 0.5,
            batch_size: 64,
            initial_backoff: Duration::from_millis(500),
        }
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.base_url.trim().is_empty() {
            return Err(ProviderError::Config("base_url is empty".into()));
        }
        if self.model_name.trim().is_empty() {
            return Err(ProviderError::Config("model_name is empty".into()));
        }
        if self.timeout.is_zero() {
            return Err(ProviderError::Config("timeout must be > 0".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(ProviderError::Config(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.batch_size == 0 {
            return Err(ProviderError::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }

    fn endpoint(&self, path: &str) -> String {
        format!("{}/{}", self.base_url.trim_end_matches('/'), path)
    }
}

enum Attempt {
    Retry(String),
    Fatal(ProviderError),
}

struct Client {
    agent: ureq::Agent,
    config: ProviderConfig,
    name: String,
}

impl Client {
    fn new(config: ProviderConfig, name: String) -> Result<Self, ProviderError> {
        config.validate()?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            agent,
            config,
            name,
        })
    }

    fn attempt(&self, url: &str, body: &serde_json::Value) -> Result<serde_json::Value, Attempt> {
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(token) = &self.config.auth_token {
            req = req.header("Authorization", format!("Bearer {}", token.expose()));
        }
        let mut resp = req.send_json(body).map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        match status {
            200..=299 => serde_json::from_str(&text).map_err(|e| {
                Attempt::Fatal(ProviderError::BadResponse {
                    provider: self.name.clone(),
                    message: format!("invalid JSON: {e}"),
                })
            }),
            429 | 500..=599 => Err(Attempt::Retry(format!("HTTP {status}: {text}"))),
            _ => Err(Attempt::Fatal(ProviderError::BadResponse {
                provider: self.name.clone(),
                message: format!("HTTP {status}: {text}"),
            })),
        }
    }

    /// Posts with exponential backoff on transport errors, 429 and 5xx.
    fn post(
        &self,
        path: &str,
        body: serde_json::Value,
        batch: &[String],
    ) -> Result<serde_json::Value, ProviderError> {
        let url = self.config.endpoint(path);
        let mut delay = self.config.initial_backoff;
        let mut last = String::new();
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                thread::sleep(delay);
                delay = delay.saturating_mul(2);
            }
            match self.attempt(&url, &body) {
                Ok(v) => return Ok(v),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => {
                    log::warn!("{} attempt {} failed: {msg}", self.name, attempt + 1);
                    last = msg;
                }
            }
        }
        Err(ProviderError::Transport {
            provider: self.name.clone(),
            attempts: self.config.max_retries + 1,
            message: last,
            batch: batch.to_vec(),
        })
    }
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    #[serde(default)]
    index: Option<usize>,
    embedding: Vec<f64>,
}

pub struct HttpEmbedder {
    client: Client,
}

impl HttpEmbedder {
    pub fn new(config: ProviderConfig) -> Result<Self, ProviderError> {
        let name = format!("http-embed/{}", config.model_name);
        Ok(Self {
            client: Client::new(config, name)?,
        })
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Embedding>, ProviderError> {
        let body = json!({"model": self.client.config.model_name, "input": texts});
        let value = self.client.post("embeddings", body, texts)?;
        let mut parsed: EmbeddingResponse =
            serde_json::from_value(value).map_err(|e| ProviderError::BadResponse {
                provider: self.client.name.clone(),
                message: e.to_string(),
            })?;
        if parsed.data.iter().all(|d| d.index.is_some()) {
            parsed.data.sort_by_key(|d| d.index);
        }
        let out = parsed
            .data
            .into_iter()
            .map(|d| Embedding::normalized(d.embedding))
            .collect::<Result<Vec<_>, _>>()?;
        check_batch(texts, &out)?;
        Ok(out)
    }
}

impl Embedder for HttpEmbedder {
    fn id(&self) -> String {
        format!("http/{}@{}", self.client.config.model_name, self.client.config.base_url)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Embedding>, ProviderError> {
        if texts.iter().any(|t| t.trim().is_empty()) {
            return Err(ProviderError::EmptyText);
        }
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.client.config.batch_size) {
            out.extend(self.embed_batch(chunk)?);
        }
        check_batch(texts, &out)?;
        Ok(out)
    }
}

pub struct HttpLlm {
    client: Client,
}

impl HttpLlm {
    pub fn new(config: ProviderConfig) -> Result<Self, ProviderError> {
        let name = format!("http-chat/{}", config.model_name);
        Ok(Self {
            client: Client::new(config, name)?,
        })
    }

    fn chat(&self, prompt: &str) -> Result<String, ProviderError> {
        let body = json!({
            "model": self.client.config.model_name,
            "temperature": self.client.config.temperature,
            "messages": [{"role": "user", "content": prompt}],
        });
        let value = self.client.post("chat/completions", body, &[prompt.to_string()])?;
        value
            .pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .map(str::to_string)
            .ok_or_else(|| ProviderError::BadResponse {
                provider: self.client.name.clone(),
                message: "missing choices[0].message.content".into(),
            })
    }

    /// Re-asks on unusable replies, up to `max_retries` extra times.
    fn ask<T>(&self, prompt: &str, parse: impl Fn(&str) -> Option<T>) -> Result<T, ProviderError> {
        for _ in 0..=self.client.config.max_retries {
            if let Some(v) = parse(&self.chat(prompt)?) {
                return Ok(v);
            }
        }
        Err(ProviderError::EmptyOutput {
            provider: self.client.name.clone(),
        })
    }
}

impl Llm for HttpLlm {
    fn id(&self) -> String {
        format!(
            "http/{}@{}/t={}",
            self.client.config.model_name, self.client.config.base_url, self.client.config.temperature
        )
    }

    fn generate_definition(&self, label: &str, examples: &[String]) -> Result<String, ProviderError> {
        let prompt = definition_prompt(label, examples);
        self.ask(&prompt, |reply| {
            let text = single_paragraph(reply);
            (!text.is_empty()).then_some(text)
        })
    }

    fn generate_merged_code(
        &self,
        members: &[(String, String)],
    ) -> Result<(String, String), ProviderError> {
        if members.len() < 2 {
            return Err(ProviderError::BadResponse {
                provider: self.client.name.clone(),
                message: "merging needs at least 2 members".into(),
            });
        }
        self.ask(&merge_prompt(members), parse_merged_reply)
    }

    fn complete(&self, prompt: &str) -> Result<String, ProviderError> {
        self.ask(prompt, |reply| (!reply.trim().is_empty()).then(|| reply.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::{Arc, Mutex};

    /// Serves canned (status, body) replies in order and records requests.
    fn serve(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<String>>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let seen = Arc::new(Mutex::new(Vec::new()));
        let log = seen.clone();
        thread::spawn(move || {
            for (status, body) in replies {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream);
                let mut head = String::new();
                let mut len = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    head.push_str(&line);
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                log.lock().unwrap().push(format!("{head}{}", String::from_utf8_lossy(&buf)));
                let mut stream = reader.into_inner();
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
        });
        (format!("http://{addr}/v1"), seen)
    }

    fn config(url: &str) -> ProviderConfig {
        ProviderConfig {
            initial_backoff: Duration::from_millis(1),
            timeout: Duration::from_secs(5),
            auth_token: Some(Secret::new("s3cr3t")),
            ..ProviderConfig::new(url, "m")
        }
    }

    #[test]
    fn embeddings_are_normalized_and_reordered() {
        let body = r#"{"data":[{"index":1,"embedding":[0,2]},{"index":0,"embedding":[3,4]}]}"#;
        let (url, seen) = serve(vec![(200, body.into())]);
        let e = HttpEmbedder::new(config(&url)).unwrap();
        let out = e.embed(&["a".into(), "b".into()]).unwrap();
        assert_eq!(out[0].values(), &[0.6, 0.8]);
        assert_eq!(out[1].values(), &[0.0, 1.0]);
        let req = &seen.lock().unwrap()[0];
        assert!(req.starts_with("POST /v1/embeddings"));
        assert!(req.to_lowercase().contains("authorization: bearer s3cr3t"));
        assert!(!req.contains("temperature"));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let body = r#"{"data":[{"index":0,"embedding":[1,0]},{"index":1,"embedding":[1,0,0]}]}"#;
        let (url, _) = serve(vec![(200, body.into())]);
        let e = HttpEmbedder::new(config(&url)).unwrap();
        assert!(matches!(
            e.embed(&["a".into(), "b".into()]),
            Err(ProviderError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn server_errors_are_retried_then_reported_with_batch() {
        let (url, seen) = serve(vec![(503, "{}".into()), (200, r#"{"choices":[{"message":{"content":"A code.\nMore."}}]}"#.into())]);
        let llm = HttpLlm::new(config(&url)).unwrap();
        assert_eq!(llm.generate_definition("X", &[]).unwrap(), "A code. More.");
        let req = &seen.lock().unwrap()[1];
        let body: serde_json::Value = serde_json::from_str(&req[req.find("\r\n\r\n").unwrap() + 4..]).unwrap();
        assert_eq!(body["temperature"], 0.5);

        let (url, _) = serve(vec![(500, "{}".into()); 4]);
        let e = HttpEmbedder::new(config(&url)).unwrap();
        match e.embed(&["lost".into()]) {
            Err(ProviderError::Transport { attempts, batch, .. }) => {
                assert_eq!(attempts, 4);
                assert_eq!(batch, vec!["lost".to_string()]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_replies_become_errors_after_retries() {
        let blank = r#"{"choices":[{"message":{"content":"  "}}]}"#.to_string();
        let (url, _) = serve(vec![(200, blank); 4]);
        let llm = HttpLlm::new(config(&url)).unwrap();
        assert!(matches!(
            llm.generate_definition("X", &[]),
            Err(ProviderError::EmptyOutput { .. })
        ));
    }

    #[test]
    fn merged_code_is_parsed_from_json_reply() {
        let reply = r#"{"choices":[{"message":{"content":"{\"label\":\"Growth\",\"definition\":\"Community grows.\"}"}}]}"#;
        let (url, _) = serve(vec![(200, reply.into())]);
        let llm = HttpLlm::new(config(&url)).unwrap();
        let out = llm
            .generate_merged_code(&[("a".into(), "x".into()), ("b".into(), "y".into())])
            .unwrap();
        assert_eq!(out, ("Growth".to_string(), "Community grows.".to_string()));
    }

    #[test]
    fn config_validation_and_secret_redaction() {
        let mut c = ProviderConfig::new("http://x", "m");
        c.temperature = 2.5;
        assert!(c.validate().is_err());
        c.temperature = 0.5;
        c.timeout = Duration::ZERO;
        assert!(c.validate().is_err());
        assert!(!format!("{:?}", config("http://x")).contains("s3cr3t"));
    }
}
