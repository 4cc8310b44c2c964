//! Remote backends speaking the common chat/embeddings wire format. Everything
//! here is blocking; retries and repair live a layer up in [`super`].

use std::time::Duration;

use serde::Deserialize;

use super::{
    BackendError, ChatBackend, ChatRequest, EmbeddingBackend, JudgeBackend, JudgeRubric,
    RerankBackend, SchemaTag,
};
use crate::llm::payloads::{extract_json, JudgePayload};

const REQUEST_TIMEOUT: Duration = Duration::from_secs(60);

fn build_client() -> Result<reqwest::blocking::Client, BackendError> {
    reqwest::blocking::Client::builder()
        .timeout(REQUEST_TIMEOUT)
        .build()
        .map_err(|e| BackendError::Transport(format!("client init: {e}")))
}

/// Resolve a secret from the environment; the config stores only the variable
/// name so keys never land in files.
fn resolve_api_key(api_key_env: &str) -> Result<String, BackendError> {
    std::env::var(api_key_env)
        .map_err(|_| BackendError::Protocol(format!("api key env var {api_key_env} is not set")))
}

fn post_json(
    client: &reqwest::blocking::Client,
    url: &str,
    api_key: &str,
    body: &serde_json::Value,
) -> Result<serde_json::Value, BackendError> {
    let response = client
        .post(url)
        .bearer_auth(api_key)
        .json(body)
        .send()
        .map_err(|e| BackendError::Transport(format!("{url}: {e}")))?;
    let status = response.status();
    let text = response
        .text()
        .map_err(|e| BackendError::Transport(format!("{url}: body read: {e}")))?;
    if status.is_server_error() {
        return Err(BackendError::Transport(format!(
            "{url}: status {status}: {text}"
        )));
    }
    if !status.is_success() {
        return Err(BackendError::Protocol(format!(
            "{url}: status {status}: {text}"
        )));
    }
    serde_json::from_str(&text).map_err(|e| BackendError::Protocol(format!("{url}: bad json: {e}")))
}

#[derive(Debug, Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Debug, Deserialize)]
struct ChatMessage {
    content: String,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

/// Chat-completions client.
pub struct HttpChatBackend {
    client: reqwest::blocking::Client,
    url: String,
    model: String,
    api_key: String,
}

impl HttpChatBackend {
    pub fn new(base_url: &str, model: &str, api_key_env: &str) -> Result<Self, BackendError> {
        Ok(Self {
            client: build_client()?,
            url: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            model: model.to_string(),
            api_key: resolve_api_key(api_key_env)?,
        })
    }
}

impl ChatBackend for HttpChatBackend {
    fn chat(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let body = serde_json::json!({
            "model": self.model,
            "temperature": request.temperature,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.user_prompt},
            ],
        });
        let value = post_json(&self.client, &self.url, &self.api_key, &body)?;
        let parsed: ChatResponse = serde_json::from_value(value)
            .map_err(|e| BackendError::Protocol(format!("chat response shape: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| BackendError::Protocol("chat response has no choices".into()))
    }
}

#[derive(Debug, Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f32>,
    index: usize,
}

#[derive(Debug, Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

/// Embeddings client. The advertised dimension comes from config and is
/// enforced against every response.
pub struct HttpEmbeddingBackend {
    client: reqwest::blocking::Client,
    url: String,
    model: String,
    api_key: String,
    dim: usize,
}

impl HttpEmbeddingBackend {
    pub fn new(
        base_url: &str,
        model: &str,
        api_key_env: &str,
        dim: usize,
    ) -> Result<Self, BackendError> {
        Ok(Self {
            client: build_client()?,
            url: format!("{}/embeddings", base_url.trim_end_matches('/')),
            model: model.to_string(),
            api_key: resolve_api_key(api_key_env)?,
            dim,
        })
    }
}

impl EmbeddingBackend for HttpEmbeddingBackend {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, BackendError> {
        let body = serde_json::json!({ "model": self.model, "input": texts });
        let value = post_json(&self.client, &self.url, &self.api_key, &body)?;
        let parsed: EmbeddingResponse = serde_json::from_value(value)
            .map_err(|e| BackendError::Protocol(format!("embedding response shape: {e}")))?;
        if parsed.data.len() != texts.len() {
            return Err(BackendError::Protocol(format!(
                "embedding arity: sent {} texts, got {} vectors",
                texts.len(),
                parsed.data.len()
            )));
        }
        let mut ordered = parsed.data;
        ordered.sort_by_key(|d| d.index);
        Ok(ordered.into_iter().map(|d| d.embedding).collect())
    }
}

#[derive(Debug, Deserialize)]
struct RerankResponse {
    score: f32,
}

/// Pointwise rerank client: one request per (query, passage) pair, replying
/// `{"score": s}` with s in [0, 1].
pub struct HttpRerankBackend {
    client: reqwest::blocking::Client,
    url: String,
    model: String,
    api_key: String,
}

impl HttpRerankBackend {
    pub fn new(base_url: &str, model: &str, api_key_env: &str) -> Result<Self, BackendError> {
        Ok(Self {
            client: build_client()?,
            url: format!("{}/rerank", base_url.trim_end_matches('/')),
            model: model.to_string(),
            api_key: resolve_api_key(api_key_env)?,
        })
    }
}

impl RerankBackend for HttpRerankBackend {
    fn score(&self, instruction: &str, query: &str, passage: &str) -> Result<f32, BackendError> {
        let body = serde_json::json!({
            "model": self.model,
            "instruction": instruction,
            "query": query,
            "passage": passage,
        });
        let value = post_json(&self.client, &self.url, &self.api_key, &body)?;
        let parsed: RerankResponse = serde_json::from_value(value)
            .map_err(|e| BackendError::Protocol(format!("rerank response shape: {e}")))?;
        if !parsed.score.is_finite() || !(0.0..=1.0).contains(&parsed.score) {
            return Err(BackendError::Protocol(format!(
                "rerank score {} outside [0, 1]",
                parsed.score
            )));
        }
        Ok(parsed.score)
    }
}

/// Judge riding the chat wire: the rubric is rendered into a scoring prompt
/// and the reply is parsed as a score list.
pub struct HttpJudgeBackend {
    chat: HttpChatBackend,
}

impl HttpJudgeBackend {
    pub fn new(base_url: &str, model: &str, api_key_env: &str) -> Result<Self, BackendError> {
        Ok(Self {
            chat: HttpChatBackend::new(base_url, model, api_key_env)?,
        })
    }
}

fn render_judge_prompt(
    question: &str,
    items: &[&str],
    rubric: JudgeRubric,
    gold: Option<&str>,
) -> ChatRequest {
    let criterion = match rubric {
        JudgeRubric::Relevance => "how relevant each document is to the question",
        JudgeRubric::Contribution => {
            "how much each document contributes toward reaching the reference answer"
        }
    };
    let mut user = format!("Question: {question}\n");
    if let Some(gold) = gold {
        user.push_str(&format!("Reference answer: {gold}\n"));
    }
    user.push_str("Documents:\n");
    for (i, item) in items.iter().enumerate() {
        user.push_str(&format!("[{}] {item}\n", i + 1));
    }
    user.push_str(&format!(
        "Score {criterion} on an integer scale from 0 to 10. Reply with JSON: \
         {{\"scores\": [..]}} giving exactly {} scores in document order.",
        items.len()
    ));
    ChatRequest::new(
        SchemaTag::Judge,
        "You are a strict evaluator of retrieved clinical evidence.",
        &user,
    )
}

impl JudgeBackend for HttpJudgeBackend {
    fn judge(
        &self,
        question: &str,
        items: &[&str],
        rubric: JudgeRubric,
        gold: Option<&str>,
    ) -> Result<Vec<u8>, BackendError> {
        if items.is_empty() {
            return Ok(Vec::new());
        }
        let request = render_judge_prompt(question, items, rubric, gold);
        let raw = self.chat.chat(&request)?;
        let json = extract_json(&raw)
            .ok_or_else(|| BackendError::Protocol(format!("judge reply has no json: {raw}")))?;
        let payload: JudgePayload = serde_json::from_str(json)
            .map_err(|e| BackendError::Protocol(format!("judge reply shape: {e}")))?;
        Ok(payload.scores)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{Read, Write};
    use std::net::TcpListener;

    /// Minimal one-shot HTTP server; answers every request with `body`.
    fn serve_once(
        body: &'static str,
        status_line: &'static str,
    ) -> (String, std::thread::JoinHandle<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut buf = vec![0u8; 65536];
            let mut read_total = 0;
            // read until headers + declared body length arrive
            let request = loop {
                let n = stream.read(&mut buf[read_total..]).unwrap();
                read_total += n;
                let text = String::from_utf8_lossy(&buf[..read_total]).to_string();
                if let Some(header_end) = text.find("\r\n\r\n") {
                    let content_length = text
                        .lines()
                        .find_map(|l| {
                            l.to_ascii_lowercase()
                                .strip_prefix("content-length:")
                                .map(str::trim)
                                .map(String::from)
                        })
                        .and_then(|v| v.parse::<usize>().ok())
                        .unwrap_or(0);
                    if read_total >= header_end + 4 + content_length {
                        break text;
                    }
                }
            };
            let response = format!(
                "HTTP/1.1 {status_line}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(response.as_bytes()).unwrap();
            request
        });
        (format!("http://{addr}"), handle)
    }

    #[test]
    fn chat_round_trip_and_auth_header() {
        let (url, handle) = serve_once(
            r#"{"choices":[{"message":{"content":"{\"queries\": [\"q1\"]}"}}]}"#,
            "200 OK",
        );
        std::env::set_var("CONSILIUM_TEST_KEY", "sk-test");
        let backend = HttpChatBackend::new(&url, "test-model", "CONSILIUM_TEST_KEY").unwrap();
        let request = ChatRequest::new(SchemaTag::Queries, "sys", "user text");
        let reply = backend.chat(&request).unwrap();
        assert!(reply.contains("q1"));
        let seen = handle.join().unwrap();
        assert!(seen.contains("Bearer sk-test"));
        assert!(seen.contains("user text"));
        assert!(seen.starts_with("POST /chat/completions"));
    }

    #[test]
    fn client_error_maps_to_protocol() {
        let (url, handle) = serve_once(r#"{"error":"bad request"}"#, "400 Bad Request");
        std::env::set_var("CONSILIUM_TEST_KEY2", "sk-test");
        let backend = HttpChatBackend::new(&url, "m", "CONSILIUM_TEST_KEY2").unwrap();
        let err = backend
            .chat(&ChatRequest::new(SchemaTag::Plan, "s", "u"))
            .unwrap_err();
        assert!(matches!(err, BackendError::Protocol(_)), "got {err:?}");
        handle.join().unwrap();
    }

    #[test]
    fn server_error_maps_to_transport() {
        let (url, handle) = serve_once(r#"{"error":"oops"}"#, "500 Internal Server Error");
        std::env::set_var("CONSILIUM_TEST_KEY3", "sk-test");
        let backend = HttpChatBackend::new(&url, "m", "CONSILIUM_TEST_KEY3").unwrap();
        let err = backend
            .chat(&ChatRequest::new(SchemaTag::Plan, "s", "u"))
            .unwrap_err();
        assert!(matches!(err, BackendError::Transport(_)), "got {err:?}");
        handle.join().unwrap();
    }

    #[test]
    fn missing_key_env_is_rejected_up_front() {
        std::env::remove_var("CONSILIUM_NO_SUCH_KEY");
        let err = match HttpChatBackend::new("http://localhost:1", "m", "CONSILIUM_NO_SUCH_KEY") {
            Ok(_) => panic!("backend built without its key"),
            Err(err) => err,
        };
        assert!(matches!(err, BackendError::Protocol(_)));
    }

    #[test]
    fn embedding_response_reordered_by_index() {
        let (url, handle) = serve_once(
            r#"{"data":[{"embedding":[0.0,1.0],"index":1},{"embedding":[1.0,0.0],"index":0}]}"#,
            "200 OK",
        );
        std::env::set_var("CONSILIUM_TEST_KEY4", "sk-test");
        let backend = HttpEmbeddingBackend::new(&url, "m", "CONSILIUM_TEST_KEY4", 2).unwrap();
        let out = backend.embed(&["a", "b"]).unwrap();
        assert_eq!(out[0], vec![1.0, 0.0]);
        assert_eq!(out[1], vec![0.0, 1.0]);
        handle.join().unwrap();
    }
}
