use std::fmt;
use std::time::Duration;

use serde_json::{json, Value};

use super::{GenerationRequest, Provider, ProviderError};

/// Chat-completion style JSON endpoint (`POST {base_url}/chat/completions`).
///
/// The bearer token is read from an environment variable at construction and
/// only ever sent in the `Authorization` header.
pub struct HttpChatProvider {
    name: String,
    endpoint: String,
    token: Option<String>,
    agent: ureq::Agent,
}

impl fmt::Debug for HttpChatProvider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpChatProvider")
            .field("name", &self.name)
            .field("endpoint", &self.endpoint)
            .field("token", &self.token.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl HttpChatProvider {
    pub fn new(
        name: impl Into<String>,
        base_url: &str,
        token_env: Option<&str>,
        timeout: Duration,
    ) -> Result<Self, ProviderError> {
        let token = match token_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                ProviderError::Fatal(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        Ok(Self {
            name: name.into(),
            endpoint: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            token,
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        })
    }

    pub fn request_body(request: &GenerationRequest<'_>) -> Value {
        json!({
            "model": request.model,
            "messages": [{"role": "user", "content": request.job.prompt_text}],
            "temperature": request.temperature,
        })
    }
}

fn completion_text(body: &Value) -> Option<String> {
    let choice = body.get("choices")?.get(0)?;
    choice
        .pointer("/message/content")
        .or_else(|| choice.get("text"))
        .and_then(Value::as_str)
        .map(str::to_string)
}

impl Provider for HttpChatProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn is_remote(&self) -> bool {
        true
    }

    fn generate(&self, request: &GenerationRequest<'_>) -> Result<String, ProviderError> {
        let mut call = self.agent.post(&self.endpoint);
        if let Some(token) = &self.token {
            call = call.set("Authorization", &format!("Bearer {token}"));
        }
        match call.send_json(Self::request_body(request)) {
            Ok(resp) => {
                let body: Value = resp.into_json().map_err(|e| {
                    ProviderError::Transient(format!("unreadable response body: {e}"))
                })?;
                completion_text(&body).ok_or_else(|| {
                    ProviderError::Fatal(format!("no completion text in response: {body}"))
                })
            }
            Err(ureq::Error::Status(code, resp)) => {
                let detail = resp.into_string().unwrap_or_default();
                let detail: String = detail.chars().take(200).collect();
                if code == 429 || code == 408 || code >= 500 {
                    Err(ProviderError::Transient(format!("HTTP {code}: {detail}")))
                } else {
                    Err(ProviderError::Fatal(format!("HTTP {code}: {detail}")))
                }
            }
            Err(ureq::Error::Transport(t)) => Err(ProviderError::Transient(t.to_string())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::{PromptJob, PromptStyle};
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    /// Serves each canned (status, body) once and returns the raw requests it saw.
    fn serve(replies: Vec<(u16, &'static str)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let mut seen = Vec::new();
            for (status, body) in replies {
                let (mut stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut head = String::new();
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    head.push_str(&line);
                    if line == "\r\n" {
                        break;
                    }
                }
                let mut payload = vec![0u8; len];
                reader.read_exact(&mut payload).unwrap();
                seen.push(format!("{head}{}", String::from_utf8(payload).unwrap()));
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
            seen
        });
        (url, handle)
    }

    fn job() -> PromptJob {
        PromptJob {
            prompt_text: "Decide sentiment: Apple beats".into(),
            headline_ids: vec!["h".into()],
            style: PromptStyle::Single,
        }
    }

    #[test]
    fn posts_chat_completion_and_reads_content() {
        let (url, server) = serve(vec![(
            200,
            r#"{"choices":[{"message":{"role":"assistant","content":"POSITIVE (0.8)"}}]}"#,
        )]);
        std::env::set_var("LLMVOL_TEST_TOKEN", "sekret");
        let p = HttpChatProvider::new(
            "openai",
            &url,
            Some("LLMVOL_TEST_TOKEN"),
            Duration::from_secs(5),
        )
        .unwrap();
        let j = job();
        let r = GenerationRequest {
            job: &j,
            prompt_hash: "h",
            temperature: 0.25,
            run_index: 0,
            model: "gpt-3.5-turbo",
        };
        assert_eq!(p.generate(&r).unwrap(), "POSITIVE (0.8)");
        let seen = server.join().unwrap();
        assert!(seen[0].starts_with("POST /chat/completions"));
        assert!(seen[0].contains("Bearer sekret"));
        let body: Value = serde_json::from_str(seen[0].split("\r\n\r\n").nth(1).unwrap()).unwrap();
        assert_eq!(body["model"], "gpt-3.5-turbo");
        assert_eq!(body["temperature"], 0.25);
        assert_eq!(
            body["messages"][0]["content"],
            "Decide sentiment: Apple beats"
        );
        assert!(!format!("{p:?}").contains("sekret"));
    }

    #[test]
    fn classifies_status_codes() {
        let (url, server) = serve(vec![(503, "busy"), (429, "slow down"), (400, "bad")]);
        let p = HttpChatProvider::new("x", &url, None, Duration::from_secs(5)).unwrap();
        let j = job();
        let r = GenerationRequest {
            job: &j,
            prompt_hash: "h",
            temperature: 0.0,
            run_index: 0,
            model: "m",
        };
        assert!(p.generate(&r).unwrap_err().is_retryable());
        assert!(p.generate(&r).unwrap_err().is_retryable());
        assert!(!p.generate(&r).unwrap_err().is_retryable());
        server.join().unwrap();
    }

    #[test]
    fn missing_token_env_is_fatal() {
        let err = HttpChatProvider::new(
            "x",
            "http://localhost",
            Some("LLMVOL_SURELY_UNSET_VAR"),
            Duration::from_secs(1),
        )
        .unwrap_err();
        assert!(matches!(err, ProviderError::Fatal(_)));
    }
}
