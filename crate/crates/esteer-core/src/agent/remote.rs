//! Chat-completions client for driving the planner/decider roles with a
//! hosted model. The wire format is the ubiquitous `POST
//! {base_url}/chat/completions` JSON schema; requests retry with
//! exponential backoff and a counting semaphore caps in-flight calls.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::tools::ToolSet;
use super::{AgentBackend, AgentTask, Candidate, Plan, PlanStep, StepResult};

/// Environment variable the API token is read from (never a config field,
/// so checkpoints and manifests stay secret-free).
pub const DEFAULT_TOKEN_ENV: &str = "ESTEER_API_TOKEN";

/// Total tries per request: one initial attempt plus two retries.
pub const MAX_ATTEMPTS: u32 = 3;

fn default_token_env() -> String {
    DEFAULT_TOKEN_ENV.to_string()
}

fn default_timeout_secs() -> u64 {
    30
}

fn default_max_in_flight() -> usize {
    4
}

fn default_temperature() -> f64 {
    0.2
}

fn default_backoff_ms() -> u64 {
    200
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemoteConfig {
    /// Service root, e.g. `https://api.example.com/v1`.
    pub base_url: String,
    pub model: String,
    #[serde(default = "default_token_env")]
    pub token_env: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    /// Concurrent requests allowed across threads sharing one client.
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    /// First retry delay; doubles per retry.
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
}

impl RemoteConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        RemoteConfig {
            base_url: base_url.into(),
            model: model.into(),
            token_env: default_token_env(),
            timeout_secs: default_timeout_secs(),
            max_in_flight: default_max_in_flight(),
            temperature: default_temperature(),
            backoff_ms: default_backoff_ms(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_url.is_empty() {
            return Err(Error::InvalidConfig("remote base_url is empty".into()));
        }
        if self.model.is_empty() {
            return Err(Error::InvalidConfig("remote model is empty".into()));
        }
        if self.max_in_flight == 0 {
            return Err(Error::InvalidConfig("max_in_flight must be >= 1".into()));
        }
        if self.timeout_secs == 0 {
            return Err(Error::InvalidConfig("timeout_secs must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Message {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Message {
            role: "user".into(),
            content: content.into(),
        }
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: &'a [Message],
    temperature: f64,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: String,
}

/// Counting semaphore over std sync primitives; no async runtime needed
/// for a client this small.
struct Gate {
    permits: Mutex<usize>,
    cv: Condvar,
}

struct GatePermit<'a>(&'a Gate);

impl Gate {
    fn new(n: usize) -> Self {
        Gate {
            permits: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> GatePermit<'_> {
        let mut permits = self.permits.lock().expect("gate lock");
        while *permits == 0 {
            permits = self.cv.wait(permits).expect("gate wait");
        }
        *permits -= 1;
        GatePermit(self)
    }
}

impl Drop for GatePermit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().expect("gate lock") += 1;
        self.0.cv.notify_one();
    }
}

pub struct RemoteClient {
    cfg: RemoteConfig,
    http: reqwest::blocking::Client,
    gate: Gate,
    token: Option<String>,
}

impl RemoteClient {
    pub fn new(cfg: RemoteConfig) -> Result<Self> {
        cfg.validate()?;
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| Error::BackendFailure(format!("http client: {e}")))?;
        let token = std::env::var(&cfg.token_env).ok().filter(|t| !t.is_empty());
        let gate = Gate::new(cfg.max_in_flight);
        Ok(RemoteClient {
            cfg,
            http,
            gate,
            token,
        })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.cfg
    }

    /// One chat turn: the first choice's message content. Transport errors
    /// and HTTP failure statuses are retried up to [`MAX_ATTEMPTS`] with
    /// doubling backoff; a body that parses but carries no choice is not
    /// retried (the schema will not fix itself).
    pub fn chat(&self, messages: &[Message]) -> Result<String> {
        let _permit = self.gate.acquire();
        let url = format!("{}/chat/completions", self.cfg.base_url.trim_end_matches('/'));
        let body = ChatRequest {
            model: &self.cfg.model,
            messages,
            temperature: self.cfg.temperature,
        };
        let mut last_status: Option<u16> = None;
        for attempt in 1..=MAX_ATTEMPTS {
            if attempt > 1 {
                let wait = self.cfg.backoff_ms.saturating_mul(1 << (attempt - 2));
                std::thread::sleep(Duration::from_millis(wait));
            }
            let mut req = self.http.post(&url).json(&body);
            if let Some(token) = &self.token {
                req = req.bearer_auth(token);
            }
            let resp = match req.send() {
                Ok(r) => r,
                Err(_) if attempt < MAX_ATTEMPTS => continue,
                Err(e) if e.is_timeout() => return Err(Error::Timeout(attempt)),
                Err(e) => return Err(Error::BackendFailure(format!("transport: {e}"))),
            };
            let status = resp.status().as_u16();
            if !resp.status().is_success() {
                last_status = Some(status);
                if attempt < MAX_ATTEMPTS {
                    continue;
                }
                return Err(Error::HttpStatus(status, attempt));
            }
            let parsed: ChatResponse = resp
                .json()
                .map_err(|e| Error::MalformedResponse(format!("body: {e}")))?;
            return match parsed.choices.into_iter().next() {
                Some(choice) => Ok(choice.message.content),
                None => Err(Error::MalformedResponse("empty choices array".into())),
            };
        }
        Err(Error::HttpStatus(last_status.unwrap_or(0), MAX_ATTEMPTS))
    }
}

// ── Reply parsing ──────────────────────────────────────────────────────────

/// Parse plan steps from reply lines of the form `tool: args`. Lines that
/// name no registered tool are skipped; an unparsable reply falls back to
/// a single analyze step carrying the whole text.
pub fn parse_plan_reply(reply: &str, tools: &ToolSet) -> Vec<PlanStep> {
    let mut steps = Vec::new();
    for line in reply.lines() {
        let line = line.trim().trim_start_matches(['-', '*', ' ']);
        if let Some((tool, args)) = line.split_once(':') {
            let tool = tool.trim().to_lowercase();
            if tools.get(&tool).is_some() {
                steps.push(PlanStep {
                    tool,
                    args: args.trim().to_string(),
                });
            }
        }
    }
    if steps.is_empty() {
        steps.push(PlanStep {
            tool: "analyze".into(),
            args: reply.trim().to_string(),
        });
    }
    steps
}

/// Extract a `confidence: x` line (last one wins), clamped to [0, 1].
pub fn parse_confidence_reply(reply: &str) -> Option<f64> {
    let mut found = None;
    for line in reply.lines() {
        let line = line.trim().to_lowercase();
        if let Some(rest) = line.strip_prefix("confidence:") {
            if let Ok(v) = rest.trim().parse::<f64>() {
                if v.is_finite() {
                    found = Some(v.clamp(0.0, 1.0));
                }
            }
        }
    }
    found
}

/// Executor confidence assumed when the model's reply states none.
pub const DEFAULT_REMOTE_CONFIDENCE: f64 = 0.5;

/// Planner/decider/executor driven entirely by chat turns. Plans come
/// back as `tool: args` lines; executor replies are asked to end with a
/// `confidence: x` line.
pub struct RemoteChatBackend {
    client: RemoteClient,
    tools_help: String,
}

impl RemoteChatBackend {
    pub fn new(client: RemoteClient, tools: &ToolSet) -> Self {
        let tools_help = format!(
            "Available tools: {}. Reply with one step per line, formatted `tool: args`.",
            tools.ids().join(", ")
        );
        RemoteChatBackend { client, tools_help }
    }

    fn ask(&self, system: &str, user: String) -> Result<String> {
        self.client
            .chat(&[Message::system(system), Message::user(user)])
    }
}

impl AgentBackend for RemoteChatBackend {
    fn plan(&mut self, task: &AgentTask, version: u32) -> Result<Plan> {
        let reply = self.ask(
            "You are a planner for a small tool-using agent.",
            format!(
                "Task: {}\n{}\nThis is plan revision {version}.",
                task.prompt, self.tools_help
            ),
        )?;
        // Parse against the builtin registry, which carries every id this
        // backend advertises.
        let registry = super::tools::builtin_toolset();
        Ok(Plan {
            steps: parse_plan_reply(&reply, &registry),
            rationale: reply,
            version,
        })
    }

    fn execute(
        &mut self,
        task: &AgentTask,
        step: &PlanStep,
        step_index: usize,
        tool_output: &str,
    ) -> Result<StepResult> {
        let reply = self.ask(
            "You are an executor reviewing one tool call. End with `confidence: x` in [0, 1].",
            format!(
                "Task: {}\nStep {step_index}: {} {}\nTool output: {tool_output}",
                task.prompt, step.tool, step.args
            ),
        )?;
        Ok(StepResult {
            step_index,
            output: tool_output.to_string(),
            completed: true,
            confidence: parse_confidence_reply(&reply).unwrap_or(DEFAULT_REMOTE_CONFIDENCE),
        })
    }

    fn candidates(&mut self, task: &AgentTask, results: &[StepResult]) -> Result<Vec<Candidate>> {
        let outputs: Vec<&str> = results.iter().map(|r| r.output.as_str()).collect();
        let reply = self.ask(
            "Give the final answer on the first line, then `confidence: x` in [0, 1].",
            format!("Task: {}\nStep outputs: {:?}", task.prompt, outputs),
        )?;
        let answer = reply.lines().next().unwrap_or("").trim().to_string();
        Ok(vec![Candidate {
            answer,
            confidence: parse_confidence_reply(&reply).unwrap_or(DEFAULT_REMOTE_CONFIDENCE),
        }])
    }

    fn choose(&mut self, candidates: &[Candidate]) -> Result<usize> {
        let mut best = 0;
        for (i, c) in candidates.iter().enumerate() {
            if c.confidence > candidates[best].confidence {
                best = i;
            }
        }
        Ok(best)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::tools::builtin_toolset;
    use std::io::{Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicU32, Ordering};
    use std::sync::Arc;

    /// Read one HTTP request (headers + content-length body) and return
    /// the body.
    fn read_request(stream: &mut std::net::TcpStream) -> String {
        let mut buf = Vec::new();
        let mut chunk = [0u8; 1024];
        let header_end = loop {
            let n = stream.read(&mut chunk).expect("read request");
            buf.extend_from_slice(&chunk[..n]);
            if let Some(pos) = buf.windows(4).position(|w| w == b"\r\n\r\n") {
                break pos + 4;
            }
            assert!(n > 0, "connection closed mid-headers");
        };
        let headers = String::from_utf8_lossy(&buf[..header_end]).to_lowercase();
        let content_length: usize = headers
            .lines()
            .find_map(|l| l.strip_prefix("content-length:"))
            .map(|v| v.trim().parse().expect("content-length"))
            .unwrap_or(0);
        while buf.len() < header_end + content_length {
            let n = stream.read(&mut chunk).expect("read body");
            assert!(n > 0, "connection closed mid-body");
            buf.extend_from_slice(&chunk[..n]);
        }
        String::from_utf8_lossy(&buf[header_end..header_end + content_length]).into_owned()
    }

    fn respond(stream: &mut std::net::TcpStream, status: &str, body: &str) {
        let response = format!(
            "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
            body.len()
        );
        stream.write_all(response.as_bytes()).expect("write response");
    }

    /// Serve `n` connections with `handler`, then stop.
    fn serve(n: usize, handler: impl Fn(usize, String) -> (String, String) + Send + 'static) -> String {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind");
        let addr = listener.local_addr().expect("addr");
        std::thread::spawn(move || {
            for i in 0..n {
                let (mut stream, _) = listener.accept().expect("accept");
                let body = read_request(&mut stream);
                let (status, reply) = handler(i, body);
                respond(&mut stream, &status, &reply);
            }
        });
        format!("http://{addr}")
    }

    fn fast_cfg(base_url: String) -> RemoteConfig {
        RemoteConfig {
            backoff_ms: 1,
            timeout_secs: 5,
            ..RemoteConfig::new(base_url, "test-model")
        }
    }

    #[test]
    fn echo_server_round_trip() {
        let base = serve(1, |_, body| {
            let req: serde_json::Value = serde_json::from_str(&body).expect("request json");
            assert_eq!(req["model"], "test-model");
            let content = req["messages"]
                .as_array()
                .and_then(|m| m.last())
                .and_then(|m| m["content"].as_str())
                .expect("last user message")
                .to_string();
            let reply = serde_json::json!({
                "choices": [{"message": {"role": "assistant", "content": content}}]
            });
            ("200 OK".into(), reply.to_string())
        });
        let client = RemoteClient::new(fast_cfg(base)).unwrap();
        let out = client
            .chat(&[Message::system("s"), Message::user("ping pong")])
            .unwrap();
        assert_eq!(out, "ping pong");
    }

    #[test]
    fn http_500_three_times_reports_status_and_attempts() {
        let hits = Arc::new(AtomicU32::new(0));
        let hits_in = hits.clone();
        let base = serve(3, move |_, _| {
            hits_in.fetch_add(1, Ordering::SeqCst);
            ("500 Internal Server Error".into(), "{}".into())
        });
        let client = RemoteClient::new(fast_cfg(base)).unwrap();
        let err = client.chat(&[Message::user("x")]).unwrap_err();
        assert!(matches!(err, Error::HttpStatus(500, 3)), "{err:?}");
        assert_eq!(hits.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn empty_choices_is_malformed_not_retried() {
        let hits = Arc::new(AtomicU32::new(0));
        let hits_in = hits.clone();
        let base = serve(1, move |_, _| {
            hits_in.fetch_add(1, Ordering::SeqCst);
            ("200 OK".into(), r#"{"choices": []}"#.into())
        });
        let client = RemoteClient::new(fast_cfg(base)).unwrap();
        let err = client.chat(&[Message::user("x")]).unwrap_err();
        assert!(matches!(err, Error::MalformedResponse(_)), "{err:?}");
        assert_eq!(hits.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn recovers_after_transient_500() {
        let base = serve(2, |i, _| {
            if i == 0 {
                ("500 Internal Server Error".into(), "{}".into())
            } else {
                (
                    "200 OK".into(),
                    r#"{"choices": [{"message": {"content": "ok"}}]}"#.into(),
                )
            }
        });
        let client = RemoteClient::new(fast_cfg(base)).unwrap();
        assert_eq!(client.chat(&[Message::user("x")]).unwrap(), "ok");
    }

    #[test]
    fn plan_reply_parsing() {
        let tools = builtin_toolset();
        let steps = parse_plan_reply(
            "Here is my plan:\n- calc: (3 + 4) % 10\nsearch: sum facts\nnothing: ignored",
            &tools,
        );
        assert_eq!(steps.len(), 2);
        assert_eq!(steps[0].tool, "calc");
        assert_eq!(steps[0].args, "(3 + 4) % 10");
        assert_eq!(steps[1].tool, "search");
        // Unparsable reply: one analyze step carrying the text.
        let fallback = parse_plan_reply("no structure here", &tools);
        assert_eq!(fallback.len(), 1);
        assert_eq!(fallback[0].tool, "analyze");
        assert_eq!(fallback[0].args, "no structure here");
    }

    #[test]
    fn confidence_reply_parsing() {
        assert_eq!(parse_confidence_reply("confidence: 0.7"), Some(0.7));
        assert_eq!(
            parse_confidence_reply("The answer is 4.\nConfidence: 0.25\n"),
            Some(0.25)
        );
        assert_eq!(parse_confidence_reply("confidence: 7"), Some(1.0));
        assert_eq!(parse_confidence_reply("confidence: -1"), Some(0.0));
        assert_eq!(parse_confidence_reply("no line"), None);
        assert_eq!(parse_confidence_reply("confidence: maybe"), None);
    }

    #[test]
    fn config_validation_and_gate() {
        assert!(RemoteConfig::new("", "m").validate().is_err());
        assert!(RemoteConfig::new("http://x", "").validate().is_err());
        let mut cfg = RemoteConfig::new("http://x", "m");
        cfg.max_in_flight = 0;
        assert!(cfg.validate().is_err());
        assert_eq!(cfg.token_env, DEFAULT_TOKEN_ENV);

        // The gate really bounds concurrency.
        let gate = Arc::new(Gate::new(2));
        let peak = Arc::new(AtomicU32::new(0));
        let live = Arc::new(AtomicU32::new(0));
        let mut handles = Vec::new();
        for _ in 0..8 {
            let (gate, peak, live) = (gate.clone(), peak.clone(), live.clone());
            handles.push(std::thread::spawn(move || {
                let _p = gate.acquire();
                let now = live.fetch_add(1, Ordering::SeqCst) + 1;
                peak.fetch_max(now, Ordering::SeqCst);
                std::thread::sleep(std::time::Duration::from_millis(5));
                live.fetch_sub(1, Ordering::SeqCst);
            }));
        }
        for h in handles {
            h.join().unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }
}
