//! Language-model oracles: a scripted stub for tests and an HTTP client for a
//! chat-completions style endpoint.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use log::{debug, warn};
use serde::Deserialize;
use serde_json::{json, Value};

use super::llm::{parse_answer, ChatTurn, LlmPrompt, LlmQuery, LlmVerdict, Role, DISTRIBUTION_TOLERANCE};
use crate::error::{Error, Result};
use crate::io::{at, read_jsonl};
use crate::model::SegmentId;

#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    #[error("no scripted verdict for segment {0}")]
    NoScript(SegmentId),
    #[error("oracle transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: usize, message: String },
    #[error("oracle returned an unusable response: {0}")]
    BadResponse(String),
}

/// Must be safe to call from several threads at once.
pub trait Oracle: Send + Sync {
    fn complete(&self, query: &LlmQuery, prompt: &LlmPrompt) -> Result<LlmVerdict, OracleError>;

    /// Completed calls, successful or not.
    fn calls(&self) -> usize;
}

#[derive(Debug, Clone)]
enum Script {
    Distribution(BTreeMap<usize, f64>),
    Response(String),
}

/// Replays fixed verdicts keyed by target segment.
#[derive(Debug, Default)]
pub struct ScriptedOracle {
    scripts: HashMap<SegmentId, Script>,
    calls: AtomicUsize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StubRow {
    segment_id: SegmentId,
    #[serde(default)]
    distribution: Option<BTreeMap<String, f64>>,
    #[serde(default)]
    response: Option<String>,
}

impl ScriptedOracle {
    pub fn from_distributions(rows: impl IntoIterator<Item = (SegmentId, BTreeMap<usize, f64>)>) -> Self {
        Self {
            scripts: rows.into_iter().map(|(k, d)| (k, Script::Distribution(d))).collect(),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn from_responses(rows: impl IntoIterator<Item = (SegmentId, String)>) -> Self {
        Self {
            scripts: rows.into_iter().map(|(k, r)| (k, Script::Response(r))).collect(),
            calls: AtomicUsize::new(0),
        }
    }

    /// Reads `stub.jsonl`: one of `distribution` (index → probability) or
    /// `response` (raw text) per row.
    pub fn load(path: &Path) -> Result<Self> {
        let rows: Vec<(usize, StubRow)> = read_jsonl(path)?;
        let mut scripts = HashMap::new();
        for (line, row) in rows {
            let bad = |m: String| Error::validation(at(path, line), m);
            let script = match (row.distribution, row.response) {
                (Some(d), None) => {
                    let mut dist = BTreeMap::new();
                    for (k, p) in d {
                        let i: usize = k.parse().map_err(|_| bad(format!("index {k:?} is not an integer")))?;
                        if !p.is_finite() || p < 0.0 {
                            return Err(bad(format!("probability {p} for index {i} is invalid")));
                        }
                        dist.insert(i, p);
                    }
                    let mass: f64 = dist.values().sum();
                    if (mass - 1.0).abs() > DISTRIBUTION_TOLERANCE {
                        return Err(bad(format!("probabilities sum to {mass}")));
                    }
                    Script::Distribution(dist)
                }
                (None, Some(r)) => Script::Response(r),
                _ => return Err(bad("row needs exactly one of distribution or response".into())),
            };
            if scripts.insert(row.segment_id.clone(), script).is_some() {
                return Err(bad(format!("duplicate segment {}", row.segment_id)));
            }
        }
        Ok(Self { scripts, calls: AtomicUsize::new(0) })
    }
}

impl Oracle for ScriptedOracle {
    fn complete(&self, query: &LlmQuery, _prompt: &LlmPrompt) -> Result<LlmVerdict, OracleError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        match self.scripts.get(&query.target_segment_id) {
            Some(Script::Distribution(d)) => Ok(LlmVerdict::from_distribution(d.clone(), "")),
            Some(Script::Response(r)) => Ok(LlmVerdict::from_text(r.clone())),
            None => Err(OracleError::NoScript(query.target_segment_id.clone())),
        }
    }

    fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Slots {
    fn new(n: usize) -> Self {
        Self { free: Mutex::new(n.max(1)), cv: Condvar::new() }
    }

    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|p| p.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|p| p.into_inner());
        }
        *free -= 1;
        SlotGuard(self)
    }
}

struct SlotGuard<'a>(&'a Slots);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|p| p.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Debug, Clone)]
pub struct HttpOracleConfig {
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub max_attempts: usize,
    /// Delay before the second attempt; doubles after each failure.
    pub backoff: Duration,
    pub max_in_flight: usize,
    pub top_logprobs: u32,
}

impl HttpOracleConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: "default".into(),
            api_key: None,
            timeout: Duration::from_secs(120),
            max_attempts: 3,
            backoff: Duration::from_millis(500),
            max_in_flight: 4,
            top_logprobs: 20,
        }
    }
}

/// Client for an OpenAI-compatible `/chat/completions` endpoint.
#[derive(Debug)]
pub struct HttpOracle {
    config: HttpOracleConfig,
    client: reqwest::blocking::Client,
    slots: Slots,
    calls: AtomicUsize,
}

impl HttpOracle {
    pub fn new(config: HttpOracleConfig) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| Error::InvalidInput(format!("cannot build HTTP client: {e}")))?;
        Ok(Self { slots: Slots::new(config.max_in_flight), client, config, calls: AtomicUsize::new(0) })
    }

    fn post(&self, body: &Value) -> Result<Value, OracleError> {
        let mut delay = self.config.backoff;
        let mut last = String::new();
        let attempts = self.config.max_attempts.max(1);
        for attempt in 1..=attempts {
            if attempt > 1 {
                std::thread::sleep(delay);
                delay *= 2;
            }
            let outcome = {
                let _slot = self.slots.acquire();
                let mut req = self.client.post(&self.config.endpoint).json(body);
                if let Some(key) = &self.config.api_key {
                    req = req.bearer_auth(key);
                }
                req.send()
            };
            match outcome {
                Ok(resp) if resp.status().is_success() => {
                    return resp.json::<Value>().map_err(|e| OracleError::BadResponse(e.to_string()));
                }
                Ok(resp) => {
                    let status = resp.status();
                    last = format!("HTTP {status}");
                    if status.is_client_error() && status.as_u16() != 429 {
                        return Err(OracleError::Transport { attempts: attempt, message: last });
                    }
                }
                Err(e) => last = e.to_string(),
            }
            debug!("oracle attempt {attempt}/{attempts} failed: {last}");
        }
        Err(OracleError::Transport { attempts, message: last })
    }

    fn messages(turns: &[ChatTurn]) -> Value {
        Value::Array(turns.iter().map(|t| json!({"role": t.role, "content": t.content})).collect())
    }
}

impl Oracle for HttpOracle {
    fn complete(&self, query: &LlmQuery, prompt: &LlmPrompt) -> Result<LlmVerdict, OracleError> {
        let result = (|| {
            let summary_body = json!({
                "model": self.config.model,
                "messages": Self::messages(&prompt.summary_turns()),
                "temperature": 0,
            });
            let summary = message_content(&self.post(&summary_body)?)
                .ok_or_else(|| OracleError::BadResponse("summary response has no content".into()))?;

            // The trailing `ANSWER:` prefill is not sent; chat endpoints answer
            // in a fresh assistant turn and the parser accepts both forms.
            let mut turns = prompt.identification_turns(&summary);
            if turns.last().is_some_and(|t| t.role == Role::Assistant) {
                turns.pop();
            }
            let answer_body = json!({
                "model": self.config.model,
                "messages": Self::messages(&turns),
                "temperature": 0,
                "max_tokens": 8,
                "logprobs": true,
                "top_logprobs": self.config.top_logprobs,
            });
            parse_chat_response(&self.post(&answer_body)?, query.index_count())
        })();
        self.calls.fetch_add(1, Ordering::SeqCst);
        if let Err(e) = &result {
            warn!("oracle query for {} failed: {e}", query.target_segment_id);
        }
        result
    }

    fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

fn message_content(v: &Value) -> Option<String> {
    v.pointer("/choices/0/message/content").and_then(Value::as_str).map(str::to_owned)
}

fn index_token(token: &str, k: usize) -> Option<usize> {
    token.trim().parse::<usize>().ok().filter(|i| (1..=k).contains(i))
}

/// Extracts a verdict from a chat-completions response. With log-probabilities,
/// the first content token that is an index is softmaxed over the valid index
/// alternatives; otherwise the text is parsed as `ANSWER: <int>`.
pub fn parse_chat_response(v: &Value, k: usize) -> Result<LlmVerdict, OracleError> {
    let text = message_content(v).unwrap_or_default();
    let tokens = v.pointer("/choices/0/logprobs/content").and_then(Value::as_array);
    if let Some(tokens) = tokens {
        let position = tokens
            .iter()
            .find(|t| t.get("token").and_then(Value::as_str).is_some_and(|s| s.trim().parse::<usize>().is_ok()));
        if let Some(position) = position {
            let mut logits: BTreeMap<usize, f64> = BTreeMap::new();
            let mut consider = |tok: Option<&str>, lp: Option<f64>| {
                if let (Some(i), Some(lp)) = (tok.and_then(|s| index_token(s, k)), lp) {
                    let e = logits.entry(i).or_insert(lp);
                    *e = e.max(lp);
                }
            };
            consider(position.get("token").and_then(Value::as_str), position.get("logprob").and_then(Value::as_f64));
            for alt in position.get("top_logprobs").and_then(Value::as_array).into_iter().flatten() {
                consider(alt.get("token").and_then(Value::as_str), alt.get("logprob").and_then(Value::as_f64));
            }
            if !logits.is_empty() {
                let max = logits.values().copied().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = logits.values().map(|l| (l - max).exp()).sum();
                let dist = logits.into_iter().map(|(i, l)| (i, (l - max).exp() / z)).collect();
                return Ok(LlmVerdict::from_distribution(dist, text));
            }
        }
    }
    if v.pointer("/choices/0").is_none() {
        return Err(OracleError::BadResponse("response has no choices".into()));
    }
    Ok(LlmVerdict { distribution: None, parsed_index: parse_answer(&text), raw_response: text })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assign::llm::build_llm_prompt;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::Arc;

    fn query() -> LlmQuery {
        use crate::assign::llm::DialogueLine;
        LlmQuery {
            target_segment_id: "t".into(),
            dialogue: vec![
                DialogueLine { speaker: Some("Roz".into()), text: "Hi.".into(), is_target: false },
                DialogueLine { speaker: None, text: "Hello.".into(), is_target: true },
            ],
            speakers: vec!["Roz".into()],
        }
    }

    #[test]
    fn logprob_softmax() {
        let v = json!({"choices":[{"message":{"content":"1"},"logprobs":{"content":[
            {"token":" ","logprob":-0.1,"top_logprobs":[]},
            {"token":"1","logprob":-0.2,"top_logprobs":[
                {"token":"1","logprob":-0.2},{"token":"2","logprob":-1.9},{"token":"7","logprob":-0.5},{"token":"x","logprob":-3.0}
            ]}
        ]}}]});
        let verdict = parse_chat_response(&v, 2).unwrap();
        let d = verdict.distribution.unwrap();
        let (a, b) = ((-0.2f64).exp(), (-1.9f64).exp());
        assert!((d[&1] - a / (a + b)).abs() < 1e-12);
        assert!((d[&2] - b / (a + b)).abs() < 1e-12);
        assert_eq!(d.len(), 2);
    }

    #[test]
    fn text_fallback() {
        let v = json!({"choices":[{"message":{"content":"ANSWER: 2"}}]});
        assert_eq!(parse_chat_response(&v, 2).unwrap().parsed_index, Some(2));
        assert!(parse_chat_response(&json!({}), 2).is_err());
    }

    #[test]
    fn stub_loading_validates_mass() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("stub.jsonl");
        std::fs::write(&p, "{\"segment_id\":\"t\",\"distribution\":{\"1\":0.5,\"2\":0.4}}\n").unwrap();
        assert!(ScriptedOracle::load(&p).is_err());
        std::fs::write(&p, "{\"segment_id\":\"t\",\"distribution\":{\"1\":0.5,\"2\":0.5}}\n").unwrap();
        let o = ScriptedOracle::load(&p).unwrap();
        let q = query();
        let v = o.complete(&q, &build_llm_prompt(&q)).unwrap();
        assert_eq!(v.distribution.unwrap()[&2], 0.5);
        assert_eq!(o.calls(), 1);
    }

    /// Serves `responses` in order, one HTTP exchange per connection.
    fn mock_server(responses: Vec<(u16, String)>) -> (String, Arc<AtomicUsize>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let hits = Arc::new(AtomicUsize::new(0));
        let counter = hits.clone();
        std::thread::spawn(move || {
            for (status, body) in responses {
                let Ok((mut stream, _)) = listener.accept() else { return };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                counter.fetch_add(1, Ordering::SeqCst);
                let resp = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(resp.as_bytes()).unwrap();
            }
        });
        (format!("http://{addr}/v1/chat/completions"), hits)
    }

    fn fast(endpoint: String) -> HttpOracle {
        let mut c = HttpOracleConfig::new(endpoint);
        c.backoff = Duration::from_millis(5);
        c.timeout = Duration::from_secs(5);
        HttpOracle::new(c).unwrap()
    }

    #[test]
    fn http_two_phase_with_retry() {
        let summary = json!({"choices":[{"message":{"content":"They greet."}}]}).to_string();
        let answer = json!({"choices":[{"message":{"content":"ANSWER: 1"}}]}).to_string();
        let (url, hits) = mock_server(vec![(503, "{}".into()), (200, summary), (200, answer)]);
        let oracle = fast(url);
        let q = query();
        let v = oracle.complete(&q, &build_llm_prompt(&q)).unwrap();
        assert_eq!(v.parsed_index, Some(1));
        assert_eq!(hits.load(Ordering::SeqCst), 3);
        assert_eq!(oracle.calls(), 1);
    }

    #[test]
    fn http_gives_up_after_three_attempts() {
        let (url, hits) = mock_server(vec![(500, "{}".into()), (500, "{}".into()), (500, "{}".into()), (500, "{}".into())]);
        let oracle = fast(url);
        let q = query();
        let err = oracle.complete(&q, &build_llm_prompt(&q)).unwrap_err();
        assert!(matches!(err, OracleError::Transport { attempts: 3, .. }), "{err}");
        assert_eq!(hits.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn slots_bound_concurrency() {
        let slots = Arc::new(Slots::new(2));
        let active = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let (slots, active, peak) = (slots.clone(), active.clone(), peak.clone());
                std::thread::spawn(move || {
                    let _g = slots.acquire();
                    let now = active.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(10));
                    active.fetch_sub(1, Ordering::SeqCst);
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }
}
