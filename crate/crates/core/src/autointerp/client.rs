// SPDX-License-Identifier: MIT OR Apache-2.0

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde_json::{json, Value};

use crate::error::{Result, SaeError};

/// Environment variable holding the bearer token for the scoring endpoint.
pub const API_KEY_ENV: &str = "SAE_INTERP_API_KEY";
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MonoScore {
    pub feature: usize,
    /// 1 (no pattern) to 5 (clean pattern).
    pub score: u8,
    pub raw: String,
    pub model: String,
}

/// Client for a chat-completion style JSON endpoint.
#[derive(Debug, Clone)]
pub struct ScoringClient {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub api_key: Option<String>,
    pub attempts: u32,
    pub backoff: Duration,
    pub timeout: Duration,
}

impl ScoringClient {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            temperature: 0.0,
            api_key: None,
            attempts: 3,
            backoff: Duration::from_millis(500),
            timeout: Duration::from_secs(60),
        }
    }

    /// [`new`](Self::new) with the key read from [`API_KEY_ENV`].
    pub fn from_env(endpoint: impl Into<String>, model: impl Into<String>) -> Result<Self> {
        let key = std::env::var(API_KEY_ENV)
            .map_err(|_| SaeError::Config(format!("{API_KEY_ENV} is not set")))?;
        Ok(Self {
            api_key: Some(key),
            ..Self::new(endpoint, model)
        })
    }

    pub fn request_body(&self, prompt: &str) -> Value {
        json!({
            "model": self.model,
            "temperature": self.temperature,
            "messages": [{"role": "user", "content": prompt}],
        })
    }

    /// Send `prompt`, retrying transport failures, 429 and 5xx with
    /// exponential backoff.
    pub fn complete(&self, prompt: &str) -> Result<String> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let body = self.request_body(prompt);
        let attempts = self.attempts.max(1);
        let mut last = String::new();
        for attempt in 1..=attempts {
            if attempt > 1 {
                std::thread::sleep(self.backoff * 2u32.pow(attempt - 2));
            }
            let mut req = agent.post(&self.endpoint);
            if let Some(key) = &self.api_key {
                req = req.header("Authorization", &format!("Bearer {key}"));
            }
            match req.send_json(&body) {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    let text = resp.body_mut().read_to_string().unwrap_or_default();
                    if status == 200 {
                        return extract_content(&text);
                    }
                    last = format!("HTTP {status}: {text}");
                    if !(status == 429 || status >= 500) {
                        return Err(SaeError::Transport { attempts: attempt, msg: last });
                    }
                }
                Err(e) => last = e.to_string(),
            }
        }
        Err(SaeError::Transport { attempts, msg: last })
    }

    pub fn score(&self, feature: usize, prompt: &str) -> Result<MonoScore> {
        let raw = self.complete(prompt)?;
        let score = parse_score(&raw)?;
        Ok(MonoScore {
            feature,
            score,
            raw,
            model: self.model.clone(),
        })
    }
}

fn extract_content(body: &str) -> Result<String> {
    let v: Value = serde_json::from_str(body).map_err(|_| SaeError::Scoring { raw: body.to_owned() })?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_owned)
        .ok_or_else(|| SaeError::Scoring { raw: body.to_owned() })
}

/// First run of ASCII digits in `text`, which must be a score in 1..=5.
pub fn parse_score(text: &str) -> Result<u8> {
    let err = || SaeError::Scoring { raw: text.to_owned() };
    let start = text.find(|c: char| c.is_ascii_digit()).ok_or_else(err)?;
    let digits: String = text[start..].chars().take_while(char::is_ascii_digit).collect();
    match digits.parse::<u8>() {
        Ok(n @ 1..=5) => Ok(n),
        _ => Err(err()),
    }
}

/// Score `(feature, prompt)` pairs with at most `max_in_flight` requests at
/// once. Results come back in input order.
pub fn score_all(client: &ScoringClient, prompts: &[(usize, String)], max_in_flight: usize) -> Vec<Result<MonoScore>> {
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<MonoScore>>>> = prompts.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..max_in_flight.max(1).min(prompts.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some((feature, prompt)) = prompts.get(i) else {
                    break;
                };
                let r = client.score(*feature, prompt);
                *slots[i].lock().expect("slot lock") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot lock").expect("every slot filled"))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreHistogram {
    /// `counts[s - 1]` is the number of features scored `s`.
    pub counts: [u64; 5],
    pub fraction_score_1: f64,
}

pub fn score_histogram(scores: &[MonoScore]) -> ScoreHistogram {
    let mut counts = [0u64; 5];
    for s in scores {
        if (1..=5).contains(&s.score) {
            counts[usize::from(s.score) - 1] += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    ScoreHistogram {
        counts,
        fraction_score_1: if total == 0 { 0.0 } else { counts[0] as f64 / total as f64 },
    }
}
