//! Scripted backend for tests and offline pipeline runs.
//!
//! Generations replay from a queue. Scores resolve in order: an exact
//! per-completion table, then a queue, then (if enabled) a deterministic
//! hash of the request, so identical requests always score identically.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, GenerationRequest, ScoreRequest, ScoreResult};

/// On-disk script consumed by `--backend-url mock:<path>`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockScript {
    /// Generation outputs, replayed front to back.
    pub responses: Vec<String>,
    /// Token logprobs keyed by the exact completion text.
    pub scores: HashMap<String, Vec<f64>>,
    /// Fallback logprob queue for completions absent from `scores`.
    pub score_queue: Vec<Vec<f64>>,
    /// Derive scores from a request hash once table and queue miss.
    pub hash_scoring: bool,
}

#[derive(Debug, Default)]
struct MockState {
    responses: Vec<String>,
    score_queue: Vec<Vec<f64>>,
    generate_log: Vec<String>,
    score_log: Vec<(String, String)>,
}

#[derive(Debug, Default)]
pub struct MockBackend {
    state: Mutex<MockState>,
    scores: HashMap<String, Vec<f64>>,
    hash_scoring: bool,
}

impl MockBackend {
    pub fn new() -> Self {
        Self::default()
    }

    /// Scores every request from the request hash; never exhausts.
    pub fn hashed() -> Self {
        Self {
            hash_scoring: true,
            ..Self::default()
        }
    }

    pub fn from_script(script: MockScript) -> Self {
        let mut responses = script.responses;
        responses.reverse();
        let mut score_queue = script.score_queue;
        score_queue.reverse();
        Self {
            state: Mutex::new(MockState {
                responses,
                score_queue,
                ..MockState::default()
            }),
            scores: script.scores,
            hash_scoring: script.hash_scoring,
        }
    }

    pub fn from_script_file(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Unreachable(format!("{}: {e}", path.display())))?;
        let script: MockScript = serde_json::from_str(&text)
            .map_err(|e| BackendError::InvalidResponse(format!("mock script: {e}")))?;
        Ok(Self::from_script(script))
    }

    pub fn push_response(&self, text: impl Into<String>) {
        let mut state = self.state.lock().unwrap();
        state.responses.insert(0, text.into());
    }

    pub fn with_responses<I, S>(self, responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        {
            let mut state = self.state.lock().unwrap();
            let mut items: Vec<String> = responses.into_iter().map(Into::into).collect();
            items.reverse();
            state.responses = items;
        }
        self
    }

    pub fn with_score(mut self, completion: impl Into<String>, logprobs: Vec<f64>) -> Self {
        self.scores.insert(completion.into(), logprobs);
        self
    }

    pub fn push_score(&self, logprobs: Vec<f64>) {
        let mut state = self.state.lock().unwrap();
        state.score_queue.insert(0, logprobs);
    }

    /// Full prompts seen by `generate`, in call order.
    pub fn generate_requests(&self) -> Vec<String> {
        self.state.lock().unwrap().generate_log.clone()
    }

    /// `(context, completion)` pairs seen by `score`, in call order.
    pub fn score_requests(&self) -> Vec<(String, String)> {
        self.state.lock().unwrap().score_log.clone()
    }

    fn hash_score(req: &ScoreRequest) -> Vec<f64> {
        let token_count = req.completion().split_whitespace().count().max(1);
        let mut h = fnv1a(req.context().as_bytes(), 0xcbf2_9ce4_8422_2325);
        h = fnv1a(&[0xff], h);
        h = fnv1a(req.completion().as_bytes(), h);
        (0..token_count)
            .map(|i| {
                let mixed = splitmix64(h.wrapping_add(i as u64));
                -0.5 - (mixed % 4000) as f64 / 1000.0
            })
            .collect()
    }
}

fn fnv1a(bytes: &[u8], mut h: u64) -> u64 {
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

impl Backend for MockBackend {
    fn generate(&self, req: &GenerationRequest) -> Result<String, BackendError> {
        let mut state = self.state.lock().unwrap();
        state.generate_log.push(req.full_prompt());
        state.responses.pop().ok_or(BackendError::ScriptExhausted)
    }

    fn score(&self, req: &ScoreRequest) -> Result<ScoreResult, BackendError> {
        let logprobs = {
            let mut state = self.state.lock().unwrap();
            state
                .score_log
                .push((req.context().to_string(), req.completion().to_string()));
            if let Some(lp) = self.scores.get(req.completion()) {
                Some(lp.clone())
            } else {
                state.score_queue.pop()
            }
        };
        match logprobs {
            Some(lp) => ScoreResult::new(lp),
            None if self.hash_scoring => ScoreResult::new(Self::hash_score(req)),
            None => Err(BackendError::ScriptExhausted),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn responses_replay_in_order_then_exhaust() {
        let mock = MockBackend::new().with_responses(["a", "b"]);
        let req = GenerationRequest::new("p");
        assert_eq!(mock.generate(&req).unwrap(), "a");
        assert_eq!(mock.generate(&req).unwrap(), "b");
        assert!(matches!(
            mock.generate(&req),
            Err(BackendError::ScriptExhausted)
        ));
    }

    #[test]
    fn keyed_scores_are_reusable_and_beat_the_queue() {
        let mock = MockBackend::new().with_score("good", vec![-0.1, -0.2]);
        mock.push_score(vec![-3.0]);
        let keyed = ScoreRequest::new("ctx", "good");
        let queued = ScoreRequest::new("ctx", "other");
        assert_eq!(mock.score(&keyed).unwrap().token_logprobs(), &[-0.1, -0.2]);
        assert_eq!(mock.score(&keyed).unwrap().token_logprobs(), &[-0.1, -0.2]);
        assert_eq!(mock.score(&queued).unwrap().token_logprobs(), &[-3.0]);
        assert!(matches!(
            mock.score(&queued),
            Err(BackendError::ScriptExhausted)
        ));
    }

    #[test]
    fn hash_scores_are_deterministic_and_request_sensitive() {
        let mock = MockBackend::hashed();
        let a = ScoreRequest::new("ctx", "one two three");
        let b = ScoreRequest::new("ctx", "one two four");
        let sa = mock.score(&a).unwrap();
        let sb = mock.score(&b).unwrap();
        assert_eq!(sa, mock.score(&a).unwrap());
        assert_eq!(sa.token_count(), 3);
        assert_ne!(sa, sb);
        assert!(sa.token_logprobs().iter().all(|&lp| (-4.5..0.0).contains(&lp)));
    }

    #[test]
    fn script_file_round_trips() {
        let script = MockScript {
            responses: vec!["x".into()],
            scores: HashMap::from([("s".to_string(), vec![-1.0])]),
            score_queue: vec![vec![-2.0]],
            hash_scoring: true,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("script.json");
        std::fs::write(&path, serde_json::to_string(&script).unwrap()).unwrap();
        let mock = MockBackend::from_script_file(&path).unwrap();
        assert_eq!(mock.generate(&GenerationRequest::new("p")).unwrap(), "x");
        let s = mock.score(&ScoreRequest::new("c", "s")).unwrap();
        assert_eq!(s.token_logprobs(), &[-1.0]);
        let q = mock.score(&ScoreRequest::new("c", "zz")).unwrap();
        assert_eq!(q.token_logprobs(), &[-2.0]);
        assert!(mock.score(&ScoreRequest::new("c", "zz")).is_ok());
    }
}
