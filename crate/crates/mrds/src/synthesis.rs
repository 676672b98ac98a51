//! Dialogue and summary synthesis around a generation backend.
//!
//! Summaries come from topic-conditioned prompts. Dialogues come either
//! from a single generation pass or from iterative synthesis: generate,
//! keep the clean prefix before the first format error, reseed with a
//! speaker token, and regenerate until the whole dialogue passes the
//! format check or the round budget runs out.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::template::{PromptTemplate, TemplateError, TemplateName};
use crate::backend::{Backend, BackendError, GenerationRequest, ScoreRequest, ScoreResult};
use crate::format::{check_dialogue, check_summary, FormatReport};

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("topic still longer than {TOPIC_WORD_LIMIT} words after {TOPIC_ATTEMPTS} attempts: `{last}`")]
    TopicTooLong { last: String },
    #[error("topic extraction returned empty text after {TOPIC_ATTEMPTS} attempts")]
    TopicEmpty,
    #[error("no candidate dialogues to filter")]
    EmptyCandidates,
    #[error("dialogue still failed the format check after {rounds} rounds")]
    BudgetExhausted {
        rounds: u32,
        best_partial: Vec<String>,
    },
}

/// Rounds and candidate counts for the synthesis loops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisBudget {
    /// Generation rounds per dialogue before giving up.
    pub max_iterations: u32,
    /// Candidate generations per summary.
    pub samples_per_summary: u32,
}

impl Default for SynthesisBudget {
    fn default() -> Self {
        Self {
            max_iterations: 10,
            samples_per_summary: 4,
        }
    }
}

/// Content alignment of a summary against a dialogue: mean per-token
/// cross-entropy of the summary under the summarization prompt.
/// Lower means the dialogue supports the summary better.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentScore {
    pub sum_logprob: f64,
    pub token_count: usize,
    pub mean_ce: f64,
}

impl AlignmentScore {
    pub fn from_score(score: &ScoreResult) -> Self {
        let sum_logprob = score.sum_logprob();
        let token_count = score.token_count();
        Self {
            sum_logprob,
            token_count,
            mean_ce: -sum_logprob / token_count as f64,
        }
    }

    pub fn better_than(&self, other: &AlignmentScore) -> bool {
        self.mean_ce < other.mean_ce
    }
}

/// One generation round of iterative synthesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdsRound {
    /// Speaker index used to seed the continuation; round one is always 1.
    pub seed_speaker: u32,
    /// Line index of the first format error, absent when the round was clean.
    pub error_line: Option<usize>,
    /// Lines kept for the next round (or the final length on success).
    pub retained_lines: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdsLog {
    pub rounds: Vec<IdsRound>,
}

impl IdsLog {
    pub fn round_count(&self) -> usize {
        self.rounds.len()
    }
}

const TOPIC_ATTEMPTS: u32 = 3;
const TOPIC_WORD_LIMIT: usize = 5;

/// Sampling knobs for synthesis generations.
#[derive(Debug, Clone)]
pub struct SamplingParams {
    pub max_tokens: u32,
    pub temperature: f64,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            max_tokens: 512,
            temperature: 1.0,
        }
    }
}

pub struct Synthesizer<'a> {
    backend: &'a dyn Backend,
    params: SamplingParams,
}

impl<'a> Synthesizer<'a> {
    pub fn new(backend: &'a dyn Backend) -> Self {
        Self {
            backend,
            params: SamplingParams::default(),
        }
    }

    pub fn with_params(backend: &'a dyn Backend, params: SamplingParams) -> Self {
        Self { backend, params }
    }

    fn request(&self, prompt: String) -> GenerationRequest {
        GenerationRequest::new(prompt).with_sampling(self.params.max_tokens, self.params.temperature)
    }

    /// Distills a summary into a topic phrase of at most five words.
    ///
    /// Overlong or empty generations are retried up to three times; the
    /// first acceptable first line wins.
    pub fn extract_topic(&self, summary: &str) -> Result<String, SynthesisError> {
        let prompt = PromptTemplate::builtin(TemplateName::TopicExtraction)
            .render(&[("summary", summary)])?;
        let mut last = String::new();
        for _ in 0..TOPIC_ATTEMPTS {
            let mut req = self.request(prompt.clone());
            req.stop = Some(vec!["\n".into()]);
            let text = self.backend.generate(&req)?;
            let topic = text.lines().next().unwrap_or("").trim().to_string();
            let words = topic.split_whitespace().count();
            if (1..=TOPIC_WORD_LIMIT).contains(&words) {
                return Ok(topic);
            }
            last = topic;
        }
        if last.is_empty() {
            Err(SynthesisError::TopicEmpty)
        } else {
            Err(SynthesisError::TopicTooLong { last })
        }
    }

    /// Generates up to `n` summaries for a topic; candidates that come back
    /// empty or fail the summary format check are dropped, not retried.
    pub fn synth_summaries(
        &self,
        topic: &str,
        word_count: usize,
        speaker_count: u32,
        n: u32,
    ) -> Result<Vec<String>, SynthesisError> {
        assert!(n >= 1, "candidate count must be at least 1");
        let prompt = PromptTemplate::builtin(TemplateName::SummarySynthesis).render(&[
            ("word count", word_count.to_string().as_str()),
            ("topic", topic),
        ])?;
        let mut kept = Vec::new();
        for _ in 0..n {
            let text = self.backend.generate(&self.request(prompt.clone()))?;
            let summary = text.trim();
            if summary.is_empty() {
                continue;
            }
            if check_summary(summary, speaker_count).ok {
                kept.push(summary.to_string());
            }
        }
        Ok(kept)
    }

    /// The dialogue-synthesis prompt for a summary, as sent to the backend.
    /// Preference pairs reuse it as the DPO prompt field.
    pub fn dialogue_prompt(
        &self,
        summary: &str,
        speaker_count: u32,
        turns: usize,
        words: usize,
    ) -> Result<String, TemplateError> {
        PromptTemplate::builtin(TemplateName::DialogueSynthesis).render(&[
            ("num of speaker", speaker_count.to_string().as_str()),
            ("num of turns", turns.to_string().as_str()),
            ("num of words in dialogue", words.to_string().as_str()),
            ("summary", summary),
        ])
    }

    /// Single-pass dialogue generation; the format report says whether the
    /// result is usable as-is.
    pub fn one_shot_dialogue(
        &self,
        summary: &str,
        speaker_count: u32,
        turns: usize,
        words: usize,
    ) -> Result<(Vec<String>, FormatReport), SynthesisError> {
        let prompt = self.dialogue_prompt(summary, speaker_count, turns, words)?;
        let text = self.backend.generate(&self.request(prompt))?;
        let lines = split_generated(&text);
        let report = check_dialogue(&lines, speaker_count);
        Ok((lines, report))
    }

    /// Iterative dialogue synthesis.
    ///
    /// Each round forces the continuation to start with a speaker token:
    /// `#1:` on the first round, a uniformly random `#k:` afterwards. A
    /// round that fails the format check keeps only the lines strictly
    /// before the first error as the next round's prefix. Panics if the
    /// summary itself fails the summary format check.
    pub fn iterative_dialogue<R: Rng + ?Sized>(
        &self,
        summary: &str,
        speaker_count: u32,
        turns: usize,
        words: usize,
        budget: &SynthesisBudget,
        rng: &mut R,
    ) -> Result<(Vec<String>, IdsLog), SynthesisError> {
        assert!(budget.max_iterations >= 1, "budget must allow one round");
        assert!(
            check_summary(summary, speaker_count).ok,
            "seed summary must pass the summary format check"
        );
        let prompt = self.dialogue_prompt(summary, speaker_count, turns, words)?;
        let mut retained: Vec<String> = Vec::new();
        let mut seed: u32 = 1;
        let mut best: Vec<String> = Vec::new();
        let mut log = IdsLog::default();
        for _ in 0..budget.max_iterations {
            let mut prefix = String::new();
            for line in &retained {
                prefix.push_str(line);
                prefix.push('\n');
            }
            prefix.push_str(&format!("#{seed}:"));
            let req = self.request(prompt.clone()).with_prefix(prefix.clone());
            let generated = self.backend.generate(&req)?;
            let full = format!("{prefix}{generated}");
            let lines = split_generated(&full);
            let report = check_dialogue(&lines, speaker_count);
            match report.first_error {
                None => {
                    log.rounds.push(IdsRound {
                        seed_speaker: seed,
                        error_line: None,
                        retained_lines: lines.len(),
                    });
                    return Ok((lines, log));
                }
                Some(violation) => {
                    retained = lines[..violation.line_index].to_vec();
                    if retained.len() > best.len() {
                        best = retained.clone();
                    }
                    log.rounds.push(IdsRound {
                        seed_speaker: seed,
                        error_line: Some(violation.line_index),
                        retained_lines: retained.len(),
                    });
                    seed = rng.random_range(1..=speaker_count);
                }
            }
        }
        Err(SynthesisError::BudgetExhausted {
            rounds: budget.max_iterations,
            best_partial: best,
        })
    }

    /// Scores how well `dialogue_lines` supports `summary`: mean per-token
    /// cross-entropy of the summary under the summarization prompt.
    pub fn alignment(
        &self,
        summary: &str,
        dialogue_lines: &[String],
    ) -> Result<AlignmentScore, SynthesisError> {
        assert!(!dialogue_lines.is_empty(), "dialogue must be non-empty");
        let document = dialogue_lines.join("\n");
        let context = PromptTemplate::builtin(TemplateName::Summarization)
            .render(&[("Dialogue", document.as_str())])?;
        let score = self.backend.score(&ScoreRequest::new(context, summary))?;
        Ok(AlignmentScore::from_score(&score))
    }

    /// Ranks candidate dialogues by alignment and keeps the best `keep`.
    ///
    /// Returns `(candidate index, score)` pairs ordered by ascending
    /// `mean_ce`; ties keep the original candidate order. Panics when
    /// `keep` exceeds the candidate count.
    pub fn filter_best(
        &self,
        summary: &str,
        candidates: &[Vec<String>],
        keep: usize,
    ) -> Result<Vec<(usize, AlignmentScore)>, SynthesisError> {
        if candidates.is_empty() {
            return Err(SynthesisError::EmptyCandidates);
        }
        assert!(
            keep <= candidates.len(),
            "keep ({keep}) exceeds candidate count ({})",
            candidates.len()
        );
        let mut scored = Vec::with_capacity(candidates.len());
        for (index, candidate) in candidates.iter().enumerate() {
            scored.push((index, self.alignment(summary, candidate)?));
        }
        scored.sort_by(|a, b| a.1.mean_ce.total_cmp(&b.1.mean_ce));
        scored.truncate(keep);
        Ok(scored)
    }
}

/// Splits generated text into dialogue lines, dropping blank framing lines
/// but keeping interior blanks so they still count as format errors.
fn split_generated(text: &str) -> Vec<String> {
    let lines: Vec<&str> = text.lines().collect();
    let start = match lines.iter().position(|l| !l.trim().is_empty()) {
        Some(s) => s,
        None => return Vec::new(),
    };
    let end = lines.iter().rposition(|l| !l.trim().is_empty()).unwrap() + 1;
    lines[start..end].iter().map(|s| s.to_string()).collect()
}
