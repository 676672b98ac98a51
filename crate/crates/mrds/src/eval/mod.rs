//! Summarization evaluation: ROUGE-1/2/L scoring, corpus aggregation, and
//! end-to-end summarize-then-score runs against a backend.
//!
//! Tokenization is lowercase with splits on non-alphanumeric runs; no
//! stemming and no stopword removal, so absolute scores are comparable
//! only within this toolkit. Significance testing lives in [`stats`].

pub mod stats;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::template::{PromptTemplate, TemplateError, TemplateName};
use crate::backend::{Backend, GenerationRequest};
use crate::corpus::{recover, CorpusError, PairedSample, RawDialogue};
use crate::par::parallel_map;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("reference summary has no tokens")]
    EmptyReference,
    #[error("no scored samples to aggregate")]
    EmptyCorpus,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricTriple {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RougeScore {
    pub r1: MetricTriple,
    pub r2: MetricTriple,
    pub rl: MetricTriple,
}

/// Lowercase tokens split on runs of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(|s| s.to_lowercase())
        .collect()
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

fn triple(matches: usize, candidate_total: usize, reference_total: usize) -> MetricTriple {
    let precision = if candidate_total == 0 {
        0.0
    } else {
        matches as f64 / candidate_total as f64
    };
    let recall = if reference_total == 0 {
        0.0
    } else {
        matches as f64 / reference_total as f64
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    MetricTriple {
        precision,
        recall,
        f1,
    }
}

fn ngram_overlap(candidate: &[String], reference: &[String], n: usize) -> MetricTriple {
    let candidate_counts = ngram_counts(candidate, n);
    let reference_counts = ngram_counts(reference, n);
    let matches: usize = candidate_counts
        .iter()
        .map(|(gram, count)| (*count).min(reference_counts.get(gram).copied().unwrap_or(0)))
        .sum();
    triple(
        matches,
        candidate.len().saturating_sub(n - 1),
        reference.len().saturating_sub(n - 1),
    )
}

fn lcs_length(a: &[String], b: &[String]) -> usize {
    let mut previous = vec![0usize; b.len() + 1];
    let mut current = vec![0usize; b.len() + 1];
    for token_a in a {
        for (j, token_b) in b.iter().enumerate() {
            current[j + 1] = if token_a == token_b {
                previous[j] + 1
            } else {
                previous[j + 1].max(current[j])
            };
        }
        std::mem::swap(&mut previous, &mut current);
    }
    previous[b.len()]
}

/// ROUGE-1/2/L of `candidate` against `reference`.
///
/// N-gram matches use clipped counts; ROUGE-L uses token-level LCS.
/// The reference must tokenize to at least one token.
pub fn rouge(candidate: &str, reference: &str) -> Result<RougeScore, EvalError> {
    let candidate_tokens = tokenize(candidate);
    let reference_tokens = tokenize(reference);
    if reference_tokens.is_empty() {
        return Err(EvalError::EmptyReference);
    }
    let lcs = lcs_length(&candidate_tokens, &reference_tokens);
    Ok(RougeScore {
        r1: ngram_overlap(&candidate_tokens, &reference_tokens, 1),
        r2: ngram_overlap(&candidate_tokens, &reference_tokens, 2),
        rl: triple(lcs, candidate_tokens.len(), reference_tokens.len()),
    })
}

/// Arithmetic mean of every field across the scores.
pub fn corpus_mean(scores: &[RougeScore]) -> Result<RougeScore, EvalError> {
    if scores.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let n = scores.len() as f64;
    let mean =
        |field: fn(&RougeScore) -> MetricTriple| -> MetricTriple {
            let mut out = MetricTriple::default();
            for score in scores {
                let t = field(score);
                out.precision += t.precision;
                out.recall += t.recall;
                out.f1 += t.f1;
            }
            out.precision /= n;
            out.recall /= n;
            out.f1 /= n;
            out
        };
    Ok(RougeScore {
        r1: mean(|s| s.r1),
        r2: mean(|s| s.r2),
        rl: mean(|s| s.rl),
    })
}

/// How the summarization prompt is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SummarizeMode {
    /// Bare instruction, recovered names.
    ZeroShot,
    /// `k` worked examples from a fixture pool, recovered names.
    Icl { k: usize },
    /// The adapter's training prompt over anonymized speaker tokens; the
    /// generation is name-recovered before scoring.
    AdapterPrompt,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub index: usize,
    pub rouge: RougeScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedSample {
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub corpus: RougeScore,
    pub per_sample: Vec<SampleScore>,
    pub skipped: Vec<SkippedSample>,
    /// Reserved metric slot, filled only when an external scorer supplies it.
    pub bert_score: Option<f64>,
}

fn dialogue_text(dialogue: &RawDialogue) -> String {
    dialogue
        .turns
        .iter()
        .map(|t| format!("{}: {}", t.speaker, t.text))
        .collect::<Vec<_>>()
        .join("\n")
}

enum Outcome {
    Scored(RougeScore),
    Skip(String),
}

/// Summarizes every target with the backend and scores against recovered
/// references.
///
/// Per-sample backend failures, empty generations, and unrecoverable
/// generations skip the sample and are reported; a corpus where nothing
/// scored is an error. `icl_pool` supplies the worked examples for
/// [`SummarizeMode::Icl`] (at most `k` are used) and is ignored otherwise.
pub fn summarize_and_score(
    backend: &dyn Backend,
    targets: &[PairedSample],
    mode: SummarizeMode,
    icl_pool: &[PairedSample],
    workers: usize,
) -> Result<EvalReport, EvalError> {
    let icl_examples: Vec<(String, String)> = match mode {
        SummarizeMode::Icl { k } => icl_pool
            .iter()
            .take(k)
            .map(|sample| {
                let (dialogue, summary) = recover(&sample.dialogue, &sample.summary, &sample.names)?;
                Ok((dialogue_text(&dialogue), summary))
            })
            .collect::<Result<_, CorpusError>>()?,
        _ => Vec::new(),
    };
    let outcomes: Vec<Result<(Outcome, String), EvalError>> =
        parallel_map(targets, workers, |_, sample| {
            score_one(backend, sample, mode, &icl_examples)
        });
    let mut per_sample = Vec::new();
    let mut skipped = Vec::new();
    let mut scores = Vec::new();
    for (index, outcome) in outcomes.into_iter().enumerate() {
        match outcome? {
            (Outcome::Scored(rouge), _) => {
                scores.push(rouge);
                per_sample.push(SampleScore { index, rouge });
            }
            (Outcome::Skip(reason), _) => skipped.push(SkippedSample { index, reason }),
        }
    }
    let corpus = corpus_mean(&scores)?;
    Ok(EvalReport {
        corpus,
        per_sample,
        skipped,
        bert_score: None,
    })
}

fn score_one(
    backend: &dyn Backend,
    sample: &PairedSample,
    mode: SummarizeMode,
    icl_examples: &[(String, String)],
) -> Result<(Outcome, String), EvalError> {
    let (recovered_dialogue, reference) =
        recover(&sample.dialogue, &sample.summary, &sample.names)?;
    let prompt = match mode {
        SummarizeMode::ZeroShot => PromptTemplate::builtin(TemplateName::SummarizationZeroShot)
            .render(&[("Dialogue", dialogue_text(&recovered_dialogue).as_str())])?,
        SummarizeMode::Icl { .. } => {
            let mut bindings: Vec<(String, String)> = Vec::new();
            for (i, (dialogue, summary)) in icl_examples.iter().enumerate() {
                bindings.push((format!("dialogue {}", i + 1), dialogue.clone()));
                bindings.push((format!("summary {}", i + 1), summary.clone()));
            }
            bindings.push(("dialogue".into(), dialogue_text(&recovered_dialogue)));
            let borrowed: Vec<(&str, &str)> = bindings
                .iter()
                .map(|(k, v)| (k.as_str(), v.as_str()))
                .collect();
            PromptTemplate::icl(icl_examples.len()).render(&borrowed)?
        }
        SummarizeMode::AdapterPrompt => {
            let document = sample.dialogue.to_lines().join("\n");
            PromptTemplate::builtin(TemplateName::Summarization)
                .render(&[("Dialogue", document.as_str())])?
        }
    };
    let request = GenerationRequest::new(prompt).with_sampling(256, 0.0);
    let generated = match backend.generate(&request) {
        Ok(text) => text,
        Err(e) => return Ok((Outcome::Skip(format!("backend: {e}")), reference)),
    };
    let candidate = match generated.lines().map(str::trim).find(|l| !l.is_empty()) {
        Some(line) => line.to_string(),
        None => return Ok((Outcome::Skip("empty generation".into()), reference)),
    };
    let candidate = match mode {
        SummarizeMode::AdapterPrompt => {
            match recover(&sample.dialogue, &candidate, &sample.names) {
                Ok((_, recovered)) => recovered,
                Err(e) => return Ok((Outcome::Skip(format!("recovery: {e}")), reference)),
            }
        }
        _ => candidate,
    };
    match rouge(&candidate, &reference) {
        Ok(score) => Ok((Outcome::Scored(score), reference)),
        Err(EvalError::EmptyReference) => {
            Ok((Outcome::Skip("reference has no tokens".into()), reference))
        }
        Err(e) => Err(e),
    }
}
