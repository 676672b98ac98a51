//! Binary format scorer over synthetic dialogues and summaries.
//!
//! A dialogue line is well-formed when it opens with a speaker identifier
//! (`#` plus digits at position 0) that is eventually followed by a colon,
//! every `#k` token stays within the speaker count, and no bare `#` appears.
//! The scorer reports the first violating line so the iterative synthesis
//! loop can truncate right before it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("dialogues and speaker counts differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("correctness rate of an empty batch is undefined")]
    EmptyBatch,
}

/// Which formatting rule a line violated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rule {
    /// Line does not open with `#<digits>` followed (eventually) by a colon.
    SpeakerIdentity,
    /// A `#k` token references a speaker index outside `1..=speaker_count`.
    NameConsistency,
    /// A `#` appears without digits.
    BareHash,
}

/// Location of the first violation in a checked text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub line_index: usize,
    pub rule: Rule,
}

/// Outcome of the binary format scorer F: pass/fail plus first-error location.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormatReport {
    pub ok: bool,
    pub first_error: Option<Violation>,
    pub checked_lines: usize,
}

impl FormatReport {
    fn pass(checked_lines: usize) -> Self {
        Self {
            ok: true,
            first_error: None,
            checked_lines,
        }
    }

    fn fail(line_index: usize, rule: Rule, checked_lines: usize) -> Self {
        Self {
            ok: false,
            first_error: Some(Violation { line_index, rule }),
            checked_lines,
        }
    }

    /// The binary score F mapped to {1, 0}.
    pub fn score(&self) -> u8 {
        u8::from(self.ok)
    }
}

/// Check every dialogue line against the formatting rules.
///
/// An empty dialogue fails at line 0: a dialogue must have at least one turn.
pub fn check_dialogue<S: AsRef<str>>(lines: &[S], speaker_count: u32) -> FormatReport {
    debug_assert!(speaker_count >= 1);
    if lines.is_empty() {
        return FormatReport::fail(0, Rule::SpeakerIdentity, 0);
    }
    for (idx, line) in lines.iter().enumerate() {
        if let Some(rule) = check_line(line.as_ref(), speaker_count) {
            return FormatReport::fail(idx, rule, lines.len());
        }
    }
    FormatReport::pass(lines.len())
}

fn check_line(line: &str, speaker_count: u32) -> Option<Rule> {
    if !has_speaker_prefix(line) {
        return Some(Rule::SpeakerIdentity);
    }
    scan_hash_tokens(line, speaker_count)
}

/// Speaker identity: `#<digits>` at position 0, with a colon somewhere after.
fn has_speaker_prefix(line: &str) -> bool {
    let rest = match line.strip_prefix('#') {
        Some(rest) => rest,
        None => return false,
    };
    let digits = rest.chars().take_while(|c| c.is_ascii_digit()).count();
    digits > 0 && rest[digits..].contains(':')
}

/// Scan `#` tokens left to right; report the first out-of-range index or
/// bare hash. A digit run is parsed whole, so `#12` with two speakers is a
/// name-consistency error, not two tokens.
fn scan_hash_tokens(text: &str, speaker_count: u32) -> Option<Rule> {
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != b'#' {
            i += 1;
            continue;
        }
        let digits_start = i + 1;
        let mut digits_end = digits_start;
        while digits_end < bytes.len() && bytes[digits_end].is_ascii_digit() {
            digits_end += 1;
        }
        if digits_end == digits_start {
            return Some(Rule::BareHash);
        }
        let ok = text[digits_start..digits_end]
            .parse::<u32>()
            .map(|k| k >= 1 && k <= speaker_count)
            .unwrap_or(false);
        if !ok {
            return Some(Rule::NameConsistency);
        }
        i = digits_end;
    }
    None
}

/// Check a summary: it must mention at least one in-range speaker placeholder
/// and contain no out-of-range or bare `#` tokens.
pub fn check_summary(summary: &str, speaker_count: u32) -> FormatReport {
    debug_assert!(speaker_count >= 1);
    if let Some(rule) = scan_hash_tokens(summary, speaker_count) {
        return FormatReport::fail(0, rule, 1);
    }
    if !summary.contains('#') {
        return FormatReport::fail(0, Rule::NameConsistency, 1);
    }
    FormatReport::pass(1)
}

/// Fraction of dialogues in the batch that pass F.
pub fn correctness_rate<S: AsRef<str>>(
    dialogues: &[Vec<S>],
    speaker_counts: &[u32],
) -> Result<f64, FormatError> {
    if dialogues.len() != speaker_counts.len() {
        return Err(FormatError::LengthMismatch(
            dialogues.len(),
            speaker_counts.len(),
        ));
    }
    if dialogues.is_empty() {
        return Err(FormatError::EmptyBatch);
    }
    let clean = dialogues
        .iter()
        .zip(speaker_counts)
        .filter(|(d, &count)| check_dialogue(d, count).ok)
        .count();
    Ok(clean as f64 / dialogues.len() as f64)
}
