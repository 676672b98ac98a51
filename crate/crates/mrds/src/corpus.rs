//! Dialogue-summary corpus handling: parsing raw transcripts, speaker
//! anonymization and recovery, and JSONL persistence.
//!
//! Speaker names are replaced by indexed placeholders `#1`, `#2`, ... in
//! first-appearance order. Matching is whole-word, case-sensitive, and
//! longest-name-first, so `Anna` is never mangled by a shorter `Ann`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Name pool used when recovering placeholders without original metadata.
pub const NAME_POOL: &str = include_str!("../assets/names.txt");

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("input text is empty")]
    EmptyInput,
    #[error("no parsable speaker turns in input")]
    NoParsableTurns,
    #[error("placeholder #{0} exceeds speaker count")]
    PlaceholderOutOfRange(u32),
    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("name pool has {available} names, {requested} requested")]
    NamePoolExhausted { available: usize, requested: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One speaker turn of a raw (named) dialogue.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Turn {
    pub speaker: String,
    pub text: String,
}

/// A parsed dialogue with real speaker names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawDialogue {
    pub turns: Vec<Turn>,
    pub source_id: String,
}

/// Ordered distinct speaker names; index i (1-based) maps to placeholder `#i`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SpeakerMetadata {
    names: Vec<String>,
}

impl SpeakerMetadata {
    pub fn new(names: Vec<String>) -> Self {
        debug_assert!(!names.is_empty());
        Self { names }
    }

    pub fn count(&self) -> u32 {
        self.names.len() as u32
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Name for a 1-based placeholder index.
    pub fn name(&self, index: u32) -> Option<&str> {
        if index == 0 {
            return None;
        }
        self.names.get(index as usize - 1).map(String::as_str)
    }
}

/// One anonymized turn: 1-based speaker index plus utterance text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnonTurn {
    pub speaker: u32,
    pub text: String,
}

/// A dialogue with speakers replaced by placeholder indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct AnonDialogue {
    pub turns: Vec<AnonTurn>,
}

impl AnonDialogue {
    /// Render as `#k: utterance` lines, the form the format checker consumes.
    pub fn to_lines(&self) -> Vec<String> {
        self.turns
            .iter()
            .map(|t| format!("#{}: {}", t.speaker, t.text))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Real,
    Synthetic,
}

/// One dialogue-summary pair with speaker metadata and provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairedSample {
    pub dialogue: AnonDialogue,
    pub summary: String,
    pub names: SpeakerMetadata,
    pub provenance: Provenance,
    pub topic: Option<String>,
}

/// Parse multi-line transcript text into speaker turns.
///
/// A line of the form `<name>: <utterance>` starts a new turn; lines without
/// a usable name prefix are appended to the preceding turn as continuation
/// text. Leading unattached lines are dropped.
pub fn parse_dialogue(text: &str, source_id: &str) -> Result<RawDialogue, CorpusError> {
    if text.trim().is_empty() {
        return Err(CorpusError::EmptyInput);
    }
    let mut turns: Vec<Turn> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        match split_turn(line) {
            Some((speaker, utterance)) => turns.push(Turn {
                speaker: speaker.to_string(),
                text: utterance.to_string(),
            }),
            None => {
                if let Some(last) = turns.last_mut() {
                    last.text.push('\n');
                    last.text.push_str(line.trim_end());
                }
            }
        }
    }
    if turns.is_empty() {
        return Err(CorpusError::NoParsableTurns);
    }
    Ok(RawDialogue {
        turns,
        source_id: source_id.to_string(),
    })
}

fn split_turn(line: &str) -> Option<(&str, &str)> {
    let (head, tail) = line.split_once(':')?;
    let speaker = head.trim();
    if speaker.is_empty() {
        return None;
    }
    Some((speaker, tail.trim_start()))
}

/// Replace speaker names in dialogue and summary with `#i` placeholders.
///
/// Indices follow first appearance order; replacement is whole-word,
/// case-sensitive, longest-name-first.
pub fn anonymize(d: &RawDialogue, summary: &str) -> (AnonDialogue, String, SpeakerMetadata) {
    let mut names: Vec<String> = Vec::new();
    for turn in &d.turns {
        if !names.contains(&turn.speaker) {
            names.push(turn.speaker.clone());
        }
    }
    let metadata = SpeakerMetadata::new(names);

    // Longest names first so a name that is a substring of another never
    // clobbers the longer one.
    let mut order: Vec<usize> = (0..metadata.names.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(metadata.names[i].len()));
    let replacements: Vec<(&str, String)> = order
        .iter()
        .map(|&i| (metadata.names[i].as_str(), format!("#{}", i + 1)))
        .collect();

    let turns = d
        .turns
        .iter()
        .map(|t| AnonTurn {
            speaker: metadata.names.iter().position(|n| *n == t.speaker).unwrap() as u32 + 1,
            text: replace_whole_words(&t.text, &replacements),
        })
        .collect();
    let anon_summary = replace_whole_words(summary, &replacements);
    (AnonDialogue { turns }, anon_summary, metadata)
}

/// Whole-word replacement: a candidate matches only when not flanked by
/// alphanumeric characters. Candidates are tried in the given order at each
/// position, so callers control longest-first priority.
fn replace_whole_words(text: &str, replacements: &[(&str, String)]) -> String {
    let mut out = String::with_capacity(text.len());
    let mut i = 0;
    while i < text.len() {
        let prev_ok = i == 0 || !text[..i].chars().next_back().unwrap().is_alphanumeric();
        let mut matched = false;
        if prev_ok {
            for (name, placeholder) in replacements {
                if text[i..].starts_with(name) {
                    let end = i + name.len();
                    let next_ok =
                        end == text.len() || !text[end..].chars().next().unwrap().is_alphanumeric();
                    if next_ok {
                        out.push_str(placeholder);
                        i = end;
                        matched = true;
                        break;
                    }
                }
            }
        }
        if !matched {
            let ch = text[i..].chars().next().unwrap();
            out.push(ch);
            i += ch.len_utf8();
        }
    }
    out
}

/// Replace every `#i` placeholder with the corresponding metadata name.
///
/// Inverse of [`anonymize`] for dialogues whose names avoid the placeholder
/// alphabet. A bare `#` without digits is left untouched.
pub fn recover(
    d: &AnonDialogue,
    summary: &str,
    metadata: &SpeakerMetadata,
) -> Result<(RawDialogue, String), CorpusError> {
    let mut turns = Vec::with_capacity(d.turns.len());
    for turn in &d.turns {
        let speaker = metadata
            .name(turn.speaker)
            .ok_or(CorpusError::PlaceholderOutOfRange(turn.speaker))?;
        turns.push(Turn {
            speaker: speaker.to_string(),
            text: substitute_placeholders(&turn.text, metadata)?,
        });
    }
    let recovered_summary = substitute_placeholders(summary, metadata)?;
    Ok((
        RawDialogue {
            turns,
            source_id: String::new(),
        },
        recovered_summary,
    ))
}

/// Recover with fresh names drawn uniformly (without replacement) from the
/// bundled name pool, for synthetic samples without original metadata.
pub fn recover_with_random_names<R: Rng + ?Sized>(
    d: &AnonDialogue,
    summary: &str,
    speaker_count: u32,
    rng: &mut R,
) -> Result<(RawDialogue, String, SpeakerMetadata), CorpusError> {
    let pool: Vec<&str> = NAME_POOL.lines().filter(|l| !l.is_empty()).collect();
    if (speaker_count as usize) > pool.len() {
        return Err(CorpusError::NamePoolExhausted {
            available: pool.len(),
            requested: speaker_count as usize,
        });
    }
    let names: Vec<String> = pool
        .choose_multiple(rng, speaker_count as usize)
        .map(|s| s.to_string())
        .collect();
    let metadata = SpeakerMetadata::new(names);
    let (dialogue, summary) = recover(d, summary, &metadata)?;
    Ok((dialogue, summary, metadata))
}

fn substitute_placeholders(text: &str, metadata: &SpeakerMetadata) -> Result<String, CorpusError> {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.char_indices().peekable();
    while let Some((i, ch)) = chars.next() {
        if ch != '#' {
            out.push(ch);
            continue;
        }
        let digits_start = i + 1;
        let mut digits_end = digits_start;
        while let Some(&(j, c)) = chars.peek() {
            if c.is_ascii_digit() {
                digits_end = j + c.len_utf8();
                chars.next();
            } else {
                break;
            }
        }
        if digits_end == digits_start {
            out.push('#');
            continue;
        }
        let index: u32 = text[digits_start..digits_end]
            .parse()
            .map_err(|_| CorpusError::PlaceholderOutOfRange(u32::MAX))?;
        match metadata.name(index) {
            Some(name) => out.push_str(name),
            None => return Err(CorpusError::PlaceholderOutOfRange(index)),
        }
    }
    Ok(out)
}

/// Load samples from a JSONL file, one [`PairedSample`] per line.
pub fn load_pairs(path: &Path) -> Result<Vec<PairedSample>, CorpusError> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut samples = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: PairedSample =
            serde_json::from_str(&line).map_err(|e| CorpusError::MalformedRecord {
                line: idx + 1,
                reason: e.to_string(),
            })?;
        samples.push(sample);
    }
    Ok(samples)
}

/// Save samples as JSONL, one record per line. Single-writer.
pub fn save_pairs(samples: &[PairedSample], path: &Path) -> Result<(), CorpusError> {
    let file = File::create(path)?;
    let mut writer = BufWriter::new(file);
    for sample in samples {
        let line = serde_json::to_string(sample).expect("sample serializes");
        writer.write_all(line.as_bytes())?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}
