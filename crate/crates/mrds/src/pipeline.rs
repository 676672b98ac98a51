//! Stage drivers that wire synthesis, preference building, and the corpus
//! formats together for the CLI.
//!
//! Every stage derives one RNG per input record from the run seed and the
//! record index, so results do not depend on worker count. Data-quality
//! failures (overlong topics, exhausted repair budgets, dirty one-shot
//! output) drop the record and land in the run log; backend and template
//! failures abort the stage. With a queue-scripted mock backend, replay
//! order matches record order only at `workers = 1`; keyed and hash
//! scoring are order-independent.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::Backend;
use crate::corpus::{
    anonymize, parse_dialogue, recover_with_random_names, AnonDialogue, AnonTurn, CorpusError,
    PairedSample, Provenance,
};
use crate::par::parallel_map;
use crate::preference::{
    build_content_pair, build_format_pairs, build_joint_pair, PreferenceError, PreferencePair,
    FORMAT_PAIR_CAP,
};
use crate::synthesis::{SynthesisBudget, SynthesisError, Synthesizer};

#[derive(Debug, Error)]
pub enum StageError {
    #[error("{stage}: {source}")]
    Synthesis {
        stage: &'static str,
        #[source]
        source: SynthesisError,
    },
    #[error("{stage}: {source}")]
    Preference {
        stage: &'static str,
        #[source]
        source: PreferenceError,
    },
    #[error("{stage}: {source}")]
    Corpus {
        stage: &'static str,
        #[source]
        source: CorpusError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {reason}")]
    MalformedInput {
        path: PathBuf,
        line: usize,
        reason: String,
    },
}

/// Raw transcript input for the anonymize stage: the dialogue is multi-line
/// `Name: utterance` text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawRecord {
    pub id: String,
    pub dialogue: String,
    pub summary: String,
}

/// A synthetic summary waiting for dialogue synthesis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SummarySeed {
    pub summary: String,
    pub topic: String,
    pub speaker_count: u32,
}

/// One audit line per input record of a synthesis stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthLogRecord {
    pub index: usize,
    pub kept: u32,
    pub dropped: u32,
    /// Repair rounds spent, for stages that run the iterative loop.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rounds: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub note: Option<String>,
}

impl SynthLogRecord {
    fn kept(index: usize, kept: u32, dropped: u32) -> Self {
        Self {
            index,
            kept,
            dropped,
            rounds: None,
            note: None,
        }
    }

    fn dropped(index: usize, dropped: u32, note: impl Into<String>) -> Self {
        Self {
            index,
            kept: 0,
            dropped,
            rounds: None,
            note: Some(note.into()),
        }
    }
}

/// Empirical length statistics of the real pairs, sampled when synthetic
/// prompts need plausible summary and dialogue shapes.
#[derive(Debug, Clone)]
pub struct EmpiricalDist {
    summary_words: Vec<usize>,
    dialogue_shapes: Vec<(usize, usize)>,
    speaker_counts: Vec<u32>,
}

impl EmpiricalDist {
    pub fn from_pairs(pairs: &[PairedSample]) -> Self {
        assert!(
            !pairs.is_empty(),
            "empirical distribution needs at least one pair"
        );
        let mut summary_words = Vec::with_capacity(pairs.len());
        let mut dialogue_shapes = Vec::with_capacity(pairs.len());
        let mut speaker_counts = Vec::with_capacity(pairs.len());
        for pair in pairs {
            summary_words.push(pair.summary.split_whitespace().count().max(1));
            let turns = pair.dialogue.turns.len().max(1);
            let words: usize = pair
                .dialogue
                .turns
                .iter()
                .map(|t| t.text.split_whitespace().count())
                .sum();
            dialogue_shapes.push((turns, words.max(1)));
            speaker_counts.push(pair.names.count());
        }
        Self {
            summary_words,
            dialogue_shapes,
            speaker_counts,
        }
    }

    pub fn sample_summary_words<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.summary_words[rng.random_range(0..self.summary_words.len())]
    }

    /// `(turns, words)` drawn jointly from one observed dialogue.
    pub fn sample_dialogue_shape<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize) {
        self.dialogue_shapes[rng.random_range(0..self.dialogue_shapes.len())]
    }

    pub fn sample_speaker_count<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        self.speaker_counts[rng.random_range(0..self.speaker_counts.len())]
    }
}

/// Per-record RNG stream: splitmix64 over the run seed and record index.
fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn record_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, index as u64))
}

/// Parse format-clean `#k ...: text` lines into an anonymized dialogue.
///
/// Canonical lines (`#k: text`) round-trip with [`AnonDialogue::to_lines`];
/// lenient lines keep everything after the speaker index as text.
pub fn parse_anon_lines(lines: &[String]) -> AnonDialogue {
    let turns = lines
        .iter()
        .enumerate()
        .map(|(i, line)| {
            let digits: String = line
                .strip_prefix('#')
                .unwrap_or("")
                .chars()
                .take_while(|c| c.is_ascii_digit())
                .collect();
            assert!(
                !digits.is_empty(),
                "line {i} is not a speaker-indexed turn: {line:?}"
            );
            let speaker: u32 = digits.parse().expect("digit run fits u32");
            let after = line[1 + digits.len()..].trim_start();
            let text = match after.strip_prefix(':') {
                Some(rest) => rest.trim_start(),
                None => after,
            };
            AnonTurn {
                speaker,
                text: text.to_string(),
            }
        })
        .collect();
    AnonDialogue { turns }
}

/// Parse and anonymize raw transcripts into real training pairs.
pub fn anonymize_stage(records: &[RawRecord]) -> Result<Vec<PairedSample>, StageError> {
    records
        .iter()
        .map(|record| {
            let raw = parse_dialogue(&record.dialogue, &record.id).map_err(|source| {
                StageError::Corpus {
                    stage: "anonymize",
                    source,
                }
            })?;
            let (dialogue, summary, names) = anonymize(&raw, &record.summary);
            Ok(PairedSample {
                dialogue,
                summary,
                names,
                provenance: Provenance::Real,
                topic: None,
            })
        })
        .collect()
}

/// Extract a topic per real pair and synthesize `per_topic` new summaries
/// from it; candidates failing the summary format check are dropped.
pub fn synth_summaries_stage(
    backend: &dyn Backend,
    reals: &[PairedSample],
    per_topic: u32,
    seed: u64,
    workers: usize,
) -> Result<(Vec<SummarySeed>, Vec<SynthLogRecord>), StageError> {
    assert!(per_topic >= 1, "need at least one summary per topic");
    let dist = EmpiricalDist::from_pairs(reals);
    let synthesizer = Synthesizer::new(backend);
    let fatal = |source| StageError::Synthesis {
        stage: "synth-summaries",
        source,
    };
    let outcomes = parallel_map(reals, workers, |index, sample| {
        let mut rng = record_rng(seed, index);
        let word_count = dist.sample_summary_words(&mut rng);
        let topic = match synthesizer.extract_topic(&sample.summary) {
            Ok(topic) => topic,
            Err(e @ (SynthesisError::TopicTooLong { .. } | SynthesisError::TopicEmpty)) => {
                return Ok((
                    Vec::new(),
                    SynthLogRecord::dropped(index, per_topic, e.to_string()),
                ));
            }
            Err(e) => return Err(fatal(e)),
        };
        let speaker_count = sample.names.count();
        let summaries = synthesizer
            .synth_summaries(&topic, word_count, speaker_count, per_topic)
            .map_err(fatal)?;
        let kept = summaries.len() as u32;
        let seeds: Vec<SummarySeed> = summaries
            .into_iter()
            .map(|summary| SummarySeed {
                summary,
                topic: topic.clone(),
                speaker_count,
            })
            .collect();
        Ok((seeds, SynthLogRecord::kept(index, kept, per_topic - kept)))
    });
    let mut seeds = Vec::new();
    let mut log = Vec::new();
    for outcome in outcomes {
        let (batch, record) = outcome?;
        seeds.extend(batch);
        log.push(record);
    }
    Ok((seeds, log))
}

/// How dialogues are synthesized from summary seeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DialogueMode {
    /// Single generation; dirty output is dropped.
    OneShot,
    /// Truncate-and-reseed repair loop; only budget exhaustion drops.
    Ids,
}

/// Synthesize a dialogue per summary seed and package the survivors as
/// synthetic training pairs with freshly drawn speaker names.
pub fn synth_dialogues_stage(
    backend: &dyn Backend,
    seeds: &[SummarySeed],
    reals: &[PairedSample],
    mode: DialogueMode,
    budget: &SynthesisBudget,
    seed: u64,
    workers: usize,
) -> Result<(Vec<PairedSample>, Vec<SynthLogRecord>), StageError> {
    let dist = EmpiricalDist::from_pairs(reals);
    let synthesizer = Synthesizer::new(backend);
    let fatal = |source| StageError::Synthesis {
        stage: "synth-dialogues",
        source,
    };
    let outcomes = parallel_map(seeds, workers, |index, item| {
        let mut rng = record_rng(seed, index);
        let (turns, words) = dist.sample_dialogue_shape(&mut rng);
        let (lines, rounds) = match mode {
            DialogueMode::OneShot => {
                let (lines, report) = synthesizer
                    .one_shot_dialogue(&item.summary, item.speaker_count, turns, words)
                    .map_err(fatal)?;
                if !report.ok {
                    let note = match report.first_error {
                        Some(v) => format!("format error at line {}: {:?}", v.line_index, v.rule),
                        None => "format check failed".to_string(),
                    };
                    return Ok((None, SynthLogRecord::dropped(index, 1, note)));
                }
                (lines, 1)
            }
            DialogueMode::Ids => {
                match synthesizer.iterative_dialogue(
                    &item.summary,
                    item.speaker_count,
                    turns,
                    words,
                    budget,
                    &mut rng,
                ) {
                    Ok((lines, log)) => (lines, log.round_count() as u32),
                    Err(SynthesisError::BudgetExhausted { rounds, .. }) => {
                        let mut record = SynthLogRecord::dropped(
                            index,
                            1,
                            "repair budget exhausted".to_string(),
                        );
                        record.rounds = Some(rounds);
                        return Ok((None, record));
                    }
                    Err(e) => return Err(fatal(e)),
                }
            }
        };
        let dialogue = parse_anon_lines(&lines);
        let names =
            match recover_with_random_names(&dialogue, &item.summary, item.speaker_count, &mut rng)
            {
                Ok((_, _, names)) => names,
                Err(e) => {
                    return Ok((
                        None,
                        SynthLogRecord::dropped(index, 1, format!("name recovery: {e}")),
                    ));
                }
            };
        let mut record = SynthLogRecord::kept(index, 1, 0);
        record.rounds = Some(rounds);
        let sample = PairedSample {
            dialogue,
            summary: item.summary.clone(),
            names,
            provenance: Provenance::Synthetic,
            topic: Some(item.topic.clone()),
        };
        Ok((Some(sample), record))
    });
    let mut pairs = Vec::new();
    let mut log = Vec::new();
    for outcome in outcomes {
        let (sample, record) = outcome?;
        pairs.extend(sample);
        log.push(record);
    }
    Ok((pairs, log))
}

/// Which preference pairs a build run emits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrefMode {
    /// Format pairs (clean vs dirty) and content pairs (best vs worst
    /// alignment) from independent one-shot candidates.
    Separated,
    /// One pair per summary: the repaired dialogue against the raw one-shot
    /// that needed repair.
    Joint,
}

/// Build DPO preference pairs from summary seeds.
pub fn build_prefs_stage(
    backend: &dyn Backend,
    seeds: &[SummarySeed],
    reals: &[PairedSample],
    mode: PrefMode,
    budget: &SynthesisBudget,
    seed: u64,
    workers: usize,
) -> Result<(Vec<PreferencePair>, Vec<SynthLogRecord>), StageError> {
    let dist = EmpiricalDist::from_pairs(reals);
    let synthesizer = Synthesizer::new(backend);
    let fatal_synth = |source| StageError::Synthesis {
        stage: "build-prefs",
        source,
    };
    let fatal_pref = |source| StageError::Preference {
        stage: "build-prefs",
        source,
    };
    let outcomes = parallel_map(seeds, workers, |index, item| {
        let mut rng = record_rng(seed, index);
        let (turns, words) = dist.sample_dialogue_shape(&mut rng);
        let prompt = synthesizer
            .dialogue_prompt(&item.summary, item.speaker_count, turns, words)
            .map_err(|e| fatal_synth(e.into()))?;
        match mode {
            PrefMode::Separated => {
                let mut clean = Vec::new();
                let mut dirty = Vec::new();
                for _ in 0..budget.samples_per_summary {
                    let (lines, report) = synthesizer
                        .one_shot_dialogue(&item.summary, item.speaker_count, turns, words)
                        .map_err(fatal_synth)?;
                    if report.ok {
                        clean.push(lines);
                    } else {
                        dirty.push(lines);
                    }
                }
                let mut pairs = build_format_pairs(
                    &prompt,
                    item.speaker_count,
                    &clean,
                    &dirty,
                    FORMAT_PAIR_CAP,
                )
                .map_err(fatal_pref)?;
                let mut note = format!("clean {} dirty {}", clean.len(), dirty.len());
                if clean.len() >= 2 {
                    let mut scored = Vec::with_capacity(clean.len());
                    for lines in clean {
                        let score = synthesizer
                            .alignment(&item.summary, &lines)
                            .map_err(fatal_synth)?;
                        scored.push((lines, score));
                    }
                    match build_content_pair(&prompt, item.speaker_count, &scored) {
                        Ok(pair) => pairs.push(pair),
                        Err(PreferenceError::DegenerateScores) => {
                            note.push_str("; content pair skipped: tied scores");
                        }
                        Err(e) => return Err(fatal_pref(e)),
                    }
                }
                let mut record = SynthLogRecord::kept(index, pairs.len() as u32, 0);
                record.note = Some(note);
                Ok((pairs, record))
            }
            PrefMode::Joint => {
                let (raw, report) = synthesizer
                    .one_shot_dialogue(&item.summary, item.speaker_count, turns, words)
                    .map_err(fatal_synth)?;
                if report.ok {
                    return Ok((
                        Vec::new(),
                        SynthLogRecord::dropped(index, 1, "one-shot already clean"),
                    ));
                }
                if raw.is_empty() {
                    return Ok((
                        Vec::new(),
                        SynthLogRecord::dropped(index, 1, "one-shot produced no lines"),
                    ));
                }
                let raw_score = synthesizer
                    .alignment(&item.summary, &raw)
                    .map_err(fatal_synth)?;
                let (refined, ids_log) = match synthesizer.iterative_dialogue(
                    &item.summary,
                    item.speaker_count,
                    turns,
                    words,
                    budget,
                    &mut rng,
                ) {
                    Ok(result) => result,
                    Err(SynthesisError::BudgetExhausted { rounds, .. }) => {
                        let mut record = SynthLogRecord::dropped(
                            index,
                            1,
                            "repair budget exhausted".to_string(),
                        );
                        record.rounds = Some(rounds);
                        return Ok((Vec::new(), record));
                    }
                    Err(e) => return Err(fatal_synth(e)),
                };
                let refined_score = synthesizer
                    .alignment(&item.summary, &refined)
                    .map_err(fatal_synth)?;
                let pair = build_joint_pair(
                    &prompt,
                    item.speaker_count,
                    &refined,
                    refined_score,
                    &raw,
                    raw_score,
                )
                .map_err(fatal_pref)?;
                let mut record = SynthLogRecord::kept(index, pair.iter().len() as u32, 0);
                record.rounds = Some(ids_log.round_count() as u32);
                if pair.is_none() {
                    record.note = Some("refined dialogue does not align better than raw".into());
                }
                Ok((pair.into_iter().collect(), record))
            }
        }
    });
    let mut pairs = Vec::new();
    let mut log = Vec::new();
    for outcome in outcomes {
        let (batch, record) = outcome?;
        pairs.extend(batch);
        log.push(record);
    }
    Ok((pairs, log))
}

/// Write items as one JSON document per line.
pub fn save_jsonl<T: Serialize>(items: &[T], path: &Path) -> Result<(), StageError> {
    let io_err = |source| StageError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut writer = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item).expect("stage records serialize");
        writer.write_all(line.as_bytes()).map_err(io_err)?;
        writer.write_all(b"\n").map_err(io_err)?;
    }
    writer.flush().map_err(io_err)
}

/// Read one JSON document per line, skipping blank lines.
pub fn load_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, StageError> {
    let io_err = |source| StageError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    let reader = BufReader::new(file);
    let mut items = Vec::new();
    for (number, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| StageError::MalformedInput {
            path: path.to_path_buf(),
            line: number + 1,
            reason: e.to_string(),
        })?;
        items.push(item);
    }
    Ok(items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::MockBackend;
    use crate::corpus::SpeakerMetadata;
    use crate::preference::PairKind;

    fn real_pair() -> PairedSample {
        let records = vec![RawRecord {
            id: "r0".into(),
            dialogue: "Anna: can we meet at noon today?\nBen: sure, see you then".into(),
            summary: "Anna and Ben agree to meet at noon.".into(),
        }];
        anonymize_stage(&records).unwrap().pop().unwrap()
    }

    fn seeds(n: usize) -> Vec<SummarySeed> {
        (0..n)
            .map(|i| SummarySeed {
                summary: format!("#1 tells #2 about plan {i}."),
                topic: "meeting plan".into(),
                speaker_count: 2,
            })
            .collect()
    }

    #[test]
    fn anonymize_stage_produces_real_pairs() {
        let pair = real_pair();
        assert_eq!(pair.provenance, Provenance::Real);
        assert_eq!(pair.names, SpeakerMetadata::new(vec!["Anna".into(), "Ben".into()]));
        assert_eq!(pair.dialogue.turns[0].speaker, 1);
        assert_eq!(pair.summary, "#1 and #2 agree to meet at noon.");
        assert_eq!(pair.topic, None);
    }

    #[test]
    fn empirical_dist_samples_observed_values() {
        let pair = real_pair();
        let dist = EmpiricalDist::from_pairs(&[pair]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(dist.sample_summary_words(&mut rng), 8);
        assert_eq!(dist.sample_dialogue_shape(&mut rng), (2, 10));
        assert_eq!(dist.sample_speaker_count(&mut rng), 2);
    }

    #[test]
    fn derived_seeds_are_stable_and_distinct() {
        assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
        assert_ne!(derive_seed(7, 3), derive_seed(7, 4));
        assert_ne!(derive_seed(7, 0), derive_seed(8, 0));
    }

    #[test]
    fn anon_line_parsing_round_trips_canonical_lines() {
        let lines = vec!["#1: hello there".to_string(), "#2: hi".to_string()];
        let dialogue = parse_anon_lines(&lines);
        assert_eq!(dialogue.to_lines(), lines);
        let lenient = parse_anon_lines(&["#1 file_gifiles : yeah".to_string()]);
        assert_eq!(lenient.turns[0].speaker, 1);
        assert_eq!(lenient.turns[0].text, "file_gifiles : yeah");
    }

    #[test]
    #[should_panic(expected = "not a speaker-indexed turn")]
    fn anon_line_parsing_rejects_unindexed_lines() {
        parse_anon_lines(&["Ben: hi".to_string()]);
    }

    #[test]
    fn summary_stage_keeps_only_format_clean_candidates() {
        let mock = MockBackend::new().with_responses([
            "weekend errands",
            "#1 asks #2 to help move.",
            "Somebody helps a friend move.",
            "#2 agrees to bring a truck.",
        ]);
        let reals = vec![real_pair()];
        let (seeds, log) = synth_summaries_stage(&mock, &reals, 3, 0, 1).unwrap();
        assert_eq!(seeds.len(), 2);
        assert!(seeds.iter().all(|s| s.topic == "weekend errands"));
        assert!(seeds.iter().all(|s| s.speaker_count == 2));
        assert_eq!(log, vec![SynthLogRecord::kept(0, 2, 1)]);
        // The sampled word count is bound into the prompt.
        let prompts = mock.generate_requests();
        assert!(prompts[1].contains("approximately 8 words"));
    }

    #[test]
    fn summary_stage_logs_topic_failures_and_continues() {
        let mock = MockBackend::new().with_responses([
            "far too many words to ever pass the topic length check",
            "still far too many words to pass the topic length check",
            "and a third overlong topic reply for the final attempt",
            "errand help",
            "#1 thanks #2.",
        ]);
        let reals = vec![real_pair(), real_pair()];
        let (seeds, log) = synth_summaries_stage(&mock, &reals, 1, 0, 1).unwrap();
        assert_eq!(seeds.len(), 1);
        assert_eq!(log.len(), 2);
        assert_eq!(log[0].kept, 0);
        assert_eq!(log[0].dropped, 1);
        assert!(log[0].note.as_ref().unwrap().contains("topic"));
        assert_eq!(log[1].kept, 1);
    }

    #[test]
    fn dialogue_stage_one_shot_drops_dirty_output() {
        let mock = MockBackend::new().with_responses([
            "#1: I found us a truck\n#2: great, when do we start?",
            "#1: hello\nBen: yo",
        ]);
        let reals = vec![real_pair()];
        let (pairs, log) =
            synth_dialogues_stage(&mock, &seeds(2), &reals, DialogueMode::OneShot,
                &SynthesisBudget::default(), 0, 1)
            .unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].provenance, Provenance::Synthetic);
        assert_eq!(pairs[0].topic.as_deref(), Some("meeting plan"));
        assert_eq!(pairs[0].dialogue.turns.len(), 2);
        assert_eq!(pairs[0].names.count(), 2);
        assert_eq!(log[0].kept, 1);
        assert_eq!(log[0].rounds, Some(1));
        assert_eq!(log[1].kept, 0);
        assert!(log[1].note.as_ref().unwrap().contains("line 1"));
    }

    #[test]
    fn dialogue_stage_ids_repairs_and_counts_rounds() {
        let mock = MockBackend::new().with_responses([
            " I found a truck\n2: when do we start?",
            " when do we start?\n#1: right now",
        ]);
        let reals = vec![real_pair()];
        let (pairs, log) = synth_dialogues_stage(
            &mock,
            &seeds(1),
            &reals,
            DialogueMode::Ids,
            &SynthesisBudget::default(),
            0,
            1,
        )
        .unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(log[0].rounds, Some(2));
        let lines = pairs[0].dialogue.to_lines();
        assert_eq!(lines[0], "#1: I found a truck");
        assert!(lines.len() >= 2);
    }

    #[test]
    fn prefs_stage_separated_builds_format_and_content_pairs() {
        let mock = MockBackend::new().with_responses([
            "#1: I found us a truck\n#2: great news",
            "#1: all packed\n#2: loading now",
            "#1: hello\nBen: yo",
        ]);
        mock.push_score(vec![-1.0, -1.0]);
        mock.push_score(vec![-3.0, -3.0]);
        let reals = vec![real_pair()];
        let (pairs, log) = build_prefs_stage(
            &mock,
            &seeds(1),
            &reals,
            PrefMode::Separated,
            &SynthesisBudget {
                max_iterations: 10,
                samples_per_summary: 3,
            },
            0,
            1,
        )
        .unwrap();
        assert_eq!(pairs.len(), 3);
        assert_eq!(
            pairs.iter().filter(|p| p.kind == PairKind::Format).count(),
            2
        );
        let content: Vec<_> = pairs.iter().filter(|p| p.kind == PairKind::Content).collect();
        assert_eq!(content.len(), 1);
        assert!(content[0].chosen.starts_with("#1: I found us a truck"));
        assert!(content[0].rejected.starts_with("#1: all packed"));
        assert_eq!(log[0].kept, 3);
        assert!(log[0].note.as_ref().unwrap().contains("clean 2 dirty 1"));
    }

    #[test]
    fn prefs_stage_joint_pairs_repaired_against_raw() {
        let mock = MockBackend::new().with_responses([
            // Raw one-shot for seed 0: dirty at line 1.
            "#1: I found a truck\nBen: when do we start?",
            // IDS round for seed 0.
            " I found a truck\n#2: when do we start?",
            // Raw one-shot for seed 1: already clean.
            "#1: all packed\n#2: loading now",
        ]);
        mock.push_score(vec![-4.0, -4.0]);
        mock.push_score(vec![-1.0, -1.0]);
        let reals = vec![real_pair()];
        let (pairs, log) = build_prefs_stage(
            &mock,
            &seeds(2),
            &reals,
            PrefMode::Joint,
            &SynthesisBudget::default(),
            0,
            1,
        )
        .unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].kind, PairKind::Joint);
        assert!(pairs[0].chosen.contains("#2: when do we start?"));
        assert!(pairs[0].rejected.contains("Ben: when do we start?"));
        let scores = pairs[0].scores.as_ref().unwrap();
        assert!(scores.chosen.mean_ce < scores.rejected.mean_ce);
        assert_eq!(log[0].kept, 1);
        assert_eq!(log[0].rounds, Some(1));
        assert_eq!(log[1].kept, 0);
        assert!(log[1].note.as_ref().unwrap().contains("already clean"));
    }

    #[test]
    fn jsonl_round_trips_and_reports_malformed_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seeds.jsonl");
        let items = seeds(2);
        save_jsonl(&items, &path).unwrap();
        let loaded: Vec<SummarySeed> = load_jsonl(&path).unwrap();
        assert_eq!(loaded, items);

        std::fs::write(&path, "{\"summary\": 3}\n").unwrap();
        let err = load_jsonl::<SummarySeed>(&path).unwrap_err();
        assert!(matches!(err, StageError::MalformedInput { line: 1, .. }));
    }
}
