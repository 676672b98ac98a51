//! Preference pairs for DPO training.
//!
//! Format pairs oppose dialogues that pass the format check to ones that
//! fail it. Content pairs oppose the best and worst aligned candidates of
//! the same summary. Joint pairs oppose a refined dialogue to the raw
//! generation it came from. Export writes JSON-lines records of
//! `{prompt, chosen, rejected, kind}` with exact duplicates removed.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::format::check_dialogue;
use crate::synthesis::AlignmentScore;

/// Cartesian cap on format pairs per summary.
pub const FORMAT_PAIR_CAP: usize = 4;

#[derive(Debug, Error)]
pub enum PreferenceError {
    #[error("candidate {index} is on the wrong side of the pair (expected format-clean: {expected_clean})")]
    MisclassifiedCandidate { index: usize, expected_clean: bool },
    #[error("candidates share one alignment score; no strict best/worst exists")]
    DegenerateScores,
    #[error("write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path} line {line}: {reason}")]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        reason: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairKind {
    Format,
    Content,
    Joint,
}

impl PairKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PairKind::Format => "format",
            PairKind::Content => "content",
            PairKind::Joint => "joint",
        }
    }
}

/// Alignment evidence kept alongside content and joint pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairScores {
    pub chosen: AlignmentScore,
    pub rejected: AlignmentScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
    pub kind: PairKind,
    /// Present on content and joint pairs; format pairs carry none.
    pub scores: Option<PairScores>,
}

/// One exported JSON-lines record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpoRecord {
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
    pub kind: PairKind,
}

fn join(lines: &[String]) -> String {
    lines.join("\n")
}

/// Pairs every format-clean candidate against every format-dirty one,
/// clean-major, truncated at `cap`.
///
/// Each candidate is re-checked: a clean one that fails or a dirty one
/// that passes is a misclassification error. Either side being empty
/// yields no pairs.
pub fn build_format_pairs(
    prompt: &str,
    speaker_count: u32,
    clean: &[Vec<String>],
    dirty: &[Vec<String>],
    cap: usize,
) -> Result<Vec<PreferencePair>, PreferenceError> {
    for (index, candidate) in clean.iter().enumerate() {
        if !check_dialogue(candidate, speaker_count).ok {
            return Err(PreferenceError::MisclassifiedCandidate {
                index,
                expected_clean: true,
            });
        }
    }
    for (index, candidate) in dirty.iter().enumerate() {
        if check_dialogue(candidate, speaker_count).ok {
            return Err(PreferenceError::MisclassifiedCandidate {
                index,
                expected_clean: false,
            });
        }
    }
    let mut pairs = Vec::new();
    'outer: for chosen in clean {
        for rejected in dirty {
            if pairs.len() == cap {
                break 'outer;
            }
            pairs.push(PreferencePair {
                prompt: prompt.to_string(),
                chosen: join(chosen),
                rejected: join(rejected),
                kind: PairKind::Format,
                scores: None,
            });
        }
    }
    Ok(pairs)
}

/// Opposes the best and worst aligned of at least two format-clean
/// candidates; ties inside best or worst resolve to the earliest index.
/// All candidates sharing one score is degenerate: no pair exists.
pub fn build_content_pair(
    prompt: &str,
    speaker_count: u32,
    scored: &[(Vec<String>, AlignmentScore)],
) -> Result<PreferencePair, PreferenceError> {
    assert!(scored.len() >= 2, "content pairs need at least 2 candidates");
    for (index, (candidate, _)) in scored.iter().enumerate() {
        if !check_dialogue(candidate, speaker_count).ok {
            return Err(PreferenceError::MisclassifiedCandidate {
                index,
                expected_clean: true,
            });
        }
    }
    let mut best = 0;
    let mut worst = 0;
    for (index, (_, score)) in scored.iter().enumerate().skip(1) {
        if score.mean_ce < scored[best].1.mean_ce {
            best = index;
        }
        if score.mean_ce > scored[worst].1.mean_ce {
            worst = index;
        }
    }
    // Negated `<` rather than `>=` so NaN scores also count as degenerate.
    let separated = scored[best].1.mean_ce < scored[worst].1.mean_ce;
    if !separated {
        return Err(PreferenceError::DegenerateScores);
    }
    Ok(PreferencePair {
        prompt: prompt.to_string(),
        chosen: join(&scored[best].0),
        rejected: join(&scored[worst].0),
        kind: PairKind::Content,
        scores: Some(PairScores {
            chosen: scored[best].1,
            rejected: scored[worst].1,
        }),
    })
}

/// Opposes a refined dialogue to the raw generation it was refined from.
///
/// The refined side must be format-clean (anything else is a
/// misclassification). The pair exists only when every joint condition
/// holds at once: the raw side fails the format check *and* the refined
/// side aligns strictly better. A clean raw or an alignment tie yields
/// no pair.
pub fn build_joint_pair(
    prompt: &str,
    speaker_count: u32,
    refined: &[String],
    refined_score: AlignmentScore,
    raw: &[String],
    raw_score: AlignmentScore,
) -> Result<Option<PreferencePair>, PreferenceError> {
    if !check_dialogue(refined, speaker_count).ok {
        return Err(PreferenceError::MisclassifiedCandidate {
            index: 0,
            expected_clean: true,
        });
    }
    if check_dialogue(raw, speaker_count).ok || !refined_score.better_than(&raw_score) {
        return Ok(None);
    }
    Ok(Some(PreferencePair {
        prompt: prompt.to_string(),
        chosen: join(refined),
        rejected: join(raw),
        kind: PairKind::Joint,
        scores: Some(PairScores {
            chosen: refined_score,
            rejected: raw_score,
        }),
    }))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExportStats {
    pub written: usize,
    pub duplicates: usize,
    pub files: Vec<PathBuf>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PreferenceError + '_ {
    move |source| PreferenceError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_records(pairs: &[&PreferencePair], path: &Path) -> Result<usize, PreferenceError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    for pair in pairs {
        let record = DpoRecord {
            prompt: pair.prompt.clone(),
            chosen: pair.chosen.clone(),
            rejected: pair.rejected.clone(),
            kind: pair.kind,
        };
        let line = serde_json::to_string(&record).expect("record serializes");
        writeln!(out, "{line}").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))?;
    Ok(pairs.len())
}

fn dedup(pairs: &[PreferencePair]) -> (Vec<&PreferencePair>, usize) {
    let mut seen: HashSet<(&str, &str, &str, PairKind)> = HashSet::new();
    let mut unique = Vec::new();
    let mut duplicates = 0;
    for pair in pairs {
        let key = (
            pair.prompt.as_str(),
            pair.chosen.as_str(),
            pair.rejected.as_str(),
            pair.kind,
        );
        if seen.insert(key) {
            unique.push(pair);
        } else {
            duplicates += 1;
        }
    }
    (unique, duplicates)
}

/// Writes all pairs, any kind, to one JSON-lines file.
pub fn export_dpo(pairs: &[PreferencePair], path: &Path) -> Result<ExportStats, PreferenceError> {
    let (unique, duplicates) = dedup(pairs);
    let written = write_records(&unique, path)?;
    Ok(ExportStats {
        written,
        duplicates,
        files: vec![path.to_path_buf()],
    })
}

/// Writes one `prefs.<kind>.jsonl` file per kind present in `pairs`.
pub fn export_dpo_separated(
    pairs: &[PreferencePair],
    dir: &Path,
) -> Result<ExportStats, PreferenceError> {
    let (unique, duplicates) = dedup(pairs);
    let mut stats = ExportStats {
        written: 0,
        duplicates,
        files: Vec::new(),
    };
    for kind in [PairKind::Format, PairKind::Content, PairKind::Joint] {
        let of_kind: Vec<&PreferencePair> =
            unique.iter().copied().filter(|p| p.kind == kind).collect();
        if of_kind.is_empty() {
            continue;
        }
        let path = dir.join(format!("prefs.{}.jsonl", kind.as_str()));
        stats.written += write_records(&of_kind, &path)?;
        stats.files.push(path);
    }
    Ok(stats)
}

/// Reads an exported JSON-lines file back; blank lines are skipped.
pub fn load_dpo(path: &Path) -> Result<Vec<DpoRecord>, PreferenceError> {
    let file = File::open(path).map_err(io_err(path))?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (number, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| PreferenceError::MalformedRecord {
            path: path.to_path_buf(),
            line: number + 1,
            reason: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lines(items: &[&str]) -> Vec<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    fn score(mean_ce: f64) -> AlignmentScore {
        AlignmentScore {
            sum_logprob: -mean_ce * 2.0,
            token_count: 2,
            mean_ce,
        }
    }

    fn clean(tag: &str) -> Vec<String> {
        lines(&[&format!("#1: {tag}"), "#2: ok"])
    }

    fn dirty(tag: &str) -> Vec<String> {
        lines(&[&format!("#1: {tag}"), "no prefix"])
    }

    #[test]
    fn format_pairs_are_clean_major_and_capped() {
        let clean_set = vec![clean("a"), clean("b"), clean("c")];
        let dirty_set = vec![dirty("x"), dirty("y")];
        let pairs = build_format_pairs("p", 2, &clean_set, &dirty_set, 4).unwrap();
        assert_eq!(pairs.len(), 4);
        assert_eq!(pairs[0].chosen, "#1: a\n#2: ok");
        assert_eq!(pairs[0].rejected, "#1: x\nno prefix");
        assert_eq!(pairs[1].rejected, "#1: y\nno prefix");
        assert_eq!(pairs[2].chosen, "#1: b\n#2: ok");
        assert!(pairs.iter().all(|p| p.kind == PairKind::Format));
        assert!(pairs.iter().all(|p| p.scores.is_none()));
    }

    #[test]
    fn format_pairs_without_cap_pressure_cover_the_product() {
        let clean_set = vec![clean("a"), clean("b")];
        let dirty_set = vec![dirty("x")];
        let pairs = build_format_pairs("p", 2, &clean_set, &dirty_set, 10).unwrap();
        assert_eq!(pairs.len(), 2);
    }

    #[test]
    fn format_pairs_need_both_sides() {
        assert!(build_format_pairs("p", 2, &[], &[dirty("x")], 4)
            .unwrap()
            .is_empty());
        assert!(build_format_pairs("p", 2, &[clean("a")], &[], 4)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn format_pairs_reject_misclassified_candidates() {
        let err = build_format_pairs("p", 2, &[dirty("a")], &[dirty("x")], 4).unwrap_err();
        match err {
            PreferenceError::MisclassifiedCandidate {
                index,
                expected_clean,
            } => {
                assert_eq!(index, 0);
                assert!(expected_clean);
            }
            other => panic!("unexpected error {other:?}"),
        }
        let err =
            build_format_pairs("p", 2, &[clean("a")], &[dirty("x"), clean("b")], 4).unwrap_err();
        match err {
            PreferenceError::MisclassifiedCandidate {
                index,
                expected_clean,
            } => {
                assert_eq!(index, 1);
                assert!(!expected_clean);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn content_pair_opposes_strict_best_and_worst() {
        let scored = vec![
            (clean("a"), score(1.5)),
            (clean("b"), score(0.5)),
            (clean("c"), score(2.5)),
        ];
        let pair = build_content_pair("p", 2, &scored).unwrap();
        assert_eq!(pair.chosen, "#1: b\n#2: ok");
        assert_eq!(pair.rejected, "#1: c\n#2: ok");
        assert_eq!(pair.kind, PairKind::Content);
        let scores = pair.scores.unwrap();
        assert!(scores.chosen.mean_ce < scores.rejected.mean_ce);
    }

    #[test]
    fn content_pair_ties_resolve_to_earliest_index() {
        let scored = vec![
            (clean("a"), score(1.0)),
            (clean("b"), score(1.0)),
            (clean("c"), score(3.0)),
            (clean("d"), score(3.0)),
        ];
        let pair = build_content_pair("p", 2, &scored).unwrap();
        assert_eq!(pair.chosen, "#1: a\n#2: ok");
        assert_eq!(pair.rejected, "#1: c\n#2: ok");
    }

    #[test]
    fn content_pair_rejects_shared_score() {
        let scored = vec![(clean("a"), score(1.0)), (clean("b"), score(1.0))];
        assert!(matches!(
            build_content_pair("p", 2, &scored),
            Err(PreferenceError::DegenerateScores)
        ));
    }

    #[test]
    fn content_pair_rejects_dirty_candidates() {
        let scored = vec![(clean("a"), score(1.0)), (dirty("b"), score(2.0))];
        assert!(matches!(
            build_content_pair("p", 2, &scored),
            Err(PreferenceError::MisclassifiedCandidate { index: 1, .. })
        ));
    }

    #[test]
    #[should_panic(expected = "at least 2")]
    fn content_pair_single_candidate_is_a_precondition_violation() {
        let scored = vec![(clean("a"), score(1.0))];
        let _ = build_content_pair("p", 2, &scored);
    }

    #[test]
    fn joint_pair_needs_dirty_raw_and_strictly_better_alignment() {
        let pair = build_joint_pair("p", 2, &clean("a"), score(1.0), &dirty("x"), score(2.0))
            .unwrap()
            .unwrap();
        assert_eq!(pair.kind, PairKind::Joint);
        assert_eq!(pair.chosen, "#1: a\n#2: ok");
        assert_eq!(pair.rejected, "#1: x\nno prefix");
        let scores = pair.scores.unwrap();
        assert!(scores.chosen.mean_ce < scores.rejected.mean_ce);
    }

    #[test]
    fn joint_pair_absent_when_raw_is_clean() {
        // Even an alignment gap is not enough once the raw side passes.
        let none = build_joint_pair("p", 2, &clean("a"), score(1.0), &clean("b"), score(2.0))
            .unwrap();
        assert!(none.is_none());
    }

    #[test]
    fn joint_pair_absent_without_alignment_gain() {
        // Dirty raw, but the refined side ties.
        let none = build_joint_pair("p", 2, &clean("a"), score(2.0), &dirty("x"), score(2.0))
            .unwrap();
        assert!(none.is_none());
        // Dirty raw, refined strictly worse.
        let none = build_joint_pair("p", 2, &clean("a"), score(3.0), &dirty("x"), score(2.0))
            .unwrap();
        assert!(none.is_none());
        // Identical texts imply a clean raw, so they never pair.
        let none = build_joint_pair("p", 2, &clean("a"), score(1.0), &clean("a"), score(9.0))
            .unwrap();
        assert!(none.is_none());
    }

    #[test]
    fn joint_pair_rejects_dirty_refined_side() {
        assert!(matches!(
            build_joint_pair("p", 2, &dirty("a"), score(1.0), &dirty("x"), score(2.0)),
            Err(PreferenceError::MisclassifiedCandidate {
                expected_clean: true,
                ..
            })
        ));
    }

    #[test]
    fn export_removes_exact_duplicates_and_round_trips() {
        let pair = PreferencePair {
            prompt: "p".into(),
            chosen: "#1: a".into(),
            rejected: "bad".into(),
            kind: PairKind::Format,
            scores: None,
        };
        let mut other = pair.clone();
        other.kind = PairKind::Joint;
        let pairs = vec![pair.clone(), pair.clone(), other];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("prefs.jsonl");
        let stats = export_dpo(&pairs, &path).unwrap();
        assert_eq!(stats.written, 2);
        assert_eq!(stats.duplicates, 1);
        let records = load_dpo(&path).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[0].kind, PairKind::Format);
        assert_eq!(records[1].kind, PairKind::Joint);
        assert_eq!(records[0].prompt, "p");
    }

    #[test]
    fn separated_export_partitions_by_kind() {
        let make = |kind, tag: &str| PreferencePair {
            prompt: "p".into(),
            chosen: format!("#1: {tag}"),
            rejected: "bad".into(),
            kind,
            scores: None,
        };
        let pairs = vec![
            make(PairKind::Content, "c1"),
            make(PairKind::Format, "f1"),
            make(PairKind::Format, "f2"),
        ];
        let dir = tempfile::tempdir().unwrap();
        let stats = export_dpo_separated(&pairs, dir.path()).unwrap();
        assert_eq!(stats.written, 3);
        assert_eq!(stats.files.len(), 2);
        let format_path = dir.path().join("prefs.format.jsonl");
        let content_path = dir.path().join("prefs.content.jsonl");
        assert!(!dir.path().join("prefs.joint.jsonl").exists());
        let format_records = load_dpo(&format_path).unwrap();
        assert_eq!(format_records.len(), 2);
        assert!(format_records.iter().all(|r| r.kind == PairKind::Format));
        let content_records = load_dpo(&content_path).unwrap();
        assert_eq!(content_records.len(), 1);
    }

    #[test]
    fn exported_kind_field_is_lowercase() {
        let record = DpoRecord {
            prompt: "p".into(),
            chosen: "c".into(),
            rejected: "r".into(),
            kind: PairKind::Format,
        };
        let json = serde_json::to_string(&record).unwrap();
        assert!(json.contains(r#""kind":"format""#));
    }
}
