//! Training-schedule state machines and plan emission.
//!
//! The scheduler ramps the learning rate linearly over warmup, then
//! reduces it on validation-loss plateaus. Stage transitions fire either
//! when the rate decays below a threshold or when validations stop
//! improving. Plans are declarative JSON documents for an external
//! trainer; nothing here performs weight updates.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Checkpoints must reach this format-correctness rate to qualify.
pub const FORMAT_RATE_FLOOR: f64 = 0.85;

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error("no checkpoint reaches format rate {FORMAT_RATE_FLOOR}")]
    NoQualifyingCheckpoint,
    #[error("manifest not found: {0}")]
    MissingManifest(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    MalformedPlan { path: PathBuf, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparameters {
    pub batch_size: u32,
    pub max_lr: f64,
    pub warmup_steps: u32,
    pub plateau_patience: u32,
    pub plateau_factor: f64,
    /// Optimizer steps between validations.
    pub validation_interval: u32,
    /// Non-improving validations before a stage stops.
    pub early_stop_patience: u32,
    /// Learning rate at or below which a two-stage plan advances.
    pub lr_threshold: Option<f64>,
    pub dpo_batch: u32,
    pub sft_batch: u32,
    pub dpo_lr: f64,
    pub lora_rank: u32,
    pub lora_alpha: u32,
    pub dropout: f64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            batch_size: 10,
            max_lr: 2.0e-4,
            warmup_steps: 50,
            plateau_patience: 5,
            plateau_factor: 0.7,
            validation_interval: 2,
            early_stop_patience: 50,
            lr_threshold: Some(2.0e-5),
            dpo_batch: 4,
            sft_batch: 1,
            dpo_lr: 1.0e-5,
            lora_rank: 16,
            lora_alpha: 32,
            dropout: 0.4,
        }
    }
}

/// Reduce-on-plateau scheduler state.
///
/// `steps_since_improve` counts validations since the last improvement,
/// starting after warmup. A reduction fires at every full multiple of the
/// patience; the count keeps growing so early stopping can read the same
/// field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedulerState {
    pub current_lr: f64,
    pub best_loss: f64,
    pub steps_since_improve: u32,
    pub step_index: u32,
}

impl LrSchedulerState {
    pub fn new() -> Self {
        Self {
            current_lr: 0.0,
            best_loss: f64::INFINITY,
            steps_since_improve: 0,
            step_index: 0,
        }
    }
}

impl Default for LrSchedulerState {
    fn default() -> Self {
        Self::new()
    }
}

/// Advances the scheduler by one optimizer step.
///
/// `observed_loss` is the validation loss when this step validates, absent
/// otherwise. During warmup the rate ramps linearly and losses only update
/// `best_loss`; plateau counting starts once the ramp completes.
pub fn scheduler_step(
    state: &LrSchedulerState,
    observed_loss: Option<f64>,
    hyper: &Hyperparameters,
) -> LrSchedulerState {
    let mut next = *state;
    next.step_index = state.step_index + 1;
    let warming = next.step_index <= hyper.warmup_steps;
    if warming {
        next.current_lr = hyper.max_lr * f64::from(next.step_index) / f64::from(hyper.warmup_steps);
    }
    if let Some(loss) = observed_loss {
        if loss < next.best_loss {
            next.best_loss = loss;
            next.steps_since_improve = 0;
        } else if !warming {
            next.steps_since_improve += 1;
            if next.steps_since_improve.is_multiple_of(hyper.plateau_patience) {
                next.current_lr *= hyper.plateau_factor;
            }
        }
    }
    next
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    LrThreshold,
    EarlyStop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transition {
    Continue,
    Advance,
    Stop,
}

/// Evaluates the current stage's stop rule.
///
/// Stop rules engage only after warmup: the ramp passes through every low
/// rate on its way up, which must not read as threshold decay.
pub fn stage_transition(
    state: &LrSchedulerState,
    hyper: &Hyperparameters,
    rule: StopRule,
) -> Transition {
    if state.step_index <= hyper.warmup_steps {
        return Transition::Continue;
    }
    match rule {
        StopRule::LrThreshold => {
            let threshold = hyper.lr_threshold.expect("lr_threshold stage needs a threshold");
            if state.current_lr <= threshold {
                Transition::Advance
            } else {
                Transition::Continue
            }
        }
        StopRule::EarlyStop => {
            if state.steps_since_improve >= hyper.early_stop_patience {
                Transition::Stop
            } else {
                Transition::Continue
            }
        }
    }
}

/// One validation checkpoint: summarization cross-entropy and the
/// format-correctness rate of sampled dialogues.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointRecord {
    pub ce: f64,
    pub format_rate: f64,
}

/// Index of the lowest-CE checkpoint among those with a format rate of at
/// least 0.85; ties keep the earliest. Panics on an empty list.
pub fn select_checkpoint(records: &[CheckpointRecord]) -> Result<usize, ScheduleError> {
    assert!(!records.is_empty(), "checkpoint list must be non-empty");
    let mut chosen: Option<usize> = None;
    for (index, record) in records.iter().enumerate() {
        if record.format_rate < FORMAT_RATE_FLOOR {
            continue;
        }
        match chosen {
            Some(best) if records[best].ce <= record.ce => {}
            _ => chosen = Some(index),
        }
    }
    chosen.ok_or(ScheduleError::NoQualifyingCheckpoint)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageMode {
    SftSynthetic,
    SftReal,
    SftMixed,
    DpoPlusSft,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataRole {
    Synthetic,
    Real,
    Preference,
    Sft,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageDataset {
    pub manifest: PathBuf,
    pub role: DataRole,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage {
    pub datasets: Vec<StageDataset>,
    pub mode: StageMode,
    pub stop_rule: StopRule,
    /// real : synthetic interleave ratio for mixed stages.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mix_ratio: Option<(u32, u32)>,
    pub hyper: Hyperparameters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingPlan {
    pub stages: Vec<Stage>,
}

impl TrainingPlan {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), ScheduleError> {
        fs::write(path, self.to_json() + "\n").map_err(|source| ScheduleError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ScheduleError> {
        let text = fs::read_to_string(path).map_err(|source| ScheduleError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| ScheduleError::MalformedPlan {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }
}

fn require_manifest(path: &Path) -> Result<(), ScheduleError> {
    if path.exists() {
        Ok(())
    } else {
        Err(ScheduleError::MissingManifest(path.to_path_buf()))
    }
}

fn dataset(path: &Path, role: DataRole) -> StageDataset {
    StageDataset {
        manifest: path.to_path_buf(),
        role,
    }
}

/// Synthetic-only stage that trains until the rate decays to the
/// threshold, then a real-only stage that trains until early stopping.
pub fn emit_two_stage_plan(
    synthetic_manifest: &Path,
    real_manifest: &Path,
    hyper: &Hyperparameters,
) -> Result<TrainingPlan, ScheduleError> {
    require_manifest(synthetic_manifest)?;
    require_manifest(real_manifest)?;
    Ok(TrainingPlan {
        stages: vec![
            Stage {
                datasets: vec![dataset(synthetic_manifest, DataRole::Synthetic)],
                mode: StageMode::SftSynthetic,
                stop_rule: StopRule::LrThreshold,
                mix_ratio: None,
                hyper: hyper.clone(),
            },
            Stage {
                datasets: vec![dataset(real_manifest, DataRole::Real)],
                mode: StageMode::SftReal,
                stop_rule: StopRule::EarlyStop,
                mix_ratio: None,
                hyper: hyper.clone(),
            },
        ],
    })
}

/// Single stage interleaving real and synthetic data one-to-one.
pub fn emit_fixed_ratio_plan(
    synthetic_manifest: &Path,
    real_manifest: &Path,
    hyper: &Hyperparameters,
) -> Result<TrainingPlan, ScheduleError> {
    require_manifest(synthetic_manifest)?;
    require_manifest(real_manifest)?;
    Ok(TrainingPlan {
        stages: vec![Stage {
            datasets: vec![
                dataset(real_manifest, DataRole::Real),
                dataset(synthetic_manifest, DataRole::Synthetic),
            ],
            mode: StageMode::SftMixed,
            stop_rule: StopRule::EarlyStop,
            mix_ratio: Some((1, 1)),
            hyper: hyper.clone(),
        }],
    })
}

/// Preference tuning combined with supervised batches: 4 DPO plus 1 SFT
/// per update at the fixed DPO rate, validated every 20 steps.
pub fn emit_dpo_plan(
    pref_manifests: &[PathBuf],
    sft_manifest: &Path,
    hyper: &Hyperparameters,
) -> Result<TrainingPlan, ScheduleError> {
    assert!(
        !pref_manifests.is_empty(),
        "dpo plan needs at least one preference manifest"
    );
    for path in pref_manifests {
        require_manifest(path)?;
    }
    require_manifest(sft_manifest)?;
    let mut stage_hyper = hyper.clone();
    stage_hyper.validation_interval = 20;
    let mut datasets: Vec<StageDataset> = pref_manifests
        .iter()
        .map(|p| dataset(p, DataRole::Preference))
        .collect();
    datasets.push(dataset(sft_manifest, DataRole::Sft));
    Ok(TrainingPlan {
        stages: vec![Stage {
            datasets,
            mode: StageMode::DpoPlusSft,
            stop_rule: StopRule::EarlyStop,
            mix_ratio: None,
            hyper: stage_hyper,
        }],
    })
}

/// One step of a simulated trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub step: u32,
    pub lr: f64,
    pub loss: Option<f64>,
    pub transition: Transition,
}

/// Drives the scheduler against a validation-loss trace.
///
/// Losses are consumed one per validation (every `validation_interval`
/// steps). The run ends when the stop rule fires or the trace is
/// exhausted after warmup.
pub fn simulate_trajectory(
    hyper: &Hyperparameters,
    rule: StopRule,
    losses: &[f64],
) -> Vec<TrajectoryPoint> {
    let mut points = Vec::new();
    let mut state = LrSchedulerState::new();
    let mut trace = losses.iter().copied();
    let mut pending = trace.next();
    loop {
        let validates = (state.step_index + 1).is_multiple_of(hyper.validation_interval.max(1));
        let observed = if validates { pending } else { None };
        if validates && pending.is_some() {
            pending = trace.next();
        }
        state = scheduler_step(&state, observed, hyper);
        let transition = stage_transition(&state, hyper, rule);
        points.push(TrajectoryPoint {
            step: state.step_index,
            lr: state.current_lr,
            loss: observed,
            transition,
        });
        if transition != Transition::Continue {
            break;
        }
        if pending.is_none() && state.step_index >= hyper.warmup_steps {
            break;
        }
    }
    points
}
