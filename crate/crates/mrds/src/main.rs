//! Pipeline command line: anonymize corpora, synthesize summaries and
//! dialogues, build preference pairs, emit training plans, evaluate, and
//! run the statistical comparisons.
//!
//! Configuration precedence is flags over environment over config file.
//! Every command honors `--dry-run`: inputs are loaded and validated, the
//! backend is never called, and nothing is written. Errors leave as a
//! single JSON object on stderr with a non-zero exit.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use mrds::config::PipelineConfig;
use mrds::corpus::{load_pairs, save_pairs, PairedSample};
use mrds::eval::stats::ttest;
use mrds::eval::{summarize_and_score, SummarizeMode};
use mrds::pipeline::{
    anonymize_stage, build_prefs_stage, load_jsonl, save_jsonl, synth_dialogues_stage,
    synth_summaries_stage, DialogueMode, PrefMode, RawRecord, SummarySeed, SynthLogRecord,
};
use mrds::preference::{export_dpo, export_dpo_separated, ExportStats, PreferencePair};
use mrds::schedule::{
    emit_dpo_plan, emit_fixed_ratio_plan, emit_two_stage_plan, simulate_trajectory, StopRule,
};

#[derive(Parser)]
#[command(
    name = "mrds",
    version,
    about = "Dialogue-summarization data synthesis pipeline"
)]
struct Cli {
    /// JSON config file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Backend base URL, or `mock:<script.json>` for scripted runs.
    #[arg(long, global = true)]
    backend_url: Option<String>,
    #[arg(long, global = true)]
    model: Option<String>,
    /// Seed for all sampling and reseeding decisions.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Concurrent backend requests for batch stages.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Use only the first N real pairs (the few-shot budget).
    #[arg(long, global = true)]
    shots: Option<usize>,
    /// Validate inputs, call no backend, write nothing.
    #[arg(long, global = true)]
    dry_run: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse raw `Name: text` transcripts into anonymized training pairs.
    Anonymize {
        /// JSONL of {id, dialogue, summary} records.
        #[arg(long)]
        input: PathBuf,
        /// Output JSONL of anonymized pairs.
        #[arg(long)]
        output: PathBuf,
    },
    /// Extract a topic per real pair and synthesize new summaries from it.
    SynthSummaries {
        /// Real-pair JSONL (from `anonymize`).
        #[arg(long)]
        corpus: PathBuf,
        /// Output JSONL of summary seeds.
        #[arg(long)]
        output: PathBuf,
        /// Summary candidates generated per topic.
        #[arg(long, default_value_t = 4)]
        per_topic: u32,
        /// Per-record audit log JSONL.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Synthesize a dialogue for every summary seed.
    SynthDialogues {
        /// Summary-seed JSONL (from `synth-summaries`).
        #[arg(long)]
        seeds: PathBuf,
        /// Real-pair JSONL supplying the length distribution.
        #[arg(long)]
        corpus: PathBuf,
        /// Output JSONL of synthetic pairs.
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value_t = DialogueModeArg::Ids)]
        mode: DialogueModeArg,
        /// Repair rounds per dialogue before giving up.
        #[arg(long)]
        max_iterations: Option<u32>,
        /// Per-record audit log JSONL.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Build DPO preference pairs from summary seeds.
    BuildPrefs {
        /// Summary-seed JSONL (from `synth-summaries`).
        #[arg(long)]
        seeds: PathBuf,
        /// Real-pair JSONL supplying the length distribution.
        #[arg(long)]
        corpus: PathBuf,
        /// Output file, or directory with --separated.
        #[arg(long)]
        output: PathBuf,
        /// Write format and content pairs to separate files.
        #[arg(long, conflicts_with = "joint")]
        separated: bool,
        /// Build one repaired-vs-raw pair per summary instead.
        #[arg(long)]
        joint: bool,
        /// One-shot candidates drawn per summary.
        #[arg(long)]
        samples_per_summary: Option<u32>,
        /// Repair rounds per dialogue before giving up.
        #[arg(long)]
        max_iterations: Option<u32>,
        /// Per-record audit log JSONL.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Emit a training plan document.
    PlanTraining {
        #[arg(long, value_enum)]
        plan: PlanArg,
        /// Synthetic-pair manifest (two-stage, fixed-ratio).
        #[arg(long)]
        synthetic: Option<PathBuf>,
        /// Real-pair manifest (two-stage, fixed-ratio).
        #[arg(long)]
        real: Option<PathBuf>,
        /// Preference-pair manifests (dpo); repeatable.
        #[arg(long)]
        prefs: Vec<PathBuf>,
        /// SFT manifest mixed into DPO batches (dpo).
        #[arg(long)]
        sft: Option<PathBuf>,
        /// Output plan JSON.
        #[arg(long)]
        output: PathBuf,
    },
    /// Summarize a corpus with the backend and report ROUGE.
    Evaluate {
        /// Evaluation pairs JSONL.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value_t = EvalModeArg::ZeroShot)]
        mode: EvalModeArg,
        /// Worked examples for --mode icl.
        #[arg(long, default_value_t = 2)]
        icl_k: usize,
        /// Pair JSONL supplying the in-context examples.
        #[arg(long)]
        pool: Option<PathBuf>,
        /// Report JSON path; stdout when absent.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Two-sample t-test between two runs of per-seed scores.
    Stats {
        /// First run: text file of numbers.
        #[arg(long)]
        a: PathBuf,
        /// Second run: text file of numbers.
        #[arg(long)]
        b: PathBuf,
    },
    /// Replay a validation-loss trace through the LR scheduler.
    SimulateScheduler {
        /// Text file of validation losses, one per validation.
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, value_enum, default_value_t = StopRuleArg::EarlyStop)]
        stop_rule: StopRuleArg,
        /// Trajectory JSON path; stdout when absent.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DialogueModeArg {
    OneShot,
    Ids,
}

impl From<DialogueModeArg> for DialogueMode {
    fn from(arg: DialogueModeArg) -> Self {
        match arg {
            DialogueModeArg::OneShot => DialogueMode::OneShot,
            DialogueModeArg::Ids => DialogueMode::Ids,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EvalModeArg {
    ZeroShot,
    Icl,
    Adapter,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PlanArg {
    TwoStage,
    FixedRatio,
    Dpo,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StopRuleArg {
    LrThreshold,
    EarlyStop,
}

impl From<StopRuleArg> for StopRule {
    fn from(arg: StopRuleArg) -> Self {
        match arg {
            StopRuleArg::LrThreshold => StopRule::LrThreshold,
            StopRuleArg::EarlyStop => StopRule::EarlyStop,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": format!("{e:#}") }));
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<serde_json::Value> {
    let mut config = PipelineConfig::load(cli.config.as_deref())?;
    if let Some(url) = &cli.backend_url {
        config.backend_url = url.clone();
    }
    if let Some(model) = &cli.model {
        config.model = model.clone();
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(workers) = cli.workers {
        config.workers = workers;
    }
    if let Some(shots) = cli.shots {
        config.shots = Some(shots);
    }
    let dry_run = cli.dry_run;
    match cli.command {
        Command::Anonymize { input, output } => {
            let records: Vec<RawRecord> = load_jsonl(&input)?;
            let pairs = anonymize_stage(&records)?;
            if dry_run {
                return Ok(dry(json!({ "command": "anonymize", "records": pairs.len() })));
            }
            save_pairs(&pairs, &output)?;
            Ok(json!({
                "command": "anonymize",
                "records": pairs.len(),
                "output": output,
            }))
        }
        Command::SynthSummaries {
            corpus,
            output,
            per_topic,
            log,
        } => {
            let reals = load_reals(&corpus, &config)?;
            if dry_run {
                return Ok(dry(json!({
                    "command": "synth-summaries",
                    "real_pairs": reals.len(),
                })));
            }
            let backend = config.build_backend()?;
            let (seeds, run_log) = synth_summaries_stage(
                backend.as_ref(),
                &reals,
                per_topic,
                config.seed,
                config.workers,
            )?;
            save_jsonl(&seeds, &output)?;
            write_log(&run_log, log.as_deref())?;
            Ok(json!({
                "command": "synth-summaries",
                "seeds": seeds.len(),
                "kept": total_kept(&run_log),
                "dropped": total_dropped(&run_log),
                "output": output,
            }))
        }
        Command::SynthDialogues {
            seeds,
            corpus,
            output,
            mode,
            max_iterations,
            log,
        } => {
            let seed_records: Vec<SummarySeed> = load_jsonl(&seeds)?;
            let reals = load_reals(&corpus, &config)?;
            let mut budget = config.budget;
            if let Some(n) = max_iterations {
                budget.max_iterations = n;
            }
            if dry_run {
                return Ok(dry(json!({
                    "command": "synth-dialogues",
                    "seeds": seed_records.len(),
                    "real_pairs": reals.len(),
                })));
            }
            let backend = config.build_backend()?;
            let (pairs, run_log) = synth_dialogues_stage(
                backend.as_ref(),
                &seed_records,
                &reals,
                mode.into(),
                &budget,
                config.seed,
                config.workers,
            )?;
            save_pairs(&pairs, &output)?;
            write_log(&run_log, log.as_deref())?;
            let kept = total_kept(&run_log);
            let dropped = total_dropped(&run_log);
            Ok(json!({
                "command": "synth-dialogues",
                "pairs": pairs.len(),
                "kept": kept,
                "dropped": dropped,
                "format_rate": kept as f64 / (kept + dropped).max(1) as f64,
                "output": output,
            }))
        }
        Command::BuildPrefs {
            seeds,
            corpus,
            output,
            separated,
            joint,
            samples_per_summary,
            max_iterations,
            log,
        } => {
            let seed_records: Vec<SummarySeed> = load_jsonl(&seeds)?;
            let reals = load_reals(&corpus, &config)?;
            let mut budget = config.budget;
            if let Some(n) = samples_per_summary {
                budget.samples_per_summary = n;
            }
            if let Some(n) = max_iterations {
                budget.max_iterations = n;
            }
            if dry_run {
                return Ok(dry(json!({
                    "command": "build-prefs",
                    "seeds": seed_records.len(),
                    "real_pairs": reals.len(),
                })));
            }
            let mode = if joint {
                PrefMode::Joint
            } else {
                PrefMode::Separated
            };
            let backend = config.build_backend()?;
            let (pairs, run_log) = build_prefs_stage(
                backend.as_ref(),
                &seed_records,
                &reals,
                mode,
                &budget,
                config.seed,
                config.workers,
            )?;
            let stats = export_pairs(&pairs, &output, separated)?;
            write_log(&run_log, log.as_deref())?;
            Ok(json!({
                "command": "build-prefs",
                "pairs": stats.written,
                "duplicates": stats.duplicates,
                "files": stats.files,
            }))
        }
        Command::PlanTraining {
            plan,
            synthetic,
            real,
            prefs,
            sft,
            output,
        } => {
            let plan_doc = match plan {
                PlanArg::TwoStage => {
                    let synthetic = require(synthetic, "--synthetic")?;
                    let real = require(real, "--real")?;
                    emit_two_stage_plan(&synthetic, &real, &config.hyper)?
                }
                PlanArg::FixedRatio => {
                    let synthetic = require(synthetic, "--synthetic")?;
                    let real = require(real, "--real")?;
                    emit_fixed_ratio_plan(&synthetic, &real, &config.hyper)?
                }
                PlanArg::Dpo => {
                    if prefs.is_empty() {
                        bail!("--plan dpo needs at least one --prefs manifest");
                    }
                    let sft = require(sft, "--sft")?;
                    emit_dpo_plan(&prefs, &sft, &config.hyper)?
                }
            };
            if dry_run {
                return Ok(dry(json!({
                    "command": "plan-training",
                    "stages": plan_doc.stages.len(),
                })));
            }
            plan_doc.save(&output)?;
            Ok(json!({
                "command": "plan-training",
                "stages": plan_doc.stages.len(),
                "output": output,
            }))
        }
        Command::Evaluate {
            corpus,
            mode,
            icl_k,
            pool,
            output,
        } => {
            let targets = load_pairs(&corpus)
                .with_context(|| format!("loading {}", corpus.display()))?;
            let pool_pairs = match &pool {
                Some(path) => {
                    load_pairs(path).with_context(|| format!("loading {}", path.display()))?
                }
                None => Vec::new(),
            };
            let mode = match mode {
                EvalModeArg::ZeroShot => SummarizeMode::ZeroShot,
                EvalModeArg::Icl => {
                    if pool_pairs.len() < icl_k {
                        bail!(
                            "--mode icl needs --pool with at least {icl_k} pairs, got {}",
                            pool_pairs.len()
                        );
                    }
                    SummarizeMode::Icl { k: icl_k }
                }
                EvalModeArg::Adapter => SummarizeMode::AdapterPrompt,
            };
            if dry_run {
                return Ok(dry(json!({
                    "command": "evaluate",
                    "targets": targets.len(),
                    "pool": pool_pairs.len(),
                })));
            }
            let backend = config.build_backend()?;
            let report = summarize_and_score(
                backend.as_ref(),
                &targets,
                mode,
                &pool_pairs,
                config.workers,
            )?;
            let rendered = serde_json::to_string_pretty(&report).expect("report serializes");
            match output {
                Some(path) => {
                    std::fs::write(&path, rendered + "\n")
                        .with_context(|| format!("writing {}", path.display()))?;
                    Ok(json!({
                        "command": "evaluate",
                        "scored": report.per_sample.len(),
                        "skipped": report.skipped.len(),
                        "r1_f1": report.corpus.r1.f1,
                        "output": path,
                    }))
                }
                None => Ok(serde_json::to_value(&report).expect("report serializes")),
            }
        }
        Command::Stats { a, b } => {
            let run_a = read_numbers(&a)?;
            let run_b = read_numbers(&b)?;
            if run_a.len() < 2 || run_b.len() < 2 {
                bail!(
                    "each run needs at least 2 scores, got {} and {}",
                    run_a.len(),
                    run_b.len()
                );
            }
            if dry_run {
                return Ok(dry(json!({
                    "command": "stats",
                    "n_a": run_a.len(),
                    "n_b": run_b.len(),
                })));
            }
            let result = ttest(&run_a, &run_b)?;
            Ok(serde_json::to_value(result).expect("result serializes"))
        }
        Command::SimulateScheduler {
            trace,
            stop_rule,
            output,
        } => {
            let losses = read_numbers(&trace)?;
            if losses.is_empty() {
                bail!("trace {} holds no losses", trace.display());
            }
            if dry_run {
                return Ok(dry(json!({
                    "command": "simulate-scheduler",
                    "losses": losses.len(),
                })));
            }
            let points = simulate_trajectory(&config.hyper, stop_rule.into(), &losses);
            let rendered =
                serde_json::to_string_pretty(&points).expect("trajectory serializes");
            match output {
                Some(path) => {
                    std::fs::write(&path, rendered + "\n")
                        .with_context(|| format!("writing {}", path.display()))?;
                    let last = points.last();
                    Ok(json!({
                        "command": "simulate-scheduler",
                        "steps": points.len(),
                        "final_lr": last.map(|p| p.lr),
                        "final_transition": last.map(|p| p.transition),
                        "output": path,
                    }))
                }
                None => Ok(serde_json::to_value(&points).expect("trajectory serializes")),
            }
        }
    }
}

fn dry(mut value: serde_json::Value) -> serde_json::Value {
    value["dry_run"] = json!(true);
    value
}

fn require(path: Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    path.ok_or_else(|| anyhow::anyhow!("{flag} is required for this plan"))
}

/// Real pairs, truncated to the configured few-shot budget.
fn load_reals(path: &Path, config: &PipelineConfig) -> Result<Vec<PairedSample>> {
    let mut reals =
        load_pairs(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(shots) = config.shots {
        reals.truncate(shots);
    }
    if reals.is_empty() {
        bail!("{} holds no pairs", path.display());
    }
    Ok(reals)
}

fn write_log(records: &[SynthLogRecord], path: Option<&Path>) -> Result<()> {
    if let Some(path) = path {
        save_jsonl(records, path)?;
    }
    Ok(())
}

fn total_kept(records: &[SynthLogRecord]) -> u64 {
    records.iter().map(|r| u64::from(r.kept)).sum()
}

fn total_dropped(records: &[SynthLogRecord]) -> u64 {
    records.iter().map(|r| u64::from(r.dropped)).sum()
}

fn export_pairs(
    pairs: &[PreferencePair],
    output: &Path,
    separated: bool,
) -> Result<ExportStats> {
    if separated {
        std::fs::create_dir_all(output)
            .with_context(|| format!("creating {}", output.display()))?;
        Ok(export_dpo_separated(pairs, output)?)
    } else {
        Ok(export_dpo(pairs, output)?)
    }
}

/// Whitespace- or comma-separated numbers; `#` lines are comments.
fn read_numbers(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut values = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        for token in line.split(|c: char| c == ',' || c.is_whitespace()) {
            if token.is_empty() {
                continue;
            }
            let value: f64 = token
                .parse()
                .with_context(|| format!("{}: not a number: {token:?}", path.display()))?;
            values.push(value);
        }
    }
    Ok(values)
}
