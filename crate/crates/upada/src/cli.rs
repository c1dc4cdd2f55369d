//! Subcommands. Every output goes under `--out`; nothing is read from the
//! environment.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use upada_core::eval::{self, ProbeKind};
use upada_core::faces::{generate_dataset, split_loso, FactorSpec};
use upada_core::gradcheck::{self, CheckedLoss};
use upada_core::grid::{self, CellOutcome, CellRun, GridCell};
use upada_core::model::init_bundle;
use upada_core::train::{describe, AblationMode, TrainConfig};

use crate::checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, RunInfo};
use crate::config::{parse_factor_spec, parse_train_config, render_factor_spec, render_train_config};
use crate::dataset::{dataset_hash, load_dataset, save_dataset};
use crate::error::{io, Error, Result};
use crate::manifest::RunManifest;
use crate::tables::{aggregate_csv, embeddings_csv, history_csv, metrics_csv, probes_csv, write_file};

#[derive(Debug, Parser)]
#[command(name = "upada", version, about = "Pose-aware adversarial domain adaptation on synthetic faces")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic face dataset.
    Generate(GenerateArgs),
    /// Train one held-out subject.
    Train(TrainArgs),
    /// Run the ablation grid and write aggregate tables.
    Ablate(AblateArgs),
    /// Fit domain and disentanglement probes on a checkpoint's features.
    Probe(CheckpointArgs),
    /// Write every sample's features as CSV.
    Export(CheckpointArgs),
    /// Check every loss gradient against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// `key = value` dataset spec; defaults when omitted.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Overrides the spec's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// `key = value` training config; defaults when omitted.
    #[arg(long, conflicts_with = "resume")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Held-out (target) subject.
    #[arg(long, required_unless_present = "resume")]
    pub subject: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from a checkpoint written by an earlier `train`.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Stop after this many scheduled steps and write a resumable checkpoint.
    #[arg(long)]
    pub max_steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated modes: R, R+adv, R+adv+cross, full.
    #[arg(long, value_delimiter = ',', default_value = "R,R+adv,R+adv+cross,full")]
    pub modes: Vec<AblationMode>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    pub subjects: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Grid cells trained in parallel.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct CheckpointArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Scales every analytic gradient (a deliberately broken check).
    #[arg(long, hide = true)]
    pub fault: Option<f64>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => generate(a),
        Command::Train(a) => train(a),
        Command::Ablate(a) => ablate(a),
        Command::Probe(a) => probe(a),
        Command::Export(a) => export(a),
        Command::Gradcheck(a) => gradcheck_cmd(a),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io(path))
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(p) => parse_train_config(&read_text(p)?),
        None => Ok(TrainConfig::default()),
    }
}

fn mkdir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io(dir))
}

fn generate(a: GenerateArgs) -> Result<()> {
    let mut spec = match &a.spec {
        Some(p) => parse_factor_spec(&read_text(p)?)?,
        None => FactorSpec::default(),
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    spec.validate()?;
    let ds = generate_dataset(&spec)?;
    let m = save_dataset(&ds, &a.out)?;
    write_file(&a.out.join("spec.txt"), render_factor_spec(&spec).as_bytes())?;
    println!(
        "generated {} samples ({} subjects x {} expressions x {} poses x {}) in {}",
        m.count,
        spec.n_subjects,
        spec.n_expressions,
        spec.n_poses,
        spec.samples_per_cell,
        a.out.display()
    );
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let ds = load_dataset(&a.data)?;
    let hash = dataset_hash(&a.data)?;
    mkdir(&a.out)?;
    let mut run = match &a.resume {
        Some(path) => {
            let ck = read_checkpoint(path)?;
            let info = ck
                .run
                .clone()
                .ok_or_else(|| Error::format(path, "run", "checkpoint has no run information"))?;
            if info.dataset_sha256 != hash {
                return Err(Error::format(path, "run.dataset_sha256", "checkpoint was trained on a different dataset"));
            }
            if a.subject.is_some_and(|s| s != info.subject) {
                return Err(Error::config("subject", format!("checkpoint holds out subject {}", info.subject)));
            }
            let cell = GridCell {
                mode: info.mode,
                subject: info.subject,
                seed: info.seed,
            };
            CellRun::resume(&ds, cell, ck.into_state()?, info.recon_probe_init)?
        }
        None => {
            let config = load_config(a.config.as_deref())?;
            let cell = GridCell {
                mode: config.mode,
                subject: a.subject.expect("required without --resume"),
                seed: config.seed,
            };
            CellRun::start(&config, &ds, cell)?
        }
    };
    let user_config = TrainConfig {
        seed: run.cell.seed,
        ..run.state.config.clone()
    };
    println!("{} subject={}", describe(&user_config), run.cell.subject);
    let mut manifest = RunManifest::new("train", render_train_config(&user_config), hash.clone());
    manifest.runs.push(run.cell.run_id());

    let mut steps = 0;
    while !run.state.finished() && a.max_steps.is_none_or(|m| steps < m) {
        run.step()?;
        steps += 1;
    }
    let info = RunInfo {
        mode: run.cell.mode,
        subject: run.cell.subject,
        seed: run.cell.seed,
        recon_probe_init: run.recon_probe_init,
        dataset_sha256: hash,
    };
    write_checkpoint(&a.out.join("checkpoint.bin"), &Checkpoint::from_state(&run.state, Some(info)))?;
    write_file(&a.out.join("history.csv"), &history_csv(&run.state.history))?;
    manifest.outputs.extend(["checkpoint.bin".into(), "history.csv".into()]);
    if run.state.finished() {
        let record = run.evaluate()?;
        write_file(&a.out.join("metrics.csv"), &metrics_csv(std::slice::from_ref(&record), ds.spec.n_poses))?;
        manifest.outputs.push("metrics.csv".into());
        println!(
            "target accuracy {:.1}% (recon probe {:.4} -> {:.4})",
            100.0 * record.acc_overall,
            record.recon_probe_init,
            record.recon_probe_final
        );
    } else {
        println!(
            "stopped at epoch {} step {}; continue with --resume {}",
            run.state.epoch,
            run.state.step_in_epoch,
            a.out.join("checkpoint.bin").display()
        );
    }
    manifest.write(&a.out)
}

fn ablate(a: AblateArgs) -> Result<()> {
    let config = load_config(a.config.as_deref())?;
    let ds = load_dataset(&a.data)?;
    let hash = dataset_hash(&a.data)?;
    if a.jobs == 0 {
        return Err(Error::config("jobs", "must be at least 1"));
    }
    mkdir(&a.out)?;
    let cells = grid::cells(&a.modes, &a.subjects, &a.seeds);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs)
        .build()
        .map_err(|e| Error::Experiment(e.to_string()))?;
    let outcomes: Vec<CellOutcome> = pool.install(|| {
        cells
            .par_iter()
            .map(|&cell| {
                let result = grid::run_cell(&config, &ds, cell);
                match &result {
                    Ok(r) => eprintln!("{}: accuracy {:.1}%", cell.run_id(), 100.0 * r.acc_overall),
                    Err(e) => eprintln!("{}: failed: {e}", cell.run_id()),
                }
                CellOutcome { cell, result }
            })
            .collect()
    });

    let records: Vec<_> = outcomes.iter().filter_map(|o| o.result.as_ref().ok().cloned()).collect();
    let failures: Vec<_> = outcomes
        .iter()
        .filter_map(|o| o.result.as_ref().err().map(|e| (o.cell.run_id(), e.to_string())))
        .collect();
    let p = ds.spec.n_poses;
    let summaries = grid::aggregate(&records);
    let table = grid::pose_table(&summaries, p);
    write_file(&a.out.join("metrics.csv"), &metrics_csv(&records, p))?;
    write_file(&a.out.join("aggregate.csv"), &aggregate_csv(&summaries, p))?;
    write_file(&a.out.join("table.txt"), table.as_bytes())?;
    let mut manifest = RunManifest::new("ablate", render_train_config(&config), hash);
    manifest.runs = cells.iter().map(GridCell::run_id).collect();
    manifest.outputs.extend(["metrics.csv", "aggregate.csv", "table.txt"].map(String::from));
    if !failures.is_empty() {
        let text: String = failures.iter().map(|(id, e)| format!("{id}: {e}\n")).collect();
        write_file(&a.out.join("failures.txt"), text.as_bytes())?;
        manifest.outputs.push("failures.txt".into());
    }
    manifest.write(&a.out)?;
    print!("{table}");
    println!("{} of {} cells succeeded", records.len(), outcomes.len());
    if records.is_empty() {
        return Err(Error::Experiment("every grid cell failed".into()));
    }
    Ok(())
}

/// Checkpoint, its cell's split, and the cell's evaluation seed.
fn load_cell(a: &CheckpointArgs) -> Result<(Checkpoint, upada_core::faces::LosoSplit, u64)> {
    let ck = read_checkpoint(&a.checkpoint)?;
    let info = ck
        .run
        .clone()
        .ok_or_else(|| Error::format(&a.checkpoint, "run", "checkpoint has no run information"))?;
    let ds = load_dataset(&a.data)?;
    if dataset_hash(&a.data)? != info.dataset_sha256 {
        return Err(Error::format(&a.checkpoint, "run.dataset_sha256", "checkpoint was trained on a different dataset"));
    }
    let cell = GridCell {
        mode: info.mode,
        subject: info.subject,
        seed: info.seed,
    };
    let split = split_loso(&ds, cell.subject, cell.stream_seed())?;
    Ok((ck, split, cell.stream_seed()))
}

fn probe(a: CheckpointArgs) -> Result<()> {
    let (ck, split, seed) = load_cell(&a)?;
    mkdir(&a.out)?;
    let (dom_e, dom_p) = eval::domain_confusion_report(&ck.bundle, &split.source, &split.target_train, seed)?;
    let [pose_fe, expr_fp, _] = eval::disentanglement_probes(&ck.bundle, &split.source, seed)?;
    let probes = [dom_e, dom_p, pose_fe, expr_fp];
    write_file(&a.out.join("probes.csv"), &probes_csv(&probes))?;
    for p in &probes {
        println!(
            "{:<14} test {:>6.1}%  (chance {:.1}%)",
            p.kind.as_str(),
            100.0 * p.test_acc,
            100.0 * p.chance
        );
    }
    debug_assert!(probes.iter().all(|p| p.kind != ProbeKind::ExprOnFe));
    Ok(())
}

fn export(a: CheckpointArgs) -> Result<()> {
    let (ck, split, _) = load_cell(&a)?;
    mkdir(&a.out)?;
    let csv = embeddings_csv(&ck.bundle, &[&split.source, split.target_train.reveal(), &split.target_test])?;
    write_file(&a.out.join("embeddings.csv"), &csv)?;
    println!(
        "exported {} samples",
        split.source.len() + split.target_train.len() + split.target_test.len()
    );
    Ok(())
}

fn gradcheck_cmd(a: GradcheckArgs) -> Result<()> {
    let bundle = init_bundle(a.seed, gradcheck::tiny_arch())?;
    let mut failed = Vec::new();
    println!("{:<9} {:>14} {:>8}", "loss", "max_rel_error", "checked");
    for loss in CheckedLoss::ALL {
        let c = gradcheck::check_loss(&bundle, a.seed, loss, a.fault)?;
        let status = if c.passed() { "ok" } else { "FAIL" };
        println!("{:<9} {:>14.3e} {:>8} {status}", loss.as_str(), c.max_rel_error, c.checked);
        if !c.passed() {
            failed.push(loss.as_str());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Experiment(format!(
            "gradient check failed for {} (tolerance {:e})",
            failed.join(", "),
            gradcheck::TOLERANCE
        )))
    }
}
