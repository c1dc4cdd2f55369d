//! Ablation grid: every (mode, held-out subject, seed) cell trained and
//! evaluated, then aggregated per mode.
//!
//! Within a grid, the split, initialization and batch streams of a cell depend
//! on (seed, subject) only, so the four modes of one (subject, seed) start
//! from the same weights and see the same batches until their updates differ.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::error::Result;
use crate::eval::{self, MetricsRecord, ProbeKind};
use crate::faces::{pan_angle, split_loso, Dataset, LosoSplit};
use crate::rng;
use crate::train::{AblationMode, TrainConfig, TrainData, TrainState};

/// Batch size of the fixed reconstruction probe batch.
pub const RECON_PROBE_BATCH: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridCell {
    pub mode: AblationMode,
    pub subject: usize,
    pub seed: u64,
}

impl GridCell {
    pub fn run_id(&self) -> String {
        format!("{}-s{}-seed{}", self.mode, self.subject, self.seed)
    }

    /// Seed shared by every mode of this (subject, seed) pair.
    pub fn stream_seed(&self) -> u64 {
        rng::derive(self.seed, &[0x4752_4944, self.subject as u64])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellOutcome {
    pub cell: GridCell,
    pub result: core::result::Result<MetricsRecord, crate::Error>,
}

/// Mode-major enumeration of the grid.
pub fn cells(modes: &[AblationMode], subjects: &[usize], seeds: &[u64]) -> Vec<GridCell> {
    let mut out = Vec::with_capacity(modes.len() * subjects.len() * seeds.len());
    for &mode in modes {
        for &subject in subjects {
            for &seed in seeds {
                out.push(GridCell { mode, subject, seed });
            }
        }
    }
    out
}

/// One cell in progress: its split, training state and the reconstruction
/// probe value at initialization.
#[derive(Debug, Clone)]
pub struct CellRun {
    pub cell: GridCell,
    pub split: LosoSplit,
    pub state: TrainState,
    pub recon_probe_init: f64,
}

impl CellRun {
    pub fn start(base: &TrainConfig, dataset: &Dataset, cell: GridCell) -> Result<Self> {
        let s = cell.stream_seed();
        let split = split_loso(dataset, cell.subject, s)?;
        let config = TrainConfig {
            mode: cell.mode,
            seed: s,
            ..base.clone()
        };
        let state = TrainState::for_data(config, data_of(&split))?;
        let recon_probe_init = eval::recon_probe(&state.bundle, data_of(&split), RECON_PROBE_BATCH, s)?;
        Ok(Self {
            cell,
            split,
            state,
            recon_probe_init,
        })
    }

    /// Rebinds a restored training state to its cell.
    pub fn resume(dataset: &Dataset, cell: GridCell, state: TrainState, recon_probe_init: f64) -> Result<Self> {
        if state.config.seed != cell.stream_seed() || state.config.mode != cell.mode {
            return Err(crate::Error::Usage("training state does not belong to this grid cell".into()));
        }
        Ok(Self {
            split: split_loso(dataset, cell.subject, cell.stream_seed())?,
            cell,
            state,
            recon_probe_init,
        })
    }

    pub fn data(&self) -> TrainData<'_> {
        data_of(&self.split)
    }

    /// Runs one scheduled step.
    pub fn step(&mut self) -> Result<()> {
        self.state.advance(data_of(&self.split))
    }

    pub fn train(&mut self) -> Result<()> {
        self.state.run(data_of(&self.split))
    }

    pub fn evaluate(&self) -> Result<MetricsRecord> {
        let s = self.cell.stream_seed();
        let bundle = &self.state.bundle;
        let split = &self.split;
        let acc = eval::evaluate_accuracy(bundle, &split.target_test)?;
        let (dom_e, dom_p) = eval::domain_confusion_report(bundle, &split.source, &split.target_train, s)?;
        let [pose_fe, expr_fp, expr_fe] = eval::disentanglement_probes(bundle, &split.source, s)?;
        let recon_probe_final = eval::recon_probe(bundle, self.data(), RECON_PROBE_BATCH, s)?;
        Ok(MetricsRecord {
            run_id: self.cell.run_id(),
            mode: self.cell.mode,
            subject: self.cell.subject,
            seed: self.cell.seed,
            acc_overall: acc.overall,
            acc_per_pose: acc.per_pose,
            final_losses: self.state.history.last().copied().unwrap_or_default(),
            probes: alloc::vec![dom_e, dom_p, pose_fe, expr_fp, expr_fe],
            pairing: self.state.pairing,
            recon_probe_init: self.recon_probe_init,
            recon_probe_final,
        })
    }
}

fn data_of(split: &LosoSplit) -> TrainData<'_> {
    TrainData {
        source: &split.source,
        target: &split.target_train,
    }
}

/// Trains and evaluates one cell.
pub fn run_cell(base: &TrainConfig, dataset: &Dataset, cell: GridCell) -> Result<MetricsRecord> {
    let mut run = CellRun::start(base, dataset, cell)?;
    run.train()?;
    run.evaluate()
}

/// Runs every cell in order; failures are recorded and the grid continues.
pub fn run_ablation_grid(
    base: &TrainConfig,
    dataset: &Dataset,
    modes: &[AblationMode],
    subjects: &[usize],
    seeds: &[u64],
) -> Vec<CellOutcome> {
    cells(modes, subjects, seeds)
        .into_iter()
        .map(|cell| CellOutcome {
            cell,
            result: run_cell(base, dataset, cell),
        })
        .collect()
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, crate::math::sqrt(var))
}

/// Per-mode aggregate over subjects and seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSummary {
    pub mode: AblationMode,
    pub runs: usize,
    pub acc_mean: f64,
    pub acc_std: f64,
    pub per_pose_mean: Vec<f64>,
    pub probe_means: Vec<(ProbeKind, f64)>,
    pub recon_ratio_mean: f64,
}

impl ModeSummary {
    pub fn probe(&self, kind: ProbeKind) -> Option<f64> {
        self.probe_means.iter().find(|(k, _)| *k == kind).map(|&(_, v)| v)
    }
}

/// Groups records by mode (in [`AblationMode::ALL`] order).
pub fn aggregate(records: &[MetricsRecord]) -> Vec<ModeSummary> {
    let mut out = Vec::new();
    for mode in AblationMode::ALL {
        let rs: Vec<&MetricsRecord> = records.iter().filter(|r| r.mode == mode).collect();
        if rs.is_empty() {
            continue;
        }
        let accs: Vec<f64> = rs.iter().map(|r| r.acc_overall).collect();
        let (acc_mean, acc_std) = mean_std(&accs);
        let p = rs[0].acc_per_pose.len();
        let per_pose_mean = (0..p)
            .map(|j| mean_std(&rs.iter().map(|r| r.acc_per_pose[j]).collect::<Vec<_>>()).0)
            .collect();
        let probe_means = ProbeKind::ALL
            .iter()
            .filter_map(|&k| {
                let v: Vec<f64> = rs.iter().filter_map(|r| r.probe(k).map(|p| p.test_acc)).collect();
                (!v.is_empty()).then(|| (k, mean_std(&v).0))
            })
            .collect();
        let ratios: Vec<f64> = rs
            .iter()
            .map(|r| r.recon_probe_final / r.recon_probe_init.max(1e-12))
            .collect();
        out.push(ModeSummary {
            mode,
            runs: rs.len(),
            acc_mean,
            acc_std,
            per_pose_mean,
            probe_means,
            recon_ratio_mean: mean_std(&ratios).0,
        });
    }
    out
}

/// Per-pose accuracy table (percent), one row per mode, pose columns
/// labelled by pan angle, then the average.
pub fn pose_table(summaries: &[ModeSummary], n_poses: usize) -> String {
    let spec = crate::faces::FactorSpec {
        n_poses,
        ..Default::default()
    };
    let mut s = String::new();
    let _ = write!(s, "{:<14}", "Method");
    for p in 0..n_poses {
        let deg = libm::round(pan_angle(&spec, p) * 180.0 / core::f64::consts::PI);
        let _ = write!(s, "{:>8}", format!("{deg}°"));
    }
    let _ = writeln!(s, "{:>8}", "Avg.");
    for m in summaries {
        let _ = write!(s, "{:<14}", m.mode.as_str());
        for a in &m.per_pose_mean {
            let _ = write!(s, "{:>8.1}", 100.0 * a);
        }
        let _ = writeln!(s, "{:>8.1}", 100.0 * m.acc_mean);
    }
    s
}
