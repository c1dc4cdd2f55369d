//! Three-phase alternating optimization.
//!
//! Each epoch runs `k1` phase-1 steps (encoders and expression classifier),
//! `k2` phase-2 steps (cross-domain reconstruction) and `k3` phase-3 steps
//! (pose classifier and domain discriminators). Every sub-update is its own
//! optimizer step over an explicit set of components; everything else is
//! frozen on that step's tape.
//!
//! | step        | loss                        | updated            | modes            |
//! |-------------|-----------------------------|--------------------|------------------|
//! | 1a          | `α·l_e + l_p`               | `E_s`, `R`         | all              |
//! | 1b          | `γ·l_cross`                 | `E_s`              | `R+adv+cross`, full |
//! | 1c          | `β·l_adv` (encoder side)    | `E_s`, `E_t`       | `R+adv` and up   |
//! | 2           | `η·l_clc`                   | `E_s`, `E_t`, `G_s`, `G_t` | full     |
//! | 3a          | `l_p`                       | `D_p`              | all              |
//! | 3b          | `l_adv` (discriminator side)| `D_de`, `D_dp`     | `R+adv` and up   |

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::faces::{Dataset, LabelIndex, TargetTrain};
use crate::losses::{self, AdvTarget, ConfusionMode, LossBreakdown, LossWeights, ReconNorm, Role, SourceBatch, TargetBatch};
use crate::model::{init_bundle, pseudo_label, ArchConfig, Component, ModelBundle, PseudoLabels};
use crate::rng::{self, RngState, StreamRng};
use crate::tensor::{Optimizer, OptimizerSettings, ParamId, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AblationMode {
    /// Supervised source training only.
    R,
    /// Plus adversarial domain adaptation.
    RAdv,
    /// Plus cross adversarial feature disentanglement.
    RAdvCross,
    /// Plus cross-domain reconstruction.
    Full,
}

impl AblationMode {
    pub const ALL: [AblationMode; 4] = [
        AblationMode::R,
        AblationMode::RAdv,
        AblationMode::RAdvCross,
        AblationMode::Full,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationMode::R => "R",
            AblationMode::RAdv => "R+adv",
            AblationMode::RAdvCross => "R+adv+cross",
            AblationMode::Full => "full",
        }
    }

    pub fn adversarial(self) -> bool {
        self >= AblationMode::RAdv
    }

    pub fn cross(self) -> bool {
        self >= AblationMode::RAdvCross
    }

    pub fn reconstruction(self) -> bool {
        self == AblationMode::Full
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "R" | "r" => Ok(AblationMode::R),
            "R+adv" | "r+adv" => Ok(AblationMode::RAdv),
            "R+adv+cross" | "r+adv+cross" => Ok(AblationMode::RAdvCross),
            "full" | "Full" => Ok(AblationMode::Full),
            other => Err(Error::Config {
                field: "mode",
                reason: alloc::format!("unknown ablation mode `{other}`"),
            }),
        }
    }
}

/// Everything that determines a training run.
///
/// An epoch is `k1 + k2 + k3` optimizer steps, not a pass over the data.
/// Defaults (plain SGD, warm-up, `epochs`, `eta`) come from coarse tuning on
/// a validation subject that is not part of the acceptance grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub weights: LossWeights,
    pub epochs: usize,
    pub k1: usize,
    pub k2: usize,
    pub k3: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerSettings,
    pub mode: AblationMode,
    pub seed: u64,
    pub confusion: ConfusionMode,
    pub recon_norm: ReconNorm,
    pub adv_target: AdvTarget,
    /// Mode-R epochs run before the `epochs` proper, after which `E_t` is
    /// overwritten with `E_s`. Not recorded in the history.
    pub warmup_epochs: usize,
    pub trunk_hidden: usize,
    pub pose_dim: usize,
    pub expr_dim: usize,
    pub head_hidden: usize,
    pub gen_hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            epochs: 600,
            k1: 1,
            k2: 1,
            k3: 1,
            batch_size: 32,
            optimizer: OptimizerSettings::Sgd { lr: 0.05 },
            mode: AblationMode::Full,
            seed: 0,
            confusion: ConfusionMode::Uniform,
            recon_norm: ReconNorm::L2,
            adv_target: AdvTarget::Inverted,
            warmup_epochs: 300,
            trunk_hidden: 128,
            pose_dim: 16,
            expr_dim: 32,
            head_hidden: 64,
            gen_hidden: 128,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        for (field, v) in [
            ("epochs", self.epochs),
            ("k1", self.k1),
            ("k2", self.k2),
            ("k3", self.k3),
            ("batch_size", self.batch_size),
        ] {
            if v == 0 {
                return Err(Error::Config {
                    field,
                    reason: "must be at least 1".into(),
                });
            }
        }
        let lr = self.optimizer.lr();
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config {
                field: "lr",
                reason: "must be positive".into(),
            });
        }
        Ok(())
    }

    pub fn arch(&self, input_dim: usize, n_poses: usize, n_expressions: usize) -> ArchConfig {
        ArchConfig {
            input_dim,
            trunk_hidden: self.trunk_hidden,
            pose_dim: self.pose_dim,
            expr_dim: self.expr_dim,
            head_hidden: self.head_hidden,
            gen_hidden: self.gen_hidden,
            n_poses,
            n_expressions,
        }
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.k1 + self.k2 + self.k3
    }
}

/// Source set and unlabeled target-train set for one run.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub source: &'a Dataset,
    pub target: &'a TargetTrain,
}

/// Reconstruction pairing counters accumulated over a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PairingStats {
    pub pairs: usize,
    pub lookups: usize,
    pub fallbacks: usize,
    pub invalid: usize,
    pub skipped_steps: usize,
}

impl PairingStats {
    /// Fraction of lookups that fell back to an expression-only match.
    pub fn fallback_rate(&self) -> f64 {
        if self.lookups == 0 {
            0.0
        } else {
            self.fallbacks as f64 / self.lookups as f64
        }
    }

    /// Fraction of pairs dropped from the reconstruction loss.
    pub fn invalid_rate(&self) -> f64 {
        if self.pairs == 0 {
            0.0
        } else {
            self.invalid as f64 / self.pairs as f64
        }
    }
}

/// Running sums of the loss components within one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EpochAccumulator {
    pub sums: [f64; 6],
    pub counts: [usize; 6],
}

impl EpochAccumulator {
    fn record(&mut self, slot: usize, v: f64) {
        self.sums[slot] += v;
        self.counts[slot] += 1;
    }

    fn finish(&self, w: &LossWeights) -> Result<LossBreakdown> {
        let m = |i: usize| {
            if self.counts[i] == 0 {
                0.0
            } else {
                self.sums[i] / self.counts[i] as f64
            }
        };
        let mut b = LossBreakdown {
            l_p: m(L_P),
            l_e: m(L_E),
            l_adv_d: m(L_ADV_D),
            l_adv_g: m(L_ADV_G),
            l_cross: m(L_CROSS),
            l_clc: m(L_CLC),
            total: 0.0,
        };
        b.total = losses::joint_objective(&b, w, Role::Encoder)?;
        Ok(b)
    }
}

const L_P: usize = 0;
const L_E: usize = 1;
const L_ADV_D: usize = 2;
const L_ADV_G: usize = 3;
const L_CROSS: usize = 4;
const L_CLC: usize = 5;

/// Complete, resumable training state.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub config: TrainConfig,
    pub bundle: ModelBundle,
    pub optimizer: Optimizer,
    pub epoch: usize,
    pub step_in_epoch: usize,
    pub batch_rng: StreamRng,
    pub pair_rng: StreamRng,
    /// Pseudo-labels of the whole target-train set, refreshed each epoch.
    pub epoch_pseudo: Option<PseudoLabels>,
    pub accumulator: EpochAccumulator,
    pub history: Vec<LossBreakdown>,
    pub pairing: PairingStats,
}

/// Serializable part of [`TrainState`] (everything except parameters and
/// optimizer moments).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainProgress {
    pub config: TrainConfig,
    pub arch: ArchConfig,
    pub epoch: usize,
    pub step_in_epoch: usize,
    pub batch_rng: RngState,
    pub pair_rng: RngState,
    pub epoch_pseudo: Option<PseudoLabels>,
    pub accumulator: EpochAccumulator,
    pub history: Vec<LossBreakdown>,
    pub pairing: PairingStats,
}

fn ids_of(bundle: &ModelBundle, comps: &[Component]) -> Vec<ParamId> {
    comps
        .iter()
        .flat_map(|c| bundle.params.ids_with_prefix(c.prefix()).collect::<Vec<_>>())
        .collect()
}

fn tape_for(comps: &[Component]) -> Tape {
    let names: Vec<&str> = comps.iter().map(|c| c.prefix()).collect();
    Tape::with_trainable(&names)
}

impl TrainState {
    pub fn new(config: TrainConfig, arch: ArchConfig) -> Result<Self> {
        config.validate()?;
        let bundle = init_bundle(rng::derive(config.seed, &[0x4d4f_4445]), arch)?;
        Ok(Self {
            optimizer: Optimizer::new(config.optimizer),
            batch_rng: rng::stream(rng::derive(config.seed, &[0x4241_5443])),
            pair_rng: rng::stream(rng::derive(config.seed, &[0x5041_4952])),
            config,
            bundle,
            epoch: 0,
            step_in_epoch: 0,
            epoch_pseudo: None,
            accumulator: EpochAccumulator::default(),
            history: Vec::new(),
            pairing: PairingStats::default(),
        })
    }

    /// Fresh state sized for the given data.
    pub fn for_data(config: TrainConfig, data: TrainData<'_>) -> Result<Self> {
        let spec = &data.source.spec;
        let arch = config.arch(spec.pixels(), spec.n_poses, spec.n_expressions);
        Self::new(config, arch)
    }

    pub fn progress(&self) -> TrainProgress {
        TrainProgress {
            config: self.config.clone(),
            arch: self.bundle.arch,
            epoch: self.epoch,
            step_in_epoch: self.step_in_epoch,
            batch_rng: RngState::capture(&self.batch_rng),
            pair_rng: RngState::capture(&self.pair_rng),
            epoch_pseudo: self.epoch_pseudo.clone(),
            accumulator: self.accumulator,
            history: self.history.clone(),
            pairing: self.pairing,
        }
    }

    pub fn from_progress(p: TrainProgress, bundle: ModelBundle, optimizer: Optimizer) -> Result<Self> {
        if bundle.arch != p.arch {
            return Err(Error::Usage("checkpoint architecture does not match training state".into()));
        }
        Ok(Self {
            config: p.config,
            bundle,
            optimizer,
            epoch: p.epoch,
            step_in_epoch: p.step_in_epoch,
            batch_rng: p.batch_rng.restore(),
            pair_rng: p.pair_rng.restore(),
            epoch_pseudo: p.epoch_pseudo,
            accumulator: p.accumulator,
            history: p.history,
            pairing: p.pairing,
        })
    }

    pub fn finished(&self) -> bool {
        self.epoch >= self.config.warmup_epochs + self.config.epochs
    }

    /// The configured mode, or mode R during warm-up.
    pub fn active_mode(&self) -> AblationMode {
        if self.epoch < self.config.warmup_epochs {
            AblationMode::R
        } else {
            self.config.mode
        }
    }

    /// Uniform with-replacement batches from both domains.
    pub fn sample_batches(&mut self, data: TrainData<'_>) -> Result<(SourceBatch, TargetBatch)> {
        if data.source.is_empty() || data.target.is_empty() {
            return Err(Error::Usage("training needs non-empty source and target sets".into()));
        }
        let m = self.config.batch_size;
        let s: Vec<usize> = (0..m).map(|_| self.batch_rng.gen_range(0..data.source.len())).collect();
        let t: Vec<usize> = (0..m).map(|_| self.batch_rng.gen_range(0..data.target.len())).collect();
        Ok((SourceBatch::from_dataset(data.source, &s), TargetBatch::from_target(data.target, &t)))
    }

    fn check(&self, tape: &Tape, v: Var, loss: &'static str) -> Result<f64> {
        let x = tape.scalar(v);
        if x.is_finite() {
            Ok(x)
        } else {
            Err(Error::NumericalAbort {
                loss,
                epoch: self.epoch,
                step: self.step_in_epoch,
            })
        }
    }

    fn descend(&mut self, tape: &Tape, loss: Var, comps: &[Component]) -> Result<()> {
        let grads = tape.backward(loss, &self.bundle.params)?;
        let ids = ids_of(&self.bundle, comps);
        self.optimizer.step(&mut self.bundle.params, &grads, &ids)
    }

    /// Supervised, cross and adversarial encoder updates, in that order.
    pub fn phase1_step(&mut self, src: &SourceBatch, tgt: &TargetBatch) -> Result<()> {
        let w = self.config.weights;
        let mode = self.active_mode();

        let comps = [Component::Es, Component::R];
        let mut tape = tape_for(&comps);
        let fs = losses::encode_batch(&mut tape, &self.bundle, Component::Es, &src.images)?;
        let le = losses::loss_expr(&mut tape, &self.bundle, fs, src)?;
        let lp = losses::loss_pose(&mut tape, &self.bundle, fs, src)?;
        let (ve, vp) = (self.check(&tape, le, "l_e")?, self.check(&tape, lp, "l_p")?);
        let le_w = tape.scale(le, w.alpha);
        let total = tape.add(le_w, lp)?;
        self.descend(&tape, total, &comps)?;
        self.accumulator.record(L_E, ve);
        self.accumulator.record(L_P, vp);

        if mode.cross() {
            let comps = [Component::Es];
            let mut tape = tape_for(&comps);
            let fs = losses::encode_batch(&mut tape, &self.bundle, Component::Es, &src.images)?;
            let lc = losses::loss_cross(&mut tape, &self.bundle, fs, src, self.config.confusion)?;
            let v = self.check(&tape, lc, "l_cross")?;
            let scaled = tape.scale(lc, w.gamma);
            self.descend(&tape, scaled, &comps)?;
            self.accumulator.record(L_CROSS, v);
        }

        if mode.adversarial() {
            let comps = [Component::Es, Component::Et];
            let mut tape = tape_for(&comps);
            let fs = losses::encode_batch(&mut tape, &self.bundle, Component::Es, &src.images)?;
            let ft = losses::encode_batch(&mut tape, &self.bundle, Component::Et, &tgt.images)?;
            let la = match self.config.adv_target {
                AdvTarget::Inverted => losses::loss_adv_encoder(&mut tape, &self.bundle, fs, ft)?,
                AdvTarget::Confusion => losses::loss_adv_confusion(&mut tape, &self.bundle, fs, ft)?,
            };
            let v = self.check(&tape, la, "l_adv_g")?;
            let scaled = tape.scale(la, w.beta);
            self.descend(&tape, scaled, &comps)?;
            self.accumulator.record(L_ADV_G, v);
        }
        Ok(())
    }

    /// Cross-domain reconstruction update. A no-op unless the mode is full.
    pub fn phase2_step(&mut self, src: &SourceBatch, tgt: &TargetBatch, data: TrainData<'_>) -> Result<()> {
        if !self.active_mode().reconstruction() {
            return Ok(());
        }
        let spec = &data.source.spec;
        if self.epoch_pseudo.is_none() {
            self.refresh_pseudo(data)?;
        }
        let index: LabelIndex = losses::pseudo_index(
            self.epoch_pseudo.as_ref().expect("refreshed"),
            spec.n_poses,
            spec.n_expressions,
        );
        let pseudo = pseudo_label(&self.bundle, &tgt.images)?;
        let targets = losses::sample_recon_targets(src, &pseudo, data.source, data.target, &index, &mut self.pair_rng)?;
        self.pairing.pairs += targets.valid.len();
        self.pairing.lookups += 2 * targets.valid.len();
        self.pairing.fallbacks += targets.fallbacks;
        self.pairing.invalid += targets.invalid;
        if targets.valid_pairs() == 0 {
            self.pairing.skipped_steps += 1;
            return Ok(());
        }
        let comps = [Component::Es, Component::Et, Component::Gs, Component::Gt];
        let mut tape = tape_for(&comps);
        let fs = losses::encode_batch(&mut tape, &self.bundle, Component::Es, &src.images)?;
        let ft = losses::encode_batch(&mut tape, &self.bundle, Component::Et, &tgt.images)?;
        let rl = losses::loss_recon(&mut tape, &self.bundle, fs, ft, &targets, self.config.recon_norm)?;
        let v = self.check(&tape, rl.loss, "l_clc")?;
        let scaled = tape.scale(rl.loss, self.config.weights.eta);
        self.descend(&tape, scaled, &comps)?;
        self.accumulator.record(L_CLC, v);
        Ok(())
    }

    /// Pose classifier, then domain discriminators; encoders frozen.
    pub fn phase3_step(&mut self, src: &SourceBatch, tgt: &TargetBatch) -> Result<()> {
        let comps = [Component::Dp];
        let mut tape = tape_for(&comps);
        let fs = losses::encode_batch(&mut tape, &self.bundle, Component::Es, &src.images)?;
        let lp = losses::loss_pose(&mut tape, &self.bundle, fs, src)?;
        self.check(&tape, lp, "l_p")?;
        self.descend(&tape, lp, &comps)?;

        if self.active_mode().adversarial() {
            let comps = [Component::Dde, Component::Ddp];
            let mut tape = tape_for(&comps);
            let fs = losses::encode_batch(&mut tape, &self.bundle, Component::Es, &src.images)?;
            let ft = losses::encode_batch(&mut tape, &self.bundle, Component::Et, &tgt.images)?;
            let la = losses::loss_adv_discriminator(&mut tape, &self.bundle, fs, ft)?;
            let v = self.check(&tape, la, "l_adv_d")?;
            self.descend(&tape, la, &comps)?;
            self.accumulator.record(L_ADV_D, v);
        }
        Ok(())
    }

    /// Recomputes pseudo-labels for the whole target-train set.
    pub fn refresh_pseudo(&mut self, data: TrainData<'_>) -> Result<()> {
        self.epoch_pseudo = Some(pseudo_label(&self.bundle, &data.target.all_images())?);
        Ok(())
    }

    /// Runs exactly one scheduled step (one phase-1, phase-2 or phase-3
    /// step) and closes the epoch when its last step completes.
    pub fn advance(&mut self, data: TrainData<'_>) -> Result<()> {
        if self.finished() {
            return Ok(());
        }
        let (k1, k2) = (self.config.k1, self.config.k2);
        if self.step_in_epoch == 0 && self.active_mode().reconstruction() {
            self.refresh_pseudo(data)?;
        }
        let (src, tgt) = self.sample_batches(data)?;
        let s = self.step_in_epoch;
        if s < k1 {
            self.phase1_step(&src, &tgt)?;
        } else if s < k1 + k2 {
            self.phase2_step(&src, &tgt, data)?;
        } else {
            self.phase3_step(&src, &tgt)?;
        }
        self.step_in_epoch += 1;
        if self.step_in_epoch == self.config.steps_per_epoch() {
            let b = self.accumulator.finish(&self.config.weights)?;
            if !b.is_finite() {
                return Err(Error::NumericalAbort {
                    loss: "total",
                    epoch: self.epoch,
                    step: s,
                });
            }
            if self.epoch >= self.config.warmup_epochs {
                self.history.push(b);
            }
            self.accumulator = EpochAccumulator::default();
            self.step_in_epoch = 0;
            self.epoch += 1;
            if self.config.warmup_epochs > 0 && self.epoch == self.config.warmup_epochs {
                self.bundle.copy_component(Component::Es, Component::Et);
            }
        }
        Ok(())
    }

    pub fn run(&mut self, data: TrainData<'_>) -> Result<()> {
        while !self.finished() {
            self.advance(data)?;
        }
        Ok(())
    }
}

/// Trains from scratch; the target-domain classifier of the returned bundle
/// is `R ∘ E_t`.
pub fn train(config: &TrainConfig, source: &Dataset, target: &TargetTrain) -> Result<(ModelBundle, Vec<LossBreakdown>)> {
    let data = TrainData { source, target };
    let mut state = TrainState::for_data(config.clone(), data)?;
    state.run(data)?;
    Ok((state.bundle, state.history))
}

/// Human-readable summary of a config, for logs.
pub fn describe(config: &TrainConfig) -> String {
    alloc::format!(
        "mode={} epochs={}+{} k=({},{},{}) m={} seed={}",
        config.mode,
        config.warmup_epochs,
        config.epochs,
        config.k1,
        config.k2,
        config.k3,
        config.batch_size,
        config.seed
    )
}
