//! The five loss terms and the weighted joint objective.
//!
//! Every role minimizes a non-negative cross-entropy or norm:
//!
//! - pose / expression: softmax cross-entropy of `D_p(f_s^p)` / `R(f_s^e)`
//! - adversarial, discriminator side: BCE with true domain labels
//!   (source = 1, target = 0) for `D_de` and `D_dp`
//! - adversarial, encoder side: the same BCE with inverted domain labels
//! - cross: cross-entropy between the uniform distribution and
//!   `R(f_s^p)` / `D_p(f_s^e)`, minimum `ln E + ln P`
//! - reconstruction: per-sample Euclidean distance between cross-generated
//!   images and label-matched real images

use alloc::vec::Vec;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};
use crate::faces::{Dataset, LabelIndex, TargetTrain};
use crate::model::{Component, FeatureVars, ModelBundle, PseudoLabels};
use crate::tensor::{Tape, Tensor, Var};

/// Labeled source images.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceBatch {
    pub images: Tensor,
    pub expressions: Vec<usize>,
    pub poses: Vec<usize>,
}

impl SourceBatch {
    pub fn from_dataset(ds: &Dataset, idx: &[usize]) -> Self {
        Self {
            images: ds.images(idx),
            expressions: idx.iter().map(|&i| ds.get(i).expression).collect(),
            poses: idx.iter().map(|&i| ds.get(i).pose).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.images.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check(&self) -> Result<()> {
        let m = self.len();
        if self.poses.len() != m {
            return Err(usage("source batch is missing pose labels"));
        }
        if self.expressions.len() != m {
            return Err(usage("source batch is missing expression labels"));
        }
        Ok(())
    }
}

/// Unlabeled target images.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetBatch {
    pub images: Tensor,
    /// Positions in the target-train set (used for pairing bookkeeping).
    pub positions: Vec<usize>,
}

impl TargetBatch {
    pub fn from_target(t: &TargetTrain, idx: &[usize]) -> Self {
        Self {
            images: t.images(idx),
            positions: idx.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.images.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConfusionMode {
    /// Cross-entropy to the uniform distribution.
    Uniform,
    /// Negated cross-entropy against the true labels (gradient ascent on
    /// the heads' likelihood). Unbounded below; for comparison only.
    Inverted,
}

/// Labels the encoders are trained toward in the adversarial game.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AdvTarget {
    /// Swapped domain labels.
    Inverted,
    /// 0.5 for both domains.
    Confusion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReconNorm {
    /// Per-sample Euclidean norm.
    L2,
    /// Per-sample sum of squared errors.
    Squared,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub eta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.5,
            gamma: 0.1,
            eta: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("eta", self.eta),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config {
                    field,
                    reason: alloc::format!("weight must be finite and >= 0, got {v}"),
                });
            }
        }
        Ok(())
    }
}

/// Scalar values of every loss component.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_p: f64,
    pub l_e: f64,
    pub l_adv_d: f64,
    pub l_adv_g: f64,
    pub l_cross: f64,
    pub l_clc: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub const NAMES: [&'static str; 7] = ["l_p", "l_e", "l_adv_d", "l_adv_g", "l_cross", "l_clc", "total"];

    pub fn values(&self) -> [f64; 7] {
        [
            self.l_p,
            self.l_e,
            self.l_adv_d,
            self.l_adv_g,
            self.l_cross,
            self.l_clc,
            self.total,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.values().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Encoder,
    Discriminator,
}

/// Weighted combination of the components for one role.
///
/// Encoder: `l_p + α·l_e + η·l_clc + β·l_adv_g + γ·l_cross`.
/// Discriminator: `l_adv_d + l_p` (the two terms touch disjoint heads).
pub fn joint_objective(b: &LossBreakdown, w: &LossWeights, role: Role) -> Result<f64> {
    w.validate()?;
    Ok(match role {
        Role::Encoder => b.l_p + w.alpha * b.l_e + w.eta * b.l_clc + w.beta * b.l_adv_g + w.gamma * b.l_cross,
        Role::Discriminator => b.l_adv_d + b.l_p,
    })
}

/// Records a batch and runs an encoder over it.
pub fn encode_batch(tape: &mut Tape, bundle: &ModelBundle, encoder: Component, images: &Tensor) -> Result<FeatureVars> {
    let x = tape.constant(images.clone());
    bundle.encode(tape, encoder, x)
}

/// Cross-entropy of `D_p(f_s^p)` against the source poses.
pub fn loss_pose(tape: &mut Tape, bundle: &ModelBundle, src: FeatureVars, batch: &SourceBatch) -> Result<Var> {
    batch.check()?;
    let logits = bundle.classify(tape, Component::Dp, src.pose)?;
    tape.softmax_cross_entropy(logits, &batch.poses)
}

/// Cross-entropy of `R(f_s^e)` against the source expressions.
pub fn loss_expr(tape: &mut Tape, bundle: &ModelBundle, src: FeatureVars, batch: &SourceBatch) -> Result<Var> {
    batch.check()?;
    let logits = bundle.classify(tape, Component::R, src.expr)?;
    tape.softmax_cross_entropy(logits, &batch.expressions)
}

fn adversarial(
    tape: &mut Tape,
    bundle: &ModelBundle,
    src: FeatureVars,
    tgt: FeatureVars,
    source_label: f64,
    target_label: f64,
) -> Result<Var> {
    let (ms, mt) = (tape.value(src.expr).rows(), tape.value(tgt.expr).rows());
    if ms == 0 || mt == 0 {
        return Err(usage("adversarial loss needs non-empty source and target batches"));
    }
    let ys = alloc::vec![source_label; ms];
    let yt = alloc::vec![target_label; mt];
    let mut terms = Vec::with_capacity(4);
    for (disc, s, t) in [
        (Component::Dde, src.expr, tgt.expr),
        (Component::Ddp, src.pose, tgt.pose),
    ] {
        let zs = bundle.discriminate(tape, disc, s)?;
        terms.push(tape.binary_cross_entropy(zs, &ys)?);
        let zt = bundle.discriminate(tape, disc, t)?;
        terms.push(tape.binary_cross_entropy(zt, &yt)?);
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = tape.add(total, t)?;
    }
    Ok(total)
}

/// Discriminator side: `D_de`, `D_dp` learn source = 1, target = 0.
pub fn loss_adv_discriminator(tape: &mut Tape, bundle: &ModelBundle, src: FeatureVars, tgt: FeatureVars) -> Result<Var> {
    adversarial(tape, bundle, src, tgt, 1.0, 0.0)
}

/// Encoder side: the same four terms with inverted domain labels.
pub fn loss_adv_encoder(tape: &mut Tape, bundle: &ModelBundle, src: FeatureVars, tgt: FeatureVars) -> Result<Var> {
    adversarial(tape, bundle, src, tgt, 0.0, 1.0)
}

/// Encoder side, confusion form: both domains target 0.5 (minimum `4 ln 2`).
pub fn loss_adv_confusion(tape: &mut Tape, bundle: &ModelBundle, src: FeatureVars, tgt: FeatureVars) -> Result<Var> {
    adversarial(tape, bundle, src, tgt, 0.5, 0.5)
}

/// Cross adversarial feature loss: pose features should carry no expression
/// evidence for `R`, expression features no pose evidence for `D_p`.
pub fn loss_cross(
    tape: &mut Tape,
    bundle: &ModelBundle,
    src: FeatureVars,
    batch: &SourceBatch,
    mode: ConfusionMode,
) -> Result<Var> {
    batch.check()?;
    let expr_from_pose = bundle.classify(tape, Component::R, src.pose)?;
    let pose_from_expr = bundle.classify(tape, Component::Dp, src.expr)?;
    match mode {
        ConfusionMode::Uniform => {
            let a = tape.uniform_cross_entropy(expr_from_pose)?;
            let b = tape.uniform_cross_entropy(pose_from_expr)?;
            tape.add(a, b)
        }
        ConfusionMode::Inverted => {
            let a = tape.softmax_cross_entropy(expr_from_pose, &batch.expressions)?;
            let b = tape.softmax_cross_entropy(pose_from_expr, &batch.poses)?;
            let s = tape.add(a, b)?;
            Ok(tape.scale(s, -1.0))
        }
    }
}

/// Real images the cross-generated images are compared against.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconTargets {
    /// `x_s^j`: source image with the source pose and the target pseudo-expression.
    pub source_images: Tensor,
    /// `x_t^k`: target image with the target pseudo-pose and the source expression.
    pub target_images: Tensor,
    pub valid: Vec<bool>,
    /// Lookups that fell back to an expression-only match.
    pub fallbacks: usize,
    pub invalid: usize,
}

impl ReconTargets {
    pub fn valid_pairs(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// Index of target-train samples by their pseudo-labels.
pub fn pseudo_index(pseudo: &PseudoLabels, n_poses: usize, n_expressions: usize) -> LabelIndex {
    LabelIndex::build(
        n_poses,
        n_expressions,
        pseudo.poses.iter().copied().zip(pseudo.expressions.iter().copied()),
    )
}

/// Picks `x_s^j` and `x_t^k` for every `(x_s, x_t)` pair of the batch.
///
/// An empty `(pose, expression)` bucket falls back to a random sample with
/// the right expression; if that is empty too the pair is marked invalid.
pub fn sample_recon_targets(
    batch: &SourceBatch,
    pseudo: &PseudoLabels,
    source: &Dataset,
    target: &TargetTrain,
    target_index: &LabelIndex,
    rng: &mut impl RngCore,
) -> Result<ReconTargets> {
    batch.check()?;
    let m = batch.len();
    if pseudo.expressions.len() != m || pseudo.poses.len() != m {
        return Err(usage("pseudo-labels do not match the batch size"));
    }
    let d = source.spec.pixels();
    let mut src_idx = Vec::with_capacity(m);
    let mut tgt_idx = Vec::with_capacity(m);
    let mut valid = Vec::with_capacity(m);
    let (mut fallbacks, mut invalid) = (0, 0);
    for i in 0..m {
        let mut pick = |index: &LabelIndex, pose: usize, expr: usize, rng: &mut dyn RngCore| {
            let mut rng = rng;
            index.draw(pose, expr, &mut rng).or_else(|| {
                let r = index.draw_expression(expr, &mut rng);
                if r.is_some() {
                    fallbacks += 1;
                }
                r
            })
        };
        let s = pick(source.index(), batch.poses[i], pseudo.expressions[i], rng);
        let t = pick(target_index, pseudo.poses[i], batch.expressions[i], rng);
        let ok = s.is_some() && t.is_some();
        if !ok {
            invalid += 1;
        }
        valid.push(ok);
        src_idx.push(s);
        tgt_idx.push(t);
    }
    let gather = |idx: &[Option<usize>], images: &dyn Fn(&[usize]) -> Tensor| {
        let mut data = Vec::with_capacity(m * d);
        for &i in idx {
            match i {
                Some(i) => data.extend_from_slice(images(&[i]).data()),
                None => data.extend(core::iter::repeat_n(0.0, d)),
            }
        }
        Tensor::matrix(m, d, data).expect("recon rows")
    };
    Ok(ReconTargets {
        source_images: gather(&src_idx, &|i| source.images(i)),
        target_images: gather(&tgt_idx, &|i| target.images(i)),
        valid,
        fallbacks,
        invalid,
    })
}

/// Reconstruction loss and how many pairs contributed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconLoss {
    pub loss: Var,
    /// Zero means every pair was invalid and `loss` is a constant 0.
    pub valid_pairs: usize,
}

/// Mean over valid pairs of `‖G_s(f_s^p, f_t^e) − x_s^j‖ + ‖G_t(f_t^p, f_s^e) − x_t^k‖`.
pub fn loss_recon(
    tape: &mut Tape,
    bundle: &ModelBundle,
    src: FeatureVars,
    tgt: FeatureVars,
    targets: &ReconTargets,
    norm: ReconNorm,
) -> Result<ReconLoss> {
    let m = tape.value(src.pose).rows();
    if tape.value(tgt.pose).rows() != m || targets.valid.len() != m {
        return Err(usage("reconstruction needs equally sized source, target and pairing batches"));
    }
    let n_valid = targets.valid_pairs();
    if n_valid == 0 {
        return Ok(ReconLoss {
            loss: tape.constant(Tensor::scalar(0.0)),
            valid_pairs: 0,
        });
    }
    let weights: Vec<f64> = targets
        .valid
        .iter()
        .map(|&v| if v { 1.0 / n_valid as f64 } else { 0.0 })
        .collect();
    let mut side = |gen: Component, f_p: Var, f_e: Var, real: &Tensor| -> Result<Var> {
        let fake = bundle.generate(tape, gen, f_p, f_e)?;
        let real = tape.constant(real.clone());
        let diff = tape.sub(fake, real)?;
        let per_row = match norm {
            ReconNorm::L2 => tape.row_norm(diff),
            ReconNorm::Squared => tape.row_sum_sq(diff),
        };
        tape.weighted_sum(per_row, &weights)
    };
    let a = side(Component::Gs, src.pose, tgt.expr, &targets.source_images)?;
    let b = side(Component::Gt, tgt.pose, src.expr, &targets.target_images)?;
    Ok(ReconLoss {
        loss: tape.add(a, b)?,
        valid_pairs: n_valid,
    })
}
