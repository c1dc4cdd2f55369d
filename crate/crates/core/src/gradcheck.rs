//! Finite-difference verification of every training loss on a tiny bundle.

use alloc::vec::Vec;
use rand::Rng;

use crate::error::Result;
use crate::losses::{self, ConfusionMode, ReconNorm, ReconTargets, SourceBatch};
use crate::model::{init_bundle, ArchConfig, Component, ModelBundle};
use crate::rng;
use crate::tensor::{ParamId, Tape, Tensor, Var};

/// Central-difference step.
pub const STEP: f64 = 1e-6;
/// Pass threshold on the maximum relative error.
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor: below it gradients are compared absolutely. Central
/// differences at `STEP` carry roughly `1e-10` of roundoff for O(1) losses.
pub const FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckedLoss {
    Pose,
    Expression,
    AdvDiscriminator,
    AdvEncoder,
    Cross,
    Recon,
}

impl CheckedLoss {
    pub const ALL: [CheckedLoss; 6] = [
        CheckedLoss::Pose,
        CheckedLoss::Expression,
        CheckedLoss::AdvDiscriminator,
        CheckedLoss::AdvEncoder,
        CheckedLoss::Cross,
        CheckedLoss::Recon,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CheckedLoss::Pose => "l_p",
            CheckedLoss::Expression => "l_e",
            CheckedLoss::AdvDiscriminator => "l_adv_d",
            CheckedLoss::AdvEncoder => "l_adv_g",
            CheckedLoss::Cross => "l_cross",
            CheckedLoss::Recon => "l_clc",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossCheck {
    pub loss: CheckedLoss,
    pub max_rel_error: f64,
    /// Parameter elements compared.
    pub checked: usize,
}

impl LossCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

/// `|a - n| / max(|a|, |n|, FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

pub fn tiny_arch() -> ArchConfig {
    ArchConfig {
        input_dim: 8,
        trunk_hidden: 6,
        pose_dim: 3,
        expr_dim: 4,
        head_hidden: 5,
        gen_hidden: 5,
        n_poses: 3,
        n_expressions: 4,
    }
}

struct Fixture {
    source: SourceBatch,
    target: Tensor,
    recon: ReconTargets,
}

fn fixture(seed: u64, arch: &ArchConfig) -> Fixture {
    let mut r = rng::stream(rng::derive(seed, &[0x4743_484b]));
    let m = 5;
    let d = arch.input_dim;
    let images = |r: &mut rng::StreamRng| {
        Tensor::matrix(m, d, (0..m * d).map(|_| r.gen_range(0.0..1.0)).collect()).expect("fixture")
    };
    let src_images = images(&mut r);
    let tgt_images = images(&mut r);
    let source_images = images(&mut r);
    let target_images = images(&mut r);
    let source = SourceBatch {
        images: src_images,
        expressions: (0..m).map(|i| i % arch.n_expressions).collect(),
        poses: (0..m).map(|i| (i * 2) % arch.n_poses).collect(),
    };
    // One invalid pair exercises the masked mean.
    let valid = (0..m).map(|i| i != 2).collect();
    Fixture {
        source,
        target: tgt_images,
        recon: ReconTargets {
            source_images,
            target_images,
            valid,
            fallbacks: 0,
            invalid: 1,
        },
    }
}

fn build(tape: &mut Tape, bundle: &ModelBundle, fx: &Fixture, which: CheckedLoss) -> Result<Var> {
    let src = losses::encode_batch(tape, bundle, Component::Es, &fx.source.images)?;
    let tgt = losses::encode_batch(tape, bundle, Component::Et, &fx.target)?;
    match which {
        CheckedLoss::Pose => losses::loss_pose(tape, bundle, src, &fx.source),
        CheckedLoss::Expression => losses::loss_expr(tape, bundle, src, &fx.source),
        CheckedLoss::AdvDiscriminator => losses::loss_adv_discriminator(tape, bundle, src, tgt),
        CheckedLoss::AdvEncoder => losses::loss_adv_encoder(tape, bundle, src, tgt),
        CheckedLoss::Cross => losses::loss_cross(tape, bundle, src, &fx.source, ConfusionMode::Uniform),
        CheckedLoss::Recon => Ok(losses::loss_recon(tape, bundle, src, tgt, &fx.recon, ReconNorm::L2)?.loss),
    }
}

fn evaluate(bundle: &ModelBundle, fx: &Fixture, which: CheckedLoss) -> Result<f64> {
    let mut tape = Tape::inference();
    let v = build(&mut tape, bundle, fx, which)?;
    tape.value(v).item().ok_or_else(|| crate::error::usage("loss is not a scalar"))
}

/// Compares analytic and numeric gradients of one loss over every parameter
/// element. `fault` scales the analytic gradient, to show the check can fail.
pub fn check_loss(bundle: &ModelBundle, seed: u64, which: CheckedLoss, fault: Option<f64>) -> Result<LossCheck> {
    let fx = fixture(seed, &bundle.arch);
    let mut tape = Tape::new();
    let loss = build(&mut tape, bundle, &fx, which)?;
    let grads = tape.backward(loss, &bundle.params)?;
    let scale = fault.unwrap_or(1.0);

    let mut probe = bundle.clone();
    let mut max_rel: f64 = 0.0;
    let mut checked = 0;
    for id in (0..bundle.params.len()).map(ParamId) {
        let analytic = grads.get(id);
        for k in 0..bundle.params.get(id).len() {
            let x0 = bundle.params.get(id).data()[k];
            probe.params.get_mut(id).data_mut()[k] = x0 + STEP;
            let up = evaluate(&probe, &fx, which)?;
            probe.params.get_mut(id).data_mut()[k] = x0 - STEP;
            let down = evaluate(&probe, &fx, which)?;
            probe.params.get_mut(id).data_mut()[k] = x0;
            let numeric = (up - down) / (2.0 * STEP);
            max_rel = max_rel.max(relative_error(scale * analytic.data()[k], numeric));
            checked += 1;
        }
    }
    Ok(LossCheck {
        loss: which,
        max_rel_error: max_rel,
        checked,
    })
}

/// Runs the check for every loss on a tiny random bundle.
pub fn run(seed: u64) -> Result<Vec<LossCheck>> {
    let bundle = init_bundle(seed, tiny_arch())?;
    CheckedLoss::ALL
        .iter()
        .map(|&l| check_loss(&bundle, seed, l, None))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_loss_passes() {
        for c in run(3).unwrap() {
            assert!(c.passed(), "{}: {}", c.loss.as_str(), c.max_rel_error);
            assert!(c.checked > 0);
        }
    }

    #[test]
    fn injected_fault_is_detected() {
        let bundle = init_bundle(1, tiny_arch()).unwrap();
        let c = check_loss(&bundle, 1, CheckedLoss::Expression, Some(1.01)).unwrap();
        assert!(!c.passed());
        assert!((c.max_rel_error - 0.01).abs() < 2e-3, "{}", c.max_rel_error);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1e-9, 0.0) - 1e-4).abs() < 1e-12);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-12);
    }
}
