//! Accuracy scoring, linear probes on frozen features, and run records.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::faces::{Dataset, TargetTrain};
use crate::losses::{self, LossBreakdown, SourceBatch, TargetBatch};
use crate::model::{pseudo_label, Component, ModelBundle};
use crate::rng;
use crate::tensor::{Optimizer, OptimizerSettings, ParamSet, Tape, Tensor};
use crate::train::{AblationMode, PairingStats, TrainData};

/// Overall and per-pose accuracy of `R ∘ E_t` on a labeled test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub overall: f64,
    pub per_pose: Vec<f64>,
    pub per_pose_counts: Vec<usize>,
}

/// Scores predictions against the true expressions, broken down by the true
/// pose. Poses absent from the set report accuracy 0 with count 0.
pub fn score(predictions: &[usize], test: &Dataset) -> Result<AccuracyReport> {
    if test.is_empty() {
        return Err(Error::Usage("accuracy on an empty test set".into()));
    }
    if predictions.len() != test.len() {
        return Err(Error::Usage("prediction count does not match the test set".into()));
    }
    let p = test.spec.n_poses;
    let mut hits = vec![0usize; p];
    let mut counts = vec![0usize; p];
    for (s, &pred) in test.samples().iter().zip(predictions) {
        counts[s.pose] += 1;
        if pred == s.expression {
            hits[s.pose] += 1;
        }
    }
    let total_hits: usize = hits.iter().sum();
    Ok(AccuracyReport {
        overall: total_hits as f64 / test.len() as f64,
        per_pose: hits
            .iter()
            .zip(&counts)
            .map(|(&h, &c)| if c == 0 { 0.0 } else { h as f64 / c as f64 })
            .collect(),
        per_pose_counts: counts,
    })
}

pub fn evaluate_accuracy(bundle: &ModelBundle, test: &Dataset) -> Result<AccuracyReport> {
    if test.is_empty() {
        return Err(Error::Usage("accuracy on an empty test set".into()));
    }
    let preds = bundle.predict_expression(Component::Et, &test.all_images())?;
    score(&preds, test)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProbeKind {
    /// Source vs target from expression features.
    DomainOnFe,
    /// Source vs target from pose features.
    DomainOnFp,
    /// Pose from source expression features.
    PoseOnFe,
    /// Expression from source pose features.
    ExprOnFp,
    /// Expression from source expression features (reference level).
    ExprOnFe,
}

impl ProbeKind {
    pub const ALL: [ProbeKind; 5] = [
        ProbeKind::DomainOnFe,
        ProbeKind::DomainOnFp,
        ProbeKind::PoseOnFe,
        ProbeKind::ExprOnFp,
        ProbeKind::ExprOnFe,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProbeKind::DomainOnFe => "domain_on_fe",
            ProbeKind::DomainOnFp => "domain_on_fp",
            ProbeKind::PoseOnFe => "pose_on_fe",
            ProbeKind::ExprOnFp => "expr_on_fp",
            ProbeKind::ExprOnFe => "expr_on_fe",
        }
    }

    pub fn chance(self, n_poses: usize, n_expressions: usize) -> f64 {
        match self {
            ProbeKind::DomainOnFe | ProbeKind::DomainOnFp => 0.5,
            ProbeKind::PoseOnFe => 1.0 / n_poses as f64,
            ProbeKind::ExprOnFp | ProbeKind::ExprOnFe => 1.0 / n_expressions as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub kind: ProbeKind,
    pub train_acc: f64,
    pub test_acc: f64,
    pub chance: f64,
}

pub const PROBE_STEPS: usize = 500;
pub const PROBE_LR: f64 = 1e-2;

/// Train/test accuracy of a linear softmax probe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeAccuracy {
    pub train: f64,
    pub test: f64,
}

/// Fits a single-layer softmax probe on frozen features (80/20 split by
/// `seed`, features standardized with training statistics, 500 full-batch
/// Adam steps at lr 1e-2).
pub fn train_probe(features: &Tensor, labels: &[usize], n_classes: usize, seed: u64) -> Result<ProbeAccuracy> {
    let n = features.rows();
    if labels.len() != n {
        return Err(Error::Usage("probe labels do not match feature rows".into()));
    }
    if n < 5 {
        return Err(Error::Usage("probe needs at least 5 samples".into()));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::Label { label: l, classes: n_classes });
    }
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(Error::DegenerateLabels("probe labels contain a single class".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(rng::derive(seed, &[0x5052_4f42])));
    let n_train = n * 4 / 5;
    let (tr, te) = order.split_at(n_train);

    let d = features.cols();
    let mut mean = vec![0.0; d];
    let mut sd = vec![0.0; d];
    for &i in tr {
        for (m, &v) in mean.iter_mut().zip(features.row(i)) {
            *m += v / n_train as f64;
        }
    }
    for &i in tr {
        for ((s, &m), &v) in sd.iter_mut().zip(&mean).zip(features.row(i)) {
            *s += (v - m) * (v - m) / n_train as f64;
        }
    }
    let sd: Vec<f64> = sd.iter().map(|&v| crate::math::sqrt(v).max(1e-8)).collect();
    let standardize = |idx: &[usize]| {
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            for ((&v, &m), &s) in features.row(i).iter().zip(&mean).zip(&sd) {
                data.push((v - m) / s);
            }
        }
        Tensor::matrix(idx.len(), d, data).expect("probe rows")
    };
    let (x_tr, x_te) = (standardize(tr), standardize(te));
    let y_tr: Vec<usize> = tr.iter().map(|&i| labels[i]).collect();
    let y_te: Vec<usize> = te.iter().map(|&i| labels[i]).collect();

    let mut params = ParamSet::new();
    let w = params.insert("probe.W", Tensor::zeros(&[d, n_classes]))?;
    let b = params.insert("probe.b", Tensor::zeros(&[n_classes]))?;
    let mut opt = Optimizer::new(OptimizerSettings::adam(PROBE_LR));
    for _ in 0..PROBE_STEPS {
        let mut tape = Tape::new();
        let x = tape.constant(x_tr.clone());
        let (wv, bv) = (tape.param(&params, w), tape.param(&params, b));
        let h = tape.matmul(x, wv)?;
        let logits = tape.add_bias(h, bv)?;
        let loss = tape.softmax_cross_entropy(logits, &y_tr)?;
        let grads = tape.backward(loss, &params)?;
        opt.step(&mut params, &grads, &[w, b])?;
    }
    let accuracy = |x: &Tensor, y: &[usize]| -> Result<f64> {
        if y.is_empty() {
            return Ok(0.0);
        }
        let mut tape = Tape::inference();
        let xv = tape.constant(x.clone());
        let (wv, bv) = (tape.param(&params, w), tape.param(&params, b));
        let h = tape.matmul(xv, wv)?;
        let logits = tape.add_bias(h, bv)?;
        let pred = tape.value(logits).argmax_rows();
        Ok(pred.iter().zip(y).filter(|(p, t)| p == t).count() as f64 / y.len() as f64)
    };
    Ok(ProbeAccuracy {
        train: accuracy(&x_tr, &y_tr)?,
        test: accuracy(&x_te, &y_te)?,
    })
}

fn stack(a: &Tensor, b: &Tensor) -> Tensor {
    let mut data = a.data().to_vec();
    data.extend_from_slice(b.data());
    Tensor::matrix(a.rows() + b.rows(), a.cols(), data).expect("same width")
}

/// Domain probes on frozen `f_e` and `f_p`: every target-train sample plus
/// an equal number of source samples drawn without replacement by `seed`.
/// Lower accuracy means better-aligned feature distributions.
pub fn domain_confusion_report(
    bundle: &ModelBundle,
    source: &Dataset,
    target: &TargetTrain,
    seed: u64,
) -> Result<(ProbeResult, ProbeResult)> {
    let n = target.len().min(source.len());
    let mut idx: Vec<usize> = (0..source.len()).collect();
    idx.shuffle(&mut rng::stream(rng::derive(seed, &[0x444f_4d41])));
    idx.truncate(n);
    let tgt_idx: Vec<usize> = (0..n).collect();
    let fs = bundle.features(Component::Es, &source.images(&idx))?;
    let ft = bundle.features(Component::Et, &target.images(&tgt_idx))?;
    let mut labels = vec![1usize; n];
    labels.extend(core::iter::repeat_n(0, n));
    let fe = train_probe(&stack(&fs.f_e, &ft.f_e), &labels, 2, seed)?;
    let fp = train_probe(&stack(&fs.f_p, &ft.f_p), &labels, 2, seed)?;
    Ok((
        ProbeResult {
            kind: ProbeKind::DomainOnFe,
            train_acc: fe.train,
            test_acc: fe.test,
            chance: 0.5,
        },
        ProbeResult {
            kind: ProbeKind::DomainOnFp,
            train_acc: fp.train,
            test_acc: fp.test,
            chance: 0.5,
        },
    ))
}

/// Pose-on-`f_s^e`, expression-on-`f_s^p` and expression-on-`f_s^e` probes
/// over the source set.
pub fn disentanglement_probes(bundle: &ModelBundle, source: &Dataset, seed: u64) -> Result<[ProbeResult; 3]> {
    let spec = &source.spec;
    let f = bundle.features(Component::Es, &source.all_images())?;
    let poses: Vec<usize> = source.samples().iter().map(|s| s.pose).collect();
    let exprs: Vec<usize> = source.samples().iter().map(|s| s.expression).collect();
    let run = |kind: ProbeKind, x: &Tensor, y: &[usize], c: usize| -> Result<ProbeResult> {
        let a = train_probe(x, y, c, seed)?;
        Ok(ProbeResult {
            kind,
            train_acc: a.train,
            test_acc: a.test,
            chance: kind.chance(spec.n_poses, spec.n_expressions),
        })
    };
    Ok([
        run(ProbeKind::PoseOnFe, &f.f_e, &poses, spec.n_poses)?,
        run(ProbeKind::ExprOnFp, &f.f_p, &exprs, spec.n_expressions)?,
        run(ProbeKind::ExprOnFe, &f.f_e, &exprs, spec.n_expressions)?,
    ])
}

/// Reconstruction loss on a fixed batch: batch positions and pairing draws
/// come from `seed`; pseudo-labels come from the current bundle.
pub fn recon_probe(bundle: &ModelBundle, data: TrainData<'_>, m: usize, seed: u64) -> Result<f64> {
    use rand::Rng;
    let mut r = rng::stream(rng::derive(seed, &[0x5245_4350]));
    let s: Vec<usize> = (0..m).map(|_| r.gen_range(0..data.source.len())).collect();
    let t: Vec<usize> = (0..m).map(|_| r.gen_range(0..data.target.len())).collect();
    let src = SourceBatch::from_dataset(data.source, &s);
    let tgt = TargetBatch::from_target(data.target, &t);
    let spec = &data.source.spec;
    let all = pseudo_label(bundle, &data.target.all_images())?;
    let index = losses::pseudo_index(&all, spec.n_poses, spec.n_expressions);
    let pseudo = pseudo_label(bundle, &tgt.images)?;
    let targets = losses::sample_recon_targets(&src, &pseudo, data.source, data.target, &index, &mut r)?;
    let mut tape = Tape::inference();
    let fs = losses::encode_batch(&mut tape, bundle, Component::Es, &src.images)?;
    let ft = losses::encode_batch(&mut tape, bundle, Component::Et, &tgt.images)?;
    let rl = losses::loss_recon(&mut tape, bundle, fs, ft, &targets, losses::ReconNorm::L2)?;
    Ok(tape.scalar(rl.loss))
}

/// One trained-and-evaluated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub run_id: String,
    pub mode: AblationMode,
    pub subject: usize,
    pub seed: u64,
    pub acc_overall: f64,
    pub acc_per_pose: Vec<f64>,
    pub final_losses: LossBreakdown,
    pub probes: Vec<ProbeResult>,
    pub pairing: PairingStats,
    pub recon_probe_init: f64,
    pub recon_probe_final: f64,
}

impl MetricsRecord {
    pub fn probe(&self, kind: ProbeKind) -> Option<&ProbeResult> {
        self.probes.iter().find(|p| p.kind == kind)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::faces::{generate_dataset, FactorSpec};
    use rand::Rng;

    #[test]
    fn separable_features_probe_well() {
        let mut r = rng::stream(1);
        let n = 200;
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let y = i % 2;
            let c = if y == 0 { -1.0 } else { 1.0 };
            data.push(c + r.gen_range(-0.5..0.5));
            data.push(r.gen_range(-1.0..1.0));
            labels.push(y);
        }
        let x = Tensor::matrix(n, 2, data).unwrap();
        let acc = train_probe(&x, &labels, 2, 3).unwrap();
        assert!(acc.test >= 0.95, "{acc:?}");
    }

    #[test]
    fn single_class_is_degenerate() {
        let x = Tensor::zeros(&[10, 2]);
        assert!(matches!(
            train_probe(&x, &[1; 10], 2, 0),
            Err(Error::DegenerateLabels(_))
        ));
    }

    #[test]
    fn perfect_and_constant_classifiers() {
        let spec = FactorSpec {
            n_subjects: 2,
            samples_per_cell: 1,
            ..FactorSpec::default()
        };
        let ds = generate_dataset(&spec).unwrap();
        let truth: Vec<usize> = ds.samples().iter().map(|s| s.expression).collect();
        let r = score(&truth, &ds).unwrap();
        assert_eq!(r.overall, 1.0);
        assert!(r.per_pose.iter().all(|&a| a == 1.0));
        let constant = vec![0; ds.len()];
        let r = score(&constant, &ds).unwrap();
        assert!((r.overall - 1.0 / 6.0).abs() < 1e-12);
        let weighted: f64 = r
            .per_pose
            .iter()
            .zip(&r.per_pose_counts)
            .map(|(a, &c)| a * c as f64)
            .sum::<f64>()
            / ds.len() as f64;
        assert!((weighted - r.overall).abs() < 1e-12);
    }

    #[test]
    fn empty_test_set_rejected() {
        let ds = Dataset::from_samples(FactorSpec::default(), Vec::new()).unwrap();
        assert!(score(&[], &ds).is_err());
    }
}
