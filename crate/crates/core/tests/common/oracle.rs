//! Plain-loop reference forward pass that reads the parameter tensors
//! directly (no tape, no kernels), and the fixtures it is checked on.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use upada_core::losses::{self, ConfusionMode, ReconNorm, ReconTargets, SourceBatch};
use upada_core::model::{init_bundle, ArchConfig, Component, ModelBundle};
use upada_core::tensor::{Tape, Tensor};

pub type Rows = Vec<Vec<f64>>;

pub fn arch() -> ArchConfig {
    ArchConfig {
        input_dim: 10,
        trunk_hidden: 7,
        pose_dim: 3,
        expr_dim: 5,
        head_hidden: 6,
        gen_hidden: 4,
        n_poses: 5,
        n_expressions: 6,
    }
}

pub fn dense(b: &ModelBundle, name: &str, x: &Rows) -> Rows {
    let w = b.params.by_name(&format!("{name}.W")).unwrap();
    let bias = b.params.by_name(&format!("{name}.b")).unwrap();
    let (fi, fo) = (w.shape()[0], w.shape()[1]);
    x.iter()
        .map(|row| {
            assert_eq!(row.len(), fi);
            (0..fo)
                .map(|j| bias.data()[j] + (0..fi).map(|i| row[i] * w.data()[i * fo + j]).sum::<f64>())
                .collect()
        })
        .collect()
}

pub fn relu(x: Rows) -> Rows {
    x.into_iter().map(|r| r.into_iter().map(|v| v.max(0.0)).collect()).collect()
}

pub fn mlp(b: &ModelBundle, prefix: &str, x: &Rows) -> Rows {
    let h = relu(dense(b, &format!("{prefix}.hidden"), x));
    dense(b, &format!("{prefix}.out"), &h)
}

pub fn encode(b: &ModelBundle, prefix: &str, x: &Rows) -> (Rows, Rows) {
    let h = relu(dense(b, &format!("{prefix}.trunk"), x));
    (dense(b, &format!("{prefix}.pose"), &h), dense(b, &format!("{prefix}.expr"), &h))
}

pub fn pad(x: &Rows, width: usize) -> Rows {
    x.iter()
        .map(|r| {
            let mut r = r.clone();
            r.resize(width, 0.0);
            r
        })
        .collect()
}

pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

pub fn ce(logits: &Rows, labels: &[usize]) -> f64 {
    logits.iter().zip(labels).map(|(z, &y)| -log_softmax(z)[y]).sum::<f64>() / logits.len() as f64
}

pub fn uniform_ce(logits: &Rows) -> f64 {
    logits
        .iter()
        .map(|z| -log_softmax(z).iter().sum::<f64>() / z.len() as f64)
        .sum::<f64>()
        / logits.len() as f64
}

pub fn bce(logits: &Rows, target: f64) -> f64 {
    logits
        .iter()
        .map(|z| {
            let p = 1.0 / (1.0 + (-z[0]).exp());
            -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
        })
        .sum::<f64>()
        / logits.len() as f64
}

pub fn sigmoid_rows(x: Rows) -> Rows {
    x.into_iter().map(|r| r.into_iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect()).collect()
}

pub fn concat(a: &Rows, b: &Rows) -> Rows {
    a.iter().zip(b).map(|(x, y)| x.iter().chain(y).copied().collect()).collect()
}

pub fn rows(t: &Tensor) -> Rows {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

pub struct Fixture {
    pub bundle: ModelBundle,
    pub source: SourceBatch,
    pub target: Tensor,
    pub recon: ReconTargets,
}

pub fn fixture(seed: u64, m: usize) -> Fixture {
    let a = arch();
    let bundle = init_bundle(seed, a).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    let img = |r: &mut ChaCha8Rng| Tensor::matrix(m, a.input_dim, (0..m * a.input_dim).map(|_| r.gen_range(0.0..1.0)).collect()).unwrap();
    let source = SourceBatch {
        images: img(&mut r),
        expressions: (0..m).map(|_| r.gen_range(0..a.n_expressions)).collect(),
        poses: (0..m).map(|_| r.gen_range(0..a.n_poses)).collect(),
    };
    let target = img(&mut r);
    let valid: Vec<bool> = (0..m).map(|i| i % 3 != 1).collect();
    let invalid = valid.iter().filter(|v| !**v).count();
    let recon = ReconTargets {
        source_images: img(&mut r),
        target_images: img(&mut r),
        valid,
        fallbacks: 0,
        invalid,
    };
    Fixture {
        bundle,
        source,
        target,
        recon,
    }
}

/// Every loss computed by the library, in `[l_p, l_e, l_adv_d, l_adv_g, l_cross, l_clc]` order.
pub fn library(fx: &Fixture, norm: ReconNorm) -> [f64; 6] {
    let mut tape = Tape::inference();
    let b = &fx.bundle;
    let src = losses::encode_batch(&mut tape, b, Component::Es, &fx.source.images).unwrap();
    let tgt = losses::encode_batch(&mut tape, b, Component::Et, &fx.target).unwrap();
    let vars = [
        losses::loss_pose(&mut tape, b, src, &fx.source).unwrap(),
        losses::loss_expr(&mut tape, b, src, &fx.source).unwrap(),
        losses::loss_adv_discriminator(&mut tape, b, src, tgt).unwrap(),
        losses::loss_adv_encoder(&mut tape, b, src, tgt).unwrap(),
        losses::loss_cross(&mut tape, b, src, &fx.source, ConfusionMode::Uniform).unwrap(),
        losses::loss_recon(&mut tape, b, src, tgt, &fx.recon, norm).unwrap().loss,
    ];
    vars.map(|v| tape.scalar(v))
}

pub fn reference(fx: &Fixture, norm: ReconNorm) -> [f64; 6] {
    let b = &fx.bundle;
    let cw = b.arch.pose_dim.max(b.arch.expr_dim);
    let (sp, se) = encode(b, "E_s", &rows(&fx.source.images));
    let (tp, te) = encode(b, "E_t", &rows(&fx.target));
    let l_p = ce(&mlp(b, "D_p", &pad(&sp, cw)), &fx.source.poses);
    let l_e = ce(&mlp(b, "R", &pad(&se, cw)), &fx.source.expressions);
    let adv = |ys: f64, yt: f64| {
        bce(&mlp(b, "D_de", &se), ys) + bce(&mlp(b, "D_de", &te), yt) + bce(&mlp(b, "D_dp", &sp), ys) + bce(&mlp(b, "D_dp", &tp), yt)
    };
    let l_cross = uniform_ce(&mlp(b, "R", &pad(&sp, cw))) + uniform_ce(&mlp(b, "D_p", &pad(&se, cw)));
    let gs = sigmoid_rows(mlp(b, "G_s", &concat(&sp, &te)));
    let gt = sigmoid_rows(mlp(b, "G_t", &concat(&tp, &se)));
    let (xs, xt) = (rows(&fx.recon.source_images), rows(&fx.recon.target_images));
    let dist = |a: &[f64], c: &[f64]| {
        let s: f64 = a.iter().zip(c).map(|(u, v)| (u - v) * (u - v)).sum();
        match norm {
            ReconNorm::L2 => s.sqrt(),
            ReconNorm::Squared => s,
        }
    };
    let mut total = 0.0;
    let mut n = 0;
    for i in 0..fx.recon.valid.len() {
        if fx.recon.valid[i] {
            total += dist(&gs[i], &xs[i]) + dist(&gt[i], &xt[i]);
            n += 1;
        }
    }
    [l_p, l_e, adv(1.0, 0.0), adv(0.0, 1.0), l_cross, total / n as f64]
}

pub fn zero(b: &mut ModelBundle, name: &str) {
    for suffix in ["W", "b"] {
        let id = b.params.id(&format!("{name}.{suffix}")).unwrap();
        b.params.get_mut(id).data_mut().fill(0.0);
    }
}
