//! The eight networks and their forward passes.
//!
//! Every component is a small multilayer perceptron registered in one
//! [`ParamSet`] under its own name prefix (`E_s`, `E_t`, `D_p`, `R`, `D_de`,
//! `D_dp`, `G_s`, `G_t`).
//!
//! `R` and `D_p` are also applied crosswise (`R` to pose features, `D_p` to
//! expression features), so both take inputs of width `max(d_p, d_e)`; the
//! narrower feature is zero-padded on the right before entering them.

use alloc::format;
use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::faces::{Domain, FactorSpec};
use crate::math;
use crate::rng;
use crate::tensor::{ParamId, ParamSet, Tape, Tensor, Var};

/// Layer widths. All configurable; defaults follow [`ArchConfig::for_spec`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub input_dim: usize,
    pub trunk_hidden: usize,
    pub pose_dim: usize,
    pub expr_dim: usize,
    pub head_hidden: usize,
    pub gen_hidden: usize,
    pub n_poses: usize,
    pub n_expressions: usize,
}

impl ArchConfig {
    pub fn for_spec(spec: &FactorSpec) -> Self {
        Self {
            input_dim: spec.pixels(),
            trunk_hidden: 128,
            pose_dim: 16,
            expr_dim: 32,
            head_hidden: 64,
            gen_hidden: 128,
            n_poses: spec.n_poses,
            n_expressions: spec.n_expressions,
        }
    }

    /// Input width of the `R` and `D_p` heads.
    pub fn cross_width(&self) -> usize {
        self.pose_dim.max(self.expr_dim)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("input_dim", self.input_dim),
            ("trunk_hidden", self.trunk_hidden),
            ("pose_dim", self.pose_dim),
            ("expr_dim", self.expr_dim),
            ("head_hidden", self.head_hidden),
            ("gen_hidden", self.gen_hidden),
        ];
        for (field, v) in fields {
            if v == 0 {
                return Err(Error::Config {
                    field,
                    reason: "must be positive".into(),
                });
            }
        }
        if self.n_poses < 2 || self.n_expressions < 2 {
            return Err(Error::Config {
                field: "n_poses/n_expressions",
                reason: "need at least 2 classes".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Component {
    /// Source encoder.
    Es,
    /// Target encoder.
    Et,
    /// Pose classifier.
    Dp,
    /// Expression classifier.
    R,
    /// Domain discriminator on expression features.
    Dde,
    /// Domain discriminator on pose features.
    Ddp,
    /// Source-image generator.
    Gs,
    /// Target-image generator.
    Gt,
}

impl Component {
    pub const ALL: [Component; 8] = [
        Component::Es,
        Component::Et,
        Component::Dp,
        Component::R,
        Component::Dde,
        Component::Ddp,
        Component::Gs,
        Component::Gt,
    ];

    pub fn prefix(self) -> &'static str {
        match self {
            Component::Es => "E_s",
            Component::Et => "E_t",
            Component::Dp => "D_p",
            Component::R => "R",
            Component::Dde => "D_de",
            Component::Ddp => "D_dp",
            Component::Gs => "G_s",
            Component::Gt => "G_t",
        }
    }

    pub fn from_prefix(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.prefix() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Dense {
    w: ParamId,
    b: ParamId,
}

impl Dense {
    fn forward(&self, tape: &mut Tape, params: &ParamSet, x: Var) -> Result<Var> {
        let w = tape.param(params, self.w);
        let b = tape.param(params, self.b);
        let h = tape.matmul(x, w)?;
        tape.add_bias(h, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Encoder {
    trunk: Dense,
    pose: Dense,
    expr: Dense,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Mlp {
    hidden: Dense,
    out: Dense,
    input_width: usize,
}

/// Features of one encoder pass, as tape nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVars {
    pub pose: Var,
    pub expr: Var,
}

/// Materialized features of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePair {
    pub f_p: Tensor,
    pub f_e: Tensor,
    pub domain: Domain,
}

/// Predicted target labels (argmax, ties to the lowest class id).
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PseudoLabels {
    pub expressions: Vec<usize>,
    pub poses: Vec<usize>,
}

/// All eight components and their parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub arch: ArchConfig,
    pub params: ParamSet,
    e_s: Encoder,
    e_t: Encoder,
    d_p: Mlp,
    r: Mlp,
    d_de: Mlp,
    d_dp: Mlp,
    g_s: Mlp,
    g_t: Mlp,
}

/// `(name, fan_in, fan_out)` for every weight, in registration order.
fn layout(arch: &ArchConfig) -> Vec<(Component, &'static str, usize, usize)> {
    let a = arch;
    let cw = a.cross_width();
    let mut out = Vec::new();
    for enc in [Component::Es, Component::Et] {
        out.push((enc, "trunk", a.input_dim, a.trunk_hidden));
        out.push((enc, "pose", a.trunk_hidden, a.pose_dim));
        out.push((enc, "expr", a.trunk_hidden, a.expr_dim));
    }
    out.push((Component::Dp, "hidden", cw, a.head_hidden));
    out.push((Component::Dp, "out", a.head_hidden, a.n_poses));
    out.push((Component::R, "hidden", cw, a.head_hidden));
    out.push((Component::R, "out", a.head_hidden, a.n_expressions));
    out.push((Component::Dde, "hidden", a.expr_dim, a.head_hidden));
    out.push((Component::Dde, "out", a.head_hidden, 1));
    out.push((Component::Ddp, "hidden", a.pose_dim, a.head_hidden));
    out.push((Component::Ddp, "out", a.head_hidden, 1));
    for g in [Component::Gs, Component::Gt] {
        out.push((g, "hidden", a.pose_dim + a.expr_dim, a.gen_hidden));
        out.push((g, "out", a.gen_hidden, a.input_dim));
    }
    out
}

/// Kaiming-uniform weights (bound `sqrt(6 / fan_in)`), zero biases, drawn
/// from one stream seeded by `seed` in registration order.
pub fn init_bundle(seed: u64, arch: ArchConfig) -> Result<ModelBundle> {
    arch.validate()?;
    let mut r = rng::stream(rng::derive(seed, &[0x494e_4954]));
    let mut params = ParamSet::new();
    for (c, layer, fan_in, fan_out) in layout(&arch) {
        let bound = math::sqrt(6.0 / fan_in as f64);
        let w: Vec<f64> = (0..fan_in * fan_out).map(|_| r.gen_range(-bound..bound)).collect();
        params.insert(&format!("{}.{layer}.W", c.prefix()), Tensor::matrix(fan_in, fan_out, w)?)?;
        params.insert(&format!("{}.{layer}.b", c.prefix()), Tensor::zeros(&[fan_out]))?;
    }
    ModelBundle::from_params(arch, params)
}

impl ModelBundle {
    /// Binds a parameter set (e.g. loaded from a checkpoint) to the
    /// architecture, checking every expected name and shape.
    pub fn from_params(arch: ArchConfig, params: ParamSet) -> Result<Self> {
        arch.validate()?;
        let expected = layout(&arch);
        if params.len() != expected.len() * 2 {
            return Err(Error::Usage(format!(
                "parameter set has {} tensors, architecture needs {}",
                params.len(),
                expected.len() * 2
            )));
        }
        let dense = |c: Component, layer: &str| -> Result<Dense> {
            let (_, _, fi, fo) = *expected
                .iter()
                .find(|(cc, l, _, _)| *cc == c && *l == layer)
                .expect("layout entry");
            let wn = format!("{}.{layer}.W", c.prefix());
            let bn = format!("{}.{layer}.b", c.prefix());
            let w = params.id(&wn).ok_or_else(|| Error::Usage(format!("missing parameter {wn}")))?;
            let b = params.id(&bn).ok_or_else(|| Error::Usage(format!("missing parameter {bn}")))?;
            if params.get(w).shape() != [fi, fo] || params.get(b).shape() != [fo] {
                return Err(Error::Dimension {
                    op: "from_params",
                    left: params.get(w).shape().to_vec(),
                    right: alloc::vec![fi, fo],
                });
            }
            Ok(Dense { w, b })
        };
        let encoder = |c| -> Result<Encoder> {
            Ok(Encoder {
                trunk: dense(c, "trunk")?,
                pose: dense(c, "pose")?,
                expr: dense(c, "expr")?,
            })
        };
        let mlp = |c, input_width| -> Result<Mlp> {
            Ok(Mlp {
                hidden: dense(c, "hidden")?,
                out: dense(c, "out")?,
                input_width,
            })
        };
        let cw = arch.cross_width();
        Ok(Self {
            e_s: encoder(Component::Es)?,
            e_t: encoder(Component::Et)?,
            d_p: mlp(Component::Dp, cw)?,
            r: mlp(Component::R, cw)?,
            d_de: mlp(Component::Dde, arch.expr_dim)?,
            d_dp: mlp(Component::Ddp, arch.pose_dim)?,
            g_s: mlp(Component::Gs, arch.pose_dim + arch.expr_dim)?,
            g_t: mlp(Component::Gt, arch.pose_dim + arch.expr_dim)?,
            arch,
            params,
        })
    }

    fn encoder(&self, c: Component) -> Result<&Encoder> {
        match c {
            Component::Es => Ok(&self.e_s),
            Component::Et => Ok(&self.e_t),
            _ => Err(Error::Usage(format!("{} is not an encoder", c.prefix()))),
        }
    }

    /// Shared trunk (relu) followed by the pose and expression heads.
    pub fn encode(&self, tape: &mut Tape, encoder: Component, images: Var) -> Result<FeatureVars> {
        let enc = *self.encoder(encoder)?;
        let x = tape.value(images);
        if x.shape().len() != 2 || x.cols() != self.arch.input_dim {
            return Err(Error::Dimension {
                op: "encode",
                left: x.shape().to_vec(),
                right: alloc::vec![self.arch.input_dim],
            });
        }
        let h = enc.trunk.forward(tape, &self.params, images)?;
        let h = tape.relu(h);
        Ok(FeatureVars {
            pose: enc.pose.forward(tape, &self.params, h)?,
            expr: enc.expr.forward(tape, &self.params, h)?,
        })
    }

    fn mlp_forward(&self, tape: &mut Tape, mlp: Mlp, x: Var) -> Result<Var> {
        let h = mlp.hidden.forward(tape, &self.params, x)?;
        let h = tape.relu(h);
        mlp.out.forward(tape, &self.params, h)
    }

    /// Logits of `R` (width E) or `D_p` (width P). Accepts pose- or
    /// expression-width features; narrower inputs are zero-padded.
    pub fn classify(&self, tape: &mut Tape, head: Component, features: Var) -> Result<Var> {
        let mlp = match head {
            Component::R => self.r,
            Component::Dp => self.d_p,
            _ => return Err(Error::Usage(format!("{} is not a classifier", head.prefix()))),
        };
        let f = tape.value(features);
        let w = f.cols();
        if f.shape().len() != 2 || (w != self.arch.pose_dim && w != self.arch.expr_dim) {
            return Err(Error::Dimension {
                op: "classify",
                left: f.shape().to_vec(),
                right: alloc::vec![self.arch.pose_dim, self.arch.expr_dim],
            });
        }
        let x = if w < mlp.input_width {
            let pad = tape.constant(Tensor::zeros(&[f.rows(), mlp.input_width - w]));
            tape.concat(features, pad)?
        } else {
            features
        };
        self.mlp_forward(tape, mlp, x)
    }

    /// Domain logit (`m × 1`) of `D_de` over expression features or `D_dp`
    /// over pose features.
    pub fn discriminate(&self, tape: &mut Tape, disc: Component, features: Var) -> Result<Var> {
        let mlp = match disc {
            Component::Dde => self.d_de,
            Component::Ddp => self.d_dp,
            _ => return Err(Error::Usage(format!("{} is not a discriminator", disc.prefix()))),
        };
        let f = tape.value(features);
        if f.shape().len() != 2 || f.cols() != mlp.input_width {
            return Err(Error::Dimension {
                op: "discriminate",
                left: f.shape().to_vec(),
                right: alloc::vec![mlp.input_width],
            });
        }
        self.mlp_forward(tape, mlp, features)
    }

    /// Image from `[f_p | f_e]`, sigmoid output in (0, 1).
    pub fn generate(&self, tape: &mut Tape, generator: Component, f_p: Var, f_e: Var) -> Result<Var> {
        let mlp = match generator {
            Component::Gs => self.g_s,
            Component::Gt => self.g_t,
            _ => return Err(Error::Usage(format!("{} is not a generator", generator.prefix()))),
        };
        let (wp, we) = (tape.value(f_p).cols(), tape.value(f_e).cols());
        if wp != self.arch.pose_dim || we != self.arch.expr_dim {
            return Err(Error::Dimension {
                op: "generate",
                left: alloc::vec![wp, we],
                right: alloc::vec![self.arch.pose_dim, self.arch.expr_dim],
            });
        }
        let x = tape.concat(f_p, f_e)?;
        let logits = self.mlp_forward(tape, mlp, x)?;
        Ok(tape.sigmoid(logits))
    }

    /// Frozen features of a batch.
    pub fn features(&self, encoder: Component, images: &Tensor) -> Result<FeaturePair> {
        let mut tape = Tape::inference();
        let x = tape.constant(images.clone());
        let f = self.encode(&mut tape, encoder, x)?;
        Ok(FeaturePair {
            f_p: tape.value(f.pose).clone(),
            f_e: tape.value(f.expr).clone(),
            domain: if encoder == Component::Es {
                Domain::Source
            } else {
                Domain::Target
            },
        })
    }

    /// Logits of a classifier head over frozen features.
    pub fn head_logits(&self, head: Component, features: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::inference();
        let x = tape.constant(features.clone());
        let y = self.classify(&mut tape, head, x)?;
        Ok(tape.value(y).clone())
    }

    /// Expression predictions of `R ∘ encoder`.
    pub fn predict_expression(&self, encoder: Component, images: &Tensor) -> Result<Vec<usize>> {
        let f = self.features(encoder, images)?;
        Ok(self.head_logits(Component::R, &f.f_e)?.argmax_rows())
    }

    /// Overwrites every parameter of `to` with the matching one of `from`
    /// (both must be encoders, or both heads of the same shape).
    pub fn copy_component(&mut self, from: Component, to: Component) {
        let pairs: Vec<(ParamId, ParamId)> = self
            .params
            .ids_with_prefix(from.prefix())
            .filter_map(|id| {
                let suffix = &self.params.name(id)[from.prefix().len()..];
                self.params.id(&format!("{}{suffix}", to.prefix())).map(|dst| (id, dst))
            })
            .collect();
        for (src, dst) in pairs {
            let t = self.params.get(src).clone();
            *self.params.get_mut(dst) = t;
        }
    }

    pub fn checksum(&self, c: Component) -> u64 {
        self.params.checksum(c.prefix())
    }
}

/// `ŷ = argmax R(E_t(x))`, `p̂ = argmax D_p(E_t(x))`.
pub fn pseudo_label(bundle: &ModelBundle, target_images: &Tensor) -> Result<PseudoLabels> {
    let f = bundle.features(Component::Et, target_images)?;
    Ok(PseudoLabels {
        expressions: bundle.head_logits(Component::R, &f.f_e)?.argmax_rows(),
        poses: bundle.head_logits(Component::Dp, &f.f_p)?.argmax_rows(),
    })
}
