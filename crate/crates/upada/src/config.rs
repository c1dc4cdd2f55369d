//! Flat `key = value` config files. `#` starts a comment; unknown or
//! repeated keys are errors.

use std::collections::BTreeMap;
use std::fmt::Write;
use std::str::FromStr;

use upada_core::faces::FactorSpec;
use upada_core::losses::{AdvTarget, ConfusionMode, ReconNorm};
use upada_core::tensor::OptimizerSettings;
use upada_core::train::{AblationMode, TrainConfig};

use crate::error::{Error, Result};

/// Keys of a training config, in rendering order.
pub const TRAIN_KEYS: &[&str] = &[
    "mode",
    "seed",
    "epochs",
    "warmup_epochs",
    "k1",
    "k2",
    "k3",
    "batch_size",
    "optimizer",
    "lr",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "alpha",
    "beta",
    "gamma",
    "eta",
    "confusion",
    "recon_norm",
    "adv_target",
    "trunk_hidden",
    "pose_dim",
    "expr_dim",
    "head_hidden",
    "gen_hidden",
];

/// Keys of a dataset spec, in rendering order.
pub const SPEC_KEYS: &[&str] = &[
    "n_subjects",
    "n_expressions",
    "n_poses",
    "side",
    "samples_per_cell",
    "noise_sigma",
    "seed",
];

/// Splits a config text into key/value pairs, checking keys against `allowed`.
pub fn parse_pairs(text: &str, allowed: &[&str]) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {}", n + 1), format!("expected `key = value`, found `{line}`")))?;
        let (k, v) = (k.trim(), v.trim());
        if !allowed.contains(&k) {
            return Err(Error::config(k, format!("unknown key (line {})", n + 1)));
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::config(k, format!("repeated key (line {})", n + 1)));
        }
    }
    Ok(out)
}

fn value<T: FromStr>(pairs: &BTreeMap<String, String>, key: &str) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    pairs
        .get(key)
        .map(|v| v.parse::<T>().map_err(|e| Error::config(key, format!("cannot parse `{v}`: {e}"))))
        .transpose()
}

fn choice<T: Copy>(pairs: &BTreeMap<String, String>, key: &str, options: &[(&str, T)]) -> Result<Option<T>> {
    let Some(v) = pairs.get(key) else {
        return Ok(None);
    };
    options
        .iter()
        .find(|(name, _)| name.eq_ignore_ascii_case(v))
        .map(|&(_, t)| Some(t))
        .ok_or_else(|| {
            let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
            Error::config(key, format!("`{v}` is not one of {}", names.join(", ")))
        })
}

const CONFUSION: &[(&str, ConfusionMode)] = &[("uniform", ConfusionMode::Uniform), ("inverted", ConfusionMode::Inverted)];
const RECON_NORM: &[(&str, ReconNorm)] = &[("l2", ReconNorm::L2), ("squared", ReconNorm::Squared)];
const ADV_TARGET: &[(&str, AdvTarget)] = &[("inverted", AdvTarget::Inverted), ("confusion", AdvTarget::Confusion)];

fn name_of<T: PartialEq + Copy>(options: &[(&'static str, T)], t: T) -> &'static str {
    options.iter().find(|(_, o)| *o == t).map(|(n, _)| *n).expect("listed option")
}

pub fn parse_train_config(text: &str) -> Result<TrainConfig> {
    let p = parse_pairs(text, TRAIN_KEYS)?;
    let mut c = TrainConfig::default();
    if let Some(m) = p.get("mode") {
        c.mode = AblationMode::from_str(m)?;
    }
    macro_rules! set {
        ($($field:ident).+ , $key:literal) => {
            if let Some(v) = value(&p, $key)? {
                c.$($field).+ = v;
            }
        };
    }
    set!(seed, "seed");
    set!(epochs, "epochs");
    set!(warmup_epochs, "warmup_epochs");
    set!(k1, "k1");
    set!(k2, "k2");
    set!(k3, "k3");
    set!(batch_size, "batch_size");
    set!(weights.alpha, "alpha");
    set!(weights.beta, "beta");
    set!(weights.gamma, "gamma");
    set!(weights.eta, "eta");
    set!(trunk_hidden, "trunk_hidden");
    set!(pose_dim, "pose_dim");
    set!(expr_dim, "expr_dim");
    set!(head_hidden, "head_hidden");
    set!(gen_hidden, "gen_hidden");
    if let Some(v) = choice(&p, "confusion", CONFUSION)? {
        c.confusion = v;
    }
    if let Some(v) = choice(&p, "recon_norm", RECON_NORM)? {
        c.recon_norm = v;
    }
    if let Some(v) = choice(&p, "adv_target", ADV_TARGET)? {
        c.adv_target = v;
    }

    let kind = p.get("optimizer").map(|s| s.to_ascii_lowercase());
    let lr: Option<f64> = value(&p, "lr")?;
    let (b1, b2, eps): (Option<f64>, Option<f64>, Option<f64>) =
        (value(&p, "adam_beta1")?, value(&p, "adam_beta2")?, value(&p, "adam_eps")?);
    let is_adam = match kind.as_deref() {
        None => matches!(c.optimizer, OptimizerSettings::Adam { .. }),
        Some("adam") => true,
        Some("sgd") => false,
        Some(other) => return Err(Error::config("optimizer", format!("`{other}` is not one of sgd, adam"))),
    };
    c.optimizer = if is_adam {
        let OptimizerSettings::Adam { lr: l0, beta1, beta2, eps: e0 } = OptimizerSettings::adam(1e-3) else {
            unreachable!()
        };
        OptimizerSettings::Adam {
            lr: lr.unwrap_or(l0),
            beta1: b1.unwrap_or(beta1),
            beta2: b2.unwrap_or(beta2),
            eps: eps.unwrap_or(e0),
        }
    } else {
        if let Some(k) = ["adam_beta1", "adam_beta2", "adam_eps"].iter().find(|k| p.contains_key(**k)) {
            return Err(Error::config(*k, "only valid with optimizer = adam"));
        }
        OptimizerSettings::Sgd {
            lr: lr.unwrap_or(c.optimizer.lr()),
        }
    };
    c.validate()?;
    Ok(c)
}

/// Every key with its resolved value; parses back to the same config.
pub fn render_train_config(c: &TrainConfig) -> String {
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k} = {v}");
    };
    kv("mode", c.mode.to_string());
    kv("seed", c.seed.to_string());
    kv("epochs", c.epochs.to_string());
    kv("warmup_epochs", c.warmup_epochs.to_string());
    kv("k1", c.k1.to_string());
    kv("k2", c.k2.to_string());
    kv("k3", c.k3.to_string());
    kv("batch_size", c.batch_size.to_string());
    match c.optimizer {
        OptimizerSettings::Sgd { lr } => {
            kv("optimizer", "sgd".into());
            kv("lr", format!("{lr:?}"));
        }
        OptimizerSettings::Adam { lr, beta1, beta2, eps } => {
            kv("optimizer", "adam".into());
            kv("lr", format!("{lr:?}"));
            kv("adam_beta1", format!("{beta1:?}"));
            kv("adam_beta2", format!("{beta2:?}"));
            kv("adam_eps", format!("{eps:?}"));
        }
    }
    kv("alpha", format!("{:?}", c.weights.alpha));
    kv("beta", format!("{:?}", c.weights.beta));
    kv("gamma", format!("{:?}", c.weights.gamma));
    kv("eta", format!("{:?}", c.weights.eta));
    kv("confusion", name_of(CONFUSION, c.confusion).into());
    kv("recon_norm", name_of(RECON_NORM, c.recon_norm).into());
    kv("adv_target", name_of(ADV_TARGET, c.adv_target).into());
    kv("trunk_hidden", c.trunk_hidden.to_string());
    kv("pose_dim", c.pose_dim.to_string());
    kv("expr_dim", c.expr_dim.to_string());
    kv("head_hidden", c.head_hidden.to_string());
    kv("gen_hidden", c.gen_hidden.to_string());
    s
}

pub fn parse_factor_spec(text: &str) -> Result<FactorSpec> {
    let p = parse_pairs(text, SPEC_KEYS)?;
    let mut s = FactorSpec::default();
    macro_rules! set {
        ($field:ident) => {
            if let Some(v) = value(&p, stringify!($field))? {
                s.$field = v;
            }
        };
    }
    set!(n_subjects);
    set!(n_expressions);
    set!(n_poses);
    set!(side);
    set!(samples_per_cell);
    set!(noise_sigma);
    set!(seed);
    s.validate()?;
    Ok(s)
}

pub fn render_factor_spec(s: &FactorSpec) -> String {
    format!(
        "n_subjects = {}\nn_expressions = {}\nn_poses = {}\nside = {}\nsamples_per_cell = {}\nnoise_sigma = {:?}\nseed = {}\n",
        s.n_subjects, s.n_expressions, s.n_poses, s.side, s.samples_per_cell, s.noise_sigma, s.seed
    )
}
