use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::{Gradients, ParamId, ParamSet};
use crate::error::{usage, Result};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum OptimizerSettings {
    Sgd { lr: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerSettings {
    pub fn adam(lr: f64) -> Self {
        OptimizerSettings::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerSettings::Sgd { lr } | OptimizerSettings::Adam { lr, .. } => lr,
        }
    }
}

/// First/second moment buffers and step count of one parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamMoments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

/// Gradient-descent optimizer with moment state keyed by parameter name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimizer {
    pub settings: OptimizerSettings,
    pub state: BTreeMap<String, AdamMoments>,
}

impl Optimizer {
    pub fn new(settings: OptimizerSettings) -> Self {
        Self {
            settings,
            state: BTreeMap::new(),
        }
    }

    /// Applies one descent step to the listed parameters.
    ///
    /// Every listed parameter must have been reached by the backward pass
    /// that produced `grads`.
    pub fn step(&mut self, params: &mut ParamSet, grads: &Gradients, ids: &[ParamId]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(usage("gradients do not match the parameter set"));
        }
        for &id in ids {
            if !grads.reached(id) {
                return Err(usage(alloc::format!(
                    "missing gradient for stepped parameter {}",
                    params.name(id)
                )));
            }
        }
        for &id in ids {
            let g = grads.get(id).data();
            match self.settings {
                OptimizerSettings::Sgd { lr } => {
                    for (p, &gv) in params.get_mut(id).data_mut().iter_mut().zip(g) {
                        *p -= lr * gv;
                    }
                }
                OptimizerSettings::Adam { lr, beta1, beta2, eps } => {
                    let name = String::from(params.name(id));
                    let st = self.state.entry(name).or_insert_with(|| AdamMoments {
                        m: vec![0.0; g.len()],
                        v: vec![0.0; g.len()],
                        t: 0,
                    });
                    st.t += 1;
                    let t = i32::try_from(st.t).unwrap_or(i32::MAX);
                    let c1 = 1.0 - math::powi(beta1, t);
                    let c2 = 1.0 - math::powi(beta2, t);
                    let p = params.get_mut(id).data_mut();
                    for i in 0..g.len() {
                        st.m[i] = beta1 * st.m[i] + (1.0 - beta1) * g[i];
                        st.v[i] = beta2 * st.v[i] + (1.0 - beta2) * g[i] * g[i];
                        let mhat = st.m[i] / c1;
                        let vhat = st.v[i] / c2;
                        p[i] -= lr * mhat / (math::sqrt(vhat) + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
