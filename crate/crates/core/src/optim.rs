//! Adam with bias correction.

use std::collections::BTreeMap;

use ndarray::{Array2, Zip};

use crate::error::{PgibError, Result};
use crate::params::ParameterSet;

pub const DEFAULT_LR: f64 = 0.005;

#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: BTreeMap<String, Array2<f64>>,
    second: BTreeMap<String, Array2<f64>>,
}

impl OptimizerState {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn first_moment(&self, name: &str) -> Option<&Array2<f64>> {
        self.first.get(name)
    }

    /// Clears both moments for selected rows of one parameter.
    pub fn reset_rows(&mut self, name: &str, rows: &[usize]) {
        for moments in [&mut self.first, &mut self.second] {
            if let Some(m) = moments.get_mut(name) {
                for &r in rows {
                    m.row_mut(r).fill(0.0);
                }
            }
        }
    }
}

impl Default for OptimizerState {
    fn default() -> Self {
        Self::new(DEFAULT_LR)
    }
}

/// One Adam update of every array in `params` that has a gradient of the
/// same name. Gradients are validated before anything is modified.
pub fn adam_step(params: &mut ParameterSet, grads: &ParameterSet, state: &mut OptimizerState) -> Result<()> {
    for (name, g) in grads.iter() {
        let p = params
            .get(name)
            .ok_or_else(|| PgibError::Argument(format!("gradient for unknown parameter {name}")))?;
        if p.dim() != g.dim() {
            return Err(PgibError::Shape(format!(
                "gradient for {name} has shape {:?}, parameter {:?}",
                g.dim(),
                p.dim()
            )));
        }
        if let Some(bad) = g.iter().find(|x| !x.is_finite()) {
            return Err(PgibError::NonFinite(format!("gradient of {name} contains {bad}")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let (lr, eps) = (state.lr, state.eps);
    for (name, g) in grads.iter() {
        let p = params.expect_mut(name);
        let m = state
            .first
            .entry(name.to_string())
            .or_insert_with(|| Array2::zeros(g.dim()));
        let v = state
            .second
            .entry(name.to_string())
            .or_insert_with(|| Array2::zeros(g.dim()));
        Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        });
    }
    Ok(())
}
