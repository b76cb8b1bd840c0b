//! Adaptive-moment (Adam) descent over a fixed list of parameter tensors.

use super::{AutodiffError, Tensor};

/// Hyperparameters for [`OptimizerState`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators, one pair per parameter tensor in the
/// order the parameters are passed to [`optimizer_step`].
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub hyper: Adam,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(hyper: Adam) -> Self {
        Self {
            hyper,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.hyper.lr = lr;
    }
}

/// Applies one Adam update using each parameter's populated gradient, then
/// clears the gradients.
pub fn optimizer_step(
    state: &mut OptimizerState,
    params: &mut [&mut Tensor],
) -> Result<(), AutodiffError> {
    if let Some(i) = params.iter().position(|p| p.grad().is_none()) {
        return Err(AutodiffError::Contract(format!(
            "parameter {i} has no gradient"
        )));
    }
    if state.first.is_empty() {
        state.first = params.iter().map(|p| vec![0.0; p.len()]).collect();
        state.second = state.first.clone();
    }
    if state.first.len() != params.len()
        || state
            .first
            .iter()
            .zip(params.iter())
            .any(|(m, p)| m.len() != p.len())
    {
        return Err(AutodiffError::Contract(
            "optimizer moments do not match the parameter list".into(),
        ));
    }
    state.step += 1;
    let Adam {
        lr,
        beta1,
        beta2,
        eps,
    } = state.hyper;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for ((p, m), v) in params
        .iter_mut()
        .zip(&mut state.first)
        .zip(&mut state.second)
    {
        let g = p.take_grad().expect("checked above");
        let data = p.data_mut();
        for i in 0..data.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let mh = m[i] / bc1;
            let vh = v[i] / bc2;
            data[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
    Ok(())
}
