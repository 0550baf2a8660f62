use serde::{Deserialize, Serialize};

use super::network::{Gradients, LayerParams, ModelParams};
use super::scalar::Scalar;
use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Gradients<T>,
    pub v: Gradients<T>,
    pub config: AdamConfig,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ModelParams<T>, config: AdamConfig) -> Self {
        AdamState {
            step: 0,
            m: params.zero_grads(),
            v: params.zero_grads(),
            config,
        }
    }
}

fn same_shape<T>(a: &[LayerParams<T>], b: &[LayerParams<T>]) -> bool {
    a.len() == b.len()
        && a
            .iter()
            .zip(b)
            .all(|(x, y)| x.weights.len() == y.weights.len() && x.bias.len() == y.bias.len())
}

/// One bias-corrected Adam update. Moment updates and the step are evaluated
/// in `f64` and stored back at the model precision.
pub fn adam_step<T: Scalar>(
    params: &mut ModelParams<T>,
    grads: &Gradients<T>,
    state: &mut AdamState<T>,
) -> Result<(), ModelError> {
    if !same_shape(&params.layers, grads) || !same_shape(&params.layers, &state.m) {
        return Err(ModelError::ShapeMismatch {
            expected: params.num_params(),
            actual: grads.iter().map(|l| l.weights.len() + l.bias.len()).sum(),
        });
    }
    state.step += 1;
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    let c1 = 1.0 - beta1.powi(state.step as i32);
    let c2 = 1.0 - beta2.powi(state.step as i32);
    let update = |theta: &mut T, g: T, m: &mut T, v: &mut T| {
        let g = g.to_f64().unwrap();
        let m1 = beta1 * m.to_f64().unwrap() + (1.0 - beta1) * g;
        let v1 = beta2 * v.to_f64().unwrap() + (1.0 - beta2) * g * g;
        *m = T::from_f64_lossy(m1);
        *v = T::from_f64_lossy(v1);
        let step = lr * (m1 / c1) / ((v1 / c2).sqrt() + eps);
        *theta = T::from_f64_lossy(theta.to_f64().unwrap() - step);
    };
    for (((p, g), m), v) in params
        .layers
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        for k in 0..p.weights.len() {
            update(&mut p.weights[k], g.weights[k], &mut m.weights[k], &mut v.weights[k]);
        }
        for k in 0..p.bias.len() {
            update(&mut p.bias[k], g.bias[k], &mut m.bias[k], &mut v.bias[k]);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::refcnn::ModelSpec;

    fn one_layer() -> ModelParams<f64> {
        let spec = ModelSpec::parse("fcs5", [1, 1, 2], 0.0).unwrap();
        ModelParams::init_xavier(&spec, 0).unwrap()
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = one_layer();
        p.layers[0].weights.iter_mut().for_each(|w| *w = 0.0);
        let mut g = p.zero_grads();
        g[0].weights.iter_mut().for_each(|w| *w = 1.0);
        let mut st = AdamState::new(&p, AdamConfig::default());
        adam_step(&mut p, &g, &mut st).unwrap();
        for w in &p.layers[0].weights {
            assert!((w + 1e-5).abs() < 1e-12, "{w}");
        }
        assert_eq!(st.step, 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = one_layer();
        let before = p.clone();
        let g = p.zero_grads();
        let mut st = AdamState::new(&p, AdamConfig::default());
        adam_step(&mut p, &g, &mut st).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = one_layer();
        let mut st = AdamState::new(&p, AdamConfig::default());
        let g = vec![];
        assert!(adam_step(&mut p, &g, &mut st).is_err());
    }
}
