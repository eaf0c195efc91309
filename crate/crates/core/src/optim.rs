//! Adaptive-moment optimiser with optional global-norm clipping.

use std::collections::BTreeMap;

use hstr_tensor::Tensor;

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::params::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
}

impl Adam {
    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self {
            learning_rate: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            clip_norm: cfg.clip_norm,
        }
    }
}

/// First and second moments plus the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: ParamStore,
    pub v: ParamStore,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros = ParamStore::from_map(params.iter().map(|(k, t)| (k.clone(), Tensor::zeros(t.raw_dim()))).collect());
        Self { t: 0, m: zeros.clone(), v: zeros }
    }
}

/// Euclidean norm of all gradients, accumulated in name order.
pub fn global_norm(grads: &BTreeMap<String, Tensor<f32>>) -> f64 {
    grads.values().flat_map(|g| g.iter()).map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub grad_norm: f64,
    /// Factor applied to the gradients by clipping (1 when unclipped).
    pub clip_scale: f64,
}

impl Adam {
    /// One update. Parameters without a gradient entry are treated as having
    /// zero gradient.
    pub fn step(
        &self,
        params: &mut ParamStore,
        grads: &BTreeMap<String, Tensor<f32>>,
        state: &mut AdamState,
    ) -> Result<StepStats> {
        let grad_norm = global_norm(grads);
        if !grad_norm.is_finite() {
            return Err(Error::Numeric(format!("gradient norm is {grad_norm}")));
        }
        let clip_scale = match self.clip_norm {
            Some(c) if grad_norm > c => c / grad_norm,
            _ => 1.0,
        };
        state.t += 1;
        let t = state.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let names: Vec<String> = params.names().cloned().collect();
        for name in names {
            let p = params.get_mut(&name).expect("name taken from the store");
            let (Some(m), Some(v)) = (state.m.get_mut(&name), state.v.get_mut(&name)) else {
                return Err(Error::Invariant(format!("optimiser state lacks {name}")));
            };
            let zeros;
            let g = match grads.get(&name) {
                Some(g) if g.shape() == p.shape() => g,
                Some(g) => {
                    return Err(Error::Shape(format!("gradient of {name} has shape {:?}, parameter {:?}", g.shape(), p.shape())))
                }
                None => {
                    zeros = Tensor::zeros(p.raw_dim());
                    &zeros
                }
            };
            let (b1, b2) = (self.beta1, self.beta2);
            for (((pi, mi), vi), &gi) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.iter()) {
                let g = gi as f64 * clip_scale;
                let mn = b1 * *mi as f64 + (1.0 - b1) * g;
                let vn = b2 * *vi as f64 + (1.0 - b2) * g * g;
                *mi = mn as f32;
                *vi = vn as f32;
                let update = self.learning_rate * (mn / bc1) / ((vn / bc2).sqrt() + self.eps);
                *pi = (*pi as f64 - update) as f32;
            }
        }
        Ok(StepStats { grad_norm, clip_scale })
    }
}

#[cfg(test)]
mod tests {
    use ndarray::IxDyn;

    use super::*;

    fn adam(clip: Option<f64>) -> Adam {
        Adam { learning_rate: 0.1, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: clip }
    }

    fn one(name: &str, v: &[f32]) -> BTreeMap<String, Tensor<f32>> {
        BTreeMap::from([(name.to_string(), Tensor::from_shape_vec(IxDyn(&[v.len()]), v.to_vec()).unwrap())])
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = ParamStore::from_map(one("w", &[1.0, -1.0, 0.5]));
        let mut st = AdamState::new(&p);
        adam(None).step(&mut p, &one("w", &[2.0, -0.3, 0.0]), &mut st).unwrap();
        let w = p.get("w").unwrap();
        assert!((w[[0]] - 0.9).abs() < 1e-6);
        assert!((w[[1]] + 0.9).abs() < 1e-6);
        assert_eq!(w[[2]], 0.5);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn minimises_quadratic() {
        let mut p = ParamStore::from_map(one("w", &[3.0, -2.0]));
        let mut st = AdamState::new(&p);
        for _ in 0..300 {
            let w = p.get("w").unwrap().clone();
            adam(None).step(&mut p, &BTreeMap::from([("w".to_string(), w * 2.0)]), &mut st).unwrap();
        }
        assert!(p.get("w").unwrap().iter().all(|v| v.abs() < 0.05));
    }

    #[test]
    fn clipping_scales_gradients() {
        let g = one("w", &[3.0, 4.0]);
        assert_eq!(global_norm(&g), 5.0);
        let mut p = ParamStore::from_map(one("w", &[0.0, 0.0]));
        let mut st = AdamState::new(&p);
        let stats = adam(Some(1.0)).step(&mut p, &g, &mut st).unwrap();
        assert!((stats.clip_scale - 0.2).abs() < 1e-12);
        let m = st.m.get("w").unwrap();
        assert!((m[[0]] - 0.06).abs() < 1e-7 && (m[[1]] - 0.08).abs() < 1e-7);
    }

    #[test]
    fn non_finite_gradient_is_numeric_error() {
        let mut p = ParamStore::from_map(one("w", &[0.0]));
        let mut st = AdamState::new(&p);
        let err = adam(None).step(&mut p, &one("w", &[f32::NAN]), &mut st).unwrap_err();
        assert_eq!(err.exit_code(), 4);
    }
}
