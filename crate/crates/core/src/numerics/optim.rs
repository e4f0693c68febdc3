use serde::{Deserialize, Serialize};

use super::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update over every parameter, then zeroes gradients.
///
/// Coordinates whose gradient is exactly zero keep their value; their moment
/// estimates still decay. Parameters that never received a gradient buffer are
/// treated as all-zero gradients.
pub fn adam_step(params: &mut ParamStore, cfg: &AdamConfig) {
    for p in params.params_mut() {
        p.step_count += 1;
        let t = p.step_count as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let grad = p.tensor.grad().map(<[f64]>::to_vec);
        let m = p.adam_m.data_mut();
        match &grad {
            None => {
                m.iter_mut().for_each(|x| *x *= cfg.beta1);
                p.adam_v.data_mut().iter_mut().for_each(|x| *x *= cfg.beta2);
            }
            Some(g) => {
                let v = p.adam_v.data_mut();
                let w = p.tensor.data_mut();
                for i in 0..g.len() {
                    let gi = g[i];
                    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
                    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
                    if gi != 0.0 {
                        let mhat = m[i] / bc1;
                        let vhat = v[i] / bc2;
                        w[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
                    }
                }
            }
        }
        p.tensor.zero_grad();
    }
}

/// Plain gradient descent `θ ← θ − lr·g`; zeroes gradients afterwards.
pub fn sgd_step(params: &mut ParamStore, lr: f64) {
    for p in params.params_mut() {
        if let Some(g) = p.tensor.grad().map(<[f64]>::to_vec) {
            for (w, gi) in p.tensor.data_mut().iter_mut().zip(&g) {
                *w -= lr * gi;
            }
        }
        p.tensor.zero_grad();
    }
}

pub fn global_grad_norm(params: &ParamStore) -> f64 {
    params
        .iter()
        .filter_map(|(_, p)| p.tensor.grad())
        .flat_map(|g| g.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt()
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(params: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = global_grad_norm(params);
    if norm > max_norm {
        let scale = max_norm / norm;
        for p in params.params_mut() {
            if p.tensor.grad().is_some() {
                p.tensor.grad_mut().iter_mut().for_each(|g| *g *= scale);
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn store_with(values: &[f64], grads: &[f64]) -> ParamStore {
        let mut s = ParamStore::new();
        let id = s
            .add("p", Tensor::vector(values.to_vec()).unwrap())
            .unwrap();
        s.value_mut(id).grad_mut().copy_from_slice(grads);
        s
    }

    #[test]
    fn zero_grad_leaves_params() {
        let mut s = store_with(&[1.0, -2.0], &[0.5, 0.0]);
        let cfg = AdamConfig::default();
        adam_step(&mut s, &cfg);
        let before = s.value(s.id("p").unwrap()).data().to_vec();
        let m_before = s.get(s.id("p").unwrap()).adam_m.data()[0];
        assert_eq!(before[1], -2.0);
        for _ in 0..5 {
            adam_step(&mut s, &cfg);
        }
        let p = s.get(s.id("p").unwrap());
        assert_eq!(p.tensor.data(), &before[..]);
        assert!(p.adam_m.data()[0].abs() < m_before.abs());
        assert_eq!(p.step_count, 6);
    }

    #[test]
    fn single_step_is_minus_lr() {
        let mut s = store_with(&[0.0], &[1.0]);
        let cfg = AdamConfig::default();
        adam_step(&mut s, &cfg);
        // m̂ = 1, v̂ = 1 → Δ = −lr/(1+eps)
        let want = -cfg.lr / (1.0 + cfg.eps);
        let got = s.value(s.id("p").unwrap()).data()[0];
        assert!((got - want).abs() < 1e-15, "{got} vs {want}");
        assert_eq!(s.value(s.id("p").unwrap()).grad().unwrap(), &[0.0]);
    }

    #[test]
    fn steady_state_step_is_lr_sign() {
        let mut s = store_with(&[0.0, 0.0], &[3.0, -0.01]);
        let cfg = AdamConfig::default();
        let id = s.id("p").unwrap();
        let mut prev = s.value(id).data().to_vec();
        for _ in 0..2000 {
            s.value_mut(id).grad_mut().copy_from_slice(&[3.0, -0.01]);
            prev = s.value(id).data().to_vec();
            adam_step(&mut s, &cfg);
        }
        let now = s.value(id).data();
        assert!(((now[0] - prev[0]) + cfg.lr).abs() < 1e-6 * cfg.lr.max(1.0));
        assert!(((now[1] - prev[1]) - cfg.lr).abs() < 1e-5);
    }

    #[test]
    fn clipping_cases() {
        let mut s = store_with(&[0.0, 0.0], &[3.0, 0.0]);
        assert_eq!(clip_global_norm(&mut s, 5.0), 3.0);
        assert_eq!(s.value(s.id("p").unwrap()).grad().unwrap(), &[3.0, 0.0]);

        let mut s = store_with(&[0.0, 0.0], &[3.0, 4.0]);
        assert_eq!(clip_global_norm(&mut s, 5.0), 5.0);
        assert_eq!(s.value(s.id("p").unwrap()).grad().unwrap(), &[3.0, 4.0]);

        let mut s = store_with(&[0.0, 0.0], &[6.0, 8.0]);
        assert_eq!(clip_global_norm(&mut s, 5.0), 10.0);
        let g = s.value(s.id("p").unwrap()).grad().unwrap().to_vec();
        assert!((g[0] - 3.0).abs() < 1e-15 && (g[1] - 4.0).abs() < 1e-15);
        clip_global_norm(&mut s, 5.0);
        let g2 = s.value(s.id("p").unwrap()).grad().unwrap().to_vec();
        assert!((g2[0] - g[0]).abs() < 1e-15 && (g2[1] - g[1]).abs() < 1e-15);
    }
}
