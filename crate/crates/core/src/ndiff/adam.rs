use serde::{Deserialize, Serialize};

use super::params::Params;
use super::tensor::Real;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay: `p ← p − lr·wd·p` before the adaptive step.
    pub weight_decay: f64,
    /// Optional global-norm gradient clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            clip_norm: None,
        }
    }
}

/// Parameters plus ADAM moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    pub params: Params<T>,
    m: Params<T>,
    v: Params<T>,
    step: u64,
    frozen: Vec<String>,
}

impl<T: Real> ParamStore<T> {
    pub fn new(params: Params<T>) -> Self {
        ParamStore {
            m: params.zeros_like(),
            v: params.zeros_like(),
            params,
            step: 0,
            frozen: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&Params<T>, &Params<T>) {
        (&self.m, &self.v)
    }

    /// Parameters whose name starts with any of `prefixes` are skipped by [`adam_step`].
    pub fn set_frozen(&mut self, prefixes: &[&str]) {
        self.frozen = prefixes.iter().map(|s| s.to_string()).collect();
    }

    fn is_frozen(&self, name: &str) -> bool {
        self.frozen.iter().any(|p| name.starts_with(p.as_str()))
    }
}

pub fn adam_step<T: Real>(store: &mut ParamStore<T>, grads: &Params<T>, cfg: &AdamConfig) -> Result<()> {
    store.params.check_same_keys(grads)?;
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    let clip = match cfg.clip_norm {
        Some(max) => {
            let norm = grads.global_norm().as_f64();
            if norm > max {
                T::c(max / norm)
            } else {
                T::one()
            }
        }
        None => T::one(),
    };
    store.step += 1;
    let t = store.step as i32;
    let (b1, b2) = (T::c(cfg.beta1), T::c(cfg.beta2));
    let one = T::one();
    let bc1 = one - b1.powi(t);
    let bc2 = one - b2.powi(t);
    let lr = T::c(cfg.lr);
    let decay = T::c(cfg.lr * cfg.weight_decay);
    let eps = T::c(cfg.eps);

    let frozen: Vec<bool> = store.params.names().map(|n| store.is_frozen(n)).collect();
    let grads_iter = grads.iter();
    let m_iter = store.m.iter_mut();
    let v_iter = store.v.iter_mut();
    for ((((_, p), (_, g)), ((_, m), (_, v))), frozen) in store
        .params
        .iter_mut()
        .zip(grads_iter)
        .zip(m_iter.zip(v_iter))
        .zip(frozen)
    {
        if frozen {
            continue;
        }
        let pd = p.data_mut();
        let (md, vd) = (m.data_mut(), v.data_mut());
        for (i, &graw) in g.data().iter().enumerate() {
            let gi = graw * clip;
            pd[i] -= decay * pd[i];
            md[i] = b1 * md[i] + (one - b1) * gi;
            vd[i] = b2 * vd[i] + (one - b2) * gi * gi;
            let mhat = md[i] / bc1;
            let vhat = vd[i] / bc2;
            pd[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndiff::Tensor;

    fn scalar(v: f64) -> Params<f64> {
        let mut p = Params::new();
        p.insert("p", Tensor::from_vec(&[1], vec![v]).unwrap()).unwrap();
        p
    }

    #[test]
    fn one_step_hand_computation() {
        let mut store = ParamStore::new(scalar(1.0));
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        adam_step(&mut store, &scalar(1.0), &cfg).unwrap();
        // m̂ = 1, v̂ = 1  →  p = 1 − 0.1·1/(1 + 1e-8)
        let expected = 1.0 - 0.1 / (1.0 + 1e-8);
        assert!((store.params.get("p").unwrap().data()[0] - expected).abs() < 1e-12);
        assert_eq!(store.step_count(), 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut store = ParamStore::new(scalar(0.7));
        adam_step(&mut store, &scalar(0.0), &AdamConfig::default()).unwrap();
        assert_eq!(store.params.get("p").unwrap().data()[0], 0.7);
        assert_eq!(store.step_count(), 1);
    }

    #[test]
    fn decoupled_weight_decay() {
        let mut store = ParamStore::new(scalar(2.0));
        let cfg = AdamConfig {
            lr: 0.1,
            weight_decay: 0.5,
            ..AdamConfig::default()
        };
        adam_step(&mut store, &scalar(0.0), &cfg).unwrap();
        assert!((store.params.get("p").unwrap().data()[0] - 1.9).abs() < 1e-12);
    }

    #[test]
    fn key_mismatch_is_an_error() {
        let mut store = ParamStore::new(scalar(1.0));
        let mut g = scalar(1.0);
        g.insert("extra", Tensor::zeros(&[1])).unwrap();
        assert!(adam_step(&mut store, &g, &AdamConfig::default()).is_err());
        assert!(adam_step(&mut store, &Params::new(), &AdamConfig::default()).is_err());
    }

    #[test]
    fn identical_inputs_identical_results() {
        let mut a = ParamStore::new(scalar(0.3));
        let mut b = ParamStore::new(scalar(0.3));
        for i in 0..5 {
            let g = scalar(0.1 * i as f64 - 0.2);
            adam_step(&mut a, &g, &AdamConfig::default()).unwrap();
            adam_step(&mut b, &g, &AdamConfig::default()).unwrap();
        }
        assert_eq!(a, b);
    }

    #[test]
    fn frozen_parameters_do_not_move() {
        let mut p = scalar(1.0);
        p.insert("q", Tensor::from_vec(&[1], vec![1.0]).unwrap()).unwrap();
        let mut store = ParamStore::new(p.clone());
        store.set_frozen(&["q"]);
        let mut g = p.clone();
        g.scale(0.5);
        adam_step(&mut store, &g, &AdamConfig::default()).unwrap();
        assert_eq!(store.params.get("q").unwrap().data()[0], 1.0);
        assert!(store.params.get("p").unwrap().data()[0] < 1.0);
    }

    #[test]
    fn clipping_bounds_the_update_direction() {
        let mut store = ParamStore::new(scalar(0.0));
        let cfg = AdamConfig {
            clip_norm: Some(1.0),
            ..AdamConfig::default()
        };
        adam_step(&mut store, &scalar(100.0), &cfg).unwrap();
        let (m, _) = store.moments();
        assert!((m.get("p").unwrap().data()[0] - 0.1).abs() < 1e-12);
    }
}
