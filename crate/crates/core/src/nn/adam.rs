use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::params::{NamedTensor, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
        }
    }
}

/// Adam over the parameters of a store whose names match `prefixes`
/// (all parameters when empty).
#[derive(Debug)]
pub struct Adam {
    cfg: AdamConfig,
    prefixes: Vec<String>,
    step: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, prefixes: &[&str]) -> Self {
        Self {
            cfg,
            prefixes: prefixes.iter().map(|s| s.to_string()).collect(),
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    fn owns(&self, name: &str) -> bool {
        self.prefixes.is_empty() || self.prefixes.iter().any(|p| name.starts_with(p.as_str()))
    }

    /// Applies one update. Parameters absent from `grads` get a zero gradient.
    pub fn step(&mut self, store: &ParamStore, grads: &GradStore) -> Result<()> {
        let mut updates: Vec<(&String, &candle_core::Var, Tensor)> = Vec::new();
        for (name, var) in store.iter().filter(|(n, _)| self.owns(n)) {
            let g = match grads.get(var.as_tensor()) {
                Some(g) => g.detach(),
                None => var.zeros_like()?,
            };
            updates.push((name, var, g));
        }
        let scale = match self.cfg.clip_norm {
            Some(max_norm) => {
                let mut sq = 0.0f64;
                for (_, _, g) in &updates {
                    sq += super::ops::scalar(&g.sqr()?.sum_all()?)?;
                }
                let norm = sq.sqrt();
                if !norm.is_finite() {
                    return Err(Error::Divergence {
                        component: "gradient norm".into(),
                    });
                }
                if norm > max_norm { max_norm / norm } else { 1.0 }
            }
            None => 1.0,
        };
        self.step += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2 = 1.0 - b2.powi(self.step as i32);
        for (name, var, g) in updates {
            let g = if scale != 1.0 { g.affine(scale, 0.0)? } else { g };
            let m = match self.m.get(name) {
                Some(m) => (m.affine(b1, 0.0)? + g.affine(1.0 - b1, 0.0)?)?,
                None => g.affine(1.0 - b1, 0.0)?,
            };
            let g2 = g.sqr()?;
            let v = match self.v.get(name) {
                Some(v) => (v.affine(b2, 0.0)? + g2.affine(1.0 - b2, 0.0)?)?,
                None => g2.affine(1.0 - b2, 0.0)?,
            };
            let denom = v.affine(1.0 / bc2, 0.0)?.sqrt()?.affine(1.0, self.cfg.eps)?;
            let delta = m.affine(self.cfg.lr / bc1, 0.0)?.div(&denom)?;
            var.set(&(var.as_tensor() - delta)?.detach())?;
            self.m.insert(name.clone(), m.detach());
            self.v.insert(name.clone(), v.detach());
        }
        Ok(())
    }

    /// Moment estimates and step count for checkpointing.
    pub fn export_state(&self) -> Result<(u64, BTreeMap<String, NamedTensor>)> {
        let mut out = BTreeMap::new();
        for (prefix, map) in [("adam.m.", &self.m), ("adam.v.", &self.v)] {
            for (name, t) in map {
                out.insert(
                    format!("{prefix}{name}"),
                    NamedTensor {
                        shape: t.dims().to_vec(),
                        data: t.flatten_all()?.to_dtype(candle_core::DType::F32)?.to_vec1()?,
                    },
                );
            }
        }
        Ok((self.step, out))
    }

    pub fn import_state(
        &mut self,
        store: &ParamStore,
        step: u64,
        tensors: &BTreeMap<String, NamedTensor>,
    ) -> Result<()> {
        self.step = step;
        self.m.clear();
        self.v.clear();
        for (key, t) in tensors {
            let (target, name) = if let Some(n) = key.strip_prefix("adam.m.") {
                (&mut self.m, n)
            } else if let Some(n) = key.strip_prefix("adam.v.") {
                (&mut self.v, n)
            } else {
                continue;
            };
            let value = Tensor::from_vec(t.data.clone(), t.shape.as_slice(), store.device())?
                .to_dtype(store.dtype())?;
            target.insert(name.to_string(), value);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::DType;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut s = ParamStore::new(0, DType::F64);
        let w = s.zeros("w", &[2]).unwrap();
        let target = Tensor::new(&[1.0f64, -2.0], s.device()).unwrap();
        let loss = (&w - &target).unwrap().sqr().unwrap().sum_all().unwrap();
        let grads = loss.backward().unwrap();
        let mut opt = Adam::new(AdamConfig { lr: 0.1, ..Default::default() }, &[]);
        opt.step(&s, &grads).unwrap();
        let v = s.get("w").unwrap().to_vec1::<f64>().unwrap();
        assert!((v[0] - 0.1).abs() < 1e-6 && (v[1] + 0.1).abs() < 1e-6, "{v:?}");
    }

    #[test]
    fn converges_on_quadratic() {
        let mut s = ParamStore::new(0, DType::F64);
        let w = s.zeros("w", &[3]).unwrap();
        let target = Tensor::new(&[0.5f64, -0.25, 2.0], s.device()).unwrap();
        let mut opt = Adam::new(AdamConfig { lr: 0.05, ..Default::default() }, &[]);
        for _ in 0..2000 {
            let loss = (&w - &target).unwrap().sqr().unwrap().sum_all().unwrap();
            opt.step(&s, &loss.backward().unwrap()).unwrap();
        }
        let v = s.get("w").unwrap().to_vec1::<f64>().unwrap();
        assert!((v[2] - 2.0).abs() < 1e-3, "{v:?}");
    }

    #[test]
    fn prefixes_restrict_updates() {
        let mut s = ParamStore::new(0, DType::F64);
        let a = s.zeros("a.w", &[1]).unwrap();
        let b = s.zeros("b.w", &[1]).unwrap();
        let loss = (a.affine(1.0, -1.0).unwrap().sqr().unwrap() + b.affine(1.0, -1.0).unwrap().sqr().unwrap())
            .unwrap()
            .sum_all()
            .unwrap();
        let mut opt = Adam::new(AdamConfig::default(), &["a."]);
        opt.step(&s, &loss.backward().unwrap()).unwrap();
        assert_eq!(s.get("b.w").unwrap().to_vec1::<f64>().unwrap(), vec![0.0]);
        assert_ne!(s.get("a.w").unwrap().to_vec1::<f64>().unwrap(), vec![0.0]);
    }
}
