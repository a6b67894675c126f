use std::collections::{BTreeMap, HashSet};

use candle_core::{DType, Device, Tensor, TensorId, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A named parameter exported as 32-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Owns every trainable variable of a model, keyed by dotted name.
///
/// Initialization draws from one seeded stream in declaration order, so a
/// model built twice with the same seed is bitwise identical.
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    dtype: DType,
    device: Device,
    rng: ChaCha8Rng,
}

impl std::fmt::Debug for ParamStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParamStore")
            .field("params", &self.vars.len())
            .field("dtype", &self.dtype)
            .finish()
    }
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType) -> Self {
        Self {
            vars: BTreeMap::new(),
            dtype,
            device: Device::Cpu,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn insert(&mut self, name: &str, shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        if self.vars.contains_key(name) {
            return Err(Error::Argument(format!("parameter `{name}` declared twice")));
        }
        let t = Tensor::from_vec(data, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        self.vars.insert(name.to_string(), var);
        Ok(out)
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.rng.random_range(-bound..=bound)).collect();
        self.insert(name, shape, data)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        self.insert(name, shape, vec![0.0; n])
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Tensor ids of every parameter whose name starts with `prefix`.
    pub fn ids_with_prefix(&self, prefix: &str) -> HashSet<TensorId> {
        self.vars
            .iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, v)| v.as_tensor().id())
            .collect()
    }

    /// Overwrites a parameter in place; every layer holding it sees the change.
    pub fn set(&self, name: &str, value: &Tensor) -> Result<()> {
        let var = self
            .vars
            .get(name)
            .ok_or_else(|| Error::Argument(format!("unknown parameter `{name}`")))?;
        if var.dims() != value.dims() {
            return Err(Error::Argument(format!(
                "parameter `{name}` has shape {:?}, got {:?}",
                var.dims(),
                value.dims()
            )));
        }
        var.set(&value.to_dtype(self.dtype)?)?;
        Ok(())
    }

    /// Zeroes every bias (last name segment `b` or `b_*`).
    pub fn zero_biases(&self) -> Result<()> {
        for (name, var) in &self.vars {
            let last = name.rsplit('.').next().unwrap_or(name);
            if last == "b" || last.starts_with("b_") {
                var.set(&var.zeros_like()?)?;
            }
        }
        Ok(())
    }

    pub fn export(&self) -> Result<BTreeMap<String, NamedTensor>> {
        self.vars
            .iter()
            .map(|(name, var)| {
                let t = var.as_tensor();
                let data = t.flatten_all()?.to_dtype(DType::F32)?.to_vec1::<f32>()?;
                Ok((
                    name.clone(),
                    NamedTensor {
                        shape: t.dims().to_vec(),
                        data,
                    },
                ))
            })
            .collect()
    }

    /// Loads values for exactly the declared parameter set.
    pub fn import(&self, tensors: &BTreeMap<String, NamedTensor>, source: &str) -> Result<()> {
        for (name, var) in &self.vars {
            let t = tensors
                .get(name)
                .ok_or_else(|| Error::corrupt(source, format!("missing parameter `{name}`")))?;
            if t.shape != var.dims() {
                return Err(Error::corrupt(
                    source,
                    format!("parameter `{name}` has shape {:?}, expected {:?}", t.shape, var.dims()),
                ));
            }
            let value = Tensor::from_vec(t.data.clone(), t.shape.as_slice(), &self.device)?;
            var.set(&value.to_dtype(self.dtype)?)?;
        }
        if let Some(extra) = tensors.keys().find(|k| !self.vars.contains_key(*k)) {
            return Err(Error::corrupt(source, format!("unexpected parameter `{extra}`")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_values() {
        let mut a = ParamStore::new(7, DType::F32);
        let mut b = ParamStore::new(7, DType::F32);
        let ta = a.uniform("w", &[3, 4], 0.5).unwrap();
        let tb = b.uniform("w", &[3, 4], 0.5).unwrap();
        assert_eq!(ta.to_vec2::<f32>().unwrap(), tb.to_vec2::<f32>().unwrap());
        assert!(ta.flatten_all().unwrap().to_vec1::<f32>().unwrap().iter().all(|v| v.abs() <= 0.5));
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new(0, DType::F32);
        s.zeros("x.b", &[2]).unwrap();
        assert!(s.zeros("x.b", &[2]).is_err());
    }

    #[test]
    fn export_import_round_trip() {
        let mut a = ParamStore::new(1, DType::F32);
        a.uniform("l.w", &[2, 2], 1.0).unwrap();
        let mut b = ParamStore::new(2, DType::F32);
        let held = b.uniform("l.w", &[2, 2], 1.0).unwrap();
        b.import(&a.export().unwrap(), "mem").unwrap();
        assert_eq!(b.export().unwrap(), a.export().unwrap());
        // Layers holding the tensor observe the new values.
        assert_eq!(
            held.flatten_all().unwrap().to_vec1::<f32>().unwrap(),
            a.export().unwrap()["l.w"].data
        );
    }

    #[test]
    fn import_rejects_shape_mismatch() {
        let mut a = ParamStore::new(1, DType::F32);
        a.zeros("p", &[3]).unwrap();
        let mut bad = a.export().unwrap();
        bad.get_mut("p").unwrap().shape = vec![1, 3];
        assert!(matches!(a.import(&bad, "x"), Err(Error::Corrupt { .. })));
    }
}
