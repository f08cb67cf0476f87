use std::collections::BTreeMap;

use rand::Rng as _;

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Named tensors in a stable (sorted) order. Used for parameters and for
/// gradients with the same keys.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Params<T> {
    map: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> Params<T> {
    pub fn new() -> Self {
        Params { map: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.map.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        self.map.insert(name, t);
        Ok(())
    }

    pub fn set(&mut self, name: &str, t: Tensor<T>) -> Result<()> {
        let slot = self.get_mut(name)?;
        if slot.shape() != t.shape() {
            return Err(Error::shape(
                "set",
                format!("{name}: {:?} vs {:?}", slot.shape(), t.shape()),
            ));
        }
        *slot = t;
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.map
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.map
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.map.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn n_scalars(&self) -> usize {
        self.map.values().map(Tensor::len).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Params {
            map: self
                .map
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
        }
    }

    pub fn zero(&mut self) {
        for t in self.map.values_mut() {
            t.fill(T::zero());
        }
    }

    /// Adds `other` into `self`; keys must match exactly.
    pub fn accumulate(&mut self, other: &Self) -> Result<()> {
        self.check_same_keys(other)?;
        for (k, t) in &mut self.map {
            t.add_assign(&other.map[k])?;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: T) {
        for t in self.map.values_mut() {
            t.scale(s);
        }
    }

    pub fn check_same_keys(&self, other: &Self) -> Result<()> {
        if self.map.len() != other.map.len() || self.map.keys().ne(other.map.keys()) {
            let missing: Vec<_> = self.map.keys().filter(|k| !other.map.contains_key(*k)).collect();
            let extra: Vec<_> = other.map.keys().filter(|k| !self.map.contains_key(*k)).collect();
            return Err(Error::Config(format!(
                "parameter keys differ: missing {missing:?}, extra {extra:?}"
            )));
        }
        for (k, t) in &self.map {
            if t.shape() != other.map[k].shape() {
                return Err(Error::shape(
                    "params",
                    format!("{k}: {:?} vs {:?}", t.shape(), other.map[k].shape()),
                ));
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.map.values().all(Tensor::is_finite)
    }

    pub fn global_norm(&self) -> T {
        self.map
            .values()
            .flat_map(|t| t.data().iter())
            .map(|&v| v * v)
            .sum::<T>()
            .sqrt()
    }

    /// Restricts to parameters whose name starts with `prefix`.
    pub fn subset(&self, prefix: &str) -> Self {
        Params {
            map: self
                .map
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Params<U> {
        Params {
            map: self.map.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Little-endian `f32` bytes of every tensor in name order.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.n_scalars() * 4);
        for t in self.map.values() {
            for v in t.data() {
                out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            }
        }
        out
    }

    /// Adds a `rows×cols` tensor drawn from uniform(−1/√fan_in, 1/√fan_in).
    pub fn init_uniform(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut Rng,
    ) -> Result<()> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::c(rng.random_range(-bound..=bound))).collect();
        self.insert(name, Tensor::from_vec(shape, data)?)
    }
}
