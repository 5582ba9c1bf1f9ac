//! Named parameter storage and initialization.

use std::collections::HashMap;

use rand::Rng;
use rstt_tensor::{Float, Graph, Tensor, Var};

use crate::error::{RsttError, Result};

/// Index of a tensor in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered name -> tensor map. Order is registration order and is stable
/// for a given configuration.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    lookup: HashMap<String, usize>,
}

impl<T: Float> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { names: Vec::new(), tensors: Vec::new(), lookup: HashMap::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.lookup.contains_key(&name) {
            return Err(RsttError::Config(format!("duplicate parameter {name}")));
        }
        self.lookup.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(value);
        Ok(ParamId(self.tensors.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.lookup.get(name).map(|&i| ParamId(i))
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Replace the value of `name`, keeping its shape.
    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let id = self.id(name).ok_or_else(|| RsttError::Config(format!("unknown parameter {name}")))?;
        if self.tensors[id.0].shape() != value.shape() {
            return Err(RsttError::Config(format!(
                "parameter {name} has shape {:?}, got {:?}",
                self.tensors[id.0].shape(),
                value.shape()
            )));
        }
        self.tensors[id.0] = value;
        Ok(())
    }

    /// Put every parameter on `g` as a tracked leaf, in store order.
    pub fn bind(&self, g: &Graph<T>) -> Vec<Var<T>> {
        self.tensors.iter().map(|t| g.param(t.clone())).collect()
    }

    pub fn cast<U: Float>(&self) -> ParamStore<U> {
        ParamStore { names: self.names.clone(), tensors: self.tensors.iter().map(Tensor::cast).collect(), lookup: self.lookup.clone() }
    }
}

/// Initial value rule of one tensor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Truncated normal at two standard deviations.
    TruncNormal(f64),
    /// Uniform in `±1/sqrt(fan_in)`.
    FanIn(usize),
    Zeros,
    Ones,
}

/// How [`Init`] rules are applied.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum InitScheme {
    #[default]
    Standard,
    /// Every tensor random and O(1)-scaled, including the zero-initialized
    /// exits, so that gradient checks exercise every path.
    Randomized,
}

pub struct Initializer<R> {
    pub rng: R,
    pub scheme: InitScheme,
}

impl<R: Rng> Initializer<R> {
    pub fn make<T: Float>(&mut self, shape: &[usize], init: Init) -> Tensor<T> {
        match (self.scheme, init) {
            (InitScheme::Randomized, Init::Ones) => Tensor::<T>::randn(shape, 0.2, &mut self.rng).map(|v| v + T::one()),
            (InitScheme::Randomized, _) => Tensor::randn(shape, 0.3, &mut self.rng),
            (_, Init::TruncNormal(std)) => Tensor::trunc_normal(shape, std, &mut self.rng),
            (_, Init::FanIn(fan_in)) => {
                let bound = 1.0 / (fan_in as f64).sqrt();
                Tensor::uniform(shape, -bound, bound, &mut self.rng)
            }
            (_, Init::Zeros) => Tensor::zeros(shape),
            (_, Init::Ones) => Tensor::ones(shape),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rstt_tensor::seeded_rng;

    #[test]
    fn store_keeps_order_and_rejects_duplicates() {
        let mut s = ParamStore::<f32>::new();
        let a = s.add("a", Tensor::zeros(&[2])).unwrap();
        let b = s.add("b", Tensor::zeros(&[3, 2])).unwrap();
        assert_eq!((a.index(), b.index()), (0, 1));
        assert_eq!(s.numel(), 8);
        assert!(s.add("a", Tensor::zeros(&[1])).is_err());
        assert_eq!(s.iter().map(|(n, _)| n).collect::<Vec<_>>(), vec!["a", "b"]);
    }

    #[test]
    fn set_checks_shape() {
        let mut s = ParamStore::<f64>::new();
        s.add("w", Tensor::zeros(&[2, 2])).unwrap();
        assert!(s.set("w", Tensor::ones(&[4])).is_err());
        s.set("w", Tensor::ones(&[2, 2])).unwrap();
        assert_eq!(s.by_name("w").unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn standard_init_rules() {
        let mut init = Initializer { rng: seeded_rng(1), scheme: InitScheme::Standard };
        let z: Tensor<f32> = init.make(&[4], Init::Zeros);
        assert!(z.data().iter().all(|&v| v == 0.0));
        let t: Tensor<f32> = init.make(&[1000], Init::TruncNormal(0.02));
        assert!(t.data().iter().all(|v| v.abs() <= 0.04));
        let f: Tensor<f32> = init.make(&[1000], Init::FanIn(16));
        assert!(f.data().iter().all(|v| v.abs() <= 0.25));
    }
}
