//! Named parameter registry.
//!
//! Insertion order is the canonical order everywhere: checkpoints, optimizer
//! sweeps, and tape bindings all walk it, which keeps training runs and
//! serialized artifacts reproducible.

use std::collections::HashMap;

use rand::Rng;

use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor, TensorError};

/// Stable handle to one named tensor in a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

pub struct ParamSet<F: Scalar> {
    entries: Vec<(String, Tensor<F>)>,
    index: HashMap<String, usize>,
}

impl<F: Scalar> Default for ParamSet<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> ParamSet<F> {
    pub fn new() -> Self {
        ParamSet { entries: Vec::new(), index: HashMap::new() }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<F>) -> Result<ParamId, TensorError> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(TensorError::Invalid(format!("duplicate parameter `{name}`")));
        }
        let id = ParamId(self.entries.len());
        self.index.insert(name.clone(), id.0);
        self.entries.push((name, value));
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].0
    }

    pub fn value(&self, id: ParamId) -> &Tensor<F> {
        &self.entries[id.0].1
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.entries[id.0].1
    }

    pub fn set(&mut self, id: ParamId, value: Tensor<F>) -> Result<(), TensorError> {
        if value.shape() != self.value(id).shape() {
            return Err(TensorError::ShapeMismatch {
                op: "param_set",
                lhs: self.value(id).shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        self.entries[id.0].1 = value;
        Ok(())
    }

    /// (name, tensor) pairs in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn total_elements(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Inserts every parameter into the tape as a tracked leaf, in insertion
    /// order, and returns the handle table.
    pub fn bind(&self, tape: &mut Tape<F>) -> Binding {
        let vars = self.entries.iter().map(|(_, t)| tape.tracked(t.clone())).collect();
        Binding { vars }
    }
}

/// Per-forward-pass table mapping [`ParamId`]s to tape variables.
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    /// Wraps caller-created leaves; `vars[i]` must correspond to parameter
    /// id `i`. Gradient checks use this to probe existing tape leaves.
    pub fn from_vars(vars: Vec<Var>) -> Binding {
        Binding { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Uniform Glorot draw over `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot<F: Scalar>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut impl Rng,
) -> Tensor<F> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::rand_uniform(shape, F::from_f64(-bound), F::from_f64(bound), rng)
}

/// Square conv kernel `[k,k,cin,cout]` with Glorot fan counts `k*k*cin` and
/// `k*k*cout`.
pub fn conv_init<F: Scalar>(k: usize, cin: usize, cout: usize, rng: &mut impl Rng) -> Tensor<F> {
    glorot(&[k, k, cin, cout], k * k * cin, k * k * cout, rng)
}

/// Dense weight `[m,n]` for `y = W x`.
pub fn linear_init<F: Scalar>(m: usize, n: usize, rng: &mut impl Rng) -> Tensor<F> {
    glorot(&[m, n], n, m, rng)
}

pub fn bias_init<F: Scalar>(c: usize, value: f64) -> Tensor<F> {
    Tensor::filled(&[c], F::from_f64(value))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn insertion_order_is_stable() {
        let mut ps = ParamSet::<f64>::new();
        let a = ps.insert("b_second", Tensor::scalar(2.0)).unwrap();
        let b = ps.insert("a_first", Tensor::scalar(1.0)).unwrap();
        let names: Vec<&str> = ps.iter().map(|(n, _)| n).collect();
        assert_eq!(names, vec!["b_second", "a_first"]);
        assert_eq!(ps.id("a_first"), Some(b));
        assert_eq!(ps.name(a), "b_second");
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut ps = ParamSet::<f64>::new();
        ps.insert("w", Tensor::scalar(0.0)).unwrap();
        assert!(ps.insert("w", Tensor::scalar(1.0)).is_err());
    }

    #[test]
    fn set_checks_shape() {
        let mut ps = ParamSet::<f64>::new();
        let id = ps.insert("w", Tensor::zeros(&[2, 3])).unwrap();
        assert!(ps.set(id, Tensor::zeros(&[3, 2])).is_err());
        ps.set(id, Tensor::filled(&[2, 3], 1.0)).unwrap();
        assert_eq!(ps.value(id).data(), &[1.0; 6]);
    }

    #[test]
    fn glorot_respects_bound_and_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let t: Tensor<f64> = conv_init(3, 4, 8, &mut rng);
        let bound = (6.0f64 / (3.0 * 3.0 * 4.0 + 3.0 * 3.0 * 8.0)).sqrt();
        assert!(t.iter().all(|v| v.abs() <= bound));
        let mut rng2 = ChaCha8Rng::seed_from_u64(7);
        let t2: Tensor<f64> = conv_init(3, 4, 8, &mut rng2);
        assert_eq!(t.data(), t2.data());
    }
}
