use crate::element::Element;
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    /// Excluded from weight decay (batch-norm affine terms, biases).
    pub decay_exempt: bool,
    /// Receives gradient centralization (tensors with at least two axes).
    pub gc_eligible: bool,
}

/// Ordered registry of trainable tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet<T> {
    entries: Vec<ParamEntry<T>>,
}

impl<T: Element> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet { entries: Vec::new() }
    }

    /// Registers a tensor; multi-axis tensors are GC-eligible and decayed,
    /// vectors are decay-exempt. Returns the registry index.
    pub fn register(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<usize> {
        let multi_axis = tensor.shape().len() >= 2;
        self.register_with(name, tensor, !multi_axis, multi_axis)
    }

    pub fn register_with(
        &mut self,
        name: impl Into<String>,
        mut tensor: Tensor<T>,
        decay_exempt: bool,
        gc_eligible: bool,
    ) -> Result<usize> {
        let name = name.into();
        if self.entries.iter().any(|e| e.name == name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        tensor.requires_grad = true;
        self.entries.push(ParamEntry {
            name,
            tensor,
            decay_exempt,
            gc_eligible,
        });
        Ok(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry<T>] {
        &mut self.entries
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamEntry<T>> {
        self.entries.iter()
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry<T>> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamEntry<T>> {
        self.entries.iter_mut().find(|e| e.name == name)
    }

    pub fn tensor(&self, index: usize) -> &Tensor<T> {
        &self.entries[index].tensor
    }

    /// Total number of scalar parameters.
    pub fn num_elements(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        self.entries.iter_mut().for_each(|e| e.tensor.zero_grad());
    }

    /// Records parameter `index` on `tape` so its gradient can be collected.
    pub fn bind(&self, tape: &mut Tape<T>, index: usize) -> crate::tensor::Var {
        tape.param(index, &self.entries[index].tensor)
    }

    /// Accumulates gradients of every parameter leaf on a consumed tape.
    pub fn collect_grads(&mut self, tape: &Tape<T>) -> Result<()> {
        for (index, g) in tape.param_grads() {
            let entry = self
                .entries
                .get_mut(index)
                .ok_or_else(|| Error::Config(format!("tape references unknown parameter {index}")))?;
            entry.tensor.accumulate_grad(g)?;
        }
        Ok(())
    }

    /// Copies of all parameter values, in registry order.
    pub fn values(&self) -> Vec<Vec<T>> {
        self.entries.iter().map(|e| e.tensor.data().to_vec()).collect()
    }

    /// Overwrites all parameter values; shapes must match.
    pub fn set_values(&mut self, values: &[Vec<T>]) -> Result<()> {
        if values.len() != self.entries.len() {
            return Err(Error::shape(
                "set_values",
                format!("{} buffers for {} parameters", values.len(), self.entries.len()),
            ));
        }
        for (e, v) in self.entries.iter_mut().zip(values) {
            if v.len() != e.tensor.len() {
                return Err(Error::shape(
                    "set_values",
                    format!("`{}` has {} elements, got {}", e.name, e.tensor.len(), v.len()),
                ));
            }
            e.tensor.data_mut().copy_from_slice(v);
        }
        Ok(())
    }

    /// True when both sets have the same names and shapes in the same order.
    pub fn same_layout(&self, other: &ParamSet<T>) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| a.name == b.name && a.tensor.shape() == b.tensor.shape())
    }

    #[cfg(test)]
    fn check_unique(&self) -> bool {
        let mut seen = std::collections::HashSet::new();
        self.entries.iter().all(|e| seen.insert(e.name.as_str()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classification_follows_rank() {
        let mut p = ParamSet::<f32>::new();
        p.register("conv.weight", Tensor::zeros(&[4, 3, 3, 3])).unwrap();
        p.register("bn.weight", Tensor::zeros(&[4])).unwrap();
        let e = p.entries();
        assert!(e[0].gc_eligible && !e[0].decay_exempt);
        assert!(!e[1].gc_eligible && e[1].decay_exempt);
        assert!(p.check_unique());
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut p = ParamSet::<f32>::new();
        p.register("w", Tensor::zeros(&[2, 2])).unwrap();
        assert!(p.register("w", Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn set_values_checks_shapes() {
        let mut p = ParamSet::<f64>::new();
        p.register("w", Tensor::zeros(&[2, 2])).unwrap();
        assert!(p.set_values(&[vec![1.0; 3]]).is_err());
        p.set_values(&[vec![1.0; 4]]).unwrap();
        assert_eq!(p.values(), vec![vec![1.0; 4]]);
    }
}
