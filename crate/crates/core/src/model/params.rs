use crate::diff::{Float, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Ordered, named parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<F> {
    entries: Vec<(String, Tensor<F>)>,
}

impl<F: Float> Default for ParamSet<F> {
    fn default() -> Self {
        Self {
            entries: Vec::new(),
        }
    }
}

impl<F: Float> ParamSet<F> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor<F>) -> usize {
        self.entries.push((name.into(), t));
        self.entries.len() - 1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<F>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<F>> {
        self.entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn tensor(&self, i: usize) -> &Tensor<F> {
        &self.entries[i].1
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor<F> {
        &mut self.entries[i].1
    }

    pub fn name(&self, i: usize) -> &str {
        &self.entries[i].0
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<F>)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    /// Records every parameter as a gradient-tracking leaf, in order.
    pub fn register(&self, tape: &mut Tape<F>) -> Vec<Var> {
        self.entries
            .iter()
            .map(|(_, t)| tape.param(t.clone()))
            .collect()
    }

    pub fn cast<G: Float>(&self) -> ParamSet<G> {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), t.mapv(|v| G::from(v).expect("cast"))))
                .collect(),
        }
    }

    /// Replaces tensor values from another set with identical names and shapes.
    pub fn copy_from(&mut self, other: &ParamSet<F>) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::shape("parameter sets differ in length"));
        }
        for ((n, t), (on, ot)) in self.entries.iter_mut().zip(&other.entries) {
            if n != on || t.dim() != ot.dim() {
                return Err(Error::shape(format!("parameter {n} does not match {on}")));
            }
            t.assign(ot);
        }
        Ok(())
    }
}
