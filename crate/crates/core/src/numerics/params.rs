use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::Tensor;
use crate::{Error, Result};

/// Named parameters with a same-shape gradient accumulator each.
///
/// Networks address entries by the index returned from [`ParamStore::add`];
/// names are for diagnostics and serialization.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    grads: Vec<Tensor>,
}

/// Sign convention for [`sgd_step`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// `p <- p - rate * g`, for losses.
    Descent,
    /// `p <- p + rate * g`, for objectives being maximized.
    Ascent,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        self.grads.push(Tensor::zeros(value.shape()));
        self.values.push(value);
        self.names.push(name.into());
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn value(&self, i: usize) -> &Tensor {
        &self.values[i]
    }

    pub fn value_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.values[i]
    }

    pub fn grad(&self, i: usize) -> &Tensor {
        &self.grads[i]
    }

    pub fn grad_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.grads[i]
    }

    /// Borrow parameter `i` immutably together with gradient `i` mutably.
    pub fn value_and_grad_mut(&mut self, i: usize) -> (&Tensor, &mut Tensor) {
        (&self.values[i], &mut self.grads[i])
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn grads(&self) -> &[Tensor] {
        &self.grads
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.fill(0.0);
        }
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Replaces a parameter value, keeping its gradient slot.
    pub fn set_value(&mut self, i: usize, value: Tensor) -> Result<()> {
        if !value.same_shape(&self.values[i]) {
            return Err(Error::dimension(
                "set_value",
                self.values[i].shape(),
                value.shape(),
            ));
        }
        self.values[i] = value;
        Ok(())
    }
}

/// Moves every parameter by `rate` times its gradient in `direction`.
/// Gradients are left in place until [`ParamStore::zero_grads`].
pub fn sgd_step(store: &mut ParamStore, rate: f64, direction: Direction) -> Result<()> {
    if !rate.is_finite() || rate < 0.0 {
        return Err(Error::Config(format!(
            "learning rate must be finite and >= 0, got {rate}"
        )));
    }
    for (i, g) in store.grads.iter().enumerate() {
        if !g.is_finite() {
            return Err(Error::NumericalFault(format!(
                "non-finite gradient for parameter {:?}",
                store.names[i]
            )));
        }
    }
    if rate == 0.0 {
        return Ok(());
    }
    let scale = match direction {
        Direction::Descent => -rate,
        Direction::Ascent => rate,
    };
    for (i, (p, g)) in store.values.iter_mut().zip(&store.grads).enumerate() {
        p.axpy(scale, g);
        if !p.is_finite() {
            return Err(Error::NumericalFault(format!(
                "parameter {:?} overflowed after update",
                store.names[i]
            )));
        }
    }
    Ok(())
}
