//! Named parameters and batch-norm buffers of a network.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{BatchNormState, Gradients, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BufferId(pub(crate) usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
}

/// How [`ParamStore::absorb`] treats gradients already held.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum GradMode {
    #[default]
    Replace,
    Accumulate,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    buffers: Vec<(String, BatchNormState<T>)>,
}

/// Tape handles of every parameter, indexed by [`ParamId`].
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Handles in parameter order, for callers that place parameters on the
    /// tape themselves.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Bound { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new(), buffers: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.params.push(Param { name: name.into(), value, grad: None });
        ParamId(self.params.len() - 1)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, state: BatchNormState<T>) -> BufferId {
        self.buffers.push((name.into(), state));
        BufferId(self.buffers.len() - 1)
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn param(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn buffers(&self) -> &[(String, BatchNormState<T>)] {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut [(String, BatchNormState<T>)] {
        &mut self.buffers
    }

    pub(crate) fn states(&self) -> Vec<&BatchNormState<T>> {
        self.buffers.iter().map(|(_, s)| s).collect()
    }

    /// Total number of trainable scalars.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Register every parameter as a gradient-requiring leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> Bound {
        Bound { vars: self.params.iter().map(|p| tape.leaf(p.value.clone(), true)).collect() }
    }

    /// Copy gradients of a backward pass into the parameters.
    pub fn absorb(&mut self, grads: &Gradients<T>, bound: &Bound, mode: GradMode) {
        for (p, &v) in self.params.iter_mut().zip(&bound.vars) {
            let g = grads.get_or_zeros(v);
            match (&mut p.grad, mode) {
                (Some(acc), GradMode::Accumulate) => {
                    acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, &b)| *a = *a + b);
                }
                (slot, _) => *slot = Some(g),
            }
        }
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(|p| p.grad = None);
    }

    /// Overwrite values from another store with identical names and shapes.
    pub fn load_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        if self.params.len() != other.params.len() || self.buffers.len() != other.buffers.len() {
            return Err(Error::Version(format!(
                "parameter layout differs: {} params / {} buffers vs {} / {}",
                self.params.len(),
                self.buffers.len(),
                other.params.len(),
                other.buffers.len()
            )));
        }
        for (a, b) in self.params.iter().zip(&other.params) {
            if a.name != b.name || a.value.shape() != b.value.shape() {
                return Err(Error::Version(format!(
                    "parameter {} {:?} does not match {} {:?}",
                    a.name,
                    a.value.shape(),
                    b.name,
                    b.value.shape()
                )));
            }
        }
        for (a, b) in self.buffers.iter().zip(&other.buffers) {
            if a.0 != b.0 || a.1.mean.len() != b.1.mean.len() {
                return Err(Error::Version(format!("buffer {} does not match {}", a.0, b.0)));
            }
        }
        self.params.iter_mut().zip(&other.params).for_each(|(a, b)| a.value = b.value.clone());
        self.buffers.iter_mut().zip(&other.buffers).for_each(|(a, b)| a.1 = b.1.clone());
        Ok(())
    }
}
