//! Named trainable parameters and their gradient buffers.

use super::tape::{Tape, Var};
use super::tensor::{Scalar, Tensor};
use super::SubstrateError;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
pub struct Param<T: Scalar> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

/// Ordered collection of parameters. Order is registration order and is part
/// of the reproducibility contract: initialization draws and optimizer
/// updates both walk it front to back.
#[derive(Clone, Debug, Default)]
pub struct ParamSet<T: Scalar> {
    params: Vec<Param<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId, SubstrateError> {
        let name = name.into();
        if self.index_of(&name).is_some() {
            return Err(SubstrateError::Contract {
                op: "param_set",
                msg: format!("duplicate parameter name {name:?}"),
            });
        }
        let grad = Tensor::zeros(value.shape());
        self.params.push(Param { name, value, grad });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn total_elements(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn index_of(&self, name: &str) -> Option<ParamId> {
        self.params
            .iter()
            .position(|p| p.name == name)
            .map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    /// Places every parameter on a tape as a leaf; the returned vars are
    /// indexed by `ParamId` order.
    pub fn register_on(&self, tape: &mut Tape<T>) -> Result<Vec<Var>, SubstrateError> {
        let mut vars = Vec::with_capacity(self.params.len());
        for p in &self.params {
            vars.push(tape.leaf(p.value.clone())?);
        }
        Ok(vars)
    }

    /// Copies gradients from a tape after `backward`. A parameter the loss
    /// never touched gets an all-zero gradient.
    pub fn collect_grads(&mut self, tape: &Tape<T>, vars: &[Var]) {
        for (p, &v) in self.params.iter_mut().zip(vars) {
            match tape.grad(v) {
                Some(g) => p.grad = g.clone(),
                None => p.grad = Tensor::zeros(p.value.shape()),
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: p.grad.cast(),
                })
                .collect(),
        }
    }
}
