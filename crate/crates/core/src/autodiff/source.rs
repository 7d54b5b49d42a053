use std::sync::Arc;

use crate::autodiff::{BlockId, ParamLayout, ParamStore, Tape, Var};
use crate::error::Result;
use crate::scalar::Scalar;

/// Supplies each named block of a model layout to a tape, either as a
/// trainable leaf or as a constant or a composite expression.
pub trait WeightSource<S: Scalar> {
    /// Layout of the model weights being supplied.
    fn layout(&self) -> &Arc<ParamLayout>;

    /// Length of the trainable vector gradients are reported against.
    fn param_dim(&self) -> usize;

    fn bind(&self, tape: &mut Tape<S>, block: BlockId) -> Result<Var>;
}

/// Every block trainable, in the store's own flat order.
impl<S: Scalar> WeightSource<S> for ParamStore<S> {
    fn layout(&self) -> &Arc<ParamLayout> {
        ParamStore::layout(self)
    }

    fn param_dim(&self) -> usize {
        self.len()
    }

    fn bind(&self, tape: &mut Tape<S>, block: BlockId) -> Result<Var> {
        let offset = ParamStore::layout(self).block(block).offset;
        tape.param(offset, self.block_matrix(block))
    }
}

/// Every block constant.
pub struct Frozen<'a, S>(pub &'a ParamStore<S>);

impl<S: Scalar> WeightSource<S> for Frozen<'_, S> {
    fn layout(&self) -> &Arc<ParamLayout> {
        self.0.layout()
    }

    fn param_dim(&self) -> usize {
        0
    }

    fn bind(&self, tape: &mut Tape<S>, block: BlockId) -> Result<Var> {
        Ok(tape.constant(self.0.block_matrix(block)))
    }
}

impl<S: Scalar, T: WeightSource<S> + ?Sized> WeightSource<S> for &T {
    fn layout(&self) -> &Arc<ParamLayout> {
        (**self).layout()
    }

    fn param_dim(&self) -> usize {
        (**self).param_dim()
    }

    fn bind(&self, tape: &mut Tape<S>, block: BlockId) -> Result<Var> {
        (**self).bind(tape, block)
    }
}
