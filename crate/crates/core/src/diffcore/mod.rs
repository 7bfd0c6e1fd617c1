//! Reverse-mode differentiation for small fully connected networks and the
//! Adam optimizer.
//!
//! Networks evaluate a whole batch at once (rows are samples). A forward pass
//! returns a [`GradTape`] holding the layer inputs; the backward pass replays
//! it to produce gradients for every parameter and for the network input.

mod adam;
mod mlp;

pub use adam::{AdamConfig, AdamState};
pub use mlp::{Activation, Dense, GradTape, MlpParams};

/// A set of parameter blocks that the optimizer can update in place.
///
/// Gradients are represented by a value of the same type so blocks line up
/// one to one.
pub trait ParamBlocks<T> {
    /// Named, flat views of every block in a fixed order.
    fn blocks(&self) -> Vec<(String, &[T])>;

    /// Mutable views in the same order as [`ParamBlocks::blocks`].
    fn blocks_mut(&mut self) -> Vec<&mut [T]>;

    fn num_scalars(&self) -> usize {
        self.blocks().iter().map(|(_, b)| b.len()).sum()
    }
}

impl<T> ParamBlocks<T> for Vec<T> {
    fn blocks(&self) -> Vec<(String, &[T])> {
        vec![("flat".to_string(), self.as_slice())]
    }

    fn blocks_mut(&mut self) -> Vec<&mut [T]> {
        vec![self.as_mut_slice()]
    }
}
