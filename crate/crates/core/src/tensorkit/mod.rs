//! Layer primitives with explicit forward and backward passes, plus Adam.
//!
//! Every layer is a pure function: forward passes return the output along
//! with whatever the backward pass needs, and stateful layers (batch norm,
//! Adam) hand back an updated copy of their state.

mod adam;
mod batchnorm;
mod conv;
mod dense;
mod elementwise;

pub use adam::{adam_step, AdamState};
pub use batchnorm::{batchnorm1d, batchnorm1d_backward, BatchNormCache, BatchNormGrads, BatchNormOutput, BatchNormState};
pub use conv::{conv1d, conv1d_backward, conv1d_forward, same_padding, Conv1dCache, Conv1dGrads};
pub use dense::{dense, dense_backward, DenseGrads};
pub use elementwise::{
    global_avg_pool, global_avg_pool_backward, l2_normalize_rows, l2_normalize_rows_backward, relu, relu_backward,
};

/// Whether a layer uses batch statistics (and updates running ones) or the
/// stored running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}
