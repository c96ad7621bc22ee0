//! From-scratch ConvLSTM encoder/decoder with an analytic backward pass.

mod adam;
mod cell;
pub mod conv;
mod model;
mod params;

pub use adam::{adam_step, adam_update_slice, AdamConfig, AdamState};
pub use cell::{cell_forward, CellCache};
pub use model::{model_backward, model_forward, mse_loss, ModelCache};
pub use params::{
    glorot_limit, init_params, ConvLstmLayerParams, HeadParams, ModelDims, ModelParams,
    BLOCK_NAMES, GATE_CANDIDATE, GATE_FORGET, GATE_INPUT, GATE_OUTPUT,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model dimensions {0:?}")]
    Dims(ModelDims),
    #[error("shape mismatch: {0}")]
    Shape(&'static str),
    #[error("parameter block {0} has the wrong shape")]
    ParamShape(&'static str),
    #[error("cache does not belong to these parameters")]
    StaleCache,
    #[error("non-finite gradient in parameter block {0}")]
    NonFiniteGradient(&'static str),
}

#[cfg(test)]
mod tests;
