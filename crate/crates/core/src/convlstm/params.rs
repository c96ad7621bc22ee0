use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::{Real, Tensor, N_DIRECTIONS};

/// Gates are stacked in this order along the output-channel axis of every
/// ConvLSTM kernel: input, forget, candidate, output.
pub const GATE_INPUT: usize = 0;
pub const GATE_FORGET: usize = 1;
pub const GATE_CANDIDATE: usize = 2;
pub const GATE_OUTPUT: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub n_distance_bins: usize,
    pub filters: usize,
    /// Kernel extent along distance; the extent along the other axis is 1.
    pub kernel_size: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            n_distance_bins: 64,
            filters: 32,
            kernel_size: 3,
        }
    }
}

impl ModelDims {
    pub fn validate(&self) -> Result<(), super::ModelError> {
        if self.n_distance_bins == 0 || self.filters == 0 || self.kernel_size % 2 == 0 {
            return Err(super::ModelError::Dims(self.clone()));
        }
        Ok(())
    }

    pub fn encoder_in_channels(&self) -> usize {
        N_DIRECTIONS
    }

    /// Encoder hidden state plus one terminal-headway channel per direction.
    pub fn decoder_in_channels(&self) -> usize {
        self.filters + N_DIRECTIONS
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvLstmLayerParams<T> {
    /// `[4 filters x in_channels x K x 1]`
    pub w_x: Tensor<T>,
    /// `[4 filters x filters x K x 1]`
    pub w_h: Tensor<T>,
    /// `[4 filters]`
    pub b: Tensor<T>,
}

impl<T: Real> ConvLstmLayerParams<T> {
    pub fn zeros(in_channels: usize, filters: usize, kernel: usize) -> Self {
        ConvLstmLayerParams {
            w_x: Tensor::zeros(&[4 * filters, in_channels, kernel, 1]),
            w_h: Tensor::zeros(&[4 * filters, filters, kernel, 1]),
            b: Tensor::zeros(&[4 * filters]),
        }
    }

    pub fn filters(&self) -> usize {
        self.b.len() / 4
    }

    pub fn in_channels(&self) -> usize {
        self.w_x.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.w_x.shape()[2]
    }

    /// Bias entries of one gate.
    pub fn gate_bias_mut(&mut self, gate: usize) -> &mut [T] {
        let f = self.filters();
        &mut self.b.data_mut()[gate * f..(gate + 1) * f]
    }
}

/// 1x1 convolution from the decoder hidden state to one channel per direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams<T> {
    /// `[N_dir x filters]`
    pub w: Tensor<T>,
    /// `[N_dir]`
    pub b: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams<T> {
    pub dims: ModelDims,
    pub encoder: ConvLstmLayerParams<T>,
    pub decoder: ConvLstmLayerParams<T>,
    pub head: HeadParams<T>,
}

/// Fixed order of parameter blocks, shared by the optimizer, gradient checks
/// and the checkpoint payload.
pub const BLOCK_NAMES: [&str; 8] = [
    "encoder.w_x",
    "encoder.w_h",
    "encoder.b",
    "decoder.w_x",
    "decoder.w_h",
    "decoder.b",
    "head.w",
    "head.b",
];

impl<T: Real> ModelParams<T> {
    pub fn zeros(dims: &ModelDims) -> Self {
        let (f, k) = (dims.filters, dims.kernel_size);
        ModelParams {
            dims: dims.clone(),
            encoder: ConvLstmLayerParams::zeros(dims.encoder_in_channels(), f, k),
            decoder: ConvLstmLayerParams::zeros(dims.decoder_in_channels(), f, k),
            head: HeadParams {
                w: Tensor::zeros(&[N_DIRECTIONS, f]),
                b: Tensor::zeros(&[N_DIRECTIONS]),
            },
        }
    }

    pub fn blocks(&self) -> [(&'static str, &Tensor<T>); 8] {
        [
            (BLOCK_NAMES[0], &self.encoder.w_x),
            (BLOCK_NAMES[1], &self.encoder.w_h),
            (BLOCK_NAMES[2], &self.encoder.b),
            (BLOCK_NAMES[3], &self.decoder.w_x),
            (BLOCK_NAMES[4], &self.decoder.w_h),
            (BLOCK_NAMES[5], &self.decoder.b),
            (BLOCK_NAMES[6], &self.head.w),
            (BLOCK_NAMES[7], &self.head.b),
        ]
    }

    pub fn blocks_mut(&mut self) -> [(&'static str, &mut Tensor<T>); 8] {
        [
            (BLOCK_NAMES[0], &mut self.encoder.w_x),
            (BLOCK_NAMES[1], &mut self.encoder.w_h),
            (BLOCK_NAMES[2], &mut self.encoder.b),
            (BLOCK_NAMES[3], &mut self.decoder.w_x),
            (BLOCK_NAMES[4], &mut self.decoder.w_h),
            (BLOCK_NAMES[5], &mut self.decoder.b),
            (BLOCK_NAMES[6], &mut self.head.w),
            (BLOCK_NAMES[7], &mut self.head.b),
        ]
    }

    pub fn n_params(&self) -> usize {
        self.blocks().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.blocks().iter().all(|(_, t)| t.all_finite())
    }

    /// Same structure filled with zeros; used for gradients and moments.
    pub fn zeros_like(&self) -> Self {
        ModelParams::zeros(&self.dims)
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            dims: self.dims.clone(),
            encoder: ConvLstmLayerParams {
                w_x: self.encoder.w_x.cast(),
                w_h: self.encoder.w_h.cast(),
                b: self.encoder.b.cast(),
            },
            decoder: ConvLstmLayerParams {
                w_x: self.decoder.w_x.cast(),
                w_h: self.decoder.w_h.cast(),
                b: self.decoder.b.cast(),
            },
            head: HeadParams {
                w: self.head.w.cast(),
                b: self.head.b.cast(),
            },
        }
    }

    pub fn flatten(&self) -> Vec<T> {
        self.blocks()
            .iter()
            .flat_map(|(_, t)| t.data().iter().copied())
            .collect()
    }
}

/// Glorot-uniform limit `sqrt(6 / (fan_in + fan_out))` for a kernel of shape
/// `[out x in x K x 1]` (or `[out x in]` for the 1x1 head).
pub fn glorot_limit(shape: &[usize]) -> f64 {
    let receptive: usize = shape[2..].iter().product();
    let fan_in = shape[1] * receptive;
    let fan_out = shape[0] * receptive;
    libm::sqrt(6.0 / (fan_in + fan_out) as f64)
}

/// Glorot-uniform kernels, zero biases, forget-gate biases set to 1.
pub fn init_params<T: Real>(
    dims: &ModelDims,
    seed: u64,
) -> Result<ModelParams<T>, super::ModelError> {
    dims.validate()?;
    let mut params = ModelParams::<T>::zeros(dims);
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    for (name, tensor) in params.blocks_mut() {
        if name.ends_with(".b") {
            continue;
        }
        let limit = glorot_limit(tensor.shape());
        for v in tensor.data_mut() {
            *v = T::from_f64_lossy(rng.random_range(-limit..=limit));
        }
    }
    params.encoder.gate_bias_mut(GATE_FORGET).fill(T::one());
    params.decoder.gate_bias_mut(GATE_FORGET).fill(T::one());
    Ok(params)
}
