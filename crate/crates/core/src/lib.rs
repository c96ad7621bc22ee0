//! Headway propagation workbench core.
//!
//! Everything in this crate is a pure function of its inputs: the synthetic
//! line simulator, the trajectory-to-grid pipeline, sample windowing, the
//! ConvLSTM encoder/decoder with its hand-written backward pass, the training
//! loop, multi-horizon prediction with evaluation metrics, and the terminal
//! dispatch what-if engine. File formats, the CLI and the HTTP service live in
//! the `headway-lab` crate.
//!
//! The crate is `no_std` and only needs `alloc`.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod convlstm;
pub mod grid;
pub mod predict;
pub mod real;
pub mod sim;
pub mod tensor;
pub mod train;
pub mod whatif;
pub mod window;

pub use real::Real;
pub use tensor::Tensor;

/// Travel direction on the line.
///
/// `Nb` runs away from the northbound departure terminal, `Sb` the other way.
/// The discriminant doubles as the channel index in grids and tensors.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize,
)]
pub enum Direction {
    #[serde(rename = "NB")]
    Nb = 0,
    #[serde(rename = "SB")]
    Sb = 1,
}

impl Direction {
    pub const ALL: [Direction; 2] = [Direction::Nb, Direction::Sb];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn token(self) -> &'static str {
        match self {
            Direction::Nb => "NB",
            Direction::Sb => "SB",
        }
    }

    pub fn from_token(s: &str) -> Option<Direction> {
        match s {
            "NB" => Some(Direction::Nb),
            "SB" => Some(Direction::Sb),
            _ => None,
        }
    }
}

impl core::fmt::Display for Direction {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.token())
    }
}

/// Number of direction channels carried by every grid and tensor.
pub const N_DIRECTIONS: usize = 2;
