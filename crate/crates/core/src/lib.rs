//! Hadamard-product matrix memory for partially observable control.
//!
//! The memory is an `H×H` matrix updated as `M_t = M_{t-1} ⊙ C_t + U_t` and
//! read as `h_t = M_t q_t`. The stable calibration
//! `C_t = 1 + tanh(θ_t ⊗ v_c(x_t))`, with `θ_t` drawn at random from a bank of
//! learnable rows, keeps the cumulative products of `C` near one so
//! gradients neither vanish nor explode over long episodes.
//!
//! Modules:
//! - [`memory`], [`scan`]: write/read rules and the three evaluation routes.
//! - [`calibration`]: the stable calibration and its ablations.
//! - [`episode`]: running a parameter set over a context sequence.
//! - [`autograd`]: tape-based gradients, clipping and the finite-difference oracle.
//! - [`diagnostics`]: cumulative-product statistics and Monte-Carlo checks.
//! - [`envs`]: toy memory tasks.
//! - [`trainer`]: supervised and actor-critic training loops, checkpoints.

pub mod autograd;
pub mod calibration;
pub mod diagnostics;
pub mod envs;
pub mod episode;
pub mod error;
pub mod memory;
pub mod rng;
pub mod scan;
pub mod tensor;
pub mod trainer;

#[cfg(not(feature = "f32"))]
pub type Real = f64;
#[cfg(feature = "f32")]
pub type Real = f32;

pub use autograd::{backward, clip_gradients, critical_gradients_fixed_c, finite_difference_oracle, GradReport};
pub use calibration::{
    init_params, sample_theta_row, shm_calibration, update_matrix, variant_calibration, CalibrationVariant, Dims,
    ShmParams, ThetaDraw,
};
pub use episode::{run_sequence, run_sequence_taped, EpisodeTrace, EvalMode};
pub use error::{Error, Result};
pub use memory::{layer_normalize, read, unroll_closed_form, write_step, CalMatrix, ContextInput, MemoryState, UpdMatrix};
pub use scan::{parallel_scan, ScanStats};
pub use tensor::{Affine, Mat};
