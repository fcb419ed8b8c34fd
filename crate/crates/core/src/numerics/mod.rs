//! Deterministic numeric primitives.

pub mod fft;
pub mod gradcheck;
pub mod ops;
mod param;
mod tensor;

pub use fft::{fft_radix2, rfft_amplitude};
pub use gradcheck::{check_param_gradients, finite_diff_check, GradCheckReport};
pub use ops::{
    conv1d, conv1d_backward, gelu, gelu_backward, group_norm, group_norm_backward, layer_norm, linear, linear_backward,
    mean_pool, softmax_rows, softmax_rows_backward, ConvShape,
};
pub(crate) use param::join;
pub use param::{ParamTensor, Parameterized};
pub use tensor::Tensor;

/// Independent seed for sub-stream `stream` of `seed` (splitmix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        ^ stream
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
