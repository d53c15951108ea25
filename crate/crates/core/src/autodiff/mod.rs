//! A minimal reverse-mode differentiation engine over dense real tensors.
//!
//! The engine supports exactly the operations the unfolded estimator needs:
//! elementwise arithmetic, 2D matrix products, a linear solve with an
//! adjoint-solve backward rule, 3D convolution with per-axis padding modes,
//! pooling/concat/slice/reshape plumbing, and phase-to-complex mapping for
//! trainable phase shifters. Complex values ride along as paired real
//! tensors ([`complex::CVar`]).
//!
//! # Example
//!
//! ```
//! use sblu_core::autodiff::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.param(Tensor::from_vec(&[2], vec![3.0, -1.0]));
//! let y = tape.sum(tape.mul(x, x)); // |x|^2
//! tape.backward(y).unwrap();
//! assert_eq!(tape.grad(x).data(), &[6.0, -2.0]); // 2x
//! ```

pub mod adam;
pub mod complex;
pub mod conv3d;
pub mod gradcheck;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, AdamState};
pub use complex::{cmat_to_tensors, tensors_to_cmat, CVar};
pub use conv3d::{conv3d_forward, PadMode, ANGULAR_CIRCULAR};
pub use gradcheck::{grad_check, grad_check_sampled};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

use rand::Rng;

/// Xavier (Glorot) uniform initialization: entries drawn from
/// `±sqrt(6 / (fan_in + fan_out))`. Supports dense `(in, out)` and conv
/// `(F, F, F, C_in, C_out)` shapes.
pub fn xavier_init(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let (fan_in, fan_out) = match shape.len() {
        2 => (shape[0], shape[1]),
        5 => {
            let receptive = shape[0] * shape[1] * shape[2];
            (receptive * shape[3], receptive * shape[4])
        }
        _ => panic!(
            "xavier_init expects a dense (in, out) or conv (F, F, F, C_in, C_out) shape, got {shape:?}"
        ),
    };
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.random_range(-bound..bound))
}
