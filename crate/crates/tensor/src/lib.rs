//! Dense tensors and tape-based reverse-mode differentiation.
//!
//! The operator set is exactly what the AVCRN speech-enhancement network
//! needs: pointwise arithmetic and activations, fully-connected layers,
//! strided 2-D convolution and its transpose, a fused LSTM layer, channel
//! concatenation, mean-absolute pooling, soft-thresholding and MSE.
//!
//! ```
//! use avcrn_tensor::{Tape, Tensor};
//!
//! let mut tape = Tape::<f64>::new();
//! let x = tape.leaf(Tensor::from_vec(&[3], vec![1.0, -2.0, 3.0]).unwrap());
//! let y = tape.abs(x).unwrap();
//! let loss = tape.sum(y).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.wrt(x).data(), &[1.0, -1.0, 1.0]);
//! ```

mod error;
pub mod gradcheck;
mod kernels;
mod ops;
pub mod optim;
mod scalar;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use ops::conv::Conv2dSpec;
pub use ops::shrink::soft_threshold_value;
pub use scalar::{cst, Real};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{numel, Tensor};
