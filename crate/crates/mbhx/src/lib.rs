//! mbhx — motion-blurred hand extraction.
//!
//! Extracts semi-transparent motion-blurred hands from single RGB images
//! by splitting the problem into two predictions, an alpha matte and a
//! foreground color image, and multiplying them. The crate covers the full
//! desk-scale pipeline:
//!
//! - [`compositing`]: the image model `I = α·F + (1-α)·B` and hand
//!   extraction by `α·F` (vs. the naive `α·I`).
//! - [`synth`]: procedural motion-blurred hand samples with analytically
//!   exact ground-truth `α` and `F`, and dataset generation.
//! - [`tensor`] / [`autodiff`]: dense tensors with reverse-mode
//!   differentiation — convolutions, separable convolutions, bilinear
//!   upsampling, pooling, and the elementwise/reduction family.
//! - [`network`]: a shared-encoder / dual-decoder separable-convolution
//!   network with skip connections (one 1-channel alpha head, one
//!   3-channel foreground head).
//! - [`losses`]: absolute, compositional, and multi-level perceptual loss
//!   terms with their weighted overall sum.
//! - [`train`]: SGD-with-momentum training, SAD/MSE evaluation, and the
//!   4-model encoder-sharing × perceptual-loss ablation harness.
//! - [`io`]: bit-exact persistence — PNG images, raw tensor files,
//!   CRC-checked checkpoints, dataset manifests.
//! - [`gradcheck`]: the finite-difference suite guarding every gradient.
//!
//! Runnable walkthroughs of each capability live in `examples/`; the
//! `mbhx` binary wraps the same entry points for batch use.

pub mod autodiff;
pub mod compositing;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod losses;
pub mod network;
pub mod synth;
pub mod tensor;
pub mod train;

pub use autodiff::{Graph, GradNode, Padding};
pub use compositing::ImageBuffer;
pub use error::{Error, Result};
pub use tensor::Tensor;

/// Configure the global thread pool from the `MBHX_THREADS` environment
/// variable. Call at most once, before any parallel work; later calls are
/// no-ops. Parallelism never changes numeric results — every reduction
/// order is fixed per element.
pub fn init_thread_pool_from_env() {
    if let Ok(v) = std::env::var("MBHX_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}
