//! Autoencoder-based anomaly localization by gradient descent in input space.
//!
//! An autoencoder trained on defect-free images defines an energy over images:
//! its reconstruction loss plus an L¹ pull towards the image under test.
//! Descending that energy from the test image projects it onto the learned
//! normal manifold while leaving normal pixels mostly untouched; comparing the
//! projection with the original (DSSIM) localizes defects.
//!
//! Modules, bottom-up:
//! - [`tensor`], [`autodiff`]: dense tensors and a reverse-mode tape.
//! - [`models`]: L2AE, DSAE, VAE and γ-VAE graphs, losses and checkpoints.
//! - [`trainer`]: Adam training and loss-threshold statistics.
//! - [`projector`]: the energy, its update rules and stop criteria.
//! - [`metrics`]: DSSIM maps, AUROC, single-evaluation score maps.
//! - [`synth`], [`io`]: synthetic textures with ground truth; PGM/PPM/TNSR files.

pub mod autodiff;
pub mod element;
pub mod io;
pub mod metrics;
pub mod models;
pub mod parallel;
pub mod projector;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use element::{DType, Element};
pub use parallel::Parallelism;
pub use tensor::{Tensor, TensorError};
