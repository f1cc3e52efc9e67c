//! Top-down saliency estimation coupled with image classification.
//!
//! The library builds per-category saliency models — sparse codes of dense
//! gradient-histogram descriptors feeding a grid CRF — and couples them with
//! a spatial-pyramid image classifier. The coupling runs both ways: the
//! classifier picks the training images used to update each saliency model,
//! and the saliency maps weight the pyramid pooling that feeds the
//! classifier, whose confidences in turn rescale the final maps.
//!
//! Pipeline stages:
//!
//! 1. [`imgfeat`] — dense 64-px patch grid, 128-d descriptors, mask labels.
//! 2. [`sparsecode`] — feature-sign lasso solver, k-means dictionaries, and
//!    category-aware coding on concatenated dictionaries.
//! 3. [`crf`] — grid CRF energy, loopy-BP marginals (saliency), max-margin
//!    weight and dictionary gradients.
//! 4. [`pyramid`] — 21-block spatial pyramid, max-pooling, block saliency,
//!    saliency-weighted pooling.
//! 5. [`svm`] — linear SVMs (dual coordinate descent) for model
//!    initialization and image classification.
//! 6. [`pipeline`] — end-to-end training, inference, refinement and
//!    segmentation.
//! 7. [`eval`] — precision at EER, IOU, pixel accuracy, coding benchmark.
//! 8. [`cli`] — command-line surface, manifests, config and model files.

pub mod cli;
pub mod crf;
pub mod error;
pub mod eval;
pub mod imgfeat;
mod linalg;
pub mod pipeline;
pub mod pyramid;
pub mod sparsecode;
pub mod svm;
pub mod synth;

pub use error::{Error, Result};
