//! Fixation-candidate search on grayscale slices.
//!
//! Texture (GLCM) and matched-filter (Gabor) feature maps, Gaussian-mixture
//! clustering and regional-maximum extraction, composed into candidate
//! selection pipelines, plus synthetic phantoms and validation metrics.

pub mod analysis;
pub mod error;
pub mod gabor;
pub mod glcm;
pub mod gmm;
pub mod imagio;
pub mod peaks;
pub mod phantom;
pub mod pipelines;
pub mod rng;

pub use error::{Error, Result};
