//! Patch-based matching (PBM) for interpretable post-mortem iris comparison.
//!
//! The pipeline takes a grayscale iris image, its segmentation mask and a set
//! of detected iris patches, and produces a dissimilarity score in `[0, 1]`
//! together with the matched patch pairs that justify it:
//!
//! 1. [`imaging`]: mask, crop around the iris and enhance with CLAHE.
//! 2. [`bsif`]: binarized filter responses packed into bit planes.
//! 3. [`detection`]: patch polygons, their rasterization and geometry.
//! 4. [`matching`]: angle gate, exhaustive translation search, greedy
//!    one-to-one assignment and the mean-of-best-pairs score.
//! 5. [`report`]: SVG evidence showing linked patch pairs.
//!
//! [`eval`] holds the ROC / EER / d' metrics and the human-trial statistics,
//! [`trials`] the trial records shared with the annotation service.

pub mod bsif;
pub mod detection;
pub mod error;
pub mod eval;
pub mod imaging;
pub mod matching;
pub mod report;
pub mod synth;
pub mod trials;

pub use error::{PbmError, Result};
