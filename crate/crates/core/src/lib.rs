//! Few-shot visual anomaly detection for assembled products.
//!
//! Images are decoded and resized to a canonical size, turned into a grid of
//! patch descriptors and scored against a model of normal appearance, either a
//! per-cell Gaussian (PaDiM) or a nearest-neighbour memory bank (PatchCore).
//! The `synthgear` module renders a procedural gear-tray dataset for
//! experiments without real data.

pub mod error;
pub mod features;
pub mod framing;
pub mod imaging;
pub mod metrics;
pub mod padim;
pub mod patchcore;
pub mod pipeline;
pub mod postprocess;
pub mod seed;
pub mod synthgear;

pub use error::{Error, Result};
