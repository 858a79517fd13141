//! deal-lab: a desk-scale laboratory for discrepancy-based active learning
//! on weakly supervised bleeding segmentation.
//!
//! The pipeline runs end to end on deterministic synthetic capsule-endoscopy
//! images: a small dilated CNN classifier produces Grad-CAM heatmaps, dense
//! CRF mean-field inference refines them, multi-threshold cuts give
//! standard/coarse/fine CAM label sets, a shared-encoder model with three
//! decoders is trained under a three-step discrepancy scheme, and the CAMPUS
//! criterion scores every CAM-labeled sample to promote it to a pseudo label
//! or hand it to the (simulated) human annotator.
//!
//! See the `examples/` directory of this crate for one runnable example per
//! capability, and the `deal-lab` binary for the end-to-end command line.

pub mod cam;
pub mod alloop;
pub mod campus;
pub mod cli;
pub mod config;
pub mod error;
pub mod img;
pub mod report;
pub mod rng;
pub mod segmodel;
pub mod synthgen;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::{Graph, Tensor};
