//! Voxel-wise segmentation of small organs at risk in 3D volumes.
//!
//! The crate is organized as the stages of the workflow:
//!
//! 1. **volume** – scalar volumes, binary label maps, raw+JSON sidecar I/O,
//!    trilinear sampling and isotropic resampling.
//! 2. **roi** – spatial probability map (SPDM) from training labels and the
//!    dilated region of interest that gates every later stage.
//! 3. **features** – per-voxel feature vectors (classical, augmented,
//!    textural, and the 286-wide AE-FV) plus min–max scaling.
//! 4. **sdae** – stacked denoising auto-encoder with greedy layer-wise
//!    pre-training and softmax fine-tuning, written from scratch.
//! 5. **pipeline** – per-organ training, ROI classification, blob removal
//!    and the leave-one-out harness.
//! 6. **metrics** – Dice, Hausdorff, relative volume difference, confusion
//!    counts, ROC sub-space verdicts and majority-vote label fusion.
//! 7. **phantom** – synthetic multi-case datasets standing in for clinical data.

pub mod error;
pub mod features;
pub mod metrics;
pub mod phantom;
pub mod pipeline;
pub mod roi;
pub mod sdae;
pub mod volume;

pub use error::{Error, Result};
pub use features::{FeatureMatrix, FeatureSetId, Scaling};
pub use metrics::{EvalReport, RocQuadrant};
pub use phantom::{Archetype, PhantomSpec};
pub use pipeline::{CaseRecord, PipelineConfig, SegmentationResult, TrainedOrgan};
pub use roi::SpdmRoi;
pub use sdae::{SdaeModel, TrainConfig};
pub use volume::{Grid, LabelMap, Volume3D};
