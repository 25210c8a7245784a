//! Ply misalignment from grayscale scans.
//!
//! A short trial fibre is rotated about each sample point and the angle at
//! which gray levels along it vary least is taken as the local ply
//! direction. Sample points are placed by a multilevel scheme that spends
//! more of the budget where misalignment is large.

mod fibre;
mod image;
mod sampling;
mod synth;
mod unwrap;

pub use fibre::{estimate_angle, estimate_physical_angle, fibre_variance, TrialFibreConfig};
pub use image::GrayImage;
pub use sampling::{
    hierarchical_sample, Cell, CellStats, LevelRecord, MisalignmentSample, MisalignmentSamples,
    SampleAllocationTree, SamplingPlan,
};
pub use synth::{pristine_depth, synth_bscan, true_misalignment, FocusBlur, RenderSpec, SynthPrior, SyntheticScan};
pub use unwrap::{unwrap_corner, wrap_corner, CornerLayout};
