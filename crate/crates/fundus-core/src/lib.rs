//! Retinal fundus analysis pipeline: optic-nerve-head / fovea localization,
//! cross-domain image translation for dataset expansion, glaucoma
//! classification, optic disc / cup segmentation, test-time-augmentation
//! ensembling, and the challenge evaluation metrics — all CPU-based and
//! reproducible from explicit seeds.

pub mod augment;
pub mod classify;
pub mod data;
pub mod eval;
pub mod heatmap;
pub mod mask;
pub mod pipeline;
pub mod segment;
pub mod synth;
pub mod transfer;
pub mod util;

pub use data::{DatasetManifest, Domain, FundusImage, SplitAssignment};
pub use mask::{MaskClass, MaskResolution, SegMask};
