//! Multi-scale fusion models built from C-MF updates.
//!
//! A cascade model fits one CRF per scale in schedule order; each finished
//! scale is rectified and added to the observation of the scales it feeds.
//! A unified model sweeps all scales `T` times with shared weights, each
//! target scale reading the current estimate of its sources through the
//! cross-scale kernels.

mod model;
mod structure;
mod train;

pub use model::{cascade_forward, unified_forward, FusionModel, ModelGrads, Progress, Trace};
pub use structure::{build_passing_structure, format_edges, parse_edges, PassingStructure, StructureKind};
pub use train::{square_loss, train, Dataset, LossRecord, PreparedDataset, Scene, TrainConfig, TrainReport};
