//! Continuous conditional-random-field fusion of multi-scale depth regressions.
//!
//! The crate is organised bottom-up:
//!
//! * [`types`] and [`config`]: depth maps, images, kernel specs, feature extraction
//!   and the sectioned configuration grammar.
//! * [`filter`]: unnormalized Gaussian message passing, exact (O(N²)) and
//!   permutohedral-lattice (O(N)) backends.
//! * [`cmf`]: one continuous mean-field update with its reverse-mode backward pass.
//! * [`fusion`]: cascade and unified multi-scale models, passing structures,
//!   square loss and SGD training of the kernel weights.
//! * [`oracle`]: dense exact solvers, energies and finite differences used to
//!   check everything above.
//! * [`eval`]: depth metrics and deterministic synthetic scenes.

pub mod cmf;
pub mod config;
pub mod error;
pub mod eval;
pub mod filter;
pub mod fusion;
pub mod oracle;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    extract_features, CrfParams, DepthMap, FeatureKind, FeatureStack, Features, KernelDesc,
    KernelRole, KernelSpec, ModelKind, RgbImage, SideOutputStack,
};
