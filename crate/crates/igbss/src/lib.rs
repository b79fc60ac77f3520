//! Blind source separation with a log-linear model on a layered poset.
//!
//! Received signals are normalized into an empirical distribution over the
//! received layer of a hierarchical sample space; fitting the model by
//! KL-divergence minimization (gradient descent or block natural gradient)
//! recovers normalized source signals on the source layer and mixing weights
//! on the mixing layer. The optimization is convex, so recovery is unique and
//! independent of initialization.

pub mod cli;
pub mod datagen;
pub mod io;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod signal;
pub mod space;

pub use model::{empirical_distribution, NormalizationScheme};
pub use optim::{fit, FitConfig, Init, Method};
pub use pipeline::{evaluate_separation, separate, SeparationResult};
pub use signal::{SignalMatrix, SignalRole};
pub use space::{build_sample_space, Layer, SampleSpace, SpaceError, State};
