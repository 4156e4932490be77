//! Passive channel charting on synthetic multi-static Wi-Fi CSI.
//!
//! The crate covers the whole processing chain: a physical CSI simulator,
//! subspace clutter removal, a root-MUSIC / von Mises triangulation baseline,
//! covariance features, CSI dissimilarities with geodesic completion, a dense
//! network trained as a fingerprinting regressor or as a Siamese channel
//! charting function, and the localization / dimensionality-reduction metrics.

pub mod aoa;
pub mod clutter;
pub mod datamodel;
pub mod dissim;
pub mod error;
pub mod eval;
pub mod features;
pub(crate) mod io;
pub mod linalg;
pub mod mlp;
pub mod pipeline;
pub mod simulator;
pub mod stats;

pub use error::{Error, Result};
