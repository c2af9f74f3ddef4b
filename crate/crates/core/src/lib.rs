//! Signal extraction for Wi-Fi Channel State Information based on
//! high-dimensional factor models.
//!
//! The pipeline, end to end:
//!
//! 1. [`ingest`] parses bit-packed Intel-5300-style CSI capture logs into
//!    frames, converts them to absolute channel units, and assembles N×T
//!    amplitude / phase data matrices (rows = link/subcarrier channels,
//!    columns = time).
//! 2. [`phase`] unwraps raw per-subcarrier phases and removes the
//!    linear-in-subcarrier-index offset introduced by sampling time and
//!    frequency mismatch.
//! 3. [`mp`] evaluates the Marchenko-Pastur law (density, distribution
//!    function, spectral edges) and measures how closely an empirical
//!    eigenvalue bulk conforms to it.
//! 4. [`hdfm`] removes factors by principal components, selects the factor
//!    count as the smallest p whose residual spectrum has no eigenvalue
//!    above the Marchenko-Pastur bulk edge, and pools the temporal factors
//!    into fixed-length feature vectors.
//! 5. [`classify`] trains and evaluates KNN / multinomial-logistic
//!    classifiers on those features and runs the factor-model-vs-PCA
//!    comparison on identical splits.
//!
//! All randomness is funneled through explicit 64-bit seeds; every
//! operation is deterministic given its inputs.

pub mod classify;
pub mod data;
pub mod hdfm;
pub mod ingest;
pub mod mp;
pub mod phase;
pub mod pipeline;

pub use data::{ChannelKind, DataMatrix, RowLabel};
pub use hdfm::{FactorFit, SelectionResult, SyntheticSpec};
pub use ingest::CsiFrame;
pub use mp::{MpLaw, SpectrumFit};
