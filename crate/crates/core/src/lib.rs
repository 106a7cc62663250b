//! Random-matrix analysis of correlation matrices.
//!
//! The crate covers Wishart and correlated-Wishart ensembles against the
//! Marčenko-Pastur law, the power map and its emerging spectrum, the
//! market/group/random mode decomposition, rolling correlation statistics and
//! market-state detection with classical MDS and k-means.

pub mod cache;
pub mod cli;
pub mod correlation;
pub mod dynamics;
pub mod ensembles;
pub mod error;
pub mod ingest;
pub mod linalg;
pub mod modes;
pub mod output;
pub mod powermap;
pub mod rng;
pub mod states;
pub mod synth;

pub use correlation::{CorrelationMatrix, PricePanel, ReturnMatrix};
pub use error::{Error, Result};
