//! Wasserstein barycenters of probability measures on regular 2-D grids.
//!
//! The crate covers the numerical side of the toolkit:
//!
//! - [`measure`]: the [`GridMeasure`] data model and the KL / L1 metrics,
//! - [`io`]: the WBGM binary format and PGM ingestion,
//! - [`ot`]: log-domain Sinkhorn, Sinkhorn divergences, plans and displacement fields,
//! - [`lp`]: exact transport and barycenters through min-cost flow,
//! - [`bary`]: barycenter oracles (linearized, Lagrangian, regularized, Radon, exact),
//! - [`shapes`] and [`dataset`]: the random contour generator and manifest datasets,
//! - [`color`]: Lab conversion, chrominance histograms and color transfer.

pub mod bary;
pub mod color;
pub mod dataset;
pub mod error;
pub mod io;
pub mod lp;
pub mod measure;
pub mod ot;
pub mod rng;
pub mod shapes;

pub use error::{Error, Result};
pub use measure::{kl_divergence, l1_distance, normalize, BarycentricWeights, Grid, GridMeasure};
