//! Model-based forest aboveground biomass (AGB) mapping and assessment.
//!
//! The crate covers the full workflow from field plots to statewide carbon
//! totals:
//!
//! - [`grid`]: single-band rasters with an explicit nodata mask, file I/O and
//!   map algebra.
//! - [`inventory`]: tree and plot ingest, plot-level AGB densities, panel
//!   based partitioning.
//! - [`footprint`]: four-subplot plot geometry and area-weighted raster
//!   extraction.
//! - [`hexscale`]: flat-top hexagonal tessellations for multi-scale
//!   aggregation.
//! - [`agreement`]: accuracy metrics, Willmott's refined index, ECDF / KS,
//!   GMFR and the agreement-coefficient decomposition.
//! - [`learners`]: base regressors, k-fold CV, grid search and linear
//!   stacking.
//! - [`carbon`]: stock, stock-change and AGB to AGC accounting plus the
//!   CRM to NSVB rescaling regression.
//! - [`pipeline`]: configuration, staged orchestration and reports.
//!
//! Data-parallel loops run on rayon when the `parallel` feature is enabled
//! (the default) and sequentially otherwise. Results are identical in both
//! modes.

pub mod agreement;
pub mod carbon;
pub mod error;
pub mod footprint;
pub mod grid;
pub mod hexscale;
pub mod inventory;
pub mod learners;
pub mod ols;
pub mod pipeline;
pub mod synth;

mod par;

pub use error::{Error, Result};
