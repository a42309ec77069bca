//! Multi-hypothesis 6D pose estimation toolkit.
//!
//! The crate covers the full path from a learned multi-hypothesis regressor
//! to a single fused pose:
//!
//! - [`rotation`]: unit quaternions, hemisphere convention, geodesics.
//! - [`robust`]: Weiszfeld geodesic median, Karcher mean, dispersion, mean shift.
//! - [`ambiguity`]: PCA ambiguity test and ambiguity-axis estimation.
//! - [`bingham`]: Bingham fitting, sampling and plot export.
//! - [`model`]: feed-forward multi-hypothesis regressor, relaxed
//!   winner-take-all loss, analytic gradients and training.
//! - [`toy`]: synthetic cube/cup/cylinder objects and datasets.
//! - [`metrics`]: ADD, ADI, rotation/translation errors, ambiguity scores.
//! - [`pipeline`]: pose inference from a hypothesis set.
//! - [`eval`]: dataset-level evaluation reports.

pub mod ambiguity;
pub mod bingham;
pub mod error;
pub mod eval;
pub mod io;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod robust;
pub mod rotation;
pub mod toy;

pub use error::{Error, Result};
pub use rotation::UnitQuaternion;
