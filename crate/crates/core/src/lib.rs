//! Errors-in-variables regression for multivariate linear models where every
//! regressor is measured with error.
//!
//! The centerpiece is the PD estimator: an extremum estimator that matches
//! sample covariances of the observables against estimated second-order
//! partial derivatives of the empirical log characteristic function,
//! evaluated along the line s = (b_1 u, ..., b_K u, -u). Identification
//! requires the latent regressors to be non-normal; the diagnostics module
//! turns that requirement into a curve-band check.
//!
//! Modules:
//! - [`datagen`]: simulation designs and synthetic data generation
//! - [`ecf`]: empirical characteristic function sums and hat-derivatives
//! - [`objective`]: the sample objective Q_N(b) and its quadrature
//! - [`optimizer`]: derivative-free multistart maximization of Q_N
//! - [`baselines`]: OLS and the C3/C4 moment-instrument estimators
//! - [`diagnostics`]: derivative curve bands, normality check, and the
//!   observational-equivalence demonstration
//! - [`montecarlo`]: replication engine for the comparison table and the
//!   root-N consistency sweep
//! - [`config`]: flat key-value config files
//! - [`csvio`]: CSV input/output with provenance headers

pub mod baselines;
pub mod cli;
pub mod config;
pub mod csvio;
pub mod datagen;
pub mod diagnostics;
pub mod ecf;
pub mod error;
pub mod montecarlo;
pub mod numeric;
pub mod objective;
pub mod optimizer;

pub use datagen::{gen_dataset, Dataset, DesignSpec};
pub use error::{EivError, Result};
pub use objective::{q_hat, ObjectiveSpec};
pub use optimizer::{maximize, EstimateReport, Method, SearchConfig};

/// Version string stamped into provenance headers.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
