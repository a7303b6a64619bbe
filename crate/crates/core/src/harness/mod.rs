//! Monte Carlo studies, statistical comparators and the invariant ledger.

mod config;
mod stats;
mod study;
mod verify;

pub use config::ExperimentConfig;
pub use stats::{empirical_cdf_and_ks, ks_one_sample, ks_two_sample, reflected_bm_marginal_cdf, Reference};
pub use study::{run_convergence_study, ComparisonReport, ComparisonRow, STUDY_FAMILY_BASE};
pub use verify::{verify_suite, Ledger, LedgerRow};
