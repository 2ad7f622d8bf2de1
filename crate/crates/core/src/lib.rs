//! Distribution dynamics for cross-sectional panels.
//!
//! The crate estimates transition kernels (conditional densities of relative
//! income `τ` years ahead) with adaptive Gaussian kernel estimators, treats
//! them as Markov operators to obtain ergodic densities, and runs bootstrap
//! tests of time homogeneity and of the first-order (Chapman-Kolmogorov)
//! property. A Monte Carlo harness measures the tests' size and power on
//! simulated autoregressive data.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod density;
pub mod divergence;
pub mod dynamics;
pub mod error;
pub mod grid;
pub mod hypothesis;
pub mod montecarlo;
pub mod panel;
pub mod rng;

pub use density::{
    adaptive_density_1d, adaptive_density_2d, conditional_of_joint, estimate_conditional, marginal_of_joint, optimal_bandwidth,
    pilot_density_1d, pilot_density_2d, BandwidthSpec, ConditionalEstimate, DensityGrid1D, EstimationConfig, KernelGrid2D, KernelKind,
};
pub use divergence::{divergence, divergences, DivergenceSpec, Metric};
pub use dynamics::{compose, ergodic, ergodic_bands, push_forward, BandConfig, ErgodicResult};
pub use error::{Error, ErrorCategory, Result};
pub use grid::Grid1D;
pub use hypothesis::{achieved_significance, test_first_order, test_homogeneity, GeneratorKernel, TestConfig, TestKind, TestResult};
pub use montecarlo::{run_power_study, HomogeneityDgp, OrderDgp, PowerStudyConfig, PowerTable, StudyKind};
pub use panel::{
    load_panel, make_transitions, pool_overlapping, quantile_boundaries, split_by_initial_income, PanelDataset, TransitionSample,
};
pub use rng::RngContract;
