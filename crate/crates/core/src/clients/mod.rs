//! Drivers on the UQ side: parameter designs, a fixed-depth experiment
//! runner and the quadrature client.

pub mod experiment;
pub mod lhs;
pub mod qoi;
pub mod quadrature;

pub use experiment::{
    run_experiment, ExperimentError, ExperimentOutcome, ExperimentPlan, Failure, ParameterSource,
};
pub use lhs::{lhs_sample, ParameterBox};
pub use qoi::{qoi_integral, qoi_integral_with, QoIConfig, QoiError};
pub use quadrature::Rule;
