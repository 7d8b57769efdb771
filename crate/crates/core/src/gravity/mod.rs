//! Structural gravity baseline fitted by Poisson pseudo maximum likelihood.

mod covariates;
mod design;
mod ppml;

pub use covariates::{read_covariates, write_covariates, CovariateRow, COVARIATE_COLUMNS};
pub use design::{
    build_design, gravity_observations, remoteness, Column, DesignOptions, GravityDesign, GravityObservation,
    ObservationOptions, ObservationSet, ReferenceLevel, RowKey, DENSE_COLUMNS, TARIFF_OFFSET,
};
pub use ppml::{gravity_predict, ppml_fit, predicted_plans, write_coefficient_table, GravityFit, PpmlOptions};
