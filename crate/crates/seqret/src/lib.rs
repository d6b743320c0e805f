//! Estimation of labor-market returns to sequential, unordered education
//! choices (bachelor's then master's).
//!
//! The pipeline fits a two-stage multinomial logit choice model, composes
//! per-individual career probabilities, uses them as generated instruments in
//! a reduced-form outcome regression, and reports rescaled treatment effects
//! with full-pipeline bootstrap inference, counterfactual admission-policy
//! simulations and curriculum-composition analytics.

pub mod bootstrap;
pub mod curriculum;
pub mod design;
pub mod error;
pub mod fields;
pub mod linreg;
pub mod mnl;
pub mod nested;
pub mod pipeline;
pub mod policy;
pub mod records;
pub mod returns;
pub mod standardize;
pub mod synthgen;

pub use error::{Error, Result};
pub use fields::{Career, FieldOfStudy, MasterChoice, N_FIELDS};
pub use records::IndividualRecord;
