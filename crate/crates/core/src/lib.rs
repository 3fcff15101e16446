//! Sensitivity analysis for matched-pair observational studies with
//! effect modification.
//!
//! Pairs are split into interaction groups by binary covariates and scored
//! with the mean difference, a pooled M-statistic, or a group M-statistic
//! that trims within each group. The submax test takes the maximum of the
//! standardised worst-case deviates over the overall comparison and each
//! covariate-defined subgroup, with a critical value from their joint normal
//! distribution.

pub mod data;
pub mod error;
pub mod io;
pub mod mvnorm;
pub mod report;
pub mod scoring;
pub mod sensitivity;
pub mod sim;
pub mod submax;

pub use data::{Direction, GroupedStudy, PairDifference, RawRecord};
pub use error::{Error, Result};
pub use mvnorm::{critical_value, equicoordinate_prob, MvnSettings};
pub use scoring::{PsiParams, ScoreMethod, ScoreSet};
pub use submax::{sensitivity_value, submax_test, SubmaxAnalysis, SubmaxResult};
