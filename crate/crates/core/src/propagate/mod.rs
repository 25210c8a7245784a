//! Strength propagation: posterior wrinkles are pushed through a strength
//! model, and the resulting sample is summarised by a Monte Carlo mean,
//! a Weibull law and a slope-knockdown curve.

mod camanho;
mod external;
mod montecarlo;
mod report;
mod surrogate;
mod weibull;

pub use camanho::{camanho, Allowables};
pub use external::{ExternalModel, ExternalSpec};
pub use montecarlo::{
    max_abs_slope, monte_carlo, FieldContext, ForwardStrengthModel, McEstimate, StrengthDistribution,
    StrengthSample, SurrogateStrength, Z_ONE_SIDED_95,
};
pub use report::{empirical_quantile, knockdown_report, KnockdownReport, QuantileRow, REPORT_QUANTILES};
pub use surrogate::{
    fit_surrogate, surrogate_strength, SurrogateBound, SurrogateFit, SurrogateModel, BOUND_QUANTILE,
    PRISTINE_STRENGTH, RESIDUAL_FLOOR,
};
pub use weibull::{cdf_points, weibull_fit, CdfPoint, WeibullFit};
