use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::surrogate::SurrogateModel;
use super::weibull::{weibull_fit, WeibullFit};
use crate::error::{ensure, Result};
use crate::klfield::{BasisCache, DecaySpec, SectionGrid, WrinkleField, WrinkleParams};

/// Standard normal quantile for a one-sided 95% interval.
pub const Z_ONE_SIDED_95: f64 = 1.6448536269514722;

/// Maps a wrinkle to a critical moment, kN·mm/mm.
pub trait ForwardStrengthModel: Sync {
    fn id(&self) -> String;

    /// Degrees-of-freedom proxy for the model resolution, if meaningful.
    fn fidelity(&self) -> Option<u64> {
        None
    }

    /// Known discretisation error of the model, recorded but not used.
    fn fidelity_note(&self) -> String {
        String::new()
    }

    fn evaluate(&self, xi: &WrinkleParams) -> Result<f64>;
}

/// Everything needed to turn parameters into a wrinkle field.
#[derive(Clone, Copy)]
pub struct FieldContext<'a> {
    pub cache: &'a BasisCache,
    pub decay: &'a DecaySpec,
    pub grid: &'a SectionGrid,
}

impl FieldContext<'_> {
    pub fn max_slope(&self, xi: &WrinkleParams) -> Result<f64> {
        let basis = self.cache.get(xi.length_scale)?;
        Ok(WrinkleField::new(xi, &basis, self.decay)?.max_abs_slope(self.grid))
    }

    pub fn is_admissible(&self, xi: &WrinkleParams) -> Result<bool> {
        let basis = self.cache.get(xi.length_scale)?;
        Ok(WrinkleField::new(xi, &basis, self.decay)?.is_admissible(self.grid))
    }
}

/// Largest `|dW/dx1|` over the grid.
pub fn max_abs_slope(
    xi: &WrinkleParams,
    basis: &crate::klfield::KlBasis,
    decay: &DecaySpec,
    grid: &SectionGrid,
) -> Result<f64> {
    Ok(WrinkleField::new(xi, basis, decay)?.max_abs_slope(grid))
}

/// The slope-knockdown law used as a strength model.
pub struct SurrogateStrength<'a> {
    pub model: SurrogateModel,
    pub field: FieldContext<'a>,
}

impl ForwardStrengthModel for SurrogateStrength<'_> {
    fn id(&self) -> String {
        format!(
            "surrogate(m_star={}, q={}, lambda_q={})",
            self.model.m_star, self.model.q, self.model.lambda_q
        )
    }

    fn fidelity_note(&self) -> String {
        "closed-form slope law; error relative to the finite-element model not quantified".into()
    }

    fn evaluate(&self, xi: &WrinkleParams) -> Result<f64> {
        self.model.strength(self.field.max_slope(xi)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrengthSample {
    pub sample_id: usize,
    pub max_slope: Option<f64>,
    pub mc: Option<f64>,
    pub error: Option<String>,
}

/// Plain Monte Carlo estimate of a mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub n: usize,
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    /// Sampling contribution `V / N` to the mean-square error.
    pub sampling_error: f64,
    /// `1.645 sqrt(V / N)`.
    pub half_width_95: f64,
}

impl McEstimate {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        let n = values.len();
        ensure!(n >= 2, Data, "need at least two values for an estimate, got {n}");
        ensure!(values.iter().all(|v| v.is_finite()), Data, "values must be finite");
        // shifted sums keep a constant sample exact
        let shift = values[0];
        let mean = shift + values.iter().map(|v| v - shift).sum::<f64>() / n as f64;
        let variance = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let sampling_error = variance / n as f64;
        Ok(Self {
            n,
            mean,
            variance,
            sampling_error,
            half_width_95: Z_ONE_SIDED_95 * sampling_error.sqrt(),
        })
    }
}

/// Strengths of a sample set with the estimator and distribution fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrengthDistribution {
    pub model: String,
    pub fidelity: Option<u64>,
    /// The model bias `E[Q - Q_M]` is not estimated; this records what is
    /// known about it.
    pub bias_note: String,
    pub samples: Vec<StrengthSample>,
    pub failed: usize,
    pub estimate: McEstimate,
    pub weibull: Option<WeibullFit>,
    pub weibull_error: Option<String>,
}

impl StrengthDistribution {
    /// Strengths of the successful evaluations, in sample order.
    pub fn strengths(&self) -> Vec<f64> {
        self.samples.iter().filter_map(|s| s.mc).collect()
    }

    /// `(max_slope, M_c)` for samples where both are known.
    pub fn slope_pairs(&self) -> Vec<(f64, f64)> {
        self.samples
            .iter()
            .filter_map(|s| Some((s.max_slope?, s.mc?)))
            .collect()
    }

    /// `sample_id,max_slope,Mc`, with empty fields for unknown values.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["sample_id", "max_slope", "Mc"])?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.12e}"));
        for s in &self.samples {
            w.write_record([s.sample_id.to_string(), opt(s.max_slope), opt(s.mc)])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Evaluates the model on every sample in parallel and reduces in sample
/// order. Failed evaluations are recorded and left out of the estimate.
pub fn monte_carlo<M: ForwardStrengthModel + ?Sized>(
    samples: &[WrinkleParams],
    model: &M,
    field: Option<FieldContext<'_>>,
) -> Result<StrengthDistribution> {
    ensure!(!samples.is_empty(), Data, "no samples to propagate");
    let results: Vec<StrengthSample> = samples
        .par_iter()
        .enumerate()
        .map(|(i, xi)| {
            let max_slope = field.and_then(|f| f.max_slope(xi).ok());
            match model.evaluate(xi) {
                Ok(m) if m.is_finite() && m > 0.0 => StrengthSample {
                    sample_id: i,
                    max_slope,
                    mc: Some(m),
                    error: None,
                },
                Ok(m) => StrengthSample {
                    sample_id: i,
                    max_slope,
                    mc: None,
                    error: Some(format!("model returned non-positive strength {m}")),
                },
                Err(e) => StrengthSample {
                    sample_id: i,
                    max_slope,
                    mc: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let values: Vec<f64> = results.iter().filter_map(|s| s.mc).collect();
    let failed = results.len() - values.len();
    let estimate = McEstimate::from_values(&values)?;
    let (weibull, weibull_error) = match weibull_fit(&values) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let note = model.fidelity_note();
    Ok(StrengthDistribution {
        model: model.id(),
        fidelity: model.fidelity(),
        bias_note: if note.is_empty() {
            "model bias not estimated".into()
        } else {
            format!("model bias not estimated; {note}")
        },
        samples: results,
        failed,
        estimate,
        weibull,
        weibull_error,
    })
}
