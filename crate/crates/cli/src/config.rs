use std::path::{Path, PathBuf};

use defect_chain::bayes::{FitConfig, MisfitNorm, SamplerPlan, TuneConfig, BASE_ACCURACY};
use defect_chain::klfield::{BasisCache, CovarianceSpec, DecaySpec, GeometrySpec, SectionGrid};
use defect_chain::mfia::{CornerLayout, FocusBlur, RenderSpec, SamplingPlan, SynthPrior, TrialFibreConfig};
use defect_chain::propagate::{Allowables, ExternalSpec, SurrogateBound, SurrogateModel, PRISTINE_STRENGTH};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Context, Result};

/// Whole-pipeline settings, read from a TOML file. Key names carry their
/// units; relative paths are resolved against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
    pub geometry: GeometryConfig,
    pub covariance: CovarianceConfig,
    pub decay: DecayConfig,
    pub synth: SynthConfig,
    pub mfia: MfiaConfig,
    pub noise: NoiseConfig,
    pub infer: InferConfig,
    pub propagate: PropagateConfig,
    pub allowables: AllowablesConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: None,
            out_dir: PathBuf::from("run"),
            geometry: GeometryConfig::default(),
            covariance: CovarianceConfig::default(),
            decay: DecayConfig::default(),
            synth: SynthConfig::default(),
            mfia: MfiaConfig::default(),
            noise: NoiseConfig::default(),
            infer: InferConfig::default(),
            propagate: PropagateConfig::default(),
            allowables: AllowablesConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub inner_radius_mm: f64,
    pub ply_count: u32,
    pub ply_thickness_mm: f64,
    pub interply_thickness_mm: f64,
    pub width_mm: f64,
    pub limb_length_mm: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        let g = GeometrySpec::default();
        Self {
            inner_radius_mm: g.radius,
            ply_count: g.ply_count,
            ply_thickness_mm: g.ply_thickness,
            interply_thickness_mm: g.interply_thickness,
            width_mm: g.width,
            limb_length_mm: g.limb_length,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CovarianceConfig {
    pub sigma_f_mm: f64,
    /// Correlation length used for the basis template, mm.
    pub lambda_mm: f64,
    pub grid_points: usize,
    pub modes: usize,
    /// Correlation lengths are snapped to multiples of this, mm.
    pub lambda_quantum_mm: f64,
}

impl Default for CovarianceConfig {
    fn default() -> Self {
        Self {
            sigma_f_mm: 0.1425,
            lambda_mm: 12.9,
            grid_points: 256,
            modes: 30,
            lambda_quantum_mm: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecayConfig {
    pub focus_depth_mm: f64,
    pub exponent: u32,
    /// Envelope value at the section boundary.
    pub boundary_value: f64,
}

impl Default for DecayConfig {
    fn default() -> Self {
        Self {
            focus_depth_mm: 4.8,
            exponent: 4,
            boundary_value: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub count: usize,
    pub pitch_mm: [f64; 2],
    pub background_gray: f64,
    pub echo_gray: f64,
    pub echo_width_mm: f64,
    pub noise_gray: f64,
    /// Defocus blur growth, mm of blur per mm away from the focal depth.
    pub blur_mm_per_mm: Option<f64>,
    pub truth_stride_px: usize,
    pub amplitude_std: f64,
    pub lambda_mean_mm: f64,
    pub lambda_std_mm: f64,
    pub max_draws: usize,
}

/// Amplitude spread of synthetic wrinkles; gives maximum slopes of roughly
/// 0.3 to 0.5, where the surrogate knocks strength down by a few percent.
pub const SYNTH_AMPLITUDE_STD: f64 = 24.0;

/// Steps of the chain used to estimate the autocorrelation time.
pub const PILOT_STEPS: usize = 20_000;

impl Default for SynthConfig {
    fn default() -> Self {
        let r = RenderSpec::default();
        let p = SynthPrior::default();
        Self {
            count: 4,
            pitch_mm: r.pitch,
            background_gray: r.background,
            echo_gray: r.echo,
            echo_width_mm: r.echo_width,
            noise_gray: r.noise_sigma,
            blur_mm_per_mm: None,
            truth_stride_px: r.truth_stride,
            amplitude_std: SYNTH_AMPLITUDE_STD,
            lambda_mean_mm: p.lambda_mean,
            lambda_std_mm: p.lambda_std,
            max_draws: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MfiaConfig {
    /// Scans to analyse; empty means the scans written by `synth`.
    pub images: Vec<PathBuf>,
    pub pitch_mm: [f64; 2],
    pub layout: CornerLayout,
    /// Radius at which arc length is measured when unwrapping, mm; defaults
    /// to the inner radius plus the focal depth.
    pub focus_radius_mm: Option<f64>,
    pub fibre_length_px: f64,
    pub angle_limit_deg: f64,
    pub sample_step_px: f64,
    pub coarse_step_deg: f64,
    pub refine_tol_deg: f64,
    pub min_coverage: f64,
    pub base_cols: usize,
    pub base_rows: usize,
    pub budgets: Vec<usize>,
}

impl Default for MfiaConfig {
    fn default() -> Self {
        let f = TrialFibreConfig::default();
        let s = SamplingPlan::default();
        Self {
            images: Vec::new(),
            pitch_mm: RenderSpec::default().pitch,
            layout: CornerLayout::Flat,
            focus_radius_mm: None,
            fibre_length_px: f.length,
            angle_limit_deg: f.theta_max.to_degrees(),
            sample_step_px: f.step,
            coarse_step_deg: f.coarse_step.to_degrees(),
            refine_tol_deg: f.refine_tol.to_degrees(),
            min_coverage: f.min_coverage,
            base_cols: s.base_cols,
            base_rows: s.base_rows,
            budgets: s.budgets,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub base_accuracy_rad: f64,
    pub confidence: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            base_accuracy_rad: BASE_ACCURACY,
            confidence: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferConfig {
    pub chains: usize,
    pub total_samples: usize,
    pub beta: f64,
    pub sigma_pcn: f64,
    pub tune: bool,
    pub target_acceptance: f64,
    pub tune_tolerance: f64,
    pub tune_pilot_steps: usize,
    pub tune_window: usize,
    pub pilot_steps: usize,
    pub burn_in_factor: f64,
    pub thinning_factor: f64,
    pub burn_in_steps: Option<usize>,
    pub thinning_steps: Option<usize>,
    pub max_init_draws: usize,
    pub misfit: MisfitNorm,
    /// Confidence of the Student-t inflation of the prior variance.
    pub prior_confidence: f64,
    pub fit_lambda_min_mm: f64,
    pub fit_lambda_max_mm: f64,
    pub fit_lambda_step_mm: f64,
    pub fit_rcond: f64,
}

impl Default for InferConfig {
    fn default() -> Self {
        let p = SamplerPlan::default();
        let f = FitConfig::default();
        Self {
            chains: p.chains,
            total_samples: p.total_samples,
            beta: p.beta,
            sigma_pcn: p.sigma_pcn,
            tune: true,
            target_acceptance: p.tuning.target,
            tune_tolerance: p.tuning.tolerance,
            tune_pilot_steps: p.tuning.pilot_steps,
            tune_window: p.tuning.window,
            pilot_steps: PILOT_STEPS,
            burn_in_factor: p.burn_in_factor,
            thinning_factor: p.thinning_factor,
            burn_in_steps: None,
            thinning_steps: None,
            max_init_draws: p.max_init_draws,
            misfit: MisfitNorm::default(),
            prior_confidence: 0.95,
            fit_lambda_min_mm: f.lambda_range[0],
            fit_lambda_max_mm: f.lambda_range[1],
            fit_lambda_step_mm: f.lambda_scan_step,
            fit_rcond: f.rcond,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Surrogate,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropagateConfig {
    pub model: ModelKind,
    pub m_star_knmm_per_mm: f64,
    pub q: f64,
    pub lambda_q: f64,
    pub lower_q: Option<f64>,
    pub lower_lambda_q: Option<f64>,
    pub external: Option<ExternalConfig>,
    /// Prior draws in `compare`; defaults to the posterior sample count.
    pub compare_samples: Option<usize>,
}

impl Default for PropagateConfig {
    fn default() -> Self {
        let s = SurrogateModel::default();
        let b = s.lower.expect("default surrogate has a bound");
        Self {
            model: ModelKind::Surrogate,
            m_star_knmm_per_mm: PRISTINE_STRENGTH,
            q: s.q,
            lambda_q: s.lambda_q,
            lower_q: Some(b.q),
            lower_lambda_q: Some(b.lambda_q),
            external: None,
            compare_samples: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExternalConfig {
    pub command: Vec<String>,
    pub timeout_s: f64,
    pub retries: usize,
    pub degrees_of_freedom: Option<u64>,
    pub export_points_along_arc: usize,
    pub export_points_per_ply: usize,
}

impl Default for ExternalConfig {
    fn default() -> Self {
        Self {
            command: Vec::new(),
            timeout_s: 600.0,
            retries: 1,
            degrees_of_freedom: None,
            export_points_along_arc: 256,
            export_points_per_ply: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AllowablesConfig {
    pub s13_mpa: f64,
    pub s23_mpa: f64,
    pub s33_mpa: f64,
}

impl Default for AllowablesConfig {
    fn default() -> Self {
        let a = Allowables::default();
        Self {
            s13_mpa: a.s13,
            s23_mpa: a.s23,
            s33_mpa: a.s33,
        }
    }
}

/// Numerical objects shared by every stage.
pub struct Setup {
    pub geometry: GeometrySpec,
    pub cache: BasisCache,
    pub decay: DecaySpec,
    pub grid: SectionGrid,
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(CliError::Config(msg()))
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|source| CliError::Toml {
            path: path.display().to_string(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.out_dir.is_relative() {
            cfg.out_dir = base.join(&cfg.out_dir);
        }
        for img in &mut cfg.mfia.images {
            if img.is_relative() {
                *img = base.join(&*img);
            }
        }
        Ok(cfg)
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| CliError::Config("a seed is required (config `seed` or --seed)".into()))
    }

    pub fn validate(&self) -> Result<()> {
        self.seed()?;
        self.geometry_spec()?;
        self.render_spec()?;
        self.fibre_config()?;
        self.surrogate_model()?;
        self.allowables()?;
        let c = &self.covariance;
        check(c.modes >= 1 && c.grid_points >= 2 * c.modes, || {
            format!("need grid_points >= 2 * modes, got {} and {}", c.grid_points, c.modes)
        })?;
        check(c.lambda_quantum_mm > 0.0, || "lambda_quantum_mm must be positive".into())?;
        let i = &self.infer;
        check(i.chains >= 1 && i.total_samples >= 1, || "need at least one chain and sample".into())?;
        check(i.beta > 0.0 && i.beta <= 1.0, || format!("beta must lie in (0, 1], got {}", i.beta))?;
        check(i.sigma_pcn > 0.0, || "sigma_pcn must be positive".into())?;
        check(i.fit_rcond > 0.0 && i.fit_rcond < 1.0, || "fit_rcond must lie in (0, 1)".into())?;
        let n = &self.noise;
        check(n.base_accuracy_rad > 0.0, || "base_accuracy_rad must be positive".into())?;
        check(n.confidence > 0.0 && n.confidence < 1.0, || "noise confidence must lie in (0, 1)".into())?;
        check(i.prior_confidence > 0.0 && i.prior_confidence < 1.0, || {
            "prior_confidence must lie in (0, 1)".into()
        })?;
        check(!self.mfia.budgets.is_empty(), || "mfia.budgets must not be empty".into())?;
        for img in &self.mfia.images {
            check(img.is_file(), || format!("image {} does not exist", img.display()))?;
        }
        if self.propagate.model == ModelKind::External {
            let ext = self
                .propagate
                .external
                .as_ref()
                .ok_or_else(|| CliError::Config("model = \"external\" needs a [propagate.external] table".into()))?;
            self.external_spec(ext)?;
        }
        Ok(())
    }

    pub fn geometry_spec(&self) -> Result<GeometrySpec> {
        let g = &self.geometry;
        let spec = GeometrySpec {
            radius: g.inner_radius_mm,
            ply_count: g.ply_count,
            ply_thickness: g.ply_thickness_mm,
            interply_thickness: g.interply_thickness_mm,
            width: g.width_mm,
            limb_length: g.limb_length_mm,
        };
        spec.validate().context(|| "geometry".into())?;
        Ok(spec)
    }

    pub fn setup(&self) -> Result<Setup> {
        let geometry = self.geometry_spec()?;
        let c = &self.covariance;
        let cov = CovarianceSpec::new(c.sigma_f_mm, c.lambda_mm, geometry.arc_length(), c.grid_points)
            .context(|| "covariance".into())?;
        let cache = BasisCache::new(cov, c.modes, c.lambda_quantum_mm).context(|| "covariance".into())?;
        let d = &self.decay;
        let decay = geometry
            .decay(d.focus_depth_mm, d.exponent, d.boundary_value)
            .context(|| "decay".into())?;
        Ok(Setup {
            grid: SectionGrid::for_geometry(&geometry),
            geometry,
            cache,
            decay,
        })
    }

    pub fn render_spec(&self) -> Result<RenderSpec> {
        let s = &self.synth;
        let spec = RenderSpec {
            pitch: s.pitch_mm,
            background: s.background_gray,
            echo: s.echo_gray,
            echo_width: s.echo_width_mm,
            noise_sigma: s.noise_gray,
            blur: s.blur_mm_per_mm.map(|b| FocusBlur {
                focus_depth: self.decay.focus_depth_mm,
                sigma_per_mm: b,
            }),
            truth_stride: s.truth_stride_px,
        };
        spec.validate().context(|| "synth".into())?;
        Ok(spec)
    }

    pub fn synth_prior(&self) -> SynthPrior {
        SynthPrior {
            amplitude_std: self.synth.amplitude_std,
            lambda_mean: self.synth.lambda_mean_mm,
            lambda_std: self.synth.lambda_std_mm,
        }
    }

    pub fn fibre_config(&self) -> Result<TrialFibreConfig> {
        let m = &self.mfia;
        let cfg = TrialFibreConfig {
            length: m.fibre_length_px,
            theta_min: -m.angle_limit_deg.to_radians(),
            theta_max: m.angle_limit_deg.to_radians(),
            step: m.sample_step_px,
            coarse_step: m.coarse_step_deg.to_radians(),
            refine_tol: m.refine_tol_deg.to_radians(),
            min_coverage: m.min_coverage,
        };
        cfg.validate().context(|| "mfia".into())?;
        Ok(cfg)
    }

    pub fn sampling_plan(&self) -> SamplingPlan {
        SamplingPlan {
            base_cols: self.mfia.base_cols,
            base_rows: self.mfia.base_rows,
            budgets: self.mfia.budgets.clone(),
        }
    }

    pub fn focus_radius(&self) -> f64 {
        self.mfia
            .focus_radius_mm
            .unwrap_or(self.geometry.inner_radius_mm + self.decay.focus_depth_mm)
    }

    pub fn fit_config(&self) -> FitConfig {
        let i = &self.infer;
        FitConfig {
            lambda_range: [i.fit_lambda_min_mm, i.fit_lambda_max_mm],
            lambda_scan_step: i.fit_lambda_step_mm,
            rcond: i.fit_rcond,
            ..FitConfig::default()
        }
    }

    pub fn sampler_plan(&self, seed: u64) -> SamplerPlan {
        let i = &self.infer;
        SamplerPlan {
            chains: i.chains,
            total_samples: i.total_samples,
            beta: i.beta,
            sigma_pcn: i.sigma_pcn,
            tune: i.tune,
            tuning: TuneConfig {
                target: i.target_acceptance,
                tolerance: i.tune_tolerance,
                pilot_steps: i.tune_pilot_steps,
                window: i.tune_window,
                ..TuneConfig::default()
            },
            pilot_steps: i.pilot_steps,
            burn_in_factor: i.burn_in_factor,
            thinning_factor: i.thinning_factor,
            fixed_burn_in: i.burn_in_steps,
            fixed_thinning: i.thinning_steps,
            seed,
            max_init_draws: i.max_init_draws,
        }
    }

    pub fn surrogate_model(&self) -> Result<SurrogateModel> {
        let p = &self.propagate;
        let lower = match (p.lower_q, p.lower_lambda_q) {
            (Some(q), Some(lambda_q)) => Some(SurrogateBound { q, lambda_q }),
            (None, None) => None,
            _ => {
                return Err(CliError::Config(
                    "lower_q and lower_lambda_q must be given together".into(),
                ))
            }
        };
        let m = SurrogateModel {
            m_star: p.m_star_knmm_per_mm,
            q: p.q,
            lambda_q: p.lambda_q,
            lower,
        };
        m.validate().context(|| "propagate".into())?;
        Ok(m)
    }

    pub fn external_spec(&self, ext: &ExternalConfig) -> Result<ExternalSpec> {
        let spec = ExternalSpec {
            command: ext.command.clone(),
            timeout_s: ext.timeout_s,
            retries: ext.retries,
            fidelity: ext.degrees_of_freedom,
        };
        spec.validate().context(|| "propagate.external".into())?;
        Ok(spec)
    }

    pub fn allowables(&self) -> Result<Allowables> {
        let a = Allowables {
            s13: self.allowables.s13_mpa,
            s23: self.allowables.s23_mpa,
            s33: self.allowables.s33_mpa,
        };
        a.validate().context(|| "allowables".into())?;
        Ok(a)
    }
}
