use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use defect_chain::bayes::{
    build_prior, fit_map_observation, sample_posterior, MapFit, NoiseModel, ObservationSet, PriorModel,
    RunDiagnostics, WrinklePosterior,
};
use defect_chain::klfield::WrinkleParams;
use defect_chain::mfia::{hierarchical_sample, synth_bscan, unwrap_corner, GrayImage, MisalignmentSamples};
use defect_chain::propagate::{
    cdf_points, knockdown_report, monte_carlo, ExternalModel, FieldContext, ForwardStrengthModel, KnockdownReport,
    McEstimate, StrengthDistribution, SurrogateStrength,
};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ModelKind, PipelineConfig, Setup};
use crate::error::{exit, CliError, Context, Result};
use crate::manifest::{RunManifest, StageWriter};

pub const SYNTH_DIR: &str = "synth";
pub const EXTRACT_DIR: &str = "extract";
pub const INFER_DIR: &str = "infer";
pub const PROPAGATE_DIR: &str = "propagate";
pub const COMPARE_DIR: &str = "compare";

/// Independent seed for one stage and item, derived from the master seed.
pub fn derive_seed(seed: u64, stage: u64, item: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((stage << 32) | item);
    rng.next_u64()
}

const STAGE_SYNTH: u64 = 1;
const STAGE_EXTRACT: u64 = 2;
const STAGE_INFER: u64 = 3;
const STAGE_COMPARE: u64 = 4;

pub struct StageOutcome {
    pub manifest: RunManifest,
    pub exit_code: i32,
}

/// Files `dir/<prefix><k>.<ext>` ordered by `k`.
pub fn numbered_files(dir: &Path, prefix: &str, ext: &str) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let Some(rest) = name.strip_prefix(prefix) else {
            continue;
        };
        let Some(num) = rest.strip_suffix(&format!(".{ext}")) else {
            continue;
        };
        if let Ok(k) = num.parse::<usize>() {
            found.push((k, path));
        }
    }
    found.sort();
    Ok(found.into_iter().map(|(_, p)| p).collect())
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_reader(open(path)?).map_err(|e| CliError::Core {
        context: format!("reading {}", path.display()),
        source: e.into(),
    })
}

/// `sample_id,a_1..a_N,lambda`.
pub fn write_samples<W: Write>(samples: &[WrinkleParams], out: W) -> defect_chain::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let n = samples.first().map_or(0, |s| s.amplitudes.len());
    let mut header = vec!["sample_id".to_string()];
    header.extend((1..=n).map(|i| format!("a_{i}")));
    header.push("lambda".into());
    w.write_record(&header)?;
    for (k, s) in samples.iter().enumerate() {
        let mut row = vec![k.to_string()];
        row.extend(s.amplitudes.iter().map(f64::to_string));
        row.push(s.length_scale.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_samples(path: &Path) -> Result<Vec<WrinkleParams>> {
    let mut r = csv::Reader::from_reader(open(path)?);
    let mut out = Vec::new();
    let bad = |m: String| CliError::Core {
        context: format!("reading {}", path.display()),
        source: defect_chain::Error::Data(m),
    };
    for rec in r.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let vals: Vec<f64> = rec
            .iter()
            .skip(1)
            .map(|v| v.parse::<f64>().map_err(|e| bad(format!("{v:?}: {e}"))))
            .collect::<Result<_>>()?;
        let xi = WrinkleParams::from_slice(&vals).map_err(|e| bad(e.to_string()))?;
        out.push(xi);
    }
    Ok(out)
}

fn log(stage: &str, msg: impl AsRef<str>) {
    eprintln!("[{stage}] {}", msg.as_ref());
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SynthRecord {
    scan: String,
    truth: String,
    wrinkle: WrinkleParams,
    max_abs_slope: f64,
}

/// Renders `count` synthetic scans from prior-drawn wrinkles.
pub fn cmd_synth(cfg: &PipelineConfig, count: Option<usize>) -> Result<StageOutcome> {
    let seed = cfg.seed()?;
    cfg.validate()?;
    let count = count.unwrap_or(cfg.synth.count);
    let setup = cfg.setup()?;
    let render = cfg.render_spec()?;
    let prior = cfg.synth_prior();
    let mut stage = StageWriter::create(&cfg.out_dir, SYNTH_DIR)?;
    let field = FieldContext {
        cache: &setup.cache,
        decay: &setup.decay,
        grid: &setup.grid,
    };
    let mut records = Vec::new();
    for k in 0..count {
        let t = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STAGE_SYNTH, k as u64));
        let xi = prior
            .draw_admissible(&setup.cache, &setup.decay, &setup.grid, &mut rng, cfg.synth.max_draws)
            .context(|| format!("drawing wrinkle {k}"))?;
        let basis = setup.cache.get(xi.length_scale).context(|| "basis".into())?;
        let scan = synth_bscan(&xi, &basis, &setup.decay, &setup.geometry, &render, &mut rng)
            .context(|| format!("rendering scan {k}"))?;
        let scan_name = format!("scan_{k}.pgm");
        let truth_name = format!("truth_{k}.csv");
        stage.write(&scan_name, |w| scan.image.write_pgm(w))?;
        stage.write(&truth_name, |w| scan.truth.write_csv(w))?;
        let max_abs_slope = field.max_slope(&xi).context(|| "slope".into())?;
        records.push(SynthRecord {
            scan: scan_name,
            truth: truth_name,
            wrinkle: xi,
            max_abs_slope,
        });
        stage.time(&format!("scan_{k}"), t);
        log("synth", format!("scan {k}: max slope {max_abs_slope:.4}"));
    }
    stage.write_json("wrinkles.json", &records)?;
    let manifest = stage.finish(cfg, seed, exit::SUCCESS)?;
    Ok(StageOutcome {
        manifest,
        exit_code: exit::SUCCESS,
    })
}

fn default_images(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    if !cfg.mfia.images.is_empty() {
        return Ok(cfg.mfia.images.clone());
    }
    let dir = cfg.out_dir.join(SYNTH_DIR);
    if !dir.is_dir() {
        return Err(CliError::Config(format!(
            "no images configured and {} does not exist; run synth first",
            dir.display()
        )));
    }
    numbered_files(&dir, "scan_", "pgm")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ExtractRecord {
    image: String,
    observation: String,
    tree: String,
    points: usize,
    failed: usize,
}

/// Extracts misalignment samples from every scan.
pub fn cmd_extract(cfg: &PipelineConfig, images: Option<Vec<PathBuf>>) -> Result<StageOutcome> {
    let seed = cfg.seed()?;
    cfg.validate()?;
    let images = match images {
        Some(i) => i,
        None => default_images(cfg)?,
    };
    let geometry = cfg.geometry_spec()?;
    let fibre = cfg.fibre_config()?;
    let plan = cfg.sampling_plan();
    let mut stage = StageWriter::create(&cfg.out_dir, EXTRACT_DIR)?;
    let mut records = Vec::new();
    for (k, path) in images.iter().enumerate() {
        let t = Instant::now();
        stage.input(path);
        let raw = GrayImage::open(path, cfg.mfia.pitch_mm).context(|| format!("reading {}", path.display()))?;
        let img = unwrap_corner(&raw, cfg.mfia.layout, &geometry, cfg.focus_radius())
            .context(|| format!("unwrapping {}", path.display()))?;
        let source = path
            .file_name()
            .map_or_else(|| format!("image_{k}"), |n| n.to_string_lossy().into_owned());
        let (tree, samples) = hierarchical_sample(&img, &fibre, &plan, derive_seed(seed, STAGE_EXTRACT, k as u64), &source)
            .context(|| format!("sampling {}", path.display()))?;
        let obs_name = format!("obs_{k}.csv");
        let tree_name = format!("tree_{k}.json");
        stage.write(&obs_name, |w| samples.write_csv(w))?;
        stage.write(&tree_name, |w| tree.write_json(w))?;
        let failed = tree.levels.iter().map(|l| l.failed).sum();
        log("extract", format!("{source}: {} points", samples.len()));
        records.push(ExtractRecord {
            image: source,
            observation: obs_name,
            tree: tree_name,
            points: samples.len(),
            failed,
        });
        stage.time(&format!("image_{k}"), t);
    }
    stage.write_json("observations.json", &records)?;
    let manifest = stage.finish(cfg, seed, exit::SUCCESS)?;
    Ok(StageOutcome {
        manifest,
        exit_code: exit::SUCCESS,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitRecord {
    pub observation: String,
    pub points: usize,
    pub fit: MapFit,
    pub max_abs_slope: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InferReport {
    pub seed: u64,
    pub observations: Vec<String>,
    pub noise_scale: f64,
    pub misfit: defect_chain::bayes::MisfitNorm,
    pub dimension: usize,
    pub samples: usize,
    pub all_admissible: bool,
    pub converged: Option<bool>,
    pub run: RunDiagnostics,
}

/// Prior for a single observation: centred on its fit with unit variance
/// in every component.
fn single_fit_prior(fit: &WrinkleParams) -> defect_chain::Result<PriorModel> {
    let mean = fit.to_vec();
    let n = mean.len();
    PriorModel::new(mean, vec![1.0; n])
}

/// Fits, builds the prior and noise model, and samples the posterior.
pub fn cmd_infer(cfg: &PipelineConfig) -> Result<StageOutcome> {
    let seed = cfg.seed()?;
    cfg.validate()?;
    let Setup {
        cache, decay, grid, ..
    } = cfg.setup()?;
    let dir = cfg.out_dir.join(EXTRACT_DIR);
    let files = numbered_files(&dir, "obs_", "csv")?;
    if files.is_empty() {
        return Err(CliError::Config(format!("no observations in {}", dir.display())));
    }
    let mut stage = StageWriter::create(&cfg.out_dir, INFER_DIR)?;
    let mut observations = Vec::new();
    for f in &files {
        stage.input(f);
        let name = f.file_name().unwrap_or_default().to_string_lossy().into_owned();
        observations.push(MisalignmentSamples::read_csv(open(f)?, name.clone()).context(|| format!("reading {name}"))?);
    }
    let data = ObservationSet::new(observations).context(|| "observations".into())?;

    let t = Instant::now();
    let fit_cfg = cfg.fit_config();
    let fits: Vec<MapFit> = data
        .iter()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|o| fit_map_observation(o, &cache, &decay, &grid, &fit_cfg).context(|| format!("fitting {}", o.source)))
        .collect::<Result<_>>()?;
    stage.time("fit", t);
    let field = FieldContext {
        cache: &cache,
        decay: &decay,
        grid: &grid,
    };
    let mut records = Vec::new();
    for (o, f) in data.iter().zip(&fits) {
        let slope = field.max_slope(&f.params).context(|| "slope".into())?;
        log(
            "infer",
            format!("{}: lambda {:.2} mm, rms {:.4} rad, max slope {slope:.4}", o.source, f.params.length_scale, f.rms),
        );
        records.push(FitRecord {
            observation: o.source.clone(),
            points: o.len(),
            fit: f.clone(),
            max_abs_slope: slope,
        });
    }
    stage.write_json("map_fits.json", &records)?;

    let params: Vec<WrinkleParams> = fits.iter().map(|f| f.params.clone()).collect();
    let prior = if params.len() == 1 {
        stage
            .warnings
            .push("one observation: prior uses unit variances around its fit".into());
        single_fit_prior(&params[0])
    } else {
        build_prior(&params, cfg.infer.prior_confidence)
    }
    .context(|| "prior".into())?;
    stage.write_json("prior.json", &prior)?;
    let noise = NoiseModel::student_scaled(cfg.noise.base_accuracy_rad, data.min_points(), cfg.noise.confidence)
        .context(|| "noise model".into())?;

    let target = WrinklePosterior::new(&data, prior.clone(), noise, cfg.infer.misfit, &cache, &decay, grid.clone())
        .context(|| "posterior".into())?;
    let t = Instant::now();
    let run = sample_posterior(&target, &cfg.sampler_plan(derive_seed(seed, STAGE_INFER, 0)))
        .context(|| "sampling".into())?;
    stage.time("sample", t);
    for c in &run.chains {
        stage.write(&format!("chain_{}.csv", c.index), |w| c.write_csv(w))?;
    }
    let samples: Vec<WrinkleParams> = run
        .samples
        .iter()
        .map(|s| WrinkleParams::from_slice(s))
        .collect::<defect_chain::Result<_>>()
        .context(|| "samples".into())?;
    let mut all_admissible = true;
    for s in &samples {
        all_admissible &= field.is_admissible(s).context(|| "admissibility".into())?;
    }
    stage.write("samples.csv", |w| write_samples(&samples, w))?;

    let converged = run.diagnostics.convergence.as_ref().map(|c| c.converged);
    stage.warnings.extend(run.diagnostics.warnings.iter().cloned());
    if !all_admissible {
        stage.warnings.push("some samples fold the laminate".into());
    }
    log(
        "infer",
        format!(
            "beta {:.3}, burn-in {}, thinning {}, acceptance {:?}, max R {:?}",
            run.diagnostics.beta,
            run.diagnostics.burn_in,
            run.diagnostics.thinning,
            run.diagnostics
                .acceptance
                .iter()
                .map(|a| (a * 1000.0).round() / 1000.0)
                .collect::<Vec<_>>(),
            run.diagnostics.convergence.as_ref().map(|c| c.max_statistic)
        ),
    );
    let report = InferReport {
        seed,
        observations: data.ids().into_iter().map(String::from).collect(),
        noise_scale: noise.scale,
        misfit: cfg.infer.misfit,
        dimension: prior.dim(),
        samples: samples.len(),
        all_admissible,
        converged,
        run: run.diagnostics.clone(),
    };
    stage.write_json("diagnostics.json", &report)?;
    let code = if converged == Some(false) || !all_admissible {
        exit::CONVERGENCE
    } else {
        exit::SUCCESS
    };
    let manifest = stage.finish(cfg, seed, code)?;
    Ok(StageOutcome {
        manifest,
        exit_code: code,
    })
}

/// Holds whichever strength model the config selects.
enum Model<'a> {
    Surrogate(SurrogateStrength<'a>),
    External(ExternalModel<'a>),
}

impl Model<'_> {
    fn as_dyn(&self) -> &dyn ForwardStrengthModel {
        match self {
            Model::Surrogate(m) => m,
            Model::External(m) => m,
        }
    }
}

fn build_model<'a>(cfg: &PipelineConfig, setup: &'a Setup) -> Result<Model<'a>> {
    let field = FieldContext {
        cache: &setup.cache,
        decay: &setup.decay,
        grid: &setup.grid,
    };
    Ok(match cfg.propagate.model {
        ModelKind::Surrogate => Model::Surrogate(SurrogateStrength {
            model: cfg.surrogate_model()?,
            field,
        }),
        ModelKind::External => {
            let ext = cfg
                .propagate
                .external
                .as_ref()
                .ok_or_else(|| CliError::Config("missing [propagate.external]".into()))?;
            let geom = &setup.geometry;
            Model::External(ExternalModel {
                spec: cfg.external_spec(ext)?,
                field,
                export: defect_chain::klfield::SectionGrid::with_density(
                    geom,
                    ext.export_points_along_arc,
                    ext.export_points_per_ply,
                ),
                workdir: std::env::temp_dir(),
            })
        }
    })
}

fn write_cdf(stage: &mut StageWriter, name: &str, dist: &StrengthDistribution) -> Result<()> {
    let points = cdf_points(&dist.strengths(), dist.weibull.as_ref());
    stage.write(name, |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["Mc", "empirical", "weibull"])?;
        for p in &points {
            let fitted = if p.fitted.is_finite() { p.fitted.to_string() } else { String::new() };
            c.write_record([p.value.to_string(), p.empirical.to_string(), fitted])?;
        }
        c.flush()?;
        Ok(())
    })?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PropagateReport {
    pub model: String,
    pub fidelity: Option<u64>,
    pub bias_note: String,
    pub samples: usize,
    pub failed: usize,
    pub estimate: McEstimate,
    pub knockdown: KnockdownReport,
}

/// Pushes the posterior samples through the strength model.
pub fn cmd_propagate(cfg: &PipelineConfig) -> Result<StageOutcome> {
    let seed = cfg.seed()?;
    cfg.validate()?;
    let setup = cfg.setup()?;
    let samples_path = cfg.out_dir.join(INFER_DIR).join("samples.csv");
    let samples = read_samples(&samples_path)?;
    let mut stage = StageWriter::create(&cfg.out_dir, PROPAGATE_DIR)?;
    stage.input(&samples_path);
    let model = build_model(cfg, &setup)?;
    let field = FieldContext {
        cache: &setup.cache,
        decay: &setup.decay,
        grid: &setup.grid,
    };
    let t = Instant::now();
    let dist = monte_carlo(&samples, model.as_dyn(), Some(field)).context(|| "propagation".into())?;
    stage.time("evaluate", t);
    let m_star = cfg.propagate.m_star_knmm_per_mm;
    let report = knockdown_report(&dist, m_star).context(|| "knockdown report".into())?;
    if let Some(e) = &report.weibull_error {
        stage.warnings.push(format!("Weibull fit: {e}"));
    }
    if dist.failed > 0 {
        stage.warnings.push(format!("{} samples failed to evaluate", dist.failed));
    }
    stage.write("strengths.csv", |w| dist.write_csv(w))?;
    write_cdf(&mut stage, "cdf.csv", &dist)?;
    let surrogate = cfg.surrogate_model()?;
    let max_slope = dist
        .slope_pairs()
        .iter()
        .map(|p| p.0)
        .fold(0.0, f64::max)
        .max(1e-3);
    stage.write("slope_curve.csv", |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["slope", "Mc_surrogate", "Mc_lower", "Mc_fitted"])?;
        for k in 0..=100 {
            let s = 1.2 * max_slope * k as f64 / 100.0;
            let lower = surrogate.lower_strength(s)?.map_or(String::new(), |v| v.to_string());
            let fitted = match &report.surrogate {
                Some(f) => f.model.strength(s)?.to_string(),
                None => String::new(),
            };
            c.write_record([s.to_string(), surrogate.strength(s)?.to_string(), lower, fitted])?;
        }
        c.flush()?;
        Ok(())
    })?;
    log(
        "propagate",
        format!(
            "mean {:.5} (knockdown {:.3}%), worst {:.5} ({:.3}%), Weibull modulus {:?}",
            report.mean_mc,
            100.0 * report.mean_knockdown,
            report.worst_mc,
            100.0 * report.worst_knockdown,
            report.weibull.map(|w| w.modulus)
        ),
    );
    let out = PropagateReport {
        model: dist.model.clone(),
        fidelity: dist.fidelity,
        bias_note: dist.bias_note.clone(),
        samples: dist.samples.len(),
        failed: dist.failed,
        estimate: dist.estimate.clone(),
        knockdown: report,
    };
    stage.write_json("report.json", &out)?;
    let manifest = stage.finish(cfg, seed, exit::SUCCESS)?;
    Ok(StageOutcome {
        manifest,
        exit_code: exit::SUCCESS,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SetSummary {
    pub n: usize,
    pub failed: usize,
    pub mean_mc: f64,
    pub variance: f64,
    pub half_width_95: f64,
    pub worst_mc: f64,
    pub worst_knockdown: f64,
    pub mean_max_slope: f64,
    pub weibull_modulus: Option<f64>,
    pub weibull_scale: Option<f64>,
    pub weibull_error: Option<String>,
}

impl SetSummary {
    fn new(d: &StrengthDistribution, m_star: f64) -> Self {
        let mc = d.strengths();
        let worst = mc.iter().copied().fold(f64::INFINITY, f64::min);
        let slopes: Vec<f64> = d.slope_pairs().iter().map(|p| p.0).collect();
        Self {
            n: mc.len(),
            failed: d.failed,
            mean_mc: d.estimate.mean,
            variance: d.estimate.variance,
            half_width_95: d.estimate.half_width_95,
            worst_mc: worst,
            worst_knockdown: 1.0 - worst / m_star,
            mean_max_slope: slopes.iter().sum::<f64>() / slopes.len().max(1) as f64,
            weibull_modulus: d.weibull.map(|w| w.modulus),
            weibull_scale: d.weibull.map(|w| w.scale),
            weibull_error: d.weibull_error.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareReport {
    pub model: String,
    pub posterior: SetSummary,
    pub prior: SetSummary,
    /// Prior draws discarded for folding the laminate or a non-positive
    /// correlation length.
    pub prior_rejected_draws: usize,
    pub prior_modulus_ge_posterior: Option<bool>,
}

/// Propagates independent prior draws next to the posterior samples.
pub fn cmd_compare(cfg: &PipelineConfig) -> Result<StageOutcome> {
    let seed = cfg.seed()?;
    cfg.validate()?;
    let setup = cfg.setup()?;
    let infer = cfg.out_dir.join(INFER_DIR);
    let prior_path = infer.join("prior.json");
    let samples_path = infer.join("samples.csv");
    let prior: PriorModel = read_json(&prior_path)?;
    let posterior = read_samples(&samples_path)?;
    let mut stage = StageWriter::create(&cfg.out_dir, COMPARE_DIR)?;
    stage.input(&prior_path);
    stage.input(&samples_path);
    let field = FieldContext {
        cache: &setup.cache,
        decay: &setup.decay,
        grid: &setup.grid,
    };
    let n = cfg.propagate.compare_samples.unwrap_or(posterior.len());
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STAGE_COMPARE, 0));
    let mut drawn = Vec::with_capacity(n);
    let mut rejected = 0;
    let limit = n.saturating_mul(cfg.infer.max_init_draws.max(1));
    while drawn.len() < n {
        if rejected >= limit {
            return Err(CliError::Core {
                context: "prior sampling".into(),
                source: defect_chain::Error::Initialization(format!(
                    "only {} admissible prior draws after {rejected} rejections",
                    drawn.len()
                )),
            });
        }
        let xi = prior.sample(&mut rng);
        let lambda = xi[xi.len() - 1];
        let ok = lambda > 0.0 && {
            let p = WrinkleParams::from_slice(&xi).context(|| "prior draw".into())?;
            field.is_admissible(&p).context(|| "prior draw".into())?
        };
        if ok {
            drawn.push(WrinkleParams::from_slice(&xi).context(|| "prior draw".into())?);
        } else {
            rejected += 1;
        }
    }
    stage.write("prior_samples.csv", |w| write_samples(&drawn, w))?;
    let model = build_model(cfg, &setup)?;
    let post = monte_carlo(&posterior, model.as_dyn(), Some(field)).context(|| "posterior propagation".into())?;
    let pri = monte_carlo(&drawn, model.as_dyn(), Some(field)).context(|| "prior propagation".into())?;
    write_cdf(&mut stage, "cdf_posterior.csv", &post)?;
    write_cdf(&mut stage, "cdf_prior.csv", &pri)?;
    let m_star = cfg.propagate.m_star_knmm_per_mm;
    let report = CompareReport {
        model: post.model.clone(),
        posterior: SetSummary::new(&post, m_star),
        prior: SetSummary::new(&pri, m_star),
        prior_rejected_draws: rejected,
        prior_modulus_ge_posterior: match (pri.weibull, post.weibull) {
            (Some(a), Some(b)) => Some(a.modulus >= b.modulus),
            _ => None,
        },
    };
    log(
        "compare",
        format!(
            "Weibull modulus: prior {:?}, posterior {:?}",
            report.prior.weibull_modulus, report.posterior.weibull_modulus
        ),
    );
    stage.write_json("compare.json", &report)?;
    let manifest = stage.finish(cfg, seed, exit::SUCCESS)?;
    Ok(StageOutcome {
        manifest,
        exit_code: exit::SUCCESS,
    })
}
