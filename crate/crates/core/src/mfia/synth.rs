use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::image::quantize;
use super::{GrayImage, MisalignmentSample, MisalignmentSamples};
use crate::error::{ensure, Error, Result};
use crate::klfield::{BasisCache, DecaySpec, GeometrySpec, KlBasis, Point, SectionGrid, WrinkleField, WrinkleParams};

/// Depth-dependent defocus: Gaussian blur whose width grows linearly with
/// distance from the focal depth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocusBlur {
    pub focus_depth: f64,
    /// Blur standard deviation (mm) per mm of defocus.
    pub sigma_per_mm: f64,
}

impl FocusBlur {
    pub fn sigma_mm(&self, depth: f64) -> f64 {
        self.sigma_per_mm * (depth - self.focus_depth).abs()
    }
}

/// Appearance of a synthetic ultrasound section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderSpec {
    /// mm per pixel along `x1` and `x3`.
    pub pitch: [f64; 2],
    /// Gray level of ply interiors.
    pub background: f64,
    /// Peak brightness added by each ply interface echo.
    pub echo: f64,
    /// Standard deviation of an interface echo profile, mm.
    pub echo_width: f64,
    pub noise_sigma: f64,
    pub blur: Option<FocusBlur>,
    /// Spacing of the ground-truth grid, pixels.
    pub truth_stride: usize,
}

impl Default for RenderSpec {
    fn default() -> Self {
        Self {
            pitch: [0.1, 0.05],
            background: 40.0,
            echo: 170.0,
            echo_width: 0.06,
            noise_sigma: 0.0,
            blur: None,
            truth_stride: 4,
        }
    }
}

impl RenderSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.pitch.iter().all(|p| p.is_finite() && *p > 0.0),
            Parameter,
            "pixel pitch must be positive"
        );
        ensure!(
            self.echo_width > 0.0 && self.noise_sigma >= 0.0 && self.truth_stride > 0,
            Parameter,
            "echo width and truth stride must be positive, noise non-negative"
        );
        if let Some(b) = self.blur {
            ensure!(b.sigma_per_mm >= 0.0, Parameter, "blur growth must be non-negative");
        }
        Ok(())
    }

    /// Largest image whose pixel centres all lie in the unwrapped section
    /// `[0, L] x [0, T]`.
    pub fn size(&self, geom: &GeometrySpec) -> (usize, usize) {
        let w = (geom.arc_length() / self.pitch[0] + 1e-9).floor() as usize + 1;
        let h = (geom.thickness() / self.pitch[1] + 1e-9).floor() as usize + 1;
        (w, h)
    }
}

/// Undeformed depth `z` of the ply passing through `(x1, x3)`, i.e. the
/// root of `z + W(x1, z) = x3`.
pub fn pristine_depth(field: &WrinkleField<'_>, x1: f64, x3: f64) -> f64 {
    let a = field.arc_factor(x1).0;
    let g = |z: f64| z + a * field.decay().value(1, z) - x3;
    // |g3| <= 1 so the root lies within |a| of x3
    let (mut lo, mut hi) = (x3 - a.abs() - 1e-9, x3 + a.abs() + 1e-9);
    let mut z = x3 - a * field.decay().value(1, x3);
    for _ in 0..60 {
        let r = g(z);
        if r.abs() < 1e-13 {
            break;
        }
        if r > 0.0 {
            hi = hi.min(z);
        } else {
            lo = lo.max(z);
        }
        let d = 1.0 + a * field.decay().derivative(1, z);
        let next = z - r / d;
        z = if d > 0.0 && next > lo && next < hi {
            next
        } else {
            0.5 * (lo + hi)
        };
    }
    z
}

/// Ply misalignment seen at a point of the deformed section: the slope of
/// the ply through it, `atan(dW/dx1)` evaluated at its undeformed depth.
pub fn true_misalignment(field: &WrinkleField<'_>, x1: f64, x3: f64) -> f64 {
    let z = pristine_depth(field, x1, x3);
    field.slope_x1_unchecked(Point::new(x1, z)).atan()
}

/// Brightness of the pristine laminate at depth `z`: an echo at both faces
/// and at every ply interface.
fn pristine_gray(z: f64, geom: &GeometrySpec, spec: &RenderSpec) -> f64 {
    let period = geom.ply_period();
    let t = geom.thickness();
    let s2 = 2.0 * spec.echo_width * spec.echo_width;
    let reach = 5.0 * spec.echo_width;
    let echo = |c: f64| {
        let d = z - c;
        if d.abs() > reach {
            0.0
        } else {
            (-d * d / s2).exp()
        }
    };
    let mut sum = echo(0.0) + echo(t);
    let k_lo = ((z - reach - geom.ply_thickness) / period).floor().max(0.0) as i64;
    let k_hi = ((z + reach) / period).ceil() as i64;
    for k in k_lo..=k_hi {
        if k >= 0 && (k as u32) + 1 < geom.ply_count {
            sum += echo(k as f64 * period + geom.ply_thickness + 0.5 * geom.interply_thickness);
        }
    }
    spec.background + spec.echo * sum
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-r..=r).map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable blur whose width depends on the output row. Edges are
/// clamped.
fn depth_blur(data: &[f64], w: usize, h: usize, sigma_px: impl Fn(usize) -> (f64, f64)) -> Vec<f64> {
    let mut tmp = vec![0.0; w * h];
    for r in 0..h {
        let (sc, _) = sigma_px(r);
        let row = &data[r * w..(r + 1) * w];
        if sc < 0.3 {
            tmp[r * w..(r + 1) * w].copy_from_slice(row);
            continue;
        }
        let k = gaussian_kernel(sc);
        let rad = (k.len() / 2) as i64;
        for c in 0..w {
            tmp[r * w + c] = k
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * row[(c as i64 + i as i64 - rad).clamp(0, w as i64 - 1) as usize])
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for r in 0..h {
        let (_, sr) = sigma_px(r);
        if sr < 0.3 {
            out[r * w..(r + 1) * w].copy_from_slice(&tmp[r * w..(r + 1) * w]);
            continue;
        }
        let k = gaussian_kernel(sr);
        let rad = (k.len() / 2) as i64;
        for c in 0..w {
            out[r * w + c] = k
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * tmp[(r as i64 + i as i64 - rad).clamp(0, h as i64 - 1) as usize * w + c])
                .sum();
        }
    }
    out
}

/// A rendered scan with its dense ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticScan {
    pub image: GrayImage,
    pub truth: MisalignmentSamples,
}

/// Renders an unwrapped B-scan of the section deformed by `xi`.
///
/// Plies are displaced in `x3` by the wrinkle, then optional defocus blur and
/// Gaussian pixel noise are applied before quantisation.
pub fn synth_bscan<R: Rng + ?Sized>(
    xi: &WrinkleParams,
    basis: &KlBasis,
    decay: &DecaySpec,
    geom: &GeometrySpec,
    spec: &RenderSpec,
    rng: &mut R,
) -> Result<SyntheticScan> {
    spec.validate()?;
    geom.validate()?;
    let field = WrinkleField::new(xi, basis, decay)?;
    ensure!(
        field.is_admissible(&SectionGrid::for_geometry(geom)),
        Parameter,
        "wrinkle folds the laminate (Jacobian not positive)"
    );
    let (w, h) = spec.size(geom);
    let [p1, p3] = spec.pitch;

    let mut data = vec![0.0; w * h];
    for c in 0..w {
        let x1 = c as f64 * p1;
        for r in 0..h {
            let z = pristine_depth(&field, x1, r as f64 * p3);
            data[r * w + c] = pristine_gray(z, geom, spec);
        }
    }
    if let Some(blur) = spec.blur {
        data = depth_blur(&data, w, h, |r| {
            let s = blur.sigma_mm(r as f64 * p3);
            (s / p1, s / p3)
        });
    }
    if spec.noise_sigma > 0.0 {
        let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::Parameter(e.to_string()))?;
        data.iter_mut().for_each(|v| *v += noise.sample(rng));
    }
    let image = GrayImage::new(w, h, data.into_iter().map(quantize).collect(), spec.pitch)?;

    let mut truth = Vec::new();
    for r in (0..h).step_by(spec.truth_stride) {
        for c in (0..w).step_by(spec.truth_stride) {
            let (x1, x3) = (c as f64 * p1, r as f64 * p3);
            truth.push(MisalignmentSample {
                x1_mm: x1,
                x3_mm: x3,
                phi_rad: true_misalignment(&field, x1, x3),
            });
        }
    }
    Ok(SyntheticScan {
        image,
        truth: MisalignmentSamples::new("ground-truth", truth)?,
    })
}

/// Distribution wrinkles are drawn from when generating synthetic data:
/// independent normal amplitudes and a normal correlation length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthPrior {
    pub amplitude_std: f64,
    pub lambda_mean: f64,
    pub lambda_std: f64,
}

impl Default for SynthPrior {
    fn default() -> Self {
        Self {
            amplitude_std: 3.0,
            lambda_mean: 12.9,
            lambda_std: 1.0,
        }
    }
}

impl SynthPrior {
    /// Draws until the wrinkle is admissible, at most `max_tries` times.
    /// The correlation length is snapped to the cache quantum so the
    /// returned parameters evaluate exactly on the cached basis.
    pub fn draw_admissible<R: Rng + ?Sized>(
        &self,
        cache: &BasisCache,
        decay: &DecaySpec,
        grid: &SectionGrid,
        rng: &mut R,
        max_tries: usize,
    ) -> Result<WrinkleParams> {
        let amp = Normal::new(0.0, self.amplitude_std).map_err(|e| Error::Parameter(e.to_string()))?;
        let lam = Normal::new(self.lambda_mean, self.lambda_std).map_err(|e| Error::Parameter(e.to_string()))?;
        for _ in 0..max_tries {
            let lambda = cache.quantize(lam.sample(rng));
            if lambda <= 0.0 {
                continue;
            }
            let a = (0..cache.n_modes()).map(|_| amp.sample(rng)).collect();
            let xi = WrinkleParams::new(a, lambda);
            let basis = cache.get(lambda)?;
            if WrinkleField::new(&xi, &basis, decay)?.is_admissible(grid) {
                return Ok(xi);
            }
        }
        Err(Error::Parameter(format!(
            "no admissible wrinkle in {max_tries} draws"
        )))
    }
}
