//! Karhunen-Loève wrinkle fields.
//!
//! A wrinkle is the out-of-plane displacement
//!
//! ```text
//! W(x1, x3) = g1(x1) g3(x3) sum_i a_i f_i(x1; lambda)
//! ```
//!
//! where the `f_i` are the leading eigenfunctions of a squared-exponential
//! covariance on the corner arc, each scaled by the square root of its
//! eigenvalue, and `g1`, `g3` are even-power exponential envelopes that pin
//! the wrinkle to the corner. The defect moves material along `x3` only,
//! `T(x) = x + W(x) e3`, so the deformation is admissible while
//! `1 + dW/dx3 > 0`.

mod basis;
mod cache;
mod decay;
pub mod spline;

pub use basis::{build_kl_basis, CovarianceSpec, KlBasis};
pub use cache::BasisCache;
pub use decay::DecaySpec;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Laminate cross-section and coupon dimensions, all in millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometrySpec {
    pub radius: f64,
    pub ply_count: u32,
    pub ply_thickness: f64,
    pub interply_thickness: f64,
    pub width: f64,
    pub limb_length: f64,
}

impl Default for GeometrySpec {
    /// 39-ply M21/IMA corner bend coupon.
    fn default() -> Self {
        Self {
            radius: 22.0,
            ply_count: 39,
            ply_thickness: 0.24,
            interply_thickness: 0.015,
            width: 52.0,
            limb_length: 10.0,
        }
    }
}

impl GeometrySpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            [
                self.radius,
                self.ply_thickness,
                self.interply_thickness,
                self.width,
                self.limb_length
            ]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0),
            Parameter,
            "geometry dimensions must be positive"
        );
        ensure!(self.ply_count > 0, Parameter, "ply count must be positive");
        Ok(())
    }

    /// Laminate thickness including resin interlayers.
    pub fn thickness(&self) -> f64 {
        let n = self.ply_count as f64;
        n * self.ply_thickness + (n - 1.0) * self.interply_thickness
    }

    /// Ply-to-ply repeat distance.
    pub fn ply_period(&self) -> f64 {
        self.ply_thickness + self.interply_thickness
    }

    /// Arc length of the 90 degree corner along the inner radius.
    pub fn arc_length(&self) -> f64 {
        self.radius * std::f64::consts::FRAC_PI_2
    }

    /// Envelopes centred on the middle of the arc and at `focus_depth`.
    pub fn decay(&self, focus_depth: f64, exponent: u32, floor: f64) -> Result<DecaySpec> {
        DecaySpec::new(
            [self.arc_length() / 2.0, focus_depth],
            [self.arc_length(), self.thickness()],
            exponent,
            floor,
        )
    }
}

/// Stochastic wrinkle coefficients: KL amplitudes plus the correlation
/// length the modes are built with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WrinkleParams {
    pub amplitudes: Vec<f64>,
    pub length_scale: f64,
}

impl WrinkleParams {
    pub fn new(amplitudes: Vec<f64>, length_scale: f64) -> Self {
        Self {
            amplitudes,
            length_scale,
        }
    }

    pub fn zeros(n_modes: usize, length_scale: f64) -> Self {
        Self::new(vec![0.0; n_modes], length_scale)
    }

    /// Flattened `[a_1, ..., a_N, lambda]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.amplitudes.clone();
        v.push(self.length_scale);
        v
    }

    pub fn from_slice(xi: &[f64]) -> Result<Self> {
        ensure!(xi.len() >= 2, Data, "coefficient vector too short");
        let (a, lambda) = xi.split_at(xi.len() - 1);
        Ok(Self::new(a.to_vec(), lambda[0]))
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len() + 1
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self::new(
            self.amplitudes.iter().map(|a| a * c).collect(),
            self.length_scale,
        )
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.amplitudes.iter().all(|a| a.is_finite()),
            Parameter,
            "amplitudes must be finite"
        );
        ensure!(
            self.length_scale.is_finite() && self.length_scale > 0.0,
            Parameter,
            "length scale must be positive, got {}",
            self.length_scale
        );
        Ok(())
    }
}

/// A point in the `x1`-`x3` section, millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x1: f64,
    pub x3: f64,
}

impl Point {
    pub fn new(x1: f64, x3: f64) -> Self {
        Self { x1, x3 }
    }
}

/// In-plane direction along which misalignment is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X1,
    X2,
}

impl TryFrom<u8> for Axis {
    type Error = Error;

    fn try_from(value: u8) -> Result<Self> {
        match value {
            1 => Ok(Axis::X1),
            2 => Ok(Axis::X2),
            other => Err(Error::Parameter(format!(
                "misalignment axis must be 1 or 2, got {other}"
            ))),
        }
    }
}

/// A wrinkle realised on a particular basis.
///
/// Construction combines the mode values once; evaluations then cost a
/// single spline lookup regardless of the number of modes.
#[derive(Debug, Clone)]
pub struct WrinkleField<'a> {
    basis: &'a KlBasis,
    decay: &'a DecaySpec,
    values: Vec<f64>,
    second: Vec<f64>,
}

impl<'a> WrinkleField<'a> {
    pub fn new(xi: &WrinkleParams, basis: &'a KlBasis, decay: &'a DecaySpec) -> Result<Self> {
        xi.validate()?;
        ensure!(
            xi.amplitudes.len() == basis.n_modes(),
            Parameter,
            "{} amplitudes for a basis of {} modes",
            xi.amplitudes.len(),
            basis.n_modes()
        );
        let tol = basis.lambda_tolerance().max(1e-12 * basis.lambda());
        ensure!(
            (xi.length_scale - basis.lambda()).abs() <= tol,
            Parameter,
            "basis built for lambda = {} cannot evaluate lambda = {}",
            basis.lambda(),
            xi.length_scale
        );
        let n = basis.nodes().len();
        let mut values = vec![0.0; n];
        let mut second = vec![0.0; n];
        for (i, &a) in xi.amplitudes.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (v, f) in values.iter_mut().zip(basis.mode(i)) {
                *v += a * f;
            }
            for (s, m) in second.iter_mut().zip(basis.mode_second(i)) {
                *s += a * m;
            }
        }
        Ok(Self {
            basis,
            decay,
            values,
            second,
        })
    }

    pub fn decay(&self) -> &DecaySpec {
        self.decay
    }

    pub fn basis(&self) -> &KlBasis {
        self.basis
    }

    pub fn check_domain(&self, p: Point) -> Result<()> {
        let [l, t] = self.decay.extent;
        let l = l.min(self.basis.length());
        ensure!(
            (0.0..=l).contains(&p.x1) && (0.0..=t).contains(&p.x3),
            Domain,
            "({}, {}) lies outside [0, {l}] x [0, {t}]",
            p.x1,
            p.x3
        );
        Ok(())
    }

    /// Mode sum and its `x1` derivative, before the envelopes.
    #[inline]
    pub fn profile(&self, x1: f64) -> (f64, f64) {
        spline::eval(&self.values, &self.second, self.basis.spacing(), x1)
    }

    /// `g1(x1) S(x1)` and its derivative.
    #[inline]
    pub fn arc_factor(&self, x1: f64) -> (f64, f64) {
        let (s, ds) = self.profile(x1);
        let g = self.decay.value(0, x1);
        let dg = self.decay.derivative(0, x1);
        (g * s, dg * s + g * ds)
    }

    /// Displacement without the domain check. Points outside the section
    /// use the end interval polynomials of the spline.
    #[inline]
    pub fn displacement_unchecked(&self, p: Point) -> f64 {
        self.arc_factor(p.x1).0 * self.decay.value(1, p.x3)
    }

    #[inline]
    pub fn slope_x1_unchecked(&self, p: Point) -> f64 {
        self.arc_factor(p.x1).1 * self.decay.value(1, p.x3)
    }

    #[inline]
    pub fn slope_x3_unchecked(&self, p: Point) -> f64 {
        self.arc_factor(p.x1).0 * self.decay.derivative(1, p.x3)
    }

    pub fn displacement(&self, p: Point) -> Result<f64> {
        self.check_domain(p)?;
        Ok(self.displacement_unchecked(p))
    }

    pub fn slope_x1(&self, p: Point) -> Result<f64> {
        self.check_domain(p)?;
        Ok(self.slope_x1_unchecked(p))
    }

    pub fn slope_x3(&self, p: Point) -> Result<f64> {
        self.check_domain(p)?;
        Ok(self.slope_x3_unchecked(p))
    }

    /// Ply misalignment angle in radians. Wrinkles are prismatic along
    /// `x2`, so that direction is always aligned.
    pub fn misalignment(&self, p: Point, axis: Axis) -> Result<f64> {
        match axis {
            Axis::X1 => Ok(self.slope_x1(p)?.atan()),
            Axis::X2 => {
                self.check_domain(p)?;
                Ok(0.0)
            }
        }
    }

    /// Smallest `1 + dW/dx3` over a tensor grid.
    ///
    /// The derivative factorises as `u(x1) v(x3)`, so the minimum over the
    /// grid is attained at extreme values of each factor.
    pub fn min_jacobian(&self, grid: &SectionGrid) -> f64 {
        let (umin, umax) = min_max(grid.x1.iter().map(|&x| self.arc_factor(x).0));
        let (vmin, vmax) = min_max(grid.x3.iter().map(|&x| self.decay.derivative(1, x)));
        let m = (umin * vmin).min(umin * vmax).min(umax * vmin).min(umax * vmax);
        1.0 + m
    }

    pub fn is_admissible(&self, grid: &SectionGrid) -> bool {
        let j = self.min_jacobian(grid);
        j.is_finite() && j > 0.0
    }

    /// Largest `|dW/dx1|` over a tensor grid, also factorised.
    pub fn max_abs_slope(&self, grid: &SectionGrid) -> f64 {
        let u = grid
            .x1
            .iter()
            .map(|&x| self.arc_factor(x).1.abs())
            .fold(0.0, f64::max);
        let v = grid
            .x3
            .iter()
            .map(|&x| self.decay.value(1, x).abs())
            .fold(0.0, f64::max);
        u * v
    }
}

fn min_max(it: impl Iterator<Item = f64>) -> (f64, f64) {
    it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    })
}

/// Tensor grid over the section used for admissibility and slope checks.
#[derive(Debug, Clone, PartialEq)]
pub struct SectionGrid {
    pub x1: Vec<f64>,
    pub x3: Vec<f64>,
}

impl SectionGrid {
    pub fn uniform(length: f64, n1: usize, thickness: f64, n3: usize) -> Self {
        let lin = |len: f64, n: usize| -> Vec<f64> {
            (0..n).map(|i| len * i as f64 / (n - 1) as f64).collect()
        };
        Self {
            x1: lin(length, n1.max(2)),
            x3: lin(thickness, n3.max(2)),
        }
    }

    /// 512 points along the arc and four per ply thickness through the
    /// laminate.
    pub fn for_geometry(geom: &GeometrySpec) -> Self {
        Self::with_density(geom, 512, 4)
    }

    pub fn with_density(geom: &GeometrySpec, along_arc: usize, per_ply: usize) -> Self {
        let spacing = geom.ply_thickness / per_ply as f64;
        let n3 = (geom.thickness() / spacing).ceil() as usize + 1;
        Self::uniform(geom.arc_length(), along_arc, geom.thickness(), n3)
    }

    /// Every grid point, row by row.
    pub fn points(&self) -> impl Iterator<Item = Point> + '_ {
        self.x3
            .iter()
            .flat_map(move |&x3| self.x1.iter().map(move |&x1| Point::new(x1, x3)))
    }
}

/// Out-of-plane displacement of the wrinkle `xi` at `x`.
pub fn eval_wrinkle(xi: &WrinkleParams, basis: &KlBasis, decay: &DecaySpec, x: Point) -> Result<f64> {
    WrinkleField::new(xi, basis, decay)?.displacement(x)
}

/// Misalignment angle `atan(dW/dx_axis)` at `x`, radians.
pub fn eval_misalignment(
    xi: &WrinkleParams,
    basis: &KlBasis,
    decay: &DecaySpec,
    x: Point,
    axis: u8,
) -> Result<f64> {
    let axis = Axis::try_from(axis)?;
    WrinkleField::new(xi, basis, decay)?.misalignment(x, axis)
}

/// Whether `T(x) = x + W(x) e3` is orientation preserving on every grid
/// point. Invalid inputs count as inadmissible.
pub fn jacobian_positive(
    xi: &WrinkleParams,
    basis: &KlBasis,
    decay: &DecaySpec,
    grid: &SectionGrid,
) -> bool {
    WrinkleField::new(xi, basis, decay)
        .map(|f| f.is_admissible(grid))
        .unwrap_or(false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Fixture {
        geom: GeometrySpec,
        basis: KlBasis,
        decay: DecaySpec,
    }

    fn fixture() -> Fixture {
        let geom = GeometrySpec::default();
        let cov = CovarianceSpec::new(0.1425, 12.9, geom.arc_length(), 256).unwrap();
        Fixture {
            basis: build_kl_basis(&cov, 30).unwrap(),
            decay: geom.decay(4.8, 4, 1e-6).unwrap(),
            geom,
        }
    }

    fn random_xi(rng: &mut ChaCha8Rng, scale: f64) -> WrinkleParams {
        WrinkleParams::new((0..30).map(|_| rng.random_range(-scale..scale)).collect(), 12.9)
    }

    #[test]
    fn geometry_defaults() {
        let g = GeometrySpec::default();
        assert!((g.thickness() - 9.93).abs() < 1e-12);
        assert!((g.arc_length() - 11.0 * std::f64::consts::PI).abs() < 1e-12);
    }

    #[test]
    fn zero_amplitudes_give_flat_field() {
        let f = fixture();
        let xi = WrinkleParams::zeros(30, 12.9);
        for p in [Point::new(1.0, 1.0), Point::new(17.0, 4.8), Point::new(30.0, 9.0)] {
            assert_eq!(eval_wrinkle(&xi, &f.basis, &f.decay, p).unwrap(), 0.0);
            assert_eq!(eval_misalignment(&xi, &f.basis, &f.decay, p, 1).unwrap(), 0.0);
        }
        let grid = SectionGrid::for_geometry(&f.geom);
        assert!(jacobian_positive(&xi, &f.basis, &f.decay, &grid));
    }

    #[test]
    fn single_mode_reproduced_at_nodes() {
        let f = fixture();
        let flat = DecaySpec::with_eta([1.0, 1.0], [1e12, 1e12], 2, 1e-6, f.decay.extent).unwrap();
        let mut xi = WrinkleParams::zeros(30, 12.9);
        xi.amplitudes[0] = 1.0;
        for (j, x) in f.basis.nodes().iter().enumerate() {
            let w = eval_wrinkle(&xi, &f.basis, &flat, Point::new(*x, 1.0)).unwrap();
            assert!((w - f.basis.mode(0)[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn corner_ends_are_pinned() {
        let f = fixture();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let xi = random_xi(&mut rng, 3.0);
            let field = WrinkleField::new(&xi, &f.basis, &f.decay).unwrap();
            let interior = (0..=400)
                .map(|k| {
                    let x1 = f.geom.arc_length() * k as f64 / 400.0;
                    field.displacement(Point::new(x1, 4.8)).unwrap().abs()
                })
                .fold(0.0, f64::max);
            for x1 in [0.0, f.geom.arc_length()] {
                let end = field.displacement(Point::new(x1, 4.8)).unwrap().abs();
                assert!(end <= 1e-6, "end height {end:e} mm");
                let (s, _) = field.profile(x1);
                assert!((end - 1e-6 * s.abs()).abs() <= 1e-15 * s.abs().max(1.0));
                assert!(end < 1e-5 * interior, "end {end:e}, interior {interior:e}");
            }
        }
    }

    #[test]
    fn misalignment_scales_linearly() {
        let f = fixture();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xi = random_xi(&mut rng, 2.0);
        let p = Point::new(15.3, 5.1);
        let t = eval_misalignment(&xi, &f.basis, &f.decay, p, 1).unwrap().tan();
        let t3 = eval_misalignment(&xi.scaled(3.0), &f.basis, &f.decay, p, 1)
            .unwrap()
            .tan();
        assert!((t3 - 3.0 * t).abs() <= 1e-12 * t.abs().max(1e-300));
    }

    #[test]
    fn misalignment_matches_finite_difference() {
        let f = fixture();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-4 * f.geom.arc_length();
        for _ in 0..200 {
            let xi = random_xi(&mut rng, 2.0);
            let field = WrinkleField::new(&xi, &f.basis, &f.decay).unwrap();
            let p = Point::new(
                rng.random_range(2.0 * h..f.geom.arc_length() - 2.0 * h),
                rng.random_range(0.0..f.geom.thickness()),
            );
            // Fourth-order centred stencil; the two-point quotient's O(h^2)
            // error dominates wherever the slope crosses zero.
            let w = |d: f64| field.displacement(Point::new(p.x1 + d, p.x3)).unwrap();
            let fd = (-w(2.0 * h) + 8.0 * w(h) - 8.0 * w(-h) + w(-2.0 * h)) / (12.0 * h);
            let t = field.misalignment(p, Axis::X1).unwrap().tan();
            assert!((t - fd).abs() <= 1e-4 * fd.abs(), "{t} vs {fd}");
        }
    }

    #[test]
    fn axis_two_is_aligned_and_bad_axis_rejected() {
        let f = fixture();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xi = random_xi(&mut rng, 2.0);
        let p = Point::new(10.0, 4.0);
        assert_eq!(eval_misalignment(&xi, &f.basis, &f.decay, p, 2).unwrap(), 0.0);
        assert!(matches!(
            eval_misalignment(&xi, &f.basis, &f.decay, p, 3),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn outside_section_is_domain_error() {
        let f = fixture();
        let xi = WrinkleParams::zeros(30, 12.9);
        for p in [Point::new(-0.1, 1.0), Point::new(40.0, 1.0), Point::new(5.0, 10.5)] {
            assert!(matches!(
                eval_wrinkle(&xi, &f.basis, &f.decay, p),
                Err(Error::Domain(_))
            ));
        }
    }

    #[test]
    fn basis_mismatch_is_rejected() {
        let f = fixture();
        let xi = WrinkleParams::zeros(30, 14.0);
        assert!(WrinkleField::new(&xi, &f.basis, &f.decay).is_err());
        assert!(!jacobian_positive(&xi, &f.basis, &f.decay, &SectionGrid::for_geometry(&f.geom)));
    }

    #[test]
    fn scaling_a_wrinkle_eventually_folds_it() {
        let f = fixture();
        let grid = SectionGrid::for_geometry(&f.geom);
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let xi = random_xi(&mut rng, 1.0);
        assert!(jacobian_positive(&xi, &f.basis, &f.decay, &grid));
        let field = WrinkleField::new(&xi, &f.basis, &f.decay).unwrap();
        // Scale until the grid minimum of dW/dx3 reaches -1.5.
        let min_slope = field.min_jacobian(&grid) - 1.0;
        assert!(min_slope < 0.0);
        let folded = xi.scaled(-1.5 / min_slope);
        let ff = WrinkleField::new(&folded, &f.basis, &f.decay).unwrap();
        assert!((ff.min_jacobian(&grid) + 0.5).abs() < 1e-9);
        assert!(!jacobian_positive(&folded, &f.basis, &f.decay, &grid));
    }

    #[test]
    fn factorised_jacobian_matches_pointwise_scan() {
        let f = fixture();
        let grid = SectionGrid::with_density(&f.geom, 64, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..10 {
            let field_xi = random_xi(&mut rng, 6.0);
            let field = WrinkleField::new(&field_xi, &f.basis, &f.decay).unwrap();
            let brute = grid
                .points()
                .map(|p| 1.0 + field.slope_x3_unchecked(p))
                .fold(f64::INFINITY, f64::min);
            assert!((brute - field.min_jacobian(&grid)).abs() < 1e-12);
            let brute_slope = grid
                .points()
                .map(|p| field.slope_x1_unchecked(p).abs())
                .fold(0.0, f64::max);
            assert!((brute_slope - field.max_abs_slope(&grid)).abs() < 1e-12);
        }
    }
}
