use std::io::{Read, Write};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::spline;
use crate::error::{ensure, Error, Result};

/// Squared-exponential covariance `sigma_f^2 exp(-(x - y)^2 / lambda^2)` on
/// the interval `[0, length]`, discretised with `grid_n` quadrature nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSpec {
    pub sigma_f: f64,
    pub lambda: f64,
    pub length: f64,
    pub grid_n: usize,
}

impl CovarianceSpec {
    pub fn new(sigma_f: f64, lambda: f64, length: f64, grid_n: usize) -> Result<Self> {
        let spec = Self {
            sigma_f,
            lambda,
            length,
            grid_n,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.sigma_f.is_finite() && self.sigma_f > 0.0,
            Parameter,
            "sigma_f must be positive, got {}",
            self.sigma_f
        );
        ensure!(
            self.lambda.is_finite() && self.lambda > 0.0,
            Parameter,
            "correlation length must be positive, got {}",
            self.lambda
        );
        ensure!(
            self.length.is_finite() && self.length > 0.0,
            Parameter,
            "domain length must be positive, got {}",
            self.length
        );
        ensure!(self.grid_n >= 4, Parameter, "grid needs at least 4 nodes");
        Ok(())
    }

    /// Same covariance with a different correlation length.
    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self { lambda, ..*self }
    }

    pub fn kernel(&self, x: f64, y: f64) -> f64 {
        let d = (x - y) / self.lambda;
        self.sigma_f * self.sigma_f * (-d * d).exp()
    }

    pub fn spacing(&self) -> f64 {
        self.length / (self.grid_n - 1) as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        let h = self.spacing();
        (0..self.grid_n).map(|j| j as f64 * h).collect()
    }

    /// Composite Simpson weights on the uniform grid. An even node count
    /// closes the last three intervals with the 3/8 rule.
    pub fn weights(&self) -> Vec<f64> {
        simpson_weights(self.grid_n, self.spacing())
    }

    /// Symmetrised Nyström matrix `W^1/2 K W^1/2`.
    pub fn nystrom_matrix(&self) -> DMatrix<f64> {
        let x = self.nodes();
        let sqrt_w: Vec<f64> = self.weights().iter().map(|w| w.sqrt()).collect();
        let n = self.grid_n;
        DMatrix::from_fn(n, n, |i, j| sqrt_w[i] * self.kernel(x[i], x[j]) * sqrt_w[j])
    }
}

pub(crate) fn simpson_weights(n: usize, h: f64) -> Vec<f64> {
    let mut w = vec![0.0; n];
    let simpson_panels = |w: &mut [f64], intervals: usize| {
        for i in (0..intervals).step_by(2) {
            w[i] += h / 3.0;
            w[i + 1] += 4.0 * h / 3.0;
            w[i + 2] += h / 3.0;
        }
    };
    if n % 2 == 1 {
        simpson_panels(&mut w, n - 1);
    } else {
        let m = n - 4;
        simpson_panels(&mut w, m);
        for (k, c) in [3.0, 9.0, 9.0, 3.0].into_iter().enumerate() {
            w[m + k] += c * h / 8.0;
        }
    }
    w
}

/// Leading Karhunen-Loève eigenpairs of a [`CovarianceSpec`].
///
/// Raw modes are orthonormal under the quadrature inner product. The scaled
/// modes used for wrinkle synthesis are the raw modes times the square root
/// of their eigenvalue, so unit amplitudes reproduce the field variance.
#[derive(Debug, Clone)]
pub struct KlBasis {
    cov: CovarianceSpec,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    eigenvalues: Vec<f64>,
    raw: Vec<Vec<f64>>,
    scaled: Vec<Vec<f64>>,
    scaled_second: Vec<Vec<f64>>,
    lambda_tolerance: f64,
}

/// Eigenvalues below this multiple of the leading one are indistinguishable
/// from rounding in a double precision dense solve and are clamped to zero.
fn noise_floor(n: usize) -> f64 {
    n as f64 * f64::EPSILON
}

/// Builds the `n_modes` leading eigenpairs of the covariance operator by
/// Nyström quadrature and a dense symmetric eigensolve.
pub fn build_kl_basis(cov: &CovarianceSpec, n_modes: usize) -> Result<KlBasis> {
    cov.validate()?;
    ensure!(n_modes >= 1, Parameter, "need at least one mode");
    ensure!(
        2 * n_modes <= cov.grid_n,
        Parameter,
        "{} modes need a grid of at least {} nodes, got {}",
        n_modes,
        2 * n_modes,
        cov.grid_n
    );

    let eig = SymmetricEigen::try_new(cov.nystrom_matrix(), f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("symmetric eigensolver did not converge".into()))?;

    let mut order: Vec<usize> = (0..cov.grid_n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let weights = cov.weights();
    let nodes = cov.nodes();
    let leading = eig.eigenvalues[order[0]];
    ensure!(
        leading > 0.0,
        Numerical,
        "covariance operator has no positive eigenvalue"
    );
    let floor = noise_floor(cov.grid_n) * leading;

    let mut eigenvalues = Vec::with_capacity(n_modes);
    let mut raw = Vec::with_capacity(n_modes);
    for (k, &col) in order.iter().take(n_modes).enumerate() {
        let value = eig.eigenvalues[col];
        ensure!(
            value > -1e-8 * leading,
            Numerical,
            "eigenvalue {k} is {value:e}, the discretised kernel is not positive semidefinite"
        );
        eigenvalues.push(if value < floor { 0.0 } else { value });

        let v = eig.eigenvectors.column(col);
        let mut mode: Vec<f64> = v
            .iter()
            .zip(&weights)
            .map(|(g, w)| g / w.sqrt())
            .collect();
        orient(&mut mode, &nodes, &weights, k, cov.length);
        raw.push(mode);
    }

    Ok(KlBasis::assemble(cov, nodes, weights, eigenvalues, raw))
}

/// Fixes the sign of mode `k` so it correlates positively with the cosine
/// that has the same number of nodal lines. Keeps amplitudes comparable
/// across bases built at different correlation lengths.
fn orient(mode: &mut [f64], nodes: &[f64], weights: &[f64], k: usize, length: f64) {
    let freq = k as f64 * std::f64::consts::PI / length;
    let overlap: f64 = mode
        .iter()
        .zip(nodes)
        .zip(weights)
        .map(|((f, x), w)| w * f * (freq * x).cos())
        .sum();
    if overlap < 0.0 {
        mode.iter_mut().for_each(|f| *f = -*f);
    }
}

impl KlBasis {
    fn assemble(
        cov: &CovarianceSpec,
        nodes: Vec<f64>,
        weights: Vec<f64>,
        eigenvalues: Vec<f64>,
        raw: Vec<Vec<f64>>,
    ) -> Self {
        let h = cov.spacing();
        let scaled: Vec<Vec<f64>> = raw
            .iter()
            .zip(&eigenvalues)
            .map(|(mode, ev)| mode.iter().map(|f| f * ev.sqrt()).collect())
            .collect();
        let scaled_second = scaled
            .iter()
            .map(|m| spline::natural_second_derivatives(m, h))
            .collect();
        Self {
            cov: *cov,
            nodes,
            weights,
            eigenvalues,
            raw,
            scaled,
            scaled_second,
            lambda_tolerance: 0.0,
        }
    }

    pub fn covariance(&self) -> &CovarianceSpec {
        &self.cov
    }

    pub fn lambda(&self) -> f64 {
        self.cov.lambda
    }

    pub fn length(&self) -> f64 {
        self.cov.length
    }

    pub fn n_modes(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn spacing(&self) -> f64 {
        self.cov.spacing()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Orthonormal eigenfunction `i` on the grid.
    pub fn raw_mode(&self, i: usize) -> &[f64] {
        &self.raw[i]
    }

    /// Eigenfunction `i` scaled by the square root of its eigenvalue.
    pub fn mode(&self, i: usize) -> &[f64] {
        &self.scaled[i]
    }

    pub(crate) fn mode_second(&self, i: usize) -> &[f64] {
        &self.scaled_second[i]
    }

    /// How far a wrinkle's length scale may sit from [`lambda`](Self::lambda)
    /// and still be evaluated with this basis.
    pub fn lambda_tolerance(&self) -> f64 {
        self.lambda_tolerance
    }

    pub(crate) fn with_lambda_tolerance(mut self, tol: f64) -> Self {
        self.lambda_tolerance = tol;
        self
    }

    /// Quadrature Gram matrix of the raw modes.
    pub fn gram(&self) -> Vec<Vec<f64>> {
        let n = self.n_modes();
        let mut g = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i..n {
                let v: f64 = self.raw[i]
                    .iter()
                    .zip(&self.raw[j])
                    .zip(&self.weights)
                    .map(|((a, b), w)| w * a * b)
                    .sum();
                g[i][j] = v;
                g[j][i] = v;
            }
        }
        g
    }

    /// Largest entry of `|gram - I|`.
    pub fn orthonormality_defect(&self) -> f64 {
        self.gram()
            .iter()
            .enumerate()
            .flat_map(|(i, row)| {
                row.iter()
                    .enumerate()
                    .map(move |(j, v)| (v - if i == j { 1.0 } else { 0.0 }).abs())
            })
            .fold(0.0, f64::max)
    }

    /// Writes the basis as CSV. Header rows carry the covariance parameters
    /// and eigenvalues; one `node` row per grid point holds the raw modes.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
        let mut header = vec!["kind".to_string(), "x_mm".into(), "weight".into()];
        header.extend((1..=self.n_modes()).map(|i| format!("mode_{i}")));
        w.write_record(&header)?;
        w.write_record(["sigma_f".to_string(), self.cov.sigma_f.to_string()])?;
        w.write_record(["lambda_mm".to_string(), self.cov.lambda.to_string()])?;
        w.write_record(["length_mm".to_string(), self.cov.length.to_string()])?;
        let mut ev = vec!["eigenvalue".to_string(), String::new(), String::new()];
        ev.extend(self.eigenvalues.iter().map(f64::to_string));
        w.write_record(&ev)?;
        for j in 0..self.nodes.len() {
            let mut row = vec![
                "node".to_string(),
                self.nodes[j].to_string(),
                self.weights[j].to_string(),
            ];
            row.extend(self.raw.iter().map(|m| m[j].to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().flexible(true).from_reader(input);
        let n_modes = r.headers()?.len().saturating_sub(3);
        ensure!(n_modes >= 1, Data, "basis CSV has no mode columns");

        let parse = |s: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::Data(format!("bad number {s:?}: {e}")))
        };
        let (mut sigma_f, mut lambda, mut length) = (None, None, None);
        let mut eigenvalues = Vec::new();
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        let mut raw = vec![Vec::new(); n_modes];
        for rec in r.records() {
            let rec = rec?;
            match rec.get(0).unwrap_or_default() {
                "sigma_f" => sigma_f = Some(parse(&rec[1])?),
                "lambda_mm" => lambda = Some(parse(&rec[1])?),
                "length_mm" => length = Some(parse(&rec[1])?),
                "eigenvalue" => {
                    eigenvalues = (3..3 + n_modes)
                        .map(|k| parse(rec.get(k).unwrap_or_default()))
                        .collect::<Result<_>>()?
                }
                "node" => {
                    ensure!(rec.len() == 3 + n_modes, Data, "short node row");
                    nodes.push(parse(&rec[1])?);
                    weights.push(parse(&rec[2])?);
                    for (k, m) in raw.iter_mut().enumerate() {
                        m.push(parse(&rec[3 + k])?);
                    }
                }
                other => return Err(Error::Data(format!("unknown row kind {other:?}"))),
            }
        }
        let missing = |name: &str| Error::Data(format!("basis CSV lacks {name}"));
        let cov = CovarianceSpec::new(
            sigma_f.ok_or_else(|| missing("sigma_f"))?,
            lambda.ok_or_else(|| missing("lambda_mm"))?,
            length.ok_or_else(|| missing("length_mm"))?,
            nodes.len(),
        )?;
        ensure!(
            eigenvalues.len() == n_modes,
            Data,
            "basis CSV lacks eigenvalues"
        );
        Ok(Self::assemble(&cov, nodes, weights, eigenvalues, raw))
    }
}
