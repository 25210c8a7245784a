//! Natural cubic splines on a uniform grid.
//!
//! Splines are linear in the node values, so the spline of a weighted sum of
//! modes equals the weighted sum of the mode splines. [`KlBasis`] exploits this
//! by storing per-mode second derivatives and combining them once per
//! amplitude vector.
//!
//! [`KlBasis`]: super::KlBasis

/// Second derivatives of the natural cubic spline through `values` sampled
/// at spacing `h`.
pub fn natural_second_derivatives(values: &[f64], h: f64) -> Vec<f64> {
    let n = values.len();
    let mut m = vec![0.0; n];
    if n < 3 {
        return m;
    }
    // Thomas algorithm on the interior system
    //   m[i-1] + 4 m[i] + m[i+1] = 6 (y[i+1] - 2 y[i] + y[i-1]) / h^2
    let interior = n - 2;
    let mut c = vec![0.0; interior];
    let mut d = vec![0.0; interior];
    let scale = 6.0 / (h * h);
    for k in 0..interior {
        let i = k + 1;
        let rhs = scale * (values[i + 1] - 2.0 * values[i] + values[i - 1]);
        if k == 0 {
            c[k] = 1.0 / 4.0;
            d[k] = rhs / 4.0;
        } else {
            let denom = 4.0 - c[k - 1];
            c[k] = 1.0 / denom;
            d[k] = (rhs - d[k - 1]) / denom;
        }
    }
    m[interior] = d[interior - 1];
    for k in (0..interior - 1).rev() {
        m[k + 1] = d[k] - c[k] * m[k + 2];
    }
    m
}

/// Locates `x` on a uniform grid starting at zero and returns the interval
/// index together with the distances to both interval ends.
#[inline]
fn locate(x: f64, h: f64, n: usize) -> (usize, f64, f64) {
    let i = ((x / h).floor().max(0.0) as usize).min(n - 2);
    let left = x - i as f64 * h;
    let right = (i + 1) as f64 * h - x;
    (i, left, right)
}

/// Value and first derivative of the spline at `x`.
#[inline]
pub fn eval(values: &[f64], second: &[f64], h: f64, x: f64) -> (f64, f64) {
    let (i, a, b) = locate(x, h, values.len());
    let (m0, m1) = (second[i], second[i + 1]);
    let (y0, y1) = (values[i], values[i + 1]);
    let c0 = y0 / h - m0 * h / 6.0;
    let c1 = y1 / h - m1 * h / 6.0;
    let value = m0 * b * b * b / (6.0 * h) + m1 * a * a * a / (6.0 * h) + c0 * b + c1 * a;
    let slope = -m0 * b * b / (2.0 * h) + m1 * a * a / (2.0 * h) - c0 + c1;
    (value, slope)
}
