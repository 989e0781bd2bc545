//! Exact integration of e^{i nu q} against a cubic spline.
//!
//! On cells with |nu| h >= 1 the integral is written by parts; the value,
//! first and second derivative terms telescope between adjacent cells and
//! only the jumps of the (piecewise constant) third derivative remain. Narrow
//! cells use a power series of the exponential. Either way the result is
//! the exact integral of the spline, so the knots add no spurious slow tail:
//! the spline is C^2 and its knot contributions fall off like nu^-4.
//!
//! Panel ends where the amplitude behaves like |q - q_end|^beta with
//! beta in (-1, 0) are excluded from the spline and integrated as a power
//! law over one tiny end cell.

use super::spline::SplineKnots;
use num_complex::Complex64;

const WIDE: f64 = 1.0;

#[derive(Debug, Clone, Copy)]
pub struct EndPiece {
    /// Position of the singular endpoint (outside the knot range).
    pub q_end: f64,
    /// Exponent of the local power law.
    pub beta: f64,
}

#[derive(Debug, Clone)]
pub struct OscPanel {
    pub knots: SplineKnots,
    pub left: Option<EndPiece>,
    pub right: Option<EndPiece>,
}

/// Spline data of one amplitude on a panel.
#[derive(Debug, Clone)]
pub struct OscAmplitude {
    y: Vec<Complex64>,
    d1: Vec<Complex64>,
    d2: Vec<Complex64>,
    d3: Vec<Complex64>,
    cubic: Vec<[Complex64; 4]>,
    pub max_abs: f64,
}

impl OscPanel {
    pub fn new(q: Vec<f64>, left: Option<EndPiece>, right: Option<EndPiece>) -> Self {
        OscPanel { knots: SplineKnots::new(q), left, right }
    }

    pub fn q(&self) -> &[f64] {
        &self.knots.x
    }

    pub fn amplitude(&self, y: Vec<Complex64>) -> OscAmplitude {
        let k = &self.knots;
        let n = k.len();
        let m2 = k.second_derivatives(&y);
        let mut cubic = Vec::with_capacity(n - 1);
        let mut d1 = vec![Complex64::default(); n];
        let mut d3 = Vec::with_capacity(n - 1);
        for j in 0..n - 1 {
            let c = k.coefficients(&y, &m2, j);
            d1[j] = c[1];
            d3.push(c[3] * 6.0);
            cubic.push(c);
        }
        let h = k.width(n - 2);
        let [_, b, c, d] = cubic[n - 2];
        d1[n - 1] = b + c * (2.0 * h) + d * (3.0 * h * h);
        let max_abs = y.iter().map(|v| v.norm()).fold(0.0, f64::max);
        OscAmplitude { y, d1, d2: m2, d3, cubic, max_abs }
    }

    /// Integral of e^{i nu q} A(q) over the panel. `z[j]` must hold
    /// e^{i nu q_j} for every knot.
    pub fn integrate(&self, a: &OscAmplitude, nu: f64, z: &[Complex64]) -> Complex64 {
        let k = &self.knots;
        let n = k.len();
        let anu = nu.abs();
        let mut acc = Complex64::default();
        if nu == 0.0 {
            for j in 0..n - 1 {
                let h = k.width(j);
                let [c0, c1, c2, c3] = a.cubic[j];
                acc += c0 * h + c1 * (h * h / 2.0) + c2 * (h * h * h / 3.0) + c3 * (h * h * h * h / 4.0);
            }
        } else {
            let inv = Complex64::new(0.0, -1.0 / nu);
            let inv2 = inv * inv;
            let inv3 = inv2 * inv;
            let inv4 = inv2 * inv2;
            let mut j = 0;
            while j < n - 1 {
                if anu * k.width(j) >= WIDE {
                    let start = j;
                    while j < n - 1 && anu * k.width(j) >= WIDE {
                        j += 1;
                    }
                    let end = j;
                    let f_end = a.y[end] * inv - a.d1[end] * inv2 + a.d2[end] * inv3 - a.d3[end - 1] * inv4;
                    let f_start =
                        a.y[start] * inv - a.d1[start] * inv2 + a.d2[start] * inv3 - a.d3[start] * inv4;
                    acc += z[end] * f_end - z[start] * f_start;
                    let mut jumps = Complex64::default();
                    for i in start + 1..end {
                        jumps += z[i] * (a.d3[i] - a.d3[i - 1]);
                    }
                    acc += jumps * inv4;
                } else {
                    acc += z[j] * cell_series(&a.cubic[j], nu, k.width(j));
                    j += 1;
                }
            }
        }
        if let Some(e) = self.left {
            let h = k.x[0] - e.q_end;
            // phase referenced to the first knot, y measured back toward the end
            let lin = Complex64::new(1.0 / (1.0 + e.beta), -nu * h / ((1.0 + e.beta) * (2.0 + e.beta)));
            acc += z[0] * a.y[0] * lin * h;
        }
        if let Some(e) = self.right {
            let h = e.q_end - k.x[n - 1];
            let lin = Complex64::new(1.0 / (1.0 + e.beta), nu * h / ((1.0 + e.beta) * (2.0 + e.beta)));
            acc += z[n - 1] * a.y[n - 1] * lin * h;
        }
        acc
    }
}

/// Integral of (c0 + c1 x + c2 x^2 + c3 x^3) e^{i nu x} over [0, h], |nu h| < 1.
fn cell_series(c: &[Complex64; 4], nu: f64, h: f64) -> Complex64 {
    let u = Complex64::new(0.0, nu * h);
    let au = (nu * h).abs();
    let mut term = Complex64::new(1.0, 0.0);
    let mut s = [Complex64::default(); 4];
    let mut nf = 0.0;
    loop {
        for (p, sp) in s.iter_mut().enumerate() {
            *sp += term / (nf + p as f64 + 1.0);
        }
        nf += 1.0;
        term = term * u / nf;
        if term.norm() < 1e-17 || au == 0.0 {
            break;
        }
    }
    let mut hp = h;
    let mut acc = Complex64::default();
    for p in 0..4 {
        acc += c[p] * s[p] * hp;
        hp *= h;
    }
    acc
}

/// e^{i nu q_j} for all knots.
pub fn phases(q: &[f64], nu: f64, out: &mut Vec<Complex64>) {
    out.clear();
    out.extend(q.iter().map(|&x| Complex64::from_polar(1.0, nu * x)));
}
