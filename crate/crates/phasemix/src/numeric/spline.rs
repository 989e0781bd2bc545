//! Cubic splines on arbitrary increasing knots.
//!
//! The tridiagonal factorization depends only on the knots, so one
//! `SplineKnots` serves every mode of an angle field.

use num_complex::Complex64;
use std::ops::{Add, Div, Mul, Sub};

pub trait SplineValue:
    Copy + Default + Add<Output = Self> + Sub<Output = Self> + Mul<f64, Output = Self> + Div<f64, Output = Self>
{
}
impl SplineValue for f64 {}
impl SplineValue for Complex64 {}

#[derive(Debug, Clone)]
pub struct SplineKnots {
    pub x: Vec<f64>,
    h: Vec<f64>,
    // Thomas factorization of the interior system
    diag: Vec<f64>,
    sub: Vec<f64>,
}

impl SplineKnots {
    pub fn new(x: Vec<f64>) -> Self {
        let n = x.len();
        assert!(n >= 2, "spline needs two knots");
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        debug_assert!(h.iter().all(|&d| d > 0.0), "knots must increase");
        let m = n.saturating_sub(2);
        let mut diag = vec![0.0; m];
        let mut sub = vec![0.0; m];
        for i in 0..m {
            let b = 2.0 * (h[i] + h[i + 1]);
            if i == 0 {
                diag[0] = b;
            } else {
                let l = h[i] / diag[i - 1];
                sub[i] = l;
                diag[i] = b - l * h[i];
            }
        }
        SplineKnots { x, h, diag, sub }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn width(&self, cell: usize) -> f64 {
        self.h[cell]
    }

    /// Second derivatives at the knots. The end values are taken from the
    /// cubic through the four outermost knots (natural ends when n < 4), so
    /// the end slopes stay third-order accurate.
    pub fn second_derivatives<V: SplineValue>(&self, y: &[V]) -> Vec<V> {
        let n = self.x.len();
        assert_eq!(y.len(), n);
        let mut m2 = vec![V::default(); n];
        let m = n.saturating_sub(2);
        if m == 0 {
            return m2;
        }
        if n >= 4 {
            let x = &self.x;
            m2[0] = end_curvature([x[0], x[1], x[2], x[3]], [y[0], y[1], y[2], y[3]]);
            m2[n - 1] =
                end_curvature([x[n - 1], x[n - 2], x[n - 3], x[n - 4]], [y[n - 1], y[n - 2], y[n - 3], y[n - 4]]);
        }
        let mut rhs = vec![V::default(); m];
        for i in 0..m {
            let s1 = (y[i + 2] - y[i + 1]) / self.h[i + 1];
            let s0 = (y[i + 1] - y[i]) / self.h[i];
            rhs[i] = (s1 - s0) * 6.0;
        }
        rhs[0] = rhs[0] - m2[0] * self.h[0];
        rhs[m - 1] = rhs[m - 1] - m2[n - 1] * self.h[m];
        for i in 1..m {
            rhs[i] = rhs[i] - rhs[i - 1] * self.sub[i];
        }
        rhs[m - 1] = rhs[m - 1] / self.diag[m - 1];
        for i in (0..m - 1).rev() {
            rhs[i] = (rhs[i] - rhs[i + 1] * self.h[i + 1]) / self.diag[i];
        }
        m2[1..=m].copy_from_slice(&rhs);
        m2
    }

    pub fn cell(&self, x: f64) -> usize {
        let n = self.x.len();
        let j = self.x.partition_point(|&k| k <= x);
        j.clamp(1, n - 1) - 1
    }

    /// Local cubic coefficients (a, b, c, d) of cell j in powers of x - x_j.
    pub fn coefficients<V: SplineValue>(&self, y: &[V], m2: &[V], j: usize) -> [V; 4] {
        let h = self.h[j];
        let b = (y[j + 1] - y[j]) / h - (m2[j] * 2.0 + m2[j + 1]) * (h / 6.0);
        let c = m2[j] * 0.5;
        let d = (m2[j + 1] - m2[j]) / (6.0 * h);
        [y[j], b, c, d]
    }

    pub fn eval<V: SplineValue>(&self, y: &[V], m2: &[V], x: f64) -> V {
        let j = self.cell(x);
        let [a, b, c, d] = self.coefficients(y, m2, j);
        let t = x - self.x[j];
        a + (b + (c + d * t) * t) * t
    }

    /// Value and first derivative.
    pub fn eval_d<V: SplineValue>(&self, y: &[V], m2: &[V], x: f64) -> (V, V) {
        let j = self.cell(x);
        let [a, b, c, d] = self.coefficients(y, m2, j);
        let t = x - self.x[j];
        (a + (b + (c + d * t) * t) * t, b + (c * 2.0 + d * (3.0 * t)) * t)
    }
}

/// Second derivative at x[0] of the cubic interpolating four points.
fn end_curvature<V: SplineValue>(x: [f64; 4], y: [V; 4]) -> V {
    let d01 = (y[1] - y[0]) / (x[1] - x[0]);
    let d12 = (y[2] - y[1]) / (x[2] - x[1]);
    let d23 = (y[3] - y[2]) / (x[3] - x[2]);
    let d012 = (d12 - d01) / (x[2] - x[0]);
    let d123 = (d23 - d12) / (x[3] - x[1]);
    let d0123 = (d123 - d012) / (x[3] - x[0]);
    d012 * 2.0 + d0123 * (2.0 * (2.0 * x[0] - x[1] - x[2]))
}

/// A single spline owning its data.
#[derive(Debug, Clone)]
pub struct Spline<V: SplineValue> {
    pub knots: SplineKnots,
    pub y: Vec<V>,
    pub m2: Vec<V>,
}

impl<V: SplineValue> Spline<V> {
    pub fn new(x: Vec<f64>, y: Vec<V>) -> Self {
        let knots = SplineKnots::new(x);
        let m2 = knots.second_derivatives(&y);
        Spline { knots, y, m2 }
    }

    pub fn eval(&self, x: f64) -> V {
        self.knots.eval(&self.y, &self.m2, x)
    }

    pub fn eval_d(&self, x: f64) -> (V, V) {
        self.knots.eval_d(&self.y, &self.m2, x)
    }
}
