//! Fixed quadrature rules on the unit interval.

use gauss_quad::legendre::GaussLegendre;
use std::num::NonZeroUsize;

/// Gauss-Legendre nodes and weights mapped to [0, 1].
#[derive(Debug, Clone)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn gauss_legendre(n: usize) -> Self {
        let n = NonZeroUsize::new(n.max(1)).unwrap();
        let gl = GaussLegendre::new(n);
        let mut pairs: Vec<(f64, f64)> = gl
            .as_node_weight_pairs()
            .iter()
            .map(|&(x, w)| (0.5 * (x + 1.0), 0.5 * w))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        Rule {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1).collect(),
        }
    }

    /// Gauss-Legendre in u composed with r = sin^2(pi u / 2): returns nodes in
    /// [0,1] together with weights that already include the Jacobian.
    /// Integrands with x^(-1/2) behaviour at either end become smooth.
    pub fn sine_squared(n: usize) -> Self {
        let base = Self::gauss_legendre(n);
        let half_pi = std::f64::consts::FRAC_PI_2;
        let mut nodes = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for (&u, &w) in base.nodes.iter().zip(&base.weights) {
            let (s, c) = (half_pi * u).sin_cos();
            nodes.push(s * s);
            weights.push(w * 2.0 * half_pi * s * c);
        }
        Rule { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let h = b - a;
        let mut acc = 0.0;
        for (&x, &w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(a + h * x);
        }
        acc * h
    }
}

/// Double-exponential (tanh-sinh) rule on [0,1]; tolerant of algebraic
/// endpoint singularities. `level` controls the step h = 2^-level.
#[derive(Debug, Clone)]
pub struct TanhSinh {
    /// Distance of each node from the left end, and from the right end.
    pub left: Vec<f64>,
    pub right: Vec<f64>,
    pub weights: Vec<f64>,
}

impl TanhSinh {
    pub fn new(level: u32, tmax: f64) -> Self {
        let h = 0.5f64.powi(level as i32);
        let half_pi = std::f64::consts::FRAC_PI_2;
        let n = (tmax / h).ceil() as i64;
        let mut left = Vec::new();
        let mut right = Vec::new();
        let mut weights = Vec::new();
        for k in -n..=n {
            let t = k as f64 * h;
            let s = half_pi * t.sinh();
            let ch = s.cosh();
            // x = (1 + tanh s)/2; distances to ends written without cancellation
            let e = (-2.0 * s.abs()).exp();
            let small = e / (1.0 + e);
            let (l, r) = if s >= 0.0 { (1.0 - small, small) } else { (small, 1.0 - small) };
            let w = h * half_pi * t.cosh() / (2.0 * ch * ch);
            if l <= 0.0 || r <= 0.0 || w < 1e-300 {
                continue;
            }
            left.push(l);
            right.push(r);
            weights.push(w);
        }
        TanhSinh { left, right, weights }
    }

    /// Integrates f over [a,b]; f receives (x, x-a, b-x).
    pub fn integrate<F: FnMut(f64, f64, f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let len = b - a;
        let mut acc = 0.0;
        for i in 0..self.weights.len() {
            let dl = len * self.left[i];
            let dr = len * self.right[i];
            let x = if self.left[i] < 0.5 { a + dl } else { b - dr };
            acc += self.weights[i] * f(x, dl, dr);
        }
        acc * len
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_is_exact_for_polynomials() {
        let r = Rule::gauss_legendre(8);
        let v = r.integrate(0.0, 2.0, |x| x.powi(15));
        assert!((v - 2f64.powi(16) / 16.0).abs() < 1e-10);
    }

    #[test]
    fn sine_squared_absorbs_inverse_square_roots() {
        let r = Rule::sine_squared(32);
        let v = r.integrate(0.0, 1.0, |x| 1.0 / (x * (1.0 - x)).sqrt());
        assert!((v - std::f64::consts::PI).abs() < 1e-12);
    }

    #[test]
    fn tanh_sinh_handles_endpoint_singularity() {
        let r = TanhSinh::new(6, 4.5);
        let v = r.integrate(0.0, 1.0, |_, dl, _| dl.powf(-0.75));
        assert!((v - 4.0).abs() < 1e-8, "{v}");
        let v = r.integrate(1.0, 3.0, |_, _, dr| dr.ln());
        assert!((v - (2f64.ln() * 2.0 - 2.0)).abs() < 1e-12, "{v}");
    }
}
