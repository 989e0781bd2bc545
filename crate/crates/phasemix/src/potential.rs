//! Effective potentials of polytropic shells around a point mass.
//!
//! Ψ_L(r) = −M/r + U0(r) + L/(2r²). With ε > 0 the induced potential U0 is
//! the fixed point of the radial Poisson problem driven by the closed-form
//! density moment of the ansatz ε(E0−E)₊^k(L−L0)₊^ℓ (or ε(E0−E)₊^k at fixed
//! L̄ in the 1+1 model).

use crate::error::{Error, Result};
use crate::numeric::quad::Rule;
use crate::numeric::roots::{bisect, newton_bisect};
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta;
use std::f64::consts::PI;

pub const STEADY_FORMAT: &str = "phasemix.steady";
pub const STEADY_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Mode {
    /// Restricted 1+1 model: every particle carries the same L̄.
    OneDim { lbar: f64 },
    /// Full radial model with an outer integral over L ∈ [L0, Lmax].
    Radial,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolytropeParams {
    pub k: f64,
    pub ell: f64,
    pub e0: f64,
    pub l0: f64,
    pub mass: f64,
    pub eps: f64,
    pub mode: Mode,
}

impl PolytropeParams {
    pub fn one_dim(k: f64, e0: f64, lbar: f64, mass: f64, eps: f64) -> Result<Self> {
        let p = PolytropeParams { k, ell: 0.0, e0, l0: lbar, mass, eps, mode: Mode::OneDim { lbar } };
        p.validate()?;
        Ok(p)
    }

    pub fn radial(k: f64, ell: f64, e0: f64, l0: f64, mass: f64, eps: f64) -> Result<Self> {
        let p = PolytropeParams { k, ell, e0, l0, mass, eps, mode: Mode::Radial };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParams(m));
        let finite = [self.k, self.ell, self.e0, self.l0, self.mass, self.eps].iter().all(|v| v.is_finite());
        if !finite {
            return bad("all parameters must be finite".into());
        }
        match self.mode {
            Mode::OneDim { lbar } => {
                if self.k <= 0.5 {
                    return bad(format!("k = {} violates k > 1/2 required in the 1+1 model", self.k));
                }
                if !(lbar > 0.0) {
                    return bad(format!("Lbar = {lbar} must be positive"));
                }
            }
            Mode::Radial => {
                if self.k <= 0.0 {
                    return bad(format!("k = {} violates k > 0 required in the radial model", self.k));
                }
                if self.ell <= -0.5 {
                    return bad(format!("ell = {} violates ell > -1/2", self.ell));
                }
                if !(self.l0 > 0.0) {
                    return bad(format!("L0 = {} must be positive for a shell", self.l0));
                }
            }
        }
        if self.e0 >= 0.0 {
            return bad(format!("E0 = {} must be negative", self.e0));
        }
        if self.mass < 0.0 || self.eps < 0.0 {
            return bad("M and eps must be non-negative".into());
        }
        if self.eps == 0.0 && self.mass <= 0.0 {
            return bad("eps = 0 needs a point mass M > 0".into());
        }
        Ok(())
    }

    /// The angular momentum whose effective potential bounds the support.
    pub fn l_support(&self) -> f64 {
        match self.mode {
            Mode::OneDim { lbar } => lbar,
            Mode::Radial => self.l0,
        }
    }

    pub fn is_radial(&self) -> bool {
        matches!(self.mode, Mode::Radial)
    }

    /// ρ(r) = c · r^{−2} · A^{k+1/2} (1+1 model) or c · r^{2ℓ} · A^{k+ℓ+3/2}
    /// (radial), with A = E0 − Ψ_{L_s}(r). Returns c.
    pub fn density_constant(&self) -> f64 {
        let k = self.k;
        match self.mode {
            Mode::OneDim { .. } => PI * self.eps * 2f64.sqrt() * beta(0.5, k + 1.0),
            Mode::Radial => {
                let l = self.ell;
                PI * self.eps * 2f64.powf(l + 1.0) * 2f64.sqrt() * beta(k + 1.0, l + 1.0) * beta(0.5, k + l + 2.0)
            }
        }
    }

    pub fn density_exponent(&self) -> f64 {
        match self.mode {
            Mode::OneDim { .. } => self.k + 0.5,
            Mode::Radial => self.k + self.ell + 1.5,
        }
    }

    /// Closed-form density at radius r given the gap A = E0 − Ψ_{L_s}(r).
    pub fn density_from_gap(&self, r: f64, gap: f64) -> f64 {
        if gap <= 0.0 || self.eps == 0.0 {
            return 0.0;
        }
        let shape = match self.mode {
            Mode::OneDim { .. } => 1.0 / (r * r),
            Mode::Radial => r.powf(2.0 * self.ell),
        };
        self.density_constant() * shape * gap.powf(self.density_exponent())
    }

    /// |φ'(E)| without the L factor: k·ε·(E0−E)^{k−1}. With ε = 0 the
    /// amplitude ε is replaced by 1 so that test data stays non-trivial.
    pub fn energy_weight(&self, e: f64) -> f64 {
        let gap = self.e0 - e;
        if gap <= 0.0 {
            return 0.0;
        }
        self.amplitude() * self.k * gap.powf(self.k - 1.0)
    }

    /// ε, or 1 for the pure point-mass potential.
    pub fn amplitude(&self) -> f64 {
        if self.eps > 0.0 {
            self.eps
        } else {
            1.0
        }
    }

    /// (L − L0)₊^ℓ in the radial model, 1 otherwise.
    pub fn l_weight(&self, l: f64) -> f64 {
        match self.mode {
            Mode::OneDim { .. } => 1.0,
            Mode::Radial => {
                let d = l - self.l0;
                if d <= 0.0 {
                    if self.ell == 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    d.powf(self.ell)
                }
            }
        }
    }
}

/// Stationary point of Ψ_L.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EllipticPoint {
    pub l: f64,
    pub r_l: f64,
    pub e_min: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct SteadyOptions {
    pub tau: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub n_grid: usize,
}

impl Default for SteadyOptions {
    fn default() -> Self {
        SteadyOptions { tau: 0.5, tol: 1e-10, max_iter: 200, n_grid: 2048 }
    }
}

/// Induced potential sampled with its first two derivatives; evaluated by
/// quintic Hermite interpolation, which is C² with an exact third derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadyState {
    pub params: PolytropeParams,
    pub rgrid: Vec<f64>,
    pub u0: Vec<f64>,
    pub du0: Vec<f64>,
    pub d2u0: Vec<f64>,
    pub rmin: f64,
    pub rmax: f64,
    /// 4π∫ρ r² dr; the exterior potential is −total_mass/r.
    pub total_mass: f64,
    pub iterations: usize,
    pub residual: f64,
    pub interp_order: u32,
    pub l_max: f64,
}

#[derive(Serialize, Deserialize)]
struct SteadyDoc {
    format: String,
    version: u32,
    params: PolytropeParams,
    rgrid: Vec<f64>,
    #[serde(rename = "U0")]
    u0: Vec<f64>,
    #[serde(rename = "dU0")]
    du0: Vec<f64>,
    #[serde(rename = "d2U0")]
    d2u0: Vec<f64>,
    #[serde(rename = "Rmin")]
    rmin: f64,
    #[serde(rename = "Rmax")]
    rmax: f64,
    total_mass: f64,
    iterations: usize,
    residual: f64,
    interp_order: u32,
}

/// Potential, field and curvature of a Poisson solve on a grid.
#[derive(Debug, Clone)]
pub struct PoissonSolution {
    pub u: Vec<f64>,
    pub du: Vec<f64>,
    pub d2u: Vec<f64>,
    pub total_mass: f64,
}

/// Radial Poisson solve (∂_rr + 2/r ∂_r)U = 4πρ with U → 0 at infinity.
///
/// The density is given as a function, zero beyond the last grid radius
/// and smooth between the grid nodes and the listed `breaks`; cumulative
/// integrals use 8-point Gauss-Legendre per (split) cell, starting at r = 0.
pub fn solve_poisson_radial<F: Fn(f64) -> f64>(rgrid: &[f64], rho: F, breaks: &[f64]) -> Result<PoissonSolution> {
    let n = rgrid.len();
    let rule = Rule::gauss_legendre(8);
    let occupied = rgrid.windows(2).filter(|w| rho(0.5 * (w[0] + w[1])) > 0.0).count();
    if occupied > 0 && occupied < 8 {
        return Err(Error::GridTooCoarse { cells: occupied });
    }
    let mut pieces = Vec::new();
    let mut cell = |a: f64, b: f64| -> (f64, f64) {
        pieces.clear();
        pieces.push(a);
        pieces.extend(breaks.iter().copied().filter(|&x| x > a && x < b));
        pieces.push(b);
        let mut m = 0.0;
        let mut q = 0.0;
        for w in pieces.windows(2) {
            m += rule.integrate(w[0], w[1], |s| rho(s) * s * s);
            q += rule.integrate(w[0], w[1], |s| rho(s) * s);
        }
        (m, q)
    };
    // m[i] = ∫_0^{r_i} ρ s² ds, q[i] = ∫_{r_i}^∞ ρ s ds
    let mut m = vec![0.0; n];
    let mut dq = vec![0.0; n];
    let (m0, q0) = cell(0.0, rgrid[0]);
    m[0] = m0;
    let _ = q0;
    for i in 1..n {
        let (dm, dqi) = cell(rgrid[i - 1], rgrid[i]);
        m[i] = m[i - 1] + dm;
        dq[i] = dqi;
    }
    let mut q = vec![0.0; n];
    for i in (0..n - 1).rev() {
        q[i] = q[i + 1] + dq[i + 1];
    }
    let four_pi = 4.0 * PI;
    let mut u = vec![0.0; n];
    let mut du = vec![0.0; n];
    let mut d2u = vec![0.0; n];
    for i in 0..n {
        let r = rgrid[i];
        u[i] = -four_pi * m[i] / r - four_pi * q[i];
        du[i] = four_pi * m[i] / (r * r);
        d2u[i] = four_pi * rho(r) - 2.0 * du[i] / r;
    }
    Ok(PoissonSolution { u, du, d2u, total_mass: four_pi * m[n - 1] })
}

fn quintic_coeffs(h: f64, f0: [f64; 3], f1: [f64; 3]) -> [f64; 6] {
    let c0 = f0[0];
    let c1 = h * f0[1];
    let c2 = 0.5 * h * h * f0[2];
    let p = f1[0] - c0 - c1 - c2;
    let q = h * f1[1] - c1 - 2.0 * c2;
    let s = h * h * f1[2] - 2.0 * c2;
    [c0, c1, c2, 10.0 * p - 4.0 * q + 0.5 * s, -15.0 * p + 7.0 * q - s, 6.0 * p - 3.0 * q + 0.5 * s]
}

fn build_grid(rmin: f64, rmax: f64, n: usize) -> Vec<f64> {
    let (a, b) = (0.25 * rmin, 4.0 * rmax);
    let n_in = n / 8 * 5;
    let n_lo = (n - n_in) * 3 / 5;
    let n_hi = n - n_in - n_lo;
    let mut g = Vec::with_capacity(n);
    // geometric below Rmin, spacing continuous with the uniform block
    let h = (rmax - rmin) / (n_in - 1) as f64;
    let ratio_lo = (rmin / a).powf(1.0 / n_lo as f64);
    for i in 0..n_lo {
        g.push(a * ratio_lo.powi(i as i32));
    }
    for i in 0..n_in {
        g.push(rmin + h * i as f64);
    }
    let ratio_hi = (b / rmax).powf(1.0 / n_hi as f64);
    for i in 1..=n_hi {
        g.push(rmax * ratio_hi.powi(i as i32));
    }
    g
}

impl SteadyState {
    /// Builds Ψ: the pure point-mass potential when ε = 0, otherwise the
    /// damped fixed point of U ↦ Poisson(ρ[U]).
    pub fn build(params: PolytropeParams, opts: &SteadyOptions) -> Result<Self> {
        params.validate()?;
        let ls = params.l_support();
        let mut ss = SteadyState {
            params,
            rgrid: Vec::new(),
            u0: Vec::new(),
            du0: Vec::new(),
            d2u0: Vec::new(),
            rmin: 0.0,
            rmax: 0.0,
            total_mass: 0.0,
            iterations: 0,
            residual: 0.0,
            interp_order: 5,
            l_max: 0.0,
        };
        if params.mass <= 0.0 {
            return Err(Error::InvalidParams("shells without a central point mass are not supported".into()));
        }
        let ep = ss.elliptic_point(ls).map_err(|_| Error::EmptySupport { e0: params.e0, psi_min: 0.0 })?;
        if params.e0 <= ep.e_min {
            return Err(Error::EmptySupport { e0: params.e0, psi_min: ep.e_min });
        }
        let (r0min, r0max) = ss.support_edges(&ep)?;
        let n = opts.n_grid.max(64);
        ss.rgrid = build_grid(r0min, r0max, n);
        ss.u0 = vec![0.0; n];
        ss.du0 = vec![0.0; n];
        ss.d2u0 = vec![0.0; n];
        ss.rmin = r0min;
        ss.rmax = r0max;
        ss.iterations = 1;
        if params.eps > 0.0 {
            ss.iterate(opts)?;
        }
        ss.l_max = ss.solve_l_max()?;
        Ok(ss)
    }

    fn iterate(&mut self, opts: &SteadyOptions) -> Result<()> {
        let ls = self.params.l_support();
        let n = self.rgrid.len();
        for it in 1..=opts.max_iter {
            let ep = self.elliptic_point(ls)?;
            let (rmin, rmax) = self.support_edges(&ep)?;
            if rmin <= self.rgrid[0] || rmax >= self.rgrid[n - 1] {
                return Err(Error::Numerical("shell support left the radial grid".into()));
            }
            let sol = {
                let me = &*self;
                solve_poisson_radial(&me.rgrid, |r| me.density(r), &[rmin, rmax])?
            };
            let res = self.u0.iter().zip(&sol.u).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let tau = opts.tau;
            for i in 0..n {
                self.u0[i] = (1.0 - tau) * self.u0[i] + tau * sol.u[i];
                self.du0[i] = (1.0 - tau) * self.du0[i] + tau * sol.du[i];
                self.d2u0[i] = (1.0 - tau) * self.d2u0[i] + tau * sol.d2u[i];
            }
            self.total_mass = (1.0 - tau) * self.total_mass + tau * sol.total_mass;
            self.iterations = it;
            self.residual = res;
            if res < opts.tol {
                // finish on an undamped solve so that U0 is the Poisson
                // potential of its own density
                let ep = self.elliptic_point(ls)?;
                let (rmin, rmax) = self.support_edges(&ep)?;
                let me = &*self;
                let sol = solve_poisson_radial(&me.rgrid, |r| me.density(r), &[rmin, rmax])?;
                self.u0 = sol.u;
                self.du0 = sol.du;
                self.d2u0 = sol.d2u;
                self.total_mass = sol.total_mass;
                let ep = self.elliptic_point(ls)?;
                let (rmin, rmax) = self.support_edges(&ep)?;
                self.rmin = rmin;
                self.rmax = rmax;
                return Ok(());
            }
        }
        Err(Error::NonConvergence { iterations: opts.max_iter, residual: self.residual })
    }

    /// U0 and its first three derivatives.
    pub fn u0_derivs(&self, r: f64) -> [f64; 4] {
        let g = &self.rgrid;
        let n = g.len();
        if self.params.eps == 0.0 || n < 2 {
            return [0.0; 4];
        }
        if r <= g[0] {
            return [self.u0[0], 0.0, 0.0, 0.0];
        }
        if r >= g[n - 1] {
            let m = self.total_mass;
            return [-m / r, m / (r * r), -2.0 * m / (r * r * r), 6.0 * m / (r * r * r * r)];
        }
        let j = g.partition_point(|&x| x <= r).clamp(1, n - 1) - 1;
        let h = g[j + 1] - g[j];
        let c = quintic_coeffs(h, [self.u0[j], self.du0[j], self.d2u0[j]], [
            self.u0[j + 1],
            self.du0[j + 1],
            self.d2u0[j + 1],
        ]);
        let t = (r - g[j]) / h;
        let v = c[0] + t * (c[1] + t * (c[2] + t * (c[3] + t * (c[4] + t * c[5]))));
        let d1 = c[1] + t * (2.0 * c[2] + t * (3.0 * c[3] + t * (4.0 * c[4] + t * 5.0 * c[5])));
        let d2 = 2.0 * c[2] + t * (6.0 * c[3] + t * (12.0 * c[4] + t * 20.0 * c[5]));
        let d3 = 6.0 * c[3] + t * (24.0 * c[4] + t * 60.0 * c[5]);
        [v, d1 / h, d2 / (h * h), d3 / (h * h * h)]
    }

    pub fn psi(&self, l: f64, r: f64) -> f64 {
        -self.params.mass / r + self.u0_derivs(r)[0] + l / (2.0 * r * r)
    }

    pub fn dpsi(&self, l: f64, r: f64) -> f64 {
        self.params.mass / (r * r) + self.u0_derivs(r)[1] - l / (r * r * r)
    }

    /// Ψ_L and its first three radial derivatives.
    pub fn psi_derivs(&self, l: f64, r: f64) -> [f64; 4] {
        let u = self.u0_derivs(r);
        let m = self.params.mass;
        let r2 = r * r;
        let r3 = r2 * r;
        [
            -m / r + u[0] + l / (2.0 * r2),
            m / r2 + u[1] - l / r3,
            -2.0 * m / r3 + u[2] + 3.0 * l / (r2 * r2),
            6.0 * m / (r2 * r2) + u[3] - 12.0 * l / (r3 * r2),
        ]
    }

    /// Closed-form density of the steady state at r.
    pub fn density(&self, r: f64) -> f64 {
        let gap = self.params.e0 - self.psi(self.params.l_support(), r);
        self.params.density_from_gap(r, gap)
    }

    /// Length scale used to bracket searches.
    fn scale(&self) -> f64 {
        if self.rmax > 0.0 {
            self.rmax
        } else {
            let l = self.params.l_support();
            (l / self.params.mass.max(1e-300)).max(1e-300)
        }
    }

    /// Minimum of Ψ_L: root of Ψ_L' located by a geometric scan then
    /// safeguarded Newton.
    pub fn elliptic_point(&self, l: f64) -> Result<EllipticPoint> {
        if !(l > 0.0) {
            return Err(Error::NoMinimum { l });
        }
        let s = self.scale();
        let (lo, hi) = (1e-4 * s, 256.0 * s);
        let steps = 400;
        let ratio = (hi / lo).powf(1.0 / steps as f64);
        let mut prev = (lo, self.dpsi(l, lo));
        let mut bracket = None;
        for i in 1..=steps {
            let r = lo * ratio.powi(i);
            let d = self.dpsi(l, r);
            if prev.1 < 0.0 && d >= 0.0 {
                bracket = Some((prev.0, r));
                break;
            }
            prev = (r, d);
        }
        let (a, b) = bracket.ok_or(Error::NoMinimum { l })?;
        let r_l = newton_bisect(
            |r| {
                let p = self.psi_derivs(l, r);
                (p[1], p[2])
            },
            a,
            b,
            1e-15,
        );
        let p = self.psi_derivs(l, r_l);
        if !(p[2] > 0.0) {
            return Err(Error::NoMinimum { l });
        }
        Ok(EllipticPoint { l, r_l, e_min: p[0], alpha: p[2].sqrt() })
    }

    /// Ψ_L'(r_L + x) without cancellation near the minimum: the point-mass
    /// and centrifugal terms are differenced in closed form and the
    /// self-consistent part is integrated from U0'' close to r_L.
    pub fn dpsi_offset(&self, ep: &EllipticPoint, x: f64) -> f64 {
        let (m, l, a) = (self.params.mass, ep.l, ep.r_l);
        let r = a + x;
        let (a2, r2) = (a * a, r * r);
        let kepler = -m * x * (r + a) / (r2 * a2) + l * x * (r2 + r * a + a2) / (r2 * r * a2 * a);
        let u = self.u0_derivs(a);
        let du = if x.abs() < NEAR * a {
            gl16().integrate(0.0, x, |s| self.u0_derivs(a + s)[2])
        } else {
            self.u0_derivs(r)[1] - u[1]
        };
        // Ψ'(r_L) is zero up to the root tolerance
        let base = m / a2 + u[1] - l / (a2 * a);
        base + kepler + du
    }

    /// Ψ_L(r_L + x) − E_min, built the same way as [`Self::dpsi_offset`].
    pub fn psi_rise_offset(&self, ep: &EllipticPoint, x: f64) -> f64 {
        let (m, l, a) = (self.params.mass, ep.l, ep.r_l);
        let r = a + x;
        let (a2, x2) = (a * a, x * x);
        let kepler = -m * x2 / (r * a2) + l * x2 * (3.0 * a + 2.0 * x) / (2.0 * r * r * a2 * a);
        let u = self.u0_derivs(a);
        let du = if x.abs() < NEAR * a {
            gl16().integrate(0.0, x, |s| (x - s) * self.u0_derivs(a + s)[2])
        } else {
            self.u0_derivs(r)[0] - u[0] - x * u[1]
        };
        let base = m / a2 + u[1] - l / (a2 * a);
        x * base + kepler + du
    }

    /// Ψ_L(r) − Ψ_L(r_L).
    pub fn psi_rise(&self, ep: &EllipticPoint, r: f64) -> f64 {
        self.psi_rise_offset(ep, r - ep.r_l)
    }

    /// (r_−, r_+) with Ψ_L(r_±) = E.
    pub fn turning_points(&self, ep: &EllipticPoint, e: f64) -> Result<(f64, f64)> {
        let tol = 1e-13 * ep.e_min.abs().max(1.0);
        if e < ep.e_min - tol || e > self.params.e0 + tol {
            return Err(Error::OutOfRange { what: "E", value: e, lo: ep.e_min, hi: self.params.e0 });
        }
        let de = e - ep.e_min;
        if de <= 0.0 {
            return Ok((ep.r_l, ep.r_l));
        }
        Ok(self.turning_points_gap(ep, de))
    }

    /// Turning points for the orbit E = E_min + de.
    pub fn turning_points_gap(&self, ep: &EllipticPoint, de: f64) -> (f64, f64) {
        let (a, b) = self.turning_offsets(ep, de);
        (ep.r_l + a, ep.r_l + b)
    }

    /// Offsets x_± = r_± − r_L of the turning points (x₋ ≤ 0 ≤ x₊).
    pub fn turning_offsets(&self, ep: &EllipticPoint, de: f64) -> (f64, f64) {
        if de <= 0.0 {
            return (0.0, 0.0);
        }
        let f = |x: f64| (self.psi_rise_offset(ep, x) - de, self.dpsi_offset(ep, x));
        // bracket around the harmonic estimate
        let d0 = (2.0 * de).sqrt() / ep.alpha;
        let mut lo = -d0;
        if ep.r_l + lo <= 0.0 || f(lo).0 <= 0.0 {
            lo = -0.5 * ep.r_l;
            while f(lo).0 <= 0.0 {
                lo = 0.5 * (lo - ep.r_l);
            }
        }
        let mut hi = d0;
        while f(hi).0 <= 0.0 {
            hi *= 2.0;
        }
        let scale = d0.max(1e-300);
        let solve = |a: f64, b: f64| {
            // Newton in the scaled offset keeps the tolerance relative to x
            let g = |y: f64| {
                let (v, d) = f(y * scale);
                (v, d * scale)
            };
            newton_bisect(g, a / scale, b / scale, 1e-15) * scale
        };
        (solve(lo, 0.0), solve(0.0, hi))
    }

    /// Support radii of the steady state: Ψ_{L_s}(r) = E0.
    fn support_edges(&self, ep: &EllipticPoint) -> Result<(f64, f64)> {
        if self.params.e0 <= ep.e_min {
            return Err(Error::EmptySupport { e0: self.params.e0, psi_min: ep.e_min });
        }
        Ok(self.turning_points_gap(ep, self.params.e0 - ep.e_min))
    }

    /// L at which E_min^L reaches E0.
    fn solve_l_max(&self) -> Result<f64> {
        let e0 = self.params.e0;
        let l0 = self.params.l_support();
        let above = |l: f64| self.elliptic_point(l).map(|ep| ep.e_min >= e0).unwrap_or(true);
        let mut hi = l0 * 2.0;
        while !above(hi) {
            hi *= 2.0;
            if hi > l0 * 1e12 {
                return Err(Error::Numerical("no L with E_min(L) = E0".into()));
            }
        }
        Ok(bisect(above, l0, hi, 1e-14))
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = SteadyDoc {
            format: STEADY_FORMAT.into(),
            version: STEADY_VERSION,
            params: self.params,
            rgrid: self.rgrid.clone(),
            u0: self.u0.clone(),
            du0: self.du0.clone(),
            d2u0: self.d2u0.clone(),
            rmin: self.rmin,
            rmax: self.rmax,
            total_mass: self.total_mass,
            iterations: self.iterations,
            residual: self.residual,
            interp_order: self.interp_order,
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let d: SteadyDoc = serde_json::from_str(s)?;
        if d.format != STEADY_FORMAT || d.version != STEADY_VERSION {
            return Err(Error::Config(format!("unsupported steady-state document {} v{}", d.format, d.version)));
        }
        d.params.validate()?;
        let n = d.rgrid.len();
        if n < 2 || d.u0.len() != n || d.du0.len() != n || d.d2u0.len() != n {
            return Err(Error::Config("steady-state arrays have inconsistent lengths".into()));
        }
        let mut ss = SteadyState {
            params: d.params,
            rgrid: d.rgrid,
            u0: d.u0,
            du0: d.du0,
            d2u0: d.d2u0,
            rmin: d.rmin,
            rmax: d.rmax,
            total_mass: d.total_mass,
            iterations: d.iterations,
            residual: d.residual,
            interp_order: d.interp_order,
            l_max: 0.0,
        };
        ss.l_max = ss.solve_l_max()?;
        Ok(ss)
    }

    /// sup |U0| over the grid.
    pub fn u0_sup(&self) -> f64 {
        self.u0.iter().fold(0.0, |a, &b| a.max(b.abs()))
    }
}

/// Offsets below NEAR·r_L from the minimum use the integrated forms.
const NEAR: f64 = 1e-2;

fn gl16() -> &'static Rule {
    use std::sync::OnceLock;
    static R: OnceLock<Rule> = OnceLock::new();
    R.get_or_init(|| Rule::gauss_legendre(16))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kepler() -> SteadyState {
        let p = PolytropeParams::one_dim(1.0, -0.375, 1.0, 1.0, 0.0).unwrap();
        SteadyState::build(p, &SteadyOptions::default()).unwrap()
    }

    #[test]
    fn kepler_support_and_elliptic_point() {
        let ss = kepler();
        assert!((ss.rmin - 2.0 / 3.0).abs() < 1e-13);
        assert!((ss.rmax - 2.0).abs() < 1e-13);
        assert_eq!(ss.iterations, 1);
        assert!(ss.u0.iter().all(|&u| u == 0.0));
        let ep = ss.elliptic_point(1.0).unwrap();
        assert!((ep.r_l - 1.0).abs() < 1e-13 && (ep.e_min + 0.5).abs() < 1e-14 && (ep.alpha - 1.0).abs() < 1e-12);
        assert!((ss.l_max - 4.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn kepler_heavier_mass() {
        let p = PolytropeParams::one_dim(1.0, -1.5, 1.0, 2.0, 0.0).unwrap();
        let ss = SteadyState::build(p, &SteadyOptions::default()).unwrap();
        let ep = ss.elliptic_point(1.0).unwrap();
        assert!((ep.r_l - 0.5).abs() < 1e-13 && (ep.e_min + 2.0).abs() < 1e-12);
    }

    #[test]
    fn turning_points_match_quadratic_formula() {
        let ss = kepler();
        let ep = ss.elliptic_point(1.0).unwrap();
        assert_eq!(ss.turning_points(&ep, -0.5).unwrap(), (1.0, 1.0));
        let (a, b) = ss.turning_points(&ep, -0.375).unwrap();
        assert!((a - 2.0 / 3.0).abs() < 1e-14 && (b - 2.0).abs() < 1e-14);
        assert!(matches!(ss.turning_points(&ep, -0.6), Err(Error::OutOfRange { .. })));
        // deep in the well the roots still carry full relative accuracy
        let de = 1e-10;
        let (a, b) = ss.turning_points_gap(&ep, de);
        let disc = (2.0 * de).sqrt();
        let exact_m = 1.0 / (1.0 + disc);
        let exact_p = (1.0 + disc) / (1.0 - 2.0 * de);
        assert!(((a - 1.0) - (exact_m - 1.0)).abs() < 1e-9 * (exact_m - 1.0).abs());
        assert!(((b - 1.0) - (exact_p - 1.0)).abs() < 1e-9 * (exact_p - 1.0).abs());
    }

    #[test]
    fn no_minimum_without_attraction() {
        let p = PolytropeParams { k: 1.0, ell: 0.0, e0: -0.1, l0: 1.0, mass: 0.0, eps: 0.0, mode: Mode::OneDim { lbar: 1.0 } };
        let ss = SteadyState {
            params: p,
            rgrid: vec![],
            u0: vec![],
            du0: vec![],
            d2u0: vec![],
            rmin: 1.0,
            rmax: 2.0,
            total_mass: 0.0,
            iterations: 0,
            residual: 0.0,
            interp_order: 5,
            l_max: 0.0,
        };
        assert!(matches!(ss.elliptic_point(1.0), Err(Error::NoMinimum { .. })));
    }

    #[test]
    fn parameter_validation() {
        assert!(PolytropeParams::one_dim(0.4, -0.375, 1.0, 1.0, 0.0).is_err());
        assert!(PolytropeParams::one_dim(1.0, 0.1, 1.0, 1.0, 0.0).is_err());
        assert!(PolytropeParams::one_dim(1.0, -0.375, 1.0, 0.0, 0.0).is_err());
        assert!(PolytropeParams::radial(0.5, -0.6, -0.375, 1.0, 1.0, 0.0).is_err());
        assert!(PolytropeParams::radial(0.1, 1.0, -0.375, 1.0, 1.0, 1e-3).is_ok());
    }

    #[test]
    fn uniform_sphere_exterior_potential() {
        let a = 1.3;
        let rho0 = 0.7;
        let grid: Vec<f64> = (1..=400).map(|i| 0.01 * i as f64).collect();
        let sol = solve_poisson_radial(&grid, |r| if r <= a { rho0 } else { 0.0 }, &[a]).unwrap();
        for (i, &r) in grid.iter().enumerate() {
            if r >= a {
                let exact = -4.0 * PI / 3.0 * rho0 * a.powi(3) / r;
                assert!((sol.u[i] - exact).abs() < 1e-13, "{r}");
            } else {
                // interior: −2πρ0(a² − r²/3)
                let exact = -2.0 * PI * rho0 * (a * a - r * r / 3.0);
                assert!((sol.u[i] - exact).abs() < 1e-13, "{r}");
            }
        }
        let zero = solve_poisson_radial(&grid, |_| 0.0, &[]).unwrap();
        assert!(zero.u.iter().all(|&u| u == 0.0));
    }

    #[test]
    fn gauss_identity_at_large_radius() {
        let grid: Vec<f64> = (1..=600).map(|i| 0.01 * i as f64).collect();
        let rho = |r: f64| if r > 1.0 && r < 2.0 { (r - 1.0).powi(2) * (2.0 - r).powi(2) } else { 0.0 };
        let sol = solve_poisson_radial(&grid, rho, &[1.0, 2.0]).unwrap();
        // 4π ∫_1^2 (r−1)²(2−r)² r² dr = 4π · 8/105
        let mass = 4.0 * PI * 8.0 / 105.0;
        let i = grid.len() - 1;
        assert!((grid[i] * grid[i] * sol.du[i] - mass).abs() < 1e-13, "{}", grid[i] * grid[i] * sol.du[i] - mass);
        assert!((sol.total_mass - mass).abs() < 1e-13);
    }

    #[test]
    fn too_coarse_support_is_rejected() {
        let grid: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        let r = solve_poisson_radial(&grid, |r| if r > 10.0 && r < 14.0 { 1.0 } else { 0.0 }, &[10.0, 14.0]);
        assert!(matches!(r, Err(Error::GridTooCoarse { .. })));
    }

    /// Independent oracle: integrate the raw ansatz over (w, L) numerically.
    fn raw_density(p: &PolytropeParams, ss: &SteadyState, r: f64) -> f64 {
        let n = 400;
        let rule = Rule::gauss_legendre(20);
        let e0 = p.e0;
        match p.mode {
            Mode::OneDim { lbar } => {
                let gap = e0 - ss.psi(lbar, r);
                if gap <= 0.0 {
                    return 0.0;
                }
                let wmax = (2.0 * gap).sqrt();
                let mut acc = 0.0;
                for c in 0..n {
                    let a = -wmax + 2.0 * wmax * c as f64 / n as f64;
                    acc += rule.integrate(a, a + 2.0 * wmax / n as f64, |w| {
                        let e = 0.5 * w * w + ss.psi(lbar, r);
                        p.eps * (e0 - e).max(0.0).powf(p.k)
                    });
                }
                PI / (r * r) * acc
            }
            Mode::Radial => {
                let gap = e0 - ss.psi(p.l0, r);
                if gap <= 0.0 {
                    return 0.0;
                }
                let wmax = (2.0 * gap).sqrt();
                let mut acc = 0.0;
                for c in 0..n {
                    let a = -wmax + 2.0 * wmax * c as f64 / n as f64;
                    acc += rule.integrate(a, a + 2.0 * wmax / n as f64, |w| {
                        // L from L0 to where E reaches E0
                        let lhi = p.l0 + 2.0 * r * r * (gap - 0.5 * w * w).max(0.0);
                        Rule::gauss_legendre(40).integrate(p.l0, lhi, |l| {
                            let e = 0.5 * w * w + ss.psi(l, r);
                            p.eps * (e0 - e).max(0.0).powf(p.k) * (l - p.l0).powf(p.ell)
                        })
                    });
                }
                PI / (r * r) * acc
            }
        }
    }

    #[test]
    fn density_constants_match_raw_ansatz() {
        for p in [
            PolytropeParams::one_dim(1.5, -0.375, 1.0, 1.0, 0.0).unwrap(),
            PolytropeParams::radial(2.0, 1.0, -0.375, 1.0, 1.0, 0.0).unwrap(),
        ] {
            let mut p = p;
            let ss = SteadyState::build(p, &SteadyOptions::default()).unwrap();
            p.eps = 1.0;
            for &r in &[0.8, 1.1, 1.7] {
                let gap = p.e0 - ss.psi(p.l_support(), r);
                let closed = p.density_from_gap(r, gap);
                let raw = raw_density(&p, &ss, r);
                assert!((closed - raw).abs() < 1e-8 * raw.abs(), "{r}: {closed} {raw}");
            }
        }
    }

    #[test]
    fn self_consistent_shell_is_linear_in_eps() {
        let opts = SteadyOptions { tol: 1e-12, ..Default::default() };
        let build = |eps| {
            let p = PolytropeParams::one_dim(1.0, -0.375, 1.0, 1.0, eps).unwrap();
            SteadyState::build(p, &opts).unwrap()
        };
        let a = build(1e-3);
        let b = build(5e-4);
        assert!(a.residual < 1e-12 && a.iterations > 1);
        let ratio = a.u0_sup() / b.u0_sup();
        assert!((ratio - 2.0).abs() < 0.2, "{ratio}");
        // the edges remain roots of Ψ = E0
        let l = 1.0;
        assert!((a.psi(l, a.rmin) + 0.375).abs() < 1e-12);
        assert!((a.psi(l, a.rmax) + 0.375).abs() < 1e-12);
        // re-solving Poisson from the converged density reproduces U0
        let sol = solve_poisson_radial(&a.rgrid, |r| a.density(r), &[a.rmin, a.rmax]).unwrap();
        let res = a.u0.iter().zip(&sol.u).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(res < 1e-10, "{res}");
        // decay to zero at infinity and Gauss law beyond the grid
        let far = 1e3;
        assert!((a.u0_derivs(far)[0] * far + a.total_mass).abs() < 1e-12);
        // monotone increase outside the shell
        let mut prev = f64::NEG_INFINITY;
        for i in 0..200 {
            let r = a.rmax * (1.0 + 0.05 * i as f64);
            let u = a.u0_derivs(r)[0];
            assert!(u > prev);
            prev = u;
        }
    }

    #[test]
    fn hermite_evaluator_is_c2() {
        let p = PolytropeParams::one_dim(1.0, -0.375, 1.0, 1.0, 1e-3).unwrap();
        let ss = SteadyState::build(p, &SteadyOptions::default()).unwrap();
        let j = ss.rgrid.len() / 2;
        let x = ss.rgrid[j];
        let dx = 1e-9 * x;
        let a = ss.u0_derivs(x - dx);
        let b = ss.u0_derivs(x + dx);
        for d in 0..3 {
            assert!((a[d] - b[d]).abs() < 1e-6 * (a[d].abs() + 1e-6), "derivative {d}");
        }
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let p = PolytropeParams::radial(2.0, 1.0, -0.375, 1.0, 1.0, 1e-3).unwrap();
        let ss = SteadyState::build(p, &SteadyOptions::default()).unwrap();
        let s = ss.to_json().unwrap();
        let back = SteadyState::from_json(&s).unwrap();
        assert_eq!(back, ss);
        assert_eq!(back.to_json().unwrap(), s);
    }
}
