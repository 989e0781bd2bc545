//! Characteristic flow, periods and the action-angle maps.
//!
//! Every radial quadrature uses r = r₋ + (r₊ − r₋)·sin²(πu/2), which turns
//! both inverse square roots at the turning points into smooth factors (for
//! a Kepler well u is exactly the eccentric anomaly over π).

use crate::error::{Error, Result};
use crate::numeric::dop853::{self, Trajectory};
use crate::numeric::quad::Rule;
use crate::potential::{EllipticPoint, SteadyState};
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;
use std::io::Write;
use std::sync::OnceLock;

fn rule(n: usize) -> &'static Rule {
    static R16: OnceLock<Rule> = OnceLock::new();
    static R64: OnceLock<Rule> = OnceLock::new();
    static R128: OnceLock<Rule> = OnceLock::new();
    match n {
        16 => R16.get_or_init(|| Rule::gauss_legendre(16)),
        64 => R64.get_or_init(|| Rule::gauss_legendre(64)),
        _ => R128.get_or_init(|| Rule::gauss_legendre(128)),
    }
}

/// Below this relative energy gap the period is replaced by its limit 2π/α
/// (the first-order correction is then below 1e-18).
const TINY_GAP: f64 = 1e-20;

/// One bound orbit, identified by its energy above the well bottom.
///
/// The turning points are kept as offsets from r_L so that narrow orbits near
/// the bottom of the well keep full relative precision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Orbit {
    pub e: f64,
    pub de: f64,
    pub r_minus: f64,
    pub r_plus: f64,
    pub r_l: f64,
    pub x_minus: f64,
    pub x_plus: f64,
}

impl Orbit {
    fn from_offsets(e: f64, de: f64, r_l: f64, x_minus: f64, x_plus: f64) -> Self {
        Orbit { e, de, r_minus: r_l + x_minus, r_plus: r_l + x_plus, r_l, x_minus, x_plus }
    }

    pub fn width(&self) -> f64 {
        self.x_plus - self.x_minus
    }

    /// Substitution parameter u ∈ [0,1] of a radius inside the orbit.
    pub fn u_of_radius(&self, r: f64) -> f64 {
        let x = r - self.r_l;
        let a = (x - self.x_minus).max(0.0).sqrt();
        let b = (self.x_plus - x).max(0.0).sqrt();
        2.0 / PI * a.atan2(b)
    }

    pub fn offset_of_u(&self, u: f64) -> f64 {
        let s = (0.5 * PI * u).sin();
        self.x_minus + self.width() * s * s
    }

    pub fn radius_of_u(&self, u: f64) -> f64 {
        self.r_l + self.offset_of_u(u)
    }
}

/// θ along the outgoing half of one orbit as a Chebyshev series in the
/// substitution parameter u, so θ(r) costs a series evaluation.
#[derive(Debug, Clone)]
pub struct AngleMap {
    pub orbit: Orbit,
    /// Coefficients of ∫₀ᵘ (dt/du) du on y = 2u − 1, normalised so θ(1) = 1/2.
    coeffs: Vec<f64>,
}

const CHEB_N: usize = 64;

impl AngleMap {
    pub fn theta_of_u(&self, u: f64) -> f64 {
        if self.coeffs.is_empty() {
            return 0.5 * u.clamp(0.0, 1.0);
        }
        clenshaw(&self.coeffs, 2.0 * u.clamp(0.0, 1.0) - 1.0)
    }

    /// Outgoing-branch angle in [0, 1/2] at radius r.
    pub fn theta_of_radius(&self, r: f64) -> f64 {
        let o = &self.orbit;
        if r <= o.r_minus {
            return 0.0;
        }
        if r >= o.r_plus {
            return 0.5;
        }
        self.theta_of_u(o.u_of_radius(r))
    }
}

fn clenshaw(c: &[f64], y: f64) -> f64 {
    let (mut b1, mut b2) = (0.0, 0.0);
    for &ck in c.iter().skip(1).rev() {
        let b0 = 2.0 * y * b1 - b2 + ck;
        b2 = b1;
        b1 = b0;
    }
    y * b1 - b2 + c[0]
}

/// The effective well Ψ_L at one angular momentum.
#[derive(Debug, Clone, Copy)]
pub struct Well<'a> {
    pub ss: &'a SteadyState,
    pub ep: EllipticPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhasePoint {
    pub r: f64,
    pub w: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnglePoint {
    pub theta: f64,
    pub e: f64,
}

impl<'a> Well<'a> {
    pub fn new(ss: &'a SteadyState, l: f64) -> Result<Self> {
        Ok(Well { ss, ep: ss.elliptic_point(l)? })
    }

    pub fn l(&self) -> f64 {
        self.ep.l
    }

    /// E0 − E_min^L.
    pub fn depth(&self) -> f64 {
        self.ss.params.e0 - self.ep.e_min
    }

    /// Ψ_L(r) − E_min, exact for the point-mass potential.
    pub fn rise(&self, r: f64) -> f64 {
        self.rise_offset(r - self.ep.r_l)
    }

    /// Ψ_L(r_L + x) − E_min.
    pub fn rise_offset(&self, x: f64) -> f64 {
        let p = &self.ss.params;
        if p.eps == 0.0 {
            // M²x²/(2L r²)
            let r = self.ep.r_l + x;
            let mx = p.mass * x;
            mx * mx / (2.0 * self.ep.l * r * r)
        } else {
            self.ss.psi_rise_offset(&self.ep, x)
        }
    }

    /// Ψ_L'(r_L + x).
    pub fn slope_offset(&self, x: f64) -> f64 {
        let p = &self.ss.params;
        if p.eps == 0.0 {
            let r = self.ep.r_l + x;
            p.mass * x / (r * r * r)
        } else {
            self.ss.dpsi_offset(&self.ep, x)
        }
    }

    fn check_energy(&self, e: f64) -> Result<()> {
        let tol = 1e-13 * self.ep.e_min.abs().max(1.0);
        let e0 = self.ss.params.e0;
        if e < self.ep.e_min - tol || e > e0 + tol {
            return Err(Error::OutOfRange { what: "E", value: e, lo: self.ep.e_min, hi: e0 });
        }
        Ok(())
    }

    pub fn orbit(&self, e: f64) -> Result<Orbit> {
        self.check_energy(e)?;
        Ok(self.orbit_gap((e - self.ep.e_min).max(0.0)))
    }

    /// Any bound orbit of the well, including energies above the cut-off.
    pub fn bound_orbit(&self, e: f64) -> Result<Orbit> {
        let tol = 1e-13 * self.ep.e_min.abs().max(1.0);
        if e < self.ep.e_min - tol || e >= 0.0 {
            return Err(Error::OutOfRange { what: "E", value: e, lo: self.ep.e_min, hi: 0.0 });
        }
        Ok(self.orbit_gap((e - self.ep.e_min).max(0.0)))
    }

    /// Orbit at E = E_min + de; de may exceed the cut-off (finite differences).
    pub fn orbit_gap(&self, de: f64) -> Orbit {
        let (x_minus, x_plus) = if self.ss.params.eps == 0.0 && de > 0.0 {
            // closed form: r = L/(M(1 ± ecc)), ecc² = 2·de·L/M²
            let p = &self.ss.params;
            let ecc = (2.0 * de * self.ep.l).sqrt() / p.mass;
            let a = self.ep.l / p.mass;
            let xp = if ecc < 1.0 { a * ecc / (1.0 - ecc) } else { f64::INFINITY };
            (-a * ecc / (1.0 + ecc), xp)
        } else {
            self.ss.turning_offsets(&self.ep, de)
        };
        Orbit::from_offsets(self.ep.e_min + de, de, self.ep.r_l, x_minus, x_plus)
    }

    /// E − Ψ_L(r) for r inside the orbit, accurate near the turning points.
    pub fn gap_at(&self, o: &Orbit, r: f64) -> f64 {
        self.gap_offset(o, r - o.r_l)
    }

    fn gap_offset(&self, o: &Orbit, x: f64) -> f64 {
        let d = o.de - self.rise_offset(x);
        if d > 1e-3 * o.de {
            return d;
        }
        // Ψ(r_t) − Ψ(r) from the nearer turning point r_t
        let near = if x - o.x_minus < o.x_plus - x { o.x_minus } else { o.x_plus };
        rule(16).integrate(x, near, |s| self.slope_offset(s)).max(0.0)
    }

    /// dt/du along the outgoing half of the orbit.
    fn dt_du(&self, o: &Orbit, u: f64) -> f64 {
        let g = self.gap_offset(o, o.offset_of_u(u));
        if g <= 0.0 {
            return 0.0;
        }
        o.width() * 0.5 * PI * (PI * u).sin() / (2.0 * g).sqrt()
    }

    /// Time from r₋ to the radius at substitution parameter u.
    fn time_to(&self, o: &Orbit, u0: f64, u1: f64, n: usize) -> f64 {
        rule(n).integrate(u0, u1, |u| self.dt_du(o, u))
    }

    /// Radial period; the limit 2π/α_L at the bottom of the well.
    pub fn period(&self, o: &Orbit) -> f64 {
        if o.de <= TINY_GAP * self.ep.e_min.abs() || o.width() <= 0.0 {
            return 2.0 * PI / self.ep.alpha;
        }
        if self.ss.params.eps == 0.0 {
            // Kepler: T = 2πM(−2E)^{−3/2}, written without cancellation
            let m = self.ss.params.mass;
            let two_e = m * m / self.ep.l - 2.0 * o.de;
            return 2.0 * PI * m * two_e.powf(-1.5);
        }
        2.0 * self.time_to(o, 0.0, 1.0, 128)
    }

    /// Period by quadrature even where a closed form exists.
    pub fn period_quadrature(&self, o: &Orbit) -> f64 {
        if o.de <= TINY_GAP * self.ep.e_min.abs() || o.width() <= 0.0 {
            return 2.0 * PI / self.ep.alpha;
        }
        2.0 * self.time_to(o, 0.0, 1.0, 128)
    }

    pub fn period_gap(&self, de: f64) -> f64 {
        self.period(&self.orbit_gap(de))
    }

    /// ∂T/∂E by Richardson-extrapolated differences of step 1e-4·(E0 − E_min);
    /// one-sided where the centred stencil would leave the well.
    pub fn dt_de(&self, de: f64) -> f64 {
        let depth = self.depth();
        self.dt_de_step(de, 1e-4 * if depth > 0.0 { depth } else { self.ep.e_min.abs() })
    }

    pub fn dt_de_step(&self, de: f64, h: f64) -> f64 {
        let t = |x: f64| self.period_gap(x);
        if de >= h {
            let d = |h: f64| (t(de + h) - t(de - h)) / (2.0 * h);
            (4.0 * d(0.5 * h) - d(h)) / 3.0
        } else {
            let t0 = t(de);
            let d = |h: f64| (-3.0 * t0 + 4.0 * t(de + h) - t(de + 2.0 * h)) / (2.0 * h);
            (4.0 * d(0.5 * h) - d(h)) / 3.0
        }
    }

    /// θ(R, E) ∈ [0, 1/2]: the outgoing-branch angle at which r = R.
    pub fn theta_of_radius(&self, o: &Orbit, period: f64, r: f64) -> f64 {
        if r <= o.r_minus {
            return 0.0;
        }
        if r >= o.r_plus {
            return 0.5;
        }
        if o.width() <= 0.0 {
            return if r > self.ep.r_l { 0.5 } else { 0.0 };
        }
        let u = o.u_of_radius(r);
        if u <= 0.5 {
            self.time_to(o, 0.0, u, 64) / period
        } else {
            0.5 - self.time_to(o, u, 1.0, 64) / period
        }
    }

    pub fn angle_map(&self, o: &Orbit) -> AngleMap {
        if o.width() <= 0.0 || o.de <= 0.0 {
            return AngleMap { orbit: *o, coeffs: Vec::new() };
        }
        let n = CHEB_N;
        let f: Vec<f64> = (0..n)
            .map(|j| {
                let y = (PI * (j as f64 + 0.5) / n as f64).cos();
                self.dt_du(o, 0.5 * (1.0 + y))
            })
            .collect();
        let mut a: Vec<f64> = (0..n)
            .map(|k| {
                let s: f64 = f
                    .iter()
                    .enumerate()
                    .map(|(j, v)| v * (PI * k as f64 * (j as f64 + 0.5) / n as f64).cos())
                    .sum();
                2.0 * s / n as f64
            })
            .collect();
        a[0] *= 0.5;
        a.extend([0.0, 0.0]);
        // antiderivative in y
        let mut c = vec![0.0; n + 1];
        c[1] = a[0] - 0.5 * a[2];
        for k in 2..=n {
            c[k] = (a[k - 1] - a[k + 1]) / (2.0 * k as f64);
        }
        c[0] = -c.iter().enumerate().skip(1).map(|(k, v)| if k % 2 == 0 { *v } else { -v }).sum::<f64>();
        let half = clenshaw(&c, 1.0);
        for v in &mut c {
            *v *= 0.5 / half;
        }
        AngleMap { orbit: *o, coeffs: c }
    }

    /// Flow from (r₋, 0) over `duration` with dense output.
    pub fn flow(&self, o: &Orbit, duration: f64) -> Result<Trajectory<2>> {
        let l = self.ep.l;
        let ss = self.ss;
        let scale = o.width().max(1e-300);
        let opts = dop853::Options { rtol: 1e-12, atol: 1e-14 * scale, max_steps: 1_000_000 };
        dop853::integrate(|_, y: &[f64; 2]| [y[1], -ss.dpsi(l, y[0])], 0.0, [o.r_minus, 0.0], duration, &opts)
            .map_err(|e| Error::Numerical(format!("orbit integration failed: {e:?}")))
    }

    /// Phase point at angle θ; integrates the flow to θT.
    pub fn angle_to_phase(&self, o: &Orbit, theta: f64) -> Result<PhasePoint> {
        let t = self.period(o);
        let th = theta.rem_euclid(1.0);
        if o.de <= 0.0 {
            return Ok(PhasePoint { r: self.ep.r_l, w: 0.0 });
        }
        let tr = self.flow(o, th * t)?;
        let y = tr.y_end();
        Ok(PhasePoint { r: y[0], w: y[1] })
    }

    /// (θ, E) of a phase point; AtEllipticPoint inside the exclusion ball.
    pub fn phase_to_angle(&self, p: PhasePoint) -> Result<AnglePoint> {
        let support = self.orbit_gap(self.depth().max(0.0));
        let ball = 1e-7 * support.width();
        if (p.r - self.ep.r_l).hypot(p.w) < ball {
            return Err(Error::AtEllipticPoint);
        }
        let de = 0.5 * p.w * p.w + self.rise(p.r);
        let o = self.orbit_gap(de);
        let t = self.period(&o);
        let th = self.theta_of_radius(&o, t, p.r);
        let theta = if p.w >= 0.0 { th } else { (1.0 - th).rem_euclid(1.0) };
        Ok(AnglePoint { theta, e: o.e })
    }
}

/// Radial period T(E, L) of any bound orbit (E may exceed the cut-off E0).
pub fn period(ss: &SteadyState, e: f64, l: f64) -> Result<f64> {
    let w = Well::new(ss, l)?;
    let o = w.bound_orbit(e)?;
    Ok(w.period(&o))
}

/// Trajectory (R, W)(s) from (r₋, 0).
pub fn integrate_orbit(ss: &SteadyState, e: f64, l: f64, duration: f64) -> Result<Trajectory<2>> {
    let w = Well::new(ss, l)?;
    let o = w.orbit(e)?;
    w.flow(&o, duration)
}

pub fn angle_to_phase(ss: &SteadyState, theta: f64, e: f64, l: f64) -> Result<PhasePoint> {
    let w = Well::new(ss, l)?;
    let o = w.orbit(e)?;
    w.angle_to_phase(&o, theta)
}

pub fn phase_to_angle(ss: &SteadyState, r: f64, w: f64, l: f64) -> Result<AnglePoint> {
    Well::new(ss, l)?.phase_to_angle(PhasePoint { r, w })
}

/// θ(R, E) with the convention 1/2 (R > r_L) or 0 (R < r_L) at E = Ψ_L(R).
pub fn angle_of_radius(ss: &SteadyState, r: f64, e: f64, l: f64) -> Result<f64> {
    let w = Well::new(ss, l)?;
    let psi = ss.psi(l, r);
    let tol = 1e-13 * psi.abs().max(1.0);
    if e < psi - tol {
        return Err(Error::OutOfRange { what: "E", value: e, lo: psi, hi: ss.params.e0 });
    }
    let o = w.orbit(e)?;
    if e <= psi + tol {
        return Ok(if r > w.ep.r_l { 0.5 } else { 0.0 });
    }
    let t = w.period(&o);
    Ok(w.theta_of_radius(&o, t, r))
}

/// One node of the action grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OrbitRecord {
    pub e: f64,
    pub l: f64,
    pub r_minus: f64,
    pub r_plus: f64,
    pub period: f64,
    pub dt_de: f64,
    pub dt_dl: f64,
}

impl OrbitRecord {
    pub fn omega(&self) -> f64 {
        1.0 / self.period
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GridSpec {
    pub n_e: usize,
    pub n_l: usize,
    /// Share of energy nodes placed geometrically toward E_min.
    pub geometric_fraction: f64,
    /// Smallest (E − E_min)/(E0 − E_min) of the geometric cluster.
    pub x_floor: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { n_e: 1024, n_l: 1, geometric_fraction: 0.0625, x_floor: 1e-12 }
    }
}

/// Relative energy positions x = (E − E_min)/(E0 − E_min) ∈ [0, 1]:
/// x = 0, a geometric cluster up to 1e-4, then s = √x on a cosine map.
pub fn energy_fractions(spec: &GridSpec) -> Vec<f64> {
    let n = spec.n_e.max(8);
    let n_geo = ((n as f64 * spec.geometric_fraction).round() as usize).clamp(2, n / 2);
    let n_rest = n - 1 - n_geo;
    let x_top = 1e-4;
    let mut x = Vec::with_capacity(n);
    x.push(0.0);
    let ratio = (x_top / spec.x_floor).powf(1.0 / n_geo as f64);
    for i in 0..n_geo {
        x.push(spec.x_floor * ratio.powi(i as i32));
    }
    let s0 = x_top.sqrt();
    for j in 0..n_rest {
        let c = 0.5 * (1.0 - (PI * j as f64 / (n_rest - 1) as f64).cos());
        let s = s0 + (1.0 - s0) * c;
        x.push(s * s);
    }
    *x.last_mut().unwrap() = 1.0;
    x
}

/// Angular momentum nodes on [L0, Lmax], clustered at both ends.
pub fn l_nodes(ss: &SteadyState, n_l: usize) -> Vec<f64> {
    match ss.params.mode {
        crate::potential::Mode::OneDim { lbar } => vec![lbar],
        crate::potential::Mode::Radial => {
            let (a, b) = (ss.params.l0, ss.l_max);
            let n = n_l.max(2);
            (0..n).map(|j| a + (b - a) * 0.5 * (1.0 - (PI * j as f64 / (n - 1) as f64).cos())).collect()
        }
    }
}

#[derive(Debug, Clone)]
pub struct OrbitTable {
    pub l_nodes: Vec<f64>,
    pub x_nodes: Vec<f64>,
    pub elliptic: Vec<EllipticPoint>,
    /// Row-major: records[j * n_e + i] for L_j, x_i.
    pub records: Vec<OrbitRecord>,
    /// max |∂_L T| (zero in the 1+1 model).
    pub eta: f64,
    pub min_dt_de: f64,
}

impl OrbitTable {
    pub fn n_e(&self) -> usize {
        self.x_nodes.len()
    }

    pub fn record(&self, j: usize, i: usize) -> &OrbitRecord {
        &self.records[j * self.x_nodes.len() + i]
    }

    pub fn row(&self, j: usize) -> &[OrbitRecord] {
        let n = self.x_nodes.len();
        &self.records[j * n..(j + 1) * n]
    }

    /// Node with the smallest ∂_E T.
    pub fn argmin_dt_de(&self) -> Option<&OrbitRecord> {
        self.records.iter().min_by(|a, b| a.dt_de.total_cmp(&b.dt_de))
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "E,L,r_minus,r_plus,T,omega,dT_dE,dT_dL")?;
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.e,
                r.l,
                r.r_minus,
                r.r_plus,
                r.period,
                r.omega(),
                r.dt_de,
                r.dt_dl
            )?;
        }
        Ok(())
    }
}

/// Tabulates periods and their derivatives; fails on a node with ∂_E T ≤ 0.
pub fn build_orbit_table(ss: &SteadyState, spec: &GridSpec) -> Result<OrbitTable> {
    let ls = l_nodes(ss, spec.n_l);
    let xs = energy_fractions(spec);
    let elliptic: Vec<EllipticPoint> = ls.iter().map(|&l| ss.elliptic_point(l)).collect::<Result<_>>()?;
    let radial = ss.params.is_radial();
    let dl_step = 1e-4 * (ss.l_max - ss.params.l0).max(1e-12);
    // one energy step for the whole table, set by the deepest well
    let de_step = 1e-4 * elliptic.iter().map(|ep| ss.params.e0 - ep.e_min).fold(0.0, f64::max);
    let e0 = ss.params.e0;
    let rows: Vec<Vec<OrbitRecord>> = elliptic
        .par_iter()
        .map(|ep| {
            let well = Well { ss, ep: *ep };
            let depth = well.depth().max(0.0);
            xs.iter()
                .map(|&x| {
                    let de = x * depth;
                    let o = well.orbit_gap(de);
                    let t = well.period(&o);
                    let dt_de = well.dt_de_step(de, de_step);
                    let dt_dl = if radial { dt_dl(ss, e0 - (1.0 - x) * depth, ep.l, dl_step) } else { 0.0 };
                    OrbitRecord { e: o.e, l: ep.l, r_minus: o.r_minus, r_plus: o.r_plus, period: t, dt_de, dt_dl }
                })
                .collect()
        })
        .collect();
    let records: Vec<OrbitRecord> = rows.into_iter().flatten().collect();
    let eta = records.iter().fold(0.0f64, |a, r| a.max(r.dt_dl.abs()));
    let min_dt_de = records.iter().fold(f64::INFINITY, |a, r| a.min(r.dt_de));
    let table = OrbitTable { l_nodes: ls, x_nodes: xs, elliptic, records, eta, min_dt_de };
    if let Some(bad) = table.records.iter().find(|r| !(r.dt_de > 0.0)) {
        return Err(Error::MonotonicityViolation { e: bad.e, l: bad.l, dt_de: bad.dt_de });
    }
    Ok(table)
}

/// ∂_L T at fixed E, backward-differenced when L + h leaves the well.
pub fn dt_dl(ss: &SteadyState, e: f64, l: f64, h: f64) -> f64 {
    let t = |l: f64| -> Option<f64> {
        let ep = ss.elliptic_point(l).ok()?;
        let de = e - ep.e_min;
        if de < 0.0 {
            return None;
        }
        let w = Well { ss, ep };
        Some(w.period_gap(de))
    };
    let d = |h: f64| -> Option<f64> {
        match (t(l + h), t(l - h)) {
            (Some(a), Some(b)) => Some((a - b) / (2.0 * h)),
            _ => {
                let (t0, t1, t2) = (t(l)?, t(l - h)?, t(l - 2.0 * h)?);
                Some((3.0 * t0 - 4.0 * t1 + t2) / (2.0 * h))
            }
        }
    };
    match (d(h), d(0.5 * h)) {
        (Some(a), Some(b)) => (4.0 * b - a) / 3.0,
        (Some(a), None) | (None, Some(a)) => a,
        _ => 0.0,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExpansionRow {
    pub de: f64,
    pub r_residual: f64,
    pub w_residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExpansionReport {
    pub l: f64,
    pub r_l: f64,
    pub alpha: f64,
    pub rows: Vec<ExpansionRow>,
    /// Fitted exponent of the residuals in √(E − E_min).
    pub r_order: f64,
    pub w_order: f64,
}

/// Residuals of r ≈ r_L − √(2(E−E_min))cos(2πθ)/α and w ≈ √(2(E−E_min))sin(2πθ).
pub fn verify_elliptic_expansion(ss: &SteadyState, l: f64, thetas: &[f64], gaps: &[f64]) -> Result<ExpansionReport> {
    let well = Well::new(ss, l)?;
    let ep = well.ep;
    let rows: Vec<ExpansionRow> = gaps
        .par_iter()
        .map(|&de| -> Result<ExpansionRow> {
            let o = well.orbit_gap(de);
            let t = well.period(&o);
            let tmax = thetas.iter().fold(0.0f64, |a, &b| a.max(b.rem_euclid(1.0)));
            let tr = well.flow(&o, tmax * t)?;
            let sq = de.sqrt();
            let mut rr: f64 = 0.0;
            let mut wr: f64 = 0.0;
            for &th in thetas {
                let y = tr.eval(th.rem_euclid(1.0) * t);
                let c = (2.0 * PI * th).cos();
                let s = (2.0 * PI * th).sin();
                rr = rr.max(((y[0] - ep.r_l) / sq + 2f64.sqrt() * c / ep.alpha).abs());
                wr = wr.max((y[1] / sq - 2f64.sqrt() * s).abs());
            }
            Ok(ExpansionRow { de, r_residual: rr, w_residual: wr })
        })
        .collect::<Result<_>>()?;
    let fit = |sel: fn(&ExpansionRow) -> f64| {
        let pts: Vec<(f64, f64)> =
            rows.iter().filter(|r| sel(r) > 0.0).map(|r| (0.5 * r.de.ln(), sel(r).ln())).collect();
        slope(&pts)
    };
    let r_order = fit(|r| r.r_residual);
    let w_order = fit(|r| r.w_residual);
    Ok(ExpansionReport { l, r_l: ep.r_l, alpha: ep.alpha, rows, r_order, w_order })
}

pub(crate) fn slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    if n < 2.0 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::{PolytropeParams, SteadyOptions};

    fn kepler() -> SteadyState {
        let p = PolytropeParams::one_dim(1.0, -0.375, 1.0, 1.0, 0.0).unwrap();
        SteadyState::build(p, &SteadyOptions::default()).unwrap()
    }

    fn shell(eps: f64) -> SteadyState {
        let p = PolytropeParams::one_dim(1.0, -0.375, 1.0, 1.0, eps).unwrap();
        SteadyState::build(p, &SteadyOptions::default()).unwrap()
    }

    #[test]
    fn kepler_periods() {
        let ss = kepler();
        let t = period(&ss, -0.5, 1.0).unwrap();
        assert!((t - 2.0 * PI).abs() < 1e-13);
        let t = period(&ss, -0.125, 1.0).unwrap();
        assert!((t - 16.0 * PI).abs() < 1e-11);
        let w = Well::new(&ss, 1.0).unwrap();
        // the quadrature agrees with the closed form across the well
        for i in 0..20 {
            let e = -0.5 + 0.45 * i as f64 / 19.0;
            let o = w.orbit_gap(e + 0.5);
            let tq = w.period_quadrature(&o);
            let exact = 2.0 * PI * (-2.0 * e).powf(-1.5);
            assert!((tq - exact).abs() < 1e-10 * exact, "{e}: {tq} {exact}");
        }
        // the Kepler period does not depend on L
        let w4 = Well::new(&ss, 0.8).unwrap();
        let o = w4.bound_orbit(-0.3).unwrap();
        assert!((w4.period_quadrature(&o) - 2.0 * PI * 0.6f64.powf(-1.5)).abs() < 1e-10);
        assert!(matches!(period(&ss, -0.6, 1.0), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn kepler_dt_de_matches_derivative_of_closed_form() {
        let ss = kepler();
        let w = Well::new(&ss, 1.0).unwrap();
        for &de in &[0.0, 1e-7, 1e-3, 0.06, 0.125] {
            let e: f64 = -0.5 + de;
            let exact = 6.0 * PI * (-2.0 * e).powf(-2.5);
            assert!((w.dt_de(de) - exact).abs() < 1e-6 * exact, "{de}");
        }
    }

    #[test]
    fn flow_reaches_outer_turning_point_at_half_period() {
        let ss = kepler();
        let t = period(&ss, -0.375, 1.0).unwrap();
        let tr = integrate_orbit(&ss, -0.375, 1.0, t).unwrap();
        let h = tr.eval(0.5 * t);
        assert!((h[0] - 2.0).abs() < 1e-9 && h[1].abs() < 1e-9, "{h:?}");
        let end = tr.y_end();
        assert!((end[0] - 2.0 / 3.0).abs() + end[1].abs() < 1e-8 * (2.0 - 2.0 / 3.0));
        // energy drift along the trajectory
        for i in 0..200 {
            let y = tr.eval(t * i as f64 / 200.0);
            let e = 0.5 * y[1] * y[1] + ss.psi(1.0, y[0]);
            assert!((e + 0.375).abs() < 1e-10 * 0.375);
        }
        // stagnation point
        let tr = integrate_orbit(&ss, -0.5, 1.0, 3.0).unwrap();
        assert_eq!(tr.y_end(), [1.0, 0.0]);
    }

    #[test]
    fn angle_maps_round_trip_and_symmetry() {
        let ss = kepler();
        let w = Well::new(&ss, 1.0).unwrap();
        let o = w.orbit(-0.375).unwrap();
        let p0 = w.angle_to_phase(&o, 0.0).unwrap();
        assert!((p0.r - 2.0 / 3.0).abs() < 1e-14 && p0.w == 0.0);
        let ph = w.angle_to_phase(&o, 0.5).unwrap();
        assert!((ph.r - 2.0).abs() < 1e-9 && ph.w.abs() < 1e-9);
        for i in 1..16 {
            let th = i as f64 / 32.0;
            let a = w.angle_to_phase(&o, th).unwrap();
            let b = w.angle_to_phase(&o, 1.0 - th).unwrap();
            assert!((a.r - b.r).abs() < 1e-9 && (a.w + b.w).abs() < 1e-9);
            // Kepler oracle: r = a(1 − e cos η), 2πθ = η − e sin η
            let (sa, se) = (4.0 / 3.0, 0.5);
            let mut eta = 2.0 * PI * th;
            for _ in 0..50 {
                eta -= (eta - se * eta.sin() - 2.0 * PI * th) / (1.0 - se * eta.cos());
            }
            assert!((a.r - sa * (1.0 - se * eta.cos())).abs() < 1e-10, "{th}");
            let back = w.phase_to_angle(a).unwrap();
            assert!((back.theta - th).abs() < 1e-10 && (back.e + 0.375).abs() < 1e-12);
        }
        let at = w.phase_to_angle(PhasePoint { r: 1.0, w: 0.0 });
        assert!(matches!(at, Err(Error::AtEllipticPoint)));
        let p = w.phase_to_angle(PhasePoint { r: 2.0 / 3.0, w: 0.0 }).unwrap();
        assert!(p.theta.abs() < 1e-7);
    }

    #[test]
    fn angle_of_radius_conventions() {
        let ss = kepler();
        assert_eq!(angle_of_radius(&ss, 1.5, ss.psi(1.0, 1.5), 1.0).unwrap(), 0.5);
        assert_eq!(angle_of_radius(&ss, 0.8, ss.psi(1.0, 0.8), 1.0).unwrap(), 0.0);
        assert!(angle_of_radius(&ss, 1.5, ss.psi(1.0, 1.5) - 1e-3, 1.0).is_err());
        let w = Well::new(&ss, 1.0).unwrap();
        let o = w.orbit(-0.4).unwrap();
        assert!(angle_of_radius(&ss, o.r_minus, -0.4, 1.0).unwrap().abs() < 1e-15);
        // bisection of the dense trajectory
        let t = w.period(&o);
        let tr = w.flow(&o, 0.5 * t).unwrap();
        for &r in &[0.75, 1.0, 1.3, 1.6] {
            let (mut a, mut b) = (0.0, 0.5 * t);
            for _ in 0..80 {
                let m = 0.5 * (a + b);
                if tr.eval(m)[0] < r {
                    a = m
                } else {
                    b = m
                }
            }
            let th = angle_of_radius(&ss, r, -0.4, 1.0).unwrap();
            assert!((th - a / t).abs() < 1e-9, "{r}: {th} {}", a / t);
        }
    }

    #[test]
    fn kepler_table_properties() {
        let ss = kepler();
        let table = build_orbit_table(&ss, &GridSpec { n_e: 128, ..Default::default() }).unwrap();
        for r in &table.records {
            let exact = 6.0 * PI * (-2.0 * r.e).powf(-2.5);
            assert!((r.dt_de - exact).abs() < 1e-6 * exact);
            assert!((r.period * r.omega() - 1.0).abs() < 1e-15);
            assert!(r.dt_de > 0.0);
        }
        let xs = &table.x_nodes;
        assert!(xs.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(xs[0], 0.0);
        assert_eq!(*xs.last().unwrap(), 1.0);
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("E,L,r_minus,r_plus,T,omega,dT_dE,dT_dL\n"));
        assert_eq!(text.lines().count(), 129);
    }

    #[test]
    fn turning_points_bracket_the_orbit() {
        let ss = shell(1e-3);
        let w = Well::new(&ss, 1.0).unwrap();
        for &x in &[1e-6, 0.1, 0.5, 1.0] {
            let o = w.orbit_gap(x * w.depth());
            let tol = 1e-12;
            assert!((ss.psi(1.0, o.r_minus) - o.e).abs() < tol && (ss.psi(1.0, o.r_plus) - o.e).abs() < tol);
            for i in 1..=32 {
                let r = o.r_minus + o.width() * i as f64 / 33.0;
                assert!(ss.psi(1.0, r) < o.e);
            }
        }
    }

    #[test]
    fn radial_kepler_eta_vanishes() {
        let p = PolytropeParams::radial(2.0, 1.0, -0.375, 1.0, 1.0, 0.0).unwrap();
        let ss = SteadyState::build(p, &SteadyOptions::default()).unwrap();
        let table = build_orbit_table(&ss, &GridSpec { n_e: 24, n_l: 6, ..Default::default() }).unwrap();
        assert!(table.eta <= 1e-8, "{}", table.eta);
    }

    #[test]
    fn radial_shell_eta_scales_with_eps() {
        let eta = |eps| {
            let p = PolytropeParams::radial(2.0, 1.0, -0.375, 1.0, 1.0, eps).unwrap();
            let ss = SteadyState::build(p, &SteadyOptions::default()).unwrap();
            build_orbit_table(&ss, &GridSpec { n_e: 24, n_l: 6, ..Default::default() }).unwrap().eta
        };
        let (a, b) = (eta(1e-3), eta(5e-4));
        assert!(a > 1e-8 && (a / b - 2.0).abs() < 0.4, "{a} {b}");
    }

    #[test]
    fn angle_map_matches_kepler_equation_and_quadrature() {
        let ss = kepler();
        let w = Well::new(&ss, 1.0).unwrap();
        for e in [-0.49, -0.4, -0.3, -0.1] {
            let o = w.bound_orbit(e).unwrap();
            let map = w.angle_map(&o);
            let t = w.period(&o);
            let ecc = (1.0 + 2.0 * e).sqrt();
            for i in 0..=20 {
                let u = i as f64 / 20.0;
                // u is the eccentric anomaly over π
                let exact = (PI * u - ecc * (PI * u).sin()) / (2.0 * PI);
                assert!((map.theta_of_u(u) - exact).abs() < 5e-13, "{e} {u} {}", map.theta_of_u(u) - exact);
                let r = o.radius_of_u(u);
                assert!((map.theta_of_radius(r) - w.theta_of_radius(&o, t, r)).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn elliptic_expansion_residual_is_first_order() {
        let ss = kepler();
        let thetas: Vec<f64> = (0..64).map(|i| i as f64 / 64.0).collect();
        let gaps: Vec<f64> = (0..7).map(|j| 1e-3 * 0.125 * 4f64.powi(-j)).collect();
        let rep = verify_elliptic_expansion(&ss, 1.0, &thetas, &gaps).unwrap();
        assert!(rep.rows.windows(2).all(|w| w[1].r_residual < w[0].r_residual));
        assert!((0.8..=1.2).contains(&rep.r_order), "{}", rep.r_order);
        assert!((0.8..=1.2).contains(&rep.w_order), "{}", rep.w_order);
    }
}
