//! Angle-Fourier representation of phase-space data.
//!
//! f(θ, E[, L]) = Σ_m f̂(m, E[, L]) e^{2πimθ}, with θ = 0 at the inner
//! turning point and the outgoing branch on θ ∈ (0, 1/2). Transport is a
//! phase factor per mode. Coefficients are stored without the energy weight
//! |φ'| so they stay smooth up to the edge of the support; f̂ = weight · ĝ.

use crate::error::{Error, Result};
use crate::numeric::quad::Rule;
use crate::orbits::{AngleMap, OrbitTable, Well};
use crate::potential::SteadyState;
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::Write;
use std::sync::OnceLock;

/// Closed-form initial perturbations g₀.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum DataFamily {
    /// g₀ = w; odd in w, so every angle mean vanishes.
    RadialVelocity,
    /// g₀ = (r − r_L)·w.
    Tilted,
    /// g₀ = B(E)·B(L)·cos(2πθ) with C^∞ bumps supported in the given boxes.
    Bump { e_lo: f64, e_hi: f64, l_lo: f64, l_hi: f64 },
    /// g₀ = 1, a pure kernel state.
    Constant,
    /// g₀ = r; has a non-zero angle mean.
    Radius,
}

impl DataFamily {
    pub fn name(&self) -> &'static str {
        match self {
            DataFamily::RadialVelocity => "radial-velocity",
            DataFamily::Tilted => "tilted",
            DataFamily::Bump { .. } => "bump",
            DataFamily::Constant => "constant",
            DataFamily::Radius => "radius",
        }
    }

    /// Whether every angle mean of g₀ vanishes.
    pub fn is_orthogonal(&self) -> bool {
        matches!(self, DataFamily::RadialVelocity | DataFamily::Tilted | DataFamily::Bump { .. })
    }

    /// g₀ at a phase point of the orbit (θ, E) in the well of L.
    pub fn value(&self, r: f64, w: f64, theta: f64, e: f64, l: f64, r_l: f64) -> f64 {
        match *self {
            DataFamily::RadialVelocity => w,
            DataFamily::Tilted => (r - r_l) * w,
            DataFamily::Bump { .. } => self.bump(e, l) * (2.0 * PI * theta).cos(),
            DataFamily::Constant => 1.0,
            DataFamily::Radius => r,
        }
    }

    /// ∂_θ g₀ along the flow: T·(w ∂_r g₀ − Ψ' ∂_w g₀).
    pub fn angle_derivative(&self, r: f64, w: f64, dpsi: f64, theta: f64, e: f64, l: f64, r_l: f64, period: f64) -> f64 {
        let (gr, gw) = match *self {
            DataFamily::RadialVelocity => (0.0, 1.0),
            DataFamily::Tilted => (w, r - r_l),
            DataFamily::Bump { .. } => return -2.0 * PI * self.bump(e, l) * (2.0 * PI * theta).sin(),
            DataFamily::Constant => (0.0, 0.0),
            DataFamily::Radius => (1.0, 0.0),
        };
        period * (w * gr - dpsi * gw)
    }

    /// B(E)·B(L) of the bump family; 1 for the others.
    pub fn bump(&self, e: f64, l: f64) -> f64 {
        match *self {
            DataFamily::Bump { e_lo, e_hi, l_lo, l_hi } => {
                let be = smooth_bump((e - e_lo) / (e_hi - e_lo));
                if l_hi > l_lo {
                    be * smooth_bump((l - l_lo) / (l_hi - l_lo))
                } else {
                    be
                }
            }
            _ => 1.0,
        }
    }
}

/// exp(1 − 1/(1 − (2x−1)²)) on (0, 1), zero outside; peak value 1.
pub fn smooth_bump(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        return 0.0;
    }
    let y = 2.0 * x - 1.0;
    (1.0 - 1.0 / (1.0 - y * y)).exp()
}

/// Fourier coefficients on the action grid of an orbit table.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleField {
    pub m_max: usize,
    pub l_nodes: Vec<f64>,
    pub x_nodes: Vec<f64>,
    /// Per node, row-major like the table.
    pub e: Vec<f64>,
    pub omega: Vec<f64>,
    /// |φ'(E[, L])| per node.
    pub weight: Vec<f64>,
    /// ĝ(m) per node, m = −M..M at offset m + M.
    pub coeffs: Vec<Complex64>,
    pub time: f64,
    pub family: DataFamily,
    pub projected: bool,
}

impl AngleField {
    pub fn n_modes(&self) -> usize {
        2 * self.m_max + 1
    }

    pub fn n_nodes(&self) -> usize {
        self.e.len()
    }

    pub fn n_e(&self) -> usize {
        self.x_nodes.len()
    }

    /// ĝ(m) at a node.
    pub fn g(&self, node: usize, m: i64) -> Complex64 {
        self.coeffs[node * self.n_modes() + (m + self.m_max as i64) as usize]
    }

    /// f̂(m) = |φ'|·ĝ(m) at a node.
    pub fn fhat(&self, node: usize, m: i64) -> Complex64 {
        self.g(node, m) * self.weight[node]
    }

    pub fn node_modes(&self, node: usize) -> &[Complex64] {
        let n = self.n_modes();
        &self.coeffs[node * n..(node + 1) * n]
    }

    /// Largest |f̂| over all nodes and modes.
    pub fn max_amplitude(&self) -> f64 {
        let n = self.n_modes();
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| c.norm() * self.weight[i / n])
            .fold(0.0, f64::max)
    }

    fn check_grid(&self, table: &OrbitTable) -> Result<()> {
        if self.l_nodes != table.l_nodes || self.x_nodes != table.x_nodes || self.e.len() != table.records.len() {
            return Err(Error::GridMismatch);
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "m,E,L,re,im")?;
        let ne = self.n_e();
        for node in 0..self.n_nodes() {
            let l = self.l_nodes[node / ne];
            for m in -(self.m_max as i64)..=self.m_max as i64 {
                let c = self.fhat(node, m);
                writeln!(out, "{m},{},{l},{},{}", self.e[node], c.re, c.im)?;
            }
        }
        Ok(())
    }
}

/// Samples g₀ on `n_theta` uniform angles per node and transforms.
pub fn fourier_initial(
    ss: &SteadyState,
    table: &OrbitTable,
    data: DataFamily,
    m_max: usize,
    n_theta: usize,
) -> Result<AngleField> {
    if m_max == 0 || n_theta < 4 * m_max {
        return Err(Error::ResolutionTooLow { resolution: n_theta, required: 4 * m_max });
    }
    let p = &ss.params;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_theta);
    let n_modes = 2 * m_max + 1;
    let ne = table.n_e();
    let nodes: Vec<Result<Vec<Complex64>>> = (0..table.records.len())
        .into_par_iter()
        .map(|node| {
            let rec = table.records[node];
            let ep = table.elliptic[node / ne];
            let well = Well { ss, ep };
            let de = (rec.e - ep.e_min).max(0.0);
            let mut out = vec![Complex64::default(); n_modes];
            if de <= 0.0 || rec.r_plus <= rec.r_minus {
                // the orbit is the elliptic point: g₀ is constant in θ
                if !matches!(data, DataFamily::Bump { .. }) {
                    out[m_max] = Complex64::new(data.value(ep.r_l, 0.0, 0.0, rec.e, ep.l, ep.r_l), 0.0);
                }
                return Ok(out);
            }
            if let DataFamily::Bump { .. } = data {
                let b = 0.5 * data.bump(rec.e, ep.l);
                out[m_max - 1] = Complex64::new(b, 0.0);
                out[m_max + 1] = Complex64::new(b, 0.0);
                return Ok(out);
            }
            let o = well.orbit_gap(de);
            let traj = well.flow(&o, rec.period)?;
            let mut buf: Vec<Complex64> = (0..n_theta)
                .map(|k| {
                    let th = k as f64 / n_theta as f64;
                    let y = traj.eval(th * rec.period);
                    Complex64::new(data.value(y[0], y[1], th, rec.e, ep.l, ep.r_l), 0.0)
                })
                .collect();
            fft.process(&mut buf);
            let scale = 1.0 / n_theta as f64;
            out[m_max] = buf[0] * scale;
            for m in 1..=m_max {
                out[m_max + m] = buf[m] * scale;
                out[m_max - m] = buf[n_theta - m] * scale;
            }
            Ok(out)
        })
        .collect();
    let mut coeffs = Vec::with_capacity(table.records.len() * n_modes);
    for n in nodes {
        coeffs.extend(n?);
    }
    Ok(AngleField {
        m_max,
        l_nodes: table.l_nodes.clone(),
        x_nodes: table.x_nodes.clone(),
        e: table.records.iter().map(|r| r.e).collect(),
        omega: table.records.iter().map(|r| r.omega()).collect(),
        weight: table.records.iter().map(|r| p.energy_weight(r.e) * p.l_weight(r.l)).collect(),
        coeffs,
        time: 0.0,
        family: data,
        projected: false,
    })
}

/// e^{−2πimωt} for m = −M..M.
fn mode_phases(omega: f64, t: f64, m_max: usize, out: &mut Vec<Complex64>) {
    // reduce ωt first so large times keep their phase accuracy
    let frac = (omega * t).rem_euclid(1.0);
    let z = Complex64::from_polar(1.0, -2.0 * PI * frac);
    out.clear();
    out.resize(2 * m_max + 1, Complex64::new(1.0, 0.0));
    let mut zp = Complex64::new(1.0, 0.0);
    for m in 1..=m_max {
        zp = if m % 16 == 0 { Complex64::from_polar(1.0, -2.0 * PI * (m as f64 * frac).rem_euclid(1.0)) } else { zp * z };
        out[m_max + m] = zp;
        out[m_max - m] = zp.conj();
    }
}

/// Exact transport over time t: f̂(m) ↦ e^{−2πimω t} f̂(m).
pub fn propagate(field: &AngleField, table: &OrbitTable, t: f64) -> Result<AngleField> {
    field.check_grid(table)?;
    let n = field.n_modes();
    let mut out = field.clone();
    out.coeffs.par_chunks_mut(n).zip(field.omega.par_iter()).for_each_init(Vec::new, |ph, (c, &om)| {
        mode_phases(om, t, field.m_max, ph);
        for (v, z) in c.iter_mut().zip(ph.iter()) {
            *v *= z;
        }
    });
    out.time = field.time + t;
    Ok(out)
}

/// Removes the angle means (the kernel of the transport operator).
pub fn project_out_kernel(field: &AngleField) -> AngleField {
    let mut out = field.clone();
    let n = out.n_modes();
    let m0 = out.m_max;
    for c in out.coeffs.chunks_mut(n) {
        c[m0] = Complex64::default();
    }
    out.projected = true;
    out
}

/// Truncated Fourier sum of f at angle θ for every node.
pub fn reconstruct(field: &AngleField, theta: f64) -> Vec<Complex64> {
    let n = field.n_modes();
    let mut ph = Vec::new();
    // e^{+2πimθ} is the conjugate of the transport phase at ω t = θ
    mode_phases(1.0, theta, field.m_max, &mut ph);
    field
        .coeffs
        .chunks(n)
        .zip(&field.weight)
        .map(|(c, &w)| c.iter().zip(&ph).map(|(v, z)| v * z.conj()).sum::<Complex64>() * w)
        .collect()
}

/// ĥ_R(m) = sin(2πmθ(R,E))/(πm), the transform of χ_{r ≤ R}.
pub fn hr_coeff(m: i64, theta_r: f64) -> f64 {
    let x = (m as f64 * theta_r).rem_euclid(1.0);
    (2.0 * PI * x).sin() / (PI * m as f64)
}

/// ĥ_R(m, E, L) from the turning-point geometry; ZeroMode at m = 0.
pub fn hr_coeffs(ss: &SteadyState, m: i64, e: f64, l: f64, r: f64) -> Result<f64> {
    if m == 0 {
        return Err(Error::ZeroMode);
    }
    if e <= ss.psi(l, r) {
        return Ok(0.0);
    }
    let th = crate::orbits::angle_of_radius(ss, r, e, l)?;
    Ok(hr_coeff(m, th))
}

fn gl8() -> &'static Rule {
    static R: OnceLock<Rule> = OnceLock::new();
    R.get_or_init(|| Rule::gauss_legendre(8))
}

/// ŵg_R(m) for m = 0..=M, the transform of (w/r²)·χ_{r ≥ R} over one orbit.
/// ŵg_R(−m) is the conjugate.
pub fn wg_coeffs(map: &AngleMap, period: f64, r: f64, m_max: usize) -> Vec<Complex64> {
    let o = &map.orbit;
    let mut out = vec![Complex64::default(); m_max + 1];
    if o.r_plus <= r || o.width() <= 0.0 {
        return out;
    }
    // (−2i/T) ∫ sin(2πmθ(r))/r² dr over the outgoing branch above R
    let u0 = if r <= o.r_minus { 0.0 } else { o.u_of_radius(r) };
    let panels = 8 + m_max / 2;
    let h = (1.0 - u0) / panels as f64;
    let rule = gl8();
    let mut acc = vec![0.0; m_max + 1];
    for p in 0..panels {
        let a = u0 + p as f64 * h;
        for (&x, &wt) in rule.nodes.iter().zip(&rule.weights) {
            let u = a + x * h;
            let rr = o.radius_of_u(u);
            let jac = o.width() * 0.5 * PI * (PI * u).sin() / (rr * rr) * wt * h;
            let th = map.theta_of_u(u);
            let z = Complex64::from_polar(1.0, 2.0 * PI * th);
            let mut zm = Complex64::new(1.0, 0.0);
            for (m, s) in acc.iter_mut().enumerate().skip(1) {
                zm = if m % 16 == 0 { Complex64::from_polar(1.0, 2.0 * PI * (m as f64 * th).rem_euclid(1.0)) } else { zm * z };
                *s += zm.im * jac;
            }
        }
    }
    for (m, v) in out.iter_mut().enumerate() {
        *v = Complex64::new(0.0, -2.0 * acc[m] / period);
    }
    out
}

/// ŵg_R(m, E, L) for a single mode.
pub fn wgr_coeffs(ss: &SteadyState, m: i64, e: f64, l: f64, r: f64) -> Result<Complex64> {
    let well = Well::new(ss, l)?;
    let o = well.bound_orbit(e)?;
    let map = well.angle_map(&o);
    let t = well.period(&o);
    let c = wg_coeffs(&map, t, r, m.unsigned_abs() as usize);
    let v = c[m.unsigned_abs() as usize];
    Ok(if m < 0 { v.conj() } else { v })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orbits::{build_orbit_table, GridSpec};
    use crate::potential::{PolytropeParams, SteadyOptions};

    fn kepler(k: f64) -> SteadyState {
        let p = PolytropeParams::one_dim(k, -0.375, 1.0, 1.0, 0.0).unwrap();
        SteadyState::build(p, &SteadyOptions::default()).unwrap()
    }

    fn small_table(ss: &SteadyState) -> OrbitTable {
        build_orbit_table(ss, &GridSpec { n_e: 48, ..Default::default() }).unwrap()
    }

    /// Kepler: w(θ) = a e n sin η/(1 − e cos η) with mean anomaly 2πθ, so
    /// ŵ(m) = −i a e n J'_m(m e) by the Bessel generating function.
    fn kepler_w_hat(m: i64, e_energy: f64) -> Complex64 {
        let a = -1.0 / (2.0 * e_energy);
        let ecc = (1.0 + 2.0 * e_energy).sqrt();
        let n = (-2.0 * e_energy).powf(1.5);
        // J'_m(x) = (J_{m−1} − J_{m+1})/2 by quadrature of Bessel's integral
        let bessel = |k: i64, x: f64| Rule::gauss_legendre(96).integrate(0.0, PI, |s| (k as f64 * s - x * s.sin()).cos()) / PI;
        let x = m as f64 * ecc;
        let jp = if m == 0 { -bessel(1, x) } else { 0.5 * (bessel(m - 1, x) - bessel(m + 1, x)) };
        Complex64::new(0.0, -a * ecc * n * jp)
    }

    #[test]
    fn radial_velocity_coefficients_match_bessel_closed_form() {
        let ss = kepler(2.0);
        let table = small_table(&ss);
        let f = fourier_initial(&ss, &table, DataFamily::RadialVelocity, 16, 64).unwrap();
        for node in [1, 10, 30, 47] {
            for m in [-5i64, -1, 0, 1, 2, 7, 16] {
                let want = kepler_w_hat(m, f.e[node]);
                assert!((f.g(node, m) - want).norm() < 1e-10, "node {node} m {m}: {} vs {want}", f.g(node, m));
            }
        }
    }

    #[test]
    fn constant_data_is_pure_kernel() {
        let ss = kepler(2.0);
        let table = small_table(&ss);
        let f = fourier_initial(&ss, &table, DataFamily::Constant, 8, 32).unwrap();
        for node in 0..f.n_nodes() {
            assert!((f.g(node, 0) - 1.0).norm() < 1e-14);
            assert!((f.fhat(node, 0).re - ss.params.energy_weight(f.e[node])).abs() < 1e-14);
            for m in 1..=8 {
                assert!(f.g(node, m).norm() < 1e-14 && f.g(node, -m).norm() < 1e-14);
            }
        }
        let p = project_out_kernel(&f);
        assert!(p.coeffs.iter().all(|c| c.norm() < 1e-14));
    }

    #[test]
    fn odd_data_has_no_angle_mean_and_conjugate_symmetry() {
        let ss = kepler(2.0);
        let table = small_table(&ss);
        let f = fourier_initial(&ss, &table, DataFamily::Tilted, 12, 48).unwrap();
        for node in 0..f.n_nodes() {
            assert!(f.g(node, 0).norm() < 1e-12);
            for m in 1..=12 {
                assert!((f.g(node, -m) - f.g(node, m).conj()).norm() < 1e-12);
            }
        }
        let once = project_out_kernel(&f);
        assert!(once.coeffs.iter().zip(&f.coeffs).all(|(a, b)| (a - b).norm() < 1e-12));
        let pp = project_out_kernel(&project_out_kernel(&f));
        assert_eq!(pp, project_out_kernel(&f));
    }

    #[test]
    fn resolution_guard() {
        let ss = kepler(2.0);
        let table = small_table(&ss);
        assert!(matches!(
            fourier_initial(&ss, &table, DataFamily::RadialVelocity, 16, 63),
            Err(Error::ResolutionTooLow { .. })
        ));
    }

    #[test]
    fn propagation_is_unitary_and_a_semigroup() {
        let ss = kepler(2.0);
        let table = small_table(&ss);
        let f = fourier_initial(&ss, &table, DataFamily::RadialVelocity, 16, 64).unwrap();
        assert_eq!(propagate(&f, &table, 0.0).unwrap().coeffs, f.coeffs);
        let a = propagate(&propagate(&f, &table, 13.7).unwrap(), &table, 250.3).unwrap();
        let b = propagate(&f, &table, 264.0).unwrap();
        for (x, y) in a.coeffs.iter().zip(&b.coeffs) {
            assert!((x - y).norm() < 1e-12);
        }
        for (x, y) in a.coeffs.iter().zip(&f.coeffs) {
            assert!((x.norm() - y.norm()).abs() < 1e-15);
        }
        let other = build_orbit_table(&ss, &GridSpec { n_e: 40, ..Default::default() }).unwrap();
        assert!(matches!(propagate(&f, &other, 1.0), Err(Error::GridMismatch)));
    }

    #[test]
    fn reconstruction_follows_the_solution_formula() {
        let ss = kepler(2.0);
        let table = small_table(&ss);
        let f = fourier_initial(&ss, &table, DataFamily::RadialVelocity, 32, 128).unwrap();
        // f₀(θ − ωt) from the Kepler equation
        let exact = |node: usize, th: f64, t: f64| {
            let e = f.e[node];
            let ecc = (1.0 + 2.0 * e).sqrt();
            let a = -1.0 / (2.0 * e);
            let mean = 2.0 * PI * (th - f.omega[node] * t);
            let mut eta = mean;
            for _ in 0..50 {
                eta -= (eta - ecc * eta.sin() - mean) / (1.0 - ecc * eta.cos());
            }
            ss.params.energy_weight(e) * a * ecc * (-2.0 * e).powf(1.5) * eta.sin() / (1.0 - ecc * eta.cos())
        };
        let nodes = [5, 20, 40, 46];
        let mut err0 = 0.0f64;
        for i in 0..64 {
            let th = i as f64 / 64.0;
            let vals = reconstruct(&f, th);
            for &n in &nodes {
                err0 = err0.max((vals[n] - exact(n, th, 0.0)).norm());
            }
        }
        for &t in &[1.0, 10.0, 100.0] {
            let ft = propagate(&f, &table, t).unwrap();
            for &th in &[0.0, 0.13, 0.5, 0.77] {
                let vals = reconstruct(&ft, th);
                for &n in &nodes {
                    let err = (vals[n] - exact(n, th, t)).norm();
                    assert!(err <= err0 + 1e-9, "{t} {th} {n}: {err:e} vs {err0:e}");
                    assert!(vals[n].im.abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn hr_closed_form_values() {
        assert!((hr_coeff(1, 0.25) - 1.0 / PI).abs() < 1e-16);
        assert!(hr_coeff(2, 0.5).abs() < 1e-15);
        let ss = kepler(2.0);
        assert_eq!(hr_coeffs(&ss, 3, -0.45, 1.0, 1.9).unwrap(), 0.0);
        assert!(matches!(hr_coeffs(&ss, 0, -0.45, 1.0, 1.0), Err(Error::ZeroMode)));
    }

    #[test]
    fn wg_branches_and_brute_force() {
        let ss = kepler(2.0);
        let well = Well::new(&ss, 1.0).unwrap();
        // R > r_L and the orbit stays below R
        assert_eq!(wgr_coeffs(&ss, 3, -0.45, 1.0, 1.9).unwrap(), Complex64::default());
        // full circle when the orbit lies above R
        assert!(wgr_coeffs(&ss, 0, -0.45, 1.0, 0.5).unwrap().norm() < 1e-15);
        for (e, r) in [(-0.4, 1.3), (-0.4, 0.8), (-0.3, 0.6), (-0.2, 2.5)] {
            let o = well.bound_orbit(e).unwrap();
            let t = well.period(&o);
            let traj = well.flow(&o, t).unwrap();
            let th_r = if r <= o.r_minus { 0.0 } else { well.theta_of_radius(&o, t, r) };
            let map = well.angle_map(&o);
            let fast = wg_coeffs(&map, t, r, 12);
            for m in [1i64, 2, 5, 12] {
                // (w/r²) e^{−2πimθ} over θ ∈ [θ_R, 1 − θ_R] on the flow
                let g = Rule::gauss_legendre(64);
                let mut acc = Complex64::default();
                let panels = 16;
                let h = (1.0 - 2.0 * th_r) / panels as f64;
                for p in 0..panels {
                    for (&x, &wt) in g.nodes.iter().zip(&g.weights) {
                        let th = th_r + (p as f64 + x) * h;
                        let y = traj.eval(th * t);
                        acc += Complex64::from_polar(y[1] / (y[0] * y[0]), -2.0 * PI * m as f64 * th) * (wt * h);
                    }
                }
                assert!((fast[m as usize] - acc).norm() < 1e-7, "{e} {r} {m}: {} {acc}", fast[m as usize]);
            }
        }
    }
}
