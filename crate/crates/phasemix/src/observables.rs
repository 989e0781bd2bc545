//! Density, field and potential rate of the transported perturbation.
//!
//! Spectral route: every mode is an integral over actions of
//! e^{−2πimω t}·A_m. Changing variables to the frequency q = ω makes the
//! phase linear, so each integral is a Filon sum over a spline of the
//! amplitude in q that is built once per probe and reused for all times.
//! Knots are graded geometrically toward every point where the amplitude
//! has a power-law singularity (support edges, E = Ψ(R)); those points set
//! the decay rates.
//!
//! Direct route: quadrature of f(t, θ, E) = f₀(θ − ωt, E) on the flow
//! against the indicator kernels, used to cross-check the spectral sums.

use crate::error::{Error, Result};
use crate::numeric::filon::{EndPiece, OscAmplitude, OscPanel};
use crate::numeric::quad::Rule;
use crate::numeric::spline::{Spline, SplineKnots};
use crate::orbits::{OrbitTable, Well};
use crate::potential::{EllipticPoint, SteadyState};
use crate::spectral::{hr_coeff, wg_coeffs, AngleField, DataFamily};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::Write;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Kind {
    Density,
    DensityRate,
    Force,
    PotentialRate,
}

impl Kind {
    pub fn name(&self) -> &'static str {
        match self {
            Kind::Density => "density",
            Kind::DensityRate => "density_rate",
            Kind::Force => "force",
            Kind::PotentialRate => "potential_rate",
        }
    }

    pub fn parse(s: &str) -> Option<Kind> {
        Some(match s {
            "density" => Kind::Density,
            "density_rate" => Kind::DensityRate,
            "force" => Kind::Force,
            "potential_rate" => Kind::PotentialRate,
            _ => return None,
        })
    }
}

/// Knot placement and truncation controls of the spectral route.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadSpec {
    /// Growth factor of the geometric knot clusters.
    pub ratio: f64,
    /// First knot offset from a singular point, relative to the panel length.
    pub min_gap: f64,
    /// Knots across the smooth middle of a panel.
    pub n_mid: usize,
    /// Tanh-sinh level of the angular-momentum integral (radial model).
    pub l_level: u32,
    /// Modes whose amplitude stays below this fraction of the largest are skipped.
    pub skip: f64,
}

impl Default for QuadSpec {
    fn default() -> Self {
        QuadSpec { ratio: 1.08, min_gap: 1e-10, n_mid: 256, l_level: 4, skip: 1e-14 }
    }
}

/// One sampled observable.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObservableSeries {
    pub kind: Kind,
    pub r: f64,
    pub samples: Vec<(f64, f64)>,
    pub m_max: usize,
    pub grid_e: usize,
    pub grid_l: usize,
    pub data_family: String,
    pub projected: bool,
}

impl ObservableSeries {
    pub fn write_csv<W: Write>(&self, mut out: W, header: bool) -> Result<()> {
        if header {
            writeln!(out, "kind,R,t,value,M_max,grid_E,grid_L,data_family,projected")?;
        }
        for &(t, v) in &self.samples {
            writeln!(
                out,
                "{},{},{},{:e},{},{},{},{},{}",
                self.kind.name(),
                self.r,
                t,
                v,
                self.m_max,
                self.grid_e,
                self.grid_l,
                self.data_family,
                self.projected
            )?;
        }
        Ok(())
    }
}

/// Offsets (from the left end, from the right end) of knots on a panel of
/// length `len`, geometric toward both ends and uniform in the middle.
pub(crate) fn graded(len: f64, spec: &QuadSpec) -> Vec<(f64, f64)> {
    let h_max = len / spec.n_mid.max(2) as f64;
    let half = 0.5 * len;
    let side = || {
        let mut v = vec![0.0];
        let mut o = 0.0;
        let mut step = (spec.min_gap * len).min(h_max);
        while o + step < half {
            o += step;
            v.push(o);
            step = (step * spec.ratio).min(h_max);
        }
        (v, step)
    };
    let (left, step) = side();
    let (mut right, _) = side();
    // drop the innermost right knot if the two halves nearly touch
    if let (Some(&a), Some(&b)) = (left.last(), right.last()) {
        if len - b - a < 0.5 * step && right.len() > 1 {
            right.pop();
        }
    }
    let mut out: Vec<(f64, f64)> = left.iter().map(|&o| (o, len - o)).collect();
    out.extend(right.iter().rev().map(|&o| (len - o, o)));
    out
}

/// Table data of one L row, interpolated in the energy fraction x.
#[derive(Debug, Clone)]
pub(crate) struct RowInterp {
    pub ep: EllipticPoint,
    pub depth: f64,
    period: Spline<f64>,
    s_knots: SplineKnots,
    /// ĝ(m) and its spline curvatures per mode, m = −M..M.
    g: Vec<(Vec<Complex64>, Vec<Complex64>)>,
}

impl RowInterp {
    fn new(table: &OrbitTable, field: &AngleField, j: usize) -> Self {
        let ne = table.n_e();
        let ep = table.elliptic[j];
        let depth = (table.record(j, ne - 1).e - ep.e_min).max(0.0);
        let xs = table.x_nodes.clone();
        let ts: Vec<f64> = table.row(j).iter().map(|r| r.period).collect();
        let period = Spline::new(xs.clone(), ts);
        let s_knots = SplineKnots::new(xs.iter().map(|x| x.sqrt()).collect());
        let nm = field.n_modes();
        let g = (0..nm)
            .map(|k| {
                let y: Vec<Complex64> = (0..ne).map(|i| field.coeffs[(j * ne + i) * nm + k]).collect();
                let m2 = s_knots.second_derivatives(&y);
                (y, m2)
            })
            .collect();
        RowInterp { ep, depth, period, s_knots, g }
    }

    /// (T, dT/dx).
    fn period(&self, x: f64) -> (f64, f64) {
        self.period.eval_d(x)
    }

    /// ĝ(m) at x for the listed modes (offset m + M).
    fn ghat(&self, x: f64, m_max: usize, modes: &[i64], out: &mut Vec<Complex64>) {
        let s = x.max(0.0).sqrt();
        out.clear();
        for &m in modes {
            let (y, m2) = &self.g[(m + m_max as i64) as usize];
            out.push(self.s_knots.eval(y, m2, s));
        }
    }
}

/// A frequency panel with the amplitude of each retained mode.
#[derive(Debug, Clone)]
struct Panel {
    osc: OscPanel,
    amps: Vec<OscAmplitude>,
}

/// Spectral evaluator of one observable at one probe radius.
#[derive(Debug, Clone)]
pub struct ProbeEngine {
    pub kind: Kind,
    pub r: f64,
    pub prefactor: f64,
    /// Modes carried by the panels (m = 0 excluded).
    modes: Vec<i64>,
    panels: Vec<Panel>,
    /// Time-independent m = 0 contribution, prefactor included.
    pub static_part: f64,
    /// Sum over m > 0 only, doubling the real part (real data).
    symmetric: bool,
}

impl ProbeEngine {
    fn zero(kind: Kind, r: f64) -> Self {
        ProbeEngine { kind, r, prefactor: 0.0, modes: Vec::new(), panels: Vec::new(), static_part: 0.0, symmetric: true }
    }

    pub fn modes(&self) -> &[i64] {
        &self.modes
    }

    pub fn n_knots(&self) -> usize {
        self.panels.iter().map(|p| p.osc.q().len()).sum()
    }

    /// Full complex value; the imaginary part is a consistency residue.
    pub fn value_complex(&self, t: f64) -> Complex64 {
        let mut acc = Complex64::default();
        let mut base = Vec::new();
        let mut z1 = Vec::new();
        let mut zm = Vec::new();
        let mut zc = Vec::new();
        for p in &self.panels {
            let q = p.osc.q();
            // e^{−2πi q t} with the phase reduced before scaling by m
            base.clear();
            base.extend(q.iter().map(|&qi| (t * qi).rem_euclid(1.0)));
            z1.clear();
            z1.extend(base.iter().map(|&b| Complex64::from_polar(1.0, -2.0 * PI * b)));
            zm.clear();
            zm.resize(q.len(), Complex64::new(1.0, 0.0));
            let mut m_cur = 0i64;
            for (k, &m) in self.modes.iter().enumerate() {
                let am = m.abs();
                if am != m_cur {
                    if am % 16 == 0 || am - m_cur > 1 {
                        for (v, &b) in zm.iter_mut().zip(&base) {
                            *v = Complex64::from_polar(1.0, -2.0 * PI * (am as f64 * b).rem_euclid(1.0));
                        }
                    } else {
                        for (v, w) in zm.iter_mut().zip(&z1) {
                            *v *= w;
                        }
                    }
                    m_cur = am;
                }
                let nu = -2.0 * PI * m as f64 * t;
                let v = if m > 0 {
                    p.osc.integrate(&p.amps[k], nu, &zm)
                } else {
                    zc.clear();
                    zc.extend(zm.iter().map(|v| v.conj()));
                    p.osc.integrate(&p.amps[k], nu, &zc)
                };
                acc += if self.symmetric { Complex64::new(2.0 * v.re, 0.0) } else { v };
            }
        }
        acc * self.prefactor + self.static_part
    }

    pub fn value(&self, t: f64) -> f64 {
        self.value_complex(t).re
    }

    pub fn series(&self, times: &[f64]) -> Vec<f64> {
        times.par_iter().map(|&t| self.value(t)).collect()
    }
}

/// Spectral observables of one angle field.
pub struct Observables<'a> {
    pub ss: &'a SteadyState,
    pub table: &'a OrbitTable,
    pub field: &'a AngleField,
    pub spec: QuadSpec,
    rows: Vec<RowInterp>,
    symmetric: bool,
}

impl<'a> Observables<'a> {
    /// `field` must hold the data at t = 0.
    pub fn new(ss: &'a SteadyState, table: &'a OrbitTable, field: &'a AngleField, spec: QuadSpec) -> Result<Self> {
        if field.l_nodes != table.l_nodes || field.x_nodes != table.x_nodes {
            return Err(Error::GridMismatch);
        }
        let rows = (0..table.l_nodes.len()).into_par_iter().map(|j| RowInterp::new(table, field, j)).collect();
        let m = field.m_max as i64;
        let symmetric = (0..field.n_nodes()).all(|n| {
            (1..=m).all(|k| {
                let (a, b) = (field.g(n, k), field.g(n, -k));
                (a - b.conj()).norm() <= 1e-12 * (1.0 + a.norm())
            }) && field.g(n, 0).im.abs() <= 1e-12
        });
        Ok(Observables { ss, table, field, spec, rows, symmetric })
    }

    /// Uses the full ±m sum even for real data, exposing the imaginary residue.
    pub fn with_full_sum(mut self) -> Self {
        self.symmetric = false;
        self
    }

    pub fn probe(&self, kind: Kind, r: f64) -> Result<ProbeEngine> {
        if !(r > 0.0) {
            return Err(Error::OutOfRange { what: "R", value: r, lo: 0.0, hi: f64::INFINITY });
        }
        if self.ss.params.is_radial() {
            crate::observables::radial::build(self, kind, r)
        } else {
            self.build_one_dim(kind, r)
        }
    }

    pub fn series(&self, kind: Kind, r: f64, times: &[f64]) -> Result<ObservableSeries> {
        let eng = self.probe(kind, r)?;
        let vals = eng.series(times);
        Ok(self.wrap(kind, r, times.iter().copied().zip(vals).collect()))
    }

    pub(crate) fn wrap(&self, kind: Kind, r: f64, samples: Vec<(f64, f64)>) -> ObservableSeries {
        ObservableSeries {
            kind,
            r,
            samples,
            m_max: self.field.m_max,
            grid_e: self.table.n_e(),
            grid_l: self.table.l_nodes.len(),
            data_family: self.field.family.name().to_string(),
            projected: self.field.projected,
        }
    }

    pub fn density(&self, r: f64, t: f64) -> Result<f64> {
        Ok(self.probe(Kind::Density, r)?.value(t))
    }

    pub fn density_rate(&self, r: f64, t: f64) -> Result<f64> {
        Ok(self.probe(Kind::DensityRate, r)?.value(t))
    }

    pub fn force(&self, r: f64, t: f64) -> Result<f64> {
        Ok(self.probe(Kind::Force, r)?.value(t))
    }

    pub fn potential_rate(&self, r: f64, t: f64) -> Result<f64> {
        Ok(self.probe(Kind::PotentialRate, r)?.value(t))
    }

    pub(crate) fn rows(&self) -> &[RowInterp] {
        &self.rows
    }

    pub(crate) fn symmetric(&self) -> bool {
        self.symmetric
    }

    /// Modes in the sum: 0..=M (real data) or −M..=M.
    pub(crate) fn mode_list(&self) -> Vec<i64> {
        let m = self.field.m_max as i64;
        if self.symmetric {
            (0..=m).collect()
        } else {
            (-m..=m).collect()
        }
    }

    fn build_one_dim(&self, kind: Kind, r: f64) -> Result<ProbeEngine> {
        let ss = self.ss;
        let p = &ss.params;
        let row = &self.rows[0];
        let ep = row.ep;
        let depth = row.depth;
        if depth <= 0.0 {
            return Ok(ProbeEngine::zero(kind, r));
        }
        let well = Well { ss, ep };
        let x_r = (ss.psi(ep.l, r) - ep.e_min) / depth;
        let e0_beta = if p.k < 1.0 { Some(p.k - 1.0) } else { None };
        // panels in x with optional power-law exponents at (left, right)
        let mut pans: Vec<(f64, f64, Option<f64>, Option<f64>)> = Vec::new();
        match kind {
            Kind::Density | Kind::DensityRate => {
                if x_r >= 1.0 {
                    return Ok(ProbeEngine::zero(kind, r));
                }
                let lb = if x_r > 0.0 { Some(-0.5) } else { None };
                pans.push((x_r.max(0.0), 1.0, lb, e0_beta));
            }
            Kind::Force | Kind::PotentialRate => {
                if x_r > 0.0 && x_r < 1.0 {
                    pans.push((0.0, x_r, None, None));
                    pans.push((x_r, 1.0, None, e0_beta));
                } else {
                    pans.push((0.0, 1.0, None, e0_beta));
                }
            }
        }
        let modes = self.mode_list();
        let m_max = self.field.m_max;
        let pref = match kind {
            Kind::Density | Kind::DensityRate => PI / (r * r),
            Kind::Force => 4.0 * PI * PI / (r * r),
            Kind::PotentialRate => 4.0 * PI * PI,
        };
        let mut built = Vec::new();
        for &(xa, xb, lb, rb) in &pans {
            let offs = graded(xb - xa, &self.spec);
            let keep: Vec<(f64, f64)> = offs
                .into_iter()
                .filter(|&(dl, dr)| !(lb.is_some() && dl == 0.0) && !(rb.is_some() && dr == 0.0))
                .collect();
            let per_knot: Vec<(f64, Vec<Complex64>)> = keep
                .par_iter()
                .map_init(Vec::new, |gbuf, &(dl, dr)| {
                    let x = if dl <= dr { xa + dl } else { xb - dr };
                    let (t, tx) = row.period(x);
                    let q = 1.0 / t;
                    let e = ep.e_min + x * depth;
                    let jac = depth * t * t / tx;
                    let weight = p.energy_weight(e) * p.l_weight(ep.l);
                    row.ghat(x, m_max, &modes, gbuf);
                    let o = well.orbit_gap(x * depth);
                    let map = well.angle_map(&o);
                    let mut amp = vec![Complex64::default(); modes.len()];
                    match kind {
                        Kind::Force => {
                            let th = map.theta_of_radius(r);
                            for (k, &m) in modes.iter().enumerate() {
                                let h = if m == 0 { 2.0 * th } else { hr_coeff(m, th) };
                                amp[k] = gbuf[k] * (weight * h * t * jac);
                            }
                        }
                        Kind::PotentialRate => {
                            let wg = wg_coeffs(&map, t, r, m_max);
                            for (k, &m) in modes.iter().enumerate() {
                                let c = if m >= 0 { wg[m as usize].conj() } else { wg[(-m) as usize] };
                                amp[k] = gbuf[k] * c * (weight * t * jac);
                            }
                        }
                        Kind::Density | Kind::DensityRate => {
                            // E − Ψ(r) measured from the panel's left end, which is Ψ(r)
                            let gap = if xa > 0.0 { dl * depth } else { e - ss.psi(ep.l, r) };
                            let th = map.theta_of_radius(r);
                            let inv = 1.0 / (2.0 * gap.max(0.0)).sqrt();
                            for (k, &m) in modes.iter().enumerate() {
                                let c = 2.0 * (2.0 * PI * (m as f64 * th).rem_euclid(1.0)).cos() * inv;
                                let mut a = gbuf[k] * (weight * c * jac);
                                if kind == Kind::DensityRate {
                                    a *= Complex64::new(0.0, -2.0 * PI * m as f64 * q);
                                }
                                amp[k] = a;
                            }
                        }
                    }
                    (q, amp)
                })
                .collect();
            // increasing q is decreasing x
            let mut q: Vec<f64> = per_knot.iter().map(|(q, _)| *q).rev().collect();
            let amps: Vec<Vec<Complex64>> = per_knot.into_iter().map(|(_, a)| a).rev().collect();
            dedupe(&mut q);
            let left = rb.map(|beta| EndPiece { q_end: 1.0 / row.period(xb).0, beta });
            let right = lb.map(|beta| EndPiece { q_end: 1.0 / row.period(xa).0, beta });
            built.push((OscPanel::new(q, left, right), amps));
        }
        Ok(assemble(kind, r, pref, &modes, built, self.symmetric, self.spec.skip))
    }
}

/// Knots must increase strictly; panels are built so they do.
fn dedupe(q: &mut [f64]) {
    debug_assert!(q.windows(2).all(|w| w[1] > w[0]), "frequency knots not increasing");
}

/// Splits per-knot amplitudes into per-mode splines, integrates m = 0 once
/// and drops negligible modes.
pub(crate) fn assemble(
    kind: Kind,
    r: f64,
    pref: f64,
    modes: &[i64],
    built: Vec<(OscPanel, Vec<Vec<Complex64>>)>,
    symmetric: bool,
    skip: f64,
) -> ProbeEngine {
    let mut panels_amp: Vec<(OscPanel, Vec<OscAmplitude>)> = built
        .into_iter()
        .map(|(osc, amps)| {
            let per_mode: Vec<OscAmplitude> = (0..modes.len())
                .map(|k| osc.amplitude(amps.iter().map(|a| a[k]).collect()))
                .collect();
            (osc, per_mode)
        })
        .collect();
    // m = 0 is static
    let mut static_part = 0.0;
    if let Some(k0) = modes.iter().position(|&m| m == 0) {
        for (osc, amps) in &panels_amp {
            let z = vec![Complex64::new(1.0, 0.0); osc.q().len()];
            static_part += osc.integrate(&amps[k0], 0.0, &z).re;
        }
    }
    static_part *= pref;
    // size of each mode: max amplitude times panel width
    let size: Vec<f64> = (0..modes.len())
        .map(|k| {
            panels_amp
                .iter()
                .map(|(osc, amps)| {
                    let q = osc.q();
                    amps[k].max_abs * (q[q.len() - 1] - q[0]).max(f64::MIN_POSITIVE)
                })
                .fold(0.0, f64::max)
        })
        .collect();
    let biggest = size.iter().copied().fold(0.0, f64::max);
    let kept: Vec<usize> =
        (0..modes.len()).filter(|&k| modes[k] != 0 && size[k] > skip * biggest && size[k] > 0.0).collect();
    // order by |m| so phases can be stepped
    let mut kept = kept;
    kept.sort_by_key(|&k| (modes[k].abs(), modes[k]));
    let panels = panels_amp
        .iter_mut()
        .map(|(osc, amps)| Panel { osc: osc.clone(), amps: kept.iter().map(|&k| amps[k].clone()).collect() })
        .collect();
    ProbeEngine {
        kind,
        r,
        prefactor: pref,
        modes: kept.iter().map(|&k| modes[k]).collect(),
        panels,
        static_part,
        symmetric,
    }
}

/// Direct-quadrature evaluator: f(t, θ, E) = f₀(θ − ωt, E) on the flow.
pub struct Direct<'a> {
    pub ss: &'a SteadyState,
    pub data: DataFamily,
    /// Subtract the angle mean of g₀ (kernel-projected data).
    pub projected: bool,
    /// Gauss–Legendre panels per energy segment.
    pub panels: usize,
    /// Nodes per L segment (radial model).
    pub l_nodes: usize,
}

struct OrbitSample {
    e: f64,
    weight: f64,
    period: f64,
    traj: crate::numeric::dop853::Trajectory<2>,
    map: crate::orbits::AngleMap,
    mean: f64,
}

impl<'a> Direct<'a> {
    pub fn new(ss: &'a SteadyState, data: DataFamily, projected: bool) -> Self {
        Direct { ss, data, projected, panels: 24, l_nodes: 24 }
    }

    fn sample(&self, well: &Well, x: f64, depth: f64) -> Result<Option<OrbitSample>> {
        let p = &self.ss.params;
        let o = well.orbit_gap(x * depth);
        if o.width() <= 0.0 {
            return Ok(None);
        }
        let t = well.period(&o);
        let traj = well.flow(&o, t)?;
        let map = well.angle_map(&o);
        let e = o.e;
        let weight = p.energy_weight(e) * p.l_weight(well.l());
        let mut s = OrbitSample { e, weight, period: t, traj, map, mean: 0.0 };
        if self.projected {
            let g = gl16();
            let mut acc = 0.0;
            for k in 0..16 {
                let a = k as f64 / 16.0;
                acc += g.integrate(a, a + 1.0 / 16.0, |th| self.g(well, &s, th));
            }
            s.mean = acc;
        }
        Ok(Some(s))
    }

    /// g₀ at angle φ (mod 1) of the sampled orbit.
    fn g(&self, well: &Well, s: &OrbitSample, phi: f64) -> f64 {
        let ph = phi.rem_euclid(1.0);
        let y = s.traj.eval(ph * s.period);
        self.data.value(y[0], y[1], ph, s.e, well.l(), well.ep.r_l) - s.mean
    }

    fn dg(&self, well: &Well, s: &OrbitSample, phi: f64) -> f64 {
        let ph = phi.rem_euclid(1.0);
        let y = s.traj.eval(ph * s.period);
        let dpsi = self.ss.dpsi(well.l(), y[0]);
        self.data.angle_derivative(y[0], y[1], dpsi, ph, s.e, well.l(), well.ep.r_l, s.period)
    }

    /// Integral over x ∈ [a, b] with x = a + (b − a) sin²(πv/2), which
    /// absorbs square-root behaviour at both ends.
    fn energy_integral<F: Fn(f64, f64) -> Result<f64> + Sync>(&self, a: f64, b: f64, f: F) -> Result<f64> {
        let g = gl16();
        let n = self.panels;
        let vals: Vec<Result<f64>> = (0..n * g.len())
            .into_par_iter()
            .map(|idx| {
                let (pnl, k) = (idx / g.len(), idx % g.len());
                let v = (pnl as f64 + g.nodes[k]) / n as f64;
                let s = (0.5 * PI * v).sin();
                let x = a + (b - a) * s * s;
                let dxdv = (b - a) * 0.5 * PI * (PI * v).sin();
                // distance to the left end without cancellation
                let dl = (b - a) * s * s;
                Ok(f(x, dl)? * dxdv * g.weights[k] / n as f64)
            })
            .collect();
        vals.into_iter().sum()
    }

    /// Observable at (t, R); the radial model integrates the per-L values
    /// over [L0, Lmax].
    pub fn value(&self, kind: Kind, r: f64, t: f64) -> Result<f64> {
        if self.ss.params.is_radial() {
            self.l_integral(r, |l| self.value_at(kind, r, t, l))
        } else {
            self.value_at(kind, r, t, self.ss.params.l_support())
        }
    }

    /// ∬ f dθ dE (dL) weighted by T; transport leaves it unchanged.
    pub fn mass(&self, t: f64) -> Result<f64> {
        if self.ss.params.is_radial() {
            self.l_integral(f64::NAN, |l| self.mass_at(t, l))
        } else {
            self.mass_at(t, self.ss.params.l_support())
        }
    }

    /// ∫ dL over [L0, Lmax], split where r_L = R and where Ψ_L(R) = E0.
    fn l_integral<F: Fn(f64) -> Result<f64> + Sync>(&self, r: f64, f: F) -> Result<f64> {
        let ss = self.ss;
        let (a, b) = (ss.params.l0, ss.l_max);
        let mut cuts = vec![a, b];
        if r.is_finite() {
            let rl = |l: f64| ss.elliptic_point(l).map(|e| e.r_l).unwrap_or(f64::NAN);
            let above = |l: f64| ss.psi(l, r) > ss.params.e0;
            let n = 64;
            for i in 1..=n {
                let (l0, l1) = (a + (b - a) * (i - 1) as f64 / n as f64, a + (b - a) * i as f64 / n as f64);
                if (rl(l0) - r) * (rl(l1) - r) < 0.0 {
                    cuts.push(crate::numeric::roots::bisect(|l| (rl(l) > r) == (rl(l1) > r), l0, l1, 1e-14));
                }
                if above(l0) != above(l1) {
                    cuts.push(crate::numeric::roots::bisect(|l| above(l) == above(l1), l0, l1, 1e-14));
                }
            }
        }
        cuts.sort_by(f64::total_cmp);
        let rule = Rule::sine_squared(self.l_nodes);
        let mut jobs = Vec::new();
        for w in cuts.windows(2) {
            for (&x, &wt) in rule.nodes.iter().zip(&rule.weights) {
                jobs.push((w[0] + (w[1] - w[0]) * x, wt * (w[1] - w[0])));
            }
        }
        let vals: Vec<Result<f64>> = jobs.par_iter().map(|&(l, w)| Ok(f(l)? * w)).collect();
        vals.into_iter().sum()
    }

    /// Observable restricted to the well of one L (the 1+1 model at L̄).
    pub fn value_at(&self, kind: Kind, r: f64, t: f64, l: f64) -> Result<f64> {
        let ss = self.ss;
        let well = Well::new(ss, l)?;
        let depth = well.depth();
        if depth <= 0.0 {
            return Ok(0.0);
        }
        let x_r = well.rise(r) / depth;
        let ang = gl16();
        match kind {
            Kind::Force | Kind::PotentialRate => {
                let inner = |x: f64, _dl: f64| -> Result<f64> {
                    let Some(s) = self.sample(&well, x, depth)? else { return Ok(0.0) };
                    let th = s.map.theta_of_radius(r);
                    let shift = t / s.period;
                    let mut acc = 0.0;
                    let n = 8;
                    if kind == Kind::Force {
                        let h = 2.0 * th / n as f64;
                        for k in 0..n {
                            let a = -th + k as f64 * h;
                            acc += ang.integrate(a, a + h, |phi| self.g(&well, &s, phi - shift));
                        }
                        Ok(acc * s.weight * s.period)
                    } else {
                        if s.map.orbit.r_plus <= r {
                            return Ok(0.0);
                        }
                        let h = (1.0 - 2.0 * th) / n as f64;
                        for k in 0..n {
                            let a = th + k as f64 * h;
                            acc += ang.integrate(a, a + h, |phi| {
                                let y = s.traj.eval(phi * s.period);
                                self.g(&well, &s, phi - shift) * y[1] / (y[0] * y[0])
                            });
                        }
                        Ok(acc * s.weight * s.period)
                    }
                };
                let total = if x_r > 0.0 && x_r < 1.0 {
                    self.energy_integral(0.0, x_r, &inner)? + self.energy_integral(x_r, 1.0, &inner)?
                } else {
                    self.energy_integral(0.0, 1.0, &inner)?
                };
                let pref = if kind == Kind::Force { 4.0 * PI * PI / (r * r) } else { 4.0 * PI * PI };
                Ok(pref * total * depth)
            }
            Kind::Density | Kind::DensityRate => {
                if x_r >= 1.0 {
                    return Ok(0.0);
                }
                let xa = x_r.max(0.0);
                let inner = |x: f64, dl: f64| -> Result<f64> {
                    let Some(s) = self.sample(&well, x, depth)? else { return Ok(0.0) };
                    let gap = if xa > 0.0 { dl * depth } else { s.e - ss.psi(l, r) };
                    if gap <= 0.0 {
                        return Ok(0.0);
                    }
                    let th = s.map.theta_of_radius(r);
                    let shift = t / s.period;
                    let v = if kind == Kind::Density {
                        self.g(&well, &s, th - shift) + self.g(&well, &s, -th - shift)
                    } else {
                        -(self.dg(&well, &s, th - shift) + self.dg(&well, &s, -th - shift)) / s.period
                    };
                    Ok(s.weight * v / (2.0 * gap).sqrt())
                };
                Ok(PI / (r * r) * self.energy_integral(xa, 1.0, inner)? * depth)
            }
        }
    }

    pub fn mass_at(&self, t: f64, l: f64) -> Result<f64> {
        let well = Well::new(self.ss, l)?;
        let depth = well.depth();
        if depth <= 0.0 {
            return Ok(0.0);
        }
        let ang = gl16();
        let v = self.energy_integral(0.0, 1.0, |x, _| {
            let Some(s) = self.sample(&well, x, depth)? else { return Ok(0.0) };
            let shift = t / s.period;
            let mut acc = 0.0;
            for k in 0..16 {
                let a = k as f64 / 16.0;
                acc += ang.integrate(a, a + 1.0 / 16.0, |phi| self.g(&well, &s, phi - shift));
            }
            Ok(acc * s.weight * s.period)
        })?;
        Ok(v * depth)
    }
}

fn gl16() -> &'static Rule {
    static R: std::sync::OnceLock<Rule> = std::sync::OnceLock::new();
    R.get_or_init(|| Rule::gauss_legendre(16))
}

/// Direct-route force, ∂_R U_f(t, R).
pub fn force_direct(ss: &SteadyState, data: DataFamily, projected: bool, r: f64, t: f64) -> Result<f64> {
    Direct::new(ss, data, projected).value(Kind::Force, r, t)
}

pub mod radial;
