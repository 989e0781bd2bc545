//! Numerical checks of the structural properties the decay estimates rest on.
//!
//! Each check returns a [`CheckEntry`]; a [`VerificationReport`] collects them
//! in order and decides whether a configuration may be used for decay runs.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::numeric::quad::Rule;
use crate::numeric::roots::bisect;
use crate::orbits::{verify_elliptic_expansion, OrbitTable, Well};
use crate::potential::SteadyState;
use crate::spectral::{fourier_initial, hr_coeff, DataFamily};
use crate::{Error, Result};

pub const MONOTONE_PERIOD: &str = "monotone_period";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Measure {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckEntry {
    pub name: String,
    /// The property under test, as a formula.
    pub statement: String,
    pub pass: bool,
    pub mandatory: bool,
    pub measured: Vec<Measure>,
    pub tolerance: f64,
    pub notes: String,
}

impl CheckEntry {
    fn new(name: &str, statement: &str, tolerance: f64) -> Self {
        CheckEntry {
            name: name.into(),
            statement: statement.into(),
            pass: false,
            mandatory: true,
            measured: Vec::new(),
            tolerance,
            notes: String::new(),
        }
    }

    fn measure(mut self, name: impl Into<String>, value: f64) -> Self {
        self.measured.push(Measure { name: name.into(), value });
        self
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.measured.iter().find(|m| m.name == name).map(|m| m.value)
    }
}

/// Append-only list of check results tied to a configuration fingerprint.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub fingerprint: String,
    entries: Vec<CheckEntry>,
}

impl VerificationReport {
    pub fn new(fingerprint: impl Into<String>) -> Self {
        VerificationReport { fingerprint: fingerprint.into(), entries: Vec::new() }
    }

    pub fn push(&mut self, entry: CheckEntry) {
        self.entries.push(entry);
    }

    pub fn entries(&self) -> &[CheckEntry] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&CheckEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn failures(&self) -> Vec<&CheckEntry> {
        self.entries.iter().filter(|e| e.mandatory && !e.pass).collect()
    }

    pub fn passed(&self) -> bool {
        self.failures().is_empty()
    }

    /// Ok when decay experiments may run on this configuration. A missing or
    /// failed period-monotonicity check always refuses.
    pub fn bless(&self) -> Result<()> {
        match self.get(MONOTONE_PERIOD) {
            Some(e) if e.pass => {}
            Some(e) => return Err(Error::VerificationFailed(format!("{}: {}", e.name, e.notes))),
            None => return Err(Error::VerificationFailed(format!("{MONOTONE_PERIOD} was not run"))),
        }
        let failed: Vec<&str> = self.failures().iter().map(|e| e.name.as_str()).collect();
        if failed.is_empty() {
            Ok(())
        } else {
            Err(Error::VerificationFailed(failed.join(", ")))
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn render_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "configuration {}", self.fingerprint);
        let _ = writeln!(s, "{:<22} {:<5} {:>10}  measured", "check", "pass", "tolerance");
        for e in &self.entries {
            let vals: Vec<String> = e.measured.iter().map(|m| format!("{}={:.6e}", m.name, m.value)).collect();
            let flag = match (e.pass, e.mandatory) {
                (true, _) => "yes",
                (false, true) => "NO",
                (false, false) => "(no)",
            };
            let _ = writeln!(s, "{:<22} {:<5} {:>10.3e}  {}", e.name, flag, e.tolerance, vals.join(" "));
            if !e.notes.is_empty() {
                let _ = writeln!(s, "{:<22}   {}", "", e.notes);
            }
        }
        let _ = writeln!(s, "overall: {}", if self.passed() { "pass" } else { "FAIL" });
        s
    }
}

/// Value at 0 of the interpolating polynomial through (x, y) (Neville).
fn extrapolate_to_zero(xs: &[f64], ys: &[f64]) -> f64 {
    let mut p = ys.to_vec();
    let n = xs.len();
    for k in 1..n {
        for i in 0..n - k {
            p[i] = (xs[i + k] * p[i] - xs[i] * p[i + 1]) / (xs[i + k] - xs[i]);
        }
    }
    p[0]
}

/// Limit of the quadrature period at the bottom of the well against 2π/√Ψ''(r_L).
pub fn check_tmin(ss: &SteadyState, l: f64) -> Result<CheckEntry> {
    let tol = 1e-6;
    let well = Well::new(ss, l)?;
    let ep = well.ep;
    let delta = 1e-2 * well.depth().max(1e-12 * ep.e_min.abs());
    let gaps: Vec<f64> = (0..7).map(|j| delta * 4f64.powi(-j)).collect();
    let periods: Vec<f64> = gaps.iter().map(|&de| well.period_quadrature(&well.orbit_gap(de))).collect();
    let limit = extrapolate_to_zero(&gaps, &periods);
    let curvature = ss.psi_derivs(l, ep.r_l)[2];
    let predicted = 2.0 * PI / curvature.sqrt();
    let rel = (limit - predicted).abs() / predicted;
    let mut e = CheckEntry::new("tmin", "T(E_min, L) = 2π/√Ψ_L''(r_L)", tol)
        .measure("L", l)
        .measure("extrapolated", limit)
        .measure("predicted", predicted)
        .measure("rel_error", rel);
    e.pass = rel < tol;
    Ok(e)
}

/// min ∂_E T over the table; fails carrying the worst node.
pub fn check_monotone_period(table: &OrbitTable) -> CheckEntry {
    let mut e = CheckEntry::new(MONOTONE_PERIOD, "∂_E T(E, L) > 0", 0.0);
    match table.argmin_dt_de() {
        Some(worst) => {
            e = e.measure("min_dT_dE", worst.dt_de).measure("at_E", worst.e).measure("at_L", worst.l);
            e.pass = worst.dt_de > 0.0;
            if !e.pass {
                e.notes = format!("dT/dE = {:e} at E = {}, L = {}", worst.dt_de, worst.e, worst.l);
            }
        }
        None => e.notes = "empty table".into(),
    }
    e
}

/// η = max |∂_L T| and its size relative to the period variation in E.
/// Passes when η·(L_max − L_0) stays below a tenth of the smallest period.
pub fn check_dtdl(table: &OrbitTable) -> CheckEntry {
    let tol = 0.1;
    let eta = table.records.iter().fold(0.0f64, |a, r| a.max(r.dt_dl.abs()));
    let min_dt_de = table.records.iter().fold(f64::INFINITY, |a, r| a.min(r.dt_de));
    let t_min = table.records.iter().fold(f64::INFINITY, |a, r| a.min(r.period));
    let span = table.l_nodes.last().unwrap_or(&0.0) - table.l_nodes.first().unwrap_or(&0.0);
    let spread = eta * span / t_min;
    let mut e = CheckEntry::new("dTdL", "|∂_L T(E, L)| ≤ η small", tol)
        .measure("eta", eta)
        .measure("eta_over_min_dT_dE", eta / min_dt_de)
        .measure("relative_spread", spread);
    e.pass = spread.is_finite() && spread < tol;
    if !e.pass {
        e.notes = "period varies strongly with L".into();
    }
    e
}

/// η should scale linearly in ε: `half` is the same model with ε halved.
pub fn check_dtdl_scaling(table: &OrbitTable, half: &OrbitTable) -> CheckEntry {
    let tol = 0.2;
    let eta = table.eta;
    let eta_half = half.eta;
    let mut e = CheckEntry::new("dTdL_scaling", "η(ε) = O(ε)", tol).measure("eta", eta).measure("eta_half", eta_half);
    let t_min = table.records.iter().fold(f64::INFINITY, |a, r| a.min(r.period));
    if eta <= 1e-9 * t_min {
        e.pass = eta_half <= 1e-9 * t_min;
        e.notes = "period independent of L".into();
        return e;
    }
    let ratio = eta_half / eta;
    e = e.measure("ratio", ratio);
    e.pass = (ratio / 0.5 - 1.0).abs() <= tol;
    e
}

fn theta_at(well: &Well, r: f64, e: f64) -> Result<f64> {
    let o = well.bound_orbit(e)?;
    let t = well.period(&o);
    Ok(well.theta_of_radius(&o, t, r))
}

/// |∂_E θ(R, E)|·√(E − Ψ(R))·√(E − E_min) by a centred difference.
fn theta_product(well: &Well, r: f64, e: f64) -> Result<f64> {
    let psi_r = well.ss.psi(well.l(), r);
    let h = 1e-3 * (e - psi_r);
    let d = (theta_at(well, r, e + h)? - theta_at(well, r, e - h)?) / (2.0 * h);
    Ok(d.abs() * (e - psi_r).sqrt() * (e - well.ep.e_min).sqrt())
}

/// Sup over the inner decade of an approach relative to the sup over the
/// outer one. ∂_E θ may vanish at isolated energies, so only growth counts.
fn growth(vals: &[f64]) -> f64 {
    let mid = vals.len() / 2;
    let sup = |v: &[f64]| v.iter().cloned().fold(0.0, f64::max);
    let (outer, inner) = (sup(&vals[..=mid]), sup(&vals[mid..]));
    if inner == 0.0 {
        0.0
    } else {
        inner / outer
    }
}

/// The normalised product must not grow by more than a factor 3 along each
/// two-decade approach: E ↓ Ψ(R) at every radius in `radii`, and E ↓ E_min
/// along radii closing in on r_L from either side.
pub fn check_theta_regularity(ss: &SteadyState, l: f64, radii: &[f64]) -> Result<CheckEntry> {
    let tol = 3.0;
    let well = Well::new(ss, l)?;
    let ep = well.ep;
    let e0 = ss.params.e0;
    let steps: Vec<f64> = (0..9).map(|j| 10f64.powf(-0.25 * j as f64)).collect();
    let mut e = CheckEntry::new("theta_regularity", "|∂_E θ(R,E)| ≤ C/(√(E−Ψ(R))√(E−E_min))", tol);
    let mut worst: f64 = 0.0;
    for &r in radii {
        let psi_r = ss.psi(l, r);
        if !(psi_r < e0) {
            e.notes.push_str(&format!("R = {r} outside the support; "));
            continue;
        }
        let vals: Vec<f64> = steps
            .par_iter()
            .map(|&s| theta_product(&well, r, psi_r + 0.5 * s * (e0 - psi_r)))
            .collect::<Result<_>>()?;
        let b = growth(&vals);
        worst = worst.max(b);
        e = e.measure(format!("growth_R={r}"), b);
    }
    let top = well.orbit_gap(0.25 * well.depth());
    for (side, edge) in [("inner", top.r_minus), ("outer", top.r_plus)] {
        let x0 = 0.5 * (edge - ep.r_l);
        let vals: Vec<f64> = steps
            .par_iter()
            .map(|&s| {
                let r = ep.r_l + x0 * s * s;
                let rise = ss.psi(l, r) - ep.e_min;
                theta_product(&well, r, ep.e_min + 4.0 * rise)
            })
            .collect::<Result<_>>()?;
        let b = growth(&vals);
        worst = worst.max(b);
        e = e.measure(format!("growth_{side}_to_E_min"), b);
    }
    e = e.measure("worst_growth", worst);
    e.pass = worst.is_finite() && worst <= tol;
    Ok(e)
}

/// |ĝ(m, E)|·|m|^k/√(E − E_min) must not grow toward E_min: its supremum over
/// nodes with (E − E_min)/(E0 − E_min) < 1e-3 may exceed the supremum over
/// the rest of the grid by at most a factor 3.
pub fn check_fourier_vanishing(
    ss: &SteadyState,
    table: &OrbitTable,
    data: DataFamily,
    k: u32,
    m_max: usize,
) -> Result<CheckEntry> {
    let tol = 3.0;
    let field = fourier_initial(ss, table, data, m_max, 8 * m_max)?;
    let ne = table.n_e();
    let (mut inner, mut outer) = (0.0f64, 0.0f64);
    for (node, rec) in table.records.iter().enumerate() {
        let ep = &table.elliptic[node / ne];
        let de = rec.e - ep.e_min;
        let x = table.x_nodes[node % ne];
        if !(de > 0.0) {
            continue;
        }
        let s = (1..=m_max as i64)
            .map(|m| field.g(node, m).norm() * (m as f64).powi(k as i32) / de.sqrt())
            .fold(0.0, f64::max);
        if x < 1e-3 {
            inner = inner.max(s);
        } else {
            outer = outer.max(s);
        }
    }
    let name = format!("fourier_vanishing_{}_k{k}", data.name());
    let mut e = CheckEntry::new(&name, "|ĝ(m,E)| ≤ C√(E−E_min)/|m|^k", tol)
        .measure("sup_near_E_min", inner)
        .measure("sup_elsewhere", outer);
    if outer == 0.0 && inner == 0.0 {
        e.pass = true;
        e.notes = "all non-zero modes vanish".into();
    } else {
        e = e.measure("growth", inner / outer);
        e.pass = inner <= tol * outer;
    }
    Ok(e)
}

/// Σ_{|m|≤M} |ĥ_R(m)|² integrated against dE/(E − E_min) in the well of L,
/// with `n` nodes per energy piece, in the variable u = log(E − E_min).
fn hr_energy_integral(ss: &SteadyState, l: f64, r: f64, n: usize, m_max: i64) -> Result<f64> {
    let well = Well::new(ss, l)?;
    let ep = well.ep;
    let e0 = ss.params.e0;
    let psi_r = ss.psi(l, r).max(ep.e_min);
    if psi_r >= e0 {
        return Ok(0.0);
    }
    let floor = 1e-300f64;
    let (u0, u1) = ((psi_r - ep.e_min).max(floor).ln(), (e0 - ep.e_min).ln());
    let rule = Rule::sine_squared(n);
    let mut acc = 0.0;
    for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
        let e = ep.e_min + (u0 + (u1 - u0) * x).exp();
        let th = theta_at(&well, r, e.min(e0))?;
        let s: f64 = (-m_max..=m_max).map(|m| if m == 0 { 4.0 * th * th } else { hr_coeff(m, th).powi(2) }).sum();
        acc += w * s;
    }
    Ok(acc * (u1 - u0))
}

/// The weighted sum integrated over L, split at the trapping momentum where
/// r_L = R and at the edges where Ψ_L(R) crosses E0.
fn hr_weighted_sum(ss: &SteadyState, r: f64, n: usize, m_max: i64) -> Result<f64> {
    if !ss.params.is_radial() {
        let l = crate::orbits::l_nodes(ss, 1)[0];
        return hr_energy_integral(ss, l, r, n, m_max);
    }
    let (a, b) = (ss.params.l0, ss.l_max);
    let e0 = ss.params.e0;
    let inside = |l: f64| ss.psi(l, r) < e0;
    let mut cuts = vec![a];
    let scan = 256;
    for i in 0..scan {
        let (la, lb) = (a + (b - a) * i as f64 / scan as f64, a + (b - a) * (i + 1) as f64 / scan as f64);
        if inside(la) != inside(lb) {
            let s = inside(la);
            cuts.push(bisect(|l| inside(l) != s, la, lb, 1e-14));
        }
        let (ra, rb) = (ss.elliptic_point(la)?.r_l, ss.elliptic_point(lb)?.r_l);
        if ra == r {
            cuts.push(la);
        } else if (ra - r) * (rb - r) < 0.0 {
            cuts.push(bisect(|l| ss.elliptic_point(l).map(|p| p.r_l >= r).unwrap_or(true) == (rb >= r), la, lb, 1e-14));
        }
    }
    cuts.push(b);
    cuts.sort_by(f64::total_cmp);
    let rule = Rule::sine_squared(n);
    let mut total = 0.0;
    for w in cuts.windows(2) {
        let (la, lb) = (w[0], w[1]);
        if lb <= la || !inside(0.5 * (la + lb)) {
            continue;
        }
        let vals: Vec<f64> = rule
            .nodes
            .par_iter()
            .map(|&x| hr_energy_integral(ss, la + (lb - la) * x, r, n, m_max))
            .collect::<Result<_>>()?;
        total += (lb - la) * rule.weights.iter().zip(&vals).map(|(w, v)| w * v).sum::<f64>();
    }
    Ok(total)
}

/// Grid-refinement convergence of Σ_m ∫∫ |ĥ_R|²/(E − E_min^L) dE dL.
/// Radii outside [R_min, R_max] are reported but do not affect the verdict.
pub fn check_hr_weighted(ss: &SteadyState, radii: &[f64]) -> Result<CheckEntry> {
    let tol = 0.05;
    let m_max = 64;
    let levels = [16usize, 32, 64];
    let mut e = CheckEntry::new("hR_weighted", "Σ_m ∫∫ |ĥ_R|²/(E−E_min^L) dE dL ≤ C", tol);
    let mut worst: f64 = 0.0;
    for &r in radii {
        let vals: Vec<f64> = levels.iter().map(|&n| hr_weighted_sum(ss, r, n, m_max)).collect::<Result<_>>()?;
        let v = vals[levels.len() - 1];
        e = e.measure(format!("sum_R={r}"), v);
        if r < ss.rmin || r > ss.rmax {
            e.notes.push_str(&format!("R = {r} outside [R_min, R_max], excluded; "));
            continue;
        }
        let change = vals.windows(2).map(|w| ((w[1] - w[0]) / w[1]).abs()).fold(0.0, f64::max);
        e = e.measure(format!("change_R={r}"), change);
        worst = worst.max(change);
    }
    e = e.measure("worst_change", worst);
    e.pass = worst.is_finite() && worst < tol;
    Ok(e)
}

/// Order of the residuals of the harmonic approximation near the elliptic point.
pub fn check_elliptic_expansion(ss: &SteadyState, l: f64) -> Result<CheckEntry> {
    let well = Well::new(ss, l)?;
    let thetas: Vec<f64> = (0..64).map(|i| i as f64 / 64.0).collect();
    let delta = 1e-2 * well.depth();
    let gaps: Vec<f64> = (0..7).map(|j| delta * 4f64.powi(-j)).collect();
    let rep = verify_elliptic_expansion(ss, l, &thetas, &gaps)?;
    let mut e = CheckEntry::new("elliptic_expansion", "residual = O(E − E_min)", 0.2)
        .measure("r_order", rep.r_order)
        .measure("w_order", rep.w_order);
    e.pass = [rep.r_order, rep.w_order].iter().all(|o| (o - 1.0).abs() <= 0.2);
    Ok(e)
}
