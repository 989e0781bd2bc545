//! Radial model: the mode integrals gain an integral over L.
//!
//! With q = ω(E, L) as the outer variable each mode is
//! ∫ e^{−2πimqt} B_m(q) dq, B_m(q) = ∫_{S(q)} A_m(E(q, L), L) |∂E/∂q| dL,
//! so the same Filon sums apply. S(q) is the set of L whose well contains
//! an orbit of frequency q; B_m loses smoothness only where S(q) changes
//! shape or where the kernel curve E = Ψ_L(R) folds in q, and the q knots
//! are graded toward those points. Table quantities are interpolated in x
//! along each row and by cubic Lagrange across rows.

use super::{assemble, graded, Kind, Observables, ProbeEngine, QuadSpec};
use crate::error::Result;
use crate::numeric::filon::{EndPiece, OscPanel};
use crate::numeric::quad::TanhSinh;
use crate::numeric::roots::{bisect, newton_bisect};
use crate::orbits::Well;
use crate::potential::EllipticPoint;
use crate::spectral::{hr_coeff, wg_coeffs, DataFamily};
use num_complex::Complex64;
use rayon::prelude::*;
use std::f64::consts::PI;

/// Sub-intervals per table cell of the scan grid in L.
const REFINE: usize = 4;

/// Lagrange stencil of up to four table rows around L.
fn stencil(ls: &[f64], l: f64) -> (usize, usize, [f64; 4]) {
    let n = ls.len();
    let k = n.min(4);
    let cell = match ls.partition_point(|&v| v <= l) {
        0 => 0,
        p => (p - 1).min(n.saturating_sub(2)),
    };
    let j0 = cell.saturating_sub(1).min(n - k);
    let mut w = [0.0; 4];
    for a in 0..k {
        let mut v = 1.0;
        for b in 0..k {
            if a != b {
                v *= (l - ls[j0 + b]) / (ls[j0 + a] - ls[j0 + b]);
            }
        }
        w[a] = v;
    }
    (j0, k, w)
}

/// Table data at an arbitrary L.
pub(crate) struct Interp<'o, 'a> {
    obs: &'o Observables<'a>,
}

impl<'o, 'a> Interp<'o, 'a> {
    fn ls(&self) -> &[f64] {
        &self.obs.table.l_nodes
    }

    /// Minimum of Ψ_L, polished by Newton from the interpolated radius.
    pub fn elliptic(&self, l: f64) -> EllipticPoint {
        let ss = self.obs.ss;
        let (j0, k, w) = stencil(self.ls(), l);
        let mut r: f64 = (0..k).map(|a| w[a] * self.obs.table.elliptic[j0 + a].r_l).sum();
        for _ in 0..8 {
            let p = ss.psi_derivs(l, r);
            let step = p[1] / p[2];
            r -= step;
            if step.abs() <= 1e-15 * r {
                break;
            }
        }
        let p = ss.psi_derivs(l, r);
        EllipticPoint { l, r_l: r, e_min: p[0], alpha: p[2].max(0.0).sqrt() }
    }

    /// (T, ∂T/∂x) at relative energy x.
    pub fn period(&self, x: f64, l: f64) -> (f64, f64) {
        let (j0, k, w) = stencil(self.ls(), l);
        let rows = self.obs.rows();
        let (mut t, mut tx) = (0.0, 0.0);
        for a in 0..k {
            let (v, d) = rows[j0 + a].period(x);
            t += w[a] * v;
            tx += w[a] * d;
        }
        (t, tx)
    }

    /// Relative energy of the orbit with frequency q (clamped to [0, 1]).
    pub fn x_of_q(&self, q: f64, l: f64) -> f64 {
        let target = 1.0 / q;
        let (t0, _) = self.period(0.0, l);
        let (t1, _) = self.period(1.0, l);
        if target <= t0 {
            return 0.0;
        }
        if target >= t1 {
            return 1.0;
        }
        newton_bisect(
            |x| {
                let (t, tx) = self.period(x, l);
                (t - target, tx)
            },
            0.0,
            1.0,
            1e-15,
        )
    }

    fn ghat(&self, x: f64, l: f64, modes: &[i64], out: &mut Vec<Complex64>, tmp: &mut Vec<Complex64>) {
        let (j0, k, w) = stencil(self.ls(), l);
        let rows = self.obs.rows();
        out.clear();
        out.resize(modes.len(), Complex64::default());
        for a in 0..k {
            rows[j0 + a].ghat(x, self.obs.field.m_max, modes, tmp);
            for (o, v) in out.iter_mut().zip(tmp.iter()) {
                *o += v * w[a];
            }
        }
    }
}

/// Scan grid in L with cached frequencies of the well edges and of the
/// kernel curve E = Ψ_L(R).
struct Scan {
    l: Vec<f64>,
    q_top: Vec<f64>,
    q_bot: Vec<f64>,
    /// Relative energy of the kernel curve, +∞ where the well lies below it.
    x_r: Vec<f64>,
}

struct Builder<'o, 'a> {
    ip: Interp<'o, 'a>,
    kind: Kind,
    r: f64,
    scan: Scan,
    ts: TanhSinh,
    modes: Vec<i64>,
    /// Exact ĝ for bump data (only m = ±1 is non-zero).
    exact_bump: bool,
}

impl<'o, 'a> Builder<'o, 'a> {
    fn q_top(&self, l: f64) -> f64 {
        1.0 / self.ip.period(0.0, l).0
    }

    fn q_bot(&self, l: f64) -> f64 {
        1.0 / self.ip.period(1.0, l).0
    }

    fn x_r(&self, l: f64) -> f64 {
        let ep = self.ip.elliptic(l);
        let depth = self.ip.obs.ss.params.e0 - ep.e_min;
        if depth <= 0.0 {
            return f64::INFINITY;
        }
        let well = Well { ss: self.ip.obs.ss, ep };
        well.rise(self.r) / depth
    }

    /// Frequency of the kernel curve at L, if it lies inside the well.
    fn q_r(&self, l: f64) -> Option<f64> {
        let x = self.x_r(l);
        (x <= 1.0).then(|| 1.0 / self.ip.period(x, l).0)
    }

    /// Root of a sign change of `f` between scan points a < b.
    fn refine<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
        let fa = f(a);
        bisect(|l| (f(l) > 0.0) != (fa > 0.0), a, b, 1e-15)
    }

    /// Extremum of `f` bracketed by scan points a < c around b.
    fn extremum<F: Fn(f64) -> f64>(f: F, mut a: f64, mut c: f64, maximum: bool) -> f64 {
        let g = 0.5 * (5f64.sqrt() - 1.0);
        let s = if maximum { -1.0 } else { 1.0 };
        let mut x1 = c - g * (c - a);
        let mut x2 = a + g * (c - a);
        let (mut f1, mut f2) = (s * f(x1), s * f(x2));
        for _ in 0..80 {
            if f1 < f2 {
                c = x2;
                x2 = x1;
                f2 = f1;
                x1 = c - g * (c - a);
                f1 = s * f(x1);
            } else {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + g * (c - a);
                f2 = s * f(x2);
            }
        }
        f((a + c) * 0.5)
    }

    /// Frequencies where B_m(q) loses smoothness.
    fn breakpoints(&self) -> Vec<f64> {
        let sc = &self.scan;
        let n = sc.l.len();
        let mut out = vec![sc.q_top[0], sc.q_bot[0], sc.q_top[n - 1]];
        let mut extrema = |vals: &[f64], f: &dyn Fn(f64) -> f64| {
            for i in 1..n - 1 {
                let (a, b, c) = (vals[i - 1], vals[i], vals[i + 1]);
                if !(a.is_finite() && b.is_finite() && c.is_finite()) {
                    continue;
                }
                if (b > a && b >= c) || (b < a && b <= c) {
                    out.push(Self::extremum(f, sc.l[i - 1], sc.l[i + 1], b > a));
                }
            }
        };
        extrema(&sc.q_top, &|l| self.q_top(l));
        extrema(&sc.q_bot, &|l| self.q_bot(l));
        // kernel curve: its ends and folds
        let qr: Vec<f64> = sc.l.iter().zip(&sc.x_r).map(|(&l, &x)| if x <= 1.0 { 1.0 / self.ip.period(x, l).0 } else { f64::NAN }).collect();
        extrema(&qr, &|l| self.q_r(l).unwrap_or(f64::NAN));
        if let Some(q) = self.q_r(sc.l[0]) {
            out.push(q);
        }
        for i in 1..n {
            let (a, b) = (sc.x_r[i - 1], sc.x_r[i]);
            if (a <= 1.0) != (b <= 1.0) {
                let l = Self::refine(|l| self.x_r(l) - 1.0, sc.l[i - 1], sc.l[i]);
                out.push(self.q_bot(l));
            }
        }
        // trapping: the curve touches the bottom of the well where r_L = R
        let ss = self.ip.obs.ss;
        let rl: Vec<f64> = sc.l.iter().map(|&l| self.ip.elliptic(l).r_l).collect();
        for i in 1..n {
            if (rl[i - 1] - self.r) * (rl[i] - self.r) <= 0.0 && rl[i] != rl[i - 1] {
                let l = Self::refine(|l| self.ip.elliptic(l).r_l - self.r, sc.l[i - 1], sc.l[i]);
                out.push(self.q_top(l));
                let _ = ss;
            }
        }
        out.retain(|q| q.is_finite());
        out.sort_by(f64::total_cmp);
        let span = out[out.len() - 1] - out[0];
        out.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * span);
        out
    }

    /// Pieces of S(q) between kernel-curve crossings.
    fn l_pieces(&self, q: f64) -> Vec<(f64, f64)> {
        let sc = &self.scan;
        let n = sc.l.len();
        let inside = |i: usize| sc.q_bot[i] <= q && q <= sc.q_top[i];
        let mut ends: Vec<(f64, f64)> = Vec::new();
        let mut start = if inside(0) { Some(sc.l[0]) } else { None };
        for i in 1..n {
            let (a, b) = (inside(i - 1), inside(i));
            if a == b {
                continue;
            }
            let (la, lb) = (sc.l[i - 1], sc.l[i]);
            // which edge is crossed
            let top = (sc.q_top[i - 1] < q) != (sc.q_top[i] < q);
            let l = if top {
                Self::refine(|l| self.q_top(l) - q, la, lb)
            } else {
                Self::refine(|l| self.q_bot(l) - q, la, lb)
            };
            if b {
                start = Some(l);
            } else if let Some(s) = start.take() {
                ends.push((s, l));
            }
        }
        if let Some(s) = start {
            ends.push((s, sc.l[n - 1]));
        }
        // split where the orbit of frequency q passes E = Ψ_L(R)
        let side = |l: f64, x_r: f64| -> f64 {
            if x_r > 1.0 {
                -1.0
            } else {
                1.0 - q * self.ip.period(x_r, l).0
            }
        };
        let mut pieces = Vec::new();
        for (a, b) in ends {
            let mut cuts = vec![a];
            let mut prev = (a, side(a, self.x_r(a)));
            let interior = sc.l.iter().zip(&sc.x_r).filter(|(&l, _)| l > a && l < b).map(|(&l, &x)| (l, x));
            for (l, x) in interior.chain(std::iter::once((b, self.x_r(b)))) {
                let s = side(l, x);
                if (s > 0.0) != (prev.1 > 0.0) {
                    cuts.push(Self::refine(|l| side(l, self.x_r(l)), prev.0, l));
                }
                prev = (l, s);
            }
            cuts.push(b);
            for w in cuts.windows(2) {
                if w[1] > w[0] {
                    pieces.push((w[0], w[1]));
                }
            }
        }
        pieces
    }

    /// A_m(E(q, L), L)·|∂E/∂q| for every mode.
    fn integrand(&self, q: f64, l: f64, out: &mut [Complex64], g: &mut Vec<Complex64>, tmp: &mut Vec<Complex64>) {
        let obs = self.ip.obs;
        let ss = obs.ss;
        let p = &ss.params;
        let ep = self.ip.elliptic(l);
        let depth = p.e0 - ep.e_min;
        out.iter_mut().for_each(|v| *v = Complex64::default());
        if depth <= 0.0 {
            return;
        }
        let x = self.ip.x_of_q(q, l);
        let (t, tx) = self.ip.period(x, l);
        let e = ep.e_min + x * depth;
        let jac = depth * t * t / tx;
        let weight = p.energy_weight(e) * p.l_weight(l);
        if weight == 0.0 {
            return;
        }
        if self.exact_bump {
            let b = 0.5 * obs.field.family.bump(e, l);
            g.clear();
            g.extend(self.modes.iter().map(|&m| Complex64::new(if m.abs() == 1 { b } else { 0.0 }, 0.0)));
        } else {
            self.ip.ghat(x, l, &self.modes, g, tmp);
        }
        let well = Well { ss, ep };
        let o = well.orbit_gap(x * depth);
        let r = self.r;
        match self.kind {
            Kind::Force => {
                let th = well.theta_of_radius(&o, t, r);
                for (k, &m) in self.modes.iter().enumerate() {
                    let h = if m == 0 { 2.0 * th } else { hr_coeff(m, th) };
                    out[k] = g[k] * (weight * h * t * jac);
                }
            }
            Kind::PotentialRate => {
                let map = well.angle_map(&o);
                let wg = wg_coeffs(&map, t, r, obs.field.m_max);
                for (k, &m) in self.modes.iter().enumerate() {
                    let c = if m >= 0 { wg[m as usize].conj() } else { wg[(-m) as usize] };
                    out[k] = g[k] * c * (weight * t * jac);
                }
            }
            Kind::Density | Kind::DensityRate => {
                let gap = x * depth - well.rise(r);
                if gap <= 0.0 {
                    return;
                }
                let th = well.theta_of_radius(&o, t, r);
                let inv = 1.0 / (2.0 * gap).sqrt();
                for (k, &m) in self.modes.iter().enumerate() {
                    let c = 2.0 * (2.0 * PI * (m as f64 * th).rem_euclid(1.0)).cos() * inv;
                    let mut a = g[k] * (weight * c * jac);
                    if self.kind == Kind::DensityRate {
                        a *= Complex64::new(0.0, -2.0 * PI * m as f64 * q);
                    }
                    out[k] = a;
                }
            }
        }
    }

    /// B_m(q) for every mode.
    fn amplitude(&self, q: f64) -> Vec<Complex64> {
        let nm = self.modes.len();
        let mut acc = vec![Complex64::default(); nm];
        let mut val = vec![Complex64::default(); nm];
        let (mut g, mut tmp) = (Vec::new(), Vec::new());
        for (a, b) in self.l_pieces(q) {
            let len = b - a;
            for i in 0..self.ts.weights.len() {
                let l = if self.ts.left[i] < 0.5 { a + len * self.ts.left[i] } else { b - len * self.ts.right[i] };
                self.integrand(q, l, &mut val, &mut g, &mut tmp);
                let w = self.ts.weights[i] * len;
                for (s, v) in acc.iter_mut().zip(&val) {
                    *s += v * w;
                }
            }
        }
        acc
    }
}

pub(crate) fn build(obs: &Observables, kind: Kind, r: f64) -> Result<ProbeEngine> {
    let ip = Interp { obs };
    let ls = &obs.table.l_nodes;
    let mut grid = Vec::with_capacity(REFINE * ls.len());
    for w in ls.windows(2) {
        for s in 0..REFINE {
            grid.push(w[0] + (w[1] - w[0]) * s as f64 / REFINE as f64);
        }
    }
    grid.push(ls[ls.len() - 1]);
    let q_top = grid.iter().map(|&l| 1.0 / ip.period(0.0, l).0).collect();
    let q_bot = grid.iter().map(|&l| 1.0 / ip.period(1.0, l).0).collect();
    let exact_bump = matches!(obs.field.family, DataFamily::Bump { .. }) && !obs.field.projected;
    let mut b = Builder {
        ip,
        kind,
        r,
        scan: Scan { l: grid, q_top, q_bot, x_r: Vec::new() },
        ts: TanhSinh::new(obs.spec.l_level, 3.2),
        modes: obs.mode_list(),
        exact_bump,
    };
    b.scan.x_r = b.scan.l.iter().map(|&l| b.x_r(l)).collect();
    let bps = b.breakpoints();
    let pref = match kind {
        Kind::Density | Kind::DensityRate => PI / (r * r),
        Kind::Force => 4.0 * PI * PI / (r * r),
        Kind::PotentialRate => 4.0 * PI * PI,
    };
    let mut built = Vec::new();
    for w in bps.windows(2) {
        let (qa, qb) = (w[0], w[1]);
        // knots exclude the breakpoints themselves; the end cells are
        // closed with constant end pieces
        // offsets below ~1e-12·q would collide in floating point
        let spec = QuadSpec { min_gap: obs.spec.min_gap.max(1e-12 * qb / (qb - qa)), ..obs.spec };
        let q: Vec<f64> = graded(qb - qa, &spec)
            .into_iter()
            .filter(|&(dl, dr)| dl > 0.0 && dr > 0.0)
            .map(|(dl, dr)| if dl <= dr { qa + dl } else { qb - dr })
            .collect();
        if q.len() < 4 {
            continue;
        }
        let amps: Vec<Vec<Complex64>> = q.par_iter().map(|&qi| b.amplitude(qi)).collect();
        let left = Some(EndPiece { q_end: qa, beta: 0.0 });
        let right = Some(EndPiece { q_end: qb, beta: 0.0 });
        built.push((OscPanel::new(q, left, right), amps));
    }
    Ok(assemble(kind, r, pref, &b.modes, built, obs.symmetric(), obs.spec.skip))
}
