//! Steady state → orbit table → angle field → probes → fits.

use serde::Serialize;

use super::config::{ExperimentConfig, Probe};
use crate::decayfit::{burst_envelope, fit_exponent, restrict, window_stability, DecayFit, FitRow, Model, Stability};
use crate::observables::{Kind, ObservableSeries, Observables};
use crate::orbits::{build_orbit_table, OrbitTable};
use crate::potential::{SteadyOptions, SteadyState};
use crate::spectral::{fourier_initial, project_out_kernel, AngleField, DataFamily};
use crate::{Error, Result};

/// Expected decay exponent of a probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Target {
    pub p: f64,
    pub tolerance: f64,
    pub model: Model,
    /// Only a lower bound on the exponent is predicted.
    pub at_least: bool,
}

impl Target {
    pub fn accepts(&self, p: f64) -> bool {
        if self.at_least {
            p >= self.p
        } else {
            (p - self.p).abs() <= self.tolerance
        }
    }
}

/// The rates proven for each observable. In the one-dimensional model:
/// ρ ~ t^{−min(1/2, k−1/2)}, ∂_R U ~ t^{−min(3/2, k)}, ∂_t U ~ t^{−min(2, k)}
/// in general and t^{−5/2} for r_* < R when k ≥ 5/2. In the radial model:
/// ∂_R U ~ (1+|log t|)/t², ρ ~ |log t|/t, and t^{−j} for smooth data
/// supported away from the trapping and vacuum boundaries.
pub fn theorem_target(ss: &SteadyState, data: &DataFamily, kind: Kind, radii: &[f64]) -> Option<Target> {
    let k = ss.params.k;
    let pure = |p: f64, tolerance: f64| Some(Target { p, tolerance, model: Model::PurePower, at_least: false });
    if ss.params.is_radial() {
        let log = |p: f64| Some(Target { p, tolerance: 0.25, model: Model::LogTimesPower, at_least: false });
        return match (data, kind) {
            (DataFamily::Bump { .. }, Kind::Force) => {
                Some(Target { p: 2.5, tolerance: 0.0, model: Model::PurePower, at_least: true })
            }
            (DataFamily::Bump { .. }, _) => None,
            (_, Kind::Force) => log(2.0),
            (_, Kind::Density) => log(1.0),
            _ => None,
        };
    }
    let r_star = ss.elliptic_point(ss.params.l_support()).map(|e| e.r_l).unwrap_or(f64::INFINITY);
    match kind {
        Kind::Density => pure(0.5f64.min(k - 0.5), 0.10),
        Kind::Force => pure(1.5f64.min(k), 0.15),
        Kind::PotentialRate if k >= 2.5 && radii.iter().all(|&r| r > r_star) => pure(2.5, 0.25),
        Kind::PotentialRate => pure(2.0f64.min(k), 0.20),
        Kind::DensityRate => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeFit {
    pub label: String,
    pub kind: Kind,
    pub radii: Vec<f64>,
    /// Fit under the target's model (or the probe's explicit model).
    pub fit: DecayFit,
    /// Every configured model, lowest AICc first.
    pub by_aicc: Vec<DecayFit>,
    pub stability: Stability,
    pub target: Option<Target>,
    pub within: Option<bool>,
}

impl ProbeFit {
    pub fn preferred(&self) -> Model {
        self.by_aicc[0].model
    }

    /// AICc of `a` below that of `b`, when both were fitted.
    pub fn prefers(&self, a: Model, b: Model) -> Option<bool> {
        let get = |m: Model| self.by_aicc.iter().find(|f| f.model == m).map(|f| f.aicc);
        Some(get(a)? < get(b)?)
    }

    pub fn row(&self, experiment_id: &str) -> FitRow {
        FitRow {
            experiment_id: experiment_id.to_string(),
            kind: self.kind.name().to_string(),
            r: self.radii[0],
            fit: self.fit.clone(),
            stable: self.stability.stable,
        }
    }
}

pub fn build_steady(cfg: &ExperimentConfig) -> Result<SteadyState> {
    SteadyState::build(cfg.params()?, &SteadyOptions::default())
}

pub struct Pipeline {
    pub cfg: ExperimentConfig,
    pub data: DataFamily,
    pub ss: SteadyState,
    pub table: OrbitTable,
    pub field: AngleField,
}

impl Pipeline {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let ss = build_steady(cfg)?;
        Self::from_steady(cfg, ss)
    }

    pub fn from_steady(cfg: &ExperimentConfig, ss: SteadyState) -> Result<Self> {
        let data = cfg.data_family()?;
        let table = build_orbit_table(&ss, &cfg.grid_spec())?;
        let mut field = fourier_initial(&ss, &table, data, cfg.grid.m_max, cfg.grid.n_theta)?;
        if cfg.data.project_kernel {
            field = project_out_kernel(&field);
        }
        Ok(Pipeline { cfg: cfg.clone(), data, ss, table, field })
    }

    pub fn observables(&self) -> Result<Observables<'_>> {
        Observables::new(&self.ss, &self.table, &self.field, self.cfg.quadrature)
    }

    fn period_range(&self) -> (f64, f64) {
        let ps = self.table.records.iter().map(|r| r.period);
        let lo = ps.clone().fold(f64::INFINITY, f64::min);
        (lo, ps.fold(0.0, f64::max))
    }

    /// Log-spaced bursts of dense samples. A burst covers `burst_periods`
    /// longest periods, cut to 80% of the distance to the next burst.
    pub fn sample_times(&self) -> Vec<f64> {
        let t = &self.cfg.times;
        let (t_min, t_max) = self.period_range();
        let dt = t_min / t.per_period;
        let n = t.bursts;
        let start = |b: usize| t.t_lo * (t.t_hi / t.t_lo).powf(b as f64 / (n - 1) as f64);
        let mut out = Vec::new();
        for b in 0..n {
            let t0 = start(b);
            let room = if b + 1 < n { 0.8 * (start(b + 1) - t0) } else { f64::INFINITY };
            let len = (t.burst_periods * t_max).min(room);
            let count = (len / dt).ceil() as usize + 1;
            out.extend((0..count).map(|i| t0 + i as f64 * dt));
        }
        out
    }

    /// Spacing that separates bursts in `sample_times`.
    pub fn burst_gap(&self) -> f64 {
        let (t_min, _) = self.period_range();
        3.0 * t_min / self.cfg.times.per_period
    }

    /// Probe radii with ladders resolved; refuses radii at the elliptic
    /// point of the one-dimensional model unless flagged as trapping.
    pub fn probe_radii(&self, probe: &Probe) -> Result<Vec<f64>> {
        let ss = &self.ss;
        let radii = match probe.edge_ladder {
            Some((n, step)) => {
                let slope = ss.dpsi(ss.params.l_support(), ss.rmax);
                (0..n).map(|j| ss.rmax - 10f64.powf(-1.5 - step * j as f64) / slope).collect()
            }
            None => probe.radii.clone(),
        };
        if !ss.params.is_radial() && !probe.trapping {
            let r_star = ss.elliptic_point(ss.params.l_support())?.r_l;
            if let Some(r) = radii.iter().find(|&&r| (r - r_star).abs() < 1e-3 * r_star) {
                return Err(Error::Config(format!(
                    "probe {}: R = {r} lies at the elliptic radius {r_star}; set trapping = true to allow it",
                    probe.label
                )));
            }
        }
        Ok(radii)
    }

    pub fn run_probe(&self, obs: &Observables, probe: &Probe, times: &[f64]) -> Result<Vec<ObservableSeries>> {
        self.probe_radii(probe)?.iter().map(|&r| obs.series(probe.kind, r, times)).collect()
    }

    pub fn target(&self, probe: &Probe, radii: &[f64]) -> Option<Target> {
        let base = theorem_target(&self.ss, &self.data, probe.kind, radii);
        match (probe.target, base) {
            (Some(p), b) => Some(Target {
                p,
                tolerance: probe.tolerance.or(b.map(|b| b.tolerance)).unwrap_or(0.25),
                model: probe.model.or(b.map(|b| b.model)).unwrap_or(Model::PurePower),
                at_least: probe.at_least,
            }),
            (None, Some(mut b)) => {
                if let Some(t) = probe.tolerance {
                    b.tolerance = t;
                }
                if let Some(m) = probe.model {
                    b.model = m;
                }
                Some(b)
            }
            (None, None) => None,
        }
    }

    /// Largest modulus over the probe's radii at each time, then one
    /// envelope point per burst, fitted under every configured model.
    pub fn fit_probe(&self, probe: &Probe, series: &[ObservableSeries]) -> Result<ProbeFit> {
        let first = series.first().ok_or_else(|| Error::Numerical(format!("probe {} has no series", probe.label)))?;
        let samples: Vec<(f64, f64)> = first
            .samples
            .iter()
            .enumerate()
            .map(|(i, &(t, _))| (t, series.iter().map(|s| s.samples[i].1.abs()).fold(0.0, f64::max)))
            .collect();
        let env = burst_envelope(&samples, self.burst_gap())?;
        let env = restrict(&env, self.cfg.times.t_lo, f64::INFINITY);
        let radii: Vec<f64> = series.iter().map(|s| s.r).collect();
        let target = self.target(probe, &radii);
        let model = probe.model.or(target.map(|t| t.model)).unwrap_or(Model::PurePower);
        let mut models = self.cfg.models()?;
        if !models.contains(&model) {
            models.push(model);
        }
        let mut by_aicc: Vec<DecayFit> = models.iter().map(|&m| fit_exponent(&env, m)).collect::<Result<_>>()?;
        by_aicc.sort_by(|a, b| a.aicc.total_cmp(&b.aicc));
        let fit = by_aicc.iter().find(|f| f.model == model).cloned().expect("model fitted");
        let stability = window_stability(&env, model)?;
        let within = target.map(|t| t.accepts(fit.exponent));
        Ok(ProbeFit { label: probe.label.clone(), kind: probe.kind, radii, fit, by_aicc, stability, target, within })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = "schema = 1\nid = \"t\"\n[model]\nmode = \"one-dim\"\nk = 2.0\ne0 = -0.375\nlbar = 1.0\neps = 0.0\n\
        [grid]\nn_e = 64\nm_max = 8\nn_theta = 64\n[data]\nfamily = \"radial-velocity\"\n\
        [times]\nt_lo = 100.0\nt_hi = 10000.0\nbursts = 5\n";

    #[test]
    fn bursts_are_separated_and_targets_follow_k() {
        let cfg = ExperimentConfig::parse(SMALL).unwrap();
        let p = Pipeline::new(&cfg).unwrap();
        let ts = p.sample_times();
        let gaps = ts.windows(2).filter(|w| w[1] - w[0] > p.burst_gap()).count();
        assert_eq!(gaps, 4);
        assert_eq!(ts[0], 100.0);
        let f = theorem_target(&p.ss, &p.data, Kind::Force, &[0.8]).unwrap();
        assert_eq!((f.p, f.tolerance), (1.5, 0.15));
        let d = theorem_target(&p.ss, &p.data, Kind::Density, &[0.8]).unwrap();
        assert_eq!(d.p, 0.5);
        // exterior rate needs k >= 5/2
        let u = theorem_target(&p.ss, &p.data, Kind::PotentialRate, &[1.3]).unwrap();
        assert_eq!(u.p, 2.0);
    }

    #[test]
    fn probes_at_the_elliptic_radius_are_refused() {
        let cfg = ExperimentConfig::parse(&format!("{SMALL}[[probe]]\nkind = \"force\"\nradius = 1.0\n")).unwrap();
        let p = Pipeline::new(&cfg).unwrap();
        let probe = &cfg.probes().unwrap()[0];
        assert!(matches!(p.probe_radii(probe), Err(Error::Config(_))));
    }
}
