//! Experiment runner behind the `phasemix` binary.

pub mod config;
pub mod manifest;
pub mod pipeline;

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::decayfit::write_fit_csv;
use crate::orbits::{build_orbit_table, GridSpec, OrbitTable};
use crate::potential::{SteadyOptions, SteadyState};
use crate::spectral::DataFamily;
use crate::verify::{self, VerificationReport};
use crate::{Error, Result};
use config::ExperimentConfig;
use manifest::{Recorder, RunManifest};
use pipeline::{build_steady, Pipeline, ProbeFit};

pub const STAMP: &str = "verify.stamp";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Steady,
    Verify,
    Mix,
    Decay,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Steady => "steady",
            Command::Verify => "verify",
            Command::Mix => "mix",
            Command::Decay => "decay",
        }
    }
}

/// Process exit status for a failed command.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidParams(_) => 2,
        Error::VerificationFailed(_) => 3,
        _ => 4,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stamp {
    pub fingerprint: String,
    pub passed: bool,
}

fn resolved_constants(cfg: &ExperimentConfig) -> serde_json::Value {
    json!({
        "force_prefactor": "R^2 dU/dR = 4 pi^2 sum_m int f(m) h_R(m) T dE [dL]",
        "potential_rate_prefactor": "dU/dt = 4 pi^2 sum_m int f(m) conj(wg_R(m)) T dE [dL]",
        "density_prefactor": "rho = (pi / R^2) int (f(theta) + f(-theta)) / sqrt(2 (E - Psi(R))) dE [dL]",
        "quadrature": cfg.quadrature,
        "steady_options": {
            "tau": SteadyOptions::default().tau,
            "tol": SteadyOptions::default().tol,
            "max_iter": SteadyOptions::default().max_iter,
            "n_grid": SteadyOptions::default().n_grid,
        },
        "verify_tolerances": {
            "tmin_rel": 1e-6,
            "dTdL_relative_spread": 0.1,
            "dTdL_scaling": 0.2,
            "theta_growth": 3.0,
            "fourier_growth": 3.0,
            "hR_refinement": 0.05,
            "elliptic_order": [0.8, 1.2],
        },
        "window_stability": "|p1 - p2| <= 2 sqrt(ci1^2 + ci2^2)",
    })
}

/// Runs one command end to end; the manifest records the outcome either way.
pub fn run(cmd: Command, config_path: &Path, out: &Path, seed: u64) -> Result<()> {
    let cfg = ExperimentConfig::load(config_path)?;
    let manifest = RunManifest {
        tool: "phasemix".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: cmd.name().into(),
        config_id: cfg.id.clone(),
        fingerprint: cfg.fingerprint(),
        config: serde_json::to_value(&cfg)?,
        seed,
        threads: rayon::current_num_threads(),
        resolved: resolved_constants(&cfg),
        complete: false,
        error: None,
        wall_clock_seconds: None,
        stages: Vec::new(),
    };
    let mut rec = Recorder::start(out, manifest)?;
    let result = match cmd {
        Command::Steady => cmd_steady(&cfg, &mut rec),
        Command::Verify => cmd_verify(&cfg, &mut rec),
        Command::Mix => cmd_mix(&cfg, &mut rec).map(|_| ()),
        Command::Decay => cmd_decay(&cfg, &mut rec),
    };
    let err = result.as_ref().err().map(|e| e.to_string());
    rec.finish(err)?;
    result
}

fn steady_stage(cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<SteadyState> {
    let ss = build_steady(cfg)?;
    rec.write("steady.json", ss.to_json()?.as_bytes())?;
    rec.stage("steady", &["steady.json"])?;
    Ok(ss)
}

pub fn cmd_steady(cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    let ss = steady_stage(cfg, rec)?;
    let table = build_orbit_table(&ss, &cfg.grid_spec())?;
    let mut csv = Vec::new();
    table.write_csv(&mut csv)?;
    rec.write("orbit_table.csv", &csv)?;
    let summary = json!({
        "Rmin": ss.rmin,
        "Rmax": ss.rmax,
        "Lmax": ss.l_max,
        "total_mass": ss.total_mass,
        "iterations": ss.iterations,
        "residual": ss.residual,
        "elliptic": table.elliptic,
        "min_dT_dE": table.min_dt_de,
        "eta": table.eta,
    });
    rec.write("steady_summary.json", serde_json::to_string_pretty(&summary)?.as_bytes())?;
    rec.stage("orbits", &["orbit_table.csv", "steady_summary.json"])
}

/// Radii probed by the verification suite for the well of `l`.
fn verify_radii(ss: &SteadyState, l: f64) -> Result<Vec<f64>> {
    let well = crate::orbits::Well::new(ss, l)?;
    let top = well.orbit_gap(well.depth());
    let r_l = well.ep.r_l;
    Ok(vec![r_l + 0.6 * (top.r_minus - r_l), r_l + 0.6 * (top.r_plus - r_l)])
}

/// The full suite for one configuration.
pub fn run_verification(
    cfg: &ExperimentConfig,
    ss: &SteadyState,
    table: &OrbitTable,
    data: &DataFamily,
) -> Result<VerificationReport> {
    let v = &cfg.verify;
    let p = &ss.params;
    let mut report = VerificationReport::new(cfg.fingerprint());
    let l_mid = if p.is_radial() { 0.5 * (p.l0 + ss.l_max) } else { p.l_support() };
    report.push(verify::check_tmin(ss, p.l_support())?);
    if p.is_radial() {
        report.push(verify::check_tmin(ss, l_mid)?);
    }
    report.push(verify::check_monotone_period(table));
    if p.is_radial() {
        report.push(verify::check_dtdl(table));
        if p.eps > 0.0 {
            let mut half = *p;
            half.eps *= 0.5;
            let ss_half = SteadyState::build(half, &SteadyOptions::default())?;
            let spec = GridSpec { n_e: v.scaling_n_e, n_l: v.scaling_n_l, ..cfg.grid_spec() };
            let a = build_orbit_table(ss, &spec)?;
            let b = build_orbit_table(&ss_half, &spec)?;
            report.push(verify::check_dtdl_scaling(&a, &b));
        }
    }
    let radii = if v.radii.is_empty() { verify_radii(ss, l_mid)? } else { v.radii.clone() };
    report.push(verify::check_theta_regularity(ss, l_mid, &radii)?);
    report.push(verify::check_fourier_vanishing(ss, table, *data, v.fourier_k, v.fourier_m_max)?);
    let mut hr_radii = radii.clone();
    if p.is_radial() && v.trap {
        hr_radii.push(ss.elliptic_point(l_mid)?.r_l);
    }
    // inside the central vacuum: excluded from the verdict, the sum is 0
    hr_radii.push(0.5 * ss.rmin);
    report.push(verify::check_hr_weighted(ss, &hr_radii)?);
    report.push(verify::check_elliptic_expansion(ss, l_mid)?);
    Ok(report)
}

pub fn cmd_verify(cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    let ss = steady_stage(cfg, rec)?;
    let table = build_orbit_table(&ss, &cfg.grid_spec());
    let report = match table {
        Ok(table) => run_verification(cfg, &ss, &table, &cfg.data_family()?)?,
        // a non-monotone period aborts the table; report it as the failed check
        Err(Error::MonotonicityViolation { e, l, dt_de }) => {
            let mut r = VerificationReport::new(cfg.fingerprint());
            r.push(verify::CheckEntry {
                name: verify::MONOTONE_PERIOD.into(),
                statement: "∂_E T(E, L) > 0".into(),
                pass: false,
                mandatory: true,
                measured: vec![
                    verify::Measure { name: "min_dT_dE".into(), value: dt_de },
                    verify::Measure { name: "at_E".into(), value: e },
                    verify::Measure { name: "at_L".into(), value: l },
                ],
                tolerance: 0.0,
                notes: format!("dT/dE = {dt_de:e} at E = {e}, L = {l}"),
            });
            r
        }
        Err(e) => return Err(e),
    };
    rec.write("verify.json", report.to_json()?.as_bytes())?;
    rec.write("verify.txt", report.render_table().as_bytes())?;
    let stamp = Stamp { fingerprint: report.fingerprint.clone(), passed: report.bless().is_ok() };
    rec.write(STAMP, serde_json::to_string_pretty(&stamp)?.as_bytes())?;
    rec.stage("verify", &["verify.json", "verify.txt", STAMP])?;
    report.bless()
}

pub fn cmd_mix(cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<(Pipeline, Vec<Vec<crate::observables::ObservableSeries>>)> {
    let ss = steady_stage(cfg, rec)?;
    let pipe = Pipeline::from_steady(cfg, ss)?;
    let obs = pipe.observables()?;
    let times = pipe.sample_times();
    let mut all = Vec::new();
    let mut files = Vec::new();
    for probe in cfg.probes()? {
        let series = pipe.run_probe(&obs, &probe, &times)?;
        let mut csv = Vec::new();
        for (i, s) in series.iter().enumerate() {
            s.write_csv(&mut csv, i == 0)?;
        }
        let name = format!("series/{}.csv", probe.label);
        rec.write(&name, &csv)?;
        files.push(name);
        all.push(series);
    }
    let names: Vec<&str> = files.iter().map(String::as_str).collect();
    rec.stage("mix", &names)?;
    Ok((pipe, all))
}

fn read_stamp(dir: &Path) -> Option<Stamp> {
    serde_json::from_str(&std::fs::read_to_string(dir.join(STAMP)).ok()?).ok()
}

/// One summary line per probe.
pub fn summary_line(f: &ProbeFit) -> String {
    let kind = match f.kind {
        crate::observables::Kind::Density => "Density",
        crate::observables::Kind::DensityRate => "DensityRate",
        crate::observables::Kind::Force => "Force",
        crate::observables::Kind::PotentialRate => "PotentialRate",
    };
    let mut s = format!("{kind} [{}]: fitted {:.3} ± {:.3} ({})", f.label, f.fit.exponent, f.fit.ci_halfwidth, f.fit.model.name());
    if let Some(t) = f.target {
        let rel = if t.at_least { ">=" } else { "vs" };
        let _ = write!(s, " {rel} target {}", t.p);
        if !t.at_least {
            let _ = write!(s, " ± {}", t.tolerance);
        }
        let _ = write!(s, " -> {}", if f.within == Some(true) { "ok" } else { "MISS" });
    }
    let _ = write!(
        s,
        "; AICc prefers {}; window {}",
        f.preferred().name(),
        if f.stability.stable { "stable" } else { "UNSTABLE" }
    );
    s
}

pub fn cmd_decay(cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    match read_stamp(rec.dir()) {
        Some(s) if s.passed && s.fingerprint == cfg.fingerprint() => {}
        Some(s) if s.fingerprint != cfg.fingerprint() => {
            return Err(Error::VerificationFailed("the verify stamp belongs to a different configuration".into()))
        }
        Some(_) => return Err(Error::VerificationFailed("the last verify run did not pass".into())),
        None => return Err(Error::VerificationFailed(format!("no {STAMP}: run verify first"))),
    }
    let (pipe, all) = cmd_mix(cfg, rec)?;
    let probes = cfg.probes()?;
    let fits: Vec<ProbeFit> = probes.iter().zip(&all).map(|(p, s)| pipe.fit_probe(p, s)).collect::<Result<_>>()?;
    let mut csv = Vec::new();
    let rows: Vec<_> = fits.iter().map(|f| f.row(&cfg.id)).collect();
    write_fit_csv(&mut csv, &rows, true)?;
    rec.write("fits.csv", &csv)?;
    let mut summary = String::from("experiment_id,label,kind,R,model,p,ci,target,tolerance,at_least,within,preferred,stable\n");
    let mut text = format!("{}\n", cfg.id);
    for f in &fits {
        let (tp, tt, al) = f.target.map(|t| (t.p.to_string(), t.tolerance.to_string(), t.at_least)).unwrap_or_default();
        let _ = writeln!(
            summary,
            "{},{},{},{},{},{:.6},{:.6},{},{},{},{},{},{}",
            cfg.id,
            f.label,
            f.kind.name(),
            f.radii[0],
            f.fit.model.name(),
            f.fit.exponent,
            f.fit.ci_halfwidth,
            tp,
            tt,
            al,
            f.within.map(|w| w.to_string()).unwrap_or_default(),
            f.preferred().name(),
            f.stability.stable
        );
        let _ = writeln!(text, "{}", summary_line(f));
    }
    rec.write("summary.csv", summary.as_bytes())?;
    rec.write("summary.txt", text.as_bytes())?;
    rec.stage("decay", &["fits.csv", "summary.csv", "summary.txt"])
}
