//! Acceptance criteria A1–A8, one pass/fail line each.
//!
//! Run with `cargo test -p phasemix --test acceptance`. The heavy criteria
//! (A3–A5) take several minutes each.

use std::f64::consts::PI;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use phasemix::cli::config::ExperimentConfig;
use phasemix::cli::pipeline::{build_steady, Pipeline, ProbeFit};
use phasemix::cli::run_verification;
use phasemix::decayfit::Model;
use phasemix::observables::{Direct, Kind, Observables, QuadSpec};
use phasemix::orbits::{angle_to_phase, build_orbit_table, phase_to_angle, GridSpec, Well};
use phasemix::potential::{PolytropeParams, SteadyOptions, SteadyState};
use phasemix::spectral::{fourier_initial, propagate, DataFamily};
use phasemix::verify::check_tmin;
use phasemix::Result;

struct Outcome {
    pass: bool,
    detail: String,
}

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn one_dim(k: f64, eps: f64) -> Result<SteadyState> {
    SteadyState::build(PolytropeParams::one_dim(k, -0.375, 1.0, 1.0, eps)?, &SteadyOptions::default())
}

fn a1() -> Result<Outcome> {
    let ss = one_dim(2.0, 0.0)?;
    let e_min = ss.elliptic_point(1.0)?.e_min;
    let well = Well::new(&ss, 1.0)?;
    let mut worst = 0.0f64;
    for j in 0..20 {
        // the bottom of the well itself has no orbit; start just above it
        let e = if j == 0 { e_min + 1e-9 } else { e_min + (-0.05 - e_min) * j as f64 / 19.0 };
        let want = 2.0 * PI * (-2.0 * e).powf(-1.5);
        // quadrature, not the closed form the library uses for ε = 0
        let t = well.period_quadrature(&well.bound_orbit(e)?);
        worst = worst.max((t - want).abs() / want);
    }
    Ok(Outcome { pass: worst < 1e-8, detail: format!("max relative period error {worst:.2e} (limit 1e-8)") })
}

fn a2() -> Result<Outcome> {
    let mut pass = true;
    let mut detail = Vec::new();
    for (name, eps) in [("Kepler", 0.0), ("shell eps=1e-3", 1e-3)] {
        let ss = one_dim(2.0, eps)?;
        let c = check_tmin(&ss, 1.0)?;
        pass &= c.pass;
        detail.push(format!("{name}: rel error {:.2e}", c.value("rel_error").unwrap_or(f64::NAN)));
    }
    Ok(Outcome { pass, detail: detail.join(", ") + " (limit 1e-6)" })
}

const KEPLER_BASE: &str = r#"schema = 1
id = "a3"
[model]
mode = "one-dim"
k = K
e0 = -0.375
lbar = 1.0
eps = 0.0
[grid]
n_e = 1024
m_max = 128
n_theta = 512
[data]
family = "radial-velocity"
[times]
t_lo = 100.0
t_hi = 10000.0
bursts = 40
"#;

fn fit_all(pipe: &Pipeline) -> Result<Vec<ProbeFit>> {
    let obs = pipe.observables()?;
    let times = pipe.sample_times();
    pipe.cfg
        .probes()?
        .iter()
        .map(|p| {
            let series = pipe.run_probe(&obs, p, &times)?;
            pipe.fit_probe(p, &series)
        })
        .collect()
}

fn describe(f: &ProbeFit) -> String {
    let t = f.target.expect("every acceptance probe has a target");
    format!(
        "{} p={:.3}±{:.3} ({} {}{}){}",
        f.label,
        f.fit.exponent,
        f.fit.ci_halfwidth,
        if t.at_least { ">=" } else { "target" },
        t.p,
        if t.at_least { String::new() } else { format!("±{}", t.tolerance) },
        if f.stability.stable { "" } else { " UNSTABLE" }
    )
}

fn a3() -> Result<Outcome> {
    let runs: [(f64, &str); 6] = [
        (1.0, "[[probe]]\nlabel = \"rho-k1\"\nkind = \"density\"\nedge_ladder = 13\n"),
        (0.75, "[[probe]]\nlabel = \"rho-k0.75\"\nkind = \"density\"\nedge_ladder = 13\n"),
        (2.0, "[[probe]]\nlabel = \"force-k2\"\nkind = \"force\"\nradius = 0.8\n"),
        (1.2, "[[probe]]\nlabel = \"force-k1.2\"\nkind = \"force\"\nradius = 0.8\n"),
        (
            3.0,
            "[[probe]]\nlabel = \"dtU-k3\"\nkind = \"potential_rate\"\nradius = 0.8\n\
             [[probe]]\nlabel = \"dtU-exterior-k3\"\nkind = \"potential_rate\"\nradius = 1.3\n",
        ),
        (1.5, "[[probe]]\nlabel = \"dtU-k1.5\"\nkind = \"potential_rate\"\nradius = 0.8\n"),
    ];
    let mut pass = true;
    let mut detail = Vec::new();
    for (k, probes) in runs {
        let cfg = ExperimentConfig::parse(&(KEPLER_BASE.replace("K", &format!("{k:?}")) + probes))?;
        let pipe = Pipeline::new(&cfg)?;
        for f in fit_all(&pipe)? {
            pass &= f.within == Some(true) && f.stability.stable;
            detail.push(describe(&f));
        }
    }
    Ok(Outcome { pass, detail: detail.join("; ") })
}

fn a4() -> Result<Outcome> {
    let cfg = ExperimentConfig::load(&configs().join("shell-radial-k2-l1.cfg"))?;
    let pipe = Pipeline::new(&cfg)?;
    let mut pass = true;
    let mut detail = Vec::new();
    for f in fit_all(&pipe)? {
        let prefers = f.prefers(Model::LogTimesPower, Model::PurePower) == Some(true);
        pass &= f.within == Some(true) && prefers;
        detail.push(format!(
            "{} (AICc {} LogTimesPower over PurePower; best {})",
            describe(&f),
            if prefers { "prefers" } else { "does not prefer" },
            f.preferred().name()
        ));
    }
    Ok(Outcome { pass, detail: detail.join("; ") })
}

fn a5() -> Result<Outcome> {
    let cfg = ExperimentConfig::load(&configs().join("notrap-radial.cfg"))?;
    let pipe = Pipeline::new(&cfg)?;
    let fits = fit_all(&pipe)?;
    let pass = fits.iter().all(|f| f.kind == Kind::Force && f.fit.exponent >= 2.5);
    Ok(Outcome { pass, detail: fits.iter().map(describe).collect::<Vec<_>>().join("; ") })
}

fn a6() -> Result<Outcome> {
    let ss = one_dim(2.0, 1e-3)?;
    let table = build_orbit_table(&ss, &GridSpec { n_e: 256, ..Default::default() })?;
    let l = ss.params.l_support();
    let ep = ss.elliptic_point(l)?;
    let mut notes = Vec::new();

    let probes = [(Kind::Force, 1.3), (Kind::Force, 0.8), (Kind::Density, 0.8), (Kind::PotentialRate, 1.6), (Kind::DensityRate, 1.1)];
    let mut route = 0.0f64;
    for data in [DataFamily::RadialVelocity, DataFamily::Tilted, DataFamily::Radius] {
        let f = fourier_initial(&ss, &table, data.clone(), 48, 192)?;
        let obs = Observables::new(&ss, &table, &f, QuadSpec::default())?;
        let dir = Direct::new(&ss, data, false);
        for (kind, r) in probes {
            let eng = obs.probe(kind, r)?;
            let mut pairs = Vec::new();
            for t in [0.0, 1.0, 10.0] {
                pairs.push((eng.value(t), dir.value(kind, r, t)?));
            }
            let amp = pairs.iter().map(|p| p.1.abs()).fold(0.0, f64::max).max(1e-300);
            route = route.max(pairs.iter().map(|p| (p.0 - p.1).abs() / amp).fold(0.0, f64::max));
        }
    }
    notes.push(format!("routes {route:.1e}"));

    let data = DataFamily::Tilted;
    let f = fourier_initial(&ss, &table, data.clone(), 64, 256)?;
    let mut parseval = 0.0f64;
    for node in [3, 60, 200] {
        let e = f.e[node];
        let spectral: f64 = (-64..=64).map(|m| f.g(node, m).norm_sqr()).sum();
        let n = 2048;
        let mut direct = 0.0;
        for i in 0..n {
            let th = (i as f64 + 0.5) / n as f64;
            let p = angle_to_phase(&ss, th, e, l)?;
            direct += data.value(p.r, p.w, th, e, l, ep.r_l).powi(2) / n as f64;
        }
        parseval = parseval.max((spectral - direct).abs() / direct.max(1e-300));
    }
    notes.push(format!("Parseval {parseval:.1e}"));

    let a = propagate(&propagate(&f, &table, 1.0)?, &table, 9.0)?;
    let b = propagate(&f, &table, 10.0)?;
    let scale = f.max_amplitude().max(1e-300);
    let semigroup = a.coeffs.iter().zip(&b.coeffs).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max) / scale;
    let unitary = b.coeffs.iter().zip(&f.coeffs).map(|(x, y)| (x.norm() - y.norm()).abs()).fold(0.0, f64::max) / scale;
    notes.push(format!("semigroup {semigroup:.1e}, unitarity {unitary:.1e}"));

    let dir = Direct::new(&ss, DataFamily::Radius, false);
    let m0 = dir.mass(0.0)?;
    let mut mass = 0.0f64;
    for t in [1.0, 10.0, 1000.0] {
        mass = mass.max((dir.mass(t)? - m0).abs() / m0.abs());
    }
    notes.push(format!("mass {mass:.1e}"));

    let well = Well::new(&ss, l)?;
    let mut trip = 0.0f64;
    for i in 0..200 {
        let x = 1e-4 + 0.998 * ((i as f64 * 0.618_033_988_75) % 1.0);
        let th = (i as f64 * 0.414_213_562_37) % 1.0;
        let e = ep.e_min + x * (ss.params.e0 - ep.e_min);
        let p = angle_to_phase(&ss, th, e, l)?;
        let back = phase_to_angle(&ss, p.r, p.w, l)?;
        trip = trip.max(((back.theta - th + 0.5).rem_euclid(1.0) - 0.5).abs()).max((back.e - e).abs() / e.abs());
        let o = well.orbit(e)?;
        let r = o.r_minus + (0.02 + 0.96 * x) * (o.r_plus - o.r_minus);
        let w = (2.0 * (e - ss.psi(l, r))).sqrt();
        let q = angle_to_phase(&ss, phase_to_angle(&ss, r, w, l)?.theta, e, l)?;
        trip = trip.max((q.r - r).abs() / r);
    }
    notes.push(format!("round trips {trip:.1e}"));

    let pass = route < 1e-4 && parseval < 1e-10 && semigroup < 1e-10 && unitary < 1e-10 && mass < 1e-10 && trip < 1e-8;
    Ok(Outcome { pass, detail: notes.join(", ") })
}

fn a7() -> Result<Outcome> {
    let mut pass = true;
    let mut detail = Vec::new();
    for name in ["kepler-1d.cfg", "shell-1d-k2.cfg", "shell-radial-k2-l1.cfg"] {
        let cfg = ExperimentConfig::load(&configs().join(name))?;
        let ss = build_steady(&cfg)?;
        let table = build_orbit_table(&ss, &cfg.grid_spec())?;
        let report = run_verification(&cfg, &ss, &table, &cfg.data_family()?)?;
        let required = [
            "tmin",
            "monotone_period",
            "theta_regularity",
            "hR_weighted",
            "elliptic_expansion",
        ];
        let mut missing: Vec<&str> = required.iter().copied().filter(|n| report.get(n).is_none()).collect();
        if !report.entries().iter().any(|e| e.name.starts_with("fourier_vanishing")) {
            missing.push("fourier_vanishing");
        }
        if ss.params.is_radial() {
            missing.extend(["dTdL", "dTdL_scaling"].iter().filter(|n| report.get(n).is_none()));
        }
        let failed: Vec<String> = report.failures().iter().map(|e| e.name.clone()).collect();
        let ok = report.passed() && missing.is_empty();
        pass &= ok;
        let order = report.get("elliptic_expansion").and_then(|e| e.value("r_order")).unwrap_or(f64::NAN);
        detail.push(format!(
            "{name}: {} (elliptic order {order:.3}){}{}",
            if ok { "all pass" } else { "FAIL" },
            if failed.is_empty() { String::new() } else { format!(" failed {failed:?}") },
            if missing.is_empty() { String::new() } else { format!(" missing {missing:?}") }
        ));
    }
    Ok(Outcome { pass, detail: detail.join("; ") })
}

/// Linear regression of y on x: (slope, R²).
fn regression(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    (sxy / sxx, sxy * sxy / (sxx * syy))
}

fn a8() -> Result<Outcome> {
    let cfg = ExperimentConfig::parse(&KEPLER_BASE.replace("K", "2.0"))?;
    let pipe = Pipeline::new(&cfg)?;
    let obs = pipe.observables()?;
    let r_star = pipe.ss.elliptic_point(1.0)?.r_l;
    let d = pipe.ss.rmax - r_star;
    // the value at one instant depends on the phase of the slowest
    // oscillation, so take the largest modulus over a short window at t = 10³
    let times: Vec<f64> = (0..=800).map(|i| 1000.0 + 0.05 * i as f64).collect();
    let js: Vec<f64> = (1..=6).map(f64::from).collect();
    let mut vals = Vec::new();
    for &j in &js {
        let eng = obs.probe(Kind::PotentialRate, r_star + 2f64.powf(-j) * d)?;
        vals.push(eng.series(&times).into_iter().map(f64::abs).fold(0.0, f64::max));
    }
    let (slope, r2) = regression(&js, &vals);
    let shown: Vec<String> = vals.iter().map(|v| format!("{v:.3e}")).collect();
    Ok(Outcome {
        pass: slope > 0.0 && r2 >= 0.8,
        detail: format!("max|dtU| over t in [1000,1040] = [{}]; slope {slope:.3e}, R^2 {r2:.3}", shown.join(", ")),
    })
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Result<Outcome>, Duration); 8] = [
        ("A1", a1, Duration::from_secs(1)),
        ("A2", a2, Duration::from_secs(10)),
        ("A3", a3, Duration::from_secs(30 * 60)),
        ("A4", a4, Duration::from_secs(60 * 60)),
        ("A5", a5, Duration::from_secs(30 * 60)),
        ("A6", a6, Duration::from_secs(5 * 60)),
        ("A7", a7, Duration::from_secs(10 * 60)),
        ("A8", a8, Duration::from_secs(30 * 60)),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| a.starts_with('A')).collect();
    let mut failed = 0;
    for (name, run, budget) in criteria {
        if !only.is_empty() && !only.iter().any(|o| o == name) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let took = start.elapsed();
        let (pass, detail) = match outcome {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        let in_time = took <= budget;
        if !(pass && in_time) {
            failed += 1;
        }
        println!(
            "{name} {} [{:.1}s{}] {detail}",
            if pass && in_time { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            if in_time { String::new() } else { format!(" over budget {}s", budget.as_secs()) }
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
