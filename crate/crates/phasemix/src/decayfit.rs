//! Envelopes of oscillating observables and algebraic decay exponents.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use std::io::Write;

/// Fewest envelope points a fit accepts.
pub const MIN_POINTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Model {
    /// v ≈ C t^{−p}
    PurePower,
    /// v ≈ C (1 + |log t|) t^{−p}
    LogTimesPower,
    /// v ≈ C t^{−p} / log t
    LogDividedPower,
}

impl Model {
    pub const ALL: [Model; 3] = [Model::PurePower, Model::LogTimesPower, Model::LogDividedPower];

    pub fn name(&self) -> &'static str {
        match self {
            Model::PurePower => "PurePower",
            Model::LogTimesPower => "LogTimesPower",
            Model::LogDividedPower => "LogDividedPower",
        }
    }

    pub fn parse(s: &str) -> Option<Model> {
        Model::ALL.into_iter().find(|m| m.name().eq_ignore_ascii_case(s))
    }

    /// log of the model's non-power factor.
    fn log_shape(&self, t: f64) -> f64 {
        match self {
            Model::PurePower => 0.0,
            Model::LogTimesPower => (1.0 + t.ln().abs()).ln(),
            Model::LogDividedPower => -t.ln().ln(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayFit {
    pub exponent: f64,
    /// log C of the fitted model.
    pub intercept: f64,
    pub model: Model,
    /// Half-width of the 95% confidence interval of the exponent.
    pub ci_halfwidth: f64,
    pub window: (f64, f64),
    pub n_envelope_points: usize,
    pub rss: f64,
    pub aicc: f64,
}

/// Strict local maxima of |value|, endpoints excluded.
pub fn envelope(samples: &[(f64, f64)]) -> Result<Vec<(f64, f64)>> {
    let out: Vec<(f64, f64)> = samples
        .windows(3)
        .filter(|w| {
            let (a, b, c) = (w[0].1.abs(), w[1].1.abs(), w[2].1.abs());
            b > a && b > c
        })
        .map(|w| (w[1].0, w[1].1.abs()))
        .collect();
    if out.len() < MIN_POINTS {
        return Err(Error::TooSparse { found: out.len() });
    }
    Ok(out)
}

/// Largest local maximum in each burst of a burst-sampled series. Bursts
/// are maximal runs of samples whose spacing stays below `gap`.
pub fn burst_envelope(samples: &[(f64, f64)], gap: f64) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=samples.len() {
        if i == samples.len() || samples[i].0 - samples[i - 1].0 > gap {
            let burst = &samples[start..i];
            let best = burst
                .windows(3)
                .filter(|w| w[1].1.abs() > w[0].1.abs() && w[1].1.abs() > w[2].1.abs())
                .map(|w| (w[1].0, w[1].1.abs()))
                .max_by(|a, b| a.1.total_cmp(&b.1));
            out.extend(best);
            start = i;
        }
    }
    if out.len() < MIN_POINTS {
        return Err(Error::TooSparse { found: out.len() });
    }
    Ok(out)
}

/// Least-squares fit of log v − log shape(t) = c − p log t.
pub fn fit_exponent(env: &[(f64, f64)], model: Model) -> Result<DecayFit> {
    let pts: Vec<(f64, f64)> = env.iter().copied().filter(|&(t, v)| t > 0.0 && v > 0.0).collect();
    let n = pts.len();
    if n < MIN_POINTS {
        return Err(Error::TooSparse { found: n });
    }
    if model == Model::LogDividedPower && pts.iter().any(|&(t, _)| t <= 1.0) {
        return Err(Error::InvalidParams("LogDividedPower needs t > 1".into()));
    }
    let x: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
    // logs of ratios to the first value, so a rescaled series only moves the intercept
    let v0 = pts[0].1;
    let y: Vec<f64> = pts.iter().map(|&(t, v)| (v / v0).ln() - model.log_shape(t)).collect();
    let nf = n as f64;
    let xm = x.iter().sum::<f64>() / nf;
    let ym = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - xm) * (v - xm)).sum();
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - xm) * (b - ym)).sum();
    // condition number of the design matrix [1, log t]
    let (a, b, d) = (nf, x.iter().sum::<f64>(), x.iter().map(|v| v * v).sum::<f64>());
    let tr = a + d;
    let disc = ((a - d) * (a - d) + 4.0 * b * b).sqrt();
    let (l1, l2) = (0.5 * (tr + disc), 0.5 * (tr - disc));
    let cond = if l2 > 0.0 { (l1 / l2).sqrt() } else { f64::INFINITY };
    if !(cond <= 1e8) || sxx <= 0.0 {
        return Err(Error::IllConditioned { cond });
    }
    let slope = sxy / sxx;
    let c = ym - slope * xm;
    let intercept = c + v0.ln();
    let rss: f64 = x.iter().zip(&y).map(|(a, b)| (b - c - slope * a).powi(2)).sum();
    let dof = nf - 2.0;
    let se = (rss / dof / sxx).sqrt();
    let tq = StudentsT::new(0.0, 1.0, dof).map_err(|e| Error::Numerical(e.to_string()))?.inverse_cdf(0.975);
    // two regression coefficients plus the noise variance
    let k = 3.0;
    let aicc = nf * (rss.max(1e-300) / nf).ln() + 2.0 * k + 2.0 * k * (k + 1.0) / (nf - k - 1.0);
    Ok(DecayFit {
        exponent: -slope,
        intercept,
        model,
        ci_halfwidth: tq * se,
        window: (pts[0].0, pts[n - 1].0),
        n_envelope_points: n,
        rss,
        aicc,
    })
}

/// Fits every model and returns them with the lowest AICc first.
pub fn fit_auto(env: &[(f64, f64)]) -> Result<Vec<DecayFit>> {
    let mut fits = Model::ALL.iter().map(|&m| fit_exponent(env, m)).collect::<Result<Vec<_>>>()?;
    fits.sort_by(|a, b| a.aicc.total_cmp(&b.aicc));
    Ok(fits)
}

/// Envelope points inside [t_lo, t_hi].
pub fn restrict(env: &[(f64, f64)], t_lo: f64, t_hi: f64) -> Vec<(f64, f64)> {
    env.iter().copied().filter(|&(t, _)| t >= t_lo && t <= t_hi).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stability {
    pub first: DecayFit,
    pub second: DecayFit,
    pub stable: bool,
}

/// Refits on the two halves of the log-window. The halves agree when
/// |p₁ − p₂| ≤ 2·√(ci₁² + ci₂²).
pub fn window_stability(env: &[(f64, f64)], model: Model) -> Result<Stability> {
    let (lo, hi) = (env[0].0, env[env.len() - 1].0);
    let mid = (lo * hi).sqrt();
    let first = fit_exponent(&restrict(env, lo, mid), model)?;
    let second = fit_exponent(&restrict(env, mid, hi), model)?;
    let tol = 2.0 * (first.ci_halfwidth.powi(2) + second.ci_halfwidth.powi(2)).sqrt();
    let stable = (first.exponent - second.exponent).abs() <= tol;
    Ok(Stability { first, second, stable })
}

/// One row of the results file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitRow {
    pub experiment_id: String,
    pub kind: String,
    pub r: f64,
    pub fit: DecayFit,
    pub stable: bool,
}

pub fn write_fit_csv<W: Write>(mut out: W, rows: &[FitRow], header: bool) -> Result<()> {
    if header {
        writeln!(out, "experiment_id,kind,R,model,p,ci,t_lo,t_hi,stable")?;
    }
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{:.6},{:.6},{},{},{}",
            r.experiment_id,
            r.kind,
            r.r,
            r.fit.model.name(),
            r.fit.exponent,
            r.fit.ci_halfwidth,
            r.fit.window.0,
            r.fit.window.1,
            r.stable
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> Vec<(f64, f64)> {
        (0..n)
            .map(|i| {
                let t = lo * (hi / lo).powf(i as f64 / (n - 1) as f64);
                (t, f(t))
            })
            .collect()
    }

    #[test]
    fn envelope_of_damped_sine_follows_the_damping() {
        let s: Vec<(f64, f64)> = (0..20000).map(|i| 1.0 + i as f64 * 0.01).map(|t| (t, (2.0 * std::f64::consts::PI * t).sin() / t)).collect();
        let env = envelope(&s).unwrap();
        assert!(env.len() > 300);
        for &(t, v) in &env {
            // maxima of |sin| sit at quarter periods
            let q = (t * 4.0).round() / 4.0;
            assert!((t - q).abs() < 0.006 + 0.03 / t);
            assert!((v * t - 1.0).abs() < 1e-2);
        }
    }

    #[test]
    fn degenerate_series() {
        let zero: Vec<(f64, f64)> = (0..100).map(|i| (i as f64, 0.0)).collect();
        assert!(matches!(envelope(&zero), Err(Error::TooSparse { found: 0 })));
        let mono: Vec<(f64, f64)> = (1..100).map(|i| (i as f64, 1.0 / i as f64)).collect();
        assert!(matches!(envelope(&mono), Err(Error::TooSparse { .. })));
        // a monotone tail fits directly
        let fit = fit_exponent(&mono, Model::PurePower).unwrap();
        assert!((fit.exponent - 1.0).abs() < 1e-12);
    }

    #[test]
    fn synthetic_power_law() {
        let env = sample(|t| t.powf(-1.5) * (1.0 + 0.01 * t.sin()), 100.0, 1e4, 60);
        let fit = fit_exponent(&env, Model::PurePower).unwrap();
        assert!((fit.exponent - 1.5).abs() < 0.01, "{fit:?}");
        assert!(window_stability(&env, Model::PurePower).unwrap().stable);
    }

    #[test]
    fn synthetic_log_over_t_prefers_the_log_model() {
        let env = sample(|t| t.ln() / t, 100.0, 1e4, 60);
        let lt = fit_exponent(&env, Model::LogTimesPower).unwrap();
        let pp = fit_exponent(&env, Model::PurePower).unwrap();
        assert!((lt.exponent - 1.0).abs() < 0.05, "{lt:?}");
        assert!(lt.aicc < pp.aicc);
    }

    #[test]
    fn synthetic_log_corrected_inverse_square() {
        let env = sample(|t| (1.0 + t.ln().abs()) / (t * t), 10.0, 1e4, 60);
        let fit = fit_exponent(&env, Model::LogTimesPower).unwrap();
        assert!((fit.exponent - 2.0).abs() < 0.05);
        assert_eq!(fit_auto(&env).unwrap()[0].model, Model::LogTimesPower);
    }

    #[test]
    fn scale_invariance() {
        let env = sample(|t| t.powf(-0.7) * (2.0 + (0.3 * t).cos()), 100.0, 1e4, 50);
        let scaled: Vec<(f64, f64)> = env.iter().map(|&(t, v)| (t, 8.0 * v)).collect();
        let (a, b) = (fit_exponent(&env, Model::PurePower).unwrap(), fit_exponent(&scaled, Model::PurePower).unwrap());
        assert_eq!(a.exponent.to_bits(), b.exponent.to_bits());
        assert!((b.intercept - a.intercept - 8f64.ln()).abs() < 1e-12);
        let stretched: Vec<(f64, f64)> = sample(|t| t.powf(-0.7), 100.0, 1e4, 50).iter().map(|&(t, v)| (3.0 * t, v)).collect();
        let c = fit_exponent(&stretched, Model::PurePower).unwrap();
        assert!((c.exponent - 0.7).abs() < 1e-6);
    }

    #[test]
    fn ill_conditioned_design() {
        let env: Vec<(f64, f64)> = (0..10).map(|i| (1e6 * (1.0 + 1e-13 * i as f64), 1.0)).collect();
        assert!(matches!(fit_exponent(&env, Model::PurePower), Err(Error::IllConditioned { .. })));
    }

    #[test]
    fn csv_rows() {
        let env = sample(|t| 1.0 / t, 100.0, 1e4, 20);
        let fit = fit_exponent(&env, Model::PurePower).unwrap();
        let mut buf = Vec::new();
        write_fit_csv(&mut buf, &[FitRow { experiment_id: "x".into(), kind: "force".into(), r: 1.5, fit, stable: true }], true).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("experiment_id,kind,R,model,p,ci,t_lo,t_hi,stable\nx,force,1.5,PurePower,1.000000,"));
    }
}
