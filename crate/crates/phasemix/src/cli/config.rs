//! Experiment configuration: a TOML document with fixed sections.
//!
//! ```toml
//! schema = 1
//! id = "kepler-1d"
//!
//! [model]
//! mode = "one-dim"
//! k = 2.0
//! e0 = -0.375
//! lbar = 1.0
//! eps = 0.0
//!
//! [data]
//! family = "radial-velocity"
//!
//! [[probe]]
//! kind = "force"
//! radius = 0.8
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::decayfit::Model;
use crate::observables::{Kind, QuadSpec};
use crate::orbits::GridSpec;
use crate::potential::PolytropeParams;
use crate::spectral::DataFamily;
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    pub id: String,
    pub model: ModelSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub quadrature: QuadSpec,
    pub data: DataSection,
    #[serde(default, rename = "probe")]
    pub probes: Vec<ProbeSection>,
    #[serde(default)]
    pub times: TimesSection,
    #[serde(default)]
    pub fit: FitSection,
    #[serde(default)]
    pub verify: VerifySection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// "one-dim" or "radial".
    pub mode: String,
    pub k: f64,
    #[serde(default)]
    pub ell: f64,
    pub e0: f64,
    /// Fixed angular momentum of the one-dimensional model.
    pub lbar: Option<f64>,
    /// Lower angular-momentum cut-off of the radial model.
    pub l0: Option<f64>,
    #[serde(default = "one")]
    pub mass: f64,
    pub eps: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub n_e: usize,
    pub n_l: usize,
    pub n_theta: usize,
    pub m_max: usize,
    pub geometric_fraction: f64,
    pub x_floor: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        let g = GridSpec::default();
        GridSection {
            n_e: g.n_e,
            n_l: g.n_l,
            n_theta: 512,
            m_max: 128,
            geometric_fraction: g.geometric_fraction,
            x_floor: g.x_floor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// radial-velocity, tilted, bump, constant or radius.
    pub family: String,
    pub e_lo: Option<f64>,
    pub e_hi: Option<f64>,
    pub l_lo: Option<f64>,
    pub l_hi: Option<f64>,
    #[serde(default)]
    pub project_kernel: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSection {
    pub label: Option<String>,
    pub kind: String,
    pub radius: Option<f64>,
    /// Several radii; the observable is the largest modulus over them.
    pub radii: Option<Vec<f64>>,
    /// n radii approaching R_max with E0 − Ψ(R) = 10^{−1.5 − step·j}.
    pub edge_ladder: Option<usize>,
    #[serde(default = "ladder_step")]
    pub ladder_step: f64,
    /// Allows a radius at the elliptic point.
    #[serde(default)]
    pub trapping: bool,
    pub target: Option<f64>,
    pub tolerance: Option<f64>,
    /// The target is a lower bound on the exponent.
    #[serde(default)]
    pub at_least: bool,
    pub model: Option<String>,
}

fn ladder_step() -> f64 {
    0.25
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimesSection {
    pub t_lo: f64,
    pub t_hi: f64,
    /// Log-spaced bursts across [t_lo, t_hi].
    pub bursts: usize,
    /// Burst length in units of the longest period.
    pub burst_periods: f64,
    /// Samples per shortest period inside a burst.
    pub per_period: f64,
}

impl Default for TimesSection {
    fn default() -> Self {
        TimesSection { t_lo: 100.0, t_hi: 1e4, bursts: 40, burst_periods: 1.5, per_period: 20.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    pub models: Vec<String>,
}

impl Default for FitSection {
    fn default() -> Self {
        FitSection { models: Model::ALL.iter().map(|m| m.name().to_string()).collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    /// Radii for the θ-regularity and ĥ_R checks; chosen from the well when empty.
    pub radii: Vec<f64>,
    /// Adds the trapping radius r_L of the middle angular momentum (radial model).
    pub trap: bool,
    /// Smoothness order k of the Fourier-vanishing check.
    pub fourier_k: u32,
    pub fourier_m_max: usize,
    /// Grid of the ε-halving comparison of ∂_L T.
    pub scaling_n_e: usize,
    pub scaling_n_l: usize,
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection { radii: Vec::new(), trap: true, fourier_k: 1, fourier_m_max: 32, scaling_n_e: 64, scaling_n_l: 8 }
    }
}

/// Probe after validation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Probe {
    pub label: String,
    pub kind: Kind,
    pub radii: Vec<f64>,
    pub edge_ladder: Option<(usize, f64)>,
    pub trapping: bool,
    pub target: Option<f64>,
    pub tolerance: Option<f64>,
    pub at_least: bool,
    pub model: Option<Model>,
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| cfg_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| cfg_err(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(cfg_err(format!("schema {} not supported (expected {SCHEMA_VERSION})", self.schema)));
        }
        if self.id.is_empty() || self.id.contains([',', '\n']) {
            return Err(cfg_err("id must be non-empty without commas"));
        }
        self.params()?;
        self.data_family()?;
        self.grid_spec();
        let g = &self.grid;
        if g.m_max == 0 || g.n_theta < 4 * g.m_max {
            return Err(cfg_err(format!("n_theta = {} must be at least 4*m_max = {}", g.n_theta, 4 * g.m_max)));
        }
        if g.n_e < 8 {
            return Err(cfg_err("n_e must be at least 8"));
        }
        let t = &self.times;
        if !(t.t_lo >= 1.0 && t.t_hi >= t.t_lo * 10f64.powf(1.5)) {
            return Err(cfg_err("the time window must start at t >= 1 and span at least 1.5 decades"));
        }
        if t.bursts < 2 || !(t.burst_periods > 0.0) || !(t.per_period >= 10.0) {
            return Err(cfg_err("need bursts >= 2, burst_periods > 0 and per_period >= 10"));
        }
        self.models()?;
        self.probes()?;
        Ok(())
    }

    pub fn params(&self) -> Result<PolytropeParams> {
        let m = &self.model;
        let p = match m.mode.as_str() {
            "one-dim" => {
                let lbar = m.lbar.ok_or_else(|| cfg_err("model.lbar is required for mode one-dim"))?;
                if m.l0.is_some() {
                    return Err(cfg_err("model.l0 belongs to mode radial"));
                }
                PolytropeParams::one_dim(m.k, m.e0, lbar, m.mass, m.eps)
            }
            "radial" => {
                let l0 = m.l0.ok_or_else(|| cfg_err("model.l0 is required for mode radial"))?;
                if m.lbar.is_some() {
                    return Err(cfg_err("model.lbar belongs to mode one-dim"));
                }
                PolytropeParams::radial(m.k, m.ell, m.e0, l0, m.mass, m.eps)
            }
            other => return Err(cfg_err(format!("model.mode = {other:?}, expected one-dim or radial"))),
        };
        p.map_err(|e| cfg_err(e.to_string()))
    }

    pub fn data_family(&self) -> Result<DataFamily> {
        let d = &self.data;
        let boxed = [d.e_lo, d.e_hi, d.l_lo, d.l_hi].iter().any(Option::is_some);
        let fam = match d.family.as_str() {
            "radial-velocity" => DataFamily::RadialVelocity,
            "tilted" => DataFamily::Tilted,
            "constant" => DataFamily::Constant,
            "radius" => DataFamily::Radius,
            "bump" => {
                let need = |v: Option<f64>, n: &str| v.ok_or_else(|| cfg_err(format!("data.{n} is required for bump data")));
                let (e_lo, e_hi) = (need(d.e_lo, "e_lo")?, need(d.e_hi, "e_hi")?);
                let (l_lo, l_hi) = (d.l_lo.unwrap_or(0.0), d.l_hi.unwrap_or(0.0));
                if !(e_hi > e_lo) {
                    return Err(cfg_err("bump needs e_hi > e_lo"));
                }
                return Ok(DataFamily::Bump { e_lo, e_hi, l_lo, l_hi });
            }
            other => return Err(cfg_err(format!("unknown data family {other:?}"))),
        };
        if boxed {
            return Err(cfg_err("e_lo/e_hi/l_lo/l_hi only apply to bump data"));
        }
        Ok(fam)
    }

    pub fn grid_spec(&self) -> GridSpec {
        let g = &self.grid;
        GridSpec { n_e: g.n_e, n_l: g.n_l, geometric_fraction: g.geometric_fraction, x_floor: g.x_floor }
    }

    pub fn models(&self) -> Result<Vec<Model>> {
        let ms: Vec<Model> = self
            .fit
            .models
            .iter()
            .map(|s| Model::parse(s).ok_or_else(|| cfg_err(format!("unknown fit model {s:?}"))))
            .collect::<Result<_>>()?;
        if ms.is_empty() {
            return Err(cfg_err("fit.models is empty"));
        }
        Ok(ms)
    }

    pub fn probes(&self) -> Result<Vec<Probe>> {
        let mut out: Vec<Probe> = Vec::new();
        for (i, p) in self.probes.iter().enumerate() {
            let kind = Kind::parse(&p.kind).ok_or_else(|| cfg_err(format!("probe {i}: unknown kind {:?}", p.kind)))?;
            let given = [p.radius.is_some(), p.radii.is_some(), p.edge_ladder.is_some()];
            if given.iter().filter(|&&b| b).count() != 1 {
                return Err(cfg_err(format!("probe {i}: give exactly one of radius, radii, edge_ladder")));
            }
            let radii = match (p.radius, &p.radii) {
                (Some(r), _) => vec![r],
                (_, Some(rs)) => rs.clone(),
                _ => Vec::new(),
            };
            if radii.iter().any(|r| !(*r > 0.0)) || (p.radii.is_some() && radii.is_empty()) {
                return Err(cfg_err(format!("probe {i}: radii must be positive")));
            }
            if p.edge_ladder == Some(0) || !(p.ladder_step > 0.0) {
                return Err(cfg_err(format!("probe {i}: edge_ladder needs n >= 1 and a positive step")));
            }
            let model = match &p.model {
                Some(s) => Some(Model::parse(s).ok_or_else(|| cfg_err(format!("probe {i}: unknown model {s:?}")))?),
                None => None,
            };
            let label = p.label.clone().unwrap_or_else(|| match p.radius {
                Some(r) => format!("{}@{r}", kind.name()),
                None => format!("{}-{i}", kind.name()),
            });
            if label.contains([',', '/', '\n']) || out.iter().any(|q| q.label == label) {
                return Err(cfg_err(format!("probe {i}: label {label:?} is not a unique plain name")));
            }
            out.push(Probe {
                label,
                kind,
                radii,
                edge_ladder: p.edge_ladder.map(|n| (n, p.ladder_step)),
                trapping: p.trapping,
                target: p.target,
                tolerance: p.tolerance,
                at_least: p.at_least,
                model,
            });
        }
        Ok(out)
    }

    /// Canonical JSON of the resolved configuration, defaults included.
    pub fn echo(&self) -> String {
        serde_json::to_string(self).expect("configuration serialises")
    }

    /// SHA-256 of the canonical echo.
    pub fn fingerprint(&self) -> String {
        hex(&Sha256::digest(self.echo().as_bytes()))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const KEPLER: &str = r#"
schema = 1
id = "kepler"
[model]
mode = "one-dim"
k = 2.0
e0 = -0.375
lbar = 1.0
eps = 0.0
[data]
family = "radial-velocity"
[[probe]]
kind = "force"
radius = 0.8
"#;

    #[test]
    fn defaults_fill_in() {
        let c = ExperimentConfig::parse(KEPLER).unwrap();
        assert_eq!(c.grid.m_max, 128);
        assert_eq!(c.quadrature, QuadSpec::default());
        assert_eq!(c.times.t_hi, 1e4);
        let p = c.probes().unwrap();
        assert_eq!(p[0].label, "force@0.8");
        assert_eq!(c.fingerprint().len(), 64);
        assert_eq!(c.fingerprint(), ExperimentConfig::parse(KEPLER).unwrap().fingerprint());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = KEPLER.replace("eps = 0.0", "eps = 0.0\nepsilon = 1.0");
        assert!(matches!(ExperimentConfig::parse(&text), Err(Error::Config(_))));
        let text = KEPLER.replace("[data]", "[extra]\nx = 1\n[data]");
        assert!(ExperimentConfig::parse(&text).is_err());
    }

    #[test]
    fn small_k_names_the_constraint() {
        let text = KEPLER.replace("k = 2.0", "k = 0.4");
        match ExperimentConfig::parse(&text) {
            Err(Error::Config(m)) => assert!(m.contains("k > 1/2"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn schema_and_probe_shape_are_checked() {
        assert!(ExperimentConfig::parse(&KEPLER.replace("schema = 1", "schema = 2")).is_err());
        let text = KEPLER.replace("radius = 0.8", "radius = 0.8\nradii = [0.9]");
        assert!(ExperimentConfig::parse(&text).is_err());
        let text = KEPLER.replace("lbar = 1.0", "l0 = 1.0");
        assert!(ExperimentConfig::parse(&text).is_err());
    }
}
