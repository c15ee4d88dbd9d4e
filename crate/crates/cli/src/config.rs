//! Experiment configuration: JSON with a closed schema. Every field is
//! checked before any computation starts; violations name the field.

use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config does not match the schema: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid field `{field}`: {message}")]
    Field { field: String, message: String },
}

fn field(name: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Field { field: name.into(), message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Simulate,
    Semiclassical,
    Variations,
    Green,
    Compare,
    Superpose,
    Sweep,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Simulate => "simulate",
            Mode::Semiclassical => "semiclassical",
            Mode::Variations => "variations",
            Mode::Green => "green",
            Mode::Compare => "compare",
            Mode::Superpose => "superpose",
            Mode::Sweep => "sweep",
        }
    }
}

/// Model selection. `gauss` is the free particle with the Gaussian
/// interaction kernel; `polynomial` is a linear equation with the external
/// potential `Σ coeffs[k] x^k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelConfig {
    Gauss { m: f64, gamma: f64, v0: f64, kappa: f64 },
    Polynomial { m: f64, coeffs: Vec<f64> },
}

impl ModelConfig {
    pub fn mass(&self) -> f64 {
        match self {
            ModelConfig::Gauss { m, .. } | ModelConfig::Polynomial { m, .. } => *m,
        }
    }
}

/// Shape of the initial packet in the Fock basis of the germ `b`, or a
/// sampled wavefunction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum StateConfig {
    Vacuum,
    Fock(usize),
    /// `[re, im]` pairs; normalized on load.
    Coefficients(Vec<[f64; 2]>),
    /// CSV with `x,re,im` rows on a uniform grid (as written by `simulate`).
    GridFile(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    /// Germ parameter `[re, im]`, `Im b > 0`.
    #[serde(default = "default_b")]
    pub b: [f64; 2],
    #[serde(default)]
    pub p0: f64,
    #[serde(default)]
    pub x0: f64,
    #[serde(default = "default_state")]
    pub state: StateConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "default_ode_tol")]
    pub ode_atol: f64,
    #[serde(default = "default_ode_tol")]
    pub ode_rtol: f64,
    /// Largest split-step time step.
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Fock truncation for projections.
    #[serde(default = "default_kmax")]
    pub kmax: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { ode_atol: default_ode_tol(), ode_rtol: default_ode_tol(), dt: default_dt(), kmax: default_kmax() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub x_min: f64,
    pub x_max: f64,
    pub n: usize,
}

/// Second packet and weights of the superposition experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuperposeConfig {
    pub second: StateConfig,
    #[serde(default = "default_weight")]
    pub c1: [f64; 2],
    #[serde(default = "default_weight")]
    pub c2: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    #[serde(default = "default_initial")]
    pub initial: InitialConfig,
    /// Moment order of the Hamilton–Ehrenfest system.
    #[serde(default = "default_order")]
    pub order: usize,
    pub t_end: f64,
    /// Output times in `(0, t_end]`; defaults to `n_outputs` even steps.
    #[serde(default)]
    pub output_times: Option<Vec<f64>>,
    #[serde(default = "default_outputs")]
    pub n_outputs: usize,
    pub hbar: Vec<f64>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub grid: Option<GridConfig>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub superpose: Option<SuperposeConfig>,
}

fn default_b() -> [f64; 2] {
    [0.0, 1.0]
}
fn default_state() -> StateConfig {
    StateConfig::Vacuum
}
fn default_initial() -> InitialConfig {
    InitialConfig { b: default_b(), p0: 0.0, x0: 0.0, state: default_state() }
}
fn default_ode_tol() -> f64 {
    1e-12
}
fn default_dt() -> f64 {
    1e-3
}
fn default_kmax() -> usize {
    16
}
fn default_order() -> usize {
    2
}
fn default_outputs() -> usize {
    10
}
fn default_weight() -> [f64; 2] {
    [std::f64::consts::FRAC_1_SQRT_2, 0.0]
}

pub fn complex(v: [f64; 2]) -> Complex64 {
    Complex64::new(v[0], v[1])
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Output times, ascending, ending at `t_end`.
    pub fn times(&self) -> Vec<f64> {
        match &self.output_times {
            Some(ts) => ts.clone(),
            None => (1..=self.n_outputs).map(|k| self.t_end * k as f64 / self.n_outputs as f64).collect(),
        }
    }

    /// Checks every field; `base` resolves relative file paths.
    pub fn validate(&self, base: &Path, mode: Mode) -> Result<(), ConfigError> {
        let finite_pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(field(name, format!("must be positive and finite, got {v}")))
            }
        };
        match &self.model {
            ModelConfig::Gauss { m, gamma, v0, kappa } => {
                finite_pos("model.m", *m)?;
                finite_pos("model.gamma", *gamma)?;
                if !v0.is_finite() {
                    return Err(field("model.v0", "must be finite"));
                }
                if !kappa.is_finite() {
                    return Err(field("model.kappa", "must be finite"));
                }
            }
            ModelConfig::Polynomial { m, coeffs } => {
                finite_pos("model.m", *m)?;
                if coeffs.is_empty() || coeffs.len() > 5 || coeffs.iter().any(|c| !c.is_finite()) {
                    return Err(field("model.coeffs", "needs 1 to 5 finite coefficients"));
                }
            }
        }
        if !(self.initial.b[1] > 0.0) || !self.initial.b[0].is_finite() {
            return Err(field("initial.b", "imaginary part must be positive"));
        }
        self.check_state("initial.state", &self.initial.state, base)?;
        if !(2..=4).contains(&self.order) {
            return Err(field("order", format!("must be 2, 3 or 4, got {}", self.order)));
        }
        finite_pos("t_end", self.t_end)?;
        if self.n_outputs == 0 {
            return Err(field("n_outputs", "must be at least 1"));
        }
        if let Some(ts) = &self.output_times {
            if ts.is_empty() || ts.windows(2).any(|w| w[1] <= w[0]) || ts[0] <= 0.0 || *ts.last().unwrap() > self.t_end
            {
                return Err(field("output_times", "must ascend strictly within (0, t_end]"));
            }
        }
        if self.hbar.is_empty() {
            return Err(field("hbar", "needs at least one value"));
        }
        for (i, h) in self.hbar.iter().enumerate() {
            if !(*h > 0.0 && *h < 1.0) {
                return Err(field(format!("hbar[{i}]"), format!("must lie in (0, 1), got {h}")));
            }
        }
        if mode == Mode::Sweep && self.hbar.len() < 3 {
            return Err(field("hbar", format!("a sweep needs at least 3 values, got {}", self.hbar.len())));
        }
        let t = &self.tolerances;
        finite_pos("tolerances.ode_atol", t.ode_atol)?;
        finite_pos("tolerances.ode_rtol", t.ode_rtol)?;
        finite_pos("tolerances.dt", t.dt)?;
        if t.kmax == 0 || t.kmax > 80 {
            return Err(field("tolerances.kmax", "must lie in 1..=80"));
        }
        if let Some(g) = &self.grid {
            if !(g.x_max > g.x_min) || !(16..=8192).contains(&g.n) || !g.n.is_power_of_two() {
                return Err(field("grid", "needs x_max > x_min and a power of two 16 ≤ n ≤ 8192"));
            }
        }
        if mode == Mode::Superpose {
            if !matches!(self.model, ModelConfig::Gauss { .. }) {
                return Err(field("model.kind", "superpose runs on the gauss model"));
            }
            let s = self.superpose.as_ref().ok_or_else(|| field("superpose", "required for this mode"))?;
            self.check_state("superpose.second", &s.second, base)?;
            if matches!(s.second, StateConfig::GridFile(_)) || matches!(self.initial.state, StateConfig::GridFile(_)) {
                return Err(field("superpose.second", "superposition packets are given in the Fock basis"));
            }
            if complex(s.c1).norm() == 0.0 && complex(s.c2).norm() == 0.0 {
                return Err(field("superpose.c1", "weights must not both vanish"));
            }
        }
        Ok(())
    }

    fn check_state(&self, name: &str, s: &StateConfig, base: &Path) -> Result<(), ConfigError> {
        match s {
            StateConfig::Vacuum => Ok(()),
            StateConfig::Fock(k) if *k <= 40 => Ok(()),
            StateConfig::Fock(_) => Err(field(name, "Fock index above 40")),
            StateConfig::Coefficients(c) => {
                let n: f64 = c.iter().map(|v| v[0] * v[0] + v[1] * v[1]).sum();
                if c.is_empty() || !(n > 0.0 && n.is_finite()) || c.len() > 41 {
                    Err(field(name, "coefficients must be 1..=41 finite pairs with nonzero norm"))
                } else {
                    Ok(())
                }
            }
            StateConfig::GridFile(p) => {
                if base.join(p).is_file() {
                    Ok(())
                } else {
                    Err(field(name, format!("file {} does not exist", base.join(p).display())))
                }
            }
        }
    }
}

/// Normalized Fock coefficients of a state given in the Fock basis.
pub fn fock_coefficients(s: &StateConfig) -> Option<Vec<Complex64>> {
    let raw = match s {
        StateConfig::Vacuum => vec![Complex64::new(1.0, 0.0)],
        StateConfig::Fock(k) => {
            let mut v = vec![Complex64::default(); k + 1];
            v[*k] = Complex64::new(1.0, 0.0);
            v
        }
        StateConfig::Coefficients(c) => c.iter().map(|v| complex(*v)).collect(),
        StateConfig::GridFile(_) => return None,
    };
    let n = raw.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    Some(raw.into_iter().map(|v| v / n).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> serde_json::Value {
        serde_json::json!({
            "model": {"kind": "gauss", "m": 1.0, "gamma": 1.0, "v0": -1.0, "kappa": 1.0},
            "t_end": 1.0,
            "hbar": [0.01]
        })
    }

    fn parse(v: serde_json::Value) -> Result<ExperimentConfig, ConfigError> {
        Ok(serde_json::from_value(v)?)
    }

    #[test]
    fn defaults_fill_in() {
        let c = parse(base()).unwrap();
        assert_eq!(c.order, 2);
        assert_eq!(c.initial.state, StateConfig::Vacuum);
        assert_eq!(c.times().len(), 10);
        c.validate(Path::new("."), Mode::Compare).unwrap();
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let mut v = base();
        v["extra"] = serde_json::json!(1);
        assert!(matches!(parse(v), Err(ConfigError::Parse(_))));
        let mut v = base();
        v["tolerances"] = serde_json::json!({"dtt": 1e-3});
        assert!(matches!(parse(v), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn field_errors_name_the_field() {
        let mut v = base();
        v["hbar"] = serde_json::json!([0.01, 1.5]);
        let e = parse(v).unwrap().validate(Path::new("."), Mode::Compare).unwrap_err();
        assert!(e.to_string().contains("hbar[1]"), "{e}");
        let c = parse(base()).unwrap();
        let e = c.validate(Path::new("."), Mode::Sweep).unwrap_err();
        assert!(e.to_string().contains("`hbar`"), "{e}");
        let mut v = base();
        v["initial"] = serde_json::json!({"b": [0.0, -1.0]});
        let e = parse(v).unwrap().validate(Path::new("."), Mode::Compare).unwrap_err();
        assert!(e.to_string().contains("initial.b"));
        let mut v = base();
        v["initial"] = serde_json::json!({"state": {"grid_file": "missing.csv"}});
        let e = parse(v).unwrap().validate(Path::new("."), Mode::Simulate).unwrap_err();
        assert!(e.to_string().contains("initial.state"));
    }

    #[test]
    fn states_normalize() {
        let c = fock_coefficients(&StateConfig::Coefficients(vec![[1.0, 0.0], [0.0, 1.0]])).unwrap();
        assert!((c[0].norm() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert_eq!(fock_coefficients(&StateConfig::Fock(2)).unwrap().len(), 3);
        assert!(fock_coefficients(&StateConfig::GridFile("a".into())).is_none());
    }
}
