//! Declarative configuration document.
//!
//! Every section has defaults; the defaults are the weak-coupling reference
//! setup used by the test-suite (`J0 = σ0 = 0.5`, `λ0 = 1`, `g = 1`, `T = 1`,
//! `dt = 0.01` on `D = [0, 1]`). See `configs/reference.json` for the same
//! document written out in full.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub domain: DomainConfig,
    pub dynamics: DynamicsConfig,
    pub coupling: CouplingConfig,
    pub noise: NoiseConfig,
    pub initial: InitialConfig,
    pub grid: GridConfig,
    pub run: RunConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DomainConfig {
    pub dim: usize,
    /// Per-axis `[lower, upper]`; defaults to `[0, 1]` on every axis.
    pub bounds: Option<Vec<[f64; 2]>>,
    pub density: String,
}

impl Default for DomainConfig {
    fn default() -> Self {
        Self { dim: 1, bounds: None, density: "uniform".into() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsConfig {
    pub intrinsic: IntrinsicConfig,
    pub sigmoid: SigmoidConfig,
}

/// `f(r, t, x) = -decay * x + amplitude * cos(2π (frequency * t + <wavevector, r>))`
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntrinsicConfig {
    pub family: String,
    pub decay: f64,
    pub amplitude: f64,
    pub frequency: f64,
    /// Defaults to all ones.
    pub wavevector: Option<Vec<f64>>,
}

impl Default for IntrinsicConfig {
    fn default() -> Self {
        Self {
            family: "leaky_cosine".into(),
            decay: 1.0,
            amplitude: 0.5,
            frequency: 1.0,
            wavevector: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SigmoidConfig {
    pub family: String,
    pub gain: f64,
}

impl Default for SigmoidConfig {
    fn default() -> Self {
        Self { family: "logistic".into(), gain: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CouplingConfig {
    /// Mean coupling `J(r, r')`.
    pub mean: KernelConfig,
    /// Coupling standard deviation `σ(r, r')`.
    pub std: KernelConfig,
    pub delay: DelayConfig,
}

impl Default for CouplingConfig {
    fn default() -> Self {
        Self {
            mean: KernelConfig::default(),
            std: KernelConfig::default(),
            delay: DelayConfig::default(),
        }
    }
}

/// `exponential`: `amplitude * exp(-|r - r'| / length)`; `constant`: `amplitude`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelConfig {
    pub family: String,
    pub amplitude: f64,
    pub length: Option<f64>,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self { family: "exponential".into(), amplitude: 0.5, length: Some(0.5) }
    }
}

/// `τ(r, r') = tau0 + c_tau * |r - r'|`
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DelayConfig {
    pub tau0: f64,
    pub c_tau: f64,
}

impl Default for DelayConfig {
    fn default() -> Self {
        Self { tau0: 0.05, c_tau: 0.1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub family: String,
    pub lambda0: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { family: "constant".into(), lambda0: 1.0 }
    }
}

/// Initial history `x̄⁰_s(r) = offset + <slope, r> + noise_scale * η_s`, with
/// `η` a Brownian path started at `-τ̄`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialConfig {
    pub offset: f64,
    /// Defaults to all zeros.
    pub slope: Option<Vec<f64>>,
    pub noise_scale: f64,
    /// Declared spatial regularity constant; defaults to `|slope|²`.
    pub lipschitz_c0: Option<f64>,
}

impl Default for InitialConfig {
    fn default() -> Self {
        Self { offset: 0.0, slope: None, noise_scale: 0.1, lipschitz_c0: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub dt: f64,
    pub horizon: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { dt: 0.01, horizon: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Network size for `simulate`.
    pub n_neurons: usize,
    pub n_particles: usize,
    /// Location nodes per axis for covariance tabulation.
    pub m_nodes: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub subsample: usize,
    pub n_list: Vec<usize>,
    pub replicates: usize,
    pub chaos_n_list: Vec<usize>,
    pub chaos_replicates: usize,
    pub pair_count: usize,
    pub probe_times: Vec<f64>,
    /// Probe nodes per axis for sweeps and comparisons.
    pub probe_nodes: usize,
    /// `convergence`, `chaos` or `both`.
    pub sweep: String,
    /// Maximum number of paths written by `meanfield` (0 writes all).
    pub output_paths: usize,
    /// Also write ensembles in the compact binary layout.
    pub binary_output: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            n_neurons: 400,
            n_particles: 4096,
            m_nodes: 8,
            tol: 0.05,
            max_iter: 10,
            subsample: 256,
            n_list: vec![50, 100, 200, 400],
            replicates: 20,
            chaos_n_list: vec![25, 50, 100, 200],
            chaos_replicates: 200,
            pair_count: 64,
            probe_times: vec![0.2, 0.4, 0.6, 0.8, 1.0],
            probe_nodes: 4,
            sweep: "both".into(),
            output_paths: 256,
            binary_output: false,
        }
    }
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_value(value: serde_json::Value) -> Result<Self> {
        serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))
    }

    /// Fully decoupled Ornstein–Uhlenbeck setup: `f = -x`, no stimulus, no
    /// coupling, no delay, `λ = 1`, zero initial history.
    pub fn decoupled() -> Self {
        let mut cfg = Config::default();
        cfg.dynamics.intrinsic.amplitude = 0.0;
        cfg.coupling.mean.amplitude = 0.0;
        cfg.coupling.std.amplitude = 0.0;
        cfg.coupling.delay = DelayConfig { tau0: 0.0, c_tau: 0.0 };
        cfg.initial = InitialConfig { offset: 0.0, slope: None, noise_scale: 0.0, lipschitz_c0: None };
        cfg
    }
}

/// Apply a dotted-path override such as `coupling.mean.amplitude=0.3` to a
/// JSON document. The value is parsed as JSON when possible, otherwise it is
/// taken as a string.
pub fn apply_override(doc: &mut serde_json::Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not of the form key=value")))?;
    let value: serde_json::Value =
        serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut node = doc;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        if key.is_empty() {
            return Err(Error::Config(format!("empty key in override path `{path}`")));
        }
        if !node.is_object() {
            *node = serde_json::Value::Object(Default::default());
        }
        let map = node.as_object_mut().expect("object");
        if i + 1 == keys.len() {
            map.insert((*key).to_string(), value);
            return Ok(());
        }
        node = map.entry((*key).to_string()).or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_reference_defaults() {
        let cfg = Config::from_json("{}").unwrap();
        assert_eq!(cfg, Config::default());
        assert_eq!(cfg.coupling.mean.amplitude, 0.5);
        assert_eq!(cfg.run.n_particles, 4096);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(Config::from_json(r#"{"noise": {"lambda": 1.0}}"#).is_err());
    }

    #[test]
    fn overrides_follow_dotted_paths() {
        let mut doc = serde_json::to_value(Config::default()).unwrap();
        apply_override(&mut doc, "noise.lambda0=0").unwrap();
        apply_override(&mut doc, "domain.density=uniform").unwrap();
        apply_override(&mut doc, "run.n_list=[10,20]").unwrap();
        let cfg = Config::from_value(doc).unwrap();
        assert_eq!(cfg.noise.lambda0, 0.0);
        assert_eq!(cfg.run.n_list, vec![10, 20]);
        assert!(apply_override(&mut serde_json::json!({}), "novalue").is_err());
    }
}
