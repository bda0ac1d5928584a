//! Registry of named scalar functions used to describe time-varying and
//! nonlinear system components in JSON configurations.
//!
//! | name | parameters | value |
//! |------|------------|-------|
//! | `constant` | `value` | `value` |
//! | `sinusoidal_scalar` | `mean`, `amplitude`, `frequency`, `phase`=0 | `mean + amplitude·sin(frequency·t + phase)` |
//! | `linear` | `gain` | `gain·x` |
//! | `cubic_drift` | `gain` | `−gain·x³` |
//! | `linear_cubic` | `linear`, `cubic` | `linear·x − cubic·x³` |
//! | `cubic` | `scale`=1 | `scale·x³` |
//! | `tanh_saturation` | `gain`, `slope`, `linear`=0 | `−(linear·x + gain·tanh(slope·x))` |
//!
//! Time-only functions (`constant`, `sinusoidal_scalar`) may appear as matrix
//! entries of time-varying systems; every function may be used as a
//! state-dependent component `(t, x) ↦ value`.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type ScalarFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type TimeFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A named builtin with its scalar parameters, e.g.
/// `{"fn": "sinusoidal_scalar", "mean": 1.5, "amplitude": 1.0, "frequency": 1.0}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuiltinSpec {
    #[serde(rename = "fn")]
    pub name: String,
    #[serde(flatten)]
    pub params: BTreeMap<String, f64>,
}

impl BuiltinSpec {
    pub fn new(name: &str, params: &[(&str, f64)]) -> Self {
        Self {
            name: name.to_string(),
            params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }

    fn get(&self, key: &str) -> Result<f64> {
        self.params.get(key).copied().ok_or_else(|| {
            Error::Config(format!("builtin `{}` requires parameter `{key}`", self.name))
        })
    }

    fn get_or(&self, key: &str, default: f64) -> f64 {
        self.params.get(key).copied().unwrap_or(default)
    }

    fn check_params(&self, allowed: &[&str]) -> Result<()> {
        for (k, v) in &self.params {
            if !allowed.contains(&k.as_str()) {
                return Err(Error::Config(format!(
                    "builtin `{}` does not accept parameter `{k}` (allowed: {})",
                    self.name,
                    allowed.join(", ")
                )));
            }
            if !v.is_finite() {
                return Err(Error::Config(format!(
                    "builtin `{}` parameter `{k}` is not finite",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

/// Name, parameters and formula of every registered builtin.
pub const BUILTINS: &[(&str, &str, &str)] = &[
    ("constant", "value", "value"),
    (
        "sinusoidal_scalar",
        "mean, amplitude, frequency, phase=0",
        "mean + amplitude*sin(frequency*t + phase)",
    ),
    ("linear", "gain", "gain*x"),
    ("cubic_drift", "gain", "-gain*x^3"),
    ("linear_cubic", "linear, cubic", "linear*x - cubic*x^3"),
    ("cubic", "scale=1", "scale*x^3"),
    (
        "tanh_saturation",
        "gain, slope, linear=0",
        "-(linear*x + gain*tanh(slope*x))",
    ),
];

/// Resolve a builtin that depends on time only.
pub fn time_function(spec: &BuiltinSpec) -> Result<TimeFn> {
    match spec.name.as_str() {
        "constant" => {
            spec.check_params(&["value"])?;
            let v = spec.get("value")?;
            Ok(Arc::new(move |_| v))
        }
        "sinusoidal_scalar" => {
            spec.check_params(&["mean", "amplitude", "frequency", "phase"])?;
            let mean = spec.get("mean")?;
            let amp = spec.get("amplitude")?;
            let freq = spec.get("frequency")?;
            let phase = spec.get_or("phase", 0.0);
            Ok(Arc::new(move |t| mean + amp * (freq * t + phase).sin()))
        }
        other => Err(Error::Config(format!(
            "`{other}` is not a time-only builtin (use `constant` or `sinusoidal_scalar`)"
        ))),
    }
}

/// Resolve a builtin as a function of `(t, x)`.
pub fn state_function(spec: &BuiltinSpec) -> Result<ScalarFn> {
    let f: ScalarFn = match spec.name.as_str() {
        "constant" | "sinusoidal_scalar" => {
            let g = time_function(spec)?;
            Arc::new(move |t, _| g(t))
        }
        "linear" => {
            spec.check_params(&["gain"])?;
            let g = spec.get("gain")?;
            Arc::new(move |_, x| g * x)
        }
        "cubic_drift" => {
            spec.check_params(&["gain"])?;
            let g = spec.get("gain")?;
            Arc::new(move |_, x| -g * x * x * x)
        }
        "linear_cubic" => {
            spec.check_params(&["linear", "cubic"])?;
            let a = spec.get("linear")?;
            let c = spec.get("cubic")?;
            Arc::new(move |_, x| a * x - c * x * x * x)
        }
        "cubic" => {
            spec.check_params(&["scale"])?;
            let s = spec.get_or("scale", 1.0);
            Arc::new(move |_, x| s * x * x * x)
        }
        "tanh_saturation" => {
            spec.check_params(&["gain", "slope", "linear"])?;
            let g = spec.get("gain")?;
            let s = spec.get("slope")?;
            let l = spec.get_or("linear", 0.0);
            Arc::new(move |_, x| -(l * x + g * (s * x).tanh()))
        }
        other => {
            return Err(Error::Config(format!(
                "unknown builtin `{other}`; known: {}",
                BUILTINS.iter().map(|b| b.0).collect::<Vec<_>>().join(", ")
            )))
        }
    };
    Ok(f)
}
