//! System descriptions accepted in configurations, and the named plants
//! used by the shipped experiments.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::builtins::{state_function, time_function, BuiltinSpec};
use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};
use crate::sde::InitialState;
use crate::statespace::{ChannelMap, LtiSystem, LtvSystem, MatFn, NonlinearScalarSystem};

/// Matrix entry: a number or a time-only builtin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Entry {
    Number(f64),
    Function(BuiltinSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelSpec {
    Control,
    Observation,
}

fn default_one() -> f64 {
    1.0
}

fn default_truncation() -> (f64, f64) {
    (-10.0, 10.0)
}

/// A plant in a configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    /// One of [`BUILTIN_SYSTEMS`] with numeric parameters.
    Builtin {
        name: String,
        #[serde(default)]
        params: BTreeMap<String, f64>,
    },
    Lti {
        a: Vec<Vec<f64>>,
        b: Option<Vec<Vec<f64>>>,
        c: Option<Vec<Vec<f64>>>,
        k: Option<Vec<Vec<f64>>>,
        x0_variance: Option<f64>,
    },
    /// Time-varying plant in modal form: the first `stable_dim` states are
    /// the stable block.
    Ltv {
        a: Vec<Vec<Entry>>,
        b: Option<Vec<Vec<Entry>>>,
        c: Option<Vec<Vec<Entry>>>,
        k: Option<Vec<Vec<Entry>>>,
        stable_dim: usize,
        period: Option<f64>,
        x0_variance: Option<f64>,
    },
    Nonlinear {
        f: BuiltinSpec,
        b: Option<BuiltinSpec>,
        channel: ChannelSpec,
        map: BuiltinSpec,
        #[serde(default = "default_one")]
        noise_scale: f64,
        #[serde(default)]
        x0_mean: f64,
        #[serde(default = "default_one")]
        x0_std: f64,
        #[serde(default = "default_truncation")]
        truncation: (f64, f64),
    },
}

/// A linear plant with its initial law.
#[derive(Debug, Clone)]
pub struct LinearPlant {
    pub sys: LtvSystem,
    pub x0: InitialState,
}

#[derive(Debug, Clone)]
pub enum Plant {
    Linear(LinearPlant),
    Nonlinear(NonlinearScalarSystem),
}

impl Plant {
    pub fn linear(self, experiment: &str) -> Result<LinearPlant> {
        match self {
            Plant::Linear(p) => Ok(p),
            Plant::Nonlinear(_) => Err(Error::Config(format!("experiment `{experiment}` needs a linear system"))),
        }
    }

    pub fn nonlinear(self, experiment: &str) -> Result<NonlinearScalarSystem> {
        match self {
            Plant::Nonlinear(p) => Ok(p),
            Plant::Linear(_) => Err(Error::Config(format!("experiment `{experiment}` needs a nonlinear scalar system"))),
        }
    }
}

/// Name, parameters with defaults, and description of each builtin plant.
pub const BUILTIN_SYSTEMS: &[(&str, &str, &str)] = &[
    ("scalar_loop", "alpha=1, k=2, p0=1", "dx = αx dt + de, de = −kx dt + dw, x(0) ~ N(0, p0/k²)"),
    (
        "periodic_loop",
        "mean=1.5, amplitude=1, frequency=1, stable=-1, margin=1",
        "A = diag(stable, mean + amplitude·sin(frequency·t)), B = C = I, K = diag(0, −(a_u(t) + margin))",
    ),
    (
        "periodic_observed",
        "mean=1, amplitude=0.5, frequency=1, stable=-1",
        "A = diag(stable, mean + amplitude·sin(frequency·t)), B = C = I, no controller",
    ),
    (
        "bode_pair",
        "stable=-3, mean=1, amplitude=0, frequency=1, gain=2",
        "A = diag(stable, mean + amplitude·sin(frequency·t)), B = [1; 1], C = [−gain, gain]",
    ),
    (
        "saturated_loop",
        "alpha=0.5, cubic=0, gain=1, slope=2, linear=1, x0_std=0.5",
        "dx = (αx − cubic·x³ + u) dt + dw, u = −(linear·x + gain·tanh(slope·x))",
    ),
    (
        "cubic_sensor",
        "decay=1, scale=1, noise=1, x0_std=1",
        "dx = −decay·x dt + √noise dw̄, dy = scale·x³ dt + dv",
    ),
];

struct Params<'a> {
    name: &'a str,
    map: &'a BTreeMap<String, f64>,
    allowed: Vec<&'static str>,
}

impl<'a> Params<'a> {
    fn new(name: &'a str, map: &'a BTreeMap<String, f64>) -> Self {
        Self { name, map, allowed: Vec::new() }
    }

    fn get(&mut self, key: &'static str, default: f64) -> Result<f64> {
        self.allowed.push(key);
        let v = self.map.get(key).copied().unwrap_or(default);
        if !v.is_finite() {
            return Err(Error::Config(format!("system `{}` parameter `{key}` is not finite", self.name)));
        }
        Ok(v)
    }

    fn finish(self) -> Result<()> {
        match self.map.keys().find(|k| !self.allowed.contains(&k.as_str())) {
            Some(k) => Err(Error::Config(format!(
                "system `{}` does not take parameter `{k}` (allowed: {})",
                self.name,
                self.allowed.join(", ")
            ))),
            None => Ok(()),
        }
    }
}

fn m1(v: f64) -> Mat {
    Mat::from_element(1, 1, v)
}

fn diag(v: &[f64]) -> Mat {
    Mat::from_diagonal(&Vector::from_row_slice(v))
}

/// `dx = αx dt + de`, `u = −kx`, with `x(0) ~ N(0, p0/k²)` so that the
/// error covariance of `u` starts at `p0`.
pub fn scalar_loop(alpha: f64, k: f64, p0: f64) -> Result<LinearPlant> {
    if k == 0.0 || !(p0 > 0.0) {
        return Err(Error::Config("scalar_loop needs k ≠ 0 and p0 > 0".into()));
    }
    let sys = LtvSystem::from(&LtiSystem::new(m1(alpha), m1(1.0), m1(1.0), Some(m1(-k)))?);
    Ok(LinearPlant { sys, x0: InitialState::isotropic(1, p0 / (k * k))? })
}

/// `A` similar to `block` through a fixed well-conditioned `T`, `B = C = I`,
/// `K = −A − I` so the closed loop is `−I`.
pub fn placed_poles(block: Mat) -> Result<LinearPlant> {
    let n = block.nrows();
    let mut t = Mat::identity(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                t[(i, j)] = 0.3 / (1.0 + (i as f64 - j as f64).abs()) * if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            }
        }
    }
    let t_inv = t.clone().try_inverse().ok_or_else(|| Error::Config("similarity is singular".into()))?;
    let a = &t * block * t_inv;
    let k = -&a - Mat::identity(n, n);
    let sys = LtvSystem::from(&LtiSystem::new(a, Mat::identity(n, n), Mat::identity(n, n), Some(k))?);
    Ok(LinearPlant { sys, x0: InitialState::standard(n) })
}

/// Real poles on the diagonal, mixed by a similarity.
pub fn diagonal_poles(poles: &[f64]) -> Result<LinearPlant> {
    if poles.is_empty() {
        return Err(Error::Config("`poles` must not be empty".into()));
    }
    if let Some(p) = poles.iter().find(|p| p.abs() < 1e-8 || !p.is_finite()) {
        return Err(Error::Config(format!("pole {p} is on the imaginary axis")));
    }
    placed_poles(diag(poles))
}

/// The three default systems with unstable-pole sums 1, 2.5 and 3.
pub fn prop36_systems() -> Result<Vec<(String, LinearPlant)>> {
    let mut rotating = Mat::zeros(3, 3);
    rotating[(0, 0)] = 1.5;
    rotating[(0, 1)] = 1.0;
    rotating[(1, 0)] = -1.0;
    rotating[(1, 1)] = 1.5;
    rotating[(2, 2)] = -1.0;
    Ok(vec![
        ("poles_1_m2".into(), placed_poles(diag(&[1.0, -2.0]))?),
        ("poles_2_0.5_m1".into(), placed_poles(diag(&[2.0, 0.5, -1.0]))?),
        ("poles_1.5pm1i_m1".into(), placed_poles(rotating)?),
    ])
}

fn periodic(stable: f64, mean: f64, amplitude: f64, frequency: f64, margin: Option<f64>) -> Result<LinearPlant> {
    let a: MatFn = Arc::new(move |t: f64| diag(&[stable, mean + amplitude * (frequency * t).sin()]));
    let id: MatFn = Arc::new(|_| Mat::identity(2, 2));
    let k = margin.map(|m| -> MatFn {
        Arc::new(move |t: f64| diag(&[0.0, -(mean + amplitude * (frequency * t).sin() + m)]))
    });
    let mut sys = LtvSystem::new(a, id.clone(), id, k)?;
    if amplitude != 0.0 {
        sys = sys.with_period(2.0 * PI / frequency.abs())?;
    }
    let sys = sys.with_modal_form(1, 2.0 * PI / frequency.abs())?;
    Ok(LinearPlant { sys, x0: InitialState::standard(2) })
}

/// `A = diag(stable, a_u(t))` with feedback `K = diag(0, −(a_u + margin))`.
pub fn periodic_loop(mean: f64, amplitude: f64, frequency: f64, stable: f64, margin: f64) -> Result<LinearPlant> {
    periodic(stable, mean, amplitude, frequency, Some(margin))
}

/// `A = diag(stable, a_u(t))`, `C = I`, no controller.
pub fn periodic_observed(mean: f64, amplitude: f64, frequency: f64, stable: f64) -> Result<LinearPlant> {
    periodic(stable, mean, amplitude, frequency, None)
}

/// `A = diag(−2, 1 + 0.5 sin t, 0.8)` with two antistable modes.
pub fn three_state_periodic_loop() -> Result<LinearPlant> {
    let a: MatFn = Arc::new(|t: f64| diag(&[-2.0, 1.0 + 0.5 * t.sin(), 0.8]));
    let id: MatFn = Arc::new(|_| Mat::identity(3, 3));
    let k: MatFn = Arc::new(|t: f64| diag(&[0.0, -(2.0 + 0.5 * t.sin()), -1.8]));
    let sys = LtvSystem::new(a, id.clone(), id, Some(k))?.with_period(2.0 * PI)?.with_modal_form(1, 2.0 * PI)?;
    Ok(LinearPlant { sys, x0: InitialState::standard(3) })
}

/// `A = diag(stable, a_u(t))`, `B = [1; 1]`, `C = [−g, g]`, so `CB = 0`.
pub fn bode_pair(stable: f64, mean: f64, amplitude: f64, frequency: f64, gain: f64) -> Result<LinearPlant> {
    let b = Mat::from_row_slice(2, 1, &[1.0, 1.0]);
    let c = Mat::from_row_slice(1, 2, &[-gain, gain]);
    let sys = if amplitude == 0.0 {
        LtvSystem::from(&LtiSystem::new(diag(&[stable, mean]), b, c, None)?)
    } else {
        let a: MatFn = Arc::new(move |t: f64| diag(&[stable, mean + amplitude * (frequency * t).sin()]));
        LtvSystem::new(a, Arc::new(move |_| b.clone()), Arc::new(move |_| c.clone()), None)?
            .with_period(2.0 * PI / frequency.abs())?
            .with_modal_form(1, 2.0 * PI / frequency.abs())?
    };
    Ok(LinearPlant { sys, x0: InitialState::standard(2) })
}

/// Scalar plant `αx − cubic·x³` under a saturating feedback.
pub fn saturated_loop(alpha: f64, cubic: f64, gain: f64, slope: f64, linear: f64, x0_std: f64) -> Result<NonlinearScalarSystem> {
    Ok(NonlinearScalarSystem {
        f: state_function(&BuiltinSpec::new("linear_cubic", &[("linear", alpha), ("cubic", cubic)]))?,
        b: Arc::new(|_, _| 1.0),
        channel: ChannelMap::Control(state_function(&BuiltinSpec::new(
            "tanh_saturation",
            &[("gain", gain), ("slope", slope), ("linear", linear)],
        ))?),
        noise_scale: 1.0,
        x0_mean: 0.0,
        x0_std,
        truncation: (-10.0, 10.0),
        autonomous: true,
    })
}

/// Ornstein–Uhlenbeck state seen through `scale·x³`.
pub fn cubic_sensor(decay: f64, scale: f64, noise: f64, x0_std: f64) -> Result<NonlinearScalarSystem> {
    Ok(NonlinearScalarSystem {
        f: state_function(&BuiltinSpec::new("linear", &[("gain", -decay)]))?,
        b: Arc::new(|_, _| 1.0),
        channel: ChannelMap::Observation(state_function(&BuiltinSpec::new("cubic", &[("scale", scale)]))?),
        noise_scale: noise,
        x0_mean: 0.0,
        x0_std,
        truncation: (-10.0, 10.0),
        autonomous: true,
    })
}

fn builtin(name: &str, params: &BTreeMap<String, f64>) -> Result<Plant> {
    let mut p = Params::new(name, params);
    let plant = match name {
        "scalar_loop" => {
            let (alpha, k, p0) = (p.get("alpha", 1.0)?, p.get("k", 2.0)?, p.get("p0", 1.0)?);
            Plant::Linear(scalar_loop(alpha, k, p0)?)
        }
        "periodic_loop" => Plant::Linear(periodic_loop(
            p.get("mean", 1.5)?,
            p.get("amplitude", 1.0)?,
            p.get("frequency", 1.0)?,
            p.get("stable", -1.0)?,
            p.get("margin", 1.0)?,
        )?),
        "periodic_observed" => Plant::Linear(periodic_observed(
            p.get("mean", 1.0)?,
            p.get("amplitude", 0.5)?,
            p.get("frequency", 1.0)?,
            p.get("stable", -1.0)?,
        )?),
        "bode_pair" => Plant::Linear(bode_pair(
            p.get("stable", -3.0)?,
            p.get("mean", 1.0)?,
            p.get("amplitude", 0.0)?,
            p.get("frequency", 1.0)?,
            p.get("gain", 2.0)?,
        )?),
        "saturated_loop" => Plant::Nonlinear(saturated_loop(
            p.get("alpha", 0.5)?,
            p.get("cubic", 0.0)?,
            p.get("gain", 1.0)?,
            p.get("slope", 2.0)?,
            p.get("linear", 1.0)?,
            p.get("x0_std", 0.5)?,
        )?),
        "cubic_sensor" => Plant::Nonlinear(cubic_sensor(
            p.get("decay", 1.0)?,
            p.get("scale", 1.0)?,
            p.get("noise", 1.0)?,
            p.get("x0_std", 1.0)?,
        )?),
        other => {
            let names: Vec<&str> = BUILTIN_SYSTEMS.iter().map(|b| b.0).collect();
            return Err(Error::Config(format!("unknown builtin system `{other}` (known: {})", names.join(", "))));
        }
    };
    p.finish()?;
    Ok(plant)
}

fn const_matrix(name: &str, rows: &[Vec<f64>]) -> Result<Mat> {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(Error::Config(format!("matrix `{name}` must be a non-empty rectangular list of rows")));
    }
    Ok(Mat::from_fn(r, c, |i, j| rows[i][j]))
}

fn time_matrix(name: &str, rows: &[Vec<Entry>]) -> Result<MatFn> {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(Error::Config(format!("matrix `{name}` must be a non-empty rectangular list of rows")));
    }
    let mut cells = Vec::with_capacity(r * c);
    for row in rows {
        for e in row {
            cells.push(match e {
                Entry::Number(v) => {
                    let v = *v;
                    Arc::new(move |_| v) as crate::builtins::TimeFn
                }
                Entry::Function(spec) => time_function(spec)?,
            });
        }
    }
    Ok(Arc::new(move |t| Mat::from_fn(r, c, |i, j| cells[i * c + j](t))))
}

fn initial(n: usize, variance: Option<f64>) -> Result<InitialState> {
    match variance {
        Some(v) => InitialState::isotropic(n, v),
        None => Ok(InitialState::standard(n)),
    }
}

impl SystemSpec {
    pub fn resolve(&self) -> Result<Plant> {
        match self {
            SystemSpec::Builtin { name, params } => builtin(name, params),
            SystemSpec::Lti { a, b, c, k, x0_variance } => {
                let a = const_matrix("a", a)?;
                let n = a.nrows();
                let b = b.as_ref().map_or(Ok(Mat::identity(n, n)), |b| const_matrix("b", b))?;
                let c = c.as_ref().map_or(Ok(Mat::identity(n, n)), |c| const_matrix("c", c))?;
                let k = k.as_ref().map(|k| const_matrix("k", k)).transpose()?;
                let sys = LtvSystem::from(&LtiSystem::new(a, b, c, k)?);
                Ok(Plant::Linear(LinearPlant { sys, x0: initial(n, *x0_variance)? }))
            }
            SystemSpec::Ltv { a, b, c, k, stable_dim, period, x0_variance } => {
                let n = a.len();
                let eye = |name: &str, m: &Option<Vec<Vec<Entry>>>| -> Result<MatFn> {
                    match m {
                        Some(m) => time_matrix(name, m),
                        None => Ok(Arc::new(move |_| Mat::identity(n, n))),
                    }
                };
                let a_fn = time_matrix("a", a)?;
                let b_fn = eye("b", b)?;
                let c_fn = eye("c", c)?;
                let k_fn = k.as_ref().map(|k| time_matrix("k", k)).transpose()?;
                let mut sys = LtvSystem::new(a_fn, b_fn, c_fn, k_fn)?;
                let check_span = match period {
                    Some(p) => {
                        sys = sys.with_period(*p)?;
                        *p
                    }
                    None => 10.0,
                };
                sys = sys.with_modal_form(*stable_dim, check_span)?;
                Ok(Plant::Linear(LinearPlant { sys, x0: initial(n, *x0_variance)? }))
            }
            SystemSpec::Nonlinear { f, b, channel, map, noise_scale, x0_mean, x0_std, truncation } => {
                let map_fn = state_function(map)?;
                Ok(Plant::Nonlinear(NonlinearScalarSystem {
                    f: state_function(f)?,
                    b: match b {
                        Some(b) => state_function(b)?,
                        None => Arc::new(|_, _| 1.0),
                    },
                    channel: match channel {
                        ChannelSpec::Control => ChannelMap::Control(map_fn),
                        ChannelSpec::Observation => ChannelMap::Observation(map_fn),
                    },
                    noise_scale: *noise_scale,
                    x0_mean: *x0_mean,
                    x0_std: *x0_std,
                    truncation: *truncation,
                    autonomous: [Some(f), b.as_ref(), Some(map)]
                        .into_iter()
                        .flatten()
                        .all(|s| s.name != "sinusoidal_scalar"),
                }))
            }
        }
    }
}
