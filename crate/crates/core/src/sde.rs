//! Euler–Maruyama simulation of the feedback channel, the observation
//! channel and scalar nonlinear plants, with counter-based seeding so every
//! path is reproducible on its own.
//!
//! # Seeding
//!
//! Path `i` of a run with master seed `s` draws from a ChaCha8 generator
//! keyed by `splitmix64(s ⊕ splitmix64(i))`, with one ChaCha stream per noise
//! source ([`NoiseStream`]). Changing the number of paths, their order or the
//! worker count never changes the increments of a given path, and the
//! feedback and observation simulators share the `w` stream, so the same
//! seed couples the two experiments.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{sym_sqrt, Mat, Vector};
use crate::statespace::{LtvSystem, NonlinearScalarSystem};

/// Uniform grid `t_k = t0 + k·dt`, `k = 0..=n_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub t0: f64,
    pub horizon: f64,
    pub dt: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidInput(format!("dt must be positive, got {dt}")));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidInput(format!("horizon must be positive, got {horizon}")));
        }
        let n_steps = (horizon / dt).round() as usize;
        if n_steps < 1 {
            return Err(Error::InvalidInput(format!("horizon {horizon} is shorter than dt {dt}")));
        }
        Ok(Self { t0: 0.0, horizon, dt, n_steps })
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    /// Time of the last grid point.
    pub fn end(&self) -> f64 {
        self.time(self.n_steps)
    }
}

/// Independent noise sources of one path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseStream {
    /// Channel noise `w` (feedback) or process noise `w̄` (observation).
    Channel = 0,
    /// Observation noise `v`.
    Observation = 1,
    /// Initial-state draw.
    Initial = 2,
    /// Particle-filter randomness.
    Filter = 3,
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedSpec {
    pub master_seed: u64,
}

impl SeedSpec {
    pub fn new(master_seed: u64) -> Self {
        Self { master_seed }
    }

    pub fn path_seed(&self, path_index: usize) -> u64 {
        splitmix64(self.master_seed ^ splitmix64(path_index as u64))
    }

    pub fn rng(&self, path_index: usize, stream: NoiseStream) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.path_seed(path_index));
        rng.set_stream(stream as u64);
        rng
    }
}

/// Gaussian initial state `N(mean, cov)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialState {
    pub mean: Vector,
    pub cov: Mat,
    factor: Mat,
}

impl InitialState {
    pub fn new(mean: Vector, cov: Mat) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::Dimension("initial covariance does not match the mean".into()));
        }
        if crate::linalg::min_sym_eigenvalue(&cov) < -1e-12 {
            return Err(Error::InvalidInput("initial covariance is not PSD".into()));
        }
        let factor = sym_sqrt(&cov);
        Ok(Self { mean, cov, factor })
    }

    /// `N(0, I)`.
    pub fn standard(n: usize) -> Self {
        Self::new(Vector::zeros(n), Mat::identity(n, n)).expect("identity is PSD")
    }

    /// `N(0, σ²I)`.
    pub fn isotropic(n: usize, variance: f64) -> Result<Self> {
        Self::new(Vector::zeros(n), Mat::identity(n, n) * variance)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vector {
        let z = Vector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.mean + &self.factor * z
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    /// Abort once `‖x‖` exceeds this.
    pub explosion_bound: f64,
    /// Drive the dynamics with zero noise (deterministic limit).
    pub zero_noise: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { explosion_bound: 1e8, zero_noise: false }
    }
}

/// One simulated trajectory. Matrices are stored time-major by column:
/// column `k` of `states` is `x(t_k)`, column `k` of `channel` is the
/// channel increment over `[t_k, t_{k+1})`.
#[derive(Debug, Clone)]
pub struct SamplePath {
    pub grid: TimeGrid,
    /// `n × (n_steps + 1)`.
    pub states: Mat,
    /// `de` or `dy` increments, `p × n_steps`.
    pub channel: Mat,
    /// `dw` (feedback) or `dw̄` (observation) increments, `q × n_steps`.
    pub dw: Mat,
    /// `dv` increments for observation channels.
    pub dv: Option<Mat>,
    pub seed: u64,
    pub path_index: usize,
}

impl SamplePath {
    pub fn state_dim(&self) -> usize {
        self.states.nrows()
    }
}

fn brownian<R: Rng>(rng: &mut R, out: &mut DVector<f64>, sqrt_dt: f64, zero: bool) {
    for v in out.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v = if zero { 0.0 } else { sqrt_dt * z };
    }
}

fn check_bound(x: &DVector<f64>, step: usize, bound: f64) -> Result<()> {
    let norm = x.norm();
    if norm.is_finite() && norm <= bound {
        Ok(())
    } else {
        Err(Error::Diverged { step, norm, bound })
    }
}

struct Frozen {
    a: Mat,
    b: Mat,
    c: Mat,
    k: Mat,
}

fn frozen(sys: &LtvSystem, t: f64) -> Frozen {
    let n = sys.dim();
    let m = sys.input_dim();
    Frozen {
        a: sys.a(t),
        b: sys.b(t),
        c: sys.c(t),
        k: sys.k(t).unwrap_or_else(|| Mat::zeros(m, n)),
    }
}

/// Closed loop `dx = (A + BK)x dt + B dw` with channel output
/// `de = Kx dt + dw`. Without a gain the loop is open (`u ≡ 0`).
pub fn simulate_control_loop(
    sys: &LtvSystem,
    grid: &TimeGrid,
    seed: &SeedSpec,
    path_index: usize,
    x0: &InitialState,
    opts: &SimOptions,
) -> Result<SamplePath> {
    let n = sys.dim();
    let m = sys.input_dim();
    if x0.dim() != n {
        return Err(Error::Dimension("initial state does not match the plant".into()));
    }
    let mut rng_w = seed.rng(path_index, NoiseStream::Channel);
    let mut rng_x = seed.rng(path_index, NoiseStream::Initial);
    let (dt, sqrt_dt) = (grid.dt, grid.dt.sqrt());
    let mut states = Mat::zeros(n, grid.n_steps + 1);
    let mut channel = Mat::zeros(m, grid.n_steps);
    let mut noise = Mat::zeros(m, grid.n_steps);
    let mut x = x0.sample(&mut rng_x);
    states.set_column(0, &x);
    let mut mats = frozen(sys, grid.time(0));
    let mut dw = DVector::zeros(m);
    let mut de = DVector::zeros(m);
    let mut next = DVector::zeros(n);
    for k in 0..grid.n_steps {
        if !sys.is_constant() && k > 0 {
            mats = frozen(sys, grid.time(k));
        }
        brownian(&mut rng_w, &mut dw, sqrt_dt, opts.zero_noise);
        // de = K x dt + dw
        de.copy_from(&dw);
        de.gemv(dt, &mats.k, &x, 1.0);
        // x' = x + A x dt + B de
        next.copy_from(&x);
        next.gemv(dt, &mats.a, &x, 1.0);
        next.gemv(1.0, &mats.b, &de, 1.0);
        std::mem::swap(&mut x, &mut next);
        check_bound(&x, k + 1, opts.explosion_bound)?;
        states.set_column(k + 1, &x);
        channel.set_column(k, &de);
        noise.set_column(k, &dw);
    }
    Ok(SamplePath {
        grid: *grid,
        states,
        channel,
        dw: noise,
        dv: None,
        seed: seed.path_seed(path_index),
        path_index,
    })
}

/// Observation channel `dx = A x dt + √ε B dw̄`, `dy = C x dt + dv`.
pub fn simulate_observation(
    sys: &LtvSystem,
    epsilon: f64,
    grid: &TimeGrid,
    seed: &SeedSpec,
    path_index: usize,
    x0: &InitialState,
    opts: &SimOptions,
) -> Result<SamplePath> {
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidInput(format!("process-noise scale must be >= 0, got {epsilon}")));
    }
    let n = sys.dim();
    let m = sys.input_dim();
    let p = sys.output_dim();
    if x0.dim() != n {
        return Err(Error::Dimension("initial state does not match the plant".into()));
    }
    let mut rng_w = seed.rng(path_index, NoiseStream::Channel);
    let mut rng_v = seed.rng(path_index, NoiseStream::Observation);
    let mut rng_x = seed.rng(path_index, NoiseStream::Initial);
    let (dt, sqrt_dt, sqrt_eps) = (grid.dt, grid.dt.sqrt(), epsilon.sqrt());
    let mut states = Mat::zeros(n, grid.n_steps + 1);
    let mut channel = Mat::zeros(p, grid.n_steps);
    let mut noise_w = Mat::zeros(m, grid.n_steps);
    let mut noise_v = Mat::zeros(p, grid.n_steps);
    let mut x = x0.sample(&mut rng_x);
    states.set_column(0, &x);
    let mut mats = frozen(sys, grid.time(0));
    let mut dw = DVector::zeros(m);
    let mut dv = DVector::zeros(p);
    let mut dy = DVector::zeros(p);
    let mut next = DVector::zeros(n);
    for k in 0..grid.n_steps {
        if !sys.is_constant() && k > 0 {
            mats = frozen(sys, grid.time(k));
        }
        brownian(&mut rng_w, &mut dw, sqrt_dt, opts.zero_noise);
        brownian(&mut rng_v, &mut dv, sqrt_dt, opts.zero_noise);
        dy.copy_from(&dv);
        dy.gemv(dt, &mats.c, &x, 1.0);
        next.copy_from(&x);
        next.gemv(dt, &mats.a, &x, 1.0);
        next.gemv(sqrt_eps, &mats.b, &dw, 1.0);
        std::mem::swap(&mut x, &mut next);
        check_bound(&x, k + 1, opts.explosion_bound)?;
        states.set_column(k + 1, &x);
        channel.set_column(k, &dy);
        noise_w.set_column(k, &dw);
        noise_v.set_column(k, &dv);
    }
    Ok(SamplePath {
        grid: *grid,
        states,
        channel,
        dw: noise_w,
        dv: Some(noise_v),
        seed: seed.path_seed(path_index),
        path_index,
    })
}

/// Scalar nonlinear plant in either channel mode.
///
/// Control: `dx = (f + b·u) dt + b dw`, `de = u dt + dw`.
/// Observation: `dx = f dt + √ε·b dw̄`, `dy = z dt + dv`.
pub fn simulate_nonlinear(
    sys: &NonlinearScalarSystem,
    grid: &TimeGrid,
    seed: &SeedSpec,
    path_index: usize,
    opts: &SimOptions,
) -> Result<SamplePath> {
    let control = sys.is_control();
    let mut rng_w = seed.rng(path_index, NoiseStream::Channel);
    let mut rng_v = seed.rng(path_index, NoiseStream::Observation);
    let mut rng_x = seed.rng(path_index, NoiseStream::Initial);
    let (dt, sqrt_dt) = (grid.dt, grid.dt.sqrt());
    let sqrt_eps = sys.noise_scale.sqrt();
    let noise = |rng: &mut ChaCha8Rng| -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        if opts.zero_noise {
            0.0
        } else {
            sqrt_dt * z
        }
    };
    let n = grid.n_steps;
    let mut states = Mat::zeros(1, n + 1);
    let mut channel = Mat::zeros(1, n);
    let mut noise_w = Mat::zeros(1, n);
    let mut noise_v = if control { None } else { Some(Mat::zeros(1, n)) };
    let z0: f64 = rng_x.sample(StandardNormal);
    let mut x = sys.x0_mean + sys.x0_std * z0;
    states[(0, 0)] = x;
    for k in 0..n {
        let t = grid.time(k);
        let f = (sys.f)(t, x);
        let b = (sys.b)(t, x);
        let g = sys.channel_value(t, x);
        let dw = noise(&mut rng_w);
        if control {
            let de = g * dt + dw;
            x += f * dt + b * de;
            channel[(0, k)] = de;
        } else {
            let dv = noise(&mut rng_v);
            channel[(0, k)] = g * dt + dv;
            x += f * dt + sqrt_eps * b * dw;
            if let Some(v) = noise_v.as_mut() {
                v[(0, k)] = dv;
            }
        }
        noise_w[(0, k)] = dw;
        if !(x.abs() <= opts.explosion_bound) {
            return Err(Error::Diverged { step: k + 1, norm: x.abs(), bound: opts.explosion_bound });
        }
        states[(0, k + 1)] = x;
    }
    Ok(SamplePath {
        grid: *grid,
        states,
        channel,
        dw: noise_w,
        dv: noise_v,
        seed: seed.path_seed(path_index),
        path_index,
    })
}

/// Exact-transition sampling of `dy = ᾱ y dt + dw`:
/// `y' = e^{ᾱ dt} y + σ ξ` with `σ² = (e^{2ᾱ dt} − 1)/(2ᾱ)`.
/// `dw` holds `σ ξ` (plain Brownian increments when `ᾱ = 0`).
pub fn ou_exact_path(alpha_bar: f64, grid: &TimeGrid, seed: &SeedSpec, path_index: usize, y0: f64) -> SamplePath {
    let mut rng = seed.rng(path_index, NoiseStream::Channel);
    let dt = grid.dt;
    let decay = (alpha_bar * dt).exp();
    let sigma = if alpha_bar.abs() < 1e-12 {
        dt.sqrt()
    } else {
        ((2.0 * alpha_bar * dt).exp_m1() / (2.0 * alpha_bar)).sqrt()
    };
    let n = grid.n_steps;
    let mut states = Mat::zeros(1, n + 1);
    let mut noise = Mat::zeros(1, n);
    let mut y = y0;
    states[(0, 0)] = y;
    for k in 0..n {
        let xi: f64 = rng.sample(StandardNormal);
        let inc = sigma * xi;
        y = decay * y + inc;
        noise[(0, k)] = inc;
        states[(0, k + 1)] = y;
    }
    SamplePath {
        grid: *grid,
        states,
        channel: Mat::zeros(0, n),
        dw: noise,
        dv: None,
        seed: seed.path_seed(path_index),
        path_index,
    }
}

/// Map `f` over path indices `0..n_paths` in parallel, preserving index
/// order in the output.
pub fn run_paths<T, F>(n_paths: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n_paths).into_par_iter().map(f).collect()
}

/// Write `{experiment}_{path_index}.csv` with columns `t, x_1..x_n`,
/// cumulative channel output (`e_j` or `y_j`), and the increments `dw_j`,
/// `dv_j` over the step starting at `t` (empty on the last row).
pub fn write_path_csv(path: &SamplePath, dir: &Path, experiment: &str, output_name: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let file = dir.join(format!("{experiment}_{}.csv", path.path_index));
    let n = path.states.nrows();
    let p = path.channel.nrows();
    let q = path.dw.nrows();
    let r = path.dv.as_ref().map_or(0, |v| v.nrows());
    let mut out = String::from("t");
    for i in 1..=n {
        write!(out, ",x_{i}").unwrap();
    }
    for i in 1..=p {
        write!(out, ",{output_name}_{i}").unwrap();
    }
    for i in 1..=q {
        write!(out, ",dw_{i}").unwrap();
    }
    for i in 1..=r {
        write!(out, ",dv_{i}").unwrap();
    }
    out.push('\n');
    let mut cumulative = vec![0.0; p];
    for k in 0..=path.grid.n_steps {
        write!(out, "{:.12e}", path.grid.time(k)).unwrap();
        for i in 0..n {
            write!(out, ",{:.12e}", path.states[(i, k)]).unwrap();
        }
        for (j, c) in cumulative.iter().enumerate() {
            let _ = j;
            write!(out, ",{c:.12e}").unwrap();
        }
        let last = k == path.grid.n_steps;
        for i in 0..q {
            if last {
                out.push(',');
            } else {
                write!(out, ",{:.12e}", path.dw[(i, k)]).unwrap();
            }
        }
        if let Some(dv) = &path.dv {
            for i in 0..r {
                if last {
                    out.push(',');
                } else {
                    write!(out, ",{:.12e}", dv[(i, k)]).unwrap();
                }
            }
        }
        out.push('\n');
        if !last {
            for (j, c) in cumulative.iter_mut().enumerate() {
                *c += path.channel[(j, k)];
            }
        }
    }
    fs::write(&file, out)?;
    Ok(file)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{expm, mean_and_std_error};
    use crate::statespace::LtiSystem;
    use approx::assert_abs_diff_eq;

    fn scalar(a: f64, k: Option<f64>) -> LtvSystem {
        let m = |v: f64| Mat::from_element(1, 1, v);
        LtvSystem::from(&LtiSystem::new(m(a), m(1.0), m(1.0), k.map(m)).unwrap())
    }

    #[test]
    fn grid_counts_steps() {
        let g = TimeGrid::new(1.0, 1e-3).unwrap();
        assert_eq!(g.n_steps, 1000);
        assert!(TimeGrid::new(1.0, 0.0).is_err());
        assert!(TimeGrid::new(1e-4, 1e-3).is_err());
    }

    #[test]
    fn zero_noise_follows_matrix_exponential() {
        let a = Mat::from_row_slice(2, 2, &[-1.0, 0.5, 0.0, -2.0]);
        let sys = LtvSystem::from(&LtiSystem::new(a.clone(), Mat::identity(2, 2), Mat::identity(2, 2), None).unwrap());
        let x0 = InitialState::new(Vector::from_row_slice(&[1.0, -1.0]), Mat::zeros(2, 2)).unwrap();
        let opts = SimOptions { zero_noise: true, ..Default::default() };
        for dt in [1e-2, 1e-3] {
            let g = TimeGrid::new(1.0, dt).unwrap();
            let p = simulate_control_loop(&sys, &g, &SeedSpec::new(1), 0, &x0, &opts).unwrap();
            let exact = expm(&a) * &x0.mean;
            let err = (p.states.column(g.n_steps) - exact).norm();
            assert!(err < 0.5 * dt, "dt {dt}: error {err}");
        }
    }

    #[test]
    fn resimulation_is_bit_identical() {
        let sys = scalar(1.0, Some(-2.0));
        let g = TimeGrid::new(2.0, 1e-3).unwrap();
        let x0 = InitialState::standard(1);
        let s = SeedSpec::new(99);
        let a = simulate_control_loop(&sys, &g, &s, 7, &x0, &SimOptions::default()).unwrap();
        let b = simulate_control_loop(&sys, &g, &s, 7, &x0, &SimOptions::default()).unwrap();
        assert_eq!(a.states, b.states);
        assert_eq!(a.channel, b.channel);
        let c = simulate_control_loop(&sys, &g, &s, 8, &x0, &SimOptions::default()).unwrap();
        assert_ne!(a.states, c.states);
    }

    #[test]
    fn closed_loop_reaches_ou_stationary_variance() {
        // α = 1, k = 2: closed-loop pole −1, stationary variance 1/(2|ᾱ|) = 1/2
        // of y, and with y0 ~ N(0, 1/4) the same law as the OU transition.
        let sys = scalar(1.0, Some(-2.0));
        let g = TimeGrid::new(3.0, 1e-3).unwrap();
        let x0 = InitialState::isotropic(1, 0.25).unwrap();
        let vals: Vec<f64> = run_paths(10_000, |i| {
            let p = simulate_control_loop(&sys, &g, &SeedSpec::new(5), i, &x0, &SimOptions::default()).unwrap();
            p.states[(0, g.n_steps)].powi(2)
        });
        let (mean, _) = mean_and_std_error(&vals);
        let exact = 0.5 + (0.25 - 0.5) * (-2.0 * 3.0f64).exp();
        assert!((mean - exact).abs() < 0.05 * exact, "{mean} vs {exact}");
    }

    #[test]
    fn noiseless_observation_is_deterministic_given_x0() {
        let a = Mat::from_row_slice(2, 2, &[0.3, 1.0, 0.0, -1.0]);
        let c = Mat::from_row_slice(1, 2, &[1.0, 2.0]);
        let sys = LtvSystem::from(&LtiSystem::new(a.clone(), Mat::identity(2, 2), c.clone(), None).unwrap());
        let x0 = InitialState::new(Vector::from_row_slice(&[0.5, 1.0]), Mat::zeros(2, 2)).unwrap();
        let g = TimeGrid::new(1.0, 1e-4).unwrap();
        let p = simulate_observation(&sys, 0.0, &g, &SeedSpec::new(3), 0, &x0, &SimOptions::default()).unwrap();
        let z_end = &c * p.states.column(g.n_steps);
        let exact = &c * expm(&a) * &x0.mean;
        assert!((z_end - exact).norm() < 1e-3);
    }

    #[test]
    fn unstable_output_second_moment() {
        // x(t) = e^t x0, so E[z²(1)] = e²
        let sys = scalar(1.0, None);
        let g = TimeGrid::new(1.0, 1e-3).unwrap();
        let x0 = InitialState::standard(1);
        let vals: Vec<f64> = run_paths(10_000, |i| {
            let p = simulate_observation(&sys, 0.0, &g, &SeedSpec::new(11), i, &x0, &SimOptions::default()).unwrap();
            p.states[(0, g.n_steps)].powi(2)
        });
        let (mean, _) = mean_and_std_error(&vals);
        let exact = 2f64.exp();
        assert!((mean - exact).abs() < 0.05 * exact, "{mean} vs {exact}");
    }

    #[test]
    fn cubic_output_moments_match_fine_reference() {
        // OU state dx = −x dt + dw̄, z = x³: compare E[z] and E[z²] at t = 1
        // against a finer-dt run with many more paths.
        use crate::builtins::{state_function, BuiltinSpec};
        use crate::statespace::ChannelMap;
        let sys = NonlinearScalarSystem {
            f: state_function(&BuiltinSpec::new("linear", &[("gain", -1.0)])).unwrap(),
            b: state_function(&BuiltinSpec::new("constant", &[("value", 1.0)])).unwrap(),
            channel: ChannelMap::Observation(state_function(&BuiltinSpec::new("cubic", &[])).unwrap()),
            noise_scale: 1.0,
            x0_mean: 0.5,
            x0_std: 0.5,
            truncation: (-6.0, 6.0),
            autonomous: true,
        };
        let moments = |dt: f64, n: usize, seed: u64| {
            let g = TimeGrid::new(1.0, dt).unwrap();
            let zs: Vec<(f64, f64)> = run_paths(n, |i| {
                let p = simulate_nonlinear(&sys, &g, &SeedSpec::new(seed), i, &SimOptions::default()).unwrap();
                let z = p.states[(0, g.n_steps)].powi(3);
                (z, z * z)
            });
            let z1: Vec<f64> = zs.iter().map(|v| v.0).collect();
            let z2: Vec<f64> = zs.iter().map(|v| v.1).collect();
            (mean_and_std_error(&z1), mean_and_std_error(&z2))
        };
        let ((m1, s1), (m2, s2)) = moments(1e-2, 20_000, 1);
        let ((r1, q1), (r2, q2)) = moments(2.5e-3, 200_000, 2);
        assert!((m1 - r1).abs() < 3.0 * (s1 * s1 + q1 * q1).sqrt(), "{m1} vs {r1}");
        assert!((m2 - r2).abs() < 3.0 * (s2 * s2 + q2 * q2).sqrt(), "{m2} vs {r2}");
    }

    #[test]
    fn ou_zero_rate_is_brownian() {
        let g = TimeGrid::new(1.0, 1e-2).unwrap();
        let p = ou_exact_path(0.0, &g, &SeedSpec::new(4), 0, 0.0);
        let var = p.dw.iter().map(|v| v * v).sum::<f64>() / g.n_steps as f64;
        assert!((var - g.dt).abs() < 0.3 * g.dt);
        assert_abs_diff_eq!(p.states[(0, g.n_steps)], p.dw.iter().sum::<f64>(), epsilon = 1e-12);
    }

    #[test]
    fn ou_exact_variance() {
        let g = TimeGrid::new(1.0, 1e-2).unwrap();
        let vals: Vec<f64> = run_paths(10_000, |i| ou_exact_path(-1.0, &g, &SeedSpec::new(8), i, 0.0).states[(0, g.n_steps)].powi(2));
        let (mean, _) = mean_and_std_error(&vals);
        let exact = (1.0 - (-2.0f64).exp()) / 2.0;
        assert!((mean - exact).abs() < 0.02 * exact, "{mean} vs {exact}");
    }

    #[test]
    fn euler_second_moment_bias_is_first_order() {
        // Closed loop α = 1, k = 2 (ᾱ = −1), y0 ~ N(0, 1/4). Euler–Maruyama
        // propagates E[y²] by m ← (1 + ᾱ dt)² m + dt, the exact law by
        // m ← e^{2ᾱ dt} m + (e^{2ᾱ dt} − 1)/(2ᾱ). Halving dt halves the gap.
        let sys = scalar(1.0, Some(-2.0));
        let x0 = InitialState::isotropic(1, 0.25).unwrap();
        let ab = -1.0f64;
        let bias = |dt: f64| {
            let g = TimeGrid::new(1.0, dt).unwrap();
            // the simulator's one-step map, read off a noiseless unit state
            let unit = InitialState::new(Vector::from_element(1, 1.0), Mat::zeros(1, 1)).unwrap();
            let opts = SimOptions { zero_noise: true, ..Default::default() };
            let p = simulate_control_loop(&sys, &g, &SeedSpec::new(0), 0, &unit, &opts).unwrap();
            let gain = p.states[(0, 1)];
            let (mut em, mut ex) = (x0.cov[(0, 0)], x0.cov[(0, 0)]);
            for _ in 0..g.n_steps {
                em = gain * gain * em + dt;
                ex = (2.0 * ab * dt).exp() * ex + (2.0 * ab * dt).exp_m1() / (2.0 * ab);
            }
            (em - ex).abs()
        };
        for dt in [1e-2, 1e-3] {
            let ratio = bias(dt) / bias(dt / 2.0);
            assert!((1.5..=2.5).contains(&ratio), "dt {dt}: ratio {ratio}");
        }
    }

    #[test]
    fn euler_and_exact_sampling_agree_in_law() {
        let g = TimeGrid::new(2.0, 1e-3).unwrap();
        let sys = scalar(1.0, Some(-2.0));
        let x0 = InitialState::new(Vector::from_element(1, 1.0), Mat::zeros(1, 1)).unwrap();
        let n = 4000;
        let em: Vec<f64> = run_paths(n, |i| {
            simulate_control_loop(&sys, &g, &SeedSpec::new(31), i, &x0, &SimOptions::default()).unwrap().states[(0, g.n_steps)]
        });
        let ex: Vec<f64> = run_paths(n, |i| ou_exact_path(-1.0, &g, &SeedSpec::new(32), i, 1.0).states[(0, g.n_steps)]);
        let ((a, sa), (b, sb)) = (mean_and_std_error(&em), mean_and_std_error(&ex));
        assert!((a - b).abs() < 4.0 * (sa * sa + sb * sb).sqrt());
    }

    #[test]
    fn increments_of_distinct_paths_are_uncorrelated() {
        let g = TimeGrid::new(0.01, 1e-3).unwrap();
        let sys = scalar(-1.0, None);
        let x0 = InitialState::standard(1);
        let n = 10_000;
        let pairs: Vec<(f64, f64)> = run_paths(n, |i| {
            let a = simulate_control_loop(&sys, &g, &SeedSpec::new(21), 2 * i, &x0, &SimOptions::default()).unwrap();
            let b = simulate_control_loop(&sys, &g, &SeedSpec::new(21), 2 * i + 1, &x0, &SimOptions::default()).unwrap();
            (a.dw[(0, 0)], b.dw[(0, 0)])
        });
        let sx: f64 = pairs.iter().map(|p| p.0 * p.0).sum();
        let sy: f64 = pairs.iter().map(|p| p.1 * p.1).sum();
        let sxy: f64 = pairs.iter().map(|p| p.0 * p.1).sum();
        let corr = sxy / (sx * sy).sqrt();
        assert!(corr.abs() < 3.0 / (n as f64).sqrt(), "corr {corr}");
    }

    #[test]
    fn feedback_and_observation_share_the_channel_stream() {
        let sys = scalar(-1.0, None);
        let g = TimeGrid::new(0.5, 1e-3).unwrap();
        let x0 = InitialState::standard(1);
        let s = SeedSpec::new(77);
        let a = simulate_control_loop(&sys, &g, &s, 3, &x0, &SimOptions::default()).unwrap();
        let b = simulate_observation(&sys, 1.0, &g, &s, 3, &x0, &SimOptions::default()).unwrap();
        assert_eq!(a.dw, b.dw);
    }

    #[test]
    fn explosion_is_reported_with_step() {
        let sys = scalar(50.0, None);
        let g = TimeGrid::new(10.0, 1e-3).unwrap();
        let r = simulate_control_loop(&sys, &g, &SeedSpec::new(1), 0, &InitialState::standard(1), &SimOptions::default());
        assert!(matches!(r, Err(Error::Diverged { step, .. }) if step < 1000));
    }

    #[test]
    fn csv_dump_has_header_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let sys = scalar(-1.0, None);
        let g = TimeGrid::new(0.01, 1e-3).unwrap();
        let p = simulate_observation(&sys, 1.0, &g, &SeedSpec::new(1), 4, &InitialState::standard(1), &SimOptions::default()).unwrap();
        let f = write_path_csv(&p, dir.path(), "demo", "y").unwrap();
        assert!(f.ends_with("demo_4.csv"));
        let text = std::fs::read_to_string(f).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,x_1,y_1,dw_1,dv_1");
        assert_eq!(lines.count(), g.n_steps + 1);
    }
}
