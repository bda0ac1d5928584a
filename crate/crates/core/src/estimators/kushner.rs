//! Conditional density of a scalar state on a fixed grid.
//!
//! One step from `t_k` to `t_{k+1}`:
//!
//! 1. moments of `π_k` (the law of `x(t_k)` given the channel over `[0, t_k)`);
//! 2. correction by the pathwise likelihood `exp(g(x)Δ − ½g(x)²dt)` of the
//!    channel increment `Δ` over `[t_k, t_{k+1})`;
//! 3. transport through the one-step map `φ(x) = x + f dt (+ b Δe)`,
//!    semi-Lagrangian with cubic interpolation at the departure points;
//! 4. observation channel only: implicit diffusion `½∂ₓₓ(εb²π)`;
//! 5. renormalization.
//!
//! In the control channel the state moves by `b·de`, so given the channel
//! output the transport is deterministic and there is no diffusion step.

use crate::error::{Error, Result};
use crate::estimators::ConditionalMoments;
use crate::sde::SamplePath;
use crate::statespace::NonlinearScalarSystem;

/// Largest clipped negative mass tolerated in a single step.
pub const CLIP_TOL: f64 = 1e-6;
/// Edge density relative to the peak above which truncation is flagged.
pub const BOUNDARY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub n_cells: usize,
    /// Half-width of the domain in prior standard deviations.
    pub half_width_sd: f64,
    /// Explicit `[x_min, x_max]`, overriding the prior-based domain.
    pub support: Option<(f64, f64)>,
    /// Keep a copy of the density every this many steps.
    pub snapshot_every: Option<usize>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { n_cells: 1024, half_width_sd: 8.0, support: None, snapshot_every: None }
    }
}

impl GridConfig {
    pub fn domain(&self, sys: &NonlinearScalarSystem) -> Result<(f64, f64)> {
        let (lo, hi) = match self.support {
            Some(s) => s,
            None => {
                let w = self.half_width_sd * sys.x0_std;
                (sys.x0_mean - w, sys.x0_mean + w)
            }
        };
        if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidInput(format!(
                "grid domain [{lo}, {hi}] is empty; give an explicit support for a degenerate prior"
            )));
        }
        if self.n_cells < 8 {
            return Err(Error::InvalidInput(format!("need at least 8 grid cells, got {}", self.n_cells)));
        }
        Ok((lo, hi))
    }
}

/// Density values at `n_cells` equally spaced nodes on `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalDensityGrid {
    pub lo: f64,
    pub hi: f64,
    pub n_cells: usize,
    pub density: Vec<f64>,
    pub t: f64,
}

impl ConditionalDensityGrid {
    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.n_cells - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.spacing()
    }

    /// Trapezoidal integral of `h(x)·π(x)`.
    pub fn integrate<F: Fn(f64) -> f64>(&self, h: F) -> f64 {
        trapezoid(&self.density, self.spacing(), |i| h(self.node(i)))
    }

    pub fn mass(&self) -> f64 {
        self.integrate(|_| 1.0)
    }

    pub fn edge_ratio(&self) -> f64 {
        let peak = self.density.iter().copied().fold(0.0, f64::max);
        let edge = self.density[0].max(self.density[self.n_cells - 1]);
        if peak > 0.0 { edge / peak } else { 0.0 }
    }
}

fn trapezoid<F: Fn(usize) -> f64>(density: &[f64], h: f64, weight: F) -> f64 {
    let n = density.len();
    let mut acc = crate::linalg::CompensatedSum::default();
    for (i, d) in density.iter().enumerate() {
        let end = if i == 0 || i + 1 == n { 0.5 } else { 1.0 };
        acc.add(end * d * weight(i));
    }
    h * acc.value()
}

#[derive(Debug, Clone)]
pub struct GridRun {
    pub moments: ConditionalMoments,
    /// Largest clipped negative mass in a single step.
    pub max_clipped_mass: f64,
    /// Set when the edge density exceeded the truncation tolerance.
    pub boundary_flag: bool,
    pub first_boundary_step: Option<usize>,
    pub snapshots: Vec<ConditionalDensityGrid>,
}

/// Run the grid filter along `path`.
pub fn kushner_grid_run(sys: &NonlinearScalarSystem, path: &SamplePath, cfg: &GridConfig) -> Result<GridRun> {
    if path.states.nrows() != 1 || path.channel.nrows() != 1 {
        return Err(Error::Dimension("grid filter needs a scalar state and channel".into()));
    }
    let (lo, hi) = cfg.domain(sys)?;
    let n = cfg.n_cells;
    let h = (hi - lo) / (n - 1) as f64;
    let nodes: Vec<f64> = (0..n).map(|i| lo + i as f64 * h).collect();
    let grid = &path.grid;
    let dt = grid.dt;
    let control = sys.is_control();

    let mut pi = initial_density(sys, &nodes)?;
    normalize(&mut pi, h, 0)?;

    let mut moments = ConditionalMoments::with_capacity(grid.n_steps + 1);
    let mut snapshots = Vec::new();
    let mut max_clipped = 0.0_f64;
    let mut first_boundary = None;

    // Reused across steps when nothing depends on time or on the channel.
    let mut g = vec![0.0; n];
    let fill_g = |g: &mut [f64], t: f64| {
        for (gi, &x) in g.iter_mut().zip(&nodes) {
            *gi = sys.channel_value(t, x);
        }
    };
    fill_g(&mut g, grid.time(0));
    let fixed_transport = if sys.autonomous && !control {
        let map = |x: f64| x + (sys.f)(0.0, x) * dt;
        Some(Transport::new(&nodes, &map)?)
    } else {
        None
    };
    let fixed_diffusion = if sys.autonomous && !control {
        Diffusion::new(sys, 0.0, &nodes, dt)
    } else {
        None
    };

    let mut work = vec![0.0; n];
    for k in 0..=grid.n_steps {
        let t = grid.time(k);
        if !sys.autonomous && k > 0 {
            fill_g(&mut g, t);
        }
        record_moments(&mut moments, &pi, &nodes, &g, h);
        let ratio = edge_ratio(&pi);
        if ratio >= BOUNDARY_TOL && first_boundary.is_none() {
            first_boundary = Some(k);
        }
        if let Some(every) = cfg.snapshot_every {
            if every > 0 && k % every == 0 {
                snapshots.push(ConditionalDensityGrid { lo, hi, n_cells: n, density: pi.clone(), t });
            }
        }
        if k == grid.n_steps {
            break;
        }
        let delta = path.channel[(0, k)];

        // correction
        let mut top = f64::NEG_INFINITY;
        for (w, &gi) in work.iter_mut().zip(&g) {
            *w = gi * delta - 0.5 * gi * gi * dt;
            top = top.max(*w);
        }
        if !top.is_finite() {
            return Err(Error::NumericalBreakdown { step: k, reason: "non-finite likelihood exponent".into() });
        }
        for (p, w) in pi.iter_mut().zip(&work) {
            *p *= (w - top).exp();
        }

        // transport
        let clipped = match &fixed_transport {
            Some(tr) => tr.apply(&pi, &mut work),
            None => {
                let map = |x: f64| {
                    let mut y = x + (sys.f)(t, x) * dt;
                    if control {
                        y += (sys.b)(t, x) * delta;
                    }
                    y
                };
                Transport::new(&nodes, &map)
                    .map_err(|e| at_step(e, k))?
                    .apply(&pi, &mut work)
            }
        };
        std::mem::swap(&mut pi, &mut work);

        if !control {
            match &fixed_diffusion {
                Some(d) => d.solve(&mut pi, &mut work),
                None => {
                    if let Some(d) = Diffusion::new(sys, t, &nodes, dt) {
                        d.solve(&mut pi, &mut work);
                    }
                }
            }
        }

        let mass = normalize(&mut pi, h, k + 1)?;
        let rel_clip = clipped * h / mass.max(f64::MIN_POSITIVE);
        max_clipped = max_clipped.max(rel_clip);
        if rel_clip > CLIP_TOL {
            return Err(Error::NumericalBreakdown {
                step: k + 1,
                reason: format!("clipped negative mass {rel_clip:.3e} exceeds {CLIP_TOL:e}; refine the grid or dt"),
            });
        }
    }

    Ok(GridRun {
        moments,
        max_clipped_mass: max_clipped,
        boundary_flag: first_boundary.is_some(),
        first_boundary_step: first_boundary,
        snapshots,
    })
}

fn at_step(e: Error, step: usize) -> Error {
    match e {
        Error::NumericalBreakdown { reason, .. } => Error::NumericalBreakdown { step, reason },
        other => other,
    }
}

fn initial_density(sys: &NonlinearScalarSystem, nodes: &[f64]) -> Result<Vec<f64>> {
    let s = sys.x0_std;
    if !(s > 0.0) {
        return Err(Error::InvalidInput("grid filter needs a prior with positive standard deviation".into()));
    }
    Ok(nodes
        .iter()
        .map(|&x| {
            let z = (x - sys.x0_mean) / s;
            (-0.5 * z * z).exp()
        })
        .collect())
}

fn normalize(pi: &mut [f64], h: f64, step: usize) -> Result<f64> {
    let mass = trapezoid(pi, h, |_| 1.0);
    if !(mass > 0.0) || !mass.is_finite() {
        return Err(Error::NumericalBreakdown {
            step,
            reason: format!("conditional density lost its mass ({mass:e}); the state left the grid"),
        });
    }
    for p in pi.iter_mut() {
        *p /= mass;
    }
    Ok(mass)
}

fn edge_ratio(pi: &[f64]) -> f64 {
    let peak = pi.iter().copied().fold(0.0, f64::max);
    let edge = pi[0].max(pi[pi.len() - 1]);
    if peak > 0.0 { edge / peak } else { 0.0 }
}

fn record_moments(m: &mut ConditionalMoments, pi: &[f64], nodes: &[f64], g: &[f64], h: f64) {
    let mean = trapezoid(pi, h, |i| nodes[i]);
    let var = trapezoid(pi, h, |i| (nodes[i] - mean) * (nodes[i] - mean));
    m.mean.push(mean);
    m.variance.push(var.max(0.0));
    m.g.push(trapezoid(pi, h, |i| g[i]));
    m.g2.push(trapezoid(pi, h, |i| g[i] * g[i]));
}

/// Semi-Lagrangian pushforward of a density through a one-step map.
struct Transport {
    /// Interpolation stencil start and weights at each departure point;
    /// `None` when the departure point is off the grid.
    stencil: Vec<Option<(usize, [f64; 4])>>,
    jacobian: Vec<f64>,
}

impl Transport {
    fn new(nodes: &[f64], map: &dyn Fn(f64) -> f64) -> Result<Self> {
        let n = nodes.len();
        let lo = nodes[0];
        let hi = nodes[n - 1];
        let h = nodes[1] - nodes[0];
        let mut departure = Vec::with_capacity(n);
        for &x in nodes {
            departure.push(invert(map, x)?);
        }
        let mut jacobian = Vec::with_capacity(n);
        for i in 0..n {
            let d = if i == 0 {
                (departure[1] - departure[0]) / h
            } else if i + 1 == n {
                (departure[n - 1] - departure[n - 2]) / h
            } else {
                (departure[i + 1] - departure[i - 1]) / (2.0 * h)
            };
            if !(d > 0.0) {
                return Err(Error::NumericalBreakdown {
                    step: 0,
                    reason: "one-step map is not monotone on the grid; reduce dt".into(),
                });
            }
            jacobian.push(d);
        }
        let stencil = departure
            .iter()
            .map(|&xd| {
                if xd < lo || xd > hi {
                    return None;
                }
                let s = (xd - lo) / h;
                let j = (s.floor() as isize - 1).clamp(0, n as isize - 4) as usize;
                let u = s - j as f64;
                Some((j, lagrange4(u)))
            })
            .collect();
        Ok(Self { stencil, jacobian })
    }

    /// Write the transported density into `out`; returns the clipped
    /// negative sum (node units).
    fn apply(&self, pi: &[f64], out: &mut [f64]) -> f64 {
        let mut clipped = 0.0;
        for (i, o) in out.iter_mut().enumerate() {
            *o = match self.stencil[i] {
                None => 0.0,
                Some((j, w)) => {
                    let v = (w[0] * pi[j] + w[1] * pi[j + 1] + w[2] * pi[j + 2] + w[3] * pi[j + 3]) * self.jacobian[i];
                    if v < 0.0 {
                        clipped -= v;
                        0.0
                    } else {
                        v
                    }
                }
            };
        }
        clipped
    }
}

/// Cubic Lagrange weights on nodes 0, 1, 2, 3 at offset `u`.
fn lagrange4(u: f64) -> [f64; 4] {
    let (a, b, c, d) = (u, u - 1.0, u - 2.0, u - 3.0);
    [-b * c * d / 6.0, a * c * d / 2.0, -a * b * d / 2.0, a * b * c / 6.0]
}

/// Solve `φ(ξ) = x` by fixed-point iteration from `ξ = x`.
fn invert(map: &dyn Fn(f64) -> f64, x: f64) -> Result<f64> {
    let mut xi = x;
    for _ in 0..100 {
        let next = xi - (map(xi) - x);
        if !next.is_finite() {
            break;
        }
        let done = (next - xi).abs() <= 1e-14 * (1.0 + x.abs());
        xi = next;
        if done {
            return Ok(xi);
        }
    }
    Err(Error::NumericalBreakdown {
        step: 0,
        reason: format!("departure point of x = {x:.6} did not converge; reduce dt"),
    })
}

/// Backward-Euler step of `∂π = ½∂ₓₓ(Dπ)` with zero boundary values.
/// The matrix is an M-matrix, so positivity is kept.
struct Diffusion {
    lower: Vec<f64>,
    /// Thomas factors.
    c_prime: Vec<f64>,
    denom: Vec<f64>,
}

impl Diffusion {
    fn new(sys: &NonlinearScalarSystem, t: f64, nodes: &[f64], dt: f64) -> Option<Self> {
        let n = nodes.len();
        let h = nodes[1] - nodes[0];
        let d: Vec<f64> = nodes
            .iter()
            .map(|&x| {
                let b = (sys.b)(t, x);
                sys.noise_scale * b * b
            })
            .collect();
        if d.iter().all(|&v| v == 0.0) {
            return None;
        }
        let r = dt / (2.0 * h * h);
        let diag: Vec<f64> = d.iter().map(|&v| 1.0 + 2.0 * r * v).collect();
        let lower: Vec<f64> = (0..n).map(|i| if i == 0 { 0.0 } else { -r * d[i - 1] }).collect();
        let upper: Vec<f64> = (0..n).map(|i| if i + 1 == n { 0.0 } else { -r * d[i + 1] }).collect();
        let mut c_prime = vec![0.0; n];
        let mut denom = vec![0.0; n];
        denom[0] = diag[0];
        c_prime[0] = upper[0] / denom[0];
        for i in 1..n {
            denom[i] = diag[i] - lower[i] * c_prime[i - 1];
            c_prime[i] = upper[i] / denom[i];
        }
        Some(Self { lower, c_prime, denom })
    }

    fn solve(&self, pi: &mut [f64], scratch: &mut [f64]) {
        let n = pi.len();
        scratch[0] = pi[0] / self.denom[0];
        for i in 1..n {
            scratch[i] = (pi[i] - self.lower[i] * scratch[i - 1]) / self.denom[i];
        }
        pi[n - 1] = scratch[n - 1];
        for i in (0..n - 1).rev() {
            pi[i] = scratch[i] - self.c_prime[i] * pi[i + 1];
        }
        for p in pi.iter_mut() {
            *p = p.max(0.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{filter_covariance, kalman_bucy_run, KalmanModel};
    use crate::linalg::{Mat, Vector};
    use crate::sde::{simulate_nonlinear, SeedSpec, SimOptions, TimeGrid};
    use crate::statespace::{ChannelMap, LtiSystem, LtvSystem};
    use std::sync::Arc;

    fn scalar_obs(a: f64, eps: f64, z: f64, x0_mean: f64, x0_std: f64) -> NonlinearScalarSystem {
        NonlinearScalarSystem {
            f: Arc::new(move |_, x| a * x),
            b: Arc::new(|_, _| 1.0),
            channel: ChannelMap::Observation(Arc::new(move |_, x| z * x)),
            noise_scale: eps,
            x0_mean,
            x0_std,
            truncation: (-10.0, 10.0),
            autonomous: true,
        }
    }

    #[test]
    fn lagrange_weights_reproduce_cubics() {
        let w = lagrange4(1.37);
        let f = |x: f64| 2.0 - x + 0.5 * x * x - 0.1 * x * x * x;
        let v: f64 = (0..4).map(|i| w[i] * f(i as f64)).sum();
        assert!((v - f(1.37)).abs() < 1e-13);
    }

    #[test]
    fn linear_gaussian_tracks_kalman_bucy() {
        let (a, eps) = (-0.5, 1.0);
        let sys = scalar_obs(a, eps, 1.0, 0.3, 1.0);
        let grid = TimeGrid::new(5.0, 1e-3).unwrap();
        let path = simulate_nonlinear(&sys, &grid, &SeedSpec::new(21), 0, &SimOptions::default()).unwrap();
        let run = kushner_grid_run(&sys, &path, &GridConfig::default()).unwrap();
        assert!(!run.boundary_flag);

        let m = |v: f64| Mat::from_element(1, 1, v);
        let lin = LtvSystem::from(&LtiSystem::new(m(a), m(1.0), m(1.0), None).unwrap());
        let cov = filter_covariance(&lin, KalmanModel::Observation { epsilon: eps }, &grid, &m(1.0)).unwrap();
        let kb = kalman_bucy_run(&lin, &path, &cov, &Vector::from_element(1, 0.3)).unwrap();

        let n = grid.n_steps + 1;
        let (mut dm, mut sd, mut dv) = (0.0, 0.0, 0.0);
        for k in 0..n {
            let p = cov.rde.p[k][(0, 0)];
            dm += (run.moments.mean[k] - kb.xhat[(0, k)]).abs();
            sd += p.sqrt();
            dv += (run.moments.variance[k] - p).abs() / p;
        }
        assert!(dm / sd < 0.02, "mean gap {}", dm / sd);
        assert!(dv / (n as f64) < 0.02, "variance gap {}", dv / n as f64);
    }

    #[test]
    fn blind_ou_relaxes_to_the_stationary_density() {
        let alpha = 1.0;
        let sys = scalar_obs(-alpha, 1.0, 0.0, 1.0, 0.5);
        let grid = TimeGrid::new(8.0, 1e-3).unwrap();
        let path = simulate_nonlinear(&sys, &grid, &SeedSpec::new(3), 0, &SimOptions::default()).unwrap();
        let cfg = GridConfig { support: Some((-5.0, 5.0)), snapshot_every: Some(grid.n_steps), ..Default::default() };
        let run = kushner_grid_run(&sys, &path, &cfg).unwrap();
        let last = run.snapshots.last().unwrap();
        let var = 1.0 / (2.0 * alpha);
        let diffs: Vec<f64> = (0..last.n_cells)
            .map(|i| {
                let x = last.node(i);
                let exact = (-x * x / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt();
                (last.density[i] - exact).abs()
            })
            .collect();
        let l1 = trapezoid(&diffs, last.spacing(), |_| 1.0);
        assert!(l1 < 0.01, "L1 distance {l1}");
        assert!((last.mass() - 1.0).abs() < 1e-9);
        assert!(run.moments.g.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn deterministic_bump_is_transported() {
        let sys = NonlinearScalarSystem {
            b: Arc::new(|_, _| 0.0),
            ..scalar_obs(-1.0, 1.0, 1.0, 1.0, 0.02)
        };
        let grid = TimeGrid::new(1.0, 1e-3).unwrap();
        let path = simulate_nonlinear(&sys, &grid, &SeedSpec::new(5), 0, &SimOptions::default()).unwrap();
        let cfg = GridConfig { support: Some((0.2, 1.2)), ..Default::default() };
        let run = kushner_grid_run(&sys, &path, &cfg).unwrap();
        let h = 1.0 / 1023.0;
        for k in (0..=grid.n_steps).step_by(100) {
            let x = path.states[(0, k)];
            let sd = run.moments.variance[k].sqrt();
            assert!(sd <= 0.02 + h, "bump spread to {sd}");
            assert!((run.moments.g[k] - x).abs() <= 4.0 * sd + 2.0 * h, "step {k}");
        }
        assert!(run.max_clipped_mass < CLIP_TOL);
    }
}
