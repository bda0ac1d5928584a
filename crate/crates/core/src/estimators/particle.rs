//! Bootstrap particle filter for scalar nonlinear plants.
//!
//! Particles move with the plant dynamics (the Euler step of the simulator),
//! weights are multiplied by the same pathwise likelihood as the grid
//! filter, and the ensemble is resampled systematically when the effective
//! sample size drops below a fraction of `N`.
//!
//! When the propagation is deterministic (control channel, or `ε = 0`)
//! resampled duplicates would never separate, so each resampling is followed
//! by a moment-preserving kernel jitter.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::estimators::ConditionalMoments;
use crate::sde::{NoiseStream, SamplePath, SeedSpec};
use crate::statespace::NonlinearScalarSystem;

/// ESS below which the run is abandoned.
pub const MIN_ESS: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleConfig {
    pub n_particles: usize,
    /// Resample when `ESS < resample_fraction · N`.
    pub resample_fraction: f64,
    pub seed: SeedSpec,
}

impl ParticleConfig {
    pub fn new(n_particles: usize, master_seed: u64) -> Self {
        Self { n_particles, resample_fraction: 0.5, seed: SeedSpec::new(master_seed) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    pub particles: Vec<f64>,
    /// Normalized.
    pub weights: Vec<f64>,
    pub ess: f64,
}

impl ParticleEnsemble {
    fn uniform(particles: Vec<f64>) -> Self {
        let n = particles.len();
        Self { particles, weights: vec![1.0 / n as f64; n], ess: n as f64 }
    }

    /// Weighted mean of `h` and its standard error `√Σ wᵢ²(hᵢ − h̄)²`.
    pub fn mean_with_error<F: Fn(f64) -> f64>(&self, h: F) -> (f64, f64) {
        let mean: f64 = self.particles.iter().zip(&self.weights).map(|(&x, w)| w * h(x)).sum();
        let var: f64 = self
            .particles
            .iter()
            .zip(&self.weights)
            .map(|(&x, w)| {
                let d = h(x) - mean;
                w * w * d * d
            })
            .sum();
        (mean, var.sqrt())
    }
}

#[derive(Debug, Clone)]
pub struct ParticleRun {
    pub moments: ConditionalMoments,
    /// Standard error of the conditional mean estimate.
    pub se_mean: Vec<f64>,
    /// Standard error of `π(g)`.
    pub se_g: Vec<f64>,
    pub ess: Vec<f64>,
    pub resample_count: usize,
    pub ensemble: ParticleEnsemble,
}

/// Run the particle filter along `path`. Randomness comes from the filter
/// stream of `cfg.seed` at the path's index.
pub fn particle_filter_run(sys: &NonlinearScalarSystem, path: &SamplePath, cfg: &ParticleConfig) -> Result<ParticleRun> {
    let n = cfg.n_particles;
    if n < 100 {
        return Err(Error::InvalidInput(format!("particle filter needs N >= 100, got {n}")));
    }
    if !(cfg.resample_fraction > 0.0 && cfg.resample_fraction <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "resample fraction must be in (0, 1], got {}",
            cfg.resample_fraction
        )));
    }
    if path.states.nrows() != 1 || path.channel.nrows() != 1 {
        return Err(Error::Dimension("particle filter needs a scalar state and channel".into()));
    }
    let grid = &path.grid;
    let dt = grid.dt;
    let sqrt_dt = dt.sqrt();
    let control = sys.is_control();
    let diffusion = sys.noise_scale.sqrt();
    let deterministic = control || sys.noise_scale == 0.0;
    // Silverman bandwidth in units of the ensemble standard deviation.
    let bandwidth = (4.0 / (3.0 * n as f64)).powf(0.2);

    let mut rng = cfg.seed.rng(path.path_index, NoiseStream::Filter);
    let particles = (0..n)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            sys.x0_mean + sys.x0_std * z
        })
        .collect();
    let mut ens = ParticleEnsemble::uniform(particles);
    let mut logw = vec![0.0; n];
    let mut scratch = vec![0.0; n];

    let steps = grid.n_steps;
    let mut moments = ConditionalMoments::with_capacity(steps + 1);
    let mut se_mean = Vec::with_capacity(steps + 1);
    let mut se_g = Vec::with_capacity(steps + 1);
    let mut ess_trace = Vec::with_capacity(steps + 1);
    let mut resample_count = 0;

    for k in 0..=steps {
        let t = grid.time(k);
        let (m, sm) = ens.mean_with_error(|x| x);
        let (v, _) = ens.mean_with_error(|x| (x - m) * (x - m));
        let (g, sg) = ens.mean_with_error(|x| sys.channel_value(t, x));
        let (g2, _) = ens.mean_with_error(|x| {
            let c = sys.channel_value(t, x);
            c * c
        });
        moments.mean.push(m);
        moments.variance.push(v);
        moments.g.push(g);
        moments.g2.push(g2);
        se_mean.push(sm);
        se_g.push(sg);
        ess_trace.push(ens.ess);
        if k == steps {
            break;
        }
        let delta = path.channel[(0, k)];

        // weight update in log space
        let mut top = f64::NEG_INFINITY;
        for (lw, &x) in logw.iter_mut().zip(&ens.particles) {
            let c = sys.channel_value(t, x);
            *lw += c * delta - 0.5 * c * c * dt;
            top = top.max(*lw);
        }
        if !top.is_finite() {
            return Err(Error::NumericalBreakdown { step: k, reason: "non-finite particle log-weight".into() });
        }
        let mut total = 0.0;
        for (w, lw) in ens.weights.iter_mut().zip(logw.iter_mut()) {
            *lw -= top;
            *w = lw.exp();
            total += *w;
        }
        let mut sum_sq = 0.0;
        for w in ens.weights.iter_mut() {
            *w /= total;
            sum_sq += *w * *w;
        }
        ens.ess = 1.0 / sum_sq;
        if ens.ess < MIN_ESS {
            return Err(Error::Degeneracy { step: k + 1, ess: ens.ess });
        }
        if ens.ess < cfg.resample_fraction * n as f64 {
            systematic_resample(&mut ens, &mut scratch, rng.random::<f64>());
            logw.iter_mut().for_each(|lw| *lw = 0.0);
            resample_count += 1;
            if deterministic {
                jitter(&mut ens.particles, bandwidth, &mut rng);
            }
        }

        // propagation
        for x in ens.particles.iter_mut() {
            let f = (sys.f)(t, *x);
            let b = (sys.b)(t, *x);
            *x += f * dt;
            if control {
                *x += b * delta;
            } else if diffusion > 0.0 {
                let z: f64 = rng.sample(StandardNormal);
                *x += diffusion * b * sqrt_dt * z;
            }
            if !x.is_finite() {
                return Err(Error::NumericalBreakdown { step: k + 1, reason: "particle left the finite range".into() });
            }
        }
    }

    Ok(ParticleRun { moments, se_mean, se_g, ess: ess_trace, resample_count, ensemble: ens })
}

/// Systematic resampling with a single uniform offset `u0 ∈ [0, 1)`.
fn systematic_resample(ens: &mut ParticleEnsemble, scratch: &mut [f64], u0: f64) {
    let n = ens.particles.len();
    let step = 1.0 / n as f64;
    let mut cum = ens.weights[0];
    let mut j = 0;
    for (i, s) in scratch.iter_mut().enumerate() {
        let u = (u0 + i as f64) * step;
        while u > cum && j + 1 < n {
            j += 1;
            cum += ens.weights[j];
        }
        *s = ens.particles[j];
    }
    ens.particles.copy_from_slice(scratch);
    ens.weights.iter_mut().for_each(|w| *w = step);
    ens.ess = n as f64;
}

/// Shrink toward the mean and add Gaussian noise so that the ensemble mean
/// and variance are unchanged in expectation.
fn jitter<R: Rng>(particles: &mut [f64], bandwidth: f64, rng: &mut R) {
    let n = particles.len() as f64;
    let mean = particles.iter().sum::<f64>() / n;
    let var = particles.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let shrink = (1.0 - bandwidth * bandwidth).sqrt();
    let sd = bandwidth * var.sqrt();
    for x in particles.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *x = shrink * *x + (1.0 - shrink) * mean + sd * z;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{filter_covariance, kalman_bucy_run, kushner_grid_run, GridConfig, KalmanModel};
    use crate::linalg::{Mat, Vector};
    use crate::sde::{simulate_nonlinear, SimOptions, TimeGrid};
    use crate::statespace::{ChannelMap, LtiSystem, LtvSystem};
    use std::sync::Arc;

    fn observed(f: fn(f64) -> f64, eps: f64, z: f64, x0_mean: f64, x0_std: f64) -> NonlinearScalarSystem {
        NonlinearScalarSystem {
            f: Arc::new(move |_, x| f(x)),
            b: Arc::new(|_, _| 1.0),
            channel: ChannelMap::Observation(Arc::new(move |_, x| z * x)),
            noise_scale: eps,
            x0_mean,
            x0_std,
            truncation: (-10.0, 10.0),
            autonomous: true,
        }
    }

    fn rms_standardized(a: &[f64], b: &[f64], se: &[f64]) -> f64 {
        let s: f64 = a.iter().zip(b).zip(se).map(|((x, y), s)| ((x - y) / s).powi(2)).sum();
        (s / a.len() as f64).sqrt()
    }

    #[test]
    fn systematic_resampling_follows_weights() {
        let mut ens = ParticleEnsemble { particles: vec![1.0, 2.0, 3.0, 4.0], weights: vec![0.0, 0.5, 0.5, 0.0], ess: 2.0 };
        let mut scratch = vec![0.0; 4];
        systematic_resample(&mut ens, &mut scratch, 0.3);
        assert_eq!(ens.particles, vec![2.0, 2.0, 3.0, 3.0]);
        assert_eq!(ens.ess, 4.0);
    }

    #[test]
    fn small_ensembles_are_rejected() {
        let sys = observed(|x| -x, 1.0, 1.0, 0.0, 1.0);
        let grid = TimeGrid::new(0.1, 1e-2).unwrap();
        let path = simulate_nonlinear(&sys, &grid, &SeedSpec::new(1), 0, &SimOptions::default()).unwrap();
        assert!(matches!(particle_filter_run(&sys, &path, &ParticleConfig::new(50, 1)), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn linear_gaussian_matches_kalman_bucy() {
        let sys = observed(|x| -0.5 * x, 1.0, 1.0, 0.3, 1.0);
        let grid = TimeGrid::new(3.0, 1e-3).unwrap();
        let path = simulate_nonlinear(&sys, &grid, &SeedSpec::new(8), 0, &SimOptions::default()).unwrap();
        let run = particle_filter_run(&sys, &path, &ParticleConfig::new(10_000, 8)).unwrap();
        let m = |v: f64| Mat::from_element(1, 1, v);
        let lin = LtvSystem::from(&LtiSystem::new(m(-0.5), m(1.0), m(1.0), None).unwrap());
        let cov = filter_covariance(&lin, KalmanModel::Observation { epsilon: 1.0 }, &grid, &m(1.0)).unwrap();
        let kb = kalman_bucy_run(&lin, &path, &cov, &Vector::from_element(1, 0.3)).unwrap();
        let kb_mean: Vec<f64> = kb.xhat.row(0).iter().copied().collect();
        let r = rms_standardized(&run.moments.mean, &kb_mean, &run.se_mean);
        assert!(r <= 3.0, "rms standardized gap {r}");
        assert!(run.resample_count > 0);
    }

    #[test]
    fn cubic_drift_agrees_with_the_grid_filter() {
        let sys = observed(|x| -x * x * x, 0.5, 1.0, 0.0, 1.0);
        let grid = TimeGrid::new(2.0, 1e-3).unwrap();
        let path = simulate_nonlinear(&sys, &grid, &SeedSpec::new(13), 0, &SimOptions::default()).unwrap();
        let pf = particle_filter_run(&sys, &path, &ParticleConfig::new(10_000, 13)).unwrap();
        let gf = kushner_grid_run(&sys, &path, &GridConfig::default()).unwrap();
        let r = rms_standardized(&pf.moments.mean, &gf.moments.mean, &pf.se_mean);
        assert!(r <= 3.0, "rms standardized gap {r}");
    }

    #[test]
    fn blind_filter_never_resamples() {
        let sys = observed(|x| -x, 1.0, 0.0, 2.0, 0.5);
        let grid = TimeGrid::new(1.0, 1e-3).unwrap();
        let path = simulate_nonlinear(&sys, &grid, &SeedSpec::new(2), 0, &SimOptions::default()).unwrap();
        let run = particle_filter_run(&sys, &path, &ParticleConfig::new(5_000, 2)).unwrap();
        assert_eq!(run.resample_count, 0);
        // prior law of the Euler chain: mean 2(1 − dt)^k
        let k = grid.n_steps;
        let mean = 2.0 * (1.0 - grid.dt).powi(k as i32);
        assert!((run.moments.mean[k] - mean).abs() < 4.0 * run.se_mean[k]);
        assert!(run.ess.iter().all(|&e| (e - 5_000.0).abs() < 1e-6));
    }
}
