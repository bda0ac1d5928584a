//! Plants in three regimes (LTI, LTV, scalar nonlinear) and their spectral
//! descriptors: unstable-pole sums, stable/antistable modal decomposition,
//! Lyapunov exponents, dichotomy intervals and antistable trace averages.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;

use crate::builtins::ScalarFn;
use crate::error::{Error, Result};
use crate::linalg::{adaptive_simpson, matrix_sign, range_basis, Mat};

/// Eigenvalues with `|Re λ|` below this are treated as marginal.
pub const EIG_ZERO_TOL: f64 = 1e-9;

/// Off-block entries allowed in a matrix declared block-diagonal.
pub const MODAL_BLOCK_TOL: f64 = 1e-12;

pub type MatFn = Arc<dyn Fn(f64) -> Mat + Send + Sync>;

fn check_finite(name: &str, m: &Mat) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("matrix {name} has non-finite entries")))
    }
}

/// `dx = A x dt + B de`, output `C x`, optional linear law `u = K x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
    pub k: Option<Mat>,
}

impl LtiSystem {
    pub fn new(a: Mat, b: Mat, c: Mat, k: Option<Mat>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Dimension(format!("A is {}x{}, not square", n, a.ncols())));
        }
        if b.nrows() != n {
            return Err(Error::Dimension(format!("B has {} rows, expected {n}", b.nrows())));
        }
        if c.ncols() != n {
            return Err(Error::Dimension(format!("C has {} columns, expected {n}", c.ncols())));
        }
        if let Some(k) = &k {
            if k.nrows() != b.ncols() || k.ncols() != n {
                return Err(Error::Dimension(format!(
                    "K is {}x{}, expected {}x{n}",
                    k.nrows(),
                    k.ncols(),
                    b.ncols()
                )));
            }
        }
        check_finite("A", &a)?;
        check_finite("B", &b)?;
        check_finite("C", &c)?;
        if let Some(k) = &k {
            check_finite("K", k)?;
        }
        Ok(Self { a, b, c, k })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// Closed-loop drift `A + BK` (just `A` without a controller).
    pub fn closed_loop(&self) -> Mat {
        match &self.k {
            Some(k) => &self.a + &self.b * k,
            None => self.a.clone(),
        }
    }

    /// The same plant expressed in coordinates `ξ = T x`.
    pub fn transformed(&self, t: &Mat, t_inv: &Mat) -> Self {
        Self {
            a: t * &self.a * t_inv,
            b: t * &self.b,
            c: &self.c * t_inv,
            k: self.k.as_ref().map(|k| k * t_inv),
        }
    }
}

/// Time-varying plant given by matrix-valued functions of time.
#[derive(Clone)]
pub struct LtvSystem {
    n: usize,
    m: usize,
    p: usize,
    a: MatFn,
    b: MatFn,
    c: MatFn,
    k: Option<MatFn>,
    modal_split: Option<usize>,
    period: Option<f64>,
    constant: bool,
}

impl fmt::Debug for LtvSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LtvSystem")
            .field("n", &self.n)
            .field("m", &self.m)
            .field("p", &self.p)
            .field("has_k", &self.k.is_some())
            .field("modal_split", &self.modal_split)
            .field("period", &self.period)
            .field("constant", &self.constant)
            .finish()
    }
}

impl LtvSystem {
    /// Build from matrix functions; shapes are read off `t = 0`.
    pub fn new(a: MatFn, b: MatFn, c: MatFn, k: Option<MatFn>) -> Result<Self> {
        let lti = LtiSystem::new(a(0.0), b(0.0), c(0.0), k.as_ref().map(|k| k(0.0)))?;
        Ok(Self {
            n: lti.a.nrows(),
            m: lti.b.ncols(),
            p: lti.c.nrows(),
            a,
            b,
            c,
            k,
            modal_split: None,
            period: None,
            constant: false,
        })
    }

    /// Declare the system block-diagonal with a stable block of size `n_s`
    /// first. Checked on a sampled grid over `[0, horizon]`.
    pub fn with_modal_form(mut self, n_s: usize, horizon: f64) -> Result<Self> {
        if n_s > self.n {
            return Err(Error::Dimension(format!("split {n_s} exceeds state dimension {}", self.n)));
        }
        let samples = if self.constant { 1 } else { 400 };
        for i in 0..=samples {
            let t = horizon * i as f64 / samples as f64;
            let a = (self.a)(t);
            let off = off_block_norm(&a, n_s);
            if off >= MODAL_BLOCK_TOL {
                return Err(Error::InvalidInput(format!(
                    "A(t) is not block-diagonal at t = {t:.4} (off-block entry {off:.3e})"
                )));
            }
        }
        self.modal_split = Some(n_s);
        Ok(self)
    }

    /// Declare `A, B, C, K` periodic with the given period.
    pub fn with_period(mut self, period: f64) -> Result<Self> {
        if !(period > 0.0 && period.is_finite()) {
            return Err(Error::InvalidInput(format!("period must be positive, got {period}")));
        }
        self.period = Some(period);
        Ok(self)
    }

    /// Every matrix finite on a sampled grid of `[0, horizon]`.
    pub fn check_horizon(&self, horizon: f64) -> Result<()> {
        let samples = if self.constant { 1 } else { 200 };
        for i in 0..=samples {
            let t = horizon * i as f64 / samples as f64;
            for (name, m) in [("A", self.a(t)), ("B", self.b(t)), ("C", self.c(t))] {
                check_finite(name, &m).map_err(|_| {
                    Error::InvalidInput(format!("{name}(t) is not finite at t = {t:.4}"))
                })?;
            }
            if let Some(k) = self.k(t) {
                check_finite("K", &k)?;
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.n
    }
    pub fn input_dim(&self) -> usize {
        self.m
    }
    pub fn output_dim(&self) -> usize {
        self.p
    }
    pub fn a(&self, t: f64) -> Mat {
        (self.a)(t)
    }
    pub fn b(&self, t: f64) -> Mat {
        (self.b)(t)
    }
    pub fn c(&self, t: f64) -> Mat {
        (self.c)(t)
    }
    pub fn k(&self, t: f64) -> Option<Mat> {
        self.k.as_ref().map(|k| k(t))
    }
    pub fn has_controller(&self) -> bool {
        self.k.is_some()
    }
    pub fn modal_split(&self) -> Option<usize> {
        self.modal_split
    }
    pub fn period(&self) -> Option<f64> {
        self.period
    }
    /// True when built from an [`LtiSystem`]; simulators then evaluate the
    /// matrices once.
    pub fn is_constant(&self) -> bool {
        self.constant
    }

    /// Snapshot of the matrices at time `t`.
    pub fn at(&self, t: f64) -> LtiSystem {
        LtiSystem { a: self.a(t), b: self.b(t), c: self.c(t), k: self.k(t) }
    }

    fn require_split(&self) -> Result<usize> {
        self.modal_split
            .ok_or_else(|| Error::InvalidInput("system is not declared in modal form".into()))
    }

    /// Antistable block `A_u(t)`.
    pub fn a_u(&self, t: f64) -> Result<Mat> {
        let s = self.require_split()?;
        let u = self.n - s;
        Ok(self.a(t).view((s, s), (u, u)).into_owned())
    }

    /// Columns of `K(t)` acting on the antistable coordinates.
    pub fn k_u(&self, t: f64) -> Result<Option<Mat>> {
        let s = self.require_split()?;
        let u = self.n - s;
        Ok(self.k(t).map(|k| k.columns(s, u).into_owned()))
    }

    /// Columns of `C(t)` acting on the antistable coordinates.
    pub fn c_u(&self, t: f64) -> Result<Mat> {
        let s = self.require_split()?;
        let u = self.n - s;
        Ok(self.c(t).columns(s, u).into_owned())
    }
}

impl From<&LtiSystem> for LtvSystem {
    fn from(sys: &LtiSystem) -> Self {
        let (a, b, c) = (sys.a.clone(), sys.b.clone(), sys.c.clone());
        let k = sys.k.clone();
        Self {
            n: a.nrows(),
            m: b.ncols(),
            p: c.nrows(),
            a: Arc::new(move |_| a.clone()),
            b: Arc::new(move |_| b.clone()),
            c: Arc::new(move |_| c.clone()),
            k: k.map(|k| Arc::new(move |_: f64| k.clone()) as MatFn),
            modal_split: None,
            period: None,
            constant: true,
        }
    }
}

impl From<LtiSystem> for LtvSystem {
    fn from(sys: LtiSystem) -> Self {
        LtvSystem::from(&sys)
    }
}

fn off_block_norm(a: &Mat, n_s: usize) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in 0..n {
            if (i < n_s) != (j < n_s) {
                worst = worst.max(a[(i, j)].abs());
            }
        }
    }
    worst
}

/// What the scalar nonlinear plant exposes to the Gaussian channel.
#[derive(Clone)]
pub enum ChannelMap {
    /// Feedback channel `de = u(t, x) dt + dw`; the plant is driven through
    /// `b(t, x) de`.
    Control(ScalarFn),
    /// Observation channel `dy = z(t, x) dt + dv`.
    Observation(ScalarFn),
}

/// Scalar plant `dx = f dt + b·(noise)` with a memoryless channel map.
///
/// In control mode the state follows `dx = (f + b·u) dt + b dw`; in
/// observation mode `dx = f dt + √ε·b dw̄`.
#[derive(Clone)]
pub struct NonlinearScalarSystem {
    pub f: ScalarFn,
    pub b: ScalarFn,
    pub channel: ChannelMap,
    pub noise_scale: f64,
    pub x0_mean: f64,
    pub x0_std: f64,
    /// Interval on which the component functions are checked and on which
    /// grid filters may be truncated.
    pub truncation: (f64, f64),
    /// `f`, `b` and the channel map do not depend on time; filters may then
    /// reuse per-step operators.
    pub autonomous: bool,
}

impl fmt::Debug for NonlinearScalarSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NonlinearScalarSystem")
            .field("mode", &if self.is_control() { "control" } else { "observation" })
            .field("noise_scale", &self.noise_scale)
            .field("x0_mean", &self.x0_mean)
            .field("x0_std", &self.x0_std)
            .field("truncation", &self.truncation)
            .finish()
    }
}

impl NonlinearScalarSystem {
    pub fn is_control(&self) -> bool {
        matches!(self.channel, ChannelMap::Control(_))
    }

    /// The channel input `u(t, x)` or `z(t, x)`.
    pub fn channel_value(&self, t: f64, x: f64) -> f64 {
        match &self.channel {
            ChannelMap::Control(u) => u(t, x),
            ChannelMap::Observation(z) => z(t, x),
        }
    }

    /// Largest finite-difference slope of `f`, `b` and the channel map over
    /// the truncation interval at a few times in `[0, horizon]`. This is a
    /// sanity surrogate for a Lipschitz constant, not a proof of one.
    pub fn lipschitz_surrogate(&self, horizon: f64, n_grid: usize) -> Result<f64> {
        if self.noise_scale < 0.0 || !self.noise_scale.is_finite() {
            return Err(Error::InvalidInput(format!("noise scale must be >= 0, got {}", self.noise_scale)));
        }
        if !(self.x0_std >= 0.0) || !self.x0_mean.is_finite() {
            return Err(Error::InvalidInput("initial distribution must be finite".into()));
        }
        let (lo, hi) = self.truncation;
        if !(hi > lo) {
            return Err(Error::InvalidInput(format!("empty truncation interval [{lo}, {hi}]")));
        }
        let n_grid = n_grid.max(2);
        let h = (hi - lo) / (n_grid - 1) as f64;
        let mut worst = 0.0_f64;
        for ti in 0..=4 {
            let t = horizon * ti as f64 / 4.0;
            let fns: [(&str, &dyn Fn(f64) -> f64); 3] = [
                ("f", &|x| (self.f)(t, x)),
                ("b", &|x| (self.b)(t, x)),
                ("channel map", &|x| self.channel_value(t, x)),
            ];
            for (name, g) in fns {
                let mut prev = g(lo);
                for i in 1..n_grid {
                    let x = lo + i as f64 * h;
                    let v = g(x);
                    if !v.is_finite() {
                        return Err(Error::InvalidInput(format!(
                            "{name} is not finite at t = {t:.3}, x = {x:.4}"
                        )));
                    }
                    worst = worst.max(((v - prev) / h).abs());
                    prev = v;
                }
            }
        }
        if worst.is_finite() {
            Ok(worst)
        } else {
            Err(Error::InvalidInput("finite-difference slope is not finite".into()))
        }
    }
}

/// Spectral description of a plant.
#[derive(Debug, Clone, Default)]
pub struct SpectralSummary {
    /// Eigenvalues of `A` (LTI only).
    pub eigenvalues: Vec<Complex64>,
    /// Lyapunov exponents, descending (LTV only).
    pub lyapunov_exponents: Vec<f64>,
    /// Sum of the positive real parts or positive exponents.
    pub unstable_sum: f64,
    pub n_u: usize,
    /// Eigenvalues within [`EIG_ZERO_TOL`] of the imaginary axis.
    pub marginal: Vec<Complex64>,
    /// Time-averaged `tr A_u`, when known.
    pub trace_integral_au: Option<f64>,
    /// Largest change of an exponent between the estimates over
    /// `[0, 3H/4]` and `[0, H]`.
    pub convergence_deviation: Option<f64>,
    /// Interval over which the exponents were averaged.
    pub averaging_window: Option<(f64, f64)>,
}

/// Sum of the open-loop unstable poles of `A`.
pub fn unstable_pole_sum(sys: &LtiSystem) -> Result<SpectralSummary> {
    let a = &sys.a;
    if a.nrows() != a.ncols() {
        return Err(Error::Dimension("A must be square".into()));
    }
    let eigenvalues = eigenvalues(a);
    let mut summary = SpectralSummary { eigenvalues: eigenvalues.clone(), ..Default::default() };
    for ev in eigenvalues {
        if ev.re.abs() < EIG_ZERO_TOL {
            summary.marginal.push(ev);
        } else if ev.re > 0.0 {
            summary.unstable_sum += ev.re;
            summary.n_u += 1;
        }
    }
    summary.trace_integral_au = Some(summary.unstable_sum);
    Ok(summary)
}

/// Eigenvalues of a real square matrix.
pub fn eigenvalues(a: &Mat) -> Vec<Complex64> {
    match a.nrows() {
        0 => Vec::new(),
        1 => vec![Complex64::new(a[(0, 0)], 0.0)],
        _ => a.complex_eigenvalues().iter().copied().collect(),
    }
}

/// Similarity `ξ = T x` separating stable and antistable modes.
#[derive(Debug, Clone)]
pub struct ModalDecomposition {
    pub t: Mat,
    pub t_inv: Mat,
    pub n_s: usize,
    /// Plant in `ξ` coordinates: `A = diag(A_s, A_u)`.
    pub transformed: LtiSystem,
}

impl ModalDecomposition {
    pub fn n_u(&self) -> usize {
        self.transformed.dim() - self.n_s
    }
    pub fn a_s(&self) -> Mat {
        let s = self.n_s;
        self.transformed.a.view((0, 0), (s, s)).into_owned()
    }
    pub fn a_u(&self) -> Mat {
        let (s, u) = (self.n_s, self.n_u());
        self.transformed.a.view((s, s), (u, u)).into_owned()
    }
    pub fn b_s(&self) -> Mat {
        self.transformed.b.rows(0, self.n_s).into_owned()
    }
    pub fn b_u(&self) -> Mat {
        self.transformed.b.rows(self.n_s, self.n_u()).into_owned()
    }
    pub fn c_s(&self) -> Mat {
        self.transformed.c.columns(0, self.n_s).into_owned()
    }
    pub fn c_u(&self) -> Mat {
        self.transformed.c.columns(self.n_s, self.n_u()).into_owned()
    }

    /// The transformed plant as a modal-form [`LtvSystem`].
    pub fn to_ltv(&self) -> LtvSystem {
        let mut ltv = LtvSystem::from(&self.transformed);
        ltv.modal_split = Some(self.n_s);
        ltv
    }
}

/// Block separation of the stable and antistable invariant subspaces.
///
/// The spectral projectors `½(I ∓ sign A)` give the subspaces; complex pairs
/// stay together because they share a real part.
pub fn modal_decompose(sys: &LtiSystem) -> Result<ModalDecomposition> {
    let a = &sys.a;
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Dimension("A must be square".into()));
    }
    let eig = eigenvalues(a);
    if let Some(ev) = eig.iter().find(|ev| ev.re.abs() < EIG_ZERO_TOL) {
        return Err(Error::NoDichotomy { re: ev.re, tol: EIG_ZERO_TOL });
    }
    let n_u = eig.iter().filter(|ev| ev.re > 0.0).count();
    let n_s = n - n_u;
    let (t, t_inv) = if n_u == 0 || n_s == 0 {
        (Mat::identity(n, n), Mat::identity(n, n))
    } else {
        let sign = matrix_sign(a).ok_or(Error::NumericalBreakdown {
            step: 0,
            reason: "matrix sign iteration failed".into(),
        })?;
        let id = Mat::identity(n, n);
        let p_s = (&id - &sign) * 0.5;
        let p_u = (&id + &sign) * 0.5;
        let mut t_inv = Mat::zeros(n, n);
        t_inv.columns_mut(0, n_s).copy_from(&range_basis(&p_s, n_s));
        t_inv.columns_mut(n_s, n_u).copy_from(&range_basis(&p_u, n_u));
        let t = t_inv.clone().try_inverse().ok_or(Error::NumericalBreakdown {
            step: 0,
            reason: "modal basis is singular".into(),
        })?;
        (t, t_inv)
    };
    let mut transformed = sys.transformed(&t, &t_inv);
    let scale = 1.0 + a.norm();
    let off = off_block_norm(&transformed.a, n_s);
    if off > 1e-8 * scale {
        return Err(Error::NumericalBreakdown {
            step: 0,
            reason: format!("modal blocks did not decouple (off-block {off:.3e})"),
        });
    }
    for i in 0..n {
        for j in 0..n {
            if (i < n_s) != (j < n_s) {
                transformed.a[(i, j)] = 0.0;
            }
        }
    }
    Ok(ModalDecomposition { t, t_inv, n_s, transformed })
}

/// Per-block log growth recorded by the discrete QR method.
#[derive(Debug, Clone)]
pub struct QrTrace {
    /// End time of every re-orthonormalization block.
    pub times: Vec<f64>,
    /// Length of every block.
    pub spans: Vec<f64>,
    /// `log R_ii` of every block, one entry per column.
    pub logs: Vec<Vec<f64>>,
}

/// Default re-orthonormalization interval for a step size.
pub fn default_qr_interval(dt: f64) -> usize {
    if dt >= 1e-2 {
        1
    } else {
        10
    }
}

fn rk4_flow(sys: &LtvSystem, t: f64, dt: f64, y: &Mat) -> Mat {
    let a0 = sys.a(t);
    let am = sys.a(t + 0.5 * dt);
    let a1 = sys.a(t + dt);
    let k1 = &a0 * y;
    let k2 = &am * (y + &k1 * (0.5 * dt));
    let k3 = &am * (y + &k2 * (0.5 * dt));
    let k4 = &a1 * (y + &k3 * dt);
    y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}

/// Integrate the fundamental matrix with QR re-orthonormalization.
pub fn qr_trace(sys: &LtvSystem, horizon: f64, dt: f64, qr_interval: Option<usize>) -> Result<QrTrace> {
    let n_steps = (horizon / dt).round() as usize;
    if !(dt > 0.0) || n_steps < 100 {
        return Err(Error::InvalidInput(format!(
            "need at least 100 steps (horizon {horizon}, dt {dt})"
        )));
    }
    let interval = qr_interval.unwrap_or_else(|| default_qr_interval(dt)).max(1);
    let n = sys.dim();
    let mut q = Mat::identity(n, n);
    let mut trace = QrTrace { times: Vec::new(), spans: Vec::new(), logs: Vec::new() };
    let mut block_start = 0.0;
    for step in 0..n_steps {
        let t = step as f64 * dt;
        q = rk4_flow(sys, t, dt, &q);
        if !q.iter().all(|v| v.is_finite()) || q.amax() > 1e150 {
            return Err(Error::Overflow { step });
        }
        if (step + 1) % interval == 0 || step + 1 == n_steps {
            let t_end = (step + 1) as f64 * dt;
            let qr = q.clone().qr();
            let r = qr.r();
            let mut qm = qr.q();
            let mut logs = Vec::with_capacity(n);
            for i in 0..n {
                let d = r[(i, i)];
                if d == 0.0 || !d.is_finite() {
                    return Err(Error::NumericalBreakdown {
                        step,
                        reason: "fundamental matrix lost rank".into(),
                    });
                }
                if d < 0.0 {
                    let mut col = qm.column_mut(i);
                    col.neg_mut();
                }
                logs.push(d.abs().ln());
            }
            q = qm;
            trace.times.push(t_end);
            trace.spans.push(t_end - block_start);
            trace.logs.push(logs);
            block_start = t_end;
        }
    }
    Ok(trace)
}

/// Lyapunov exponents by the discrete QR method, sorted descending.
///
/// Growth is averaged over `[t_b, H]`, where the burn-in `t_b` is a tenth
/// of the horizon (a whole number of periods for periodic systems) so the
/// alignment transient of the initial frame does not bias the estimate.
pub fn lyapunov_exponents(sys: &LtvSystem, horizon: f64, dt: f64) -> Result<SpectralSummary> {
    lyapunov_exponents_with(sys, horizon, dt, None)
}

/// Burn-in used by [`lyapunov_exponents`].
pub fn lyapunov_burn_in(sys: &LtvSystem, horizon: f64) -> f64 {
    let raw = 0.1 * horizon;
    match sys.period() {
        Some(p) if !sys.is_constant() => (raw / p).floor() * p,
        _ => raw,
    }
}

pub fn lyapunov_exponents_with(
    sys: &LtvSystem,
    horizon: f64,
    dt: f64,
    qr_interval: Option<usize>,
) -> Result<SpectralSummary> {
    let tr = qr_trace(sys, horizon, dt, qr_interval)?;
    let n = sys.dim();
    let burn = lyapunov_burn_in(sys, horizon);
    let total = *tr.times.last().unwrap_or(&horizon);
    let cut = burn + 0.75 * (total - burn);
    let mut full = vec![0.0; n];
    let mut early = vec![0.0; n];
    let (mut start, mut early_end) = (0.0, 0.0);
    for (b, logs) in tr.logs.iter().enumerate() {
        let t_end = tr.times[b];
        if t_end <= burn + 1e-9 {
            start = t_end;
            continue;
        }
        for i in 0..n {
            full[i] += logs[i];
        }
        if t_end <= cut + 1e-9 {
            for i in 0..n {
                early[i] += logs[i];
            }
            early_end = t_end;
        }
    }
    let span = total - start;
    let early_span = (early_end - start).max(f64::MIN_POSITIVE);
    let mut exps: Vec<f64> = full.iter().map(|v| v / span).collect();
    let mut early_exps: Vec<f64> = early.iter().map(|v| v / early_span).collect();
    exps.sort_by(|a, b| b.total_cmp(a));
    early_exps.sort_by(|a, b| b.total_cmp(a));
    let deviation = exps
        .iter()
        .zip(&early_exps)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let floor = deviation.max(EIG_ZERO_TOL);
    let positive: Vec<f64> = exps.iter().copied().filter(|&v| v > floor).collect();
    let trace_integral_au = match sys.modal_split() {
        Some(_) => Some(antistable_trace_integral(sys, horizon)?),
        None => None,
    };
    Ok(SpectralSummary {
        eigenvalues: Vec::new(),
        unstable_sum: positive.iter().sum(),
        n_u: positive.len(),
        lyapunov_exponents: exps,
        marginal: Vec::new(),
        trace_integral_au,
        convergence_deviation: Some(deviation),
        averaging_window: Some((start, total)),
    })
}

/// Interval `[λ̲, λ̄]` per exponent, sorted by midpoint descending.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralInterval {
    pub lower: f64,
    pub upper: f64,
}

/// Numerical dichotomy-spectrum estimate from Steklov averages: QR growth
/// rates averaged over sliding windows of length `window`, after discarding
/// the first quarter of the horizon as burn-in.
pub fn dichotomy_spectrum(
    sys: &LtvSystem,
    horizon: f64,
    dt: f64,
    window: f64,
) -> Result<Vec<SpectralInterval>> {
    if !(window > 0.0) || window > 0.5 * horizon {
        return Err(Error::InvalidInput(format!(
            "window {window} must lie in (0, horizon/2]"
        )));
    }
    let tr = qr_trace(sys, horizon, dt, None)?;
    let n = sys.dim();
    let burn = 0.25 * horizon;
    let start = tr.times.iter().position(|&t| t > burn).unwrap_or(0);
    let times = &tr.times[start..];
    let logs = &tr.logs[start..];
    let spans = &tr.spans[start..];
    // prefix sums over blocks
    let mut pre_t = vec![0.0; times.len() + 1];
    let mut pre_l = vec![vec![0.0; n]; times.len() + 1];
    for b in 0..times.len() {
        pre_t[b + 1] = pre_t[b] + spans[b];
        for i in 0..n {
            pre_l[b + 1][i] = pre_l[b][i] + logs[b][i];
        }
    }
    let mut lower = vec![f64::INFINITY; n];
    let mut upper = vec![f64::NEG_INFINITY; n];
    let mut hi = 0;
    for lo in 0..times.len() {
        while hi < times.len() && pre_t[hi] - pre_t[lo] < window - 1e-9 {
            hi += 1;
        }
        let span = pre_t[hi] - pre_t[lo];
        if span < window - 1e-9 {
            break;
        }
        for i in 0..n {
            let rate = (pre_l[hi][i] - pre_l[lo][i]) / span;
            lower[i] = lower[i].min(rate);
            upper[i] = upper[i].max(rate);
        }
    }
    let mut out: Vec<SpectralInterval> = (0..n)
        .map(|i| SpectralInterval { lower: lower[i], upper: upper[i] })
        .collect();
    out.sort_by(|a, b| (b.lower + b.upper).total_cmp(&(a.lower + a.upper)));
    Ok(out)
}

/// `(1/H)∫₀ᴴ tr A_u(τ) dτ` for a modal-form system.
pub fn antistable_trace_integral(sys: &LtvSystem, horizon: f64) -> Result<f64> {
    let s = sys.require_split()?;
    if !(horizon > 0.0) {
        return Err(Error::InvalidInput(format!("horizon must be positive, got {horizon}")));
    }
    if sys.is_constant() {
        return Ok(sys.a(0.0).diagonal().iter().skip(s).sum());
    }
    let f = |t: f64| sys.a(t).diagonal().iter().skip(s).sum::<f64>();
    Ok(adaptive_simpson(&f, 0.0, horizon, 1e-12) / horizon)
}
