//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Replace `m` by `(m + mᵀ)/2`.
pub fn symmetrize(m: &mut Mat) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

pub fn max_asymmetry(m: &Mat) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Smallest eigenvalue of a symmetric matrix (0 for an empty matrix).
pub fn min_sym_eigenvalue(m: &Mat) -> f64 {
    match m.nrows() {
        0 => 0.0,
        1 => m[(0, 0)],
        2 => {
            let (a, b, d) = (m[(0, 0)], 0.5 * (m[(0, 1)] + m[(1, 0)]), m[(1, 1)]);
            let mean = 0.5 * (a + d);
            let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
            mean - rad
        }
        _ => SymmetricEigen::new(m.clone()).eigenvalues.min(),
    }
}

pub fn trace(m: &Mat) -> f64 {
    m.trace()
}

/// Inverse of a symmetric positive-definite matrix together with its
/// 2-norm condition number. `None` if the matrix is not positive definite.
pub fn spd_inverse(m: &Mat) -> Option<(Mat, f64)> {
    let eig = SymmetricEigen::new(m.clone());
    let lo = eig.eigenvalues.min();
    let hi = eig.eigenvalues.max();
    if !(lo > 0.0) {
        return None;
    }
    let chol = m.clone().cholesky()?;
    Some((chol.inverse(), hi / lo))
}

/// Principal square root of a symmetric PSD matrix.
pub fn sym_sqrt(m: &Mat) -> Mat {
    let eig = SymmetricEigen::new(m.clone());
    let d = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * Mat::from_diagonal(&d) * eig.eigenvectors.transpose()
}

fn one_norm(m: &Mat) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Matrix exponential by scaling and squaring with a diagonal Padé(8, 8)
/// approximant.
pub fn expm(a: &Mat) -> Mat {
    const C: [f64; 9] = [
        1.0,
        0.5,
        0.1166666666666666666667,
        0.01666666666666666666667,
        0.001602564102564102564103,
        0.0001068376068376068376068,
        0.000004856254856254856254856,
        0.0000001387501387501387501387,
        0.000000001941094146626094146626,
    ];
    let n = a.nrows();
    let norm = one_norm(a);
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a / 2f64.powi(squarings);
    let ident = Mat::identity(n, n);
    let mut num = ident.clone() * C[0];
    let mut den = ident.clone() * C[0];
    let mut power = ident;
    for (k, c) in C.iter().enumerate().skip(1) {
        power = &power * &scaled;
        num += &power * *c;
        if k % 2 == 0 {
            den += &power * *c;
        } else {
            den -= &power * *c;
        }
    }
    let mut result = den
        .lu()
        .solve(&num)
        .expect("Padé denominator is nonsingular for scaled norm <= 0.5");
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

/// Matrix sign function by scaled Newton iteration. Requires no eigenvalue
/// on the imaginary axis.
pub fn matrix_sign(a: &Mat) -> Option<Mat> {
    let n = a.nrows();
    let mut s = a.clone();
    for _ in 0..100 {
        let inv = s.clone().try_inverse()?;
        let det = s.determinant().abs();
        let scale = if det > 0.0 && det.is_finite() {
            det.powf(-1.0 / n as f64)
        } else {
            1.0
        };
        let next = (&s * scale + inv / scale) * 0.5;
        let delta = (&next - &s).norm();
        s = next;
        if delta <= 1e-14 * s.norm().max(1.0) {
            return Some(s);
        }
    }
    None
}

/// Orthonormal basis (columns) for the range of a projector of known rank.
///
/// Dominant eigenvectors of `P·Pᵀ`, then one subspace-iteration sweep
/// through `P` to remove the squaring error.
pub fn range_basis(p: &Mat, rank: usize) -> Mat {
    let n = p.nrows();
    if rank == 0 {
        return Mat::zeros(n, 0);
    }
    let eig = SymmetricEigen::new(p * p.transpose());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let mut basis = Mat::zeros(n, rank);
    for (col, &idx) in order.iter().take(rank).enumerate() {
        basis.set_column(col, &eig.eigenvectors.column(idx));
    }
    for _ in 0..2 {
        basis = (p * basis).qr().q();
    }
    basis
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut acc = CompensatedSum::default();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

/// Mean and standard error of the mean, with compensated summation.
pub fn mean_and_std_error(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = compensated_sum(values.iter().copied()) / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = compensated_sum(values.iter().map(|v| (v - mean) * (v - mean))) / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Adaptive Simpson quadrature of `f` over `[a, b]`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    if a == b {
        return 0.0;
    }
    // Split into panels first so periodic integrands are not aliased.
    let panels = (((b - a).abs() / 0.5).ceil() as usize).max(1);
    let h = (b - a) / panels as f64;
    let mut acc = CompensatedSum::default();
    for p in 0..panels {
        let lo = a + p as f64 * h;
        let hi = if p + 1 == panels { b } else { lo + h };
        let (fa, fm, fb) = (f(lo), f(0.5 * (lo + hi)), f(hi));
        let whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
        acc.add(recurse(f, lo, hi, fa, fm, fb, whole, tol / panels as f64, 40));
    }
    acc.value()
}
