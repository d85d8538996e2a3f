//! Dense symmetric-matrix numerical kernels.
//!
//! The eigensolver is a cyclic Jacobi iteration: deterministic, accurate to
//! near machine precision, and entirely adequate for the dense matrices this
//! crate works with. Everything downstream (Ky Fan norms, matrix powers,
//! singular values) is built on it.

use crate::error::{Error, Result};
use crate::mat::Mat;

/// Off-diagonal Frobenius threshold, relative to `‖S‖_F`, at which the
/// Jacobi sweep stops.
const OFFDIAG_TOL: f64 = 1e-12;
/// Sweep cap for the Jacobi iteration.
const MAX_SWEEPS: usize = 100;
/// Permitted asymmetry, relative to `1 + ‖S‖_max`.
const SYM_TOL: f64 = 1e-12;
/// Eigenvalues of a nominally PSD matrix in `[-PSD_TOL·λ_max, 0)` are
/// clamped to zero; anything more negative is an error.
const PSD_TOL: f64 = 1e-9;
/// Relative eigenvalue floor for negative matrix powers.
const INVERT_TOL: f64 = 1e-12;

/// Eigendecomposition of a symmetric matrix: `S = V diag(λ) Vᵀ` with
/// eigenvalues sorted non-increasing and `V` orthonormal (column `i` pairs
/// with `eigenvalues[i]`). Each eigenvector is normalized so its first
/// significant coordinate is positive.
#[derive(Clone, Debug)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Mat,
    pub source_dim: usize,
}

impl EigenDecomposition {
    /// `V diag(λ) Vᵀ`.
    pub fn reconstruct(&self) -> Mat {
        let n = self.source_dim;
        let v = &self.eigenvectors;
        let mut out = Mat::zeros(n, n);
        for l in 0..n {
            let lam = self.eigenvalues[l];
            if lam == 0.0 {
                continue;
            }
            for i in 0..n {
                let vil = v.get(i, l) * lam;
                for j in 0..n {
                    let s = out.get(i, j) + vil * v.get(j, l);
                    out.set(i, j, s);
                }
            }
        }
        out
    }

    /// `‖VᵀV − I‖_max`.
    pub fn orthonormality_defect(&self) -> f64 {
        let v = &self.eigenvectors;
        let n = self.source_dim;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for l in 0..n {
                    s += v.get(l, i) * v.get(l, j);
                }
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((s - target).abs());
            }
        }
        worst
    }

    /// Applies `V f(λ) Vᵀ` for an entrywise spectrum map.
    pub fn apply_spectrum<F: Fn(f64) -> f64>(&self, f: F) -> Mat {
        let mapped: Vec<f64> = self.eigenvalues.iter().map(|&l| f(l)).collect();
        EigenDecomposition {
            eigenvalues: mapped,
            eigenvectors: self.eigenvectors.clone(),
            source_dim: self.source_dim,
        }
        .reconstruct()
    }
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Fails if the input is not symmetric within tolerance or the sweep cap is
/// reached before the off-diagonal mass drops below threshold.
pub fn sym_eig(s: &Mat) -> Result<EigenDecomposition> {
    if !s.is_square() {
        return Err(Error::InvalidInput(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            s.rows(),
            s.cols()
        )));
    }
    if !s.is_finite() {
        return Err(Error::InvalidInput(
            "matrix has non-finite entries".to_string(),
        ));
    }
    let scale = 1.0 + s.max_abs();
    if s.max_asymmetry() > SYM_TOL * scale {
        return Err(Error::InvalidInput(format!(
            "matrix is not symmetric: max asymmetry {:.3e}",
            s.max_asymmetry()
        )));
    }

    let n = s.rows();
    let mut a = s.clone();
    let mut v = Mat::identity(n);
    let frob = s.frobenius_norm();
    let stop = OFFDIAG_TOL * frob;

    let mut converged = frob == 0.0 || n == 1;
    for _sweep in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut off_sq = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off_sq += 2.0 * a.get(p, q) * a.get(p, q);
            }
        }
        if off_sq.sqrt() <= stop {
            converged = true;
            break;
        }
        for p in 0..(n - 1) {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let sn = t * c;
                let tau = sn / (1.0 + c);

                a.set(p, p, app - t * apq);
                a.set(q, q, aqq + t * apq);
                a.set(p, q, 0.0);
                a.set(q, p, 0.0);
                for j in 0..n {
                    if j != p && j != q {
                        let ajp = a.get(j, p);
                        let ajq = a.get(j, q);
                        a.set(j, p, ajp - sn * (ajq + tau * ajp));
                        a.set(p, j, a.get(j, p));
                        a.set(j, q, ajq + sn * (ajp - tau * ajq));
                        a.set(q, j, a.get(j, q));
                    }
                }
                for j in 0..n {
                    let vjp = v.get(j, p);
                    let vjq = v.get(j, q);
                    v.set(j, p, vjp - sn * (vjq + tau * vjp));
                    v.set(j, q, vjq + sn * (vjp - tau * vjq));
                }
            }
        }
    }
    if !converged {
        // one final check after the last sweep
        let mut off_sq = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off_sq += 2.0 * a.get(p, q) * a.get(p, q);
            }
        }
        if off_sq.sqrt() > stop {
            return Err(Error::Numerical(format!(
                "Jacobi eigensolver did not converge within {MAX_SWEEPS} sweeps"
            )));
        }
    }

    // Sort descending, permute eigenvectors, fix signs.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        a.get(j, j)
            .partial_cmp(&a.get(i, i))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let eigenvalues: Vec<f64> = order.iter().map(|&i| a.get(i, i)).collect();
    let mut vectors = Mat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col: Vec<f64> = (0..n).map(|r| v.get(r, src)).collect();
        let max_abs = col.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let threshold = 1e-12 * max_abs;
        if let Some(first) = col.iter().find(|x| x.abs() > threshold) {
            if *first < 0.0 {
                for x in col.iter_mut() {
                    *x = -*x;
                }
            }
        }
        for r in 0..n {
            vectors.set(r, dst, col[r]);
        }
    }

    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors: vectors,
        source_dim: n,
    })
}

/// Checks the spectrum of a nominally PSD matrix: small negative values are
/// clamped to zero, genuinely negative ones are an error.
pub(crate) fn clamp_psd_spectrum(eigenvalues: &mut [f64]) -> Result<()> {
    let lam_max = eigenvalues.iter().fold(0.0f64, |m, &x| m.max(x));
    let floor = -PSD_TOL * lam_max.max(f64::MIN_POSITIVE);
    for l in eigenvalues.iter_mut() {
        if *l < floor {
            return Err(Error::InvalidInput(format!(
                "matrix is not positive semidefinite: eigenvalue {:.6e}",
                *l
            )));
        }
        if *l < 0.0 {
            *l = 0.0;
        }
    }
    Ok(())
}

/// Ky Fan k-norm of a PSD matrix: the sum of its `k` largest eigenvalues.
pub fn ky_fan_norm(s: &Mat, k: usize) -> Result<f64> {
    if k == 0 || k > s.rows() {
        return Err(Error::InvalidInput(format!(
            "Ky Fan order {} out of range for dimension {}",
            k,
            s.rows()
        )));
    }
    let mut eig = sym_eig(s)?;
    clamp_psd_spectrum(&mut eig.eigenvalues)?;
    Ok(eig.eigenvalues[..k].iter().sum())
}

/// Trace norm: the sum of singular values, computed from the spectrum of the
/// smaller Gram matrix.
pub fn trace_norm(m: &Mat) -> Result<f64> {
    let gram = if m.rows() <= m.cols() {
        m.gram_rows()
    } else {
        m.gram_cols()
    };
    let eig = sym_eig(&gram)?;
    Ok(eig
        .eigenvalues
        .iter()
        .map(|&l| l.max(0.0).sqrt())
        .sum())
}

/// Smallest singular value: `min_x ‖Mx‖₂ / ‖x‖₂` over the column space, the
/// square root of the smallest eigenvalue of `MᵀM`.
pub fn sigma_min(m: &Mat) -> Result<f64> {
    let gram = m.gram_cols();
    let eig = sym_eig(&gram)?;
    let smallest = eig.eigenvalues.last().copied().unwrap_or(0.0);
    Ok(smallest.max(0.0).sqrt())
}

/// The matrix powers supported by [`psd_power`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MatrixPower {
    /// `S^{1/2}`
    Sqrt,
    /// `S^{-1/2}`
    InvSqrt,
    /// `S^{-1}`
    Inverse,
}

/// Spectral power of a PSD matrix. Negative powers require the smallest
/// eigenvalue to stay above `1e-12·λ_max`.
pub fn psd_power(s: &Mat, power: MatrixPower) -> Result<Mat> {
    let mut eig = sym_eig(s)?;
    clamp_psd_spectrum(&mut eig.eigenvalues)?;
    let lam_max = eig.eigenvalues.first().copied().unwrap_or(0.0);
    let lam_min = eig.eigenvalues.last().copied().unwrap_or(0.0);
    if matches!(power, MatrixPower::InvSqrt | MatrixPower::Inverse)
        && lam_min < INVERT_TOL * lam_max.max(f64::MIN_POSITIVE)
    {
        return Err(Error::Numerical(format!(
            "matrix is too close to singular for a negative power: λ_min = {:.3e}, λ_max = {:.3e}",
            lam_min, lam_max
        )));
    }
    let out = match power {
        MatrixPower::Sqrt => eig.apply_spectrum(|l| l.sqrt()),
        MatrixPower::InvSqrt => eig.apply_spectrum(|l| 1.0 / l.sqrt()),
        MatrixPower::Inverse => eig.apply_spectrum(|l| 1.0 / l),
    };
    Ok(out)
}

#[cfg(test)]
pub(crate) mod tests_support {
    use super::Mat;
    use crate::rng::SeededRng;

    pub(crate) fn random_symmetric(n: usize, rng: &mut SeededRng) -> Mat {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = 2.0 * rng.unit_open() - 1.0;
                m.set(i, j, v);
                m.set(j, i, v);
            }
        }
        m
    }

    /// Random PSD matrix `B Bᵀ`.
    pub(crate) fn random_psd(n: usize, rng: &mut SeededRng) -> Mat {
        let b = random_symmetric(n, rng);
        b.matmul(&b.transpose())
    }

    /// Random positive definite matrix `B Bᵀ + 0.1 I`.
    pub(crate) fn random_pd(n: usize, rng: &mut SeededRng) -> Mat {
        let mut m = random_psd(n, rng);
        for i in 0..n {
            m.set(i, i, m.get(i, i) + 0.1);
        }
        m
    }
}
