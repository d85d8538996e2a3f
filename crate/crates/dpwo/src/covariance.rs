//! Noise covariance design by Ky Fan norm minimization.
//!
//! The target program picks the noise covariance `Σ` minimizing the sum of
//! its `k` largest eigenvalues subject to the privacy constraint
//! `a_eᵀ Σ⁻¹ a_e ≤ 1` for every workload column. We solve it through its
//! dual: maximize `h_k(A Q Aᵀ)²` over diagonal `Q ⪰ 0` with unit trace,
//! where `h_k` is a concave spectral function. The dual runs as Frank-Wolfe
//! supergradient ascent on the simplex; the primal covariance is then
//! reconstructed in closed form from the dual spectrum, repaired to exact
//! feasibility, and certified by the relative duality gap.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat::{self, Mat};
use crate::spectral::{self, EigenDecomposition};
use crate::workload::QueryMatrix;

/// Eigenvalues below `RANK_TOL · λ_max` count as zero for rank decisions.
const RANK_TOL: f64 = 1e-10;
/// Near-tie width, relative to the top eigenvalue, at which the
/// supergradient averages coefficients across the tied block.
const TIE_TOL: f64 = 1e-8;
/// Mixing weight toward the uniform dual point when the spectrum is rank
/// deficient at reconstruction time.
const REGULARIZE_GAMMA: f64 = 1e-6;

/// Feasible point of the dual program: simplex weights `q` over the
/// universe together with the value and spectrum summary of `h_k(A Q Aᵀ)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DualSolution {
    /// Nonnegative weights over universe elements, summing to one.
    pub q: Vec<f64>,
    /// `h_k(A Q Aᵀ)`.
    pub hk_value: f64,
    /// The split point of `h_k`: the head holds eigenvalues strictly above
    /// the tail average.
    pub threshold_t: usize,
    /// Tail average `Σ_{i>t} σ_i / (k−t)`.
    pub alpha: f64,
    pub k: usize,
    pub iterations_used: usize,
    /// Frank-Wolfe supergradient gap at the returned point (absolute).
    pub fw_gap: f64,
    /// Best objective value seen up to each iteration; non-decreasing.
    pub history: Vec<f64>,
}

/// Optimized noise covariance plus everything needed to certify it.
#[derive(Clone, Debug)]
pub struct CovarianceDesign {
    /// The noise covariance `Σ`, symmetric positive definite.
    pub sigma: Mat,
    pub k: usize,
    /// `‖Σ‖_(k)`, the sum of the k largest eigenvalues.
    pub kyfan_value: f64,
    /// `max_e a_eᵀ Σ⁻¹ a_e` after repair; at most `1 + 1e-9`.
    pub feasibility_slack: f64,
    /// The pre-repair constraint maximum; `Σ` was multiplied by this factor
    /// when it exceeded one.
    pub rescale_factor: f64,
    pub eig: EigenDecomposition,
    pub dual: DualSolution,
}

/// Value of `h_k` together with its threshold split.
#[derive(Clone, Copy, Debug)]
pub struct HkInfo {
    pub value: f64,
    pub threshold_t: usize,
    pub alpha: f64,
}

/// Supergradient of `q ↦ h_k(A Q Aᵀ)`.
#[derive(Clone, Debug)]
pub struct Supergradient {
    pub per_element: Vec<f64>,
    /// Set when eigenvalues were tied across the threshold boundary and the
    /// tied block's coefficients were averaged.
    pub boundary_tie: bool,
}

/// Options for [`dual_ascent`] and [`optimize_covariance`].
#[derive(Clone, Copy, Debug)]
pub struct SolverOptions {
    pub max_iters: usize,
    /// Relative supergradient-gap stopping tolerance.
    pub tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iters: 2000,
            tol: 1e-7,
        }
    }
}

/// The unique split point `t ∈ [0, k−1]` of a non-increasing nonnegative
/// spectrum: the head `σ_1..σ_t` lies strictly above the tail average
/// `Σ_{i>t} σ_i / (k−t)`, which in turn is at least `σ_{t+1}`. (`σ_0 = ∞`.)
pub fn find_threshold_t(sigmas: &[f64], k: usize) -> Result<usize> {
    if k == 0 || k > sigmas.len() {
        return Err(Error::InvalidInput(format!(
            "threshold order {} out of range for spectrum length {}",
            k,
            sigmas.len()
        )));
    }
    for w in sigmas.windows(2) {
        if w[1] > w[0] {
            return Err(Error::InvalidInput(
                "spectrum must be sorted non-increasing".to_string(),
            ));
        }
    }
    if sigmas.last().copied().unwrap_or(0.0) < 0.0 {
        return Err(Error::InvalidInput(
            "spectrum must be nonnegative".to_string(),
        ));
    }
    let mut fallback: Option<(f64, usize)> = None;
    for t in 0..k {
        let tail: f64 = sigmas[t..].iter().sum();
        let tail_avg = tail / (k - t) as f64;
        let head_ok = t == 0 || sigmas[t - 1] > tail_avg;
        let tail_ok = tail_avg >= sigmas[t];
        if head_ok && tail_ok {
            return Ok(t);
        }
        // margin by which the double inequality fails; a roundoff-degenerate
        // spectrum may miss every t by a few ulps, in which case the closest
        // split is as good as any (h_k is continuous across the tie)
        let head_violation = if t == 0 {
            0.0
        } else {
            (tail_avg - sigmas[t - 1]).max(0.0)
        };
        let tail_violation = (sigmas[t] - tail_avg).max(0.0);
        let violation = head_violation + tail_violation;
        if fallback.is_none_or(|(v, _)| violation < v) {
            fallback = Some((violation, t));
        }
    }
    let (violation, t) = fallback.expect("k ≥ 1 guarantees a candidate");
    let scale = sigmas[0].max(f64::MIN_POSITIVE);
    if violation > 1e-9 * scale {
        return Err(Error::Numerical(
            "no valid threshold found; spectrum may contain NaN".to_string(),
        ));
    }
    Ok(t)
}

/// `h_k` evaluated on an already-sorted nonnegative spectrum.
pub fn h_k_from_spectrum(sigmas: &[f64], k: usize) -> Result<HkInfo> {
    let t = find_threshold_t(sigmas, k)?;
    let head: f64 = sigmas[..t].iter().map(|s| s.sqrt()).sum();
    let tail: f64 = sigmas[t..].iter().sum();
    let alpha = tail / (k - t) as f64;
    let value = head + ((k - t) as f64).sqrt() * tail.sqrt();
    Ok(HkInfo {
        value,
        threshold_t: t,
        alpha,
    })
}

/// `h_k(S) = Σ_{i≤t} σ_i^{1/2} + √(k−t) (Σ_{i>t} σ_i)^{1/2}` at the unique
/// threshold `t`, for a PSD matrix `S`.
pub fn h_k(s: &Mat, k: usize) -> Result<HkInfo> {
    let mut eig = spectral::sym_eig(s)?;
    spectral::clamp_psd_spectrum(&mut eig.eigenvalues)?;
    h_k_from_spectrum(&eig.eigenvalues, k)
}

/// Per-eigenvalue supergradient coefficients of `h_k`: `σ_i^{-1/2}/2` on the
/// head, `√(k−t) (Σ_{i>t} σ_i)^{-1/2}/2` on the tail, averaged across any
/// block tied with the boundary.
fn supergradient_coefficients(
    sigmas: &[f64],
    k: usize,
) -> Result<(Vec<f64>, HkInfo, bool)> {
    let info = h_k_from_spectrum(sigmas, k)?;
    let t = info.threshold_t;
    let tail: f64 = sigmas[t..].iter().sum();
    if tail <= 0.0 {
        return Err(Error::Numerical(
            "supergradient undefined: spectrum has rank below the threshold split".to_string(),
        ));
    }
    let tail_coef = 0.5 * ((k - t) as f64).sqrt() / tail.sqrt();
    let mut coefs: Vec<f64> = Vec::with_capacity(sigmas.len());
    for (i, &s) in sigmas.iter().enumerate() {
        if i < t {
            coefs.push(0.5 / s.sqrt());
        } else {
            coefs.push(tail_coef);
        }
    }

    let mut tie = false;
    if t > 0 {
        let scale = sigmas[0].max(f64::MIN_POSITIVE);
        if (sigmas[t - 1] - sigmas[t]).abs() <= TIE_TOL * scale {
            // maximal block tied with the boundary value
            let boundary = sigmas[t - 1];
            let mut lo = t - 1;
            while lo > 0 && (sigmas[lo - 1] - boundary).abs() <= TIE_TOL * scale {
                lo -= 1;
            }
            let mut hi = t;
            while hi + 1 < sigmas.len() && (sigmas[hi + 1] - boundary).abs() <= TIE_TOL * scale
            {
                hi += 1;
            }
            let avg: f64 =
                coefs[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64;
            for c in coefs[lo..=hi].iter_mut() {
                *c = avg;
            }
            tie = true;
        }
    }
    Ok((coefs, info, tie))
}

/// Spectrum and eigenvectors of `A diag(q) Aᵀ` with tiny negatives clamped.
fn weighted_gram_eig(a: &QueryMatrix, q: &[f64]) -> Result<EigenDecomposition> {
    if q.len() != a.universe_size() {
        return Err(Error::InvalidInput(format!(
            "weight length {} does not match universe size {}",
            q.len(),
            a.universe_size()
        )));
    }
    let gram = a.mat().weighted_gram(q);
    let mut eig = spectral::sym_eig(&gram)?;
    for l in eig.eigenvalues.iter_mut() {
        if *l < 0.0 {
            *l = 0.0;
        }
    }
    Ok(eig)
}

/// Assembles `g_e = Σ_i coef_i (u_iᵀ a_e)²` through `B = Uᵀ A`.
fn supergradient_vector(
    a: &QueryMatrix,
    q: &[f64],
    k: usize,
) -> Result<(Vec<f64>, HkInfo, bool)> {
    let eig = weighted_gram_eig(a, q)?;
    if eig.eigenvalues[0] <= 0.0 {
        return Err(Error::InvalidInput(
            "supergradient undefined for the zero matrix".to_string(),
        ));
    }
    let (coefs, info, tie) = supergradient_coefficients(&eig.eigenvalues, k)?;
    let b = eig.eigenvectors.transpose().matmul(a.mat());
    let u = a.universe_size();
    let m = a.num_queries();
    let mut g = vec![0.0; u];
    for e in 0..u {
        let mut s = 0.0;
        for i in 0..m {
            let be = b.get(i, e);
            s += coefs[i] * be * be;
        }
        g[e] = s;
    }
    Ok((g, info, tie))
}

/// Supergradient of `q ↦ h_k(A Q Aᵀ)` at a nonnegative weight vector:
/// coordinate `e` is `a_eᵀ G a_e` for the spectral supergradient matrix `G`.
pub fn hk_supergradient(a: &QueryMatrix, q: &[f64], k: usize) -> Result<Supergradient> {
    let (g, _, tie) = supergradient_vector(a, q, k)?;
    Ok(Supergradient {
        per_element: g,
        boundary_tie: tie,
    })
}

struct DualEvaluation {
    info: HkInfo,
    gap: f64,
    best_column: usize,
}

fn evaluate_dual_point(a: &QueryMatrix, q: &[f64], k: usize) -> Result<DualEvaluation> {
    let (grad, info, _) = supergradient_vector(a, q, k)?;
    let mut best_column = 0;
    let mut best = f64::NEG_INFINITY;
    for (e, &ge) in grad.iter().enumerate() {
        if ge > best {
            best = ge;
            best_column = e;
        }
    }
    let gap = best - mat::dot(&grad, q);
    Ok(DualEvaluation {
        info,
        gap,
        best_column,
    })
}

/// Frank-Wolfe supergradient ascent for the dual program
/// `max h_k(A Q Aᵀ)` over the simplex.
///
/// Requires the workload to have full row rank (the strong-duality
/// hypothesis); use [`optimize_covariance`] for rank-deficient workloads.
/// Iterates put all step mass on the coordinate with the largest
/// supergradient entry (smallest index on ties) with step `2/(iter+2)`,
/// keeping every iterate strictly positive. The returned point is the
/// iterate with the smallest relative supergradient gap; `history` records
/// the best objective value seen by each iteration.
pub fn dual_ascent(a: &QueryMatrix, k: usize, opts: &SolverOptions) -> Result<DualSolution> {
    let m = a.num_queries();
    let u = a.universe_size();
    if k == 0 {
        return Err(Error::InvalidInput("k must be ≥ 1".to_string()));
    }
    if k > m {
        return Err(Error::InvalidInput(format!(
            "k = {k} exceeds the number of queries {m}"
        )));
    }
    if !a.is_full_row_rank()? {
        return Err(Error::InvalidInput(
            "workload is rank deficient: the dual program needs linearly independent queries"
                .to_string(),
        ));
    }
    if opts.max_iters == 0 {
        return Err(Error::InvalidInput("max_iters must be ≥ 1".to_string()));
    }

    let mut q = vec![1.0 / u as f64; u];
    let mut history = Vec::with_capacity(opts.max_iters);
    let mut best_h = f64::NEG_INFINITY;

    struct Best {
        q: Vec<f64>,
        info: HkInfo,
        gap: f64,
        rel_gap: f64,
    }
    let mut returned: Option<Best> = None;
    let mut iterations_used = 0;

    for iter in 1..=opts.max_iters {
        iterations_used = iter;
        let eval = evaluate_dual_point(a, &q, k)?;
        let h = eval.info.value;
        best_h = best_h.max(h);
        history.push(best_h);

        let rel_gap = eval.gap / h.max(f64::MIN_POSITIVE);
        if returned.as_ref().is_none_or(|b| rel_gap < b.rel_gap) {
            returned = Some(Best {
                q: q.clone(),
                info: eval.info,
                gap: eval.gap,
                rel_gap,
            });
        }
        if eval.gap <= opts.tol * h.max(f64::MIN_POSITIVE) {
            break;
        }

        let gamma = 2.0 / (iter as f64 + 2.0);
        for (e, qe) in q.iter_mut().enumerate() {
            *qe *= 1.0 - gamma;
            if e == eval.best_column {
                *qe += gamma;
            }
        }
        let total: f64 = q.iter().sum();
        for qe in q.iter_mut() {
            *qe /= total;
        }
    }

    let best = returned.expect("at least one iteration ran");
    Ok(DualSolution {
        q: best.q,
        hk_value: best.info.value,
        threshold_t: best.info.threshold_t,
        alpha: best.info.alpha,
        k,
        iterations_used,
        fw_gap: best.gap,
        history,
    })
}

/// Reconstructs the primal covariance from a dual point.
///
/// The spectrum of `A (cQ) Aᵀ` with `c = h_k(AQAᵀ)²` is flattened to its
/// tail average past the threshold and padded below rank, and `Σ` is the
/// square root of the flattened matrix. If the constraint maximum
/// `max_e a_eᵀ Σ⁻¹ a_e` exceeds one, `Σ` is scaled up by it, so the returned
/// design is always feasible; the factor is reported.
pub fn primal_from_dual(a: &QueryMatrix, dual: &DualSolution) -> Result<CovarianceDesign> {
    let m = a.num_queries();
    let u = a.universe_size();
    let k = dual.k;
    if dual.q.len() != u {
        return Err(Error::InvalidInput(format!(
            "dual weight length {} does not match universe size {}",
            dual.q.len(),
            u
        )));
    }
    if k == 0 || k > m {
        return Err(Error::InvalidInput(format!(
            "k = {k} out of range for {m} queries"
        )));
    }
    let total: f64 = dual.q.iter().sum();
    if (total - 1.0).abs() > 1e-9 || dual.q.iter().any(|&x| x < 0.0) {
        return Err(Error::InvalidInput(
            "dual weights must be a probability vector".to_string(),
        ));
    }

    // Regularize toward uniform until the weighted gram has rank ≥ k.
    let mut q = dual.q.clone();
    let mut info;
    let mut eig;
    let mut attempts = 0;
    loop {
        info = {
            let e = weighted_gram_eig(a, &q)?;
            h_k_from_spectrum(&e.eigenvalues, k)?
        };
        let c = info.value * info.value;
        if c <= 0.0 {
            return Err(Error::Numerical(
                "dual value is zero; the workload has no mass".to_string(),
            ));
        }
        let scaled_q: Vec<f64> = q.iter().map(|&x| c * x).collect();
        eig = weighted_gram_eig(a, &scaled_q)?;
        let lam_max = eig.eigenvalues[0];
        let rank = eig
            .eigenvalues
            .iter()
            .filter(|&&l| l > RANK_TOL * lam_max.max(f64::MIN_POSITIVE))
            .count();
        if rank >= k {
            break;
        }
        attempts += 1;
        if attempts > 3 {
            return Err(Error::Numerical(format!(
                "weighted gram rank {rank} stayed below k = {k} after regularization"
            )));
        }
        let uniform = 1.0 / u as f64;
        for x in q.iter_mut() {
            *x = (1.0 - REGULARIZE_GAMMA) * *x + REGULARIZE_GAMMA * uniform;
        }
    }

    // Flattened spectrum: head kept, tail averaged, below-rank indices
    // padded at half the tail average.
    let t = find_threshold_t(&eig.eigenvalues, k)?;
    let lam_max = eig.eigenvalues[0];
    let rank = eig
        .eigenvalues
        .iter()
        .filter(|&&l| l > RANK_TOL * lam_max.max(f64::MIN_POSITIVE))
        .count();
    let tail: f64 = eig.eigenvalues[t..].iter().sum();
    let alpha_c = tail / (k - t) as f64;
    // Σ's spectrum: square roots of the flattened values
    let mut sigma_spectrum = Vec::with_capacity(m);
    for i in 0..m {
        let flat = if i < t {
            eig.eigenvalues[i]
        } else if i < rank {
            alpha_c
        } else {
            alpha_c / 2.0
        };
        sigma_spectrum.push(flat.sqrt());
    }

    // Constraint forms a_eᵀ Σ⁻¹ a_e through the eigenbasis.
    let b = eig.eigenvectors.transpose().matmul(a.mat());
    let mut slack_pre = 0.0f64;
    for e in 0..u {
        let mut s = 0.0;
        for i in 0..m {
            let be = b.get(i, e);
            s += be * be / sigma_spectrum[i];
        }
        slack_pre = slack_pre.max(s);
    }

    let factor = if slack_pre > 1.0 { slack_pre } else { 1.0 };
    let final_eigenvalues: Vec<f64> = sigma_spectrum.iter().map(|&s| factor * s).collect();
    let final_eig = EigenDecomposition {
        eigenvalues: final_eigenvalues.clone(),
        eigenvectors: eig.eigenvectors.clone(),
        source_dim: m,
    };
    let sigma = final_eig.reconstruct();
    let kyfan_value: f64 = final_eigenvalues[..k].iter().sum();
    let feasibility_slack = slack_pre / factor;

    let dual_out = DualSolution {
        q,
        hk_value: info.value,
        threshold_t: info.threshold_t,
        alpha: info.alpha,
        k,
        iterations_used: dual.iterations_used,
        fw_gap: dual.fw_gap,
        history: dual.history.clone(),
    };

    Ok(CovarianceDesign {
        sigma,
        k,
        kyfan_value,
        feasibility_slack,
        rescale_factor: slack_pre,
        eig: final_eig,
        dual: dual_out,
    })
}

/// Relative duality gap `(‖Σ‖_(k) − h_k²) / h_k²`; nonnegative up to
/// roundoff by weak duality.
pub fn duality_gap(design: &CovarianceDesign) -> f64 {
    let h_sq = design.dual.hk_value * design.dual.hk_value;
    (design.kyfan_value - h_sq) / h_sq
}

/// Full covariance optimization for a workload and database size bound:
/// `k = ⌊εn⌋`, dual ascent, then primal reconstruction.
///
/// Workloads whose rows are linearly dependent are first reduced to an
/// orthonormal basis of their row space, solved there, and reconstructed
/// against the original workload; `k` is clamped to the row rank.
pub fn optimize_covariance(
    a: &QueryMatrix,
    n: u64,
    epsilon: f64,
    opts: &SolverOptions,
) -> Result<CovarianceDesign> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let k_raw = (epsilon * n as f64).floor();
    if k_raw < 1.0 {
        return Err(Error::InvalidInput(format!(
            "k must be ≥ 1: ⌊εn⌋ = ⌊{}⌋ < 1",
            epsilon * n as f64
        )));
    }
    let m = a.num_queries();

    if a.is_full_row_rank()? {
        let k = (k_raw as usize).min(m);
        let dual = dual_ascent(a, k, opts)?;
        return primal_from_dual(a, &dual);
    }

    // Row-space reduction: eigenvectors of AAᵀ above the rank threshold form
    // an orthonormal basis W; Ā = Wᵀ A has full row rank and the same
    // weighted-gram spectra as A up to zero padding.
    let gram = a.mat().gram_rows();
    let eig = spectral::sym_eig(&gram)?;
    let lam_max = eig.eigenvalues[0].max(f64::MIN_POSITIVE);
    let rank = eig
        .eigenvalues
        .iter()
        .filter(|&&l| l > RANK_TOL * lam_max)
        .count();
    if rank == 0 {
        return Err(Error::InvalidInput(
            "workload is identically zero".to_string(),
        ));
    }
    let mut basis = Mat::zeros(m, rank);
    for j in 0..rank {
        for i in 0..m {
            basis.set(i, j, eig.eigenvectors.get(i, j));
        }
    }
    let reduced = QueryMatrix::new(basis.transpose().matmul(a.mat()))?;
    let k = (k_raw as usize).min(rank);
    let dual = dual_ascent(&reduced, k, opts)?;
    primal_from_dual(a, &dual)
}

/// Serialized form of a design:
/// `{k, kyfan_value, hk_value, gap, rescale_factor, q, sigma}` with the
/// covariance stored row-major.
#[derive(Serialize, Deserialize)]
pub struct DesignJson {
    pub k: usize,
    pub kyfan_value: f64,
    pub hk_value: f64,
    pub gap: f64,
    pub rescale_factor: f64,
    pub q: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl CovarianceDesign {
    pub fn to_json(&self) -> DesignJson {
        DesignJson {
            k: self.k,
            kyfan_value: self.kyfan_value,
            hk_value: self.dual.hk_value,
            gap: duality_gap(self),
            rescale_factor: self.rescale_factor,
            q: self.dual.q.clone(),
            sigma: self.sigma.data().to_vec(),
        }
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut body = serde_json::to_string_pretty(&self.to_json())?;
        body.push('\n');
        std::fs::write(path, body)?;
        Ok(())
    }

    /// Rebuilds a design from its serialized form against the workload it
    /// was optimized for. Ascent metadata (iteration count, gap history) is
    /// not stored and comes back empty.
    pub fn load(path: impl AsRef<std::path::Path>, a: &QueryMatrix) -> Result<Self> {
        let parsed: DesignJson = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let m = a.num_queries();
        let sigma = Mat::from_vec(m, m, parsed.sigma)
            .map_err(|e| Error::Load(format!("design does not match workload: {e}")))?;
        let eig = spectral::sym_eig(&sigma)?;
        let b = eig.eigenvectors.transpose().matmul(a.mat());
        let mut slack = 0.0f64;
        for e in 0..a.universe_size() {
            let mut s = 0.0;
            for i in 0..m {
                let be = b.get(i, e);
                s += be * be / eig.eigenvalues[i].max(f64::MIN_POSITIVE);
            }
            slack = slack.max(s);
        }
        let info = {
            let e = weighted_gram_eig(a, &parsed.q)?;
            h_k_from_spectrum(&e.eigenvalues, parsed.k)?
        };
        Ok(CovarianceDesign {
            sigma,
            k: parsed.k,
            kyfan_value: parsed.kyfan_value,
            feasibility_slack: slack,
            rescale_factor: parsed.rescale_factor,
            eig,
            dual: DualSolution {
                q: parsed.q,
                hk_value: parsed.hk_value,
                threshold_t: info.threshold_t,
                alpha: info.alpha,
                k: parsed.k,
                iterations_used: 0,
                fw_gap: f64::NAN,
                history: Vec::new(),
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use crate::workload::gen_random_counting;

    fn identity_workload(n: usize) -> QueryMatrix {
        QueryMatrix::new(Mat::identity(n)).unwrap()
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(find_threshold_t(&[1.0, 1.0, 1.0, 1.0], 2).unwrap(), 0);
        assert_eq!(find_threshold_t(&[4.0, 1.0, 1.0], 2).unwrap(), 1);
        assert_eq!(find_threshold_t(&[5.0, 0.0, 0.0], 2).unwrap(), 1);
        assert!(find_threshold_t(&[1.0, 2.0], 1).is_err());
        assert!(find_threshold_t(&[1.0], 2).is_err());
    }

    #[test]
    fn threshold_is_unique_on_random_spectra() {
        let mut rng = SeededRng::new(23);
        for trial in 0..1000 {
            let len = 2 + (rng.next_u64() % 9) as usize;
            let mut spec: Vec<f64> = (0..len).map(|_| rng.unit_open() * 10.0).collect();
            // sprinkle zeros and ties
            if trial % 3 == 0 && len > 2 {
                spec[len - 1] = 0.0;
            }
            if trial % 5 == 0 {
                spec[0] = spec[len / 2];
            }
            spec.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let k = 1 + (rng.next_u64() as usize % len);
            let mut valid = Vec::new();
            for t in 0..k {
                let tail: f64 = spec[t..].iter().sum();
                let avg = tail / (k - t) as f64;
                let head_ok = t == 0 || spec[t - 1] > avg;
                if head_ok && avg >= spec[t] {
                    valid.push(t);
                }
            }
            assert_eq!(valid.len(), 1, "spectrum {spec:?} k={k} valid={valid:?}");
            assert_eq!(valid[0], find_threshold_t(&spec, k).unwrap());
        }
    }

    #[test]
    fn h_k_unit_values() {
        let info = h_k(&Mat::from_diag(&[4.0, 1.0, 1.0]), 2).unwrap();
        assert!((info.value - (2.0 + 2.0f64.sqrt())).abs() < 1e-10);
        assert_eq!(info.threshold_t, 1);
        assert!((info.alpha - 2.0).abs() < 1e-12);

        for m in 1..=10usize {
            for k in 1..=m {
                let info = h_k(&Mat::identity(m), k).unwrap();
                assert!(
                    (info.value - ((k * m) as f64).sqrt()).abs() < 1e-10,
                    "m={m} k={k}"
                );
                assert_eq!(info.threshold_t, 0);
            }
        }
    }

    #[test]
    fn h_k_homogeneity() {
        let mut rng = SeededRng::new(31);
        for _ in 0..100 {
            let dim = 2 + (rng.next_u64() % 5) as usize;
            let raw = crate::spectral::tests_support::random_psd(dim, &mut rng);
            let k = 1 + (rng.next_u64() as usize % dim);
            let lam = 0.01 + rng.unit_open() * 9.99;
            let base = h_k(&raw, k).unwrap().value;
            let scaled = h_k(&raw.scaled(lam), k).unwrap().value;
            let rel = (scaled - lam.sqrt() * base).abs() / scaled.max(f64::MIN_POSITIVE);
            assert!(rel < 1e-9, "rel {rel}");
        }
        // h_k(4S) = 2 h_k(S)
        let mut rng = SeededRng::new(5);
        let s = crate::spectral::tests_support::random_psd(4, &mut rng);
        let a = h_k(&s, 2).unwrap().value;
        let b = h_k(&s.scaled(4.0), 2).unwrap().value;
        assert!((b - 2.0 * a).abs() < 1e-9 * b);
    }

    #[test]
    fn supergradient_symmetry_and_scalar_case() {
        // identity workload, uniform weights: all coordinates equal
        let a = identity_workload(4);
        let q = vec![0.25; 4];
        let g = hk_supergradient(&a, &q, 2).unwrap();
        for w in g.per_element.windows(2) {
            assert!((w[0] - w[1]).abs() < 1e-12);
        }

        // single query row, k = 1: g_e = a_e² / (2 √(Σ q_f a_f²))
        let row = QueryMatrix::new(Mat::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap()).unwrap();
        let q = vec![0.2, 0.3, 0.5];
        let g = hk_supergradient(&row, &q, 1).unwrap();
        let s: f64 = q
            .iter()
            .zip([1.0f64, 4.0, 9.0])
            .map(|(qe, ae2)| qe * ae2)
            .sum();
        for (e, ae2) in [1.0f64, 4.0, 9.0].into_iter().enumerate() {
            let expect = ae2 / (2.0 * s.sqrt());
            assert!((g.per_element[e] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn supergradient_flags_boundary_ties() {
        // spectrum (2, 2−1e-10, 5e-11): the k=2 threshold lands between the
        // two near-equal values, so the tied block's coefficients average
        let raw = [2.0, 2.0 - 1e-10, 5e-11];
        let total: f64 = raw.iter().sum();
        let q: Vec<f64> = raw.iter().map(|x| x / total).collect();
        let a = identity_workload(3);
        let g = hk_supergradient(&a, &q, 2).unwrap();
        assert!(g.boundary_tie);
        assert!(
            (g.per_element[0] - g.per_element[1]).abs() <= 1e-9 * g.per_element[0],
            "tied block coefficients differ: {:?}",
            g.per_element
        );

        // well-separated spectrum: no tie
        let clean = hk_supergradient(&a, &[0.7, 0.2, 0.1], 2).unwrap();
        assert!(!clean.boundary_tie);
    }

    #[test]
    fn supergradient_matches_central_differences() {
        let mut rng = SeededRng::new(77);
        let mut checked = 0;
        while checked < 25 {
            let m = 2 + (rng.next_u64() % 4) as usize;
            let u = m + (rng.next_u64() % 4) as usize;
            let a = {
                let mut mat = Mat::zeros(m, u);
                for i in 0..m {
                    for j in 0..u {
                        mat.set(i, j, 2.0 * rng.unit_open() - 1.0);
                    }
                }
                QueryMatrix::new(mat).unwrap()
            };
            let mut q: Vec<f64> = (0..u).map(|_| 0.1 + rng.unit_open()).collect();
            let total: f64 = q.iter().sum();
            for x in q.iter_mut() {
                *x /= total;
            }
            let k = 1 + (rng.next_u64() as usize % m);

            // skip spectra that are nearly tied at the threshold boundary
            let eig = weighted_gram_eig(&a, &q).unwrap();
            let info = match h_k_from_spectrum(&eig.eigenvalues, k) {
                Ok(i) => i,
                Err(_) => continue,
            };
            let t = info.threshold_t;
            let scale = eig.eigenvalues[0];
            if t > 0 && (eig.eigenvalues[t - 1] - info.alpha) < 1e-3 * scale {
                continue;
            }
            if (info.alpha - eig.eigenvalues[t]) < 1e-3 * scale && info.alpha > eig.eigenvalues[t]
            {
                continue;
            }

            let g = hk_supergradient(&a, &q, k).unwrap();
            let delta = 1e-6;
            for e in 0..u {
                let mut plus = q.clone();
                plus[e] += delta;
                let mut minus = q.clone();
                minus[e] -= delta;
                let hp = {
                    let eig = weighted_gram_eig(&a, &plus).unwrap();
                    h_k_from_spectrum(&eig.eigenvalues, k).unwrap().value
                };
                let hm = {
                    let eig = weighted_gram_eig(&a, &minus).unwrap();
                    h_k_from_spectrum(&eig.eigenvalues, k).unwrap().value
                };
                let fd = (hp - hm) / (2.0 * delta);
                let rel = (fd - g.per_element[e]).abs() / g.per_element[e].abs().max(1e-12);
                assert!(rel < 1e-4, "rel error {rel} at element {e}");
            }
            checked += 1;
        }
    }

    #[test]
    fn dual_ascent_identity_reaches_sqrt_k() {
        let a = identity_workload(6);
        for k in [1usize, 3, 6] {
            let sol = dual_ascent(&a, k, &SolverOptions::default()).unwrap();
            let expect = (k as f64).sqrt();
            assert!(
                (sol.hk_value - expect).abs() <= 0.01 * expect,
                "k={k}: got {}",
                sol.hk_value
            );
        }
    }

    #[test]
    fn dual_ascent_single_row_prefers_heavy_column() {
        let a = QueryMatrix::new(Mat::from_rows(&[vec![1.0, 2.0]]).unwrap()).unwrap();
        let sol = dual_ascent(&a, 1, &SolverOptions::default()).unwrap();
        assert!((sol.hk_value - 2.0).abs() < 0.02, "got {}", sol.hk_value);
        assert!(sol.q[1] > 0.99);
    }

    #[test]
    fn dual_ascent_duplicate_column_invariance() {
        // identity block keeps the rows independent; two extra mixed columns
        let mut rows = Vec::new();
        for i in 0..4 {
            let mut row = vec![0.0; 6];
            row[i] = 1.0;
            row[4] = if i % 2 == 0 { 1.0 } else { 0.0 };
            row[5] = if i < 2 { 1.0 } else { 0.0 };
            rows.push(row);
        }
        let base = QueryMatrix::new(Mat::from_rows(&rows).unwrap()).unwrap();
        assert!(base.is_full_row_rank().unwrap());
        // duplicate column 0
        let mut dup_rows = Vec::new();
        for i in 0..4 {
            let mut row = base.mat().row(i).to_vec();
            row.push(base.mat().get(i, 0));
            dup_rows.push(row);
        }
        let dup = QueryMatrix::new(Mat::from_rows(&dup_rows).unwrap()).unwrap();
        let opts = SolverOptions {
            max_iters: 2000,
            tol: 1e-9,
        };
        let v1 = dual_ascent(&base, 2, &opts).unwrap().hk_value;
        let v2 = dual_ascent(&dup, 2, &opts).unwrap().hk_value;
        assert!((v1 - v2).abs() <= 0.01 * v1.max(v2), "{v1} vs {v2}");
    }

    #[test]
    fn dual_ascent_rejects_rank_deficient() {
        let a =
            QueryMatrix::new(Mat::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap()).unwrap();
        assert!(dual_ascent(&a, 1, &SolverOptions::default()).is_err());
    }

    #[test]
    fn dual_solution_lies_on_the_simplex() {
        let a = gen_random_counting(5, 9, 0.5, 3).unwrap();
        let sol = dual_ascent(&a, 3, &SolverOptions::default()).unwrap();
        assert!(sol.q.iter().all(|&x| x >= 0.0));
        let total: f64 = sol.q.iter().sum();
        assert!((total - 1.0).abs() <= 1e-12);
        // the stored threshold satisfies its double inequality on the
        // weighted gram spectrum
        let eig = weighted_gram_eig(&a, &sol.q).unwrap();
        assert_eq!(
            find_threshold_t(&eig.eigenvalues, 3).unwrap(),
            sol.threshold_t
        );
        assert!(sol.hk_value >= 0.0);
    }

    #[test]
    fn ascent_history_is_monotone() {
        let a = gen_random_counting(5, 9, 0.5, 3).unwrap();
        let sol = dual_ascent(
            &a,
            2,
            &SolverOptions {
                max_iters: 300,
                tol: 0.0,
            },
        )
        .unwrap();
        for w in sol.history.windows(2) {
            assert!(w[1] >= w[0] - 1e-12);
        }
    }

    #[test]
    fn primal_identity_design() {
        let a = identity_workload(6);
        for k in [1usize, 2, 4] {
            let dual = dual_ascent(&a, k, &SolverOptions::default()).unwrap();
            let design = primal_from_dual(&a, &dual).unwrap();
            assert!(
                (design.kyfan_value - k as f64).abs() < 0.03 * k as f64,
                "k={k}: kyfan {}",
                design.kyfan_value
            );
            assert!((design.rescale_factor - 1.0).abs() < 1e-6);
            assert!(design.sigma.sub(&Mat::identity(6)).max_abs() < 0.05);
        }
    }

    #[test]
    fn primal_scalar_reconstruction() {
        // one query over two elements, all dual mass on the heavier column
        let a = QueryMatrix::new(Mat::from_rows(&[vec![1.0, 2.0]]).unwrap()).unwrap();
        let dual = DualSolution {
            q: vec![0.0, 1.0],
            hk_value: 2.0,
            threshold_t: 0,
            alpha: 4.0,
            k: 1,
            iterations_used: 0,
            fw_gap: 0.0,
            history: Vec::new(),
        };
        let design = primal_from_dual(&a, &dual).unwrap();
        assert!((design.sigma.get(0, 0) - 4.0).abs() < 1e-6);
        assert!((design.feasibility_slack - 1.0).abs() < 1e-9);
        assert!((design.kyfan_value - 4.0).abs() < 1e-6);
    }

    #[test]
    fn weak_duality_for_feasible_points() {
        // every feasible X and simplex q satisfy ‖X⁻¹‖_(k) ≥ h_k(AQAᵀ)²
        let mut rng = SeededRng::new(41);
        for _ in 0..20 {
            let m = 2 + (rng.next_u64() % 3) as usize;
            let u = m + (rng.next_u64() % 3) as usize;
            let a = gen_random_counting(m, u, 0.7, rng.next_u64()).unwrap();
            if !a.is_full_row_rank().unwrap() {
                continue;
            }
            let k = 1 + (rng.next_u64() as usize % m);

            // random feasible X: scale a random PD matrix until the
            // constraints hold with max form = 1
            let x_raw = crate::spectral::tests_support::random_pd(m, &mut rng);
            let mut worst = 0.0f64;
            for e in 0..u {
                let col = a.column(e);
                let xc = x_raw.matvec(&col);
                worst = worst.max(mat::dot(&col, &xc));
            }
            if worst <= 0.0 {
                continue;
            }
            let x = x_raw.scaled(1.0 / worst);
            let x_inv = spectral::psd_power(&x, spectral::MatrixPower::Inverse).unwrap();
            let kyfan = spectral::ky_fan_norm(&x_inv, k).unwrap();

            let mut q: Vec<f64> = (0..u).map(|_| rng.unit_open()).collect();
            let total: f64 = q.iter().sum();
            for v in q.iter_mut() {
                *v /= total;
            }
            let h = {
                let eig = weighted_gram_eig(&a, &q).unwrap();
                h_k_from_spectrum(&eig.eigenvalues, k).unwrap().value
            };
            assert!(
                kyfan >= h * h - 1e-9,
                "weak duality violated: {kyfan} < {}",
                h * h
            );
        }
    }

    #[test]
    fn concavity_on_the_simplex() {
        let mut rng = SeededRng::new(53);
        let a = gen_random_counting(4, 7, 0.5, 99).unwrap();
        for _ in 0..50 {
            let k = 1 + (rng.next_u64() as usize % 4);
            let draw = |rng: &mut SeededRng| {
                let mut q: Vec<f64> = (0..7).map(|_| rng.unit_open()).collect();
                let t: f64 = q.iter().sum();
                q.iter_mut().for_each(|x| *x /= t);
                q
            };
            let q1 = draw(&mut rng);
            let q2 = draw(&mut rng);
            let theta = rng.unit_open();
            let mix: Vec<f64> = q1
                .iter()
                .zip(q2.iter())
                .map(|(&x, &y)| theta * x + (1.0 - theta) * y)
                .collect();
            let h = |q: &[f64]| {
                let eig = weighted_gram_eig(&a, q).unwrap();
                h_k_from_spectrum(&eig.eigenvalues, k).unwrap().value
            };
            assert!(h(&mix) >= theta * h(&q1) + (1.0 - theta) * h(&q2) - 1e-9);
        }
    }

    #[test]
    fn feasibility_always_holds_after_repair() {
        let mut rng = SeededRng::new(61);
        for _ in 0..30 {
            let m = 2 + (rng.next_u64() % 4) as usize;
            let u = m + (rng.next_u64() % 5) as usize;
            let a = gen_random_counting(m, u, 0.6, rng.next_u64()).unwrap();
            if !a.is_full_row_rank().unwrap() {
                continue;
            }
            let k = 1 + (rng.next_u64() as usize % m);
            let opts = SolverOptions {
                max_iters: 40,
                tol: 1e-9,
            };
            let dual = dual_ascent(&a, k, &opts).unwrap();
            let design = primal_from_dual(&a, &dual).unwrap();
            assert!(design.feasibility_slack <= 1.0 + 1e-9);
            // recompute the slack from Σ directly
            let sigma_inv =
                spectral::psd_power(&design.sigma, spectral::MatrixPower::Inverse).unwrap();
            for e in 0..u {
                let col = a.column(e);
                let form = mat::dot(&col, &sigma_inv.matvec(&col));
                assert!(form <= 1.0 + 1e-7, "form {form}");
            }
        }
    }

    #[test]
    fn duality_gap_closes_on_random_workloads() {
        let mut rng = SeededRng::new(71);
        for trial in 0..4 {
            let a = gen_random_counting(6, 12, 0.5, 100 + trial).unwrap();
            if !a.is_full_row_rank().unwrap() {
                continue;
            }
            let k = 1 + (trial as usize % 3);
            let opts = SolverOptions {
                max_iters: 2000,
                tol: 1e-9,
            };
            let dual = dual_ascent(&a, k, &opts).unwrap();
            let design = primal_from_dual(&a, &dual).unwrap();
            let gap = duality_gap(&design);
            assert!(gap >= -1e-9);
            assert!(gap <= 1e-2, "gap {gap} on trial {trial}");
            let _ = rng.next_u64();
        }
    }

    #[test]
    fn optimize_covariance_identity_instance() {
        let a = identity_workload(8);
        let design = optimize_covariance(&a, 6, 0.5, &SolverOptions::default()).unwrap();
        assert_eq!(design.k, 3);
        assert!((design.kyfan_value - 3.0).abs() < 0.03);
    }

    #[test]
    fn optimize_covariance_rejects_small_epsilon_n() {
        let a = identity_workload(4);
        let err = optimize_covariance(&a, 1, 0.5, &SolverOptions::default()).unwrap_err();
        assert!(err.to_string().contains("k must be ≥ 1"), "{err}");
    }

    #[test]
    fn optimize_covariance_deterministic() {
        let a = gen_random_counting(5, 8, 0.5, 2).unwrap();
        let opts = SolverOptions {
            max_iters: 120,
            tol: 1e-9,
        };
        let d1 = optimize_covariance(&a, 4, 0.75, &opts).unwrap();
        let d2 = optimize_covariance(&a, 4, 0.75, &opts).unwrap();
        assert_eq!(d1.sigma.data(), d2.sigma.data());
        assert_eq!(d1.kyfan_value, d2.kyfan_value);
        assert_eq!(d1.dual.q, d2.dual.q);
    }

    #[test]
    fn optimize_covariance_handles_wide_rank_deficient_workloads() {
        // more queries than universe elements: rows cannot be independent
        let a = gen_random_counting(12, 5, 0.5, 8).unwrap();
        assert!(!a.is_full_row_rank().unwrap());
        let design = optimize_covariance(&a, 4, 0.75, &SolverOptions::default()).unwrap();
        assert_eq!(design.k, 3);
        assert!(design.feasibility_slack <= 1.0 + 1e-9);
        assert!(duality_gap(&design) >= -1e-9);
        // the covariance must still be positive definite
        let eig = spectral::sym_eig(&design.sigma).unwrap();
        assert!(*eig.eigenvalues.last().unwrap() > 0.0);
    }

    #[test]
    fn design_json_round_trip() {
        let dir = std::env::temp_dir().join(format!("dpwo-design-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let a = identity_workload(4);
        let design = optimize_covariance(&a, 4, 0.6, &SolverOptions::default()).unwrap();
        let path = dir.join("design.json");
        design.save(&path).unwrap();
        let loaded = CovarianceDesign::load(&path, &a).unwrap();
        assert_eq!(loaded.k, design.k);
        assert!((loaded.kyfan_value - design.kyfan_value).abs() < 1e-12);
        assert!(loaded.sigma.sub(&design.sigma).max_abs() < 1e-12);
        assert!(loaded.feasibility_slack <= 1.0 + 1e-6);
    }
}
