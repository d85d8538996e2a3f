//! Spectral lower bounds and dual certificates.
//!
//! The spectral lower bound of a workload is the best value of
//! `√(k/m) σ_min(A_S)` over column submatrices with at most `k` columns; it
//! lower-bounds the optimal private error up to constants. Small universes
//! are searched exhaustively; larger ones fall back to greedy backward
//! elimination. The dual certificate turns an optimized design's Ky Fan
//! value into testable bound expressions through the split of its dual
//! spectrum.

use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceDesign;
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::parallel;
use crate::spectral;
use crate::workload::QueryMatrix;

/// Default cap on exhaustive subset search.
pub const DEFAULT_MAX_UNIVERSE: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubsetMethod {
    Bruteforce,
    Greedy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActiveCase {
    Case1,
    Case2,
}

/// Lower-bound evidence for one instance: the subset-search value and/or
/// the certificate bounds derived from the optimized design.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CertificateReport {
    /// `√(k/m) σ_min(A_S)` at the best subset found (0 when no search ran).
    #[serde(rename = "value")]
    pub spec_lb_value: f64,
    /// Column indices (0-based) of the best subset.
    pub subset: Vec<usize>,
    /// The same subset weighted by its own size: `√(|S|/m) σ_min(A_S)`.
    pub subset_weighted_value: f64,
    pub method: Option<SubsetMethod>,
    #[serde(rename = "case")]
    pub active_case: Option<ActiveCase>,
    /// `‖Σ‖_(k) / (2 ln(εn) √m)`, constant-free; 0 when `ln(εn)` vanishes.
    #[serde(rename = "case1_raw")]
    pub case1_bound_raw: f64,
    /// `‖Σ‖_(k) / (8 √m)`.
    #[serde(rename = "case2")]
    pub case2_bound: f64,
    pub k: usize,
}

impl CertificateReport {
    fn empty(k: usize) -> Self {
        CertificateReport {
            spec_lb_value: 0.0,
            subset: Vec::new(),
            subset_weighted_value: 0.0,
            method: None,
            active_case: None,
            case1_bound_raw: 0.0,
            case2_bound: 0.0,
            k,
        }
    }

    /// Combines a subset-search report with a dual-certificate report.
    pub fn merged(subset: CertificateReport, dual: CertificateReport) -> CertificateReport {
        CertificateReport {
            spec_lb_value: subset.spec_lb_value,
            subset: subset.subset,
            subset_weighted_value: subset.subset_weighted_value,
            method: subset.method,
            active_case: dual.active_case,
            case1_bound_raw: dual.case1_bound_raw,
            case2_bound: dual.case2_bound,
            k: dual.k.max(subset.k),
        }
    }
}

/// `σ_min(A_S)` for the columns listed in `subset`.
fn submatrix_sigma_min(a: &Mat, subset: &[usize]) -> Result<f64> {
    let s = subset.len();
    let mut gram = Mat::zeros(s, s);
    for r in 0..a.rows() {
        let row = a.row(r);
        for i in 0..s {
            let ri = row[subset[i]];
            if ri == 0.0 {
                continue;
            }
            for j in i..s {
                let v = gram.get(i, j) + ri * row[subset[j]];
                gram.set(i, j, v);
            }
        }
    }
    for i in 0..s {
        for j in 0..i {
            let v = gram.get(j, i);
            gram.set(i, j, v);
        }
    }
    let eig = spectral::sym_eig(&gram)?;
    Ok(eig.eigenvalues.last().copied().unwrap_or(0.0).max(0.0).sqrt())
}

fn mask_to_subset(mask: u32) -> Vec<usize> {
    (0..32).filter(|i| mask & (1 << i) != 0).collect()
}

/// Exhaustive spectral lower bound: maximizes `√(k/m) σ_min(A_S)` over all
/// nonempty subsets with at most `k` columns. Exponential in the universe
/// size, hence the cap.
pub fn spec_lb_bruteforce(
    a: &QueryMatrix,
    k: usize,
    max_universe: usize,
) -> Result<CertificateReport> {
    let u = a.universe_size();
    let m = a.num_queries();
    if k == 0 {
        return Err(Error::InvalidInput("k must be ≥ 1".to_string()));
    }
    if u > max_universe || u > 31 {
        return Err(Error::InvalidInput(format!(
            "universe too large for exhaustive search: {u} > {max_universe}"
        )));
    }
    let size_cap = k.min(u);
    let total_masks: u32 = 1u32 << u;

    // deterministic block-parallel max: each worker scans a contiguous mask
    // range and the block results merge by (value, smallest mask)
    let workers = parallel::thread_cap().clamp(1, 8);
    let block = (total_masks as usize).div_ceil(workers);
    let blocks = parallel::parallel_map(workers, |w| {
        let lo = (w * block) as u32;
        let hi = (((w + 1) * block) as u32).min(total_masks);
        let mut best: Option<(f64, u32)> = None;
        for mask in lo.max(1)..hi {
            if (mask.count_ones() as usize) > size_cap {
                continue;
            }
            let subset = mask_to_subset(mask);
            let smin = submatrix_sigma_min(a.mat(), &subset)?;
            let value = (k as f64 / m as f64).sqrt() * smin;
            let better = match best {
                None => true,
                Some((bv, bm)) => value > bv || (value == bv && mask < bm),
            };
            if better {
                best = Some((value, mask));
            }
        }
        Ok::<_, Error>(best)
    });
    let mut best: Option<(f64, u32)> = None;
    for b in blocks {
        if let Some((value, mask)) = b? {
            let better = match best {
                None => true,
                Some((bv, bm)) => value > bv || (value == bv && mask < bm),
            };
            if better {
                best = Some((value, mask));
            }
        }
    }
    let (value, mask) = best.expect("at least one nonempty subset");
    let subset = mask_to_subset(mask);
    let smin = submatrix_sigma_min(a.mat(), &subset)?;
    let weighted = (subset.len() as f64 / m as f64).sqrt() * smin;
    Ok(CertificateReport {
        spec_lb_value: value,
        subset,
        subset_weighted_value: weighted,
        method: Some(SubsetMethod::Bruteforce),
        active_case: None,
        case1_bound_raw: 0.0,
        case2_bound: 0.0,
        k,
    })
}

/// Greedy spectral lower bound: starting from all columns, repeatedly drops
/// the column whose removal maximizes `σ_min` of the remainder until `k`
/// columns are left, then evaluates `√(k/m) σ_min(A_S)` there.
pub fn spec_lb_greedy(a: &QueryMatrix, k: usize) -> Result<CertificateReport> {
    let u = a.universe_size();
    let m = a.num_queries();
    if k == 0 || k > u {
        return Err(Error::InvalidInput(format!(
            "k = {k} out of range for universe size {u}"
        )));
    }
    let mut subset: Vec<usize> = (0..u).collect();
    while subset.len() > k {
        let scores = parallel::parallel_map(subset.len(), |drop| {
            let remainder: Vec<usize> = subset
                .iter()
                .enumerate()
                .filter(|(pos, _)| *pos != drop)
                .map(|(_, &c)| c)
                .collect();
            submatrix_sigma_min(a.mat(), &remainder)
        });
        let mut best_pos = 0usize;
        let mut best_val = f64::NEG_INFINITY;
        for (pos, score) in scores.into_iter().enumerate() {
            let val = score?;
            if val > best_val {
                best_val = val;
                best_pos = pos;
            }
        }
        subset.remove(best_pos);
    }
    let smin = submatrix_sigma_min(a.mat(), &subset)?;
    let value = (k as f64 / m as f64).sqrt() * smin;
    Ok(CertificateReport {
        spec_lb_value: value,
        subset_weighted_value: value,
        subset,
        method: Some(SubsetMethod::Greedy),
        active_case: None,
        case1_bound_raw: 0.0,
        case2_bound: 0.0,
        k,
    })
}

/// Certificate bounds from an optimized design: the value `‖Σ‖_(k)` feeds
/// the two case bounds, and the active case is whichever `h_k` summand of
/// the dual spectrum carries at least half the dual value.
pub fn dual_certificate_bound(
    design: &CovarianceDesign,
    epsilon: f64,
    n: u64,
) -> CertificateReport {
    let m = design.eig.source_dim as f64;
    let kyfan = design.kyfan_value;
    let k = design.k;
    let case2 = kyfan / (8.0 * m.sqrt());
    let log_term = (epsilon * n as f64).ln();
    let case1 = if log_term > 1e-9 {
        kyfan / (2.0 * log_term * m.sqrt())
    } else {
        0.0
    };
    let hk = design.dual.hk_value;
    let t = design.dual.threshold_t;
    let tail_term = ((k - t) as f64) * design.dual.alpha.max(0.0).sqrt();
    let head = hk - tail_term;
    let active = if head >= 0.5 * hk {
        ActiveCase::Case1
    } else {
        ActiveCase::Case2
    };
    CertificateReport {
        active_case: Some(active),
        case1_bound_raw: case1,
        case2_bound: case2,
        ..CertificateReport::empty(k)
    }
}
