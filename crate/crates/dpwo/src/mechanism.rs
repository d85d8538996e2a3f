//! The generalized Gaussian mechanism and the projection mechanism.
//!
//! A run adds correlated Gaussian noise `w ~ N(0, c²Σ)` to the exact
//! answers, splits the noisy vector along the top-k eigenspace of `Σ`, and
//! regresses the complement onto the scaled projected sensitivity polytope
//! by Frank-Wolfe. The released vector is the projected noisy part plus the
//! regression output.

use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceDesign;
use crate::error::{Error, Result};
use crate::mat::{self, Mat};
use crate::rng::GaussianSource;
use crate::spectral::{self, EigenDecomposition};
use crate::workload::{Histogram, QueryMatrix};

/// Privacy parameters together with the Gaussian noise multiplier they
/// induce.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PrivacyParams {
    pub epsilon: f64,
    pub delta: f64,
    /// `(0.5 √ε + √(2 ln(1/δ))) / ε`.
    pub c: f64,
}

impl PrivacyParams {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        Ok(PrivacyParams {
            epsilon,
            delta,
            c: noise_multiplier(epsilon, delta)?,
        })
    }
}

/// The Gaussian mechanism multiplier `c_{ε,δ} = (0.5 √ε + √(2 ln(1/δ))) / ε`.
pub fn noise_multiplier(epsilon: f64, delta: f64) -> Result<f64> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    if delta.is_nan() || delta <= 0.0 || delta >= 1.0 {
        return Err(Error::InvalidInput(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    Ok((0.5 * epsilon.sqrt() + (2.0 * (1.0 / delta).ln()).sqrt()) / epsilon)
}

/// Draws `w = scale_c · V diag(√λ) z` with `z` i.i.d. standard normal from
/// the seeded source, so `w ~ N(0, scale_c² Σ)`.
pub fn sample_gaussian(sigma: &Mat, scale_c: f64, seed: u64) -> Result<Vec<f64>> {
    let mut eig = spectral::sym_eig(sigma)?;
    spectral::clamp_psd_spectrum(&mut eig.eigenvalues)?;
    Ok(sample_gaussian_from_eig(&eig, scale_c, seed))
}

pub(crate) fn sample_gaussian_from_eig(
    eig: &EigenDecomposition,
    scale_c: f64,
    seed: u64,
) -> Vec<f64> {
    let m = eig.source_dim;
    let mut z = vec![0.0; m];
    GaussianSource::new(seed).fill(&mut z);
    let mut w = vec![0.0; m];
    if scale_c == 0.0 {
        return w;
    }
    for l in 0..m {
        let amp = scale_c * eig.eigenvalues[l].max(0.0).sqrt() * z[l];
        if amp == 0.0 {
            continue;
        }
        for i in 0..m {
            w[i] += eig.eigenvectors.get(i, l) * amp;
        }
    }
    w
}

pub(crate) fn projector_from_eig(eig: &EigenDecomposition, k: usize) -> Mat {
    let m = eig.source_dim;
    let mut pi = Mat::zeros(m, m);
    for l in 0..k {
        for i in 0..m {
            let vil = eig.eigenvectors.get(i, l);
            if vil == 0.0 {
                continue;
            }
            for j in 0..m {
                let v = pi.get(i, j) + vil * eig.eigenvectors.get(j, l);
                pi.set(i, j, v);
            }
        }
    }
    pi
}

/// Orthogonal projector onto the span of the eigenvectors of `Σ` with the
/// `k` largest eigenvalues. `k = 0` gives the zero matrix.
pub fn top_k_projector(design: &CovarianceDesign, k: usize) -> Result<Mat> {
    if k > design.eig.source_dim {
        return Err(Error::InvalidInput(format!(
            "projector rank {} exceeds dimension {}",
            k, design.eig.source_dim
        )));
    }
    Ok(projector_from_eig(&design.eig, k))
}

/// One vertex of the scaled projected sensitivity polytope, as returned by
/// the linear maximization oracle.
#[derive(Clone, Debug)]
pub struct LmoVertex {
    pub vertex: Vec<f64>,
    /// The attained maximum of the linear functional.
    pub value: f64,
    /// Universe element index of the chosen column.
    pub column: usize,
    /// `+1.0` or `-1.0`.
    pub sign: f64,
}

/// The projected polytope `(I−Π) K_A` with its columns precomputed; all the
/// mechanism's inner-loop work goes through this.
pub struct ProjectedPolytope {
    /// `(I−Π) A`, one projected answer column per universe element.
    projected_cols: Mat,
}

impl ProjectedPolytope {
    pub fn new(a: &QueryMatrix, proj_complement: &Mat) -> Self {
        ProjectedPolytope {
            projected_cols: proj_complement.matmul(a.mat()),
        }
    }

    /// Identity complement: the polytope is `K_A` itself.
    pub fn unprojected(a: &QueryMatrix) -> Self {
        ProjectedPolytope {
            projected_cols: a.mat().clone(),
        }
    }

    pub fn num_elements(&self) -> usize {
        self.projected_cols.cols()
    }

    pub fn max_column_sq_norm(&self) -> f64 {
        (0..self.num_elements())
            .map(|e| self.projected_cols.column_sq_norm(e))
            .fold(0.0, f64::max)
    }

    pub fn column_sq_norm(&self, e: usize) -> f64 {
        self.projected_cols.column_sq_norm(e)
    }

    /// Maximizes `⟨direction, v⟩` over the vertices `± n (I−Π) a_e`. Ties
    /// break toward the positive sign and the smallest column index; the
    /// zero direction returns `+` column 0.
    pub fn lmo(&self, direction: &[f64], n: f64) -> LmoVertex {
        let u = self.num_elements();
        let mut best_inner = f64::NEG_INFINITY;
        let mut best_column = 0usize;
        let mut best_sign = 1.0f64;
        for e in 0..u {
            let inner = self.projected_cols.column_dot(e, direction);
            if inner > best_inner {
                best_inner = inner;
                best_column = e;
                best_sign = 1.0;
            }
            if -inner > best_inner {
                best_inner = -inner;
                best_column = e;
                best_sign = -1.0;
            }
        }
        let mut vertex = self.projected_cols.column(best_column);
        for v in vertex.iter_mut() {
            *v *= best_sign * n;
        }
        LmoVertex {
            vertex,
            value: n * best_inner,
            column: best_column,
            sign: best_sign,
        }
    }

    /// Support function of the projected polytope at `w`:
    /// `max_e |⟨w, (I−Π) a_e⟩|`.
    pub fn support(&self, w: &[f64]) -> f64 {
        (0..self.num_elements())
            .map(|e| self.projected_cols.column_dot(e, w).abs())
            .fold(0.0, f64::max)
    }
}

/// Linear maximization oracle over the vertices `± n (I−Π) a_e` of the
/// scaled projected sensitivity polytope.
pub fn lmo_polytope(
    a: &QueryMatrix,
    proj_complement: &Mat,
    direction: &[f64],
    n: u64,
) -> LmoVertex {
    ProjectedPolytope::new(a, proj_complement).lmo(direction, n as f64)
}

/// `max_e |⟨(I−Π) w, a_e⟩|`, the polar-norm residual of the noise against
/// the projected polytope.
pub fn support_function_residual(w: &[f64], a: &QueryMatrix, proj_complement: &Mat) -> f64 {
    let pw = proj_complement.matvec(w);
    ProjectedPolytope::new(a, proj_complement).support(&pw)
}

/// Result of the Frank-Wolfe regression onto `n (I−Π) K_A`.
#[derive(Clone, Debug)]
pub struct FwProjection {
    pub ybar: Vec<f64>,
    /// Certified suboptimality: `‖ybar − z*‖² ≤ residual_gap`.
    pub residual_gap: f64,
    pub iterations: usize,
    /// Convex-combination weights over signed vertices; entry
    /// `(±(e+1), weight)` refers to `±n (I−Π) a_e`. Nonnegative, summing
    /// to one.
    pub weights: Vec<(i64, f64)>,
}

pub(crate) fn frank_wolfe_project_prepared(
    target: &[f64],
    poly: &ProjectedPolytope,
    n: f64,
    max_iters: usize,
    tol: f64,
) -> FwProjection {
    if n == 0.0 {
        // the polytope degenerates to the origin
        return FwProjection {
            ybar: vec![0.0; target.len()],
            residual_gap: 0.0,
            iterations: 0,
            weights: Vec::new(),
        };
    }

    let signed_id = |column: usize, sign: f64| -> i64 {
        let id = (column + 1) as i64;
        if sign < 0.0 {
            -id
        } else {
            id
        }
    };
    let mut weights: Vec<(i64, f64)> = Vec::new();
    let bump = |weights: &mut Vec<(i64, f64)>, id: i64, w: f64| {
        if let Some(entry) = weights.iter_mut().find(|(i, _)| *i == id) {
            entry.1 += w;
        } else {
            weights.push((id, w));
        }
    };

    // start from the vertex best aligned with the target
    let start = poly.lmo(target, n);
    let mut z = start.vertex.clone();
    bump(&mut weights, signed_id(start.column, start.sign), 1.0);

    let mut iterations = 0;
    let mut gap;
    loop {
        let residual = mat::sub_vec(target, &z);
        let v = poly.lmo(&residual, n);
        let direction = mat::sub_vec(&v.vertex, &z);
        gap = 2.0 * mat::dot(&residual, &direction);
        if gap <= tol || iterations >= max_iters {
            break;
        }
        // exact line search for the quadratic objective
        let denom = mat::norm_sq(&direction);
        if denom == 0.0 {
            break;
        }
        let step = (mat::dot(&residual, &direction) / denom).clamp(0.0, 1.0);
        if step == 0.0 {
            break;
        }
        for (zi, di) in z.iter_mut().zip(direction.iter()) {
            *zi += step * di;
        }
        for (_, w) in weights.iter_mut() {
            *w *= 1.0 - step;
        }
        bump(&mut weights, signed_id(v.column, v.sign), step);
        let total: f64 = weights.iter().map(|(_, w)| w).sum();
        for (_, w) in weights.iter_mut() {
            *w /= total;
        }
        iterations += 1;
    }

    FwProjection {
        ybar: z,
        residual_gap: gap.max(0.0),
        iterations,
        weights,
    }
}

/// Least-squares regression of `target` onto `n (I−Π) K_A` by Frank-Wolfe
/// with exact line search and duality-gap stopping. The returned gap
/// certifies the squared-distance suboptimality of the output.
pub fn frank_wolfe_project(
    target: &[f64],
    a: &QueryMatrix,
    proj_complement: &Mat,
    n: u64,
    max_iters: usize,
    tol: f64,
) -> FwProjection {
    let poly = ProjectedPolytope::new(a, proj_complement);
    frank_wolfe_project_prepared(target, &poly, n as f64, max_iters, tol)
}

/// Per-run output of a mechanism: the released answers plus diagnostics.
#[derive(Clone, Debug)]
pub struct MechanismOutput {
    /// `ỹ = Ax + w`.
    pub noisy: Vec<f64>,
    /// Regression output `ȳ` over the projected complement.
    pub projected: Vec<f64>,
    /// Released vector `Π ỹ + ȳ`.
    pub final_answers: Vec<f64>,
    /// The sampled noise `w`.
    pub noise: Vec<f64>,
    pub projector_rank: usize,
    pub fw_residual: f64,
    pub seed: u64,
    /// `‖ỹ − Ax‖ / √m`.
    pub noisy_rmse: f64,
    /// `‖final − Ax‖ / √m`.
    pub final_rmse: f64,
}

impl MechanismOutput {
    /// Serialization per the report schema; intermediates (`noise`, the
    /// regression output) are included only on request.
    pub fn to_json(&self, emit_intermediates: bool) -> serde_json::Value {
        let mut obj = serde_json::json!({
            "final": self.final_answers,
            "noisy_rmse": self.noisy_rmse,
            "projected_rmse": self.final_rmse,
            "projector_rank": self.projector_rank,
            "fw_residual": self.fw_residual,
            "seed": self.seed,
        });
        if emit_intermediates {
            obj["noise"] = serde_json::json!(self.noise);
            obj["projected"] = serde_json::json!(self.projected);
        }
        obj
    }
}

/// Tuning knobs for a mechanism run.
#[derive(Clone, Copy, Debug)]
pub struct MechanismOptions {
    pub max_iters: usize,
    /// Absolute Frank-Wolfe gap tolerance; default is
    /// `1e-6 · n² · max_e ‖a_e‖²`.
    pub tol: Option<f64>,
    /// Overrides the noise multiplier; a zero value runs the mechanism
    /// noise-free. Diagnostics builds only — never a private release path.
    #[cfg(feature = "diagnostics")]
    pub scale_override: Option<f64>,
}

impl Default for MechanismOptions {
    fn default() -> Self {
        MechanismOptions {
            max_iters: 2000,
            tol: None,
            #[cfg(feature = "diagnostics")]
            scale_override: None,
        }
    }
}

impl MechanismOptions {
    fn effective_scale(&self, c: f64) -> f64 {
        #[cfg(feature = "diagnostics")]
        if let Some(s) = self.scale_override {
            return s;
        }
        c
    }

    fn effective_tol(&self, n: f64, max_col_sq: f64) -> f64 {
        self.tol.unwrap_or(1e-6 * n * n * max_col_sq)
    }
}

/// A projection mechanism with its projector and projected polytope built
/// once, for repeated runs against the same design.
pub struct PreparedProjection<'a> {
    a: &'a QueryMatrix,
    design: &'a CovarianceDesign,
    projector: Mat,
    poly: ProjectedPolytope,
    max_col_sq: f64,
}

impl<'a> PreparedProjection<'a> {
    pub fn new(a: &'a QueryMatrix, design: &'a CovarianceDesign) -> Result<Self> {
        let m = a.num_queries();
        if design.eig.source_dim != m {
            return Err(Error::InvalidInput(format!(
                "design dimension {} does not match workload with {} queries",
                design.eig.source_dim, m
            )));
        }
        if design.feasibility_slack > 1.0 + 1e-9 {
            return Err(Error::InvalidInput(format!(
                "design is infeasible: constraint maximum {}",
                design.feasibility_slack
            )));
        }
        let k = design.k.min(m);
        let projector = projector_from_eig(&design.eig, k);
        let complement = Mat::identity(m).sub(&projector);
        let poly = ProjectedPolytope::new(a, &complement);
        Ok(PreparedProjection {
            a,
            design,
            projector,
            poly,
            max_col_sq: a.max_column_sq_norm(),
        })
    }

    pub fn projector(&self) -> &Mat {
        &self.projector
    }

    pub fn polytope(&self) -> &ProjectedPolytope {
        &self.poly
    }

    pub fn run(
        &self,
        x: &Histogram,
        pp: &PrivacyParams,
        seed: u64,
        opts: &MechanismOptions,
    ) -> Result<MechanismOutput> {
        let m = self.a.num_queries();
        let y = self.a.answers(x)?;
        let n = x.size_bound() as f64;
        let scale = opts.effective_scale(pp.c);
        let noise = sample_gaussian_from_eig(&self.design.eig, scale, seed);
        let noisy = mat::add_vec(&y, &noise);

        let projected_noisy = self.projector.matvec(&noisy);
        let target = mat::sub_vec(&noisy, &projected_noisy);
        let fw = frank_wolfe_project_prepared(
            &target,
            &self.poly,
            n,
            opts.max_iters,
            opts.effective_tol(n, self.max_col_sq),
        );
        let final_answers = mat::add_vec(&projected_noisy, &fw.ybar);

        let noisy_rmse = (mat::norm_sq(&noise) / m as f64).sqrt();
        let final_rmse =
            (mat::norm_sq(&mat::sub_vec(&final_answers, &y)) / m as f64).sqrt();
        Ok(MechanismOutput {
            noisy,
            projected: fw.ybar,
            final_answers,
            noise,
            projector_rank: self.design.k.min(m),
            fw_residual: fw.residual_gap,
            seed,
            noisy_rmse,
            final_rmse,
        })
    }
}

/// One run of the projection mechanism.
pub fn run_projection_mechanism(
    a: &QueryMatrix,
    x: &Histogram,
    design: &CovarianceDesign,
    pp: &PrivacyParams,
    seed: u64,
    opts: &MechanismOptions,
) -> Result<MechanismOutput> {
    PreparedProjection::new(a, design)?.run(x, pp, seed, opts)
}

/// Baseline mechanism: isotropic Gaussian noise calibrated to the largest
/// column norm, `Σ = (max_e ‖a_e‖²) I`, released without post-processing.
pub fn run_plain_gaussian(
    a: &QueryMatrix,
    x: &Histogram,
    pp: &PrivacyParams,
    seed: u64,
    opts: &MechanismOptions,
) -> Result<MechanismOutput> {
    let m = a.num_queries();
    let y = a.answers(x)?;
    let scale = opts.effective_scale(pp.c);
    let std = a.max_column_sq_norm().sqrt() * scale;
    let mut noise = vec![0.0; m];
    GaussianSource::new(seed).fill(&mut noise);
    for v in noise.iter_mut() {
        *v *= std;
    }
    let noisy = mat::add_vec(&y, &noise);
    let noisy_rmse = (mat::norm_sq(&noise) / m as f64).sqrt();
    Ok(MechanismOutput {
        noisy: noisy.clone(),
        projected: vec![0.0; m],
        final_answers: noisy,
        noise,
        projector_rank: m,
        fw_residual: 0.0,
        seed,
        noisy_rmse,
        final_rmse: noisy_rmse,
    })
}
