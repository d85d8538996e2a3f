//! Query workloads, histograms, and the sensitivity polytope.
//!
//! A workload of linear queries is a dense matrix with one row per query and
//! one column per universe element; a database is a histogram over the
//! universe. The sensitivity polytope is the symmetric convex hull of the
//! workload's columns, and its `n`-dilate is exactly the set of answer
//! vectors reachable by databases of size at most `n`.

use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::rng::SeededRng;
use crate::spectral;

/// Relative eigenvalue threshold for the full-row-rank check.
const RANK_TOL: f64 = 1e-10;

/// A workload of `m` linear queries over a universe of `u` elements.
/// Immutable after construction; entries are always finite.
#[derive(Clone, Debug)]
pub struct QueryMatrix {
    mat: Mat,
    row_labels: Option<Vec<String>>,
    col_labels: Option<Vec<String>>,
    rank_check: OnceLock<bool>,
}

impl PartialEq for QueryMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.mat == other.mat
            && self.row_labels == other.row_labels
            && self.col_labels == other.col_labels
    }
}

impl QueryMatrix {
    pub fn new(mat: Mat) -> Result<Self> {
        if mat.rows() == 0 || mat.cols() == 0 {
            return Err(Error::InvalidInput(
                "workload needs at least one query and one universe element".to_string(),
            ));
        }
        if !mat.is_finite() {
            return Err(Error::InvalidInput(
                "workload entries must be finite".to_string(),
            ));
        }
        Ok(QueryMatrix {
            mat,
            row_labels: None,
            col_labels: None,
            rank_check: OnceLock::new(),
        })
    }

    pub fn with_labels(
        mut self,
        row_labels: Option<Vec<String>>,
        col_labels: Option<Vec<String>>,
    ) -> Result<Self> {
        if let Some(r) = &row_labels {
            if r.len() != self.num_queries() {
                return Err(Error::InvalidInput("row label count mismatch".to_string()));
            }
        }
        if let Some(c) = &col_labels {
            if c.len() != self.universe_size() {
                return Err(Error::InvalidInput(
                    "column label count mismatch".to_string(),
                ));
            }
        }
        self.row_labels = row_labels;
        self.col_labels = col_labels;
        Ok(self)
    }

    pub fn mat(&self) -> &Mat {
        &self.mat
    }

    /// Number of queries `m`.
    pub fn num_queries(&self) -> usize {
        self.mat.rows()
    }

    /// Universe size `u`.
    pub fn universe_size(&self) -> usize {
        self.mat.cols()
    }

    pub fn row_labels(&self) -> Option<&[String]> {
        self.row_labels.as_deref()
    }

    pub fn col_labels(&self) -> Option<&[String]> {
        self.col_labels.as_deref()
    }

    /// The answer column for universe element `e`.
    pub fn column(&self, e: usize) -> Vec<f64> {
        self.mat.column(e)
    }

    /// `max_e ‖a_e‖₂²`.
    pub fn max_column_sq_norm(&self) -> f64 {
        (0..self.universe_size())
            .map(|e| self.mat.column_sq_norm(e))
            .fold(0.0, f64::max)
    }

    /// Whether the rows are linearly independent, decided by the spectrum of
    /// `AAᵀ`. The verdict is computed once and cached.
    pub fn is_full_row_rank(&self) -> Result<bool> {
        if let Some(v) = self.rank_check.get() {
            return Ok(*v);
        }
        let gram = self.mat.gram_rows();
        let eig = spectral::sym_eig(&gram)?;
        let lam_max = eig.eigenvalues.first().copied().unwrap_or(0.0);
        let lam_min = eig.eigenvalues.last().copied().unwrap_or(0.0);
        let verdict = lam_min > RANK_TOL * lam_max.max(f64::MIN_POSITIVE);
        let _ = self.rank_check.set(verdict);
        Ok(verdict)
    }

    /// Whether a rank check already ran and confirmed full row rank.
    pub fn rank_verified(&self) -> bool {
        self.rank_check.get().copied().unwrap_or(false)
    }

    /// Query answers `Ax` for a histogram.
    pub fn answers(&self, x: &Histogram) -> Result<Vec<f64>> {
        if x.len() != self.universe_size() {
            return Err(Error::InvalidInput(format!(
                "histogram length {} does not match universe size {}",
                x.len(),
                self.universe_size()
            )));
        }
        Ok(self.mat.matvec(&x.to_f64()))
    }
}

/// A database as a multiset over the universe: nonnegative counts with a
/// public size bound.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histogram {
    counts: Vec<u64>,
    size_bound: u64,
}

impl Histogram {
    pub fn new(counts: Vec<u64>, size_bound: u64) -> Result<Self> {
        let total: u64 = counts.iter().sum();
        if total > size_bound {
            return Err(Error::InvalidInput(format!(
                "histogram total {total} exceeds size bound {size_bound}"
            )));
        }
        Ok(Histogram { counts, size_bound })
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn size_bound(&self) -> u64 {
        self.size_bound
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }
}

/// View of the sensitivity polytope `K_A` (or its projected image): the
/// symmetric convex hull of the workload's columns. Vertices are indexed by
/// a universe element and a sign.
pub struct SensitivityPolytopeView<'a> {
    workload: &'a QueryMatrix,
    projector_complement: Option<&'a Mat>,
}

impl<'a> SensitivityPolytopeView<'a> {
    pub fn new(workload: &'a QueryMatrix) -> Self {
        SensitivityPolytopeView {
            workload,
            projector_complement: None,
        }
    }

    pub fn projected(workload: &'a QueryMatrix, complement: &'a Mat) -> Self {
        SensitivityPolytopeView {
            workload,
            projector_complement: Some(complement),
        }
    }

    pub fn workload(&self) -> &QueryMatrix {
        self.workload
    }

    /// Vertex `sign · (I−Π) a_e` (or `sign · a_e` without a projector).
    pub fn vertex(&self, e: usize, sign: f64) -> Vec<f64> {
        let col = self.workload.column(e);
        let v = match self.projector_complement {
            Some(c) => c.matvec(&col),
            None => col,
        };
        v.into_iter().map(|x| sign * x).collect()
    }

    pub fn num_elements(&self) -> usize {
        self.workload.universe_size()
    }
}

/// On-disk formats for dense matrices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MatrixFormat {
    Csv,
    Json,
}

#[derive(Serialize, Deserialize)]
struct MatrixJson {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize, Default)]
struct SidecarMeta {
    #[serde(skip_serializing_if = "Option::is_none")]
    row_labels: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    col_labels: Option<Vec<String>>,
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.as_os_str().to_os_string();
    name.push(".meta.json");
    std::path::PathBuf::from(name)
}

fn parse_csv_matrix(text: &str) -> Result<Mat> {
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    if lines.is_empty() {
        return Err(Error::Load("no rows".to_string()));
    }
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(lines.len());
    let width = lines[0].split(',').count();
    for (r, line) in lines.iter().enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != width {
            return Err(Error::Load(format!(
                "ragged row {}: expected {} fields, found {}",
                r + 1,
                width,
                fields.len()
            )));
        }
        let mut row = Vec::with_capacity(width);
        for (c, field) in fields.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::Load(format!("non-numeric at ({},{})", r + 1, c + 1))
            })?;
            if !v.is_finite() {
                return Err(Error::Load(format!(
                    "non-finite entry at ({},{})",
                    r + 1,
                    c + 1
                )));
            }
            row.push(v);
        }
        rows.push(row);
    }
    Mat::from_rows(&rows)
}

fn format_csv_matrix(mat: &Mat) -> String {
    let mut out = String::new();
    for i in 0..mat.rows() {
        let row = mat.row(i);
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            // shortest round-trip decimal form
            out.push_str(&format!("{v}"));
        }
        out.push('\n');
    }
    out
}

/// Loads a workload from a dense CSV or JSON file. A `<path>.meta.json`
/// sidecar with labels is read when present.
pub fn load_matrix(path: impl AsRef<Path>, format: MatrixFormat) -> Result<QueryMatrix> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let mat = match format {
        MatrixFormat::Csv => parse_csv_matrix(&text)?,
        MatrixFormat::Json => {
            let parsed: MatrixJson = serde_json::from_str(&text)?;
            if parsed.rows == 0 {
                return Err(Error::Load("no rows".to_string()));
            }
            if let Some(bad) = parsed.data.iter().position(|v| !v.is_finite()) {
                return Err(Error::Load(format!(
                    "non-finite entry at ({},{})",
                    bad / parsed.cols.max(1) + 1,
                    bad % parsed.cols.max(1) + 1
                )));
            }
            Mat::from_vec(parsed.rows, parsed.cols, parsed.data)
                .map_err(|e| Error::Load(e.to_string()))?
        }
    };
    let workload = QueryMatrix::new(mat)?;
    let sidecar = sidecar_path(path);
    if sidecar.exists() {
        let meta: SidecarMeta = serde_json::from_str(&std::fs::read_to_string(&sidecar)?)?;
        return workload.with_labels(meta.row_labels, meta.col_labels);
    }
    Ok(workload)
}

/// Saves a workload; the decimal formatting round-trips bit-exactly through
/// [`load_matrix`]. Labels, when present, go to a `<path>.meta.json` sidecar.
pub fn save_matrix(
    a: &QueryMatrix,
    path: impl AsRef<Path>,
    format: MatrixFormat,
) -> Result<()> {
    let path = path.as_ref();
    let body = match format {
        MatrixFormat::Csv => format_csv_matrix(a.mat()),
        MatrixFormat::Json => {
            let json = MatrixJson {
                rows: a.num_queries(),
                cols: a.universe_size(),
                data: a.mat().data().to_vec(),
            };
            let mut s = serde_json::to_string(&json)?;
            s.push('\n');
            s
        }
    };
    std::fs::write(path, body)?;
    if a.row_labels.is_some() || a.col_labels.is_some() {
        let meta = SidecarMeta {
            row_labels: a.row_labels.clone(),
            col_labels: a.col_labels.clone(),
        };
        std::fs::write(sidecar_path(path), serde_json::to_string(&meta)?)?;
    }
    Ok(())
}

/// Random counting workload: each entry is independently 1 with probability
/// `density`, deterministic in the seed.
pub fn gen_random_counting(
    m: usize,
    u: usize,
    density: f64,
    seed: u64,
) -> Result<QueryMatrix> {
    if m == 0 || u == 0 {
        return Err(Error::InvalidInput(
            "workload needs at least one query and one universe element".to_string(),
        ));
    }
    if density.is_nan() || density <= 0.0 || density > 1.0 {
        return Err(Error::InvalidInput(format!(
            "density must lie in (0, 1], got {density}"
        )));
    }
    let mut rng = SeededRng::new(seed);
    let mut mat = Mat::zeros(m, u);
    for i in 0..m {
        for j in 0..u {
            if rng.unit_open() <= density {
                mat.set(i, j, 1.0);
            }
        }
    }
    QueryMatrix::new(mat)
}

/// All interval counting queries over a line of `u` points: one row per pair
/// `1 ≤ i ≤ j ≤ u`, with ones on positions `i..=j`.
pub fn gen_interval_queries(u: usize) -> Result<QueryMatrix> {
    if u == 0 {
        return Err(Error::InvalidInput(
            "universe size must be at least 1".to_string(),
        ));
    }
    let m = u * (u + 1) / 2;
    let mut mat = Mat::zeros(m, u);
    let mut r = 0;
    for i in 0..u {
        for j in i..u {
            for c in i..=j {
                mat.set(r, c, 1.0);
            }
            r += 1;
        }
    }
    QueryMatrix::new(mat)
}

/// How [`gen_histogram`] distributes the database mass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HistogramMode {
    /// Each of the `n` elements picks a uniformly random universe element.
    UniformRandom,
    /// All `n` elements sit on one universe element (1-based index).
    PointMass { element: usize },
}

/// Generates a histogram with total mass exactly `n`.
pub fn gen_histogram(u: usize, n: u64, mode: HistogramMode, seed: u64) -> Result<Histogram> {
    if u == 0 {
        return Err(Error::InvalidInput(
            "universe size must be at least 1".to_string(),
        ));
    }
    let mut counts = vec![0u64; u];
    match mode {
        HistogramMode::PointMass { element } => {
            if element == 0 || element > u {
                return Err(Error::InvalidInput(format!(
                    "point mass element {element} out of range 1..={u}"
                )));
            }
            counts[element - 1] = n;
        }
        HistogramMode::UniformRandom => {
            let mut rng = SeededRng::new(seed);
            for _ in 0..n {
                counts[rng.below(u as u64) as usize] += 1;
            }
        }
    }
    Histogram::new(counts, n.max(1))
}

/// Loads a histogram CSV: a single line of `u` nonnegative integers.
/// Real-valued entries are rejected.
pub fn load_histogram(path: impl AsRef<Path>, size_bound: u64) -> Result<Histogram> {
    let text = std::fs::read_to_string(path)?;
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    if lines.is_empty() {
        return Err(Error::Load("no rows".to_string()));
    }
    if lines.len() > 1 {
        return Err(Error::Load(format!(
            "histogram file must have one line, found {}",
            lines.len()
        )));
    }
    let mut counts = Vec::new();
    for (c, field) in lines[0].split(',').enumerate() {
        let v: u64 = field.trim().parse().map_err(|_| {
            Error::Load(format!(
                "histogram entries must be nonnegative integers: bad entry at column {}",
                c + 1
            ))
        })?;
        counts.push(v);
    }
    Histogram::new(counts, size_bound)
}

/// Writes a histogram as one CSV line of integers.
pub fn save_histogram(h: &Histogram, path: impl AsRef<Path>) -> Result<()> {
    let line: Vec<String> = h.counts().iter().map(|c| c.to_string()).collect();
    std::fs::write(path, format!("{}\n", line.join(",")))?;
    Ok(())
}
