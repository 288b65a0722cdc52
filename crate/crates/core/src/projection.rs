//! Task-adaptive projection: modified references, error vectors, null-space
//! projection and distance-softmax classification of queries.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Result, TacError};
use crate::linalg::{self, l2_normalize, norm, squared_distance, Matrix, NORM_EPS};

/// Distance used inside every softmax over projected points.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distance {
    #[default]
    SquaredEuclidean,
    Euclidean,
}

impl Distance {
    #[inline]
    pub fn between(self, a: &[f64], b: &[f64]) -> f64 {
        let sq = squared_distance(a, b);
        match self {
            Distance::SquaredEuclidean => sq,
            Distance::Euclidean => sq.sqrt(),
        }
    }
}

impl std::str::FromStr for Distance {
    type Err = TacError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squared_euclidean" => Ok(Distance::SquaredEuclidean),
            "euclidean" => Ok(Distance::Euclidean),
            other => Err(TacError::InvalidConfig(format!("unknown distance '{other}'"))),
        }
    }
}

/// Per-class reference vectors, optionally followed by a distractor reference.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceSet {
    refs: Matrix,
    includes_distractor: bool,
}

impl ReferenceSet {
    pub fn new(refs: Matrix, includes_distractor: bool) -> Result<Self> {
        let min_rows = if includes_distractor { 3 } else { 2 };
        if refs.rows() < min_rows {
            return Err(dim_err!("reference set needs at least {min_rows} rows, got {}", refs.rows()));
        }
        refs.ensure_finite("references")?;
        for (i, r) in refs.row_iter().enumerate() {
            if norm(r) <= NORM_EPS {
                return Err(TacError::DegenerateVector(format!("reference {i} has zero norm")));
            }
        }
        Ok(Self { refs, includes_distractor })
    }

    /// Gaussian initialization with per-entry variance `1/dim`.
    pub fn random(way: usize, dim: usize, with_distractor: bool, rng: &mut impl Rng) -> Result<Self> {
        let rows = way + usize::from(with_distractor);
        let scale = 1.0 / (dim as f64).sqrt();
        let data = (0..rows * dim).map(|_| rng.sample::<f64, _>(StandardNormal) * scale).collect();
        Self::new(Matrix::from_raw(rows, dim, data), with_distractor)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.refs
    }

    pub(crate) fn matrix_mut(&mut self) -> &mut Matrix {
        &mut self.refs
    }

    pub fn includes_distractor(&self) -> bool {
        self.includes_distractor
    }

    /// Number of class references (excluding the distractor).
    pub fn way_count(&self) -> usize {
        self.refs.rows() - usize::from(self.includes_distractor)
    }

    pub fn dim(&self) -> usize {
        self.refs.cols()
    }

    pub fn class_rows(&self, n: usize) -> Matrix {
        self.refs.top_rows(n)
    }

    pub fn distractor(&self) -> Option<&[f64]> {
        self.includes_distractor.then(|| self.refs.row(self.refs.rows() - 1))
    }
}

/// Class centroids in the embedding space; an optional trailing row holds the
/// distractor centroid.
#[derive(Clone, Debug, PartialEq)]
pub struct Centroids {
    means: Matrix,
    shot_counts: Vec<usize>,
}

impl Centroids {
    pub fn new(means: Matrix, shot_counts: Vec<usize>) -> Result<Self> {
        let n = shot_counts.len();
        if means.rows() != n && means.rows() != n + 1 {
            return Err(dim_err!("{} centroid rows for {n} classes", means.rows()));
        }
        Ok(Self { means, shot_counts })
    }

    pub fn means(&self) -> &Matrix {
        &self.means
    }

    pub fn shot_counts(&self) -> &[usize] {
        &self.shot_counts
    }

    pub fn way_count(&self) -> usize {
        self.shot_counts.len()
    }

    pub fn has_distractor(&self) -> bool {
        self.means.rows() == self.shot_counts.len() + 1
    }

    pub fn dim(&self) -> usize {
        self.means.cols()
    }

    /// Same class centroids with the distractor row removed.
    pub fn without_distractor(&self) -> Centroids {
        Centroids { means: self.means.top_rows(self.way_count()), shot_counts: self.shot_counts.clone() }
    }
}

/// Orthonormal basis (columns) of the task-adaptive subspace.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionSpace {
    basis: Matrix,
    built_from_rows: usize,
}

impl ProjectionSpace {
    /// Null space of the stacked error vectors.
    pub fn from_error_vectors(errors: &Matrix) -> Result<Self> {
        let basis = linalg::null_space(errors, linalg::DEFAULT_RANK_TOL)?;
        Ok(Self { basis, built_from_rows: errors.rows() })
    }

    pub fn basis(&self) -> &Matrix {
        &self.basis
    }

    pub fn built_from_rows(&self) -> usize {
        self.built_from_rows
    }

    pub fn dim(&self) -> usize {
        self.basis.rows()
    }

    pub fn projected_dim(&self) -> usize {
        self.basis.cols()
    }

    /// `x · M` for a `batch×D` input.
    pub fn project(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.basis.rows() {
            return Err(dim_err!("projection expects {} columns, got {}", self.basis.rows(), x.cols()));
        }
        x.matmul(&self.basis)
    }

    fn lift(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.basis.rows()];
        for (o, r) in out.iter_mut().zip(self.basis.row_iter()) {
            *o = linalg::dot(r, v);
        }
        out
    }
}

/// Reference minus the mean of the other class references.
///
/// Rows `0..class_count` use the other class references only. When the set
/// carries a distractor reference, a final row holds the distractor reference
/// minus the mean of all class references.
pub fn modified_references(refs: &ReferenceSet, class_count: usize) -> Result<Matrix> {
    if class_count < 2 {
        return Err(TacError::InvalidEpisode(format!("need at least 2 classes, got {class_count}")));
    }
    if class_count > refs.way_count() {
        return Err(dim_err!("{class_count} classes but only {} references", refs.way_count()));
    }
    let d = refs.dim();
    let m = refs.matrix();
    let mut total = vec![0.0; d];
    for r in 0..class_count {
        for (t, v) in total.iter_mut().zip(m.row(r)) {
            *t += v;
        }
    }
    let rows = class_count + usize::from(refs.includes_distractor());
    let mut out = Matrix::zeros(rows, d);
    let others = (class_count - 1) as f64;
    for n in 0..class_count {
        let phi = m.row(n);
        for (k, o) in out.row_mut(n).iter_mut().enumerate() {
            *o = phi[k] - (total[k] - phi[k]) / others;
        }
    }
    if let Some(phi) = refs.distractor() {
        for (k, o) in out.row_mut(class_count).iter_mut().enumerate() {
            *o = phi[k] - total[k] / class_count as f64;
        }
    }
    Ok(out)
}

/// Differences between unit-normalized modified references and centroids.
pub fn error_vectors(mod_refs: &Matrix, centroids: &Matrix) -> Result<Matrix> {
    if mod_refs.shape() != centroids.shape() {
        return Err(dim_err!(
            "modified references {:?} and centroids {:?} differ in shape",
            mod_refs.shape(),
            centroids.shape()
        ));
    }
    let mut out = Matrix::zeros(mod_refs.rows(), mod_refs.cols());
    for n in 0..mod_refs.rows() {
        let phi = l2_normalize(mod_refs.row(n)).map_err(|e| match e {
            TacError::DegenerateVector(_) => TacError::DegenerateVector(format!("modified reference {n} has zero norm")),
            other => other,
        })?;
        let c = l2_normalize(centroids.row(n)).map_err(|e| match e {
            TacError::DegenerateVector(_) => TacError::DegenerateVector(format!("centroid {n} has zero norm")),
            other => other,
        })?;
        for (o, (a, b)) in out.row_mut(n).iter_mut().zip(phi.iter().zip(&c)) {
            *o = a - b;
        }
    }
    Ok(out)
}

/// Builds `M` from the class pairs, plus the distractor pair when requested.
pub fn build_projection(
    refs: &ReferenceSet,
    centroids: &Centroids,
    include_distractor_row: bool,
) -> Result<ProjectionSpace> {
    let n = centroids.way_count();
    if include_distractor_row && !(refs.includes_distractor() && centroids.has_distractor()) {
        return Err(TacError::InvalidState(
            "distractor row requested without a distractor reference and centroid".into(),
        ));
    }
    let rows = n + usize::from(include_distractor_row);
    if refs.dim() != centroids.dim() {
        return Err(dim_err!("references have dim {}, centroids {}", refs.dim(), centroids.dim()));
    }
    if refs.dim() <= rows {
        return Err(dim_err!("dimension {} must exceed the {rows} participating rows", refs.dim()));
    }
    let mut mod_refs = modified_references(refs, n)?;
    if !include_distractor_row && mod_refs.rows() > n {
        mod_refs = mod_refs.top_rows(n);
    }
    let errors = error_vectors(&mod_refs, &centroids.means().top_rows(rows))?;
    ProjectionSpace::from_error_vectors(&errors)
}

pub fn project(p: &ProjectionSpace, x: &Matrix) -> Result<Matrix> {
    p.project(x)
}

/// `exp(-d_n) / Σ_l exp(-d_l)`, evaluated stably.
pub(crate) fn softmax_neg(dists: &[f64]) -> Vec<f64> {
    let min = dists.iter().copied().fold(f64::INFINITY, f64::min);
    let mut out: Vec<f64> = dists.iter().map(|d| (min - d).exp()).collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= z);
    out
}

/// Lowest index among the maxima.
pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Softmax over negative projected distances to the first `class_count`
/// references; returns `batch×N` probabilities and argmax predictions.
pub fn classify_queries(
    p: &ProjectionSpace,
    refs: &ReferenceSet,
    queries: &Matrix,
    class_count: usize,
    distance: Distance,
) -> Result<(Matrix, Vec<usize>)> {
    if class_count > refs.way_count() {
        return Err(dim_err!("{class_count} classes but only {} references", refs.way_count()));
    }
    let pq = p.project(queries)?;
    let pr = p.project(&refs.class_rows(class_count))?;
    let mut probs = Matrix::zeros(pq.rows(), class_count);
    let mut labels = Vec::with_capacity(pq.rows());
    for i in 0..pq.rows() {
        let d: Vec<f64> = pr.row_iter().map(|r| distance.between(pq.row(i), r)).collect();
        let row = softmax_neg(&d);
        labels.push(argmax(&row));
        probs.row_mut(i).copy_from_slice(&row);
    }
    Ok((probs, labels))
}

/// Query cross-entropy under a fixed projection, with its gradient.
#[derive(Clone, Debug)]
pub struct QueryLoss {
    pub loss: f64,
    pub probs: Matrix,
    pub predictions: Vec<usize>,
    /// `∂loss/∂query_embedding`, `batch×D`.
    pub grad_queries: Matrix,
    /// `∂loss/∂φ_n` for the first `class_count` references, `N×D`.
    pub grad_refs: Matrix,
}

impl QueryLoss {
    pub fn accuracy(&self, labels: &[usize]) -> f64 {
        if labels.is_empty() {
            return 0.0;
        }
        let hits = self.predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
        hits as f64 / labels.len() as f64
    }
}

/// Mean query cross-entropy of the distance softmax. The basis is treated as
/// a constant.
pub fn query_loss(
    p: &ProjectionSpace,
    refs: &ReferenceSet,
    queries: &Matrix,
    labels: &[usize],
    class_count: usize,
    distance: Distance,
) -> Result<QueryLoss> {
    if labels.len() != queries.rows() {
        return Err(dim_err!("{} labels for {} queries", labels.len(), queries.rows()));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= class_count) {
        return Err(TacError::InvalidEpisode(format!("query label {bad} out of range")));
    }
    let (probs, predictions) = classify_queries(p, refs, queries, class_count, distance)?;
    let pq = p.project(queries)?;
    let pr = p.project(&refs.class_rows(class_count))?;
    let m = pq.cols();
    let batch = pq.rows() as f64;

    let mut loss = 0.0;
    let mut gq_proj = Matrix::zeros(pq.rows(), m);
    let mut gr_proj = Matrix::zeros(class_count, m);
    for i in 0..pq.rows() {
        loss -= probs.get(i, labels[i]).max(1e-300).ln();
        for n in 0..class_count {
            let y = if labels[i] == n { 1.0 } else { 0.0 };
            // ∂loss/∂logit with logit = -d.
            let g_logit = (probs.get(i, n) - y) / batch;
            if g_logit == 0.0 {
                continue;
            }
            let diff: Vec<f64> = pq.row(i).iter().zip(pr.row(n)).map(|(a, b)| a - b).collect();
            // ∂d/∂(projected query) = factor · diff
            let factor = match distance {
                Distance::SquaredEuclidean => 2.0,
                Distance::Euclidean => {
                    let len = norm(&diff);
                    if len > 0.0 {
                        1.0 / len
                    } else {
                        0.0
                    }
                }
            };
            let scale = -g_logit * factor;
            for k in 0..m {
                let g = scale * diff[k];
                gq_proj.as_mut_slice()[i * m + k] += g;
                gr_proj.as_mut_slice()[n * m + k] -= g;
            }
        }
    }
    loss /= batch;

    let mut grad_queries = Matrix::zeros(pq.rows(), p.dim());
    for i in 0..pq.rows() {
        grad_queries.row_mut(i).copy_from_slice(&p.lift(gq_proj.row(i)));
    }
    let mut grad_refs = Matrix::zeros(class_count, p.dim());
    for n in 0..class_count {
        grad_refs.row_mut(n).copy_from_slice(&p.lift(gr_proj.row(n)));
    }
    Ok(QueryLoss { loss, probs, predictions, grad_queries, grad_refs })
}
