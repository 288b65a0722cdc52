//! Task-adaptive clustering: soft labels in the projection space, centroid
//! refinement, distractor handling and the iterative projection rebuild.

use log::debug;
use serde::{Deserialize, Serialize};

use crate::embedder::Embedder;
use crate::episodes::{Episode, UnlabeledTag};
use crate::error::{dim_err, Result, TacError};
use crate::linalg::Matrix;
use crate::projection::{
    build_projection, classify_queries, softmax_neg, Centroids, Distance, ProjectionSpace, ReferenceSet,
};

/// Mass below which the distractor centroid is left where it was.
pub const MIN_DISTRACTOR_MASS: f64 = 1e-12;

/// Probabilities are clamped to this before taking logs in cross-entropies.
pub const MIN_PROB: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Supervised projection only; unlabeled samples are ignored.
    TapnetBaseline,
    /// Trained like the baseline, evaluated with clustering.
    SemiSupInference,
    Tac,
    /// TAC with an extra reference/centroid pair absorbing distractors.
    Tacdap,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::TapnetBaseline, Variant::SemiSupInference, Variant::Tac, Variant::Tacdap];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::TapnetBaseline => "tapnet_baseline",
            Variant::SemiSupInference => "semi_sup_inference",
            Variant::Tac => "tac",
            Variant::Tacdap => "tacdap",
        }
    }

    pub fn uses_distractor_reference(self) -> bool {
        self == Variant::Tacdap
    }

    /// Whether meta-training episodes carry unlabeled samples.
    pub fn trains_with_unlabeled(self) -> bool {
        matches!(self, Variant::Tac | Variant::Tacdap)
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Variant {
    type Err = TacError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| TacError::InvalidConfig(format!("unknown variant '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TacConfig {
    pub variant: Variant,
    pub train_iterations: usize,
    pub eval_iterations: usize,
    pub distance: Distance,
    /// Compute soft labels on raw embeddings instead of in the projection.
    pub cluster_in_embedding_space: bool,
}

impl Default for TacConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Tac,
            train_iterations: 1,
            eval_iterations: 4,
            distance: Distance::SquaredEuclidean,
            cluster_in_embedding_space: false,
        }
    }
}

impl TacConfig {
    pub fn with_variant(variant: Variant) -> Self {
        Self { variant, ..Self::default() }
    }
}

/// Row-stochastic `U×C` matrix of class probabilities for unlabeled samples.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftLabels {
    probs: Matrix,
}

impl SoftLabels {
    pub fn probs(&self) -> &Matrix {
        &self.probs
    }

    pub fn columns(&self) -> usize {
        self.probs.cols()
    }

    /// Column sums `Σ_j p_{j,n}`.
    pub fn mass(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.probs.cols()];
        for r in self.probs.row_iter() {
            for (a, p) in m.iter_mut().zip(r) {
                *a += p;
            }
        }
        m
    }
}

/// Embedded views of an episode's support and unlabeled sets.
#[derive(Clone, Debug)]
pub struct EmbeddedEpisode {
    pub support: Matrix,
    pub support_labels: Vec<usize>,
    pub unlabeled: Matrix,
    pub way: usize,
}

impl EmbeddedEpisode {
    pub fn embed(embedder: &Embedder, episode: &Episode) -> Result<Self> {
        let unlabeled = if episode.unlabeled().rows() == 0 {
            Matrix::zeros(0, embedder.output_dim())
        } else {
            embedder.embed(episode.unlabeled())?
        };
        Ok(Self {
            support: embedder.embed(episode.support())?,
            support_labels: episode.support_labels().to_vec(),
            unlabeled,
            way: episode.way_count(),
        })
    }
}

#[derive(Clone, Debug)]
pub struct TacState {
    pub centroids: Centroids,
    /// Projection used to classify queries.
    pub projection: ProjectionSpace,
    pub soft_labels: Option<SoftLabels>,
    pub iteration: usize,
    /// Clustering projections: the initial one, then one per iteration.
    pub clustering_projections: Vec<ProjectionSpace>,
    /// Soft labels computed at each iteration.
    pub soft_label_trace: Vec<SoftLabels>,
    /// Iterations where the distractor centroid had no mass and was kept.
    pub distractor_retained: usize,
}

/// Support means per class, plus the mean of every unlabeled sample for `Tacdap`.
pub fn initial_centroids(
    embedded_support: &Matrix,
    support_labels: &[usize],
    class_count: usize,
    embedded_unlabeled: &Matrix,
    variant: Variant,
) -> Result<Centroids> {
    if support_labels.len() != embedded_support.rows() {
        return Err(dim_err!("{} labels for {} support rows", support_labels.len(), embedded_support.rows()));
    }
    let d = embedded_support.cols();
    let with_distractor = variant.uses_distractor_reference();
    let mut means = Matrix::zeros(class_count + usize::from(with_distractor), d);
    let mut counts = vec![0usize; class_count];
    for (row, &l) in embedded_support.row_iter().zip(support_labels) {
        if l >= class_count {
            return Err(TacError::InvalidEpisode(format!("support label {l} >= {class_count}")));
        }
        counts[l] += 1;
        for (m, v) in means.row_mut(l).iter_mut().zip(row) {
            *m += v;
        }
    }
    for (n, &k) in counts.iter().enumerate() {
        if k == 0 {
            return Err(TacError::InvalidEpisode(format!("class {n} has no support samples")));
        }
        means.row_mut(n).iter_mut().for_each(|m| *m /= k as f64);
    }
    if with_distractor {
        if embedded_unlabeled.rows() == 0 {
            return Err(TacError::InvalidEpisode("distractor centroid needs unlabeled samples".into()));
        }
        if embedded_unlabeled.cols() != d {
            return Err(dim_err!("unlabeled dim {} vs support dim {d}", embedded_unlabeled.cols()));
        }
        let u = embedded_unlabeled.rows() as f64;
        let row = means.row_mut(class_count);
        for r in embedded_unlabeled.row_iter() {
            for (m, v) in row.iter_mut().zip(r) {
                *m += v / u;
            }
        }
    }
    Centroids::new(means, counts)
}

fn soft_label_points(points: &Matrix, centers: &Matrix, distance: Distance) -> SoftLabels {
    let mut probs = Matrix::zeros(points.rows(), centers.rows());
    for j in 0..points.rows() {
        let d: Vec<f64> = centers.row_iter().map(|c| distance.between(points.row(j), c)).collect();
        probs.row_mut(j).copy_from_slice(&softmax_neg(&d));
    }
    SoftLabels { probs }
}

fn clustering_rows(centroids: &Centroids, include_distractor: bool) -> Result<Matrix> {
    if include_distractor && !centroids.has_distractor() {
        return Err(TacError::InvalidState("distractor column requested without a distractor centroid".into()));
    }
    Ok(centroids.means().top_rows(centroids.way_count() + usize::from(include_distractor)))
}

/// Softmax over negative distances between projected unlabeled samples and
/// projected centroids.
pub fn soft_label(
    p: &ProjectionSpace,
    centroids: &Centroids,
    embedded_unlabeled: &Matrix,
    include_distractor: bool,
    distance: Distance,
) -> Result<SoftLabels> {
    let centers = clustering_rows(centroids, include_distractor)?;
    let pu = p.project(embedded_unlabeled)?;
    let pc = p.project(&centers)?;
    Ok(soft_label_points(&pu, &pc, distance))
}

/// Soft labels from distances in the embedding space itself.
pub fn soft_label_in_embedding(
    centroids: &Centroids,
    embedded_unlabeled: &Matrix,
    include_distractor: bool,
    distance: Distance,
) -> Result<SoftLabels> {
    let centers = clustering_rows(centroids, include_distractor)?;
    if embedded_unlabeled.cols() != centers.cols() {
        return Err(dim_err!("unlabeled dim {} vs centroid dim {}", embedded_unlabeled.cols(), centers.cols()));
    }
    Ok(soft_label_points(embedded_unlabeled, &centers, distance))
}

#[derive(Clone, Debug)]
pub struct Refinement {
    pub centroids: Centroids,
    /// True when the distractor centroid had no soft-label mass and was kept.
    pub distractor_retained: bool,
}

/// Class centroids become `(K·c_n + Σ_j p_{j,n}·x_j) / (K + Σ_j p_{j,n})`;
/// the distractor centroid becomes the `p_{j,N+1}`-weighted mean of the
/// unlabeled embeddings.
pub fn refine_centroids(
    centroids: &Centroids,
    soft_labels: &SoftLabels,
    embedded_unlabeled: &Matrix,
) -> Result<Refinement> {
    let n = centroids.way_count();
    let cols = soft_labels.columns();
    if soft_labels.probs.rows() != embedded_unlabeled.rows() {
        return Err(dim_err!(
            "{} soft-label rows for {} unlabeled samples",
            soft_labels.probs.rows(),
            embedded_unlabeled.rows()
        ));
    }
    if embedded_unlabeled.rows() == 0 {
        return Ok(Refinement { centroids: centroids.clone(), distractor_retained: false });
    }
    if cols != n && !(cols == n + 1 && centroids.has_distractor()) {
        return Err(dim_err!("{cols} soft-label columns for {n} classes"));
    }
    if embedded_unlabeled.cols() != centroids.dim() {
        return Err(dim_err!("unlabeled dim {} vs centroid dim {}", embedded_unlabeled.cols(), centroids.dim()));
    }
    let d = centroids.dim();
    let mass = soft_labels.mass();
    let mut weighted = Matrix::zeros(cols, d);
    for (p, x) in soft_labels.probs.row_iter().zip(embedded_unlabeled.row_iter()) {
        for (c, &pc) in p.iter().enumerate() {
            for (w, v) in weighted.row_mut(c).iter_mut().zip(x) {
                *w += pc * v;
            }
        }
    }
    let mut means = centroids.means().clone();
    for c in 0..n {
        let k = centroids.shot_counts()[c] as f64;
        let denom = k + mass[c];
        let w = weighted.row(c).to_vec();
        for (m, wv) in means.row_mut(c).iter_mut().zip(w) {
            *m = (k * *m + wv) / denom;
        }
    }
    let mut retained = false;
    if cols == n + 1 {
        if mass[n] < MIN_DISTRACTOR_MASS {
            retained = true;
            debug!("distractor soft-label mass {:e} too small, keeping previous centroid", mass[n]);
        } else {
            let w = weighted.row(n).to_vec();
            for (m, wv) in means.row_mut(n).iter_mut().zip(w) {
                *m = wv / mass[n];
            }
        }
    }
    Ok(Refinement {
        centroids: Centroids::new(means, centroids.shot_counts().to_vec())?,
        distractor_retained: retained,
    })
}

/// Runs the clustering loop on already-embedded data.
pub fn run_tac_embedded(
    refs: &ReferenceSet,
    episode: &EmbeddedEpisode,
    cfg: &TacConfig,
    iterations: usize,
) -> Result<TacState> {
    let n = episode.way;
    let baseline = cfg.variant == Variant::TapnetBaseline;
    let has_unlabeled = episode.unlabeled.rows() > 0 && !baseline;
    // With nothing to absorb, TACdap reduces to TAC.
    let distractor = cfg.variant.uses_distractor_reference() && has_unlabeled;
    if distractor && !refs.includes_distractor() {
        return Err(TacError::InvalidState("variant tacdap needs a distractor reference".into()));
    }
    let iterations = if baseline { 0 } else { iterations };

    let init_variant = if distractor { Variant::Tacdap } else { Variant::Tac };
    let mut centroids =
        initial_centroids(&episode.support, &episode.support_labels, n, &episode.unlabeled, init_variant)?;
    let mut projection = build_projection(refs, &centroids, distractor)?;
    let mut history = vec![projection.clone()];
    let mut trace = Vec::new();
    let mut retained = 0;

    if has_unlabeled {
        for _ in 0..iterations {
            let soft = if cfg.cluster_in_embedding_space {
                soft_label_in_embedding(&centroids, &episode.unlabeled, distractor, cfg.distance)?
            } else {
                soft_label(&projection, &centroids, &episode.unlabeled, distractor, cfg.distance)?
            };
            let refined = refine_centroids(&centroids, &soft, &episode.unlabeled)?;
            retained += usize::from(refined.distractor_retained);
            centroids = refined.centroids;
            projection = build_projection(refs, &centroids, distractor)?;
            history.push(projection.clone());
            trace.push(soft);
        }
    }

    let classification = if distractor {
        build_projection(refs, &centroids.without_distractor(), false)?
    } else {
        projection
    };
    Ok(TacState {
        centroids,
        projection: classification,
        soft_labels: trace.last().cloned(),
        iteration: iterations,
        clustering_projections: history,
        soft_label_trace: trace,
        distractor_retained: retained,
    })
}

/// Embeds the episode and runs the clustering loop.
pub fn run_tac(
    embedder: &Embedder,
    refs: &ReferenceSet,
    episode: &Episode,
    cfg: &TacConfig,
    iterations: usize,
) -> Result<TacState> {
    let embedded = EmbeddedEpisode::embed(embedder, episode)?;
    run_tac_embedded(refs, &embedded, cfg, iterations)
}

impl TacState {
    /// Class probabilities for embedded queries in the final projection.
    pub fn classify(
        &self,
        refs: &ReferenceSet,
        embedded_queries: &Matrix,
        distance: Distance,
    ) -> Result<(Matrix, Vec<usize>)> {
        classify_queries(&self.projection, refs, embedded_queries, self.centroids.way_count(), distance)
    }
}

/// Mean `-ln p_{j, true class}`; distractors count against the distractor
/// column when there is one and are skipped otherwise.
pub fn unlabeled_cross_entropy(soft: &SoftLabels, truth: &[UnlabeledTag], way: usize) -> f64 {
    let (sum, count) = cross_entropy_terms(soft, truth, way);
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Sum and count of `-ln p_{j, true}` over the samples that have a column.
pub(crate) fn cross_entropy_terms(soft: &SoftLabels, truth: &[UnlabeledTag], way: usize) -> (f64, usize) {
    let has_distractor = soft.columns() == way + 1;
    let mut sum = 0.0;
    let mut count = 0;
    for (row, tag) in soft.probs.row_iter().zip(truth) {
        let col = match *tag {
            UnlabeledTag::Candidate(n) => n,
            UnlabeledTag::Distractor(_) if has_distractor => way,
            UnlabeledTag::Distractor(_) => continue,
        };
        sum -= row[col].max(MIN_PROB).ln();
        count += 1;
    }
    (sum, count)
}
