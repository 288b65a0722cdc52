//! Helpers shared by the integration and acceptance targets. Everything here
//! recomputes quantities from their definitions with plain loops, without
//! calling the library routine being checked.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use tac_core::embedder::{Activation, EmbedderConfig};
use tac_core::episodes::{Episode, UnlabeledTag};
use tac_core::harness::train::{episode_gradients, loss_with_projection};
use tac_core::harness::Model;
use tac_core::linalg::Matrix;
use tac_core::projection::Distance;
use tac_core::tac::{TacConfig, Variant};

pub type Rows = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

pub fn rows(m: &Matrix) -> Rows {
    m.row_iter().map(<[f64]>::to_vec).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn unit(a: &[f64]) -> Vec<f64> {
    let n = norm(a);
    a.iter().map(|x| x / n).collect()
}

/// `x · M` for a `D×m` basis given as rows.
pub fn project_vec(basis: &Rows, x: &[f64]) -> Vec<f64> {
    let m = basis.first().map_or(0, Vec::len);
    (0..m).map(|k| basis.iter().zip(x).map(|(r, xi)| r[k] * xi).sum()).collect()
}

pub fn dist(d: Distance, a: &[f64], b: &[f64]) -> f64 {
    let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    match d {
        Distance::SquaredEuclidean => sq,
        Distance::Euclidean => sq.sqrt(),
    }
}

/// `exp(-d_n) / Σ exp(-d_l)` computed with the log-sum-exp shift.
pub fn softmax_of_neg(d: &[f64]) -> Vec<f64> {
    let lo = d.iter().cloned().fold(f64::INFINITY, f64::min);
    let e: Vec<f64> = d.iter().map(|x| (-(x - lo)).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Modified references straight from the definition: class rows subtract the
/// mean of the other class rows, the distractor row subtracts the mean of all
/// class rows.
pub fn oracle_modified(refs: &Rows, n: usize, distractor: bool) -> Rows {
    let mut out = Vec::new();
    for i in 0..n {
        let mut r = refs[i].clone();
        for (l, other) in refs.iter().enumerate().take(n) {
            if l != i {
                for (a, b) in r.iter_mut().zip(other) {
                    *a -= b / (n - 1) as f64;
                }
            }
        }
        out.push(r);
    }
    if distractor {
        let mut r = refs[n].clone();
        for other in refs.iter().take(n) {
            for (a, b) in r.iter_mut().zip(other) {
                *a -= b / n as f64;
            }
        }
        out.push(r);
    }
    out
}

pub fn oracle_errors(modified: &Rows, centroids: &Rows) -> Rows {
    modified.iter().zip(centroids).map(|(p, c)| sub(&unit(p), &unit(c))).collect()
}

pub fn oracle_soft_labels(basis: &Rows, centroids: &Rows, unlabeled: &Rows, d: Distance) -> Rows {
    let pc: Rows = centroids.iter().map(|c| project_vec(basis, c)).collect();
    unlabeled
        .iter()
        .map(|x| {
            let px = project_vec(basis, x);
            softmax_of_neg(&pc.iter().map(|c| dist(d, &px, c)).collect::<Vec<_>>())
        })
        .collect()
}

/// Centroid refinement from its definition; the optional last soft-label
/// column drives the distractor centroid.
pub fn oracle_refine(centroids: &Rows, shots: &[usize], soft: &Rows, unlabeled: &Rows) -> Rows {
    let n = shots.len();
    let cols = soft.first().map_or(0, Vec::len);
    let dim = centroids[0].len();
    let mut out = centroids.clone();
    for c in 0..n {
        let k = shots[c] as f64;
        let mass: f64 = soft.iter().map(|p| p[c]).sum();
        for j in 0..dim {
            let s: f64 = soft.iter().zip(unlabeled).map(|(p, x)| p[c] * x[j]).sum();
            out[c][j] = (k * centroids[c][j] + s) / (k + mass);
        }
    }
    if cols == n + 1 {
        let mass: f64 = soft.iter().map(|p| p[n]).sum();
        if mass >= 1e-12 {
            for j in 0..dim {
                out[n][j] = soft.iter().zip(unlabeled).map(|(p, x)| p[n] * x[j]).sum::<f64>() / mass;
            }
        }
    }
    out
}

pub fn oracle_classify(basis: &Rows, refs: &Rows, queries: &Rows, n: usize, d: Distance) -> (Rows, Vec<usize>) {
    let pr: Rows = refs.iter().take(n).map(|r| project_vec(basis, r)).collect();
    let mut probs = Vec::new();
    let mut labels = Vec::new();
    for q in queries {
        let pq = project_vec(basis, q);
        let p = softmax_of_neg(&pr.iter().map(|r| dist(d, &pq, r)).collect::<Vec<_>>());
        let mut best = 0;
        for (i, v) in p.iter().enumerate() {
            if *v > p[best] {
                best = i;
            }
        }
        labels.push(best);
        probs.push(p);
    }
    (probs, labels)
}

/// Random episode with Gaussian features; distractors get global ids past `way`.
pub fn random_episode(rng: &mut impl Rng, way: usize, shots: usize, queries: usize, unlabeled: usize, distractors: usize, dim: usize) -> Episode {
    let support_labels: Vec<usize> = (0..way).flat_map(|c| std::iter::repeat_n(c, shots)).collect();
    let query_labels: Vec<usize> = (0..way).flat_map(|c| std::iter::repeat_n(c, queries)).collect();
    let mut tags: Vec<UnlabeledTag> = (0..unlabeled).map(|i| UnlabeledTag::Candidate(i % way)).collect();
    tags.extend((0..distractors).map(|i| UnlabeledTag::Distractor(way + i)));
    Episode::new(
        gaussian(rng, support_labels.len(), dim),
        support_labels,
        gaussian(rng, query_labels.len(), dim),
        query_labels,
        gaussian(rng, tags.len(), dim),
        tags,
        way,
    )
    .unwrap()
}

/// A small random model, episode and clustering setup for gradient checks.
pub struct GradCase {
    pub model: Model,
    pub episode: Episode,
    pub tac: TacConfig,
    pub iterations: usize,
}

pub fn random_grad_case(seed: u64) -> GradCase {
    let mut r = rng(seed);
    let way = r.random_range(2..=4);
    let input_dim = r.random_range(2..=6);
    let hidden: Vec<usize> = (0..r.random_range(0..=2)).map(|_| r.random_range(2..=7)).collect();
    let output_dim = r.random_range(way + 2..=10);
    let activation = if r.random_bool(0.5) { Activation::Relu } else { Activation::Tanh };
    let variant = [Variant::TapnetBaseline, Variant::Tac, Variant::Tacdap][r.random_range(0..3)];
    let distance = if r.random_bool(0.5) { Distance::SquaredEuclidean } else { Distance::Euclidean };
    let cfg = EmbedderConfig { input_dim, hidden_dims: hidden, output_dim, activation, seed: r.random() };
    let model = Model::new(&cfg, way, variant == Variant::Tacdap, r.random()).unwrap();
    let (shots, queries) = (r.random_range(1..=2), r.random_range(1..=3));
    let (unlabeled, distractors) = (r.random_range(1..=4), r.random_range(0..=2));
    let episode = random_episode(&mut r, way, shots, queries, unlabeled, distractors, input_dim);
    let tac = TacConfig { variant, distance, ..TacConfig::default() };
    GradCase { model, episode, tac, iterations: r.random_range(0..=3) }
}

/// Gradients below this magnitude are compared absolutely.
pub const GRAD_FLOOR: f64 = 1e-6;
pub const FD_STEP: f64 = 1e-5;

/// Largest relative error between analytic gradients and central differences
/// of the query loss under the episode's (fixed) projection. `None` when a
/// ReLU pre-activation sits too close to its kink for differences to be
/// meaningful, or when the draw produced a degenerate (zero-norm) centroid.
pub fn finite_difference_error(case: &GradCase) -> Option<f64> {
    let GradCase { model, episode, tac, iterations } = case;
    let (_, cache) = model.embedder.forward(episode.query()).unwrap();
    let hidden = cache.pre_activations().len() - 1;
    if model.embedder.config().activation == Activation::Relu
        && cache.pre_activations()[..hidden].iter().any(|m| m.as_slice().iter().any(|z| z.abs() < 1e-3))
    {
        return None;
    }
    let g = episode_gradients(model, episode, tac, *iterations).ok()?;
    let loss_at = |m: &Model| loss_with_projection(m, episode, &g.projection, tac).unwrap();

    let mut worst = 0.0f64;
    let tensors = g.grads.len();
    for t in 0..tensors {
        for i in 0..g.grads[t].len() {
            let mut plus = model.clone();
            let mut minus = model.clone();
            perturb(&mut plus, t, i, FD_STEP);
            perturb(&mut minus, t, i, -FD_STEP);
            let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * FD_STEP);
            let analytic = g.grads[t][i];
            let scale = analytic.abs().max(numeric.abs()).max(GRAD_FLOOR);
            worst = worst.max((analytic - numeric).abs() / scale);
        }
    }
    Some(worst)
}

fn perturb(m: &mut Model, tensor: usize, index: usize, h: f64) {
    let layers = m.embedder.parameter_slices().len();
    if tensor < layers {
        m.embedder.parameter_slices_mut()[tensor][index] += h;
    } else {
        let refs = m.references.matrix();
        let mut data = refs.as_slice().to_vec();
        data[index] += h;
        let new = Matrix::from_vec(refs.rows(), refs.cols(), data).unwrap();
        m.references = tac_core::projection::ReferenceSet::new(new, m.references.includes_distractor()).unwrap();
    }
}
