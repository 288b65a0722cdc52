//! Episode-parallel evaluation, iteration selection and distractor sweeps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::stats;
use super::Model;
use crate::episodes::{derive_seed, sample_episode, Composition, Dataset, EpisodeSpec, LabelSplit};
use crate::error::{Result, TacError};
use crate::projection::argmax;
use crate::tac::{cross_entropy_terms, run_tac_embedded, EmbeddedEpisode, TacConfig};
use crate::tac::Variant;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: Variant,
    pub iterations: usize,
    pub episodes: usize,
    pub mean_accuracy: f64,
    pub ci95: f64,
    /// Mean soft-label cross-entropy after each clustering iteration.
    pub lu_per_iteration: Vec<f64>,
    pub accuracies: Vec<f64>,
    /// Per-episode soft-label cross-entropy by iteration; empty for episodes
    /// with nothing to score.
    #[serde(skip)]
    pub episode_lu: Vec<Vec<f64>>,
}

impl EvalReport {
    fn from_episodes(variant: Variant, iterations: usize, results: Vec<EpisodeResult>) -> Self {
        let accuracies: Vec<f64> = results.iter().map(|r| r.accuracy).collect();
        let episode_lu: Vec<Vec<f64>> = results.into_iter().map(|r| r.lu).collect();
        let depth = episode_lu.iter().map(Vec::len).max().unwrap_or(0);
        let lu_per_iteration = (0..depth)
            .map(|i| {
                let vals: Vec<f64> = episode_lu.iter().filter_map(|v| v.get(i).copied()).collect();
                stats::mean(&vals)
            })
            .collect();
        Self {
            variant,
            iterations,
            episodes: accuracies.len(),
            mean_accuracy: stats::mean(&accuracies),
            ci95: stats::ci95(&accuracies),
            lu_per_iteration,
            accuracies,
            episode_lu,
        }
    }
}

struct EpisodeResult {
    accuracy: f64,
    lu: Vec<f64>,
}

fn evaluate_episode(
    model: &Model,
    ds: &Dataset,
    split: &LabelSplit,
    spec: &EpisodeSpec,
    cfg: &TacConfig,
    iterations: usize,
) -> Result<EpisodeResult> {
    let episode = sample_episode(ds, split, spec)?;
    let embedded = EmbeddedEpisode::embed(&model.embedder, &episode)?;
    let state = run_tac_embedded(&model.references, &embedded, cfg, iterations)?;
    let queries = model.embedder.embed(episode.query())?;
    let (probs, _) = state.classify(&model.references, &queries, cfg.distance)?;
    let hits = probs.row_iter().zip(episode.query_labels()).filter(|(p, &l)| argmax(p) == l).count();
    let accuracy = if episode.query_labels().is_empty() { 0.0 } else { hits as f64 / episode.query_labels().len() as f64 };

    let mut lu = Vec::with_capacity(state.soft_label_trace.len());
    for soft in &state.soft_label_trace {
        let (sum, count) = cross_entropy_terms(soft, episode.unlabeled_ground_truth(), episode.way_count());
        if count == 0 {
            lu.clear();
            break;
        }
        lu.push(sum / count as f64);
    }
    Ok(EpisodeResult { accuracy, lu })
}

/// Evaluates `episode_count` episodes drawn from `spec`. Episodes run in
/// parallel; each has its own derived seed and results are reduced in
/// episode order, so the report does not depend on the thread count.
pub fn evaluate(
    model: &Model,
    ds: &Dataset,
    split: &LabelSplit,
    spec: &EpisodeSpec,
    cfg: &TacConfig,
    iterations: usize,
    episode_count: usize,
) -> Result<EvalReport> {
    model.check_compatible(cfg.variant, spec.way, ds.input_dim())?;
    let results = (0..episode_count as u64)
        .into_par_iter()
        .map(|i| evaluate_episode(model, ds, split, &spec.for_episode(i), cfg, iterations))
        .collect::<Result<Vec<_>>>()?;
    let iterations = if cfg.variant == Variant::TapnetBaseline { 0 } else { iterations };
    Ok(EvalReport::from_episodes(cfg.variant, iterations, results))
}

/// Evaluates `episodes_per_split` episodes under each label split and pools them.
pub fn evaluate_label_splits(
    model: &Model,
    ds: &Dataset,
    splits: &[LabelSplit],
    spec: &EpisodeSpec,
    cfg: &TacConfig,
    iterations: usize,
    episodes_per_split: usize,
) -> Result<EvalReport> {
    model.check_compatible(cfg.variant, spec.way, ds.input_dim())?;
    let mut results = Vec::with_capacity(splits.len() * episodes_per_split);
    for (s, split) in splits.iter().enumerate() {
        let split_spec = EpisodeSpec { seed: derive_seed(spec.seed, s as u64 ^ 0xA5A5_0000), ..*spec };
        let part = (0..episodes_per_split as u64)
            .into_par_iter()
            .map(|i| evaluate_episode(model, ds, split, &split_spec.for_episode(i), cfg, iterations))
            .collect::<Result<Vec<_>>>()?;
        results.extend(part);
    }
    let iterations = if cfg.variant == Variant::TapnetBaseline { 0 } else { iterations };
    Ok(EvalReport::from_episodes(cfg.variant, iterations, results))
}

/// Picks the iteration count in `1..=max_iterations` with the best accuracy
/// on `spec` (normally validation classes); ties go to fewer iterations.
pub fn select_eval_iterations(
    model: &Model,
    ds: &Dataset,
    split: &LabelSplit,
    spec: &EpisodeSpec,
    cfg: &TacConfig,
    max_iterations: usize,
    episode_count: usize,
) -> Result<(usize, Vec<EvalReport>)> {
    if max_iterations == 0 {
        return Err(TacError::InvalidConfig("iteration sweep needs at least one iteration".into()));
    }
    let reports = (1..=max_iterations)
        .map(|it| evaluate(model, ds, split, spec, cfg, it, episode_count))
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, r) in reports.iter().enumerate() {
        if r.mean_accuracy > reports[best].mean_accuracy {
            best = i;
        }
    }
    Ok((best + 1, reports))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub distractor_fraction: f64,
    pub report: EvalReport,
}

/// One uneven-composition evaluation per distractor fraction, with
/// `unlabeled_total` unlabeled samples per episode.
#[allow(clippy::too_many_arguments)]
pub fn distractor_sweep(
    model: &Model,
    ds: &Dataset,
    split: &LabelSplit,
    base: &EpisodeSpec,
    cfg: &TacConfig,
    iterations: usize,
    episode_count: usize,
    unlabeled_total: usize,
    fractions: &[f64],
) -> Result<Vec<SweepPoint>> {
    if let Some(f) = fractions.iter().find(|f| !(0.0..1.0).contains(*f)) {
        return Err(TacError::InvalidSpec(format!("distractor fraction {f} not in [0, 1)")));
    }
    fractions
        .iter()
        .map(|&f| {
            let spec = EpisodeSpec { composition: Composition::uneven_from_fraction(unlabeled_total, f)?, ..*base };
            let report = evaluate(model, ds, split, &spec, cfg, iterations, episode_count)?;
            Ok(SweepPoint { distractor_fraction: f, report })
        })
        .collect()
}
