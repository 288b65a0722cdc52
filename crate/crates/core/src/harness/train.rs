//! Episodic meta-training of the embedder and references.

use std::path::PathBuf;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::eval::evaluate;
use super::Model;
use crate::embedder::{EmbedderConfig, OptimizerState};
use crate::episodes::{sample_episode, Composition, Dataset, Episode, EpisodeSpec, LabelSplit};
use crate::error::{Result, TacError};
use crate::linalg::Matrix;
use crate::projection::{query_loss, ProjectionSpace, QueryLoss};
use crate::tac::{run_tac_embedded, EmbeddedEpisode, TacConfig, Variant};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Training episodes; the unlabeled composition is dropped for variants
    /// trained without unlabeled samples.
    pub episode: EpisodeSpec,
    pub validation: EpisodeSpec,
    pub tac: TacConfig,
    pub embedder: EmbedderConfig,
    pub learning_rate: f64,
    pub episodes: usize,
    /// Validate every this many episodes; 0 validates only at the end.
    pub validation_period: usize,
    pub validation_episodes: usize,
    pub checkpoint: Option<PathBuf>,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 || self.validation_episodes == 0 {
            return Err(TacError::InvalidConfig("episode counts must be positive".into()));
        }
        if self.episode.way < 2 || self.episode.shots == 0 || self.episode.queries_per_class == 0 {
            return Err(TacError::InvalidConfig("training episodes need way >= 2, shots >= 1, queries >= 1".into()));
        }
        if self.validation.way > self.episode.way {
            return Err(TacError::InvalidConfig("validation way exceeds training way".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(TacError::InvalidConfig(format!("learning rate {} must be finite and >= 0", self.learning_rate)));
        }
        self.embedder.validate(self.episode.way)
    }

    /// The composition training episodes actually use.
    pub fn training_spec(&self) -> EpisodeSpec {
        if self.tac.variant.trains_with_unlabeled() {
            self.episode
        } else {
            EpisodeSpec { composition: Composition::supervised(), ..self.episode }
        }
    }

    /// Variant and iteration count applied during training steps.
    fn training_variant(&self) -> (Variant, usize) {
        if self.tac.variant.trains_with_unlabeled() {
            (self.tac.variant, self.tac.train_iterations)
        } else {
            (Variant::TapnetBaseline, 0)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub episode: usize,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub episode: usize,
    pub accuracy: f64,
    pub ci95: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub validations: Vec<ValidationRecord>,
    pub optimizer_steps: u64,
    pub best: Option<ValidationRecord>,
}

/// Loss and gradients of one episode. The projection is a function of the
/// centroids and references but is held constant for differentiation, so
/// gradients reach the embedder only through the queries and reach only the
/// class references.
pub struct EpisodeGradients {
    pub loss: QueryLoss,
    pub projection: ProjectionSpace,
    /// One entry per embedder tensor followed by the flattened references.
    pub grads: Vec<Vec<f64>>,
}

pub fn episode_gradients(
    model: &Model,
    episode: &Episode,
    tac: &TacConfig,
    iterations: usize,
) -> Result<EpisodeGradients> {
    let embedded = EmbeddedEpisode::embed(&model.embedder, episode)?;
    let state = run_tac_embedded(&model.references, &embedded, tac, iterations)?;
    let (queries, cache) = model.embedder.forward(episode.query())?;
    let loss = query_loss(
        &state.projection,
        &model.references,
        &queries,
        episode.query_labels(),
        episode.way_count(),
        tac.distance,
    )?;
    if !loss.loss.is_finite() {
        return Err(TacError::NumericalFailure(format!("episode loss is {}", loss.loss)));
    }
    let g = model.embedder.backward(&cache, &loss.grad_queries)?;
    let mut grads: Vec<Vec<f64>> = g.slices().into_iter().map(<[f64]>::to_vec).collect();
    let mut ref_grad = vec![0.0; model.references.matrix().as_slice().len()];
    ref_grad[..loss.grad_refs.as_slice().len()].copy_from_slice(loss.grad_refs.as_slice());
    grads.push(ref_grad);
    Ok(EpisodeGradients { loss, projection: state.projection, grads })
}

/// Query loss of `episode` under a fixed projection.
pub fn loss_with_projection(model: &Model, episode: &Episode, projection: &ProjectionSpace, tac: &TacConfig) -> Result<f64> {
    let queries = model.embedder.embed(episode.query())?;
    Ok(query_loss(projection, &model.references, &queries, episode.query_labels(), episode.way_count(), tac.distance)?.loss)
}

fn apply(model: &mut Model, opt: &mut OptimizerState, grads: &[Vec<f64>]) -> Result<()> {
    let Model { embedder, references } = model;
    let mut params = embedder.parameter_slices_mut();
    params.push(references.matrix_mut().as_mut_slice());
    let g: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
    opt.update(&mut params, &g)
}

fn references_finite(m: &Matrix) -> Result<()> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(TacError::NumericalFailure("references became non-finite".into()))
    }
}

/// Trains a fresh model. When validation runs, the returned model is the
/// best-validating one and, if a checkpoint path is set, it is also what
/// the file holds. A numerical failure stops training and leaves the last
/// written checkpoint in place.
pub fn train(ds: &Dataset, split: &LabelSplit, cfg: &TrainConfig) -> Result<(Model, TrainLog)> {
    cfg.validate()?;
    if ds.input_dim() != cfg.embedder.input_dim {
        return Err(TacError::InvalidDimension(format!(
            "embedder expects {} input features, dataset has {}",
            cfg.embedder.input_dim,
            ds.input_dim()
        )));
    }
    let mut model =
        Model::new(&cfg.embedder, cfg.episode.way, cfg.tac.variant.uses_distractor_reference(), cfg.seed)?;
    let mut opt = model.optimizer(cfg.learning_rate);
    let spec = EpisodeSpec { seed: cfg.seed, ..cfg.training_spec() };
    let (variant, iterations) = cfg.training_variant();
    let step_tac = TacConfig { variant, ..cfg.tac.clone() };
    let eval_tac = cfg.tac.clone();

    let mut log = TrainLog::default();
    let mut best: Option<(Model, ValidationRecord)> = None;

    for i in 0..cfg.episodes {
        let episode = sample_episode(ds, split, &spec.for_episode(i as u64))?;
        let step = episode_gradients(&model, &episode, &step_tac, iterations)
            .and_then(|eg| {
                apply(&mut model, &mut opt, &eg.grads)?;
                references_finite(model.references.matrix())?;
                Ok(eg)
            })
            .map_err(|e| {
                warn!("training stopped at episode {i}: {e}");
                e
            })?;
        log.steps.push(StepRecord {
            episode: i,
            loss: step.loss.loss,
            accuracy: step.loss.accuracy(episode.query_labels()),
        });
        log.optimizer_steps = opt.step;

        let done = i + 1;
        let due = (cfg.validation_period > 0 && done % cfg.validation_period == 0) || done == cfg.episodes;
        if !due {
            continue;
        }
        let report = evaluate(
            &model,
            ds,
            split,
            &cfg.validation,
            &eval_tac,
            eval_tac.eval_iterations,
            cfg.validation_episodes,
        )?;
        let rec = ValidationRecord { episode: done, accuracy: report.mean_accuracy, ci95: report.ci95 };
        info!("episode {done}: loss {:.4}, validation accuracy {:.4} ± {:.4}", step.loss.loss, rec.accuracy, rec.ci95);
        log.validations.push(rec.clone());
        if best.as_ref().is_none_or(|(_, b)| rec.accuracy > b.accuracy) {
            if let Some(path) = &cfg.checkpoint {
                let ck = Checkpoint {
                    model: model.clone(),
                    optimizer: Some(opt.clone()),
                    episodes_trained: done,
                    validation_accuracy: Some(rec.accuracy),
                };
                ck.save(path)?;
            }
            best = Some((model.clone(), rec));
        }
    }

    Ok(match best {
        Some((m, rec)) => {
            log.best = Some(rec);
            (m, log)
        }
        None => (model, log),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate, SyntheticSpec};
    use crate::episodes::{make_label_split, Split};

    fn config(episodes: usize, lr: f64, variant: Variant) -> TrainConfig {
        let composition =
            Composition::Structured { unlabeled_per_class: 2, distractor_classes: 0, distractor_per_class: 0 };
        let episode = EpisodeSpec { way: 3, shots: 1, queries_per_class: 3, composition, classes: Split::Train, seed: 0 };
        TrainConfig {
            episode,
            validation: EpisodeSpec { classes: Split::Validation, seed: 99, ..episode },
            tac: TacConfig::with_variant(variant),
            embedder: EmbedderConfig { input_dim: 4, hidden_dims: vec![8], output_dim: 8, ..Default::default() },
            learning_rate: lr,
            episodes,
            validation_period: 2,
            validation_episodes: 10,
            checkpoint: None,
            seed: 3,
        }
    }

    fn data() -> (Dataset, LabelSplit) {
        let ds = generate(&SyntheticSpec { class_count: 15, samples_per_class: 12, input_dim: 4, ..Default::default() })
            .unwrap();
        let split = make_label_split(&ds, 0.5, 0).unwrap();
        (ds, split)
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let (ds, split) = data();
        let cfg = config(6, 0.0, Variant::Tac);
        let (m, log) = train(&ds, &split, &cfg).unwrap();
        let fresh = Model::new(&cfg.embedder, 3, false, cfg.seed).unwrap();
        assert_eq!(m, fresh);
        assert_eq!(log.validations.len(), 3);
        assert!(log.validations.iter().all(|v| v.accuracy == log.validations[0].accuracy));
    }

    #[test]
    fn one_episode_one_step() {
        let (ds, split) = data();
        let (_, log) = train(&ds, &split, &config(1, 1e-3, Variant::Tacdap)).unwrap();
        assert_eq!(log.optimizer_steps, 1);
        assert_eq!(log.steps.len(), 1);
        assert_eq!(log.validations.len(), 1);
    }

    #[test]
    fn supervised_variants_drop_unlabeled_samples() {
        let cfg = config(1, 1e-3, Variant::SemiSupInference);
        assert_eq!(cfg.training_spec().composition, Composition::supervised());
        assert_eq!(config(1, 1e-3, Variant::Tac).training_spec(), cfg.episode);
    }

    #[test]
    fn distractor_reference_gets_no_gradient() {
        let (ds, split) = data();
        let cfg = config(1, 1e-3, Variant::Tacdap);
        let model = Model::new(&cfg.embedder, 3, true, 1).unwrap();
        let ep = sample_episode(&ds, &split, &cfg.episode).unwrap();
        let g = episode_gradients(&model, &ep, &cfg.tac, 2).unwrap();
        let refs = g.grads.last().unwrap();
        let d = cfg.embedder.output_dim;
        assert!(refs[3 * d..].iter().all(|&v| v == 0.0));
        assert!(refs[..3 * d].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn checkpoint_holds_best_model() {
        let (ds, split) = data();
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = config(4, 1e-2, Variant::Tac);
        cfg.checkpoint = Some(dir.path().join("best.ckpt"));
        let (m, log) = train(&ds, &split, &cfg).unwrap();
        let ck = Checkpoint::load(cfg.checkpoint.as_ref().unwrap()).unwrap();
        assert_eq!(ck.model, m);
        assert_eq!(ck.validation_accuracy, log.best.as_ref().map(|b| b.accuracy));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let (ds, split) = data();
        let mut cfg = config(0, 1e-3, Variant::Tac);
        assert!(matches!(train(&ds, &split, &cfg), Err(TacError::InvalidConfig(_))));
        cfg.episodes = 1;
        cfg.embedder.output_dim = 4;
        assert!(matches!(train(&ds, &split, &cfg), Err(TacError::InvalidConfig(_))));
    }
}
