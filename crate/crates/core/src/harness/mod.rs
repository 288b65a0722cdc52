//! Meta-training, evaluation, sweeps, exports and the configuration they share.

pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod export;
pub mod stats;
pub mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::embedder::{Embedder, EmbedderConfig, OptimizerState};
use crate::episodes::derive_seed;
use crate::error::{Result, TacError};
use crate::projection::ReferenceSet;
use crate::tac::Variant;

pub use checkpoint::Checkpoint;
pub use config::ExperimentConfig;
pub use eval::{distractor_sweep, evaluate, evaluate_label_splits, select_eval_iterations, EvalReport, SweepPoint};
pub use export::{export_projection, ProjectionRow, SampleSet};
pub use train::{train, TrainConfig, TrainLog};

/// An embedder together with its learned reference vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub embedder: Embedder,
    pub references: ReferenceSet,
}

impl Model {
    /// Fresh model; the embedder is seeded from its config and the references
    /// from `seed`.
    pub fn new(config: &EmbedderConfig, way: usize, with_distractor: bool, seed: u64) -> Result<Self> {
        config.validate(way)?;
        let embedder = Embedder::new(config.clone())?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::MAX));
        let references = ReferenceSet::random(way, config.output_dim, with_distractor, &mut rng)?;
        Ok(Self { embedder, references })
    }

    pub fn way(&self) -> usize {
        self.references.way_count()
    }

    /// Checks that the model can run `variant` on `way`-class episodes of `input_dim` features.
    pub fn check_compatible(&self, variant: Variant, way: usize, input_dim: usize) -> Result<()> {
        if self.embedder.input_dim() != input_dim {
            return Err(TacError::InvalidDimension(format!(
                "model expects {} input features, data has {input_dim}",
                self.embedder.input_dim()
            )));
        }
        if way > self.way() {
            return Err(TacError::InvalidConfig(format!("{way}-way episodes but the model has {} references", self.way())));
        }
        if variant.uses_distractor_reference() && !self.references.includes_distractor() {
            return Err(TacError::InvalidState("variant tacdap needs a model trained with a distractor reference".into()));
        }
        Ok(())
    }

    /// Adam state over every embedder tensor plus the reference matrix.
    pub fn optimizer(&self, learning_rate: f64) -> OptimizerState {
        let mut lens: Vec<usize> = self.embedder.parameter_slices().iter().map(|s| s.len()).collect();
        lens.push(self.references.matrix().as_slice().len());
        OptimizerState::new(&lens, learning_rate)
    }
}
