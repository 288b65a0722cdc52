//! Flat `key = value` experiment configuration (TOML syntax). Every key is
//! optional; command-line flags override whatever the file sets.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::train::TrainConfig;
use crate::datagen::SyntheticSpec;
use crate::embedder::{Activation, EmbedderConfig, OptimizerState};
use crate::episodes::{derive_seed, make_label_split, Composition, Dataset, EpisodeSpec, LabelSplit, Split};
use crate::error::{Result, TacError};
use crate::projection::Distance;
use crate::tac::{TacConfig, Variant};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Structured,
    Uneven,
}

impl std::str::FromStr for Mode {
    type Err = TacError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "structured" => Ok(Mode::Structured),
            "uneven" => Ok(Mode::Uneven),
            other => Err(TacError::InvalidConfig(format!("unknown mode '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    // Files
    pub dataset: PathBuf,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub sweep_csv: PathBuf,
    pub projection_csv: PathBuf,

    // Synthetic data
    pub classes: usize,
    pub samples_per_class: usize,
    pub input_dim: usize,
    pub center_scale: f64,
    pub within_class_std: f64,
    pub data_seed: u64,

    // Labeled/unlabeled partition
    pub labeled_fraction: f64,
    pub label_split_seed: u64,
    pub label_splits: usize,

    // Model
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    pub distance: Distance,

    // Episodes
    pub variant: Variant,
    pub way: usize,
    pub shots: usize,
    pub queries: usize,
    pub train_unlabeled_per_class: usize,
    pub train_distractor_classes: usize,
    pub train_distractor_per_class: usize,
    pub eval_unlabeled_per_class: usize,
    pub eval_distractor_classes: usize,
    pub eval_distractor_per_class: usize,
    pub mode: Mode,
    pub unlabeled_total: usize,
    pub distractor_fraction: f64,

    // Training
    pub seed: u64,
    pub train_episodes: usize,
    pub learning_rate: f64,
    pub train_iterations: usize,
    pub validation_period: usize,
    pub validation_episodes: usize,

    // Evaluation
    pub eval_episodes: usize,
    pub eval_iterations: usize,
    /// Pick the iteration count on validation classes before evaluating.
    pub select_iterations: bool,
    pub max_iterations: usize,
    pub eval_seed: u64,
    pub cluster_in_embedding_space: bool,
    pub sweep_fractions: Vec<f64>,
    pub export_episode: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let data = SyntheticSpec::default();
        let model = EmbedderConfig::default();
        Self {
            dataset: "data.tacd".into(),
            checkpoint: "model.ckpt".into(),
            metrics: "metrics.jsonl".into(),
            sweep_csv: "sweep.csv".into(),
            projection_csv: "projection.csv".into(),
            classes: data.class_count,
            samples_per_class: data.samples_per_class,
            input_dim: data.input_dim,
            center_scale: data.class_center_scale,
            within_class_std: data.within_class_std,
            data_seed: data.seed,
            labeled_fraction: 0.4,
            label_split_seed: 0,
            label_splits: 10,
            hidden_dims: model.hidden_dims,
            output_dim: model.output_dim,
            activation: model.activation,
            distance: Distance::SquaredEuclidean,
            variant: Variant::Tac,
            way: 5,
            shots: 1,
            queries: 15,
            train_unlabeled_per_class: 5,
            train_distractor_classes: 0,
            train_distractor_per_class: 0,
            eval_unlabeled_per_class: 20,
            eval_distractor_classes: 0,
            eval_distractor_per_class: 0,
            mode: Mode::Structured,
            unlabeled_total: 200,
            distractor_fraction: 0.0,
            seed: 0,
            train_episodes: 2000,
            learning_rate: OptimizerState::DEFAULT_LEARNING_RATE,
            train_iterations: 1,
            validation_period: 500,
            validation_episodes: 300,
            eval_episodes: 3000,
            eval_iterations: 4,
            select_iterations: false,
            max_iterations: 6,
            eval_seed: 1,
            cluster_in_embedding_space: false,
            sweep_fractions: vec![0.0, 0.2, 0.4, 0.6, 0.8],
            export_episode: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| TacError::InvalidConfig(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| TacError::InvalidConfig(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config fields always serialize")
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            class_count: self.classes,
            samples_per_class: self.samples_per_class,
            input_dim: self.input_dim,
            class_center_scale: self.center_scale,
            within_class_std: self.within_class_std,
            seed: self.data_seed,
        }
    }

    /// The embedder's input width follows the dataset it will be trained on.
    pub fn embedder_config(&self, input_dim: usize) -> EmbedderConfig {
        EmbedderConfig {
            input_dim,
            hidden_dims: self.hidden_dims.clone(),
            output_dim: self.output_dim,
            activation: self.activation,
            seed: derive_seed(self.seed, 0xE3BE_DDE5),
        }
    }

    pub fn tac_config(&self) -> TacConfig {
        TacConfig {
            variant: self.variant,
            train_iterations: self.train_iterations,
            eval_iterations: self.eval_iterations,
            distance: self.distance,
            cluster_in_embedding_space: self.cluster_in_embedding_space,
        }
    }

    fn spec(&self, composition: Composition, classes: Split, seed: u64) -> EpisodeSpec {
        EpisodeSpec { way: self.way, shots: self.shots, queries_per_class: self.queries, composition, classes, seed }
    }

    pub fn train_spec(&self) -> EpisodeSpec {
        let c = Composition::Structured {
            unlabeled_per_class: self.train_unlabeled_per_class,
            distractor_classes: self.train_distractor_classes,
            distractor_per_class: self.train_distractor_per_class,
        };
        self.spec(c, Split::Train, self.seed)
    }

    /// Evaluation composition from `mode`: structured counts, or uneven
    /// totals split by `distractor_fraction`.
    pub fn eval_spec(&self, classes: Split) -> Result<EpisodeSpec> {
        let c = match self.mode {
            Mode::Structured => Composition::Structured {
                unlabeled_per_class: self.eval_unlabeled_per_class,
                distractor_classes: self.eval_distractor_classes,
                distractor_per_class: self.eval_distractor_per_class,
            },
            Mode::Uneven => Composition::uneven_from_fraction(self.unlabeled_total, self.distractor_fraction)?,
        };
        Ok(self.spec(c, classes, self.eval_seed))
    }

    pub fn train_config(&self, input_dim: usize) -> Result<TrainConfig> {
        let mut validation = self.eval_spec(Split::Validation)?;
        validation.seed = derive_seed(self.seed, 0x7A11);
        Ok(TrainConfig {
            episode: self.train_spec(),
            validation,
            tac: self.tac_config(),
            embedder: self.embedder_config(input_dim),
            learning_rate: self.learning_rate,
            episodes: self.train_episodes,
            validation_period: self.validation_period,
            validation_episodes: self.validation_episodes,
            checkpoint: Some(self.checkpoint.clone()),
            seed: self.seed,
        })
    }

    /// The partition training uses.
    pub fn label_split(&self, ds: &Dataset) -> Result<LabelSplit> {
        make_label_split(ds, self.labeled_fraction, self.label_split_seed)
    }

    /// `label_splits` partitions for evaluation; the first is the training one.
    pub fn eval_label_splits(&self, ds: &Dataset) -> Result<Vec<LabelSplit>> {
        if self.label_splits == 0 {
            return Err(TacError::InvalidConfig("label_splits must be positive".into()));
        }
        (0..self.label_splits as u64)
            .map(|s| {
                let seed = if s == 0 { self.label_split_seed } else { derive_seed(self.label_split_seed, s) };
                make_label_split(ds, self.labeled_fraction, seed)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_all_defaults() {
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn keys_override_defaults() {
        let c = ExperimentConfig::from_toml(
            "variant = \"tacdap\"\nway = 3\nlearning_rate = 0.01\nhidden_dims = [8]\nmode = \"uneven\"\n",
        )
        .unwrap();
        assert_eq!(c.variant, Variant::Tacdap);
        assert_eq!(c.way, 3);
        assert_eq!(c.hidden_dims, vec![8]);
        assert_eq!(c.mode, Mode::Uneven);
        assert_eq!(c.learning_rate, 0.01);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_errors() {
        assert!(matches!(ExperimentConfig::from_toml("wya = 5"), Err(TacError::InvalidConfig(_))));
        assert!(matches!(ExperimentConfig::from_toml("variant = \"x\""), Err(TacError::InvalidConfig(_))));
    }

    #[test]
    fn serialized_config_parses_back() {
        let c = ExperimentConfig { sweep_fractions: vec![0.0, 0.5], ..Default::default() };
        assert_eq!(ExperimentConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn uneven_spec_from_fraction() {
        let c = ExperimentConfig { mode: Mode::Uneven, distractor_fraction: 0.6, ..Default::default() };
        let s = c.eval_spec(Split::Test).unwrap();
        assert_eq!(s.composition, Composition::Uneven { candidate_total: 80, distractor_total: 120 });
    }
}
