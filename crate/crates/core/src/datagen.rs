//! Seeded Gaussian-mixture datasets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::episodes::{Dataset, Split};
use crate::error::{Result, TacError};
use crate::linalg::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub class_count: usize,
    pub samples_per_class: usize,
    pub input_dim: usize,
    /// Expected norm of a class center; each coordinate of a center has
    /// standard deviation `class_center_scale / sqrt(input_dim)`.
    pub class_center_scale: f64,
    /// Per-coordinate standard deviation around the class center.
    pub within_class_std: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            class_count: 100,
            samples_per_class: 100,
            input_dim: 16,
            class_center_scale: 2.0,
            within_class_std: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn separation_ratio(&self) -> f64 {
        self.class_center_scale / self.within_class_std
    }

    /// Classes are split 60/20/20 into train/validation/test by class index.
    pub fn split_of(&self, class: usize) -> Split {
        let train = (self.class_count * 3).div_ceil(5);
        let val = self.class_count / 5;
        if class < train {
            Split::Train
        } else if class < train + val {
            Split::Validation
        } else {
            Split::Test
        }
    }
}

/// A generated dataset together with the true class centers.
#[derive(Clone, Debug)]
pub struct Synthetic {
    pub dataset: Dataset,
    pub centers: Matrix,
}

pub fn generate(spec: &SyntheticSpec) -> Result<Dataset> {
    generate_with_centers(spec).map(|s| s.dataset)
}

pub fn generate_with_centers(spec: &SyntheticSpec) -> Result<Synthetic> {
    if spec.class_count == 0 || spec.samples_per_class == 0 || spec.input_dim == 0 {
        return Err(TacError::InvalidSpec("synthetic counts must be positive".into()));
    }
    if !(spec.class_center_scale >= 0.0 && spec.within_class_std >= 0.0) {
        return Err(TacError::InvalidSpec("scales must be non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let center_std = spec.class_center_scale / (spec.input_dim as f64).sqrt();
    let dim = spec.input_dim;

    let mut centers = Vec::with_capacity(spec.class_count * dim);
    let mut data = Vec::with_capacity(spec.class_count * spec.samples_per_class * dim);
    let mut labels = Vec::with_capacity(spec.class_count * spec.samples_per_class);
    for c in 0..spec.class_count {
        let center: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal) * center_std).collect();
        for _ in 0..spec.samples_per_class {
            for &mu in &center {
                let noise: f64 = rng.sample(StandardNormal);
                data.push(mu + spec.within_class_std * noise);
            }
            labels.push(c);
        }
        centers.extend(center);
    }
    let names = (0..spec.class_count).map(|c| format!("class_{c:04}")).collect();
    let splits = (0..spec.class_count).map(|c| spec.split_of(c)).collect();
    let samples = Matrix::from_vec(labels.len(), dim, data)?;
    Ok(Synthetic {
        dataset: Dataset::new(samples, labels, names, splits)?,
        centers: Matrix::from_vec(spec.class_count, dim, centers)?,
    })
}
