//! Model checkpoints: embedder layers, references and optional Adam moments.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Model;
use crate::embedder::{Embedder, EmbedderConfig, Layer, OptimizerState};
use crate::error::{Result, TacError};
use crate::io::{read_container, write_container};
use crate::linalg::Matrix;
use crate::projection::ReferenceSet;

const CHECKPOINT_MAGIC: &[u8; 8] = b"TACCKPT1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub optimizer: Option<OptimizerState>,
    pub episodes_trained: usize,
    pub validation_accuracy: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    embedder: EmbedderConfig,
    way: usize,
    includes_distractor: bool,
    episodes_trained: usize,
    validation_accuracy: Option<f64>,
    optimizer: Option<OptimizerState>,
}

impl Checkpoint {
    pub fn new(model: Model) -> Self {
        Self { model, optimizer: None, episodes_trained: 0, validation_accuracy: None }
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let refs = &self.model.references;
        let header = Header {
            format: "tac-checkpoint".into(),
            version: 1,
            embedder: self.model.embedder.config().clone(),
            way: refs.way_count(),
            includes_distractor: refs.includes_distractor(),
            episodes_trained: self.episodes_trained,
            validation_accuracy: self.validation_accuracy,
            optimizer: self.optimizer.clone(),
        };
        let mut payload = Vec::new();
        for s in self.model.embedder.parameter_slices() {
            payload.extend_from_slice(s);
        }
        payload.extend_from_slice(refs.matrix().as_slice());
        if let Some(opt) = &self.optimizer {
            for m in opt.first_moment().iter().chain(opt.second_moment()) {
                payload.extend_from_slice(m);
            }
        }
        write_container(w, CHECKPOINT_MAGIC, &header, &payload)
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let (h, payload): (Header, Vec<f64>) = read_container(r, CHECKPOINT_MAGIC)?;
        if h.format != "tac-checkpoint" || h.version != 1 {
            return Err(TacError::Format(format!("unsupported checkpoint {} v{}", h.format, h.version)));
        }
        let dims = h.embedder.dims();
        let ref_rows = h.way + usize::from(h.includes_distractor);
        let mut lens: Vec<usize> = dims.windows(2).flat_map(|w| [w[0] * w[1], w[1]]).collect();
        lens.push(ref_rows * h.embedder.output_dim);
        let params: usize = lens.iter().sum();
        let expected = if h.optimizer.is_some() { 3 * params } else { params };
        if payload.len() != expected {
            return Err(TacError::Format(format!("checkpoint payload has {} values, expected {expected}", payload.len())));
        }

        let mut chunks = Vec::with_capacity(lens.len() * 3);
        let mut at = 0;
        for _ in 0..expected / params {
            for &n in &lens {
                chunks.push(payload[at..at + n].to_vec());
                at += n;
            }
        }
        let mut it = chunks.into_iter();
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for w in dims.windows(2) {
            let weight = Matrix::from_vec(w[1], w[0], it.next().unwrap_or_default())?;
            let bias = it.next().unwrap_or_default();
            layers.push(Layer { weight, bias });
        }
        let embedder = Embedder::from_layers(h.embedder.clone(), layers)?;
        let refs = Matrix::from_vec(ref_rows, h.embedder.output_dim, it.next().unwrap_or_default())?;
        let references = ReferenceSet::new(refs, h.includes_distractor)?;

        let optimizer = match h.optimizer {
            Some(mut opt) => {
                let first: Vec<Vec<f64>> = it.by_ref().take(lens.len()).collect();
                let second: Vec<Vec<f64>> = it.by_ref().take(lens.len()).collect();
                opt.set_moments(first, second);
                Some(opt)
            }
            None => None,
        };
        Ok(Self {
            model: Model { embedder, references },
            optimizer,
            episodes_trained: h.episodes_trained,
            validation_accuracy: h.validation_accuracy,
        })
    }

    /// Writes to a sibling temporary file and renames it into place, so an
    /// existing checkpoint survives a failed write.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            self.write_to(&mut w)?;
            w.flush()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_model(with_distractor: bool) -> Model {
        let cfg = EmbedderConfig { input_dim: 3, hidden_dims: vec![5], output_dim: 8, seed: 4, ..Default::default() };
        Model::new(&cfg, 3, with_distractor, 9).unwrap()
    }

    #[test]
    fn round_trip_without_optimizer() {
        let ck = Checkpoint { episodes_trained: 12, validation_accuracy: Some(0.5), ..Checkpoint::new(small_model(true)) };
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        assert_eq!(Checkpoint::read_from(buf.as_slice()).unwrap(), ck);
    }

    #[test]
    fn round_trip_with_optimizer_moments() {
        let model = small_model(false);
        let mut opt = model.optimizer(1e-3);
        let lens: Vec<usize> = opt.first_moment().iter().map(|m| m.len()).collect();
        let first = lens.iter().map(|&n| (0..n).map(|i| i as f64 * 0.5).collect()).collect();
        let second = lens.iter().map(|&n| vec![0.25; n]).collect();
        opt.set_moments(first, second);
        opt.step = 7;
        let ck = Checkpoint { optimizer: Some(opt), ..Checkpoint::new(model) };
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        assert_eq!(Checkpoint::read_from(buf.as_slice()).unwrap(), ck);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let mut buf = Vec::new();
        Checkpoint::new(small_model(false)).write_to(&mut buf).unwrap();
        buf.truncate(buf.len() - 8);
        assert!(matches!(Checkpoint::read_from(buf.as_slice()), Err(TacError::Format(_))));
        assert!(matches!(Checkpoint::read_from(&b"TACDSET1"[..]), Err(TacError::Format(_))));
    }

    #[test]
    fn save_and_load_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ck = Checkpoint::new(small_model(true));
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
    }
}
