//! Metrics records, degradation curves and projected-embedding tables.

use std::fs::OpenOptions;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::eval::{EvalReport, SweepPoint};
use super::Model;
use crate::episodes::{Episode, UnlabeledTag};
use crate::error::{Result, TacError};
use crate::linalg::Matrix;
use crate::tac::{run_tac, TacConfig};

fn format_err(e: impl std::fmt::Display) -> TacError {
    TacError::Format(e.to_string())
}

/// Appends one JSON object per line.
pub fn append_jsonl<T: Serialize>(path: impl AsRef<Path>, record: &T) -> Result<()> {
    let mut f = BufWriter::new(OpenOptions::new().create(true).append(true).open(path)?);
    serde_json::to_writer(&mut f, record).map_err(format_err)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

/// A metrics line for one evaluation.
#[derive(Serialize)]
pub struct EvalRecord<'a> {
    pub kind: &'static str,
    pub split: &'a str,
    pub distractor_fraction: Option<f64>,
    #[serde(flatten)]
    pub report: &'a EvalReport,
}

/// Degradation curve as CSV: `distractor_fraction,variant,iterations,episodes,mean_accuracy,ci95`.
pub fn write_sweep_csv<W: Write>(w: W, points: &[SweepPoint]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["distractor_fraction", "variant", "iterations", "episodes", "mean_accuracy", "ci95"])
        .map_err(format_err)?;
    for p in points {
        let r = &p.report;
        out.write_record([
            p.distractor_fraction.to_string(),
            r.variant.to_string(),
            r.iterations.to_string(),
            r.episodes.to_string(),
            r.mean_accuracy.to_string(),
            r.ci95.to_string(),
        ])
        .map_err(format_err)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleSet {
    Support,
    Query,
    Unlabeled,
}

impl SampleSet {
    fn as_str(self) -> &'static str {
        match self {
            SampleSet::Support => "support",
            SampleSet::Query => "query",
            SampleSet::Unlabeled => "unlabeled",
        }
    }
}

impl std::str::FromStr for SampleSet {
    type Err = TacError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "support" => Ok(SampleSet::Support),
            "query" => Ok(SampleSet::Query),
            "unlabeled" => Ok(SampleSet::Unlabeled),
            other => Err(TacError::Format(format!("unknown sample set '{other}'"))),
        }
    }
}

/// One projected sample. `class` is the episode-local label, absent for
/// distractors; `global_class` is the dataset class.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionRow {
    pub iteration: usize,
    pub set: SampleSet,
    pub class: Option<usize>,
    pub global_class: usize,
    pub coords: Vec<f64>,
}

/// Projects the support, query and unlabeled samples with the clustering
/// projection of every iteration, starting from the initial one.
pub fn export_projection(model: &Model, episode: &Episode, cfg: &TacConfig, iterations: usize) -> Result<Vec<ProjectionRow>> {
    let state = run_tac(&model.embedder, &model.references, episode, cfg, iterations)?;
    let support = model.embedder.embed(episode.support())?;
    let query = model.embedder.embed(episode.query())?;
    let unlabeled = if episode.unlabeled().rows() > 0 {
        model.embedder.embed(episode.unlabeled())?
    } else {
        Matrix::zeros(0, model.embedder.output_dim())
    };
    let candidates = episode.candidate_classes();
    let unlabeled_tags: Vec<(Option<usize>, usize)> = episode
        .unlabeled_ground_truth()
        .iter()
        .map(|t| match *t {
            UnlabeledTag::Candidate(n) => (Some(n), candidates[n]),
            UnlabeledTag::Distractor(g) => (None, g),
        })
        .collect();
    type Tagged = Vec<(Option<usize>, usize)>;
    let labeled = |labels: &[usize]| -> Tagged {
        labels.iter().map(|&l| (Some(l), candidates[l])).collect()
    };
    let blocks: [(SampleSet, &Matrix, Tagged); 3] = [
        (SampleSet::Support, &support, labeled(episode.support_labels())),
        (SampleSet::Query, &query, labeled(episode.query_labels())),
        (SampleSet::Unlabeled, &unlabeled, unlabeled_tags),
    ];

    let mut rows = Vec::new();
    for (it, p) in state.clustering_projections.iter().enumerate() {
        for (set, x, tags) in &blocks {
            let projected = p.project(x)?;
            for (r, &(class, global_class)) in projected.row_iter().zip(tags) {
                rows.push(ProjectionRow { iteration: it, set: *set, class, global_class, coords: r.to_vec() });
            }
        }
    }
    Ok(rows)
}

/// Columns: `iteration,set,class,global_class,c0,…`; `class` is empty for
/// distractors. Values use the shortest representation that parses back
/// to the same `f64`.
pub fn write_projection_csv<W: Write>(w: W, rows: &[ProjectionRow]) -> Result<()> {
    let m = rows.first().map_or(0, |r| r.coords.len());
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<String> = ["iteration", "set", "class", "global_class"].map(String::from).to_vec();
    header.extend((0..m).map(|k| format!("c{k}")));
    out.write_record(&header).map_err(format_err)?;
    for r in rows {
        if r.coords.len() != m {
            return Err(TacError::InvalidDimension(format!("row with {} coordinates in a {m}-column table", r.coords.len())));
        }
        let mut rec = vec![
            r.iteration.to_string(),
            r.set.as_str().to_string(),
            r.class.map(|c| c.to_string()).unwrap_or_default(),
            r.global_class.to_string(),
        ];
        rec.extend(r.coords.iter().map(f64::to_string));
        out.write_record(&rec).map_err(format_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_projection_csv<R: Read>(r: R) -> Result<Vec<ProjectionRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(format_err)?;
        if rec.len() < 4 {
            return Err(TacError::Format("projection row has fewer than 4 columns".into()));
        }
        let num = |s: &str| s.parse::<usize>().map_err(format_err);
        let class = if rec[2].is_empty() { None } else { Some(num(&rec[2])?) };
        let coords = rec.iter().skip(4).map(|s| s.parse::<f64>().map_err(format_err)).collect::<Result<_>>()?;
        rows.push(ProjectionRow {
            iteration: num(&rec[0])?,
            set: rec[1].parse()?,
            class,
            global_class: num(&rec[3])?,
            coords,
        });
    }
    Ok(rows)
}
