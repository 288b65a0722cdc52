//! Datasets with class-disjoint splits, labeled/unlabeled partitions, and
//! episode sampling in the structured and uneven compositions.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Result, TacError};
use crate::io::{read_container, write_container};
use crate::linalg::Matrix;

const DATASET_MAGIC: &[u8; 8] = b"TACDSET1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl std::str::FromStr for Split {
    type Err = TacError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(TacError::InvalidConfig(format!("unknown split '{other}'"))),
        }
    }
}

/// Labeled samples grouped into classes; every class belongs to exactly one split.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    samples: Matrix,
    labels: Vec<usize>,
    class_names: Vec<String>,
    class_splits: Vec<Split>,
    by_class: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    format: String,
    version: u32,
    count: usize,
    input_dim: usize,
    class_names: Vec<String>,
    class_splits: Vec<Split>,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(
        samples: Matrix,
        labels: Vec<usize>,
        class_names: Vec<String>,
        class_splits: Vec<Split>,
    ) -> Result<Self> {
        if labels.len() != samples.rows() {
            return Err(TacError::InvalidDataset(format!(
                "{} labels for {} samples",
                labels.len(),
                samples.rows()
            )));
        }
        if class_names.len() != class_splits.len() {
            return Err(TacError::InvalidDataset("class names and splits differ in length".into()));
        }
        let mut by_class = vec![Vec::new(); class_names.len()];
        for (i, &l) in labels.iter().enumerate() {
            by_class
                .get_mut(l)
                .ok_or_else(|| TacError::InvalidDataset(format!("label {l} has no class entry")))?
                .push(i);
        }
        Ok(Self { samples, labels, class_names, class_splits, by_class })
    }

    pub fn samples(&self) -> &Matrix {
        &self.samples
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn class_splits(&self) -> &[Split] {
        &self.class_splits
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.samples.cols()
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_indices(&self, class: usize) -> &[usize] {
        &self.by_class[class]
    }

    pub fn classes_in(&self, split: Split) -> Vec<usize> {
        (0..self.class_count()).filter(|&c| self.class_splits[c] == split).collect()
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let header = DatasetHeader {
            format: "tac-dataset".into(),
            version: 1,
            count: self.len(),
            input_dim: self.input_dim(),
            class_names: self.class_names.clone(),
            class_splits: self.class_splits.clone(),
            labels: self.labels.clone(),
        };
        write_container(w, DATASET_MAGIC, &header, self.samples.as_slice())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let (h, payload): (DatasetHeader, Vec<f64>) = read_container(r, DATASET_MAGIC)?;
        if h.format != "tac-dataset" || h.version != 1 {
            return Err(TacError::Format(format!("unsupported dataset {} v{}", h.format, h.version)));
        }
        if payload.len() != h.count * h.input_dim {
            return Err(TacError::Format(format!(
                "payload holds {} values, header declares {}x{}",
                payload.len(),
                h.count,
                h.input_dim
            )));
        }
        let samples = Matrix::from_vec(h.count, h.input_dim, payload)?;
        Self::new(samples, h.labels, h.class_names, h.class_splits)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

/// Per-class partition of sample indices into labeled and unlabeled pools.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelSplit {
    labeled: Vec<Vec<usize>>,
    unlabeled: Vec<Vec<usize>>,
    labeled_fraction: f64,
}

impl LabelSplit {
    pub fn labeled(&self, class: usize) -> &[usize] {
        &self.labeled[class]
    }

    pub fn unlabeled(&self, class: usize) -> &[usize] {
        &self.unlabeled[class]
    }

    pub fn labeled_fraction(&self) -> f64 {
        self.labeled_fraction
    }
}

pub fn make_label_split(ds: &Dataset, labeled_fraction: f64, seed: u64) -> Result<LabelSplit> {
    if !(labeled_fraction > 0.0 && labeled_fraction < 1.0) {
        return Err(TacError::InvalidSpec(format!("labeled fraction {labeled_fraction} not in (0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labeled = Vec::with_capacity(ds.class_count());
    let mut unlabeled = Vec::with_capacity(ds.class_count());
    for c in 0..ds.class_count() {
        let mut idx = ds.class_indices(c).to_vec();
        if idx.len() < 2 {
            return Err(TacError::InvalidDataset(format!(
                "class '{}' has {} samples, need at least 2",
                ds.class_names[c],
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        let n_lab = ((labeled_fraction * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
        let rest = idx.split_off(n_lab);
        labeled.push(idx);
        unlabeled.push(rest);
    }
    Ok(LabelSplit { labeled, unlabeled, labeled_fraction })
}

/// Hidden ground truth for an unlabeled sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnlabeledTag {
    /// Episode-local class index.
    Candidate(usize),
    /// Dataset class id of a non-candidate class.
    Distractor(usize),
}

/// One few-shot task. Unlabeled ground truth is reachable only through
/// [`Episode::unlabeled_ground_truth`] and is meant for diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    support: Matrix,
    support_labels: Vec<usize>,
    query: Matrix,
    query_labels: Vec<usize>,
    unlabeled: Matrix,
    unlabeled_tags: Vec<UnlabeledTag>,
    way_count: usize,
    candidate_classes: Vec<usize>,
}

impl Episode {
    pub fn new(
        support: Matrix,
        support_labels: Vec<usize>,
        query: Matrix,
        query_labels: Vec<usize>,
        unlabeled: Matrix,
        unlabeled_tags: Vec<UnlabeledTag>,
        way_count: usize,
    ) -> Result<Self> {
        if support.rows() != support_labels.len()
            || query.rows() != query_labels.len()
            || unlabeled.rows() != unlabeled_tags.len()
        {
            return Err(TacError::InvalidEpisode("sample and label counts differ".into()));
        }
        let dim = support.cols();
        if (query.rows() > 0 && query.cols() != dim) || (unlabeled.rows() > 0 && unlabeled.cols() != dim) {
            return Err(dim_err!("episode parts have different feature widths"));
        }
        if support_labels.iter().chain(&query_labels).any(|&l| l >= way_count) {
            return Err(TacError::InvalidEpisode("label outside the way count".into()));
        }
        Ok(Self {
            support,
            support_labels,
            query,
            query_labels,
            unlabeled,
            unlabeled_tags,
            way_count,
            candidate_classes: (0..way_count).collect(),
        })
    }

    pub fn support(&self) -> &Matrix {
        &self.support
    }

    pub fn support_labels(&self) -> &[usize] {
        &self.support_labels
    }

    pub fn query(&self) -> &Matrix {
        &self.query
    }

    pub fn query_labels(&self) -> &[usize] {
        &self.query_labels
    }

    /// Unlabeled features only.
    pub fn unlabeled(&self) -> &Matrix {
        &self.unlabeled
    }

    pub fn unlabeled_ground_truth(&self) -> &[UnlabeledTag] {
        &self.unlabeled_tags
    }

    pub fn way_count(&self) -> usize {
        self.way_count
    }

    /// Dataset class ids in episode-local order.
    pub fn candidate_classes(&self) -> &[usize] {
        &self.candidate_classes
    }

    pub fn distractor_count(&self) -> usize {
        self.unlabeled_tags.iter().filter(|t| matches!(t, UnlabeledTag::Distractor(_))).count()
    }

    /// Same episode with a different unlabeled set.
    pub fn with_unlabeled(&self, unlabeled: Matrix, tags: Vec<UnlabeledTag>) -> Result<Self> {
        let mut e = Self::new(
            self.support.clone(),
            self.support_labels.clone(),
            self.query.clone(),
            self.query_labels.clone(),
            unlabeled,
            tags,
            self.way_count,
        )?;
        e.candidate_classes = self.candidate_classes.clone();
        Ok(e)
    }
}

/// How the unlabeled set of an episode is composed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum Composition {
    /// `u` samples per candidate class plus `d` from each of `N_d` distractor classes.
    Structured { unlabeled_per_class: usize, distractor_classes: usize, distractor_per_class: usize },
    /// Fixed totals; per-class candidate counts are random and distractors
    /// come from every non-candidate class of the split.
    Uneven { candidate_total: usize, distractor_total: usize },
}

impl Composition {
    /// Uneven totals from an overall count and a distractor fraction.
    pub fn uneven_from_fraction(total: usize, distractor_fraction: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&distractor_fraction) {
            return Err(TacError::InvalidSpec(format!("distractor fraction {distractor_fraction} not in [0, 1]")));
        }
        let distractor_total = (total as f64 * distractor_fraction).round() as usize;
        Ok(Composition::Uneven { candidate_total: total - distractor_total, distractor_total })
    }

    pub fn unlabeled_total(&self, way: usize) -> usize {
        match *self {
            Composition::Structured { unlabeled_per_class, distractor_classes, distractor_per_class } => {
                way * unlabeled_per_class + distractor_classes * distractor_per_class
            }
            Composition::Uneven { candidate_total, distractor_total } => candidate_total + distractor_total,
        }
    }

    /// Drops every unlabeled sample.
    pub fn supervised() -> Self {
        Composition::Structured { unlabeled_per_class: 0, distractor_classes: 0, distractor_per_class: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub way: usize,
    pub shots: usize,
    pub queries_per_class: usize,
    pub composition: Composition,
    /// Which class split episodes draw from.
    pub classes: Split,
    pub seed: u64,
}

impl EpisodeSpec {
    /// Spec for the `index`-th episode of a stream; seeds come from a
    /// counter-based mix so streams can be split across workers.
    pub fn for_episode(&self, index: u64) -> EpisodeSpec {
        EpisodeSpec { seed: derive_seed(self.seed, index), ..*self }
    }
}

/// SplitMix64 finalizer over `(base, index)`.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn sample_episode(ds: &Dataset, split: &LabelSplit, spec: &EpisodeSpec) -> Result<Episode> {
    match spec.composition {
        Composition::Structured { .. } => sample_structured_episode(ds, split, spec),
        Composition::Uneven { .. } => sample_uneven_episode(ds, split, spec),
    }
}

struct Labeled {
    support: Vec<usize>,
    support_labels: Vec<usize>,
    query: Vec<usize>,
    query_labels: Vec<usize>,
}

fn pick_candidates(ds: &Dataset, spec: &EpisodeSpec, extra: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    if spec.way < 2 {
        return Err(TacError::InvalidSpec(format!("way count {} < 2", spec.way)));
    }
    if spec.shots == 0 {
        return Err(TacError::InvalidSpec("shots must be positive".into()));
    }
    let mut classes = ds.classes_in(spec.classes);
    if classes.len() < spec.way + extra {
        return Err(TacError::InvalidSpec(format!(
            "split {:?} has {} classes, episode needs {}",
            spec.classes,
            classes.len(),
            spec.way + extra
        )));
    }
    classes.shuffle(rng);
    classes.truncate(spec.way + extra);
    Ok(classes)
}

fn draw(pool: &[usize], count: usize, rng: &mut ChaCha8Rng, what: &str) -> Result<Vec<usize>> {
    if count > pool.len() {
        return Err(TacError::InvalidSpec(format!("{what}: need {count} samples, pool has {}", pool.len())));
    }
    Ok(index::sample(rng, pool.len(), count).into_iter().map(|i| pool[i]).collect())
}

fn draw_labeled(split: &LabelSplit, candidates: &[usize], spec: &EpisodeSpec, rng: &mut ChaCha8Rng) -> Result<Labeled> {
    let mut out = Labeled { support: vec![], support_labels: vec![], query: vec![], query_labels: vec![] };
    for (n, &c) in candidates.iter().enumerate() {
        let picked = draw(split.labeled(c), spec.shots + spec.queries_per_class, rng, "labeled pool")?;
        out.support.extend_from_slice(&picked[..spec.shots]);
        out.support_labels.extend(std::iter::repeat_n(n, spec.shots));
        out.query.extend_from_slice(&picked[spec.shots..]);
        out.query_labels.extend(std::iter::repeat_n(n, spec.queries_per_class));
    }
    Ok(out)
}

fn assemble(
    ds: &Dataset,
    labeled: Labeled,
    mut unlabeled: Vec<(usize, UnlabeledTag)>,
    candidates: Vec<usize>,
    rng: &mut ChaCha8Rng,
) -> Episode {
    unlabeled.shuffle(rng);
    let samples = ds.samples();
    let (u_idx, tags): (Vec<usize>, Vec<UnlabeledTag>) = unlabeled.into_iter().unzip();
    let way = candidates.len();
    let mut unl = samples.select_rows(&u_idx);
    if u_idx.is_empty() {
        unl = Matrix::zeros(0, samples.cols());
    }
    Episode {
        support: samples.select_rows(&labeled.support),
        support_labels: labeled.support_labels,
        query: samples.select_rows(&labeled.query),
        query_labels: labeled.query_labels,
        unlabeled: unl,
        unlabeled_tags: tags,
        way_count: way,
        candidate_classes: candidates,
    }
}

pub fn sample_structured_episode(ds: &Dataset, split: &LabelSplit, spec: &EpisodeSpec) -> Result<Episode> {
    let Composition::Structured { unlabeled_per_class, distractor_classes, distractor_per_class } = spec.composition
    else {
        return Err(TacError::InvalidSpec("structured sampler needs a structured composition".into()));
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut classes = pick_candidates(ds, spec, distractor_classes, &mut rng)?;
    let distractors = classes.split_off(spec.way);
    let labeled = draw_labeled(split, &classes, spec, &mut rng)?;
    let mut unlabeled = Vec::with_capacity(spec.composition.unlabeled_total(spec.way));
    for (n, &c) in classes.iter().enumerate() {
        for i in draw(split.unlabeled(c), unlabeled_per_class, &mut rng, "unlabeled pool")? {
            unlabeled.push((i, UnlabeledTag::Candidate(n)));
        }
    }
    for &c in &distractors {
        for i in draw(split.unlabeled(c), distractor_per_class, &mut rng, "distractor pool")? {
            unlabeled.push((i, UnlabeledTag::Distractor(c)));
        }
    }
    Ok(assemble(ds, labeled, unlabeled, classes, &mut rng))
}

/// Splits `total` over `weights` by largest remainder, then moves any excess
/// above `caps` onto classes with room left (largest weight first).
pub(crate) fn allocate(total: usize, weights: &[f64], caps: &[usize]) -> Result<Vec<usize>> {
    let room: usize = caps.iter().sum();
    if total > room {
        return Err(TacError::InvalidSpec(format!("need {total} candidate unlabeled samples, pools hold {room}")));
    }
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut short = total - counts.iter().sum::<usize>();
    let mut by_remainder: Vec<usize> = (0..weights.len()).collect();
    by_remainder.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in by_remainder.iter().cycle().take(short) {
        counts[i] += 1;
    }
    let mut overflow = 0;
    for (c, &cap) in counts.iter_mut().zip(caps) {
        if *c > cap {
            overflow += *c - cap;
            *c = cap;
        }
    }
    let mut by_weight: Vec<usize> = (0..weights.len()).collect();
    by_weight.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    short = overflow;
    for &i in &by_weight {
        if short == 0 {
            break;
        }
        let add = (caps[i] - counts[i]).min(short);
        counts[i] += add;
        short -= add;
    }
    Ok(counts)
}

pub fn sample_uneven_episode(ds: &Dataset, split: &LabelSplit, spec: &EpisodeSpec) -> Result<Episode> {
    let Composition::Uneven { candidate_total, distractor_total } = spec.composition else {
        return Err(TacError::InvalidSpec("uneven sampler needs an uneven composition".into()));
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let classes = pick_candidates(ds, spec, 0, &mut rng)?;
    let labeled = draw_labeled(split, &classes, spec, &mut rng)?;

    // Symmetric Dirichlet(1) proportions over the candidate classes.
    let weights: Vec<f64> = (0..spec.way).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let caps: Vec<usize> = classes.iter().map(|&c| split.unlabeled(c).len()).collect();
    let counts = allocate(candidate_total, &weights, &caps)?;

    let mut unlabeled = Vec::with_capacity(candidate_total + distractor_total);
    for (n, (&c, &k)) in classes.iter().zip(&counts).enumerate() {
        for i in draw(split.unlabeled(c), k, &mut rng, "unlabeled pool")? {
            unlabeled.push((i, UnlabeledTag::Candidate(n)));
        }
    }
    let mut pool: Vec<(usize, usize)> = Vec::new();
    for c in ds.classes_in(spec.classes) {
        if !classes.contains(&c) {
            pool.extend(split.unlabeled(c).iter().map(|&i| (i, c)));
        }
    }
    if distractor_total > pool.len() {
        return Err(TacError::InvalidSpec(format!(
            "need {distractor_total} distractors, non-candidate pools hold {}",
            pool.len()
        )));
    }
    for k in index::sample(&mut rng, pool.len(), distractor_total) {
        let (i, c) = pool[k];
        unlabeled.push((i, UnlabeledTag::Distractor(c)));
    }
    Ok(assemble(ds, labeled, unlabeled, classes, &mut rng))
}
