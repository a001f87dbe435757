//! Datasets, non-IID client partitioning and FedAvg training that keeps every
//! round's local models around for contribution evaluation.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{LabelVector, Matrix};
use crate::model::{Architecture, Model};

/// Features are `d x m` (one column per sample).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: LabelVector,
    pub classes: usize,
    /// Globally unique sample ids.
    pub ids: Vec<u64>,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, classes: usize) -> Result<Self> {
        let ids = (0..labels.len() as u64).collect();
        Self::with_ids(features, labels, classes, ids)
    }

    pub fn with_ids(features: Matrix, labels: Vec<usize>, classes: usize, ids: Vec<u64>) -> Result<Self> {
        if features.cols() != labels.len() {
            return Err(Error::Dataset(format!("{} samples but {} labels", features.cols(), labels.len())));
        }
        if ids.len() != labels.len() {
            return Err(Error::Dataset(format!("{} ids for {} samples", ids.len(), labels.len())));
        }
        let labels = LabelVector::with_classes(labels, classes)?;
        Ok(Dataset { features, labels, classes, ids })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.rows()
    }

    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_columns(idx),
            labels: self.labels.select(idx),
            classes: self.classes,
            ids: idx.iter().map(|&i| self.ids[i]).collect(),
        }
    }

    /// Re-numbers ids starting at `offset`.
    pub fn with_id_offset(mut self, offset: u64) -> Dataset {
        self.ids = (offset..offset + self.len() as u64).collect();
        self
    }

    /// `label,f1,f2,...` per line; blank lines and `#` comments ignored.
    pub fn load_csv(path: &Path, classes: Option<usize>) -> Result<Dataset> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_csv(&text, classes)
    }

    pub fn parse_csv(text: &str, classes: Option<usize>) -> Result<Dataset> {
        let mut labels = Vec::new();
        let mut cols: Vec<Vec<f64>> = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split(',').map(str::trim);
            let label = fields
                .next()
                .and_then(|t| t.parse::<usize>().ok())
                .ok_or_else(|| Error::Parse(format!("line {}: bad label", n + 1)))?;
            let feats = fields
                .map(|t| t.parse::<f64>().map_err(|e| Error::Parse(format!("line {}: {e}", n + 1))))
                .collect::<Result<Vec<_>>>()?;
            if let Some(first) = cols.first() {
                if first.len() != feats.len() {
                    return Err(Error::Parse(format!("line {}: ragged row", n + 1)));
                }
            }
            labels.push(label);
            cols.push(feats);
        }
        if cols.is_empty() {
            return Err(Error::Dataset("no samples in csv".into()));
        }
        let d = cols[0].len();
        let m = cols.len();
        let features = Matrix::from_fn(d, m, |i, j| cols[j][i]);
        let classes = classes.unwrap_or_else(|| labels.iter().max().map_or(1, |&l| l + 1));
        Dataset::new(features, labels, classes)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for s in 0..self.len() {
            out.push_str(&self.labels.as_slice()[s].to_string());
            for f in 0..self.dim() {
                out.push(',');
                out.push_str(&format!("{:?}", self.features.get(f, s)));
            }
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Kinds of synthetic data the simulator can generate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SyntheticSpec {
    /// Gaussian class clusters in `dim` dimensions.
    Blobs { dim: usize, classes: usize, separation: f64 },
    /// Class templates on a `side x side` grid plus pixel noise.
    Images { side: usize, classes: usize, noise: f64 },
}

impl SyntheticSpec {
    pub fn dim(&self) -> usize {
        match *self {
            SyntheticSpec::Blobs { dim, .. } => dim,
            SyntheticSpec::Images { side, .. } => side * side,
        }
    }

    pub fn classes(&self) -> usize {
        match *self {
            SyntheticSpec::Blobs { classes, .. } | SyntheticSpec::Images { classes, .. } => classes,
        }
    }

    /// Draws `m` samples; the class layout depends only on `layout_seed`, so
    /// train and test splits drawn with different `rng`s share it.
    pub fn generate<R: Rng + ?Sized>(&self, m: usize, layout_seed: u64, rng: &mut R) -> Result<Dataset> {
        let mut layout = ChaCha8Rng::seed_from_u64(layout_seed);
        let classes = self.classes();
        if classes < 2 {
            return Err(Error::Dataset("need at least two classes".into()));
        }
        let (d, centers, spread) = match *self {
            SyntheticSpec::Blobs { dim, separation, .. } => {
                let unit = Normal::new(0.0, 1.0).expect("unit normal");
                let centers: Vec<Vec<f64>> = (0..classes)
                    .map(|_| {
                        let v: Vec<f64> = (0..dim).map(|_| unit.sample(&mut layout)).collect();
                        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                        v.into_iter().map(|x| x / norm * separation).collect()
                    })
                    .collect();
                (dim, centers, 1.0)
            }
            SyntheticSpec::Images { side, noise, .. } => {
                let centers: Vec<Vec<f64>> = (0..classes)
                    .map(|_| (0..side * side).map(|_| if layout.random_bool(0.5) { 1.0 } else { 0.0 }).collect())
                    .collect();
                (side * side, centers, noise)
            }
        };
        let noise = Normal::new(0.0, spread).map_err(|e| Error::Dataset(e.to_string()))?;
        let labels: Vec<usize> = (0..m).map(|_| rng.random_range(0..classes)).collect();
        let mut data = vec![0.0; d * m];
        for (s, &y) in labels.iter().enumerate() {
            for f in 0..d {
                data[f * m + s] = centers[y][f] + noise.sample(rng);
            }
        }
        Dataset::new(Matrix::from_vec(d, m, data)?, labels, classes)
    }
}

/// One client's slice of a split, keeping the global ids.
pub type ClientDataset = Dataset;

fn dirichlet_draw<R: Rng + ?Sized>(n: usize, alpha: f64, rng: &mut R) -> Result<Vec<f64>> {
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::Dataset(format!("alpha {alpha}: {e}")))?;
    for _ in 0..64 {
        let g: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
        let total: f64 = g.iter().sum();
        if total > 0.0 && total.is_finite() {
            return Ok(g.into_iter().map(|x| x / total).collect());
        }
    }
    Err(Error::Dataset(format!("Dirichlet({alpha}) kept producing degenerate draws")))
}

/// Splits `count` items by `proportions`, largest-remainder rounding.
fn apportion(count: usize, proportions: &[f64]) -> Vec<usize> {
    let raw: Vec<f64> = proportions.iter().map(|p| p * count as f64).collect();
    let mut out: Vec<usize> = raw.iter().map(|x| x.floor() as usize).collect();
    let mut left = count - out.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..proportions.len()).collect();
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())).then(a.cmp(&b)));
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        out[i] += 1;
        left -= 1;
    }
    out
}

fn indices_by_label(data: &Dataset) -> Vec<Vec<usize>> {
    let mut by = vec![Vec::new(); data.classes];
    for (i, &y) in data.labels.as_slice().iter().enumerate() {
        by[y].push(i);
    }
    by
}

/// Label-skewed split of several datasets (e.g. train and test) with one shared
/// set of per-label Dirichlet proportions. Draws that leave any client without
/// samples in any dataset are redrawn.
pub fn dirichlet_partition_many<R: Rng + ?Sized>(
    datasets: &[&Dataset],
    n: usize,
    alpha: f64,
    rng: &mut R,
) -> Result<Vec<Vec<ClientDataset>>> {
    if n == 0 {
        return Err(Error::Dataset("need at least one client".into()));
    }
    if alpha.is_nan() || alpha <= 0.0 {
        return Err(Error::Dataset(format!("alpha must be positive, got {alpha}")));
    }
    let classes = datasets.first().map_or(0, |d| d.classes);
    for d in datasets {
        if d.len() < n {
            return Err(Error::Dataset(format!("{} samples cannot feed {n} clients", d.len())));
        }
    }
    if n == 1 {
        return Ok(datasets.iter().map(|d| vec![(*d).clone()]).collect());
    }
    let mut shuffled: Vec<Vec<Vec<usize>>> = datasets
        .iter()
        .map(|d| {
            let mut by = indices_by_label(d);
            for v in &mut by {
                v.shuffle(rng);
            }
            by
        })
        .collect();
    for _ in 0..1000 {
        let props = (0..classes).map(|_| dirichlet_draw(n, alpha, rng)).collect::<Result<Vec<_>>>()?;
        let mut all: Vec<Vec<Vec<usize>>> = Vec::with_capacity(datasets.len());
        for by in &shuffled {
            let mut assigned = vec![Vec::new(); n];
            for (label, idx) in by.iter().enumerate() {
                let counts = apportion(idx.len(), &props[label]);
                let mut start = 0;
                for (client, c) in counts.into_iter().enumerate() {
                    assigned[client].extend_from_slice(&idx[start..start + c]);
                    start += c;
                }
            }
            all.push(assigned);
        }
        if all.iter().all(|a| a.iter().all(|c| !c.is_empty())) {
            return Ok(all
                .into_iter()
                .zip(datasets)
                .map(|(assigned, d)| {
                    assigned
                        .into_iter()
                        .map(|mut idx| {
                            idx.sort_unstable();
                            d.select(&idx)
                        })
                        .collect()
                })
                .collect());
        }
        // Reshuffle so a redraw is not forced to the same orderings.
        for by in &mut shuffled {
            for v in by.iter_mut() {
                v.shuffle(rng);
            }
        }
    }
    Err(Error::Dataset(format!("could not give all {n} clients a sample at alpha {alpha}")))
}

pub fn dirichlet_partition<R: Rng + ?Sized>(
    data: &Dataset,
    n: usize,
    alpha: f64,
    rng: &mut R,
) -> Result<Vec<ClientDataset>> {
    Ok(dirichlet_partition_many(&[data], n, alpha, rng)?.remove(0))
}

/// Which samples went to which client, for freezing a partition as a fixture.
pub fn partition_ids(parts: &[ClientDataset]) -> BTreeMap<usize, Vec<u64>> {
    parts.iter().enumerate().map(|(i, p)| (i, p.ids.clone())).collect()
}

/// How aggregation weights `w_{i|S}` are derived.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightRule {
    /// Proportional to local training-set size.
    #[default]
    TrainSize,
    Uniform,
}

/// Everything one FedAvg round produces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundModels {
    pub round: usize,
    /// Participating clients, ascending.
    pub selected: Vec<usize>,
    /// Global model broadcast at the start of the round.
    pub global: Model,
    /// Local models, aligned with `selected`.
    pub locals: Vec<Model>,
    /// Local training-set sizes, aligned with `selected`.
    pub train_sizes: Vec<usize>,
    pub rule: WeightRule,
}

impl RoundModels {
    pub fn n_selected(&self) -> usize {
        self.selected.len()
    }

    /// Weights for the members of `subset` (positions into `selected`).
    pub fn weights(&self, subset: &[usize]) -> Result<Vec<f64>> {
        if subset.is_empty() {
            return Err(Error::Shape("aggregation weights of the empty set".into()));
        }
        Ok(match self.rule {
            WeightRule::Uniform => vec![1.0 / subset.len() as f64; subset.len()],
            WeightRule::TrainSize => {
                let total: usize = subset.iter().map(|&i| self.train_sizes[i]).sum();
                subset.iter().map(|&i| self.train_sizes[i] as f64 / total as f64).collect()
            }
        })
    }

    /// Aggregate of the local models in `subset`; the empty set yields the global model.
    pub fn aggregate(&self, subset: &[usize]) -> Result<Model> {
        if subset.is_empty() {
            return Ok(self.global.clone());
        }
        if let Some(&bad) = subset.iter().find(|&&i| i >= self.locals.len()) {
            return Err(Error::Shape(format!("client position {bad} not in round {}", self.round)));
        }
        let models: Vec<&Model> = subset.iter().map(|&i| &self.locals[i]).collect();
        Model::weighted_sum(&models, &self.weights(subset)?)
    }

    pub fn aggregate_mask(&self, mask: u64) -> Result<Model> {
        self.aggregate(&members(mask))
    }
}

/// Positions set in a subset bitmask, ascending.
pub fn members(mask: u64) -> Vec<usize> {
    (0..64).filter(|i| mask >> i & 1 == 1).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub rounds: usize,
    pub local_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub rule: WeightRule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { rounds: 3, local_epochs: 2, learning_rate: 0.5, batch_size: 16, rule: WeightRule::TrainSize }
    }
}

/// Local minibatch SGD; deterministic given `rng`.
pub fn local_train<R: Rng + ?Sized>(model: &Model, data: &Dataset, cfg: &TrainConfig, rng: &mut R) -> Result<Model> {
    let mut m = model.clone();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..cfg.local_epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let x = data.features.select_columns(chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| data.labels.as_slice()[i]).collect();
            m.sgd_step(&x, &y, cfg.learning_rate)?;
        }
    }
    Ok(m)
}

/// FedAvg over all clients every round. Returns one [`RoundModels`] per round.
pub fn fedavg_train<R: Rng + ?Sized>(
    clients: &[Dataset],
    arch: &Architecture,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<Vec<RoundModels>> {
    if cfg.rounds == 0 {
        return Err(Error::Training("at least one round is required".into()));
    }
    let first = clients.first().ok_or_else(|| Error::Training("no clients".into()))?;
    let mut global = arch.init(first.dim(), first.classes, rng)?;
    let train_sizes: Vec<usize> = clients.iter().map(Dataset::len).collect();
    let selected: Vec<usize> = (0..clients.len()).collect();
    let mut rounds = Vec::with_capacity(cfg.rounds);
    for t in 0..cfg.rounds {
        let locals = clients.iter().map(|c| local_train(&global, c, cfg, rng)).collect::<Result<Vec<_>>>()?;
        let round = RoundModels {
            round: t,
            selected: selected.clone(),
            global: global.clone(),
            locals,
            train_sizes: train_sizes.clone(),
            rule: cfg.rule,
        };
        global = round.aggregate(&selected)?;
        rounds.push(round);
    }
    Ok(rounds)
}
