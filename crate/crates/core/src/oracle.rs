//! Target models behind a confidence-vector interface.
//!
//! [`Oracle`] is what the attack sees: a black box returning a probability
//! vector per query, with an access counter. [`TargetModel`] holds the local
//! stand-ins used to simulate private models, and [`LocalOracle`] wraps one
//! behind the oracle interface.
//!
//! Model file (`ADIM`, little-endian): magic, version `u16`, kind `u8`
//! (0 softmax-linear, 1 nearest-centroid), d `u32`, m `u32`, then the
//! parameters as row-major `f64`: `W` (m×d) and `b` (m) for softmax-linear,
//! centroids (m×d) and the temperature for nearest-centroid. A trailer
//! carries the training metadata: seed `u64`, epochs `u32`, accuracy `f64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::datapool::io::Cursor;
use crate::datapool::Dataset;
use crate::error::{Error, Result};

const MODEL_MAGIC: &[u8; 4] = b"ADIM";
const MODEL_VERSION: u16 = 1;
const SUM_TOLERANCE: f64 = 1e-6;

/// Validated probability vector over `m ≥ 2` classes.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfidenceVector(Vec<f64>);

impl ConfidenceVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::InvalidConfidence(format!(
                "need at least 2 classes, got {}",
                probs.len()
            )));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidConfidence(format!("entry {p} outside [0, 1]")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidConfidence(format!("entries sum to {sum}")));
        }
        Ok(Self(probs))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest entry; the first one on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for ConfidenceVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Query accounting shared by every oracle implementation.
#[derive(Debug, Default)]
pub struct OracleStats {
    count: AtomicU64,
    epochs: Mutex<EpochLog>,
}

#[derive(Debug, Default)]
struct EpochLog {
    marked: u64,
    per_epoch: Vec<u64>,
}

impl OracleStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self) {
        self.count.fetch_add(1, Ordering::Relaxed);
    }

    pub fn access_count(&self) -> u64 {
        self.count.load(Ordering::Relaxed)
    }

    /// Closes an epoch, logging the accesses made since the previous mark.
    pub fn mark_epoch(&self) -> u64 {
        let now = self.access_count();
        let mut log = self.epochs.lock().expect("stats lock poisoned");
        let spent = now - log.marked;
        log.marked = now;
        log.per_epoch.push(spent);
        spent
    }

    pub fn epoch_log(&self) -> Vec<u64> {
        self.epochs.lock().expect("stats lock poisoned").per_epoch.clone()
    }
}

/// Black-box classifier returning confidence vectors.
pub trait Oracle: Send + Sync {
    fn input_dim(&self) -> usize;

    fn num_classes(&self) -> usize;

    /// One counted query.
    fn classify(&self, x: &[f64]) -> Result<ConfidenceVector>;

    /// `∂ log p_k / ∂x`, for oracles that expose it.
    fn gradient(&self, _x: &[f64], _class: usize) -> Result<Vec<f64>> {
        Err(Error::NonDifferentiable)
    }

    fn stats(&self) -> &OracleStats;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    SoftmaxLinear,
    NearestCentroid,
}

impl ModelKind {
    fn code(self) -> u8 {
        match self {
            ModelKind::SoftmaxLinear => 0,
            ModelKind::NearestCentroid => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::SoftmaxLinear => "softmax-linear",
            ModelKind::NearestCentroid => "nearest-centroid",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TrainingInfo {
    pub seed: u64,
    pub epochs: u32,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
enum Params {
    SoftmaxLinear { weights: Vec<f64>, bias: Vec<f64> },
    NearestCentroid { centroids: Vec<f64>, temperature: f64 },
}

/// A differentiable local classifier over `d` features and `m` classes.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetModel {
    dim: usize,
    classes: usize,
    params: Params,
    info: TrainingInfo,
}

impl TargetModel {
    /// `softmax(W x + b)` with `W` given row-major as m×d.
    pub fn softmax_linear(dim: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        let classes = bias.len();
        check_shape(dim, classes, weights.len())?;
        Ok(Self {
            dim,
            classes,
            params: Params::SoftmaxLinear { weights, bias },
            info: TrainingInfo::default(),
        })
    }

    /// `softmax(−‖x − c_k‖² / τ)` over row-major centroids.
    pub fn nearest_centroid(dim: usize, centroids: Vec<f64>, temperature: f64) -> Result<Self> {
        if dim == 0 || !centroids.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: centroids.len(),
            });
        }
        let classes = centroids.len() / dim;
        check_shape(dim, classes, centroids.len())?;
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        Ok(Self {
            dim,
            classes,
            params: Params::NearestCentroid {
                centroids,
                temperature,
            },
            info: TrainingInfo::default(),
        })
    }

    pub fn with_info(mut self, info: TrainingInfo) -> Self {
        self.info = info;
        self
    }

    pub fn kind(&self) -> ModelKind {
        match self.params {
            Params::SoftmaxLinear { .. } => ModelKind::SoftmaxLinear,
            Params::NearestCentroid { .. } => ModelKind::NearestCentroid,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.classes
    }

    pub fn info(&self) -> TrainingInfo {
        self.info
    }

    pub fn temperature(&self) -> Option<f64> {
        match self.params {
            Params::NearestCentroid { temperature, .. } => Some(temperature),
            Params::SoftmaxLinear { .. } => None,
        }
    }

    pub fn centroids(&self) -> Option<&[f64]> {
        match &self.params {
            Params::NearestCentroid { centroids, .. } => Some(centroids),
            Params::SoftmaxLinear { .. } => None,
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: x.len(),
            });
        }
        Ok(())
    }

    fn logits(&self, x: &[f64]) -> Vec<f64> {
        match &self.params {
            Params::SoftmaxLinear { weights, bias } => weights
                .chunks_exact(self.dim)
                .zip(bias)
                .map(|(w, b)| dot(w, x) + b)
                .collect(),
            Params::NearestCentroid {
                centroids,
                temperature,
            } => centroids
                .chunks_exact(self.dim)
                .map(|c| -squared_distance(x, c) / temperature)
                .collect(),
        }
    }

    /// Class probabilities without any access accounting.
    pub fn probabilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(softmax(&self.logits(x)))
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        self.check_input(x)?;
        Ok(argmax(&self.logits(x)))
    }

    /// `∂ log p_k / ∂x`.
    pub fn gradient(&self, x: &[f64], class: usize) -> Result<Vec<f64>> {
        self.check_input(x)?;
        if class >= self.classes {
            return Err(Error::InvalidArgument(format!(
                "class {class} out of range for {} classes",
                self.classes
            )));
        }
        let p = softmax(&self.logits(x));
        let (rows, scale) = match &self.params {
            Params::SoftmaxLinear { weights, .. } => (weights, 1.0),
            Params::NearestCentroid {
                centroids,
                temperature,
            } => (centroids, 2.0 / temperature),
        };
        // Both kinds reduce to scale · (r_k − Σ_j p_j r_j).
        let mut grad = rows[class * self.dim..(class + 1) * self.dim].to_vec();
        for (row, pj) in rows.chunks_exact(self.dim).zip(&p) {
            for (g, r) in grad.iter_mut().zip(row) {
                *g -= pj * r;
            }
        }
        grad.iter_mut().for_each(|g| *g *= scale);
        Ok(grad)
    }

    /// Fraction of samples whose argmax equals their class position.
    pub fn accuracy(&self, dataset: &Dataset) -> Result<f64> {
        if dataset.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: dataset.dim(),
            });
        }
        if dataset.is_empty() {
            return Ok(0.0);
        }
        let mut correct = 0usize;
        for (label, x) in dataset.labeled_rows() {
            if argmax(&self.logits(x)) == label {
                correct += 1;
            }
        }
        Ok(correct as f64 / dataset.len() as f64)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MODEL_MAGIC)?;
        w.write_all(&MODEL_VERSION.to_le_bytes())?;
        w.write_all(&[self.kind().code()])?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.classes as u32).to_le_bytes())?;
        let (a, b): (&[f64], &[f64]) = match &self.params {
            Params::SoftmaxLinear { weights, bias } => (weights, bias),
            Params::NearestCentroid {
                centroids,
                temperature,
            } => (centroids, std::slice::from_ref(temperature)),
        };
        for v in a.iter().chain(b) {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&self.info.seed.to_le_bytes())?;
        w.write_all(&self.info.epochs.to_le_bytes())?;
        w.write_all(&self.info.accuracy.to_le_bytes())?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut r = Cursor::new(r);
        r.expect_magic(MODEL_MAGIC)?;
        let at = r.pos;
        let version = r.u16()?;
        if version != MODEL_VERSION {
            return Err(Error::MalformedFile {
                offset: at,
                reason: format!("unsupported version {version}"),
            });
        }
        let at = r.pos;
        let kind = r.u8()?;
        let dim = r.u32()? as usize;
        let classes = r.u32()? as usize;
        let mut values = |n: usize| -> Result<Vec<f64>> { (0..n).map(|_| r.f64()).collect() };
        let model = match kind {
            0 => {
                let weights = values(classes * dim)?;
                let bias = values(classes)?;
                Self::softmax_linear(dim, weights, bias)
            }
            1 => {
                let centroids = values(classes * dim)?;
                let temperature = values(1)?[0];
                Self::nearest_centroid(dim, centroids, temperature)
            }
            k => {
                return Err(Error::MalformedFile {
                    offset: at,
                    reason: format!("unknown model kind {k}"),
                })
            }
        }
        .map_err(|e| Error::MalformedFile {
            offset: at,
            reason: e.to_string(),
        })?;
        let info = TrainingInfo {
            seed: r.u64()?,
            epochs: r.u32()?,
            accuracy: r.f64()?,
        };
        Ok(model.with_info(info))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

fn check_shape(dim: usize, classes: usize, params: usize) -> Result<()> {
    if classes < 2 {
        return Err(Error::InvalidArgument(format!(
            "a model needs at least 2 classes, got {classes}"
        )));
    }
    if dim == 0 || params != dim * classes {
        return Err(Error::DimensionMismatch {
            expected: dim * classes,
            actual: params,
        });
    }
    Ok(())
}

/// A [`TargetModel`] queried in-process, with access accounting.
#[derive(Debug)]
pub struct LocalOracle {
    model: TargetModel,
    stats: OracleStats,
}

impl LocalOracle {
    pub fn new(model: TargetModel) -> Self {
        Self {
            model,
            stats: OracleStats::new(),
        }
    }

    pub fn model(&self) -> &TargetModel {
        &self.model
    }
}

impl Oracle for LocalOracle {
    fn input_dim(&self) -> usize {
        self.model.dim
    }

    fn num_classes(&self) -> usize {
        self.model.classes
    }

    fn classify(&self, x: &[f64]) -> Result<ConfidenceVector> {
        self.stats.record();
        ConfidenceVector::new(self.model.probabilities(x)?)
    }

    fn gradient(&self, x: &[f64], class: usize) -> Result<Vec<f64>> {
        self.model.gradient(x, class)
    }

    fn stats(&self) -> &OracleStats {
        &self.stats
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: u32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            epochs: 300,
            seed: 0,
        }
    }
}

/// Full-batch gradient descent on mean cross-entropy. Features are
/// standardized during training and the scaling is folded back into the
/// returned weights, so the model consumes raw features.
pub fn train_softmax(dataset: &Dataset, config: &TrainConfig) -> Result<TargetModel> {
    let m = dataset.num_classes();
    if m < 2 {
        return Err(Error::SingleClass);
    }
    if dataset.is_empty() {
        return Err(Error::EmptyPool);
    }
    let d = dataset.dim();
    let n = dataset.len();

    let mean = dataset.mean();
    let mut scale = vec![0.0; d];
    for (_, x) in dataset.labeled_rows() {
        for j in 0..d {
            scale[j] += (x[j] - mean[j]).powi(2);
        }
    }
    for s in &mut scale {
        *s = (*s / n as f64).sqrt();
        if *s < 1e-12 {
            *s = 1.0;
        }
    }

    let mut z = DMatrix::zeros(n, d);
    let mut labels = Vec::with_capacity(n);
    for (i, (label, x)) in dataset.labeled_rows().enumerate() {
        for j in 0..d {
            z[(i, j)] = (x[j] - mean[j]) / scale[j];
        }
        labels.push(label);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut w = DMatrix::from_fn(m, d, |_, _| {
        let g: f64 = StandardNormal.sample(&mut rng);
        0.01 * g
    });
    let mut b = vec![0.0; m];
    for _ in 0..config.epochs {
        let mut delta = &z * w.transpose();
        for i in 0..n {
            let mut row: Vec<f64> = (0..m).map(|k| delta[(i, k)] + b[k]).collect();
            row = softmax(&row);
            row[labels[i]] -= 1.0;
            for k in 0..m {
                delta[(i, k)] = row[k] / n as f64;
            }
        }
        let grad_w = delta.transpose() * &z;
        w -= grad_w * config.learning_rate;
        for (k, bk) in b.iter_mut().enumerate() {
            *bk -= config.learning_rate * delta.column(k).sum();
        }
    }

    let mut weights = vec![0.0; m * d];
    let mut bias = b;
    for k in 0..m {
        for j in 0..d {
            let wk = w[(k, j)] / scale[j];
            weights[k * d + j] = wk;
            bias[k] -= wk * mean[j];
        }
    }
    let model = TargetModel::softmax_linear(d, weights, bias)?;
    let accuracy = model.accuracy(dataset)?;
    Ok(model.with_info(TrainingInfo {
        seed: config.seed,
        epochs: config.epochs,
        accuracy,
    }))
}

/// Median pairwise squared distance between centroids divided by `contrast`.
/// Larger contrast sharpens in-domain predictions while keeping inputs far
/// from every centroid close to uniform.
pub fn calibrate_temperature(dim: usize, centroids: &[f64], contrast: f64) -> Result<f64> {
    if !(contrast > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "contrast must be positive, got {contrast}"
        )));
    }
    let rows: Vec<&[f64]> = centroids.chunks_exact(dim).collect();
    let mut dists = Vec::with_capacity(rows.len() * rows.len().saturating_sub(1) / 2);
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            dists.push(squared_distance(rows[i], rows[j]));
        }
    }
    if dists.is_empty() {
        return Err(Error::SingleClass);
    }
    let median = median(&mut dists);
    if median <= 0.0 {
        return Err(Error::InvalidArgument("centroids coincide".into()));
    }
    Ok(median / contrast)
}

/// Nearest-centroid model on per-class means with a calibrated temperature.
pub fn fit_centroid(dataset: &Dataset, contrast: f64) -> Result<TargetModel> {
    if dataset.num_classes() < 2 {
        return Err(Error::SingleClass);
    }
    let d = dataset.dim();
    let centroids: Vec<f64> = dataset.classes().iter().flat_map(|c| c.mean()).collect();
    let temperature = calibrate_temperature(d, &centroids, contrast)?;
    let model = TargetModel::nearest_centroid(d, centroids, temperature)?;
    let accuracy = model.accuracy(dataset)?;
    Ok(model.with_info(TrainingInfo {
        seed: 0,
        epochs: 0,
        accuracy,
    }))
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    out
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}
