//! The adaptive domain inference loop.
//!
//! Each epoch draws a batch of leaves from the hierarchy, samples one record
//! per leaf, queries the oracle and scores each answer by its normalized
//! entropy. Confident answers promote the leaf, uncertain ones demote it.
//! The run stops once the batch's mean entropy falls to the threshold.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::datapool::{ClassSamples, Dataset, DatasetPool, SourceClass};
use crate::error::{Error, Result};
use crate::hierarchy::{ConceptHierarchy, Feedback, LeafProbability, NodeId};
use crate::metrics::normalized_entropy;
use crate::oracle::{ConfidenceVector, Oracle};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttackConfig {
    /// Entropy threshold λ.
    pub lambda: f64,
    pub batch_size: usize,
    /// Multiplier `s` in `δ(j) = s·j/|C|`.
    pub delta_scale: f64,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            lambda: 0.83,
            batch_size: 200,
            delta_scale: 1.0,
            max_epochs: 100,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "lambda must lie in (0, 1), got {}",
                self.lambda
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        if !(self.delta_scale > 0.0 && self.delta_scale.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "delta scale must be positive, got {}",
                self.delta_scale
            )));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidArgument("max epochs must be at least 1".into()));
        }
        Ok(())
    }
}

/// `s·j/|C|`.
pub fn delta(level: usize, hierarchy_size: usize, scale: f64) -> f64 {
    scale * level as f64 / hierarchy_size as f64
}

/// Positive iff the answer's normalized entropy is at most `lambda`.
pub fn positive(v: &ConfidenceVector, lambda: f64) -> Feedback {
    if entropy_of(v) <= lambda {
        Feedback::Positive
    } else {
        Feedback::Negative
    }
}

fn entropy_of(v: &ConfidenceVector) -> f64 {
    normalized_entropy(v.probs()).expect("confidence vectors have at least two entries")
}

/// True iff the mean of `entropies` is at most `lambda`.
pub fn converged(entropies: &[f64], lambda: f64) -> bool {
    !entropies.is_empty() && mean(entropies) <= lambda
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub mean_entropy: f64,
    pub positives: usize,
    /// Oracle queries issued by this run so far.
    pub accesses: u64,
    /// Ranked leaf probabilities after this epoch's adjustments.
    pub snapshot: Vec<LeafProbability>,
}

#[derive(Clone, Debug)]
pub struct AttackResult {
    pub converged: bool,
    pub epochs_used: usize,
    pub total_accesses: u64,
    /// Ranked leaf probabilities before the first epoch.
    pub initial: Vec<LeafProbability>,
    pub trace: Vec<EpochRecord>,
    pub hierarchy: ConceptHierarchy,
}

impl AttackResult {
    pub fn final_snapshot(&self) -> &[LeafProbability] {
        self.trace.last().map_or(&self.initial, |r| &r.snapshot)
    }

    /// CSV with `epoch,mean_entropy,positives,accesses`.
    pub fn write_trace(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["epoch", "mean_entropy", "positives", "accesses"])
            .map_err(csv_error)?;
        for r in &self.trace {
            out.write_record([
                r.epoch.to_string(),
                format!("{:?}", r.mean_entropy),
                r.positives.to_string(),
                r.accesses.to_string(),
            ])
            .map_err(csv_error)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Writes `leaf_probs_epochNN.csv` for the initial state (epoch 0) and
    /// every recorded epoch.
    pub fn write_leaf_probabilities(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let snapshots =
            std::iter::once((0, self.initial.as_slice())).chain(self.trace.iter().map(|r| (r.epoch, r.snapshot.as_slice())));
        for (epoch, snapshot) in snapshots {
            let file = std::fs::File::create(dir.join(format!("leaf_probs_epoch{epoch:02}.csv")))?;
            write_snapshot(snapshot, file)?;
        }
        Ok(())
    }
}

/// CSV with `rank,leaf,dataset,class,global`.
pub fn write_snapshot(snapshot: &[LeafProbability], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["rank", "leaf", "dataset", "class", "global"])
        .map_err(csv_error)?;
    for (rank, l) in snapshot.iter().enumerate() {
        out.write_record([
            (rank + 1).to_string(),
            l.leaf.to_string(),
            l.concept.dataset.to_string(),
            l.concept.class.to_string(),
            format!("{:?}", l.global),
        ])
        .map_err(csv_error)?;
    }
    out.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidArgument(format!("{other:?}")),
    }
}

fn leaf_samples<'a>(
    hierarchy: &ConceptHierarchy,
    pool: &'a DatasetPool,
    leaf: NodeId,
) -> Result<&'a ClassSamples> {
    let concept = hierarchy
        .node(leaf)
        .concept()
        .ok_or(Error::EmptyLeaf { leaf })?;
    pool.class(concept.dataset, concept.class)
        .filter(|c| !c.is_empty())
        .ok_or(Error::EmptyLeaf { leaf })
}

/// Runs the attack until the batch mean entropy reaches `lambda` or
/// `max_epochs` pass. Oracle queries within an epoch run in parallel; the
/// probability updates are applied afterwards in draw order, so a run is
/// fully determined by the seed.
pub fn run_adi(
    oracle: &dyn Oracle,
    mut hierarchy: ConceptHierarchy,
    pool: &DatasetPool,
    config: &AttackConfig,
) -> Result<AttackResult> {
    config.validate()?;
    if oracle.input_dim() != pool.dim() {
        return Err(Error::DimensionMismatch {
            expected: oracle.input_dim(),
            actual: pool.dim(),
        });
    }
    let size = hierarchy.node_count();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let initial = hierarchy.snapshot();
    let mut trace = Vec::new();
    let mut accesses = 0u64;
    let mut done = false;

    for epoch in 1..=config.max_epochs {
        let mut draws = Vec::with_capacity(config.batch_size);
        for _ in 0..config.batch_size {
            let leaf = hierarchy.random_walk(&mut rng);
            let class = leaf_samples(&hierarchy, pool, leaf)?;
            let row = rng.random_range(0..class.len());
            draws.push((leaf, class.sample(row)));
        }

        let answers: Vec<Result<ConfidenceVector>> =
            draws.par_iter().map(|(_, x)| oracle.classify(x)).collect();
        accesses += draws.len() as u64;
        oracle.stats().mark_epoch();

        let mut entropies = Vec::with_capacity(draws.len());
        let mut positives = 0;
        for (sample, ((leaf, _), answer)) in draws.iter().zip(answers).enumerate() {
            let v = answer.map_err(|e| Error::OracleFailure {
                epoch,
                sample,
                source: Box::new(e),
            })?;
            let h = entropy_of(&v);
            let feedback = if h <= config.lambda {
                positives += 1;
                Feedback::Positive
            } else {
                Feedback::Negative
            };
            entropies.push(h);
            hierarchy.adjust(*leaf, feedback, |j| delta(j, size, config.delta_scale));
        }

        let mean_entropy = mean(&entropies);
        trace.push(EpochRecord {
            epoch,
            mean_entropy,
            positives,
            accesses,
            snapshot: hierarchy.snapshot(),
        });
        if converged(&entropies, config.lambda) {
            done = true;
            break;
        }
    }

    Ok(AttackResult {
        converged: done,
        epochs_used: trace.len(),
        total_accesses: accesses,
        initial,
        trace,
        hierarchy,
    })
}

/// Draws `n` records leaf-first by global probability, then uniformly
/// within the leaf's class. Output classes are keyed by leaf id and carry
/// the pool coordinates of their source; leaves never drawn are absent.
pub fn extract_dataset(
    hierarchy: &ConceptHierarchy,
    pool: &DatasetPool,
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    extract_from_snapshot(&hierarchy.snapshot(), pool, n, seed)
}

/// [`extract_dataset`] over a recorded snapshot.
pub fn extract_from_snapshot(
    snapshot: &[LeafProbability],
    pool: &DatasetPool,
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("extraction needs at least one sample".into()));
    }
    let total: f64 = snapshot.iter().map(|l| l.global).sum();
    if snapshot.is_empty() || !(total > 0.0) {
        return Err(Error::InvalidArgument("snapshot carries no probability mass".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: std::collections::BTreeMap<usize, Vec<f64>> = Default::default();
    for _ in 0..n {
        let mut u = rng.random::<f64>() * total;
        let mut choice = snapshot.len() - 1;
        for (i, l) in snapshot.iter().enumerate() {
            u -= l.global;
            if u < 0.0 {
                choice = i;
                break;
            }
        }
        let l = &snapshot[choice];
        let class = pool
            .class(l.concept.dataset, l.concept.class)
            .filter(|c| !c.is_empty())
            .ok_or(Error::EmptyLeaf { leaf: l.leaf })?;
        let row = rng.random_range(0..class.len());
        picked.entry(choice).or_default().extend_from_slice(class.sample(row));
    }
    let classes = picked
        .into_iter()
        .map(|(i, data)| {
            let l = &snapshot[i];
            let source = pool
                .class(l.concept.dataset, l.concept.class)
                .and_then(|c| c.source())
                .unwrap_or(SourceClass {
                    dataset: l.concept.dataset,
                    class: l.concept.class,
                });
            Ok(ClassSamples::new(l.leaf as u32, pool.dim(), data)?.with_source(source))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut classes = classes;
    classes.sort_by_key(|c| c.id());
    Dataset::new("extracted", pool.dim(), classes)
}

/// Reads a snapshot written by [`write_snapshot`].
pub fn read_snapshot(r: impl std::io::Read) -> Result<Vec<LeafProbability>> {
    let mut rows = Vec::new();
    for (i, record) in csv::Reader::from_reader(r).records().enumerate() {
        let record = record.map_err(csv_error)?;
        let field = |k: usize| -> Result<&str> {
            record.get(k).ok_or_else(|| Error::MalformedFile {
                offset: i as u64 + 1,
                reason: format!("missing column {k}"),
            })
        };
        let bad = |what: &str| Error::MalformedFile {
            offset: i as u64 + 1,
            reason: format!("bad {what}"),
        };
        rows.push(LeafProbability {
            leaf: field(1)?.parse().map_err(|_| bad("leaf"))?,
            concept: crate::hierarchy::LeafConcept {
                dataset: field(2)?.parse().map_err(|_| bad("dataset"))?,
                class: field(3)?.parse().map_err(|_| bad("class"))?,
            },
            global: field(4)?.parse().map_err(|_| bad("probability"))?,
        });
    }
    Ok(rows)
}
