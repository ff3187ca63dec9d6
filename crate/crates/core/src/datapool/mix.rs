use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ClassSamples, Dataset, DatasetPool, SourceClass};
use crate::error::{Error, Result};

/// Per-source class counts of the five mixed targets (ten classes each,
/// drawn from seven source datasets).
pub const MIX_TABLE: [[usize; 7]; 5] = [
    [1, 2, 2, 2, 1, 2, 0],
    [0, 1, 4, 0, 3, 1, 1],
    [1, 1, 2, 1, 0, 3, 2],
    [3, 2, 1, 1, 1, 1, 1],
    [2, 3, 0, 1, 1, 0, 3],
];

/// How many classes to take from each pool dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct MixSpec {
    pub counts: Vec<usize>,
    pub seed: u64,
    /// Leave the selected classes in the pool instead of removing them.
    pub keep_in_pool: bool,
}

impl MixSpec {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Picks `total` classes uniformly from all classes of the pool and
    /// expresses the choice as per-dataset counts.
    pub fn uniform(pool: &DatasetPool, total: usize, seed: u64, keep_in_pool: bool) -> Result<Self> {
        let all = pool.total_classes();
        if total == 0 || total > all {
            return Err(Error::SpecMismatch(format!(
                "cannot pick {total} classes from a pool of {all}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut counts = vec![0; pool.datasets().len()];
        let mut bounds = Vec::with_capacity(counts.len());
        let mut acc = 0;
        for ds in pool.datasets() {
            acc += ds.num_classes();
            bounds.push(acc);
        }
        for flat in index::sample(&mut rng, all, total) {
            let d = bounds.partition_point(|&b| b <= flat);
            counts[d] += 1;
        }
        Ok(Self {
            counts,
            seed,
            keep_in_pool,
        })
    }
}

/// A simulated private target and the pool the attacker is left with.
#[derive(Clone, Debug)]
pub struct MixedTarget {
    /// Selected classes relabeled `0..total`, in source order.
    pub target: Dataset,
    /// The attacker's pool: selected classes removed unless kept.
    pub pool: DatasetPool,
    /// Provenance of target class `k` is `sources[k]`.
    pub sources: Vec<SourceClass>,
}

pub fn build_mixed_target(pool: &DatasetPool, spec: &MixSpec) -> Result<MixedTarget> {
    if spec.counts.len() != pool.datasets().len() {
        return Err(Error::SpecMismatch(format!(
            "{} counts given for {} datasets",
            spec.counts.len(),
            pool.datasets().len()
        )));
    }
    if spec.total() == 0 {
        return Err(Error::SpecMismatch("mix selects no classes".into()));
    }
    for (ds, &count) in pool.datasets().iter().zip(&spec.counts) {
        if count > ds.num_classes() {
            return Err(Error::SpecMismatch(format!(
                "dataset `{}` has {} classes, {count} requested",
                ds.name(),
                ds.num_classes()
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut target_classes = Vec::with_capacity(spec.total());
    let mut sources = Vec::with_capacity(spec.total());
    let mut remaining = Vec::with_capacity(pool.datasets().len());
    for (d, (ds, &count)) in pool.datasets().iter().zip(&spec.counts).enumerate() {
        let mut chosen = index::sample(&mut rng, ds.num_classes(), count).into_vec();
        chosen.sort_unstable();
        for &k in &chosen {
            let class = &ds.classes()[k];
            let source = class.source().unwrap_or(SourceClass {
                dataset: d,
                class: class.id(),
            });
            let label = target_classes.len() as u32;
            let relabeled = ClassSamples::new(label, ds.dim(), class.data().to_vec())?.with_source(source);
            target_classes.push(relabeled);
            sources.push(source);
        }
        if spec.keep_in_pool {
            remaining.push(ds.clone());
        } else {
            let kept: Vec<ClassSamples> = ds
                .classes()
                .iter()
                .enumerate()
                .filter(|(k, _)| !chosen.contains(k))
                .map(|(_, c)| c.clone())
                .collect();
            // A dataset that loses every class leaves the pool entirely.
            if !kept.is_empty() {
                remaining.push(Dataset::new(ds.name(), ds.dim(), kept)?);
            }
        }
    }
    let target = Dataset::new("mixed-target", pool.dim(), target_classes)?;
    Ok(MixedTarget {
        target,
        pool: DatasetPool::new(remaining)?,
        sources,
    })
}
