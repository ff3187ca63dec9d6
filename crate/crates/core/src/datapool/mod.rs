//! Labeled feature-vector datasets: the attacker's pool, the simulated
//! private target, and the transformations applied to them.

pub(crate) mod io;
mod mix;
mod rmt;
mod synth;

pub use io::{import_csv, load_dataset, load_pool, read_dataset, read_pool, save_dataset, save_pool, write_dataset, write_pool};
pub use mix::{build_mixed_target, MixSpec, MixedTarget, MIX_TABLE};
pub use rmt::{rmt_encode, RmtKey};
pub use synth::{synth_pool, PoolParams};

use std::collections::HashSet;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Where a class originally came from: dataset index and class id in the
/// pool it was synthesized into or ingested from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SourceClass {
    pub dataset: usize,
    pub class: u32,
}

/// Samples of one class, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassSamples {
    id: u32,
    source: Option<SourceClass>,
    dim: usize,
    data: Vec<f64>,
}

impl ClassSamples {
    pub fn new(id: u32, dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("feature dimension must be positive".into()));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: data.len() % dim,
            });
        }
        Ok(Self {
            id,
            source: None,
            dim,
            data,
        })
    }

    pub fn from_rows<'a>(id: u32, dim: usize, rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut data = Vec::new();
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(id, dim, data)
    }

    pub fn with_source(mut self, source: SourceClass) -> Self {
        self.source = Some(source);
        self
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn source(&self) -> Option<SourceClass> {
        self.source
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim];
        for row in self.rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        let n = self.len().max(1) as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }
}

/// A named collection of labeled classes sharing one feature dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    name: String,
    dim: usize,
    classes: Vec<ClassSamples>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, dim: usize, classes: Vec<ClassSamples>) -> Result<Self> {
        let name = name.into();
        let mut seen = HashSet::new();
        for class in &classes {
            if class.dim != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: class.dim,
                });
            }
            if class.is_empty() {
                return Err(Error::EmptyClass {
                    dataset: name,
                    class: class.id,
                });
            }
            if !seen.insert(class.id) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate class id {} in dataset `{name}`",
                    class.id
                )));
            }
        }
        Ok(Self { name, dim, classes })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> &[ClassSamples] {
        &self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Total number of samples over all classes.
    pub fn len(&self) -> usize {
        self.classes.iter().map(ClassSamples::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn class_index(&self, id: u32) -> Option<usize> {
        self.classes.iter().position(|c| c.id == id)
    }

    pub fn class_by_id(&self, id: u32) -> Option<&ClassSamples> {
        self.classes.iter().find(|c| c.id == id)
    }

    /// `(class index, features)` for every sample, class by class.
    pub fn labeled_rows(&self) -> impl Iterator<Item = (usize, &[f64])> + '_ {
        self.classes
            .iter()
            .enumerate()
            .flat_map(|(k, c)| c.rows().map(move |row| (k, row)))
    }

    /// Mean over all samples.
    pub fn mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim];
        let mut n = 0usize;
        for (_, row) in self.labeled_rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
            n += 1;
        }
        mean.iter_mut().for_each(|m| *m /= n.max(1) as f64);
        mean
    }

    /// Applies `f` to every feature vector, keeping labels and provenance.
    pub fn map_features<F>(&self, name: impl Into<String>, out_dim: usize, mut f: F) -> Result<Dataset>
    where
        F: FnMut(&[f64]) -> Vec<f64>,
    {
        let mut classes = Vec::with_capacity(self.classes.len());
        for class in &self.classes {
            let mut data = Vec::with_capacity(class.len() * out_dim);
            for row in class.rows() {
                let mapped = f(row);
                if mapped.len() != out_dim {
                    return Err(Error::DimensionMismatch {
                        expected: out_dim,
                        actual: mapped.len(),
                    });
                }
                data.extend(mapped);
            }
            let mut out = ClassSamples::new(class.id, out_dim, data)?;
            out.source = class.source;
            classes.push(out);
        }
        Dataset::new(name, out_dim, classes)
    }

    /// Stratified random split. Every class keeps at least one sample on each
    /// side, so classes need two or more samples.
    pub fn split(&self, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "train fraction must be in (0, 1), got {train_fraction}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut train = Vec::with_capacity(self.classes.len());
        let mut test = Vec::with_capacity(self.classes.len());
        for class in &self.classes {
            let n = class.len();
            if n < 2 {
                return Err(Error::InvalidArgument(format!(
                    "class {} has {n} sample(s); splitting needs at least 2",
                    class.id
                )));
            }
            let n_train = ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1);
            let perm = index::sample(&mut rng, n, n);
            let (tr, te): (Vec<usize>, Vec<usize>) = {
                let all: Vec<usize> = perm.into_iter().collect();
                (all[..n_train].to_vec(), all[n_train..].to_vec())
            };
            let pick = |idx: &[usize]| {
                let mut sorted = idx.to_vec();
                sorted.sort_unstable();
                ClassSamples::from_rows(class.id, self.dim, sorted.iter().map(|&i| class.sample(i)))
                    .map(|c| ClassSamples { source: class.source, ..c })
            };
            train.push(pick(&tr)?);
            test.push(pick(&te)?);
        }
        Ok((
            Dataset::new(format!("{}-train", self.name), self.dim, train)?,
            Dataset::new(format!("{}-test", self.name), self.dim, test)?,
        ))
    }

    /// Up to `max_points` labeled samples drawn uniformly without replacement.
    /// The choice depends only on the dataset size and `seed`.
    pub fn subsample(&self, max_points: usize, seed: u64) -> Vec<(usize, &[f64])> {
        let all: Vec<(usize, &[f64])> = self.labeled_rows().collect();
        if all.len() <= max_points {
            return all;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = index::sample(&mut rng, all.len(), max_points).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(|i| all[i]).collect()
    }
}

/// The attacker's collection of datasets.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetPool {
    datasets: Vec<Dataset>,
}

impl DatasetPool {
    pub fn new(datasets: Vec<Dataset>) -> Result<Self> {
        let first = datasets.first().ok_or(Error::EmptyPool)?;
        let dim = first.dim;
        let mut names = HashSet::new();
        for ds in &datasets {
            if ds.dim != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: ds.dim,
                });
            }
            if !names.insert(ds.name.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate dataset name `{}`", ds.name)));
            }
        }
        Ok(Self { datasets })
    }

    pub fn datasets(&self) -> &[Dataset] {
        &self.datasets
    }

    pub fn dim(&self) -> usize {
        self.datasets[0].dim
    }

    pub fn total_samples(&self) -> usize {
        self.datasets.iter().map(Dataset::len).sum()
    }

    pub fn total_classes(&self) -> usize {
        self.datasets.iter().map(Dataset::num_classes).sum()
    }

    pub fn class(&self, dataset: usize, class: u32) -> Option<&ClassSamples> {
        self.datasets.get(dataset)?.class_by_id(class)
    }

    /// Finds the `(dataset index, class id)` whose provenance is `source`.
    pub fn locate(&self, source: SourceClass) -> Option<(usize, u32)> {
        self.datasets.iter().enumerate().find_map(|(i, ds)| {
            ds.classes
                .iter()
                .find(|c| c.source == Some(source))
                .map(|c| (i, c.id))
        })
    }

    /// Samples drawn uniformly over all records in the pool, labeled by leaf
    /// order (dataset-major). Used as the non-adaptive baseline.
    pub fn uniform_sample(&self, n: usize, seed: u64) -> Result<Dataset> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let total = self.total_samples();
        let mut offsets = Vec::new();
        let mut acc = 0usize;
        for (d, ds) in self.datasets.iter().enumerate() {
            for c in ds.classes() {
                offsets.push((acc, d, c));
                acc += c.len();
            }
        }
        let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); offsets.len()];
        for _ in 0..n {
            let r = rng.random_range(0..total);
            let slot = offsets.partition_point(|(start, _, _)| *start <= r) - 1;
            buckets[slot].push(r - offsets[slot].0);
        }
        let mut classes = Vec::new();
        for (slot, rows) in buckets.iter().enumerate() {
            if rows.is_empty() {
                continue;
            }
            let (_, d, c) = offsets[slot];
            let samples = ClassSamples::from_rows(slot as u32, self.dim(), rows.iter().map(|&i| c.sample(i)))?;
            let source = c.source.unwrap_or(SourceClass { dataset: d, class: c.id });
            classes.push(samples.with_source(source));
        }
        Dataset::new("uniform-pool-sample", self.dim(), classes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Dataset {
        let a = ClassSamples::new(0, 2, vec![0.0, 0.0, 1.0, 1.0, 2.0, 2.0]).unwrap();
        let b = ClassSamples::new(7, 2, vec![5.0, 5.0, 6.0, 6.0]).unwrap();
        Dataset::new("toy", 2, vec![a, b]).unwrap()
    }

    #[test]
    fn rejects_empty_class_and_duplicates() {
        let empty = ClassSamples::new(0, 2, vec![]).unwrap();
        assert!(matches!(
            Dataset::new("x", 2, vec![empty]),
            Err(Error::EmptyClass { .. })
        ));
        let a = ClassSamples::new(1, 1, vec![1.0]).unwrap();
        assert!(Dataset::new("x", 1, vec![a.clone(), a]).is_err());
    }

    #[test]
    fn split_keeps_every_class_on_both_sides() {
        let ds = toy();
        let (train, test) = ds.split(0.8, 3).unwrap();
        assert_eq!(train.num_classes(), 2);
        assert_eq!(test.num_classes(), 2);
        assert_eq!(train.len() + test.len(), ds.len());
        assert_eq!(train.classes()[1].id(), 7);
    }

    #[test]
    fn pool_rejects_mixed_dims() {
        let a = toy();
        let b = Dataset::new("other", 3, vec![ClassSamples::new(0, 3, vec![0.0; 3]).unwrap()]).unwrap();
        assert!(matches!(
            DatasetPool::new(vec![a, b]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(DatasetPool::new(vec![]), Err(Error::EmptyPool)));
    }

    #[test]
    fn subsample_is_bounded_and_deterministic() {
        let ds = toy();
        assert_eq!(ds.subsample(10, 1).len(), 5);
        let a = ds.subsample(3, 9);
        let b = ds.subsample(3, 9);
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
    }
}
