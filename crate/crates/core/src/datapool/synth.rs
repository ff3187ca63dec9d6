use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{ClassSamples, Dataset, DatasetPool, SourceClass};
use crate::error::{Error, Result};

const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

/// Parameters of a synthetic pool of isotropic unit-variance Gaussian blobs.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolParams {
    pub datasets: usize,
    pub classes_per_dataset: usize,
    pub dim: usize,
    pub samples_per_class: usize,
    /// Minimum centroid distance in units of the blob standard deviation.
    /// Centroid coordinates are drawn from `N(0, separation²)`.
    pub separation: f64,
    pub seed: u64,
}

impl Default for PoolParams {
    fn default() -> Self {
        Self {
            datasets: 7,
            classes_per_dataset: 10,
            dim: 16,
            samples_per_class: 100,
            separation: 4.0,
            seed: 1,
        }
    }
}

/// Synthesizes a pool of `datasets × classes_per_dataset` Gaussian blobs.
///
/// Centroids are placed by rejection so that every pair is at least
/// `separation` apart; each centroid gets up to 10000 attempts.
pub fn synth_pool(params: &PoolParams) -> Result<DatasetPool> {
    let PoolParams {
        datasets,
        classes_per_dataset,
        dim,
        samples_per_class,
        separation,
        seed,
    } = *params;
    if datasets == 0 || classes_per_dataset == 0 || dim == 0 || samples_per_class == 0 {
        return Err(Error::InvalidArgument("pool counts must all be at least 1".into()));
    }
    if !(separation > 0.0 && separation.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "separation must be positive, got {separation}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = datasets * classes_per_dataset;
    let min_sq = separation * separation;
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(total);
    while centroids.len() < total {
        let mut placed = false;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let candidate: Vec<f64> = (0..dim)
                .map(|_| separation * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let clear = centroids
                .iter()
                .all(|c| squared_distance(c, &candidate) >= min_sq);
            if clear {
                centroids.push(candidate);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::PackingFailure {
                placed: centroids.len(),
                separation,
                attempts: MAX_PLACEMENT_ATTEMPTS,
            });
        }
    }

    let mut out = Vec::with_capacity(datasets);
    for d in 0..datasets {
        let mut classes = Vec::with_capacity(classes_per_dataset);
        for k in 0..classes_per_dataset {
            let centroid = &centroids[d * classes_per_dataset + k];
            let mut data = Vec::with_capacity(samples_per_class * dim);
            for _ in 0..samples_per_class {
                data.extend(
                    centroid
                        .iter()
                        .map(|c| c + rng.sample::<f64, _>(StandardNormal)),
                );
            }
            let class = ClassSamples::new(k as u32, dim, data)?.with_source(SourceClass {
                dataset: d,
                class: k as u32,
            });
            classes.push(class);
        }
        out.push(Dataset::new(format!("synth-{d}"), dim, classes)?);
    }
    DatasetPool::new(out)
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_shape() {
        let pool = synth_pool(&PoolParams::default()).unwrap();
        assert_eq!(pool.datasets().len(), 7);
        assert_eq!(pool.total_classes(), 70);
        assert_eq!(pool.total_samples(), 7000);
        assert_eq!(pool.dim(), 16);
    }

    #[test]
    fn deterministic_per_seed() {
        let p = PoolParams {
            dim: 4,
            samples_per_class: 5,
            ..PoolParams::default()
        };
        assert_eq!(synth_pool(&p).unwrap(), synth_pool(&p).unwrap());
        let q = PoolParams { seed: 2, ..p.clone() };
        assert_ne!(synth_pool(&p).unwrap(), synth_pool(&q).unwrap());
    }

    #[test]
    fn centroid_separation_by_brute_force() {
        let p = PoolParams {
            dim: 3,
            samples_per_class: 400,
            separation: 4.0,
            ..PoolParams::default()
        };
        let pool = synth_pool(&p).unwrap();
        // Sample means sit within a few hundredths of the true centroid.
        let means: Vec<Vec<f64>> = pool
            .datasets()
            .iter()
            .flat_map(|d| d.classes().iter().map(|c| c.mean()))
            .collect();
        let mut min = f64::INFINITY;
        for i in 0..means.len() {
            for j in i + 1..means.len() {
                min = min.min(squared_distance(&means[i], &means[j]).sqrt());
            }
        }
        assert!(min >= 4.0 - 0.3, "min centroid distance {min}");
    }

    #[test]
    fn two_one_dimensional_blobs_are_separable() {
        let p = PoolParams {
            datasets: 1,
            classes_per_dataset: 2,
            dim: 1,
            samples_per_class: 10,
            separation: 6.0,
            seed: 0,
        };
        let pool = synth_pool(&p).unwrap();
        let ds = &pool.datasets()[0];
        let (a, b) = (&ds.classes()[0], &ds.classes()[1]);
        let (amax, amin) = extent(a);
        let (bmax, bmin) = extent(b);
        assert!(amax < bmin || bmax < amin, "blobs overlap");
    }

    fn extent(c: &ClassSamples) -> (f64, f64) {
        let v: Vec<f64> = c.data().to_vec();
        (
            v.iter().cloned().fold(f64::MIN, f64::max),
            v.iter().cloned().fold(f64::MAX, f64::min),
        )
    }

    #[test]
    fn packing_failure_when_crowded() {
        let p = PoolParams {
            datasets: 7,
            classes_per_dataset: 10,
            dim: 1,
            samples_per_class: 1,
            separation: 6.0,
            seed: 0,
        };
        assert!(matches!(synth_pool(&p), Err(Error::PackingFailure { .. })));
    }
}
