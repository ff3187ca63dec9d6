//! Extraction-quality and cost metrics.
//!
//! The dataset distance follows the OTDD construction: each class is
//! summarized as a Gaussian, classes are compared with the 2-Wasserstein
//! (Bures) distance, and datasets are compared with entropic optimal
//! transport over the joint (feature, label) ground cost.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::datapool::Dataset;
use crate::error::{Error, Result};
use crate::hierarchy::{LeafConcept, LeafProbability};
use crate::oracle::median;

/// Shrinkage weight toward the scaled identity.
pub const SHRINKAGE: f64 = 0.1;
/// Absolute diagonal floor added after shrinkage.
pub const COVARIANCE_FLOOR: f64 = 1e-6;

/// `−Σ v log₂ v / log₂ m`, with `0 log 0 = 0`.
pub fn normalized_entropy(v: &[f64]) -> Result<f64> {
    let m = v.len();
    if m < 2 {
        return Err(Error::DegenerateClassCount(m));
    }
    let h: f64 = v
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.log2())
        .sum();
    Ok((h / (m as f64).log2()).clamp(0.0, 1.0))
}

/// Class-conditional Gaussian with a shrunk covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianSummary {
    pub class: u32,
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub count: usize,
}

impl GaussianSummary {
    pub fn from_rows<'a>(class: u32, dim: usize, rows: impl IntoIterator<Item = &'a [f64]>) -> Self {
        let rows: Vec<&[f64]> = rows.into_iter().collect();
        let n = rows.len().max(1) as f64;
        let mut mean = DVector::zeros(dim);
        for r in &rows {
            mean += DVector::from_column_slice(r);
        }
        mean /= n;
        let mut cov = DMatrix::zeros(dim, dim);
        for r in &rows {
            let c = DVector::from_column_slice(r) - &mean;
            cov.ger(1.0 / n, &c, &c, 1.0);
        }
        let target = cov.trace() / dim as f64;
        cov *= 1.0 - SHRINKAGE;
        for i in 0..dim {
            cov[(i, i)] += SHRINKAGE * target + COVARIANCE_FLOOR;
        }
        Self {
            class,
            mean,
            covariance: cov,
            count: rows.len(),
        }
    }

    /// One summary per class, in class order.
    pub fn per_class(dataset: &Dataset) -> Vec<Self> {
        dataset
            .classes()
            .iter()
            .map(|c| Self::from_rows(c.id(), dataset.dim(), c.rows()))
            .collect()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Symmetric PSD square root, clamping negative eigenvalues to zero.
pub fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Squared 2-Wasserstein distance between two Gaussians.
pub fn class_w2(a: &GaussianSummary, b: &GaussianSummary) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    let mean_term = (&a.mean - &b.mean).norm_squared();
    let root_b = sqrt_psd(&b.covariance);
    let mut cross = &root_b * &a.covariance * &root_b;
    cross = (&cross + cross.transpose()) * 0.5;
    let bures = a.covariance.trace() + b.covariance.trace() - 2.0 * sqrt_psd(&cross).trace();
    Ok(mean_term + bures.max(0.0))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SinkhornConfig {
    /// ε as a multiple of the median ground cost.
    pub epsilon_scale: f64,
    /// When set, ε is halved stage by stage from `epsilon_scale` down to
    /// this multiple, warm-starting each stage from the previous potentials.
    pub anneal_to: Option<f64>,
    pub max_iterations: usize,
    /// Bound on the largest violation of any source-marginal entry.
    pub tolerance: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            epsilon_scale: 0.05,
            anneal_to: None,
            max_iterations: 2000,
            tolerance: 1e-6,
        }
    }
}

impl SinkhornConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.into()));
        if !(self.epsilon_scale > 0.0) {
            return bad("epsilon scale must be positive");
        }
        if let Some(end) = self.anneal_to {
            if !(end > 0.0 && end <= self.epsilon_scale) {
                return bad("annealing target must lie in (0, epsilon scale]");
            }
        }
        if self.max_iterations == 0 {
            return bad("max iterations must be at least 1");
        }
        if !(self.tolerance > 0.0) {
            return bad("tolerance must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransportPlan {
    pub coupling: DMatrix<f64>,
    pub source: Vec<f64>,
    pub target: Vec<f64>,
    /// `⟨π, C⟩`, without the entropy term.
    pub cost: f64,
    pub epsilon: f64,
    pub iterations: usize,
}

impl TransportPlan {
    /// Largest absolute deviation of the row and column sums from the marginals.
    pub fn marginal_error(&self) -> f64 {
        let rows = self
            .coupling
            .row_iter()
            .zip(&self.source)
            .map(|(r, a)| (r.sum() - a).abs());
        let cols = self
            .coupling
            .column_iter()
            .zip(&self.target)
            .map(|(c, b)| (c.sum() - b).abs());
        rows.chain(cols).fold(0.0, f64::max)
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64>) -> f64 {
    let values: Vec<f64> = values.collect();
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Entropic OT between the marginals `a` and `b` under `cost`, with
/// log-domain Sinkhorn iterations.
pub fn sinkhorn(
    cost: &DMatrix<f64>,
    a: &[f64],
    b: &[f64],
    config: &SinkhornConfig,
) -> Result<TransportPlan> {
    config.validate()?;
    let (n, m) = cost.shape();
    if a.len() != n || b.len() != m {
        return Err(Error::DimensionMismatch {
            expected: n * m,
            actual: a.len() * b.len(),
        });
    }
    if n == 0 || m == 0 {
        return Err(Error::InvalidArgument("empty transport problem".into()));
    }
    let mut entries: Vec<f64> = cost.iter().copied().collect();
    let mut scale = median(&mut entries);
    if scale <= 0.0 {
        scale = entries.iter().sum::<f64>() / entries.len() as f64;
    }
    if scale <= 0.0 {
        // Every cost is zero: any coupling is optimal.
        let coupling = DMatrix::from_fn(n, m, |i, j| a[i] * b[j]);
        return Ok(TransportPlan {
            coupling,
            source: a.to_vec(),
            target: b.to_vec(),
            cost: 0.0,
            epsilon: 0.0,
            iterations: 0,
        });
    }

    let mut stages = vec![config.epsilon_scale];
    if let Some(end) = config.anneal_to {
        while *stages.last().unwrap() * 0.5 > end {
            let next = stages.last().unwrap() * 0.5;
            stages.push(next);
        }
        if *stages.last().unwrap() > end {
            stages.push(end);
        }
    }

    let log_a: Vec<f64> = a.iter().map(|x| x.ln()).collect();
    let log_b: Vec<f64> = b.iter().map(|x| x.ln()).collect();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut iterations = 0;
    let mut eps = 0.0;
    let last_stage = stages.len() - 1;
    for (stage, &s) in stages.iter().enumerate() {
        eps = s * scale;
        let mut error = f64::INFINITY;
        let mut it = 0;
        while it < config.max_iterations {
            it += 1;
            f = (0..n)
                .into_par_iter()
                .map(|i| eps * log_a[i] - eps * log_sum_exp((0..m).map(|j| (g[j] - cost[(i, j)]) / eps)))
                .collect();
            g = (0..m)
                .into_par_iter()
                .map(|j| eps * log_b[j] - eps * log_sum_exp((0..n).map(|i| (f[i] - cost[(i, j)]) / eps)))
                .collect();
            if it % 10 == 0 || it == config.max_iterations {
                error = row_violation(cost, &f, &g, eps, a);
                if error <= config.tolerance {
                    break;
                }
            }
        }
        iterations += it;
        if stage == last_stage && error > config.tolerance {
            return Err(Error::SinkhornNonConvergence {
                iterations,
                error,
                tolerance: config.tolerance,
            });
        }
    }

    let coupling = DMatrix::from_fn(n, m, |i, j| ((f[i] + g[j] - cost[(i, j)]) / eps).exp());
    let total = coupling.component_mul(cost).sum();
    Ok(TransportPlan {
        coupling,
        source: a.to_vec(),
        target: b.to_vec(),
        cost: total,
        epsilon: eps,
        iterations,
    })
}

fn row_violation(cost: &DMatrix<f64>, f: &[f64], g: &[f64], eps: f64, a: &[f64]) -> f64 {
    (0..f.len())
        .into_par_iter()
        .map(|i| {
            let row: f64 = (0..g.len())
                .map(|j| ((f[i] + g[j] - cost[(i, j)]) / eps).exp())
                .sum();
            (row - a[i]).abs()
        })
        .reduce(|| 0.0, f64::max)
}

/// Exact OT cost between two uniform marginals of equal size, by brute
/// force over permutations; the optimum of such a problem is attained at a
/// permutation matrix. Limited to 10 points.
pub fn exact_ot_uniform(cost: &DMatrix<f64>) -> Result<f64> {
    let (n, m) = cost.shape();
    if n != m || n == 0 || n > 10 {
        return Err(Error::InvalidArgument(format!(
            "exact OT needs a square problem of at most 10 points, got {n}×{m}"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    permute(&mut perm, 0, cost, &mut best);
    Ok(best / n as f64)
}

fn permute(perm: &mut [usize], k: usize, cost: &DMatrix<f64>, best: &mut f64) {
    if k == perm.len() {
        let total: f64 = perm.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum();
        *best = best.min(total);
        return;
    }
    for i in k..perm.len() {
        perm.swap(k, i);
        permute(perm, k + 1, cost, best);
        perm.swap(k, i);
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OtddConfig {
    pub sinkhorn: SinkhornConfig,
    /// Points drawn per dataset for the transport problem.
    pub max_points: usize,
    pub seed: u64,
}

impl Default for OtddConfig {
    fn default() -> Self {
        Self {
            sinkhorn: SinkhornConfig::default(),
            max_points: 500,
            seed: 0,
        }
    }
}

/// Optimal transport dataset distance. Class Gaussians are fitted on the
/// full class data; the transport problem runs on seed-pinned subsamples.
/// The pair is put in a canonical order first, so the result is exactly
/// symmetric.
pub fn otdd(d1: &Dataset, d2: &Dataset, config: &OtddConfig) -> Result<f64> {
    if d1.is_empty() || d2.is_empty() {
        return Err(Error::EmptyPool);
    }
    if d1.dim() != d2.dim() {
        return Err(Error::DimensionMismatch {
            expected: d1.dim(),
            actual: d2.dim(),
        });
    }
    if config.max_points == 0 {
        return Err(Error::InvalidArgument("max points must be at least 1".into()));
    }
    let (d1, d2) = if canonical_order(d1, d2) { (d1, d2) } else { (d2, d1) };

    let s1 = GaussianSummary::per_class(d1);
    let s2 = GaussianSummary::per_class(d2);
    let mut label_cost = DMatrix::zeros(s1.len(), s2.len());
    for (i, a) in s1.iter().enumerate() {
        for (j, b) in s2.iter().enumerate() {
            label_cost[(i, j)] = class_w2(a, b)?;
        }
    }

    let p1 = d1.subsample(config.max_points, config.seed);
    let p2 = d2.subsample(config.max_points, config.seed);
    let cost = DMatrix::from_fn(p1.len(), p2.len(), |i, j| {
        let (y1, x1) = p1[i];
        let (y2, x2) = p2[j];
        let feature: f64 = x1.iter().zip(x2).map(|(a, b)| (a - b).powi(2)).sum();
        feature + label_cost[(y1, y2)]
    });
    let a = vec![1.0 / p1.len() as f64; p1.len()];
    let b = vec![1.0 / p2.len() as f64; p2.len()];
    let plan = sinkhorn(&cost, &a, &b, &config.sinkhorn)?;
    Ok(plan.cost.max(0.0).sqrt())
}

fn canonical_order(a: &Dataset, b: &Dataset) -> bool {
    let key = |d: &Dataset| (d.len(), d.num_classes(), d.dim());
    match key(a).cmp(&key(b)) {
        std::cmp::Ordering::Less => return true,
        std::cmp::Ordering::Greater => return false,
        std::cmp::Ordering::Equal => {}
    }
    for (ca, cb) in a.classes().iter().zip(b.classes()) {
        let ord = ca
            .id()
            .cmp(&cb.id())
            .then(ca.len().cmp(&cb.len()))
            .then_with(|| {
                ca.data()
                    .iter()
                    .zip(cb.data())
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            });
        if ord.is_ne() {
            return ord.is_lt();
        }
    }
    true
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Recovery {
    pub precision: f64,
    pub recall: f64,
    pub hits: usize,
}

/// Precision and recall of the `k` most probable leaves against the target
/// classes. `snapshot` must already be ranked.
pub fn leaf_recovery(snapshot: &[LeafProbability], targets: &HashSet<LeafConcept>, k: usize) -> Recovery {
    let top = &snapshot[..k.min(snapshot.len())];
    let hits = top.iter().filter(|l| targets.contains(&l.concept)).count();
    Recovery {
        precision: if top.is_empty() { 0.0 } else { hits as f64 / top.len() as f64 },
        recall: if targets.is_empty() { 0.0 } else { hits as f64 / targets.len() as f64 },
        hits,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AccessCost {
    pub gdi: u64,
    pub adi: u64,
    pub ratio: f64,
}

/// GDI queries every pool sample each epoch (`N·E`); ADI spends `b` queries
/// per epoch (`b·e`).
pub fn access_cost_model(pool_size: u64, gdi_epochs: u64, batch: u64, adi_epochs: u64) -> Result<AccessCost> {
    if pool_size == 0 || gdi_epochs == 0 || batch == 0 || adi_epochs == 0 {
        return Err(Error::InvalidArgument("access cost inputs must be positive".into()));
    }
    let gdi = pool_size * gdi_epochs;
    let adi = batch * adi_epochs;
    Ok(AccessCost {
        gdi,
        adi,
        ratio: gdi as f64 / adi as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapool::{synth_pool, ClassSamples, PoolParams};
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn entropy_reference_values() {
        for m in 2..20 {
            assert!((normalized_entropy(&vec![1.0 / m as f64; m]).unwrap() - 1.0).abs() < 1e-12);
        }
        assert_eq!(normalized_entropy(&[0.0, 1.0, 0.0]).unwrap(), 0.0);
        let h = normalized_entropy(&[0.5, 0.25, 0.25]).unwrap();
        assert!((h - 1.5 / 3f64.log2()).abs() < 1e-15);
        assert!((h - 0.94639).abs() < 1e-5);
        assert_eq!(normalized_entropy(&[0.5, 0.5, 0.0, 0.0]).unwrap(), 0.5);
        assert!(matches!(normalized_entropy(&[1.0]), Err(Error::DegenerateClassCount(1))));
    }

    fn gaussian_1d(mean: f64, sd: f64) -> GaussianSummary {
        GaussianSummary {
            class: 0,
            mean: DVector::from_element(1, mean),
            covariance: DMatrix::from_element(1, 1, sd * sd),
            count: 1,
        }
    }

    #[test]
    fn w2_closed_forms() {
        let w = class_w2(&gaussian_1d(0.0, 1.0), &gaussian_1d(1.0, 2.0)).unwrap();
        assert!((w - 2.0).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0f64..1.0));
        let cov = &a * a.transpose() + DMatrix::identity(4, 4) * 0.1;
        let g1 = GaussianSummary {
            class: 0,
            mean: DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]),
            covariance: cov.clone(),
            count: 10,
        };
        let mut g2 = g1.clone();
        g2.mean = DVector::from_vec(vec![0.0, 0.0, 1.0, 4.0]);
        assert!(class_w2(&g1, &g1).unwrap().abs() < 1e-8);
        assert!((class_w2(&g1, &g2).unwrap() - 9.0).abs() < 1e-8);

        let b = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0f64..1.0));
        g2.covariance = &b * b.transpose();
        let ab = class_w2(&g1, &g2).unwrap();
        let ba = class_w2(&g2, &g1).unwrap();
        assert!((ab - ba).abs() < 1e-8);
        assert!(matches!(
            class_w2(&g1, &gaussian_1d(0.0, 1.0)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn summary_shrinks_and_floors() {
        let g = GaussianSummary::from_rows(3, 2, [[1.0, 1.0].as_slice()]);
        assert_eq!(g.covariance, DMatrix::identity(2, 2) * COVARIANCE_FLOOR);
        let rows = [[0.0, 0.0], [2.0, 0.0]];
        let g = GaussianSummary::from_rows(0, 2, rows.iter().map(|r| r.as_slice()));
        // Raw variances (1, 0), trace/d = 0.5.
        assert!((g.covariance[(0, 0)] - (0.9 + 0.05 + 1e-6)).abs() < 1e-15);
        assert!((g.covariance[(1, 1)] - (0.05 + 1e-6)).abs() < 1e-15);
        let eig = SymmetricEigen::new(g.covariance.clone());
        assert!(eig.eigenvalues.iter().all(|&l| l >= COVARIANCE_FLOOR));
    }

    fn random_problem(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        let xs: Vec<[f64; 2]> = (0..n).map(|_| [rng.random(), rng.random()]).collect();
        let ys: Vec<[f64; 2]> = (0..n).map(|_| [rng.random(), rng.random()]).collect();
        DMatrix::from_fn(n, n, |i, j| (xs[i][0] - ys[j][0]).powi(2) + (xs[i][1] - ys[j][1]).powi(2))
    }

    #[test]
    fn sinkhorn_matches_exact_ot_on_small_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let config = SinkhornConfig {
            anneal_to: Some(1e-3),
            ..SinkhornConfig::default()
        };
        for n in 2..=8 {
            for _ in 0..5 {
                let cost = random_problem(&mut rng, n);
                let exact = exact_ot_uniform(&cost).unwrap();
                let u = vec![1.0 / n as f64; n];
                let plan = sinkhorn(&cost, &u, &u, &config).unwrap();
                assert!(plan.marginal_error() <= 1e-6);
                assert!(plan.coupling.iter().all(|&p| p >= 0.0));
                let rel = (plan.cost - exact).abs() / exact;
                assert!(rel < 0.02, "n={n}: sinkhorn {} exact {exact}", plan.cost);
            }
        }
    }

    #[test]
    fn exact_oracle_on_hand_instance() {
        // Swapping the pairing costs 0 + 0 instead of 1 + 1.
        let cost = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(exact_ot_uniform(&cost).unwrap(), 0.0);
    }

    #[test]
    fn sinkhorn_reports_non_convergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cost = random_problem(&mut rng, 30);
        let u = vec![1.0 / 30.0; 30];
        let config = SinkhornConfig {
            epsilon_scale: 1e-4,
            max_iterations: 3,
            tolerance: 1e-12,
            anneal_to: None,
        };
        assert!(matches!(
            sinkhorn(&cost, &u, &u, &config),
            Err(Error::SinkhornNonConvergence { iterations: 3, .. })
        ));
    }

    #[test]
    fn single_point_datasets_force_the_plan() {
        let one = |x: Vec<f64>| {
            Dataset::new("p", 2, vec![ClassSamples::new(0, 2, x).unwrap()]).unwrap()
        };
        let a = one(vec![0.0, 0.0]);
        let b = one(vec![3.0, 4.0]);
        // Feature cost 25 plus W2² of equal floored covariances, i.e. 25.
        let d = otdd(&a, &b, &OtddConfig::default()).unwrap();
        assert!((d - 50f64.sqrt()).abs() < 1e-9, "{d}");
    }

    fn scrambled(ds: &Dataset, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows: Vec<&[f64]> = ds.labeled_rows().map(|(_, x)| x).collect();
        rows.shuffle(&mut rng);
        let mut start = 0;
        let classes = ds
            .classes()
            .iter()
            .map(|c| {
                let part = &rows[start..start + c.len()];
                start += c.len();
                ClassSamples::from_rows(c.id(), ds.dim(), part.iter().copied()).unwrap()
            })
            .collect();
        Dataset::new("scrambled", ds.dim(), classes).unwrap()
    }

    #[test]
    fn self_distance_is_small_against_scrambled_labels() {
        let pool = synth_pool(&PoolParams {
            samples_per_class: 10,
            ..PoolParams::default()
        })
        .unwrap();
        let ds = &pool.datasets()[0];
        let config = OtddConfig {
            sinkhorn: SinkhornConfig {
                anneal_to: Some(1e-3),
                ..SinkhornConfig::default()
            },
            ..OtddConfig::default()
        };
        let own = otdd(ds, ds, &config).unwrap();
        let other = otdd(ds, &scrambled(ds, 3), &config).unwrap();
        assert!(own < 0.05 * other, "self {own}, scrambled {other}");
    }

    #[test]
    fn otdd_is_symmetric_and_orders_by_similarity() {
        let pool = synth_pool(&PoolParams {
            samples_per_class: 20,
            ..PoolParams::default()
        })
        .unwrap();
        let [a, b] = [&pool.datasets()[0], &pool.datasets()[1]];
        let config = OtddConfig::default();
        let ab = otdd(a, b, &config).unwrap();
        let ba = otdd(b, a, &config).unwrap();
        assert!((ab - ba).abs() < 1e-6);
        let (near, _) = a.split(0.5, 1).unwrap();
        assert!(otdd(a, &near, &config).unwrap() < ab);
    }

    #[test]
    fn recovery_counts() {
        let concept = |class| LeafConcept { dataset: 0, class };
        let snapshot: Vec<LeafProbability> = (0..70)
            .map(|i| LeafProbability {
                leaf: i as usize,
                concept: concept(i),
                global: 1.0 / 70.0,
            })
            .collect();
        let exact: HashSet<LeafConcept> = (0..10).map(concept).collect();
        let r = leaf_recovery(&snapshot, &exact, 10);
        assert_eq!((r.precision, r.recall), (1.0, 1.0));

        // Random tie order: recall of the top 10 is hypergeometric, mean 10/70.
        let targets: HashSet<LeafConcept> = (30..40).map(concept).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut shuffled = snapshot.clone();
        let trials = 20_000;
        let mut total = 0.0;
        for _ in 0..trials {
            shuffled.shuffle(&mut rng);
            total += leaf_recovery(&shuffled, &targets, 10).recall;
        }
        let mean = total / trials as f64;
        // Hypergeometric sd of recall is about 0.087; standard error 0.0006.
        assert!((mean - 1.0 / 7.0).abs() < 0.003, "{mean}");
    }

    #[test]
    fn access_cost_reference_values() {
        let paper = access_cost_model(240_000, 50, 1000, 40).unwrap();
        assert_eq!((paper.gdi, paper.adi), (12_000_000, 40_000));
        assert_eq!(paper.ratio, 300.0);
        assert_eq!(access_cost_model(1, 1, 200, 100).unwrap().adi, 20_000);
        assert_eq!(access_cost_model(7000, 50, 200, 40).unwrap().ratio, 43.75);
        assert!(access_cost_model(0, 50, 200, 40).is_err());
    }

    proptest! {
        #[test]
        fn entropy_is_bounded_and_permutation_invariant(
            raw in prop::collection::vec(0.0f64..1.0, 2..12),
            seed in any::<u64>(),
        ) {
            let total: f64 = raw.iter().sum();
            prop_assume!(total > 1e-9);
            let v: Vec<f64> = raw.iter().map(|x| x / total).collect();
            let h = normalized_entropy(&v).unwrap();
            prop_assert!((0.0..=1.0).contains(&h));
            let mut p = v.clone();
            p.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert!((normalized_entropy(&p).unwrap() - h).abs() < 1e-12);
            let uniform = vec![1.0 / v.len() as f64; v.len()];
            prop_assert!(normalized_entropy(&uniform).unwrap() >= h - 1e-12);
        }
    }
}
