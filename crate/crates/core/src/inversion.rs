//! Model inversion by gradient ascent on a class's log-confidence.
//!
//! Used to score auxiliary data: starting the ascent from the mean of the
//! auxiliary samples the model assigns to a class, instead of from a random
//! vector, should give reconstructions the model recognizes more often.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::datapool::Dataset;
use crate::error::{Error, Result};
use crate::oracle::Oracle;

const MAX_HALVINGS: usize = 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitMode {
    /// Standard normal vector.
    Random,
    /// Mean of the auxiliary samples the model assigns to the class, or of
    /// all auxiliary samples when none is assigned to it.
    AuxiliaryMean,
}

impl InitMode {
    pub fn name(self) -> &'static str {
        match self {
            InitMode::Random => "random",
            InitMode::AuxiliaryMean => "auxiliary-mean",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InversionConfig {
    pub step: f64,
    pub iterations: usize,
    pub init: InitMode,
    pub seed: u64,
    /// The ascent stops once the class confidence reaches this value.
    pub target_confidence: f64,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            step: 0.1,
            iterations: 500,
            init: InitMode::Random,
            seed: 0,
            target_confidence: 0.99,
        }
    }
}

impl InversionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::InvalidArgument(format!("step must be positive, got {}", self.step)));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("iterations must be at least 1".into()));
        }
        if !(self.target_confidence > 0.0 && self.target_confidence <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "target confidence must lie in (0, 1], got {}",
                self.target_confidence
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    pub class: usize,
    pub x: Vec<f64>,
    pub confidence: Vec<f64>,
    /// Accepted ascent steps.
    pub steps: usize,
    /// `log p_k` at the start and after every accepted step.
    pub objective: Vec<f64>,
}

/// Gradient ascent on `log p_k` from `init`, stopping once `p_k` reaches
/// the target confidence. A step that lowers the objective is halved until
/// it does not, up to 30 times; if none is found the ascent stops.
pub fn invert_class(
    oracle: &dyn Oracle,
    class: usize,
    init: Vec<f64>,
    config: &InversionConfig,
) -> Result<Reconstruction> {
    config.validate()?;
    let mut x = init;
    let mut probs = oracle.classify(&x)?.into_vec();
    let mut value = probs[class].ln();
    let mut objective = vec![value];
    for _ in 0..config.iterations {
        if probs[class] >= config.target_confidence {
            break;
        }
        let grad = oracle.gradient(&x, class)?;
        if grad.iter().all(|g| g.abs() < 1e-300) {
            break;
        }
        let mut step = config.step;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let candidate: Vec<f64> = x.iter().zip(&grad).map(|(xi, gi)| xi + step * gi).collect();
            let p = oracle.classify(&candidate)?.into_vec();
            let v = p[class].ln();
            if v >= value {
                accepted = Some((candidate, p, v));
                break;
            }
            step *= 0.5;
        }
        let Some((candidate, p, v)) = accepted else {
            break;
        };
        let stalled = candidate == x;
        x = candidate;
        probs = p;
        value = v;
        objective.push(value);
        if stalled {
            break;
        }
    }
    Ok(Reconstruction {
        class,
        steps: objective.len() - 1,
        x,
        confidence: probs,
        objective,
    })
}

/// Starting points for every class under `mode`. Auxiliary samples are
/// assigned to classes by querying the oracle.
pub fn initial_points(
    oracle: &dyn Oracle,
    auxiliary: Option<&Dataset>,
    mode: InitMode,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let d = oracle.input_dim();
    let m = oracle.num_classes();
    match mode {
        InitMode::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok((0..m)
                .map(|_| (0..d).map(|_| StandardNormal.sample(&mut rng)).collect())
                .collect())
        }
        InitMode::AuxiliaryMean => {
            let aux = auxiliary.ok_or_else(|| {
                Error::InvalidArgument("auxiliary-mean init needs auxiliary data".into())
            })?;
            if aux.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: aux.dim(),
                });
            }
            if aux.is_empty() {
                return Err(Error::EmptyPool);
            }
            let rows: Vec<&[f64]> = aux.labeled_rows().map(|(_, x)| x).collect();
            let labels = rows
                .par_iter()
                .map(|x| oracle.classify(x).map(|v| v.argmax()))
                .collect::<Result<Vec<usize>>>()?;
            let mut sums = vec![vec![0.0; d]; m];
            let mut counts = vec![0usize; m];
            for (x, &k) in rows.iter().zip(&labels) {
                counts[k] += 1;
                sums[k].iter_mut().zip(*x).for_each(|(s, v)| *s += v);
            }
            let overall = aux.mean();
            Ok(sums
                .into_iter()
                .zip(counts)
                .map(|(s, n)| {
                    if n == 0 {
                        overall.clone()
                    } else {
                        s.into_iter().map(|v| v / n as f64).collect()
                    }
                })
                .collect())
        }
    }
}

/// One reconstruction per class, computed in parallel.
pub fn invert_all(
    oracle: &dyn Oracle,
    auxiliary: Option<&Dataset>,
    config: &InversionConfig,
) -> Result<Vec<Reconstruction>> {
    config.validate()?;
    let inits = initial_points(oracle, auxiliary, config.init, config.seed)?;
    inits
        .into_par_iter()
        .enumerate()
        .map(|(k, init)| invert_class(oracle, k, init, config))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InversionScore {
    /// Fraction whose argmax is the intended class.
    pub accuracy: f64,
    /// Fraction whose intended class has confidence above one half.
    pub confident: f64,
}

pub fn evaluate_reconstructions(
    oracle: &dyn Oracle,
    reconstructions: &[Reconstruction],
) -> Result<InversionScore> {
    if reconstructions.is_empty() {
        return Ok(InversionScore {
            accuracy: 0.0,
            confident: 0.0,
        });
    }
    let mut hits = 0;
    let mut confident = 0;
    for r in reconstructions {
        let v = oracle.classify(&r.x)?;
        if v.argmax() == r.class {
            hits += 1;
        }
        if v.probs()[r.class] > 0.5 {
            confident += 1;
        }
    }
    let n = reconstructions.len() as f64;
    Ok(InversionScore {
        accuracy: hits as f64 / n,
        confident: confident as f64 / n,
    })
}
