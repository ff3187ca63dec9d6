//! The experiment pipeline: pool synthesis, target mixing, oracle fitting,
//! the attack, and the downstream metrics.

use std::collections::HashSet;

use adi_core::attack::{extract_from_snapshot, run_adi, AttackResult};
use adi_core::datapool::{
    build_mixed_target, synth_pool, Dataset, DatasetPool, MixSpec, MixedTarget, RmtKey,
};
use adi_core::hierarchy::{ConceptHierarchy, LeafConcept, LeafProbability};
use adi_core::inversion::{evaluate_reconstructions, invert_all, InitMode, InversionScore};
use adi_core::metrics::{access_cost_model, leaf_recovery, otdd, AccessCost, Recovery};
use adi_core::oracle::{fit_centroid, train_softmax, LocalOracle, Oracle, TargetModel};
use anyhow::{Context, Result};
use rayon::prelude::*;

use crate::config::{ExperimentConfig, OracleKind};

/// The attacker's pool and the hidden target built from it.
pub struct Prepared {
    pub mix: MixedTarget,
    pub train: Dataset,
    pub test: Dataset,
}

impl Prepared {
    pub fn pool(&self) -> &DatasetPool {
        &self.mix.pool
    }

    /// Pool coordinates of the target classes that are still in the pool.
    pub fn target_leaves(&self) -> HashSet<LeafConcept> {
        target_leaves(&self.mix.pool, &self.mix.target)
    }
}

pub fn target_leaves(pool: &DatasetPool, target: &Dataset) -> HashSet<LeafConcept> {
    target
        .classes()
        .iter()
        .filter_map(|c| c.source())
        .filter_map(|s| pool.locate(s))
        .map(|(dataset, class)| LeafConcept { dataset, class })
        .collect()
}

pub fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    let pool = synth_pool(&config.pool_params()).context("pool synthesis")?;
    let mix = build_mixed_target(
        &pool,
        &MixSpec {
            counts: config.mix_counts(),
            seed: config.mix.seed,
            keep_in_pool: config.mix.keep_in_pool,
        },
    )
    .context("target mixing")?;
    let (train, test) = mix
        .target
        .split(config.mix.train_fraction, config.mix.seed)
        .context("train/test split")?;
    Ok(Prepared { mix, train, test })
}

/// Fits the configured oracle on `train`.
pub fn fit_oracle(config: &ExperimentConfig, train: &Dataset) -> Result<TargetModel> {
    let model = match config.oracle.kind {
        OracleKind::NearestCentroid => fit_centroid(train, config.oracle.contrast)?,
        OracleKind::SoftmaxLinear => train_softmax(train, &config.train_config())?,
    };
    Ok(model)
}

pub fn attack(config: &ExperimentConfig, oracle: &dyn Oracle, pool: &DatasetPool) -> Result<AttackResult> {
    let hierarchy = ConceptHierarchy::build_from_pool(pool)?;
    Ok(run_adi(oracle, hierarchy, pool, &config.attack_config())?)
}

pub fn recovery(config: &ExperimentConfig, snapshot: &[LeafProbability], targets: &HashSet<LeafConcept>) -> Recovery {
    leaf_recovery(snapshot, targets, config.metrics.top_k)
}

/// Epochs at which the OTDD series is sampled: 0, every `otdd_every`, and
/// the last one.
pub fn otdd_epochs(config: &ExperimentConfig, epochs_used: usize) -> Vec<usize> {
    let mut epochs: Vec<usize> = (0..=epochs_used).step_by(config.metrics.otdd_every).collect();
    if epochs.last() != Some(&epochs_used) {
        epochs.push(epochs_used);
    }
    epochs
}

/// OTDD between the target and data extracted from each snapshot.
pub fn otdd_series(
    config: &ExperimentConfig,
    snapshots: &[(usize, &[LeafProbability])],
    pool: &DatasetPool,
    target: &Dataset,
) -> Result<Vec<(usize, f64)>> {
    let otdd_config = config.otdd_config();
    snapshots
        .par_iter()
        .map(|(epoch, snapshot)| {
            let extracted = extract_from_snapshot(snapshot, pool, config.metrics.extract_size, config.metrics.seed)?;
            Ok((*epoch, otdd(&extracted, target, &otdd_config)?))
        })
        .collect()
}

/// OTDD between the target and a uniform random sample of the pool.
pub fn baseline_otdd(config: &ExperimentConfig, pool: &DatasetPool, target: &Dataset) -> Result<f64> {
    let sample = pool.uniform_sample(config.metrics.extract_size, config.metrics.seed)?;
    Ok(otdd(&sample, target, &config.otdd_config())?)
}

pub fn access_cost(config: &ExperimentConfig, pool: &DatasetPool, result: &AttackResult) -> Result<AccessCost> {
    Ok(access_cost_model(
        pool.total_samples() as u64,
        config.metrics.gdi_epochs,
        config.attack.batch_size as u64,
        result.epochs_used as u64,
    )?)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InversionComparison {
    pub auxiliary: InversionScore,
    pub random: InversionScore,
}

/// Inverts every class twice, from auxiliary means and from random vectors.
pub fn compare_inversion(
    config: &ExperimentConfig,
    oracle: &dyn Oracle,
    auxiliary: &Dataset,
) -> Result<InversionComparison> {
    let aux_recs = invert_all(oracle, Some(auxiliary), &config.inversion_config(InitMode::AuxiliaryMean))?;
    let random_recs = invert_all(oracle, None, &config.inversion_config(InitMode::Random))?;
    Ok(InversionComparison {
        auxiliary: evaluate_reconstructions(oracle, &aux_recs)?,
        random: evaluate_reconstructions(oracle, &random_recs)?,
    })
}

pub struct MitigationOutcome {
    pub recovery: Recovery,
    pub converged: bool,
    pub epochs_used: usize,
}

/// Attacks an oracle trained on block-encoded target features with the
/// unencoded pool.
pub fn mitigation_trial(config: &ExperimentConfig, prepared: &Prepared, blocks: usize, seed: u64) -> Result<MitigationOutcome> {
    let key = RmtKey::generate(prepared.train.dim(), blocks, seed)?;
    let encoded = key.encode_dataset(&prepared.train)?;
    let oracle = LocalOracle::new(fit_oracle(config, &encoded)?);
    let result = attack(config, &oracle, prepared.pool())?;
    Ok(MitigationOutcome {
        recovery: recovery(config, result.final_snapshot(), &prepared.target_leaves()),
        converged: result.converged,
        epochs_used: result.epochs_used,
    })
}
