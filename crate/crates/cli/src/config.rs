//! Experiment configuration, read from TOML.
//!
//! Sections mirror the pipeline stages: `[pool]`, `[mix]`, `[oracle]`,
//! `[attack]`, `[metrics]`, `[inversion]` and `[output]`. Every seed must be
//! given explicitly; other keys fall back to the defaults below.

use std::path::{Path, PathBuf};

use adi_core::attack::AttackConfig;
use adi_core::datapool::{PoolParams, MIX_TABLE};
use adi_core::inversion::{InitMode, InversionConfig};
use adi_core::metrics::{OtddConfig, SinkhornConfig};
use adi_core::oracle::TrainConfig;
use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub pool: PoolSection,
    pub mix: MixSection,
    pub oracle: OracleSection,
    pub attack: AttackSection,
    #[serde(default)]
    pub metrics: MetricsSection,
    pub inversion: InversionSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mitigation: Option<MitigationSection>,
    pub output: OutputSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolSection {
    #[serde(default = "default_datasets")]
    pub datasets: usize,
    #[serde(default = "default_classes")]
    pub classes_per_dataset: usize,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_samples")]
    pub samples_per_class: usize,
    #[serde(default = "default_separation")]
    pub separation: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixSection {
    /// Row of the built-in mixture table, 1 to 5. Ignored when `counts` is set.
    #[serde(default = "default_row")]
    pub row: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts: Option<Vec<usize>>,
    #[serde(default = "default_true")]
    pub keep_in_pool: bool,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleKind {
    NearestCentroid,
    SoftmaxLinear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSection {
    #[serde(default = "default_kind")]
    pub kind: OracleKind,
    /// Temperature is the median squared centroid distance over this value.
    #[serde(default = "default_contrast")]
    pub contrast: f64,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_train_epochs")]
    pub epochs: u32,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSection {
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_one")]
    pub delta_scale: f64,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSection {
    /// Records drawn from the hierarchy for each extracted dataset.
    #[serde(default = "default_extract")]
    pub extract_size: usize,
    #[serde(default = "default_otdd_points")]
    pub otdd_points: usize,
    /// OTDD is computed every this many epochs, plus the first and last.
    #[serde(default = "default_one_usize")]
    pub otdd_every: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon_scale: f64,
    #[serde(default = "default_sinkhorn_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    /// Epochs charged to the GAN-based baseline in the cost comparison.
    #[serde(default = "default_gdi_epochs")]
    pub gdi_epochs: u64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InversionSection {
    #[serde(default = "default_step")]
    pub step: f64,
    #[serde(default = "default_inversion_iterations")]
    pub iterations: usize,
    #[serde(default = "default_target_confidence")]
    pub target_confidence: f64,
    pub seed: u64,
}

/// Block-wise random orthogonal encoding of the target's features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MitigationSection {
    #[serde(default = "default_blocks")]
    pub blocks: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

fn default_datasets() -> usize {
    7
}
fn default_classes() -> usize {
    10
}
fn default_dim() -> usize {
    64
}
fn default_samples() -> usize {
    100
}
fn default_separation() -> f64 {
    4.0
}
fn default_blocks() -> usize {
    4
}
fn default_row() -> usize {
    1
}
fn default_true() -> bool {
    true
}
fn default_train_fraction() -> f64 {
    0.8
}
fn default_kind() -> OracleKind {
    OracleKind::NearestCentroid
}
fn default_contrast() -> f64 {
    4.0
}
fn default_learning_rate() -> f64 {
    0.5
}
fn default_train_epochs() -> u32 {
    300
}
fn default_lambda() -> f64 {
    0.83
}
fn default_batch() -> usize {
    200
}
fn default_one() -> f64 {
    1.0
}
fn default_one_usize() -> usize {
    1
}
fn default_max_epochs() -> usize {
    100
}
fn default_extract() -> usize {
    1000
}
fn default_otdd_points() -> usize {
    500
}
fn default_epsilon() -> f64 {
    0.05
}
fn default_sinkhorn_iterations() -> usize {
    2000
}
fn default_tolerance() -> f64 {
    1e-6
}
fn default_top_k() -> usize {
    10
}
fn default_gdi_epochs() -> u64 {
    50
}
fn default_step() -> f64 {
    0.1
}
fn default_inversion_iterations() -> usize {
    500
}
fn default_target_confidence() -> f64 {
    0.99
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self {
            extract_size: default_extract(),
            otdd_points: default_otdd_points(),
            otdd_every: 1,
            epsilon_scale: default_epsilon(),
            max_iterations: default_sinkhorn_iterations(),
            tolerance: default_tolerance(),
            top_k: default_top_k(),
            gdi_epochs: default_gdi_epochs(),
            seed: 0,
        }
    }
}

fn check(ok: bool, key: &str, msg: impl std::fmt::Display) -> Result<()> {
    if !ok {
        bail!("{key}: {msg}");
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).context("invalid configuration")?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks every bound; errors name the offending key.
    pub fn validate(&self) -> Result<()> {
        let p = &self.pool;
        check(p.datasets >= 1, "pool.datasets", "must be at least 1")?;
        check(p.classes_per_dataset >= 1, "pool.classes_per_dataset", "must be at least 1")?;
        check(p.dim >= 1, "pool.dim", "must be at least 1")?;
        check(p.samples_per_class >= 2, "pool.samples_per_class", "must be at least 2")?;
        check(p.separation > 0.0, "pool.separation", format!("must be positive, got {}", p.separation))?;

        let m = &self.mix;
        match &m.counts {
            Some(c) => check(
                c.len() == p.datasets,
                "mix.counts",
                format!("needs one entry per dataset ({}), got {}", p.datasets, c.len()),
            )?,
            None => {
                check(
                    (1..=MIX_TABLE.len()).contains(&m.row),
                    "mix.row",
                    format!("must lie in 1..={}, got {}", MIX_TABLE.len(), m.row),
                )?;
                check(
                    p.datasets == 7,
                    "mix.row",
                    "table rows need a 7-dataset pool; give mix.counts instead",
                )?;
            }
        }
        check(
            m.train_fraction > 0.0 && m.train_fraction < 1.0,
            "mix.train_fraction",
            format!("must lie in (0, 1), got {}", m.train_fraction),
        )?;

        let o = &self.oracle;
        check(o.contrast > 0.0, "oracle.contrast", format!("must be positive, got {}", o.contrast))?;
        check(o.learning_rate > 0.0, "oracle.learning_rate", format!("must be positive, got {}", o.learning_rate))?;
        check(o.epochs >= 1, "oracle.epochs", "must be at least 1")?;

        let a = &self.attack;
        check(a.lambda > 0.0 && a.lambda < 1.0, "attack.lambda", format!("must lie in (0, 1), got {}", a.lambda))?;
        check(a.batch_size >= 1, "attack.batch_size", "must be at least 1")?;
        check(a.delta_scale > 0.0, "attack.delta_scale", format!("must be positive, got {}", a.delta_scale))?;
        check(a.max_epochs >= 1, "attack.max_epochs", "must be at least 1")?;

        let mt = &self.metrics;
        check(mt.extract_size >= 1, "metrics.extract_size", "must be at least 1")?;
        check(mt.otdd_points >= 1, "metrics.otdd_points", "must be at least 1")?;
        check(mt.otdd_every >= 1, "metrics.otdd_every", "must be at least 1")?;
        check(mt.epsilon_scale > 0.0, "metrics.epsilon_scale", "must be positive")?;
        check(mt.max_iterations >= 1, "metrics.max_iterations", "must be at least 1")?;
        check(mt.tolerance > 0.0, "metrics.tolerance", "must be positive")?;
        check(mt.top_k >= 1, "metrics.top_k", "must be at least 1")?;
        check(mt.gdi_epochs >= 1, "metrics.gdi_epochs", "must be at least 1")?;

        if let Some(mi) = &self.mitigation {
            check(
                mi.blocks >= 1 && p.dim.is_multiple_of(mi.blocks),
                "mitigation.blocks",
                format!("must divide pool.dim ({}), got {}", p.dim, mi.blocks),
            )?;
        }

        let i = &self.inversion;
        check(i.step > 0.0, "inversion.step", format!("must be positive, got {}", i.step))?;
        check(i.iterations >= 1, "inversion.iterations", "must be at least 1")?;
        check(
            i.target_confidence > 0.0 && i.target_confidence <= 1.0,
            "inversion.target_confidence",
            format!("must lie in (0, 1], got {}", i.target_confidence),
        )?;
        Ok(())
    }

    pub fn pool_params(&self) -> PoolParams {
        PoolParams {
            datasets: self.pool.datasets,
            classes_per_dataset: self.pool.classes_per_dataset,
            dim: self.pool.dim,
            samples_per_class: self.pool.samples_per_class,
            separation: self.pool.separation,
            seed: self.pool.seed,
        }
    }

    pub fn mix_counts(&self) -> Vec<usize> {
        self.mix
            .counts
            .clone()
            .unwrap_or_else(|| MIX_TABLE[self.mix.row - 1].to_vec())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.oracle.learning_rate,
            epochs: self.oracle.epochs,
            seed: self.oracle.seed,
        }
    }

    pub fn attack_config(&self) -> AttackConfig {
        AttackConfig {
            lambda: self.attack.lambda,
            batch_size: self.attack.batch_size,
            delta_scale: self.attack.delta_scale,
            max_epochs: self.attack.max_epochs,
            seed: self.attack.seed,
        }
    }

    pub fn otdd_config(&self) -> OtddConfig {
        OtddConfig {
            sinkhorn: SinkhornConfig {
                epsilon_scale: self.metrics.epsilon_scale,
                anneal_to: None,
                max_iterations: self.metrics.max_iterations,
                tolerance: self.metrics.tolerance,
            },
            max_points: self.metrics.otdd_points,
            seed: self.metrics.seed,
        }
    }

    pub fn inversion_config(&self, init: InitMode) -> InversionConfig {
        InversionConfig {
            step: self.inversion.step,
            iterations: self.inversion.iterations,
            init,
            seed: self.inversion.seed,
            target_confidence: self.inversion.target_confidence,
        }
    }
}
