//! Subcommands. Each reads its inputs from the run directory, writes its
//! outputs there, merges its results into `summary.txt` and records itself
//! in `manifest.txt`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use adi_core::attack::{extract_from_snapshot, read_snapshot, AttackResult};
use adi_core::datapool::{load_pool, save_pool, Dataset, DatasetPool};
use adi_core::hierarchy::{ConceptHierarchy, LeafProbability};
use adi_core::oracle::{LocalOracle, Oracle, TargetModel};
use adi_service::RemoteOracle;
use anyhow::{bail, Context, Result};

use crate::config::ExperimentConfig;
use crate::experiment::{self, target_leaves};

pub const POOL_FILE: &str = "pool.adip";
pub const TARGET_FILE: &str = "target.adip";
pub const TEST_FILE: &str = "target_test.adip";
pub const MODEL_FILE: &str = "model.adim";
pub const HIERARCHY_FILE: &str = "hierarchy.txt";
pub const TRACE_FILE: &str = "trace.csv";
pub const OTDD_FILE: &str = "otdd.csv";
pub const INVERSION_FILE: &str = "inversion.csv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const CONFIG_COPY: &str = "config.toml";

/// Ordered `key=value` lines.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KeyValues(pub BTreeMap<String, String>);

impl KeyValues {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Ok(Self::default());
        }
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .with_context(|| format!("{}:{}: expected key=value", path.display(), i + 1))?;
            map.insert(k.to_string(), v.to_string());
        }
        Ok(Self(map))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        for (k, v) in &self.0 {
            writeln!(out, "{k}={v}")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.0.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.get(key).with_context(|| format!("summary has no `{key}`"))?;
        raw.parse()
            .map_err(|_| anyhow::anyhow!("summary value `{key}={raw}` is malformed"))
    }
}

/// Exact float repr, so reruns produce byte-identical files.
fn f(x: f64) -> String {
    format!("{x:?}")
}

pub struct Run {
    pub config: ExperimentConfig,
    pub dir: PathBuf,
}

impl Run {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        let dir = config.output.dir.clone();
        std::fs::create_dir_all(&dir).with_context(|| format!("output.dir: cannot create {}", dir.display()))?;
        std::fs::write(dir.join(CONFIG_COPY), config.to_toml())
            .with_context(|| format!("output.dir: {} is not writable", dir.display()))?;
        Ok(Self { config, dir })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn require(&self, name: &str, producer: &str) -> Result<PathBuf> {
        let path = self.path(name);
        if !path.exists() {
            bail!("missing artifact {}: run `adi {producer}` first", path.display());
        }
        Ok(path)
    }

    fn update_summary(&self, f: impl FnOnce(&mut KeyValues)) -> Result<()> {
        let path = self.path(SUMMARY_FILE);
        let mut summary = KeyValues::load(&path)?;
        f(&mut summary);
        summary.save(&path)
    }

    pub fn summary(&self) -> Result<KeyValues> {
        KeyValues::load(&self.path(SUMMARY_FILE))
    }

    fn record(&self, command: &str, inputs: &[&str], outputs: &[&str], seeds: &[(&str, u64)]) -> Result<()> {
        let path = self.path(MANIFEST_FILE);
        let mut manifest = KeyValues::load(&path)?;
        manifest.set("tool", concat!("adi ", env!("CARGO_PKG_VERSION")));
        manifest.set(&format!("{command}.inputs"), inputs.join(";"));
        manifest.set(&format!("{command}.outputs"), outputs.join(";"));
        for (name, seed) in seeds {
            manifest.set(&format!("{command}.seed.{name}"), seed);
        }
        let ms = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis());
        manifest.set(&format!("{command}.timestamp_ms"), ms);
        manifest.save(&path)
    }

    fn load_single(&self, name: &str, producer: &str) -> Result<Dataset> {
        let path = self.require(name, producer)?;
        let pool = load_pool(&path).with_context(|| format!("cannot load {}", path.display()))?;
        Ok(pool.datasets()[0].clone())
    }

    pub fn load_pool(&self) -> Result<DatasetPool> {
        let path = self.require(POOL_FILE, "synth")?;
        load_pool(&path).with_context(|| format!("cannot load {}", path.display()))
    }

    pub fn load_target(&self) -> Result<Dataset> {
        self.load_single(TARGET_FILE, "synth")
    }

    pub fn load_model(&self) -> Result<TargetModel> {
        let path = self.require(MODEL_FILE, "train")?;
        TargetModel::load(&path).with_context(|| format!("cannot load {}", path.display()))
    }

    /// Snapshots written by the attack, by epoch.
    pub fn load_snapshots(&self) -> Result<Vec<(usize, Vec<LeafProbability>)>> {
        self.require(TRACE_FILE, "attack")?;
        let epochs: usize = self.summary()?.parse("epochs")?;
        (0..=epochs)
            .map(|e| {
                let path = self.path(&format!("leaf_probs_epoch{e:02}.csv"));
                let file = File::open(&path).with_context(|| format!("missing artifact {}", path.display()))?;
                Ok((e, read_snapshot(file)?))
            })
            .collect()
    }
}

/// Synthesizes the pool, mixes the target and splits it.
pub fn synth(run: &Run) -> Result<()> {
    let c = &run.config;
    let prepared = experiment::prepare(c)?;
    save_pool(run.path(POOL_FILE), prepared.pool())?;
    save_pool(run.path(TARGET_FILE), &DatasetPool::new(vec![prepared.train.clone()])?)?;
    save_pool(run.path(TEST_FILE), &DatasetPool::new(vec![prepared.test.clone()])?)?;
    run.update_summary(|s| {
        s.set("pool_datasets", prepared.pool().datasets().len());
        s.set("pool_classes", prepared.pool().total_classes());
        s.set("pool_samples", prepared.pool().total_samples());
        s.set("target_classes", prepared.mix.target.num_classes());
        s.set("target_classes_in_pool", prepared.target_leaves().len());
        s.set("target_train_samples", prepared.train.len());
        s.set("target_test_samples", prepared.test.len());
    })?;
    run.record(
        "synth",
        &[],
        &[POOL_FILE, TARGET_FILE, TEST_FILE],
        &[("pool", c.pool.seed), ("mix", c.mix.seed)],
    )
}

/// Fits the target model on the training split.
pub fn train(run: &Run) -> Result<()> {
    let c = &run.config;
    let train = run.load_target()?;
    let test = run.load_single(TEST_FILE, "synth")?;
    let model = experiment::fit_oracle(c, &train)?;
    let test_accuracy = model.accuracy(&test)?;
    model.save(run.path(MODEL_FILE))?;
    run.update_summary(|s| {
        s.set("oracle_kind", model.kind().name());
        if let Some(t) = model.temperature() {
            s.set("oracle_temperature", f(t));
        }
        s.set("train_accuracy", f(model.info().accuracy));
        s.set("test_accuracy", f(test_accuracy));
    })?;
    run.record("train", &[TARGET_FILE, TEST_FILE], &[MODEL_FILE], &[("oracle", c.oracle.seed)])
}

/// Runs the attack against the local model, or against a service.
pub fn attack(run: &Run, remote: Option<&str>) -> Result<AttackResult> {
    let c = &run.config;
    let pool = run.load_pool()?;
    let target = run.load_target()?;
    let local;
    let remote_oracle;
    let oracle: &dyn Oracle = match remote {
        Some(endpoint) => {
            remote_oracle = RemoteOracle::connect(endpoint).with_context(|| format!("cannot reach {endpoint}"))?;
            &remote_oracle
        }
        None => {
            local = LocalOracle::new(run.load_model()?);
            &local
        }
    };
    let result = experiment::attack(c, oracle, &pool)?;
    write_attack_outputs(run, &result)?;
    let rec = experiment::recovery(c, result.final_snapshot(), &target_leaves(&pool, &target));
    let first = result.trace.first().map_or(f64::NAN, |r| r.mean_entropy);
    let last = result.trace.last().map_or(f64::NAN, |r| r.mean_entropy);
    run.update_summary(|s| {
        s.set("converged", result.converged);
        s.set("epochs", result.epochs_used);
        s.set("accesses", result.total_accesses);
        s.set("oracle_accesses", oracle.stats().access_count());
        s.set("batch_size", c.attack.batch_size);
        s.set("lambda", f(c.attack.lambda));
        s.set("delta_scale", f(c.attack.delta_scale));
        s.set("first_mean_entropy", f(first));
        s.set("final_mean_entropy", f(last));
        s.set("top_k", c.metrics.top_k);
        s.set("top_k_precision", f(rec.precision));
        s.set("top_k_recall", f(rec.recall));
    })?;
    let mut inputs = vec![POOL_FILE, TARGET_FILE];
    inputs.push(if remote.is_some() { "remote" } else { MODEL_FILE });
    run.record("attack", &inputs, &[TRACE_FILE, HIERARCHY_FILE], &[("attack", c.attack.seed)])?;
    Ok(result)
}

fn write_attack_outputs(run: &Run, result: &AttackResult) -> Result<()> {
    // Stale snapshots from a longer earlier run would confuse `eval`.
    for entry in std::fs::read_dir(&run.dir)? {
        let name = entry?.file_name();
        let name = name.to_string_lossy();
        if name.starts_with("leaf_probs_epoch") && name.ends_with(".csv") {
            std::fs::remove_file(run.path(&name))?;
        }
    }
    result.write_trace(File::create(run.path(TRACE_FILE))?)?;
    result.write_leaf_probabilities(&run.dir)?;
    std::fs::write(run.path(HIERARCHY_FILE), result.hierarchy.to_text())?;
    Ok(())
}

/// OTDD of extracted data against the target over the run, plus the
/// uniform-sample baseline.
pub fn eval(run: &Run) -> Result<()> {
    let c = &run.config;
    let pool = run.load_pool()?;
    let target = run.load_target()?;
    let snapshots = run.load_snapshots()?;
    let last = snapshots.len() - 1;
    let wanted = experiment::otdd_epochs(c, last);
    let picked: Vec<(usize, &[LeafProbability])> = snapshots
        .iter()
        .filter(|(e, _)| wanted.contains(e))
        .map(|(e, s)| (*e, s.as_slice()))
        .collect();
    let series = experiment::otdd_series(c, &picked, &pool, &target)?;
    let baseline = experiment::baseline_otdd(c, &pool, &target)?;
    let mut out = BufWriter::new(File::create(run.path(OTDD_FILE))?);
    writeln!(out, "epoch,otdd")?;
    for (e, d) in &series {
        writeln!(out, "{e},{}", f(*d))?;
    }
    out.flush()?;
    run.update_summary(|s| {
        s.set("otdd_initial", f(series[0].1));
        s.set("otdd_final", f(series[series.len() - 1].1));
        s.set("otdd_baseline", f(baseline));
    })?;
    run.record(
        "eval",
        &[POOL_FILE, TARGET_FILE, "leaf_probs_epoch*.csv"],
        &[OTDD_FILE],
        &[("metrics", c.metrics.seed)],
    )
}

/// Model inversion from auxiliary-mean and random starts.
pub fn invert(run: &Run) -> Result<()> {
    let c = &run.config;
    let pool = run.load_pool()?;
    let oracle = LocalOracle::new(run.load_model()?);
    let hierarchy_path = run.require(HIERARCHY_FILE, "attack")?;
    let text = std::fs::read_to_string(&hierarchy_path)?;
    let hierarchy = ConceptHierarchy::from_text(&text, &pool)
        .with_context(|| format!("cannot restore {}", hierarchy_path.display()))?;
    let extracted = extract_from_snapshot(&hierarchy.snapshot(), &pool, c.metrics.extract_size, c.metrics.seed)?;
    let cmp = experiment::compare_inversion(c, &oracle, &extracted)?;
    let mut out = BufWriter::new(File::create(run.path(INVERSION_FILE))?);
    writeln!(out, "init,accuracy,confident")?;
    writeln!(out, "auxiliary-mean,{},{}", f(cmp.auxiliary.accuracy), f(cmp.auxiliary.confident))?;
    writeln!(out, "random,{},{}", f(cmp.random.accuracy), f(cmp.random.confident))?;
    out.flush()?;
    run.update_summary(|s| {
        s.set("inversion_auxiliary_accuracy", f(cmp.auxiliary.accuracy));
        s.set("inversion_auxiliary_confident", f(cmp.auxiliary.confident));
        s.set("inversion_random_accuracy", f(cmp.random.accuracy));
        s.set("inversion_random_confident", f(cmp.random.confident));
    })?;
    run.record(
        "invert",
        &[POOL_FILE, MODEL_FILE, HIERARCHY_FILE],
        &[INVERSION_FILE],
        &[("inversion", c.inversion.seed), ("metrics", c.metrics.seed)],
    )
}

/// Attack against a model trained on encoded features.
pub fn mitigate(run: &Run) -> Result<()> {
    let c = &run.config;
    let Some(m) = &c.mitigation else {
        bail!("mitigation: section missing from config");
    };
    let prepared = experiment::prepare(c)?;
    let outcome = experiment::mitigation_trial(c, &prepared, m.blocks, m.seed)?;
    run.update_summary(|s| {
        s.set("mitigation_converged", outcome.converged);
        s.set("mitigation_epochs", outcome.epochs_used);
        s.set("mitigation_recall", f(outcome.recovery.recall));
    })?;
    run.record("mitigate", &[], &[SUMMARY_FILE], &[("mitigation", m.seed), ("attack", c.attack.seed)])
}

/// GDI-versus-ADI access comparison from a finished run's summary.
pub struct CostReport {
    pub pool_samples: u64,
    pub gdi_epochs: u64,
    pub batch_size: u64,
    pub epochs: u64,
    pub cost: adi_core::metrics::AccessCost,
}

pub fn report(dir: &Path, gdi_epochs: u64) -> Result<CostReport> {
    let path = dir.join(SUMMARY_FILE);
    if !path.exists() {
        bail!("missing artifact {}: run `adi attack` first", path.display());
    }
    let mut summary = KeyValues::load(&path)?;
    let pool_samples: u64 = summary.parse("pool_samples")?;
    let batch_size: u64 = summary.parse("batch_size")?;
    let epochs: u64 = summary.parse("epochs")?;
    let cost = adi_core::metrics::access_cost_model(pool_samples, gdi_epochs, batch_size, epochs)?;
    summary.set("gdi_epochs", gdi_epochs);
    summary.set("gdi_accesses", cost.gdi);
    summary.set("adi_accesses", cost.adi);
    summary.set("access_ratio", f(cost.ratio));
    summary.save(&path)?;
    Ok(CostReport {
        pool_samples,
        gdi_epochs,
        batch_size,
        epochs,
        cost,
    })
}

/// Every stage in order.
pub fn run_all(run: &Run) -> Result<CostReport> {
    synth(run)?;
    train(run)?;
    attack(run, None)?;
    eval(run)?;
    invert(run)?;
    if run.config.mitigation.is_some() {
        mitigate(run)?;
    }
    report(&run.dir, run.config.metrics.gdi_epochs)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum SweepName {
    Lambda,
    Delta,
    Batch,
}

impl SweepName {
    fn key(self) -> &'static str {
        match self {
            Self::Lambda => "lambda",
            Self::Delta => "delta",
            Self::Batch => "batch",
        }
    }

    fn grid(self) -> Vec<f64> {
        match self {
            Self::Lambda => vec![0.77, 0.80, 0.83, 0.86, 0.89],
            Self::Delta => vec![0.1, 1.0, 10.0],
            Self::Batch => vec![50.0, 100.0, 200.0, 400.0],
        }
    }

    fn apply(self, config: &mut ExperimentConfig, value: f64) {
        match self {
            Self::Lambda => config.attack.lambda = value,
            Self::Delta => config.attack.delta_scale = value,
            Self::Batch => config.attack.batch_size = value as usize,
        }
    }
}

/// One attack per grid point, each in its own subdirectory, with a
/// `sweep_<name>.csv` roll-up in the base output directory.
pub fn sweep(config: &ExperimentConfig, name: SweepName) -> Result<PathBuf> {
    use rayon::prelude::*;

    let base = config.output.dir.clone();
    std::fs::create_dir_all(&base)?;
    let rows: Vec<(f64, KeyValues)> = name
        .grid()
        .into_par_iter()
        .map(|value| {
            let mut c = config.clone();
            name.apply(&mut c, value);
            c.output.dir = base.join(format!("sweep-{}", name.key())).join(format!("{value}"));
            c.validate()?;
            let run = Run::new(c)?;
            synth(&run)?;
            train(&run)?;
            attack(&run, None)?;
            eval(&run)?;
            Ok((value, run.summary()?))
        })
        .collect::<Result<_>>()?;
    let path = base.join(format!("sweep_{}.csv", name.key()));
    let mut out = BufWriter::new(File::create(&path)?);
    writeln!(out, "{},converged,epochs,accesses,top_k_recall,otdd_final", name.key())?;
    for (value, s) in &rows {
        let get = |k: &str| s.get(k).unwrap_or("").to_string();
        writeln!(
            out,
            "{value},{},{},{},{},{}",
            get("converged"),
            get("epochs"),
            get("accesses"),
            get("top_k_recall"),
            get("otdd_final")
        )?;
    }
    out.flush()?;
    Ok(path)
}
