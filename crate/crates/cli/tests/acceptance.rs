//! End-to-end acceptance checks. Runs as a plain binary so every criterion
//! prints its verdict whether or not output capture is on.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use adi_cli::config::ExperimentConfig;
use adi_cli::experiment::{self, Prepared};
use adi_core::attack::{delta, extract_from_snapshot, AttackResult};
use adi_core::hierarchy::{ConceptHierarchy, Feedback};
use adi_core::metrics::{access_cost_model, exact_ot_uniform, normalized_entropy, sinkhorn, SinkhornConfig};
use adi_core::oracle::{LocalOracle, Oracle, TargetModel};
use adi_service::{serve, RemoteOracle, ServiceConfig};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

type Verdict = Result<String, String>;

const SEEDS: u64 = 10;

fn shipped_config() -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/exp1.toml");
    ExperimentConfig::load(&path).expect("shipped config loads")
}

/// The shipped experiment with the mixture row, mix seed and attack seed
/// varied per seed.
fn seeded_config(seed: u64) -> ExperimentConfig {
    let mut c = shipped_config();
    c.mix.row = (seed as usize % 5) + 1;
    c.mix.seed = seed + 100;
    c.attack.seed = seed + 200;
    c
}

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(limit: Duration, elapsed: Duration, detail: String) -> Verdict {
    if elapsed > limit {
        Err(format!("{detail}; took {:.2}s, limit {}s", elapsed.as_secs_f64(), limit.as_secs()))
    } else {
        Ok(detail)
    }
}

fn entropy_criterion() -> Verdict {
    let start = Instant::now();
    let uniform = normalized_entropy(&[0.25; 4]).map_err(|e| e.to_string())?;
    let one_hot = normalized_entropy(&[0.0, 1.0, 0.0]).map_err(|e| e.to_string())?;
    let skewed = normalized_entropy(&[0.5, 0.25, 0.25]).map_err(|e| e.to_string())?;
    let values_ok = (uniform - 1.0).abs() < 1e-12 && one_hot.abs() < 1e-12 && (skewed - 0.94639).abs() < 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let m = rng.random_range(2..=20);
        let raw: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
        let total: f64 = raw.iter().sum();
        let mut v: Vec<f64> = raw.iter().map(|x| x / total).collect();
        let h = normalized_entropy(&v).map_err(|e| e.to_string())?;
        v.shuffle(&mut rng);
        let hp = normalized_entropy(&v).map_err(|e| e.to_string())?;
        worst = worst.max((h - hp).abs());
    }
    let detail = format!("uniform {uniform}, one-hot {one_hot}, (0.5,0.25,0.25) {skewed:.6}, permutation drift {worst:.1e}");
    check(values_ok && worst < 1e-12, detail.clone())?;
    within(Duration::from_secs(1), start.elapsed(), detail)
}

fn conservation_criterion() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let shape: Vec<usize> = (0..rng.random_range(2..=8)).map(|_| rng.random_range(1..=12)).collect();
    let mut h = ConceptHierarchy::with_shape(&shape).map_err(|e| e.to_string())?;
    let leaves: Vec<usize> = h.leaves().map(|n| n.id()).collect();
    let inner: Vec<usize> = h.nodes().iter().filter(|n| n.parent().is_some()).map(|n| n.id()).collect();
    let size = h.node_count();
    for _ in 0..10_000 {
        if rng.random_bool(0.8) {
            let leaf = leaves[rng.random_range(0..leaves.len())];
            let feedback = if rng.random_bool(0.5) { Feedback::Positive } else { Feedback::Negative };
            let scale = [0.1, 1.0, 10.0][rng.random_range(0..3)];
            h.adjust(leaf, feedback, |level| delta(level, size, scale));
        } else {
            h.rebalance(inner[rng.random_range(0..inner.len())]);
        }
    }
    let group = h.max_group_error();
    let globals: f64 = h.leaf_globals().iter().map(|(_, p)| p).sum();
    let detail = format!("shape {shape:?}: max group error {group:.1e}, leaf total off by {:.1e}", (globals - 1.0).abs());
    check(group <= 1e-9 && (globals - 1.0).abs() <= 1e-9, detail.clone())?;
    within(Duration::from_secs(5), start.elapsed(), detail)
}

struct Shipped {
    config: ExperimentConfig,
    prepared: Prepared,
    model: TargetModel,
    oracle: LocalOracle,
    result: AttackResult,
}

fn run_shipped() -> Shipped {
    let config = shipped_config();
    let prepared = experiment::prepare(&config).expect("prepare");
    let model = experiment::fit_oracle(&config, &prepared.train).expect("fit");
    let oracle = LocalOracle::new(model.clone());
    let result = experiment::attack(&config, &oracle, prepared.pool()).expect("attack");
    Shipped {
        config,
        prepared,
        model,
        oracle,
        result,
    }
}

fn convergence_criterion(s: &Shipped, elapsed: Duration) -> Verdict {
    let lambda = s.config.attack.lambda;
    let first = s.result.trace[0].mean_entropy;
    let last = s.result.trace.last().unwrap().mean_entropy;
    let detail = format!(
        "converged {} in {} epochs, first mean entropy {first:.4}, final {last:.4}, lambda {lambda}",
        s.result.converged, s.result.epochs_used
    );
    check(
        s.result.converged && s.result.epochs_used <= 100 && first > lambda && last <= lambda,
        detail.clone(),
    )?;
    within(Duration::from_secs(60), elapsed, detail)
}

fn access_criterion(s: &Shipped) -> Verdict {
    let b = s.config.attack.batch_size as u64;
    let e = s.result.epochs_used as u64;
    let log = s.oracle.stats().epoch_log();
    let counted = s.oracle.stats().access_count();
    let arithmetic = counted == b * e
        && s.result.total_accesses == b * e
        && log.len() as u64 == e
        && log.iter().all(|&n| n == b)
        && s.result.trace.iter().all(|r| r.accesses == b * r.epoch as u64);
    let desk = experiment::access_cost(&s.config, s.prepared.pool(), &s.result).map_err(|e| e.to_string())?;
    let full = access_cost_model(240_000, 50, 1000, 40).map_err(|e| e.to_string())?;
    check(
        arithmetic && desk.ratio >= 20.0 && full.ratio == 300.0,
        format!(
            "b*e = {b}*{e} = {}, oracle counted {counted}; desk ratio {}/{} = {:.1}; full-scale ratio {}",
            b * e,
            desk.gdi,
            desk.adi,
            desk.ratio,
            full.ratio
        ),
    )
}

fn gradient_criterion() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    let h = 1e-5;
    for pair in 0..100 {
        let d = rng.random_range(2..=16);
        let m = rng.random_range(2..=10);
        let params: Vec<f64> = (0..m * d).map(|_| rng.random_range(-2.0f64..2.0)).collect();
        let model = if pair % 2 == 0 {
            let bias = (0..m).map(|_| rng.random_range(-1.0f64..1.0)).collect();
            TargetModel::softmax_linear(d, params, bias)
        } else {
            TargetModel::nearest_centroid(d, params, rng.random_range(0.5f64..5.0))
        }
        .map_err(|e| e.to_string())?;
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0f64..2.0)).collect();
        let k = rng.random_range(0..m);
        let analytic = model.gradient(&x, k).map_err(|e| e.to_string())?;
        let log_p = |x: &[f64]| model.probabilities(x).map(|p| p[k].ln());
        for j in 0..d {
            let mut up = x.clone();
            let mut down = x.clone();
            up[j] += h;
            down[j] -= h;
            let numeric = (log_p(&up).unwrap() - log_p(&down).unwrap()) / (2.0 * h);
            let scale = analytic[j].abs().max(numeric.abs());
            // Components this small are all rounding noise in the difference quotient.
            if scale >= 1e-6 {
                worst = worst.max((analytic[j] - numeric).abs() / scale);
            }
        }
    }
    check(worst < 1e-4, format!("max relative error {worst:.2e} over 100 pairs"))
}

fn transport_criterion(s: &Shipped) -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let model_path = dir.path().join("model.adim");
    s.model.save(&model_path).map_err(|e| e.to_string())?;
    let log_path = dir.path().join("access.csv");
    let mut service = ServiceConfig::new("127.0.0.1:0", &model_path);
    service.access_log = Some(log_path.clone());
    let handle = serve(&service).map_err(|e| e.to_string())?;
    let remote = RemoteOracle::connect(&handle.endpoint()).map_err(|e| e.to_string())?;
    let result = experiment::attack(&s.config, &remote, s.prepared.pool()).map_err(|e| e.to_string())?;
    handle.shutdown();
    let logged = std::fs::read_to_string(&log_path).map_err(|e| e.to_string())?.lines().count() as u64;
    let client = remote.stats().access_count();
    let same_trace = result.trace == s.result.trace && result.initial == s.result.initial;
    check(
        same_trace && logged == client,
        format!(
            "traces identical: {same_trace} ({} epochs); server logged {logged}, client counted {client}",
            result.trace.len()
        ),
    )
}

/// Per-seed outcomes of the varied shipped experiment.
struct SeedRun {
    seed: u64,
    recall: f64,
    otdd: Option<(f64, f64, f64)>,
    inversion: (f64, f64),
}

fn seed_run(seed: u64) -> anyhow::Result<SeedRun> {
    let c = seeded_config(seed);
    let p = experiment::prepare(&c)?;
    let oracle = LocalOracle::new(experiment::fit_oracle(&c, &p.train)?);
    let r = experiment::attack(&c, &oracle, p.pool())?;
    let recall = experiment::recovery(&c, r.final_snapshot(), &p.target_leaves()).recall;
    let otdd = if r.converged {
        let snaps = [(0, &r.initial[..]), (r.epochs_used, r.final_snapshot())];
        let series = experiment::otdd_series(&c, &snaps, p.pool(), &p.train)?;
        let baseline = experiment::baseline_otdd(&c, p.pool(), &p.train)?;
        Some((series[0].1, series[1].1, baseline))
    } else {
        None
    };
    let extracted = extract_from_snapshot(r.final_snapshot(), p.pool(), c.metrics.extract_size, c.metrics.seed)?;
    let inv = experiment::compare_inversion(&c, &oracle, &extracted)?;
    Ok(SeedRun {
        seed,
        recall,
        otdd,
        inversion: (inv.auxiliary.confident, inv.random.confident),
    })
}

fn recovery_criterion(runs: &[SeedRun], elapsed: Duration) -> Verdict {
    let recalls: Vec<String> = runs.iter().map(|r| format!("{:.1}", r.recall)).collect();
    let good = runs.iter().filter(|r| r.recall >= 0.8).count();
    let detail = format!("recall >= 0.8 for {good}/10 seeds [{}]", recalls.join(" "));
    check(good >= 8, detail.clone())?;
    within(Duration::from_secs(600), elapsed, detail)
}

fn otdd_criterion(runs: &[SeedRun]) -> Verdict {
    let mut failures = Vec::new();
    let mut converged = 0;
    for r in runs {
        if let Some((initial, last, baseline)) = r.otdd {
            converged += 1;
            if !(last < initial && last < baseline) {
                failures.push(format!("seed {}: {last:.2} vs epoch 0 {initial:.2}, baseline {baseline:.2}", r.seed));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let config = SinkhornConfig {
        anneal_to: Some(1e-3),
        // Small final epsilon needs more sweeps to meet the marginal tolerance.
        max_iterations: 50_000,
        ..SinkhornConfig::default()
    };
    let mut worst: f64 = 0.0;
    for n in 2..=8 {
        for _ in 0..10 {
            let xs: Vec<[f64; 3]> = (0..2 * n).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
            let cost = DMatrix::from_fn(n, n, |i, j| {
                (0..3).map(|k| (xs[i][k] - xs[n + j][k]).powi(2)).sum::<f64>()
            });
            let exact = exact_ot_uniform(&cost).map_err(|e| e.to_string())?;
            let u = vec![1.0 / n as f64; n];
            let plan = sinkhorn(&cost, &u, &u, &config).map_err(|e| e.to_string())?;
            worst = worst.max((plan.cost - exact).abs() / exact);
        }
    }
    let mut detail = format!(
        "extract beats epoch 0 and baseline on {}/{converged} converged seeds; sinkhorn vs exact worst {:.3}%",
        converged - failures.len(),
        100.0 * worst
    );
    if !failures.is_empty() {
        detail.push_str(&format!(" [{}]", failures.join("; ")));
    }
    check(converged > 0 && failures.is_empty() && worst < 0.02, detail)
}

/// One-sided sign test: P(at least `wins` successes out of `n` fair coins).
fn sign_test(wins: u64, n: u64) -> f64 {
    let choose = |n: u64, k: u64| (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64);
    (wins..=n).map(|k| choose(n, k)).sum::<f64>() / 2f64.powi(n as i32)
}

fn inversion_criterion(runs: &[SeedRun], elapsed: Duration) -> Verdict {
    let wins = runs.iter().filter(|r| r.inversion.0 > r.inversion.1).count() as u64;
    let losses = runs.iter().filter(|r| r.inversion.0 < r.inversion.1).count() as u64;
    let p = if wins + losses == 0 { 1.0 } else { sign_test(wins, wins + losses) };
    let pairs: Vec<String> = runs.iter().map(|r| format!("{:.1}/{:.1}", r.inversion.0, r.inversion.1)).collect();
    let detail = format!("auxiliary vs random {wins} wins {losses} losses, p = {p:.4} [{}]", pairs.join(" "));
    check(p < 0.1, detail.clone())?;
    within(Duration::from_secs(300), elapsed, detail)
}

fn mitigation_criterion() -> Verdict {
    let outcomes: Vec<(f64, bool)> = (0..SEEDS)
        .into_par_iter()
        .map(|seed| {
            let c = seeded_config(seed);
            let blocks = c.mitigation.as_ref().map_or(4, |m| m.blocks);
            let p = experiment::prepare(&c)?;
            let o = experiment::mitigation_trial(&c, &p, blocks, seed)?;
            Ok((o.recovery.recall, o.converged || o.epochs_used < c.attack.max_epochs))
        })
        .collect::<anyhow::Result<_>>()
        .map_err(|e| e.to_string())?;
    let held = outcomes.iter().filter(|(recall, stopped)| *recall < 0.3 && !stopped).count();
    let detail: Vec<String> = outcomes
        .iter()
        .map(|(recall, stopped)| format!("{recall:.1}{}", if *stopped { "c" } else { "" }))
        .collect();
    check(
        held >= 8,
        format!("recall < 0.3 without convergence for {held}/10 seeds [{}]", detail.join(" ")),
    )
}

fn timed<T>(f: impl FnOnce() -> T) -> (Duration, T) {
    let start = Instant::now();
    let out = f();
    (start.elapsed(), out)
}

fn main() {
    // Test filters are ignored; the suite always runs whole.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut failed = 0;
    let mut report = |n: usize, name: &str, took: Duration, verdict: Verdict| {
        let secs = took.as_secs_f64();
        match verdict {
            Ok(detail) => println!("criterion {n:>2} {name}: PASS ({secs:.2}s) {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n:>2} {name}: FAIL ({secs:.2}s) {detail}");
            }
        }
    };

    let (took, verdict) = timed(entropy_criterion);
    report(1, "entropy", took, verdict);
    let (took, verdict) = timed(conservation_criterion);
    report(2, "probability conservation", took, verdict);

    let t = Instant::now();
    let shipped = run_shipped();
    let elapsed = t.elapsed();
    report(3, "convergence", elapsed, convergence_criterion(&shipped, elapsed));

    let t = Instant::now();
    let runs: anyhow::Result<Vec<SeedRun>> = (0..SEEDS).into_par_iter().map(seed_run).collect();
    let runs = runs.expect("seeded runs");
    let elapsed = t.elapsed();
    report(4, "class recovery", elapsed, recovery_criterion(&runs, elapsed));
    let (took, verdict) = timed(|| otdd_criterion(&runs));
    report(5, "otdd trend", took, verdict);
    let (took, verdict) = timed(|| access_criterion(&shipped));
    report(6, "access cost", took, verdict);
    // The seeded runs above include the inversions, so they count here too.
    report(7, "inversion", elapsed, inversion_criterion(&runs, elapsed));
    let (took, verdict) = timed(mitigation_criterion);
    report(8, "mitigation", took, verdict);
    let (took, verdict) = timed(gradient_criterion);
    report(9, "gradient", took, verdict);
    let (took, verdict) = timed(|| transport_criterion(&shipped));
    report(10, "transport", took, verdict);

    println!("{} of 10 criteria passed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
