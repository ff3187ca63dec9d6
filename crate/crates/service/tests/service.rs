use std::path::Path;
use std::time::Duration;

use adi_core::attack::{run_adi, AttackConfig};
use adi_core::datapool::{build_mixed_target, synth_pool, MixSpec, PoolParams, MIX_TABLE};
use adi_core::hierarchy::ConceptHierarchy;
use adi_core::oracle::{fit_centroid, LocalOracle, Oracle, TargetModel};
use adi_core::Error;
use adi_service::{serve, RemoteOracle, ServiceConfig, ServiceError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fixture(dir: &Path) -> (adi_core::datapool::MixedTarget, TargetModel, ServiceConfig) {
    let pool = synth_pool(&PoolParams {
        samples_per_class: 20,
        ..PoolParams::default()
    })
    .unwrap();
    let mix = build_mixed_target(
        &pool,
        &MixSpec {
            counts: MIX_TABLE[1].to_vec(),
            seed: 2,
            keep_in_pool: true,
        },
    )
    .unwrap();
    let model = fit_centroid(&mix.target, 4.0).unwrap();
    let path = dir.join("model.adim");
    model.save(&path).unwrap();
    let mut config = ServiceConfig::new("127.0.0.1:0", &path);
    config.access_log = Some(dir.join("access.csv"));
    (mix, model, config)
}

fn log_lines(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count()
}

#[test]
fn remote_matches_local_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let (_, model, config) = fixture(dir.path());
    let handle = serve(&config).unwrap();
    let remote = RemoteOracle::connect(&handle.endpoint()).unwrap();
    assert_eq!((remote.input_dim(), remote.num_classes()), (16, 10));
    let local = LocalOracle::new(model);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let x: Vec<f64> = (0..16).map(|_| rng.random_range(-20.0f64..20.0)).collect();
        assert_eq!(remote.classify(&x).unwrap(), local.classify(&x).unwrap());
    }
    assert!(matches!(remote.gradient(&[0.0; 16], 0), Err(Error::NonDifferentiable)));
}

#[test]
fn meta_exposes_only_shape() {
    let dir = tempfile::tempdir().unwrap();
    let (_, _, config) = fixture(dir.path());
    let handle = serve(&config).unwrap();
    let body = ureq::get(format!("{}/meta", handle.endpoint()))
        .call()
        .unwrap()
        .body_mut()
        .read_to_string()
        .unwrap();
    assert_eq!(body, "16 10");
    let missing = ureq::get(format!("{}/model", handle.endpoint())).call();
    assert!(matches!(missing, Err(ureq::Error::StatusCode(404))));
}

#[test]
fn wrong_length_payload_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (_, _, config) = fixture(dir.path());
    let handle = serve(&config).unwrap();
    let result = ureq::post(format!("{}/classify", handle.endpoint())).send(&[0u8; 24][..]);
    assert!(matches!(result, Err(ureq::Error::StatusCode(400))));
}

#[test]
fn thousand_requests_thousand_log_entries() {
    let dir = tempfile::tempdir().unwrap();
    let (_, _, config) = fixture(dir.path());
    let handle = serve(&config).unwrap();
    let remote = RemoteOracle::connect_as(&handle.endpoint(), "tester", Duration::from_secs(10)).unwrap();
    for i in 0..1000 {
        remote.classify(&[i as f64; 16]).unwrap();
    }
    assert_eq!(handle.access_count(), 1000);
    assert_eq!(remote.stats().access_count(), 1000);
    handle.shutdown();
    let log = std::fs::read_to_string(config.access_log.as_ref().unwrap()).unwrap();
    assert_eq!(log.lines().count(), 1000);
    let first: Vec<&str> = log.lines().next().unwrap().split(',').collect();
    assert_eq!(first[1..], ["tester", "128"]);
    assert!(first[0].parse::<u64>().is_ok());
}

#[test]
fn remote_attack_reproduces_local_trace() {
    let dir = tempfile::tempdir().unwrap();
    let (mix, model, config) = fixture(dir.path());
    let handle = serve(&config).unwrap();
    let attack = AttackConfig {
        batch_size: 60,
        max_epochs: 6,
        seed: 11,
        ..AttackConfig::default()
    };
    let local = LocalOracle::new(model);
    let h = ConceptHierarchy::build_from_pool(&mix.pool).unwrap();
    let a = run_adi(&local, h.clone(), &mix.pool, &attack).unwrap();
    let remote = RemoteOracle::connect(&handle.endpoint()).unwrap();
    let b = run_adi(&remote, h, &mix.pool, &attack).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(handle.access_count(), remote.stats().access_count());
    assert_eq!(remote.stats().access_count(), b.total_accesses);
    handle.shutdown();
    assert_eq!(log_lines(config.access_log.as_ref().unwrap()) as u64, b.total_accesses);
}

#[test]
fn server_loss_surfaces_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let (mix, _, config) = fixture(dir.path());
    let handle = serve(&config).unwrap();
    let remote = RemoteOracle::connect_as(&handle.endpoint(), "adi", Duration::from_secs(2)).unwrap();
    handle.shutdown();
    let h = ConceptHierarchy::build_from_pool(&mix.pool).unwrap();
    let attack = AttackConfig {
        batch_size: 10,
        ..AttackConfig::default()
    };
    let err = run_adi(&remote, h, &mix.pool, &attack).unwrap_err();
    match err {
        Error::OracleFailure { epoch, sample, source } => {
            assert_eq!((epoch, sample), (1, 0));
            assert!(matches!(*source, Error::ConnectionFailure(_)), "{source}");
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn rate_limit_answers_retry_after() {
    let dir = tempfile::tempdir().unwrap();
    let (_, _, mut config) = fixture(dir.path());
    config.rate_limit = Some(3);
    let handle = serve(&config).unwrap();
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .http_status_as_error(false)
        .build()
        .into();
    let payload = [0u8; 128];
    let statuses: Vec<(u16, Option<String>)> = (0..5)
        .map(|_| {
            let r = agent
                .post(format!("{}/classify", handle.endpoint()))
                .send(&payload[..])
                .unwrap();
            let retry = r
                .headers()
                .get("retry-after")
                .map(|v| v.to_str().unwrap().to_string());
            (r.status().as_u16(), retry)
        })
        .collect();
    assert_eq!(statuses[0].0, 200);
    let limited = statuses.iter().find(|(s, _)| *s == 429).expect("some request limited");
    assert_eq!(limited.1.as_deref(), Some("1"));
    // The client waits out the limit and succeeds.
    let remote = RemoteOracle::connect(&handle.endpoint()).unwrap();
    for _ in 0..5 {
        remote.classify(&[0.0; 16]).unwrap();
    }
}

#[test]
fn startup_failures_are_typed() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.adim");
    std::fs::write(&bad, b"not a model").unwrap();
    assert!(matches!(
        serve(&ServiceConfig::new("127.0.0.1:0", &bad)),
        Err(ServiceError::ModelLoadFailure { .. })
    ));
    let (_, _, config) = fixture(dir.path());
    let first = serve(&config).unwrap();
    let mut taken = config.clone();
    taken.bind = first.addr().to_string();
    assert!(matches!(serve(&taken), Err(ServiceError::BindFailure { .. })));
}
