use std::fs;

use chisq_rl::harness::{
    cmd_ablate, cmd_sweep, cmd_train, cmd_tuning_report, data_rows, normalize_curve, read_returns,
    run_sweep, verify_bound, Policy, RunConfig, SweepSpec, TuningReport, VerifySection,
};
use chisq_rl::envs::{EnvId, EnvParams};
use chisq_rl::qrdqn::QuantileNetwork;
use chisq_rl::quantile::StdNormalization;
use chisq_rl::rng::seeded;
use chisq_rl::Error;

fn quick(dir: &std::path::Path, steps: u64) -> RunConfig {
    let mut cfg = RunConfig::default();
    for (k, v) in [
        ("qrdqn.hidden", "[32]"),
        ("qrdqn.learning_starts", "200"),
        ("qrdqn.train_freq", "64"),
        ("qrdqn.gradient_steps", "16"),
        ("eval_episodes", "3"),
        ("sweep.episodes", "2"),
        ("sweep.grid", "[0.8, 1.0, 1.6]"),
        ("sweep.multiplier", "relative_length"),
    ] {
        cfg.set_key(k, v).unwrap();
    }
    cfg.total_steps = steps;
    cfg.out_dir = dir.to_path_buf();
    cfg
}

#[test]
fn normalization_puts_the_best_point_at_one() {
    assert_eq!(normalize_curve(&[100.0, 50.0, 200.0]), vec![0.5, 0.25, 1.0]);
    assert_eq!(normalize_curve(&[-100.0, -200.0]), vec![1.0, 0.5]);
    assert_eq!(normalize_curve(&[7.0]), vec![1.0]);
    assert_eq!(normalize_curve(&[-3.0]), vec![1.0]);
}

#[test]
fn single_point_sweep_is_normalized_to_one() {
    let net = QuantileNetwork::new(4, 2, 3, &[8], &mut seeded(0)).unwrap();
    let spec = SweepSpec {
        env: EnvParams::nominal(EnvId::CartPole),
        multiplier: "relative_mass".into(),
        grid: vec![1.0],
        episodes: 4,
        eval_alpha: 0.0,
        penalize_test: true,
        std_normalization: StdNormalization::MeanSquare,
        seed: 1,
    };
    let report = run_sweep(&Policy::Discrete(net), 0.0, &spec).unwrap();
    assert_eq!(report.rows.len(), 1);
    let row = &report.rows[0];
    assert_eq!(row.normalized_mean, 1.0);
    assert!(row.returns.iter().all(|r| (1.0..=500.0).contains(r)));
    assert!(row.min <= row.mean && row.mean <= row.max && row.std >= 0.0);
}

#[test]
fn train_artifacts_follow_the_schema() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick(dir.path(), 600);
    let art = cmd_train(&cfg).unwrap();
    let log = fs::read_to_string(dir.path().join("log.csv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], format!("# artifact_version={}", env!("CARGO_PKG_VERSION")));
    assert_eq!(lines[1], "# schema=qrdqn_log/1");
    assert_eq!(lines[2], format!("# config_hash={}", cfg.hash()));
    assert_eq!(lines[3], "# seeds=0");
    assert_eq!(lines[4], "step,episode,return,loss,epsilon,alpha_eff_train,alpha_eff_test");
    assert_eq!(data_rows(&log).len(), art.log.rows.len() + 1);
    let eval = read_returns(&dir.path().join("eval.csv")).unwrap();
    assert_eq!(eval, art.eval_returns);
    assert_eq!(eval.len(), 3);
    let back = RunConfig::load(&dir.path().join("config.toml")).unwrap();
    assert_eq!(back.hash(), cfg.hash());
    assert!(!log.contains('\r'));
}

#[test]
fn sweep_csv_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick(dir.path(), 400);
    cmd_train(&cfg).unwrap();
    let (report, path) = cmd_sweep(&cfg).unwrap();
    let first = fs::read_to_string(&path).unwrap();
    let (again, _) = cmd_sweep(&cfg).unwrap();
    assert_eq!(report, again);
    assert_eq!(fs::read_to_string(&path).unwrap(), first);
    let header = data_rows(&first)[0];
    assert_eq!(header, "multiplier,mean,std,min,max,normalized_mean,returns");
    assert_eq!(data_rows(&first).len(), 4);
    assert!(first.contains("# multiplier_name=relative_length"));
}

#[test]
fn ablation_modes_collapse_at_zero_alpha() {
    let dir = tempfile::tempdir().unwrap();
    let runs = cmd_ablate(&quick(dir.path(), 600)).unwrap();
    let labels: Vec<_> = runs.iter().map(|r| r.label).collect();
    assert_eq!(labels, ["full", "train_only", "test_only", "none"]);
    let rows: Vec<String> = runs.iter().map(|r| data_rows(&r.csv.render().unwrap()).join("\n")).collect();
    assert!(rows.iter().all(|r| *r == rows[0]));
    assert!(runs.iter().all(|r| r.alpha_eff_train == 0.0 && r.alpha_eff_test == 0.0));
    for label in labels {
        assert!(dir.path().join("ablate").join(label).join("sweep.csv").exists());
        assert!(dir.path().join("ablate").join(label).join("log.csv").exists());
    }
}

#[test]
fn ablation_modes_separate_at_positive_alpha() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick(dir.path(), 600);
    cfg.set_alpha(1.0).unwrap();
    let runs = cmd_ablate(&cfg).unwrap();
    let eff: Vec<(f64, f64)> = runs.iter().map(|r| (r.alpha_eff_train, r.alpha_eff_test)).collect();
    assert_eq!(eff, [(1.0, 1.0), (1.0, 0.0), (0.0, 1.0), (0.0, 0.0)]);
    let text: Vec<String> = runs.iter().map(|r| r.csv.render().unwrap()).collect();
    assert_ne!(text[0], text[1]);
    assert_ne!(text[0], text[2]);
    assert!(text[1].contains("# alpha_eff_test=0") && text[2].contains("# alpha_eff_train=0"));
}

#[test]
fn verification_certifies_and_sees_the_strict_regime() {
    let v = VerifySection { cases: 20, infeasible_cases: 10, ..VerifySection::default() };
    let report = verify_bound(&v).unwrap();
    assert_eq!(report.rows.len(), 30);
    assert_eq!(report.failures(), 0);
    assert!(report.strict_lower_bound_cases() > 0);
    let broken = verify_bound(&VerifySection { closed_form_offset: 1e-3, ..v }).unwrap();
    assert!(broken.failures() > 0);
}

#[test]
fn tuning_report_uses_population_variance() {
    let r = TuningReport::from_returns(&[1.0, 2.0, 3.0]).unwrap();
    assert_eq!((r.mean, r.episodes), (2.0, 3));
    assert!((r.variance - 2.0 / 3.0).abs() < 1e-15);
    assert!((r.ratio - 3.0).abs() < 1e-12);
    assert!(TuningReport::from_returns(&[5.0, 5.0]).unwrap().ratio.is_infinite());
    assert!(matches!(TuningReport::from_returns(&[]), Err(Error::EmptyLog(_))));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("eval.csv");
    fs::write(&path, "# schema=eval/1\nepisode,return\n0,10\n1,20\n2,30\n").unwrap();
    let r = cmd_tuning_report(&[path], 2).unwrap();
    assert_eq!((r.episodes, r.mean, r.variance), (2, 25.0, 25.0));
}

#[test]
fn config_rejects_unknown_keys_and_applies_overrides() {
    assert!(matches!(RunConfig::from_toml_str("bogus = 1"), Err(Error::Config(_))));
    assert!(RunConfig::from_toml_str("[qrdqn]\ngamma = 1.5").is_err());
    let mut cfg = RunConfig::from_toml_str("seed = 4\n[qrdqn]\nalpha = 0.5").unwrap();
    assert_eq!((cfg.seed, cfg.qrdqn.alpha), (4, 0.5));
    let vars = [("CHISQRL_QRDQN__ALPHA", "2"), ("CHISQRL_SEED", "9"), ("HOME", "/x")];
    cfg.apply_env(vars.iter().map(|(k, v)| (k.to_string(), v.to_string()))).unwrap();
    assert_eq!((cfg.seed, cfg.qrdqn.alpha), (9, 2.0));
    assert!(cfg.set_key("qrdqn.nope", "1").is_err());
    let h = cfg.hash();
    assert_eq!(h.len(), 16);
    cfg.seed = 10;
    assert_ne!(cfg.hash(), h);
}
