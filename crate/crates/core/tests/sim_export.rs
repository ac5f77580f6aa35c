use std::process::Command;

use adaptsafe::export;
use adaptsafe::sim::{self, ScenarioConfig, ScenarioMode, Simulator};

fn short(mode: ScenarioMode, secs: f64) -> ScenarioConfig {
    let mut c = ScenarioConfig::case_study(mode).with_noise(false);
    c.duration = secs;
    c
}

fn lines(path: &std::path::Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(str::to_owned)
        .collect()
}

#[test]
fn identical_configs_give_identical_logs() {
    let mut c = short(ScenarioMode::GaussianAdaptive, 1.0);
    c.noise_on = true;
    c.seed = 7;
    let a = sim::run(&c).unwrap();
    let b = sim::run(&c).unwrap();
    assert_eq!(a, b);
    c.seed = 8;
    assert_ne!(sim::run(&c).unwrap().records, a.records);
}

#[test]
fn noiseless_adaptive_run_keeps_truth_inside_the_set() {
    let log = sim::run(&short(ScenarioMode::ZonotopeAdaptive, 3.0)).unwrap();
    assert_eq!(log.metrics.containment_violations, 0);
    assert!(log.records.iter().all(|r| r.contains_truth));
    assert!(log.metrics.time_to_fe.is_some());
    // once excited, always excited
    let first = log.records.iter().position(|r| r.fe_satisfied).unwrap();
    assert!(log.records[first..].iter().all(|r| r.fe_satisfied));
}

#[test]
fn step_matches_run() {
    let c = short(ScenarioMode::ZonotopeAdaptive, 0.05);
    let sim = Simulator::new(&c).unwrap();
    let mut st = sim.initial_state().unwrap();
    for _ in 0..c.steps() {
        sim.step(&mut st).unwrap();
    }
    let log = sim::run(&c).unwrap();
    let last = log.records.last().unwrap();
    assert_eq!(last.q, <[f64; 2]>::from(st.x.q));
    assert_eq!(last.theta_hat, st.estimator.theta_hat.iter().copied().collect::<Vec<_>>());
}

#[test]
fn export_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let log = sim::run(&short(ScenarioMode::GaussianAdaptive, 0.2)).unwrap();
    let files = export::write_run(&log, dir.path()).unwrap();
    assert_eq!(files.len(), 6);

    let traj = lines(&dir.path().join(export::TRAJECTORY_CSV));
    assert_eq!(traj[0], "t,q1,q2,qdot1,qdot2,qd1,qd2,u1,u2,k0_1,k0_2");
    assert_eq!(traj.len(), 1 + log.records.len());

    let params = lines(&dir.path().join(export::PARAMS_CSV));
    assert_eq!(
        params[0],
        "t,theta_hat1,theta_hat2,gamma_1_1,gamma_1_2,gamma_2_1,gamma_2_2,lambda_min,fe_satisfied,contains_truth"
    );
    assert!(params[1].starts_with("0,-0.1,0.1,2,0,0,2,"));

    let sets = lines(&dir.path().join(export::SETS_CSV));
    assert_eq!(sets.len(), 1 + 2 * log.records.len());
    assert!(sets[1].starts_with("0,zonotope,-0.1,0.1,2,0,0,2"));
    let gauss: Vec<&str> = sets[2].split(',').collect();
    assert_eq!(&gauss[..2], &["0", "gaussian"]);
    let nums: Vec<f64> = gauss[2..].iter().map(|v| v.parse().unwrap()).collect();
    for (got, want) in nums.iter().zip([-0.1, 0.1, 2.0, 0.0, 0.0, 2.0]) {
        assert!((got - want).abs() < 1e-12);
    }

    let filter = lines(&dir.path().join(export::FILTER_CSV));
    assert_eq!(filter[0], "t,mode,h_1,h_2,slack_1,slack_2,du_norm,active_set,feasible");
    assert!(filter[1].contains(",gaussian_adaptive,"));

    let metrics: sim::Metrics =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join(export::METRICS_JSON)).unwrap()).unwrap();
    assert_eq!(metrics, log.metrics);

    let stack = lines(&dir.path().join(export::STACK_CSV));
    assert_eq!(stack.len(), 1 + log.final_stack.len());
}

#[test]
fn empty_log_exports_headers_only() {
    let dir = tempfile::tempdir().unwrap();
    let mut log = sim::run(&short(ScenarioMode::AclfOnly, 0.0)).unwrap();
    log.records.clear();
    export::write_run(&log, dir.path()).unwrap();
    for name in [export::TRAJECTORY_CSV, export::PARAMS_CSV, export::SETS_CSV, export::FILTER_CSV, export::STACK_CSV] {
        assert_eq!(lines(&dir.path().join(name)).len(), 1, "{name}");
    }
    let filter = lines(&dir.path().join(export::FILTER_CSV));
    assert_eq!(filter[0], "t,mode,h_1,h_2,du_norm,active_set,feasible");
}

#[test]
fn export_reports_the_failing_path() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let log = sim::run(&short(ScenarioMode::AclfOnly, 0.0)).unwrap();
    let err = export::write_run(&log, &blocker.join("out")).unwrap_err();
    assert!(err.to_string().contains("file"), "{err}");
}

#[test]
fn comparison_flags_follow_the_metrics() {
    let cfgs = [
        short(ScenarioMode::AclfOnly, 2.0),
        short(ScenarioMode::RobustFixed, 2.0),
        short(ScenarioMode::ZonotopeAdaptive, 2.0),
    ];
    let (cmp, logs) = sim::compare(&cfgs).unwrap();
    assert_eq!(cmp.rows.len(), 3);
    assert_eq!(logs.len(), 3);
    for (row, log) in cmp.rows.iter().zip(&logs) {
        assert_eq!(row.metrics, log.metrics);
    }
    let fixed = cmp.rows[1].metrics.rms_tracking_error;
    let adaptive = cmp.rows[2].metrics.rms_tracking_error;
    assert_eq!(cmp.adaptive_tracks_better, Some(adaptive < fixed));
    assert!(cmp.table().contains("2_zonotope_adaptive"));
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_adaptsafe"))
}

#[test]
fn cli_run_compare_and_check() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = short(ScenarioMode::ZonotopeAdaptive, 0.3);
    let a = dir.path().join("a.json");
    std::fs::write(&a, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    cfg.mode = ScenarioMode::RobustFixed;
    let b = dir.path().join("b.json");
    std::fs::write(&b, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();

    let out = dir.path().join("run");
    let status = cli()
        .args(["run", "--config"])
        .arg(&a)
        .arg("--out")
        .arg(&out)
        .args(["--seed", "3", "--mode", "gaussian_adaptive", "--no-noise"])
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    assert!(out.join(export::METRICS_JSON).exists());
    assert!(lines(&out.join(export::FILTER_CSV))[1].contains("gaussian_adaptive"));

    let cmp_out = dir.path().join("cmp");
    let mut configs = a.as_os_str().to_owned();
    configs.push(",");
    configs.push(b.as_os_str());
    let status = cli()
        .args(["compare", "--configs"])
        .arg(&configs)
        .arg("--out")
        .arg(&cmp_out)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    assert!(cmp_out.join("comparison.json").exists());
    assert!(cmp_out.join("0_zonotope_adaptive").join(export::TRAJECTORY_CSV).exists());

    let status = cli().arg("check").output().unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stdout));
}

#[test]
fn cli_rejects_unknown_config_keys() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = serde_json::to_value(short(ScenarioMode::AclfOnly, 0.1)).unwrap();
    v["surprise"] = serde_json::json!(true);
    let path = dir.path().join("bad.json");
    std::fs::write(&path, v.to_string()).unwrap();
    let out = cli()
        .args(["run", "--config"])
        .arg(&path)
        .arg("--out")
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("surprise"));
}
