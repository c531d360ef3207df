use std::f64::consts::PI;
use std::process::Command;

use gpmpc::dynamics::{integrate_truth, NormalizedInput, QuadParams, QuadState};
use gpmpc::harness::{
    compare, extract_disturbance, run_episode, write_episode, Abort, ControlMode, ReferenceKind, ScenarioConfig,
    WindConfig, WindModel, TRAJECTORY_COLUMNS,
};
use nalgebra::{Matrix2, Vector2, Vector3};

fn short(use_gp: bool, duration: f64) -> ScenarioConfig {
    let mut c = ScenarioConfig {
        duration,
        ..ScenarioConfig::default()
    };
    c.control.use_gp = use_gp;
    c
}

#[test]
fn wind_autocorrelation_follows_time_constant() {
    let cfg = WindConfig {
        mean_speed: 0.0,
        ..WindConfig::default()
    };
    let mut w = WindModel::new(&cfg, 5);
    let h = 0.2;
    let n = 100_000;
    let xs: Vec<f64> = (0..n)
        .map(|_| {
            w.step(h);
            w.velocity().x
        })
        .collect();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    assert!((var - 24.0).abs() < 0.1 * 24.0, "variance {var}");
    // decay time implied by the sample autocorrelation at several lags
    for lag in [1, 5, 10] {
        let c = (0..n - lag).map(|i| (xs[i] - mean) * (xs[i + lag] - mean)).sum::<f64>() / (n - lag) as f64;
        let tau = -(lag as f64 * h) / (c / var).ln();
        assert!(
            (tau - cfg.time_constant).abs() < 0.1 * cfg.time_constant,
            "lag {lag}: time constant {tau}"
        );
    }
}

/// Velocity residual after one interval at hover under a constant force.
#[test]
fn constant_force_is_recovered() {
    let p = QuadParams::default();
    let u = NormalizedInput::hover(&p);
    let f = Vector3::new(0.8, -0.5, 0.3);
    let h = 0.1 / 51.0;
    let mut truth = QuadState::hover_at(Vector3::zeros());
    let mut nominal = truth;
    for _ in 0..51 {
        truth = integrate_truth(&truth, &u, &p, &f, h).unwrap();
        nominal = integrate_truth(&nominal, &u, &p, &Vector3::zeros(), h).unwrap();
    }
    let d = extract_disturbance(&truth, &nominal, 0.1).unwrap();
    // level attitude: v̇ = (f − c·v)/m, so Δv = f/c·(1 − e^{−c·ΔT/m})
    let c = p.drag;
    let exact = f * (1.0 - (-c * 0.1 / p.mass).exp()) / c / 0.1;
    assert!((d - exact).norm() < 1e-9, "{d} vs {exact}");
    assert!((d - f / p.mass).norm() < 0.01 * (f / p.mass).norm());
}

/// Least-squares amplitude of a sinusoid of known frequency.
fn amplitude(ts: &[f64], ys: &[f64], omega: f64) -> f64 {
    let mut m = Matrix2::zeros();
    let mut r = Vector2::zeros();
    for (&t, &y) in ts.iter().zip(ys) {
        let phi = Vector2::new((omega * t).sin(), (omega * t).cos());
        m += phi * phi.transpose();
        r += phi * y;
    }
    m.lu().solve(&r).unwrap().norm()
}

#[test]
fn sinusoidal_force_is_recovered() {
    let p = QuadParams::default();
    let u = NormalizedInput::hover(&p);
    let dt = 0.1;
    let sub = 51;
    let h = dt / sub as f64;
    for freq in [0.2, 0.5, 1.0, 2.0, 2.4] {
        let omega = 2.0 * PI * freq;
        let amp = 1.5;
        let mut s = QuadState::hover_at(Vector3::zeros());
        let (mut ts, mut ys) = (Vec::new(), Vec::new());
        for k in 0..200 {
            let mut nominal = s;
            for i in 0..sub {
                let t = k as f64 * dt + i as f64 * h;
                let f = Vector3::new(amp * (omega * t).sin(), 0.0, 0.0);
                s = integrate_truth(&s, &u, &p, &f, h).unwrap();
                nominal = integrate_truth(&nominal, &u, &p, &Vector3::zeros(), h).unwrap();
            }
            ts.push(k as f64 * dt);
            ys.push(extract_disturbance(&s, &nominal, dt).unwrap().x);
        }
        let got = amplitude(&ts, &ys, omega);
        let want = amp / p.mass;
        assert!((got - want).abs() < 0.1 * want, "{freq} Hz: {got} vs {want}");
    }
}

#[test]
fn identical_seeds_give_identical_logs() {
    let mut cfg = short(true, 8.0);
    cfg.control.switch_after = 20;
    let dir = tempfile::tempdir().unwrap();
    let a = run_episode(&cfg).unwrap();
    let b = run_episode(&cfg).unwrap();
    write_episode(&a, &cfg, &dir.path().join("a")).unwrap();
    write_episode(&b, &cfg, &dir.path().join("b")).unwrap();
    let read = |s: &str| std::fs::read(dir.path().join(s).join("trajectory.csv")).unwrap();
    assert_eq!(read("a"), read("b"));

    cfg.seed += 1;
    let c = run_episode(&cfg).unwrap();
    assert_ne!(a.log.records.last(), c.log.records.last());
}

#[test]
fn switch_happens_after_fifty_updates() {
    let ep = run_episode(&short(true, 8.0)).unwrap();
    assert!(ep.abort.is_none());
    let m = ep.metrics.unwrap();
    let ts = m.switch_time.expect("switched");
    // first update needs two samples; one update per 0.1 s interval after that
    assert!((ts - 5.1).abs() < 1e-9, "switch at {ts}");
    let ready = (0..3)
        .map(|axis| {
            ep.log
                .gp_trace
                .iter()
                .find(|r| r.axis == axis && r.updates == 50)
                .map(|r| r.t)
                .unwrap()
        })
        .fold(0.0, f64::max);
    for r in &ep.log.records {
        if r.t < ready - 1e-9 {
            assert_eq!(r.mode, ControlMode::Nominal, "t = {}", r.t);
            assert_eq!(r.backoff, Vector3::zeros());
            assert!(r.gp_mean.iter().all(|v| v.is_nan()));
        } else {
            assert_eq!(r.mode, ControlMode::Gp, "t = {}", r.t);
            assert!(r.backoff.iter().all(|&b| b > 0.0));
        }
    }
    for t in &ep.log.timings {
        assert_eq!(t.mode == ControlMode::Gp, t.t >= ready - 1e-9);
    }
}

#[test]
fn nominal_never_switches() {
    let ep = run_episode(&short(false, 8.0)).unwrap();
    assert!(ep.log.records.iter().all(|r| r.mode == ControlMode::Nominal));
    assert!(ep.log.gp_trace.is_empty());
    assert_eq!(ep.metrics.unwrap().switch_time, None);
}

#[test]
fn hover_regulation_in_calm_air() {
    let mut cfg = short(false, 30.0);
    cfg.reference.kind = ReferenceKind::Hover;
    cfg.wind.enabled = false;
    cfg.initial_offset = [0.1, -0.1, 0.05];
    let ep = run_episode(&cfg).unwrap();
    let m = ep.metrics.unwrap();
    assert!(m.rms < 0.05, "rms {}", m.rms);
    let last = ep.log.records.last().unwrap();
    assert!((last.state.position - last.reference).norm() < 1e-3);
}

#[test]
fn calm_air_gp_predicts_no_disturbance() {
    let mut cfg = short(true, 12.0);
    cfg.wind.enabled = false;
    let ep = run_episode(&cfg).unwrap();
    let m = ep.metrics.as_ref().unwrap();
    assert!(m.switch_time.is_some());
    let gp: Vec<_> = ep.log.records.iter().filter(|r| r.mode == ControlMode::Gp).collect();
    assert!(!gp.is_empty());
    for r in gp {
        assert!(r.gp_mean.norm() < 0.05, "t = {}: {}", r.t, r.gp_mean);
    }
    for h in &m.final_hyper {
        assert!(h.signal_variance < cfg.gp.initial.signal_variance);
    }
}

#[test]
fn gp_beats_nominal_in_wind() {
    let nominal = run_episode(&short(false, 30.0)).unwrap();
    let gp = run_episode(&short(true, 30.0)).unwrap();
    let (a, b) = (nominal.metrics.unwrap(), gp.metrics.unwrap());
    assert!(b.rms < a.rms, "gp {} vs nominal {}", b.rms, a.rms);
    assert_eq!(a.kkt_failures + b.kkt_failures, 0);
}

#[test]
fn identical_configs_compare_equal() {
    let cfg = short(false, 3.0);
    let cmp = compare(("a", &cfg), ("b", &cfg), &[3, 4, 5]).unwrap();
    assert_eq!(cmp.rows.len(), 6);
    for (a, b) in cmp.pairs() {
        assert_eq!(a, b);
    }
    assert_eq!(cmp.wins_b(), 0);
    assert_eq!(cmp.median_ratio(), 1.0);
    let seeds: Vec<u64> = cmp.rows.iter().map(|r| r.seed).collect();
    assert_eq!(seeds, vec![3, 3, 4, 4, 5, 5]);
}

#[test]
fn runaway_wind_is_reported_as_divergence() {
    let mut cfg = short(false, 30.0);
    cfg.wind.mean_speed = 200.0;
    cfg.wind.gain = 5.0;
    cfg.wind.variance = 0.0;
    cfg.qp.max_iter = 200;
    let ep = run_episode(&cfg).unwrap();
    assert!(matches!(ep.abort, Some(Abort::Divergence { .. })), "{:?}", ep.abort);
    assert_eq!(ep.exit_code(), 3);
    assert!(ep.metrics.is_some());
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gpmpc"))
}

#[test]
fn cli_run_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("s.toml");
    std::fs::write(&cfg, "duration = 2.0\n[control]\nuse_gp = false\n").unwrap();
    let out = dir.path().join("out");
    let status = cli().arg("run").arg(&cfg).arg("--out").arg(&out).arg("--seed").arg("7").output().unwrap();
    assert_eq!(status.status.code(), Some(0), "{}", String::from_utf8_lossy(&status.stderr));
    for f in ["trajectory.csv", "gp_trace.csv", "timings.csv", "summary.txt"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let traj = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert_eq!(traj.lines().next().unwrap(), TRAJECTORY_COLUMNS.join(","));
    // 2 s at 30 Hz with 17 substeps per tick
    assert_eq!(traj.lines().count(), 1 + 60 * 17);
    assert!(std::fs::read_to_string(out.join("summary.txt")).unwrap().contains("seed: 7"));
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[control]\nrate_hz = 25.0\n").unwrap();
    let code = |args: &[&std::ffi::OsStr]| cli().args(args).output().unwrap().status.code();
    assert_eq!(code(&["run".as_ref(), bad.as_os_str()]), Some(4));
    assert_eq!(code(&["run".as_ref(), dir.path().join("missing.toml").as_os_str()]), Some(4));
    let runaway = dir.path().join("runaway.toml");
    std::fs::write(
        &runaway,
        "duration = 30.0\n[control]\nuse_gp = false\n[qp]\nmax_iter = 200\n[wind]\nmean_speed = 200.0\ngain = 5.0\nvariance = 0.0\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    assert_eq!(
        code(&["run".as_ref(), runaway.as_os_str(), "--out".as_ref(), out.as_os_str()]),
        Some(3)
    );
    assert_eq!(code(&["gp-selftest".as_ref()]), Some(0));
}
