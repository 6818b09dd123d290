use std::fs;
use std::sync::OnceLock;

use twist_core::controller::{candidate_params, Controller, InputMask};
use twist_core::harness::config::ExperimentConfig;
use twist_core::harness::episode::EpisodeSpec;
use twist_core::harness::offline::{
    build_bundle, calibrate_risk, load_bundle, persist_bundle, run_offline, validation_set,
};
use twist_core::harness::{replay_trace, run_episode, run_episode_with, run_grid, Bundle, FrameRecord, Method};
use twist_core::phy::ChannelKind;
use twist_core::{SyncMode, TwistError};

fn tiny(extra: &[&str]) -> ExperimentConfig {
    let mut o: Vec<String> = [
        "offline.train_episodes=2",
        "offline.train_frames=50",
        "offline.calibration_episodes=1",
        "offline.calibration_frames=30",
        "offline.validation_episodes=1",
        "offline.validation_frames=20",
        "link.profile_trials=20",
        "link.snr_db=[4.0, 12.0]",
        "offline.weight_grid=[0.0, 1.0]",
        "offline.theta_low=[-0.25]",
        "offline.theta_high=[0.5]",
        "offline.channel_cut_points=[0.0, 0.5, 1.1]",
        "grid.seeds=[0, 1]",
        "grid.frames=30",
        "grid.temporal_schedule=[[0, 12.0], [15, 4.0]]",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    o.extend(extra.iter().map(|s| s.to_string()));
    ExperimentConfig::desk().with_overrides(&o).unwrap()
}

fn shared() -> &'static (ExperimentConfig, Bundle) {
    static B: OnceLock<(ExperimentConfig, Bundle)> = OnceLock::new();
    B.get_or_init(|| {
        let cfg = tiny(&[]);
        let bundle = build_bundle(&cfg, None).unwrap();
        (cfg, bundle)
    })
}

fn same_frames(a: &[FrameRecord], b: &[FrameRecord]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| FrameRecord { wall_us: 0, ..x.clone() } == FrameRecord { wall_us: 0, ..y.clone() })
}

#[test]
fn bundle_profiles_fit_their_budgets() {
    let (cfg, b) = shared();
    for (mode, p) in SyncMode::ALL.iter().zip(&b.pipeline.twist_profiles) {
        assert_eq!(p.budget, mode.budget(cfg.link.nominal_budget));
        p.check_feasible(&b.pipeline.groups, &b.pipeline.alphabet).unwrap();
    }
    assert_eq!(b.controller.candidates, 2usize.pow(4));
    b.controller.params.validate().unwrap();
}

#[test]
fn grid_is_complete_deterministic_and_replayable() {
    let (cfg, b) = shared();
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let out = run_grid(cfg, b, d1.path()).unwrap();
    run_grid(cfg, b, d2.path()).unwrap();
    assert_eq!(out.cells.len(), 13 * 2 * 2 * 2);
    assert_eq!(out.summary.len(), 13 * 2 * 2);
    for name in ["cells.csv", "summary.csv", "fig5_temporal.csv"] {
        assert_eq!(
            fs::read(d1.path().join(name)).unwrap(),
            fs::read(d2.path().join(name)).unwrap(),
            "{name}"
        );
    }
    // every method of a cell sees the same noise
    for c in &out.cells {
        let twist = out
            .cells
            .iter()
            .find(|x| x.method == Method::Twist && x.channel == c.channel && x.snr_db == c.snr_db && x.seed == c.seed)
            .unwrap();
        assert_eq!(c.noise_fingerprint, twist.noise_fingerprint);
    }
    // the first frame always runs in MED
    let n = cfg.grid.frames as f64;
    for c in out.cells.iter().filter(|c| c.method == Method::StaticHigh) {
        assert!((c.cost - (1.0 + 2.0 * (n - 1.0)) / n).abs() < 1e-12);
        assert!((c.share_high - (n - 1.0) / n).abs() < 1e-12);
    }
    let traces: Vec<_> = fs::read_dir(d1.path().join("traces")).unwrap().collect();
    assert_eq!(traces.len(), out.cells.len());
    for entry in traces {
        let trace = twist_core::harness::EpisodeTrace::read_jsonl(&entry.unwrap().path()).unwrap();
        let rep = replay_trace(&trace);
        assert!(rep.passed(), "{rep:?}");
    }
}

#[test]
fn tampered_trace_fails_replay() {
    let (cfg, b) = shared();
    let frames = twist_core::harness::grid::test_episode(cfg, 0, 20).unwrap();
    let spec = EpisodeSpec {
        method: Method::Twist,
        channel: ChannelKind::Rayleigh,
        snr_db: vec![4.0; 20],
        seed: 0,
        channel_seed: 99,
    };
    let mut trace = run_episode(b, &spec, &frames).unwrap();
    assert!(replay_trace(&trace).passed());
    let m = trace.frames[5].mode;
    trace.frames[5].mode = if m == SyncMode::High { SyncMode::Low } else { SyncMode::High };
    assert!(!replay_trace(&trace).passed());
}

#[test]
fn noiseless_link_reproduces_the_source() {
    let (cfg, b) = shared();
    let frames = twist_core::harness::grid::test_episode(cfg, 3, 25).unwrap();
    let spec = EpisodeSpec {
        method: Method::StaticLow,
        channel: ChannelKind::Awgn,
        snr_db: vec![60.0; 25],
        seed: 3,
        channel_seed: 1,
    };
    let trace = run_episode(b, &spec, &frames).unwrap();
    let clean: Vec<_> = frames
        .iter()
        .map(|f| b.pipeline.head.infer(&b.pipeline.table.embed(&f.grid).unwrap()).unwrap().prediction)
        .collect();
    for (r, p) in trace.frames.iter().zip(&clean) {
        assert_eq!(r.tsmr, 0.0);
        assert_eq!(r.erasure_ratio, 0.0);
        assert_eq!(&r.prediction, p);
    }
}

#[test]
fn risk_calibration_matches_independent_rerun() {
    let (cfg, b) = shared();
    let set = validation_set(cfg).unwrap();
    let cands = candidate_params(&[0.0, 1.0], &[-0.25], &[0.25, 0.5], InputMask {
        drift: false,
        priority: false,
        ..InputMask::ALL
    });
    assert_eq!(cands.len(), 8);
    let (best, score) = calibrate_risk(&b.pipeline, &set, &cands).unwrap();

    let obj = cfg.objective;
    let b0 = cfg.link.nominal_budget as f64;
    let mut scored = Vec::new();
    for p in &cands {
        let (mut total, mut cost, mut n) = (0.0, 0.0, 0.0);
        for (e, frames) in set.episodes.iter().enumerate() {
            for (s, &snr) in set.snr_db.iter().enumerate() {
                let spec = EpisodeSpec {
                    method: Method::Twist,
                    channel: set.channel,
                    snr_db: vec![snr; frames.len()],
                    seed: e as u64,
                    channel_seed: set.channel_seeds[e][s],
                };
                let trace = run_episode_with(b, &spec, frames, Controller::Risk { params: *p }).unwrap();
                for r in &trace.frames {
                    let c = r.budget as f64 / b0;
                    total += (1.0 + obj.omega_priority * f64::from(r.q)) * r.app_loss + obj.alpha * r.tsmr + obj.beta * c;
                    cost += c;
                    n += 1.0;
                }
            }
        }
        scored.push((total / n, cost / n, *p));
    }
    let min = scored.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
    assert!((score.objective - min).abs() < 1e-9, "{} vs {min}", score.objective);
    let (_, best_cost, _) = scored.iter().find(|s| s.2 == best).unwrap();
    assert!((score.mean_cost - best_cost).abs() < 1e-9);
    for (o, c, _) in &scored {
        assert!(*o > min + 1e-12 || *c >= best_cost - 1e-12);
    }
}

#[test]
fn heavy_cost_weight_drives_the_controller_down() {
    let cfg = tiny(&["objective.beta=100.0", "offline.theta_low=[-0.5, 0.0]", "offline.theta_high=[0.25, 0.75]"]);
    let b = build_bundle(&cfg, None).unwrap();
    let base = &shared().1.controller.score;
    assert!(b.controller.score.mean_cost < base.mean_cost, "{:?} vs {base:?}", b.controller);
    let p = b.controller.params;
    // no reachable risk reaches HIGH
    assert!(p.eta_rho + p.eta_drift + p.eta_priority < p.theta_high, "{p:?}");
}

#[test]
fn single_group_makes_uniform_protection_coincide() {
    let cfg = tiny(&["model.groups=1"]);
    let b = build_bundle(&cfg, None).unwrap();
    let frames = twist_core::harness::grid::test_episode(&cfg, 0, 20).unwrap();
    let spec = |method| EpisodeSpec {
        method,
        channel: ChannelKind::Rayleigh,
        snr_db: vec![8.0; 20],
        seed: 0,
        channel_seed: 5,
    };
    let a = run_episode(&b, &spec(Method::Twist), &frames).unwrap();
    let u = run_episode(&b, &spec(Method::Uniform), &frames).unwrap();
    assert!(same_frames(&a.frames, &u.frames));
}

#[test]
fn persisted_bundle_reloads_and_rejects_stale_config() {
    let (cfg, b) = shared();
    let dir = tempfile::tempdir().unwrap();
    let art = dir.path().join("artifacts");
    let mut copy = b.clone();
    persist_bundle(&mut copy, &art).unwrap();
    for name in [
        "utility.json",
        "groups.json",
        "mode_profiles.json",
        "controller.json",
        "manifest.json",
    ] {
        assert!(art.join(name).exists(), "{name}");
    }
    let back = load_bundle(cfg, &art).unwrap();
    assert_eq!(back.controller, b.controller);
    assert_eq!(back.profiles, b.profiles);
    assert_eq!(back.pipeline.completion, b.pipeline.completion);
    assert_eq!(back.artifact_hashes, copy.artifact_hashes);

    let frames = twist_core::harness::grid::test_episode(cfg, 1, 15).unwrap();
    let spec = EpisodeSpec {
        method: Method::Twist,
        channel: ChannelKind::Awgn,
        snr_db: vec![4.0; 15],
        seed: 1,
        channel_seed: 3,
    };
    let x = run_episode(b, &spec, &frames).unwrap();
    let y = run_episode(&back, &spec, &frames).unwrap();
    assert!(same_frames(&x.frames, &y.frames));

    let stale = tiny(&["seed=7"]);
    assert!(matches!(load_bundle(&stale, &art), Err(TwistError::ArtifactMismatch(_))));
    assert!(matches!(run_grid(&stale, b, dir.path()), Err(TwistError::ArtifactMismatch(_))));

    let groups = art.join("groups.json");
    let mut bytes = fs::read(&groups).unwrap();
    bytes.push(b' ');
    fs::write(&groups, bytes).unwrap();
    let err = load_bundle(cfg, &art).unwrap_err();
    assert_eq!(err.exit_code(), 4);
}

#[test]
fn offline_run_reuses_current_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = format!("output_dir=\"{}\"", dir.path().display());
    let cfg = tiny(&[&out, "offline.weight_grid=[1.0]", "offline.channel_cut_points=[0.5]"]);
    let first = run_offline(&cfg).unwrap();
    let stamp = fs::metadata(dir.path().join("artifacts/controller.json")).unwrap().modified().unwrap();
    let second = run_offline(&cfg).unwrap();
    assert_eq!(first.artifact_hashes, second.artifact_hashes);
    assert_eq!(
        fs::metadata(dir.path().join("artifacts/controller.json")).unwrap().modified().unwrap(),
        stamp
    );
}

#[test]
fn config_errors_map_to_exit_code_two() {
    let base = ExperimentConfig::desk();
    for bad in [
        "grid.frames=0",
        "no.such.key=1",
        "offline.theta_low=[1.0]",
        "model.groups=100000",
        "link.repetitions=[]",
        "missing_equals",
    ] {
        let err = base.with_overrides(&[bad.to_string()]).unwrap_err();
        assert_eq!(err.exit_code(), 2, "{bad}: {err}");
    }
    assert!(ExperimentConfig::preset("nope").is_err());
    let ok = base.with_overrides(&["grid.frames=7".into(), "link.snr_db=[3.0]".into()]).unwrap();
    assert_eq!(ok.grid.frames, 7);
    assert_eq!(ok.snr_range().min_db, 3.0);
    assert_ne!(ok.offline_hash(), base.offline_hash());
    let only_grid = base.with_overrides(&["grid.frames=9".into()]).unwrap();
    assert_eq!(only_grid.offline_hash(), base.offline_hash());
}

#[test]
fn schedule_is_piecewise_constant() {
    let cfg = tiny(&[]);
    let s = cfg.schedule_snrs(20);
    assert!(s[..15].iter().all(|&x| x == 12.0));
    assert!(s[15..].iter().all(|&x| x == 4.0));
}

#[test]
fn infeasible_budget_is_reported() {
    let cfg = tiny(&["link.nominal_budget=8"]);
    let err = build_bundle(&cfg, None).unwrap_err();
    assert_eq!(err.exit_code(), 3, "{err}");
}
