use proptest::prelude::*;
use rand::Rng;

use twist_core::phy::token_posteriors;
use twist_core::receiver::{
    bayes_gate_check, calibrate_thresholds, complete, gate, CompletionKind, CompletionModel,
    GateAction, DEFAULT_THRESHOLD_GRID,
};
use twist_core::rng::rng_from_seed;
use twist_core::scene::{generate_episode, SceneConfig};
use twist_core::{GatedTokenGrid, GridShape, GroupMap, Token, TokenAlphabet, TokenGrid};

/// Minimum expected-risk action over accept-k (risk `w (1 - p_k)`) and erase
/// (risk `lambda`). Ties prefer accepting, then the smaller token.
fn brute_force_bayes(posterior: &[f64], w: f64, lambda: f64) -> GateAction {
    let mut best = (GateAction::Erase, lambda);
    let mut accept: Option<(usize, f64)> = None;
    for (k, &p) in posterior.iter().enumerate() {
        let risk = w * (1.0 - p);
        if accept.is_none_or(|(_, r)| risk < r) {
            accept = Some((k, risk));
        }
    }
    if let Some((k, r)) = accept {
        if r <= best.1 {
            best = (GateAction::Accept(k as Token), r);
        }
    }
    best.0
}

fn posterior_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.001f64..1.0, 8).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn threshold_rule_is_bayes_optimal(
        post in posterior_strategy(),
        w in 0.01f64..10.0,
        frac in 0.0f64..=1.0,
    ) {
        let lambda = w * frac;
        prop_assert_eq!(bayes_gate_check(&post, w, lambda).unwrap(), brute_force_bayes(&post, w, lambda));
    }
}

fn one_group(n: usize) -> GroupMap {
    GroupMap {
        groups: 1,
        assignment: vec![0; n],
        sizes: vec![n],
        utilities: vec![1.0],
    }
}

proptest! {
    #[test]
    fn gating_keeps_exactly_the_confident_positions(
        llrs in prop::collection::vec(-6.0f64..6.0, 24),
        tau in 0.0f64..=1.0,
    ) {
        let alphabet = TokenAlphabet::new(8).unwrap();
        let soft = token_posteriors(&llrs, &alphabet, GridShape::new(2, 4)).unwrap();
        let gated = gate(&soft, &one_group(8), &[tau]).unwrap();
        for i in 0..8 {
            let expect = (soft.confidence[i] >= tau).then_some(soft.hard[i]);
            prop_assert_eq!(gated.entries()[i], expect);
        }
    }

    #[test]
    fn completion_keeps_accepted_tokens(
        entries in prop::collection::vec(prop::option::of(0u32..16), 20),
        prev in prop::collection::vec(0u32..16, 20),
        kind in prop::sample::select(vec![
            CompletionKind::TemporalCopy,
            CompletionKind::NeighborVote,
            CompletionKind::Cooccurrence,
        ]),
        with_prev in any::<bool>(),
    ) {
        let shape = GridShape::new(4, 5);
        let model = trained_model(kind);
        let gated = GatedTokenGrid::new(shape, entries.clone()).unwrap();
        let prev = TokenGrid::new(shape, prev).unwrap();
        let out = complete(&gated, with_prev.then_some(&prev), &model).unwrap();
        for (o, e) in out.tokens().iter().zip(&entries) {
            if let Some(t) = e {
                prop_assert_eq!(o, t);
            }
            prop_assert!((*o as usize) < model.codebook_size);
        }
    }
}

fn trained_model(kind: CompletionKind) -> CompletionModel {
    let cfg = SceneConfig {
        height: 4,
        width: 5,
        codebook_size: 16,
        background_band: twist_core::scene::TokenBand::new(0, 4),
        vehicle_band: twist_core::scene::TokenBand::new(4, 4),
        pedestrian_band: twist_core::scene::TokenBand::new(8, 4),
        vehicle_size: (2, 2),
        pedestrian_size: (1, 1),
        ..SceneConfig::default()
    };
    let episodes = vec![generate_episode(&cfg, 40).unwrap()];
    CompletionModel::train(kind, 16, &episodes).unwrap()
}

#[test]
fn temporal_copy_restores_previous_twin() {
    let shape = GridShape::new(2, 2);
    let model = trained_model(CompletionKind::TemporalCopy);
    let gated = GatedTokenGrid::new(shape, vec![Some(3), None, None, Some(4)]).unwrap();
    let prev = TokenGrid::new(shape, vec![9, 8, 7, 6]).unwrap();
    assert_eq!(complete(&gated, Some(&prev), &model).unwrap().tokens(), &[3, 8, 7, 4]);
    let fallback = complete(&gated, None, &model).unwrap();
    assert_eq!(fallback.tokens()[1], model.background_token);
}

#[test]
fn all_erased_without_history_falls_back_to_background() {
    let shape = GridShape::new(3, 3);
    let model = trained_model(CompletionKind::Cooccurrence);
    let gated = GatedTokenGrid::new(shape, vec![None; 9]).unwrap();
    let out = complete(&gated, None, &model).unwrap();
    assert!(out.tokens().iter().all(|&t| t == model.background_token));
}

#[test]
fn conditionals_are_normalized() {
    let model = trained_model(CompletionKind::Cooccurrence);
    for a in 0..16 {
        let n: f64 = (0..16).map(|b| model.neighbor_prob(a, b)).sum();
        let t: f64 = (0..16).map(|b| model.temporal_prob(a, b)).sum();
        assert!((n - 1.0).abs() < 1e-12 && (t - 1.0).abs() < 1e-12);
    }
}

#[test]
fn completion_model_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("completion.bin");
    let model = trained_model(CompletionKind::Cooccurrence);
    model.save(&path).unwrap();
    assert_eq!(CompletionModel::load(&path).unwrap(), model);
    let mut bytes = std::fs::read(&path).unwrap();
    bytes.truncate(bytes.len() - 3);
    std::fs::write(&path, bytes).unwrap();
    assert!(CompletionModel::load(&path).is_err());
}

/// Exhaustive minimum of a separable objective over the candidate grid.
#[test]
fn coordinate_search_finds_separable_optimum() {
    for seed in 0..20u64 {
        let mut rng = rng_from_seed(seed);
        let groups = rng.random_range(1..=4);
        let costs: Vec<Vec<f64>> = (0..groups)
            .map(|_| DEFAULT_THRESHOLD_GRID.iter().map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        let lookup = |g: usize, tau: f64| {
            let idx = DEFAULT_THRESHOLD_GRID.iter().position(|&c| c == tau).unwrap_or(5);
            costs[g][idx]
        };
        let objective = |tau: &[f64]| Ok(tau.iter().enumerate().map(|(g, &t)| lookup(g, t)).sum::<f64>());
        let cal = calibrate_thresholds(groups, &DEFAULT_THRESHOLD_GRID, objective).unwrap();
        let optimum: f64 = costs
            .iter()
            .map(|row| row.iter().copied().fold(f64::INFINITY, f64::min))
            .sum();
        assert!((cal.loss - optimum).abs() < 1e-12, "seed {seed}");
        assert!(cal.history.windows(2).all(|w| w[1] <= w[0]));
        assert!(cal.history.len() <= 6);
    }
}

#[test]
fn calibrated_thresholds_are_coordinatewise_optimal() {
    let objective = |tau: &[f64]| {
        Ok((tau[0] - 0.3).powi(2) + (tau[1] - 0.8).powi(2) + tau[0] * tau[1] + 0.2 * (tau[2] - tau[0]).abs())
    };
    let cal = calibrate_thresholds(3, &DEFAULT_THRESHOLD_GRID, objective).unwrap();
    for g in 0..3 {
        for &c in &DEFAULT_THRESHOLD_GRID {
            let mut t = cal.thresholds.clone();
            t[g] = c;
            assert!(objective(&t).unwrap() >= cal.loss - 1e-12);
        }
    }
    let zero = objective(&[0.0; 3]).unwrap();
    assert!(cal.loss <= zero);
}

#[test]
fn flat_objective_keeps_smallest_candidate() {
    let cal = calibrate_thresholds(2, &DEFAULT_THRESHOLD_GRID, |_| Ok(1.0)).unwrap();
    assert_eq!(cal.thresholds, vec![0.0, 0.0]);
}
