use proptest::prelude::*;

use twist_core::controller::{
    calibrate_channel_cuts, calibrate_controller, candidate_cuts, candidate_params, compute_stats,
    default_weight_grid, risk_score, select_mode, CandidateScore, ChannelCuts, Controller,
    ControllerParams, FeedbackStats, InputMask, SnrRange,
};
use twist_core::{GatedTokenGrid, GridShape, SyncMode, TokenGrid};

fn params(eta: [f64; 4], lo: f64, hi: f64) -> ControllerParams {
    ControllerParams {
        eta_rho: eta[0],
        eta_drift: eta[1],
        eta_priority: eta[2],
        eta_gamma: eta[3],
        theta_low: lo,
        theta_high: hi,
        mask: InputMask::ALL,
    }
}

fn stats_strategy() -> impl Strategy<Value = FeedbackStats> {
    (0.0f64..=1.0, 0.0f64..=1.0, 0.0f64..=1.0, 0u8..=1).prop_map(|(g, r, d, q)| FeedbackStats {
        gamma_bar: g,
        erasure_ratio: r,
        drift: d,
        priority: q,
    })
}

fn rank(m: SyncMode) -> u8 {
    match m {
        SyncMode::Low => 0,
        SyncMode::Med => 1,
        SyncMode::High => 2,
    }
}

proptest! {
    #[test]
    fn priority_frames_never_go_low(psi in -5.0f64..5.0, lo in -2.0f64..0.0, gap in 0.01f64..3.0) {
        let p = params([1.0; 4], lo, lo + gap);
        prop_assert_ne!(select_mode(psi, 1, &p), SyncMode::Low);
    }

    #[test]
    fn mode_is_monotone_in_risk(a in -5.0f64..5.0, b in -5.0f64..5.0, q in 0u8..=1) {
        let p = params([1.0; 4], -0.25, 0.5);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(rank(select_mode(lo, q, &p)) <= rank(select_mode(hi, q, &p)));
    }

    #[test]
    fn masked_input_is_ignored(s in stats_strategy(), other in 0.0f64..=1.0) {
        let base = params([1.0, 2.0, 0.5, 1.5], -0.25, 0.5);
        let cases = [
            (InputMask { gamma: false, ..InputMask::ALL }, FeedbackStats { gamma_bar: other, ..s }),
            (InputMask { rho: false, ..InputMask::ALL }, FeedbackStats { erasure_ratio: other, ..s }),
            (InputMask { drift: false, ..InputMask::ALL }, FeedbackStats { drift: other, ..s }),
        ];
        for (mask, changed) in cases {
            let p = base.with_mask(mask);
            prop_assert_eq!(risk_score(&s, &p), risk_score(&changed, &p));
        }
        let no_q = base.with_mask(InputMask { priority: false, ..InputMask::ALL });
        let flipped = FeedbackStats { priority: 1 - s.priority, ..s };
        prop_assert_eq!(risk_score(&s, &no_q), risk_score(&flipped, &no_q));
    }

    #[test]
    fn channel_baseline_ignores_twin_statistics(s in stats_strategy(), r in 0.0f64..=1.0, d in 0.0f64..=1.0) {
        let c = Controller::ChannelAdaptive { cuts: ChannelCuts { lower: 0.3, upper: 0.7 } };
        let other = FeedbackStats { erasure_ratio: r, drift: d, ..s };
        prop_assert_eq!(c.next_mode(&s), c.next_mode(&other));
    }
}

#[test]
fn risk_score_examples() {
    let s = FeedbackStats {
        gamma_bar: 1.0,
        erasure_ratio: 0.0,
        drift: 0.0,
        priority: 0,
    };
    assert_eq!(risk_score(&s, &params([1.0; 4], -0.5, 0.5)), -1.0);
    let p = params([1.0; 4], -0.25, 0.5);
    assert_eq!(select_mode(0.5, 0, &p), SyncMode::High);
    assert_eq!(select_mode(-0.25, 0, &p), SyncMode::Low);
    assert_eq!(select_mode(-0.25, 1, &p), SyncMode::Med);
    assert_eq!(select_mode(0.1, 0, &p), SyncMode::Med);
}

#[test]
fn feedback_statistics_examples() {
    let shape = GridShape::new(2, 2);
    let range = SnrRange {
        min_db: 0.0,
        max_db: 20.0,
    };
    let gated = GatedTokenGrid::new(shape, vec![Some(1), None, Some(2), None]).unwrap();
    let twin = TokenGrid::new(shape, vec![1, 5, 2, 3]).unwrap();
    let prev = TokenGrid::new(shape, vec![1, 5, 2, 4]).unwrap();
    let s = compute_stats(&gated, &twin, Some(&prev), 15.0, range, 1).unwrap();
    assert_eq!(s.erasure_ratio, 0.5);
    assert_eq!(s.drift, 0.25);
    assert_eq!(s.gamma_bar, 0.75);
    assert_eq!(s.priority, 1);
    let first = compute_stats(&gated, &twin, None, 30.0, range, 0).unwrap();
    assert_eq!(first.drift, 0.0);
    assert_eq!(first.gamma_bar, 1.0);
}

#[test]
fn full_grid_size() {
    let c = candidate_params(&default_weight_grid(), &[-0.5, -0.25, 0.0], &[0.25, 0.5, 0.75], InputMask::ALL);
    assert_eq!(c.len(), 4usize.pow(4) * 9);
    let masked = candidate_params(
        &default_weight_grid(),
        &[-0.5],
        &[0.5],
        InputMask { gamma: false, ..InputMask::ALL },
    );
    assert_eq!(masked.len(), 64);
    assert!(masked.iter().all(|p| p.eta_gamma == 0.0));
    assert!(candidate_cuts(&[0.0, 0.5, 1.0]).iter().all(|c| c.lower <= c.upper));
    assert_eq!(candidate_cuts(&[0.0, 0.5, 1.0]).len(), 6);
}

#[test]
fn calibration_tie_rules() {
    let cands = vec![
        params([1.0, 0.0, 0.0, 0.0], -0.5, 0.5),
        params([0.5, 0.0, 0.0, 0.0], -0.5, 0.5),
        params([0.5, 0.0, 0.0, 0.0], -0.5, 0.25),
        params([2.0, 0.0, 0.0, 0.0], -0.5, 0.5),
    ];
    let score = |p: &ControllerParams| {
        Ok(CandidateScore {
            objective: if p.eta_rho == 2.0 { 2.0 } else { 1.0 },
            mean_cost: if p.eta_rho == 1.0 { 1.5 } else { 1.0 },
        })
    };
    let (best, s) = calibrate_controller(&cands, score).unwrap();
    assert_eq!(best, cands[2]);
    assert_eq!(s.objective, 1.0);

    let single = vec![cands[3]];
    assert_eq!(calibrate_controller(&single, score).unwrap().0, cands[3]);
    assert!(calibrate_controller(&[], score).is_err());
    let bad = vec![params([1.0; 4], 0.5, 0.5)];
    assert!(calibrate_controller(&bad, score).is_err());
}

#[test]
fn cut_calibration_prefers_lower_cost_then_smaller_cuts() {
    let cuts = candidate_cuts(&[0.0, 0.5, 1.0]);
    let (best, _) = calibrate_channel_cuts(&cuts, |c| {
        Ok(CandidateScore {
            objective: 1.0,
            mean_cost: if c.upper == 1.0 { 2.0 } else { 1.0 },
        })
    })
    .unwrap();
    assert_eq!(best, ChannelCuts { lower: 0.0, upper: 0.0 });
}

#[test]
fn channel_baseline_extremes() {
    let cuts = ChannelCuts {
        lower: 0.3,
        upper: 0.7,
    };
    assert_eq!(cuts.select(1.0), SyncMode::Low);
    assert_eq!(cuts.select(0.0), SyncMode::High);
    assert_eq!(cuts.select(0.5), SyncMode::Med);
    assert_eq!(cuts.select(0.3), SyncMode::Med);
}
