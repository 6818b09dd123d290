//! Closed-loop synchronization-mode selection from twin-side feedback
//! statistics, plus the static and channel-only baselines.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TwistError};
use crate::par::par_map;
use crate::types::{GatedTokenGrid, SyncMode, TokenGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeedbackStats {
    /// Normalized channel quality; larger is better.
    pub gamma_bar: f64,
    pub erasure_ratio: f64,
    pub drift: f64,
    pub priority: u8,
}

/// SNR interval mapped onto `gamma_bar` in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrRange {
    pub min_db: f64,
    pub max_db: f64,
}

impl SnrRange {
    pub fn normalize(&self, snr_db: f64) -> f64 {
        let span = self.max_db - self.min_db;
        if span <= 0.0 {
            return if snr_db >= self.max_db { 1.0 } else { 0.0 };
        }
        ((snr_db - self.min_db) / span).clamp(0.0, 1.0)
    }
}

/// Feedback statistics of one frame. `twin_prev` is `None` on the first
/// frame, which fixes the drift at zero.
pub fn compute_stats(
    gated: &GatedTokenGrid,
    twin: &TokenGrid,
    twin_prev: Option<&TokenGrid>,
    snr_db: f64,
    range: SnrRange,
    priority: u8,
) -> Result<FeedbackStats> {
    let prev = twin_prev.map(GatedTokenGrid::accept_all);
    compute_stats_partial(
        gated,
        &GatedTokenGrid::accept_all(twin),
        prev.as_ref(),
        snr_db,
        range,
        priority,
    )
}

/// Same as [`compute_stats`] for twin states that may keep erasures; an
/// erased position counts as changed unless it was erased before too.
pub fn compute_stats_partial(
    gated: &GatedTokenGrid,
    twin: &GatedTokenGrid,
    twin_prev: Option<&GatedTokenGrid>,
    snr_db: f64,
    range: SnrRange,
    priority: u8,
) -> Result<FeedbackStats> {
    if gated.shape() != twin.shape() {
        return Err(TwistError::DimensionMismatch(
            "gated grid and twin state differ in shape".into(),
        ));
    }
    let drift = match twin_prev {
        Some(prev) => {
            if prev.shape() != twin.shape() {
                return Err(TwistError::DimensionMismatch(
                    "consecutive twin states differ in shape".into(),
                ));
            }
            let changed = twin
                .entries()
                .iter()
                .zip(prev.entries())
                .filter(|(a, b)| a != b)
                .count();
            changed as f64 / twin.len() as f64
        }
        None => 0.0,
    };
    Ok(FeedbackStats {
        gamma_bar: range.normalize(snr_db),
        erasure_ratio: gated.erased_count() as f64 / gated.len() as f64,
        drift,
        priority,
    })
}

/// Which feedback inputs the risk score may read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputMask {
    pub gamma: bool,
    pub rho: bool,
    pub drift: bool,
    pub priority: bool,
}

impl InputMask {
    pub const ALL: InputMask = InputMask {
        gamma: true,
        rho: true,
        drift: true,
        priority: true,
    };
}

impl Default for InputMask {
    fn default() -> Self {
        Self::ALL
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerParams {
    pub eta_rho: f64,
    pub eta_drift: f64,
    pub eta_priority: f64,
    pub eta_gamma: f64,
    pub theta_low: f64,
    pub theta_high: f64,
    #[serde(default)]
    pub mask: InputMask,
}

impl ControllerParams {
    pub fn validate(&self) -> Result<()> {
        let etas = [self.eta_rho, self.eta_drift, self.eta_priority, self.eta_gamma];
        if etas.iter().any(|e| !(*e >= 0.0) || !e.is_finite()) {
            return Err(TwistError::InvalidParameter("controller weights must be >= 0".into()));
        }
        if !(self.theta_low < self.theta_high) {
            return Err(TwistError::InvalidParameter(
                "controller needs theta_low < theta_high".into(),
            ));
        }
        Ok(())
    }

    pub fn with_mask(self, mask: InputMask) -> Self {
        Self { mask, ..self }
    }

    fn key(&self) -> [f64; 6] {
        [
            self.eta_rho,
            self.eta_drift,
            self.eta_priority,
            self.eta_gamma,
            self.theta_low,
            self.theta_high,
        ]
    }
}

/// Linear synchronization-risk score; masked inputs contribute zero.
pub fn risk_score(stats: &FeedbackStats, params: &ControllerParams) -> f64 {
    let m = params.mask;
    let term = |on: bool, w: f64, x: f64| if on { w * x } else { 0.0 };
    term(m.rho, params.eta_rho, stats.erasure_ratio)
        + term(m.drift, params.eta_drift, stats.drift)
        + term(m.priority, params.eta_priority, f64::from(stats.priority))
        - term(m.gamma, params.eta_gamma, stats.gamma_bar)
}

/// Threshold rule on the risk score; a priority frame is never sent to LOW.
pub fn select_mode(psi: f64, priority: u8, params: &ControllerParams) -> SyncMode {
    if psi >= params.theta_high {
        SyncMode::High
    } else if psi <= params.theta_low && priority == 0 {
        SyncMode::Low
    } else {
        SyncMode::Med
    }
}

/// Channel-only baseline: LOW at or above `upper`, HIGH below `lower`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelCuts {
    pub lower: f64,
    pub upper: f64,
}

impl ChannelCuts {
    pub fn select(&self, gamma_bar: f64) -> SyncMode {
        if gamma_bar >= self.upper {
            SyncMode::Low
        } else if gamma_bar < self.lower {
            SyncMode::High
        } else {
            SyncMode::Med
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Controller {
    Static { mode: SyncMode },
    ChannelAdaptive { cuts: ChannelCuts },
    Risk { params: ControllerParams },
}

impl Controller {
    /// Next mode from the statistics of the frame just received.
    pub fn next_mode(&self, stats: &FeedbackStats) -> SyncMode {
        match self {
            Controller::Static { mode } => *mode,
            Controller::ChannelAdaptive { cuts } => cuts.select(stats.gamma_bar),
            Controller::Risk { params } => {
                select_mode(risk_score(stats, params), stats.priority, params)
            }
        }
    }
}

pub fn static_mode(mode: SyncMode) -> Controller {
    Controller::Static { mode }
}

pub fn channel_adaptive(cuts: ChannelCuts) -> Controller {
    Controller::ChannelAdaptive { cuts }
}

/// Closed-loop score of one candidate: the weighted objective and the mean
/// normalized cost it incurred.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub objective: f64,
    pub mean_cost: f64,
}

pub fn default_weight_grid() -> Vec<f64> {
    vec![0.0, 0.5, 1.0, 2.0]
}

/// Every `(eta, theta)` combination of the given grids with valid thresholds.
pub fn candidate_params(
    weights: &[f64],
    theta_low: &[f64],
    theta_high: &[f64],
    mask: InputMask,
) -> Vec<ControllerParams> {
    let pick = |on: bool| if on { weights.to_vec() } else { vec![0.0] };
    let mut out = Vec::new();
    for &eta_rho in &pick(mask.rho) {
        for &eta_drift in &pick(mask.drift) {
            for &eta_priority in &pick(mask.priority) {
                for &eta_gamma in &pick(mask.gamma) {
                    for &lo in theta_low {
                        for &hi in theta_high {
                            if lo < hi {
                                out.push(ControllerParams {
                                    eta_rho,
                                    eta_drift,
                                    eta_priority,
                                    eta_gamma,
                                    theta_low: lo,
                                    theta_high: hi,
                                    mask,
                                });
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Grid search for the risk controller. Ties on the objective go to the
/// lower mean cost, then to the lexicographically smaller parameters.
pub fn calibrate_controller<F>(
    candidates: &[ControllerParams],
    evaluate: F,
) -> Result<(ControllerParams, CandidateScore)>
where
    F: Fn(&ControllerParams) -> Result<CandidateScore> + Sync + Send,
{
    if candidates.is_empty() {
        return Err(TwistError::EmptyInput("controller candidate grid"));
    }
    for c in candidates {
        c.validate()?;
    }
    let scores = par_map(candidates, |c| evaluate(c));
    let mut best: Option<(ControllerParams, CandidateScore)> = None;
    for (c, s) in candidates.iter().zip(scores) {
        let s = s?;
        let better = match &best {
            None => true,
            Some((bc, bs)) => compare_candidates((c, &s), (bc, bs)) == Ordering::Less,
        };
        if better {
            best = Some((*c, s));
        }
    }
    Ok(best.expect("nonempty candidates"))
}

fn compare_candidates(
    a: (&ControllerParams, &CandidateScore),
    b: (&ControllerParams, &CandidateScore),
) -> Ordering {
    a.1.objective
        .total_cmp(&b.1.objective)
        .then(a.1.mean_cost.total_cmp(&b.1.mean_cost))
        .then_with(|| {
            a.0.key()
                .iter()
                .zip(b.0.key())
                .map(|(x, y)| x.total_cmp(&y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
}

/// Cut-point candidates for the channel-only baseline.
pub fn candidate_cuts(points: &[f64]) -> Vec<ChannelCuts> {
    let mut out = Vec::new();
    for &lower in points {
        for &upper in points {
            if lower <= upper {
                out.push(ChannelCuts { lower, upper });
            }
        }
    }
    out
}

/// Grid search for the channel-only baseline, same tie rules as
/// [`calibrate_controller`].
pub fn calibrate_channel_cuts<F>(
    candidates: &[ChannelCuts],
    evaluate: F,
) -> Result<(ChannelCuts, CandidateScore)>
where
    F: Fn(&ChannelCuts) -> Result<CandidateScore> + Sync + Send,
{
    if candidates.is_empty() {
        return Err(TwistError::EmptyInput("channel cut grid"));
    }
    let scores = par_map(candidates, |c| evaluate(c));
    let mut best: Option<(ChannelCuts, CandidateScore)> = None;
    for (c, s) in candidates.iter().zip(scores) {
        let s = s?;
        let better = match &best {
            None => true,
            Some((bc, bs)) => s
                .objective
                .total_cmp(&bs.objective)
                .then(s.mean_cost.total_cmp(&bs.mean_cost))
                .then(c.lower.total_cmp(&bc.lower))
                .then(c.upper.total_cmp(&bc.upper))
                .is_lt(),
        };
        if better {
            best = Some((*c, s));
        }
    }
    Ok(best.expect("nonempty candidates"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::GridShape;

    fn params() -> ControllerParams {
        ControllerParams {
            eta_rho: 1.0,
            eta_drift: 1.0,
            eta_priority: 1.0,
            eta_gamma: 1.0,
            theta_low: -0.25,
            theta_high: 0.5,
            mask: InputMask::ALL,
        }
    }

    fn stats(gamma_bar: f64, erasure_ratio: f64, drift: f64, priority: u8) -> FeedbackStats {
        FeedbackStats {
            gamma_bar,
            erasure_ratio,
            drift,
            priority,
        }
    }

    #[test]
    fn stats_examples() {
        let shape = GridShape::new(2, 2);
        let twin = TokenGrid::new(shape, vec![1, 2, 3, 4]).unwrap();
        let range = SnrRange {
            min_db: 0.0,
            max_db: 20.0,
        };
        let clean = GatedTokenGrid::accept_all(&twin);
        let s = compute_stats(&clean, &twin, Some(&twin), 10.0, range, 0).unwrap();
        assert_eq!((s.erasure_ratio, s.drift, s.gamma_bar), (0.0, 0.0, 0.5));

        let erased = GatedTokenGrid::new(shape, vec![None; 4]).unwrap();
        let s = compute_stats(&erased, &twin, None, 30.0, range, 1).unwrap();
        assert_eq!((s.erasure_ratio, s.drift, s.gamma_bar, s.priority), (1.0, 0.0, 1.0, 1));

        let moved = TokenGrid::new(shape, vec![1, 2, 3, 0]).unwrap();
        let s = compute_stats(&clean, &moved, Some(&twin), -5.0, range, 0).unwrap();
        assert_eq!((s.drift, s.gamma_bar), (0.25, 0.0));
    }

    #[test]
    fn score_examples() {
        assert_eq!(risk_score(&stats(0.0, 0.0, 0.0, 0), &params()), 0.0);
        assert_eq!(risk_score(&stats(1.0, 0.0, 0.0, 0), &params()), -1.0);
        let no_rho = params().with_mask(InputMask {
            rho: false,
            ..InputMask::ALL
        });
        assert_eq!(
            risk_score(&stats(0.3, 0.9, 0.2, 1), &no_rho),
            risk_score(&stats(0.3, 0.0, 0.2, 1), &params())
        );
    }

    #[test]
    fn mode_rule_boundaries() {
        let p = params();
        assert_eq!(select_mode(p.theta_high, 0, &p), SyncMode::High);
        assert_eq!(select_mode(p.theta_low, 0, &p), SyncMode::Low);
        assert_eq!(select_mode(p.theta_low - 1.0, 1, &p), SyncMode::Med);
        assert_eq!(select_mode(0.0, 0, &p), SyncMode::Med);
    }

    #[test]
    fn baselines() {
        let s = static_mode(SyncMode::High);
        assert_eq!(s.next_mode(&stats(1.0, 1.0, 1.0, 1)), SyncMode::High);
        let ca = channel_adaptive(ChannelCuts {
            lower: 0.3,
            upper: 0.7,
        });
        assert_eq!(ca.next_mode(&stats(1.0, 0.0, 0.0, 0)), SyncMode::Low);
        assert_eq!(ca.next_mode(&stats(0.5, 0.0, 0.0, 0)), SyncMode::Med);
        assert_eq!(ca.next_mode(&stats(0.1, 0.0, 0.0, 0)), SyncMode::High);
        assert_eq!(
            ca.next_mode(&stats(0.5, 0.0, 0.0, 0)),
            ca.next_mode(&stats(0.5, 0.9, 0.0, 0))
        );
    }

    #[test]
    fn single_candidate_is_returned() {
        let (best, _) = calibrate_controller(&[params()], |_| {
            Ok(CandidateScore {
                objective: 3.0,
                mean_cost: 1.0,
            })
        })
        .unwrap();
        assert_eq!(best, params());
        assert!(calibrate_controller(&[], |_| unreachable!()).is_err());
    }

    #[test]
    fn ties_prefer_cheaper_then_smaller_params() {
        let a = params();
        let b = ControllerParams { eta_rho: 0.5, ..a };
        let c = ControllerParams { eta_rho: 0.0, ..a };
        let (best, _) = calibrate_controller(&[a, b, c], |p| {
            Ok(CandidateScore {
                objective: 1.0,
                mean_cost: if p.eta_rho == 0.0 { 1.5 } else { 1.0 },
            })
        })
        .unwrap();
        assert_eq!(best, b);
    }

    #[test]
    fn candidate_grid_respects_mask_and_ordering() {
        let w = default_weight_grid();
        let full = candidate_params(&w, &[-0.5, -0.25, 0.0], &[0.25, 0.5, 0.75], InputMask::ALL);
        assert_eq!(full.len(), 256 * 9);
        let masked = candidate_params(
            &w,
            &[0.0],
            &[0.5],
            InputMask {
                gamma: false,
                ..InputMask::ALL
            },
        );
        assert_eq!(masked.len(), 64);
        assert!(masked.iter().all(|p| p.eta_gamma == 0.0));
    }
}
