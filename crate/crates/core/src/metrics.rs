//! Evaluation metrics over traces: traffic-state macro-F1, twin mismatch,
//! accepted-update errors, erasure ratio and normalized cost.
//!
//! F1 convention: a class with no true positives, false positives or false
//! negatives scores 1 (never present, never predicted); any other class with
//! zero true positives scores 0.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TwistError};
use crate::phy::SoftTokenFrame;
use crate::scene::TrafficLabel;
use crate::types::{ensure_same_shape, GatedTokenGrid, TokenGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Scores {
    pub car: f64,
    pub ped: f64,
    pub density: f64,
    pub macro_f1: f64,
}

fn class_f1(pairs: impl Iterator<Item = (u8, u8)>, class: u8) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for (p, y) in pairs {
        match (p == class, y == class) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    if tp + fp + fn_ == 0 {
        1.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

pub fn macro_f1(predictions: &[TrafficLabel], labels: &[TrafficLabel]) -> Result<F1Scores> {
    if predictions.is_empty() {
        return Err(TwistError::EmptyInput("macro-F1 frames"));
    }
    if predictions.len() != labels.len() {
        return Err(TwistError::DimensionMismatch(
            "prediction and label counts differ".into(),
        ));
    }
    let task = |t: usize| {
        predictions
            .iter()
            .zip(labels)
            .map(move |(p, y)| (p.as_array()[t], y.as_array()[t]))
    };
    let car = class_f1(task(0), 1);
    let ped = class_f1(task(1), 1);
    let classes = TrafficLabel::TASK_CLASSES[2] as u8;
    let density = (0..classes).map(|c| class_f1(task(2), c)).sum::<f64>() / f64::from(classes);
    Ok(F1Scores {
        car,
        ped,
        density,
        macro_f1: (car + ped + density) / 3.0,
    })
}

/// Macro-F1 over the frames with `q = 1`; `None` when there are none.
pub fn urgent_macro_f1(
    predictions: &[TrafficLabel],
    labels: &[TrafficLabel],
    priorities: &[u8],
) -> Result<Option<F1Scores>> {
    if priorities.len() != labels.len() {
        return Err(TwistError::DimensionMismatch(
            "priority and label counts differ".into(),
        ));
    }
    let (p, y): (Vec<TrafficLabel>, Vec<TrafficLabel>) = predictions
        .iter()
        .zip(labels)
        .zip(priorities)
        .filter(|(_, &q)| q == 1)
        .map(|((p, y), _)| (*p, *y))
        .unzip();
    if p.is_empty() {
        return Ok(None);
    }
    macro_f1(&p, &y).map(Some)
}

pub fn tsmr(twin: &TokenGrid, source: &TokenGrid) -> Result<f64> {
    Ok(twin.hamming(source)? as f64 / source.len() as f64)
}

/// Mismatch rate of a twin state that may still hold erasures; an erased
/// position never matches.
pub fn tsmr_gated(twin: &GatedTokenGrid, source: &TokenGrid) -> Result<f64> {
    ensure_same_shape(twin.shape(), source.shape())?;
    let wrong = twin
        .entries()
        .iter()
        .zip(source.tokens())
        .filter(|(e, &t)| **e != Some(t))
        .count();
    Ok(wrong as f64 / source.len() as f64)
}

/// Fraction of accepted positions whose hard token is wrong; `None` when
/// nothing was accepted.
pub fn auer(
    soft: &SoftTokenFrame,
    gated: &GatedTokenGrid,
    source: &TokenGrid,
) -> Result<Option<f64>> {
    ensure_same_shape(soft.shape(), source.shape())?;
    ensure_same_shape(gated.shape(), source.shape())?;
    let mut accepted = 0usize;
    let mut wrong = 0usize;
    for ((e, &h), &t) in gated.entries().iter().zip(&soft.hard).zip(source.tokens()) {
        if e.is_some() {
            accepted += 1;
            wrong += usize::from(h != t);
        }
    }
    Ok((accepted > 0).then(|| wrong as f64 / accepted as f64))
}

pub fn erasure_ratio(gated: &GatedTokenGrid) -> f64 {
    gated.erased_count() as f64 / gated.len() as f64
}

/// Mean per-frame budget relative to the nominal budget.
pub fn normalized_cost(budgets: &[u64], nominal_budget: u64) -> Result<f64> {
    if budgets.is_empty() {
        return Err(TwistError::EmptyInput("cost sequence"));
    }
    if nominal_budget == 0 {
        return Err(TwistError::InvalidParameter("nominal budget must be positive".into()));
    }
    let sum: f64 = budgets.iter().map(|&b| b as f64 / nominal_budget as f64).sum();
    Ok(sum / budgets.len() as f64)
}

/// Trailing-window share of frames whose full label triple is predicted
/// exactly; the first frames use the shorter available window.
pub fn rolling_correctness(
    predictions: &[TrafficLabel],
    labels: &[TrafficLabel],
    window: usize,
) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(TwistError::InvalidParameter("window must be >= 1".into()));
    }
    if predictions.len() != labels.len() {
        return Err(TwistError::DimensionMismatch(
            "prediction and label counts differ".into(),
        ));
    }
    let hits: Vec<u32> = predictions
        .iter()
        .zip(labels)
        .map(|(p, y)| u32::from(p == y))
        .collect();
    let mut out = Vec::with_capacity(hits.len());
    let mut sum = 0u32;
    for t in 0..hits.len() {
        sum += hits[t];
        if t >= window {
            sum -= hits[t - window];
        }
        out.push(f64::from(sum) / (t + 1).min(window) as f64);
    }
    Ok(out)
}

/// Sample mean and standard deviation (n - 1 denominator, 0 for n = 1).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
