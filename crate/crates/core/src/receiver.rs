//! Twin-side recovery: confidence gating, erasure completion, twin-state
//! update and group-wise threshold calibration.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TwistError};
use crate::par::par_map;
use crate::phy::SoftTokenFrame;
use crate::scene::LabeledFrame;
use crate::types::{ensure_same_shape, GatedTokenGrid, GroupMap, Token, TokenGrid};

/// Accepts position `i` iff its confidence reaches its group's threshold.
pub fn gate(soft: &SoftTokenFrame, groups: &GroupMap, thresholds: &[f64]) -> Result<GatedTokenGrid> {
    if groups.len() != soft.len() {
        return Err(TwistError::DimensionMismatch(
            "group map does not cover the frame".into(),
        ));
    }
    if thresholds.len() != groups.groups {
        return Err(TwistError::DimensionMismatch(format!(
            "{} thresholds for {} groups",
            thresholds.len(),
            groups.groups
        )));
    }
    if let Some(t) = thresholds.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(TwistError::InvalidParameter(format!("threshold {t} outside [0, 1]")));
    }
    let entries = soft
        .hard
        .iter()
        .zip(&soft.confidence)
        .enumerate()
        .map(|(i, (&t, &c))| (c >= thresholds[groups.group_of(i)]).then_some(t))
        .collect();
    GatedTokenGrid::new(soft.shape(), entries)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateAction {
    Accept(Token),
    Erase,
}

/// Bayes-optimal accept-or-erase decision for one position with wrong-update
/// cost `w` and erasure cost `lambda`, via the threshold `1 - lambda / w`.
/// Ties in the posterior resolve to the smallest token index.
pub fn bayes_gate_check(posterior: &[f64], w: f64, lambda: f64) -> Result<GateAction> {
    if !(w > 0.0) || !(0.0..=w).contains(&lambda) {
        return Err(TwistError::InvalidParameter(format!(
            "need w > 0 and 0 <= lambda <= w, got w={w}, lambda={lambda}"
        )));
    }
    if posterior.is_empty() {
        return Err(TwistError::EmptyInput("posterior"));
    }
    let mut best = 0;
    for (k, &p) in posterior.iter().enumerate() {
        if p > posterior[best] {
            best = k;
        }
    }
    let tau = 1.0 - lambda / w;
    Ok(if posterior[best] >= tau {
        GateAction::Accept(best as Token)
    } else {
        GateAction::Erase
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CompletionKind {
    TemporalCopy,
    NeighborVote,
    Cooccurrence,
}

impl CompletionKind {
    fn code(self) -> u8 {
        match self {
            CompletionKind::TemporalCopy => 0,
            CompletionKind::NeighborVote => 1,
            CompletionKind::Cooccurrence => 2,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(CompletionKind::TemporalCopy),
            1 => Some(CompletionKind::NeighborVote),
            2 => Some(CompletionKind::Cooccurrence),
            _ => None,
        }
    }
}

/// Completion statistics learned from clean training episodes: symmetrized
/// horizontal/vertical neighbour pair counts and same-position temporal
/// transition counts, both Laplace smoothed.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletionModel {
    pub kind: CompletionKind,
    pub codebook_size: usize,
    pub background_token: Token,
    pub max_iterations: usize,
    pub smoothing: f64,
    pub persistence_weight: f64,
    neighbor_counts: Vec<u64>,
    temporal_counts: Vec<u64>,
    neighbor_log_prob: Vec<f64>,
    temporal_log_prob: Vec<f64>,
}

const MODEL_MAGIC: &[u8; 4] = b"TWCM";
const MODEL_VERSION: u32 = 1;

fn log_conditionals(counts: &[u64], k: usize, smoothing: f64) -> Vec<f64> {
    let mut out = vec![0.0; k * k];
    for (row_out, row) in out.chunks_mut(k).zip(counts.chunks(k)) {
        let total: u64 = row.iter().sum();
        let denom = (total as f64 + smoothing * k as f64).ln();
        for (o, &c) in row_out.iter_mut().zip(row) {
            *o = (c as f64 + smoothing).ln() - denom;
        }
    }
    out
}

impl CompletionModel {
    pub fn train(
        kind: CompletionKind,
        codebook_size: usize,
        episodes: &[Vec<LabeledFrame>],
    ) -> Result<Self> {
        let k = codebook_size;
        let mut neighbor_counts = vec![0u64; k * k];
        let mut temporal_counts = vec![0u64; k * k];
        let mut token_counts = vec![0u64; k];
        let mut seen = false;
        for episode in episodes {
            let mut prev: Option<&TokenGrid> = None;
            for frame in episode {
                let grid = &frame.grid;
                let shape = grid.shape();
                let t = grid.tokens();
                for (i, &a) in t.iter().enumerate() {
                    if a as usize >= k {
                        return Err(TwistError::InvalidToken {
                            token: a,
                            codebook_size: k as u32,
                        });
                    }
                    seen = true;
                    token_counts[a as usize] += 1;
                    let (r, c) = (i / shape.width, i % shape.width);
                    let mut pair = |b: Token| {
                        neighbor_counts[a as usize * k + b as usize] += 1;
                        neighbor_counts[b as usize * k + a as usize] += 1;
                    };
                    if c + 1 < shape.width {
                        pair(t[i + 1]);
                    }
                    if r + 1 < shape.height {
                        pair(t[i + shape.width]);
                    }
                }
                if let Some(p) = prev {
                    for (&before, &after) in p.tokens().iter().zip(t) {
                        temporal_counts[before as usize * k + after as usize] += 1;
                    }
                }
                prev = Some(grid);
            }
        }
        if !seen {
            return Err(TwistError::EmptyInput("completion training set"));
        }
        let background_token = token_counts
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(t, _)| t as Token)
            .expect("nonempty codebook");
        Ok(Self::from_counts(
            kind,
            k,
            background_token,
            neighbor_counts,
            temporal_counts,
        ))
    }

    fn from_counts(
        kind: CompletionKind,
        k: usize,
        background_token: Token,
        neighbor_counts: Vec<u64>,
        temporal_counts: Vec<u64>,
    ) -> Self {
        let smoothing = 1.0;
        Self {
            kind,
            codebook_size: k,
            background_token,
            max_iterations: 8,
            smoothing,
            persistence_weight: 1.0,
            neighbor_log_prob: log_conditionals(&neighbor_counts, k, smoothing),
            temporal_log_prob: log_conditionals(&temporal_counts, k, smoothing),
            neighbor_counts,
            temporal_counts,
        }
    }

    pub fn with_kind(&self, kind: CompletionKind) -> Self {
        Self {
            kind,
            ..self.clone()
        }
    }

    /// Smoothed `P(token | neighbour)`; each row sums to one.
    pub fn neighbor_prob(&self, neighbor: Token, token: Token) -> f64 {
        self.neighbor_log_prob[neighbor as usize * self.codebook_size + token as usize].exp()
    }

    pub fn temporal_prob(&self, previous: Token, token: Token) -> f64 {
        self.temporal_log_prob[previous as usize * self.codebook_size + token as usize].exp()
    }

    /// Binary artifact: magic, version, dimensions, smoothing and raw counts
    /// (little endian).
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(MODEL_MAGIC)?;
        out.write_all(&MODEL_VERSION.to_le_bytes())?;
        out.write_all(&(self.codebook_size as u32).to_le_bytes())?;
        out.write_all(&[self.kind.code()])?;
        out.write_all(&(self.max_iterations as u32).to_le_bytes())?;
        out.write_all(&self.smoothing.to_le_bytes())?;
        out.write_all(&self.persistence_weight.to_le_bytes())?;
        out.write_all(&self.background_token.to_le_bytes())?;
        for &c in self.neighbor_counts.iter().chain(&self.temporal_counts) {
            out.write_all(&c.to_le_bytes())?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
        let bad = |m: &str| TwistError::ArtifactMismatch(format!("{}: {m}", path.display()));
        let mut cur = bytes.as_slice();
        let mut take = |n: usize| -> Result<&[u8]> {
            if cur.len() < n {
                return Err(bad("truncated completion model"));
            }
            let (head, tail) = cur.split_at(n);
            cur = tail;
            Ok(head)
        };
        if take(4)? != MODEL_MAGIC {
            return Err(bad("not a completion model"));
        }
        let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("4 bytes"));
        let f64_at = |b: &[u8]| f64::from_le_bytes(b.try_into().expect("8 bytes"));
        if u32_at(take(4)?) != MODEL_VERSION {
            return Err(bad("unsupported completion model version"));
        }
        let k = u32_at(take(4)?) as usize;
        let kind = CompletionKind::from_code(take(1)?[0]).ok_or_else(|| bad("unknown kind"))?;
        let max_iterations = u32_at(take(4)?) as usize;
        let smoothing = f64_at(take(8)?);
        let persistence_weight = f64_at(take(8)?);
        let background_token = u32_at(take(4)?);
        let mut counts = Vec::with_capacity(2 * k * k);
        for _ in 0..2 * k * k {
            counts.push(u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")));
        }
        let temporal = counts.split_off(k * k);
        let mut model = Self::from_counts(kind, k, background_token, counts, temporal);
        model.max_iterations = max_iterations;
        model.smoothing = smoothing;
        model.persistence_weight = persistence_weight;
        model.neighbor_log_prob = log_conditionals(&model.neighbor_counts, k, smoothing);
        model.temporal_log_prob = log_conditionals(&model.temporal_counts, k, smoothing);
        Ok(model)
    }

    fn temporal_fill(&self, position: usize, prev: Option<&TokenGrid>) -> Token {
        prev.map_or(self.background_token, |p| p.tokens()[position])
    }
}

/// Restores every erased position of `gated`.
pub fn complete(
    gated: &GatedTokenGrid,
    prev_twin: Option<&TokenGrid>,
    model: &CompletionModel,
) -> Result<TokenGrid> {
    if let Some(p) = prev_twin {
        ensure_same_shape(gated.shape(), p.shape())?;
    }
    let shape = gated.shape();
    let mut state: Vec<Option<Token>> = gated.entries().to_vec();
    match model.kind {
        CompletionKind::TemporalCopy => {
            for (i, e) in state.iter_mut().enumerate() {
                e.get_or_insert_with(|| model.temporal_fill(i, prev_twin));
            }
        }
        CompletionKind::NeighborVote => {
            let mut counts = vec![0u32; model.codebook_size];
            for _ in 0..model.max_iterations {
                let mut updates = Vec::new();
                for i in (0..state.len()).filter(|&i| state[i].is_none()) {
                    let votes: Vec<Token> = shape.neighbors(i).filter_map(|n| state[n]).collect();
                    if votes.is_empty() {
                        continue;
                    }
                    for &v in &votes {
                        counts[v as usize] += 1;
                    }
                    let mut winner = votes[0];
                    for &v in &votes {
                        let (cv, cw) = (counts[v as usize], counts[winner as usize]);
                        if cv > cw || (cv == cw && v < winner) {
                            winner = v;
                        }
                    }
                    for &v in &votes {
                        counts[v as usize] = 0;
                    }
                    updates.push((i, winner));
                }
                if updates.is_empty() {
                    break;
                }
                for (i, t) in updates {
                    state[i] = Some(t);
                }
            }
            for (i, e) in state.iter_mut().enumerate() {
                e.get_or_insert_with(|| model.temporal_fill(i, prev_twin));
            }
        }
        CompletionKind::Cooccurrence => {
            let k = model.codebook_size;
            let mut scores = vec![0.0f64; k];
            for _ in 0..model.max_iterations {
                let mut updates = Vec::new();
                for i in (0..state.len()).filter(|&i| state[i].is_none()) {
                    let mut evidence = false;
                    scores.fill(0.0);
                    for n in shape.neighbors(i) {
                        if let Some(nt) = state[n] {
                            evidence = true;
                            let row = &model.neighbor_log_prob[nt as usize * k..(nt as usize + 1) * k];
                            scores.iter_mut().zip(row).for_each(|(s, l)| *s += l);
                        }
                    }
                    if let Some(p) = prev_twin {
                        evidence = true;
                        let pt = p.tokens()[i] as usize;
                        let row = &model.temporal_log_prob[pt * k..(pt + 1) * k];
                        let beta = model.persistence_weight;
                        scores.iter_mut().zip(row).for_each(|(s, l)| *s += beta * l);
                    }
                    if !evidence {
                        continue;
                    }
                    let mut best = 0;
                    for (t, &s) in scores.iter().enumerate() {
                        if s > scores[best] {
                            best = t;
                        }
                    }
                    updates.push((i, best as Token));
                }
                if updates.is_empty() {
                    break;
                }
                for (i, t) in updates {
                    state[i] = Some(t);
                }
            }
            for e in state.iter_mut() {
                e.get_or_insert(model.background_token);
            }
        }
    }
    let tokens = state
        .into_iter()
        .map(|e| e.expect("every position resolved"))
        .collect();
    TokenGrid::new(shape, tokens)
}

/// The twin state after frame `t` is the completed grid itself.
pub fn update_twin_state(completed: TokenGrid) -> TokenGrid {
    completed
}

/// Default candidate grid for threshold calibration.
pub const DEFAULT_THRESHOLD_GRID: [f64; 12] =
    [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99];
pub const CALIBRATION_START: f64 = 0.5;
pub const CALIBRATION_MAX_CYCLES: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCalibration {
    pub thresholds: Vec<f64>,
    pub loss: f64,
    /// Objective after initialization and after each completed cycle.
    pub history: Vec<f64>,
}

/// Cyclic coordinate search over group thresholds. `objective` returns the
/// mean calibration loss for a full threshold vector; it must be
/// deterministic (fixed channel seeds) for the search to be meaningful.
/// Ties between candidates keep the smaller threshold.
pub fn calibrate_thresholds<F>(
    groups: usize,
    candidates: &[f64],
    objective: F,
) -> Result<ThresholdCalibration>
where
    F: Fn(&[f64]) -> Result<f64> + Sync + Send,
{
    if candidates.is_empty() {
        return Err(TwistError::EmptyInput("threshold candidate grid"));
    }
    if groups == 0 {
        return Err(TwistError::InvalidParameter("need at least one group".into()));
    }
    if let Some(c) = candidates.iter().find(|c| !(0.0..=1.0).contains(*c)) {
        return Err(TwistError::InvalidParameter(format!("candidate {c} outside [0, 1]")));
    }
    let mut tau = vec![CALIBRATION_START; groups];
    let mut loss = objective(&tau)?;
    let mut history = vec![loss];
    for _ in 0..CALIBRATION_MAX_CYCLES {
        let mut changed = false;
        for g in 0..groups {
            let trial: Vec<Vec<f64>> = candidates
                .iter()
                .map(|&c| {
                    let mut t = tau.clone();
                    t[g] = c;
                    t
                })
                .collect();
            let losses = par_map(&trial, |t| objective(t));
            let mut best = (tau[g], loss);
            for (&c, l) in candidates.iter().zip(losses) {
                let l = l?;
                if l < best.1 || (l == best.1 && c < best.0) {
                    best = (c, l);
                }
            }
            if best.0 != tau[g] {
                tau[g] = best.0;
                loss = best.1;
                changed = true;
            }
        }
        history.push(loss);
        if !changed {
            break;
        }
    }
    Ok(ThresholdCalibration {
        thresholds: tau,
        loss,
        history,
    })
}
