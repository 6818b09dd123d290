use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::controller::{compute_stats_partial, Controller, FeedbackStats, SnrRange};
use crate::error::{Result, TwistError};
use crate::head::{app_loss, StateHead};
use crate::metrics::{self, F1Scores};
use crate::phy::{
    encode_frame, soft_demodulate, token_posteriors, transmit_symbols, ChannelKind, SoftTokenFrame,
};
use crate::receiver::{complete, gate, update_twin_state, CompletionModel};
use crate::rng::rng_for;
use crate::scene::{LabeledFrame, TrafficLabel};
use crate::types::{
    EmbeddingTable, GatedTokenGrid, GridShape, GroupMap, ModeProfile, SyncMode, TokenAlphabet,
};

use super::config::ObjectiveConfig;
use super::Method;

/// Everything the closed loop needs at run time.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub alphabet: TokenAlphabet,
    pub shape: GridShape,
    pub nominal_budget: u64,
    pub snr_range: SnrRange,
    pub objective: ObjectiveConfig,
    pub table: EmbeddingTable,
    pub head: StateHead,
    pub completion: CompletionModel,
    pub groups: GroupMap,
    /// Indexed by `SyncMode::index`.
    pub twist_profiles: Vec<ModeProfile>,
    pub uniform_profiles: Vec<ModeProfile>,
}

impl Pipeline {
    pub fn profile(&self, method: Method, mode: SyncMode) -> ModeProfile {
        let set = if method.uniform_protection() {
            &self.uniform_profiles
        } else {
            &self.twist_profiles
        };
        let mut p = set[mode.index()].clone();
        if !method.gating() {
            p.thresholds.fill(0.0);
        }
        p
    }
}

/// Output of the transmitter, channel and soft demodulator for one frame.
#[derive(Debug, Clone)]
pub struct LinkOutput {
    pub soft: SoftTokenFrame,
    pub noise_fingerprint: u64,
    pub channel_uses: usize,
}

pub fn frame_rng_path(t: usize) -> String {
    format!("frame-{t}")
}

/// Sends one frame under `profile`; the noise stream depends only on
/// `(channel_seed, t)`.
pub fn link_frame(
    pipe: &Pipeline,
    frame: &LabeledFrame,
    profile: &ModeProfile,
    channel: ChannelKind,
    snr_db: f64,
    channel_seed: u64,
    t: usize,
) -> Result<LinkOutput> {
    let tx = encode_frame(&frame.grid, &pipe.groups, profile, &pipe.alphabet)?;
    let mut rng = rng_for(channel_seed, &[&frame_rng_path(t)]);
    let rx = transmit_symbols(&tx.symbols, channel, snr_db, &mut rng);
    let demod = soft_demodulate(&rx.samples, rx.gain, rx.noise_var, &tx.layout)?;
    let soft = token_posteriors(&demod.llrs, &pipe.alphabet, pipe.shape)?;
    Ok(LinkOutput {
        soft,
        noise_fingerprint: rx.noise_fingerprint,
        channel_uses: tx.channel_uses(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub t: usize,
    pub mode: SyncMode,
    pub budget: u64,
    pub channel_uses: u64,
    pub snr_db: f64,
    pub stats: FeedbackStats,
    pub tsmr: f64,
    pub auer: Option<f64>,
    pub erasure_ratio: f64,
    pub app_loss: f64,
    pub prediction: TrafficLabel,
    pub label: TrafficLabel,
    pub q: u8,
    pub noise_fingerprint: u64,
    pub wall_us: u64,
}

/// Runs the closed loop over `frames`; `link` produces the soft frame for
/// `(t, mode)`. The first mode is MED.
pub(crate) fn closed_loop<L>(
    pipe: &Pipeline,
    method: Method,
    controller: &Controller,
    frames: &[LabeledFrame],
    snr_db: &[f64],
    mut link: L,
) -> Result<Vec<FrameRecord>>
where
    L: FnMut(usize, SyncMode, &ModeProfile) -> Result<Arc<LinkOutput>>,
{
    if frames.len() != snr_db.len() {
        return Err(TwistError::DimensionMismatch(
            "one nominal SNR per frame is required".into(),
        ));
    }
    let mut mode = SyncMode::Med;
    let mut prev: Option<GatedTokenGrid> = None;
    let mut out = Vec::with_capacity(frames.len());
    for (t, frame) in frames.iter().enumerate() {
        let start = Instant::now();
        let profile = pipe.profile(method, mode);
        let link_out = link(t, mode, &profile)?;
        let soft = &link_out.soft;
        if link_out.channel_uses as u64 > profile.budget {
            return Err(TwistError::Validation(format!(
                "frame {t} used {} channel uses over a budget of {}",
                link_out.channel_uses, profile.budget
            )));
        }
        let gated = if method.gating() {
            gate(soft, &pipe.groups, &profile.thresholds)?
        } else {
            GatedTokenGrid::accept_all(&soft.hard_grid())
        };
        let twin = if method.completion() {
            let prev_grid = prev.as_ref().and_then(GatedTokenGrid::to_complete);
            let completed = complete(&gated, prev_grid.as_ref(), &pipe.completion)?;
            GatedTokenGrid::accept_all(&update_twin_state(completed))
        } else {
            gated.clone()
        };
        let z = pipe.table.embed_gated(&twin)?;
        let inferred = pipe.head.infer(&z)?;
        let loss = app_loss(&inferred.logits, frame.label)?;
        let stats = compute_stats_partial(
            &gated,
            &twin,
            prev.as_ref(),
            snr_db[t],
            pipe.snr_range,
            frame.priority,
        )?;
        let record = FrameRecord {
            t,
            mode,
            budget: profile.budget,
            channel_uses: link_out.channel_uses as u64,
            snr_db: snr_db[t],
            stats,
            tsmr: metrics::tsmr_gated(&twin, &frame.grid)?,
            auer: metrics::auer(soft, &gated, &frame.grid)?,
            erasure_ratio: metrics::erasure_ratio(&gated),
            app_loss: loss,
            prediction: inferred.prediction,
            label: frame.label,
            q: frame.priority,
            noise_fingerprint: link_out.noise_fingerprint,
            wall_us: start.elapsed().as_micros() as u64,
        };
        mode = controller.next_mode(&stats);
        prev = Some(twin);
        out.push(record);
    }
    Ok(out)
}

/// Per-mode link outputs for every frame, computed once and shared by
/// all candidates during calibration.
pub(crate) struct LinkCache {
    /// `[mode][t]`.
    outputs: Vec<Vec<Arc<LinkOutput>>>,
}

impl LinkCache {
    pub fn build(
        pipe: &Pipeline,
        frames: &[LabeledFrame],
        snr_db: &[f64],
        channel: ChannelKind,
        channel_seed: u64,
        modes: &[SyncMode],
    ) -> Result<Self> {
        let mut outputs = vec![Vec::new(); SyncMode::ALL.len()];
        for &mode in modes {
            let profile = pipe.profile(Method::Twist, mode);
            outputs[mode.index()] = frames
                .iter()
                .enumerate()
                .map(|(t, f)| {
                    link_frame(pipe, f, &profile, channel, snr_db[t], channel_seed, t).map(Arc::new)
                })
                .collect::<Result<_>>()?;
        }
        Ok(Self { outputs })
    }

    pub fn get(&self, t: usize, mode: SyncMode) -> Result<Arc<LinkOutput>> {
        self.outputs[mode.index()]
            .get(t)
            .cloned()
            .ok_or_else(|| TwistError::Validation(format!("no cached link output for {mode} at {t}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub method: Method,
    pub channel: ChannelKind,
    pub seed: u64,
    pub channel_seed: u64,
    pub nominal_budget: u64,
    pub controller: Controller,
    pub config_hash: String,
    pub artifact_hashes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub header: TraceHeader,
    pub frames: Vec<FrameRecord>,
}

/// Episode-level metrics derived from a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub f1: F1Scores,
    pub urgent_f1: Option<F1Scores>,
    pub tsmr: f64,
    pub auer: Option<f64>,
    pub erasure_ratio: f64,
    pub cost: f64,
    pub mode_share: [f64; 3],
    pub app_loss: f64,
    pub objective: f64,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

impl EpisodeTrace {
    pub fn summary(&self, objective: &ObjectiveConfig) -> Result<EpisodeSummary> {
        let fr = &self.frames;
        if fr.is_empty() {
            return Err(TwistError::EmptyInput("trace frames"));
        }
        let preds: Vec<TrafficLabel> = fr.iter().map(|r| r.prediction).collect();
        let labels: Vec<TrafficLabel> = fr.iter().map(|r| r.label).collect();
        let q: Vec<u8> = fr.iter().map(|r| r.q).collect();
        let b0 = self.header.nominal_budget;
        let budgets: Vec<u64> = fr.iter().map(|r| r.budget).collect();
        let n = fr.len() as f64;
        let mut mode_share = [0.0; 3];
        for r in fr {
            mode_share[r.mode.index()] += 1.0 / n;
        }
        Ok(EpisodeSummary {
            f1: metrics::macro_f1(&preds, &labels)?,
            urgent_f1: metrics::urgent_macro_f1(&preds, &labels, &q)?,
            tsmr: mean(fr.iter().map(|r| r.tsmr)).expect("nonempty"),
            auer: mean(fr.iter().filter_map(|r| r.auer)),
            erasure_ratio: mean(fr.iter().map(|r| r.erasure_ratio)).expect("nonempty"),
            cost: metrics::normalized_cost(&budgets, b0)?,
            mode_share,
            app_loss: mean(fr.iter().map(|r| r.app_loss)).expect("nonempty"),
            objective: mean(fr.iter().map(|r| {
                objective.frame_value(r.q, r.app_loss, r.tsmr, r.budget as f64 / b0 as f64)
            }))
            .expect("nonempty"),
        })
    }

    /// JSON lines: the header, then one line per frame.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut out, &self.header)?;
        out.write_all(b"\n")?;
        for r in &self.frames {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut header = None;
        let mut frames = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |e: serde_json::Error| TwistError::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                message: e.to_string(),
            };
            if header.is_none() {
                header = Some(serde_json::from_str(&line).map_err(parse_err)?);
            } else {
                frames.push(serde_json::from_str(&line).map_err(parse_err)?);
            }
        }
        let header = header.ok_or(TwistError::EmptyInput("trace file"))?;
        Ok(Self { header, frames })
    }
}

/// Cell coordinates of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSpec {
    pub method: Method,
    pub channel: ChannelKind,
    /// Nominal SNR per frame.
    pub snr_db: Vec<f64>,
    pub seed: u64,
    pub channel_seed: u64,
}

/// Closed-loop run of one episode against a prepared bundle.
pub fn run_episode(
    bundle: &super::Bundle,
    spec: &EpisodeSpec,
    frames: &[LabeledFrame],
) -> Result<EpisodeTrace> {
    run_episode_with(bundle, spec, frames, bundle.controller_for(spec.method))
}

/// Like [`run_episode`] but with an explicit controller in place of the
/// bundle's calibrated one.
pub fn run_episode_with(
    bundle: &super::Bundle,
    spec: &EpisodeSpec,
    frames: &[LabeledFrame],
    controller: Controller,
) -> Result<EpisodeTrace> {
    let pipe = &bundle.pipeline;
    let records = closed_loop(pipe, spec.method, &controller, frames, &spec.snr_db, |t, _, profile| {
        link_frame(
            pipe,
            &frames[t],
            profile,
            spec.channel,
            spec.snr_db[t],
            spec.channel_seed,
            t,
        )
        .map(Arc::new)
    })?;
    Ok(EpisodeTrace {
        header: TraceHeader {
            method: spec.method,
            channel: spec.channel,
            seed: spec.seed,
            channel_seed: spec.channel_seed,
            nominal_budget: pipe.nominal_budget,
            controller,
            config_hash: bundle.config_hash.clone(),
            artifact_hashes: bundle.artifact_hashes.clone(),
        },
        frames: records,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub frames: usize,
    pub decisions_checked: usize,
    /// Frames whose logged mode differs from the recomputed decision.
    pub mode_mismatches: Vec<usize>,
    pub budget_violations: Vec<usize>,
    pub first_mode_ok: bool,
    pub frame_index_ok: bool,
}

impl ReplayReport {
    pub fn passed(&self) -> bool {
        self.mode_mismatches.is_empty()
            && self.budget_violations.is_empty()
            && self.first_mode_ok
            && self.frame_index_ok
    }
}

/// Recomputes every `a_{t+1}` from the statistics logged at frame `t` and
/// checks the budget accounting.
pub fn replay_trace(trace: &EpisodeTrace) -> ReplayReport {
    let fr = &trace.frames;
    let mut mode_mismatches = Vec::new();
    for w in fr.windows(2) {
        if trace.header.controller.next_mode(&w[0].stats) != w[1].mode {
            mode_mismatches.push(w[1].t);
        }
    }
    ReplayReport {
        frames: fr.len(),
        decisions_checked: fr.len().saturating_sub(1),
        mode_mismatches,
        budget_violations: fr
            .iter()
            .filter(|r| {
                r.channel_uses > r.budget || r.budget != r.mode.budget(trace.header.nominal_budget)
            })
            .map(|r| r.t)
            .collect(),
        first_mode_ok: fr.first().is_none_or(|r| r.mode == SyncMode::Med),
        frame_index_ok: fr.iter().enumerate().all(|(i, r)| r.t == i),
    }
}
