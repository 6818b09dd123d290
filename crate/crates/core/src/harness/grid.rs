use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, TwistError};
use crate::metrics::{mean_std, rolling_correctness};
use crate::par::par_map;
use crate::phy::ChannelKind;
use crate::scene::{generate_episode, LabeledFrame, TrafficLabel};

use super::config::ExperimentConfig;
use super::episode::{run_episode, EpisodeSpec, EpisodeTrace};
use super::offline::{cell_channel_seed, snr_tag, split_scene, Bundle};
use super::Method;

/// One `(method, channel, snr, seed)` cell with the across-seed standard
/// deviation of its `(method, channel, snr)` group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRow {
    pub method: Method,
    pub channel: ChannelKind,
    pub snr_db: f64,
    pub seed: u64,
    pub macro_f1: f64,
    pub f1_car: f64,
    pub f1_ped: f64,
    pub f1_density: f64,
    pub urgent_macro_f1: Option<f64>,
    pub tsmr: f64,
    pub auer: Option<f64>,
    pub erasure_ratio: f64,
    pub cost: f64,
    pub share_low: f64,
    pub share_med: f64,
    pub share_high: f64,
    pub app_loss: f64,
    pub objective: f64,
    pub noise_fingerprint: u64,
    pub macro_f1_std: f64,
    pub urgent_macro_f1_std: f64,
    pub tsmr_std: f64,
    pub auer_std: f64,
    pub erasure_ratio_std: f64,
    pub cost_std: f64,
    pub app_loss_std: f64,
}

pub const METRICS: [&str; 14] = [
    "macro_f1",
    "f1_car",
    "f1_ped",
    "f1_density",
    "urgent_macro_f1",
    "tsmr",
    "auer",
    "erasure_ratio",
    "cost",
    "share_low",
    "share_med",
    "share_high",
    "app_loss",
    "objective",
];

impl CellRow {
    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "macro_f1" => Some(self.macro_f1),
            "f1_car" => Some(self.f1_car),
            "f1_ped" => Some(self.f1_ped),
            "f1_density" => Some(self.f1_density),
            "urgent_macro_f1" => self.urgent_macro_f1,
            "tsmr" => Some(self.tsmr),
            "auer" => self.auer,
            "erasure_ratio" => Some(self.erasure_ratio),
            "cost" => Some(self.cost),
            "share_low" => Some(self.share_low),
            "share_med" => Some(self.share_med),
            "share_high" => Some(self.share_high),
            "app_loss" => Some(self.app_loss),
            "objective" => Some(self.objective),
            _ => None,
        }
    }

    fn from_trace(trace: &EpisodeTrace, snr_db: f64, bundle: &Bundle) -> Result<Self> {
        let s = trace.summary(&bundle.pipeline.objective)?;
        Ok(Self {
            method: trace.header.method,
            channel: trace.header.channel,
            snr_db,
            seed: trace.header.seed,
            macro_f1: s.f1.macro_f1,
            f1_car: s.f1.car,
            f1_ped: s.f1.ped,
            f1_density: s.f1.density,
            urgent_macro_f1: s.urgent_f1.map(|f| f.macro_f1),
            tsmr: s.tsmr,
            auer: s.auer,
            erasure_ratio: s.erasure_ratio,
            cost: s.cost,
            share_low: s.mode_share[0],
            share_med: s.mode_share[1],
            share_high: s.mode_share[2],
            app_loss: s.app_loss,
            objective: s.objective,
            noise_fingerprint: trace.frames.first().map_or(0, |r| r.noise_fingerprint),
            macro_f1_std: 0.0,
            urgent_macro_f1_std: 0.0,
            tsmr_std: 0.0,
            auer_std: 0.0,
            erasure_ratio_std: 0.0,
            cost_std: 0.0,
            app_loss_std: 0.0,
        })
    }

    fn group_key(&self) -> (Method, ChannelKind, String) {
        (self.method, self.channel, snr_tag(self.snr_db))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    /// Seeds with a defined value.
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: Method,
    pub channel: ChannelKind,
    pub snr_db: f64,
    pub seeds: usize,
    /// One entry per name in [`METRICS`].
    pub stats: Vec<Stat>,
}

impl SummaryRow {
    pub fn stat(&self, metric: &str) -> Option<Stat> {
        METRICS
            .iter()
            .position(|m| *m == metric)
            .map(|i| self.stats[i])
    }
}

#[derive(Debug, Clone)]
pub struct GridOutput {
    pub cells: Vec<CellRow>,
    pub summary: Vec<SummaryRow>,
    pub dir: PathBuf,
}

impl GridOutput {
    pub fn row(&self, method: Method, channel: ChannelKind, snr_db: f64) -> Option<&SummaryRow> {
        self.summary
            .iter()
            .find(|r| r.method == method && r.channel == channel && (r.snr_db - snr_db).abs() < 1e-9)
    }

    pub fn stat(&self, method: Method, channel: ChannelKind, snr_db: f64, metric: &str) -> Option<Stat> {
        self.row(method, channel, snr_db)?.stat(metric)
    }
}

/// Groups cells by `(method, channel, snr)` in first-seen order, fills the
/// std columns and returns the per-group summary.
pub fn summarize(cells: &mut [CellRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(Method, ChannelKind, String)> = Vec::new();
    for c in cells.iter() {
        let k = c.group_key();
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    let mut out = Vec::with_capacity(keys.len());
    for key in keys {
        let members: Vec<usize> = (0..cells.len()).filter(|&i| cells[i].group_key() == key).collect();
        let stats: Vec<Stat> = METRICS
            .iter()
            .map(|m| {
                let xs: Vec<f64> = members.iter().filter_map(|&i| cells[i].metric(m)).collect();
                let (mean, std) = mean_std(&xs);
                Stat {
                    mean,
                    std,
                    n: xs.len(),
                }
            })
            .collect();
        let std_of = |m: &str| stats[METRICS.iter().position(|x| *x == m).expect("known metric")].std;
        for &i in &members {
            let c = &mut cells[i];
            c.macro_f1_std = std_of("macro_f1");
            c.urgent_macro_f1_std = std_of("urgent_macro_f1");
            c.tsmr_std = std_of("tsmr");
            c.auer_std = std_of("auer");
            c.erasure_ratio_std = std_of("erasure_ratio");
            c.cost_std = std_of("cost");
            c.app_loss_std = std_of("app_loss");
        }
        let first = &cells[members[0]];
        out.push(SummaryRow {
            method: first.method,
            channel: first.channel,
            snr_db: first.snr_db,
            seeds: members.len(),
            stats,
        });
    }
    out
}

pub fn test_episode(cfg: &ExperimentConfig, seed: u64, frames: usize) -> Result<Vec<LabeledFrame>> {
    generate_episode(&split_scene(cfg, "test", seed), frames)
}

pub fn trace_file_name(method: Method, channel: ChannelKind, snr_db: f64, seed: u64) -> String {
    format!("{}_{}_{}_{}.jsonl", method, channel.as_str(), snr_tag(snr_db), seed)
}

/// Full cross product of methods, channels, SNRs and seeds. Channel seeds
/// depend only on `(channel, snr, seed)`, so every method sees the same
/// noise in a given cell.
pub fn run_grid(cfg: &ExperimentConfig, bundle: &Bundle, out_dir: &Path) -> Result<GridOutput> {
    cfg.validate()?;
    if bundle.config_hash != cfg.offline_hash() {
        return Err(TwistError::ArtifactMismatch(
            "bundle was built for a different configuration".into(),
        ));
    }
    let g = &cfg.grid;
    let episodes: Vec<Vec<LabeledFrame>> = g
        .seeds
        .iter()
        .map(|&s| test_episode(cfg, s, g.frames))
        .collect::<Result<_>>()?;
    let mut jobs = Vec::new();
    for &method in &g.methods {
        for &channel in &g.channels {
            for &snr in &cfg.link.snr_db {
                for (si, &seed) in g.seeds.iter().enumerate() {
                    jobs.push((method, channel, snr, si, seed));
                }
            }
        }
    }
    let trace_dir = out_dir.join("traces");
    if g.write_traces {
        fs::create_dir_all(&trace_dir)?;
    }
    let results = par_map(&jobs, |&(method, channel, snr, si, seed)| -> Result<CellRow> {
        let spec = EpisodeSpec {
            method,
            channel,
            snr_db: vec![snr; g.frames],
            seed,
            channel_seed: cell_channel_seed(cfg.seed, "test", channel, snr, seed),
        };
        let trace = run_episode(bundle, &spec, &episodes[si])?;
        if g.write_traces {
            trace.write_jsonl(&trace_dir.join(trace_file_name(method, channel, snr, seed)))?;
        }
        CellRow::from_trace(&trace, snr, bundle)
    });
    let mut cells = results.into_iter().collect::<Result<Vec<_>>>()?;
    let summary = summarize(&mut cells);
    fs::create_dir_all(out_dir)?;
    write_cells(&out_dir.join("cells.csv"), &cells)?;
    write_summary(&out_dir.join("summary.csv"), &summary)?;
    write_figures(out_dir, &summary)?;
    write_temporal(cfg, bundle, &out_dir.join("fig5_temporal.csv"))?;
    Ok(GridOutput {
        cells,
        summary,
        dir: out_dir.to_path_buf(),
    })
}

pub fn write_cells(path: &Path, cells: &[CellRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for c in cells {
        w.serialize(c)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_cells(path: &Path) -> Result<Vec<CellRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(TwistError::from)).collect()
}

fn fmt(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        x.to_string()
    }
}

fn write_summary_subset(
    path: &Path,
    summary: &[SummaryRow],
    methods: Option<&[Method]>,
    metrics: &[&str],
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["method".to_string(), "channel".into(), "snr_db".into(), "seeds".into()];
    for m in metrics {
        header.extend([format!("{m}_mean"), format!("{m}_std"), format!("{m}_n")]);
    }
    w.write_record(&header)?;
    for row in summary {
        if methods.is_some_and(|ms| !ms.contains(&row.method)) {
            continue;
        }
        let mut rec = vec![
            row.method.to_string(),
            row.channel.as_str().to_string(),
            row.snr_db.to_string(),
            row.seeds.to_string(),
        ];
        for m in metrics {
            let s = row.stat(m).expect("known metric");
            rec.extend([fmt(s.mean), fmt(s.std), s.n.to_string()]);
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary(path: &Path, summary: &[SummaryRow]) -> Result<()> {
    write_summary_subset(path, summary, None, &METRICS)
}

fn write_figures(dir: &Path, summary: &[SummaryRow]) -> Result<()> {
    use Method::*;
    write_summary_subset(
        &dir.join("fig4_main.csv"),
        summary,
        Some(&[Twist, StaticLow, StaticMed, StaticHigh, ChannelAdaptive]),
        &["macro_f1", "cost", "share_low", "share_med", "share_high", "tsmr"],
    )?;
    write_summary_subset(
        &dir.join("fig7_receiver.csv"),
        summary,
        Some(&[Twist, NoGating, NoCompletion, HardOnly]),
        &["auer", "erasure_ratio", "tsmr"],
    )?;
    write_summary_subset(
        &dir.join("fig8_ablation.csv"),
        summary,
        Some(&[Twist, NoGamma, NoRho, NoDrift, NoQ, Uniform, NoGating, NoCompletion, HardOnly]),
        &["macro_f1", "cost", "tsmr"],
    )?;
    write_summary_subset(
        &dir.join("fig9_urgent.csv"),
        summary,
        Some(&[Twist, StaticMed, ChannelAdaptive, NoQ]),
        &["urgent_macro_f1", "macro_f1"],
    )
}

/// Per-frame data of one episode under the piecewise-constant SNR schedule.
fn write_temporal(cfg: &ExperimentConfig, bundle: &Bundle, path: &Path) -> Result<()> {
    let g = &cfg.grid;
    let frames = test_episode(cfg, g.seeds[0], g.frames)?;
    let snrs = cfg.schedule_snrs(g.frames);
    let channel_seed = cell_channel_seed(cfg.seed, "temporal", g.temporal_channel, 0.0, g.seeds[0]);
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["method", "t", "snr_db", "mode", "correct", "rolling_correctness", "tsmr", "erasure_ratio"])?;
    for method in [Method::Twist, Method::StaticMed, Method::ChannelAdaptive] {
        let spec = EpisodeSpec {
            method,
            channel: g.temporal_channel,
            snr_db: snrs.clone(),
            seed: g.seeds[0],
            channel_seed,
        };
        let trace = run_episode(bundle, &spec, &frames)?;
        let preds: Vec<TrafficLabel> = trace.frames.iter().map(|r| r.prediction).collect();
        let labels: Vec<TrafficLabel> = trace.frames.iter().map(|r| r.label).collect();
        let rolling = rolling_correctness(&preds, &labels, g.rolling_window)?;
        for (r, roll) in trace.frames.iter().zip(rolling) {
            w.write_record([
                method.to_string(),
                r.t.to_string(),
                r.snr_db.to_string(),
                r.mode.to_string(),
                u8::from(r.prediction == r.label).to_string(),
                roll.to_string(),
                r.tsmr.to_string(),
                r.erasure_ratio.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Recomputes the summary tables from an existing `cells.csv`.
pub fn report(dir: &Path) -> Result<Vec<SummaryRow>> {
    let mut cells = read_cells(&dir.join("cells.csv"))?;
    if cells.is_empty() {
        return Err(TwistError::EmptyInput("cells.csv"));
    }
    let summary = summarize(&mut cells);
    write_summary(&dir.join("summary.csv"), &summary)?;
    write_figures(dir, &summary)?;
    Ok(summary)
}
