use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::controller::{
    calibrate_channel_cuts, calibrate_controller, candidate_cuts, candidate_params, CandidateScore,
    ChannelCuts, Controller, ControllerParams, InputMask,
};
use crate::error::{Result, TwistError};
use crate::head::{build_group_map, mean_utility_profile, StateHead, UtilityProfile};
use crate::metrics::macro_f1;
use crate::par::par_map;
use crate::phy::{profile_error_rates, ChannelKind, ErrorTable};
use crate::receiver::{calibrate_thresholds, complete, gate, CompletionModel, ThresholdCalibration};
use crate::rng::{content_hash, derive_seed};
use crate::scene::{generate_episode, LabeledFrame, SceneConfig};
use crate::types::{EmbeddingTable, GroupMap, ModeProfile, SyncMode};
use crate::uep::{build_mode_profiles, uniform_mode_profiles, ModeProtection};

use super::config::{ExperimentConfig, ObjectiveConfig};
use super::episode::{closed_loop, FrameRecord, LinkCache, Pipeline};
use super::{ControlKind, Method};

pub const MANIFEST: &str = "manifest.json";
pub const HEAD_FILE: &str = "head.json";
pub const UTILITY_FILE: &str = "utility.json";
pub const GROUPS_FILE: &str = "groups.json";
pub const ERROR_TABLE_FILE: &str = "error_table.json";
pub const PROFILES_FILE: &str = "mode_profiles.json";
pub const CONTROLLER_FILE: &str = "controller.json";
pub const COMPLETION_FILE: &str = "completion.bin";

const ARTIFACT_FILES: [&str; 7] = [
    HEAD_FILE,
    UTILITY_FILE,
    GROUPS_FILE,
    ERROR_TABLE_FILE,
    PROFILES_FILE,
    CONTROLLER_FILE,
    COMPLETION_FILE,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadArtifact {
    pub head: StateHead,
    pub embedding_dim: usize,
    pub embedding_seed: u64,
    pub train_loss: f64,
    pub train_frames: usize,
    /// Macro-F1 of the head on clean calibration frames.
    pub clean_macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeProfilesArtifact {
    pub twist: Vec<ModeProfile>,
    pub uniform: Vec<ModeProfile>,
    pub uep_objective: Vec<f64>,
    pub uniform_objective: Vec<f64>,
    pub calibration: Vec<ThresholdCalibration>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerArtifact {
    pub params: ControllerParams,
    pub score: CandidateScore,
    pub candidates: usize,
    pub channel_cuts: ChannelCuts,
    pub channel_score: CandidateScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub files: BTreeMap<String, String>,
}

/// Offline artifacts plus the run-time pipeline assembled from them.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub config_hash: String,
    pub artifact_hashes: BTreeMap<String, String>,
    pub pipeline: Pipeline,
    pub head_info: HeadArtifact,
    pub utility: UtilityProfile,
    pub error_table: ErrorTable,
    pub profiles: ModeProfilesArtifact,
    pub controller: ControllerArtifact,
}

impl Bundle {
    pub fn controller_for(&self, method: Method) -> Controller {
        match method.control() {
            ControlKind::Static(mode) => Controller::Static { mode },
            ControlKind::ChannelOnly => Controller::ChannelAdaptive {
                cuts: self.controller.channel_cuts,
            },
            ControlKind::Risk(mask) => Controller::Risk {
                params: self.controller.params.with_mask(mask),
            },
        }
    }
}

fn stage<T>(name: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    f().map_err(|e| match e {
        TwistError::Stage { .. } => e,
        other => TwistError::Stage {
            stage: name,
            source: Box::new(other),
        },
    })
}

/// Scene configuration of episode `index` of a data split.
pub fn split_scene(cfg: &ExperimentConfig, split: &str, index: u64) -> SceneConfig {
    SceneConfig {
        seed: derive_seed(cfg.seed, &[split, &index.to_string()]),
        ..cfg.scene.clone()
    }
}

pub fn split_episodes(
    cfg: &ExperimentConfig,
    split: &str,
    count: usize,
    frames: usize,
) -> Result<Vec<Vec<LabeledFrame>>> {
    (0..count as u64)
        .map(|i| generate_episode(&split_scene(cfg, split, i), frames))
        .collect()
}

pub fn snr_tag(snr_db: f64) -> String {
    format!("{snr_db:.3}")
}

/// Channel seed of one `(channel, snr, seed)` cell of a split, shared by all
/// methods.
pub fn cell_channel_seed(master: u64, split: &str, kind: ChannelKind, snr_db: f64, seed: u64) -> u64 {
    derive_seed(master, &[split, kind.as_str(), &snr_tag(snr_db), &seed.to_string()])
}

/// Closed-loop validation data: episodes swept over the SNR grid on the
/// design channel.
#[derive(Debug, Clone)]
pub struct ValidationSet {
    pub episodes: Vec<Vec<LabeledFrame>>,
    pub snr_db: Vec<f64>,
    pub channel: ChannelKind,
    /// `[episode][snr]`.
    pub channel_seeds: Vec<Vec<u64>>,
}

pub fn validation_set(cfg: &ExperimentConfig) -> Result<ValidationSet> {
    let episodes = split_episodes(
        cfg,
        "validation",
        cfg.offline.validation_episodes,
        cfg.offline.validation_frames,
    )?;
    let channel = cfg.link.design_channel;
    let channel_seeds = (0..episodes.len() as u64)
        .map(|e| {
            cfg.link
                .snr_db
                .iter()
                .map(|&s| cell_channel_seed(cfg.seed, "validation", channel, s, e))
                .collect()
        })
        .collect();
    Ok(ValidationSet {
        episodes,
        snr_db: cfg.link.snr_db.clone(),
        channel,
        channel_seeds,
    })
}

/// Running totals of the closed-loop objective over frames.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ScoreAccumulator {
    pub objective: f64,
    pub cost: f64,
    pub frames: usize,
}

impl ScoreAccumulator {
    pub fn add(&mut self, records: &[FrameRecord], objective: &ObjectiveConfig, nominal_budget: u64) {
        for r in records {
            let c = r.budget as f64 / nominal_budget as f64;
            self.objective += objective.frame_value(r.q, r.app_loss, r.tsmr, c);
            self.cost += c;
            self.frames += 1;
        }
    }

    pub fn score(&self) -> CandidateScore {
        let n = self.frames.max(1) as f64;
        CandidateScore {
            objective: self.objective / n,
            mean_cost: self.cost / n,
        }
    }
}

struct ValidationCache<'a> {
    set: &'a ValidationSet,
    /// `[episode][snr]`.
    links: Vec<Vec<LinkCache>>,
}

impl<'a> ValidationCache<'a> {
    fn build(pipe: &Pipeline, set: &'a ValidationSet) -> Result<Self> {
        let jobs: Vec<(usize, usize)> = (0..set.episodes.len())
            .flat_map(|e| (0..set.snr_db.len()).map(move |s| (e, s)))
            .collect();
        let built = par_map(&jobs, |&(e, s)| {
            let frames = &set.episodes[e];
            LinkCache::build(
                pipe,
                frames,
                &vec![set.snr_db[s]; frames.len()],
                set.channel,
                set.channel_seeds[e][s],
                &SyncMode::ALL,
            )
        });
        let mut links: Vec<Vec<LinkCache>> = (0..set.episodes.len()).map(|_| Vec::new()).collect();
        for (&(e, _), cache) in jobs.iter().zip(built) {
            links[e].push(cache?);
        }
        Ok(Self { set, links })
    }

    fn evaluate(&self, pipe: &Pipeline, controller: &Controller) -> Result<CandidateScore> {
        let mut acc = ScoreAccumulator::default();
        for (e, frames) in self.set.episodes.iter().enumerate() {
            for (s, &snr) in self.set.snr_db.iter().enumerate() {
                let cache = &self.links[e][s];
                let snrs = vec![snr; frames.len()];
                let records = closed_loop(pipe, Method::Twist, controller, frames, &snrs, |t, mode, _| {
                    cache.get(t, mode)
                })?;
                acc.add(&records, &pipe.objective, pipe.nominal_budget);
            }
        }
        Ok(acc.score())
    }
}

/// Grid search of the risk controller over `candidates`, each scored by
/// closed-loop episodes on the validation set.
pub fn calibrate_risk(
    pipe: &Pipeline,
    set: &ValidationSet,
    candidates: &[ControllerParams],
) -> Result<(ControllerParams, CandidateScore)> {
    let cache = ValidationCache::build(pipe, set)?;
    calibrate_controller(candidates, |p| {
        cache.evaluate(pipe, &Controller::Risk { params: *p })
    })
}

pub fn calibrate_cuts(
    pipe: &Pipeline,
    set: &ValidationSet,
    candidates: &[ChannelCuts],
) -> Result<(ChannelCuts, CandidateScore)> {
    let cache = ValidationCache::build(pipe, set)?;
    calibrate_channel_cuts(candidates, |c| {
        cache.evaluate(pipe, &Controller::ChannelAdaptive { cuts: *c })
    })
}

/// Mean application loss of a fixed-mode run with thresholds `tau`.
fn fixed_mode_loss(
    pipe: &Pipeline,
    episodes: &[Vec<LabeledFrame>],
    caches: &[LinkCache],
    mode: SyncMode,
    tau: &[f64],
) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for (frames, cache) in episodes.iter().zip(caches) {
        let mut prev = None;
        for (t, frame) in frames.iter().enumerate() {
            let link = cache.get(t, mode)?;
            let gated = gate(&link.soft, &pipe.groups, tau)?;
            let twin = complete(&gated, prev.as_ref(), &pipe.completion)?;
            total += pipe.head.loss(&pipe.table.embed(&twin)?, frame.label)?;
            n += 1;
            prev = Some(twin);
        }
    }
    Ok(total / n as f64)
}

fn to_profiles(protection: &[ModeProtection], thresholds: f64) -> Vec<ModeProfile> {
    protection
        .iter()
        .map(|p| ModeProfile {
            mode: p.mode,
            budget: p.budget,
            protection: p.protection.clone(),
            thresholds: vec![thresholds; p.protection.len()],
        })
        .collect()
}

fn error_table_key(cfg: &ExperimentConfig, groups: &GroupMap, snrs: &[f64]) -> String {
    #[derive(Serialize)]
    struct Key<'a> {
        assignment: &'a [usize],
        repetitions: &'a [u32],
        channel: ChannelKind,
        snrs: &'a [f64],
        trials: usize,
        seed: u64,
        codebook: u32,
        height: usize,
        width: usize,
    }
    let key = Key {
        assignment: &groups.assignment,
        repetitions: &cfg.link.repetitions,
        channel: cfg.link.design_channel,
        snrs,
        trials: cfg.link.profile_trials,
        seed: derive_seed(cfg.seed, &["phy-profile"]),
        codebook: cfg.scene.codebook_size,
        height: cfg.scene.height,
        width: cfg.scene.width,
    };
    content_hash(&serde_json::to_vec(&key).expect("key serializes"))
}

fn profile_snrs(cfg: &ExperimentConfig) -> Vec<f64> {
    let mut snrs = cfg.link.snr_db.clone();
    if !snrs.iter().any(|&s| (s - cfg.link.design_snr_db).abs() < 1e-9) {
        snrs.push(cfg.link.design_snr_db);
    }
    snrs.sort_by(f64::total_cmp);
    snrs
}

fn cached_error_table(
    cfg: &ExperimentConfig,
    groups: &GroupMap,
    cache_dir: Option<&Path>,
) -> Result<ErrorTable> {
    let snrs = profile_snrs(cfg);
    let path = cache_dir.map(|d| d.join(format!("error_table-{}.json", error_table_key(cfg, groups, &snrs))));
    if let Some(p) = path.as_ref().filter(|p| p.exists()) {
        if let Ok(table) = serde_json::from_slice::<ErrorTable>(&fs::read(p)?) {
            return Ok(table);
        }
    }
    let table = profile_error_rates(
        groups,
        cfg.scene.shape(),
        &cfg.policies()?,
        &cfg.alphabet()?,
        cfg.link.design_channel,
        &snrs,
        cfg.link.profile_trials,
        derive_seed(cfg.seed, &["phy-profile"]),
    )?;
    if let Some(p) = path {
        fs::create_dir_all(p.parent().expect("cache file has a parent"))?;
        fs::write(&p, serde_json::to_vec_pretty(&table)?)?;
    }
    Ok(table)
}

/// Builds every offline artifact in memory.
pub fn build_bundle(cfg: &ExperimentConfig, cache_dir: Option<&Path>) -> Result<Bundle> {
    cfg.validate()?;
    let alphabet = cfg.alphabet()?;
    let shape = cfg.scene.shape();
    let off = &cfg.offline;

    let (train, calibration) = stage("scenes", || {
        Ok((
            split_episodes(cfg, "train", off.train_episodes, off.train_frames)?,
            split_episodes(cfg, "calibration", off.calibration_episodes, off.calibration_frames)?,
        ))
    })?;

    let table = EmbeddingTable::build(
        alphabet.codebook_size() as usize,
        cfg.model.embedding_dim,
        cfg.model.embedding_seed,
    )?;
    let head_info = stage("head", || {
        let mut head = StateHead::zeros(
            shape,
            cfg.model.embedding_dim,
            cfg.model.region_rows,
            cfg.model.region_cols,
        )?;
        let frames: Vec<&LabeledFrame> = train.iter().flatten().collect();
        let features = par_map(&frames, |f| head.pool(&table.embed(&f.grid)?));
        let features = features.into_iter().collect::<Result<Vec<_>>>()?;
        let labels: Vec<_> = frames.iter().map(|f| f.label).collect();
        let train_loss = head.train(
            &features,
            &labels,
            cfg.model.head_epochs,
            cfg.model.head_learning_rate,
            cfg.model.head_target_loss,
        )?;
        let clean: Vec<&LabeledFrame> = calibration.iter().flatten().collect();
        let preds = par_map(&clean, |f| Ok(head.infer(&table.embed(&f.grid)?)?.prediction))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let labels: Vec<_> = clean.iter().map(|f| f.label).collect();
        Ok(HeadArtifact {
            clean_macro_f1: macro_f1(&preds, &labels)?.macro_f1,
            head,
            embedding_dim: cfg.model.embedding_dim,
            embedding_seed: cfg.model.embedding_seed,
            train_loss,
            train_frames: frames.len(),
        })
    })?;

    let completion = stage("completion", || {
        CompletionModel::train(cfg.model.completion, alphabet.codebook_size() as usize, &train)
    })?;

    let calibration_frames: Vec<LabeledFrame> = calibration.iter().flatten().cloned().collect();
    let utility = stage("utility", || {
        mean_utility_profile(&calibration_frames, &head_info.head, &table)
    })?;
    let groups = stage("grouping", || build_group_map(&utility, cfg.model.groups))?;

    let error_table = stage("phy-profile", || cached_error_table(cfg, &groups, cache_dir))?;
    let (uep, uniform) = stage("protection", || {
        Ok((
            build_mode_profiles(
                &groups,
                &error_table,
                &alphabet,
                cfg.link.nominal_budget,
                cfg.link.design_snr_db,
            )?,
            uniform_mode_profiles(
                &groups,
                &error_table,
                &alphabet,
                cfg.link.nominal_budget,
                cfg.link.design_snr_db,
            )?,
        ))
    })?;

    let mut pipeline = Pipeline {
        alphabet,
        shape,
        nominal_budget: cfg.link.nominal_budget,
        snr_range: cfg.snr_range(),
        objective: cfg.objective,
        table,
        head: head_info.head.clone(),
        completion,
        groups: groups.clone(),
        twist_profiles: to_profiles(&uep, 0.0),
        uniform_profiles: to_profiles(&uniform, 0.0),
    };

    let calibration_results = stage("thresholds", || {
        let mut out = Vec::new();
        for mode in SyncMode::ALL {
            let caches = calibration
                .iter()
                .enumerate()
                .map(|(e, frames)| {
                    let seed = cell_channel_seed(
                        cfg.seed,
                        "calibration",
                        cfg.link.design_channel,
                        cfg.link.design_snr_db,
                        e as u64,
                    );
                    LinkCache::build(
                        &pipeline,
                        frames,
                        &vec![cfg.link.design_snr_db; frames.len()],
                        cfg.link.design_channel,
                        seed,
                        &[mode],
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            let result = calibrate_thresholds(groups.groups, &off.threshold_grid, |tau| {
                fixed_mode_loss(&pipeline, &calibration, &caches, mode, tau)
            })?;
            out.push(result);
        }
        Ok(out)
    })?;
    for (mode, cal) in SyncMode::ALL.iter().zip(&calibration_results) {
        pipeline.twist_profiles[mode.index()].thresholds = cal.thresholds.clone();
        pipeline.uniform_profiles[mode.index()].thresholds = cal.thresholds.clone();
    }
    for p in pipeline.twist_profiles.iter().chain(&pipeline.uniform_profiles) {
        p.check_feasible(&groups, &alphabet)?;
    }

    let controller = stage("controller", || {
        let set = validation_set(cfg)?;
        let candidates = candidate_params(&off.weight_grid, &off.theta_low, &off.theta_high, InputMask::ALL);
        let (params, score) = calibrate_risk(&pipeline, &set, &candidates)?;
        let cuts = candidate_cuts(&off.channel_cut_points);
        let (channel_cuts, channel_score) = calibrate_cuts(&pipeline, &set, &cuts)?;
        Ok(ControllerArtifact {
            params,
            score,
            candidates: candidates.len(),
            channel_cuts,
            channel_score,
        })
    })?;

    let profiles = ModeProfilesArtifact {
        twist: pipeline.twist_profiles.clone(),
        uniform: pipeline.uniform_profiles.clone(),
        uep_objective: uep.iter().map(|p| p.objective).collect(),
        uniform_objective: uniform.iter().map(|p| p.objective).collect(),
        calibration: calibration_results,
    };
    Ok(Bundle {
        config_hash: cfg.offline_hash(),
        artifact_hashes: BTreeMap::new(),
        pipeline,
        head_info,
        utility,
        error_table,
        profiles,
        controller,
    })
}

fn artifact_bytes(bundle: &Bundle, dir: &Path) -> Result<BTreeMap<&'static str, Vec<u8>>> {
    let mut out = BTreeMap::new();
    out.insert(HEAD_FILE, serde_json::to_vec_pretty(&bundle.head_info)?);
    out.insert(UTILITY_FILE, serde_json::to_vec_pretty(&bundle.utility)?);
    out.insert(GROUPS_FILE, serde_json::to_vec_pretty(&bundle.pipeline.groups)?);
    out.insert(ERROR_TABLE_FILE, serde_json::to_vec_pretty(&bundle.error_table)?);
    out.insert(PROFILES_FILE, serde_json::to_vec_pretty(&bundle.profiles)?);
    out.insert(CONTROLLER_FILE, serde_json::to_vec_pretty(&bundle.controller)?);
    let tmp = dir.join(COMPLETION_FILE);
    bundle.pipeline.completion.save(&tmp)?;
    out.insert(COMPLETION_FILE, fs::read(&tmp)?);
    Ok(out)
}

/// Writes the bundle atomically: everything goes to a sibling staging
/// directory that replaces `dir` only once complete.
pub fn persist_bundle(bundle: &mut Bundle, dir: &Path) -> Result<()> {
    let staging = staging_dir(dir);
    if staging.exists() {
        fs::remove_dir_all(&staging)?;
    }
    fs::create_dir_all(&staging)?;
    let files = artifact_bytes(bundle, &staging)?;
    let mut hashes = BTreeMap::new();
    for (name, bytes) in &files {
        fs::write(staging.join(name), bytes)?;
        hashes.insert(name.to_string(), content_hash(bytes));
    }
    let manifest = Manifest {
        config_hash: bundle.config_hash.clone(),
        files: hashes.clone(),
    };
    fs::write(staging.join(MANIFEST), serde_json::to_vec_pretty(&manifest)?)?;
    if dir.exists() {
        fs::remove_dir_all(dir)?;
    }
    fs::rename(&staging, dir)?;
    bundle.artifact_hashes = hashes;
    Ok(())
}

fn staging_dir(dir: &Path) -> PathBuf {
    let mut name = dir.file_name().unwrap_or_default().to_os_string();
    name.push(".partial");
    dir.with_file_name(name)
}

pub fn read_manifest(dir: &Path) -> Result<Option<Manifest>> {
    let path = dir.join(MANIFEST);
    if !path.exists() {
        return Ok(None);
    }
    Ok(Some(serde_json::from_slice(&fs::read(path)?)?))
}

fn read_json<T: serde::de::DeserializeOwned>(dir: &Path, name: &str) -> Result<T> {
    serde_json::from_slice(&fs::read(dir.join(name))?)
        .map_err(|e| TwistError::ArtifactMismatch(format!("{name}: {e}")))
}

/// Loads a persisted bundle, verifying the config hash and every file hash.
pub fn load_bundle(cfg: &ExperimentConfig, dir: &Path) -> Result<Bundle> {
    let manifest = read_manifest(dir)?
        .ok_or_else(|| TwistError::ArtifactMismatch(format!("no manifest in {}", dir.display())))?;
    let expected = cfg.offline_hash();
    if manifest.config_hash != expected {
        return Err(TwistError::ArtifactMismatch(format!(
            "artifacts in {} were built for config {}, current config is {}",
            dir.display(),
            manifest.config_hash,
            expected
        )));
    }
    for name in ARTIFACT_FILES {
        let recorded = manifest
            .files
            .get(name)
            .ok_or_else(|| TwistError::ArtifactMismatch(format!("manifest lacks {name}")))?;
        let bytes = fs::read(dir.join(name))
            .map_err(|e| TwistError::ArtifactMismatch(format!("{name}: {e}")))?;
        if &content_hash(&bytes) != recorded {
            return Err(TwistError::ArtifactMismatch(format!("{name} does not match its manifest hash")));
        }
    }
    let head_info: HeadArtifact = read_json(dir, HEAD_FILE)?;
    let utility: UtilityProfile = read_json(dir, UTILITY_FILE)?;
    let groups: GroupMap = read_json(dir, GROUPS_FILE)?;
    let error_table: ErrorTable = read_json(dir, ERROR_TABLE_FILE)?;
    let profiles: ModeProfilesArtifact = read_json(dir, PROFILES_FILE)?;
    let controller: ControllerArtifact = read_json(dir, CONTROLLER_FILE)?;
    let completion = CompletionModel::load(&dir.join(COMPLETION_FILE))?;
    let alphabet = cfg.alphabet()?;
    let table = EmbeddingTable::build(
        alphabet.codebook_size() as usize,
        head_info.embedding_dim,
        head_info.embedding_seed,
    )?;
    let pipeline = Pipeline {
        alphabet,
        shape: cfg.scene.shape(),
        nominal_budget: cfg.link.nominal_budget,
        snr_range: cfg.snr_range(),
        objective: cfg.objective,
        table,
        head: head_info.head.clone(),
        completion,
        groups,
        twist_profiles: profiles.twist.clone(),
        uniform_profiles: profiles.uniform.clone(),
    };
    Ok(Bundle {
        config_hash: manifest.config_hash,
        artifact_hashes: manifest.files,
        pipeline,
        head_info,
        utility,
        error_table,
        profiles,
        controller,
    })
}

pub fn artifacts_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir.join("artifacts")
}

pub fn cache_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir.join("cache")
}

/// Offline preparation with caching: a bundle whose manifest matches the
/// config is loaded as is, anything else is rebuilt and persisted.
pub fn run_offline(cfg: &ExperimentConfig) -> Result<Bundle> {
    let dir = artifacts_dir(cfg);
    if let Some(m) = read_manifest(&dir)? {
        if m.config_hash == cfg.offline_hash() {
            if let Ok(b) = load_bundle(cfg, &dir) {
                return Ok(b);
            }
        }
    }
    let mut bundle = build_bundle(cfg, Some(&cache_dir(cfg)))?;
    stage("persist", || persist_bundle(&mut bundle, &dir))?;
    Ok(bundle)
}

/// Bundle for online runs: built when absent, loaded when current, and a
/// stale-artifact error when built for another configuration.
pub fn ensure_bundle(cfg: &ExperimentConfig) -> Result<Bundle> {
    let dir = artifacts_dir(cfg);
    match read_manifest(&dir)? {
        Some(_) => load_bundle(cfg, &dir),
        None => run_offline(cfg),
    }
}

