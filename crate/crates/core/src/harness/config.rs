use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::controller::SnrRange;
use crate::error::{Result, TwistError};
use crate::phy::ChannelKind;
use crate::receiver::{CompletionKind, DEFAULT_THRESHOLD_GRID};
use crate::rng::content_hash;
use crate::scene::{SceneConfig, TokenBand};
use crate::types::{ProtectionPolicy, TokenAlphabet};

use super::Method;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embedding_dim: usize,
    pub embedding_seed: u64,
    pub region_rows: usize,
    pub region_cols: usize,
    pub groups: usize,
    pub completion: CompletionKind,
    pub head_epochs: usize,
    pub head_learning_rate: f64,
    pub head_target_loss: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 16,
            embedding_seed: 11,
            region_rows: 4,
            region_cols: 4,
            groups: 4,
            completion: CompletionKind::Cooccurrence,
            head_epochs: 200,
            head_learning_rate: 0.5,
            head_target_loss: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkConfig {
    pub repetitions: Vec<u32>,
    /// Channel uses per frame in the medium mode.
    pub nominal_budget: u64,
    pub design_snr_db: f64,
    pub design_channel: ChannelKind,
    /// SNR sweep; its endpoints also normalize the channel-quality input.
    pub snr_db: Vec<f64>,
    pub profile_trials: usize,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            repetitions: vec![1, 2, 3, 4],
            nominal_budget: 512,
            design_snr_db: 10.0,
            design_channel: ChannelKind::Rayleigh,
            snr_db: vec![0.0, 4.0, 8.0, 12.0, 16.0, 20.0],
            profile_trials: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OfflineConfig {
    pub train_episodes: usize,
    pub train_frames: usize,
    pub calibration_episodes: usize,
    pub calibration_frames: usize,
    pub validation_episodes: usize,
    pub validation_frames: usize,
    pub threshold_grid: Vec<f64>,
    pub weight_grid: Vec<f64>,
    pub theta_low: Vec<f64>,
    pub theta_high: Vec<f64>,
    /// Candidate cut points on the normalized channel quality.
    pub channel_cut_points: Vec<f64>,
}

impl Default for OfflineConfig {
    fn default() -> Self {
        Self {
            train_episodes: 8,
            train_frames: 200,
            calibration_episodes: 2,
            calibration_frames: 100,
            validation_episodes: 4,
            validation_frames: 100,
            threshold_grid: DEFAULT_THRESHOLD_GRID.to_vec(),
            weight_grid: vec![0.0, 0.5, 1.0, 2.0],
            theta_low: vec![-0.5, -0.25, 0.0],
            theta_high: vec![0.25, 0.5, 0.75],
            channel_cut_points: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 1.1],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveConfig {
    pub alpha: f64,
    pub beta: f64,
    pub omega_priority: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.25,
            omega_priority: 2.0,
        }
    }
}

impl ObjectiveConfig {
    pub fn frame_value(&self, q: u8, app_loss: f64, tsmr: f64, cost: f64) -> f64 {
        (1.0 + f64::from(q) * self.omega_priority) * app_loss + self.alpha * tsmr + self.beta * cost
    }
}

/// Piecewise-constant nominal SNR: `(first frame, snr_db)` steps.
pub type SnrSchedule = Vec<(usize, f64)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub channels: Vec<ChannelKind>,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub frames: usize,
    pub write_traces: bool,
    pub rolling_window: usize,
    pub temporal_channel: ChannelKind,
    pub temporal_schedule: SnrSchedule,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            channels: vec![ChannelKind::Awgn, ChannelKind::Rayleigh],
            methods: Method::ALL.to_vec(),
            seeds: (0..10).collect(),
            frames: 200,
            write_traces: true,
            rolling_window: 20,
            temporal_channel: ChannelKind::Rayleigh,
            temporal_schedule: vec![(0, 16.0), (50, 4.0), (100, 12.0), (150, 0.0)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub scene: SceneConfig,
    pub model: ModelConfig,
    pub link: LinkConfig,
    pub offline: OfflineConfig,
    pub objective: ObjectiveConfig,
    pub grid: GridConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// Subset of the configuration that determines the offline artifacts.
#[derive(Serialize)]
struct OfflineKey<'a> {
    seed: u64,
    scene: &'a SceneConfig,
    model: &'a ModelConfig,
    link: &'a LinkConfig,
    offline: &'a OfflineConfig,
    objective: &'a ObjectiveConfig,
}

impl ExperimentConfig {
    pub fn desk() -> Self {
        Self {
            seed: 2024,
            output_dir: PathBuf::from("out"),
            scene: SceneConfig::default(),
            model: ModelConfig::default(),
            link: LinkConfig::default(),
            offline: OfflineConfig::default(),
            objective: ObjectiveConfig::default(),
            grid: GridConfig::default(),
        }
    }

    /// Full-size regime: K = 1024 on a 24 x 24 grid with B0 = 4096.
    pub fn full() -> Self {
        let mut cfg = Self::desk();
        cfg.scene = SceneConfig {
            height: 24,
            width: 24,
            codebook_size: 1024,
            background_band: TokenBand::new(0, 64),
            vehicle_band: TokenBand::new(64, 64),
            pedestrian_band: TokenBand::new(128, 64),
            max_objects: 12,
            vehicle_size: (3, 5),
            pedestrian_size: (3, 2),
            density_thresholds: [2, 6],
            initial_vehicles: 2,
            initial_pedestrians: 1,
            ..SceneConfig::default()
        };
        cfg.model.embedding_dim = 16;
        cfg.link.nominal_budget = 4096;
        cfg
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "full" => Ok(Self::full()),
            other => Err(TwistError::Config(format!("unknown preset `{other}`"))),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| TwistError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TwistError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Applies `dotted.key=value` overrides; values are parsed as TOML and
    /// fall back to plain strings.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        let mut root = toml::Value::try_from(self).map_err(|e| TwistError::Config(e.to_string()))?;
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| TwistError::Config(format!("override `{item}` is not key=value")))?;
            let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(raw.to_string()));
            let mut node = &mut root;
            let parts: Vec<&str> = key.trim().split('.').collect();
            for (i, part) in parts.iter().enumerate() {
                let table = node
                    .as_table_mut()
                    .ok_or_else(|| TwistError::Config(format!("`{key}` does not name a table entry")))?;
                if i + 1 == parts.len() {
                    if !table.contains_key(*part) {
                        return Err(TwistError::Config(format!("unknown config key `{key}`")));
                    }
                    table.insert(part.to_string(), value.clone());
                    break;
                }
                node = table
                    .get_mut(*part)
                    .ok_or_else(|| TwistError::Config(format!("unknown config key `{key}`")))?;
            }
        }
        let cfg: Self = root.try_into().map_err(|e: toml::de::Error| TwistError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn alphabet(&self) -> Result<TokenAlphabet> {
        TokenAlphabet::new(self.scene.codebook_size)
    }

    pub fn policies(&self) -> Result<Vec<ProtectionPolicy>> {
        self.link
            .repetitions
            .iter()
            .map(|&r| ProtectionPolicy::new(r))
            .collect()
    }

    pub fn snr_range(&self) -> SnrRange {
        let min = self.link.snr_db.iter().copied().fold(f64::INFINITY, f64::min);
        let max = self.link.snr_db.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        SnrRange {
            min_db: min,
            max_db: max,
        }
    }

    /// Hash of everything the offline artifacts depend on.
    pub fn offline_hash(&self) -> String {
        let key = OfflineKey {
            seed: self.seed,
            scene: &self.scene,
            model: &self.model,
            link: &self.link,
            offline: &self.offline,
            objective: &self.objective,
        };
        content_hash(&serde_json::to_vec(&key).expect("config serializes"))
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.alphabet()?;
        self.policies()?;
        let cfg_err = |m: &str| Err(TwistError::Config(m.into()));
        let m = &self.model;
        if m.embedding_dim == 0 || m.groups == 0 || m.groups > self.scene.shape().len() {
            return cfg_err("embedding_dim must be >= 1 and groups in [1, L]");
        }
        if m.region_rows == 0
            || m.region_cols == 0
            || m.region_rows > self.scene.height
            || m.region_cols > self.scene.width
        {
            return cfg_err("region tiling does not fit the grid");
        }
        let l = &self.link;
        if l.repetitions.is_empty() || l.snr_db.is_empty() || l.nominal_budget == 0 {
            return cfg_err("link needs policies, an SNR sweep and a positive budget");
        }
        if l.snr_db.iter().chain([&l.design_snr_db]).any(|s| !s.is_finite()) {
            return cfg_err("SNR values must be finite");
        }
        if l.profile_trials == 0 {
            return cfg_err("profile_trials must be >= 1");
        }
        let o = &self.offline;
        if o.train_episodes == 0
            || o.train_frames == 0
            || o.calibration_episodes == 0
            || o.calibration_frames == 0
            || o.validation_episodes == 0
            || o.validation_frames == 0
        {
            return cfg_err("offline splits must be nonempty");
        }
        if o.threshold_grid.is_empty() || o.threshold_grid.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return cfg_err("threshold grid must be a nonempty subset of [0, 1]");
        }
        if o.weight_grid.is_empty() || o.weight_grid.iter().any(|w| !(*w >= 0.0)) {
            return cfg_err("weight grid must be nonempty and non-negative");
        }
        if !o
            .theta_low
            .iter()
            .any(|lo| o.theta_high.iter().any(|hi| lo < hi))
        {
            return cfg_err("no (theta_low, theta_high) pair with theta_low < theta_high");
        }
        if o.channel_cut_points.is_empty() {
            return cfg_err("channel cut points must be nonempty");
        }
        let obj = &self.objective;
        if !(obj.alpha >= 0.0 && obj.beta >= 0.0 && obj.omega_priority >= 0.0) {
            return cfg_err("objective weights must be >= 0");
        }
        let g = &self.grid;
        if g.seeds.is_empty() {
            return cfg_err("seed list must be nonempty");
        }
        if g.frames == 0 || g.channels.is_empty() || g.methods.is_empty() {
            return cfg_err("grid needs frames, channels and methods");
        }
        if g.rolling_window == 0 {
            return cfg_err("rolling window must be >= 1");
        }
        if g.temporal_schedule.first().map(|s| s.0) != Some(0)
            || g.temporal_schedule.windows(2).any(|w| w[0].0 >= w[1].0)
        {
            return cfg_err("SNR schedule must start at frame 0 and increase");
        }
        Ok(())
    }

    /// Per-frame nominal SNR for `frames` frames under the temporal schedule.
    pub fn schedule_snrs(&self, frames: usize) -> Vec<f64> {
        let s = &self.grid.temporal_schedule;
        (0..frames)
            .map(|t| s.iter().rev().find(|(start, _)| *start <= t).map_or(s[0].1, |x| x.1))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for cfg in [ExperimentConfig::desk(), ExperimentConfig::full()] {
            cfg.validate().unwrap();
            let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn partial_file_uses_defaults() {
        let cfg = ExperimentConfig::from_toml_str("seed = 3\n[grid]\nframes = 10\n").unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.grid.frames, 10);
        assert_eq!(cfg.link, LinkConfig::default());
    }

    #[test]
    fn bad_values_are_config_errors() {
        let e = ExperimentConfig::from_toml_str("[grid]\nseeds = []\n").unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(ExperimentConfig::from_toml_str("bogus = 1\n").is_err());
    }

    #[test]
    fn grid_settings_do_not_change_offline_hash() {
        let a = ExperimentConfig::desk();
        let mut b = a.clone();
        b.grid.frames = 17;
        b.output_dir = "elsewhere".into();
        assert_eq!(a.offline_hash(), b.offline_hash());
        b.objective.beta = 1.0;
        assert_ne!(a.offline_hash(), b.offline_hash());
    }

    #[test]
    fn overrides_apply_by_dotted_key() {
        let cfg = ExperimentConfig::desk()
            .with_overrides(&["grid.frames=7".into(), "link.snr_db=[0.0, 10.0]".into(), "output_dir=x".into()])
            .unwrap();
        assert_eq!(cfg.grid.frames, 7);
        assert_eq!(cfg.link.snr_db, vec![0.0, 10.0]);
        assert_eq!(cfg.output_dir, PathBuf::from("x"));
        assert!(ExperimentConfig::desk().with_overrides(&["grid.nope=1".into()]).is_err());
        assert!(ExperimentConfig::desk().with_overrides(&["grid.frames=0".into()]).is_err());
    }

    #[test]
    fn schedule_expands() {
        let cfg = ExperimentConfig::desk();
        let s = cfg.schedule_snrs(160);
        assert_eq!((s[0], s[49], s[50], s[159]), (16.0, 16.0, 4.0, 0.0));
    }
}
