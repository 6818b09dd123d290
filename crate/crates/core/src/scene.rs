//! Synthetic road-scene process. Objects are axis-aligned rectangular blobs of
//! band tokens that random-walk over a static background; every frame carries
//! derived traffic-state labels and an exogenous priority flag.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TwistError};
use crate::rng::{rng_for, SimRng};
use crate::types::{GridShape, Token, TokenAlphabet, TokenGrid};

/// Half-open token range `[start, start + len)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenBand {
    pub start: Token,
    pub len: Token,
}

impl TokenBand {
    pub fn new(start: Token, len: Token) -> Self {
        Self { start, len }
    }

    pub fn end(&self) -> Token {
        self.start + self.len
    }

    pub fn contains(&self, t: Token) -> bool {
        (self.start..self.end()).contains(&t)
    }

    fn overlaps(&self, other: &TokenBand) -> bool {
        self.start < other.end() && other.start < self.end()
    }

    fn sample(&self, rng: &mut SimRng) -> Token {
        self.start + rng.random_range(0..self.len)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectKind {
    Vehicle,
    Pedestrian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub codebook_size: u32,
    pub background_band: TokenBand,
    pub vehicle_band: TokenBand,
    pub pedestrian_band: TokenBand,
    /// Probability that a background cell deviates from its row's base token.
    pub background_noise: f64,
    pub initial_vehicles: usize,
    pub initial_pedestrians: usize,
    pub max_objects: usize,
    pub birth_prob: f64,
    pub death_prob: f64,
    /// Share of newborn objects that are pedestrians.
    pub pedestrian_share: f64,
    pub vehicle_size: (usize, usize),
    pub pedestrian_size: (usize, usize),
    /// Cells moved per frame along each axis (each axis draws -step, 0 or +step).
    pub step: usize,
    /// Object counts `<= thresholds[0]` are low density, `<= thresholds[1]`
    /// medium, anything above is high density and raises the priority flag.
    pub density_thresholds: [usize; 2],
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            height: 12,
            width: 12,
            codebook_size: 64,
            background_band: TokenBand::new(0, 8),
            vehicle_band: TokenBand::new(8, 8),
            pedestrian_band: TokenBand::new(16, 8),
            background_noise: 0.1,
            initial_vehicles: 1,
            initial_pedestrians: 1,
            max_objects: 6,
            birth_prob: 0.12,
            death_prob: 0.04,
            pedestrian_share: 0.4,
            vehicle_size: (2, 3),
            pedestrian_size: (2, 1),
            step: 1,
            density_thresholds: [1, 3],
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn shape(&self) -> GridShape {
        GridShape::new(self.height, self.width)
    }

    pub fn validate(&self) -> Result<()> {
        let alphabet = TokenAlphabet::new(self.codebook_size)?;
        let bands = [self.background_band, self.vehicle_band, self.pedestrian_band];
        for band in &bands {
            if band.len == 0 {
                return Err(TwistError::Config("token bands must be nonempty".into()));
            }
            if band.end() > alphabet.codebook_size() {
                return Err(TwistError::Config(format!(
                    "band [{}, {}) exceeds codebook size {}",
                    band.start,
                    band.end(),
                    self.codebook_size
                )));
            }
        }
        for i in 0..3 {
            for j in (i + 1)..3 {
                if bands[i].overlaps(&bands[j]) {
                    return Err(TwistError::Config("token bands must be disjoint".into()));
                }
            }
        }
        if self.density_thresholds[0] >= self.density_thresholds[1] {
            return Err(TwistError::Config(
                "density thresholds must be strictly increasing".into(),
            ));
        }
        if self.height == 0 || self.width == 0 {
            return Err(TwistError::Config("grid dimensions must be positive".into()));
        }
        for (h, w) in [self.vehicle_size, self.pedestrian_size] {
            if h == 0 || w == 0 || h > self.height || w > self.width {
                return Err(TwistError::Config("object size must fit the grid".into()));
            }
        }
        for p in [
            self.background_noise,
            self.birth_prob,
            self.death_prob,
            self.pedestrian_share,
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(TwistError::Config(format!("probability {p} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn density_class(&self, count: usize) -> u8 {
        let [lo, hi] = self.density_thresholds;
        if count <= lo {
            0
        } else if count <= hi {
            1
        } else {
            2
        }
    }

    /// Labels and priority implied by a set of live objects.
    pub fn labels_for(&self, objects: &[SceneObject]) -> (TrafficLabel, u8) {
        let car = objects.iter().any(|o| o.kind == ObjectKind::Vehicle);
        let ped = objects.iter().any(|o| o.kind == ObjectKind::Pedestrian);
        let label = TrafficLabel {
            car: car as u8,
            ped: ped as u8,
            density: self.density_class(objects.len()),
        };
        let priority = (objects.len() > self.density_thresholds[1]) as u8;
        (label, priority)
    }
}

/// Traffic-state label `(car, ped, density)`; serialized as a 3-element array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(from = "[u8; 3]", into = "[u8; 3]")]
pub struct TrafficLabel {
    pub car: u8,
    pub ped: u8,
    pub density: u8,
}

impl TrafficLabel {
    pub const TASK_CLASSES: [usize; 3] = [2, 2, 3];

    pub fn new(car: u8, ped: u8, density: u8) -> Self {
        Self { car, ped, density }
    }

    pub fn as_array(&self) -> [u8; 3] {
        [self.car, self.ped, self.density]
    }

    pub fn validate(&self) -> Result<()> {
        for (task, (&v, &n)) in self.as_array().iter().zip(&Self::TASK_CLASSES).enumerate() {
            if usize::from(v) >= n {
                return Err(TwistError::LabelOutOfRange(format!(
                    "task {task} label {v} not below {n}"
                )));
            }
        }
        Ok(())
    }
}

impl From<[u8; 3]> for TrafficLabel {
    fn from(a: [u8; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

impl From<TrafficLabel> for [u8; 3] {
    fn from(l: TrafficLabel) -> Self {
        l.as_array()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledFrame {
    pub grid: TokenGrid,
    pub label: TrafficLabel,
    pub priority: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SceneObject {
    pub kind: ObjectKind,
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
    /// Row-major token pattern, fixed for the object's lifetime.
    pub pattern: Vec<Token>,
}

impl SceneObject {
    pub fn cells(&self, shape: GridShape) -> impl Iterator<Item = usize> + '_ {
        (0..self.height).flat_map(move |dr| {
            (0..self.width).map(move |dc| shape.index(self.row + dr, self.col + dc))
        })
    }
}

/// Stateful episode generator; exposes the live objects for inspection.
pub struct SceneGenerator {
    cfg: SceneConfig,
    rng: SimRng,
    background: Vec<Token>,
    objects: Vec<SceneObject>,
}

impl SceneGenerator {
    pub fn new(cfg: &SceneConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rng_for(cfg.seed, &["scene"]);
        let shape = cfg.shape();
        let band = cfg.background_band;
        let mut background = Vec::with_capacity(shape.len());
        for r in 0..cfg.height {
            let base = band.start + ((r * band.len as usize) / cfg.height) as Token;
            for _ in 0..cfg.width {
                let t = if rng.random_bool(cfg.background_noise) {
                    band.sample(&mut rng)
                } else {
                    base
                };
                background.push(t);
            }
        }
        let mut gen = Self {
            cfg: cfg.clone(),
            rng,
            background,
            objects: Vec::new(),
        };
        for _ in 0..cfg.initial_vehicles {
            gen.spawn(ObjectKind::Vehicle);
        }
        for _ in 0..cfg.initial_pedestrians {
            gen.spawn(ObjectKind::Pedestrian);
        }
        Ok(gen)
    }

    pub fn objects(&self) -> &[SceneObject] {
        &self.objects
    }

    pub fn background(&self) -> &[Token] {
        &self.background
    }

    fn spawn(&mut self, kind: ObjectKind) {
        let (h, w, band) = match kind {
            ObjectKind::Vehicle => (
                self.cfg.vehicle_size.0,
                self.cfg.vehicle_size.1,
                self.cfg.vehicle_band,
            ),
            ObjectKind::Pedestrian => (
                self.cfg.pedestrian_size.0,
                self.cfg.pedestrian_size.1,
                self.cfg.pedestrian_band,
            ),
        };
        let row = self.rng.random_range(0..=self.cfg.height - h);
        let col = self.rng.random_range(0..=self.cfg.width - w);
        let pattern = (0..h * w).map(|_| band.sample(&mut self.rng)).collect();
        self.objects.push(SceneObject {
            kind,
            row,
            col,
            height: h,
            width: w,
            pattern,
        });
    }

    pub fn render(&self) -> TokenGrid {
        let shape = self.cfg.shape();
        let mut tokens = self.background.clone();
        for obj in &self.objects {
            for (cell, &t) in obj.cells(shape).zip(&obj.pattern) {
                tokens[cell] = t;
            }
        }
        TokenGrid::new(shape, tokens).expect("rendered grid matches shape")
    }

    pub fn current_frame(&self) -> LabeledFrame {
        let (label, priority) = self.cfg.labels_for(&self.objects);
        LabeledFrame {
            grid: self.render(),
            label,
            priority,
        }
    }

    /// Advances the object process by one frame: deaths, moves, then births.
    pub fn step(&mut self) {
        let death = self.cfg.death_prob;
        let rng = &mut self.rng;
        self.objects.retain(|_| !rng.random_bool(death));
        let s = self.cfg.step as isize;
        for i in 0..self.objects.len() {
            let dr = [-s, 0, s][self.rng.random_range(0..3)];
            let dc = [-s, 0, s][self.rng.random_range(0..3)];
            let obj = &mut self.objects[i];
            let max_r = (self.cfg.height - obj.height) as isize;
            let max_c = (self.cfg.width - obj.width) as isize;
            obj.row = (obj.row as isize + dr).clamp(0, max_r) as usize;
            obj.col = (obj.col as isize + dc).clamp(0, max_c) as usize;
        }
        if self.objects.len() < self.cfg.max_objects && self.rng.random_bool(self.cfg.birth_prob) {
            let kind = if self.rng.random_bool(self.cfg.pedestrian_share) {
                ObjectKind::Pedestrian
            } else {
                ObjectKind::Vehicle
            };
            self.spawn(kind);
        }
    }
}

/// Generates `frames` labeled frames; the first frame is the initial state.
pub fn generate_episode(cfg: &SceneConfig, frames: usize) -> Result<Vec<LabeledFrame>> {
    if frames == 0 {
        return Err(TwistError::Config("frame count must be >= 1".into()));
    }
    let mut gen = SceneGenerator::new(cfg)?;
    let mut out = Vec::with_capacity(frames);
    out.push(gen.current_frame());
    for _ in 1..frames {
        gen.step();
        out.push(gen.current_frame());
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct FrameRecord {
    t: usize,
    tokens: Vec<Token>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<TrafficLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    q: Option<u8>,
}

pub fn write_episode(path: &Path, frames: &[LabeledFrame]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for (t, frame) in frames.iter().enumerate() {
        let rec = FrameRecord {
            t,
            tokens: frame.grid.tokens().to_vec(),
            label: Some(frame.label),
            q: Some(frame.priority),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Plain token-grid line `{"t": .., "tokens": [..]}` as used in trace logs.
pub fn grid_to_json_line(t: usize, grid: &TokenGrid) -> String {
    let rec = FrameRecord {
        t,
        tokens: grid.tokens().to_vec(),
        label: None,
        q: None,
    };
    serde_json::to_string(&rec).expect("frame record serializes")
}

pub fn load_episode(
    path: &Path,
    shape: GridShape,
    alphabet: &TokenAlphabet,
) -> Result<Vec<LabeledFrame>> {
    let reader = BufReader::new(File::open(path)?);
    let mut frames = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let parse_err = |message: String| TwistError::Parse {
            path: path.to_path_buf(),
            line: lineno,
            message,
        };
        let rec: FrameRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let label = rec.label.ok_or_else(|| parse_err("missing `label`".into()))?;
        let q = rec.q.ok_or_else(|| parse_err("missing `q`".into()))?;
        let invalid = |e: TwistError| TwistError::Validation(format!("line {lineno}: {e}"));
        if rec.t != frames.len() {
            return Err(invalid(TwistError::Validation(format!(
                "expected frame index {}, found {}",
                frames.len(),
                rec.t
            ))));
        }
        let grid = TokenGrid::new(shape, rec.tokens).map_err(invalid)?;
        grid.validate(alphabet).map_err(invalid)?;
        label.validate().map_err(invalid)?;
        if q > 1 {
            return Err(invalid(TwistError::LabelOutOfRange(format!("priority {q}"))));
        }
        frames.push(LabeledFrame {
            grid,
            label,
            priority: q,
        });
    }
    if frames.is_empty() {
        return Err(TwistError::EmptyInput("episode file has no frames"));
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet_cfg() -> SceneConfig {
        SceneConfig {
            initial_vehicles: 0,
            initial_pedestrians: 0,
            birth_prob: 0.0,
            ..SceneConfig::default()
        }
    }

    #[test]
    fn empty_scene_is_all_background() {
        let cfg = quiet_cfg();
        let frames = generate_episode(&cfg, 30).unwrap();
        for f in &frames {
            assert!(f.grid.tokens().iter().all(|&t| cfg.background_band.contains(t)));
            assert_eq!(f.label, TrafficLabel::new(0, 0, 0));
            assert_eq!(f.priority, 0);
        }
        assert!(frames.windows(2).all(|w| w[0].grid == w[1].grid));
    }

    #[test]
    fn immortal_vehicle_keeps_car_label() {
        let cfg = SceneConfig {
            initial_vehicles: 1,
            death_prob: 0.0,
            ..quiet_cfg()
        };
        let frames = generate_episode(&cfg, 100).unwrap();
        assert!(frames.iter().all(|f| f.label.car == 1 && f.label.ped == 0));
    }

    #[test]
    fn degenerate_bands_are_rejected() {
        let cfg = SceneConfig {
            vehicle_band: TokenBand::new(8, 0),
            ..SceneConfig::default()
        };
        assert!(matches!(generate_episode(&cfg, 3), Err(TwistError::Config(_))));
        let overlapping = SceneConfig {
            vehicle_band: TokenBand::new(4, 8),
            ..SceneConfig::default()
        };
        assert!(overlapping.validate().is_err());
        let thresholds = SceneConfig {
            density_thresholds: [2, 2],
            ..SceneConfig::default()
        };
        assert!(thresholds.validate().is_err());
    }

    #[test]
    fn zero_frames_is_an_error() {
        assert!(generate_episode(&SceneConfig::default(), 0).is_err());
    }

    #[test]
    fn density_classes_follow_thresholds() {
        let cfg = SceneConfig::default();
        let classes: Vec<u8> = (0..6).map(|n| cfg.density_class(n)).collect();
        assert_eq!(classes, vec![0, 0, 1, 1, 2, 2]);
    }
}
