//! Twin-side state inference head and everything derived from its gradients:
//! application loss, per-position token utilities, utility grouping and the
//! utility-weighted loss-perturbation bound.
//!
//! The head mean-pools the embedding matrix over a rectangular tiling of the
//! grid and applies one affine map per task (car: 2 classes, pedestrian: 2,
//! density: 3) followed by a softmax. Gradients are closed-form.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TwistError};
use crate::rng::rng_from_seed;
use crate::scene::{LabeledFrame, TrafficLabel};
use crate::types::{
    ensure_same_shape, EmbeddingMatrix, EmbeddingTable, GridShape, GroupMap, TokenGrid,
};
use rand::Rng;
use rand_distr::StandardNormal;

pub const TASKS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateHead {
    shape: GridShape,
    dim: usize,
    region_rows: usize,
    region_cols: usize,
    region_of: Vec<usize>,
    region_sizes: Vec<usize>,
    /// Per task: `classes x (R * D)` row-major.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

/// Logits per task plus the per-task argmax.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput {
    pub logits: [Vec<f64>; TASKS],
    pub prediction: TrafficLabel,
}

impl StateHead {
    /// Head with all-zero parameters over a `region_rows x region_cols` tiling.
    pub fn zeros(
        shape: GridShape,
        dim: usize,
        region_rows: usize,
        region_cols: usize,
    ) -> Result<Self> {
        if region_rows == 0
            || region_cols == 0
            || region_rows > shape.height
            || region_cols > shape.width
            || dim == 0
        {
            return Err(TwistError::Config(format!(
                "cannot tile a {}x{} grid into {region_rows}x{region_cols} regions",
                shape.height, shape.width
            )));
        }
        let regions = region_rows * region_cols;
        let mut region_of = Vec::with_capacity(shape.len());
        let mut region_sizes = vec![0usize; regions];
        for r in 0..shape.height {
            for c in 0..shape.width {
                let g = (r * region_rows / shape.height) * region_cols + c * region_cols / shape.width;
                region_of.push(g);
                region_sizes[g] += 1;
            }
        }
        let features = regions * dim;
        Ok(Self {
            shape,
            dim,
            region_rows,
            region_cols,
            region_of,
            region_sizes,
            weights: TrafficLabel::TASK_CLASSES
                .iter()
                .map(|&k| vec![0.0; k * features])
                .collect(),
            biases: TrafficLabel::TASK_CLASSES
                .iter()
                .map(|&k| vec![0.0; k])
                .collect(),
        })
    }

    /// Head with small seeded Gaussian weights and zero biases.
    pub fn random(
        shape: GridShape,
        dim: usize,
        region_rows: usize,
        region_cols: usize,
        scale: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut head = Self::zeros(shape, dim, region_rows, region_cols)?;
        let mut rng = rng_from_seed(seed);
        for w in head.weights.iter_mut().flatten() {
            *w = scale * rng.sample::<f64, _>(StandardNormal);
        }
        Ok(head)
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn regions(&self) -> usize {
        self.region_sizes.len()
    }

    pub fn region_of(&self, position: usize) -> usize {
        self.region_of[position]
    }

    pub fn feature_len(&self) -> usize {
        self.regions() * self.dim
    }

    pub fn weights(&self, task: usize) -> &[f64] {
        &self.weights[task]
    }

    pub fn weights_mut(&mut self, task: usize) -> &mut [f64] {
        &mut self.weights[task]
    }

    pub fn biases(&self, task: usize) -> &[f64] {
        &self.biases[task]
    }

    pub fn biases_mut(&mut self, task: usize) -> &mut [f64] {
        &mut self.biases[task]
    }

    /// Zeroes every weight that reads from `region`.
    pub fn silence_region(&mut self, region: usize) {
        let f = self.feature_len();
        for w in &mut self.weights {
            for row in w.chunks_mut(f) {
                row[region * self.dim..(region + 1) * self.dim].fill(0.0);
            }
        }
    }

    fn check_dims(&self, z: &EmbeddingMatrix) -> Result<()> {
        if z.rows() != self.shape.len() || z.dim() != self.dim {
            return Err(TwistError::DimensionMismatch(format!(
                "head expects {}x{} embeddings, got {}x{}",
                self.shape.len(),
                self.dim,
                z.rows(),
                z.dim()
            )));
        }
        Ok(())
    }

    /// Region-mean pooled feature vector of length `R * D`.
    pub fn pool(&self, z: &EmbeddingMatrix) -> Result<Vec<f64>> {
        self.check_dims(z)?;
        let mut pooled = vec![0.0; self.feature_len()];
        for i in 0..z.rows() {
            let r = self.region_of[i];
            for (acc, &v) in pooled[r * self.dim..(r + 1) * self.dim]
                .iter_mut()
                .zip(z.row(i))
            {
                *acc += v;
            }
        }
        for (r, &n) in self.region_sizes.iter().enumerate() {
            let inv = 1.0 / n as f64;
            pooled[r * self.dim..(r + 1) * self.dim]
                .iter_mut()
                .for_each(|v| *v *= inv);
        }
        Ok(pooled)
    }

    pub fn logits_from_features(&self, features: &[f64]) -> [Vec<f64>; TASKS] {
        let f = self.feature_len();
        std::array::from_fn(|task| {
            self.weights[task]
                .chunks(f)
                .zip(&self.biases[task])
                .map(|(row, b)| b + row.iter().zip(features).map(|(w, x)| w * x).sum::<f64>())
                .collect()
        })
    }

    pub fn infer(&self, z: &EmbeddingMatrix) -> Result<HeadOutput> {
        let logits = self.logits_from_features(&self.pool(z)?);
        let prediction = TrafficLabel::new(
            argmax(&logits[0]) as u8,
            argmax(&logits[1]) as u8,
            argmax(&logits[2]) as u8,
        );
        Ok(HeadOutput { logits, prediction })
    }

    /// `dL_app/dfeatures` for the summed cross-entropy loss.
    fn feature_gradient(&self, logits: &[Vec<f64>; TASKS], y: TrafficLabel) -> Vec<f64> {
        let f = self.feature_len();
        let mut grad = vec![0.0; f];
        for (task, &yk) in y.as_array().iter().enumerate() {
            let probs = softmax(&logits[task]);
            for (k, row) in self.weights[task].chunks(f).enumerate() {
                let delta = probs[k] - if k == usize::from(yk) { 1.0 } else { 0.0 };
                if delta != 0.0 {
                    grad.iter_mut().zip(row).for_each(|(g, w)| *g += delta * w);
                }
            }
        }
        grad
    }

    /// `dL_app/dz_i` for every position, as an `L x D` matrix.
    pub fn loss_gradient(&self, z: &EmbeddingMatrix, y: TrafficLabel) -> Result<EmbeddingMatrix> {
        y.validate()?;
        let logits = self.logits_from_features(&self.pool(z)?);
        let fg = self.feature_gradient(&logits, y);
        let mut out = EmbeddingMatrix::zeros(z.rows(), self.dim);
        for i in 0..z.rows() {
            let r = self.region_of[i];
            let inv = 1.0 / self.region_sizes[r] as f64;
            for (o, g) in out
                .row_mut(i)
                .iter_mut()
                .zip(&fg[r * self.dim..(r + 1) * self.dim])
            {
                *o = g * inv;
            }
        }
        Ok(out)
    }

    pub fn loss(&self, z: &EmbeddingMatrix, y: TrafficLabel) -> Result<f64> {
        app_loss(&self.infer(z)?.logits, y)
    }

    /// Full-batch gradient descent on pre-pooled features. Stops after
    /// `max_epochs` or once the mean training loss drops below `target_loss`.
    /// Returns the final mean loss.
    ///
    /// Descent runs on standardized features; the scaling is folded back into
    /// the weights and biases afterwards, so the result is an affine map of the
    /// raw pooled features.
    pub fn train(
        &mut self,
        features: &[Vec<f64>],
        labels: &[TrafficLabel],
        max_epochs: usize,
        learning_rate: f64,
        target_loss: f64,
    ) -> Result<f64> {
        if features.is_empty() {
            return Err(TwistError::EmptyInput("head training set"));
        }
        if features.len() != labels.len() {
            return Err(TwistError::DimensionMismatch(
                "feature and label counts differ".into(),
            ));
        }
        let f = self.feature_len();
        if let Some(x) = features.iter().find(|x| x.len() != f) {
            return Err(TwistError::DimensionMismatch(format!(
                "feature length {} != {f}",
                x.len()
            )));
        }
        let n = features.len() as f64;
        let mut mean = vec![0.0; f];
        for x in features {
            mean.iter_mut().zip(x).for_each(|(m, v)| *m += v / n);
        }
        let mut scale = vec![0.0; f];
        for x in features {
            scale
                .iter_mut()
                .zip(x.iter().zip(&mean))
                .for_each(|(s, (v, m))| *s += (v - m) * (v - m) / n);
        }
        scale
            .iter_mut()
            .for_each(|s| *s = if *s > 1e-24 { s.sqrt() } else { 1.0 });
        let standardized: Vec<Vec<f64>> = features
            .iter()
            .map(|x| {
                x.iter()
                    .zip(mean.iter().zip(&scale))
                    .map(|(v, (m, s))| (v - m) / s)
                    .collect()
            })
            .collect();
        for task in 0..TASKS {
            for k in 0..self.biases[task].len() {
                let w = &mut self.weights[task][k * f..(k + 1) * f];
                self.biases[task][k] += w.iter().zip(&mean).map(|(a, m)| a * m).sum::<f64>();
                w.iter_mut().zip(&scale).for_each(|(a, s)| *a *= s);
            }
        }

        let mut loss = f64::INFINITY;
        for _ in 0..max_epochs {
            let mut gw: Vec<Vec<f64>> = self.weights.iter().map(|w| vec![0.0; w.len()]).collect();
            let mut gb: Vec<Vec<f64>> = self.biases.iter().map(|b| vec![0.0; b.len()]).collect();
            let mut total = 0.0;
            for (x, y) in standardized.iter().zip(labels) {
                let logits = self.logits_from_features(x);
                total += app_loss(&logits, *y)?;
                for (task, &yk) in y.as_array().iter().enumerate() {
                    let probs = softmax(&logits[task]);
                    for (k, p) in probs.iter().enumerate() {
                        let delta = p - if k == usize::from(yk) { 1.0 } else { 0.0 };
                        gb[task][k] += delta;
                        gw[task][k * f..(k + 1) * f]
                            .iter_mut()
                            .zip(x)
                            .for_each(|(g, xi)| *g += delta * xi);
                    }
                }
            }
            loss = total / n;
            if loss < target_loss {
                break;
            }
            for task in 0..TASKS {
                self.weights[task]
                    .iter_mut()
                    .zip(&gw[task])
                    .for_each(|(w, g)| *w -= learning_rate * g / n);
                self.biases[task]
                    .iter_mut()
                    .zip(&gb[task])
                    .for_each(|(b, g)| *b -= learning_rate * g / n);
            }
        }
        if max_epochs > 0 && loss >= target_loss {
            loss = standardized
                .iter()
                .zip(labels)
                .map(|(x, y)| app_loss(&self.logits_from_features(x), *y))
                .sum::<Result<f64>>()?
                / n;
        }

        for task in 0..TASKS {
            for k in 0..self.biases[task].len() {
                let w = &mut self.weights[task][k * f..(k + 1) * f];
                w.iter_mut().zip(&scale).for_each(|(a, s)| *a /= s);
                self.biases[task][k] -= w.iter().zip(&mean).map(|(a, m)| a * m).sum::<f64>();
            }
        }
        Ok(loss)
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(xs);
    xs.iter().map(|x| (x - lse).exp()).collect()
}

pub fn infer_state(z: &EmbeddingMatrix, head: &StateHead) -> Result<HeadOutput> {
    head.infer(z)
}

/// Sum of the three per-task softmax cross-entropy losses.
pub fn app_loss(logits: &[Vec<f64>; TASKS], y: TrafficLabel) -> Result<f64> {
    y.validate()?;
    let mut total = 0.0;
    for (task, &yk) in y.as_array().iter().enumerate() {
        let l = &logits[task];
        if l.len() != TrafficLabel::TASK_CLASSES[task] {
            return Err(TwistError::DimensionMismatch(format!(
                "task {task} has {} logits",
                l.len()
            )));
        }
        total += log_sum_exp(l) - l[usize::from(yk)];
    }
    Ok(total)
}

/// Gradient-norm utility of every position at the clean embedding.
pub fn token_utilities(
    grid: &TokenGrid,
    y: TrafficLabel,
    head: &StateHead,
    table: &EmbeddingTable,
) -> Result<Vec<f64>> {
    let z = table.embed(grid)?;
    let g = head.loss_gradient(&z, y)?;
    Ok((0..g.rows()).map(|i| norm(g.row(i))).collect())
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityProfile {
    pub utilities: Vec<f64>,
    pub calibration_frames: usize,
}

/// Calibration-set mean of the per-frame token utilities.
pub fn mean_utility_profile(
    frames: &[LabeledFrame],
    head: &StateHead,
    table: &EmbeddingTable,
) -> Result<UtilityProfile> {
    let first = frames
        .first()
        .ok_or(TwistError::EmptyInput("calibration set"))?;
    let mut sum = vec![0.0; first.grid.len()];
    for frame in frames {
        let w = token_utilities(&frame.grid, frame.label, head, table)?;
        if w.len() != sum.len() {
            return Err(TwistError::DimensionMismatch(
                "calibration frames differ in length".into(),
            ));
        }
        sum.iter_mut().zip(&w).for_each(|(s, x)| *s += x);
    }
    let n = frames.len() as f64;
    Ok(UtilityProfile {
        utilities: sum.into_iter().map(|s| s / n).collect(),
        calibration_frames: frames.len(),
    })
}

/// Splits positions into `groups` quantile groups by descending utility
/// (ties by position index). When sizes cannot be equal, the trailing
/// lower-utility groups get the extra position.
pub fn build_group_map(profile: &UtilityProfile, groups: usize) -> Result<GroupMap> {
    let w = &profile.utilities;
    let l = w.len();
    if groups == 0 || groups > l {
        return Err(TwistError::InvalidParameter(format!(
            "group count {groups} must lie in [1, {l}]"
        )));
    }
    let mut order: Vec<usize> = (0..l).collect();
    order.sort_by(|&a, &b| w[b].total_cmp(&w[a]).then(a.cmp(&b)));
    let base = l / groups;
    let extra = l % groups;
    let sizes: Vec<usize> = (0..groups)
        .map(|g| base + usize::from(g >= groups - extra))
        .collect();
    let mut assignment = vec![0usize; l];
    let mut cursor = 0;
    for (g, &n) in sizes.iter().enumerate() {
        for &pos in &order[cursor..cursor + n] {
            assignment[pos] = g;
        }
        cursor += n;
    }
    let mut utilities = vec![0.0; groups];
    for (pos, &g) in assignment.iter().enumerate() {
        utilities[g] += w[pos];
    }
    Ok(GroupMap {
        groups,
        assignment,
        sizes,
        utilities,
    })
}

/// Both sides of the utility-weighted loss bound for one corrupted frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

impl BoundCheck {
    pub fn margin(&self) -> f64 {
        self.rhs - self.lhs
    }
}

/// Path points at which the path sensitivity is sampled.
pub const BOUND_PATH_POINTS: usize = 11;
/// Inflation applied to the sampled path supremum.
pub const BOUND_SAFETY_FACTOR: f64 = 1.5;

/// `|L(Z_hat) - L(Z)|` against `Delta_max * sum_i w_sup_i * 1{corrupted_i}`,
/// with `w_sup_i` taken as the largest gradient norm over evenly spaced points
/// on the straight path from `Z` to `Z_hat`, times the safety factor.
pub fn check_prop1_bound(
    grid: &TokenGrid,
    corrupted: &TokenGrid,
    y: TrafficLabel,
    head: &StateHead,
    table: &EmbeddingTable,
) -> Result<BoundCheck> {
    ensure_same_shape(grid.shape(), corrupted.shape())?;
    let z = table.embed(grid)?;
    let z_hat = table.embed(corrupted)?;
    let lhs = (head.loss(&z_hat, y)? - head.loss(&z, y)?).abs();
    let changed: Vec<usize> = (0..grid.len())
        .filter(|&i| grid.tokens()[i] != corrupted.tokens()[i])
        .collect();
    let mut sup = vec![0.0f64; changed.len()];
    for step in 0..BOUND_PATH_POINTS {
        let alpha = step as f64 / (BOUND_PATH_POINTS - 1) as f64;
        let g = head.loss_gradient(&z.lerp(&z_hat, alpha), y)?;
        for (s, &i) in sup.iter_mut().zip(&changed) {
            *s = s.max(norm(g.row(i)));
        }
    }
    let rhs = BOUND_SAFETY_FACTOR * table.diameter() * sup.iter().sum::<f64>();
    Ok(BoundCheck {
        lhs,
        rhs,
        holds: lhs <= rhs,
    })
}
