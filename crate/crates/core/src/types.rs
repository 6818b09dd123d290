//! Shared domain vocabulary: token alphabets, grids, embeddings, modes,
//! utility groups and per-mode profiles.
//!
//! Token indices are 0-based: a codebook of size `K` holds tokens `0..K`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TwistError};
use crate::rng::rng_from_seed;

pub type Token = u32;

/// Bits carried by one 16QAM symbol.
pub const BITS_PER_SYMBOL: u32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenAlphabet {
    codebook_size: u32,
    bits_per_token: u32,
}

impl TokenAlphabet {
    /// The codebook size must be a power of two (at least 2) so that every
    /// `b`-bit pattern is a valid token.
    pub fn new(codebook_size: u32) -> Result<Self> {
        if codebook_size < 2 || !codebook_size.is_power_of_two() {
            return Err(TwistError::Config(format!(
                "codebook size must be a power of two >= 2, got {codebook_size}"
            )));
        }
        Ok(Self {
            codebook_size,
            bits_per_token: codebook_size.trailing_zeros(),
        })
    }

    pub fn codebook_size(&self) -> u32 {
        self.codebook_size
    }

    pub fn bits_per_token(&self) -> u32 {
        self.bits_per_token
    }

    pub fn contains(&self, token: Token) -> bool {
        token < self.codebook_size
    }

    pub fn check(&self, token: Token) -> Result<Token> {
        if self.contains(token) {
            Ok(token)
        } else {
            Err(TwistError::InvalidToken {
                token,
                codebook_size: self.codebook_size,
            })
        }
    }

    /// Bits of `token`, most significant first.
    pub fn to_bits(&self, token: Token) -> impl Iterator<Item = bool> + '_ {
        let b = self.bits_per_token;
        (0..b).map(move |j| (token >> (b - 1 - j)) & 1 == 1)
    }

    pub fn from_bits(&self, bits: &[bool]) -> Token {
        debug_assert_eq!(bits.len(), self.bits_per_token as usize);
        bits.iter().fold(0, |acc, &bit| (acc << 1) | bit as Token)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridShape {
    pub height: usize,
    pub width: usize,
}

impl GridShape {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    /// 4-neighbourhood of position `i` (up, left, right, down).
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> {
        let (r, c) = (i / self.width, i % self.width);
        let (h, w) = (self.height, self.width);
        [
            (r > 0).then(|| i - w),
            (c > 0).then(|| i - 1),
            (c + 1 < w).then(|| i + 1),
            (r + 1 < h).then(|| i + w),
        ]
        .into_iter()
        .flatten()
    }
}

/// Physical (or twin) token state of one frame, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenGrid {
    shape: GridShape,
    tokens: Vec<Token>,
}

impl TokenGrid {
    pub fn new(shape: GridShape, tokens: Vec<Token>) -> Result<Self> {
        if shape.is_empty() || tokens.len() != shape.len() {
            return Err(TwistError::DimensionMismatch(format!(
                "{}x{} grid needs {} tokens, got {}",
                shape.height,
                shape.width,
                shape.len(),
                tokens.len()
            )));
        }
        Ok(Self { shape, tokens })
    }

    pub fn filled(shape: GridShape, token: Token) -> Self {
        Self {
            shape,
            tokens: vec![token; shape.len()],
        }
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn tokens_mut(&mut self) -> &mut [Token] {
        &mut self.tokens
    }

    pub fn into_tokens(self) -> Vec<Token> {
        self.tokens
    }

    pub fn validate(&self, alphabet: &TokenAlphabet) -> Result<()> {
        self.tokens
            .iter()
            .try_for_each(|&t| alphabet.check(t).map(|_| ()))
    }

    /// Number of positions where the two grids differ.
    pub fn hamming(&self, other: &TokenGrid) -> Result<usize> {
        ensure_same_shape(self.shape, other.shape)?;
        Ok(self
            .tokens
            .iter()
            .zip(&other.tokens)
            .filter(|(a, b)| a != b)
            .count())
    }
}

pub(crate) fn ensure_same_shape(a: GridShape, b: GridShape) -> Result<()> {
    if a != b {
        return Err(TwistError::DimensionMismatch(format!(
            "grid shapes differ: {}x{} vs {}x{}",
            a.height, a.width, b.height, b.width
        )));
    }
    Ok(())
}

/// Receiver output after confidence gating; `None` is the erasure symbol.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GatedTokenGrid {
    shape: GridShape,
    entries: Vec<Option<Token>>,
}

impl GatedTokenGrid {
    pub fn new(shape: GridShape, entries: Vec<Option<Token>>) -> Result<Self> {
        if entries.len() != shape.len() {
            return Err(TwistError::DimensionMismatch(format!(
                "gated grid needs {} entries, got {}",
                shape.len(),
                entries.len()
            )));
        }
        Ok(Self { shape, entries })
    }

    pub fn accept_all(grid: &TokenGrid) -> Self {
        Self {
            shape: grid.shape(),
            entries: grid.tokens().iter().map(|&t| Some(t)).collect(),
        }
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Option<Token>] {
        &self.entries
    }

    pub fn erased_count(&self) -> usize {
        self.entries.iter().filter(|e| e.is_none()).count()
    }

    pub fn accepted_count(&self) -> usize {
        self.len() - self.erased_count()
    }

    /// Converts to a full grid when nothing is erased.
    pub fn to_complete(&self) -> Option<TokenGrid> {
        let tokens = self.entries.iter().copied().collect::<Option<Vec<_>>>()?;
        Some(TokenGrid {
            shape: self.shape,
            tokens,
        })
    }
}

/// Seeded synthetic token embedding table with unit-RMS rows.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    rows: usize,
    dim: usize,
    seed: u64,
    values: Vec<f64>,
}

impl EmbeddingTable {
    pub fn build(rows: usize, dim: usize, seed: u64) -> Result<Self> {
        if rows == 0 || dim == 0 {
            return Err(TwistError::Config(format!(
                "embedding table needs K, D >= 1, got K={rows}, D={dim}"
            )));
        }
        let mut rng = rng_from_seed(seed);
        let mut values: Vec<f64> = (0..rows * dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        for row in values.chunks_mut(dim) {
            let rms = (row.iter().map(|x| x * x).sum::<f64>() / dim as f64).sqrt();
            if rms > 0.0 {
                row.iter_mut().for_each(|x| *x /= rms);
            }
        }
        Ok(Self {
            rows,
            dim,
            seed,
            values,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn row(&self, token: Token) -> &[f64] {
        let k = token as usize;
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn distance(&self, u: Token, v: Token) -> f64 {
        self.row(u)
            .iter()
            .zip(self.row(v))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Embedding diameter: the largest pairwise Euclidean row distance.
    pub fn diameter(&self) -> f64 {
        let mut best = 0.0f64;
        for u in 0..self.rows as Token {
            for v in (u + 1)..self.rows as Token {
                best = best.max(self.distance(u, v));
            }
        }
        best
    }

    /// Row-major `L x D` matrix of the embeddings of `grid`.
    pub fn embed(&self, grid: &TokenGrid) -> Result<EmbeddingMatrix> {
        let mut data = Vec::with_capacity(grid.len() * self.dim);
        for &t in grid.tokens() {
            if t as usize >= self.rows {
                return Err(TwistError::InvalidToken {
                    token: t,
                    codebook_size: self.rows as u32,
                });
            }
            data.extend_from_slice(self.row(t));
        }
        Ok(EmbeddingMatrix {
            rows: grid.len(),
            dim: self.dim,
            data,
        })
    }

    /// Like [`embed`](Self::embed), but erased positions map to the zero vector.
    pub fn embed_gated(&self, grid: &GatedTokenGrid) -> Result<EmbeddingMatrix> {
        let mut data = Vec::with_capacity(grid.len() * self.dim);
        for entry in grid.entries() {
            match *entry {
                Some(t) if (t as usize) < self.rows => data.extend_from_slice(self.row(t)),
                Some(t) => {
                    return Err(TwistError::InvalidToken {
                        token: t,
                        codebook_size: self.rows as u32,
                    })
                }
                None => data.extend(std::iter::repeat_n(0.0, self.dim)),
            }
        }
        Ok(EmbeddingMatrix {
            rows: grid.len(),
            dim: self.dim,
            data,
        })
    }
}

/// Free-function form of [`EmbeddingTable::embed`].
pub fn embed(grid: &TokenGrid, table: &EmbeddingTable) -> Result<EmbeddingMatrix> {
    table.embed(grid)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        Self {
            rows,
            dim,
            data: vec![0.0; rows * dim],
        }
    }

    pub fn from_vec(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(TwistError::DimensionMismatch(format!(
                "{rows}x{dim} matrix needs {} values, got {}",
                rows * dim,
                data.len()
            )));
        }
        Ok(Self { rows, dim, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// `self + alpha * (other - self)`.
    pub fn lerp(&self, other: &EmbeddingMatrix, alpha: f64) -> EmbeddingMatrix {
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + alpha * (b - a))
            .collect();
        EmbeddingMatrix {
            rows: self.rows,
            dim: self.dim,
            data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyncMode {
    Low,
    Med,
    High,
}

impl SyncMode {
    pub const ALL: [SyncMode; 3] = [SyncMode::Low, SyncMode::Med, SyncMode::High];

    /// Budget relative to the nominal budget `B_0`.
    pub fn budget_multiplier(self) -> f64 {
        match self {
            SyncMode::Low => 0.5,
            SyncMode::Med => 1.0,
            SyncMode::High => 2.0,
        }
    }

    /// Channel-use budget `N^(a)` for nominal budget `B_0`.
    pub fn budget(self, nominal: u64) -> u64 {
        match self {
            SyncMode::Low => nominal / 2,
            SyncMode::Med => nominal,
            SyncMode::High => nominal * 2,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SyncMode::Low => "low",
            SyncMode::Med => "med",
            SyncMode::High => "high",
        }
    }
}

impl fmt::Display for SyncMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SyncMode {
    type Err = TwistError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "low" => Ok(SyncMode::Low),
            "med" => Ok(SyncMode::Med),
            "high" => Ok(SyncMode::High),
            other => Err(TwistError::Config(format!("unknown mode `{other}`"))),
        }
    }
}

/// Partition of token positions into utility groups. Group 0 holds the
/// highest-utility positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMap {
    pub groups: usize,
    pub assignment: Vec<usize>,
    pub sizes: Vec<usize>,
    pub utilities: Vec<f64>,
}

impl GroupMap {
    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn group_of(&self, position: usize) -> usize {
        self.assignment[position]
    }

    pub fn members(&self, group: usize) -> impl Iterator<Item = usize> + '_ {
        self.assignment
            .iter()
            .enumerate()
            .filter(move |(_, &g)| g == group)
            .map(|(i, _)| i)
    }

    /// Checks the partition invariants against a per-position utility profile.
    pub fn validate(&self, utilities: &[f64]) -> Result<()> {
        if utilities.len() != self.assignment.len() {
            return Err(TwistError::DimensionMismatch(
                "group map and utility profile lengths differ".into(),
            ));
        }
        let mut sizes = vec![0usize; self.groups];
        let mut sums = vec![0.0f64; self.groups];
        for (&g, &w) in self.assignment.iter().zip(utilities) {
            if g >= self.groups {
                return Err(TwistError::Validation(format!("group index {g} out of range")));
            }
            sizes[g] += 1;
            sums[g] += w;
        }
        if sizes != self.sizes || sizes.contains(&0) {
            return Err(TwistError::Validation("group sizes do not match assignment".into()));
        }
        if sums != self.utilities {
            return Err(TwistError::Validation("group utilities do not match profile".into()));
        }
        Ok(())
    }
}

/// One entry of the protection family: each token is sent `repetition` times
/// and the copies are soft-combined at the receiver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ProtectionPolicy {
    pub repetition: u32,
}

impl ProtectionPolicy {
    pub fn new(repetition: u32) -> Result<Self> {
        if repetition == 0 {
            return Err(TwistError::Config("repetition factor must be >= 1".into()));
        }
        Ok(Self { repetition })
    }

    /// Coded bits per token.
    pub fn bit_cost(&self, alphabet: &TokenAlphabet) -> u64 {
        u64::from(alphabet.bits_per_token()) * u64::from(self.repetition)
    }

    /// Channel uses per token (fractional; tokens are packed back to back).
    pub fn channel_uses(&self, alphabet: &TokenAlphabet) -> f64 {
        self.bit_cost(alphabet) as f64 / f64::from(BITS_PER_SYMBOL)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeProfile {
    pub mode: SyncMode,
    /// Channel uses per frame.
    pub budget: u64,
    pub protection: Vec<ProtectionPolicy>,
    pub thresholds: Vec<f64>,
}

impl ModeProfile {
    /// Coded bits the profile spends on one frame.
    pub fn bits_used(&self, groups: &GroupMap, alphabet: &TokenAlphabet) -> u64 {
        groups
            .sizes
            .iter()
            .zip(&self.protection)
            .map(|(&n, p)| n as u64 * p.bit_cost(alphabet))
            .sum()
    }

    pub fn check_feasible(&self, groups: &GroupMap, alphabet: &TokenAlphabet) -> Result<()> {
        if self.protection.len() != groups.groups || self.thresholds.len() != groups.groups {
            return Err(TwistError::DimensionMismatch(format!(
                "profile for mode {} has {} policies / {} thresholds for {} groups",
                self.mode,
                self.protection.len(),
                self.thresholds.len(),
                groups.groups
            )));
        }
        if let Some(t) = self.thresholds.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(TwistError::Validation(format!("threshold {t} outside [0, 1]")));
        }
        let bits = self.bits_used(groups, alphabet);
        let capacity = self.budget * u64::from(BITS_PER_SYMBOL);
        if bits > capacity {
            return Err(TwistError::Infeasible {
                required: bits.div_ceil(u64::from(BITS_PER_SYMBOL)),
                budget: self.budget,
            });
        }
        Ok(())
    }
}
