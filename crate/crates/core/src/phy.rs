//! Digital physical layer: token-to-bit mapping with per-group repetition,
//! Gray-mapped 16QAM, AWGN / Rayleigh block fading, max-log soft demodulation
//! with LLR combining across repetitions, and independent-bit token
//! posteriors.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::hash::{DefaultHasher, Hash, Hasher};

use crate::error::{Result, TwistError};
use crate::par::par_map;
use crate::rng::{derive_seed, rng_for, rng_from_seed, SimRng};
use crate::types::{
    GridShape, GroupMap, ModeProfile, ProtectionPolicy, Token, TokenAlphabet, TokenGrid,
    BITS_PER_SYMBOL,
};

/// Channel gains below this magnitude make the frame undecodable.
pub const DEGENERATE_GAIN: f64 = 1e-9;

const AXIS_SCALE: f64 = 0.316_227_766_016_837_94; // 1/sqrt(10)

/// Gray-coded 4-PAM level for an axis bit pair: 00 -> -3, 01 -> -1, 11 -> +1, 10 -> +3.
fn pam_level(b0: bool, b1: bool) -> f64 {
    match (b0, b1) {
        (false, false) => -3.0,
        (false, true) => -1.0,
        (true, true) => 1.0,
        (true, false) => 3.0,
    }
}

const PAM_POINTS: [(f64, bool, bool); 4] = [
    (-3.0, false, false),
    (-1.0, false, true),
    (1.0, true, true),
    (3.0, true, false),
];

/// Unit-average-energy 16QAM symbol; bits 0..2 ride on I, bits 2..4 on Q.
pub fn qam16_map(bits: [bool; 4]) -> Complex64 {
    Complex64::new(
        pam_level(bits[0], bits[1]) * AXIS_SCALE,
        pam_level(bits[2], bits[3]) * AXIS_SCALE,
    )
}

/// Max-log LLRs, `ln P(1)/P(0)`, of the two bits on one axis.
fn axis_llrs(y: f64, amplitude: f64, noise_var: f64) -> [f64; 2] {
    let mut best = [[f64::INFINITY; 2]; 2];
    for &(level, b0, b1) in &PAM_POINTS {
        let d = y - amplitude * level * AXIS_SCALE;
        let d2 = d * d;
        let e0 = &mut best[0][b0 as usize];
        *e0 = e0.min(d2);
        let e1 = &mut best[1][b1 as usize];
        *e1 = e1.min(d2);
    }
    [
        (best[0][0] - best[0][1]) / noise_var,
        (best[1][0] - best[1][1]) / noise_var,
    ]
}

/// Max-log LLRs of the four bits of one received symbol after derotation.
pub fn qam16_llrs(y: Complex64, gain: f64, noise_var: f64) -> [f64; 4] {
    let i = axis_llrs(y.re, gain, noise_var);
    let q = axis_llrs(y.im, gain, noise_var);
    [i[0], i[1], q[0], q[1]]
}

/// Where each token's coded bits sit in the frame bit stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameLayout {
    bits_per_token: u32,
    repetitions: Vec<u32>,
    offsets: Vec<usize>,
    payload_bits: usize,
}

impl FrameLayout {
    pub fn new(alphabet: &TokenAlphabet, repetitions: Vec<u32>) -> Result<Self> {
        if repetitions.contains(&0) {
            return Err(TwistError::Config("repetition factor must be >= 1".into()));
        }
        let b = alphabet.bits_per_token() as usize;
        let mut offsets = Vec::with_capacity(repetitions.len());
        let mut cursor = 0;
        for &r in &repetitions {
            offsets.push(cursor);
            cursor += b * r as usize;
        }
        Ok(Self {
            bits_per_token: alphabet.bits_per_token(),
            repetitions,
            offsets,
            payload_bits: cursor,
        })
    }

    pub fn for_profile(
        alphabet: &TokenAlphabet,
        groups: &GroupMap,
        protection: &[ProtectionPolicy],
    ) -> Result<Self> {
        let reps = groups
            .assignment
            .iter()
            .map(|&g| protection[g].repetition)
            .collect();
        Self::new(alphabet, reps)
    }

    pub fn tokens(&self) -> usize {
        self.repetitions.len()
    }

    pub fn bits_per_token(&self) -> u32 {
        self.bits_per_token
    }

    pub fn repetition(&self, position: usize) -> u32 {
        self.repetitions[position]
    }

    pub fn payload_bits(&self) -> usize {
        self.payload_bits
    }

    pub fn padded_bits(&self) -> usize {
        self.payload_bits.next_multiple_of(BITS_PER_SYMBOL as usize)
    }

    pub fn symbols(&self) -> usize {
        self.padded_bits() / BITS_PER_SYMBOL as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TxFrame {
    pub symbols: Vec<Complex64>,
    pub layout: FrameLayout,
}

impl TxFrame {
    pub fn channel_uses(&self) -> usize {
        self.symbols.len()
    }
}

/// Modulates `tokens` with the given per-position repetition layout. Each
/// token's bits are sent `r` times back to back, the stream is zero-padded to
/// a whole number of symbols.
pub fn modulate(tokens: &[Token], alphabet: &TokenAlphabet, layout: FrameLayout) -> TxFrame {
    debug_assert_eq!(tokens.len(), layout.tokens());
    let mut bits = Vec::with_capacity(layout.padded_bits());
    for (i, &t) in tokens.iter().enumerate() {
        let token_bits: Vec<bool> = alphabet.to_bits(t).collect();
        for _ in 0..layout.repetition(i) {
            bits.extend_from_slice(&token_bits);
        }
    }
    bits.resize(layout.padded_bits(), false);
    let symbols = bits
        .chunks_exact(4)
        .map(|c| qam16_map([c[0], c[1], c[2], c[3]]))
        .collect();
    TxFrame { symbols, layout }
}

pub fn encode_frame(
    grid: &TokenGrid,
    groups: &GroupMap,
    profile: &ModeProfile,
    alphabet: &TokenAlphabet,
) -> Result<TxFrame> {
    if groups.len() != grid.len() {
        return Err(TwistError::DimensionMismatch(
            "group map does not cover the grid".into(),
        ));
    }
    profile.check_feasible(groups, alphabet)?;
    grid.validate(alphabet)?;
    let layout = FrameLayout::for_profile(alphabet, groups, &profile.protection)?;
    let tx = modulate(grid.tokens(), alphabet, layout);
    debug_assert!(tx.channel_uses() as u64 <= profile.budget);
    Ok(tx)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelKind {
    Awgn,
    Rayleigh,
}

impl ChannelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ChannelKind::Awgn => "awgn",
            ChannelKind::Rayleigh => "rayleigh",
        }
    }
}

impl std::str::FromStr for ChannelKind {
    type Err = TwistError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "awgn" => Ok(ChannelKind::Awgn),
            "rayleigh" => Ok(ChannelKind::Rayleigh),
            other => Err(TwistError::Config(format!("unknown channel `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub kind: ChannelKind,
    pub snr_db: f64,
    pub seed: u64,
}

pub fn noise_variance(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Received {
    pub samples: Vec<Complex64>,
    pub gain: Complex64,
    pub noise_var: f64,
    /// Hash of the first few noise samples; equal across runs that share a
    /// channel realization.
    pub noise_fingerprint: u64,
}

const FINGERPRINT_SAMPLES: usize = 64;

fn complex_normal(rng: &mut SimRng, var: f64) -> Complex64 {
    let s = (var / 2.0).sqrt();
    Complex64::new(
        s * rng.sample::<f64, _>(StandardNormal),
        s * rng.sample::<f64, _>(StandardNormal),
    )
}

/// Passes `symbols` through `r = h s + w`. The gain is drawn before the noise
/// so a frame's gain does not depend on how many symbols it carries.
pub fn transmit_symbols(
    symbols: &[Complex64],
    kind: ChannelKind,
    snr_db: f64,
    rng: &mut SimRng,
) -> Received {
    let gain = match kind {
        ChannelKind::Awgn => Complex64::new(1.0, 0.0),
        ChannelKind::Rayleigh => complex_normal(rng, 1.0),
    };
    let noise_var = noise_variance(snr_db);
    let mut hasher = DefaultHasher::new();
    let samples = symbols
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let w = complex_normal(rng, noise_var);
            if i < FINGERPRINT_SAMPLES {
                w.re.to_bits().hash(&mut hasher);
                w.im.to_bits().hash(&mut hasher);
            }
            gain * s + w
        })
        .collect();
    Received {
        samples,
        gain,
        noise_var,
        noise_fingerprint: hasher.finish(),
    }
}

pub fn transmit(tx: &TxFrame, ch: &ChannelConfig) -> Received {
    let mut rng = rng_from_seed(ch.seed);
    transmit_symbols(&tx.symbols, ch.kind, ch.snr_db, &mut rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Demodulated {
    /// Combined LLR per token bit (`L * b` values, token-major).
    pub llrs: Vec<f64>,
    pub degenerate: bool,
}

/// Coherent max-log demodulation followed by repetition combining. Padding
/// bits are dropped.
pub fn soft_demodulate(
    samples: &[Complex64],
    gain: Complex64,
    noise_var: f64,
    layout: &FrameLayout,
) -> Result<Demodulated> {
    if samples.len() != layout.symbols() {
        return Err(TwistError::DimensionMismatch(format!(
            "layout expects {} symbols, got {}",
            layout.symbols(),
            samples.len()
        )));
    }
    let b = layout.bits_per_token() as usize;
    let mut combined = vec![0.0; layout.tokens() * b];
    let mag = gain.norm();
    if mag < DEGENERATE_GAIN {
        return Ok(Demodulated {
            llrs: combined,
            degenerate: true,
        });
    }
    let derotate = gain.conj() / mag;
    let mut coded = Vec::with_capacity(layout.padded_bits());
    for &r in samples {
        coded.extend_from_slice(&qam16_llrs(r * derotate, mag, noise_var));
    }
    for i in 0..layout.tokens() {
        let out = &mut combined[i * b..(i + 1) * b];
        let start = layout.offsets[i];
        for copy in 0..layout.repetition(i) as usize {
            let src = &coded[start + copy * b..start + (copy + 1) * b];
            out.iter_mut().zip(src).for_each(|(o, l)| *o += l);
        }
    }
    Ok(Demodulated {
        llrs: combined,
        degenerate: false,
    })
}

/// Per-position hard decision, confidence and bit posteriors.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftTokenFrame {
    shape: GridShape,
    bits_per_token: usize,
    pub hard: Vec<Token>,
    pub confidence: Vec<f64>,
    /// `P(bit_j = 1)` per token bit, token-major.
    pub bit_probs: Vec<f64>,
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl SoftTokenFrame {
    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.hard.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hard.is_empty()
    }

    pub fn hard_grid(&self) -> TokenGrid {
        TokenGrid::new(self.shape, self.hard.clone()).expect("soft frame shape is consistent")
    }

    pub fn bit_probs(&self, position: usize) -> &[f64] {
        &self.bit_probs[position * self.bits_per_token..(position + 1) * self.bits_per_token]
    }

    /// Product-form posterior `p_i(k)`.
    pub fn posterior(&self, position: usize, token: Token) -> f64 {
        let b = self.bits_per_token;
        self.bit_probs(position)
            .iter()
            .enumerate()
            .map(|(j, &p)| if (token >> (b - 1 - j)) & 1 == 1 { p } else { 1.0 - p })
            .product()
    }
}

/// Independent-bit token posteriors. A bit is decided as 1 only when its LLR
/// is strictly positive.
pub fn token_posteriors(
    llrs: &[f64],
    alphabet: &TokenAlphabet,
    shape: GridShape,
) -> Result<SoftTokenFrame> {
    let b = alphabet.bits_per_token() as usize;
    if llrs.len() != shape.len() * b {
        return Err(TwistError::DimensionMismatch(format!(
            "expected {} LLRs, got {}",
            shape.len() * b,
            llrs.len()
        )));
    }
    let mut hard = Vec::with_capacity(shape.len());
    let mut confidence = Vec::with_capacity(shape.len());
    let bit_probs = llrs.iter().map(|&l| (-softplus(-l)).exp()).collect();
    for chunk in llrs.chunks_exact(b) {
        let mut token: Token = 0;
        let mut log_conf = 0.0;
        for &l in chunk {
            token = (token << 1) | Token::from(l > 0.0);
            log_conf -= softplus(-l.abs());
        }
        hard.push(token);
        confidence.push(log_conf.exp());
    }
    Ok(SoftTokenFrame {
        shape,
        bits_per_token: b,
        hard,
        confidence,
        bit_probs,
    })
}

/// Modulate, transmit and decode one grid; returns the soft frame and the
/// channel realization.
pub fn run_link(
    grid: &TokenGrid,
    alphabet: &TokenAlphabet,
    layout: FrameLayout,
    kind: ChannelKind,
    snr_db: f64,
    rng: &mut SimRng,
) -> Result<(SoftTokenFrame, Received, usize)> {
    let tx = modulate(grid.tokens(), alphabet, layout);
    let rx = transmit_symbols(&tx.symbols, kind, snr_db, rng);
    let demod = soft_demodulate(&rx.samples, rx.gain, rx.noise_var, &tx.layout)?;
    let soft = token_posteriors(&demod.llrs, alphabet, grid.shape())?;
    Ok((soft, rx, tx.channel_uses()))
}

/// Offline token error rates indexed `[group][policy][snr]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorTable {
    pub channel: ChannelKind,
    pub snr_db: Vec<f64>,
    pub policies: Vec<ProtectionPolicy>,
    pub trials: usize,
    pub rates: Vec<Vec<Vec<f64>>>,
}

impl ErrorTable {
    pub fn snr_index(&self, snr_db: f64) -> Option<usize> {
        self.snr_db.iter().position(|&s| (s - snr_db).abs() < 1e-9)
    }

    pub fn rate(&self, group: usize, policy: usize, snr_db: f64) -> Option<f64> {
        let s = self.snr_index(snr_db)?;
        Some(self.rates[group][policy][s])
    }
}

/// Monte-Carlo token error rate before gating, per group / policy / SNR.
/// Each trial sends one frame of uniform random tokens with every position
/// under the same policy; the frame seeds are shared across policies.
pub fn profile_error_rates(
    groups: &GroupMap,
    shape: GridShape,
    policies: &[ProtectionPolicy],
    alphabet: &TokenAlphabet,
    kind: ChannelKind,
    snr_db: &[f64],
    trials: usize,
    seed: u64,
) -> Result<ErrorTable> {
    if trials == 0 {
        return Err(TwistError::InvalidParameter("trials must be >= 1".into()));
    }
    if groups.len() != shape.len() {
        return Err(TwistError::DimensionMismatch(
            "group map does not cover the grid".into(),
        ));
    }
    let jobs: Vec<(usize, usize)> = (0..policies.len())
        .flat_map(|p| (0..snr_db.len()).map(move |s| (p, s)))
        .collect();
    let results = par_map(&jobs, |&(p, s)| -> Result<Vec<f64>> {
        let layout = FrameLayout::new(alphabet, vec![policies[p].repetition; shape.len()])?;
        let mut errors = vec![0u64; groups.groups];
        let snr_tag = format!("{:.6}", snr_db[s]);
        for trial in 0..trials {
            let trial_tag = trial.to_string();
            let mut src = rng_for(seed, &["profile-src", &snr_tag, &trial_tag]);
            let tokens: Vec<Token> = (0..shape.len())
                .map(|_| src.random_range(0..alphabet.codebook_size()))
                .collect();
            let grid = TokenGrid::new(shape, tokens)?;
            let mut ch = rng_from_seed(derive_seed(seed, &["profile-ch", &snr_tag, &trial_tag]));
            let (soft, _, _) = run_link(&grid, alphabet, layout.clone(), kind, snr_db[s], &mut ch)?;
            for (i, (&h, &t)) in soft.hard.iter().zip(grid.tokens()).enumerate() {
                if h != t {
                    errors[groups.group_of(i)] += 1;
                }
            }
        }
        Ok(errors
            .iter()
            .zip(&groups.sizes)
            .map(|(&e, &n)| e as f64 / (n * trials) as f64)
            .collect())
    });
    let mut rates = vec![vec![vec![0.0; snr_db.len()]; policies.len()]; groups.groups];
    for (&(p, s), res) in jobs.iter().zip(results) {
        for (g, r) in res?.into_iter().enumerate() {
            rates[g][p][s] = r;
        }
    }
    Ok(ErrorTable {
        channel: kind,
        snr_db: snr_db.to_vec(),
        policies: policies.to_vec(),
        trials,
        rates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn alphabet(k: u32) -> TokenAlphabet {
        TokenAlphabet::new(k).unwrap()
    }

    #[test]
    fn constellation_has_unit_average_energy_and_gray_neighbours() {
        let mut energy = 0.0;
        let mut points = Vec::new();
        for v in 0..16u8 {
            let bits = [v & 8 != 0, v & 4 != 0, v & 2 != 0, v & 1 != 0];
            let s = qam16_map(bits);
            energy += s.norm_sqr();
            points.push((v, s));
        }
        assert!((energy / 16.0 - 1.0).abs() < 1e-12);
        let min_d = 2.0 * AXIS_SCALE;
        for &(a, sa) in &points {
            for &(b, sb) in &points {
                if ((sa - sb).norm() - min_d).abs() < 1e-9 {
                    assert_eq!((a ^ b).count_ones(), 1);
                }
            }
        }
    }

    #[test]
    fn single_token_fills_one_symbol_with_its_bits() {
        let a = alphabet(16);
        let layout = FrameLayout::new(&a, vec![1]).unwrap();
        let tx = modulate(&[0b1101], &a, layout);
        assert_eq!(tx.channel_uses(), 1);
        assert_eq!(tx.symbols[0], qam16_map([true, true, false, true]));
    }

    #[test]
    fn repetition_doubles_the_stream() {
        let a = alphabet(64);
        let one = FrameLayout::new(&a, vec![1; 10]).unwrap();
        let two = FrameLayout::new(&a, vec![2; 10]).unwrap();
        assert_eq!(two.payload_bits(), 2 * one.payload_bits());
        assert_eq!(one.symbols(), 15);
        assert_eq!(two.symbols(), 30);
    }

    #[test]
    fn noiseless_link_recovers_tokens_with_full_confidence() {
        let a = alphabet(64);
        let shape = GridShape::new(3, 4);
        let grid = TokenGrid::new(shape, (0..12).map(|i| i * 5).collect()).unwrap();
        let layout = FrameLayout::new(&a, vec![1, 2, 3, 4, 1, 2, 3, 4, 1, 2, 3, 4]).unwrap();
        let tx = modulate(grid.tokens(), &a, layout);
        let rx = transmit(
            &tx,
            &ChannelConfig {
                kind: ChannelKind::Awgn,
                snr_db: 300.0,
                seed: 1,
            },
        );
        for (r, s) in rx.samples.iter().zip(&tx.symbols) {
            assert!((r - s).norm() < 1e-12);
        }
        let demod = soft_demodulate(&rx.samples, rx.gain, rx.noise_var, &tx.layout).unwrap();
        let soft = token_posteriors(&demod.llrs, &a, shape).unwrap();
        assert_eq!(soft.hard, grid.tokens());
        assert!(soft.confidence.iter().all(|&c| c == 1.0));
        for (i, &t) in grid.tokens().iter().enumerate() {
            for (j, bit) in a.to_bits(t).enumerate() {
                let l = demod.llrs[i * 6 + j];
                assert_eq!(l > 0.0, bit);
                assert!(l.abs() > 1e6);
            }
        }
    }

    #[test]
    fn repetition_llr_is_sum_of_copy_llrs() {
        let a = alphabet(16);
        let single = FrameLayout::new(&a, vec![1]).unwrap();
        let double = FrameLayout::new(&a, vec![2]).unwrap();
        let tx = modulate(&[9], &a, double.clone());
        let mut rng = rng_from_seed(3);
        let rx = transmit_symbols(&tx.symbols, ChannelKind::Awgn, 3.0, &mut rng);
        let both = soft_demodulate(&rx.samples, rx.gain, rx.noise_var, &double).unwrap();
        let first = soft_demodulate(&rx.samples[..1], rx.gain, rx.noise_var, &single).unwrap();
        let second = soft_demodulate(&rx.samples[1..], rx.gain, rx.noise_var, &single).unwrap();
        for j in 0..4 {
            let expect = first.llrs[j] + second.llrs[j];
            assert!((both.llrs[j] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_gain_yields_uninformative_llrs() {
        let a = alphabet(16);
        let layout = FrameLayout::new(&a, vec![1, 1]).unwrap();
        let samples = vec![Complex64::new(0.3, -0.1); 2];
        let d = soft_demodulate(&samples, Complex64::new(1e-12, 0.0), 0.1, &layout).unwrap();
        assert!(d.degenerate);
        assert!(d.llrs.iter().all(|&l| l == 0.0));
    }

    #[test]
    fn zero_and_infinite_llrs() {
        let a = alphabet(64);
        let shape = GridShape::new(1, 3);
        let soft = token_posteriors(&[0.0; 18], &a, shape).unwrap();
        assert!(soft.hard.iter().all(|&t| t == 0));
        assert!(soft
            .confidence
            .iter()
            .all(|&c| (c - 2f64.powi(-6)).abs() < 1e-15));
        let soft = token_posteriors(&[f64::INFINITY; 18], &a, shape).unwrap();
        assert!(soft.hard.iter().all(|&t| t == 63));
        assert!(soft.confidence.iter().all(|&c| c == 1.0));
    }

    #[test]
    fn hard_decision_and_confidence_match_enumeration() {
        let a = alphabet(16);
        let shape = GridShape::new(1, 1);
        let mut rng = rng_from_seed(11);
        for _ in 0..500 {
            let llrs: Vec<f64> = (0..4).map(|_| rng.random_range(-6.0..6.0)).collect();
            let soft = token_posteriors(&llrs, &a, shape).unwrap();
            let probs: Vec<f64> = llrs.iter().map(|l| 1.0 / (1.0 + (-l).exp())).collect();
            let mut best = (0u32, f64::NEG_INFINITY);
            for k in 0..16u32 {
                let p: f64 = (0..4)
                    .map(|j| if (k >> (3 - j)) & 1 == 1 { probs[j] } else { 1.0 - probs[j] })
                    .product();
                if p > best.1 {
                    best = (k, p);
                }
            }
            assert_eq!(soft.hard[0], best.0);
            assert!((soft.confidence[0] - best.1).abs() < 1e-12);
            assert!((soft.posterior(0, best.0) - best.1).abs() < 1e-12);
        }
    }

    #[test]
    fn rayleigh_gain_depends_only_on_seed() {
        let a = alphabet(16);
        let short = modulate(&[1], &a, FrameLayout::new(&a, vec![1]).unwrap());
        let long = modulate(&[1; 8], &a, FrameLayout::new(&a, vec![1; 8]).unwrap());
        let x = transmit_symbols(&short.symbols, ChannelKind::Rayleigh, 5.0, &mut rng_from_seed(4));
        let y = transmit_symbols(&long.symbols, ChannelKind::Rayleigh, 5.0, &mut rng_from_seed(4));
        assert_eq!(x.gain, y.gain);
        assert_eq!(x.samples[0], y.samples[0]);
    }

    #[test]
    fn noiseless_profile_has_zero_error() {
        let shape = GridShape::new(2, 4);
        let groups = GroupMap {
            groups: 2,
            assignment: vec![0, 0, 0, 0, 1, 1, 1, 1],
            sizes: vec![4, 4],
            utilities: vec![1.0, 0.5],
        };
        let policies: Vec<_> = (1..=3).map(|r| ProtectionPolicy::new(r).unwrap()).collect();
        let table = profile_error_rates(
            &groups,
            shape,
            &policies,
            &alphabet(64),
            ChannelKind::Awgn,
            &[200.0],
            20,
            1,
        )
        .unwrap();
        assert!(table.rates.iter().flatten().flatten().all(|&e| e == 0.0));
        assert_eq!(table.rate(1, 2, 200.0), Some(0.0));
        assert_eq!(table.rate(1, 2, 10.0), None);
    }
}
