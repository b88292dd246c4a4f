//! Fixed-point and block-floating-point quantizers with stochastic or
//! nearest rounding.
//!
//! Everything is simulated in `f64`: a quantized value is an ordinary float
//! that happens to sit on the format's grid. A fixed-point format with `W`
//! word bits and `F` fractional bits has gap `δ = 2^-F` and range
//! `[-2^(W-F-1), 2^(W-F-1) - 2^-F]`. A block-floating-point block shares the
//! exponent `E = clip(⌊log₂ max|w|⌋, -2^(Fe-1), 2^(Fe-1)-1)` and uses the gap
//! `δ_b = 2^(E-W+2)` with limits `[-2^(W-1) δ_b, (2^(W-1)-1) δ_b]`.
//!
//! Stochastic rounding draws exactly one uniform per element, in row-major
//! order, whether or not the element is already representable.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;

/// Largest shared-exponent width accepted. Wider fields would index
/// exponents outside the `f64` range.
pub const MAX_EXP_BITS: u32 = 11;
/// Largest word width accepted; `f64` has a 53-bit significand.
pub const MAX_WORD_BITS: u32 = 52;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundingMode {
    Stochastic,
    Nearest,
}

/// `W` total bits (sign included), `F` of them fractional.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FixedPointFormat {
    word_bits: u32,
    frac_bits: u32,
}

/// Representable grid of a fixed-point format.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub delta: f64,
    pub lo: f64,
    pub hi: f64,
}

impl FixedPointFormat {
    pub fn new(word_bits: u32, frac_bits: u32) -> Result<Self> {
        if !(2..=MAX_WORD_BITS).contains(&word_bits) {
            return Err(Error::InvalidFormat(format!(
                "fixed-point word bits must be in 2..={MAX_WORD_BITS}, got {word_bits}"
            )));
        }
        if frac_bits > word_bits - 1 {
            return Err(Error::InvalidFormat(format!(
                "fractional bits {frac_bits} exceed word bits - 1 ({})",
                word_bits - 1
            )));
        }
        Ok(Self { word_bits, frac_bits })
    }

    pub fn word_bits(&self) -> u32 {
        self.word_bits
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    pub fn grid(&self) -> Grid {
        fp_grid(*self)
    }
}

pub fn fp_grid(format: FixedPointFormat) -> Grid {
    let w = format.word_bits as i32;
    let f = format.frac_bits as i32;
    let delta = pow2(-f);
    let half_range = pow2(w - f - 1);
    Grid {
        delta,
        lo: -half_range,
        hi: half_range - delta,
    }
}

/// Per-element mantissa word `W` (sign included) and shared exponent width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BlockFloatFormat {
    word_bits: u32,
    exp_bits: u32,
    literal_exponent: bool,
}

impl BlockFloatFormat {
    pub fn new(word_bits: u32, exp_bits: u32) -> Result<Self> {
        if !(2..=MAX_WORD_BITS).contains(&word_bits) {
            return Err(Error::InvalidFormat(format!(
                "block-float word bits must be in 2..={MAX_WORD_BITS}, got {word_bits}"
            )));
        }
        if !(1..=MAX_EXP_BITS).contains(&exp_bits) {
            return Err(Error::InvalidFormat(format!(
                "shared exponent bits must be in 1..={MAX_EXP_BITS}, got {exp_bits}"
            )));
        }
        Ok(Self {
            word_bits,
            exp_bits,
            literal_exponent: false,
        })
    }

    /// Use the gap `2^(-E+W-2)` instead of `2^(E-W+2)`. Kept only for
    /// side-by-side comparison: under it the gap grows as magnitudes shrink.
    pub fn with_literal_exponent(mut self, literal: bool) -> Self {
        self.literal_exponent = literal;
        self
    }

    pub fn word_bits(&self) -> u32 {
        self.word_bits
    }

    pub fn exp_bits(&self) -> u32 {
        self.exp_bits
    }

    pub fn literal_exponent(&self) -> bool {
        self.literal_exponent
    }

    pub fn exponent_range(&self) -> (i32, i32) {
        let half = 1i32 << (self.exp_bits - 1);
        (-half, half - 1)
    }

    /// Gap and limits of the block grid for shared exponent `e`.
    pub fn block_grid(&self, e: i32) -> Grid {
        let w = self.word_bits as i32;
        let delta = if self.literal_exponent {
            pow2(-e + w - 2)
        } else {
            pow2(e - w + 2)
        };
        let half = pow2(w - 1);
        Grid {
            delta,
            lo: -half * delta,
            hi: (half - 1.0) * delta,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockAssignment {
    /// One shared exponent for the whole tensor.
    #[serde(alias = "big")]
    BigBlock,
    /// One exponent per matrix row; vectors (biases) get a single block.
    #[serde(alias = "small")]
    SmallBlock,
    /// Fixed-point: a single global grid, no exponents.
    #[serde(alias = "scalar")]
    ScalarGrid,
}

/// Contiguous element ranges, one per block, covering `0..len` exactly once.
pub fn partition_blocks(shape: &[usize], assignment: BlockAssignment) -> Result<Vec<Range<usize>>> {
    let total: usize = shape.iter().product();
    match (shape.len(), assignment) {
        (1 | 2, BlockAssignment::BigBlock | BlockAssignment::ScalarGrid) | (1, BlockAssignment::SmallBlock) => {
            Ok(vec![0..total])
        }
        (2, BlockAssignment::SmallBlock) => {
            let cols = shape[1];
            Ok((0..shape[0]).map(|r| r * cols..(r + 1) * cols).collect())
        }
        (rank, _) => Err(Error::UnsupportedRank { rank }),
    }
}

/// The two grid neighbours of `w` and the probability of taking the upper.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundProb {
    pub floor_val: f64,
    pub ceil_val: f64,
    pub p_ceil: f64,
}

pub fn round_prob(w: f64, delta: f64) -> RoundProb {
    let s = w / delta;
    let f = s.floor();
    if f == s {
        RoundProb {
            floor_val: w,
            ceil_val: w,
            p_ceil: 0.0,
        }
    } else {
        RoundProb {
            floor_val: f * delta,
            ceil_val: (f + 1.0) * delta,
            p_ceil: s - f,
        }
    }
}

/// `⌊s⌋` for `|s| < 2^63`; saturates beyond that. Every grid has at most
/// `2^52` points per side, so saturated values still clip to the right limit.
#[inline(always)]
fn clamped_floor(s: f64) -> f64 {
    let t = (s as i64) as f64;
    if t > s {
        t - 1.0
    } else {
        t
    }
}

/// Round every element of `data` onto `grid` in place.
///
/// On a non-finite element an error is returned and the slice is left
/// partially rounded.
#[inline]
fn round_slice(data: &mut [f64], grid: Grid, mode: RoundingMode, rng: &mut RngStream) -> Result<()> {
    let inv = 1.0 / grid.delta;
    match mode {
        RoundingMode::Stochastic => {
            for x in data.iter_mut() {
                let u = rng.uniform();
                if !x.is_finite() {
                    return Err(Error::non_finite("quantizer input"));
                }
                let s = *x * inv;
                let f = clamped_floor(s);
                // branch-free: the comparison is a coin flip for the predictor
                let idx = f + f64::from(u8::from(u < s - f));
                *x = (idx * grid.delta).max(grid.lo).min(grid.hi);
            }
        }
        RoundingMode::Nearest => {
            for x in data.iter_mut() {
                if !x.is_finite() {
                    return Err(Error::non_finite("quantizer input"));
                }
                let idx = (*x * inv).round_ties_even();
                *x = (idx * grid.delta).clamp(grid.lo, grid.hi);
            }
        }
    }
    Ok(())
}

pub fn quantize_fixed(
    x: &[f64],
    format: FixedPointFormat,
    mode: RoundingMode,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    let mut out = x.to_vec();
    round_slice(&mut out, format.grid(), mode, rng)?;
    Ok(out)
}

/// `⌊log₂ x⌋` for finite `x > 0`, read off the IEEE-754 exponent field.
pub fn floor_log2(x: f64) -> i32 {
    debug_assert!(x > 0.0 && x.is_finite());
    let bits = x.to_bits();
    let biased = ((bits >> 52) & 0x7ff) as i32;
    if biased == 0 {
        let mantissa = bits & ((1u64 << 52) - 1);
        -1074 + (63 - mantissa.leading_zeros() as i32)
    } else {
        biased - 1023
    }
}

pub fn shared_exponent(block: &[f64], exp_bits: u32) -> Result<i32> {
    if block.is_empty() {
        return Err(Error::InvalidArgument("shared_exponent of an empty block".into()));
    }
    if !(1..=MAX_EXP_BITS).contains(&exp_bits) {
        return Err(Error::InvalidFormat(format!(
            "shared exponent bits must be in 1..={MAX_EXP_BITS}, got {exp_bits}"
        )));
    }
    let mut max = 0.0f64;
    for &v in block {
        if !v.is_finite() {
            return Err(Error::non_finite("shared_exponent"));
        }
        max = max.max(v.abs());
    }
    let half = 1i32 << (exp_bits - 1);
    if max == 0.0 {
        return Ok(-half);
    }
    Ok(floor_log2(max).clamp(-half, half - 1))
}

fn quantize_block(block: &mut [f64], format: &BlockFloatFormat, mode: RoundingMode, rng: &mut RngStream) -> Result<()> {
    let e = shared_exponent(block, format.exp_bits)?;
    let grid = format.block_grid(e);
    if grid.delta < f64::MIN_POSITIVE || !grid.delta.is_finite() {
        // Grid finer than f64 resolution (or absurdly coarse under the
        // literal rule): keep the draws aligned and leave values alone.
        if mode == RoundingMode::Stochastic {
            for _ in 0..block.len() {
                rng.uniform();
            }
        }
        return Ok(());
    }
    round_slice(block, grid, mode, rng)
}

pub fn quantize_bfp(
    t: &Tensor,
    format: &BlockFloatFormat,
    assignment: BlockAssignment,
    mode: RoundingMode,
    rng: &mut RngStream,
) -> Result<Tensor> {
    let mut out = t.clone();
    quantize_bfp_in_place(&mut out, format, assignment, mode, rng)?;
    Ok(out)
}

pub fn quantize_bfp_in_place(
    t: &mut Tensor,
    format: &BlockFloatFormat,
    assignment: BlockAssignment,
    mode: RoundingMode,
    rng: &mut RngStream,
) -> Result<()> {
    if t.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite("block-float quantizer input"));
    }
    let blocks = partition_blocks(&t.shape().to_vec(), assignment)?;
    let data = t.data_mut();
    for range in blocks {
        quantize_block(&mut data[range], format, mode, rng)?;
    }
    Ok(())
}

/// A reusable quantization policy: `Q_W`, `Q_A`, `Q_G`, `Q_E`, `Q_M`, `Q_SWA`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "QuantizerRepr", into = "QuantizerRepr")]
pub enum QuantizerSpec {
    #[default]
    Identity,
    Fixed {
        format: FixedPointFormat,
        mode: RoundingMode,
    },
    BlockFloat {
        format: BlockFloatFormat,
        assignment: BlockAssignment,
        mode: RoundingMode,
    },
}

impl QuantizerSpec {
    pub fn fixed(word_bits: u32, frac_bits: u32, mode: RoundingMode) -> Result<Self> {
        Ok(Self::Fixed {
            format: FixedPointFormat::new(word_bits, frac_bits)?,
            mode,
        })
    }

    pub fn block_float(word_bits: u32, exp_bits: u32, assignment: BlockAssignment, mode: RoundingMode) -> Result<Self> {
        if assignment == BlockAssignment::ScalarGrid {
            return Err(Error::InvalidFormat(
                "scalar_grid assignment is for fixed-point quantizers".into(),
            ));
        }
        Ok(Self::BlockFloat {
            format: BlockFloatFormat::new(word_bits, exp_bits)?,
            assignment,
            mode,
        })
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, Self::Identity)
    }

    pub fn mode(&self) -> Option<RoundingMode> {
        match self {
            Self::Identity => None,
            Self::Fixed { mode, .. } | Self::BlockFloat { mode, .. } => Some(*mode),
        }
    }

    /// The same format with a different rounding mode.
    pub fn with_mode(self, new_mode: RoundingMode) -> Self {
        match self {
            Self::Identity => Self::Identity,
            Self::Fixed { format, .. } => Self::Fixed { format, mode: new_mode },
            Self::BlockFloat { format, assignment, .. } => Self::BlockFloat {
                format,
                assignment,
                mode: new_mode,
            },
        }
    }

    /// Switch block-float gaps to the literal `2^(-E+W-2)` rule.
    pub fn with_literal_exponent(self, literal: bool) -> Self {
        match self {
            Self::BlockFloat {
                format,
                assignment,
                mode,
            } => Self::BlockFloat {
                format: format.with_literal_exponent(literal),
                assignment,
                mode,
            },
            other => other,
        }
    }

    pub fn quantize(&self, t: &Tensor, rng: &mut RngStream) -> Result<Tensor> {
        let mut out = t.clone();
        self.quantize_in_place(&mut out, rng)?;
        Ok(out)
    }

    pub fn quantize_in_place(&self, t: &mut Tensor, rng: &mut RngStream) -> Result<()> {
        match self {
            Self::Identity => {
                if t.is_finite() {
                    Ok(())
                } else {
                    Err(Error::non_finite("identity quantizer input"))
                }
            }
            Self::Fixed { format, mode } => round_slice(t.data_mut(), format.grid(), *mode, rng),
            Self::BlockFloat {
                format,
                assignment,
                mode,
            } => quantize_bfp_in_place(t, format, *assignment, *mode, rng),
        }
    }

    /// Whether every element of `t` is representable under this policy.
    ///
    /// For block-float blocks the exponent is recomputed from the block's
    /// current contents. A block whose most negative element landed exactly
    /// on `-2^(E+1)` (the asymmetric lower limit) reads back one exponent
    /// higher, so the grid one step below is accepted as well.
    pub fn is_on_grid(&self, t: &Tensor) -> bool {
        match self {
            Self::Identity => t.is_finite(),
            Self::Fixed { format, .. } => on_grid(t.data(), format.grid()),
            Self::BlockFloat { format, assignment, .. } => {
                let Ok(blocks) = partition_blocks(t.shape(), *assignment) else {
                    return false;
                };
                blocks.into_iter().all(|r| {
                    let block = &t.data()[r];
                    let Ok(e) = shared_exponent(block, format.exp_bits) else {
                        return false;
                    };
                    let (emin, _) = format.exponent_range();
                    on_block_grid(block, format, e) || (e > emin && on_block_grid(block, format, e - 1))
                })
            }
        }
    }
}

fn on_block_grid(block: &[f64], format: &BlockFloatFormat, e: i32) -> bool {
    let grid = format.block_grid(e);
    if grid.delta < f64::MIN_POSITIVE {
        return block.iter().all(|v| v.is_finite());
    }
    on_grid(block, grid)
}

fn on_grid(values: &[f64], grid: Grid) -> bool {
    values.iter().all(|&v| {
        if !(grid.lo..=grid.hi).contains(&v) {
            return false;
        }
        let k = (v - grid.lo) / grid.delta;
        k == k.round()
    })
}

/// Exact `2^k`; saturates to `0` below the subnormal range and to `inf`
/// above the normal range.
pub(crate) fn pow2(k: i32) -> f64 {
    match k {
        -1022..=1023 => f64::from_bits(((k + 1023) as u64) << 52),
        -1074..=-1023 => f64::from_bits(1u64 << (k + 1074)),
        k if k < -1074 => 0.0,
        _ => f64::INFINITY,
    }
}

/// On-disk/config shape of a [`QuantizerSpec`]:
/// `{kind = "fixed", word = 8, frac = 6, round = "stochastic"}` or
/// `{kind = "bfp", word = 8, exp = 8, block = "small", round = "stochastic"}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum QuantizerRepr {
    Identity,
    Fixed {
        word: u32,
        frac: u32,
        #[serde(default = "default_round")]
        round: RoundingMode,
    },
    Bfp {
        word: u32,
        exp: u32,
        block: BlockAssignment,
        #[serde(default = "default_round")]
        round: RoundingMode,
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        literal_exp: bool,
    },
}

fn default_round() -> RoundingMode {
    RoundingMode::Stochastic
}

impl TryFrom<QuantizerRepr> for QuantizerSpec {
    type Error = Error;

    fn try_from(repr: QuantizerRepr) -> Result<Self> {
        match repr {
            QuantizerRepr::Identity => Ok(Self::Identity),
            QuantizerRepr::Fixed { word, frac, round } => Self::fixed(word, frac, round),
            QuantizerRepr::Bfp {
                word,
                exp,
                block,
                round,
                literal_exp,
            } => Ok(Self::block_float(word, exp, block, round)?.with_literal_exponent(literal_exp)),
        }
    }
}

impl From<QuantizerSpec> for QuantizerRepr {
    fn from(spec: QuantizerSpec) -> Self {
        match spec {
            QuantizerSpec::Identity => Self::Identity,
            QuantizerSpec::Fixed { format, mode } => Self::Fixed {
                word: format.word_bits,
                frac: format.frac_bits,
                round: mode,
            },
            QuantizerSpec::BlockFloat {
                format,
                assignment,
                mode,
            } => Self::Bfp {
                word: format.word_bits,
                exp: format.exp_bits,
                block: assignment,
                round: mode,
                literal_exp: format.literal_exponent,
            },
        }
    }
}

impl std::fmt::Display for QuantizerSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Identity => write!(f, "identity"),
            Self::Fixed { format, mode } => {
                write!(f, "fixed(W={}, F={}, {:?})", format.word_bits, format.frac_bits, mode)
            }
            Self::BlockFloat {
                format,
                assignment,
                mode,
            } => write!(
                f,
                "bfp(W={}, Fe={}, {:?}, {:?}{})",
                format.word_bits,
                format.exp_bits,
                assignment,
                mode,
                if format.literal_exponent { ", literal" } else { "" }
            ),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fmt(w: u32, f: u32) -> FixedPointFormat {
        FixedPointFormat::new(w, f).unwrap()
    }

    #[test]
    fn grid_examples() {
        let g = fp_grid(fmt(8, 6));
        assert_eq!((g.delta, g.hi, g.lo), (0.015625, 1.984375, -2.0));
        let g = fp_grid(fmt(4, 2));
        assert_eq!((g.delta, g.hi, g.lo), (0.25, 1.75, -2.0));
        let g = fp_grid(fmt(2, 0));
        assert_eq!((g.delta, g.hi, g.lo), (1.0, 1.0, -2.0));
    }

    #[test]
    fn grid_has_two_to_the_w_points() {
        for w in 2..=20 {
            for f in 0..w {
                let g = fp_grid(fmt(w, f));
                assert_eq!((g.hi - g.lo) / g.delta, (2f64).powi(w as i32) - 1.0);
            }
        }
    }

    #[test]
    fn format_validation() {
        assert!(FixedPointFormat::new(1, 0).is_err());
        assert!(FixedPointFormat::new(8, 8).is_err());
        assert!(FixedPointFormat::new(8, 7).is_ok());
        assert!(BlockFloatFormat::new(8, 0).is_err());
        assert!(BlockFloatFormat::new(1, 8).is_err());
        assert!(QuantizerSpec::block_float(8, 8, BlockAssignment::ScalarGrid, RoundingMode::Nearest).is_err());
    }

    #[test]
    fn round_prob_examples() {
        let r = round_prob(0.02, 0.015625);
        assert_eq!(r.floor_val, 0.015625);
        assert_eq!(r.ceil_val, 0.03125);
        assert!((r.p_ceil - 0.28).abs() < 1e-12);

        let r = round_prob(0.5, 0.015625);
        assert_eq!((r.floor_val, r.ceil_val, r.p_ceil), (0.5, 0.5, 0.0));

        let r = round_prob(-1.6, 1.0);
        assert_eq!((r.floor_val, r.ceil_val), (-2.0, -1.0));
        assert!((r.p_ceil - 0.4).abs() < 1e-12);
    }

    #[test]
    fn representable_value_is_fixed_point_of_stochastic_rounding() {
        let mut rng = RngStream::new(1);
        for _ in 0..1000 {
            let out = quantize_fixed(&[0.5], fmt(8, 6), RoundingMode::Stochastic, &mut rng).unwrap();
            assert_eq!(out, vec![0.5]);
        }
    }

    #[test]
    fn stochastic_rounding_frequency_for_point_zero_two() {
        let mut rng = RngStream::new(2);
        let n = 200_000;
        let mut ups = 0usize;
        for _ in 0..n {
            let v = quantize_fixed(&[0.02], fmt(8, 6), RoundingMode::Stochastic, &mut rng).unwrap()[0];
            assert!(v == 0.015625 || v == 0.03125, "{v}");
            if v == 0.03125 {
                ups += 1;
            }
        }
        let p = ups as f64 / n as f64;
        let se = (0.28f64 * 0.72 / n as f64).sqrt();
        assert!((p - 0.28).abs() < 4.0 * se, "p={p}");
    }

    #[test]
    fn out_of_range_clips() {
        let mut rng = RngStream::new(3);
        for mode in [RoundingMode::Stochastic, RoundingMode::Nearest] {
            assert_eq!(
                quantize_fixed(&[5.0], fmt(8, 6), mode, &mut rng).unwrap(),
                vec![1.984375]
            );
            assert_eq!(quantize_fixed(&[-3.0], fmt(8, 6), mode, &mut rng).unwrap(), vec![-2.0]);
        }
    }

    #[test]
    fn nearest_ties_to_even_index() {
        let mut rng = RngStream::new(0);
        // index 0.5 -> 0, 1.5 -> 2, -0.5 -> 0, 2.5 -> 2
        let out = quantize_fixed(
            &[0.125, 0.375, -0.125, 0.625],
            fmt(8, 2),
            RoundingMode::Nearest,
            &mut rng,
        )
        .unwrap();
        assert_eq!(out, vec![0.0, 0.5, 0.0, 0.5]);
        assert_eq!(rng.position(), 0);
    }

    #[test]
    fn non_finite_rejected() {
        let mut rng = RngStream::new(0);
        for bad in [f64::NAN, f64::INFINITY, f64::NEG_INFINITY] {
            for mode in [RoundingMode::Stochastic, RoundingMode::Nearest] {
                let err = quantize_fixed(&[0.1, bad], fmt(8, 6), mode, &mut rng).unwrap_err();
                assert!(err.to_string().contains("non-finite input"));
            }
            let t = Tensor::vector(vec![bad]);
            let q = QuantizerSpec::block_float(8, 8, BlockAssignment::BigBlock, RoundingMode::Nearest).unwrap();
            assert!(q.quantize(&t, &mut rng).is_err());
            assert!(shared_exponent(&[bad], 8).is_err());
        }
    }

    #[test]
    fn one_draw_per_element() {
        let mut rng = RngStream::new(9);
        quantize_fixed(&[0.1, 0.5, 7.0, -9.0], fmt(8, 6), RoundingMode::Stochastic, &mut rng).unwrap();
        assert_eq!(rng.position(), 4);
        let t = Tensor::zeros(&[3, 5]);
        let q = QuantizerSpec::block_float(8, 8, BlockAssignment::SmallBlock, RoundingMode::Stochastic).unwrap();
        q.quantize(&t, &mut rng).unwrap();
        assert_eq!(rng.position(), 19);
    }

    #[test]
    fn shared_exponent_examples() {
        assert_eq!(shared_exponent(&[0.75, -3.2, 0.01], 8).unwrap(), 1);
        assert_eq!(shared_exponent(&[0.0, 0.0], 8).unwrap(), -128);
        assert_eq!(shared_exponent(&[1e60], 4).unwrap(), 7);
        assert_eq!(shared_exponent(&[1e-60], 4).unwrap(), -8);
    }

    #[test]
    fn floor_log2_exact_at_powers_of_two() {
        for k in -1074..=1023 {
            let x = pow2(k);
            assert_eq!(floor_log2(x), k, "2^{k}");
            if k > -1074 && k < 1023 {
                // just below a power of two
                let below = f64::from_bits(x.to_bits() - 1);
                assert_eq!(floor_log2(below), k - 1, "below 2^{k}");
            }
        }
        assert_eq!(floor_log2(3.2), 1);
        assert_eq!(floor_log2(0.001), -10);
    }

    #[test]
    fn bfp_example_block() {
        let t = Tensor::vector(vec![0.75, -3.2, 0.01]);
        let fmt = BlockFloatFormat::new(8, 8).unwrap();
        let g = fmt.block_grid(1);
        assert_eq!((g.delta, g.lo, g.hi), (0.03125, -4.0, 3.96875));

        let n = 100_000;
        let mut rng = RngStream::new(17);
        let (mut small_up, mut big_up) = (0usize, 0usize);
        for _ in 0..n {
            let q = quantize_bfp(&t, &fmt, BlockAssignment::BigBlock, RoundingMode::Stochastic, &mut rng).unwrap();
            let d = q.data();
            assert_eq!(d[0], 0.75);
            assert!(d[2] == 0.0 || d[2] == 0.03125);
            assert!(d[1] == -3.21875 || d[1] == -3.1875);
            small_up += (d[2] == 0.03125) as usize;
            big_up += (d[1] == -3.1875) as usize;
        }
        let check = |count: usize, p: f64| {
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((count as f64 / n as f64 - p).abs() < 4.0 * se);
        };
        check(small_up, 0.32);
        check(big_up, 0.6);
    }

    #[test]
    fn bfp_zero_tensor_stays_zero() {
        let t = Tensor::zeros(&[4, 3]);
        let fmt = BlockFloatFormat::new(8, 8).unwrap();
        let mut rng = RngStream::new(0);
        for a in [BlockAssignment::BigBlock, BlockAssignment::SmallBlock] {
            for m in [RoundingMode::Stochastic, RoundingMode::Nearest] {
                assert_eq!(quantize_bfp(&t, &fmt, a, m, &mut rng).unwrap(), t);
            }
        }
    }

    #[test]
    fn small_block_preserves_tiny_row() {
        // Hand-evaluated: big block E = 0, gap 2^-6, so 0.001 lands on 0 or
        // 2^-6. Small block row 2 has E = ⌊log₂ 0.001⌋ = -10, gap 2^-16, and
        // 0.001 / 2^-16 = 65.536 lands on 65 or 66 units.
        let t = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 0.001]).unwrap();
        let fmt = BlockFloatFormat::new(8, 8).unwrap();
        let mut rng = RngStream::new(4);
        for _ in 0..1000 {
            let big = quantize_bfp(&t, &fmt, BlockAssignment::BigBlock, RoundingMode::Stochastic, &mut rng).unwrap();
            let v = big.data()[3];
            assert!(v == 0.0 || v == 0.015625, "{v}");
            let small = quantize_bfp(
                &t,
                &fmt,
                BlockAssignment::SmallBlock,
                RoundingMode::Stochastic,
                &mut rng,
            )
            .unwrap();
            let v = small.data()[3];
            assert!(v == 65.0 / 65536.0 || v == 66.0 / 65536.0, "{v}");
            assert!((v - 0.001).abs() < 2f64.powi(-16));
        }
    }

    #[test]
    fn literal_exponent_gap_grows_as_values_shrink() {
        let fmt = BlockFloatFormat::new(8, 8).unwrap().with_literal_exponent(true);
        assert_eq!(fmt.block_grid(1).delta, 2f64.powi(5));
        assert_eq!(fmt.block_grid(-3).delta, 2f64.powi(9));
    }

    #[test]
    fn partition_examples() {
        let b = partition_blocks(&[3, 4], BlockAssignment::SmallBlock).unwrap();
        assert_eq!(b, vec![0..4, 4..8, 8..12]);
        assert_eq!(
            partition_blocks(&[3, 4], BlockAssignment::BigBlock).unwrap(),
            vec![0..12]
        );
        assert_eq!(partition_blocks(&[7], BlockAssignment::SmallBlock).unwrap(), vec![0..7]);
        assert!(matches!(
            partition_blocks(&[2, 2, 2], BlockAssignment::SmallBlock),
            Err(Error::UnsupportedRank { rank: 3 })
        ));
        assert!(partition_blocks(&[], BlockAssignment::BigBlock).is_err());
    }

    #[test]
    fn negative_limit_corner_reads_back_one_exponent_higher() {
        // -3.99 in a block with exponent 1 may round down to lo_b = -4, whose
        // own exponent is 2. The grid check still accepts the block.
        let fmt = BlockFloatFormat::new(8, 8).unwrap();
        let t = Tensor::vector(vec![-3.99, 0.03125 * 3.0]);
        let q = QuantizerSpec::BlockFloat {
            format: fmt,
            assignment: BlockAssignment::BigBlock,
            mode: RoundingMode::Nearest,
        };
        let out = q.quantize(&t, &mut RngStream::new(0)).unwrap();
        assert_eq!(out.data(), &[-4.0, 0.09375]);
        assert_eq!(shared_exponent(out.data(), 8).unwrap(), 2);
        assert!(q.is_on_grid(&out));
    }

    #[test]
    fn serde_config_shapes() {
        let q: QuantizerSpec =
            serde_json::from_str(r#"{"kind":"fixed","word":8,"frac":6,"round":"stochastic"}"#).unwrap();
        assert_eq!(q, QuantizerSpec::fixed(8, 6, RoundingMode::Stochastic).unwrap());
        let q: QuantizerSpec =
            serde_json::from_str(r#"{"kind":"bfp","word":8,"exp":8,"block":"small","round":"stochastic"}"#).unwrap();
        assert_eq!(
            q,
            QuantizerSpec::block_float(8, 8, BlockAssignment::SmallBlock, RoundingMode::Stochastic).unwrap()
        );
        let q: QuantizerSpec = serde_json::from_str(r#"{"kind":"identity"}"#).unwrap();
        assert!(q.is_identity());
        assert!(serde_json::from_str::<QuantizerSpec>(r#"{"kind":"fixed","word":4,"frac":4}"#).is_err());
        let back = serde_json::to_string(&QuantizerSpec::fixed(4, 2, RoundingMode::Nearest).unwrap()).unwrap();
        assert_eq!(back, r#"{"kind":"fixed","word":4,"frac":2,"round":"nearest"}"#);
    }
}
