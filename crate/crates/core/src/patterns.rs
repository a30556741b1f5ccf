//! Separable amplitude masks and projector illumination sequences.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Feedback polynomials for the MLS generator, one per register order.
///
/// Each entry lists the exponents of a primitive polynomial over GF(2) with
/// the leading `x^r` term first. Order 9 is `x^9 + x^5 + 1`.
pub const MLS_POLYNOMIALS: [&[u32]; 19] = [
    &[2, 1, 0],
    &[3, 2, 0],
    &[4, 3, 0],
    &[5, 3, 0],
    &[6, 5, 0],
    &[7, 6, 0],
    &[8, 6, 5, 4, 0],
    &[9, 5, 0],
    &[10, 7, 0],
    &[11, 9, 0],
    &[12, 11, 10, 4, 0],
    &[13, 12, 11, 8, 0],
    &[14, 13, 12, 2, 0],
    &[15, 14, 0],
    &[16, 15, 13, 4, 0],
    &[17, 14, 0],
    &[18, 11, 0],
    &[19, 18, 17, 14, 0],
    &[20, 17, 0],
];

pub const MIN_MLS_ORDER: u32 = 2;
pub const MAX_MLS_ORDER: u32 = 20;

/// Maximum length sequence of length `2^order - 1`.
///
/// The register starts from the all-ones state and follows the linear
/// recurrence given by [`MLS_POLYNOMIALS`]: for `x^r + sum c_i x^i`,
/// `a[n + r] = xor_i c_i a[n + i]`.
pub fn mls_vector(order: u32) -> Result<Vec<u8>> {
    if !(MIN_MLS_ORDER..=MAX_MLS_ORDER).contains(&order) {
        return Err(Error::InvalidParameter(format!(
            "MLS register order must be in {MIN_MLS_ORDER}..={MAX_MLS_ORDER}, got {order}"
        )));
    }
    let exponents = MLS_POLYNOMIALS[(order - MIN_MLS_ORDER) as usize];
    let taps: Vec<usize> = exponents[1..].iter().map(|&e| e as usize).collect();
    let r = order as usize;
    let len = (1usize << r) - 1;

    let mut seq = vec![1u8; r];
    seq.reserve(len.saturating_sub(r));
    for n in 0..len.saturating_sub(r) {
        let bit = taps.iter().fold(0u8, |acc, &i| acc ^ seq[n + i]);
        seq.push(bit);
    }
    seq.truncate(len);
    Ok(seq)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskKind {
    Mls,
    Pinhole,
}

/// How to build a [`MaskSpec`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaskParams {
    Mls { order: u32 },
    /// Single open feature per axis; `row_index` drives the baseline axis.
    Pinhole {
        features: usize,
        row_index: usize,
        col_index: usize,
    },
}

impl MaskParams {
    /// Pinhole in the middle of a `features`-long mask.
    pub fn centered_pinhole(features: usize) -> Self {
        MaskParams::Pinhole {
            features,
            row_index: features / 2,
            col_index: features / 2,
        }
    }
}

/// Rank-1 binary amplitude mask: `mask[i, j] = row_vector[i] * col_vector[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSpec {
    /// Feature vector along the baseline (row) axis.
    pub row_vector: Vec<u8>,
    /// Feature vector along the orthogonal (column) axis.
    pub col_vector: Vec<u8>,
    pub feature_pitch_um: f64,
    pub kind: MaskKind,
}

impl MaskSpec {
    pub fn features(&self) -> usize {
        self.row_vector.len()
    }

    /// Full 2D transmittance pattern.
    pub fn matrix(&self) -> Array2<u8> {
        Array2::from_shape_fn((self.row_vector.len(), self.col_vector.len()), |(i, j)| {
            self.row_vector[i] * self.col_vector[j]
        })
    }
}

pub fn make_mask(params: MaskParams, feature_pitch_um: f64) -> Result<MaskSpec> {
    if !(feature_pitch_um > 0.0 && feature_pitch_um.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "mask feature pitch must be positive, got {feature_pitch_um}"
        )));
    }
    match params {
        MaskParams::Mls { order } => {
            let v = mls_vector(order)?;
            Ok(MaskSpec {
                row_vector: v.clone(),
                col_vector: v,
                feature_pitch_um,
                kind: MaskKind::Mls,
            })
        }
        MaskParams::Pinhole {
            features,
            row_index,
            col_index,
        } => {
            if features == 0 || row_index >= features || col_index >= features {
                return Err(Error::InvalidParameter(format!(
                    "pinhole indices ({row_index}, {col_index}) outside a {features}-feature mask"
                )));
            }
            let mut row_vector = vec![0u8; features];
            let mut col_vector = vec![0u8; features];
            row_vector[row_index] = 1;
            col_vector[col_index] = 1;
            Ok(MaskSpec {
                row_vector,
                col_vector,
                feature_pitch_um,
                kind: MaskKind::Pinhole,
            })
        }
    }
}

/// One `N x N` binary projector pattern.
///
/// Every pattern produced by the generators here is an outer product of two
/// binary vectors. That factorization is detected on construction and lets
/// the forward model skip dark rows and columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Pattern {
    matrix: Array2<u8>,
    support: Option<Support>,
}

/// Lit rows and columns of a separable pattern.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Support {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
}

impl Pattern {
    pub fn new(matrix: Array2<u8>) -> Result<Self> {
        if matrix.iter().any(|&v| v > 1) {
            return Err(Error::InvalidParameter(
                "illumination patterns must be binary".into(),
            ));
        }
        let support = separable_support(&matrix);
        Ok(Pattern { matrix, support })
    }

    pub fn matrix(&self) -> &Array2<u8> {
        &self.matrix
    }

    pub fn size(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn support(&self) -> Option<&Support> {
        self.support.as_ref()
    }

    pub fn lit_count(&self) -> usize {
        self.matrix.iter().filter(|&&v| v == 1).count()
    }
}

fn separable_support(matrix: &Array2<u8>) -> Option<Support> {
    let rows: Vec<usize> = matrix
        .outer_iter()
        .enumerate()
        .filter(|(_, r)| r.iter().any(|&v| v == 1))
        .map(|(i, _)| i)
        .collect();
    let cols: Vec<usize> = (0..matrix.ncols())
        .filter(|&j| matrix.column(j).iter().any(|&v| v == 1))
        .collect();
    let lit = matrix.iter().filter(|&&v| v == 1).count();
    (lit == rows.len() * cols.len()).then_some(Support { rows, cols })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatternFamily {
    Uniform,
    Random,
    ShiftingDots,
    ShiftingLines,
    /// Loaded from a file; no generator parameters.
    Custom,
}

impl PatternFamily {
    pub fn name(self) -> &'static str {
        match self {
            PatternFamily::Uniform => "uniform",
            PatternFamily::Random => "random",
            PatternFamily::ShiftingDots => "shifting_dots",
            PatternFamily::ShiftingLines => "shifting_lines",
            PatternFamily::Custom => "custom",
        }
    }
}

/// Ordered projector patterns; their union lights every scene pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct IlluminationSequence {
    pub patterns: Vec<Pattern>,
    pub family: PatternFamily,
    pub spacing: Option<usize>,
    pub seed: Option<u64>,
}

impl IlluminationSequence {
    /// Wraps arbitrary patterns, checking shape and coverage.
    pub fn custom(patterns: Vec<Pattern>) -> Result<Self> {
        let seq = IlluminationSequence {
            patterns,
            family: PatternFamily::Custom,
            spacing: None,
            seed: None,
        };
        let n = seq
            .patterns
            .first()
            .map(|p| p.size())
            .ok_or_else(|| Error::InvalidParameter("empty illumination sequence".into()))?;
        if seq.patterns.iter().any(|p| p.matrix.dim() != (n, n)) {
            return Err(Error::ShapeMismatch(
                "all patterns must share one square shape".into(),
            ));
        }
        if !seq.covers_all() {
            return Err(Error::InvalidParameter(
                "illumination sequence leaves some pixels dark".into(),
            ));
        }
        Ok(seq)
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    pub fn size(&self) -> usize {
        self.patterns.first().map_or(0, Pattern::size)
    }

    /// Elementwise sum of all patterns.
    pub fn sum(&self) -> Array2<u32> {
        let n = self.size();
        let mut acc = Array2::<u32>::zeros((n, n));
        for p in &self.patterns {
            acc.zip_mut_with(&p.matrix, |a, &b| *a += u32::from(b));
        }
        acc
    }

    pub fn covers_all(&self) -> bool {
        !self.patterns.is_empty() && self.sum().iter().all(|&v| v > 0)
    }
}

fn check_size(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidParameter("pattern size must be at least 1".into()));
    }
    Ok(())
}

fn check_spacing(n: usize, k: usize) -> Result<()> {
    check_size(n)?;
    if k == 0 || k > n {
        return Err(Error::InvalidParameter(format!(
            "pattern spacing must be in 1..={n}, got {k}"
        )));
    }
    Ok(())
}

fn outer(rows: &[u8], cols: &[u8]) -> Pattern {
    let matrix = Array2::from_shape_fn((rows.len(), cols.len()), |(i, j)| rows[i] * cols[j]);
    let support = separable_support(&matrix);
    Pattern { matrix, support }
}

fn residue_vector(n: usize, k: usize, residue: usize) -> Vec<u8> {
    (0..n).map(|i| u8::from(i % k == residue)).collect()
}

pub fn uniform_sequence(n: usize) -> Result<IlluminationSequence> {
    check_size(n)?;
    let ones = vec![1u8; n];
    Ok(IlluminationSequence {
        patterns: vec![outer(&ones, &ones)],
        family: PatternFamily::Uniform,
        spacing: None,
        seed: None,
    })
}

const RANDOM_ATTEMPTS: usize = 64;

/// Separable Bernoulli(1/2) patterns, redrawn until their union covers the grid.
pub fn random_sequence(n: usize, count: usize, seed: u64) -> Result<IlluminationSequence> {
    check_size(n)?;
    if count == 0 {
        return Err(Error::InvalidParameter(
            "random sequence needs at least one pattern".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..RANDOM_ATTEMPTS {
        let patterns: Vec<Pattern> = (0..count)
            .map(|_| {
                let rows: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<bool>())).collect();
                let cols: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<bool>())).collect();
                outer(&rows, &cols)
            })
            .collect();
        let seq = IlluminationSequence {
            patterns,
            family: PatternFamily::Random,
            spacing: None,
            seed: Some(seed),
        };
        if seq.covers_all() {
            return Ok(seq);
        }
    }
    Err(Error::Coverage {
        count,
        attempts: RANDOM_ATTEMPTS,
    })
}

/// `k^2` dot lattices with period `k`, ordered by (row offset, column offset).
pub fn shifting_dots_sequence(n: usize, k: usize) -> Result<IlluminationSequence> {
    check_spacing(n, k)?;
    let mut patterns = Vec::with_capacity(k * k);
    for a in 0..k {
        let rows = residue_vector(n, k, a);
        for b in 0..k {
            patterns.push(outer(&rows, &residue_vector(n, k, b)));
        }
    }
    Ok(IlluminationSequence {
        patterns,
        family: PatternFamily::ShiftingDots,
        spacing: Some(k),
        seed: None,
    })
}

/// `k` horizontal line patterns (lit rows `i % k == a`) followed by `k`
/// vertical ones (lit columns `j % k == b`).
pub fn shifting_lines_sequence(n: usize, k: usize) -> Result<IlluminationSequence> {
    check_spacing(n, k)?;
    let ones = vec![1u8; n];
    let horizontal = (0..k).map(|a| outer(&residue_vector(n, k, a), &ones));
    let vertical = (0..k).map(|b| outer(&ones, &residue_vector(n, k, b)));
    Ok(IlluminationSequence {
        patterns: horizontal.chain(vertical).collect(),
        family: PatternFamily::ShiftingLines,
        spacing: Some(k),
        seed: None,
    })
}
