//! Coordinate sparsification: a node transmits a uniformly random subset of
//! `ceil(q * d)` coordinates of each message and zeroes the rest.

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};

/// Number of coordinates kept out of `d` at fraction `q`.
///
/// A relative slack of 1e-9 absorbs representation error, so that e.g.
/// `q = 0.3, d = 10` keeps 3 rather than 4.
pub fn kept_count(d: usize, q: f64) -> usize {
    let raw = q * d as f64;
    let k = (raw - 1e-9 * raw.max(1.0)).ceil() as usize;
    k.clamp(1, d.max(1))
}

fn check_fraction(q: f64) -> Result<()> {
    if q > 0.0 && q <= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("sparsification fraction {q} outside (0, 1]")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CoordinateMask {
    kept: Vec<usize>,
    bits: Vec<bool>,
}

impl CoordinateMask {
    pub fn full(dim: usize) -> Self {
        CoordinateMask {
            kept: (0..dim).collect(),
            bits: vec![true; dim],
        }
    }

    pub fn from_indices(dim: usize, indices: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut bits = vec![false; dim];
        for m in indices {
            if m >= dim {
                return Err(Error::invalid(format!("coordinate {m} outside 0..{dim}")));
            }
            bits[m] = true;
        }
        Ok(Self::from_bits(bits))
    }

    fn from_bits(bits: Vec<bool>) -> Self {
        let kept = bits
            .iter()
            .enumerate()
            .filter_map(|(m, &b)| b.then_some(m))
            .collect();
        CoordinateMask { kept, bits }
    }

    pub fn dim(&self) -> usize {
        self.bits.len()
    }

    /// Kept coordinates in ascending order.
    pub fn kept(&self) -> &[usize] {
        &self.kept
    }

    pub fn len(&self) -> usize {
        self.kept.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kept.is_empty()
    }

    #[inline]
    pub fn keeps(&self, m: usize) -> bool {
        self.bits[m]
    }

    pub fn is_full(&self) -> bool {
        self.kept.len() == self.bits.len()
    }
}

/// Uniformly random subset of `kept_count(d, q)` coordinates.
pub fn draw_mask<R: Rng + ?Sized>(d: usize, q: f64, rng: &mut R) -> Result<CoordinateMask> {
    check_fraction(q)?;
    if d == 0 {
        return Err(Error::invalid("dimension must be positive"));
    }
    let k = kept_count(d, q);
    if k == d {
        return Ok(CoordinateMask::full(d));
    }
    let mut bits = vec![false; d];
    for m in index::sample(rng, d, k) {
        bits[m] = true;
    }
    Ok(CoordinateMask::from_bits(bits))
}

/// Masks drawn by every node for one step: one for its state message and an
/// independent one for its surplus message.
#[derive(Clone, Debug, PartialEq)]
pub struct StepMasks {
    pub x: Vec<CoordinateMask>,
    pub y: Vec<CoordinateMask>,
}

impl StepMasks {
    pub fn full(n: usize, d: usize) -> Self {
        StepMasks {
            x: vec![CoordinateMask::full(d); n],
            y: vec![CoordinateMask::full(d); n],
        }
    }

    /// Draws node 0's state mask, node 0's surplus mask, node 1's state mask, ...
    pub fn draw<R: Rng + ?Sized>(n: usize, d: usize, q: f64, rng: &mut R) -> Result<Self> {
        let mut x = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            x.push(draw_mask(d, q, rng)?);
            y.push(draw_mask(d, q, rng)?);
        }
        Ok(StepMasks { x, y })
    }
}

/// A sparsified message: only the kept coordinates travel.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedMessage {
    /// Virtual node id: `i` for node i's state, `n + i` for its surplus.
    pub source: usize,
    pub mask: CoordinateMask,
    pub values: Vec<f64>,
}

impl MaskedMessage {
    /// The compressed vector Q(x): kept coordinates as sent, zeros elsewhere.
    pub fn densify(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.mask.dim()];
        for (&m, &v) in self.mask.kept().iter().zip(&self.values) {
            out[m] = v;
        }
        out
    }
}

pub fn apply_mask(source: usize, x: &[f64], mask: &CoordinateMask) -> Result<MaskedMessage> {
    if x.len() != mask.dim() {
        return Err(Error::DimensionMismatch {
            expected: mask.dim(),
            found: x.len(),
        });
    }
    Ok(MaskedMessage {
        source,
        mask: mask.clone(),
        values: mask.kept().iter().map(|&m| x[m]).collect(),
    })
}
