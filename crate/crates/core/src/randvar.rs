//! Rounded, range-restricted exponential variables and the min-based
//! cardinality estimator built from them.
//!
//! Values live on the geometric grid `(13/12)^k` and are stored as the
//! integer exponent `k`, so merging two vectors by entry-wise minimum is exact.

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const GRID_RATIO: f64 = 13.0 / 12.0;

/// Multiplier in the vector length `⌈243 (ln 4N² − ln η)⌉`.
pub const ELL_FACTOR: f64 = 243.0;

/// Bytes per encoded exponent on the wire (signed, little endian).
pub const EXPONENT_WIDTH_BYTES: usize = 2;

/// A point `(13/12)^k` of the geometric grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RoundedExp(pub i32);

impl RoundedExp {
    pub fn exponent(self) -> i32 {
        self.0
    }

    pub fn value(self) -> f64 {
        GRID_RATIO.powi(self.0)
    }

    /// Largest grid point not above `x`.
    pub fn floor_of(x: f64) -> Self {
        assert!(x > 0.0 && x.is_finite(), "grid rounding needs a positive finite value");
        let mut k = (x.ln() / GRID_RATIO.ln()).floor() as i32;
        while GRID_RATIO.powi(k) > x {
            k -= 1;
        }
        while GRID_RATIO.powi(k + 1) <= x {
            k += 1;
        }
        RoundedExp(k)
    }

    /// Smallest grid point not below `x`.
    pub fn ceil_of(x: f64) -> Self {
        let f = Self::floor_of(x);
        if f.value() < x {
            RoundedExp(f.0 + 1)
        } else {
            f
        }
    }
}

/// The admissible interval `[η/(4ℓN), ln(4ℓN/η)]` and its grid exponents.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridRange {
    pub low: f64,
    pub high: f64,
    pub min: RoundedExp,
    pub max: RoundedExp,
}

impl GridRange {
    pub fn new(ell: usize, size_bound: u64, eta: f64) -> Result<Self> {
        check_eta(eta)?;
        if ell == 0 || size_bound == 0 {
            return Err(Error::InvalidParameter("ell and N must be positive".into()));
        }
        let scale = 4.0 * ell as f64 * size_bound as f64;
        let low = eta / scale;
        let high = (scale / eta).ln();
        let min = RoundedExp::ceil_of(low);
        let max = RoundedExp::floor_of(high);
        let fits = |k: RoundedExp| i16::try_from(k.0).is_ok();
        if min > max || !fits(min) || !fits(max) {
            return Err(Error::InvalidParameter(format!(
                "grid range [{low}, {high}] is empty or exceeds the exponent width"
            )));
        }
        Ok(Self { low, high, min, max })
    }

    /// Clamps into the range and rounds down onto the grid. A value clamped to
    /// the lower end is rounded up instead so the result stays in range.
    pub fn restrict(&self, x: f64) -> RoundedExp {
        let clamped = x.clamp(self.low, self.high);
        RoundedExp::floor_of(clamped).clamp(self.min, self.max)
    }

    /// Number of distinct grid points in the range.
    pub fn grid_points(&self) -> usize {
        (self.max.0 - self.min.0 + 1) as usize
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if eta > 0.0 && eta <= 0.5 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("eta = {eta} outside (0, 1/2]")))
    }
}

/// `⌈243 (ln 4N² − ln η)⌉`.
pub fn ell_of(size_bound: u64, eta: f64) -> Result<usize> {
    check_eta(eta)?;
    if size_bound == 0 {
        return Err(Error::InvalidParameter("N must be positive".into()));
    }
    let n = size_bound as f64;
    Ok((ELL_FACTOR * ((4.0 * n * n).ln() - eta.ln())).ceil() as usize)
}

/// Rate-1 exponential draw by inverse transform.
pub fn draw_exponential<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    -(1.0 - u).ln()
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EstimatorVector(Vec<RoundedExp>);

impl EstimatorVector {
    pub fn new(entries: Vec<RoundedExp>) -> Self {
        Self(entries)
    }

    /// Every entry at `value`.
    pub fn filled(ell: usize, value: RoundedExp) -> Self {
        Self(vec![value; ell])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn entries(&self) -> &[RoundedExp] {
        &self.0
    }

    pub fn pointwise_min(&self, other: &EstimatorVector) -> Result<EstimatorVector> {
        let mut out = self.clone();
        out.min_assign(other)?;
        Ok(out)
    }

    pub fn min_assign(&mut self, other: &EstimatorVector) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::LengthMismatch(self.len(), other.len()));
        }
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            if b < a {
                *a = *b;
            }
        }
        Ok(())
    }

    /// `ℓ / Σ (13/12)^k`.
    pub fn estimate(&self) -> f64 {
        let sum: f64 = self.0.iter().map(|k| k.value()).sum();
        self.len() as f64 / sum
    }

    pub fn encoded_len(&self) -> usize {
        4 + EXPONENT_WIDTH_BYTES * self.len()
    }

    /// `u32` length, then one `i16` exponent per entry, little endian.
    pub fn encode_into(&self, buf: &mut Vec<u8>) {
        buf.extend_from_slice(&(self.len() as u32).to_le_bytes());
        for k in &self.0 {
            let k = i16::try_from(k.0).expect("exponent outside the wire width");
            buf.extend_from_slice(&k.to_le_bytes());
        }
    }

    pub fn decode(bytes: &[u8]) -> Result<(Self, &[u8])> {
        let (len, rest) = bytes
            .split_first_chunk::<4>()
            .ok_or_else(|| Error::Decode("truncated vector length".into()))?;
        let len = u32::from_le_bytes(*len) as usize;
        let body = len * EXPONENT_WIDTH_BYTES;
        if rest.len() < body {
            return Err(Error::Decode("truncated vector body".into()));
        }
        let entries = rest[..body]
            .chunks_exact(EXPONENT_WIDTH_BYTES)
            .map(|c| RoundedExp(i16::from_le_bytes([c[0], c[1]]) as i32))
            .collect();
        Ok((Self(entries), &rest[body..]))
    }
}

impl PartialOrd for EstimatorVector {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        if self.len() != other.len() {
            return None;
        }
        let le = self.0.iter().zip(&other.0).all(|(a, b)| a <= b);
        let ge = self.0.iter().zip(&other.0).all(|(a, b)| a >= b);
        match (le, ge) {
            (true, true) => Some(Ordering::Equal),
            (true, false) => Some(Ordering::Less),
            (false, true) => Some(Ordering::Greater),
            (false, false) => None,
        }
    }
}

/// `ℓ` independent rate-1 exponentials, each restricted to the grid range.
pub fn sample_vector<R: Rng + ?Sized>(ell: usize, size_bound: u64, eta: f64, rng: &mut R) -> Result<EstimatorVector> {
    let range = GridRange::new(ell, size_bound, eta)?;
    Ok(EstimatorVector(
        (0..ell).map(|_| range.restrict(draw_exponential(rng))).collect(),
    ))
}

pub fn pointwise_min(a: &EstimatorVector, b: &EstimatorVector) -> Result<EstimatorVector> {
    a.pointwise_min(b)
}

pub fn estimate(v: &EstimatorVector) -> f64 {
    v.estimate()
}
