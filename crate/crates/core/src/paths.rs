//! Counter-based Brownian increments with pairwise coarsening.
//!
//! Every variate is a pure function of a [`SeedSpec`] and a variate index,
//! computed with the Philox4x32-10 bijection. Nothing is stateful, so paths
//! can be generated in any order (or concurrently) and still reproduce
//! bit-for-bit.

use statrs::function::erf::erfc_inv;
use std::f64::consts::SQRT_2;

use crate::error::Error;

/// Simulation horizon. Level `l` uses `2^l` uniform steps over `[0, HORIZON]`.
pub const HORIZON: f64 = 1.0;

/// Largest level a path may be requested at. `2^30` steps is far beyond any
/// practical run and keeps every index inside a `u32` counter word.
pub const MAX_LEVEL: u32 = 30;

/// Address of one independent random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedSpec {
    pub experiment_seed: u64,
    pub iteration: u32,
    pub level: u32,
    pub sample_index: u32,
}

impl SeedSpec {
    pub fn new(experiment_seed: u64, iteration: u32, level: u32, sample_index: u32) -> Self {
        Self {
            experiment_seed,
            iteration,
            level,
            sample_index,
        }
    }

    fn counter(&self, k: u32) -> [u32; 4] {
        [k, self.sample_index, self.iteration, self.level]
    }

    fn key(&self) -> [u32; 2] {
        [self.experiment_seed as u32, (self.experiment_seed >> 32) as u32]
    }
}

const PHILOX_M0: u32 = 0xD251_1F53;
const PHILOX_M1: u32 = 0xCD9E_8D57;
const PHILOX_W0: u32 = 0x9E37_79B9;
const PHILOX_W1: u32 = 0xBB67_AE85;

#[inline]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = u64::from(a) * u64::from(b);
    ((p >> 32) as u32, p as u32)
}

/// Philox4x32 with 10 rounds.
pub fn philox4x32(counter: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let mut c = counter;
    let mut k = key;
    for round in 0..10 {
        if round > 0 {
            k[0] = k[0].wrapping_add(PHILOX_W0);
            k[1] = k[1].wrapping_add(PHILOX_W1);
        }
        let (hi0, lo0) = mulhilo(PHILOX_M0, c[0]);
        let (hi1, lo1) = mulhilo(PHILOX_M1, c[2]);
        c = [hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0];
    }
    c
}

/// Uniform variate in the open interval (0, 1), 53 bits of resolution.
pub fn uniform_from_counter(seed: SeedSpec, k: u32) -> f64 {
    let out = philox4x32(seed.counter(k), seed.key());
    let bits = (u64::from(out[0]) << 32) | u64::from(out[1]);
    ((bits >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal variate: inverse CDF applied to [`uniform_from_counter`].
pub fn gaussian_from_counter(seed: SeedSpec, k: u32) -> f64 {
    standard_normal_quantile(uniform_from_counter(seed, k))
}

/// Inverse of the standard normal CDF on (0, 1).
pub fn standard_normal_quantile(u: f64) -> f64 {
    -SQRT_2 * erfc_inv(2.0 * u)
}

/// SplitMix64 finalizer, used to derive unrelated experiment seeds for
/// auxiliary streams (initialization, evaluation).
pub fn mix_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One Brownian path at `level` plus its pairwise-summed coarse version.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledIncrements {
    pub level: u32,
    pub horizon: f64,
    pub fine: Vec<f64>,
    /// Empty at level 0.
    pub coarse: Vec<f64>,
}

impl CoupledIncrements {
    /// Builds the coupling from explicit fine increments (length must be a
    /// power of two).
    pub fn from_fine(fine: Vec<f64>) -> Result<Self, Error> {
        if fine.is_empty() || !fine.len().is_power_of_two() {
            return Err(Error::domain(format!(
                "fine increments must have power-of-two length, got {}",
                fine.len()
            )));
        }
        let level = fine.len().trailing_zeros();
        let coarse = coarsen(&fine);
        Ok(Self {
            level,
            horizon: HORIZON,
            fine,
            coarse,
        })
    }

    pub fn fine_dt(&self) -> f64 {
        step_size(self.level)
    }
}

/// Pairwise sums `[x0 + x1, x2 + x3, ...]`; empty for a single increment.
pub fn coarsen(fine: &[f64]) -> Vec<f64> {
    if fine.len() < 2 {
        return Vec::new();
    }
    fine.chunks_exact(2).map(|p| p[0] + p[1]).collect()
}

/// Step size at `level` over the unit horizon.
pub fn step_size(level: u32) -> f64 {
    HORIZON / (1u64 << level) as f64
}

pub fn check_level(level: u32, lmax: u32) -> Result<(), Error> {
    if level > lmax || level > MAX_LEVEL {
        return Err(Error::domain(format!(
            "level {level} outside [0, {}]",
            lmax.min(MAX_LEVEL)
        )));
    }
    Ok(())
}

/// Draws `2^level` increments `N(0, 2^-level)` from the stream `seed`.
pub fn sample_increments(seed: SeedSpec, level: u32) -> Result<CoupledIncrements, Error> {
    check_level(level, MAX_LEVEL)?;
    let n = 1u32 << level;
    let scale = step_size(level).sqrt();
    let fine: Vec<f64> = (0..n).map(|k| scale * gaussian_from_counter(seed, k)).collect();
    let coarse = coarsen(&fine);
    Ok(CoupledIncrements {
        level,
        horizon: HORIZON,
        fine,
        coarse,
    })
}
