//! Empirical checks of the level-wise rate assumptions.
//!
//! Each estimate is a table of per-level sample means and standard
//! deviations plus a least-squares fit of `log2(mean)` against the level.

use rayon::prelude::*;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::estimators::{self, RateParams};
use crate::nsde::{self, MarketParams, ParamVector};
use crate::optimizer::l2_norm;
use crate::paths::SeedSpec;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelStat {
    pub level: u32,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayEstimate {
    pub per_level: Vec<LevelStat>,
    /// `None` when some mean in the fit range is not positive.
    pub fitted_rate: Option<f64>,
    /// Inclusive.
    pub fit_levels: (u32, u32),
}

impl DecayEstimate {
    fn from_levels(per_level: Vec<LevelStat>, fit_levels: (u32, u32), sign: f64) -> Result<Self> {
        let (lo, hi) = fit_levels;
        if hi < lo || hi - lo < 2 {
            return Err(Error::domain(format!("fit range {lo}..{hi} has fewer than 3 levels")));
        }
        let points: Vec<(u32, f64)> = per_level
            .iter()
            .filter(|s| (lo..=hi).contains(&s.level))
            .map(|s| (s.level, s.mean))
            .collect();
        if points.len() != (hi - lo + 1) as usize {
            return Err(Error::domain(format!("fit range {lo}..{hi} not covered by the estimate")));
        }
        let fitted_rate = if points.iter().all(|(_, v)| *v > 0.0 && v.is_finite()) {
            Some(sign * fit_log2_rate(&points)?)
        } else {
            None
        };
        Ok(Self {
            per_level,
            fitted_rate,
            fit_levels,
        })
    }

    pub fn is_degenerate(&self) -> bool {
        self.fitted_rate.is_none()
    }
}

/// Negated least-squares slope of `log2(value)` against `level`.
pub fn fit_log2_rate(points: &[(u32, f64)]) -> Result<f64> {
    if points.len() < 3 {
        return Err(Error::domain("rate fit needs at least 3 points"));
    }
    if let Some((l, v)) = points.iter().find(|(_, v)| !(*v > 0.0)) {
        return Err(Error::domain(format!("non-positive value {v} at level {l}")));
    }
    let n = points.len() as f64;
    let mean_x = points.iter().map(|(l, _)| f64::from(*l)).sum::<f64>() / n;
    let mean_y = points.iter().map(|(_, v)| v.log2()).sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (l, v) in points {
        let dx = f64::from(*l) - mean_x;
        sxy += dx * (v.log2() - mean_y);
        sxx += dx * dx;
    }
    if sxx == 0.0 {
        return Err(Error::domain("rate fit needs at least two distinct levels"));
    }
    Ok(-(sxy / sxx))
}

fn summarize(level: u32, values: &[f64]) -> LevelStat {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    LevelStat {
        level,
        mean,
        std: var.sqrt(),
    }
}

fn check_samples(samples: u32) -> Result<()> {
    if samples < 2 {
        return Err(Error::domain("decay estimates need at least 2 samples per level"));
    }
    Ok(())
}

/// Default fit range `[2, lmax]`, clipped so it still spans three levels
/// where possible.
pub fn default_fit_levels(lmax: u32) -> (u32, u32) {
    (2.min(lmax.saturating_sub(2)), lmax)
}

/// `E ||grad Delta_l F(x, xi)||^2` per level; the rate estimates `b`.
pub fn grad_norm_decay(
    x: &ParamVector,
    samples: u32,
    rates: &RateParams,
    mp: &MarketParams,
    seed: u64,
    fit_levels: (u32, u32),
) -> Result<DecayEstimate> {
    check_samples(samples)?;
    let per_level = rates
        .levels()
        .map(|level| {
            let values = (0..samples)
                .into_par_iter()
                .map(|n| {
                    let cg = nsde::coupled_grad(x, mp, level, SeedSpec::new(seed, 0, level, n))?;
                    Ok(cg.gradient.iter().map(|g| g * g).sum::<f64>())
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(summarize(level, &values))
        })
        .collect::<Result<Vec<_>>>()?;
    DecayEstimate::from_levels(per_level, fit_levels, 1.0)
}

/// `E ||grad Delta_l F(x', xi) - grad Delta_l F(x, xi)|| / ||x' - x||` per
/// level with shared randomness; the rate estimates `d`.
pub fn smoothness_decay(
    x_t: &ParamVector,
    x_next: &ParamVector,
    samples: u32,
    rates: &RateParams,
    mp: &MarketParams,
    seed: u64,
    fit_levels: (u32, u32),
) -> Result<DecayEstimate> {
    smoothness_decay_pairs(&[(x_t.clone(), x_next.clone())], samples, rates, mp, seed, fit_levels)
}

/// As [`smoothness_decay`], pooling the ratios of several parameter pairs
/// (each pair sees the same `samples` paths).
pub fn smoothness_decay_pairs(
    pairs: &[(ParamVector, ParamVector)],
    samples: u32,
    rates: &RateParams,
    mp: &MarketParams,
    seed: u64,
    fit_levels: (u32, u32),
) -> Result<DecayEstimate> {
    check_samples(samples)?;
    if pairs.is_empty() {
        return Err(Error::domain("smoothness estimate needs at least one parameter pair"));
    }
    let mut gaps = Vec::with_capacity(pairs.len());
    for (a, b) in pairs {
        let diff: Vec<f64> = a.as_slice().iter().zip(b.as_slice()).map(|(u, v)| v - u).collect();
        let gap = l2_norm(&diff);
        if gap == 0.0 {
            return Err(Error::domain("parameter pair is identical; smoothness ratio undefined"));
        }
        gaps.push(gap);
    }
    let per_level = rates
        .levels()
        .map(|level| {
            let values = (0..samples)
                .into_par_iter()
                .flat_map_iter(|n| pairs.iter().zip(&gaps).map(move |(pair, gap)| (n, pair, *gap)))
                .map(|(n, (a, b), gap)| {
                    let seed = SeedSpec::new(seed, 0, level, n);
                    let ga = nsde::coupled_grad(a, mp, level, seed)?.gradient;
                    let gb = nsde::coupled_grad(b, mp, level, seed)?.gradient;
                    let dg: f64 = ga.iter().zip(&gb).map(|(u, v)| (v - u) * (v - u)).sum();
                    Ok(dg.sqrt() / gap)
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(summarize(level, &values))
        })
        .collect::<Result<Vec<_>>>()?;
    DecayEstimate::from_levels(per_level, fit_levels, 1.0)
}

/// Steps per coupled sample at each level; the (positive) growth slope
/// estimates `c`.
pub fn cost_growth(rates: &RateParams, fit_levels: (u32, u32)) -> Result<DecayEstimate> {
    let per_level = rates
        .levels()
        .map(|level| LevelStat {
            level,
            mean: estimators::coupled_sample_cost(level) as f64,
            std: 0.0,
        })
        .collect();
    DecayEstimate::from_levels(per_level, fit_levels, -1.0)
}

/// Wall-clock seconds per coupled gradient sample at each level, taking the
/// fastest of `repeats` timed batches of `batch` samples.
pub fn cost_growth_wallclock(
    x: &ParamVector,
    rates: &RateParams,
    mp: &MarketParams,
    batch: u32,
    repeats: u32,
    fit_levels: (u32, u32),
) -> Result<DecayEstimate> {
    if batch == 0 || repeats < 2 {
        return Err(Error::domain("timing needs batch >= 1 and repeats >= 2"));
    }
    let per_level = rates
        .levels()
        .map(|level| {
            let mut times = Vec::with_capacity(repeats as usize);
            for r in 0..repeats {
                let start = Instant::now();
                for n in 0..batch {
                    let seed = SeedSpec::new(0, r, level, n);
                    std::hint::black_box(nsde::coupled_grad(x, mp, level, seed)?);
                }
                times.push(start.elapsed().as_secs_f64() / f64::from(batch));
            }
            let fastest = times.iter().copied().fold(f64::INFINITY, f64::min);
            let stat = summarize(level, &times);
            Ok(LevelStat {
                level,
                mean: fastest,
                std: stat.std,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    DecayEstimate::from_levels(per_level, fit_levels, -1.0)
}
