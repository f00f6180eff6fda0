//! Naive Monte Carlo, standard MLMC and delayed MLMC gradient estimators.
//!
//! Costs are counted in Milstein steps of one path. A coupled sample at
//! level `l` runs the fine pass (`2^l` steps) and, for `l >= 1`, the coarse
//! pass (`2^(l-1)` steps). Span assumes unlimited processors across levels
//! and samples, so a call's span is the most expensive single sample it
//! evaluates.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nsde::{self, MarketParams, ParamVector};
use crate::paths::{self, SeedSpec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateParams {
    /// Variance decay rate.
    pub b: f64,
    /// Cost growth rate.
    pub c: f64,
    /// Smoothness decay rate; sets the delay periods.
    pub d: f64,
    pub lmax: u32,
}

impl Default for RateParams {
    fn default() -> Self {
        Self {
            b: 1.8,
            c: 1.0,
            d: 1.0,
            lmax: 6,
        }
    }
}

impl RateParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("b", self.b), ("c", self.c), ("d", self.d)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::domain(format!("rate {name} must be finite and > 0, got {v}")));
            }
        }
        if self.lmax > paths::MAX_LEVEL {
            return Err(Error::domain(format!(
                "lmax {} exceeds {}",
                self.lmax,
                paths::MAX_LEVEL
            )));
        }
        Ok(())
    }

    pub fn levels(&self) -> std::ops::RangeInclusive<u32> {
        0..=self.lmax
    }
}

/// Steps executed by one coupled sample at `level`.
pub fn coupled_sample_cost(level: u32) -> u64 {
    if level == 0 {
        1
    } else {
        (1u64 << level) + (1u64 << (level - 1))
    }
}

/// Steps executed by one uncoupled sample at `level`.
pub fn single_sample_cost(level: u32) -> u64 {
    1u64 << level
}

/// Per-level sample counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Allocation {
    pub counts: Vec<u64>,
    pub effective_n: u64,
}

impl Allocation {
    pub fn lmax(&self) -> u32 {
        (self.counts.len() - 1) as u32
    }

    pub fn count(&self, level: u32) -> u64 {
        self.counts[level as usize]
    }

    /// Total steps of one full MLMC evaluation.
    pub fn work(&self) -> u64 {
        self.counts
            .iter()
            .enumerate()
            .map(|(l, n)| n * coupled_sample_cost(l as u32))
            .sum()
    }
}

/// `N_l = ceil(2^{-(b+c)l/2} / sum_k 2^{-(b+c)k/2} * N)`.
pub fn allocate(n: u64, rates: &RateParams) -> Result<Allocation> {
    if n < 1 {
        return Err(Error::domain("effective batch size must be >= 1"));
    }
    rates.validate()?;
    if rates.b <= rates.c {
        log::warn!(
            "b = {} <= c = {}: allocation still follows the closed form, but MLMC loses its optimal rate",
            rates.b,
            rates.c
        );
    }
    let exponent = -(rates.b + rates.c) / 2.0;
    let weights: Vec<f64> = rates
        .levels()
        .map(|l| (exponent * f64::from(l)).exp2())
        .collect();
    let total: f64 = weights.iter().sum();
    let counts = weights
        .iter()
        .map(|w| ((w / total * n as f64).ceil() as u64).max(1))
        .collect();
    Ok(Allocation {
        counts,
        effective_n: n,
    })
}

/// `floor(2^(d l))`, at least 1. A product `d l` within a few ulps of an
/// integer is taken as that integer, so `d = 0.7, l = 10` gives 128.
pub fn delay_period(level: u32, d: f64) -> u64 {
    let e = d * f64::from(level);
    let k = e.round();
    let e = if (e - k).abs() <= 8.0 * f64::EPSILON * k.abs().max(1.0) { k } else { e };
    let p = e.exp2().floor();
    if p >= u64::MAX as f64 {
        u64::MAX
    } else {
        (p as u64).max(1)
    }
}

/// Most recent refresh time of `level` at or before `t`.
pub fn tau(t: u64, level: u32, d: f64) -> u64 {
    let p = delay_period(level, d);
    p * (t / p)
}

/// Levels whose period divides `t`, i.e. the levels delayed MLMC refreshes.
pub fn refresh_levels(t: u64, d: f64, lmax: u32) -> Vec<u32> {
    (0..=lmax).filter(|&l| t.is_multiple_of(delay_period(l, d))).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradResult {
    pub gradient: Vec<f64>,
    /// Steps executed.
    pub work: u64,
    /// Steps on the critical path.
    pub span: u64,
    /// Ascending.
    pub levels_refreshed: Vec<u32>,
}

pub(crate) fn add_into(acc: &mut [f64], other: &[f64]) {
    for (a, b) in acc.iter_mut().zip(other) {
        *a += b;
    }
}

/// Pairwise sum with a fixed tree shape, independent of evaluation order.
pub fn tree_sum(mut items: Vec<Vec<f64>>) -> Option<Vec<f64>> {
    while items.len() > 1 {
        let mut next = Vec::with_capacity(items.len().div_ceil(2));
        let mut it = items.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                add_into(&mut a, &b);
            }
            next.push(a);
        }
        items = next;
    }
    items.pop()
}

fn mean_of(items: Vec<Vec<f64>>) -> Vec<f64> {
    let n = items.len() as f64;
    let mut sum = tree_sum(items).expect("non-empty sample set");
    for v in &mut sum {
        *v /= n;
    }
    sum
}

/// `(1/count) sum_n grad Delta_l F(x, xi_{t,l,n})`.
pub fn level_mean_gradient(
    x: &ParamVector,
    mp: &MarketParams,
    level: u32,
    count: u64,
    t: u32,
    seed: u64,
) -> Result<Vec<f64>> {
    if count == 0 {
        return Err(Error::domain(format!("level {level} has no samples")));
    }
    let count = u32::try_from(count).map_err(|_| Error::domain("sample count exceeds u32"))?;
    let grads = (0..count)
        .into_par_iter()
        .map(|n| nsde::coupled_grad(x, mp, level, SeedSpec::new(seed, t, level, n)).map(|g| g.gradient))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_of(grads))
}

fn iteration_index(t: u64) -> Result<u32> {
    u32::try_from(t).map_err(|_| Error::domain(format!("iteration {t} exceeds the u32 stream space")))
}

/// `(1/n) sum_n grad F_lmax(x, xi_n)`.
pub fn naive_gradient(
    x: &ParamVector,
    n: u64,
    rates: &RateParams,
    mp: &MarketParams,
    t: u64,
    seed: u64,
) -> Result<GradResult> {
    if n < 1 {
        return Err(Error::domain("naive estimator needs n >= 1"));
    }
    let lmax = rates.lmax;
    let ti = iteration_index(t)?;
    let count = u32::try_from(n).map_err(|_| Error::domain("sample count exceeds u32"))?;
    let grads = (0..count)
        .into_par_iter()
        .map(|i| nsde::level_grad(x, mp, lmax, SeedSpec::new(seed, ti, lmax, i)).map(|(_, g)| g))
        .collect::<Result<Vec<_>>>()?;
    Ok(GradResult {
        gradient: mean_of(grads),
        work: n * single_sample_cost(lmax),
        span: single_sample_cost(lmax),
        levels_refreshed: vec![lmax],
    })
}

fn check_alloc(alloc: &Allocation, rates: &RateParams) -> Result<()> {
    if alloc.counts.len() != rates.lmax as usize + 1 {
        return Err(Error::domain(format!(
            "allocation covers {} levels, rates say lmax = {}",
            alloc.counts.len(),
            rates.lmax
        )));
    }
    Ok(())
}

/// Standard MLMC: every level refreshed with fresh samples.
pub fn mlmc_gradient(
    x: &ParamVector,
    alloc: &Allocation,
    rates: &RateParams,
    mp: &MarketParams,
    t: u64,
    seed: u64,
) -> Result<GradResult> {
    check_alloc(alloc, rates)?;
    let ti = iteration_index(t)?;
    let mut gradient: Option<Vec<f64>> = None;
    for level in rates.levels() {
        let g = level_mean_gradient(x, mp, level, alloc.count(level), ti, seed)?;
        match gradient.as_mut() {
            None => gradient = Some(g),
            Some(acc) => add_into(acc, &g),
        }
    }
    Ok(GradResult {
        gradient: gradient.expect("level 0 always present"),
        work: alloc.work(),
        span: coupled_sample_cost(rates.lmax),
        levels_refreshed: rates.levels().collect(),
    })
}

/// Refresh times and cached per-level means for delayed MLMC.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayState {
    tau: Vec<u64>,
    cached: Vec<Vec<f64>>,
    d: f64,
    lmax: u32,
    next_t: u64,
}

impl DelayState {
    pub fn new(rates: &RateParams, param_len: usize) -> Self {
        Self {
            tau: vec![0; rates.lmax as usize + 1],
            cached: vec![vec![0.0; param_len]; rates.lmax as usize + 1],
            d: rates.d,
            lmax: rates.lmax,
            next_t: 0,
        }
    }

    pub fn tau(&self, level: u32) -> u64 {
        self.tau[level as usize]
    }

    pub fn cached(&self, level: u32) -> &[f64] {
        &self.cached[level as usize]
    }

    /// The next iteration this state accepts.
    pub fn next_iteration(&self) -> u64 {
        self.next_t
    }

    pub fn period(&self, level: u32) -> u64 {
        delay_period(level, self.d)
    }

    /// Checks `t - p_l <= tau_l <= t` and `tau_l = 0 mod p_l` for every level,
    /// where `t` is the last processed iteration.
    pub fn check_invariants(&self) -> Result<()> {
        let Some(t) = self.next_t.checked_sub(1) else {
            return Ok(());
        };
        for level in 0..=self.lmax {
            let p = self.period(level);
            let tau = self.tau(level);
            if tau > t || t - tau > p || !tau.is_multiple_of(p) {
                return Err(Error::state(format!(
                    "tau[{level}] = {tau} violates the refresh constraints at t = {t} (period {p})"
                )));
            }
        }
        Ok(())
    }
}

/// One iteration of delayed MLMC. Must be called with `t = 0, 1, 2, ...`.
pub fn delayed_gradient(
    t: u64,
    x: &ParamVector,
    state: &mut DelayState,
    alloc: &Allocation,
    rates: &RateParams,
    mp: &MarketParams,
    seed: u64,
) -> Result<GradResult> {
    check_alloc(alloc, rates)?;
    if state.lmax != rates.lmax || state.cached.first().map(Vec::len) != Some(x.len()) {
        return Err(Error::state("delay state was built for a different problem"));
    }
    if t != state.next_t {
        return Err(Error::state(format!(
            "delayed estimator expected iteration {}, got {t}",
            state.next_t
        )));
    }
    let ti = iteration_index(t)?;
    let refreshed = refresh_levels(t, state.d, state.lmax);
    let mut work = 0;
    let mut span = 0;
    for &level in &refreshed {
        let count = alloc.count(level);
        state.cached[level as usize] = level_mean_gradient(x, mp, level, count, ti, seed)?;
        state.tau[level as usize] = t;
        work += count * coupled_sample_cost(level);
        span = span.max(coupled_sample_cost(level));
    }
    state.next_t = t + 1;

    let mut gradient = state.cached[0].clone();
    for cached in &state.cached[1..] {
        add_into(&mut gradient, cached);
    }
    Ok(GradResult {
        gradient,
        work,
        span,
        levels_refreshed: refreshed,
    })
}
