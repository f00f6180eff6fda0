//! Constant-step SGD over the three estimators, with work/span meters.

use rayon::prelude::*;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::estimators::{self, Allocation, DelayState, GradResult, RateParams};
use crate::nsde::{self, HedgeNet, MarketParams, ParamVector};
use crate::paths::{self, SeedSpec};

/// Tag mixed into the experiment seed for the evaluation stream.
const EVAL_STREAM: u64 = 0xE7A1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EstimatorKind {
    Naive,
    Mlmc,
    Delayed,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 3] = [Self::Naive, Self::Mlmc, Self::Delayed];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Naive => "naive",
            Self::Mlmc => "mlmc",
            Self::Delayed => "delayed",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "naive" => Ok(Self::Naive),
            "mlmc" => Ok(Self::Mlmc),
            "delayed" => Ok(Self::Delayed),
            other => Err(Error::domain(format!("unknown estimator '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SgdConfig {
    pub estimator: EstimatorKind,
    pub alpha0: f64,
    pub iterations: u64,
    pub effective_n: u64,
    pub eval_every: u64,
    pub eval_samples: u32,
}

impl SgdConfig {
    /// `alpha0 = 0` passes here so that frozen runs can be tested; front ends
    /// should insist on a positive step.
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha0 >= 0.0 && self.alpha0.is_finite()) {
            return Err(Error::domain("alpha0 must be finite and non-negative"));
        }
        if self.effective_n < 1 {
            return Err(Error::domain("effective_n must be >= 1"));
        }
        if self.eval_every < 1 {
            return Err(Error::domain("eval_every must be >= 1"));
        }
        if self.eval_samples < 1 {
            return Err(Error::domain("eval_samples must be >= 1"));
        }
        if self.iterations > u64::from(u32::MAX) {
            return Err(Error::domain("iterations exceed the u32 stream space"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub t: u64,
    pub loss_estimate: f64,
    /// Steps spent reaching `x_t`.
    pub cumulative_work: u64,
    pub cumulative_span: u64,
    /// Norm of the evaluation-set mean gradient at `x_t`.
    pub grad_norm_estimate: f64,
}

/// Fixed evaluation set of finest-level paths drawn from a stream the
/// estimators never touch.
#[derive(Debug, Clone)]
pub struct Evaluator {
    mp: MarketParams,
    lmax: u32,
    stream_seed: u64,
    samples: u32,
}

impl Evaluator {
    pub fn new(mp: MarketParams, lmax: u32, experiment_seed: u64, samples: u32) -> Self {
        Self {
            mp,
            lmax,
            stream_seed: paths::mix_seed(experiment_seed, EVAL_STREAM),
            samples,
        }
    }

    /// Mean loss and mean gradient over the evaluation set.
    pub fn evaluate(&self, x: &ParamVector) -> Result<(f64, Vec<f64>)> {
        let parts = (0..self.samples)
            .into_par_iter()
            .map(|n| {
                let seed = SeedSpec::new(self.stream_seed, 0, self.lmax, n);
                nsde::level_grad(x, &self.mp, self.lmax, seed)
            })
            .collect::<Result<Vec<_>>>()?;
        let n = f64::from(self.samples);
        let loss = parts.iter().map(|(l, _)| l).sum::<f64>() / n;
        let mut grad = estimators::tree_sum(parts.into_iter().map(|(_, g)| g).collect())
            .expect("at least one evaluation sample");
        for g in &mut grad {
            *g /= n;
        }
        Ok((loss, grad))
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Stateful SGD driver; [`run`] wraps it with evaluation.
#[derive(Debug, Clone)]
pub struct Sgd {
    config: SgdConfig,
    rates: RateParams,
    mp: MarketParams,
    seed: u64,
    x: ParamVector,
    alloc: Allocation,
    delay: Option<DelayState>,
    t: u64,
    work: u64,
    span: u64,
}

impl Sgd {
    pub fn new(config: SgdConfig, rates: RateParams, mp: MarketParams, seed: u64) -> Result<Self> {
        Self::with_params(config, rates, mp, seed, HedgeNet::init(seed))
    }

    pub fn with_params(
        config: SgdConfig,
        rates: RateParams,
        mp: MarketParams,
        seed: u64,
        x: ParamVector,
    ) -> Result<Self> {
        config.validate()?;
        rates.validate()?;
        mp.validate()?;
        let alloc = estimators::allocate(config.effective_n, &rates)?;
        let delay = (config.estimator == EstimatorKind::Delayed).then(|| DelayState::new(&rates, x.len()));
        Ok(Self {
            config,
            rates,
            mp,
            seed,
            x,
            alloc,
            delay,
            t: 0,
            work: 0,
            span: 0,
        })
    }

    pub fn params(&self) -> &ParamVector {
        &self.x
    }

    pub fn iteration(&self) -> u64 {
        self.t
    }

    pub fn cumulative_work(&self) -> u64 {
        self.work
    }

    pub fn cumulative_span(&self) -> u64 {
        self.span
    }

    pub fn allocation(&self) -> &Allocation {
        &self.alloc
    }

    pub fn delay_state(&self) -> Option<&DelayState> {
        self.delay.as_ref()
    }

    /// Estimates the gradient at `x_t`, applies `x_{t+1} = x_t - alpha0 g`.
    pub fn step(&mut self) -> Result<GradResult> {
        let t = self.t;
        let result = match self.config.estimator {
            EstimatorKind::Naive => estimators::naive_gradient(
                &self.x,
                self.config.effective_n,
                &self.rates,
                &self.mp,
                t,
                self.seed,
            )?,
            EstimatorKind::Mlmc => {
                estimators::mlmc_gradient(&self.x, &self.alloc, &self.rates, &self.mp, t, self.seed)?
            }
            EstimatorKind::Delayed => estimators::delayed_gradient(
                t,
                &self.x,
                self.delay.as_mut().expect("delayed estimator owns a delay state"),
                &self.alloc,
                &self.rates,
                &self.mp,
                self.seed,
            )?,
        };
        if let Some(bad) = result.gradient.iter().find(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                t,
                quantity: "gradient",
                value: *bad,
            });
        }
        self.x.sgd_update(self.config.alpha0, &result.gradient);
        self.work += result.work;
        self.span += result.span;
        self.t += 1;
        Ok(result)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trajectory: Vec<TrajectoryPoint>,
    pub final_params: ParamVector,
}

fn record(sgd: &Sgd, eval: &Evaluator) -> Result<TrajectoryPoint> {
    let t = sgd.iteration();
    let (loss, grad) = eval.evaluate(sgd.params())?;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            t,
            quantity: "loss",
            value: loss,
        });
    }
    Ok(TrajectoryPoint {
        t,
        loss_estimate: loss,
        cumulative_work: sgd.cumulative_work(),
        cumulative_span: sgd.cumulative_span(),
        grad_norm_estimate: l2_norm(&grad),
    })
}

/// Runs `config.iterations` SGD steps from the seeded initialization,
/// evaluating at `t = 0`, every `eval_every` steps, and at the end.
pub fn run(config: &SgdConfig, rates: &RateParams, mp: &MarketParams, seed: u64) -> Result<RunOutput> {
    let sgd = Sgd::new(config.clone(), *rates, *mp, seed)?;
    run_from(sgd)
}

pub fn run_from(mut sgd: Sgd) -> Result<RunOutput> {
    let eval = Evaluator::new(sgd.mp, sgd.rates.lmax, sgd.seed, sgd.config.eval_samples);
    let total = sgd.config.iterations;
    let every = sgd.config.eval_every;
    let mut trajectory = vec![record(&sgd, &eval)?];
    while sgd.iteration() < total {
        sgd.step()?;
        let t = sgd.iteration();
        if t.is_multiple_of(every) || t == total {
            trajectory.push(record(&sgd, &eval)?);
        }
    }
    Ok(RunOutput {
        trajectory,
        final_params: sgd.x,
    })
}

/// Largest constant step `min(1/(8 L'), beta_max / L)` with
/// `beta_max = 1 / (12 (lmax + 1) S_d ln(2T + 1))` and
/// `S_d = sum_{l >= 0} 2^{-d l} = 1 / (1 - 2^{-d})`.
pub fn step_size_bound(l_smooth: f64, l_prime: f64, lmax: u32, d: f64, t_total: u64) -> Result<f64> {
    if !(d > 0.0) {
        return Err(Error::domain("d must be > 0 for the geometric sum to converge"));
    }
    if !(l_smooth > 0.0 && l_prime > 0.0) || t_total == 0 {
        return Err(Error::domain("smoothness constants and T must be positive"));
    }
    let geometric = 1.0 / -(-d * std::f64::consts::LN_2).exp_m1();
    let log_term = (2.0 * t_total as f64).ln_1p();
    let beta_max = 1.0 / (12.0 * f64::from(lmax + 1) * geometric * log_term);
    Ok((1.0 / (8.0 * l_prime)).min(beta_max / l_smooth))
}
