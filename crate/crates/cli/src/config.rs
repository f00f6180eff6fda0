//! Flat `key = value` run configuration.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::PathBuf;

use mlmc_grad::nsde::{Drift, GainScheme};
use mlmc_grad::{EstimatorKind, MarketParams, RateParams, SgdConfig};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("config: {0}")]
pub struct ConfigError(pub String);

fn err(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub estimators: Vec<EstimatorKind>,
    pub alpha0: f64,
    pub iterations: u64,
    pub effective_n: u64,
    /// Per-estimator batch overrides; `0` inherits `effective_n`.
    pub effective_n_naive: u64,
    pub effective_n_mlmc: u64,
    pub effective_n_delayed: u64,
    pub eval_every: u64,
    pub eval_samples: u32,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub lmax: u32,
    pub mu: f64,
    pub sigma: f64,
    pub strike: f64,
    pub s0: f64,
    pub drift_proportional: bool,
    pub gain_scheme: GainScheme,
    pub experiment_seed: u64,
    pub output_dir: PathBuf,
    pub fit_level_min: u32,
    pub fit_level_max: u32,
    pub diag_samples: u32,
    /// SGD iterations (standard MLMC) before the diagnostic parameter is taken.
    pub diag_warmup: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let rates = RateParams::default();
        let mp = MarketParams::default();
        Self {
            estimators: EstimatorKind::ALL.to_vec(),
            alpha0: 0.01,
            iterations: 200,
            effective_n: 64,
            effective_n_naive: 0,
            effective_n_mlmc: 0,
            effective_n_delayed: 0,
            eval_every: 20,
            eval_samples: 1000,
            b: rates.b,
            c: rates.c,
            d: rates.d,
            lmax: rates.lmax,
            mu: mp.mu,
            sigma: mp.sigma,
            strike: mp.strike,
            s0: mp.s0,
            drift_proportional: false,
            gain_scheme: GainScheme::Milstein,
            experiment_seed: 1,
            output_dir: PathBuf::from("out"),
            fit_level_min: 2,
            fit_level_max: rates.lmax,
            diag_samples: 1000,
            diag_warmup: 100,
        }
    }
}

pub const KEYS: &[&str] = &[
    "estimators",
    "alpha0",
    "iterations",
    "effective_n",
    "effective_n_naive",
    "effective_n_mlmc",
    "effective_n_delayed",
    "eval_every",
    "eval_samples",
    "b",
    "c",
    "d",
    "lmax",
    "mu",
    "sigma",
    "strike",
    "s0",
    "drift_proportional",
    "gain_scheme",
    "experiment_seed",
    "output_dir",
    "fit_level_min",
    "fit_level_max",
    "diag_samples",
    "diag_warmup",
];

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value
        .parse()
        .map_err(|_| err(format!("{key}: cannot parse '{value}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(err(format!("{key}: expected true/false, got '{value}'"))),
    }
}

fn gain_name(g: GainScheme) -> &'static str {
    match g {
        GainScheme::Milstein => "milstein",
        GainScheme::LeftPoint => "left_point",
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        match key.trim() {
            "estimators" => {
                let list = v
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| s.parse::<EstimatorKind>().map_err(|e| err(e.to_string())))
                    .collect::<Result<Vec<_>, _>>()?;
                self.estimators = list;
            }
            "alpha0" => self.alpha0 = parse_num(key, v)?,
            "iterations" => self.iterations = parse_num(key, v)?,
            "effective_n" => self.effective_n = parse_num(key, v)?,
            "effective_n_naive" => self.effective_n_naive = parse_num(key, v)?,
            "effective_n_mlmc" => self.effective_n_mlmc = parse_num(key, v)?,
            "effective_n_delayed" => self.effective_n_delayed = parse_num(key, v)?,
            "eval_every" => self.eval_every = parse_num(key, v)?,
            "eval_samples" => self.eval_samples = parse_num(key, v)?,
            "b" => self.b = parse_num(key, v)?,
            "c" => self.c = parse_num(key, v)?,
            "d" => self.d = parse_num(key, v)?,
            "lmax" => self.lmax = parse_num(key, v)?,
            "mu" => self.mu = parse_num(key, v)?,
            "sigma" => self.sigma = parse_num(key, v)?,
            "strike" => self.strike = parse_num(key, v)?,
            "s0" => self.s0 = parse_num(key, v)?,
            "drift_proportional" => self.drift_proportional = parse_bool(key, v)?,
            "gain_scheme" => {
                self.gain_scheme = match v {
                    "milstein" => GainScheme::Milstein,
                    "left_point" => GainScheme::LeftPoint,
                    _ => return Err(err(format!("gain_scheme: expected milstein or left_point, got '{v}'"))),
                }
            }
            "experiment_seed" => self.experiment_seed = parse_num(key, v)?,
            "output_dir" => self.output_dir = PathBuf::from(v),
            "fit_level_min" => self.fit_level_min = parse_num(key, v)?,
            "fit_level_max" => self.fit_level_max = parse_num(key, v)?,
            "diag_samples" => self.diag_samples = parse_num(key, v)?,
            "diag_warmup" => self.diag_warmup = parse_num(key, v)?,
            other => return Err(err(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        let mut seen = BTreeSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("line {}: expected key = value", lineno + 1)))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(err(format!("line {}: duplicate key '{key}'", lineno + 1)));
            }
            self.set(key, value)
                .map_err(|e| err(format!("line {}: {}", lineno + 1, e.0)))?;
        }
        Ok(())
    }

    /// Applies a `key=value` command-line override.
    pub fn apply_override(&mut self, pair: &str) -> Result<(), ConfigError> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| err(format!("override '{pair}' is not key=value")))?;
        self.set(k, v)
    }

    pub fn rates(&self) -> RateParams {
        RateParams {
            b: self.b,
            c: self.c,
            d: self.d,
            lmax: self.lmax,
        }
    }

    pub fn market(&self) -> MarketParams {
        MarketParams {
            mu: self.mu,
            sigma: self.sigma,
            strike: self.strike,
            s0: self.s0,
            drift: if self.drift_proportional {
                Drift::Proportional
            } else {
                Drift::Additive
            },
            gain: self.gain_scheme,
        }
    }

    pub fn batch_for(&self, kind: EstimatorKind) -> u64 {
        let o = match kind {
            EstimatorKind::Naive => self.effective_n_naive,
            EstimatorKind::Mlmc => self.effective_n_mlmc,
            EstimatorKind::Delayed => self.effective_n_delayed,
        };
        if o == 0 {
            self.effective_n
        } else {
            o
        }
    }

    pub fn sgd(&self, kind: EstimatorKind) -> SgdConfig {
        SgdConfig {
            estimator: kind,
            alpha0: self.alpha0,
            iterations: self.iterations,
            effective_n: self.batch_for(kind),
            eval_every: self.eval_every,
            eval_samples: self.eval_samples,
        }
    }

    pub fn fit_levels(&self) -> (u32, u32) {
        (self.fit_level_min, self.fit_level_max)
    }

    /// Everything `run` needs; `alloc` only checks the rate keys.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.validate_rates()?;
        self.market().validate().map_err(|e| err(e.to_string()))?;
        if self.estimators.is_empty() {
            return Err(err("estimators: at least one estimator required"));
        }
        if !(self.alpha0 > 0.0 && self.alpha0.is_finite()) {
            return Err(err("alpha0 must be > 0"));
        }
        for kind in EstimatorKind::ALL {
            self.sgd(kind).validate().map_err(|e| err(e.to_string()))?;
        }
        Ok(())
    }

    /// [`validate`](Self::validate) plus the diagnostic fit range.
    pub fn validate_diag(&self) -> Result<(), ConfigError> {
        self.validate()?;
        if self.fit_level_max > self.lmax || self.fit_level_min + 2 > self.fit_level_max {
            return Err(err(format!(
                "fit levels {}..{} must span at least 3 levels within 0..{}",
                self.fit_level_min, self.fit_level_max, self.lmax
            )));
        }
        if self.diag_samples < 2 {
            return Err(err("diag_samples must be >= 2"));
        }
        Ok(())
    }

    pub fn validate_rates(&self) -> Result<(), ConfigError> {
        self.rates().validate().map_err(|e| err(e.to_string()))?;
        if self.effective_n < 1 {
            return Err(err("effective_n must be >= 1"));
        }
        Ok(())
    }

    /// Canonical text form; parsing it back reproduces `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let est: Vec<&str> = self.estimators.iter().map(|e| e.as_str()).collect();
        let _ = writeln!(s, "estimators = {}", est.join(","));
        let _ = writeln!(s, "alpha0 = {}", self.alpha0);
        let _ = writeln!(s, "iterations = {}", self.iterations);
        let _ = writeln!(s, "effective_n = {}", self.effective_n);
        let _ = writeln!(s, "effective_n_naive = {}", self.effective_n_naive);
        let _ = writeln!(s, "effective_n_mlmc = {}", self.effective_n_mlmc);
        let _ = writeln!(s, "effective_n_delayed = {}", self.effective_n_delayed);
        let _ = writeln!(s, "eval_every = {}", self.eval_every);
        let _ = writeln!(s, "eval_samples = {}", self.eval_samples);
        let _ = writeln!(s, "b = {}", self.b);
        let _ = writeln!(s, "c = {}", self.c);
        let _ = writeln!(s, "d = {}", self.d);
        let _ = writeln!(s, "lmax = {}", self.lmax);
        let _ = writeln!(s, "mu = {}", self.mu);
        let _ = writeln!(s, "sigma = {}", self.sigma);
        let _ = writeln!(s, "strike = {}", self.strike);
        let _ = writeln!(s, "s0 = {}", self.s0);
        let _ = writeln!(s, "drift_proportional = {}", self.drift_proportional);
        let _ = writeln!(s, "gain_scheme = {}", gain_name(self.gain_scheme));
        let _ = writeln!(s, "experiment_seed = {}", self.experiment_seed);
        let _ = writeln!(s, "output_dir = {}", self.output_dir.display());
        let _ = writeln!(s, "fit_level_min = {}", self.fit_level_min);
        let _ = writeln!(s, "fit_level_max = {}", self.fit_level_max);
        let _ = writeln!(s, "diag_samples = {}", self.diag_samples);
        let _ = writeln!(s, "diag_warmup = {}", self.diag_warmup);
        s
    }
}
