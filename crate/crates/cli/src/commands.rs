use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use mlmc_grad::diagnostics::{self, DecayEstimate, LevelStat};
use mlmc_grad::estimators::{self, coupled_sample_cost};
use mlmc_grad::optimizer::{self, Sgd};
use mlmc_grad::paths::mix_seed;
use mlmc_grad::{EstimatorKind, TrajectoryPoint};

use crate::config::{ConfigError, RunConfig};

const DIAG_SEED_TAG: u64 = 0xD1A6;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("run aborted: {0}")]
    Aborted(mlmc_grad::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Aborted(_) => 3,
            CliError::Io { .. } => 1,
        }
    }
}

impl From<mlmc_grad::Error> for CliError {
    fn from(e: mlmc_grad::Error) -> Self {
        match e {
            mlmc_grad::Error::Domain(msg) => CliError::Config(ConfigError(msg)),
            other => CliError::Aborted(other),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Defaults, then the config file, then `--set` overrides in order.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(p) = path {
        let text = fs::read_to_string(p).map_err(|e| ConfigError(format!("{}: {e}", p.display())))?;
        cfg.apply_text(&text)?;
    }
    for o in overrides {
        cfg.apply_override(o)?;
    }
    Ok(cfg)
}

fn write_outputs(dir: &Path, files: &[(String, String)]) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (name, body) in files {
        let path = dir.join(name);
        fs::write(&path, body).map_err(io_err(&path))?;
    }
    Ok(())
}

pub fn curve_csv(points: &[TrajectoryPoint]) -> String {
    let mut s = String::from("t,loss,grad_norm,work,span\n");
    for p in points {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            p.t, p.loss_estimate, p.grad_norm_estimate, p.cumulative_work, p.cumulative_span
        );
    }
    s
}

pub fn decay_csv(est: &DecayEstimate) -> String {
    let mut s = String::from("level,mean,std\n");
    for st in &est.per_level {
        let _ = writeln!(s, "{},{},{}", st.level, st.mean, st.std);
    }
    let rate = match est.fitted_rate {
        Some(r) => r.to_string(),
        None => "degenerate".to_string(),
    };
    let _ = writeln!(s, "# fitted_rate={rate} levels={}..{}", est.fit_levels.0, est.fit_levels.1);
    s
}

/// Runs every requested estimator; returns the files written.
pub fn cmd_run(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    cfg.validate()?;
    let rates = cfg.rates();
    let mp = cfg.market();
    let mut files = vec![("manifest.txt".to_string(), cfg.to_text())];
    for &kind in &cfg.estimators {
        info!("running {kind} for {} iterations", cfg.iterations);
        let out = optimizer::run(&cfg.sgd(kind), &rates, &mp, cfg.experiment_seed)?;
        files.push((format!("curve_{}.csv", kind.as_str()), curve_csv(&out.trajectory)));
    }
    write_outputs(&cfg.output_dir, &files)?;
    Ok(files.into_iter().map(|(n, _)| cfg.output_dir.join(n)).collect())
}

fn zero_decay(levels: std::ops::RangeInclusive<u32>, fit_levels: (u32, u32)) -> DecayEstimate {
    DecayEstimate {
        per_level: levels.map(|level| LevelStat { level, mean: 0.0, std: 0.0 }).collect(),
        fitted_rate: None,
        fit_levels,
    }
}

/// Decay diagnostics at a parameter taken after `diag_warmup` MLMC steps.
pub fn cmd_diag(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    cfg.validate_diag()?;
    let rates = cfg.rates();
    let mp = cfg.market();
    let mut sgd = Sgd::new(cfg.sgd(EstimatorKind::Mlmc), rates, mp, cfg.experiment_seed)?;
    for _ in 0..cfg.diag_warmup {
        sgd.step()?;
    }
    let x_t = sgd.params().clone();
    sgd.step()?;
    let x_next = sgd.params().clone();

    let seed = mix_seed(cfg.experiment_seed, DIAG_SEED_TAG);
    let fit = cfg.fit_levels();
    info!("gradient-norm decay over {} samples", cfg.diag_samples);
    let variance = diagnostics::grad_norm_decay(&x_t, cfg.diag_samples, &rates, &mp, seed, fit)?;
    // A zero step leaves nothing to difference, which only happens when every
    // sampled gradient vanishes.
    let smoothness = if x_t == x_next {
        zero_decay(rates.levels(), fit)
    } else {
        diagnostics::smoothness_decay(&x_t, &x_next, cfg.diag_samples, &rates, &mp, seed, fit)?
    };
    let files = vec![
        ("decay_variance.csv".to_string(), decay_csv(&variance)),
        ("decay_smoothness.csv".to_string(), decay_csv(&smoothness)),
    ];
    write_outputs(&cfg.output_dir, &files)?;
    Ok(files.into_iter().map(|(n, _)| cfg.output_dir.join(n)).collect())
}

/// `level,N_level,per_sample_steps,level_work` lines for `effective_n`.
pub fn cmd_alloc(cfg: &RunConfig) -> Result<String, CliError> {
    cfg.validate_rates()?;
    let rates = cfg.rates();
    let alloc = estimators::allocate(cfg.effective_n, &rates)?;
    let mut s = String::new();
    for level in rates.levels() {
        let n = alloc.count(level);
        let steps = coupled_sample_cost(level);
        let _ = writeln!(s, "{level},{n},{steps},{}", n * steps);
    }
    Ok(s)
}
