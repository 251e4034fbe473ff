//! Run configuration: defaults, a TOML file, and command-line flags.
//!
//! Precedence is flags > config file > `PHYSKIT_SEED` (seed only) > defaults.

use std::fs;
use std::path::Path;

use clap::Args;
use physkit::aggregator::TimeAxis;
use physkit::dds::{DdsConfig, STD_EPS};
use physkit::pipeline::{HeadKind, PipelineConfig, TrainConfig};
use physkit::signal::DatasetSpec;
use physkit::wavelet::WaveletKind;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SEED_ENV: &str = "PHYSKIT_SEED";

/// Every tunable. Field names double as config-file keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    // dds
    pub alpha: f64,
    pub beta: f64,
    pub level: usize,
    pub basis: String,
    pub max_lag: usize,
    // model
    pub dim: usize,
    pub heads: usize,
    pub vocab: usize,
    pub protos: usize,
    pub prompt_len: usize,
    pub l_target: usize,
    pub time_axis: String,
    pub patch: usize,
    pub stride: usize,
    pub layers: usize,
    pub head: String,
    // data
    pub count: usize,
    pub fs: f64,
    pub len: usize,
    pub snr_db: f64,
    // training
    pub lr: f64,
    pub weight_decay: f64,
    pub batch: usize,
    pub steps: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = PipelineConfig::default();
        let t = TrainConfig::default();
        let d = DatasetSpec::default();
        RunConfig {
            seed: 0,
            alpha: p.dds.alpha,
            beta: 0.5,
            level: p.dds.level,
            basis: p.dds.basis.name().into(),
            max_lag: 10,
            dim: p.dim,
            heads: p.heads,
            vocab: p.vocab,
            protos: p.protos,
            prompt_len: p.prompt_len,
            l_target: p.l_target,
            time_axis: "compress".into(),
            patch: p.patch,
            stride: p.stride,
            layers: p.layers,
            head: "flatten-signal".into(),
            count: d.count,
            fs: d.fs,
            len: p.time_len,
            snr_db: d.snr_db,
            lr: t.lr,
            weight_decay: t.weight_decay,
            batch: t.batch,
            steps: t.steps,
        }
    }
}

/// Flags accepted by every command.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// TOML file with any of the run-configuration keys
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<std::path::PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// EMA smoothing factor in (0, 1]
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// Blend weight between time and frequency branches in [0, 1]
    #[arg(long, global = true)]
    pub beta: Option<f64>,
    /// Wavelet decomposition depth
    #[arg(long, global = true)]
    pub level: Option<usize>,
    #[arg(long, global = true, value_parser = ["haar", "db4"])]
    pub basis: Option<String>,
    #[arg(long = "l-target", global = true)]
    pub l_target: Option<usize>,
    #[arg(long = "prompt-len", global = true)]
    pub prompt_len: Option<usize>,
    /// Prototype count V'
    #[arg(long, global = true)]
    pub protos: Option<usize>,
    /// Signal-to-noise ratio in dB; `inf` for clean clips
    #[arg(long, global = true, value_name = "DB")]
    pub snr: Option<f64>,
    #[arg(long, global = true)]
    pub steps: Option<usize>,
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<std::path::PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(1, |s| text[..s.start].matches('\n').count() + 1);
            CliError::Config(format!("line {line}: {}", e.message()))
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config is always serializable")
    }

    /// Resolves the effective configuration for one invocation.
    pub fn resolve(flags: &Flags, env_seed: Option<&str>) -> Result<Self, CliError> {
        let file = match &flags.config {
            Some(path) => Some(fs::read_to_string(path).map_err(|e| CliError::io(path, e))?),
            None => None,
        };
        let file_sets_seed = file
            .as_deref()
            .map(|t| t.parse::<toml::Table>().map(|t| t.contains_key("seed")).unwrap_or(false))
            .unwrap_or(false);
        let mut cfg = match file {
            Some(text) => Self::from_toml(&text)?,
            None => RunConfig::default(),
        };
        if !file_sets_seed {
            if let Some(raw) = env_seed {
                cfg.seed = raw
                    .trim()
                    .parse()
                    .map_err(|_| CliError::Config(format!("{SEED_ENV}={raw:?} is not an unsigned integer")))?;
            }
        }
        macro_rules! apply {
            ($($field:ident <- $flag:ident),* $(,)?) => {
                $(if let Some(v) = flags.$flag.clone() { cfg.$field = v; })*
            };
        }
        apply!(
            seed <- seed,
            alpha <- alpha,
            beta <- beta,
            level <- level,
            basis <- basis,
            l_target <- l_target,
            prompt_len <- prompt_len,
            protos <- protos,
            snr_db <- snr,
            steps <- steps,
        );
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.dds_config()?;
        self.head_kind()?;
        self.time_axis_mode()?;
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(CliError::Config(format!("beta must lie in [0, 1], got {}", self.beta)));
        }
        if self.snr_db.is_nan() || self.fs.is_nan() || self.fs <= 0.0 {
            return Err(CliError::Config("snr_db must be a number and fs > 0".into()));
        }
        Ok(())
    }

    pub fn dds_config(&self) -> Result<DdsConfig, CliError> {
        let cfg = DdsConfig {
            alpha: self.alpha,
            eps: STD_EPS,
            level: self.level,
            basis: self.basis.parse::<WaveletKind>()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn head_kind(&self) -> Result<HeadKind, CliError> {
        Ok(self.head.parse()?)
    }

    pub fn time_axis_mode(&self) -> Result<TimeAxis, CliError> {
        Ok(self.time_axis.parse()?)
    }

    pub fn pipeline_config(&self) -> Result<PipelineConfig, CliError> {
        let cfg = PipelineConfig {
            dim: self.dim,
            heads: self.heads,
            vocab: self.vocab,
            protos: self.protos,
            prompt_len: self.prompt_len,
            l_target: self.l_target,
            time_len: self.len,
            patch: self.patch,
            stride: self.stride,
            layers: self.layers,
            dds: self.dds_config()?,
            time_axis: self.time_axis_mode()?,
            head: self.head_kind()?,
            ..PipelineConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            batch: self.batch,
            steps: self.steps,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        DatasetSpec {
            count: self.count,
            fs: self.fs,
            len: self.len,
            snr_db: self.snr_db,
            seed: self.seed,
        }
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flags() -> Flags {
        Flags::default()
    }

    #[test]
    fn defaults_echo_training_settings() {
        let c = RunConfig::default();
        assert_eq!((c.alpha, c.level, c.l_target, c.len), (0.8, 3, 32, 128));
        assert_eq!((c.lr, c.weight_decay, c.batch), (1e-4, 5e-5, 4));
        assert_eq!((c.count, c.fs), (64, 30.0));
    }

    #[test]
    fn precedence_flags_over_file_over_env_over_default() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "alpha = 0.5\nsteps = 7\n").unwrap();

        assert_eq!(RunConfig::resolve(&flags(), None).unwrap().seed, 0);
        assert_eq!(RunConfig::resolve(&flags(), Some("41")).unwrap().seed, 41);

        let mut f = flags();
        f.config = Some(path.clone());
        let c = RunConfig::resolve(&f, Some("41")).unwrap();
        assert_eq!((c.alpha, c.steps, c.seed, c.level), (0.5, 7, 41, 3));

        fs::write(&path, "alpha = 0.5\nseed = 9\n").unwrap();
        assert_eq!(RunConfig::resolve(&f, Some("41")).unwrap().seed, 9);

        f.alpha = Some(0.25);
        f.seed = Some(3);
        let c = RunConfig::resolve(&f, Some("41")).unwrap();
        assert_eq!((c.alpha, c.seed), (0.25, 3));
    }

    #[test]
    fn bad_config_is_rejected() {
        let err = RunConfig::from_toml("alpha = 0.5\nalhpa = 0.2\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        let mut f = flags();
        f.alpha = Some(1.5);
        assert!(RunConfig::resolve(&f, None).is_err());
        assert!(RunConfig::resolve(&flags(), Some("x")).is_err());
    }

    #[test]
    fn config_round_trips_through_toml() {
        let c = RunConfig {
            snr_db: f64::INFINITY,
            ..RunConfig::default()
        };
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }
}
