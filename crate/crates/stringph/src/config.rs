//! CLI-facing configuration documents (TOML or JSON, unknown keys rejected)
//! and run manifests.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::datagen::DatasetSpec;
use crate::error::{Error, Result};
use crate::eval::StftConfig;
use crate::physics::GroundTruthComponents;
use crate::sav::SavConfig;
use crate::train::TrainConfig;
use crate::types::{ExcitationSpec, GridSpec, PhysicalParams, TimeSpec};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SavSection {
    pub c0: f64,
    pub lambda_dr: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub f_amp: f64,
    pub t_e: f64,
    pub node_e: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub stft: StftConfig,
    /// Search band for the fundamental [Hz].
    pub f0_band: [f64; 2],
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            stft: StftConfig::default(),
            f0_band: [20.0, 2000.0],
        }
    }
}

/// The complete experiment configuration.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub physics: PhysicalParams,
    pub grid: GridSpec,
    pub time: TimeSpec,
    pub sav: SavSection,
    pub dataset: DatasetSpec,
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalSection,
    /// Excitation for the `simulate` command.
    pub sim: SimSection,
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        self.physics.validate()?;
        self.grid.validate()?;
        self.time.validate()?;
        self.dataset.validate()?;
        self.train.validate()?;
        let e = ExcitationSpec {
            f_amp: self.sim.f_amp,
            t_e: self.sim.t_e,
            node_e: self.sim.node_e,
        };
        e.validate(&self.grid)?;
        let _ = self.sav_config()?;
        Ok(())
    }

    pub fn sav_config(&self) -> Result<SavConfig> {
        SavConfig::new(self.sav.c0, self.sav.lambda_dr, self.time.dt())
    }

    pub fn components(&self) -> Result<GroundTruthComponents> {
        GroundTruthComponents::new(self.physics, self.grid)
    }

    pub fn sim_excitation(&self) -> Result<ExcitationSpec> {
        ExcitationSpec::new(self.sim.f_amp, self.sim.t_e, self.sim.node_e, &self.grid)
    }

    /// Content hash of the resolved configuration (canonical JSON).
    pub fn hash(&self) -> Result<String> {
        let json = serde_json::to_vec(self)
            .map_err(|e| Error::format(format!("config encode: {e}")))?;
        Ok(crate::datagen::sha256_hex(&json))
    }
}

/// Parses TOML or JSON by file extension; unknown keys are errors.
pub fn load_config(path: &Path) -> Result<Config> {
    let text = std::fs::read_to_string(path)?;
    let cfg = config_from_str(
        &text,
        path.extension().and_then(|e| e.to_str()).unwrap_or("toml"),
    )?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn config_from_str(text: &str, ext: &str) -> Result<Config> {
    match ext {
        "json" => serde_json::from_str(text)
            .map_err(|e| Error::config(format!("config parse (json): {e}"))),
        _ => toml::from_str(text).map_err(|e| Error::config(format!("config parse (toml): {e}"))),
    }
}

/// Manifest written by every CLI command: inline resolved configuration,
/// content hash, seed, version, timing and produced files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub crate_version: String,
    pub config: Config,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub duration_secs: f64,
    pub outputs: Vec<String>,
    pub extra: serde_json::Value,
}

impl RunManifest {
    pub fn new(command: &str, config: &Config) -> Result<Self> {
        Ok(RunManifest {
            command: command.to_string(),
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            config_hash: config.hash()?,
            seed: None,
            threads: None,
            duration_secs: 0.0,
            outputs: Vec::new(),
            extra: serde_json::Value::Null,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(self)
            .map_err(|e| Error::format(format!("manifest encode: {e}")))?;
        std::fs::write(path, json)?;
        Ok(())
    }
}

pub fn manifest_from_bytes(buf: &[u8]) -> Result<RunManifest> {
    serde_json::from_slice(buf).map_err(|e| Error::format(format!("run manifest decode: {e}")))
}

/// The desk-scale configuration shipped in `configs/desk.toml`, inlined so
/// tests and the acceptance suite do not depend on the working directory.
pub fn desk_config() -> Config {
    Config {
        physics: PhysicalParams {
            rho: 8000.0,
            radius: 4.0018e-4,
            tension: 60.0,
            youngs: 2e11,
            eta0: 0.9,
            eta1: 4e-4,
        },
        grid: GridSpec { n: 32, l0: 1.1 },
        time: TimeSpec {
            fs: 16_000.0,
            ts: 0.25,
        },
        sav: SavSection {
            c0: SavConfig::DEFAULT_C0,
            lambda_dr: SavConfig::DEFAULT_LAMBDA,
        },
        dataset: DatasetSpec {
            n_train: 8,
            n_val: 2,
            n_test: 4,
            t_e_range: [5e-3, 30e-3],
            f_amp_range: [0.1, 5.0],
            master_seed: 20_260_810,
        },
        train: TrainConfig {
            batch_size: 16,
            lr: 2e-3,
            steps: 20_000,
            val_interval: 500,
            val_pairs: 512,
            grad_clip: Some(1e3),
            init_spread: 0.7,
            phnn_hidden: vec![100, 100, 100, 100, 100],
            baseline_hidden: vec![256, 256, 256, 256, 256],
            seeds: vec![1, 2, 3, 4, 5],
        },
        eval: EvalSection {
            stft: StftConfig {
                window: 1024,
                hop: 256,
                floor_db: -120.0,
            },
            f0_band: [20.0, 2000.0],
        },
        sim: SimSection {
            f_amp: 2.0,
            t_e: 0.012,
            node_e: 11,
        },
    }
}

/// Paper-scale configuration (`configs/paper.toml`); compute-heavy, not
/// exercised by CI.
pub fn paper_config() -> Config {
    Config {
        physics: PhysicalParams {
            rho: 8000.0,
            radius: 4.0018e-4,
            tension: 60.0,
            youngs: 2e11,
            eta0: 0.9,
            eta1: 4e-4,
        },
        grid: GridSpec { n: 202, l0: 1.1 },
        time: TimeSpec {
            fs: 88_200.0,
            ts: 2.0,
        },
        sav: SavSection {
            c0: SavConfig::DEFAULT_C0,
            lambda_dr: SavConfig::DEFAULT_LAMBDA,
        },
        dataset: DatasetSpec {
            n_train: 48,
            n_val: 12,
            n_test: 60,
            t_e_range: [5e-3, 30e-3],
            f_amp_range: [0.1, 5.0],
            master_seed: 20_260_810,
        },
        train: TrainConfig {
            batch_size: 128,
            lr: 1e-5,
            steps: 1_000_000,
            val_interval: 5_000,
            val_pairs: 2048,
            grad_clip: None,
            init_spread: 0.7,
            phnn_hidden: vec![100, 100, 100, 100, 100],
            baseline_hidden: vec![256, 256, 256, 256, 256],
            seeds: vec![1, 2, 3, 4, 5],
        },
        eval: EvalSection::default(),
        sim: SimSection {
            f_amp: 2.0,
            t_e: 0.012,
            node_e: 71,
        },
    }
}
