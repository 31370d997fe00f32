use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::fewshot::FewShotConfig;
use crate::learners::{Algorithm, Architecture, Seeds, StreamInputs, TrainerConfig};
use crate::neural::NetShape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// Adapter bottleneck width.
    pub hidden: usize,
    /// Number of residual adapter blocks.
    pub depth: usize,
    /// Hidden width of each generator MLP.
    pub generator_hidden: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            depth: 1,
            generator_hidden: 32,
        }
    }
}

fn default_lambda() -> f64 {
    0.01
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

/// One experiment: which stream, which learner and every knob and seed.
///
/// `manifest` is resolved against the directory of the config file;
/// `output_dir` against the working directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub manifest: PathBuf,
    pub stream: String,
    pub algorithm: Algorithm,
    pub architecture: Architecture,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub trainer: TrainerConfig,
    /// Few-shot evaluation after upstream training; skipped when absent.
    #[serde(default)]
    pub fewshot: Option<FewShotConfig>,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    pub seeds: Seeds,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Bytes the config was parsed from.
    #[serde(skip)]
    pub raw: Vec<u8>,
    #[serde(skip)]
    pub base_dir: PathBuf,
    /// Seed given on the command line in place of `seeds`.
    #[serde(skip)]
    pub seed_override: Option<u64>,
}

impl ExperimentConfig {
    pub fn from_slice(bytes: &[u8], base_dir: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig = serde_json::from_slice(bytes)
            .map_err(|e| Error::InvalidConfig(format!("config: {e}")))?;
        cfg.raw = bytes.to_vec();
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_slice(&bytes, path.parent().unwrap_or(Path::new("")))
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.stream.is_empty() {
            return Err(Error::InvalidConfig("stream id is empty".into()));
        }
        if let Some(f) = &self.fewshot {
            f.validate()?;
        }
        self.inputs().validate()
    }

    pub fn shape(&self) -> NetShape {
        NetShape::new(self.encoder.dim, self.network.hidden, self.network.depth)
    }

    pub fn inputs(&self) -> StreamInputs<'_> {
        StreamInputs {
            algorithm: self.algorithm,
            architecture: self.architecture,
            shape: self.shape(),
            generator_hidden: self.network.generator_hidden,
            trainer: &self.trainer,
            lambda: self.lambda,
            seeds: self.seeds,
        }
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.base_dir.join(&self.manifest)
    }

    /// Bytes stored as the run's config snapshot: the parsed input verbatim,
    /// or the canonical form for configs built in code.
    pub fn snapshot(&self) -> Vec<u8> {
        if self.raw.is_empty() {
            self.canonical()
        } else {
            self.raw.clone()
        }
    }

    /// Compact JSON of every field in declaration order. Seed overrides are
    /// part of it, so they change the hash.
    pub fn canonical(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("config serialises")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical()))
    }

    pub fn run_id(&self) -> String {
        self.hash()[..12].to_string()
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(self.run_id())
    }

    /// Replaces all three seeds with `seed`.
    pub fn override_seed(&mut self, seed: u64) {
        self.seed_override = Some(seed);
        self.seeds = Seeds {
            data: seed,
            init: seed,
            sampler: seed,
        };
    }
}

/// Display name used in report tables, e.g. `BiHNet-Reg`.
pub fn model_label(algorithm: Algorithm, architecture: Architecture) -> String {
    let arch = match architecture {
        Architecture::Adapter => "Adapter",
        Architecture::Bihnet => "BiHNet",
    };
    let alg = match algorithm {
        Algorithm::Single => "Single",
        Algorithm::Vanilla | Algorithm::BihnetVanilla => "Vanilla",
        Algorithm::Multitask | Algorithm::BihnetMultitask => "Multitask",
        Algorithm::Ewc | Algorithm::BihnetEwc => "EWC",
        Algorithm::BihnetReg => "Reg",
    };
    format!("{arch}-{alg}")
}
