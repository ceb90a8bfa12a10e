//! Run configuration, hashing and artifact manifests.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::meshgraph::{gen_bimodal, gen_quasiperiodic, Dataset, MeshError};
use crate::sar::{DenoisingSchedule, SarConfig, SarTrainConfig};
use crate::vae::{VaeConfig, VaeTrainConfig};
use crate::{Error, Result};

/// Environment variable naming the directory searched for relative config
/// paths and for the default `sarmesh.json`.
pub const CONFIG_DIR_ENV: &str = "SAR_CONFIG_DIR";
pub const DEFAULT_CONFIG_NAME: &str = "sarmesh.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataKind {
    Quasiperiodic,
    Bimodal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub kind: DataKind,
    pub nx: usize,
    pub ny: usize,
    /// Amplitude `a` (quasi-periodic) or mode height `m` (bimodal).
    pub amplitude: f64,
    /// Per-node noise of the bimodal generator.
    pub noise: f64,
    pub snapshots: usize,
    pub heldout_snapshots: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            kind: DataKind::Quasiperiodic,
            nx: 8,
            ny: 8,
            amplitude: 1.0,
            noise: 0.05,
            snapshots: 512,
            heldout_snapshots: 200,
            seed: 7,
        }
    }
}

impl DataConfig {
    /// Raw (unnormalized) training and held-out sets.
    pub fn generate(&self) -> Result<(Dataset, Dataset)> {
        let make = |n, seed| -> std::result::Result<Dataset, MeshError> {
            match self.kind {
                DataKind::Quasiperiodic => gen_quasiperiodic(self.nx, self.ny, self.amplitude, n, seed),
                DataKind::Bimodal => gen_bimodal(self.nx, self.ny, self.amplitude, self.noise, n, seed),
            }
        };
        let heldout_seed = self.seed ^ 0x5EED_0000_0000_0001;
        Ok((
            make(self.snapshots, self.seed)?,
            make(self.heldout_snapshots, heldout_seed)?,
        ))
    }
}

/// Model sizes under their table names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(rename = "F_model")]
    pub f_model: usize,
    #[serde(rename = "F_emb")]
    pub f_emb: usize,
    #[serde(rename = "F_VAE")]
    pub f_vae: usize,
    #[serde(rename = "F_L")]
    pub f_l: usize,
    #[serde(rename = "L_cond")]
    pub l_cond: usize,
    #[serde(rename = "L_AR")]
    pub l_ar: usize,
    #[serde(rename = "L_sampler")]
    pub l_sampler: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub heads: usize,
    pub slices: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            f_model: 128,
            f_emb: 128,
            f_vae: 128,
            f_l: 1,
            l_cond: 2,
            l_ar: 2,
            l_sampler: 2,
            k: 3,
            heads: 4,
            slices: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    pub latent: bool,
    pub nodewise_sampler: bool,
    pub cond_encoder: bool,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            latent: true,
            nodewise_sampler: false,
            cond_encoder: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    pub steps_per_scale: Vec<usize>,
    pub num_samples: usize,
    pub bench_schedules: Vec<Vec<usize>>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            steps_per_scale: vec![10, 6, 1],
            num_samples: 200,
            bench_schedules: vec![vec![10, 10, 10], vec![10, 6, 1]],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: usize,
    /// Only `"f64"` is supported.
    pub precision: String,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub ablation: AblationConfig,
    pub vae_train: VaeTrainConfig,
    pub sar_train: SarTrainConfig,
    pub sampling: SamplingConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: 1,
            precision: "f64".into(),
            out_dir: PathBuf::from("sarmesh-run"),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            ablation: AblationConfig::default(),
            vae_train: VaeTrainConfig::default(),
            sar_train: SarTrainConfig::default(),
            sampling: SamplingConfig::default(),
        }
    }
}

/// Reads either a plain config or the `config` field of a manifest.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let inner = match value.get("config_hash") {
        Some(_) => value
            .get("config")
            .cloned()
            .ok_or_else(|| Error::Config("manifest without a config".into()))?,
        None => value,
    };
    let cfg: RunConfig =
        serde_json::from_value(inner).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Resolves a relative config path against `SAR_CONFIG_DIR` when the path
/// does not exist as given.
pub fn resolve_config_path(path: &Path) -> PathBuf {
    if path.is_relative() && !path.exists() {
        if let Ok(dir) = std::env::var(CONFIG_DIR_ENV) {
            return Path::new(&dir).join(path);
        }
    }
    path.to_path_buf()
}

/// Default config location inside `SAR_CONFIG_DIR`, if that file exists.
pub fn default_config_path() -> Option<PathBuf> {
    let dir = std::env::var(CONFIG_DIR_ENV).ok()?;
    let p = Path::new(&dir).join(DEFAULT_CONFIG_NAME);
    p.exists().then_some(p)
}

fn sha256_hex(value: &impl Serialize) -> String {
    let bytes = serde_json::to_vec(value).expect("config serializes");
    hex::encode(Sha256::digest(&bytes))
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.precision != "f64" {
            return Err(Error::Config(format!("unsupported precision '{}'", self.precision)));
        }
        if self.threads == 0 {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        if self.data.nx < 2 || self.data.ny < 2 || self.data.snapshots == 0 {
            return Err(Error::Config("data grid needs nx, ny >= 2 and snapshots > 0".into()));
        }
        if !(self.data.amplitude > 0.0) {
            return Err(Error::Config("data amplitude must be positive".into()));
        }
        if self.sampling.num_samples == 0 {
            return Err(Error::Config("num_samples must be positive".into()));
        }
        let schedule = DenoisingSchedule::new(self.sampling.steps_per_scale.clone())?;
        schedule.check_scales(self.model.k)?;
        for s in &self.sampling.bench_schedules {
            DenoisingSchedule::new(s.clone())?.check_scales(self.model.k)?;
        }
        self.vae_config(1, 2).validate()?;
        self.sar_config(1, 2, 1).validate()?;
        Ok(())
    }

    /// Hash of everything.
    pub fn config_hash(&self) -> String {
        sha256_hex(self)
    }

    /// Hash of the settings that determine the VAE's parameters.
    pub fn vae_hash(&self) -> String {
        sha256_hex(&(&self.data, self.model.f_vae, self.model.f_l, &self.vae_train, self.seed))
    }

    /// Hash of the settings that determine the SAR model's parameters.
    pub fn sar_hash(&self) -> String {
        let vae = self.ablation.latent.then(|| self.vae_hash());
        sha256_hex(&(&self.data, &self.model, &self.ablation, &self.sar_train, self.seed, vae))
    }

    pub fn schedule(&self) -> Result<DenoisingSchedule> {
        DenoisingSchedule::new(self.sampling.steps_per_scale.clone())
    }

    pub fn vae_config(&self, channels: usize, dim: usize) -> VaeConfig {
        VaeConfig {
            channels,
            dim,
            width: self.model.f_vae,
            latent: self.model.f_l,
            seed: self.seed,
        }
    }

    pub fn sar_config(&self, physical_channels: usize, dim: usize, num_conditions: usize) -> SarConfig {
        let m = &self.model;
        SarConfig {
            channels: if self.ablation.latent { m.f_l } else { physical_channels },
            dim,
            num_conditions,
            num_scales: m.k,
            width: m.f_model,
            emb_width: m.f_emb,
            heads: m.heads,
            slices: m.slices,
            cond_layers: m.l_cond,
            ar_layers: m.l_ar,
            sampler_layers: m.l_sampler,
            latent_mode: self.ablation.latent,
            nodewise_sampler: self.ablation.nodewise_sampler,
            cond_encoder: self.ablation.cond_encoder,
            seed: self.seed,
        }
    }
}

/// Written next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub outputs: Vec<PathBuf>,
    pub config: RunConfig,
}

impl RunManifest {
    pub fn new(command: &str, config: &RunConfig, outputs: Vec<PathBuf>) -> Self {
        Self {
            command: command.to_string(),
            config_hash: config.config_hash(),
            seed: config.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            outputs,
            config: config.clone(),
        }
    }

    pub fn path(out_dir: &Path, command: &str) -> PathBuf {
        out_dir.join(format!("{command}.manifest.json"))
    }

    pub fn write(&self, out_dir: &Path) -> Result<PathBuf> {
        let p = Self::path(out_dir, &self.command);
        fs::write(&p, serde_json::to_string_pretty(self)?)?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_roundtrip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let text = serde_json::to_string(&c).unwrap();
        assert!(text.contains("\"F_model\":128"));
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.config_hash(), c.config_hash());
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut v = serde_json::to_value(RunConfig::default()).unwrap();
        v["model"]["F_extra"] = 1.into();
        assert!(serde_json::from_value::<RunConfig>(v).is_err());
    }

    #[test]
    fn schedule_length_checked() {
        let mut c = RunConfig::default();
        c.sampling.steps_per_scale = vec![3, 3];
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn sampling_changes_do_not_touch_model_hash() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.sampling.num_samples = 7;
        assert_eq!(a.sar_hash(), b.sar_hash());
        assert_ne!(a.config_hash(), b.config_hash());
    }
}
