//! Experiment configuration: a flat, versioned TOML file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federation::{SyntheticSpec, TrainConfig, WeightRule};
use crate::he::{HEParams, DEFAULT_NOISE_STDDEV, DEFAULT_SLOTS};
use crate::model::{Activation, Architecture};
use crate::protocols::{ProtocolKind, ProtocolParams, SecurityLevel};
use crate::shapley::default_ps_budget;
use crate::sharing::FieldParams;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub seed: u64,
    /// Number of clients `n`.
    pub clients: usize,
    /// Training rounds `T`.
    pub rounds: usize,
    /// Dirichlet concentration of the label-skewed split.
    pub alpha: f64,
    pub train_samples: usize,
    /// Test samples `M`, split among the clients.
    pub test_samples: usize,
    pub local_epochs: usize,
    pub learning_rate: f64,
    pub train_batch: usize,
    pub weight_rule: WeightRule,
    /// Slot count `N`.
    pub slot_count: usize,
    pub noise_stddev: f64,
    pub frac_bits: u32,
    /// Field modulus; omitted picks a Mersenne prime with headroom for `frac_bits`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prime: Option<u64>,
    pub mask_bits: u32,
    pub level: SecurityLevel,
    pub protocols: Vec<ProtocolKind>,
    /// Also run SecSV with SampleSkip whenever SecSV is listed.
    pub skip: bool,
    /// Cap on samples per encrypted batch; omitted uses the largest legal batch.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_batch: Option<usize>,
    /// Permutations for the sampling baseline; omitted uses `n * ceil(ln n)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ps_budget: Option<usize>,
    /// Per-round Beaver triple budget in scalar multiplications.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub triple_budget: Option<u64>,
    pub trace: bool,
    pub output: PathBuf,
    /// Directory of client CSVs written by `gen-data`; omitted generates data.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
    pub data: SyntheticSpec,
    pub architecture: Architecture,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            version: CONFIG_VERSION,
            seed: 7,
            clients: 5,
            rounds: 3,
            alpha: 0.5,
            train_samples: 1000,
            test_samples: 500,
            local_epochs: 2,
            learning_rate: 0.5,
            train_batch: 16,
            weight_rule: WeightRule::TrainSize,
            slot_count: DEFAULT_SLOTS,
            noise_stddev: DEFAULT_NOISE_STDDEV,
            frac_bits: 16,
            prime: None,
            mask_bits: 20,
            level: SecurityLevel::Basic,
            protocols: vec![ProtocolKind::Nssv, ProtocolKind::Hesv, ProtocolKind::Secsv, ProtocolKind::Secretsv],
            skip: true,
            max_batch: None,
            ps_budget: None,
            triple_budget: None,
            trace: false,
            output: PathBuf::from("out"),
            data_dir: None,
            data: SyntheticSpec::Blobs { dim: 10, classes: 4, separation: 1.5 },
            architecture: Architecture::Mlp { hidden_layers: 1, width: 12, activation: Activation::Sigmoid },
        }
    }
}

fn bad(field: &str, reason: impl Into<String>) -> Error {
    Error::Config { field: field.into(), reason: reason.into() }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let field = e.span().map(|s| text[s].trim().to_string()).unwrap_or_default();
            Error::Config { field, reason: e.message().to_string() }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(bad("version", format!("unsupported version {}, expected {CONFIG_VERSION}", self.version)));
        }
        if self.clients < 2 || self.clients > 20 {
            return Err(bad("clients", "must be between 2 and 20"));
        }
        if self.rounds == 0 {
            return Err(bad("rounds", "must be at least 1"));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(bad("alpha", "must be positive"));
        }
        if self.train_samples < self.clients {
            return Err(bad("train_samples", "need at least one sample per client"));
        }
        if self.test_samples < self.clients {
            return Err(bad("test_samples", "need at least one sample per client"));
        }
        if self.local_epochs == 0 {
            return Err(bad("local_epochs", "must be at least 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(bad("learning_rate", "must be positive"));
        }
        if self.train_batch == 0 {
            return Err(bad("train_batch", "must be at least 1"));
        }
        if self.slot_count < 4 || !self.slot_count.is_power_of_two() {
            return Err(bad("slot_count", "must be a power of two of at least 4"));
        }
        if !(self.noise_stddev.is_finite() && self.noise_stddev >= 0.0) {
            return Err(bad("noise_stddev", "must be a non-negative number"));
        }
        self.field()?;
        if self.mask_bits == 0 || self.mask_bits > 40 {
            return Err(bad("mask_bits", "must be between 1 and 40"));
        }
        if self.protocols.is_empty() {
            return Err(bad("protocols", "list at least one protocol"));
        }
        if self.max_batch == Some(0) {
            return Err(bad("max_batch", "must be at least 1"));
        }
        if self.ps_budget == Some(0) {
            return Err(bad("ps_budget", "must be at least 1"));
        }
        let secure = self.protocol_list().iter().any(|&p| p != ProtocolKind::Nssv);
        let min = self.level.min_clients(self.architecture.depth());
        if secure && self.clients < min {
            return Err(bad(
                "clients",
                format!("{:?} security at depth {} needs at least {min}", self.level, self.architecture.depth()),
            ));
        }
        match self.data {
            SyntheticSpec::Blobs { dim, classes, separation } => {
                if dim == 0 || classes < 2 || !(separation.is_finite() && separation > 0.0) {
                    return Err(bad("data", "blobs need dim >= 1, classes >= 2 and positive separation"));
                }
            }
            SyntheticSpec::Images { side, classes, noise } => {
                if side < 3 || classes < 2 || !(noise.is_finite() && noise >= 0.0) {
                    return Err(bad("data", "images need side >= 3, classes >= 2 and non-negative noise"));
                }
            }
        }
        self.architecture
            .layer_specs(self.data.dim(), self.data.classes())
            .map_err(|e| bad("architecture", e.to_string()))?;
        Ok(())
    }

    pub fn field(&self) -> Result<FieldParams> {
        let f = match self.prime {
            Some(p) => FieldParams::new(p as u128, self.frac_bits),
            None => FieldParams::for_frac_bits(self.frac_bits),
        };
        f.map_err(|e| bad(if self.prime.is_some() { "prime" } else { "frac_bits" }, e.to_string()))
    }

    /// Protocols to run, in canonical order, with the skip variant expanded.
    pub fn protocol_list(&self) -> Vec<ProtocolKind> {
        ProtocolKind::ALL
            .into_iter()
            .filter(|k| {
                self.protocols.contains(k)
                    || (*k == ProtocolKind::SecsvSkip && self.skip && self.protocols.contains(&ProtocolKind::Secsv))
            })
            .collect()
    }

    pub fn ps_budget(&self) -> usize {
        self.ps_budget.unwrap_or_else(|| default_ps_budget(self.clients))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            rounds: self.rounds,
            local_epochs: self.local_epochs,
            learning_rate: self.learning_rate,
            batch_size: self.train_batch,
            rule: self.weight_rule,
        }
    }

    pub fn protocol_params(&self) -> Result<ProtocolParams> {
        Ok(ProtocolParams {
            he: HEParams::new(self.slot_count, self.noise_stddev, self.seed)?,
            field: self.field()?,
            level: self.level,
            mask_bits: self.mask_bits,
            triple_budget: self.triple_budget,
            max_batch: self.max_batch,
            seed: self.seed,
            trace: self.trace,
            ..ProtocolParams::default()
        })
    }
}
