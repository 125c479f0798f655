//! Flat key-value run configuration.

use std::fs;
use std::path::{Path, PathBuf};

use contiguard::enrich::{EnricherConfig, GateMode};
use contiguard::harness::desk::{DeskSetup, ReferenceKind};
use contiguard::harness::ExperimentConfig;
use contiguard::model::{Ablation, AdamWConfig, Components, EncoderConfig, ModelConfig, TrainConfig};
use contiguard::perturb::{Lexicons, PerturbationKind};
use contiguard::replay::LossWeights;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Name of the resolved configuration written into every output directory.
pub const RESOLVED_NAME: &str = "config.toml";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{0}")]
    Parse(String),
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("invalid value for `{key}`: {message}")]
    Invalid { key: &'static str, message: String },
    #[error("override `{0}` is not of the form key=value")]
    Override(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Enriched dataset (JSON Lines). Empty builds the synthetic corpus in memory.
    pub dataset: String,
    /// Raw labelled text for `build-dataset`.
    pub raw: String,
    /// Word list for the spell checker; empty accepts every word.
    pub dictionary: String,
    /// Directory of lexicon files; empty uses the bundled tables.
    pub lexicon_dir: String,
    pub out_dir: String,
    /// Auxiliary-information cache (JSON Lines).
    pub cache: String,

    pub seed: u64,
    pub seeds: Vec<u64>,
    pub kinds: Vec<String>,
    /// `default` (four orders), `identity`, or a comma-separated kind list.
    pub order: String,
    pub workers: usize,

    pub dim: usize,
    pub buckets: usize,
    pub min_n: usize,
    pub max_n: usize,
    pub max_chars: usize,
    pub hidden: usize,
    pub gate_mode: String,
    pub embed_init: f64,

    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub ig_steps: usize,
    pub relearn_cycles: usize,
    pub memory_ratio: usize,
    pub memory_k: usize,
    /// Switched-off terms, e.g. `["wo_aux"]`.
    pub ablations: Vec<String>,

    pub rate: f64,
    pub quota: usize,
    pub per_class: usize,
    pub reference: String,
    pub edits_per_token: usize,
    pub distract_len: usize,

    pub llm_url: String,
    pub llm_model: String,
    pub llm_parallelism: usize,
    pub llm_max_retries: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        let train = TrainConfig::default();
        let desk = DeskSetup::default();
        let enrich = EnricherConfig::default();
        Self {
            dataset: String::new(),
            raw: String::new(),
            dictionary: String::new(),
            lexicon_dir: String::new(),
            out_dir: "results".into(),
            cache: String::new(),
            seed: 0,
            seeds: vec![0],
            kinds: desk.kinds.iter().map(|k| k.name().to_string()).collect(),
            order: "identity".into(),
            workers: 1,
            dim: model.encoder.dim,
            buckets: model.encoder.buckets,
            min_n: model.encoder.min_n,
            max_n: model.encoder.max_n,
            max_chars: model.encoder.max_chars,
            hidden: model.hidden,
            gate_mode: "full".into(),
            embed_init: model.embed_init,
            learning_rate: train.optimizer.learning_rate,
            weight_decay: train.optimizer.weight_decay,
            batch_size: train.batch_size,
            max_epochs: train.max_epochs,
            patience: train.patience,
            lambda: train.weights.lambda,
            gamma: train.weights.gamma,
            ig_steps: train.ig_steps,
            relearn_cycles: train.relearn_cycles,
            memory_ratio: train.memory_ratio,
            memory_k: ExperimentConfig::default().memory_k,
            ablations: Vec::new(),
            rate: desk.rate,
            quota: desk.per_kind_quota,
            per_class: desk.per_class,
            reference: "keyword".into(),
            edits_per_token: desk.edits_per_token,
            distract_len: desk.distract_len,
            llm_url: String::new(),
            llm_model: "gpt-4o-mini".into(),
            llm_parallelism: enrich.parallelism,
            llm_max_retries: enrich.max_retries,
        }
    }
}

fn invalid(key: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key,
        message: message.into(),
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string().trim_end().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text).map_err(|e| ConfigError::Parse(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    /// Applies `key=value`; the value is read as a TOML literal, or as a
    /// bare string when it is not one.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| ConfigError::Override(assignment.to_string()))?;
        let key = key.trim();
        let raw = raw.trim();
        let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        let mut table = toml::Table::try_from(&*self).expect("flat config serializes");
        let Some(slot) = table.get_mut(key) else {
            return Err(ConfigError::UnknownKey(key.to_string()));
        };
        let previous = std::mem::replace(slot, value);
        *self = table
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(format!("`{key}`: {}", e.message())))?;
        log::info!("override {key} = {raw} (was {previous})");
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.experiment()?;
        self.components()?;
        self.kinds()?;
        self.desk_setup()?;
        if self.seeds.is_empty() {
            return Err(invalid("seeds", "at least one seed is required"));
        }
        if self.workers == 0 {
            return Err(invalid("workers", "must be at least 1"));
        }
        if self.llm_parallelism == 0 {
            return Err(invalid("llm_parallelism", "must be at least 1"));
        }
        Ok(())
    }

    pub fn kinds(&self) -> Result<Vec<PerturbationKind>, ConfigError> {
        if self.kinds.is_empty() {
            return Err(invalid("kinds", "at least one perturbation kind is required"));
        }
        self.kinds
            .iter()
            .map(|k| k.parse().map_err(|e: contiguard::perturb::PerturbError| invalid("kinds", e.to_string())))
            .collect()
    }

    /// Named orders over the configured kinds.
    pub fn orders(&self) -> Result<Vec<(String, Vec<PerturbationKind>)>, ConfigError> {
        let kinds = self.kinds()?;
        match self.order.as_str() {
            "default" => Ok(contiguard::harness::default_orders(&kinds, self.seed)),
            "identity" => Ok(vec![("identity".into(), kinds)]),
            list => {
                let order = PerturbationKind::parse_list(list).map_err(|e| invalid("order", e.to_string()))?;
                if order.is_empty() {
                    return Err(invalid("order", "empty order"));
                }
                Ok(vec![("custom".into(), order)])
            }
        }
    }

    pub fn model(&self) -> Result<ModelConfig, ConfigError> {
        let gate_mode = match self.gate_mode.as_str() {
            "full" => GateMode::Full,
            "diagonal" => GateMode::Diagonal,
            other => return Err(invalid("gate_mode", format!("`{other}` (expected full or diagonal)"))),
        };
        if self.dim == 0 {
            return Err(invalid("dim", "must be positive"));
        }
        if self.buckets == 0 {
            return Err(invalid("buckets", "must be positive"));
        }
        if self.hidden == 0 {
            return Err(invalid("hidden", "must be positive"));
        }
        if self.min_n == 0 || self.min_n > self.max_n {
            return Err(invalid("min_n", "need 1 <= min_n <= max_n"));
        }
        Ok(ModelConfig {
            encoder: EncoderConfig {
                dim: self.dim,
                buckets: self.buckets,
                min_n: self.min_n,
                max_n: self.max_n,
                max_chars: self.max_chars,
            },
            hidden: self.hidden,
            gate_mode,
            embed_init: self.embed_init,
        })
    }

    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn train(&self, seed: u64) -> Result<TrainConfig, ConfigError> {
        let train = TrainConfig {
            optimizer: AdamWConfig {
                learning_rate: self.learning_rate,
                weight_decay: self.weight_decay,
                ..AdamWConfig::default()
            },
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed,
            weights: LossWeights {
                lambda: self.lambda,
                gamma: self.gamma,
            },
            ig_steps: self.ig_steps,
            relearn_cycles: self.relearn_cycles,
            memory_ratio: self.memory_ratio,
        };
        train.validate().map_err(|e| {
            let key = if !(self.learning_rate > 0.0) {
                "learning_rate"
            } else if !(self.lambda >= 0.0) {
                "lambda"
            } else if !(self.gamma >= 0.0) {
                "gamma"
            } else if self.batch_size == 0 {
                "batch_size"
            } else if self.max_epochs == 0 {
                "max_epochs"
            } else if self.ig_steps == 0 {
                "ig_steps"
            } else {
                "memory_ratio"
            };
            invalid(key, e.to_string())
        })?;
        Ok(train)
    }

    pub fn experiment(&self) -> Result<ExperimentConfig, ConfigError> {
        Ok(ExperimentConfig {
            model: self.model()?,
            train: self.train(self.seed)?,
            memory_k: self.memory_k,
        })
    }

    /// Full method with the configured ablations switched off.
    pub fn components(&self) -> Result<Components, ConfigError> {
        let mut c = Components::FULL;
        for flag in &self.ablations {
            let a: Ablation = flag.parse().map_err(|e: contiguard::model::ModelError| invalid("ablations", e.to_string()))?;
            c = c.without(a);
        }
        Ok(c)
    }

    pub fn desk_setup(&self) -> Result<DeskSetup, ConfigError> {
        if !(self.rate > 0.0 && self.rate <= 1.0) {
            return Err(invalid("rate", "must lie in (0, 1]"));
        }
        if self.quota == 0 {
            return Err(invalid("quota", "must be positive"));
        }
        let reference: ReferenceKind = self.reference.parse().map_err(|e: String| invalid("reference", e))?;
        Ok(DeskSetup {
            per_class: self.per_class,
            per_kind_quota: self.quota,
            kinds: self.kinds()?,
            seed: self.seed,
            rate: self.rate,
            edits_per_token: self.edits_per_token,
            distract_len: self.distract_len,
            reference,
        })
    }

    pub fn enricher(&self) -> EnricherConfig {
        EnricherConfig {
            max_retries: self.llm_max_retries,
            parallelism: self.llm_parallelism,
        }
    }

    pub fn lexicons(&self) -> Result<Lexicons, ConfigError> {
        if self.lexicon_dir.is_empty() {
            return Ok(Lexicons::builtin());
        }
        Lexicons::load_dir(Path::new(&self.lexicon_dir)).map_err(|e| invalid("lexicon_dir", e.to_string()))
    }

    /// Writes the resolved configuration into `dir`.
    pub fn write_resolved(&self, dir: &Path) -> std::io::Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let path = dir.join(RESOLVED_NAME);
        fs::write(&path, self.to_toml())?;
        Ok(path)
    }
}
