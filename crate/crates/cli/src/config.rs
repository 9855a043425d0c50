use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use crossfit_core::fewshot::FinetuneConfig;
use crossfit_core::model::{ModelConfig, Tokenization};
use crossfit_core::upstream::{MetaConfig, Method};
use serde::{Deserialize, Serialize};

use crate::UsageError;

/// One run's full configuration. Command-line flags override the matching
/// fields; the resolved document is stored in the run directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Gym root; falls back to `CROSSFIT_HOME`.
    pub gym: Option<PathBuf>,
    pub partition: Option<PathBuf>,
    pub method: Method,
    /// Global seed: model initialization, upstream order and fine-tuning
    /// order are all derived from it.
    pub seed: u64,
    pub jobs: usize,
    pub tokenization: Tokenization,
    /// Vocabulary cap including reserved tokens.
    pub max_vocab: usize,
    /// Model shape; `vocab_size` and `init_seed` are set from the
    /// vocabulary and `seed`.
    pub model: ModelConfig,
    pub meta: MetaConfig,
    pub finetune: FinetuneConfig,
    /// Fine-tuning setup used to score validation tasks during upstream
    /// learning; only its first learning rate and batch size are used.
    pub validation: FinetuneConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            gym: None,
            partition: None,
            method: Method::Mtl,
            seed: 0,
            jobs: 1,
            tokenization: Tokenization::Word,
            max_vocab: 4096,
            model: ModelConfig::default(),
            meta: MetaConfig::default(),
            finetune: FinetuneConfig::default(),
            validation: FinetuneConfig {
                total_updates: 200,
                warmup_updates: 20,
                eval_every: 100,
                ..FinetuneConfig::default()
            },
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text)
            .map_err(|e| UsageError(format!("invalid config {}: {e}", path.display())).into())
    }

    /// Copies the global seed into every stage.
    pub fn resolve_seeds(&mut self) {
        self.model.init_seed = self.seed;
        self.meta.seed = self.seed;
        self.finetune.seed = self.seed;
        self.validation.seed = self.seed;
    }

    pub fn validation_cell(&self) -> FinetuneConfig {
        FinetuneConfig {
            learning_rates: self.validation.learning_rates.iter().take(1).copied().collect(),
            batch_sizes: self.validation.batch_sizes.iter().take(1).copied().collect(),
            ..self.validation.clone()
        }
    }

    pub fn gym_root(&self) -> Result<PathBuf> {
        if let Some(g) = &self.gym {
            return Ok(g.clone());
        }
        match std::env::var_os("CROSSFIT_HOME") {
            Some(home) if !home.is_empty() => Ok(PathBuf::from(home)),
            _ => Err(UsageError("no gym given: pass --gym, set \"gym\" in the config, or set CROSSFIT_HOME".into()).into()),
        }
    }

    pub fn partition_path(&self) -> Result<&Path> {
        self.partition
            .as_deref()
            .ok_or_else(|| UsageError("no partition given: pass --partition or set \"partition\"".into()).into())
    }

    pub fn validate(&self) -> Result<()> {
        let usage = |e: String| anyhow::Error::from(UsageError(e));
        self.meta.validate(self.method).map_err(|e| usage(e.to_string()))?;
        self.finetune.validate().map_err(|e| usage(e.to_string()))?;
        self.validation_cell().validate().map_err(|e| usage(format!("validation: {e}")))?;
        if self.jobs == 0 {
            return Err(usage("jobs must be at least 1".into()));
        }
        if self.max_vocab < 5 {
            return Err(usage("max_vocab must leave room beyond the reserved tokens".into()));
        }
        Ok(())
    }
}
