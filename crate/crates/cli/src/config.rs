//! Run configuration read from TOML.
//!
//! Every section is optional and falls back to the library defaults:
//!
//! ```toml
//! [logging]            # supervised-to-bandit conversion
//! fit_fraction = 0.3
//! temperature = 2.0
//! seed = 0
//! fit_steps = 300
//! fit_lr = 0.5
//! l2 = 0.001
//!
//! [split]              # train/validation/test and reward-model splits
//! train = 0.56
//! val = 0.24
//! test = 0.20
//! rm_train = 0.8
//! rm_val = 0.2
//! seed = 0
//! by_order = false
//!
//! [learn]              # minorize-maximize
//! alpha = 0.0
//! policy = { class = "two-layer-mlp", hidden = 5 }
//! inner_steps = 200
//! lr = 0.05
//! max_outer = 100
//! tol = 1e-6
//! seed = 0
//!
//! [grid]               # boosted reward-bound models
//! learning_rates = [0.01, 0.1, 0.3, 0.5]
//! max_depths = [2, 3, 4]
//! n_rounds = 100
//! patience = 10
//! lambda_reg = 1.0
//! min_leaf = 2
//!
//! [[candidates]]       # optional model selection on the validation split
//! policy = { class = "softmax-linear" }
//! lr = 0.1
//! ```

use std::path::Path;

use robust_ope::learn::Candidate;
use robust_ope::{BoostGrid, LearnConfig, LoggingConfig, SplitSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub logging: LoggingConfig,
    pub split: SplitSpec,
    pub learn: LearnConfig,
    pub grid: BoostGrid<f64>,
    pub candidates: Vec<Candidate>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                Self::parse(&text)
            }
        }
    }

    /// Sets every seed in the configuration.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.logging.seed = seed;
        self.split.seed = seed;
        self.learn.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.logging.validate()?;
        self.split.validate()?;
        self.learn.validate()?;
        for c in &self.candidates {
            if !(c.lr > 0.0) {
                return Err(CliError::Usage("candidate lr must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        digest_of(self)
    }
}

/// SHA-256 of the compact JSON form, which fixes field order and float text.
pub fn digest_of<S: Serialize>(value: &S) -> String {
    let json = serde_json::to_vec(value).expect("config serializes");
    hex::encode(Sha256::digest(&json))
}
