//! Switchable model variants used for ablation runs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::TabModel;
use crate::preprocess::TablePreprocessor;
use crate::table::Cell;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NumericEncoding {
    /// bin token embedding scaled by the value multiplier
    #[default]
    Rmt,
    /// numbers written out as text and tokenized as words
    Value2Str,
    /// mean feature-name embedding scaled by the value multiplier
    Vmfe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub numeric_encoding: NumericEncoding,
    pub use_ifa: bool,
    pub n_bin: Option<usize>,
    pub value_position_encoding: bool,
    pub use_triplet_reg: bool,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            numeric_encoding: NumericEncoding::Rmt,
            use_ifa: true,
            n_bin: None,
            value_position_encoding: false,
            use_triplet_reg: true,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum AblationError {
    #[error("unknown ablation `{0}` (expected value2str, vmfe, no-ifa, nbin=K, valpos, noreg)")]
    Unknown(String),
    #[error("model was built for a different configuration: {0}")]
    ConfigMismatch(String),
}

impl AblationConfig {
    /// Applies one `--ablate` token to this configuration.
    pub fn apply(&mut self, token: &str) -> Result<(), AblationError> {
        match token.trim() {
            "value2str" => self.numeric_encoding = NumericEncoding::Value2Str,
            "vmfe" => self.numeric_encoding = NumericEncoding::Vmfe,
            "no-ifa" => self.use_ifa = false,
            "valpos" => self.value_position_encoding = true,
            "noreg" => self.use_triplet_reg = false,
            other => {
                let k = other
                    .strip_prefix("nbin=")
                    .and_then(|k| k.parse::<usize>().ok())
                    .filter(|&k| k >= 2)
                    .ok_or_else(|| AblationError::Unknown(other.to_string()))?;
                self.n_bin = Some(k);
            }
        }
        Ok(())
    }

    pub fn from_tokens<S: AsRef<str>>(tokens: &[S]) -> Result<Self, AblationError> {
        let mut cfg = AblationConfig::default();
        for t in tokens {
            cfg.apply(t.as_ref())?;
        }
        Ok(cfg)
    }

    /// Short tag used in reports, `default` for the headline configuration.
    pub fn tag(&self) -> String {
        let mut parts = Vec::new();
        match self.numeric_encoding {
            NumericEncoding::Rmt => {}
            NumericEncoding::Value2Str => parts.push("value2str".to_string()),
            NumericEncoding::Vmfe => parts.push("vmfe".to_string()),
        }
        if !self.use_ifa {
            parts.push("no-ifa".into());
        }
        if let Some(k) = self.n_bin {
            parts.push(format!("nbin={k}"));
        }
        if self.value_position_encoding {
            parts.push("valpos".into());
        }
        if !self.use_triplet_reg {
            parts.push("noreg".into());
        }
        if parts.is_empty() {
            "default".into()
        } else {
            parts.join("+")
        }
    }
}

/// Prediction for one raw row under an ablation configuration. The model
/// and preprocessor must have been built for exactly that configuration.
pub fn ablation_forward(cfg: &AblationConfig, pre: &TablePreprocessor, model: &TabModel, row: &[Cell], head: usize) -> Result<f64, AblationError> {
    if model.config.ablation != *cfg {
        return Err(AblationError::ConfigMismatch(format!("model is `{}`, requested `{}`", model.config.ablation.tag(), cfg.tag())));
    }
    if pre.encoding != cfg.numeric_encoding {
        return Err(AblationError::ConfigMismatch("preprocessor numeric encoding differs".into()));
    }
    if row.len() != pre.schema.columns.len() {
        return Err(AblationError::ConfigMismatch(format!("row has {} cells, schema {}", row.len(), pre.schema.columns.len())));
    }
    let tokens = pre.encode_row(&model.vocab, row);
    model.check_tokens(&tokens).map_err(|e| AblationError::ConfigMismatch(e.to_string()))?;
    let p = model.predict(&[tokens], head).map_err(|e| AblationError::ConfigMismatch(e.to_string()))?;
    Ok(pre.unscale_prediction(p[0]))
}
