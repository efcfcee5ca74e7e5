use std::path::Path;

use idt_core::{DetectorConfig, TokenizerSpec};
use idt_harness::GeneratorConfig;
use serde::{Deserialize, Serialize};

use crate::TransportError;

/// Settings file, e.g.
///
/// ```toml
/// [tokenizer]
/// mode = "whitespace"
/// lowercase = true
///
/// [detector]
/// alpha = 0.05
/// z_threshold = 3.0
/// baseline_window = { start = 1, end = 30 }
///
/// [generator]
/// seed = 7
/// ```
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub tokenizer: TokenizerSpec,
    pub detector: DetectorConfig,
    pub generator: GeneratorConfig,
}

impl AppConfig {
    pub fn from_toml(text: &str) -> Result<Self, TransportError> {
        toml::from_str(text).map_err(|e| TransportError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, TransportError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TransportError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use idt_core::{Metric, TokenizerMode, TurnRange};

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg = AppConfig::from_toml(
            r#"
            [tokenizer]
            mode = "whitespace"
            lowercase = true

            [detector]
            alpha = 0.01
            baseline_window = { start = 5, end = 25 }
            monitored = ["P", "dH"]

            [generator]
            seed = 9
            "#,
        )
        .unwrap();
        assert_eq!(cfg.tokenizer.mode, TokenizerMode::Whitespace);
        assert!(cfg.tokenizer.lowercase);
        assert_eq!(cfg.detector.alpha, 0.01);
        assert_eq!(cfg.detector.baseline_window, TurnRange::new(5, 25));
        assert_eq!(cfg.detector.monitored, vec![Metric::P, Metric::DeltaH]);
        assert_eq!(cfg.detector.z_threshold, 3.0);
        assert_eq!(cfg.generator.seed, 9);
        assert_eq!(cfg.generator.vocab_size, 2000);
    }

    #[test]
    fn empty_and_unknown() {
        assert_eq!(AppConfig::from_toml("").unwrap(), AppConfig::default());
        assert!(AppConfig::from_toml("[detectr]\nalpha = 1").is_err());
    }
}
