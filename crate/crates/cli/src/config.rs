//! Defaults read from a TOML file.
//!
//! ```toml
//! clock_hz = 24000000
//! power_mw = 8.55
//! requant_convention = "table1"
//! measured_latency_ms = 95.5
//! ```

use std::path::Path;

use scgnn_core::cycles::RequantConvention;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub clock_hz: f64,
    pub power_mw: f64,
    pub requant_convention: RequantConvention,
    /// Wall-clock latency used for throughput and energy, when known.
    pub measured_latency_ms: Option<f64>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            clock_hz: 24_000_000.0,
            power_mw: 8.55,
            requant_convention: RequantConvention::TableI,
            measured_latency_ms: None,
        }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.clock_hz > 0.0 && self.clock_hz.is_finite()) {
            return Err(CliError::Usage(format!("clock_hz must be positive, got {}", self.clock_hz)));
        }
        if !(self.power_mw >= 0.0 && self.power_mw.is_finite()) {
            return Err(CliError::Usage(format!("power_mw must be non-negative, got {}", self.power_mw)));
        }
        if let Some(m) = self.measured_latency_ms {
            if !(m > 0.0 && m.is_finite()) {
                return Err(CliError::Usage(format!("measured_latency_ms must be positive, got {m}")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        assert_eq!(Config::parse("").unwrap(), Config::default());
        let c = Config::parse("clock_hz = 12e6\nrequant_convention = \"formula\"\n").unwrap();
        assert_eq!(c.clock_hz, 12e6);
        assert_eq!(c.requant_convention, RequantConvention::FormulaText);
        assert_eq!(c.power_mw, 8.55);
    }

    #[test]
    fn bad_values_are_rejected() {
        assert!(Config::parse("clock_hz = 0").is_err());
        assert!(Config::parse("colour = 1").is_err());
        assert!(Config::parse("requant_convention = \"other\"").is_err());
    }
}
