use std::path::Path;

use affine_stereo::calibration::{BundleConfig, RansacConfig};
use affine_stereo::registration::RobustConfig;
use affine_stereo::surface::SplineFitConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::files::read_json;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpipolarSettings {
    /// Symmetric epipolar distance above which a match is dropped, px.
    pub threshold_px: f64,
}

impl Default for EpipolarSettings {
    fn default() -> Self {
        Self { threshold_px: 2.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistrationSettings {
    pub window: usize,
    pub robust: bool,
    pub robust_config: RobustConfig,
}

impl Default for RegistrationSettings {
    fn default() -> Self {
        Self {
            window: 3,
            robust: false,
            robust_config: RobustConfig::default(),
        }
    }
}

/// Per-stage settings, read from `--config` and then overridden by flags.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub ransac: RansacConfig,
    pub bundle: BundleConfig,
    pub epipolar: EpipolarSettings,
    pub surface: SplineFitConfig,
    pub registration: RegistrationSettings,
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let cfg: Self = match path {
            Some(p) => read_json(p)?,
            None => Self::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Input(format!("invalid config: {m}")));
        if self.epipolar.threshold_px.is_nan() || self.epipolar.threshold_px <= 0.0 {
            return bad("epipolar.threshold_px must be positive");
        }
        if self.registration.window == 0 {
            return bad("registration.window must be at least 1");
        }
        self.surface.validate().map_err(CliError::from)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_config_keeps_other_defaults() {
        let cfg: PipelineConfig = serde_json::from_str(r#"{"surface": {"epsilon": 12.5}}"#).unwrap();
        assert_eq!(cfg.surface.epsilon, 12.5);
        assert_eq!(cfg.surface.grid_u, SplineFitConfig::default().grid_u);
        assert_eq!(cfg.registration.window, 3);
        assert_eq!(cfg.epipolar.threshold_px, 2.0);
    }

    #[test]
    fn unknown_keys_and_seeds_are_rejected() {
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"surfce": {}}"#).is_err());
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"ransac": {"seed": 3}}"#).is_err());
    }

    #[test]
    fn invalid_values_fail_validation() {
        let mut cfg = PipelineConfig::default();
        cfg.registration.window = 0;
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 2);
    }
}
