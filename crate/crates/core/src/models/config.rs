//! Model configuration files.
//!
//! ```toml
//! model = "compass_actuated"   # compass | compass_actuated | compass_vhc
//!
//! [params]                     # any key may be omitted
//! m = 1.0
//! m_h = 2.0
//! a = 0.5
//! b = 0.5
//! g = 9.81
//!
//! [actuation]                  # compass_actuated only
//! omega = 6.283185307179586
//! torque_scale = 0.25
//!
//! [vhc]                        # compass_vhc only
//! degree = 4
//! kp = 1.0
//! kd = 2.0
//! epsilon = 0.1
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::compass::{CompassGait, CompassParams, HipActuation};
use super::vhc::{CompassGaitVhc, VhcGains};
use crate::dynamics::HybridModel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Compass,
    CompassActuated,
    CompassVhc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub model: ModelKind,
    #[serde(default)]
    pub params: CompassParams,
    /// Defaults to one period per second scaled by `m a²`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actuation: Option<HipActuation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vhc: Option<VhcGains>,
}

impl ModelConfig {
    pub fn new(model: ModelKind) -> Self {
        Self {
            model,
            params: CompassParams::default(),
            actuation: None,
            vhc: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format(format!("model config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Fill in defaulted sections so the stored descriptor is explicit.
    pub fn resolved(&self) -> Self {
        let mut out = self.clone();
        match self.model {
            ModelKind::Compass => {
                out.actuation = None;
                out.vhc = None;
            }
            ModelKind::CompassActuated => {
                out.actuation = Some(
                    self.actuation
                        .unwrap_or_else(|| HipActuation::for_params(&self.params)),
                );
                out.vhc = None;
            }
            ModelKind::CompassVhc => {
                out.actuation = None;
                out.vhc = Some(self.vhc.unwrap_or_default());
            }
        }
        out
    }

    pub fn build(&self) -> Result<Box<dyn HybridModel>> {
        let cfg = self.resolved();
        if self.model != ModelKind::CompassActuated && self.actuation.is_some() {
            return Err(Error::InvalidInput(
                "[actuation] only applies to compass_actuated".into(),
            ));
        }
        if self.model != ModelKind::CompassVhc && self.vhc.is_some() {
            return Err(Error::InvalidInput(
                "[vhc] only applies to compass_vhc".into(),
            ));
        }
        Ok(match cfg.model {
            ModelKind::Compass => Box::new(CompassGait::passive(cfg.params)?),
            ModelKind::CompassActuated => {
                Box::new(CompassGait::actuated(cfg.params, cfg.actuation.unwrap())?)
            }
            ModelKind::CompassVhc => Box::new(CompassGaitVhc::new(cfg.params, cfg.vhc.unwrap())?),
        })
    }
}
