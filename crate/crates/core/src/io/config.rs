//! Pipeline configuration file (TOML). Every section and key is optional;
//! missing values take the defaults and unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::FrontendParams;
use crate::posegraph::{LoopClosureParams, OptimizeParams};
use crate::registration::RegistrationParams;
use crate::sim::NoiseModel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphParams {
    /// Also constrain each keyframe against the keyframe two back.
    pub second_order_edges: bool,
    /// A second-order registration must agree with the chained estimate
    /// within these bounds to be added.
    pub consistency_translation: f64,
    pub consistency_rotation_deg: f64,
    /// Run loop-closure detection and optimization after tracking.
    pub optimize: bool,
    pub loop_closure: LoopClosureParams,
    pub optimizer: OptimizeParams,
}

impl Default for GraphParams {
    fn default() -> Self {
        Self {
            second_order_edges: true,
            consistency_translation: 0.05,
            consistency_rotation_deg: 5.0,
            optimize: true,
            loop_closure: LoopClosureParams::default(),
            optimizer: OptimizeParams::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub registration: RegistrationParams,
    pub frontend: FrontendParams,
    pub graph: GraphParams,
    /// Sensor noise used by `simulate`.
    pub noise: NoiseModel,
}

impl PipelineConfig {
    pub fn from_toml(path: &Path, text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::format(path, e.to_string().trim_end()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(path, &text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.registration.validate()?;
        self.frontend.validate()?;
        if !(self.graph.consistency_translation > 0.0 && self.graph.consistency_rotation_deg > 0.0) {
            return Err(Error::Parameter("graph consistency bounds must be positive".into()));
        }
        self.graph.loop_closure.validate()?;
        self.graph.optimizer.validate()?;
        self.noise.validate()
    }

    /// Replaces every seed in the configuration.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.registration.ransac.seed = seed;
        self.noise.seed = seed;
        self
    }
}
