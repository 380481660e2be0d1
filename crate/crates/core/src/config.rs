//! Run configuration, read from JSON. Every field has a default so a
//! config file only needs the values it changes.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::degradation::DegradationConfig;
use crate::denoiser::{load_model, TrainConfig};
use crate::error::{Error, Result};
use crate::predictor::{IdentityPredictor, LearnedPredictor, SmoothingPredictor, SrPredictor};
use crate::schedule::ScheduleParams;
use crate::uncertainty::WeightingParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictorKind {
    Identity,
    Smooth,
    Learned,
}

impl std::str::FromStr for PredictorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(PredictorKind::Identity),
            "smooth" => Ok(PredictorKind::Smooth),
            "learned" => Ok(PredictorKind::Learned),
            other => Err(Error::InvalidParameter(format!(
                "unknown predictor {other:?} (expected identity, smooth or learned)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub schedule: ScheduleParams,
    pub weighting: WeightingParams,
    pub predictor: PredictorKind,
    /// Radius of the smoothing predictor.
    pub predictor_radius: f64,
    pub predictor_model: Option<PathBuf>,
    pub denoiser_model: Option<PathBuf>,
    pub degradation: DegradationConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            schedule: ScheduleParams::default(),
            weighting: WeightingParams::default(),
            predictor: PredictorKind::Smooth,
            predictor_radius: 2.0,
            predictor_model: None,
            denoiser_model: None,
            degradation: DegradationConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Checks every section against its module's preconditions.
    pub fn validate(&self) -> Result<()> {
        self.schedule.build()?;
        self.weighting.validate()?;
        self.degradation.validate()?;
        self.train.validate()?;
        if self.predictor == PredictorKind::Smooth {
            SmoothingPredictor::new(self.predictor_radius)?;
        }
        if self.predictor == PredictorKind::Learned && self.predictor_model.is_none() {
            return Err(Error::InvalidParameter(
                "the learned predictor needs a predictor model path".into(),
            ));
        }
        Ok(())
    }

    pub fn build_predictor(&self) -> Result<Box<dyn SrPredictor>> {
        Ok(match self.predictor {
            PredictorKind::Identity => Box::new(IdentityPredictor),
            PredictorKind::Smooth => Box::new(SmoothingPredictor::new(self.predictor_radius)?),
            PredictorKind::Learned => {
                let path = self.predictor_model.as_ref().ok_or_else(|| {
                    Error::InvalidParameter(
                        "the learned predictor needs a predictor model path".into(),
                    )
                })?;
                Box::new(LearnedPredictor::new(&load_model(path)?)?)
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_and_partial_files() {
        let cfg = RunConfig::default();
        let back: RunConfig = serde_json::from_str(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
        let partial: RunConfig = serde_json::from_str(
            r#"{"seed": 9, "schedule": {"kappa": 1.5}, "predictor": "identity"}"#,
        )
        .unwrap();
        assert_eq!(partial.seed, 9);
        assert_eq!(partial.schedule.kappa, 1.5);
        assert_eq!(partial.schedule.steps, 5);
        assert_eq!(partial.predictor, PredictorKind::Identity);
        partial.validate().unwrap();
    }

    #[test]
    fn validation_catches_each_section() {
        let mut c = RunConfig::default();
        c.schedule.eta1 = 2.0;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.weighting.b_u = 0.0;
        assert!(c.validate().is_err());
        let c = RunConfig {
            predictor: PredictorKind::Learned,
            ..RunConfig::default()
        };
        assert!(c.validate().is_err());
        assert!("fancy".parse::<PredictorKind>().is_err());
    }
}
