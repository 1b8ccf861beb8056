//! JSON config files. Each command reads its own schema; unknown keys are
//! rejected and relative paths resolve against the config file's directory.
//! Command-line flags override anything set here.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use autolabel_core::labels::{RoadType, SubsetSpec, WeatherCondition};
use autolabel_core::simdet::{DetectorNoiseModel, DimsRanges, ScenarioParams, WeatherNoise};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::error::CliError;

/// Parsed config plus the directory its relative paths are anchored to.
pub struct Loaded<T> {
    pub value: T,
    base: Option<PathBuf>,
}

impl<T: Default> Loaded<T> {
    pub fn none() -> Self {
        Self {
            value: T::default(),
            base: None,
        }
    }
}

impl<T> Loaded<T> {
    pub fn resolve(&self, p: PathBuf) -> PathBuf {
        match &self.base {
            Some(base) if p.is_relative() => base.join(p),
            _ => p,
        }
    }
}

pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<Loaded<T>, CliError> {
    let Some(path) = path else {
        return Ok(Loaded::none());
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let value = serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    Ok(Loaded {
        value,
        base: Some(path.parent().map(Path::to_path_buf).unwrap_or_default()),
    })
}

#[derive(Debug, Clone, Copy, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum NoisePreset {
    #[default]
    Default,
    Perfect,
}

/// Overrides layered on a preset: listed weathers replace the preset's entry.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(default)]
    pub preset: NoisePreset,
    #[serde(default)]
    pub per_weather: BTreeMap<WeatherCondition, WeatherNoise>,
    pub fa_class: Option<String>,
    pub fa_dims: Option<DimsRanges>,
}

impl NoiseConfig {
    pub fn build(&self) -> DetectorNoiseModel {
        let mut model = match self.preset {
            NoisePreset::Default => DetectorNoiseModel::default(),
            NoisePreset::Perfect => DetectorNoiseModel::perfect(),
        };
        for (w, n) in &self.per_weather {
            model.per_weather.insert(*w, *n);
        }
        if let Some(c) = &self.fa_class {
            model.fa_class = c.clone();
        }
        if let Some(d) = self.fa_dims {
            model.fa_dims = d;
        }
        model
    }
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct InjectConfig {
    pub n_fa: usize,
    pub n_miss: usize,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default)]
    pub scenario: ScenarioParams,
    pub weather_mix: Option<BTreeMap<WeatherCondition, f64>>,
    pub road_mix: Option<BTreeMap<RoadType, f64>>,
    #[serde(default)]
    pub noise: NoiseConfig,
    /// Errors injected into the detections, logged to `injections.json`.
    pub inject: Option<InjectConfig>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutolabelConfig {
    pub detections: Option<PathBuf>,
    pub tau: Option<f64>,
    #[serde(default)]
    pub refine: bool,
    pub match_iou: Option<f64>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub detections: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub taus: Option<Vec<f64>>,
    pub match_iou: Option<f64>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub detections: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub iou: Option<f64>,
    pub class: Option<String>,
    pub subset: Option<SubsetSpec>,
    #[serde(default)]
    pub svg: bool,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    /// `name=path` or bare paths to eval CSVs.
    #[serde(default)]
    pub inputs: Vec<String>,
    pub out: Option<PathBuf>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        let err = serde_json::from_str::<SimulateConfig>(r#"{"scenaro": {}}"#).unwrap_err();
        assert!(err.to_string().contains("scenaro"));
        assert!(serde_json::from_str::<EvalConfig>(r#"{"subset": "SOME"}"#).is_err());
    }

    #[test]
    fn noise_overrides_layer_on_preset() {
        let c: NoiseConfig = serde_json::from_str(
            r#"{"per_weather": {"fog": {"p_detect": 0.5, "pos_sigma": 0, "dim_sigma": 0, "yaw_sigma": 0, "fa_rate": 0}}}"#,
        )
        .unwrap();
        let m = c.build();
        assert_eq!(m.for_weather(WeatherCondition::Fog).p_detect, 0.5);
        assert_eq!(
            m.for_weather(WeatherCondition::Rain),
            DetectorNoiseModel::default().for_weather(WeatherCondition::Rain)
        );
        let perfect: NoiseConfig = serde_json::from_str(r#"{"preset": "perfect"}"#).unwrap();
        assert_eq!(perfect.build(), DetectorNoiseModel::perfect());
    }

    #[test]
    fn relative_paths_follow_config() {
        let l = Loaded {
            value: (),
            base: Some(PathBuf::from("/cfg")),
        };
        assert_eq!(l.resolve("a.jsonl".into()), PathBuf::from("/cfg/a.jsonl"));
        assert_eq!(l.resolve("/x/a.jsonl".into()), PathBuf::from("/x/a.jsonl"));
    }
}
