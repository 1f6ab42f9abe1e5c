//! One TOML document for a whole experiment: corpus generation, the audio
//! front end, both regressors, and the cross-validation plan. Every table
//! and key is optional; omitted values take the defaults below. Unknown
//! keys are rejected so typos fail loudly instead of silently running with
//! defaults.

use crate::dataio::atomic_write;
use crate::dsp::{MelConfig, StftConfig};
use crate::error::{Error, Result};
use crate::features::{FeatureConfig, MaParams};
use crate::nn::TrainConfig;
use crate::pipeline::{CvPlan, DetectionRule, RunSettings};
use crate::svr::SvrConfig;
use crate::synth::DatasetConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Full experiment description. The defaults reproduce the reference
/// experiment: a 10-vehicle corpus with biased annotations, 20 repetitions
/// of leave-one-vehicle-out cross-validation, and a per-fold grid search
/// for the speed regressor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub stft: StftConfig,
    pub mel: MelConfig,
    pub features: FeatureConfig,
    pub ma: MaParams,
    pub nn: TrainConfig,
    pub svr: SvrConfig,
    pub svr_grid: bool,
    pub plan: CvPlan,
    pub rule: DetectionRule,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetConfig::default(),
            stft: StftConfig::default(),
            mel: MelConfig::default(),
            features: FeatureConfig::default(),
            ma: MaParams::default(),
            nn: TrainConfig::default(),
            svr: SvrConfig::default(),
            svr_grid: true,
            plan: CvPlan::default(),
            rule: DetectionRule::default(),
        }
    }
}

impl ExperimentConfig {
    /// Full-size reference experiment: 200 training epochs, 20 repetitions,
    /// per-fold grid search. Hours of compute on a laptop.
    pub fn full() -> Self {
        ExperimentConfig::default()
    }

    /// Same corpus at reduced training effort: 50 epochs, 5 repetitions, no
    /// grid search. Finishes in well under an hour on a few cores.
    pub fn desk() -> Self {
        ExperimentConfig {
            nn: TrainConfig {
                epochs: 50,
                ..TrainConfig::default()
            },
            plan: CvPlan {
                n_repetitions: 5,
                ..CvPlan::default()
            },
            svr_grid: false,
            ..ExperimentConfig::default()
        }
    }

    /// Toy corpus for smoke tests and demos: three vehicles, three-second
    /// clips, a handful of epochs. Seconds of compute.
    pub fn mini() -> Self {
        ExperimentConfig {
            dataset: DatasetConfig {
                n_vehicles: 3,
                passes_per_vehicle: 3,
                n_noise_clips: 2,
                duration_s: 3.0,
                t_cpa_range_s: (1.0, 2.0),
                ..DatasetConfig::default()
            },
            nn: TrainConfig {
                epochs: 4,
                ..TrainConfig::default()
            },
            plan: CvPlan {
                n_repetitions: 2,
                ..CvPlan::default()
            },
            svr_grid: false,
            ..ExperimentConfig::default()
        }
    }

    /// Validates every component plus the cross-component invariants the
    /// pipeline assumes.
    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.features.validate()?;
        self.ma.validate()?;
        self.nn.validate()?;
        self.svr.validate()?;
        self.plan.validate()?;
        self.rule.validate()?;
        if self.mel.n_mel != self.features.n_mel {
            return Err(Error::invalid(
                "filterbank and feature window disagree on the mel band count",
            ));
        }
        if self.mel.window_len != self.stft.window_len {
            return Err(Error::invalid(
                "filterbank and analysis window disagree on the window length",
            ));
        }
        if self.mel.sample_rate != self.dataset.sample_rate {
            return Err(Error::invalid(
                "filterbank and dataset disagree on the sample rate",
            ));
        }
        Ok(())
    }

    /// The pipeline-facing subset (everything except the corpus generator).
    pub fn run_settings(&self) -> RunSettings {
        RunSettings {
            stft: self.stft,
            mel: self.mel,
            features: self.features,
            ma: self.ma,
            nn: self.nn,
            svr: self.svr,
            svr_grid: self.svr_grid,
            plan: self.plan,
            rule: self.rule,
        }
    }

    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)
            .map_err(|e| Error::parse(origin, "document", e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::invalid(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ExperimentConfig::from_toml_str(&text, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        atomic_write(path, self.to_toml_string()?.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn tmpdir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("config-{tag}-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn presets_validate() {
        ExperimentConfig::full().validate().unwrap();
        ExperimentConfig::desk().validate().unwrap();
        ExperimentConfig::mini().validate().unwrap();
        assert_eq!(ExperimentConfig::desk().nn.epochs, 50);
        assert_eq!(ExperimentConfig::desk().plan.n_repetitions, 5);
        assert!(!ExperimentConfig::desk().svr_grid);
        assert_eq!(ExperimentConfig::full().nn.epochs, 200);
        assert_eq!(ExperimentConfig::full().plan.n_repetitions, 20);
    }

    #[test]
    fn toml_roundtrip_preserves_everything() {
        let mut cfg = ExperimentConfig::desk();
        cfg.dataset.seed = 42;
        cfg.svr.gamma = Some(0.25);
        cfg.rule.threshold = 2.5;
        let text = cfg.to_toml_string().unwrap();
        let back = ExperimentConfig::from_toml_str(&text, Path::new("roundtrip.toml")).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn partial_document_fills_defaults() {
        let cfg = ExperimentConfig::from_toml_str(
            "svr_grid = false\n[nn]\nepochs = 7\n",
            Path::new("partial.toml"),
        )
        .unwrap();
        assert_eq!(cfg.nn.epochs, 7);
        assert!(!cfg.svr_grid);
        assert_eq!(cfg.nn.batch_size, TrainConfig::default().batch_size);
        assert_eq!(cfg.dataset, DatasetConfig::default());
    }

    #[test]
    fn unknown_key_is_rejected_by_name() {
        let err = ExperimentConfig::from_toml_str("[nn]\nepochz = 7\n", Path::new("typo.toml"))
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("epochz"), "message should name the key: {msg}");
        assert!(msg.contains("typo.toml"));
    }

    #[test]
    fn cross_component_mismatches_are_rejected() {
        let mut cfg = ExperimentConfig::mini();
        cfg.mel.n_mel = 39;
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::mini();
        cfg.mel.sample_rate = 48_000;
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::mini();
        cfg.stft.window_len = 2048;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn save_and_load_roundtrip() {
        let dir = tmpdir("roundtrip");
        let path = dir.join("experiment.toml");
        let cfg = ExperimentConfig::mini();
        cfg.save(&path).unwrap();
        let back = ExperimentConfig::load(&path).unwrap();
        assert_eq!(cfg, back);
    }
}
