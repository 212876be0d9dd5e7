//! File-based run configuration (TOML). Every section is optional; missing
//! keys take their defaults.

use std::path::{Path, PathBuf};

use dualrate_core::corpus::CorpusConfig;
use dualrate_core::experiment::ExperimentSetup;
use dualrate_core::loss::DEFAULT_CLIP;
use dualrate_core::metrics::DEFAULT_CES_FACTOR;
use dualrate_core::model::{ModelConfig, TrainConfig};
use dualrate_core::profiler::{DEFAULT_BATCH_SIZE, DEFAULT_WARMUP_BATCHES};
use dualrate_core::sampling::{SamplingConfig, Split, SplitRatios, DEFAULT_RARE_THRESHOLD};
use dualrate_core::synth::SynthConfig;
use dualrate_core::Error;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub ingest: IngestSection,
    pub corpus: CorpusConfig,
    pub sampling: SamplingConfig,
    pub split: SplitSection,
    /// `vocab_size` and `image_input` are always taken from `[corpus]`.
    pub model: ModelConfig,
    /// `seed` is always the global seed.
    pub train: TrainConfig,
    pub weighting: WeightingSection,
    pub eval: EvalSection,
    pub profile: ProfileSection,
    pub extrapolate: ExtrapolateSection,
    pub experiment: ExperimentSetup,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("dualrate-out"),
            ingest: IngestSection::default(),
            corpus: CorpusConfig::default(),
            sampling: SamplingConfig::default(),
            split: SplitSection::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            weighting: WeightingSection::default(),
            eval: EvalSection::default(),
            profile: ProfileSection::default(),
            extrapolate: ExtrapolateSection::default(),
            experiment: ExperimentSetup::default(),
            synth: SynthConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    /// Skip malformed lines instead of failing.
    pub lenient: bool,
}

impl Default for IngestSection {
    fn default() -> Self {
        Self { lenient: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub ratios: SplitRatios,
    pub rare_threshold: usize,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self {
            ratios: SplitRatios::default(),
            rare_threshold: DEFAULT_RARE_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightingSection {
    /// `false` trains with unit weights.
    pub enabled: bool,
    pub clip: f64,
}

impl Default for WeightingSection {
    fn default() -> Self {
        Self {
            enabled: true,
            clip: DEFAULT_CLIP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub split: Split,
    pub ces_factor: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            split: Split::Test,
            ces_factor: DEFAULT_CES_FACTOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileSection {
    pub batch_size: usize,
    pub warmup_batches: usize,
    /// Free-text hardware description; detected when absent.
    pub hardware: Option<String>,
}

impl Default for ProfileSection {
    fn default() -> Self {
        Self {
            batch_size: DEFAULT_BATCH_SIZE,
            warmup_batches: DEFAULT_WARMUP_BATCHES,
            hardware: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtrapolateSection {
    pub at: f64,
    pub ces_factor: f64,
    /// Leave the 20% test-set point out of the built-in points.
    pub exclude_test_point: bool,
}

impl Default for ExtrapolateSection {
    fn default() -> Self {
        Self {
            at: 1.0,
            ces_factor: DEFAULT_CES_FACTOR,
            exclude_test_point: false,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Applies the global seed and derives the model's input shape from the
    /// corpus settings.
    pub fn resolve(mut self, seed: Option<u64>, out_dir: Option<PathBuf>) -> Result<Self, Error> {
        if let Some(seed) = seed {
            self.seed = seed;
        }
        if let Some(dir) = out_dir {
            self.out_dir = dir;
        }
        self.model.vocab_size = self.corpus.vocab_size;
        let s = self.corpus.image_size as usize;
        self.model.image_input = [3, s, s];
        self.model.seed = self.seed;
        self.train.seed = self.seed;
        self.corpus.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_means_defaults() {
        let cfg: RunConfig = toml::from_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn sections_override_defaults() {
        let cfg: RunConfig = toml::from_str(
            r#"
            seed = 9
            [corpus]
            vocab_size = 1024
            [split.ratios]
            train = 6
            validation = 2
            test = 2
            [train]
            epochs = 3
            "#,
        )
        .unwrap();
        let cfg = cfg.resolve(None, None).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.model.vocab_size, 1024);
        assert_eq!(cfg.train.seed, 9);
        assert_eq!(cfg.split.ratios.to_string(), "6:2:2");
        assert_eq!(cfg.train.epochs, 3);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("sead = 1").is_err());
    }

    #[test]
    fn shipped_example_parses() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../dualrate.example.toml");
        RunConfig::load(&path).unwrap().resolve(None, None).unwrap();
    }
}
