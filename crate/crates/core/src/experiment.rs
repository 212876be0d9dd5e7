//! Controlled comparison of the rating-count weighted loss against unit
//! weights: both arms share data, seeds and configs.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{CleanItem, CorpusConfig, Preprocessor};
use crate::error::{Error, Result};
use crate::loss::{compute_mu, Weighting};
use crate::metrics::plcc;
use crate::model::{predict_items, train, ModelConfig, TrainConfig};
use crate::sampling::{partition, split, stratify, SplitRatios, SplitSets};
use crate::synth::{generate, SynthConfig};

pub const BASELINE_LABEL: &str = "Baseline";
pub const WEIGHTED_LABEL: &str = "Weighted Huber Loss";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub method: String,
    pub seed: u64,
    pub train_plcc: f64,
    pub valid_plcc: f64,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    pub train_plcc: f64,
    pub valid_plcc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seeds: Vec<u64>,
    pub runs: Vec<ArmResult>,
    /// Baseline then weighted; PLCCs are medians over seeds.
    pub rows: Vec<ComparisonRow>,
}

impl ExperimentReport {
    pub fn baseline(&self) -> &ComparisonRow {
        &self.rows[0]
    }

    pub fn weighted(&self) -> &ComparisonRow {
        &self.rows[1]
    }
}

impl fmt::Display for ExperimentReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let w0 = self
            .rows
            .iter()
            .map(|r| r.method.len())
            .max()
            .unwrap_or(0)
            .max("Method".len());
        writeln!(f, "{:<w0$}  {:>10}  {:>10}", "Method", "Train PLCC", "Valid PLCC")?;
        writeln!(f, "{}  {}  {}", "-".repeat(w0), "-".repeat(10), "-".repeat(10))?;
        for r in &self.rows {
            writeln!(f, "{:<w0$}  {:>10.4}  {:>10.4}", r.method, r.train_plcc, r.valid_plcc)?;
        }
        Ok(())
    }
}

pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of nothing");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

fn correlation(model: &crate::model::Model, items: &[CleanItem]) -> Result<f64> {
    let preds = predict_items(model, items)?;
    let targets: Vec<f64> = items.iter().map(|i| i.average_rating).collect();
    plcc(&preds, &targets)
}

/// Trains one arm and scores the selected checkpoint on train and
/// validation.
pub fn run_arm(
    splits: &SplitSets<CleanItem>,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    weighting: &Weighting,
    method: &str,
) -> Result<ArmResult> {
    let outcome = train(&splits.train, &splits.validation, model_config, train_config, weighting)?;
    Ok(ArmResult {
        method: method.into(),
        seed: train_config.seed,
        train_plcc: correlation(&outcome.model, &splits.train)?,
        valid_plcc: correlation(&outcome.model, &splits.validation)?,
        best_epoch: outcome.best_epoch,
    })
}

/// Runs both arms for every seed. The seed overrides the model and training
/// seeds; weighting statistics come from the training split.
pub fn run_experiment(
    splits: &SplitSets<CleanItem>,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    seeds: &[u64],
    weight_clip: f64,
) -> Result<ExperimentReport> {
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let counts: Vec<u64> = splits.train.iter().map(|i| i.rating_number).collect();
    let stats = compute_mu(&counts)?.with_clip(weight_clip)?;
    let arms = [
        (BASELINE_LABEL, Weighting::Unit),
        (WEIGHTED_LABEL, Weighting::RatingCount(stats)),
    ];

    let mut runs = Vec::new();
    for &seed in seeds {
        let mc = ModelConfig {
            seed,
            ..model_config.clone()
        };
        let tc = TrainConfig {
            seed,
            ..train_config.clone()
        };
        for (label, weighting) in &arms {
            let run = run_arm(splits, &mc, &tc, weighting, label)?;
            log::info!(
                "seed {seed} {label}: train plcc {:.4}, valid plcc {:.4}",
                run.train_plcc,
                run.valid_plcc
            );
            runs.push(run);
        }
    }
    let rows = arms
        .iter()
        .map(|(label, _)| {
            let mine: Vec<&ArmResult> = runs.iter().filter(|r| r.method == *label).collect();
            ComparisonRow {
                method: label.to_string(),
                train_plcc: median(&mine.iter().map(|r| r.train_plcc).collect::<Vec<_>>()),
                valid_plcc: median(&mine.iter().map(|r| r.valid_plcc).collect::<Vec<_>>()),
            }
        })
        .collect();
    Ok(ExperimentReport {
        seeds: seeds.to_vec(),
        runs,
        rows,
    })
}

/// Everything that defines a synthetic weighted-vs-baseline comparison.
/// The defaults are the desk-scale settings: 4,000 items with
/// rating-count dependent label noise, a 4,096-bucket vocabulary, 16x16
/// images and a learning rate raised for the small encoders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSetup {
    pub synth: SynthConfig,
    pub corpus: CorpusConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub ratios: SplitRatios,
    pub rare_threshold: usize,
    pub weight_clip: f64,
    pub seeds: Vec<u64>,
}

impl Default for ExperimentSetup {
    fn default() -> Self {
        let vocab_size = 4096;
        let image_size = 16;
        Self {
            synth: SynthConfig::heteroscedastic(4000),
            corpus: CorpusConfig {
                vocab_size,
                image_size,
                ..CorpusConfig::default()
            },
            model: ModelConfig {
                vocab_size,
                image_input: [3, image_size as usize, image_size as usize],
                ..ModelConfig::default()
            },
            train: TrainConfig {
                epochs: 20,
                peak_lr: 0.05,
                patience: 2,
                ..TrainConfig::default()
            },
            ratios: SplitRatios::default(),
            rare_threshold: crate::sampling::DEFAULT_RARE_THRESHOLD,
            weight_clip: crate::loss::DEFAULT_CLIP,
            seeds: (0..5).collect(),
        }
    }
}

impl ExperimentSetup {
    /// Generates the corpus from `data_seed` and runs both arms.
    pub fn run(&self, data_seed: u64) -> Result<ExperimentReport> {
        let splits = synthetic_splits(&self.synth, &self.corpus, self.ratios, self.rare_threshold, data_seed)?;
        run_experiment(&splits, &self.model, &self.train, &self.seeds, self.weight_clip)
    }
}

/// Generates, cleans and stratified-splits a synthetic corpus.
pub fn synthetic_splits(
    synth: &SynthConfig,
    corpus: &CorpusConfig,
    ratios: SplitRatios,
    rare_threshold: usize,
    seed: u64,
) -> Result<SplitSets<CleanItem>> {
    let raws = generate(synth, seed)?;
    let cleaned = Preprocessor::new(corpus.clone())?.clean_all(&raws);
    let strata = stratify(&cleaned.items, rare_threshold);
    let assignments = split(&cleaned.items, &strata, ratios, seed)?;
    Ok(partition(cleaned.items, &assignments))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn table_has_three_columns() {
        let report = ExperimentReport {
            seeds: vec![0],
            runs: vec![],
            rows: vec![
                ComparisonRow {
                    method: BASELINE_LABEL.into(),
                    train_plcc: 0.3336,
                    valid_plcc: 0.3205,
                },
                ComparisonRow {
                    method: WEIGHTED_LABEL.into(),
                    train_plcc: 0.3649,
                    valid_plcc: 0.3306,
                },
            ],
        };
        let text = report.to_string();
        let header: Vec<&str> = text
            .lines()
            .next()
            .unwrap()
            .split("  ")
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .collect();
        assert_eq!(header, ["Method", "Train PLCC", "Valid PLCC"]);
        assert!(text.contains("0.3649"));
    }
}
