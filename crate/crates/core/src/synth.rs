//! Seeded synthetic product corpora.
//!
//! Each item's text is its category, a four-word title drawn from a neutral
//! word list, and `n` feature words drawn from a separate signal list. Its
//! image is a near-uniform grey square. The clean rating is linear in the
//! cleaned token count and in the image's mean intensity:
//!
//! `q = 1.5 + (token_count - 5) / 20 + 1.875 * (mean_pixel - 0.1)`
//!
//! which spans [1.5, 5.0] for `n <= 40` and intensities in [0.1, 0.9].
//! Items without an image use a mean intensity of 0.5.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{write_jsonl, ImageRef, PixelGrid, RawItem, Tokenizer};
use crate::error::{Error, Result};
use crate::rng;

const TITLE_WORDS: [&str; 12] = [
    "sturdy", "classic", "compact", "bright", "smooth", "modern", "simple", "gentle", "steady", "rustic", "vibrant",
    "polished",
];
const SIGNAL_WORDS: [&str; 4] = ["premium", "deluxe", "superb", "excellent"];
const TITLE_LEN: usize = 4;
const PIXEL_LO: f64 = 0.1;
const PIXEL_HI: f64 = 0.9;
const MISSING_PIXEL: f64 = 0.5;

/// How observed ratings deviate from the clean rating.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LabelNoise {
    None,
    /// Gaussian noise with `sigma(r) = sigma_min + (sigma_max - sigma_min) / (1 + ln(1 + r))`
    /// for rating count `r`; items with `r < junk_below` get a uniformly random
    /// rating instead.
    Heteroscedastic {
        sigma_min: f64,
        sigma_max: f64,
        junk_below: u64,
    },
}

impl LabelNoise {
    pub fn sigma(&self, rating_number: u64) -> f64 {
        match *self {
            LabelNoise::None => 0.0,
            LabelNoise::Heteroscedastic {
                sigma_min, sigma_max, ..
            } => sigma_min + (sigma_max - sigma_min) / (1.0 + (rating_number as f64).ln_1p()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_items: usize,
    pub categories: Vec<String>,
    pub image_size: u32,
    /// Share of items that carry an image.
    pub image_fraction: f64,
    /// Share of items made deliberately invalid (missing fields or short text).
    pub bad_fraction: f64,
    pub max_signal_words: usize,
    /// Rating counts are log-uniform on `[0, max_rating_number]`.
    pub max_rating_number: u64,
    pub noise: LabelNoise,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_items: 500,
            categories: vec!["Beauty".into(), "Books".into(), "Electronics".into()],
            image_size: 16,
            image_fraction: 0.9,
            bad_fraction: 0.0,
            max_signal_words: 40,
            max_rating_number: 10_000,
            noise: LabelNoise::None,
        }
    }
}

impl SynthConfig {
    /// Corpus whose label noise shrinks as the rating count grows, with
    /// rarely rated items carrying junk labels.
    pub fn heteroscedastic(n_items: usize) -> Self {
        Self {
            n_items,
            noise: LabelNoise::Heteroscedastic {
                sigma_min: 0.05,
                sigma_max: 1.5,
                junk_below: 3,
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let problem = if self.categories.is_empty() {
            Some("at least one category is required".to_string())
        } else if self.categories.iter().any(|c| c.split_whitespace().count() != 1) {
            Some("category names must be single words".to_string())
        } else if !(0.0..=1.0).contains(&self.image_fraction) || !(0.0..=1.0).contains(&self.bad_fraction) {
            Some("fractions must lie in [0, 1]".to_string())
        } else if self.image_size == 0 {
            Some("image size must be positive".to_string())
        } else if self.max_signal_words == 0 {
            Some("max_signal_words must be positive".to_string())
        } else {
            None
        };
        problem.map_or(Ok(()), |p| Err(Error::Config(p)))
    }
}

/// The noise-free rating for a cleaned token count and mean image intensity
/// (`None` for a missing image).
pub fn clean_rating(token_count: usize, mean_pixel: Option<f64>, max_signal_words: usize) -> f64 {
    let n = token_count.saturating_sub(1 + TITLE_LEN) as f64;
    let pixel = mean_pixel.unwrap_or(MISSING_PIXEL);
    1.5 + 2.0 * n / max_signal_words as f64 + 1.875 * (pixel - PIXEL_LO)
}

fn pick<'a>(rng: &mut ChaCha8Rng, words: &[&'a str]) -> &'a str {
    words[rng::bounded(rng, words.len() as u64) as usize]
}

fn image(rng: &mut ChaCha8Rng, size: u32) -> (PixelGrid, f64) {
    let level = PIXEL_LO + (PIXEL_HI - PIXEL_LO) * rng.random::<f64>();
    let n = (size * size) as usize;
    let mut pixels = Vec::with_capacity(3 * n);
    for _ in 0..n {
        let jitter = rng.random_range(-6i32..=6);
        let v = ((level * 255.0).round() as i32 + jitter).clamp(0, 255) as u8;
        pixels.extend([v, v, v]);
    }
    let mean = pixels.iter().map(|&p| p as f64).sum::<f64>() / (pixels.len() as f64 * 255.0);
    (
        PixelGrid::new(size, size, pixels).expect("buffer sized to the grid"),
        mean,
    )
}

fn log_uniform_count(rng: &mut ChaCha8Rng, max: u64) -> u64 {
    let u: f64 = rng.random();
    ((u * (max as f64).ln_1p()).exp() - 1.0).floor().max(0.0) as u64
}

fn sabotage(item: &mut RawItem, kind: u64) {
    match kind {
        0 => item.average_rating = None,
        1 => item.rating_number = None,
        2 => item.title = None,
        _ => {
            item.title = Some("ok".into());
            item.features = Some(Vec::new());
        }
    }
}

/// Generates a corpus deterministically from `seed`.
pub fn generate(config: &SynthConfig, seed: u64) -> Result<Vec<RawItem>> {
    config.validate()?;
    let mut rng = rng::stream(seed, "synth");
    let tokenizer = Tokenizer::default();
    let mut items = Vec::with_capacity(config.n_items);
    for i in 0..config.n_items {
        let category = &config.categories[i % config.categories.len()];
        let title: Vec<&str> = (0..TITLE_LEN).map(|_| pick(&mut rng, &TITLE_WORDS)).collect();
        let n_signal = rng::bounded(&mut rng, config.max_signal_words as u64 + 1) as usize;
        let features: Vec<String> = (0..n_signal)
            .map(|_| pick(&mut rng, &SIGNAL_WORDS).to_string())
            .collect();
        let (image, mean_pixel) = if rng.random::<f64>() < config.image_fraction {
            let (grid, mean) = image(&mut rng, config.image_size);
            (Some(ImageRef::Inline(grid)), Some(mean))
        } else {
            (None, None)
        };
        let rating_number = log_uniform_count(&mut rng, config.max_rating_number);

        let token_count = 1 + TITLE_LEN + n_signal.min(tokenizer.max_tokens - 1 - TITLE_LEN);
        let clean = clean_rating(token_count, mean_pixel, config.max_signal_words);
        let observed = match config.noise {
            LabelNoise::Heteroscedastic { junk_below, .. } if rating_number < junk_below => rng.random_range(1.0..=5.0),
            noise => {
                let sigma = noise.sigma(rating_number);
                let eps = if sigma > 0.0 {
                    Normal::new(0.0, sigma).expect("positive sigma").sample(&mut rng)
                } else {
                    0.0
                };
                clean + eps
            }
        };
        let average_rating = (observed.clamp(1.0, 5.0) * 10.0).round() / 10.0;

        let mut item = RawItem {
            item_id: format!("syn-{i:06}"),
            main_category: Some(category.clone()),
            title: Some(title.join(" ")),
            features: Some(features),
            description: Some(Vec::new()),
            average_rating: Some(average_rating),
            rating_number: Some(rating_number),
            image,
        };
        if rng.random::<f64>() < config.bad_fraction {
            sabotage(&mut item, rng::bounded(&mut rng, 4));
        }
        items.push(item);
    }
    Ok(items)
}

pub fn write_raw_jsonl(path: &Path, items: &[RawItem]) -> Result<()> {
    write_jsonl(path, items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CorpusConfig, Preprocessor};

    #[test]
    fn generation_is_deterministic() {
        let cfg = SynthConfig {
            n_items: 50,
            ..SynthConfig::default()
        };
        assert_eq!(generate(&cfg, 7).unwrap(), generate(&cfg, 7).unwrap());
        assert_ne!(generate(&cfg, 7).unwrap(), generate(&cfg, 8).unwrap());
    }

    #[test]
    fn clean_items_pass_the_filter_with_exact_ratings() {
        let cfg = SynthConfig {
            n_items: 200,
            ..SynthConfig::default()
        };
        let raws = generate(&cfg, 1).unwrap();
        let prep = Preprocessor::new(CorpusConfig::default()).unwrap();
        let cleaned = prep.clean_all(&raws);
        assert!(cleaned.rejections.is_empty());
        for item in &cleaned.items {
            let mean = item.image.as_ref().map(|_| {
                let raw = raws.iter().find(|r| r.item_id == item.item_id).unwrap();
                match &raw.image {
                    Some(ImageRef::Inline(g)) => {
                        g.pixels.iter().map(|&p| p as f64).sum::<f64>() / (g.pixels.len() as f64 * 255.0)
                    }
                    _ => unreachable!(),
                }
            });
            let q = clean_rating(item.token_count, mean, cfg.max_signal_words);
            assert!((item.average_rating - (q * 10.0).round() / 10.0).abs() < 1e-9);
            assert!((1.0..=5.0).contains(&item.average_rating));
        }
    }

    #[test]
    fn bad_items_are_rejected() {
        let cfg = SynthConfig {
            n_items: 300,
            bad_fraction: 0.2,
            ..SynthConfig::default()
        };
        let raws = generate(&cfg, 3).unwrap();
        let prep = Preprocessor::new(CorpusConfig::default()).unwrap();
        let cleaned = prep.clean_all(&raws);
        assert!(!cleaned.rejections.is_empty());
        assert_eq!(cleaned.items.len() + cleaned.rejections.len(), 300);
    }

    #[test]
    fn noise_shrinks_with_rating_count() {
        let noise = SynthConfig::heteroscedastic(1).noise;
        assert!(noise.sigma(0) > noise.sigma(10));
        assert!(noise.sigma(10) > noise.sigma(10_000));
        assert_eq!(LabelNoise::None.sigma(0), 0.0);
    }
}
