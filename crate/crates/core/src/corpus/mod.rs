//! Product-record ingestion, cleaning, quality filtering and feature
//! preparation.

mod image;
mod ingest;
mod text;
mod tokenize;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use self::image::{prepare_image, ImageTensor, Normalization, PixelGrid, IMAGENET_MEAN, IMAGENET_STD};
pub use self::ingest::{ingest_jsonl, ingest_reader, parse_line, Ingested, JsonlReader, SkippedLine};
pub use self::text::{build_text, clean_text, filter_item, FilterOutcome, RejectReason};
pub use self::tokenize::{for_each_token, Tokenizer, DEFAULT_MAX_TOKENS, DEFAULT_VOCAB_SIZE};

use crate::error::{Error, Result};

/// Where an item's picture comes from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ImageRef {
    Inline(PixelGrid),
    /// Local file path, or a URL (URLs are never fetched).
    Location(String),
}

impl ImageRef {
    /// Accepts an inline grid object, a path string, or an array whose first
    /// element is either (Amazon-style `{"large": url, ...}` entries map to a
    /// location). Anything else is treated as no image.
    pub fn from_json(value: &Value) -> Option<Self> {
        match value {
            Value::Array(entries) => entries.first().and_then(Self::from_json),
            Value::String(s) if !s.is_empty() => Some(ImageRef::Location(s.clone())),
            Value::Object(map) if map.contains_key("pixels") => serde_json::from_value(value.clone()).ok(),
            Value::Object(map) => ["hi_res", "large", "thumb"]
                .iter()
                .find_map(|k| map.get(*k).and_then(Value::as_str))
                .map(|s| ImageRef::Location(s.to_string())),
            _ => None,
        }
    }

    /// Loads the pixels. Remote URLs resolve to `None`.
    pub fn resolve(&self, base_dir: Option<&Path>) -> Result<Option<PixelGrid>> {
        match self {
            ImageRef::Inline(grid) => Ok(Some(grid.clone())),
            ImageRef::Location(loc) if loc.starts_with("http://") || loc.starts_with("https://") => Ok(None),
            ImageRef::Location(loc) => {
                let path = match base_dir {
                    Some(base) if Path::new(loc).is_relative() => base.join(loc),
                    _ => PathBuf::from(loc),
                };
                PixelGrid::load(&path).map(Some)
            }
        }
    }
}

/// A product record as read from the metadata file. Absent fields stay `None`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RawItem {
    pub item_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub main_category: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub description: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub average_rating: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rating_number: Option<u64>,
    #[serde(rename = "images", skip_serializing_if = "Option::is_none")]
    pub image: Option<ImageRef>,
}

impl RawItem {
    /// First of the six essential fields that is absent, in schema order.
    pub fn first_missing_field(&self) -> Option<&'static str> {
        [
            ("main_category", self.main_category.is_none()),
            ("title", self.title.is_none()),
            ("features", self.features.is_none()),
            ("description", self.description.is_none()),
            ("average_rating", self.average_rating.is_none()),
            ("rating_number", self.rating_number.is_none()),
        ]
        .into_iter()
        .find_map(|(name, missing)| missing.then_some(name))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub min_chars: usize,
    pub separator: String,
    pub vocab_size: usize,
    pub max_tokens: usize,
    pub image_size: u32,
    pub normalization: Normalization,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            min_chars: 30,
            separator: " ".into(),
            vocab_size: DEFAULT_VOCAB_SIZE,
            max_tokens: DEFAULT_MAX_TOKENS,
            image_size: 32,
            normalization: Normalization::default(),
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.image_size == 0 {
            return Err(Error::Config("vocab_size and image_size must be positive".into()));
        }
        self.normalization.validate()
    }

    pub fn tokenizer(&self) -> Tokenizer {
        Tokenizer::new(self.vocab_size, self.max_tokens)
    }
}

/// A filtered, concatenated and tokenized record ready for the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanItem {
    pub item_id: String,
    pub main_category: String,
    pub text: String,
    pub token_ids: Vec<u32>,
    pub token_count: usize,
    pub average_rating: f64,
    pub rating_number: u64,
    pub has_image: bool,
    #[serde(skip)]
    pub image: Option<ImageTensor>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Rejection {
    pub item_id: String,
    pub reason: RejectReason,
}

/// Applies filter, tokenizer and image preparation with a fixed config.
#[derive(Debug, Clone)]
pub struct Preprocessor {
    config: CorpusConfig,
    tokenizer: Tokenizer,
    base_dir: Option<PathBuf>,
}

impl Preprocessor {
    pub fn new(config: CorpusConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            tokenizer: config.tokenizer(),
            config,
            base_dir: None,
        })
    }

    /// Directory that relative image paths are resolved against.
    pub fn with_base_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.base_dir = Some(dir.into());
        self
    }

    pub fn config(&self) -> &CorpusConfig {
        &self.config
    }

    pub fn process(&self, raw: &RawItem) -> std::result::Result<CleanItem, RejectReason> {
        let text = match filter_item(raw, self.config.min_chars, &self.config.separator) {
            FilterOutcome::Accept(text) => text,
            FilterOutcome::Reject(reason) => return Err(reason),
        };
        let token_ids = self.tokenizer.tokenize(&text);
        let image = raw.image.as_ref().and_then(|r| self.load_image(&raw.item_id, r));
        Ok(CleanItem {
            item_id: raw.item_id.clone(),
            main_category: raw.main_category.clone().unwrap_or_default(),
            token_count: token_ids.len(),
            token_ids,
            text,
            average_rating: raw.average_rating.unwrap_or_default(),
            rating_number: raw.rating_number.unwrap_or_default(),
            has_image: image.is_some(),
            image,
        })
    }

    // Unusable pictures degrade to the text-only path instead of dropping the item.
    fn load_image(&self, item_id: &str, image: &ImageRef) -> Option<ImageTensor> {
        let prepared = image.resolve(self.base_dir.as_deref()).and_then(|grid| {
            grid.map(|g| prepare_image(&g, self.config.image_size, &self.config.normalization))
                .transpose()
        });
        match prepared {
            Ok(tensor) => tensor,
            Err(e) => {
                log::warn!("item {item_id}: image unusable, using text only: {e}");
                None
            }
        }
    }

    pub fn clean_all<'a>(&self, raws: impl IntoIterator<Item = &'a RawItem>) -> CleanedCorpus {
        let mut out = CleanedCorpus::default();
        for raw in raws {
            match self.process(raw) {
                Ok(item) => out.items.push(item),
                Err(reason) => out.rejections.push(Rejection {
                    item_id: raw.item_id.clone(),
                    reason,
                }),
            }
        }
        out
    }
}

#[derive(Debug, Default)]
pub struct CleanedCorpus {
    pub items: Vec<CleanItem>,
    pub rejections: Vec<Rejection>,
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for rec in records {
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a cleaned dataset file. Pixel payloads are not stored there, so every
/// returned item has `image == None`.
pub fn read_clean_jsonl(path: &Path) -> Result<Vec<CleanItem>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut items = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        items.push(item);
    }
    Ok(items)
}

pub fn write_rejections(path: &Path, rejections: &[Rejection]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    for r in rejections {
        w.serialize(r).map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_io(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(id: &str, title: &str) -> RawItem {
        RawItem {
            item_id: id.into(),
            main_category: Some("Toys".into()),
            title: Some(title.into()),
            features: Some(vec!["soft".into()]),
            description: Some(vec!["A plush bear for kids".into()]),
            average_rating: Some(4.2),
            rating_number: Some(17),
            image: Some(ImageRef::Inline(PixelGrid::uniform(4, 4, [10, 20, 30]))),
        }
    }

    #[test]
    fn processes_accepted_item() {
        let pre = Preprocessor::new(CorpusConfig {
            image_size: 8,
            ..CorpusConfig::default()
        })
        .unwrap();
        let item = pre.process(&raw("a", "Teddy\tbear")).unwrap();
        assert_eq!(item.text, "Toys Teddy bear soft A plush bear for kids");
        assert_eq!(item.token_count, item.token_ids.len());
        assert_eq!(item.token_count, 9);
        assert!(item.has_image);
        assert_eq!(item.image.as_ref().unwrap().shape(), (3, 8, 8));
    }

    #[test]
    fn collects_rejections() {
        let pre = Preprocessor::new(CorpusConfig::default()).unwrap();
        let mut missing = raw("b", "x");
        missing.features = None;
        let mut short = raw("c", "x");
        short.description = Some(vec![]);
        let out = pre.clean_all([&raw("a", "ok"), &missing, &short]);
        assert_eq!(out.items.len(), 1);
        assert_eq!(out.rejections.len(), 2);
        assert_eq!(out.rejections[0].reason.to_string(), "missing_field(features)");
        assert_eq!(out.rejections[1].reason.to_string(), "too_short");
    }

    #[test]
    fn remote_and_broken_images_fall_back_to_text_only() {
        let pre = Preprocessor::new(CorpusConfig::default()).unwrap();
        let mut r = raw("a", "ok");
        r.image = Some(ImageRef::Location("https://example.com/x.jpg".into()));
        assert!(!pre.process(&r).unwrap().has_image);
        r.image = Some(ImageRef::Location("/no/such/file.png".into()));
        assert!(!pre.process(&r).unwrap().has_image);
    }

    #[test]
    fn amazon_style_image_list() {
        let v: Value = serde_json::json!([{"thumb": "t.jpg", "large": "https://x/l.jpg"}]);
        assert_eq!(
            ImageRef::from_json(&v),
            Some(ImageRef::Location("https://x/l.jpg".into()))
        );
        assert_eq!(ImageRef::from_json(&serde_json::json!([])), None);
    }

    #[test]
    fn clean_jsonl_round_trip_drops_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clean.jsonl");
        let pre = Preprocessor::new(CorpusConfig::default()).unwrap();
        let item = pre.process(&raw("a", "ok")).unwrap();
        write_jsonl(&path, [&item]).unwrap();
        let back = read_clean_jsonl(&path).unwrap();
        assert_eq!(back.len(), 1);
        assert!(back[0].image.is_none());
        assert!(back[0].has_image);
        assert_eq!(back[0].token_ids, item.token_ids);
    }

    #[test]
    fn raw_item_serializes_with_schema_names() {
        let json = serde_json::to_string(&raw("a", "t")).unwrap();
        let back = parse_line(&json, 1).unwrap();
        assert_eq!(back, raw("a", "t"));
        assert!(json.contains("\"images\""));
    }
}
