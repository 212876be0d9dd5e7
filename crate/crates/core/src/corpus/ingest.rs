use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Deserialize;
use serde_json::Value;

use super::{ImageRef, RawItem};
use crate::error::{Error, Result};

#[derive(Deserialize)]
struct RawRecord {
    #[serde(alias = "parent_asin")]
    item_id: Option<String>,
    main_category: Option<String>,
    title: Option<String>,
    features: Option<Vec<String>>,
    description: Option<Vec<String>>,
    average_rating: Option<f64>,
    rating_number: Option<u64>,
    images: Option<Value>,
}

/// Parses one JSON object into a [`RawItem`]. `line` is 1-based and is used
/// for the fallback id and for error messages.
pub fn parse_line(text: &str, line: usize) -> Result<RawItem> {
    let rec: RawRecord = serde_json::from_str(text).map_err(|e| Error::Parse {
        line,
        message: e.to_string(),
    })?;
    if let Some(r) = rec.average_rating {
        if !(1.0..=5.0).contains(&r) {
            return Err(Error::Parse {
                line,
                message: format!("average_rating {r} outside [1, 5]"),
            });
        }
    }
    Ok(RawItem {
        item_id: rec.item_id.unwrap_or_else(|| format!("line-{line}")),
        main_category: rec.main_category,
        title: rec.title,
        features: rec.features,
        description: rec.description,
        average_rating: rec.average_rating,
        rating_number: rec.rating_number,
        image: rec.images.as_ref().and_then(ImageRef::from_json),
    })
}

/// Streaming JSON-lines reader yielding `(line_number, item)` pairs. Blank
/// lines are skipped.
pub struct JsonlReader<R> {
    lines: std::io::Lines<R>,
    line: usize,
}

impl<R: BufRead> JsonlReader<R> {
    pub fn new(reader: R) -> Self {
        Self {
            lines: reader.lines(),
            line: 0,
        }
    }
}

impl JsonlReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::new(BufReader::new(file)))
    }
}

impl<R: BufRead> Iterator for JsonlReader<R> {
    type Item = (usize, Result<RawItem>);

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let text = self.lines.next()?;
            self.line += 1;
            let line = self.line;
            match text {
                Err(e) => {
                    return Some((
                        line,
                        Err(Error::Parse {
                            line,
                            message: e.to_string(),
                        }),
                    ))
                }
                Ok(t) if t.trim().is_empty() => continue,
                Ok(t) => return Some((line, parse_line(&t, line))),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct SkippedLine {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Default)]
pub struct Ingested {
    pub items: Vec<RawItem>,
    pub skipped: Vec<SkippedLine>,
}

/// Reads a whole JSON-lines file. Malformed lines abort unless `lenient`, in
/// which case they are recorded in [`Ingested::skipped`].
pub fn ingest_jsonl(path: &Path, lenient: bool) -> Result<Ingested> {
    collect(JsonlReader::open(path)?, lenient)
}

pub fn ingest_reader<R: BufRead>(reader: R, lenient: bool) -> Result<Ingested> {
    collect(JsonlReader::new(reader), lenient)
}

fn collect<R: BufRead>(reader: JsonlReader<R>, lenient: bool) -> Result<Ingested> {
    let mut out = Ingested::default();
    for (line, parsed) in reader {
        match parsed {
            Ok(item) => out.items.push(item),
            Err(e) if lenient => {
                log::warn!("skipping line {line}: {e}");
                out.skipped.push(SkippedLine {
                    line,
                    message: e.to_string(),
                });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    const FULL: &str = r#"{"parent_asin":"B1","main_category":"Books","title":"A title","features":["f1","f2"],"description":["d"],"average_rating":4.5,"rating_number":12,"images":{"width":1,"height":1,"pixels":[1,2,3]}}"#;

    #[test]
    fn full_record() {
        let item = parse_line(FULL, 1).unwrap();
        assert_eq!(item.item_id, "B1");
        assert_eq!(item.main_category.as_deref(), Some("Books"));
        assert_eq!(item.features.as_ref().unwrap().len(), 2);
        assert_eq!(item.average_rating, Some(4.5));
        assert_eq!(item.rating_number, Some(12));
        assert!(matches!(item.image, Some(ImageRef::Inline(ref g)) if g.pixels == [1, 2, 3]));
    }

    #[test]
    fn missing_rating_is_absent_not_default() {
        let item = parse_line(r#"{"item_id":"a","title":"t","rating_number":null}"#, 3).unwrap();
        assert_eq!(item.average_rating, None);
        assert_eq!(item.rating_number, None);
        assert_eq!(item.features, None);
    }

    #[test]
    fn fallback_id_uses_line_number() {
        assert_eq!(parse_line("{}", 7).unwrap().item_id, "line-7");
    }

    #[test]
    fn out_of_range_rating_is_a_parse_error() {
        let err = parse_line(r#"{"average_rating":5.5}"#, 2).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        assert!(parse_line(r#"{"rating_number":-1}"#, 1).is_err());
    }

    #[test]
    fn lenient_ingest_records_skips() {
        let data = format!("{FULL}\n{FULL}\nnot json\n\n{FULL}\n");
        let got = ingest_reader(Cursor::new(data.clone()), true).unwrap();
        assert_eq!(got.items.len(), 3);
        assert_eq!(got.skipped.len(), 1);
        assert_eq!(got.skipped[0].line, 3);

        let err = ingest_reader(Cursor::new(data), false).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = ingest_jsonl(Path::new("/definitely/not/here.jsonl"), true).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
