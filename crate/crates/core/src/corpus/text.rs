use std::fmt;

use serde::{Serialize, Serializer};

use super::RawItem;
use crate::error::{Error, Result};

/// Replaces tabs, newlines, carriage returns (and any other control or
/// whitespace character) with a single space, collapsing runs and trimming
/// the ends.
pub fn clean_text(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for word in s
        .split(|c: char| c.is_whitespace() || c.is_control())
        .filter(|w| !w.is_empty())
    {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Joins category, title, features and description (in that order, lists in
/// list order) after cleaning each part. Parts that clean to nothing are
/// dropped so the separator never doubles up.
pub fn build_text(item: &RawItem, separator: &str) -> Result<String> {
    let category = item
        .main_category
        .as_deref()
        .ok_or(Error::MissingField("main_category"))?;
    let title = item.title.as_deref().ok_or(Error::MissingField("title"))?;
    let features = item.features.as_ref().ok_or(Error::MissingField("features"))?;
    let description = item.description.as_ref().ok_or(Error::MissingField("description"))?;

    let parts: Vec<String> = [category, title]
        .into_iter()
        .chain(features.iter().map(String::as_str))
        .chain(description.iter().map(String::as_str))
        .map(clean_text)
        .filter(|p| !p.is_empty())
        .collect();
    Ok(parts.join(separator))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RejectReason {
    MissingField(&'static str),
    TooShort { chars: usize, min_chars: usize },
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::MissingField(name) => write!(f, "missing_field({name})"),
            RejectReason::TooShort { .. } => f.write_str("too_short"),
        }
    }
}

impl Serialize for RejectReason {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FilterOutcome {
    /// Carries the built text so callers need not rebuild it.
    Accept(String),
    Reject(RejectReason),
}

/// Completeness and minimum-length filter. Length is counted in characters of
/// the concatenated, cleaned text; exactly `min_chars` is accepted.
pub fn filter_item(item: &RawItem, min_chars: usize, separator: &str) -> FilterOutcome {
    if let Some(name) = item.first_missing_field() {
        return FilterOutcome::Reject(RejectReason::MissingField(name));
    }
    let text = match build_text(item, separator) {
        Ok(text) => text,
        Err(Error::MissingField(name)) => return FilterOutcome::Reject(RejectReason::MissingField(name)),
        Err(_) => unreachable!("build_text only fails on missing fields"),
    };
    let chars = text.chars().count();
    if chars < min_chars {
        FilterOutcome::Reject(RejectReason::TooShort { chars, min_chars })
    } else {
        FilterOutcome::Accept(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn item(category: &str, title: &str, features: &[&str], description: &[&str]) -> RawItem {
        RawItem {
            item_id: "x".into(),
            main_category: Some(category.into()),
            title: Some(title.into()),
            features: Some(features.iter().map(|s| s.to_string()).collect()),
            description: Some(description.iter().map(|s| s.to_string()).collect()),
            average_rating: Some(4.0),
            rating_number: Some(3),
            image: None,
        }
    }

    #[test]
    fn clean_text_examples() {
        assert_eq!(clean_text("a\tb\nc\r"), "a b c");
        assert_eq!(clean_text("plain text"), "plain text");
        assert_eq!(clean_text(""), "");
        assert_eq!(clean_text("  a \t\t b  "), "a b");
        assert_eq!(clean_text("x\u{0007}y"), "x y");
    }

    #[test]
    fn build_text_orders_fields() {
        let it = item("Books", "T", &["f1", "f2"], &["d"]);
        assert_eq!(build_text(&it, " ").unwrap(), "Books T f1 f2 d");
        let it = item("cat", "title", &[], &["desc"]);
        assert_eq!(build_text(&it, " ").unwrap(), "cat title desc");
        let it = item("a\tb", "t\tt", &["f\tg"], &["d\r\ne"]);
        assert!(!build_text(&it, " ").unwrap().contains('\t'));
    }

    #[test]
    fn build_text_missing_field() {
        let mut it = item("c", "t", &[], &[]);
        it.title = None;
        assert!(matches!(build_text(&it, " "), Err(Error::MissingField("title"))));
    }

    #[test]
    fn filter_length_boundary() {
        // "cat " + 25 chars = 29, then 30
        let short = item("cat", &"t".repeat(25), &[], &[]);
        assert_eq!(build_text(&short, " ").unwrap().chars().count(), 29);
        assert_eq!(
            filter_item(&short, 30, " "),
            FilterOutcome::Reject(RejectReason::TooShort {
                chars: 29,
                min_chars: 30
            })
        );
        let exact = item("cat", &"t".repeat(26), &[], &[]);
        assert!(matches!(filter_item(&exact, 30, " "), FilterOutcome::Accept(t) if t.chars().count() == 30));
    }

    #[test]
    fn filter_missing_fields() {
        let mut it = item("cat", &"t".repeat(40), &[], &[]);
        it.rating_number = None;
        assert_eq!(
            filter_item(&it, 30, " "),
            FilterOutcome::Reject(RejectReason::MissingField("rating_number"))
        );
        assert_eq!(
            RejectReason::MissingField("rating_number").to_string(),
            "missing_field(rating_number)"
        );
        it.rating_number = Some(1);
        it.average_rating = None;
        assert_eq!(
            filter_item(&it, 30, " "),
            FilterOutcome::Reject(RejectReason::MissingField("average_rating"))
        );
    }

    proptest! {
        #[test]
        fn clean_text_is_idempotent(s in "\\PC*|[ \t\r\n\u{0}-\u{1f}a-z]{0,40}") {
            let once = clean_text(&s);
            prop_assert_eq!(clean_text(&once), once.clone());
            prop_assert!(!once.contains(['\t', '\n', '\r']));
            prop_assert_eq!(once.trim(), once.as_str());
        }

        #[test]
        fn accepted_items_are_complete_and_long(title in "[a-z \t\n]{0,60}", min in 0usize..50) {
            let it = item("c", &title, &["f"], &["d"]);
            if let FilterOutcome::Accept(text) = filter_item(&it, min, " ") {
                prop_assert!(text.chars().count() >= min);
                prop_assert!(it.first_missing_field().is_none());
                prop_assert!(!text.chars().any(char::is_control));
            }
        }
    }
}
