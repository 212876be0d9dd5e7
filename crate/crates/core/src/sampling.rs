//! Per-category quota sampling, rating stratification and the seeded
//! train/validation/test split.
//!
//! Randomness follows the scheme documented in [`crate::rng`]: category `c`
//! draws from stream `(seed, "sample:" + c)` and stratum `s` from
//! `(seed, "split:" + s)`, where `s` is the stratum's display form (`"4.5"`,
//! `"rare"`).

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{csv_io, CleanItem};
use crate::error::{Error, Result};
use crate::rng;

pub const DEFAULT_FRACTION: f64 = 0.2;
pub const DEFAULT_FLOOR: usize = 10_000;
pub const DEFAULT_RARE_THRESHOLD: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub fraction: f64,
    pub floor: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            fraction: DEFAULT_FRACTION,
            floor: DEFAULT_FLOOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryQuota {
    pub category: String,
    pub n: usize,
    pub quota: usize,
}

/// `min(n, max(ceil(fraction * n), floor))`.
///
/// The product is snapped to the nearest integer first when it is within
/// 1e-9 of it, so `0.2 * 100_000` counts as 20,000 rather than 20,001.
pub fn category_quota(n: usize, fraction: f64, floor: usize) -> usize {
    assert!(fraction > 0.0 && fraction <= 1.0, "fraction must lie in (0, 1]");
    let exact = fraction * n as f64;
    let nearest = exact.round();
    let proportional = if (exact - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest
    } else {
        exact.ceil()
    } as usize;
    n.min(proportional.max(floor))
}

/// Uniform sample of exactly `quota` items without replacement, returned in
/// input order.
pub fn sample_category(items: &[CleanItem], quota: usize, seed: u64, category: &str) -> Result<Vec<CleanItem>> {
    Ok(sample_indices(items.len(), quota, seed, category)?
        .into_iter()
        .map(|i| items[i].clone())
        .collect())
}

fn sample_indices(population: usize, quota: usize, seed: u64, category: &str) -> Result<Vec<usize>> {
    if quota > population {
        return Err(Error::Quota { quota, population });
    }
    let mut order: Vec<usize> = (0..population).collect();
    rng::shuffle(&mut rng::stream(seed, &format!("sample:{category}")), &mut order);
    order.truncate(quota);
    order.sort_unstable();
    Ok(order)
}

/// Applies [`category_quota`] and [`sample_category`] to every category.
/// The sample keeps input order; quotas are listed by category name.
pub fn sample_corpus(
    items: &[CleanItem],
    config: &SamplingConfig,
    seed: u64,
) -> Result<(Vec<CleanItem>, Vec<CategoryQuota>)> {
    if !(config.fraction > 0.0 && config.fraction <= 1.0) {
        return Err(Error::Config(format!(
            "sampling fraction {} outside (0, 1]",
            config.fraction
        )));
    }
    let mut by_category: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, item) in items.iter().enumerate() {
        by_category.entry(&item.main_category).or_default().push(i);
    }
    let mut chosen = Vec::new();
    let mut quotas = Vec::with_capacity(by_category.len());
    for (category, members) in by_category {
        let quota = category_quota(members.len(), config.fraction, config.floor);
        chosen.extend(
            sample_indices(members.len(), quota, seed, category)?
                .into_iter()
                .map(|k| members[k]),
        );
        quotas.push(CategoryQuota {
            category: category.to_string(),
            n: members.len(),
            quota,
        });
    }
    chosen.sort_unstable();
    Ok((chosen.into_iter().map(|i| items[i].clone()).collect(), quotas))
}

/// A stratum is either one exact rating value or the shared rare bucket.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Stratum {
    Rating(f64),
    Rare,
}

impl Eq for Stratum {}

impl Ord for Stratum {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Stratum::Rating(a), Stratum::Rating(b)) => a.total_cmp(b),
            (Stratum::Rating(_), Stratum::Rare) => Ordering::Less,
            (Stratum::Rare, Stratum::Rating(_)) => Ordering::Greater,
            (Stratum::Rare, Stratum::Rare) => Ordering::Equal,
        }
    }
}

impl PartialOrd for Stratum {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Stratum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stratum::Rating(r) => write!(f, "{r}"),
            Stratum::Rare => f.write_str("rare"),
        }
    }
}

/// Stratum of each item (aligned with `items`). Rating values seen at most
/// `rare_threshold` times share the rare bucket.
pub fn stratify(items: &[CleanItem], rare_threshold: usize) -> Vec<Stratum> {
    let mut counts: HashMap<u64, usize> = HashMap::new();
    for item in items {
        *counts.entry(item.average_rating.to_bits()).or_default() += 1;
    }
    items
        .iter()
        .map(|item| {
            if counts[&item.average_rating.to_bits()] > rare_threshold {
                Stratum::Rating(item.average_rating)
            } else {
                Stratum::Rare
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: u32,
    pub validation: u32,
    pub test: u32,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 8,
            validation: 1,
            test: 1,
        }
    }
}

impl SplitRatios {
    fn parts(&self) -> [u64; 3] {
        [self.train.into(), self.validation.into(), self.test.into()]
    }

    /// Largest-remainder apportionment of `n` items; ties go to the earlier
    /// split (train, then validation).
    pub fn apportion(&self, n: usize) -> [usize; 3] {
        let parts = self.parts();
        let total: u64 = parts.iter().sum();
        let n = n as u64;
        let mut counts = parts.map(|p| (n * p / total) as usize);
        let remainders = parts.map(|p| n * p % total);
        let leftover = n as usize - counts.iter().sum::<usize>();
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| remainders[b].cmp(&remainders[a]).then(a.cmp(&b)));
        for &k in order.iter().take(leftover) {
            counts[k] += 1;
        }
        counts
    }
}

impl FromStr for SplitRatios {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<u32> = s
            .split(':')
            .map(|p| p.trim().parse::<u32>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Config(format!("ratios `{s}`: {e}")))?;
        match parts[..] {
            [train, validation, test] if train > 0 && validation > 0 && test > 0 => Ok(Self {
                train,
                validation,
                test,
            }),
            _ => Err(Error::Config(format!(
                "ratios `{s}` must be three positive integers like 8:1:1"
            ))),
        }
    }
}

impl fmt::Display for SplitRatios {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.train, self.validation, self.test)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub item_id: String,
    pub split: Split,
    pub stratum: String,
}

/// Stratified split. Within each stratum the members (in input order) are
/// shuffled and cut into consecutive train/validation/test runs sized by
/// [`SplitRatios::apportion`]. The result is aligned with `items`.
pub fn split(items: &[CleanItem], strata: &[Stratum], ratios: SplitRatios, seed: u64) -> Result<Vec<SplitAssignment>> {
    if items.len() != strata.len() {
        return Err(Error::LengthMismatch(format!(
            "{} items but {} strata",
            items.len(),
            strata.len()
        )));
    }
    let mut members: BTreeMap<Stratum, Vec<usize>> = BTreeMap::new();
    for (i, s) in strata.iter().enumerate() {
        members.entry(*s).or_default().push(i);
    }
    let mut assigned: Vec<Option<Split>> = vec![None; items.len()];
    for (stratum, mut idx) in members {
        rng::shuffle(&mut rng::stream(seed, &format!("split:{stratum}")), &mut idx);
        let [n_train, n_val, _] = ratios.apportion(idx.len());
        for (pos, &i) in idx.iter().enumerate() {
            assigned[i] = Some(if pos < n_train {
                Split::Train
            } else if pos < n_train + n_val {
                Split::Validation
            } else {
                Split::Test
            });
        }
    }
    Ok(items
        .iter()
        .zip(strata)
        .zip(assigned)
        .map(|((item, stratum), split)| SplitAssignment {
            item_id: item.item_id.clone(),
            split: split.expect("every stratum member is assigned"),
            stratum: stratum.to_string(),
        })
        .collect())
}

pub fn write_splits_csv(path: &Path, assignments: &[SplitAssignment]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    for a in assignments {
        w.serialize(a).map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_splits_csv(path: &Path) -> Result<Vec<SplitAssignment>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    r.deserialize()
        .enumerate()
        .map(|(i, rec)| {
            rec.map_err(|e| Error::Parse {
                line: i + 2,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn write_quotas_csv(path: &Path, quotas: &[CategoryQuota]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    for q in quotas {
        w.serialize(q).map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct SplitSets<T> {
    pub train: Vec<T>,
    pub validation: Vec<T>,
    pub test: Vec<T>,
}

impl<T> Default for SplitSets<T> {
    fn default() -> Self {
        Self {
            train: Vec::new(),
            validation: Vec::new(),
            test: Vec::new(),
        }
    }
}

impl<T> SplitSets<T> {
    pub fn get(&self, split: Split) -> &[T] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }
}

/// Routes items to their assigned split, preserving input order. Items
/// without an assignment are dropped; assignments naming unknown items are
/// ignored.
pub fn partition(items: Vec<CleanItem>, assignments: &[SplitAssignment]) -> SplitSets<CleanItem> {
    let lookup: HashMap<&str, Split> = assignments.iter().map(|a| (a.item_id.as_str(), a.split)).collect();
    let mut sets = SplitSets::default();
    for item in items {
        match lookup.get(item.item_id.as_str()) {
            Some(Split::Train) => sets.train.push(item),
            Some(Split::Validation) => sets.validation.push(item),
            Some(Split::Test) => sets.test.push(item),
            None => {}
        }
    }
    sets
}
