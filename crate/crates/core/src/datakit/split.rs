//! Tracklet-respecting train/val/test splits.
//!
//! The atomic unit of assignment is the tracklet (optionally the identity,
//! which groups all of a person's tracklets). The split is resampled a
//! bounded number of times until every split holds at least one positive and
//! one negative sample of every attribute, or reported infeasible.

use super::manifest::SampleRecord;
use super::{DataError, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

pub const MAX_SPLIT_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Val, SplitName::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        }
    }
}

impl std::str::FromStr for SplitName {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(SplitName::Train),
            "val" => Ok(SplitName::Val),
            "test" => Ok(SplitName::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitUnit {
    Tracklet,
    Identity,
}

/// Tracklet id -> split, with the seed and ratio that produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub tracklets: BTreeMap<u32, SplitName>,
    pub seed: u64,
    pub ratio: [u32; 3],
    pub unit: SplitUnit,
}

impl SplitAssignment {
    pub fn split_of(&self, record: &SampleRecord) -> Option<SplitName> {
        self.tracklets.get(&record.tracklet).copied()
    }

    /// Records belonging to one split, in manifest order.
    pub fn select<'a>(
        &self,
        records: &'a [SampleRecord],
        split: SplitName,
    ) -> Vec<&'a SampleRecord> {
        records
            .iter()
            .filter(|r| self.split_of(r) == Some(split))
            .collect()
    }
}

pub fn read_split(path: &Path) -> Result<SplitAssignment> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| DataError::Parse {
        line: 0,
        msg: format!("bad split file: {e}"),
    })
}

pub fn write_split(split: &SplitAssignment, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(split).expect("split serializes");
    super::atomic_write(path, text.as_bytes())
}

fn unit_key(record: &SampleRecord, unit: SplitUnit) -> u32 {
    match unit {
        SplitUnit::Tracklet => record.tracklet,
        SplitUnit::Identity => record.id,
    }
}

/// Counts per split hitting the ratio within one unit.
fn target_counts(n: usize, ratio: [u32; 3]) -> [usize; 3] {
    let total: u32 = ratio.iter().sum();
    let n_val = ((n as f64 * ratio[1] as f64 / total as f64).round() as usize).max(1);
    let n_test = ((n as f64 * ratio[2] as f64 / total as f64).round() as usize).max(1);
    let n_train = n - n_val - n_test;
    [n_train, n_val, n_test]
}

fn coverage_failures(
    records: &[SampleRecord],
    assignment: &BTreeMap<u32, SplitName>,
    num_attributes: usize,
) -> Vec<String> {
    if num_attributes == 0 {
        return Vec::new();
    }
    // [split][attr] -> (has_positive, has_negative)
    let mut seen_flat = vec![(false, false); 3 * num_attributes];
    for r in records {
        let s = assignment[&r.tracklet] as usize;
        for (m, &bit) in r.attrs.iter().enumerate() {
            let cell = &mut seen_flat[s * num_attributes + m];
            if bit == 1 {
                cell.0 = true;
            } else {
                cell.1 = true;
            }
        }
    }
    let mut failures = Vec::new();
    for m in 0..num_attributes {
        for (s, name) in SplitName::ALL.iter().enumerate() {
            let (pos, neg) = seen_flat[s * num_attributes + m];
            if !pos || !neg {
                failures.push(format!(
                    "attribute {m} lacks {} in {}",
                    if pos { "negatives" } else { "positives" },
                    name.as_str()
                ));
            }
        }
    }
    failures
}

/// Shuffle split units by seed and assign them to hit `ratio` within one
/// unit, resampling until per-attribute coverage holds in every split.
pub fn tracklet_split(
    records: &[SampleRecord],
    num_attributes: usize,
    ratio: [u32; 3],
    seed: u64,
    unit: SplitUnit,
) -> Result<SplitAssignment> {
    if ratio.iter().any(|&r| r == 0) {
        return Err(DataError::Spec("split ratio parts must be positive".into()));
    }
    let mut units: Vec<u32> = Vec::new();
    {
        let mut seen = std::collections::BTreeSet::new();
        for r in records {
            if seen.insert(unit_key(r, unit)) {
                units.push(unit_key(r, unit));
            }
        }
    }
    units.sort_unstable();
    if units.len() < 3 {
        return Err(DataError::Spec(format!(
            "need at least 3 split units, have {}",
            units.len()
        )));
    }
    let counts = target_counts(units.len(), ratio);

    let mut last_failures = Vec::new();
    for attempt in 0..MAX_SPLIT_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt as u64 * 0x9e3779b9));
        let mut shuffled = units.clone();
        shuffled.shuffle(&mut rng);
        let mut unit_split: BTreeMap<u32, SplitName> = BTreeMap::new();
        let mut i = 0usize;
        for (c, name) in counts.iter().zip(SplitName::ALL) {
            for &u in &shuffled[i..i + c] {
                unit_split.insert(u, name);
            }
            i += c;
        }
        // tracklet -> split, derived from its unit
        let mut tracklets: BTreeMap<u32, SplitName> = BTreeMap::new();
        for r in records {
            tracklets.insert(r.tracklet, unit_split[&unit_key(r, unit)]);
        }
        last_failures = coverage_failures(records, &tracklets, num_attributes);
        if last_failures.is_empty() {
            return Ok(SplitAssignment {
                tracklets,
                seed,
                ratio,
                unit,
            });
        }
    }
    Err(DataError::Infeasible(last_failures))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records(n_tracklets: u32, per: u32) -> Vec<SampleRecord> {
        let mut out = Vec::new();
        for t in 0..n_tracklets {
            for j in 0..per {
                out.push(SampleRecord {
                    path: format!("img_{t}_{j}.ppm"),
                    // alternate bits within each tracklet so coverage is feasible
                    attrs: vec![(j % 2) as u8],
                    id: t,
                    tracklet: t,
                    camera: 0,
                    scene: 0,
                    w: 64,
                    h: 96,
                });
            }
        }
        out
    }

    #[test]
    fn ten_tracklets_split_8_1_1() {
        let recs = records(10, 3);
        let s = tracklet_split(&recs, 1, [8, 1, 1], 7, SplitUnit::Tracklet).unwrap();
        let count = |name| s.tracklets.values().filter(|&&v| v == name).count();
        assert_eq!(count(SplitName::Train), 8);
        assert_eq!(count(SplitName::Val), 1);
        assert_eq!(count(SplitName::Test), 1);
    }

    #[test]
    fn same_seed_same_assignment() {
        let recs = records(20, 2);
        let a = tracklet_split(&recs, 1, [8, 1, 1], 42, SplitUnit::Tracklet).unwrap();
        let b = tracklet_split(&recs, 1, [8, 1, 1], 42, SplitUnit::Tracklet).unwrap();
        assert_eq!(a.tracklets, b.tracklets);
    }

    #[test]
    fn infeasible_reports_attributes() {
        // every sample positive: no split can hold a negative
        let mut recs = records(12, 1);
        for r in &mut recs {
            r.attrs = vec![1];
        }
        match tracklet_split(&recs, 1, [8, 1, 1], 1, SplitUnit::Tracklet) {
            Err(DataError::Infeasible(fails)) => assert!(!fails.is_empty()),
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn identity_unit_groups_tracklets() {
        let mut recs = records(20, 2);
        // two tracklets per identity
        for (i, r) in recs.iter_mut().enumerate() {
            r.id = (i / 4) as u32;
        }
        let s = tracklet_split(&recs, 1, [8, 1, 1], 5, SplitUnit::Identity).unwrap();
        for group in recs.chunks(4) {
            for r in group {
                assert_eq!(s.tracklets[&group[0].tracklet], s.tracklets[&r.tracklet]);
            }
        }
    }
}
