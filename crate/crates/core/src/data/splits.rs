use std::collections::BTreeMap;

use crate::data::metadata::{SampleRecord, Split, CLASS_NAMES};
use crate::error::{Error, Result};
use crate::network::NUM_CLASSES;
use crate::rng::{derive_seed, SeededRng};

/// Records per split and class after balancing.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SplitPlan {
    pub splits: BTreeMap<Split, [Vec<SampleRecord>; NUM_CLASSES]>,
}

impl SplitPlan {
    pub fn count(&self, split: Split, class: usize) -> usize {
        self.splits.get(&split).map_or(0, |c| c[class].len())
    }

    /// Records of one split, class by class.
    pub fn records(&self, split: Split) -> Vec<&SampleRecord> {
        self.splits
            .get(&split)
            .map(|c| c.iter().flatten().collect())
            .unwrap_or_default()
    }

    pub fn all_records(&self) -> Vec<&SampleRecord> {
        self.splits.values().flat_map(|c| c.iter().flatten()).collect()
    }
}

/// Down-samples every class of each split to that split's smallest class.
/// Selection is seeded per (split, class) and keeps the input order of the
/// surviving records. Splits without any records are left out.
pub fn build_balanced_splits(records: &[SampleRecord], seed: u64) -> Result<SplitPlan> {
    let mut grouped: BTreeMap<Split, [Vec<SampleRecord>; NUM_CLASSES]> = BTreeMap::new();
    for r in records {
        if r.label >= NUM_CLASSES {
            return Err(Error::Data(format!("record `{}` has label {}", r.filename, r.label)));
        }
        grouped.entry(r.split).or_default()[r.label].push(r.clone());
    }
    for (split, classes) in grouped.iter_mut() {
        if let Some(empty) = classes.iter().position(|c| c.is_empty()) {
            return Err(Error::Data(format!(
                "split {split} has no {} records",
                CLASS_NAMES[empty]
            )));
        }
        let min = classes.iter().map(Vec::len).min().unwrap_or(0);
        for (class, list) in classes.iter_mut().enumerate() {
            if list.len() == min {
                continue;
            }
            let tag = *split as u64 * NUM_CLASSES as u64 + class as u64;
            let mut rng = SeededRng::new(derive_seed(seed, tag));
            let mut keep = rng.permutation(list.len());
            keep.truncate(min);
            keep.sort_unstable();
            *list = keep.into_iter().map(|i| list[i].clone()).collect();
        }
    }
    Ok(SplitPlan { splits: grouped })
}
