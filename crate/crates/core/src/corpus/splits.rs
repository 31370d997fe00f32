use serde::{Deserialize, Serialize};

use super::{Split, UnifiedRecord};
use crate::error::{Error, Result};
use crate::util::{derive_seed, fnv1a};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub dev: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            dev: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    /// `(train, dev, test)` sizes for `n` records: dev and test are floored,
    /// train takes the remainder, and from three records up dev and test each
    /// get at least one record.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let floor = |r: f64| (r * n as f64 + 1e-9).floor() as usize;
        let (mut dev, mut test) = (floor(self.dev), floor(self.test));
        if n >= 3 {
            dev = dev.max(usize::from(self.dev > 0.0));
            test = test.max(usize::from(self.test > 0.0));
        }
        let dev = dev.min(n);
        let test = test.min(n - dev);
        (n - dev - test, dev, test)
    }
}

/// Assigns splits to records that lack one. Records are ranked by a seeded
/// hash of their id, so adding records never moves existing ones across more
/// than one boundary.
pub fn make_splits(
    mut records: Vec<UnifiedRecord>,
    ratios: SplitRatios,
    seed: u64,
) -> Result<Vec<UnifiedRecord>> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let sum = ratios.train + ratios.dev + ratios.test;
    if (sum - 1.0).abs() > 1e-9 || ratios.train < 0.0 || ratios.dev < 0.0 || ratios.test < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "split ratios must be non-negative and sum to 1, got {sum}"
        )));
    }
    let salt = derive_seed(seed, "splits").to_le_bytes();
    let mut pending: Vec<(u64, usize)> = records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.split.is_none())
        .map(|(i, r)| {
            let mut bytes = salt.to_vec();
            bytes.extend_from_slice(r.key().as_bytes());
            (fnv1a(&bytes), i)
        })
        .collect();
    pending.sort_unstable();
    let (train, dev, _) = ratios.sizes(pending.len());
    for (rank, &(_, i)) in pending.iter().enumerate() {
        records[i].split = Some(if rank < train {
            Split::Train
        } else if rank < train + dev {
            Split::Dev
        } else {
            Split::Test
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn records(n: usize) -> Vec<UnifiedRecord> {
        (0..n)
            .map(|i| UnifiedRecord {
                id: format!("r{i}"),
                text: format!("text {i}"),
                labels: BTreeMap::new(),
                split: None,
                dataset: "d".into(),
                meta: BTreeMap::new(),
            })
            .collect()
    }

    fn counts(rs: &[UnifiedRecord]) -> (usize, usize, usize) {
        let c = |s| rs.iter().filter(|r| r.split == Some(s)).count();
        (c(Split::Train), c(Split::Dev), c(Split::Test))
    }

    #[test]
    fn sizes_follow_floor_plus_remainder() {
        let r = SplitRatios::default();
        assert_eq!(r.sizes(1000), (800, 100, 100));
        assert_eq!(r.sizes(10), (8, 1, 1));
        // floor(0.7) = 0 for dev and test; both are lifted to one record.
        assert_eq!(r.sizes(7), (5, 1, 1));
        assert_eq!(r.sizes(2), (2, 0, 0));
        assert_eq!(r.sizes(3), (1, 1, 1));
    }

    #[test]
    fn assignment_counts() {
        assert_eq!(
            counts(&make_splits(records(1000), SplitRatios::default(), 1).unwrap()),
            (800, 100, 100)
        );
        assert_eq!(
            counts(&make_splits(records(7), SplitRatios::default(), 1).unwrap()),
            (5, 1, 1)
        );
    }

    #[test]
    fn deterministic_under_seed() {
        let a = make_splits(records(50), SplitRatios::default(), 3).unwrap();
        let b = make_splits(records(50), SplitRatios::default(), 3).unwrap();
        let c = make_splits(records(50), SplitRatios::default(), 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn official_splits_pass_through() {
        let mut rs = records(5);
        for r in &mut rs {
            r.split = Some(Split::Test);
        }
        let out = make_splits(rs.clone(), SplitRatios::default(), 0).unwrap();
        assert_eq!(out, rs);
    }

    #[test]
    fn empty_and_bad_ratios() {
        assert!(matches!(
            make_splits(vec![], SplitRatios::default(), 0),
            Err(Error::EmptyDataset)
        ));
        let bad = SplitRatios {
            train: 0.5,
            dev: 0.1,
            test: 0.1,
        };
        assert!(make_splits(records(3), bad, 0).is_err());
    }
}
