use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DatasetError, Result, SampleRecord};

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<SampleRecord>,
    pub validation: Vec<SampleRecord>,
    pub test: Vec<SampleRecord>,
    pub seed: u64,
}

/// Which held-out subset joins the training set for a final refit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RefitMode {
    #[default]
    TrainValidation,
    /// Leaks test data into training; only for reproducing that protocol.
    TrainTest,
}

impl DatasetSplit {
    pub fn refit_set(&self, mode: RefitMode) -> Vec<SampleRecord> {
        let extra = match mode {
            RefitMode::TrainValidation => &self.validation,
            RefitMode::TrainTest => &self.test,
        };
        self.train.iter().chain(extra).cloned().collect()
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.validation.len(), self.test.len())
    }
}

/// Seeded shuffle, then a 6:2:2 cut: validation and test each take
/// `round(0.2 n)` records and training keeps the remainder.
pub fn split_dataset(records: &[SampleRecord], seed: u64) -> Result<DatasetSplit> {
    let n = records.len();
    if n < 3 {
        return Err(DatasetError::TooFewRecords(n));
    }
    let mut shuffled = records.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let held = ((n as f64 * 0.2).round() as usize).max(1);
    let test = shuffled.split_off(n - held);
    let validation = shuffled.split_off(n - 2 * held);
    Ok(DatasetSplit {
        train: shuffled,
        validation,
        test,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Accent, AgeGroup, Gender};
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn records(n: usize) -> Vec<SampleRecord> {
        (0..n)
            .map(|i| {
                SampleRecord::new(
                    format!("clip{i}.wav"),
                    Accent::from_id(i % 6).unwrap(),
                    AgeGroup::from_id(i % 5).unwrap(),
                    Gender::from_id(i % 2).unwrap(),
                )
            })
            .collect()
    }

    #[test]
    fn ratio_examples() {
        assert_eq!(split_dataset(&records(100), 1).unwrap().sizes(), (60, 20, 20));
        assert_eq!(split_dataset(&records(10), 1).unwrap().sizes(), (6, 2, 2));
        assert_eq!(split_dataset(&records(3), 1).unwrap().sizes(), (1, 1, 1));
        assert!(matches!(split_dataset(&records(2), 1), Err(DatasetError::TooFewRecords(2))));
    }

    #[test]
    fn refit_modes() {
        let s = split_dataset(&records(10), 4).unwrap();
        assert_eq!(s.refit_set(RefitMode::TrainValidation).len(), 8);
        assert!(s.refit_set(RefitMode::TrainTest).contains(&s.test[0]));
    }

    proptest! {
        #[test]
        fn partitions_deterministically(n in 3usize..300, seed in any::<u64>()) {
            let recs = records(n);
            let s = split_dataset(&recs, seed).unwrap();
            prop_assert_eq!(&s, &split_dataset(&recs, seed).unwrap());
            let (tr, va, te) = s.sizes();
            prop_assert_eq!(tr + va + te, n);
            let ideal = |f: f64| f * n as f64;
            prop_assert!((tr as f64 - ideal(0.6)).abs() <= 1.0 + 1e-9);
            prop_assert!((va as f64 - ideal(0.2)).abs() <= 1.0);
            prop_assert!((te as f64 - ideal(0.2)).abs() <= 1.0);
            let all: HashSet<_> = s.train.iter().chain(&s.validation).chain(&s.test).map(|r| r.audio_path.clone()).collect();
            prop_assert_eq!(all.len(), n);
        }
    }
}
