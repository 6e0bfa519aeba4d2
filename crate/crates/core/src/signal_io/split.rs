use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{EpochDataset, SleepStage, SplitTag};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct SplitOutcome {
    pub train: EpochDataset,
    pub test: EpochDataset,
    /// Strata too small to contribute to the test split.
    pub warnings: Vec<String>,
}

/// Splits every (subject, stage) stratum so that `floor(fraction * n)` epochs (at
/// least one when `n >= 2`) go to train. Epochs keep their dataset order in both parts.
pub fn stratified_split(dataset: &EpochDataset, train_fraction: f64, seed: u64) -> Result<SplitOutcome> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::config(
            "train_fraction",
            format!("must lie in (0, 1), got {}", train_fraction),
        ));
    }
    let mut strata: BTreeMap<(&str, SleepStage), Vec<usize>> = BTreeMap::new();
    for (i, e) in dataset.epochs.iter().enumerate() {
        strata.entry((e.subject_id.as_str(), e.stage)).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_train = vec![false; dataset.len()];
    let mut warnings = Vec::new();
    for ((subject, stage), mut members) in strata {
        let n = members.len();
        let n_train = if n == 1 {
            warnings.push(format!(
                "stratum ({}, {}) has a single epoch; assigned to train",
                subject, stage
            ));
            1
        } else {
            ((train_fraction * n as f64).floor() as usize).clamp(1, n - 1)
        };
        members.shuffle(&mut rng);
        for &i in &members[..n_train] {
            in_train[i] = true;
        }
    }
    let pick = |want: bool, tag: SplitTag| EpochDataset {
        epochs: dataset
            .epochs
            .iter()
            .zip(&in_train)
            .filter(|(_, t)| **t == want)
            .map(|(e, _)| e.clone())
            .collect(),
        subject_index: dataset.subject_index.clone(),
        sampling_rate_hz: dataset.sampling_rate_hz,
        split: tag,
    };
    Ok(SplitOutcome {
        train: pick(true, SplitTag::Train),
        test: pick(false, SplitTag::Test),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::signal_io::Epoch;

    fn dataset(sizes: &[(usize, SleepStage, usize)]) -> EpochDataset {
        let mut epochs = Vec::new();
        for &(subject, stage, n) in sizes {
            for k in 0..n {
                let onset = (epochs.len() + k) as f64 * 30.0;
                epochs.push(Epoch::new(format!("S{subject}"), stage, onset, 1, vec![0.0; 4]).unwrap());
            }
        }
        EpochDataset::new(epochs, 100.0)
    }

    #[test]
    fn eighty_twenty_of_ten() {
        let ds = dataset(&[(0, SleepStage::N2, 10)]);
        let s = stratified_split(&ds, 0.8, 1).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (8, 2));
    }

    #[test]
    fn half_of_two() {
        let ds = dataset(&[(0, SleepStage::W, 2)]);
        let s = stratified_split(&ds, 0.5, 1).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (1, 1));
    }

    #[test]
    fn singleton_stratum_goes_to_train_with_warning() {
        let ds = dataset(&[(0, SleepStage::W, 1), (0, SleepStage::N1, 4)]);
        let s = stratified_split(&ds, 0.8, 1).unwrap();
        assert_eq!(s.warnings.len(), 1);
        assert!(s.train.epochs.iter().any(|e| e.stage == SleepStage::W));
    }

    #[test]
    fn fraction_must_be_open_interval() {
        let ds = dataset(&[(0, SleepStage::W, 4)]);
        assert!(stratified_split(&ds, 1.0, 0).is_err());
        assert!(stratified_split(&ds, 0.0, 0).is_err());
    }

    fn ident(e: &Epoch) -> (String, u64) {
        (e.subject_id.clone(), e.onset_s.to_bits())
    }

    proptest! {
        #[test]
        fn partition_is_exact_and_stratified(
            sizes in proptest::collection::vec((0usize..4, 0usize..5, 1usize..25), 1..8),
            fraction in 0.05f64..0.95,
            seed in any::<u64>(),
        ) {
            let sizes: Vec<_> = sizes.into_iter().map(|(s, st, n)| (s, SleepStage::ALL[st], n)).collect();
            let ds = dataset(&sizes);
            let a = stratified_split(&ds, fraction, seed).unwrap();
            let b = stratified_split(&ds, fraction, seed).unwrap();
            prop_assert_eq!(&a.train.epochs, &b.train.epochs);

            let mut all: Vec<_> = a.train.epochs.iter().chain(&a.test.epochs).map(ident).collect();
            let mut orig: Vec<_> = ds.epochs.iter().map(ident).collect();
            all.sort();
            orig.sort();
            prop_assert_eq!(all, orig);

            let train = a.train.counts();
            let full = ds.counts();
            for (subject, counts) in &full {
                for st in 0..5 {
                    let n = counts[st] as f64;
                    if n >= 2.0 {
                        let t = train[subject][st] as f64;
                        prop_assert!((t - fraction * n).abs() <= 1.0, "{} of {}", t, n);
                    }
                }
            }
        }
    }
}
