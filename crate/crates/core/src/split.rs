//! Train / validation / test node splits.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Label;

/// `train_ratio` of the labeled nodes go to training; the rest is split
/// 1:2 between validation and test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_ratio: f64,
    pub stratified: bool,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train_ratio: f64, seed: u64) -> Self {
        Self {
            train_ratio,
            stratified: true,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn split_nodes(labels: &[Label], spec: &SplitSpec) -> Result<Split> {
    if !(spec.train_ratio > 0.0 && spec.train_ratio < 1.0) {
        return Err(Error::invalid(format!(
            "train ratio must lie in (0, 1), got {}",
            spec.train_ratio
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let groups: Vec<Vec<usize>> = if spec.stratified {
        [Label::Normal, Label::Anomalous]
            .iter()
            .map(|&c| (0..labels.len()).filter(|&i| labels[i] == c).collect())
            .collect()
    } else {
        vec![(0..labels.len()).filter(|&i| labels[i].is_labeled()).collect()]
    };
    let mut split = Split {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for mut group in groups {
        if group.is_empty() {
            continue;
        }
        group.shuffle(&mut rng);
        let n = group.len();
        let mut n_train = (spec.train_ratio * n as f64).round() as usize;
        if spec.stratified {
            // Keep every class in training whenever it exists.
            n_train = n_train.max(1);
        }
        let n_train = n_train.min(n);
        let rest = n - n_train;
        let n_val = (rest as f64 / 3.0).round() as usize;
        split.train.extend_from_slice(&group[..n_train]);
        split.val.extend_from_slice(&group[n_train..n_train + n_val]);
        split.test.extend_from_slice(&group[n_train + n_val..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    if split.train.is_empty() {
        return Err(Error::invalid("no labeled nodes to split"));
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(n: usize, anomalies: usize) -> Vec<Label> {
        (0..n)
            .map(|i| match i {
                i if i < anomalies => Label::Anomalous,
                i if i % 17 == 5 => Label::Unlabeled,
                _ => Label::Normal,
            })
            .collect()
    }

    #[test]
    fn disjoint_and_covering() {
        let y = labels(300, 15);
        let s = split_nodes(&y, &SplitSpec::new(0.4, 3)).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        let labeled: Vec<usize> = (0..300).filter(|&i| y[i].is_labeled()).collect();
        assert_eq!(all, labeled);
        assert_eq!(s, split_nodes(&y, &SplitSpec::new(0.4, 3)).unwrap());
        assert_ne!(s, split_nodes(&y, &SplitSpec::new(0.4, 4)).unwrap());
    }

    #[test]
    fn stratified_keeps_rare_class_in_train() {
        let y = labels(1000, 3);
        let s = split_nodes(&y, &SplitSpec::new(0.01, 0)).unwrap();
        assert!(s.train.iter().any(|&i| y[i] == Label::Anomalous));
    }

    #[test]
    fn val_test_one_to_two() {
        let y = labels(1000, 50);
        let s = split_nodes(&y, &SplitSpec::new(0.4, 1)).unwrap();
        let ratio = s.test.len() as f64 / s.val.len() as f64;
        assert!((ratio - 2.0).abs() < 0.05, "{ratio}");
    }

    #[test]
    fn bad_ratio_rejected() {
        assert!(split_nodes(&labels(10, 2), &SplitSpec::new(1.0, 0)).is_err());
    }
}
