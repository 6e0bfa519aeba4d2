use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::autograd::{Real, Tensor};
use crate::{Error, Result};

/// Classification summary. `confusion[true][predicted]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub class_names: Vec<String>,
    pub accuracy: f64,
    pub f1_per_class: Vec<f64>,
    /// Classes with no true examples in the evaluated set.
    pub zero_support: Vec<bool>,
    pub confusion: Vec<Vec<u64>>,
    pub chance_level: f64,
    pub n_examples: usize,
    /// One-vs-rest F1 keyed by class name; filled for re-identification reports.
    pub f1_per_subject: Option<BTreeMap<String, f64>>,
}

impl EvalReport {
    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn support(&self) -> Vec<u64> {
        self.confusion.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn macro_f1(&self) -> f64 {
        self.f1_per_class.iter().sum::<f64>() / self.f1_per_class.len() as f64
    }

    pub fn f1(&self, class: &str) -> Option<f64> {
        self.class_names
            .iter()
            .position(|c| c == class)
            .map(|i| self.f1_per_class[i])
    }

    /// Attaches the per-class F1 under the class names.
    pub fn with_subject_f1(mut self) -> Self {
        self.f1_per_subject = Some(
            self.class_names
                .iter()
                .cloned()
                .zip(self.f1_per_class.iter().copied())
                .collect(),
        );
        self
    }
}

/// F1 from raw counts, 0 when precision or recall is undefined.
pub fn f1_score(tp: u64, fp: u64, fn_: u64) -> f64 {
    if tp == 0 {
        return 0.0;
    }
    // 2PR/(P+R) reduced to a single division
    (2 * tp) as f64 / (2 * tp + fp + fn_) as f64
}

fn confusion(predictions: &[usize], labels: &[usize], n_classes: usize) -> Result<Vec<Vec<u64>>> {
    if predictions.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::InvalidInput("cannot evaluate an empty set".into()));
    }
    let mut m = vec![vec![0u64; n_classes]; n_classes];
    for (&p, &t) in predictions.iter().zip(labels) {
        if p >= n_classes || t >= n_classes {
            return Err(Error::InvalidInput(format!(
                "class index {} outside 0..{}",
                p.max(t),
                n_classes
            )));
        }
        m[t][p] += 1;
    }
    Ok(m)
}

/// Accuracy, one-vs-rest F1 per class and the confusion matrix.
pub fn evaluate(predictions: &[usize], labels: &[usize], class_names: &[String]) -> Result<EvalReport> {
    let n = class_names.len();
    if n == 0 {
        return Err(Error::InvalidInput("no classes".into()));
    }
    let m = confusion(predictions, labels, n)?;
    let total = labels.len() as u64;
    let trace: u64 = (0..n).map(|i| m[i][i]).sum();
    let mut f1 = Vec::with_capacity(n);
    let mut zero_support = Vec::with_capacity(n);
    for c in 0..n {
        let tp = m[c][c];
        let support: u64 = m[c].iter().sum();
        let predicted: u64 = m.iter().map(|r| r[c]).sum();
        f1.push(f1_score(tp, predicted - tp, support - tp));
        zero_support.push(support == 0);
    }
    Ok(EvalReport {
        class_names: class_names.to_vec(),
        accuracy: trace as f64 / total as f64,
        f1_per_class: f1,
        zero_support,
        confusion: m,
        chance_level: 1.0 / n as f64,
        n_examples: labels.len(),
        f1_per_subject: None,
    })
}

/// [`evaluate`] on the row-wise argmax of `[N, C]` logits.
pub fn evaluate_logits<F: Real>(logits: &Tensor<F>, labels: &[usize], class_names: &[String]) -> Result<EvalReport> {
    if logits.shape().len() != 2 || logits.shape()[1] != class_names.len() {
        return Err(Error::Shape(format!(
            "logits {:?} for {} classes",
            logits.shape(),
            class_names.len()
        )));
    }
    evaluate(&logits.argmax_rows(), labels, class_names)
}

/// Per-subject one-vs-rest F1 computed on the joint confusion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectF1 {
    pub scores: BTreeMap<String, f64>,
    /// Subjects absent from the labels.
    pub zero_support: BTreeSet<String>,
}

pub const DEFAULT_TOP_K: usize = 6;

impl SubjectF1 {
    /// Subjects sorted by descending F1 (ties by name).
    pub fn ranked(&self) -> Vec<(String, f64)> {
        let mut v: Vec<_> = self.scores.iter().map(|(k, v)| (k.clone(), *v)).collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        v
    }

    pub fn top_k(&self, k: usize) -> Vec<(String, f64)> {
        let mut v = self.ranked();
        v.truncate(k);
        v
    }
}

pub fn f1_per_subject(predictions: &[usize], subject_labels: &[usize], subject_names: &[String]) -> Result<SubjectF1> {
    let r = evaluate(predictions, subject_labels, subject_names)?;
    Ok(SubjectF1 {
        scores: subject_names.iter().cloned().zip(r.f1_per_class).collect(),
        zero_support: subject_names
            .iter()
            .zip(&r.zero_support)
            .filter(|(_, z)| **z)
            .map(|(n, _)| n.clone())
            .collect(),
    })
}

/// Mean of squared element differences.
pub fn mse<T: Copy + Into<f64>>(a: &[T], b: &[T]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("mse of {} and {} elements", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::InvalidInput("mse of empty arrays".into()));
    }
    let s: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let d = (*x).into() - (*y).into();
            d * d
        })
        .sum();
    Ok(s / a.len() as f64)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn hand_built_three_class_confusion() {
        // class 0: tp 5, fp 5, fn 0
        let mut p = Vec::new();
        let mut t = Vec::new();
        p.extend([0; 5]);
        t.extend([0; 5]);
        p.extend([0; 5]);
        t.extend([1; 5]);
        p.extend([1; 3]);
        t.extend([1; 3]);
        p.extend([2; 4]);
        t.extend([2; 4]);
        p.extend([1; 2]);
        t.extend([2; 2]);
        let r = evaluate(&p, &t, &names(3)).unwrap();
        assert_eq!(r.f1_per_class[0], 2.0 / 3.0);
        // class 1: tp 3, fp 2, fn 5
        assert_eq!(r.f1_per_class[1], 2.0 * 3.0 / (2.0 * 3.0 + 2.0 + 5.0));
        // class 2: tp 4, fp 0, fn 2
        assert_eq!(r.f1_per_class[2], 8.0 / 10.0);
        assert_eq!(r.accuracy, 12.0 / 19.0);
        assert_eq!(r.confusion, vec![vec![5, 0, 0], vec![5, 3, 0], vec![0, 2, 4]]);
        assert_eq!(r.support(), vec![5, 8, 6]);
        assert_eq!(r.n_examples, 19);
    }

    #[test]
    fn chance_level_of_35_subjects() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t: Vec<usize> = (0..700).map(|i| i % 35).collect();
        let p: Vec<usize> = (0..700).map(|_| rng.gen_range(0..35)).collect();
        let r = evaluate(&p, &t, &names(35)).unwrap();
        assert_eq!(r.chance_level, 1.0 / 35.0);
        assert!((r.chance_level - 0.029).abs() < 5e-4);
    }

    #[test]
    fn perfect_predictions() {
        let t = vec![0, 1, 2, 2, 1];
        let r = evaluate(&t, &t, &names(3)).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert!(r.f1_per_class.iter().all(|f| *f == 1.0));
    }

    #[test]
    fn zero_support_is_flagged() {
        let r = evaluate(&[0, 1], &[0, 1], &names(3)).unwrap();
        assert_eq!(r.f1_per_class[2], 0.0);
        assert_eq!(r.zero_support, vec![false, false, true]);
        let s = f1_per_subject(&[0, 1], &[0, 1], &names(3)).unwrap();
        assert_eq!(s.scores["c2"], 0.0);
        assert!(s.zero_support.contains("c2"));
    }

    #[test]
    fn single_subject_is_perfect() {
        let s = f1_per_subject(&[0, 0, 0], &[0, 0, 0], &names(1)).unwrap();
        assert_eq!(s.scores["c0"], 1.0);
    }

    #[test]
    fn ranking_exposes_outliers() {
        let p = vec![0, 0, 1, 2, 2, 2, 3];
        let t = vec![0, 0, 1, 1, 2, 2, 3];
        let s = f1_per_subject(&p, &t, &names(4)).unwrap();
        let top = s.top_k(2);
        assert_eq!(top[0], ("c0".to_string(), 1.0));
        assert_eq!(top[1], ("c3".to_string(), 1.0));
        assert_eq!(s.ranked().len(), 4);
        assert_eq!(s.top_k(DEFAULT_TOP_K).len(), 4);
    }

    #[test]
    fn errors() {
        assert!(evaluate(&[], &[], &names(2)).is_err());
        assert!(evaluate(&[0], &[0, 1], &names(2)).is_err());
        assert!(evaluate(&[2], &[0], &names(2)).is_err());
        assert!(mse(&[0.0f64; 3], &[0.0; 4]).is_err());
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse(&[1.5f64, -2.0], &[1.5, -2.0]).unwrap(), 0.0);
        assert_eq!(mse(&[0.0f32; 10], &[1.0; 10]).unwrap(), 1.0);
    }

    #[test]
    fn logits_are_argmaxed() {
        let l = Tensor::new(vec![2, 3], vec![0.1f32, 2.0, 0.0, 5.0, 1.0, 1.0]).unwrap();
        let r = evaluate_logits(&l, &[1, 0], &names(3)).unwrap();
        assert_eq!(r.accuracy, 1.0);
    }

    fn labelled(n_classes: usize) -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
        proptest::collection::vec((0..n_classes, 0..n_classes), 1..200)
            .prop_map(|v| v.into_iter().unzip())
    }

    proptest! {
        #[test]
        fn accuracy_is_trace_over_total((p, t) in labelled(5)) {
            let r = evaluate(&p, &t, &names(5)).unwrap();
            let trace: u64 = (0..5).map(|i| r.confusion[i][i]).sum();
            let total: u64 = r.confusion.iter().flatten().sum();
            prop_assert_eq!(r.accuracy, trace as f64 / total as f64);
            prop_assert_eq!(total as usize, t.len());
            for c in 0..5 {
                prop_assert_eq!(r.support()[c] as usize, t.iter().filter(|x| **x == c).count());
            }
        }

        #[test]
        fn macro_f1_is_permutation_invariant((p, t) in labelled(4), perm in Just(vec![0usize, 1, 2, 3]).prop_shuffle()) {
            let a = evaluate(&p, &t, &names(4)).unwrap();
            let pp: Vec<usize> = p.iter().map(|i| perm[*i]).collect();
            let tt: Vec<usize> = t.iter().map(|i| perm[*i]).collect();
            let b = evaluate(&pp, &tt, &names(4)).unwrap();
            prop_assert!((a.macro_f1() - b.macro_f1()).abs() < 1e-12);
            for c in 0..4 {
                prop_assert_eq!(a.f1_per_class[c], b.f1_per_class[perm[c]]);
            }
        }

        #[test]
        fn mse_is_symmetric(a in proptest::collection::vec(-1e3f64..1e3, 1..50), shift in -5.0f64..5.0) {
            let b: Vec<f64> = a.iter().map(|v| v * 0.5 + shift).collect();
            prop_assert_eq!(mse(&a, &b).unwrap(), mse(&b, &a).unwrap());
        }
    }
}
