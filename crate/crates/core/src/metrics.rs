//! Ranking and classification metrics for scored pairs.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::cohort::PairKey;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub pair: PairKey,
    pub score: f64,
    pub truth: bool,
}

fn split(scored: &[ScoredPair]) -> (Vec<f64>, Vec<bool>) {
    (
        scored.iter().map(|s| s.score).collect(),
        scored.iter().map(|s| s.truth).collect(),
    )
}

fn class_scores(scores: &[f64], labels: &[bool]) -> Result<(Vec<f64>, Vec<f64>)> {
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|p| *p.1).map(|p| *p.0).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|p| !*p.1).map(|p| *p.0).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::UndefinedMetric(format!(
            "need both classes, got {} positive and {} negative",
            pos.len(),
            neg.len()
        )));
    }
    Ok((pos, neg))
}

/// Per-positive placement values: share of negatives scored below, ties counting half.
fn placements(of: &[f64], against_sorted: &[f64]) -> Vec<f64> {
    let n = against_sorted.len() as f64;
    of.iter()
        .map(|&x| {
            let below = against_sorted.partition_point(|&y| y < x);
            let not_above = against_sorted.partition_point(|&y| y <= x);
            (below as f64 + 0.5 * (not_above - below) as f64) / n
        })
        .collect()
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Mann-Whitney AUC from raw scores and labels (`true` = positive).
pub fn roc_auc_labels(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = class_scores(scores, labels)?;
    let neg = sorted(&neg);
    let total: f64 = placements(&pos, &neg).iter().sum();
    Ok(total / pos.len() as f64)
}

pub fn roc_auc(scored: &[ScoredPair]) -> Result<f64> {
    let (s, l) = split(scored);
    roc_auc_labels(&s, &l)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeLong {
    pub auc_a: f64,
    pub auc_b: f64,
    pub z: f64,
    pub p: f64,
}

fn covariance(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    if n < 2 {
        return 0.0;
    }
    let ma = a.iter().sum::<f64>() / n as f64;
    let mb = b.iter().sum::<f64>() / n as f64;
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (n - 1) as f64
}

/// Paired DeLong test of two scorings of the same labelled items.
pub fn delong_test(scores_a: &[f64], scores_b: &[f64], labels: &[bool]) -> Result<DeLong> {
    if scores_a.len() != labels.len() || scores_b.len() != labels.len() {
        return Err(Error::UndefinedMetric("score lists differ in length".into()));
    }
    let (pa, na) = class_scores(scores_a, labels)?;
    let (pb, nb) = class_scores(scores_b, labels)?;
    let (sna, snb) = (sorted(&na), sorted(&nb));
    let (spa, spb) = (sorted(&pa), sorted(&pb));
    let v10a = placements(&pa, &sna);
    let v10b = placements(&pb, &snb);
    // for negatives: share of positives scored above, ties counting half
    let v01 = |neg: &[f64], pos_sorted: &[f64]| -> Vec<f64> {
        let m = pos_sorted.len() as f64;
        neg.iter()
            .map(|&y| {
                let not_above = pos_sorted.partition_point(|&x| x <= y);
                let below = pos_sorted.partition_point(|&x| x < y);
                ((pos_sorted.len() - not_above) as f64 + 0.5 * (not_above - below) as f64) / m
            })
            .collect()
    };
    let v01a = v01(&na, &spa);
    let v01b = v01(&nb, &spb);
    let m = pa.len() as f64;
    let n = na.len() as f64;
    let auc_a = v10a.iter().sum::<f64>() / m;
    let auc_b = v10b.iter().sum::<f64>() / m;
    let var = (covariance(&v10a, &v10a) + covariance(&v10b, &v10b) - 2.0 * covariance(&v10a, &v10b)) / m
        + (covariance(&v01a, &v01a) + covariance(&v01b, &v01b) - 2.0 * covariance(&v01a, &v01b)) / n;
    let diff = auc_a - auc_b;
    let (z, p) = if var <= 0.0 {
        if diff == 0.0 {
            (0.0, 1.0)
        } else {
            (diff.signum() * f64::INFINITY, 0.0)
        }
    } else {
        let z = diff / var.sqrt();
        let normal = Normal::standard();
        (z, (2.0 * normal.sf(z.abs())).min(1.0))
    };
    Ok(DeLong { auc_a, auc_b, z, p })
}

/// Indexes ordered by descending score, ties kept in input order.
fn ranking(scored: &[ScoredPair]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scored.len()).collect();
    idx.sort_by(|&a, &b| scored[b].score.total_cmp(&scored[a].score));
    idx
}

pub fn average_precision(scored: &[ScoredPair]) -> Result<f64> {
    let n_pos = scored.iter().filter(|s| s.truth).count();
    if n_pos == 0 {
        return Err(Error::UndefinedMetric("average precision needs a positive".into()));
    }
    let mut hits = 0;
    let mut total = 0.0;
    for (rank, i) in ranking(scored).into_iter().enumerate() {
        if scored[i].truth {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(total / n_pos as f64)
}

pub fn precision_at_k(scored: &[ScoredPair], k: usize) -> Result<f64> {
    if k == 0 || scored.len() < k {
        return Err(Error::UndefinedMetric(format!(
            "precision at {k} needs at least {k} pairs, got {}",
            scored.len()
        )));
    }
    let hits = ranking(scored)[..k].iter().filter(|&&i| scored[i].truth).count();
    Ok(hits as f64 / k as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    /// `FP / (FP + TN)`, undefined without negatives.
    pub fn fpr(&self) -> Option<f64> {
        let neg = self.fp + self.tn;
        (neg > 0).then(|| self.fp as f64 / neg as f64)
    }

    pub fn recall(&self) -> Option<f64> {
        let pos = self.tp + self.fn_;
        (pos > 0).then(|| self.tp as f64 / pos as f64)
    }
}

/// Classifies ADR iff `score >= threshold`.
pub fn confusion_at_threshold(scored: &[ScoredPair], threshold: f64) -> Confusion {
    let mut c = Confusion {
        tp: 0,
        fp: 0,
        fn_: 0,
        tn: 0,
    };
    for s in scored {
        match (s.score >= threshold, s.truth) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    c
}

/// `(FPR, TPR)` points for thresholds at every distinct score, starting at (0, 0).
pub fn roc_points(scored: &[ScoredPair]) -> Result<Vec<(f64, f64)>> {
    let (s, l) = split(scored);
    let (pos, neg) = class_scores(&s, &l)?;
    let (m, n) = (pos.len() as f64, neg.len() as f64);
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[b].score.total_cmp(&scored[a].score));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let score = scored[order[i]].score;
        while i < order.len() && scored[order[i]].score == score {
            if scored[order[i]].truth {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / n, tp as f64 / m));
    }
    Ok(points)
}

/// Highest sensitivity among thresholds whose FPR does not exceed `fpr_cap`.
pub fn recall_at_fpr(scored: &[ScoredPair], fpr_cap: f64) -> Result<f64> {
    let points = roc_points(scored)?;
    Ok(points
        .iter()
        .filter(|(fpr, _)| *fpr <= fpr_cap)
        .map(|p| p.1)
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codes::EventCode;
    use crate::cohort::Label;
    use proptest::prelude::*;

    fn scored(items: &[(f64, bool)]) -> Vec<ScoredPair> {
        items
            .iter()
            .enumerate()
            .map(|(i, &(score, truth))| ScoredPair {
                pair: PairKey {
                    drug_key: format!("{i}"),
                    outcome: EventCode::new("G").unwrap(),
                    label: if truth { Label::Adr } else { Label::NonAdr },
                    group: "g".into(),
                },
                score,
                truth,
            })
            .collect()
    }

    fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let mut total = 0.0;
        let mut pairs = 0.0;
        for (i, &x) in scores.iter().enumerate() {
            for (j, &y) in scores.iter().enumerate() {
                if labels[i] && !labels[j] {
                    pairs += 1.0;
                    total += if x > y { 1.0 } else if x == y { 0.5 } else { 0.0 };
                }
            }
        }
        total / pairs
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&scored(&[(0.9, true), (0.1, false)])).unwrap(), 1.0);
        assert_eq!(roc_auc(&scored(&[(0.5, true), (0.5, false), (0.5, true)])).unwrap(), 0.5);
        assert_eq!(roc_auc(&scored(&[(0.8, true), (0.2, false), (0.8, false)])).unwrap(), 0.75);
        assert!(matches!(roc_auc(&scored(&[(0.8, true)])), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn ap_and_precision() {
        let s = scored(&[(0.9, true), (0.8, false), (0.7, true)]);
        assert!((average_precision(&s).unwrap() - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        let last = scored(&[(0.9, false), (0.8, false), (0.1, true)]);
        assert!((average_precision(&last).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let top: Vec<(f64, bool)> = (0..12).map(|i| (1.0 - i as f64 / 20.0, i < 7 || i == 11)).collect();
        assert_eq!(precision_at_k(&scored(&top), 10).unwrap(), 0.7);
        assert!(precision_at_k(&scored(&top[..5]), 10).is_err());
        assert!(average_precision(&scored(&[(0.1, false)])).is_err());
    }

    #[test]
    fn ties_keep_input_order() {
        let s = scored(&[(0.5, false), (0.5, true)]);
        assert_eq!(average_precision(&s).unwrap(), 0.5);
    }

    #[test]
    fn confusion_examples() {
        let mut items = vec![(0.9, false)];
        items.extend((0..99).map(|_| (0.1, false)));
        let c = confusion_at_threshold(&scored(&items), 0.5);
        assert_eq!((c.fp, c.tn), (1, 99));
        assert_eq!(c.fpr(), Some(0.01));
        let c = confusion_at_threshold(&scored(&[(0.5, true), (0.49, false)]), 0.5);
        assert_eq!((c.tp, c.fpr()), (1, Some(0.0)));
    }

    #[test]
    fn recall_examples() {
        let mut items = vec![(0.9, true), (0.8, true), (0.7, true), (0.65, false)];
        items.extend([(0.6, true), (0.5, true), (0.4, true)]);
        items.extend((0..19).map(|i| (0.01 * i as f64, false)));
        // 20 negatives, one of them above the last three positives
        let s = scored(&items);
        assert_eq!(recall_at_fpr(&s, 0.05).unwrap(), 1.0);
        assert_eq!(recall_at_fpr(&s, 0.04).unwrap(), 0.5);
        assert_eq!(recall_at_fpr(&s, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn delong_degenerate_and_antisymmetric() {
        let labels = [true, false, true, false, true];
        let a = [0.9, 0.3, 0.6, 0.7, 0.2];
        let b = [0.4, 0.1, 0.8, 0.5, 0.9];
        let same = delong_test(&a, &a, &labels).unwrap();
        assert_eq!((same.z, same.p), (0.0, 1.0));
        let ab = delong_test(&a, &b, &labels).unwrap();
        let ba = delong_test(&b, &a, &labels).unwrap();
        assert_eq!(ab.z, -ba.z);
        assert_eq!(ab.p, ba.p);
        assert!(ab.p > 0.0 && ab.p <= 1.0);
    }

    proptest! {
        #[test]
        fn auc_matches_brute_force(items in proptest::collection::vec((0u8..20, any::<bool>()), 2..300)) {
            let scores: Vec<f64> = items.iter().map(|i| i.0 as f64 / 19.0).collect();
            let labels: Vec<bool> = items.iter().map(|i| i.1).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let fast = roc_auc_labels(&scores, &labels).unwrap();
            prop_assert!((fast - brute_auc(&scores, &labels)).abs() < 1e-12);
        }

        #[test]
        fn recall_monotone_in_cap(items in proptest::collection::vec((0u8..50, any::<bool>()), 2..100), a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let s = scored(&items.iter().map(|i| (i.0 as f64, i.1)).collect::<Vec<_>>());
            prop_assume!(s.iter().any(|x| x.truth) && s.iter().any(|x| !x.truth));
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(recall_at_fpr(&s, lo).unwrap() <= recall_at_fpr(&s, hi).unwrap());
        }

        #[test]
        fn rank_metrics_ignore_monotone_transforms(items in proptest::collection::vec((0u8..50, any::<bool>()), 10..100)) {
            let s = scored(&items.iter().map(|i| (i.0 as f64, i.1)).collect::<Vec<_>>());
            prop_assume!(s.iter().any(|x| x.truth));
            let t: Vec<ScoredPair> = s.iter().cloned().map(|mut x| { x.score = (x.score / 7.0).exp(); x }).collect();
            prop_assert_eq!(average_precision(&s).unwrap(), average_precision(&t).unwrap());
            prop_assert_eq!(precision_at_k(&s, 10).unwrap(), precision_at_k(&t, 10).unwrap());
        }

        #[test]
        fn delong_p_in_unit_interval(items in proptest::collection::vec((0u8..30, 0u8..30, any::<bool>()), 4..80)) {
            let labels: Vec<bool> = items.iter().map(|i| i.2).collect();
            prop_assume!(labels.iter().filter(|&&l| l).count() >= 2 && labels.iter().filter(|&&l| !l).count() >= 2);
            let a: Vec<f64> = items.iter().map(|i| i.0 as f64).collect();
            let b: Vec<f64> = items.iter().map(|i| i.1 as f64).collect();
            let r = delong_test(&a, &b, &labels).unwrap();
            prop_assert!(r.p <= 1.0 && r.p >= 0.0);
            prop_assert_eq!(delong_test(&a, &a, &labels).unwrap().z, 0.0);
        }
    }
}
