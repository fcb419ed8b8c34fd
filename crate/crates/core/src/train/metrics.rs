//! Binary classification metrics. Undefined values are `NaN`.

use std::cmp::Ordering;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub roc_auc: f64,
    pub pr_auc: f64,
}

impl Metrics {
    pub fn compute(scores: &[f64], labels: &[bool]) -> Metrics {
        Metrics {
            accuracy: accuracy(scores, labels),
            roc_auc: roc_auc(scores, labels),
            pr_auc: pr_auc(scores, labels),
        }
    }

    /// `name\tvalue` lines; undefined values print as `NaN`.
    pub fn report(&self) -> String {
        format!(
            "accuracy\t{}\nroc_auc\t{}\npr_auc\t{}\n",
            self.accuracy, self.roc_auc, self.pr_auc
        )
    }

    pub fn is_defined(&self) -> bool {
        !self.roc_auc.is_nan() && !self.pr_auc.is_nan()
    }
}

/// Fraction correct with class 1 predicted when `score > 0.5`.
pub fn accuracy(scores: &[f64], labels: &[bool]) -> f64 {
    if scores.is_empty() {
        return f64::NAN;
    }
    let correct = scores.iter().zip(labels).filter(|(&s, &y)| (s > 0.5) == y).count();
    correct as f64 / scores.len() as f64
}

fn descending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    idx
}

/// Mann–Whitney statistic: `(2·#correct pairs + #tied pairs) / (2·P·N)`.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let p = labels.iter().filter(|&&y| y).count() as u64;
    let n = labels.len() as u64 - p;
    if p == 0 || n == 0 {
        return f64::NAN;
    }
    let order = descending(scores);
    // Walk tie groups from the top; every positive beats the negatives below it.
    let mut twice_correct: u64 = 0;
    let mut neg_above: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut gp, mut gn) = (0u64, 0u64);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                gp += 1;
            } else {
                gn += 1;
            }
            j += 1;
        }
        let neg_below = n - neg_above - gn;
        twice_correct += 2 * gp * neg_below + gp * gn;
        neg_above += gn;
        i = j;
    }
    twice_correct as f64 / (2 * p * n) as f64
}

/// Average precision. A positive's precision counts every item whose score is
/// at least its own, so tied items share one operating point.
pub fn pr_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let p = labels.iter().filter(|&&y| y).count();
    if p == 0 {
        return f64::NAN;
    }
    let order = descending(scores);
    let mut sum = ExactSum::default();
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let mut gp = 0;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            gp += labels[order[j]] as usize;
            j += 1;
        }
        tp += gp;
        seen += j - i;
        let precision = tp as f64 / seen as f64;
        for _ in 0..gp {
            sum.add(precision);
        }
        i = j;
    }
    sum.value() / p as f64
}

/// Definitional ROC-AUC over all `P·N` pairs, for checking [`roc_auc`].
pub fn roc_auc_pairwise(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut twice, mut p, mut n) = (0u64, 0u64, 0u64);
    for (i, &yi) in labels.iter().enumerate() {
        if !yi {
            n += 1;
            continue;
        }
        p += 1;
        for (j, &yj) in labels.iter().enumerate() {
            if !yj {
                twice += match scores[i].partial_cmp(&scores[j]) {
                    Some(Ordering::Greater) => 2,
                    Some(Ordering::Equal) => 1,
                    _ => 0,
                };
            }
        }
    }
    if p == 0 || n == 0 {
        return f64::NAN;
    }
    twice as f64 / (2 * p * n) as f64
}

/// Definitional average precision, for checking [`pr_auc`] on up to 512 items.
///
/// Each term `tp/seen` is at least 2⁻⁹, hence an integer multiple of 2⁻⁶², so
/// the sum is exact in fixed point.
pub fn pr_auc_definition(scores: &[f64], labels: &[bool]) -> f64 {
    let p = labels.iter().filter(|&&y| y).count();
    if p == 0 {
        return f64::NAN;
    }
    assert!(labels.len() <= 512, "fixed-point oracle supports at most 512 items");
    let scale = 2f64.powi(62);
    let mut fixed: i128 = 0;
    for (i, &yi) in labels.iter().enumerate() {
        if yi {
            let above = scores.iter().filter(|&&s| s >= scores[i]).count();
            let tp = scores.iter().zip(labels).filter(|(&s, &y)| y && s >= scores[i]).count();
            fixed += (tp as f64 / above as f64 * scale) as i128;
        }
    }
    (fixed as f64 / scale) / p as f64
}

/// Correctly rounded floating-point summation (Shewchuk's partials).
#[derive(Debug, Clone, Default)]
pub struct ExactSum {
    partials: Vec<f64>,
}

impl ExactSum {
    pub fn add(&mut self, mut x: f64) {
        let mut kept = 0;
        for k in 0..self.partials.len() {
            let mut y = self.partials[k];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                self.partials[kept] = lo;
                kept += 1;
            }
            x = hi;
        }
        self.partials.truncate(kept);
        self.partials.push(x);
    }

    pub fn value(&self) -> f64 {
        let mut parts = self.partials.clone();
        let Some(mut hi) = parts.pop() else {
            return 0.0;
        };
        let mut lo = 0.0;
        while let Some(y) = parts.pop() {
            let x = hi;
            hi = x + y;
            lo = y - (hi - x);
            if lo != 0.0 {
                break;
            }
        }
        // Round-half-even correction across the remaining partials.
        if let Some(&next) = parts.last() {
            if (lo < 0.0 && next < 0.0) || (lo > 0.0 && next > 0.0) {
                let y = lo * 2.0;
                let x = hi + y;
                if y == x - hi {
                    hi = x;
                }
            }
        }
        hi
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example() {
        let s = [0.1, 0.4, 0.35, 0.8];
        let y = [false, false, true, true];
        assert_eq!(roc_auc(&s, &y), 0.75);
    }

    #[test]
    fn extremes_and_ties() {
        let y = [true, true, false, false];
        assert_eq!(
            Metrics::compute(&[1.0, 1.0, 0.0, 0.0], &y),
            Metrics {
                accuracy: 1.0,
                roc_auc: 1.0,
                pr_auc: 1.0
            }
        );
        assert_eq!(roc_auc(&[0.0, 0.0, 1.0, 1.0], &y), 0.0);
        assert_eq!(roc_auc(&[0.3; 4], &y), 0.5);
        assert_eq!(roc_auc(&[0.5, 0.5], &[true, false]), 0.5);
        let y5 = [true, false, false, true, false];
        assert_eq!(pr_auc(&[0.7; 5], &y5), 0.4);
    }

    #[test]
    fn single_positive_at_rank_k() {
        for k in 1..=6 {
            let scores: Vec<f64> = (0..6).map(|i| 1.0 - i as f64 * 0.1).collect();
            let labels: Vec<bool> = (0..6).map(|i| i == k - 1).collect();
            assert_eq!(pr_auc(&scores, &labels), 1.0 / k as f64);
        }
    }

    #[test]
    fn undefined_for_single_class() {
        let m = Metrics::compute(&[0.2, 0.9], &[false, false]);
        assert!(m.roc_auc.is_nan() && m.pr_auc.is_nan());
        assert_eq!(m.accuracy, 0.5);
        assert!(roc_auc(&[0.2], &[true]).is_nan());
        assert!(!pr_auc(&[0.2], &[true]).is_nan());
    }

    #[test]
    fn exact_sum_beats_naive_cancellation() {
        let mut s = ExactSum::default();
        for x in [1e100, 1.0, -1e100, 1e-20] {
            s.add(x);
        }
        assert_eq!(s.value(), 1.0 + 1e-20);
        let mut t = ExactSum::default();
        for _ in 0..10 {
            t.add(0.1);
        }
        assert_eq!(t.value(), 1.0);
    }

    #[test]
    fn report_format() {
        let r = Metrics {
            accuracy: 0.5,
            roc_auc: f64::NAN,
            pr_auc: 1.0,
        }
        .report();
        let lines: Vec<&str> = r.lines().collect();
        assert_eq!(lines, ["accuracy\t0.5", "roc_auc\tNaN", "pr_auc\t1"]);
        for l in lines {
            let (_, v) = l.split_once('\t').unwrap();
            v.parse::<f64>().unwrap();
        }
    }
}
