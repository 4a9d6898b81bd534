//! Classification metrics: rank-statistic AUC, ROC points, confusion matrix,
//! sensitivity/specificity and F1.
//!
//! Binary problems treat class 1 as positive and predict it when its
//! probability is at least 0.5. Multiclass problems predict the argmax and
//! macro-average one-vs-rest AUC, sensitivity and specificity. Ratios with a
//! zero denominator evaluate to 0.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

/// Area under the ROC curve via the Mann-Whitney rank statistic, ties
/// counted half. `None` when either class is absent.
pub fn auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), positive.len(), "scores and labels differ in length");
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j share their average
        let avg = (i + 1 + j) as f64 / 2.0;
        rank_sum += avg * order[i..j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

/// ROC curve as `(fpr, tpr)` points from `(0, 0)` to `(1, 1)`, one point
/// per distinct score threshold. Empty when either class is absent.
pub fn roc_points(scores: &[f64], positive: &[bool]) -> Vec<(f64, f64)> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    for (idx, &k) in order.iter().enumerate() {
        if positive[k] {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_tie = order.get(idx + 1).is_none_or(|&n| scores[n] != scores[k]);
        if last_of_tie {
            points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
        }
    }
    points
}

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<usize>,
}

impl ConfusionMatrix {
    pub fn new(truth: &[usize], predicted: &[usize], num_classes: usize) -> Self {
        let mut counts = vec![0; num_classes * num_classes];
        for (&t, &p) in truth.iter().zip(predicted) {
            counts[t * num_classes + p] += 1;
        }
        ConfusionMatrix { num_classes, counts }
    }

    pub fn get(&self, truth: usize, predicted: usize) -> usize {
        self.counts[truth * self.num_classes + predicted]
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, class: usize) -> usize {
        (0..self.num_classes).map(|p| self.get(class, p)).sum()
    }

    pub fn col_sum(&self, class: usize) -> usize {
        (0..self.num_classes).map(|t| self.get(t, class)).sum()
    }

    pub fn rows(&self) -> Vec<Vec<usize>> {
        self.counts.chunks(self.num_classes).map(<[usize]>::to_vec).collect()
    }

    pub fn trace(&self) -> usize {
        (0..self.num_classes).map(|c| self.get(c, c)).sum()
    }

    /// True-positive rate of `class` treated one-vs-rest.
    pub fn recall(&self, class: usize) -> f64 {
        ratio(self.get(class, class), self.row_sum(class))
    }

    /// True-negative rate of `class` treated one-vs-rest.
    pub fn specificity(&self, class: usize) -> f64 {
        let fp = self.col_sum(class) - self.get(class, class);
        let negatives = self.total() - self.row_sum(class);
        ratio(negatives - fp, negatives)
    }

    pub fn precision(&self, class: usize) -> f64 {
        ratio(self.get(class, class), self.col_sum(class))
    }

    pub fn f1(&self, class: usize) -> f64 {
        let tp = self.get(class, class);
        ratio(2 * tp, self.row_sum(class) + self.col_sum(class))
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auc: Option<f64>,
    pub specificity: f64,
    pub sensitivity: f64,
    pub f1_micro: f64,
    pub f1_macro: f64,
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
}

impl MetricsReport {
    /// Metrics from per-sample class probabilities.
    pub fn from_probabilities(probs: &[Vec<f64>], truth: &[usize], num_classes: usize) -> Self {
        assert_eq!(probs.len(), truth.len(), "probabilities and labels differ in length");
        let predicted: Vec<usize> = probs.iter().map(|p| predict(p, num_classes)).collect();
        let confusion = ConfusionMatrix::new(truth, &predicted, num_classes);
        let n = truth.len();

        let per_class_auc: Vec<f64> = (0..num_classes)
            .filter_map(|c| {
                let scores: Vec<f64> = probs.iter().map(|p| p[c]).collect();
                let pos: Vec<bool> = truth.iter().map(|&t| t == c).collect();
                auc(&scores, &pos)
            })
            .collect();
        let auc = if num_classes == 2 {
            let scores: Vec<f64> = probs.iter().map(|p| p[1]).collect();
            let pos: Vec<bool> = truth.iter().map(|&t| t == 1).collect();
            auc(&scores, &pos)
        } else if per_class_auc.is_empty() {
            None
        } else {
            Some(mean(&per_class_auc))
        };

        let (sensitivity, specificity) = if num_classes == 2 {
            (confusion.recall(1), confusion.specificity(1))
        } else {
            let classes: Vec<usize> = (0..num_classes).collect();
            (
                mean(&classes.iter().map(|&c| confusion.recall(c)).collect::<Vec<_>>()),
                mean(&classes.iter().map(|&c| confusion.specificity(c)).collect::<Vec<_>>()),
            )
        };

        // classes never seen nor predicted have no defined F1
        let active: Vec<f64> = (0..num_classes)
            .filter(|&c| confusion.row_sum(c) + confusion.col_sum(c) > 0)
            .map(|c| confusion.f1(c))
            .collect();
        let accuracy = ratio(confusion.trace(), n);

        MetricsReport {
            auc,
            specificity,
            sensitivity,
            // single-label: micro precision = micro recall = accuracy
            f1_micro: accuracy,
            f1_macro: if active.is_empty() { 0.0 } else { mean(&active) },
            accuracy,
            confusion,
        }
    }
}

/// Positive when `p[1] >= 0.5` for two classes, argmax otherwise.
pub fn predict(p: &[f64], num_classes: usize) -> usize {
    if num_classes == 2 {
        usize::from(p[1] >= 0.5)
    } else {
        p.iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
            .0
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Sample standard deviation; zero for a single value.
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return MeanStd { mean: f64::NAN, std: f64::NAN };
        }
        let m = mean(values);
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
        } else {
            0.0
        };
        MeanStd { mean: m, std }
    }
}

/// Mean ± std of each metric across folds. AUC averages the folds where it
/// is defined.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub folds: usize,
    pub auc: Option<MeanStd>,
    pub specificity: MeanStd,
    pub sensitivity: MeanStd,
    pub f1_micro: MeanStd,
    pub f1_macro: MeanStd,
    pub accuracy: MeanStd,
}

impl MetricsSummary {
    pub fn from_folds(reports: &[MetricsReport]) -> Self {
        let col = |f: fn(&MetricsReport) -> f64| MeanStd::of(&reports.iter().map(f).collect::<Vec<_>>());
        let aucs: Vec<f64> = reports.iter().filter_map(|r| r.auc).collect();
        MetricsSummary {
            folds: reports.len(),
            auc: (!aucs.is_empty()).then(|| MeanStd::of(&aucs)),
            specificity: col(|r| r.specificity),
            sensitivity: col(|r| r.sensitivity),
            f1_micro: col(|r| r.f1_micro),
            f1_macro: col(|r| r.f1_macro),
            accuracy: col(|r| r.accuracy),
        }
    }
}
