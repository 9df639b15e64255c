//! Classification metrics: confusion matrix, precision/recall/F1, expected
//! calibration error and one-vs-rest average precision.

use serde::{Deserialize, Serialize};

use crate::error::{EvalError, Result};
use crate::synth::{Phase, NUM_CLASSES};

pub const ECE_BINS: usize = 10;

/// Class decision plus the probability vector it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub class: usize,
    pub confidence: f64,
    pub probs: Vec<f64>,
}

impl Prediction {
    /// Argmax of `probs`; lowest index wins ties.
    pub fn from_probs(probs: Vec<f64>) -> Self {
        let mut class = 0;
        for (i, &p) in probs.iter().enumerate() {
            if p > probs[class] {
                class = i;
            }
        }
        let confidence = probs.get(class).copied().unwrap_or(0.0);
        Self { class, confidence, probs }
    }

    /// Softmax over `logits * scale`.
    pub fn from_logits(logits: &[i32], scale: f64) -> Self {
        Self::from_probs(softmax(logits, scale))
    }

    /// A hard decision with confidence 1.
    pub fn one_hot(class: usize) -> Self {
        let mut probs = vec![0.0; NUM_CLASSES.max(class + 1)];
        probs[class] = 1.0;
        Self { class, confidence: 1.0, probs }
    }
}

pub fn softmax(logits: &[i32], scale: f64) -> Vec<f64> {
    let z: Vec<f64> = logits.iter().map(|&l| l as f64 * scale).collect();
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lower: f64,
    pub upper: f64,
    pub count: u64,
    pub accuracy: f64,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    /// `confusion[true][predicted]`.
    pub confusion: [[u64; 3]; 3],
    pub per_class: [ClassMetrics; 3],
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub accuracy: f64,
    pub ece: f64,
    pub reliability: Vec<ReliabilityBin>,
    /// One-vs-rest AP for the systolic and diastolic classes; `None` when a
    /// class has no positives.
    pub average_precision: [Option<f64>; 2],
    pub total: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class metrics from a confusion matrix alone.
pub fn class_metrics(confusion: &[[u64; 3]; 3]) -> [ClassMetrics; 3] {
    std::array::from_fn(|c| {
        let tp = confusion[c][c];
        let support: u64 = confusion[c].iter().sum();
        let predicted: u64 = confusion.iter().map(|row| row[c]).sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        ClassMetrics { precision, recall, f1, support }
    })
}

/// Average precision of `scores` against binary `positive`, summing
/// precision at each distinct threshold weighted by the recall step.
pub fn average_precision(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let total_pos = positive.iter().filter(|&&p| p).count();
    if total_pos == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / total_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Some(ap)
}

pub fn evaluate(predictions: &[Prediction], labels: &[u8]) -> Result<EvalSummary> {
    if predictions.len() != labels.len() {
        return Err(EvalError::Shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut confusion = [[0u64; 3]; 3];
    let mut bins = [(0u64, 0u64, 0.0f64); ECE_BINS];
    for (p, &l) in predictions.iter().zip(labels) {
        let l = l as usize;
        if l >= NUM_CLASSES || p.class >= NUM_CLASSES {
            return Err(EvalError::Shape(format!(
                "class out of range: label {l}, prediction {}",
                p.class
            )));
        }
        if !(0.0..=1.0).contains(&p.confidence) {
            return Err(EvalError::Shape(format!("confidence {} outside [0, 1]", p.confidence)));
        }
        confusion[l][p.class] += 1;
        let b = ((p.confidence * ECE_BINS as f64) as usize).min(ECE_BINS - 1);
        bins[b].0 += 1;
        bins[b].1 += (p.class == l) as u64;
        bins[b].2 += p.confidence;
    }
    let total = labels.len() as u64;
    let per_class = class_metrics(&confusion);
    let correct: u64 = (0..3).map(|c| confusion[c][c]).sum();
    let macro_f1 = per_class.iter().map(|m| m.f1).sum::<f64>() / 3.0;
    let weighted_f1 = if total == 0 {
        0.0
    } else {
        per_class.iter().map(|m| m.f1 * m.support as f64).sum::<f64>() / total as f64
    };
    let reliability: Vec<ReliabilityBin> = bins
        .iter()
        .enumerate()
        .map(|(i, &(count, hits, conf))| ReliabilityBin {
            lower: i as f64 / ECE_BINS as f64,
            upper: (i + 1) as f64 / ECE_BINS as f64,
            count,
            accuracy: ratio(hits, count),
            confidence: if count == 0 { 0.0 } else { conf / count as f64 },
        })
        .collect();
    let ece = if total == 0 {
        0.0
    } else {
        reliability
            .iter()
            .map(|b| b.count as f64 / total as f64 * (b.accuracy - b.confidence).abs())
            .sum()
    };
    let ap = |class: usize| {
        let scores: Vec<f64> = predictions
            .iter()
            .map(|p| p.probs.get(class).copied().unwrap_or((p.class == class) as u8 as f64))
            .collect();
        let positive: Vec<bool> = labels.iter().map(|&l| l as usize == class).collect();
        average_precision(&scores, &positive)
    };
    Ok(EvalSummary {
        confusion,
        per_class,
        macro_f1,
        weighted_f1,
        accuracy: ratio(correct, total),
        ece,
        reliability,
        average_precision: [ap(1), ap(2)],
        total,
    })
}

/// Expands a confusion matrix into hard, fully confident predictions.
pub fn predictions_from_confusion(confusion: &[[u64; 3]; 3]) -> (Vec<Prediction>, Vec<u8>) {
    let mut preds = Vec::new();
    let mut labels = Vec::new();
    for (t, row) in confusion.iter().enumerate() {
        for (p, &n) in row.iter().enumerate() {
            for _ in 0..n {
                preds.push(Prediction::one_hot(p));
                labels.push(t as u8);
            }
        }
    }
    (preds, labels)
}

impl EvalSummary {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("windows: {}\n", self.total));
        s.push_str("confusion (rows true, columns predicted):\n");
        s.push_str(&format!("{:>12} {:>10} {:>10} {:>10}\n", "", "background", "systolic", "diastolic"));
        for (c, row) in self.confusion.iter().enumerate() {
            s.push_str(&format!(
                "{:>12} {:>10} {:>10} {:>10}\n",
                Phase::ALL[c].name(),
                row[0],
                row[1],
                row[2]
            ));
        }
        s.push_str(&format!("{:>12} {:>9} {:>9} {:>9} {:>9}\n", "class", "precision", "recall", "f1", "support"));
        for (c, m) in self.per_class.iter().enumerate() {
            s.push_str(&format!(
                "{:>12} {:>8.2}% {:>8.2}% {:>8.2}% {:>9}\n",
                Phase::ALL[c].name(),
                100.0 * m.precision,
                100.0 * m.recall,
                100.0 * m.f1,
                m.support
            ));
        }
        s.push_str(&format!("accuracy: {:.2}%\n", 100.0 * self.accuracy));
        s.push_str(&format!("macro F1: {:.2}%\n", 100.0 * self.macro_f1));
        s.push_str(&format!("weighted F1: {:.2}%\n", 100.0 * self.weighted_f1));
        s.push_str(&format!("ECE ({ECE_BINS} bins): {:.4}\n", self.ece));
        for (name, ap) in ["systolic", "diastolic"].iter().zip(&self.average_precision) {
            match ap {
                Some(v) => s.push_str(&format!("AP {name}: {:.4}\n", v)),
                None => s.push_str(&format!("AP {name}: n/a\n")),
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let labels = vec![0u8, 1, 2, 2, 1, 0, 0];
        let preds: Vec<_> = labels.iter().map(|&l| Prediction::one_hot(l as usize)).collect();
        let s = evaluate(&preds, &labels).unwrap();
        assert_eq!(s.confusion, [[3, 0, 0], [0, 2, 0], [0, 0, 2]]);
        assert_eq!(s.accuracy, 1.0);
        assert_eq!(s.ece, 0.0);
        assert!(s.per_class.iter().all(|m| m.f1 == 1.0));
        assert_eq!(s.average_precision, [Some(1.0), Some(1.0)]);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(evaluate(&[Prediction::one_hot(0)], &[]).is_err());
    }

    #[test]
    fn confidence_one_lands_in_last_bin() {
        let s = evaluate(&[Prediction::one_hot(1)], &[0]).unwrap();
        assert_eq!(s.reliability[9].count, 1);
        assert_eq!(s.ece, 1.0);
    }

    #[test]
    fn softmax_is_normalized_and_shift_invariant() {
        let a = softmax(&[1000, 2000, -500], 1e-3);
        let b = softmax(&[2000, 3000, 500], 1e-3);
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        assert_eq!(Prediction::from_logits(&[3, 9, 9], 1.0).class, 1);
    }

    #[test]
    fn average_precision_small_case() {
        // ranked: +, -, +, - gives (1/2)*1 + (1/2)*(2/3)
        let ap = average_precision(&[0.9, 0.8, 0.7, 0.1], &[true, false, true, false]).unwrap();
        assert!((ap - (0.5 + 1.0 / 3.0)).abs() < 1e-12);
        assert_eq!(average_precision(&[0.5], &[false]), None);
    }
}
