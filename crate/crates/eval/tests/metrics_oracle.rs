use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scgnn_eval::metrics::{predictions_from_confusion, ECE_BINS};
use scgnn_eval::{evaluate, Prediction};

const REFERENCE: [[u64; 3]; 3] = [[9469, 39, 383], [55, 9914, 125], [44, 45, 9926]];

#[test]
fn reference_confusion_matrix() {
    let (preds, labels) = predictions_from_confusion(&REFERENCE);
    assert_eq!(preds.len(), 30_000);
    let s = evaluate(&preds, &labels).unwrap();
    assert_eq!(s.confusion, REFERENCE);
    assert!((100.0 * s.accuracy - 97.70).abs() < 0.01, "{}", s.accuracy);
    assert_eq!(s.accuracy, 29_309.0 / 30_000.0);
    // row-wise arithmetic on the reference counts
    for (c, expected) in [95.73, 98.22, 99.11].iter().enumerate() {
        let row: u64 = REFERENCE[c].iter().sum();
        let oracle = REFERENCE[c][c] as f64 / row as f64;
        assert_eq!(s.per_class[c].recall, oracle);
        assert!((100.0 * s.per_class[c].recall - expected).abs() < 0.005);
        assert_eq!(s.per_class[c].support, row);
    }
}

struct Oracle {
    confusion: [[u64; 3]; 3],
    precision: [f64; 3],
    recall: [f64; 3],
    f1: [f64; 3],
    ece: f64,
}

fn oracle(preds: &[Prediction], labels: &[u8]) -> Oracle {
    let mut confusion = [[0u64; 3]; 3];
    for (p, &l) in preds.iter().zip(labels) {
        confusion[l as usize][p.class] += 1;
    }
    let mut precision = [0.0; 3];
    let mut recall = [0.0; 3];
    let mut f1 = [0.0; 3];
    for c in 0..3 {
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for (p, &l) in preds.iter().zip(labels) {
            match (p.class == c, l as usize == c) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
        precision[c] = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
        recall[c] = if tp + fn_ > 0 { tp as f64 / (tp + fn_) as f64 } else { 0.0 };
        f1[c] = if tp > 0 { 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64 } else { 0.0 };
    }
    let mut ece = 0.0;
    for b in 0..ECE_BINS {
        let lo = b as f64 / ECE_BINS as f64;
        let hi = (b + 1) as f64 / ECE_BINS as f64;
        let members: Vec<usize> = (0..preds.len())
            .filter(|&i| {
                let c = preds[i].confidence;
                c >= lo && (c < hi || (b == ECE_BINS - 1 && c <= 1.0))
            })
            .collect();
        if members.is_empty() {
            continue;
        }
        let acc = members.iter().filter(|&&i| preds[i].class == labels[i] as usize).count() as f64
            / members.len() as f64;
        let conf = members.iter().map(|&i| preds[i].confidence).sum::<f64>() / members.len() as f64;
        ece += members.len() as f64 / preds.len() as f64 * (acc - conf).abs();
    }
    Oracle { confusion, precision, recall, f1, ece }
}

/// Mean precision at the rank of each positive; valid for distinct scores.
fn ap_oracle(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let npos = positive.iter().filter(|&&p| p).count();
    if npos == 0 {
        return None;
    }
    let mut sum = 0.0;
    for i in (0..scores.len()).filter(|&i| positive[i]) {
        let above: Vec<usize> = (0..scores.len()).filter(|&j| scores[j] >= scores[i]).collect();
        let hits = above.iter().filter(|&&j| positive[j]).count();
        sum += hits as f64 / above.len() as f64;
    }
    Some(sum / npos as f64)
}

fn random_case(rng: &mut ChaCha8Rng, n: usize) -> (Vec<Prediction>, Vec<u8>) {
    let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..3)).collect();
    let preds = labels
        .iter()
        .map(|&l| {
            let mut logits: Vec<i32> = (0..3).map(|_| rng.gen_range(-3000..3000)).collect();
            if rng.gen_bool(0.6) {
                logits[l as usize] += 2500;
            }
            Prediction::from_logits(&logits, 1.0 / 700.0)
        })
        .collect();
    (preds, labels)
}

#[test]
fn random_cases_match_counting_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for case in 0..300 {
        let n = rng.gen_range(1..60);
        let (preds, labels) = random_case(&mut rng, n);
        let s = evaluate(&preds, &labels).unwrap();
        let o = oracle(&preds, &labels);
        assert_eq!(s.confusion, o.confusion, "case {case}");
        for c in 0..3 {
            assert!((s.per_class[c].precision - o.precision[c]).abs() < 1e-12);
            assert!((s.per_class[c].recall - o.recall[c]).abs() < 1e-12);
            assert!((s.per_class[c].f1 - o.f1[c]).abs() < 1e-12);
        }
        let macro_f1 = o.f1.iter().sum::<f64>() / 3.0;
        assert!((s.macro_f1 - macro_f1).abs() < 1e-12);
        let weighted: f64 = (0..3)
            .map(|c| o.f1[c] * labels.iter().filter(|&&l| l as usize == c).count() as f64)
            .sum::<f64>()
            / n as f64;
        assert!((s.weighted_f1 - weighted).abs() < 1e-12);
        assert!((s.ece - o.ece).abs() < 1e-12, "case {case}: {} vs {}", s.ece, o.ece);
        for (k, class) in [1usize, 2].iter().enumerate() {
            let scores: Vec<f64> = preds.iter().map(|p| p.probs[*class]).collect();
            let positive: Vec<bool> = labels.iter().map(|&l| l as usize == *class).collect();
            match (s.average_precision[k], ap_oracle(&scores, &positive)) {
                (Some(a), Some(b)) => assert!((a - b).abs() < 1e-9, "case {case}: {a} vs {b}"),
                (a, b) => assert_eq!(a, b),
            }
        }
    }
}

#[test]
fn perfect_confident_predictions() {
    let labels: Vec<u8> = (0..90).map(|i| (i % 3) as u8).collect();
    let preds: Vec<_> = labels.iter().map(|&l| Prediction::one_hot(l as usize)).collect();
    let s = evaluate(&preds, &labels).unwrap();
    assert_eq!(s.confusion, [[30, 0, 0], [0, 30, 0], [0, 0, 30]]);
    assert_eq!((s.accuracy, s.ece, s.macro_f1, s.weighted_f1), (1.0, 0.0, 1.0, 1.0));
}

#[test]
fn shape_errors() {
    assert!(evaluate(&[Prediction::one_hot(0)], &[0, 1]).is_err());
    assert!(evaluate(&[Prediction::one_hot(0)], &[3]).is_err());
}

proptest! {
    #[test]
    fn summary_invariants(seed in any::<u64>(), n in 1usize..200) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (preds, labels) = random_case(&mut rng, n);
        let s = evaluate(&preds, &labels).unwrap();
        for c in 0..3 {
            let support = labels.iter().filter(|&&l| l as usize == c).count() as u64;
            prop_assert_eq!(s.confusion[c].iter().sum::<u64>(), support);
            prop_assert_eq!(s.per_class[c].support, support);
        }
        let trace: u64 = (0..3).map(|c| s.confusion[c][c]).sum();
        prop_assert_eq!(s.accuracy, trace as f64 / n as f64);
        prop_assert!((0.0..=1.0).contains(&s.ece));
        prop_assert_eq!(s.reliability.iter().map(|b| b.count).sum::<u64>(), n as u64);
    }
}
