//! Dataset splitting, confusion-matrix accumulation, and the five report
//! metrics (accuracy, precision, F1, FPR, FNR) in exact rational arithmetic.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("prediction/truth length mismatch: {preds} vs {truths}")]
    LengthMismatch { preds: usize, truths: usize },
    #[error("empty confusion matrix")]
    EmptyMatrix,
}

/// Seeded stratified split: within each label stratum the train side takes
/// floor(ratio·n) items after a shuffle. `stratified = false` falls back to
/// one plain shuffle over the whole set.
pub fn split(
    labels: &[u8],
    ratio: f64,
    seed: u64,
    stratified: bool,
) -> Result<(Vec<usize>, Vec<usize>), EvalError> {
    if labels.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    if stratified {
        for target in [1u8, 0u8] {
            let mut idx: Vec<usize> = (0..labels.len())
                .filter(|&i| labels[i] == target)
                .collect();
            idx.shuffle(&mut rng);
            let cut = (ratio * idx.len() as f64).floor() as usize;
            train.extend_from_slice(&idx[..cut]);
            test.extend_from_slice(&idx[cut..]);
        }
    } else {
        let mut idx: Vec<usize> = (0..labels.len()).collect();
        idx.shuffle(&mut rng);
        let cut = (ratio * idx.len() as f64).floor() as usize;
        train.extend_from_slice(&idx[..cut]);
        test.extend_from_slice(&idx[cut..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

pub fn confusion(predictions: &[u8], truths: &[u8]) -> Result<ConfusionMatrix, EvalError> {
    if predictions.len() != truths.len() {
        return Err(EvalError::LengthMismatch {
            preds: predictions.len(),
            truths: truths.len(),
        });
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &y) in predictions.iter().zip(truths) {
        match (p, y) {
            (1, 1) => cm.tp += 1,
            (0, 0) => cm.tn += 1,
            (1, 0) => cm.fp += 1,
            _ => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

/// One metric as an exact fraction; zero denominators report 0 with the
/// undefined flag set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metric {
    pub num: u64,
    pub den: u64,
    pub undefined: bool,
}

impl Metric {
    fn new(num: u64, den: u64) -> Self {
        Self {
            num: if den == 0 { 0 } else { num },
            den,
            undefined: den == 0,
        }
    }

    pub fn value(&self) -> f64 {
        if self.undefined {
            0.0
        } else {
            self.num as f64 / self.den as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub cm: ConfusionMatrix,
    pub accuracy: Metric,
    pub precision: Metric,
    pub f1: Metric,
    pub fpr: Metric,
    pub fnr: Metric,
}

/// Exact rational evaluation:
/// A=(TP+TN)/total, P=TP/(TP+FP), F1=2TP/(2TP+FP+FN),
/// FPR=FP/(FP+TN), FNR=FN/(TP+FN).
pub fn metrics(cm: ConfusionMatrix) -> Result<MetricsReport, EvalError> {
    if cm.total() == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    Ok(MetricsReport {
        cm,
        accuracy: Metric::new(cm.tp + cm.tn, cm.total()),
        precision: Metric::new(cm.tp, cm.tp + cm.fp),
        f1: Metric::new(2 * cm.tp, 2 * cm.tp + cm.fp + cm.fn_),
        fpr: Metric::new(cm.fp, cm.fp + cm.tn),
        fnr: Metric::new(cm.fn_, cm.tp + cm.fn_),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: String,
    pub config_digest: String,
    pub report: MetricsReport,
}

pub fn report_json(report: &MetricsReport, config_digest: &str) -> String {
    let r = EvalReport {
        schema_version: crate::ingest::SCHEMA_VERSION.to_string(),
        config_digest: config_digest.to_string(),
        report: *report,
    };
    serde_json::to_string_pretty(&r).expect("report serializes")
}

/// Aligned plain-text table over the five metric names.
pub fn report_table(report: &MetricsReport) -> String {
    let rows: [(&str, Metric); 5] = [
        ("Accuracy (A)", report.accuracy),
        ("Precision (P)", report.precision),
        ("F1 score (F1)", report.f1),
        ("False positive rate (FPR)", report.fpr),
        ("False negative rate (FNR)", report.fnr),
    ];
    let mut out = String::new();
    let _ = writeln!(
        out,
        "TP={} TN={} FP={} FN={} total={}",
        report.cm.tp,
        report.cm.tn,
        report.cm.fp,
        report.cm.fn_,
        report.cm.total()
    );
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap();
    for (name, m) in rows {
        if m.undefined {
            let _ = writeln!(out, "{name:<width$}  0.000000 (undefined)");
        } else {
            let _ = writeln!(out, "{name:<width$}  {:.6}", m.value());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio;
    use rand::Rng;

    #[test]
    fn split_ten_eighty_twenty() {
        let labels = vec![1, 0, 1, 0, 1, 0, 1, 0, 1, 0];
        let (train, test) = split(&labels, 0.8, 3, true).unwrap();
        assert_eq!(train.len(), 8);
        assert_eq!(test.len(), 2);
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn split_is_seed_deterministic() {
        let labels = vec![1, 1, 1, 0, 0, 0, 1, 0, 1, 0, 1, 1];
        assert_eq!(
            split(&labels, 0.8, 7, true).unwrap(),
            split(&labels, 0.8, 7, true).unwrap()
        );
        assert_ne!(
            split(&labels, 0.8, 7, true).unwrap(),
            split(&labels, 0.8, 8, true).unwrap()
        );
    }

    #[test]
    fn stratified_floor_per_stratum() {
        // 6 positive, 4 negative at 0.8: floor(4.8)=4 positives and
        // floor(3.2)=3 negatives in train
        let labels = vec![1, 1, 1, 1, 1, 1, 0, 0, 0, 0];
        let (train, _) = split(&labels, 0.8, 11, true).unwrap();
        let pos = train.iter().filter(|&&i| labels[i] == 1).count();
        let neg = train.len() - pos;
        assert_eq!(pos, 4);
        assert_eq!(neg, 3);
    }

    #[test]
    fn split_partition_property_over_seeds() {
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        for trial in 0..1000u64 {
            let n = rng.gen_range(1..40);
            let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
            let (train, test) = split(&labels, 0.8, trial, true).unwrap();
            let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
            all.sort_unstable();
            all.dedup();
            assert_eq!(all.len(), labels.len(), "disjoint cover, trial {trial}");
        }
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(matches!(
            split(&[], 0.8, 0, true),
            Err(EvalError::EmptyDataset)
        ));
    }

    #[test]
    fn confusion_counts() {
        let cm = confusion(&[1, 1, 1, 1, 1], &[1, 1, 1, 1, 1]).unwrap();
        assert_eq!((cm.tp, cm.tn, cm.fp, cm.fn_), (5, 0, 0, 0));
        let cm = confusion(&[0, 0, 0], &[1, 1, 1]).unwrap();
        assert_eq!(cm.fn_, 3);
        // mixed 8-pair fixture, tallied by hand
        let cm = confusion(&[1, 0, 1, 0, 1, 0, 1, 1], &[1, 1, 0, 0, 1, 0, 0, 1]).unwrap();
        assert_eq!((cm.tp, cm.tn, cm.fp, cm.fn_), (3, 2, 2, 1));
        assert!(matches!(
            confusion(&[1], &[1, 0]),
            Err(EvalError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn table_ten_worked_example() {
        let cm = ConfusionMatrix {
            tp: 15,
            fp: 1,
            tn: 0,
            fn_: 0,
        };
        let r = metrics(cm).unwrap();
        assert_eq!(r.accuracy.value(), 0.9375);
        assert_eq!(r.precision.value(), 0.9375);
        assert_eq!(r.fnr.value(), 0.0);
        assert_eq!(r.fpr.value(), 1.0);
        let f1_exact = 2.0 * (0.9375 * 1.0) / (0.9375 + 1.0);
        assert!((r.f1.value() - f1_exact).abs() < 1e-12);
    }

    #[test]
    fn perfect_classifier() {
        let r = metrics(ConfusionMatrix {
            tp: 10,
            tn: 10,
            fp: 0,
            fn_: 0,
        })
        .unwrap();
        assert_eq!(r.accuracy.value(), 1.0);
        assert_eq!(r.precision.value(), 1.0);
        assert_eq!(r.f1.value(), 1.0);
        assert_eq!(r.fpr.value(), 0.0);
        assert_eq!(r.fnr.value(), 0.0);
    }

    #[test]
    fn zero_denominator_flags() {
        let r = metrics(ConfusionMatrix {
            tp: 0,
            fp: 5,
            tn: 0,
            fn_: 5,
        })
        .unwrap();
        assert_eq!(r.accuracy.value(), 0.0);
        assert_eq!(r.fpr.value(), 1.0);
        assert_eq!(r.fnr.value(), 1.0);
        assert!(!r.precision.undefined); // TP+FP = 5
        assert_eq!(r.precision.value(), 0.0);

        let r = metrics(ConfusionMatrix {
            tp: 0,
            fp: 0,
            tn: 3,
            fn_: 0,
        })
        .unwrap();
        assert!(r.precision.undefined);
        assert!(r.fnr.undefined);
        assert_eq!(r.precision.value(), 0.0);
        assert!(matches!(
            metrics(ConfusionMatrix::default()),
            Err(EvalError::EmptyMatrix)
        ));
    }

    #[test]
    fn rational_identities_against_oracle() {
        // independent oracle in exact rational arithmetic
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..500 {
            let cm = ConfusionMatrix {
                tp: rng.gen_range(0..50),
                tn: rng.gen_range(0..50),
                fp: rng.gen_range(0..50),
                fn_: rng.gen_range(0..50),
            };
            if cm.total() == 0 {
                continue;
            }
            let r = metrics(cm).unwrap();
            // A·total = TP+TN exactly
            assert_eq!(r.accuracy.num, cm.tp + cm.tn);
            assert_eq!(r.accuracy.den, cm.total());
            // FPR + specificity = 1 when defined
            if cm.fp + cm.tn > 0 {
                let fpr = Ratio::new(cm.fp, cm.fp + cm.tn);
                let spec = Ratio::new(cm.tn, cm.fp + cm.tn);
                assert_eq!(fpr + spec, Ratio::new(1, 1));
                assert_eq!(Ratio::new(r.fpr.num, r.fpr.den), fpr);
            }
            // F1 harmonic-mean identity vs the P/R form
            if cm.tp + cm.fp > 0 && cm.tp + cm.fn_ > 0 && cm.tp > 0 {
                let p = Ratio::new(cm.tp, cm.tp + cm.fp);
                let rr = Ratio::new(cm.tp, cm.tp + cm.fn_);
                let f1 = Ratio::from_integer(2) * p * rr / (p + rr);
                assert_eq!(Ratio::new(r.f1.num, r.f1.den).reduced(), f1.reduced());
            }
        }
    }

    #[test]
    fn report_renders_json_and_table() {
        let r = metrics(ConfusionMatrix {
            tp: 15,
            fp: 1,
            tn: 0,
            fn_: 0,
        })
        .unwrap();
        let j = report_json(&r, "abc123");
        let back: EvalReport = serde_json::from_str(&j).unwrap();
        assert_eq!(back.report, r);
        assert_eq!(back.config_digest, "abc123");
        let t = report_table(&r);
        assert!(t.contains("Accuracy (A)"));
        assert!(t.contains("0.937500"));
        assert!(t.contains("TP=15"));
    }
}
