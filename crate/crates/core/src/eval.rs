//! ROC and precision-recall curves, their areas, and F1 at a threshold.
//!
//! Thresholds sweep the distinct scores from high to low with tied scores
//! grouped into one step, so every metric is invariant to sample order.

use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("ROC needs both classes")]
    SingleClassInput,
    #[error("PR curve needs at least one positive")]
    NoPositives,
    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),
    #[error("threshold {0} outside [0, 1]")]
    InvalidThreshold(f64),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, EvalError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub id: String,
    /// 1 for AF, 0 otherwise.
    pub label: u8,
    pub score: f64,
}

impl ScoredSample {
    pub fn new(id: impl Into<String>, label: u8, score: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(EvalError::InvalidProbability(score));
        }
        Ok(Self {
            id: id.into(),
            label: u8::from(label != 0),
            score,
        })
    }

    fn positive(&self) -> bool {
        self.label == 1
    }
}

/// Cumulative (TP, FP) after each distinct score, highest first.
fn sweep(samples: &[ScoredSample]) -> Vec<(f64, usize, usize)> {
    let mut sorted: Vec<&ScoredSample> = samples.iter().collect();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut out: Vec<(f64, usize, usize)> = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    for (k, s) in sorted.iter().enumerate() {
        if s.positive() {
            tp += 1;
        } else {
            fp += 1;
        }
        if k + 1 == sorted.len() || sorted[k + 1].score != s.score {
            out.push((s.score, tp, fp));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

/// ROC points from `(0,0)` at threshold `+∞` to `(1,1)` at `-∞`, and the
/// trapezoidal area under them.
pub fn roc_curve(samples: &[ScoredSample]) -> Result<(Vec<RocPoint>, f64)> {
    let pos = samples.iter().filter(|s| s.positive()).count();
    let neg = samples.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(EvalError::SingleClassInput);
    }
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    for (t, tp, fp) in sweep(samples) {
        points.push(RocPoint {
            threshold: t,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }
    points.push(RocPoint {
        threshold: f64::NEG_INFINITY,
        fpr: 1.0,
        tpr: 1.0,
    });
    let auc = points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum();
    Ok((points, auc))
}

/// Precision-recall points, one per distinct score, led by a recall-0
/// anchor carrying the precision of the highest-score group. The area is
/// the step sum `Σ (R_k - R_{k-1}) · P_k`.
pub fn pr_curve(samples: &[ScoredSample]) -> Result<(Vec<PrPoint>, f64)> {
    let pos = samples.iter().filter(|s| s.positive()).count();
    if pos == 0 {
        return Err(EvalError::NoPositives);
    }
    let steps = sweep(samples);
    let precision = |tp: usize, fp: usize| tp as f64 / (tp + fp) as f64;
    let (t0, tp0, fp0) = steps[0];
    let mut points = vec![PrPoint {
        threshold: t0,
        recall: 0.0,
        precision: precision(tp0, fp0),
    }];
    for &(t, tp, fp) in &steps {
        points.push(PrPoint {
            threshold: t,
            recall: tp as f64 / pos as f64,
            precision: precision(tp, fp),
        });
    }
    let area = points
        .windows(2)
        .map(|w| (w[1].recall - w[0].recall) * w[1].precision)
        .sum();
    Ok((points, area))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub r#fn: usize,
}

impl Confusion {
    pub fn precision(&self) -> f64 {
        if self.tp == 0 {
            return 0.0;
        }
        self.tp as f64 / (self.tp + self.fp) as f64
    }

    pub fn recall(&self) -> f64 {
        if self.tp == 0 {
            return 0.0;
        }
        self.tp as f64 / (self.tp + self.r#fn) as f64
    }

    /// Harmonic mean of precision and recall; 0 when there are no true
    /// positives.
    pub fn f1(&self) -> f64 {
        if self.tp == 0 {
            return 0.0;
        }
        let (p, r) = (self.precision(), self.recall());
        2.0 * p * r / (p + r)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.r#fn
    }
}

/// Counts with `score >= threshold` predicted positive.
pub fn confusion_at(samples: &[ScoredSample], threshold: f64) -> Result<Confusion> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(EvalError::InvalidThreshold(threshold));
    }
    let mut c = Confusion {
        tp: 0,
        fp: 0,
        tn: 0,
        r#fn: 0,
    };
    for s in samples {
        match (s.score >= threshold, s.positive()) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.r#fn += 1,
        }
    }
    Ok(c)
}

pub fn f1_at(samples: &[ScoredSample], threshold: f64) -> Result<(f64, Confusion)> {
    let c = confusion_at(samples, threshold)?;
    Ok((c.f1(), c))
}

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub auroc: f64,
    pub auprc: f64,
    pub f1: f64,
    pub threshold: f64,
    pub confusion: Confusion,
    pub roc: Vec<RocPoint>,
    pub pr: Vec<PrPoint>,
}

impl EvalReport {
    pub fn compute(samples: &[ScoredSample], threshold: f64) -> Result<Self> {
        let (roc, auroc) = roc_curve(samples)?;
        let (pr, auprc) = pr_curve(samples)?;
        let (f1, confusion) = f1_at(samples, threshold)?;
        Ok(Self {
            auroc,
            auprc,
            f1,
            threshold,
            confusion,
            roc,
            pr,
        })
    }

    /// `report.json`, `roc.csv` and `pr.csv` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        // JSON has no infinities; the sentinel thresholds become null
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(dir.join("report.json"), json)?;
        let mut roc = String::from("threshold,fpr,tpr\n");
        for p in &self.roc {
            roc.push_str(&format!("{},{},{}\n", p.threshold, p.fpr, p.tpr));
        }
        std::fs::write(dir.join("roc.csv"), roc)?;
        let mut pr = String::from("threshold,recall,precision\n");
        for p in &self.pr {
            pr.push_str(&format!("{},{},{}\n", p.threshold, p.recall, p.precision));
        }
        std::fs::write(dir.join("pr.csv"), pr)?;
        Ok(())
    }
}

/// Exhaustive positive-negative pair count, ties scored 1/2.
pub fn mann_whitney_auc(samples: &[ScoredSample]) -> Result<f64> {
    let pos: Vec<f64> = samples.iter().filter(|s| s.positive()).map(|s| s.score).collect();
    let neg: Vec<f64> = samples.iter().filter(|s| !s.positive()).map(|s| s.score).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(EvalError::SingleClassInput);
    }
    let mut wins = 0.0;
    for p in &pos {
        for n in &neg {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    Ok(wins / (pos.len() * neg.len()) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scored(labels: &[u8], scores: &[f64]) -> Vec<ScoredSample> {
        labels
            .iter()
            .zip(scores)
            .enumerate()
            .map(|(i, (&l, &s))| ScoredSample::new(format!("s{i}"), l, s).unwrap())
            .collect()
    }

    /// Area by enumerating every candidate threshold directly: at each
    /// distinct score t, recall and precision of `score >= t`.
    fn enumerated_auprc(samples: &[ScoredSample]) -> f64 {
        let mut thresholds: Vec<f64> = samples.iter().map(|s| s.score).collect();
        thresholds.sort_by(|a, b| b.total_cmp(a));
        thresholds.dedup();
        let pos = samples.iter().filter(|s| s.label == 1).count() as f64;
        let mut prev_recall = 0.0;
        let mut area = 0.0;
        for t in thresholds {
            let tp = samples.iter().filter(|s| s.score >= t && s.label == 1).count() as f64;
            let k = samples.iter().filter(|s| s.score >= t).count() as f64;
            let recall = tp / pos;
            area += (recall - prev_recall) * (tp / k);
            prev_recall = recall;
        }
        area
    }

    #[test]
    fn roc_hand_cases() {
        let (_, a) = roc_curve(&scored(&[1, 1, 0, 0], &[0.9, 0.8, 0.3, 0.1])).unwrap();
        assert_eq!(a, 1.0);
        let (_, a) = roc_curve(&scored(&[1, 0], &[0.4, 0.6])).unwrap();
        assert_eq!(a, 0.0);
        let s = scored(&[1, 1, 0, 0], &[0.9, 0.4, 0.6, 0.1]);
        let (pts, a) = roc_curve(&s).unwrap();
        assert!((a - 0.75).abs() < 1e-15);
        assert_eq!(a, mann_whitney_auc(&s).unwrap());
        assert_eq!((pts[0].fpr, pts[0].tpr), (0.0, 0.0));
        let last = pts.last().unwrap();
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
    }

    #[test]
    fn single_class_is_rejected() {
        assert!(matches!(roc_curve(&scored(&[1, 1], &[0.2, 0.3])), Err(EvalError::SingleClassInput)));
        assert!(matches!(pr_curve(&scored(&[0, 0], &[0.2, 0.3])), Err(EvalError::NoPositives)));
    }

    #[test]
    fn pr_hand_cases() {
        let (_, a) = pr_curve(&scored(&[1, 1, 0, 0], &[0.9, 0.8, 0.3, 0.1])).unwrap();
        assert_eq!(a, 1.0);
        let (_, a) = pr_curve(&scored(&[1, 0, 0, 1, 0], &[0.5; 5])).unwrap();
        assert!((a - 0.4).abs() < 1e-15);
        let s = scored(&[1, 1, 0, 0], &[0.9, 0.4, 0.6, 0.1]);
        let (pts, a) = pr_curve(&s).unwrap();
        assert!((a - 5.0 / 6.0).abs() < 1e-12);
        assert!((a - enumerated_auprc(&s)).abs() < 1e-12);
        assert_eq!(pts[0].recall, 0.0);
        assert_eq!(pts[0].precision, 1.0);
    }

    #[test]
    fn f1_hand_cases() {
        let mut labels = vec![1u8; 10];
        labels.extend([0u8; 2]);
        // 8 TP, 2 FN, 2 FP
        let mut scores = vec![0.9; 8];
        scores.extend([0.1, 0.2]);
        scores.extend([0.7, 0.6]);
        let (f1, c) = f1_at(&scored(&labels, &scores), 0.5).unwrap();
        assert_eq!((c.tp, c.fp, c.r#fn, c.tn), (8, 2, 2, 0));
        assert_eq!(c.precision(), 0.8);
        assert_eq!(c.recall(), 0.8);
        assert!((f1 - 0.8).abs() < 1e-15);

        let (f1, _) = f1_at(&scored(&[1, 0, 1], &[0.8, 0.2, 0.5]), 0.5).unwrap();
        assert_eq!(f1, 1.0);
        let (f1, c) = f1_at(&scored(&[1, 0], &[0.3, 0.2]), 0.5).unwrap();
        assert_eq!(f1, 0.0);
        assert_eq!(c.tp, 0);
        assert!(f1_at(&scored(&[1], &[0.3]), 1.5).is_err());
    }

    #[test]
    fn zero_threshold_predicts_everything_positive() {
        let s = scored(&[1, 0, 0, 1, 0], &[0.0, 0.3, 0.9, 0.2, 0.0]);
        let (_, c) = f1_at(&s, 0.0).unwrap();
        assert_eq!(c.recall(), 1.0);
        assert_eq!(c.precision(), 0.4);
    }

    #[test]
    fn report_writes_files() {
        let s = scored(&[1, 0, 1, 0], &[0.9, 0.2, 0.4, 0.5]);
        let r = EvalReport::compute(&s, DEFAULT_THRESHOLD).unwrap();
        assert_eq!(r.confusion.total(), 4);
        let dir = tempfile::tempdir().unwrap();
        r.write(dir.path()).unwrap();
        let json: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
        assert_eq!(json["auroc"].as_f64().unwrap(), r.auroc);
        let roc = std::fs::read_to_string(dir.path().join("roc.csv")).unwrap();
        assert_eq!(roc.lines().count(), 1 + r.roc.len());
    }

    fn arb_samples() -> impl Strategy<Value = Vec<ScoredSample>> {
        prop::collection::vec((0u8..2, 0u32..20), 2..200).prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (l, s))| ScoredSample::new(format!("s{i}"), l, s as f64 / 19.0).unwrap())
                .collect()
        })
    }

    proptest! {
        #[test]
        fn auroc_equals_pair_counting(s in arb_samples()) {
            let pos = s.iter().filter(|x| x.label == 1).count();
            prop_assume!(pos > 0 && pos < s.len());
            let (_, a) = roc_curve(&s).unwrap();
            prop_assert!((a - mann_whitney_auc(&s).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn auprc_equals_enumeration(s in arb_samples()) {
            prop_assume!(s.iter().any(|x| x.label == 1));
            let (_, a) = pr_curve(&s).unwrap();
            prop_assert!((a - enumerated_auprc(&s)).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn auroc_invariant_under_monotone_map(s in arb_samples()) {
            let pos = s.iter().filter(|x| x.label == 1).count();
            prop_assume!(pos > 0 && pos < s.len());
            let mapped: Vec<ScoredSample> = s
                .iter()
                .map(|x| ScoredSample { score: x.score.powi(3) * 0.5 + 0.1, ..x.clone() })
                .collect();
            prop_assert_eq!(roc_curve(&s).unwrap().1, roc_curve(&mapped).unwrap().1);
        }

        #[test]
        fn roc_is_monotone(s in arb_samples()) {
            let pos = s.iter().filter(|x| x.label == 1).count();
            prop_assume!(pos > 0 && pos < s.len());
            let (pts, _) = roc_curve(&s).unwrap();
            for w in pts.windows(2) {
                prop_assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr);
            }
        }
    }
}
