use serde::{Deserialize, Serialize};

use super::EvalError;

/// Scores with binary ground truth (`true` = positive).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSet {
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self, EvalError> {
        if scores.len() != labels.len() {
            return Err(EvalError::LengthMismatch { scores: scores.len(), labels: labels.len() });
        }
        if let Some(index) = scores.iter().position(|s| !s.is_finite()) {
            return Err(EvalError::NonFiniteScore { index });
        }
        Ok(Self { scores, labels })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    pub fn positive_fraction(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.positives() as f64 / self.len() as f64
        }
    }

    /// Indices by descending score; equal scores keep input order.
    fn descending(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]));
        order
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// Starts at (0, 0) with threshold +∞, one point per distinct score.
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// Threshold sweep over distinct scores with ties grouped into one step, so
/// the trapezoid AUC equals the Mann–Whitney statistic with half credit for
/// tied pairs.
pub fn roc_curve(set: &ScoredSet) -> Result<RocCurve, EvalError> {
    let pos = set.positives() as u64;
    let neg = set.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(EvalError::SingleClass);
    }
    let order = set.descending();
    let mut points = vec![RocPoint { threshold: f64::INFINITY, fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0u64, 0u64);
    // Twice the area in units of (1/neg)·(1/pos).
    let mut doubled_area: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let threshold = set.scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && set.scores[order[i]] == threshold {
            if set.labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        doubled_area += u128::from(fp - fp0) * u128::from(tp + tp0);
        points.push(RocPoint { threshold, fpr: fp as f64 / neg as f64, tpr: tp as f64 / pos as f64 });
    }
    let auc = doubled_area as f64 / (2.0 * pos as f64 * neg as f64);
    Ok(RocCurve { points, auc })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    /// One point per rank in descending-score order.
    pub points: Vec<PrPoint>,
    pub ap: f64,
}

/// Step-wise (non-interpolated) average precision: the mean over positives
/// of the precision at each positive's rank. Tied scores are ranked in input
/// order.
pub fn pr_curve(set: &ScoredSet) -> Result<PrCurve, EvalError> {
    let pos = set.positives();
    if pos == 0 {
        return Err(EvalError::NoPositives);
    }
    let mut points = Vec::with_capacity(set.len());
    let mut tp = 0usize;
    let mut precision_sum = 0.0;
    for (rank, i) in set.descending().into_iter().enumerate() {
        let precision_here = |tp: usize| tp as f64 / (rank + 1) as f64;
        if set.labels[i] {
            tp += 1;
            precision_sum += precision_here(tp);
        }
        points.push(PrPoint { threshold: set.scores[i], recall: tp as f64 / pos as f64, precision: precision_here(tp) });
    }
    Ok(PrCurve { points, ap: precision_sum / pos as f64 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveReport {
    pub roc: RocCurve,
    pub pr: PrCurve,
    pub n: usize,
    pub positive_fraction: f64,
}

impl CurveReport {
    pub fn auc(&self) -> f64 {
        self.roc.auc
    }

    pub fn ap(&self) -> f64 {
        self.pr.ap
    }
}

pub fn evaluate(set: &ScoredSet) -> Result<CurveReport, EvalError> {
    Ok(CurveReport { roc: roc_curve(set)?, pr: pr_curve(set)?, n: set.len(), positive_fraction: set.positive_fraction() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(scores: &[f64], labels: &[u8]) -> ScoredSet {
        ScoredSet::new(scores.to_vec(), labels.iter().map(|&l| l == 1).collect()).unwrap()
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_curve(&set(&[0.9, 0.8, 0.3], &[1, 1, 0])).unwrap().auc, 1.0);
        assert_eq!(roc_curve(&set(&[0.9, 0.8, 0.3, 0.1], &[1, 0, 1, 0])).unwrap().auc, 0.75);
        assert_eq!(roc_curve(&set(&[0.4; 5], &[1, 0, 1, 0, 0])).unwrap().auc, 0.5);
        assert!(matches!(roc_curve(&set(&[0.1, 0.2], &[1, 1])), Err(EvalError::SingleClass)));
    }

    #[test]
    fn ap_examples() {
        let ap = pr_curve(&set(&[0.9, 0.5, 0.1], &[1, 0, 1])).unwrap().ap;
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(pr_curve(&set(&[0.9, 0.8, 0.1], &[1, 1, 0])).unwrap().ap, 1.0);
        assert_eq!(pr_curve(&set(&[0.9, 0.8, 0.7, 0.1], &[0, 0, 0, 1])).unwrap().ap, 0.25);
        assert!(matches!(pr_curve(&set(&[0.1], &[0])), Err(EvalError::NoPositives)));
    }

    #[test]
    fn roc_points_end_at_one_one() {
        let c = roc_curve(&set(&[0.3, 0.3, 0.9, 0.1], &[1, 0, 1, 0])).unwrap();
        assert_eq!(c.points.len(), 4);
        let last = c.points.last().unwrap();
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(ScoredSet::new(vec![0.1], vec![]), Err(EvalError::LengthMismatch { .. })));
        assert!(matches!(ScoredSet::new(vec![f64::NAN], vec![true]), Err(EvalError::NonFiniteScore { index: 0 })));
    }
}
