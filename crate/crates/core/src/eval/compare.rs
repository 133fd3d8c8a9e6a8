//! Side-by-side CNN vs baseline reports and their CSV plot-data export.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{evaluate, shape_features, CurveReport, EvalError, ExtraTreesConfig, Forest, ScoredSet};
use crate::patchset::Patch;

pub const CNN_METHOD: &str = "cnn";
/// Carries the feature-set version so summaries from different feature
/// definitions are never mixed up.
pub const BASELINE_METHOD: &str = "extra_trees_shape14_v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub cnn: CurveReport,
    pub baseline: CurveReport,
}

/// Both score sets must describe the same test patches in the same order.
pub fn compare_methods(cnn: &ScoredSet, baseline: &ScoredSet) -> Result<Comparison, EvalError> {
    if cnn.len() != baseline.len() {
        return Err(EvalError::LengthMismatch { scores: cnn.len(), labels: baseline.len() });
    }
    if let Some(i) = cnn.labels.iter().zip(&baseline.labels).position(|(a, b)| a != b) {
        return Err(EvalError::LabelMismatch(i));
    }
    Ok(Comparison { cnn: evaluate(cnn)?, baseline: evaluate(baseline)? })
}

/// Trains the extra-trees baseline on shape features of `train` and scores `test`.
pub fn baseline_scores(train: &[Patch], test: &[Patch], cfg: &ExtraTreesConfig) -> Result<Vec<f64>, EvalError> {
    let features = |ps: &[Patch]| -> Vec<Vec<f64>> {
        ps.iter().map(|p| shape_features(p.pixels.data(), p.size()).to_vec()).collect()
    };
    let labels: Vec<bool> = train.iter().map(|p| p.label.is_positive()).collect();
    let forest = Forest::train(&features(train), &labels, cfg)?;
    Ok(forest.predict_many(&features(test)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub auc: f64,
    pub ap: f64,
    pub n: usize,
    pub positive_fraction: f64,
}

fn write(path: &Path, text: &str) -> Result<(), EvalError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|source| EvalError::Io { path: dir.to_path_buf(), source })?;
    }
    fs::write(path, text).map_err(|source| EvalError::Io { path: path.to_path_buf(), source })
}

fn roc_csv(r: &CurveReport) -> String {
    let mut s = String::from("threshold,fpr,tpr\n");
    for p in &r.roc.points {
        writeln!(s, "{},{},{}", p.threshold, p.fpr, p.tpr).unwrap();
    }
    s
}

fn pr_csv(r: &CurveReport) -> String {
    let mut s = String::from("threshold,recall,precision\n");
    for p in &r.pr.points {
        writeln!(s, "{},{},{}", p.threshold, p.recall, p.precision).unwrap();
    }
    s
}

/// Writes `<dir>/<method>/roc.csv`, `<dir>/<method>/pr.csv` for both methods
/// and `<dir>/summary.csv`; returns the paths in that order.
pub fn write_comparison(c: &Comparison, dir: &Path) -> Result<Vec<PathBuf>, EvalError> {
    let mut written = Vec::new();
    let mut summary = String::from("method,auc,ap,n,positive_fraction\n");
    for (method, report) in [(CNN_METHOD, &c.cnn), (BASELINE_METHOD, &c.baseline)] {
        let roc = dir.join(method).join("roc.csv");
        write(&roc, &roc_csv(report))?;
        let pr = dir.join(method).join("pr.csv");
        write(&pr, &pr_csv(report))?;
        written.extend([roc, pr]);
        writeln!(summary, "{method},{},{},{},{}", report.auc(), report.ap(), report.n, report.positive_fraction).unwrap();
    }
    let path = dir.join("summary.csv");
    write(&path, &summary)?;
    written.push(path);
    Ok(written)
}

/// Parses a `roc.csv` or `pr.csv` export (given its header line) into rows.
pub fn read_curve_csv(path: &Path, header: &str) -> Result<Vec<Vec<f64>>, EvalError> {
    let parse_err = |reason: String| EvalError::Parse { path: path.to_path_buf(), reason };
    let text = fs::read_to_string(path).map_err(|source| EvalError::Io { path: path.to_path_buf(), source })?;
    let mut lines = text.lines();
    if lines.next() != Some(header) {
        return Err(parse_err(format!("expected header {header:?}")));
    }
    lines
        .map(|l| l.split(',').map(|v| v.parse::<f64>().map_err(|e| parse_err(format!("{v:?}: {e}")))).collect())
        .collect()
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>, EvalError> {
    let parse_err = |reason: String| EvalError::Parse { path: path.to_path_buf(), reason };
    let text = fs::read_to_string(path).map_err(|source| EvalError::Io { path: path.to_path_buf(), source })?;
    let mut lines = text.lines();
    if lines.next() != Some("method,auc,ap,n,positive_fraction") {
        return Err(parse_err("unexpected header".into()));
    }
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            let [method, auc, ap, n, frac] = f[..] else {
                return Err(parse_err(format!("expected 5 fields in {line:?}")));
            };
            let num = |v: &str| v.parse::<f64>().map_err(|e| parse_err(format!("{v:?}: {e}")));
            Ok(SummaryRow {
                method: method.to_string(),
                auc: num(auc)?,
                ap: num(ap)?,
                n: n.parse().map_err(|e| parse_err(format!("{n:?}: {e}")))?,
                positive_fraction: num(frac)?,
            })
        })
        .collect()
}
