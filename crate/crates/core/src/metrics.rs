//! Evaluation metrics over scored link predictions: F1 at a threshold,
//! rank-based AUC, and area under the precision–recall curve.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One scored test pair.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredPair {
    pub object: String,
    pub attribute: String,
    pub score: f64,
    pub label: bool,
}

/// Confusion counts at the report's threshold.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// Metric bundle for one method on one test set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub f1: f64,
    pub auc: f64,
    pub aupr: f64,
    pub threshold: f64,
    pub counts: Counts,
    /// Free-form context (method name, sample counts, warnings). Keys are
    /// sorted on serialization, keeping report files deterministic.
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub meta: serde_json::Map<String, serde_json::Value>,
}

fn validate(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFiniteScore(i));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::SingleClassLabels);
    }
    Ok(())
}

/// F1, AUC, and AUPR in one pass over the scores.
///
/// Hard predictions for F1 use `score >= threshold`. AUC is the Mann–Whitney
/// statistic with ties counted one half. AUPR sweeps distinct scores in
/// descending order and sums precision times recall increments.
pub fn compute_metrics(scores: &[f64], labels: &[bool], threshold: f64) -> Result<EvalReport> {
    validate(scores, labels)?;

    let mut counts = Counts {
        tp: 0,
        fp: 0,
        tn: 0,
        fn_: 0,
    };
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l) {
            (true, true) => counts.tp += 1,
            (true, false) => counts.fp += 1,
            (false, false) => counts.tn += 1,
            (false, true) => counts.fn_ += 1,
        }
    }

    Ok(EvalReport {
        f1: f1_from_counts(&counts),
        auc: auc_rank(scores, labels),
        aupr: aupr_sweep(scores, labels),
        threshold,
        counts,
        meta: serde_json::Map::new(),
    })
}

/// Wrapper over a prediction list.
pub fn compute_metrics_pairs(pairs: &[ScoredPair], threshold: f64) -> Result<EvalReport> {
    let scores: Vec<f64> = pairs.iter().map(|p| p.score).collect();
    let labels: Vec<bool> = pairs.iter().map(|p| p.label).collect();
    compute_metrics(&scores, &labels, threshold)
}

/// 2PR/(P+R), with the all-zero conventions P=0 when nothing is predicted
/// positive and F1=0 when both P and R vanish.
pub fn f1_from_counts(c: &Counts) -> f64 {
    let predicted = c.tp + c.fp;
    let actual = c.tp + c.fn_;
    let p = if predicted == 0 {
        0.0
    } else {
        c.tp as f64 / predicted as f64
    };
    let r = if actual == 0 {
        0.0
    } else {
        c.tp as f64 / actual as f64
    };
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Average-rank Mann–Whitney AUC; tied scores contribute one half per
/// positive–negative pair. Ranks are integers or half-integers, so the
/// statistic is exact in f64 at any realistic size.
fn auc_rank(scores: &[f64], labels: &[bool]) -> f64 {
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut rank_sum_pos = 0.0f64;
    let mut n_pos = 0usize;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1 ..= j averaged over the tie group
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if labels[idx] {
                rank_sum_pos += avg_rank;
                n_pos += 1;
            }
        }
        i = j;
    }
    let n_neg = n - n_pos;
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    u / (n_pos as f64 * n_neg as f64)
}

/// Area under the precision–recall curve: descending sweep over distinct
/// scores, each step adding `precision · Δrecall` (step interpolation; the
/// curve starts at recall 0 with the first point's precision, which
/// contributes nothing until recall moves).
fn aupr_sweep(scores: &[f64], labels: &[bool]) -> f64 {
    let n = scores.len();
    let n_pos = labels.iter().filter(|&&l| l).count();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut area = 0.0f64;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut recall_prev = 0.0f64;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        for &idx in &order[i..j] {
            if labels[idx] {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = tp as f64 / n_pos as f64;
        area += (recall - recall_prev) * precision;
        recall_prev = recall;
        i = j;
    }
    area
}

// ---------------------------------------------------------------------------
// file formats
// ---------------------------------------------------------------------------

/// Write predictions as TSV `object<TAB>attribute<TAB>score<TAB>label`.
pub fn write_predictions(path: &Path, pairs: &[ScoredPair]) -> Result<()> {
    let mut out = String::new();
    for p in pairs {
        writeln!(
            out,
            "{}\t{}\t{}\t{}",
            p.object,
            p.attribute,
            p.score,
            p.label as u8
        )
        .expect("string write");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Read a predictions TSV back.
pub fn read_predictions(path: &Path) -> Result<Vec<ScoredPair>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut pairs = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::MalformedLine {
                line: lineno + 1,
                found: format!("{} fields", fields.len()),
            });
        }
        let score: f64 = fields[2].parse().map_err(|_| Error::MalformedLine {
            line: lineno + 1,
            found: format!("unparsable score '{}'", fields[2]),
        })?;
        let label = match fields[3] {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::MalformedLine {
                    line: lineno + 1,
                    found: format!("label '{other}' not 0/1"),
                });
            }
        };
        pairs.push(ScoredPair {
            object: fields[0].to_string(),
            attribute: fields[1].to_string(),
            score,
            label,
        });
    }
    Ok(pairs)
}

/// Write a report as pretty JSON (keys sorted, trailing newline).
pub fn write_report(path: &Path, report: &EvalReport) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report)
        .map_err(|e| Error::json(path.display().to_string(), e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Read a report back.
pub fn read_report(path: &Path) -> Result<EvalReport> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Brute-force concordant-pair AUC: wins + half-ties over all
    /// positive–negative pairs.
    fn auc_bruteforce(scores: &[f64], labels: &[bool]) -> f64 {
        let mut num = 0.0f64;
        let mut den = 0usize;
        for (i, &li) in labels.iter().enumerate() {
            if !li {
                continue;
            }
            for (j, &lj) in labels.iter().enumerate() {
                if lj {
                    continue;
                }
                den += 1;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
        num / den as f64
    }

    #[test]
    fn hand_case_is_exact() {
        let scores = [0.9, 0.8, 0.4, 0.2];
        let labels = [true, false, true, false];
        let r = compute_metrics(&scores, &labels, 0.5).unwrap();
        assert_eq!(r.auc, 0.75);
        assert_eq!(r.f1, 0.5);
        assert_eq!(
            r.counts,
            Counts {
                tp: 1,
                fp: 1,
                tn: 1,
                fn_: 1
            }
        );
        // sweep: P=1 at R=1/2, then P=2/3 at R=1
        assert!((r.aupr - (0.5 + 1.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn perfectly_separated_scores_max_out() {
        let scores = [0.9, 0.8, 0.2, 0.1];
        let labels = [true, true, false, false];
        let r = compute_metrics(&scores, &labels, 0.5).unwrap();
        assert_eq!(r.auc, 1.0);
        assert_eq!(r.aupr, 1.0);
        assert_eq!(r.f1, 1.0);
    }

    #[test]
    fn all_tied_scores_give_half_auc() {
        let scores = [0.3; 5];
        let labels = [true, false, true, false, false];
        let r = compute_metrics(&scores, &labels, 0.5).unwrap();
        assert_eq!(r.auc, 0.5);
        // one sweep step: precision = prevalence at recall 1
        assert!((r.aupr - 0.4).abs() < 1e-12);
    }

    #[test]
    fn threshold_tie_predicts_positive() {
        let scores = [0.5, 0.4];
        let labels = [true, false];
        let r = compute_metrics(&scores, &labels, 0.5).unwrap();
        assert_eq!(r.counts.tp, 1);
        assert_eq!(r.counts.tn, 1);
        assert_eq!(r.f1, 1.0);
    }

    #[test]
    fn degenerate_inputs_error() {
        assert!(matches!(
            compute_metrics(&[0.1, 0.2], &[true, true], 0.5),
            Err(Error::SingleClassLabels)
        ));
        assert!(matches!(
            compute_metrics(&[0.1, 0.2], &[false, false], 0.5),
            Err(Error::SingleClassLabels)
        ));
        assert!(matches!(
            compute_metrics(&[0.1], &[true, false], 0.5),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(
            compute_metrics(&[0.1, f64::NAN], &[true, false], 0.5),
            Err(Error::NonFiniteScore(1))
        ));
    }

    #[test]
    fn f1_recomputable_from_counts() {
        let scores = [0.9, 0.7, 0.7, 0.3, 0.2, 0.6];
        let labels = [true, false, true, true, false, false];
        let r = compute_metrics(&scores, &labels, 0.6).unwrap();
        let p = r.counts.tp as f64 / (r.counts.tp + r.counts.fp) as f64;
        let rec = r.counts.tp as f64 / (r.counts.tp + r.counts.fn_) as f64;
        assert!((r.f1 - 2.0 * p * rec / (p + rec)).abs() < 1e-15);
        assert_eq!(
            r.counts.tp + r.counts.fp + r.counts.tn + r.counts.fn_,
            scores.len()
        );
    }

    #[test]
    fn predictions_roundtrip_is_byte_stable() {
        let pairs = vec![
            ScoredPair {
                object: "g1".into(),
                attribute: "m1".into(),
                score: 0.125,
                label: true,
            },
            ScoredPair {
                object: "g2".into(),
                attribute: "m3".into(),
                score: 1.0 / 3.0,
                label: false,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pred.tsv");
        write_predictions(&path, &pairs).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let loaded = read_predictions(&path).unwrap();
        assert_eq!(loaded, pairs);
        write_predictions(&path, &loaded).unwrap();
        assert_eq!(bytes, std::fs::read(&path).unwrap());
    }

    #[test]
    fn malformed_predictions_fail_with_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pred.tsv");
        std::fs::write(&path, "g1\tm1\t0.5\t1\ng2\tm2\toops\t0\n").unwrap();
        assert!(matches!(
            read_predictions(&path),
            Err(Error::MalformedLine { line: 2, .. })
        ));
        std::fs::write(&path, "g1\tm1\t0.5\t2\n").unwrap();
        assert!(matches!(
            read_predictions(&path),
            Err(Error::MalformedLine { line: 1, .. })
        ));
    }

    #[test]
    fn report_roundtrip_and_layout() {
        let scores = [0.9, 0.8, 0.4, 0.2];
        let labels = [true, false, true, false];
        let mut r = compute_metrics(&scores, &labels, 0.5).unwrap();
        r.meta
            .insert("method".to_string(), serde_json::json!("cn"));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        write_report(&path, &r).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        for key in ["\"f1\"", "\"auc\"", "\"aupr\"", "\"threshold\"", "\"counts\"", "\"fn\""] {
            assert!(text.contains(key), "missing {key}");
        }
        assert_eq!(read_report(&path).unwrap(), r);
    }

    proptest! {
        #[test]
        fn auc_matches_bruteforce(
            raw in proptest::collection::vec((0u32..32, any::<bool>()), 2..80)
        ) {
            let scores: Vec<f64> = raw.iter().map(|&(s, _)| s as f64 / 32.0).collect();
            let mut labels: Vec<bool> = raw.iter().map(|&(_, l)| l).collect();
            // force both classes
            labels[0] = true;
            let last = labels.len() - 1;
            labels[last] = false;
            let r = compute_metrics(&scores, &labels, 0.5).unwrap();
            let oracle = auc_bruteforce(&scores, &labels);
            prop_assert!((r.auc - oracle).abs() <= 1e-12);
            prop_assert!((0.0..=1.0).contains(&r.auc));
            prop_assert!((0.0..=1.0).contains(&r.aupr));
            prop_assert!((0.0..=1.0).contains(&r.f1));
        }

        #[test]
        fn metrics_invariant_under_monotone_transform(
            raw in proptest::collection::vec((0u32..=1024, any::<bool>()), 2..60),
            thr in 0u32..=1024,
        ) {
            // dyadic scores make the affine map 2x+3 exact, hence strictly
            // monotone bit-for-bit
            let scores: Vec<f64> = raw.iter().map(|&(s, _)| s as f64 / 1024.0).collect();
            let mut labels: Vec<bool> = raw.iter().map(|&(_, l)| l).collect();
            labels[0] = true;
            let last = labels.len() - 1;
            labels[last] = false;
            let threshold = thr as f64 / 1024.0;

            let base = compute_metrics(&scores, &labels, threshold).unwrap();
            let mapped: Vec<f64> = scores.iter().map(|&s| 2.0 * s + 3.0).collect();
            let moved = compute_metrics(&mapped, &labels, 2.0 * threshold + 3.0).unwrap();
            prop_assert_eq!(base.auc, moved.auc);
            prop_assert_eq!(base.aupr, moved.aupr);
            prop_assert_eq!(base.f1, moved.f1);
            prop_assert_eq!(base.counts, moved.counts);
        }
    }
}
