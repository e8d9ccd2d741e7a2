//! ROC analysis, error rates, per-system attribution and feature correlation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::Label;
use crate::tensor::Matrix;

/// ROC points ordered by decreasing threshold. A row counts as `DF` when its
/// score is at least the threshold. The first point sits at `+inf`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub thresholds: Vec<f64>,
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
}

impl RocCurve {
    pub fn len(&self) -> usize {
        self.fpr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fpr.is_empty()
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.thresholds
            .iter()
            .zip(&self.fpr)
            .zip(&self.tpr)
            .map(|((t, f), p)| (*t, *f, *p))
    }
}

fn class_counts(labels: &[Label]) -> (usize, usize) {
    let df = labels.iter().filter(|&&l| l == Label::Df).count();
    (df, labels.len() - df)
}

pub fn roc_curve(scores: &[f64], labels: &[Label]) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(Error::Metric(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Metric("scores contain NaN".into()));
    }
    let (pos, neg) = class_counts(labels);
    if pos == 0 || neg == 0 {
        return Err(Error::Metric("ROC needs both REAL and DF rows".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut roc = RocCurve {
        thresholds: vec![f64::INFINITY],
        fpr: vec![0.0],
        tpr: vec![0.0],
    };
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = 0;
    while k < order.len() {
        let t = scores[order[k]];
        while k < order.len() && scores[order[k]] == t {
            match labels[order[k]] {
                Label::Df => tp += 1,
                Label::Real => fp += 1,
            }
            k += 1;
        }
        roc.thresholds.push(t);
        roc.fpr.push(fp as f64 / neg as f64);
        roc.tpr.push(tp as f64 / pos as f64);
    }
    Ok(roc)
}

/// Trapezoidal area under the curve.
pub fn auc(r: &RocCurve) -> f64 {
    r.fpr
        .windows(2)
        .zip(r.tpr.windows(2))
        .map(|(f, t)| (f[1] - f[0]) * (t[1] + t[0]) / 2.0)
        .sum()
}

/// Rate at which false positives equal misses, interpolated linearly on the
/// first ROC segment where `FPR − FNR` turns non-negative.
pub fn eer(r: &RocCurve) -> f64 {
    let d = |k: usize| r.fpr[k] - (1.0 - r.tpr[k]);
    for k in 0..r.len() {
        let dk = d(k);
        if dk >= 0.0 {
            if k == 0 || dk == 0.0 {
                return r.fpr[k];
            }
            let dp = d(k - 1);
            let t = -dp / (dk - dp);
            return r.fpr[k - 1] + t * (r.fpr[k] - r.fpr[k - 1]);
        }
    }
    // unreachable for valid curves, which end at (1, 1)
    r.fpr.last().copied().unwrap_or(0.5)
}

/// Mean of the per-class recalls with `DF` positive.
pub fn balanced_accuracy(pred: &[Label], truth: &[Label]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Metric(format!(
            "{} predictions but {} labels",
            pred.len(),
            truth.len()
        )));
    }
    let (pos, neg) = class_counts(truth);
    if pos == 0 || neg == 0 {
        return Err(Error::Metric("balanced accuracy needs both REAL and DF rows".into()));
    }
    let (mut tp, mut tn) = (0usize, 0usize);
    for (p, t) in pred.iter().zip(truth) {
        match (p, t) {
            (Label::Df, Label::Df) => tp += 1,
            (Label::Real, Label::Real) => tn += 1,
            _ => {}
        }
    }
    Ok((tp as f64 / pos as f64 + tn as f64 / neg as f64) / 2.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionRow {
    pub system_id: String,
    pub total: usize,
    pub correct: usize,
    pub rate: f64,
}

/// Per system id, the share of rows predicted as their true class. Sorted by id.
pub fn attribution_rates(pred: &[Label], truth: &[Label], system_ids: &[String]) -> Result<Vec<AttributionRow>> {
    if pred.len() != truth.len() || pred.len() != system_ids.len() {
        return Err(Error::Metric(
            "predictions, labels and system ids differ in length".into(),
        ));
    }
    let mut groups: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for ((p, t), id) in pred.iter().zip(truth).zip(system_ids) {
        if id.is_empty() {
            return Err(Error::Metric("row without a system id".into()));
        }
        let g = groups.entry(id.as_str()).or_default();
        g.0 += 1;
        g.1 += usize::from(p == t);
    }
    if groups.is_empty() {
        return Err(Error::Metric("no rows to attribute".into()));
    }
    Ok(groups
        .into_iter()
        .map(|(id, (total, correct))| AttributionRow {
            system_id: id.to_string(),
            total,
            correct,
            rate: correct as f64 / total as f64,
        })
        .collect())
}

/// Sample Pearson coefficients between feature columns.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub r: Matrix,
    /// First column of the second block (`N_s`).
    pub boundary: Option<usize>,
}

impl CorrelationMatrix {
    pub fn with_boundary(mut self, boundary: usize) -> Result<Self> {
        if boundary > self.r.cols() {
            return Err(Error::Metric(format!(
                "block boundary {boundary} exceeds dimension {}",
                self.r.cols()
            )));
        }
        self.boundary = Some(boundary);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.r.cols()
    }

    /// Copy with the diagonal zeroed, for plotting.
    pub fn display_matrix(&self) -> Matrix {
        let mut m = self.r.clone();
        for i in 0..m.rows() {
            m.set(i, i, 0.0);
        }
        m
    }
}

/// Columns with zero spread correlate 0 with every other column and 1 with
/// themselves.
pub fn pearson_matrix(f: &Matrix) -> Result<CorrelationMatrix> {
    let (n, dim) = f.shape();
    if n < 2 {
        return Err(Error::Metric(format!("correlation needs at least 2 rows, got {n}")));
    }
    if !f.is_finite() {
        return Err(Error::NonFinite("correlation input".into()));
    }
    let mut centered = f.transpose();
    let mut norms = vec![0.0; dim];
    for (c, norm) in norms.iter_mut().enumerate() {
        let col = centered.row_mut(c);
        let mean = col.iter().sum::<f64>() / n as f64;
        col.iter_mut().for_each(|v| *v -= mean);
        let ss: f64 = col.iter().map(|v| v * v).sum();
        let scale = mean.abs().max(1.0);
        *norm = if ss.sqrt() <= 1e-12 * scale * (n as f64).sqrt() {
            0.0
        } else {
            ss.sqrt()
        };
    }
    let mut r = Matrix::zeros(dim, dim);
    for i in 0..dim {
        r.set(i, i, 1.0);
        for j in i + 1..dim {
            let v = if norms[i] == 0.0 || norms[j] == 0.0 {
                0.0
            } else {
                let d: f64 = centered.row(i).iter().zip(centered.row(j)).map(|(a, b)| a * b).sum();
                (d / (norms[i] * norms[j])).clamp(-1.0, 1.0)
            };
            r.set(i, j, v);
            r.set(j, i, v);
        }
    }
    Ok(CorrelationMatrix { r, boundary: None })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self { mean: 0.0, std: 0.0 };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

/// Statistics of absolute off-diagonal coefficients per block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockStats {
    pub fs_fs: MeanStd,
    pub fp_fp: MeanStd,
    pub fs_fp: MeanStd,
}

pub fn block_stats(c: &CorrelationMatrix) -> Result<BlockStats> {
    let b = c
        .boundary
        .ok_or_else(|| Error::Metric("correlation matrix has no block boundary".into()))?;
    let dim = c.dim();
    let (mut ss, mut pp, mut sp) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..dim {
        for j in i + 1..dim {
            let v = c.r.get(i, j).abs();
            match (i < b, j < b) {
                (true, true) => ss.push(v),
                (false, false) => pp.push(v),
                _ => sp.push(v),
            }
        }
    }
    Ok(BlockStats {
        fs_fs: MeanStd::of(&ss),
        fp_fp: MeanStd::of(&pp),
        fs_fp: MeanStd::of(&sp),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub real: usize,
    pub df: usize,
    pub total: usize,
}

impl Counts {
    pub fn of(labels: &[Label]) -> Self {
        let (df, real) = class_counts(labels);
        Self {
            real,
            df,
            total: labels.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc: f64,
    pub eer: f64,
    pub balanced_accuracy: f64,
    pub roc: RocCurve,
    pub attribution: Vec<AttributionRow>,
    pub counts: Counts,
}

/// Full report from decision scores; predictions use threshold 0.
pub fn evaluate(scores: &[f64], truth: &[Label], system_ids: &[String]) -> Result<EvalReport> {
    let roc = roc_curve(scores, truth)?;
    let pred: Vec<Label> = scores.iter().map(|&s| Label::from_score(s)).collect();
    Ok(EvalReport {
        auc: auc(&roc),
        eer: eer(&roc),
        balanced_accuracy: balanced_accuracy(&pred, truth)?,
        attribution: attribution_rates(&pred, truth, system_ids)?,
        counts: Counts::of(truth),
        roc,
    })
}

/// `x` as a percentage rounded to two decimals.
pub fn percent(x: f64) -> f64 {
    (x * 10_000.0).round() / 100.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Label::{Df, Real};

    fn mann_whitney(scores: &[f64], labels: &[Label]) -> f64 {
        let mut num = 0.0;
        let mut pairs = 0.0;
        for (s1, l1) in scores.iter().zip(labels) {
            for (s0, l0) in scores.iter().zip(labels) {
                if *l1 == Df && *l0 == Real {
                    pairs += 1.0;
                    num += if s1 > s0 {
                        1.0
                    } else if s1 == s0 {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        num / pairs
    }

    /// Rates at every candidate threshold computed by counting directly.
    fn sweep_eer(scores: &[f64], labels: &[Label]) -> f64 {
        let mut ts: Vec<f64> = scores.to_vec();
        ts.sort_by(|a, b| b.total_cmp(a));
        ts.dedup();
        ts.insert(0, f64::INFINITY);
        let pos = labels.iter().filter(|&&l| l == Df).count() as f64;
        let neg = labels.len() as f64 - pos;
        let rates: Vec<(f64, f64)> = ts
            .iter()
            .map(|&t| {
                let fp = scores
                    .iter()
                    .zip(labels)
                    .filter(|(s, l)| **s >= t && **l == Real)
                    .count();
                let miss = scores.iter().zip(labels).filter(|(s, l)| **s < t && **l == Df).count();
                (fp as f64 / neg, miss as f64 / pos)
            })
            .collect();
        for k in 0..rates.len() {
            let (f, m) = rates[k];
            if f - m >= 0.0 {
                if k == 0 || f == m {
                    return f;
                }
                let (f0, m0) = rates[k - 1];
                let t = (m0 - f0) / ((f - m) - (f0 - m0));
                return f0 + t * (f - f0);
            }
        }
        unreachable!()
    }

    #[test]
    fn four_score_example() {
        let scores = [0.8, 0.4, 0.6, 0.2];
        let labels = [Df, Df, Real, Real];
        let r = roc_curve(&scores, &labels).unwrap();
        assert_eq!(r.fpr, vec![0.0, 0.0, 0.5, 0.5, 1.0]);
        assert_eq!(r.tpr, vec![0.0, 0.5, 0.5, 1.0, 1.0]);
        assert_eq!(r.thresholds[1..], [0.8, 0.6, 0.4, 0.2]);
        assert_eq!(auc(&r), 0.75);
        assert_eq!(eer(&r), sweep_eer(&scores, &labels));
    }

    #[test]
    fn eer_six_score_example() {
        let scores = [0.9, 0.7, 0.3, 0.8, 0.2, 0.1];
        let labels = [Df, Df, Df, Real, Real, Real];
        let r = roc_curve(&scores, &labels).unwrap();
        let e = eer(&r);
        assert!((e - sweep_eer(&scores, &labels)).abs() < 1e-12);
        assert!((e - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_chance() {
        let labels = [Df, Df, Real, Real];
        let r = roc_curve(&[3.0, 2.0, 1.0, 0.0], &labels).unwrap();
        assert!(r.fpr.iter().zip(&r.tpr).any(|(f, t)| *f == 0.0 && *t == 1.0));
        assert_eq!(auc(&r), 1.0);
        assert_eq!(eer(&r), 0.0);
        let flat = roc_curve(&[0.5; 4], &labels).unwrap();
        assert_eq!(flat.fpr, vec![0.0, 1.0]);
        assert_eq!(flat.tpr, vec![0.0, 1.0]);
        assert_eq!(auc(&flat), 0.5);
        assert_eq!(eer(&flat), 0.5);
    }

    #[test]
    fn roc_errors() {
        assert!(roc_curve(&[1.0, 2.0], &[Df, Df]).is_err());
        assert!(roc_curve(&[1.0], &[Df, Real]).is_err());
        assert!(roc_curve(&[f64::NAN, 1.0], &[Df, Real]).is_err());
    }

    #[test]
    fn balanced_accuracy_cases() {
        let truth = [Df, Df, Real, Real];
        assert_eq!(balanced_accuracy(&truth, &truth).unwrap(), 1.0);
        assert_eq!(balanced_accuracy(&[Df, Df, Df, Real], &truth).unwrap(), 0.75);
        assert_eq!(balanced_accuracy(&[Df; 4], &truth).unwrap(), 0.5);
        assert!(balanced_accuracy(&[Df, Df], &[Df, Df]).is_err());
    }

    #[test]
    fn attribution_cases() {
        let mut pred = vec![Df; 8];
        pred.extend([Real, Real]);
        pred.extend([Real; 5]);
        let mut truth = vec![Df; 10];
        truth.extend([Real; 5]);
        let mut ids = vec!["A07".to_string(); 10];
        ids.extend(vec!["AU".to_string(); 5]);
        let rows = attribution_rates(&pred, &truth, &ids).unwrap();
        assert_eq!(rows[0].system_id, "A07");
        assert!((rows[0].rate - 0.8).abs() < 1e-15);
        assert_eq!(rows[1].rate, 1.0);
        assert!(attribution_rates(&[], &[], &[]).is_err());
    }

    #[test]
    fn pearson_cases() {
        let f = Matrix::from_rows(&[
            vec![1.0, -1.0, 1.0, 5.0],
            vec![-1.0, 1.0, 1.0, 5.0],
            vec![1.0, -1.0, -1.0, 5.0],
            vec![-1.0, 1.0, -1.0, 5.0],
        ])
        .unwrap();
        let c = pearson_matrix(&f).unwrap();
        assert_eq!(c.r.get(0, 0), 1.0);
        assert!((c.r.get(0, 1) + 1.0).abs() < 1e-15);
        assert_eq!(c.r.get(0, 2), 0.0);
        assert_eq!(c.r.get(3, 3), 1.0);
        assert_eq!(c.r.get(3, 0), 0.0);
        let d = c.display_matrix();
        assert!((0..4).all(|i| d.get(i, i) == 0.0));
        assert!(pearson_matrix(&Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap()).is_err());
    }

    #[test]
    fn block_stats_cases() {
        let mut id = Matrix::zeros(5, 5);
        (0..5).for_each(|i| id.set(i, i, 1.0));
        let c = CorrelationMatrix {
            r: id,
            boundary: Some(2),
        };
        let s = block_stats(&c).unwrap();
        assert_eq!((s.fs_fs.mean, s.fp_fp.mean, s.fs_fp.mean), (0.0, 0.0, 0.0));
        let mut half = Matrix::filled(5, 5, 0.5);
        (0..5).for_each(|i| half.set(i, i, 1.0));
        let c = CorrelationMatrix {
            r: half,
            boundary: Some(2),
        };
        let s = block_stats(&c).unwrap();
        for b in [s.fs_fs, s.fp_fp, s.fs_fp] {
            assert_eq!(b, MeanStd { mean: 0.5, std: 0.0 });
        }
        assert!(block_stats(&CorrelationMatrix {
            r: Matrix::zeros(2, 2),
            boundary: None
        })
        .is_err());
    }

    #[test]
    fn percent_rounding() {
        assert_eq!(percent(0.98851), 98.85);
        assert_eq!(percent(0.0539), 5.39);
    }

    fn scored() -> impl Strategy<Value = (Vec<f64>, Vec<Label>)> {
        (2usize..200).prop_flat_map(|n| {
            (
                proptest::collection::vec((0i32..40).prop_map(|v| v as f64 * 0.25), n),
                proptest::collection::vec(any::<bool>(), n),
            )
                .prop_map(|(s, b)| {
                    let mut l: Vec<Label> = b.into_iter().map(|x| if x { Df } else { Real }).collect();
                    l[0] = Df;
                    l[1] = Real;
                    (s, l)
                })
        })
    }

    proptest! {
        #[test]
        fn auc_is_mann_whitney((s, l) in scored()) {
            let r = roc_curve(&s, &l).unwrap();
            prop_assert!((auc(&r) - mann_whitney(&s, &l)).abs() <= 1e-12);
            prop_assert!((eer(&r) - sweep_eer(&s, &l)).abs() <= 1e-9);
        }

        #[test]
        fn roc_is_monotone((s, l) in scored()) {
            let r = roc_curve(&s, &l).unwrap();
            prop_assert_eq!((r.fpr[0], r.tpr[0]), (0.0, 0.0));
            prop_assert_eq!((*r.fpr.last().unwrap(), *r.tpr.last().unwrap()), (1.0, 1.0));
            for k in 1..r.len() {
                prop_assert!(r.fpr[k] >= r.fpr[k - 1] && r.tpr[k] >= r.tpr[k - 1]);
                prop_assert!(r.thresholds[k] < r.thresholds[k - 1]);
            }
            let e = eer(&r);
            prop_assert!((0.0..=1.0).contains(&e));
        }

        #[test]
        fn monotone_transform_invariance((s, l) in scored()) {
            let t: Vec<f64> = s.iter().map(|v| (v * 0.7).exp() + 3.0 * v).collect();
            let (a, b) = (roc_curve(&s, &l).unwrap(), roc_curve(&t, &l).unwrap());
            prop_assert_eq!(&a.fpr, &b.fpr);
            prop_assert_eq!(&a.tpr, &b.tpr);
            prop_assert_eq!(auc(&a), auc(&b));
            prop_assert_eq!(eer(&a), eer(&b));
        }

        #[test]
        fn balanced_accuracy_permutation((s, l) in scored(), rot in 0usize..200) {
            let pred: Vec<Label> = s.iter().map(|&v| Label::from_score(v - 5.0)).collect();
            let ba = balanced_accuracy(&pred, &l).unwrap();
            let k = rot % l.len();
            let mut p2 = pred.clone();
            let mut l2 = l.clone();
            p2.rotate_left(k);
            l2.rotate_left(k);
            prop_assert_eq!(ba, balanced_accuracy(&p2, &l2).unwrap());
        }

        #[test]
        fn pearson_symmetric_bounded(
            data in proptest::collection::vec(-5.0f64..5.0, 6 * 5),
        ) {
            let f = Matrix::from_vec(6, 5, data).unwrap();
            let c = pearson_matrix(&f).unwrap();
            for i in 0..5 {
                for j in 0..5 {
                    prop_assert!((c.r.get(i, j) - c.r.get(j, i)).abs() <= 1e-12);
                    prop_assert!((-1.0..=1.0).contains(&c.r.get(i, j)));
                }
            }
        }

        #[test]
        fn attribution_weighted_average_is_recall((s, l) in scored()) {
            let pred: Vec<Label> = s.iter().map(|&v| Label::from_score(v - 5.0)).collect();
            let ids: Vec<String> = l
                .iter()
                .enumerate()
                .map(|(i, lab)| match lab { Df => format!("A{}", i % 3), Real => "AU".into() })
                .collect();
            let rows = attribution_rates(&pred, &l, &ids).unwrap();
            let df_rows: Vec<&AttributionRow> = rows.iter().filter(|r| r.system_id != "AU").collect();
            let total: usize = df_rows.iter().map(|r| r.total).sum();
            let weighted: f64 = df_rows.iter().map(|r| r.rate * r.total as f64).sum::<f64>() / total as f64;
            let tp = pred.iter().zip(&l).filter(|(p, t)| **p == Df && **t == Df).count();
            prop_assert!((weighted - tp as f64 / total as f64).abs() < 1e-12);
            prop_assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.rate)));
        }
    }
}
