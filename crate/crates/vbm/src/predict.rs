//! MCI-to-AD conversion prediction: ridge-stabilized logistic regression
//! fit by iteratively reweighted least squares, stratified k-fold
//! cross-validation, ROC/AUC with the Mann-Whitney tie convention, and
//! threshold classification metrics.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cohort::{CohortTable, Diagnosis, Sex};
use crate::error::{Error, Result};

/// Ridge penalty applied by default; 9 events out of 129 invites
/// quasi-separation, which an unpenalized fit turns into runaway
/// coefficients.
pub const DEFAULT_L2: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct LogisticModel {
    pub feature_names: Vec<String>,
    /// Intercept first, then one coefficient per feature, on the original
    /// (unstandardized) scale.
    pub coefficients: Vec<f64>,
    /// Training-set standardization constants, one per feature.
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    pub iterations: usize,
    /// Max-norm of the penalized score vector at the solution.
    pub gradient_norm: f64,
    /// Set when the coefficient norm diverged (complete separation).
    pub separation: bool,
}

impl LogisticModel {
    pub fn predict_proba(&self, row: &[f64]) -> f64 {
        let z: f64 = self.coefficients[0]
            + row
                .iter()
                .zip(&self.coefficients[1..])
                .map(|(x, b)| x * b)
                .sum::<f64>();
        1.0 / (1.0 + (-z).exp())
    }
}

pub fn odds_ratio(beta: f64) -> f64 {
    beta.exp()
}

/// Maximum-penalized-likelihood logistic fit by IRLS. Features are
/// standardized internally (train mean/sd, binaries included, for solver
/// conditioning); the intercept is never penalized and coefficients are
/// reported back on the original scale.
pub fn fit_logistic(
    feature_names: &[String],
    features: &[Vec<f64>],
    labels: &[bool],
    l2: f64,
) -> Result<LogisticModel> {
    let n = labels.len();
    let m = feature_names.len();
    if features.len() != n {
        return Err(Error::Predict(format!("{} feature rows for {n} labels", features.len())));
    }
    if n < m + 1 {
        return Err(Error::Predict(format!("n = {n} too small for {m} features")));
    }
    if l2 < 0.0 {
        return Err(Error::Predict("l2 penalty must be >= 0".into()));
    }
    let positives = labels.iter().filter(|&&y| y).count();
    if positives == 0 || positives == n {
        return Err(Error::Predict("labels are single-class".into()));
    }
    for row in features {
        if row.len() != m {
            return Err(Error::Predict("ragged feature matrix".into()));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Predict("non-finite feature value".into()));
        }
    }

    let mut means = vec![0.0; m];
    let mut sds = vec![1.0; m];
    for j in 0..m {
        let mean = features.iter().map(|r| r[j]).sum::<f64>() / n as f64;
        let var = features.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n as f64;
        means[j] = mean;
        sds[j] = if var > 0.0 { var.sqrt() } else { 1.0 };
    }

    // z = [1 | standardized features]
    let z = DMatrix::from_fn(n, m + 1, |r, c| {
        if c == 0 {
            1.0
        } else {
            (features[r][c - 1] - means[c - 1]) / sds[c - 1]
        }
    });
    let y = DVector::from_fn(n, |r, _| labels[r] as u8 as f64);

    let mut beta = DVector::zeros(m + 1);
    let mut iterations = 0;
    let mut gradient_norm = f64::INFINITY;
    let mut separation = false;
    for iter in 0..100 {
        iterations = iter + 1;
        let eta = &z * &beta;
        let p = eta.map(|e| 1.0 / (1.0 + (-e).exp()));
        let mut grad = z.transpose() * (&y - &p);
        for j in 1..m + 1 {
            grad[j] -= l2 * beta[j];
        }
        gradient_norm = grad.amax();
        if gradient_norm <= 1e-8 {
            break;
        }
        let w = p.map(|pi| (pi * (1.0 - pi)).max(1e-10));
        let mut hessian = z.transpose() * DMatrix::from_diagonal(&w) * &z;
        for j in 1..m + 1 {
            hessian[(j, j)] += l2;
        }
        let step = hessian
            .lu()
            .solve(&grad)
            .ok_or_else(|| Error::Predict("singular IRLS system".into()))?;
        beta += step;
        if beta.amax() > 50.0 {
            separation = true;
            break;
        }
    }

    // back to the original scale
    let mut coefficients = vec![0.0; m + 1];
    let mut intercept = beta[0];
    for j in 0..m {
        coefficients[j + 1] = beta[j + 1] / sds[j];
        intercept -= beta[j + 1] * means[j] / sds[j];
    }
    coefficients[0] = intercept;

    Ok(LogisticModel {
        feature_names: feature_names.to_vec(),
        coefficients,
        means,
        sds,
        iterations,
        gradient_norm,
        separation,
    })
}

/// ROC curve (FPR, TPR) and AUC. Ties follow the Mann-Whitney convention:
/// each tied positive/negative pair contributes 1/2.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<(Vec<(f64, f64)>, f64)> {
    let n_pos = labels.iter().filter(|&&y| y).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Predict("ROC needs both classes".into()));
    }
    let mut pairs = 0.0;
    for (sp, _) in scores.iter().zip(labels).filter(|(_, &y)| y) {
        for (sn, _) in scores.iter().zip(labels).filter(|(_, &y)| !y) {
            if sp > sn {
                pairs += 1.0;
            } else if sp == sn {
                pairs += 0.5;
            }
        }
    }
    let auc = pairs / (n_pos * n_neg) as f64;

    // threshold sweep over unique scores, descending
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let mut points = vec![(0.0, 0.0)];
    for t in thresholds {
        let tp = scores.iter().zip(labels).filter(|(&s, &y)| y && s >= t).count();
        let fp = scores.iter().zip(labels).filter(|(&s, &y)| !y && s >= t).count();
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
    }
    if *points.last().unwrap() != (1.0, 1.0) {
        points.push((1.0, 1.0));
    }
    Ok((points, auc))
}

#[derive(Debug, Clone, Copy)]
pub struct ClassificationMetrics {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub accuracy: f64,
    /// Absent when no positive predictions were made.
    pub precision: Option<f64>,
    pub recall: f64,
    /// Absent when precision is absent or precision + recall = 0.
    pub f1: Option<f64>,
}

pub fn classification_metrics(predictions: &[bool], labels: &[bool]) -> Result<ClassificationMetrics> {
    if predictions.is_empty() || predictions.len() != labels.len() {
        return Err(Error::Predict("empty or mismatched prediction vectors".into()));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0usize, 0, 0, 0);
    for (&pred, &truth) in predictions.iter().zip(labels) {
        match (pred, truth) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let accuracy = (tp + tn) as f64 / predictions.len() as f64;
    let precision = if tp + fp > 0 { Some(tp as f64 / (tp + fp) as f64) } else { None };
    let recall = if tp + fn_ > 0 { tp as f64 / (tp + fn_) as f64 } else { 0.0 };
    let f1 = precision.and_then(|p| {
        if p + recall > 0.0 {
            Some(2.0 * p * recall / (p + recall))
        } else {
            None
        }
    });
    Ok(ClassificationMetrics { tp, fp, fn_, tn, accuracy, precision, recall, f1 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSet {
    Clinical,
    Eigenvariate,
    Combined,
}

impl FeatureSet {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "clinical" => Ok(FeatureSet::Clinical),
            "eigenvariate" | "hippocampal" => Ok(FeatureSet::Eigenvariate),
            "combined" => Ok(FeatureSet::Combined),
            other => Err(Error::InvalidArgument(format!("unknown feature set {other:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FeatureSet::Clinical => "clinical",
            FeatureSet::Eigenvariate => "eigenvariate",
            FeatureSet::Combined => "combined",
        }
    }

    pub fn feature_names(&self) -> Vec<String> {
        let clinical = ["age", "sex", "education_years", "mmse", "apoe4_carrier"];
        match self {
            FeatureSet::Clinical => clinical.iter().map(|s| s.to_string()).collect(),
            FeatureSet::Eigenvariate => vec!["eigenvariate".to_string()],
            FeatureSet::Combined => clinical
                .iter()
                .map(|s| s.to_string())
                .chain(std::iter::once("eigenvariate".to_string()))
                .collect(),
        }
    }
}

/// Feature rows and conversion labels for the MCI subjects of a cohort.
pub fn feature_matrix(
    cohort: &CohortTable,
    set: FeatureSet,
) -> Result<(Vec<String>, Vec<Vec<f64>>, Vec<bool>)> {
    let names = set.feature_names();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for s in cohort.by_diagnosis(Diagnosis::Mci) {
        let converted = s
            .converted_24mo
            .ok_or_else(|| Error::Cohort(format!("{}: MCI subject missing converted_24mo", s.id)))?;
        let mut row = Vec::new();
        if matches!(set, FeatureSet::Clinical | FeatureSet::Combined) {
            row.extend([
                s.age,
                (s.sex == Sex::F) as u8 as f64,
                s.education,
                s.mmse,
                s.apoe4_carrier as u8 as f64,
            ]);
        }
        if matches!(set, FeatureSet::Eigenvariate | FeatureSet::Combined) {
            row.push(
                s.eigenvariate
                    .ok_or_else(|| Error::Cohort(format!("{}: missing eigenvariate", s.id)))?,
            );
        }
        rows.push(row);
        labels.push(converted);
    }
    if rows.is_empty() {
        return Err(Error::Cohort("no MCI subjects".into()));
    }
    Ok((names, rows, labels))
}

#[derive(Debug, Clone)]
pub struct CvReport {
    /// AUC per fold; None when the held-out fold lacked one of the classes.
    pub fold_auc: Vec<Option<f64>>,
    pub mean_auc: f64,
    pub sd_auc: f64,
    /// AUC of the pooled held-out predictions.
    pub pooled_auc: f64,
    pub roc: Vec<(f64, f64)>,
    pub metrics: ClassificationMetrics,
    pub threshold: f64,
    pub warning: Option<String>,
    /// Final model refit on all subjects, for coefficient reporting.
    pub full_model: LogisticModel,
}

/// Stratified k-fold cross-validation: per-class shuffle by seed, then
/// round-robin fold assignment, so each fold preserves the converter
/// proportion to within one subject. Confusion metrics pool the held-out
/// predictions at the probability threshold.
#[allow(clippy::too_many_arguments)]
pub fn cross_validate(
    feature_names: &[String],
    features: &[Vec<f64>],
    labels: &[bool],
    k: usize,
    seed: u64,
    l2: f64,
    threshold: f64,
) -> Result<CvReport> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("need k >= 2 folds, got {k}")));
    }
    let n = labels.len();
    if features.len() != n || n < k {
        return Err(Error::Predict(format!("{n} subjects for {k} folds")));
    }
    let n_pos = labels.iter().filter(|&&y| y).count();
    let warning = if n_pos < k || n - n_pos < k {
        Some(format!(
            "minority class has {} subjects for {k} folds; some folds lack it and are excluded from the AUC mean",
            n_pos.min(n - n_pos)
        ))
    } else {
        None
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pos_idx: Vec<usize> = (0..n).filter(|&i| labels[i]).collect();
    let mut neg_idx: Vec<usize> = (0..n).filter(|&i| !labels[i]).collect();
    pos_idx.shuffle(&mut rng);
    neg_idx.shuffle(&mut rng);
    let mut fold_of = vec![0usize; n];
    for (r, &i) in pos_idx.iter().enumerate() {
        fold_of[i] = r % k;
    }
    for (r, &i) in neg_idx.iter().enumerate() {
        fold_of[i] = r % k;
    }

    let mut fold_auc = Vec::with_capacity(k);
    let mut held_out_scores = vec![f64::NAN; n];
    for fold in 0..k {
        let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != fold).collect();
        let test: Vec<usize> = (0..n).filter(|&i| fold_of[i] == fold).collect();
        let train_rows: Vec<Vec<f64>> = train.iter().map(|&i| features[i].clone()).collect();
        let train_labels: Vec<bool> = train.iter().map(|&i| labels[i]).collect();
        let model = fit_logistic(feature_names, &train_rows, &train_labels, l2)?;
        let scores: Vec<f64> = test.iter().map(|&i| model.predict_proba(&features[i])).collect();
        let test_labels: Vec<bool> = test.iter().map(|&i| labels[i]).collect();
        for (&i, &s) in test.iter().zip(&scores) {
            held_out_scores[i] = s;
        }
        fold_auc.push(roc_auc(&scores, &test_labels).ok().map(|(_, a)| a));
    }

    let defined: Vec<f64> = fold_auc.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(Error::Predict("no fold had both classes held out".into()));
    }
    let mean_auc = defined.iter().sum::<f64>() / defined.len() as f64;
    let sd_auc = if defined.len() > 1 {
        (defined.iter().map(|a| (a - mean_auc).powi(2)).sum::<f64>() / (defined.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    let (roc, pooled_auc) = roc_auc(&held_out_scores, labels)?;
    let predictions: Vec<bool> = held_out_scores.iter().map(|&s| s >= threshold).collect();
    let metrics = classification_metrics(&predictions, labels)?;
    let full_model = fit_logistic(feature_names, features, labels, l2)?;

    Ok(CvReport {
        fold_auc,
        mean_auc,
        sd_auc,
        pooled_auc,
        roc,
        metrics,
        threshold,
        warning,
        full_model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn intercept_only_analytic_mle() {
        let labels = [true, true, true, false, false, false, false, false, false, false];
        let features: Vec<Vec<f64>> = vec![vec![]; 10];
        let model = fit_logistic(&[], &features, &labels, 0.0).unwrap();
        let q: f64 = 0.3;
        assert_abs_diff_eq!(model.coefficients[0], (q / (1.0 - q)).ln(), epsilon = 1e-7);
        assert_abs_diff_eq!(model.predict_proba(&[]), q, epsilon = 1e-7);
        assert!(model.gradient_norm <= 1e-8);
        assert!(!model.separation);
    }

    #[test]
    fn odds_ratio_consistency() {
        assert!((odds_ratio(-0.551) - 0.576).abs() < 1e-3);
    }

    fn log_likelihood(features: &[Vec<f64>], labels: &[bool], b0: f64, b1: f64) -> f64 {
        features
            .iter()
            .zip(labels)
            .map(|(row, &y)| {
                let eta = b0 + b1 * row[0];
                let p = 1.0 / (1.0 + (-eta).exp());
                if y {
                    p.ln()
                } else {
                    (1.0 - p).ln()
                }
            })
            .sum()
    }

    #[test]
    fn matches_grid_search_oracle() {
        let x = [0.2, 1.1, 0.6, 1.9, 2.4, 0.3, 2.8, 1.4, 2.1, 0.9];
        let labels = [false, false, false, true, true, false, true, false, true, true];
        let features: Vec<Vec<f64>> = x.iter().map(|&v| vec![v]).collect();
        let model = fit_logistic(&["x".into()], &features, &labels, 0.0).unwrap();
        // two-stage refining grid search over (b0, b1)
        let (mut c0, mut c1, mut half) = (0.0, 0.0, 10.0);
        let (mut best0, mut best1, mut best_ll) = (0.0, 0.0, f64::NEG_INFINITY);
        for _ in 0..8 {
            for i in 0..=40 {
                for j in 0..=40 {
                    let b0 = c0 - half + i as f64 * half / 20.0;
                    let b1 = c1 - half + j as f64 * half / 20.0;
                    let ll = log_likelihood(&features, &labels, b0, b1);
                    if ll > best_ll {
                        best_ll = ll;
                        best0 = b0;
                        best1 = b1;
                    }
                }
            }
            c0 = best0;
            c1 = best1;
            half /= 10.0;
        }
        assert_abs_diff_eq!(model.coefficients[0], best0, epsilon = 1e-4);
        assert_abs_diff_eq!(model.coefficients[1], best1, epsilon = 1e-4);
    }

    /// The analytic score vector must match finite differences of the
    /// penalized log-likelihood.
    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 30;
        let features: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![rng.gen_range(-2.0..2.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let labels: Vec<bool> = features.iter().map(|r| r[0] + 0.5 * r[1] + rng.gen_range(-1.0..1.0) > 0.0).collect();
        let l2 = 0.3;
        let beta = [0.2, -0.4, 0.7];
        let pll = |b: &[f64; 3]| -> f64 {
            let mut ll = 0.0;
            for (row, &y) in features.iter().zip(&labels) {
                let eta = b[0] + b[1] * row[0] + b[2] * row[1];
                let p = 1.0 / (1.0 + (-eta).exp());
                ll += if y { p.ln() } else { (1.0 - p).ln() };
            }
            ll - 0.5 * l2 * (b[1] * b[1] + b[2] * b[2])
        };
        // analytic score: X'(y - p) - l2 * [0, b1, b2]
        let mut analytic = [0.0f64; 3];
        for (row, &y) in features.iter().zip(&labels) {
            let eta = beta[0] + beta[1] * row[0] + beta[2] * row[1];
            let p = 1.0 / (1.0 + (-eta).exp());
            let r = y as u8 as f64 - p;
            analytic[0] += r;
            analytic[1] += r * row[0];
            analytic[2] += r * row[1];
        }
        analytic[1] -= l2 * beta[1];
        analytic[2] -= l2 * beta[2];
        for j in 0..3 {
            let h = 1e-6;
            let mut up = beta;
            let mut dn = beta;
            up[j] += h;
            dn[j] -= h;
            let numeric = (pll(&up) - pll(&dn)) / (2.0 * h);
            assert!(
                (numeric - analytic[j]).abs() <= 1e-5 * analytic[j].abs().max(1.0),
                "component {j}: numeric {numeric} vs analytic {}",
                analytic[j]
            );
        }
    }

    #[test]
    fn separation_is_flagged() {
        let features: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let labels: Vec<bool> = (0..10).map(|i| i >= 5).collect();
        let model = fit_logistic(&["x".into()], &features, &labels, 0.0).unwrap();
        assert!(model.separation);
        // the default ridge keeps the same data finite and converged
        let ridged = fit_logistic(&["x".into()], &features, &labels, DEFAULT_L2).unwrap();
        assert!(ridged.coefficients[1] > 0.0);
    }

    #[test]
    fn single_class_rejected() {
        let features: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64]).collect();
        assert!(fit_logistic(&["x".into()], &features, &[true; 5], 0.0).is_err());
        assert!(roc_auc(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn auc_examples() {
        let (_, auc) = roc_auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap();
        assert_abs_diff_eq!(auc, 0.75, epsilon = 1e-12);
        let (_, perfect) = roc_auc(&[0.9, 0.8, 0.1, 0.2], &[true, true, false, false]).unwrap();
        assert_abs_diff_eq!(perfect, 1.0, epsilon = 1e-12);
        let (_, ties) = roc_auc(&[0.5; 6], &[true, false, true, false, false, true]).unwrap();
        assert_abs_diff_eq!(ties, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn auc_invariant_under_monotone_transform() {
        let scores = [0.1, -0.4, 0.35, 0.8, 0.35, 2.1, -1.0];
        let labels = [false, false, true, true, false, true, false];
        let (_, a) = roc_auc(&scores, &labels).unwrap();
        let transformed: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
        let (_, b) = roc_auc(&transformed, &labels).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn roc_points_bracket_and_ascend() {
        let scores = [0.1, 0.9, 0.5, 0.5, 0.3, 0.7];
        let labels = [false, true, true, false, false, true];
        let (points, _) = roc_auc(&scores, &labels).unwrap();
        assert_eq!(points[0], (0.0, 0.0));
        assert_eq!(*points.last().unwrap(), (1.0, 1.0));
        for w in points.windows(2) {
            assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
        }
    }

    #[test]
    fn metrics_table_regime() {
        // TP=7, FP=65, FN=3, TN=54
        let mut pred = Vec::new();
        let mut truth = Vec::new();
        for _ in 0..7 {
            pred.push(true);
            truth.push(true);
        }
        for _ in 0..65 {
            pred.push(true);
            truth.push(false);
        }
        for _ in 0..3 {
            pred.push(false);
            truth.push(true);
        }
        for _ in 0..54 {
            pred.push(false);
            truth.push(false);
        }
        let m = classification_metrics(&pred, &truth).unwrap();
        assert_abs_diff_eq!(m.precision.unwrap(), 7.0 / 72.0, epsilon = 1e-12);
        assert!((m.precision.unwrap() - 0.0972).abs() < 1e-4);
        assert_abs_diff_eq!(m.recall, 0.70, epsilon = 1e-12);
        assert!((m.f1.unwrap() - 0.1707).abs() < 1e-4);
    }

    #[test]
    fn metrics_edge_cases() {
        let m = classification_metrics(&[true, false], &[true, false]).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.precision, Some(1.0));
        assert_eq!(m.recall, 1.0);
        assert_eq!(m.f1, Some(1.0));
        let none = classification_metrics(&[false, false], &[true, false]).unwrap();
        assert_eq!(none.precision, None);
        assert_eq!(none.recall, 0.0);
        assert_eq!(none.f1, None);
    }

    fn toy_cv_inputs(n: usize, informative: bool, seed: u64) -> (Vec<Vec<f64>>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            let y = rng.gen_bool(0.4);
            let x = if informative {
                y as u8 as f64 * 4.0 + rng.gen_range(-1.0..1.0)
            } else {
                rng.gen_range(-1.0..1.0)
            };
            features.push(vec![x]);
            labels.push(y);
        }
        (features, labels)
    }

    #[test]
    fn separable_feature_gives_perfect_cv() {
        let (features, labels) = toy_cv_inputs(60, true, 2);
        let names = vec!["x".to_string()];
        let report = cross_validate(&names, &features, &labels, 5, 7, DEFAULT_L2, 0.5).unwrap();
        assert_abs_diff_eq!(report.mean_auc, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(report.metrics.recall, 1.0, epsilon = 1e-9);
        assert!(report.warning.is_none());
    }

    #[test]
    fn cv_deterministic_given_seed() {
        let (features, labels) = toy_cv_inputs(50, false, 9);
        let names = vec!["x".to_string()];
        let a = cross_validate(&names, &features, &labels, 5, 42, DEFAULT_L2, 0.5).unwrap();
        let b = cross_validate(&names, &features, &labels, 5, 42, DEFAULT_L2, 0.5).unwrap();
        assert_eq!(a.fold_auc, b.fold_auc);
        assert_eq!(a.pooled_auc, b.pooled_auc);
        assert_eq!(a.roc, b.roc);
    }

    #[test]
    fn stratification_preserves_proportions() {
        let (features, labels) = toy_cv_inputs(53, false, 3);
        let names = vec!["x".to_string()];
        // re-derive fold assignment exactly as cross_validate does
        let k = 5;
        let n = labels.len();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut pos: Vec<usize> = (0..n).filter(|&i| labels[i]).collect();
        let mut neg: Vec<usize> = (0..n).filter(|&i| !labels[i]).collect();
        pos.shuffle(&mut rng);
        neg.shuffle(&mut rng);
        let mut per_fold_pos = vec![0usize; k];
        for (r, _) in pos.iter().enumerate() {
            per_fold_pos[r % k] += 1;
        }
        let max = *per_fold_pos.iter().max().unwrap();
        let min = *per_fold_pos.iter().min().unwrap();
        assert!(max - min <= 1);
        // and the public call still succeeds on the same inputs
        cross_validate(&names, &features, &labels, k, 11, DEFAULT_L2, 0.5).unwrap();
    }

    #[test]
    fn scarce_positives_warn_and_exclude_folds() {
        let mut features: Vec<Vec<f64>> = (0..40).map(|i| vec![(i % 7) as f64]).collect();
        let mut labels = vec![false; 40];
        labels[3] = true;
        labels[17] = true;
        features[3][0] = 5.0;
        features[17][0] = 6.0;
        let names = vec!["x".to_string()];
        let report = cross_validate(&names, &features, &labels, 5, 1, DEFAULT_L2, 0.5).unwrap();
        assert!(report.warning.is_some());
        assert!(report.fold_auc.iter().any(|a| a.is_none()));
        assert!(report.fold_auc.iter().any(|a| a.is_some()));
    }

    proptest! {
        /// AUC equals the midrank Mann-Whitney statistic on every input.
        #[test]
        fn auc_equals_rank_statistic(
            scores in proptest::collection::vec(-100i32..100, 2..50),
            flips in proptest::collection::vec(any::<bool>(), 2..50)
        ) {
            let n = scores.len().min(flips.len());
            let scores: Vec<f64> = scores[..n].iter().map(|&s| s as f64 / 10.0).collect();
            let mut labels = flips[..n].to_vec();
            // force both classes
            labels[0] = true;
            labels[n - 1] = false;
            let (_, auc) = roc_auc(&scores, &labels).unwrap();
            // midrank oracle
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
            let mut ranks = vec![0.0; n];
            let mut i = 0;
            while i < n {
                let mut j = i;
                while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
                    j += 1;
                }
                let midrank = (i + j) as f64 / 2.0 + 1.0;
                for &idx in &order[i..=j] {
                    ranks[idx] = midrank;
                }
                i = j + 1;
            }
            let n_pos = labels.iter().filter(|&&y| y).count() as f64;
            let n_neg = n as f64 - n_pos;
            let rank_sum: f64 = ranks.iter().zip(&labels).filter(|(_, &y)| y).map(|(&r, _)| r).sum();
            let oracle = (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
            prop_assert!((auc - oracle).abs() < 1e-9);
        }
    }

    use rand_chacha::ChaCha8Rng;
    use rand::SeedableRng;
}
