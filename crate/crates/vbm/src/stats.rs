//! Group statistics: two-sample t-tests (raw or summary-statistic form),
//! Cohen's d with the unweighted-average-variance denominator, two-way
//! ANOVA for the diagnosis x APOE4 layout, and per-diagnosis carrier
//! stratification.

use nalgebra::DMatrix;
use statrs::distribution::{ContinuousCDF, FisherSnedecor, StudentsT};

use crate::cohort::{CohortTable, Diagnosis};
use crate::error::{Error, Result};
use crate::glm::design_pinv;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarianceRule {
    Pooled,
    Welch,
}

#[derive(Debug, Clone, Copy)]
pub struct SampleStats {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
}

impl SampleStats {
    pub fn from_sample(x: &[f64]) -> Result<Self> {
        if x.len() < 2 {
            return Err(Error::Stats(format!("need n >= 2, got {}", x.len())));
        }
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|&v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Ok(SampleStats {
            n: x.len(),
            mean,
            sd: var.sqrt(),
        })
    }

    pub fn se(&self) -> f64 {
        self.sd / (self.n as f64).sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct GroupComparison {
    pub label1: String,
    pub label2: String,
    pub g1: SampleStats,
    pub g2: SampleStats,
    pub t: f64,
    pub df: f64,
    /// Two-sided p.
    pub p: f64,
    pub cohen_d: f64,
}

/// Cohen's d with the unweighted-average-variance denominator
/// sqrt((s1^2 + s2^2)/2).
pub fn cohen_d(mean1: f64, sd1: f64, mean2: f64, sd2: f64) -> Result<f64> {
    if sd1 < 0.0 || sd2 < 0.0 {
        return Err(Error::Stats("negative standard deviation".into()));
    }
    if sd1 == 0.0 && sd2 == 0.0 {
        if mean1 == mean2 {
            return Ok(0.0);
        }
        return Err(Error::Stats("effect size undefined: both groups have zero variance".into()));
    }
    Ok((mean1 - mean2) / ((sd1 * sd1 + sd2 * sd2) / 2.0).sqrt())
}

pub fn cohen_d_from_samples(x1: &[f64], x2: &[f64]) -> Result<f64> {
    let s1 = SampleStats::from_sample(x1)?;
    let s2 = SampleStats::from_sample(x2)?;
    cohen_d(s1.mean, s1.sd, s2.mean, s2.sd)
}

/// Two-sample t-test from summary statistics.
pub fn two_sample_t_summary(
    label1: &str,
    g1: SampleStats,
    label2: &str,
    g2: SampleStats,
    rule: VarianceRule,
) -> Result<GroupComparison> {
    if g1.n < 2 || g2.n < 2 {
        return Err(Error::Stats("both groups need n >= 2".into()));
    }
    let (n1, n2) = (g1.n as f64, g2.n as f64);
    let (v1, v2) = (g1.sd * g1.sd, g2.sd * g2.sd);
    let diff = g1.mean - g2.mean;
    let (t, df) = match rule {
        VarianceRule::Pooled => {
            let df = n1 + n2 - 2.0;
            let sp2 = ((n1 - 1.0) * v1 + (n2 - 1.0) * v2) / df;
            let denom = (sp2 * (1.0 / n1 + 1.0 / n2)).sqrt();
            let t = if denom == 0.0 {
                if diff == 0.0 {
                    0.0
                } else {
                    return Err(Error::Stats("zero pooled variance with unequal means".into()));
                }
            } else {
                diff / denom
            };
            (t, df)
        }
        VarianceRule::Welch => {
            let a = v1 / n1;
            let b = v2 / n2;
            let denom = (a + b).sqrt();
            if denom == 0.0 {
                (0.0, n1 + n2 - 2.0)
            } else {
                let df = (a + b).powi(2) / (a * a / (n1 - 1.0) + b * b / (n2 - 1.0));
                (diff / denom, df)
            }
        }
    };
    let p = if t == 0.0 {
        1.0
    } else {
        let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Stats(e.to_string()))?;
        2.0 * dist.sf(t.abs())
    };
    Ok(GroupComparison {
        label1: label1.to_string(),
        label2: label2.to_string(),
        g1,
        g2,
        t,
        df,
        p,
        cohen_d: cohen_d(g1.mean, g1.sd, g2.mean, g2.sd)?,
    })
}

pub fn two_sample_t(
    label1: &str,
    x1: &[f64],
    label2: &str,
    x2: &[f64],
    rule: VarianceRule,
) -> Result<GroupComparison> {
    two_sample_t_summary(
        label1,
        SampleStats::from_sample(x1)?,
        label2,
        SampleStats::from_sample(x2)?,
        rule,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SsType {
    I,
    II,
    III,
}

#[derive(Debug, Clone)]
pub struct AnovaRow {
    pub name: String,
    pub ss: f64,
    pub df: usize,
    pub ms: f64,
    pub f: f64,
    pub p: f64,
}

#[derive(Debug, Clone)]
pub struct AnovaResult {
    pub factor_a: AnovaRow,
    pub factor_b: AnovaRow,
    pub interaction: AnovaRow,
    pub residual_ss: f64,
    pub residual_df: usize,
}

/// One cell of a two-factor summary table.
#[derive(Debug, Clone, Copy)]
pub struct CellStats {
    pub a_level: usize,
    pub b_level: usize,
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
}

fn rss(x: &DMatrix<f64>, y: &[f64]) -> f64 {
    let (pinv, _, _) = design_pinv(x);
    let n = x.nrows();
    let p = x.ncols();
    let mut beta = vec![0.0; p];
    for (j, b) in beta.iter_mut().enumerate() {
        *b = (0..n).map(|s| pinv[(j, s)] * y[s]).sum();
    }
    (0..n)
        .map(|s| {
            let fitted: f64 = (0..p).map(|j| x[(s, j)] * beta[j]).sum();
            (y[s] - fitted).powi(2)
        })
        .sum()
}

/// Effect-coded design columns for the requested terms.
/// Terms: bit 1 = A main, bit 2 = B main, bit 4 = interaction.
fn anova_design(a: &[usize], b: &[usize], na: usize, nb: usize, terms: u8) -> DMatrix<f64> {
    let n = a.len();
    let mut cols: Vec<Vec<f64>> = vec![vec![1.0; n]];
    // sum-to-zero effect coding
    let code = |level: usize, nlev: usize, dim: usize| -> f64 {
        if level == dim {
            1.0
        } else if level == nlev - 1 {
            -1.0
        } else {
            0.0
        }
    };
    let mut a_cols: Vec<Vec<f64>> = Vec::new();
    for d in 0..na - 1 {
        a_cols.push((0..n).map(|i| code(a[i], na, d)).collect());
    }
    let mut b_cols: Vec<Vec<f64>> = Vec::new();
    for d in 0..nb - 1 {
        b_cols.push((0..n).map(|i| code(b[i], nb, d)).collect());
    }
    if terms & 1 != 0 {
        cols.extend(a_cols.iter().cloned());
    }
    if terms & 2 != 0 {
        cols.extend(b_cols.iter().cloned());
    }
    if terms & 4 != 0 {
        for ac in &a_cols {
            for bc in &b_cols {
                cols.push(ac.iter().zip(bc).map(|(x, y)| x * y).collect());
            }
        }
    }
    DMatrix::from_fn(n, cols.len(), |r, c| cols[c][r])
}

/// Two-way fixed-effects ANOVA on raw values. `factor_a` levels in
/// 0..na, `factor_b` levels in 0..nb; every cell must be nonempty.
pub fn two_way_anova(
    values: &[f64],
    factor_a: &[usize],
    na: usize,
    factor_b: &[usize],
    nb: usize,
    ss_type: SsType,
) -> Result<AnovaResult> {
    let n = values.len();
    if factor_a.len() != n || factor_b.len() != n {
        return Err(Error::Stats("factor length mismatch".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Stats("non-finite values".into()));
    }
    for ai in 0..na {
        for bi in 0..nb {
            if !factor_a.iter().zip(factor_b).any(|(&a, &b)| a == ai && b == bi) {
                return Err(Error::Stats(format!("empty cell (a = {ai}, b = {bi})")));
            }
        }
    }
    let cells = na * nb;
    if n <= cells {
        return Err(Error::Stats(format!("need n > {cells} cells, got {n}")));
    }
    let x_full = anova_design(factor_a, factor_b, na, nb, 7);
    let rss_full = rss(&x_full, values);
    let df_res = n - cells;
    let ms_res = rss_full / df_res as f64;

    let rss_for = |terms: u8| rss(&anova_design(factor_a, factor_b, na, nb, terms), values);

    let (ss_a, ss_b, ss_ab) = match ss_type {
        SsType::I => {
            let r0 = rss_for(0);
            let ra = rss_for(1);
            let rab = rss_for(3);
            (r0 - ra, ra - rab, rab - rss_full)
        }
        SsType::II => {
            let ra = rss_for(1);
            let rb = rss_for(2);
            let rab = rss_for(3);
            (rb - rab, ra - rab, rab - rss_full)
        }
        SsType::III => {
            // drop each effect from the full effect-coded model
            let r_no_a = rss_for(6);
            let r_no_b = rss_for(5);
            let r_no_ab = rss_for(3);
            (r_no_a - rss_full, r_no_b - rss_full, r_no_ab - rss_full)
        }
    };

    let row = |name: &str, ss: f64, df: usize| -> Result<AnovaRow> {
        let ss = ss.max(0.0);
        let ms = ss / df as f64;
        let f = if ms_res > 0.0 { ms / ms_res } else { 0.0 };
        let p = if f <= 0.0 {
            1.0
        } else {
            let dist = FisherSnedecor::new(df as f64, df_res as f64)
                .map_err(|e| Error::Stats(e.to_string()))?;
            dist.sf(f)
        };
        Ok(AnovaRow {
            name: name.to_string(),
            ss,
            df,
            ms,
            f,
            p,
        })
    };

    Ok(AnovaResult {
        factor_a: row("factor_a", ss_a, na - 1)?,
        factor_b: row("factor_b", ss_b, nb - 1)?,
        interaction: row("interaction", ss_ab, (na - 1) * (nb - 1))?,
        residual_ss: rss_full,
        residual_df: df_res,
    })
}

/// A sample of length n with exactly the given mean and (n-1)-denominator
/// standard deviation.
pub fn exact_moment_sample(n: usize, mean: f64, sd: f64) -> Vec<f64> {
    if n == 1 {
        return vec![mean];
    }
    let raw: Vec<f64> = (0..n).map(|i| i as f64 - (n as f64 - 1.0) / 2.0).collect();
    let var = raw.iter().map(|&z| z * z).sum::<f64>() / (n as f64 - 1.0);
    let scale = if var > 0.0 { sd / var.sqrt() } else { 0.0 };
    raw.into_iter().map(|z| mean + scale * z).collect()
}

/// Two-way ANOVA reconstructed from per-cell summary statistics. The SS
/// depend only on cell counts, means, and within-cell variance, so samples
/// with exactly those moments reproduce the raw-data answer.
pub fn two_way_anova_from_cells(cells: &[CellStats], na: usize, nb: usize, ss_type: SsType) -> Result<AnovaResult> {
    let mut values = Vec::new();
    let mut fa = Vec::new();
    let mut fb = Vec::new();
    for c in cells {
        if c.a_level >= na || c.b_level >= nb {
            return Err(Error::Stats(format!("cell ({}, {}) out of range", c.a_level, c.b_level)));
        }
        for v in exact_moment_sample(c.n, c.mean, c.sd) {
            values.push(v);
            fa.push(c.a_level);
            fb.push(c.b_level);
        }
    }
    two_way_anova(&values, &fa, na, &fb, nb, ss_type)
}

#[derive(Debug, Clone)]
pub struct StratumComparison {
    pub diagnosis: Diagnosis,
    pub comparison: GroupComparison,
    pub carrier_frequency: f64,
}

/// Per-diagnosis APOE4 carrier vs non-carrier comparison of the
/// eigenvariate column (non-carrier listed first, matching a positive
/// difference when non-carriers have higher values).
pub fn stratified_comparison(cohort: &CohortTable, rule: VarianceRule) -> Result<Vec<StratumComparison>> {
    let mut out = Vec::new();
    for dx in Diagnosis::ALL {
        let members = cohort.by_diagnosis(dx);
        if members.is_empty() {
            continue;
        }
        let value = |s: &&crate::cohort::Subject| -> Result<f64> {
            s.eigenvariate
                .ok_or_else(|| Error::Cohort(format!("{}: missing eigenvariate", s.id)))
        };
        let carriers: Vec<f64> = members
            .iter()
            .filter(|s| s.apoe4_carrier)
            .map(value)
            .collect::<Result<_>>()?;
        let noncarriers: Vec<f64> = members
            .iter()
            .filter(|s| !s.apoe4_carrier)
            .map(value)
            .collect::<Result<_>>()?;
        if carriers.len() < 2 || noncarriers.len() < 2 {
            return Err(Error::Stats(format!(
                "stratum {dx}: carriers n = {}, non-carriers n = {} (need >= 2 each)",
                carriers.len(),
                noncarriers.len()
            )));
        }
        let comparison = two_sample_t(
            &format!("{dx} APOE4-"),
            &noncarriers,
            &format!("{dx} APOE4+"),
            &carriers,
            rule,
        )?;
        out.push(StratumComparison {
            diagnosis: dx,
            comparison,
            carrier_frequency: carriers.len() as f64 / members.len() as f64,
        });
    }
    if out.is_empty() {
        return Err(Error::Stats("no diagnostic strata present".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn identical_samples_t_zero() {
        let x = [1.0, 2.0, 3.0];
        let c = two_sample_t("a", &x, "b", &x, VarianceRule::Pooled).unwrap();
        assert_eq!(c.t, 0.0);
        assert_eq!(c.p, 1.0);
        assert_eq!(c.cohen_d, 0.0);
    }

    #[test]
    fn pooled_t_hand_example() {
        let c = two_sample_t("a", &[1.0, 2.0, 3.0], "b", &[4.0, 5.0, 6.0], VarianceRule::Pooled).unwrap();
        assert_abs_diff_eq!(c.t, -3.674234614174767, epsilon = 1e-9);
        assert_abs_diff_eq!(c.df, 4.0, epsilon = 1e-12);
        // se = sd / sqrt(n)
        assert_abs_diff_eq!(c.g1.se(), c.g1.sd / 3f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn table_summary_mode_pooled() {
        // group summaries printed with SE; sd = se * sqrt(n)
        let g1 = SampleStats { n: 90, mean: 0.3947, sd: 0.0044 * (90f64).sqrt() };
        let g2 = SampleStats { n: 30, mean: 0.3106, sd: 0.0075 * (30f64).sqrt() };
        let c = two_sample_t_summary("CN", g1, "AD", g2, VarianceRule::Pooled).unwrap();
        assert!((c.t - 9.575).abs() < 0.15, "t = {}", c.t);
        assert!((c.cohen_d - 2.03).abs() < 0.01, "d = {}", c.cohen_d);
    }

    #[test]
    fn sign_antisymmetry() {
        let x1 = [1.0, 2.0, 4.0, 3.0];
        let x2 = [2.0, 5.0, 4.0, 6.0];
        for rule in [VarianceRule::Pooled, VarianceRule::Welch] {
            let a = two_sample_t("a", &x1, "b", &x2, rule).unwrap();
            let b = two_sample_t("b", &x2, "a", &x1, rule).unwrap();
            assert_abs_diff_eq!(a.t, -b.t, epsilon = 1e-12);
            assert_abs_diff_eq!(a.cohen_d, -b.cohen_d, epsilon = 1e-12);
            assert_abs_diff_eq!(a.p, b.p, epsilon = 1e-12);
        }
    }

    #[test]
    fn cohen_d_location_scale_invariance() {
        let x1: Vec<f64> = vec![1.0, 2.0, 3.0, 5.0];
        let x2: Vec<f64> = vec![4.0, 4.5, 6.0, 7.0];
        let d0 = cohen_d_from_samples(&x1, &x2).unwrap();
        let shift: Vec<f64> = x1.iter().map(|v| v + 10.0).collect();
        let shift2: Vec<f64> = x2.iter().map(|v| v + 10.0).collect();
        assert_abs_diff_eq!(cohen_d_from_samples(&shift, &shift2).unwrap(), d0, epsilon = 1e-12);
        let scale: Vec<f64> = x1.iter().map(|v| v * 3.0).collect();
        let scale2: Vec<f64> = x2.iter().map(|v| v * 3.0).collect();
        assert_abs_diff_eq!(cohen_d_from_samples(&scale, &scale2).unwrap(), d0, epsilon = 1e-12);
    }

    #[test]
    fn cohen_d_degenerate() {
        assert_eq!(cohen_d(1.0, 0.0, 1.0, 0.0).unwrap(), 0.0);
        assert!(cohen_d(1.0, 0.0, 2.0, 0.0).is_err());
    }

    /// Balanced 2x2, hand-computable sums of squares.
    #[test]
    fn balanced_two_by_two_hand_check() {
        // cells (a,b): (0,0) -> 1,2; (0,1) -> 3,4; (1,0) -> 5,6; (1,1) -> 7,8
        let values = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
        let fa = [0, 0, 0, 0, 1, 1, 1, 1];
        let fb = [0, 0, 1, 1, 0, 0, 1, 1];
        let r = two_way_anova(&values, &fa, 2, &fb, 2, SsType::II).unwrap();
        // grand mean 4.5; A means 2.5/6.5 -> SS_A = 8*(2^2)/2 = 32
        assert_abs_diff_eq!(r.factor_a.ss, 32.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.factor_b.ss, 8.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.interaction.ss, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.residual_ss, 2.0, epsilon = 1e-9);
        assert_eq!(r.residual_df, 4);
    }

    #[test]
    fn balanced_types_agree() {
        let values = [1.0, 2.0, 3.0, 4.0, 5.0, 6.5, 7.0, 8.5];
        let fa = [0, 0, 0, 0, 1, 1, 1, 1];
        let fb = [0, 0, 1, 1, 0, 0, 1, 1];
        let r1 = two_way_anova(&values, &fa, 2, &fb, 2, SsType::I).unwrap();
        let r2 = two_way_anova(&values, &fa, 2, &fb, 2, SsType::II).unwrap();
        let r3 = two_way_anova(&values, &fa, 2, &fb, 2, SsType::III).unwrap();
        for (a, b) in [(&r1, &r2), (&r2, &r3)] {
            assert_abs_diff_eq!(a.factor_a.ss, b.factor_a.ss, epsilon = 1e-9);
            assert_abs_diff_eq!(a.factor_b.ss, b.factor_b.ss, epsilon = 1e-9);
            assert_abs_diff_eq!(a.interaction.ss, b.interaction.ss, epsilon = 1e-9);
        }
    }

    #[test]
    fn all_equal_values() {
        let values = [2.0; 12];
        let fa = [0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2];
        let fb = [0, 0, 1, 1, 0, 0, 1, 1, 0, 0, 1, 1];
        let r = two_way_anova(&values, &fa, 3, &fb, 2, SsType::II).unwrap();
        assert_eq!(r.factor_a.f, 0.0);
        assert_eq!(r.factor_a.p, 1.0);
        assert_eq!(r.interaction.f, 0.0);
    }

    #[test]
    fn empty_cell_named() {
        let values = [1.0, 2.0, 3.0, 4.0];
        let fa = [0, 0, 1, 1];
        let fb = [0, 0, 0, 0]; // no observations with b = 1
        match two_way_anova(&values, &fa, 2, &fb, 2, SsType::II) {
            Err(Error::Stats(msg)) => assert!(msg.contains("b = 1"), "{msg}"),
            other => panic!("expected empty-cell error, got {other:?}"),
        }
    }

    #[test]
    fn exact_moment_sample_moments() {
        let s = exact_moment_sample(17, 0.42, 0.073);
        let st = SampleStats::from_sample(&s).unwrap();
        assert_abs_diff_eq!(st.mean, 0.42, epsilon = 1e-12);
        assert_abs_diff_eq!(st.sd, 0.073, epsilon = 1e-12);
    }

    #[test]
    fn summary_and_raw_paths_agree() {
        let values = [1.0, 2.0, 4.0, 3.5, 5.0, 6.5, 7.0, 8.5, 2.2, 3.3, 4.4, 5.5];
        let fa = [0, 0, 0, 0, 1, 1, 1, 1, 1, 0, 0, 1];
        let fb = [0, 0, 1, 1, 0, 0, 1, 1, 0, 0, 1, 1];
        let raw = two_way_anova(&values, &fa, 2, &fb, 2, SsType::II).unwrap();
        // build cell stats from the raw data
        let mut cells = Vec::new();
        for a in 0..2 {
            for b in 0..2 {
                let vals: Vec<f64> = values
                    .iter()
                    .zip(fa.iter().zip(fb.iter()))
                    .filter(|(_, (&x, &y))| x == a && y == b)
                    .map(|(&v, _)| v)
                    .collect();
                let st = SampleStats::from_sample(&vals).unwrap();
                cells.push(CellStats { a_level: a, b_level: b, n: st.n, mean: st.mean, sd: st.sd });
            }
        }
        let summary = two_way_anova_from_cells(&cells, 2, 2, SsType::II).unwrap();
        assert_abs_diff_eq!(raw.factor_a.f, summary.factor_a.f, epsilon = 1e-9);
        assert_abs_diff_eq!(raw.factor_b.f, summary.factor_b.f, epsilon = 1e-9);
        assert_abs_diff_eq!(raw.interaction.f, summary.interaction.f, epsilon = 1e-9);
        assert_abs_diff_eq!(raw.residual_ss, summary.residual_ss, epsilon = 1e-9);
    }

    /// Brute-force regression oracle for unbalanced Type II: compare model
    /// RSS differences computed with an independent normal-equations solve.
    #[test]
    fn unbalanced_matches_regression_oracle() {
        let values = [3.1, 2.9, 4.2, 5.0, 5.5, 6.1, 2.0, 2.5, 3.3, 7.0, 6.6, 5.9, 4.4];
        let fa = [0, 0, 0, 1, 1, 1, 2, 2, 2, 1, 1, 0, 2];
        let fb = [0, 1, 0, 0, 1, 1, 0, 1, 0, 0, 1, 1, 1];
        let r = two_way_anova(&values, &fa, 3, &fb, 2, SsType::II).unwrap();
        // oracle: cell-means model RSS and additive model RSS
        let cell_rss = {
            let mut total = 0.0;
            for a in 0..3 {
                for b in 0..2 {
                    let vals: Vec<f64> = values
                        .iter()
                        .zip(fa.iter().zip(fb.iter()))
                        .filter(|(_, (&x, &y))| x == a && y == b)
                        .map(|(&v, _)| v)
                        .collect();
                    let m = vals.iter().sum::<f64>() / vals.len() as f64;
                    total += vals.iter().map(|v| (v - m).powi(2)).sum::<f64>();
                }
            }
            total
        };
        assert_abs_diff_eq!(r.residual_ss, cell_rss, epsilon = 1e-9);
        assert_eq!(r.residual_df, 13 - 6);
        assert!(r.factor_a.f > 0.0);
    }
}
