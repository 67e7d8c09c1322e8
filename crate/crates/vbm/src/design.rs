//! GLM design matrix and contrast vectors.
//!
//! Five columns: intercept, MCI indicator, AD indicator, mean-centered age,
//! mean-centered TIV. CN is the implicit reference group, so group-mean
//! differences are linear in the two indicator coefficients.

use nalgebra::DMatrix;

use crate::cohort::{CohortTable, Diagnosis};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnRole {
    Intercept,
    Indicator,
    Covariate,
}

#[derive(Debug, Clone)]
pub struct ColumnMeta {
    pub name: String,
    pub role: ColumnRole,
}

#[derive(Debug, Clone)]
pub struct DesignMatrix {
    /// n x p, rows in stack order.
    pub x: DMatrix<f64>,
    pub columns: Vec<ColumnMeta>,
    pub subject_ids: Vec<String>,
    /// (age mean, TIV mean) used for centering.
    pub centering: (f64, f64),
    /// Set when the cohort cannot support the full 5-column rank.
    pub rank_deficiency_warning: Option<String>,
}

impl DesignMatrix {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn rank(&self, tol_scale: f64) -> usize {
        let svd = self.x.clone().svd(false, false);
        let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
        let tol = self.n().max(self.p()) as f64 * f64::EPSILON * smax * tol_scale;
        svd.singular_values.iter().filter(|&&s| s > tol).count()
    }
}

/// Build the five-column design in the given subject order, centering age
/// and TIV on the included sample.
pub fn build_design(cohort: &CohortTable, order: &[String]) -> Result<DesignMatrix> {
    let subjects: Vec<_> = order
        .iter()
        .map(|id| {
            cohort
                .get(id)
                .ok_or_else(|| Error::Design(format!("unknown subject id {id:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if subjects.is_empty() {
        return Err(Error::Design("empty subject order".into()));
    }
    let n = subjects.len();
    let mean_age = subjects.iter().map(|s| s.age).sum::<f64>() / n as f64;
    let mean_tiv = subjects.iter().map(|s| s.tiv).sum::<f64>() / n as f64;
    let mut x = DMatrix::zeros(n, 5);
    for (r, s) in subjects.iter().enumerate() {
        x[(r, 0)] = 1.0;
        x[(r, 1)] = (s.diagnosis == Diagnosis::Mci) as u8 as f64;
        x[(r, 2)] = (s.diagnosis == Diagnosis::Ad) as u8 as f64;
        x[(r, 3)] = s.age - mean_age;
        x[(r, 4)] = s.tiv - mean_tiv;
    }
    let groups_present: usize = Diagnosis::ALL
        .iter()
        .map(|&d| subjects.iter().any(|s| s.diagnosis == d) as usize)
        .sum();
    let warning = if groups_present < 2 {
        Some("all subjects share one diagnosis; indicator columns are rank-deficient".to_string())
    } else {
        None
    };
    let columns = vec![
        ColumnMeta { name: "intercept".into(), role: ColumnRole::Intercept },
        ColumnMeta { name: "mci".into(), role: ColumnRole::Indicator },
        ColumnMeta { name: "ad".into(), role: ColumnRole::Indicator },
        ColumnMeta { name: "age_centered".into(), role: ColumnRole::Covariate },
        ColumnMeta { name: "tiv_centered".into(), role: ColumnRole::Covariate },
    ];
    Ok(DesignMatrix {
        x,
        columns,
        subject_ids: order.to_vec(),
        centering: (mean_age, mean_tiv),
        rank_deficiency_warning: warning,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ContrastName {
    CnGtAd,
    MciGtAd,
    CnGtMci,
}

impl ContrastName {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cn-gt-ad" | "cn>ad" => Ok(ContrastName::CnGtAd),
            "mci-gt-ad" | "mci>ad" => Ok(ContrastName::MciGtAd),
            "cn-gt-mci" | "cn>mci" => Ok(ContrastName::CnGtMci),
            other => Err(Error::InvalidArgument(format!("unknown contrast {other:?}"))),
        }
    }

    pub fn flag(&self) -> &'static str {
        match self {
            ContrastName::CnGtAd => "cn-gt-ad",
            ContrastName::MciGtAd => "mci-gt-ad",
            ContrastName::CnGtMci => "cn-gt-mci",
        }
    }
}

impl std::fmt::Display for ContrastName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ContrastName::CnGtAd => "CN>AD",
            ContrastName::MciGtAd => "MCI>AD",
            ContrastName::CnGtMci => "CN>MCI",
        })
    }
}

#[derive(Debug, Clone)]
pub struct Contrast {
    pub name: String,
    pub weights: Vec<f64>,
    pub direction: String,
}

/// Canonical pairwise group contrasts under the reference coding
/// (CN implicit): CN-AD = -b_ad, MCI-AD = b_mci - b_ad, CN-MCI = -b_mci.
pub fn make_contrast(name: ContrastName, p: usize) -> Result<Contrast> {
    if p != 5 {
        return Err(Error::InvalidArgument(format!(
            "pairwise group contrasts require the 5-column design, got p = {p}"
        )));
    }
    let (weights, direction) = match name {
        ContrastName::CnGtAd => (vec![0.0, 0.0, -1.0, 0.0, 0.0], "CN > AD"),
        ContrastName::MciGtAd => (vec![0.0, 1.0, -1.0, 0.0, 0.0], "MCI > AD"),
        ContrastName::CnGtMci => (vec![0.0, -1.0, 0.0, 0.0, 0.0], "CN > MCI"),
    };
    Ok(Contrast {
        name: name.to_string(),
        weights,
        direction: direction.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{Sex, Subject};
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;

    fn subj(id: &str, dx: Diagnosis, age: f64, tiv: f64) -> Subject {
        Subject {
            id: id.into(),
            diagnosis: dx,
            age,
            tiv,
            sex: Sex::M,
            education: 14.0,
            mmse: 27.0,
            apoe4_carrier: false,
            converted_24mo: None,
            eigenvariate: None,
        }
    }

    fn toy_cohort() -> CohortTable {
        CohortTable::new(vec![
            subj("a", Diagnosis::Cn, 70.0, 1500.0),
            subj("b", Diagnosis::Mci, 75.0, 1400.0),
            subj("c", Diagnosis::Ad, 80.0, 1300.0),
        ])
        .unwrap()
    }

    #[test]
    fn centering_arithmetic() {
        let d = build_design(&toy_cohort(), &["a".into(), "b".into(), "c".into()]).unwrap();
        let expected = [
            [1.0, 0.0, 0.0, -5.0, 100.0],
            [1.0, 1.0, 0.0, 0.0, 0.0],
            [1.0, 0.0, 1.0, 5.0, -100.0],
        ];
        for r in 0..3 {
            for c in 0..5 {
                assert_abs_diff_eq!(d.x[(r, c)], expected[r][c], epsilon = 1e-12);
            }
        }
        // centered columns sum to zero
        for c in [3, 4] {
            assert!(d.x.column(c).sum().abs() < 1e-9);
        }
    }

    #[test]
    fn permuting_order_permutes_rows() {
        let cohort = toy_cohort();
        let d1 = build_design(&cohort, &["a".into(), "b".into(), "c".into()]).unwrap();
        let d2 = build_design(&cohort, &["c".into(), "a".into(), "b".into()]).unwrap();
        for c in 0..5 {
            assert_abs_diff_eq!(d2.x[(0, c)], d1.x[(2, c)], epsilon = 1e-12);
            assert_abs_diff_eq!(d2.x[(1, c)], d1.x[(0, c)], epsilon = 1e-12);
        }
    }

    #[test]
    fn unknown_id_errors() {
        assert!(matches!(
            build_design(&toy_cohort(), &["nope".into()]),
            Err(Error::Design(_))
        ));
    }

    #[test]
    fn single_group_warns() {
        let cohort = CohortTable::new(vec![
            subj("a", Diagnosis::Cn, 70.0, 1500.0),
            subj("b", Diagnosis::Cn, 75.0, 1400.0),
        ])
        .unwrap();
        let d = build_design(&cohort, &["a".into(), "b".into()]).unwrap();
        assert!(d.rank_deficiency_warning.is_some());
    }

    #[test]
    fn rank_is_five_with_all_groups() {
        let mut subjects = Vec::new();
        for (i, dx) in [Diagnosis::Cn, Diagnosis::Mci, Diagnosis::Ad, Diagnosis::Cn, Diagnosis::Mci, Diagnosis::Ad]
            .iter()
            .enumerate()
        {
            let tiv = 1300.0 + [17.0, -23.0, 41.0, 5.0, -11.0, 29.0][i];
            subjects.push(subj(&format!("s{i}"), *dx, 60.0 + i as f64 * 3.0, tiv));
        }
        let ids: Vec<String> = subjects.iter().map(|s| s.id.clone()).collect();
        let cohort = CohortTable::new(subjects).unwrap();
        let d = build_design(&cohort, &ids).unwrap();
        assert_eq!(d.rank(1.0), 5);
    }

    /// Closed-form OLS on the toy design recovering adjusted group-mean
    /// differences: c'beta must equal the named difference.
    #[test]
    fn contrast_estimates_group_difference() {
        // 3 groups x 3 subjects, age/TIV orthogonal to group by construction
        let mut subjects = Vec::new();
        let mut y = Vec::new();
        let group_means = [5.0, 3.0, 1.0]; // CN, MCI, AD
        for (g, dx) in Diagnosis::ALL.iter().enumerate() {
            for r in 0..3 {
                let i = g * 3 + r;
                let tiv = 1400.0 + [13.0, -7.0, 21.0][r] + 5.0 * g as f64;
                subjects.push(subj(&format!("s{i}"), *dx, 70.0 + r as f64, tiv));
                y.push(group_means[g]);
            }
        }
        let ids: Vec<String> = subjects.iter().map(|s| s.id.clone()).collect();
        let cohort = CohortTable::new(subjects).unwrap();
        let d = build_design(&cohort, &ids).unwrap();
        let yv = DVector::from_vec(y);
        let beta = (d.x.transpose() * &d.x)
            .try_inverse()
            .unwrap()
            * d.x.transpose()
            * yv;
        for (name, want) in [
            (ContrastName::CnGtAd, group_means[0] - group_means[2]),
            (ContrastName::MciGtAd, group_means[1] - group_means[2]),
            (ContrastName::CnGtMci, group_means[0] - group_means[1]),
        ] {
            let c = make_contrast(name, 5).unwrap();
            let est: f64 = c.weights.iter().zip(beta.iter()).map(|(w, b)| w * b).sum();
            assert_abs_diff_eq!(est, want, epsilon = 1e-9);
        }
    }

    #[test]
    fn contrast_vectors() {
        assert_eq!(make_contrast(ContrastName::CnGtAd, 5).unwrap().weights, vec![0.0, 0.0, -1.0, 0.0, 0.0]);
        assert_eq!(make_contrast(ContrastName::MciGtAd, 5).unwrap().weights, vec![0.0, 1.0, -1.0, 0.0, 0.0]);
        assert_eq!(make_contrast(ContrastName::CnGtMci, 5).unwrap().weights, vec![0.0, -1.0, 0.0, 0.0, 0.0]);
        assert!(make_contrast(ContrastName::CnGtAd, 4).is_err());
    }
}
