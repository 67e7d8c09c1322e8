//! Per-subject cohort records and their CSV serialization.
//!
//! CSV header:
//! `id,diagnosis,age,tiv_cm3,sex,education_years,mmse,apoe4_carrier,converted_24mo,eigenvariate`
//! with diagnosis in {CN, MCI, AD}, sex in {M, F}, booleans as 0/1,
//! `converted_24mo` blank for non-MCI rows and `eigenvariate` blank when not
//! yet extracted.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Diagnosis {
    Cn,
    Mci,
    Ad,
}

impl Diagnosis {
    pub const ALL: [Diagnosis; 3] = [Diagnosis::Cn, Diagnosis::Mci, Diagnosis::Ad];

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "CN" => Ok(Diagnosis::Cn),
            "MCI" => Ok(Diagnosis::Mci),
            "AD" => Ok(Diagnosis::Ad),
            other => Err(Error::Cohort(format!("unknown diagnosis {other:?}"))),
        }
    }
}

impl fmt::Display for Diagnosis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Diagnosis::Cn => "CN",
            Diagnosis::Mci => "MCI",
            Diagnosis::Ad => "AD",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sex {
    M,
    F,
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(if *self == Sex::M { "M" } else { "F" })
    }
}

#[derive(Debug, Clone)]
pub struct Subject {
    pub id: String,
    pub diagnosis: Diagnosis,
    pub age: f64,
    pub tiv: f64,
    pub sex: Sex,
    pub education: f64,
    pub mmse: f64,
    pub apoe4_carrier: bool,
    /// Defined for MCI subjects only.
    pub converted_24mo: Option<bool>,
    pub eigenvariate: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct CohortTable {
    pub subjects: Vec<Subject>,
}

pub const CSV_HEADER: [&str; 10] = [
    "id",
    "diagnosis",
    "age",
    "tiv_cm3",
    "sex",
    "education_years",
    "mmse",
    "apoe4_carrier",
    "converted_24mo",
    "eigenvariate",
];

impl CohortTable {
    pub fn new(subjects: Vec<Subject>) -> Result<Self> {
        let t = CohortTable { subjects };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for s in &self.subjects {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Cohort(format!("duplicate subject id {:?}", s.id)));
            }
            if !(0.0..=30.0).contains(&s.mmse) {
                return Err(Error::Cohort(format!("{}: mmse {} out of [0,30]", s.id, s.mmse)));
            }
            if !(s.age > 0.0 && s.age < 120.0) {
                return Err(Error::Cohort(format!("{}: age {} out of (0,120)", s.id, s.age)));
            }
            if s.tiv <= 0.0 {
                return Err(Error::Cohort(format!("{}: tiv {} not positive", s.id, s.tiv)));
            }
            if s.converted_24mo.is_some() && s.diagnosis != Diagnosis::Mci {
                return Err(Error::Cohort(format!(
                    "{}: converted_24mo set for non-MCI subject",
                    s.id
                )));
            }
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Subject> {
        self.subjects.iter().find(|s| s.id == id)
    }

    pub fn by_diagnosis(&self, dx: Diagnosis) -> Vec<&Subject> {
        self.subjects.iter().filter(|s| s.diagnosis == dx).collect()
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut rdr = csv::ReaderBuilder::new()
            .flexible(false)
            .from_path(path)
            .map_err(|e| Error::Cohort(format!("cannot open {}: {e}", path.display())))?;
        let headers = rdr.headers()?.clone();
        let col = |name: &str| -> Result<usize> {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Cohort(format!("missing column {name:?} in {}", path.display())))
        };
        let idx: Vec<usize> = CSV_HEADER.iter().map(|c| col(c)).collect::<Result<_>>()?;
        let mut subjects = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let field = |i: usize| rec.get(idx[i]).unwrap_or("").trim();
            let parse_f = |i: usize, name: &str| -> Result<f64> {
                field(i)
                    .parse()
                    .map_err(|_| Error::Cohort(format!("bad {name} value {:?}", field(i))))
            };
            let parse_bool = |s: &str| -> Result<bool> {
                match s {
                    "0" | "false" => Ok(false),
                    "1" | "true" => Ok(true),
                    other => Err(Error::Cohort(format!("bad boolean {other:?}"))),
                }
            };
            let diagnosis = Diagnosis::parse(field(1))?;
            let converted = match field(8) {
                "" => None,
                s => Some(parse_bool(s)?),
            };
            subjects.push(Subject {
                id: field(0).to_string(),
                diagnosis,
                age: parse_f(2, "age")?,
                tiv: parse_f(3, "tiv_cm3")?,
                sex: match field(4) {
                    "M" | "m" => Sex::M,
                    "F" | "f" => Sex::F,
                    other => return Err(Error::Cohort(format!("bad sex {other:?}"))),
                },
                education: parse_f(5, "education_years")?,
                mmse: parse_f(6, "mmse")?,
                apoe4_carrier: parse_bool(field(7))?,
                converted_24mo: converted,
                eigenvariate: match field(9) {
                    "" => None,
                    s => Some(
                        s.parse()
                            .map_err(|_| Error::Cohort(format!("bad eigenvariate {s:?}")))?,
                    ),
                },
            });
        }
        CohortTable::new(subjects)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut wtr = csv::Writer::from_path(path.as_ref())
            .map_err(|e| Error::Cohort(format!("cannot write {}: {e}", path.as_ref().display())))?;
        wtr.write_record(CSV_HEADER)?;
        for s in &self.subjects {
            wtr.write_record([
                s.id.clone(),
                s.diagnosis.to_string(),
                format!("{}", s.age),
                format!("{}", s.tiv),
                s.sex.to_string(),
                format!("{}", s.education),
                format!("{}", s.mmse),
                (s.apoe4_carrier as u8).to_string(),
                s.converted_24mo.map(|b| (b as u8).to_string()).unwrap_or_default(),
                s.eigenvariate.map(|e| format!("{e}")).unwrap_or_default(),
            ])?;
        }
        wtr.flush().map_err(|e| Error::io(path.as_ref(), e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    pub(crate) fn subject(id: &str, dx: Diagnosis) -> Subject {
        Subject {
            id: id.to_string(),
            diagnosis: dx,
            age: 72.0,
            tiv: 1450.0,
            sex: Sex::F,
            education: 16.0,
            mmse: 28.0,
            apoe4_carrier: false,
            converted_24mo: if dx == Diagnosis::Mci { Some(false) } else { None },
            eigenvariate: None,
        }
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("cohort.csv");
        let mut s1 = subject("s1", Diagnosis::Cn);
        s1.eigenvariate = Some(0.394);
        let t = CohortTable::new(vec![s1, subject("s2", Diagnosis::Mci), subject("s3", Diagnosis::Ad)]).unwrap();
        t.write_csv(&p).unwrap();
        let back = CohortTable::read_csv(&p).unwrap();
        assert_eq!(back.subjects.len(), 3);
        assert_eq!(back.subjects[0].eigenvariate, Some(0.394));
        assert_eq!(back.subjects[1].converted_24mo, Some(false));
        assert_eq!(back.subjects[2].converted_24mo, None);
    }

    #[test]
    fn duplicate_id_rejected() {
        let r = CohortTable::new(vec![subject("a", Diagnosis::Cn), subject("a", Diagnosis::Ad)]);
        assert!(matches!(r, Err(Error::Cohort(_))));
    }

    #[test]
    fn conversion_only_for_mci() {
        let mut s = subject("x", Diagnosis::Cn);
        s.converted_24mo = Some(true);
        assert!(CohortTable::new(vec![s]).is_err());
    }

    #[test]
    fn range_checks() {
        let mut s = subject("x", Diagnosis::Cn);
        s.mmse = 31.0;
        assert!(CohortTable::new(vec![s]).is_err());
        let mut s = subject("y", Diagnosis::Cn);
        s.age = 0.0;
        assert!(CohortTable::new(vec![s]).is_err());
    }
}
