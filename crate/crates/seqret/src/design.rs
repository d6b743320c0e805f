//! Design-matrix construction: named numeric blocks plus indicator-coded
//! fixed-effect blocks with one reference level dropped per factor.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::records::IndividualRecord;

/// Declarative column layout: an optional intercept, numeric fields in order,
/// then factor blocks in order.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Layout {
    pub intercept: bool,
    pub numeric: Vec<String>,
    pub factors: Vec<FactorSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FactorSpec {
    pub field: String,
    /// Reference level to drop. `None` picks the smallest level for integer
    /// factors and the first level in file order otherwise.
    pub reference: Option<String>,
}

impl Layout {
    pub fn empty() -> Self {
        Layout {
            intercept: false,
            numeric: Vec::new(),
            factors: Vec::new(),
        }
    }

    /// Fix factor levels against a dataset so the same columns can be rebuilt
    /// on other data (bootstrap replicates, holdout cohorts).
    pub fn resolve(&self, records: &[IndividualRecord]) -> Result<ResolvedLayout> {
        let mut factors = Vec::new();
        for spec in &self.factors {
            let mut levels: Vec<String> = Vec::new();
            for r in records {
                let v = factor_value(r, &spec.field)?;
                if !levels.contains(&v) {
                    levels.push(v);
                }
            }
            let integer_levels = levels.iter().all(|l| l.parse::<i64>().is_ok());
            if integer_levels {
                levels.sort_by_key(|l| l.parse::<i64>().unwrap());
            }
            let reference = match &spec.reference {
                Some(r) => {
                    if !levels.contains(r) {
                        return Err(Error::UnseenFactorLevel {
                            factor: spec.field.clone(),
                            level: r.clone(),
                        });
                    }
                    r.clone()
                }
                None => levels
                    .first()
                    .ok_or_else(|| Error::UnseenFactorLevel {
                        factor: spec.field.clone(),
                        level: "<empty>".into(),
                    })?
                    .clone(),
            };
            factors.push(ResolvedFactor {
                field: spec.field.clone(),
                levels,
                reference,
            });
        }
        // validate numeric names eagerly
        if let Some(r) = records.first() {
            for name in &self.numeric {
                numeric_value(r, name)?;
            }
        }
        Ok(ResolvedLayout {
            intercept: self.intercept,
            numeric: self.numeric.clone(),
            factors,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ResolvedFactor {
    pub field: String,
    pub levels: Vec<String>,
    pub reference: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ResolvedLayout {
    pub intercept: bool,
    pub numeric: Vec<String>,
    pub factors: Vec<ResolvedFactor>,
}

impl ResolvedLayout {
    pub fn column_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        if self.intercept {
            names.push("const".to_string());
        }
        names.extend(self.numeric.iter().cloned());
        for f in &self.factors {
            for l in &f.levels {
                if *l != f.reference {
                    names.push(format!("{}={}", f.field, l));
                }
            }
        }
        names
    }

    pub fn build(&self, records: &[IndividualRecord]) -> Result<DesignMatrix> {
        let names = self.column_names();
        let p = names.len();
        let n = records.len();
        let mut m = DMatrix::zeros(n, p);
        for (i, r) in records.iter().enumerate() {
            let mut c = 0;
            if self.intercept {
                m[(i, c)] = 1.0;
                c += 1;
            }
            for name in &self.numeric {
                let v = numeric_value(r, name)?;
                if !v.is_finite() {
                    return Err(Error::NonFiniteDesign {
                        row: i,
                        column: name.clone(),
                    });
                }
                m[(i, c)] = v;
                c += 1;
            }
            for f in &self.factors {
                let v = factor_value(r, &f.field)?;
                if !f.levels.contains(&v) {
                    return Err(Error::UnseenFactorLevel {
                        factor: f.field.clone(),
                        level: v,
                    });
                }
                for l in &f.levels {
                    if *l != f.reference {
                        m[(i, c)] = if v == *l { 1.0 } else { 0.0 };
                        c += 1;
                    }
                }
            }
            debug_assert_eq!(c, p);
        }
        let index = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        Ok(DesignMatrix {
            matrix: m,
            names,
            index,
        })
    }
}

#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub matrix: DMatrix<f64>,
    pub names: Vec<String>,
    pub index: BTreeMap<String, usize>,
}

impl DesignMatrix {
    pub fn n_rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn column_position(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownField(name.to_string()))
    }

    /// Append extra named columns (e.g. career-probability instruments).
    pub fn with_columns(&self, names: &[String], values: &DMatrix<f64>) -> DesignMatrix {
        assert_eq!(values.nrows(), self.n_rows());
        assert_eq!(values.ncols(), names.len());
        let mut m = DMatrix::zeros(self.n_rows(), self.n_cols() + names.len());
        m.view_mut((0, 0), (self.n_rows(), self.n_cols()))
            .copy_from(&self.matrix);
        m.view_mut((0, self.n_cols()), (self.n_rows(), names.len()))
            .copy_from(values);
        let mut all_names = self.names.clone();
        all_names.extend(names.iter().cloned());
        let index = all_names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        DesignMatrix {
            matrix: m,
            names: all_names,
            index,
        }
    }

    pub fn select_rows(&self, rows: &[usize]) -> DesignMatrix {
        let mut m = DMatrix::zeros(rows.len(), self.n_cols());
        for (i, &r) in rows.iter().enumerate() {
            m.row_mut(i).copy_from(&self.matrix.row(r));
        }
        DesignMatrix {
            matrix: m,
            names: self.names.clone(),
            index: self.index.clone(),
        }
    }

    /// Column means as a single-row design (for marginal effects at means).
    pub fn mean_row(&self) -> DMatrix<f64> {
        let n = self.n_rows() as f64;
        let mut row = DMatrix::zeros(1, self.n_cols());
        for c in 0..self.n_cols() {
            row[(0, c)] = self.matrix.column(c).sum() / n;
        }
        row
    }
}

pub fn numeric_value(r: &IndividualRecord, name: &str) -> Result<f64> {
    // product interaction, e.g. "ee_1_x_gender"
    if let Some((a, b)) = name.split_once("_x_") {
        return Ok(numeric_value(r, a)? * numeric_value(r, b)?);
    }
    if let Some(stripped) = name.strip_prefix("ee_") {
        let i: usize = stripped
            .parse()
            .map_err(|_| Error::UnknownField(name.to_string()))?;
        if (1..=10).contains(&i) {
            return Ok(r.z_bachelor[i - 1]);
        }
        return Err(Error::UnknownField(name.to_string()));
    }
    if let Some(stripped) = name.strip_prefix("cred_std_") {
        let i: usize = stripped
            .parse()
            .map_err(|_| Error::UnknownField(name.to_string()))?;
        if (1..=10).contains(&i) {
            return Ok(r.z_master_credits_std[i - 1]);
        }
        return Err(Error::UnknownField(name.to_string()));
    }
    match name {
        "gender" => Ok(r.gender as f64),
        "parent_graduate" => Ok(r.parent_graduate as f64),
        "parent_highrank" => Ok(r.parent_highrank as f64),
        "hs_grade_std" => Ok(r.hs_grade_std),
        "hs_grade_raw" => Ok(r.hs_grade_raw),
        "local_employment_rate" => Ok(r.local_employment_rate),
        "university_quality_std" => Ok(r.university_quality_std),
        "log_distance" => Ok(r.log_distance),
        _ => Err(Error::UnknownField(name.to_string())),
    }
}

pub fn factor_value(r: &IndividualRecord, name: &str) -> Result<String> {
    match name {
        "hs_type" => Ok(r.hs_type.as_str().to_string()),
        "macro_region" => Ok(r.macro_region.clone()),
        "cohort_year" => Ok(r.cohort_year.to_string()),
        "years_since_graduation" => Ok(r.years_since_graduation.to_string()),
        "province" => Ok(r.province.clone()),
        _ => Err(Error::UnknownField(name.to_string())),
    }
}
