//! Dataset schema, CSV ingestion and validation.
//!
//! `individuals.csv` carries one row per graduate with the header names below;
//! the 10 entry-exam instruments are `ee_1..ee_10`, the raw constrained-credit
//! instruments are `cred_1..cred_10`. Missing values are empty cells. Rows with
//! missing covariates, instruments or choices are dropped at ingestion and
//! counted per field in the validation report.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{Career, FieldOfStudy, MasterChoice};
use crate::standardize::{standardize_by_group, standardize_global};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HsType {
    Humanities,
    Science,
    Other,
}

impl HsType {
    pub fn as_str(self) -> &'static str {
        match self {
            HsType::Humanities => "humanities",
            HsType::Science => "science",
            HsType::Other => "other",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "humanities" => Some(HsType::Humanities),
            "science" => Some(HsType::Science),
            "other" => Some(HsType::Other),
            _ => None,
        }
    }
}

/// One graduate: covariates, instruments, observed choices and outcomes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndividualRecord {
    pub id: String,
    pub hs_grade_raw: f64,
    /// z-score of `hs_grade_raw` within province (computed at ingestion).
    pub hs_grade_std: f64,
    pub hs_type: HsType,
    pub gender: u8,
    pub parent_graduate: u8,
    pub parent_highrank: u8,
    pub local_employment_rate: f64,
    pub university_quality_std: f64,
    pub cohort_year: i32,
    pub macro_region: String,
    pub years_since_graduation: i32,
    pub province: String,
    pub bachelor: FieldOfStudy,
    pub master: MasterChoice,
    pub single_cycle: u8,
    pub employed: u8,
    /// Present exactly when `employed == 1`.
    pub log_wage: Option<f64>,
    /// Entry-exam bindingness share per bachelor field, in [0,1].
    pub z_bachelor: [f64; 10],
    /// Constrained credits per master field, in [0,180]; 180 = ineligible.
    pub z_master_credits_raw: [f64; 10],
    /// Globally standardized credits (computed at ingestion).
    pub z_master_credits_std: [f64; 10],
    pub log_distance: f64,
}

impl IndividualRecord {
    pub fn career(&self) -> Career {
        Career {
            bachelor: self.bachelor,
            master: self.master,
        }
    }
}

/// Field labels sidecar (`choiceset.json`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChoiceSet {
    pub fields: Vec<FieldLabel>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldLabel {
    pub code: u8,
    pub label: String,
}

impl ChoiceSet {
    pub fn default_ten() -> Self {
        ChoiceSet {
            fields: crate::fields::DEFAULT_LABELS
                .iter()
                .enumerate()
                .map(|(i, l)| FieldLabel {
                    code: i as u8 + 1,
                    label: (*l).to_string(),
                })
                .collect(),
        }
    }
}

/// Ingestion outcome: retained records plus a per-field drop report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub n_rows: usize,
    pub n_retained: usize,
    pub dropped_by_field: BTreeMap<String, usize>,
    pub standardization_fallback_provinces: Vec<String>,
    pub invariant_violations: Vec<String>,
}

pub const CSV_HEADER: &[&str] = &[
    "id",
    "hs_grade_raw",
    "hs_type",
    "gender",
    "parent_graduate",
    "parent_highrank",
    "local_employment_rate",
    "university_quality_std",
    "cohort_year",
    "macro_region",
    "years_since_graduation",
    "province",
    "bachelor",
    "master",
    "single_cycle",
    "employed",
    "log_wage",
    "log_distance",
];

fn header() -> Vec<String> {
    let mut h: Vec<String> = CSV_HEADER.iter().map(|s| s.to_string()).collect();
    for i in 1..=10 {
        h.push(format!("ee_{i}"));
    }
    for i in 1..=10 {
        h.push(format!("cred_{i}"));
    }
    h
}

/// Write records in the ingestion schema. Standardized columns are derived,
/// not stored, so round-tripping through CSV re-derives them identically.
pub fn write_csv(path: &Path, records: &[IndividualRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header())?;
    for r in records {
        let mut row: Vec<String> = vec![
            r.id.clone(),
            fmt(r.hs_grade_raw),
            r.hs_type.as_str().to_string(),
            r.gender.to_string(),
            r.parent_graduate.to_string(),
            r.parent_highrank.to_string(),
            fmt(r.local_employment_rate),
            fmt(r.university_quality_std),
            r.cohort_year.to_string(),
            r.macro_region.clone(),
            r.years_since_graduation.to_string(),
            r.province.clone(),
            r.bachelor.code().to_string(),
            r.master.code().to_string(),
            r.single_cycle.to_string(),
            r.employed.to_string(),
            r.log_wage.map(fmt).unwrap_or_default(),
            fmt(r.log_distance),
        ];
        for v in r.z_bachelor {
            row.push(fmt(v));
        }
        for v in r.z_master_credits_raw {
            row.push(fmt(v));
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

fn fmt(v: f64) -> String {
    // Shortest round-trip representation keeps artifacts byte-stable.
    format!("{v}")
}

/// Read and validate `individuals.csv`, deriving the standardized columns.
pub fn read_csv(path: &Path) -> Result<(Vec<IndividualRecord>, ValidationReport)> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let head: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|s| s.to_string())
        .collect();
    let idx = |name: &str| -> Result<usize> {
        head.iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::UnknownField(name.to_string()))
    };
    let mut col: BTreeMap<String, usize> = BTreeMap::new();
    for name in header() {
        col.insert(name.clone(), idx(&name)?);
    }

    let mut dropped: BTreeMap<String, usize> = BTreeMap::new();
    let mut violations = Vec::new();
    let mut records = Vec::new();
    let mut n_rows = 0usize;

    'row: for rec in rdr.records() {
        let rec = rec?;
        n_rows += 1;
        let get = |name: &str| -> &str { rec.get(col[name]).unwrap_or("") };
        let drop = |field: &str, dropped: &mut BTreeMap<String, usize>| {
            *dropped.entry(field.to_string()).or_insert(0) += 1;
        };

        macro_rules! req_f64 {
            ($name:expr) => {
                match get($name).parse::<f64>() {
                    Ok(v) if v.is_finite() => v,
                    _ => {
                        drop($name, &mut dropped);
                        continue 'row;
                    }
                }
            };
        }
        macro_rules! req_int {
            ($name:expr, $t:ty) => {
                match get($name).parse::<$t>() {
                    Ok(v) => v,
                    _ => {
                        drop($name, &mut dropped);
                        continue 'row;
                    }
                }
            };
        }

        let id = get("id").to_string();
        let hs_grade_raw = req_f64!("hs_grade_raw");
        let hs_type = match HsType::parse(get("hs_type")) {
            Some(t) => t,
            None => {
                drop("hs_type", &mut dropped);
                continue 'row;
            }
        };
        let gender = req_int!("gender", u8);
        let parent_graduate = req_int!("parent_graduate", u8);
        let parent_highrank = req_int!("parent_highrank", u8);
        let local_employment_rate = req_f64!("local_employment_rate");
        let university_quality_std = req_f64!("university_quality_std");
        let cohort_year = req_int!("cohort_year", i32);
        let macro_region = get("macro_region").to_string();
        if macro_region.is_empty() {
            drop("macro_region", &mut dropped);
            continue 'row;
        }
        let years_since_graduation = req_int!("years_since_graduation", i32);
        let province = get("province").to_string();
        if province.is_empty() {
            drop("province", &mut dropped);
            continue 'row;
        }
        let bachelor = req_int!("bachelor", u8);
        let master = req_int!("master", u8);
        let single_cycle = req_int!("single_cycle", u8);
        let employed = req_int!("employed", u8);
        let log_wage = if get("log_wage").is_empty() {
            None
        } else {
            Some(req_f64!("log_wage"))
        };
        let log_distance = req_f64!("log_distance");

        let mut z_bachelor = [0.0; 10];
        for i in 0..10 {
            let name = format!("ee_{}", i + 1);
            z_bachelor[i] = match get(&name).parse::<f64>() {
                Ok(v) if v.is_finite() => v,
                _ => {
                    drop(&name, &mut dropped);
                    continue 'row;
                }
            };
        }
        let mut z_master_credits_raw = [0.0; 10];
        for i in 0..10 {
            let name = format!("cred_{}", i + 1);
            z_master_credits_raw[i] = match get(&name).parse::<f64>() {
                Ok(v) if v.is_finite() => v,
                _ => {
                    drop(&name, &mut dropped);
                    continue 'row;
                }
            };
        }

        // Schema invariants. Violations drop the row and are reported.
        let invalid = |reason: &str, violations: &mut Vec<String>| {
            violations.push(format!("row {id}: {reason}"));
        };
        if (employed == 1) != log_wage.is_some() {
            invalid("log_wage must be present iff employed=1", &mut violations);
            drop("log_wage", &mut dropped);
            continue 'row;
        }
        if z_bachelor.iter().any(|v| !(0.0..=1.0).contains(v)) {
            invalid("ee outside [0,1]", &mut violations);
            drop("ee", &mut dropped);
            continue 'row;
        }
        if z_master_credits_raw.iter().any(|v| !(0.0..=180.0).contains(v)) {
            invalid("cred outside [0,180]", &mut violations);
            drop("cred", &mut dropped);
            continue 'row;
        }
        if single_cycle == 1 && master != bachelor {
            invalid("single_cycle=1 requires master=bachelor", &mut violations);
            drop("single_cycle", &mut dropped);
            continue 'row;
        }
        if bachelor == 0 || bachelor > 10 || master > 10 {
            invalid("field code out of range", &mut violations);
            drop("bachelor", &mut dropped);
            continue 'row;
        }

        records.push(IndividualRecord {
            id,
            hs_grade_raw,
            hs_grade_std: 0.0,
            hs_type,
            gender,
            parent_graduate,
            parent_highrank,
            local_employment_rate,
            university_quality_std,
            cohort_year,
            macro_region,
            years_since_graduation,
            province,
            bachelor: FieldOfStudy(bachelor),
            master: MasterChoice::from_code(master),
            single_cycle,
            employed,
            log_wage,
            z_bachelor,
            z_master_credits_raw,
            z_master_credits_std: [0.0; 10],
            log_distance,
        });
    }

    let fallback = derive_standardized(&mut records)?;

    let report = ValidationReport {
        n_rows,
        n_retained: records.len(),
        dropped_by_field: dropped,
        standardization_fallback_provinces: fallback,
        invariant_violations: violations,
    };
    Ok((records, report))
}

/// Fill `hs_grade_std` (province z-scores, pooled across cohorts) and
/// `z_master_credits_std` (global scale across individuals and fields).
/// Returns the provinces that fell back to global moments.
pub fn derive_standardized(records: &mut [IndividualRecord]) -> Result<Vec<String>> {
    if records.is_empty() {
        return Ok(Vec::new());
    }
    let values: Vec<Option<f64>> = records.iter().map(|r| Some(r.hs_grade_raw)).collect();
    let groups: Vec<String> = records.iter().map(|r| r.province.clone()).collect();
    let std = standardize_by_group(&values, &groups)?;
    for (r, z) in records.iter_mut().zip(std.values) {
        r.hs_grade_std = z.expect("no missing inputs");
    }

    let all_credits: Vec<f64> = records
        .iter()
        .flat_map(|r| r.z_master_credits_raw.iter().copied())
        .collect();
    let (mean, sd) = standardize_global(&all_credits);
    for r in records.iter_mut() {
        for i in 0..10 {
            r.z_master_credits_std[i] = if sd > 0.0 {
                (r.z_master_credits_raw[i] - mean) / sd
            } else {
                0.0
            };
        }
    }
    Ok(std.fallback_groups)
}

#[cfg(test)]
pub(crate) fn test_record() -> IndividualRecord {
    IndividualRecord {
        id: "t0".into(),
        hs_grade_raw: 80.0,
        hs_grade_std: 0.0,
        hs_type: HsType::Other,
        gender: 0,
        parent_graduate: 0,
        parent_highrank: 0,
        local_employment_rate: 0.6,
        university_quality_std: 0.0,
        cohort_year: 2008,
        macro_region: "NW".into(),
        years_since_graduation: 5,
        province: "P01".into(),
        bachelor: FieldOfStudy(1),
        master: MasterChoice::NoMaster,
        single_cycle: 0,
        employed: 1,
        log_wage: Some(7.0),
        z_bachelor: [0.5; 10],
        z_master_credits_raw: [60.0; 10],
        z_master_credits_std: [0.0; 10],
        log_distance: 1.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn csv_round_trip_and_validation() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("individuals.csv");
        let mut recs = Vec::new();
        for i in 0..6 {
            let mut r = test_record();
            r.id = format!("id{i}");
            r.hs_grade_raw = 70.0 + i as f64;
            r.province = if i < 3 { "P01".into() } else { "P02".into() };
            recs.push(r);
        }
        write_csv(&path, &recs).unwrap();
        let (back, report) = read_csv(&path).unwrap();
        assert_eq!(back.len(), 6);
        assert_eq!(report.n_rows, 6);
        assert_eq!(report.n_retained, 6);
        // province z-scores of consecutive grades
        assert!((back[1].hs_grade_std - 0.0).abs() < 1e-12);
        // all credits equal -> zero-variance global scale -> zeros
        assert!(back.iter().all(|r| r.z_master_credits_std == [0.0; 10]));
    }

    #[test]
    fn missing_and_invalid_rows_are_dropped_with_counts() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("individuals.csv");
        let mut good = test_record();
        good.id = "ok".into();
        let mut bad_wage = test_record();
        bad_wage.id = "bad".into();
        bad_wage.employed = 0;
        // employed=0 with a wage violates the wage-employment invariant
        write_csv(&path, &[good, bad_wage]).unwrap();
        let (recs, report) = read_csv(&path).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(report.dropped_by_field.get("log_wage"), Some(&1));
        assert_eq!(report.invariant_violations.len(), 1);
    }

    #[test]
    fn single_cycle_invariant_enforced() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("individuals.csv");
        let mut r = test_record();
        r.single_cycle = 1;
        r.bachelor = FieldOfStudy(6);
        r.master = MasterChoice::Field(FieldOfStudy(4));
        write_csv(&path, &[r]).unwrap();
        let (recs, report) = read_csv(&path).unwrap();
        assert!(recs.is_empty());
        assert_eq!(report.dropped_by_field.get("single_cycle"), Some(&1));
    }
}
