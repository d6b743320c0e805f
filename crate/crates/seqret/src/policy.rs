//! Counterfactual admission-policy simulations on the stage-1 model:
//! transform the entry-exam instruments, re-predict enrollment shares with
//! the fitted coefficients unchanged, and decompose the shifts by
//! demographics.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields::FieldOfStudy;
use crate::nested::StageOneModel;
use crate::records::IndividualRecord;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum PolicyTransform {
    Identity,
    /// Set every scoped field's instrument to its observed per-field minimum.
    SetToObservedMin { scope: Vec<u8> },
    /// Set every scoped field's instrument to a fixed value in [0,1].
    SetToValue { scope: Vec<u8>, value: f64 },
    /// Set a single field's instrument to a fixed value in [0,1].
    SetField { field: u8, value: f64 },
}

impl PolicyTransform {
    fn scope(&self) -> Vec<u8> {
        match self {
            PolicyTransform::Identity => Vec::new(),
            PolicyTransform::SetToObservedMin { scope } => scope.clone(),
            PolicyTransform::SetToValue { scope, .. } => scope.clone(),
            PolicyTransform::SetField { field, .. } => vec![*field],
        }
    }

    fn validate(&self, n_fields: u8) -> Result<()> {
        let scope = self.scope();
        if !matches!(self, PolicyTransform::Identity) && scope.is_empty() {
            return Err(Error::InvalidConfig("empty transform scope".into()));
        }
        for f in &scope {
            if *f == 0 || *f > n_fields {
                return Err(Error::InvalidConfig(format!("field {f} out of range")));
            }
        }
        let value = match self {
            PolicyTransform::SetToValue { value, .. } => Some(*value),
            PolicyTransform::SetField { value, .. } => Some(*value),
            _ => None,
        };
        if let Some(v) = value {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!(
                    "transform value {v} outside [0,1]"
                )));
            }
        }
        Ok(())
    }

    /// Drop scope fields above `n_fields` (broad transforms like `min`
    /// default to all ten fields; smaller models keep only their own).
    pub fn restricted(self, n_fields: u8) -> Self {
        match self {
            PolicyTransform::SetToObservedMin { scope } => PolicyTransform::SetToObservedMin {
                scope: scope.into_iter().filter(|f| *f <= n_fields).collect(),
            },
            PolicyTransform::SetToValue { scope, value } => PolicyTransform::SetToValue {
                scope: scope.into_iter().filter(|f| *f <= n_fields).collect(),
                value,
            },
            other => other,
        }
    }

    /// Parse the CLI form `identity`, `min`, `one`, or `set:<field>=<v>`.
    pub fn parse(s: &str) -> Result<Self> {
        let all: Vec<u8> = (1..=10).collect();
        match s {
            "identity" => Ok(PolicyTransform::Identity),
            "min" => Ok(PolicyTransform::SetToObservedMin { scope: all }),
            "one" => Ok(PolicyTransform::SetToValue {
                scope: all,
                value: 1.0,
            }),
            other => {
                let parse = || -> Option<PolicyTransform> {
                    let rest = other.strip_prefix("set:")?;
                    let (f, v) = rest.split_once('=')?;
                    Some(PolicyTransform::SetField {
                        field: f.parse().ok()?,
                        value: v.parse().ok()?,
                    })
                };
                parse().ok_or_else(|| {
                    Error::InvalidConfig(format!("unrecognized transform '{other}'"))
                })
            }
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FieldShift {
    pub field: FieldOfStudy,
    pub baseline_share: f64,
    pub counterfactual_share: f64,
    /// Share change in percentage points.
    pub delta_pp: f64,
    /// Relative change against the baseline predicted share.
    pub delta_rel_predicted: f64,
    /// Relative change against the observed enrollment share.
    pub delta_rel_observed: f64,
    pub observed_share: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SubgroupReport {
    pub key: String,
    pub group: String,
    pub n: usize,
    pub low_n: bool,
    pub shifts: Vec<FieldShift>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationReport {
    pub transform: PolicyTransform,
    pub n: usize,
    pub shifts: Vec<FieldShift>,
    /// Fields whose transformed instrument leaves the observed support.
    pub out_of_support: Vec<FieldOfStudy>,
    pub subgroups: Vec<SubgroupReport>,
    #[serde(skip)]
    baseline_probs: DMatrix<f64>,
    #[serde(skip)]
    counterfactual_probs: DMatrix<f64>,
}

fn apply_transform(
    records: &[IndividualRecord],
    transform: &PolicyTransform,
) -> (Vec<IndividualRecord>, Vec<FieldOfStudy>) {
    let mut out = records.to_vec();
    let mut out_of_support = Vec::new();
    let scope = transform.scope();
    for &f in &scope {
        let idx = f as usize - 1;
        let observed: Vec<f64> = records.iter().map(|r| r.z_bachelor[idx]).collect();
        let min = observed.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = observed.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let target = match transform {
            PolicyTransform::SetToObservedMin { .. } => min,
            PolicyTransform::SetToValue { value, .. } => *value,
            PolicyTransform::SetField { value, .. } => *value,
            PolicyTransform::Identity => unreachable!(),
        };
        if target < min || target > max {
            out_of_support.push(FieldOfStudy(f));
        }
        for r in out.iter_mut() {
            r.z_bachelor[idx] = target;
        }
    }
    (out, out_of_support)
}

fn shifts_over_rows(
    records: &[IndividualRecord],
    rows: &[usize],
    baseline: &DMatrix<f64>,
    counterfactual: &DMatrix<f64>,
) -> Vec<FieldShift> {
    let k = baseline.ncols();
    let n = rows.len() as f64;
    (0..k)
        .map(|a| {
            let base: f64 = rows.iter().map(|&i| baseline[(i, a)]).sum::<f64>() / n;
            let cf: f64 = rows.iter().map(|&i| counterfactual[(i, a)]).sum::<f64>() / n;
            let obs = rows
                .iter()
                .filter(|&&i| records[i].bachelor.code() as usize == a + 1)
                .count() as f64
                / n;
            FieldShift {
                field: FieldOfStudy(a as u8 + 1),
                baseline_share: base,
                counterfactual_share: cf,
                delta_pp: (cf - base) * 100.0,
                delta_rel_predicted: if base > 0.0 { cf / base - 1.0 } else { f64::NAN },
                delta_rel_observed: if obs > 0.0 { (cf - base) / obs } else { f64::NAN },
                observed_share: obs,
            }
        })
        .collect()
}

/// Re-predict enrollment shares under a transformed instrument vector,
/// holding the fitted stage-1 coefficients fixed.
pub fn simulate_policy(
    s1: &StageOneModel,
    records: &[IndividualRecord],
    transform: &PolicyTransform,
) -> Result<SimulationReport> {
    if records.is_empty() {
        return Err(Error::EmptyStandardizationInput);
    }
    transform.validate(s1.mnl.n_alternatives as u8)?;
    let baseline_probs = s1.predict(records)?;
    let (counterfactual, out_of_support) = apply_transform(records, transform);
    let counterfactual_probs = s1.predict(&counterfactual)?;
    let rows: Vec<usize> = (0..records.len()).collect();
    let shifts = shifts_over_rows(records, &rows, &baseline_probs, &counterfactual_probs);
    Ok(SimulationReport {
        transform: transform.clone(),
        n: records.len(),
        shifts,
        out_of_support,
        subgroups: Vec::new(),
        baseline_probs,
        counterfactual_probs,
    })
}

fn demographic_group(r: &IndividualRecord, key: &str) -> Result<String> {
    match key {
        "gender" => Ok(r.gender.to_string()),
        "parent_graduate" => Ok(r.parent_graduate.to_string()),
        "parent_highrank" => Ok(r.parent_highrank.to_string()),
        "hs_grade_sign" => Ok(if r.hs_grade_std >= 0.0 { "above" } else { "below" }.to_string()),
        _ => Err(Error::UnknownField(key.to_string())),
    }
}

/// Split the simulated shifts by demographic keys. Subgroups below 30 rows
/// are kept but flagged.
pub fn decompose_simulation(
    report: &SimulationReport,
    records: &[IndividualRecord],
    keys: &[String],
) -> Result<SimulationReport> {
    let mut out = report.clone();
    for key in keys {
        let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            groups.entry(demographic_group(r, key)?).or_default().push(i);
        }
        for (group, rows) in groups {
            let shifts = shifts_over_rows(
                records,
                &rows,
                &report.baseline_probs,
                &report.counterfactual_probs,
            );
            out.subgroups.push(SubgroupReport {
                key: key.clone(),
                group,
                n: rows.len(),
                low_n: rows.len() < 30,
                shifts,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nested::{fit_stage1, NestedConfig};
    use crate::synthgen::{generate_population, DgpConfig};

    fn setup(n: usize, seed: u64) -> (Vec<IndividualRecord>, StageOneModel) {
        let (recs, _) = generate_population(&DgpConfig::default_fixture(n, seed)).unwrap();
        let s1 = fit_stage1(&recs, &NestedConfig::fixture(3)).unwrap();
        (recs, s1)
    }

    #[test]
    fn identity_is_a_fixed_point() {
        let (recs, s1) = setup(2000, 31);
        let rep = simulate_policy(&s1, &recs, &PolicyTransform::Identity).unwrap();
        for s in &rep.shifts {
            assert!(s.delta_pp.abs() < 1e-12);
            assert!(s.delta_rel_predicted.abs() < 1e-12);
        }
        assert!(rep.out_of_support.is_empty());
    }

    #[test]
    fn shares_sum_to_one_and_deltas_to_zero() {
        let (recs, s1) = setup(2500, 32);
        let t = PolicyTransform::SetToObservedMin {
            scope: vec![1, 2, 3],
        };
        let rep = simulate_policy(&s1, &recs, &t).unwrap();
        let base: f64 = rep.shifts.iter().map(|s| s.baseline_share).sum();
        let cf: f64 = rep.shifts.iter().map(|s| s.counterfactual_share).sum();
        let dd: f64 = rep.shifts.iter().map(|s| s.delta_pp).sum();
        assert!((base - 1.0).abs() < 1e-10);
        assert!((cf - 1.0).abs() < 1e-10);
        assert!(dd.abs() < 1e-10);
        // observed-min targets stay inside the support by construction
        assert!(rep.out_of_support.is_empty());
    }

    #[test]
    fn out_of_support_flagged_for_unit_value() {
        let (recs, s1) = setup(1500, 33);
        // fixture instruments live well below 1.0
        let t = PolicyTransform::SetToValue {
            scope: vec![1, 2, 3],
            value: 1.0,
        };
        let rep = simulate_policy(&s1, &recs, &t).unwrap();
        assert_eq!(rep.out_of_support.len(), 3);
    }

    #[test]
    fn invalid_transforms_rejected() {
        let (recs, s1) = setup(500, 34);
        let bad_scope = PolicyTransform::SetToValue {
            scope: vec![],
            value: 0.5,
        };
        assert!(simulate_policy(&s1, &recs, &bad_scope).is_err());
        let bad_value = PolicyTransform::SetField {
            field: 1,
            value: 1.5,
        };
        assert!(simulate_policy(&s1, &recs, &bad_value).is_err());
        let bad_field = PolicyTransform::SetField {
            field: 9,
            value: 0.5,
        };
        assert!(simulate_policy(&s1, &recs, &bad_field).is_err());
    }

    #[test]
    fn parse_cli_forms() {
        assert_eq!(PolicyTransform::parse("identity").unwrap(), PolicyTransform::Identity);
        assert!(matches!(
            PolicyTransform::parse("min").unwrap(),
            PolicyTransform::SetToObservedMin { .. }
        ));
        assert!(matches!(
            PolicyTransform::parse("one").unwrap(),
            PolicyTransform::SetToValue { value, .. } if value == 1.0
        ));
        assert_eq!(
            PolicyTransform::parse("set:3=0.25").unwrap(),
            PolicyTransform::SetField {
                field: 3,
                value: 0.25
            }
        );
        assert!(PolicyTransform::parse("bogus").is_err());
    }

    #[test]
    fn lowering_exam_threshold_raises_own_enrollment() {
        // own-field entry-exam coefficients are negative in the DGP, so
        // setting field 2's threshold to the observed minimum raises its
        // predicted share
        let (recs, s1) = setup(4000, 35);
        let t = PolicyTransform::SetToObservedMin { scope: vec![2] };
        let rep = simulate_policy(&s1, &recs, &t).unwrap();
        assert!(rep.shifts[1].delta_pp > 0.0);
        // direction probe: everyone whose threshold strictly fell gains mass
        let min = recs
            .iter()
            .map(|r| r.z_bachelor[1])
            .fold(f64::INFINITY, f64::min);
        for i in (0..recs.len()).step_by(200) {
            if recs[i].z_bachelor[1] > min + 1e-9 {
                let moved = rep.counterfactual_probs[(i, 1)] - rep.baseline_probs[(i, 1)];
                assert!(moved > 0.0, "row {i}: {moved}");
            }
        }
    }

    #[test]
    fn subgroup_weighted_deltas_reproduce_aggregate() {
        let (recs, s1) = setup(3000, 36);
        let t = PolicyTransform::SetToObservedMin { scope: vec![1] };
        let rep = simulate_policy(&s1, &recs, &t).unwrap();
        let dec = decompose_simulation(&rep, &recs, &["gender".into()]).unwrap();
        assert_eq!(dec.subgroups.len(), 2);
        for a in 0..3 {
            let weighted: f64 = dec
                .subgroups
                .iter()
                .map(|g| g.shifts[a].delta_pp * g.n as f64)
                .sum::<f64>()
                / recs.len() as f64;
            assert!((weighted - rep.shifts[a].delta_pp).abs() < 1e-12);
            for g in &dec.subgroups {
                let sum: f64 = g.shifts.iter().map(|s| s.counterfactual_share).sum();
                assert!((sum - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn tiny_subgroup_flagged_low_n() {
        let (mut recs, s1) = setup(1000, 37);
        for r in recs.iter_mut().skip(5) {
            r.parent_highrank = 0;
        }
        for r in recs.iter_mut().take(5) {
            r.parent_highrank = 1;
        }
        let rep = simulate_policy(&s1, &recs, &PolicyTransform::Identity).unwrap();
        let dec = decompose_simulation(&rep, &recs, &["parent_highrank".into()]).unwrap();
        let small = dec.subgroups.iter().find(|g| g.group == "1").unwrap();
        assert!(small.low_n && small.n == 5);
        let big = dec.subgroups.iter().find(|g| g.group == "0").unwrap();
        assert!(!big.low_n);
    }

    #[test]
    fn gender_interacted_instrument_flips_delta_sign() {
        // plant an interaction so the own-exam effect for field 2 has
        // opposite signs by gender, then check subgroup deltas split
        let mut cfg = DgpConfig::default_fixture(12_000, 38);
        let col = cfg
            .stage1
            .columns
            .iter()
            .position(|c| c == "ee_2")
            .unwrap();
        cfg.stage1.columns.push("ee_2_x_gender".into());
        // coefficient row 0 is field 2 (the baseline field 1 has no row)
        for (r, row) in cfg.stage1.coefficients.iter_mut().enumerate() {
            row.push(if r == 0 { 2.6 } else { 0.0 });
            if r == 0 {
                row[col] = -1.3; // gender=0 slope -1.3, gender=1 slope +1.3
            }
        }
        let (recs, _) = generate_population(&cfg).unwrap();
        let mut ncfg = NestedConfig::fixture(3);
        ncfg.x_numeric.push("ee_2_x_gender".into());
        let s1 = fit_stage1(&recs, &ncfg).unwrap();
        let t = PolicyTransform::SetToObservedMin { scope: vec![2] };
        let rep = simulate_policy(&s1, &recs, &t).unwrap();
        let dec = decompose_simulation(&rep, &recs, &["gender".into()]).unwrap();
        let d0 = dec.subgroups.iter().find(|g| g.group == "0").unwrap().shifts[1].delta_pp;
        let d1 = dec.subgroups.iter().find(|g| g.group == "1").unwrap().shifts[1].delta_pp;
        assert!(
            d0 > 0.0 && d1 < 0.0,
            "expected opposite-sign deltas, got {d0} and {d1}"
        );
    }
}
