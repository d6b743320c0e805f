//! Reduced-form outcome regressions on composed career probabilities,
//! the OLS-on-dummies benchmark, the modified first stage, and the
//! rescaling / credibility machinery that turns probability-scale
//! coefficients into interpretable career effects.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::design::{FactorSpec, Layout};
use crate::error::{Error, Result};
use crate::fields::Career;
use crate::linreg::{ols, LinearFit};
use crate::nested::CareerProbabilityMatrix;
use crate::records::IndividualRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Outcome {
    Employment,
    LogWage,
}

impl Outcome {
    pub fn label(&self) -> &'static str {
        match self {
            Outcome::Employment => "employment",
            Outcome::LogWage => "log_wage",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ReturnsConfig {
    pub x_numeric: Vec<String>,
    pub factors: Vec<FactorSpec>,
    pub baseline_career: Career,
    /// Credible range for rescaled employment effects.
    pub empl_bounds: (f64, f64),
    /// Credible range for rescaled log-wage effects.
    pub lnwage_bounds: (f64, f64),
    /// Baseline-career employment rate for level translation.
    pub empl_level_base: f64,
    /// Baseline-career mean log wage for level translation.
    pub lnwage_level_base: f64,
}

impl ReturnsConfig {
    pub fn fixture(baseline_career: Career) -> Self {
        ReturnsConfig {
            x_numeric: vec![
                "hs_grade_std".into(),
                "gender".into(),
                "parent_graduate".into(),
            ],
            factors: vec![],
            baseline_career,
            empl_bounds: (-0.62, 0.38),
            lnwage_bounds: (-1.04, 2.27),
            empl_level_base: 0.615,
            lnwage_level_base: 6.614,
        }
    }

    pub fn full_default(baseline_career: Career) -> Self {
        ReturnsConfig {
            x_numeric: vec![
                "hs_grade_std".into(),
                "gender".into(),
                "parent_graduate".into(),
                "parent_highrank".into(),
                "local_employment_rate".into(),
                "university_quality_std".into(),
            ],
            factors: vec![
                FactorSpec {
                    field: "hs_type".into(),
                    reference: Some("other".into()),
                },
                FactorSpec {
                    field: "macro_region".into(),
                    reference: None,
                },
                FactorSpec {
                    field: "cohort_year".into(),
                    reference: None,
                },
                FactorSpec {
                    field: "years_since_graduation".into(),
                    reference: None,
                },
            ],
            baseline_career,
            empl_bounds: (-0.62, 0.38),
            lnwage_bounds: (-1.04, 2.27),
            empl_level_base: 0.615,
            lnwage_level_base: 6.614,
        }
    }

    fn base_layout(&self) -> Layout {
        Layout {
            intercept: true,
            numeric: self.x_numeric.clone(),
            factors: self.factors.clone(),
        }
    }
}

pub fn prob_column_name(career: &Career) -> String {
    format!("p_{}", career.key())
}

pub fn dummy_column_name(career: &Career) -> String {
    format!("d_{}", career.key())
}

/// Rows entering an outcome regression: everyone for employment, the
/// employed (observed-wage) subsample for log wages.
pub fn outcome_rows(records: &[IndividualRecord], outcome: Outcome) -> Vec<usize> {
    match outcome {
        Outcome::Employment => (0..records.len()).collect(),
        Outcome::LogWage => records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.log_wage.is_some())
            .map(|(i, _)| i)
            .collect(),
    }
}

fn outcome_values(records: &[IndividualRecord], rows: &[usize], outcome: Outcome) -> Vec<f64> {
    rows.iter()
        .map(|&i| match outcome {
            Outcome::Employment => records[i].employed as f64,
            Outcome::LogWage => records[i].log_wage.expect("wage observed"),
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct OutcomeRegression {
    pub outcome: Outcome,
    pub fit: LinearFit,
    /// Non-baseline careers, in the order of the appended columns.
    pub careers: Vec<Career>,
    pub column_names: Vec<String>,
}

impl OutcomeRegression {
    pub fn career_coefficient(&self, career: &Career) -> Option<f64> {
        let k = self.careers.iter().position(|c| c == career)?;
        self.fit.coefficient(&self.column_names[k])
    }

    pub fn career_se(&self, career: &Career) -> Option<f64> {
        let k = self.careers.iter().position(|c| c == career)?;
        self.fit.se(&self.column_names[k])
    }
}

fn non_baseline_careers(pm: &CareerProbabilityMatrix, baseline: &Career) -> Result<Vec<Career>> {
    if !pm.careers.contains(baseline) {
        return Err(Error::InvalidConfig(format!(
            "baseline career {} not among feasible careers",
            baseline.key()
        )));
    }
    Ok(pm
        .careers
        .iter()
        .filter(|c| *c != baseline)
        .copied()
        .collect())
}

/// Reduced form: outcome on covariates, fixed effects, and the
/// composed career probabilities (baseline career omitted).
pub fn fit_reduced_form(
    records: &[IndividualRecord],
    pm: &CareerProbabilityMatrix,
    cfg: &ReturnsConfig,
    outcome: Outcome,
) -> Result<OutcomeRegression> {
    let rows = outcome_rows(records, outcome);
    let careers = non_baseline_careers(pm, &cfg.baseline_career)?;
    let sub: Vec<IndividualRecord> = rows.iter().map(|&i| records[i].clone()).collect();
    let base = cfg.base_layout().resolve(&sub)?.build(&sub)?;

    let names: Vec<String> = careers.iter().map(prob_column_name).collect();
    let mut values = DMatrix::zeros(rows.len(), careers.len());
    for (k, career) in careers.iter().enumerate() {
        let c = pm.career_position(career).unwrap();
        for (out_i, &i) in rows.iter().enumerate() {
            values[(out_i, k)] = pm.values[(i, c)];
        }
    }
    let design = base.with_columns(&names, &values);
    let y = outcome_values(records, &rows, outcome);
    let fit = ols(&design, &y)?;
    Ok(OutcomeRegression {
        outcome,
        fit,
        careers,
        column_names: names,
    })
}

/// Naive benchmark: same regression with realized-career dummies in place
/// of the probabilities.
pub fn fit_ols_treatments(
    records: &[IndividualRecord],
    pm: &CareerProbabilityMatrix,
    cfg: &ReturnsConfig,
    outcome: Outcome,
) -> Result<OutcomeRegression> {
    let rows = outcome_rows(records, outcome);
    let careers = non_baseline_careers(pm, &cfg.baseline_career)?;
    let sub: Vec<IndividualRecord> = rows.iter().map(|&i| records[i].clone()).collect();
    let base = cfg.base_layout().resolve(&sub)?.build(&sub)?;

    let names: Vec<String> = careers.iter().map(dummy_column_name).collect();
    let mut values = DMatrix::zeros(rows.len(), careers.len());
    for (k, career) in careers.iter().enumerate() {
        for (out_i, &i) in rows.iter().enumerate() {
            if records[i].career() == *career {
                values[(out_i, k)] = 1.0;
            }
        }
    }
    let design = base.with_columns(&names, &values);
    let y = outcome_values(records, &rows, outcome);
    let fit = ols(&design, &y)?;
    Ok(OutcomeRegression {
        outcome,
        fit,
        careers,
        column_names: names,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct FirstStageResult {
    pub career: Career,
    /// Coefficient of D_jm on its own composed probability.
    pub phi: f64,
    pub phi_se: f64,
    pub t: f64,
    pub r2: f64,
}

/// Modified first stage: each realized-career dummy regressed on covariates,
/// fixed effects, and its *own* composed probability only.
pub fn fit_modified_first_stage(
    records: &[IndividualRecord],
    pm: &CareerProbabilityMatrix,
    cfg: &ReturnsConfig,
) -> Result<Vec<FirstStageResult>> {
    let careers = non_baseline_careers(pm, &cfg.baseline_career)?;
    let base = cfg.base_layout().resolve(records)?.build(records)?;
    let n = records.len();
    let mut out = Vec::with_capacity(careers.len());
    for career in &careers {
        let c = pm.career_position(career).unwrap();
        let name = prob_column_name(career);
        let mut col = DMatrix::zeros(n, 1);
        for i in 0..n {
            col[(i, 0)] = pm.values[(i, c)];
        }
        let design = base.with_columns(std::slice::from_ref(&name), &col);
        let y: Vec<f64> = records
            .iter()
            .map(|r| if r.career() == *career { 1.0 } else { 0.0 })
            .collect();
        let fit = ols(&design, &y)?;
        let phi = fit.coefficient(&name).unwrap();
        let phi_se = fit.se(&name).unwrap();
        out.push(FirstStageResult {
            career: *career,
            phi,
            phi_se,
            t: if phi_se > 0.0 { phi / phi_se } else { f64::NAN },
            r2: fit.r2,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ScaleUsed {
    Max,
    P95,
    Dropped,
}

impl ScaleUsed {
    pub fn label(&self) -> &'static str {
        match self {
            ScaleUsed::Max => "max",
            ScaleUsed::P95 => "p95",
            ScaleUsed::Dropped => "dropped",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CareerReturn {
    pub career: Career,
    pub outcome: Outcome,
    /// Probability-scale coefficient from the reduced form.
    pub alpha: f64,
    pub alpha_se: f64,
    pub alpha_ols: f64,
    /// Rescaled effect alpha * scale(P_jm); NaN when dropped.
    pub alpha_tilde: f64,
    pub scale_used: ScaleUsed,
    pub scale_value: f64,
    /// exp(base + alpha_tilde) for wages, base + alpha_tilde for employment.
    pub level: f64,
}

/// Rescale each reduced-form coefficient by the maximum composed probability
/// of its career, falling back to the 95th percentile — and then dropping the
/// career — when the rescaled effect leaves the credible range. Idempotent:
/// effects already inside the range are untouched.
pub fn rescale_and_filter(
    rf: &OutcomeRegression,
    ols_bench: &OutcomeRegression,
    pm: &CareerProbabilityMatrix,
    cfg: &ReturnsConfig,
) -> Result<Vec<CareerReturn>> {
    let bounds = match rf.outcome {
        Outcome::Employment => cfg.empl_bounds,
        Outcome::LogWage => cfg.lnwage_bounds,
    };
    let base_level = match rf.outcome {
        Outcome::Employment => cfg.empl_level_base,
        Outcome::LogWage => cfg.lnwage_level_base,
    };
    let mut out = Vec::with_capacity(rf.careers.len());
    for career in &rf.careers {
        let alpha = rf.career_coefficient(career).unwrap();
        let alpha_se = rf.career_se(career).unwrap();
        let alpha_ols = ols_bench.career_coefficient(career).unwrap_or(f64::NAN);
        let c = pm.career_position(career).unwrap();
        let maxp = pm.max_per_career[c];
        let p95 = pm.p95_per_career[c];

        let in_range = |v: f64| v >= bounds.0 && v <= bounds.1;
        let (tilde, scale_used, scale_value) = {
            let v_max = alpha * maxp;
            if in_range(v_max) {
                (v_max, ScaleUsed::Max, maxp)
            } else {
                let v_p95 = alpha * p95;
                if in_range(v_p95) {
                    (v_p95, ScaleUsed::P95, p95)
                } else {
                    (f64::NAN, ScaleUsed::Dropped, f64::NAN)
                }
            }
        };
        let level = match (rf.outcome, scale_used) {
            (_, ScaleUsed::Dropped) => f64::NAN,
            (Outcome::LogWage, _) => (base_level + tilde).exp(),
            (Outcome::Employment, _) => base_level + tilde,
        };
        out.push(CareerReturn {
            career: *career,
            outcome: rf.outcome,
            alpha,
            alpha_se,
            alpha_ols,
            alpha_tilde: tilde,
            scale_used,
            scale_value,
            level,
        });
    }
    if out.iter().all(|r| r.scale_used == ScaleUsed::Dropped) {
        return Err(Error::ZeroVarianceReturns);
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct ReturnsTable {
    pub baseline_career: Career,
    pub employment: Vec<CareerReturn>,
    pub log_wage: Vec<CareerReturn>,
    pub first_stage: Vec<FirstStageResult>,
}

impl ReturnsTable {
    pub fn lookup(&self, outcome: Outcome, career: &Career) -> Option<&CareerReturn> {
        let rows = match outcome {
            Outcome::Employment => &self.employment,
            Outcome::LogWage => &self.log_wage,
        };
        rows.iter().find(|r| r.career == *career)
    }

    pub fn alpha_map(&self, outcome: Outcome) -> BTreeMap<String, f64> {
        let rows = match outcome {
            Outcome::Employment => &self.employment,
            Outcome::LogWage => &self.log_wage,
        };
        rows.iter().map(|r| (r.career.key(), r.alpha)).collect()
    }
}

/// Full probability-instrument returns step for both outcomes.
pub fn estimate_returns(
    records: &[IndividualRecord],
    pm: &CareerProbabilityMatrix,
    cfg: &ReturnsConfig,
) -> Result<ReturnsTable> {
    let rf_e = fit_reduced_form(records, pm, cfg, Outcome::Employment)?;
    let ols_e = fit_ols_treatments(records, pm, cfg, Outcome::Employment)?;
    let rf_w = fit_reduced_form(records, pm, cfg, Outcome::LogWage)?;
    let ols_w = fit_ols_treatments(records, pm, cfg, Outcome::LogWage)?;
    let first_stage = fit_modified_first_stage(records, pm, cfg)?;
    Ok(ReturnsTable {
        baseline_career: cfg.baseline_career,
        employment: rescale_and_filter(&rf_e, &ols_e, pm, cfg)?,
        log_wage: rescale_and_filter(&rf_w, &ols_w, pm, cfg)?,
        first_stage,
    })
}
