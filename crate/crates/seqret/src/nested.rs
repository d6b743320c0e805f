//! Two-stage choice pipeline: bachelor choice (stage 1), master choice
//! conditional on bachelor (ten stage-2 fits), and per-individual career
//! probabilities composed as the product of the two stages.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::design::{DesignMatrix, FactorSpec, Layout, ResolvedLayout};
use crate::error::{Error, Result};
use crate::fields::{filter_careers, Career};
use crate::mnl::{
    collinear_columns, fit_mnl, predict_proba, wald_joint, MnlConfig, MnlModel, WaldTest,
};
use crate::records::IndividualRecord;

#[derive(Debug, Clone, Serialize)]
pub struct NestedConfig {
    pub n_fields: u8,
    /// Stage-1 baseline bachelor code (default Lit.Lang. = 7).
    pub baseline_bachelor: u8,
    pub min_count: usize,
    pub mnl: MnlConfig,
    /// Individual covariates entering both stages.
    pub x_numeric: Vec<String>,
    /// Fixed-effect blocks entering both stages.
    pub factors: Vec<FactorSpec>,
}

impl NestedConfig {
    pub fn fixture(n_fields: u8) -> Self {
        NestedConfig {
            n_fields,
            baseline_bachelor: 1,
            min_count: 1,
            mnl: MnlConfig::default(),
            x_numeric: vec![
                "hs_grade_std".into(),
                "gender".into(),
                "parent_graduate".into(),
            ],
            factors: vec![],
        }
    }

    /// The default estimation layout on the 10-field choice set.
    pub fn full_default() -> Self {
        NestedConfig {
            n_fields: 10,
            baseline_bachelor: crate::fields::LIT_LANG,
            min_count: 100,
            mnl: MnlConfig::default(),
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
        }
    }

    fn stage1_layout(&self) -> Layout {
        let mut numeric = self.x_numeric.clone();
        for f in 1..=self.n_fields {
            numeric.push(format!("ee_{f}"));
        }
        Layout {
            intercept: true,
            numeric,
            factors: self.factors.clone(),
        }
    }

    fn stage2_layout(&self, feasible_masters: &[u8]) -> Layout {
        let mut numeric = self.x_numeric.clone();
        for &m in feasible_masters {
            if m > 0 {
                numeric.push(format!("cred_std_{m}"));
            }
        }
        numeric.push("log_distance".into());
        Layout {
            intercept: true,
            numeric,
            factors: self.factors.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StageOneModel {
    pub mnl: MnlModel,
    pub layout: ResolvedLayout,
    /// Names of the entry-exam instrument columns.
    pub z_block: Vec<String>,
}

impl StageOneModel {
    pub fn predict(&self, records: &[IndividualRecord]) -> Result<DMatrix<f64>> {
        let design = self.layout.build(records)?;
        predict_proba(&self.mnl, &design)
    }

    /// Flattened indices of every instrument coefficient, for the joint test.
    pub fn instrument_selector(&self) -> Vec<usize> {
        let mut sel = Vec::new();
        for a in self.mnl.non_baseline() {
            for z in &self.z_block {
                let col = self
                    .mnl
                    .column_names
                    .iter()
                    .position(|c| c == z)
                    .expect("z column present");
                sel.push(self.mnl.param_index(a, col).unwrap());
            }
        }
        sel
    }
}

#[derive(Debug, Clone)]
pub struct StageTwoModel {
    pub bachelor: u8,
    /// `None` when only NoMaster is feasible: P(NoMaster | bachelor) = 1.
    pub mnl: Option<MnlModel>,
    pub layout: ResolvedLayout,
    /// Columns kept after dropping constants/collinears in the subsample.
    pub kept_columns: Vec<String>,
    /// Master codes in local alternative order (0 = NoMaster first).
    pub feasible_masters: Vec<u8>,
    pub dropped_instruments: Vec<String>,
    /// Joint Wald test of the surviving credit-requirement instruments.
    pub exclusion_test: Option<WaldTest>,
    pub n_estimation: usize,
}

impl StageTwoModel {
    /// Conditional master probabilities for every record (whole sample),
    /// columns in `feasible_masters` order.
    pub fn predict(&self, records: &[IndividualRecord]) -> Result<DMatrix<f64>> {
        match &self.mnl {
            None => Ok(DMatrix::from_element(records.len(), 1, 1.0)),
            Some(model) => {
                let design = self.layout.build(records)?;
                let design = select_columns(&design, &self.kept_columns);
                predict_proba(model, &design)
            }
        }
    }
}

fn select_columns(design: &DesignMatrix, names: &[String]) -> DesignMatrix {
    let cols: Vec<usize> = names.iter().map(|n| design.index[n]).collect();
    let mut m = DMatrix::zeros(design.n_rows(), cols.len());
    for (k, &c) in cols.iter().enumerate() {
        m.set_column(k, &design.matrix.column(c));
    }
    let index = names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.clone(), i))
        .collect();
    DesignMatrix {
        matrix: m,
        names: names.to_vec(),
        index,
    }
}

pub fn fit_stage1(records: &[IndividualRecord], cfg: &NestedConfig) -> Result<StageOneModel> {
    let layout = cfg.stage1_layout().resolve(records)?;
    let design = layout.build(records)?;
    let choices: Vec<usize> = records
        .iter()
        .map(|r| r.bachelor.code() as usize - 1)
        .collect();
    let mnl = fit_mnl(
        &design,
        &choices,
        cfg.n_fields as usize,
        cfg.baseline_bachelor as usize - 1,
        &cfg.mnl,
    )?;
    let z_block = (1..=cfg.n_fields).map(|f| format!("ee_{f}")).collect();
    Ok(StageOneModel {
        mnl,
        layout,
        z_block,
    })
}

/// Fit one conditional master-choice model per bachelor. Estimation uses
/// non-single-cycle students of that bachelor whose career survives the
/// frequency filter; prediction later uses the whole sample.
pub fn fit_stage2(records: &[IndividualRecord], cfg: &NestedConfig) -> Result<Vec<StageTwoModel>> {
    let feasible = filter_careers(records, cfg.min_count);
    let bachelors: Vec<u8> = (1..=cfg.n_fields).collect();
    bachelors
        .par_iter()
        .map(|&j| fit_stage2_one(records, cfg, j, &feasible))
        .collect()
}

fn fit_stage2_one(
    records: &[IndividualRecord],
    cfg: &NestedConfig,
    bachelor: u8,
    feasible: &[Career],
) -> Result<StageTwoModel> {
    let mut masters: Vec<u8> = feasible
        .iter()
        .filter(|c| c.bachelor.code() == bachelor)
        .map(|c| c.master.code())
        .collect();
    masters.sort_unstable();
    if !masters.contains(&0) {
        // the no-master option is always an available alternative
        masters.insert(0, 0);
    }

    let layout = cfg.stage2_layout(&masters).resolve(records)?;

    let sub: Vec<IndividualRecord> = records
        .iter()
        .filter(|r| {
            r.bachelor.code() == bachelor
                && r.single_cycle == 0
                && masters.contains(&r.master.code())
        })
        .cloned()
        .collect();

    // keep only alternatives actually observed in the estimation subsample
    let masters: Vec<u8> = masters
        .into_iter()
        .filter(|&m| m == 0 || sub.iter().any(|r| r.master.code() == m))
        .collect();

    if sub.is_empty() || masters.len() < 2 {
        return Ok(StageTwoModel {
            bachelor,
            mnl: None,
            layout,
            kept_columns: Vec::new(),
            feasible_masters: vec![0],
            dropped_instruments: Vec::new(),
            exclusion_test: None,
            n_estimation: sub.len(),
        });
    }

    let full_design = layout.build(&sub)?;
    // drop zero-variance columns (e.g. factor levels absent from the
    // subsample, or an instrument every student faces at the same value)
    let mut dropped = Vec::new();
    let mut kept: Vec<String> = Vec::new();
    for (c, name) in full_design.names.iter().enumerate() {
        let col = full_design.matrix.column(c);
        let constant = col.iter().all(|v| *v == col[0]);
        if constant && name != "const" {
            dropped.push(name.clone());
        } else {
            kept.push(name.clone());
        }
    }
    let mut design = select_columns(&full_design, &kept);
    // then drop pivoted-out collinear columns
    let collinear = collinear_columns(&design);
    if !collinear.is_empty() {
        kept.retain(|n| !collinear.contains(n));
        dropped.extend(collinear);
        design = select_columns(&full_design, &kept);
    }

    let choices: Vec<usize> = sub
        .iter()
        .map(|r| {
            masters
                .iter()
                .position(|&m| m == r.master.code())
                .expect("master in alternative list")
        })
        .collect();
    let baseline = masters.iter().position(|&m| m == 0).unwrap();
    let mnl = fit_mnl(&design, &choices, masters.len(), baseline, &cfg.mnl)?;

    // joint test of the surviving credit instruments across alternatives
    let mut selector = Vec::new();
    for a in mnl.non_baseline() {
        for (c, name) in mnl.column_names.iter().enumerate() {
            if name.starts_with("cred_std_") {
                selector.push(mnl.param_index(a, c).unwrap());
            }
        }
    }
    let exclusion_test = if selector.is_empty() {
        None
    } else {
        wald_joint(&mnl, &selector).ok()
    };

    Ok(StageTwoModel {
        bachelor,
        mnl: Some(mnl),
        layout,
        kept_columns: kept,
        feasible_masters: masters,
        dropped_instruments: dropped,
        exclusion_test,
        n_estimation: sub.len(),
    })
}

#[derive(Debug, Clone)]
pub struct CareerProbabilityMatrix {
    pub careers: Vec<Career>,
    /// N x C composed probabilities over the feasible careers.
    pub values: DMatrix<f64>,
    /// Stage-1 mass on bachelors with no feasible career at all.
    pub excluded_mass: Vec<f64>,
    pub max_per_career: Vec<f64>,
    pub p95_per_career: Vec<f64>,
    pub mean_per_career: Vec<f64>,
    pub observed_share: Vec<f64>,
}

impl CareerProbabilityMatrix {
    pub fn career_position(&self, career: &Career) -> Option<usize> {
        self.careers.iter().position(|c| c == career)
    }
}

/// Nearest-rank 95th percentile of a column.
fn percentile_nearest_rank(values: &mut [f64], pct: f64) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    let rank = ((pct / 100.0) * n as f64).ceil() as usize;
    values[rank.saturating_sub(1).min(n - 1)]
}

/// Compose P_ijm = P_ij * P(m|j) over the feasible careers.
///
/// Bachelors whose students are all single-cycle carry their stage-1 mass on
/// the (j, j) career. Because each stage-2 model's choice set is exactly the
/// feasible masters, the conditional probabilities already renormalize over
/// feasible cells and every row sums to 1 up to the excluded-career mass.
pub fn compose_career_probabilities(
    s1: &StageOneModel,
    s2: &[StageTwoModel],
    records: &[IndividualRecord],
    min_count: usize,
) -> Result<CareerProbabilityMatrix> {
    let n = records.len();
    let n_fields = s1.mnl.n_alternatives as u8;
    let feasible = filter_careers(records, min_count);
    let p1 = s1.predict(records)?;

    // a bachelor is single-cycle-only when every observed student is flagged
    let mut any_regular = vec![false; n_fields as usize + 1];
    let mut any_single = vec![false; n_fields as usize + 1];
    for r in records {
        let j = r.bachelor.code() as usize;
        if r.single_cycle == 1 {
            any_single[j] = true;
        } else {
            any_regular[j] = true;
        }
    }

    let mut careers = Vec::new();
    let mut columns: Vec<DMatrix<f64>> = Vec::new();
    let mut covered = vec![false; n_fields as usize + 1];

    for j in 1..=n_fields {
        let ji = j as usize;
        if any_regular[ji] {
            let model = s2
                .iter()
                .find(|m| m.bachelor == j)
                .ok_or(Error::MissingStageTwo(j))?;
            if model.mnl.is_none() && model.feasible_masters == vec![0] {
                // degenerate: all mass on (j, NoMaster) if feasible
                let career = Career::new(j, 0);
                if feasible.contains(&career) {
                    careers.push(career);
                    let mut col = DMatrix::zeros(n, 1);
                    for i in 0..n {
                        col[(i, 0)] = p1[(i, ji - 1)];
                    }
                    columns.push(col);
                    covered[ji] = true;
                }
                continue;
            }
            let p2 = model.predict(records)?;
            for (k, &m) in model.feasible_masters.iter().enumerate() {
                let career = Career::new(j, m);
                careers.push(career);
                let mut col = DMatrix::zeros(n, 1);
                for i in 0..n {
                    col[(i, 0)] = p1[(i, ji - 1)] * p2[(i, k)];
                }
                columns.push(col);
            }
            covered[ji] = true;
        } else if any_single[ji] {
            // single-cycle degrees: P_ijm = P_ij on the j=m career
            let career = Career::new(j, j);
            if feasible.contains(&career) {
                careers.push(career);
                let mut col = DMatrix::zeros(n, 1);
                for i in 0..n {
                    col[(i, 0)] = p1[(i, ji - 1)];
                }
                columns.push(col);
                covered[ji] = true;
            }
        }
        // bachelors never observed keep their (tiny) stage-1 mass excluded
    }

    // sort career columns lexicographically
    let mut order: Vec<usize> = (0..careers.len()).collect();
    order.sort_by_key(|&i| careers[i]);
    let careers: Vec<Career> = order.iter().map(|&i| careers[i]).collect();
    let mut values = DMatrix::zeros(n, careers.len());
    for (dst, &src) in order.iter().enumerate() {
        values.set_column(dst, &columns[src].column(0));
    }

    let mut excluded_mass = vec![0.0; n];
    for j in 1..=n_fields as usize {
        if !covered[j] {
            for (i, mass) in excluded_mass.iter_mut().enumerate() {
                *mass += p1[(i, j - 1)];
            }
        }
    }

    let mut max_per_career = Vec::new();
    let mut p95_per_career = Vec::new();
    let mut mean_per_career = Vec::new();
    let mut observed_share = Vec::new();
    for (c, career) in careers.iter().enumerate() {
        let col: Vec<f64> = (0..n).map(|i| values[(i, c)]).collect();
        let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sorted = col.clone();
        let p95 = percentile_nearest_rank(&mut sorted, 95.0);
        let mean = col.iter().sum::<f64>() / n as f64;
        let share = records.iter().filter(|r| r.career() == *career).count() as f64 / n as f64;
        max_per_career.push(max);
        p95_per_career.push(p95);
        mean_per_career.push(mean);
        observed_share.push(share);
    }

    Ok(CareerProbabilityMatrix {
        careers,
        values,
        excluded_mass,
        max_per_career,
        p95_per_career,
        mean_per_career,
        observed_share,
    })
}
