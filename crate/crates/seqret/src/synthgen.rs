//! Synthetic data-generating process with known ground truth, plus
//! independent brute-force oracles for the estimation code.
//!
//! The oracles in this module (direct likelihood summation, probability
//! enumeration, grid MLE) deliberately implement their own softmax and
//! likelihood code and must not call into `crate::mnl`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::design::{numeric_value, DesignMatrix};
use crate::error::{Error, Result};
use crate::fields::{Career, FieldOfStudy, MasterChoice};
use crate::records::{derive_standardized, HsType, IndividualRecord};

/// True parameters of one choice stage. Coefficient rows cover alternatives
/// in index order with the baseline skipped, columns follow `columns`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageParams {
    pub columns: Vec<String>,
    pub n_alternatives: usize,
    pub baseline: usize,
    pub coefficients: Vec<Vec<f64>>,
    /// Per-alternative loading of the latent taste, scaled by the config's
    /// selection strength before entering utilities.
    pub taste_loadings: Vec<f64>,
}

impl StageParams {
    pub fn non_baseline(&self) -> Vec<usize> {
        (0..self.n_alternatives)
            .filter(|a| *a != self.baseline)
            .collect()
    }

    /// Truth keyed exactly like `MnlModel::param_names`.
    pub fn truth_map(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        for (r, a) in self.non_baseline().into_iter().enumerate() {
            for (c, col) in self.columns.iter().enumerate() {
                out.insert(format!("alt{a}:{col}"), self.coefficients[r][c]);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutcomeParams {
    pub x_columns: Vec<String>,
    pub beta_wage: Vec<f64>,
    pub beta_empl: Vec<f64>,
    /// Career effects keyed by `Career::key()`; the baseline career is 0.
    pub alpha_wage: BTreeMap<String, f64>,
    pub alpha_empl: BTreeMap<String, f64>,
    pub baseline_career: (u8, u8),
    pub sigma_wage: f64,
    /// Latent-taste loading into the wage error, scaled by selection strength.
    pub wage_selection_loading: f64,
    pub empl_selection_loading: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DgpConfig {
    pub n_individuals: usize,
    pub n_fields: u8,
    pub seed: u64,
    /// 0 reproduces exogenous choice; larger values load a shared latent
    /// taste into both choice utilities and the outcome error.
    pub selection_strength: f64,
    pub single_cycle_fields: Vec<u8>,
    pub n_provinces: usize,
    /// Per-field (lo, hi) support of the entry-exam instrument.
    pub ee_support: Vec<(f64, f64)>,
    /// Probability that a cross-field master is ineligible (credits = 180).
    pub p_ineligible: f64,
    pub stage1: StageParams,
    pub stage2: Vec<StageParams>,
    pub outcome: OutcomeParams,
}

/// Echo of the planted parameters, written beside generated data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DgpTruth {
    pub stage1: StageParams,
    pub stage2: Vec<StageParams>,
    pub outcome: OutcomeParams,
    pub selection_strength: f64,
}

fn stage1_columns(n_fields: u8) -> Vec<String> {
    let mut cols = vec![
        "const".to_string(),
        "hs_grade_std".to_string(),
        "gender".to_string(),
        "parent_graduate".to_string(),
    ];
    for f in 1..=n_fields {
        cols.push(format!("ee_{f}"));
    }
    cols
}

fn stage2_columns(n_fields: u8) -> Vec<String> {
    let mut cols = vec![
        "const".to_string(),
        "hs_grade_std".to_string(),
        "parent_graduate".to_string(),
    ];
    for f in 1..=n_fields {
        cols.push(format!("cred_std_{f}"));
    }
    cols.push("log_distance".to_string());
    cols
}

impl DgpConfig {
    /// Full-scale configuration: 10 fields, stage-1 baseline Lit.Lang.
    pub fn default_full(n_individuals: usize, seed: u64) -> Self {
        Self::build(n_individuals, 10, 6, seed, 0.0, vec![])
    }

    /// Small fixture: 3 fields, baseline field 1.
    pub fn default_fixture(n_individuals: usize, seed: u64) -> Self {
        Self::build(n_individuals, 3, 0, seed, 0.0, vec![])
    }

    fn build(
        n_individuals: usize,
        n_fields: u8,
        stage1_baseline: usize,
        seed: u64,
        selection_strength: f64,
        single_cycle_fields: Vec<u8>,
    ) -> Self {
        // parameters come from their own deterministic stream so the same
        // structural model can be re-sampled under many data seeds
        let mut prng = ChaCha8Rng::seed_from_u64(param_seed(seed));
        let f = n_fields as usize;

        let s1_cols = stage1_columns(n_fields);
        let mut s1_coef = Vec::new();
        for a in 0..f {
            if a == stage1_baseline {
                continue;
            }
            let mut row = Vec::new();
            for (c, _col) in s1_cols.iter().enumerate() {
                let v = if c == 0 {
                    prng.gen_range(-0.4..0.4)
                } else if c < 4 {
                    prng.gen_range(-0.5..0.5)
                } else {
                    // entry-exam block: deterrent on the own field, smaller
                    // cross effects
                    let field = c - 4; // 0-based field of this ee column
                    if field == a {
                        -1.2 + prng.gen_range(-0.3..0.3)
                    } else {
                        prng.gen_range(-0.35..0.35)
                    }
                };
                row.push(v);
            }
            s1_coef.push(row);
        }
        let s1_loadings: Vec<f64> = (0..f)
            .map(|a| if a == stage1_baseline { 0.0 } else { 0.7 })
            .collect();
        let stage1 = StageParams {
            columns: s1_cols,
            n_alternatives: f,
            baseline: stage1_baseline,
            coefficients: s1_coef,
            taste_loadings: s1_loadings,
        };

        let s2_cols = stage2_columns(n_fields);
        let mut stage2 = Vec::new();
        for _j in 1..=n_fields {
            let mut coef = Vec::new();
            for m in 1..=f {
                let mut row = Vec::new();
                for (c, _col) in s2_cols.iter().enumerate() {
                    let v = if c == 0 {
                        -0.6 + prng.gen_range(-0.4..0.4)
                    } else if c < 3 {
                        prng.gen_range(-0.4..0.4)
                    } else if c < 3 + f {
                        let field = c - 3 + 1;
                        if field == m {
                            -0.8 + prng.gen_range(-0.2..0.2)
                        } else {
                            prng.gen_range(-0.2..0.2)
                        }
                    } else {
                        // log_distance
                        -0.15 + prng.gen_range(-0.1..0.1)
                    };
                    row.push(v);
                }
                coef.push(row);
            }
            let mut loadings = vec![0.5; f + 1];
            loadings[0] = 0.0; // NoMaster
            stage2.push(StageParams {
                columns: s2_cols.clone(),
                n_alternatives: f + 1,
                baseline: 0,
                coefficients: coef,
                taste_loadings: loadings,
            });
        }

        let baseline_career = (stage1_baseline as u8 + 1, 0);
        let mut alpha_wage = BTreeMap::new();
        let mut alpha_empl = BTreeMap::new();
        for j in 1..=n_fields {
            for m in 0..=n_fields {
                let career = Career::new(j, m);
                let key = career.key();
                if (j, m) == baseline_career {
                    alpha_wage.insert(key.clone(), 0.0);
                    alpha_empl.insert(key, 0.0);
                } else {
                    alpha_wage.insert(key.clone(), prng.gen_range(-0.4..0.4));
                    alpha_empl.insert(key, prng.gen_range(-0.08..0.08));
                }
            }
        }
        let outcome = OutcomeParams {
            x_columns: vec![
                "const".into(),
                "hs_grade_std".into(),
                "gender".into(),
                "parent_graduate".into(),
            ],
            beta_wage: vec![6.6, 0.05, -0.1, 0.08],
            beta_empl: vec![0.8, 0.03, -0.02, 0.01],
            alpha_wage,
            alpha_empl,
            baseline_career,
            sigma_wage: 0.3,
            wage_selection_loading: 1.0,
            empl_selection_loading: 0.0,
        };

        DgpConfig {
            n_individuals,
            n_fields,
            seed,
            selection_strength,
            single_cycle_fields,
            n_provinces: 20,
            ee_support: (0..f)
                .map(|i| {
                    let lo = 0.05 + 0.02 * (i as f64);
                    (lo, lo + 0.6)
                })
                .collect(),
            p_ineligible: 0.08,
            stage1,
            stage2,
            outcome,
        }
    }

    pub fn with_selection(mut self, strength: f64) -> Self {
        self.selection_strength = strength;
        self
    }

    pub fn truth(&self) -> DgpTruth {
        DgpTruth {
            stage1: self.stage1.clone(),
            stage2: self.stage2.clone(),
            outcome: self.outcome.clone(),
            selection_strength: self.selection_strength,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.n_fields as usize;
        if f < 2 || f > 10 {
            return Err(Error::InvalidConfig("n_fields must be in 2..=10".into()));
        }
        if self.stage1.n_alternatives != f || self.stage2.len() != f {
            return Err(Error::InvalidConfig(
                "stage parameter dimensions disagree with n_fields".into(),
            ));
        }
        if self.single_cycle_fields.iter().any(|&s| s == 0 || s > self.n_fields) {
            return Err(Error::InvalidConfig("single-cycle field out of range".into()));
        }
        Ok(())
    }
}

// mixes the user seed into an unrelated parameter stream
fn param_seed(seed: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0xA5A5_5A5A_1234_5678
}

/// Own-softmax utility evaluation used by the generator and the oracles.
fn softmax_probs(utilities: &[f64]) -> Vec<f64> {
    let max = utilities.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = utilities.iter().map(|u| (u - max).exp()).collect();
    let denom: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / denom).collect()
}

fn stage_x(r: &IndividualRecord, columns: &[String]) -> Vec<f64> {
    columns
        .iter()
        .map(|c| {
            if c == "const" {
                1.0
            } else {
                numeric_value(r, c).expect("stage column")
            }
        })
        .collect()
}

fn stage_utilities(params: &StageParams, x: &[f64], taste: f64, strength: f64) -> Vec<f64> {
    let mut u = vec![0.0f64; params.n_alternatives];
    for (r, a) in params.non_baseline().into_iter().enumerate() {
        u[a] = params.coefficients[r]
            .iter()
            .zip(x)
            .map(|(b, v)| b * v)
            .sum();
    }
    for (a, load) in params.taste_loadings.iter().enumerate() {
        u[a] += strength * load * taste;
    }
    u
}

fn sample_categorical(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let draw: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if draw < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Generate a population with known truth. Identical configs yield
/// bit-identical populations.
pub fn generate_population(cfg: &DgpConfig) -> Result<(Vec<IndividualRecord>, DgpTruth)> {
    cfg.validate()?;
    let f = cfg.n_fields as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let grade_noise = Normal::new(0.0, 8.0).unwrap();
    let quality = Normal::new(0.0, 1.0).unwrap();
    let regions = ["NW", "NE", "C", "S", "I"];

    let mut records = Vec::with_capacity(cfg.n_individuals);
    let mut tastes = Vec::with_capacity(cfg.n_individuals);
    for i in 0..cfg.n_individuals {
        let province_idx = rng.gen_range(0..cfg.n_provinces);
        let mut ee = [0.0; 10];
        for (k, slot) in ee.iter_mut().enumerate().take(f) {
            let (lo, hi) = cfg.ee_support[k];
            *slot = rng.gen_range(lo..hi);
        }
        let hs_type = match rng.gen_range(0..10) {
            0..=2 => HsType::Humanities,
            3..=6 => HsType::Science,
            _ => HsType::Other,
        };
        let r = IndividualRecord {
            id: format!("i{i}"),
            hs_grade_raw: 70.0 + province_idx as f64 * 0.5 + grade_noise.sample(&mut rng),
            hs_grade_std: 0.0,
            hs_type,
            gender: rng.gen_bool(0.58) as u8,
            parent_graduate: rng.gen_bool(0.30) as u8,
            parent_highrank: rng.gen_bool(0.20) as u8,
            local_employment_rate: rng.gen_range(0.4..0.9),
            university_quality_std: quality.sample(&mut rng),
            cohort_year: 2007 + rng.gen_range(0..4),
            macro_region: regions[province_idx % regions.len()].to_string(),
            years_since_graduation: 4 + rng.gen_range(0..3),
            province: format!("P{:02}", province_idx + 1),
            bachelor: FieldOfStudy(1),
            master: MasterChoice::NoMaster,
            single_cycle: 0,
            employed: 1,
            log_wage: None,
            z_bachelor: ee,
            z_master_credits_raw: [0.0; 10],
            z_master_credits_std: [0.0; 10],
            log_distance: rng.gen_range(0.0..2.5),
        };
        tastes.push(quality.sample(&mut rng));
        records.push(r);
    }

    // credit requirements are institutional features known before any
    // choice is made, so they are drawn before stage 1 and do not depend
    // on the realized bachelor
    for r in records.iter_mut() {
        for m in 1..=f {
            let base = 20.0 + 90.0 * frac_hash(cfg.seed, 0, m as u64);
            let v = if rng.gen_bool(cfg.p_ineligible) {
                180.0
            } else {
                (base + rng.gen_range(-15.0..15.0)).clamp(0.0, 180.0)
            };
            r.z_master_credits_raw[m - 1] = v;
        }
        for m in (f + 1)..=10 {
            r.z_master_credits_raw[m - 1] = 90.0;
        }
    }
    // grade and credit standardization, exactly as ingestion does
    derive_standardized(&mut records)?;

    // stage 1: bachelor choice
    for (r, &tau) in records.iter_mut().zip(&tastes) {
        let x = stage_x(r, &cfg.stage1.columns);
        let u = stage_utilities(&cfg.stage1, &x, tau, cfg.selection_strength);
        let probs = softmax_probs(&u);
        let j = sample_categorical(&mut rng, &probs);
        r.bachelor = FieldOfStudy(j as u8 + 1);
    }

    // stage 2: master choice (or single cycle), then outcomes
    for (r, &tau) in records.iter_mut().zip(&tastes) {
        let j = r.bachelor.code();
        if cfg.single_cycle_fields.contains(&j) {
            r.single_cycle = 1;
            r.master = MasterChoice::Field(FieldOfStudy(j));
        } else {
            let params = &cfg.stage2[j as usize - 1];
            let x = stage_x(r, &params.columns);
            let u = stage_utilities(params, &x, tau, cfg.selection_strength);
            let probs = softmax_probs(&u);
            let m = sample_categorical(&mut rng, &probs);
            r.master = MasterChoice::from_code(m as u8);
        }

        let career_key = r.career().key();
        let xo = stage_x(r, &cfg.outcome.x_columns);
        let alpha_e = cfg.outcome.alpha_empl.get(&career_key).copied().unwrap_or(0.0);
        let p_empl = (dot(&cfg.outcome.beta_empl, &xo)
            + alpha_e
            + cfg.selection_strength * cfg.outcome.empl_selection_loading * tau)
            .clamp(0.02, 0.98);
        r.employed = rng.gen_bool(p_empl) as u8;
        let alpha_w = cfg.outcome.alpha_wage.get(&career_key).copied().unwrap_or(0.0);
        let wage = dot(&cfg.outcome.beta_wage, &xo)
            + alpha_w
            + cfg.selection_strength * cfg.outcome.wage_selection_loading * tau
            + Normal::new(0.0, cfg.outcome.sigma_wage).unwrap().sample(&mut rng);
        r.log_wage = if r.employed == 1 { Some(wage) } else { None };
    }

    Ok((records, cfg.truth()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// deterministic pseudo-random fraction in [0,1) from integer keys
fn frac_hash(seed: u64, a: u64, b: u64) -> f64 {
    let mut h = seed ^ a.wrapping_mul(0x1000_0000_01B3) ^ b.wrapping_mul(0x9E37_79B9);
    h ^= h >> 33;
    h = h.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    h ^= h >> 33;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Exact choice probabilities for one covariate row, by direct evaluation.
/// Returns (stage-1 vector, per-bachelor stage-2 vectors, career matrix
/// P_ijm = P_ij * P(m|j) over the full grid).
pub fn enumerate_probabilities(
    stage1: &StageParams,
    stage2: &[StageParams],
    record: &IndividualRecord,
) -> (Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let x1 = stage_x(record, &stage1.columns);
    let p1 = softmax_probs(&stage_utilities(stage1, &x1, 0.0, 0.0));
    let mut p2 = Vec::new();
    for params in stage2 {
        let x2 = stage_x(record, &params.columns);
        p2.push(softmax_probs(&stage_utilities(params, &x2, 0.0, 0.0)));
    }
    let careers = p1
        .iter()
        .enumerate()
        .map(|(j, pj)| p2[j].iter().map(|pm| pj * pm).collect())
        .collect();
    (p1, p2, careers)
}

/// Independent direct-summation log-likelihood (no shared code with
/// `crate::mnl`): per-row naive softmax and log.
pub fn direct_loglik_oracle(
    design: &DMatrix<f64>,
    choices: &[usize],
    coefficients: &DMatrix<f64>,
    baseline: usize,
) -> f64 {
    let k = coefficients.nrows() + 1;
    let non_base: Vec<usize> = (0..k).filter(|a| *a != baseline).collect();
    let mut total = 0.0;
    for (i, &y) in choices.iter().enumerate() {
        let mut u = vec![0.0f64; k];
        for (r, &a) in non_base.iter().enumerate() {
            let mut s = 0.0;
            for c in 0..design.ncols() {
                s += coefficients[(r, c)] * design[(i, c)];
            }
            u[a] = s;
        }
        let max = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = u.iter().map(|v| (v - max).exp()).sum();
        total += (u[y] - max) - denom.ln();
    }
    total
}

/// Exhaustive nested-grid maximizer of the direct likelihood. The likelihood
/// is concave, so refining a coarse grid around its argmax reaches the same
/// optimum as a dense sweep at `final_step` without enumerating it.
pub fn grid_mle_oracle(
    design: &DMatrix<f64>,
    choices: &[usize],
    n_alternatives: usize,
    baseline: usize,
    bound: f64,
    final_step: f64,
) -> Result<Vec<f64>> {
    let p = design.ncols();
    let q = (n_alternatives - 1) * p;
    assert!(q <= 4, "grid oracle supports at most 4 parameters");
    assert!(choices.len() <= 20, "grid oracle is for tiny fixtures");

    let eval = |theta: &[f64]| -> f64 {
        let mut coef = DMatrix::zeros(n_alternatives - 1, p);
        for r in 0..n_alternatives - 1 {
            for c in 0..p {
                coef[(r, c)] = theta[r * p + c];
            }
        }
        direct_loglik_oracle(design, choices, &coef, baseline)
    };

    let mut center = vec![0.0f64; q];
    let mut half_range = bound;
    let mut step = bound / 8.0;
    let mut best = center.clone();
    loop {
        let per_axis: Vec<Vec<f64>> = (0..q)
            .map(|d| {
                let lo = (center[d] - half_range).max(-bound);
                let hi = (center[d] + half_range).min(bound);
                let n = ((hi - lo) / step).round() as usize;
                (0..=n).map(|i| lo + i as f64 * step).collect()
            })
            .collect();
        let mut best_ll = f64::NEG_INFINITY;
        let mut idx = vec![0usize; q];
        'grid: loop {
            let theta: Vec<f64> = (0..q).map(|d| per_axis[d][idx[d]]).collect();
            let ll = eval(&theta);
            if ll > best_ll {
                best_ll = ll;
                best = theta;
            }
            for d in 0..q {
                idx[d] += 1;
                if idx[d] < per_axis[d].len() {
                    continue 'grid;
                }
                idx[d] = 0;
            }
            break;
        }
        if best.iter().any(|v| (v.abs() - bound).abs() < step / 2.0) {
            return Err(Error::InvalidConfig(
                "grid argmax on boundary: widen bounds".into(),
            ));
        }
        if step <= final_step {
            return Ok(best);
        }
        center = best.clone();
        half_range = step * 1.5;
        step = (step / 5.0).max(final_step);
    }
}

/// The shared N=12, K=3, p=2 fixture used across oracle tests.
pub fn tiny_fixture() -> (DesignMatrix, Vec<usize>) {
    let xs = [
        0.2, -0.5, 1.1, 0.8, -1.2, 0.05, 0.6, -0.9, 1.4, -0.3, 0.75, -1.05,
    ];
    let choices = vec![0, 1, 2, 0, 1, 2, 1, 0, 2, 2, 1, 0];
    let mut m = DMatrix::zeros(12, 2);
    for (i, &x) in xs.iter().enumerate() {
        m[(i, 0)] = 1.0;
        m[(i, 1)] = x;
    }
    let names = vec!["const".to_string(), "x".to_string()];
    let index = names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.clone(), i))
        .collect();
    (
        DesignMatrix {
            matrix: m,
            names,
            index,
        },
        choices,
    )
}
