//! Full-pipeline pairwise bootstrap: every replicate resamples individuals
//! with replacement and re-runs both choice stages, the composition, and the
//! outcome regressions, so the reported uncertainty includes the generated
//! instruments' estimation error.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields::Career;
use crate::nested::{compose_career_probabilities, fit_stage1, fit_stage2, NestedConfig};
use crate::records::IndividualRecord;
use crate::returns::{fit_reduced_form, Outcome, ReturnsConfig};

#[derive(Debug, Clone, Serialize)]
pub struct BootstrapConfig {
    pub n_iter: usize,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            n_iter: 104,
            seed: 20_104,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BootstrapStat {
    pub outcome: Outcome,
    pub career: Career,
    /// Replicates in which this career survived the frequency filter.
    pub n_draws: usize,
    pub mean: f64,
    pub sd: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BootstrapResult {
    pub n_iter: usize,
    pub n_failed: usize,
    pub stats: Vec<BootstrapStat>,
}

impl BootstrapResult {
    pub fn stat(&self, outcome: Outcome, career: &Career) -> Option<&BootstrapStat> {
        self.stats
            .iter()
            .find(|s| s.outcome == outcome && s.career == *career)
    }
}

fn replicate_seed(seed: u64, r: usize) -> u64 {
    seed ^ (r as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn percentile(sorted: &[f64], pct: f64) -> f64 {
    let n = sorted.len();
    let rank = ((pct / 100.0) * n as f64).ceil() as usize;
    sorted[rank.saturating_sub(1).min(n - 1)]
}

type ReplicateDraw = BTreeMap<(&'static str, String), f64>;

fn run_replicate(
    records: &[IndividualRecord],
    ncfg: &NestedConfig,
    rcfg: &ReturnsConfig,
    seed: u64,
) -> Result<ReplicateDraw> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = records.len();
    let resample: Vec<IndividualRecord> = (0..n)
        .map(|_| records[rng.gen_range(0..n)].clone())
        .collect();

    let s1 = fit_stage1(&resample, ncfg)?;
    let s2 = fit_stage2(&resample, ncfg)?;
    let pm = compose_career_probabilities(&s1, &s2, &resample, ncfg.min_count)?;
    let mut draw = BTreeMap::new();
    for outcome in [Outcome::Employment, Outcome::LogWage] {
        let rf = fit_reduced_form(&resample, &pm, rcfg, outcome)?;
        for career in &rf.careers {
            let alpha = rf.career_coefficient(career).unwrap();
            if !alpha.is_finite() {
                return Err(Error::NonFiniteDesign { row: 0, column: career.key() });
            }
            draw.insert((outcome.label(), career.key()), alpha);
        }
    }
    Ok(draw)
}

/// Pairwise bootstrap of the reduced-form career coefficients. Replicates
/// are seeded deterministically from `(seed, replicate index)`, so results
/// do not depend on thread count or scheduling. Failed replicates are
/// dropped and counted; more than half failing is an error.
pub fn pairwise_bootstrap(
    records: &[IndividualRecord],
    ncfg: &NestedConfig,
    rcfg: &ReturnsConfig,
    bcfg: &BootstrapConfig,
) -> Result<BootstrapResult> {
    if bcfg.n_iter == 0 {
        return Err(Error::InvalidConfig("bootstrap n_iter must be > 0".into()));
    }
    let draws: Vec<Result<ReplicateDraw>> = (0..bcfg.n_iter)
        .into_par_iter()
        .map(|r| run_replicate(records, ncfg, rcfg, replicate_seed(bcfg.seed, r)))
        .collect();

    let n_failed = draws.iter().filter(|d| d.is_err()).count();
    if 2 * n_failed > bcfg.n_iter {
        return Err(Error::UnstableBootstrap {
            failed: n_failed,
            total: bcfg.n_iter,
        });
    }

    let mut by_key: BTreeMap<(&'static str, String), Vec<f64>> = BTreeMap::new();
    for draw in draws.into_iter().flatten() {
        for (key, value) in draw {
            by_key.entry(key).or_default().push(value);
        }
    }

    let mut stats = Vec::new();
    for ((outcome_label, career_key), mut values) in by_key {
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        let outcome = if outcome_label == "employment" {
            Outcome::Employment
        } else {
            Outcome::LogWage
        };
        stats.push(BootstrapStat {
            outcome,
            career: Career::parse_key(&career_key)?,
            n_draws: n,
            mean,
            sd: var.sqrt(),
            ci_lower: percentile(&values, 2.5),
            ci_upper: percentile(&values, 97.5),
        });
    }
    Ok(BootstrapResult {
        n_iter: bcfg.n_iter,
        n_failed,
        stats,
    })
}
