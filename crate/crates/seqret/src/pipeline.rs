//! Staged pipeline orchestration: ingest -> stage1 -> stage2 -> compose ->
//! returns -> bootstrap -> simulate -> curriculum, with CSV/JSON artifacts
//! and a hash manifest for byte-reproducibility checks.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bootstrap::{pairwise_bootstrap, BootstrapConfig, BootstrapResult};
use crate::curriculum::{
    credit_shares, discover_reciprocal_pairs, quartile_composition, returns_correlation,
    symmetric_contrast, CareerShares, CurriculumMatrix, Level, QuantGrouping,
};
use crate::design::FactorSpec;
use crate::error::{Error, Result};
use crate::fields::{Career, FieldOfStudy};
use crate::mnl::{wald_joint, MnlConfig};
use crate::nested::{
    compose_career_probabilities, fit_stage1, fit_stage2, CareerProbabilityMatrix, NestedConfig,
    StageTwoModel,
};
use crate::policy::{decompose_simulation, simulate_policy, PolicyTransform};
use crate::records::{read_csv, IndividualRecord, ValidationReport};
use crate::returns::{estimate_returns, Outcome, ReturnsConfig, ReturnsTable, ScaleUsed};
use crate::synthgen::{generate_population, DgpConfig};

pub const STAGES: &[&str] = &[
    "ingest",
    "stage1",
    "stage2",
    "compose",
    "returns",
    "bootstrap",
    "simulate",
    "curriculum",
];

fn default_min_count() -> usize {
    100
}
fn default_baseline_bachelor() -> u8 {
    crate::fields::LIT_LANG
}
fn default_baseline_career() -> (u8, u8) {
    (crate::fields::LIT_LANG, 0)
}
fn default_empl_bounds() -> (f64, f64) {
    (-0.62, 0.38)
}
fn default_lnwage_bounds() -> (f64, f64) {
    (-1.04, 2.27)
}
fn default_n_iter() -> usize {
    104
}
fn default_seed() -> u64 {
    20_104
}
fn default_decompose_keys() -> Vec<String> {
    vec!["gender".into(), "parent_graduate".into()]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapSection {
    #[serde(default = "default_n_iter")]
    pub n_iter: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

/// Synthetic-input section: generate the population instead of reading it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSection {
    /// "fixture" (3 fields) or "full" (10 fields).
    pub preset: String,
    pub n: usize,
    pub seed: u64,
    #[serde(default)]
    pub selection_strength: f64,
}

impl SynthSection {
    pub fn build(&self) -> Result<DgpConfig> {
        let cfg = match self.preset.as_str() {
            "fixture" => DgpConfig::default_fixture(self.n, self.seed),
            "full" => DgpConfig::default_full(self.n, self.seed),
            other => {
                return Err(Error::InvalidConfig(format!("unknown preset '{other}'")));
            }
        };
        Ok(cfg.with_selection(self.selection_strength))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Input CSV in the ingestion schema; omit when `synth` is given.
    #[serde(default)]
    pub individuals: Option<PathBuf>,
    #[serde(default)]
    pub synth: Option<SynthSection>,
    #[serde(default)]
    pub curriculum_bachelor: Option<PathBuf>,
    #[serde(default)]
    pub curriculum_master: Option<PathBuf>,
    pub out_dir: PathBuf,
    #[serde(default = "default_min_count")]
    pub min_count: usize,
    #[serde(default = "default_baseline_bachelor")]
    pub baseline_bachelor: u8,
    /// (bachelor, master) codes; master 0 = NoMaster.
    #[serde(default = "default_baseline_career")]
    pub baseline_career: (u8, u8),
    /// Overrides for the estimation layout; defaults match the full model.
    #[serde(default)]
    pub x_numeric: Option<Vec<String>>,
    #[serde(default)]
    pub factors: Option<Vec<FactorSpec>>,
    #[serde(default)]
    pub n_fields: Option<u8>,
    #[serde(default = "default_empl_bounds")]
    pub empl_bounds: (f64, f64),
    #[serde(default = "default_lnwage_bounds")]
    pub lnwage_bounds: (f64, f64),
    #[serde(default)]
    pub bootstrap: Option<BootstrapSection>,
    /// Transforms in CLI form: "identity", "min", "one", "set:<f>=<v>".
    #[serde(default)]
    pub transforms: Vec<String>,
    #[serde(default = "default_decompose_keys")]
    pub decompose_keys: Vec<String>,
}

impl PipelineConfig {
    pub fn demo(out_dir: PathBuf) -> Self {
        PipelineConfig {
            individuals: None,
            synth: Some(SynthSection {
                preset: "fixture".into(),
                n: 4000,
                seed: 7,
                selection_strength: 0.0,
            }),
            curriculum_bachelor: None,
            curriculum_master: None,
            out_dir,
            min_count: 30,
            baseline_bachelor: 1,
            baseline_career: (1, 0),
            x_numeric: Some(vec![
                "hs_grade_std".into(),
                "gender".into(),
                "parent_graduate".into(),
            ]),
            factors: Some(vec![]),
            n_fields: Some(3),
            empl_bounds: default_empl_bounds(),
            lnwage_bounds: default_lnwage_bounds(),
            bootstrap: Some(BootstrapSection {
                n_iter: 16,
                seed: 20_104,
            }),
            transforms: vec!["identity".into(), "min".into()],
            decompose_keys: default_decompose_keys(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(serde_json::from_str(&text)?)
    }

    fn nested_config(&self) -> NestedConfig {
        let mut cfg = if self.n_fields == Some(3) {
            NestedConfig::fixture(3)
        } else {
            NestedConfig::full_default()
        };
        cfg.min_count = self.min_count;
        cfg.baseline_bachelor = self.baseline_bachelor;
        if let Some(x) = &self.x_numeric {
            cfg.x_numeric = x.clone();
        }
        if let Some(f) = &self.factors {
            cfg.factors = f.clone();
        }
        if let Some(n) = self.n_fields {
            cfg.n_fields = n;
        }
        cfg
    }

    fn returns_config(&self) -> ReturnsConfig {
        let baseline = Career::new(self.baseline_career.0, self.baseline_career.1);
        let mut cfg = if self.n_fields == Some(3) {
            ReturnsConfig::fixture(baseline)
        } else {
            ReturnsConfig::full_default(baseline)
        };
        if let Some(x) = &self.x_numeric {
            cfg.x_numeric = x.clone();
        }
        if let Some(f) = &self.factors {
            cfg.factors = f.clone();
        }
        cfg.empl_bounds = self.empl_bounds;
        cfg.lnwage_bounds = self.lnwage_bounds;
        cfg
    }

    fn validate(&self) -> Result<()> {
        if self.individuals.is_none() && self.synth.is_none() {
            return Err(Error::InvalidConfig(
                "either 'individuals' or 'synth' must be given".into(),
            ));
        }
        if self.min_count == 0 {
            return Err(Error::InvalidConfig("min_count must be > 0".into()));
        }
        for t in &self.transforms {
            PolicyTransform::parse(t)?;
        }
        Ok(())
    }
}

/// Written artifacts keyed by file name, with SHA-256 content hashes.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: Option<u64>,
    pub stages_run: Vec<String>,
    pub files: BTreeMap<String, String>,
}

pub struct RunSummary {
    pub manifest: Manifest,
    pub validation: ValidationReport,
    pub returns: Option<ReturnsTable>,
    pub bootstrap: Option<BootstrapResult>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    format!("{:x}", h.finalize())
}

struct ArtifactWriter {
    dir: PathBuf,
    files: BTreeMap<String, String>,
}

impl ArtifactWriter {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        Ok(ArtifactWriter {
            dir: dir.to_path_buf(),
            files: BTreeMap::new(),
        })
    }

    fn write(&mut self, name: &str, content: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, content).map_err(|e| Error::io(path.display().to_string(), e))?;
        self.files.insert(name.to_string(), sha256_hex(content));
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }
}

fn fmt(v: f64) -> String {
    if v.is_nan() {
        "NA".to_string()
    } else {
        format!("{v}")
    }
}

fn stage2_summary_json(models: &[StageTwoModel]) -> serde_json::Value {
    let rows: Vec<serde_json::Value> = models
        .iter()
        .map(|m| {
            serde_json::json!({
                "bachelor": m.bachelor,
                "feasible_masters": m.feasible_masters,
                "n_estimation": m.n_estimation,
                "dropped_instruments": m.dropped_instruments,
                "converged": m.mnl.as_ref().map(|f| f.converged),
                "log_likelihood": m.mnl.as_ref().map(|f| f.log_likelihood),
                "pseudo_r2": m.mnl.as_ref().map(|f| f.pseudo_r2),
                "exclusion_chi2": m.exclusion_test.as_ref().map(|t| t.stat),
                "exclusion_df": m.exclusion_test.as_ref().map(|t| t.df),
                "exclusion_p": m.exclusion_test.as_ref().map(|t| t.p),
            })
        })
        .collect();
    serde_json::Value::Array(rows)
}

fn career_probs_csv(records: &[IndividualRecord], pm: &CareerProbabilityMatrix) -> String {
    let mut out = String::from("id");
    for c in &pm.careers {
        out.push(',');
        out.push_str(&c.key());
    }
    out.push_str(",excluded_mass\n");
    for (i, r) in records.iter().enumerate() {
        out.push_str(&r.id);
        for c in 0..pm.careers.len() {
            out.push(',');
            out.push_str(&fmt(pm.values[(i, c)]));
        }
        out.push(',');
        out.push_str(&fmt(pm.excluded_mass[i]));
        out.push('\n');
    }
    out
}

fn career_prob_summary_csv(pm: &CareerProbabilityMatrix) -> String {
    let mut out = String::from("career,observed_share,mean_p,max_p,p95_p\n");
    for (c, career) in pm.careers.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            career.key(),
            fmt(pm.observed_share[c]),
            fmt(pm.mean_per_career[c]),
            fmt(pm.max_per_career[c]),
            fmt(pm.p95_per_career[c]),
        ));
    }
    out
}

fn returns_csv(table: &ReturnsTable) -> String {
    let mut out = String::from(
        "outcome,career,alpha,alpha_se,alpha_ols,alpha_tilde,scale_used,scale_value,level\n",
    );
    for row in table.employment.iter().chain(&table.log_wage) {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            row.outcome.label(),
            row.career.key(),
            fmt(row.alpha),
            fmt(row.alpha_se),
            fmt(row.alpha_ols),
            fmt(row.alpha_tilde),
            row.scale_used.label(),
            fmt(row.scale_value),
            fmt(row.level),
        ));
    }
    out
}

fn first_stage_csv(table: &ReturnsTable) -> String {
    let mut out = String::from("career,phi,phi_se,t,r2\n");
    for row in &table.first_stage {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.career.key(),
            fmt(row.phi),
            fmt(row.phi_se),
            fmt(row.t),
            fmt(row.r2),
        ));
    }
    out
}

fn bootstrap_csv(res: &BootstrapResult) -> String {
    let mut out = String::from("outcome,career,n_draws,mean,sd,ci_lower,ci_upper\n");
    for s in &res.stats {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            s.outcome.label(),
            s.career.key(),
            s.n_draws,
            fmt(s.mean),
            fmt(s.sd),
            fmt(s.ci_lower),
            fmt(s.ci_upper),
        ));
    }
    out
}

fn simulation_csv(rep: &crate::policy::SimulationReport) -> String {
    let mut out =
        String::from("field,baseline,counterfactual,delta_pp,delta_rel,delta_rel_observed\n");
    for s in &rep.shifts {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            s.field.code(),
            fmt(s.baseline_share),
            fmt(s.counterfactual_share),
            fmt(s.delta_pp),
            fmt(s.delta_rel_predicted),
            fmt(s.delta_rel_observed),
        ));
    }
    out
}

fn simulation_by_key_csv(rep: &crate::policy::SimulationReport, key: &str) -> String {
    let mut out = String::from(
        "group,n,low_n,field,baseline,counterfactual,delta_pp,delta_rel\n",
    );
    for g in rep.subgroups.iter().filter(|g| g.key == key) {
        for s in &g.shifts {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                g.group,
                g.n,
                g.low_n,
                s.field.code(),
                fmt(s.baseline_share),
                fmt(s.counterfactual_share),
                fmt(s.delta_pp),
                fmt(s.delta_rel_predicted),
            ));
        }
    }
    out
}

fn shares_csv(shares: &BTreeMap<Career, CareerShares>) -> String {
    let mut out = String::from(
        "career,quant,tech,nonquant,b_quant,b_tech,b_nonquant,m_quant,m_tech,m_nonquant\n",
    );
    for (career, s) in shares {
        let m = s.master;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            career.key(),
            fmt(s.whole.quantitative),
            fmt(s.whole.technical),
            fmt(s.whole.non_quantitative),
            fmt(s.bachelor.quantitative),
            fmt(s.bachelor.technical),
            fmt(s.bachelor.non_quantitative),
            m.map_or("NA".into(), |v| fmt(v.quantitative)),
            m.map_or("NA".into(), |v| fmt(v.technical)),
            m.map_or("NA".into(), |v| fmt(v.non_quantitative)),
        ));
    }
    out
}

/// Run the staged pipeline. `through` limits execution to the stages up to
/// and including the named stage ("returns" runs ingest..returns).
pub fn run_pipeline(config: &PipelineConfig, through: Option<&str>) -> Result<RunSummary> {
    config.validate()?;
    let last = match through {
        None => STAGES.len() - 1,
        Some(name) => STAGES
            .iter()
            .position(|s| *s == name)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown stage '{name}'")))?,
    };
    let runs = |stage: &str| STAGES.iter().position(|s| *s == stage).unwrap() <= last;

    let mut writer = ArtifactWriter::new(&config.out_dir)?;
    let config_hash = sha256_hex(serde_json::to_string(config)?.as_bytes());
    let mut stages_run = Vec::new();

    // ingest
    let (records, validation) = match (&config.individuals, &config.synth) {
        (Some(path), _) => read_csv(path)?,
        (None, Some(synth)) => {
            let (recs, _) = generate_population(&synth.build()?)?;
            let n = recs.len();
            (
                recs,
                ValidationReport {
                    n_rows: n,
                    n_retained: n,
                    dropped_by_field: BTreeMap::new(),
                    standardization_fallback_provinces: Vec::new(),
                    invariant_violations: Vec::new(),
                },
            )
        }
        (None, None) => unreachable!("checked in validate"),
    };
    writer.write_json("validation.json", &validation)?;
    stages_run.push("ingest".to_string());
    if !runs("stage1") {
        return finish(writer, config_hash, config, stages_run, validation, None, None);
    }

    let ncfg = config.nested_config();
    let rcfg = config.returns_config();

    // stage 1
    let s1 = fit_stage1(&records, &ncfg)?;
    writer.write_json("stage1_model.json", &s1.mnl.to_json())?;
    let wald = wald_joint(&s1.mnl, &s1.instrument_selector())?;
    writer.write_json("stage1_wald.json", &wald)?;
    stages_run.push("stage1".to_string());
    if !runs("stage2") {
        return finish(writer, config_hash, config, stages_run, validation, None, None);
    }

    // stage 2
    let s2 = fit_stage2(&records, &ncfg)?;
    writer.write_json("stage2_models.json", &stage2_summary_json(&s2))?;
    stages_run.push("stage2".to_string());
    if !runs("compose") {
        return finish(writer, config_hash, config, stages_run, validation, None, None);
    }

    // compose
    let pm = compose_career_probabilities(&s1, &s2, &records, ncfg.min_count)?;
    writer.write("career_probs.csv", career_probs_csv(&records, &pm).as_bytes())?;
    writer.write(
        "career_prob_summary.csv",
        career_prob_summary_csv(&pm).as_bytes(),
    )?;
    stages_run.push("compose".to_string());
    if !runs("returns") {
        return finish(writer, config_hash, config, stages_run, validation, None, None);
    }

    // returns
    let table = estimate_returns(&records, &pm, &rcfg)?;
    writer.write("returns.csv", returns_csv(&table).as_bytes())?;
    writer.write("first_stage.csv", first_stage_csv(&table).as_bytes())?;
    stages_run.push("returns".to_string());

    // bootstrap
    let mut boot = None;
    if runs("bootstrap") {
        if let Some(section) = &config.bootstrap {
            let bcfg = BootstrapConfig {
                n_iter: section.n_iter,
                seed: section.seed,
            };
            let res = pairwise_bootstrap(&records, &ncfg, &rcfg, &bcfg)?;
            writer.write("bootstrap.csv", bootstrap_csv(&res).as_bytes())?;
            stages_run.push("bootstrap".to_string());
            boot = Some(res);
        }
    }

    // simulate
    if runs("simulate") && !config.transforms.is_empty() {
        for (i, spec) in config.transforms.iter().enumerate() {
            let transform = PolicyTransform::parse(spec)?.restricted(ncfg.n_fields);
            let rep = simulate_policy(&s1, &records, &transform)?;
            let name = if i == 0 {
                "simulation.csv".to_string()
            } else {
                format!("simulation_{}.csv", i + 1)
            };
            writer.write(&name, simulation_csv(&rep).as_bytes())?;
            if i == 0 && !config.decompose_keys.is_empty() {
                let dec = decompose_simulation(&rep, &records, &config.decompose_keys)?;
                for key in &config.decompose_keys {
                    writer.write(
                        &format!("simulation_by_{key}.csv"),
                        simulation_by_key_csv(&dec, key).as_bytes(),
                    )?;
                }
            }
        }
        stages_run.push("simulate".to_string());
    }

    // curriculum
    if runs("curriculum") {
        let bach = match &config.curriculum_bachelor {
            Some(p) => {
                let f = fs::File::open(p).map_err(|e| Error::io(p.display().to_string(), e))?;
                CurriculumMatrix::read_csv(Level::Bachelor, f)?
            }
            None => CurriculumMatrix::synthetic(Level::Bachelor, 11),
        };
        let mast = match &config.curriculum_master {
            Some(p) => {
                let f = fs::File::open(p).map_err(|e| Error::io(p.display().to_string(), e))?;
                CurriculumMatrix::read_csv(Level::Master, f)?
            }
            None => CurriculumMatrix::synthetic(Level::Master, 12),
        };
        let grouping = QuantGrouping::default();
        let mut shares = BTreeMap::new();
        for career in &pm.careers {
            shares.insert(*career, credit_shares(&bach, &mast, career, &grouping)?);
        }
        writer.write("shares.csv", shares_csv(&shares).as_bytes())?;

        let wage_tilde: Vec<(Career, f64)> = table
            .log_wage
            .iter()
            .filter(|r| r.scale_used != ScaleUsed::Dropped)
            .map(|r| (r.career, r.alpha_tilde))
            .collect();
        match quartile_composition(&wage_tilde, &shares) {
            Ok(rows) => writer.write_json("quartiles.json", &rows)?,
            Err(Error::TooFewCareers { .. }) => {}
            Err(e) => return Err(e),
        }

        let pairs = discover_reciprocal_pairs(&pm.careers);
        let wage_map: BTreeMap<Career, f64> = wage_tilde.iter().cloned().collect();
        let empl_map: BTreeMap<Career, f64> = table
            .employment
            .iter()
            .filter(|r| r.scale_used != ScaleUsed::Dropped)
            .map(|r| (r.career, r.alpha_tilde))
            .collect();
        let (contrasts, skipped) =
            symmetric_contrast(&wage_map, &empl_map, &shares, &pairs, &grouping, &mast);
        writer.write_json(
            "symmetric.json",
            &serde_json::json!({
                "pairs": contrasts,
                "skipped": skipped
                    .iter()
                    .map(|(x, y)| (x.code(), y.code()))
                    .collect::<Vec<_>>(),
            }),
        )?;

        let mut wage_v = Vec::new();
        let mut empl_v = Vec::new();
        let mut ses = Vec::new();
        for (career, w) in &wage_map {
            if let Some(e) = empl_map.get(career) {
                let sw = table
                    .lookup(Outcome::LogWage, career)
                    .map(|r| r.alpha_se)
                    .unwrap_or(1.0);
                let se = table
                    .lookup(Outcome::Employment, career)
                    .map(|r| r.alpha_se)
                    .unwrap_or(1.0);
                wage_v.push(*w);
                empl_v.push(*e);
                ses.push((sw, se));
            }
        }
        match returns_correlation(&wage_v, &empl_v, Some(&ses)) {
            Ok(corr) => writer.write_json("returns_corr.json", &corr)?,
            Err(Error::TooFewCareers { .. }) | Err(Error::ZeroVarianceReturns) => {}
            Err(e) => return Err(e),
        }
        stages_run.push("curriculum".to_string());
    }

    finish(
        writer,
        config_hash,
        config,
        stages_run,
        validation,
        Some(table),
        boot,
    )
}

#[allow(clippy::too_many_arguments)]
fn finish(
    mut writer: ArtifactWriter,
    config_hash: String,
    config: &PipelineConfig,
    stages_run: Vec<String>,
    validation: ValidationReport,
    returns: Option<ReturnsTable>,
    bootstrap: Option<BootstrapResult>,
) -> Result<RunSummary> {
    let manifest = Manifest {
        config_hash,
        seed: config.synth.as_ref().map(|s| s.seed),
        stages_run,
        files: writer.files.clone(),
    };
    writer.write_json("manifest.json", &manifest)?;
    Ok(RunSummary {
        manifest,
        validation,
        returns,
        bootstrap,
    })
}

/// Convenience accessor used by simulations/tests: field labels keyed by code.
pub fn field_label(code: u8) -> String {
    FieldOfStudy(code).label().to_string()
}

/// Shared default estimation config for a synthetic full-scale run.
pub fn default_mnl_config() -> MnlConfig {
    MnlConfig::default()
}
