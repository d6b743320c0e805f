//! Curriculum-composition analytics: credit shares by quantitativeness,
//! quartile composition along the returns distribution, symmetric-career
//! contrasts, and the wage-employment returns correlation.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::fields::{Career, FieldOfStudy, MasterChoice, N_FIELDS};

const NF: usize = N_FIELDS as usize;

pub const BACHELOR_CREDITS: f64 = 180.0;
pub const MASTER_CREDITS: f64 = 120.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Level {
    Bachelor,
    Master,
}

impl Level {
    pub fn total_credits(self) -> f64 {
        match self {
            Level::Bachelor => BACHELOR_CREDITS,
            Level::Master => MASTER_CREDITS,
        }
    }
}

/// Average required ECTS credits: rows are degree fields, columns are the
/// ten course discipline groups.
#[derive(Debug, Clone, PartialEq)]
pub struct CurriculumMatrix {
    pub level: Level,
    pub values: [[f64; NF]; NF],
}

impl CurriculumMatrix {
    pub fn validate(&self) -> Result<()> {
        for (row, values) in self.values.iter().enumerate() {
            let field = FieldOfStudy(row as u8 + 1);
            let sum: f64 = values.iter().sum();
            if values.iter().any(|v| *v < 0.0 || !v.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "negative or non-finite credits for degree {}",
                    field.label()
                )));
            }
            if sum == 0.0 {
                return Err(Error::ZeroCreditRow(field.label().to_string()));
            }
            if sum > self.level.total_credits() + 1e-9 {
                return Err(Error::InvalidConfig(format!(
                    "degree {} exceeds {} total credits",
                    field.label(),
                    self.level.total_credits()
                )));
            }
        }
        Ok(())
    }

    pub fn row(&self, field: FieldOfStudy) -> &[f64; NF] {
        &self.values[field.code() as usize - 1]
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["degree_field".to_string()];
        header.extend((1..=NF).map(|g| format!("d{g}")));
        wtr.write_record(&header)?;
        for (row, values) in self.values.iter().enumerate() {
            let mut rec = vec![(row + 1).to_string()];
            rec.extend(values.iter().map(|v| format!("{v}")));
            wtr.write_record(&rec)?;
        }
        wtr.flush().map_err(|e| Error::io("curriculum csv", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(level: Level, r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut values = [[0.0; NF]; NF];
        let mut seen = [false; NF];
        for rec in rdr.records() {
            let rec = rec?;
            let field: usize = rec
                .get(0)
                .and_then(|s| s.parse().ok())
                .filter(|f| (1..=NF).contains(f))
                .ok_or_else(|| Error::InvalidRecord { id: "curriculum".into(), reason: "bad degree_field".into() })?;
            for g in 0..NF {
                values[field - 1][g] = rec
                    .get(g + 1)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::InvalidRecord { id: "curriculum".into(), reason: "bad credit cell".into() })?;
            }
            seen[field - 1] = true;
        }
        if !seen.iter().all(|s| *s) {
            return Err(Error::InvalidRecord { id: "curriculum".into(), reason: "missing rows".into() });
        }
        let cm = CurriculumMatrix { level, values };
        cm.validate()?;
        Ok(cm)
    }

    /// Deterministic synthetic curriculum with diagonal dominance.
    pub fn synthetic(level: Level, seed: u64) -> Self {
        let total = level.total_credits();
        let mut values = [[0.0; NF]; NF];
        for (row, slot) in values.iter_mut().enumerate() {
            let mut weights = [0.0f64; NF];
            for (g, w) in weights.iter_mut().enumerate() {
                let h = seed
                    ^ (row as u64 + 1).wrapping_mul(0x9E37_79B9)
                    ^ (g as u64 + 1).wrapping_mul(0x85EB_CA6B);
                let frac = (h.wrapping_mul(0xFF51_AFD7_ED55_8CCD) >> 11) as f64
                    / (1u64 << 53) as f64;
                *w = 0.2 + frac;
            }
            weights[row] += 4.0;
            let sum: f64 = weights.iter().sum();
            for (g, w) in weights.iter().enumerate() {
                slot[g] = (w / sum * total * 10.0).floor() / 10.0;
            }
        }
        CurriculumMatrix { level, values }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum QuantGroup {
    NonQuantitative,
    Technical,
    Quantitative,
}

/// Partition of the ten discipline groups by quantitativeness.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantGrouping {
    pub map: [QuantGroup; NF],
}

impl Default for QuantGrouping {
    fn default() -> Self {
        use QuantGroup::*;
        // quantitative: Sci.Stat., Arch.Eng., Chem.Pharm.
        // technical: AVGB, Econ.Mgmt., Health
        // non-quantitative: Educ.Psy., Law, Lit.Lang., Pol.Soc.
        QuantGrouping {
            map: [
                Technical,        // 1 AVGB
                Quantitative,     // 2 Arch.Eng.
                Quantitative,     // 3 Chem.Pharm.
                Technical,        // 4 Econ.Mgmt.
                NonQuantitative,  // 5 Educ.Psy.
                NonQuantitative,  // 6 Law
                NonQuantitative,  // 7 Lit.Lang.
                Technical,        // 8 Health
                NonQuantitative,  // 9 Pol.Soc.
                Quantitative,     // 10 Sci.Stat.
            ],
        }
    }
}

/// Shares over {quantitative, technical, non-quantitative}, summing to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShareVector {
    pub quantitative: f64,
    pub technical: f64,
    pub non_quantitative: f64,
}

impl ShareVector {
    pub fn sum(&self) -> f64 {
        self.quantitative + self.technical + self.non_quantitative
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.quantitative, self.technical, self.non_quantitative]
    }

    fn accumulate(grouping: &QuantGrouping, credits: &[f64; NF]) -> Result<ShareVector> {
        let mut v = [0.0f64; 3];
        for (g, c) in credits.iter().enumerate() {
            let slot = match grouping.map[g] {
                QuantGroup::Quantitative => 0,
                QuantGroup::Technical => 1,
                QuantGroup::NonQuantitative => 2,
            };
            v[slot] += c;
        }
        let total: f64 = v.iter().sum();
        if total <= 0.0 {
            return Err(Error::ZeroCreditRow("share accumulation".into()));
        }
        Ok(ShareVector {
            quantitative: v[0] / total,
            technical: v[1] / total,
            non_quantitative: v[2] / total,
        })
    }

    fn weighted(a: &ShareVector, wa: f64, b: &ShareVector, wb: f64) -> ShareVector {
        let w = wa + wb;
        ShareVector {
            quantitative: (a.quantitative * wa + b.quantitative * wb) / w,
            technical: (a.technical * wa + b.technical * wb) / w,
            non_quantitative: (a.non_quantitative * wa + b.non_quantitative * wb) / w,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CareerShares {
    pub career: Career,
    /// Credit-weighted combined shares (180:120 bachelor to master).
    pub whole: ShareVector,
    pub bachelor: ShareVector,
    pub master: Option<ShareVector>,
}

/// Composition of one career's curriculum. NoMaster careers use the
/// bachelor matrix only; otherwise bachelor and master levels are combined
/// with their total-credit weights.
pub fn credit_shares(
    bachelor: &CurriculumMatrix,
    master: &CurriculumMatrix,
    career: &Career,
    grouping: &QuantGrouping,
) -> Result<CareerShares> {
    bachelor.validate()?;
    let b = ShareVector::accumulate(grouping, bachelor.row(career.bachelor))?;
    match career.master {
        MasterChoice::NoMaster => Ok(CareerShares {
            career: *career,
            whole: b,
            bachelor: b,
            master: None,
        }),
        MasterChoice::Field(m) => {
            master.validate()?;
            let mv = ShareVector::accumulate(grouping, master.row(m))?;
            Ok(CareerShares {
                career: *career,
                whole: ShareVector::weighted(&b, BACHELOR_CREDITS, &mv, MASTER_CREDITS),
                bachelor: b,
                master: Some(mv),
            })
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct QuartileRow {
    pub quartile: usize,
    pub n_careers: usize,
    pub mean_return: f64,
    pub whole: ShareVector,
    pub bachelor: ShareVector,
    /// Mean over careers that have a master level.
    pub master: Option<ShareVector>,
}

fn mean_shares(items: &[ShareVector]) -> ShareVector {
    let n = items.len() as f64;
    ShareVector {
        quantitative: items.iter().map(|s| s.quantitative).sum::<f64>() / n,
        technical: items.iter().map(|s| s.technical).sum::<f64>() / n,
        non_quantitative: items.iter().map(|s| s.non_quantitative).sum::<f64>() / n,
    }
}

/// Average composition of careers by quartile of the returns distribution.
pub fn quartile_composition(
    returns: &[(Career, f64)],
    shares: &BTreeMap<Career, CareerShares>,
) -> Result<Vec<QuartileRow>> {
    let mut usable: Vec<(&Career, f64, &CareerShares)> = returns
        .iter()
        .filter_map(|(c, r)| shares.get(c).map(|s| (c, *r, s)))
        .filter(|(_, r, _)| r.is_finite())
        .collect();
    if usable.len() < 4 {
        return Err(Error::TooFewCareers {
            need: 4,
            found: usable.len(),
        });
    }
    usable.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(b.0)));
    let n = usable.len();
    let mut rows = Vec::new();
    for q in 0..4 {
        let members: Vec<&(&Career, f64, &CareerShares)> = usable
            .iter()
            .enumerate()
            .filter(|(i, _)| (4 * (i + 1)).div_ceil(n) == q + 1)
            .map(|(_, x)| x)
            .collect();
        let whole: Vec<ShareVector> = members.iter().map(|m| m.2.whole).collect();
        let bach: Vec<ShareVector> = members.iter().map(|m| m.2.bachelor).collect();
        let mast: Vec<ShareVector> = members.iter().filter_map(|m| m.2.master).collect();
        rows.push(QuartileRow {
            quartile: q + 1,
            n_careers: members.len(),
            mean_return: members.iter().map(|m| m.1).sum::<f64>() / members.len() as f64,
            whole: mean_shares(&whole),
            bachelor: mean_shares(&bach),
            master: if mast.is_empty() {
                None
            } else {
                Some(mean_shares(&mast))
            },
        });
    }
    Ok(rows)
}

/// Reciprocal career pairs: both (x, y) and (y, x) present, x != y.
/// Returned with x < y, sorted.
pub fn discover_reciprocal_pairs(careers: &[Career]) -> Vec<(FieldOfStudy, FieldOfStudy)> {
    let mut pairs = Vec::new();
    for c in careers {
        if let MasterChoice::Field(m) = c.master {
            let (x, y) = (c.bachelor.code(), m.code());
            if x < y && careers.contains(&Career::new(y, x)) {
                pairs.push((FieldOfStudy(x), FieldOfStudy(y)));
            }
        }
    }
    pairs.sort_by_key(|(x, y)| (x.code(), y.code()));
    pairs.dedup();
    pairs
}

#[derive(Debug, Clone, Serialize)]
pub struct PairContrast {
    pub x: FieldOfStudy,
    pub y: FieldOfStudy,
    /// The field whose master level is the more quantitative of the two.
    pub more_quant_master: FieldOfStudy,
    /// Return of (x,y) minus return of (y,x), per outcome when available.
    pub delta_wage: Option<f64>,
    pub delta_empl: Option<f64>,
    pub return_xy_wage: Option<f64>,
    pub return_yx_wage: Option<f64>,
    pub return_xy_empl: Option<f64>,
    pub return_yx_empl: Option<f64>,
    pub shares_xy: ShareVector,
    pub shares_yx: ShareVector,
}

fn quant_rank(
    field: FieldOfStudy,
    grouping: &QuantGrouping,
    master_cm: &CurriculumMatrix,
) -> (QuantGroup, f64) {
    let group = grouping.map[field.code() as usize - 1];
    let own_quant = ShareVector::accumulate(grouping, master_cm.row(field))
        .map(|s| s.quantitative)
        .unwrap_or(0.0);
    (group, own_quant)
}

/// Contrast every reciprocal pair. Pairs whose reciprocal lacks any
/// estimated return are skipped and reported in the second return value.
pub fn symmetric_contrast(
    wage_returns: &BTreeMap<Career, f64>,
    empl_returns: &BTreeMap<Career, f64>,
    shares: &BTreeMap<Career, CareerShares>,
    pairs: &[(FieldOfStudy, FieldOfStudy)],
    grouping: &QuantGrouping,
    master_cm: &CurriculumMatrix,
) -> (Vec<PairContrast>, Vec<(FieldOfStudy, FieldOfStudy)>) {
    let mut out = Vec::new();
    let mut skipped = Vec::new();
    for &(x, y) in pairs {
        let xy = Career::new(x.code(), y.code());
        let yx = Career::new(y.code(), x.code());
        let w_xy = wage_returns.get(&xy).copied().filter(|v| v.is_finite());
        let w_yx = wage_returns.get(&yx).copied().filter(|v| v.is_finite());
        let e_xy = empl_returns.get(&xy).copied().filter(|v| v.is_finite());
        let e_yx = empl_returns.get(&yx).copied().filter(|v| v.is_finite());
        let has_wage = w_xy.is_some() && w_yx.is_some();
        let has_empl = e_xy.is_some() && e_yx.is_some();
        let (Some(s_xy), Some(s_yx)) = (shares.get(&xy), shares.get(&yx)) else {
            skipped.push((x, y));
            continue;
        };
        if !has_wage && !has_empl {
            skipped.push((x, y));
            continue;
        }
        let more_quant_master =
            if quant_rank(y, grouping, master_cm) >= quant_rank(x, grouping, master_cm) {
                y
            } else {
                x
            };
        out.push(PairContrast {
            x,
            y,
            more_quant_master,
            delta_wage: if has_wage {
                Some(w_xy.unwrap() - w_yx.unwrap())
            } else {
                None
            },
            delta_empl: if has_empl {
                Some(e_xy.unwrap() - e_yx.unwrap())
            } else {
                None
            },
            return_xy_wage: w_xy,
            return_yx_wage: w_yx,
            return_xy_empl: e_xy,
            return_yx_empl: e_yx,
            shares_xy: s_xy.whole,
            shares_yx: s_yx.whole,
        });
    }
    (out, skipped)
}

#[derive(Debug, Clone, Serialize)]
pub struct CorrelationResult {
    pub rho: f64,
    pub p: f64,
    pub n: usize,
    /// Kish effective sample size under the precision weights.
    pub n_eff: f64,
}

/// Weighted Pearson correlation between the two returns vectors, with a
/// two-sided p-value from the t transform on effective degrees of freedom.
/// Weights are 1/(se_w^2 + se_e^2) when standard errors are given.
pub fn returns_correlation(
    wage: &[f64],
    empl: &[f64],
    ses: Option<&[(f64, f64)]>,
) -> Result<CorrelationResult> {
    let n = wage.len();
    if n < 3 || empl.len() != n {
        return Err(Error::TooFewCareers { need: 3, found: n.min(empl.len()) });
    }
    let weights: Vec<f64> = match ses {
        Some(s) => {
            assert_eq!(s.len(), n);
            s.iter().map(|(a, b)| 1.0 / (a * a + b * b)).collect()
        }
        None => vec![1.0; n],
    };
    let wsum: f64 = weights.iter().sum();
    let mean = |v: &[f64]| -> f64 {
        v.iter().zip(&weights).map(|(x, w)| x * w).sum::<f64>() / wsum
    };
    let mw = mean(wage);
    let me = mean(empl);
    let mut cov = 0.0;
    let mut vw = 0.0;
    let mut ve = 0.0;
    for i in 0..n {
        let w = weights[i];
        cov += w * (wage[i] - mw) * (empl[i] - me);
        vw += w * (wage[i] - mw).powi(2);
        ve += w * (empl[i] - me).powi(2);
    }
    let tol = |m: f64| 1e-18 * wsum * (1.0 + m * m);
    if vw <= tol(mw) || ve <= tol(me) {
        return Err(Error::ZeroVarianceReturns);
    }
    let rho = cov / (vw.sqrt() * ve.sqrt());
    let n_eff = wsum * wsum / weights.iter().map(|w| w * w).sum::<f64>();
    let df = (n_eff - 2.0).max(1.0);
    let p = if rho.abs() >= 1.0 {
        0.0
    } else {
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("valid df");
        2.0 * (1.0 - dist.cdf(t.abs()))
    };
    Ok(CorrelationResult { rho, p, n, n_eff })
}
