//! Group-wise z-scoring with a global-moment fallback.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

pub struct Standardized {
    pub values: Vec<Option<f64>>,
    /// Groups that fell back to global moments (fewer than 2 members or zero
    /// within-group variance).
    pub fallback_groups: Vec<String>,
}

/// Population mean and sd (divide by n) of a slice.
pub fn standardize_global(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Z-score `values` within each group, using population sd. Groups with fewer
/// than 2 non-missing members or zero variance fall back to the global
/// mean/sd; if the global sd is also zero the output is centered zeros.
/// Missing inputs propagate as missing.
pub fn standardize_by_group(
    values: &[Option<f64>],
    groups: &[impl AsRef<str>],
) -> Result<Standardized> {
    assert_eq!(values.len(), groups.len());
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(Error::EmptyStandardizationInput);
    }
    let (gmean, gsd) = standardize_global(&present);

    let mut by_group: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (v, g) in values.iter().zip(groups) {
        if let Some(v) = v {
            by_group.entry(g.as_ref()).or_default().push(*v);
        }
    }
    let mut moments: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
    let mut fallback = Vec::new();
    for (g, vs) in &by_group {
        let (m, s) = standardize_global(vs);
        if vs.len() < 2 || s == 0.0 {
            fallback.push((*g).to_string());
            moments.insert(g, (gmean, gsd));
        } else {
            moments.insert(g, (m, s));
        }
    }

    let out = values
        .iter()
        .zip(groups)
        .map(|(v, g)| {
            v.map(|v| {
                let (m, s) = moments[g.as_ref()];
                if s > 0.0 {
                    (v - m) / s
                } else {
                    0.0
                }
            })
        })
        .collect();
    Ok(Standardized {
        values: out,
        fallback_groups: fallback,
    })
}
