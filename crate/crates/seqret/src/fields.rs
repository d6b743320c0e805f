//! Fields of study, careers and the career-frequency filter.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::records::IndividualRecord;

/// Number of bachelor fields in the full choice set.
pub const N_FIELDS: u8 = 10;

/// Default short labels, indexed by code 1..=10.
pub const DEFAULT_LABELS: [&str; 10] = [
    "AVGB",
    "Arch.Eng.",
    "Chem.Pharm.",
    "Econ.Mgmt.",
    "Educ.Psy.",
    "Law",
    "Lit.Lang.",
    "Health",
    "Pol.Soc.",
    "Sci.Stat.",
];

/// Code of the humanities field, the stage-1 baseline.
pub const LIT_LANG: u8 = 7;

/// A bachelor-level field of study, coded 1..=n_fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FieldOfStudy(pub u8);

impl FieldOfStudy {
    pub fn code(self) -> u8 {
        self.0
    }

    pub fn label(self) -> &'static str {
        DEFAULT_LABELS
            .get(self.0 as usize - 1)
            .copied()
            .unwrap_or("?")
    }
}

/// Master-stage alternative: a field or the outside option of no master's.
/// `NoMaster` is coded 0 so that (j, NoMaster) sorts first within a bachelor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MasterChoice {
    NoMaster,
    Field(FieldOfStudy),
}

impl MasterChoice {
    pub fn code(self) -> u8 {
        match self {
            MasterChoice::NoMaster => 0,
            MasterChoice::Field(f) => f.code(),
        }
    }

    pub fn from_code(code: u8) -> Self {
        if code == 0 {
            MasterChoice::NoMaster
        } else {
            MasterChoice::Field(FieldOfStudy(code))
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            MasterChoice::NoMaster => "NoMaster",
            MasterChoice::Field(f) => f.label(),
        }
    }
}

/// An ordered (bachelor, master) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Career {
    pub bachelor: FieldOfStudy,
    pub master: MasterChoice,
}

impl Career {
    pub fn new(bachelor: u8, master: u8) -> Self {
        Career {
            bachelor: FieldOfStudy(bachelor),
            master: MasterChoice::from_code(master),
        }
    }

    pub fn label(&self) -> String {
        format!("({},{})", self.bachelor.label(), self.master.label())
    }

    /// Stable machine-readable name, e.g. `c4_0` for (Econ.Mgmt., NoMaster).
    pub fn key(&self) -> String {
        format!("c{}_{}", self.bachelor.code(), self.master.code())
    }

    /// Inverse of [`Career::key`].
    pub fn parse_key(key: &str) -> Result<Self> {
        let parse = || -> Option<Career> {
            let rest = key.strip_prefix('c')?;
            let (j, m) = rest.split_once('_')?;
            Some(Career::new(j.parse().ok()?, m.parse().ok()?))
        };
        parse().ok_or_else(|| Error::UnknownField(key.to_string()))
    }
}

/// Observed career frequencies.
pub fn career_counts(records: &[IndividualRecord]) -> BTreeMap<Career, usize> {
    let mut counts = BTreeMap::new();
    for r in records {
        *counts.entry(r.career()).or_insert(0) += 1;
    }
    counts
}

/// Careers with observed frequency >= `min_count`, sorted by
/// (bachelor code, master code) with NoMaster first.
pub fn filter_careers(records: &[IndividualRecord], min_count: usize) -> Vec<Career> {
    career_counts(records)
        .into_iter()
        .filter(|(_, n)| *n >= min_count)
        .map(|(c, _)| c)
        .collect()
}
