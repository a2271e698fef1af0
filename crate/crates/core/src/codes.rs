//! Hierarchical clinical event codes and drug family resolution.
//!
//! Event codes follow the Read convention: the level of a code is its
//! character length (capped at 5) and the level-`k` parent is the
//! `k`-character prefix. Drug codes map onto dotted family codes whose
//! leading segments define progressively broader drug families.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Deepest level a clinical code can have.
pub const MAX_LEVEL: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct EventCode(String);

impl EventCode {
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        let trimmed = text.trim();
        if trimmed.is_empty() || trimmed.chars().any(|c| c.is_whitespace() || c == ',') {
            return Err(Error::InvalidCode(text));
        }
        Ok(EventCode(trimmed.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn level(&self) -> usize {
        self.0.chars().count().min(MAX_LEVEL)
    }

    /// The `k`-character prefix, or `None` when the code is shallower than `k`.
    pub fn prefix(&self, k: usize) -> Option<&str> {
        if k == 0 || k > self.level() {
            return None;
        }
        let end = self
            .0
            .char_indices()
            .nth(k)
            .map(|(i, _)| i)
            .unwrap_or(self.0.len());
        Some(&self.0[..end])
    }

    pub fn parent(&self, k: usize) -> Result<EventCode> {
        self.prefix(k)
            .map(|p| EventCode(p.to_string()))
            .ok_or_else(|| Error::LevelOutOfRange {
                code: self.0.clone(),
                level: k,
            })
    }
}

impl TryFrom<String> for EventCode {
    type Error = Error;

    fn try_from(value: String) -> Result<Self> {
        EventCode::new(value)
    }
}

impl From<EventCode> for String {
    fn from(code: EventCode) -> Self {
        code.0
    }
}

impl fmt::Display for EventCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// `a ≈ᵏ b`: both codes reach level `k` and share their level-`k` parent.
pub fn equivalent_at(a: &EventCode, b: &EventCode, k: usize) -> bool {
    match (a.prefix(k), b.prefix(k)) {
        (Some(pa), Some(pb)) => pa == pb,
        _ => false,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DrugCode(String);

impl DrugCode {
    pub fn new(text: impl Into<String>) -> Self {
        DrugCode(text.into().trim().to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for DrugCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// First `depth` dotted segments of a family code.
pub fn family_prefix(family: &str, depth: usize) -> Result<String> {
    let segments: Vec<&str> = family.split('.').collect();
    if depth == 0 || segments.len() < depth || segments.iter().any(|s| s.is_empty()) {
        return Err(Error::FamilyTooShallow {
            family: family.to_string(),
            depth,
        });
    }
    Ok(segments[..depth].join("."))
}

/// Segment-wise prefix test: `"02.05"` covers `"02.05.05.01"` but not `"02.050"`.
pub fn family_covers(prefix: &str, family: &str) -> bool {
    let mut fam = family.split('.');
    prefix.split('.').all(|seg| fam.next() == Some(seg))
}

/// Maps drug codes to their dotted family codes.
///
/// Without an explicit mapping file every drug code is its own family code,
/// which suits stores whose drug codes are already BNF-style dotted strings.
#[derive(Debug, Clone, Default)]
pub struct FamilyMap {
    explicit: Option<HashMap<DrugCode, String>>,
}

impl FamilyMap {
    pub fn identity() -> Self {
        FamilyMap { explicit: None }
    }

    pub fn from_pairs<I>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (DrugCode, String)>,
    {
        FamilyMap {
            explicit: Some(pairs.into_iter().collect()),
        }
    }

    /// Loads a `drugcode,family_code` CSV with a header row.
    pub fn load(path: &Path) -> Result<Self> {
        let file_name = path.display().to_string();
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| Error::parse(&file_name, 0, e.to_string()))?;
        let mut map = HashMap::new();
        for (i, record) in reader.records().enumerate() {
            let row = i + 2;
            let record = record.map_err(|e| Error::parse(&file_name, row, e.to_string()))?;
            if record.len() != 2 {
                return Err(Error::parse(&file_name, row, "expected drugcode,family_code"));
            }
            map.insert(DrugCode::new(&record[0]), record[1].to_string());
        }
        Ok(FamilyMap {
            explicit: Some(map),
        })
    }

    pub fn family_code<'a>(&'a self, drug: &'a DrugCode) -> Result<&'a str> {
        match &self.explicit {
            None => Ok(drug.as_str()),
            Some(map) => map
                .get(drug)
                .map(String::as_str)
                .ok_or_else(|| Error::UnmappedDrug(drug.to_string())),
        }
    }

    pub fn drug_family(&self, drug: &DrugCode, depth: usize) -> Result<String> {
        family_prefix(self.family_code(drug)?, depth)
    }
}
