//! Versioned text snapshots of pair statistics.
//!
//! A snapshot holds the statistics computed on one or more patient shards.
//! Snapshots from disjoint shards of the same configuration merge into the
//! statistics of their union.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::codes::EventCode;
use crate::cohort::{Label, PairKey, Window};
use crate::error::{Error, Result};
use crate::features::{BackgroundStats, CohortStats, PairStats};

pub const MAGIC: &str = "# hillsignal-stats v1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SnapshotRecord {
    pub pair: PairKey,
    pub stats: PairStats,
    pub background: BackgroundStats,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snapshot {
    pub config_hash: String,
    pub window: Window,
    /// Shard indexes covered by this snapshot.
    pub shards: Vec<usize>,
    pub shard_count: usize,
    pub records: Vec<SnapshotRecord>,
}

const COHORT_NAMES: [&str; 3] = ["X", "Y", "Z"];

fn columns() -> Vec<String> {
    let mut cols: Vec<String> = ["drug_key", "outcome_code", "label", "group", "outcome_level"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for c in COHORT_NAMES {
        for f in CohortStats::FIELDS {
            cols.push(format!("{c}_{f}"));
        }
    }
    for f in [
        "n_first3_after",
        "n_first4_after",
        "n_multi_period_patients",
        "n_positive_rechallenge_patients",
        "n_patients_with_event",
    ] {
        cols.push(f.to_string());
    }
    for c in COHORT_NAMES {
        cols.push(format!("{c}_n_presc_other"));
        cols.push(format!("{c}_n_presc_other_with_event"));
    }
    cols
}

impl Snapshot {
    pub fn new(config_hash: &str, window: Window, shard: usize, shard_count: usize, mut records: Vec<SnapshotRecord>) -> Self {
        records.sort_by(|a, b| {
            (&a.pair.drug_key, &a.pair.outcome).cmp(&(&b.pair.drug_key, &b.pair.outcome))
        });
        Snapshot {
            config_hash: config_hash.to_string(),
            window,
            shards: vec![shard],
            shard_count,
            records,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let shard_list: Vec<String> = self.shards.iter().map(|s| s.to_string()).collect();
        let io = |e| Error::io(path, e);
        writeln!(w, "{MAGIC}").map_err(io)?;
        writeln!(w, "# config_hash={}", self.config_hash).map_err(io)?;
        writeln!(w, "# window={},{}", self.window.lo, self.window.hi).map_err(io)?;
        writeln!(w, "# shard={}/{}", shard_list.join("+"), self.shard_count).map_err(io)?;
        writeln!(w, "{}", columns().join(",")).map_err(io)?;
        for r in &self.records {
            let mut fields: Vec<String> = vec![
                r.pair.drug_key.clone(),
                r.pair.outcome.to_string(),
                r.pair.label.as_str().to_string(),
                r.pair.group.clone(),
                r.stats.outcome_level.to_string(),
            ];
            for c in &r.stats.cohorts {
                fields.extend(c.to_array().iter().map(u64::to_string));
            }
            for v in [
                r.stats.n_first3_after,
                r.stats.n_first4_after,
                r.stats.n_multi_period_patients,
                r.stats.n_positive_rechallenge_patients,
                r.stats.n_patients_with_event,
            ] {
                fields.push(v.to_string());
            }
            for c in 0..3 {
                fields.push(r.background.n_presc_other[c].to_string());
                fields.push(r.background.n_presc_other_with_event[c].to_string());
            }
            writeln!(w, "{}", fields.join(",")).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn read(path: &Path) -> Result<Snapshot> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let lines: Vec<String> = BufReader::new(file)
            .lines()
            .collect::<std::io::Result<_>>()
            .map_err(|e| Error::io(path, e))?;
        let bad = |m: &str| Error::format("stats snapshot", format!("{}: {m}", path.display()));
        if lines.len() < 5 || lines[0] != MAGIC {
            return Err(bad("missing version header"));
        }
        let header_value = |line: &str, key: &str| -> Result<String> {
            line.strip_prefix(&format!("# {key}="))
                .map(str::to_string)
                .ok_or_else(|| bad(&format!("expected {key} header")))
        };
        let config_hash = header_value(&lines[1], "config_hash")?;
        let window_text = header_value(&lines[2], "window")?;
        let (lo, hi) = window_text
            .split_once(',')
            .and_then(|(a, b)| Some((a.parse().ok()?, b.parse().ok()?)))
            .ok_or_else(|| bad("bad window"))?;
        let window = Window::new(lo, hi)?;
        let shard_text = header_value(&lines[3], "shard")?;
        let (list, count) = shard_text.split_once('/').ok_or_else(|| bad("bad shard"))?;
        let shard_count: usize = count.parse().map_err(|_| bad("bad shard count"))?;
        let shards: Vec<usize> = list
            .split('+')
            .map(|s| s.parse().map_err(|_| bad("bad shard index")))
            .collect::<Result<_>>()?;
        if lines[4] != columns().join(",") {
            return Err(bad("unexpected columns"));
        }
        let width = columns().len();
        let mut records = Vec::new();
        for (i, line) in lines[5..].iter().enumerate() {
            if line.is_empty() {
                continue;
            }
            let row = i + 6;
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != width {
                return Err(Error::parse("stats snapshot", row, "wrong field count"));
            }
            let num = |k: usize| -> Result<u64> {
                f[k].parse()
                    .map_err(|_| Error::parse("stats snapshot", row, format!("bad count {:?}", f[k])))
            };
            let outcome = EventCode::new(f[1])?;
            let label = Label::parse(f[2]).ok_or_else(|| Error::parse("stats snapshot", row, "bad label"))?;
            let mut cohorts = [CohortStats::default(); 3];
            for (c, cohort) in cohorts.iter_mut().enumerate() {
                let mut a = [0u64; 16];
                for (j, v) in a.iter_mut().enumerate() {
                    *v = num(5 + 16 * c + j)?;
                }
                *cohort = CohortStats::from_array(a);
            }
            let base = 5 + 48;
            let stats = PairStats {
                drug_key: f[0].to_string(),
                outcome: outcome.clone(),
                window,
                cohorts,
                n_first3_after: num(base)?,
                n_first4_after: num(base + 1)?,
                n_multi_period_patients: num(base + 2)?,
                n_positive_rechallenge_patients: num(base + 3)?,
                n_patients_with_event: num(base + 4)?,
                outcome_level: num(4)? as u8,
            };
            let mut background = BackgroundStats::default();
            for c in 0..3 {
                background.n_presc_other[c] = num(base + 5 + 2 * c)?;
                background.n_presc_other_with_event[c] = num(base + 6 + 2 * c)?;
            }
            records.push(SnapshotRecord {
                pair: PairKey {
                    drug_key: f[0].to_string(),
                    outcome,
                    label,
                    group: f[3].to_string(),
                },
                stats,
                background,
            });
        }
        Ok(Snapshot {
            config_hash,
            window,
            shards,
            shard_count,
            records,
        })
    }

    /// Combines snapshots of disjoint shards computed under the same configuration.
    pub fn merge(parts: &[Snapshot]) -> Result<Snapshot> {
        let first = parts
            .first()
            .ok_or_else(|| Error::MergeConflict("nothing to merge".into()))?;
        let mut shards = Vec::new();
        let mut by_key: BTreeMap<(String, EventCode), SnapshotRecord> = BTreeMap::new();
        for part in parts {
            if part.config_hash != first.config_hash {
                return Err(Error::MergeConflict(format!(
                    "config hash {} differs from {}",
                    part.config_hash, first.config_hash
                )));
            }
            if part.window != first.window {
                return Err(Error::MergeConflict("snapshots use different windows".into()));
            }
            if part.shard_count != first.shard_count {
                return Err(Error::MergeConflict("snapshots use different shard counts".into()));
            }
            for &s in &part.shards {
                if shards.contains(&s) {
                    return Err(Error::MergeConflict(format!("shard {s} appears twice")));
                }
                shards.push(s);
            }
            for r in &part.records {
                let key = (r.pair.drug_key.clone(), r.pair.outcome.clone());
                match by_key.get_mut(&key) {
                    None => {
                        by_key.insert(key, r.clone());
                    }
                    Some(existing) => {
                        if existing.pair != r.pair {
                            return Err(Error::MergeConflict(format!(
                                "pair ({}, {}) has conflicting labels or groups",
                                key.0, key.1
                            )));
                        }
                        existing.stats = existing.stats.merge(&r.stats)?;
                        existing.background = existing.background.merge(&r.background);
                    }
                }
            }
        }
        shards.sort_unstable();
        Ok(Snapshot {
            config_hash: first.config_hash.clone(),
            window: first.window,
            shards,
            shard_count: first.shard_count,
            records: by_key.into_values().collect(),
        })
    }

    pub fn is_complete(&self) -> bool {
        self.shards.len() == self.shard_count
    }
}
