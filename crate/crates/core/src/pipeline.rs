//! End-to-end orchestration shared by the command line and the tests.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codes::FamilyMap;
use crate::cohort::{read_reference, CohortConfig, CohortIndex, PairKey, Window};
use crate::error::{Error, Result};
use crate::evaluation::{importance_table, leave_one_group_out, Evaluation, FeatureSubset, ImportanceRow};
use crate::features::{finalize, FeatureEngine, FeatureVector};
use crate::forest::TrainConfig;
use crate::snapshot::{Snapshot, SnapshotRecord};
use crate::store::{hex_string, EventStore, RawData, StoreConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub patients: PathBuf,
    pub prescriptions: PathBuf,
    pub events: PathBuf,
    pub reference: PathBuf,
    pub family_map: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub window: [i32; 2],
    pub washout_months: u32,
    pub family_depth: usize,
    pub noise_window_days: i32,
    pub period_gap_months: u32,
    pub min_patients: usize,
    pub registration_washout_days: i64,
    pub end_censor_days: i64,
    pub observation_end: Option<NaiveDate>,
    pub n_trees: usize,
    pub mtry_grid: Vec<usize>,
    pub cv_folds: usize,
    pub min_node_size: usize,
    pub seed: u64,
    pub subsets: Vec<String>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let cohort = CohortConfig::default();
        let train = TrainConfig::default();
        PipelineConfig {
            patients: "patients.csv".into(),
            prescriptions: "prescriptions.csv".into(),
            events: "events.csv".into(),
            reference: "reference.csv".into(),
            family_map: None,
            output_dir: "out".into(),
            window: [Window::DEFAULT.lo, Window::DEFAULT.hi],
            washout_months: cohort.washout_months,
            family_depth: cohort.family_depth,
            noise_window_days: cohort.noise_window_days,
            period_gap_months: cohort.period_gap_months,
            min_patients: cohort.min_patients,
            registration_washout_days: 365,
            end_censor_days: 30,
            observation_end: None,
            n_trees: train.n_trees,
            mtry_grid: train.mtry_grid,
            cv_folds: train.cv_folds,
            min_node_size: train.min_node_size,
            seed: train.seed,
            subsets: FeatureSubset::standard().into_iter().map(|s| s.name).collect(),
        }
    }
}

impl PipelineConfig {
    /// Parses a TOML file; relative paths resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: PipelineConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.rebase(base);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Resolves relative input and output paths against `base`.
    pub fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.patients);
        fix(&mut self.prescriptions);
        fix(&mut self.events);
        fix(&mut self.reference);
        fix(&mut self.output_dir);
        if let Some(p) = &mut self.family_map {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.window()?;
        self.train_config().validate()?;
        self.subsets()?;
        if self.family_depth == 0 {
            return Err(Error::Config("family_depth must be at least 1".into()));
        }
        if self.registration_washout_days < 0 || self.end_censor_days < 0 {
            return Err(Error::Config("washout and censor days must be non-negative".into()));
        }
        Ok(())
    }

    pub fn window(&self) -> Result<Window> {
        Window::new(self.window[0], self.window[1])
    }

    pub fn cohort_config(&self) -> CohortConfig {
        CohortConfig {
            washout_months: self.washout_months,
            family_depth: self.family_depth,
            noise_window_days: self.noise_window_days,
            period_gap_months: self.period_gap_months,
            min_patients: self.min_patients,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            n_trees: self.n_trees,
            mtry_grid: self.mtry_grid.clone(),
            cv_folds: self.cv_folds,
            min_node_size: self.min_node_size,
            seed: self.seed,
        }
    }

    pub fn subsets(&self) -> Result<Vec<FeatureSubset>> {
        self.subsets.iter().map(|s| FeatureSubset::named(s)).collect()
    }

    /// Config for a dataset directory holding the standard file names.
    pub fn for_directory(dir: &Path) -> Self {
        let mut cfg = PipelineConfig::default();
        cfg.rebase(dir);
        cfg
    }

    /// Hash of every setting that changes pair statistics.
    pub fn config_hash(&self, store: &StoreConfig) -> String {
        let c = self.cohort_config();
        let family = match &self.family_map {
            None => "identity".to_string(),
            Some(p) => std::fs::read(p)
                .map(|bytes| hex_string(&Sha256::digest(&bytes)))
                .unwrap_or_else(|_| p.display().to_string()),
        };
        let text = format!(
            "window={},{};washout_months={};family_depth={};noise={};period_gap={};\
             registration_washout={};end_censor={};observation_end={};family={}",
            self.window[0],
            self.window[1],
            c.washout_months,
            c.family_depth,
            c.noise_window_days,
            c.period_gap_months,
            store.registration_washout_days,
            store.end_censor_days,
            store.observation_end,
            family
        );
        hex_string(&Sha256::digest(text.as_bytes()))[..16].to_string()
    }
}

/// Records, drug families, reference pairs and the resolved store settings.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub raw: RawData,
    pub families: FamilyMap,
    pub reference: Vec<PairKey>,
    pub store_config: StoreConfig,
}

impl Inputs {
    pub fn load(cfg: &PipelineConfig) -> Result<Inputs> {
        let raw = RawData::load(&cfg.patients, &cfg.prescriptions, &cfg.events)?;
        let reference = read_reference(&cfg.reference)?;
        Inputs::from_parts(cfg, raw, reference)
    }

    pub fn from_parts(cfg: &PipelineConfig, raw: RawData, reference: Vec<PairKey>) -> Result<Inputs> {
        let families = match &cfg.family_map {
            Some(p) => FamilyMap::load(p)?,
            None => FamilyMap::identity(),
        };
        // the end of collection comes from the full data, before any sharding
        let observation_end = cfg
            .observation_end
            .or_else(|| raw.latest_record_date())
            .unwrap_or_else(|| NaiveDate::from_ymd_opt(1970, 1, 1).expect("valid date"));
        let store_config = StoreConfig {
            registration_washout_days: cfg.registration_washout_days,
            end_censor_days: cfg.end_censor_days,
            observation_end,
        };
        store_config.validate()?;
        Ok(Inputs {
            raw,
            families,
            reference,
            store_config,
        })
    }
}

/// Statistics of every reference pair on shard `k` of `m` (`0/1` for everything).
pub fn stats_snapshot(inputs: &Inputs, cfg: &PipelineConfig, k: usize, m: usize) -> Result<Snapshot> {
    if m == 0 || k >= m {
        return Err(Error::Config(format!("invalid partition {k}/{m}")));
    }
    let raw = if m == 1 { inputs.raw.clone() } else { inputs.raw.shard(k, m) };
    let store = EventStore::ingest(&raw, inputs.store_config)?;
    let index = CohortIndex::build(&store, &inputs.families, cfg.cohort_config())?;
    let window = cfg.window()?;
    let engine = FeatureEngine::new(&index, window);
    let records = engine
        .compute_all(&inputs.reference)
        .into_iter()
        .zip(&inputs.reference)
        .map(|((stats, background), pair)| SnapshotRecord {
            pair: pair.clone(),
            stats,
            background,
        })
        .collect();
    Ok(Snapshot::new(&cfg.config_hash(&inputs.store_config), window, k, m, records))
}

/// Finalizes the eligible pairs of a complete snapshot.
pub fn features_from_snapshot(snapshot: &Snapshot, min_patients: usize) -> Result<Vec<FeatureVector>> {
    if !snapshot.is_complete() {
        return Err(Error::MergeConflict(format!(
            "snapshot covers {} of {} shards",
            snapshot.shards.len(),
            snapshot.shard_count
        )));
    }
    Ok(snapshot
        .records
        .iter()
        .filter(|r| r.stats.n_patients_with_event >= min_patients as u64)
        .map(|r| finalize(&r.pair, &r.stats, &r.background))
        .collect())
}

pub fn extract_features(inputs: &Inputs, cfg: &PipelineConfig) -> Result<Vec<FeatureVector>> {
    features_from_snapshot(&stats_snapshot(inputs, cfg, 0, 1)?, cfg.min_patients)
}

/// Leave-one-group-out reports plus the full-data importance table.
pub fn evaluate(vectors: &[FeatureVector], cfg: &PipelineConfig) -> Result<(Evaluation, Vec<ImportanceRow>)> {
    let train = cfg.train_config();
    let evaluation = leave_one_group_out(vectors, &cfg.subsets()?, &train)?;
    let importance = importance_table(vectors, &train)?;
    Ok((evaluation, importance))
}

/// Parses a `k/m` partition argument.
pub fn parse_partition(text: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("partition {text:?} is not k/m with 0 <= k < m"));
    let (k, m) = text.split_once('/').ok_or_else(bad)?;
    let k: usize = k.trim().parse().map_err(|_| bad())?;
    let m: usize = m.trim().parse().map_err(|_| bad())?;
    if m == 0 || k >= m {
        return Err(bad());
    }
    Ok((k, m))
}
