mod common;

use common::*;
use hillsignal::features::write_features;
use hillsignal::pipeline::{extract_features, features_from_snapshot, stats_snapshot, Inputs, PipelineConfig};
use hillsignal::snapshot::Snapshot;
use hillsignal::Error;

fn inputs(seed: u64, n: usize) -> (PipelineConfig, Inputs) {
    let cfg = PipelineConfig::default();
    let inputs = Inputs::from_parts(&cfg, micro_dataset(seed, n), all_pairs()).unwrap();
    (cfg, inputs)
}

fn csv_bytes(vectors: &[hillsignal::features::FeatureVector]) -> Vec<u8> {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("features.csv");
    write_features(&path, vectors).unwrap();
    std::fs::read(path).unwrap()
}

#[test]
fn sharded_merge_equals_whole() {
    let (cfg, inputs) = inputs(21, 200);
    let whole = csv_bytes(&extract_features(&inputs, &cfg).unwrap());
    for m in 2..=8 {
        let parts: Vec<Snapshot> = (0..m).map(|k| stats_snapshot(&inputs, &cfg, k, m).unwrap()).collect();
        let merged = Snapshot::merge(&parts).unwrap();
        let sharded = csv_bytes(&features_from_snapshot(&merged, cfg.min_patients).unwrap());
        assert_eq!(sharded, whole, "{m} shards");
    }
}

#[test]
fn merge_survives_files_and_order() {
    let (cfg, inputs) = inputs(22, 150);
    let dir = tempfile::tempdir().unwrap();
    let mut parts = Vec::new();
    for k in 0..3 {
        let path = dir.path().join(format!("s{k}.stats"));
        stats_snapshot(&inputs, &cfg, k, 3).unwrap().write(&path).unwrap();
        parts.push(Snapshot::read(&path).unwrap());
    }
    let forward = Snapshot::merge(&parts).unwrap();
    parts.reverse();
    assert_eq!(Snapshot::merge(&parts).unwrap(), forward);
    let once = Snapshot::merge(std::slice::from_ref(&forward)).unwrap();
    assert_eq!(once, forward);
}

#[test]
fn incomplete_or_mismatched_merges_fail() {
    let (cfg, inputs) = inputs(23, 60);
    let a = stats_snapshot(&inputs, &cfg, 0, 2).unwrap();
    let partial = Snapshot::merge(std::slice::from_ref(&a)).unwrap();
    assert!(matches!(features_from_snapshot(&partial, 3), Err(Error::MergeConflict(_))));

    let wide_cfg = PipelineConfig { window: [1, 60], ..cfg.clone() };
    let b = stats_snapshot(&inputs, &wide_cfg, 1, 2).unwrap();
    assert!(matches!(Snapshot::merge(&[a.clone(), b]), Err(Error::MergeConflict(_))));

    let washout_cfg = PipelineConfig { washout_months: 6, ..cfg.clone() };
    let c = stats_snapshot(&inputs, &washout_cfg, 1, 2).unwrap();
    assert!(matches!(Snapshot::merge(&[a, c]), Err(Error::MergeConflict(_))));
}

#[test]
fn eligibility_scan() {
    // every pair in the matrix has enough exposed patients, and every pair with enough is present
    for seed in 30..34 {
        let (cfg, inputs) = inputs(seed, 150);
        let vectors = extract_features(&inputs, &cfg).unwrap();
        let end = inputs.store_config.observation_end;
        let params = OracleParams::default();
        for pair in &inputs.reference {
            let o = oracle(&inputs.raw, end, &params, &pair.drug_key, pair.outcome.as_str());
            let present = vectors
                .iter()
                .any(|v| v.pair.drug_key == pair.drug_key && v.pair.outcome == pair.outcome);
            assert_eq!(present, o.n_patients_with_event >= 3, "{pair:?}: {}", o.n_patients_with_event);
        }
    }
}

#[test]
fn empty_events_give_empty_matrix() {
    let mut raw = micro_dataset(40, 50);
    raw.events.clear();
    let cfg = PipelineConfig::default();
    let inputs = Inputs::from_parts(&cfg, raw, all_pairs()).unwrap();
    assert!(extract_features(&inputs, &cfg).unwrap().is_empty());
}

#[test]
fn observation_end_is_fixed_before_sharding() {
    let (cfg, inputs) = inputs(41, 40);
    let end = inputs.store_config.observation_end;
    for k in 0..4 {
        let shard = inputs.raw.shard(k, 4);
        if let Some(latest) = shard.latest_record_date() {
            assert!(latest <= end);
        }
    }
    let a = stats_snapshot(&inputs, &cfg, 0, 4).unwrap();
    let b = stats_snapshot(&inputs, &cfg, 1, 4).unwrap();
    assert_eq!(a.config_hash, b.config_hash);
}
