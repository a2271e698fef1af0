mod common;

use common::*;
use hillsignal::cohort::Cohort;
use hillsignal::features::{finalize, FeatureEngine};
use hillsignal::synth::{generate, GeneratorConfig};
use hillsignal::{CohortConfig, CohortIndex, EventStore, FamilyMap, RawData, Window};
use proptest::prelude::*;

fn check_invariants(raw: &RawData, pairs: &[hillsignal::PairKey], window: Window) -> Result<(), TestCaseError> {
    let store = EventStore::ingest(raw, default_store_config(raw)).unwrap();
    let index = CohortIndex::build(&store, &FamilyMap::identity(), CohortConfig::default()).unwrap();
    let totals = index.cohort_totals();
    prop_assert!(totals[2] <= totals[1] && totals[1] <= totals[0]);
    for p in 0..store.prescriptions().len() as u32 {
        let c = index.context(p);
        prop_assert!(!c.in_z || c.in_y, "Z member outside Y");
    }
    let engine = FeatureEngine::new(&index, window);
    for (pair, (stats, bg)) in pairs.iter().zip(engine.compute_all(pairs)) {
        // every field sums over cohort members, so nesting carries over to all of them
        let [x, y, z] = stats.cohorts.map(|c| c.to_array());
        for f in 0..16 {
            prop_assert!(z[f] <= y[f] && y[f] <= x[f]);
        }
        let level = pair.outcome.level();
        for c in Cohort::ALL {
            let s = stats.cohort(c);
            prop_assert!(s.n_presc_with_event <= s.n_presc);
            prop_assert!(s.n_gen4_after <= s.n_gen3_after);
            if level >= 3 {
                prop_assert!(s.n_events_after <= s.n_gen3_after);
            }
            if level >= 4 {
                prop_assert!(s.n_events_after <= s.n_gen4_after);
            }
        }
        prop_assert!(stats.n_first3_after <= stats.n_first4_after);
        prop_assert!(stats.n_positive_rechallenge_patients <= stats.n_multi_period_patients);
        let v = finalize(pair, &stats, &bg);
        prop_assert!(v.attrs.iter().all(|a| a.is_finite()), "{:?}", v.attrs);
        prop_assert!(v.attr(21) <= 1.0);
        prop_assert!((0.0..=1.0).contains(&v.attr(17)));
        for k in 1..=3 {
            prop_assert!((-1.0..=1.0).contains(&v.attr(k)));
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn micro_datasets_respect_invariants(seed in 0u64..10_000, n in 5usize..120, lo in 0i32..10, len in 0i32..60) {
        let raw = micro_dataset(seed, n);
        check_invariants(&raw, &all_pairs(), Window { lo, hi: lo + len })?;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn generated_datasets_respect_invariants(seed in 0u64..1000, rechallenge in 0.0f64..1.0, rr in 1.0f64..6.0) {
        let cfg = GeneratorConfig {
            seed,
            n_patients: 300,
            n_drug_groups: 2,
            outcomes_per_drug: 8,
            adr_fraction: 0.25,
            baseline_event_rate: 2e-3,
            relative_risk: rr,
            rechallenge_probability: rechallenge,
            ..GeneratorConfig::default()
        };
        let data = generate(&cfg).unwrap();
        check_invariants(&data.raw, &data.truth.reference(), Window::DEFAULT)?;
    }
}
