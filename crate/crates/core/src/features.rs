//! Mergeable sufficient statistics per drug-outcome pair and the 27
//! attributes derived from them.
//!
//! Every field of [`PairStats`] is an integer so that statistics computed on
//! disjoint patient partitions add up exactly to the statistics of the union.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codes::{equivalent_at, EventCode};
use crate::cohort::{
    distinct_periods, Cohort, CohortIndex, DrugContexts, Label, PairKey, PrescriptionContext,
    Window,
};
use crate::error::{Error, Result};
use crate::store::{Day, EventStore, PatientIdx, StoredEvent};

pub const N_ATTRS: usize = 27;

/// Counts and sums for one cohort.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CohortStats {
    pub n_presc: u64,
    pub n_presc_with_event: u64,
    pub n_events_after: u64,
    pub n_events_before: u64,
    pub sum_age: u64,
    pub sum_age_event: u64,
    pub n_male: u64,
    pub n_male_event: u64,
    /// Fixed-point dosage sums, see [`crate::store::DOSE_SCALE`].
    pub sum_dose: u64,
    pub sum_dose_event: u64,
    pub sum_noise: u64,
    pub sum_noise_event: u64,
    pub n_gen4_after: u64,
    pub n_gen4_before: u64,
    pub n_gen3_after: u64,
    pub n_gen3_before: u64,
}

impl CohortStats {
    pub const FIELDS: [&'static str; 16] = [
        "n_presc",
        "n_presc_with_event",
        "n_events_after",
        "n_events_before",
        "sum_age",
        "sum_age_event",
        "n_male",
        "n_male_event",
        "sum_dose",
        "sum_dose_event",
        "sum_noise",
        "sum_noise_event",
        "n_gen4_after",
        "n_gen4_before",
        "n_gen3_after",
        "n_gen3_before",
    ];

    pub fn to_array(&self) -> [u64; 16] {
        [
            self.n_presc,
            self.n_presc_with_event,
            self.n_events_after,
            self.n_events_before,
            self.sum_age,
            self.sum_age_event,
            self.n_male,
            self.n_male_event,
            self.sum_dose,
            self.sum_dose_event,
            self.sum_noise,
            self.sum_noise_event,
            self.n_gen4_after,
            self.n_gen4_before,
            self.n_gen3_after,
            self.n_gen3_before,
        ]
    }

    pub fn from_array(a: [u64; 16]) -> Self {
        CohortStats {
            n_presc: a[0],
            n_presc_with_event: a[1],
            n_events_after: a[2],
            n_events_before: a[3],
            sum_age: a[4],
            sum_age_event: a[5],
            n_male: a[6],
            n_male_event: a[7],
            sum_dose: a[8],
            sum_dose_event: a[9],
            sum_noise: a[10],
            sum_noise_event: a[11],
            n_gen4_after: a[12],
            n_gen4_before: a[13],
            n_gen3_after: a[14],
            n_gen3_before: a[15],
        }
    }

    fn add(&mut self, other: &CohortStats) {
        let mut a = self.to_array();
        for (x, y) in a.iter_mut().zip(other.to_array()) {
            *x += y;
        }
        *self = CohortStats::from_array(a);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PairStats {
    pub drug_key: String,
    pub outcome: EventCode,
    pub window: Window,
    pub cohorts: [CohortStats; 3],
    pub n_first3_after: u64,
    pub n_first4_after: u64,
    pub n_multi_period_patients: u64,
    pub n_positive_rechallenge_patients: u64,
    /// Distinct patients with an outcome in the window after any prescription.
    pub n_patients_with_event: u64,
    pub outcome_level: u8,
}

impl PairStats {
    pub fn empty(drug_key: &str, outcome: &EventCode, window: Window) -> Self {
        PairStats {
            drug_key: drug_key.to_string(),
            outcome: outcome.clone(),
            window,
            cohorts: Default::default(),
            n_first3_after: 0,
            n_first4_after: 0,
            n_multi_period_patients: 0,
            n_positive_rechallenge_patients: 0,
            n_patients_with_event: 0,
            outcome_level: outcome.level() as u8,
        }
    }

    pub fn cohort(&self, c: Cohort) -> &CohortStats {
        &self.cohorts[c.index()]
    }

    pub fn merge(&self, other: &PairStats) -> Result<PairStats> {
        if self.drug_key != other.drug_key || self.outcome != other.outcome {
            return Err(Error::MergeConflict(format!(
                "pair ({}, {}) cannot merge with ({}, {})",
                self.drug_key, self.outcome, other.drug_key, other.outcome
            )));
        }
        if self.window != other.window {
            return Err(Error::MergeConflict(format!(
                "pair ({}, {}) computed with different windows",
                self.drug_key, self.outcome
            )));
        }
        let mut out = self.clone();
        for (a, b) in out.cohorts.iter_mut().zip(&other.cohorts) {
            a.add(b);
        }
        out.n_first3_after += other.n_first3_after;
        out.n_first4_after += other.n_first4_after;
        out.n_multi_period_patients += other.n_multi_period_patients;
        out.n_positive_rechallenge_patients += other.n_positive_rechallenge_patients;
        out.n_patients_with_event += other.n_patients_with_event;
        Ok(out)
    }
}

/// Prescriptions of every drug outside the drug set, per cohort.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BackgroundStats {
    pub n_presc_other: [u64; 3],
    pub n_presc_other_with_event: [u64; 3],
}

impl BackgroundStats {
    pub fn merge(&self, other: &BackgroundStats) -> BackgroundStats {
        let mut out = *self;
        for c in 0..3 {
            out.n_presc_other[c] += other.n_presc_other[c];
            out.n_presc_other_with_event[c] += other.n_presc_other_with_event[c];
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub pair: PairKey,
    pub attrs: [f64; N_ATTRS],
}

impl FeatureVector {
    /// Attribute `k` using 1-based numbering.
    pub fn attr(&self, k: usize) -> f64 {
        self.attrs[k - 1]
    }
}

fn risk(with_event: u64, total: u64) -> f64 {
    if total == 0 {
        0.0
    } else {
        with_event as f64 / total as f64
    }
}

/// Mean over the event subset divided by the mean over everything, 1.0 when undefined.
fn mean_ratio(sum_event: u64, n_event: u64, sum_all: u64, n_all: u64) -> f64 {
    if n_event == 0 || n_all == 0 || sum_all == 0 {
        return 1.0;
    }
    (sum_event as f64 / n_event as f64) / (sum_all as f64 / n_all as f64)
}

fn haldane(num: u64, den: u64) -> f64 {
    (num as f64 + 0.5) / (den as f64 + 0.5)
}

fn per_cohort(f: impl Fn(&CohortStats) -> f64, stats: &PairStats) -> [f64; 3] {
    [
        f(stats.cohort(Cohort::X)),
        f(stats.cohort(Cohort::Y)),
        f(stats.cohort(Cohort::Z)),
    ]
}

pub fn strength(stats: &PairStats, background: &BackgroundStats) -> [f64; 3] {
    let mut out = [0.0; 3];
    for c in Cohort::ALL {
        let s = stats.cohort(c);
        let i = c.index();
        out[i] = risk(s.n_presc_with_event, s.n_presc)
            - risk(
                background.n_presc_other_with_event[i],
                background.n_presc_other[i],
            );
    }
    out
}

pub fn specificity_age(stats: &PairStats) -> [f64; 3] {
    per_cohort(
        |s| mean_ratio(s.sum_age_event, s.n_presc_with_event, s.sum_age, s.n_presc),
        stats,
    )
}

pub fn specificity_gender(stats: &PairStats) -> [f64; 3] {
    per_cohort(
        |s| mean_ratio(s.n_male_event, s.n_presc_with_event, s.n_male, s.n_presc),
        stats,
    )
}

pub fn specificity_level(outcome: &EventCode) -> f64 {
    outcome.level() as f64
}

pub fn temporality(stats: &PairStats) -> [f64; 3] {
    per_cohort(|s| haldane(s.n_events_after, s.n_events_before), stats)
}

pub fn biological_gradient(stats: &PairStats) -> [f64; 3] {
    per_cohort(
        |s| mean_ratio(s.sum_dose_event, s.n_presc_with_event, s.sum_dose, s.n_presc),
        stats,
    )
}

pub fn experimentation(stats: &PairStats) -> f64 {
    if stats.n_multi_period_patients == 0 {
        0.0
    } else {
        stats.n_positive_rechallenge_patients as f64 / stats.n_multi_period_patients as f64
    }
}

pub fn noise_ratio(stats: &PairStats) -> [f64; 3] {
    per_cohort(
        |s| mean_ratio(s.sum_noise_event, s.n_presc_with_event, s.sum_noise, s.n_presc),
        stats,
    )
}

pub fn hier_first_ratio(stats: &PairStats) -> f64 {
    haldane(stats.n_first3_after, stats.n_first4_after)
}

pub fn hier_temporality(stats: &PairStats) -> [f64; 6] {
    let mut out = [0.0; 6];
    for c in Cohort::ALL {
        let s = stats.cohort(c);
        out[2 * c.index()] = haldane(s.n_gen4_after, s.n_gen4_before);
        out[2 * c.index() + 1] = haldane(s.n_gen3_after, s.n_gen3_before);
    }
    out
}

pub fn finalize(pair: &PairKey, stats: &PairStats, background: &BackgroundStats) -> FeatureVector {
    let mut attrs = [0.0; N_ATTRS];
    attrs[0..3].copy_from_slice(&strength(stats, background));
    attrs[3..6].copy_from_slice(&specificity_age(stats));
    attrs[6..9].copy_from_slice(&specificity_gender(stats));
    attrs[9] = specificity_level(&stats.outcome);
    attrs[10..13].copy_from_slice(&temporality(stats));
    attrs[13..16].copy_from_slice(&biological_gradient(stats));
    attrs[16] = experimentation(stats);
    attrs[17..20].copy_from_slice(&noise_ratio(stats));
    attrs[20] = hier_first_ratio(stats);
    attrs[21..27].copy_from_slice(&hier_temporality(stats));
    FeatureVector {
        pair: pair.clone(),
        attrs,
    }
}

/// Outcome-specific counts over every prescription in the store.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OutcomeTotals {
    pub with_event: [u64; 3],
}

/// One occurrence of a class event for the current patient.
#[derive(Debug, Clone, Copy)]
struct ClassEvent {
    day: Day,
    exact: bool,
    is4: bool,
    is3: bool,
}

/// Computes statistics against one store and window.
#[derive(Debug, Clone, Copy)]
pub struct FeatureEngine<'a, 's> {
    index: &'a CohortIndex<'s>,
    window: Window,
}

impl<'a, 's> FeatureEngine<'a, 's> {
    pub fn new(index: &'a CohortIndex<'s>, window: Window) -> Self {
        FeatureEngine { index, window }
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn index(&self) -> &'a CohortIndex<'s> {
        self.index
    }

    fn store(&self) -> &'s EventStore {
        self.index.store()
    }

    /// Store event indexes that may matter for `outcome`: the level-3 class or the code itself.
    fn class_list(&self, outcome: &EventCode) -> &'s [u32] {
        let store = self.store();
        match outcome.prefix(3) {
            Some(p) => store.events_with_prefix3(p),
            None => match store.code_id(outcome) {
                Some(id) => store.events_of(id),
                None => &[],
            },
        }
    }

    fn patient_slice(&self, list: &'s [u32], patient: PatientIdx) -> &'s [u32] {
        let events: &[StoredEvent] = self.store().events();
        let lo = list.partition_point(|&i| events[i as usize].patient < patient);
        let hi = lo + list[lo..].partition_point(|&i| events[i as usize].patient == patient);
        &list[lo..hi]
    }

    pub fn pair_stats(&self, contexts: &DrugContexts, outcome: &EventCode) -> PairStats {
        let store = self.store();
        let window = self.window;
        let before = window.mirrored();
        let gap = self.index.period_gap_days();
        let mut stats = PairStats::empty(&contexts.set.key, outcome, window);
        let list = self.class_list(outcome);
        let exact_id = store.code_id(outcome);
        let level = outcome.level();
        let mut class: Vec<ClassEvent> = Vec::new();

        for (patient, presc) in contexts.patient_contexts() {
            class.clear();
            for &i in self.patient_slice(list, patient) {
                let e = &store.events()[i as usize];
                let code = store.code(e.code);
                class.push(ClassEvent {
                    day: e.day,
                    exact: Some(e.code) == exact_id,
                    is4: level >= 4 && equivalent_at(code, outcome, 4),
                    is3: level >= 3,
                });
            }
            let earliest3 = class.iter().filter(|e| e.is3).map(|e| e.day).min();
            let earliest4 = class.iter().filter(|e| e.is4).map(|e| e.day).min();

            let mut any_after = false;
            let mut any_before = false;
            let mut after_flags = Vec::with_capacity(presc.len());
            for c in presc {
                let mut k = WindowCounts::default();
                for e in &class {
                    if window.contains(c.day, e.day) {
                        k.after.add(e);
                        if e.exact {
                            if earliest3.is_none_or(|d| d >= e.day) {
                                stats.n_first3_after += 1;
                            }
                            if earliest4.is_none_or(|d| d >= e.day) {
                                stats.n_first4_after += 1;
                            }
                        }
                    }
                    if before.contains(c.day, e.day) {
                        k.before.add(e);
                    }
                }
                any_after |= k.after.exact > 0;
                any_before |= k.before.exact > 0;
                after_flags.push(k.after.exact > 0);
                for cohort in Cohort::ALL {
                    if c.in_cohort(cohort) {
                        accumulate(&mut stats.cohorts[cohort.index()], c, &k);
                    }
                }
            }
            stats.n_patients_with_event += any_after as u64;

            let periods = distinct_periods(presc.iter().map(|c| c.day), gap);
            if periods.len() >= 2 {
                stats.n_multi_period_patients += 1;
                // the greedy pick at each period day is the first context on that day
                let mut positive = 0;
                for day in &periods {
                    let i = presc.partition_point(|c| c.day < *day);
                    positive += after_flags[i] as usize;
                }
                if positive >= 2 && !any_before {
                    stats.n_positive_rechallenge_patients += 1;
                }
            }
        }
        stats
    }

    /// Per-cohort number of prescriptions of any drug with an exact outcome in the window.
    pub fn outcome_totals(&self, outcome: &EventCode) -> OutcomeTotals {
        let store = self.store();
        let mut totals = OutcomeTotals::default();
        let Some(id) = store.code_id(outcome) else {
            return totals;
        };
        let occurrences = store.events_of(id);
        let mut start = 0;
        while start < occurrences.len() {
            let patient = store.events()[occurrences[start] as usize].patient;
            let mut end = start;
            while end < occurrences.len() && store.events()[occurrences[end] as usize].patient == patient {
                end += 1;
            }
            let days: Vec<Day> = occurrences[start..end]
                .iter()
                .map(|&i| store.events()[i as usize].day)
                .collect();
            let range = store.patient_prescription_range(patient);
            for p in range {
                let c = self.index.context(p as u32);
                let lo = days.partition_point(|&d| d < c.day + self.window.lo);
                if lo < days.len() && days[lo] <= c.day + self.window.hi {
                    for cohort in Cohort::ALL {
                        if c.in_cohort(cohort) {
                            totals.with_event[cohort.index()] += 1;
                        }
                    }
                }
            }
            start = end;
        }
        totals
    }

    pub fn background(&self, totals: &OutcomeTotals, stats: &PairStats) -> BackgroundStats {
        let all = self.index.cohort_totals();
        let mut out = BackgroundStats::default();
        for c in 0..3 {
            out.n_presc_other[c] = all[c] - stats.cohorts[c].n_presc;
            out.n_presc_other_with_event[c] =
                totals.with_event[c] - stats.cohorts[c].n_presc_with_event;
        }
        out
    }

    /// Statistics for a single pair without any caching.
    pub fn compute_pair_stats(&self, drug_key: &str, outcome: &EventCode) -> (PairStats, BackgroundStats) {
        let contexts = self.index.build_contexts(&self.index.resolve(drug_key));
        let stats = self.pair_stats(&contexts, outcome);
        let background = self.background(&self.outcome_totals(outcome), &stats);
        (stats, background)
    }

    /// Statistics for many pairs, sharing drug contexts and outcome totals.
    pub fn compute_all(&self, pairs: &[PairKey]) -> Vec<(PairStats, BackgroundStats)> {
        use rayon::prelude::*;
        let mut keys: Vec<&str> = pairs.iter().map(|p| p.drug_key.as_str()).collect();
        keys.sort_unstable();
        keys.dedup();
        let contexts: HashMap<&str, DrugContexts> = keys
            .par_iter()
            .map(|k| (*k, self.index.build_contexts(&self.index.resolve(k))))
            .collect();
        let mut outcomes: Vec<&EventCode> = pairs.iter().map(|p| &p.outcome).collect();
        outcomes.sort_unstable();
        outcomes.dedup();
        let totals: HashMap<&EventCode, OutcomeTotals> = outcomes
            .par_iter()
            .map(|o| (*o, self.outcome_totals(o)))
            .collect();
        pairs
            .par_iter()
            .map(|p| {
                let stats = self.pair_stats(&contexts[p.drug_key.as_str()], &p.outcome);
                let background = self.background(&totals[&p.outcome], &stats);
                (stats, background)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    exact: u64,
    gen4: u64,
    gen3: u64,
}

impl Tally {
    fn add(&mut self, e: &ClassEvent) {
        self.exact += e.exact as u64;
        self.gen4 += e.is4 as u64;
        self.gen3 += e.is3 as u64;
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct WindowCounts {
    after: Tally,
    before: Tally,
}

fn accumulate(s: &mut CohortStats, c: &PrescriptionContext, k: &WindowCounts) {
    let event = k.after.exact > 0;
    s.n_presc += 1;
    s.sum_age += c.age as u64;
    s.n_male += c.male as u64;
    s.sum_dose += c.dose;
    s.sum_noise += c.noise as u64;
    if event {
        s.n_presc_with_event += 1;
        s.sum_age_event += c.age as u64;
        s.n_male_event += c.male as u64;
        s.sum_dose_event += c.dose;
        s.sum_noise_event += c.noise as u64;
    }
    s.n_events_after += k.after.exact;
    s.n_events_before += k.before.exact;
    s.n_gen4_after += k.after.gen4;
    s.n_gen4_before += k.before.gen4;
    s.n_gen3_after += k.after.gen3;
    s.n_gen3_before += k.before.gen3;
}

pub fn attr_names() -> Vec<String> {
    (1..=N_ATTRS).map(|k| format!("attr{k}")).collect()
}

/// Writes `drug_key,outcome_code,group,label,attr1..attr27` with round-trip precision.
pub fn write_features(path: &Path, vectors: &[FeatureVector]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let mut header = String::from("drug_key,outcome_code,group,label");
    for name in attr_names() {
        header.push(',');
        header.push_str(&name);
    }
    writeln!(w, "{header}").map_err(|e| Error::io(path, e))?;
    for v in vectors {
        let mut line = format!(
            "{},{},{},{}",
            v.pair.drug_key,
            v.pair.outcome,
            v.pair.group,
            v.pair.label.as_str()
        );
        for a in v.attrs {
            line.push(',');
            line.push_str(&a.to_string());
        }
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_features(path: &Path) -> Result<Vec<FeatureVector>> {
    let name = "features.csv";
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::parse(name, 0, e.to_string()))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::parse(name, 1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut expected = vec!["drug_key", "outcome_code", "group", "label"]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
    expected.extend(attr_names());
    if header != expected {
        return Err(Error::parse(name, 1, "unexpected features header"));
    }
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let r = record.map_err(|e| Error::parse(name, row, e.to_string()))?;
        let label = Label::parse(&r[3]).ok_or_else(|| Error::parse(name, row, "bad label"))?;
        let outcome = EventCode::new(&r[1]).map_err(|e| Error::parse(name, row, e.to_string()))?;
        let mut attrs = [0.0; N_ATTRS];
        for (k, a) in attrs.iter_mut().enumerate() {
            *a = r[4 + k]
                .parse()
                .map_err(|_| Error::parse(name, row, format!("attr{} is not a number", k + 1)))?;
        }
        out.push(FeatureVector {
            pair: PairKey {
                drug_key: r[0].to_string(),
                outcome,
                label,
                group: r[2].to_string(),
            },
            attrs,
        });
    }
    Ok(out)
}
