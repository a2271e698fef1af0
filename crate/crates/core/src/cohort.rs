//! Prescription cohorts (X, Y, Z), hazard-window observations and pair
//! eligibility.
//!
//! Cohort membership and co-medication noise depend only on the
//! prescription itself, so they are computed once per store in a
//! [`CohortIndex`] and shared by every drug-outcome pair.

use std::collections::HashSet;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::codes::{equivalent_at, family_covers, EventCode, FamilyMap};
use crate::error::{Error, Result};
use crate::store::{
    completed_years, date_of, day_of, Day, DrugId, EventStore, PatientIdx, StoredPrescription,
};

/// Mean Gregorian month length used to turn month thresholds into days.
pub const DAYS_PER_MONTH: f64 = 30.44;

pub fn months_to_days(months: u32) -> Day {
    (months as f64 * DAYS_PER_MONTH).round() as Day
}

/// Day-offset window `[lo, hi]` after an anchor, both ends inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Window {
    pub lo: i32,
    pub hi: i32,
}

impl Window {
    pub const DEFAULT: Window = Window { lo: 1, hi: 30 };

    pub fn new(lo: i32, hi: i32) -> Result<Self> {
        if lo > hi {
            return Err(Error::Config(format!("window [{lo},{hi}] has lo > hi")));
        }
        Ok(Window { lo, hi })
    }

    /// The window of the same length before the anchor, `[-hi, -lo]`.
    pub fn mirrored(self) -> Window {
        Window {
            lo: -self.hi,
            hi: -self.lo,
        }
    }

    pub fn contains(self, anchor: Day, day: Day) -> bool {
        let offset = day - anchor;
        self.lo <= offset && offset <= self.hi
    }
}

impl Default for Window {
    fn default() -> Self {
        Window::DEFAULT
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortConfig {
    /// Months without a same-drugcode (Y) or same-family (Z) prescription.
    pub washout_months: u32,
    /// Dotted segments of the family code that define a drug family.
    pub family_depth: usize,
    /// Half-width of the co-medication window around a prescription.
    pub noise_window_days: i32,
    /// Minimum gap between distinct prescription periods.
    pub period_gap_months: u32,
    /// Distinct exposed patients with an in-window outcome required for a pair.
    pub min_patients: usize,
}

impl Default for CohortConfig {
    fn default() -> Self {
        CohortConfig {
            washout_months: 13,
            family_depth: 2,
            noise_window_days: 30,
            period_gap_months: 13,
            min_patients: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Cohort {
    X,
    Y,
    Z,
}

impl Cohort {
    pub const ALL: [Cohort; 3] = [Cohort::X, Cohort::Y, Cohort::Z];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Adr,
    NonAdr,
    Unknown,
}

impl Label {
    pub fn parse(text: &str) -> Option<Label> {
        match text {
            "ADR" => Some(Label::Adr),
            "nonADR" => Some(Label::NonAdr),
            "unknown" | "" => Some(Label::Unknown),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Adr => "ADR",
            Label::NonAdr => "nonADR",
            Label::Unknown => "unknown",
        }
    }

    pub fn is_adr(self) -> bool {
        self == Label::Adr
    }
}

/// A labelled drug-outcome pair from the reference set.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PairKey {
    pub drug_key: String,
    pub outcome: EventCode,
    pub label: Label,
    pub group: String,
}

/// Reads `reference.csv`: `drug_key,outcome_code,label,group`.
pub fn read_reference(path: &Path) -> Result<Vec<PairKey>> {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::parse(&name, 0, e.to_string()))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::parse(&name, 1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header != ["drug_key", "outcome_code", "label", "group"] {
        return Err(Error::parse(
            &name,
            1,
            "expected header drug_key,outcome_code,label,group",
        ));
    }
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let r = record.map_err(|e| Error::parse(&name, row, e.to_string()))?;
        if r.len() != 4 {
            return Err(Error::parse(&name, row, "expected 4 fields"));
        }
        let label = Label::parse(&r[2])
            .ok_or_else(|| Error::parse(&name, row, format!("unknown label {:?}", &r[2])))?;
        if label != Label::Unknown && r[3].is_empty() {
            return Err(Error::parse(&name, row, "labelled pair needs a group"));
        }
        let outcome = EventCode::new(&r[1]).map_err(|e| Error::parse(&name, row, e.to_string()))?;
        let key = PairKey {
            drug_key: r[0].to_string(),
            outcome,
            label,
            group: r[3].to_string(),
        };
        if !seen.insert((key.drug_key.clone(), key.outcome.clone())) {
            return Err(Error::parse(&name, row, "duplicate drug_key,outcome_code pair"));
        }
        out.push(key);
    }
    Ok(out)
}

pub fn write_reference(path: &Path, pairs: &[PairKey]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse("reference.csv", 0, e.to_string()))?;
    let io = |e: csv::Error| Error::parse("reference.csv", 0, e.to_string());
    w.write_record(["drug_key", "outcome_code", "label", "group"]).map_err(io)?;
    for p in pairs {
        w.write_record([p.drug_key.as_str(), p.outcome.as_str(), p.label.as_str(), &p.group])
            .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Per-prescription facts that do not depend on the outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct PrescriptionFlags {
    age: u32,
    noise: u32,
    in_y: bool,
    in_z: bool,
}

/// The details of one prescription of the drug under study.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrescriptionContext {
    /// Index into [`EventStore::prescriptions`].
    pub prescription: u32,
    pub patient: PatientIdx,
    pub drug: DrugId,
    pub day: Day,
    pub age: u32,
    pub male: bool,
    /// Fixed-point dosage, see [`crate::store::DOSE_SCALE`].
    pub dose: u64,
    pub noise: u32,
    pub in_y: bool,
    pub in_z: bool,
}

impl PrescriptionContext {
    pub fn in_cohort(&self, cohort: Cohort) -> bool {
        match cohort {
            Cohort::X => true,
            Cohort::Y => self.in_y,
            Cohort::Z => self.in_z,
        }
    }

    pub fn date(&self) -> NaiveDate {
        date_of(self.day)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HazardObservation {
    pub context: PrescriptionContext,
    pub event_day: Day,
    pub first3: bool,
    pub first4: bool,
}

/// A drug key resolved to the store's drug codes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DrugSet {
    pub key: String,
    pub drugs: Vec<DrugId>,
    member: Vec<bool>,
}

impl DrugSet {
    pub fn contains(&self, drug: DrugId) -> bool {
        self.member.get(drug as usize).copied().unwrap_or(false)
    }

    pub fn is_empty(&self) -> bool {
        self.drugs.is_empty()
    }
}

/// Contexts of one drug set, grouped by patient.
#[derive(Debug, Clone)]
pub struct DrugContexts {
    pub set: DrugSet,
    pub contexts: Vec<PrescriptionContext>,
    /// `(patient, start, end)` ranges into `contexts`.
    pub patients: Vec<(PatientIdx, usize, usize)>,
}

impl DrugContexts {
    pub fn len(&self) -> usize {
        self.contexts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contexts.is_empty()
    }

    pub fn count(&self, cohort: Cohort) -> usize {
        self.contexts.iter().filter(|c| c.in_cohort(cohort)).count()
    }

    pub fn patient_contexts(&self) -> impl Iterator<Item = (PatientIdx, &[PrescriptionContext])> {
        self.patients
            .iter()
            .map(move |&(p, s, e)| (p, &self.contexts[s..e]))
    }
}

/// Greedy earliest-first selection of prescriptions at least `gap` days apart.
pub fn distinct_periods(days: impl IntoIterator<Item = Day>, gap: Day) -> Vec<Day> {
    let mut out: Vec<Day> = Vec::new();
    for day in days {
        match out.last() {
            Some(&last) if day - last < gap => {}
            _ => out.push(day),
        }
    }
    out
}

#[derive(Debug)]
pub struct CohortIndex<'s> {
    store: &'s EventStore,
    config: CohortConfig,
    family_codes: Vec<String>,
    family_of: Vec<u32>,
    flags: Vec<PrescriptionFlags>,
    cohort_totals: [u64; 3],
}

impl<'s> CohortIndex<'s> {
    pub fn build(store: &'s EventStore, families: &FamilyMap, config: CohortConfig) -> Result<Self> {
        if config.family_depth == 0 {
            return Err(Error::Config("family_depth must be at least 1".into()));
        }
        let mut family_codes = Vec::with_capacity(store.drugs().len());
        let mut family_ids: std::collections::HashMap<String, u32> = Default::default();
        let mut family_of = Vec::with_capacity(store.drugs().len());
        for drug in store.drugs() {
            let full = families.family_code(drug)?.to_string();
            let family = families.drug_family(drug, config.family_depth)?;
            let next = family_ids.len() as u32;
            family_of.push(*family_ids.entry(family).or_insert(next));
            family_codes.push(full);
        }

        let washout = months_to_days(config.washout_months);
        let noise_window = config.noise_window_days;
        let mut flags = Vec::with_capacity(store.prescriptions().len());
        for (idx, patient) in store.patients().iter().enumerate() {
            let list = store.patient_prescriptions(idx as PatientIdx);
            for (i, p) in list.iter().enumerate() {
                let earlier = list[..i]
                    .iter()
                    .rev()
                    .skip_while(|q| q.day == p.day)
                    .take_while(|q| q.day >= p.day - washout);
                let mut in_y = true;
                let mut in_z = true;
                for q in earlier {
                    if q.drug == p.drug {
                        in_y = false;
                    }
                    if family_of[q.drug as usize] == family_of[p.drug as usize] {
                        in_z = false;
                    }
                }
                let lo = list.partition_point(|q| q.day < p.day - noise_window);
                let mut others: Vec<DrugId> = list[lo..]
                    .iter()
                    .take_while(|q| q.day <= p.day + noise_window)
                    .filter(|q| q.drug != p.drug)
                    .map(|q| q.drug)
                    .collect();
                others.sort_unstable();
                others.dedup();
                let age = completed_years(patient.birth_date, date_of(p.day))? as u32;
                flags.push(PrescriptionFlags {
                    age,
                    noise: others.len() as u32,
                    in_y,
                    in_z,
                });
            }
        }
        let mut cohort_totals = [0u64; 3];
        for f in &flags {
            cohort_totals[0] += 1;
            cohort_totals[1] += f.in_y as u64;
            cohort_totals[2] += f.in_z as u64;
        }
        Ok(CohortIndex {
            store,
            config,
            family_codes,
            family_of,
            flags,
            cohort_totals,
        })
    }

    pub fn store(&self) -> &'s EventStore {
        self.store
    }

    pub fn config(&self) -> &CohortConfig {
        &self.config
    }

    /// Retained prescriptions of every drug, per cohort.
    pub fn cohort_totals(&self) -> [u64; 3] {
        self.cohort_totals
    }

    pub fn washout_days(&self) -> Day {
        months_to_days(self.config.washout_months)
    }

    pub fn period_gap_days(&self) -> Day {
        months_to_days(self.config.period_gap_months)
    }

    /// Drugs whose family code lies under `key` (segment-wise) or whose code equals `key`.
    pub fn resolve(&self, key: &str) -> DrugSet {
        let store = self.store;
        let mut member = vec![false; store.drugs().len()];
        let mut drugs = Vec::new();
        for (id, drug) in store.drugs().iter().enumerate() {
            if drug.as_str() == key || family_covers(key, &self.family_codes[id]) {
                member[id] = true;
                drugs.push(id as DrugId);
            }
        }
        DrugSet {
            key: key.to_string(),
            drugs,
            member,
        }
    }

    pub fn same_family(&self, a: DrugId, b: DrugId) -> bool {
        self.family_of[a as usize] == self.family_of[b as usize]
    }

    pub fn context(&self, prescription: u32) -> PrescriptionContext {
        let p: &StoredPrescription = &self.store.prescriptions()[prescription as usize];
        let f = self.flags[prescription as usize];
        PrescriptionContext {
            prescription,
            patient: p.patient,
            drug: p.drug,
            day: p.day,
            age: f.age,
            male: self.store.patient(p.patient).male,
            dose: p.dose,
            noise: f.noise,
            in_y: f.in_y,
            in_z: f.in_z,
        }
    }

    pub fn build_contexts(&self, set: &DrugSet) -> DrugContexts {
        let mut indexes: Vec<u32> = set
            .drugs
            .iter()
            .flat_map(|&d| self.store.prescriptions_of(d).iter().copied())
            .collect();
        // store order is (patient, day, drug)
        indexes.sort_unstable();
        let contexts: Vec<PrescriptionContext> = indexes.into_iter().map(|i| self.context(i)).collect();
        let mut patients = Vec::new();
        let mut start = 0;
        for i in 1..=contexts.len() {
            if i == contexts.len() || contexts[i].patient != contexts[start].patient {
                patients.push((contexts[start].patient, start, i));
                start = i;
            }
        }
        DrugContexts {
            set: set.clone(),
            contexts,
            patients,
        }
    }

    /// Distinct drug codes other than `drug` prescribed within the noise window of `date`.
    pub fn noise_count(&self, patient_id: &str, date: NaiveDate, drug: &crate::codes::DrugCode) -> u32 {
        let Some(idx) = self.store.patient_idx(patient_id) else {
            return 0;
        };
        let day = day_of(date);
        let w = self.config.noise_window_days;
        let own = self.store.drug_id(drug);
        let mut others: Vec<DrugId> = self
            .store
            .patient_prescriptions(idx)
            .iter()
            .filter(|q| (q.day - day).abs() <= w && Some(q.drug) != own)
            .map(|q| q.drug)
            .collect();
        others.sort_unstable();
        others.dedup();
        others.len() as u32
    }

    /// One observation per (context in `cohort`, occurrence of `outcome` in its window).
    pub fn hazard_observations(
        &self,
        contexts: &DrugContexts,
        outcome: &EventCode,
        window: Window,
        cohort: Cohort,
    ) -> Vec<HazardObservation> {
        let store = self.store;
        let mut out = Vec::new();
        for (patient, list) in contexts.patient_contexts() {
            let events = store.patient_events(patient);
            for c in list.iter().filter(|c| c.in_cohort(cohort)) {
                let from = c.day + window.lo;
                let start = events.partition_point(|e| e.day < from);
                for e in events[start..].iter().take_while(|e| e.day <= c.day + window.hi) {
                    if store.code(e.code) != outcome {
                        continue;
                    }
                    let before = &events[..events.partition_point(|x| x.day < e.day)];
                    let seen = |k: usize| {
                        before
                            .iter()
                            .any(|x| equivalent_at(store.code(x.code), outcome, k))
                    };
                    out.push(HazardObservation {
                        context: *c,
                        event_day: e.day,
                        first3: !seen(3),
                        first4: !seen(4),
                    });
                }
            }
        }
        out
    }

    /// Start dates of the patient's distinct prescription periods of the drug set.
    pub fn distinct_prescription_periods(&self, set: &DrugSet, patient_id: &str) -> Vec<NaiveDate> {
        let Some(idx) = self.store.patient_idx(patient_id) else {
            return Vec::new();
        };
        let days = self
            .store
            .patient_prescriptions(idx)
            .iter()
            .filter(|p| set.contains(p.drug))
            .map(|p| p.day);
        distinct_periods(days, self.period_gap_days())
            .into_iter()
            .map(date_of)
            .collect()
    }

    /// Distinct patients with an occurrence of `outcome` in `window` after a prescription of the set.
    pub fn exposed_patients_with_outcome(&self, contexts: &DrugContexts, outcome: &EventCode, window: Window) -> usize {
        let store = self.store;
        let Some(code) = store.code_id(outcome) else {
            return 0;
        };
        contexts
            .patient_contexts()
            .filter(|(patient, list)| {
                let events = store.patient_events(*patient);
                list.iter().any(|c| {
                    let start = events.partition_point(|e| e.day < c.day + window.lo);
                    events[start..]
                        .iter()
                        .take_while(|e| e.day <= c.day + window.hi)
                        .any(|e| e.code == code)
                })
            })
            .count()
    }

    /// Reference pairs with at least `min_patients` distinct exposed patients showing the outcome.
    pub fn eligible_pairs(&self, reference: &[PairKey], window: Window) -> Vec<PairKey> {
        let mut cache: std::collections::HashMap<&str, DrugContexts> = Default::default();
        let mut out = Vec::new();
        for pair in reference {
            let contexts = cache
                .entry(pair.drug_key.as_str())
                .or_insert_with(|| self.build_contexts(&self.resolve(&pair.drug_key)));
            if self.exposed_patients_with_outcome(contexts, &pair.outcome, window) >= self.config.min_patients {
                out.push(pair.clone());
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codes::DrugCode;
    use crate::store::{parse_date, ClinicalEvent, Patient, Prescription, RawData, StoreConfig};

    fn d(s: &str) -> NaiveDate {
        parse_date(s).unwrap()
    }

    fn patient(id: &str) -> Patient {
        Patient {
            patient_id: id.into(),
            birth_date: d("1960-03-15"),
            male: id.ends_with('m'),
            registration_date: d("2000-01-01"),
            end_date: d("2020-12-31"),
        }
    }

    fn presc(id: &str, drug: &str, date: &str) -> Prescription {
        Prescription {
            patient_id: id.into(),
            drug: DrugCode::new(drug),
            date: d(date),
            dosage: 10.0,
        }
    }

    fn event(id: &str, code: &str, date: &str) -> ClinicalEvent {
        ClinicalEvent {
            patient_id: id.into(),
            code: EventCode::new(code).unwrap(),
            date: d(date),
        }
    }

    fn store(raw: &RawData) -> EventStore {
        EventStore::ingest(
            raw,
            StoreConfig {
                registration_washout_days: 0,
                end_censor_days: 0,
                observation_end: d("2020-12-31"),
            },
        )
        .unwrap()
    }

    #[test]
    fn washout_before_first_prescription() {
        // same drugcode 12 months earlier, sibling drug 6 months earlier
        let raw = RawData {
            patients: vec![patient("a"), patient("b")],
            prescriptions: vec![
                presc("a", "01.01.01", "2010-01-10"),
                presc("a", "01.01.01", "2011-01-10"),
                presc("b", "01.01.02", "2010-07-10"),
                presc("b", "01.01.01", "2011-01-10"),
            ],
            events: vec![],
        };
        let s = store(&raw);
        let idx = CohortIndex::build(&s, &FamilyMap::identity(), CohortConfig::default()).unwrap();
        let ctx = idx.build_contexts(&idx.resolve("01.01.01"));
        let flags: Vec<(bool, bool)> = ctx.contexts.iter().map(|c| (c.in_y, c.in_z)).collect();
        // a: first-ever, then repeat; b: first of this drugcode after a sibling
        assert_eq!(flags, [(true, true), (false, false), (true, false)]);
        assert_eq!((ctx.len(), ctx.count(Cohort::Y), ctx.count(Cohort::Z)), (3, 2, 1));
    }

    #[test]
    fn washout_month_arithmetic() {
        assert_eq!(months_to_days(13), 396);
        assert_eq!(months_to_days(12), 365);
    }

    #[test]
    fn noise_counts_distinct_other_codes() {
        let raw = RawData {
            patients: vec![patient("a")],
            prescriptions: vec![
                presc("a", "01.01.01", "2010-01-10"),
                presc("a", "02.01.01", "2009-12-20"),
                presc("a", "02.01.01", "2010-01-20"),
                presc("a", "03.01.01", "2010-02-09"),
                presc("a", "04.01.01", "2010-02-10"),
            ],
            events: vec![],
        };
        let s = store(&raw);
        let idx = CohortIndex::build(&s, &FamilyMap::identity(), CohortConfig::default()).unwrap();
        let drug = DrugCode::new("01.01.01");
        assert_eq!(idx.noise_count("a", d("2010-01-10"), &drug), 2);
        assert_eq!(idx.noise_count("a", d("2015-01-10"), &drug), 0);
        let ctx = idx.build_contexts(&idx.resolve("01.01.01"));
        assert_eq!(ctx.contexts[0].noise, 2);

        let single = RawData {
            patients: vec![patient("a")],
            prescriptions: vec![
                presc("a", "01.01.01", "2010-01-10"),
                presc("a", "02.01.01", "2010-01-01"),
                presc("a", "02.01.01", "2010-01-20"),
            ],
            events: vec![],
        };
        let s = store(&single);
        let idx = CohortIndex::build(&s, &FamilyMap::identity(), CohortConfig::default()).unwrap();
        assert_eq!(idx.noise_count("a", d("2010-01-10"), &drug), 1);
    }

    #[test]
    fn first_occurrence_flags() {
        let raw = RawData {
            patients: vec![patient("a"), patient("b"), patient("c")],
            prescriptions: vec![
                presc("a", "01.01.01", "2010-01-01"),
                presc("b", "01.01.01", "2010-01-01"),
                presc("c", "01.01.01", "2010-01-01"),
            ],
            events: vec![
                event("a", "G57y1", "2010-01-11"),
                event("b", "G57y2", "2009-01-01"),
                event("b", "G57y1", "2010-01-11"),
                event("c", "G57x2", "2009-01-01"),
                event("c", "G57y1", "2010-01-11"),
            ],
        };
        let s = store(&raw);
        let idx = CohortIndex::build(&s, &FamilyMap::identity(), CohortConfig::default()).unwrap();
        let ctx = idx.build_contexts(&idx.resolve("01"));
        let outcome = EventCode::new("G57y1").unwrap();
        let obs = idx.hazard_observations(&ctx, &outcome, Window::DEFAULT, Cohort::X);
        let flags: Vec<(bool, bool)> = obs.iter().map(|o| (o.first3, o.first4)).collect();
        assert_eq!(flags, [(true, true), (false, false), (false, true)]);
    }

    #[test]
    fn periods_are_greedy() {
        let m = |k: i32| k * 30;
        assert_eq!(distinct_periods([m(0), m(6), m(14)], 396), vec![m(0), m(14)]);
        assert_eq!(distinct_periods([m(0)], 396), vec![m(0)]);
        assert_eq!(distinct_periods([m(0), m(26)], 396).len(), 2);
        assert_eq!(distinct_periods([0, 395, 396, 800], 396), vec![0, 396, 800]);
    }

    #[test]
    fn eligibility_counts_distinct_patients() {
        let mut raw = RawData {
            patients: vec![patient("a"), patient("b"), patient("c")],
            prescriptions: vec![
                presc("a", "01.01.01", "2010-01-01"),
                presc("b", "01.01.01", "2010-01-01"),
                presc("c", "01.01.01", "2010-01-01"),
            ],
            events: vec![
                event("a", "H10", "2010-01-05"),
                event("a", "H10", "2010-01-07"),
                event("b", "H10", "2010-01-30"),
                event("c", "H10", "2010-03-01"),
                event("a", "K1", "2010-01-05"),
                event("b", "K1", "2010-01-05"),
                event("c", "K1", "2010-01-31"),
            ],
        };
        let pair = |code: &str| PairKey {
            drug_key: "01".into(),
            outcome: EventCode::new(code).unwrap(),
            label: Label::Adr,
            group: "g".into(),
        };
        let reference = vec![pair("H10"), pair("K1"), pair("Z9")];
        let s = store(&raw);
        let idx = CohortIndex::build(&s, &FamilyMap::identity(), CohortConfig::default()).unwrap();
        let kept = idx.eligible_pairs(&reference, Window::DEFAULT);
        assert_eq!(kept, vec![pair("K1")]);
        let mut reversed = reference.clone();
        reversed.reverse();
        assert_eq!(idx.eligible_pairs(&reversed, Window::DEFAULT), kept);

        raw.events.push(event("c", "H10", "2010-01-15"));
        let s = store(&raw);
        let idx = CohortIndex::build(&s, &FamilyMap::identity(), CohortConfig::default()).unwrap();
        assert_eq!(idx.eligible_pairs(&reference, Window::DEFAULT).len(), 2);
    }

    #[test]
    fn drug_key_resolution() {
        let raw = RawData {
            patients: vec![patient("a")],
            prescriptions: vec![
                presc("a", "01.01.01", "2010-01-01"),
                presc("a", "01.02.01", "2010-01-01"),
                presc("a", "011.01.01", "2010-01-01"),
            ],
            events: vec![],
        };
        let s = store(&raw);
        let idx = CohortIndex::build(&s, &FamilyMap::identity(), CohortConfig::default()).unwrap();
        assert_eq!(idx.resolve("01").drugs.len(), 2);
        assert_eq!(idx.resolve("01.02").drugs.len(), 1);
        assert_eq!(idx.resolve("011.01.01").drugs.len(), 1);
        assert!(idx.resolve("99").is_empty());
    }
}
