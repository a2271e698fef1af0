//! Seeded generator of longitudinal datasets with planted drug-outcome
//! signals and confounded non-causal pairs.
//!
//! Drug groups play the role of the studied drugs. Every pair owns a
//! level-3 outcome class, so pair-specific events never interfere with
//! each other. Planted reactions follow the prescription within the
//! hazard window; protopathic outcomes precede it; co-prescription
//! outcomes are caused by a companion drug prescribed alongside.

use std::collections::HashMap;
use std::path::Path;

use chrono::{Months, NaiveDate};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::codes::{DrugCode, EventCode};
use crate::cohort::{write_reference, Label, PairKey, Window};
use crate::error::{Error, Result};
use crate::features::FeatureEngine;
use crate::seed::stream_rng;
use crate::store::{date_of, day_of, ClinicalEvent, Day, Patient, Prescription, RawData};

const DAYS_PER_MONTH: f64 = 30.44;
const DOSE_FACTORS: [f64; 4] = [0.5, 1.0, 1.5, 2.0];
const COURSE_SPACING: Day = 60;
const REGISTRATION_WASHOUT: Day = 365;
const END_CENSOR: Day = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub n_patients: usize,
    pub n_drug_groups: usize,
    pub drugs_per_group: usize,
    pub outcomes_per_drug: usize,
    pub adr_fraction: f64,
    pub observation_years: u32,
    pub start_date: NaiveDate,
    /// Background events per patient-month for each outcome class.
    pub baseline_event_rate: f64,
    pub relative_risk: f64,
    pub dose_response_exponent: f64,
    pub rechallenge_probability: f64,
    pub coprescription_rate: f64,
    pub indication_lead_time_days: i32,
    /// Expected courses of each drug group per patient.
    pub courses_per_group: f64,
    /// Expected courses of each background drug per patient.
    pub background_courses: f64,
    pub recourse_probability: f64,
    /// Share of planted pairs whose reactions are often coded one level up.
    pub hierarchical_adr_fraction: f64,
    pub protopathic_share: f64,
    pub coprescription_share: f64,
    pub max_attempts: u32,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            seed: 1,
            n_patients: 20_000,
            n_drug_groups: 9,
            drugs_per_group: 4,
            outcomes_per_drug: 250,
            adr_fraction: 0.16,
            observation_years: 6,
            start_date: NaiveDate::from_ymd_opt(2005, 1, 1).expect("valid date"),
            baseline_event_rate: 5e-4,
            relative_risk: 4.0,
            dose_response_exponent: 1.0,
            rechallenge_probability: 0.5,
            coprescription_rate: 0.3,
            indication_lead_time_days: 10,
            courses_per_group: 0.8,
            background_courses: 0.8,
            recourse_probability: 0.4,
            hierarchical_adr_fraction: 0.3,
            protopathic_share: 0.3,
            coprescription_share: 0.3,
            max_attempts: 6,
        }
    }
}

impl GeneratorConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_patients == 0 {
            return bad("n_patients must be positive");
        }
        if self.n_drug_groups == 0 || self.n_drug_groups > 49 {
            return bad("n_drug_groups must be between 1 and 49");
        }
        if self.drugs_per_group == 0 || self.drugs_per_group > 99 {
            return bad("drugs_per_group must be between 1 and 99");
        }
        if self.outcomes_per_drug == 0 || self.n_drug_groups * self.outcomes_per_drug > 26 * 36 * 36 {
            return bad("outcomes_per_drug out of range");
        }
        if !(0.0..1.0).contains(&self.adr_fraction) {
            return bad("adr_fraction must lie in [0, 1)");
        }
        if self.observation_years < 2 {
            return bad("observation_years must be at least 2");
        }
        let rates = [
            self.baseline_event_rate,
            self.dose_response_exponent,
            self.coprescription_rate,
            self.courses_per_group,
            self.background_courses,
        ];
        if rates.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return bad("rates must be non-negative");
        }
        if self.relative_risk < 1.0 {
            return bad("relative_risk must be at least 1");
        }
        let probs = [
            self.rechallenge_probability,
            self.coprescription_rate,
            self.recourse_probability,
            self.hierarchical_adr_fraction,
            self.protopathic_share,
            self.coprescription_share,
        ];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return bad("probabilities must lie in [0, 1]");
        }
        if self.protopathic_share + self.coprescription_share > 1.0 {
            return bad("protopathic_share + coprescription_share exceeds 1");
        }
        if !(1..=27).contains(&self.indication_lead_time_days) {
            return bad("indication_lead_time_days must lie in [1, 27]");
        }
        if self.max_attempts == 0 {
            return bad("max_attempts must be positive");
        }
        Ok(())
    }

    fn end_date(&self) -> NaiveDate {
        self.start_date
            .checked_add_months(Months::new(12 * self.observation_years))
            .expect("date in range")
    }

    fn baseline_30(&self) -> f64 {
        self.baseline_event_rate * Window::DEFAULT.hi as f64 / DAYS_PER_MONTH
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mechanism {
    Adr,
    AdrHierarchical,
    Protopathic,
    Coprescription,
    Background,
}

impl Mechanism {
    pub fn as_str(self) -> &'static str {
        match self {
            Mechanism::Adr => "adr",
            Mechanism::AdrHierarchical => "adr_hier",
            Mechanism::Protopathic => "protopathic",
            Mechanism::Coprescription => "coprescription",
            Mechanism::Background => "background",
        }
    }

    pub fn parse(text: &str) -> Option<Mechanism> {
        [
            Mechanism::Adr,
            Mechanism::AdrHierarchical,
            Mechanism::Protopathic,
            Mechanism::Coprescription,
            Mechanism::Background,
        ]
        .into_iter()
        .find(|m| m.as_str() == text)
    }

    pub fn is_adr(self) -> bool {
        matches!(self, Mechanism::Adr | Mechanism::AdrHierarchical)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub pair: PairKey,
    pub mechanism: Mechanism,
    /// Relative risk actually used, after any eligibility retries.
    pub relative_risk: f64,
    pub attempts: u32,
}

/// Ground truth with one row per generated pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub rows: Vec<TruthRow>,
}

impl GroundTruth {
    pub fn reference(&self) -> Vec<PairKey> {
        self.rows.iter().map(|r| r.pair.clone()).collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = String::from("drug_key,outcome_code,label,mechanism,group\n");
        for r in &self.rows {
            text.push_str(&format!(
                "{},{},{},{},{}\n",
                r.pair.drug_key,
                r.pair.outcome,
                r.pair.label.as_str(),
                r.mechanism.as_str(),
                r.pair.group
            ));
        }
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<GroundTruth> {
        let name = "truth.csv";
        let mut reader = csv::Reader::from_path(path).map_err(|e| Error::parse(name, 0, e.to_string()))?;
        let mut rows = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let row = i + 2;
            let r = rec.map_err(|e| Error::parse(name, row, e.to_string()))?;
            if r.len() != 5 {
                return Err(Error::parse(name, row, "expected 5 fields"));
            }
            let label = Label::parse(&r[2]).ok_or_else(|| Error::parse(name, row, "bad label"))?;
            let mechanism = Mechanism::parse(&r[3]).ok_or_else(|| Error::parse(name, row, "bad mechanism"))?;
            rows.push(TruthRow {
                pair: PairKey {
                    drug_key: r[0].to_string(),
                    outcome: EventCode::new(&r[1])?,
                    label,
                    group: r[4].to_string(),
                },
                mechanism,
                relative_risk: f64::NAN,
                attempts: 0,
            });
        }
        Ok(GroundTruth { rows })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub raw: RawData,
    pub truth: GroundTruth,
}

impl SynthData {
    /// Writes the three record files plus `reference.csv` and `truth.csv`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        self.raw.write(dir)?;
        write_reference(&dir.join("reference.csv"), &self.truth.reference())?;
        self.truth.write(&dir.join("truth.csv"))
    }
}

pub fn group_key(g: usize) -> String {
    format!("{g:02}")
}

pub fn group_name(g: usize) -> String {
    format!("group{g:02}")
}

fn group_drug(g: usize, i: usize) -> String {
    format!("{g:02}.{:02}.{:02}", 1 + i / 2, 1 + i % 2)
}

fn background_drug(k: usize) -> String {
    format!("{:02}.01.01", 50 + k)
}

const BASE36: &[u8] = b"0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZ";

fn class_prefix(c: usize) -> String {
    let letter = (b'A' + (c / (36 * 36)) as u8) as char;
    let a = BASE36[(c / 36) % 36] as char;
    let b = BASE36[c % 36] as char;
    format!("{letter}{a}{b}")
}

/// The three codings of a class: exact outcome, level-4 sibling, level-3 cousin.
#[derive(Debug, Clone)]
struct OutcomeClass {
    exact: u32,
    sibling: u32,
    cousin: u32,
}

#[derive(Debug, Clone)]
struct PairPlan {
    group: usize,
    class: usize,
    outcome: EventCode,
    mechanism: Mechanism,
    relative_risk: f64,
}

#[derive(Debug, Clone, Copy)]
struct GenPrescription {
    patient: u32,
    drug: u32,
    day: Day,
    dose_factor: f64,
    course: u32,
    course_start: bool,
}

#[derive(Debug, Clone, Copy)]
struct GenEvent {
    patient: u32,
    day: Day,
    code: u32,
}

struct PatientFrame {
    registration: Day,
    end: Day,
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map(|d| d.sample(rng) as u64).unwrap_or(0)
}

struct Catalogue {
    drugs: Vec<String>,
    base_dose: Vec<f64>,
    /// Drug ids per group, then one background drug per group.
    group_drugs: Vec<Vec<u32>>,
    companions: Vec<u32>,
    codes: Vec<EventCode>,
    classes: Vec<OutcomeClass>,
    pairs: Vec<PairPlan>,
}

fn catalogue(config: &GeneratorConfig) -> Result<Catalogue> {
    let mut drugs = Vec::new();
    let mut base_dose = Vec::new();
    let mut group_drugs = Vec::new();
    for g in 1..=config.n_drug_groups {
        let mut ids = Vec::new();
        for i in 0..config.drugs_per_group {
            ids.push(drugs.len() as u32);
            drugs.push(group_drug(g, i));
            base_dose.push(10.0 * (1 + i % 4) as f64);
        }
        group_drugs.push(ids);
    }
    let mut companions = Vec::new();
    for g in 1..=config.n_drug_groups {
        companions.push(drugs.len() as u32);
        drugs.push(background_drug(g));
        base_dose.push(5.0);
    }

    let mut codes = Vec::new();
    let mut classes = Vec::new();
    let mut pairs = Vec::new();
    let n_adr = (config.adr_fraction * config.outcomes_per_drug as f64).round() as usize;
    for g in 0..config.n_drug_groups {
        let mut rng = stream_rng(config.seed, "group", g as u64, 0);
        let n_rest = config.outcomes_per_drug - n_adr;
        let n_proto = (config.protopathic_share * n_rest as f64).round() as usize;
        let mut n_copresc = (config.coprescription_share * n_rest as f64).round() as usize;
        if config.coprescription_rate == 0.0 {
            n_copresc = 0;
        }
        let n_hier = (config.hierarchical_adr_fraction * n_adr as f64).round() as usize;
        let mut mechanisms: Vec<Mechanism> = Vec::new();
        mechanisms.extend(std::iter::repeat_n(Mechanism::AdrHierarchical, n_hier));
        mechanisms.extend(std::iter::repeat_n(Mechanism::Adr, n_adr - n_hier));
        mechanisms.extend(std::iter::repeat_n(Mechanism::Protopathic, n_proto));
        mechanisms.extend(std::iter::repeat_n(Mechanism::Coprescription, n_copresc.min(n_rest - n_proto)));
        mechanisms.resize(config.outcomes_per_drug, Mechanism::Background);
        mechanisms.shuffle(&mut rng);
        for mechanism in mechanisms {
            let class = classes.len();
            let prefix = class_prefix(class);
            let level: f64 = rng.random();
            let outcome = if level < 0.6 {
                format!("{prefix}x1")
            } else if level < 0.85 {
                format!("{prefix}x")
            } else {
                prefix.clone()
            };
            let outcome = EventCode::new(outcome)?;
            let mut push = |c: &str| {
                codes.push(EventCode::new(c).expect("generated code"));
                (codes.len() - 1) as u32
            };
            let exact = push(outcome.as_str());
            let sibling = push(&format!("{prefix}x2"));
            let cousin = push(&format!("{prefix}y1"));
            classes.push(OutcomeClass { exact, sibling, cousin });
            let relative_risk = config.relative_risk * rng.random_range(1.0..2.0);
            pairs.push(PairPlan {
                group: g,
                class,
                outcome,
                mechanism,
                relative_risk,
            });
        }
    }
    Ok(Catalogue {
        drugs,
        base_dose,
        group_drugs,
        companions,
        codes,
        classes,
        pairs,
    })
}

/// Appends the prescriptions of one course and any re-courses.
#[allow(clippy::too_many_arguments)]
fn add_courses(
    rng: &mut ChaCha8Rng,
    out: &mut Vec<GenPrescription>,
    patient: u32,
    drug: u32,
    frame: &PatientFrame,
    n_courses: u64,
    recourse: f64,
    next_course: &mut u32,
    companion: Option<(u32, f64)>,
) {
    let lo = frame.registration + REGISTRATION_WASHOUT;
    let hi = frame.end - END_CENSOR;
    if hi < lo {
        return;
    }
    for _ in 0..n_courses {
        let mut start = rng.random_range(lo..=hi);
        let factor = DOSE_FACTORS[rng.random_range(0..DOSE_FACTORS.len())];
        loop {
            let n = rng.random_range(1..=3);
            let course = *next_course;
            *next_course += 1;
            let with_companion = companion.filter(|(_, rate)| rng.random_bool(*rate)).map(|c| c.0);
            let mut last = start;
            for k in 0..n {
                let day = start + k * COURSE_SPACING;
                if day > hi {
                    break;
                }
                last = day;
                out.push(GenPrescription {
                    patient,
                    drug,
                    day,
                    dose_factor: factor,
                    course,
                    course_start: k == 0,
                });
                if let Some(c) = with_companion {
                    out.push(GenPrescription {
                        patient,
                        drug: c,
                        day,
                        dose_factor: 1.0,
                        course,
                        course_start: k == 0,
                    });
                }
            }
            if !rng.random_bool(recourse) {
                break;
            }
            start = last + rng.random_range(400..=800);
            if start > hi {
                break;
            }
        }
    }
}

fn in_frame(frame: &PatientFrame, day: Day) -> bool {
    frame.registration <= day && day <= frame.end
}

/// Pair-specific events for one attempt.
#[allow(clippy::too_many_arguments)]
fn pair_events(
    config: &GeneratorConfig,
    cat: &Catalogue,
    plan: &PairPlan,
    relative_risk: f64,
    attempt: u32,
    pair_index: usize,
    by_drug: &[Vec<usize>],
    prescriptions: &[GenPrescription],
    frames: &[PatientFrame],
) -> Vec<GenEvent> {
    let mut rng = stream_rng(config.seed, "pair", pair_index as u64, attempt as u64);
    let class = &cat.classes[plan.class];
    let excess = config.baseline_30() * (relative_risk - 1.0);
    let window = Window::DEFAULT;
    let mut out = Vec::new();
    let after = |rng: &mut ChaCha8Rng, p: &GenPrescription, code: u32, out: &mut Vec<GenEvent>| {
        let day = p.day + rng.random_range(window.lo..=window.hi);
        if in_frame(&frames[p.patient as usize], day) {
            out.push(GenEvent {
                patient: p.patient,
                day,
                code,
            });
        }
    };
    match plan.mechanism {
        Mechanism::Adr | Mechanism::AdrHierarchical => {
            let mut indexes: Vec<usize> = cat.group_drugs[plan.group]
                .iter()
                .flat_map(|&d| by_drug[d as usize].iter().copied())
                .collect();
            indexes.sort_unstable_by_key(|&i| (prescriptions[i].patient, prescriptions[i].day, i));
            // patient -> course of the first reaction
            let mut reacted: HashMap<u32, u32> = HashMap::new();
            for i in indexes {
                let p = &prescriptions[i];
                let prob = match reacted.get(&p.patient) {
                    Some(&course) if course != p.course => config.rechallenge_probability,
                    _ => (excess * p.dose_factor.powf(config.dose_response_exponent)).min(0.95),
                };
                if rng.random_bool(prob) {
                    let code = if plan.mechanism == Mechanism::AdrHierarchical && rng.random_bool(0.6) {
                        class.sibling
                    } else {
                        class.exact
                    };
                    after(&mut rng, p, code, &mut out);
                    reacted.entry(p.patient).or_insert(p.course);
                }
            }
        }
        Mechanism::Protopathic => {
            let prob = excess.min(0.95);
            for &d in &cat.group_drugs[plan.group] {
                for &i in &by_drug[d as usize] {
                    let p = &prescriptions[i];
                    if !p.course_start || !rng.random_bool(prob) {
                        continue;
                    }
                    let lead = (config.indication_lead_time_days + rng.random_range(-3..=3)).clamp(1, 30);
                    let day = p.day - lead;
                    if in_frame(&frames[p.patient as usize], day) {
                        out.push(GenEvent {
                            patient: p.patient,
                            day,
                            code: class.exact,
                        });
                    }
                    if rng.random_bool(0.6) {
                        after(&mut rng, p, class.exact, &mut out);
                    }
                }
            }
        }
        Mechanism::Coprescription => {
            let prob = (excess / config.coprescription_rate).min(0.95);
            let companion = cat.companions[plan.group];
            for &i in &by_drug[companion as usize] {
                if rng.random_bool(prob) {
                    after(&mut rng, &prescriptions[i], class.exact, &mut out);
                }
            }
        }
        Mechanism::Background => {}
    }
    out
}

/// Distinct patients with an exact-coded event in the window after a group prescription.
fn exposed_with_outcome(
    group_prescriptions: &[(u32, Day)],
    events: &HashMap<u32, Vec<Day>>,
    frames: &[PatientFrame],
) -> usize {
    let w = Window::DEFAULT;
    let mut last: Option<u32> = None;
    let mut count = 0;
    for &(patient, day) in group_prescriptions {
        if last == Some(patient) {
            continue;
        }
        let Some(days) = events.get(&patient) else { continue };
        let washout = frames[patient as usize].registration + REGISTRATION_WASHOUT;
        if days
            .iter()
            .any(|&d| d >= washout && d - day >= w.lo && d - day <= w.hi)
        {
            count += 1;
            last = Some(patient);
        }
    }
    count
}

pub fn generate(config: &GeneratorConfig) -> Result<SynthData> {
    config.validate()?;
    let cat = catalogue(config)?;
    let start = day_of(config.start_date);
    let end = day_of(config.end_date());
    let n_classes = cat.classes.len();

    let mut patients = Vec::with_capacity(config.n_patients);
    let mut frames = Vec::with_capacity(config.n_patients);
    let mut prescriptions: Vec<GenPrescription> = Vec::new();
    let mut events: Vec<GenEvent> = Vec::new();
    let mut next_course = 0u32;
    for i in 0..config.n_patients {
        let mut rng = stream_rng(config.seed, "patient", i as u64, 0);
        let age_days = rng.random_range(18 * 365..85 * 365);
        let registration = start + rng.random_range(-730..=365);
        let patient_end = if rng.random_bool(0.85) {
            end
        } else {
            rng.random_range((registration + 730).min(end)..=end)
        };
        let frame = PatientFrame {
            registration,
            end: patient_end,
        };
        patients.push(Patient {
            patient_id: format!("P{i:06}"),
            birth_date: date_of(start - age_days),
            male: rng.random_bool(0.5),
            registration_date: date_of(registration),
            end_date: date_of(patient_end),
        });
        for g in 0..config.n_drug_groups {
            let n = poisson(&mut rng, config.courses_per_group);
            if n == 0 {
                continue;
            }
            let ids = &cat.group_drugs[g];
            let drug = ids[rng.random_range(0..ids.len())];
            let companion = Some((cat.companions[g], config.coprescription_rate));
            add_courses(&mut rng, &mut prescriptions, i as u32, drug, &frame, n, config.recourse_probability, &mut next_course, companion);
        }
        for &c in &cat.companions {
            let n = poisson(&mut rng, config.background_courses);
            add_courses(&mut rng, &mut prescriptions, i as u32, c, &frame, n, config.recourse_probability, &mut next_course, None);
        }
        let months = (patient_end - registration) as f64 / DAYS_PER_MONTH;
        let n_events = poisson(&mut rng, config.baseline_event_rate * months * n_classes as f64);
        for _ in 0..n_events {
            let class = &cat.classes[rng.random_range(0..n_classes)];
            let u: f64 = rng.random();
            let code = if u < 0.7 {
                class.exact
            } else if u < 0.85 {
                class.sibling
            } else {
                class.cousin
            };
            events.push(GenEvent {
                patient: i as u32,
                day: rng.random_range(registration..=patient_end),
                code,
            });
        }
        frames.push(frame);
    }

    let mut by_drug: Vec<Vec<usize>> = vec![Vec::new(); cat.drugs.len()];
    for (i, p) in prescriptions.iter().enumerate() {
        by_drug[p.drug as usize].push(i);
    }
    let mut background_exact: HashMap<u32, HashMap<u32, Vec<Day>>> = HashMap::new();
    for e in &events {
        background_exact
            .entry(e.code)
            .or_default()
            .entry(e.patient)
            .or_default()
            .push(e.day);
    }
    let group_prescriptions: Vec<Vec<(u32, Day)>> = cat
        .group_drugs
        .iter()
        .map(|ids| {
            let mut v: Vec<(u32, Day)> = ids
                .iter()
                .flat_map(|&d| by_drug[d as usize].iter().map(|&i| (prescriptions[i].patient, prescriptions[i].day)))
                .collect();
            v.sort_unstable();
            v
        })
        .collect();

    let mut truth = Vec::with_capacity(cat.pairs.len());
    for (index, plan) in cat.pairs.iter().enumerate() {
        let mut rr = plan.relative_risk;
        let mut attempt = 0;
        let generated = loop {
            let generated = pair_events(config, &cat, plan, rr, attempt, index, &by_drug, &prescriptions, &frames);
            if !plan.mechanism.is_adr() || attempt + 1 >= config.max_attempts {
                break generated;
            }
            let exact = cat.classes[plan.class].exact;
            let mut merged = background_exact.get(&exact).cloned().unwrap_or_default();
            for e in generated.iter().filter(|e| e.code == exact) {
                merged.entry(e.patient).or_default().push(e.day);
            }
            if exposed_with_outcome(&group_prescriptions[plan.group], &merged, &frames) >= 3 {
                break generated;
            }
            attempt += 1;
            rr = 1.0 + (rr - 1.0) * 1.5;
        };
        events.extend(generated);
        truth.push(TruthRow {
            pair: PairKey {
                drug_key: group_key(plan.group + 1),
                outcome: plan.outcome.clone(),
                label: if plan.mechanism.is_adr() { Label::Adr } else { Label::NonAdr },
                group: group_name(plan.group + 1),
            },
            mechanism: plan.mechanism,
            relative_risk: rr,
            attempts: attempt + 1,
        });
    }

    prescriptions.sort_by(|a, b| {
        (a.patient, a.day, &cat.drugs[a.drug as usize]).cmp(&(b.patient, b.day, &cat.drugs[b.drug as usize]))
    });
    events.sort_by(|a, b| {
        (a.patient, a.day, &cat.codes[a.code as usize]).cmp(&(b.patient, b.day, &cat.codes[b.code as usize]))
    });
    let raw = RawData {
        prescriptions: prescriptions
            .iter()
            .map(|p| Prescription {
                patient_id: patients[p.patient as usize].patient_id.clone(),
                drug: DrugCode::new(cat.drugs[p.drug as usize].as_str()),
                date: date_of(p.day),
                dosage: cat.base_dose[p.drug as usize] * p.dose_factor,
            })
            .collect(),
        events: events
            .iter()
            .map(|e| ClinicalEvent {
                patient_id: patients[e.patient as usize].patient_id.clone(),
                code: cat.codes[e.code as usize].clone(),
                date: date_of(e.day),
            })
            .collect(),
        patients,
    };
    Ok(SynthData {
        raw,
        truth: GroundTruth { rows: truth },
    })
}

/// Empirical exposed and background risk of one generated pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairAudit {
    pub pair: PairKey,
    pub mechanism: Mechanism,
    pub n_exposed: u64,
    pub exposed_with_event: u64,
    pub n_background: u64,
    pub background_with_event: u64,
    pub events_after: u64,
    pub events_before: u64,
}

impl PairAudit {
    pub fn exposed_risk(&self) -> f64 {
        ratio(self.exposed_with_event, self.n_exposed)
    }

    pub fn background_risk(&self) -> f64 {
        ratio(self.background_with_event, self.n_background)
    }

    pub fn risk_difference(&self) -> f64 {
        self.exposed_risk() - self.background_risk()
    }

    /// Standard error of the risk difference under the binomial model.
    pub fn risk_difference_se(&self) -> f64 {
        let var = |p: f64, n: u64| if n == 0 { 0.0 } else { p * (1.0 - p) / n as f64 };
        (var(self.exposed_risk(), self.n_exposed) + var(self.background_risk(), self.n_background)).sqrt()
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Per-pair empirical rates in the X cohort for generator self-audit.
pub fn summarize(truth: &GroundTruth, engine: &FeatureEngine<'_, '_>) -> Vec<PairAudit> {
    let pairs = truth.reference();
    engine
        .compute_all(&pairs)
        .into_iter()
        .zip(&truth.rows)
        .map(|((stats, bg), row)| PairAudit {
            pair: row.pair.clone(),
            mechanism: row.mechanism,
            n_exposed: stats.cohorts[0].n_presc,
            exposed_with_event: stats.cohorts[0].n_presc_with_event,
            n_background: bg.n_presc_other[0],
            background_with_event: bg.n_presc_other_with_event[0],
            events_after: stats.cohorts[0].n_events_after,
            events_before: stats.cohorts[0].n_events_before,
        })
        .collect()
}
