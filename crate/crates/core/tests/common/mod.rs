//! Random micro-datasets and a brute-force feature oracle that rescans the raw
//! records for every pair, sharing no code with the indexed engine.

#![allow(dead_code)]

use chrono::{Datelike, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hillsignal::cohort::{Label, PairKey, Window};
use hillsignal::store::{ClinicalEvent, Patient, Prescription, RawData, StoreConfig};
use hillsignal::{DrugCode, EventCode};

pub const DRUGS: [&str; 7] = [
    "01.01.01", "01.01.02", "01.02.01", "02.01.01", "02.01.02", "03.01.01", "03.02.05",
];
pub const CODES: [&str; 12] = [
    "G", "G5", "G57", "G571", "G5711", "G5712", "G572", "G5721", "G58", "G581", "H12", "H121",
];
pub const DRUG_KEYS: [&str; 7] = ["01", "01.01", "01.01.01", "02", "03.02", "03.01.01", "09"];

pub fn date(days_from_start: i64) -> NaiveDate {
    NaiveDate::from_ymd_opt(2000, 1, 1).unwrap() + chrono::Duration::days(days_from_start)
}

/// A small dense dataset with many nearby prescriptions and events.
pub fn micro_dataset(seed: u64, n_patients: usize) -> RawData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let span = 2200;
    let mut raw = RawData::default();
    for i in 0..n_patients {
        let id = format!("p{seed}_{i:04}");
        let birth = date(-rng.random_range(6000..30000));
        let reg = date(rng.random_range(-400..400));
        raw.patients.push(Patient {
            patient_id: id.clone(),
            birth_date: birth,
            male: rng.random_bool(0.5),
            registration_date: reg,
            end_date: date(span),
        });
        // clustered activity so the windows see each other
        let n_bursts = rng.random_range(1..4);
        for _ in 0..n_bursts {
            let centre = rng.random_range(0..span);
            for _ in 0..rng.random_range(0..6) {
                let day = centre + rng.random_range(-40..40);
                raw.prescriptions.push(Prescription {
                    patient_id: id.clone(),
                    drug: DrugCode::new(DRUGS[rng.random_range(0..DRUGS.len())]),
                    date: date(day),
                    dosage: [0.5, 1.0, 2.5, 10.0, 0.125][rng.random_range(0..5)],
                });
            }
            for _ in 0..rng.random_range(0..7) {
                let day = centre + rng.random_range(-45..45);
                raw.events.push(ClinicalEvent {
                    patient_id: id.clone(),
                    code: EventCode::new(CODES[rng.random_range(0..CODES.len())]).unwrap(),
                    date: date(day),
                });
            }
        }
    }
    raw
}

pub fn random_pairs(rng: &mut ChaCha8Rng, n: usize) -> Vec<PairKey> {
    let mut out: Vec<PairKey> = Vec::new();
    while out.len() < n {
        let drug_key = DRUG_KEYS[rng.random_range(0..DRUG_KEYS.len())].to_string();
        let outcome = EventCode::new(CODES[rng.random_range(0..CODES.len())]).unwrap();
        if out.iter().any(|p| p.drug_key == drug_key && p.outcome == outcome) {
            continue;
        }
        let label = if rng.random_bool(0.3) { Label::Adr } else { Label::NonAdr };
        out.push(PairKey {
            drug_key,
            outcome,
            label,
            group: format!("g{}", out.len() % 3),
        });
    }
    out
}

pub fn all_pairs() -> Vec<PairKey> {
    let mut out = Vec::new();
    for (i, k) in DRUG_KEYS.iter().enumerate() {
        for c in CODES {
            out.push(PairKey {
                drug_key: k.to_string(),
                outcome: EventCode::new(c).unwrap(),
                label: if i % 2 == 0 { Label::Adr } else { Label::NonAdr },
                group: format!("g{i}"),
            });
        }
    }
    out
}

pub fn default_store_config(raw: &RawData) -> StoreConfig {
    StoreConfig::new(raw.latest_record_date().unwrap_or(date(0)))
}

// ---------------------------------------------------------------------------
// brute-force oracle

#[derive(Debug, Clone, Copy)]
pub struct OracleParams {
    pub window: Window,
    pub washout_days: i64,
    pub period_gap_days: i64,
    pub noise_days: i64,
    pub registration_washout_days: i64,
    pub end_censor_days: i64,
    pub family_depth: usize,
    pub min_patients: usize,
}

impl Default for OracleParams {
    fn default() -> Self {
        OracleParams {
            window: Window { lo: 1, hi: 30 },
            washout_days: 396,
            period_gap_days: 396,
            noise_days: 30,
            registration_washout_days: 365,
            end_censor_days: 30,
            family_depth: 2,
            min_patients: 3,
        }
    }
}

fn days(d: NaiveDate) -> i64 {
    (d - date(0)).num_days()
}

fn level(code: &str) -> usize {
    code.chars().count().min(5)
}

fn same_at(a: &str, b: &str, k: usize) -> bool {
    level(a) >= k && level(b) >= k && a.chars().take(k).eq(b.chars().take(k))
}

fn in_set(drug: &str, key: &str) -> bool {
    if drug == key {
        return true;
    }
    let d: Vec<&str> = drug.split('.').collect();
    let k: Vec<&str> = key.split('.').collect();
    k.len() <= d.len() && d[..k.len()] == k[..]
}

fn family(drug: &str, depth: usize) -> String {
    drug.split('.').take(depth).collect::<Vec<_>>().join(".")
}

fn age_years(birth: NaiveDate, on: NaiveDate) -> i64 {
    let mut y = (on.year() - birth.year()) as i64;
    if (on.month(), on.day()) < (birth.month(), birth.day()) {
        y -= 1;
    }
    y
}

struct Rx<'a> {
    drug: &'a str,
    day: i64,
    dose: f64,
}

/// One patient's retained records, kept in input order.
struct Person<'a> {
    birth: NaiveDate,
    male: bool,
    rx: Vec<Rx<'a>>,
    ev: Vec<(&'a str, i64)>,
}

/// The 27 attributes and the eligibility count of one pair, computed from scratch.
pub struct OracleResult {
    pub attrs: [f64; 27],
    pub n_patients_with_event: usize,
}

fn people<'a>(raw: &'a RawData, end: i64, p: &OracleParams) -> Vec<Person<'a>> {
    let mut out = Vec::new();
    let mut slot = std::collections::HashMap::new();
    for pt in &raw.patients {
        slot.insert(pt.patient_id.as_str(), (out.len(), days(pt.registration_date)));
        out.push(Person {
            birth: pt.birth_date,
            male: pt.male,
            rx: Vec::new(),
            ev: Vec::new(),
        });
    }
    for r in &raw.prescriptions {
        let (i, reg) = slot[r.patient_id.as_str()];
        let d = days(r.date);
        if d >= reg + p.registration_washout_days && d <= end - p.end_censor_days {
            out[i].rx.push(Rx {
                drug: r.drug.as_str(),
                day: d,
                dose: r.dosage,
            });
        }
    }
    for e in &raw.events {
        let (i, reg) = slot[e.patient_id.as_str()];
        let d = days(e.date);
        if d >= reg + p.registration_washout_days {
            out[i].ev.push((e.code.as_str(), d));
        }
    }
    out
}

pub fn oracle(raw: &RawData, end: NaiveDate, p: &OracleParams, drug_key: &str, outcome: &str) -> OracleResult {
    let persons = people(raw, days(end), p);
    let (lo, hi) = (p.window.lo as i64, p.window.hi as i64);
    let after = |r: &Rx, d: i64| d >= r.day + lo && d <= r.day + hi;
    let before = |r: &Rx, d: i64| d >= r.day - hi && d <= r.day - lo;
    let exact = |code: &str| code == outcome;
    let g4 = |code: &str| same_at(code, outcome, 4);
    let g3 = |code: &str| same_at(code, outcome, 3);

    // per cohort: n, hits, sums over all and over hits of age, male, dose, noise;
    // exact/g4/g3 counts after and before; background n and hits
    #[derive(Default, Clone, Copy)]
    struct Acc {
        n: f64,
        hit: f64,
        sum: [f64; 4],
        sum_hit: [f64; 4],
        counts: [f64; 6],
        bg_n: f64,
        bg_hit: f64,
    }
    let mut acc = [Acc::default(); 3];
    let mut first3 = 0.0;
    let mut first4 = 0.0;
    let mut multi = 0;
    let mut positive = 0;
    let mut with_event = 0;

    for person in &persons {
        let has_after = |r: &Rx| person.ev.iter().any(|&(c, d)| exact(c) && after(r, d));
        let mut any_after = false;
        for r in &person.rx {
            let in_y = !person
                .rx
                .iter()
                .any(|q| q.drug == r.drug && q.day < r.day && q.day >= r.day - p.washout_days);
            let in_z = !person.rx.iter().any(|q| {
                family(q.drug, p.family_depth) == family(r.drug, p.family_depth)
                    && q.day < r.day
                    && q.day >= r.day - p.washout_days
            });
            let member = [true, in_y, in_z];
            let hit = has_after(r);
            if !in_set(r.drug, drug_key) {
                for c in 0..3 {
                    if member[c] {
                        acc[c].bg_n += 1.0;
                        acc[c].bg_hit += hit as u8 as f64;
                    }
                }
                continue;
            }
            any_after |= hit;
            let mut near: Vec<&str> = person
                .rx
                .iter()
                .filter(|q| q.drug != r.drug && (q.day - r.day).abs() <= p.noise_days)
                .map(|q| q.drug)
                .collect();
            near.sort();
            near.dedup();
            let values = [
                age_years(person.birth, date(r.day)) as f64,
                if person.male { 1.0 } else { 0.0 },
                (r.dose * 1e6).round(),
                near.len() as f64,
            ];
            let count = |w: &dyn Fn(&Rx, i64) -> bool, m: &dyn Fn(&str) -> bool| {
                person.ev.iter().filter(|&&(c, d)| w(r, d) && m(c)).count() as f64
            };
            let counts = [
                count(&after, &exact),
                count(&before, &exact),
                count(&after, &g4),
                count(&before, &g4),
                count(&after, &g3),
                count(&before, &g3),
            ];
            for c in 0..3 {
                if !member[c] {
                    continue;
                }
                let a = &mut acc[c];
                a.n += 1.0;
                for k in 0..4 {
                    a.sum[k] += values[k];
                }
                if hit {
                    a.hit += 1.0;
                    for k in 0..4 {
                        a.sum_hit[k] += values[k];
                    }
                }
                for k in 0..6 {
                    a.counts[k] += counts[k];
                }
            }
            // occurrences that open the patient's level-3 / level-4 history
            for &(code, d) in &person.ev {
                if !(exact(code) && after(r, d)) {
                    continue;
                }
                let earlier = |k: usize| person.ev.iter().any(|&(c, x)| x < d && same_at(c, outcome, k));
                first3 += !earlier(3) as u8 as f64;
                first4 += !earlier(4) as u8 as f64;
            }
        }
        with_event += any_after as usize;

        let mut mine: Vec<&Rx> = person.rx.iter().filter(|r| in_set(r.drug, drug_key)).collect();
        mine.sort_by_key(|r| r.day);
        let mut starts: Vec<i64> = Vec::new();
        for r in &mine {
            if starts.last().is_none_or(|&s| r.day - s >= p.period_gap_days) {
                starts.push(r.day);
            }
        }
        if starts.len() < 2 {
            continue;
        }
        multi += 1;
        let pos = starts
            .iter()
            .filter(|&&s| mine.iter().any(|r| r.day == s && has_after(r)))
            .count();
        let any_before = mine
            .iter()
            .any(|r| person.ev.iter().any(|&(c, d)| exact(c) && before(r, d)));
        if pos >= 2 && !any_before {
            positive += 1;
        }
    }

    let mut attrs = [0.0; 27];
    let rate = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
    let haldane = |a: f64, b: f64| (a + 0.5) / (b + 0.5);
    for c in 0..3 {
        let a = &acc[c];
        attrs[c] = rate(a.hit, a.n) - rate(a.bg_hit, a.bg_n);
        let ratio = |k: usize| {
            if a.hit == 0.0 || a.n == 0.0 || a.sum[k] == 0.0 {
                1.0
            } else {
                (a.sum_hit[k] / a.hit) / (a.sum[k] / a.n)
            }
        };
        attrs[3 + c] = ratio(0);
        attrs[6 + c] = ratio(1);
        attrs[13 + c] = ratio(2);
        attrs[17 + c] = ratio(3);
        attrs[10 + c] = haldane(a.counts[0], a.counts[1]);
        attrs[21 + 2 * c] = haldane(a.counts[2], a.counts[3]);
        attrs[22 + 2 * c] = haldane(a.counts[4], a.counts[5]);
    }
    attrs[9] = level(outcome) as f64;
    attrs[16] = if multi == 0 { 0.0 } else { positive as f64 / multi as f64 };
    attrs[20] = haldane(first3, first4);

    OracleResult {
        attrs,
        n_patients_with_event: with_event,
    }
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    a == b || (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Distinct patients with `outcome` in the window after a retained prescription of
/// the drug key, straight from the raw records grouped by patient.
type Dated<'a> = Vec<(&'a str, i64)>;

pub struct PatientRecords<'a> {
    by_patient: std::collections::BTreeMap<&'a str, (i64, Dated<'a>, Dated<'a>)>,
    end: i64,
}

impl<'a> PatientRecords<'a> {
    pub fn new(raw: &'a RawData, end: NaiveDate) -> Self {
        let mut by_patient = std::collections::BTreeMap::new();
        for p in &raw.patients {
            by_patient.insert(p.patient_id.as_str(), (days(p.registration_date), Vec::new(), Vec::new()));
        }
        for r in &raw.prescriptions {
            by_patient.get_mut(r.patient_id.as_str()).unwrap().1.push((r.drug.as_str(), days(r.date)));
        }
        for e in &raw.events {
            by_patient.get_mut(e.patient_id.as_str()).unwrap().2.push((e.code.as_str(), days(e.date)));
        }
        PatientRecords { by_patient, end: days(end) }
    }

    pub fn exposed_with_event(&self, p: &OracleParams, drug_key: &str, outcome: &str) -> usize {
        let (lo, hi) = (p.window.lo as i64, p.window.hi as i64);
        self.by_patient
            .values()
            .filter(|(reg, rx, ev)| {
                let start = reg + p.registration_washout_days;
                rx.iter().any(|&(drug, day)| {
                    in_set(drug, drug_key)
                        && day >= start
                        && day <= self.end - p.end_censor_days
                        && ev.iter().any(|&(code, d)| code == outcome && d >= start && d >= day + lo && d <= day + hi)
                })
            })
            .count()
    }
}
