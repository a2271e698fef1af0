//! Immutable longitudinal store of patients, prescriptions and clinical
//! events.
//!
//! Ingest applies the data-quality filters (registration washout for all
//! records, end-of-collection censoring for prescriptions) and builds
//! per-patient time-sorted tables plus per-drug, per-code and level-3
//! prefix inverted indexes.

use std::collections::HashMap;
use std::ops::Range;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codes::{DrugCode, EventCode};
use crate::error::{Error, Result};

/// Day number (days since 0001-01-01, proleptic Gregorian).
pub type Day = i32;

pub type PatientIdx = u32;
pub type DrugId = u32;
pub type CodeId = u32;

pub const DATE_FORMAT: &str = "%Y-%m-%d";

/// Fixed-point scale applied to dosages so that sums are exact.
pub const DOSE_SCALE: f64 = 1e6;

pub fn day_of(date: NaiveDate) -> Day {
    date.num_days_from_ce()
}

pub fn date_of(day: Day) -> NaiveDate {
    NaiveDate::from_num_days_from_ce_opt(day).expect("day number within chrono range")
}

pub fn parse_date(text: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(text.trim(), DATE_FORMAT).ok()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patient {
    pub patient_id: String,
    pub birth_date: NaiveDate,
    pub male: bool,
    pub registration_date: NaiveDate,
    pub end_date: NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prescription {
    pub patient_id: String,
    pub drug: DrugCode,
    pub date: NaiveDate,
    pub dosage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClinicalEvent {
    pub patient_id: String,
    pub code: EventCode,
    pub date: NaiveDate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreConfig {
    pub registration_washout_days: i64,
    pub end_censor_days: i64,
    pub observation_end: NaiveDate,
}

impl StoreConfig {
    pub fn new(observation_end: NaiveDate) -> Self {
        StoreConfig {
            registration_washout_days: 365,
            end_censor_days: 30,
            observation_end,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.registration_washout_days < 0 || self.end_censor_days < 0 {
            return Err(Error::Config(
                "registration washout and end censoring must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Unfiltered records as read from the input files.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawData {
    pub patients: Vec<Patient>,
    pub prescriptions: Vec<Prescription>,
    pub events: Vec<ClinicalEvent>,
}

impl RawData {
    pub fn load(patients: &Path, prescriptions: &Path, events: &Path) -> Result<Self> {
        Ok(RawData {
            patients: read_patients(patients)?,
            prescriptions: read_prescriptions(prescriptions)?,
            events: read_events(events)?,
        })
    }

    /// Latest prescription or event date, the default end of collection.
    pub fn latest_record_date(&self) -> Option<NaiveDate> {
        let p = self.prescriptions.iter().map(|p| p.date);
        let e = self.events.iter().map(|e| e.date);
        p.chain(e).max()
    }

    /// Records of the patients assigned to shard `k` (0-based) of `m`.
    pub fn shard(&self, k: usize, m: usize) -> RawData {
        let keep = |id: &str| shard_of(id, m) == k;
        RawData {
            patients: self
                .patients
                .iter()
                .filter(|p| keep(&p.patient_id))
                .cloned()
                .collect(),
            prescriptions: self
                .prescriptions
                .iter()
                .filter(|p| keep(&p.patient_id))
                .cloned()
                .collect(),
            events: self
                .events
                .iter()
                .filter(|e| keep(&e.patient_id))
                .cloned()
                .collect(),
        }
    }
}

impl RawData {
    /// Writes `patients.csv`, `prescriptions.csv` and `events.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        use std::io::Write;
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let open = |name: &str| -> Result<(std::path::PathBuf, std::io::BufWriter<std::fs::File>)> {
            let path = dir.join(name);
            let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            Ok((path, std::io::BufWriter::new(file)))
        };
        let fmt = |d: NaiveDate| d.format(DATE_FORMAT).to_string();

        let (path, mut w) = open("patients.csv")?;
        let io = |e| Error::io(&path, e);
        writeln!(w, "patient_id,birth_date,gender,registration_date,end_date").map_err(io)?;
        for p in &self.patients {
            let gender = if p.male { "M" } else { "F" };
            writeln!(
                w,
                "{},{},{},{},{}",
                p.patient_id,
                fmt(p.birth_date),
                gender,
                fmt(p.registration_date),
                fmt(p.end_date)
            )
            .map_err(io)?;
        }
        w.flush().map_err(io)?;

        let (path, mut w) = open("prescriptions.csv")?;
        let io = |e| Error::io(&path, e);
        writeln!(w, "patient_id,drugcode,date,dosage").map_err(io)?;
        for p in &self.prescriptions {
            writeln!(w, "{},{},{},{}", p.patient_id, p.drug, fmt(p.date), p.dosage).map_err(io)?;
        }
        w.flush().map_err(io)?;

        let (path, mut w) = open("events.csv")?;
        let io = |e| Error::io(&path, e);
        writeln!(w, "patient_id,readcode,date").map_err(io)?;
        for e in &self.events {
            writeln!(w, "{},{},{}", e.patient_id, e.code, fmt(e.date)).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// Stable shard assignment of a patient id.
pub fn shard_of(patient_id: &str, m: usize) -> usize {
    let digest = Sha256::digest(patient_id.as_bytes());
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    (u64::from_le_bytes(head) % m.max(1) as u64) as usize
}

fn open_csv(path: &Path) -> Result<(csv::Reader<std::fs::File>, String)> {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    Ok((reader, name))
}

fn check_header(
    reader: &mut csv::Reader<std::fs::File>,
    name: &str,
    expected: &[&str],
) -> Result<()> {
    let header = reader
        .headers()
        .map_err(|e| Error::parse(name, 1, e.to_string()))?;
    let got: Vec<&str> = header.iter().collect();
    if got != expected {
        return Err(Error::parse(
            name,
            1,
            format!("expected header {:?}, found {:?}", expected.join(","), got.join(",")),
        ));
    }
    Ok(())
}

fn date_field(name: &str, row: usize, field: &str, text: &str) -> Result<NaiveDate> {
    parse_date(text).ok_or_else(|| Error::parse(name, row, format!("unparseable {field} {text:?}")))
}

fn for_each_record(
    reader: &mut csv::Reader<std::fs::File>,
    name: &str,
    width: usize,
    mut f: impl FnMut(usize, &csv::StringRecord) -> Result<()>,
) -> Result<()> {
    let mut record = csv::StringRecord::new();
    let mut row = 1;
    loop {
        row += 1;
        match reader.read_record(&mut record) {
            Ok(false) => return Ok(()),
            Ok(true) => {
                if record.len() != width {
                    return Err(Error::parse(
                        name,
                        row,
                        format!("expected {width} fields, found {}", record.len()),
                    ));
                }
                f(row, &record)?;
            }
            Err(e) => return Err(Error::parse(name, row, e.to_string())),
        }
    }
}

pub fn read_patients(path: &Path) -> Result<Vec<Patient>> {
    let (mut reader, name) = open_csv(path)?;
    check_header(
        &mut reader,
        &name,
        &["patient_id", "birth_date", "gender", "registration_date", "end_date"],
    )?;
    let mut out = Vec::new();
    for_each_record(&mut reader, &name, 5, |row, r| {
        let male = match &r[2] {
            "M" => true,
            "F" | "U" => false,
            other => return Err(Error::parse(&name, row, format!("unknown gender {other:?}"))),
        };
        let patient = Patient {
            patient_id: r[0].to_string(),
            birth_date: date_field(&name, row, "birth_date", &r[1])?,
            male,
            registration_date: date_field(&name, row, "registration_date", &r[3])?,
            end_date: date_field(&name, row, "end_date", &r[4])?,
        };
        if patient.patient_id.is_empty() {
            return Err(Error::parse(&name, row, "empty patient_id"));
        }
        if !(patient.birth_date <= patient.registration_date
            && patient.registration_date <= patient.end_date)
        {
            return Err(Error::parse(
                &name,
                row,
                "dates must satisfy birth_date <= registration_date <= end_date",
            ));
        }
        out.push(patient);
        Ok(())
    })?;
    Ok(out)
}

pub fn read_prescriptions(path: &Path) -> Result<Vec<Prescription>> {
    let (mut reader, name) = open_csv(path)?;
    check_header(&mut reader, &name, &["patient_id", "drugcode", "date", "dosage"])?;
    let mut out = Vec::new();
    for_each_record(&mut reader, &name, 4, |row, r| {
        let dosage: f64 = r[3]
            .parse()
            .map_err(|_| Error::parse(&name, row, format!("unparseable dosage {:?}", &r[3])))?;
        if !dosage.is_finite() || dosage < 0.0 {
            return Err(Error::parse(&name, row, "dosage must be a non-negative number"));
        }
        if r[1].is_empty() {
            return Err(Error::parse(&name, row, "empty drugcode"));
        }
        out.push(Prescription {
            patient_id: r[0].to_string(),
            drug: DrugCode::new(&r[1]),
            date: date_field(&name, row, "date", &r[2])?,
            dosage,
        });
        Ok(())
    })?;
    Ok(out)
}

pub fn read_events(path: &Path) -> Result<Vec<ClinicalEvent>> {
    let (mut reader, name) = open_csv(path)?;
    check_header(&mut reader, &name, &["patient_id", "readcode", "date"])?;
    let mut out = Vec::new();
    for_each_record(&mut reader, &name, 3, |row, r| {
        let code = EventCode::new(&r[1]).map_err(|e| Error::parse(&name, row, e.to_string()))?;
        out.push(ClinicalEvent {
            patient_id: r[0].to_string(),
            code,
            date: date_field(&name, row, "date", &r[2])?,
        });
        Ok(())
    })?;
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct PatientEntry {
    pub patient_id: String,
    pub birth_date: NaiveDate,
    pub male: bool,
    pub registration_date: NaiveDate,
    pub end_date: NaiveDate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StoredPrescription {
    pub patient: PatientIdx,
    pub day: Day,
    pub drug: DrugId,
    /// Dosage in units of `1 / DOSE_SCALE`.
    pub dose: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StoredEvent {
    pub patient: PatientIdx,
    pub day: Day,
    pub code: CodeId,
}

/// Counts of records seen and dropped at ingest.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct IngestSummary {
    pub patients: usize,
    pub prescriptions_read: usize,
    pub prescriptions_washout: usize,
    pub prescriptions_censored: usize,
    pub events_read: usize,
    pub events_washout: usize,
}

impl IngestSummary {
    pub fn prescriptions_kept(&self) -> usize {
        self.prescriptions_read - self.prescriptions_washout - self.prescriptions_censored
    }

    pub fn events_kept(&self) -> usize {
        self.events_read - self.events_washout
    }
}

/// A clinical event borrowed from the store.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventView<'a> {
    pub code: &'a EventCode,
    pub date: NaiveDate,
}

#[derive(Debug)]
pub struct EventStore {
    config: StoreConfig,
    patients: Vec<PatientEntry>,
    patient_index: HashMap<String, PatientIdx>,
    drugs: Vec<DrugCode>,
    drug_index: HashMap<DrugCode, DrugId>,
    codes: Vec<EventCode>,
    code_index: HashMap<String, CodeId>,
    prescriptions: Vec<StoredPrescription>,
    patient_prescriptions: Vec<Range<u32>>,
    events: Vec<StoredEvent>,
    patient_events: Vec<Range<u32>>,
    by_drug: Vec<Vec<u32>>,
    by_code: Vec<Vec<u32>>,
    by_prefix3: HashMap<String, Vec<u32>>,
    summary: IngestSummary,
}

fn ranges(len: usize, keys: impl Iterator<Item = PatientIdx>) -> Vec<Range<u32>> {
    let mut out = vec![0..0; len];
    let mut start = 0u32;
    let mut pos = 0u32;
    let mut current: Option<PatientIdx> = None;
    for key in keys {
        if current != Some(key) {
            if let Some(c) = current {
                out[c as usize] = start..pos;
            }
            current = Some(key);
            start = pos;
        }
        pos += 1;
    }
    if let Some(c) = current {
        out[c as usize] = start..pos;
    }
    out
}

impl EventStore {
    pub fn ingest(raw: &RawData, config: StoreConfig) -> Result<Self> {
        config.validate()?;
        let mut summary = IngestSummary {
            patients: raw.patients.len(),
            prescriptions_read: raw.prescriptions.len(),
            events_read: raw.events.len(),
            ..Default::default()
        };

        let mut sorted_patients: Vec<&Patient> = raw.patients.iter().collect();
        sorted_patients.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
        let mut patients = Vec::with_capacity(sorted_patients.len());
        let mut patient_index = HashMap::with_capacity(sorted_patients.len());
        for p in sorted_patients {
            let idx = patients.len() as PatientIdx;
            if patient_index.insert(p.patient_id.clone(), idx).is_some() {
                return Err(Error::parse(
                    "patients.csv",
                    0,
                    format!("duplicate patient id {:?}", p.patient_id),
                ));
            }
            patients.push(PatientEntry {
                patient_id: p.patient_id.clone(),
                birth_date: p.birth_date,
                male: p.male,
                registration_date: p.registration_date,
                end_date: p.end_date,
            });
        }

        let washout = config.registration_washout_days as Day;
        let censor_from = day_of(config.observation_end) - config.end_censor_days as Day;

        // Interning in sorted order keeps ids independent of input order.
        let mut drug_names: Vec<&DrugCode> = raw.prescriptions.iter().map(|p| &p.drug).collect();
        drug_names.sort();
        drug_names.dedup();
        let drugs: Vec<DrugCode> = drug_names.into_iter().cloned().collect();
        let drug_index: HashMap<DrugCode, DrugId> = drugs
            .iter()
            .enumerate()
            .map(|(i, d)| (d.clone(), i as DrugId))
            .collect();

        let mut code_names: Vec<&EventCode> = raw.events.iter().map(|e| &e.code).collect();
        code_names.sort();
        code_names.dedup();
        let codes: Vec<EventCode> = code_names.into_iter().cloned().collect();
        let code_index: HashMap<String, CodeId> = codes
            .iter()
            .enumerate()
            .map(|(i, c)| (c.as_str().to_string(), i as CodeId))
            .collect();

        let mut prescriptions = Vec::with_capacity(raw.prescriptions.len());
        for (i, p) in raw.prescriptions.iter().enumerate() {
            let patient = *patient_index
                .get(&p.patient_id)
                .ok_or_else(|| Error::UnknownPatient {
                    file: "prescriptions.csv".into(),
                    row: i + 2,
                    patient_id: p.patient_id.clone(),
                })?;
            let day = day_of(p.date);
            let reg = day_of(patients[patient as usize].registration_date);
            if day < reg + washout {
                summary.prescriptions_washout += 1;
                continue;
            }
            if day > censor_from {
                summary.prescriptions_censored += 1;
                continue;
            }
            prescriptions.push(StoredPrescription {
                patient,
                day,
                drug: drug_index[&p.drug],
                dose: (p.dosage * DOSE_SCALE).round() as u64,
            });
        }
        prescriptions.sort_unstable_by_key(|p| (p.patient, p.day, p.drug, p.dose));

        let mut events = Vec::with_capacity(raw.events.len());
        for (i, e) in raw.events.iter().enumerate() {
            let patient = *patient_index
                .get(&e.patient_id)
                .ok_or_else(|| Error::UnknownPatient {
                    file: "events.csv".into(),
                    row: i + 2,
                    patient_id: e.patient_id.clone(),
                })?;
            let day = day_of(e.date);
            let reg = day_of(patients[patient as usize].registration_date);
            if day < reg + washout {
                summary.events_washout += 1;
                continue;
            }
            events.push(StoredEvent {
                patient,
                day,
                code: code_index[e.code.as_str()],
            });
        }
        events.sort_unstable_by_key(|e| (e.patient, e.day, e.code));

        let patient_prescriptions = ranges(patients.len(), prescriptions.iter().map(|p| p.patient));
        let patient_events = ranges(patients.len(), events.iter().map(|e| e.patient));

        let mut by_drug = vec![Vec::new(); drugs.len()];
        for (i, p) in prescriptions.iter().enumerate() {
            by_drug[p.drug as usize].push(i as u32);
        }
        let mut by_code = vec![Vec::new(); codes.len()];
        let mut by_prefix3: HashMap<String, Vec<u32>> = HashMap::new();
        for (i, e) in events.iter().enumerate() {
            by_code[e.code as usize].push(i as u32);
            if let Some(prefix) = codes[e.code as usize].prefix(3) {
                by_prefix3.entry(prefix.to_string()).or_default().push(i as u32);
            }
        }

        Ok(EventStore {
            config,
            patients,
            patient_index,
            drugs,
            drug_index,
            codes,
            code_index,
            prescriptions,
            patient_prescriptions,
            events,
            patient_events,
            by_drug,
            by_code,
            by_prefix3,
            summary,
        })
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    pub fn summary(&self) -> IngestSummary {
        self.summary
    }

    pub fn patients(&self) -> &[PatientEntry] {
        &self.patients
    }

    pub fn patient(&self, idx: PatientIdx) -> &PatientEntry {
        &self.patients[idx as usize]
    }

    pub fn patient_idx(&self, patient_id: &str) -> Option<PatientIdx> {
        self.patient_index.get(patient_id).copied()
    }

    pub fn drugs(&self) -> &[DrugCode] {
        &self.drugs
    }

    pub fn drug(&self, id: DrugId) -> &DrugCode {
        &self.drugs[id as usize]
    }

    pub fn drug_id(&self, drug: &DrugCode) -> Option<DrugId> {
        self.drug_index.get(drug).copied()
    }

    pub fn codes(&self) -> &[EventCode] {
        &self.codes
    }

    pub fn code(&self, id: CodeId) -> &EventCode {
        &self.codes[id as usize]
    }

    pub fn code_id(&self, code: &EventCode) -> Option<CodeId> {
        self.code_index.get(code.as_str()).copied()
    }

    pub fn prescriptions(&self) -> &[StoredPrescription] {
        &self.prescriptions
    }

    pub fn events(&self) -> &[StoredEvent] {
        &self.events
    }

    pub fn patient_prescription_range(&self, idx: PatientIdx) -> Range<usize> {
        let r = &self.patient_prescriptions[idx as usize];
        r.start as usize..r.end as usize
    }

    pub fn patient_prescriptions(&self, idx: PatientIdx) -> &[StoredPrescription] {
        &self.prescriptions[self.patient_prescription_range(idx)]
    }

    pub fn patient_events(&self, idx: PatientIdx) -> &[StoredEvent] {
        let r = &self.patient_events[idx as usize];
        &self.events[r.start as usize..r.end as usize]
    }

    /// Indexes into [`prescriptions`](Self::prescriptions) for one drug, in (patient, day) order.
    pub fn prescriptions_of(&self, drug: DrugId) -> &[u32] {
        &self.by_drug[drug as usize]
    }

    /// Indexes into [`events`](Self::events) for one code, in (patient, day) order.
    pub fn events_of(&self, code: CodeId) -> &[u32] {
        &self.by_code[code as usize]
    }

    /// Indexes of all events whose level-3 parent is `prefix`.
    pub fn events_with_prefix3(&self, prefix: &str) -> &[u32] {
        self.by_prefix3.get(prefix).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn dosage(&self, p: &StoredPrescription) -> f64 {
        p.dose as f64 / DOSE_SCALE
    }

    /// Events with `anchor + lo <= date <= anchor + hi` matching `predicate`, date-ordered.
    pub fn events_in_window(
        &self,
        patient_id: &str,
        anchor: NaiveDate,
        lo: i64,
        hi: i64,
        predicate: impl Fn(&EventCode) -> bool,
    ) -> Vec<EventView<'_>> {
        let Some(idx) = self.patient_idx(patient_id) else {
            return Vec::new();
        };
        let anchor = day_of(anchor);
        let (from, to) = (anchor + lo as Day, anchor + hi as Day);
        let events = self.patient_events(idx);
        let start = events.partition_point(|e| e.day < from);
        events[start..]
            .iter()
            .take_while(|e| e.day <= to)
            .filter(|e| predicate(self.code(e.code)))
            .map(|e| EventView {
                code: self.code(e.code),
                date: date_of(e.day),
            })
            .collect()
    }

    pub fn age_at(&self, patient_id: &str, date: NaiveDate) -> Result<i32> {
        let idx = self
            .patient_idx(patient_id)
            .ok_or_else(|| Error::NoSuchPatient(patient_id.to_string()))?;
        completed_years(self.patient(idx).birth_date, date)
    }

    /// SHA-256 over a canonical listing of every stored record.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        let c = &self.config;
        hasher.update(
            format!(
                "cfg {} {} {}\n",
                c.registration_washout_days, c.end_censor_days, c.observation_end
            )
            .as_bytes(),
        );
        for p in &self.patients {
            hasher.update(
                format!(
                    "P {} {} {} {} {}\n",
                    p.patient_id, p.birth_date, p.male as u8, p.registration_date, p.end_date
                )
                .as_bytes(),
            );
        }
        for p in &self.prescriptions {
            hasher.update(
                format!(
                    "R {} {} {} {}\n",
                    self.patients[p.patient as usize].patient_id,
                    self.drug(p.drug),
                    p.day,
                    p.dose
                )
                .as_bytes(),
            );
        }
        for e in &self.events {
            hasher.update(
                format!(
                    "E {} {} {}\n",
                    self.patients[e.patient as usize].patient_id,
                    self.code(e.code),
                    e.day
                )
                .as_bytes(),
            );
        }
        hex_string(&hasher.finalize())
    }
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Whole years from `birth` to `date`.
pub fn completed_years(birth: NaiveDate, date: NaiveDate) -> Result<i32> {
    if date < birth {
        return Err(Error::BeforeBirth {
            date: date.to_string(),
            birth: birth.to_string(),
        });
    }
    let mut years = date.year() - birth.year();
    if (date.month(), date.day()) < (birth.month(), birth.day()) {
        years -= 1;
    }
    Ok(years)
}
