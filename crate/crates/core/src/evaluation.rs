//! Leave-one-group-out evaluation over feature subsets and the report files.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::Label;
use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::forest::{Dataset, Forest, TrainConfig};
use crate::metrics::{
    average_precision, confusion_at_threshold, delong_test, precision_at_k, recall_at_fpr, roc_auc,
    roc_points, ScoredPair,
};

pub const NATURAL_THRESHOLD: f64 = 0.5;
pub const RECALL_FPR_CAP: f64 = 0.05;
pub const AVERAGE_ROW: &str = "Overall Average";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureSubset {
    pub name: String,
    /// 1-based attribute numbers.
    pub indices: Vec<usize>,
}

impl FeatureSubset {
    pub fn named(name: &str) -> Result<FeatureSubset> {
        let range = match name {
            "all" => 1..=27,
            "bradford_hill" => 1..=17,
            "hierarchal" => 18..=27,
            "strength" => 1..=3,
            other => return Err(Error::Config(format!("unknown feature subset {other:?}"))),
        };
        Ok(FeatureSubset {
            name: name.to_string(),
            indices: range.collect(),
        })
    }

    pub fn standard() -> Vec<FeatureSubset> {
        ["all", "bradford_hill", "hierarchal", "strength"]
            .iter()
            .map(|n| FeatureSubset::named(n).expect("known subset"))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub group: String,
    pub subset: String,
    pub n_adr: usize,
    pub n_nadr: usize,
    pub auc: Option<f64>,
    pub ap: Option<f64>,
    pub p10: Option<f64>,
    pub fpr_natural: Option<f64>,
    pub recall_at_5pct_fpr: Option<f64>,
    pub chosen_mtry: Option<usize>,
    pub cv_auc_mean: Option<f64>,
    pub cv_auc_sd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeLongRow {
    pub group: String,
    pub baseline: String,
    pub comparison: String,
    pub auc_baseline: f64,
    pub auc_comparison: f64,
    pub z: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub group: String,
    pub subset: String,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Per group (sorted by name) and subset, followed by one average row per subset.
    pub reports: Vec<EvaluationReport>,
    pub delong: Vec<DeLongRow>,
    pub roc: Vec<RocPoint>,
}

impl Evaluation {
    pub fn average(&self, subset: &str) -> Option<&EvaluationReport> {
        self.reports
            .iter()
            .find(|r| r.group == AVERAGE_ROW && r.subset == subset)
    }

    pub fn group_reports(&self, subset: &str) -> impl Iterator<Item = &EvaluationReport> {
        let subset = subset.to_string();
        self.reports
            .iter()
            .filter(move |r| r.group != AVERAGE_ROW && r.subset == subset)
    }
}

/// Labelled pairs in canonical order, so results do not depend on input order.
fn labelled(vectors: &[FeatureVector]) -> Vec<&FeatureVector> {
    let mut out: Vec<&FeatureVector> = vectors.iter().filter(|v| v.pair.label != Label::Unknown).collect();
    out.sort_by(|a, b| {
        (&a.pair.group, &a.pair.drug_key, &a.pair.outcome).cmp(&(&b.pair.group, &b.pair.drug_key, &b.pair.outcome))
    });
    out
}

fn dataset(vectors: &[&FeatureVector], subset: &FeatureSubset) -> Result<Dataset> {
    let owned: Vec<FeatureVector> = vectors.iter().map(|v| (*v).clone()).collect();
    Dataset::from_vectors(&owned, &subset.indices)
}

fn score_group(
    train: &[&FeatureVector],
    test: &[&FeatureVector],
    subset: &FeatureSubset,
    config: &TrainConfig,
) -> Result<(Forest, Vec<ScoredPair>)> {
    let forest = Forest::fit(&dataset(train, subset)?, config)?.with_columns(&subset.indices);
    let scored = test
        .iter()
        .map(|v| ScoredPair {
            pair: v.pair.clone(),
            score: forest.predict_vector(v),
            truth: v.pair.label.is_adr(),
        })
        .collect();
    Ok((forest, scored))
}

fn report(group: &str, subset: &str, forest: &Forest, scored: &[ScoredPair]) -> EvaluationReport {
    let n_adr = scored.iter().filter(|s| s.truth).count();
    let cv = forest.cv_score();
    EvaluationReport {
        group: group.to_string(),
        subset: subset.to_string(),
        n_adr,
        n_nadr: scored.len() - n_adr,
        auc: roc_auc(scored).ok(),
        ap: average_precision(scored).ok(),
        p10: precision_at_k(scored, 10).ok(),
        fpr_natural: confusion_at_threshold(scored, NATURAL_THRESHOLD).fpr(),
        recall_at_5pct_fpr: recall_at_fpr(scored, RECALL_FPR_CAP).ok(),
        chosen_mtry: Some(forest.chosen_mtry),
        cv_auc_mean: cv.and_then(|c| c.mean_auc),
        cv_auc_sd: cv.and_then(|c| c.sd_auc),
    }
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn average_report(subset: &str, rows: &[&EvaluationReport]) -> EvaluationReport {
    EvaluationReport {
        group: AVERAGE_ROW.to_string(),
        subset: subset.to_string(),
        n_adr: rows.iter().map(|r| r.n_adr).sum(),
        n_nadr: rows.iter().map(|r| r.n_nadr).sum(),
        auc: mean_of(rows.iter().map(|r| r.auc)),
        ap: mean_of(rows.iter().map(|r| r.ap)),
        p10: mean_of(rows.iter().map(|r| r.p10)),
        fpr_natural: mean_of(rows.iter().map(|r| r.fpr_natural)),
        recall_at_5pct_fpr: mean_of(rows.iter().map(|r| r.recall_at_5pct_fpr)),
        chosen_mtry: None,
        cv_auc_mean: mean_of(rows.iter().map(|r| r.cv_auc_mean)),
        cv_auc_sd: mean_of(rows.iter().map(|r| r.cv_auc_sd)),
    }
}

/// Trains on every group but one and tests on the held-out group, per subset.
pub fn leave_one_group_out(
    vectors: &[FeatureVector],
    subsets: &[FeatureSubset],
    config: &TrainConfig,
) -> Result<Evaluation> {
    config.validate()?;
    if subsets.is_empty() {
        return Err(Error::Config("no feature subsets to evaluate".into()));
    }
    let data = labelled(vectors);
    let mut groups: Vec<&str> = data.iter().map(|v| v.pair.group.as_str()).collect();
    groups.sort_unstable();
    groups.dedup();
    if groups.len() < 2 {
        return Err(Error::DegenerateLabels(format!(
            "leave-one-group-out needs at least 2 groups, found {}",
            groups.len()
        )));
    }

    let jobs: Vec<(usize, usize)> = (0..groups.len())
        .flat_map(|g| (0..subsets.len()).map(move |s| (g, s)))
        .collect();
    type Job = Result<Option<(Forest, Vec<ScoredPair>)>>;
    let results: Vec<Job> = jobs
        .par_iter()
        .map(|&(g, s)| {
            let train: Vec<&FeatureVector> =
                data.iter().copied().filter(|v| v.pair.group != groups[g]).collect();
            let test: Vec<&FeatureVector> =
                data.iter().copied().filter(|v| v.pair.group == groups[g]).collect();
            match score_group(&train, &test, &subsets[s], config) {
                Ok(r) => Ok(Some(r)),
                Err(Error::DegenerateLabels(_)) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect();

    let mut reports = Vec::new();
    let mut scored_by_job = Vec::new();
    for (&(g, s), result) in jobs.iter().zip(results) {
        match result? {
            Some((forest, scored)) => {
                reports.push(report(groups[g], &subsets[s].name, &forest, &scored));
                scored_by_job.push(Some(scored));
            }
            None => {
                reports.push(EvaluationReport {
                    group: groups[g].to_string(),
                    subset: subsets[s].name.clone(),
                    n_adr: 0,
                    n_nadr: 0,
                    auc: None,
                    ap: None,
                    p10: None,
                    fpr_natural: None,
                    recall_at_5pct_fpr: None,
                    chosen_mtry: None,
                    cv_auc_mean: None,
                    cv_auc_sd: None,
                });
                scored_by_job.push(None);
            }
        }
    }
    if reports.iter().all(|r| r.auc.is_none()) {
        return Err(Error::DegenerateLabels(
            "no held-out group could be scored with both classes".into(),
        ));
    }

    let baseline = subsets.iter().position(|s| s.name == "all").unwrap_or(0);
    let mut delong = Vec::new();
    let mut roc = Vec::new();
    for (g, group) in groups.iter().enumerate() {
        let base = &scored_by_job[g * subsets.len() + baseline];
        for (s, subset) in subsets.iter().enumerate() {
            let Some(scored) = &scored_by_job[g * subsets.len() + s] else {
                continue;
            };
            if let Ok(points) = roc_points(scored) {
                roc.extend(points.into_iter().map(|(fpr, tpr)| RocPoint {
                    group: group.to_string(),
                    subset: subset.name.clone(),
                    fpr,
                    tpr,
                }));
            }
            if s == baseline {
                continue;
            }
            let Some(base) = base else { continue };
            let labels: Vec<bool> = base.iter().map(|p| p.truth).collect();
            let a: Vec<f64> = base.iter().map(|p| p.score).collect();
            let b: Vec<f64> = scored.iter().map(|p| p.score).collect();
            if let Ok(t) = delong_test(&a, &b, &labels) {
                delong.push(DeLongRow {
                    group: group.to_string(),
                    baseline: subsets[baseline].name.clone(),
                    comparison: subset.name.clone(),
                    auc_baseline: t.auc_a,
                    auc_comparison: t.auc_b,
                    z: t.z,
                    p_value: t.p,
                });
            }
        }
    }

    for subset in subsets {
        let rows: Vec<&EvaluationReport> = reports.iter().filter(|r| r.subset == subset.name).collect();
        let avg = average_report(&subset.name, &rows);
        reports.push(avg);
    }
    Ok(Evaluation { reports, delong, roc })
}

/// Category of a 1-based attribute number.
pub fn attr_category(k: usize) -> &'static str {
    match k {
        1..=3 => "Strength",
        4..=10 => "Specificity",
        11..=13 => "Temporality",
        14..=16 => "Biological Gradient",
        17 => "Experimentation",
        _ => "Hierarchal",
    }
}

/// Cohort of a 1-based attribute number, `-` when it spans none.
pub fn attr_set(k: usize) -> &'static str {
    match k {
        10 | 17 => "-",
        21..=23 => "X",
        24 | 25 => "Y",
        26 | 27 => "Z",
        1..=9 => ["X", "Y", "Z"][(k - 1) % 3],
        11..=16 => ["X", "Y", "Z"][(k - 11) % 3],
        _ => ["X", "Y", "Z"][(k - 18) % 3],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRow {
    pub category: String,
    pub set: String,
    pub attr: usize,
    pub gini_decrease: f64,
}

/// Importance of every attribute for a forest fitted on all labelled pairs.
pub fn importance_table(vectors: &[FeatureVector], config: &TrainConfig) -> Result<Vec<ImportanceRow>> {
    let all = FeatureSubset::named("all")?;
    let forest = Forest::fit(&dataset(&labelled(vectors), &all)?, config)?;
    Ok(forest
        .ranked_importance()
        .into_iter()
        .map(|(i, g)| {
            let k = all.indices[i];
            ImportanceRow {
                category: attr_category(k).to_string(),
                set: attr_set(k).to_string(),
                attr: k,
                gini_decrease: g,
            }
        })
        .collect())
}

/// Fixed six-decimal formatting; `NA` for undefined values.
pub fn fmt6(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:.6}"),
        Some(x) if x.is_nan() => "NA".to_string(),
        Some(x) => if x > 0.0 { "Inf" } else { "-Inf" }.to_string(),
        None => "NA".to_string(),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn report_csv(reports: &[EvaluationReport]) -> String {
    let mut s = String::from(
        "group,subset,n_adr,n_nadr,auc,ap,p10,fpr_natural,recall_at_5pct_fpr,chosen_mtry,cv_auc_mean,cv_auc_sd\n",
    );
    for r in reports {
        let mtry = r.chosen_mtry.map_or("NA".to_string(), |m| m.to_string());
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.group,
            r.subset,
            r.n_adr,
            r.n_nadr,
            fmt6(r.auc),
            fmt6(r.ap),
            fmt6(r.p10),
            fmt6(r.fpr_natural),
            fmt6(r.recall_at_5pct_fpr),
            mtry,
            fmt6(r.cv_auc_mean),
            fmt6(r.cv_auc_sd)
        );
    }
    s
}

pub fn delong_csv(rows: &[DeLongRow]) -> String {
    let mut s = String::from("group,baseline,comparison,auc_baseline,auc_comparison,z,p_value\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.group,
            r.baseline,
            r.comparison,
            fmt6(Some(r.auc_baseline)),
            fmt6(Some(r.auc_comparison)),
            fmt6(Some(r.z)),
            fmt6(Some(r.p_value))
        );
    }
    s
}

pub fn importance_csv(rows: &[ImportanceRow]) -> String {
    let mut s = String::from("category,set,attr,gini_decrease\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},attr{},{}",
            r.category,
            r.set,
            r.attr,
            fmt6(Some(r.gini_decrease))
        );
    }
    s
}

pub fn roc_csv(points: &[RocPoint]) -> String {
    let mut s = String::from("group,subset,fpr,tpr\n");
    for p in points {
        let _ = writeln!(s, "{},{},{},{}", p.group, p.subset, fmt6(Some(p.fpr)), fmt6(Some(p.tpr)));
    }
    s
}

pub fn write_reports(dir: &Path, evaluation: &Evaluation, importance: &[ImportanceRow]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_text(&dir.join("report.csv"), &report_csv(&evaluation.reports))?;
    write_text(&dir.join("delong.csv"), &delong_csv(&evaluation.delong))?;
    write_text(&dir.join("importance.csv"), &importance_csv(importance))?;
    write_text(&dir.join("roc_points.csv"), &roc_csv(&evaluation.roc))
}
