//! Multi-label metrics and threshold calibration.
//!
//! Predicted sets come from a single probability cutoff applied to every
//! label. Precision, recall and F1 are micro-averaged; accuracy is exact set
//! equality. Thresholds are searched over a fixed grid (0.01 to 0.99 by
//! default) with ties going to the smaller threshold.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::io::{Read, Write};
use std::str::FromStr;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hisco::{HiscoCode, LabelSpace};
use crate::ingest::CleanDataset;
use crate::nn::{Checkpoint, ModelError};
use crate::textenc::LanguageTag;

#[derive(Debug, Error)]
pub enum CalibrateError {
    #[error("no predictions: every predicted set is empty")]
    NoPredictions,
    #[error("metric undefined at every grid point")]
    AllUndefined,
    #[error("invalid prediction matrix: {0}")]
    Invalid(String),
    #[error("unknown metric {0:?}")]
    UnknownMetric(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Accuracy,
    F1,
    Precision,
    Recall,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Accuracy, Metric::F1, Metric::Precision, Metric::Recall];

    pub fn label(&self) -> &'static str {
        match self {
            Metric::Accuracy => "Accuracy",
            Metric::F1 => "F1 score",
            Metric::Precision => "Precision",
            Metric::Recall => "Recall",
        }
    }

    pub fn key(&self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::F1 => "f1",
            Metric::Precision => "precision",
            Metric::Recall => "recall",
        }
    }
}

impl FromStr for Metric {
    type Err = CalibrateError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Metric::ALL
            .into_iter()
            .find(|m| m.key().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| CalibrateError::UnknownMetric(s.to_string()))
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// Per-record probabilities with their target index sets and languages.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrix {
    probs: Array2<f64>,
    targets: Vec<Vec<usize>>,
    langs: Vec<LanguageTag>,
}

impl PredictionMatrix {
    pub fn new(probs: Array2<f64>, targets: Vec<Vec<usize>>, langs: Vec<LanguageTag>) -> Result<Self, CalibrateError> {
        let n = probs.nrows();
        let l = probs.ncols();
        if targets.len() != n || langs.len() != n {
            return Err(CalibrateError::Invalid(format!(
                "{n} probability rows, {} target rows, {} languages",
                targets.len(),
                langs.len()
            )));
        }
        let mut targets = targets;
        for (i, t) in targets.iter_mut().enumerate() {
            t.sort_unstable();
            t.dedup();
            if t.is_empty() {
                return Err(CalibrateError::Invalid(format!("row {i} has no targets")));
            }
            if t.iter().any(|&j| j >= l) {
                return Err(CalibrateError::Invalid(format!("row {i} has a target outside 0..{l}")));
            }
        }
        if probs.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
            return Err(CalibrateError::Invalid("probabilities must lie strictly inside (0,1)".into()));
        }
        Ok(Self { probs, targets, langs })
    }

    /// Runs the checkpoint over `ds`. With `lang_override`, every record is
    /// presented with that tag instead of its own (e.g. `Unk` for the
    /// no-language-information setting); the stored languages stay the originals.
    pub fn from_checkpoint(
        ckpt: &Checkpoint,
        ds: &CleanDataset,
        lang_override: Option<LanguageTag>,
    ) -> Result<Self, CalibrateError> {
        let inputs: Vec<(LanguageTag, String)> =
            ds.records.iter().map(|r| (lang_override.unwrap_or(r.lang), r.text.clone())).collect();
        let probs = crate::nn::train::probabilities(&ckpt.model, &inputs)?;
        let targets = ds
            .records
            .iter()
            .map(|r| ckpt.labels.indices(r.targets()))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CalibrateError::Invalid(e.to_string()))?;
        Self::new(probs, targets, ds.records.iter().map(|r| r.lang).collect())
    }

    pub fn len(&self) -> usize {
        self.probs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.nrows() == 0
    }

    pub fn label_count(&self) -> usize {
        self.probs.ncols()
    }

    pub fn probs(&self) -> &Array2<f64> {
        &self.probs
    }

    pub fn targets(&self) -> &[Vec<usize>] {
        &self.targets
    }

    pub fn langs(&self) -> &[LanguageTag] {
        &self.langs
    }

    /// Rows whose language is `lang`.
    pub fn subset(&self, lang: LanguageTag) -> Self {
        let rows: Vec<usize> = (0..self.len()).filter(|&i| self.langs[i] == lang).collect();
        let probs = self.probs.select(ndarray::Axis(0), &rows);
        Self { probs, targets: rows.iter().map(|&i| self.targets[i].clone()).collect(), langs: vec![lang; rows.len()] }
    }

    /// Languages present, in tag order.
    pub fn languages(&self) -> Vec<LanguageTag> {
        let mut l = self.langs.clone();
        l.sort();
        l.dedup();
        l
    }

    /// CSV with header `lang,targets,<code>...`; targets are `;`-joined codes.
    pub fn write_csv<W: Write>(&self, writer: W, space: &LabelSpace) -> Result<(), CalibrateError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["lang".to_string(), "targets".to_string()];
        header.extend(space.codes().iter().map(|c| c.to_string()));
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![
                self.langs[i].to_string(),
                self.targets[i].iter().map(|&j| space.codes()[j].to_string()).collect::<Vec<_>>().join(";"),
            ];
            rec.extend(self.probs.row(i).iter().map(|p| p.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the CSV written by [`PredictionMatrix::write_csv`]; the code
    /// columns define the label space.
    pub fn read_csv<R: Read>(reader: R) -> Result<(Self, LabelSpace), CalibrateError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.len() < 3 || &header[0] != "lang" || &header[1] != "targets" {
            return Err(CalibrateError::Invalid("expected header `lang,targets,<code>...`".into()));
        }
        let codes = header
            .iter()
            .skip(2)
            .map(HiscoCode::parse)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CalibrateError::Invalid(e.to_string()))?;
        let space = LabelSpace::new(codes).map_err(|e| CalibrateError::Invalid(e.to_string()))?;
        let l = space.len();
        let mut probs = Vec::new();
        let mut targets = Vec::new();
        let mut langs = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let bad = |m: String| CalibrateError::Invalid(format!("row {}: {m}", i + 1));
            langs.push(rec[0].parse::<LanguageTag>().map_err(|e| bad(e.to_string()))?);
            let t = rec[1]
                .split(';')
                .filter(|s| !s.trim().is_empty())
                .map(|s| {
                    let c = HiscoCode::parse(s).map_err(|e| bad(e.to_string()))?;
                    space.index_of(&c).ok_or_else(|| bad(format!("unknown code {c}")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            targets.push(t);
            for j in 0..l {
                probs.push(rec[2 + j].trim().parse::<f64>().map_err(|e| bad(e.to_string()))?);
            }
        }
        let n = langs.len();
        let probs = Array2::from_shape_vec((n, l), probs).map_err(|e| CalibrateError::Invalid(e.to_string()))?;
        Ok((Self::new(probs, targets, langs)?, space))
    }
}

/// Index sets `{j : p[i][j] >= threshold}`; empty sets are kept.
pub fn set_predictions(probs: &Array2<f64>, threshold: f64) -> Vec<Vec<usize>> {
    probs
        .rows()
        .into_iter()
        .map(|row| row.iter().enumerate().filter(|(_, &p)| p >= threshold).map(|(j, _)| j).collect())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub n: usize,
}

/// Pooled counts from which every metric is derived.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counts {
    pub n: usize,
    pub exact: usize,
    pub true_pos: usize,
    pub predicted: usize,
    pub actual: usize,
}

impl Counts {
    pub fn report(&self) -> Result<MetricReport, CalibrateError> {
        if self.predicted == 0 {
            return Err(CalibrateError::NoPredictions);
        }
        let precision = self.true_pos as f64 / self.predicted as f64;
        let recall = self.true_pos as f64 / self.actual as f64;
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        Ok(MetricReport { accuracy: self.exact as f64 / self.n as f64, precision, recall, f1, n: self.n })
    }
}

impl MetricReport {
    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Accuracy => self.accuracy,
            Metric::Precision => self.precision,
            Metric::Recall => self.recall,
            Metric::F1 => self.f1,
        }
    }
}

fn sorted_set(v: &[usize]) -> Vec<usize> {
    let mut s = v.to_vec();
    s.sort_unstable();
    s.dedup();
    s
}

/// Exact-match accuracy and micro precision/recall/F1.
pub fn compute_metrics(pred: &[Vec<usize>], targets: &[Vec<usize>]) -> Result<MetricReport, CalibrateError> {
    if pred.len() != targets.len() || pred.is_empty() {
        return Err(CalibrateError::Invalid(format!("{} predicted sets for {} targets", pred.len(), targets.len())));
    }
    let mut c = Counts { n: pred.len(), ..Counts::default() };
    for (p, t) in pred.iter().zip(targets) {
        let p = sorted_set(p);
        let t = sorted_set(t);
        c.predicted += p.len();
        c.actual += t.len();
        c.true_pos += p.iter().filter(|j| t.binary_search(j).is_ok()).count();
        if p == t {
            c.exact += 1;
        }
    }
    c.report()
}

/// Counts at one threshold, straight from the probabilities.
fn counts_at(pm: &PredictionMatrix, threshold: f64) -> Counts {
    let mut c = Counts { n: pm.len(), ..Counts::default() };
    for (row, t) in pm.probs.rows().into_iter().zip(&pm.targets) {
        let predicted = row.iter().filter(|&&p| p >= threshold).count();
        let hits = t.iter().filter(|&&j| row[j] >= threshold).count();
        c.predicted += predicted;
        c.actual += t.len();
        c.true_pos += hits;
        if hits == t.len() && predicted == t.len() {
            c.exact += 1;
        }
    }
    c
}

/// Thresholds `k / denominator` for `k` in `first..=last`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grid {
    pub first: u32,
    pub last: u32,
    pub denominator: u32,
}

impl Default for Grid {
    fn default() -> Self {
        Self { first: 1, last: 99, denominator: 100 }
    }
}

impl Grid {
    pub fn points(&self) -> Vec<f64> {
        (self.first..=self.last).map(|k| k as f64 / self.denominator as f64).collect()
    }

    pub fn validate(&self) -> Result<(), CalibrateError> {
        if self.denominator == 0 || self.first == 0 || self.first > self.last || self.last >= self.denominator {
            return Err(CalibrateError::Invalid(format!(
                "grid {}..={} / {} must lie strictly inside (0,1)",
                self.first, self.last, self.denominator
            )));
        }
        Ok(())
    }
}

/// Metric value at every grid point, `None` where undefined.
pub fn metric_curve(pm: &PredictionMatrix, metric: Metric, grid: &Grid) -> Vec<(f64, Option<f64>)> {
    grid.points().into_par_iter().map(|t| (t, counts_at(pm, t).report().ok().map(|r| r.get(metric)))).collect()
}

/// Best `(threshold, value)` over the grid; ties go to the smaller threshold.
pub fn grid_search_threshold(pm: &PredictionMatrix, metric: Metric, grid: &Grid) -> Result<(f64, f64), CalibrateError> {
    grid.validate()?;
    let mut best: Option<(f64, f64)> = None;
    for (t, v) in metric_curve(pm, metric, grid) {
        if let Some(v) = v {
            if best.is_none_or(|(_, bv)| v > bv) {
                best = Some((t, v));
            }
        }
    }
    best.ok_or(CalibrateError::AllUndefined)
}

pub const POOLED: &str = "All";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub metric: Metric,
    pub language: String,
    pub n: usize,
    pub threshold: Option<f64>,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ThresholdTable {
    pub rows: Vec<ThresholdRow>,
}

#[derive(Serialize, Deserialize)]
struct Cell {
    threshold: Option<f64>,
    value: Option<f64>,
    n: usize,
}

fn search_rows(pm: &PredictionMatrix, language: &str, grid: &Grid) -> Vec<ThresholdRow> {
    Metric::ALL
        .iter()
        .map(|&metric| {
            let found = if pm.is_empty() { None } else { grid_search_threshold(pm, metric, grid).ok() };
            ThresholdRow {
                metric,
                language: language.to_string(),
                n: pm.len(),
                threshold: found.map(|f| f.0),
                value: found.map(|f| f.1),
            }
        })
        .collect()
}

/// Four rows per language present plus four pooled rows.
pub fn calibrate_per_language(pm: &PredictionMatrix, grid: &Grid) -> ThresholdTable {
    let mut rows = search_rows(pm, POOLED, grid);
    for lang in pm.languages() {
        rows.extend(search_rows(&pm.subset(lang), lang.as_str(), grid));
    }
    ThresholdTable { rows }
}

impl ThresholdTable {
    pub fn get(&self, metric: Metric, language: &str) -> Option<&ThresholdRow> {
        self.rows.iter().find(|r| r.metric == metric && r.language == language)
    }

    /// `{metric: {language: {threshold, value, n}}}`.
    pub fn to_json(&self) -> serde_json::Value {
        let mut out: BTreeMap<&str, BTreeMap<String, Cell>> = BTreeMap::new();
        for r in &self.rows {
            out.entry(r.metric.key())
                .or_default()
                .insert(r.language.clone(), Cell { threshold: r.threshold, value: r.value, n: r.n });
        }
        serde_json::to_value(out).expect("serializable")
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self, CalibrateError> {
        let parsed: BTreeMap<String, BTreeMap<String, Cell>> =
            serde_json::from_value(v.clone()).map_err(|e| CalibrateError::Invalid(e.to_string()))?;
        let mut rows = Vec::new();
        for (metric, langs) in parsed {
            let metric: Metric = metric.parse()?;
            for (language, c) in langs {
                rows.push(ThresholdRow { metric, language, n: c.n, threshold: c.threshold, value: c.value });
            }
        }
        Ok(Self { rows })
    }

    /// Aligned text table: Language, N. test obs., Statistic, Value, Optimal thr.
    pub fn render(&self) -> String {
        let mut langs: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !langs.contains(&r.language.as_str()) {
                langs.push(&r.language);
            }
        }
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<10} {:>14} {:<10} {:>10} {:>12}",
            "Language", "N. test obs.", "Statistic", "Value", "Optimal thr."
        );
        for lang in langs {
            for (i, m) in Metric::ALL.iter().enumerate() {
                let Some(r) = self.get(*m, lang) else { continue };
                let (l, n) = if i == 0 { (lang.to_string(), r.n.to_string()) } else { (String::new(), String::new()) };
                let _ = writeln!(
                    s,
                    "{:<10} {:>14} {:<10} {:>10} {:>12}",
                    l,
                    n,
                    m.label(),
                    r.value.map_or("-".into(), |v| format!("{v:.7}")),
                    r.threshold.map_or("-".into(), |t| format!("{t:.2}")),
                );
            }
        }
        s
    }
}

/// Pooled optimum per metric, with and without language information.
#[derive(Debug, Clone, PartialEq)]
pub struct LanguageInfoTable {
    /// `(metric, language info given, threshold, value)`.
    pub rows: Vec<(Metric, bool, Option<f64>, Option<f64>)>,
    pub n: usize,
}

pub fn language_info_table(
    with_lang: &PredictionMatrix,
    without_lang: &PredictionMatrix,
    grid: &Grid,
) -> LanguageInfoTable {
    let mut rows = Vec::new();
    for m in Metric::ALL {
        for (given, pm) in [(false, without_lang), (true, with_lang)] {
            let found = grid_search_threshold(pm, m, grid).ok();
            rows.push((m, given, found.map(|f| f.0), found.map(|f| f.1)));
        }
    }
    LanguageInfoTable { rows, n: with_lang.len() }
}

impl LanguageInfoTable {
    /// Columns: Metric, Lang. info., Value, Optimal thr.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<10} {:<11} {:>7} {:>12}", "Metric", "Lang. info.", "Value", "Optimal thr.");
        for (m, given, t, v) in &self.rows {
            let _ = writeln!(
                s,
                "{:<10} {:<11} {:>7} {:>12}",
                m.label(),
                if *given { "Yes" } else { "No" },
                v.map_or("-".into(), |v| format!("{v:.3}")),
                t.map_or("-".into(), |t| format!("{t:.2}")),
            );
        }
        s
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut out: BTreeMap<&str, BTreeMap<&str, Cell>> = BTreeMap::new();
        for (m, given, t, v) in &self.rows {
            out.entry(m.key()).or_default().insert(
                if *given { "with_language" } else { "without_language" },
                Cell { threshold: *t, value: *v, n: self.n },
            );
        }
        serde_json::to_value(out).expect("serializable")
    }
}
