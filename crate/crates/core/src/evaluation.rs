//! Error against the panel consensus, the rater table, the constant baseline,
//! confusion matrix, per-class recall and correlation.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use indexmap::IndexMap;
use serde::{Serialize, Serializer};

use crate::dataset::GoldenRecord;
use crate::error::{Error, Result};
use crate::model::discretize;
use crate::types::{clamp_score, SeverityLabel};

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(())
}

/// `sqrt(sum((p - c)^2) / N)`.
pub fn rmse_vs_consensus(preds: &[f64], consensus: &[f64]) -> Result<f64> {
    check_lengths(preds, consensus)?;
    let sse: f64 = preds
        .iter()
        .zip(consensus)
        .map(|(p, c)| (p - c) * (p - c))
        .sum();
    Ok((sse / preds.len() as f64).sqrt())
}

/// RMSE of predicting the mean consensus for every image.
pub fn baseline_rmse(consensus: &[f64]) -> Result<f64> {
    if consensus.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mean = consensus.iter().sum::<f64>() / consensus.len() as f64;
    rmse_vs_consensus(&vec![mean; consensus.len()], consensus)
}

/// Median of a sample; the middle order statistic for odd sizes, the mean of
/// the two middle values otherwise.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PanelReport {
    pub per_rater_rmse: IndexMap<String, f64>,
    pub worst: f64,
    pub median: f64,
    pub model_rmse: Option<f64>,
}

impl PanelReport {
    pub fn from_values(per_rater_rmse: IndexMap<String, f64>, model_rmse: Option<f64>) -> Result<Self> {
        let values: Vec<f64> = per_rater_rmse.values().copied().collect();
        let median = median(&values)?;
        let worst = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            per_rater_rmse,
            worst,
            median,
            model_rmse,
        })
    }

    pub fn beats_median(&self) -> Option<bool> {
        self.model_rmse.map(|m| m < self.median)
    }

    pub fn beats_worst(&self) -> Option<bool> {
        self.model_rmse.map(|m| m < self.worst)
    }
}

/// Scores every rater against the panel consensus, plus the model when
/// `model_preds` is given (one prediction per record, same order).
pub fn panel_report(golden: &[GoldenRecord], model_preds: Option<&[f64]>) -> Result<PanelReport> {
    let first = golden.first().ok_or(Error::EmptyInput)?;
    let raters: Vec<&str> = first.rater_ids().collect();
    let expected: BTreeSet<&str> = raters.iter().copied().collect();
    for g in golden {
        let got: BTreeSet<&str> = g.rater_ids().collect();
        if got != expected {
            return Err(Error::Panel(format!(
                "image {:?} is graded by {:?}, expected {:?}",
                g.image_id, got, expected
            )));
        }
    }
    let consensus: Vec<f64> = golden.iter().map(|g| g.consensus().value()).collect();
    let mut per_rater = IndexMap::new();
    for r in raters {
        let preds: Vec<f64> = golden
            .iter()
            .map(|g| g.label_by(r).expect("checked above").as_f64())
            .collect();
        per_rater.insert(r.to_owned(), rmse_vs_consensus(&preds, &consensus)?);
    }
    let model = model_preds
        .map(|p| rmse_vs_consensus(p, &consensus))
        .transpose()?;
    PanelReport::from_values(per_rater, model)
}

/// Counts indexed `[predicted - 1][true - 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(transparent)]
pub struct ConfusionMatrix(pub [[u64; 5]; 5]);

impl ConfusionMatrix {
    pub fn cell(&self, predicted: SeverityLabel, truth: SeverityLabel) -> u64 {
        self.0[predicted.index()][truth.index()]
    }

    pub fn total(&self) -> u64 {
        self.0.iter().flatten().sum()
    }

    /// Number of items predicted as each class.
    pub fn row_sums(&self) -> [u64; 5] {
        self.0.map(|r| r.iter().sum())
    }

    /// Number of items truly in each class.
    pub fn column_sums(&self) -> [u64; 5] {
        std::array::from_fn(|c| self.0.iter().map(|r| r[c]).sum())
    }
}

pub fn confusion(preds: &[SeverityLabel], truths: &[SeverityLabel]) -> Result<ConfusionMatrix> {
    if preds.len() != truths.len() {
        return Err(Error::Shape {
            left: preds.len(),
            right: truths.len(),
        });
    }
    let mut m = ConfusionMatrix::default();
    for (p, t) in preds.iter().zip(truths) {
        m.0[p.index()][t.index()] += 1;
    }
    Ok(m)
}

/// Correct predictions over true members of one class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Recall {
    pub hits: u64,
    pub support: u64,
}

impl Recall {
    /// `None` when the class never occurs.
    pub fn value(self) -> Option<f64> {
        (self.support > 0).then(|| self.hits as f64 / self.support as f64)
    }
}

impl Serialize for Recall {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.value().serialize(s)
    }
}

pub fn recall_per_class(m: &ConfusionMatrix) -> [Recall; 5] {
    let support = m.column_sums();
    std::array::from_fn(|c| Recall {
        hits: m.0[c][c],
        support: support[c],
    })
}

/// Sample Pearson correlation.
pub fn pearson(preds: &[f64], truths: &[f64]) -> Result<f64> {
    if preds.len() != truths.len() {
        return Err(Error::Shape {
            left: preds.len(),
            right: truths.len(),
        });
    }
    if preds.len() < 2 {
        return Err(Error::UndefinedCorrelation);
    }
    let constant = |v: &[f64]| v.iter().all(|x| *x == v[0]);
    if constant(preds) || constant(truths) {
        return Err(Error::UndefinedCorrelation);
    }
    let n = preds.len() as f64;
    let (mp, mt) = (preds.iter().sum::<f64>() / n, truths.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (p, t) in preds.iter().zip(truths) {
        let (dx, dy) = (p - mp, t - mt);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailedImage {
    pub image_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationSummary {
    pub evaluated: usize,
    pub model_rmse: f64,
    pub baseline_rmse: f64,
    pub per_rater_rmse: IndexMap<String, f64>,
    pub worst: f64,
    pub median: f64,
    pub confusion: ConfusionMatrix,
    pub recall: [Recall; 5],
    /// `None` when predictions or consensus are constant.
    pub pearson: Option<f64>,
    pub failed_count: usize,
    pub failed_images: Vec<FailedImage>,
}

impl EvaluationSummary {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }

    /// Panel table with the model inserted by RMSE, worst first.
    pub fn table(&self) -> String {
        let mut rows: Vec<(String, f64)> = self
            .per_rater_rmse
            .iter()
            .map(|(r, v)| (format!("rater {r}"), *v))
            .collect();
        rows.push(("MODEL".to_owned(), self.model_rmse));
        rows.sort_by(|a, b| b.1.total_cmp(&a.1));
        let mut out = String::new();
        let _ = writeln!(out, "{:<16} {:>8}", "", "RMSE");
        for (name, v) in rows {
            let _ = writeln!(out, "{name:<16} {v:>8.3}");
        }
        let _ = writeln!(out, "{:<16} {:>8.3}", "worst rater", self.worst);
        let _ = writeln!(out, "{:<16} {:>8.3}", "median rater", self.median);
        let _ = writeln!(out, "{:<16} {:>8.3}", "baseline", self.baseline_rmse);
        match self.pearson {
            Some(r) => {
                let _ = writeln!(out, "{:<16} {:>8.3}", "pearson", r);
            }
            None => {
                let _ = writeln!(out, "{:<16} {:>8}", "pearson", "n/a");
            }
        }
        let _ = writeln!(out, "evaluated {} images, {} failed extraction", self.evaluated, self.failed_count);
        out
    }
}

/// Scores every golden image with `score` and summarizes the results.
///
/// Images whose scoring fails at extraction (no face, too little skin,
/// undecodable file) are listed and left out of every metric; any other
/// error aborts the evaluation.
pub fn evaluate_model<F>(golden: &[GoldenRecord], mut score: F) -> Result<EvaluationSummary>
where
    F: FnMut(&GoldenRecord) -> Result<f64>,
{
    if golden.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut kept = Vec::new();
    let mut preds = Vec::new();
    let mut failed = Vec::new();
    for g in golden {
        match score(g) {
            Ok(p) => {
                preds.push(clamp_score(p)?.value());
                kept.push(g.clone());
            }
            Err(e) if e.is_extraction_failure() => failed.push(FailedImage {
                image_id: g.image_id.clone(),
                reason: e.to_string(),
            }),
            Err(e) => return Err(e),
        }
    }
    if kept.is_empty() {
        return Err(Error::Evaluation(format!(
            "all {} images failed extraction",
            golden.len()
        )));
    }
    let consensus: Vec<f64> = kept.iter().map(|g| g.consensus().value()).collect();
    let panel = panel_report(&kept, Some(&preds))?;
    let to_class = |v: &f64| discretize(clamp_score(*v).expect("finite"));
    let m = confusion(
        &preds.iter().map(to_class).collect::<Vec<_>>(),
        &consensus.iter().map(to_class).collect::<Vec<_>>(),
    )?;
    Ok(EvaluationSummary {
        evaluated: kept.len(),
        model_rmse: panel.model_rmse.expect("predictions supplied"),
        baseline_rmse: baseline_rmse(&consensus)?,
        per_rater_rmse: panel.per_rater_rmse,
        worst: panel.worst,
        median: panel.median,
        confusion: m,
        recall: recall_per_class(&m),
        pearson: pearson(&preds, &consensus).ok(),
        failed_count: failed.len(),
        failed_images: failed,
    })
}
