//! Ranking and calibration metrics.
//!
//! Tied scores share credit: AUC counts a tied positive/negative pair as one
//! half, and average precision pools every block of tied scores into a
//! single threshold. A metric that is undefined on its input (one class only,
//! a zero relative-improvement denominator) is `None`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::ideal_loss;

fn check_lengths(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Config(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::Fault(format!("non-finite score {s}")));
    }
    Ok(())
}

/// Indices sorted by ascending score.
fn ascending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    idx
}

/// Area under the ROC curve by the rank-sum statistic.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<Option<f64>> {
    check_lengths(scores, labels)?;
    let n_pos = labels.iter().filter(|&&y| y).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Ok(None);
    }
    let idx = ascending(scores);
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j+1 share their mean.
        let mid_rank = (i + j + 2) as f64 / 2.0;
        let pos = idx[i..=j].iter().filter(|&&k| labels[k]).count();
        rank_sum += mid_rank * pos as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(Some(u / (n_pos as f64 * n_neg as f64)))
}

/// Average precision with step interpolation.
pub fn pr_auc(scores: &[f64], labels: &[bool]) -> Result<Option<f64>> {
    check_lengths(scores, labels)?;
    let n_pos = labels.iter().filter(|&&y| y).count();
    if n_pos == 0 {
        return Ok(None);
    }
    let mut idx = ascending(scores);
    idx.reverse();
    let (mut tp, mut seen, mut ap) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let pos = idx[i..=j].iter().filter(|&&k| labels[k]).count();
        tp += pos;
        seen += j - i + 1;
        if pos > 0 {
            ap += (tp as f64 / seen as f64) * (pos as f64 / n_pos as f64);
        }
        i = j + 1;
    }
    Ok(Some(ap))
}

/// Mean log loss with predictions clamped away from 0 and 1.
pub fn nll(scores: &[f64], labels: &[bool]) -> Result<Option<f64>> {
    check_lengths(scores, labels)?;
    if scores.is_empty() {
        return Ok(None);
    }
    let total: f64 = scores.iter().zip(labels).map(|(&p, &y)| ideal_loss(y, p)).sum();
    Ok(Some(total / scores.len() as f64))
}

/// `(m - pre) / (oracle - pre) * 100`. For lower-is-better metrics both
/// differences are negated, which leaves the ratio unchanged.
pub fn relative_improvement(m: f64, pretrained: f64, oracle: f64, higher_is_better: bool) -> Option<f64> {
    let sign = if higher_is_better { 1.0 } else { -1.0 };
    let denom = sign * (oracle - pretrained);
    if denom == 0.0 || !denom.is_finite() {
        return None;
    }
    Some(sign * (m - pretrained) / denom * 100.0)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auc: Option<f64>,
    pub pr_auc: Option<f64>,
    pub nll: Option<f64>,
    pub n_samples: usize,
    pub n_positives: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ri_auc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ri_pr_auc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ri_nll: Option<f64>,
}

impl MetricsReport {
    pub fn evaluate(scores: &[f64], labels: &[bool]) -> Result<Self> {
        Ok(MetricsReport {
            auc: auc(scores, labels)?,
            pr_auc: pr_auc(scores, labels)?,
            nll: nll(scores, labels)?,
            n_samples: scores.len(),
            n_positives: labels.iter().filter(|&&y| y).count(),
            ..Default::default()
        })
    }

    /// Sample-count-weighted mean of each metric over the reports where it is
    /// defined.
    pub fn aggregate<'a, I: IntoIterator<Item = &'a MetricsReport>>(reports: I) -> Self {
        let mut acc = [(0.0, 0usize); 3];
        let mut out = MetricsReport::default();
        for r in reports {
            out.n_samples += r.n_samples;
            out.n_positives += r.n_positives;
            for (slot, v) in acc.iter_mut().zip([r.auc, r.pr_auc, r.nll]) {
                if let Some(v) = v {
                    slot.0 += v * r.n_samples as f64;
                    slot.1 += r.n_samples;
                }
            }
        }
        let mean = |(s, n): (f64, usize)| (n > 0).then(|| s / n as f64);
        out.auc = mean(acc[0]);
        out.pr_auc = mean(acc[1]);
        out.nll = mean(acc[2]);
        out
    }

    /// Fills the relative-improvement fields against a pretrained and an
    /// oracle report.
    pub fn with_relative(mut self, pretrained: &MetricsReport, oracle: &MetricsReport) -> Self {
        let ri = |m: Option<f64>, p: Option<f64>, o: Option<f64>, higher: bool| {
            relative_improvement(m?, p?, o?, higher)
        };
        self.ri_auc = ri(self.auc, pretrained.auc, oracle.auc, true);
        self.ri_pr_auc = ri(self.pr_auc, pretrained.pr_auc, oracle.pr_auc, true);
        self.ri_nll = ri(self.nll, pretrained.nll, oracle.nll, false);
        self
    }
}

fn cell(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.10}")).unwrap_or_default()
}

/// Writes one CSV row per labelled report.
pub fn write_metrics_csv<W: Write>(out: W, rows: &[(String, &MetricsReport)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["slice", "n_samples", "n_positives", "auc", "pr_auc", "nll", "ri_auc", "ri_pr_auc", "ri_nll"])?;
    for (name, r) in rows {
        w.write_record([
            name.clone(),
            r.n_samples.to_string(),
            r.n_positives.to_string(),
            cell(r.auc),
            cell(r.pr_auc),
            cell(r.nll),
            cell(r.ri_auc),
            cell(r.ri_pr_auc),
            cell(r.ri_nll),
        ])?;
    }
    w.flush()?;
    Ok(())
}
