//! Closed-form reference values written independently of the library: the
//! per-context truth, the per-click ingestion pattern of every duplication
//! mechanism, and the large-sample law of ingestion-level fractions.

#![allow(dead_code)]

use delayfeed::synthgen::GroundTruthModel;
use delayfeed::Mechanism;

pub fn sigmoid(s: f64) -> f64 {
    1.0 / (1.0 + (-s).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Mixture-of-exponentials CDF.
pub fn mixture_cdf(components: &[(f64, f64)], rate_scale: f64, t: f64) -> f64 {
    components.iter().map(|&(w, rate)| w * (1.0 - (-rate * rate_scale * t).exp())).sum()
}

#[derive(Debug, Clone, Copy)]
pub struct CtxTruth {
    pub p1: f64,
    pub p0: f64,
    pub p_win: f64,
    pub f: f64,
}

/// Truth of one-hot context `k` with observation window `w_o` and
/// attribution window `w_a`, both in seconds. Generated delays are raw
/// draws rounded up to whole seconds, so "attributed" means raw <= w_a - 1.
pub fn ctx_truth(model: &GroundTruthModel, k: usize, w_o: u64, w_a: u64) -> CtxTruth {
    let cvr = sigmoid(model.theta_star[k] + model.intercept);
    let comps: Vec<(f64, f64)> = model.delay_law.components.iter().map(|c| (c.weight, c.rate)).collect();
    let scale = model.rate_multipliers.as_ref().map_or(1.0, |m| m[k]);
    let in_win = mixture_cdf(&comps, scale, w_o as f64);
    let attr = mixture_cdf(&comps, scale, (w_a - 1) as f64);
    let p1 = cvr * attr;
    CtxTruth { p1, p0: 1.0 - p1, p_win: cvr * in_win, f: cvr * (attr - in_win) }
}

/// One ingestion as the oracle sees it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ing {
    Ip,
    Fn,
    Rn,
    Dp,
}

impl Ing {
    pub fn label(self) -> bool {
        matches!(self, Ing::Ip | Ing::Dp)
    }
}

/// Per-click outcomes `(probability, ingestions)` of `mech`. For FNW pass
/// the truth computed with a zero observation window.
pub fn outcomes(mech: Mechanism, t: CtxTruth) -> Vec<(f64, Vec<Ing>)> {
    use Ing::*;
    match mech {
        Mechanism::Esdfm | Mechanism::VanillaWin => {
            vec![(t.p_win, vec![Ip]), (t.f, vec![Fn, Dp]), (t.p0, vec![Rn])]
        }
        Mechanism::Fnw => vec![(t.p1, vec![Fn, Dp]), (t.p0, vec![Rn])],
        Mechanism::Defer => vec![(t.p_win, vec![Ip, Ip]), (t.f, vec![Fn, Dp]), (t.p0, vec![Rn, Rn])],
        Mechanism::Vanilla => vec![(t.p_win, vec![Ip]), (t.f, vec![Fn]), (t.p0, vec![Rn])],
        Mechanism::Oracle => vec![(t.p_win, vec![Ip]), (t.f, vec![Dp]), (t.p0, vec![Rn])],
    }
}

/// Expected value and standard error of the fraction of ingestions matching
/// `pred` among `n_clicks` independent clicks. Ingestions of one click are
/// not independent, so the error comes from the delta method on the ratio
/// of per-click counts.
pub fn ratio_law(table: &[(f64, Vec<Ing>)], pred: impl Fn(Ing) -> bool, n_clicks: usize) -> (f64, f64) {
    let count = |ings: &Vec<Ing>| ings.iter().filter(|&&i| pred(i)).count() as f64;
    let mean_num: f64 = table.iter().map(|(p, ings)| p * count(ings)).sum();
    let mean_den: f64 = table.iter().map(|(p, ings)| p * ings.len() as f64).sum();
    let r = mean_num / mean_den;
    let var: f64 = table.iter().map(|(p, ings)| p * (count(ings) - r * ings.len() as f64).powi(2)).sum();
    (r, (var / (n_clicks as f64 * mean_den * mean_den)).sqrt())
}

/// AUC by counting every positive/negative pair.
pub fn auc_pairs(s: &[f64], y: &[bool]) -> Option<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..s.len() {
        for j in 0..s.len() {
            if y[i] && !y[j] {
                den += 1.0;
                if s[i] > s[j] {
                    num += 1.0;
                } else if s[i] == s[j] {
                    num += 0.5;
                }
            }
        }
    }
    (den > 0.0).then(|| num / den)
}

/// Average precision by sweeping every distinct threshold from the top:
/// the sum of precision at each threshold times the recall it adds.
pub fn ap_sweep(s: &[f64], y: &[bool]) -> Option<f64> {
    let total_pos = y.iter().filter(|&&v| v).count();
    if total_pos == 0 {
        return None;
    }
    let mut thresholds: Vec<f64> = s.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for t in thresholds {
        let predicted: Vec<usize> = (0..s.len()).filter(|&i| s[i] >= t).collect();
        let tp = predicted.iter().filter(|&&i| y[i]).count();
        let precision = tp as f64 / predicted.len() as f64;
        let recall = tp as f64 / total_pos as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Some(ap)
}
