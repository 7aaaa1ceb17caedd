use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{EvalError, Result};

/// Minimal per-FOV record the metrics work on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub score: f64,
    pub positive: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

/// Predicts tumor iff `score >= t`.
pub fn confusion_at_threshold(data: &[Scored], t: f64) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for d in data {
        match (d.score >= t, d.positive) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    c
}

/// `None` marks a metric whose denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub fpr: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metrics(c: &ConfusionCounts) -> Metrics {
    Metrics {
        accuracy: ratio(c.tp + c.tn, c.total()),
        precision: ratio(c.tp, c.tp + c.fp),
        recall: ratio(c.tp, c.tp + c.fn_),
        fpr: ratio(c.fp, c.fp + c.tn),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Scores `>= threshold` are called positive; the first point uses +inf.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

fn class_counts(data: &[Scored]) -> (usize, usize) {
    let pos = data.iter().filter(|d| d.positive).count();
    (pos, data.len() - pos)
}

/// Threshold sweep over the unique scores, highest first. Tied scores move
/// both rates in one step, so the trapezoid area gives ties half credit.
pub fn roc_curve(data: &[Scored]) -> Result<RocCurve> {
    let (pos, neg) = class_counts(data);
    if pos == 0 || neg == 0 {
        return Err(EvalError::SingleClass);
    }
    let mut sorted: Vec<Scored> = data.to_vec();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut area = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].score;
        while i < sorted.len() && sorted[i].score == t {
            if sorted[i].positive {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let p = RocPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
            threshold: t,
        };
        let last = points.last().expect("starts with origin");
        area += (p.fpr - last.fpr) * (p.tpr + last.tpr) / 2.0;
        points.push(p);
    }
    Ok(RocCurve { points, auc: area })
}

pub fn auc(data: &[Scored]) -> Option<f64> {
    roc_curve(data).ok().map(|r| r.auc)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub lo: f64,
    pub hi: f64,
    pub replications: usize,
    /// Resamples on which the statistic was undefined and were redrawn.
    pub degenerate_resamples: usize,
}

const MAX_REDRAWS: usize = 10_000;

/// Linear-interpolation percentile of sorted values, `q` in `[0, 1]`.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Percentile bootstrap (2.5th, 97.5th). Replication `k` draws from ChaCha8
/// stream `k` of `seed`, so the result does not depend on thread count.
/// Resamples where `statistic` returns `None` are redrawn and counted.
pub fn bootstrap_ci<F>(data: &[Scored], statistic: F, replications: usize, seed: u64) -> Result<BootstrapCi>
where
    F: Fn(&[Scored]) -> Option<f64> + Sync,
{
    if replications < 100 {
        return Err(EvalError::TooFewReplications(replications));
    }
    if data.is_empty() {
        return Err(EvalError::Degenerate { attempts: 0 });
    }
    let n = data.len();
    let draws: Vec<(f64, usize)> = (0..replications)
        .into_par_iter()
        .map_init(
            || Vec::with_capacity(n),
            |buf: &mut Vec<Scored>, k| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(k as u64);
                for redraws in 0..MAX_REDRAWS {
                    buf.clear();
                    buf.extend((0..n).map(|_| data[rng.random_range(0..n)]));
                    if let Some(v) = statistic(buf) {
                        return Ok((v, redraws));
                    }
                }
                Err(EvalError::Degenerate { attempts: MAX_REDRAWS })
            },
        )
        .collect::<Result<_>>()?;
    let mut values: Vec<f64> = draws.iter().map(|d| d.0).collect();
    values.sort_by(f64::total_cmp);
    Ok(BootstrapCi {
        lo: percentile(&values, 0.025),
        hi: percentile(&values, 0.975),
        replications,
        degenerate_resamples: draws.iter().map(|d| d.1).sum(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatingPointName {
    HighAccuracy,
    HighPrecision,
    HighRecall,
}

impl OperatingPointName {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::HighAccuracy => "high_accuracy",
            Self::HighPrecision => "high_precision",
            Self::HighRecall => "high_recall",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricCi {
    pub value: Option<f64>,
    pub ci: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub name: OperatingPointName,
    pub threshold: f64,
    pub accuracy: MetricCi,
    pub precision: MetricCi,
    pub recall: MetricCi,
}

/// Recall floor for the high-precision point.
pub const HIGH_PRECISION_MIN_RECALL: f64 = 0.5;
/// Recall target for the high-recall (screening) point.
pub const HIGH_RECALL_TARGET: f64 = 0.95;

fn unique_scores_desc(data: &[Scored]) -> Vec<f64> {
    let mut s: Vec<f64> = data.iter().map(|d| d.score).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s.dedup();
    s
}

/// Picks thresholds among the unique scores:
/// - high_accuracy maximizes accuracy, ties to the higher threshold;
/// - high_precision maximizes precision subject to recall >= 0.5, ties to
///   the higher recall, then the higher threshold;
/// - high_recall is the highest threshold with recall >= 0.95; the minimum
///   score (recall 1) when none qualifies.
pub fn pick_operating_points(data: &[Scored]) -> Result<[OperatingPoint; 3]> {
    let (pos, neg) = class_counts(data);
    if pos == 0 || neg == 0 {
        return Err(EvalError::SingleClass);
    }
    let candidates: Vec<(f64, Metrics)> = unique_scores_desc(data)
        .into_iter()
        .map(|t| (t, metrics(&confusion_at_threshold(data, t))))
        .collect();
    let value = |m: Option<f64>| m.unwrap_or(f64::NEG_INFINITY);
    // Candidates run from high to low threshold, so strict improvement keeps
    // the higher threshold on ties.
    let best_by = |key: &dyn Fn(&Metrics) -> Option<(f64, f64)>| {
        let mut best: Option<(f64, (f64, f64))> = None;
        for (t, m) in &candidates {
            let Some(v) = key(m) else { continue };
            if best.is_none_or(|(_, bv)| v > bv) {
                best = Some((*t, v));
            }
        }
        best.map(|b| b.0)
    };
    let acc_t = best_by(&|m| m.accuracy.map(|a| (a, 0.0))).expect("dataset is non-empty");
    let prec_t = best_by(&|m| {
        (value(m.recall) >= HIGH_PRECISION_MIN_RECALL)
            .then_some(m.precision)
            .flatten()
            .map(|p| (p, value(m.recall)))
    })
    .expect("lowest threshold has recall 1");
    let min_score = candidates.last().expect("non-empty").0;
    let recall_t = candidates
        .iter()
        .find(|(_, m)| value(m.recall) >= HIGH_RECALL_TARGET)
        .map(|c| c.0)
        .unwrap_or(min_score);

    let point = |name, t| {
        let m = metrics(&confusion_at_threshold(data, t));
        let mc = |v| MetricCi { value: v, ci: None };
        OperatingPoint {
            name,
            threshold: t,
            accuracy: mc(m.accuracy),
            precision: mc(m.precision),
            recall: mc(m.recall),
        }
    };
    Ok([
        point(OperatingPointName::HighAccuracy, acc_t),
        point(OperatingPointName::HighPrecision, prec_t),
        point(OperatingPointName::HighRecall, recall_t),
    ])
}

/// Operating points with bootstrap intervals for each metric at the chosen
/// thresholds. Each metric uses its own stream family derived from `seed`.
pub fn operating_points_with_ci(data: &[Scored], replications: usize, seed: u64) -> Result<[OperatingPoint; 3]> {
    let mut points = pick_operating_points(data)?;
    for (i, p) in points.iter_mut().enumerate() {
        let t = p.threshold;
        let getters: [fn(&Metrics) -> Option<f64>; 3] = [|m| m.accuracy, |m| m.precision, |m| m.recall];
        let slots = [&mut p.accuracy, &mut p.precision, &mut p.recall];
        for (j, (get, slot)) in getters.into_iter().zip(slots).enumerate() {
            let stat = |d: &[Scored]| get(&metrics(&confusion_at_threshold(d, t)));
            let sub_seed = seed.wrapping_add(((i * 3 + j) as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            slot.ci = match bootstrap_ci(data, stat, replications, sub_seed) {
                Ok(ci) => Some((ci.lo, ci.hi)),
                Err(EvalError::Degenerate { .. }) => None,
                Err(e) => return Err(e),
            };
        }
    }
    Ok(points)
}
