//! Training-side math: cross entropy and alpha-weighted focal loss with its
//! analytic gradient, multitask loss combination, SMOTE oversampling, and
//! null-answer threshold tuning.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::SquadDataset;
use crate::metrics::{aggregate, score_items, MetricsError, Predictions};

/// Probabilities below this are clamped before taking the logarithm.
pub const PROB_EPSILON: f64 = 1e-12;
/// Allowed deviation of a probability vector's sum from 1.
pub const PROB_SUM_TOLERANCE: f64 = 1e-9;
pub const DEFAULT_GAMMA: f64 = 2.0;
pub const DEFAULT_CLS_WEIGHT: f64 = 1.0;
/// Sweep values within this distance count as tied.
pub const F1_TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

fn invalid(msg: impl Into<String>) -> TrainError {
    TrainError::InvalidInput(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossOutput {
    pub value: f64,
    /// The true-class probability was below [`PROB_EPSILON`] and was clamped.
    pub clamped: bool,
}

fn check_probs(probs: &[f64], true_class: usize) -> Result<(f64, bool), TrainError> {
    if probs.is_empty() {
        return Err(invalid("empty probability vector"));
    }
    if true_class >= probs.len() {
        return Err(invalid(format!(
            "true class {true_class} out of range for {} classes",
            probs.len()
        )));
    }
    if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(invalid(format!("probability {p} outside [0, 1]")));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
        return Err(invalid(format!("probabilities sum to {sum}, not 1")));
    }
    let p = probs[true_class];
    Ok(if p < PROB_EPSILON {
        (PROB_EPSILON, true)
    } else {
        (p, false)
    })
}

/// `−w_t · ln p_t`; weights default to 1.
pub fn cross_entropy(
    probs: &[f64],
    true_class: usize,
    weights: Option<&[f64]>,
) -> Result<LossOutput, TrainError> {
    let (p, clamped) = check_probs(probs, true_class)?;
    let w = match weights {
        None => 1.0,
        Some(w) if w.len() != probs.len() => {
            return Err(invalid(format!("{} weights for {} classes", w.len(), probs.len())))
        }
        Some(w) if w.iter().any(|x| !x.is_finite() || *x < 0.0) => {
            return Err(invalid("weights must be finite and non-negative"))
        }
        Some(w) => w[true_class],
    };
    Ok(LossOutput {
        value: -w * p.ln(),
        clamped,
    })
}

/// Focal loss parameters: focusing exponent and per-class weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FocalParams {
    pub gamma: f64,
    pub alpha: Vec<f64>,
}

impl FocalParams {
    pub fn new(gamma: f64, alpha: Vec<f64>) -> Result<Self, TrainError> {
        let params = Self { gamma, alpha };
        params.validate()?;
        Ok(params)
    }

    /// `α_c = min_count / count_c`, so the rarest class gets weight 1.
    pub fn inverse_frequency(class_counts: &[usize], gamma: f64) -> Result<Self, TrainError> {
        if class_counts.is_empty() || class_counts.contains(&0) {
            return Err(invalid("every class needs at least one example"));
        }
        let min = *class_counts.iter().min().expect("non-empty") as f64;
        Self::new(gamma, class_counts.iter().map(|&c| min / c as f64).collect())
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !self.gamma.is_finite() || self.gamma < 0.0 {
            return Err(invalid(format!("gamma {} must be finite and >= 0", self.gamma)));
        }
        if self.alpha.is_empty() {
            return Err(invalid("alpha is empty"));
        }
        if let Some(a) = self.alpha.iter().find(|a| !(**a > 0.0 && **a <= 1.0)) {
            return Err(invalid(format!("alpha entry {a} outside (0, 1]")));
        }
        Ok(())
    }

    fn alpha_for(&self, probs: &[f64], true_class: usize) -> Result<f64, TrainError> {
        self.validate()?;
        if self.alpha.len() != probs.len() {
            return Err(invalid(format!(
                "{} alpha entries for {} classes",
                self.alpha.len(),
                probs.len()
            )));
        }
        Ok(self.alpha[true_class])
    }
}

/// `−α_t (1 − p_t)^γ ln p_t`.
pub fn focal_loss(probs: &[f64], true_class: usize, params: &FocalParams) -> Result<LossOutput, TrainError> {
    let (p, clamped) = check_probs(probs, true_class)?;
    let alpha = params.alpha_for(probs, true_class)?;
    Ok(LossOutput {
        value: -alpha * (1.0 - p).powf(params.gamma) * p.ln(),
        clamped,
    })
}

/// Derivative of [`focal_loss`] with respect to each probability. Only the
/// true-class entry is non-zero.
pub fn focal_loss_gradient(
    probs: &[f64],
    true_class: usize,
    params: &FocalParams,
) -> Result<Vec<f64>, TrainError> {
    let (p, _) = check_probs(probs, true_class)?;
    let alpha = params.alpha_for(probs, true_class)?;
    let g = params.gamma;
    // d/dp = αγ(1−p)^(γ−1) ln p − α(1−p)^γ / p; the first term vanishes at
    // γ = 0 and in the limit p → 1.
    let focusing = if g == 0.0 || p == 1.0 {
        0.0
    } else {
        alpha * g * (1.0 - p).powf(g - 1.0) * p.ln()
    };
    let mut grad = vec![0.0; probs.len()];
    grad[true_class] = focusing - alpha * (1.0 - p).powf(g) / p;
    Ok(grad)
}

/// `span_loss + cls_weight · cls_loss`.
pub fn combine_multitask(span_loss: f64, cls_loss: f64, cls_weight: f64) -> Result<f64, TrainError> {
    if !span_loss.is_finite() || !cls_loss.is_finite() {
        return Err(invalid("losses must be finite"));
    }
    if !cls_weight.is_finite() || cls_weight < 0.0 {
        return Err(invalid(format!("classification weight {cls_weight} must be finite and >= 0")));
    }
    Ok(span_loss + cls_weight * cls_loss)
}

/// What the oversampler balances toward.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BalanceTarget {
    /// Minority count raised to the majority count.
    #[default]
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoteParams {
    pub k: usize,
    pub seed: u64,
    #[serde(default)]
    pub target: BalanceTarget,
}

impl Default for SmoteParams {
    fn default() -> Self {
        Self {
            k: 5,
            seed: 0,
            target: BalanceTarget::Uniform,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSample {
    pub vector: Vec<f64>,
    /// Index of the minority point the sample was grown from.
    pub base: usize,
    /// Index of the neighbor it was interpolated toward.
    pub neighbor: usize,
    pub lambda: f64,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Indices of the `k` nearest other points for every point; ties go to the
/// lower index.
fn nearest_neighbors(points: &[Vec<f64>], k: usize) -> Vec<Vec<usize>> {
    (0..points.len())
        .map(|i| {
            let mut others: Vec<(f64, usize)> = (0..points.len())
                .filter(|&j| j != i)
                .map(|j| (squared_distance(&points[i], &points[j]), j))
                .collect();
            others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            others.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect()
}

fn validate_minority(points: &[Vec<f64>], k: usize) -> Result<(), TrainError> {
    if points.len() < 2 {
        return Err(invalid(format!("need at least 2 minority points, got {}", points.len())));
    }
    let dim = points[0].len();
    if dim == 0 {
        return Err(invalid("feature vectors are empty"));
    }
    if let Some((i, p)) = points.iter().enumerate().find(|(_, p)| p.len() != dim) {
        return Err(invalid(format!("point {i} has dimension {}, expected {dim}", p.len())));
    }
    if points.iter().flatten().any(|x| !x.is_finite()) {
        return Err(invalid("feature values must be finite"));
    }
    if k == 0 || k >= points.len() {
        return Err(invalid(format!(
            "k = {k} must be in 1..{} (minority size {})",
            points.len(),
            points.len()
        )));
    }
    Ok(())
}

fn smote_impl(
    minority: &[Vec<f64>],
    majority_count: usize,
    params: &SmoteParams,
    fixed_lambda: Option<f64>,
) -> Result<Vec<SyntheticSample>, TrainError> {
    validate_minority(minority, params.k)?;
    if majority_count < minority.len() {
        return Err(invalid(format!(
            "majority count {majority_count} is smaller than minority count {}",
            minority.len()
        )));
    }
    let neighbors = nearest_neighbors(minority, params.k);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let needed = match params.target {
        BalanceTarget::Uniform => majority_count - minority.len(),
    };
    Ok((0..needed)
        .map(|_| {
            let base = rng.random_range(0..minority.len());
            let neighbor = neighbors[base][rng.random_range(0..params.k)];
            let drawn: f64 = rng.random();
            let lambda = fixed_lambda.unwrap_or(drawn);
            let vector = minority[base]
                .iter()
                .zip(&minority[neighbor])
                .map(|(x, y)| x + lambda * (y - x))
                .collect();
            SyntheticSample {
                vector,
                base,
                neighbor,
                lambda,
            }
        })
        .collect())
}

/// Generates `majority_count − minority.len()` synthetic minority points,
/// each on the segment between a random minority point and one of its `k`
/// nearest minority neighbors.
pub fn smote_oversample(
    minority: &[Vec<f64>],
    majority_count: usize,
    params: &SmoteParams,
) -> Result<Vec<SyntheticSample>, TrainError> {
    smote_impl(minority, majority_count, params, None)
}

/// [`smote_oversample`] with every interpolation factor forced to `lambda`.
#[doc(hidden)]
pub fn smote_oversample_with_lambda(
    minority: &[Vec<f64>],
    majority_count: usize,
    params: &SmoteParams,
    lambda: f64,
) -> Result<Vec<SyntheticSample>, TrainError> {
    smote_impl(minority, majority_count, params, Some(lambda))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Balanced {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<bool>,
    pub minority_label: bool,
    pub synthetic: usize,
}

/// Appends SMOTE samples of the rarer label until both labels are equally
/// frequent. Already balanced input is returned unchanged.
pub fn balance_classes(
    features: &[Vec<f64>],
    labels: &[bool],
    params: &SmoteParams,
) -> Result<Balanced, TrainError> {
    if features.len() != labels.len() {
        return Err(invalid(format!(
            "{} feature vectors for {} labels",
            features.len(),
            labels.len()
        )));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    let minority_label = positives < negatives;
    let mut out = Balanced {
        features: features.to_vec(),
        labels: labels.to_vec(),
        minority_label,
        synthetic: 0,
    };
    if positives == negatives {
        return Ok(out);
    }
    let minority: Vec<Vec<f64>> = features
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == minority_label)
        .map(|(f, _)| f.clone())
        .collect();
    let samples = smote_oversample(&minority, positives.max(negatives), params)?;
    out.synthetic = samples.len();
    for s in samples {
        out.features.push(s.vector);
        out.labels.push(minority_label);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdTuneResult {
    pub best_threshold: f64,
    pub best_overall_f1: f64,
    pub sweep: Vec<SweepPoint>,
}

/// Sweeps null-answer thresholds and returns the one maximizing overall F1,
/// preferring the smaller threshold on ties.
///
/// Candidates are a sentinel below every null score (everything abstains),
/// each distinct null score except the largest, and a sentinel above every
/// null score (nothing abstains). A threshold equal to the largest score
/// nulls nothing, the same as the upper sentinel, so it is not listed twice.
pub fn tune_null_threshold(
    dataset: &SquadDataset,
    predictions: &Predictions,
) -> Result<ThresholdTuneResult, TrainError> {
    let mut items = score_items(dataset, predictions)?;
    if items.is_empty() {
        return Err(invalid("no questions to tune on"));
    }
    if let Some(it) = items.iter().find(|i| !i.null_score.is_finite()) {
        return Err(invalid(format!("null score of {} is not finite", it.id)));
    }
    items.sort_by(|a, b| a.null_score.total_cmp(&b.null_score));
    let n = items.len() as f64;
    let lo = items[0].null_score;
    let hi = items[items.len() - 1].null_score;

    let mut total: f64 = items.iter().map(|i| i.null_f1).sum();
    let mut sweep = vec![SweepPoint {
        threshold: lo - 1.0 - lo.abs(),
        f1: 100.0 * total / n,
    }];
    let mut i = 0;
    while i < items.len() {
        let v = items[i].null_score;
        while i < items.len() && items[i].null_score == v {
            total += items[i].f1 - items[i].null_f1;
            i += 1;
        }
        let threshold = if v == hi { hi + 1.0 + hi.abs() } else { v };
        sweep.push(SweepPoint {
            threshold,
            f1: 100.0 * total / n,
        });
    }

    let mut best = 0;
    for (j, point) in sweep.iter().enumerate() {
        if point.f1 > sweep[best].f1 + F1_TIE_TOLERANCE {
            best = j;
        }
    }
    let best_threshold = sweep[best].threshold;
    let best_overall_f1 = aggregate(&items, Some(best_threshold)).f1;
    Ok(ThresholdTuneResult {
        best_threshold,
        best_overall_f1,
        sweep,
    })
}

/// Writes the sweep as `threshold,f1` rows.
pub fn write_sweep_csv<W: Write>(result: &ThresholdTuneResult, out: W) -> Result<(), TrainError> {
    let mut w = csv::Writer::from_writer(out);
    for p in &result.sweep {
        w.serialize(p)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
