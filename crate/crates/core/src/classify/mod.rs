//! Impact-surface classification: feature extraction around detections,
//! minority oversampling, per-class binary nets, stratified cross-validation
//! and the confidence-fusion rule that yields the final label.
//!
//! Each surface class gets its own binary classifier, trained on one channel
//! and one feature kind (raw waveform T1 or spectrum magnitude T2); a joint
//! multiclass model over all channels is deliberately avoided. At inference
//! the per-class confidences are fused: classes whose confidence clears
//! their cutoff compete by margin-times-precision score, everything else is
//! a false event.

mod bundle;
mod mlp;

pub use bundle::{
    manifest_path_for, select_cutoff, train_bundle, BundleEntry, ClassOutcome, ClassifierBundle,
    TrainExample, TrainingConfig, TrainingSummary,
};
pub use mlp::{
    mean_loss, predict, train_binary, train_binary_with_report, Layer, MlpModel, TrainHyper,
    TrainReport,
};

use crate::geometry::SurfaceId;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

use crate::detect::Detection;

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("feature window needs samples {lo}..{hi} but the stream has {len}")]
    Boundary { lo: i64, hi: u64, len: usize },
    #[error("SMOTE needs more than {k} minority examples, got {have}")]
    TooFewMinority { have: usize, k: usize },
    #[error("labels are all one class; nothing to separate")]
    DegenerateLabels,
    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("expected vectors of length {expected}, got {got}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("no confidence supplied for class {class}")]
    MissingConfidence { class: ClassLabel },
    #[error("stratification impossible: {0}")]
    Stratification(String),
    #[error("dataset of {size} examples cannot fill {folds} folds")]
    DatasetTooSmall { size: usize, folds: usize },
    #[error("class {class}: no (channel, feature) combination has enough data to train")]
    InsufficientData { class: ClassLabel },
    #[error("model bundle: {0}")]
    InvalidBundle(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    InvalidParam(String),
}

/// Final event label. The first four correspond to impact surfaces (or the
/// racquet); `FalseEvent` is the fusion rule's rejection outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassLabel {
    FrontWall,
    Racquet,
    Floor,
    Glass,
    FalseEvent,
}

impl ClassLabel {
    /// The four trainable classes, in fusion tie-break order.
    pub const TRAINABLE: [ClassLabel; 4] =
        [ClassLabel::FrontWall, ClassLabel::Racquet, ClassLabel::Floor, ClassLabel::Glass];

    pub fn as_str(self) -> &'static str {
        match self {
            ClassLabel::FrontWall => "front_wall",
            ClassLabel::Racquet => "racquet",
            ClassLabel::Floor => "floor",
            ClassLabel::Glass => "glass",
            ClassLabel::FalseEvent => "false_event",
        }
    }

    pub fn parse(s: &str) -> Option<ClassLabel> {
        match s {
            "front_wall" => Some(ClassLabel::FrontWall),
            "racquet" => Some(ClassLabel::Racquet),
            "floor" => Some(ClassLabel::Floor),
            "glass" => Some(ClassLabel::Glass),
            "false_event" => Some(ClassLabel::FalseEvent),
            _ => None,
        }
    }

    /// Court surface this label pins the event to, if any.
    pub fn surface(self) -> Option<SurfaceId> {
        match self {
            ClassLabel::FrontWall => Some(SurfaceId::FrontWall),
            ClassLabel::Floor => Some(SurfaceId::Floor),
            ClassLabel::Glass => Some(SurfaceId::BackGlass),
            ClassLabel::Racquet | ClassLabel::FalseEvent => None,
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    /// Raw amplitudes, 2w+1 samples centered on the detection.
    T1,
    /// DFT magnitudes of the w samples starting at the detection.
    T2,
}

impl FeatureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::T1 => "t1",
            FeatureKind::T2 => "t2",
        }
    }
}

/// Per-vector scaling applied before a model sees the features. Stored with
/// the trained model so inference always matches training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    None,
    /// Divide by the largest absolute entry (T1 default).
    MaxAbs,
    /// Divide by the entry sum (T2 default; entries are nonnegative).
    Sum,
}

impl Normalization {
    pub fn default_for(kind: FeatureKind) -> Self {
        match kind {
            FeatureKind::T1 => Normalization::MaxAbs,
            FeatureKind::T2 => Normalization::Sum,
        }
    }

    pub fn apply(self, values: &[f64]) -> Vec<f64> {
        match self {
            Normalization::None => values.to_vec(),
            Normalization::MaxAbs => {
                let m = values.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
                if m == 0.0 {
                    values.to_vec()
                } else {
                    values.iter().map(|v| v / m).collect()
                }
            }
            Normalization::Sum => {
                let s: f64 = values.iter().sum();
                if s == 0.0 {
                    values.to_vec()
                } else {
                    values.iter().map(|v| v / s).collect()
                }
            }
        }
    }
}

/// Extracted classification input with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub kind: FeatureKind,
    pub values: Vec<f64>,
    pub channel: usize,
    pub detection_index: u64,
}

/// Raw waveform feature: the 2w+1 samples centered on the detection.
pub fn extract_t1(
    stream: &[f64],
    detection: &Detection,
    w: usize,
) -> Result<FeatureVector, ClassifyError> {
    let d = detection.sample_index;
    let lo = d as i64 - w as i64;
    let hi = d + w as u64 + 1;
    if lo < 0 || hi > stream.len() as u64 {
        return Err(ClassifyError::Boundary { lo, hi, len: stream.len() });
    }
    Ok(FeatureVector {
        kind: FeatureKind::T1,
        values: stream[lo as usize..hi as usize].to_vec(),
        channel: detection.channel,
        detection_index: d,
    })
}

/// Spectral feature: DFT magnitudes of the w samples starting at the
/// detection. Any w >= 1 works (the transform length need not be a power of
/// two here).
pub fn extract_t2(
    stream: &[f64],
    detection: &Detection,
    w: usize,
) -> Result<FeatureVector, ClassifyError> {
    let d = detection.sample_index;
    let hi = d + w as u64;
    if w == 0 || hi > stream.len() as u64 {
        return Err(ClassifyError::Boundary { lo: d as i64, hi, len: stream.len() });
    }
    let mut buf: Vec<Complex<f64>> = stream[d as usize..hi as usize]
        .iter()
        .map(|&x| Complex::new(x, 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(w).process(&mut buf);
    Ok(FeatureVector {
        kind: FeatureKind::T2,
        values: buf.iter().map(|z| z.norm()).collect(),
        channel: detection.channel,
        detection_index: d,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmoteCfg {
    /// Neighbor count for the nearest-neighbor interpolation.
    pub k: usize,
}

impl Default for SmoteCfg {
    fn default() -> Self {
        SmoteCfg { k: 5 }
    }
}

/// Synthetic minority oversampling: each synthetic point interpolates a
/// minority example toward one of its k nearest minority neighbors by a
/// uniform random fraction. Produces floor(amount * |minority|) points;
/// deterministic for a fixed seed.
pub fn smote(
    minority: &[Vec<f64>],
    k: usize,
    amount: f64,
    seed: u64,
) -> Result<Vec<Vec<f64>>, ClassifyError> {
    let count = (amount * minority.len() as f64).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    smote_n(minority, k, count, &mut rng)
}

fn smote_n(
    minority: &[Vec<f64>],
    k: usize,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<f64>>, ClassifyError> {
    if k == 0 {
        return Err(ClassifyError::InvalidParam("SMOTE neighbor count must be positive".into()));
    }
    if minority.len() <= k {
        return Err(ClassifyError::TooFewMinority { have: minority.len(), k });
    }
    let dim = minority[0].len();
    for x in minority {
        if x.len() != dim {
            return Err(ClassifyError::SizeMismatch { expected: dim, got: x.len() });
        }
    }
    // k nearest neighbors per minority point, by Euclidean distance, ties by
    // index for determinism.
    let neighbors: Vec<Vec<usize>> = (0..minority.len())
        .map(|i| {
            let mut dists: Vec<(f64, usize)> = (0..minority.len())
                .filter(|&j| j != i)
                .map(|j| {
                    let d2: f64 = minority[i]
                        .iter()
                        .zip(&minority[j])
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    (d2, j)
                })
                .collect();
            dists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            dists.truncate(k);
            dists.into_iter().map(|(_, j)| j).collect()
        })
        .collect();
    let mut out = Vec::with_capacity(count);
    for t in 0..count {
        let base = t % minority.len();
        let nn = neighbors[base][rng.random_range(0..k)];
        let u: f64 = rng.random();
        let synth = minority[base]
            .iter()
            .zip(&minority[nn])
            .map(|(&a, &b)| a + u * (b - a))
            .collect();
        out.push(synth);
    }
    Ok(out)
}

/// Cutoffs and precisions driving the fusion rule, one entry per trainable
/// class that has a usable classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionRule {
    entries: BTreeMap<ClassLabel, (f64, f64)>,
}

impl FusionRule {
    /// `entries` maps class -> (cutoff, precision). Cutoffs must lie strictly
    /// inside (0,1); precisions in [0,1].
    pub fn new(entries: BTreeMap<ClassLabel, (f64, f64)>) -> Result<Self, ClassifyError> {
        for (&class, &(cutoff, precision)) in &entries {
            if class == ClassLabel::FalseEvent {
                return Err(ClassifyError::InvalidParam(
                    "false_event cannot have a classifier entry".into(),
                ));
            }
            if !(cutoff > 0.0 && cutoff < 1.0) {
                return Err(ClassifyError::InvalidParam(format!(
                    "cutoff for {class} must be in (0,1), got {cutoff}"
                )));
            }
            if !(0.0..=1.0).contains(&precision) {
                return Err(ClassifyError::InvalidParam(format!(
                    "precision for {class} must be in [0,1], got {precision}"
                )));
            }
        }
        Ok(FusionRule { entries })
    }

    pub fn entries(&self) -> &BTreeMap<ClassLabel, (f64, f64)> {
        &self.entries
    }
}

/// Fuses per-class confidences into a final label:
///
///   y = argmax_k ((f_k - cut_k)/(1 - cut_k)) * (prec_k / sum_i prec_i)
///
/// taken only when at least one confidence strictly exceeds its cutoff;
/// otherwise the event is rejected as `FalseEvent`. Score ties are broken by
/// the fixed class order front_wall, racquet, floor, glass (an eligible
/// class always beats an ineligible one at equal score). When every
/// precision is zero the weighting is undefined and plain margins are
/// compared instead.
pub fn fuse(
    confidences: &BTreeMap<ClassLabel, f64>,
    rule: &FusionRule,
) -> Result<ClassLabel, ClassifyError> {
    let mut total_precision = 0.0;
    for (&class, &(_, precision)) in rule.entries() {
        if !confidences.contains_key(&class) {
            return Err(ClassifyError::MissingConfidence { class });
        }
        total_precision += precision;
    }
    let mut best: Option<(f64, bool, ClassLabel)> = None;
    let mut any_eligible = false;
    for &class in ClassLabel::TRAINABLE.iter() {
        let Some(&(cutoff, precision)) = rule.entries().get(&class) else { continue };
        let f = confidences[&class];
        let eligible = f > cutoff;
        any_eligible |= eligible;
        let margin = (f - cutoff) / (1.0 - cutoff);
        let score =
            if total_precision > 0.0 { margin * (precision / total_precision) } else { margin };
        let better = match best {
            None => true,
            Some((bs, be, _)) => score > bs || (score == bs && eligible && !be),
        };
        if better {
            best = Some((score, eligible, class));
        }
    }
    if !any_eligible {
        return Ok(ClassLabel::FalseEvent);
    }
    Ok(best.expect("eligibility implies at least one entry").2)
}

/// Convenience wrapper fusing against a trained bundle's cutoffs/precisions.
pub fn fuse_with_bundle(
    confidences: &BTreeMap<ClassLabel, f64>,
    bundle: &ClassifierBundle,
) -> Result<ClassLabel, ClassifyError> {
    fuse(confidences, &bundle.fusion_rule())
}

/// Accuracy, precision and recall from a binary confusion. A precision with
/// an empty denominator (no positive predictions) is reported as 0 with the
/// degenerate flag set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FoldMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub degenerate_precision: bool,
}

pub fn classification_metrics(tp: usize, fp: usize, fn_: usize, tn: usize) -> FoldMetrics {
    let n = (tp + fp + fn_ + tn) as f64;
    let degenerate_precision = tp + fp == 0;
    FoldMetrics {
        accuracy: if n > 0.0 { (tp + tn) as f64 / n } else { 0.0 },
        precision: if degenerate_precision { 0.0 } else { tp as f64 / (tp + fp) as f64 },
        recall: if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 },
        degenerate_precision,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldReport {
    pub metrics: FoldMetrics,
    /// Dataset indices this fold validated on (never touched by SMOTE).
    pub validation: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvReport {
    pub folds: Vec<FoldReport>,
    pub mean: FoldMetrics,
}

/// Stratified k-fold cross-validation, generic over the per-fold trainer.
///
/// Folds are dealt round-robin per class after a seeded shuffle, so every
/// fold sees both classes (or the split is rejected). When `smote` is given,
/// the training side of each fold is balanced by synthesizing minority
/// examples; validation folds are never altered. Predicted label is
/// confidence >= 0.5.
pub fn crossvalidate_with<T, S>(
    features: &[Vec<f64>],
    labels: &[bool],
    folds: usize,
    seed: u64,
    smote: Option<SmoteCfg>,
    trainer: T,
) -> Result<CvReport, ClassifyError>
where
    T: Fn(&[Vec<f64>], &[bool]) -> Result<S, ClassifyError>,
    S: Fn(&[f64]) -> f64,
{
    if folds < 2 {
        return Err(ClassifyError::InvalidParam(format!("need at least 2 folds, got {folds}")));
    }
    if features.len() < folds {
        return Err(ClassifyError::DatasetTooSmall { size: features.len(), folds });
    }
    if features.len() != labels.len() {
        return Err(ClassifyError::InvalidParam(format!(
            "{} feature vectors vs {} labels",
            features.len(),
            labels.len()
        )));
    }
    let mut pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let mut neg: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    if pos.len() < folds {
        return Err(ClassifyError::Stratification(format!(
            "{} positive examples cannot reach all {folds} folds",
            pos.len()
        )));
    }
    if neg.len() < folds {
        return Err(ClassifyError::Stratification(format!(
            "{} negative examples cannot reach all {folds} folds",
            neg.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffle_indices(&mut pos, &mut rng);
    shuffle_indices(&mut neg, &mut rng);
    let mut fold_of = vec![0usize; labels.len()];
    for (i, &idx) in pos.iter().enumerate() {
        fold_of[idx] = i % folds;
    }
    for (i, &idx) in neg.iter().enumerate() {
        fold_of[idx] = i % folds;
    }

    let mut reports = Vec::with_capacity(folds);
    for fold in 0..folds {
        let validation: Vec<usize> = (0..labels.len()).filter(|&i| fold_of[i] == fold).collect();
        let train_idx: Vec<usize> = (0..labels.len()).filter(|&i| fold_of[i] != fold).collect();
        let mut train_x: Vec<Vec<f64>> = train_idx.iter().map(|&i| features[i].clone()).collect();
        let mut train_y: Vec<bool> = train_idx.iter().map(|&i| labels[i]).collect();
        if let Some(cfg) = smote {
            balance_with_smote(&mut train_x, &mut train_y, cfg, seed ^ (fold as u64 + 1))?;
        }
        let scorer = trainer(&train_x, &train_y)?;
        let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
        for &i in &validation {
            let predicted = scorer(&features[i]) >= 0.5;
            match (predicted, labels[i]) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => tn += 1,
            }
        }
        reports.push(FoldReport { metrics: classification_metrics(tp, fp, fn_, tn), validation });
    }
    let k = reports.len() as f64;
    let mean = FoldMetrics {
        accuracy: reports.iter().map(|r| r.metrics.accuracy).sum::<f64>() / k,
        precision: reports.iter().map(|r| r.metrics.precision).sum::<f64>() / k,
        recall: reports.iter().map(|r| r.metrics.recall).sum::<f64>() / k,
        degenerate_precision: reports.iter().any(|r| r.metrics.degenerate_precision),
    };
    Ok(CvReport { folds: reports, mean })
}

/// Oversamples the minority side of a binary training set to parity.
fn balance_with_smote(
    xs: &mut Vec<Vec<f64>>,
    ys: &mut Vec<bool>,
    cfg: SmoteCfg,
    seed: u64,
) -> Result<(), ClassifyError> {
    let pos: Vec<Vec<f64>> =
        xs.iter().zip(ys.iter()).filter(|(_, &y)| y).map(|(x, _)| x.clone()).collect();
    let neg_count = ys.iter().filter(|&&y| !y).count();
    let (minority, minority_label, majority_count) = if pos.len() <= neg_count {
        (pos, true, neg_count)
    } else {
        let neg: Vec<Vec<f64>> =
            xs.iter().zip(ys.iter()).filter(|(_, &y)| !y).map(|(x, _)| x.clone()).collect();
        let pos_count = ys.len() - neg_count;
        (neg, false, pos_count)
    };
    let needed = majority_count.saturating_sub(minority.len());
    if needed == 0 {
        return Ok(());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let synth = smote_n(&minority, cfg.k, needed, &mut rng)?;
    for s in synth {
        xs.push(s);
        ys.push(minority_label);
    }
    Ok(())
}

/// Cross-validation instantiated with the MLP trainer.
pub fn crossvalidate_mlp(
    features: &[Vec<f64>],
    labels: &[bool],
    hidden: &[usize],
    hyper: &TrainHyper,
    folds: usize,
    smote: Option<SmoteCfg>,
) -> Result<CvReport, ClassifyError> {
    crossvalidate_with(features, labels, folds, hyper.seed, smote, |xs, ys| {
        let model = train_binary(xs, ys, hidden, hyper)?;
        Ok(Box::new(move |x: &[f64]| predict(&model, x).unwrap_or(0.5))
            as Box<dyn Fn(&[f64]) -> f64>)
    })
}

fn shuffle_indices(xs: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..xs.len()).rev() {
        let j = rng.random_range(0..=i);
        xs.swap(i, j);
    }
}
