//! Trained classifier persistence and end-to-end bundle training.
//!
//! A bundle holds one binary classifier per impact class, together with the
//! channel and feature kind it was selected on, the normalization it expects,
//! its operating cutoff and its cross-validated precision (the fusion
//! weight). On disk a bundle is a single little-endian binary file plus a
//! human-readable JSON manifest written alongside.

use super::mlp::{predict, train_binary, Layer, MlpModel, TrainHyper};
use super::{
    crossvalidate_mlp, ClassLabel, ClassifyError, FeatureKind, FoldMetrics, FusionRule,
    Normalization, SmoteCfg,
};
use serde::Serialize;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

const MAGIC: &[u8; 4] = b"CSMB";
const FORMAT_VERSION: u32 = 1;

/// One class's trained classifier and its operating point.
#[derive(Debug, Clone, PartialEq)]
pub struct BundleEntry {
    pub model: MlpModel,
    pub channel: usize,
    pub input_kind: FeatureKind,
    pub normalization: Normalization,
    pub cutoff: f64,
    pub precision: f64,
}

impl BundleEntry {
    /// Confidence for raw (unnormalized) feature values.
    pub fn score(&self, raw_values: &[f64]) -> Result<f64, ClassifyError> {
        predict(&self.model, &self.normalization.apply(raw_values))
    }
}

/// Complete classifier set: exactly one entry per trainable class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierBundle {
    entries: BTreeMap<ClassLabel, BundleEntry>,
}

impl ClassifierBundle {
    pub fn new(entries: BTreeMap<ClassLabel, BundleEntry>) -> Result<Self, ClassifyError> {
        for class in ClassLabel::TRAINABLE {
            if !entries.contains_key(&class) {
                return Err(ClassifyError::InvalidBundle(format!("missing entry for {class}")));
            }
        }
        for (&class, entry) in &entries {
            if class == ClassLabel::FalseEvent {
                return Err(ClassifyError::InvalidBundle(
                    "false_event cannot have a classifier".into(),
                ));
            }
            if !(entry.cutoff > 0.0 && entry.cutoff < 1.0) {
                return Err(ClassifyError::InvalidBundle(format!(
                    "cutoff for {class} must be in (0,1), got {}",
                    entry.cutoff
                )));
            }
            if !(0.0..=1.0).contains(&entry.precision) {
                return Err(ClassifyError::InvalidBundle(format!(
                    "precision for {class} must be in [0,1], got {}",
                    entry.precision
                )));
            }
        }
        Ok(ClassifierBundle { entries })
    }

    pub fn entries(&self) -> &BTreeMap<ClassLabel, BundleEntry> {
        &self.entries
    }

    pub fn entry(&self, class: ClassLabel) -> Option<&BundleEntry> {
        self.entries.get(&class)
    }

    pub fn fusion_rule(&self) -> FusionRule {
        FusionRule::new(
            self.entries.iter().map(|(&c, e)| (c, (e.cutoff, e.precision))).collect(),
        )
        .expect("bundle invariants imply a valid rule")
    }

    /// Serializes to `path` and writes `<path>.manifest.json` next to it.
    pub fn save(&self, path: &Path) -> Result<(), ClassifyError> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (&class, entry) in &self.entries {
            buf.push(class_tag(class));
            buf.extend_from_slice(&(entry.channel as u32).to_le_bytes());
            buf.push(match entry.input_kind {
                FeatureKind::T1 => 0,
                FeatureKind::T2 => 1,
            });
            buf.push(match entry.normalization {
                Normalization::None => 0,
                Normalization::MaxAbs => 1,
                Normalization::Sum => 2,
            });
            buf.extend_from_slice(&(entry.model.layer_sizes.len() as u32).to_le_bytes());
            for &s in &entry.model.layer_sizes {
                buf.extend_from_slice(&(s as u32).to_le_bytes());
            }
            for layer in &entry.model.layers {
                for &w in &layer.weights {
                    buf.extend_from_slice(&w.to_le_bytes());
                }
                for &b in &layer.biases {
                    buf.extend_from_slice(&b.to_le_bytes());
                }
            }
            buf.extend_from_slice(&entry.cutoff.to_le_bytes());
            buf.extend_from_slice(&entry.precision.to_le_bytes());
        }
        let mut file = std::fs::File::create(path)?;
        file.write_all(&buf)?;

        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            entries: self
                .entries
                .iter()
                .map(|(&class, e)| ManifestEntry {
                    class: class.as_str().to_string(),
                    channel: e.channel,
                    input_kind: e.input_kind.as_str().to_string(),
                    normalization: match e.normalization {
                        Normalization::None => "none",
                        Normalization::MaxAbs => "max_abs",
                        Normalization::Sum => "sum",
                    }
                    .to_string(),
                    layer_sizes: e.model.layer_sizes.clone(),
                    parameter_count: e
                        .model
                        .layers
                        .iter()
                        .map(|l| l.weights.len() + l.biases.len())
                        .sum(),
                    cutoff: e.cutoff,
                    precision: e.precision,
                })
                .collect(),
        };
        let manifest_path = manifest_path_for(path);
        let json = serde_json::to_string_pretty(&manifest)
            .map_err(|e| ClassifyError::InvalidBundle(format!("manifest: {e}")))?;
        std::fs::write(manifest_path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ClassifyError> {
        let bytes = std::fs::read(path)?;
        let mut r = Reader { bytes: &bytes, at: 0 };
        if r.take(4)? != MAGIC {
            return Err(ClassifyError::InvalidBundle("bad magic; not a classifier bundle".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(ClassifyError::InvalidBundle(format!(
                "unsupported format version {version}"
            )));
        }
        let count = r.u32()? as usize;
        let mut entries = BTreeMap::new();
        for _ in 0..count {
            let class = class_from_tag(r.u8()?)?;
            let channel = r.u32()? as usize;
            let input_kind = match r.u8()? {
                0 => FeatureKind::T1,
                1 => FeatureKind::T2,
                t => return Err(ClassifyError::InvalidBundle(format!("bad feature tag {t}"))),
            };
            let normalization = match r.u8()? {
                0 => Normalization::None,
                1 => Normalization::MaxAbs,
                2 => Normalization::Sum,
                t => {
                    return Err(ClassifyError::InvalidBundle(format!(
                        "bad normalization tag {t}"
                    )))
                }
            };
            let n_sizes = r.u32()? as usize;
            let mut layer_sizes = Vec::with_capacity(n_sizes);
            for _ in 0..n_sizes {
                layer_sizes.push(r.u32()? as usize);
            }
            let mut layers = Vec::with_capacity(n_sizes.saturating_sub(1));
            for win in layer_sizes.windows(2) {
                let (fan_in, fan_out) = (win[0], win[1]);
                let mut weights = Vec::with_capacity(fan_in * fan_out);
                for _ in 0..fan_in * fan_out {
                    weights.push(r.f64()?);
                }
                let mut biases = Vec::with_capacity(fan_out);
                for _ in 0..fan_out {
                    biases.push(r.f64()?);
                }
                layers.push(Layer { weights, biases });
            }
            let model = MlpModel::from_parts(layer_sizes, layers)
                .map_err(|e| ClassifyError::InvalidBundle(e.to_string()))?;
            let cutoff = r.f64()?;
            let precision = r.f64()?;
            entries.insert(
                class,
                BundleEntry { model, channel, input_kind, normalization, cutoff, precision },
            );
        }
        if r.at != bytes.len() {
            return Err(ClassifyError::InvalidBundle(format!(
                "{} trailing bytes",
                bytes.len() - r.at
            )));
        }
        ClassifierBundle::new(entries)
    }
}

pub fn manifest_path_for(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_os_string();
    os.push(".manifest.json");
    std::path::PathBuf::from(os)
}

fn class_tag(class: ClassLabel) -> u8 {
    match class {
        ClassLabel::FrontWall => 0,
        ClassLabel::Racquet => 1,
        ClassLabel::Floor => 2,
        ClassLabel::Glass => 3,
        ClassLabel::FalseEvent => 4,
    }
}

fn class_from_tag(tag: u8) -> Result<ClassLabel, ClassifyError> {
    match tag {
        0 => Ok(ClassLabel::FrontWall),
        1 => Ok(ClassLabel::Racquet),
        2 => Ok(ClassLabel::Floor),
        3 => Ok(ClassLabel::Glass),
        t => Err(ClassifyError::InvalidBundle(format!("bad class tag {t}"))),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ClassifyError> {
        if self.at + n > self.bytes.len() {
            return Err(ClassifyError::InvalidBundle("truncated bundle file".into()));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ClassifyError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, ClassifyError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, ClassifyError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[derive(Serialize)]
struct Manifest {
    format_version: u32,
    entries: Vec<ManifestEntry>,
}

#[derive(Serialize)]
struct ManifestEntry {
    class: String,
    channel: usize,
    input_kind: String,
    normalization: String,
    layer_sizes: Vec<usize>,
    parameter_count: usize,
    cutoff: f64,
    precision: f64,
}

/// Cutoff maximizing F1 over the training confidences. Candidates are the
/// midpoints between adjacent distinct confidence values; ties prefer the
/// lowest cutoff. The result is clamped inside (0,1).
pub fn select_cutoff(confidences: &[f64], labels: &[bool]) -> f64 {
    let mut sorted: Vec<f64> = confidences.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut candidates = vec![0.5];
    candidates.extend(sorted.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    if let (Some(&lo), Some(&hi)) = (sorted.first(), sorted.last()) {
        candidates.push(lo / 2.0);
        candidates.push((hi + 1.0) / 2.0);
    }
    let mut best = (f64::NEG_INFINITY, 0.5);
    for &cut in &candidates {
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut fn_ = 0usize;
        for (&c, &y) in confidences.iter().zip(labels) {
            match (c > cut, y) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        let f1 = if 2 * tp + fp + fn_ == 0 {
            0.0
        } else {
            2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
        };
        if f1 > best.0 || (f1 == best.0 && cut < best.1) {
            best = (f1, cut);
        }
    }
    best.1.clamp(1e-6, 1.0 - 1e-6)
}

/// One labeled training observation: the raw feature values extracted on a
/// channel, plus the surface class of the underlying event.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub channel: usize,
    pub kind: FeatureKind,
    pub values: Vec<f64>,
    pub class: ClassLabel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    /// Hidden layer widths for raw-waveform classifiers.
    pub t1_hidden: Vec<usize>,
    /// Hidden layer widths for spectrum classifiers.
    pub t2_hidden: Vec<usize>,
    pub hyper: TrainHyper,
    pub folds: usize,
    pub smote: Option<SmoteCfg>,
    pub t1_normalization: Normalization,
    pub t2_normalization: Normalization,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            t1_hidden: vec![10; 20],
            t2_hidden: vec![10; 10],
            hyper: TrainHyper::default(),
            folds: 8,
            smote: Some(SmoteCfg::default()),
            t1_normalization: Normalization::MaxAbs,
            t2_normalization: Normalization::Sum,
        }
    }
}

/// Where each class's winning classifier came from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassOutcome {
    pub channel: usize,
    pub input_kind: FeatureKind,
    pub cv_mean: FoldMetrics,
    pub combinations_tried: usize,
    pub cutoff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainingSummary {
    pub per_class: BTreeMap<ClassLabel, ClassOutcome>,
}

/// Trains the full bundle: for every class, cross-validates a binary
/// classifier on each (channel, feature-kind) group with enough data on both
/// sides, keeps the most accurate combination, retrains it on the full
/// (SMOTE-balanced) group and picks its cutoff on the training confidences.
/// The stored precision is the cross-validated mean precision.
pub fn train_bundle(
    examples: &[TrainExample],
    cfg: &TrainingConfig,
) -> Result<(ClassifierBundle, TrainingSummary), ClassifyError> {
    if examples.is_empty() {
        return Err(ClassifyError::InvalidParam("no training examples".into()));
    }
    // Group by (channel, kind), normalizing features on the way in.
    type Group = (Vec<Vec<f64>>, Vec<ClassLabel>);
    let mut groups: BTreeMap<(usize, FeatureKind), Group> = BTreeMap::new();
    for ex in examples {
        let norm = match ex.kind {
            FeatureKind::T1 => cfg.t1_normalization,
            FeatureKind::T2 => cfg.t2_normalization,
        };
        let slot = groups.entry((ex.channel, ex.kind)).or_default();
        slot.0.push(norm.apply(&ex.values));
        slot.1.push(ex.class);
    }
    for ((channel, kind), (xs, _)) in &groups {
        let dim = xs[0].len();
        if xs.iter().any(|x| x.len() != dim) {
            return Err(ClassifyError::InvalidParam(format!(
                "channel {channel} {} features have mixed lengths",
                kind.as_str()
            )));
        }
    }

    let mut entries = BTreeMap::new();
    let mut per_class = BTreeMap::new();
    for class in ClassLabel::TRAINABLE {
        let mut tried = 0usize;
        let mut best: Option<(f64, (usize, FeatureKind), super::CvReport)> = None;
        for (&(channel, kind), (xs, cs)) in &groups {
            let labels: Vec<bool> = cs.iter().map(|&c| c == class).collect();
            let pos = labels.iter().filter(|&&y| y).count();
            let neg = labels.len() - pos;
            if pos < cfg.folds || neg < cfg.folds {
                continue;
            }
            tried += 1;
            let hidden = match kind {
                FeatureKind::T1 => &cfg.t1_hidden,
                FeatureKind::T2 => &cfg.t2_hidden,
            };
            let hyper = TrainHyper {
                seed: derive_seed(cfg.hyper.seed, class_tag(class), channel, kind),
                ..cfg.hyper.clone()
            };
            let report = match crossvalidate_mlp(xs, &labels, hidden, &hyper, cfg.folds, cfg.smote)
            {
                Ok(r) => r,
                Err(_) => continue, // unusable combination, try the next
            };
            let acc = report.mean.accuracy;
            if best.as_ref().is_none_or(|(b, _, _)| acc > *b) {
                best = Some((acc, (channel, kind), report));
            }
        }
        let Some((_, (channel, kind), report)) = best else {
            return Err(ClassifyError::InsufficientData { class });
        };
        let (xs, cs) = &groups[&(channel, kind)];
        let labels: Vec<bool> = cs.iter().map(|&c| c == class).collect();
        let mut train_x = xs.clone();
        let mut train_y = labels.clone();
        if let Some(smote_cfg) = cfg.smote {
            let seed = derive_seed(cfg.hyper.seed, class_tag(class) ^ 0x40, channel, kind);
            super::balance_with_smote(&mut train_x, &mut train_y, smote_cfg, seed)?;
        }
        let hyper = TrainHyper {
            seed: derive_seed(cfg.hyper.seed, class_tag(class) ^ 0x80, channel, kind),
            ..cfg.hyper.clone()
        };
        let hidden = match kind {
            FeatureKind::T1 => &cfg.t1_hidden,
            FeatureKind::T2 => &cfg.t2_hidden,
        };
        let model = train_binary(&train_x, &train_y, hidden, &hyper)?;
        // Cutoff from the original (non-synthetic) examples only.
        let confidences: Vec<f64> = xs
            .iter()
            .map(|x| predict(&model, x))
            .collect::<Result<_, _>>()?;
        let cutoff = select_cutoff(&confidences, &labels);
        let normalization = match kind {
            FeatureKind::T1 => cfg.t1_normalization,
            FeatureKind::T2 => cfg.t2_normalization,
        };
        per_class.insert(
            class,
            ClassOutcome {
                channel,
                input_kind: kind,
                cv_mean: report.mean,
                combinations_tried: tried,
                cutoff,
            },
        );
        entries.insert(
            class,
            BundleEntry {
                model,
                channel,
                input_kind: kind,
                normalization,
                cutoff,
                precision: report.mean.precision,
            },
        );
    }
    Ok((ClassifierBundle::new(entries)?, TrainingSummary { per_class }))
}

fn derive_seed(base: u64, tag: u8, channel: usize, kind: FeatureKind) -> u64 {
    // splitmix64 over the packed identifiers; decorrelates per-model streams.
    let mut z = base
        ^ (u64::from(tag) << 32)
        ^ ((channel as u64) << 8)
        ^ match kind {
            FeatureKind::T1 => 1,
            FeatureKind::T2 => 2,
        };
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
