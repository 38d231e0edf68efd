//! End-to-end orchestration: ingest audio, detect per channel, match
//! detections across channels, classify, localize, and emit events in time
//! order. Every stage is also usable on its own.
//!
//! Matching policy: a greedy sweep over the merged detection timeline. The
//! earliest unconsumed detection seeds a group, which then takes the first
//! detection from every other channel arriving within `max_spread` samples
//! of the seed. A seed that cannot gather `min_channels` channels is
//! discarded alone, leaving its neighbors available to later seeds, so one
//! spurious early detection cannot swallow a genuine event.

pub mod config;
pub mod io;

pub use config::{
    physical_max_spread, DetectorConfig, InputSpec, LocalizerConfig, MatcherConfig,
    PipelineConfig,
};

use crate::classify::{
    extract_t1, extract_t2, fuse, ClassLabel, ClassifierBundle, ClassifyError, FeatureKind,
    FusionRule,
};
use crate::detect::{detect_gaussian, detect_surprise, DetectError, Detection, DetectorMethod};
use crate::geometry::Vec3;
use crate::localize::{localize_3d, localize_on_plane, EventGroup, LocalizeError};
use crate::signal::AudioBlock;
use rayon::prelude::*;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("ingest {field}: {detail}")]
    Ingest { field: String, detail: String },
    #[error("{path} line {line}: {detail}")]
    Malformed { path: String, line: usize, detail: String },
    #[error("detect stage, channel {channel}: {source}")]
    Detect { channel: usize, source: DetectError },
    #[error("classify stage, event {event_id}: {source}")]
    Classify { event_id: String, source: ClassifyError },
    #[error("localize stage, event {event_id}: {source}")]
    Localize { event_id: String, source: LocalizeError },
    #[error("model bundle: {0}")]
    Bundle(ClassifyError),
    #[error("comparison: {0}")]
    Comparison(String),
    #[error("audio file: {0}")]
    Wav(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Signal(#[from] crate::signal::SignalError),
}

/// Final pipeline record: what happened, where, when, and how sure we are.
/// False events carry no position or residual; their `event_time` is the
/// earliest arrival instead of a solved emission time.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifiedLocatedEvent {
    /// "(earliest channel)-(earliest sample index)"; stable and replayable.
    pub event_id: String,
    pub class: ClassLabel,
    pub position: Option<Vec3>,
    /// Seconds. Solved emission time for located events.
    pub event_time: f64,
    pub residual: Option<f64>,
    pub confidences: BTreeMap<ClassLabel, f64>,
    pub detections: Vec<Detection>,
}

/// Greedy temporal clustering of per-channel detections; see the module doc
/// for the policy. Groups keep at most one detection per channel (the
/// earliest) and span at most `max_spread` samples.
pub fn match_detections(
    per_channel: &[Vec<Detection>],
    max_spread: u64,
    min_channels: usize,
) -> Vec<Vec<Detection>> {
    let mut all: Vec<&Detection> = per_channel.iter().flatten().collect();
    all.sort_by_key(|d| (d.sample_index, d.channel));
    let mut consumed = vec![false; all.len()];
    let mut groups = Vec::new();
    for i in 0..all.len() {
        if consumed[i] {
            continue;
        }
        let seed = all[i];
        let mut members = vec![i];
        let mut taken: BTreeSet<usize> = BTreeSet::from([seed.channel]);
        for (j, candidate) in all.iter().enumerate().skip(i + 1) {
            if candidate.sample_index - seed.sample_index > max_spread {
                break;
            }
            if !consumed[j] && taken.insert(candidate.channel) {
                members.push(j);
            }
        }
        if members.len() >= min_channels {
            let mut group = Vec::with_capacity(members.len());
            for &m in &members {
                consumed[m] = true;
                group.push(all[m].clone());
            }
            groups.push(group);
        } else {
            consumed[i] = true;
        }
    }
    groups
}

/// Per-group classification hook. Implementations see the whole audio block
/// plus one matched group (absolute sample indices; subtract
/// `block.start_index` to address samples) and return a confidence for every
/// trainable class.
pub trait DetectionScorer: Sync {
    fn confidences(
        &self,
        block: &AudioBlock,
        group: &[Detection],
    ) -> Result<BTreeMap<ClassLabel, f64>, ClassifyError>;

    /// Cutoffs and fusion weights matching the confidences.
    fn fusion_rule(&self) -> FusionRule;
}

/// Scorer backed by a trained bundle: each class is scored on its designated
/// channel's feature. A group missing that channel, or a detection too close
/// to the block edge to extract a feature, scores 0 for that class.
pub struct BundleScorer {
    bundle: ClassifierBundle,
}

impl BundleScorer {
    pub fn new(bundle: ClassifierBundle) -> Self {
        BundleScorer { bundle }
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        Ok(BundleScorer { bundle: ClassifierBundle::load(path).map_err(PipelineError::Bundle)? })
    }

    pub fn bundle(&self) -> &ClassifierBundle {
        &self.bundle
    }
}

impl DetectionScorer for BundleScorer {
    fn confidences(
        &self,
        block: &AudioBlock,
        group: &[Detection],
    ) -> Result<BTreeMap<ClassLabel, f64>, ClassifyError> {
        let mut out = BTreeMap::new();
        for (&class, entry) in self.bundle.entries() {
            let detection = group
                .iter()
                .find(|d| d.channel == entry.channel)
                .and_then(|d| {
                    let local = d.sample_index.checked_sub(block.start_index)?;
                    Some(Detection { sample_index: local, ..d.clone() })
                });
            let confidence = match detection {
                None => 0.0,
                Some(local) => {
                    let input = entry.model.layer_sizes[0];
                    let stream = block.channel(local.channel);
                    let feature = match entry.input_kind {
                        FeatureKind::T1 => extract_t1(stream, &local, (input - 1) / 2),
                        FeatureKind::T2 => extract_t2(stream, &local, input),
                    };
                    match feature {
                        Ok(f) => entry.score(&f.values)?,
                        Err(ClassifyError::Boundary { .. }) => 0.0,
                        Err(e) => return Err(e),
                    }
                }
            };
            out.insert(class, confidence);
        }
        Ok(out)
    }

    fn fusion_rule(&self) -> FusionRule {
        self.bundle.fusion_rule()
    }
}

/// Full batch run from config: ingest, then `run_block` with the configured
/// classifier bundle (if any).
pub fn run(config: &PipelineConfig) -> Result<Vec<ClassifiedLocatedEvent>, PipelineError> {
    config.validate()?;
    let input = config
        .input
        .as_ref()
        .ok_or_else(|| PipelineError::Config("input: no audio source configured".into()))?;
    let block = io::ingest(input, &config.array)?;
    match &config.classifier_bundle {
        Some(path) => {
            let scorer = BundleScorer::load(path)?;
            run_block(&block, config, Some(&scorer))
        }
        None => run_block(&block, config, None),
    }
}

/// The analysis chain on one in-memory block. Detection fans out per
/// channel and classification/localization fan out per group; results are
/// deterministic regardless of scheduling. Without a scorer, events are
/// labeled racquet (unconstrained) and carry empty confidences.
pub fn run_block(
    block: &AudioBlock,
    config: &PipelineConfig,
    scorer: Option<&dyn DetectionScorer>,
) -> Result<Vec<ClassifiedLocatedEvent>, PipelineError> {
    config.validate()?;
    if block.channels() != config.array.len() {
        return Err(PipelineError::Ingest {
            field: "channels".into(),
            detail: format!(
                "block has {} channels, array expects {}",
                block.channels(),
                config.array.len()
            ),
        });
    }
    let params = config.detector.params();
    let per_channel: Vec<Vec<Detection>> = (0..block.channels())
        .into_par_iter()
        .map(|ch| {
            let detections = match config.detector.method {
                DetectorMethod::GaussianThreshold => {
                    detect_gaussian(ch, block.channel(ch), &params)
                }
                DetectorMethod::Surprise => detect_surprise(ch, block.channel(ch), &params),
            }
            .map_err(|source| PipelineError::Detect { channel: ch, source })?;
            Ok(detections
                .into_iter()
                .map(|mut d| {
                    d.sample_index += block.start_index;
                    d
                })
                .collect())
        })
        .collect::<Result<_, PipelineError>>()?;

    let max_spread = config.matcher.resolved_max_spread(&config.geometry, &config.array);
    let groups = match_detections(&per_channel, max_spread, config.matcher.min_channels);
    let opts = config.localizer.options();

    let mut events: Vec<ClassifiedLocatedEvent> = groups
        .par_iter()
        .map(|group| {
            let earliest = group
                .iter()
                .min_by_key(|d| (d.sample_index, d.channel))
                .expect("groups are never empty");
            let event_id = format!("{}-{}", earliest.channel, earliest.sample_index);
            let (class, confidences) = match scorer {
                Some(s) => {
                    let confidences = s.confidences(block, group).map_err(|source| {
                        PipelineError::Classify { event_id: event_id.clone(), source }
                    })?;
                    let class = fuse(&confidences, &s.fusion_rule()).map_err(|source| {
                        PipelineError::Classify { event_id: event_id.clone(), source }
                    })?;
                    (class, confidences)
                }
                None => (ClassLabel::Racquet, BTreeMap::new()),
            };
            if class == ClassLabel::FalseEvent {
                return Ok(ClassifiedLocatedEvent {
                    event_id,
                    class,
                    position: None,
                    event_time: earliest.sample_index as f64 / config.array.sample_rate,
                    residual: None,
                    confidences,
                    detections: group.clone(),
                });
            }
            let event_group = EventGroup::from_detections(group)
                .map_err(|source| PipelineError::Localize { event_id: event_id.clone(), source })?;
            let solved = match class.surface() {
                Some(surface) => localize_on_plane(
                    &event_group,
                    &config.array,
                    &config.geometry,
                    config.geometry.surface(surface),
                    &opts,
                ),
                None => localize_3d(&event_group, &config.array, &config.geometry, &opts),
            }
            .map_err(|source| PipelineError::Localize { event_id: event_id.clone(), source })?;
            Ok(ClassifiedLocatedEvent {
                event_id,
                class,
                position: Some(solved.position),
                event_time: solved.event_time,
                residual: Some(solved.residual),
                confidences,
                detections: group.clone(),
            })
        })
        .collect::<Result<_, PipelineError>>()?;

    events.sort_by(|a, b| {
        a.event_time.total_cmp(&b.event_time).then_with(|| a.event_id.cmp(&b.event_id))
    });
    Ok(events)
}

/// Mean and standard deviation of the pairwise position distances between
/// two id-aligned event lists (population std). Pairs where either side has
/// no position are skipped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalizationDelta {
    pub mean_distance: f64,
    pub std_distance: f64,
    /// Pairs that actually contributed.
    pub count: usize,
}

pub fn compare_localizations(
    a: &[ClassifiedLocatedEvent],
    b: &[ClassifiedLocatedEvent],
) -> Result<LocalizationDelta, PipelineError> {
    if a.len() != b.len() {
        return Err(PipelineError::Comparison(format!(
            "{} events vs {}",
            a.len(),
            b.len()
        )));
    }
    let mut distances = Vec::new();
    for (x, y) in a.iter().zip(b) {
        if x.event_id != y.event_id {
            return Err(PipelineError::Comparison(format!(
                "event id mismatch: {} vs {}",
                x.event_id, y.event_id
            )));
        }
        if let (Some(p), Some(q)) = (x.position, y.position) {
            distances.push(p.distance_to(q));
        }
    }
    if distances.is_empty() {
        return Err(PipelineError::Comparison("no localized pairs to compare".into()));
    }
    let n = distances.len() as f64;
    let mean = distances.iter().sum::<f64>() / n;
    let var = distances.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
    Ok(LocalizationDelta { mean_distance: mean, std_distance: var.sqrt(), count: distances.len() })
}
