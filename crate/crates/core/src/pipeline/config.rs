//! Run configuration: one JSON document covering the court, the microphone
//! array, and every stage's knobs. Unknown keys are rejected so typos fail
//! loudly instead of silently falling back to defaults.

use super::PipelineError;
use crate::detect::{DetectorMethod, DetectorParams};
use crate::geometry::{CourtGeometry, MicArray};
use crate::localize::LocalizeOptions;
use crate::signal::Taper;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub geometry: CourtGeometry,
    pub array: MicArray,
    #[serde(default)]
    pub detector: DetectorConfig,
    #[serde(default)]
    pub matcher: MatcherConfig,
    #[serde(default)]
    pub localizer: LocalizerConfig,
    /// Path to a trained classifier bundle; absent disables classification.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classifier_bundle: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<InputSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

/// Audio source: one multichannel file, or one mono file per channel in
/// channel order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InputSpec {
    Multichannel(PathBuf),
    PerChannel(Vec<PathBuf>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    pub method: DetectorMethod,
    /// Detection threshold; None picks the method's default (z = 8 for the
    /// Gaussian detector, w/2 for the surprise detector).
    pub threshold: Option<f64>,
    pub window_w: usize,
    pub history_n: usize,
    pub refractory: u64,
    pub welford_capacity: usize,
    pub refine_threshold: f64,
    pub taper: Taper,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        let p = DetectorParams::gaussian_defaults();
        DetectorConfig {
            method: DetectorMethod::GaussianThreshold,
            threshold: None,
            window_w: p.window_w,
            history_n: p.history_n,
            refractory: p.refractory,
            welford_capacity: p.welford_capacity,
            refine_threshold: p.refine_threshold,
            taper: p.taper,
        }
    }
}

impl DetectorConfig {
    pub fn params(&self) -> DetectorParams {
        let threshold = self.threshold.unwrap_or(match self.method {
            DetectorMethod::GaussianThreshold => DetectorParams::gaussian_defaults().threshold,
            DetectorMethod::Surprise => self.window_w as f64 / 2.0,
        });
        DetectorParams {
            threshold,
            window_w: self.window_w,
            history_n: self.history_n,
            refractory: self.refractory,
            welford_capacity: self.welford_capacity,
            refine_threshold: self.refine_threshold,
            taper: self.taper,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatcherConfig {
    /// Largest inter-channel arrival spread within one group, in samples.
    /// None means the physical bound (court diagonal at the speed of sound).
    pub max_spread: Option<u64>,
    /// Groups with fewer channels are dropped. 4 makes full 3-D solvable;
    /// 3 is enough when the fused class pins the event to a surface.
    pub min_channels: usize,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        MatcherConfig { max_spread: None, min_channels: 4 }
    }
}

/// The spread a direct path across the whole court can produce, in samples:
/// no genuine single event can arrive more than this far apart.
pub fn physical_max_spread(geometry: &CourtGeometry, array: &MicArray) -> u64 {
    let diagonal =
        (geometry.width.powi(2) + geometry.depth.powi(2) + geometry.height.powi(2)).sqrt();
    (diagonal / array.speed_of_sound * array.sample_rate).ceil() as u64
}

impl MatcherConfig {
    pub fn resolved_max_spread(&self, geometry: &CourtGeometry, array: &MicArray) -> u64 {
        self.max_spread.unwrap_or_else(|| physical_max_spread(geometry, array))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocalizerConfig {
    pub max_iters: usize,
    pub grad_tol: f64,
    pub min_step: f64,
    pub box_margin: f64,
}

impl Default for LocalizerConfig {
    fn default() -> Self {
        let o = LocalizeOptions::default();
        LocalizerConfig {
            max_iters: o.max_iters,
            grad_tol: o.grad_tol,
            min_step: o.min_step,
            box_margin: o.box_margin,
        }
    }
}

impl LocalizerConfig {
    pub fn options(&self) -> LocalizeOptions {
        LocalizeOptions {
            max_iters: self.max_iters,
            grad_tol: self.grad_tol,
            min_step: self.min_step,
            box_margin: self.box_margin,
            starts: None,
        }
    }
}

impl PipelineConfig {
    /// Minimal config for a court and array: default stages, no files.
    pub fn for_array(geometry: CourtGeometry, array: MicArray) -> Self {
        PipelineConfig {
            geometry,
            array,
            detector: DetectorConfig::default(),
            matcher: MatcherConfig::default(),
            localizer: LocalizerConfig::default(),
            classifier_bundle: None,
            input: None,
            output: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Config(format!(
            "cannot read {}: {e}",
            path.display()
        )))?;
        let config: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.array
            .validate(&self.geometry)
            .map_err(|e| PipelineError::Config(format!("array: {e}")))?;
        self.detector
            .params()
            .validate()
            .map_err(|e| PipelineError::Config(format!("detector: {e}")))?;
        if self.matcher.min_channels < 3 {
            return Err(PipelineError::Config(format!(
                "matcher.min_channels: need at least 3 timestamps to localize, got {}",
                self.matcher.min_channels
            )));
        }
        let bound = physical_max_spread(&self.geometry, &self.array);
        if let Some(spread) = self.matcher.max_spread {
            if spread < bound {
                return Err(PipelineError::Config(format!(
                    "matcher.max_spread: {spread} samples is below the physical \
                     arrival spread bound {bound}; genuine events would be split"
                )));
            }
        }
        let o = self.localizer.options();
        if o.max_iters == 0 || !(o.grad_tol > 0.0) || !(o.min_step > 0.0) || !(o.box_margin >= 0.0)
        {
            return Err(PipelineError::Config(
                "localizer: iterations and tolerances must be positive".into(),
            ));
        }
        Ok(())
    }
}
