//! Synthetic forward model: random court events, exact propagation delays,
//! timestamp and waveform noise. Everything the numerical experiments need
//! as ground truth comes from here.
//!
//! The waveform template is deliberately simple: a broadband burst whose
//! envelope decays exponentially with a 3 ms time constant, scaled by the
//! event amplitude and attenuated with distance. Only its onset time and
//! rough loudness matter downstream; no reflections, absorption or
//! directivity are modeled.

use crate::classify::ClassLabel;
use crate::geometry::{CourtGeometry, MicArray, Vec3};
use crate::localize::{localize_3d, EventGroup, LocalizeError, LocalizeOptions};
use crate::signal::{AudioBlock, SignalError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Base template amplitude for a unit-loudness event at the reference
/// distance (the court diagonal).
const BASE_AMPLITUDE: f64 = 0.05;
/// Template envelope time constant, seconds.
const DECAY_SECONDS: f64 = 3e-3;
/// Bursts are cut off after this many time constants (envelope < 0.25%).
const BURST_LIFETIMES: f64 = 6.0;
/// Events pinned to a surface must sit within this many meters of it.
const SURFACE_SLACK: f64 = 0.05;

#[derive(Debug, Error)]
pub enum SimulateError {
    #[error("event position {0} lies outside the court")]
    OutOfCourt(Vec3),
    #[error("{surface} event sits {offset:.3} m off its surface (limit {SURFACE_SLACK} m)")]
    OffSurface { surface: ClassLabel, offset: f64 },
    #[error("amplitude must be in (0,1], got {0}")]
    BadAmplitude(f64),
    #[error("timestamp sigma must be nonnegative, got {0}")]
    NegativeSigma(f64),
    #[error("experiment needs at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("arrival at sample {arrival} does not fit in {duration} samples")]
    DurationTooShort { arrival: u64, duration: usize },
    #[error("false_event cannot be synthesized")]
    NotAPhysicalEvent,
    #[error(transparent)]
    Localize(#[from] LocalizeError),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

/// Ground-truth impact: where, when, on what, and how loud.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticEvent {
    pub position: Vec3,
    /// Emission time, seconds.
    pub time: f64,
    pub surface: ClassLabel,
    /// Relative loudness in (0, 1].
    pub amplitude: f64,
}

impl SyntheticEvent {
    /// Checks the physical invariants: inside the court, on (or near) the
    /// claimed surface, positive bounded loudness.
    pub fn validate(&self, geometry: &CourtGeometry) -> Result<(), SimulateError> {
        if self.surface == ClassLabel::FalseEvent {
            return Err(SimulateError::NotAPhysicalEvent);
        }
        if !(self.amplitude > 0.0 && self.amplitude <= 1.0) {
            return Err(SimulateError::BadAmplitude(self.amplitude));
        }
        if !geometry.contains(self.position, 0.0) {
            return Err(SimulateError::OutOfCourt(self.position));
        }
        if let Some(surface) = self.surface.surface() {
            let plane = geometry.surface(surface);
            let offset = plane.offset(self.position).abs();
            if offset > SURFACE_SLACK {
                return Err(SimulateError::OffSurface { surface: self.surface, offset });
            }
        }
        Ok(())
    }
}

/// Measurement noise knobs. `timestamp_sigma` jitters arrival times (in
/// samples); `waveform_snr_db` sets the additive background level for
/// synthesized audio (None means silence between bursts).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub timestamp_sigma: f64,
    pub waveform_snr_db: Option<f64>,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn noiseless(seed: u64) -> Self {
        NoiseSpec { timestamp_sigma: 0.0, waveform_snr_db: None, seed }
    }

    fn validate(&self) -> Result<(), SimulateError> {
        if !(self.timestamp_sigma >= 0.0) {
            return Err(SimulateError::NegativeSigma(self.timestamp_sigma));
        }
        Ok(())
    }

    /// Background noise standard deviation implied by the SNR floor,
    /// relative to the base template amplitude.
    pub fn noise_std(&self) -> f64 {
        match self.waveform_snr_db {
            Some(snr) => BASE_AMPLITUDE * 10f64.powf(-snr / 20.0),
            None => 0.0,
        }
    }
}

/// Exact arrival timestamps, in samples, of `event` at every microphone:
/// τ_i = (time + distance_i / c) · rate. Fractional by default; set
/// `round_to_sample` to mimic integer detection indices.
pub fn forward_delays(
    event: &SyntheticEvent,
    array: &MicArray,
    round_to_sample: bool,
) -> Result<EventGroup, SimulateError> {
    let timestamps: BTreeMap<usize, f64> = array
        .mics
        .iter()
        .map(|mic| {
            let t = event.time + event.position.distance_to(mic.position) / array.speed_of_sound;
            let tau = t * array.sample_rate;
            (mic.id, if round_to_sample { tau.round() } else { tau })
        })
        .collect();
    Ok(EventGroup::new(timestamps)?)
}

/// Adds i.i.d. Gaussian jitter (σ = `timestamp_sigma` samples) to every
/// channel. Deterministic for a fixed seed; σ = 0 returns the group as-is.
pub fn perturb(group: &EventGroup, noise: &NoiseSpec) -> Result<EventGroup, SimulateError> {
    noise.validate()?;
    if noise.timestamp_sigma == 0.0 {
        return Ok(group.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    perturb_with_rng(group, noise.timestamp_sigma, &mut rng)
}

/// Jitter driven by a caller-owned stream; channels are visited in
/// ascending order so the draw sequence is well-defined.
fn perturb_with_rng(
    group: &EventGroup,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<EventGroup, SimulateError> {
    let normal = Normal::new(0.0, sigma).map_err(|_| SimulateError::NegativeSigma(sigma))?;
    let timestamps: BTreeMap<usize, f64> = group
        .timestamps()
        .iter()
        .map(|(&ch, &t)| (ch, t + normal.sample(rng)))
        .collect();
    Ok(EventGroup::new(timestamps)?)
}

/// Multichannel audio containing every event's burst at its exact arrival
/// sample, on top of a Gaussian background at the SNR floor. Requires each
/// arrival to land inside `duration`. Sample values are clipped to [-1, 1].
pub fn synth_waveform(
    events: &[SyntheticEvent],
    array: &MicArray,
    duration: usize,
    noise: &NoiseSpec,
) -> Result<AudioBlock, SimulateError> {
    noise.validate()?;
    let rate = array.sample_rate;
    let tau_samples = DECAY_SECONDS * rate;
    let burst_len = (BURST_LIFETIMES * tau_samples).ceil() as usize;
    let reference = reference_distance(array);
    let noise_std = noise.noise_std();

    let mut channels: Vec<Vec<f64>> = Vec::with_capacity(array.len());
    for mic in &array.mics {
        let mut samples = vec![0.0f64; duration];
        if noise_std > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(noise.seed, 0, mic.id as u64));
            for s in samples.iter_mut() {
                *s = noise_std * rng.sample::<f64, _>(StandardNormal);
            }
        }
        for (event_idx, event) in events.iter().enumerate() {
            let dist = event.position.distance_to(mic.position);
            let arrival =
                ((event.time + dist / array.speed_of_sound) * rate).round();
            if arrival < 0.0 || arrival as usize >= duration {
                return Err(SimulateError::DurationTooShort {
                    arrival: arrival.max(0.0) as u64,
                    duration,
                });
            }
            let onset = arrival as usize;
            let peak = event.amplitude * BASE_AMPLITUDE * reference / dist.max(1e-3);
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(
                noise.seed,
                event_idx as u64 + 1,
                mic.id as u64,
            ));
            // First sample carries the full peak so the onset is the
            // burst's own argmax; the tail is bounded away from it.
            samples[onset] += peak;
            for k in 1..burst_len {
                let Some(slot) = samples.get_mut(onset + k) else { break };
                let envelope = peak * (-(k as f64) / tau_samples).exp();
                let shape: f64 = rng.sample::<f64, _>(StandardNormal);
                *slot += envelope * 0.9 * (shape / 3.0).clamp(-1.0, 1.0);
            }
        }
        for s in samples.iter_mut() {
            *s = s.clamp(-1.0, 1.0);
        }
        channels.push(samples);
    }
    Ok(AudioBlock::new(rate, 0, channels)?)
}

/// Farthest mic-to-corner distance: the scale at which a unit event decays
/// to the base template amplitude.
fn reference_distance(array: &MicArray) -> f64 {
    let mut max_coord = Vec3::ZERO;
    for mic in &array.mics {
        max_coord = Vec3::new(
            max_coord.x.max(mic.position.x),
            max_coord.y.max(mic.position.y),
            max_coord.z.max(mic.position.z),
        );
    }
    max_coord.norm().max(1.0)
}

/// Per-σ sorted localization errors over uniformly sampled court positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorTable {
    pub sigmas: Vec<f64>,
    /// One ascending array of ‖r̂ − r‖ per σ, meters.
    pub errors: Vec<Vec<f64>>,
}

impl ErrorTable {
    /// Nearest-rank percentile, q in [0, 1].
    pub fn percentile(&self, sigma_index: usize, q: f64) -> f64 {
        let errs = &self.errors[sigma_index];
        assert!(!errs.is_empty(), "no errors recorded");
        let rank = ((q * errs.len() as f64).ceil() as usize).clamp(1, errs.len());
        errs[rank - 1]
    }

    pub fn median(&self, sigma_index: usize) -> f64 {
        self.percentile(sigma_index, 0.5)
    }

    /// Tab-separated table (sigma, percentile, error_m), one row per sample,
    /// ready for any plotting tool.
    pub fn to_delimited(&self) -> String {
        let mut out = String::from("sigma\tpercentile\terror_m\n");
        for (s, errs) in self.sigmas.iter().zip(&self.errors) {
            let n = errs.len() as f64;
            for (i, e) in errs.iter().enumerate() {
                let pct = 100.0 * (i as f64 + 1.0) / n;
                out.push_str(&format!("{s}\t{pct:.4}\t{e:.6}\n"));
            }
        }
        out
    }
}

/// Localization-error sweep: for each σ, draws `n_points` uniform positions
/// in the court, forward-models exact delays, jitters them, solves, and
/// records the position error. Per-point RNG streams are derived from
/// (seed, σ index, point index), so the run is bit-reproducible and
/// independent of scheduling.
pub fn error_experiment(
    n_points: usize,
    sigmas: &[f64],
    array: &MicArray,
    geometry: &CourtGeometry,
    seed: u64,
) -> Result<ErrorTable, SimulateError> {
    if n_points < 100 {
        return Err(SimulateError::TooFewPoints { needed: 100, got: n_points });
    }
    for &s in sigmas {
        if !(s >= 0.0) {
            return Err(SimulateError::NegativeSigma(s));
        }
    }
    let mut errors = Vec::with_capacity(sigmas.len());
    for (sigma_index, &sigma) in sigmas.iter().enumerate() {
        let mut errs: Vec<f64> = (0..n_points)
            .into_par_iter()
            .map(|point| point_error(seed, sigma_index, point, sigma, array, geometry))
            .collect::<Result<_, _>>()?;
        errs.sort_by(f64::total_cmp);
        errors.push(errs);
    }
    Ok(ErrorTable { sigmas: sigmas.to_vec(), errors })
}

/// One experiment draw: position from the point's own stream, exact forward
/// delays, Gaussian jitter from the same stream, full 3-D solve. The box
/// check is relaxed so even badly jittered draws report their honest error.
pub(crate) fn point_error(
    seed: u64,
    sigma_index: usize,
    point: usize,
    sigma: f64,
    array: &MicArray,
    geometry: &CourtGeometry,
) -> Result<f64, SimulateError> {
    let mut rng =
        ChaCha8Rng::seed_from_u64(mix_seed(seed, sigma_index as u64, point as u64));
    let position = Vec3::new(
        rng.random_range(0.0..geometry.width),
        rng.random_range(0.0..geometry.depth),
        rng.random_range(0.0..geometry.height),
    );
    let event = SyntheticEvent {
        position,
        time: 0.0,
        surface: ClassLabel::Racquet,
        amplitude: 1.0,
    };
    let group = forward_delays(&event, array, false)?;
    let group = if sigma > 0.0 { perturb_with_rng(&group, sigma, &mut rng)? } else { group };
    let opts = LocalizeOptions { box_margin: 50.0, ..LocalizeOptions::default() };
    let solved = localize_3d(&group, array, geometry, &opts)?;
    Ok(solved.position.distance_to(position))
}

/// Random well-spaced events for end-to-end scenarios: event i fires at
/// (i + 1) · spacing seconds, on a random surface (or from the racquet),
/// with loudness in [0.5, 1]. Deterministic for a fixed seed.
pub fn random_events(
    n: usize,
    geometry: &CourtGeometry,
    spacing: f64,
    seed: u64,
) -> Vec<SyntheticEvent> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let class = ClassLabel::TRAINABLE[rng.random_range(0..ClassLabel::TRAINABLE.len())];
            let interior = Vec3::new(
                rng.random_range(0.5..geometry.width - 0.5),
                rng.random_range(0.5..geometry.depth - 0.5),
                rng.random_range(0.5..geometry.height - 0.5),
            );
            let position = match class.surface() {
                Some(surface) => geometry.surface(surface).project(interior),
                None => interior,
            };
            SyntheticEvent {
                position,
                time: (i as f64 + 1.0) * spacing,
                surface: class,
                amplitude: rng.random_range(0.5..=1.0),
            }
        })
        .collect()
}

/// splitmix64 finalizer over the packed indices; keeps per-point streams
/// decorrelated without any shared state.
fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.rotate_left(40) ^ b.rotate_left(20);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
