//! Sample-stream primitives shared by the detectors and the feature
//! extractors: windowed running statistics, DFT power spectra, and diagonal
//! Gaussian spectral models compared by Kullback-Leibler divergence.

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::sync::Arc;
use thiserror::Error;

/// Floor applied to every variance estimate so silent channels cannot divide
/// by zero.
pub const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("window length {len} is not a power of two")]
    InvalidWindow { len: usize },
    #[error("expected {expected} samples, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("dimension mismatch: {a} vs {b}")]
    DimensionMismatch { a: usize, b: usize },
    #[error("need at least one spectrum to build a model")]
    EmptyHistory,
    #[error("channel arrays have unequal lengths: {0:?}")]
    RaggedChannels(Vec<usize>),
    #[error("channel {channel} sample {index} is {value}, outside [-1, 1]")]
    AmplitudeOutOfRange { channel: usize, index: usize, value: f64 },
}

/// A chunk of synchronized multichannel audio. `start_index` is the absolute
/// offset of the first sample in each channel array.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBlock {
    pub sample_rate: f64,
    pub start_index: u64,
    samples: Vec<Vec<f64>>,
}

impl AudioBlock {
    pub fn new(
        sample_rate: f64,
        start_index: u64,
        samples: Vec<Vec<f64>>,
    ) -> Result<Self, SignalError> {
        let lens: Vec<usize> = samples.iter().map(|c| c.len()).collect();
        if lens.windows(2).any(|w| w[0] != w[1]) {
            return Err(SignalError::RaggedChannels(lens));
        }
        for (channel, data) in samples.iter().enumerate() {
            for (index, &value) in data.iter().enumerate() {
                if !(-1.0..=1.0).contains(&value) {
                    return Err(SignalError::AmplitudeOutOfRange { channel, index, value });
                }
            }
        }
        Ok(AudioBlock { sample_rate, start_index, samples })
    }

    pub fn channels(&self) -> usize {
        self.samples.len()
    }

    /// Samples per channel.
    pub fn len(&self) -> usize {
        self.samples.first().map_or(0, |c| c.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, ch: usize) -> &[f64] {
        &self.samples[ch]
    }
}

/// Single-pass mean/variance over a sliding window of the most recent
/// `capacity` samples. Updates use the numerically stable one-pass
/// recurrence; evictions subtract the oldest sample's contribution.
#[derive(Debug, Clone)]
pub struct RunningStats {
    capacity: usize,
    window: VecDeque<f64>,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 2, "window capacity must be at least 2");
        RunningStats { capacity, window: VecDeque::with_capacity(capacity), mean: 0.0, m2: 0.0 }
    }

    pub fn count(&self) -> usize {
        self.window.len()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// True once the window holds `capacity` samples.
    pub fn is_warm(&self) -> bool {
        self.window.len() == self.capacity
    }

    pub fn push(&mut self, x: f64) {
        if self.window.len() == self.capacity {
            self.evict_oldest();
        }
        self.window.push_back(x);
        let n = self.window.len() as f64;
        let delta = x - self.mean;
        self.mean += delta / n;
        self.m2 += delta * (x - self.mean);
    }

    fn evict_oldest(&mut self) {
        let y = self.window.pop_front().expect("evict called on nonempty window");
        let n = (self.window.len() + 1) as f64;
        if self.window.is_empty() {
            self.mean = 0.0;
            self.m2 = 0.0;
            return;
        }
        let new_mean = (n * self.mean - y) / (n - 1.0);
        self.m2 -= (y - self.mean) * (y - new_mean);
        // Cancellation can leave a tiny negative residue.
        self.m2 = self.m2.max(0.0);
        self.mean = new_mean;
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Sample variance of the retained window; 0 when fewer than 2 samples.
    pub fn variance(&self) -> f64 {
        if self.window.len() < 2 {
            0.0
        } else {
            self.m2 / (self.window.len() as f64 - 1.0)
        }
    }

    pub fn std(&self) -> f64 {
        self.variance().sqrt()
    }
}

/// Functional form of the windowed update: returns the stats with `x` folded
/// in (and the oldest sample evicted if the window was full).
pub fn welford_update(mut stats: RunningStats, x: f64) -> RunningStats {
    stats.push(x);
    stats
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Taper {
    None,
    #[default]
    Hann,
}

/// Reusable power-spectrum plan for a fixed window length and taper.
pub struct SpectrumAnalyzer {
    len: usize,
    coeffs: Option<Vec<f64>>,
    fft: Arc<dyn Fft<f64>>,
}

impl SpectrumAnalyzer {
    pub fn new(len: usize, taper: Taper) -> Result<Self, SignalError> {
        if len == 0 || !len.is_power_of_two() {
            return Err(SignalError::InvalidWindow { len });
        }
        let coeffs = match taper {
            Taper::None => None,
            Taper::Hann => Some(
                (0..len)
                    .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / len as f64).cos()))
                    .collect(),
            ),
        };
        let fft = FftPlanner::new().plan_fft_forward(len);
        Ok(SpectrumAnalyzer { len, coeffs, fft })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Squared DFT magnitudes of the tapered window.
    pub fn compute(&self, window: &[f64]) -> Result<Vec<f64>, SignalError> {
        if window.len() != self.len {
            return Err(SignalError::LengthMismatch { expected: self.len, got: window.len() });
        }
        let mut buf: Vec<Complex<f64>> = match &self.coeffs {
            None => window.iter().map(|&x| Complex::new(x, 0.0)).collect(),
            Some(c) => window.iter().zip(c).map(|(&x, &w)| Complex::new(x * w, 0.0)).collect(),
        };
        self.fft.process(&mut buf);
        Ok(buf.iter().map(|z| z.norm_sqr()).collect())
    }
}

/// One-shot power spectrum of `window` (length must be a power of two).
/// With `Taper::None`, Parseval holds: sum |x|^2 = (1/w) * sum of the output.
pub fn power_spectrum(window: &[f64], taper: Taper) -> Result<Vec<f64>, SignalError> {
    SpectrumAnalyzer::new(window.len(), taper)?.compute(window)
}

/// Diagonal Gaussian over power spectra: per-bin mean and variance estimated
/// from `history` past spectra.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralModel {
    mean: Vec<f64>,
    variance: Vec<f64>,
    history: usize,
}

impl SpectralModel {
    /// Builds the model from a set of spectra: per-bin mean and population
    /// variance, floored at `VARIANCE_FLOOR`.
    pub fn from_spectra(spectra: &[Vec<f64>]) -> Result<Self, SignalError> {
        let first = spectra.first().ok_or(SignalError::EmptyHistory)?;
        let dim = first.len();
        for s in spectra {
            if s.len() != dim {
                return Err(SignalError::DimensionMismatch { a: dim, b: s.len() });
            }
        }
        let n = spectra.len() as f64;
        let mut mean = vec![0.0; dim];
        for s in spectra {
            for (m, &v) in mean.iter_mut().zip(s) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut variance = vec![0.0; dim];
        for s in spectra {
            for ((var, &m), &v) in variance.iter_mut().zip(&mean).zip(s) {
                let d = v - m;
                *var += d * d;
            }
        }
        for v in &mut variance {
            *v = (*v / n).max(VARIANCE_FLOOR);
        }
        Ok(SpectralModel { mean, variance, history: spectra.len() })
    }

    pub fn from_moments(mean: Vec<f64>, variance: Vec<f64>, history: usize) -> Result<Self, SignalError> {
        if mean.len() != variance.len() {
            return Err(SignalError::DimensionMismatch { a: mean.len(), b: variance.len() });
        }
        let variance = variance.into_iter().map(|v| v.max(VARIANCE_FLOOR)).collect();
        Ok(SpectralModel { mean, variance, history })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn history(&self) -> usize {
        self.history
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn variance(&self) -> &[f64] {
        &self.variance
    }

    /// Posterior after folding one new observation with weight 1/(n+1),
    /// where n is the number of spectra this model summarizes. Equivalent to
    /// recomputing population moments over the n history points plus `x`.
    pub fn fold_observation(&self, x: &[f64]) -> Result<SpectralModel, SignalError> {
        if x.len() != self.dim() {
            return Err(SignalError::DimensionMismatch { a: self.dim(), b: x.len() });
        }
        let n = self.history as f64;
        let k = n + 1.0;
        let mut mean = Vec::with_capacity(x.len());
        let mut variance = Vec::with_capacity(x.len());
        for ((&m, &v), &xi) in self.mean.iter().zip(&self.variance).zip(x) {
            let d = xi - m;
            mean.push(m + d / k);
            variance.push((v * n / k + d * d * n / (k * k)).max(VARIANCE_FLOOR));
        }
        Ok(SpectralModel { mean, variance, history: self.history + 1 })
    }
}

/// Kullback-Leibler divergence KL(posterior || prior) for diagonal Gaussians,
/// summed over bins:
///
///   1/2 * sum_j [ ln(s_j/s'_j) + s'_j/s_j - 1 + (m'_j - m_j)^2 / s_j ]
///
/// where (m, s) are the prior's mean/variance and (m', s') the posterior's.
/// For diagonal covariances this equals the general matrix form with
/// log-determinant ratio, trace of the whitened posterior, and Mahalanobis
/// mean shift.
pub fn kl_gaussian(prior: &SpectralModel, posterior: &SpectralModel) -> Result<f64, SignalError> {
    if prior.dim() != posterior.dim() {
        return Err(SignalError::DimensionMismatch { a: prior.dim(), b: posterior.dim() });
    }
    let mut acc = 0.0;
    for j in 0..prior.dim() {
        acc += kl_term(prior.mean[j], prior.variance[j], posterior.mean[j], posterior.variance[j]);
    }
    Ok((0.5 * acc).max(0.0))
}

/// One-dimensional special case of `kl_gaussian`, on raw moments.
pub fn kl_gaussian_1d(prior_mean: f64, prior_var: f64, post_mean: f64, post_var: f64) -> f64 {
    let pv = prior_var.max(VARIANCE_FLOOR);
    let qv = post_var.max(VARIANCE_FLOOR);
    (0.5 * kl_term(prior_mean, pv, post_mean, qv)).max(0.0)
}

fn kl_term(m0: f64, v0: f64, m1: f64, v1: f64) -> f64 {
    let d = m1 - m0;
    (v0 / v1).ln() + v1 / v0 - 1.0 + d * d / v0
}
