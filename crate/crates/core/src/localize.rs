//! Maximum-likelihood inversion of matched multichannel timestamps into a
//! 3-D event position and event time.
//!
//! For an event at position r heard on channel i at timestamp tau_i, write
//! tau_hat_i = tau_i - tau_0 (delay relative to the earliest channel),
//! u_i = r_i/c - tau_hat_i with r_i the source-sensor distance, and
//! w_i = 1/sigma_i^2. The negative log-likelihood in the unknown emission
//! offset t0 is
//!
//!   g(t0) = 1/2 * sum_i w_i (t0 - u_i)^2,
//!
//! minimized in closed form by the weighted mean t0* = S2 * sum_i w_i u_i
//! with S2 = 1/sum_i w_i. Substituting back gives the position-only
//! objective
//!
//!   f(r) = 1/2 * { sum_i w_i u_i^2 - S2 * (sum_i w_i u_i)^2 }
//!        = 1/2 * sum_i w_i (u_i - t0*)^2,
//!
//! a weighted dispersion of the u_i. An equivalent pairwise rewriting,
//! f(r) = (S2/4) * sum_ij w_i w_j (u_i - u_j)^2, is exposed for
//! cross-checking. The gradient follows from differentiating at fixed t0*
//! (the t0-derivative vanishes there):
//!
//!   grad f = sum_i [ w_i (u_i - t0*) / c ] * (r - r_i_mic) / r_i.
//!
//! The minimum is found by multi-start gradient descent with a backtracking
//! (Armijo) line search; a plane-constrained variant projects the gradient
//! onto the surface for events known to lie on a wall or the floor.

use crate::detect::Detection;
use crate::geometry::{CourtGeometry, MicArray, NamedPlane, Vec3};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LocalizeError {
    #[error("event group has no detections")]
    EmptyGroup,
    #[error("need at least {needed} channels, got {got}")]
    TooFewChannels { needed: usize, got: usize },
    #[error("group references channel {channel} absent from the array")]
    UnknownChannel { channel: usize },
    #[error("position within 1 mm of microphone {channel}; gradient undefined")]
    SingularGeometry { channel: usize },
    #[error("no start converged inside the court (best residual {residual:.6e} at {position})")]
    NoSolution { residual: f64, position: Vec3 },
}

/// One event's arrival timestamps, in samples, keyed by channel. The
/// reference channel is the earliest arrival; relative delays are measured
/// against it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventGroup {
    timestamps: BTreeMap<usize, f64>,
    reference: usize,
}

impl EventGroup {
    pub fn new(timestamps: BTreeMap<usize, f64>) -> Result<Self, LocalizeError> {
        let reference = timestamps
            .iter()
            .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(b.0)))
            .map(|(&ch, _)| ch)
            .ok_or(LocalizeError::EmptyGroup)?;
        Ok(EventGroup { timestamps, reference })
    }

    /// Builds a group from per-channel detections; if a channel appears more
    /// than once the earliest detection wins.
    pub fn from_detections(detections: &[Detection]) -> Result<Self, LocalizeError> {
        let mut timestamps: BTreeMap<usize, f64> = BTreeMap::new();
        for d in detections {
            let t = d.sample_index as f64;
            timestamps
                .entry(d.channel)
                .and_modify(|cur| {
                    if t < *cur {
                        *cur = t;
                    }
                })
                .or_insert(t);
        }
        EventGroup::new(timestamps)
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn timestamps(&self) -> &BTreeMap<usize, f64> {
        &self.timestamps
    }

    pub fn reference_channel(&self) -> usize {
        self.reference
    }

    /// Timestamp of the reference (earliest) channel, in samples.
    pub fn reference_timestamp(&self) -> f64 {
        self.timestamps[&self.reference]
    }
}

/// Solver output: position, absolute event time in seconds, the objective
/// value at the minimizer, and the gradient steps the winning start used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizedEvent {
    pub position: Vec3,
    pub event_time: f64,
    pub residual: f64,
    pub iterations: usize,
    pub constrained_plane: Option<NamedPlane>,
}

#[derive(Debug, Clone)]
pub struct LocalizeOptions {
    pub max_iters: usize,
    /// Stop when the (projected) gradient norm falls below this.
    pub grad_tol: f64,
    /// Stop when an accepted step moves less than this many meters.
    pub min_step: f64,
    /// Court box inflation for the sanity check on results, meters.
    pub box_margin: f64,
    /// Start points; defaults to the court centroid plus the five surface
    /// centroids.
    pub starts: Option<Vec<Vec3>>,
}

impl Default for LocalizeOptions {
    fn default() -> Self {
        LocalizeOptions {
            max_iters: 100,
            grad_tol: 1e-8,
            min_step: 1e-6,
            box_margin: 0.5,
            starts: None,
        }
    }
}

/// Per-channel quantities cached for repeated objective evaluations.
struct Problem {
    /// (mic position, w_i = 1/sigma_i^2, tau_hat_i seconds, channel)
    entries: Vec<(Vec3, f64, f64, usize)>,
    weight_sum: f64,
    speed: f64,
}

impl Problem {
    fn build(group: &EventGroup, array: &MicArray) -> Result<Self, LocalizeError> {
        if group.is_empty() {
            return Err(LocalizeError::EmptyGroup);
        }
        let t0 = group.reference_timestamp();
        let mut entries = Vec::with_capacity(group.len());
        let mut weight_sum = 0.0;
        for (&ch, &t) in group.timestamps() {
            let mic = array.mic(ch).ok_or(LocalizeError::UnknownChannel { channel: ch })?;
            let w = 1.0 / (mic.sigma * mic.sigma);
            weight_sum += w;
            entries.push((mic.position, w, (t - t0) / array.sample_rate, ch));
        }
        Ok(Problem { entries, weight_sum, speed: array.speed_of_sound })
    }

    fn u(&self, pos: Vec3, entry: &(Vec3, f64, f64, usize)) -> f64 {
        pos.distance_to(entry.0) / self.speed - entry.2
    }

    /// Weighted mean of the u_i: the optimal emission offset t0*.
    fn t_star(&self, pos: Vec3) -> f64 {
        let mut acc = 0.0;
        for e in &self.entries {
            acc += e.1 * self.u(pos, e);
        }
        acc / self.weight_sum
    }

    /// Single-sum objective, evaluated in centered form for stability.
    fn f(&self, pos: Vec3) -> f64 {
        let t = self.t_star(pos);
        let mut acc = 0.0;
        for e in &self.entries {
            let d = self.u(pos, e) - t;
            acc += e.1 * d * d;
        }
        0.5 * acc
    }

    /// Pairwise rewriting of the same objective.
    fn f_pairwise(&self, pos: Vec3) -> f64 {
        let mut acc = 0.0;
        for a in &self.entries {
            let ua = self.u(pos, a);
            for b in &self.entries {
                let d = ua - self.u(pos, b);
                acc += a.1 * b.1 * d * d;
            }
        }
        acc / (4.0 * self.weight_sum)
    }

    fn grad(&self, pos: Vec3) -> Result<Vec3, LocalizeError> {
        let t = self.t_star(pos);
        let mut g = Vec3::ZERO;
        for e in &self.entries {
            let r = pos.distance_to(e.0);
            if r < 1e-3 {
                return Err(LocalizeError::SingularGeometry { channel: e.3 });
            }
            let coeff = e.1 * (self.u(pos, e) - t) / self.speed;
            g = g + (pos - e.0) * (coeff / r);
        }
        Ok(g)
    }
}

/// Closed-form optimal emission offset t0* (seconds before the reference
/// arrival) for a hypothesized position.
pub fn event_time_star(
    pos: Vec3,
    group: &EventGroup,
    array: &MicArray,
) -> Result<f64, LocalizeError> {
    Ok(Problem::build(group, array)?.t_star(pos))
}

/// The position-only objective f (single-sum form); nonnegative, zero iff
/// the delays are exactly consistent with `pos` for some emission time.
pub fn objective(pos: Vec3, group: &EventGroup, array: &MicArray) -> Result<f64, LocalizeError> {
    Ok(Problem::build(group, array)?.f(pos))
}

/// Pairwise ("dispersion of delay mismatches") form of the objective;
/// algebraically identical to `objective` and kept as a cross-check.
pub fn objective_pairwise(
    pos: Vec3,
    group: &EventGroup,
    array: &MicArray,
) -> Result<f64, LocalizeError> {
    Ok(Problem::build(group, array)?.f_pairwise(pos))
}

/// Analytic gradient of `objective` with respect to position.
pub fn gradient(pos: Vec3, group: &EventGroup, array: &MicArray) -> Result<Vec3, LocalizeError> {
    Problem::build(group, array)?.grad(pos)
}

fn default_starts(geometry: &CourtGeometry) -> Vec<Vec3> {
    let mut starts = vec![geometry.centroid()];
    starts.extend(geometry.surfaces().iter().map(|p| p.project(geometry.centroid())));
    starts
}

struct Candidate {
    pos: Vec3,
    f: f64,
    iters: usize,
}

fn descend(
    problem: &Problem,
    start: Vec3,
    opts: &LocalizeOptions,
    plane: Option<&NamedPlane>,
) -> Candidate {
    let mut pos = match plane {
        Some(p) => p.project(start),
        None => start,
    };
    let mut fval = problem.f(pos);
    let mut iters = 0;
    let mut scale: Option<f64> = None;
    for _ in 0..opts.max_iters {
        let g = match problem.grad(pos) {
            Ok(g) => g,
            Err(_) => break,
        };
        let g = match plane {
            Some(p) => g - p.unit_normal * g.dot(p.unit_normal),
            None => g,
        };
        let gn = g.norm();
        if !gn.is_finite() || gn < opts.grad_tol {
            break;
        }
        iters += 1;
        // First trial step 0.25 m; later iterations reuse twice the last
        // accepted scale. Either way the step is capped at 1 m.
        let mut a = scale.unwrap_or(0.25 / gn).min(1.0 / gn);
        let mut accepted = false;
        for _ in 0..60 {
            let trial = pos - g * a;
            let ft = problem.f(trial);
            if ft.is_finite() && ft <= fval - 1e-4 * a * gn * gn {
                pos = trial;
                fval = ft;
                scale = Some(a * 2.0);
                accepted = true;
                if a * gn < opts.min_step {
                    return Candidate { pos, f: fval, iters };
                }
                break;
            }
            a *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Candidate { pos, f: fval, iters }
}

fn run_starts(
    problem: &Problem,
    group: &EventGroup,
    array: &MicArray,
    geometry: &CourtGeometry,
    opts: &LocalizeOptions,
    plane: Option<&NamedPlane>,
) -> Result<LocalizedEvent, LocalizeError> {
    let starts = match &opts.starts {
        Some(s) => s.clone(),
        None => default_starts(geometry),
    };
    let mut best_valid: Option<Candidate> = None;
    let mut best_any: Option<Candidate> = None;
    for &start in &starts {
        let cand = descend(problem, start, opts, plane);
        if !cand.f.is_finite() || !cand.pos.is_finite() {
            continue;
        }
        if best_any.as_ref().is_none_or(|b| cand.f < b.f) {
            best_any = Some(Candidate { pos: cand.pos, f: cand.f, iters: cand.iters });
        }
        if geometry.contains(cand.pos, opts.box_margin)
            && best_valid.as_ref().is_none_or(|b| cand.f < b.f)
        {
            best_valid = Some(cand);
        }
    }
    match best_valid {
        Some(c) => {
            let t_star = problem.t_star(c.pos);
            let event_time = group.reference_timestamp() / array.sample_rate - t_star;
            Ok(LocalizedEvent {
                position: c.pos,
                event_time,
                residual: c.f,
                iterations: c.iters,
                constrained_plane: plane.copied(),
            })
        }
        None => {
            let (residual, position) = best_any
                .map(|c| (c.f, c.pos))
                .unwrap_or((f64::INFINITY, starts.first().copied().unwrap_or(Vec3::ZERO)));
            Err(LocalizeError::NoSolution { residual, position })
        }
    }
}

/// Full 3-D localization by multi-start gradient descent. Needs at least
/// four channels; the result must land inside the court box inflated by
/// `opts.box_margin`.
pub fn localize_3d(
    group: &EventGroup,
    array: &MicArray,
    geometry: &CourtGeometry,
    opts: &LocalizeOptions,
) -> Result<LocalizedEvent, LocalizeError> {
    if group.len() < 4 {
        return Err(LocalizeError::TooFewChannels { needed: 4, got: group.len() });
    }
    let problem = Problem::build(group, array)?;
    run_starts(&problem, group, array, geometry, opts, None)
}

/// Localization constrained to a court surface: the descent direction is the
/// gradient projected onto the plane, so three channels suffice.
pub fn localize_on_plane(
    group: &EventGroup,
    array: &MicArray,
    geometry: &CourtGeometry,
    plane: &NamedPlane,
    opts: &LocalizeOptions,
) -> Result<LocalizedEvent, LocalizeError> {
    if group.len() < 3 {
        return Err(LocalizeError::TooFewChannels { needed: 3, got: group.len() });
    }
    let problem = Problem::build(group, array)?;
    run_starts(&problem, group, array, geometry, opts, Some(plane))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SurfaceId;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (CourtGeometry, MicArray) {
        let geo = CourtGeometry::standard();
        let array = MicArray::default_for(&geo);
        (geo, array)
    }

    /// Exact (noise-free, fractional) arrival timestamps for an event at
    /// `pos` emitted at `t_event` seconds.
    fn exact_group(pos: Vec3, array: &MicArray, t_event: f64) -> EventGroup {
        let map: BTreeMap<usize, f64> = array
            .mics
            .iter()
            .map(|m| {
                let t = t_event + pos.distance_to(m.position) / array.speed_of_sound;
                (m.id, t * array.sample_rate)
            })
            .collect();
        EventGroup::new(map).unwrap()
    }

    fn random_point(geo: &CourtGeometry, rng: &mut ChaCha8Rng) -> Vec3 {
        Vec3::new(
            rng.random_range(0.1..geo.width - 0.1),
            rng.random_range(0.1..geo.depth - 0.1),
            rng.random_range(0.1..geo.height - 0.1),
        )
    }

    fn random_group(array: &MicArray, rng: &mut ChaCha8Rng) -> EventGroup {
        let map: BTreeMap<usize, f64> = array
            .mics
            .iter()
            .map(|m| (m.id, rng.random_range(0.0..3000.0)))
            .collect();
        EventGroup::new(map).unwrap()
    }

    #[test]
    fn reference_channel_is_earliest_arrival() {
        let mut map = BTreeMap::new();
        map.insert(0, 500.0);
        map.insert(1, 300.0);
        map.insert(2, 450.0);
        let g = EventGroup::new(map).unwrap();
        assert_eq!(g.reference_channel(), 1);
        assert_eq!(g.reference_timestamp(), 300.0);
        assert!(EventGroup::new(BTreeMap::new()).is_err());
    }

    #[test]
    fn consistent_group_has_zero_objective_at_truth() {
        let (geo, array) = setup();
        let pos = Vec3::new(2.0, 4.0, 1.5);
        let group = exact_group(pos, &array, 0.25);
        let f = objective(pos, &group, &array).unwrap();
        assert!(f >= 0.0);
        assert!(f < 1e-12, "residual {f}");
        let _ = geo;
    }

    #[test]
    fn event_time_recovers_emission_time() {
        let (_, array) = setup();
        let pos = Vec3::new(1.0, 7.0, 0.3);
        let t_event = 0.125;
        let group = exact_group(pos, &array, t_event);
        let t_star = event_time_star(pos, &group, &array).unwrap();
        let recovered = group.reference_timestamp() / array.sample_rate - t_star;
        assert_relative_eq!(recovered, t_event, max_relative = 1e-9);
    }

    #[test]
    fn single_channel_time_star_is_propagation_time() {
        let (_, array) = setup();
        let pos = Vec3::new(3.0, 3.0, 1.0);
        let mut map = BTreeMap::new();
        map.insert(2, 12_345.0);
        let group = EventGroup::new(map).unwrap();
        let want = pos.distance_to(array.mics[2].position) / array.speed_of_sound;
        assert_relative_eq!(event_time_star(pos, &group, &array).unwrap(), want, max_relative = 1e-12);
    }

    #[test]
    fn time_star_matches_grid_search_oracle() {
        let (geo, array) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..25 {
            let pos = random_point(&geo, &mut rng);
            let group = random_group(&array, &mut rng);
            let t_star = event_time_star(pos, &group, &array).unwrap();

            // Direct scan of g(t0) = sum (c tau_hat + c t0 - r)^2 / (2 sigma^2 c^2).
            let t0_ref = group.reference_timestamp();
            let g_of = |t0: f64| -> f64 {
                group
                    .timestamps()
                    .iter()
                    .map(|(&ch, &t)| {
                        let m = array.mic(ch).unwrap();
                        let c = array.speed_of_sound;
                        let tau_hat = (t - t0_ref) / array.sample_rate;
                        let r = pos.distance_to(m.position);
                        let num = c * tau_hat + c * t0 - r;
                        num * num / (2.0 * m.sigma * m.sigma * c * c)
                    })
                    .sum()
            };
            let step = 1e-6;
            let mut best = (f64::INFINITY, 0.0);
            let mut t0 = t_star - 5e-3;
            while t0 <= t_star + 5e-3 {
                let v = g_of(t0);
                if v < best.0 {
                    best = (v, t0);
                }
                t0 += step;
            }
            assert!((best.1 - t_star).abs() <= step, "grid {} vs closed form {}", best.1, t_star);
        }
    }

    #[test]
    fn both_objective_forms_agree() {
        let (geo, array) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        for _ in 0..100 {
            let pos = random_point(&geo, &mut rng);
            let group = random_group(&array, &mut rng);
            let a = objective(pos, &group, &array).unwrap();
            let b = objective_pairwise(pos, &group, &array).unwrap();
            assert_relative_eq!(a, b, max_relative = 1e-9, epsilon = 1e-12);
        }
    }

    #[test]
    fn objective_scales_inversely_with_sigma_squared() {
        let (geo, mut array) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let pos = random_point(&geo, &mut rng);
        let group = random_group(&array, &mut rng);
        let base = objective(pos, &group, &array).unwrap();
        let lambda = 3.0;
        for m in &mut array.mics {
            m.sigma *= lambda;
        }
        let scaled = objective(pos, &group, &array).unwrap();
        assert_relative_eq!(scaled, base / (lambda * lambda), max_relative = 1e-12);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (geo, array) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let h = 1e-5;
        for _ in 0..100 {
            let pos = random_point(&geo, &mut rng);
            let group = random_group(&array, &mut rng);
            let g = gradient(pos, &group, &array).unwrap();
            let fd = |axis: Vec3| -> f64 {
                let fp = objective(pos + axis * h, &group, &array).unwrap();
                let fm = objective(pos - axis * h, &group, &array).unwrap();
                (fp - fm) / (2.0 * h)
            };
            let num = Vec3::new(
                fd(Vec3::new(1.0, 0.0, 0.0)),
                fd(Vec3::new(0.0, 1.0, 0.0)),
                fd(Vec3::new(0.0, 0.0, 1.0)),
            );
            let denom = g.norm().max(1e-12);
            assert!(
                (g - num).norm() / denom < 1e-5,
                "analytic {g} vs numeric {num}"
            );
        }
    }

    #[test]
    fn gradient_vanishes_at_noiseless_truth() {
        let (_, array) = setup();
        let pos = Vec3::new(5.0, 2.0, 2.2);
        let group = exact_group(pos, &array, 0.1);
        let g = gradient(pos, &group, &array).unwrap();
        assert!(g.norm() <= 1e-8, "gradient {g} at the true source");
    }

    #[test]
    fn gradient_singular_next_to_microphone() {
        let (_, array) = setup();
        let group = exact_group(Vec3::new(2.0, 2.0, 2.0), &array, 0.1);
        let at_mic = array.mics[0].position + Vec3::new(1e-4, 0.0, 0.0);
        assert!(matches!(
            gradient(at_mic, &group, &array),
            Err(LocalizeError::SingularGeometry { channel: 0 })
        ));
    }

    #[test]
    fn timestamp_translation_only_shifts_event_time() {
        let (geo, array) = setup();
        let pos = Vec3::new(4.4, 6.1, 0.9);
        let group = exact_group(pos, &array, 0.2);
        let shift = 9_600.0; // 0.1 s
        let shifted = EventGroup::new(
            group.timestamps().iter().map(|(&c, &t)| (c, t + shift)).collect(),
        )
        .unwrap();
        let opts = LocalizeOptions::default();
        let a = localize_3d(&group, &array, &geo, &opts).unwrap();
        let b = localize_3d(&shifted, &array, &geo, &opts).unwrap();
        assert!((a.position - b.position).norm() < 1e-6);
        assert_relative_eq!(a.residual, b.residual, max_relative = 1e-6, epsilon = 1e-15);
        assert_relative_eq!(b.event_time - a.event_time, 0.1, max_relative = 1e-9);
    }

    #[test]
    fn recovers_front_wall_point_to_millimeters() {
        // Half a meter in from the right edge of the front wall, 3 m up.
        let (geo, array) = setup();
        let pos = Vec3::new(geo.width - 0.5, 0.0, 3.0);
        let group = exact_group(pos, &array, 0.05);
        let ev = localize_3d(&group, &array, &geo, &LocalizeOptions::default()).unwrap();
        assert!(
            (ev.position - pos).norm() < 1e-3,
            "recovered {} vs truth {} (err {})",
            ev.position,
            pos,
            (ev.position - pos).norm()
        );
        assert!(ev.iterations > 0);
        assert!(ev.residual < 1e-9);
        assert_relative_eq!(ev.event_time, 0.05, epsilon = 1e-6);
        assert!(ev.constrained_plane.is_none());
    }

    #[test]
    fn interior_points_recovered_from_random_spots() {
        let (geo, array) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        for _ in 0..20 {
            let pos = random_point(&geo, &mut rng);
            let group = exact_group(pos, &array, 0.01);
            let ev = localize_3d(&group, &array, &geo, &LocalizeOptions::default()).unwrap();
            assert!(
                (ev.position - pos).norm() < 1e-3,
                "err {} at {}",
                (ev.position - pos).norm(),
                pos
            );
        }
    }

    #[test]
    fn minimizer_beats_surrounding_grid_probe() {
        let (geo, array) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        let pos = random_point(&geo, &mut rng);
        let group = exact_group(pos, &array, 0.0);
        let ev = localize_3d(&group, &array, &geo, &LocalizeOptions::default()).unwrap();
        let fmin = objective(ev.position, &group, &array).unwrap();
        for dx in -2..=2 {
            for dy in -2..=2 {
                for dz in -2..=2 {
                    let probe = ev.position + Vec3::new(dx as f64, dy as f64, dz as f64) * 0.05;
                    let fp = objective(probe, &group, &array).unwrap();
                    assert!(fmin <= fp + 1e-15, "probe beat minimizer by {}", fmin - fp);
                }
            }
        }
    }

    #[test]
    fn too_few_channels_rejected() {
        let (geo, array) = setup();
        let mut map = BTreeMap::new();
        map.insert(0, 100.0);
        map.insert(1, 120.0);
        map.insert(2, 130.0);
        let group = EventGroup::new(map).unwrap();
        assert!(matches!(
            localize_3d(&group, &array, &geo, &LocalizeOptions::default()),
            Err(LocalizeError::TooFewChannels { needed: 4, got: 3 })
        ));
        let mut map = BTreeMap::new();
        map.insert(0, 100.0);
        map.insert(1, 120.0);
        let group = EventGroup::new(map).unwrap();
        let plane = *geo.surface(SurfaceId::FrontWall);
        assert!(matches!(
            localize_on_plane(&group, &array, &geo, &plane, &LocalizeOptions::default()),
            Err(LocalizeError::TooFewChannels { needed: 3, got: 2 })
        ));
    }

    #[test]
    fn unknown_channel_rejected() {
        let (_, array) = setup();
        let mut map = BTreeMap::new();
        for ch in 0..4 {
            map.insert(ch + 10, 100.0 + ch as f64);
        }
        let group = EventGroup::new(map).unwrap();
        assert!(matches!(
            objective(Vec3::new(1.0, 1.0, 1.0), &group, &array),
            Err(LocalizeError::UnknownChannel { .. })
        ));
    }

    #[test]
    fn far_away_source_yields_no_solution() {
        let (geo, array) = setup();
        // Delays consistent with a source 60 m behind the back glass.
        let pos = Vec3::new(3.0, 60.0, 2.0);
        let map: BTreeMap<usize, f64> = array
            .mics
            .iter()
            .map(|m| {
                let t = pos.distance_to(m.position) / array.speed_of_sound;
                (m.id, t * array.sample_rate)
            })
            .collect();
        let group = EventGroup::new(map).unwrap();
        match localize_3d(&group, &array, &geo, &LocalizeOptions::default()) {
            Err(LocalizeError::NoSolution { residual, position }) => {
                assert!(residual.is_finite());
                assert!(!geo.contains(position, 0.5));
            }
            other => panic!("expected no-solution, got {other:?}"),
        }
    }

    #[test]
    fn plane_constrained_wall_event_with_three_channels() {
        let (geo, array) = setup();
        let truth = Vec3::new(2.5, 0.0, 1.8);
        let full = exact_group(truth, &array, 0.02);
        let three: BTreeMap<usize, f64> = full
            .timestamps()
            .iter()
            .take(3)
            .map(|(&c, &t)| (c, t))
            .collect();
        let group = EventGroup::new(three).unwrap();
        let plane = *geo.surface(SurfaceId::FrontWall);
        // Three mics make a shallow valley on the plane; give the descent
        // room to walk it down.
        let opts = LocalizeOptions { max_iters: 20_000, min_step: 1e-9, ..Default::default() };
        let ev = localize_on_plane(&group, &array, &geo, &plane, &opts).unwrap();
        assert!(
            (ev.position - truth).norm() < 1e-3,
            "err {}",
            (ev.position - truth).norm()
        );
        assert!(plane.offset(ev.position).abs() < 1e-9, "left the plane");
        assert_eq!(ev.constrained_plane.unwrap().name, SurfaceId::FrontWall);
    }

    #[test]
    fn plane_constraint_agrees_with_free_solution_for_on_plane_event() {
        let (geo, array) = setup();
        let truth = Vec3::new(4.0, 0.0, 2.5);
        let group = exact_group(truth, &array, 0.0);
        let plane = *geo.surface(SurfaceId::FrontWall);
        let opts = LocalizeOptions::default();
        let free = localize_3d(&group, &array, &geo, &opts).unwrap();
        let constrained = localize_on_plane(&group, &array, &geo, &plane, &opts).unwrap();
        assert!((free.position - constrained.position).norm() < 2e-3);
    }

    #[test]
    fn constraining_an_off_plane_event_raises_the_residual() {
        let (geo, array) = setup();
        let truth = Vec3::new(3.0, 1.0, 2.0); // 1 m off the front wall
        let group = exact_group(truth, &array, 0.0);
        let plane = *geo.surface(SurfaceId::FrontWall);
        let opts = LocalizeOptions::default();
        let free = localize_3d(&group, &array, &geo, &opts).unwrap();
        let constrained = localize_on_plane(&group, &array, &geo, &plane, &opts).unwrap();
        assert!(plane.offset(constrained.position).abs() < 1e-9);
        assert!(constrained.residual > free.residual);
        assert!(constrained.residual > 1.0, "off-plane fit suspiciously good");
    }
}
