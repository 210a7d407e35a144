//! Attractor identification: transient settling, period detection on the
//! stroboscopic map, fingerprinting, classification and basins.

mod basin;
mod map;

pub use basin::{basin_grid, BasinGrid, GridSpec, Label};
pub use map::{OrbitStats, StroboscopicMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{State, System};
use crate::error::{Error, Result};
use crate::integrator::StepSpec;

/// Options for [`settle`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SettleOptions {
    /// Forcing periods discarded as transient.
    pub n_transient: usize,
    /// Stroboscopic samples examined for periodicity.
    pub n_sample: usize,
    /// Euclidean tolerance for `|z_{k+p} - z_k|`.
    pub match_tol: f64,
    /// Largest detectable period multiple.
    pub p_max: usize,
    pub step: StepSpec,
}

impl Default for SettleOptions {
    fn default() -> Self {
        Self { n_transient: 300, n_sample: 64, match_tol: 1e-6, p_max: 16, step: StepSpec::default() }
    }
}

impl SettleOptions {
    pub fn validate(&self) -> Result<()> {
        self.step.validate()?;
        if self.n_transient < 1 {
            return Err(Error::domain("n_transient must be at least 1"));
        }
        if self.p_max < 1 || self.n_sample < 2 * self.p_max {
            return Err(Error::domain(format!(
                "n_sample ({}) must be at least twice p_max ({})",
                self.n_sample, self.p_max
            )));
        }
        if !(self.match_tol > 0.0) {
            return Err(Error::domain("match_tol must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Periodicity {
    Periodic(usize),
    Aperiodic,
}

/// Identity card of a settled attractor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub period: Periodicity,
    /// Stroboscopic points in orbit order (the last sample for aperiodic motion).
    pub poincare_points: Vec<State>,
    /// Surface entries per orbital period; `None` for smooth systems.
    pub impacts_per_period: Option<u32>,
    /// Time per orbital period spent with `x` beyond the gap.
    pub contact_time: f64,
    pub peak_to_peak: f64,
}

impl Fingerprint {
    pub fn period_multiple(&self) -> Option<usize> {
        match self.period {
            Periodicity::Periodic(p) => Some(p),
            Periodicity::Aperiodic => None,
        }
    }

    /// Canonical point of the cycle (at phase zero).
    pub fn anchor(&self) -> State {
        self.poincare_points[0]
    }

    /// Short human-readable tag such as `P5/3i`.
    pub fn tag(&self) -> String {
        match (self.period, self.impacts_per_period) {
            (Periodicity::Periodic(p), Some(i)) => format!("P{p}/{i}i"),
            (Periodicity::Periodic(p), None) => format!("P{p}"),
            (Periodicity::Aperiodic, _) => "aperiodic".to_string(),
        }
    }
}

/// Smallest `p <= p_max` with `|z_{k+p} - z_k| < tol` over the whole sample.
pub fn detect_period(samples: &[State], p_max: usize, tol: f64) -> Option<usize> {
    (1..=p_max.min(samples.len().saturating_sub(1)))
        .find(|&p| samples.windows(p + 1).all(|w| (w[p] - w[0]).norm() < tol))
}

/// Rotate a cycle of stroboscopic points so that it starts at the point with
/// the smallest `x` (ties broken by `v`).
pub fn canonical_rotation(points: &[State]) -> Vec<State> {
    let start = points
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.x.total_cmp(&b.1.x).then(a.1.v.total_cmp(&b.1.v)))
        .map_or(0, |(i, _)| i);
    points[start..].iter().chain(&points[..start]).copied().collect()
}

/// Measure an orbit of period multiple `p` through the phase-zero point
/// `anchor`. The stored cycle starts at its canonical point.
pub fn fingerprint_orbit(map: &StroboscopicMap<'_>, anchor: State, p: usize) -> Result<Fingerprint> {
    let mut points = Vec::with_capacity(p);
    let mut z = anchor;
    for _ in 0..p {
        points.push(z);
        z = map.apply(z)?;
    }
    let points = canonical_rotation(&points);
    let stats = map.orbit_stats(points[0], p)?;
    Ok(Fingerprint {
        period: Periodicity::Periodic(p),
        poincare_points: points,
        impacts_per_period: map.system().is_impact().then_some(stats.impacts),
        contact_time: stats.contact_time,
        peak_to_peak: stats.peak_to_peak(),
    })
}

/// Integrate past the transient, then look for periodicity on the map.
pub fn settle(sys: &System, y0: State, opts: &SettleOptions) -> Result<Fingerprint> {
    opts.validate()?;
    let map = StroboscopicMap::new(sys, opts.step);
    let z = map.iterate(y0, opts.n_transient)?;
    finish_settle(&map, z, opts)
}

pub(crate) fn finish_settle(map: &StroboscopicMap<'_>, z: State, opts: &SettleOptions) -> Result<Fingerprint> {
    let mut samples = Vec::with_capacity(opts.n_sample);
    let mut z = z;
    for _ in 0..opts.n_sample {
        samples.push(z);
        z = map.apply(z)?;
    }
    match detect_period(&samples, opts.p_max, opts.match_tol) {
        Some(p) => fingerprint_orbit(map, samples[opts.n_sample - p], p),
        None => {
            let stats = map.orbit_stats(z, 1)?;
            Ok(Fingerprint {
                period: Periodicity::Aperiodic,
                poincare_points: vec![z],
                impacts_per_period: map.system().is_impact().then_some(stats.impacts),
                contact_time: stats.contact_time,
                peak_to_peak: stats.peak_to_peak(),
            })
        }
    }
}

/// Largest pointwise distance between two period-`p` point sets after the
/// best cyclic shift.
pub fn aligned_distance(a: &[State], b: &[State]) -> Option<f64> {
    if a.len() != b.len() || a.is_empty() {
        return None;
    }
    let p = a.len();
    (0..p)
        .map(|shift| (0..p).map(|k| (a[k] - b[(k + shift) % p]).norm()).fold(0.0, f64::max))
        .min_by(f64::total_cmp)
}

/// Index of the registry entry with the same period whose points match
/// within `tol` under cyclic alignment; the closest one wins.
pub fn classify(fp: &Fingerprint, registry: &[Fingerprint], tol: f64) -> Option<usize> {
    fp.period_multiple()?;
    registry
        .iter()
        .enumerate()
        .filter(|(_, r)| r.period == fp.period)
        .filter_map(|(i, r)| aligned_distance(&fp.poincare_points, &r.poincare_points).map(|d| (i, d)))
        .filter(|&(_, d)| d < tol)
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
}

/// Default tolerance for matching settled fingerprints against a registry.
pub const CLASSIFY_TOL: f64 = 1e-4;

/// Settle from every initial condition (in parallel) and return the distinct
/// periodic attractors, ordered by period and then peak-to-peak amplitude.
pub fn discover(sys: &System, initial: &[State], opts: &SettleOptions) -> Result<Vec<Fingerprint>> {
    let settled: Vec<Fingerprint> = initial
        .par_iter()
        .map(|&y0| settle(sys, y0, opts))
        .collect::<Result<_>>()?;
    let mut registry: Vec<Fingerprint> = Vec::new();
    for fp in settled {
        if fp.period_multiple().is_some() && classify(&fp, &registry, CLASSIFY_TOL).is_none() {
            registry.push(fp);
        }
    }
    registry.sort_by(|a, b| {
        a.period_multiple()
            .cmp(&b.period_multiple())
            .then(a.peak_to_peak.total_cmp(&b.peak_to_peak))
    });
    Ok(registry)
}

/// Evenly spread initial conditions: an `n x n` lattice of cell centres.
pub fn lattice(x: (f64, f64), v: (f64, f64), n: usize) -> Vec<State> {
    let dx = (x.1 - x.0) / n as f64;
    let dv = (v.1 - v.0) / n as f64;
    (0..n * n)
        .map(|k| State::new(x.0 + (k % n) as f64 * dx + 0.5 * dx, v.0 + (k / n) as f64 * dv + 0.5 * dv))
        .collect()
}
