//! Stroboscopic (Poincare) map at phase `tau = 0 mod T`.
//!
//! One forcing period is split into `N = round(T / h)` equal steps and the
//! in-period time restarts at zero every period, so the map is exactly
//! autonomous and identical for every iterate.

use crate::dynamics::{State, System};
use crate::error::Result;
use crate::integrator::{advance, StepSpec};

#[derive(Debug, Clone)]
pub struct StroboscopicMap<'a> {
    sys: &'a System,
    spec: StepSpec,
    steps: usize,
}

/// Quantities measured along an orbit of `p` forcing periods.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OrbitStats {
    pub end: State,
    pub impacts: u32,
    pub contact_time: f64,
    pub x_min: f64,
    pub x_max: f64,
    /// Refined local maxima of `x`, in time order.
    pub local_maxima: Vec<f64>,
}

impl OrbitStats {
    pub fn peak_to_peak(&self) -> f64 {
        self.x_max - self.x_min
    }
}

/// Extremum of the cubic Hermite interpolant of `x` on one step where `v`
/// changes sign.
fn hermite_extremum(x0: f64, v0: f64, x1: f64, v1: f64, h: f64) -> f64 {
    // x(s) = h00 x0 + h10 h v0 + h01 x1 + h11 h v1, s in [0,1]
    // x'(s)/h is quadratic: A s^2 + B s + C
    let m0 = v0 * h;
    let m1 = v1 * h;
    let a = 6.0 * x0 + 3.0 * m0 - 6.0 * x1 + 3.0 * m1;
    let b = -6.0 * x0 - 4.0 * m0 + 6.0 * x1 - 2.0 * m1;
    let c = m0;
    let eval = |s: f64| {
        let s2 = s * s;
        let s3 = s2 * s;
        (2.0 * s3 - 3.0 * s2 + 1.0) * x0 + (s3 - 2.0 * s2 + s) * m0 + (-2.0 * s3 + 3.0 * s2) * x1 + (s3 - s2) * m1
    };
    let root = if a.abs() < 1e-300 {
        if b.abs() < 1e-300 { 0.5 } else { -c / b }
    } else {
        let disc = (b * b - 4.0 * a * c).max(0.0).sqrt();
        let q = -0.5 * (b + b.signum() * disc);
        let r1 = q / a;
        let r2 = if q != 0.0 { c / q } else { r1 };
        let inside = |r: f64| (-1e-9..=1.0 + 1e-9).contains(&r);
        match (inside(r1), inside(r2)) {
            (true, false) => r1,
            (false, true) => r2,
            // both or neither: take the one closest to the linear estimate
            _ => {
                let lin = if v0 != v1 { v0 / (v0 - v1) } else { 0.5 };
                if (r1 - lin).abs() < (r2 - lin).abs() { r1 } else { r2 }
            }
        }
    };
    eval(root.clamp(0.0, 1.0))
}

impl<'a> StroboscopicMap<'a> {
    /// `spec.h` is the nominal step; the actual step divides `T` exactly.
    pub fn new(sys: &'a System, spec: StepSpec) -> Self {
        let steps = (sys.period() / spec.h).round().max(1.0) as usize;
        Self { sys, spec, steps }
    }

    pub fn system(&self) -> &System {
        self.sys
    }

    pub fn spec(&self) -> &StepSpec {
        &self.spec
    }

    pub fn steps_per_period(&self) -> usize {
        self.steps
    }

    pub fn step(&self) -> f64 {
        self.sys.period() / self.steps as f64
    }

    /// One application of the map.
    pub fn apply(&self, z: State) -> Result<State> {
        let h = self.step();
        let mut y = z;
        for j in 0..self.steps {
            y = advance(self.sys, j as f64 * h, y, 0.0, h, &self.spec)?.state;
        }
        Ok(y)
    }

    /// `periods` applications of the map.
    pub fn iterate(&self, z: State, periods: usize) -> Result<State> {
        (0..periods).try_fold(z, |y, _| self.apply(y))
    }

    /// Integrate `periods` forcing periods from `z`, collecting measures.
    pub fn orbit_stats(&self, z: State, periods: usize) -> Result<OrbitStats> {
        let h = self.step();
        let mut y = z;
        let mut stats = OrbitStats { x_min: z.x, x_max: z.x, ..OrbitStats::default() };
        for _ in 0..periods {
            for j in 0..self.steps {
                let r = advance(self.sys, j as f64 * h, y, 0.0, h, &self.spec)?;
                let next = r.state;
                stats.impacts += r.entries;
                stats.contact_time += r.contact_time;
                stats.x_min = stats.x_min.min(next.x);
                stats.x_max = stats.x_max.max(next.x);
                if (y.v > 0.0) != (next.v > 0.0) {
                    let peak = hermite_extremum(y.x, y.v, next.x, next.v, h);
                    if y.v > 0.0 {
                        stats.local_maxima.push(peak);
                        stats.x_max = stats.x_max.max(peak);
                    } else {
                        stats.x_min = stats.x_min.min(peak);
                    }
                }
                y = next;
            }
        }
        stats.end = y;
        Ok(stats)
    }

    /// Sample the state on a uniform grid of `N * periods` steps, with the
    /// vector field at each sample. The last sample is one full orbit later.
    pub fn sample_orbit(&self, z: State, periods: usize) -> Result<(Vec<State>, Vec<State>)> {
        let h = self.step();
        let n = self.steps * periods;
        let mut states = Vec::with_capacity(n + 1);
        let mut fields = Vec::with_capacity(n + 1);
        let mut y = z;
        for k in 0..n {
            let t = (k % self.steps) as f64 * h;
            states.push(y);
            fields.push(self.sys.rhs(t, y, 0.0));
            y = advance(self.sys, t, y, 0.0, h, &self.spec)?.state;
        }
        states.push(y);
        fields.push(self.sys.rhs(0.0, y, 0.0));
        Ok((states, fields))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermite_recovers_parabola_peak() {
        // x(t) = 1 - (t - 0.3)^2 on [0, 1]
        let x = |t: f64| 1.0 - (t - 0.3) * (t - 0.3);
        let v = |t: f64| -2.0 * (t - 0.3);
        let peak = hermite_extremum(x(0.0), v(0.0), x(1.0), v(1.0), 1.0);
        assert!((peak - 1.0).abs() < 1e-14);
    }

    #[test]
    fn hermite_recovers_cubic_extremum() {
        // x(t) = t - t^3, peak at t = 1/sqrt(3) inside [0.5, 0.7]
        let x = |t: f64| t - t * t * t;
        let v = |t: f64| 1.0 - 3.0 * t * t;
        let (a, b) = (0.5, 0.7);
        let peak = hermite_extremum(x(a), v(a), x(b), v(b), b - a);
        let t = 1.0 / 3f64.sqrt();
        assert!((peak - x(t)).abs() < 1e-12);
    }
}
