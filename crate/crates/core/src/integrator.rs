//! Fixed-step classical RK4 with zero-order-hold control and localization of
//! crossings of the impact surface `x = e_eff`.
//!
//! Inside every sub-step the Heaviside branch is held fixed. When the sign of
//! `x - e_eff` changes over a step, the crossing time is bracketed by
//! bisection on the sub-step length and the step is restarted from the
//! crossing on the other branch.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dynamics::{State, System};
use crate::error::{Error, Result};
use crate::output::fmt_f64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepSpec {
    pub h: f64,
    /// Bisection stops once the crossing is bracketed to this width in time.
    pub surface_tol: f64,
    pub max_bisect: usize,
}

impl Default for StepSpec {
    fn default() -> Self {
        Self { h: 0.002, surface_tol: 1e-10, max_bisect: 80 }
    }
}

impl StepSpec {
    pub fn with_h(h: f64) -> Self {
        Self { h, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0) || !self.h.is_finite() {
            return Err(Error::domain(format!("step size must be positive, got {}", self.h)));
        }
        if !(self.surface_tol > 0.0) {
            return Err(Error::domain("surface tolerance must be positive"));
        }
        Ok(())
    }
}

/// What happened inside one step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepReport {
    pub state: State,
    /// Surface crossings in either direction.
    pub crossings: u32,
    /// Crossings into contact (`x` rising through `e_eff`).
    pub entries: u32,
    /// Time spent with the secondary spring engaged.
    pub contact_time: f64,
}

fn check(tau: f64, last: State, next: State) -> Result<State> {
    if next.is_finite() {
        Ok(next)
    } else {
        Err(Error::Diverged { tau, last })
    }
}

fn rk4_core(f: impl Fn(f64, State) -> State, tau: f64, y: State, h: f64) -> State {
    let half = 0.5 * h;
    let k1 = f(tau, y);
    let k2 = f(tau + half, y + k1 * half);
    let k3 = f(tau + half, y + k2 * half);
    let k4 = f(tau + h, y + k3 * h);
    y + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0)
}

/// One classical RK4 step with `u` held constant. The Heaviside factor is
/// evaluated at every stage; use [`advance`] for event-localized stepping.
pub fn rk4_step(sys: &System, tau: f64, y: State, u: f64, h: f64) -> Result<State> {
    if !(h > 0.0) {
        return Err(Error::domain(format!("step size must be positive, got {h}")));
    }
    check(tau, y, rk4_core(|t, s| sys.rhs(t, s, u), tau, y, h))
}

fn rk4_branch(sys: &System, tau: f64, y: State, u: f64, h: f64, contact: bool) -> Result<State> {
    check(tau, y, rk4_core(|t, s| sys.rhs_on_branch(t, s, u, contact), tau, y, h))
}

/// Advance one step of length `h` with `u` held, localizing surface crossings.
pub fn advance(sys: &System, tau: f64, y: State, u: f64, h: f64, spec: &StepSpec) -> Result<StepReport> {
    let Some(gap) = sys.surface(u) else {
        let state = rk4_branch(sys, tau, y, u, h, false)?;
        return Ok(StepReport { state, ..StepReport::default() });
    };

    let mut report = StepReport::default();
    let mut t = tau;
    let mut y = y;
    let mut remaining = h;
    let mut contact = y.x - gap > 0.0;
    loop {
        let trial = rk4_branch(sys, t, y, u, remaining, contact)?;
        if (trial.x - gap > 0.0) == contact {
            if contact {
                report.contact_time += remaining;
            }
            report.state = trial;
            return Ok(report);
        }

        let (mut lo, mut hi) = (0.0, remaining);
        let mut at_hi = trial;
        let mut iterations = 0;
        while hi - lo > spec.surface_tol {
            if iterations >= spec.max_bisect {
                return Err(Error::EventLocalization { tau: t, iterations });
            }
            let mid = 0.5 * (lo + hi);
            let probe = rk4_branch(sys, t, y, u, mid, contact)?;
            if (probe.x - gap > 0.0) == contact {
                lo = mid;
            } else {
                hi = mid;
                at_hi = probe;
            }
            iterations += 1;
        }

        if contact {
            report.contact_time += hi;
        }
        report.crossings += 1;
        contact = !contact;
        if contact {
            report.entries += 1;
        }
        t += hi;
        y = at_hi;
        remaining -= hi;
        if remaining <= 0.0 {
            report.state = y;
            return Ok(report);
        }
    }
}

/// Sampled solution on a uniform grid.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<State>,
    /// Control value held from each sample to the next.
    pub controls: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_state(&self) -> Option<State> {
        self.states.last().copied()
    }

    /// CSV with header `tau,x,v,u`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "tau,x,v,u")?;
        for ((t, s), u) in self.times.iter().zip(&self.states).zip(&self.controls) {
            writeln!(w, "{},{},{},{}", fmt_f64(*t), fmt_f64(s.x), fmt_f64(s.v), fmt_f64(*u))?;
        }
        Ok(())
    }
}

/// Integrate from `tau0` to `tau1` on the grid `tau0 + k h` (the last step is
/// shortened to land on `tau1`). `control` is sampled at each step start and
/// held over the step.
pub fn integrate(
    sys: &System,
    y0: State,
    tau0: f64,
    tau1: f64,
    spec: &StepSpec,
    control: impl Fn(f64) -> f64,
) -> Result<Trajectory> {
    spec.validate()?;
    if !(tau1 > tau0) {
        return Err(Error::domain(format!("integration interval [{tau0}, {tau1}] is empty")));
    }
    let span = tau1 - tau0;
    let n = ((span / spec.h) - 1e-9).ceil().max(1.0) as usize;
    let mut traj = Trajectory {
        times: Vec::with_capacity(n + 1),
        states: Vec::with_capacity(n + 1),
        controls: Vec::with_capacity(n + 1),
    };
    let mut y = y0;
    for k in 0..n {
        let t = tau0 + k as f64 * spec.h;
        let next_t = if k + 1 == n { tau1 } else { tau0 + (k + 1) as f64 * spec.h };
        let u = control(t);
        if !u.is_finite() {
            return Err(Error::domain(format!("control is not finite at tau = {t}")));
        }
        traj.times.push(t);
        traj.states.push(y);
        traj.controls.push(u);
        y = advance(sys, t, y, u, next_t - t, spec)?.state;
    }
    traj.times.push(tau1);
    traj.states.push(y);
    traj.controls.push(control(tau1));
    Ok(traj)
}
