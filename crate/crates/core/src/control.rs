//! Distance-reducing switching control between coexisting attractors.
//!
//! The controller tracks `Delta = |Y_d - Y_u|^2` against a tabulated target
//! orbit and, at every sampling step, picks the smallest rate `du/dtau` that
//! makes the second-order prediction of the change in `Delta` non-positive,
//! subject to `|u| <= M1` and `|du/dtau| <= M2`. Additive channels use the
//! linear law; parametric channels add the explicit time and state
//! sensitivities of the vector field.
//!
//! The sampling step is snapped to `T / round(T / h)` so that the controller
//! grid, the integrator grid and the target table coincide exactly.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::attractor::StroboscopicMap;
use crate::dynamics::{mat_vec, State, System};
use crate::error::{Error, Result};
use crate::integrator::{advance, StepSpec};
use crate::output::fmt_f64;

/// Squared Euclidean distance between target and controlled states.
pub fn distance(y_d: State, y_u: State) -> f64 {
    (y_d - y_u).norm_sq()
}

/// Feasible set of control rates for one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "bound")]
pub enum Feasible {
    AtLeast(f64),
    AtMost(f64),
    /// The control direction is orthogonal to `d`; no rate constrains the step.
    Degenerate,
}

impl Feasible {
    pub fn contains(&self, rate: f64) -> bool {
        match *self {
            Feasible::AtLeast(r) => rate >= r,
            Feasible::AtMost(r) => rate <= r,
            Feasible::Degenerate => true,
        }
    }

    /// The element of smallest magnitude.
    pub fn minimal(&self) -> f64 {
        match *self {
            Feasible::AtLeast(r) => r.max(0.0),
            Feasible::AtMost(r) => r.min(0.0),
            Feasible::Degenerate => 0.0,
        }
    }
}

/// Left-hand coefficient and right-hand side of the one-step condition
/// `coef * rate * h >= rhs`, with `coef = <d, dF/du>`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub coef: f64,
    pub rhs: f64,
}

pub const DEG_TOL: f64 = 1e-9;

impl Condition {
    pub fn feasible(&self, h: f64, deg_tol: f64) -> Feasible {
        if self.coef > deg_tol {
            Feasible::AtLeast(self.rhs / (self.coef * h))
        } else if self.coef < -deg_tol {
            Feasible::AtMost(self.rhs / (self.coef * h))
        } else {
            Feasible::Degenerate
        }
    }

    /// With `rate = 0` the predicted change of `Delta` is `rhs * h`.
    pub fn delta_decreasing(&self) -> bool {
        self.rhs < 0.0
    }

    /// Truncated prediction of `Delta(tau + h) - Delta(tau)` for a given rate.
    pub fn predicted_change(&self, rate: f64, h: f64) -> f64 {
        h * (self.rhs - self.coef * rate * h)
    }
}

/// Condition for a control entering additively along `b = (0, 1)`.
///
/// `g = F_d - F_u - U`, with the field at `Y_u` evaluated without control.
pub fn linear_condition(d: State, g: State, h: f64) -> Condition {
    Condition { coef: d.v, rhs: 2.0 * d.dot(g) + g.norm_sq() * h }
}

pub fn feasible_rate_linear(d: State, f_d: State, f_u: State, u_term: State, h: f64) -> Result<Feasible> {
    check_h(h)?;
    Ok(linear_condition(d, f_d - f_u - u_term, h).feasible(h, DEG_TOL))
}

/// How the state sensitivity enters the parametric condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StateTerm {
    /// `<d, (dF/dY) dY_u/dtau>`, from the Taylor expansion of `Delta`.
    #[default]
    Chain,
    /// `<d, dF/dx>` without the velocity factor.
    Literal,
}

/// Sensitivities of the vector field at `(tau, Y_u, u)` used by the
/// parametric condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sensitivity {
    pub du: State,
    pub dtau: State,
    pub dy: [[f64; 2]; 2],
}

/// Condition for a control entering through a parameter.
///
/// `g = F_d - F(tau, Y_u, u)` and `ydot_u = F(tau, Y_u, u)`.
pub fn parametric_condition(d: State, g: State, s: &Sensitivity, ydot_u: State, h: f64, term: StateTerm) -> Condition {
    let state = match term {
        StateTerm::Chain => d.dot(mat_vec(&s.dy, ydot_u)),
        StateTerm::Literal => d.dot(State::new(s.dy[0][0], s.dy[1][0])),
    };
    Condition { coef: d.dot(s.du), rhs: 2.0 * d.dot(g) - d.dot(s.dtau) * h + g.norm_sq() * h - state * h }
}

pub fn feasible_rate_parametric(
    d: State,
    f_d: State,
    f_u: State,
    s: &Sensitivity,
    ydot_u: State,
    h: f64,
    term: StateTerm,
) -> Result<Feasible> {
    check_h(h)?;
    Ok(parametric_condition(d, f_d - f_u, s, ydot_u, h, term).feasible(h, DEG_TOL))
}

fn check_h(h: f64) -> Result<()> {
    if h > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("sampling step must be positive, got {h}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlBounds {
    /// Largest admissible `|u|`.
    pub m1: f64,
    /// Largest admissible `|du/dtau|`.
    pub m2: f64,
}

impl ControlBounds {
    pub fn new(m1: f64, m2: f64) -> Result<Self> {
        let b = Self { m1, m2 };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.m1 > 0.0 && self.m2 > 0.0) || !self.m1.is_finite() || !self.m2.is_finite() {
            return Err(Error::domain(format!("control bounds must be positive, got M1 = {}, M2 = {}", self.m1, self.m2)));
        }
        Ok(())
    }

    /// Admissible rates from `u`: within `M2` and keeping `u + rate h` inside `M1`.
    pub fn rate_box(&self, u: f64, h: f64) -> (f64, f64) {
        let lo = (-self.m2).max((-self.m1 - u) / h).min(0.0);
        let hi = self.m2.min((self.m1 - u) / h).max(0.0);
        (lo, hi)
    }
}

/// Pick the control rate for one step.
pub fn select_rate(feasible: Feasible, bounds: &ControlBounds, u: f64, h: f64, delta_decreasing: bool) -> f64 {
    if delta_decreasing {
        return 0.0;
    }
    let (lo, hi) = bounds.rate_box(u, h);
    feasible.minimal().clamp(lo, hi)
}

/// Target orbit tabulated on the controller grid.
#[derive(Debug, Clone, PartialEq)]
pub struct OrbitTable {
    period_multiple: usize,
    steps_per_period: usize,
    h: f64,
    states: Vec<State>,
    fields: Vec<State>,
    closure: f64,
}

impl OrbitTable {
    /// Tabulate the orbit of period multiple `p` through the phase-zero point
    /// `anchor`. Fails when the orbit does not close within `match_tol`.
    pub fn build(sys: &System, anchor: State, p: usize, spec: StepSpec, match_tol: f64) -> Result<Self> {
        if p == 0 {
            return Err(Error::domain("period multiple must be at least 1"));
        }
        spec.validate()?;
        let map = StroboscopicMap::new(sys, spec);
        let (mut states, mut fields) = map.sample_orbit(anchor, p)?;
        let end = states.pop().expect("sample_orbit returns n + 1 samples");
        fields.pop();
        let closure = (end - anchor).norm();
        if !(closure < match_tol) {
            return Err(Error::domain(format!(
                "target orbit does not close: |Y(pT) - Y(0)| = {closure:e} exceeds {match_tol:e}"
            )));
        }
        Ok(Self { period_multiple: p, steps_per_period: map.steps_per_period(), h: map.step(), states, fields, closure })
    }

    pub fn period_multiple(&self) -> usize {
        self.period_multiple
    }

    pub fn steps_per_period(&self) -> usize {
        self.steps_per_period
    }

    /// Sample spacing, equal to the controller step.
    pub fn step(&self) -> f64 {
        self.h
    }

    pub fn closure(&self) -> f64 {
        self.closure
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Target state and field at global step `i`, with the orbit delayed by
    /// `shift` forcing periods.
    pub fn at(&self, i: usize, shift: usize) -> (State, State) {
        let k = (i + shift * self.steps_per_period) % self.states.len();
        (self.states[k], self.fields[k])
    }

    /// Target state at time `tau` (rounded to the nearest sample).
    pub fn lookup(&self, tau: f64, shift: usize) -> State {
        let i = (tau / self.h).round().max(0.0) as usize;
        self.at(i, shift).0
    }
}

/// Which of the `p` time shifts of a period-`p` target is tracked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alignment {
    /// The shift closest to the state at engagement.
    #[default]
    Nearest,
    /// A fixed delay in forcing periods.
    Fixed(usize),
}

/// Start point on the source cycle and target alignment such that, after
/// `engage_periods` forcing periods, source point `pair.0` faces target point
/// `pair.1`. Indices refer to the cycles as stored (canonical order), and the
/// target table must be built from `target[0]`.
pub fn pinned_pairing(
    source: &[State],
    target_len: usize,
    engage_periods: usize,
    pair: (usize, usize),
) -> Result<(State, Alignment)> {
    let (ps, pt) = (source.len(), target_len);
    if ps == 0 || pt == 0 || pair.0 >= ps || pair.1 >= pt {
        return Err(Error::config(format!("pairing {pair:?} out of range for cycles of length {ps} and {pt}")));
    }
    let start = (pair.0 + ps - engage_periods % ps) % ps;
    let shift = (pair.1 + pt - engage_periods % pt) % pt;
    Ok((source[start], Alignment::Fixed(shift)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SwitchConfig {
    pub bounds: ControlBounds,
    pub step: StepSpec,
    /// Termination tolerance on the 2-norm distance.
    pub epsilon: f64,
    /// Engagement time; defaults to 80 forcing periods.
    pub tau_engage: Option<f64>,
    /// Periods of active control allowed before giving up.
    pub max_periods: usize,
    /// Uncontrolled periods checked after shut-off.
    pub verify_periods: usize,
    pub deg_tol: f64,
    pub state_term: StateTerm,
    pub alignment: Alignment,
}

impl Default for SwitchConfig {
    fn default() -> Self {
        Self {
            bounds: ControlBounds { m1: 5.0, m2: 3.0 },
            step: StepSpec::default(),
            epsilon: 1e-3,
            tau_engage: None,
            max_periods: 200,
            verify_periods: 50,
            deg_tol: DEG_TOL,
            state_term: StateTerm::Chain,
            alignment: Alignment::Nearest,
        }
    }
}

impl SwitchConfig {
    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        self.step.validate()?;
        if !(self.epsilon > 0.0) {
            return Err(Error::domain("epsilon must be positive"));
        }
        if let Some(t) = self.tau_engage {
            if !(t >= 0.0) || !t.is_finite() {
                return Err(Error::domain(format!("tau_engage must be non-negative, got {t}")));
            }
        }
        if self.max_periods == 0 {
            return Err(Error::domain("max_periods must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Waiting,
    Active,
    /// Converged; `u` is ramped back to zero at the admissible rate.
    Release,
    Off,
}

/// One sample of the full run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub tau: f64,
    pub state: State,
    /// Control held over `[tau, tau + h]`.
    pub u: f64,
    /// 2-norm distance to the target at `tau`.
    pub distance: f64,
}

/// Controller bookkeeping for one active step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub tau: f64,
    /// Squared distance at `tau`.
    pub delta: f64,
    pub u_before: f64,
    pub rate: f64,
    pub u: f64,
    pub feasible: Feasible,
    /// Selected rate lies in the feasible set (not clipped by the bounds).
    pub in_feasible: bool,
    pub decreasing: bool,
    /// Truncated prediction of the change in `Delta` over the step.
    pub predicted: f64,
    /// Full second-order prediction for the applied control.
    pub predicted_full: f64,
    /// Observed change in `Delta` over the step.
    pub actual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchResult {
    pub success: bool,
    pub step: f64,
    pub period: f64,
    pub target_shift: usize,
    pub tau_engaged: f64,
    /// First time with distance below `epsilon`.
    pub tau_converged: Option<f64>,
    /// Time at which `u` returned to zero after convergence.
    pub tau_off: Option<f64>,
    pub periods_to_converge: Option<f64>,
    pub max_abs_u: f64,
    pub distance_at_engagement: f64,
    pub final_distance: f64,
    /// Largest stroboscopic (once per forcing period) distance over the
    /// verification window; success requires it to stay below `10 epsilon`.
    pub verify_max_distance: Option<f64>,
    /// Largest distance at any step of the verification window. Near impacts
    /// it is dominated by small differences in contact timing.
    pub verify_max_pointwise: Option<f64>,
    #[serde(skip)]
    pub trace: Vec<TraceRow>,
    #[serde(skip)]
    pub history: Vec<StepRecord>,
}

impl SwitchResult {
    /// CSV `tau,x,v,u,delta2norm`, keeping every `stride`-th row.
    pub fn write_csv<W: Write>(&self, mut w: W, stride: usize) -> std::io::Result<()> {
        writeln!(w, "tau,x,v,u,delta2norm")?;
        let stride = stride.max(1);
        let last = self.trace.len().saturating_sub(1);
        for (k, r) in self.trace.iter().enumerate() {
            if k % stride == 0 || k == last {
                writeln!(
                    w,
                    "{},{},{},{},{}",
                    fmt_f64(r.tau),
                    fmt_f64(r.state.x),
                    fmt_f64(r.state.v),
                    fmt_f64(r.u),
                    fmt_f64(r.distance)
                )?;
            }
        }
        Ok(())
    }
}

fn second_derivative(sys: &System, t: f64, y: State, u: f64) -> State {
    let f = sys.rhs(t, y, u);
    let p = sys.partials(t, y, u);
    p.dtau + mat_vec(&p.dy, f)
}

/// Run the switch from `y_start` (at `tau = 0`) towards `target`.
pub fn run_switch(sys: &System, y_start: State, target: &OrbitTable, cfg: &SwitchConfig) -> Result<SwitchResult> {
    cfg.validate()?;
    let map = StroboscopicMap::new(sys, cfg.step);
    let n = map.steps_per_period();
    let h = map.step();
    if n != target.steps_per_period() || h != target.step() {
        return Err(Error::config("target table was built with a different step size"));
    }
    let period = sys.period();
    let i_engage = (cfg.tau_engage.unwrap_or(80.0 * period) / h).round() as usize;
    let i_limit = i_engage + cfg.max_periods * n;
    let verify_steps = cfg.verify_periods * n;
    let eps2 = cfg.epsilon * cfg.epsilon;
    let linear = sys.channel().is_additive();
    let tau_of = |i: usize| i as f64 * h;

    let mut y = y_start;
    let mut u: f64 = 0.0;
    let mut phase = Phase::Waiting;
    let mut shift = match cfg.alignment {
        Alignment::Fixed(k) => k % target.period_multiple(),
        Alignment::Nearest => 0,
    };
    let mut trace = Vec::with_capacity(i_engage + n * 20);
    let mut history: Vec<StepRecord> = Vec::new();
    let mut tau_converged = None;
    let mut tau_off = None;
    let mut i_off = 0;
    let mut max_abs_u: f64 = 0.0;
    let mut distance_at_engagement = 0.0;
    let mut verify_max: f64 = 0.0;
    let mut verify_max_pointwise: f64 = 0.0;
    let mut success = false;

    let mut i = 0usize;
    loop {
        let t = (i % n) as f64 * h;
        if i == i_engage {
            if cfg.alignment == Alignment::Nearest {
                shift = (0..target.period_multiple())
                    .min_by(|&a, &b| distance(target.at(i, a).0, y).total_cmp(&distance(target.at(i, b).0, y)))
                    .unwrap_or(0);
            }
            phase = Phase::Active;
            distance_at_engagement = distance(target.at(i, shift).0, y).sqrt();
        }
        let (y_d, f_d) = target.at(i, shift);
        let d = y_d - y;
        let delta = d.norm_sq();
        if let Some(last) = history.last_mut() {
            if last.tau == tau_of(i - 1) {
                last.actual = delta - last.delta;
            }
        }

        if phase == Phase::Active && delta <= eps2 && u.abs() <= cfg.bounds.m2 * h {
            tau_converged = Some(tau_of(i));
            phase = Phase::Release;
        }
        if phase == Phase::Release && u == 0.0 {
            phase = Phase::Off;
            tau_off = Some(tau_of(i));
            i_off = i;
        }
        if phase == Phase::Off {
            verify_max_pointwise = verify_max_pointwise.max(delta.sqrt());
            if i.is_multiple_of(n) {
                verify_max = verify_max.max(delta.sqrt());
            }
            if i >= i_off + verify_steps {
                success = verify_max < 10.0 * cfg.epsilon;
                trace.push(TraceRow { tau: tau_of(i), state: y, u, distance: delta.sqrt() });
                break;
            }
        }
        if phase == Phase::Active && i >= i_limit {
            trace.push(TraceRow { tau: tau_of(i), state: y, u, distance: delta.sqrt() });
            break;
        }

        let u_next = match phase {
            Phase::Waiting | Phase::Off => 0.0,
            Phase::Release => u - u.signum() * u.abs().min(cfg.bounds.m2 * h),
            Phase::Active => {
                let f_u = sys.rhs(t, y, u);
                let cond = if linear {
                    linear_condition(d, f_d - f_u, h)
                } else {
                    let p = sys.partials(t, y, u);
                    let s = Sensitivity { du: p.du, dtau: p.dtau, dy: p.dy };
                    parametric_condition(d, f_d - f_u, &s, f_u, h, cfg.state_term)
                };
                let feasible = cond.feasible(h, cfg.deg_tol);
                let decreasing = cond.delta_decreasing();
                let rate = select_rate(feasible, &cfg.bounds, u, h, decreasing);
                let u_next = (u + rate * h).clamp(-cfg.bounds.m1, cfg.bounds.m1);
                let g_applied = f_d - sys.rhs(t, y, u_next);
                let curvature = second_derivative(sys, t, y_d, 0.0) - second_derivative(sys, t, y, u_next);
                history.push(StepRecord {
                    tau: tau_of(i),
                    delta,
                    u_before: u,
                    rate,
                    u: u_next,
                    feasible,
                    in_feasible: !decreasing && feasible.contains(rate),
                    decreasing,
                    predicted: cond.predicted_change(rate, h),
                    predicted_full: 2.0 * d.dot(g_applied) * h + (g_applied.norm_sq() + d.dot(curvature)) * h * h,
                    actual: f64::NAN,
                });
                u_next
            }
        };
        u = u_next;
        max_abs_u = max_abs_u.max(u.abs());
        trace.push(TraceRow { tau: tau_of(i), state: y, u, distance: delta.sqrt() });
        y = advance(sys, t, y, u, h, &cfg.step)?.state;
        i += 1;
    }

    let final_distance = trace.last().map_or(f64::NAN, |r| r.distance);
    Ok(SwitchResult {
        success,
        step: h,
        period,
        target_shift: shift,
        tau_engaged: tau_of(i_engage),
        tau_converged,
        tau_off,
        periods_to_converge: tau_converged.map(|t| (t - tau_of(i_engage)) / period),
        max_abs_u,
        distance_at_engagement,
        final_distance,
        verify_max_distance: tau_off.map(|_| verify_max),
        verify_max_pointwise: tau_off.map(|_| verify_max_pointwise),
        trace,
        history,
    })
}

/// Quantities of the convergence theorem evaluated on a finished run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoremCheck {
    /// `|Delta_0 + sum of truncated one-step predictions|`.
    pub lhs: f64,
    /// `lhs / h^2`.
    pub lhs_over_h2: f64,
    /// `Delta` at the last controlled step divided by `h^2`.
    pub c1: f64,
    /// Median of `|actual - full prediction|` over smooth steps.
    pub step_residual_median: f64,
    pub step_residual_max: f64,
    pub steps: usize,
}

/// Evaluate the theorem inequality and the per-step expansion residual.
///
/// Steps whose observed change is unavailable are skipped; steps across an
/// impact surface are excluded from the residual statistics because the
/// expansion assumes a smooth field.
pub fn theorem_residual(history: &[StepRecord], h: f64) -> TheoremCheck {
    let delta0 = history.first().map_or(0.0, |r| r.delta);
    let sum: f64 = history.iter().map(|r| r.predicted).sum();
    let lhs = (delta0 + sum).abs();
    let last = history.last().map_or(0.0, |r| r.delta + if r.actual.is_finite() { r.actual } else { 0.0 });
    let mut residuals: Vec<f64> =
        history.iter().filter(|r| r.actual.is_finite()).map(|r| (r.actual - r.predicted_full).abs()).collect();
    residuals.sort_by(f64::total_cmp);
    let median = if residuals.is_empty() { 0.0 } else { residuals[residuals.len() / 2] };
    TheoremCheck {
        lhs,
        lhs_over_h2: lhs / (h * h),
        c1: last / (h * h),
        step_residual_median: median,
        step_residual_max: residuals.last().copied().unwrap_or(0.0),
        steps: history.len(),
    }
}
