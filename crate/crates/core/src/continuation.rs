//! Periodic-orbit continuation by shooting on the stroboscopic map.
//!
//! Orbits are fixed points of `P^p`, found by Newton iteration with a
//! central finite-difference Jacobian. Branches are followed in one
//! parameter by natural or pseudo-arclength stepping, and codimension-one
//! events (folds, period doublings, grazings) are bracketed by indicator
//! sign changes and refined by bisection along the bracketing chord.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::attractor::StroboscopicMap;
use crate::dynamics::{Mat2, Param, State, System};
use crate::error::{Error, Result};
use crate::integrator::StepSpec;
use crate::output::fmt_f64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShootOptions {
    pub step: StepSpec,
    /// Newton stops once `|P^p(z) - z|` falls below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Finite-difference increment for the Jacobian.
    pub fd_delta: f64,
}

impl Default for ShootOptions {
    fn default() -> Self {
        Self { step: StepSpec::default(), tol: 1e-10, max_iter: 30, fd_delta: 1e-6 }
    }
}

/// Floquet multiplier (eigenvalue of the monodromy matrix of `P^p`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Multiplier {
    pub re: f64,
    pub im: f64,
}

impl Multiplier {
    pub fn norm(&self) -> f64 {
        self.re.hypot(self.im)
    }
}

/// Eigenvalues of a 2x2 matrix, largest magnitude first.
pub fn multipliers(m: &Mat2) -> [Multiplier; 2] {
    let tr = m[0][0] + m[1][1];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let half = 0.5 * tr;
    let disc = half * half - det;
    if disc >= 0.0 {
        let root = disc.sqrt();
        // Avoid cancellation in the smaller root.
        let big = half + half.signum() * root;
        let small = if big != 0.0 { det / big } else { half - root };
        let (a, b) = if big.abs() >= small.abs() { (big, small) } else { (small, big) };
        [Multiplier { re: a, im: 0.0 }, Multiplier { re: b, im: 0.0 }]
    } else {
        let im = (-disc).sqrt();
        [Multiplier { re: half, im }, Multiplier { re: half, im: -im }]
    }
}

fn det2(m: &Mat2) -> f64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

/// `det(M - I)`; changes sign when a real multiplier crosses `+1`.
pub fn fold_indicator(m: &Mat2) -> f64 {
    det2(&[[m[0][0] - 1.0, m[0][1]], [m[1][0], m[1][1] - 1.0]])
}

/// `det(M + I)`; changes sign when a real multiplier crosses `-1`.
pub fn period_doubling_indicator(m: &Mat2) -> f64 {
    det2(&[[m[0][0] + 1.0, m[0][1]], [m[1][0], m[1][1] + 1.0]])
}

fn fd_column(f: impl Fn(f64) -> Result<State>, center: State, delta: f64) -> Result<(State, bool)> {
    let plus = f(delta)?;
    let minus = f(-delta)?;
    let fwd = (plus - center) * (1.0 / delta);
    let bwd = (center - minus) * (1.0 / delta);
    let noticeable = |a: f64, b: f64| a.abs() > 1e-8 && b.abs() > 1e-8;
    let consistent = !((noticeable(fwd.x, bwd.x) && fwd.x * bwd.x < 0.0)
        || (noticeable(fwd.v, bwd.v) && fwd.v * bwd.v < 0.0));
    Ok(((plus - minus) * (0.5 / delta), consistent))
}

/// Central-difference derivative of a map; when the one-sided differences
/// disagree in sign the increment is reduced tenfold once.
fn fd_derivative(f: impl Fn(f64) -> Result<State>, center: State, delta: f64) -> Result<State> {
    let (col, consistent) = fd_column(&f, center, delta)?;
    if consistent {
        Ok(col)
    } else {
        Ok(fd_column(&f, center, 0.1 * delta)?.0)
    }
}

/// `P^p` together with its Jacobian at `z`.
pub fn map_and_jacobian(map: &StroboscopicMap<'_>, z: State, p: usize, delta: f64) -> Result<(State, Mat2)> {
    let pz = map.iterate(z, p)?;
    let cx = fd_derivative(|d| map.iterate(State::new(z.x + d, z.v), p), pz, delta)?;
    let cv = fd_derivative(|d| map.iterate(State::new(z.x, z.v + d), p), pz, delta)?;
    Ok((pz, [[cx.x, cv.x], [cx.v, cv.v]]))
}

/// Monodromy matrix of the period-`p` orbit through `z`.
pub fn monodromy(map: &StroboscopicMap<'_>, z: State, p: usize, delta: f64) -> Result<Mat2> {
    Ok(map_and_jacobian(map, z, p, delta)?.1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicOrbit {
    pub anchor: State,
    pub p: usize,
    /// Value of the continuation parameter (if any) at this orbit.
    pub param: f64,
    pub multipliers: [Multiplier; 2],
    pub monodromy: Mat2,
    pub residual: f64,
    pub contact_time: f64,
    pub peak_to_peak: f64,
    pub impacts_per_period: Option<u32>,
    /// Local maxima of `x` over one orbital period, largest first.
    pub maxima: Vec<f64>,
}

impl PeriodicOrbit {
    pub fn is_stable(&self) -> bool {
        self.multipliers.iter().all(|m| m.norm() < 1.0)
    }
}

fn measure_orbit(map: &StroboscopicMap<'_>, z: State, p: usize, m: Mat2, residual: f64, param: f64) -> Result<PeriodicOrbit> {
    let stats = map.orbit_stats(z, p)?;
    let mut maxima = stats.local_maxima.clone();
    maxima.sort_by(|a, b| b.total_cmp(a));
    Ok(PeriodicOrbit {
        anchor: z,
        p,
        param,
        multipliers: multipliers(&m),
        monodromy: m,
        residual,
        contact_time: stats.contact_time,
        peak_to_peak: stats.peak_to_peak(),
        impacts_per_period: map.system().is_impact().then_some(stats.impacts),
        maxima,
    })
}

fn solve2(m: &Mat2, r: State) -> Option<State> {
    let det = det2(m);
    if det.abs() < 1e-300 || !det.is_finite() {
        return None;
    }
    Some(State::new((m[1][1] * r.x - m[0][1] * r.v) / det, (m[0][0] * r.v - m[1][0] * r.x) / det))
}

/// Newton iteration on `P^p(z) - z`. `param` is recorded on the orbit only.
pub fn shoot(sys: &System, z_guess: State, p: usize, param: f64, opts: &ShootOptions) -> Result<PeriodicOrbit> {
    if p == 0 {
        return Err(Error::domain("period multiple must be at least 1"));
    }
    opts.step.validate()?;
    let map = StroboscopicMap::new(sys, opts.step);
    let mut z = z_guess;
    let mut residual = f64::INFINITY;
    for _ in 0..=opts.max_iter {
        let (pz, m) = map_and_jacobian(&map, z, p, opts.fd_delta)?;
        let g = pz - z;
        residual = g.norm();
        if residual < opts.tol {
            return measure_orbit(&map, z, p, m, residual, param);
        }
        let jg = [[m[0][0] - 1.0, m[0][1]], [m[1][0], m[1][1] - 1.0]];
        let Some(dz) = solve2(&jg, -g) else { break };
        z += dz;
        if !z.is_finite() {
            break;
        }
    }
    Err(Error::NoOrbit { iterations: opts.max_iter, residual })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    Fold,
    /// A real multiplier crosses `+1` without the branch turning back
    /// (a symmetry-breaking or transcritical branch point).
    BranchPoint,
    PeriodDoubling,
    Grazing,
}

/// Which local maximum of `x` is tested against the gap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Graze {
    /// The highest non-impacting maximum reaches the gap (an impact is gained).
    Gain,
    /// The lowest impacting maximum leaves the gap (an impact is lost).
    Loss,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub kind: EventKind,
    pub graze: Option<Graze>,
    /// Indices of the branch points bracketing the event.
    pub bracket: (usize, usize),
    /// Linear interpolation of the indicator zero between the bracket.
    pub estimate: f64,
    pub refined: Option<f64>,
}

/// Solution measure exported with a branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Measure {
    ContactTime,
    PeakToPeak,
}

impl Measure {
    pub fn of(self, orbit: &PeriodicOrbit) -> f64 {
        match self {
            Measure::ContactTime => orbit.contact_time,
            Measure::PeakToPeak => orbit.peak_to_peak,
        }
    }

    pub fn default_for(sys: &System) -> Self {
        if sys.is_impact() {
            Measure::ContactTime
        } else {
            Measure::PeakToPeak
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stepping {
    #[default]
    Natural,
    Arclength,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepOptions {
    /// Target parameter value; the sweep heads from the start towards it.
    pub to: f64,
    /// Nominal step (parameter step or arclength step).
    pub ds: f64,
    pub min_ds: f64,
    pub max_points: usize,
    pub stepping: Stepping,
    /// Finite-difference increment for the parameter derivative.
    pub param_delta: f64,
    pub shoot: ShootOptions,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            to: 1.0,
            ds: 0.005,
            min_ds: 1e-6,
            max_points: 2000,
            stepping: Stepping::Natural,
            param_delta: 1e-6,
            shoot: ShootOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub param: Param,
    pub base: System,
    pub points: Vec<PeriodicOrbit>,
    pub events: Vec<Event>,
    /// Impacts per orbital period of the starting orbit, used by the
    /// grazing indicators.
    pub reference_impacts: Option<u32>,
    /// Why the sweep stopped.
    pub stop: String,
}

/// Value of the event indicator for `orbit`. Grazing indicators compare the
/// `k`-th / `(k+1)`-th largest local maximum of `x` with the gap.
pub fn indicator(sys: &System, orbit: &PeriodicOrbit, kind: EventKind, graze: Option<Graze>, k: Option<u32>) -> Option<f64> {
    match kind {
        EventKind::Fold | EventKind::BranchPoint => Some(fold_indicator(&orbit.monodromy)),
        EventKind::PeriodDoubling => Some(period_doubling_indicator(&orbit.monodromy)),
        EventKind::Grazing => {
            let gap = sys.surface(0.0)?;
            let k = k? as usize;
            let idx = match graze? {
                Graze::Gain => k,
                Graze::Loss => k.checked_sub(1)?,
            };
            orbit.maxima.get(idx).map(|m| m - gap)
        }
    }
}

impl Branch {
    pub fn measure_default(&self) -> Measure {
        Measure::default_for(&self.base)
    }

    /// CSV `param,measure,lambda1_re,lambda1_im,lambda2_re,lambda2_im,stable`.
    pub fn write_csv<W: Write>(&self, mut w: W, measure: Measure) -> std::io::Result<()> {
        writeln!(w, "param,measure,lambda1_re,lambda1_im,lambda2_re,lambda2_im,stable")?;
        for o in &self.points {
            let [l1, l2] = o.multipliers;
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                fmt_f64(o.param),
                fmt_f64(measure.of(o)),
                fmt_f64(l1.re),
                fmt_f64(l1.im),
                fmt_f64(l2.re),
                fmt_f64(l2.im),
                o.is_stable()
            )?;
        }
        Ok(())
    }

    /// Whether the parameter direction reverses around the segment `(i, j)`.
    fn turns_within(&self, i: usize, j: usize) -> bool {
        let p = |k: usize| self.points[k].param;
        let here = p(j) - p(i);
        let before = if i > 0 { p(i) - p(i - 1) } else { here };
        let after = if j + 1 < self.points.len() { p(j + 1) - p(j) } else { here };
        before * after < 0.0 || before * here < 0.0 || here * after < 0.0
    }

    /// Join a branch swept downwards with one swept upwards from the same
    /// start into a single branch ordered from the first end to the second.
    pub fn join(down: Branch, up: Branch) -> Result<Branch> {
        if down.points.first() != up.points.first() || down.param != up.param {
            return Err(Error::domain("branches to join must share their start"));
        }
        let mut points: Vec<PeriodicOrbit> = down.points.into_iter().rev().collect();
        points.extend(up.points.into_iter().skip(1));
        let mut branch = Branch {
            param: up.param,
            base: up.base,
            points,
            events: Vec::new(),
            reference_impacts: up.reference_impacts,
            stop: format!("{}; {}", down.stop, up.stop),
        };
        branch.detect_events();
        Ok(branch)
    }

    fn detect_events(&mut self) {
        let sys = &self.base;
        let k = self.reference_impacts;
        let kinds: Vec<(EventKind, Option<Graze>)> = if sys.is_impact() {
            vec![
                (EventKind::Fold, None),
                (EventKind::PeriodDoubling, None),
                (EventKind::Grazing, Some(Graze::Gain)),
                (EventKind::Grazing, Some(Graze::Loss)),
            ]
        } else {
            vec![(EventKind::Fold, None), (EventKind::PeriodDoubling, None)]
        };
        let mut events = Vec::new();
        for w in 1..self.points.len() {
            let (a, b) = (&self.points[w - 1], &self.points[w]);
            for &(kind, graze) in &kinds {
                let (Some(ia), Some(ib)) = (indicator(sys, a, kind, graze, k), indicator(sys, b, kind, graze, k)) else {
                    continue;
                };
                if ia.signum() != ib.signum() && ia != 0.0 {
                    let t = ia / (ia - ib);
                    let kind = if kind == EventKind::Fold && !self.turns_within(w - 1, w) {
                        EventKind::BranchPoint
                    } else {
                        kind
                    };
                    events.push(Event {
                        kind,
                        graze,
                        bracket: (w - 1, w),
                        estimate: a.param + t * (b.param - a.param),
                        refined: None,
                    });
                }
            }
        }
        self.events = events;
    }
}

/// Solve `A x = b` for a 3x3 system by Gaussian elimination with pivoting.
fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for c in col..3 {
                a[row][c] -= f * a[col][c];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let s: f64 = (row + 1..3).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Point `(z, lambda)` of the extended space.
type Ext = [f64; 3];

struct Shooter<'a> {
    base: &'a System,
    param: Param,
    p: usize,
    opts: ShootOptions,
    param_delta: f64,
}

impl<'a> Shooter<'a> {
    fn system(&self, lambda: f64) -> Result<System> {
        self.base.with_param(self.param, lambda)
    }

    fn map_at(&self, z: State, lambda: f64) -> Result<State> {
        let sys = self.system(lambda)?;
        StroboscopicMap::new(&sys, self.opts.step).iterate(z, self.p)
    }

    /// `G`, `dG/dz` and `dG/dlambda` at `(z, lambda)`.
    fn linearize(&self, x: Ext) -> Result<(State, Mat2, State)> {
        let z = State::new(x[0], x[1]);
        let sys = self.system(x[2])?;
        let map = StroboscopicMap::new(&sys, self.opts.step);
        let (pz, m) = map_and_jacobian(&map, z, self.p, self.opts.fd_delta)?;
        let glam = fd_derivative(|d| self.map_at(z, x[2] + d), pz, self.param_delta)?;
        Ok((pz - z, m, glam))
    }

    fn orbit(&self, z: State, lambda: f64) -> Result<PeriodicOrbit> {
        shoot(&self.system(lambda)?, z, self.p, lambda, &self.opts)
    }

    /// Newton on `G = 0` restricted to the hyperplane `n . (x - q) = 0`.
    fn correct(&self, q: Ext, n: Ext, max_iter: usize) -> Result<Ext> {
        let mut x = q;
        let mut residual = f64::INFINITY;
        for _ in 0..max_iter {
            let (g, m, glam) = self.linearize(x)?;
            let h = (0..3).map(|i| n[i] * (x[i] - q[i])).sum::<f64>();
            residual = g.norm();
            if residual < self.opts.tol && h.abs() < self.opts.tol {
                return Ok(x);
            }
            let a = [[m[0][0] - 1.0, m[0][1], glam.x], [m[1][0], m[1][1] - 1.0, glam.v], n];
            let Some(dx) = solve3(a, [-g.x, -g.v, -h]) else { break };
            for i in 0..3 {
                x[i] += dx[i];
            }
            if !x.iter().all(|v| v.is_finite()) {
                break;
            }
        }
        Err(Error::NoOrbit { iterations: max_iter, residual })
    }

    /// Unit tangent to the solution curve at a converged point.
    fn tangent(&self, x: Ext, orient: Ext) -> Result<Ext> {
        let (_, m, glam) = self.linearize(x)?;
        let r1 = [m[0][0] - 1.0, m[0][1], glam.x];
        let r2 = [m[1][0], m[1][1] - 1.0, glam.v];
        let mut t = [r1[1] * r2[2] - r1[2] * r2[1], r1[2] * r2[0] - r1[0] * r2[2], r1[0] * r2[1] - r1[1] * r2[0]];
        let norm = t.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            return Err(Error::domain("singular extended Jacobian: tangent undefined"));
        }
        let sign = if t.iter().zip(&orient).map(|(a, b)| a * b).sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
        for v in &mut t {
            *v *= sign / norm;
        }
        Ok(t)
    }
}

fn ext(o: &PeriodicOrbit) -> Ext {
    [o.anchor.x, o.anchor.v, o.param]
}

/// Follow the branch through `start` (converged at `start.param` of
/// `base`) in `param` towards `opts.to`.
pub fn sweep(base: &System, param: Param, start: &PeriodicOrbit, opts: &SweepOptions) -> Result<Branch> {
    if !(opts.ds > 0.0) || !(opts.min_ds > 0.0) {
        return Err(Error::domain("sweep steps must be positive"));
    }
    let base = base.with_param(param, start.param)?;
    let shooter = Shooter { base: &base, param, p: start.p, opts: opts.shoot, param_delta: opts.param_delta };
    let dir = if opts.to >= start.param { 1.0 } else { -1.0 };
    let beyond = |lambda: f64| (lambda - opts.to) * dir > 0.0;
    let mut points = vec![start.clone()];
    let mut ds = opts.ds;
    let stop;

    match opts.stepping {
        Stepping::Natural => loop {
            if points.len() >= opts.max_points {
                stop = "maximum number of points".to_string();
                break;
            }
            let last = points.last().expect("non-empty");
            if !beyond(last.param) && (last.param - opts.to).abs() < 1e-14 {
                stop = "reached end of range".to_string();
                break;
            }
            let mut next_lambda = last.param + dir * ds;
            if beyond(next_lambda) || (next_lambda - opts.to).abs() < 1e-9 * ds {
                next_lambda = opts.to;
            }
            // Secant predictor from the last two points.
            let guess = match points.len() {
                1 => last.anchor,
                n => {
                    let prev = &points[n - 2];
                    let dl = last.param - prev.param;
                    if dl != 0.0 {
                        last.anchor + (last.anchor - prev.anchor) * ((next_lambda - last.param) / dl)
                    } else {
                        last.anchor
                    }
                }
            };
            match shooter.orbit(guess, next_lambda) {
                Ok(o) if (o.anchor - last.anchor).norm() < 0.2 + 20.0 * ds => {
                    points.push(o);
                    ds = (ds * 1.5).min(opts.ds);
                }
                Ok(_) | Err(Error::NoOrbit { .. }) | Err(Error::Diverged { .. }) => {
                    ds *= 0.5;
                    if ds < opts.min_ds {
                        stop = format!("continuation failed near {} = {}", param, last.param);
                        break;
                    }
                }
                Err(e) => return Err(e),
            }
        },
        Stepping::Arclength => {
            let mut t = shooter.tangent(ext(start), [0.0, 0.0, dir])?;
            loop {
                if points.len() >= opts.max_points {
                    stop = "maximum number of points".to_string();
                    break;
                }
                let last = ext(points.last().expect("non-empty"));
                if beyond(last[2]) || (last[2] - opts.to).abs() < 1e-14 {
                    stop = "reached end of range".to_string();
                    break;
                }
                let q = [last[0] + ds * t[0], last[1] + ds * t[1], last[2] + ds * t[2]];
                match shooter.correct(q, t, 12) {
                    Ok(x) => {
                        let orbit = shooter.orbit(State::new(x[0], x[1]), x[2])?;
                        let x = ext(&orbit);
                        t = shooter.tangent(x, [x[0] - last[0], x[1] - last[1], x[2] - last[2]])?;
                        points.push(orbit);
                        ds = (ds * 1.3).min(opts.ds);
                    }
                    Err(Error::NoOrbit { .. }) | Err(Error::Diverged { .. }) => {
                        ds *= 0.5;
                        if ds < opts.min_ds {
                            stop = format!("continuation failed near {} = {}", param, last[2]);
                            break;
                        }
                    }
                    Err(e) => return Err(e),
                }
            }
        }
    }

    let mut branch =
        Branch { param, base, points, events: Vec::new(), reference_impacts: start.impacts_per_period, stop };
    branch.detect_events();
    Ok(branch)
}

/// Bisection for a sign change of `f` on `[lo, hi]`. Returns the midpoint of
/// the final bracket and the number of halvings.
pub fn bisect_sign_change(
    mut f: impl FnMut(f64) -> Result<f64>,
    lo: f64,
    hi: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(f64, usize)> {
    if !(tol > 0.0) {
        return Err(Error::domain("bisection tolerance must be positive"));
    }
    let (mut a, mut b) = (lo, hi);
    let fa = f(a)?;
    let fb = f(b)?;
    if !(fa.is_finite() && fb.is_finite()) || fa.signum() == fb.signum() {
        return Err(Error::InvalidBracket(format!("f({lo}) = {fa:e} and f({hi}) = {fb:e} do not change sign")));
    }
    let mut fa = fa;
    let mut n = 0;
    while (b - a).abs() > tol {
        if n >= max_iter {
            break;
        }
        let m = 0.5 * (a + b);
        let fm = f(m)?;
        if fm == 0.0 {
            return Ok((m, n + 1));
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
        n += 1;
    }
    Ok((0.5 * (a + b), n))
}

/// Refined event point: parameter value and the orbit there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinedEvent {
    pub event: Event,
    pub param: f64,
    pub orbit: PeriodicOrbit,
    pub indicator: f64,
    pub iterations: usize,
}

/// Locate the event by bisection along the chord between its bracketing
/// branch points, correcting each trial point back onto the branch
/// orthogonally to the chord. Stops when the parameter bracket is below `tol`.
pub fn refine_event(branch: &Branch, event: &Event, tol: f64, opts: &ShootOptions) -> Result<RefinedEvent> {
    let (i, j) = event.bracket;
    let (Some(a), Some(b)) = (branch.points.get(i), branch.points.get(j)) else {
        return Err(Error::InvalidBracket(format!("bracket ({i}, {j}) outside the branch")));
    };
    let shooter = Shooter { base: &branch.base, param: branch.param, p: a.p, opts: *opts, param_delta: 1e-6 };
    let (xa, xb) = (ext(a), ext(b));
    let chord = [xb[0] - xa[0], xb[1] - xa[1], xb[2] - xa[2]];
    let len = chord.iter().map(|c| c * c).sum::<f64>().sqrt();
    if !(len > 0.0) {
        return Err(Error::InvalidBracket("bracketing points coincide".into()));
    }
    let n = chord.map(|c| c / len);
    let k = branch.reference_impacts;
    let point = |theta: f64| -> Result<PeriodicOrbit> {
        let q = [xa[0] + theta * chord[0], xa[1] + theta * chord[1], xa[2] + theta * chord[2]];
        let x = shooter.correct(q, n, 20)?;
        shooter.orbit(State::new(x[0], x[1]), x[2])
    };
    let value = |o: &PeriodicOrbit| {
        indicator(&branch.base, o, event.kind, event.graze, k)
            .ok_or_else(|| Error::InvalidBracket("event indicator undefined on the bracket".into()))
    };
    let dparam = chord[2].abs();
    let theta_tol = if dparam > 0.0 { tol / dparam } else { tol / len };
    let (theta, iterations) = bisect_sign_change(
        |theta| {
            if theta == 0.0 {
                value(a)
            } else if theta == 1.0 {
                value(b)
            } else {
                value(&point(theta)?)
            }
        },
        0.0,
        1.0,
        theta_tol,
        200,
    )?;
    let orbit = point(theta)?;
    let indicator = value(&orbit)?;
    Ok(RefinedEvent { event: Event { refined: Some(orbit.param), ..*event }, param: orbit.param, orbit, indicator, iterations })
}

/// Refine every event of `branch`.
pub fn refine_all(branch: &mut Branch, tol: f64, opts: &ShootOptions) -> Result<Vec<RefinedEvent>> {
    let refined: Vec<RefinedEvent> =
        branch.events.iter().map(|e| refine_event(branch, e, tol, opts)).collect::<Result<_>>()?;
    for (e, r) in branch.events.iter_mut().zip(&refined) {
        e.refined = Some(r.param);
    }
    Ok(refined)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSpec {
    /// Parameter swept within each slice.
    pub param1: Param,
    /// Where the seed orbit of the first slice lives.
    pub param1_seed: f64,
    /// Each slice is swept over `centre +- param1_span`, the centre following
    /// the middle of the previous slice's event window.
    pub param1_span: f64,
    /// Slicing parameter and its grid.
    pub param2: Param,
    pub param2_range: (f64, f64),
    pub slices: usize,
    pub kinds: Vec<EventKind>,
    /// Refinement tolerance in `param1`.
    pub tol: f64,
    /// Additional bisection steps in `param2` where the event pair vanishes.
    #[serde(default)]
    pub endpoint_bisections: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionEvent {
    pub kind: EventKind,
    pub param1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slice {
    pub param2: f64,
    /// `param1` of the seed orbit the slice was swept from.
    pub centre: f64,
    /// Nearest events on either side of the centre.
    pub window: Option<(f64, f64)>,
    /// Refined events found in this slice, ascending in `param1`.
    pub events: Vec<RegionEvent>,
}

impl Slice {
    /// The nearest events on either side of `centre`, if both exist.
    pub fn window_around(&self, centre: f64) -> Option<(f64, f64)> {
        let left = self.events.iter().map(|e| e.param1).filter(|&p| p <= centre).max_by(f64::total_cmp)?;
        let right = self.events.iter().map(|e| e.param1).filter(|&p| p > centre).min_by(f64::total_cmp)?;
        Some((left, right))
    }

    /// [`Self::window_around`], or else the closest pair of adjacent events
    /// lying within `reach` of `centre`. Narrow windows near a cusp can slip
    /// past an extrapolated centre.
    pub fn window_near(&self, centre: f64, reach: f64) -> Option<(f64, f64)> {
        if let Some(w) = self.window_around(centre) {
            return Some(w);
        }
        let mut params: Vec<f64> = self.events.iter().map(|e| e.param1).collect();
        params.sort_by(f64::total_cmp);
        let gap = |&(l, r): &(f64, f64)| if centre < l { l - centre } else { centre - r };
        params
            .windows(2)
            .map(|w| (w[0], w[1]))
            .filter(|&(l, r)| r > l)
            .filter(|w| gap(w) <= reach)
            .min_by(|a, b| gap(a).total_cmp(&gap(b)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Locus {
    pub spec: RegionSpec,
    pub slices: Vec<Slice>,
    /// Grid value of `param2` from which the event window was lost, if any.
    pub truncated_at: Option<f64>,
    /// Why the scan was truncated.
    pub truncation: Option<String>,
    /// Estimated point where the bounding events meet (e.g. a cusp of folds).
    pub endpoint: Option<(f64, f64)>,
}

impl Locus {
    /// CSV `param2,param1,kind` with one row per event point.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{},{},kind", self.spec.param2, self.spec.param1)?;
        for s in &self.slices {
            for e in &s.events {
                let kind = match e.kind {
                    EventKind::Fold => "fold",
                    EventKind::BranchPoint => "branch-point",
                    EventKind::PeriodDoubling => "period-doubling",
                    EventKind::Grazing => "grazing",
                };
                writeln!(w, "{},{},{}", fmt_f64(s.param2), fmt_f64(e.param1), kind)?;
            }
        }
        Ok(())
    }

    /// Whether `(p1, p2)` lies inside the traced window, interpolating
    /// linearly between neighbouring slices.
    pub fn contains(&self, p1: f64, p2: f64) -> bool {
        let windows: Vec<(f64, f64, f64)> =
            self.slices.iter().filter_map(|s| s.window.map(|(l, r)| (s.param2, l, r))).collect();
        windows.windows(2).any(|w| {
            let (a, b) = if w[0].0 <= w[1].0 { (w[0], w[1]) } else { (w[1], w[0]) };
            if p2 < a.0 || p2 > b.0 {
                return false;
            }
            let t = if b.0 > a.0 { (p2 - a.0) / (b.0 - a.0) } else { 0.0 };
            p1 > a.1 + t * (b.1 - a.1) && p1 < a.2 + t * (b.2 - a.2)
        })
    }
}

struct SliceResult {
    events: Vec<RegionEvent>,
    branches: Vec<Branch>,
}

fn scan_slice(sys: &System, spec: &RegionSpec, start: &PeriodicOrbit, centre: f64, sweep_opts: &SweepOptions) -> Result<SliceResult> {
    let stepping = if spec.kinds.contains(&EventKind::Fold) { Stepping::Arclength } else { sweep_opts.stepping };
    let mut events = Vec::new();
    let mut branches = Vec::new();
    for to in [centre - spec.param1_span, centre + spec.param1_span] {
        let opts = SweepOptions { to, stepping, ..*sweep_opts };
        let mut branch = sweep(sys, spec.param1, start, &opts)?;
        branch.events.retain(|e| spec.kinds.contains(&e.kind));
        let refined = branch
            .events
            .iter()
            .map(|e| match refine_event(&branch, e, spec.tol, &sweep_opts.shoot) {
                Ok(r) => Ok(r.param),
                Err(Error::NoOrbit { .. } | Error::Diverged { .. }) => Ok(e.estimate),
                Err(err) => Err(err),
            })
            .collect::<Result<Vec<f64>>>()?;
        for (e, param1) in branch.events.iter_mut().zip(refined) {
            e.refined = Some(param1);
            events.push(RegionEvent { kind: e.kind, param1 });
        }
        branches.push(branch);
    }
    events.sort_by(|a, b| a.param1.total_cmp(&b.param1));
    events.dedup_by(|a, b| a.kind == b.kind && (a.param1 - b.param1).abs() < 10.0 * spec.tol);
    Ok(SliceResult { events, branches })
}

/// Continue `seed` along the straight segment from `(from.0, from.1)` to
/// `(to.0, to.1)` in `(param1, param2)`, halving the step on failure.
fn carry(
    base: &System,
    spec: &RegionSpec,
    seed: &PeriodicOrbit,
    from: (f64, f64),
    to: (f64, f64),
    sweep_opts: &SweepOptions,
) -> Result<PeriodicOrbit> {
    let at = |s: f64| -> Result<(System, f64)> {
        let p1 = from.0 + s * (to.0 - from.0);
        let sys = base.with_param(spec.param1, p1)?.with_param(spec.param2, from.1 + s * (to.1 - from.1))?;
        Ok((sys, p1))
    };
    let mut current = seed.clone();
    let (mut s, mut ds) = (0.0f64, 0.25f64);
    while s < 1.0 {
        let next = (s + ds).min(1.0);
        let (sys, p1) = at(next)?;
        match shoot(&sys, current.anchor, current.p, p1, &sweep_opts.shoot) {
            Ok(o) if (o.anchor - current.anchor).norm() < 0.5 => {
                current = o;
                s = next;
                ds = (2.0 * ds).min(0.25);
            }
            Ok(_) | Err(Error::NoOrbit { .. }) | Err(Error::Diverged { .. }) => {
                ds *= 0.5;
                if ds < 1e-4 {
                    return Err(Error::NoOrbit { iterations: sweep_opts.shoot.max_iter, residual: f64::NAN });
                }
            }
            Err(e) => return Err(e),
        }
    }
    Ok(current)
}

/// Points of `branch` up to its first turning point.
fn monotone_prefix(branch: &Branch) -> &[PeriodicOrbit] {
    let pts = &branch.points;
    let end = (2..pts.len())
        .find(|&k| (pts[k].param - pts[k - 1].param) * (pts[k - 1].param - pts[k - 2].param) < 0.0)
        .unwrap_or(pts.len());
    &pts[..end]
}

/// Orbit of the slice at `param1 = target`, corrected from the nearest
/// branch point on the sheet of the slice's start orbit.
fn reseed(sys: &System, spec: &RegionSpec, slice: &SliceResult, target: f64, opts: &ShootOptions) -> Result<PeriodicOrbit> {
    let nearest = slice
        .branches
        .iter()
        .flat_map(monotone_prefix)
        .min_by(|a, b| (a.param - target).abs().total_cmp(&(b.param - target).abs()))
        .ok_or_else(|| Error::domain("empty slice branch"))?;
    shoot(&sys.with_param(spec.param1, target)?, nearest.anchor, nearest.p, target, opts)
}

/// Scan `param2` over a grid and locate the events of `spec.kinds` in each
/// slice by sweeps in `param1`. Each slice is seeded from the previous one at
/// the middle of its event window (folds are always followed by
/// pseudo-arclength). When the window disappears, the boundary is refined by
/// bisection in `param2` and reported as the endpoint of the locus; when a
/// seed cannot be continued the scan stops and is flagged as truncated.
pub fn trace_codim1_region(base: &System, seed: &PeriodicOrbit, spec: &RegionSpec, sweep_opts: &SweepOptions) -> Result<Locus> {
    if spec.slices < 2 {
        return Err(Error::domain("a region scan needs at least two slices"));
    }
    if !(spec.param1_span > 0.0) || !(spec.tol > 0.0) || spec.kinds.is_empty() {
        return Err(Error::domain("region scan needs a positive span and tolerance and at least one event kind"));
    }
    let (lo, hi) = spec.param2_range;
    let grid: Vec<f64> = (0..spec.slices).map(|k| lo + (hi - lo) * k as f64 / (spec.slices - 1) as f64).collect();
    let at = |p2: f64, p1: f64| base.with_param(spec.param2, p2)?.with_param(spec.param1, p1);

    let mut slices = Vec::with_capacity(grid.len());
    let mut truncated_at = None;
    let mut truncation = None;
    let mut centre = spec.param1_seed;
    let mut seed_orbit = seed.clone();
    let mut seed_p2 = base.param(spec.param2)?;
    let mut history: Vec<(f64, f64)> = Vec::new();
    // Last slice with a full window: (param2, window, seed orbit).
    let mut last_good: Option<(f64, (f64, f64), PeriodicOrbit)> = None;
    for &p2 in &grid {
        // Window centres drift with param2; extrapolate from the last two.
        let predicted = match history.as_slice() {
            [.., (q0, c0), (q1, c1)] if q1 != q0 => c1 + (c1 - c0) * (p2 - q1) / (q1 - q0),
            _ => centre,
        };
        let attempt = |target: f64| {
            let start = carry(base, spec, &seed_orbit, (centre, seed_p2), (target, p2), sweep_opts)?;
            let sys = at(p2, target)?;
            let result = scan_slice(&sys, spec, &start, target, sweep_opts)?;
            Ok::<_, Error>((sys, start, result, target))
        };
        let attempt = match attempt(predicted) {
            Err(Error::NoOrbit { .. } | Error::Diverged { .. }) if predicted != centre => attempt(centre),
            other => other,
        };
        let (sys, start, result, predicted) = match attempt {
            Ok(r) => r,
            Err(e @ (Error::NoOrbit { .. } | Error::Diverged { .. })) => {
                truncated_at = Some(p2);
                truncation = Some(format!("seed lost at {} = {p2}: {e}", spec.param2));
                break;
            }
            Err(e) => return Err(e),
        };
        seed_p2 = p2;
        centre = predicted;
        let reach = last_good.as_ref().map_or(0.0, |(_, (l, r), _)| r - l);
        let window = (Slice { param2: p2, centre, window: None, events: result.events.clone() }).window_near(centre, reach);
        let slice = Slice { param2: p2, centre, window, events: result.events.clone() };
        match window {
            Some((l, r)) => {
                let mid = 0.5 * (l + r);
                match reseed(&sys, spec, &result, mid, &sweep_opts.shoot) {
                    Ok(orbit) => {
                        seed_orbit = orbit;
                        centre = mid;
                        history.push((p2, mid));
                    }
                    Err(Error::NoOrbit { .. } | Error::Diverged { .. }) => seed_orbit = start,
                    Err(e) => return Err(e),
                }
                last_good = Some((p2, (l, r), seed_orbit.clone()));
            }
            None => {
                seed_orbit = start;
                if truncated_at.is_none() {
                    truncated_at = Some(p2);
                    truncation = Some(format!("event window closes before {} = {p2}", spec.param2));
                }
            }
        }
        slices.push(slice);
    }
    if slices.first().is_some_and(|s| s.window.is_none()) {
        return Err(Error::domain(format!("no event window in the first slice {} = {lo}", spec.param2)));
    }

    let mut endpoint = None;
    if let (Some(closed), Some((good_p2, window, good_seed))) = (truncated_at, last_good.clone()) {
        let closing = slices.iter().find(|s| s.param2 == closed).is_some_and(|s| s.window.is_none());
        if closing {
            let (mut a, mut b) = (good_p2, closed);
            let mut window = window;
            let mut seed_orbit = good_seed;
            for _ in 0..spec.endpoint_bisections {
                let m = 0.5 * (a + b);
                let centre = seed_orbit.param;
                let sys = at(m, centre)?;
                let start = carry(base, spec, &seed_orbit, (centre, a), (centre, m), sweep_opts)?;
                let result = scan_slice(&sys, spec, &start, centre, sweep_opts)?;
                let probe = Slice { param2: m, centre, window: None, events: result.events.clone() };
                match probe.window_near(centre, window.1 - window.0) {
                    Some(w) => {
                        a = m;
                        window = w;
                        seed_orbit = reseed(&sys, spec, &result, 0.5 * (w.0 + w.1), &sweep_opts.shoot).unwrap_or(start);
                    }
                    None => b = m,
                }
            }
            endpoint = Some((0.5 * (window.0 + window.1), 0.5 * (a + b)));
        }
    }
    Ok(Locus { spec: spec.clone(), slices, truncated_at, truncation, endpoint })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multipliers_of_diagonal_and_rotation() {
        let m = multipliers(&[[0.5, 0.0], [0.0, -2.0]]);
        assert_eq!((m[0].re, m[1].re), (-2.0, 0.5));
        let (c, s) = (0.3f64.cos() * 0.9, 0.3f64.sin() * 0.9);
        let m = multipliers(&[[c, -s], [s, c]]);
        assert!((m[0].norm() - 0.9).abs() < 1e-14);
        assert!((m[0].im.abs() - s).abs() < 1e-14);
    }

    #[test]
    fn indicators_vanish_at_unit_multipliers() {
        assert!(fold_indicator(&[[1.0, 0.0], [0.0, 0.3]]).abs() < 1e-15);
        assert!(period_doubling_indicator(&[[-1.0, 0.0], [0.0, 0.3]]).abs() < 1e-15);
        assert!(fold_indicator(&[[0.9, 0.0], [0.0, 0.3]]) > 0.0);
        assert!(fold_indicator(&[[1.1, 0.0], [0.0, 0.3]]) < 0.0);
    }

    #[test]
    fn bisection_step_count() {
        let (root, n) = bisect_sign_change(|x| Ok(x - 0.3), 0.0, 1.0, 1e-6, 100).unwrap();
        assert!((root - 0.3).abs() < 1e-6);
        assert_eq!(n, (1.0f64 / 1e-6).log2().ceil() as usize);
        assert!(matches!(bisect_sign_change(|x| Ok(x + 1.0), 0.0, 1.0, 1e-6, 100), Err(Error::InvalidBracket(_))));
    }

    #[test]
    fn solve3_matches_known_solution() {
        let a = [[2.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 4.0]];
        let x = [1.0, -2.0, 0.5];
        let b = [0, 1, 2].map(|i| (0..3).map(|j| a[i][j] * x[j]).sum::<f64>());
        let got = solve3(a, b).unwrap();
        for i in 0..3 {
            assert!((got[i] - x[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_oscillator_orbit_and_multipliers() {
        // Damped linear oscillator: the periodic orbit is unique and the
        // multipliers are exp(-zeta T +- i sqrt(1-zeta^2) T).
        use crate::dynamics::{Channel, ImpactParams};
        let p = ImpactParams { zeta: 0.05, e: 100.0, a: 0.5, beta: 0.0, omega: 0.7 };
        let sys = System::soft_impact(p, Channel::AdditiveForce).unwrap();
        let orbit = shoot(&sys, State::ZERO, 1, 0.0, &ShootOptions::default()).unwrap();
        assert!(orbit.residual < 1e-10);
        let t = sys.period();
        let expected = (-p.zeta * t).exp();
        for m in orbit.multipliers {
            assert!((m.norm() - expected).abs() < 1e-6, "{} vs {expected}", m.norm());
        }
        assert!(orbit.is_stable());
    }

    #[test]
    fn window_falls_back_to_a_nearby_pair() {
        let ev = |param1| RegionEvent { kind: EventKind::Fold, param1 };
        let slice = Slice { param2: 0.0, centre: 0.0, window: None, events: vec![ev(1.0), ev(1.1), ev(2.0)] };
        assert_eq!(slice.window_around(1.05), Some((1.0, 1.1)));
        assert_eq!(slice.window_around(1.12), Some((1.1, 2.0)));
        assert_eq!(slice.window_around(0.9), None);
        assert_eq!(slice.window_near(0.9, 0.2), Some((1.0, 1.1)));
        assert_eq!(slice.window_near(0.9, 0.05), None);
        assert_eq!(slice.window_near(2.1, 0.2), Some((1.1, 2.0)));
        assert_eq!(slice.window_near(2.1, 0.05), None);
    }
}
