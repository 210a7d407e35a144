//! The two forced oscillators, their right-hand sides for every control
//! channel, and the analytic partial derivatives used by the controllers.
//!
//! Soft-impact oscillator (nondimensional):
//!
//! ```text
//! x' = v
//! v' = a w^2 sin(w tau) - x - 2 zeta v - beta (x - e) H(x - e)
//! ```
//!
//! Duffing oscillator:
//!
//! ```text
//! x' = v
//! v' = Gamma sin(w tau) + x - p1 v - p2 x^3
//! ```
//!
//! The scalar control `u` enters through one [`Channel`]: added to the
//! acceleration, added to the forcing amplitude `a`, added to the gap `e`,
//! or added to the cubic stiffness `p2`.

use std::f64::consts::TAU;
use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Points closer than this to the switching surface are treated as on it.
pub const SURFACE_TOL: f64 = 1e-12;

/// Phase-space point of a one-degree-of-freedom oscillator.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct State {
    pub x: f64,
    pub v: f64,
}

impl State {
    pub const ZERO: State = State { x: 0.0, v: 0.0 };

    pub const fn new(x: f64, v: f64) -> Self {
        Self { x, v }
    }

    pub fn dot(self, other: State) -> f64 {
        self.x * other.x + self.v * other.v
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.v.is_finite()
    }
}

impl Add for State {
    type Output = State;
    fn add(self, rhs: State) -> State {
        State::new(self.x + rhs.x, self.v + rhs.v)
    }
}

impl AddAssign for State {
    fn add_assign(&mut self, rhs: State) {
        self.x += rhs.x;
        self.v += rhs.v;
    }
}

impl Sub for State {
    type Output = State;
    fn sub(self, rhs: State) -> State {
        State::new(self.x - rhs.x, self.v - rhs.v)
    }
}

impl Mul<f64> for State {
    type Output = State;
    fn mul(self, k: f64) -> State {
        State::new(self.x * k, self.v * k)
    }
}

impl Neg for State {
    type Output = State;
    fn neg(self) -> State {
        State::new(-self.x, -self.v)
    }
}

/// 2x2 matrix, row-major.
pub type Mat2 = [[f64; 2]; 2];

pub fn mat_vec(m: &Mat2, s: State) -> State {
    State::new(m[0][0] * s.x + m[0][1] * s.v, m[1][0] * s.x + m[1][1] * s.v)
}

/// Soft-impact oscillator parameters (nondimensional).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpactParams {
    pub zeta: f64,
    /// Gap between the mass and the secondary spring.
    pub e: f64,
    /// Forcing amplitude; the forcing acceleration is `a w^2 sin(w tau)`.
    pub a: f64,
    /// Secondary-to-primary stiffness ratio.
    pub beta: f64,
    pub omega: f64,
}

impl ImpactParams {
    /// The coexistence point with a period-2 and a period-5 attractor.
    pub const fn reference() -> Self {
        Self { zeta: 0.01, e: 1.26, a: 0.7, beta: 28.0, omega: 0.85 }
    }

    /// The point with three coexisting attractors (two period-7, one period-3).
    pub const fn three_attractor() -> Self {
        Self { zeta: 0.01, e: 1.28, a: 0.49, beta: 28.0, omega: 0.8528 }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.zeta, self.e, self.a, self.beta, self.omega];
        if all.iter().any(|p| !p.is_finite()) {
            return Err(Error::domain("impact parameters must be finite"));
        }
        if self.e <= 0.0 {
            return Err(Error::domain(format!("gap e must be positive, got {}", self.e)));
        }
        if self.beta < 0.0 {
            return Err(Error::domain(format!("stiffness ratio beta must be >= 0, got {}", self.beta)));
        }
        if self.omega <= 0.0 {
            return Err(Error::domain(format!("forcing frequency must be positive, got {}", self.omega)));
        }
        Ok(())
    }
}

/// Duffing oscillator parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DuffingParams {
    pub gamma: f64,
    pub omega: f64,
    /// Linear damping.
    pub p1: f64,
    /// Cubic stiffness.
    pub p2: f64,
}

impl DuffingParams {
    pub const fn reference() -> Self {
        Self { gamma: 1.9, omega: 1.2, p1: 0.9, p2: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.gamma, self.omega, self.p1, self.p2];
        if all.iter().any(|p| !p.is_finite()) {
            return Err(Error::domain("Duffing parameters must be finite"));
        }
        if self.omega <= 0.0 {
            return Err(Error::domain(format!("forcing frequency must be positive, got {}", self.omega)));
        }
        Ok(())
    }
}

/// Where the scalar control enters the vector field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Channel {
    /// `u` added to the acceleration (soft impact).
    AdditiveForce,
    /// `a -> a + u` (soft impact).
    ForcingAmplitude,
    /// `e -> e + u` (soft impact).
    Gap,
    /// `p2 -> p2 + u` (Duffing).
    CubicStiffness,
}

impl Channel {
    /// True when the control enters linearly with a constant coefficient.
    pub fn is_additive(self) -> bool {
        matches!(self, Channel::AdditiveForce)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Model {
    SoftImpact(ImpactParams),
    Duffing(DuffingParams),
}

/// Scalar parameters addressable by continuation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Param {
    Zeta,
    E,
    A,
    Beta,
    Omega,
    Gamma,
    P1,
    P2,
}

impl Param {
    pub fn name(self) -> &'static str {
        match self {
            Param::Zeta => "zeta",
            Param::E => "e",
            Param::A => "a",
            Param::Beta => "beta",
            Param::Omega => "omega",
            Param::Gamma => "gamma",
            Param::P1 => "p1",
            Param::P2 => "p2",
        }
    }
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Param {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "zeta" => Param::Zeta,
            "e" => Param::E,
            "a" => Param::A,
            "beta" => Param::Beta,
            "omega" => Param::Omega,
            "gamma" => Param::Gamma,
            "p1" => Param::P1,
            "p2" => Param::P2,
            other => return Err(Error::config(format!("unknown parameter `{other}`"))),
        })
    }
}

/// Partial derivatives of the vector field at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Partials {
    pub du: State,
    pub dy: Mat2,
    pub dtau: State,
    /// The point was within [`SURFACE_TOL`] of the switching surface; the
    /// below-surface branch was used.
    pub on_surface: bool,
}

/// A forced oscillator with a designated control channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SystemRepr", into = "SystemRepr")]
pub struct System {
    model: Model,
    channel: Channel,
    period: f64,
}

#[derive(Serialize, Deserialize)]
struct SystemRepr {
    model: Model,
    channel: Channel,
}

impl TryFrom<SystemRepr> for System {
    type Error = Error;
    fn try_from(r: SystemRepr) -> Result<Self> {
        System::new(r.model, r.channel)
    }
}

impl From<System> for SystemRepr {
    fn from(s: System) -> Self {
        SystemRepr { model: s.model, channel: s.channel }
    }
}

impl System {
    pub fn new(model: Model, channel: Channel) -> Result<Self> {
        match (&model, channel) {
            (Model::SoftImpact(p), Channel::AdditiveForce | Channel::ForcingAmplitude | Channel::Gap) => {
                p.validate()?
            }
            (Model::Duffing(p), Channel::CubicStiffness) => p.validate()?,
            (Model::SoftImpact(_), ch) => {
                return Err(Error::config(format!("channel {ch:?} is not available on the soft-impact oscillator")))
            }
            (Model::Duffing(_), ch) => {
                return Err(Error::config(format!("channel {ch:?} is not available on the Duffing oscillator")))
            }
        }
        let omega = match model {
            Model::SoftImpact(p) => p.omega,
            Model::Duffing(p) => p.omega,
        };
        Ok(Self { model, channel, period: TAU / omega })
    }

    pub fn soft_impact(params: ImpactParams, channel: Channel) -> Result<Self> {
        Self::new(Model::SoftImpact(params), channel)
    }

    pub fn duffing(params: DuffingParams) -> Result<Self> {
        Self::new(Model::Duffing(params), Channel::CubicStiffness)
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn channel(&self) -> Channel {
        self.channel
    }

    pub fn is_impact(&self) -> bool {
        matches!(self.model, Model::SoftImpact(_))
    }

    /// Forcing period `2 pi / omega`.
    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn omega(&self) -> f64 {
        match self.model {
            Model::SoftImpact(p) => p.omega,
            Model::Duffing(p) => p.omega,
        }
    }

    pub fn with_channel(&self, channel: Channel) -> Result<Self> {
        Self::new(self.model, channel)
    }

    pub fn param(&self, param: Param) -> Result<f64> {
        let value = match (&self.model, param) {
            (Model::SoftImpact(p), Param::Zeta) => p.zeta,
            (Model::SoftImpact(p), Param::E) => p.e,
            (Model::SoftImpact(p), Param::A) => p.a,
            (Model::SoftImpact(p), Param::Beta) => p.beta,
            (Model::SoftImpact(p), Param::Omega) => p.omega,
            (Model::Duffing(p), Param::Gamma) => p.gamma,
            (Model::Duffing(p), Param::Omega) => p.omega,
            (Model::Duffing(p), Param::P1) => p.p1,
            (Model::Duffing(p), Param::P2) => p.p2,
            (_, param) => return Err(Error::config(format!("parameter `{param}` does not belong to this system"))),
        };
        Ok(value)
    }

    /// Copy of the system with one parameter replaced.
    pub fn with_param(&self, param: Param, value: f64) -> Result<Self> {
        let mut model = self.model;
        match (&mut model, param) {
            (Model::SoftImpact(p), Param::Zeta) => p.zeta = value,
            (Model::SoftImpact(p), Param::E) => p.e = value,
            (Model::SoftImpact(p), Param::A) => p.a = value,
            (Model::SoftImpact(p), Param::Beta) => p.beta = value,
            (Model::SoftImpact(p), Param::Omega) => p.omega = value,
            (Model::Duffing(p), Param::Gamma) => p.gamma = value,
            (Model::Duffing(p), Param::Omega) => p.omega = value,
            (Model::Duffing(p), Param::P1) => p.p1 = value,
            (Model::Duffing(p), Param::P2) => p.p2 = value,
            (_, param) => return Err(Error::config(format!("parameter `{param}` does not belong to this system"))),
        }
        Self::new(model, self.channel)
    }

    /// Effective gap `e + u` for the soft-impact system; `None` for Duffing
    /// and for a vanishing secondary stiffness, where nothing switches.
    pub fn surface(&self, u: f64) -> Option<f64> {
        match self.model {
            Model::SoftImpact(p) if p.beta == 0.0 => None,
            Model::SoftImpact(p) => Some(if self.channel == Channel::Gap { p.e + u } else { p.e }),
            Model::Duffing(_) => None,
        }
    }

    /// Vector field with the Heaviside factor evaluated at `y`.
    pub fn rhs(&self, tau: f64, y: State, u: f64) -> State {
        let contact = self.surface(u).is_some_and(|e| y.x - e > 0.0);
        self.rhs_on_branch(tau, y, u, contact)
    }

    /// Vector field with the secondary spring forced on (`contact`) or off.
    ///
    /// Each branch is smooth on the whole plane; the integrator uses this to
    /// hold the branch fixed inside a sub-step.
    pub fn rhs_on_branch(&self, tau: f64, y: State, u: f64, contact: bool) -> State {
        match self.model {
            Model::SoftImpact(p) => {
                let (amp, gap, add) = match self.channel {
                    Channel::AdditiveForce => (p.a, p.e, u),
                    Channel::ForcingAmplitude => (p.a + u, p.e, 0.0),
                    Channel::Gap => (p.a, p.e + u, 0.0),
                    Channel::CubicStiffness => unreachable!("validated in System::new"),
                };
                let w = p.omega;
                let spring = if contact { p.beta * (y.x - gap) } else { 0.0 };
                let acc = amp * w * w * (w * tau).sin() - y.x - 2.0 * p.zeta * y.v - spring + add;
                State::new(y.v, acc)
            }
            Model::Duffing(p) => {
                let x3 = y.x * y.x * y.x;
                let acc = p.gamma * (p.omega * tau).sin() + y.x - p.p1 * y.v - (p.p2 + u) * x3;
                State::new(y.v, acc)
            }
        }
    }

    /// Analytic partials of the vector field with respect to `u`, `Y` and `tau`.
    ///
    /// The Heaviside factor is held locally constant; within [`SURFACE_TOL`]
    /// of the surface the below-surface branch is used and `on_surface` set.
    pub fn partials(&self, tau: f64, y: State, u: f64) -> Partials {
        match self.model {
            Model::SoftImpact(p) => {
                let gap = self.surface(u).unwrap_or(p.e);
                let s = y.x - gap;
                let on_surface = s.abs() < SURFACE_TOL;
                let h = if !on_surface && s > 0.0 { 1.0 } else { 0.0 };
                let w = p.omega;
                let (amp, du) = match self.channel {
                    Channel::AdditiveForce => (p.a, State::new(0.0, 1.0)),
                    Channel::ForcingAmplitude => (p.a + u, State::new(0.0, w * w * (w * tau).sin())),
                    Channel::Gap => (p.a, State::new(0.0, p.beta * h)),
                    Channel::CubicStiffness => unreachable!("validated in System::new"),
                };
                Partials {
                    du,
                    dy: [[0.0, 1.0], [-1.0 - p.beta * h, -2.0 * p.zeta]],
                    dtau: State::new(0.0, amp * w * w * w * (w * tau).cos()),
                    on_surface,
                }
            }
            Model::Duffing(p) => {
                let x2 = y.x * y.x;
                Partials {
                    du: State::new(0.0, -x2 * y.x),
                    dy: [[0.0, 1.0], [1.0 - 3.0 * (p.p2 + u) * x2, -p.p1]],
                    dtau: State::new(0.0, p.gamma * p.omega * (p.omega * tau).cos()),
                    on_surface: false,
                }
            }
        }
    }
}

/// Dimensional soft-impact oscillator parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    /// Mass.
    pub m: f64,
    /// Primary spring stiffness.
    pub k1: f64,
    /// Secondary spring stiffness.
    pub k2: f64,
    /// Viscous damping.
    pub c: f64,
    /// Gap.
    pub g: f64,
    /// Forcing displacement amplitude.
    pub amplitude: f64,
    /// Forcing angular frequency.
    pub big_omega: f64,
    /// Reference length.
    pub y0: f64,
}

/// Scale a dimensional soft-impact oscillator by its natural frequency
/// `sqrt(k1/m)` and the reference length `y0`.
pub fn nondimensionalize(p: &PhysicalParams) -> Result<ImpactParams> {
    for (name, value) in [("mass", p.m), ("primary stiffness", p.k1), ("reference length", p.y0)] {
        if !(value > 0.0) || !value.is_finite() {
            return Err(Error::domain(format!("{name} must be positive, got {value}")));
        }
    }
    let wn = (p.k1 / p.m).sqrt();
    Ok(ImpactParams {
        zeta: p.c / (2.0 * p.m * wn),
        e: p.g / p.y0,
        a: p.amplitude / p.y0,
        beta: p.k2 / p.k1,
        omega: p.big_omega / wn,
    })
}
