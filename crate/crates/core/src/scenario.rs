//! Scenario files: a TOML description of one experiment, its execution into
//! CSV/JSON artifacts, and the manifest that makes a run re-creatable.

mod builtin;

pub use builtin::{builtin, builtins, Builtin};

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::attractor::{self, basin_grid, Fingerprint, GridSpec, SettleOptions};
use crate::continuation::{
    refine_all, shoot, sweep, Branch, trace_codim1_region, EventKind, Measure, RegionSpec, ShootOptions, Stepping,
    SweepOptions,
};
use crate::control::{
    pinned_pairing, run_switch, theorem_residual, Alignment, ControlBounds, OrbitTable, StateTerm, SwitchConfig,
    DEG_TOL,
};
use crate::dynamics::{Channel, DuffingParams, ImpactParams, Param, State, System};
use crate::error::Error;
use crate::integrator::{integrate, StepSpec};
use crate::output::{sha256_hex, to_json, write_atomic};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{origin}:{line}:{column}: {message}")]
    Parse { origin: String, line: usize, column: usize, message: String },

    #[error("invalid scenario: {0}")]
    Invalid(String),

    #[error("{operation} failed: {source}")]
    Numerical {
        operation: &'static str,
        #[source]
        source: Error,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("verification failed: {0}")]
    Mismatch(String),
}

impl ScenarioError {
    /// Process exit status for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            ScenarioError::Mismatch(_) => 1,
            ScenarioError::Parse { .. } | ScenarioError::Invalid(_) => 2,
            ScenarioError::Numerical { .. } | ScenarioError::Io { .. } => 3,
        }
    }
}

type SResult<T> = std::result::Result<T, ScenarioError>;

fn numerical(operation: &'static str) -> impl FnOnce(Error) -> ScenarioError {
    move |source| match source {
        Error::Config(m) | Error::Domain(m) => ScenarioError::Invalid(format!("{operation}: {m}")),
        source => ScenarioError::Numerical { operation, source },
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ScenarioError + '_ {
    move |source| ScenarioError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Action {
    Simulate,
    Basin,
    Switch,
    Sweep,
    Region,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Meta {
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// Label of the plot this scenario produces data for.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub figure: Option<String>,
    pub action: Action,
    /// Output directory used when none is given on the command line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum SystemConfig {
    SoftImpact(ImpactParams),
    Duffing(DuffingParams),
}

impl SystemConfig {
    pub fn build(&self, channel: Option<Channel>) -> crate::Result<System> {
        match *self {
            SystemConfig::SoftImpact(p) => System::soft_impact(p, channel.unwrap_or(Channel::AdditiveForce)),
            SystemConfig::Duffing(p) => {
                let sys = System::duffing(p)?;
                match channel {
                    Some(c) => sys.with_channel(c),
                    None => Ok(sys),
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SettleSection {
    pub n_transient: usize,
    pub n_sample: usize,
    pub match_tol: f64,
    pub p_max: usize,
}

impl Default for SettleSection {
    fn default() -> Self {
        let d = SettleOptions::default();
        Self { n_transient: d.n_transient, n_sample: d.n_sample, match_tol: d.match_tol, p_max: d.p_max }
    }
}

impl SettleSection {
    pub fn options(&self, step: StepSpec) -> SettleOptions {
        SettleOptions {
            n_transient: self.n_transient,
            n_sample: self.n_sample,
            match_tol: self.match_tol,
            p_max: self.p_max,
            step,
        }
    }
}

/// Where the attractor registry comes from: settling from listed initial
/// conditions (registry in that order) or discovery on a lattice (registry
/// ordered by period, then peak-to-peak amplitude).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttractorSection {
    pub lattice: usize,
    pub x_range: (f64, f64),
    pub v_range: (f64, f64),
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial: Option<Vec<[f64; 2]>>,
}

impl Default for AttractorSection {
    fn default() -> Self {
        Self { lattice: 8, x_range: (-2.0, 2.0), v_range: (-2.0, 2.0), initial: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub y0: [f64; 2],
    #[serde(default)]
    pub tau0: f64,
    pub tau1: f64,
    /// Write every `stride`-th sample.
    #[serde(default = "one")]
    pub stride: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchSection {
    pub channel: Channel,
    /// Registry indices visited in order; each consecutive pair is one switch.
    pub path: Vec<usize>,
    pub m1: f64,
    pub m2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_engage: Option<f64>,
    #[serde(default = "default_max_periods")]
    pub max_periods: usize,
    #[serde(default = "default_verify_periods")]
    pub verify_periods: usize,
    #[serde(default = "default_deg_tol")]
    pub deg_tol: f64,
    #[serde(default)]
    pub state_term: StateTerm,
    #[serde(default)]
    pub alignment: Alignment,
    /// Per switch: the source and target cycle points facing each other at
    /// engagement. Overrides `alignment` and the start point.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairs: Option<Vec<[usize; 2]>>,
    #[serde(default = "default_trace_stride")]
    pub trace_stride: usize,
}

fn default_epsilon() -> f64 {
    1e-3
}
fn default_max_periods() -> usize {
    200
}
fn default_verify_periods() -> usize {
    50
}
fn default_deg_tol() -> f64 {
    DEG_TOL
}
fn default_trace_stride() -> usize {
    10
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NewtonSection {
    pub tol: f64,
    pub max_iter: usize,
    pub fd_delta: f64,
}

impl Default for NewtonSection {
    fn default() -> Self {
        let d = ShootOptions::default();
        Self { tol: d.tol, max_iter: d.max_iter, fd_delta: d.fd_delta }
    }
}

impl NewtonSection {
    fn options(&self, step: StepSpec) -> ShootOptions {
        ShootOptions { step, tol: self.tol, max_iter: self.max_iter, fd_delta: self.fd_delta }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub param: Param,
    /// Registry index of the starting orbit.
    pub attractor: usize,
    /// The branch is followed from the configured parameter value down to
    /// `range[0]` and up to `range[1]`.
    pub range: [f64; 2],
    pub ds: f64,
    #[serde(default = "default_min_ds")]
    pub min_ds: f64,
    #[serde(default = "default_max_points")]
    pub max_points: usize,
    #[serde(default)]
    pub stepping: Stepping,
    /// Event refinement tolerance in the parameter.
    #[serde(default = "default_refine_tol")]
    pub tol: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measure: Option<Measure>,
    #[serde(default)]
    pub newton: NewtonSection,
}

fn default_min_ds() -> f64 {
    1e-6
}
fn default_max_points() -> usize {
    2000
}
fn default_refine_tol() -> f64 {
    1e-8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSection {
    pub param1: Param,
    pub param1_span: f64,
    pub param2: Param,
    /// The scan runs from the configured value of `param2` to this one.
    pub param2_to: f64,
    #[serde(default = "default_slices")]
    pub slices: usize,
    pub kinds: Vec<EventKind>,
    pub attractor: usize,
    pub ds: f64,
    #[serde(default)]
    pub stepping: Stepping,
    #[serde(default = "default_region_tol")]
    pub tol: f64,
    #[serde(default)]
    pub endpoint_bisections: usize,
    /// `(param1, param2)` points reported as inside or outside the region.
    #[serde(default)]
    pub test_points: Vec<[f64; 2]>,
    #[serde(default)]
    pub newton: NewtonSection,
}

fn default_slices() -> usize {
    40
}
fn default_region_tol() -> f64 {
    1e-6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub scenario: Meta,
    pub system: SystemConfig,
    #[serde(default)]
    pub integrator: StepSpec,
    #[serde(default)]
    pub settle: SettleSection,
    #[serde(default)]
    pub attractors: AttractorSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basin: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub switch: Option<SwitchSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<RegionSection>,
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.chars().count(), |nl| before[nl + 1..].chars().count()) + 1;
    (line, column)
}

impl Scenario {
    /// Parse TOML; `origin` names the source in error messages.
    pub fn parse(text: &str, origin: &str) -> SResult<Self> {
        let sc: Scenario = toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map_or((1, 1), |s| line_column(text, s.start));
            ScenarioError::Parse { origin: origin.to_string(), line, column, message: e.message().trim().to_string() }
        })?;
        sc.check()?;
        Ok(sc)
    }

    pub fn from_file(path: &Path) -> SResult<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// The settings section of the chosen action is present, and no other.
    pub fn check(&self) -> SResult<()> {
        let present = [
            (Action::Simulate, self.simulate.is_some()),
            (Action::Basin, self.basin.is_some()),
            (Action::Switch, self.switch.is_some()),
            (Action::Sweep, self.sweep.is_some()),
            (Action::Region, self.region.is_some()),
        ];
        for (action, has) in present {
            let name = serde_json::to_value(action).expect("unit variant").as_str().unwrap_or_default().to_string();
            if action == self.scenario.action && !has {
                return Err(ScenarioError::Invalid(format!("action `{name}` needs a [{name}] section")));
            }
            if action != self.scenario.action && has {
                return Err(ScenarioError::Invalid(format!(
                    "section [{name}] does not belong to action `{}`",
                    serde_json::to_value(self.scenario.action).expect("unit variant").as_str().unwrap_or_default()
                )));
            }
        }
        if let Some(sw) = &self.switch {
            if sw.path.len() < 2 {
                return Err(ScenarioError::Invalid("switch path needs at least two attractors".into()));
            }
            if sw.pairs.as_ref().is_some_and(|p| p.len() != sw.path.len() - 1) {
                return Err(ScenarioError::Invalid("switch pairs need one entry per switch".into()));
            }
        }
        Ok(())
    }

    /// Copy with every default made explicit.
    pub fn resolved(&self) -> SResult<Self> {
        let mut sc = self.clone();
        if let Some(sw) = &mut sc.switch {
            if sw.tau_engage.is_none() {
                let sys = self.system.build(Some(sw.channel)).map_err(numerical("system"))?;
                sw.tau_engage = Some(80.0 * sys.period());
            }
        }
        if let Some(sw) = &mut sc.sweep {
            if sw.measure.is_none() {
                let sys = self.system.build(None).map_err(numerical("system"))?;
                sw.measure = Some(Measure::default_for(&sys));
            }
        }
        Ok(sc)
    }

    fn settle_options(&self) -> SettleOptions {
        self.settle.options(self.integrator)
    }
}

/// One output file, held in memory until the run succeeds.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub artifacts: Vec<Artifact>,
    pub summary: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputEntry {
    pub file: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub scenario: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub figure: Option<String>,
    /// The fully resolved scenario; re-running it reproduces the outputs.
    pub config: Scenario,
    pub outputs: Vec<OutputEntry>,
    pub summary: Value,
}

fn csv_artifact(name: impl Into<String>, write: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> SResult<Artifact> {
    let name = name.into();
    let mut bytes = Vec::new();
    write(&mut bytes).map_err(io_err(Path::new(&name)))?;
    Ok(Artifact { name, bytes })
}

fn json_artifact<T: Serialize + ?Sized>(name: &str, value: &T) -> SResult<Artifact> {
    let text = to_json(value).map_err(|e| ScenarioError::Invalid(format!("serializing {name}: {e}")))?;
    Ok(Artifact { name: name.to_string(), bytes: text.into_bytes() })
}

fn registry(sc: &Scenario, sys: &System) -> SResult<Vec<Fingerprint>> {
    let opts = sc.settle_options();
    let a = &sc.attractors;
    let reg = match &a.initial {
        Some(ics) => ics
            .iter()
            .map(|&[x, v]| attractor::settle(sys, State::new(x, v), &opts))
            .collect::<crate::Result<Vec<_>>>()
            .map_err(numerical("settle"))?,
        None => attractor::discover(sys, &attractor::lattice(a.x_range, a.v_range, a.lattice), &opts)
            .map_err(numerical("attractor discovery"))?,
    };
    if let Some(k) = reg.iter().position(|f| f.period_multiple().is_none()) {
        return Err(ScenarioError::Numerical {
            operation: "settle",
            source: Error::Domain(format!("initial condition {k} did not settle onto a periodic attractor")),
        });
    }
    Ok(reg)
}

fn pick(reg: &[Fingerprint], k: usize) -> SResult<&Fingerprint> {
    reg.get(k).ok_or_else(|| {
        ScenarioError::Invalid(format!("attractor index {k} not found; the registry holds {} attractors", reg.len()))
    })
}

fn registry_json(reg: &[Fingerprint]) -> Value {
    Value::Array(
        reg.iter()
            .enumerate()
            .map(|(k, f)| {
                json!({
                    "index": k,
                    "tag": f.tag(),
                    "period": f.period_multiple(),
                    "impacts_per_period": f.impacts_per_period,
                    "peak_to_peak": f.peak_to_peak,
                    "contact_time": f.contact_time,
                    "points": f.poincare_points.iter().map(|p| [p.x, p.v]).collect::<Vec<_>>(),
                })
            })
            .collect(),
    )
}

/// Run a scenario and return its artifacts without touching the disk.
pub fn execute(sc: &Scenario) -> SResult<RunOutput> {
    sc.check()?;
    match sc.scenario.action {
        Action::Simulate => run_simulate(sc),
        Action::Basin => run_basin(sc),
        Action::Switch => run_switches(sc),
        Action::Sweep => run_sweep(sc),
        Action::Region => run_region(sc),
    }
}

fn run_simulate(sc: &Scenario) -> SResult<RunOutput> {
    let s = sc.simulate.as_ref().expect("checked");
    if s.stride == 0 {
        return Err(ScenarioError::Invalid("stride must be positive".into()));
    }
    let sys = sc.system.build(None).map_err(numerical("system"))?;
    let traj = integrate(&sys, State::new(s.y0[0], s.y0[1]), s.tau0, s.tau1, &sc.integrator, |_| 0.0)
        .map_err(numerical("integrate"))?;
    let thinned = crate::integrator::Trajectory {
        times: traj.times.iter().step_by(s.stride).copied().collect(),
        states: traj.states.iter().step_by(s.stride).copied().collect(),
        controls: traj.controls.iter().step_by(s.stride).copied().collect(),
    };
    let end = *traj.states.last().expect("non-empty trajectory");
    Ok(RunOutput {
        artifacts: vec![csv_artifact("trajectory.csv", |w| thinned.write_csv(w))?],
        summary: json!({ "samples": thinned.times.len(), "final_state": [end.x, end.v] }),
    })
}

fn run_basin(sc: &Scenario) -> SResult<RunOutput> {
    let grid = sc.basin.as_ref().expect("checked");
    let sys = sc.system.build(None).map_err(numerical("system"))?;
    let reg = registry(sc, &sys)?;
    let basin = basin_grid(&sys, grid, &reg, &sc.settle_options()).map_err(numerical("basin"))?;
    let counts = basin.counts();
    let summary = json!({
        "attractors": reg.iter().map(|f| f.tag()).collect::<Vec<_>>(),
        "counts": counts,
        "unclassified": basin.unclassified(),
    });
    let details = json!({ "registry": registry_json(&reg), "counts": counts, "unclassified": basin.unclassified() });
    Ok(RunOutput {
        artifacts: vec![csv_artifact("basin.csv", |w| basin.write_csv(w))?, json_artifact("attractors.json", &details)?],
        summary,
    })
}

fn run_switches(sc: &Scenario) -> SResult<RunOutput> {
    let sc = sc.resolved()?;
    let sw = sc.switch.as_ref().expect("checked");
    let sys = sc.system.build(Some(sw.channel)).map_err(numerical("system"))?;
    let reg = registry(&sc, &sys)?;
    let cfg = SwitchConfig {
        bounds: ControlBounds::new(sw.m1, sw.m2).map_err(numerical("control bounds"))?,
        step: sc.integrator,
        epsilon: sw.epsilon,
        tau_engage: sw.tau_engage,
        max_periods: sw.max_periods,
        verify_periods: sw.verify_periods,
        deg_tol: sw.deg_tol,
        state_term: sw.state_term,
        alignment: sw.alignment,
    };
    if sw.trace_stride == 0 {
        return Err(ScenarioError::Invalid("trace_stride must be positive".into()));
    }
    let engage_periods = (cfg.tau_engage.expect("resolved") / sys.period()).round() as usize;
    let mut artifacts = Vec::new();
    let mut legs = Vec::new();
    let mut summary = Vec::new();
    for (k, leg) in sw.path.windows(2).enumerate() {
        let (src, tgt) = (pick(&reg, leg[0])?, pick(&reg, leg[1])?);
        let pt = tgt.poincare_points.len();
        let table = OrbitTable::build(&sys, tgt.anchor(), pt, sc.integrator, sc.settle.match_tol.max(1e-6))
            .map_err(numerical("target orbit table"))?;
        let (start, cfg) = match &sw.pairs {
            Some(pairs) => {
                let [a, b] = pairs[k];
                let (start, alignment) =
                    pinned_pairing(&src.poincare_points, pt, engage_periods, (a, b)).map_err(numerical("pairing"))?;
                (start, SwitchConfig { alignment, ..cfg })
            }
            None => (src.anchor(), cfg),
        };
        let res = run_switch(&sys, start, &table, &cfg).map_err(numerical("switch"))?;
        let theorem = theorem_residual(&res.history, res.step);
        let name = format!("switch-{k}-{}-to-{}.csv", leg[0], leg[1]);
        artifacts.push(csv_artifact(name.clone(), |w| res.write_csv(w, sw.trace_stride))?);
        summary.push(json!({
            "from": src.tag(),
            "to": tgt.tag(),
            "success": res.success,
            "tau_converged": res.tau_converged,
        }));
        legs.push(json!({
            "from": leg[0],
            "to": leg[1],
            "from_tag": src.tag(),
            "to_tag": tgt.tag(),
            "trace": name,
            "result": res,
            "theorem": theorem,
        }));
    }
    artifacts.push(json_artifact("switch.json", &json!({ "registry": registry_json(&reg), "switches": legs }))?);
    Ok(RunOutput { artifacts, summary: Value::Array(summary) })
}

fn start_orbit(sc: &Scenario, sys: &System, attractor: usize, param: Param, newton: &NewtonSection) -> SResult<crate::continuation::PeriodicOrbit> {
    let reg = registry(sc, sys)?;
    let fp = pick(&reg, attractor)?;
    let value = sys.param(param).map_err(numerical("parameter"))?;
    let p = fp.period_multiple().expect("registry holds periodic orbits");
    shoot(sys, fp.anchor(), p, value, &newton.options(sc.integrator)).map_err(numerical("shooting"))
}

fn run_sweep(sc: &Scenario) -> SResult<RunOutput> {
    let sc = sc.resolved()?;
    let s = sc.sweep.as_ref().expect("checked");
    let sys = sc.system.build(None).map_err(numerical("system"))?;
    let start = start_orbit(&sc, &sys, s.attractor, s.param, &s.newton)?;
    let opts = SweepOptions {
        ds: s.ds,
        min_ds: s.min_ds,
        max_points: s.max_points,
        stepping: s.stepping,
        shoot: s.newton.options(sc.integrator),
        ..SweepOptions::default()
    };
    let [lo, hi] = s.range;
    if !(lo <= start.param && start.param <= hi) {
        return Err(ScenarioError::Invalid(format!(
            "sweep range [{lo}, {hi}] does not contain the configured {} = {}",
            s.param, start.param
        )));
    }
    let leg = |to: f64| sweep(&sys, s.param, &start, &SweepOptions { to, ..opts }).map_err(numerical("sweep"));
    let mut branch = Branch::join(leg(lo)?, leg(hi)?).map_err(numerical("sweep"))?;
    let refined = refine_all(&mut branch, s.tol, &opts.shoot).map_err(numerical("event refinement"))?;
    let measure = s.measure.expect("resolved");
    let events: Vec<Value> = refined
        .iter()
        .map(|r| {
            json!({
                "kind": r.event.kind,
                "graze": r.event.graze,
                "bracket": [r.event.bracket.0, r.event.bracket.1],
                "estimate": r.event.estimate,
                "value": r.param,
                "indicator": r.indicator,
                "multipliers": r.orbit.multipliers,
                "anchor": [r.orbit.anchor.x, r.orbit.anchor.v],
                "bisections": r.iterations,
            })
        })
        .collect();
    let summary = json!({
        "points": branch.points.len(),
        "stop": branch.stop,
        "events": refined.iter().map(|r| json!({ "kind": r.event.kind, "value": r.param })).collect::<Vec<_>>(),
    });
    let doc = json!({
        "param": s.param,
        "measure": measure,
        "period_multiple": start.p,
        "reference_impacts": branch.reference_impacts,
        "stop": branch.stop,
        "events": events,
    });
    Ok(RunOutput {
        artifacts: vec![csv_artifact("branch.csv", |w| branch.write_csv(w, measure))?, json_artifact("events.json", &doc)?],
        summary,
    })
}

fn run_region(sc: &Scenario) -> SResult<RunOutput> {
    let r = sc.region.as_ref().expect("checked");
    let sys = sc.system.build(None).map_err(numerical("system"))?;
    let seed = start_orbit(sc, &sys, r.attractor, r.param1, &r.newton)?;
    let p2_from = sys.param(r.param2).map_err(numerical("parameter"))?;
    let spec = RegionSpec {
        param1: r.param1,
        param1_seed: seed.param,
        param1_span: r.param1_span,
        param2: r.param2,
        param2_range: (p2_from, r.param2_to),
        slices: r.slices,
        kinds: r.kinds.clone(),
        tol: r.tol,
        endpoint_bisections: r.endpoint_bisections,
    };
    let opts = SweepOptions { ds: r.ds, stepping: r.stepping, shoot: r.newton.options(sc.integrator), ..SweepOptions::default() };
    let locus = trace_codim1_region(&sys, &seed, &spec, &opts).map_err(numerical("region trace"))?;
    let tests: Vec<Value> = r
        .test_points
        .iter()
        .map(|&[p1, p2]| json!({ "point": [p1, p2], "inside": locus.contains(p1, p2) }))
        .collect();
    let summary = json!({
        "slices": locus.slices.len(),
        "truncated_at": locus.truncated_at,
        "endpoint": locus.endpoint.map(|(a, b)| [a, b]),
        "test_points": tests,
    });
    let doc = json!({
        "slices": locus.slices,
        "truncated_at": locus.truncated_at,
        "truncation": locus.truncation,
        "endpoint": locus.endpoint.map(|(a, b)| [a, b]),
        "test_points": tests,
    });
    Ok(RunOutput {
        artifacts: vec![csv_artifact("locus.csv", |w| locus.write_csv(w))?, json_artifact("region.json", &doc)?],
        summary,
    })
}

/// Run `sc` and write its artifacts and manifest into `dir`.
pub fn run_to_dir(sc: &Scenario, dir: &Path) -> SResult<Manifest> {
    let config = sc.resolved()?;
    let out = execute(&config)?;
    let mut outputs = Vec::new();
    for a in &out.artifacts {
        let path = dir.join(&a.name);
        write_atomic(&path, &a.bytes).map_err(io_err(&path))?;
        outputs.push(OutputEntry { file: a.name.clone(), sha256: sha256_hex(&a.bytes), bytes: a.bytes.len() });
    }
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        scenario: config.scenario.name.clone(),
        figure: config.scenario.figure.clone(),
        config,
        outputs,
        summary: out.summary,
    };
    let path = dir.join(MANIFEST);
    let text = to_json(&manifest).map_err(|e| ScenarioError::Invalid(format!("serializing manifest: {e}")))?;
    write_atomic(&path, text.as_bytes()).map_err(io_err(&path))?;
    Ok(manifest)
}

pub fn read_manifest(path: &Path) -> SResult<Manifest> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| ScenarioError::Parse {
        origin: path.display().to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

/// Outcome of re-running a manifest: recorded and recomputed digests per file.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub files: BTreeMap<String, (String, Option<String>)>,
}

impl VerifyReport {
    pub fn mismatches(&self) -> Vec<&str> {
        self.files
            .iter()
            .filter(|(_, (want, got))| got.as_deref() != Some(want.as_str()))
            .map(|(f, _)| f.as_str())
            .collect()
    }
}

/// Re-run the configuration recorded in a manifest and compare every output
/// byte for byte (by digest).
pub fn verify_manifest(path: &Path) -> SResult<VerifyReport> {
    let manifest = read_manifest(path)?;
    let out = execute(&manifest.config)?;
    let produced: BTreeMap<&str, String> = out.artifacts.iter().map(|a| (a.name.as_str(), sha256_hex(&a.bytes))).collect();
    let files = manifest
        .outputs
        .iter()
        .map(|o| (o.file.clone(), (o.sha256.clone(), produced.get(o.file.as_str()).cloned())))
        .collect();
    let report = VerifyReport { files };
    let bad = report.mismatches();
    if bad.is_empty() {
        Ok(report)
    } else {
        Err(ScenarioError::Mismatch(format!("outputs differ: {}", bad.join(", "))))
    }
}
