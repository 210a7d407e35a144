//! Acceptance runner: one PASS/FAIL line per criterion, followed by
//! indented details. Exits non-zero if any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use serde_json::Value;
use switchlab::attractor::{discover, lattice, Fingerprint, SettleOptions};
use switchlab::scenario::{execute, run_to_dir, verify_manifest, Scenario, MANIFEST};
use switchlab::{DuffingParams, ImpactParams, StepSpec, System};

struct Outcome {
    passed: bool,
    summary: String,
    details: Vec<String>,
}

impl Outcome {
    fn new(passed: bool, summary: impl Into<String>) -> Self {
        Self { passed, summary: summary.into(), details: Vec::new() }
    }

    fn detail(mut self, line: impl Into<String>) -> Self {
        self.details.push(line.into());
        self
    }
}

fn report(id: &str, title: &str, gating: bool, run: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|payload| {
        let msg = payload
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| payload.downcast_ref::<String>().cloned())
            .unwrap_or_default();
        Outcome::new(false, format!("panicked: {msg}"))
    });
    let tag = match (outcome.passed, gating) {
        (true, _) => "PASS",
        (false, true) => "FAIL",
        (false, false) => "MISS",
    };
    println!("{tag} [{id}] {title}: {} ({:.1} s)", outcome.summary, start.elapsed().as_secs_f64());
    for d in &outcome.details {
        println!("       {d}");
    }
    outcome.passed || !gating
}

fn tags(reg: &[Fingerprint]) -> Vec<String> {
    reg.iter().map(|f| format!("{} (ptp {:.4})", f.tag(), f.peak_to_peak)).collect()
}

fn impact(params: ImpactParams) -> System {
    System::soft_impact(params, switchlab::Channel::AdditiveForce).unwrap()
}

fn coexistence() -> Outcome {
    let sys = impact(ImpactParams::reference());
    let ics = lattice((-2.0, 2.0), (-2.0, 2.0), 10);
    let start = Instant::now();
    let reg = discover(&sys, &ics, &SettleOptions::default()).unwrap();
    let elapsed = start.elapsed();
    let found: Vec<String> = reg.iter().map(|f| f.tag()).collect();
    let ok = found == ["P2/1i", "P5/3i"] && elapsed < Duration::from_secs(60);
    Outcome::new(ok, format!("{} initial conditions settle onto {found:?} in {:.1} s", ics.len(), elapsed.as_secs_f64()))
        .detail(format!("registry: {:?}", tags(&reg)))
}

fn three_attractors() -> Outcome {
    let sys = impact(ImpactParams::three_attractor());
    let ics = lattice((-2.0, 2.0), (-2.0, 2.0), 10);
    let start = Instant::now();
    let reg = discover(&sys, &ics, &SettleOptions::default()).unwrap();
    let elapsed = start.elapsed();
    let p7: Vec<&Fingerprint> = reg.iter().filter(|f| f.period_multiple() == Some(7)).collect();
    let p3 = reg.iter().filter(|f| f.period_multiple() == Some(3)).count();
    let distinct = p7.len() == 2 && (p7[0].peak_to_peak - p7[1].peak_to_peak).abs() > 1e-3;
    let ok = reg.len() == 3 && p3 == 1 && distinct && elapsed < Duration::from_secs(120);
    Outcome::new(ok, format!("{} attractors from {} initial conditions in {:.1} s", reg.len(), ics.len(), elapsed.as_secs_f64()))
        .detail(format!("registry: {:?}", tags(&reg)))
}

struct SwitchCase {
    scenario: &'static str,
    reference_times: &'static [Option<f64>],
}

const SWITCHES: [SwitchCase; 8] = [
    SwitchCase { scenario: "switch-p5-to-p2-linear", reference_times: &[Some(637.0)] },
    SwitchCase { scenario: "switch-p2-to-p5-linear", reference_times: &[Some(643.5)] },
    SwitchCase { scenario: "switch-p5-to-p2-amplitude", reference_times: &[Some(640.64)] },
    SwitchCase { scenario: "switch-p2-to-p5-amplitude", reference_times: &[Some(689.1)] },
    SwitchCase { scenario: "switch-p5-to-p2-gap", reference_times: &[Some(659.6)] },
    SwitchCase { scenario: "switch-p2-to-p5-gap", reference_times: &[Some(703.794)] },
    SwitchCase { scenario: "three-cycle-amp", reference_times: &[None, None, None] },
    SwitchCase { scenario: "duffing-switch", reference_times: &[Some(439.0), Some(440.246)] },
];

/// Bound checks gathered while running the switch suite.
#[derive(Default)]
struct BoundAudit {
    traces: usize,
    rows: usize,
    violations: Vec<String>,
}

fn switching_suite(audit: &mut BoundAudit) -> Outcome {
    let mut lines = Vec::new();
    let (mut legs, mut successes, mut within) = (0, 0, 0);
    for case in &SWITCHES {
        let (sc, out) = common::run_switch_builtin(case.scenario);
        audit.violations.extend(common::switch_bound_violations(&sc, &out));
        for a in out.artifacts.iter().filter(|a| a.name.ends_with(".csv")) {
            audit.traces += 1;
            audit.rows += a.bytes.iter().filter(|&&b| b == b'\n').count().saturating_sub(1);
        }
        let doc: Value = serde_json::from_slice(
            &out.artifacts.iter().find(|a| a.name == "switch.json").expect("switch.json").bytes,
        )
        .unwrap();
        let sw = sc.switch.as_ref().unwrap();
        for (k, leg) in doc["switches"].as_array().unwrap().iter().enumerate() {
            legs += 1;
            let r = &leg["result"];
            let success = r["success"].as_bool().unwrap();
            let periods = r["periods_to_converge"].as_f64();
            let verify = r["verify_max_distance"].as_f64();
            let meets = success
                && periods.is_some_and(|p| p <= sw.max_periods as f64)
                && verify.is_some_and(|d| d <= 10.0 * sw.epsilon);
            successes += usize::from(meets);
            let tau = r["tau_converged"].as_f64();
            let timing = match (tau, case.reference_times.get(k).copied().flatten()) {
                (Some(t), Some(reference)) => {
                    let close = (t - reference).abs() <= 10.0 * r["period"].as_f64().unwrap();
                    within += usize::from(close);
                    format!("tau {t:.2} vs reference {reference} ({:+.1}, {})", t - reference, if close { "within 10 T" } else { "outside 10 T" })
                }
                (Some(t), None) => format!("tau {t:.2}"),
                (None, _) => "not converged".to_string(),
            };
            lines.push(format!(
                "{} leg {k} #{} {} -> #{} {}: {} after {:.1} periods, verify max {:.2e}, {timing}",
                case.scenario,
                leg["from"],
                leg["from_tag"].as_str().unwrap(),
                leg["to"],
                leg["to_tag"].as_str().unwrap(),
                if meets { "converged" } else { "FAILED" },
                periods.unwrap_or(f64::NAN),
                verify.unwrap_or(f64::NAN),
            ));
        }
    }
    let mut o = Outcome::new(
        successes == legs,
        format!("{successes}/{legs} switches converge and stay converged; {within} of 8 timed legs within 10 periods of the reference time (not gating)"),
    );
    o.details = lines;
    o
}

fn sweep_events(name: &str) -> Vec<(String, f64)> {
    let out = execute(&common::builtin_scenario(name)).unwrap();
    out.summary["events"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| (e["kind"].as_str().unwrap().to_string(), e["value"].as_f64().unwrap()))
        .collect()
}

fn nearest(events: &[(String, f64)], kind: &str, target: f64) -> Option<f64> {
    events.iter().filter(|(k, _)| k == kind).map(|&(_, v)| v).min_by(|a, b| (a - target).abs().total_cmp(&(b - target).abs()))
}

fn bifurcations(region: &mut Option<Value>) -> Outcome {
    let start = Instant::now();
    let p2 = sweep_events("sweep-impact-p2");
    let p5 = sweep_events("sweep-impact-p5");
    let duffing = sweep_events("sweep-duffing");
    let checks = [
        ("PD1 (period-2 branch)", nearest(&p2, "period-doubling", 0.63111), 0.63111),
        ("GR1 (period-2 branch)", nearest(&p2, "grazing", 1.54462), 1.54462),
        ("PD2 (period-5 branch)", nearest(&p5, "period-doubling", 0.64564), 0.64564),
        ("GR2 (period-5 branch)", nearest(&p5, "grazing", 0.71258), 0.71258),
        ("Duffing fold F1", nearest(&duffing, "fold", 0.69494), 0.69494),
        ("Duffing fold F2", nearest(&duffing, "fold", 0.90352), 0.90352),
    ];
    let mut details = Vec::new();
    let mut ok = true;
    for (label, found, target) in checks {
        let pass = found.is_some_and(|v| (v - target).abs() < 1e-3);
        ok &= pass;
        details.push(match found {
            Some(v) => format!("{label}: {v:.7} vs {target} (|diff| {:.1e})", (v - target).abs()),
            None => format!("{label}: not found"),
        });
    }
    let summary = execute(&common::builtin_scenario("region-duffing")).unwrap().summary;
    let cusp = summary["endpoint"].as_array().map(|a| (a[0].as_f64().unwrap(), a[1].as_f64().unwrap()));
    let cusp_ok = cusp.is_some_and(|(p1, p2)| (p1 - 1.14902).abs() < 5e-2 && (p2 - 1.51194).abs() < 5e-2);
    ok &= cusp_ok;
    details.push(match cusp {
        Some((p1, p2)) => format!("cusp: ({p1:.5}, {p2:.5}) vs (1.14902, 1.51194) from {} slices", summary["slices"]),
        None => "cusp: fold window never closed".to_string(),
    });
    *region = Some(summary);
    let elapsed = start.elapsed();
    ok &= elapsed < Duration::from_secs(600);
    let mut o = Outcome::new(ok, format!("six refined events and the cusp in {:.0} s", elapsed.as_secs_f64()));
    o.details = details;
    o
}

fn stretch_fold() -> Outcome {
    let events = sweep_events("sweep-impact-p2-fold");
    let fold = nearest(&events, "fold", 1.54486);
    let ok = fold.is_some_and(|v| (v - 1.54486).abs() < 1e-3);
    Outcome::new(ok, match fold {
        Some(v) => format!("fold of the period-2 branch at a = {v:.7} vs 1.54486"),
        None => "no fold found on the period-2 branch".to_string(),
    })
}

fn region_membership(region: Option<Value>) -> Outcome {
    let mut details = Vec::new();
    let mut ok = true;
    for (label, e, a) in [("P1", 1.26, 0.68), ("P2", 2.05, 1.1), ("P3", 2.8, 1.5)] {
        let sys = impact(ImpactParams { e, a, ..ImpactParams::reference() });
        let reg = discover(&sys, &lattice((-2.0, 2.0), (-2.0, 2.0), 8), &SettleOptions::default()).unwrap();
        let found: Vec<String> = reg.iter().map(|f| f.tag()).collect();
        let both = found.iter().any(|t| t == "P2/1i") && found.iter().any(|t| t == "P5/3i");
        ok &= both;
        details.push(format!("{label} (a = {a}, e = {e}): {found:?}"));
    }

    let region = region.unwrap_or_else(|| execute(&common::builtin_scenario("region-duffing")).unwrap().summary);
    let outside = region["test_points"]
        .as_array()
        .unwrap()
        .iter()
        .find(|t| t["point"][0].as_f64() == Some(1.0) && t["point"][1].as_f64() == Some(1.6))
        .map(|t| !t["inside"].as_bool().unwrap());
    let sys = System::duffing(DuffingParams { p1: 1.0, p2: 1.6, ..DuffingParams::reference() }).unwrap();
    let opts = SettleOptions { step: StepSpec::with_h(0.001), ..SettleOptions::default() };
    let reg = discover(&sys, &lattice((-3.0, 3.0), (-3.0, 3.0), 10), &opts).unwrap();
    let single = reg.len() == 1;
    ok &= outside == Some(true) && single;
    details.push(format!(
        "Duffing (p1 = 1.0, p2 = 1.6): outside the computed fold region = {outside:?}; attractors {:?}",
        tags(&reg)
    ));
    let mut o = Outcome::new(ok, "coexistence at P1-P3 and a single attractor outside the Duffing fold region");
    o.details = details;
    o
}

fn properties(audit: &BoundAudit) -> Outcome {
    let mut details = Vec::new();
    let (errors, order) = common::rk4_order();
    let rk4_ok = (3.8..=4.2).contains(&order);
    details.push(format!("RK4 order {order:.3} from errors {:?}", errors.iter().map(|e| format!("{:.2e}", e.1)).collect::<Vec<_>>()));

    let bounds_ok = audit.traces > 0 && audit.violations.is_empty();
    details.push(format!(
        "control bounds: {} violations over {} logged steps in {} traces",
        audit.violations.len(),
        audit.rows,
        audit.traces
    ));
    details.extend(audit.violations.iter().take(5).cloned());

    let (points, slope) = common::residual_scaling();
    let residual_ok = slope >= 2.7;
    details.push(format!(
        "expansion residual slope {slope:.3} from {:?}",
        points.iter().map(|(h, r)| format!("h {h:.4}: {r:.2e}")).collect::<Vec<_>>()
    ));

    let cases = common::non_invasive();
    let quiet_ok = cases.iter().all(|(_, u, d, s)| *s && *u == 0.0 && *d < 1e-6);
    for (case, u, d, s) in &cases {
        details.push(format!("non-invasive {case}: max |u| {u:e}, max distance {d:.1e}, success {s}"));
    }

    let worst = common::partials_vs_fd(100, 7);
    let fd_ok = worst < 1e-6;
    details.push(format!("finite-difference partials at 100 points: worst relative error {worst:.1e}"));

    let passed = [rk4_ok, bounds_ok, residual_ok, quiet_ok, fd_ok];
    let mut o = Outcome::new(passed.iter().all(|&p| p), format!("{}/5 properties hold", passed.iter().filter(|&&p| p).count()));
    o.details = details;
    o
}

fn reduced_basin() -> Scenario {
    let mut sc = common::builtin_scenario("basin-impact-default");
    let grid = sc.basin.as_mut().unwrap();
    grid.nx = 12;
    grid.nv = 12;
    sc.attractors.lattice = 6;
    sc
}

fn determinism() -> Outcome {
    let cases: Vec<(String, Scenario)> = ["simulate-impact-reference", "switch-p5-to-p2-linear", "sweep-impact-p5"]
        .iter()
        .map(|n| (n.to_string(), common::builtin_scenario(n)))
        .chain(std::iter::once(("basin-impact-default (12x12)".to_string(), reduced_basin())))
        .collect();
    let mut details = Vec::new();
    let mut ok = true;
    for (name, sc) in cases {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let first = run_to_dir(&sc, a.path()).unwrap();
        run_to_dir(&sc, b.path()).unwrap();
        let identical = first.outputs.iter().all(|o| {
            std::fs::read(a.path().join(&o.file)).unwrap() == std::fs::read(b.path().join(&o.file)).unwrap()
        });
        let verified = verify_manifest(&a.path().join(MANIFEST)).is_ok();
        ok &= identical && verified;
        details.push(format!(
            "{name}: {} files byte-identical = {identical}, manifest re-run verified = {verified}",
            first.outputs.len()
        ));
    }
    let mut o = Outcome::new(ok, "repeated runs and manifest re-runs reproduce every output byte for byte");
    o.details = details;
    o
}

fn main() {
    let start = Instant::now();
    let mut audit = BoundAudit::default();
    let mut region = None;
    let results = [
        report("1", "two coexisting attractors at the reference point", true, coexistence),
        report("2", "three coexisting attractors", true, three_attractors),
        report("3", "switching suite", true, || switching_suite(&mut audit)),
        report("4", "bifurcation values and cusp", true, || bifurcations(&mut region)),
        report("4+", "fold of the period-2 branch (stretch)", false, stretch_fold),
        report("5", "region membership", true, || region_membership(region.take())),
        report("6", "property suite", true, || properties(&audit)),
        report("7", "determinism", true, determinism),
    ];
    let failed = results.iter().filter(|&&ok| !ok).count();
    println!("acceptance: {} of {} gating criteria passed in {:.0} s", 7 - failed, 7, start.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
