//! Checks shared by the property tests and the acceptance runner.
#![allow(dead_code)]

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use switchlab::attractor::{discover, lattice, settle, Fingerprint, SettleOptions};
use switchlab::control::{run_switch, ControlBounds, OrbitTable, SwitchConfig};
use switchlab::integrator::integrate;
use switchlab::scenario::{builtin, execute, RunOutput, Scenario};
use switchlab::{Channel, DuffingParams, ImpactParams, State, StepSpec, System};

/// `x'' = -x`: the soft-impact model with no damping, forcing or secondary spring.
pub fn harmonic() -> System {
    let p = ImpactParams { zeta: 0.0, e: 1.0, a: 0.0, beta: 0.0, omega: 1.0 };
    System::soft_impact(p, Channel::AdditiveForce).unwrap()
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (lx, ly): (Vec<f64>, Vec<f64>) = points.iter().map(|&(x, y)| (x.ln(), y.ln())).unzip();
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Global error of RK4 on the harmonic oscillator at `tau = 10` for
/// `h = 0.1, 0.05, 0.025`, and the fitted convergence order.
pub fn rk4_order() -> (Vec<(f64, f64)>, f64) {
    let sys = harmonic();
    let t1 = 10.0f64;
    let exact = State::new(t1.cos(), -t1.sin());
    let errors: Vec<(f64, f64)> = [0.1, 0.05, 0.025]
        .iter()
        .map(|&h| {
            let traj = integrate(&sys, State::new(1.0, 0.0), 0.0, t1, &StepSpec::with_h(h), |_| 0.0).unwrap();
            (h, (traj.last_state().unwrap() - exact).norm())
        })
        .collect();
    let slope = loglog_slope(&errors);
    (errors, slope)
}

fn systems_for_partials() -> Vec<System> {
    let r = ImpactParams::reference();
    vec![
        System::soft_impact(r, Channel::AdditiveForce).unwrap(),
        System::soft_impact(r, Channel::ForcingAmplitude).unwrap(),
        System::soft_impact(r, Channel::Gap).unwrap(),
        System::duffing(DuffingParams::reference()).unwrap(),
    ]
}

/// Largest relative disagreement between analytic partials and central
/// differences over `n` seeded random points, cycling through every
/// model/channel pair. Points closer than `1e-3` to the impact surface are
/// redrawn.
pub fn partials_vs_fd(n: usize, seed: u64) -> f64 {
    let systems = systems_for_partials();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = 1e-6;
    let rel = |fd: f64, an: f64| (fd - an).abs() / (1.0 + an.abs());
    let mut worst = 0.0f64;
    for k in 0..n {
        let sys = &systems[k % systems.len()];
        let (tau, y, u) = loop {
            let tau = rng.random_range(0.0..2.0 * sys.period());
            let y = State::new(rng.random_range(-2.5..2.5), rng.random_range(-3.0..3.0));
            let u = rng.random_range(-0.3..0.3);
            if sys.surface(u).is_none_or(|e| (y.x - e).abs() > 1e-3) {
                break (tau, y, u);
            }
        };
        let p = sys.partials(tau, y, u);
        let central = |f: &dyn Fn(f64) -> State| (f(d) - f(-d)) * (0.5 / d);
        let dx = central(&|s| sys.rhs(tau, y + State::new(s, 0.0), u));
        let dv = central(&|s| sys.rhs(tau, y + State::new(0.0, s), u));
        let dt = central(&|s| sys.rhs(tau + s, y, u));
        let du = central(&|s| sys.rhs(tau, y, u + s));
        let pairs = [
            (dx.x, p.dy[0][0]),
            (dx.v, p.dy[1][0]),
            (dv.x, p.dy[0][1]),
            (dv.v, p.dy[1][1]),
            (dt.x, p.dtau.x),
            (dt.v, p.dtau.v),
            (du.x, p.du.x),
            (du.v, p.du.v),
        ];
        for (fd, an) in pairs {
            worst = worst.max(rel(fd, an));
        }
    }
    worst
}

fn periodic(sys: &System, y0: State, h: f64) -> Fingerprint {
    let opts = SettleOptions { step: StepSpec::with_h(h), ..SettleOptions::default() };
    let fp = settle(sys, y0, &opts).unwrap();
    assert!(fp.period_multiple().is_some(), "{y0:?} did not settle at h = {h}");
    fp
}

/// Median per-step residual of the second-order expansion of `Delta` over
/// the first three controlled periods of a linear-channel P5 -> P2 switch,
/// for `h = 0.004, 0.002, 0.001`, and the fitted log-log slope.
pub fn residual_scaling() -> (Vec<(f64, f64)>, f64) {
    let sys = System::soft_impact(ImpactParams::reference(), Channel::AdditiveForce).unwrap();
    let reg = discover(&sys, &lattice((-2.0, 2.0), (-2.0, 2.0), 6), &SettleOptions::default()).unwrap();
    let p2 = reg.iter().find(|f| f.tag() == "P2/1i").expect("period-2 attractor").anchor();
    let p5 = reg.iter().find(|f| f.tag() == "P5/3i").expect("period-5 attractor").anchor();
    let points: Vec<(f64, f64)> = [0.004, 0.002, 0.001]
        .iter()
        .map(|&h| {
            let (src, tgt) = (periodic(&sys, p5, h), periodic(&sys, p2, h));
            let step = StepSpec::with_h(h);
            let table = OrbitTable::build(&sys, tgt.anchor(), tgt.poincare_points.len(), step, 1e-6).unwrap();
            let cfg = SwitchConfig {
                bounds: ControlBounds::new(5.0, 3.0).unwrap(),
                step,
                max_periods: 3,
                verify_periods: 0,
                ..SwitchConfig::default()
            };
            let res = run_switch(&sys, src.anchor(), &table, &cfg).unwrap();
            let th = switchlab::control::theorem_residual(&res.history, res.step);
            (res.step, th.step_residual_median)
        })
        .collect();
    let slope = loglog_slope(&points);
    (points, slope)
}

/// Start exactly on a target orbit and switch to it. Returns the case
/// label, the largest `|u|`, the largest distance over the run and the
/// success flag for each case.
pub fn non_invasive() -> Vec<(String, f64, f64, bool)> {
    let cases = [
        (System::soft_impact(ImpactParams::reference(), Channel::AdditiveForce).unwrap(), 0.002),
        (System::soft_impact(ImpactParams::reference(), Channel::Gap).unwrap(), 0.002),
        (System::duffing(DuffingParams::reference()).unwrap(), 0.001),
    ];
    cases
        .iter()
        .map(|(sys, h)| {
            let opts = SettleOptions { step: StepSpec::with_h(*h), ..SettleOptions::default() };
            let fp = settle(sys, State::new(0.0, 0.0), &opts).unwrap();
            let table = OrbitTable::build(sys, fp.anchor(), fp.poincare_points.len(), opts.step, 1e-6).unwrap();
            let cfg = SwitchConfig {
                bounds: ControlBounds::new(0.3, 5.0).unwrap(),
                step: opts.step,
                ..SwitchConfig::default()
            };
            let res = run_switch(sys, fp.anchor(), &table, &cfg).unwrap();
            let worst = res.trace.iter().map(|r| r.distance).fold(0.0, f64::max);
            (format!("{:?} {}", sys.channel(), fp.tag()), res.max_abs_u, worst, res.success)
        })
        .collect()
}

/// First violation of `|u| <= M1` or `|du| <= M2 dtau` in a switch trace
/// CSV (`tau,x,v,u,delta2norm`), if any.
pub fn bounds_violation(csv: &str, m1: f64, m2: f64) -> Option<String> {
    let mut prev: Option<(f64, f64)> = None;
    for (line_no, line) in csv.lines().enumerate().skip(1) {
        let cols: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        let (tau, u) = (cols[0], cols[3]);
        if u.abs() > m1 * (1.0 + 1e-12) {
            return Some(format!("line {}: |u| = {} > M1 = {m1}", line_no + 1, u.abs()));
        }
        if let Some((t0, u0)) = prev {
            let allowed = m2 * (tau - t0) * (1.0 + 1e-9) + 1e-14;
            if (u - u0).abs() > allowed {
                return Some(format!("line {}: |du| = {} > M2 dtau = {allowed}", line_no + 1, (u - u0).abs()));
            }
        }
        prev = Some((tau, u));
    }
    None
}

pub fn builtin_scenario(name: &str) -> Scenario {
    builtin(name).unwrap_or_else(|| panic!("built-in `{name}`")).scenario().unwrap()
}

/// Run a switch built-in with every step written to its trace CSVs.
pub fn run_switch_builtin(name: &str) -> (Scenario, RunOutput) {
    let mut sc = builtin_scenario(name);
    sc.switch.as_mut().expect("switch scenario").trace_stride = 1;
    let out = execute(&sc).unwrap();
    (sc, out)
}

/// Bound violations across every trace CSV of a switch run.
pub fn switch_bound_violations(sc: &Scenario, out: &RunOutput) -> Vec<String> {
    let sw = sc.switch.as_ref().unwrap();
    out.artifacts
        .iter()
        .filter(|a| a.name.ends_with(".csv"))
        .filter_map(|a| {
            let text = std::str::from_utf8(&a.bytes).unwrap();
            bounds_violation(text, sw.m1, sw.m2).map(|v| format!("{}: {v}", a.name))
        })
        .collect()
}
