use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use switchlab_ffi::*;

const REFERENCE: SlImpactParams = SlImpactParams { zeta: 0.01, e: 1.26, a: 0.7, beta: 28.0, omega: 0.85 };

fn last_error() -> String {
    let n = unsafe { sl_last_error_message(ptr::null_mut(), 0) };
    let mut buf = vec![0 as c_char; n.max(1)];
    unsafe { sl_last_error_message(buf.as_mut_ptr(), buf.len()) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn impact(channel: SlChannel) -> *mut SlSystem {
    let mut sys = ptr::null_mut();
    assert_eq!(unsafe { sl_system_soft_impact(&REFERENCE, channel, &mut sys) }, SlStatus::Ok);
    assert!(!sys.is_null());
    sys
}

#[test]
fn period_and_vector_field() {
    let sys = impact(SlChannel::AdditiveForce);
    let mut period = 0.0;
    assert_eq!(unsafe { sl_system_period(sys, &mut period) }, SlStatus::Ok);
    assert!((period - 2.0 * std::f64::consts::PI / 0.85).abs() < 1e-14);

    let mut f = SlState::default();
    assert_eq!(unsafe { sl_system_rhs(sys, 0.0, SlState { x: 0.5, v: 0.25 }, 1.0, &mut f) }, SlStatus::Ok);
    assert_eq!(f.x, 0.25);
    assert!((f.v - (-0.5 - 2.0 * 0.01 * 0.25 + 1.0)).abs() < 1e-15);
    unsafe { sl_system_free(sys) };

    let mut duffing = ptr::null_mut();
    let p = SlDuffingParams { gamma: 1.9, omega: 1.2, p1: 0.9, p2: 1.0 };
    assert_eq!(unsafe { sl_system_duffing(&p, &mut duffing) }, SlStatus::Ok);
    assert_eq!(unsafe { sl_system_rhs(duffing, 0.0, SlState { x: 1.0, v: 0.0 }, 0.0, &mut f) }, SlStatus::Ok);
    assert_eq!((f.x, f.v), (0.0, 0.0));
    unsafe { sl_system_free(duffing) };
}

#[test]
fn invalid_arguments_and_null_pointers() {
    let mut sys = ptr::null_mut();
    let bad = SlImpactParams { omega: 0.0, ..REFERENCE };
    assert_eq!(unsafe { sl_system_soft_impact(&bad, SlChannel::Gap, &mut sys) }, SlStatus::InvalidArgument);
    assert!(sys.is_null());
    assert!(last_error().contains("frequency"), "{}", last_error());

    let duffing_channel = unsafe { sl_system_soft_impact(&REFERENCE, SlChannel::CubicStiffness, &mut sys) };
    assert_eq!(duffing_channel, SlStatus::InvalidArgument);

    assert_eq!(unsafe { sl_system_soft_impact(ptr::null(), SlChannel::Gap, &mut sys) }, SlStatus::NullPointer);
    let mut period = 0.0;
    assert_eq!(unsafe { sl_system_period(ptr::null(), &mut period) }, SlStatus::NullPointer);
    unsafe { sl_system_free(ptr::null_mut()) };

    let ok = impact(SlChannel::AdditiveForce);
    assert_eq!(unsafe { sl_system_period(ok, &mut period) }, SlStatus::Ok);
    assert_eq!(unsafe { sl_last_error_message(ptr::null_mut(), 0) }, 0, "success clears the message");
    let mut out = SlState::default();
    let empty = unsafe { sl_integrate(ok, SlState::default(), 1.0, 1.0, 0.002, &mut out) };
    assert_eq!(empty, SlStatus::InvalidArgument);
    unsafe { sl_system_free(ok) };
}

#[test]
fn integrate_and_settle() {
    let sys = impact(SlChannel::AdditiveForce);
    let mut end = SlState::default();
    assert_eq!(unsafe { sl_integrate(sys, SlState { x: 0.1, v: 0.0 }, 0.0, 5.0, 0.002, &mut end) }, SlStatus::Ok);
    assert!(end.x.is_finite() && end.v.is_finite());

    let mut att = SlAttractor::default();
    assert_eq!(unsafe { sl_settle(sys, SlState { x: 0.0, v: 0.0 }, 0.002, &mut att) }, SlStatus::Ok);
    match att.period {
        2 => assert_eq!(att.impacts_per_period, 1),
        5 => assert_eq!(att.impacts_per_period, 3),
        p => panic!("unexpected period {p}"),
    }
    assert!(att.peak_to_peak > 0.0);
    unsafe { sl_system_free(sys) };
}

const SIMULATE: &str = r#"
[scenario]
name = "ffi-simulate"
action = "simulate"

[system]
model = "soft-impact"
zeta = 0.01
e = 1.26
a = 0.7
beta = 28.0
omega = 0.85

[simulate]
y0 = [0.0, 0.0]
tau1 = 2.0
"#;

fn run_name(run: *const SlRun, i: usize) -> String {
    let mut needed = 0usize;
    assert_eq!(unsafe { sl_run_output_name(run, i, ptr::null_mut(), 0, &mut needed) }, SlStatus::Ok);
    let mut buf = vec![0 as c_char; needed];
    assert_eq!(unsafe { sl_run_output_name(run, i, buf.as_mut_ptr(), buf.len(), ptr::null_mut()) }, SlStatus::Ok);
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap().to_string()
}

#[test]
fn scenario_run_and_verify() {
    let text = CString::new(SIMULATE).unwrap();
    let mut sc = ptr::null_mut();
    assert_eq!(unsafe { sl_scenario_parse(text.as_ptr(), &mut sc) }, SlStatus::Ok);

    let dir = tempfile::tempdir().unwrap();
    let dir_c = CString::new(dir.path().to_str().unwrap()).unwrap();
    let mut run = ptr::null_mut();
    assert_eq!(unsafe { sl_scenario_run(sc, dir_c.as_ptr(), &mut run) }, SlStatus::Ok);

    let mut count = 0usize;
    assert_eq!(unsafe { sl_run_output_count(run, &mut count) }, SlStatus::Ok);
    assert_eq!(count, 1);
    assert_eq!(run_name(run, 0), "trajectory.csv");
    let mut small = [0 as c_char; 4];
    let status = unsafe { sl_run_output_name(run, 0, small.as_mut_ptr(), small.len(), ptr::null_mut()) };
    assert_eq!(status, SlStatus::BufferTooSmall);
    assert_eq!(unsafe { sl_run_output_name(run, 5, small.as_mut_ptr(), 4, ptr::null_mut()) }, SlStatus::InvalidArgument);

    let mut needed = 0usize;
    assert_eq!(unsafe { sl_run_summary(run, ptr::null_mut(), 0, &mut needed) }, SlStatus::Ok);
    let mut buf = vec![0 as c_char; needed];
    assert_eq!(unsafe { sl_run_summary(run, buf.as_mut_ptr(), needed, ptr::null_mut()) }, SlStatus::Ok);
    let summary = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap();
    assert!(summary.contains("\"samples\""), "{summary}");

    let manifest = dir.path().join("manifest.json");
    let manifest_c = CString::new(manifest.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { sl_manifest_verify(manifest_c.as_ptr()) }, SlStatus::Ok);

    let tampered = std::fs::read_to_string(&manifest).unwrap();
    let sha_at = tampered.find("\"sha256\": \"").unwrap() + "\"sha256\": \"".len();
    let flipped = if &tampered[sha_at..sha_at + 1] == "0" { "1" } else { "0" };
    let tampered = format!("{}{}{}", &tampered[..sha_at], flipped, &tampered[sha_at + 1..]);
    std::fs::write(&manifest, tampered).unwrap();
    assert_eq!(unsafe { sl_manifest_verify(manifest_c.as_ptr()) }, SlStatus::Mismatch);

    unsafe {
        sl_run_free(run);
        sl_scenario_free(sc);
    }
}

#[test]
fn scenario_errors() {
    let mut sc = ptr::null_mut();
    let broken = CString::new("[scenario]\nname = ").unwrap();
    assert_eq!(unsafe { sl_scenario_parse(broken.as_ptr(), &mut sc) }, SlStatus::Parse);
    assert!(last_error().starts_with("<ffi>:"), "{}", last_error());

    let missing = CString::new(SIMULATE.replace("[simulate]\ny0 = [0.0, 0.0]\ntau1 = 2.0\n", "")).unwrap();
    assert_eq!(unsafe { sl_scenario_parse(missing.as_ptr(), &mut sc) }, SlStatus::InvalidArgument);

    let name = CString::new("no-such-scenario").unwrap();
    assert_eq!(unsafe { sl_scenario_builtin(name.as_ptr(), &mut sc) }, SlStatus::InvalidArgument);
    let name = CString::new("switch-p5-to-p2-linear").unwrap();
    assert_eq!(unsafe { sl_scenario_builtin(name.as_ptr(), &mut sc) }, SlStatus::Ok);
    unsafe { sl_scenario_free(sc) };

    let invalid_utf8 = [0xffu8 as c_char, 0];
    assert_eq!(unsafe { sl_scenario_parse(invalid_utf8.as_ptr(), &mut sc) }, SlStatus::InvalidArgument);
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(sl_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include").join("switchlab.h")
}

#[test]
fn header_declares_the_whole_api() {
    let h = std::fs::read_to_string(header()).expect("generated header");
    for item in [
        "typedef struct SlSystem SlSystem;",
        "typedef struct SlScenario SlScenario;",
        "typedef struct SlRun SlRun;",
        "SL_STATUS_OK = 0",
        "SL_STATUS_MISMATCH",
        "SL_CHANNEL_CUBIC_STIFFNESS",
        "sl_version",
        "sl_last_error_message",
        "sl_system_soft_impact",
        "sl_system_duffing",
        "sl_system_free",
        "sl_system_period",
        "sl_system_rhs",
        "sl_integrate",
        "sl_settle",
        "sl_scenario_parse",
        "sl_scenario_builtin",
        "sl_scenario_free",
        "sl_scenario_run",
        "sl_run_free",
        "sl_run_summary",
        "sl_run_output_count",
        "sl_run_output_name",
        "sl_manifest_verify",
    ] {
        assert!(h.contains(item), "header lacks `{item}`");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = Command::new("cc").arg("--version").output() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    assert!(cc.status.success());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use_header.c");
    std::fs::write(
        &src,
        "#include \"switchlab.h\"\n\
         int probe(void) {\n\
           SlImpactParams p = {0.01, 1.26, 0.7, 28.0, 0.85};\n\
           SlSystem *sys = NULL;\n\
           SlStatus s = sl_system_soft_impact(&p, SL_CHANNEL_GAP, &sys);\n\
           double period = 0.0;\n\
           if (s == SL_STATUS_OK) { s = sl_system_period(sys, &period); }\n\
           sl_system_free(sys);\n\
           return (int)s;\n\
         }\n",
    )
    .unwrap();
    let out = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-pedantic", "-fsyntax-only", "-I"])
        .arg(header().parent().unwrap())
        .arg(&src)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
