//! C interface to `switchlab`.
//!
//! Every function returns an [`SlStatus`]. On failure a message is stored per
//! thread and can be read with [`sl_last_error_message`]. Objects are handed
//! out as opaque pointers and must be released with the matching `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use switchlab::attractor::{self, SettleOptions};
use switchlab::integrator::integrate;
use switchlab::output::to_json;
use switchlab::scenario::{self, Manifest, Scenario, ScenarioError};
use switchlab::{Channel, DuffingParams, Error, ImpactParams, State, StepSpec, System};

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Numerical = 4,
    Io = 5,
    Mismatch = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlChannel {
    AdditiveForce = 0,
    ForcingAmplitude = 1,
    Gap = 2,
    CubicStiffness = 3,
}

impl From<SlChannel> for Channel {
    fn from(c: SlChannel) -> Self {
        match c {
            SlChannel::AdditiveForce => Channel::AdditiveForce,
            SlChannel::ForcingAmplitude => Channel::ForcingAmplitude,
            SlChannel::Gap => Channel::Gap,
            SlChannel::CubicStiffness => Channel::CubicStiffness,
        }
    }
}

/// Position and velocity.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SlState {
    pub x: f64,
    pub v: f64,
}

impl From<SlState> for State {
    fn from(s: SlState) -> Self {
        State::new(s.x, s.v)
    }
}

impl From<State> for SlState {
    fn from(s: State) -> Self {
        SlState { x: s.x, v: s.v }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlImpactParams {
    pub zeta: f64,
    pub e: f64,
    pub a: f64,
    pub beta: f64,
    pub omega: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlDuffingParams {
    pub gamma: f64,
    pub omega: f64,
    pub p1: f64,
    pub p2: f64,
}

/// Settled attractor summary. `period` is 0 for aperiodic motion and
/// `impacts_per_period` is -1 for smooth systems.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SlAttractor {
    pub period: u32,
    pub impacts_per_period: i32,
    pub peak_to_peak: f64,
    pub contact_time: f64,
    pub anchor: SlState,
}

/// Opaque oscillator handle.
pub struct SlSystem(System);

/// Opaque parsed scenario.
pub struct SlScenario(Scenario);

/// Opaque record of a finished scenario run.
pub struct SlRun {
    summary: CString,
    files: Vec<CString>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(SlStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Config(_) | Error::Domain(_) => SlStatus::InvalidArgument,
            Error::Io(_) => SlStatus::Io,
            _ => SlStatus::Numerical,
        };
        Failure(status, e.to_string())
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        let status = match e {
            ScenarioError::Parse { .. } => SlStatus::Parse,
            ScenarioError::Invalid(_) => SlStatus::InvalidArgument,
            ScenarioError::Numerical { .. } => SlStatus::Numerical,
            ScenarioError::Io { .. } => SlStatus::Io,
            ScenarioError::Mismatch(_) => SlStatus::Mismatch,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(SlStatus::NullPointer, format!("{what} is null"))
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> SlStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => SlStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            SlStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(ptr: *const T, what: &str) -> Result<&'a T, Failure> {
    unsafe { ptr.as_ref() }.ok_or_else(|| null(what))
}

unsafe fn out_ref<'a, T>(ptr: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    unsafe { ptr.as_mut() }.ok_or_else(|| null(what))
}

unsafe fn text<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    unsafe { CStr::from_ptr(ptr) }
        .to_str()
        .map_err(|_| Failure(SlStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

/// Copy `s` with its terminator into `buf` of `len` bytes. `needed` receives
/// the full size; a null `buf` with `len == 0` only queries the size.
unsafe fn copy_out(s: &CStr, buf: *mut c_char, len: usize, needed: *mut usize) -> Result<(), Failure> {
    let bytes = s.to_bytes_with_nul();
    if let Some(n) = unsafe { needed.as_mut() } {
        *n = bytes.len();
    }
    if buf.is_null() && len == 0 {
        return Ok(());
    }
    if buf.is_null() {
        return Err(null("buffer"));
    }
    if len < bytes.len() {
        return Err(Failure(SlStatus::BufferTooSmall, format!("buffer holds {len} bytes, {} needed", bytes.len())));
    }
    unsafe { std::ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, bytes.len()) };
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copy the message of the last failed call on this thread into `buf`.
/// Returns the number of bytes needed including the terminator, or 0 when
/// there is no message. Nothing is written when `len` is too small.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn sl_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| match e.borrow().as_ref() {
        None => 0,
        Some(msg) => {
            let bytes = msg.to_bytes_with_nul();
            if !buf.is_null() && len >= bytes.len() {
                unsafe { std::ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, bytes.len()) };
            }
            bytes.len()
        }
    })
}

/// Create a soft-impact oscillator with the given control channel.
///
/// # Safety
/// `params` must be readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sl_system_soft_impact(
    params: *const SlImpactParams,
    channel: SlChannel,
    out: *mut *mut SlSystem,
) -> SlStatus {
    guard(|| {
        let p = unsafe { borrow(params, "params") }?;
        let out = unsafe { out_ref(out, "out") }?;
        let ip = ImpactParams { zeta: p.zeta, e: p.e, a: p.a, beta: p.beta, omega: p.omega };
        let sys = System::soft_impact(ip, channel.into())?;
        *out = Box::into_raw(Box::new(SlSystem(sys)));
        Ok(())
    })
}

/// Create a Duffing oscillator (controlled through its cubic stiffness).
///
/// # Safety
/// `params` must be readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sl_system_duffing(params: *const SlDuffingParams, out: *mut *mut SlSystem) -> SlStatus {
    guard(|| {
        let p = unsafe { borrow(params, "params") }?;
        let out = unsafe { out_ref(out, "out") }?;
        let sys = System::duffing(DuffingParams { gamma: p.gamma, omega: p.omega, p1: p.p1, p2: p.p2 })?;
        *out = Box::into_raw(Box::new(SlSystem(sys)));
        Ok(())
    })
}

/// Release a system. Null is ignored.
///
/// # Safety
/// `sys` must come from `sl_system_*` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sl_system_free(sys: *mut SlSystem) {
    if !sys.is_null() {
        drop(unsafe { Box::from_raw(sys) });
    }
}

/// Forcing period `2 pi / omega`.
///
/// # Safety
/// `sys` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sl_system_period(sys: *const SlSystem, out: *mut f64) -> SlStatus {
    guard(|| {
        let sys = unsafe { borrow(sys, "system") }?;
        *unsafe { out_ref(out, "out") }? = sys.0.period();
        Ok(())
    })
}

/// Evaluate the vector field at `(tau, y)` under control `u`.
///
/// # Safety
/// `sys` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sl_system_rhs(
    sys: *const SlSystem,
    tau: f64,
    y: SlState,
    u: f64,
    out: *mut SlState,
) -> SlStatus {
    guard(|| {
        let sys = unsafe { borrow(sys, "system") }?;
        *unsafe { out_ref(out, "out") }? = sys.0.rhs(tau, y.into(), u).into();
        Ok(())
    })
}

/// Integrate without control from `tau0` to `tau1` with step `h` and store
/// the final state.
///
/// # Safety
/// `sys` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sl_integrate(
    sys: *const SlSystem,
    y0: SlState,
    tau0: f64,
    tau1: f64,
    h: f64,
    out: *mut SlState,
) -> SlStatus {
    guard(|| {
        let sys = unsafe { borrow(sys, "system") }?;
        let out = unsafe { out_ref(out, "out") }?;
        let traj = integrate(&sys.0, y0.into(), tau0, tau1, &StepSpec::with_h(h), |_| 0.0)?;
        *out = traj.last_state().expect("integration returns at least one state").into();
        Ok(())
    })
}

/// Settle from `y0` with default transient and sampling settings and step
/// `h`, and describe the attractor reached.
///
/// # Safety
/// `sys` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sl_settle(sys: *const SlSystem, y0: SlState, h: f64, out: *mut SlAttractor) -> SlStatus {
    guard(|| {
        let sys = unsafe { borrow(sys, "system") }?;
        let out = unsafe { out_ref(out, "out") }?;
        let opts = SettleOptions { step: StepSpec::with_h(h), ..SettleOptions::default() };
        let fp = attractor::settle(&sys.0, y0.into(), &opts)?;
        *out = SlAttractor {
            period: fp.period_multiple().map_or(0, |p| p as u32),
            impacts_per_period: fp.impacts_per_period.map_or(-1, |i| i as i32),
            peak_to_peak: fp.peak_to_peak,
            contact_time: fp.contact_time,
            anchor: fp.anchor().into(),
        };
        Ok(())
    })
}

/// Parse a TOML scenario.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sl_scenario_parse(toml: *const c_char, out: *mut *mut SlScenario) -> SlStatus {
    guard(|| {
        let src = unsafe { text(toml, "toml") }?;
        let out = unsafe { out_ref(out, "out") }?;
        let sc = Scenario::parse(src, "<ffi>")?;
        sc.check()?;
        *out = Box::into_raw(Box::new(SlScenario(sc)));
        Ok(())
    })
}

/// Load a built-in scenario by name.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sl_scenario_builtin(name: *const c_char, out: *mut *mut SlScenario) -> SlStatus {
    guard(|| {
        let name = unsafe { text(name, "name") }?;
        let out = unsafe { out_ref(out, "out") }?;
        let b = scenario::builtin(name)
            .ok_or_else(|| Failure(SlStatus::InvalidArgument, format!("no built-in scenario `{name}`")))?;
        *out = Box::into_raw(Box::new(SlScenario(b.scenario()?)));
        Ok(())
    })
}

/// Release a scenario. Null is ignored.
///
/// # Safety
/// `sc` must come from `sl_scenario_*` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sl_scenario_free(sc: *mut SlScenario) {
    if !sc.is_null() {
        drop(unsafe { Box::from_raw(sc) });
    }
}

/// Run a scenario, writing its outputs and `manifest.json` into `out_dir`.
///
/// # Safety
/// `sc` must be a live handle, `out_dir` a NUL-terminated string and `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn sl_scenario_run(sc: *const SlScenario, out_dir: *const c_char, out: *mut *mut SlRun) -> SlStatus {
    guard(|| {
        let sc = unsafe { borrow(sc, "scenario") }?;
        let dir = unsafe { text(out_dir, "out_dir") }?;
        let out = unsafe { out_ref(out, "out") }?;
        let manifest: Manifest = scenario::run_to_dir(&sc.0, Path::new(dir))?;
        let summary = to_json(&manifest.summary).map_err(|e| Failure(SlStatus::Io, e.to_string()))?;
        let cstring = |s: String| CString::new(s).map_err(|e| Failure(SlStatus::InvalidArgument, e.to_string()));
        let files = manifest.outputs.iter().map(|o| cstring(o.file.clone())).collect::<Result<_, _>>()?;
        *out = Box::into_raw(Box::new(SlRun { summary: cstring(summary)?, files }));
        Ok(())
    })
}

/// Release a run record. Null is ignored.
///
/// # Safety
/// `run` must come from `sl_scenario_run` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sl_run_free(run: *mut SlRun) {
    if !run.is_null() {
        drop(unsafe { Box::from_raw(run) });
    }
}

/// Copy the JSON run summary into `buf` (see [`sl_run_output_name`] for the
/// buffer protocol).
///
/// # Safety
/// `run` must be a live handle; `buf` null or `len` writable bytes; `needed`
/// null or writable.
#[no_mangle]
pub unsafe extern "C" fn sl_run_summary(run: *const SlRun, buf: *mut c_char, len: usize, needed: *mut usize) -> SlStatus {
    guard(|| {
        let run = unsafe { borrow(run, "run") }?;
        unsafe { copy_out(&run.summary, buf, len, needed) }
    })
}

/// Number of output files recorded in the manifest.
///
/// # Safety
/// `run` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sl_run_output_count(run: *const SlRun, out: *mut usize) -> SlStatus {
    guard(|| {
        let run = unsafe { borrow(run, "run") }?;
        *unsafe { out_ref(out, "out") }? = run.files.len();
        Ok(())
    })
}

/// Copy the name of output `index` into `buf`. `needed` receives the size
/// including the terminator; pass a null `buf` with `len == 0` to query it.
///
/// # Safety
/// `run` must be a live handle; `buf` null or `len` writable bytes; `needed`
/// null or writable.
#[no_mangle]
pub unsafe extern "C" fn sl_run_output_name(
    run: *const SlRun,
    index: usize,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> SlStatus {
    guard(|| {
        let run = unsafe { borrow(run, "run") }?;
        let name = run.files.get(index).ok_or_else(|| {
            Failure(SlStatus::InvalidArgument, format!("output {index} out of range ({} outputs)", run.files.len()))
        })?;
        unsafe { copy_out(name, buf, len, needed) }
    })
}

/// Re-run the scenario recorded in a manifest and compare output digests.
/// Returns `SL_STATUS_MISMATCH` when any output differs.
///
/// # Safety
/// `manifest_path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sl_manifest_verify(manifest_path: *const c_char) -> SlStatus {
    guard(|| {
        let path = unsafe { text(manifest_path, "manifest_path") }?;
        scenario::verify_manifest(Path::new(path))?;
        Ok(())
    })
}
