//! C interface: opaque handles, status codes and a per-thread error message.
//!
//! Every function returns a [`PmStatus`]; results come back through out
//! pointers. Handles are created by `*_new`/`*_load` and released by the
//! matching `*_free`. Strings returned by the library are freed with
//! [`pm_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use phasemix::cli::config::ExperimentConfig;
use phasemix::cli::pipeline::Pipeline;
use phasemix::cli::run_verification;
use phasemix::observables::{Kind, ProbeEngine};
use phasemix::orbits;
use phasemix::potential::{PolytropeParams, SteadyOptions, SteadyState};
use phasemix::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    OutOfRange = 4,
    NoConvergence = 5,
    VerificationFailed = 6,
    Numerical = 7,
    Io = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PmKind {
    Density = 0,
    DensityRate = 1,
    Force = 2,
    PotentialRate = 3,
}

impl From<PmKind> for Kind {
    fn from(k: PmKind) -> Kind {
        match k {
            PmKind::Density => Kind::Density,
            PmKind::DensityRate => Kind::DensityRate,
            PmKind::Force => Kind::Force,
            PmKind::PotentialRate => Kind::PotentialRate,
        }
    }
}

/// A self-consistent steady state.
pub struct PmSteady(SteadyState);

/// Steady state, orbit table and initial angle field of one configuration.
pub struct PmExperiment(Pipeline);

/// A probe evaluator for one observable at one radius.
pub struct PmProbe(ProbeEngine);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> PmStatus {
    match e {
        Error::InvalidParams(_) | Error::ZeroMode | Error::ResolutionTooLow { .. } => PmStatus::InvalidArgument,
        Error::Config(_) => PmStatus::Config,
        Error::OutOfRange { .. } | Error::AtEllipticPoint | Error::EmptySupport { .. } => PmStatus::OutOfRange,
        Error::NonConvergence { .. } => PmStatus::NoConvergence,
        Error::VerificationFailed(_) | Error::MonotonicityViolation { .. } => PmStatus::VerificationFailed,
        Error::Io(_) => PmStatus::Io,
        _ => PmStatus::Numerical,
    }
}

/// Runs `f`, turning errors and panics into a status plus a message.
fn guard<F: FnOnce() -> Result<(), (PmStatus, String)>>(f: F) -> PmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PmStatus::Ok,
        Ok(Err((s, m))) => {
            set_error(m);
            s
        }
        Err(_) => {
            set_error("internal panic".into());
            PmStatus::Panic
        }
    }
}

fn lib<T>(r: phasemix::Result<T>) -> Result<T, (PmStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null() -> (PmStatus, String) {
    (PmStatus::NullPointer, "null pointer argument".into())
}

unsafe fn put<T>(out: *mut T, v: T) -> Result<(), (PmStatus, String)> {
    if out.is_null() {
        return Err(null());
    }
    out.write(v);
    Ok(())
}

unsafe fn get<'a, T>(h: *const T) -> Result<&'a T, (PmStatus, String)> {
    h.as_ref().ok_or_else(null)
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn pm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

fn build_steady(p: phasemix::Result<PolytropeParams>) -> Result<Box<PmSteady>, (PmStatus, String)> {
    let p = lib(p)?;
    Ok(Box::new(PmSteady(lib(SteadyState::build(p, &SteadyOptions::default()))?)))
}

/// Steady state of the one-dimensional model with fixed angular momentum `lbar`.
///
/// # Safety
/// `out` must be valid for writing a pointer.
#[no_mangle]
pub unsafe extern "C" fn pm_steady_new_one_dim(
    k: f64,
    e0: f64,
    lbar: f64,
    mass: f64,
    eps: f64,
    out: *mut *mut PmSteady,
) -> PmStatus {
    guard(|| {
        let h = build_steady(PolytropeParams::one_dim(k, e0, lbar, mass, eps))?;
        put(out, Box::into_raw(h))
    })
}

/// Steady state of the radial model with L ≥ `l0`.
///
/// # Safety
/// `out` must be valid for writing a pointer.
#[no_mangle]
pub unsafe extern "C" fn pm_steady_new_radial(
    k: f64,
    ell: f64,
    e0: f64,
    l0: f64,
    mass: f64,
    eps: f64,
    out: *mut *mut PmSteady,
) -> PmStatus {
    guard(|| {
        let h = build_steady(PolytropeParams::radial(k, ell, e0, l0, mass, eps))?;
        put(out, Box::into_raw(h))
    })
}

/// # Safety
/// `h` must come from a `pm_steady_new_*` call or be NULL.
#[no_mangle]
pub unsafe extern "C" fn pm_steady_free(h: *mut PmSteady) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Inner and outer edge of the support.
///
/// # Safety
/// `h` must be a live handle and the out pointers valid.
#[no_mangle]
pub unsafe extern "C" fn pm_steady_support(h: *const PmSteady, rmin: *mut f64, rmax: *mut f64) -> PmStatus {
    guard(|| {
        let ss = &get(h)?.0;
        put(rmin, ss.rmin)?;
        put(rmax, ss.rmax)
    })
}

/// Effective potential Ψ_L(r).
///
/// # Safety
/// `h` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn pm_steady_psi(h: *const PmSteady, l: f64, r: f64, out: *mut f64) -> PmStatus {
    guard(|| {
        let ss = &get(h)?.0;
        if !(r > 0.0 && l >= 0.0) {
            return Err((PmStatus::InvalidArgument, format!("need r > 0 and L >= 0, got r = {r}, L = {l}")));
        }
        put(out, ss.psi(l, r))
    })
}

/// Radial period T(E, L).
///
/// # Safety
/// `h` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn pm_period(h: *const PmSteady, e: f64, l: f64, out: *mut f64) -> PmStatus {
    guard(|| {
        let ss = &get(h)?.0;
        put(out, lib(orbits::period(ss, e, l))?)
    })
}

/// Angle θ(R, E, L) ∈ [0, 1/2] at which the outgoing orbit passes R.
///
/// # Safety
/// `h` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn pm_angle_of_radius(h: *const PmSteady, r: f64, e: f64, l: f64, out: *mut f64) -> PmStatus {
    guard(|| {
        let ss = &get(h)?.0;
        put(out, lib(orbits::angle_of_radius(ss, r, e, l))?)
    })
}

/// Loads a configuration file and builds its steady state, orbit table and
/// initial angle field.
///
/// # Safety
/// `config_path` must be a NUL-terminated string and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn pm_experiment_load(config_path: *const c_char, out: *mut *mut PmExperiment) -> PmStatus {
    guard(|| {
        if config_path.is_null() {
            return Err(null());
        }
        let path = CStr::from_ptr(config_path)
            .to_str()
            .map_err(|_| (PmStatus::InvalidArgument, "path is not UTF-8".to_string()))?;
        let cfg = lib(ExperimentConfig::load(Path::new(path)))?;
        let pipe = lib(Pipeline::new(&cfg))?;
        put(out, Box::into_raw(Box::new(PmExperiment(pipe))))
    })
}

/// # Safety
/// `h` must come from `pm_experiment_load` or be NULL.
#[no_mangle]
pub unsafe extern "C" fn pm_experiment_free(h: *mut PmExperiment) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Runs the verification suite; `passed` is 1 when the configuration may be
/// used for decay runs, and `report_json` receives the full report.
///
/// # Safety
/// `h` must be a live handle; out pointers valid.
#[no_mangle]
pub unsafe extern "C" fn pm_experiment_verify(
    h: *const PmExperiment,
    passed: *mut i32,
    report_json: *mut *mut c_char,
) -> PmStatus {
    guard(|| {
        let p = &get(h)?.0;
        let rep = lib(run_verification(&p.cfg, &p.ss, &p.table, &p.data))?;
        let json = CString::new(lib(rep.to_json())?).map_err(|e| (PmStatus::Numerical, e.to_string()))?;
        put(passed, rep.bless().is_ok() as i32)?;
        put(report_json, json.into_raw())
    })
}

/// Prepares the evaluator of one observable at radius `r`.
///
/// # Safety
/// `h` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn pm_probe_new(h: *const PmExperiment, kind: PmKind, r: f64, out: *mut *mut PmProbe) -> PmStatus {
    guard(|| {
        let p = &get(h)?.0;
        let obs = lib(p.observables())?;
        let eng = lib(obs.probe(kind.into(), r))?;
        put(out, Box::into_raw(Box::new(PmProbe(eng))))
    })
}

/// # Safety
/// `h` must come from `pm_probe_new` or be NULL.
#[no_mangle]
pub unsafe extern "C" fn pm_probe_free(h: *mut PmProbe) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Values at `n` times.
///
/// # Safety
/// `h` must be a live handle; `times` and `out` must hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn pm_probe_eval(h: *const PmProbe, times: *const f64, n: usize, out: *mut f64) -> PmStatus {
    guard(|| {
        let eng = &get(h)?.0;
        if n == 0 {
            return Ok(());
        }
        if times.is_null() || out.is_null() {
            return Err(null());
        }
        let ts = std::slice::from_raw_parts(times, n);
        let vals = eng.series(ts);
        std::slice::from_raw_parts_mut(out, n).copy_from_slice(&vals);
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn kepler_period_through_the_interface() {
        let mut h = ptr::null_mut();
        unsafe {
            assert_eq!(pm_steady_new_one_dim(1.0, -0.375, 1.0, 1.0, 0.0, &mut h), PmStatus::Ok);
            let mut t = 0.0;
            assert_eq!(pm_period(h, -0.125, 1.0, &mut t), PmStatus::Ok);
            assert!((t - 16.0 * PI).abs() < 1e-10);
            let (mut a, mut b) = (0.0, 0.0);
            assert_eq!(pm_steady_support(h, &mut a, &mut b), PmStatus::Ok);
            assert!((a - 2.0 / 3.0).abs() < 1e-12 && (b - 2.0).abs() < 1e-12);
            pm_steady_free(h);
        }
    }

    #[test]
    fn errors_carry_codes_and_messages() {
        let mut h = ptr::null_mut();
        unsafe {
            assert_eq!(pm_steady_new_one_dim(0.4, -0.375, 1.0, 1.0, 0.0, &mut h), PmStatus::InvalidArgument);
            assert!(h.is_null());
            let msg = CStr::from_ptr(pm_last_error()).to_str().unwrap();
            assert!(msg.contains("k > 1/2"), "{msg}");
            assert_eq!(pm_steady_support(ptr::null(), ptr::null_mut(), ptr::null_mut()), PmStatus::NullPointer);
            assert_eq!(pm_steady_new_radial(2.0, 1.0, -0.375, 1.0, 1.0, 0.0, ptr::null_mut()), PmStatus::NullPointer);
            let mut s = ptr::null_mut();
            assert_eq!(pm_steady_new_one_dim(1.0, -0.375, 1.0, 1.0, 0.0, &mut s), PmStatus::Ok);
            let mut v = 0.0;
            assert_eq!(pm_period(s, 0.5, 1.0, &mut v), PmStatus::OutOfRange);
            pm_steady_free(s);
        }
    }

    #[test]
    fn experiment_probe_and_verification() {
        let dir = std::env::temp_dir().join(format!("pm-ffi-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let cfg = dir.join("small.cfg");
        std::fs::write(
            &cfg,
            "schema = 1\nid = \"small\"\n[model]\nmode = \"one-dim\"\nk = 2.0\ne0 = -0.375\nlbar = 1.0\neps = 0.0\n\
             [grid]\nn_e = 64\nm_max = 8\nn_theta = 64\n[data]\nfamily = \"radial-velocity\"\n",
        )
        .unwrap();
        let path = CString::new(cfg.to_str().unwrap()).unwrap();
        unsafe {
            let mut exp = ptr::null_mut();
            assert_eq!(pm_experiment_load(path.as_ptr(), &mut exp), PmStatus::Ok);
            let mut probe = ptr::null_mut();
            assert_eq!(pm_probe_new(exp, PmKind::Density, 1.3, &mut probe), PmStatus::Ok);
            let ts = [0.0, 1.0, 2.0];
            let mut vs = [f64::NAN; 3];
            assert_eq!(pm_probe_eval(probe, ts.as_ptr(), 3, vs.as_mut_ptr()), PmStatus::Ok);
            // odd-in-w data has zero density at t = 0
            assert!(vs[0].abs() < 1e-12 && vs[1].abs() > 0.0);
            pm_probe_free(probe);
            let mut passed = 0;
            let mut json = ptr::null_mut();
            assert_eq!(pm_experiment_verify(exp, &mut passed, &mut json), PmStatus::Ok);
            assert_eq!(passed, 1);
            assert!(CStr::from_ptr(json).to_str().unwrap().contains("monotone_period"));
            pm_string_free(json);
            pm_experiment_free(exp);
        }
        std::fs::remove_dir_all(dir).unwrap();
    }
}
