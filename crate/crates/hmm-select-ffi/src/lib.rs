//! C ABI for the hmm-select pipeline.
//!
//! Conventions:
//!
//! * estimator families are opaque handles created and freed by this
//!   library; never dereference them from C;
//! * every fallible function returns an [`HmmselStatus`]; on any status
//!   other than `OK` the thread-local message from [`hmmsel_last_error`]
//!   describes the failure;
//! * buffers are caller-allocated, with lengths passed explicitly;
//! * panics are caught at the boundary and reported as `HMMSEL_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use hmm_select::bases::{Basis, BasisKind};
use hmm_select::calibration::{calibrate_cached, default_rho_grid, CalibrationMode};
use hmm_select::schema;
use hmm_select::selection::{
    align_family, default_reference_model, DistanceCache, EstimatorFamily, Method, PenaltyShape,
    Variant,
};
use hmm_select::simulation::GroundTruth;
use hmm_select::spectral::{spectral_family, RetryRule, SweepConfig};
use hmm_select::Error;

/// ABI version of this header; bump on breaking changes.
pub const HMMSEL_ABI_VERSION: u32 = 1;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HmmselStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Domain = 3,
    Numerical = 4,
    InsufficientData = 5,
    IllConditionedMoments = 6,
    DiagonalizationFailure = 7,
    OptimizationStalled = 8,
    NoUniqueStationary = 9,
    UnalignedFamily = 10,
    SchemaVersion = 11,
    Io = 12,
    Serialization = 13,
    BufferTooSmall = 14,
    Panic = 15,
}

/// Selection variants exposed over the ABI.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HmmselVariant {
    Standard = 0,
    Pos = 1,
    Max = 2,
}

/// Penalty-calibration policies exposed over the ABI.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HmmselCalibration {
    EachJump = 0,
    JumpMax = 1,
    JumpMean = 2,
}

/// Opaque estimator-family handle.
pub struct HmmselFamily {
    inner: EstimatorFamily,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> HmmselStatus {
    match err {
        Error::InvalidArgument(_) => HmmselStatus::InvalidArgument,
        Error::Domain(_) => HmmselStatus::Domain,
        Error::Numerical(_) => HmmselStatus::Numerical,
        Error::InsufficientData(_) => HmmselStatus::InsufficientData,
        Error::IllConditionedMoments(_) => HmmselStatus::IllConditionedMoments,
        Error::DiagonalizationFailure { .. } => HmmselStatus::DiagonalizationFailure,
        Error::OptimizationStalled { .. } => HmmselStatus::OptimizationStalled,
        Error::NoUniqueStationary(_) => HmmselStatus::NoUniqueStationary,
        Error::UnalignedFamily => HmmselStatus::UnalignedFamily,
        Error::SchemaVersion { .. } => HmmselStatus::SchemaVersion,
        Error::Io(_) => HmmselStatus::Io,
        Error::Json(_) | Error::Csv(_) => HmmselStatus::Serialization,
    }
}

fn guard(body: impl FnOnce() -> HmmselStatus) -> HmmselStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic in hmm-select".to_string());
            set_error(&msg);
            HmmselStatus::Panic
        }
    }
}

fn fail(err: Error) -> HmmselStatus {
    set_error(&err.to_string());
    status_of(&err)
}

unsafe fn path_from(ptr: *const c_char) -> Result<&'static Path, HmmselStatus> {
    if ptr.is_null() {
        set_error("null path");
        return Err(HmmselStatus::NullPointer);
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(Path::new(s)),
        Err(_) => {
            set_error("path is not valid UTF-8");
            Err(HmmselStatus::InvalidArgument)
        }
    }
}

/// ABI version of the loaded library.
#[no_mangle]
pub extern "C" fn hmmsel_abi_version() -> u32 {
    HMMSEL_ABI_VERSION
}

/// Thread-local message describing the most recent failure. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn hmmsel_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Samples `out_len` observations from the three-state benchmark HMM.
///
/// # Safety
/// `out` must point to `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn hmmsel_simulate_benchmark(
    seed: u64,
    out: *mut f64,
    out_len: usize,
) -> HmmselStatus {
    guard(|| {
        if out.is_null() {
            set_error("null output buffer");
            return HmmselStatus::NullPointer;
        }
        if out_len < 3 {
            set_error("need room for at least 3 observations");
            return HmmselStatus::InvalidArgument;
        }
        let truth = GroundTruth::benchmark();
        match truth.sample(out_len - 2, seed) {
            Ok(obs) => {
                let dst = std::slice::from_raw_parts_mut(out, out_len);
                dst.copy_from_slice(&obs);
                HmmselStatus::Ok
            }
            Err(err) => fail(err),
        }
    })
}

/// Runs the spectral sweep over the model grid `m_min..=m_max` (step
/// `m_step`) and returns an aligned estimator family.
///
/// # Safety
/// `obs` must point to `n_obs` readable doubles; `out` must be a valid
/// location for one pointer.
#[no_mangle]
pub unsafe extern "C" fn hmmsel_spectral_family(
    obs: *const f64,
    n_obs: usize,
    k: u32,
    edge_dim: u32,
    m_min: u32,
    m_max: u32,
    m_step: u32,
    seed: u64,
    out: *mut *mut HmmselFamily,
) -> HmmselStatus {
    guard(|| {
        if obs.is_null() || out.is_null() {
            set_error("null pointer argument");
            return HmmselStatus::NullPointer;
        }
        if m_step == 0 || m_min == 0 || m_max < m_min {
            set_error("bad model grid");
            return HmmselStatus::InvalidArgument;
        }
        let observations = std::slice::from_raw_parts(obs, n_obs);
        let grid: Vec<usize> = (m_min as usize..=m_max as usize)
            .step_by(m_step as usize)
            .collect();
        let basis = match Basis::new(BasisKind::Trig, (m_max as usize).max(edge_dim as usize)) {
            Ok(b) => b,
            Err(err) => return fail(err),
        };
        let cfg = SweepConfig {
            k: k as usize,
            edge_dim: edge_dim as usize,
            model_grid: grid,
            retries: RetryRule::LogScaled,
            seed,
        };
        let family = match spectral_family(observations, &basis, &cfg) {
            Ok(f) => f,
            Err(err) => return fail(err),
        };
        let reference = default_reference_model(&family.model_grid(), k as usize);
        match align_family(family, reference) {
            Ok(aligned) => {
                *out = Box::into_raw(Box::new(HmmselFamily { inner: aligned }));
                HmmselStatus::Ok
            }
            Err(err) => fail(err),
        }
    })
}

/// Reads an estimator family from a JSON file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid pointer location.
#[no_mangle]
pub unsafe extern "C" fn hmmsel_family_read_json(
    path: *const c_char,
    out: *mut *mut HmmselFamily,
) -> HmmselStatus {
    guard(|| {
        if out.is_null() {
            set_error("null output pointer");
            return HmmselStatus::NullPointer;
        }
        let path = match path_from(path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        match schema::read_family(path) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(HmmselFamily { inner }));
                HmmselStatus::Ok
            }
            Err(err) => fail(err),
        }
    })
}

/// Writes an estimator family to a JSON file.
///
/// # Safety
/// `family` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn hmmsel_family_write_json(
    family: *const HmmselFamily,
    path: *const c_char,
) -> HmmselStatus {
    guard(|| {
        let Some(family) = family.as_ref() else {
            set_error("null family handle");
            return HmmselStatus::NullPointer;
        };
        let path = match path_from(path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        match schema::write_family(path, &family.inner) {
            Ok(()) => HmmselStatus::Ok,
            Err(err) => fail(err),
        }
    })
}

/// Frees a family handle; a null pointer is a no-op.
///
/// # Safety
/// `family` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hmmsel_family_free(family: *mut HmmselFamily) {
    if !family.is_null() {
        drop(Box::from_raw(family));
    }
}

/// Number of hidden states (0 for a null handle).
///
/// # Safety
/// `family` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn hmmsel_family_num_states(family: *const HmmselFamily) -> usize {
    family.as_ref().map_or(0, |f| f.inner.k)
}

/// Number of models in the family grid (0 for a null handle).
///
/// # Safety
/// `family` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn hmmsel_family_num_models(family: *const HmmselFamily) -> usize {
    family.as_ref().map_or(0, |f| f.inner.models.len())
}

/// Observation-triple count behind the family (0 for a null handle).
///
/// # Safety
/// `family` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn hmmsel_family_sample_size(family: *const HmmselFamily) -> usize {
    family.as_ref().map_or(0, |f| f.inner.n)
}

/// Copies the model dimensions into `out` (ascending).
///
/// # Safety
/// `out` must point to `out_len` writable entries.
#[no_mangle]
pub unsafe extern "C" fn hmmsel_family_model_dims(
    family: *const HmmselFamily,
    out: *mut u32,
    out_len: usize,
) -> HmmselStatus {
    guard(|| {
        let Some(family) = family.as_ref() else {
            set_error("null family handle");
            return HmmselStatus::NullPointer;
        };
        if out.is_null() {
            set_error("null output buffer");
            return HmmselStatus::NullPointer;
        }
        let grid = family.inner.model_grid();
        if out_len < grid.len() {
            set_error("model dimension buffer too small");
            return HmmselStatus::BufferTooSmall;
        }
        let dst = std::slice::from_raw_parts_mut(out, grid.len());
        for (d, m) in dst.iter_mut().zip(&grid) {
            *d = *m as u32;
        }
        HmmselStatus::Ok
    })
}

/// Copies the emission coefficients of `state` in model `model_dim` into
/// `out` and stores the coefficient count in `written`.
///
/// # Safety
/// `out` must point to `out_len` writable doubles; `written` to one
/// writable size_t.
#[no_mangle]
pub unsafe extern "C" fn hmmsel_family_emission(
    family: *const HmmselFamily,
    model_dim: u32,
    state: u32,
    out: *mut f64,
    out_len: usize,
    written: *mut usize,
) -> HmmselStatus {
    guard(|| {
        let Some(family) = family.as_ref() else {
            set_error("null family handle");
            return HmmselStatus::NullPointer;
        };
        if out.is_null() || written.is_null() {
            set_error("null output buffer");
            return HmmselStatus::NullPointer;
        }
        if state as usize >= family.inner.k {
            set_error("state index out of range");
            return HmmselStatus::InvalidArgument;
        }
        let Some(model) = family.inner.model(model_dim as usize) else {
            set_error("model dimension not in the family grid");
            return HmmselStatus::InvalidArgument;
        };
        let coeffs = model.emission_coeffs(state as usize);
        if out_len < coeffs.len() {
            set_error("coefficient buffer too small");
            return HmmselStatus::BufferTooSmall;
        }
        let dst = std::slice::from_raw_parts_mut(out, coeffs.len());
        dst.copy_from_slice(&coeffs);
        *written = coeffs.len();
        HmmselStatus::Ok
    })
}

/// Calibrates the penalty by dimension jump and selects one model per
/// state; `m_hat_out` receives the selected dimensions and, when non-null,
/// `rho_out` the per-state penalty constants.
///
/// # Safety
/// `m_hat_out` (and `rho_out` when non-null) must point to at least
/// `num_states` writable entries.
#[no_mangle]
pub unsafe extern "C" fn hmmsel_family_select(
    family: *const HmmselFamily,
    variant: HmmselVariant,
    calibration: HmmselCalibration,
    m_hat_out: *mut u32,
    rho_out: *mut f64,
    out_len: usize,
) -> HmmselStatus {
    guard(|| {
        let Some(family) = family.as_ref() else {
            set_error("null family handle");
            return HmmselStatus::NullPointer;
        };
        if m_hat_out.is_null() {
            set_error("null output buffer");
            return HmmselStatus::NullPointer;
        }
        let k = family.inner.k;
        if out_len < k {
            set_error("output buffer shorter than the state count");
            return HmmselStatus::BufferTooSmall;
        }
        let shape = match family.inner.method {
            Method::Spectral => PenaltyShape::Spectral,
            Method::Ls => PenaltyShape::Ls,
        };
        let cache = match DistanceCache::new(&family.inner) {
            Ok(c) => c,
            Err(err) => return fail(err),
        };
        let rho_grid = default_rho_grid(&cache, shape, family.inner.n);
        let mode = match calibration {
            HmmselCalibration::EachJump => CalibrationMode::EachJump,
            HmmselCalibration::JumpMax => CalibrationMode::JumpMax,
            HmmselCalibration::JumpMean => CalibrationMode::JumpMean,
        };
        let cal = match calibrate_cached(&cache, family.inner.n, shape, mode, &rho_grid) {
            Ok(c) => c,
            Err(err) => return fail(err),
        };
        let variant = match variant {
            HmmselVariant::Standard => Variant::Standard,
            HmmselVariant::Pos => Variant::Pos,
            HmmselVariant::Max => Variant::Max,
        };
        let result = cache.select(&cal.penalty(family.inner.n), variant);
        let m_dst = std::slice::from_raw_parts_mut(m_hat_out, k);
        for (d, s) in m_dst.iter_mut().zip(&result.per_state) {
            *d = s.m_hat as u32;
        }
        if !rho_out.is_null() {
            let r_dst = std::slice::from_raw_parts_mut(rho_out, k);
            for (i, d) in r_dst.iter_mut().enumerate() {
                *d = result.penalty.rho_for(i);
            }
        }
        HmmselStatus::Ok
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn abi_version_is_one() {
        assert_eq!(hmmsel_abi_version(), 1);
    }

    #[test]
    fn simulate_estimate_select_over_the_abi() {
        let n = 20_002usize;
        let mut obs = vec![0.0; n];
        let status = unsafe { hmmsel_simulate_benchmark(7, obs.as_mut_ptr(), n) };
        assert_eq!(status, HmmselStatus::Ok);
        assert!(obs.iter().all(|&y| (0.0..=1.0).contains(&y)));

        let mut family: *mut HmmselFamily = std::ptr::null_mut();
        let status = unsafe {
            hmmsel_spectral_family(obs.as_ptr(), n, 3, 20, 3, 30, 1, 7, &mut family)
        };
        assert_eq!(status, HmmselStatus::Ok);
        assert!(!family.is_null());

        unsafe {
            assert_eq!(hmmsel_family_num_states(family), 3);
            assert_eq!(hmmsel_family_num_models(family), 28);
            assert_eq!(hmmsel_family_sample_size(family), 20_000);

            let mut dims = vec![0u32; 28];
            assert_eq!(
                hmmsel_family_model_dims(family, dims.as_mut_ptr(), dims.len()),
                HmmselStatus::Ok
            );
            assert_eq!(dims[0], 3);
            assert_eq!(dims[27], 30);

            let mut coeffs = vec![0.0; 30];
            let mut written = 0usize;
            assert_eq!(
                hmmsel_family_emission(family, 10, 1, coeffs.as_mut_ptr(), 30, &mut written),
                HmmselStatus::Ok
            );
            assert_eq!(written, 10);

            let mut m_hat = vec![0u32; 3];
            let mut rho = vec![0.0f64; 3];
            assert_eq!(
                hmmsel_family_select(
                    family,
                    HmmselVariant::Standard,
                    HmmselCalibration::EachJump,
                    m_hat.as_mut_ptr(),
                    rho.as_mut_ptr(),
                    3
                ),
                HmmselStatus::Ok
            );
            assert!(m_hat.iter().all(|&m| (3..=30).contains(&m)));
            assert!(rho.iter().all(|&r| r > 0.0));

            hmmsel_family_free(family);
        }
    }

    #[test]
    fn json_roundtrip_over_the_abi() {
        let n = 5_002usize;
        let mut obs = vec![0.0; n];
        unsafe {
            assert_eq!(
                hmmsel_simulate_benchmark(3, obs.as_mut_ptr(), n),
                HmmselStatus::Ok
            );
        }
        let mut family: *mut HmmselFamily = std::ptr::null_mut();
        unsafe {
            assert_eq!(
                hmmsel_spectral_family(obs.as_ptr(), n, 2, 10, 3, 12, 3, 3, &mut family),
                HmmselStatus::Ok
            );
        }
        let dir = std::env::temp_dir().join("hmmsel-ffi-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("family.json");
        let c_path = CString::new(path.to_str().unwrap()).unwrap();
        unsafe {
            assert_eq!(
                hmmsel_family_write_json(family, c_path.as_ptr()),
                HmmselStatus::Ok
            );
            let mut back: *mut HmmselFamily = std::ptr::null_mut();
            assert_eq!(
                hmmsel_family_read_json(c_path.as_ptr(), &mut back),
                HmmselStatus::Ok
            );
            assert_eq!(
                hmmsel_family_num_models(back),
                hmmsel_family_num_models(family)
            );
            hmmsel_family_free(family);
            hmmsel_family_free(back);
        }
    }

    #[test]
    fn errors_surface_through_status_and_message() {
        let mut out: *mut HmmselFamily = std::ptr::null_mut();
        let path = CString::new("/nonexistent/family.json").unwrap();
        let status = unsafe { hmmsel_family_read_json(path.as_ptr(), &mut out) };
        assert_eq!(status, HmmselStatus::Io);
        let msg = unsafe { CStr::from_ptr(hmmsel_last_error()) };
        assert!(!msg.to_bytes().is_empty());

        // invalid grid
        let obs = [0.5, 0.5, 0.5, 0.5];
        let status = unsafe {
            hmmsel_spectral_family(obs.as_ptr(), 4, 2, 10, 5, 3, 1, 0, &mut out)
        };
        assert_eq!(status, HmmselStatus::InvalidArgument);

        // null pointers never crash
        let status = unsafe { hmmsel_simulate_benchmark(0, std::ptr::null_mut(), 10) };
        assert_eq!(status, HmmselStatus::NullPointer);
        unsafe { hmmsel_family_free(std::ptr::null_mut()) };
    }
}
