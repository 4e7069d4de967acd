//! C ABI over the hifuse library: opaque handles, integer status codes, a
//! thread-local error message. The committed header `include/hifuse.h`
//! mirrors this surface; `header_declares_every_export` keeps them in sync.
//!
//! Conventions:
//! - Every function returns a status code (`HIFUSE_OK` = 0) unless it is a
//!   destructor or returns a borrowed string.
//! - Matrix arguments are row-major `f64` buffers with explicit dimensions.
//! - On a non-zero return, `hifuse_last_error_message()` describes the
//!   failure; the pointer stays valid until the next failing call on the
//!   same thread.
//! - Handles are created and destroyed only by this library; passing a
//!   handle to the wrong function family is undefined behavior, passing
//!   NULL is a reported error.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use ndarray::{Array2, ArrayView2};

use hifuse::dataset::Trajectory;
use hifuse::embedding::EmbeddingModel;
use hifuse::error::Error;
use hifuse::fusion::{fit, pava, FitOutcome, FusionConfig, IdealSpaceSpec};

pub const HIFUSE_OK: i32 = 0;
/// Invalid configuration value (mirrors the CLI exit code).
pub const HIFUSE_ERR_CONFIG: i32 = 2;
/// Malformed or inconsistent data (mirrors the CLI exit code).
pub const HIFUSE_ERR_DATA: i32 = 3;
/// Numerical failure such as a singular solve (mirrors the CLI exit code).
pub const HIFUSE_ERR_NUMERICAL: i32 = 4;
/// NULL pointer, non-UTF-8 string, or a buffer length mismatch.
pub const HIFUSE_ERR_ARG: i32 = 5;
/// Call sequence violation (e.g. reading results before solving).
pub const HIFUSE_ERR_STATE: i32 = 6;
/// A panic was caught at the FFI boundary.
pub const HIFUSE_ERR_PANIC: i32 = 7;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn fail(code: i32, msg: String) -> i32 {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
    code
}

fn fail_err(err: Error) -> i32 {
    fail(err.exit_code(), err.to_string())
}

/// Message for the most recent failure on this thread. Never NULL; empty
/// before the first failure. Valid until the next failing call here.
#[no_mangle]
pub extern "C" fn hifuse_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hifuse_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

fn guarded(body: impl FnOnce() -> i32) -> i32 {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(code) => code,
        Err(_) => fail(HIFUSE_ERR_PANIC, "panic caught at FFI boundary".to_string()),
    }
}

/// # Safety
/// `ptr` must be NULL or a valid pointer to `len` readable f64 values.
unsafe fn slice_arg<'a>(ptr: *const f64, len: usize, name: &str) -> Result<&'a [f64], i32> {
    if ptr.is_null() {
        return Err(fail(HIFUSE_ERR_ARG, format!("{name} is NULL")));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn matrix_arg(
    ptr: *const f64,
    rows: usize,
    cols: usize,
    name: &str,
) -> Result<Array2<f64>, i32> {
    if rows == 0 || cols == 0 {
        return Err(fail(
            HIFUSE_ERR_ARG,
            format!("{name}: dimensions must be positive, got {rows}x{cols}"),
        ));
    }
    let flat = slice_arg(ptr, rows * cols, name)?;
    Array2::from_shape_vec((rows, cols), flat.to_vec())
        .map_err(|e| fail(HIFUSE_ERR_ARG, format!("{name}: {e}")))
}

unsafe fn out_arg<'a>(ptr: *mut f64, len: usize, name: &str) -> Result<&'a mut [f64], i32> {
    if ptr.is_null() {
        return Err(fail(HIFUSE_ERR_ARG, format!("{name} is NULL")));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

// ---------------------------------------------------------------------------
// Isotonic regression

/// Pool-adjacent-violators. Writes the nondecreasing least-squares fit of
/// `v[0..len]` into `out[0..len]` (buffers may alias).
///
/// # Safety
/// `v` and `out` must point to `len` readable / writable f64 values.
#[no_mangle]
pub unsafe extern "C" fn hifuse_pava(v: *const f64, len: usize, out: *mut f64) -> i32 {
    guarded(|| {
        if len == 0 {
            return HIFUSE_OK;
        }
        let input = match slice_arg(v, len, "v") {
            Ok(s) => s.to_vec(),
            Err(c) => return c,
        };
        let output = match out_arg(out, len, "out") {
            Ok(s) => s,
            Err(c) => return c,
        };
        output.copy_from_slice(&pava(&input));
        HIFUSE_OK
    })
}

// ---------------------------------------------------------------------------
// Embedding model

/// Opaque trained-model handle.
pub struct HifuseModel(EmbeddingModel);

/// Loads a model saved by `hifuse train` (JSON). On success writes a handle
/// to `*out`; release it with `hifuse_model_free`.
///
/// # Safety
/// `path` must be a NUL-terminated string, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hifuse_model_load(
    path: *const c_char,
    out: *mut *mut HifuseModel,
) -> i32 {
    guarded(|| {
        if path.is_null() || out.is_null() {
            return fail(HIFUSE_ERR_ARG, "path or out is NULL".to_string());
        }
        let path = match CStr::from_ptr(path).to_str() {
            Ok(s) => s,
            Err(_) => return fail(HIFUSE_ERR_ARG, "path is not valid UTF-8".to_string()),
        };
        match EmbeddingModel::load(Path::new(path)) {
            Ok(m) => {
                *out = Box::into_raw(Box::new(HifuseModel(m)));
                HIFUSE_OK
            }
            Err(e) => fail_err(e),
        }
    })
}

/// Releases a model handle. NULL is a no-op.
///
/// # Safety
/// `m` must be NULL or a handle from `hifuse_model_load` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hifuse_model_free(m: *mut HifuseModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Writes the model's input feature count and embedding dimension.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn hifuse_model_dims(
    m: *const HifuseModel,
    f_dim: *mut usize,
    k: *mut usize,
) -> i32 {
    guarded(|| {
        if m.is_null() || f_dim.is_null() || k.is_null() {
            return fail(HIFUSE_ERR_ARG, "model or out pointer is NULL".to_string());
        }
        let model = &(*m).0;
        *f_dim = model.scaler.mean.len();
        *k = model.center.len();
        HIFUSE_OK
    })
}

/// Embeds a trajectory: standardizes `features` (row-major `t_len x f_dim`)
/// with the model's stored scaler, applies the network, subtracts the
/// center. Writes row-major `t_len x k` values to `out`.
///
/// # Safety
/// `features` must hold `t_len * f_dim` values and `out` `t_len * k`
/// writable values, with `k` from `hifuse_model_dims`.
#[no_mangle]
pub unsafe extern "C" fn hifuse_model_embed(
    m: *const HifuseModel,
    features: *const f64,
    t_len: usize,
    f_dim: usize,
    out: *mut f64,
) -> i32 {
    guarded(|| {
        if m.is_null() {
            return fail(HIFUSE_ERR_ARG, "model is NULL".to_string());
        }
        let model = &(*m).0;
        let x = match matrix_arg(features, t_len, f_dim, "features") {
            Ok(x) => x,
            Err(c) => return c,
        };
        let traj = match Trajectory::new("ffi", x, None) {
            Ok(t) => t,
            Err(e) => return fail_err(e),
        };
        let y = match model.embed(&traj) {
            Ok(y) => y,
            Err(e) => return fail_err(e),
        };
        let output = match out_arg(out, t_len * y.ncols(), "out") {
            Ok(s) => s,
            Err(c) => return c,
        };
        for (dst, src) in output.iter_mut().zip(y.iter()) {
            *dst = *src;
        }
        HIFUSE_OK
    })
}

/// Squared embedding norm per timestep (the raw anomaly score), written to
/// `out[0..t_len]`.
///
/// # Safety
/// `features` must hold `t_len * f_dim` values, `out` `t_len` writable ones.
#[no_mangle]
pub unsafe extern "C" fn hifuse_model_anomaly_score(
    m: *const HifuseModel,
    features: *const f64,
    t_len: usize,
    f_dim: usize,
    out: *mut f64,
) -> i32 {
    guarded(|| {
        if m.is_null() {
            return fail(HIFUSE_ERR_ARG, "model is NULL".to_string());
        }
        let model = &(*m).0;
        let x = match matrix_arg(features, t_len, f_dim, "features") {
            Ok(x) => x,
            Err(c) => return c,
        };
        let traj = match Trajectory::new("ffi", x, None) {
            Ok(t) => t,
            Err(e) => return fail_err(e),
        };
        let hi = match model.anomaly_score(&traj) {
            Ok(h) => h,
            Err(e) => return fail_err(e),
        };
        let output = match out_arg(out, t_len, "out") {
            Ok(s) => s,
            Err(c) => return c,
        };
        output.copy_from_slice(&hi.values);
        HIFUSE_OK
    })
}

// ---------------------------------------------------------------------------
// Fusion

struct FusionBuilder {
    cfg: FusionConfig,
    train: Vec<(Array2<f64>, IdealSpaceSpec)>,
    test: Option<(Array2<f64>, IdealSpaceSpec)>,
    result: Option<FitOutcome>,
}

/// Opaque fusion-problem handle.
pub struct HifuseFusion(FusionBuilder);

/// Creates a fusion problem. `beta` is the ridge weight, `iters` the
/// iteration cap, `tol` the early-exit threshold on the objective decrease,
/// `isotonic` nonzero to include the monotonicity constraint. Release with
/// `hifuse_fusion_free`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hifuse_fusion_new(
    beta: f64,
    iters: usize,
    tol: f64,
    isotonic: i32,
    out: *mut *mut HifuseFusion,
) -> i32 {
    guarded(|| {
        if out.is_null() {
            return fail(HIFUSE_ERR_ARG, "out is NULL".to_string());
        }
        let cfg = FusionConfig {
            beta,
            iters,
            tol,
            isotonic: isotonic != 0,
            ..FusionConfig::default()
        };
        if let Err(e) = cfg.validate() {
            return fail_err(e);
        }
        *out = Box::into_raw(Box::new(HifuseFusion(FusionBuilder {
            cfg,
            train: Vec::new(),
            test: None,
            result: None,
        })));
        HIFUSE_OK
    })
}

/// Releases a fusion handle. NULL is a no-op.
///
/// # Safety
/// `f` must be NULL or a handle from `hifuse_fusion_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hifuse_fusion_free(f: *mut HifuseFusion) {
    if !f.is_null() {
        drop(Box::from_raw(f));
    }
}

/// Adds a run-to-failure training trajectory: condition indicators `y`
/// (row-major `t_len x k`), healthy for the first `t_healthy` steps and
/// faulty from step `t_faulty` on (1-based, `t_healthy < t_faulty <=
/// t_len`). Invalidates any previous solve.
///
/// # Safety
/// `y` must hold `t_len * k` readable values.
#[no_mangle]
pub unsafe extern "C" fn hifuse_fusion_add_train(
    f: *mut HifuseFusion,
    y: *const f64,
    t_len: usize,
    k: usize,
    t_healthy: usize,
    t_faulty: usize,
) -> i32 {
    guarded(|| {
        if f.is_null() {
            return fail(HIFUSE_ERR_ARG, "fusion handle is NULL".to_string());
        }
        let b = &mut (*f).0;
        let y = match matrix_arg(y, t_len, k, "y") {
            Ok(m) => m,
            Err(c) => return c,
        };
        let spec = IdealSpaceSpec::new(t_healthy, t_faulty);
        if let Err(e) = spec.validate(t_len) {
            return fail_err(e);
        }
        b.train.push((y, spec));
        b.result = None;
        HIFUSE_OK
    })
}

/// Sets the test trajectory, constrained only over its healthy prefix of
/// `t_healthy` steps. Invalidates any previous solve.
///
/// # Safety
/// `y` must hold `t_len * k` readable values.
#[no_mangle]
pub unsafe extern "C" fn hifuse_fusion_set_test(
    f: *mut HifuseFusion,
    y: *const f64,
    t_len: usize,
    k: usize,
    t_healthy: usize,
) -> i32 {
    guarded(|| {
        if f.is_null() {
            return fail(HIFUSE_ERR_ARG, "fusion handle is NULL".to_string());
        }
        let b = &mut (*f).0;
        let y = match matrix_arg(y, t_len, k, "y") {
            Ok(m) => m,
            Err(c) => return c,
        };
        let spec = IdealSpaceSpec::healthy_prefix(t_healthy);
        if let Err(e) = spec.validate(t_len) {
            return fail_err(e);
        }
        b.test = Some((y, spec));
        b.result = None;
        HIFUSE_OK
    })
}

/// Runs the alternating solver on the trajectories added so far. Requires
/// at least one training trajectory and a test trajectory, all with the
/// same `k`.
///
/// # Safety
/// `f` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn hifuse_fusion_solve(f: *mut HifuseFusion) -> i32 {
    guarded(|| {
        if f.is_null() {
            return fail(HIFUSE_ERR_ARG, "fusion handle is NULL".to_string());
        }
        let b = &mut (*f).0;
        let test = match &b.test {
            Some(t) => t,
            None => return fail(HIFUSE_ERR_STATE, "no test trajectory set".to_string()),
        };
        if b.train.is_empty() {
            return fail(HIFUSE_ERR_STATE, "no training trajectories added".to_string());
        }
        let train: Vec<(ArrayView2<f64>, IdealSpaceSpec)> =
            b.train.iter().map(|(y, s)| (y.view(), *s)).collect();
        match fit(&train, (test.0.view(), test.1), &b.cfg) {
            Ok(outcome) => {
                b.result = Some(outcome);
                HIFUSE_OK
            }
            Err(e) => fail_err(e),
        }
    })
}

/// Writes the solved dimensions: fusion weight count `k` and test-HI length
/// `t_test`. Fails with `HIFUSE_ERR_STATE` before a successful solve.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn hifuse_fusion_dims(
    f: *const HifuseFusion,
    k: *mut usize,
    t_test: *mut usize,
) -> i32 {
    guarded(|| {
        if f.is_null() || k.is_null() || t_test.is_null() {
            return fail(HIFUSE_ERR_ARG, "handle or out pointer is NULL".to_string());
        }
        match &(*f).0.result {
            Some(r) => {
                *k = r.state.w.len();
                *t_test = r.test_hi.values.len();
                HIFUSE_OK
            }
            None => fail(HIFUSE_ERR_STATE, "not solved yet".to_string()),
        }
    })
}

/// Copies the fusion weights into `out[0..k]` (`k` from
/// `hifuse_fusion_dims`).
///
/// # Safety
/// `out` must hold `k` writable values.
#[no_mangle]
pub unsafe extern "C" fn hifuse_fusion_weights(
    f: *const HifuseFusion,
    out: *mut f64,
    k: usize,
) -> i32 {
    guarded(|| {
        if f.is_null() {
            return fail(HIFUSE_ERR_ARG, "fusion handle is NULL".to_string());
        }
        let r = match &(*f).0.result {
            Some(r) => r,
            None => return fail(HIFUSE_ERR_STATE, "not solved yet".to_string()),
        };
        if k != r.state.w.len() {
            return fail(
                HIFUSE_ERR_ARG,
                format!("weight buffer holds {k}, solve produced {}", r.state.w.len()),
            );
        }
        let output = match out_arg(out, k, "out") {
            Ok(s) => s,
            Err(c) => return c,
        };
        output.copy_from_slice(&r.state.w);
        HIFUSE_OK
    })
}

/// Copies the fused test health index (the projected, monotone `z`) into
/// `out[0..t_test]`.
///
/// # Safety
/// `out` must hold `t_test` writable values.
#[no_mangle]
pub unsafe extern "C" fn hifuse_fusion_test_hi(
    f: *const HifuseFusion,
    out: *mut f64,
    t_test: usize,
) -> i32 {
    guarded(|| {
        if f.is_null() {
            return fail(HIFUSE_ERR_ARG, "fusion handle is NULL".to_string());
        }
        let r = match &(*f).0.result {
            Some(r) => r,
            None => return fail(HIFUSE_ERR_STATE, "not solved yet".to_string()),
        };
        let values = &r.test_hi.values;
        if t_test != values.len() {
            return fail(
                HIFUSE_ERR_ARG,
                format!("HI buffer holds {t_test}, solve produced {}", values.len()),
            );
        }
        let output = match out_arg(out, t_test, "out") {
            Ok(s) => s,
            Err(c) => return c,
        };
        output.copy_from_slice(values);
        HIFUSE_OK
    })
}

/// Copies training trajectory `idx`'s fused health index into
/// `out[0..t_len]`, where `t_len` is that trajectory's length.
///
/// # Safety
/// `out` must hold that trajectory's length in writable values.
#[no_mangle]
pub unsafe extern "C" fn hifuse_fusion_train_hi(
    f: *const HifuseFusion,
    idx: usize,
    out: *mut f64,
    t_len: usize,
) -> i32 {
    guarded(|| {
        if f.is_null() {
            return fail(HIFUSE_ERR_ARG, "fusion handle is NULL".to_string());
        }
        let b = &(*f).0;
        let r = match &b.result {
            Some(r) => r,
            None => return fail(HIFUSE_ERR_STATE, "not solved yet".to_string()),
        };
        if idx >= b.train.len() {
            return fail(
                HIFUSE_ERR_ARG,
                format!("train index {idx} out of range ({} trajectories)", b.train.len()),
            );
        }
        let z = &r.state.z_per_traj[idx];
        if t_len != z.len() {
            return fail(
                HIFUSE_ERR_ARG,
                format!("HI buffer holds {t_len}, trajectory has {}", z.len()),
            );
        }
        let output = match out_arg(out, t_len, "out") {
            Ok(s) => s,
            Err(c) => return c,
        };
        output.copy_from_slice(z);
        HIFUSE_OK
    })
}
