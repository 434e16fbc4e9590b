//! C ABI over the `rt4u` library.
//!
//! Conventions:
//! - Every fallible function returns an [`Rt4uStatus`]; `RT4U_STATUS_OK` is zero.
//!   On failure, [`rt4u_last_error_message`] returns a description for the
//!   calling thread.
//! - Calibrations and models are opaque handles created by `*_fit`/`*_load`
//!   and released with the matching `*_free`.
//! - Matrices are dense, row-major `double` buffers; the caller owns all
//!   input and output buffers.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use rt4u::aggregate::{aggregate_logits, aggregate_logits_mean};
use rt4u::classifier::{predict_logits, HistoryRecord, ModelParams, PredictionHistory};
use rt4u::conformal::{calibrate, predict_set, predict_set_nonempty, ConformalCalibration, QHat};
use rt4u::data::{Label, LogitVector, ProbabilityVector};
use rt4u::io::{read_json, CalibrationFile, ModelFile};
use rt4u::rt4u::form_pseudo_labels;
use rt4u::Error;

/// Status codes. Values 2-4 match the command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rt4uStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidData = 3,
    Numeric = 4,
    Panic = 5,
}

/// Fitted conformal calibration.
pub struct Rt4uCalibration(ConformalCalibration);

/// Trained classifier parameters.
pub struct Rt4uModel(ModelParams);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("nul bytes removed"));
}

fn status_of(e: &Error) -> Rt4uStatus {
    match e.exit_code() {
        2 => Rt4uStatus::InvalidArgument,
        4 => Rt4uStatus::Numeric,
        _ => Rt4uStatus::InvalidData,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (Rt4uStatus, String)>) -> Rt4uStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            Rt4uStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            Rt4uStatus::Panic
        }
    }
}

trait IntoFfi<T> {
    fn ffi(self) -> Result<T, (Rt4uStatus, String)>;
}

impl<T> IntoFfi<T> for rt4u::Result<T> {
    fn ffi(self) -> Result<T, (Rt4uStatus, String)> {
        self.map_err(|e| (status_of(&e), e.to_string()))
    }
}

fn null(what: &str) -> (Rt4uStatus, String) {
    (Rt4uStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> (Rt4uStatus, String) {
    (Rt4uStatus::InvalidArgument, msg.into())
}

/// # Safety
/// `p` must be null or valid for `len` reads.
unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], (Rt4uStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// # Safety
/// `p` must be null or valid for `len` writes.
unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], (Rt4uStatus, String)> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

/// # Safety
/// `p` must be null or a NUL-terminated string.
unsafe fn c_path<'a>(p: *const c_char) -> Result<&'a Path, (Rt4uStatus, String)> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|_| invalid("path is not valid UTF-8"))
}

fn check_k(k: usize) -> Result<(), (Rt4uStatus, String)> {
    if k < 2 {
        return Err(invalid(format!("num_classes must be >= 2, got {k}")));
    }
    Ok(())
}

fn probs_rows(data: &[f64], n: usize, k: usize) -> Result<Vec<ProbabilityVector>, (Rt4uStatus, String)> {
    (0..n)
        .map(|i| ProbabilityVector::new(data[i * k..(i + 1) * k].to_vec()).ffi())
        .collect()
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rt4u_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or an empty string.
/// Valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn rt4u_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Numerically stable softmax of `k` logits into `out`.
///
/// # Safety
/// `logits` and `out` must each be valid for `k` doubles.
#[no_mangle]
pub unsafe extern "C" fn rt4u_softmax(logits: *const f64, k: usize, out: *mut f64) -> Rt4uStatus {
    guard(|| {
        let z = LogitVector::new(slice(logits, k, "logits")?.to_vec()).ffi()?;
        if z.is_empty() {
            return Err(invalid("k must be >= 1"));
        }
        slice_mut(out, k, "out")?.copy_from_slice(ProbabilityVector::from_logits(&z).as_slice());
        Ok(())
    })
}

/// Fit a conformal calibration from `n` probability rows (`n x k`) and their
/// labels.
///
/// # Safety
/// `probs` valid for `n * k` doubles, `labels` for `n` values, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rt4u_calibration_fit(
    probs: *const f64,
    labels: *const usize,
    n: usize,
    k: usize,
    alpha: f64,
    out: *mut *mut Rt4uCalibration,
) -> Rt4uStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        check_k(k)?;
        let rows = probs_rows(slice(probs, n * k, "probs")?, n, k)?;
        let labels: Vec<Label> = slice(labels, n, "labels")?.iter().map(|&y| Label(y)).collect();
        let cal = calibrate(&rows, &labels, alpha).ffi()?;
        *out = Box::into_raw(Box::new(Rt4uCalibration(cal)));
        Ok(())
    })
}

/// Load a calibration written by `rt4u conformal` (`calibration.json`).
///
/// # Safety
/// `path` must be a NUL-terminated string, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rt4u_calibration_load(path: *const c_char, out: *mut *mut Rt4uCalibration) -> Rt4uStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let file: CalibrationFile = read_json(c_path(path)?).ffi()?;
        *out = Box::into_raw(Box::new(Rt4uCalibration(file.calibration)));
        Ok(())
    })
}

/// Threshold of the calibration; `INFINITY` when every set is the full
/// label set.
///
/// # Safety
/// `cal` must be a live handle, `q_hat` writable.
#[no_mangle]
pub unsafe extern "C" fn rt4u_calibration_q_hat(cal: *const Rt4uCalibration, q_hat: *mut f64) -> Rt4uStatus {
    guard(|| {
        let cal = cal.as_ref().ok_or_else(|| null("cal"))?;
        let q = q_hat.as_mut().ok_or_else(|| null("q_hat"))?;
        *q = match cal.0.q_hat {
            QHat::Finite(v) => v,
            QHat::Infinite => f64::INFINITY,
        };
        Ok(())
    })
}

/// Release a calibration handle. Null is a no-op.
///
/// # Safety
/// `cal` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rt4u_calibration_free(cal: *mut Rt4uCalibration) {
    if !cal.is_null() {
        drop(Box::from_raw(cal));
    }
}

/// Prediction set for one probability vector. Sorted member indices are
/// written to `members` (capacity `k`) and their count to `len`.
///
/// # Safety
/// `cal` live handle, `probs` valid for `k` doubles, `members` for `k`
/// writes, `len` writable.
#[no_mangle]
pub unsafe extern "C" fn rt4u_predict_set(
    cal: *const Rt4uCalibration,
    probs: *const f64,
    k: usize,
    force_nonempty: bool,
    members: *mut usize,
    len: *mut usize,
) -> Rt4uStatus {
    guard(|| {
        let cal = cal.as_ref().ok_or_else(|| null("cal"))?;
        let p = ProbabilityVector::new(slice(probs, k, "probs")?.to_vec()).ffi()?;
        let set = if force_nonempty {
            predict_set_nonempty(&p, &cal.0)
        } else {
            predict_set(&p, &cal.0)
        };
        let len = len.as_mut().ok_or_else(|| null("len"))?;
        let out = slice_mut(members, k, "members")?;
        out[..set.len()].copy_from_slice(&set.members);
        *len = set.len();
        Ok(())
    })
}

/// Pseudo-labels from a prediction history laid out as `n x epochs x k`
/// logits. Writes `n x k` probabilities to `out`.
///
/// # Safety
/// `history` valid for `n * epochs * k` doubles, `out` for `n * k`.
#[no_mangle]
pub unsafe extern "C" fn rt4u_form_pseudo_labels(
    history: *const f64,
    n: usize,
    epochs: usize,
    k: usize,
    out: *mut f64,
) -> Rt4uStatus {
    guard(|| {
        check_k(k)?;
        if n == 0 || epochs == 0 {
            return Err(invalid("n and epochs must be >= 1"));
        }
        let h = slice(history, n * epochs * k, "history")?;
        let records = (0..n)
            .map(|i| HistoryRecord {
                id: i.to_string(),
                epochs: (0..epochs)
                    .map(|t| {
                        let at = (i * epochs + t) * k;
                        h[at..at + k].to_vec()
                    })
                    .collect(),
            })
            .collect();
        let labels = form_pseudo_labels(&PredictionHistory::from_records(records).ffi()?).ffi()?;
        let out = slice_mut(out, n * k, "out")?;
        for (i, (_, p)) in labels.iter().enumerate() {
            out[i * k..(i + 1) * k].copy_from_slice(p.as_slice());
        }
        Ok(())
    })
}

/// Study-level probabilities from `m` instance logit rows (`m x k`):
/// softmax of the summed logits, or of their mean when `mean` is set.
///
/// # Safety
/// `logits` valid for `m * k` doubles, `out` for `k`.
#[no_mangle]
pub unsafe extern "C" fn rt4u_aggregate_logits(
    logits: *const f64,
    m: usize,
    k: usize,
    mean: bool,
    out: *mut f64,
) -> Rt4uStatus {
    guard(|| {
        check_k(k)?;
        let z = slice(logits, m * k, "logits")?;
        let rows = (0..m)
            .map(|i| LogitVector::new(z[i * k..(i + 1) * k].to_vec()).ffi())
            .collect::<Result<Vec<_>, _>>()?;
        let p = if mean {
            aggregate_logits_mean(&rows)
        } else {
            aggregate_logits(&rows)
        }
        .ffi()?;
        slice_mut(out, k, "out")?.copy_from_slice(p.as_slice());
        Ok(())
    })
}

/// Load a model written by `rt4u train` or `rt4u rt4u` (`model.json`).
///
/// # Safety
/// `path` must be a NUL-terminated string, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rt4u_model_load(path: *const c_char, out: *mut *mut Rt4uModel) -> Rt4uStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let file: ModelFile = read_json(c_path(path)?).ffi()?;
        file.model.validate().ffi()?;
        *out = Box::into_raw(Box::new(Rt4uModel(file.model)));
        Ok(())
    })
}

/// Input dimension and class count of a model.
///
/// # Safety
/// `model` live handle; `input_dim` and `num_classes` writable.
#[no_mangle]
pub unsafe extern "C" fn rt4u_model_shape(
    model: *const Rt4uModel,
    input_dim: *mut usize,
    num_classes: *mut usize,
) -> Rt4uStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        *input_dim.as_mut().ok_or_else(|| null("input_dim"))? = m.0.input_dim;
        *num_classes.as_mut().ok_or_else(|| null("num_classes"))? = m.0.num_classes;
        Ok(())
    })
}

/// Logits for `n` feature rows (`n x dim`) into `out` (`n x num_classes`).
///
/// # Safety
/// `model` live handle; `features` valid for `n * dim` doubles; `out` for
/// `n * num_classes`.
#[no_mangle]
pub unsafe extern "C" fn rt4u_model_predict_logits(
    model: *const Rt4uModel,
    features: *const f64,
    n: usize,
    dim: usize,
    out: *mut f64,
) -> Rt4uStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.0;
        if dim != m.input_dim {
            return Err(invalid(format!(
                "dim {dim} does not match model input dimension {}",
                m.input_dim
            )));
        }
        let x = slice(features, n * dim, "features")?;
        let k = m.num_classes;
        let out = slice_mut(out, n * k, "out")?;
        for i in 0..n {
            let z = predict_logits(m, &x[i * dim..(i + 1) * dim]).ffi()?;
            out[i * k..(i + 1) * k].copy_from_slice(z.as_slice());
        }
        Ok(())
    })
}

/// Release a model handle. Null is a no-op.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rt4u_model_free(model: *mut Rt4uModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
