//! C ABI over checkpoint inference and the analysis metrics.
//!
//! Every fallible call returns a [`DlStatus`]; on failure the message is
//! available from [`dl_last_error_message`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use disentangle_lab::analysis::{f1_report, gdv};
use disentangle_lab::data::normalize;
use disentangle_lab::models::{load_checkpoint, Model};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Checkpoint = 3,
    Numerical = 4,
    Panic = 5,
}

/// Ensemble loaded from a checkpoint file.
pub struct DlModel {
    members: Vec<Model>,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DlF1Report {
    pub f1_d: f64,
    pub f1_nd: f64,
    pub f1_avg: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl std::fmt::Display) {
    let text = CString::new(msg.to_string().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = text);
}

fn guard(f: impl FnOnce() -> Result<(), (DlStatus, String)>) -> DlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            DlStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            DlStatus::Panic
        }
    }
}

fn null(what: &str) -> (DlStatus, String) {
    (DlStatus::NullPointer, format!("{what} is null"))
}

fn invalid(e: impl std::fmt::Display) -> (DlStatus, String) {
    (DlStatus::InvalidArgument, e.to_string())
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn dl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a checkpoint and stores a new handle in `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn dl_model_load(path: *const c_char, out: *mut *mut DlModel) -> DlStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let path = CStr::from_ptr(path).to_str().map_err(invalid)?;
        let members = load_checkpoint(Path::new(path))
            .and_then(|c| c.into_models())
            .map_err(|e| (DlStatus::Checkpoint, e.to_string()))?;
        if members.is_empty() {
            return Err((DlStatus::Checkpoint, "checkpoint has no members".into()));
        }
        *out = Box::into_raw(Box::new(DlModel { members }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`dl_model_load`] and not be freed already; null
/// is ignored.
#[no_mangle]
pub unsafe extern "C" fn dl_model_free(model: *mut DlModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn dl_model_num_members(model: *const DlModel) -> usize {
    model.as_ref().map_or(0, |m| m.members.len())
}

/// Samples per input segment; 0 for a null handle.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn dl_model_segment_len(model: *const DlModel) -> usize {
    model
        .as_ref()
        .map_or(0, |m| m.members[0].spec().segment_len)
}

/// Embedding width; 0 for a null handle.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn dl_model_embedding_dim(model: *const DlModel) -> usize {
    model
        .as_ref()
        .map_or(0, |m| m.members[0].spec().embedding_dim)
}

/// Runs one member on a raw segment of `dl_model_segment_len` samples. The
/// segment is normalized to zero mean and unit variance first, as in
/// training. Writes the condition probability and the embedding.
///
/// # Safety
/// `samples` must hold `len` floats, `out_embedding` room for
/// `embedding_len` floats and `out_probability` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dl_model_forward(
    model: *const DlModel,
    member: usize,
    samples: *const f32,
    len: usize,
    out_probability: *mut f64,
    out_embedding: *mut f32,
    embedding_len: usize,
) -> DlStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        if samples.is_null() || out_probability.is_null() || out_embedding.is_null() {
            return Err(null("buffer"));
        }
        let m = model
            .members
            .get(member)
            .ok_or_else(|| invalid(format!("member {member} of {}", model.members.len())))?;
        let dim = m.spec().embedding_dim;
        if embedding_len != dim {
            return Err(invalid(format!(
                "embedding buffer holds {embedding_len}, need {dim}"
            )));
        }
        let segment = normalize(std::slice::from_raw_parts(samples, len));
        let out = m.forward(&segment).map_err(invalid)?;
        let z = out.mdd_logit.data()[0] as f64;
        let emb = out.embedding.data();
        if !z.is_finite() || emb.iter().any(|v| !v.is_finite()) {
            return Err((DlStatus::Numerical, "non-finite model output".into()));
        }
        *out_probability = 1.0 / (1.0 + (-z).exp());
        std::slice::from_raw_parts_mut(out_embedding, dim).copy_from_slice(emb);
        Ok(())
    })
}

/// Sign-flipped GDV of `n` row-major points of width `dim`.
///
/// # Safety
/// `points` must hold `n * dim` doubles, `labels` `n` integers and `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn dl_gdv(
    points: *const f64,
    n: usize,
    dim: usize,
    labels: *const i64,
    out: *mut f64,
) -> DlStatus {
    guard(|| {
        if points.is_null() || labels.is_null() || out.is_null() {
            return Err(null("buffer"));
        }
        if dim == 0 {
            return Err(invalid("dim must be positive"));
        }
        let total = n
            .checked_mul(dim)
            .ok_or_else(|| invalid("n * dim overflows"))?;
        let flat = std::slice::from_raw_parts(points, total);
        let rows: Vec<Vec<f64>> = flat.chunks(dim).map(<[f64]>::to_vec).collect();
        let labels = std::slice::from_raw_parts(labels, n);
        *out = gdv(&rows, labels).map_err(invalid)?;
        Ok(())
    })
}

/// Per-class and macro F1 with 1 as the positive class.
///
/// # Safety
/// `pred` and `truth` must hold `n` bytes each; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dl_f1_report(
    pred: *const u8,
    truth: *const u8,
    n: usize,
    out: *mut DlF1Report,
) -> DlStatus {
    guard(|| {
        if pred.is_null() || truth.is_null() || out.is_null() {
            return Err(null("buffer"));
        }
        let pred = std::slice::from_raw_parts(pred, n);
        let truth = std::slice::from_raw_parts(truth, n);
        if let Some(v) = pred.iter().chain(truth).find(|&&v| v > 1) {
            return Err(invalid(format!("labels must be 0 or 1, got {v}")));
        }
        let r = f1_report(pred, truth).map_err(invalid)?;
        *out = DlF1Report {
            f1_d: r.f1_d,
            f1_nd: r.f1_nd,
            f1_avg: r.f1_avg,
        };
        Ok(())
    })
}
