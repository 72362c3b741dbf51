//! C ABI over `copula_fusion`.
//!
//! Every fallible function returns a [`CfStatus`]; on failure the message
//! is available from [`cf_last_error_message`] on the same thread. Objects
//! are opaque handles released with their `_free` function. Panics never
//! cross the boundary: they are caught and reported as
//! [`CfStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use copula_fusion::copula::{Copula, CopulaFamily, CopulaModel, CorrelationMatrix};
use copula_fusion::data::{BeliefTensor, LabelMap};
use copula_fusion::fusion::{ClassModelSet, Fuser};
use copula_fusion::metrics::{class_accuracy, iou, overall_accuracy, ConfusionMatrix};
use copula_fusion::Error;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CfStatus {
    Ok = 0,
    NullPointer = 1,
    Domain = 2,
    Capability = 3,
    Usage = 4,
    Format = 5,
    Data = 6,
    Estimation = 7,
    Selection = 8,
    Config = 9,
    Io = 10,
    Json = 11,
    InvalidUtf8 = 12,
    Panic = 99,
}

/// Copula families, in the library's order.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CfFamily {
    Independence = 0,
    Gaussian = 1,
    StudentT = 2,
    Clayton = 3,
    Frank = 4,
    Gumbel = 5,
}

fn family_from_code(code: u32) -> Result<CopulaFamily, Fail> {
    CopulaFamily::ALL
        .get(code as usize)
        .copied()
        .ok_or_else(|| Fail(CfStatus::Usage, format!("unknown family code {code}")))
}

/// Opaque copula evaluator.
pub struct CfCopula {
    inner: Copula,
}

/// Opaque fitted class model set.
pub struct CfModel {
    inner: ClassModelSet,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> CfStatus {
    match e {
        Error::Domain(_) => CfStatus::Domain,
        Error::Capability(_) => CfStatus::Capability,
        Error::Usage(_) => CfStatus::Usage,
        Error::Format { .. } => CfStatus::Format,
        Error::Data(_) => CfStatus::Data,
        Error::Estimation(_) => CfStatus::Estimation,
        Error::Selection(_) => CfStatus::Selection,
        Error::Config(_) => CfStatus::Config,
        Error::Io { .. } => CfStatus::Io,
        Error::Json { .. } => CfStatus::Json,
    }
}

struct Fail(CfStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(CfStatus::NullPointer, format!("{what} is null"))
}

/// Run `f`, recording any error or panic for `cf_last_error_message`.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CfStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            CfStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn string<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(CfStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn cf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Create a copula. `family` is a `CfFamily` value. `theta` is read by
/// Archimedean families, `nu` by Student-t, and `sigma` (row-major
/// `dim × dim`) by the elliptical families; unused arguments are ignored
/// and `sigma` may then be null.
///
/// # Safety
/// `sigma` must point to `dim * dim` doubles when read; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn cf_copula_new(
    family: u32,
    dim: usize,
    theta: f64,
    nu: f64,
    sigma: *const f64,
    out_copula: *mut *mut CfCopula,
) -> CfStatus {
    guard(|| {
        let target = out(out_copula, "out_copula")?;
        let family = family_from_code(family)?;
        let sigma_matrix = || -> Result<CorrelationMatrix, Fail> {
            let s = slice(sigma, dim.saturating_mul(dim), "sigma")?;
            Ok(CorrelationMatrix::new(dim, s.to_vec())?)
        };
        let model = match family {
            CopulaFamily::Independence => CopulaModel::independence(dim)?,
            CopulaFamily::Gaussian => CopulaModel::gaussian(sigma_matrix()?)?,
            CopulaFamily::StudentT => CopulaModel::student_t(sigma_matrix()?, nu)?,
            f => CopulaModel::archimedean(f, dim, theta)?,
        };
        let c = Copula::new(&model)?;
        *target = Box::into_raw(Box::new(CfCopula { inner: c }));
        Ok(())
    })
}

/// Create a copula from its JSON form, e.g.
/// `{"family": "clayton", "dim": 2, "theta": 2.0}`.
///
/// # Safety
/// `json` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cf_copula_from_json(
    json: *const c_char,
    out_copula: *mut *mut CfCopula,
) -> CfStatus {
    guard(|| {
        let target = out(out_copula, "out_copula")?;
        let text = string(json, "json")?;
        let model: CopulaModel = serde_json::from_str(text)
            .map_err(|e| Fail(CfStatus::Json, format!("copula JSON: {e}")))?;
        let c = Copula::new(&model)?;
        *target = Box::into_raw(Box::new(CfCopula { inner: c }));
        Ok(())
    })
}

/// # Safety
/// `copula` must come from a `cf_copula_*` constructor or be null.
#[no_mangle]
pub unsafe extern "C" fn cf_copula_free(copula: *mut CfCopula) {
    if !copula.is_null() {
        drop(Box::from_raw(copula));
    }
}

/// # Safety
/// `copula` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cf_copula_dim(copula: *const CfCopula) -> usize {
    copula.as_ref().map_or(0, |c| c.inner.dim())
}

/// # Safety
/// `u` must point to `len` doubles; `out_value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cf_copula_log_density(
    copula: *const CfCopula,
    u: *const f64,
    len: usize,
    out_value: *mut f64,
) -> CfStatus {
    guard(|| {
        let c = copula.as_ref().ok_or_else(|| null("copula"))?;
        let target = out(out_value, "out_value")?;
        *target = c.inner.log_density(slice(u, len, "u")?)?;
        Ok(())
    })
}

/// # Safety
/// As [`cf_copula_log_density`].
#[no_mangle]
pub unsafe extern "C" fn cf_copula_cdf(
    copula: *const CfCopula,
    u: *const f64,
    len: usize,
    out_value: *mut f64,
) -> CfStatus {
    guard(|| {
        let c = copula.as_ref().ok_or_else(|| null("copula"))?;
        let target = out(out_value, "out_value")?;
        *target = c.inner.cdf(slice(u, len, "u")?)?;
        Ok(())
    })
}

/// Draw `n` rows into `out_rows` (row-major `n × dim`), deterministic in
/// `seed`.
///
/// # Safety
/// `out_rows` must have room for `n * dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn cf_copula_sample(
    copula: *const CfCopula,
    n: usize,
    seed: u64,
    out_rows: *mut f64,
) -> CfStatus {
    guard(|| {
        let c = copula.as_ref().ok_or_else(|| null("copula"))?;
        let draws = copula_fusion::copula::sample_copula(c.inner.model(), n, seed)?;
        let dst = slice_mut(out_rows, n * c.inner.dim(), "out_rows")?;
        for (d, s) in dst.iter_mut().zip(draws.iter()) {
            *d = *s;
        }
        Ok(())
    })
}

/// Load and validate a model file written by `copula-fusion fit`.
///
/// # Safety
/// `path` must be a nul-terminated string; `out_model` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cf_model_load(path: *const c_char, out_model: *mut *mut CfModel) -> CfStatus {
    guard(|| {
        let target = out(out_model, "out_model")?;
        let set = copula_fusion::io::read_model(string(path, "path")?)?;
        *target = Box::into_raw(Box::new(CfModel { inner: set }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`cf_model_load`] or be null.
#[no_mangle]
pub unsafe extern "C" fn cf_model_free(model: *mut CfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cf_model_classes(model: *const CfModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.classes)
}

/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cf_model_classifiers(model: *const CfModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.classifiers)
}

/// Fuse one pixel. `scores` is the row-major `L × M` matrix of classifier
/// scores; `out_posteriors` (nullable) receives `M` normalized values.
///
/// # Safety
/// Buffers must have the sizes stated above.
#[no_mangle]
pub unsafe extern "C" fn cf_model_fuse_pixel(
    model: *const CfModel,
    scores: *const f64,
    out_label: *mut u32,
    out_posteriors: *mut f64,
) -> CfStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.inner;
        let (l, k) = (m.classifiers, m.classes);
        let s = slice(scores, l * k, "scores")?;
        let matrix = ndarray::Array2::from_shape_vec((l, k), s.to_vec()).expect("shape");
        let label = out(out_label, "out_label")?;
        let r = Fuser::new(m)?.fuse_pixel(&matrix)?;
        *label = r.label as u32;
        if !out_posteriors.is_null() {
            slice_mut(out_posteriors, k, "out_posteriors")?.copy_from_slice(&r.posteriors);
        }
        Ok(())
    })
}

/// Fuse an image. `tensors` holds `L` pointers, each to an
/// `height × width × M` f32 array in (y, x, class) order. Labels go to
/// `out_labels` (`height × width`); `out_scores` (nullable) receives the
/// normalized posteriors; `out_fallbacks` (nullable) the number of pixels
/// decided by the pooling fallback.
///
/// # Safety
/// Buffers must have the sizes stated above.
#[no_mangle]
pub unsafe extern "C" fn cf_model_fuse_image(
    model: *const CfModel,
    tensors: *const *const f32,
    height: usize,
    width: usize,
    out_labels: *mut u16,
    out_scores: *mut f32,
    out_fallbacks: *mut usize,
) -> CfStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.inner;
        let (l, k) = (m.classifiers, m.classes);
        let n = height * width * k;
        let ptrs = slice(tensors, l, "tensors")?;
        let inputs = ptrs
            .iter()
            .map(|&p| Ok(BeliefTensor::new(height, width, k, slice(p, n, "tensor")?.to_vec())?))
            .collect::<Result<Vec<_>, Fail>>()?;
        let labels = slice_mut(out_labels, height * width, "out_labels")?;
        let r = Fuser::new(m)?.fuse_image(&inputs, !out_scores.is_null())?;
        labels.copy_from_slice(r.labels.as_slice());
        if let Some(s) = &r.scores {
            slice_mut(out_scores, n, "out_scores")?.copy_from_slice(s.as_slice());
        }
        if let Some(f) = out_fallbacks.as_mut() {
            *f = r.fallbacks;
        }
        Ok(())
    })
}

/// Segmentation metrics over `n` pixels: overall accuracy (percent), mean
/// class accuracy (percent) and mean IoU (fraction). Ground-truth pixels
/// equal to 65535 are skipped.
///
/// # Safety
/// `pred` and `gt` must point to `n` labels; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn cf_metrics(
    pred: *const u16,
    gt: *const u16,
    n: usize,
    classes: usize,
    out_oa: *mut f64,
    out_mean_ca: *mut f64,
    out_miou: *mut f64,
) -> CfStatus {
    guard(|| {
        let p = LabelMap::new(1, n, slice(pred, n, "pred")?.to_vec())?;
        let g = LabelMap::new(1, n, slice(gt, n, "gt")?.to_vec())?;
        let mut cm = ConfusionMatrix::new(classes);
        cm.accumulate(&p, &g, &[])?;
        let (oa, ca, mi) = (out(out_oa, "out_oa")?, out(out_mean_ca, "out_mean_ca")?, out(out_miou, "out_miou")?);
        *oa = overall_accuracy(&cm)?;
        *ca = class_accuracy(&cm, false)?.1;
        *mi = iou(&cm, false)?.1;
        Ok(())
    })
}
