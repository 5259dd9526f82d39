//! C ABI for `pointembed`.
//!
//! Models and clouds cross the boundary as opaque handles created by
//! `pe_*_new`/`pe_*_load` style functions and released with the matching
//! `pe_*_free`. Fallible functions return a [`PeStatus`]; on failure
//! [`pe_last_error`] describes the most recent error on the calling thread.
//! Panics never unwind into C: they are caught and reported as
//! [`PeStatus::Internal`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use pointembed::geometry::farthest_point_sample;
use pointembed::io::{read_cloud, write_cloud, CloudMeta};
use pointembed::losses::MetricsReport;
use pointembed::pipeline::{embed_cloud, restore_cloud};
use pointembed::{Checkpoint, Error, Model, PointCloud, TrainConfig};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PeStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// Arguments are inconsistent (sizes, counts, out-of-range indices).
    InvalidArgument = 2,
    Io = 3,
    /// Malformed point-cloud file or non-UTF-8 path.
    Parse = 4,
    /// Unreadable or inconsistent checkpoint.
    Checkpoint = 5,
    /// Invalid model configuration.
    Config = 6,
    /// A Rust panic was caught at the boundary.
    Internal = 7,
}

/// A trained (or freshly initialized) embedder/restorer pair.
pub struct PeModel {
    model: Model<f32>,
}

/// A point cloud together with the padding and normalization metadata that
/// `pe_embed` attaches for `pe_restore`.
pub struct PeCloud {
    cloud: PointCloud,
    meta: CloudMeta,
}

/// Evaluation metrics between two clouds. `emd` is NaN for unequal sizes.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PeMetrics {
    pub emd: f64,
    pub hd: f64,
    pub cd: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(PeStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidInput(_) | Error::InvalidArgument(_) | Error::Shape(_) | Error::Index { .. } => {
                PeStatus::InvalidArgument
            }
            Error::Config(_) | Error::Json(_) => PeStatus::Config,
            Error::Parse { .. } => PeStatus::Parse,
            Error::Checkpoint(_) => PeStatus::Checkpoint,
            Error::Io(_) => PeStatus::Io,
            _ => PeStatus::Internal,
        };
        Failure(status, e.to_string())
    }
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

/// Runs `f`, records any failure and converts it to a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            PeStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            PeStatus::Internal
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(PeStatus::NullArgument, format!("{what} is null"))
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    // SAFETY: the caller passes either null or a live handle from this library.
    unsafe { p.as_ref() }.ok_or_else(|| null(what))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    // SAFETY: non-null and NUL-terminated per the API contract.
    let s = unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Failure(PeStatus::Parse, "path is not valid UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    // SAFETY: checked non-null; the caller owns the slot.
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pe_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or an empty string. The
/// pointer stays valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn pe_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer slot.
#[no_mangle]
pub unsafe extern "C" fn pe_model_load(path: *const c_char, out: *mut *mut PeModel) -> PeStatus {
    guard(|| {
        let path = unsafe { path_arg(path) }?;
        let model = Checkpoint::load(&path)?.model();
        unsafe { store(out, PeModel { model }) }
    })
}

/// Builds a freshly initialized model from a JSON configuration. Omitted
/// fields take their defaults, so `"{}"` gives the default model.
///
/// # Safety
/// `config_json` must be a NUL-terminated string and `out` a writable slot.
#[no_mangle]
pub unsafe extern "C" fn pe_model_init(config_json: *const c_char, out: *mut *mut PeModel) -> PeStatus {
    guard(|| {
        if config_json.is_null() {
            return Err(null("config_json"));
        }
        let text = unsafe { CStr::from_ptr(config_json) }.to_string_lossy();
        let config: TrainConfig = serde_json::from_str(&text).map_err(Error::from)?;
        let model = Model::init(config)?;
        unsafe { store(out, PeModel { model }) }
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pe_model_free(model: *mut PeModel) {
    if !model.is_null() {
        // SAFETY: created by Box::into_raw in this library.
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Sampling rate `r` of the model, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pe_model_ratio(model: *const PeModel) -> usize {
    unsafe { model.as_ref() }.map_or(0, |m| m.model.config.ratio)
}

/// Dense point count `N` the model was built for, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pe_model_points(model: *const PeModel) -> usize {
    unsafe { model.as_ref() }.map_or(0, |m| m.model.config.n_points)
}

/// Copies `n` points from the row-major `xyz` buffer (`3 * n` doubles).
///
/// # Safety
/// `xyz` must point to `3 * n` readable doubles and `out` be a writable slot.
#[no_mangle]
pub unsafe extern "C" fn pe_cloud_new(xyz: *const f64, n: usize, out: *mut *mut PeCloud) -> PeStatus {
    guard(|| {
        if xyz.is_null() {
            return Err(null("xyz"));
        }
        let len = n
            .checked_mul(3)
            .ok_or_else(|| Failure(PeStatus::InvalidArgument, "point count overflows".into()))?;
        // SAFETY: the caller guarantees 3 * n readable values.
        let flat = unsafe { std::slice::from_raw_parts(xyz, len) };
        let cloud = PointCloud::from_flat(flat)?;
        unsafe {
            store(
                out,
                PeCloud {
                    cloud,
                    meta: CloudMeta::default(),
                },
            )
        }
    })
}

/// Reads an XYZ or PLY file (chosen by extension), including its metadata.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable slot.
#[no_mangle]
pub unsafe extern "C" fn pe_cloud_read(path: *const c_char, out: *mut *mut PeCloud) -> PeStatus {
    guard(|| {
        let path = unsafe { path_arg(path) }?;
        let (cloud, meta) = read_cloud(&path)?;
        unsafe { store(out, PeCloud { cloud, meta }) }
    })
}

/// Writes a cloud and its metadata as XYZ or PLY (chosen by extension).
///
/// # Safety
/// `cloud` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn pe_cloud_write(cloud: *const PeCloud, path: *const c_char) -> PeStatus {
    guard(|| {
        let c = unsafe { as_ref(cloud, "cloud") }?;
        let path = unsafe { path_arg(path) }?;
        write_cloud(&path, &c.cloud, &c.meta)?;
        Ok(())
    })
}

/// Releases a cloud. Null is ignored.
///
/// # Safety
/// `cloud` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pe_cloud_free(cloud: *mut PeCloud) {
    if !cloud.is_null() {
        // SAFETY: created by Box::into_raw in this library.
        drop(unsafe { Box::from_raw(cloud) });
    }
}

/// Number of points, or 0 for a null handle.
///
/// # Safety
/// `cloud` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pe_cloud_len(cloud: *const PeCloud) -> usize {
    unsafe { cloud.as_ref() }.map_or(0, |c| c.cloud.len())
}

/// Copies the points into `out` as row-major xyz. `capacity` is the number of
/// points `out` can hold and must be at least `pe_cloud_len(cloud)`.
///
/// # Safety
/// `out` must point to `3 * capacity` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn pe_cloud_points(cloud: *const PeCloud, out: *mut f64, capacity: usize) -> PeStatus {
    guard(|| {
        let c = unsafe { as_ref(cloud, "cloud") }?;
        if out.is_null() {
            return Err(null("out"));
        }
        let n = c.cloud.len();
        if capacity < n {
            return Err(Failure(
                PeStatus::InvalidArgument,
                format!("capacity {capacity} is smaller than {n} points"),
            ));
        }
        // SAFETY: the caller guarantees 3 * capacity >= 3 * n writable values.
        let dst = unsafe { std::slice::from_raw_parts_mut(out, 3 * n) };
        dst.copy_from_slice(&c.cloud.to_flat::<f64>());
        Ok(())
    })
}

/// Farthest point sampling: writes `n` indices, the first being `start`.
///
/// # Safety
/// `out_indices` must point to `n` writable `size_t` values.
#[no_mangle]
pub unsafe extern "C" fn pe_fps(
    cloud: *const PeCloud,
    n: usize,
    start: usize,
    out_indices: *mut usize,
) -> PeStatus {
    guard(|| {
        let c = unsafe { as_ref(cloud, "cloud") }?;
        if out_indices.is_null() {
            return Err(null("out_indices"));
        }
        let idx = farthest_point_sample(&c.cloud, n, start)?;
        // SAFETY: the caller guarantees n writable slots and idx has n entries.
        unsafe { std::slice::from_raw_parts_mut(out_indices, idx.len()) }.copy_from_slice(&idx);
        Ok(())
    })
}

/// Self-embeds a dense cloud. Inputs whose size is not a multiple of `r` are
/// padded; the result carries the padding and normalization metadata.
///
/// # Safety
/// Handles must be live and `out` a writable slot.
#[no_mangle]
pub unsafe extern "C" fn pe_embed(
    model: *const PeModel,
    dense: *const PeCloud,
    out: *mut *mut PeCloud,
) -> PeStatus {
    guard(|| {
        let m = unsafe { as_ref(model, "model") }?;
        let d = unsafe { as_ref(dense, "dense") }?;
        let e = embed_cloud(&m.model, &d.cloud)?;
        unsafe {
            store(
                out,
                PeCloud {
                    cloud: e.q,
                    meta: e.meta,
                },
            )
        }
    })
}

/// Restores a dense cloud from a self-embedded one. A non-zero `patch_size`
/// (counted in dense points) restores oversized inputs patch by patch; 0
/// restores in one pass.
///
/// # Safety
/// Handles must be live and `out` a writable slot.
#[no_mangle]
pub unsafe extern "C" fn pe_restore(
    model: *const PeModel,
    sparse: *const PeCloud,
    patch_size: usize,
    out: *mut *mut PeCloud,
) -> PeStatus {
    guard(|| {
        let m = unsafe { as_ref(model, "model") }?;
        let s = unsafe { as_ref(sparse, "sparse") }?;
        let patch = (patch_size > 0).then_some(patch_size);
        let cloud = restore_cloud(&m.model, &s.cloud, &s.meta, patch)?;
        unsafe {
            store(
                out,
                PeCloud {
                    cloud,
                    meta: CloudMeta::default(),
                },
            )
        }
    })
}

/// EMD, Hausdorff and mean chamfer distance between two clouds.
///
/// # Safety
/// Handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pe_metrics(a: *const PeCloud, b: *const PeCloud, out: *mut PeMetrics) -> PeStatus {
    guard(|| {
        let a = unsafe { as_ref(a, "a") }?;
        let b = unsafe { as_ref(b, "b") }?;
        if out.is_null() {
            return Err(null("out"));
        }
        let m = MetricsReport::compute(&a.cloud, &b.cloud)?;
        // SAFETY: checked non-null.
        unsafe {
            *out = PeMetrics {
                emd: m.emd,
                hd: m.hd,
                cd: m.cd,
            }
        };
        Ok(())
    })
}
