//! C ABI over the droptrack tracker and metrics.
//!
//! Every function returns a [`DtStatus`]; on failure a message is available
//! from [`dt_last_error`] on the same thread. Outputs are written only on
//! success, apart from the required size reported with
//! `DT_STATUS_BUFFER_TOO_SMALL`. Panics never cross the boundary; they surface
//! as `DT_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use droptrack::assignment::{solve, CostMatrix};
use droptrack::config::load_config;
use droptrack::geometry::{self, BBox};
use droptrack::metrics::{counting_error, CountSeries};
use droptrack::tracker::{Detection, Tracker};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Tracker = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

/// Axis-aligned box, top-left corner and size in pixels.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DtBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DtDetection {
    pub bbox: DtBox,
    /// In [0, 1].
    pub confidence: f64,
}

/// Box of a confirmed track matched in the current frame.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DtTrackBox {
    pub track_id: u64,
    pub bbox: DtBox,
}

/// Opaque tracker handle.
pub struct DtTracker {
    inner: Tracker,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: DtStatus, msg: impl Into<String>) -> DtStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> DtStatus) -> DtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(DtStatus::Panic, format!("panic: {msg}"))
        }
    }
}

/// Builds a slice from a C pointer; a null pointer is fine when `len` is 0.
unsafe fn slice<'a, T>(p: *const T, len: usize) -> Option<&'a [T]> {
    if len == 0 {
        Some(&[])
    } else if p.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts(p, len))
    }
}

fn to_bbox(b: &DtBox) -> Result<BBox, String> {
    BBox::new(b.x, b.y, b.w, b.h).map_err(|e| e.to_string())
}

fn from_bbox(b: &BBox) -> DtBox {
    DtBox { x: b.x(), y: b.y(), w: b.w(), h: b.h() }
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a tracker. `config_toml` is a run configuration document (only its
/// `[tracker]` table is used) or NULL for defaults.
///
/// # Safety
/// `config_toml` must be NULL or a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dt_tracker_new(config_toml: *const c_char, out: *mut *mut DtTracker) -> DtStatus {
    guard(|| {
        if out.is_null() {
            return fail(DtStatus::NullPointer, "out is NULL");
        }
        let text = if config_toml.is_null() {
            ""
        } else {
            match CStr::from_ptr(config_toml).to_str() {
                Ok(t) => t,
                Err(e) => return fail(DtStatus::InvalidArgument, format!("config is not UTF-8: {e}")),
            }
        };
        let cfg = match load_config(text) {
            Ok(c) => c,
            Err(e) => return fail(DtStatus::Config, e.to_string()),
        };
        match Tracker::new(cfg.tracker) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(DtTracker { inner }));
                DtStatus::Ok
            }
            Err(e) => fail(DtStatus::Config, e.to_string()),
        }
    })
}

/// Releases a tracker; NULL is ignored.
///
/// # Safety
/// `tracker` must come from `dt_tracker_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dt_tracker_free(tracker: *mut DtTracker) {
    if !tracker.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(tracker))));
    }
}

/// Upper bound on the boxes the next `dt_tracker_step` with `n_detections` can emit.
///
/// # Safety
/// `tracker` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dt_tracker_output_capacity(tracker: *const DtTracker, n_detections: usize, out: *mut usize) -> DtStatus {
    guard(|| {
        let (Some(t), false) = (tracker.as_ref(), out.is_null()) else {
            return fail(DtStatus::NullPointer, "tracker or out is NULL");
        };
        *out = t.inner.tracks().len() + n_detections;
        DtStatus::Ok
    })
}

/// Advances the tracker by one frame. Frames must strictly increase. Only
/// confirmed tracks matched in this frame are reported.
///
/// Writes up to `capacity` boxes to `out` and their number to `out_len`. When
/// `capacity` is below `dt_tracker_output_capacity`, returns
/// `DT_STATUS_BUFFER_TOO_SMALL` with the required size in `out_len` and leaves
/// the tracker untouched.
///
/// # Safety
/// `detections` must hold `n_detections` elements, `out` room for `capacity`.
#[no_mangle]
pub unsafe extern "C" fn dt_tracker_step(
    tracker: *mut DtTracker,
    frame: u32,
    detections: *const DtDetection,
    n_detections: usize,
    out: *mut DtTrackBox,
    capacity: usize,
    out_len: *mut usize,
) -> DtStatus {
    guard(|| {
        let Some(t) = tracker.as_mut() else {
            return fail(DtStatus::NullPointer, "tracker is NULL");
        };
        if out_len.is_null() {
            return fail(DtStatus::NullPointer, "out_len is NULL");
        }
        let Some(raw) = slice(detections, n_detections) else {
            return fail(DtStatus::NullPointer, "detections is NULL");
        };
        let needed = t.inner.tracks().len() + n_detections;
        if capacity < needed {
            *out_len = needed;
            return fail(DtStatus::BufferTooSmall, format!("output needs room for {needed} boxes, got {capacity}"));
        }
        if out.is_null() && capacity > 0 {
            return fail(DtStatus::NullPointer, "out is NULL");
        }
        let mut dets = Vec::with_capacity(raw.len());
        for (i, d) in raw.iter().enumerate() {
            match to_bbox(&d.bbox).and_then(|b| Detection::new(b, d.confidence).map_err(|e| e.to_string())) {
                Ok(det) => dets.push(det),
                Err(e) => return fail(DtStatus::InvalidArgument, format!("detection {i}: {e}")),
            }
        }
        match t.inner.step(frame, &dets) {
            Ok(outputs) => {
                for (i, o) in outputs.iter().enumerate() {
                    *out.add(i) = DtTrackBox { track_id: o.track_id, bbox: from_bbox(&o.bbox) };
                }
                *out_len = outputs.len();
                DtStatus::Ok
            }
            Err(e) => fail(DtStatus::Tracker, e.to_string()),
        }
    })
}

/// Intersection over union of two boxes.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn dt_iou(a: *const DtBox, b: *const DtBox, out: *mut f64) -> DtStatus {
    guard(|| {
        let (Some(a), Some(b), false) = (a.as_ref(), b.as_ref(), out.is_null()) else {
            return fail(DtStatus::NullPointer, "a, b or out is NULL");
        };
        match (to_bbox(a), to_bbox(b)) {
            (Ok(a), Ok(b)) => {
                *out = geometry::iou(&a, &b);
                DtStatus::Ok
            }
            (Err(e), _) | (_, Err(e)) => fail(DtStatus::InvalidArgument, e),
        }
    })
}

/// Minimum-cost assignment of a row-major `rows x cols` cost matrix.
///
/// Entries equal to `INFINITY` are forbidden pairs. As many rows as possible
/// are matched, and among those matchings the cheapest is returned.
/// `row_to_col[r]` receives the matched column or -1; `total_cost` may be NULL.
///
/// # Safety
/// `costs` must hold `rows * cols` values and `row_to_col` room for `rows`.
#[no_mangle]
pub unsafe extern "C" fn dt_solve_assignment(
    costs: *const f64,
    rows: usize,
    cols: usize,
    row_to_col: *mut i64,
    total_cost: *mut f64,
) -> DtStatus {
    guard(|| {
        let Some(n) = rows.checked_mul(cols) else {
            return fail(DtStatus::InvalidArgument, "rows * cols overflows");
        };
        let Some(c) = slice(costs, n) else {
            return fail(DtStatus::NullPointer, "costs is NULL");
        };
        if row_to_col.is_null() && rows > 0 {
            return fail(DtStatus::NullPointer, "row_to_col is NULL");
        }
        let m = match CostMatrix::new(rows, cols, c.to_vec()) {
            Ok(m) => m,
            Err(e) => return fail(DtStatus::InvalidArgument, e.to_string()),
        };
        let a = solve(&m);
        for r in 0..rows {
            *row_to_col.add(r) = -1;
        }
        for &(r, k) in &a.pairs {
            *row_to_col.add(r) = k as i64;
        }
        if !total_cost.is_null() {
            *total_cost = a.total_cost(&m);
        }
        DtStatus::Ok
    })
}

/// Mean absolute difference between two per-frame count series of length `n`.
///
/// # Safety
/// `measured` and `predicted` must hold `n` values.
#[no_mangle]
pub unsafe extern "C" fn dt_counting_error(measured: *const u32, predicted: *const u32, n: usize, out: *mut f64) -> DtStatus {
    guard(|| {
        let (Some(m), Some(p), false) = (slice(measured, n), slice(predicted, n), out.is_null()) else {
            return fail(DtStatus::NullPointer, "measured, predicted or out is NULL");
        };
        let series = |v: &[u32]| CountSeries::new(v.to_vec()).map_err(|e| e.to_string());
        match series(m).and_then(|m| Ok((m, series(p)?))).and_then(|(m, p)| counting_error(&m, &p).map_err(|e| e.to_string())) {
            Ok(v) => {
                *out = v;
                DtStatus::Ok
            }
            Err(e) => fail(DtStatus::InvalidArgument, e),
        }
    })
}
