//! C ABI over the encoder, the depth network and the evaluation metrics.
//!
//! Every function returns a [`QfStatus`]; on failure a description is
//! available from [`qf_last_error_message`] on the same thread. Handles are
//! opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use qtmt_fast::ddff::DdffModel;
use qtmt_fast::frame_io::FramePlane;
use qtmt_fast::metrics::{ats, bdbr, RdPoint};
use qtmt_fast::pipeline::{encode_with_model, EncodeConfig, EncodeMode, EncodeReport};
use qtmt_fast::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Config = 5,
    Internal = 6,
}

pub const QF_MODE_ORACLE: u32 = 0;
pub const QF_MODE_DDFF: u32 = 1;
pub const QF_MODE_PPBE: u32 = 2;
pub const QF_MODE_FULL: u32 = 3;

/// Number of cells in a reference depth map.
pub const QF_MAP_LEN: usize = 25;

pub struct QfModel {
    inner: DdffModel,
}

pub struct QfEncoder {
    cfg: EncodeConfig,
    width: usize,
    height: usize,
    frames: Vec<FramePlane>,
    model: Option<DdffModel>,
}

pub struct QfReport {
    inner: EncodeReport,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct QfTotals {
    pub distortion: f64,
    pub rate_bits: f64,
    pub j: f64,
    pub psnr: f64,
    /// Negative when timing was disabled.
    pub time_seconds: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with_borrow_mut(|e| *e = CString::new(msg).expect("NULs were removed"));
}

fn fail(status: QfStatus, msg: impl Into<String>) -> QfStatus {
    set_error(msg);
    status
}

fn from_error(e: Error) -> QfStatus {
    let status = match &e {
        Error::Argument(_) => QfStatus::InvalidArgument,
        Error::Truncated { .. } | Error::Format(_) | Error::Json(_) => QfStatus::Format,
        Error::Config(_) => QfStatus::Config,
        Error::Io(_) => QfStatus::Io,
    };
    fail(status, e.to_string())
}

/// Runs `f`, turning panics into [`QfStatus::Internal`].
fn guard(f: impl FnOnce() -> QfStatus) -> QfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == QfStatus::Ok {
                set_error("");
            }
            s
        }
        Err(_) => fail(QfStatus::Internal, "internal panic"),
    }
}

unsafe fn path_arg(path: *const c_char) -> Result<PathBuf, QfStatus> {
    if path.is_null() {
        return Err(fail(QfStatus::NullPointer, "path is null"));
    }
    match CStr::from_ptr(path).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => Err(fail(QfStatus::InvalidArgument, "path is not UTF-8")),
    }
}

fn mode_arg(mode: u32) -> Option<EncodeMode> {
    match mode {
        QF_MODE_ORACLE => Some(EncodeMode::Oracle),
        QF_MODE_DDFF => Some(EncodeMode::Ddff),
        QF_MODE_PPBE => Some(EncodeMode::Ppbe),
        QF_MODE_FULL => Some(EncodeMode::Full),
        _ => None,
    }
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn qf_last_error_message() -> *const c_char {
    LAST_ERROR.with_borrow(|e| e.as_ptr())
}

/// Loads a weights file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qf_model_load(path: *const c_char, out: *mut *mut QfModel) -> QfStatus {
    guard(|| {
        if out.is_null() {
            return fail(QfStatus::NullPointer, "out is null");
        }
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match DdffModel::load(&path) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(QfModel { inner }));
                QfStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Freshly initialized (untrained) model from a seed.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qf_model_seeded(seed: u64, out: *mut *mut QfModel) -> QfStatus {
    guard(|| {
        if out.is_null() {
            return fail(QfStatus::NullPointer, "out is null");
        }
        *out = Box::into_raw(Box::new(QfModel {
            inner: DdffModel::seeded(seed),
        }));
        QfStatus::Ok
    })
}

/// # Safety
/// `model` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn qf_model_save(model: *const QfModel, path: *const c_char) -> QfStatus {
    guard(|| {
        let Some(model) = model.as_ref() else {
            return fail(QfStatus::NullPointer, "model is null");
        };
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match model.inner.save(&path) {
            Ok(()) => QfStatus::Ok,
            Err(e) => from_error(e),
        }
    })
}

/// Predicted depth (1..=6) for a row-major 5×5 map of reference depths.
///
/// # Safety
/// `depths` must point to 25 bytes and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn qf_model_predict_depth(model: *const QfModel, depths: *const u8, out: *mut u8) -> QfStatus {
    guard(|| {
        let Some(model) = model.as_ref() else {
            return fail(QfStatus::NullPointer, "model is null");
        };
        if depths.is_null() || out.is_null() {
            return fail(QfStatus::NullPointer, "depths or out is null");
        }
        let mut map = [0u8; QF_MAP_LEN];
        map.copy_from_slice(std::slice::from_raw_parts(depths, QF_MAP_LEN));
        if let Some(bad) = map.iter().find(|d| !(1..=6).contains(*d)) {
            return fail(QfStatus::InvalidArgument, format!("depth {bad} outside 1..=6"));
        }
        *out = model.inner.predict_depth(&map);
        QfStatus::Ok
    })
}

/// # Safety
/// `model` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn qf_model_free(model: *mut QfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Creates an encoder for `width × height` luma frames. `mode` is one of
/// the `QF_MODE_*` constants; `ctu_size` is 32, 64 or 128.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qf_encoder_new(
    width: usize,
    height: usize,
    qp: i32,
    mode: u32,
    ctu_size: usize,
    out: *mut *mut QfEncoder,
) -> QfStatus {
    guard(|| {
        if out.is_null() {
            return fail(QfStatus::NullPointer, "out is null");
        }
        let Some(mode) = mode_arg(mode) else {
            return fail(QfStatus::InvalidArgument, format!("unknown mode {mode}"));
        };
        if width == 0 || height == 0 {
            return fail(QfStatus::InvalidArgument, "width and height must be positive");
        }
        let cfg = EncodeConfig {
            ctu_size,
            ..EncodeConfig::new(qp, mode)
        };
        if let Err(e) = cfg.validate() {
            return from_error(e);
        }
        *out = Box::into_raw(Box::new(QfEncoder {
            cfg,
            width,
            height,
            frames: Vec::new(),
            model: None,
        }));
        QfStatus::Ok
    })
}

/// Attaches a copy of `model`; the caller keeps ownership of its handle.
///
/// # Safety
/// Both handles must come from this library.
#[no_mangle]
pub unsafe extern "C" fn qf_encoder_set_model(enc: *mut QfEncoder, model: *const QfModel) -> QfStatus {
    guard(|| match (enc.as_mut(), model.as_ref()) {
        (Some(enc), Some(model)) => {
            enc.model = Some(model.inner.clone());
            QfStatus::Ok
        }
        _ => fail(QfStatus::NullPointer, "encoder or model is null"),
    })
}

/// Switches wall-clock timing in reports on (non-zero) or off.
///
/// # Safety
/// `enc` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn qf_encoder_set_timing(enc: *mut QfEncoder, enabled: i32) -> QfStatus {
    guard(|| match enc.as_mut() {
        Some(enc) => {
            enc.cfg.timing = enabled != 0;
            QfStatus::Ok
        }
        None => fail(QfStatus::NullPointer, "encoder is null"),
    })
}

/// Appends one luma frame; rows are `stride` bytes apart.
///
/// # Safety
/// `samples` must hold `stride * (height - 1) + width` bytes.
#[no_mangle]
pub unsafe extern "C" fn qf_encoder_push_frame(enc: *mut QfEncoder, samples: *const u8, stride: usize) -> QfStatus {
    guard(|| {
        let Some(enc) = enc.as_mut() else {
            return fail(QfStatus::NullPointer, "encoder is null");
        };
        if samples.is_null() {
            return fail(QfStatus::NullPointer, "samples is null");
        }
        if stride < enc.width {
            return fail(QfStatus::InvalidArgument, format!("stride {stride} below width {}", enc.width));
        }
        let src = std::slice::from_raw_parts(samples, stride * (enc.height - 1) + enc.width);
        let mut luma = Vec::with_capacity(enc.width * enc.height);
        for row in 0..enc.height {
            luma.extend_from_slice(&src[row * stride..row * stride + enc.width]);
        }
        match FramePlane::new(enc.width, enc.height, enc.frames.len(), luma) {
            Ok(plane) => {
                enc.frames.push(plane.padded());
                QfStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Encodes every pushed frame.
///
/// # Safety
/// `enc` must come from this library and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn qf_encoder_run(enc: *const QfEncoder, out: *mut *mut QfReport) -> QfStatus {
    guard(|| {
        let Some(enc) = enc.as_ref() else {
            return fail(QfStatus::NullPointer, "encoder is null");
        };
        if out.is_null() {
            return fail(QfStatus::NullPointer, "out is null");
        }
        if enc.cfg.mode.uses_ddff() && enc.model.is_none() {
            return fail(QfStatus::Config, "mode needs a model; call qf_encoder_set_model first");
        }
        match encode_with_model(&enc.frames, &enc.cfg, enc.model.as_ref()) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(QfReport { inner }));
                QfStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `enc` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn qf_encoder_free(enc: *mut QfEncoder) {
    if !enc.is_null() {
        drop(Box::from_raw(enc));
    }
}

/// # Safety
/// `report` must come from this library and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn qf_report_totals(report: *const QfReport, out: *mut QfTotals) -> QfStatus {
    guard(|| {
        let (Some(r), false) = (report.as_ref(), out.is_null()) else {
            return fail(QfStatus::NullPointer, "report or out is null");
        };
        let t = &r.inner.totals;
        *out = QfTotals {
            distortion: t.distortion,
            rate_bits: t.rate_bits,
            j: t.j,
            psnr: t.psnr,
            time_seconds: t.time_seconds.unwrap_or(-1.0),
        };
        QfStatus::Ok
    })
}

/// # Safety
/// `report` must come from this library and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn qf_report_frame_count(report: *const QfReport, out: *mut usize) -> QfStatus {
    guard(|| {
        let (Some(r), false) = (report.as_ref(), out.is_null()) else {
            return fail(QfStatus::NullPointer, "report or out is null");
        };
        *out = r.inner.frames.len();
        QfStatus::Ok
    })
}

/// The report as JSON. Release the string with [`qf_string_free`].
///
/// # Safety
/// `report` must come from this library and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn qf_report_json(report: *const QfReport, out: *mut *mut c_char) -> QfStatus {
    guard(|| {
        let (Some(r), false) = (report.as_ref(), out.is_null()) else {
            return fail(QfStatus::NullPointer, "report or out is null");
        };
        match r.inner.to_json() {
            Ok(json) => {
                *out = CString::new(json).expect("JSON has no NUL").into_raw();
                QfStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `report` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn qf_report_free(report: *mut QfReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// # Safety
/// `s` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn qf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

unsafe fn curve(rates: *const f64, psnrs: *const f64, n: usize) -> Option<Vec<RdPoint>> {
    if rates.is_null() || psnrs.is_null() {
        return None;
    }
    let r = std::slice::from_raw_parts(rates, n);
    let p = std::slice::from_raw_parts(psnrs, n);
    Some(r.iter().zip(p).map(|(&rate, &psnr)| RdPoint { rate, psnr }).collect())
}

/// Bjøntegaard delta rate of the test curve against the anchor, in percent.
///
/// # Safety
/// Each array must hold the stated number of values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn qf_bdbr(
    anchor_rates: *const f64,
    anchor_psnrs: *const f64,
    anchor_len: usize,
    test_rates: *const f64,
    test_psnrs: *const f64,
    test_len: usize,
    out: *mut f64,
) -> QfStatus {
    guard(|| {
        let (Some(a), Some(t)) = (
            curve(anchor_rates, anchor_psnrs, anchor_len),
            curve(test_rates, test_psnrs, test_len),
        ) else {
            return fail(QfStatus::NullPointer, "curve array is null");
        };
        if out.is_null() {
            return fail(QfStatus::NullPointer, "out is null");
        }
        match bdbr(&a, &t) {
            Ok(v) => {
                *out = v;
                QfStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Average time saving over `len` QPs, in percent.
///
/// # Safety
/// Both arrays must hold `len` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn qf_ats(t_ori: *const f64, t_pro: *const f64, len: usize, out: *mut f64) -> QfStatus {
    guard(|| {
        if t_ori.is_null() || t_pro.is_null() || out.is_null() {
            return fail(QfStatus::NullPointer, "argument is null");
        }
        let (o, p) = (std::slice::from_raw_parts(t_ori, len), std::slice::from_raw_parts(t_pro, len));
        match ats(o, p) {
            Ok(v) => {
                *out = v;
                QfStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}
