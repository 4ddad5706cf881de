//! C ABI over the `spikmamba` core: checkpoint loading, inference, saliency
//! maps and the parameter/FLOP counter.
//!
//! Every fallible call returns an [`SpkStatus`]; on failure the message is
//! available from [`spk_last_error`] on the same thread. Handles are opaque
//! and must be released with [`spk_model_free`].

// Pointer arguments are null-checked at the boundary; C callers have no
// `unsafe` to opt into.
#![allow(clippy::not_unsafe_ptr_arg_deref)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use spikmamba::error::Error;
use spikmamba::events::{load_events, to_frames, EventFormat, SensorSize};
use spikmamba::model::{count_params_flops, Checkpoint, ModelConfig, Preset, SpikMamba};
use spikmamba::tensor::Tensor;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpkStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Integrity = 5,
    Shape = 6,
    Config = 7,
    Internal = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpkPreset {
    Tiny = 0,
    Desk = 1,
    Paper = 2,
}

/// Input and output geometry of a model. One input clip holds
/// `3 * frames * height * width` floats; a saliency map holds
/// `frames * (height / patch) * (width / patch)` doubles.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpkGeometry {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub patch: usize,
    pub n_classes: usize,
}

/// Opaque model handle.
pub struct SpkModel {
    inner: SpikMamba<f32>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

enum Fail {
    Null(&'static str),
    Arg(String),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn status_of(e: &Error) -> SpkStatus {
    match e {
        Error::File { .. } | Error::Io(_) => SpkStatus::Io,
        Error::Format(_) | Error::Parse { .. } | Error::Json(_) => SpkStatus::Format,
        Error::Integrity(_) => SpkStatus::Integrity,
        Error::Dimension(_) | Error::ManifestDiff(_) => SpkStatus::Shape,
        Error::Config(_) => SpkStatus::Config,
        _ => SpkStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SpkStatus {
    let (status, msg) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => return SpkStatus::Ok,
        Ok(Err(Fail::Null(what))) => (SpkStatus::NullPointer, format!("{what} is null")),
        Ok(Err(Fail::Arg(m))) => (SpkStatus::InvalidArgument, m),
        Ok(Err(Fail::Core(e))) => (status_of(&e), e.to_string()),
        Err(_) => (SpkStatus::Internal, "internal panic".to_string()),
    };
    set_last_error(&msg);
    status
}

fn non_null<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    // SAFETY: callers pass pointers that are null or valid for reads.
    unsafe { p.as_ref() }.ok_or(Fail::Null(what))
}

fn out_ref<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    // SAFETY: callers pass pointers that are null or valid for writes.
    unsafe { p.as_mut() }.ok_or(Fail::Null(what))
}

fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(Fail::Null("path"));
    }
    // SAFETY: non-null and nul-terminated by contract.
    let s = unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Fail::Arg("path is not valid UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

fn slice_in<'a, T>(p: *const T, len: usize, want: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    if len != want {
        return Err(Fail::Arg(format!("{what} has {len} elements, expected {want}")));
    }
    // SAFETY: non-null and valid for `len` reads by contract.
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

fn slice_out<'a, T>(p: *mut T, len: usize, want: usize, what: &'static str) -> Result<&'a mut [T], Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    if len < want {
        return Err(Fail::Arg(format!("{what} holds {len} elements, need {want}")));
    }
    // SAFETY: non-null and valid for `len` writes by contract.
    Ok(unsafe { std::slice::from_raw_parts_mut(p, want) })
}

fn preset(p: SpkPreset) -> Preset {
    match p {
        SpkPreset::Tiny => Preset::Tiny,
        SpkPreset::Desk => Preset::Desk,
        SpkPreset::Paper => Preset::Paper,
    }
}

fn publish(model: SpikMamba<f32>, out: *mut *mut SpkModel) -> Result<(), Fail> {
    let slot = out_ref(out, "out")?;
    *slot = Box::into_raw(Box::new(SpkModel { inner: model }));
    Ok(())
}

/// Message for the most recent failure on this thread. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn spk_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Creates a freshly initialized model from a built-in geometry.
#[no_mangle]
pub extern "C" fn spk_model_new(preset_id: SpkPreset, seed: u64, out: *mut *mut SpkModel) -> SpkStatus {
    guard(|| publish(SpikMamba::new(ModelConfig::preset(preset(preset_id)), seed)?, out))
}

/// Loads a checkpoint file.
#[no_mangle]
pub extern "C" fn spk_model_load(path: *const c_char, out: *mut *mut SpkModel) -> SpkStatus {
    guard(|| {
        let path = path_arg(path)?;
        publish(Checkpoint::load(&path)?.into_model()?, out)
    })
}

#[no_mangle]
pub extern "C" fn spk_model_save(model: *const SpkModel, path: *const c_char) -> SpkStatus {
    guard(|| {
        let model = non_null(model, "model")?;
        Ok(model.inner.save_checkpoint(&path_arg(path)?)?)
    })
}

/// Releases a handle. Null is ignored.
#[no_mangle]
pub extern "C" fn spk_model_free(model: *mut SpkModel) {
    if !model.is_null() {
        // SAFETY: the handle came from `publish` and is freed once.
        drop(unsafe { Box::from_raw(model) });
    }
}

#[no_mangle]
pub extern "C" fn spk_model_geometry(model: *const SpkModel, out: *mut SpkGeometry) -> SpkStatus {
    guard(|| {
        let cfg = non_null(model, "model")?.inner.config();
        *out_ref(out, "out")? = SpkGeometry {
            frames: cfg.frames,
            height: cfg.height,
            width: cfg.width,
            patch: cfg.patch,
            n_classes: cfg.n_classes,
        };
        Ok(())
    })
}

fn clip_len(cfg: &ModelConfig) -> usize {
    3 * cfg.frames * cfg.height * cfg.width
}

/// Eval-mode logits for `batch` clips laid out `[batch, 3, T, H, W]`;
/// writes `batch * n_classes` floats.
#[no_mangle]
pub extern "C" fn spk_model_logits(
    model: *const SpkModel,
    input: *const f32,
    input_len: usize,
    batch: usize,
    out: *mut f32,
    out_len: usize,
) -> SpkStatus {
    guard(|| {
        let model = &non_null(model, "model")?.inner;
        let cfg = model.config();
        if batch == 0 {
            return Err(Fail::Arg("batch is 0".into()));
        }
        let x = slice_in(input, input_len, batch * clip_len(cfg), "input")?;
        let dst = slice_out(out, out_len, batch * cfg.n_classes, "out")?;
        let x = Tensor::new(&[batch, 3, cfg.frames, cfg.height, cfg.width], x.to_vec())?;
        dst.copy_from_slice(model.logits(&x)?.data());
        Ok(())
    })
}

/// Attention-branch token saliency for one clip `[3, T, H, W]`, each frame
/// min-max normalized; writes `[T, H / patch, W / patch]` doubles.
#[no_mangle]
pub extern "C" fn spk_model_saliency(
    model: *const SpkModel,
    input: *const f32,
    input_len: usize,
    out: *mut f64,
    out_len: usize,
) -> SpkStatus {
    guard(|| {
        let model = &non_null(model, "model")?.inner;
        let cfg = model.config();
        let x = slice_in(input, input_len, clip_len(cfg), "input")?;
        let want = cfg.frames * cfg.tokens_per_frame();
        let dst = slice_out(out, out_len, want, "out")?;
        let x = Tensor::new(&[3, cfg.frames, cfg.height, cfg.width], x.to_vec())?;
        dst.copy_from_slice(model.saliency_map(&x)?.data());
        Ok(())
    })
}

/// Reads an event file (binary, or CSV with the given sensor size) and bins
/// it into a model-ready clip of `3 * frames * height * width` floats.
#[no_mangle]
pub extern "C" fn spk_events_to_frames(
    path: *const c_char,
    csv_sensor_height: u32,
    csv_sensor_width: u32,
    frames: usize,
    height: usize,
    width: usize,
    out: *mut f32,
    out_len: usize,
) -> SpkStatus {
    guard(|| {
        let path = path_arg(path)?;
        let dst = slice_out(out, out_len, 3 * frames * height * width, "out")?;
        let sensor = SensorSize::new(csv_sensor_height, csv_sensor_width);
        let stream = load_events(&path, EventFormat::from_path(&path), sensor)?;
        dst.copy_from_slice(to_frames(&stream, frames, height, width)?.tensor.data());
        Ok(())
    })
}

/// Closed-form parameter count and forward GFLOPs of a built-in geometry.
#[no_mangle]
pub extern "C" fn spk_count(preset_id: SpkPreset, params: *mut u64, gflops: *mut f64) -> SpkStatus {
    guard(|| {
        let report = count_params_flops(&ModelConfig::preset(preset(preset_id)));
        *out_ref(params, "params")? = report.params as u64;
        *out_ref(gflops, "gflops")? = report.gflops();
        Ok(())
    })
}

/// Parameter count and forward GFLOPs of a loaded model.
#[no_mangle]
pub extern "C" fn spk_model_count(model: *const SpkModel, params: *mut u64, gflops: *mut f64) -> SpkStatus {
    guard(|| {
        let report = count_params_flops(non_null(model, "model")?.inner.config());
        *out_ref(params, "params")? = report.params as u64;
        *out_ref(gflops, "gflops")? = report.gflops();
        Ok(())
    })
}
