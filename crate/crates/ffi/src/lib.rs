//! C ABI for the sonar-gesture pipeline.
//!
//! Every fallible call returns an `SgStatus`; on failure the message is
//! available from `sg_last_error_message` on the same thread. Models are
//! opaque handles released with `sg_model_free`. Images are 100 x 100
//! row-major doubles in [0, 1], row 0 the lowest frequency.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use sonar_gesture::audio::{generate_cw, read_wav, write_wav_stereo, CwConfig};
use sonar_gesture::dataset::{clip_images, ClipImages, FusionMode, PipelineConfig};
use sonar_gesture::doppler::{
    doppler_shift, echo_frequency, synth_gesture, DopplerParams, GestureClass, SimConfig,
};
use sonar_gesture::dsp::SpectrogramImage;
use sonar_gesture::models::FusionModel;
use sonar_gesture::nn::Classifier;
use sonar_gesture::Error;

pub const SG_IMAGE_SIZE: usize = 100;
pub const SG_IMAGE_PIXELS: usize = 10_000;
pub const SG_CLASS_COUNT: usize = 6;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SgStatus {
    Ok = 0,
    InvalidArgument = 1,
    NullPointer = 2,
    Io = 3,
    Format = 4,
    Data = 5,
    Numeric = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SgFusionMode {
    Single = 0,
    Early = 1,
    Late = 2,
}

impl From<FusionMode> for SgFusionMode {
    fn from(m: FusionMode) -> Self {
        match m {
            FusionMode::Single => SgFusionMode::Single,
            FusionMode::Early => SgFusionMode::Early,
            FusionMode::Late => SgFusionMode::Late,
        }
    }
}

/// Opaque trained model.
pub struct SgModel {
    inner: FusionModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(SgStatus, String);

fn status_of(e: &Error) -> SgStatus {
    match e {
        Error::InvalidArgument(_) => SgStatus::InvalidArgument,
        Error::Io { .. } => SgStatus::Io,
        Error::Wav { .. } | Error::WavStream(_) | Error::OddPcmLength(_) | Error::Checkpoint(_) => {
            SgStatus::Format
        }
        Error::NonFiniteLoss { .. } => SgStatus::Numeric,
        _ => SgStatus::Data,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SgStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            SgStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(SgStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(SgStatus::InvalidArgument, "path is not UTF-8".to_string()))?;
    Ok(PathBuf::from(s))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn copy_image(img: &SpectrogramImage, out: *mut f64) {
    std::ptr::copy_nonoverlapping(img.pixels().as_ptr(), out, SG_IMAGE_PIXELS);
}

unsafe fn read_image(p: *const f64, what: &str) -> Result<SpectrogramImage, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    let px = std::slice::from_raw_parts(p, SG_IMAGE_PIXELS).to_vec();
    Ok(SpectrogramImage::new(px)?)
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Short code (`LR`, `RL`, `P`, `B`, `UD`, `DU`) of class `index`, or NULL.
#[no_mangle]
pub extern "C" fn sg_gesture_code(index: u32) -> *const c_char {
    const CODES: [&str; SG_CLASS_COUNT] = ["LR\0", "RL\0", "P\0", "B\0", "UD\0", "DU\0"];
    CODES
        .get(index as usize)
        .map_or(std::ptr::null(), |c| c.as_ptr().cast())
}

/// `f (v + v_observer) / (v - v_source)`.
///
/// # Safety
/// `out` must be a valid pointer to a double.
#[no_mangle]
pub unsafe extern "C" fn sg_doppler_shift(
    f_emit: f64,
    v_sound: f64,
    v_observer: f64,
    v_source: f64,
    out: *mut f64,
) -> SgStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = doppler_shift(&DopplerParams {
            f_emit,
            v_sound,
            v_observer,
            v_source,
        })?;
        Ok(())
    })
}

/// Frequency of the echo off a hand moving at `v_hand` (positive = toward
/// the device).
///
/// # Safety
/// `out` must be a valid pointer to a double.
#[no_mangle]
pub unsafe extern "C" fn sg_echo_frequency(
    f_emit: f64,
    v_hand: f64,
    v_sound: f64,
    out: *mut f64,
) -> SgStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = echo_frequency(f_emit, v_hand, v_sound)?;
        Ok(())
    })
}

/// Writes the CW tone samples into `out` (capacity `cap`). The sample
/// count is always stored in `written`; if `out` is NULL or too small the
/// call returns `BufferTooSmall` without writing samples.
///
/// # Safety
/// `out` must point to `cap` doubles or be NULL; `written` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sg_generate_cw(
    frequency_hz: f64,
    sample_rate_hz: u32,
    duration_s: f64,
    amplitude: f64,
    out: *mut f64,
    cap: usize,
    written: *mut usize,
) -> SgStatus {
    guard(|| {
        let written = out_ref(written, "written")?;
        let w = generate_cw(&CwConfig {
            frequency_hz,
            sample_rate_hz,
            duration_s,
            amplitude,
        })?;
        *written = w.len();
        if out.is_null() || cap < w.len() {
            return Err(Failure(
                SgStatus::BufferTooSmall,
                format!("need room for {} samples, got {cap}", w.len()),
            ));
        }
        std::ptr::copy_nonoverlapping(w.samples().as_ptr(), out, w.len());
        Ok(())
    })
}

/// Simulates one gesture clip (class index in `LR, RL, P, B, UD, DU`
/// order) with default settings and writes it as a stereo WAV.
///
/// # Safety
/// `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sg_synth_gesture_wav(
    path: *const c_char,
    gesture: u32,
    seed: u64,
) -> SgStatus {
    guard(|| {
        let path = path_arg(path)?;
        let g = GestureClass::from_index(gesture as usize).ok_or_else(|| {
            Failure(
                SgStatus::InvalidArgument,
                format!("gesture index {gesture} out of range"),
            )
        })?;
        let clip = synth_gesture(g, &SimConfig::default(), seed)?;
        write_wav_stereo(&path, &clip)?;
        Ok(())
    })
}

fn images_of(path: PathBuf) -> Result<ClipImages, Failure> {
    let clip = read_wav(&path)?;
    clip_images(&clip, &PipelineConfig::default()).map_err(|e| {
        let Failure(s, m) = Failure::from(e);
        Failure(s, format!("{}: {m}", path.display()))
    })
}

/// Default preprocessing of a stereo WAV into top, bottom and mixdown
/// images. Each output must hold `SG_IMAGE_PIXELS` doubles; any may be NULL.
///
/// # Safety
/// `path` must be a NUL-terminated string; non-NULL outputs must be valid.
#[no_mangle]
pub unsafe extern "C" fn sg_wav_to_images(
    path: *const c_char,
    top: *mut f64,
    bottom: *mut f64,
    mix: *mut f64,
) -> SgStatus {
    guard(|| {
        let imgs = images_of(path_arg(path)?)?;
        for (img, out) in [(&imgs.top, top), (&imgs.bottom, bottom), (&imgs.mix, mix)] {
            if !out.is_null() {
                copy_image(img, out);
            }
        }
        Ok(())
    })
}

/// Loads a checkpoint written by the `train` command.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sg_model_load(path: *const c_char, out: *mut *mut SgModel) -> SgStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = std::ptr::null_mut();
        let inner = FusionModel::load(&path_arg(path)?)?;
        *out = Box::into_raw(Box::new(SgModel { inner }));
        Ok(())
    })
}

/// Releases a model; NULL is ignored.
///
/// # Safety
/// `model` must come from `sg_model_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sg_model_free(model: *mut SgModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn sg_model_mode(model: *const SgModel, out: *mut SgFusionMode) -> SgStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        *out_ref(out, "out")? = m.inner.mode().into();
        Ok(())
    })
}

fn predict(
    model: &SgModel,
    imgs: &ClipImages,
    class_out: *mut u32,
    probs_out: *mut f64,
) -> Result<(), Failure> {
    let (cls, probs) = model.inner.predict(&imgs.pack(model.inner.mode()))?;
    unsafe {
        *out_ref(class_out, "class_out")? = cls as u32;
        if !probs_out.is_null() {
            std::ptr::copy_nonoverlapping(probs.as_ptr(), probs_out, SG_CLASS_COUNT);
        }
    }
    Ok(())
}

/// Classifies a stereo WAV. `probs_out` (may be NULL) receives
/// `SG_CLASS_COUNT` softmax probabilities.
///
/// # Safety
/// Pointers must be valid; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn sg_model_predict_wav(
    model: *const SgModel,
    path: *const c_char,
    class_out: *mut u32,
    probs_out: *mut f64,
) -> SgStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let imgs = images_of(path_arg(path)?)?;
        predict(m, &imgs, class_out, probs_out)
    })
}

/// Classifies preprocessed images. Single-mode models read only `mix`,
/// late fusion only `top` and `bottom`; unused inputs may be NULL.
///
/// # Safety
/// Non-NULL image pointers must hold `SG_IMAGE_PIXELS` doubles.
#[no_mangle]
pub unsafe extern "C" fn sg_model_predict_images(
    model: *const SgModel,
    top: *const f64,
    bottom: *const f64,
    mix: *const f64,
    class_out: *mut u32,
    probs_out: *mut f64,
) -> SgStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let mode = m.inner.mode();
        let needs = |used: bool, p: *const f64, what: &str| -> Result<SpectrogramImage, Failure> {
            if used {
                read_image(p, what)
            } else {
                Ok(SpectrogramImage::zeros())
            }
        };
        let imgs = ClipImages {
            top: needs(mode != FusionMode::Single, top, "top")?,
            bottom: needs(mode != FusionMode::Single, bottom, "bottom")?,
            mix: needs(mode != FusionMode::Late, mix, "mix")?,
        };
        predict(m, &imgs, class_out, probs_out)
    })
}
