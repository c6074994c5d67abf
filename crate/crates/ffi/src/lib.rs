//! C ABI over `reactxgb`.
//!
//! Objects are opaque handles created by `*_load` and released by `*_free`.
//! Every fallible call returns an [`RxgbStatus`]; on failure the message is
//! kept per thread and read with [`rxgb_last_error_message`]. Output buffers
//! are caller-allocated and sized from the handle's dimensions.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use reactxgb::backbone::{argmax, infer_hybrid, Checkpoint, Network};
use reactxgb::cost::{network_cost, CostOptions};
use reactxgb::data::{FeatureMatrix, Normalization};
use reactxgb::gbdt::{softmax, TreeEnsemble};
use reactxgb::tensor::Tensor;
use reactxgb::{Error, Result};

/// Outcome of an API call. Values are stable.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RxgbStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Shape = 3,
    Format = 4,
    Spec = 5,
    Config = 6,
    NonFinite = 7,
    MissingArtifact = 8,
    Digest = 9,
    Network = 10,
    Io = 11,
    Utf8 = 12,
    Panic = 13,
}

/// Pixel mapping applied to `u8` images.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RxgbNormalization {
    /// `p / 127.5 − 1`
    Symmetric = 0,
    /// `p / 255`
    Unit = 1,
}

/// Whole-network cost totals.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RxgbCost {
    pub bops: u64,
    /// All real-valued operations (MAC and elementwise).
    pub flops: u64,
    /// Multiply-accumulate FLOPs only.
    pub mac_flops: u64,
    pub param_bits: u64,
    /// `bops / 64 + flops`.
    pub ops: f64,
}

/// A trained backbone (with or without its FC head).
pub struct RxgbModel {
    net: Network,
}

/// A trained tree ensemble.
pub struct RxgbEnsemble {
    ens: TreeEnsemble,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> RxgbStatus {
    match e {
        Error::Shape { .. } => RxgbStatus::Shape,
        Error::InvalidArgument { .. } => RxgbStatus::InvalidArgument,
        Error::Spec(_) => RxgbStatus::Spec,
        Error::Format { .. } => RxgbStatus::Format,
        Error::Config(_) => RxgbStatus::Config,
        Error::NonFinite(_) => RxgbStatus::NonFinite,
        Error::MissingArtifact { .. } => RxgbStatus::MissingArtifact,
        Error::Digest { .. } => RxgbStatus::Digest,
        Error::Network(_) => RxgbStatus::Network,
        Error::Io { .. } => RxgbStatus::Io,
    }
}

enum Failure {
    Null(&'static str),
    Utf8(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type Outcome = std::result::Result<(), Failure>;

fn guard(f: impl FnOnce() -> Outcome) -> RxgbStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RxgbStatus::Ok,
        Ok(Err(Failure::Null(arg))) => {
            set_error(format!("null pointer passed as `{}`", arg));
            RxgbStatus::NullArgument
        }
        Ok(Err(Failure::Utf8(arg))) => {
            set_error(format!("`{}` is not valid UTF-8", arg));
            RxgbStatus::Utf8
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {}", msg));
            RxgbStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &'static str) -> std::result::Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(name));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure::Utf8(name))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, name: &'static str) -> std::result::Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_out<'a, T>(p: *mut T, len: usize, name: &'static str) -> std::result::Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::Null(name));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn handle<'a, T>(p: *const T, name: &'static str) -> std::result::Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(name))
}

fn norm(n: RxgbNormalization) -> Normalization {
    match n {
        RxgbNormalization::Symmetric => Normalization::Symmetric,
        RxgbNormalization::Unit => Normalization::Unit,
    }
}

fn images(net: &Network, pixels: &[u8], count: usize, n: RxgbNormalization) -> Result<Tensor> {
    let [c, h, w] = net.spec().input;
    let n = norm(n);
    Tensor::new(vec![count, c, h, w], pixels.iter().map(|&p| n.normalize(p)).collect())
}

fn pixel_len(net: &Network, count: usize) -> usize {
    count * net.spec().input.iter().product::<usize>()
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next API call on the same thread.
#[no_mangle]
pub extern "C" fn rxgb_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rxgb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a stage-1 checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rxgb_model_load(path: *const c_char, out: *mut *mut RxgbModel) -> RxgbStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let path = PathBuf::from(str_arg(path, "path")?);
        let ck = Checkpoint::load(&path)?;
        *out = Box::into_raw(Box::new(RxgbModel { net: ck.network }));
        Ok(())
    })
}

/// Releases a model; null is ignored.
///
/// # Safety
/// `model` must come from [`rxgb_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rxgb_model_free(model: *mut RxgbModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Input channels, height and width.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn rxgb_model_input_shape(
    model: *const RxgbModel,
    channels: *mut usize,
    height: *mut usize,
    width: *mut usize,
) -> RxgbStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let [c, h, w] = m.net.spec().input;
        for (p, v, name) in [(channels, c, "channels"), (height, h, "height"), (width, w, "width")] {
            *p.as_mut().ok_or(Failure::Null(name))? = v;
        }
        Ok(())
    })
}

/// Pooled feature width, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rxgb_model_feature_dim(model: *const RxgbModel) -> usize {
    model.as_ref().map_or(0, |m| m.net.feature_dim())
}

/// Class count of the network description, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rxgb_model_class_count(model: *const RxgbModel) -> usize {
    model.as_ref().map_or(0, |m| m.net.spec().class_count)
}

/// Frozen features of `count` row-major `u8` images into
/// `out[count × feature_dim]`.
///
/// # Safety
/// `pixels` must hold `count·C·H·W` bytes and `out` `count·feature_dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn rxgb_extract_features(
    model: *const RxgbModel,
    pixels: *const u8,
    count: usize,
    normalization: RxgbNormalization,
    out: *mut f64,
) -> RxgbStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let px = slice_arg(pixels, pixel_len(&m.net, count), "pixels")?;
        let dst = slice_out(out, count * m.net.feature_dim(), "out")?;
        if count == 0 {
            return Ok(());
        }
        let f = m.net.infer_features(&images(&m.net, px, count, normalization)?)?;
        dst.copy_from_slice(f.data());
        Ok(())
    })
}

/// FC-head classes of `count` images into `classes[count]`.
///
/// # Safety
/// As [`rxgb_extract_features`]; `classes` must hold `count` entries.
#[no_mangle]
pub unsafe extern "C" fn rxgb_predict_fc(
    model: *const RxgbModel,
    pixels: *const u8,
    count: usize,
    normalization: RxgbNormalization,
    classes: *mut u32,
) -> RxgbStatus {
    guard(|| {
        let m = handle(model, "model")?;
        if !m.net.has_head() {
            return Err(Error::InvalidArgument {
                op: "rxgb_predict_fc",
                detail: "the model has no fc_head".into(),
            }
            .into());
        }
        let px = slice_arg(pixels, pixel_len(&m.net, count), "pixels")?;
        let dst = slice_out(classes, count, "classes")?;
        if count == 0 {
            return Ok(());
        }
        let logits = m.net.infer(&images(&m.net, px, count, normalization)?)?;
        let k = m.net.spec().class_count;
        for (d, row) in dst.iter_mut().zip(logits.data().chunks_exact(k)) {
            *d = argmax(row) as u32;
        }
        Ok(())
    })
}

/// Loads a tree ensemble.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rxgb_ensemble_load(path: *const c_char, out: *mut *mut RxgbEnsemble) -> RxgbStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let path = PathBuf::from(str_arg(path, "path")?);
        let ens = TreeEnsemble::load(&path)?;
        *out = Box::into_raw(Box::new(RxgbEnsemble { ens }));
        Ok(())
    })
}

/// Releases an ensemble; null is ignored.
///
/// # Safety
/// `ensemble` must come from [`rxgb_ensemble_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rxgb_ensemble_free(ensemble: *mut RxgbEnsemble) {
    if !ensemble.is_null() {
        drop(Box::from_raw(ensemble));
    }
}

/// Number of trees, or 0 for a null handle.
///
/// # Safety
/// `ensemble` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rxgb_ensemble_tree_count(ensemble: *const RxgbEnsemble) -> usize {
    ensemble.as_ref().map_or(0, |e| e.ens.tree_count())
}

/// Expected feature width, or 0 for a null handle.
///
/// # Safety
/// `ensemble` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rxgb_ensemble_feature_dim(ensemble: *const RxgbEnsemble) -> usize {
    ensemble.as_ref().map_or(0, |e| e.ens.feature_dim)
}

/// Class count, or 0 for a null handle.
///
/// # Safety
/// `ensemble` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rxgb_ensemble_class_count(ensemble: *const RxgbEnsemble) -> usize {
    ensemble.as_ref().map_or(0, |e| e.ens.class_count())
}

/// Tree-head predictions for `count × dim` features. `probs` may be null;
/// otherwise it receives `count × class_count` probabilities.
///
/// # Safety
/// Buffers must hold the sizes described above.
#[no_mangle]
pub unsafe extern "C" fn rxgb_ensemble_predict(
    ensemble: *const RxgbEnsemble,
    features: *const f64,
    count: usize,
    dim: usize,
    classes: *mut u32,
    probs: *mut f64,
) -> RxgbStatus {
    guard(|| {
        let e = &handle(ensemble, "ensemble")?.ens;
        if dim != e.feature_dim {
            return Err(Error::Shape {
                op: "rxgb_ensemble_predict",
                detail: format!("{} features, ensemble expects {}", dim, e.feature_dim),
            }
            .into());
        }
        let x = slice_arg(features, count * dim, "features")?;
        let dst = slice_out(classes, count, "classes")?;
        let k = e.class_count();
        let mut p_out = if probs.is_null() { None } else { Some(slice_out(probs, count * k, "probs")?) };
        // validates finiteness the same way the feature file does
        let labels = vec![0u8; count];
        let fm = FeatureMatrix::new(count, dim, x.to_vec(), labels)?;
        for i in 0..count {
            let p = softmax(&e.margins_row(fm.row(i)));
            dst[i] = argmax(&p) as u32;
            if let Some(o) = p_out.as_deref_mut() {
                o[i * k..(i + 1) * k].copy_from_slice(&p);
            }
        }
        Ok(())
    })
}

/// End-to-end hybrid inference: backbone features, tree margins, softmax.
/// `probs` may be null.
///
/// # Safety
/// As [`rxgb_extract_features`]; `classes` holds `count` entries and `probs`
/// (when non-null) `count × class_count`.
#[no_mangle]
pub unsafe extern "C" fn rxgb_predict_hybrid(
    model: *const RxgbModel,
    ensemble: *const RxgbEnsemble,
    pixels: *const u8,
    count: usize,
    normalization: RxgbNormalization,
    classes: *mut u32,
    probs: *mut f64,
) -> RxgbStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let e = &handle(ensemble, "ensemble")?.ens;
        let px = slice_arg(pixels, pixel_len(&m.net, count), "pixels")?;
        let dst = slice_out(classes, count, "classes")?;
        let k = e.class_count();
        if count == 0 {
            return Ok(());
        }
        let (c, p) = infer_hybrid(&m.net, e, &images(&m.net, px, count, normalization)?)?;
        for (d, v) in dst.iter_mut().zip(c) {
            *d = v as u32;
        }
        if !probs.is_null() {
            slice_out(probs, count * k, "probs")?.copy_from_slice(&p);
        }
        Ok(())
    })
}

/// Cost totals of a network description: `reference`, `reference-half`, a
/// spec file path, each optionally suffixed `:no-head`.
///
/// # Safety
/// `spec` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rxgb_network_cost(spec: *const c_char, weight_scaling: bool, out: *mut RxgbCost) -> RxgbStatus {
    guard(|| {
        let out = out.as_mut().ok_or(Failure::Null("out"))?;
        let spec = reactxgb::config::resolve_spec(str_arg(spec, "spec")?)?;
        let r = network_cost(&spec, &CostOptions { weight_scaling })?;
        *out = RxgbCost {
            bops: r.totals.bops,
            flops: r.totals.flops,
            mac_flops: r.mac_flops(),
            param_bits: r.totals.param_bits,
            ops: r.ops(),
        };
        Ok(())
    })
}
