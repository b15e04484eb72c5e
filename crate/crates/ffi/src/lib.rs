//! C interface to the embedding network and the verification metrics.
//!
//! Every function returns an [`RsvStatus`]. On failure the message is kept
//! per thread and can be read with [`rsv_last_error_message`]. Networks are
//! opaque handles created by [`rsv_network_new`] or [`rsv_network_load`] and
//! released with [`rsv_network_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use resunet_sv::dsp::FeatureMatrix;
use resunet_sv::metrics::{self, DcfParams};
use resunet_sv::resunet::{load_checkpoint, ResUnet, ResUnetConfig};
use resunet_sv::{backend, Error};

/// Result code of every exported function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RsvStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Data = 5,
    Panic = 6,
}

/// Opaque network handle.
pub struct RsvNetwork {
    net: ResUnet,
}

/// Network shape. `se_reduction` of 0 selects the default.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct RsvNetworkConfig {
    pub residual_blocks: usize,
    pub base_channels: usize,
    pub embed_dim: usize,
    pub n_mels: usize,
    pub se_reduction: usize,
}

impl From<RsvNetworkConfig> for ResUnetConfig {
    fn from(c: RsvNetworkConfig) -> Self {
        let default = ResUnetConfig::default();
        ResUnetConfig {
            residual_blocks: c.residual_blocks,
            base_channels: c.base_channels,
            embed_dim: c.embed_dim,
            n_mels: c.n_mels,
            se_reduction: if c.se_reduction == 0 { default.se_reduction } else { c.se_reduction },
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> RsvStatus {
    match e {
        Error::Io { .. } => RsvStatus::Io,
        Error::Config(_) | Error::Shape(_) => RsvStatus::InvalidArgument,
        e if e.exit_code() == 3 => RsvStatus::Format,
        _ => RsvStatus::Data,
    }
}

struct Failure(RsvStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(RsvStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(RsvStatus::InvalidArgument, msg.into())
}

/// Runs `f`, turning errors and panics into a status and a stored message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> RsvStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            RsvStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            RsvStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn bool_labels(p: *const u8, n: usize) -> Result<Vec<bool>, Failure> {
    Ok(slice(p, n, "labels")?.iter().map(|&l| l != 0).collect())
}

/// Builds a randomly initialized network.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn rsv_network_new(config: RsvNetworkConfig, seed: u64, out: *mut *mut RsvNetwork) -> RsvStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let net = ResUnet::build(config.into(), seed)?;
        *out = Box::into_raw(Box::new(RsvNetwork { net }));
        Ok(())
    })
}

/// Loads a checkpoint that must match `config`.
///
/// # Safety
/// `path` must be a nul-terminated UTF-8 string; `out` as in [`rsv_network_new`].
#[no_mangle]
pub unsafe extern "C" fn rsv_network_load(
    path: *const c_char,
    config: RsvNetworkConfig,
    out: *mut *mut RsvNetwork,
) -> RsvStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| invalid("path is not valid UTF-8"))?;
        let net = load_checkpoint(Path::new(path), &config.into())?;
        *out = Box::into_raw(Box::new(RsvNetwork { net }));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `net` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rsv_network_free(net: *mut RsvNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Embedding size of a network, or 0 for a null handle.
///
/// # Safety
/// `net` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rsv_network_embed_dim(net: *const RsvNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.net.config().embed_dim)
}

/// Embeds one utterance. `features` is frame-major, `frames * n_mels` values;
/// `out_len` must equal the embedding size.
///
/// # Safety
/// Pointers must reference buffers of the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn rsv_network_forward(
    net: *const RsvNetwork,
    features: *const f32,
    frames: usize,
    n_mels: usize,
    out: *mut f32,
    out_len: usize,
) -> RsvStatus {
    guard(|| {
        let net = net.as_ref().ok_or_else(|| null("network"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let dim = net.net.config().embed_dim;
        if out_len != dim {
            return Err(invalid(format!("output buffer holds {out_len} values, embedding has {dim}")));
        }
        let data = slice(features, frames * n_mels, "features")?.to_vec();
        let feats = FeatureMatrix::new(frames, n_mels, data)?;
        let emb = net.net.forward(&feats)?;
        std::slice::from_raw_parts_mut(out, dim).copy_from_slice(&emb);
        Ok(())
    })
}

/// Cosine similarity of two vectors of length `n`.
///
/// # Safety
/// `a` and `b` must hold `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rsv_cosine(a: *const f32, b: *const f32, n: usize, out: *mut f64) -> RsvStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = backend::cosine(slice(a, n, "a")?, slice(b, n, "b")?)?;
        Ok(())
    })
}

/// Equal error rate as a fraction, and the threshold where it occurs.
/// Nonzero labels mark target trials. `out_threshold` may be null.
///
/// # Safety
/// `scores` and `labels` must hold `n` values; `out_eer` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rsv_eer(
    scores: *const f64,
    labels: *const u8,
    n: usize,
    out_eer: *mut f64,
    out_threshold: *mut f64,
) -> RsvStatus {
    guard(|| {
        if out_eer.is_null() {
            return Err(null("out_eer"));
        }
        let p = metrics::eer_point(slice(scores, n, "scores")?, &bool_labels(labels, n)?)?;
        *out_eer = p.eer;
        if !out_threshold.is_null() {
            *out_threshold = p.threshold;
        }
        Ok(())
    })
}

/// Minimum normalized detection cost.
///
/// # Safety
/// As for [`rsv_eer`].
#[no_mangle]
pub unsafe extern "C" fn rsv_min_dcf(
    scores: *const f64,
    labels: *const u8,
    n: usize,
    p_target: f64,
    c_miss: f64,
    c_fa: f64,
    out: *mut f64,
) -> RsvStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let params = DcfParams { p_target, c_miss, c_fa };
        params.validate()?;
        *out = metrics::min_dcf(slice(scores, n, "scores")?, &bool_labels(labels, n)?, &params)?;
        Ok(())
    })
}

/// Message of the last failed call on this thread, or null after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn rsv_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version, nul-terminated and static.
#[no_mangle]
pub extern "C" fn rsv_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
