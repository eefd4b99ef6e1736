//! C ABI over the `twostage` library.
//!
//! Objects cross the boundary as opaque handles (`TsCorpus`, `TsFeatures`,
//! `TsModel`) that the caller releases with the matching `*_free` function.
//! Every fallible call returns a `TsStatus`; on failure a message is kept per
//! thread and can be copied out with `ts_last_error_message`. Output pointers
//! are written only on success.
//!
//! Training stays on the Rust/CLI side; this surface covers loading and
//! generating corpora, the imbalance transforms, featurization, the loss
//! constants and checkpoint inference.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use twostage::dataset::{
    apply_longtail_imbalance, apply_ratio_imbalance, apply_step_imbalance, class_histogram, featurize,
    generate_synthetic, load_corpus, parse_corpus, write_corpus, DatasetError, FeatureMatrix, LabeledCorpus,
    SynthSpec,
};
use twostage::losses::{effective_number, ldam_margins};
use twostage::model::{load_checkpoint, ModelError, ParamSet};
use twostage::ClassHistogram;

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Data = 5,
    Model = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// A labeled corpus.
pub struct TsCorpus(LabeledCorpus);

/// A featurized corpus (rows are L2-normalized hashed n-gram counts).
pub struct TsFeatures(FeatureMatrix<f32>);

/// A trained classifier loaded from a checkpoint.
pub struct TsModel(ParamSet<f32>);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

struct Failure(TsStatus, String);

impl From<DatasetError> for Failure {
    fn from(e: DatasetError) -> Self {
        let status = match e {
            DatasetError::MissingFile(_) | DatasetError::Io { .. } => TsStatus::Io,
            DatasetError::MalformedLine { .. } | DatasetError::EmptyFile(_) => TsStatus::Parse,
            DatasetError::InvalidParameter(_) => TsStatus::InvalidArgument,
            _ => TsStatus::Data,
        };
        Failure(status, e.to_string())
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        Failure(TsStatus::Model, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(TsStatus::InvalidArgument, msg.into())
}

/// Run `f`, record any error message, and convert panics to `Panic`.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TsStatus {
    let status = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => return TsStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            TsStatus::Panic
        }
    };
    status
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn null(what: &str) -> Failure {
    Failure(TsStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn put_scalar<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = value;
    Ok(())
}

/// Copy `values` into `out[..capacity]`; `BufferTooSmall` if it does not fit.
/// `written` (optional) receives the number of values either way.
unsafe fn put_slice<T: Copy>(values: &[T], out: *mut T, capacity: usize, written: *mut usize) -> Result<(), Failure> {
    if !written.is_null() {
        *written = values.len();
    }
    if values.len() > capacity {
        return Err(Failure(
            TsStatus::BufferTooSmall,
            format!("need room for {} values, got {capacity}", values.len()),
        ));
    }
    if !values.is_empty() {
        if out.is_null() {
            return Err(null("output buffer"));
        }
        std::ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    }
    Ok(())
}

/// Copy the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len - 1` bytes). Returns the full message length in bytes,
/// excluding the terminator; 0 when there is no error recorded.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ts_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ts_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Load a `label<TAB>text` corpus file, keeping at most `max_tokens` tokens
/// per document.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ts_corpus_load(path: *const c_char, max_tokens: usize, out: *mut *mut TsCorpus) -> TsStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        put(out, TsCorpus(load_corpus(path, max_tokens)?))
    })
}

/// Parse corpus text held in memory.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ts_corpus_parse(text: *const c_char, max_tokens: usize, out: *mut *mut TsCorpus) -> TsStatus {
    guard(|| {
        let text = str_arg(text, "text")?;
        put(out, TsCorpus(parse_corpus(text, max_tokens)?))
    })
}

/// Generate a synthetic bag-of-tokens corpus; class `c` favors the token block
/// `[c*B, (c+1)*B)` with `B = vocab_size / num_classes`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ts_corpus_generate(
    num_classes: usize,
    vocab_size: usize,
    doc_length: usize,
    samples_per_class: usize,
    separation: f64,
    shift: f64,
    seed: u64,
    out: *mut *mut TsCorpus,
) -> TsStatus {
    guard(|| {
        let spec = SynthSpec {
            num_classes,
            vocab_size,
            doc_length,
            samples_per_class,
            separation,
            shift,
            seed,
        };
        put(out, TsCorpus(generate_synthetic(&spec)?))
    })
}

/// Write a corpus in the TSV format.
///
/// # Safety
/// `corpus` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ts_corpus_write(corpus: *const TsCorpus, path: *const c_char) -> TsStatus {
    guard(|| {
        let c = handle(corpus, "corpus")?;
        let path = PathBuf::from(str_arg(path, "path")?);
        Ok(write_corpus(&c.0, path)?)
    })
}

/// # Safety
/// `corpus` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ts_corpus_len(corpus: *const TsCorpus, out: *mut usize) -> TsStatus {
    guard(|| put_scalar(out, handle(corpus, "corpus")?.0.len()))
}

/// # Safety
/// `corpus` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ts_corpus_num_classes(corpus: *const TsCorpus, out: *mut usize) -> TsStatus {
    guard(|| put_scalar(out, handle(corpus, "corpus")?.0.num_classes()))
}

/// Per-class sample counts, in class-index order.
///
/// # Safety
/// `corpus` must be a live handle; `counts` must hold `capacity` values;
/// `written` may be null.
#[no_mangle]
pub unsafe extern "C" fn ts_corpus_histogram(
    corpus: *const TsCorpus,
    counts: *mut usize,
    capacity: usize,
    written: *mut usize,
) -> TsStatus {
    guard(|| {
        let hist = class_histogram(&handle(corpus, "corpus")?.0);
        put_slice(&hist.counts, counts, capacity, written)
    })
}

/// Name of class `class` as a NUL-terminated string (see
/// `ts_last_error_message` for the truncation and return conventions).
///
/// # Safety
/// `corpus` must be a live handle; `buf` must hold `len` bytes; `needed` may
/// be null.
#[no_mangle]
pub unsafe extern "C" fn ts_corpus_class_name(
    corpus: *const TsCorpus,
    class: usize,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> TsStatus {
    guard(|| {
        let c = handle(corpus, "corpus")?;
        let name = c
            .0
            .class_names()
            .get(class)
            .ok_or_else(|| invalid(format!("class {class} out of range")))?;
        if !needed.is_null() {
            *needed = name.len() + 1;
        }
        if buf.is_null() || len <= name.len() {
            return Err(Failure(TsStatus::BufferTooSmall, format!("need {} bytes", name.len() + 1)));
        }
        std::ptr::copy_nonoverlapping(name.as_ptr().cast::<c_char>(), buf, name.len());
        *buf.add(name.len()) = 0;
        Ok(())
    })
}

/// Shrink `minority_class` of a two-class corpus to `floor(ratio * majority)`.
///
/// # Safety
/// `corpus` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ts_corpus_apply_ratio(
    corpus: *const TsCorpus,
    minority_class: usize,
    ratio: f64,
    seed: u64,
    out: *mut *mut TsCorpus,
) -> TsStatus {
    guard(|| {
        let c = handle(corpus, "corpus")?;
        put(out, TsCorpus(apply_ratio_imbalance(&c.0, minority_class, ratio, seed)?))
    })
}

/// Shrink each listed class to exactly `target_size` samples.
///
/// # Safety
/// `corpus` must be a live handle; `classes` must hold `num_classes` values;
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ts_corpus_apply_step(
    corpus: *const TsCorpus,
    classes: *const usize,
    num_classes: usize,
    target_size: usize,
    seed: u64,
    out: *mut *mut TsCorpus,
) -> TsStatus {
    guard(|| {
        let c = handle(corpus, "corpus")?;
        if classes.is_null() && num_classes > 0 {
            return Err(null("classes"));
        }
        let set: BTreeSet<usize> = if num_classes == 0 {
            BTreeSet::new()
        } else {
            std::slice::from_raw_parts(classes, num_classes).iter().copied().collect()
        };
        put(out, TsCorpus(apply_step_imbalance(&c.0, &set, target_size, seed)?))
    })
}

/// Long-tail profile: the class of frequency rank `i` keeps
/// `floor(N_max * mu^i)` samples.
///
/// # Safety
/// `corpus` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ts_corpus_apply_longtail(
    corpus: *const TsCorpus,
    mu: f64,
    seed: u64,
    out: *mut *mut TsCorpus,
) -> TsStatus {
    guard(|| {
        let c = handle(corpus, "corpus")?;
        put(out, TsCorpus(apply_longtail_imbalance(&c.0, mu, seed)?))
    })
}

/// # Safety
/// `corpus` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ts_corpus_free(corpus: *mut TsCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

/// Hashed bag of 1..=`ngram_max`-grams in `dim` buckets.
///
/// # Safety
/// `corpus` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ts_featurize(
    corpus: *const TsCorpus,
    dim: usize,
    ngram_max: usize,
    out: *mut *mut TsFeatures,
) -> TsStatus {
    guard(|| {
        let c = handle(corpus, "corpus")?;
        put(out, TsFeatures(featurize(&c.0, dim, ngram_max)?))
    })
}

/// # Safety
/// `features` must be a live handle; `rows`/`dim` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn ts_features_shape(features: *const TsFeatures, rows: *mut usize, dim: *mut usize) -> TsStatus {
    guard(|| {
        let f = handle(features, "features")?;
        put_scalar(rows, f.0.rows())?;
        put_scalar(dim, f.0.dim())
    })
}

/// Copy the row-major feature values (`rows * dim` floats).
///
/// # Safety
/// `features` must be a live handle; `values` must hold `capacity` floats;
/// `written` may be null.
#[no_mangle]
pub unsafe extern "C" fn ts_features_values(
    features: *const TsFeatures,
    values: *mut f32,
    capacity: usize,
    written: *mut usize,
) -> TsStatus {
    guard(|| {
        let f = handle(features, "features")?;
        let flat: Vec<f32> = f.0.values().iter().copied().collect();
        put_slice(&flat, values, capacity, written)
    })
}

/// # Safety
/// `features` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ts_features_free(features: *mut TsFeatures) {
    if !features.is_null() {
        drop(Box::from_raw(features));
    }
}

/// Load a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ts_model_load(path: *const c_char, out: *mut *mut TsModel) -> TsStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let bytes = std::fs::read(path).map_err(|e| Failure(TsStatus::Io, format!("{path}: {e}")))?;
        put(out, TsModel(load_checkpoint(&bytes)?))
    })
}

/// Load a checkpoint from memory.
///
/// # Safety
/// `bytes` must hold `len` bytes; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ts_model_from_bytes(bytes: *const u8, len: usize, out: *mut *mut TsModel) -> TsStatus {
    guard(|| {
        if bytes.is_null() {
            return Err(null("bytes"));
        }
        let bytes = std::slice::from_raw_parts(bytes, len);
        put(out, TsModel(load_checkpoint(bytes)?))
    })
}

/// # Safety
/// `model` must be a live handle; `input_dim`/`num_classes` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn ts_model_shape(model: *const TsModel, input_dim: *mut usize, num_classes: *mut usize) -> TsStatus {
    guard(|| {
        let m = handle(model, "model")?;
        put_scalar(input_dim, m.0.input_dim())?;
        put_scalar(num_classes, m.0.num_classes())
    })
}

/// Predicted class per feature row.
///
/// # Safety
/// `model` and `features` must be live handles; `labels` must hold
/// `capacity` values; `written` may be null.
#[no_mangle]
pub unsafe extern "C" fn ts_model_predict(
    model: *const TsModel,
    features: *const TsFeatures,
    labels: *mut usize,
    capacity: usize,
    written: *mut usize,
) -> TsStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let f = handle(features, "features")?;
        let pred = m.0.predict(f.0.values())?;
        put_slice(&pred, labels, capacity, written)
    })
}

/// Raw logits, row-major (`rows * num_classes` floats).
///
/// # Safety
/// `model` and `features` must be live handles; `logits` must hold
/// `capacity` floats; `written` may be null.
#[no_mangle]
pub unsafe extern "C" fn ts_model_logits(
    model: *const TsModel,
    features: *const TsFeatures,
    logits: *mut f32,
    capacity: usize,
    written: *mut usize,
) -> TsStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let f = handle(features, "features")?;
        let z = m.0.logits(f.0.values())?;
        let flat: Vec<f32> = z.iter().copied().collect();
        put_slice(&flat, logits, capacity, written)
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ts_model_free(model: *mut TsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// LDAM margins `max_margin * (n_c / n_min)^(-1/4)` for the given class
/// counts, written to `margins[..num_classes]`.
///
/// # Safety
/// `counts` and `margins` must each hold `num_classes` values.
#[no_mangle]
pub unsafe extern "C" fn ts_ldam_margins(
    counts: *const usize,
    num_classes: usize,
    max_margin: f64,
    margins: *mut f64,
) -> TsStatus {
    guard(|| {
        if counts.is_null() {
            return Err(null("counts"));
        }
        let hist = ClassHistogram {
            counts: std::slice::from_raw_parts(counts, num_classes).to_vec(),
        };
        let m = ldam_margins(&hist, max_margin).map_err(|e| invalid(e.to_string()))?;
        put_slice(&m, margins, num_classes, std::ptr::null_mut())
    })
}

/// Effective number of samples `(1 - beta^n) / (1 - beta)`; `n` when `beta`
/// is 0 gives 1. Returns NaN for `beta` outside `[0, 1)`.
#[no_mangle]
pub extern "C" fn ts_effective_number(n: usize, beta: f64) -> f64 {
    if !(0.0..1.0).contains(&beta) {
        return f64::NAN;
    }
    effective_number(n, beta)
}
