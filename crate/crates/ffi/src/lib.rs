//! C ABI for dialeval.
//!
//! Objects are opaque handles created by `*_load`/`dialeval_extract`/
//! `dialeval_train` and released with the matching `*_free`. Every fallible
//! call returns a [`DialevalStatus`]; on failure
//! [`dialeval_last_error_message`] describes the error for the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use dialeval::corpus::{load_corpus, Corpus};
use dialeval::eval::loocv;
use dialeval::features::{feature_matrix, ExtractOptions, FeatureTable, FEATURE_COUNT};
use dialeval::gbt::{fit, GbtConfig, GbtModel};
use dialeval::shapley::TreeValueFunction;
use dialeval::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DialevalStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    InvalidData = 5,
    Dimension = 6,
    Degenerate = 7,
    Config = 8,
    Model = 9,
    OutOfRange = 10,
    Panic = 11,
}

/// Boosting hyperparameters; obtain defaults from [`dialeval_gbt_config_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DialevalGbtConfig {
    pub n_trees: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub subsample: f64,
    pub seed: u64,
}

impl From<DialevalGbtConfig> for GbtConfig {
    fn from(c: DialevalGbtConfig) -> Self {
        GbtConfig {
            n_trees: c.n_trees,
            learning_rate: c.learning_rate,
            max_depth: c.max_depth,
            min_samples_leaf: c.min_samples_leaf,
            subsample: c.subsample,
            seed: c.seed,
        }
    }
}

/// Opaque corpus handle.
pub struct DialevalCorpus(Corpus);

/// Opaque feature table handle: one 11-feature row and score per dialogue.
pub struct DialevalFeatures(FeatureTable);

/// Opaque fitted model handle.
pub struct DialevalModel(GbtModel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: DialevalStatus, message: impl Into<String>) -> DialevalStatus {
    set_error(message.into());
    status
}

fn status_of(e: &Error) -> DialevalStatus {
    match e {
        Error::Io { .. } => DialevalStatus::Io,
        Error::Parse { .. } | Error::Csv(_) | Error::Version { .. } => DialevalStatus::Parse,
        Error::Invalid { .. } | Error::MissingScore(_) | Error::EmptyScores | Error::EmptyDialogue(_) => {
            DialevalStatus::InvalidData
        }
        Error::Dimension { .. } | Error::TooManyFeatures(_) => DialevalStatus::Dimension,
        Error::Degenerate(_) => DialevalStatus::Degenerate,
        Error::Config(_) => DialevalStatus::Config,
        Error::Model { .. } => DialevalStatus::Model,
    }
}

fn from_error(e: Error) -> DialevalStatus {
    fail(status_of(&e), e.to_string())
}

/// Runs `f`, converting panics into [`DialevalStatus::Panic`].
fn guard(f: impl FnOnce() -> DialevalStatus) -> DialevalStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(DialevalStatus::Panic, "internal panic"),
    }
}

macro_rules! non_null {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            return fail(DialevalStatus::NullPointer, concat!("`", stringify!($p), "` is null"));
        })+
    };
}

unsafe fn path_arg<'a>(path: *const c_char) -> Result<&'a str, DialevalStatus> {
    if path.is_null() {
        return Err(fail(DialevalStatus::NullPointer, "`path` is null"));
    }
    CStr::from_ptr(path)
        .to_str()
        .map_err(|_| fail(DialevalStatus::InvalidUtf8, "`path` is not valid UTF-8"))
}

unsafe fn row_arg<'a>(row: *const f64, len: usize) -> Result<&'a [f64], DialevalStatus> {
    if row.is_null() {
        return Err(fail(DialevalStatus::NullPointer, "`row` is null"));
    }
    if len != FEATURE_COUNT {
        return Err(fail(
            DialevalStatus::Dimension,
            format!("expected {FEATURE_COUNT} features, got {len}"),
        ));
    }
    Ok(std::slice::from_raw_parts(row, len))
}

fn boxed<T>(out: *mut *mut T, value: T) -> DialevalStatus {
    // SAFETY: callers check `out` for null first.
    unsafe { *out = Box::into_raw(Box::new(value)) };
    DialevalStatus::Ok
}

/// Message for the most recent failure on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dialeval_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dialeval_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}

/// Number of behavior features per row.
#[no_mangle]
pub extern "C" fn dialeval_feature_count() -> usize {
    FEATURE_COUNT
}

#[no_mangle]
pub extern "C" fn dialeval_gbt_config_default() -> DialevalGbtConfig {
    let c = GbtConfig::default();
    DialevalGbtConfig {
        n_trees: c.n_trees,
        learning_rate: c.learning_rate,
        max_depth: c.max_depth,
        min_samples_leaf: c.min_samples_leaf,
        subsample: c.subsample,
        seed: c.seed,
    }
}

/// Loads a JSONL corpus.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dialeval_corpus_load(path: *const c_char, out: *mut *mut DialevalCorpus) -> DialevalStatus {
    guard(|| {
        non_null!(out);
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match load_corpus(path) {
            Ok(c) => boxed(out, DialevalCorpus(c)),
            Err(e) => fail(status_of(&e), format!("{path}: {e}")),
        }
    })
}

/// Number of dialogues; 0 for NULL.
///
/// # Safety
/// `corpus` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dialeval_corpus_len(corpus: *const DialevalCorpus) -> usize {
    corpus.as_ref().map_or(0, |c| c.0.len())
}

/// # Safety
/// `corpus` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dialeval_corpus_free(corpus: *mut DialevalCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

/// Extracts the feature table of every dialogue.
///
/// # Safety
/// `corpus` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dialeval_extract(
    corpus: *const DialevalCorpus,
    ipu_threshold_ms: i64,
    exclude_backchannel_tokens: bool,
    out: *mut *mut DialevalFeatures,
) -> DialevalStatus {
    guard(|| {
        non_null!(corpus, out);
        let opts = ExtractOptions {
            ipu_threshold_ms,
            exclude_backchannel_tokens,
        };
        match feature_matrix(&(*corpus).0, &opts) {
            Ok(t) => boxed(out, DialevalFeatures(t)),
            Err(e) => from_error(e),
        }
    })
}

/// Number of rows; 0 for NULL.
///
/// # Safety
/// `features` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dialeval_features_len(features: *const DialevalFeatures) -> usize {
    features.as_ref().map_or(0, |f| f.0.len())
}

/// Copies row `index` into `row_out` (11 values) and its score into `score_out`.
///
/// # Safety
/// `features` must be a live handle; `row_out` must hold 11 doubles;
/// `score_out` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn dialeval_features_row(
    features: *const DialevalFeatures,
    index: usize,
    row_out: *mut f64,
    score_out: *mut f64,
) -> DialevalStatus {
    guard(|| {
        non_null!(features, row_out);
        let t = &(*features).0;
        if index >= t.len() {
            return fail(
                DialevalStatus::OutOfRange,
                format!("row {index} out of range (len {})", t.len()),
            );
        }
        ptr::copy_nonoverlapping(t.rows[index].0.as_ptr(), row_out, FEATURE_COUNT);
        if !score_out.is_null() {
            *score_out = t.targets[index];
        }
        DialevalStatus::Ok
    })
}

/// # Safety
/// `features` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dialeval_features_free(features: *mut DialevalFeatures) {
    if !features.is_null() {
        drop(Box::from_raw(features));
    }
}

/// Fits a model on the table's rows and scores.
///
/// # Safety
/// `features` must be a live handle; `config` must point to a config; `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn dialeval_train(
    features: *const DialevalFeatures,
    config: *const DialevalGbtConfig,
    out: *mut *mut DialevalModel,
) -> DialevalStatus {
    guard(|| {
        non_null!(features, config, out);
        let t = &(*features).0;
        match fit(&t.matrix(), &t.targets, &(*config).into()) {
            Ok(m) => boxed(out, DialevalModel(m)),
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `model` must be a live handle; `row` must hold `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dialeval_model_predict(
    model: *const DialevalModel,
    row: *const f64,
    len: usize,
    out: *mut f64,
) -> DialevalStatus {
    guard(|| {
        non_null!(model, out);
        let row = match row_arg(row, len) {
            Ok(r) => r,
            Err(s) => return s,
        };
        match (*model).0.predict(row) {
            Ok(v) => {
                *out = v;
                DialevalStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Exact Shapley values of `row` against the rows of `background`.
/// Writes 11 values to `phi_out` and the mean background prediction to
/// `base_out` (may be NULL).
///
/// # Safety
/// Handles must be live; `row` must hold `len` doubles; `phi_out` must hold 11.
#[no_mangle]
pub unsafe extern "C" fn dialeval_model_shap(
    model: *const DialevalModel,
    background: *const DialevalFeatures,
    row: *const f64,
    len: usize,
    phi_out: *mut f64,
    base_out: *mut f64,
) -> DialevalStatus {
    guard(|| {
        non_null!(model, background, phi_out);
        let row = match row_arg(row, len) {
            Ok(r) => r,
            Err(s) => return s,
        };
        let bg = (*background).0.matrix();
        let attribution = TreeValueFunction::new(&(*model).0, &bg).and_then(|vf| vf.shap_values(row));
        match attribution {
            Ok(a) => {
                ptr::copy_nonoverlapping(a.phi.as_ptr(), phi_out, FEATURE_COUNT);
                if !base_out.is_null() {
                    *base_out = a.base;
                }
                DialevalStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Leave-one-dialogue-out mean absolute error.
///
/// # Safety
/// `features` must be a live handle; `config` must point to a config; `mae_out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn dialeval_loocv_mae(
    features: *const DialevalFeatures,
    config: *const DialevalGbtConfig,
    mae_out: *mut f64,
) -> DialevalStatus {
    guard(|| {
        non_null!(features, config, mae_out);
        let t = &(*features).0;
        match loocv(&t.matrix(), &t.targets, &t.ids, &(*config).into(), None) {
            Ok(r) => {
                *mae_out = r.mae;
                DialevalStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Writes the model in its text format.
///
/// # Safety
/// `model` must be a live handle; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dialeval_model_save(model: *const DialevalModel, path: *const c_char) -> DialevalStatus {
    guard(|| {
        non_null!(model);
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match (*model).0.save(path) {
            Ok(()) => DialevalStatus::Ok,
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dialeval_model_load(path: *const c_char, out: *mut *mut DialevalModel) -> DialevalStatus {
    guard(|| {
        non_null!(out);
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match GbtModel::load(path) {
            Ok(m) => boxed(out, DialevalModel(m)),
            Err(e) => fail(status_of(&e), format!("{path}: {e}")),
        }
    })
}

/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dialeval_model_free(model: *mut DialevalModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
