//! C ABI over `dlharmonize`.
//!
//! Objects cross the boundary as opaque handles (`DlhDataset`, `DlhDictionary`)
//! that the caller frees with the matching `*_free`. Every fallible call
//! returns a [`DlhStatus`]; on failure the message is kept per thread and can
//! be read with [`dlh_last_error`] until the next failing call on that thread.
//! Panics are caught at the boundary and reported as `DLH_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use dlharmonize::config::RunConfig;
use dlharmonize::dictionary::{Dictionary, Trainer};
use dlharmonize::harmonizer::{harmonize, pooled_patches, Dataset};
use dlharmonize::lasso::{Selection, SparseCoder};
use dlharmonize::volume::{load_mask, load_volume, save_volume};
use dlharmonize::Error;
use nalgebra::DVector;

/// Result of every fallible call. Values 1–8 mirror the library error codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DlhStatus {
    Ok = 0,
    Io = 1,
    Format = 2,
    Argument = 3,
    Extraction = 4,
    Init = 5,
    Fit = 6,
    Degenerate = 7,
    Evaluation = 8,
    NullPointer = 9,
    InvalidUtf8 = 10,
    Panic = 11,
}

/// Lambda selection rule for [`dlh_sparse_code`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DlhSelection {
    Aic = 0,
    Cv = 1,
}

/// A loaded 4D volume with its gradient table and brain mask.
pub struct DlhDataset(Dataset);

/// A trained or loaded dictionary.
pub struct DlhDictionary(Dictionary);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> DlhStatus {
    match e.code() {
        "E_IO" => DlhStatus::Io,
        "E_FORMAT" => DlhStatus::Format,
        "E_ARGUMENT" => DlhStatus::Argument,
        "E_EXTRACTION" => DlhStatus::Extraction,
        "E_INIT" => DlhStatus::Init,
        "E_FIT" => DlhStatus::Fit,
        "E_DEGENERATE" => DlhStatus::Degenerate,
        _ => DlhStatus::Evaluation,
    }
}

struct Fail(DlhStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), format!("{}: {e}", e.code()))
    }
}

/// Runs `f`, translating errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> DlhStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DlhStatus::Ok,
        Ok(Err(Fail(s, msg))) => {
            set_error(msg);
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            DlhStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(DlhStatus::NullPointer, format!("{what} is null"))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(DlhStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn path(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    text(p, what).map(PathBuf::from)
}

/// A null `json` means defaults.
unsafe fn config(json: *const c_char) -> Result<RunConfig, Fail> {
    let cfg = if json.is_null() {
        RunConfig::default()
    } else {
        RunConfig::from_json(text(json, "config")?)?
    }
    .seeded();
    cfg.validate()?;
    Ok(cfg)
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

fn store<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dlh_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or null. Valid until the next
/// failing call on the same thread; do not free.
#[no_mangle]
pub extern "C" fn dlh_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Loads a NIfTI volume, FSL bvals/bvecs and a mask.
///
/// # Safety
/// Path arguments must be valid NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dlh_dataset_load(
    input: *const c_char,
    bvals: *const c_char,
    bvecs: *const c_char,
    mask: *const c_char,
    out: *mut *mut DlhDataset,
) -> DlhStatus {
    guard(|| {
        let input = path(input, "input")?;
        let (volume, gtab) = load_volume(&input, path(bvals, "bvals")?, path(bvecs, "bvecs")?)?;
        let mask = load_mask(path(mask, "mask")?, &volume)?;
        let id = input.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        store(out, DlhDataset(Dataset { id, volume, gtab, mask }))
    })
}

/// Writes the 4D shape (x, y, z, volumes) into `dims[0..4]`.
///
/// # Safety
/// `ds` must come from [`dlh_dataset_load`]; `dims` must hold four values.
#[no_mangle]
pub unsafe extern "C" fn dlh_dataset_shape(ds: *const DlhDataset, dims: *mut usize) -> DlhStatus {
    guard(|| {
        let ds = handle(ds, "dataset")?;
        if dims.is_null() {
            return Err(null("dims"));
        }
        std::slice::from_raw_parts_mut(dims, 4).copy_from_slice(&ds.0.volume.shape());
        Ok(())
    })
}

/// # Safety
/// `ds` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dlh_dataset_free(ds: *mut DlhDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// # Safety
/// `path_` must be a valid NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dlh_dictionary_read(path_: *const c_char, out: *mut *mut DlhDictionary) -> DlhStatus {
    guard(|| store(out, DlhDictionary(Dictionary::read(path(path_, "path")?)?)))
}

/// # Safety
/// `d` must be a live handle; `path_` a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dlh_dictionary_write(d: *const DlhDictionary, path_: *const c_char) -> DlhStatus {
    guard(|| Ok(handle(d, "dictionary")?.0.write(path(path_, "path")?)?))
}

/// Atom length `m` and atom count `p`.
///
/// # Safety
/// `d` must be a live handle; `m` and `p` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dlh_dictionary_dims(d: *const DlhDictionary, m: *mut usize, p: *mut usize) -> DlhStatus {
    guard(|| {
        let d = handle(d, "dictionary")?;
        if m.is_null() || p.is_null() {
            return Err(null("m or p"));
        }
        *m = d.0.m();
        *p = d.0.p();
        Ok(())
    })
}

/// # Safety
/// `d` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dlh_dictionary_free(d: *mut DlhDictionary) {
    if !d.is_null() {
        drop(Box::from_raw(d));
    }
}

/// Trains a dictionary on the pooled patches of `n` datasets. `config_json`
/// is a run configuration in the command-line tool's format, or null.
///
/// # Safety
/// `datasets` must point to `n` live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dlh_train(
    datasets: *const *const DlhDataset,
    n: usize,
    config_json: *const c_char,
    out: *mut *mut DlhDictionary,
) -> DlhStatus {
    guard(|| {
        if datasets.is_null() {
            return Err(null("datasets"));
        }
        let cfg = config(config_json)?;
        let handles = std::slice::from_raw_parts(datasets, n);
        let sets: Vec<Dataset> = handles
            .iter()
            .map(|&h| handle(h, "dataset").map(|d| d.0.clone()))
            .collect::<Result<_, _>>()?;
        let (omega, shape) = pooled_patches(&sets, &cfg.patch)?;
        let sources = sets.iter().map(|d| d.id.clone()).collect();
        let mut trainer = Trainer::new(&omega, shape, cfg.train)?.with_sources(sources);
        while !trainer.is_done() {
            trainer.step()?;
        }
        store(out, DlhDictionary(trainer.into_dictionary()?))
    })
}

/// Reconstructs `ds` with `d` and writes the result to `out_path` (NIfTI).
///
/// # Safety
/// Handles must be live; strings valid and NUL-terminated (`config_json` may be null).
#[no_mangle]
pub unsafe extern "C" fn dlh_harmonize(
    d: *const DlhDictionary,
    ds: *const DlhDataset,
    config_json: *const c_char,
    out_path: *const c_char,
) -> DlhStatus {
    guard(|| {
        let (d, ds) = (handle(d, "dictionary")?, handle(ds, "dataset")?);
        let cfg = config(config_json)?;
        let vol = harmonize(&ds.0, &d.0, &cfg.harmonize_config())?;
        Ok(save_volume(&vol, path(out_path, "out_path")?)?)
    })
}

/// Sparse-codes one signal `x` (length `m`) against the atoms of `d`, writing
/// `p` coefficients to `alpha` and the selected λ and nonzero count to
/// `lambda` and `df` (either may be null).
///
/// # Safety
/// `x` must hold `x_len` values and `alpha` `alpha_len` writable values.
#[no_mangle]
pub unsafe extern "C" fn dlh_sparse_code(
    d: *const DlhDictionary,
    x: *const f64,
    x_len: usize,
    selection: DlhSelection,
    seed: u64,
    alpha: *mut f64,
    alpha_len: usize,
    lambda: *mut f64,
    df: *mut usize,
) -> DlhStatus {
    guard(|| {
        let d = handle(d, "dictionary")?;
        if x.is_null() || alpha.is_null() {
            return Err(null("x or alpha"));
        }
        let (m, p) = (d.0.m(), d.0.p());
        if x_len != m || alpha_len != p {
            return Err(Fail(
                DlhStatus::Argument,
                format!("expected x of length {m} and alpha of length {p}, got {x_len} and {alpha_len}"),
            ));
        }
        let mut cfg = RunConfig::default().coding;
        cfg.selection = match selection {
            DlhSelection::Aic => Selection::Aic,
            DlhSelection::Cv => Selection::Cv,
        };
        cfg.rng_seed = seed;
        let coder = SparseCoder::new(d.0.atoms().clone());
        let code = coder.code(&DVector::from_column_slice(std::slice::from_raw_parts(x, m)), &cfg, 0)?;
        std::slice::from_raw_parts_mut(alpha, p).copy_from_slice(code.alpha.as_slice());
        if !lambda.is_null() {
            *lambda = code.lambda_selected;
        }
        if !df.is_null() {
            *df = code.df;
        }
        Ok(())
    })
}
