//! C ABI over `fairgen`.
//!
//! Every fallible call returns a [`FairgenStatus`]; on anything other than
//! `Ok` the message is available from [`fairgen_last_error`] on the same
//! thread. Tables cross the boundary as opaque [`FairgenTable`] handles and
//! structured results as JSON strings owned by the caller, released with
//! [`fairgen_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use fairgen::augment::{augment_dataset, AugmentConfig};
use fairgen::fairness::{evaluate, EvaluationOptions};
use fairgen::kremoval::KRemoval;
use fairgen::pipeline::{run_pipeline, GridConfig, RunConfig};
use fairgen::table::{load_csv, DataTable, Schema};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FairgenStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Table = 4,
    Removal = 5,
    Augment = 6,
    Fairness = 7,
    Pipeline = 8,
    Panic = 9,
}

/// Opaque handle to an immutable table.
pub struct FairgenTable(DataTable);

struct Failure(FairgenStatus, String);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let message = CString::new(message.replace('\0', " ")).expect("interior NULs replaced");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(message));
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> FairgenStatus {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => FairgenStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("panic: {message}"));
            FairgenStatus::Panic
        }
    }
}

unsafe fn text<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if ptr.is_null() {
        return Err(Failure(FairgenStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| Failure(FairgenStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn table<'a>(handle: *const FairgenTable) -> Result<&'a DataTable, Failure> {
    handle.as_ref().map(|t| &t.0).ok_or_else(|| Failure(FairgenStatus::NullPointer, "table handle is null".into()))
}

fn out_ptr<T>(out: *mut T) -> Result<(), Failure> {
    if out.is_null() {
        Err(Failure(FairgenStatus::NullPointer, "output pointer is null".into()))
    } else {
        Ok(())
    }
}

fn into_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s).map(CString::into_raw).map_err(|_| Failure(FairgenStatus::InvalidArgument, "string contains NUL".into()))
}

fn new_table(table: DataTable) -> *mut FairgenTable {
    Box::into_raw(Box::new(FairgenTable(table)))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fairgen_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next fairgen call on the same thread.
#[no_mangle]
pub extern "C" fn fairgen_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Loads a CSV validated against a JSON schema file.
///
/// # Safety
/// `csv_path` and `schema_path` must be NUL-terminated strings; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn fairgen_table_load(
    csv_path: *const c_char,
    schema_path: *const c_char,
    out: *mut *mut FairgenTable,
) -> FairgenStatus {
    guard(|| {
        let csv_path = text(csv_path, "csv_path")?;
        let schema_path = text(schema_path, "schema_path")?;
        out_ptr(out)?;
        let schema = Schema::load(schema_path).map_err(|e| Failure(FairgenStatus::Table, e.to_string()))?;
        let loaded = load_csv(csv_path, &schema).map_err(|e| Failure(FairgenStatus::Table, e.to_string()))?;
        *out = new_table(loaded);
        Ok(())
    })
}

/// Releases a table. Null is ignored.
///
/// # Safety
/// `table` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fairgen_table_free(table: *mut FairgenTable) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}

/// # Safety
/// `table` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fairgen_table_num_rows(table: *const FairgenTable, out: *mut usize) -> FairgenStatus {
    guard(|| {
        let t = self::table(table)?;
        out_ptr(out)?;
        *out = t.len();
        Ok(())
    })
}

/// # Safety
/// `table` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fairgen_table_write_csv(table: *const FairgenTable, path: *const c_char) -> FairgenStatus {
    guard(|| {
        let t = self::table(table)?;
        let path = text(path, "path")?;
        t.write_csv(Path::new(path)).map_err(|e| Failure(FairgenStatus::Table, e.to_string()))
    })
}

/// K% removal on `protected_column`. Writes the kept rows as a new table and, when
/// `removed` is non-null, the number of removed rows.
///
/// # Safety
/// `table` must be a live handle; `protected_column` a NUL-terminated string; `out`
/// writable; `removed` null or writable.
#[no_mangle]
pub unsafe extern "C" fn fairgen_kremoval(
    table: *const FairgenTable,
    protected_column: *const c_char,
    k_percent: f64,
    out: *mut *mut FairgenTable,
    removed: *mut usize,
) -> FairgenStatus {
    guard(|| {
        let t = self::table(table)?;
        let protected = text(protected_column, "protected_column")?;
        out_ptr(out)?;
        if !(0.0..=100.0).contains(&k_percent) {
            return Err(Failure(FairgenStatus::InvalidArgument, format!("k_percent {k_percent} outside [0, 100]")));
        }
        let outcome = KRemoval::new(k_percent).apply(t, protected).map_err(|e| Failure(FairgenStatus::Removal, e.to_string()))?;
        if !removed.is_null() {
            *removed = outcome.removed_ids.len();
        }
        *out = new_table(outcome.kept);
        Ok(())
    })
}

/// Counterfactual augmentation on `protected_column` with default clustering.
///
/// # Safety
/// `table` must be a live handle; `protected_column` a NUL-terminated string; `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn fairgen_augment(
    table: *const FairgenTable,
    protected_column: *const c_char,
    add_percent: f64,
    seed: u64,
    out: *mut *mut FairgenTable,
) -> FairgenStatus {
    guard(|| {
        let t = self::table(table)?;
        let protected = text(protected_column, "protected_column")?;
        out_ptr(out)?;
        let config = AugmentConfig { add_percent, seed, ..AugmentConfig::default() };
        let outcome = augment_dataset(t, protected, &config).map_err(|e| Failure(FairgenStatus::Augment, e.to_string()))?;
        *out = new_table(outcome.table);
        Ok(())
    })
}

/// Fairness report for `predictions` (one byte per row, nonzero =
/// favourable) against the table's own labels. `attributes_json` is a JSON
/// array of protected column names. The report is written to `report_json`.
///
/// # Safety
/// `table` must be a live handle; `predictions` must point to `len` bytes;
/// `attributes_json` a NUL-terminated string; `report_json` writable.
#[no_mangle]
pub unsafe extern "C" fn fairgen_metrics(
    table: *const FairgenTable,
    predictions: *const u8,
    len: usize,
    attributes_json: *const c_char,
    min_support: usize,
    report_json: *mut *mut c_char,
) -> FairgenStatus {
    guard(|| {
        let t = self::table(table)?;
        let attributes = text(attributes_json, "attributes_json")?;
        out_ptr(report_json)?;
        if predictions.is_null() {
            return Err(Failure(FairgenStatus::NullPointer, "predictions is null".into()));
        }
        let attributes: Vec<String> =
            serde_json::from_str(attributes).map_err(|e| Failure(FairgenStatus::InvalidArgument, e.to_string()))?;
        let y_pred: Vec<bool> = std::slice::from_raw_parts(predictions, len).iter().map(|&b| b != 0).collect();
        let y_true = t.favourable_labels();
        let options = EvaluationOptions { min_support, ..EvaluationOptions::default() };
        let report =
            evaluate(&y_true, &y_pred, t, &attributes, &options).map_err(|e| Failure(FairgenStatus::Fairness, e.to_string()))?;
        *report_json = into_c_string(serde_json::to_string(&report).expect("report serializes"))?;
        Ok(())
    })
}

/// Runs one pipeline config (JSON text, paths relative to the working
/// directory) and writes its run record as JSON.
///
/// # Safety
/// `config_json` must be a NUL-terminated string; `record_json` writable.
#[no_mangle]
pub unsafe extern "C" fn fairgen_run_pipeline(config_json: *const c_char, record_json: *mut *mut c_char) -> FairgenStatus {
    guard(|| {
        let config = text(config_json, "config_json")?;
        out_ptr(record_json)?;
        let config = RunConfig::from_json(config).map_err(|e| Failure(FairgenStatus::InvalidArgument, e.to_string()))?;
        let record = run_pipeline(&config).map_err(|e| Failure(FairgenStatus::Pipeline, e.to_string()))?;
        *record_json = into_c_string(serde_json::to_string(&record).expect("record serializes"))?;
        Ok(())
    })
}

/// Runs an experiment grid and writes the grid record as JSON. Failed cells
/// are part of the record, not an error.
///
/// # Safety
/// `config_json` must be a NUL-terminated string; `record_json` writable.
#[no_mangle]
pub unsafe extern "C" fn fairgen_run_grid(config_json: *const c_char, record_json: *mut *mut c_char) -> FairgenStatus {
    guard(|| {
        let config = text(config_json, "config_json")?;
        out_ptr(record_json)?;
        let config = GridConfig::from_json(config).map_err(|e| Failure(FairgenStatus::InvalidArgument, e.to_string()))?;
        let record = config.run().map_err(|e| Failure(FairgenStatus::Pipeline, e.to_string()))?;
        *record_json = into_c_string(serde_json::to_string(&record).expect("record serializes"))?;
        Ok(())
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or a string from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fairgen_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
