//! C ABI over the `lpmgh` library.
//!
//! Objects cross the boundary as opaque handles that the caller releases
//! with the matching `*_free` function. Every fallible call returns an
//! [`LpmghStatus`]; on failure a message for the calling thread is available
//! from [`lpmgh_last_error_message`]. Matrices are passed row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use lpmgh::anchor_graph::Bandwidth;
use lpmgh::codes::{read_codes, write_codes};
use lpmgh::dataset::synth_multiview;
use lpmgh::retrieval::{map_score, pack, rank};
use lpmgh::{CodeMatrix, Error, FeatureMatrix, HashModel, MultiviewDataset, TrainConfig};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpmghStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Value = 5,
    Config = 6,
    Shape = 7,
    Numeric = 8,
    Degenerate = 9,
    MissingView = 10,
    BufferTooSmall = 11,
    Panic = 12,
}

/// Views and optional labels collected before training or encoding.
pub struct LpmghDataset {
    views: Vec<FeatureMatrix>,
    labels: Option<Vec<i64>>,
}

pub struct LpmghModel {
    inner: HashModel,
}

pub struct LpmghCodes {
    inner: CodeMatrix,
}

/// Training settings. Obtain defaults from [`lpmgh_train_config_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct LpmghTrainConfig {
    pub bits: usize,
    pub max_outer_iters: usize,
    pub rel_tol: f64,
    pub mu_init: f64,
    pub seed: u64,
    /// 0 selects `min(300, n/2)`.
    pub anchors: usize,
    pub anchor_neighbors: usize,
    /// Values <= 0 select the automatic bandwidth.
    pub bandwidth: f64,
    pub kmeans_iters: usize,
    pub stiefel_max_iters: usize,
}

struct Failure {
    status: LpmghStatus,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Io { .. } => LpmghStatus::Io,
            Error::Format(_) => LpmghStatus::Format,
            Error::Value(_) => LpmghStatus::Value,
            Error::Config(_) => LpmghStatus::Config,
            Error::Shape(_) => LpmghStatus::Shape,
            Error::Numeric(_) => LpmghStatus::Numeric,
            Error::Degenerate(_) => LpmghStatus::Degenerate,
            Error::MissingView(_) => LpmghStatus::MissingView,
        };
        Failure {
            status,
            message: e.to_string(),
        }
    }
}

fn fail(status: LpmghStatus, message: impl Into<String>) -> Failure {
    Failure {
        status,
        message: message.into(),
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: &str) {
    let text = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(text));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> LpmghStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
            LpmghStatus::Ok
        }
        Ok(Err(failure)) => {
            set_last_error(&failure.message);
            failure.status
        }
        Err(_) => {
            set_last_error("internal panic");
            LpmghStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| fail(LpmghStatus::NullPointer, format!("{what} is null")))
}

unsafe fn deref_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| fail(LpmghStatus::NullPointer, format!("{what} is null")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(LpmghStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(fail(LpmghStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn read_path(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(fail(LpmghStatus::NullPointer, "path is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| fail(LpmghStatus::InvalidArgument, "path is not valid UTF-8"))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(fail(LpmghStatus::NullPointer, "output pointer is null"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn dataset_of(ds: &LpmghDataset) -> Result<MultiviewDataset, Failure> {
    Ok(MultiviewDataset::new(ds.views.clone(), ds.labels.clone())?)
}

/// Message describing the last failed call on this thread, or NULL.
/// The pointer stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn lpmgh_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// # Safety
/// `out` must be a valid pointer to writable storage for a handle.
#[no_mangle]
pub unsafe extern "C" fn lpmgh_dataset_new(out: *mut *mut LpmghDataset) -> LpmghStatus {
    guard(|| {
        put(
            out,
            LpmghDataset {
                views: Vec::new(),
                labels: None,
            },
        )
    })
}

/// Appends a view of `n` rows and `d` columns read row-major from `values`.
///
/// # Safety
/// `ds` must be a live dataset handle and `values` must point to `n * d` doubles.
#[no_mangle]
pub unsafe extern "C" fn lpmgh_dataset_add_view(
    ds: *mut LpmghDataset,
    values: *const f64,
    n: usize,
    d: usize,
) -> LpmghStatus {
    guard(|| {
        let ds = deref_mut(ds, "dataset")?;
        let len = n
            .checked_mul(d)
            .ok_or_else(|| fail(LpmghStatus::InvalidArgument, "view size overflows"))?;
        let values = slice(values, len, "values")?;
        if let Some(first) = ds.views.first() {
            if first.nrows() != n {
                return Err(fail(
                    LpmghStatus::Shape,
                    format!("view has {n} rows, dataset has {}", first.nrows()),
                ));
            }
        }
        ds.views.push(FeatureMatrix::from_row_major(n, d, values)?);
        Ok(())
    })
}

/// # Safety
/// `ds` must be a live dataset handle and `labels` must point to `n` integers.
#[no_mangle]
pub unsafe extern "C" fn lpmgh_dataset_set_labels(ds: *mut LpmghDataset, labels: *const i64, n: usize) -> LpmghStatus {
    guard(|| {
        let ds = deref_mut(ds, "dataset")?;
        ds.labels = Some(slice(labels, n, "labels")?.to_vec());
        Ok(())
    })
}

/// Synthetic clustered dataset with one view per entry of `dims`.
///
/// # Safety
/// `dims` must point to `num_views` sizes and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lpmgh_dataset_synth(
    n: usize,
    clusters: usize,
    dims: *const usize,
    num_views: usize,
    noise: f64,
    seed: u64,
    out: *mut *mut LpmghDataset,
) -> LpmghStatus {
    guard(|| {
        let dims = slice(dims, num_views, "dims")?;
        let ds = synth_multiview(n, clusters, dims, noise, seed)?;
        put(
            out,
            LpmghDataset {
                views: ds.views().to_vec(),
                labels: ds.labels().map(<[i64]>::to_vec),
            },
        )
    })
}

/// Number of rows, or 0 for a null or empty dataset.
///
/// # Safety
/// `ds` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn lpmgh_dataset_len(ds: *const LpmghDataset) -> usize {
    ds.as_ref().and_then(|d| d.views.first()).map_or(0, FeatureMatrix::nrows)
}

/// # Safety
/// `ds` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn lpmgh_dataset_num_views(ds: *const LpmghDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.views.len())
}

/// Copies up to `len` labels into `out`. Fails with `BufferTooSmall` if `len` is short.
///
/// # Safety
/// `ds` must be a live dataset handle and `out` must point to `len` writable integers.
#[no_mangle]
pub unsafe extern "C" fn lpmgh_dataset_labels(ds: *const LpmghDataset, out: *mut i64, len: usize) -> LpmghStatus {
    guard(|| {
        let ds = deref(ds, "dataset")?;
        let labels = ds
            .labels
            .as_deref()
            .ok_or_else(|| fail(LpmghStatus::Value, "dataset has no labels"))?;
        if len < labels.len() {
            return Err(fail(LpmghStatus::BufferTooSmall, format!("need {} labels", labels.len())));
        }
        slice_mut(out, labels.len(), "out")?.copy_from_slice(labels);
        Ok(())
    })
}

/// # Safety
/// `ds` must be null or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn lpmgh_dataset_free(ds: *mut LpmghDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// # Safety
/// `out` must point to writable storage for one config.
#[no_mangle]
pub unsafe extern "C" fn lpmgh_train_config_default(out: *mut LpmghTrainConfig) -> LpmghStatus {
    guard(|| {
        let out = deref_mut(out, "config")?;
        let cfg = TrainConfig::default();
        *out = LpmghTrainConfig {
            bits: cfg.bits,
            max_outer_iters: cfg.max_outer_iters,
            rel_tol: cfg.rel_tol,
            mu_init: cfg.mu_init,
            seed: cfg.seed,
            anchors: cfg.anchors.count.unwrap_or(0),
            anchor_neighbors: cfg.anchors.neighbors,
            bandwidth: match cfg.anchors.bandwidth {
                Bandwidth::Auto => 0.0,
                Bandwidth::Fixed(v) => v,
            },
            kmeans_iters: cfg.anchors.kmeans_iters,
            stiefel_max_iters: cfg.stiefel.max_iters,
        };
        Ok(())
    })
}

fn train_config(c: &LpmghTrainConfig) -> TrainConfig {
    let mut cfg = TrainConfig {
        bits: c.bits,
        max_outer_iters: c.max_outer_iters,
        rel_tol: c.rel_tol,
        mu_init: c.mu_init,
        seed: c.seed,
        ..TrainConfig::default()
    };
    cfg.anchors.count = (c.anchors > 0).then_some(c.anchors);
    cfg.anchors.neighbors = c.anchor_neighbors;
    cfg.anchors.bandwidth = if c.bandwidth > 0.0 {
        Bandwidth::Fixed(c.bandwidth)
    } else {
        Bandwidth::Auto
    };
    cfg.anchors.kmeans_iters = c.kmeans_iters;
    cfg.stiefel.max_iters = c.stiefel_max_iters;
    cfg
}

/// Trains a model. `codes_out` may be NULL when the training codes are not needed.
///
/// # Safety
/// `ds` and `config` must be valid; `model_out` must be writable; `codes_out` null or writable.
#[no_mangle]
pub unsafe extern "C" fn lpmgh_train(
    ds: *const LpmghDataset,
    config: *const LpmghTrainConfig,
    model_out: *mut *mut LpmghModel,
    codes_out: *mut *mut LpmghCodes,
) -> LpmghStatus {
    guard(|| {
        let data = dataset_of(deref(ds, "dataset")?)?;
        let cfg = train_config(deref(config, "config")?);
        if model_out.is_null() {
            return Err(fail(LpmghStatus::NullPointer, "model output pointer is null"));
        }
        let (model, codes, _) = lpmgh::train(&data, &cfg)?;
        put(model_out, LpmghModel { inner: model })?;
        if !codes_out.is_null() {
            put(codes_out, LpmghCodes { inner: codes })?;
        }
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lpmgh_model_load(path: *const c_char, out: *mut *mut LpmghModel) -> LpmghStatus {
    guard(|| {
        let model = HashModel::load(&read_path(path)?)?;
        put(out, LpmghModel { inner: model })
    })
}

/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn lpmgh_model_save(model: *const LpmghModel, path: *const c_char) -> LpmghStatus {
    guard(|| Ok(deref(model, "model")?.inner.save(&read_path(path)?)?))
}

/// Code length in bits, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lpmgh_model_bits(model: *const LpmghModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.bits)
}

/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lpmgh_model_num_views(model: *const LpmghModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.num_views())
}

/// Copies the learned view weights into `out`, which must hold one value per view.
///
/// # Safety
/// `model` must be a live handle and `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn lpmgh_model_view_weights(model: *const LpmghModel, out: *mut f64, len: usize) -> LpmghStatus {
    guard(|| {
        let mu = &deref(model, "model")?.inner.mu;
        if len < mu.len() {
            return Err(fail(LpmghStatus::BufferTooSmall, format!("need {} weights", mu.len())));
        }
        slice_mut(out, mu.len(), "out")?.copy_from_slice(mu);
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn lpmgh_model_free(model: *mut LpmghModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Encodes every row of `ds` with `model`.
///
/// # Safety
/// `model` and `ds` must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lpmgh_encode(
    model: *const LpmghModel,
    ds: *const LpmghDataset,
    out: *mut *mut LpmghCodes,
) -> LpmghStatus {
    guard(|| {
        let model = &deref(model, "model")?.inner;
        let codes = model.encode(&deref(ds, "dataset")?.views)?;
        put(out, LpmghCodes { inner: codes })
    })
}

/// # Safety
/// `codes` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lpmgh_codes_rows(codes: *const LpmghCodes) -> usize {
    codes.as_ref().map_or(0, |c| c.inner.nrows())
}

/// # Safety
/// `codes` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lpmgh_codes_bits(codes: *const LpmghCodes) -> usize {
    codes.as_ref().map_or(0, |c| c.inner.bits())
}

/// Copies the `rows * bits` entries (each -1 or +1) row-major into `out`.
///
/// # Safety
/// `codes` must be a live handle and `out` must point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn lpmgh_codes_copy(codes: *const LpmghCodes, out: *mut i8, len: usize) -> LpmghStatus {
    guard(|| {
        let entries = deref(codes, "codes")?.inner.entries();
        if len < entries.len() {
            return Err(fail(LpmghStatus::BufferTooSmall, format!("need {} entries", entries.len())));
        }
        slice_mut(out, entries.len(), "out")?.copy_from_slice(entries);
        Ok(())
    })
}

/// # Safety
/// `codes` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn lpmgh_codes_save(codes: *const LpmghCodes, path: *const c_char) -> LpmghStatus {
    guard(|| Ok(write_codes(&read_path(path)?, &deref(codes, "codes")?.inner)?))
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lpmgh_codes_load(path: *const c_char, out: *mut *mut LpmghCodes) -> LpmghStatus {
    guard(|| {
        let codes = read_codes(&read_path(path)?)?;
        put(out, LpmghCodes { inner: codes })
    })
}

/// # Safety
/// `codes` must be null or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn lpmgh_codes_free(codes: *mut LpmghCodes) {
    if !codes.is_null() {
        drop(Box::from_raw(codes));
    }
}

/// Ranks every row of `db` against row `query_row` of `queries` by Hamming
/// distance, ties by ascending row index. Writes `rows(db)` indices and distances.
///
/// # Safety
/// Handles must be live; `ids_out` and `dist_out` must each hold `len` elements.
#[no_mangle]
pub unsafe extern "C" fn lpmgh_rank(
    queries: *const LpmghCodes,
    query_row: usize,
    db: *const LpmghCodes,
    ids_out: *mut usize,
    dist_out: *mut u32,
    len: usize,
) -> LpmghStatus {
    guard(|| {
        let queries = &deref(queries, "queries")?.inner;
        let db = pack(&deref(db, "database")?.inner);
        if query_row >= queries.nrows() {
            return Err(fail(
                LpmghStatus::InvalidArgument,
                format!("query row {query_row} out of range for {} rows", queries.nrows()),
            ));
        }
        if len < db.nrows() {
            return Err(fail(LpmghStatus::BufferTooSmall, format!("need {} slots", db.nrows())));
        }
        let q = pack(&queries.select_rows(&[query_row]));
        let list = rank(q.row(0), query_row as u64, &db)?;
        let ids = slice_mut(ids_out, db.nrows(), "ids_out")?;
        let dist = slice_mut(dist_out, db.nrows(), "dist_out")?;
        for (k, (&pos, &d)) in list.positions.iter().zip(&list.distances).enumerate() {
            ids[k] = pos;
            dist[k] = d;
        }
        Ok(())
    })
}

/// Mean average precision of `queries` against `db` with relevance by label equality.
///
/// # Safety
/// Handles must be live; label arrays must hold one entry per code row; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lpmgh_map_score(
    queries: *const LpmghCodes,
    labels_q: *const i64,
    db: *const LpmghCodes,
    labels_db: *const i64,
    out: *mut f64,
) -> LpmghStatus {
    guard(|| {
        let queries = &deref(queries, "queries")?.inner;
        let db = &deref(db, "database")?.inner;
        let lq = slice(labels_q, queries.nrows(), "labels_q")?;
        let ldb = slice(labels_db, db.nrows(), "labels_db")?;
        let out = deref_mut(out, "out")?;
        *out = map_score(&pack(queries), &pack(db), lq, ldb)?;
        Ok(())
    })
}
