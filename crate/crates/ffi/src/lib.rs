//! C ABI over `ncr`.
//!
//! Every object crosses the boundary as an opaque pointer created by a
//! `*_read`, `*_fit`, `*_build` or `*_apply` call and released with the
//! matching `*_free`. Fallible functions return an [`NcrStatus`]; on failure
//! `ncr_last_error()` holds a message for the calling thread.
#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use ncr::{
    eval, io, math, DescriptorSet, Error, GroundTruth, GroupTruth, Index, PcaModel,
    ProjectionModel, RankedTruth, TrainConfig, TruthFormat,
};

/// Status codes. The non-zero values match the `ncr` command's exit codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NcrStatus {
    Ok = 0,
    /// Bad argument or null pointer.
    Usage = 1,
    /// Malformed input, I/O failure or inconsistent data.
    Data = 2,
    /// Rank deficiency or divergence.
    Numeric = 3,
    /// A panic was caught at the boundary.
    Internal = 4,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NcrApVariant {
    Rectangular = 0,
    Trapezoidal = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NcrOkPolicy {
    Positive = 0,
    Junk = 1,
}

/// Training hyper-parameters. Start from `ncr_train_config_default()`.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct NcrTrainConfig {
    pub dim: usize,
    pub tau_pos: f64,
    pub tau_neg: f64,
    pub eta0: f64,
    pub decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

pub struct NcrDescriptors {
    set: DescriptorSet,
    ids: Vec<CString>,
}

pub struct NcrPca(PcaModel);

pub struct NcrProjection(ProjectionModel);

pub struct NcrIndex {
    index: Index,
    ids: Vec<CString>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let msg = CString::new(msg.replace('\0', "\\0")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

/// Message for the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ncr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

enum Fail {
    Lib(Error),
    Usage(String),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn status_of(e: &Error) -> NcrStatus {
    match e.exit_code() {
        1 => NcrStatus::Usage,
        3 => NcrStatus::Numeric,
        _ => NcrStatus::Data,
    }
}

fn guard<F: FnOnce() -> Result<(), Fail>>(f: F) -> NcrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NcrStatus::Ok,
        Ok(Err(Fail::Lib(e))) => {
            set_last_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Fail::Usage(msg))) => {
            set_last_error(msg);
            NcrStatus::Usage
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal error: {msg}"));
            NcrStatus::Internal
        }
    }
}

unsafe fn obj<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| Fail::Usage(format!("{what} is null")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| Fail::Usage(format!("{what} is null")))
}

unsafe fn text(p: *const c_char, what: &str) -> Result<String, Fail> {
    if p.is_null() {
        return Err(Fail::Usage(format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| Fail::Usage(format!("{what} is not valid UTF-8")))
}

unsafe fn path(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    text(p, what).map(PathBuf::from)
}

fn c_ids<'a>(ids: impl Iterator<Item = &'a str>) -> Result<Vec<CString>, Fail> {
    ids.map(|id| {
        CString::new(id).map_err(|_| Fail::Lib(Error::Validation(format!("id {id:?} contains NUL"))))
    })
    .collect()
}

fn wrap_set(set: DescriptorSet) -> Result<*mut NcrDescriptors, Fail> {
    let ids = c_ids(set.ids().iter().map(String::as_str))?;
    Ok(Box::into_raw(Box::new(NcrDescriptors { set, ids })))
}

fn give<T>(out: &mut *mut T, value: *mut T) {
    *out = value;
}

fn release<T>(p: *mut T) {
    if !p.is_null() {
        drop(unsafe { Box::from_raw(p) });
    }
}

// descriptors

/// Reads a descriptor file and its id list.
#[no_mangle]
pub unsafe extern "C" fn ncr_descriptors_read(
    path_ncd: *const c_char,
    path_ids: *const c_char,
    out: *mut *mut NcrDescriptors,
) -> NcrStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let set = io::read_ncd(&path(path_ncd, "path_ncd")?, &path(path_ids, "path_ids")?)?;
        give(out, wrap_set(set)?);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ncr_descriptors_write(
    set: *const NcrDescriptors,
    path_ncd: *const c_char,
    path_ids: *const c_char,
) -> NcrStatus {
    guard(|| {
        let set = obj(set, "set")?;
        io::write_ncd(&set.set, &path(path_ncd, "path_ncd")?, &path(path_ids, "path_ids")?)?;
        Ok(())
    })
}

/// Builds a set from `n` row-major rows of length `dim` and `n` ids.
#[no_mangle]
pub unsafe extern "C" fn ncr_descriptors_from_rows(
    data: *const f64,
    n: usize,
    dim: usize,
    ids: *const *const c_char,
    out: *mut *mut NcrDescriptors,
) -> NcrStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if data.is_null() || ids.is_null() {
            return Err(Fail::Usage("data and ids must not be null".into()));
        }
        let len = n
            .checked_mul(dim)
            .ok_or_else(|| Fail::Usage("n * dim overflows".into()))?;
        let values = std::slice::from_raw_parts(data, len).to_vec();
        let names = std::slice::from_raw_parts(ids, n)
            .iter()
            .map(|&p| text(p, "id"))
            .collect::<Result<Vec<_>, _>>()?;
        give(out, wrap_set(DescriptorSet::new(names, values, dim)?)?);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ncr_descriptors_len(set: *const NcrDescriptors) -> usize {
    set.as_ref().map_or(0, |s| s.set.len())
}

#[no_mangle]
pub unsafe extern "C" fn ncr_descriptors_dim(set: *const NcrDescriptors) -> usize {
    set.as_ref().map_or(0, |s| s.set.dim())
}

/// Id of row `i`, owned by the set. Null when out of range.
#[no_mangle]
pub unsafe extern "C" fn ncr_descriptors_id(set: *const NcrDescriptors, i: usize) -> *const c_char {
    set.as_ref()
        .and_then(|s| s.ids.get(i))
        .map_or(ptr::null(), |id| id.as_ptr())
}

/// Copies row `i` into `out`, which must hold `dim` values.
#[no_mangle]
pub unsafe extern "C" fn ncr_descriptors_row(
    set: *const NcrDescriptors,
    i: usize,
    out: *mut f64,
) -> NcrStatus {
    guard(|| {
        let set = &obj(set, "set")?.set;
        if i >= set.len() {
            return Err(Fail::Usage(format!("row {i} out of range for {} rows", set.len())));
        }
        if out.is_null() {
            return Err(Fail::Usage("out is null".into()));
        }
        std::slice::from_raw_parts_mut(out, set.dim()).copy_from_slice(set.row(i));
        Ok(())
    })
}

/// New set with every row scaled to unit length.
#[no_mangle]
pub unsafe extern "C" fn ncr_descriptors_normalize(
    set: *const NcrDescriptors,
    out: *mut *mut NcrDescriptors,
) -> NcrStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let set = obj(set, "set")?;
        give(out, wrap_set(math::normalize_set(&set.set)?)?);
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn ncr_descriptors_free(set: *mut NcrDescriptors) {
    release(set)
}

// pca

#[no_mangle]
pub unsafe extern "C" fn ncr_pca_fit(
    set: *const NcrDescriptors,
    dim: usize,
    seed: u64,
    sample_cap: usize,
    strict_rank: bool,
    out: *mut *mut NcrPca,
) -> NcrStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let set = obj(set, "set")?;
        let opts = ncr::PcaOptions {
            seed,
            sample_cap,
            strict_rank,
        };
        let model = ncr::fit_pca_with(&set.set, dim, &opts)?;
        give(out, Box::into_raw(Box::new(NcrPca(model))));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ncr_pca_apply(
    model: *const NcrPca,
    set: *const NcrDescriptors,
    renormalize: bool,
    whiten: bool,
    out: *mut *mut NcrDescriptors,
) -> NcrStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let model = obj(model, "model")?;
        let set = obj(set, "set")?;
        let opts = ncr::ApplyOptions { renormalize, whiten };
        give(out, wrap_set(ncr::apply_pca(&model.0, &set.set, opts)?)?);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ncr_pca_read(path_ncp: *const c_char, out: *mut *mut NcrPca) -> NcrStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let model = io::read_pca(&path(path_ncp, "path_ncp")?)?;
        give(out, Box::into_raw(Box::new(NcrPca(model))));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ncr_pca_write(model: *const NcrPca, path_ncp: *const c_char) -> NcrStatus {
    guard(|| {
        io::write_pca(&obj(model, "model")?.0, &path(path_ncp, "path_ncp")?)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ncr_pca_input_dim(model: *const NcrPca) -> usize {
    model.as_ref().map_or(0, |m| m.0.input_dim())
}

#[no_mangle]
pub unsafe extern "C" fn ncr_pca_output_dim(model: *const NcrPca) -> usize {
    model.as_ref().map_or(0, |m| m.0.output_dim())
}

/// Copies the `output_dim` eigenvalues, largest first, into `out`.
#[no_mangle]
pub unsafe extern "C" fn ncr_pca_eigenvalues(model: *const NcrPca, out: *mut f64) -> NcrStatus {
    guard(|| {
        let vals = obj(model, "model")?.0.eigvals();
        if out.is_null() {
            return Err(Fail::Usage("out is null".into()));
        }
        std::slice::from_raw_parts_mut(out, vals.len()).copy_from_slice(vals);
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn ncr_pca_free(model: *mut NcrPca) {
    release(model)
}

// learned projection

#[no_mangle]
pub extern "C" fn ncr_train_config_default() -> NcrTrainConfig {
    let c = TrainConfig::default();
    NcrTrainConfig {
        dim: c.dim,
        tau_pos: c.tau_pos,
        tau_neg: c.tau_neg,
        eta0: c.eta0,
        decay: c.decay,
        epochs: c.epochs,
        batch_size: c.batch_size,
        seed: c.seed,
    }
}

/// Trains a projection on `set` from a labelled pair file.
#[no_mangle]
pub unsafe extern "C" fn ncr_projection_fit(
    set: *const NcrDescriptors,
    path_pairs: *const c_char,
    config: *const NcrTrainConfig,
    out: *mut *mut NcrProjection,
) -> NcrStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let set = obj(set, "set")?;
        let c = obj(config, "config")?;
        let pairs = io::read_pairs(&path(path_pairs, "path_pairs")?)?;
        let cfg = TrainConfig {
            dim: c.dim,
            tau_pos: c.tau_pos,
            tau_neg: c.tau_neg,
            eta0: c.eta0,
            decay: c.decay,
            epochs: c.epochs,
            batch_size: c.batch_size,
            seed: c.seed,
        };
        let model = ncr::fit_projection(&set.set, &pairs, &cfg)?;
        give(out, Box::into_raw(Box::new(NcrProjection(model))));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ncr_projection_read(
    path_ncw: *const c_char,
    out: *mut *mut NcrProjection,
) -> NcrStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let model = io::read_projection(&path(path_ncw, "path_ncw")?)?;
        give(out, Box::into_raw(Box::new(NcrProjection(model))));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ncr_projection_write(
    model: *const NcrProjection,
    path_ncw: *const c_char,
) -> NcrStatus {
    guard(|| {
        io::write_projection(&obj(model, "model")?.0, &path(path_ncw, "path_ncw")?)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ncr_projection_apply(
    model: *const NcrProjection,
    set: *const NcrDescriptors,
    renormalize: bool,
    out: *mut *mut NcrDescriptors,
) -> NcrStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let model = obj(model, "model")?;
        let set = obj(set, "set")?;
        give(out, wrap_set(ncr::apply_projection(&model.0, &set.set, renormalize)?)?);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ncr_projection_input_dim(model: *const NcrProjection) -> usize {
    model.as_ref().map_or(0, |m| m.0.source_dim())
}

#[no_mangle]
pub unsafe extern "C" fn ncr_projection_output_dim(model: *const NcrProjection) -> usize {
    model.as_ref().map_or(0, |m| m.0.output_dim())
}

#[no_mangle]
pub extern "C" fn ncr_projection_free(model: *mut NcrProjection) {
    release(model)
}

// index

/// Builds a search index over a copy of `set`. With `normalize` the rows
/// (and later the queries) are L2-normalized first.
#[no_mangle]
pub unsafe extern "C" fn ncr_index_build(
    set: *const NcrDescriptors,
    normalize: bool,
    out: *mut *mut NcrIndex,
) -> NcrStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let set = obj(set, "set")?;
        let index = ncr::build_index(&set.set, normalize)?;
        let ids = c_ids((0..index.len()).map(|r| index.id(r)))?;
        give(out, Box::into_raw(Box::new(NcrIndex { index, ids })));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ncr_index_len(index: *const NcrIndex) -> usize {
    index.as_ref().map_or(0, |i| i.index.len())
}

/// Id of database row `row`, owned by the index. Null when out of range.
#[no_mangle]
pub unsafe extern "C" fn ncr_index_id(index: *const NcrIndex, row: usize) -> *const c_char {
    index
        .as_ref()
        .and_then(|i| i.ids.get(row))
        .map_or(ptr::null(), |id| id.as_ptr())
}

/// k nearest rows to `query` (length `dim`). `exclude_id` may be null.
/// Writes up to `k` row numbers and distances and the count actually found.
#[no_mangle]
pub unsafe extern "C" fn ncr_index_query(
    index: *const NcrIndex,
    query: *const f64,
    dim: usize,
    k: usize,
    exclude_id: *const c_char,
    out_rows: *mut usize,
    out_distances: *mut f64,
    out_count: *mut usize,
) -> NcrStatus {
    guard(|| {
        let index = &obj(index, "index")?.index;
        let count = out_ptr(out_count, "out_count")?;
        if query.is_null() || out_rows.is_null() || out_distances.is_null() {
            return Err(Fail::Usage("query and output buffers must not be null".into()));
        }
        let q = std::slice::from_raw_parts(query, dim);
        let exclude = if exclude_id.is_null() {
            Vec::new()
        } else {
            vec![text(exclude_id, "exclude_id")?]
        };
        let ranked = index.query(q, k, &exclude)?;
        let rows = std::slice::from_raw_parts_mut(out_rows, k);
        let dists = std::slice::from_raw_parts_mut(out_distances, k);
        for (slot, hit) in ranked.hits.iter().enumerate() {
            rows[slot] = hit.row;
            dists[slot] = hit.distance;
        }
        *count = ranked.len();
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn ncr_index_free(index: *mut NcrIndex) {
    release(index)
}

// evaluation

fn ap_variant(v: NcrApVariant) -> eval::ApVariant {
    match v {
        NcrApVariant::Rectangular => eval::ApVariant::Rectangular,
        NcrApVariant::Trapezoidal => eval::ApVariant::Trapezoidal,
    }
}

unsafe fn group_truth(p: *const c_char) -> Result<GroupTruth, Fail> {
    match io::read_ground_truth(&path(p, "path_gt")?, TruthFormat::Groups)? {
        GroundTruth::Groups(g) => Ok(g),
        GroundTruth::Ranked(_) => Err(Fail::Usage("expected group ground truth".into())),
    }
}

unsafe fn ranked_truth(p: *const c_char) -> Result<RankedTruth, Fail> {
    match io::read_ground_truth(&path(p, "path_gt")?, TruthFormat::Ranked)? {
        GroundTruth::Ranked(g) => Ok(g),
        GroundTruth::Groups(_) => Err(Fail::Usage("expected ranked ground truth".into())),
    }
}

/// Holidays-style mAP: one query per group, left out of its own ranking.
#[no_mangle]
pub unsafe extern "C" fn ncr_eval_holidays(
    index: *const NcrIndex,
    path_gt: *const c_char,
    variant: NcrApVariant,
    out_map: *mut f64,
) -> NcrStatus {
    guard(|| {
        let out = out_ptr(out_map, "out_map")?;
        let index = &obj(index, "index")?.index;
        let opts = eval::HolidaysOptions {
            ap_variant: ap_variant(variant),
        };
        *out = eval::evaluate_holidays(index, &group_truth(path_gt)?, opts)?.aggregate;
        Ok(())
    })
}

/// UKB score: mean count of group members among the top four.
#[no_mangle]
pub unsafe extern "C" fn ncr_eval_ukb(
    index: *const NcrIndex,
    path_gt: *const c_char,
    out_score: *mut f64,
) -> NcrStatus {
    guard(|| {
        let out = out_ptr(out_score, "out_score")?;
        let index = &obj(index, "index")?.index;
        *out = eval::evaluate_ukb(index, &group_truth(path_gt)?)?.aggregate;
        Ok(())
    })
}

/// Oxford-style mAP of external `queries` against the index.
#[no_mangle]
pub unsafe extern "C" fn ncr_eval_oxford(
    index: *const NcrIndex,
    queries: *const NcrDescriptors,
    path_gt: *const c_char,
    ok_policy: NcrOkPolicy,
    variant: NcrApVariant,
    out_map: *mut f64,
) -> NcrStatus {
    guard(|| {
        let out = out_ptr(out_map, "out_map")?;
        let index = &obj(index, "index")?.index;
        let queries = &obj(queries, "queries")?.set;
        let opts = eval::OxfordOptions {
            ok_policy: match ok_policy {
                NcrOkPolicy::Positive => eval::OkPolicy::Positive,
                NcrOkPolicy::Junk => eval::OkPolicy::Junk,
            },
            ap_variant: ap_variant(variant),
        };
        *out = eval::evaluate_oxford(index, queries, &ranked_truth(path_gt)?, opts)?.aggregate;
        Ok(())
    })
}
