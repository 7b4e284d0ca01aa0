//! C ABI for the synthseg library.
//!
//! Every function returns a [`SynthsegStatus`] (or a plain value where it
//! cannot fail) and reports details through [`synthseg_last_error`].
//! Objects are opaque handles released with their `_free` function;
//! strings and byte buffers handed out by the library are released with
//! [`synthseg_string_free`] and [`synthseg_bytes_free`].
//!
//! Panics never cross the boundary: they surface as `SYNTHSEG_STATUS_PANIC`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use synthseg::metrics::{self as m, FeatureStats, MetricsError};
use synthseg::pipeline::{run, PipelineConfig};
use synthseg::prompts::{compose_prompt, PromptError};
use synthseg::sample::{plan_batches, split_folds, BatchPlan, Slot};
use synthseg::select::{cosine_similarity, EmbeddingVector};
use synthseg::taxonomy::{ClassTaxonomy, TaxonomyError};
use synthseg::{maskio, SemanticMask};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthsegStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    UnknownClass = 3,
    Decode = 4,
    Encode = 5,
    Numerical = 6,
    Io = 7,
    Backend = 8,
    Pipeline = 9,
    Panic = 10,
}

/// Class taxonomy handle.
pub struct SynthsegTaxonomy(ClassTaxonomy);

/// Gaussian feature statistics handle.
pub struct SynthsegFeatureStats(FeatureStats);

/// Batch plan handle; slots refer to records by their input index.
pub struct SynthsegBatchPlan {
    plan: BatchPlan,
    index_of: BTreeMap<String, usize>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

type FfiResult = Result<(), (SynthsegStatus, String)>;

fn fail<T>(status: SynthsegStatus, message: impl std::fmt::Display) -> Result<T, (SynthsegStatus, String)> {
    Err((status, message.to_string()))
}

/// Runs `body`, recording any error or panic for `synthseg_last_error`.
fn guard(body: impl FnOnce() -> FfiResult) -> SynthsegStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => SynthsegStatus::Ok,
        Ok(Err((status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {message}"));
            SynthsegStatus::Panic
        }
    }
}

fn metrics_status(e: MetricsError) -> (SynthsegStatus, String) {
    let status = match e {
        MetricsError::NumericalFailure(_) => SynthsegStatus::Numerical,
        _ => SynthsegStatus::InvalidArgument,
    };
    (status, e.to_string())
}

unsafe fn non_null<'a, T>(p: *const T, what: &str) -> Result<&'a T, (SynthsegStatus, String)> {
    p.as_ref().ok_or((SynthsegStatus::NullPointer, format!("{what} is null")))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (SynthsegStatus, String)> {
    if p.is_null() {
        return fail(SynthsegStatus::NullPointer, format!("{what} is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (SynthsegStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], (SynthsegStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return fail(SynthsegStatus::NullPointer, format!("{what} is null"));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> FfiResult {
    if out.is_null() {
        return fail(SynthsegStatus::NullPointer, format!("{what} is null"));
    }
    out.write(value);
    Ok(())
}

fn into_c_string(text: String) -> *mut c_char {
    CString::new(text.replace('\0', " ")).expect("nul bytes removed").into_raw()
}

fn into_bytes(bytes: Vec<u8>) -> (*mut u8, usize) {
    let boxed = bytes.into_boxed_slice();
    let len = boxed.len();
    (Box::into_raw(boxed) as *mut u8, len)
}

/// Message for the last failed call on this thread, or NULL. Valid until
/// the next library call on the same thread.
#[no_mangle]
pub extern "C" fn synthseg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn synthseg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

#[no_mangle]
pub unsafe extern "C" fn synthseg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

#[no_mangle]
pub unsafe extern "C" fn synthseg_bytes_free(data: *mut u8, len: usize) {
    if !data.is_null() {
        drop(Box::from_raw(ptr::slice_from_raw_parts_mut(data, len)));
    }
}

/// The built-in PASCAL VOC taxonomy (20 classes).
#[no_mangle]
pub extern "C" fn synthseg_taxonomy_voc() -> *mut SynthsegTaxonomy {
    Box::into_raw(Box::new(SynthsegTaxonomy(ClassTaxonomy::pascal_voc())))
}

#[no_mangle]
pub unsafe extern "C" fn synthseg_taxonomy_from_json(
    json: *const c_char,
    out: *mut *mut SynthsegTaxonomy,
) -> SynthsegStatus {
    guard(|| {
        let text = c_str(json, "json")?;
        let tax = ClassTaxonomy::from_json(text).map_err(|e| (SynthsegStatus::InvalidArgument, e.to_string()))?;
        write_out(out, Box::into_raw(Box::new(SynthsegTaxonomy(tax))), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn synthseg_taxonomy_free(taxonomy: *mut SynthsegTaxonomy) {
    if !taxonomy.is_null() {
        drop(Box::from_raw(taxonomy));
    }
}

/// Number of classes, background excluded; 0 for NULL.
#[no_mangle]
pub unsafe extern "C" fn synthseg_taxonomy_len(taxonomy: *const SynthsegTaxonomy) -> usize {
    taxonomy.as_ref().map_or(0, |t| t.0.len())
}

/// Resolves a class name or alias to its id.
#[no_mangle]
pub unsafe extern "C" fn synthseg_canonicalize(
    taxonomy: *const SynthsegTaxonomy,
    name: *const c_char,
    out_id: *mut u8,
) -> SynthsegStatus {
    guard(|| {
        let tax = non_null(taxonomy, "taxonomy")?;
        let name = c_str(name, "name")?;
        let id = tax.0.canonicalize(name).map_err(|e| match e {
            TaxonomyError::UnknownClass(_) => (SynthsegStatus::UnknownClass, e.to_string()),
            other => (SynthsegStatus::InvalidArgument, other.to_string()),
        })?;
        write_out(out_id, id, "out_id")
    })
}

/// Caption plus class names. The result is freed with `synthseg_string_free`.
#[no_mangle]
pub unsafe extern "C" fn synthseg_compose_prompt(
    taxonomy: *const SynthsegTaxonomy,
    caption: *const c_char,
    class_ids: *const u8,
    num_classes: usize,
    out: *mut *mut c_char,
) -> SynthsegStatus {
    guard(|| {
        let tax = non_null(taxonomy, "taxonomy")?;
        let caption = c_str(caption, "caption")?;
        let ids = slice(class_ids, num_classes, "class_ids")?;
        let bundle = compose_prompt(caption, ids, &tax.0).map_err(|e| match e {
            PromptError::UnknownClass(_) => (SynthsegStatus::UnknownClass, e.to_string()),
            other => (SynthsegStatus::InvalidArgument, other.to_string()),
        })?;
        write_out(out, into_c_string(bundle.composed), "out")
    })
}

/// Encodes a `width * height` label map as a palette PNG.
#[no_mangle]
pub unsafe extern "C" fn synthseg_mask_encode(
    taxonomy: *const SynthsegTaxonomy,
    width: u32,
    height: u32,
    labels: *const u8,
    out_data: *mut *mut u8,
    out_len: *mut usize,
) -> SynthsegStatus {
    guard(|| {
        let tax = non_null(taxonomy, "taxonomy")?;
        let n = width as usize * height as usize;
        let labels = slice(labels, n, "labels")?;
        let mask = SemanticMask::new(width, height, labels.to_vec())
            .map_err(|e| (SynthsegStatus::InvalidArgument, e.to_string()))?;
        let png = maskio::encode_mask(&mask, &tax.0).map_err(|e| (SynthsegStatus::Encode, e.to_string()))?;
        if out_data.is_null() || out_len.is_null() {
            return fail(SynthsegStatus::NullPointer, "output pointer is null");
        }
        let (data, len) = into_bytes(png);
        out_data.write(data);
        out_len.write(len);
        Ok(())
    })
}

/// Decodes a palette PNG; the label buffer holds `width * height` bytes and
/// is freed with `synthseg_bytes_free`.
#[no_mangle]
pub unsafe extern "C" fn synthseg_mask_decode(
    png: *const u8,
    png_len: usize,
    out_width: *mut u32,
    out_height: *mut u32,
    out_labels: *mut *mut u8,
) -> SynthsegStatus {
    guard(|| {
        let bytes = slice(png, png_len, "png")?;
        let mask = maskio::decode_mask(bytes).map_err(|e| (SynthsegStatus::Decode, e.to_string()))?;
        if out_width.is_null() || out_height.is_null() || out_labels.is_null() {
            return fail(SynthsegStatus::NullPointer, "output pointer is null");
        }
        out_width.write(mask.width());
        out_height.write(mask.height());
        let (data, _) = into_bytes(mask.data().to_vec());
        out_labels.write(data);
        Ok(())
    })
}

unsafe fn mask_pair(
    pred: *const u8,
    gt: *const u8,
    width: u32,
    height: u32,
) -> Result<(SemanticMask, SemanticMask), (SynthsegStatus, String)> {
    let n = width as usize * height as usize;
    let p = slice(pred, n, "pred")?;
    let g = slice(gt, n, "gt")?;
    let make = |d: &[u8]| {
        SemanticMask::new(width, height, d.to_vec()).map_err(|e| (SynthsegStatus::InvalidArgument, e.to_string()))
    };
    Ok((make(p)?, make(g)?))
}

/// Mean IoU over classes present in either map; pixels where either map
/// equals `ignore_index` are skipped.
#[no_mangle]
pub unsafe extern "C" fn synthseg_miou(
    pred: *const u8,
    gt: *const u8,
    width: u32,
    height: u32,
    num_classes: usize,
    ignore_index: u8,
    out: *mut f64,
) -> SynthsegStatus {
    guard(|| {
        let (p, g) = mask_pair(pred, gt, width, height)?;
        let r = m::miou(&p, &g, num_classes, ignore_index).map_err(metrics_status)?;
        write_out(out, r.mean, "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn synthseg_pixel_accuracy(
    pred: *const u8,
    gt: *const u8,
    width: u32,
    height: u32,
    ignore_index: u8,
    out: *mut f64,
) -> SynthsegStatus {
    guard(|| {
        let (p, g) = mask_pair(pred, gt, width, height)?;
        let v = m::pixel_accuracy(&p, &g, ignore_index).map_err(metrics_status)?;
        write_out(out, v, "out")
    })
}

/// Mean and covariance of `count` row-major vectors of length `dim`.
#[no_mangle]
pub unsafe extern "C" fn synthseg_feature_stats_new(
    vectors: *const f64,
    count: usize,
    dim: usize,
    out: *mut *mut SynthsegFeatureStats,
) -> SynthsegStatus {
    guard(|| {
        let flat = slice(vectors, count.saturating_mul(dim), "vectors")?;
        let rows: Vec<Vec<f64>> = if dim == 0 { Vec::new() } else { flat.chunks(dim).map(<[f64]>::to_vec).collect() };
        let stats = m::feature_stats(&rows).map_err(metrics_status)?;
        write_out(out, Box::into_raw(Box::new(SynthsegFeatureStats(stats))), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn synthseg_feature_stats_free(stats: *mut SynthsegFeatureStats) {
    if !stats.is_null() {
        drop(Box::from_raw(stats));
    }
}

#[no_mangle]
pub unsafe extern "C" fn synthseg_fid(
    a: *const SynthsegFeatureStats,
    b: *const SynthsegFeatureStats,
    out: *mut f64,
) -> SynthsegStatus {
    guard(|| {
        let (a, b) = (non_null(a, "a")?, non_null(b, "b")?);
        let v = m::fid(&a.0, &b.0).map_err(metrics_status)?;
        write_out(out, v, "out")
    })
}

/// Inception score over `count` rows of `classes` probabilities.
#[no_mangle]
pub unsafe extern "C" fn synthseg_inception_score(
    probs: *const f64,
    count: usize,
    classes: usize,
    splits: usize,
    out_mean: *mut f64,
    out_std: *mut f64,
) -> SynthsegStatus {
    guard(|| {
        if classes == 0 {
            return fail(SynthsegStatus::InvalidArgument, "classes must be positive");
        }
        let flat = slice(probs, count.saturating_mul(classes), "probs")?;
        let rows: Vec<Vec<f64>> = flat.chunks(classes).map(<[f64]>::to_vec).collect();
        let s = m::inception_score(&rows, splits).map_err(metrics_status)?;
        write_out(out_mean, s.mean, "out_mean")?;
        write_out(out_std, s.std, "out_std")
    })
}

#[no_mangle]
pub unsafe extern "C" fn synthseg_cosine(u: *const f64, v: *const f64, dim: usize, out: *mut f64) -> SynthsegStatus {
    guard(|| {
        let to_vec = |p, what| {
            EmbeddingVector::new(slice(p, dim, what)?.to_vec())
                .map_err(|e| (SynthsegStatus::InvalidArgument, e.to_string()))
        };
        let s = cosine_similarity(&to_vec(u, "u")?, &to_vec(v, "v")?)
            .map_err(|e| (SynthsegStatus::InvalidArgument, e.to_string()))?;
        write_out(out, s, "out")
    })
}

/// Contiguous equal folds; `out_fold_of[i]` receives the fold of `class_ids[i]`.
#[no_mangle]
pub unsafe extern "C" fn synthseg_split_folds(
    class_ids: *const u8,
    count: usize,
    num_folds: usize,
    out_fold_of: *mut usize,
) -> SynthsegStatus {
    guard(|| {
        let ids = slice(class_ids, count, "class_ids")?;
        let split = split_folds(ids, num_folds).map_err(|e| (SynthsegStatus::InvalidArgument, e.to_string()))?;
        if out_fold_of.is_null() {
            return fail(SynthsegStatus::NullPointer, "out_fold_of is null");
        }
        let out = std::slice::from_raw_parts_mut(out_fold_of, count);
        let mut i = 0;
        for (f, fold) in split.folds.iter().enumerate() {
            for _ in fold {
                out[i] = f;
                i += 1;
            }
        }
        Ok(())
    })
}

/// Plans batches over `num_records` records. Record `r` has
/// `kept_counts[r]` kept variant indices, stored consecutively in `kept`.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn synthseg_plan_new(
    record_ids: *const *const c_char,
    num_records: usize,
    kept: *const u32,
    kept_counts: *const usize,
    alpha: f64,
    batch_size: usize,
    num_batches: usize,
    seed: u64,
    out: *mut *mut SynthsegBatchPlan,
) -> SynthsegStatus {
    guard(|| {
        let id_ptrs = slice(record_ids, num_records, "record_ids")?;
        let counts = slice(kept_counts, num_records, "kept_counts")?;
        let total: usize = counts.iter().sum();
        let kept = slice(kept, total, "kept")?;
        let mut ids = Vec::with_capacity(num_records);
        let mut index = BTreeMap::new();
        let mut index_of = BTreeMap::new();
        let mut offset = 0;
        for (r, (&p, &n)) in id_ptrs.iter().zip(counts).enumerate() {
            let id = c_str(p, "record id")?.to_string();
            if index_of.insert(id.clone(), r).is_some() {
                return fail(SynthsegStatus::InvalidArgument, format!("duplicate record id {id}"));
            }
            index.insert(id.clone(), kept[offset..offset + n].to_vec());
            offset += n;
            ids.push(id);
        }
        let plan = plan_batches(&ids, &index, alpha, batch_size, num_batches, seed)
            .map_err(|e| (SynthsegStatus::InvalidArgument, e.to_string()))?;
        write_out(out, Box::into_raw(Box::new(SynthsegBatchPlan { plan, index_of })), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn synthseg_plan_free(plan: *mut SynthsegBatchPlan) {
    if !plan.is_null() {
        drop(Box::from_raw(plan));
    }
}

/// Total slots; 0 for NULL.
#[no_mangle]
pub unsafe extern "C" fn synthseg_plan_len(plan: *const SynthsegBatchPlan) -> usize {
    plan.as_ref().map_or(0, |p| p.plan.slots().count())
}

#[no_mangle]
pub unsafe extern "C" fn synthseg_plan_synthetic_fraction(plan: *const SynthsegBatchPlan) -> f64 {
    plan.as_ref().map_or(0.0, |p| p.plan.synthetic_fraction())
}

/// Slot `slot` in batch-major order. `out_j` is -1 for a real slot.
#[no_mangle]
pub unsafe extern "C" fn synthseg_plan_slot(
    plan: *const SynthsegBatchPlan,
    slot: usize,
    out_record: *mut usize,
    out_j: *mut i64,
) -> SynthsegStatus {
    guard(|| {
        let p = non_null(plan, "plan")?;
        let Some(s) = p.plan.slots().nth(slot) else {
            return fail(SynthsegStatus::InvalidArgument, format!("slot {slot} out of range"));
        };
        let record = p.index_of[s.record_id()];
        let j = match s {
            Slot::Real { .. } => -1,
            Slot::Synthetic { j, .. } => *j as i64,
        };
        write_out(out_record, record, "out_record")?;
        write_out(out_j, j, "out_j")
    })
}

/// JSONL form of the plan, freed with `synthseg_string_free`.
#[no_mangle]
pub unsafe extern "C" fn synthseg_plan_to_jsonl(plan: *const SynthsegBatchPlan, out: *mut *mut c_char) -> SynthsegStatus {
    guard(|| {
        let p = non_null(plan, "plan")?;
        write_out(out, into_c_string(p.plan.to_jsonl()), "out")
    })
}

/// Runs the full pipeline described by a config file. On success `out_report`
/// (if not NULL) receives the run report as JSON.
#[no_mangle]
pub unsafe extern "C" fn synthseg_run_pipeline(config_path: *const c_char, out_report: *mut *mut c_char) -> SynthsegStatus {
    guard(|| {
        let path = c_str(config_path, "config_path")?;
        let config = PipelineConfig::load(Path::new(path)).map_err(|e| (SynthsegStatus::InvalidArgument, e.to_string()))?;
        config
            .validate()
            .map_err(|e| (SynthsegStatus::InvalidArgument, e.to_string()))?;
        let taxonomy = config
            .load_taxonomy()
            .map_err(|e| (SynthsegStatus::InvalidArgument, e.to_string()))?;
        let backends = config
            .backends
            .build(&taxonomy)
            .map_err(|e| (SynthsegStatus::Backend, e.to_string()))?;
        let report = run(&config, &backends).map_err(|e| (SynthsegStatus::Pipeline, e.to_string()))?;
        if !out_report.is_null() {
            out_report.write(into_c_string(serde_json::to_string(&report).expect("report serializes")));
        }
        Ok(())
    })
}
