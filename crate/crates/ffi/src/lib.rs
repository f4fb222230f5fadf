//! C ABI over the telechain scoring and statistics core.
//!
//! Every fallible function returns a [`TcStatus`]; on failure a description
//! is available from [`tc_last_error_message`] on the same thread. Handles
//! are opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use telechain::artifact::{normalize_label, ArtifactSet, EmbeddingTable};
use telechain::metrics::{creativity_ranking, score_steps};
use telechain::stats::{paired_t_test, student_t_two_sided_p, PairedSamples, StatsError};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    Parse = 5,
    ZeroVariance = 6,
    Panic = 7,
}

/// Token embedding table.
pub struct TcEmbeddingTable(EmbeddingTable);

/// Set of normalized artifact labels.
pub struct TcArtifactSet(ArtifactSet);

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TcChainScores {
    /// Length of the satisfied prefix.
    pub k: u32,
    pub requirement_satisfaction: f64,
    pub cohesion: f64,
    pub diversity: f64,
    pub creativity: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TcTTestResult {
    pub t_stat: f64,
    pub df: u32,
    pub p_two_sided: f64,
    pub mean_a: f64,
    pub mean_b: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: impl Into<String>) {
    let msg = CString::new(message.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

type Failure = (TcStatus, String);

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            TcStatus::Ok
        }
        Ok(Err((status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            TcStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    (TcStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| (TcStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn tc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a table file (`<count> <dim>` header, then one token per line).
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn tc_embedding_table_load(path: *const c_char, out: *mut *mut TcEmbeddingTable) -> TcStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = out_arg(out, "out")?;
        let table = EmbeddingTable::load(Path::new(path)).map_err(|e| {
            let status = match e {
                telechain::artifact::ArtifactError::Io(_) => TcStatus::Io,
                _ => TcStatus::Parse,
            };
            (status, e.to_string())
        })?;
        *out = Box::into_raw(Box::new(TcEmbeddingTable(table)));
        Ok(())
    })
}

/// Parses a table from text in the file format.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn tc_embedding_table_parse(text: *const c_char, out: *mut *mut TcEmbeddingTable) -> TcStatus {
    guard(|| {
        let text = str_arg(text, "text")?;
        let out = out_arg(out, "out")?;
        let table = EmbeddingTable::read(text.as_bytes()).map_err(|e| (TcStatus::Parse, e.to_string()))?;
        *out = Box::into_raw(Box::new(TcEmbeddingTable(table)));
        Ok(())
    })
}

/// # Safety
/// `table` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn tc_embedding_table_free(table: *mut TcEmbeddingTable) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}

/// Vector dimension, or 0 for a null table.
///
/// # Safety
/// `table` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tc_embedding_table_dimension(table: *const TcEmbeddingTable) -> usize {
    table.as_ref().map_or(0, |t| t.0.dimension())
}

/// θ between two labels: clamped cosine of their embeddings.
///
/// # Safety
/// `table` must be a live handle, `a` and `b` NUL-terminated strings and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tc_label_similarity(
    table: *const TcEmbeddingTable,
    a: *const c_char,
    b: *const c_char,
    out: *mut f64,
) -> TcStatus {
    guard(|| {
        let table = ref_arg(table, "table")?;
        let label = |p, what| -> Result<_, Failure> {
            normalize_label(str_arg(p, what)?).map_err(|e| (TcStatus::InvalidArgument, format!("{what}: {e}")))
        };
        let (a, b) = (label(a, "a")?, label(b, "b")?);
        *out_arg(out, "out")? = table.0.similarity(&a, &b);
        Ok(())
    })
}

/// New empty artifact set; never null.
#[no_mangle]
pub extern "C" fn tc_artifact_set_new() -> *mut TcArtifactSet {
    Box::into_raw(Box::new(TcArtifactSet(ArtifactSet::default())))
}

/// Normalizes and inserts a label.
///
/// # Safety
/// `set` must be a live handle and `label` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn tc_artifact_set_insert(set: *mut TcArtifactSet, label: *const c_char) -> TcStatus {
    guard(|| {
        let set = out_arg(set, "set")?;
        let label = normalize_label(str_arg(label, "label")?).map_err(|e| (TcStatus::InvalidArgument, e.to_string()))?;
        set.0.insert(label);
        Ok(())
    })
}

/// Number of distinct labels, or 0 for a null set.
///
/// # Safety
/// `set` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tc_artifact_set_len(set: *const TcArtifactSet) -> usize {
    set.as_ref().map_or(0, |s| s.0.len())
}

/// # Safety
/// `set` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn tc_artifact_set_free(set: *mut TcArtifactSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Scores a chain of `step_count` artifact sets against `seed`, with `l`
/// the configured chain length and `threshold` the match threshold.
///
/// # Safety
/// `steps` must point to `step_count` live set handles (it may be null when
/// `step_count` is 0); the other pointers must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tc_score_chain(
    table: *const TcEmbeddingTable,
    seed: *const TcArtifactSet,
    steps: *const *const TcArtifactSet,
    step_count: usize,
    l: u32,
    threshold: f64,
    out: *mut TcChainScores,
) -> TcStatus {
    guard(|| {
        let table = ref_arg(table, "table")?;
        let seed = ref_arg(seed, "seed")?;
        let out = out_arg(out, "out")?;
        let handles: &[*const TcArtifactSet] = if step_count == 0 {
            &[]
        } else if steps.is_null() {
            return Err(null("steps"));
        } else {
            std::slice::from_raw_parts(steps, step_count)
        };
        let sets = handles
            .iter()
            .enumerate()
            .map(|(i, p)| ref_arg(*p, &format!("steps[{i}]")).map(|s| s.0.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let s = score_steps(&sets, &seed.0, l as usize, threshold, &table.0)
            .map_err(|e| (TcStatus::InvalidArgument, e.to_string()))?;
        *out = TcChainScores {
            k: s.k as u32,
            requirement_satisfaction: s.rs,
            cohesion: s.cohesion,
            diversity: s.diversity,
            creativity: s.creativity,
        };
        Ok(())
    })
}

/// `rs · (cohesion + diversity) / 2`.
#[no_mangle]
pub extern "C" fn tc_creativity_ranking(rs: f64, cohesion: f64, diversity: f64) -> f64 {
    creativity_ranking(rs, cohesion, diversity)
}

/// Paired t-test of `a` against `b`, both of length `n`.
///
/// # Safety
/// `a` and `b` must point to `n` doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tc_paired_t_test(a: *const f64, b: *const f64, n: usize, out: *mut TcTTestResult) -> TcStatus {
    guard(|| {
        if a.is_null() || b.is_null() {
            return Err(null("a or b"));
        }
        let out = out_arg(out, "out")?;
        let a = std::slice::from_raw_parts(a, n).to_vec();
        let b = std::slice::from_raw_parts(b, n).to_vec();
        let keys = (0..n).map(|i| i.to_string()).collect();
        let status = |e: StatsError| match e {
            StatsError::ZeroVariance => (TcStatus::ZeroVariance, e.to_string()),
            other => (TcStatus::InvalidArgument, other.to_string()),
        };
        let r = paired_t_test(&PairedSamples::new(keys, a, b).map_err(status)?).map_err(status)?;
        *out = TcTTestResult {
            t_stat: r.t_stat,
            df: r.df,
            p_two_sided: r.p_two_sided,
            mean_a: r.mean_a,
            mean_b: r.mean_b,
        };
        Ok(())
    })
}

/// P(|T| ≥ |t|) for Student's t with `df` degrees of freedom.
#[no_mangle]
pub extern "C" fn tc_student_t_two_sided_p(t: f64, df: u32) -> f64 {
    student_t_two_sided_p(t, df)
}
