//! C ABI over the toolkit's pure-computation pieces: question-type
//! classification, parse-based statement conversion, the consensus VQA
//! score, relation fusion, and top-k selection.
//!
//! Conventions, mirrored in `include/vlshot.h`:
//! - Handles are opaque; create/free in matched pairs. Freeing NULL is a
//!   no-op.
//! - Every fallible function returns a `vlshot_status`; outputs come back
//!   through out-pointers that are written only on `VLSHOT_OK`.
//! - On failure the message is retrievable with
//!   `vlshot_last_error_message()`; the pointer stays valid until the next
//!   failing call on the same thread.
//! - Strings returned through out-pointers are owned by the caller and
//!   released with `vlshot_string_free`.

#![deny(unsafe_op_in_unsafe_fn)]

use std::cell::RefCell;
use std::ffi::{CStr, CString};

use libc::c_char;

use vlshot::data::Taxonomy;
use vlshot::filter::{filter_top_k, CandidateScore};
use vlshot::parse::{FileParseProvider, ParseProvider};
use vlshot::template::question_to_statement;
use vlshot::Error;

/// Status codes; 0 is success, everything else is an error whose message
/// `vlshot_last_error_message` describes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VlshotStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Malformed = 4,
    /// The question matches no conversion rule.
    Unsupported = 5,
    /// The question parses but no answer slot can be placed (yes/no shapes).
    NoMaskSlot = 6,
    InvalidArgument = 7,
    Internal = 8,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn fail(status: VlshotStatus, message: impl Into<Vec<u8>>) -> VlshotStatus {
    let stored = CString::new(message).unwrap_or_else(|_| {
        CString::new("error message contained an interior NUL").unwrap()
    });
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(stored));
    status
}

fn fail_with(e: Error) -> VlshotStatus {
    let status = match &e {
        Error::Io { .. } => VlshotStatus::Io,
        Error::MalformedFile { .. } => VlshotStatus::Malformed,
        Error::UnsupportedQuestion(_) | Error::Parse(_) => VlshotStatus::Unsupported,
        Error::NoMaskSlot(_) => VlshotStatus::NoMaskSlot,
        Error::InvalidInput(_) | Error::Config(_) => VlshotStatus::InvalidArgument,
        _ => VlshotStatus::Internal,
    };
    fail(status, e.to_string())
}

/// Read a required C string argument.
///
/// # Safety
/// `ptr` must be NULL or a NUL-terminated string.
unsafe fn required_str<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, VlshotStatus> {
    if ptr.is_null() {
        return Err(fail(VlshotStatus::NullArgument, format!("{name} is NULL")));
    }
    // SAFETY: non-null and NUL-terminated per the caller contract.
    let bytes = unsafe { CStr::from_ptr(ptr) };
    bytes
        .to_str()
        .map_err(|_| fail(VlshotStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

fn give_string(s: String, out: *mut *mut c_char) -> VlshotStatus {
    match CString::new(s) {
        Ok(c) => {
            // SAFETY: `out` was checked non-null by the caller.
            unsafe { *out = c.into_raw() };
            VlshotStatus::Ok
        }
        Err(_) => fail(
            VlshotStatus::Internal,
            "produced a string with an interior NUL",
        ),
    }
}

/// Library version as a static string; never freed.
#[no_mangle]
pub extern "C" fn vlshot_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message of the most recent failure on this thread, or NULL if nothing
/// has failed yet. Valid until the next failing call on the same thread;
/// do not free.
#[no_mangle]
pub extern "C" fn vlshot_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map_or(std::ptr::null(), |s| s.as_ptr())
    })
}

/// Release a string returned through an out-pointer.
///
/// # Safety
/// `s` must be NULL or a pointer obtained from this library's out-strings,
/// not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vlshot_string_free(s: *mut c_char) {
    if s.is_null() {
        return;
    }
    // SAFETY: ownership transfers back per the caller contract.
    drop(unsafe { CString::from_raw(s) });
}

// ---------------------------------------------------------------------------
// Question-type taxonomy

pub struct VlshotTaxonomy(Taxonomy);

/// The canonical 65-type taxonomy shipped with the library.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vlshot_taxonomy_builtin(out: *mut *mut VlshotTaxonomy) -> VlshotStatus {
    if out.is_null() {
        return fail(VlshotStatus::NullArgument, "out is NULL");
    }
    let handle = Box::new(VlshotTaxonomy(Taxonomy::builtin()));
    // SAFETY: `out` is valid per the caller contract.
    unsafe { *out = Box::into_raw(handle) };
    VlshotStatus::Ok
}

/// Load a taxonomy from a file of one question-type prefix per line.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vlshot_taxonomy_load(
    path: *const c_char,
    out: *mut *mut VlshotTaxonomy,
) -> VlshotStatus {
    if out.is_null() {
        return fail(VlshotStatus::NullArgument, "out is NULL");
    }
    // SAFETY: forwarded caller contract.
    let path = match unsafe { required_str(path, "path") } {
        Ok(s) => s,
        Err(status) => return status,
    };
    match Taxonomy::load(std::path::Path::new(path)) {
        Ok(t) => {
            // SAFETY: `out` is valid per the caller contract.
            unsafe { *out = Box::into_raw(Box::new(VlshotTaxonomy(t))) };
            VlshotStatus::Ok
        }
        Err(e) => fail_with(e),
    }
}

/// Number of question types in the taxonomy; 0 for NULL.
///
/// # Safety
/// `taxonomy` must be NULL or a live taxonomy handle.
#[no_mangle]
pub unsafe extern "C" fn vlshot_taxonomy_len(taxonomy: *const VlshotTaxonomy) -> usize {
    if taxonomy.is_null() {
        return 0;
    }
    // SAFETY: live handle per the caller contract.
    unsafe { &*taxonomy }.0.len()
}

/// Classify a question into its longest-prefix question type (the fallback
/// type when nothing matches). The result string is caller-owned.
///
/// # Safety
/// `taxonomy` must be a live handle; `question` a NUL-terminated string;
/// `out_type` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vlshot_taxonomy_classify(
    taxonomy: *const VlshotTaxonomy,
    question: *const c_char,
    out_type: *mut *mut c_char,
) -> VlshotStatus {
    if taxonomy.is_null() {
        return fail(VlshotStatus::NullArgument, "taxonomy is NULL");
    }
    if out_type.is_null() {
        return fail(VlshotStatus::NullArgument, "out_type is NULL");
    }
    // SAFETY: forwarded caller contract.
    let question = match unsafe { required_str(question, "question") } {
        Ok(s) => s,
        Err(status) => return status,
    };
    // SAFETY: live handle per the caller contract.
    let tax = unsafe { &*taxonomy };
    give_string(tax.0.classify(question).to_string(), out_type)
}

/// # Safety
/// `taxonomy` must be NULL or a live handle, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vlshot_taxonomy_free(taxonomy: *mut VlshotTaxonomy) {
    if taxonomy.is_null() {
        return;
    }
    // SAFETY: ownership transfers back per the caller contract.
    drop(unsafe { Box::from_raw(taxonomy) });
}

// ---------------------------------------------------------------------------
// Parse-based statement conversion

pub struct VlshotParseProvider(FileParseProvider);

/// Load pre-parsed questions (CoNLL-U) for statement conversion.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vlshot_parse_provider_load(
    path: *const c_char,
    out: *mut *mut VlshotParseProvider,
) -> VlshotStatus {
    if out.is_null() {
        return fail(VlshotStatus::NullArgument, "out is NULL");
    }
    // SAFETY: forwarded caller contract.
    let path = match unsafe { required_str(path, "path") } {
        Ok(s) => s,
        Err(status) => return status,
    };
    match FileParseProvider::load(std::path::Path::new(path)) {
        Ok(p) => {
            // SAFETY: `out` is valid per the caller contract.
            unsafe { *out = Box::into_raw(Box::new(VlshotParseProvider(p))) };
            VlshotStatus::Ok
        }
        Err(e) => fail_with(e),
    }
}

/// Convert a question to its masked declarative statement (the answer slot
/// written as "[mask]") using the provider's parse. Yes/no questions have
/// no slot and fail with `VLSHOT_NO_MASK_SLOT`; shapes no rule covers fail
/// with `VLSHOT_UNSUPPORTED`.
///
/// # Safety
/// `provider` must be a live handle; `question` a NUL-terminated string;
/// `out_statement` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vlshot_question_to_statement(
    provider: *const VlshotParseProvider,
    question: *const c_char,
    out_statement: *mut *mut c_char,
) -> VlshotStatus {
    if provider.is_null() {
        return fail(VlshotStatus::NullArgument, "provider is NULL");
    }
    if out_statement.is_null() {
        return fail(VlshotStatus::NullArgument, "out_statement is NULL");
    }
    // SAFETY: forwarded caller contract.
    let question = match unsafe { required_str(question, "question") } {
        Ok(s) => s,
        Err(status) => return status,
    };
    // SAFETY: live handle per the caller contract.
    let provider = unsafe { &*provider };
    let statement = provider
        .0
        .parse(question)
        .and_then(|parse| question_to_statement(&parse));
    match statement {
        Ok(s) => give_string(s, out_statement),
        Err(e) => fail_with(e),
    }
}

/// # Safety
/// `provider` must be NULL or a live handle, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vlshot_parse_provider_free(provider: *mut VlshotParseProvider) {
    if provider.is_null() {
        return;
    }
    // SAFETY: ownership transfers back per the caller contract.
    drop(unsafe { Box::from_raw(provider) });
}

// ---------------------------------------------------------------------------
// Scoring, fusion, selection

/// Consensus VQA accuracy of a prediction against the annotator answers:
/// min(matches/3, 1) after normalization.
///
/// # Safety
/// `prediction` must be a NUL-terminated string; `gold` an array of
/// `n_gold` NUL-terminated strings; `out_score` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vlshot_vqa_score(
    prediction: *const c_char,
    gold: *const *const c_char,
    n_gold: usize,
    out_score: *mut f64,
) -> VlshotStatus {
    if out_score.is_null() {
        return fail(VlshotStatus::NullArgument, "out_score is NULL");
    }
    if gold.is_null() && n_gold > 0 {
        return fail(VlshotStatus::NullArgument, "gold is NULL");
    }
    // SAFETY: forwarded caller contract.
    let prediction = match unsafe { required_str(prediction, "prediction") } {
        Ok(s) => s,
        Err(status) => return status,
    };
    let mut answers = Vec::with_capacity(n_gold);
    for i in 0..n_gold {
        // SAFETY: `gold` holds `n_gold` entries per the caller contract.
        let entry = unsafe { *gold.add(i) };
        // SAFETY: each entry is a NUL-terminated string.
        match unsafe { required_str(entry, "gold answer") } {
            Ok(s) => answers.push(s.to_string()),
            Err(status) => return status,
        }
    }
    // SAFETY: `out_score` is valid per the caller contract.
    unsafe { *out_score = vlshot::eval::vqa_score(prediction, &answers) };
    VlshotStatus::Ok
}

/// Fuse two `dim`-wide embeddings into the 5·dim relation vector
/// [v1, v2, v1+v2, v1−v2, v1⊙v2]. `out` must hold 5·dim doubles.
///
/// # Safety
/// `v1` and `v2` must point to `dim` doubles each; `out` to `5 * dim`
/// writable doubles.
#[no_mangle]
pub unsafe extern "C" fn vlshot_fuse(
    v1: *const f64,
    v2: *const f64,
    dim: usize,
    out: *mut f64,
) -> VlshotStatus {
    if v1.is_null() || v2.is_null() || out.is_null() {
        return fail(VlshotStatus::NullArgument, "v1, v2, and out must be non-NULL");
    }
    // SAFETY: `dim` doubles each per the caller contract.
    let a = unsafe { std::slice::from_raw_parts(v1, dim) };
    let b = unsafe { std::slice::from_raw_parts(v2, dim) };
    match vlshot::entail::fuse(a, b) {
        Ok(fused) => {
            // SAFETY: `out` holds 5*dim doubles per the caller contract.
            let dst = unsafe { std::slice::from_raw_parts_mut(out, fused.len()) };
            dst.copy_from_slice(&fused);
            VlshotStatus::Ok
        }
        Err(e) => fail_with(e),
    }
}

/// Indices of the k best scores, descending, ties to the lower index.
/// Writes min(k, n) indices and their count. NaN scores are rejected.
///
/// # Safety
/// `scores` must point to `n` doubles; `out_indices` to `k` writable
/// size_t; `out_len` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vlshot_top_k(
    scores: *const f64,
    n: usize,
    k: usize,
    out_indices: *mut usize,
    out_len: *mut usize,
) -> VlshotStatus {
    if scores.is_null() || out_indices.is_null() || out_len.is_null() {
        return fail(
            VlshotStatus::NullArgument,
            "scores, out_indices, and out_len must be non-NULL",
        );
    }
    // SAFETY: `n` doubles per the caller contract.
    let scores = unsafe { std::slice::from_raw_parts(scores, n) };
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return fail(VlshotStatus::InvalidArgument, format!("score {i} is NaN"));
    }
    let candidates: Vec<CandidateScore> = scores
        .iter()
        .enumerate()
        .map(|(i, s)| CandidateScore {
            answer: String::new(),
            vocab_index: i,
            log_prob: *s,
        })
        .collect();
    match filter_top_k(&candidates, k) {
        Ok(kept) => {
            // SAFETY: `out_indices` holds `k` entries and kept.len() <= k.
            let dst = unsafe { std::slice::from_raw_parts_mut(out_indices, kept.len()) };
            for (slot, c) in dst.iter_mut().zip(&kept) {
                *slot = c.vocab_index;
            }
            // SAFETY: `out_len` is valid per the caller contract.
            unsafe { *out_len = kept.len() };
            VlshotStatus::Ok
        }
        Err(e) => fail_with(e),
    }
}
