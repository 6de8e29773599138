//! C interface to `ease-core`.
//!
//! Every function returns an [`EaseStatus`]. On failure a message is kept
//! per thread; `ease_last_error` hands out a copy. Strings the library
//! returns are owned by the caller and released with `ease_string_free`.
//! Handles are opaque and released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ease_core::aggregate::{self, AggregationResult, Judgement};
use ease_core::domain::{normalize_over_verbalizers, Candidate, LabelDistribution, LabelId, ScoredCandidate, TaskSpec};
use ease_core::harness::ConfigFile;
use ease_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EaseStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Backend = 4,
    Dataset = 5,
    Internal = 6,
    Panic = 7,
}

/// Values accepted by `ease_aggregate`'s `strategy` argument.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EaseStrategy {
    MajorityVote = 0,
    SoftAggregate = 1,
    WeightedSoft = 2,
    WeightedHardVote = 3,
    HardArgmaxVote = 4,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EaseJudgement {
    Lose = -1,
    Tie = 0,
    Win = 1,
}

/// Label set plus the candidates pushed so far.
pub struct EaseCandidateSet {
    task: TaskSpec,
    candidates: Vec<Candidate>,
    weights: Vec<f64>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(EaseStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Config(_) | Error::Template(_) | Error::Prompt(_) | Error::Core(_) => EaseStatus::Config,
            Error::Backend(_) => EaseStatus::Backend,
            Error::Dataset(_) => EaseStatus::Dataset,
            _ => EaseStatus::Internal,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(EaseStatus::InvalidArgument, msg.into())
}

fn null(what: &str) -> Failure {
    Failure(EaseStatus::NullPointer, format!("`{what}` is null"))
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> EaseStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            EaseStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("panic inside ease-ffi");
            EaseStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("`{what}` is not UTF-8")))
}

fn core_err(e: ease_core::domain::CoreError) -> Failure {
    Failure::from(Error::from(e))
}

/// Copy of the calling thread's last error message, or NULL if the last
/// call succeeded. Free it with `ease_string_free`.
#[no_mangle]
pub extern "C" fn ease_last_error() -> *mut c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null_mut(), |c| c.clone().into_raw()))
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn ease_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Creates an empty candidate set over `n_labels` label names, which double
/// as verbalizers.
///
/// # Safety
/// `labels` must point to `n_labels` NUL-terminated strings; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn ease_candidate_set_new(
    labels: *const *const c_char,
    n_labels: usize,
    out: *mut *mut EaseCandidateSet,
) -> EaseStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if labels.is_null() {
            return Err(null("labels"));
        }
        let names = (0..n_labels)
            .map(|i| str_arg(*labels.add(i), "labels[i]").map(str::to_string))
            .collect::<Result<Vec<_>, _>>()?;
        let pairs: Vec<(&str, &str)> = names.iter().map(|n| (n.as_str(), n.as_str())).collect();
        let task = TaskSpec::new("ffi", &pairs, names.join(", "), "ffi").map_err(core_err)?;
        *out = Box::into_raw(Box::new(EaseCandidateSet { task, candidates: Vec::new(), weights: Vec::new() }));
        Ok(())
    })
}

/// # Safety
/// `set` must be NULL or a handle from `ease_candidate_set_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ease_candidate_set_free(set: *mut EaseCandidateSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Adds one candidate.
///
/// `prediction` is a label index, or -1 for an unparseable sample (which
/// abstains from hard votes). `probs` is NULL or `n_labels` probabilities
/// summing to one; an unparseable candidate without `probs` gets a uniform
/// distribution. `weight` must lie in [0, 1].
///
/// # Safety
/// `set` must be a live handle; `probs` NULL or readable for `n_labels` doubles.
#[no_mangle]
pub unsafe extern "C" fn ease_candidate_set_push(
    set: *mut EaseCandidateSet,
    prediction: i64,
    probs: *const f64,
    weight: f64,
) -> EaseStatus {
    guard(|| {
        let set = set.as_mut().ok_or_else(|| null("set"))?;
        let n = set.task.num_labels();
        let prediction = match prediction {
            -1 => None,
            i if (0..n as i64).contains(&i) => Some(set.task.labels[i as usize].clone()),
            i => return Err(invalid(format!("prediction {i} outside 0..{n}"))),
        };
        let distribution = if probs.is_null() {
            prediction.is_none().then(|| LabelDistribution::uniform(&set.task))
        } else {
            let values = std::slice::from_raw_parts(probs, n);
            let pairs: Vec<(LabelId, f64)> = set.task.labels.iter().cloned().zip(values.iter().copied()).collect();
            Some(LabelDistribution::new(&set.task, &pairs).map_err(core_err)?)
        };
        if !(0.0..=1.0).contains(&weight) {
            return Err(invalid(format!("weight {weight} outside [0, 1]")));
        }
        set.candidates.push(Candidate {
            explanation: String::new(),
            parse_ok: prediction.is_some(),
            prediction,
            distribution,
            raw_text: String::new(),
        });
        set.weights.push(weight);
        Ok(())
    })
}

/// # Safety
/// `set` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ease_candidate_set_len(set: *const EaseCandidateSet, out: *mut usize) -> EaseStatus {
    guard(|| {
        let set = set.as_ref().ok_or_else(|| null("set"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = set.candidates.len();
        Ok(())
    })
}

fn aggregate_set(set: &EaseCandidateSet, strategy: u32) -> Result<AggregationResult, Failure> {
    let scored = || -> Result<Vec<ScoredCandidate>, Failure> {
        set.candidates
            .iter()
            .zip(&set.weights)
            .map(|(c, &w)| ScoredCandidate::new(c.clone(), w).map_err(core_err))
            .collect()
    };
    let task = &set.task;
    let r = match strategy {
        s if s == EaseStrategy::MajorityVote as u32 => aggregate::majority_vote(task, &set.candidates),
        s if s == EaseStrategy::SoftAggregate as u32 => aggregate::soft_aggregate(task, &set.candidates),
        s if s == EaseStrategy::WeightedSoft as u32 => aggregate::weighted_soft_aggregate(task, &scored()?),
        s if s == EaseStrategy::WeightedHardVote as u32 => aggregate::weighted_hard_vote(task, &scored()?),
        s if s == EaseStrategy::HardArgmaxVote as u32 => aggregate::hard_argmax_vote(task, &set.candidates),
        other => return Err(invalid(format!("unknown strategy {other}"))),
    };
    Ok(r?)
}

/// Aggregates the set with an `EaseStrategy` value.
///
/// Writes the winning label index to `out_label`. `out_mass` (NULL or room
/// for `n_labels` doubles) receives the per-label mass and `out_tie` (NULL
/// allowed) whether the winner was chosen by the first-label tie rule.
///
/// # Safety
/// Pointers must be NULL where allowed or valid for the sizes above.
#[no_mangle]
pub unsafe extern "C" fn ease_aggregate(
    set: *const EaseCandidateSet,
    strategy: u32,
    out_label: *mut usize,
    out_mass: *mut f64,
    out_tie: *mut bool,
) -> EaseStatus {
    guard(|| {
        let set = set.as_ref().ok_or_else(|| null("set"))?;
        let out_label = out_label.as_mut().ok_or_else(|| null("out_label"))?;
        let r = aggregate_set(set, strategy)?;
        *out_label = set.task.label_index(&r.prediction).expect("prediction is a task label");
        if !out_mass.is_null() {
            for (i, (_, m)) in r.per_label_mass.iter().enumerate() {
                *out_mass.add(i) = *m;
            }
        }
        if let Some(t) = out_tie.as_mut() {
            *t = r.tie_broken;
        }
        Ok(())
    })
}

/// Share of parseable candidates with a distribution whose sampled label
/// differs from that distribution's argmax.
///
/// # Safety
/// `set` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ease_inconsistency_ratio(set: *const EaseCandidateSet, out: *mut f64) -> EaseStatus {
    guard(|| {
        let set = set.as_ref().ok_or_else(|| null("set"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = aggregate::inconsistency_ratio(&set.candidates);
        Ok(())
    })
}

/// Softmax of `n` finite logprobs into `out`.
///
/// # Safety
/// `logprobs` readable and `out` writable for `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn ease_normalize_logprobs(logprobs: *const f64, n: usize, out: *mut f64) -> EaseStatus {
    guard(|| {
        if logprobs.is_null() {
            return Err(null("logprobs"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let names: Vec<String> = (0..n).map(|i| format!("l{i}")).collect();
        let pairs: Vec<(&str, &str)> = names.iter().map(|s| (s.as_str(), s.as_str())).collect();
        let task = TaskSpec::new("softmax", &pairs, "", "").map_err(core_err)?;
        let values = std::slice::from_raw_parts(logprobs, n);
        let lp: Vec<(LabelId, f64)> = task.labels.iter().cloned().zip(values.iter().copied()).collect();
        let d = normalize_over_verbalizers(&task, &lp).map_err(core_err)?;
        std::slice::from_raw_parts_mut(out, n).copy_from_slice(d.probs());
        Ok(())
    })
}

/// Win/tie/lose agreement between rater counts and model scores for a pair
/// of explanations.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ease_human_judge(c1: u32, c2: u32, s1: f64, s2: f64, out: *mut EaseJudgement) -> EaseStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        if !s1.is_finite() || !s2.is_finite() {
            return Err(invalid("scores must be finite"));
        }
        *out = match aggregate::human_judge(c1, c2, s1, s2) {
            Judgement::Win => EaseJudgement::Win,
            Judgement::Tie => EaseJudgement::Tie,
            Judgement::Lose => EaseJudgement::Lose,
        };
        Ok(())
    })
}

/// Runs one experiment from a TOML config (the keys the `ease` CLI reads
/// with `--config`) and returns the report as JSON in `out_json`.
///
/// # Safety
/// `config_toml` must be a NUL-terminated string; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn ease_run_config(config_toml: *const c_char, out_json: *mut *mut c_char) -> EaseStatus {
    guard(|| {
        if out_json.is_null() {
            return Err(null("out_json"));
        }
        let text = str_arg(config_toml, "config_toml")?;
        let settings = ConfigFile::parse(text)?;
        let (report, _) = ease_core::cli::run_settings(&settings)?;
        let json = CString::new(report.to_json()).map_err(|_| Failure(EaseStatus::Internal, "nul in report".into()))?;
        *out_json = json.into_raw();
        Ok(())
    })
}
