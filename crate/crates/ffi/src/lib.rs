//! C interface to `topics-core`.
//!
//! Every fallible function returns a [`TopicsStatus`]; on failure the
//! message is available from [`topics_last_error`] on the same thread until
//! the next failing call. Objects are opaque and owned by the caller, who
//! releases them with the matching `*_free` function. Panics never cross
//! the boundary: they surface as `TOPICS_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use topics_core::corpus::{holdout_split, read_uci_bow, synth_corpus, Corpus, SynthParams};
use topics_core::eval::{heldout_loglik, EvalConfig};
use topics_core::model::HyperParams;
use topics_core::progress::CheckpointPolicy;
use topics_core::scvb0::{train, validate_schedule, Scvb0Config, StepSchedule};
use topics_core::snapshot::{Algorithm, Snapshot};
use topics_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopicsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Precondition = 3,
    Parse = 4,
    Io = 5,
    Numeric = 6,
    Snapshot = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// A training or test corpus.
pub struct TopicsCorpus(Corpus);

/// A trained model together with its hyperparameters.
pub struct TopicsModel(Snapshot);

/// SCVB0 settings. `max_seconds ≤ 0` means no time limit.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct TopicsScvb0Config {
    pub topics: usize,
    pub alpha: f64,
    pub eta: f64,
    pub s_phi: f64,
    pub tau_phi: f64,
    pub kappa_phi: f64,
    pub s_theta: f64,
    pub tau_theta: f64,
    pub kappa_theta: f64,
    pub minibatch_docs: usize,
    pub burn_in_passes: usize,
    pub epochs: usize,
    pub seed: u64,
    pub max_seconds: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> TopicsStatus {
    match e {
        Error::Parse(_) => TopicsStatus::Parse,
        Error::Io(_) => TopicsStatus::Io,
        Error::InvalidArgument(_) => TopicsStatus::InvalidArgument,
        Error::Precondition(_) => TopicsStatus::Precondition,
        Error::Numeric(_) => TopicsStatus::Numeric,
        Error::Snapshot(_) => TopicsStatus::Snapshot,
    }
}

struct Failure(TopicsStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(TopicsStatus::NullPointer, format!("{what} is null"))
}

fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> TopicsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TopicsStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("panic: {msg}"));
            TopicsStatus::Panic
        }
    }
}

unsafe fn path_arg<'a>(p: *const c_char, what: &str) -> Result<&'a Path, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(TopicsStatus::InvalidArgument, format!("{what} is not valid UTF-8")))?;
    Ok(Path::new(s))
}

unsafe fn out_arg<'a, T>(p: *mut *mut T, what: &str) -> Result<&'a mut *mut T, Failure> {
    let out = p.as_mut().ok_or_else(|| null(what))?;
    *out = ptr::null_mut();
    Ok(out)
}

/// Message of the last failure on this thread, or an empty string. The
/// pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn topics_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Reads a UCI bag-of-words corpus. Empty documents are dropped.
///
/// # Safety
/// `docword` and `vocab` must be NUL-terminated strings; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn topics_corpus_load(docword: *const c_char, vocab: *const c_char, out: *mut *mut TopicsCorpus) -> TopicsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let parsed = read_uci_bow(path_arg(docword, "docword")?, path_arg(vocab, "vocab")?)?;
        *out = Box::into_raw(Box::new(TopicsCorpus(parsed.corpus)));
        Ok(())
    })
}

/// Draws a corpus from the LDA generative process.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn topics_corpus_synth(
    topics: usize,
    vocab_size: usize,
    docs: usize,
    mean_len: usize,
    alpha: f64,
    eta: f64,
    seed: u64,
    out: *mut *mut TopicsCorpus,
) -> TopicsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let sc = synth_corpus(&SynthParams { topics, vocab_size, docs, mean_len, alpha, eta, seed })?;
        *out = Box::into_raw(Box::new(TopicsCorpus(sc.corpus)));
        Ok(())
    })
}

/// Splits off `n_test` random documents as a test corpus.
///
/// # Safety
/// `corpus` must come from this library; both out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn topics_corpus_holdout(
    corpus: *const TopicsCorpus,
    n_test: usize,
    seed: u64,
    train_out: *mut *mut TopicsCorpus,
    test_out: *mut *mut TopicsCorpus,
) -> TopicsStatus {
    guard(|| {
        let train_out = out_arg(train_out, "train_out")?;
        let test_out = out_arg(test_out, "test_out")?;
        let c = corpus.as_ref().ok_or_else(|| null("corpus"))?;
        let (tr, te) = holdout_split(&c.0, n_test, seed)?;
        *train_out = Box::into_raw(Box::new(TopicsCorpus(tr)));
        *test_out = Box::into_raw(Box::new(TopicsCorpus(te)));
        Ok(())
    })
}

/// # Safety
/// `corpus` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn topics_corpus_free(corpus: *mut TopicsCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

/// # Safety
/// `corpus` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn topics_corpus_num_docs(corpus: *const TopicsCorpus) -> usize {
    corpus.as_ref().map_or(0, |c| c.0.num_docs())
}

/// # Safety
/// `corpus` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn topics_corpus_vocab_size(corpus: *const TopicsCorpus) -> usize {
    corpus.as_ref().map_or(0, |c| c.0.vocab_size())
}

/// # Safety
/// `corpus` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn topics_corpus_num_tokens(corpus: *const TopicsCorpus) -> usize {
    corpus.as_ref().map_or(0, |c| c.0.num_tokens())
}

/// Defaults: α = 0.1, η = 0.01, schedules (10, 1000, 0.9) and (1, 10, 0.9),
/// minibatches of 100, one burn-in pass, one epoch.
#[no_mangle]
pub extern "C" fn topics_scvb0_config_default(topics: usize) -> TopicsScvb0Config {
    let phi = StepSchedule::topics_default();
    let theta = StepSchedule::documents_default();
    TopicsScvb0Config {
        topics,
        alpha: 0.1,
        eta: 0.01,
        s_phi: phi.s,
        tau_phi: phi.tau,
        kappa_phi: phi.kappa,
        s_theta: theta.s,
        tau_theta: theta.tau,
        kappa_theta: theta.kappa,
        minibatch_docs: 100,
        burn_in_passes: 1,
        epochs: 1,
        seed: 0,
        max_seconds: 0.0,
    }
}

/// Trains SCVB0 on `corpus`.
///
/// # Safety
/// `corpus` and `config` must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn topics_scvb0_train(corpus: *const TopicsCorpus, config: *const TopicsScvb0Config, out: *mut *mut TopicsModel) -> TopicsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let c = corpus.as_ref().ok_or_else(|| null("corpus"))?;
        let cfg = config.as_ref().ok_or_else(|| null("config"))?;
        let hyper = HyperParams::symmetric(cfg.alpha, cfg.eta, c.0.vocab_size())?;
        let mut sc = Scvb0Config::new(cfg.topics, hyper.clone());
        sc.phi_schedule = StepSchedule::new(cfg.s_phi, cfg.tau_phi, cfg.kappa_phi);
        sc.theta_schedule = StepSchedule::new(cfg.s_theta, cfg.tau_theta, cfg.kappa_theta);
        sc.minibatch_docs = cfg.minibatch_docs;
        sc.burn_in_passes = cfg.burn_in_passes;
        sc.epochs = cfg.epochs;
        sc.seed = cfg.seed;
        sc.max_seconds = (cfg.max_seconds > 0.0).then_some(cfg.max_seconds);
        let trained = train(&c.0, &sc, CheckpointPolicy::default(), |_| {})?;
        *out = Box::into_raw(Box::new(TopicsModel(Snapshot::new(Algorithm::Scvb0, hyper, trained.stats)?)));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn topics_model_num_topics(model: *const TopicsModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.num_topics())
}

/// # Safety
/// `model` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn topics_model_vocab_size(model: *const TopicsModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.vocab_size())
}

/// Copies the K × W topic-word matrix, row-major, into `buf`, which must
/// hold at least K·W doubles.
///
/// # Safety
/// `model` must be valid and `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn topics_model_phi(model: *const TopicsModel, buf: *mut f64, len: usize) -> TopicsStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let phi = m.0.topics()?;
        let data = phi.as_slice();
        if len < data.len() {
            return Err(Failure(TopicsStatus::BufferTooSmall, format!("buffer holds {len} values, need {}", data.len())));
        }
        ptr::copy_nonoverlapping(data.as_ptr(), buf, data.len());
        Ok(())
    })
}

/// Writes the model as a binary snapshot.
///
/// # Safety
/// `model` must be valid and `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn topics_model_save(model: *const TopicsModel, path: *const c_char) -> TopicsStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        m.0.write(path_arg(path, "path")?)?;
        Ok(())
    })
}

/// Reads a snapshot written by any of the trainers.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn topics_model_load(path: *const c_char, out: *mut *mut TopicsModel) -> TopicsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let snap = Snapshot::read(path_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(TopicsModel(snap)));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn topics_model_free(model: *mut TopicsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Per-token held-out log-likelihood of `test` under `model`, with each
/// document's proportions estimated from half of its tokens.
///
/// # Safety
/// `model` and `test` must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn topics_heldout_loglik(model: *const TopicsModel, test: *const TopicsCorpus, seed: u64, out: *mut f64) -> TopicsStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let t = test.as_ref().ok_or_else(|| null("test"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let eval = EvalConfig { seed, ..EvalConfig::default() };
        *out = heldout_loglik(&m.0.topics()?, &t.0, m.0.hyper.alpha(), &eval)?.ll_per_token;
        Ok(())
    })
}

/// Checks a step-size schedule ρ_t = s/(τ+t)^κ. Violations are reported as
/// `TOPICS_STATUS_INVALID_ARGUMENT` with every violation in the message.
#[no_mangle]
pub extern "C" fn topics_validate_schedule(s: f64, tau: f64, kappa: f64) -> TopicsStatus {
    guard(|| {
        validate_schedule(&StepSchedule::new(s, tau, kappa)).map_err(|v| {
            let names: Vec<String> = v.iter().map(ToString::to_string).collect();
            Failure(TopicsStatus::InvalidArgument, names.join("; "))
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn panics_become_a_status() {
        let s = guard(|| panic!("boom"));
        assert_eq!(s, TopicsStatus::Panic);
        let msg = unsafe { CStr::from_ptr(topics_last_error()) }.to_str().unwrap().to_owned();
        assert_eq!(msg, "panic: boom");
    }

    #[test]
    fn every_error_kind_has_a_status() {
        let cases = [
            (Error::InvalidArgument("x".into()), TopicsStatus::InvalidArgument),
            (Error::Precondition("x".into()), TopicsStatus::Precondition),
            (Error::Numeric("x".into()), TopicsStatus::Numeric),
            (Error::Snapshot("x".into()), TopicsStatus::Snapshot),
            (Error::Parse(topics_core::ParseError::EmptyCorpus), TopicsStatus::Parse),
            (Error::Io(std::io::Error::other("x")), TopicsStatus::Io),
        ];
        for (e, s) in cases {
            assert_eq!(status_of(&e), s);
        }
    }

    #[test]
    fn interior_nul_does_not_lose_the_message() {
        set_error("a\0b");
        let msg = unsafe { CStr::from_ptr(topics_last_error()) };
        assert_eq!(msg.to_str().unwrap(), "a b");
    }
}
