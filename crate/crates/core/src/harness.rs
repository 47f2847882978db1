//! Training runs, benchmarks and the other commands behind the CLI.
//!
//! Every run trains on one side of a seeded holdout split and scores its
//! checkpoints on the other side. Checkpoint snapshots are scored on a
//! separate evaluator thread, which is also the only writer of the metrics
//! stream, so the trainer never waits for evaluation.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc;

use log::info;
use serde::{Deserialize, Serialize};

use crate::corpus::{format_truth, holdout_split, parse_vocab, read_uci_bow, synth_corpus, write_uci_bow, Corpus, SynthParams};
use crate::cvb0::{cvb0_epoch, Cvb0State, Exclusion};
use crate::error::{Error, Result};
use crate::eval::{heldout_loglik, top_words, EvalConfig, EvalReport};
use crate::map_em::{bound_trace_csv, em_bound, em_full_iteration, BoundRecord, EmState};
use crate::model::{HyperParams, ModelStats};
use crate::progress::{Cadence, CheckpointPolicy, Progress, Stopwatch};
use crate::scvb0::{validate_schedule, Scvb0Config, Scvb0Trainer, StepSchedule, ThetaCounter};
use crate::snapshot::{write_sidecar, Algorithm, Snapshot};
use crate::svb::{SvbConfig, SvbTrainer};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Configuration problems are usage errors; everything else is a runtime
/// failure.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidArgument(_) | Error::Precondition(_) => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

/// Logging to stderr; verbosity from `TOPICS_LOG` (default `warn`).
pub fn init_logging() {
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("TOPICS_LOG", "warn")).try_init();
}

pub const SNAPSHOT_FILE: &str = "model.snap";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const BOUND_FILE: &str = "bound.csv";
pub const GAMMAS_FILE: &str = "gammas.bin";
pub const BENCH_FILE: &str = "bench.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub algorithm: Algorithm,
    /// Name used in benchmark output; defaults to the algorithm name.
    pub label: Option<String>,
    pub docword: PathBuf,
    pub vocab: PathBuf,
    pub topics: usize,
    pub alpha: f64,
    pub eta: f64,
    pub phi_schedule: StepSchedule,
    pub theta_schedule: StepSchedule,
    pub minibatch: usize,
    pub burn_in: usize,
    /// SVB only: added to both priors.
    pub offset: f64,
    pub epochs: usize,
    pub n_test: usize,
    pub checkpoint: CheckpointPolicy,
    /// Training time budget in seconds.
    pub max_seconds: Option<f64>,
    pub seed: u64,
    pub eval: EvalConfig,
    /// CVB0 only: also write the per-entry responsibilities.
    pub export_gammas: bool,
    pub out: PathBuf,
}

impl RunSpec {
    pub fn new(algorithm: Algorithm, docword: impl Into<PathBuf>, vocab: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        Self {
            algorithm,
            label: None,
            docword: docword.into(),
            vocab: vocab.into(),
            topics: 20,
            alpha: 0.1,
            eta: 0.01,
            phi_schedule: StepSchedule::topics_default(),
            theta_schedule: StepSchedule::documents_default(),
            minibatch: 100,
            burn_in: 1,
            offset: 0.0,
            epochs: 1,
            n_test: 100,
            checkpoint: CheckpointPolicy::default(),
            max_seconds: None,
            seed: 0,
            eval: EvalConfig::default(),
            export_gammas: false,
            out: out.into(),
        }
    }

    pub fn name(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.algorithm.name().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        if self.topics == 0 {
            return Err(Error::invalid("K must be ≥ 1"));
        }
        if !(self.alpha > 0.0 && self.eta > 0.0) {
            return Err(Error::invalid("alpha and eta must be positive"));
        }
        if self.n_test == 0 {
            return Err(Error::invalid("n_test must be ≥ 1"));
        }
        if self.max_seconds.is_some_and(|s| !(s > 0.0)) {
            return Err(Error::invalid("time budget must be positive"));
        }
        if self.checkpoint.every_secs.is_some_and(|s| !(s > 0.0)) || self.checkpoint.every_minibatches == Some(0) {
            return Err(Error::invalid("checkpoint cadence must be positive"));
        }
        if self.offset != 0.0 && self.algorithm != Algorithm::Svb {
            return Err(Error::invalid("offset applies to svb only"));
        }
        if self.export_gammas && self.algorithm != Algorithm::Cvb0 {
            return Err(Error::invalid("responsibility export applies to cvb0 only"));
        }
        let schedule = |name: &str, s: &StepSchedule| -> Result<()> {
            validate_schedule(s).map_err(|v| {
                let msg: Vec<String> = v.iter().map(ToString::to_string).collect();
                Error::invalid(format!("{name} schedule: {}", msg.join("; ")))
            })
        };
        match self.algorithm {
            Algorithm::Scvb0 => {
                schedule("topic", &self.phi_schedule)?;
                schedule("document", &self.theta_schedule)?;
            }
            Algorithm::Svb => {
                schedule("topic", &self.phi_schedule)?;
                if !(self.offset >= 0.0) {
                    return Err(Error::invalid("offset must be ≥ 0"));
                }
            }
            Algorithm::Map => {
                if self.alpha < 1.0 || self.eta < 1.0 {
                    return Err(Error::precondition(format!("map needs alpha ≥ 1 and eta ≥ 1, got {} and {}", self.alpha, self.eta)));
                }
            }
            Algorithm::Cvb0 => {}
        }
        if matches!(self.algorithm, Algorithm::Scvb0 | Algorithm::Svb) && self.minibatch == 0 {
            return Err(Error::invalid("minibatch size must be ≥ 1"));
        }
        self.eval.validate()
    }

    /// Priors the algorithm actually trains with.
    fn hyper(&self, vocab_size: usize) -> Result<HyperParams> {
        let offset = if self.algorithm == Algorithm::Svb { self.offset } else { 0.0 };
        HyperParams::symmetric(self.alpha + offset, self.eta + offset, vocab_size)
    }

    fn scvb0_config(&self, hyper: HyperParams) -> Scvb0Config {
        Scvb0Config {
            topics: self.topics,
            hyper,
            phi_schedule: self.phi_schedule,
            theta_schedule: self.theta_schedule,
            minibatch_docs: self.minibatch,
            burn_in_passes: self.burn_in,
            epochs: self.epochs,
            seed: self.seed,
            theta_counter: ThetaCounter::PerDocument,
            max_seconds: self.max_seconds,
        }
    }

    fn svb_config(&self, vocab_size: usize) -> Result<SvbConfig> {
        let mut c = SvbConfig::new(self.topics, HyperParams::symmetric(self.alpha, self.eta, vocab_size)?);
        c.offset = self.offset;
        c.phi_schedule = self.phi_schedule;
        c.minibatch_docs = self.minibatch;
        c.burn_in_passes = self.burn_in;
        c.epochs = self.epochs;
        c.seed = self.seed;
        c.max_seconds = self.max_seconds;
        Ok(c)
    }
}

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub snapshot: Snapshot,
    /// One record per checkpoint, each with its held-out score.
    pub metrics: Vec<Progress>,
    pub report: EvalReport,
    /// MAP-EM only.
    pub bound_trace: Vec<BoundRecord>,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    spec: &'a RunSpec,
    train_docs: usize,
    test_docs: usize,
    vocab_size: usize,
    effective_alpha: f64,
    effective_eta: f64,
}

type Message = (Progress, Snapshot);

struct Evaluated {
    metrics: Vec<Progress>,
    skipped_docs: usize,
}

/// Scores snapshots as they arrive and writes the metrics stream.
fn evaluator(rx: mpsc::Receiver<Message>, test: &Corpus, eval: EvalConfig, alpha: f64, sink: Option<PathBuf>) -> Result<Evaluated> {
    let mut writer = sink.map(|p| File::create(p).map(BufWriter::new)).transpose()?;
    let mut out = Evaluated { metrics: Vec::new(), skipped_docs: 0 };
    for (mut progress, snapshot) in rx {
        let held = heldout_loglik(&snapshot.topics()?, test, alpha, &eval)?;
        progress.heldout_ll_per_token = Some(held.ll_per_token);
        out.skipped_docs = held.skipped_docs;
        if let Some(w) = writer.as_mut() {
            serde_json::to_writer(&mut *w, &progress).map_err(|e| Error::Io(e.into()))?;
            w.write_all(b"\n")?;
        }
        info!("t={:.3}s docs={} ll={:.5}", progress.wall_clock_s, progress.docs_seen, held.ll_per_token);
        out.metrics.push(progress);
    }
    if let Some(mut w) = writer {
        w.flush()?;
    }
    Ok(out)
}

/// Epoch loop shared by the batch algorithms; one epoch counts as one
/// minibatch of the whole corpus.
#[allow(clippy::too_many_arguments)]
fn batch_loop<S>(
    spec: &RunSpec,
    train: &Corpus,
    hyper: &HyperParams,
    state: &mut S,
    mut epoch: impl FnMut(&mut S, usize) -> Result<()>,
    stats: impl Fn(&S) -> ModelStats,
    tx: &mpsc::Sender<Message>,
) -> Result<()> {
    let mut clock = Stopwatch::started();
    let mut cadence = Cadence::new(spec.checkpoint);
    let mut progress = Progress {
        wall_clock_s: 0.0,
        docs_seen: 0,
        tokens_seen: 0,
        minibatches: 0,
        heldout_ll_per_token: None,
        rho_phi: 0.0,
        rho_theta: 0.0,
    };
    let send = |clock: &mut Stopwatch, progress: &mut Progress, state: &S| {
        clock.pause();
        progress.wall_clock_s = clock.seconds();
        let snap = Snapshot { algorithm: spec.algorithm, hyper: hyper.clone(), stats: stats(state) };
        let _ = tx.send((progress.clone(), snap));
        clock.resume();
    };
    send(&mut clock, &mut progress, state);
    for e in 0..spec.epochs {
        epoch(state, e)?;
        progress.docs_seen += train.num_docs() as u64;
        progress.tokens_seen += train.num_tokens() as u64;
        progress.minibatches += 1;
        let last = e + 1 == spec.epochs || spec.max_seconds.is_some_and(|l| clock.seconds() >= l);
        if last {
            break;
        }
        if cadence.due(clock.seconds(), progress.minibatches) {
            send(&mut clock, &mut progress, state);
        }
    }
    send(&mut clock, &mut progress, state);
    Ok(())
}

/// Trains `spec` on `train`, scoring checkpoints on `test`. With `out`, the
/// snapshot, its sidecar, the metrics stream and the report are written
/// there.
pub fn train_on_split(spec: &RunSpec, train: &Corpus, test: &Corpus, out: Option<&Path>) -> Result<RunOutcome> {
    spec.validate()?;
    if train.vocab_size() != test.vocab_size() {
        return Err(Error::invalid("train and test vocabularies differ"));
    }
    let w = train.vocab_size();
    let hyper = spec.hyper(w)?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
    }
    let (tx, rx) = mpsc::channel::<Message>();
    let sink = out.map(|d| d.join(METRICS_FILE));
    let eval = spec.eval;
    let eval_alpha = hyper.alpha();
    let mut bound_trace = Vec::new();
    let mut gammas: Option<Cvb0State> = None;

    let (trained, evaluated) = std::thread::scope(|scope| {
        let handle = scope.spawn(move || evaluator(rx, test, eval, eval_alpha, sink));
        let trained = (|| -> Result<Snapshot> {
            match spec.algorithm {
                Algorithm::Scvb0 => {
                    let mut trainer = Scvb0Trainer::new(train, spec.scvb0_config(hyper.clone()))?;
                    trainer.run(spec.checkpoint, |cp| {
                        let _ = tx.send((cp.progress, Snapshot { algorithm: Algorithm::Scvb0, hyper: hyper.clone(), stats: cp.state }));
                    })?;
                    Ok(Snapshot { algorithm: Algorithm::Scvb0, hyper: hyper.clone(), stats: trainer.snapshot() })
                }
                Algorithm::Svb => {
                    let mut trainer = SvbTrainer::new(train, spec.svb_config(w)?)?;
                    trainer.run(spec.checkpoint, |cp| {
                        let _ = tx.send((cp.progress, Snapshot { algorithm: Algorithm::Svb, hyper: hyper.clone(), stats: cp.state.to_stats() }));
                    })?;
                    Ok(Snapshot { algorithm: Algorithm::Svb, hyper: hyper.clone(), stats: trainer.topics().to_stats() })
                }
                Algorithm::Cvb0 => {
                    let mut state = Cvb0State::init(train, spec.topics, spec.seed)?;
                    batch_loop(
                        spec,
                        train,
                        &hyper,
                        &mut state,
                        |s, e| cvb0_epoch(s, train, &hyper, spec.seed.wrapping_add(e as u64 + 1), Exclusion::Clumped),
                        |s| s.stats.clone(),
                        &tx,
                    )?;
                    let snap = Snapshot { algorithm: Algorithm::Cvb0, hyper: hyper.clone(), stats: state.stats.clone() };
                    gammas = Some(state);
                    Ok(snap)
                }
                Algorithm::Map => {
                    let mut state = EmState::init(train, spec.topics, spec.seed)?;
                    bound_trace.push(BoundRecord { iteration: 0, bound: em_bound(&state, train, &hyper)?, max_abs_gamma_change: 0.0 });
                    batch_loop(
                        spec,
                        train,
                        &hyper,
                        &mut state,
                        |s, e| {
                            let change = em_full_iteration(s, train, &hyper)?;
                            bound_trace.push(BoundRecord { iteration: e + 1, bound: em_bound(s, train, &hyper)?, max_abs_gamma_change: change });
                            Ok(())
                        },
                        |s| s.stats().clone(),
                        &tx,
                    )?;
                    Ok(Snapshot { algorithm: Algorithm::Map, hyper: hyper.clone(), stats: state.stats().clone() })
                }
            }
        })();
        drop(tx);
        let evaluated = handle.join().map_err(|_| Error::Numeric("evaluator thread panicked".into()));
        (trained, evaluated)
    });
    let snapshot = trained?;
    let evaluated = evaluated??;
    let last = evaluated.metrics.last().cloned().ok_or_else(|| Error::Numeric("no checkpoint was evaluated".into()))?;
    let report = EvalReport {
        algorithm: spec.algorithm.name().to_string(),
        wall_clock_s: last.wall_clock_s,
        docs_trained: last.docs_seen,
        heldout_ll_per_token: last.heldout_ll_per_token.unwrap_or(f64::NAN),
        skipped_docs: evaluated.skipped_docs,
    };

    if let Some(dir) = out {
        let path = dir.join(SNAPSHOT_FILE);
        snapshot.write(&path)?;
        write_sidecar(
            &path,
            &Sidecar {
                spec,
                train_docs: train.num_docs(),
                test_docs: test.num_docs(),
                vocab_size: w,
                effective_alpha: hyper.alpha(),
                effective_eta: hyper.eta(0),
            },
        )?;
        let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Io(e.into()))?;
        std::fs::write(dir.join(REPORT_FILE), json + "\n")?;
        if spec.algorithm == Algorithm::Map {
            std::fs::write(dir.join(BOUND_FILE), bound_trace_csv(&bound_trace))?;
        }
        if let (true, Some(state)) = (spec.export_gammas, gammas.as_ref()) {
            state.write_gammas(BufWriter::new(File::create(dir.join(GAMMAS_FILE))?))?;
        }
    }
    Ok(RunOutcome { snapshot, metrics: evaluated.metrics, report, bound_trace })
}

/// Reads the corpus, splits off the test documents and trains.
pub fn cmd_train(spec: &RunSpec) -> Result<RunOutcome> {
    spec.validate()?;
    let parsed = read_uci_bow(&spec.docword, &spec.vocab)?;
    let (train, test) = holdout_split(&parsed.corpus, spec.n_test, spec.seed)?;
    info!("training {} on {} documents, testing on {}", spec.algorithm, train.num_docs(), test.num_docs());
    train_on_split(spec, &train, &test, Some(&spec.out))
}

/// Several runs compared on one corpus and one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSpec {
    pub docword: PathBuf,
    pub vocab: PathBuf,
    pub n_test: usize,
    /// Seeds the holdout split.
    pub seed: u64,
    /// Shared by every run, so every run sees the same test halvings.
    pub eval: EvalConfig,
    pub runs: Vec<RunSpec>,
    pub out: PathBuf,
}

/// One evaluated checkpoint of one benchmark run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub run: String,
    pub algorithm: Algorithm,
    pub checkpoint_time: f64,
    pub heldout_ll: f64,
    pub docs_seen: u64,
    pub minibatches: u64,
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from("run,algorithm,checkpoint_time,heldout_ll,docs_seen,minibatches\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{},{},{}\n", r.run, r.algorithm, r.checkpoint_time, r.heldout_ll, r.docs_seen, r.minibatches));
    }
    s
}

/// Runs every spec on the same split with the same evaluation settings.
/// Run `i` writes into `out/<i>-<name>/`, and the combined curves go to
/// `out/bench.csv`.
pub fn bench_on_split(runs: &[RunSpec], train: &Corpus, test: &Corpus, eval: EvalConfig, out: Option<&Path>) -> Result<Vec<BenchRow>> {
    if runs.len() < 2 {
        return Err(Error::invalid(format!("a benchmark needs at least 2 runs, got {}", runs.len())));
    }
    let mut rows = Vec::new();
    for (i, run) in runs.iter().enumerate() {
        let mut run = run.clone();
        run.eval = eval;
        let dir = out.map(|d| d.join(format!("{i}-{}", run.name())));
        let outcome = train_on_split(&run, train, test, dir.as_deref())?;
        for p in &outcome.metrics {
            rows.push(BenchRow {
                run: run.name(),
                algorithm: run.algorithm,
                checkpoint_time: p.wall_clock_s,
                heldout_ll: p.heldout_ll_per_token.unwrap_or(f64::NAN),
                docs_seen: p.docs_seen,
                minibatches: p.minibatches,
            });
        }
    }
    if let Some(d) = out {
        std::fs::create_dir_all(d)?;
        std::fs::write(d.join(BENCH_FILE), bench_csv(&rows))?;
    }
    Ok(rows)
}

pub fn cmd_bench(bench: &BenchSpec) -> Result<Vec<BenchRow>> {
    if bench.runs.len() < 2 {
        return Err(Error::invalid(format!("a benchmark needs at least 2 runs, got {}", bench.runs.len())));
    }
    for r in &bench.runs {
        r.validate()?;
    }
    let parsed = read_uci_bow(&bench.docword, &bench.vocab)?;
    let (train, test) = holdout_split(&parsed.corpus, bench.n_test, bench.seed)?;
    bench_on_split(&bench.runs, &train, &test, bench.eval, Some(&bench.out))
}

/// Top `n` words of every topic in a snapshot.
pub fn cmd_topics(snapshot: &Path, vocab: &Path, n: usize) -> Result<Vec<Vec<String>>> {
    let snap = Snapshot::read(snapshot)?;
    let vocab = parse_vocab(&std::fs::read_to_string(vocab)?)?;
    if vocab.len() != snap.vocab_size() {
        return Err(Error::invalid(format!(
            "vocabulary has {} words but the snapshot has W = {}",
            vocab.len(),
            snap.vocab_size()
        )));
    }
    top_words(&snap.topics()?, n, &vocab)
}

pub const SYNTH_DOCWORD: &str = "docword.txt";
pub const SYNTH_VOCAB: &str = "vocab.txt";
pub const SYNTH_TRUTH: &str = "truth.txt";

/// Writes a synthetic corpus (docword, vocab) and its generating topics
/// into `out`. Returns the three paths.
pub fn cmd_synth(params: &SynthParams, out: &Path) -> Result<[PathBuf; 3]> {
    if params.topics == 0 {
        return Err(Error::invalid("K must be ≥ 1"));
    }
    let sc = synth_corpus(params)?;
    std::fs::create_dir_all(out)?;
    let paths = [out.join(SYNTH_DOCWORD), out.join(SYNTH_VOCAB), out.join(SYNTH_TRUTH)];
    write_uci_bow(&sc.corpus, &paths[0], &paths[1])?;
    std::fs::write(&paths[2], format_truth(&sc.phi))?;
    Ok(paths)
}
