//! Argument parsing for the `topics-*` binaries. Each `*_main` takes the
//! full argument list (program name first) and returns the process exit
//! code.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser};

use crate::corpus::SynthParams;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::harness::{cmd_bench, cmd_synth, cmd_topics, cmd_train, exit_code, init_logging, BenchSpec, RunSpec, EXIT_OK};
use crate::progress::CheckpointPolicy;
use crate::scvb0::StepSchedule;
use crate::snapshot::Algorithm;

fn parse_algorithm(s: &str) -> std::result::Result<Algorithm, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Args)]
struct CorpusArgs {
    /// UCI docword file.
    #[arg(long)]
    docword: PathBuf,
    /// UCI vocab file, one word per line.
    #[arg(long)]
    vocab: PathBuf,
    /// Documents held out for evaluation.
    #[arg(long, default_value_t = 100)]
    n_test: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct ModelArgs {
    #[arg(long, default_value_t = 20)]
    k: usize,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long, default_value_t = 0.01)]
    eta: f64,
    #[arg(long, default_value_t = 100)]
    minibatch: usize,
    #[arg(long, default_value_t = 1)]
    burn_in: usize,
    /// Added to alpha and eta (svb only).
    #[arg(long, default_value_t = 0.0)]
    offset: f64,
    #[arg(long, default_value_t = 10.0)]
    s_phi: f64,
    #[arg(long, default_value_t = 1000.0)]
    tau_phi: f64,
    #[arg(long, default_value_t = 0.9)]
    kappa_phi: f64,
    #[arg(long, default_value_t = 1.0)]
    s_theta: f64,
    #[arg(long, default_value_t = 10.0)]
    tau_theta: f64,
    #[arg(long, default_value_t = 0.9)]
    kappa_theta: f64,
    #[arg(long, default_value_t = 1)]
    epochs: usize,
    /// Stop training after this many seconds.
    #[arg(long)]
    time_budget: Option<f64>,
}

#[derive(Debug, Args)]
struct CheckpointArgs {
    /// Evaluate every this many seconds of training.
    #[arg(long)]
    checkpoint_secs: Option<f64>,
    /// Evaluate every this many minibatches (epochs for batch algorithms).
    #[arg(long)]
    checkpoint_minibatches: Option<u64>,
    /// Local passes cap when estimating test-document proportions.
    #[arg(long, default_value_t = 100)]
    eval_passes: usize,
    #[arg(long, default_value_t = 1e-6)]
    eval_tol: f64,
}

impl CheckpointArgs {
    fn policy(&self) -> CheckpointPolicy {
        CheckpointPolicy { every_secs: self.checkpoint_secs, every_minibatches: self.checkpoint_minibatches }
    }

    fn eval(&self, seed: u64) -> EvalConfig {
        EvalConfig { local_passes_max: self.eval_passes, local_tol: self.eval_tol, seed, ..EvalConfig::default() }
    }
}

fn run_spec(algorithm: Algorithm, corpus: &CorpusArgs, model: &ModelArgs, ck: &CheckpointArgs, out: PathBuf) -> RunSpec {
    let mut s = RunSpec::new(algorithm, &corpus.docword, &corpus.vocab, out);
    s.topics = model.k;
    s.alpha = model.alpha;
    s.eta = model.eta;
    s.minibatch = model.minibatch;
    s.burn_in = model.burn_in;
    s.offset = model.offset;
    s.phi_schedule = StepSchedule::new(model.s_phi, model.tau_phi, model.kappa_phi);
    s.theta_schedule = StepSchedule::new(model.s_theta, model.tau_theta, model.kappa_theta);
    s.epochs = model.epochs;
    s.max_seconds = model.time_budget;
    s.n_test = corpus.n_test;
    s.seed = corpus.seed;
    s.checkpoint = ck.policy();
    s.eval = ck.eval(corpus.seed);
    s
}

/// Train one model and score it on held-out documents.
#[derive(Debug, Parser)]
#[command(name = "topics-train", version)]
struct TrainCli {
    #[arg(long, value_parser = parse_algorithm, default_value = "scvb0")]
    algo: Algorithm,
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    checkpoint: CheckpointArgs,
    /// Write the responsibilities of every entry (cvb0 only).
    #[arg(long)]
    export_gammas: bool,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

/// Compare several runs on one corpus and one holdout split.
#[derive(Debug, Parser)]
#[command(name = "topics-bench", version)]
struct BenchCli {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    checkpoint: CheckpointArgs,
    /// A run as `ALGO[:key=value,...]`; keys: label, offset, burn-in,
    /// minibatch, epochs, k. Repeat for each run.
    #[arg(long = "run", required = true)]
    runs: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

/// Print the top words of every topic in a snapshot.
#[derive(Debug, Parser)]
#[command(name = "topics-topwords", version)]
struct TopwordsCli {
    #[arg(long)]
    snapshot: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long, default_value_t = 10)]
    n: usize,
}

/// Draw a corpus from the LDA generative process.
#[derive(Debug, Parser)]
#[command(name = "topics-synth", version)]
struct SynthCli {
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 100)]
    w: usize,
    #[arg(long, default_value_t = 2000)]
    d: usize,
    #[arg(long, default_value_t = 50)]
    mean_len: usize,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long, default_value_t = 0.05)]
    eta: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Directory for docword.txt, vocab.txt and truth.txt.
    #[arg(long)]
    out: PathBuf,
}

/// Applies `ALGO[:key=value,...]` on top of `base`.
pub fn parse_run(text: &str, base: &RunSpec) -> Result<RunSpec> {
    let (algo, rest) = text.split_once(':').unwrap_or((text, ""));
    let mut spec = base.clone();
    spec.algorithm = algo.parse()?;
    for pair in rest.split(',').filter(|p| !p.is_empty()) {
        let (key, value) = pair.split_once('=').ok_or_else(|| Error::invalid(format!("expected key=value, got '{pair}'")))?;
        let bad = |_| Error::invalid(format!("bad value for {key}: '{value}'"));
        match key {
            "label" => spec.label = Some(value.to_string()),
            "offset" => spec.offset = value.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
            "burn-in" => spec.burn_in = value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            "minibatch" => spec.minibatch = value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            "epochs" => spec.epochs = value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            "k" => spec.topics = value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            _ => return Err(Error::invalid(format!("unknown run key '{key}'"))),
        }
    }
    Ok(spec)
}

fn parse<P: Parser>(args: Vec<OsString>) -> std::result::Result<P, i32> {
    P::try_parse_from(args).map_err(|e| {
        let _ = e.print();
        e.exit_code()
    })
}

fn finish(result: Result<()>) -> i32 {
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn train_main<I: IntoIterator<Item = OsString>>(args: I) -> i32 {
    init_logging();
    let cli: TrainCli = match parse(args.into_iter().collect()) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let mut spec = run_spec(cli.algo, &cli.corpus, &cli.model, &cli.checkpoint, cli.out);
    spec.export_gammas = cli.export_gammas;
    finish(cmd_train(&spec).map(|out| {
        println!(
            "{} docs_trained={} heldout_ll_per_token={:.6} wall_clock_s={:.3}",
            out.report.algorithm, out.report.docs_trained, out.report.heldout_ll_per_token, out.report.wall_clock_s
        );
    }))
}

pub fn bench_main<I: IntoIterator<Item = OsString>>(args: I) -> i32 {
    init_logging();
    let cli: BenchCli = match parse(args.into_iter().collect()) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let base = run_spec(Algorithm::Scvb0, &cli.corpus, &cli.model, &cli.checkpoint, cli.out.clone());
    let result = (|| -> Result<()> {
        let runs = cli.runs.iter().map(|r| parse_run(r, &base)).collect::<Result<Vec<_>>>()?;
        let bench = BenchSpec {
            docword: cli.corpus.docword.clone(),
            vocab: cli.corpus.vocab.clone(),
            n_test: cli.corpus.n_test,
            seed: cli.corpus.seed,
            eval: base.eval,
            runs,
            out: cli.out.clone(),
        };
        let rows = cmd_bench(&bench)?;
        print!("{}", crate::harness::bench_csv(&rows));
        Ok(())
    })();
    finish(result)
}

pub fn topwords_main<I: IntoIterator<Item = OsString>>(args: I) -> i32 {
    init_logging();
    let cli: TopwordsCli = match parse(args.into_iter().collect()) {
        Ok(c) => c,
        Err(code) => return code,
    };
    finish(cmd_topics(&cli.snapshot, &cli.vocab, cli.n).map(|topics| {
        let mut stdout = std::io::stdout().lock();
        for (k, words) in topics.iter().enumerate() {
            let _ = writeln!(stdout, "topic {k}: {}", words.join(" "));
        }
    }))
}

pub fn synth_main<I: IntoIterator<Item = OsString>>(args: I) -> i32 {
    init_logging();
    let cli: SynthCli = match parse(args.into_iter().collect()) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let params = SynthParams {
        topics: cli.k,
        vocab_size: cli.w,
        docs: cli.d,
        mean_len: cli.mean_len,
        alpha: cli.alpha,
        eta: cli.eta,
        seed: cli.seed,
    };
    finish(cmd_synth(&params, &cli.out).map(|paths| {
        for p in paths {
            println!("{}", p.display());
        }
    }))
}
