//! Stochastic CVB0.
//!
//! Only the expected-count statistics are kept. Each token's responsibility
//! is recomputed from them on the fly (without excluding its own previous
//! value), the document statistics are moved toward `C_j·γ` after every
//! entry, and the topic statistics toward the minibatch mean of `C·γ`
//! estimates after every minibatch.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{init_stats, normalize_in_place, responsibility_kernel, HyperParams, MinibatchAccumulator, ModelStats, Responsibility};
use crate::progress::{Cadence, Checkpoint, CheckpointPolicy, Progress, Stopwatch};

/// Step sizes `ρ_t = s / (τ + t)^κ`, t = 1, 2, ...
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub s: f64,
    pub tau: f64,
    pub kappa: f64,
}

impl StepSchedule {
    pub const fn new(s: f64, tau: f64, kappa: f64) -> Self {
        Self { s, tau, kappa }
    }

    /// Default schedule for the topic statistics.
    pub const fn topics_default() -> Self {
        Self::new(10.0, 1000.0, 0.9)
    }

    /// Default schedule for the document statistics.
    pub const fn documents_default() -> Self {
        Self::new(1.0, 10.0, 0.9)
    }

    #[inline]
    pub fn rho(&self, t: u64) -> f64 {
        rho(self, t)
    }
}

#[inline]
pub fn rho(schedule: &StepSchedule, t: u64) -> f64 {
    debug_assert!(t >= 1, "step counter starts at 1");
    schedule.s / (schedule.tau + t as f64).powf(schedule.kappa)
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleViolation {
    /// s must be positive.
    NonPositiveScale(f64),
    /// τ must be nonnegative.
    NegativeOffset(f64),
    /// ρ_1 exceeds one.
    FirstStepAboveOne(f64),
    /// κ ≤ 0: the steps do not vanish.
    StepsDoNotVanish(f64),
    /// κ > 1: the steps are summable.
    FiniteSum(f64),
}

impl fmt::Display for ScheduleViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NonPositiveScale(s) => write!(f, "s = {s} ≤ 0"),
            Self::NegativeOffset(t) => write!(f, "τ = {t} < 0"),
            Self::FirstStepAboveOne(r) => write!(f, "ρ_1 = {r} > 1"),
            Self::StepsDoNotVanish(k) => write!(f, "ρ_t does not vanish (κ = {k} ≤ 0)"),
            Self::FiniteSum(k) => write!(f, "Σρ_t finite (κ = {k} > 1)"),
        }
    }
}

/// Checks that a schedule keeps every step in (0, 1], decays to zero and is
/// not summable. Square-summability is deliberately not required.
pub fn validate_schedule(schedule: &StepSchedule) -> std::result::Result<(), Vec<ScheduleViolation>> {
    let StepSchedule { s, tau, kappa } = *schedule;
    let mut v = Vec::new();
    if !(s > 0.0) {
        v.push(ScheduleViolation::NonPositiveScale(s));
    }
    if !(tau >= 0.0) {
        v.push(ScheduleViolation::NegativeOffset(tau));
    }
    if !(kappa > 0.0) {
        v.push(ScheduleViolation::StepsDoNotVanish(kappa));
    } else if kappa > 1.0 {
        v.push(ScheduleViolation::FiniteSum(kappa));
    }
    if s > 0.0 && tau >= 0.0 {
        // ρ_t is largest at t = 1 whenever κ ≥ 0
        let first = rho(schedule, 1);
        if first > 1.0 {
            v.push(ScheduleViolation::FirstStepAboveOne(first));
        }
    }
    if v.is_empty() {
        Ok(())
    } else {
        Err(v)
    }
}

/// Which counter indexes the document step size ρ^Θ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThetaCounter {
    /// Each document keeps its own count of updates applied to it,
    /// persisting across epochs.
    PerDocument,
    /// One count of entry updates across the whole run.
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scvb0Config {
    pub topics: usize,
    pub hyper: HyperParams,
    pub phi_schedule: StepSchedule,
    pub theta_schedule: StepSchedule,
    pub minibatch_docs: usize,
    pub burn_in_passes: usize,
    pub epochs: usize,
    pub seed: u64,
    pub theta_counter: ThetaCounter,
    /// Stop once this much training time has elapsed.
    pub max_seconds: Option<f64>,
}

impl Scvb0Config {
    /// Defaults: minibatches of 100 documents, one burn-in pass, topic
    /// schedule (10, 1000, 0.9) and document schedule (1, 10, 0.9).
    pub fn new(topics: usize, hyper: HyperParams) -> Self {
        Self {
            topics,
            hyper,
            phi_schedule: StepSchedule::topics_default(),
            theta_schedule: StepSchedule::documents_default(),
            minibatch_docs: 100,
            burn_in_passes: 1,
            epochs: 1,
            seed: 0,
            theta_counter: ThetaCounter::PerDocument,
            max_seconds: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.topics == 0 {
            return Err(Error::invalid("K must be ≥ 1"));
        }
        if self.minibatch_docs == 0 {
            return Err(Error::invalid("minibatch_docs must be ≥ 1"));
        }
        for (name, sched) in [("topic", &self.phi_schedule), ("document", &self.theta_schedule)] {
            if let Err(v) = validate_schedule(sched) {
                let msgs: Vec<String> = v.iter().map(ToString::to_string).collect();
                return Err(Error::invalid(format!("{name} schedule: {}", msgs.join("; "))));
            }
        }
        Ok(())
    }
}

/// γ from raw counts: `γ_k ∝ (n_phi_wk + η_w)/(n_z_k + Σ η) · (n_theta_jk + α)`.
#[inline]
pub fn gamma_update_raw(phi_row: &[f64], n_z: &[f64], theta_row: &[f64], word: usize, hyper: &HyperParams) -> Result<Responsibility> {
    let mut out = vec![0.0; n_z.len()];
    let total = responsibility_kernel(&mut out, phi_row, n_z, theta_row, hyper.eta(word), hyper.eta_sum(), hyper.alpha());
    normalize_in_place(&mut out, total)?;
    Ok(Responsibility::from_vec(out).expect("normalized kernel output"))
}

/// Responsibility of word `word` in document `doc` under the current
/// statistics, with no exclusion of the token's own previous value.
pub fn gamma_update(stats: &ModelStats, doc: usize, word: usize, hyper: &HyperParams) -> Result<Responsibility> {
    gamma_update_raw(stats.n_phi.row(word), &stats.n_z, stats.n_theta.row(doc), word, hyper)
}

/// Online average of the document statistics toward `C_j · γ`.
#[inline]
pub fn update_doc_stats(n_theta_j: &mut [f64], doc_len: f64, gamma: &[f64], rho: f64) {
    for (n, g) in n_theta_j.iter_mut().zip(gamma) {
        *n = (1.0 - rho) * *n + rho * doc_len * g;
    }
}

/// `m` applications of [`update_doc_stats`] with γ held fixed, in closed form.
#[inline]
pub fn clumped_doc_update(n_theta_j: &mut [f64], doc_len: f64, gamma: &[f64], rho: f64, multiplicity: u32) {
    let keep = (1.0 - rho).powi(multiplicity as i32);
    let mix = doc_len * (1.0 - keep);
    for (n, g) in n_theta_j.iter_mut().zip(gamma) {
        *n = keep * *n + mix * g;
    }
}

/// Dense minibatch update of the topic statistics: move `n_phi` and `n_z`
/// toward the mean per-token estimate, then clear the accumulator.
pub fn minibatch_update(stats: &mut ModelStats, acc: &mut MinibatchAccumulator, rho: f64) -> Result<()> {
    if acc.is_empty() {
        return Err(Error::invalid("minibatch update with an empty accumulator"));
    }
    let inv = 1.0 / acc.token_count() as f64;
    stats.n_phi.as_mut_slice().iter_mut().for_each(|v| *v *= 1.0 - rho);
    for (w, row) in acc.touched() {
        for (n, a) in stats.n_phi.row_mut(w).iter_mut().zip(row) {
            *n += rho * a * inv;
        }
    }
    for (z, a) in stats.n_z.iter_mut().zip(acc.n_hat_z()) {
        *z = (1.0 - rho) * *z + rho * a * inv;
    }
    acc.reset();
    Ok(())
}

/// Topic statistics with a global multiplier so that the `(1 − ρ)` decay
/// of untouched rows costs O(1): the true value is `scale · raw`.
#[derive(Debug, Clone)]
pub struct LazyTopicStats {
    raw: Matrix,
    scale: f64,
    n_z: Vec<f64>,
}

/// Below this the multiplier is folded back into the rows.
const MIN_SCALE: f64 = 1e-150;

impl LazyTopicStats {
    pub fn new(n_phi: Matrix, n_z: Vec<f64>) -> Self {
        Self { raw: n_phi, scale: 1.0, n_z }
    }

    #[inline]
    pub fn row_into(&self, word: usize, out: &mut [f64]) {
        for (o, r) in out.iter_mut().zip(self.raw.row(word)) {
            *o = self.scale * r;
        }
    }

    pub fn n_z(&self) -> &[f64] {
        &self.n_z
    }

    /// Same arithmetic as [`minibatch_update`], touching only the rows seen
    /// in the minibatch.
    pub fn apply_minibatch(&mut self, acc: &mut MinibatchAccumulator, rho: f64) -> Result<()> {
        if acc.is_empty() {
            return Err(Error::invalid("minibatch update with an empty accumulator"));
        }
        let inv = 1.0 / acc.token_count() as f64;
        if rho >= 1.0 {
            self.raw.as_mut_slice().iter_mut().for_each(|v| *v = 0.0);
            self.scale = 1.0;
        } else {
            self.scale *= 1.0 - rho;
        }
        let add = rho * inv / self.scale;
        for (w, row) in acc.touched() {
            for (n, a) in self.raw.row_mut(w).iter_mut().zip(row) {
                *n += add * a;
            }
        }
        for (z, a) in self.n_z.iter_mut().zip(acc.n_hat_z()) {
            *z = (1.0 - rho) * *z + rho * a * inv;
        }
        if self.scale < MIN_SCALE {
            self.fold_scale();
        }
        acc.reset();
        Ok(())
    }

    fn fold_scale(&mut self) {
        let s = self.scale;
        self.raw.as_mut_slice().iter_mut().for_each(|v| *v *= s);
        self.scale = 1.0;
    }

    pub fn materialize(&self) -> Matrix {
        let mut m = self.raw.clone();
        m.as_mut_slice().iter_mut().for_each(|v| *v *= self.scale);
        m
    }
}

/// Outcome of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub stats: ModelStats,
    pub progress: Progress,
}

/// SCVB0 training loop over a fixed corpus.
pub struct Scvb0Trainer<'a> {
    corpus: &'a Corpus,
    config: Scvb0Config,
    topics: LazyTopicStats,
    n_theta: Matrix,
    acc: MinibatchAccumulator,
    rng: ChaCha8Rng,
    doc_steps: Vec<u64>,
    global_steps: u64,
    minibatches: u64,
    docs_seen: u64,
    tokens_seen: u64,
    docs_in_batch: usize,
    last_rho_phi: f64,
    last_rho_theta: f64,
    phi_buf: Vec<f64>,
    gamma_buf: Vec<f64>,
    order_buf: Vec<usize>,
}

impl<'a> Scvb0Trainer<'a> {
    /// Validates the configuration and initializes statistics by random
    /// hard assignment.
    pub fn new(corpus: &'a Corpus, config: Scvb0Config) -> Result<Self> {
        config.validate()?;
        let stats = init_stats(corpus, config.topics, config.seed)?;
        Self::from_stats(corpus, config, stats)
    }

    /// Starts from explicit statistics.
    pub fn from_stats(corpus: &'a Corpus, config: Scvb0Config, stats: ModelStats) -> Result<Self> {
        config.validate()?;
        if config.hyper.vocab_size() != corpus.vocab_size() {
            return Err(Error::invalid("eta length does not match the vocabulary"));
        }
        if stats.num_topics() != config.topics || stats.num_docs() != corpus.num_docs() || stats.vocab_size() != corpus.vocab_size() {
            return Err(Error::invalid("statistics do not match corpus and K"));
        }
        let k = config.topics;
        // separate stream from the initializer
        let rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_5eed_5eed_5eed);
        Ok(Self {
            corpus,
            acc: MinibatchAccumulator::new(corpus.vocab_size(), k),
            topics: LazyTopicStats::new(stats.n_phi, stats.n_z),
            n_theta: stats.n_theta,
            rng,
            doc_steps: vec![0; corpus.num_docs()],
            global_steps: 0,
            minibatches: 0,
            docs_seen: 0,
            tokens_seen: 0,
            docs_in_batch: 0,
            last_rho_phi: 0.0,
            last_rho_theta: 0.0,
            phi_buf: vec![0.0; k],
            gamma_buf: vec![0.0; k],
            order_buf: Vec::new(),
            config,
        })
    }

    pub fn config(&self) -> &Scvb0Config {
        &self.config
    }

    pub fn accumulator(&self) -> &MinibatchAccumulator {
        &self.acc
    }

    pub fn minibatches(&self) -> u64 {
        self.minibatches
    }

    /// Deep copy of the current statistics.
    pub fn snapshot(&self) -> ModelStats {
        ModelStats { n_phi: self.topics.materialize(), n_z: self.topics.n_z().to_vec(), n_theta: self.n_theta.clone() }
    }

    fn next_rho_theta(&mut self, doc: usize) -> f64 {
        let t = match self.config.theta_counter {
            ThetaCounter::PerDocument => {
                self.doc_steps[doc] += 1;
                self.doc_steps[doc]
            }
            ThetaCounter::Global => {
                self.global_steps += 1;
                self.global_steps
            }
        };
        rho(&self.config.theta_schedule, t)
    }

    /// Burn-in passes update γ and the document statistics only; the final
    /// pass also feeds the minibatch accumulator.
    pub fn train_document(&mut self, doc: usize) -> Result<()> {
        let corpus = self.corpus;
        let d = corpus.doc(doc);
        let doc_len = d.len() as f64;
        let total = corpus.num_tokens() as f64;
        let hyper = &self.config.hyper;
        let (alpha, eta_sum) = (hyper.alpha(), hyper.eta_sum());
        let mut order = std::mem::take(&mut self.order_buf);
        order.clear();
        order.extend(0..d.entries().len());

        for pass in 0..=self.config.burn_in_passes {
            let accumulate = pass == self.config.burn_in_passes;
            order.shuffle(&mut self.rng);
            for &t in &order {
                let e = d.entries()[t];
                self.topics.row_into(e.word, &mut self.phi_buf);
                let theta_row = self.n_theta.row(doc);
                let z = responsibility_kernel(
                    &mut self.gamma_buf,
                    &self.phi_buf,
                    self.topics.n_z(),
                    theta_row,
                    self.config.hyper.eta(e.word),
                    eta_sum,
                    alpha,
                );
                normalize_in_place(&mut self.gamma_buf, z)?;
                let rho_theta = self.next_rho_theta(doc);
                self.last_rho_theta = rho_theta;
                clumped_doc_update(self.n_theta.row_mut(doc), doc_len, &self.gamma_buf, rho_theta, e.count);
                if accumulate {
                    self.acc.accumulate(e.word, &self.gamma_buf, total, e.count);
                }
            }
        }
        self.order_buf = order;
        self.docs_seen += 1;
        self.tokens_seen += d.len() as u64;
        self.docs_in_batch += 1;
        Ok(())
    }

    /// Applies the pending minibatch, if any, with the next ρ^Φ.
    pub fn finish_minibatch(&mut self) -> Result<bool> {
        self.docs_in_batch = 0;
        if self.acc.is_empty() {
            return Ok(false);
        }
        self.minibatches += 1;
        let r = rho(&self.config.phi_schedule, self.minibatches);
        self.last_rho_phi = r;
        self.topics.apply_minibatch(&mut self.acc, r)?;
        Ok(true)
    }

    fn progress(&self, clock: &Stopwatch) -> Progress {
        Progress {
            wall_clock_s: clock.seconds(),
            docs_seen: self.docs_seen,
            tokens_seen: self.tokens_seen,
            minibatches: self.minibatches,
            heldout_ll_per_token: None,
            rho_phi: self.last_rho_phi,
            rho_theta: self.last_rho_theta,
        }
    }

    fn emit<F: FnMut(Checkpoint<ModelStats>)>(&self, clock: &mut Stopwatch, on_checkpoint: &mut F) {
        clock.pause();
        on_checkpoint(Checkpoint { progress: self.progress(clock), state: self.snapshot() });
        clock.resume();
    }

    /// Runs the configured epochs (or until the time budget is spent).
    /// `after_minibatch` sees the trainer after every topic update.
    pub fn run_with<F, G>(&mut self, policy: CheckpointPolicy, mut on_checkpoint: F, mut after_minibatch: G) -> Result<Progress>
    where
        F: FnMut(Checkpoint<ModelStats>),
        G: FnMut(&Self),
    {
        let mut clock = Stopwatch::started();
        let mut cadence = Cadence::new(policy);
        self.emit(&mut clock, &mut on_checkpoint);
        let mut docs: Vec<usize> = (0..self.corpus.num_docs()).collect();
        let out_of_time = |clock: &Stopwatch, limit: Option<f64>| limit.is_some_and(|l| clock.seconds() >= l);
        'epochs: for _ in 0..self.config.epochs {
            docs.shuffle(&mut self.rng);
            for &j in &docs {
                self.train_document(j)?;
                if self.docs_in_batch == self.config.minibatch_docs && self.finish_minibatch()? {
                    after_minibatch(self);
                }
                if cadence.due(clock.seconds(), self.minibatches) {
                    self.emit(&mut clock, &mut on_checkpoint);
                }
                if out_of_time(&clock, self.config.max_seconds) {
                    break 'epochs;
                }
            }
            if self.finish_minibatch()? {
                after_minibatch(self);
            }
        }
        if self.finish_minibatch()? {
            after_minibatch(self);
        }
        clock.pause();
        let last = self.progress(&clock);
        on_checkpoint(Checkpoint { progress: last.clone(), state: self.snapshot() });
        Ok(last)
    }

    pub fn run<F: FnMut(Checkpoint<ModelStats>)>(&mut self, policy: CheckpointPolicy, on_checkpoint: F) -> Result<Progress> {
        self.run_with(policy, on_checkpoint, |_| {})
    }
}

/// Trains SCVB0 on `corpus`, handing snapshots to `on_checkpoint`.
pub fn train<F: FnMut(Checkpoint<ModelStats>)>(corpus: &Corpus, config: &Scvb0Config, policy: CheckpointPolicy, on_checkpoint: F) -> Result<TrainOutput> {
    let mut trainer = Scvb0Trainer::new(corpus, config.clone())?;
    let progress = trainer.run(policy, on_checkpoint)?;
    Ok(TrainOutput { stats: trainer.snapshot(), progress })
}
