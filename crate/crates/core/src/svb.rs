//! Stochastic variational Bayes for LDA (uncollapsed), the baseline the
//! collapsed trainers are compared against.
//!
//! Topics carry Dirichlet variational parameters λ. Each minibatch runs a
//! local fixed-point iteration per document against `exp(E[log φ])` and then
//! takes a natural-gradient step on λ.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Gamma;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{HyperParams, MinibatchAccumulator, ModelStats};
use crate::progress::{Cadence, Checkpoint, CheckpointPolicy, Progress, Stopwatch};
use crate::scvb0::{rho, validate_schedule, StepSchedule};

/// ψ(x) for x > 0.
pub fn digamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::invalid(format!("digamma needs a positive finite argument, got {x}")));
    }
    Ok(psi(x))
}

/// Upward recurrence to x ≥ 6, then the asymptotic series.
#[inline]
fn psi(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 6.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let f = 1.0 / (x * x);
    let series = f
        * (1.0 / 12.0
            - f * (1.0 / 120.0 - f * (1.0 / 252.0 - f * (1.0 / 240.0 - f * (1.0 / 132.0 - f * (691.0 / 32760.0 - f / 12.0))))));
    acc + x.ln() - 0.5 / x - series
}

/// Dirichlet variational parameters on the topics, `K × W`, all positive.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalTopics {
    lambda: Matrix,
}

impl VariationalTopics {
    pub fn new(lambda: Matrix) -> Result<Self> {
        if lambda.as_slice().iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::invalid("lambda entries must be positive and finite"));
        }
        Ok(Self { lambda })
    }

    /// `scale · Gamma(100, 1/100)` noise, i.e. entries near `scale`.
    pub fn random(topics: usize, vocab_size: usize, scale: f64, seed: u64) -> Result<Self> {
        if topics == 0 {
            return Err(Error::invalid("K must be ≥ 1"));
        }
        if !(scale > 0.0) {
            return Err(Error::invalid("lambda init scale must be positive"));
        }
        let gamma = Gamma::new(100.0, 0.01).expect("valid gamma parameters");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..topics * vocab_size).map(|_| scale * rng.sample(gamma)).collect();
        Self::new(Matrix::from_vec(topics, vocab_size, data))
    }

    pub fn lambda(&self) -> &Matrix {
        &self.lambda
    }

    pub fn num_topics(&self) -> usize {
        self.lambda.rows()
    }

    pub fn vocab_size(&self) -> usize {
        self.lambda.cols()
    }

    /// Posterior mean topics `λ_kw / Σ_w λ_kw`.
    pub fn expected_topics(&self) -> Matrix {
        let mut phi = self.lambda.clone();
        for r in 0..phi.rows() {
            let row = phi.row_mut(r);
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
        }
        phi
    }

    /// Packs λ into the shared statistics container: `n_phi = λᵀ`,
    /// `n_z` its column sums, no document statistics.
    pub fn to_stats(&self) -> ModelStats {
        let n_phi = self.lambda.transpose();
        let n_z = n_phi.column_sums();
        ModelStats { n_phi, n_z, n_theta: Matrix::zeros(0, self.num_topics()) }
    }

    pub fn from_stats(stats: &ModelStats) -> Result<Self> {
        Self::new(stats.n_phi.transpose())
    }

    /// `exp(ψ(λ_kw) − ψ(Σ_w λ_kw))`, stored word-major.
    pub fn exp_elog_beta(&self) -> ExpElogBeta {
        let (k, w) = (self.num_topics(), self.vocab_size());
        let mut t = Matrix::zeros(w, k);
        for kk in 0..k {
            let row = self.lambda.row(kk);
            let total = psi(row.iter().sum());
            for (ww, &l) in row.iter().enumerate() {
                t.set(ww, kk, (psi(l) - total).exp());
            }
        }
        ExpElogBeta(t)
    }
}

/// Word-major `exp(E[log φ_kw])`.
#[derive(Debug, Clone)]
pub struct ExpElogBeta(Matrix);

impl ExpElogBeta {
    pub fn word(&self, w: usize) -> &[f64] {
        self.0.row(w)
    }
}

/// Result of the per-document fixed-point iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalStep {
    /// Variational Dirichlet parameters of the document's θ.
    pub doc_gamma: Vec<f64>,
    /// `entries × K` responsibilities, one simplex row per distinct word.
    pub responsibilities: Vec<f64>,
    pub iterations: usize,
}

/// Local iteration parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalParams {
    /// Sweeps always performed before convergence is tested.
    pub min_iters: usize,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for LocalParams {
    fn default() -> Self {
        Self { min_iters: 1, max_iters: 100, tol: 1e-5 }
    }
}

const PHINORM_FLOOR: f64 = 1e-100;

fn exp_elog_theta(gamma: &[f64], out: &mut [f64]) {
    let total = psi(gamma.iter().sum());
    for (o, &g) in out.iter_mut().zip(gamma) {
        *o = (psi(g) - total).exp();
    }
}

fn phinorm(doc: &Document, ebeta: &ExpElogBeta, etheta: &[f64], out: &mut [f64]) {
    for (p, e) in out.iter_mut().zip(doc.entries()) {
        *p = ebeta.word(e.word).iter().zip(etheta).map(|(b, t)| b * t).sum::<f64>() + PHINORM_FLOOR;
    }
}

/// Local step against precomputed `exp(E[log φ])`.
pub fn local_step_with(doc: &Document, ebeta: &ExpElogBeta, alpha: f64, params: LocalParams) -> LocalStep {
    let k = ebeta.0.cols();
    let n = doc.entries().len();
    let mut gamma = vec![alpha + doc.len() as f64 / k as f64; k];
    let mut etheta = vec![0.0; k];
    let mut norm = vec![0.0; n];
    let mut next = vec![0.0; k];
    exp_elog_theta(&gamma, &mut etheta);
    phinorm(doc, ebeta, &etheta, &mut norm);
    let mut iterations = 0;
    while iterations < params.max_iters.max(1) {
        iterations += 1;
        next.iter_mut().for_each(|v| *v = 0.0);
        for (e, p) in doc.entries().iter().zip(&norm) {
            let c = f64::from(e.count) / p;
            for (acc, b) in next.iter_mut().zip(ebeta.word(e.word)) {
                *acc += c * b;
            }
        }
        let mut change = 0.0;
        for ((g, s), t) in gamma.iter_mut().zip(&next).zip(&etheta) {
            let updated = alpha + t * s;
            change += (updated - *g).abs();
            *g = updated;
        }
        exp_elog_theta(&gamma, &mut etheta);
        phinorm(doc, ebeta, &etheta, &mut norm);
        if iterations >= params.min_iters && change / (k as f64) < params.tol {
            break;
        }
    }
    let mut responsibilities = vec![0.0; n * k];
    for (t, (e, p)) in doc.entries().iter().zip(&norm).enumerate() {
        let row = &mut responsibilities[t * k..(t + 1) * k];
        let mut s = 0.0;
        for ((r, b), th) in row.iter_mut().zip(ebeta.word(e.word)).zip(&etheta) {
            *r = b * th / p;
            s += *r;
        }
        row.iter_mut().for_each(|r| *r /= s);
    }
    LocalStep { doc_gamma: gamma, responsibilities, iterations }
}

/// Fixed-point iteration of the standard VB document updates.
pub fn svb_local_step(doc: &Document, lambda: &VariationalTopics, hyper: &HyperParams, max_iters: usize, tol: f64) -> LocalStep {
    local_step_with(doc, &lambda.exp_elog_beta(), hyper.alpha(), LocalParams { min_iters: 1, max_iters, tol })
}

/// `λ := (1 − ρ)λ + ρλ̂`.
pub fn svb_global_update(lambda: &mut VariationalTopics, lambda_hat: &Matrix, rho: f64) -> Result<()> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::invalid(format!("step size {rho} outside (0, 1]")));
    }
    if lambda_hat.rows() != lambda.lambda.rows() || lambda_hat.cols() != lambda.lambda.cols() {
        return Err(Error::invalid("lambda_hat shape mismatch"));
    }
    for (l, h) in lambda.lambda.as_mut_slice().iter_mut().zip(lambda_hat.as_slice()) {
        *l = (1.0 - rho) * *l + rho * h;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvbConfig {
    pub topics: usize,
    pub hyper: HyperParams,
    /// Added to α and every η before training.
    pub offset: f64,
    pub phi_schedule: StepSchedule,
    pub minibatch_docs: usize,
    /// Local sweeps run before convergence is checked, beyond the first.
    pub burn_in_passes: usize,
    pub local_max_iters: usize,
    pub local_tol: f64,
    pub init_scale: f64,
    pub epochs: usize,
    pub seed: u64,
    #[serde(default)]
    pub max_seconds: Option<f64>,
}

impl SvbConfig {
    pub fn new(topics: usize, hyper: HyperParams) -> Self {
        Self {
            topics,
            hyper,
            offset: 0.0,
            phi_schedule: StepSchedule::topics_default(),
            minibatch_docs: 100,
            burn_in_passes: 1,
            local_max_iters: 100,
            local_tol: 1e-5,
            init_scale: 1.0,
            epochs: 1,
            seed: 0,
            max_seconds: None,
        }
    }

    /// Hyperparameters actually used: both shifted by `offset`.
    pub fn effective_hyper(&self) -> Result<HyperParams> {
        self.hyper.shifted(self.offset)
    }

    pub fn validate(&self) -> Result<()> {
        if self.topics == 0 {
            return Err(Error::invalid("K must be ≥ 1"));
        }
        if self.minibatch_docs == 0 {
            return Err(Error::invalid("minibatch size must be ≥ 1"));
        }
        if !(self.offset >= 0.0) {
            return Err(Error::invalid("offset must be ≥ 0"));
        }
        if self.local_max_iters == 0 || !(self.local_tol > 0.0) {
            return Err(Error::invalid("local iteration cap and tolerance must be positive"));
        }
        if let Err(v) = validate_schedule(&self.phi_schedule) {
            let msg: Vec<String> = v.iter().map(ToString::to_string).collect();
            return Err(Error::invalid(format!("topic schedule: {}", msg.join("; "))));
        }
        self.effective_hyper().map(|_| ())
    }

    fn local_params(&self) -> LocalParams {
        LocalParams { min_iters: self.burn_in_passes + 1, max_iters: self.local_max_iters.max(self.burn_in_passes + 1), tol: self.local_tol }
    }
}

#[derive(Debug, Clone)]
pub struct SvbOutput {
    pub topics: VariationalTopics,
    pub progress: Progress,
}

pub struct SvbTrainer<'a> {
    corpus: &'a Corpus,
    config: SvbConfig,
    hyper: HyperParams,
    lambda: VariationalTopics,
    ebeta: ExpElogBeta,
    acc: MinibatchAccumulator,
    rng: ChaCha8Rng,
    minibatches: u64,
    docs_seen: u64,
    tokens_seen: u64,
    docs_in_batch: usize,
    last_rho: f64,
}

impl<'a> SvbTrainer<'a> {
    pub fn new(corpus: &'a Corpus, config: SvbConfig) -> Result<Self> {
        config.validate()?;
        let lambda = VariationalTopics::random(config.topics, corpus.vocab_size(), config.init_scale, config.seed)?;
        Self::from_topics(corpus, config, lambda)
    }

    pub fn from_topics(corpus: &'a Corpus, config: SvbConfig, lambda: VariationalTopics) -> Result<Self> {
        config.validate()?;
        let hyper = config.effective_hyper()?;
        if hyper.vocab_size() != corpus.vocab_size() || lambda.vocab_size() != corpus.vocab_size() {
            return Err(Error::invalid("vocabulary size mismatch"));
        }
        if lambda.num_topics() != config.topics {
            return Err(Error::invalid("lambda has the wrong number of topics"));
        }
        Ok(Self {
            corpus,
            acc: MinibatchAccumulator::new(corpus.vocab_size(), config.topics),
            ebeta: lambda.exp_elog_beta(),
            rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_5eed_5eed_5eed),
            hyper,
            lambda,
            config,
            minibatches: 0,
            docs_seen: 0,
            tokens_seen: 0,
            docs_in_batch: 0,
            last_rho: 0.0,
        })
    }

    pub fn topics(&self) -> &VariationalTopics {
        &self.lambda
    }

    pub fn train_document(&mut self, doc: usize) {
        let d = self.corpus.doc(doc);
        let k = self.config.topics;
        let step = local_step_with(d, &self.ebeta, self.hyper.alpha(), self.config.local_params());
        for (t, e) in d.entries().iter().enumerate() {
            self.acc.accumulate(e.word, &step.responsibilities[t * k..(t + 1) * k], 1.0, e.count);
        }
        self.docs_seen += 1;
        self.tokens_seen += d.len() as u64;
        self.docs_in_batch += 1;
    }

    /// Natural-gradient step from the pending minibatch, if any.
    pub fn finish_minibatch(&mut self) -> Result<bool> {
        let batch = std::mem::take(&mut self.docs_in_batch);
        if batch == 0 {
            return Ok(false);
        }
        self.minibatches += 1;
        let r = rho(&self.config.phi_schedule, self.minibatches);
        self.last_rho = r;
        let scale = self.corpus.num_docs() as f64 / batch as f64;
        let k = self.config.topics;
        let mut hat = Matrix::zeros(k, self.corpus.vocab_size());
        for w in 0..self.corpus.vocab_size() {
            let eta = self.hyper.eta(w);
            let row = self.acc.row(w);
            for kk in 0..k {
                hat.set(kk, w, eta + row.map_or(0.0, |r| scale * r[kk]));
            }
        }
        self.acc.reset();
        svb_global_update(&mut self.lambda, &hat, r)?;
        self.ebeta = self.lambda.exp_elog_beta();
        Ok(true)
    }

    fn progress(&self, clock: &Stopwatch) -> Progress {
        Progress {
            wall_clock_s: clock.seconds(),
            docs_seen: self.docs_seen,
            tokens_seen: self.tokens_seen,
            minibatches: self.minibatches,
            heldout_ll_per_token: None,
            rho_phi: self.last_rho,
            rho_theta: 0.0,
        }
    }

    fn emit<F: FnMut(Checkpoint<VariationalTopics>)>(&self, clock: &mut Stopwatch, on_checkpoint: &mut F) {
        clock.pause();
        on_checkpoint(Checkpoint { progress: self.progress(clock), state: self.lambda.clone() });
        clock.resume();
    }

    pub fn run<F: FnMut(Checkpoint<VariationalTopics>)>(&mut self, policy: CheckpointPolicy, mut on_checkpoint: F) -> Result<Progress> {
        let mut clock = Stopwatch::started();
        let mut cadence = Cadence::new(policy);
        self.emit(&mut clock, &mut on_checkpoint);
        let mut docs: Vec<usize> = (0..self.corpus.num_docs()).collect();
        let limit = self.config.max_seconds;
        'epochs: for _ in 0..self.config.epochs {
            docs.shuffle(&mut self.rng);
            for &j in &docs {
                self.train_document(j);
                if self.docs_in_batch == self.config.minibatch_docs {
                    self.finish_minibatch()?;
                }
                if cadence.due(clock.seconds(), self.minibatches) {
                    self.emit(&mut clock, &mut on_checkpoint);
                }
                if limit.is_some_and(|l| clock.seconds() >= l) {
                    break 'epochs;
                }
            }
            self.finish_minibatch()?;
        }
        self.finish_minibatch()?;
        clock.pause();
        let last = self.progress(&clock);
        on_checkpoint(Checkpoint { progress: last.clone(), state: self.lambda.clone() });
        Ok(last)
    }
}

pub fn svb_train<F: FnMut(Checkpoint<VariationalTopics>)>(corpus: &Corpus, config: &SvbConfig, policy: CheckpointPolicy, on_checkpoint: F) -> Result<SvbOutput> {
    let mut trainer = SvbTrainer::new(corpus, config.clone())?;
    let progress = trainer.run(policy, on_checkpoint)?;
    Ok(SvbOutput { topics: trainer.lambda, progress })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{clump, synth_corpus, SynthParams};
    use approx::assert_abs_diff_eq;

    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

    #[test]
    fn digamma_closed_forms() {
        assert_abs_diff_eq!(digamma(1.0).unwrap(), -EULER_GAMMA, epsilon = 1e-12);
        assert_abs_diff_eq!(digamma(0.5).unwrap(), -EULER_GAMMA - 2.0 * std::f64::consts::LN_2, epsilon = 1e-12);
        // ψ(n) = H_{n-1} − γ
        let h: f64 = (1..10).map(|i| 1.0 / f64::from(i)).sum();
        assert_abs_diff_eq!(digamma(10.0).unwrap(), h - EULER_GAMMA, epsilon = 1e-12);
        assert!(digamma(0.0).is_err() && digamma(-1.0).is_err());
    }

    #[test]
    fn digamma_recurrence() {
        for &x in &[1e-3, 0.1, 0.7, 2.5, 5.9, 6.0, 17.3, 1e4] {
            assert_abs_diff_eq!(digamma(x + 1.0).unwrap(), digamma(x).unwrap() + 1.0 / x, epsilon = 1e-12 * (1.0 / x).max(1.0));
        }
    }

    #[test]
    fn global_update_examples() {
        let mut l = VariationalTopics::new(Matrix::from_vec(1, 1, vec![100.0])).unwrap();
        svb_global_update(&mut l, &Matrix::from_vec(1, 1, vec![200.0]), 0.1).unwrap();
        assert_abs_diff_eq!(l.lambda().get(0, 0), 110.0, epsilon = 1e-12);
        let hat = Matrix::from_vec(1, 1, vec![3.0]);
        svb_global_update(&mut l, &hat, 1.0).unwrap();
        assert_eq!(l.lambda().get(0, 0), 3.0);
        assert!(svb_global_update(&mut l, &hat, 0.0).is_err());
    }

    #[test]
    fn single_topic_local_step() {
        let d = clump(&[0, 1, 1, 2]).unwrap();
        let l = VariationalTopics::random(1, 3, 1.0, 0).unwrap();
        let h = HyperParams::symmetric(0.3, 0.1, 3).unwrap();
        let s = svb_local_step(&d, &l, &h, 100, 1e-5);
        assert!(s.responsibilities.iter().all(|&r| r == 1.0));
        assert_abs_diff_eq!(s.doc_gamma[0], 0.3 + 4.0, epsilon = 1e-9);
    }

    #[test]
    fn symmetric_lambda_gives_uniform_responsibilities() {
        let d = clump(&[0, 1, 1, 2, 3]).unwrap();
        let l = VariationalTopics::new(Matrix::from_vec(3, 4, vec![2.0; 12])).unwrap();
        let h = HyperParams::symmetric(0.1, 0.1, 4).unwrap();
        let s = svb_local_step(&d, &l, &h, 100, 1e-5);
        for r in &s.responsibilities {
            assert_abs_diff_eq!(*r, 1.0 / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn doc_gamma_conserves_mass() {
        let sc = synth_corpus(&SynthParams { topics: 4, vocab_size: 30, docs: 20, mean_len: 40, seed: 4, ..Default::default() }).unwrap();
        let l = VariationalTopics::random(4, 30, 1.0, 9).unwrap();
        let h = HyperParams::symmetric(0.2, 0.1, 30).unwrap();
        for d in sc.corpus.docs() {
            let s = svb_local_step(d, &l, &h, 100, 1e-5);
            assert!(s.doc_gamma.iter().all(|&g| g >= 0.2));
            assert_abs_diff_eq!(s.doc_gamma.iter().sum::<f64>(), 0.2 * 4.0 + d.len() as f64, epsilon = 1e-9);
            for row in s.responsibilities.chunks(4) {
                assert_abs_diff_eq!(row.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn offset_shifts_both_priors() {
        let mut c = SvbConfig::new(3, HyperParams::symmetric(0.1, 0.01, 5).unwrap());
        c.offset = 0.5;
        let h = c.effective_hyper().unwrap();
        assert_abs_diff_eq!(h.alpha(), 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(h.eta(0), 0.51, epsilon = 1e-15);
    }

    #[test]
    fn zero_epochs_returns_initial_lambda() {
        let sc = synth_corpus(&SynthParams { topics: 2, vocab_size: 10, docs: 10, mean_len: 10, seed: 1, ..Default::default() }).unwrap();
        let mut cfg = SvbConfig::new(2, HyperParams::symmetric(0.1, 0.01, 10).unwrap());
        cfg.epochs = 0;
        cfg.seed = 3;
        let out = svb_train(&sc.corpus, &cfg, CheckpointPolicy::default(), |_| {}).unwrap();
        assert_eq!(out.topics, VariationalTopics::random(2, 10, 1.0, 3).unwrap());
    }

    #[test]
    fn lambda_stays_positive_and_bounded_by_mixture() {
        let sc = synth_corpus(&SynthParams { topics: 3, vocab_size: 20, docs: 60, mean_len: 20, seed: 2, ..Default::default() }).unwrap();
        let mut cfg = SvbConfig::new(3, HyperParams::symmetric(0.1, 0.01, 20).unwrap());
        cfg.minibatch_docs = 7;
        cfg.epochs = 3;
        let out = svb_train(&sc.corpus, &cfg, CheckpointPolicy::default(), |_| {}).unwrap();
        assert!(out.topics.lambda().as_slice().iter().all(|&v| v > 0.0));
        assert_eq!(out.progress.minibatches, 3 * 9);
        let stats = out.topics.to_stats();
        assert_eq!(VariationalTopics::from_stats(&stats).unwrap(), out.topics);
        for row in out.topics.expected_topics().iter_rows() {
            assert_abs_diff_eq!(row.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
    }
}
