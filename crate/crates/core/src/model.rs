//! Statistics state, hyperparameters and parameter recovery shared by every
//! trainer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Dirichlet hyperparameters: a symmetric document-topic prior `alpha` and
/// a (possibly asymmetric) word-topic prior `eta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    alpha: f64,
    eta: Vec<f64>,
    eta_sum: f64,
}

impl HyperParams {
    pub fn symmetric(alpha: f64, eta: f64, vocab_size: usize) -> Result<Self> {
        Self::new(alpha, vec![eta; vocab_size])
    }

    pub fn new(alpha: f64, eta: Vec<f64>) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
        }
        if eta.is_empty() {
            return Err(Error::invalid("eta must have one entry per word"));
        }
        if let Some(bad) = eta.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
            return Err(Error::invalid(format!("eta entries must be positive, got {bad}")));
        }
        let eta_sum = eta.iter().sum();
        Ok(Self { alpha, eta, eta_sum })
    }

    #[inline]
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    #[inline]
    pub fn eta(&self, w: usize) -> f64 {
        self.eta[w]
    }

    pub fn eta_vec(&self) -> &[f64] {
        &self.eta
    }

    #[inline]
    pub fn eta_sum(&self) -> f64 {
        self.eta_sum
    }

    pub fn vocab_size(&self) -> usize {
        self.eta.len()
    }

    /// The common value of `eta` when the prior is symmetric.
    pub fn symmetric_eta(&self) -> Option<f64> {
        let first = self.eta[0];
        self.eta.iter().all(|&e| e == first).then_some(first)
    }

    /// Adds `delta` to alpha and to every eta entry.
    pub fn shifted(&self, delta: f64) -> Result<Self> {
        Self::new(self.alpha + delta, self.eta.iter().map(|e| e + delta).collect())
    }
}

/// Expected-count statistics: `n_phi` (W × K, word-major), `n_z` (K) and
/// `n_theta` (D × K).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelStats {
    pub n_phi: Matrix,
    pub n_z: Vec<f64>,
    pub n_theta: Matrix,
}

impl ModelStats {
    pub fn zeros(vocab_size: usize, topics: usize, docs: usize) -> Self {
        Self {
            n_phi: Matrix::zeros(vocab_size, topics),
            n_z: vec![0.0; topics],
            n_theta: Matrix::zeros(docs, topics),
        }
    }

    pub fn num_topics(&self) -> usize {
        self.n_z.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.n_phi.rows()
    }

    pub fn num_docs(&self) -> usize {
        self.n_theta.rows()
    }

    /// Largest |n_z_k − Σ_w n_phi_wk| / max(1, n_z_k).
    pub fn column_inconsistency(&self) -> f64 {
        self.n_phi
            .column_sums()
            .iter()
            .zip(&self.n_z)
            .map(|(s, z)| (s - z).abs() / z.abs().max(1.0))
            .fold(0.0, f64::max)
    }

    /// Largest |Σ_k n_theta_jk − C_j| / C_j.
    pub fn doc_mass_error(&self, doc_lengths: &[usize]) -> f64 {
        self.n_theta
            .iter_rows()
            .zip(doc_lengths)
            .map(|(row, &c)| (row.iter().sum::<f64>() - c as f64).abs() / (c as f64))
            .fold(0.0, f64::max)
    }

    /// Checks every documented invariant of the statistics.
    pub fn check_invariants(&self, doc_lengths: &[usize], tol: f64) -> Result<()> {
        let negative = |m: &[f64]| m.iter().any(|&v| v < -tol);
        if negative(self.n_phi.as_slice()) || negative(&self.n_z) || negative(self.n_theta.as_slice()) {
            return Err(Error::Numeric("negative expected count".into()));
        }
        let col = self.column_inconsistency();
        if col > tol {
            return Err(Error::Numeric(format!("n_z disagrees with column sums of n_phi by {col:e}")));
        }
        let mass = self.doc_mass_error(doc_lengths);
        if mass > tol {
            return Err(Error::Numeric(format!("document mass off by {mass:e} (relative)")));
        }
        let total: usize = doc_lengths.iter().sum();
        let z: f64 = self.n_z.iter().sum();
        if z > total as f64 + tol.max(1e-6) {
            return Err(Error::Numeric(format!("Σ n_z = {z} exceeds C = {total}")));
        }
        Ok(())
    }
}

/// A per-token distribution over topics.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibility(Vec<f64>);

impl Responsibility {
    pub fn uniform(topics: usize) -> Self {
        Self(vec![1.0 / topics as f64; topics])
    }

    pub fn unit(topics: usize, k: usize) -> Self {
        let mut v = vec![0.0; topics];
        v[k] = 1.0;
        Self(v)
    }

    /// Wraps `v` after checking it is a simplex vector within `1e-12`.
    pub fn from_vec(v: Vec<f64>) -> Result<Self> {
        let r = Self(v);
        if !r.is_simplex(1e-12) {
            return Err(Error::Numeric(format!("not a simplex vector: {:?}", r.0)));
        }
        Ok(r)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_simplex(&self, tol: f64) -> bool {
        self.0.iter().all(|&g| g >= 0.0) && (self.0.iter().sum::<f64>() - 1.0).abs() <= tol
    }
}

/// The CVB0 / MAP responsibility kernel shared by every collapsed update:
///
/// `out_k ∝ (word_count_k + word_prior) / (topic_count_k + prior_sum) · (doc_count_k + doc_prior)`
///
/// A factor whose numerator is zero contributes zero even if its denominator
/// is zero too. Returns the normalizer; a zero or non-finite normalizer is
/// left for the caller to handle.
#[inline]
pub(crate) fn responsibility_kernel(
    out: &mut [f64],
    word_counts: &[f64],
    topic_counts: &[f64],
    doc_counts: &[f64],
    word_prior: f64,
    prior_sum: f64,
    doc_prior: f64,
) -> f64 {
    let mut total = 0.0;
    for k in 0..out.len() {
        let num = (word_counts[k] + word_prior) * (doc_counts[k] + doc_prior);
        let v = if num == 0.0 { 0.0 } else { num / (topic_counts[k] + prior_sum) };
        out[k] = v;
        total += v;
    }
    total
}

#[inline]
pub(crate) fn normalize_in_place(out: &mut [f64], total: f64) -> Result<()> {
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::Numeric(format!("responsibility normalizer is {total}")));
    }
    out.iter_mut().for_each(|g| *g /= total);
    Ok(())
}

/// Point estimates: `phi` is K × W (rows are topics), `theta` D × K.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicModel {
    pub phi: Matrix,
    pub theta: Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RecoveryMode {
    /// Posterior-mean estimate of the variational reading.
    VariationalMean,
    /// MAP estimate of the EM reading; needs alpha, eta ≥ 1.
    Map,
}

/// Sparse accumulator for the per-minibatch topic estimates N̂^Φ and N̂^Z.
/// Only rows of words seen in the current minibatch are materialized.
#[derive(Debug, Clone)]
pub struct MinibatchAccumulator {
    topics: usize,
    slot_of: Vec<u32>,
    words: Vec<usize>,
    rows: Vec<f64>,
    n_hat_z: Vec<f64>,
    token_count: usize,
}

const NO_SLOT: u32 = u32::MAX;

impl MinibatchAccumulator {
    pub fn new(vocab_size: usize, topics: usize) -> Self {
        Self {
            topics,
            slot_of: vec![NO_SLOT; vocab_size],
            words: Vec::new(),
            rows: Vec::new(),
            n_hat_z: vec![0.0; topics],
            token_count: 0,
        }
    }

    /// Adds `scale · multiplicity · gamma` to row `word` and to N̂^Z, and
    /// counts `multiplicity` token updates.
    #[inline]
    pub fn accumulate(&mut self, word: usize, gamma: &[f64], scale: f64, multiplicity: u32) {
        let k = self.topics;
        let slot = match self.slot_of[word] {
            NO_SLOT => {
                let s = self.words.len();
                self.slot_of[word] = s as u32;
                self.words.push(word);
                self.rows.resize(self.rows.len() + k, 0.0);
                s
            }
            s => s as usize,
        };
        let weight = scale * f64::from(multiplicity);
        let row = &mut self.rows[slot * k..(slot + 1) * k];
        for ((r, z), g) in row.iter_mut().zip(self.n_hat_z.iter_mut()).zip(gamma) {
            let v = weight * g;
            *r += v;
            *z += v;
        }
        self.token_count += multiplicity as usize;
    }

    /// One token update: row `word` and N̂^Z each receive `corpus_tokens · gamma`.
    pub fn accumulate_token(&mut self, word: usize, gamma: &[f64], corpus_tokens: f64) {
        self.accumulate(word, gamma, corpus_tokens, 1);
    }

    pub fn token_count(&self) -> usize {
        self.token_count
    }

    pub fn is_empty(&self) -> bool {
        self.token_count == 0
    }

    pub fn n_hat_z(&self) -> &[f64] {
        &self.n_hat_z
    }

    /// Accumulated row for `word`, if the word was seen.
    pub fn row(&self, word: usize) -> Option<&[f64]> {
        match self.slot_of[word] {
            NO_SLOT => None,
            s => Some(&self.rows[s as usize * self.topics..(s as usize + 1) * self.topics]),
        }
    }

    /// Touched words and their accumulated rows, in first-touch order.
    pub fn touched(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.words.iter().copied().zip(self.rows.chunks(self.topics))
    }

    pub fn reset(&mut self) {
        for &w in &self.words {
            self.slot_of[w] = NO_SLOT;
        }
        self.words.clear();
        self.rows.clear();
        self.n_hat_z.iter_mut().for_each(|z| *z = 0.0);
        self.token_count = 0;
    }
}

/// Random hard assignment of every token to a topic, returned as integer
/// counts. Also reports the per-entry topic fractions so batch algorithms
/// can start from responsibilities consistent with the counts.
pub(crate) fn init_assignments(corpus: &Corpus, topics: usize, seed: u64) -> (ModelStats, Vec<Vec<Vec<f64>>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = ModelStats::zeros(corpus.vocab_size(), topics, corpus.num_docs());
    let mut fractions = Vec::with_capacity(corpus.num_docs());
    let mut counts = vec![0u32; topics];
    for (j, doc) in corpus.docs().iter().enumerate() {
        let mut doc_fracs = Vec::with_capacity(doc.entries().len());
        for e in doc.entries() {
            counts.iter_mut().for_each(|c| *c = 0);
            for _ in 0..e.count {
                counts[rng.random_range(0..topics)] += 1;
            }
            let phi_row = stats.n_phi.row_mut(e.word);
            for (k, &c) in counts.iter().enumerate() {
                phi_row[k] += f64::from(c);
            }
            let theta_row = stats.n_theta.row_mut(j);
            for (k, &c) in counts.iter().enumerate() {
                theta_row[k] += f64::from(c);
                stats.n_z[k] += f64::from(c);
            }
            let m = f64::from(e.count);
            doc_fracs.push(counts.iter().map(|&c| f64::from(c) / m).collect());
        }
        fractions.push(doc_fracs);
    }
    (stats, fractions)
}

/// Initializes statistics by assigning every token to a uniformly drawn topic.
pub fn init_stats(corpus: &Corpus, topics: usize, seed: u64) -> Result<ModelStats> {
    if topics == 0 {
        return Err(Error::invalid("K must be ≥ 1"));
    }
    Ok(init_assignments(corpus, topics, seed).0)
}

fn check_dims(stats: &ModelStats, hyper: &HyperParams) -> Result<()> {
    if stats.vocab_size() != hyper.vocab_size() {
        return Err(Error::invalid(format!(
            "statistics cover {} words but eta has {} entries",
            stats.vocab_size(),
            hyper.vocab_size()
        )));
    }
    Ok(())
}

fn normalize_rows(m: &mut Matrix) {
    for r in 0..m.rows() {
        let row = m.row_mut(r);
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= total);
    }
}

/// Recovers topic-word distributions, K × W.
pub fn recover_topics(stats: &ModelStats, hyper: &HyperParams, mode: RecoveryMode) -> Result<Matrix> {
    check_dims(stats, hyper)?;
    let (w_count, k_count) = (stats.vocab_size(), stats.num_topics());
    let mut phi = Matrix::zeros(k_count, w_count);
    match mode {
        RecoveryMode::VariationalMean => {
            for w in 0..w_count {
                let row = stats.n_phi.row(w);
                for (k, (n, z)) in row.iter().zip(&stats.n_z).enumerate() {
                    phi.set(k, w, (n + hyper.eta(w)) / (z + hyper.eta_sum()));
                }
            }
        }
        RecoveryMode::Map => {
            if let Some(bad) = hyper.eta_vec().iter().find(|&&e| e < 1.0) {
                return Err(Error::precondition(format!("MAP recovery needs eta ≥ 1, got {bad}")));
            }
            let shift_sum = hyper.eta_sum() - w_count as f64;
            for w in 0..w_count {
                let row = stats.n_phi.row(w);
                for (k, (n, z)) in row.iter().zip(&stats.n_z).enumerate() {
                    phi.set(k, w, (n + hyper.eta(w) - 1.0) / (z + shift_sum));
                }
            }
        }
    }
    normalize_rows(&mut phi);
    Ok(phi)
}

/// Recovers per-document topic proportions, D × K.
pub fn recover_theta(stats: &ModelStats, hyper: &HyperParams, doc_lengths: &[usize], mode: RecoveryMode) -> Result<Matrix> {
    if doc_lengths.len() != stats.num_docs() {
        return Err(Error::invalid("doc_lengths does not match the statistics"));
    }
    let k_count = stats.num_topics() as f64;
    let alpha = hyper.alpha();
    let mut theta = stats.n_theta.clone();
    match mode {
        RecoveryMode::VariationalMean => {
            for (j, &c) in doc_lengths.iter().enumerate() {
                let denom = c as f64 + k_count * alpha;
                theta.row_mut(j).iter_mut().for_each(|t| *t = (*t + alpha) / denom);
            }
        }
        RecoveryMode::Map => {
            if alpha < 1.0 {
                return Err(Error::precondition(format!("MAP recovery needs alpha ≥ 1, got {alpha}")));
            }
            for (j, &c) in doc_lengths.iter().enumerate() {
                let denom = c as f64 + k_count * alpha - k_count;
                theta.row_mut(j).iter_mut().for_each(|t| *t = (*t + alpha - 1.0) / denom);
            }
        }
    }
    normalize_rows(&mut theta);
    Ok(theta)
}

pub fn recover(stats: &ModelStats, hyper: &HyperParams, doc_lengths: &[usize], mode: RecoveryMode) -> Result<TopicModel> {
    Ok(TopicModel {
        phi: recover_topics(stats, hyper, mode)?,
        theta: recover_theta(stats, hyper, doc_lengths, mode)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synth_corpus, SynthParams};
    use approx::assert_relative_eq;

    fn corpus() -> Corpus {
        synth_corpus(&SynthParams { docs: 30, mean_len: 20, vocab_size: 15, ..Default::default() })
            .unwrap()
            .corpus
    }

    #[test]
    fn single_topic_init_forces_counts() {
        let c = corpus();
        let s = init_stats(&c, 1, 4).unwrap();
        for (w, f) in c.word_frequencies().iter().enumerate() {
            assert_eq!(s.n_phi.get(w, 0), *f as f64);
        }
        for (j, len) in c.doc_lengths().iter().enumerate() {
            assert_eq!(s.n_theta.get(j, 0), *len as f64);
        }
        assert_eq!(s.n_z[0], c.num_tokens() as f64);
    }

    #[test]
    fn init_is_exact_and_deterministic() {
        let c = corpus();
        let s = init_stats(&c, 4, 11).unwrap();
        assert_eq!(s.n_z.iter().sum::<f64>(), c.num_tokens() as f64);
        s.check_invariants(&c.doc_lengths(), 0.0).unwrap();
        assert_eq!(s, init_stats(&c, 4, 11).unwrap());
        assert!(init_stats(&c, 0, 11).is_err());
    }

    fn stats_with(n_phi: Vec<f64>, w: usize, k: usize, n_theta: Vec<f64>, d: usize) -> ModelStats {
        let n_phi = Matrix::from_vec(w, k, n_phi);
        let n_z = n_phi.column_sums();
        ModelStats { n_phi, n_z, n_theta: Matrix::from_vec(d, k, n_theta) }
    }

    #[test]
    fn map_recovery_with_unit_prior_is_normalization() {
        let s = stats_with(vec![3.0, 1.0, 1.0, 2.0], 2, 2, vec![3.0, 1.0], 1);
        let h = HyperParams::symmetric(1.0, 1.0, 2).unwrap();
        let phi = recover_topics(&s, &h, RecoveryMode::Map).unwrap();
        assert_relative_eq!(phi.get(0, 0), 3.0 / 4.0, epsilon = 1e-15);
        assert_relative_eq!(phi.get(1, 1), 2.0 / 3.0, epsilon = 1e-15);
        let theta = recover_theta(&s, &h, &[4], RecoveryMode::Map).unwrap();
        assert_relative_eq!(theta.get(0, 0), 0.75, epsilon = 1e-15);
    }

    #[test]
    fn variational_mean_examples() {
        let h = HyperParams::symmetric(0.1, 1.0, 2).unwrap();
        let s = stats_with(vec![3.0, 0.0, 1.0, 0.0], 2, 2, vec![3.0, 1.0], 1);
        let phi = recover_topics(&s, &h, RecoveryMode::VariationalMean).unwrap();
        assert_relative_eq!(phi.get(0, 0), 4.0 / 6.0, epsilon = 1e-15);
        assert_relative_eq!(phi.get(0, 1), 2.0 / 6.0, epsilon = 1e-15);
        // all-zero topic 1 is uniform
        assert_relative_eq!(phi.get(1, 0), 0.5, epsilon = 1e-15);
        let theta = recover_theta(&s, &h, &[4], RecoveryMode::VariationalMean).unwrap();
        assert_relative_eq!(theta.get(0, 0), 3.1 / 4.2, epsilon = 1e-15);
        assert_relative_eq!(theta.get(0, 1), 1.1 / 4.2, epsilon = 1e-15);
    }

    #[test]
    fn map_recovery_guards_small_priors() {
        let s = stats_with(vec![1.0, 1.0], 2, 1, vec![2.0], 1);
        let h = HyperParams::symmetric(0.5, 0.5, 2).unwrap();
        assert!(matches!(recover_topics(&s, &h, RecoveryMode::Map), Err(Error::Precondition(_))));
        assert!(matches!(recover_theta(&s, &h, &[2], RecoveryMode::Map), Err(Error::Precondition(_))));
    }

    #[test]
    fn accumulator_examples() {
        let mut acc = MinibatchAccumulator::new(5, 2);
        acc.accumulate_token(3, &[1.0, 0.0], 10.0);
        assert_eq!(acc.row(3).unwrap(), &[10.0, 0.0]);
        assert_eq!(acc.n_hat_z(), &[10.0, 0.0]);
        assert_eq!(acc.token_count(), 1);
        acc.accumulate_token(3, &[0.0, 1.0], 10.0);
        assert_eq!(acc.row(3).unwrap(), &[10.0, 10.0]);
        acc.reset();
        assert!(acc.is_empty() && acc.row(3).is_none() && acc.n_hat_z() == [0.0, 0.0]);
    }

    #[test]
    fn hyper_validation() {
        assert!(HyperParams::symmetric(0.0, 1.0, 3).is_err());
        assert!(HyperParams::new(1.0, vec![1.0, -1.0]).is_err());
        let h = HyperParams::new(0.1, vec![0.5, 1.5]).unwrap();
        assert_eq!(h.eta_sum(), 2.0);
        assert_eq!(h.symmetric_eta(), None);
    }
}
