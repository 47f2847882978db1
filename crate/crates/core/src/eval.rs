//! Held-out evaluation by document completion, plus topic matching against
//! a known generating model.

use serde::{Deserialize, Serialize};

use crate::corpus::{document_half_split, Corpus, Document, Vocabulary};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scvb0::{clumped_doc_update, rho, StepSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Cap on local passes over the observed half.
    pub local_passes_max: usize,
    /// Stop once the mean absolute change of θ over a pass drops below this.
    pub local_tol: f64,
    /// Seeds the per-document halving.
    pub seed: u64,
    /// Step sizes for the local document statistics.
    pub theta_schedule: StepSchedule,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { local_passes_max: 100, local_tol: 1e-6, seed: 0, theta_schedule: StepSchedule::documents_default() }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.local_passes_max == 0 || !(self.local_tol > 0.0) {
            return Err(Error::invalid("local pass cap and tolerance must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HeldOut {
    /// Token-weighted mean log-likelihood of the held-out halves.
    pub ll_per_token: f64,
    pub scored_tokens: usize,
    pub scored_docs: usize,
    /// Test documents with fewer than two tokens.
    pub skipped_docs: usize,
}

/// Evaluation report written next to a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub algorithm: String,
    pub wall_clock_s: f64,
    pub docs_trained: u64,
    pub heldout_ll_per_token: f64,
    pub skipped_docs: usize,
}

fn check_topics(phi: &Matrix, vocab_size: usize) -> Result<()> {
    if phi.rows() == 0 || phi.cols() != vocab_size {
        return Err(Error::invalid(format!("topics have {} columns, test vocabulary has {vocab_size} words", phi.cols())));
    }
    for (k, row) in phi.iter_rows().enumerate() {
        let s: f64 = row.iter().sum();
        if row.iter().any(|&p| !(p >= 0.0)) || (s - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("topic {k} is not a probability vector (sum {s})")));
        }
    }
    Ok(())
}

/// Halving seed for test document `j`.
fn half_seed(seed: u64, j: usize) -> u64 {
    seed ^ (j as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Estimates θ for `observed` against fixed topics (`phi_t` is W × K):
/// responsibilities from the topics and the local counts, document counts
/// moved by the clumped online update, repeated until θ settles.
pub fn infer_theta(observed: &Document, phi_t: &Matrix, alpha: f64, config: &EvalConfig) -> Vec<f64> {
    let k = phi_t.cols();
    let len = observed.len() as f64;
    let denom = len + k as f64 * alpha;
    let mut n_theta = vec![len / k as f64; k];
    let mut theta: Vec<f64> = n_theta.iter().map(|n| (n + alpha) / denom).collect();
    let mut gamma = vec![0.0; k];
    let mut t = 0u64;
    for _ in 0..config.local_passes_max {
        for e in observed.entries() {
            let mut total = 0.0;
            for ((g, p), n) in gamma.iter_mut().zip(phi_t.row(e.word)).zip(&n_theta) {
                *g = p * (n + alpha);
                total += *g;
            }
            if !(total > 0.0) {
                continue;
            }
            gamma.iter_mut().for_each(|g| *g /= total);
            t += 1;
            clumped_doc_update(&mut n_theta, len, &gamma, rho(&config.theta_schedule, t), e.count);
        }
        let mut change = 0.0;
        for (th, n) in theta.iter_mut().zip(&n_theta) {
            let next = (n + alpha) / denom;
            change += (next - *th).abs();
            *th = next;
        }
        if change / (k as f64) < config.local_tol {
            break;
        }
    }
    theta
}

/// Sum of `ln Σ_k θ_k φ_kw` over the tokens of `doc`.
fn completion_loglik(doc: &Document, theta: &[f64], phi_t: &Matrix) -> f64 {
    doc.entries()
        .iter()
        .map(|e| {
            let p: f64 = phi_t.row(e.word).iter().zip(theta).map(|(a, b)| a * b).sum();
            f64::from(e.count) * p.ln()
        })
        .sum()
}

/// Document-completion log-likelihood: each test document is split in half
/// at random, θ is estimated on the first half and the second half is
/// scored. Returns the mean over all scored tokens.
pub fn heldout_loglik(phi: &Matrix, test: &Corpus, alpha: f64, config: &EvalConfig) -> Result<HeldOut> {
    config.validate()?;
    check_topics(phi, test.vocab_size())?;
    if !(alpha > 0.0) {
        return Err(Error::invalid("alpha must be positive"));
    }
    let phi_t = phi.transpose();
    let (mut ll, mut tokens, mut scored, mut skipped) = (0.0, 0usize, 0usize, 0usize);
    for (j, doc) in test.docs().iter().enumerate() {
        if doc.len() < 2 {
            skipped += 1;
            continue;
        }
        let (observed, held) = document_half_split(doc, half_seed(config.seed, j))?;
        let theta = infer_theta(&observed, &phi_t, alpha, config);
        ll += completion_loglik(&held, &theta, &phi_t);
        tokens += held.len();
        scored += 1;
    }
    if tokens == 0 {
        return Err(Error::invalid("no test document has two or more tokens"));
    }
    Ok(HeldOut { ll_per_token: ll / tokens as f64, scored_tokens: tokens, scored_docs: scored, skipped_docs: skipped })
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Mean cosine similarity over a greedy one-to-one matching of estimated to
/// true topics (best remaining pair first). A lower bound on the optimal
/// matching score.
pub fn topic_match_score(phi_est: &Matrix, phi_true: &Matrix) -> Result<f64> {
    if phi_est.rows() != phi_true.rows() || phi_est.cols() != phi_true.cols() {
        return Err(Error::invalid(format!(
            "topic matrices differ in shape: {}×{} vs {}×{}",
            phi_est.rows(),
            phi_est.cols(),
            phi_true.rows(),
            phi_true.cols()
        )));
    }
    let k = phi_est.rows();
    if k == 0 {
        return Err(Error::invalid("no topics to match"));
    }
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(k * k);
    for a in 0..k {
        for b in 0..k {
            pairs.push((cosine(phi_est.row(a), phi_true.row(b)), a, b));
        }
    }
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let (mut used_est, mut used_true) = (vec![false; k], vec![false; k]);
    let mut total = 0.0;
    for (c, a, b) in pairs {
        if !used_est[a] && !used_true[b] {
            used_est[a] = true;
            used_true[b] = true;
            total += c;
        }
    }
    Ok(total / k as f64)
}

/// The `n` most probable words of every topic; ties go to the lower word id.
pub fn top_words(phi: &Matrix, n: usize, vocab: &Vocabulary) -> Result<Vec<Vec<String>>> {
    if vocab.len() != phi.cols() {
        return Err(Error::invalid(format!("vocabulary has {} words but the topics have {}", vocab.len(), phi.cols())));
    }
    if n > phi.cols() {
        return Err(Error::invalid(format!("asked for {n} words but the vocabulary has only {}", phi.cols())));
    }
    Ok(phi
        .iter_rows()
        .map(|row| {
            let mut ids: Vec<usize> = (0..row.len()).collect();
            ids.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
            ids[..n].iter().map(|&w| vocab.word(w).to_string()).collect()
        })
        .collect())
}
