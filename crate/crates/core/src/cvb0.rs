//! Batch CVB0 with one stored responsibility per clumped entry.
//!
//! Clumping is only exact for uncollapsed algorithms: here an entry of
//! multiplicity m shares a single γ and its whole clump (m·γ) is excluded
//! from the statistics while that γ is recomputed.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::model::{self, normalize_in_place, responsibility_kernel, HyperParams, ModelStats, Responsibility};

/// How much of the current responsibility is removed from the statistics
/// before an entry is updated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exclusion {
    /// Remove the entry's full contribution m·γ_old (standard CVB0).
    Clumped,
    /// Use the statistics as they are, as the stochastic variant must.
    None,
}

/// Excluded counts more negative than this mean the state is corrupt.
const NEGATIVE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct Cvb0State {
    pub stats: ModelStats,
    topics: usize,
    /// Per document, `entries × K` responsibilities, row-major.
    gammas: Vec<Vec<f64>>,
}

impl Cvb0State {
    /// Random hard-assignment start; each entry's γ is the fraction of its
    /// tokens assigned to each topic, so the statistics match exactly.
    pub fn init(corpus: &Corpus, topics: usize, seed: u64) -> Result<Self> {
        if topics == 0 {
            return Err(Error::invalid("K must be ≥ 1"));
        }
        let (stats, fractions) = model::init_assignments(corpus, topics, seed);
        let gammas = fractions.into_iter().map(|doc| doc.into_iter().flatten().collect()).collect();
        Ok(Self { stats, topics, gammas })
    }

    /// Builds a state from explicit per-entry responsibilities, computing
    /// the statistics from them.
    pub fn from_gammas(corpus: &Corpus, topics: usize, gammas: Vec<Vec<f64>>) -> Result<Self> {
        if gammas.len() != corpus.num_docs() {
            return Err(Error::invalid("one responsibility block per document required"));
        }
        for (doc, g) in corpus.docs().iter().zip(&gammas) {
            if g.len() != doc.entries().len() * topics {
                return Err(Error::invalid("responsibility block has the wrong size"));
            }
        }
        let mut state = Self { stats: ModelStats::zeros(corpus.vocab_size(), topics, corpus.num_docs()), topics, gammas };
        state.resync(corpus);
        Ok(state)
    }

    pub fn num_topics(&self) -> usize {
        self.topics
    }

    pub fn gamma(&self, doc: usize, entry: usize) -> &[f64] {
        &self.gammas[doc][entry * self.topics..(entry + 1) * self.topics]
    }

    pub fn gammas(&self) -> &[Vec<f64>] {
        &self.gammas
    }

    /// Recomputes the statistics from the stored responsibilities.
    pub fn resync(&mut self, corpus: &Corpus) {
        self.stats = stats_from_gammas(corpus, self.topics, &self.gammas);
    }

    /// Writes every document's `entries × K` responsibility block,
    /// row-major little-endian f64, documents in order.
    pub fn write_gammas<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        for block in &self.gammas {
            for g in block {
                out.write_all(&g.to_le_bytes())?;
            }
        }
        Ok(())
    }
}

/// Sums of multiplicity-weighted responsibilities: the CVB0 / EM statistics.
pub fn stats_from_gammas(corpus: &Corpus, topics: usize, gammas: &[Vec<f64>]) -> ModelStats {
    let mut stats = ModelStats::zeros(corpus.vocab_size(), topics, corpus.num_docs());
    for (j, doc) in corpus.docs().iter().enumerate() {
        for (t, e) in doc.entries().iter().enumerate() {
            let m = f64::from(e.count);
            let g = &gammas[j][t * topics..(t + 1) * topics];
            for (p, gk) in stats.n_phi.row_mut(e.word).iter_mut().zip(g) {
                *p += m * gk;
            }
            for (th, gk) in stats.n_theta.row_mut(j).iter_mut().zip(g) {
                *th += m * gk;
            }
        }
    }
    stats.n_z = stats.n_phi.column_sums();
    stats
}

/// Global visiting order for one sweep over every (document, entry) pair.
pub(crate) fn entry_order(corpus: &Corpus, seed: u64) -> Vec<(u32, u32)> {
    let mut order: Vec<(u32, u32)> = corpus
        .docs()
        .iter()
        .enumerate()
        .flat_map(|(j, d)| (0..d.entries().len()).map(move |t| (j as u32, t as u32)))
        .collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

/// Shared coordinate update: recompute one entry's γ with `kernel`, then
/// move the statistics by m·(γ_new − γ_old). Used by CVB0 and by the
/// incremental MAP-EM sweep.
pub(crate) fn update_entry_with<F>(
    state: &mut Cvb0State,
    corpus: &Corpus,
    doc: usize,
    entry: usize,
    exclusion: Exclusion,
    kernel: F,
) -> Result<Responsibility>
where
    F: Fn(&mut [f64], &[f64], &[f64], &[f64], usize) -> Result<()>,
{
    let k = state.topics;
    let e = corpus.doc(doc).entries()[entry];
    let m = f64::from(e.count);
    let old: Vec<f64> = state.gamma(doc, entry).to_vec();

    let mut phi_row = state.stats.n_phi.row(e.word).to_vec();
    let mut n_z = state.stats.n_z.clone();
    let mut theta_row = state.stats.n_theta.row(doc).to_vec();
    if exclusion == Exclusion::Clumped {
        for kk in 0..k {
            let sub = m * old[kk];
            phi_row[kk] -= sub;
            n_z[kk] -= sub;
            theta_row[kk] -= sub;
        }
        for v in phi_row.iter_mut().chain(n_z.iter_mut()).chain(theta_row.iter_mut()) {
            if *v < -NEGATIVE_SLACK {
                return Err(Error::Numeric(format!("excluded count {v} is negative: state corrupted")));
            }
            *v = v.max(0.0);
        }
    }

    let mut new = vec![0.0; k];
    kernel(&mut new, &phi_row, &n_z, &theta_row, e.word)?;

    let phi = state.stats.n_phi.row_mut(e.word);
    for kk in 0..k {
        phi[kk] += m * (new[kk] - old[kk]);
    }
    let theta = state.stats.n_theta.row_mut(doc);
    for kk in 0..k {
        theta[kk] += m * (new[kk] - old[kk]);
    }
    for kk in 0..k {
        state.stats.n_z[kk] += m * (new[kk] - old[kk]);
    }
    state.gammas[doc][entry * k..(entry + 1) * k].copy_from_slice(&new);
    Responsibility::from_vec(new)
}

/// Updates one clumped entry and returns its new responsibility.
pub fn cvb0_update_entry(
    state: &mut Cvb0State,
    corpus: &Corpus,
    doc: usize,
    entry: usize,
    hyper: &HyperParams,
    exclusion: Exclusion,
) -> Result<Responsibility> {
    let (alpha, eta_sum) = (hyper.alpha(), hyper.eta_sum());
    update_entry_with(state, corpus, doc, entry, exclusion, |out, phi, n_z, theta, w| {
        let total = responsibility_kernel(out, phi, n_z, theta, hyper.eta(w), eta_sum, alpha);
        normalize_in_place(out, total)
    })
}

/// One sweep over every entry in seeded random order, followed by an
/// exact resynchronization of the statistics.
pub fn cvb0_epoch(state: &mut Cvb0State, corpus: &Corpus, hyper: &HyperParams, order_seed: u64, exclusion: Exclusion) -> Result<()> {
    for (j, t) in entry_order(corpus, order_seed) {
        cvb0_update_entry(state, corpus, j as usize, t as usize, hyper, exclusion)?;
    }
    state.resync(corpus);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{clump, synth_corpus, Entry, SynthParams, Vocabulary};
    use crate::corpus::Document;
    use crate::scvb0::gamma_update_raw;

    fn synth(docs: usize, k: usize) -> Corpus {
        synth_corpus(&SynthParams { topics: k, vocab_size: 20, docs, mean_len: 30, seed: 3, ..Default::default() })
            .unwrap()
            .corpus
    }

    #[test]
    fn excluded_state_example() {
        let h = HyperParams::symmetric(1.0, 1.0, 2).unwrap();
        // counts below are after the γ_old = (1, 0), m = 1 exclusion
        let mut out = [0.0; 2];
        let total = responsibility_kernel(&mut out, &[1.0, 1.0], &[2.0, 2.0], &[3.0, 1.0], h.eta(0), h.eta_sum(), h.alpha());
        normalize_in_place(&mut out, total).unwrap();
        assert!((out[0] - 2.0 / 3.0).abs() < 1e-15 && (out[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn update_matches_gamma_update_on_excluded_stats() {
        let c = synth(8, 3);
        let h = HyperParams::symmetric(0.3, 0.2, c.vocab_size()).unwrap();
        let mut s = Cvb0State::init(&c, 3, 1).unwrap();
        cvb0_epoch(&mut s, &c, &h, 2, Exclusion::Clumped).unwrap();
        let (j, t) = (2, 1);
        let e = c.doc(j).entries()[t];
        let m = f64::from(e.count);
        let old = s.gamma(j, t).to_vec();
        let sub = |v: &[f64]| -> Vec<f64> { v.iter().zip(&old).map(|(x, g)| x - m * g).collect() };
        let expected = gamma_update_raw(&sub(s.stats.n_phi.row(e.word)), &sub(&s.stats.n_z), &sub(s.stats.n_theta.row(j)), e.word, &h).unwrap();
        let got = cvb0_update_entry(&mut s, &c, j, t, &h, Exclusion::Clumped).unwrap();
        for (a, b) in got.as_slice().iter().zip(expected.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn symmetric_state_gives_uniform() {
        let vocab = Vocabulary::synthetic(2);
        let c = Corpus::new(vec![clump(&[0, 1]).unwrap(), clump(&[0, 1]).unwrap()], vocab).unwrap();
        let mut s = Cvb0State::from_gammas(&c, 2, vec![vec![0.5; 4], vec![0.5; 4]]).unwrap();
        let h = HyperParams::symmetric(0.1, 0.1, 2).unwrap();
        let g = cvb0_update_entry(&mut s, &c, 0, 0, &h, Exclusion::Clumped).unwrap();
        assert_eq!(g.as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn single_topic_is_identity() {
        let c = synth(6, 2);
        let h = HyperParams::symmetric(0.1, 0.01, c.vocab_size()).unwrap();
        let mut s = Cvb0State::init(&c, 1, 0).unwrap();
        let before = s.stats.clone();
        let g = cvb0_update_entry(&mut s, &c, 0, 0, &h, Exclusion::Clumped).unwrap();
        assert_eq!(g.as_slice(), &[1.0]);
        cvb0_epoch(&mut s, &c, &h, 5, Exclusion::Clumped).unwrap();
        assert_eq!(s.stats, before);
    }

    #[test]
    fn epoch_stats_match_brute_force_sums() {
        let c = synth(5, 3);
        let h = HyperParams::symmetric(0.1, 0.05, c.vocab_size()).unwrap();
        let mut s = Cvb0State::init(&c, 3, 7).unwrap();
        for seed in 0..3 {
            for (j, t) in entry_order(&c, seed) {
                let g = cvb0_update_entry(&mut s, &c, j as usize, t as usize, &h, Exclusion::Clumped).unwrap();
                assert!(g.is_simplex(1e-12));
            }
            // drift before resync is tiny
            let exact = brute_force(&c, &s);
            assert!(s.stats.n_phi.max_abs_diff(&exact.n_phi) < 1e-6);
            s.resync(&c);
            let exact = brute_force(&c, &s);
            assert!(s.stats.n_phi.max_abs_diff(&exact.n_phi) < 1e-10);
            assert!(s.stats.n_theta.max_abs_diff(&exact.n_theta) < 1e-10);
            for (a, b) in s.stats.n_z.iter().zip(&exact.n_z) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    // Independent recomputation: expand every entry into its tokens.
    fn brute_force(c: &Corpus, s: &Cvb0State) -> ModelStats {
        let k = s.num_topics();
        let mut out = ModelStats::zeros(c.vocab_size(), k, c.num_docs());
        for (j, d) in c.docs().iter().enumerate() {
            for (t, e) in d.entries().iter().enumerate() {
                for _ in 0..e.count {
                    for kk in 0..k {
                        let g = s.gamma(j, t)[kk];
                        out.n_phi.set(e.word, kk, out.n_phi.get(e.word, kk) + g);
                        out.n_theta.set(j, kk, out.n_theta.get(j, kk) + g);
                        out.n_z[kk] += g;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn converged_state_is_a_fixed_point() {
        let c = synth(10, 2);
        let h = HyperParams::symmetric(0.5, 0.5, c.vocab_size()).unwrap();
        let mut s = Cvb0State::init(&c, 2, 1).unwrap();
        for seed in 0..2000 {
            cvb0_epoch(&mut s, &c, &h, seed, Exclusion::Clumped).unwrap();
        }
        let before = s.gammas().to_vec();
        cvb0_epoch(&mut s, &c, &h, 9999, Exclusion::Clumped).unwrap();
        let change = before
            .iter()
            .flatten()
            .zip(s.gammas().iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(change < 1e-9, "change {change}");
    }

    #[test]
    fn corrupt_state_is_reported() {
        let c = synth(3, 2);
        let h = HyperParams::symmetric(0.1, 0.1, c.vocab_size()).unwrap();
        let mut s = Cvb0State::init(&c, 2, 0).unwrap();
        s.stats.n_theta.row_mut(0).iter_mut().for_each(|v| *v = -5.0);
        assert!(matches!(cvb0_update_entry(&mut s, &c, 0, 0, &h, Exclusion::Clumped), Err(Error::Numeric(_))));
    }

    /// Scaling a corpus by F (every count multiplied) shrinks the effect of
    /// excluding one token's γ from the statistics like 1/F.
    #[test]
    fn single_token_exclusion_effect_shrinks_with_corpus_size() {
        let base = synth(6, 3);
        let mut worst = Vec::new();
        for f in [1u32, 10, 100] {
            let docs: Vec<Document> = base
                .docs()
                .iter()
                .map(|d| Document::from_entries(d.entries().iter().map(|e| Entry { word: e.word, count: e.count * f }).collect()).unwrap())
                .collect();
            let c = Corpus::new(docs, base.vocab().clone()).unwrap();
            // same responsibilities for every scale
            let s = Cvb0State::init(&base, 3, 4).unwrap();
            let state = Cvb0State::from_gammas(&c, 3, s.gammas().to_vec()).unwrap();
            let h = HyperParams::symmetric(0.1, 0.01, c.vocab_size()).unwrap();
            let mut max_diff = 0.0f64;
            for (j, d) in c.docs().iter().enumerate() {
                for (t, e) in d.entries().iter().enumerate() {
                    let g = state.gamma(j, t);
                    let sub = |v: &[f64]| -> Vec<f64> { v.iter().zip(g).map(|(x, gg)| x - gg).collect() };
                    let with = gamma_update_raw(&sub(state.stats.n_phi.row(e.word)), &sub(&state.stats.n_z), &sub(state.stats.n_theta.row(j)), e.word, &h).unwrap();
                    let without = gamma_update_raw(state.stats.n_phi.row(e.word), &state.stats.n_z, state.stats.n_theta.row(j), e.word, &h).unwrap();
                    for (a, b) in with.as_slice().iter().zip(without.as_slice()) {
                        max_diff = max_diff.max((a - b).abs());
                    }
                }
            }
            worst.push(max_diff);
        }
        assert!(worst[0] > worst[1] && worst[1] > worst[2], "{worst:?}");
    }
}
