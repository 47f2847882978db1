//! Bag-of-words corpora in the clumped representation.
//!
//! Every document stores each distinct word once together with its
//! multiplicity. Files on disk use the UCI bag-of-words layout (1-indexed
//! ids); everything in memory is 0-indexed.

use std::collections::HashMap;
use std::fmt::Write as _;

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};

use crate::error::{Error, ParseError, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new(words: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(ParseError::DuplicateWord { line: i + 1, word: w.clone() }.into());
            }
        }
        Ok(Self { words, index })
    }

    /// Placeholder vocabulary `w0, w1, ...` used by the synthetic generator.
    pub fn synthetic(size: usize) -> Self {
        Self::new((0..size).map(|i| format!("w{i}")).collect()).expect("names are unique")
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}

/// One distinct word of a document and the number of times it occurs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Entry {
    pub word: usize,
    pub count: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    entries: Vec<Entry>,
    len: usize,
}

impl Document {
    /// Builds a document from entries that must already be clumped
    /// (distinct word ids, counts ≥ 1). Entries are sorted by word id.
    pub fn from_entries(mut entries: Vec<Entry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::invalid("document has no entries"));
        }
        entries.sort_unstable_by_key(|e| e.word);
        for pair in entries.windows(2) {
            if pair[0].word == pair[1].word {
                return Err(Error::invalid(format!("word {} repeated in document", pair[0].word)));
            }
        }
        if entries.iter().any(|e| e.count == 0) {
            return Err(Error::invalid("entry with zero count"));
        }
        let len = entries.iter().map(|e| e.count as usize).sum();
        Ok(Self { entries, len })
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    /// Number of tokens, C_j.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Expands the document back into a flat token list, sorted by word id.
    pub fn tokens(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.len);
        for e in &self.entries {
            out.extend(std::iter::repeat_n(e.word, e.count as usize));
        }
        out
    }

    fn max_word(&self) -> usize {
        self.entries.last().map_or(0, |e| e.word)
    }
}

/// Collapses a token list into a clumped document.
pub fn clump(tokens: &[usize]) -> Result<Document> {
    if tokens.is_empty() {
        return Err(Error::invalid("cannot clump an empty token list"));
    }
    let mut sorted = tokens.to_vec();
    sorted.sort_unstable();
    let mut entries: Vec<Entry> = Vec::new();
    for w in sorted {
        match entries.last_mut() {
            Some(e) if e.word == w => e.count += 1,
            _ => entries.push(Entry { word: w, count: 1 }),
        }
    }
    Ok(Document { entries, len: tokens.len() })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    docs: Vec<Document>,
    vocab: Vocabulary,
    tokens: usize,
}

impl Corpus {
    pub fn new(docs: Vec<Document>, vocab: Vocabulary) -> Result<Self> {
        let w = vocab.len();
        if let Some(d) = docs.iter().position(|d| d.max_word() >= w) {
            return Err(Error::invalid(format!("document {d} references a word outside the vocabulary")));
        }
        let tokens: usize = docs.iter().map(Document::len).sum();
        if tokens == 0 {
            return Err(ParseError::EmptyCorpus.into());
        }
        Ok(Self { docs, vocab, tokens })
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn doc(&self, j: usize) -> &Document {
        &self.docs[j]
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    /// D
    pub fn num_docs(&self) -> usize {
        self.docs.len()
    }

    /// W
    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    /// C, the total token count.
    pub fn num_tokens(&self) -> usize {
        self.tokens
    }

    pub fn doc_lengths(&self) -> Vec<usize> {
        self.docs.iter().map(Document::len).collect()
    }

    /// Corpus-wide count of each word.
    pub fn word_frequencies(&self) -> Vec<usize> {
        let mut freq = vec![0; self.vocab_size()];
        for d in &self.docs {
            for e in d.entries() {
                freq[e.word] += e.count as usize;
            }
        }
        freq
    }

    /// Builds a corpus from a subset of this one's documents, sharing the vocabulary.
    pub fn subset(&self, doc_ids: &[usize]) -> Result<Corpus> {
        let docs = doc_ids.iter().map(|&j| self.docs[j].clone()).collect();
        Corpus::new(docs, self.vocab.clone())
    }
}

/// A parsed corpus plus the number of zero-token documents dropped on ingest.
#[derive(Debug, Clone)]
pub struct Parsed {
    pub corpus: Corpus,
    pub dropped_empty_docs: usize,
}

fn header_value(lines: &mut std::iter::Enumerate<std::str::Lines<'_>>, name: &str) -> Result<usize> {
    let (i, line) = lines.next().ok_or_else(|| ParseError::MalformedHeader {
        line: 0,
        reason: format!("missing {name} line"),
    })?;
    line.trim().parse::<usize>().map_err(|_| {
        ParseError::MalformedHeader { line: i + 1, reason: format!("expected integer {name}, got {line:?}") }.into()
    })
}

/// Reads a UCI bag-of-words corpus from the contents of a docword file and
/// a vocab file.
pub fn parse_uci_bow(docword: &str, vocab: &str) -> Result<Parsed> {
    let mut lines = docword.lines().enumerate();
    let d = header_value(&mut lines, "D")?;
    let w = header_value(&mut lines, "W")?;
    let nnz = header_value(&mut lines, "NNZ")?;

    let mut per_doc: Vec<Vec<Entry>> = vec![Vec::new(); d];
    let mut found = 0usize;
    for (i, raw) in lines {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let lineno = i + 1;
        let mut fields = line.split_whitespace();
        let mut next = |what: &str| -> Result<usize> {
            let tok = fields.next().ok_or_else(|| ParseError::MalformedTriple {
                line: lineno,
                reason: format!("missing {what}"),
            })?;
            tok.parse::<usize>().map_err(|_| {
                ParseError::MalformedTriple { line: lineno, reason: format!("bad {what} {tok:?}") }.into()
            })
        };
        let doc_id = next("docID")?;
        let word_id = next("wordID")?;
        let count = next("count")?;
        if fields.next().is_some() {
            return Err(ParseError::MalformedTriple { line: lineno, reason: "trailing fields".into() }.into());
        }
        if doc_id == 0 || doc_id > d {
            return Err(ParseError::DocIdOutOfRange { line: lineno, id: doc_id, max: d }.into());
        }
        if word_id == 0 || word_id > w {
            return Err(ParseError::WordIdOutOfRange { line: lineno, id: word_id, max: w }.into());
        }
        if count < 1 {
            return Err(ParseError::BadCount { line: lineno }.into());
        }
        let count = u32::try_from(count)
            .map_err(|_| ParseError::MalformedTriple { line: lineno, reason: "count overflows u32".into() })?;
        per_doc[doc_id - 1].push(Entry { word: word_id - 1, count });
        found += 1;
    }
    if found != nnz {
        return Err(ParseError::NnzMismatch { expected: nnz, found }.into());
    }

    let vocab = parse_vocab(vocab)?;
    if vocab.len() != w {
        return Err(ParseError::VocabSize { expected: w, found: vocab.len() }.into());
    }

    let mut docs = Vec::with_capacity(d);
    let mut dropped = 0;
    for mut entries in per_doc {
        if entries.is_empty() {
            dropped += 1;
            continue;
        }
        // repeated (doc, word) triples are merged
        entries.sort_unstable_by_key(|e| e.word);
        entries.dedup_by(|b, a| {
            if a.word == b.word {
                a.count += b.count;
                true
            } else {
                false
            }
        });
        docs.push(Document::from_entries(entries)?);
    }
    if dropped > 0 {
        warn!("dropped {dropped} zero-token documents");
    }
    Ok(Parsed { corpus: Corpus::new(docs, vocab)?, dropped_empty_docs: dropped })
}

/// One word per line; line `i` (1-based) is word id `i`.
pub fn parse_vocab(text: &str) -> Result<Vocabulary> {
    Vocabulary::new(text.lines().map(|l| l.trim_end_matches('\r').to_string()).collect())
}

/// Reads a corpus from docword and vocab files on disk.
pub fn read_uci_bow(docword: &std::path::Path, vocab: &std::path::Path) -> Result<Parsed> {
    let dw = std::fs::read_to_string(docword)?;
    let vb = std::fs::read_to_string(vocab)?;
    parse_uci_bow(&dw, &vb)
}

/// Serializes a corpus as (docword, vocab) file contents.
pub fn to_uci_bow(corpus: &Corpus) -> (String, String) {
    let nnz: usize = corpus.docs().iter().map(|d| d.entries().len()).sum();
    let mut dw = String::with_capacity(16 * nnz + 32);
    let _ = writeln!(dw, "{}\n{}\n{}", corpus.num_docs(), corpus.vocab_size(), nnz);
    for (j, d) in corpus.docs().iter().enumerate() {
        for e in d.entries() {
            let _ = writeln!(dw, "{} {} {}", j + 1, e.word + 1, e.count);
        }
    }
    let mut vocab = String::new();
    for word in corpus.vocab().words() {
        vocab.push_str(word);
        vocab.push('\n');
    }
    (dw, vocab)
}

pub fn write_uci_bow(corpus: &Corpus, docword: &std::path::Path, vocab: &std::path::Path) -> Result<()> {
    let (dw, vb) = to_uci_bow(corpus);
    std::fs::write(docword, dw)?;
    std::fs::write(vocab, vb)?;
    Ok(())
}

/// Splits off `n_test` documents chosen uniformly at random under `seed`.
/// Both halves keep the original document order.
pub fn holdout_split(corpus: &Corpus, n_test: usize, seed: u64) -> Result<(Corpus, Corpus)> {
    let d = corpus.num_docs();
    if n_test == 0 || n_test >= d {
        return Err(Error::invalid(format!("n_test must be in 1..{d}, got {n_test}")));
    }
    let mut ids: Vec<usize> = (0..d).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test = ids[..n_test].to_vec();
    let mut train = ids[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((corpus.subset(&train)?, corpus.subset(&test)?))
}

/// Token-level random halving of a document: the first ⌈C_j/2⌉ shuffled
/// tokens go to the first half.
pub fn document_half_split(doc: &Document, seed: u64) -> Result<(Document, Document)> {
    if doc.len() < 2 {
        return Err(Error::invalid(format!("document with {} tokens cannot be halved", doc.len())));
    }
    let mut tokens = doc.tokens();
    tokens.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = tokens.len().div_ceil(2);
    Ok((clump(&tokens[..cut])?, clump(&tokens[cut..])?))
}

/// Output of [`synth_corpus`]: the corpus plus the parameters that generated it.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub corpus: Corpus,
    /// K × W, rows are topics.
    pub phi: Matrix,
    /// D × K, rows are per-document topic proportions.
    pub theta: Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthParams {
    pub topics: usize,
    pub vocab_size: usize,
    pub docs: usize,
    pub mean_len: usize,
    pub alpha: f64,
    pub eta: f64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self { topics: 5, vocab_size: 100, docs: 2000, mean_len: 50, alpha: 0.1, eta: 0.05, seed: 1 }
    }
}

/// Symmetric Dirichlet draw, computed in log space so tiny concentrations
/// do not underflow every component to zero.
pub(crate) fn sample_symmetric_dirichlet<R: Rng>(rng: &mut R, concentration: f64, dim: usize) -> Vec<f64> {
    if dim == 1 {
        return vec![1.0];
    }
    // Gamma(a) = Gamma(a + 1) · U^(1/a)
    let boosted = Gamma::new(concentration + 1.0, 1.0).expect("positive shape");
    let logs: Vec<f64> = (0..dim)
        .map(|_| {
            let g: f64 = boosted.sample(rng);
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            g.ln() + u.ln() / concentration
        })
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= total);
    out
}

fn sample_discrete<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Draws a corpus from the LDA generative process.
pub fn synth_corpus(params: &SynthParams) -> Result<SynthCorpus> {
    let SynthParams { topics, vocab_size, docs, mean_len, alpha, eta, seed } = *params;
    if topics == 0 || vocab_size == 0 || docs == 0 || mean_len == 0 {
        return Err(Error::invalid("synthetic corpus dimensions must all be ≥ 1"));
    }
    if !(alpha > 0.0 && eta > 0.0) {
        return Err(Error::invalid("alpha and eta must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..topics).map(|_| sample_symmetric_dirichlet(&mut rng, eta, vocab_size)).collect();
    let phi = Matrix::from_rows(&rows);
    let lengths = Poisson::new(mean_len as f64).map_err(|e| Error::invalid(e.to_string()))?;

    let mut theta = Matrix::zeros(docs, topics);
    let mut out = Vec::with_capacity(docs);
    for j in 0..docs {
        let th = sample_symmetric_dirichlet(&mut rng, alpha, topics);
        let len = (lengths.sample(&mut rng) as usize).max(1);
        let tokens: Vec<usize> = (0..len)
            .map(|_| {
                let z = sample_discrete(&mut rng, &th);
                sample_discrete(&mut rng, phi.row(z))
            })
            .collect();
        theta.row_mut(j).copy_from_slice(&th);
        out.push(clump(&tokens)?);
    }
    let corpus = Corpus::new(out, Vocabulary::synthetic(vocab_size))?;
    Ok(SynthCorpus { corpus, phi, theta })
}

/// One row per topic, W space-separated probabilities.
pub fn format_truth(phi: &Matrix) -> String {
    let mut s = String::new();
    for row in phi.iter_rows() {
        let line: Vec<String> = row.iter().map(|p| format!("{p}")).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

pub fn parse_truth(text: &str) -> Result<Matrix> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::invalid(format!("truth file line {}: {e}", i + 1)))?;
        let total: f64 = row.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("truth file line {} sums to {total}", i + 1)));
        }
        if rows.first().is_some_and(|r: &Vec<f64>| r.len() != row.len()) {
            return Err(Error::invalid(format!("truth file line {} has a different width", i + 1)));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::invalid("truth file is empty"));
    }
    Ok(Matrix::from_rows(&rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Corpus {
        parse_uci_bow("2\n3\n3\n1 1 2\n1 3 1\n2 2 4\n", "a\nb\nc\n").unwrap().corpus
    }

    #[test]
    fn parses_small_corpus() {
        let c = small();
        assert_eq!(c.num_docs(), 2);
        assert_eq!(c.vocab_size(), 3);
        assert_eq!(c.num_tokens(), 7);
        assert_eq!(c.doc(0).entries(), &[Entry { word: 0, count: 2 }, Entry { word: 2, count: 1 }]);
        assert_eq!(c.doc(1).entries(), &[Entry { word: 1, count: 4 }]);
    }

    #[test]
    fn parses_minimal_corpus() {
        let c = parse_uci_bow("1\n1\n1\n1 1 1\n", "only\n").unwrap().corpus;
        assert_eq!((c.num_docs(), c.vocab_size(), c.num_tokens()), (1, 1, 1));
    }

    #[test]
    fn word_id_out_of_range_names_line() {
        let err = parse_uci_bow("1\n3\n2\n1 1 1\n1 5 1\n", "a\nb\nc\n").unwrap_err();
        assert!(err.to_string().contains("wordID out of range at line 5"), "{err}");
    }

    #[test]
    fn distinct_parse_errors() {
        let v = "a\nb\n";
        let cases = [
            ("x\n2\n1\n1 1 1\n", "malformed header"),
            ("1\n2\n2\n1 1 1\n", "NNZ mismatch"),
            ("1\n2\n1\n2 1 1\n", "docID out of range at line 4"),
            ("1\n2\n1\n1 1 0\n", "count < 1 at line 4"),
            ("1\n2\n1\n1 1\n", "malformed triple at line 4"),
        ];
        for (dw, needle) in cases {
            let err = parse_uci_bow(dw, v).unwrap_err().to_string();
            assert!(err.contains(needle), "{dw:?}: {err}");
        }
        let err = parse_uci_bow("1\n3\n1\n1 1 1\n", v).unwrap_err();
        assert!(matches!(err, Error::Parse(ParseError::VocabSize { expected: 3, found: 2 })));
    }

    #[test]
    fn empty_documents_are_dropped() {
        let p = parse_uci_bow("3\n2\n2\n1 1 1\n3 2 2\n", "a\nb\n").unwrap();
        assert_eq!(p.dropped_empty_docs, 1);
        assert_eq!(p.corpus.num_docs(), 2);
        assert_eq!(p.corpus.num_tokens(), 3);
    }

    #[test]
    fn clump_examples() {
        let d = clump(&[0, 2, 0]).unwrap();
        assert_eq!(d.entries(), &[Entry { word: 0, count: 2 }, Entry { word: 2, count: 1 }]);
        assert_eq!(d.len(), 3);
        assert_eq!(clump(&[1]).unwrap().entries(), &[Entry { word: 1, count: 1 }]);
        let d = clump(&[3, 3, 3, 3]).unwrap();
        assert_eq!((d.entries(), d.len()), (&[Entry { word: 3, count: 4 }][..], 4));
        assert!(clump(&[]).is_err());
    }

    #[test]
    fn holdout_split_partitions() {
        let synth = synth_corpus(&SynthParams { docs: 100, mean_len: 10, ..Default::default() }).unwrap();
        let c = &synth.corpus;
        let (train, test) = holdout_split(c, 10, 1).unwrap();
        assert_eq!((train.num_docs(), test.num_docs()), (90, 10));
        assert_eq!(train.num_tokens() + test.num_tokens(), c.num_tokens());
        let (train2, test2) = holdout_split(c, 10, 1).unwrap();
        assert_eq!(train, train2);
        assert_eq!(test, test2);
        assert!(holdout_split(c, 100, 1).is_err());
        assert!(holdout_split(c, 0, 1).is_err());
    }

    #[test]
    fn half_split_examples() {
        let d = Document::from_entries(vec![Entry { word: 0, count: 2 }, Entry { word: 1, count: 2 }]).unwrap();
        let (a, b) = document_half_split(&d, 3).unwrap();
        assert_eq!((a.len(), b.len()), (2, 2));
        let mut union = a.tokens();
        union.extend(b.tokens());
        union.sort_unstable();
        assert_eq!(union, d.tokens());

        let d = clump(&[0, 1]).unwrap();
        for seed in 0..10 {
            let (a, b) = document_half_split(&d, seed).unwrap();
            assert_eq!((a.len(), b.len()), (1, 1));
        }
        assert!(document_half_split(&clump(&[4]).unwrap(), 0).is_err());
    }

    #[test]
    fn synth_single_topic() {
        let s = synth_corpus(&SynthParams { topics: 1, vocab_size: 10, docs: 20, ..Default::default() }).unwrap();
        assert_eq!(s.phi.rows(), 1);
        assert!(s.theta.as_slice().iter().all(|&t| t == 1.0));
        assert!((s.phi.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn synth_is_deterministic() {
        let p = SynthParams { topics: 2, vocab_size: 10, docs: 50, mean_len: 20, seed: 9, ..Default::default() };
        let a = synth_corpus(&p).unwrap();
        let b = synth_corpus(&p).unwrap();
        assert_eq!(a.corpus, b.corpus);
        assert_eq!(a.phi, b.phi);
    }

    #[test]
    fn dirichlet_draws_survive_tiny_concentration() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let v = sample_symmetric_dirichlet(&mut rng, 1e-3, 50);
            assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(v.iter().all(|x| x.is_finite() && *x >= 0.0));
        }
    }

    #[test]
    fn truth_file_round_trip() {
        let s = synth_corpus(&SynthParams { docs: 5, ..Default::default() }).unwrap();
        let parsed = parse_truth(&format_truth(&s.phi)).unwrap();
        assert_eq!(parsed, s.phi);
    }
}
