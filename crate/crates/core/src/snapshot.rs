//! Binary model snapshots.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic   "LDASNAP\0"
//! version u32
//! algo    u32   0 scvb0, 1 svb, 2 cvb0, 3 map
//! K W D   u64 × 3
//! alpha   f64
//! n_eta   u64   1 (symmetric) or W
//! eta     f64 × n_eta
//! n_phi   f64 × W·K   word-major
//! n_z     f64 × K
//! n_theta f64 × D·K
//! ```
//!
//! SVB snapshots store λᵀ in the `n_phi` block, its column sums in `n_z`
//! and no document statistics. A JSON sidecar holds the run configuration.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{recover_topics, HyperParams, ModelStats, RecoveryMode};

const MAGIC: &[u8; 8] = b"LDASNAP\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Scvb0,
    Svb,
    Cvb0,
    Map,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Algorithm::Scvb0, Algorithm::Svb, Algorithm::Cvb0, Algorithm::Map];

    pub fn tag(self) -> u32 {
        match self {
            Algorithm::Scvb0 => 0,
            Algorithm::Svb => 1,
            Algorithm::Cvb0 => 2,
            Algorithm::Map => 3,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.tag() == tag)
    }

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Scvb0 => "scvb0",
            Algorithm::Svb => "svb",
            Algorithm::Cvb0 => "cvb0",
            Algorithm::Map => "map",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown algorithm '{s}' (expected scvb0, svb, cvb0 or map)")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub algorithm: Algorithm,
    pub hyper: HyperParams,
    pub stats: ModelStats,
}

impl Snapshot {
    pub fn new(algorithm: Algorithm, hyper: HyperParams, stats: ModelStats) -> Result<Self> {
        if hyper.vocab_size() != stats.vocab_size() {
            return Err(Error::invalid(format!(
                "eta has {} entries but the statistics cover {} words",
                hyper.vocab_size(),
                stats.vocab_size()
            )));
        }
        if stats.n_z.len() != stats.num_topics() || stats.n_theta.cols() != stats.num_topics() {
            return Err(Error::invalid("statistics disagree on K"));
        }
        Ok(Self { algorithm, hyper, stats })
    }

    pub fn num_topics(&self) -> usize {
        self.stats.num_topics()
    }

    pub fn vocab_size(&self) -> usize {
        self.stats.vocab_size()
    }

    /// Topic-word distributions (K × W) as every algorithm reads its state:
    /// normalized λ for SVB, MAP recovery for MAP-EM, posterior means
    /// otherwise.
    pub fn topics(&self) -> Result<Matrix> {
        match self.algorithm {
            Algorithm::Svb => {
                let mut phi = self.stats.n_phi.transpose();
                for r in 0..phi.rows() {
                    let row = phi.row_mut(r);
                    let s: f64 = row.iter().sum();
                    row.iter_mut().for_each(|v| *v /= s);
                }
                Ok(phi)
            }
            Algorithm::Map => recover_topics(&self.stats, &self.hyper, RecoveryMode::Map),
            Algorithm::Scvb0 | Algorithm::Cvb0 => recover_topics(&self.stats, &self.hyper, RecoveryMode::VariationalMean),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (k, w, d) = (self.num_topics(), self.vocab_size(), self.stats.num_docs());
        let eta: Vec<f64> = match self.hyper.symmetric_eta() {
            Some(e) => vec![e],
            None => self.hyper.eta_vec().to_vec(),
        };
        let floats = 1 + eta.len() + w * k + k + d * k;
        let mut out = Vec::with_capacity(8 + 4 + 4 + 24 + 8 + 8 * floats);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.algorithm.tag().to_le_bytes());
        for n in [k, w, d] {
            out.extend_from_slice(&(n as u64).to_le_bytes());
        }
        out.extend_from_slice(&self.hyper.alpha().to_le_bytes());
        out.extend_from_slice(&(eta.len() as u64).to_le_bytes());
        let body = eta
            .iter()
            .chain(self.stats.n_phi.as_slice())
            .chain(&self.stats.n_z)
            .chain(self.stats.n_theta.as_slice());
        for v in body {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Snapshot("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Snapshot(format!("unsupported version {version}")));
        }
        let tag = r.u32()?;
        let algorithm = Algorithm::from_tag(tag).ok_or_else(|| Error::Snapshot(format!("unknown algorithm tag {tag}")))?;
        let k = r.count()?;
        let w = r.count()?;
        let d = r.count()?;
        if k == 0 || w == 0 {
            return Err(Error::Snapshot("K and W must be positive".into()));
        }
        let alpha = r.f64()?;
        let n_eta = r.count()?;
        if n_eta != 1 && n_eta != w {
            return Err(Error::Snapshot(format!("eta block has {n_eta} entries, expected 1 or {w}")));
        }
        let expected = n_eta
            .checked_add(w.checked_mul(k).ok_or_else(too_big)?)
            .and_then(|n| n.checked_add(k))
            .and_then(|n| n.checked_add(d.checked_mul(k)?))
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(too_big)?;
        if r.remaining() != expected {
            return Err(Error::Snapshot(format!("payload is {} bytes, header implies {expected}", r.remaining())));
        }
        let eta = r.floats(n_eta)?;
        let eta = if n_eta == 1 { vec![eta[0]; w] } else { eta };
        let hyper = HyperParams::new(alpha, eta).map_err(|e| Error::Snapshot(e.to_string()))?;
        let n_phi = Matrix::from_vec(w, k, r.floats(w * k)?);
        let n_z = r.floats(k)?;
        let n_theta = Matrix::from_vec(d, k, r.floats(d * k)?);
        Ok(Self { algorithm, hyper, stats: ModelStats { n_phi, n_z, n_theta } })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn too_big() -> Error {
    Error::Snapshot("dimensions overflow".into())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| Error::Snapshot("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn count(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| too_big())
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

/// `<snapshot>.json`, next to the snapshot itself.
pub fn sidecar_path(snapshot: &Path) -> PathBuf {
    let mut s = snapshot.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_sidecar<T: Serialize>(snapshot: &Path, config: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(config).map_err(|e| Error::invalid(e.to_string()))?;
    std::fs::write(sidecar_path(snapshot), json + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synth_corpus, SynthParams};
    use crate::model::init_stats;

    fn sample(algorithm: Algorithm, symmetric: bool) -> Snapshot {
        let c = synth_corpus(&SynthParams { docs: 6, vocab_size: 12, topics: 3, seed: 2, ..Default::default() }).unwrap().corpus;
        let hyper = if symmetric {
            HyperParams::symmetric(0.1, 0.01, 12).unwrap()
        } else {
            HyperParams::new(0.1, (1..=12).map(|i| f64::from(i) / 10.0).collect()).unwrap()
        };
        Snapshot::new(algorithm, hyper, init_stats(&c, 3, 1).unwrap()).unwrap()
    }

    #[test]
    fn round_trip() {
        for a in Algorithm::ALL {
            for sym in [true, false] {
                let s = sample(a, sym);
                assert_eq!(Snapshot::from_bytes(&s.to_bytes()).unwrap(), s);
            }
        }
    }

    #[test]
    fn header_layout() {
        let s = sample(Algorithm::Cvb0, true);
        let b = s.to_bytes();
        assert_eq!(&b[..8], b"LDASNAP\0");
        assert_eq!(u32::from_le_bytes(b[12..16].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(b[16..24].try_into().unwrap()), 3);
        assert_eq!(u64::from_le_bytes(b[24..32].try_into().unwrap()), 12);
        assert_eq!(u64::from_le_bytes(b[32..40].try_into().unwrap()), 6);
        assert_eq!(b.len(), 56 + 8 * (1 + 36 + 3 + 18));
    }

    #[test]
    fn corruption_is_detected() {
        let b = sample(Algorithm::Scvb0, true).to_bytes();
        assert!(matches!(Snapshot::from_bytes(&b[..b.len() - 1]), Err(Error::Snapshot(_))));
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(matches!(Snapshot::from_bytes(&bad), Err(Error::Snapshot(_))));
        let mut bad = b.clone();
        bad[12] = 9;
        assert!(matches!(Snapshot::from_bytes(&bad), Err(Error::Snapshot(_))));
        let mut bad = b;
        bad.push(0);
        assert!(matches!(Snapshot::from_bytes(&bad), Err(Error::Snapshot(_))));
        assert!(matches!(Snapshot::from_bytes(&[]), Err(Error::Snapshot(_))));
    }

    #[test]
    fn svb_topics_normalize_lambda() {
        let lambda = Matrix::from_rows(&[vec![1.0, 3.0], vec![2.0, 2.0]]);
        let stats = ModelStats { n_phi: lambda.transpose(), n_z: vec![3.0, 5.0], n_theta: Matrix::zeros(0, 2) };
        let s = Snapshot::new(Algorithm::Svb, HyperParams::symmetric(0.1, 0.1, 2).unwrap(), stats).unwrap();
        let phi = Snapshot::from_bytes(&s.to_bytes()).unwrap().topics().unwrap();
        assert_eq!(phi.row(0), &[0.25, 0.75]);
        assert_eq!(phi.row(1), &[0.5, 0.5]);
    }

    #[test]
    fn algorithm_names() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
            assert_eq!(Algorithm::from_tag(a.tag()), Some(a));
        }
        assert!("lda".parse::<Algorithm>().is_err());
    }

    #[test]
    fn sidecar_sits_next_to_snapshot() {
        assert_eq!(sidecar_path(Path::new("out/model.snap")), PathBuf::from("out/model.snap.json"));
    }
}
