//! Hashed path fingerprints, bit-set similarity coefficients and the
//! latent similarity between pooled molecule vectors.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use thiserror::Error;

use crate::chem::MolGraph;
use crate::numkernel::Scalar;
use crate::vaemodel::{embed, ModelError, ModelParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FingerprintError {
    #[error("fingerprint lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("invalid fingerprint configuration: {0}")]
    InvalidConfig(String),
    #[error("pooled vector has zero norm")]
    ZeroVector,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FpConfig {
    pub min_path: usize,
    pub max_path: usize,
    pub bits_per_hash: usize,
    pub nbits: usize,
    /// Recorded for reference only; the length stays fixed at `nbits`.
    pub target_density: f64,
}

impl Default for FpConfig {
    fn default() -> Self {
        FpConfig {
            min_path: 1,
            max_path: 7,
            bits_per_hash: 2,
            nbits: 2048,
            target_density: 0.3,
        }
    }
}

impl FpConfig {
    pub fn validate(&self) -> Result<(), FingerprintError> {
        let bad = |msg: String| Err(FingerprintError::InvalidConfig(msg));
        if self.min_path == 0 || self.max_path < self.min_path {
            return bad(format!("path lengths {}..{}", self.min_path, self.max_path));
        }
        if self.bits_per_hash == 0 {
            return bad("bits per hash must be positive".into());
        }
        if self.nbits == 0 || !self.nbits.is_multiple_of(4) {
            return bad(format!(
                "nbits {} is not a positive multiple of 4",
                self.nbits
            ));
        }
        Ok(())
    }
}

/// Fixed-length bit set. Bit `k` lives in word `k / 64` at position `k % 64`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Fingerprint {
    words: Vec<u64>,
    nbits: usize,
}

impl Fingerprint {
    pub fn new(nbits: usize) -> Self {
        Fingerprint {
            words: vec![0; nbits.div_ceil(64)],
            nbits,
        }
    }

    pub fn from_bits(nbits: usize, on: impl IntoIterator<Item = usize>) -> Self {
        let mut fp = Fingerprint::new(nbits);
        for k in on {
            fp.set(k);
        }
        fp
    }

    /// Panics if `k >= nbits`.
    pub fn set(&mut self, k: usize) {
        assert!(
            k < self.nbits,
            "bit {k} out of range for {} bits",
            self.nbits
        );
        self.words[k / 64] |= 1 << (k % 64);
    }

    pub fn get(&self, k: usize) -> bool {
        k < self.nbits && self.words[k / 64] >> (k % 64) & 1 == 1
    }

    pub fn nbits(&self) -> usize {
        self.nbits
    }

    pub fn on_count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn density(&self) -> f64 {
        if self.nbits == 0 {
            0.0
        } else {
            self.on_count() as f64 / self.nbits as f64
        }
    }

    pub fn on_bits(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nbits).filter(|&k| self.get(k))
    }

    fn common(&self, other: &Fingerprint) -> Result<usize, FingerprintError> {
        if self.nbits != other.nbits {
            return Err(FingerprintError::LengthMismatch {
                left: self.nbits,
                right: other.nbits,
            });
        }
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum())
    }

    /// `nbits / 4` hex digits; bit 0 is the high bit of the first digit.
    pub fn to_hex(&self) -> String {
        let mut out = String::with_capacity(self.nbits / 4);
        for nibble in 0..self.nbits.div_ceil(4) {
            let mut v = 0u32;
            for b in 0..4 {
                v = v << 1 | self.get(nibble * 4 + b) as u32;
            }
            let _ = write!(out, "{v:x}");
        }
        out
    }
}

/// A trail of bonds: `atoms[k]` and `atoms[k + 1]` are joined by `bonds[k]`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BondPath {
    pub atoms: Vec<usize>,
    pub bonds: Vec<usize>,
}

impl BondPath {
    pub fn len(&self) -> usize {
        self.bonds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bonds.is_empty()
    }

    fn reversed(&self) -> BondPath {
        BondPath {
            atoms: self.atoms.iter().rev().copied().collect(),
            bonds: self.bonds.iter().rev().copied().collect(),
        }
    }
}

/// All bond trails (no bond used twice) with `min_len..=max_len` bonds,
/// each reported once regardless of direction.
pub fn enumerate_paths(mol: &MolGraph, min_len: usize, max_len: usize) -> Vec<BondPath> {
    fn extend(
        mol: &MolGraph,
        path: &mut BondPath,
        min_len: usize,
        max_len: usize,
        out: &mut BTreeSet<BondPath>,
    ) {
        if path.len() >= min_len.max(1) {
            let rev = path.reversed();
            out.insert(if rev < *path { rev } else { path.clone() });
        }
        if path.len() == max_len {
            return;
        }
        let last = *path.atoms.last().expect("paths start with an atom");
        for &(next, bond) in mol.neighbors(last) {
            if path.bonds.contains(&bond) {
                continue;
            }
            path.atoms.push(next);
            path.bonds.push(bond);
            extend(mol, path, min_len, max_len, out);
            path.atoms.pop();
            path.bonds.pop();
        }
    }

    let mut out = BTreeSet::new();
    if max_len == 0 {
        return Vec::new();
    }
    for start in 0..mol.atom_count() {
        let mut path = BondPath {
            atoms: vec![start],
            bonds: Vec::new(),
        };
        extend(mol, &mut path, min_len, max_len, &mut out);
    }
    out.into_iter().collect()
}

fn atom_symbol(mol: &MolGraph, atom: usize) -> String {
    let symbol = mol.atoms()[atom].element.symbol();
    if mol.is_aromatic_atom(atom) {
        symbol.to_lowercase()
    } else {
        symbol.to_string()
    }
}

/// Direction-independent text form of a path, such as `"C-C=O"`.
pub fn canonical_path_key(mol: &MolGraph, path: &BondPath) -> String {
    let render = |atoms: &mut dyn Iterator<Item = &usize>,
                  bonds: &mut dyn Iterator<Item = &usize>| {
        let mut s = String::new();
        let mut atoms = atoms.peekable();
        while let Some(&a) = atoms.next() {
            s.push_str(&atom_symbol(mol, a));
            if atoms.peek().is_some() {
                let &b = bonds.next().expect("one bond between consecutive atoms");
                s.push(mol.bonds()[b].kind.symbol());
            }
        }
        s
    };
    let forward = render(&mut path.atoms.iter(), &mut path.bonds.iter());
    let backward = render(&mut path.atoms.iter().rev(), &mut path.bonds.iter().rev());
    forward.min(backward)
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

struct SplitMix64(u64);

impl SplitMix64 {
    fn next(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform draw in `[0, n)` by multiply-high.
    fn below(&mut self, n: usize) -> usize {
        ((self.next() as u128 * n as u128) >> 64) as usize
    }
}

/// Bit positions set for one path key.
pub fn key_bits(key: &str, cfg: &FpConfig) -> Vec<usize> {
    let mut rng = SplitMix64(fnv1a64(key.as_bytes()));
    (0..cfg.bits_per_hash)
        .map(|_| rng.below(cfg.nbits))
        .collect()
}

pub fn path_fingerprint(mol: &MolGraph, cfg: &FpConfig) -> Result<Fingerprint, FingerprintError> {
    cfg.validate()?;
    let keys: BTreeSet<String> = enumerate_paths(mol, cfg.min_path, cfg.max_path)
        .iter()
        .map(|p| canonical_path_key(mol, p))
        .collect();
    Ok(Fingerprint::from_bits(
        cfg.nbits,
        keys.iter().flat_map(|k| key_bits(k, cfg)),
    ))
}

fn counts(a: &Fingerprint, b: &Fingerprint) -> Result<(f64, f64, f64), FingerprintError> {
    let c = a.common(b)?;
    Ok((c as f64, a.on_count() as f64, b.on_count() as f64))
}

/// Shared bookkeeping for empty inputs: both empty is a match, one empty is not.
fn coefficient(
    a: &Fingerprint,
    b: &Fingerprint,
    f: impl Fn(f64, f64, f64) -> f64,
) -> Result<f64, FingerprintError> {
    let (c, na, nb) = counts(a, b)?;
    Ok(match (na == 0.0, nb == 0.0) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => f(c, na, nb),
    })
}

pub fn tanimoto(a: &Fingerprint, b: &Fingerprint) -> Result<f64, FingerprintError> {
    coefficient(a, b, |c, na, nb| c / (na + nb - c))
}

pub fn dice(a: &Fingerprint, b: &Fingerprint) -> Result<f64, FingerprintError> {
    coefficient(a, b, |c, na, nb| 2.0 * c / (na + nb))
}

pub fn cosine(a: &Fingerprint, b: &Fingerprint) -> Result<f64, FingerprintError> {
    coefficient(a, b, |c, na, nb| c / (na * nb).sqrt())
}

/// `1 / (1 + d)` with `d` the distance between the unit-normalized pooled
/// vectors of the two molecules.
pub fn latent_similarity<T: Scalar>(
    a: &MolGraph,
    b: &MolGraph,
    params: &ModelParams<T>,
) -> Result<f64, FingerprintError> {
    let unit = |mol: &MolGraph| -> Result<Vec<f64>, FingerprintError> {
        let g: Vec<f64> = embed(mol, params)?
            .data()
            .iter()
            .map(|v| v.as_f64())
            .collect();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(FingerprintError::ZeroVector);
        }
        Ok(g.into_iter().map(|v| v / norm).collect())
    };
    let (ga, gb) = (unit(a)?, unit(b)?);
    let d = ga
        .iter()
        .zip(&gb)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    Ok(1.0 / (1.0 + d))
}
