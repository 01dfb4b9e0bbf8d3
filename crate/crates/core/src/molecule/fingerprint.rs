//! Morgan-style circular fingerprints and Tanimoto similarity.

use super::MolecularGraph;
use crate::error::{Error, Result};

pub const DEFAULT_NBITS: usize = 2048;
pub const DEFAULT_RADIUS: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Fingerprint {
    words: Vec<u64>,
    nbits: usize,
    radius: usize,
}

impl Fingerprint {
    pub fn new(nbits: usize, radius: usize) -> Self {
        Fingerprint {
            words: vec![0; nbits.div_ceil(64)],
            nbits,
            radius,
        }
    }

    pub fn from_bits(bits: &[usize], nbits: usize) -> Self {
        let mut fp = Self::new(nbits, 0);
        for &b in bits {
            fp.set(b);
        }
        fp
    }

    pub fn set(&mut self, bit: usize) {
        let bit = bit % self.nbits;
        self.words[bit / 64] |= 1 << (bit % 64);
    }

    pub fn get(&self, bit: usize) -> bool {
        bit < self.nbits && self.words[bit / 64] >> (bit % 64) & 1 == 1
    }

    pub fn nbits(&self) -> usize {
        self.nbits
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn popcount(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }
}

// FNV-1a over 64-bit words with a splitmix finalizer; stable across
// platforms and compiler versions.
fn hash_words(words: &[u64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for w in words {
        for byte in w.to_le_bytes() {
            h ^= u64::from(byte);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

fn element_code(element: &str) -> u64 {
    element
        .bytes()
        .fold(0u64, |acc, b| acc.wrapping_mul(131).wrapping_add(u64::from(b)))
}

pub fn morgan_fingerprint(g: &MolecularGraph, radius: usize, nbits: usize) -> Fingerprint {
    let mut fp = Fingerprint::new(nbits, radius);
    let mut codes: Vec<u64> = g
        .atoms
        .iter()
        .enumerate()
        .map(|(i, a)| {
            hash_words(&[
                element_code(&a.element),
                a.charge as i64 as u64,
                u64::from(a.aromatic),
                g.degree(i) as u64,
                u64::from(g.total_hydrogens(i)),
            ])
        })
        .collect();
    for &c in &codes {
        fp.set((c % nbits as u64) as usize);
    }
    for round in 0..radius {
        let next: Vec<u64> = (0..g.atoms.len())
            .map(|i| {
                let mut env: Vec<(u64, u64)> = g
                    .neighbors(i)
                    .map(|(j, order)| (order.code(), codes[j]))
                    .collect();
                env.sort_unstable();
                let mut words = Vec::with_capacity(2 + 2 * env.len());
                words.push(round as u64 + 1);
                words.push(codes[i]);
                for (o, c) in env {
                    words.push(o);
                    words.push(c);
                }
                hash_words(&words)
            })
            .collect();
        for &c in &next {
            fp.set((c % nbits as u64) as usize);
        }
        codes = next;
    }
    fp
}

/// `|a ∧ b| / |a ∨ b|`, or 0 when both are empty.
pub fn tanimoto(a: &Fingerprint, b: &Fingerprint) -> Result<f64> {
    if a.nbits != b.nbits {
        return Err(Error::SizeMismatch(a.nbits, b.nbits));
    }
    let (mut inter, mut union) = (0u32, 0u32);
    for (x, y) in a.words.iter().zip(&b.words) {
        inter += (x & y).count_ones();
        union += (x | y).count_ones();
    }
    Ok(if union == 0 {
        0.0
    } else {
        f64::from(inter) / f64::from(union)
    })
}
