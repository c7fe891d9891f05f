//! Hashed word n-gram features.

use serde::{Deserialize, Serialize};

/// Inputs longer than this many word tokens are truncated before hashing.
pub const MAX_TOKENS: usize = 128;

/// Maps text to a fixed-width sparse vector by hashing word n-grams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureHasher {
    pub ngram_min: usize,
    pub ngram_max: usize,
    pub dim: u32,
    pub salt: u64,
}

impl Default for FeatureHasher {
    fn default() -> Self {
        Self { ngram_min: 1, ngram_max: 2, dim: 1 << 12, salt: 0 }
    }
}

impl FeatureHasher {
    pub fn new(ngram_min: usize, ngram_max: usize, dim: u32, salt: u64) -> Self {
        assert!(dim >= 2, "feature dimension must be at least 2");
        assert!(ngram_min >= 1 && ngram_min <= ngram_max, "invalid n-gram range");
        Self { ngram_min, ngram_max, dim, salt }
    }

    /// Lowercased n-gram counts, L2-normalized. Empty text gives the zero
    /// vector.
    pub fn featurize(&self, text: &str) -> FeatureVector {
        let tokens = tokenize(text);
        let mut raw: Vec<(u32, f64)> = Vec::new();
        for n in self.ngram_min..=self.ngram_max {
            for gram in tokens.windows(n) {
                raw.push((self.bucket(gram), 1.0));
            }
        }
        let mut v = FeatureVector::from_pairs(self.dim, raw);
        v.normalize();
        v
    }

    fn bucket(&self, gram: &[String]) -> u32 {
        let mut h = Fnv1a::new();
        h.write(&self.salt.to_le_bytes());
        for (i, tok) in gram.iter().enumerate() {
            if i > 0 {
                h.write(&[0x1f]);
            }
            h.write(tok.as_bytes());
        }
        (h.finish() % self.dim as u64) as u32
    }
}

/// Lowercased runs of alphanumeric characters, at most [`MAX_TOKENS`].
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .take(MAX_TOKENS)
        .map(str::to_lowercase)
        .collect()
}

struct Fnv1a(u64);

impl Fnv1a {
    fn new() -> Self {
        Fnv1a(0xcbf2_9ce4_8422_2325)
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }

    fn finish(&self) -> u64 {
        self.0
    }
}

/// Sparse vector with strictly increasing indices below `dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    dim: u32,
    entries: Vec<(u32, f64)>,
}

impl FeatureVector {
    pub fn zeros(dim: u32) -> Self {
        Self { dim, entries: Vec::new() }
    }

    /// Sums duplicate indices and drops explicit zeros.
    ///
    /// Panics if an index is out of range or a weight is not finite.
    pub fn from_pairs(dim: u32, mut pairs: Vec<(u32, f64)>) -> Self {
        pairs.sort_by_key(|p| p.0);
        let mut entries: Vec<(u32, f64)> = Vec::with_capacity(pairs.len());
        for (i, w) in pairs {
            assert!(i < dim, "feature index {i} out of range for dimension {dim}");
            assert!(w.is_finite(), "non-finite feature weight");
            match entries.last_mut() {
                Some(last) if last.0 == i => last.1 += w,
                _ => entries.push((i, w)),
            }
        }
        entries.retain(|e| e.1 != 0.0);
        Self { dim, entries }
    }

    /// Dense input, zeros dropped.
    pub fn from_dense(values: &[f64]) -> Self {
        let pairs = values.iter().enumerate().map(|(i, &w)| (i as u32, w)).collect();
        Self::from_pairs(values.len() as u32, pairs)
    }

    pub fn dim(&self) -> u32 {
        self.dim
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|e| e.1 * e.1).sum::<f64>().sqrt()
    }

    fn normalize(&mut self) {
        let norm = self.norm();
        if norm > 0.0 {
            for e in &mut self.entries {
                e.1 /= norm;
            }
        }
    }

    /// Dot product with a dense row of length `dim`.
    pub fn dot(&self, row: &[f64]) -> f64 {
        self.entries.iter().map(|&(i, w)| row[i as usize] * w).sum()
    }

    pub fn squared_distance(&self, other: &FeatureVector) -> f64 {
        let (a, b) = (&self.entries, &other.entries);
        let (mut i, mut j, mut acc) = (0, 0, 0.0);
        while i < a.len() || j < b.len() {
            let d = match (a.get(i), b.get(j)) {
                (Some(x), Some(y)) if x.0 == y.0 => {
                    i += 1;
                    j += 1;
                    x.1 - y.1
                }
                (Some(x), Some(y)) if x.0 < y.0 => {
                    i += 1;
                    x.1
                }
                (Some(x), None) => {
                    i += 1;
                    x.1
                }
                (_, Some(y)) => {
                    j += 1;
                    y.1
                }
                (None, None) => unreachable!(),
            };
            acc += d * d;
        }
        acc
    }

    pub fn distance(&self, other: &FeatureVector) -> f64 {
        self.squared_distance(other).sqrt()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim as usize];
        for &(i, w) in &self.entries {
            out[i as usize] = w;
        }
        out
    }
}
