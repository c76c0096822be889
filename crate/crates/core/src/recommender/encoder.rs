use std::borrow::Cow;
use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::rng;

/// A fixed-width text embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn width(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Anything that maps text to a fixed-width vector.
pub trait TextEncoder {
    fn width(&self) -> usize;
    fn encode(&self, text: &str) -> Embedding;
}

/// Lowercased alphanumeric runs. `[MASK]` becomes the token `mask`.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// 64-bit FNV-1a; stable across platforms and toolchains.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Hashed bag of words followed by a learned linear projection to `hidden` dims.
///
/// Term counts are optionally scaled by inverse document frequency fitted on
/// the training texts. Once fitted, buckets never seen in training carry
/// weight 0.
///
/// The projection is logically a dense `2^hash_bits × hidden` matrix. Only the
/// rows touched by training are stored; every other row is regenerated on
/// demand from the init seed, so an unseen bucket always projects to the same
/// initial vector.
#[derive(Debug, Clone, PartialEq)]
pub struct HashedBowEncoder {
    hash_bits: u32,
    hidden: usize,
    init_seed: u64,
    rows: BTreeMap<u32, Vec<f64>>,
    idf: BTreeMap<u32, f64>,
}

impl HashedBowEncoder {
    pub fn new(hash_bits: u32, hidden: usize, init_seed: u64) -> Self {
        assert!((1..=24).contains(&hash_bits), "hash_bits must be in 1..=24");
        assert!(hidden > 0, "hidden width must be positive");
        HashedBowEncoder {
            hash_bits,
            hidden,
            init_seed,
            rows: BTreeMap::new(),
            idf: BTreeMap::new(),
        }
    }

    pub(crate) fn from_parts(
        hash_bits: u32,
        hidden: usize,
        init_seed: u64,
        rows: BTreeMap<u32, Vec<f64>>,
        idf: BTreeMap<u32, f64>,
    ) -> Self {
        HashedBowEncoder {
            hash_bits,
            hidden,
            init_seed,
            rows,
            idf,
        }
    }

    /// Smoothed IDF, `ln((1 + n) / (1 + df)) + 1`, over `docs`.
    pub fn fit_idf<'a, I: IntoIterator<Item = &'a str>>(&mut self, docs: I) {
        let mut df: BTreeMap<u32, usize> = BTreeMap::new();
        let mut n = 0usize;
        for doc in docs {
            n += 1;
            for (bucket, _) in self.featurize(doc) {
                *df.entry(bucket).or_default() += 1;
            }
        }
        self.idf = df
            .into_iter()
            .map(|(b, d)| (b, ((1 + n) as f64 / (1 + d) as f64).ln() + 1.0))
            .collect();
    }

    pub(crate) fn idf(&self) -> &BTreeMap<u32, f64> {
        &self.idf
    }

    /// 1 before IDF is fitted; afterwards the bucket's IDF, or 0 if unseen.
    pub fn term_weight(&self, bucket: u32) -> f64 {
        if self.idf.is_empty() {
            1.0
        } else {
            self.idf.get(&bucket).copied().unwrap_or(0.0)
        }
    }

    pub fn hash_bits(&self) -> u32 {
        self.hash_bits
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn buckets(&self) -> u32 {
        1 << self.hash_bits
    }

    pub(crate) fn stored_rows(&self) -> &BTreeMap<u32, Vec<f64>> {
        &self.rows
    }

    pub fn bucket(&self, token: &str) -> u32 {
        (fnv1a(token.as_bytes()) & u64::from(self.buckets() - 1)) as u32
    }

    /// Sparse term counts as `(bucket, count)` sorted by bucket.
    pub fn featurize(&self, text: &str) -> Vec<(u32, f64)> {
        let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
        for tok in tokenize(text) {
            *counts.entry(self.bucket(&tok)).or_insert(0.0) += 1.0;
        }
        counts.into_iter().collect()
    }

    /// Counts times term weight, zero-weight buckets dropped.
    pub fn weighted_features(&self, text: &str) -> Vec<(u32, f64)> {
        self.featurize(text)
            .into_iter()
            .map(|(b, c)| (b, c * self.term_weight(b)))
            .filter(|(_, v)| *v != 0.0)
            .collect()
    }

    /// Weighted counts scaled to unit L2 norm (empty input stays empty).
    pub fn normalized_features(&self, text: &str) -> Vec<(u32, f64)> {
        let mut feats = self.weighted_features(text);
        let norm = feats.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for (_, v) in &mut feats {
                *v /= norm;
            }
        }
        feats
    }

    fn initial_row(&self, bucket: u32) -> Vec<f64> {
        let bound = 1.0 / (self.hidden as f64).sqrt();
        let mut base = rng::substream(self.init_seed, "encoder-rows");
        let mut key = [0u8; 32];
        base.fill(&mut key);
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(u64::from(bucket));
        (0..self.hidden).map(|_| rng.gen_range(-bound..=bound)).collect()
    }

    pub fn row(&self, bucket: u32) -> Cow<'_, [f64]> {
        match self.rows.get(&bucket) {
            Some(r) => Cow::Borrowed(r),
            None => Cow::Owned(self.initial_row(bucket)),
        }
    }

    pub fn row_mut(&mut self, bucket: u32) -> &mut Vec<f64> {
        if !self.rows.contains_key(&bucket) {
            let init = self.initial_row(bucket);
            self.rows.insert(bucket, init);
        }
        self.rows.get_mut(&bucket).expect("inserted above")
    }

    /// Projection of arbitrary sparse features.
    pub fn project(&self, features: &[(u32, f64)]) -> Embedding {
        let mut out = vec![0.0; self.hidden];
        for &(bucket, weight) in features {
            let row = self.row(bucket);
            for (o, r) in out.iter_mut().zip(row.iter()) {
                *o += weight * r;
            }
        }
        Embedding(out)
    }

    /// Projection of weighted term counts before normalization, linear in
    /// repeated tokens.
    pub fn encode_raw(&self, text: &str) -> Embedding {
        self.project(&self.weighted_features(text))
    }
}

impl TextEncoder for HashedBowEncoder {
    fn width(&self) -> usize {
        self.hidden
    }

    fn encode(&self, text: &str) -> Embedding {
        self.project(&self.normalized_features(text))
    }
}
