//! Frozen text encoder: signed feature hashing over word n-grams.
//!
//! Every n-gram is hashed with FNV-1a 64 over `hash_seed` (little-endian bytes)
//! followed by the UTF-8 n-gram, where the tokens of a bigram are joined by a
//! single space. The bucket is `hash % dim` and bit 63 selects the sign.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::{fnv1a, fnv1a_extend};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub dim: usize,
    pub ngram_orders: BTreeSet<usize>,
    pub hash_seed: u64,
    pub normalize: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            dim: 512,
            ngram_orders: [1, 2].into_iter().collect(),
            hash_seed: 0,
            normalize: true,
        }
    }
}

impl EncoderConfig {
    pub fn with_dim(dim: usize) -> Self {
        Self {
            dim,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 8 {
            return Err(Error::InvalidConfig(format!(
                "encoder dim must be at least 8, got {}",
                self.dim
            )));
        }
        if self.ngram_orders.is_empty() {
            return Err(Error::InvalidConfig("ngram_orders is empty".into()));
        }
        if let Some(bad) = self.ngram_orders.iter().find(|&&n| n != 1 && n != 2) {
            return Err(Error::InvalidConfig(format!(
                "unsupported n-gram order {bad}"
            )));
        }
        Ok(())
    }
}

/// A dense text embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn zeros(dim: usize) -> Self {
        Embedding(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.0)
    }
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn normalize_in_place(v: &mut [f64]) {
    let norm = l2_norm(v);
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Lowercased maximal runs of alphanumeric code points.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            current.extend(c.to_lowercase());
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Bucket index and sign of one n-gram.
pub fn hash_ngram(ngram: &str, config: &EncoderConfig) -> (usize, f64) {
    let h = fnv1a_extend(fnv1a(&config.hash_seed.to_le_bytes()), ngram.as_bytes());
    let index = (h % config.dim as u64) as usize;
    let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
    (index, sign)
}

pub fn embed(text: &str, config: &EncoderConfig) -> Embedding {
    let tokens = tokenize(text);
    let mut values = vec![0.0; config.dim];
    for &order in &config.ngram_orders {
        if order == 0 || tokens.len() < order {
            continue;
        }
        for window in tokens.windows(order) {
            let gram = window.join(" ");
            let (index, sign) = hash_ngram(&gram, config);
            values[index] += sign;
        }
    }
    if config.normalize {
        normalize_in_place(&mut values);
    }
    Embedding(values)
}

/// Arithmetic mean of precomputed vectors, renormalised when `normalize` is set.
pub fn mean_embedding<'a, I>(vectors: I, dim: usize, normalize: bool) -> Result<Embedding>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut acc = vec![0.0; dim];
    let mut count = 0usize;
    for v in vectors {
        if v.len() != dim {
            return Err(Error::dims(dim, v.len()));
        }
        acc.iter_mut().zip(v).for_each(|(a, x)| *a += x);
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyInput);
    }
    let n = count as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    if normalize {
        normalize_in_place(&mut acc);
    }
    Ok(Embedding(acc))
}

pub fn embed_mean<S: AsRef<str>>(texts: &[S], config: &EncoderConfig) -> Result<Embedding> {
    if texts.is_empty() {
        return Err(Error::EmptyInput);
    }
    let embedded: Vec<Embedding> = texts.iter().map(|t| embed(t.as_ref(), config)).collect();
    mean_embedding(
        embedded.iter().map(|e| e.as_slice()),
        config.dim,
        config.normalize,
    )
}

#[derive(Debug, Deserialize)]
struct PrecomputedHeader {
    dim: usize,
}

#[derive(Debug, Deserialize)]
struct PrecomputedRow {
    id: String,
    vector: Vec<f64>,
}

/// Loads a precomputed-embedding file: a `{dim}` header line followed by
/// `{id, vector}` rows.
pub fn load_precomputed(path: &Path, expected_dim: usize) -> Result<HashMap<String, Embedding>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(f).lines().enumerate();
    let header: PrecomputedHeader = loop {
        match lines.next() {
            Some((_, line)) => {
                let line = line.map_err(|e| Error::io(path, e))?;
                if !line.trim().is_empty() {
                    break serde_json::from_str(&line)?;
                }
            }
            None => return Err(Error::EmptyInput),
        }
    };
    if header.dim != expected_dim {
        return Err(Error::dims(expected_dim, header.dim));
    }
    let mut out = HashMap::new();
    for (row, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: PrecomputedRow =
            serde_json::from_str(&line).map_err(|e| Error::MalformedRow {
                row,
                reason: e.to_string(),
            })?;
        if parsed.vector.len() != expected_dim {
            return Err(Error::dims(expected_dim, parsed.vector.len()));
        }
        out.insert(parsed.id, Embedding(parsed.vector));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(dim: usize, seed: u64) -> EncoderConfig {
        EncoderConfig {
            dim,
            hash_seed: seed,
            ..EncoderConfig::default()
        }
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("Hello, WORLD!"), vec!["hello", "world"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("a1-b2 c"), vec!["a1", "b2", "c"]);
        assert_eq!(tokenize("Ünïcode ÄÖ"), vec!["ünïcode", "äö"]);
    }

    #[test]
    fn empty_text_is_zero_vector() {
        let e = embed("", &cfg(16, 3));
        assert!(e.0.iter().all(|&x| x == 0.0));
        assert_eq!(e.norm(), 0.0);
    }

    #[test]
    fn single_token_bucket_is_pinned() {
        // FNV-1a 64 over 8 zero bytes followed by b"abc", evaluated independently:
        // 0xab20dcdb6214056b -> bucket 3 of 8, bit 63 set -> sign -1.
        let config = EncoderConfig {
            dim: 8,
            ngram_orders: [1].into_iter().collect(),
            hash_seed: 0,
            normalize: false,
        };
        let e = embed("abc", &config);
        let mut expected = vec![0.0; 8];
        expected[3] = -1.0;
        assert_eq!(e.0, expected);
    }

    #[test]
    fn normalized_embeddings_have_unit_norm() {
        let e = embed("the quick brown fox", &cfg(64, 1));
        assert!((e.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn embed_mean_matches_single_and_duplicates() {
        let c = cfg(32, 9);
        let one = embed("some text here", &c);
        let single = embed_mean(&["some text here"], &c).unwrap();
        for (a, b) in single.0.iter().zip(&one.0) {
            assert!((a - b).abs() < 1e-15);
        }
        let two = embed_mean(&["some text here", "some text here"], &c).unwrap();
        for (a, b) in two.0.iter().zip(&one.0) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(matches!(
            embed_mean::<&str>(&[], &c),
            Err(Error::EmptyInput)
        ));
    }

    #[test]
    fn mean_of_orthogonal_unit_vectors() {
        // Search for two single-token texts in disjoint buckets.
        let c = EncoderConfig {
            dim: 64,
            ngram_orders: [1].into_iter().collect(),
            hash_seed: 5,
            normalize: true,
        };
        let a = "alpha";
        let (ia, _) = hash_ngram(a, &c);
        let b = (0..100)
            .map(|i| format!("tok{i}"))
            .find(|t| hash_ngram(t, &c).0 != ia)
            .unwrap();
        let raw = mean_embedding(
            [embed(a, &c).as_slice(), embed(&b, &c).as_slice()],
            64,
            false,
        )
        .unwrap();
        // Two orthogonal unit vectors averaged: norm sqrt(2)/2.
        assert!((raw.norm() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        let m = embed_mean(&[a, b.as_str()], &c).unwrap();
        assert!((m.norm() - 1.0).abs() < 1e-15);
        let nz: Vec<f64> = m.0.iter().copied().filter(|x| *x != 0.0).collect();
        assert_eq!(nz.len(), 2);
        for x in nz {
            assert!((x.abs() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        }
    }

    #[test]
    fn seed_changes_some_embedding() {
        let corpus: Vec<String> = (0..100)
            .map(|i| format!("sample text number {i} with words w{} w{}", i * 7, i * 13))
            .collect();
        let a = cfg(128, 0);
        let b = cfg(128, 1);
        assert!(corpus.iter().any(|t| embed(t, &a) != embed(t, &b)));
    }

    #[test]
    fn config_validation() {
        assert!(cfg(8, 0).validate().is_ok());
        assert!(cfg(7, 0).validate().is_err());
        let mut c = cfg(16, 0);
        c.ngram_orders.clear();
        assert!(c.validate().is_err());
    }

    #[test]
    fn precomputed_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("emb.jsonl");
        std::fs::write(
            &p,
            "{\"dim\":3}\n{\"id\":\"a\",\"vector\":[1.0,0.0,0.5]}\n{\"id\":\"b\",\"vector\":[0.0,0.0,0.0]}\n",
        )
        .unwrap();
        let m = load_precomputed(&p, 3).unwrap();
        assert_eq!(m["a"].0, vec![1.0, 0.0, 0.5]);
        assert!(matches!(
            load_precomputed(&p, 4),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
