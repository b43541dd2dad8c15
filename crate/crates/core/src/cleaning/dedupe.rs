//! Near-duplicate detection with MinHash signatures and LSH banding.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::text::{collapse_whitespace, fnv1a64, fold_case, fold_confusables};

const MERSENNE_61: u64 = (1 << 61) - 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DedupeError {
    #[error("invalid banding: {num_hashes} hashes cannot be split into {bands} bands")]
    InvalidBanding { num_hashes: usize, bands: usize },
    #[error("shingle size must be at least 1")]
    InvalidShingleSize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LshParams {
    pub shingle_size: usize,
    pub num_hashes: usize,
    pub bands: usize,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for LshParams {
    fn default() -> Self {
        Self {
            shingle_size: 3,
            num_hashes: 128,
            bands: 32,
            threshold: 0.8,
            seed: 0x5eed,
        }
    }
}

impl LshParams {
    pub fn validate(&self) -> Result<(), DedupeError> {
        if self.shingle_size == 0 {
            return Err(DedupeError::InvalidShingleSize);
        }
        if self.bands == 0 || self.num_hashes == 0 || !self.num_hashes.is_multiple_of(self.bands) {
            return Err(DedupeError::InvalidBanding {
                num_hashes: self.num_hashes,
                bands: self.bands,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DuplicateCluster {
    pub members: Vec<String>,
    pub representative: String,
    /// Estimated Jaccard for each candidate pair that joined the cluster.
    pub evidence: Vec<(String, String, f64)>,
}

/// Character shingles of the folded, whitespace-collapsed text. Text shorter
/// than `k` yields itself as the only shingle.
pub fn shingles(text: &str, k: usize) -> BTreeSet<u64> {
    let norm: Vec<char> = collapse_whitespace(&fold_confusables(&fold_case(text)))
        .chars()
        .collect();
    let mut out = BTreeSet::new();
    if norm.is_empty() {
        return out;
    }
    if norm.len() < k {
        out.insert(fnv1a64(norm.iter().collect::<String>().as_bytes()));
        return out;
    }
    for w in norm.windows(k) {
        out.insert(fnv1a64(w.iter().collect::<String>().as_bytes()));
    }
    out
}

pub fn exact_jaccard(a: &BTreeSet<u64>, b: &BTreeSet<u64>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection(b).count();
    inter as f64 / (a.len() + b.len() - inter) as f64
}

/// A family of universal hashes `(a·x + b) mod (2^61 − 1)`.
#[derive(Debug, Clone)]
pub struct MinHasher {
    coeffs: Vec<(u64, u64)>,
}

impl MinHasher {
    pub fn new(num_hashes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coeffs = (0..num_hashes)
            .map(|_| {
                (
                    rng.random_range(1..MERSENNE_61),
                    rng.random_range(0..MERSENNE_61),
                )
            })
            .collect();
        Self { coeffs }
    }

    pub fn signature(&self, set: &BTreeSet<u64>) -> Vec<u64> {
        self.coeffs
            .iter()
            .map(|&(a, b)| {
                set.iter()
                    .map(|&x| {
                        let x = x % MERSENNE_61;
                        ((u128::from(a) * u128::from(x) + u128::from(b)) % u128::from(MERSENNE_61))
                            as u64
                    })
                    .min()
                    .unwrap_or(u64::MAX)
            })
            .collect()
    }
}

pub fn estimate_jaccard(a: &[u64], b: &[u64]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / a.len() as f64
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Clusters `(record_id, identity text)` items whose estimated Jaccard
/// similarity reaches the threshold. Clusters are sorted by representative
/// (the smallest member id).
pub fn cluster_near_duplicates(
    items: &[(String, String)],
    params: &LshParams,
) -> Result<Vec<DuplicateCluster>, DedupeError> {
    params.validate()?;
    let hasher = MinHasher::new(params.num_hashes, params.seed);
    let sigs: Vec<Vec<u64>> = items
        .iter()
        .map(|(_, text)| hasher.signature(&shingles(text, params.shingle_size)))
        .collect();
    let rows = params.num_hashes / params.bands;

    let mut candidates = BTreeSet::new();
    for band in 0..params.bands {
        let mut buckets: HashMap<&[u64], Vec<usize>> = HashMap::new();
        for (i, sig) in sigs.iter().enumerate() {
            if items[i].1.trim().is_empty() {
                continue;
            }
            buckets
                .entry(&sig[band * rows..(band + 1) * rows])
                .or_default()
                .push(i);
        }
        for members in buckets.values().filter(|m| m.len() > 1) {
            for (x, &i) in members.iter().enumerate() {
                for &j in &members[x + 1..] {
                    candidates.insert((i.min(j), i.max(j)));
                }
            }
        }
    }

    let mut uf = UnionFind::new(items.len());
    let mut evidence = Vec::new();
    for (i, j) in candidates {
        let est = estimate_jaccard(&sigs[i], &sigs[j]);
        if est >= params.threshold {
            uf.union(i, j);
            evidence.push((i, j, est));
        }
    }

    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..items.len() {
        let root = uf.find(i);
        groups.entry(root).or_default().push(i);
    }
    let mut clusters: Vec<DuplicateCluster> = groups
        .into_iter()
        .filter(|(_, m)| m.len() >= 2)
        .map(|(root, members)| {
            let mut ids: Vec<String> = members.iter().map(|&i| items[i].0.clone()).collect();
            ids.sort();
            let ev = evidence
                .iter()
                .filter(|(i, _, _)| uf.find(*i) == root)
                .map(|&(i, j, e)| (items[i].0.clone(), items[j].0.clone(), e))
                .collect();
            DuplicateCluster {
                representative: ids[0].clone(),
                members: ids,
                evidence: ev,
            }
        })
        .collect();
    clusters.sort_by(|a, b| a.representative.cmp(&b.representative));
    Ok(clusters)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn items(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect()
    }

    #[test]
    fn identical_and_disjoint() {
        let p = LshParams::default();
        let c = cluster_near_duplicates(
            &items(&[
                ("r2", "Ivan Petrov 1985-02-01"),
                ("r1", "ivan  petrov 1985-02-01"),
            ]),
            &p,
        )
        .unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].members, ["r1", "r2"]);
        assert_eq!(c[0].representative, "r1");
        assert_eq!(c[0].evidence[0].2, 1.0);

        let c =
            cluster_near_duplicates(&items(&[("a", "abcdefgh"), ("b", "zyxwvuts")]), &p).unwrap();
        assert!(c.is_empty());
    }

    #[test]
    fn invalid_banding() {
        let p = LshParams {
            bands: 30,
            ..LshParams::default()
        };
        assert_eq!(
            cluster_near_duplicates(&[], &p),
            Err(DedupeError::InvalidBanding {
                num_hashes: 128,
                bands: 30
            })
        );
    }

    #[test]
    fn shingle_oracle() {
        let a = shingles("abcd", 3);
        let b = shingles("abce", 3);
        // {abc, bcd} vs {abc, bce}
        assert_eq!(exact_jaccard(&a, &b), 1.0 / 3.0);
    }
}
