//! Cosine-similarity kNN over sample embeddings, the normalized-weight
//! categorical neighbor sampler, and identity-aware image similarity.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::cosine_similarity;

#[derive(Debug, Clone)]
pub struct IndexEntry {
    pub sample_id: usize,
    pub identity: String,
    pub embedding: Vec<f64>,
    pub condition: Vec<f64>,
}

#[derive(Debug, Clone)]
struct CachedNeighbor {
    /// Position in `entries`, not the sample id.
    pos: usize,
    similarity: f64,
}

#[derive(Debug, Clone)]
pub struct EmbeddingIndex {
    entries: Vec<IndexEntry>,
    k: usize,
    /// Per entry: its k nearest neighbors, similarity descending.
    neighbors: Vec<Vec<CachedNeighbor>>,
}

#[derive(Debug, Clone)]
pub struct NeighborDraw {
    pub neighbor_id: usize,
    pub similarity: f64,
    pub weight: f64,
    pub same_identity: bool,
    pub condition: Vec<f64>,
}

impl EmbeddingIndex {
    /// Precomputes each sample's k highest-cosine neighbors (self excluded)
    /// by exhaustive scan.
    pub fn build(entries: Vec<IndexEntry>, k: usize) -> Result<EmbeddingIndex> {
        let n = entries.len();
        if n < 2 {
            return Err(Error::Contract("index needs at least 2 samples".into()));
        }
        if k < 1 || k >= n {
            return Err(Error::Contract(format!("k = {k} outside 1..{n}")));
        }
        let dim = entries[0].embedding.len();
        for e in &entries {
            if e.embedding.len() != dim {
                return Err(Error::Shape("embeddings have mixed dimensions".into()));
            }
            if crate::tensor::norm(&e.embedding) == 0.0 {
                return Err(Error::Contract(format!(
                    "zero-norm embedding for sample {}",
                    e.sample_id
                )));
            }
        }
        let mut neighbors = Vec::with_capacity(n);
        for i in 0..n {
            let mut sims: Vec<CachedNeighbor> = (0..n)
                .filter(|j| *j != i)
                .map(|j| CachedNeighbor {
                    pos: j,
                    similarity: cosine_similarity(&entries[i].embedding, &entries[j].embedding),
                })
                .collect();
            sims.sort_by(|a, b| {
                b.similarity
                    .partial_cmp(&a.similarity)
                    .unwrap()
                    .then(a.pos.cmp(&b.pos))
            });
            sims.truncate(k);
            neighbors.push(sims);
        }
        Ok(EmbeddingIndex {
            entries,
            k,
            neighbors,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, pos: usize) -> &IndexEntry {
        &self.entries[pos]
    }

    fn position_of(&self, sample_id: usize) -> Result<usize> {
        self.entries
            .iter()
            .position(|e| e.sample_id == sample_id)
            .ok_or_else(|| Error::Contract(format!("sample {sample_id} not in index")))
    }

    /// Cached (neighbor sample id, similarity) list for a query, similarity
    /// descending.
    pub fn neighbors_of(&self, sample_id: usize) -> Result<Vec<(usize, f64)>> {
        let pos = self.position_of(sample_id)?;
        Ok(self.neighbors[pos]
            .iter()
            .map(|c| (self.entries[c.pos].sample_id, c.similarity))
            .collect())
    }

    /// Normalized sampling weights over the query's cached neighbors.
    /// Non-positive similarities are dropped before normalization; if none
    /// are positive the draw falls back to uniform over the k neighbors.
    fn weights(&self, pos: usize) -> Vec<(usize, f64, f64)> {
        let cached = &self.neighbors[pos];
        let positive: Vec<&CachedNeighbor> =
            cached.iter().filter(|c| c.similarity > 0.0).collect();
        if positive.is_empty() {
            let w = 1.0 / cached.len() as f64;
            return cached.iter().map(|c| (c.pos, c.similarity, w)).collect();
        }
        let total: f64 = positive.iter().map(|c| c.similarity).sum();
        positive
            .iter()
            .map(|c| (c.pos, c.similarity, c.similarity / total))
            .collect()
    }

    pub fn sample_neighbor<R: Rng>(&self, sample_id: usize, rng: &mut R) -> Result<NeighborDraw> {
        let pos = self.position_of(sample_id)?;
        let weights = self.weights(pos);
        let u: f64 = rng.gen::<f64>();
        let mut acc = 0.0;
        let mut chosen = weights.len() - 1;
        for (i, (_, _, w)) in weights.iter().enumerate() {
            acc += w;
            if u < acc {
                chosen = i;
                break;
            }
        }
        let (npos, s, w) = weights[chosen];
        let neighbor = &self.entries[npos];
        Ok(NeighborDraw {
            neighbor_id: neighbor.sample_id,
            similarity: s,
            weight: w,
            same_identity: neighbor.identity == self.entries[pos].identity,
            condition: neighbor.condition.clone(),
        })
    }

    /// Audit dump rows: (query id, neighbor id, similarity, weight).
    pub fn dump_rows(&self) -> Vec<(usize, usize, f64, f64)> {
        let mut rows = Vec::new();
        for pos in 0..self.entries.len() {
            let qid = self.entries[pos].sample_id;
            for (npos, s, w) in self.weights(pos) {
                rows.push((qid, self.entries[npos].sample_id, s, w));
            }
        }
        rows
    }
}

/// max(0, s)^(a1 + a2 * [different identity]); s clamped to [0, 1] before
/// exponentiation so fractional powers stay defined.
pub fn img_similarity(s: f64, same_identity: bool, a1: f64, a2: f64) -> f64 {
    let base = s.clamp(0.0, 1.0);
    if base == 0.0 {
        return 0.0;
    }
    let exponent = a1 + if same_identity { 0.0 } else { a2 };
    base.powf(exponent)
}
