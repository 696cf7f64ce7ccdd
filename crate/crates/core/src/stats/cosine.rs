// SPDX-License-Identifier: MIT OR Apache-2.0

use crate::data::EmbeddingTable;
use crate::error::{Error, Result};

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::InvalidArgument(format!(
            "cosine of vectors with dims {} and {}",
            u.len(),
            v.len()
        )));
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::InvalidArgument("cosine with a zero vector".into()));
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// All pairwise cosines of a vector set, stored as the condensed upper
/// triangle (pairs (0,1), (0,2), ..., (1,2), ...).
#[derive(Debug, Clone)]
pub struct CosineMatrix {
    n: usize,
    values: Vec<f64>,
}

impl CosineMatrix {
    pub fn new<V: AsRef<[f64]>>(vectors: &[V]) -> Result<Self> {
        let units = vectors
            .iter()
            .map(|v| {
                let v = v.as_ref();
                let n = norm(v);
                if n == 0.0 {
                    return Err(Error::InvalidArgument("cosine with a zero vector".into()));
                }
                Ok(v.iter().map(|x| x / n).collect::<Vec<f64>>())
            })
            .collect::<Result<Vec<_>>>()?;
        let n = units.len();
        let mut values = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                values.push(dot(&units[i], &units[j]).clamp(-1.0, 1.0));
            }
        }
        Ok(Self { n, values })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn offset(&self, i: usize, j: usize) -> usize {
        i * self.n - i * (i + 1) / 2 + (j - i - 1)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match i.cmp(&j) {
            std::cmp::Ordering::Equal => 1.0,
            std::cmp::Ordering::Less => self.values[self.offset(i, j)],
            std::cmp::Ordering::Greater => self.values[self.offset(j, i)],
        }
    }

    /// Every unordered pair's cosine.
    pub fn pair_values(&self) -> &[f64] {
        &self.values
    }

    /// Mean cosine over unordered pairs of `members`; `None` below two.
    pub fn mean_within(&self, members: &[usize]) -> Option<f64> {
        if members.len() < 2 {
            return None;
        }
        let mut sum = 0.0;
        let mut count = 0usize;
        for (a, &i) in members.iter().enumerate() {
            for &j in &members[a + 1..] {
                sum += self.get(i, j);
                count += 1;
            }
        }
        Some(sum / count as f64)
    }
}

/// Mean cosine over all unordered pairs of the tokens that have embeddings.
pub fn mean_pairwise_cosine<S: AsRef<str>>(tokens: &[S], emb: &EmbeddingTable) -> Result<f64> {
    let vectors: Vec<&[f64]> = tokens.iter().filter_map(|t| emb.get(t.as_ref())).collect();
    if vectors.len() < 2 {
        return Err(Error::Insufficient(format!(
            "mean pairwise cosine needs 2 resolvable tokens, found {}",
            vectors.len()
        )));
    }
    let m = CosineMatrix::new(&vectors)?;
    let all: Vec<usize> = (0..m.len()).collect();
    Ok(m.mean_within(&all).expect("at least two members"))
}
