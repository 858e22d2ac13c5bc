use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numerics::{shuffle, RngStream};

/// A labeling of datapoints by id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Clustering {
    ids: Vec<u64>,
    labels: Vec<usize>,
}

impl Clustering {
    pub fn new(ids: Vec<u64>, labels: Vec<usize>) -> Result<Self> {
        if ids.len() != labels.len() {
            return Err(Error::Shape(format!("{} ids for {} labels", ids.len(), labels.len())));
        }
        Ok(Self { ids, labels })
    }

    pub fn from_pairs(pairs: &[(u64, usize)]) -> Self {
        Self {
            ids: pairs.iter().map(|p| p.0).collect(),
            labels: pairs.iter().map(|p| p.1).collect(),
        }
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// `other`'s labels reordered to follow `self`'s id order.
    fn align(&self, other: &Clustering) -> Result<Vec<usize>> {
        if self.ids == other.ids {
            return Ok(other.labels.clone());
        }
        if self.len() != other.len() {
            return Err(Error::InvalidInput(format!(
                "clusterings cover {} and {} points",
                self.len(),
                other.len()
            )));
        }
        let lookup: HashMap<u64, usize> = other.ids.iter().copied().zip(other.labels.iter().copied()).collect();
        self.ids
            .iter()
            .map(|id| {
                lookup
                    .get(id)
                    .copied()
                    .ok_or_else(|| Error::InvalidInput(format!("id {id} missing from second clustering")))
            })
            .collect()
    }
}

fn choose2(n: usize) -> f64 {
    (n as f64) * (n as f64 - 1.0) / 2.0
}

/// ARI of two label vectors over the same points.
pub fn ari_labels(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "label vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::InvalidInput("ARI needs at least 2 points".into()));
    }
    let ka = a.iter().max().unwrap() + 1;
    let kb = b.iter().max().unwrap() + 1;
    let mut rows = vec![0usize; ka];
    let mut cols = vec![0usize; kb];
    for (&x, &y) in a.iter().zip(b) {
        rows[x] += 1;
        cols[y] += 1;
    }
    let index: f64 = if ka.saturating_mul(kb) <= 1 << 16 {
        let mut table = vec![0usize; ka * kb];
        for (&x, &y) in a.iter().zip(b) {
            table[x * kb + y] += 1;
        }
        table.iter().map(|&c| choose2(c)).sum()
    } else {
        let mut table: HashMap<(usize, usize), usize> = HashMap::new();
        for (&x, &y) in a.iter().zip(b) {
            *table.entry((x, y)).or_default() += 1;
        }
        table.values().map(|&c| choose2(c)).sum()
    };
    let sa: f64 = rows.iter().map(|&c| choose2(c)).sum();
    let sb: f64 = cols.iter().map(|&c| choose2(c)).sum();
    let expected = sa * sb / choose2(a.len());
    let max = 0.5 * (sa + sb);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// Contingency-table adjusted Rand index, matching points by id.
pub fn adjusted_rand_index(a: &Clustering, b: &Clustering) -> Result<f64> {
    ari_labels(&a.labels, &a.align(b)?)
}

/// Share of label permutations of `b` whose ARI with `a` reaches the observed
/// value, with add-one smoothing: `(count + 1) / (P + 1)`.
pub fn permutation_p_value(a: &Clustering, b: &Clustering, permutations: usize, rng: &mut RngStream) -> Result<f64> {
    if permutations == 0 {
        return Err(Error::InvalidParameter("need at least one permutation".into()));
    }
    let mut bl = a.align(b)?;
    let observed = ari_labels(&a.labels, &bl)?;
    let mut count = 0usize;
    for _ in 0..permutations {
        shuffle(&mut bl, rng);
        if ari_labels(&a.labels, &bl)? >= observed {
            count += 1;
        }
    }
    Ok((count + 1) as f64 / (permutations + 1) as f64)
}
