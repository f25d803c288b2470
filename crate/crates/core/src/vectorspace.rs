//! TF-IDF vector space with global inverse document frequencies.
//!
//! IDF is `ln(N / df)` without smoothing, so a term present in every
//! document carries no weight. Cosine distance between a zero vector and
//! anything is defined as 1.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cosine-distance radius for near-duplicate matching.
///
/// With bigram vectors over a corpus where the template is rare, variants of
/// a ~12-token message that differ by one appended word sit near distance
/// 0.3 and unrelated messages at 1.0. A substitution in the middle of such a
/// message changes two bigrams and lands near 0.45, outside the radius.
pub const DEFAULT_RADIUS: f64 = 0.4;
pub const DEFAULT_MIN_NEIGHBORS: usize = 10;

/// Contiguous n-grams of order 1 or 2; bigrams are joined with a space.
pub fn ngrams<S: AsRef<str>>(tokens: &[S], order: usize) -> Vec<String> {
    match order {
        1 => tokens.iter().map(|t| t.as_ref().to_string()).collect(),
        _ => tokens
            .windows(order)
            .map(|w| {
                w.iter()
                    .map(AsRef::as_ref)
                    .collect::<Vec<&str>>()
                    .join(" ")
            })
            .collect(),
    }
}

/// Sparse vector of `(column, weight)` pairs with strictly increasing columns.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SparseVector {
    entries: Vec<(usize, f64)>,
}

impl SparseVector {
    /// Builds a vector from unordered pairs, summing duplicate columns and
    /// dropping zero weights.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, f64)>) -> Self {
        let mut map: BTreeMap<usize, f64> = BTreeMap::new();
        for (i, w) in pairs {
            *map.entry(i).or_insert(0.0) += w;
        }
        SparseVector {
            entries: map.into_iter().filter(|&(_, w)| w != 0.0).collect(),
        }
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, index: usize) -> f64 {
        self.entries
            .binary_search_by_key(&index, |&(i, _)| i)
            .map(|k| self.entries[k].1)
            .unwrap_or(0.0)
    }

    pub fn dot(&self, other: &SparseVector) -> f64 {
        let (mut i, mut j, mut acc) = (0, 0, 0.0);
        let (a, b) = (&self.entries, &other.entries);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += a[i].1 * b[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|(_, w)| w * w).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, factor: f64) -> SparseVector {
        SparseVector {
            entries: self
                .entries
                .iter()
                .map(|&(i, w)| (i, w * factor))
                .filter(|&(_, w)| w != 0.0)
                .collect(),
        }
    }

    /// Unit-norm copy; the zero vector stays zero.
    pub fn normalized(&self) -> SparseVector {
        let n = self.norm();
        if n == 0.0 {
            self.clone()
        } else {
            self.scaled(1.0 / n)
        }
    }
}

/// Accumulates scaled sparse vectors into a dense buffer.
#[derive(Debug, Clone)]
pub struct DenseAccumulator {
    values: Vec<f64>,
}

impl DenseAccumulator {
    pub fn new(dim: usize) -> Self {
        DenseAccumulator {
            values: vec![0.0; dim],
        }
    }

    pub fn add(&mut self, v: &SparseVector, scale: f64) {
        for &(i, w) in v.entries() {
            self.values[i] += w * scale;
        }
    }

    pub fn into_sparse(self) -> SparseVector {
        SparseVector {
            entries: self
                .values
                .into_iter()
                .enumerate()
                .filter(|&(_, w)| w != 0.0)
                .collect(),
        }
    }
}

/// Fitted TF-IDF vocabulary and inverse document frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct TfIdfModel {
    order: usize,
    num_docs: usize,
    terms: Vec<String>,
    idf: Vec<f64>,
    index: HashMap<String, usize>,
}

impl TfIdfModel {
    /// Fits document frequencies over `docs`. Columns are assigned in sorted term order.
    pub fn fit<D, S>(docs: &[D], order: usize) -> Result<Self>
    where
        D: AsRef<[S]>,
        S: AsRef<str>,
    {
        if !(1..=2).contains(&order) {
            return Err(Error::invalid(format!("n-gram order {order} not in {{1, 2}}")));
        }
        if docs.is_empty() {
            return Err(Error::invalid("no documents"));
        }
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        for doc in docs {
            let mut terms = ngrams(doc.as_ref(), order);
            terms.sort_unstable();
            terms.dedup();
            for t in terms {
                *df.entry(t).or_insert(0) += 1;
            }
        }
        if df.is_empty() {
            return Err(Error::invalid("all documents are empty"));
        }
        let n = docs.len() as f64;
        let (terms, idf): (Vec<String>, Vec<f64>) = df
            .into_iter()
            .map(|(t, d)| (t, (n / d as f64).ln()))
            .unzip();
        let mut model = TfIdfModel {
            order,
            num_docs: docs.len(),
            terms,
            idf,
            index: HashMap::new(),
        };
        model.rebuild_index();
        Ok(model)
    }

    fn rebuild_index(&mut self) {
        self.index = self
            .terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn num_docs(&self) -> usize {
        self.num_docs
    }

    pub fn dim(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn column(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn idf(&self, term: &str) -> Option<f64> {
        self.column(term).map(|i| self.idf[i])
    }

    /// Returns a copy with every IDF multiplied by `factor`.
    pub fn with_idf_scaled(&self, factor: f64) -> Self {
        let mut m = self.clone();
        m.idf.iter_mut().for_each(|v| *v *= factor);
        m
    }

    /// Overrides IDF values by term; used to construct models by hand.
    pub fn from_idf(order: usize, num_docs: usize, idf: BTreeMap<String, f64>) -> Self {
        let (terms, idf) = idf.into_iter().unzip();
        let mut m = TfIdfModel {
            order,
            num_docs,
            terms,
            idf,
            index: HashMap::new(),
        };
        m.rebuild_index();
        m
    }

    /// `count(t) * idf(t)` over in-vocabulary terms.
    pub fn vectorize<S: AsRef<str>>(&self, tokens: &[S]) -> SparseVector {
        SparseVector::from_pairs(
            ngrams(tokens, self.order)
                .iter()
                .filter_map(|t| self.column(t))
                .map(|i| (i, self.idf[i])),
        )
    }
}

/// `1 - cos(u, v)`, clamped to [0, 1]; 1 when either vector is zero.
pub fn cosine_distance(u: &SparseVector, v: &SparseVector) -> f64 {
    let (uu, vv) = (u.dot(u), v.dot(v));
    if uu == 0.0 || vv == 0.0 {
        return 1.0;
    }
    // sqrt(uu * vv) rather than |u| |v| keeps identical vectors at exactly 0.
    (1.0 - u.dot(v) / (uu * vv).sqrt()).clamp(0.0, 1.0)
}

/// Cosine similarity, 0 when either vector is zero.
pub fn cosine_similarity(u: &SparseVector, v: &SparseVector) -> f64 {
    1.0 - cosine_distance(u, v)
}

/// Sums document vectors so that every counselor contributes equally: each
/// document is scaled by one over its counselor's document count in `docs`.
pub fn weighted_group_vector<S: AsRef<str>>(model: &TfIdfModel, docs: &[(&[S], &str)]) -> SparseVector {
    let vectors: Vec<(SparseVector, &str)> = docs
        .iter()
        .map(|(tokens, who)| (model.vectorize(tokens), *who))
        .collect();
    weighted_sum(model.dim(), vectors.iter().map(|(v, w)| (v, *w)))
}

/// [`weighted_group_vector`] over precomputed vectors.
pub fn weighted_sum<'a, I>(dim: usize, vectors: I) -> SparseVector
where
    I: IntoIterator<Item = (&'a SparseVector, &'a str)>,
    I::IntoIter: Clone,
{
    let iter = vectors.into_iter();
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for (_, who) in iter.clone() {
        *counts.entry(who).or_insert(0) += 1;
    }
    let mut acc = DenseAccumulator::new(dim);
    for (v, who) in iter {
        acc.add(v, 1.0 / counts[who] as f64);
    }
    acc.into_sparse()
}

fn check_distribution(name: &str, p: &[f64]) -> Result<()> {
    if p.iter().any(|&x| !(x.is_finite() && x >= 0.0)) {
        return Err(Error::InvalidDistribution(format!("{name} has a negative or non-finite entry")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidDistribution(format!("{name} sums to {s}")));
    }
    Ok(())
}

/// Jensen-Shannon divergence in nats, in [0, ln 2].
pub fn js_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::InvalidDistribution(format!(
            "support sizes differ ({} vs {})",
            p.len(),
            q.len()
        )));
    }
    check_distribution("p", p)?;
    check_distribution("q", q)?;
    let kl_to_mid = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .filter(|(&x, _)| x > 0.0)
            .map(|(&x, &y)| x * (x / (0.5 * (x + y))).ln())
            .sum()
    };
    let jsd = 0.5 * kl_to_mid(p, q) + 0.5 * kl_to_mid(q, p);
    Ok(jsd.clamp(0.0, std::f64::consts::LN_2))
}

/// Maximum-likelihood unigram distributions of two token collections over
/// their joint vocabulary (sorted).
pub fn unigram_distributions<S: AsRef<str>>(a: &[S], b: &[S]) -> Result<(Vec<f64>, Vec<f64>)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("cannot build a distribution from no tokens"));
    }
    let mut counts: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
    for t in a {
        counts.entry(t.as_ref()).or_default().0 += 1.0;
    }
    for t in b {
        counts.entry(t.as_ref()).or_default().1 += 1.0;
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    Ok(counts.values().map(|&(x, y)| (x / na, y / nb)).unzip())
}

fn check_radius(radius: f64) -> Result<()> {
    if (0.0..=1.0).contains(&radius) {
        Ok(())
    } else {
        Err(Error::invalid(format!("radius {radius} not in [0, 1]")))
    }
}

/// Neighbor lists (other documents within `radius`) by exhaustive pairwise comparison.
fn neighbor_lists(vectors: &[SparseVector], radius: f64) -> Vec<Vec<usize>> {
    let unit: Vec<SparseVector> = vectors.iter().map(SparseVector::normalized).collect();
    let n = unit.len();
    let mut out = vec![Vec::new(); n];
    for i in 0..n {
        if unit[i].is_zero() {
            continue;
        }
        for j in (i + 1)..n {
            if unit[j].is_zero() {
                continue;
            }
            let d = (1.0 - unit[i].dot(&unit[j])).clamp(0.0, 1.0);
            if d <= radius {
                out[i].push(j);
                out[j].push(i);
            }
        }
    }
    out
}

/// Dense clusters of near-duplicate documents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSet {
    /// Member ids per cluster; members sorted, clusters ordered by first member.
    pub clusters: Vec<Vec<String>>,
    pub radius: f64,
    pub min_neighbors: usize,
}

impl ClusterSet {
    /// `(id, cluster index)` for every clustered document.
    pub fn assignments(&self) -> BTreeMap<&str, usize> {
        self.clusters
            .iter()
            .enumerate()
            .flat_map(|(c, ids)| ids.iter().map(move |id| (id.as_str(), c)))
            .collect()
    }

    pub fn clustered_count(&self) -> usize {
        self.clusters.iter().map(Vec::len).sum()
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["id", "cluster_id"])?;
        for (c, ids) in self.clusters.iter().enumerate() {
            for id in ids {
                wr.write_record([id.as_str(), &c.to_string()])?;
            }
        }
        wr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Clusters documents whose vectors have at least `min_neighbors` other
/// documents within cosine distance `radius`. Clusters are connected
/// components of the neighbor graph restricted to such documents.
pub fn cluster_documents<S: AsRef<str>>(
    model: &TfIdfModel,
    docs: &[(String, Vec<S>)],
    radius: f64,
    min_neighbors: usize,
) -> Result<ClusterSet> {
    check_radius(radius)?;
    let vectors: Vec<SparseVector> = docs.iter().map(|(_, t)| model.vectorize(t)).collect();
    let neighbors = neighbor_lists(&vectors, radius);
    let dense: Vec<bool> = neighbors.iter().map(|n| n.len() >= min_neighbors && !n.is_empty()).collect();

    let mut parent: Vec<usize> = (0..docs.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (i, ns) in neighbors.iter().enumerate() {
        if !dense[i] {
            continue;
        }
        for &j in ns {
            if dense[j] {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for i in 0..docs.len() {
        if dense[i] {
            let root = find(&mut parent, i);
            groups.entry(root).or_default().push(docs[i].0.clone());
        }
    }
    let mut clusters: Vec<Vec<String>> = groups
        .into_values()
        .map(|mut ids| {
            ids.sort();
            ids
        })
        .collect();
    clusters.sort();
    Ok(ClusterSet {
        clusters,
        radius,
        min_neighbors,
    })
}

/// Clusters situation setters with a bigram model, as used for matched comparisons.
pub fn cluster_situation_setters<S: AsRef<str>>(
    model: &TfIdfModel,
    docs: &[(String, Vec<S>)],
    radius: f64,
    min_neighbors: usize,
) -> Result<ClusterSet> {
    if model.order() != 2 {
        return Err(Error::invalid("situation setters are clustered with a bigram model"));
    }
    cluster_documents(model, docs, radius, min_neighbors)
}

/// Number of other responses within `radius` of each response, in input order.
pub fn templatedness<S: AsRef<str>>(
    model: &TfIdfModel,
    responses: &[(String, Vec<S>)],
    radius: f64,
) -> Result<Vec<(String, usize)>> {
    check_radius(radius)?;
    let vectors: Vec<SparseVector> = responses.iter().map(|(_, t)| model.vectorize(t)).collect();
    let neighbors = neighbor_lists(&vectors, radius);
    Ok(responses
        .iter()
        .zip(neighbors)
        .map(|((id, _), n)| (id.clone(), n.len()))
        .collect())
}

pub fn write_templatedness_csv(counts: &[(String, usize)], w: impl Write) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["id", "neighbor_count"])?;
    for (id, n) in counts {
        wr.write_record([id.as_str(), &n.to_string()])?;
    }
    wr.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
