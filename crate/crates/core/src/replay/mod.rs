//! Historical capability replay and total-loss assembly.
//!
//! Representative samples of finished domains are kept with their frozen
//! features. Training mixes them into fresh batches and aligns their current
//! features with the frozen ones.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Prepared;

#[derive(Debug, Error, PartialEq)]
pub enum ReplayError {
    #[error("loss term `{term}` is not finite ({value})")]
    NonFinite { term: &'static str, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Weight of the two discriminability terms.
    pub lambda: f64,
    /// Weight of the alignment term.
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda: 0.1, gamma: 1.0 }
    }
}

/// Itemized loss of one training step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub cls: f64,
    pub more: f64,
    pub less: f64,
    pub align: f64,
    pub total: f64,
}

/// `cls + lambda (more + less) + gamma align`; inactive terms are passed as 0.
pub fn total_loss(cls: f64, more: f64, less: f64, align: f64, weights: LossWeights) -> Result<LossReport, ReplayError> {
    for (term, value) in [("cls", cls), ("more", more), ("less", less), ("align", align)] {
        if !value.is_finite() {
            return Err(ReplayError::NonFinite { term, value });
        }
    }
    let mut total = cls;
    if weights.lambda != 0.0 {
        total += weights.lambda * (more + less);
    }
    if weights.gamma != 0.0 {
        total += weights.gamma * align;
    }
    Ok(LossReport {
        cls,
        more,
        less,
        align,
        total,
    })
}

/// Cosine similarity, 0 when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        0.0
    } else {
        ab / (aa.sqrt() * bb.sqrt())
    }
}

/// `d cos(a, b) / d b`.
pub fn cosine_grad_b(a: &[f64], b: &[f64]) -> Vec<f64> {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb2 = b.iter().map(|x| x * x).sum::<f64>();
    if na == 0.0 || nb2 == 0.0 {
        return vec![0.0; b.len()];
    }
    let nb = nb2.sqrt();
    let c = cosine(a, b);
    a.iter().zip(b).map(|(x, y)| x / (na * nb) - c * y / nb2).collect()
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Alignment loss over cosine similarities grouped by domain, with its
/// gradient with respect to each cosine.
///
/// `-(1/T) sum_i [ (1/N_i) sum_j cos_ij - log sum_k exp(cos_ik) ]`.
pub fn align_from_cosines(groups: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>) {
    let groups: Vec<&Vec<f64>> = groups.iter().filter(|g| !g.is_empty()).collect();
    let t = groups.len();
    if t == 0 {
        return (0.0, Vec::new());
    }
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(t);
    for cos in groups {
        let n = cos.len() as f64;
        let lse = log_sum_exp(cos);
        loss += cos.iter().sum::<f64>() / n - lse;
        grads.push(
            cos.iter()
                .map(|c| -((1.0 / n) - (c - lse).exp()) / t as f64)
                .collect(),
        );
    }
    (-loss / t as f64, grads)
}

/// Alignment loss between frozen and current features, grouped by domain.
pub fn loss_align(domains: &[usize], f_old: &[&[f64]], f_cur: &[Vec<f64>]) -> f64 {
    align_with_grad(domains, f_old, f_cur).0
}

/// Alignment loss and its gradient with respect to each current feature.
pub fn align_with_grad(domains: &[usize], f_old: &[&[f64]], f_cur: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>) {
    let mut order: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &d) in domains.iter().enumerate() {
        order.entry(d).or_default().push(i);
    }
    let groups: Vec<Vec<f64>> = order
        .values()
        .map(|idx| idx.iter().map(|&i| cosine(f_old[i], &f_cur[i])).collect())
        .collect();
    let (loss, dcos) = align_from_cosines(&groups);
    let mut grads = vec![Vec::new(); f_cur.len()];
    for (idx, dc) in order.values().zip(dcos) {
        for (&i, g) in idx.iter().zip(dc) {
            grads[i] = cosine_grad_b(f_old[i], &f_cur[i]).into_iter().map(|v| v * g).collect();
        }
    }
    (loss, grads)
}

/// One stored sample with its feature frozen at selection time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    /// Position of the source domain in the training order.
    pub domain: usize,
    pub domain_name: String,
    pub sample: Prepared,
    pub f_old: Vec<f64>,
    /// Cosine to the class centroid at selection time.
    pub centroid_cosine: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MemoryBuffer {
    pub k: usize,
    pub entries: Vec<MemoryEntry>,
}

impl MemoryBuffer {
    pub fn new(k: usize) -> Self {
        Self { k, entries: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends one finished domain's selections.
    pub fn extend_domain(&mut self, entries: Vec<MemoryEntry>) {
        debug_assert!(entries.len() <= self.k);
        self.entries.extend(entries);
    }

    pub fn domains(&self) -> Vec<usize> {
        let mut d: Vec<usize> = self.entries.iter().map(|e| e.domain).collect();
        d.dedup();
        d
    }
}

/// Indices of up to `k` representative samples: per class, those nearest
/// (cosine) to the class centroid, `k/2` each with any shortfall given to
/// the other class. Ties keep the earlier sample.
pub fn representative_indices(labels: &[u8], features: &[Vec<f64>], k: usize) -> Vec<(usize, f64)> {
    if k == 0 || labels.is_empty() {
        return Vec::new();
    }
    if k >= labels.len() {
        return (0..labels.len()).map(|i| (i, centroid_cos(labels, features, i))).collect();
    }
    let ranked: Vec<Vec<(usize, f64)>> = (0..2u8)
        .map(|class| {
            let mut members: Vec<(usize, f64)> = (0..labels.len())
                .filter(|&i| labels[i] == class)
                .map(|i| (i, centroid_cos(labels, features, i)))
                .collect();
            members.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            members
        })
        .collect();
    let mut quota = [k / 2, k - k / 2];
    for c in 0..2 {
        let short = quota[c].saturating_sub(ranked[c].len());
        quota[c] -= short;
        quota[1 - c] += short;
    }
    let mut out: Vec<(usize, f64)> = (0..2).flat_map(|c| ranked[c].iter().take(quota[c]).copied()).collect();
    out.sort_by_key(|&(i, _)| i);
    out
}

fn centroid_cos(labels: &[u8], features: &[Vec<f64>], i: usize) -> f64 {
    let d = features[i].len();
    let mut centroid = vec![0.0; d];
    let mut n = 0.0;
    for (j, f) in features.iter().enumerate() {
        if labels[j] == labels[i] {
            centroid.iter_mut().zip(f).for_each(|(c, v)| *c += v);
            n += 1.0;
        }
    }
    centroid.iter_mut().for_each(|c| *c /= n);
    cosine(&features[i], &centroid)
}

/// Memory entries for one domain; `features` are the current detector's
/// features of `samples` and become the frozen `f_old`.
pub fn select_memories(
    domain: usize,
    domain_name: &str,
    samples: &[Prepared],
    features: &[Vec<f64>],
    k: usize,
) -> Vec<MemoryEntry> {
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    representative_indices(&labels, features, k)
        .into_iter()
        .map(|(i, c)| MemoryEntry {
            domain,
            domain_name: domain_name.to_string(),
            sample: samples[i].clone(),
            f_old: features[i].clone(),
            centroid_cosine: c,
        })
        .collect()
}
