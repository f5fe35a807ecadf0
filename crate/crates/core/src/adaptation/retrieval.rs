use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RankStage {
    Vcc,
    VcmReranked,
}

/// Candidate ids best-first with their scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub ids: Vec<usize>,
    pub scores: Vec<f64>,
    pub stage: RankStage,
}

impl RankedList {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// 1-based rank of `id`.
    pub fn rank_of(&self, id: usize) -> Option<usize> {
        self.ids.iter().position(|&x| x == id).map(|p| p + 1)
    }
}

/// Descending score, ascending id on ties.
fn sort_scored(scored: &mut [(usize, f64)]) {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
}

/// Ranks gallery rows (candidate id = row index) by dot product with the query.
pub fn rank_vcc<F: Scalar>(query: &[F], gallery: &Matrix<F>) -> Result<RankedList> {
    if gallery.rows() == 0 {
        return Err(Error::EmptyGallery);
    }
    if gallery.cols() != query.len() {
        return Err(Error::Shape(format!(
            "query width {} against gallery width {}",
            query.len(),
            gallery.cols()
        )));
    }
    let mut scored: Vec<(usize, f64)> = (0..gallery.rows()).map(|i| (i, dot(query, gallery.row(i)).f64())).collect();
    sort_scored(&mut scored);
    Ok(RankedList {
        ids: scored.iter().map(|s| s.0).collect(),
        scores: scored.iter().map(|s| s.1).collect(),
        stage: RankStage::Vcc,
    })
}

/// Rescores the first `min(k, len)` candidates with `score` and reorders
/// them; the rest keep their order below. `k = 0` returns the list unchanged.
///
/// Reranked items carry their match score plus an offset that keeps them
/// above every remaining item's score.
pub fn rerank_vcm(ranked: &RankedList, k: usize, mut score: impl FnMut(usize) -> Result<f64>) -> Result<RankedList> {
    if k == 0 {
        return Ok(ranked.clone());
    }
    let k = k.min(ranked.len());
    let mut top: Vec<(usize, f64)> = ranked.ids[..k]
        .iter()
        .map(|&id| score(id).map(|s| (id, s)))
        .collect::<Result<_>>()?;
    sort_scored(&mut top);
    let mut ids: Vec<usize> = top.iter().map(|t| t.0).collect();
    let mut scores: Vec<f64> = top.iter().map(|t| t.1).collect();
    if k < ranked.len() {
        let rest_max = ranked.scores[k];
        let min_top = scores.last().copied().unwrap_or(0.0);
        // Shift the reranked block so its minimum exceeds the rest.
        let shift = (rest_max - min_top).max(0.0) + 1.0;
        for s in &mut scores {
            *s += shift;
        }
        ids.extend_from_slice(&ranked.ids[k..]);
        scores.extend_from_slice(&ranked.scores[k..]);
    }
    Ok(RankedList {
        ids,
        scores,
        stage: RankStage::VcmReranked,
    })
}

/// Fraction of queries whose ground-truth id is within the first `k`.
pub fn recall_at_k(lists: &[RankedList], truth: &[usize], ks: &[usize]) -> Result<BTreeMap<usize, f64>> {
    if lists.len() != truth.len() {
        return Err(Error::Shape(format!("{} ranked lists for {} ground truths", lists.len(), truth.len())));
    }
    if lists.is_empty() {
        return Err(Error::EmptyInput("no retrieval queries".into()));
    }
    let ranks = lists
        .iter()
        .zip(truth)
        .map(|(l, &t)| l.rank_of(t).ok_or(Error::InvalidGroundTruth(t)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ks
        .iter()
        .map(|&k| {
            let hits = ranks.iter().filter(|&&r| r <= k).count();
            (k, hits as f64 / ranks.len() as f64)
        })
        .collect())
}
