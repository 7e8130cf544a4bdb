//! Ranking and top-K metrics for held-out users.

use alloc::vec;
use alloc::vec::Vec;

use crate::decoder::{score_pair, ItemTargets};
use crate::encoder::{
    encode_user_with, item_segments_traced, Affiliations, RealizeMode, SegmentDistribution, UserEncoding,
    UserRepresentation,
};
use crate::graph::{DatasetSplit, UserGroup};
use crate::numerics::Real;
use crate::{Error, HeteroGraph, Model, Result, SeededRng};

/// Cached state for scoring many users against one parameter snapshot.
pub struct Ranker<'a, F: Real> {
    pub model: &'a Model<F>,
    pub graph: &'a HeteroGraph,
    pub aff: Affiliations<F>,
    pub targets: ItemTargets<'a, F>,
    /// Entity segments of every item under the unperturbed graph.
    pub item_segments: Vec<Vec<SegmentDistribution<F>>>,
}

impl<'a, F: Real> Ranker<'a, F> {
    pub fn new(model: &'a Model<F>, graph: &'a HeteroGraph) -> Self {
        let aff = Affiliations::compute(model);
        let targets = ItemTargets::new(model, graph, &aff);
        let item_segments = (0..graph.n_items() as u32)
            .map(|t| item_segments_traced(graph.item_entities(t), model, &aff).0)
            .collect();
        Self {
            model,
            graph,
            aff,
            targets,
            item_segments,
        }
    }

    pub fn encode_user(&self, user: u32) -> Result<UserEncoding<F>> {
        self.graph.check_user(user)?;
        let items = self.graph.user_items(user);
        if items.is_empty() {
            return Err(Error::ColdUser(user));
        }
        let segs: Vec<&[SegmentDistribution<F>]> =
            items.iter().map(|&t| self.item_segments[t as usize].as_slice()).collect();
        Ok(encode_user_with(items, &segs, self.model, &self.aff))
    }

    /// Mean-mode representation of a user.
    pub fn represent(&self, user: u32) -> Result<UserRepresentation<F>> {
        // Mean mode never touches the stream.
        Ok(self.encode_user(user)?.realize(RealizeMode::Mean, &mut SeededRng::new(0)))
    }

    pub fn score(&self, rep: &UserRepresentation<F>, item: u32) -> F {
        score_pair(rep, item, &self.targets, self.aff.item.row(item as usize))
    }

    /// The `k` best items outside `exclude` (sorted), by descending score
    /// with ties broken by ascending index. `k = None` ranks every candidate.
    pub fn top_k(&self, rep: &UserRepresentation<F>, exclude: &[u32], k: Option<usize>) -> Vec<u32> {
        let mut scored: Vec<(F, u32)> = Vec::with_capacity(self.graph.n_items());
        let mut skip = exclude.iter().peekable();
        for t in 0..self.graph.n_items() as u32 {
            while skip.peek().is_some_and(|&&e| e < t) {
                skip.next();
            }
            if skip.peek() == Some(&&t) {
                continue;
            }
            scored.push((self.score(rep, t), t));
        }
        let order = |a: &(F, u32), b: &(F, u32)| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(core::cmp::Ordering::Equal)
                .then(a.1.cmp(&b.1))
        };
        if let Some(k) = k {
            if k < scored.len() {
                scored.select_nth_unstable_by(k, order);
                scored.truncate(k);
            }
        }
        scored.sort_unstable_by(order);
        scored.into_iter().map(|(_, t)| t).collect()
    }

    /// Items the user has not interacted with in training, best first.
    pub fn rank(&self, user: u32, k: Option<usize>) -> Result<Vec<u32>> {
        let rep = self.represent(user)?;
        Ok(self.top_k(&rep, self.graph.user_items(user), k))
    }
}

/// Full ranking of every non-training item for `user`.
pub fn rank_items<F: Real>(user: u32, model: &Model<F>, graph: &HeteroGraph) -> Result<Vec<u32>> {
    Ranker::new(model, graph).rank(user, None)
}

fn check_metric_args(truth: &[u32], k: usize) -> Result<()> {
    if truth.is_empty() {
        return Err(Error::EmptyTruth);
    }
    if k == 0 {
        return Err(Error::Domain("k must be at least 1"));
    }
    Ok(())
}

/// `|top-k ∩ truth| / |truth|`. `truth` need not be sorted.
pub fn recall_at_k(ranked: &[u32], truth: &[u32], k: usize) -> Result<f64> {
    check_metric_args(truth, k)?;
    let hits = ranked.iter().take(k).filter(|t| truth.contains(t)).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Binary-relevance NDCG, normalised by the ideal DCG of
/// `min(k, |truth|)` leading hits.
pub fn ndcg_at_k(ranked: &[u32], truth: &[u32], k: usize) -> Result<f64> {
    check_metric_args(truth, k)?;
    let mut dcg = 0.0;
    for (i, t) in ranked.iter().take(k).enumerate() {
        if truth.contains(t) {
            dcg += 1.0 / libm::log2(i as f64 + 2.0);
        }
    }
    let mut ideal = 0.0;
    for i in 0..k.min(truth.len()) {
        ideal += 1.0 / libm::log2(i as f64 + 2.0);
    }
    Ok(dcg / ideal)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub label: &'static str,
    pub ks: Vec<usize>,
    /// Evaluated users, ascending.
    pub users: Vec<u32>,
    /// `recall[u][j]` is Recall@`ks[j]` of `users[u]`.
    pub recall: Vec<Vec<f64>>,
    pub ndcg: Vec<Vec<f64>>,
    pub mean_recall: Vec<f64>,
    pub mean_ndcg: Vec<f64>,
    /// Users skipped for having an empty truth set.
    pub skipped: usize,
}

impl MetricsReport {
    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn recall_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|j| self.mean_recall[j])
    }

    pub fn ndcg_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|j| self.mean_ndcg[j])
    }
}

/// Recall@K and NDCG@K averaged over one holdout group.
pub fn evaluate<F: Real>(
    model: &Model<F>,
    graph: &HeteroGraph,
    split: &DatasetSplit,
    group: UserGroup,
    ks: &[usize],
) -> Result<MetricsReport> {
    let ranker = Ranker::new(model, graph);
    evaluate_with(&ranker, split, group, ks)
}

pub fn evaluate_with<F: Real>(
    ranker: &Ranker<'_, F>,
    split: &DatasetSplit,
    group: UserGroup,
    ks: &[usize],
) -> Result<MetricsReport> {
    let holdout = split.group(group);
    if holdout.is_empty() {
        return Err(Error::EmptyInput("user group"));
    }
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Domain("K list must be non-empty and positive"));
    }
    let k_max = *ks.iter().max().expect("non-empty");
    let mut report = MetricsReport {
        label: group.as_str(),
        ks: ks.to_vec(),
        users: Vec::new(),
        recall: Vec::new(),
        ndcg: Vec::new(),
        mean_recall: vec![0.0; ks.len()],
        mean_ndcg: vec![0.0; ks.len()],
        skipped: 0,
    };
    for (&u, truth) in holdout.users.iter().zip(&holdout.truth) {
        if truth.is_empty() {
            report.skipped += 1;
            continue;
        }
        let ranked = ranker.rank(u, Some(k_max))?;
        let mut r = Vec::with_capacity(ks.len());
        let mut n = Vec::with_capacity(ks.len());
        for &k in ks {
            r.push(recall_at_k(&ranked, truth, k)?);
            n.push(ndcg_at_k(&ranked, truth, k)?);
        }
        report.users.push(u);
        report.recall.push(r);
        report.ndcg.push(n);
    }
    if report.users.is_empty() {
        return Err(Error::EmptyInput("no evaluable users in group"));
    }
    let count = report.users.len() as f64;
    for j in 0..ks.len() {
        report.mean_recall[j] = report.recall.iter().map(|r| r[j]).sum::<f64>() / count;
        report.mean_ndcg[j] = report.ndcg.iter().map(|r| r[j]).sum::<f64>() / count;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recall_examples() {
        assert_eq!(recall_at_k(&[0, 9], &[0, 1, 2, 3], 2).unwrap(), 0.25);
        assert_eq!(recall_at_k(&[3, 2, 1], &[1, 2], 3).unwrap(), 1.0);
        assert_eq!(recall_at_k(&[7, 8], &[1], 2).unwrap(), 0.0);
        assert_eq!(recall_at_k(&[1], &[], 1), Err(Error::EmptyTruth));
        assert!(recall_at_k(&[1], &[1], 0).is_err());
    }

    #[test]
    fn ndcg_examples() {
        assert_eq!(ndcg_at_k(&[4, 5, 6], &[4, 5, 6], 3).unwrap(), 1.0);
        let expected = (1.0 + 0.5) / (1.0 + 1.0 / 3f64.log2());
        let v = ndcg_at_k(&[1, 9, 2], &[1, 2], 3).unwrap();
        assert!((v - expected).abs() < 1e-12);
        assert!((v - 0.9197).abs() < 1e-4);
        assert_eq!(ndcg_at_k(&[7, 8], &[1], 2).unwrap(), 0.0);
        // more truth items than k: a perfect prefix still scores 1
        assert!((ndcg_at_k(&[1, 2], &[1, 2, 3, 4], 2).unwrap() - 1.0).abs() < 1e-12);
    }
}
