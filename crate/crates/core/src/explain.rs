//! Importance of historical items and knowledge entities for one
//! prediction, and the removal protocol that checks those importances.
//!
//! For a user `u`, target `t` and factor `c`:
//!
//! * item `j`: `s = p(t,c) exp(<itm_c(u), d_t>) * 1[j in N_u] * p(j,c) / |N_u|`
//! * entity `j`: `s = exp(<ent_c(u), d_{t,c}>) * sum_{m in N_u} 1[(m,j)] p(j,c) / (|N_u| |N_m|)`

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::decoder::{score_terms, ScoreTerms};
use crate::encoder::{encode_user_with, item_segments_traced, RealizeMode, SegmentDistribution, UserRepresentation};
use crate::eval::{recall_at_k, Ranker};
use crate::graph::DatasetSplit;
use crate::numerics::{argmax, Real};
use crate::{Error, HeteroGraph, Model, Result, SeededRng};

/// Importance of one node, split by factor.
#[derive(Debug, Clone, PartialEq)]
pub struct Contribution {
    pub node: u32,
    pub per_factor: Vec<f64>,
    pub total: f64,
    /// Factor with the largest share (lowest index on ties).
    pub dominant_factor: usize,
}

impl Contribution {
    fn new(node: u32, per_factor: Vec<f64>) -> Self {
        let total = per_factor.iter().sum();
        let dominant_factor = argmax(&per_factor);
        Self {
            node,
            per_factor,
            total,
            dominant_factor,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Explanation {
    pub user: u32,
    pub target: u32,
    pub item_contributions: Vec<Contribution>,
    pub entity_contributions: Vec<Contribution>,
    /// `argmax_c p(t, c)`.
    pub target_factor: usize,
    /// Per-factor affiliation of the target.
    pub target_affiliation: Vec<f64>,
}

/// Descending total, ascending node index on ties.
fn sort_contributions(list: &mut [Contribution]) {
    list.sort_by(|a, b| {
        b.total
            .partial_cmp(&a.total)
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.node.cmp(&b.node))
    });
}

/// Shared state for explaining many predictions of one model.
pub struct Explainer<'a, F: Real> {
    ranker: Ranker<'a, F>,
}

impl<'a, F: Real> Explainer<'a, F> {
    pub fn new(model: &'a Model<F>, graph: &'a HeteroGraph) -> Self {
        Self {
            ranker: Ranker::new(model, graph),
        }
    }

    pub fn from_ranker(ranker: Ranker<'a, F>) -> Self {
        Self { ranker }
    }

    pub fn ranker(&self) -> &Ranker<'a, F> {
        &self.ranker
    }

    fn terms(&self, rep: &UserRepresentation<F>, target: u32) -> Result<ScoreTerms<F>> {
        self.ranker.graph.check_item(target)?;
        Ok(score_terms(
            rep,
            target,
            &self.ranker.targets,
            self.ranker.aff.item.row(target as usize),
        ))
    }

    fn item_scores_with(&self, user: u32, terms: &ScoreTerms<F>) -> Vec<Contribution> {
        let items = self.ranker.graph.user_items(user);
        let inv = 1.0 / items.len() as f64;
        items
            .iter()
            .map(|&j| {
                let p = self.ranker.aff.item.row(j as usize);
                let per_factor = terms
                    .item
                    .iter()
                    .zip(p)
                    .map(|(term, pj)| term.f64() * pj.f64() * inv)
                    .collect();
                Contribution::new(j, per_factor)
            })
            .collect()
    }

    /// Path weights `sum_m 1[(m,j)] / (|N_u| |N_m|)` of every reachable entity.
    fn entity_paths(&self, user: u32) -> BTreeMap<u32, f64> {
        let graph = self.ranker.graph;
        let items = graph.user_items(user);
        let mut weights = BTreeMap::new();
        for &m in items {
            let ents = graph.item_entities(m);
            let w = 1.0 / (items.len() as f64 * ents.len() as f64);
            for &e in ents {
                *weights.entry(e).or_insert(0.0) += w;
            }
        }
        weights
    }

    fn entity_scores_with(&self, user: u32, terms: &ScoreTerms<F>) -> Vec<Contribution> {
        self.entity_paths(user)
            .into_iter()
            .map(|(e, w)| {
                let p = self.ranker.aff.entity.row(e as usize);
                let per_factor = terms
                    .entity
                    .iter()
                    .zip(p)
                    .map(|(term, pe)| term.f64() * w * pe.f64())
                    .collect();
                Contribution::new(e, per_factor)
            })
            .collect()
    }

    /// Scores of every historical item of `user`, in neighbourhood order.
    pub fn item_scores(&self, user: u32, target: u32) -> Result<Vec<Contribution>> {
        let rep = self.ranker.represent(user)?;
        let terms = self.terms(&rep, target)?;
        Ok(self.item_scores_with(user, &terms))
    }

    /// Scores of every entity reachable from `user`, by ascending index.
    pub fn entity_scores(&self, user: u32, target: u32) -> Result<Vec<Contribution>> {
        let rep = self.ranker.represent(user)?;
        let terms = self.terms(&rep, target)?;
        Ok(self.entity_scores_with(user, &terms))
    }

    pub fn item_importance(&self, item: u32, user: u32, target: u32) -> Result<Contribution> {
        self.ranker.graph.check_item(item)?;
        let found = self.item_scores(user, target)?.into_iter().find(|c| c.node == item);
        Ok(found.unwrap_or_else(|| Contribution::new(item, vec![0.0; self.ranker.model.factors.item_factors])))
    }

    pub fn entity_importance(&self, entity: u32, user: u32, target: u32) -> Result<Contribution> {
        if entity as usize >= self.ranker.graph.n_entities() {
            return Err(Error::OutOfRange {
                kind: "entity",
                index: entity,
            });
        }
        let found = self.entity_scores(user, target)?.into_iter().find(|c| c.node == entity);
        Ok(found.unwrap_or_else(|| Contribution::new(entity, vec![0.0; self.ranker.model.factors.entity_factors])))
    }

    /// The `top_m` most important items and entities for `(user, target)`.
    pub fn explain(&self, user: u32, target: u32, top_m: usize) -> Result<Explanation> {
        let rep = self.ranker.represent(user)?;
        let terms = self.terms(&rep, target)?;
        let mut items = self.item_scores_with(user, &terms);
        let mut entities = self.entity_scores_with(user, &terms);
        sort_contributions(&mut items);
        sort_contributions(&mut entities);
        items.truncate(top_m);
        entities.truncate(top_m);
        let aff: Vec<f64> = self.ranker.aff.item.row(target as usize).iter().map(|p| p.f64()).collect();
        Ok(Explanation {
            user,
            target,
            item_contributions: items,
            entity_contributions: entities,
            target_factor: argmax(&aff),
            target_affiliation: aff,
        })
    }

    /// Mean-mode representation of `user` after dropping `items` from its
    /// neighbourhood and `entities` from the neighbourhoods of its items.
    /// Both removal lists must be sorted. An emptied neighbourhood falls
    /// back to the prior.
    pub fn perturbed_representation(
        &self,
        user: u32,
        items: &[u32],
        entities: &[u32],
    ) -> Result<UserRepresentation<F>> {
        let graph = self.ranker.graph;
        graph.check_user(user)?;
        let model = self.ranker.model;
        let kept: Vec<u32> = graph
            .user_items(user)
            .iter()
            .copied()
            .filter(|t| items.binary_search(t).is_err())
            .collect();
        let segs: Vec<Vec<SegmentDistribution<F>>> = kept
            .iter()
            .map(|&t| {
                if entities.is_empty() {
                    self.ranker.item_segments[t as usize].clone()
                } else {
                    let ents: Vec<u32> = graph
                        .item_entities(t)
                        .iter()
                        .copied()
                        .filter(|e| entities.binary_search(e).is_err())
                        .collect();
                    item_segments_traced(&ents, model, &self.ranker.aff).0
                }
            })
            .collect();
        let refs: Vec<&[SegmentDistribution<F>]> = segs.iter().map(Vec::as_slice).collect();
        let enc = encode_user_with(&kept, &refs, model, &self.ranker.aff);
        Ok(enc.realize(RealizeMode::Mean, &mut SeededRng::new(0)))
    }
}

pub fn item_importance<F: Real>(
    item: u32,
    user: u32,
    target: u32,
    model: &Model<F>,
    graph: &HeteroGraph,
) -> Result<Contribution> {
    Explainer::new(model, graph).item_importance(item, user, target)
}

pub fn entity_importance<F: Real>(
    entity: u32,
    user: u32,
    target: u32,
    model: &Model<F>,
    graph: &HeteroGraph,
) -> Result<Contribution> {
    Explainer::new(model, graph).entity_importance(entity, user, target)
}

pub fn explain<F: Real>(user: u32, target: u32, model: &Model<F>, graph: &HeteroGraph, top_m: usize) -> Result<Explanation> {
    Explainer::new(model, graph).explain(user, target, top_m)
}

/// How removal candidates are ordered.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// By aggregated importance; ties broken at random per run.
    Model,
    /// Uniformly random order, redrawn per run.
    Random,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Model => "model",
            Self::Random => "random",
        }
    }
}

/// Which node kinds a budget of `n` removes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RemovalTarget {
    /// `n` historical items.
    Items,
    /// `n` entities reached through the historical items.
    Entities,
    /// `n` items and `n` entities.
    Both,
}

impl RemovalTarget {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Items => "items",
            Self::Entities => "entities",
            Self::Both => "both",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "items" => Some(Self::Items),
            "entities" => Some(Self::Entities),
            "both" => Some(Self::Both),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftConfig {
    pub budgets: Vec<usize>,
    pub strategy: Strategy,
    pub target: RemovalTarget,
    pub runs: usize,
    pub seed: u64,
    /// Length of the recommendation list and the recall cut-off.
    pub k: usize,
}

impl Default for ShiftConfig {
    fn default() -> Self {
        Self {
            budgets: vec![1, 2, 3, 4, 5],
            strategy: Strategy::Model,
            target: RemovalTarget::Both,
            runs: 5,
            seed: 0,
            k: 10,
        }
    }
}

/// One `(budget, run)` cell, averaged over users with non-zero recall.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftRow {
    pub n: usize,
    pub run: usize,
    pub recall: f64,
    pub recall_prime: f64,
    pub shift: f64,
    pub users: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftReport {
    pub strategy: Strategy,
    pub target: RemovalTarget,
    pub rows: Vec<ShiftRow>,
    /// Test users left out because their recall before removal was 0.
    pub excluded_users: usize,
}

impl ShiftReport {
    /// Mean shift over runs at budget `n`.
    pub fn mean_shift(&self, n: usize) -> Option<f64> {
        let vals: Vec<f64> = self.rows.iter().filter(|r| r.n == n).map(|r| r.shift).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// Orders `scored` by descending score; ties follow a random pre-shuffle.
fn model_order(mut scored: Vec<(u32, f64)>, rng: &mut SeededRng) -> Vec<u32> {
    rng.shuffle(&mut scored);
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(core::cmp::Ordering::Equal));
    scored.into_iter().map(|(n, _)| n).collect()
}

fn removal_set(order: &[u32], n: usize) -> Vec<u32> {
    let mut set = order[..n.min(order.len())].to_vec();
    set.sort_unstable();
    set
}

/// Removes the nodes an ordering ranks highest from each test user's
/// inference input and measures the relative drop in Recall@k.
pub fn faithfulness_shift<F: Real>(
    model: &Model<F>,
    graph: &HeteroGraph,
    split: &DatasetSplit,
    config: &ShiftConfig,
) -> Result<ShiftReport> {
    if split.test.is_empty() {
        return Err(Error::EmptyInput("test users"));
    }
    if config.runs == 0 || config.k == 0 {
        return Err(Error::Domain("runs and k must be positive"));
    }
    let explainer = Explainer::new(model, graph);
    let ranker = explainer.ranker();

    struct Prepared {
        user: u32,
        recall: f64,
        item_scores: Vec<(u32, f64)>,
        entity_scores: Vec<(u32, f64)>,
    }
    let mut prepared = Vec::new();
    let mut excluded = 0;
    for (&u, truth) in split.test.users.iter().zip(&split.test.truth) {
        if truth.is_empty() || graph.user_items(u).is_empty() {
            excluded += 1;
            continue;
        }
        // Same path as the perturbed runs so an empty removal is exact.
        let rep = explainer.perturbed_representation(u, &[], &[])?;
        let recs = ranker.top_k(&rep, graph.user_items(u), Some(config.k));
        let recall = recall_at_k(&recs, truth, config.k)?;
        if recall == 0.0 {
            excluded += 1;
            continue;
        }
        let mut items: BTreeMap<u32, f64> = BTreeMap::new();
        let mut entities: BTreeMap<u32, f64> = BTreeMap::new();
        for &t in &recs {
            let terms = explainer.terms(&rep, t)?;
            for c in explainer.item_scores_with(u, &terms) {
                *items.entry(c.node).or_insert(0.0) += c.total;
            }
            for c in explainer.entity_scores_with(u, &terms) {
                *entities.entry(c.node).or_insert(0.0) += c.total;
            }
        }
        prepared.push(Prepared {
            user: u,
            recall,
            item_scores: items.into_iter().collect(),
            entity_scores: entities.into_iter().collect(),
        });
    }
    if prepared.is_empty() {
        return Err(Error::EmptyInput("no test user has non-zero recall"));
    }

    let root = SeededRng::new(config.seed);
    let mut rows = Vec::with_capacity(config.runs * config.budgets.len());
    for run in 0..config.runs {
        let mut rng = root.fork(run as u64);
        let mut sums = vec![[0.0f64; 3]; config.budgets.len()];
        for p in &prepared {
            let (item_order, entity_order) = match config.strategy {
                Strategy::Model => (
                    model_order(p.item_scores.clone(), &mut rng),
                    model_order(p.entity_scores.clone(), &mut rng),
                ),
                Strategy::Random => {
                    let mut items: Vec<u32> = p.item_scores.iter().map(|x| x.0).collect();
                    let mut ents: Vec<u32> = p.entity_scores.iter().map(|x| x.0).collect();
                    rng.shuffle(&mut items);
                    rng.shuffle(&mut ents);
                    (items, ents)
                }
            };
            let truth = split.test.truth_of(p.user).expect("prepared users come from the test group");
            for (b, &n) in config.budgets.iter().enumerate() {
                let items = match config.target {
                    RemovalTarget::Items | RemovalTarget::Both => removal_set(&item_order, n),
                    RemovalTarget::Entities => Vec::new(),
                };
                let ents = match config.target {
                    RemovalTarget::Entities | RemovalTarget::Both => removal_set(&entity_order, n),
                    RemovalTarget::Items => Vec::new(),
                };
                let rep = explainer.perturbed_representation(p.user, &items, &ents)?;
                // Candidates still exclude the original training items.
                let recs = ranker.top_k(&rep, graph.user_items(p.user), Some(config.k));
                let after = recall_at_k(&recs, truth, config.k)?;
                sums[b][0] += p.recall;
                sums[b][1] += after;
                sums[b][2] += (p.recall - after) / p.recall;
            }
        }
        let m = prepared.len() as f64;
        for (b, &n) in config.budgets.iter().enumerate() {
            rows.push(ShiftRow {
                n,
                run,
                recall: sums[b][0] / m,
                recall_prime: sums[b][1] / m,
                shift: sums[b][2] / m,
                users: prepared.len(),
            });
        }
    }
    Ok(ShiftReport {
        strategy: config.strategy,
        target: config.target,
        rows,
        excluded_users: excluded,
    })
}
