//! Factor-wise user/item scoring and the multinomial likelihood over items.
//!
//! `S(u, t) = sum_c p(t, c) exp(<itm_c(u), d_t>) + sum_c exp(<ent_c(u), d_{t,c}>)`
//! where `d` comes from the decoder tables (untied) or from the encoder's
//! item base embedding and entity-segment means (tied).

#[allow(unused_imports)]
use num_traits::Float as _;
use alloc::borrow::Cow;
use alloc::vec;
use alloc::vec::Vec;

use crate::encoder::{item_segments_traced, Affiliations, UserRepresentation};
use crate::numerics::{dot, Real};
use crate::{Error, HeteroGraph, Model, Result, Tensor};

/// Inner products are clamped to this value before exponentiation.
pub const EXP_CLAMP: f64 = 50.0;

#[inline]
pub(crate) fn clamped_exp<F: Real>(x: F) -> (F, bool) {
    let cap = F::of(EXP_CLAMP);
    if x > cap {
        (cap.exp(), true)
    } else {
        (x.exp(), false)
    }
}

/// Item-side vectors the scoring function pairs with user segments.
#[derive(Debug, Clone)]
pub struct ItemTargets<'a, F: Real> {
    /// `|T| x D`
    pub base: &'a Tensor<F>,
    /// `|T| x C1 x D`
    pub entity: Cow<'a, Tensor<F>>,
}

impl<'a, F: Real> ItemTargets<'a, F> {
    pub fn new(model: &'a Model<F>, graph: &HeteroGraph, aff: &Affiliations<F>) -> Self {
        match &model.params.decoder.tables {
            Some(t) => Self {
                base: &t.item,
                entity: Cow::Borrowed(&t.entity),
            },
            None => {
                let cfg = &model.factors;
                let n = graph.n_items();
                let mut data = Vec::with_capacity(n * cfg.entity_factors * cfg.dim);
                for t in 0..n as u32 {
                    let (segs, _) = item_segments_traced(graph.item_entities(t), model, aff);
                    for s in segs {
                        data.extend(s.mu);
                    }
                }
                Self {
                    base: &model.params.encoder.item_base,
                    entity: Cow::Owned(
                        Tensor::new(vec![n, cfg.entity_factors, cfg.dim], data).expect("tied item table"),
                    ),
                }
            }
        }
    }

    #[inline]
    pub fn item_vector(&self, item: u32) -> &[F] {
        self.base.row(item as usize)
    }

    #[inline]
    pub fn entity_vector(&self, item: u32, factor: usize) -> &[F] {
        let row = self.entity.row(item as usize);
        let d = self.base.row_len();
        &row[factor * d..(factor + 1) * d]
    }
}

/// Per-factor summands of `S(u, t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTerms<F> {
    /// `p(t, c) exp(<itm_c(u), d_t>)`, one per item factor.
    pub item: Vec<F>,
    /// `exp(<ent_c(u), d_{t,c}>)`, one per entity factor.
    pub entity: Vec<F>,
}

impl<F: Real> ScoreTerms<F> {
    pub fn total(&self) -> F {
        self.item
            .iter()
            .chain(&self.entity)
            .fold(F::zero(), |a, &b| a + b)
    }
}

pub fn score_terms<F: Real>(
    user: &UserRepresentation<F>,
    item: u32,
    targets: &ItemTargets<'_, F>,
    item_affiliation: &[F],
) -> ScoreTerms<F> {
    let d_t = targets.item_vector(item);
    let item_terms = user
        .itm
        .iter()
        .zip(item_affiliation)
        .map(|(z, &p)| p * clamped_exp(dot(z, d_t)).0)
        .collect();
    let entity_terms = user
        .ent
        .iter()
        .enumerate()
        .map(|(c, z)| clamped_exp(dot(z, targets.entity_vector(item, c))).0)
        .collect();
    ScoreTerms {
        item: item_terms,
        entity: entity_terms,
    }
}

/// `S(u, t)`; always positive.
pub fn score_pair<F: Real>(
    user: &UserRepresentation<F>,
    item: u32,
    targets: &ItemTargets<'_, F>,
    item_affiliation: &[F],
) -> F {
    score_terms(user, item, targets, item_affiliation).total()
}

/// `sum_{t in positives} [ln S(u, t) - ln sum_{t' in candidates} S(u, t')]`.
pub fn log_likelihood<F: Real>(
    user: &UserRepresentation<F>,
    positives: &[u32],
    candidates: &[u32],
    targets: &ItemTargets<'_, F>,
    aff: &Affiliations<F>,
) -> Result<F> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let mut normaliser = 0.0f64;
    for &t in candidates {
        normaliser += score_pair(user, t, targets, aff.item.row(t as usize)).f64();
    }
    let log_z = normaliser.ln();
    let mut ll = 0.0f64;
    for &t in positives {
        if !candidates.contains(&t) {
            return Err(Error::Domain("positive item missing from candidates"));
        }
        ll += score_pair(user, t, targets, aff.item.row(t as usize)).f64().ln() - log_z;
    }
    Ok(F::of(ll))
}

/// Normalised item probabilities over `candidates`.
pub fn candidate_probabilities<F: Real>(
    user: &UserRepresentation<F>,
    candidates: &[u32],
    targets: &ItemTargets<'_, F>,
    aff: &Affiliations<F>,
) -> Result<Vec<F>> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let scores: Vec<f64> = candidates
        .iter()
        .map(|&t| score_pair(user, t, targets, aff.item.row(t as usize)).f64())
        .collect();
    let z: f64 = scores.iter().sum();
    Ok(scores.into_iter().map(|s| F::of(s / z)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::RealizeMode;
    use crate::model::ModelParams;
    use crate::{FactorConfig, SeededRng};

    fn zero_model(c1: usize, c2: usize, d: usize, n_items: usize) -> Model<f64> {
        let cfg = FactorConfig::new(c1, c2, d, 0.1).unwrap();
        Model {
            factors: cfg,
            params: ModelParams::zeros(&cfg, n_items, 1, false),
        }
    }

    fn rep(itm: Vec<Vec<f64>>, ent: Vec<Vec<f64>>) -> UserRepresentation<f64> {
        UserRepresentation {
            itm,
            ent,
            mode: RealizeMode::Mean,
        }
    }

    fn graph(n_items: usize) -> HeteroGraph {
        HeteroGraph::from_edges((1, n_items, 1), &[(0, 0)], &[], &[]).unwrap()
    }

    #[test]
    fn zero_embeddings_score_two() {
        let m = zero_model(1, 1, 2, 1);
        let g = graph(1);
        let aff = Affiliations::compute(&m);
        let targets = ItemTargets::new(&m, &g, &aff);
        let u = rep(vec![vec![0.0; 2]], vec![vec![0.0; 2]]);
        assert_eq!(score_pair(&u, 0, &targets, &[1.0]), 2.0);
    }

    #[test]
    fn adding_ln2_doubles_a_term() {
        let mut m = zero_model(1, 1, 1, 1);
        m.params.decoder.tables.as_mut().unwrap().entity.data_mut()[0] = 1.0;
        let g = graph(1);
        let aff = Affiliations::compute(&m);
        let targets = ItemTargets::new(&m, &g, &aff);
        let a = score_terms(&rep(vec![vec![0.0]], vec![vec![0.3]]), 0, &targets, &[1.0]);
        let b = score_terms(&rep(vec![vec![0.0]], vec![vec![0.3 + 2f64.ln()]]), 0, &targets, &[1.0]);
        assert!((b.entity[0] - 2.0 * a.entity[0]).abs() < 1e-12);
        assert_eq!(a.item, b.item);
    }

    #[test]
    fn score_matches_term_by_term_recomputation() {
        let mut m = zero_model(2, 3, 4, 5);
        let mut rng = SeededRng::new(17);
        for t in m.params.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = rng.standard_normal::<f64>() * 0.7);
        }
        let g = graph(5);
        let aff = Affiliations::compute(&m);
        let targets = ItemTargets::new(&m, &g, &aff);
        let u = rep(
            (0..3).map(|_| (0..4).map(|_| rng.standard_normal()).collect()).collect(),
            (0..2).map(|_| (0..4).map(|_| rng.standard_normal()).collect()).collect(),
        );
        let tables = m.params.decoder.tables.as_ref().unwrap();
        for t in 0..5u32 {
            let p = aff.item.row(t as usize);
            let mut expected = 0.0;
            for c in 0..3 {
                let ip: f64 = (0..4).map(|k| u.itm[c][k] * tables.item.row(t as usize)[k]).sum();
                expected += p[c] * ip.exp();
            }
            for c in 0..2 {
                let row = tables.entity.row(t as usize);
                let ip: f64 = (0..4).map(|k| u.ent[c][k] * row[c * 4 + k]).sum();
                expected += ip.exp();
            }
            let s = score_pair(&u, t, &targets, p);
            assert!((s - expected).abs() < 1e-12 * expected.max(1.0));
            assert!(s > 0.0);
        }
    }

    #[test]
    fn likelihood_cases() {
        let m = zero_model(1, 1, 2, 5);
        let g = graph(5);
        let aff = Affiliations::compute(&m);
        let targets = ItemTargets::new(&m, &g, &aff);
        let u = rep(vec![vec![0.0; 2]], vec![vec![0.0; 2]]);
        let ll = log_likelihood(&u, &[0], &[0, 1], &targets, &aff).unwrap();
        assert!((ll - 0.5f64.ln()).abs() < 1e-12);
        assert_eq!(log_likelihood(&u, &[0], &[], &targets, &aff), Err(Error::EmptyCandidates));
        assert!(log_likelihood(&u, &[4], &[0, 1], &targets, &aff).is_err());
    }

    #[test]
    fn likelihood_matches_direct_softmax() {
        let mut m = zero_model(2, 2, 3, 5);
        let mut rng = SeededRng::new(23);
        for t in m.params.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = rng.standard_normal::<f64>());
        }
        let g = graph(5);
        let aff = Affiliations::compute(&m);
        let targets = ItemTargets::new(&m, &g, &aff);
        let u = rep(
            (0..2).map(|_| (0..3).map(|_| rng.standard_normal()).collect()).collect(),
            (0..2).map(|_| (0..3).map(|_| rng.standard_normal()).collect()).collect(),
        );
        let cands = [0u32, 1, 2, 3, 4];
        let scores: Vec<f64> = cands.iter().map(|&t| score_pair(&u, t, &targets, aff.item.row(t as usize))).collect();
        let z: f64 = scores.iter().sum();
        let expected = (scores[1] / z).ln() + (scores[3] / z).ln();
        let ll = log_likelihood(&u, &[1, 3], &cands, &targets, &aff).unwrap();
        assert!((ll - expected).abs() < 1e-10);
        assert!(ll <= 0.0);
        let probs = candidate_probabilities(&u, &cands, &targets, &aff).unwrap();
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dominant_positive_approaches_zero() {
        let mut m = zero_model(1, 1, 1, 2);
        m.params.decoder.tables.as_mut().unwrap().item.data_mut()[0] = 1.0;
        let g = graph(2);
        let aff = Affiliations::compute(&m);
        let targets = ItemTargets::new(&m, &g, &aff);
        let u = rep(vec![vec![30.0]], vec![vec![0.0]]);
        let ll = log_likelihood(&u, &[0], &[0, 1], &targets, &aff).unwrap();
        assert!(ll < 0.0 && ll > -1e-10);
    }

    #[test]
    fn clamp_prevents_overflow() {
        let mut m = zero_model(1, 1, 1, 1);
        m.params.decoder.tables.as_mut().unwrap().item.data_mut()[0] = 1e6;
        let g = graph(1);
        let aff = Affiliations::compute(&m);
        let targets = ItemTargets::new(&m, &g, &aff);
        let u = rep(vec![vec![1e6]], vec![vec![0.0]]);
        let s = score_pair(&u, 0, &targets, &[1.0]);
        assert!(s.is_finite());
        assert!((s - (50f64.exp() + 1.0)).abs() < 1e-6 * s);
    }
}
