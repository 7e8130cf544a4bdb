//! Factor affiliations and segment-factorised graph convolution.
//!
//! An item's representation is its own base embedding followed by one
//! Gaussian segment per entity factor; each segment aggregates only the
//! entity neighbours affiliated with that factor. A user's representation is
//! one Gaussian segment per item factor (built from historical items) and
//! one per entity factor (the mean of its items' entity segments). Sources
//! and factors are never mixed.

use alloc::vec;
use alloc::vec::Vec;

use crate::numerics::tensor::matvec;
use crate::numerics::{axpy, cosine_unchecked, softmax_temp, Real, SeededRng};
use crate::{Error, HeteroGraph, Model, Result, Tensor};

/// Segment log standard deviations are clipped to `[-5, 5]`.
pub const LOG_SIGMA_CLIP: f64 = 5.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentDistribution<F = f32> {
    pub mu: Vec<F>,
    pub sigma: Vec<F>,
}

impl<F: Real> SegmentDistribution<F> {
    /// The standard-normal prior.
    pub fn prior(dim: usize) -> Self {
        Self {
            mu: vec![F::zero(); dim],
            sigma: vec![F::one(); dim],
        }
    }

    pub fn realize(&self, mode: RealizeMode, rng: &mut SeededRng) -> Vec<F> {
        match mode {
            RealizeMode::Mean => self.mu.clone(),
            RealizeMode::Sampled => self
                .mu
                .iter()
                .zip(&self.sigma)
                .map(|(&m, &s)| m + s * rng.standard_normal::<F>())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RealizeMode {
    Sampled,
    Mean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ItemEncoding<F = f32> {
    /// Deterministic base embedding.
    pub base: Vec<F>,
    /// One segment per entity factor.
    pub ent_segments: Vec<SegmentDistribution<F>>,
}

impl<F: Real> ItemEncoding<F> {
    /// `base || ent_1 || ... || ent_C1`, width `(1 + C1) * D`.
    pub fn realize(&self, mode: RealizeMode, rng: &mut SeededRng) -> Vec<F> {
        let mut out = self.base.clone();
        for seg in &self.ent_segments {
            out.extend(seg.realize(mode, rng));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserEncoding<F = f32> {
    /// One segment per item factor.
    pub itm_segments: Vec<SegmentDistribution<F>>,
    /// One segment per entity factor.
    pub ent_segments: Vec<SegmentDistribution<F>>,
}

impl<F: Real> UserEncoding<F> {
    pub fn prior(cfg: &crate::FactorConfig) -> Self {
        Self {
            itm_segments: vec![SegmentDistribution::prior(cfg.dim); cfg.item_factors],
            ent_segments: vec![SegmentDistribution::prior(cfg.dim); cfg.entity_factors],
        }
    }

    /// Segments are realised independently, item segments first.
    pub fn realize(&self, mode: RealizeMode, rng: &mut SeededRng) -> UserRepresentation<F> {
        UserRepresentation {
            itm: self.itm_segments.iter().map(|s| s.realize(mode, rng)).collect(),
            ent: self.ent_segments.iter().map(|s| s.realize(mode, rng)).collect(),
            mode,
        }
    }

    pub fn segments(&self) -> impl Iterator<Item = &SegmentDistribution<F>> {
        self.itm_segments.iter().chain(&self.ent_segments)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserRepresentation<F = f32> {
    pub itm: Vec<Vec<F>>,
    pub ent: Vec<Vec<F>>,
    pub mode: RealizeMode,
}

impl<F: Real> UserRepresentation<F> {
    /// `itm_1 || ... || itm_C2 || ent_1 || ... || ent_C1`.
    pub fn concat(&self) -> Vec<F> {
        self.itm.iter().chain(&self.ent).flatten().copied().collect()
    }
}

/// Softmax over factors of `cos(base, prototype_c) / gamma`.
pub fn affiliation<F: Real>(base: &[F], prototypes: &Tensor<F>, gamma: F) -> Vec<F> {
    let logits: Vec<F> = (0..prototypes.shape()[0])
        .map(|c| cosine_unchecked(base, prototypes.row(c)))
        .collect();
    softmax_temp(&logits, gamma).expect("temperature validated by FactorConfig")
}

pub fn entity_affiliation<F: Real>(entity: u32, model: &Model<F>) -> Result<Vec<F>> {
    let enc = &model.params.encoder;
    if entity as usize >= enc.entity_base.shape()[0] {
        return Err(Error::OutOfRange {
            kind: "entity",
            index: entity,
        });
    }
    Ok(affiliation(
        enc.entity_base.row(entity as usize),
        &enc.entity_prototypes,
        model.gamma(),
    ))
}

pub fn item_affiliation<F: Real>(item: u32, model: &Model<F>) -> Result<Vec<F>> {
    let enc = &model.params.encoder;
    if item as usize >= enc.item_base.shape()[0] {
        return Err(Error::OutOfRange {
            kind: "item",
            index: item,
        });
    }
    Ok(affiliation(
        enc.item_base.row(item as usize),
        &enc.item_prototypes,
        model.gamma(),
    ))
}

/// Affiliations of every entity (`|E| x C1`) and item (`|T| x C2`).
#[derive(Debug, Clone, PartialEq)]
pub struct Affiliations<F = f32> {
    pub entity: Tensor<F>,
    pub item: Tensor<F>,
}

impl<F: Real> Affiliations<F> {
    pub fn compute(model: &Model<F>) -> Self {
        let enc = &model.params.encoder;
        let gamma = model.gamma();
        let table = |base: &Tensor<F>, protos: &Tensor<F>| {
            let n = base.shape()[0];
            let c = protos.shape()[0];
            let mut data = Vec::with_capacity(n * c);
            for i in 0..n {
                data.extend(affiliation(base.row(i), protos, gamma));
            }
            Tensor::new(vec![n, c], data).expect("affiliation table shape")
        };
        Self {
            entity: table(&enc.entity_base, &enc.entity_prototypes),
            item: table(&enc.item_base, &enc.item_prototypes),
        }
    }
}

/// Intermediate values of one mapped segment, kept for backpropagation.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct SegmentTrace<F> {
    /// `tanh` of the aggregate.
    pub h: Vec<F>,
    /// Unclipped log standard deviation.
    pub raw_log_sigma: Vec<F>,
}

/// `mu = W_mu tanh(a)`, `sigma = exp(clip(W_ls tanh(a)))`.
pub(crate) fn map_segment<F: Real>(
    aggregate: &[F],
    w_mu: &Tensor<F>,
    w_log_sigma: &Tensor<F>,
) -> (SegmentDistribution<F>, SegmentTrace<F>) {
    let d = aggregate.len();
    let h: Vec<F> = aggregate.iter().map(|a| a.tanh()).collect();
    let mut mu = vec![F::zero(); d];
    let mut raw = vec![F::zero(); d];
    matvec(w_mu.data(), &h, &mut mu);
    matvec(w_log_sigma.data(), &h, &mut raw);
    let clip = F::of(LOG_SIGMA_CLIP);
    let sigma = raw.iter().map(|&r| r.max(-clip).min(clip).exp()).collect();
    (
        SegmentDistribution { mu, sigma },
        SegmentTrace {
            h,
            raw_log_sigma: raw,
        },
    )
}

/// `sum_n weight(n, c) / |N| * base_n` over a neighbour list.
pub(crate) fn factor_aggregate<F: Real>(
    neighbors: &[u32],
    factor: usize,
    weights: &Tensor<F>,
    base: &Tensor<F>,
) -> Vec<F> {
    let mut agg = vec![F::zero(); base.row_len()];
    let inv = F::one() / F::of(neighbors.len() as f64);
    for &n in neighbors {
        let w = weights.row(n as usize)[factor] * inv;
        axpy(w, base.row(n as usize), &mut agg);
    }
    agg
}

/// Entity segments of an item with neighbourhood `entities`, with traces.
/// An empty neighbourhood yields prior segments and no traces.
pub(crate) fn item_segments_traced<F: Real>(
    entities: &[u32],
    model: &Model<F>,
    aff: &Affiliations<F>,
) -> (Vec<SegmentDistribution<F>>, Option<Vec<SegmentTrace<F>>>) {
    let cfg = &model.factors;
    let enc = &model.params.encoder;
    if entities.is_empty() {
        return (vec![SegmentDistribution::prior(cfg.dim); cfg.entity_factors], None);
    }
    let mut segs = Vec::with_capacity(cfg.entity_factors);
    let mut traces = Vec::with_capacity(cfg.entity_factors);
    for c in 0..cfg.entity_factors {
        let agg = factor_aggregate(entities, c, &aff.entity, &enc.entity_base);
        let (s, t) = map_segment(&agg, &enc.ent_map_mu, &enc.ent_map_log_sigma);
        segs.push(s);
        traces.push(t);
    }
    (segs, Some(traces))
}

/// Encodes item `item` using an explicit entity neighbourhood.
pub fn encode_item_with<F: Real>(
    item: u32,
    entities: &[u32],
    model: &Model<F>,
    aff: &Affiliations<F>,
) -> ItemEncoding<F> {
    let (ent_segments, _) = item_segments_traced(entities, model, aff);
    ItemEncoding {
        base: model.params.encoder.item_base.row(item as usize).to_vec(),
        ent_segments,
    }
}

pub fn encode_item<F: Real>(item: u32, graph: &HeteroGraph, model: &Model<F>) -> Result<ItemEncoding<F>> {
    graph.check_item(item)?;
    let aff = Affiliations::compute(model);
    Ok(encode_item_with(item, graph.item_entities(item), model, &aff))
}

/// Item-factor segments of a user with historical items `items`.
pub(crate) fn user_item_segments_traced<F: Real>(
    items: &[u32],
    model: &Model<F>,
    aff: &Affiliations<F>,
) -> (Vec<SegmentDistribution<F>>, Vec<SegmentTrace<F>>) {
    let enc = &model.params.encoder;
    let mut segs = Vec::with_capacity(model.factors.item_factors);
    let mut traces = Vec::with_capacity(model.factors.item_factors);
    for c in 0..model.factors.item_factors {
        let agg = factor_aggregate(items, c, &aff.item, &enc.item_base);
        let (s, t) = map_segment(&agg, &enc.itm_map_mu, &enc.itm_map_log_sigma);
        segs.push(s);
        traces.push(t);
    }
    (segs, traces)
}

/// Element-wise mean of the items' entity segment parameters.
pub(crate) fn mean_entity_segments<'a, F: Real, I>(
    item_segments: I,
    n_items: usize,
    cfg: &crate::FactorConfig,
) -> Vec<SegmentDistribution<F>>
where
    I: IntoIterator<Item = &'a [SegmentDistribution<F>]>,
{
    let mut out = vec![
        SegmentDistribution {
            mu: vec![F::zero(); cfg.dim],
            sigma: vec![F::zero(); cfg.dim],
        };
        cfg.entity_factors
    ];
    let inv = F::one() / F::of(n_items as f64);
    for segs in item_segments {
        for (acc, s) in out.iter_mut().zip(segs) {
            axpy(inv, &s.mu, &mut acc.mu);
            axpy(inv, &s.sigma, &mut acc.sigma);
        }
    }
    out
}

/// Encodes a user from an explicit item neighbourhood and the entity
/// segments of those items (aligned with `items`). An empty neighbourhood
/// yields the prior.
pub fn encode_user_with<F: Real>(
    items: &[u32],
    item_ent_segments: &[&[SegmentDistribution<F>]],
    model: &Model<F>,
    aff: &Affiliations<F>,
) -> UserEncoding<F> {
    if items.is_empty() {
        return UserEncoding::prior(&model.factors);
    }
    let (itm_segments, _) = user_item_segments_traced(items, model, aff);
    let ent_segments = mean_entity_segments(item_ent_segments.iter().copied(), items.len(), &model.factors);
    UserEncoding {
        itm_segments,
        ent_segments,
    }
}

/// Encodes a user from its training neighbourhood in `graph`.
pub fn encode_user<F: Real>(user: u32, graph: &HeteroGraph, model: &Model<F>) -> Result<UserEncoding<F>> {
    let aff = Affiliations::compute(model);
    encode_user_cached(user, graph, model, &aff)
}

pub(crate) fn encode_user_cached<F: Real>(
    user: u32,
    graph: &HeteroGraph,
    model: &Model<F>,
    aff: &Affiliations<F>,
) -> Result<UserEncoding<F>> {
    graph.check_user(user)?;
    let items = graph.user_items(user);
    if items.is_empty() {
        return Err(Error::ColdUser(user));
    }
    let segs: Vec<Vec<SegmentDistribution<F>>> = items
        .iter()
        .map(|&t| item_segments_traced(graph.item_entities(t), model, aff).0)
        .collect();
    let refs: Vec<&[SegmentDistribution<F>]> = segs.iter().map(Vec::as_slice).collect();
    Ok(encode_user_with(items, &refs, model, aff))
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelParams;
    use crate::FactorConfig;

    fn toy_model(c1: usize, c2: usize, d: usize, n_items: usize, n_entities: usize, seed: u64) -> Model<f64> {
        let cfg = FactorConfig::new(c1, c2, d, 0.5).unwrap();
        let mut params = ModelParams::<f64>::zeros(&cfg, n_items, n_entities, false);
        let mut rng = SeededRng::new(seed);
        for t in params.tensors_mut() {
            for v in t.data_mut() {
                *v = 0.5 * rng.standard_normal::<f64>();
            }
        }
        Model { factors: cfg, params }
    }

    fn chain_graph() -> HeteroGraph {
        // users: 0 -> {0, 1}, 1 -> {1}; items: 0 -> {0, 1}, 1 -> {2}, 2 -> {}
        HeteroGraph::from_edges(
            (2, 3, 3),
            &[(0, 0), (0, 1), (1, 1)],
            &[(0, 0), (0, 1), (1, 2)],
            &[],
        )
        .unwrap()
    }

    #[test]
    fn single_factor_affiliation_is_one() {
        let m = toy_model(1, 1, 3, 3, 3, 1);
        assert_eq!(entity_affiliation(0, &m).unwrap(), vec![1.0]);
        assert_eq!(item_affiliation(2, &m).unwrap(), vec![1.0]);
    }

    #[test]
    fn equal_cosines_give_uniform_affiliation() {
        let mut m = toy_model(4, 3, 2, 1, 1, 2);
        m.params.encoder.entity_prototypes = Tensor::new(vec![4, 2], vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
        let p = entity_affiliation(0, &m).unwrap();
        for v in p {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn affiliation_is_scale_invariant() {
        let mut m = toy_model(2, 3, 4, 2, 2, 3);
        let p = item_affiliation(1, &m).unwrap();
        for v in m.params.encoder.item_base.row_mut(1) {
            *v *= 3.0;
        }
        let q = item_affiliation(1, &m).unwrap();
        for (a, b) in p.iter().zip(&q) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(item_affiliation(5, &m).is_err());
    }

    #[test]
    fn empty_entity_neighbourhood_gives_prior() {
        let m = toy_model(2, 2, 3, 3, 3, 4);
        let enc = encode_item(2, &chain_graph(), &m).unwrap();
        assert_eq!(enc.ent_segments, vec![SegmentDistribution::prior(3); 2]);
        assert_eq!(enc.base, m.params.encoder.item_base.row(2));
    }

    #[test]
    fn single_neighbour_unit_weight() {
        let m = toy_model(1, 1, 3, 3, 3, 5);
        let enc = encode_item(1, &chain_graph(), &m).unwrap();
        let h: Vec<f64> = m.params.encoder.entity_base.row(2).iter().map(|x| x.tanh()).collect();
        let mut mu = vec![0.0; 3];
        matvec(m.params.encoder.ent_map_mu.data(), &h, &mut mu);
        assert_eq!(enc.ent_segments[0].mu, mu);
    }

    #[test]
    fn two_neighbours_single_factor_use_the_mean() {
        let m = toy_model(1, 2, 3, 3, 3, 6);
        let enc = encode_item(0, &chain_graph(), &m).unwrap();
        let e = &m.params.encoder.entity_base;
        let mean: Vec<f64> = (0..3).map(|k| (e.row(0)[k] + e.row(1)[k]) / 2.0).collect();
        let (expected, _) = map_segment(&mean, &m.params.encoder.ent_map_mu, &m.params.encoder.ent_map_log_sigma);
        for (a, b) in enc.ent_segments[0].mu.iter().zip(&expected.mu) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn user_with_one_item_copies_its_entity_segments() {
        let m = toy_model(2, 2, 3, 3, 3, 7);
        let g = chain_graph();
        let user = encode_user(1, &g, &m).unwrap();
        let item = encode_item(1, &g, &m).unwrap();
        assert_eq!(user.ent_segments, item.ent_segments);
    }

    #[test]
    fn user_entity_segments_average_items() {
        let m = toy_model(2, 2, 3, 3, 3, 8);
        let g = chain_graph();
        let user = encode_user(0, &g, &m).unwrap();
        let a = encode_item(0, &g, &m).unwrap();
        let b = encode_item(1, &g, &m).unwrap();
        for c in 0..2 {
            for k in 0..3 {
                let mu = (a.ent_segments[c].mu[k] + b.ent_segments[c].mu[k]) / 2.0;
                let sigma = (a.ent_segments[c].sigma[k] + b.ent_segments[c].sigma[k]) / 2.0;
                assert!((user.ent_segments[c].mu[k] - mu).abs() < 1e-12);
                assert!((user.ent_segments[c].sigma[k] - sigma).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cold_user_is_an_error() {
        let g = HeteroGraph::from_edges((2, 1, 0), &[(0, 0)], &[], &[]).unwrap();
        let m = toy_model(1, 1, 2, 1, 0, 9);
        assert_eq!(encode_user(1, &g, &m), Err(Error::ColdUser(1)));
    }

    #[test]
    fn realised_dimensions() {
        let m = toy_model(3, 2, 4, 3, 3, 10);
        let g = chain_graph();
        let mut rng = SeededRng::new(0);
        let u = encode_user(0, &g, &m).unwrap().realize(RealizeMode::Sampled, &mut rng);
        assert_eq!(u.concat().len(), m.factors.user_dim());
        let t = encode_item(0, &g, &m).unwrap().realize(RealizeMode::Mean, &mut rng);
        assert_eq!(t.len(), m.factors.item_dim());
    }

    #[test]
    fn mean_mode_ignores_rng_and_sampling_is_seeded() {
        let m = toy_model(2, 2, 3, 3, 3, 11);
        let enc = encode_user(0, &chain_graph(), &m).unwrap();
        let a = enc.realize(RealizeMode::Mean, &mut SeededRng::new(1));
        let b = enc.realize(RealizeMode::Mean, &mut SeededRng::new(2));
        assert_eq!(a, b);
        let s1 = enc.realize(RealizeMode::Sampled, &mut SeededRng::new(3));
        let s2 = enc.realize(RealizeMode::Sampled, &mut SeededRng::new(3));
        assert_eq!(s1, s2);

        let mut tight = enc.clone();
        for s in tight.itm_segments.iter_mut().chain(tight.ent_segments.iter_mut()) {
            s.sigma.iter_mut().for_each(|v| *v = (-LOG_SIGMA_CLIP).exp());
        }
        let r = tight.realize(RealizeMode::Sampled, &mut SeededRng::new(4));
        for (x, y) in r.concat().iter().zip(a.concat()) {
            assert!((x - y).abs() < 0.05);
        }
    }

    #[test]
    fn neighbour_order_does_not_matter() {
        let m = toy_model(2, 2, 3, 3, 3, 12);
        let aff = Affiliations::compute(&m);
        let a = encode_item_with(0, &[0, 1, 2], &m, &aff);
        let b = encode_item_with(0, &[2, 0, 1], &m, &aff);
        for (x, y) in a.ent_segments.iter().zip(&b.ent_segments) {
            for (p, q) in x.mu.iter().zip(&y.mu) {
                assert!((p - q).abs() < 1e-12);
            }
        }
    }
}
