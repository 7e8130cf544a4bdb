//! ELBO objective and its hand-derived gradient.
//!
//! For each user in a batch the encoder produces segment posteriors, one
//! reparameterised sample per segment is scored against the candidate items,
//! and the loss is the multinomial negative log-likelihood of the user's
//! training items plus the KL of every user segment from `N(0, I)`. Batch
//! losses are averaged over users; an L2 penalty on all parameters is added
//! once.

#[allow(unused_imports)]
use num_traits::Float as _;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::decoder::{clamped_exp, ItemTargets};
use crate::encoder::{
    item_segments_traced, mean_entity_segments, user_item_segments_traced, Affiliations,
    SegmentDistribution, SegmentTrace, LOG_SIGMA_CLIP,
};
use crate::numerics::tensor::{matvec_t_acc, outer_acc};
use crate::numerics::{axpy, dot, gaussian_kl_unchecked, norm, Real, NORM_FLOOR};
use crate::{Error, HeteroGraph, Model, ModelParams, Result, SeededRng, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SoftmaxMode {
    /// Normalise over every item.
    Full,
    /// Normalise over the positives plus this many uniform negatives.
    Sampled(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveConfig {
    pub l2_weight: f64,
    /// Reparameterised samples per segment and step.
    pub mc_samples: usize,
    pub softmax: SoftmaxMode,
    /// Score each training item with a user encoding that leaves it out.
    pub exclude_target_from_neighborhood: bool,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            l2_weight: 1e-8,
            mc_samples: 1,
            softmax: SoftmaxMode::Full,
            exclude_target_from_neighborhood: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    /// Per-user mean.
    pub negative_log_likelihood: f64,
    /// Per-user mean.
    pub kl: f64,
    /// Unweighted `||theta||^2`.
    pub l2: f64,
    pub total: f64,
}

/// Batch loss without gradients.
pub fn elbo_loss<F: Real>(
    batch: &[u32],
    graph: &HeteroGraph,
    model: &Model<F>,
    cfg: &ObjectiveConfig,
    rng: &mut SeededRng,
) -> Result<LossBreakdown> {
    Pass::run(batch, graph, model, cfg, rng, false).map(|(loss, _)| loss)
}

/// Batch loss and its gradient with respect to every parameter.
pub fn elbo_loss_and_grad<F: Real>(
    batch: &[u32],
    graph: &HeteroGraph,
    model: &Model<F>,
    cfg: &ObjectiveConfig,
    rng: &mut SeededRng,
) -> Result<(LossBreakdown, ModelParams<F>)> {
    Pass::run(batch, graph, model, cfg, rng, true).map(|(loss, g)| (loss, g.expect("gradient requested")))
}

/// Entity segments of every item, with traces for backpropagation.
struct ItemCache<F> {
    segs: Vec<Vec<SegmentDistribution<F>>>,
    traces: Vec<Option<Vec<SegmentTrace<F>>>>,
}

/// Gradient buffers for quantities shared across users.
struct SharedGrads<F: Real> {
    params: ModelParams<F>,
    item_aff: Tensor<F>,
    entity_aff: Tensor<F>,
    /// `|T| x C1 x D` gradients of item entity-segment means.
    item_mu: Tensor<F>,
    item_sigma: Tensor<F>,
    item_touched: Vec<bool>,
}

struct Pass<'a, F: Real> {
    graph: &'a HeteroGraph,
    model: &'a Model<F>,
    cfg: &'a ObjectiveConfig,
    aff: Affiliations<F>,
    cache: ItemCache<F>,
    grads: Option<SharedGrads<F>>,
    is_positive: Vec<bool>,
}

/// One user encoding together with the items it is scored against.
struct Context<'c> {
    neighborhood: &'c [u32],
    positives: &'c [u32],
}

impl<'a, F: Real> Pass<'a, F> {
    fn run(
        batch: &[u32],
        graph: &'a HeteroGraph,
        model: &'a Model<F>,
        cfg: &'a ObjectiveConfig,
        rng: &mut SeededRng,
        want_grad: bool,
    ) -> Result<(LossBreakdown, Option<ModelParams<F>>)> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("batch"));
        }
        if cfg.mc_samples == 0 {
            return Err(Error::Config {
                key: "mc_samples".into(),
                message: "must be at least 1".into(),
            });
        }
        let aff = Affiliations::compute(model);
        let mut cache = ItemCache {
            segs: Vec::with_capacity(graph.n_items()),
            traces: Vec::with_capacity(graph.n_items()),
        };
        for t in 0..graph.n_items() as u32 {
            let (s, tr) = item_segments_traced(graph.item_entities(t), model, &aff);
            cache.segs.push(s);
            cache.traces.push(tr);
        }
        let grads = want_grad.then(|| {
            let c1 = model.factors.entity_factors;
            let d = model.factors.dim;
            SharedGrads {
                params: model.params.zeros_like(),
                item_aff: aff.item.zeros_like(),
                entity_aff: aff.entity.zeros_like(),
                item_mu: Tensor::zeros(&[graph.n_items(), c1, d]),
                item_sigma: Tensor::zeros(&[graph.n_items(), c1, d]),
                item_touched: vec![false; graph.n_items()],
            }
        });
        let mut pass = Pass {
            graph,
            model,
            cfg,
            aff,
            cache,
            grads,
            is_positive: vec![false; graph.n_items()],
        };

        let weight = F::one() / F::of(batch.len() as f64);
        let mut nll = 0.0f64;
        let mut kl = 0.0f64;
        for &u in batch {
            graph.check_user(u)?;
            let items = graph.user_items(u);
            if items.is_empty() {
                return Err(Error::ColdUser(u));
            }
            if cfg.exclude_target_from_neighborhood {
                let mut rest = Vec::with_capacity(items.len() - 1);
                for (k, t) in items.iter().enumerate() {
                    rest.clear();
                    rest.extend_from_slice(&items[..k]);
                    rest.extend_from_slice(&items[k + 1..]);
                    let ctx = Context {
                        neighborhood: &rest,
                        positives: core::slice::from_ref(t),
                    };
                    let (a, b) = pass.context(&ctx, weight, rng)?;
                    nll += a;
                    kl += b;
                }
            } else {
                let ctx = Context {
                    neighborhood: items,
                    positives: items,
                };
                let (a, b) = pass.context(&ctx, weight, rng)?;
                nll += a;
                kl += b;
            }
        }
        let n = batch.len() as f64;
        let l2 = model.params.squared_norm();
        let loss = LossBreakdown {
            negative_log_likelihood: nll / n,
            kl: kl / n,
            l2,
            total: nll / n + kl / n + cfg.l2_weight * l2,
        };
        if !loss.total.is_finite() {
            return Err(Error::NonFinite(format!("loss {loss:?}")));
        }
        let grads = match pass.grads.take() {
            Some(mut g) => {
                pass.backprop_items(&mut g);
                pass.backprop_affiliations(&mut g);
                let scale = F::of(2.0 * cfg.l2_weight);
                for (gt, pt) in g.params.tensors_mut().into_iter().zip(model.params.tensors()) {
                    axpy(scale, pt.data(), gt.data_mut());
                }
                Some(g.params)
            }
            None => None,
        };
        Ok((loss, grads))
    }

    fn targets(&self) -> ItemTargets<'a, F> {
        match &self.model.params.decoder.tables {
            Some(t) => ItemTargets {
                base: &t.item,
                entity: alloc::borrow::Cow::Borrowed(&t.entity),
            },
            None => {
                let cfg = &self.model.factors;
                let mut data = Vec::with_capacity(self.graph.n_items() * cfg.entity_factors * cfg.dim);
                for segs in &self.cache.segs {
                    for s in segs {
                        data.extend_from_slice(&s.mu);
                    }
                }
                ItemTargets {
                    base: &self.model.params.encoder.item_base,
                    entity: alloc::borrow::Cow::Owned(
                        Tensor::new(vec![self.graph.n_items(), cfg.entity_factors, cfg.dim], data)
                            .expect("tied table"),
                    ),
                }
            }
        }
    }

    fn candidates(&mut self, positives: &[u32], rng: &mut SeededRng) -> Vec<u32> {
        let n_items = self.graph.n_items();
        match self.cfg.softmax {
            SoftmaxMode::Full => (0..n_items as u32).collect(),
            SoftmaxMode::Sampled(n) => {
                let mut out = positives.to_vec();
                let available = n_items - positives.len();
                let want = n.min(available);
                let mut taken = vec![false; n_items];
                for &t in positives {
                    taken[t as usize] = true;
                }
                while out.len() < positives.len() + want {
                    let t = rng.below(n_items);
                    if !taken[t] {
                        taken[t] = true;
                        out.push(t as u32);
                    }
                }
                out
            }
        }
    }

    /// Loss contribution `(nll, kl)` of one context, accumulating gradients
    /// scaled by `weight`.
    fn context(&mut self, ctx: &Context<'_>, weight: F, rng: &mut SeededRng) -> Result<(f64, f64)> {
        let fc = self.model.factors;
        let (c1, c2, d) = (fc.entity_factors, fc.item_factors, fc.dim);
        let candidates = self.candidates(ctx.positives, rng);

        // Encode. An empty neighbourhood leaves every segment at the prior.
        let nb = ctx.neighborhood;
        let (itm, itm_traces, ent) = if nb.is_empty() {
            (
                vec![SegmentDistribution::prior(d); c2],
                None,
                vec![SegmentDistribution::prior(d); c1],
            )
        } else {
            let (s, t) = user_item_segments_traced(nb, self.model, &self.aff);
            let e = mean_entity_segments(nb.iter().map(|&t| self.cache.segs[t as usize].as_slice()), nb.len(), &fc);
            (s, Some(t), e)
        };

        let mut kl = 0.0f64;
        for s in itm.iter().chain(&ent) {
            kl += gaussian_kl_unchecked(&s.mu, &s.sigma).f64();
        }
        let tied = self.model.params.decoder.tied();
        if tied {
            for &t in ctx.positives {
                for s in &self.cache.segs[t as usize] {
                    kl += gaussian_kl_unchecked(&s.mu, &s.sigma).f64();
                }
            }
        }

        let want_grad = self.grads.is_some();
        let mut d_mu_itm = vec![vec![F::zero(); d]; c2];
        let mut d_sigma_itm = vec![vec![F::zero(); d]; c2];
        let mut d_mu_ent = vec![vec![F::zero(); d]; c1];
        let mut d_sigma_ent = vec![vec![F::zero(); d]; c1];

        for &t in ctx.positives {
            self.is_positive[t as usize] = true;
        }
        let targets = self.targets();
        let n_terms = c1 + c2;
        let mut exps = vec![F::zero(); candidates.len() * n_terms];
        let mut clamped = vec![false; candidates.len() * n_terms];
        let mut scores = vec![F::zero(); candidates.len()];
        let samples = self.cfg.mc_samples;
        let sample_weight = weight / F::of(samples as f64);
        let mut nll = 0.0f64;

        for _ in 0..samples {
            let eps_itm: Vec<Vec<F>> = (0..c2).map(|_| (0..d).map(|_| rng.standard_normal()).collect()).collect();
            let eps_ent: Vec<Vec<F>> = (0..c1).map(|_| (0..d).map(|_| rng.standard_normal()).collect()).collect();
            let realise = |s: &SegmentDistribution<F>, e: &[F]| -> Vec<F> {
                s.mu.iter().zip(&s.sigma).zip(e).map(|((&m, &sd), &x)| m + sd * x).collect()
            };
            let z_itm: Vec<Vec<F>> = itm.iter().zip(&eps_itm).map(|(s, e)| realise(s, e)).collect();
            let z_ent: Vec<Vec<F>> = ent.iter().zip(&eps_ent).map(|(s, e)| realise(s, e)).collect();

            let mut normaliser = 0.0f64;
            for (k, &t) in candidates.iter().enumerate() {
                let p = self.aff.item.row(t as usize);
                let d_t = targets.item_vector(t);
                let mut s = F::zero();
                for c in 0..c2 {
                    let (e, cl) = clamped_exp(dot(&z_itm[c], d_t));
                    exps[k * n_terms + c] = e;
                    clamped[k * n_terms + c] = cl;
                    s = s + p[c] * e;
                }
                for c in 0..c1 {
                    let (e, cl) = clamped_exp(dot(&z_ent[c], targets.entity_vector(t, c)));
                    exps[k * n_terms + c2 + c] = e;
                    clamped[k * n_terms + c2 + c] = cl;
                    s = s + e;
                }
                scores[k] = s;
                normaliser += s.f64();
            }
            let log_z = normaliser.ln();
            let mut sample_nll = 0.0f64;
            for (k, &t) in candidates.iter().enumerate() {
                if self.is_positive[t as usize] {
                    sample_nll += log_z - scores[k].f64().ln();
                }
            }
            nll += sample_nll / samples as f64;

            if !want_grad {
                continue;
            }
            let grads = self.grads.as_mut().expect("gradient buffers");
            let n_pos = F::of(ctx.positives.len() as f64);
            let inv_z = F::of(1.0 / normaliser);
            let mut dz_itm = vec![vec![F::zero(); d]; c2];
            let mut dz_ent = vec![vec![F::zero(); d]; c1];
            for (k, &t) in candidates.iter().enumerate() {
                let mut g = n_pos * inv_z;
                if self.is_positive[t as usize] {
                    g = g - F::one() / scores[k];
                }
                let g = g * sample_weight;
                let ti = t as usize;
                let p = self.aff.item.row(ti);
                for c in 0..c2 {
                    let e = exps[k * n_terms + c];
                    grads.item_aff.row_mut(ti)[c] = grads.item_aff.row(ti)[c] + g * e;
                    if clamped[k * n_terms + c] {
                        continue;
                    }
                    let ds = g * p[c] * e;
                    axpy(ds, targets.item_vector(t), &mut dz_itm[c]);
                    let dst = match &mut grads.params.decoder.tables {
                        Some(tab) => tab.item.row_mut(ti),
                        None => grads.params.encoder.item_base.row_mut(ti),
                    };
                    axpy(ds, &z_itm[c], dst);
                }
                for c in 0..c1 {
                    if clamped[k * n_terms + c2 + c] {
                        continue;
                    }
                    let ds = g * exps[k * n_terms + c2 + c];
                    axpy(ds, targets.entity_vector(t, c), &mut dz_ent[c]);
                    match &mut grads.params.decoder.tables {
                        Some(tab) => axpy(ds, &z_ent[c], &mut tab.entity.row_mut(ti)[c * d..(c + 1) * d]),
                        None => {
                            if self.cache.traces[ti].is_some() {
                                axpy(ds, &z_ent[c], &mut grads.item_mu.row_mut(ti)[c * d..(c + 1) * d]);
                                grads.item_touched[ti] = true;
                            }
                        }
                    }
                }
            }
            for c in 0..c2 {
                axpy(F::one(), &dz_itm[c], &mut d_mu_itm[c]);
                for k in 0..d {
                    d_sigma_itm[c][k] = d_sigma_itm[c][k] + dz_itm[c][k] * eps_itm[c][k];
                }
            }
            for c in 0..c1 {
                axpy(F::one(), &dz_ent[c], &mut d_mu_ent[c]);
                for k in 0..d {
                    d_sigma_ent[c][k] = d_sigma_ent[c][k] + dz_ent[c][k] * eps_ent[c][k];
                }
            }
        }
        drop(targets);
        for &t in ctx.positives {
            self.is_positive[t as usize] = false;
        }
        if !want_grad || nb.is_empty() && !tied {
            return Ok((nll, kl));
        }

        let grads = self.grads.as_mut().expect("gradient buffers");
        let kl_grad = |s: &SegmentDistribution<F>, dmu: &mut [F], dsig: &mut [F]| {
            for k in 0..s.mu.len() {
                dmu[k] = dmu[k] + weight * s.mu[k];
                dsig[k] = dsig[k] + weight * (s.sigma[k] - F::one() / s.sigma[k]);
            }
        };
        if tied {
            for &t in ctx.positives {
                let ti = t as usize;
                if self.cache.traces[ti].is_none() {
                    continue;
                }
                grads.item_touched[ti] = true;
                for (c, s) in self.cache.segs[ti].iter().enumerate() {
                    let dmu = &mut grads.item_mu.row_mut(ti)[c * d..(c + 1) * d];
                    for k in 0..d {
                        dmu[k] = dmu[k] + weight * s.mu[k];
                    }
                    let dsig = &mut grads.item_sigma.row_mut(ti)[c * d..(c + 1) * d];
                    for k in 0..d {
                        dsig[k] = dsig[k] + weight * (s.sigma[k] - F::one() / s.sigma[k]);
                    }
                }
            }
        }
        if nb.is_empty() {
            return Ok((nll, kl));
        }

        // Item-factor segments: back through the mapping and the aggregate.
        let enc = &self.model.params.encoder;
        let traces = itm_traces.expect("non-empty neighbourhood");
        let inv_n = F::one() / F::of(nb.len() as f64);
        for c in 0..c2 {
            kl_grad(&itm[c], &mut d_mu_itm[c], &mut d_sigma_itm[c]);
            let da = segment_backward(
                &itm[c],
                &traces[c],
                &d_mu_itm[c],
                &d_sigma_itm[c],
                &enc.itm_map_mu,
                &enc.itm_map_log_sigma,
                &mut grads.params.encoder.itm_map_mu,
                &mut grads.params.encoder.itm_map_log_sigma,
            );
            for &t in nb {
                let ti = t as usize;
                let p = self.aff.item.row(ti)[c];
                axpy(p * inv_n, &da, grads.params.encoder.item_base.row_mut(ti));
                let dp = dot(&da, enc.item_base.row(ti)) * inv_n;
                grads.item_aff.row_mut(ti)[c] = grads.item_aff.row(ti)[c] + dp;
            }
        }
        // Entity-factor segments are plain means of the items' segments.
        for c in 0..c1 {
            kl_grad(&ent[c], &mut d_mu_ent[c], &mut d_sigma_ent[c]);
            for &t in nb {
                let ti = t as usize;
                if self.cache.traces[ti].is_none() {
                    continue;
                }
                grads.item_touched[ti] = true;
                axpy(inv_n, &d_mu_ent[c], &mut grads.item_mu.row_mut(ti)[c * d..(c + 1) * d]);
                axpy(inv_n, &d_sigma_ent[c], &mut grads.item_sigma.row_mut(ti)[c * d..(c + 1) * d]);
            }
        }
        Ok((nll, kl))
    }

    fn backprop_items(&self, g: &mut SharedGrads<F>) {
        let fc = &self.model.factors;
        let d = fc.dim;
        let enc = &self.model.params.encoder;
        for ti in 0..self.graph.n_items() {
            if !g.item_touched[ti] {
                continue;
            }
            let traces = match &self.cache.traces[ti] {
                Some(tr) => tr,
                None => continue,
            };
            let entities = self.graph.item_entities(ti as u32);
            let inv_n = F::one() / F::of(entities.len() as f64);
            for c in 0..fc.entity_factors {
                let dmu = g.item_mu.row(ti)[c * d..(c + 1) * d].to_vec();
                let dsig = g.item_sigma.row(ti)[c * d..(c + 1) * d].to_vec();
                let da = segment_backward(
                    &self.cache.segs[ti][c],
                    &traces[c],
                    &dmu,
                    &dsig,
                    &enc.ent_map_mu,
                    &enc.ent_map_log_sigma,
                    &mut g.params.encoder.ent_map_mu,
                    &mut g.params.encoder.ent_map_log_sigma,
                );
                for &e in entities {
                    let ei = e as usize;
                    let p = self.aff.entity.row(ei)[c];
                    axpy(p * inv_n, &da, g.params.encoder.entity_base.row_mut(ei));
                    let dp = dot(&da, enc.entity_base.row(ei)) * inv_n;
                    g.entity_aff.row_mut(ei)[c] = g.entity_aff.row(ei)[c] + dp;
                }
            }
        }
    }

    fn backprop_affiliations(&self, g: &mut SharedGrads<F>) {
        let gamma = self.model.gamma();
        let enc = &self.model.params.encoder;
        affiliation_backward(
            &self.aff.item,
            &g.item_aff,
            &enc.item_base,
            &enc.item_prototypes,
            gamma,
            &mut g.params.encoder.item_base,
            &mut g.params.encoder.item_prototypes,
        );
        affiliation_backward(
            &self.aff.entity,
            &g.entity_aff,
            &enc.entity_base,
            &enc.entity_prototypes,
            gamma,
            &mut g.params.encoder.entity_base,
            &mut g.params.encoder.entity_prototypes,
        );
    }
}

/// Backpropagates `(d mu, d sigma)` of a mapped segment into the mapping
/// matrices and returns the gradient of the pre-`tanh` aggregate.
#[allow(clippy::too_many_arguments)]
fn segment_backward<F: Real>(
    seg: &SegmentDistribution<F>,
    trace: &SegmentTrace<F>,
    d_mu: &[F],
    d_sigma: &[F],
    w_mu: &Tensor<F>,
    w_log_sigma: &Tensor<F>,
    g_mu: &mut Tensor<F>,
    g_log_sigma: &mut Tensor<F>,
) -> Vec<F> {
    let clip = F::of(LOG_SIGMA_CLIP);
    let d_raw: Vec<F> = (0..d_mu.len())
        .map(|k| {
            let r = trace.raw_log_sigma[k];
            if r > -clip && r < clip {
                d_sigma[k] * seg.sigma[k]
            } else {
                F::zero()
            }
        })
        .collect();
    outer_acc(d_mu, &trace.h, g_mu.data_mut());
    outer_acc(&d_raw, &trace.h, g_log_sigma.data_mut());
    let mut dh = vec![F::zero(); d_mu.len()];
    matvec_t_acc(w_mu.data(), d_mu, &mut dh);
    matvec_t_acc(w_log_sigma.data(), &d_raw, &mut dh);
    dh.iter()
        .zip(&trace.h)
        .map(|(&g, &h)| g * (F::one() - h * h))
        .collect()
}

/// Back through `p = softmax(cos(base, proto) / gamma)` for every row with a
/// non-zero upstream gradient.
fn affiliation_backward<F: Real>(
    probs: &Tensor<F>,
    d_probs: &Tensor<F>,
    base: &Tensor<F>,
    protos: &Tensor<F>,
    gamma: F,
    g_base: &mut Tensor<F>,
    g_protos: &mut Tensor<F>,
) {
    let n_factors = protos.shape()[0];
    let proto_norms: Vec<F> = (0..n_factors).map(|c| norm(protos.row(c))).collect();
    for i in 0..probs.shape()[0] {
        let dp = d_probs.row(i);
        if dp.iter().all(|v| v.is_zero()) {
            continue;
        }
        let x = base.row(i);
        let nx = norm(x);
        if nx.f64() < NORM_FLOOR {
            continue;
        }
        let p = probs.row(i);
        let mean = dot(p, dp);
        for c in 0..n_factors {
            let ny = proto_norms[c];
            if ny.f64() < NORM_FLOOR {
                continue;
            }
            let d_cos = p[c] * (dp[c] - mean) / gamma;
            if d_cos.is_zero() {
                continue;
            }
            let y = protos.row(c);
            let cos = dot(x, y) / (nx * ny);
            let inv = F::one() / (nx * ny);
            let gx = g_base.row_mut(i);
            for k in 0..x.len() {
                gx[k] = gx[k] + d_cos * (y[k] * inv - cos * x[k] / (nx * nx));
            }
            let gy = g_protos.row_mut(c);
            for k in 0..x.len() {
                gy[k] = gy[k] + d_cos * (x[k] * inv - cos * y[k] / (ny * ny));
            }
        }
    }
}
