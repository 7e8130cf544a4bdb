//! Learnable parameters and their layout.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::{Error, Real, Result, Tensor};

/// Factor counts, per-factor width and affiliation temperature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FactorConfig {
    /// Number of entity factors (C1).
    pub entity_factors: usize,
    /// Number of item factors (C2).
    pub item_factors: usize,
    /// Width of every segment (D).
    pub dim: usize,
    /// Affiliation softmax temperature.
    pub gamma: f64,
}

impl FactorConfig {
    pub fn new(entity_factors: usize, item_factors: usize, dim: usize, gamma: f64) -> Result<Self> {
        let cfg = Self {
            entity_factors,
            item_factors,
            dim,
            gamma,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: &str| Error::Config {
            key: key.to_string(),
            message: message.to_string(),
        };
        if self.entity_factors == 0 {
            return Err(bad("entity_factors", "must be at least 1"));
        }
        if self.item_factors == 0 {
            return Err(bad("item_factors", "must be at least 1"));
        }
        if self.dim == 0 {
            return Err(bad("dim", "must be at least 1"));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(bad("gamma", "must be positive"));
        }
        Ok(())
    }

    /// Width of a realised user vector, `(C1 + C2) * D`.
    pub fn user_dim(&self) -> usize {
        (self.entity_factors + self.item_factors) * self.dim
    }

    /// Width of a realised item vector, `(1 + C1) * D`.
    pub fn item_dim(&self) -> usize {
        (1 + self.entity_factors) * self.dim
    }

    pub fn entity_dim(&self) -> usize {
        self.dim
    }
}

/// Encoder-side tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<F = f32> {
    /// `|E| x D` entity base embeddings.
    pub entity_base: Tensor<F>,
    /// `|T| x D` item base embeddings.
    pub item_base: Tensor<F>,
    /// `C1 x D` entity factor prototypes.
    pub entity_prototypes: Tensor<F>,
    /// `C2 x D` item factor prototypes.
    pub item_prototypes: Tensor<F>,
    /// Item-side mapping (entity aggregate to segment mean), `D x D`.
    pub ent_map_mu: Tensor<F>,
    /// Item-side mapping to segment log standard deviation, `D x D`.
    pub ent_map_log_sigma: Tensor<F>,
    /// User-side mapping (item aggregate to segment mean), `D x D`.
    pub itm_map_mu: Tensor<F>,
    pub itm_map_log_sigma: Tensor<F>,
}

/// Item tables used by the scoring function in place of encoder outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderTables<F = f32> {
    /// `|T| x D`, replaces the item base embedding.
    pub item: Tensor<F>,
    /// `|T| x C1 x D`, replaces the item entity segments.
    pub entity: Tensor<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams<F = f32> {
    /// `None` when the decoder is tied to the encoder.
    pub tables: Option<DecoderTables<F>>,
}

impl<F> DecoderParams<F> {
    pub fn tied(&self) -> bool {
        self.tables.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<F = f32> {
    pub encoder: EncoderParams<F>,
    pub decoder: DecoderParams<F>,
}

/// Expected shapes of every named tensor for a graph of the given size.
pub fn param_shapes(
    cfg: &FactorConfig,
    n_items: usize,
    n_entities: usize,
    tied: bool,
) -> Vec<(&'static str, Vec<usize>)> {
    let (c1, c2, d) = (cfg.entity_factors, cfg.item_factors, cfg.dim);
    let mut shapes = alloc::vec![
        ("encoder.entity_base", alloc::vec![n_entities, d]),
        ("encoder.item_base", alloc::vec![n_items, d]),
        ("encoder.entity_prototypes", alloc::vec![c1, d]),
        ("encoder.item_prototypes", alloc::vec![c2, d]),
        ("encoder.ent_map_mu", alloc::vec![d, d]),
        ("encoder.ent_map_log_sigma", alloc::vec![d, d]),
        ("encoder.itm_map_mu", alloc::vec![d, d]),
        ("encoder.itm_map_log_sigma", alloc::vec![d, d]),
    ];
    if !tied {
        shapes.push(("decoder.item", alloc::vec![n_items, d]));
        shapes.push(("decoder.entity", alloc::vec![n_items, c1, d]));
    }
    shapes
}

impl<F: Real> ModelParams<F> {
    pub fn zeros(cfg: &FactorConfig, n_items: usize, n_entities: usize, tied: bool) -> Self {
        let mut tensors = param_shapes(cfg, n_items, n_entities, tied)
            .into_iter()
            .map(|(_, s)| Tensor::zeros(&s));
        let mut next = || tensors.next().expect("shape list");
        let encoder = EncoderParams {
            entity_base: next(),
            item_base: next(),
            entity_prototypes: next(),
            item_prototypes: next(),
            ent_map_mu: next(),
            ent_map_log_sigma: next(),
            itm_map_mu: next(),
            itm_map_log_sigma: next(),
        };
        let tables = (!tied).then(|| DecoderTables {
            item: next(),
            entity: next(),
        });
        Self {
            encoder,
            decoder: DecoderParams { tables },
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for t in out.tensors_mut() {
            t.fill(F::zero());
        }
        out
    }

    /// Tensors in their canonical order, with stable names.
    pub fn named(&self) -> Vec<(&'static str, &Tensor<F>)> {
        let e = &self.encoder;
        let mut v = alloc::vec![
            ("encoder.entity_base", &e.entity_base),
            ("encoder.item_base", &e.item_base),
            ("encoder.entity_prototypes", &e.entity_prototypes),
            ("encoder.item_prototypes", &e.item_prototypes),
            ("encoder.ent_map_mu", &e.ent_map_mu),
            ("encoder.ent_map_log_sigma", &e.ent_map_log_sigma),
            ("encoder.itm_map_mu", &e.itm_map_mu),
            ("encoder.itm_map_log_sigma", &e.itm_map_log_sigma),
        ];
        if let Some(t) = &self.decoder.tables {
            v.push(("decoder.item", &t.item));
            v.push(("decoder.entity", &t.entity));
        }
        v
    }

    pub fn tensors(&self) -> Vec<&Tensor<F>> {
        self.named().into_iter().map(|(_, t)| t).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<F>> {
        let e = &mut self.encoder;
        let mut v = alloc::vec![
            &mut e.entity_base,
            &mut e.item_base,
            &mut e.entity_prototypes,
            &mut e.item_prototypes,
            &mut e.ent_map_mu,
            &mut e.ent_map_log_sigma,
            &mut e.itm_map_mu,
            &mut e.itm_map_log_sigma,
        ];
        if let Some(t) = &mut self.decoder.tables {
            v.push(&mut t.item);
            v.push(&mut t.entity);
        }
        v
    }

    /// Reassembles parameters from named tensors, checking names and shapes.
    pub fn from_named(
        cfg: &FactorConfig,
        n_items: usize,
        n_entities: usize,
        tied: bool,
        tensors: Vec<(String, Tensor<F>)>,
    ) -> Result<Self> {
        let expected = param_shapes(cfg, n_items, n_entities, tied);
        if expected.len() != tensors.len() {
            return Err(Error::Shape {
                expected: expected.len(),
                found: tensors.len(),
            });
        }
        let mut out = Self::zeros(cfg, n_items, n_entities, tied);
        for (((name, shape), (got_name, tensor)), slot) in expected
            .iter()
            .zip(tensors)
            .zip(out.tensors_mut())
        {
            if *name != got_name || shape.as_slice() != tensor.shape() {
                return Err(Error::Config {
                    key: got_name,
                    message: format!("expected tensor `{name}` with shape {shape:?}"),
                });
            }
            *slot = tensor;
        }
        Ok(out)
    }

    pub fn n_values(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<F> {
        let mut out = Vec::with_capacity(self.n_values());
        for t in self.tensors() {
            out.extend_from_slice(t.data());
        }
        out
    }

    pub fn load_flat(&mut self, flat: &[F]) -> Result<()> {
        if flat.len() != self.n_values() {
            return Err(Error::Shape {
                expected: self.n_values(),
                found: flat.len(),
            });
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Sum of squares of every learnable value.
    pub fn squared_norm(&self) -> f64 {
        self.tensors().iter().map(|t| t.squared_norm()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    pub fn cast<G: Real>(&self) -> ModelParams<G> {
        let e = &self.encoder;
        ModelParams {
            encoder: EncoderParams {
                entity_base: e.entity_base.cast(),
                item_base: e.item_base.cast(),
                entity_prototypes: e.entity_prototypes.cast(),
                item_prototypes: e.item_prototypes.cast(),
                ent_map_mu: e.ent_map_mu.cast(),
                ent_map_log_sigma: e.ent_map_log_sigma.cast(),
                itm_map_mu: e.itm_map_mu.cast(),
                itm_map_log_sigma: e.itm_map_log_sigma.cast(),
            },
            decoder: DecoderParams {
                tables: self.decoder.tables.as_ref().map(|t| DecoderTables {
                    item: t.item.cast(),
                    entity: t.entity.cast(),
                }),
            },
        }
    }
}

/// Factor configuration together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<F = f32> {
    pub factors: FactorConfig,
    pub params: ModelParams<F>,
}

impl<F: Real> Model<F> {
    pub fn cast<G: Real>(&self) -> Model<G> {
        Model {
            factors: self.factors,
            params: self.params.cast(),
        }
    }

    pub fn gamma(&self) -> F {
        F::of(self.factors.gamma)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_match_dimension_contract() {
        let cfg = FactorConfig::new(4, 4, 16, 0.1).unwrap();
        assert_eq!(cfg.user_dim(), 2 * 4 * 16);
        assert_eq!(cfg.item_dim(), (4 + 1) * 16);
        assert_eq!(cfg.entity_dim(), 16);
        let p = ModelParams::<f32>::zeros(&cfg, 3846, 5520, false);
        assert_eq!(p.encoder.entity_base.shape(), &[5520, 16]);
        assert_eq!(p.decoder.tables.as_ref().unwrap().entity.shape(), &[3846, 4, 16]);
        assert_eq!(p.named().len(), 10);
        assert_eq!(ModelParams::<f32>::zeros(&cfg, 3, 2, true).named().len(), 8);
    }

    #[test]
    fn config_validation() {
        assert!(FactorConfig::new(0, 1, 1, 0.1).is_err());
        assert!(FactorConfig::new(1, 1, 0, 0.1).is_err());
        assert!(FactorConfig::new(1, 1, 1, -1.0).is_err());
    }

    #[test]
    fn flat_round_trip() {
        let cfg = FactorConfig::new(2, 2, 3, 0.1).unwrap();
        let mut p = ModelParams::<f64>::zeros(&cfg, 4, 3, false);
        let flat: Vec<f64> = (0..p.n_values()).map(|i| i as f64).collect();
        p.load_flat(&flat).unwrap();
        assert_eq!(p.to_flat(), flat);
        let named: Vec<(String, Tensor<f64>)> = p
            .named()
            .into_iter()
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect();
        assert_eq!(ModelParams::from_named(&cfg, 4, 3, false, named).unwrap(), p);
    }
}
