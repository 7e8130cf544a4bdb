//! Seeded mini-batch training with validation-based model selection.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::eval::{evaluate_with, Ranker};
use crate::graph::{DatasetSplit, UserGroup};
use crate::model::{FactorConfig, ModelParams};
use crate::numerics::{adam_step, norm, AdamState, Tensor, NORM_FLOOR};
use crate::objective::{elbo_loss_and_grad, LossBreakdown, ObjectiveConfig, SoftmaxMode};
use crate::{Error, HeteroGraph, Model, Result, SeededRng};

/// Cut-off used for validation NDCG during model selection.
pub const SELECTION_K: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub entity_factors: usize,
    pub item_factors: usize,
    pub dim: usize,
    pub gamma: f64,
    pub lr: f64,
    pub l2_weight: f64,
    /// Users per batch.
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub mc_samples: usize,
    pub decoder_tied: bool,
    pub softmax: SoftmaxMode,
    pub exclude_target_from_neighborhood: bool,
    /// Standard deviation of the Gaussian initialisation.
    pub init_scale: f64,
}

impl Default for TrainConfig {
    /// LastFM settings.
    fn default() -> Self {
        Self {
            entity_factors: 4,
            item_factors: 4,
            dim: 16,
            gamma: 0.1,
            lr: 2e-4,
            l2_weight: 1e-8,
            batch_size: 128,
            epochs: 100,
            seed: 0,
            mc_samples: 1,
            decoder_tied: false,
            softmax: SoftmaxMode::Full,
            exclude_target_from_neighborhood: false,
            init_scale: 0.1,
        }
    }
}

fn config_err(key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        message: message.into(),
    }
}

fn parse_num<T: core::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| config_err(key, format!("cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(config_err(key, format!("expected a boolean, got `{other}`"))),
    }
}

impl TrainConfig {
    pub const KEYS: &'static [&'static str] = &[
        "entity_factors",
        "item_factors",
        "dim",
        "gamma",
        "lr",
        "l2_weight",
        "batch_size",
        "epochs",
        "seed",
        "mc_samples",
        "decoder_tied",
        "softmax",
        "exclude_target_from_neighborhood",
        "init_scale",
    ];

    pub fn factors(&self) -> FactorConfig {
        FactorConfig {
            entity_factors: self.entity_factors,
            item_factors: self.item_factors,
            dim: self.dim,
            gamma: self.gamma,
        }
    }

    pub fn objective(&self) -> ObjectiveConfig {
        ObjectiveConfig {
            l2_weight: self.l2_weight,
            mc_samples: self.mc_samples,
            softmax: self.softmax,
            exclude_target_from_neighborhood: self.exclude_target_from_neighborhood,
        }
    }

    /// Sets one key from its textual value. `factors` sets both factor
    /// counts. Returns `Ok(false)` for an unknown key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "factors" => {
                let c = parse_num(key, value)?;
                self.entity_factors = c;
                self.item_factors = c;
            }
            "entity_factors" => self.entity_factors = parse_num(key, value)?,
            "item_factors" => self.item_factors = parse_num(key, value)?,
            "dim" => self.dim = parse_num(key, value)?,
            "gamma" => self.gamma = parse_num(key, value)?,
            "lr" => self.lr = parse_num(key, value)?,
            "l2_weight" => self.l2_weight = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "mc_samples" => self.mc_samples = parse_num(key, value)?,
            "decoder_tied" => self.decoder_tied = parse_bool(key, value)?,
            "exclude_target_from_neighborhood" => self.exclude_target_from_neighborhood = parse_bool(key, value)?,
            "init_scale" => self.init_scale = parse_num(key, value)?,
            "softmax" => {
                let v = value.trim();
                self.softmax = if v == "full" {
                    SoftmaxMode::Full
                } else if let Some(n) = v.strip_prefix("sampled:") {
                    SoftmaxMode::Sampled(parse_num(key, n)?)
                } else {
                    return Err(config_err(key, "expected `full` or `sampled:<n>`"));
                };
            }
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Every key with its current value, in [`TrainConfig::KEYS`] order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let softmax = match self.softmax {
            SoftmaxMode::Full => "full".to_string(),
            SoftmaxMode::Sampled(n) => format!("sampled:{n}"),
        };
        alloc::vec![
            ("entity_factors", self.entity_factors.to_string()),
            ("item_factors", self.item_factors.to_string()),
            ("dim", self.dim.to_string()),
            ("gamma", format!("{:?}", self.gamma)),
            ("lr", format!("{:?}", self.lr)),
            ("l2_weight", format!("{:?}", self.l2_weight)),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("seed", self.seed.to_string()),
            ("mc_samples", self.mc_samples.to_string()),
            ("decoder_tied", self.decoder_tied.to_string()),
            ("softmax", softmax),
            (
                "exclude_target_from_neighborhood",
                self.exclude_target_from_neighborhood.to_string(),
            ),
            ("init_scale", format!("{:?}", self.init_scale)),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        self.factors().validate()?;
        let positive = |key: &str, ok: bool| if ok { Ok(()) } else { Err(config_err(key, "must be positive")) };
        positive("lr", self.lr > 0.0 && self.lr.is_finite())?;
        positive("batch_size", self.batch_size > 0)?;
        positive("epochs", self.epochs > 0)?;
        positive("mc_samples", self.mc_samples > 0)?;
        if !(self.l2_weight >= 0.0 && self.l2_weight.is_finite()) {
            return Err(config_err("l2_weight", "must be non-negative"));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(config_err("init_scale", "must be non-negative"));
        }
        if self.softmax == SoftmaxMode::Sampled(0) {
            return Err(config_err("softmax", "sampled softmax needs at least one negative"));
        }
        Ok(())
    }
}

/// Gaussian initialisation with unit-norm factor prototypes.
pub fn init_params(graph: &HeteroGraph, config: &TrainConfig, rng: &mut SeededRng) -> ModelParams<f32> {
    let mut params = ModelParams::zeros(&config.factors(), graph.n_items(), graph.n_entities(), config.decoder_tied);
    let scale = config.init_scale;
    for t in params.tensors_mut() {
        for v in t.data_mut() {
            *v = (scale * rng.standard_normal::<f64>()) as f32;
        }
    }
    let enc = &mut params.encoder;
    for protos in [&mut enc.entity_prototypes, &mut enc.item_prototypes] {
        normalize_rows(protos);
    }
    params
}

fn normalize_rows(t: &mut Tensor<f32>) {
    for i in 0..t.shape()[0] {
        let n = norm(t.row(i));
        if (n as f64) >= NORM_FLOOR {
            t.row_mut(i).iter_mut().for_each(|v| *v /= n);
        }
    }
}

/// Everything needed to resume or evaluate a trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub config: TrainConfig,
    pub model: Model<f32>,
    pub adam: AdamState<f32>,
    /// Epoch the parameters were taken from (1-based).
    pub epoch: u32,
    /// Digest of the id-map of the graph the model was trained on.
    pub graph_digest: [u8; 32],
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: u32,
    /// User-weighted mean of the batch losses.
    pub loss: LossBreakdown,
    pub val_ndcg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: ModelCheckpoint,
    pub log: Vec<EpochRecord>,
}

pub fn train(graph: &HeteroGraph, split: &DatasetSplit, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with_progress(graph, split, config, |_| {})
}

/// Trains and calls `progress` after every epoch.
pub fn train_with_progress<P>(
    graph: &HeteroGraph,
    split: &DatasetSplit,
    config: &TrainConfig,
    mut progress: P,
) -> Result<TrainOutcome>
where
    P: FnMut(&EpochRecord),
{
    config.validate()?;
    let root = SeededRng::new(config.seed);
    let mut init_rng = root.fork(0);
    let mut order_rng = root.fork(1);
    let mut noise_rng = root.fork(2);

    let mut model = Model {
        factors: config.factors(),
        params: init_params(graph, config, &mut init_rng),
    };
    let mut adam = AdamState::new(model.params.tensors());
    let objective = config.objective();
    let lr = config.lr as f32;

    let mut users: Vec<u32> = (0..graph.n_users() as u32)
        .filter(|&u| !graph.user_items(u).is_empty())
        .collect();
    if users.is_empty() {
        return Err(Error::EmptyInput("no user has training interactions"));
    }

    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, ModelCheckpoint)> = None;
    for epoch in 1..=config.epochs as u32 {
        order_rng.shuffle(&mut users);
        let mut sums = [0.0f64; 4];
        for (b, batch) in users.chunks(config.batch_size).enumerate() {
            let (loss, grads) = elbo_loss_and_grad(batch, graph, &model, &objective, &mut noise_rng)
                .map_err(|e| match e {
                    Error::NonFinite(msg) => Error::NonFinite(format!("epoch {epoch}, batch {b}: {msg}")),
                    other => other,
                })?;
            let w = batch.len() as f64;
            sums[0] += w * loss.negative_log_likelihood;
            sums[1] += w * loss.kl;
            sums[2] += w * loss.l2;
            sums[3] += w * loss.total;
            let grad_refs = grads.tensors();
            adam_step(&mut model.params.tensors_mut(), &grad_refs, &mut adam, lr)?;
            if !model.params.is_finite() {
                return Err(Error::NonFinite(format!(
                    "parameters after epoch {epoch}, batch {b}"
                )));
            }
        }
        let n = users.len() as f64;
        let loss = LossBreakdown {
            negative_log_likelihood: sums[0] / n,
            kl: sums[1] / n,
            l2: sums[2] / n,
            total: sums[3] / n,
        };
        let val_ndcg = if split.val.is_empty() {
            None
        } else {
            let ranker = Ranker::new(&model, graph);
            let report = evaluate_with(&ranker, split, UserGroup::Val, &[SELECTION_K])?;
            Some(report.mean_ndcg[0])
        };
        let record = EpochRecord { epoch, loss, val_ndcg };
        progress(&record);
        log.push(record);

        // Without validation users the last epoch wins.
        let score = val_ndcg.unwrap_or(f64::INFINITY);
        if best.as_ref().is_none_or(|(s, _)| score > *s || val_ndcg.is_none()) {
            best = Some((
                score,
                ModelCheckpoint {
                    config: config.clone(),
                    model: model.clone(),
                    adam: adam.clone(),
                    epoch,
                    graph_digest: [0; 32],
                },
            ));
        }
    }
    let (_, checkpoint) = best.expect("at least one epoch");
    Ok(TrainOutcome { checkpoint, log })
}
