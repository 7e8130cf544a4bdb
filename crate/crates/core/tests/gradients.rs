use facetrec_core::numerics::grad_check;
use facetrec_core::objective::{elbo_loss, elbo_loss_and_grad, ObjectiveConfig, SoftmaxMode};
use facetrec_core::{FactorConfig, HeteroGraph, Model, ModelParams, SeededRng};

fn toy_graph() -> HeteroGraph {
    HeteroGraph::from_edges(
        (3, 4, 3),
        &[(0, 0), (0, 1), (1, 1), (1, 2), (1, 3), (2, 3)],
        &[(0, 0), (0, 1), (1, 1), (2, 2), (3, 0), (3, 2)],
        &[],
    )
    .unwrap()
}

fn toy_model(tied: bool, scale: f64, seed: u64) -> Model<f64> {
    let cfg = FactorConfig::new(2, 2, 3, 0.5).unwrap();
    let mut params = ModelParams::<f64>::zeros(&cfg, 4, 3, tied);
    let mut rng = SeededRng::new(seed);
    for t in params.tensors_mut() {
        for v in t.data_mut() {
            *v = scale * rng.standard_normal::<f64>();
        }
    }
    Model { factors: cfg, params }
}

fn check(model: Model<f64>, cfg: ObjectiveConfig, noise_seed: u64) -> f64 {
    let graph = toy_graph();
    let batch = [0u32, 1, 2];
    let (_, grads) = elbo_loss_and_grad(&batch, &graph, &model, &cfg, &mut SeededRng::new(noise_seed)).unwrap();
    let flat = model.params.to_flat();
    let analytic = grads.to_flat();
    let mut probe = model.clone();
    let report = grad_check(
        |x: &[f64]| {
            probe.params.load_flat(x)?;
            Ok(elbo_loss(&batch, &graph, &probe, &cfg, &mut SeededRng::new(noise_seed))?.total)
        },
        &flat,
        &analytic,
        1e-5,
        None,
    )
    .unwrap();
    report.max_rel_error
}

#[test]
fn untied_full_softmax() {
    let err = check(toy_model(false, 0.5, 1), ObjectiveConfig { l2_weight: 1e-3, ..Default::default() }, 7);
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn tied_decoder() {
    let err = check(toy_model(true, 0.5, 2), ObjectiveConfig { l2_weight: 1e-3, ..Default::default() }, 8);
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn exclude_target_and_multiple_samples() {
    let cfg = ObjectiveConfig {
        l2_weight: 0.0,
        mc_samples: 2,
        exclude_target_from_neighborhood: true,
        ..Default::default()
    };
    let err = check(toy_model(false, 0.5, 3), cfg, 9);
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn sampled_softmax() {
    let cfg = ObjectiveConfig {
        softmax: SoftmaxMode::Sampled(1),
        ..Default::default()
    };
    let err = check(toy_model(false, 0.5, 4), cfg, 10);
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn scaled_gradient_is_caught() {
    let model = toy_model(false, 0.5, 5);
    let graph = toy_graph();
    let cfg = ObjectiveConfig::default();
    let (_, grads) = elbo_loss_and_grad(&[0, 1, 2], &graph, &model, &cfg, &mut SeededRng::new(1)).unwrap();
    let doubled: Vec<f64> = grads.to_flat().iter().map(|g| 2.0 * g).collect();
    let mut probe = model.clone();
    let report = grad_check(
        |x: &[f64]| {
            probe.params.load_flat(x)?;
            Ok(elbo_loss(&[0, 1, 2], &graph, &probe, &cfg, &mut SeededRng::new(1))?.total)
        },
        &model.params.to_flat(),
        &doubled,
        1e-5,
        None,
    )
    .unwrap();
    assert!((report.max_rel_error - 0.5).abs() < 1e-3);
}
