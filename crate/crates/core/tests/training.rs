use facetrec_core::encoder::Affiliations;
use facetrec_core::eval::evaluate;
use facetrec_core::graph::{split_holdout, UserGroup};
use facetrec_core::numerics::argmax;
use facetrec_core::synthetic::{factor_purity, planted_clusters, PlantedConfig};
use facetrec_core::trainer::{init_params, train, TrainConfig};
use facetrec_core::{HeteroGraph, SeededRng};

fn planted_config(seed: u64) -> TrainConfig {
    TrainConfig {
        entity_factors: 2,
        item_factors: 2,
        dim: 8,
        gamma: 0.1,
        lr: 0.05,
        batch_size: 50,
        epochs: 50,
        seed,
        mc_samples: 16,
        decoder_tied: true,
        ..Default::default()
    }
}

#[test]
fn lastfm_shapes() {
    let g = HeteroGraph::from_edges((1872, 3846, 5520), &[(0, 0)], &[], &[]).unwrap();
    let cfg = TrainConfig::default();
    let params = init_params(&g, &cfg, &mut SeededRng::new(0));
    assert_eq!(params.encoder.entity_base.shape(), &[5520, 16]);
    assert_eq!(cfg.factors().user_dim(), 128);
}

#[test]
fn two_runs_are_identical() {
    let data = planted_clusters(&PlantedConfig::default()).unwrap();
    let (g, split) = split_holdout(&data.graph, 3, 10, 10, 0.8).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 16,
        ..planted_config(5)
    };
    let a = train(&g, &split, &cfg).unwrap();
    let b = train(&g, &split, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.log.len(), 2);
    let c = train(&g, &split, &TrainConfig { seed: 6, ..cfg }).unwrap();
    assert_ne!(a.checkpoint.model, c.checkpoint.model);
}

#[test]
fn selected_epoch_is_no_worse_than_the_first() {
    let data = planted_clusters(&PlantedConfig::default()).unwrap();
    let (g, split) = split_holdout(&data.graph, 1, 20, 20, 0.8).unwrap();
    let out = train(&g, &split, &TrainConfig { epochs: 8, ..planted_config(1) }).unwrap();
    let chosen = out.log[out.checkpoint.epoch as usize - 1].val_ndcg.unwrap();
    assert!(chosen >= out.log[0].val_ndcg.unwrap());
    let best = out.log.iter().filter_map(|r| r.val_ndcg).fold(f64::MIN, f64::max);
    assert_eq!(chosen, best);
}

#[test]
fn without_validation_the_last_epoch_is_kept() {
    let data = planted_clusters(&PlantedConfig::default()).unwrap();
    let (g, split) = split_holdout(&data.graph, 1, 0, 20, 0.8).unwrap();
    let out = train(&g, &split, &TrainConfig { epochs: 3, ..planted_config(1) }).unwrap();
    assert_eq!(out.checkpoint.epoch, 3);
    assert!(out.log.iter().all(|r| r.val_ndcg.is_none()));
}

#[test]
fn planted_clusters_are_learned() {
    let data = planted_clusters(&PlantedConfig::default()).unwrap();
    let (g, split) = split_holdout(&data.graph, 0, 0, 40, 0.9).unwrap();
    let out = train(&g, &split, &planted_config(0)).unwrap();

    let losses: Vec<f64> = out.log.iter().take(10).map(|r| r.loss.total).collect();
    for w in losses.windows(2) {
        assert!(w[1] < w[0], "loss did not decrease: {losses:?}");
    }

    let model = &out.checkpoint.model;
    let report = evaluate(model, &g, &split, UserGroup::Test, &[5]).unwrap();
    assert!(report.mean_recall[0] >= 0.9, "recall@5 {}", report.mean_recall[0]);
    let aff = Affiliations::compute(model);
    let factors: Vec<usize> = (0..g.n_items()).map(|t| argmax(aff.item.row(t))).collect();
    let (purity, _) = factor_purity(&factors, &data.item_cluster);
    assert!(purity >= 0.9, "purity {purity}");
}

#[test]
fn users_without_interactions_are_skipped() {
    // user 1 has no training items and must not break the epoch loop
    let g = HeteroGraph::from_edges((2, 3, 1), &[(0, 0), (0, 1)], &[(0, 0)], &[]).unwrap();
    let split = Default::default();
    let out = train(&g, &split, &TrainConfig { epochs: 1, dim: 2, ..Default::default() }).unwrap();
    assert_eq!(out.log.len(), 1);
    assert!(out.checkpoint.model.params.is_finite());
}
