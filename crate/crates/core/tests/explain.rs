use facetrec_core::decoder::score_terms;
use facetrec_core::encoder::Affiliations;
use facetrec_core::eval::Ranker;
use facetrec_core::explain::{
    explain, faithfulness_shift, item_importance, Explainer, RemovalTarget, ShiftConfig, Strategy,
};
use facetrec_core::graph::split_holdout;
use facetrec_core::synthetic::{planted_clusters, PlantedConfig};
use facetrec_core::trainer::{train, TrainConfig};
use facetrec_core::{FactorConfig, HeteroGraph, Model, ModelParams, SeededRng};

fn trained_toy() -> (HeteroGraph, facetrec_core::graph::DatasetSplit, Model) {
    let data = planted_clusters(&PlantedConfig {
        users_per_cluster: 20,
        seed: 4,
        ..Default::default()
    })
    .unwrap();
    let (g, split) = split_holdout(&data.graph, 4, 0, 16, 0.7).unwrap();
    let cfg = TrainConfig {
        entity_factors: 3,
        item_factors: 2,
        dim: 6,
        lr: 0.02,
        batch_size: 10,
        epochs: 15,
        seed: 4,
        ..Default::default()
    };
    let out = train(&g, &split, &cfg).unwrap();
    (g, split, out.checkpoint.model)
}

#[test]
fn item_scores_factor_through_the_decoder_term() {
    let (g, _, model) = trained_toy();
    let ex = Explainer::new(&model, &g);
    let aff = Affiliations::compute(&model);
    let mut rng = SeededRng::new(11);
    for _ in 0..100 {
        let u = rng.below(g.n_users()) as u32;
        let t = rng.below(g.n_items()) as u32;
        if g.user_items(u).is_empty() {
            continue;
        }
        let rep = ex.ranker().represent(u).unwrap();
        let terms = score_terms(&rep, t, &ex.ranker().targets, aff.item.row(t as usize));
        let n_u = g.user_items(u).len() as f64;
        let scores = ex.item_scores(u, t).unwrap();
        assert_eq!(scores.len(), g.user_items(u).len());
        let mut per_factor_sum = [0.0; 2];
        for s in &scores {
            for c in 0..2 {
                let p = aff.item.row(s.node as usize)[c] as f64;
                let expected = terms.item[c] as f64 * p / n_u;
                assert!((s.per_factor[c] - expected).abs() <= 1e-6 * expected.max(1.0));
                per_factor_sum[c] += s.per_factor[c];
            }
            assert!(s.total >= 0.0 && s.total.is_finite());
        }
        for c in 0..2 {
            let mass: f64 = g.user_items(u).iter().map(|&j| aff.item.row(j as usize)[c] as f64).sum();
            let expected = terms.item[c] as f64 * mass / n_u;
            assert!((per_factor_sum[c] - expected).abs() <= 1e-6 * expected.max(1.0));
        }
    }
}

#[test]
fn entity_scores_match_path_enumeration() {
    let (g, _, model) = trained_toy();
    let ex = Explainer::new(&model, &g);
    let aff = Affiliations::compute(&model);
    for u in 0..g.n_users() as u32 {
        let items = g.user_items(u);
        if items.is_empty() {
            continue;
        }
        let t = u * 7 % g.n_items() as u32;
        let rep = ex.ranker().represent(u).unwrap();
        let terms = score_terms(&rep, t, &ex.ranker().targets, aff.item.row(t as usize));
        let scores = ex.entity_scores(u, t).unwrap();
        for e in 0..g.n_entities() as u32 {
            let mut expected = [0.0f64; 3];
            let mut reachable = false;
            for &m in items {
                let ents = g.item_entities(m);
                if ents.contains(&e) {
                    reachable = true;
                    for c in 0..3 {
                        expected[c] += terms.entity[c] as f64 / items.len() as f64 * aff.entity.row(e as usize)[c] as f64
                            / ents.len() as f64;
                    }
                }
            }
            match scores.iter().find(|s| s.node == e) {
                Some(s) => {
                    assert!(reachable);
                    for c in 0..3 {
                        assert!((s.per_factor[c] - expected[c]).abs() <= 1e-6 * expected[c].max(1.0));
                    }
                }
                None => assert!(!reachable),
            }
        }
    }
}

#[test]
fn non_neighbours_score_zero() {
    let (g, _, model) = trained_toy();
    let u = 0;
    let outside = (0..g.n_items() as u32).find(|t| !g.user_items(u).contains(t)).unwrap();
    let s = item_importance(outside, u, 1, &model, &g).unwrap();
    assert!(s.per_factor.iter().all(|&v| v == 0.0));
    assert_eq!(s.total, 0.0);
}

#[test]
fn unit_weights_reduce_to_the_decoder_terms() {
    // one user, one item, one entity, a single factor on each side
    let g = HeteroGraph::from_edges((1, 2, 1), &[(0, 0)], &[(0, 0)], &[]).unwrap();
    let cfg = FactorConfig::new(1, 1, 2, 0.1).unwrap();
    let mut params = ModelParams::<f64>::zeros(&cfg, 2, 1, false);
    let mut rng = SeededRng::new(2);
    for t in params.tensors_mut() {
        for v in t.data_mut() {
            *v = 0.7 * rng.standard_normal::<f64>();
        }
    }
    let model = Model { factors: cfg, params };
    let ex = Explainer::new(&model, &g);
    let rep = ex.ranker().represent(0).unwrap();
    for t in 0..2 {
        let terms = score_terms(&rep, t, &ex.ranker().targets, &[1.0]);
        let items = ex.item_scores(0, t).unwrap();
        assert_eq!(items[0].total, terms.item[0]);
        let ents = ex.entity_scores(0, t).unwrap();
        assert_eq!(ents[0].total, terms.entity[0]);
    }
}

#[test]
fn explanations_are_sorted_truncated_and_repeatable() {
    let (g, _, model) = trained_toy();
    for u in [0u32, 5, 9] {
        let full = explain(u, 3, &model, &g, 100).unwrap();
        assert_eq!(full.item_contributions.len(), g.user_items(u).len());
        for w in full.item_contributions.windows(2) {
            assert!(w[0].total >= w[1].total);
        }
        for c in &full.entity_contributions {
            assert!(g.user_items(u).iter().any(|&m| g.item_entities(m).contains(&c.node)));
        }
        let short = explain(u, 3, &model, &g, 2).unwrap();
        assert_eq!(short.item_contributions, full.item_contributions[..2]);
        assert_eq!(short, explain(u, 3, &model, &g, 2).unwrap());
        assert!(full.target_affiliation[full.target_factor] >= 0.5);
    }
}

#[test]
fn removing_everything_falls_back_to_the_prior() {
    let (g, _, model) = trained_toy();
    let ex = Explainer::new(&model, &g);
    let items = g.user_items(0).to_vec();
    let rep = ex.perturbed_representation(0, &items, &[]).unwrap();
    assert!(rep.itm.iter().chain(&rep.ent).flatten().all(|&v| v == 0.0));
    let unchanged = ex.perturbed_representation(0, &[], &[]).unwrap();
    assert_eq!(unchanged, Ranker::new(&model, &g).represent(0).unwrap());
}

#[test]
fn zero_budget_means_zero_shift() {
    let (g, split, model) = trained_toy();
    let cfg = ShiftConfig {
        budgets: vec![0],
        runs: 2,
        ..Default::default()
    };
    let report = faithfulness_shift(&model, &g, &split, &cfg).unwrap();
    for row in &report.rows {
        assert_eq!(row.shift, 0.0);
        assert_eq!(row.recall, row.recall_prime);
    }
}

#[test]
fn model_guided_removal_beats_random_removal() {
    let (g, split, model) = trained_toy();
    let base = ShiftConfig {
        budgets: vec![1, 2, 3],
        target: RemovalTarget::Items,
        runs: 5,
        seed: 9,
        ..Default::default()
    };
    let guided = faithfulness_shift(&model, &g, &split, &base).unwrap();
    let random = faithfulness_shift(
        &model,
        &g,
        &split,
        &ShiftConfig {
            strategy: Strategy::Random,
            ..base.clone()
        },
    )
    .unwrap();
    let mean = |r: &facetrec_core::explain::ShiftReport| base.budgets.iter().map(|&n| r.mean_shift(n).unwrap()).sum::<f64>();
    assert!(mean(&guided) >= mean(&random), "{guided:?} vs {random:?}");
    assert_eq!(guided.rows.len(), 15);
    for row in guided.rows.iter().chain(&random.rows) {
        assert!(row.shift <= 1.0);
    }
}
