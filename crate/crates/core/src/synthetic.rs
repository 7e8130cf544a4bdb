//! Planted-cluster interaction graphs for sanity checks.

use alloc::vec::Vec;

use crate::{HeteroGraph, Result, SeededRng};

/// Users prefer one item cluster; every cluster has its own entities.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedConfig {
    pub clusters: usize,
    pub items_per_cluster: usize,
    pub entities_per_cluster: usize,
    /// Entities linked to each item, drawn from its cluster's entities.
    pub entities_per_item: usize,
    pub users_per_cluster: usize,
    /// Items each user takes from its preferred cluster.
    pub in_cluster_items: usize,
    /// Items each user takes from other clusters.
    pub off_cluster_items: usize,
    pub seed: u64,
}

impl Default for PlantedConfig {
    /// Two clusters, 100 users, a 90/10 preference mix.
    fn default() -> Self {
        Self {
            clusters: 2,
            items_per_cluster: 9,
            entities_per_cluster: 6,
            entities_per_item: 3,
            users_per_cluster: 50,
            in_cluster_items: 9,
            off_cluster_items: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedData {
    pub graph: HeteroGraph,
    pub item_cluster: Vec<usize>,
    pub user_cluster: Vec<usize>,
}

/// Items `k * items_per_cluster ..` belong to cluster `k`, likewise for
/// entities; users alternate between clusters.
pub fn planted_clusters(cfg: &PlantedConfig) -> Result<PlantedData> {
    let mut rng = SeededRng::new(cfg.seed);
    let n_items = cfg.clusters * cfg.items_per_cluster;
    let n_entities = cfg.clusters * cfg.entities_per_cluster;
    let n_users = cfg.clusters * cfg.users_per_cluster;
    let item_cluster: Vec<usize> = (0..n_items).map(|t| t / cfg.items_per_cluster).collect();
    let user_cluster: Vec<usize> = (0..n_users).map(|u| u % cfg.clusters).collect();

    let mut item_entity = Vec::new();
    for t in 0..n_items {
        let k = item_cluster[t];
        let local = t % cfg.items_per_cluster;
        for j in 0..cfg.entities_per_item.min(cfg.entities_per_cluster) {
            let e = k * cfg.entities_per_cluster + (local + j) % cfg.entities_per_cluster;
            item_entity.push((t as u32, e as u32));
        }
    }

    let mut interactions = Vec::new();
    for (u, &k) in user_cluster.iter().enumerate() {
        let mut own: Vec<u32> = (0..cfg.items_per_cluster)
            .map(|i| (k * cfg.items_per_cluster + i) as u32)
            .collect();
        rng.shuffle(&mut own);
        own.truncate(cfg.in_cluster_items);
        let mut other: Vec<u32> = (0..n_items as u32)
            .filter(|&t| item_cluster[t as usize] != k)
            .collect();
        rng.shuffle(&mut other);
        other.truncate(cfg.off_cluster_items);
        for t in own.into_iter().chain(other) {
            interactions.push((u as u32, t));
        }
    }
    let graph = HeteroGraph::from_edges((n_users, n_items, n_entities), &interactions, &item_entity, &[])?;
    Ok(PlantedData {
        graph,
        item_cluster,
        user_cluster,
    })
}

/// Fraction of items whose argmax factor equals the most common argmax
/// factor of their cluster. Also returns each cluster's majority factor.
pub fn factor_purity(item_factor: &[usize], item_cluster: &[usize]) -> (f64, Vec<usize>) {
    let n_clusters = item_cluster.iter().max().map_or(0, |m| m + 1);
    let n_factors = item_factor.iter().max().map_or(0, |m| m + 1);
    let mut counts = alloc::vec![alloc::vec![0usize; n_factors]; n_clusters];
    for (&f, &k) in item_factor.iter().zip(item_cluster) {
        counts[k][f] += 1;
    }
    let majority: Vec<usize> = counts
        .iter()
        .map(|row| {
            let mut best = 0;
            for (f, &c) in row.iter().enumerate() {
                if c > row[best] {
                    best = f;
                }
            }
            best
        })
        .collect();
    let matching = item_factor
        .iter()
        .zip(item_cluster)
        .filter(|(&f, &k)| majority[k] == f)
        .count();
    (matching as f64 / item_factor.len().max(1) as f64, majority)
}
