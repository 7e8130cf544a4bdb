#![allow(dead_code)]

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use facetrec_core::synthetic::{planted_clusters, PlantedConfig, PlantedData};

/// Writes planted data as raw TSV files plus a config; returns the config path.
pub fn write_planted(dir: &Path, cfg: &PlantedConfig, extra_config: &str) -> (PathBuf, PlantedData) {
    let data = planted_clusters(cfg).unwrap();
    let g = &data.graph;
    let mut ui = String::new();
    for u in 0..g.n_users() as u32 {
        for &t in g.user_items(u) {
            let _ = writeln!(ui, "u{u}\tt{t}");
        }
    }
    let mut ie = String::new();
    for t in 0..g.n_items() as u32 {
        for &e in g.item_entities(t) {
            let _ = writeln!(ie, "t{t}\thas_tag\te{e}");
        }
    }
    fs::write(dir.join("interactions.tsv"), ui).unwrap();
    fs::write(dir.join("item_entity.tsv"), ie).unwrap();
    fs::write(dir.join("entity_entity.tsv"), "e0\te1\n").unwrap();
    let config = dir.join("run.cfg");
    fs::write(
        &config,
        format!(
            "interactions = interactions.tsv\nitem_entity = item_entity.tsv\nentity_entity = entity_entity.tsv\n\
             n_val = 10\nn_test = 20\ntrain_frac = 0.8\nk_list = 2,5,10\n\
             factors = 2\ndim = 6\nlr = 0.02\nbatch_size = 20\nepochs = 3\n{extra_config}"
        ),
    )
    .unwrap();
    (config, data)
}

/// Runs the CLI in-process; returns the exit status.
pub fn cli(args: &[&str]) -> i32 {
    let mut argv = vec!["facetrec"];
    argv.extend_from_slice(args);
    facetrec::cli::run_command(argv)
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}
