//! Text renderings of metrics, shift reports, explanations and embeddings.

use std::fmt::Write as _;

use facetrec_core::encoder::Affiliations;
use facetrec_core::eval::MetricsReport;
use facetrec_core::explain::{Contribution, Explanation, ShiftReport};
use facetrec_core::numerics::argmax;
use facetrec_core::trainer::EpochRecord;
use facetrec_core::{HeteroGraph, IdMap, Model, NodeKind};
use serde::Serialize;

fn name(ids: &IdMap, kind: NodeKind, index: u32) -> String {
    ids.name(kind, index).map_or_else(|| index.to_string(), str::to_string)
}

/// One row per user plus a final `mean` row.
pub fn metrics_tsv(report: &MetricsReport, ids: &IdMap) -> String {
    let mut out = String::from("user");
    for k in &report.ks {
        let _ = write!(out, "\trecall@{k}\tndcg@{k}");
    }
    out.push('\n');
    for (i, &u) in report.users.iter().enumerate() {
        out.push_str(&name(ids, NodeKind::User, u));
        for j in 0..report.ks.len() {
            let _ = write!(out, "\t{}\t{}", report.recall[i][j], report.ndcg[i][j]);
        }
        out.push('\n');
    }
    out.push_str("mean");
    for j in 0..report.ks.len() {
        let _ = write!(out, "\t{}\t{}", report.mean_recall[j], report.mean_ndcg[j]);
    }
    out.push('\n');
    out
}

/// `key=value` lines: split, user counts, then one line per mean metric.
pub fn metrics_text(report: &MetricsReport) -> String {
    let mut out = format!(
        "split={}\nusers={}\nskipped={}\n",
        report.label,
        report.n_users(),
        report.skipped
    );
    for (j, k) in report.ks.iter().enumerate() {
        let _ = writeln!(out, "recall@{k}={}", report.mean_recall[j]);
    }
    for (j, k) in report.ks.iter().enumerate() {
        let _ = writeln!(out, "ndcg@{k}={}", report.mean_ndcg[j]);
    }
    out
}

/// Reads back the `key=value` lines of [`metrics_text`].
pub fn parse_metrics_text(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

pub const SHIFT_HEADER: &str = "strategy\tn\trun\trecall\trecall_prime\tshift\n";

pub fn shift_rows_tsv(report: &ShiftReport) -> String {
    let mut out = String::new();
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            report.strategy.as_str(),
            r.n,
            r.run,
            r.recall,
            r.recall_prime,
            r.shift
        );
    }
    out
}

/// Mean shift per budget, with the user counts behind it.
pub fn shift_summary(report: &ShiftReport) -> String {
    let mut budgets: Vec<usize> = report.rows.iter().map(|r| r.n).collect();
    budgets.dedup();
    let mut out = String::new();
    let users = report.rows.first().map_or(0, |r| r.users);
    let _ = writeln!(
        out,
        "strategy={}\nremoval={}\nusers={users}\nexcluded_users={}",
        report.strategy.as_str(),
        report.target.as_str(),
        report.excluded_users
    );
    for n in budgets {
        let _ = writeln!(out, "mean_shift@{n}={}", report.mean_shift(n).unwrap_or(f64::NAN));
    }
    out
}

#[derive(Serialize)]
struct NodeJson {
    node: String,
    kind: &'static str,
    /// 1-based.
    factor: usize,
    score: f64,
    per_factor_scores: Vec<f64>,
}

#[derive(Serialize)]
struct ExplanationJson {
    user: String,
    target: String,
    target_factor: usize,
    target_affiliation: Vec<f64>,
    items: Vec<NodeJson>,
    entities: Vec<NodeJson>,
}

fn node_json(ids: &IdMap, kind: NodeKind, c: &Contribution) -> NodeJson {
    NodeJson {
        node: name(ids, kind, c.node),
        kind: kind.as_str(),
        factor: c.dominant_factor + 1,
        score: c.total,
        per_factor_scores: c.per_factor.clone(),
    }
}

pub fn explanation_json(ex: &Explanation, ids: &IdMap) -> String {
    let doc = ExplanationJson {
        user: name(ids, NodeKind::User, ex.user),
        target: name(ids, NodeKind::Item, ex.target),
        target_factor: ex.target_factor + 1,
        target_affiliation: ex.target_affiliation.clone(),
        items: ex.item_contributions.iter().map(|c| node_json(ids, NodeKind::Item, c)).collect(),
        entities: ex.entity_contributions.iter().map(|c| node_json(ids, NodeKind::Entity, c)).collect(),
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("explanation serializes");
    s.push('\n');
    s
}

const PALETTE: &[&str] = &[
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

fn dot_id(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

/// Graph description: entity -> historical item -> user -> target, nodes
/// filled by factor, edges labelled with importance scores.
pub fn explanation_dot(ex: &Explanation, ids: &IdMap, graph: &HeteroGraph) -> String {
    let user = format!("user:{}", name(ids, NodeKind::User, ex.user));
    let target = format!("item:{}", name(ids, NodeKind::Item, ex.target));
    let color = |f: usize| PALETTE[f % PALETTE.len()];
    let mut out = String::from("digraph explanation {\n  rankdir=LR;\n  node [style=filled, fontcolor=white];\n");
    let _ = writeln!(out, "  {} [shape=box, fillcolor=\"#333333\"];", dot_id(&user));
    let _ = writeln!(
        out,
        "  {} [shape=box, fillcolor=\"{}\", label=\"{} (factor {})\"];",
        dot_id(&target),
        color(ex.target_factor),
        name(ids, NodeKind::Item, ex.target),
        ex.target_factor + 1
    );
    let _ = writeln!(out, "  {} -> {} [label=\"recommended\", style=bold];", dot_id(&user), dot_id(&target));
    let shown: Vec<u32> = ex.item_contributions.iter().map(|c| c.node).collect();
    for c in &ex.item_contributions {
        let id = format!("item:{}", name(ids, NodeKind::Item, c.node));
        let _ = writeln!(out, "  {} [shape=ellipse, fillcolor=\"{}\"];", dot_id(&id), color(c.dominant_factor));
        let _ = writeln!(out, "  {} -> {} [label=\"{:.4}\"];", dot_id(&id), dot_id(&user), c.total);
    }
    let history = graph.user_items(ex.user);
    for c in &ex.entity_contributions {
        let id = format!("entity:{}", name(ids, NodeKind::Entity, c.node));
        let _ = writeln!(out, "  {} [shape=diamond, fillcolor=\"{}\"];", dot_id(&id), color(c.dominant_factor));
        let via: Vec<u32> = history
            .iter()
            .copied()
            .filter(|&m| shown.contains(&m) && graph.item_entities(m).contains(&c.node))
            .collect();
        if via.is_empty() {
            let _ = writeln!(out, "  {} -> {} [label=\"{:.4}\", style=dashed];", dot_id(&id), dot_id(&user), c.total);
        }
        for m in via {
            let item = format!("item:{}", name(ids, NodeKind::Item, m));
            let _ = writeln!(out, "  {} -> {} [label=\"{:.4}\"];", dot_id(&id), dot_id(&item), c.total);
        }
    }
    out.push_str("}\n");
    out
}

/// One row per item: id, argmax factor (1-based), base embedding values.
pub fn embeddings_tsv(model: &Model, ids: &IdMap) -> String {
    let aff = Affiliations::compute(model);
    let base = &model.params.encoder.item_base;
    let mut out = String::from("item\tfactor");
    for d in 0..model.factors.dim {
        let _ = write!(out, "\td{d}");
    }
    out.push('\n');
    for t in 0..base.shape()[0] {
        out.push_str(&name(ids, NodeKind::Item, t as u32));
        let _ = write!(out, "\t{}", argmax(aff.item.row(t)) + 1);
        for v in base.row(t) {
            let _ = write!(out, "\t{v}");
        }
        out.push('\n');
    }
    out
}

pub fn loss_log_tsv(log: &[EpochRecord]) -> String {
    let mut out = String::from("epoch\tnll\tkl\tl2\ttotal\tval_ndcg@100\n");
    for r in log {
        let val = r.val_ndcg.map_or_else(|| "NA".to_string(), |v| v.to_string());
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{val}",
            r.epoch, r.loss.negative_log_likelihood, r.loss.kl, r.loss.l2, r.loss.total
        );
    }
    out
}
