//! Raw TSV ingestion, the id-map file and the graph + split container.

use std::fs;
use std::path::Path;

use facetrec_core::graph::{build_graph, parse_interactions, parse_links, DatasetSplit, HoldoutGroup};
use facetrec_core::{HeteroGraph, IdMap, NodeKind};

use crate::binary::{read_container, read_file, sha256, write_atomic, Reader, Writer};
use crate::error::{FormatError, FormatResult};

const GRAPH_MAGIC: &[u8; 8] = b"FRGRAPH\0";
const GRAPH_VERSION: u32 = 1;

pub const GRAPH_FILE: &str = "graph.bin";
pub const IDS_FILE: &str = "ids.tsv";

fn read_text(path: &Path) -> FormatResult<String> {
    fs::read_to_string(path).map_err(|e| FormatError::io(path, e))
}

/// `user<TAB>item` lines.
pub fn load_interactions(path: &Path) -> FormatResult<Vec<(String, String)>> {
    Ok(parse_interactions(&read_text(path)?)?)
}

/// `(head, tail)` ids of one knowledge-graph edge.
pub type Link = (String, String);

/// Item-entity links and, if given, entity-entity links. Lines may carry a
/// relation column between head and tail.
pub fn load_knowledge_links(
    item_entity: &Path,
    entity_entity: Option<&Path>,
) -> FormatResult<(Vec<Link>, Vec<Link>)> {
    let ie = parse_links(&read_text(item_entity)?)?;
    let ee = match entity_entity {
        Some(p) => parse_links(&read_text(p)?)?,
        None => Vec::new(),
    };
    Ok((ie, ee))
}

/// Loads the three raw files and builds the full graph.
pub fn load_graph(
    interactions: &Path,
    item_entity: &Path,
    entity_entity: Option<&Path>,
) -> FormatResult<(HeteroGraph, IdMap)> {
    let ui = load_interactions(interactions)?;
    let (ie, ee) = load_knowledge_links(item_entity, entity_entity)?;
    Ok(build_graph(&ui, &ie, &ee)?)
}

/// `kind<TAB>string_id<TAB>dense_index` lines.
pub fn id_map_tsv(ids: &IdMap) -> String {
    let mut out = String::new();
    for (kind, id, index) in ids.entries() {
        out.push_str(kind.as_str());
        out.push('\t');
        out.push_str(id);
        out.push('\t');
        out.push_str(&index.to_string());
        out.push('\n');
    }
    out
}

pub fn parse_id_map(text: &str) -> FormatResult<IdMap> {
    let mut triples = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let bad = |message: String| FormatError::Malformed(format!("id map line {}: {message}", n + 1));
        let fields: Vec<&str> = line.split('\t').collect();
        let [kind, id, index] = fields.as_slice() else {
            return Err(bad(format!("expected 3 fields, found {}", fields.len())));
        };
        let kind = NodeKind::parse(kind).ok_or_else(|| bad(format!("unknown kind `{kind}`")))?;
        let index: u32 = index.parse().map_err(|_| bad(format!("bad index `{index}`")))?;
        triples.push((kind, *id, index));
    }
    Ok(IdMap::from_entries(triples)?)
}

/// SHA-256 of the canonical id-map TSV.
pub fn id_map_digest(ids: &IdMap) -> [u8; 32] {
    sha256(id_map_tsv(ids).as_bytes())
}

/// The training graph, its split and the id map, as written by `build`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub ids: IdMap,
    /// Knowledge links plus training interactions only.
    pub train: HeteroGraph,
    pub split: DatasetSplit,
}

impl Dataset {
    pub fn digest(&self) -> [u8; 32] {
        id_map_digest(&self.ids)
    }
}

fn write_group(w: &mut Writer, group: &HoldoutGroup) {
    w.u64(group.users.len() as u64);
    for (&u, truth) in group.users.iter().zip(&group.truth) {
        w.u32(u);
        w.u64(truth.len() as u64);
        for &t in truth {
            w.u32(t);
        }
    }
}

fn read_group(r: &mut Reader<'_>) -> FormatResult<HoldoutGroup> {
    let n = r.count(12)?;
    let mut group = HoldoutGroup::default();
    for _ in 0..n {
        group.users.push(r.u32()?);
        let k = r.count(4)?;
        group.truth.push((0..k).map(|_| r.u32()).collect::<FormatResult<_>>()?);
    }
    Ok(group)
}

pub fn encode_dataset(data: &Dataset) -> Vec<u8> {
    let g = &data.train;
    let mut w = Writer::new(GRAPH_MAGIC, GRAPH_VERSION);
    w.bytes(&data.digest());
    for kind in [NodeKind::User, NodeKind::Item, NodeKind::Entity] {
        w.u64(g.count(kind) as u64);
    }
    w.pairs(&g.item_entity_adjacency().pairs().collect::<Vec<_>>());
    w.pairs(&g.entity_entity_adjacency().pairs().collect::<Vec<_>>());
    w.u64(data.split.seed);
    w.pairs(&data.split.train_interactions);
    write_group(&mut w, &data.split.val);
    write_group(&mut w, &data.split.test);
    w.finish()
}

/// Decodes a graph container and checks it against `ids`.
pub fn decode_dataset(bytes: &[u8], ids: IdMap) -> FormatResult<Dataset> {
    let (digest, graph, split) = read_container(bytes, GRAPH_MAGIC, "graph", GRAPH_VERSION, |r| {
        let digest = r.digest()?;
        let counts = (r.u64()? as usize, r.u64()? as usize, r.u64()? as usize);
        let ie = r.pairs()?;
        let ee = r.pairs()?;
        let seed = r.u64()?;
        let train_interactions = r.pairs()?;
        let val = read_group(r)?;
        let test = read_group(r)?;
        let graph = HeteroGraph::from_edges(counts, &train_interactions, &ie, &ee)?;
        let split = DatasetSplit {
            train_interactions,
            val,
            test,
            seed,
        };
        Ok((digest, graph, split))
    })?;
    if digest != id_map_digest(&ids) {
        return Err(FormatError::DigestMismatch);
    }
    for kind in [NodeKind::User, NodeKind::Item, NodeKind::Entity] {
        if ids.count(kind) != graph.count(kind) {
            return Err(FormatError::DigestMismatch);
        }
    }
    Ok(Dataset {
        ids,
        train: graph,
        split,
    })
}

/// Writes `graph.bin` and `ids.tsv` into `dir`.
pub fn save_dataset(data: &Dataset, dir: &Path) -> FormatResult<()> {
    write_atomic(&dir.join(IDS_FILE), id_map_tsv(&data.ids).as_bytes())?;
    write_atomic(&dir.join(GRAPH_FILE), &encode_dataset(data))
}

pub fn load_dataset(dir: &Path) -> FormatResult<Dataset> {
    let ids = parse_id_map(&read_text(&dir.join(IDS_FILE))?)?;
    decode_dataset(&read_file(&dir.join(GRAPH_FILE))?, ids)
}
