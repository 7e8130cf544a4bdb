//! Tri-partite user / item / entity graph and the user-holdout split.
//!
//! Raw identifiers are strings; every node gets a dense index within its
//! kind, assigned in order of first appearance. Adjacency lists are stored in
//! CSR form, sorted by neighbour index and deduplicated.

#[allow(unused_imports)]
use num_traits::Float as _;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::{Error, Result, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeKind {
    User,
    Item,
    Entity,
}

impl NodeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::User => "user",
            NodeKind::Item => "item",
            NodeKind::Entity => "entity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "user" => Some(NodeKind::User),
            "item" => Some(NodeKind::Item),
            "entity" => Some(NodeKind::Entity),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeRef {
    pub kind: NodeKind,
    pub index: u32,
}

impl NodeRef {
    pub fn user(index: u32) -> Self {
        Self { kind: NodeKind::User, index }
    }
    pub fn item(index: u32) -> Self {
        Self { kind: NodeKind::Item, index }
    }
    pub fn entity(index: u32) -> Self {
        Self { kind: NodeKind::Entity, index }
    }
}

/// Bijection between raw string ids and dense indices, per kind.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMap {
    names: [Vec<String>; 3],
    lookup: [BTreeMap<String, u32>; 3],
}

fn slot(kind: NodeKind) -> usize {
    match kind {
        NodeKind::User => 0,
        NodeKind::Item => 1,
        NodeKind::Entity => 2,
    }
}

impl IdMap {
    /// Index of `id`, assigning the next dense index if it is new.
    pub fn intern(&mut self, kind: NodeKind, id: &str) -> u32 {
        let s = slot(kind);
        if let Some(&i) = self.lookup[s].get(id) {
            return i;
        }
        let i = self.names[s].len() as u32;
        self.names[s].push(id.to_string());
        self.lookup[s].insert(id.to_string(), i);
        i
    }

    pub fn get(&self, kind: NodeKind, id: &str) -> Option<u32> {
        self.lookup[slot(kind)].get(id).copied()
    }

    pub fn name(&self, kind: NodeKind, index: u32) -> Option<&str> {
        self.names[slot(kind)].get(index as usize).map(String::as_str)
    }

    pub fn count(&self, kind: NodeKind) -> usize {
        self.names[slot(kind)].len()
    }

    /// All `(kind, id, index)` triples, users first, then items, then
    /// entities, each in index order.
    pub fn entries(&self) -> impl Iterator<Item = (NodeKind, &str, u32)> {
        [NodeKind::User, NodeKind::Item, NodeKind::Entity]
            .into_iter()
            .flat_map(move |k| {
                self.names[slot(k)]
                    .iter()
                    .enumerate()
                    .map(move |(i, n)| (k, n.as_str(), i as u32))
            })
    }

    /// Rebuild from persisted triples. Indices must be dense per kind.
    pub fn from_entries<'a, I>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (NodeKind, &'a str, u32)>,
    {
        let mut map = IdMap::default();
        for (line, (kind, id, index)) in entries.into_iter().enumerate() {
            let expected = map.count(kind) as u32;
            if index != expected || map.get(kind, id).is_some() {
                return Err(Error::Parse {
                    line: line + 1,
                    message: format!("{} `{id}` has index {index}, expected {expected}", kind.as_str()),
                });
            }
            map.intern(kind, id);
        }
        Ok(map)
    }
}

/// Compressed sparse adjacency: `targets[offsets[i]..offsets[i + 1]]`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Adjacency {
    offsets: Vec<u32>,
    targets: Vec<u32>,
}

impl Adjacency {
    /// Builds sorted, deduplicated lists for `n` source nodes.
    pub fn from_pairs(n: usize, pairs: &[(u32, u32)]) -> Self {
        let mut sorted = pairs.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0u32);
        let mut cursor = 0;
        for src in 0..n as u32 {
            while cursor < sorted.len() && sorted[cursor].0 == src {
                cursor += 1;
            }
            offsets.push(cursor as u32);
        }
        debug_assert_eq!(cursor, sorted.len(), "source index out of range");
        Self {
            offsets,
            targets: sorted.into_iter().map(|(_, t)| t).collect(),
        }
    }

    #[inline]
    pub fn neighbors(&self, i: u32) -> &[u32] {
        let i = i as usize;
        &self.targets[self.offsets[i] as usize..self.offsets[i + 1] as usize]
    }

    pub fn degree(&self, i: u32) -> usize {
        self.neighbors(i).len()
    }

    pub fn n_sources(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn n_edges(&self) -> usize {
        self.targets.len()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        (0..self.n_sources() as u32)
            .flat_map(move |s| self.neighbors(s).iter().map(move |&t| (s, t)))
    }
}

/// Immutable user / item / entity graph.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HeteroGraph {
    n_users: usize,
    n_items: usize,
    n_entities: usize,
    user_items: Adjacency,
    item_entities: Adjacency,
    entity_entities: Adjacency,
}

impl HeteroGraph {
    /// Graph over the given node counts. Edges referencing out-of-range nodes
    /// are rejected.
    pub fn from_edges(
        counts: (usize, usize, usize),
        user_items: &[(u32, u32)],
        item_entities: &[(u32, u32)],
        entity_entities: &[(u32, u32)],
    ) -> Result<Self> {
        let (n_users, n_items, n_entities) = counts;
        check_range(user_items, n_users, n_items, ("user", "item"))?;
        check_range(item_entities, n_items, n_entities, ("item", "entity"))?;
        check_range(entity_entities, n_entities, n_entities, ("entity", "entity"))?;
        Ok(Self {
            n_users,
            n_items,
            n_entities,
            user_items: Adjacency::from_pairs(n_users, user_items),
            item_entities: Adjacency::from_pairs(n_items, item_entities),
            entity_entities: Adjacency::from_pairs(n_entities, entity_entities),
        })
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }
    pub fn n_items(&self) -> usize {
        self.n_items
    }
    pub fn n_entities(&self) -> usize {
        self.n_entities
    }

    pub fn count(&self, kind: NodeKind) -> usize {
        match kind {
            NodeKind::User => self.n_users,
            NodeKind::Item => self.n_items,
            NodeKind::Entity => self.n_entities,
        }
    }

    /// Items the user interacted with (training edges only after a split).
    #[inline]
    pub fn user_items(&self, user: u32) -> &[u32] {
        self.user_items.neighbors(user)
    }

    #[inline]
    pub fn item_entities(&self, item: u32) -> &[u32] {
        self.item_entities.neighbors(item)
    }

    #[inline]
    pub fn entity_entities(&self, entity: u32) -> &[u32] {
        self.entity_entities.neighbors(entity)
    }

    pub fn user_item_adjacency(&self) -> &Adjacency {
        &self.user_items
    }
    pub fn item_entity_adjacency(&self) -> &Adjacency {
        &self.item_entities
    }
    pub fn entity_entity_adjacency(&self) -> &Adjacency {
        &self.entity_entities
    }

    pub fn n_interactions(&self) -> usize {
        self.user_items.n_edges()
    }

    /// Same node sets and knowledge links, different user-item edges.
    pub fn with_interactions(&self, user_items: &[(u32, u32)]) -> Result<Self> {
        check_range(user_items, self.n_users, self.n_items, ("user", "item"))?;
        Ok(Self {
            user_items: Adjacency::from_pairs(self.n_users, user_items),
            ..self.clone()
        })
    }

    pub fn check_user(&self, user: u32) -> Result<()> {
        if (user as usize) < self.n_users {
            Ok(())
        } else {
            Err(Error::OutOfRange { kind: "user", index: user })
        }
    }

    pub fn check_item(&self, item: u32) -> Result<()> {
        if (item as usize) < self.n_items {
            Ok(())
        } else {
            Err(Error::OutOfRange { kind: "item", index: item })
        }
    }
}

fn check_range(
    pairs: &[(u32, u32)],
    n_src: usize,
    n_dst: usize,
    kinds: (&'static str, &'static str),
) -> Result<()> {
    for &(s, d) in pairs {
        if s as usize >= n_src {
            return Err(Error::OutOfRange { kind: kinds.0, index: s });
        }
        if d as usize >= n_dst {
            return Err(Error::OutOfRange { kind: kinds.1, index: d });
        }
    }
    Ok(())
}

/// Parses `user<TAB>item` lines into deduplicated pairs, in file order.
pub fn parse_interactions(text: &str) -> Result<Vec<(String, String)>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if fields.len() != 2 {
            return Err(Error::Parse {
                line: n + 1,
                message: format!("expected 2 tab-separated fields, found {}", fields.len()),
            });
        }
        let pair = (fields[0].to_string(), fields[1].to_string());
        if seen.insert(pair.clone()) {
            out.push(pair);
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyInput("interaction file"));
    }
    Ok(out)
}

/// Parses `head<TAB>[relation<TAB>]tail` lines. Relations are discarded.
pub fn parse_links(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        let (head, tail) = match fields.as_slice() {
            [h, t] | [h, _, t] => (*h, *t),
            _ => {
                return Err(Error::Parse {
                    line: n + 1,
                    message: format!("expected 2 or 3 tab-separated fields, found {}", fields.len()),
                })
            }
        };
        out.push((head.to_string(), tail.to_string()));
    }
    Ok(out)
}

/// Assigns dense indices and builds the graph.
///
/// Item ids come from the interaction list and the heads of item-entity
/// links; entity ids from the tails of item-entity links and both ends of
/// entity-entity links. The two sets must be disjoint.
pub fn build_graph(
    interactions: &[(String, String)],
    item_entity: &[(String, String)],
    entity_entity: &[(String, String)],
) -> Result<(HeteroGraph, IdMap)> {
    if interactions.is_empty() {
        return Err(Error::EmptyInput("no users"));
    }
    let mut ids = IdMap::default();
    let mut ui = Vec::with_capacity(interactions.len());
    for (u, t) in interactions {
        ui.push((ids.intern(NodeKind::User, u), ids.intern(NodeKind::Item, t)));
    }
    for (t, _) in item_entity {
        ids.intern(NodeKind::Item, t);
    }
    let mut ie = Vec::with_capacity(item_entity.len());
    for (t, e) in item_entity {
        if ids.get(NodeKind::Item, e).is_some() {
            return Err(Error::KindConflict(e.clone()));
        }
        ie.push((ids.intern(NodeKind::Item, t), ids.intern(NodeKind::Entity, e)));
    }
    let mut ee = Vec::with_capacity(entity_entity.len());
    for (a, b) in entity_entity {
        for id in [a, b] {
            if ids.get(NodeKind::Item, id).is_some() {
                return Err(Error::KindConflict(id.clone()));
            }
        }
        ee.push((ids.intern(NodeKind::Entity, a), ids.intern(NodeKind::Entity, b)));
    }
    let counts = (
        ids.count(NodeKind::User),
        ids.count(NodeKind::Item),
        ids.count(NodeKind::Entity),
    );
    let graph = HeteroGraph::from_edges(counts, &ui, &ie, &ee)?;
    Ok((graph, ids))
}

/// Held-out users and their ground-truth items.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HoldoutGroup {
    /// Ascending user indices.
    pub users: Vec<u32>,
    /// Sorted truth items, aligned with `users`.
    pub truth: Vec<Vec<u32>>,
}

impl HoldoutGroup {
    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn truth_of(&self, user: u32) -> Option<&[u32]> {
        self.users
            .binary_search(&user)
            .ok()
            .map(|i| self.truth[i].as_slice())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UserGroup {
    Val,
    Test,
}

impl UserGroup {
    pub fn as_str(self) -> &'static str {
        match self {
            UserGroup::Val => "val",
            UserGroup::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetSplit {
    /// Sorted `(user, item)` training pairs.
    pub train_interactions: Vec<(u32, u32)>,
    pub val: HoldoutGroup,
    pub test: HoldoutGroup,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn group(&self, group: UserGroup) -> &HoldoutGroup {
        match group {
            UserGroup::Val => &self.val,
            UserGroup::Test => &self.test,
        }
    }
}

/// Holds out `n_val + n_test` users and moves `1 - train_frac` of each one's
/// interactions into its ground truth.
///
/// Only users with at least two interactions are eligible. Each held-out user
/// keeps `ceil(train_frac * deg)` interactions for training, capped at
/// `deg - 1` so that the truth set is never empty. Returns the training graph
/// (same nodes and knowledge links, training interactions only) and the split.
pub fn split_holdout(
    graph: &HeteroGraph,
    seed: u64,
    n_val: usize,
    n_test: usize,
    train_frac: f64,
) -> Result<(HeteroGraph, DatasetSplit)> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::Split(format!("train_frac must lie in (0, 1), got {train_frac}")));
    }
    if n_val + n_test > graph.n_users() {
        return Err(Error::Split(format!(
            "cannot hold out {} users from {}",
            n_val + n_test,
            graph.n_users()
        )));
    }
    let mut pool: Vec<u32> = (0..graph.n_users() as u32)
        .filter(|&u| graph.user_items(u).len() >= 2)
        .collect();
    if pool.len() < n_val + n_test {
        return Err(Error::Split(format!(
            "only {} users have at least 2 interactions, {} required",
            pool.len(),
            n_val + n_test
        )));
    }

    let mut rng = SeededRng::new(seed);
    rng.shuffle(&mut pool);
    let mut val_users = pool[..n_val].to_vec();
    let mut test_users = pool[n_val..n_val + n_test].to_vec();
    val_users.sort_unstable();
    test_users.sort_unstable();

    let mut held = BTreeMap::new();
    for &u in &val_users {
        held.insert(u, UserGroup::Val);
    }
    for &u in &test_users {
        held.insert(u, UserGroup::Test);
    }

    let mut train = Vec::with_capacity(graph.n_interactions());
    let mut val = HoldoutGroup::default();
    let mut test = HoldoutGroup::default();
    for u in 0..graph.n_users() as u32 {
        let items = graph.user_items(u);
        match held.get(&u) {
            None => train.extend(items.iter().map(|&t| (u, t))),
            Some(&group) => {
                let mut order = items.to_vec();
                rng.shuffle(&mut order);
                let deg = order.len();
                let keep = ((train_frac * deg as f64).ceil() as usize).clamp(1, deg - 1);
                train.extend(order[..keep].iter().map(|&t| (u, t)));
                let mut truth = order[keep..].to_vec();
                truth.sort_unstable();
                let target = if group == UserGroup::Val { &mut val } else { &mut test };
                target.users.push(u);
                target.truth.push(truth);
            }
        }
    }
    train.sort_unstable();

    let train_graph = graph.with_interactions(&train)?;
    let split = DatasetSplit {
        train_interactions: train,
        val,
        test,
        seed,
    };
    Ok((train_graph, split))
}
