//! Data model and ingestion for saplings, users, and reference taxonomies.
//!
//! A *sapling* is a shallow personal hierarchy one user creates to organize
//! content: a rooted labeled tree whose nodes carry bags of tags. All names
//! and tags are normalized (lowercased, Porter-stemmed) at ingestion so that
//! later name matching is deterministic.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::path::Path;

use rust_stemmers::{Algorithm, Stemmer};
use serde::{Deserialize, Serialize};

use crate::error::{FolkError, Result};

pub type NodeId = u64;
pub type UserId = String;
pub type SaplingId = String;

/// Multiset of stemmed tags with occurrence counts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagBag {
    entries: BTreeMap<String, u64>,
}

impl TagBag {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, tag: &str, count: u64) {
        if count == 0 || tag.is_empty() {
            return;
        }
        *self.entries.entry(tag.to_string()).or_insert(0) += count;
    }

    pub fn merge(&mut self, other: &TagBag) {
        for (tag, count) in &other.entries {
            *self.entries.entry(tag.clone()).or_insert(0) += count;
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.entries.values().sum()
    }

    pub fn count(&self, tag: &str) -> u64 {
        self.entries.get(tag).copied().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u64)> {
        self.entries.iter().map(|(t, &c)| (t.as_str(), c))
    }

    /// Normalize counts to a probability distribution over tags.
    pub fn distribution(&self) -> BTreeMap<String, f64> {
        let total = self.total() as f64;
        self.entries
            .iter()
            .map(|(t, &c)| (t.clone(), c as f64 / total))
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SaplingNode {
    pub node_id: NodeId,
    /// Normalized (stemmed, lowercased) name.
    pub name: String,
    pub raw_name: String,
    /// Tags attached directly to this node in the source data.
    pub raw_tags: TagBag,
    /// Propagated view: raw tags plus all descendants' raw tags.
    pub tags: TagBag,
    /// Root = 1.
    pub depth_level: u32,
    pub children: Vec<NodeId>,
    pub owner: UserId,
    pub sapling_id: SaplingId,
    /// Set later by the expert classifier.
    pub is_expert_node: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sapling {
    pub sapling_id: SaplingId,
    pub root: NodeId,
    pub nodes: BTreeMap<NodeId, SaplingNode>,
    pub owner: UserId,
}

impl Sapling {
    pub fn node(&self, id: NodeId) -> &SaplingNode {
        &self.nodes[&id]
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Depth of the sapling (root level is 1).
    pub fn depth(&self) -> u32 {
        self.nodes.values().map(|n| n.depth_level).max().unwrap_or(1)
    }

    /// Node count per level, indexed from level 1.
    pub fn level_counts(&self) -> Vec<usize> {
        let depth = self.depth() as usize;
        let mut counts = vec![0usize; depth];
        for node in self.nodes.values() {
            counts[(node.depth_level - 1) as usize] += 1;
        }
        counts
    }

    pub fn parent_of(&self, id: NodeId) -> Option<NodeId> {
        self.nodes
            .values()
            .find(|n| n.children.contains(&id))
            .map(|n| n.node_id)
    }

    /// Parent→child name pairs, one per edge.
    pub fn twigs(&self) -> Vec<(String, String)> {
        let mut twigs = Vec::new();
        for node in self.nodes.values() {
            for child in &node.children {
                twigs.push((node.name.clone(), self.nodes[child].name.clone()));
            }
        }
        twigs
    }

    /// Node ids in breadth-first order from the root.
    pub fn bfs_order(&self) -> Vec<NodeId> {
        let mut order = Vec::with_capacity(self.nodes.len());
        let mut queue = VecDeque::from([self.root]);
        while let Some(id) = queue.pop_front() {
            order.push(id);
            queue.extend(self.nodes[&id].children.iter().copied());
        }
        order
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UserLabel {
    Expert,
    Novice,
    Unlabeled,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: UserId,
    pub saplings: Vec<SaplingId>,
    pub label: UserLabel,
}

/// Immutable ingested corpus: all users and their saplings.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Corpus {
    pub users: BTreeMap<UserId, UserProfile>,
    pub saplings: BTreeMap<SaplingId, Sapling>,
}

impl Corpus {
    pub fn num_nodes(&self) -> usize {
        self.saplings.values().map(Sapling::num_nodes).sum()
    }

    pub fn user_saplings(&self, user: &str) -> impl Iterator<Item = &Sapling> {
        self.users
            .get(user)
            .into_iter()
            .flat_map(|u| u.saplings.iter())
            .map(|sid| &self.saplings[sid])
    }

    /// Flag every node owned by a user in `experts`.
    pub fn mark_expert_nodes(&mut self, experts: &HashSet<UserId>) {
        for sapling in self.saplings.values_mut() {
            let is_expert = experts.contains(&sapling.owner);
            for node in sapling.nodes.values_mut() {
                node.is_expert_node = is_expert;
            }
        }
    }
}

/// Reference taxonomy as a set of parent→child name edges.
#[derive(Debug, Clone, Default)]
pub struct ReferenceTaxonomy {
    pub edges: BTreeSet<(String, String)>,
}

impl ReferenceTaxonomy {
    pub fn names(&self) -> BTreeSet<String> {
        self.edges
            .iter()
            .flat_map(|(p, c)| [p.clone(), c.clone()])
            .collect()
    }

    pub fn roots(&self) -> BTreeSet<String> {
        let children: HashSet<&String> = self.edges.iter().map(|(_, c)| c).collect();
        self.edges
            .iter()
            .map(|(p, _)| p)
            .filter(|p| !children.contains(*p))
            .cloned()
            .collect()
    }

    pub fn children_of(&self, name: &str) -> Vec<&str> {
        self.edges
            .iter()
            .filter(|(p, _)| p == name)
            .map(|(_, c)| c.as_str())
            .collect()
    }

    /// Parse a `parent<TAB>child` edge list; `#` starts a comment line.
    /// Names are stemmed with the same normalizer as saplings.
    pub fn from_edge_list(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_edge_text(&text)
    }

    pub fn from_edge_text(text: &str) -> Result<Self> {
        let mut edges = BTreeSet::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.splitn(2, '\t');
            let parent = parts.next().unwrap_or("");
            let child = parts.next().ok_or_else(|| FolkError::MalformedRecord {
                locator: format!("line {}", lineno + 1),
                reason: "expected parent<TAB>child".to_string(),
            })?;
            let (parent, child) = (stem(parent), stem(child));
            if parent.is_empty() || child.is_empty() {
                return Err(FolkError::MalformedRecord {
                    locator: format!("line {}", lineno + 1),
                    reason: "empty name after normalization".to_string(),
                });
            }
            edges.insert((parent, child));
        }
        Ok(Self { edges })
    }
}

thread_local! {
    static STEMMER: Stemmer = Stemmer::create(Algorithm::English);
}

/// Normalize a term: lowercase, strip punctuation to spaces, Porter-stem
/// each token, rejoin with single spaces. Deterministic and idempotent.
pub fn stem(term: &str) -> String {
    let lowered = term.to_lowercase();
    let cleaned: String = lowered
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    STEMMER.with(|s| {
        cleaned
            .split_whitespace()
            .map(|tok| s.stem(tok).into_owned())
            .collect::<Vec<_>>()
            .join(" ")
    })
}

// Wire format for the sapling corpus.

#[derive(Debug, Deserialize, Serialize)]
pub(crate) struct RawUser {
    pub(crate) user_id: String,
    pub(crate) saplings: Vec<RawSapling>,
}

#[derive(Debug, Deserialize, Serialize)]
pub(crate) struct RawSapling {
    pub(crate) sapling_id: String,
    pub(crate) nodes: Vec<RawNode>,
    pub(crate) root: u64,
}

#[derive(Debug, Deserialize, Serialize)]
pub(crate) struct RawNode {
    pub(crate) id: u64,
    pub(crate) name: String,
    #[serde(default)]
    pub(crate) tags: BTreeMap<String, u64>,
    #[serde(default)]
    pub(crate) children: Vec<u64>,
}

/// Parse a JSON corpus file into an ingested, normalized `Corpus`.
///
/// Node ids in the file are scoped per sapling; ingestion remaps them so
/// that ids are globally unique. All names and tags are stemmed, depth
/// levels assigned, and tags propagated bottom-up.
pub fn ingest_saplings(path: &Path) -> Result<Corpus> {
    let text = std::fs::read_to_string(path)?;
    ingest_saplings_str(&text)
}

pub fn ingest_saplings_str(text: &str) -> Result<Corpus> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Ok(Corpus::default());
    }
    let raw_users: Vec<RawUser> =
        serde_json::from_str(trimmed).map_err(|e| FolkError::MalformedRecord {
            locator: format!("line {}", e.line()),
            reason: e.to_string(),
        })?;

    let mut corpus = Corpus::default();
    let mut next_id: NodeId = 0;
    for raw_user in raw_users {
        let mut profile = UserProfile {
            user_id: raw_user.user_id.clone(),
            saplings: Vec::new(),
            label: UserLabel::Unlabeled,
        };
        for raw in raw_user.saplings {
            if corpus.saplings.contains_key(&raw.sapling_id) {
                return Err(FolkError::DuplicateSapling(raw.sapling_id));
            }
            let sapling = build_sapling(&raw_user.user_id, raw, &mut next_id)?;
            profile.saplings.push(sapling.sapling_id.clone());
            corpus.saplings.insert(sapling.sapling_id.clone(), sapling);
        }
        corpus.users.insert(raw_user.user_id.clone(), profile);
    }
    Ok(corpus)
}

fn build_sapling(owner: &str, raw: RawSapling, next_id: &mut NodeId) -> Result<Sapling> {
    let mut local: HashMap<u64, &RawNode> = HashMap::new();
    for node in &raw.nodes {
        if local.insert(node.id, node).is_some() {
            return Err(FolkError::MalformedRecord {
                locator: format!("sapling `{}` node {}", raw.sapling_id, node.id),
                reason: "duplicate node id".to_string(),
            });
        }
    }
    if !local.contains_key(&raw.root) {
        return Err(FolkError::MissingRoot(raw.root));
    }
    for node in &raw.nodes {
        for child in &node.children {
            if !local.contains_key(child) {
                return Err(FolkError::DanglingChild {
                    sapling: raw.sapling_id.clone(),
                    parent: node.id,
                    child: *child,
                });
            }
        }
    }

    // Assign global ids and depth levels in BFS order from the root; a
    // node keeps the first parent encountered (treeify semantics).
    let mut id_map: HashMap<u64, NodeId> = HashMap::new();
    let mut nodes: BTreeMap<NodeId, SaplingNode> = BTreeMap::new();
    let mut queue = VecDeque::from([(raw.root, 1u32)]);
    let mut order: Vec<(u64, NodeId)> = Vec::new();
    while let Some((local_id, depth)) = queue.pop_front() {
        if id_map.contains_key(&local_id) {
            continue;
        }
        let gid = *next_id;
        *next_id += 1;
        id_map.insert(local_id, gid);
        order.push((local_id, gid));
        let rawnode = local[&local_id];
        let name = stem(&rawnode.name);
        if name.is_empty() {
            return Err(FolkError::MalformedRecord {
                locator: format!("sapling `{}` node {}", raw.sapling_id, local_id),
                reason: "node name empty after normalization".to_string(),
            });
        }
        let mut tags = TagBag::new();
        for (tag, count) in &rawnode.tags {
            tags.add(&stem(tag), *count);
        }
        nodes.insert(
            gid,
            SaplingNode {
                node_id: gid,
                name,
                raw_name: rawnode.name.clone(),
                raw_tags: tags.clone(),
                tags,
                depth_level: depth,
                children: Vec::new(),
                owner: owner.to_string(),
                sapling_id: raw.sapling_id.clone(),
            is_expert_node: false,
            },
        );
        for child in &rawnode.children {
            if !id_map.contains_key(child) {
                queue.push_back((*child, depth + 1));
            }
        }
    }
    // Wire up children: first parent encountered wins, back/cross edges
    // to already-claimed nodes are dropped. Unreachable nodes are dropped.
    let mut claimed: HashSet<NodeId> = HashSet::from([id_map[&raw.root]]);
    for (local_id, gid) in &order {
        let mut kept = Vec::new();
        for child in &local[local_id].children {
            if let Some(&cgid) = id_map.get(child) {
                if claimed.insert(cgid) {
                    kept.push(cgid);
                }
            }
        }
        nodes.get_mut(gid).unwrap().children = kept;
    }

    let mut sapling = Sapling {
        sapling_id: raw.sapling_id,
        root: id_map[&raw.root],
        nodes,
        owner: owner.to_string(),
    };
    fix_depths(&mut sapling);
    propagate_tags(&mut sapling);
    Ok(sapling)
}

fn fix_depths(sapling: &mut Sapling) {
    let mut queue = VecDeque::from([(sapling.root, 1u32)]);
    while let Some((id, depth)) = queue.pop_front() {
        sapling.nodes.get_mut(&id).unwrap().depth_level = depth;
        let children = sapling.nodes[&id].children.clone();
        for child in children {
            queue.push_back((child, depth + 1));
        }
    }
}

/// Propagate tags bottom-up: each node's propagated bag becomes the
/// multiset union of its own raw tags and all descendants' raw tags.
/// Recomputed from `raw_tags` each time, so the operation is idempotent.
pub fn propagate_tags(sapling: &mut Sapling) {
    let mut order = sapling.bfs_order();
    order.reverse();
    for id in order {
        let children = sapling.nodes[&id].children.clone();
        let mut merged = sapling.nodes[&id].raw_tags.clone();
        for child in &children {
            let child_tags = sapling.nodes[child].tags.clone();
            merged.merge(&child_tags);
        }
        sapling.nodes.get_mut(&id).unwrap().tags = merged;
    }
}

/// A raw node graph that may contain multi-parent edges or cycles.
pub struct RawGraph {
    pub root: u64,
    /// (id, name) pairs.
    pub nodes: Vec<(u64, String)>,
    /// Directed parent→child edges.
    pub edges: Vec<(u64, u64)>,
}

/// Convert a possibly non-tree node graph into a sapling-shaped tree.
///
/// Breadth-first traversal from the root; each node keeps the first parent
/// encountered, edges to already-visited nodes are dropped, unreachable
/// nodes are dropped. Returns the tree plus the count of dropped nodes.
pub fn treeify(graph: &RawGraph, owner: &str, sapling_id: &str) -> Result<(Sapling, usize)> {
    let names: HashMap<u64, &String> = graph.nodes.iter().map(|(id, n)| (*id, n)).collect();
    if !names.contains_key(&graph.root) {
        return Err(FolkError::MissingRoot(graph.root));
    }
    let mut adjacency: HashMap<u64, Vec<u64>> = HashMap::new();
    for (parent, child) in &graph.edges {
        adjacency.entry(*parent).or_default().push(*child);
    }

    let mut nodes: BTreeMap<NodeId, SaplingNode> = BTreeMap::new();
    let mut visited: HashSet<u64> = HashSet::from([graph.root]);
    let mut queue = VecDeque::from([(graph.root, 1u32)]);
    while let Some((id, depth)) = queue.pop_front() {
        let mut kept = Vec::new();
        for child in adjacency.get(&id).into_iter().flatten() {
            if names.contains_key(child) && visited.insert(*child) {
                kept.push(*child);
                queue.push_back((*child, depth + 1));
            }
        }
        let raw_name = names[&id].clone();
        nodes.insert(
            id,
            SaplingNode {
                node_id: id,
                name: stem(&raw_name),
                raw_name,
                raw_tags: TagBag::new(),
                tags: TagBag::new(),
                depth_level: depth,
                children: kept,
                owner: owner.to_string(),
                sapling_id: sapling_id.to_string(),
                is_expert_node: false,
            },
        );
    }
    let dropped = graph.nodes.len() - nodes.len();
    Ok((
        Sapling {
            sapling_id: sapling_id.to_string(),
            root: graph.root,
            nodes,
            owner: owner.to_string(),
        },
        dropped,
    ))
}
