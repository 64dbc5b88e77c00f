//! Snowball sampling, the M1/M2/M3 strategy runners, and the synthetic
//! corpus generator used for desk-scale validation.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotation::{
    ingest_saplings_str, stem, Corpus, NodeId, RawNode, RawSapling, RawUser, ReferenceTaxonomy,
    SaplingId, SaplingNode, UserId,
};
use crate::error::{FolkError, Result};
use crate::rap::{
    assemble_folksonomy, run as rap_run, Folksonomy, NodeMeta, RapConfig, RapDiagnostics,
    RapStructure,
};
use crate::similarity::{
    assign_preferences, build_matrix, PreferenceStrategy, SimilarityMatrix, DEFAULT_DIVISOR,
    DEFAULT_TOP_K,
};

pub const DEFAULT_MAX_ROUNDS: usize = 5;
pub const DEFAULT_EXPERT_MULTIPLIER: f64 = 2.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnowballEntry {
    pub sapling_id: SaplingId,
    pub round: usize,
}

/// Saplings acquired by iterative root-name matching from a seed term.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnowballSample {
    /// Stemmed seed term.
    pub seed: String,
    pub saplings: Vec<SnowballEntry>,
    pub rounds: usize,
}

impl SnowballSample {
    pub fn sapling_ids(&self) -> Vec<SaplingId> {
        self.saplings.iter().map(|e| e.sapling_id.clone()).collect()
    }
}

/// Iteratively retrieve saplings whose root name matches the seed term,
/// then saplings whose root name matches a direct child of an already
/// retrieved sapling's root, and so on, up to `max_rounds` or fixpoint.
pub fn snowball(corpus: &Corpus, seed: &str, max_rounds: usize) -> SnowballSample {
    let seed = stem(seed);
    let mut sample = SnowballSample {
        seed: seed.clone(),
        saplings: Vec::new(),
        rounds: 0,
    };
    let mut taken: BTreeSet<&SaplingId> = BTreeSet::new();
    let mut frontier: BTreeSet<String> = BTreeSet::from([seed]);
    for round in 1..=max_rounds {
        let mut added: Vec<&SaplingId> = Vec::new();
        for (sid, sapling) in &corpus.saplings {
            if taken.contains(sid) {
                continue;
            }
            if frontier.contains(&sapling.nodes[&sapling.root].name) {
                added.push(sid);
            }
        }
        if added.is_empty() {
            break;
        }
        let mut next_frontier = BTreeSet::new();
        for &sid in &added {
            let sapling = &corpus.saplings[sid];
            for child in &sapling.nodes[&sapling.root].children {
                next_frontier.insert(sapling.nodes[child].name.clone());
            }
        }
        sample.rounds = round;
        for sid in added {
            taken.insert(sid);
            sample.saplings.push(SnowballEntry {
                sapling_id: sid.clone(),
                round,
            });
        }
        frontier = next_frontier;
    }
    sample
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    /// Snowball sample, no expert differentiation.
    M1,
    /// Snowball sample plus all expert saplings, uniform preferences.
    M2,
    /// M2's saplings with boosted expert preferences.
    M3,
}

impl Strategy {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "m1" => Ok(Self::M1),
            "m2" => Ok(Self::M2),
            "m3" => Ok(Self::M3),
            other => Err(FolkError::InvalidInput(format!("unknown strategy `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::M1 => "m1",
            Self::M2 => "m2",
            Self::M3 => "m3",
        }
    }
}

/// The sapling set a strategy operates on: M1 takes the snowball sample
/// as-is; M2 and M3 add every sapling owned by an expert.
pub fn strategy_sapling_ids(
    corpus: &Corpus,
    sample: &SnowballSample,
    strategy: Strategy,
    experts: &BTreeSet<UserId>,
) -> Vec<SaplingId> {
    let mut ids: BTreeSet<SaplingId> = sample.sapling_ids().into_iter().collect();
    if strategy != Strategy::M1 {
        for user in experts {
            for sapling in corpus.user_saplings(user) {
                ids.insert(sapling.sapling_id.clone());
            }
        }
    }
    ids.into_iter().collect()
}

/// Dense-indexed view of a sapling subset, ready for the similarity matrix
/// and message passing. Order is deterministic: saplings by id, nodes in
/// breadth-first order within each sapling.
pub struct LearnInput<'a> {
    pub nodes: Vec<&'a SaplingNode>,
    pub structure: RapStructure,
    pub meta: Vec<NodeMeta>,
    pub expert_indices: HashSet<usize>,
}

pub fn assemble_input<'a>(corpus: &'a Corpus, sapling_ids: &[SaplingId]) -> LearnInput<'a> {
    let mut nodes: Vec<&SaplingNode> = Vec::new();
    let mut meta: Vec<NodeMeta> = Vec::new();
    let mut parent: Vec<Option<usize>> = Vec::new();
    let mut expert_indices: HashSet<usize> = HashSet::new();
    for sid in sapling_ids {
        let sapling = &corpus.saplings[sid];
        let mut parent_nid: HashMap<NodeId, NodeId> = HashMap::new();
        for node in sapling.nodes.values() {
            for child in &node.children {
                parent_nid.insert(*child, node.node_id);
            }
        }
        let mut dense: HashMap<NodeId, usize> = HashMap::new();
        for nid in sapling.bfs_order() {
            let node = &sapling.nodes[&nid];
            let idx = nodes.len();
            dense.insert(nid, idx);
            nodes.push(node);
            meta.push(NodeMeta {
                label: node.name.clone(),
                user: node.owner.clone(),
                sapling: sid.clone(),
                node: nid,
                is_expert: node.is_expert_node,
            });
            parent.push(parent_nid.get(&nid).map(|p| dense[p]));
            if node.is_expert_node {
                expert_indices.insert(idx);
            }
        }
    }
    LearnInput {
        nodes,
        structure: RapStructure { parent },
        meta,
        expert_indices,
    }
}

/// Build the similarity matrix for an input with the default top-k and
/// divisor, and assign preferences. An input with no candidate pairs keeps
/// all preferences at zero (everything stays a singleton).
pub fn prepare_matrix(
    input: &LearnInput,
    preference: PreferenceStrategy,
) -> Result<SimilarityMatrix> {
    let mut matrix = build_matrix(&input.nodes, DEFAULT_TOP_K, DEFAULT_DIVISOR);
    match assign_preferences(&mut matrix, preference, &input.expert_indices) {
        Ok(()) | Err(FolkError::EmptyMatrix) => Ok(matrix),
        Err(e) => Err(e),
    }
}

/// Run message passing over a prepared input and assemble the folksonomy.
pub fn learn(
    input: &LearnInput,
    preference: PreferenceStrategy,
    config: &RapConfig,
) -> Result<(Folksonomy, RapDiagnostics)> {
    let matrix = prepare_matrix(input, preference)?;
    let (assignment, diagnostics) = rap_run(&matrix, &input.structure, config)?;
    let folksonomy = assemble_folksonomy(&assignment, &input.structure, &input.meta)?;
    Ok((folksonomy, diagnostics))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrategyReport {
    pub strategy: Strategy,
    /// Stemmed seed term.
    pub seed: String,
    pub sapling_ids: Vec<SaplingId>,
    pub folksonomy: Folksonomy,
    pub diagnostics: RapDiagnostics,
    /// Depth of the most popular tree.
    pub depth: usize,
    /// Cluster count of the most popular tree.
    pub node_count: usize,
    /// Percentage of the most popular tree's member nodes owned by experts.
    pub pct_expert: f64,
}

/// End-to-end strategy run: snowball, select saplings, learn, summarize.
pub fn run_strategy(
    corpus: &Corpus,
    seed: &str,
    strategy: Strategy,
    experts: &BTreeSet<UserId>,
    config: &RapConfig,
) -> Result<StrategyReport> {
    let mut corpus = corpus.clone();
    corpus.mark_expert_nodes(&experts.iter().cloned().collect());
    let sample = snowball(&corpus, seed, DEFAULT_MAX_ROUNDS);
    let sapling_ids = strategy_sapling_ids(&corpus, &sample, strategy, experts);
    let input = assemble_input(&corpus, &sapling_ids);
    let preference = match strategy {
        Strategy::M1 | Strategy::M2 => PreferenceStrategy::uniform(),
        Strategy::M3 => PreferenceStrategy::expert_boosted(DEFAULT_EXPERT_MULTIPLIER),
    };
    let (folksonomy, diagnostics) = learn(&input, preference, config)?;

    let (depth, node_count, pct_expert) = match folksonomy.most_popular() {
        Some(tree) => {
            let (total, expert) = count_members(&tree.root);
            let pct = if total == 0 {
                0.0
            } else {
                100.0 * expert as f64 / total as f64
            };
            (tree.root.depth(), tree.root.node_count(), pct)
        }
        None => (0, 0, 0.0),
    };
    Ok(StrategyReport {
        strategy,
        seed: sample.seed,
        sapling_ids,
        folksonomy,
        diagnostics,
        depth,
        node_count,
        pct_expert,
    })
}

fn count_members(node: &crate::rap::FolkNode) -> (usize, usize) {
    let mut total = node.members.len();
    let mut expert = node.members.iter().filter(|m| m.is_expert).count();
    for child in &node.children {
        let (t, e) = count_members(child);
        total += t;
        expert += e;
    }
    (total, expert)
}

/// JSON record that makes a run reproducible byte-for-byte.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub seed_term: Option<String>,
    pub strategy: Option<String>,
    pub rng_seed: Option<u64>,
    pub rap: RapConfig,
    pub top_k: usize,
    pub divisor: f64,
    pub expert_multiplier: f64,
    pub threads: Option<usize>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            seed_term: None,
            strategy: None,
            rng_seed: None,
            rap: RapConfig::default(),
            top_k: DEFAULT_TOP_K,
            divisor: DEFAULT_DIVISOR,
            expert_multiplier: DEFAULT_EXPERT_MULTIPLIER,
            threads: None,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }
}

// ---------------------------------------------------------------------------
// Synthetic corpus generation
// ---------------------------------------------------------------------------

/// Parameters for the synthetic corpus generator. Experts emit deep
/// subtrees faithful to the ground truth; novices emit shallow saplings
/// with vague roots, level-skips, and wrong edges at the noise rate.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub ground_truth: ReferenceTaxonomy,
    /// Tag vocabulary per (stemmed) concept; derived automatically for
    /// concepts not listed.
    pub tag_vocab: BTreeMap<String, Vec<String>>,
    pub num_experts: usize,
    pub num_novices: usize,
    /// Minimum depth of expert saplings (root = 1).
    pub expert_min_depth: u32,
    /// Maximum depth of novice saplings.
    pub novice_max_depth: u32,
    /// Probability a novice sapling gets a vague root ("misc", "stuff").
    pub vagueness_rate: f64,
    /// Probability a novice edge is wrong (a level-skipped grandchild).
    pub noise_rate: f64,
    /// Probability a novice sapling is broad (many children) rather than
    /// small.
    pub broad_rate: f64,
    pub rng_seed: u64,
}

/// The planted 30-concept wildlife taxonomy used by the default spec:
/// depth 4, fan-out 2-4 per level.
pub fn planted_taxonomy() -> ReferenceTaxonomy {
    const EDGES: &[(&str, &str)] = &[
        ("wildlife", "mammals"),
        ("wildlife", "birds"),
        ("wildlife", "reptiles"),
        ("wildlife", "insects"),
        ("mammals", "felines"),
        ("mammals", "canines"),
        ("birds", "raptors"),
        ("birds", "songbirds"),
        ("reptiles", "snakes"),
        ("reptiles", "lizards"),
        ("insects", "beetles"),
        ("insects", "butterflies"),
        ("felines", "lion"),
        ("felines", "tiger"),
        ("felines", "leopard"),
        ("canines", "wolf"),
        ("canines", "fox"),
        ("raptors", "eagle"),
        ("raptors", "hawk"),
        ("songbirds", "sparrow"),
        ("songbirds", "finch"),
        ("snakes", "cobra"),
        ("snakes", "python"),
        ("lizards", "gecko"),
        ("lizards", "iguana"),
        ("beetles", "ladybug"),
        ("beetles", "weevil"),
        ("butterflies", "monarch"),
        ("butterflies", "skipper"),
    ];
    let text: String = EDGES
        .iter()
        .map(|(p, c)| format!("{p}\t{c}\n"))
        .collect();
    ReferenceTaxonomy::from_edge_text(&text).expect("static taxonomy parses")
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            ground_truth: planted_taxonomy(),
            tag_vocab: BTreeMap::new(),
            num_experts: 10,
            num_novices: 40,
            expert_min_depth: 3,
            novice_max_depth: 2,
            vagueness_rate: 0.2,
            noise_rate: 0.2,
            broad_rate: 0.5,
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    /// Corpus serialized in the ingestion wire format.
    pub corpus_json: String,
    pub corpus: Corpus,
    /// user_id -> is_expert ground truth.
    pub labels: BTreeMap<String, bool>,
    pub reference: ReferenceTaxonomy,
    /// Tab-separated edge list matching `reference`.
    pub reference_text: String,
    /// Stemmed root concept; the natural snowball seed.
    pub seed_term: String,
}

impl SyntheticData {
    /// `user_id,label` CSV with header.
    pub fn labels_csv(&self) -> String {
        let mut out = String::from("user_id,label\n");
        for (user, &expert) in &self.labels {
            out.push_str(user);
            out.push(',');
            out.push_str(if expert { "expert" } else { "novice" });
            out.push('\n');
        }
        out
    }
}

/// Deterministic view of the ground truth tree.
struct Truth {
    root: String,
    children: BTreeMap<String, Vec<String>>,
    max_depth: u32,
    /// All concepts, breadth-first from the root.
    concepts: Vec<String>,
}

impl Truth {
    fn build(reference: &ReferenceTaxonomy) -> Result<Self> {
        let roots = reference.roots();
        if roots.len() != 1 {
            return Err(FolkError::InvalidInput(format!(
                "ground truth must have exactly one root, found {}",
                roots.len()
            )));
        }
        let root = roots.into_iter().next().unwrap();
        let mut children: BTreeMap<String, Vec<String>> = BTreeMap::new();
        let mut parent: BTreeMap<String, String> = BTreeMap::new();
        for (p, c) in &reference.edges {
            children.entry(p.clone()).or_default().push(c.clone());
            if parent.insert(c.clone(), p.clone()).is_some() {
                return Err(FolkError::InvalidInput(format!(
                    "ground truth is not a tree: `{c}` has two parents"
                )));
            }
        }
        let mut depth: BTreeMap<String, u32> = BTreeMap::new();
        let mut concepts: Vec<String> = Vec::new();
        let mut queue = std::collections::VecDeque::from([(root.clone(), 1u32)]);
        while let Some((name, d)) = queue.pop_front() {
            if depth.insert(name.clone(), d).is_some() {
                return Err(FolkError::InvalidInput(
                    "ground truth contains a cycle".to_string(),
                ));
            }
            for child in children.get(&name).cloned().unwrap_or_default() {
                queue.push_back((child, d + 1));
            }
            concepts.push(name);
        }
        let max_depth = depth.values().copied().max().unwrap_or(1);
        Ok(Self {
            root,
            children,
            max_depth,
            concepts,
        })
    }

    fn children_of(&self, name: &str) -> &[String] {
        self.children.get(name).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Tag base counts halve with depth so every node's own tags stay inside
/// its ancestors' top-40 propagated tags.
fn base_count(depth: u32, max_depth: u32) -> u64 {
    1u64 << (max_depth + 1 - depth.min(max_depth))
}

fn default_vocab(concept: &str) -> Vec<String> {
    let compact: String = concept.chars().filter(|c| c.is_alphanumeric()).collect();
    let mut vocab = vec![compact.clone()];
    for i in 1..(CORE_TAGS + DIALECT_WORDS + FREE_WORDS) {
        vocab.push(format!("{compact}{i}"));
    }
    vocab
}

/// First `CORE_TAGS` vocabulary words are the concept's core tags that
/// every structured tagger applies.
const CORE_TAGS: usize = 3;

/// After the cores, `DIALECT_WORDS` community dialect words follow: each
/// expert consistently uses one of them, and every structured root copies
/// one community's dialect.
const DIALECT_WORDS: usize = 10;

/// The remaining `FREE_WORDS` are idiosyncratic vocabulary that only
/// unstructured child nodes draw from. The pool is small enough that
/// same-concept children of different users usually share a word, which
/// keeps their (propagated) roots strongly similar to each other.
const FREE_WORDS: usize = 9;

/// Probability a novice child node tags like a sapling root (cores plus
/// a dialect word) rather than idiosyncratically.
const TAG_CONFORMITY: f64 = 0.05;

/// Of the wrong children drawn at the noise rate, the share that are
/// cross-branch leaf misfilings rather than level-skips. Misfilings are
/// the placements that actually poison cotopies, so this share sets the
/// total damage budget.
const LEAF_MISFILE_SHARE: f64 = 0.04;

/// How a node's tags relate to the concept's vocabulary. The recipes are
/// tuned against the similarity cap s = min(1, common/4): structured
/// nodes (experts, roots) of one concept score 0.75 against each other
/// and exactly 1.0 when they share a dialect, so each root has one
/// natural expert anchor; idiosyncratic children score 0.25 against each
/// other and nothing against structured nodes, keeping the stored mean
/// between the 0.5 fragmentation bound and the 0.75 attachment bound.
#[derive(Clone, Copy, PartialEq)]
enum TagStyle {
    /// Cores plus the expert's own dialect word, consistent across
    /// concepts.
    Expert(usize),
    /// Cores plus a uniformly chosen community dialect word.
    Root,
    /// Two free-pool words: idiosyncratic.
    Semi,
}

struct Generator<'a> {
    spec: &'a SyntheticSpec,
    truth: Truth,
    rng: ChaCha8Rng,
}

impl Generator<'_> {
    fn vocab(&self, concept: &str) -> Vec<String> {
        self.spec
            .tag_vocab
            .get(concept)
            .cloned()
            .unwrap_or_else(|| default_vocab(concept))
    }

    /// Tags for a node with depth-scaled counts, chosen per the style.
    fn tags_for(&mut self, concept: &str, depth: u32, style: TagStyle) -> BTreeMap<String, u64> {
        let vocab = self.vocab(concept);
        let core = CORE_TAGS.min(vocab.len());
        let dialects = &vocab[core..(core + DIALECT_WORDS).min(vocab.len())];
        let free = &vocab[(core + DIALECT_WORDS).min(vocab.len())..];
        let mut chosen: Vec<String> = match style {
            TagStyle::Expert(dialect) => {
                let mut t = vocab[..core].to_vec();
                if !dialects.is_empty() {
                    t.push(dialects[dialect % dialects.len()].clone());
                }
                t
            }
            TagStyle::Root => {
                let mut t = vocab[..core].to_vec();
                if let Some(d) = pick(&mut self.rng, dialects) {
                    t.push(d);
                }
                t
            }
            TagStyle::Semi => {
                let mut extras: Vec<String> = free.to_vec();
                for i in 0..3.min(extras.len()) {
                    let j = self.rng.gen_range(i..extras.len());
                    extras.swap(i, j);
                }
                extras.truncate(3);
                extras
            }
        };
        chosen.sort();
        chosen.dedup();
        let base = base_count(depth, self.truth.max_depth);
        chosen
            .into_iter()
            .map(|t| (t, base + self.rng.gen_range(0..=1)))
            .collect()
    }

    /// A deep sapling faithful to the ground truth, rooted at `root`.
    /// Experts file the complete subtree: their saplings are exhaustive
    /// as well as correct, so any one expert skeleton can anchor the
    /// merged tree without holes for novice noise to fill.
    fn expert_sapling(&mut self, sapling_id: &str, root: &str, dialect: usize) -> RawSapling {
        let mut kept: Vec<(String, u32, Option<usize>)> = vec![(root.to_string(), 1, None)];
        let mut frontier: Vec<(String, usize)> = self
            .truth
            .children_of(root)
            .iter()
            .map(|c| (c.clone(), 0usize))
            .collect();
        while let Some((name, parent_idx)) = frontier.pop() {
            let depth = kept[parent_idx].1 + 1;
            let idx = kept.len();
            kept.push((name.clone(), depth, Some(parent_idx)));
            for child in self.truth.children_of(&name) {
                frontier.push((child.clone(), idx));
            }
        }

        let mut nodes: Vec<RawNode> = Vec::new();
        let mut children: Vec<Vec<u64>> = vec![Vec::new(); kept.len()];
        for (i, (name, depth, parent)) in kept.iter().enumerate() {
            if let Some(p) = parent {
                children[*p].push(i as u64);
            }
            nodes.push(RawNode {
                id: i as u64,
                name: name.clone(),
                tags: self.tags_for(name, *depth, TagStyle::Expert(dialect)),
                children: Vec::new(),
            });
        }
        for (node, kids) in nodes.iter_mut().zip(children) {
            node.children = kids;
        }
        RawSapling {
            sapling_id: sapling_id.to_string(),
            nodes,
            root: 0,
        }
    }

    /// Concepts with no children: safe filler for vague saplings, since no
    /// sapling is ever rooted at a leaf.
    fn leaves(&self) -> Vec<String> {
        self.truth
            .concepts
            .iter()
            .filter(|c| self.truth.children_of(c).is_empty())
            .cloned()
            .collect()
    }

    /// Pick a wrong child for `root`: occasionally a uniformly random
    /// leaf (a misfiling), otherwise a level-skipped grandchild (a
    /// granularity error; a true child when the root has none, which the
    /// caller deduplicates away). Misfilings are diffuse on purpose: each
    /// wrong (parent, leaf) placement is rare, so how much of the damage
    /// lands in any one merged tree depends on which saplings joined it.
    /// Inner concepts never appear as wrong children — a mid-level name
    /// under the wrong parent would invite whole saplings rooted at that
    /// name to merge beneath it, nesting the taxonomy inside itself.
    fn wrong_child(&mut self, root: &str) -> String {
        if self.rng.gen_bool(LEAF_MISFILE_SHARE) {
            let leaves = self.leaves();
            if let Some(l) = pick(&mut self.rng, &leaves) {
                return l;
            }
        }
        let grandchildren: Vec<String> = self
            .truth
            .children_of(root)
            .iter()
            .flat_map(|c| self.truth.children_of(c).iter().cloned())
            .collect();
        pick(&mut self.rng, &grandchildren)
            .or_else(|| pick(&mut self.rng, self.truth.children_of(root).to_vec().as_slice()))
            .unwrap_or_else(|| root.to_string())
    }

    /// A shallow novice sapling: vague or mid-level root, children drawn
    /// from true children with wrong edges at the noise rate.
    fn novice_sapling(&mut self, sapling_id: &str) -> RawSapling {
        let vague = self.rng.gen_bool(self.spec.vagueness_rate);
        let root_name = if vague {
            if self.rng.gen_bool(0.5) { "misc" } else { "stuff" }.to_string()
        } else {
            // Top-level branches only: novices organize around the few
            // prominent categories, concentrating many shallow saplings
            // on each.
            let branches: Vec<String> = self
                .truth
                .children_of(&self.truth.root)
                .iter()
                .filter(|c| !self.truth.children_of(c).is_empty())
                .cloned()
                .collect();
            pick(&mut self.rng, &branches).unwrap()
        };
        let broad = self.rng.gen_bool(self.spec.broad_rate);
        let want = if self.spec.novice_max_depth < 2 {
            0
        } else if broad {
            self.rng.gen_range(10..=14)
        } else {
            self.rng.gen_range(5..=8)
        };
        // Broad saplings flatten two levels under the root (the Fig. 1(b)
        // granularity failure): grandchildren sit next to children.
        let mut pool: Vec<String> = self.truth.children_of(&root_name).to_vec();
        if broad {
            for c in self.truth.children_of(&root_name).to_vec() {
                pool.extend(self.truth.children_of(&c).iter().cloned());
            }
        }
        let mut child_names: Vec<String> = Vec::new();
        let mut seen: BTreeSet<String> = BTreeSet::from([root_name.clone()]);
        for _ in 0..want {
            let candidate = if vague {
                // Vague users file leaves under a junk root; inner concepts
                // are excluded for the same nesting reason as wrong_child.
                let leaves = self.leaves();
                pick(&mut self.rng, &leaves).unwrap()
            } else if self.rng.gen_bool(self.spec.noise_rate) {
                self.wrong_child(&root_name)
            } else {
                match pick(&mut self.rng, &pool) {
                    Some(c) => c,
                    None => self.wrong_child(&root_name),
                }
            };
            if seen.insert(candidate.clone()) {
                child_names.push(candidate);
            }
        }

        // Roots anchor the sapling in the merged tree, so they always use
        // the root style; children conform only at TAG_CONFORMITY.
        let mut nodes = vec![RawNode {
            id: 0,
            name: root_name.clone(),
            tags: self.tags_for(&root_name, 1, TagStyle::Root),
            children: (1..=child_names.len() as u64).collect(),
        }];
        for (i, name) in child_names.iter().enumerate() {
            let style = if self.rng.gen_bool(TAG_CONFORMITY) {
                TagStyle::Root
            } else {
                TagStyle::Semi
            };
            nodes.push(RawNode {
                id: i as u64 + 1,
                name: name.clone(),
                tags: self.tags_for(name, 2, style),
                children: Vec::new(),
            });
        }
        RawSapling {
            sapling_id: sapling_id.to_string(),
            nodes,
            root: 0,
        }
    }
}

fn pick<T: Clone>(rng: &mut ChaCha8Rng, items: &[T]) -> Option<T> {
    items.choose(rng).cloned()
}

/// Generate a synthetic corpus, ground-truth labels, and the reference
/// taxonomy. Deterministic given the spec's rng seed.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    let truth = Truth::build(&spec.ground_truth)?;
    if spec.expert_min_depth > truth.max_depth {
        return Err(FolkError::InvalidInput(format!(
            "expert_min_depth {} exceeds ground-truth depth {}",
            spec.expert_min_depth, truth.max_depth
        )));
    }
    if spec.novice_max_depth > truth.max_depth {
        return Err(FolkError::InvalidInput(format!(
            "novice_max_depth {} exceeds ground-truth depth {}",
            spec.novice_max_depth, truth.max_depth
        )));
    }
    if spec.expert_min_depth < 3 && spec.num_experts > 0 {
        return Err(FolkError::InvalidInput(
            "expert_min_depth must be at least 3".to_string(),
        ));
    }
    let seed_term = truth.root.clone();
    let mut generator = Generator {
        spec,
        truth,
        rng: ChaCha8Rng::seed_from_u64(spec.rng_seed),
    };
    let mut users: Vec<RawUser> = Vec::new();
    let mut labels: BTreeMap<String, bool> = BTreeMap::new();

    for e in 0..spec.num_experts {
        let user_id = format!("expert{:02}", e + 1);
        let root_concept = generator.truth.root.clone();
        // One deep sapling per expert: experts are thorough, not prolific,
        // and must stay a small minority of the corpus nodes.
        let first = generator.expert_sapling(&format!("{user_id}-s1"), &root_concept, e as usize);
        users.push(RawUser {
            user_id: user_id.clone(),
            saplings: vec![first],
        });
        labels.insert(user_id, true);
    }
    for n in 0..spec.num_novices {
        let user_id = format!("novice{:02}", n + 1);
        let saplings = (1..=3)
            .map(|s| generator.novice_sapling(&format!("{user_id}-s{s}")))
            .collect();
        users.push(RawUser {
            user_id: user_id.clone(),
            saplings,
        });
        labels.insert(user_id, false);
    }

    let mut corpus_json = serde_json::to_string_pretty(&users)?;
    corpus_json.push('\n');
    let corpus = ingest_saplings_str(&corpus_json)?;
    let mut reference_text = String::from("# synthetic ground truth\n");
    for (p, c) in &spec.ground_truth.edges {
        reference_text.push_str(&format!("{p}\t{c}\n"));
    }
    Ok(SyntheticData {
        corpus_json,
        corpus,
        labels,
        reference: spec.ground_truth.clone(),
        reference_text,
        seed_term,
    })
}
