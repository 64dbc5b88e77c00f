//! Lexical Precision and Taxonomic Overlap, tree reduction for human
//! review, and the robustness sweeps over preference values and
//! expert/novice swaps.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotation::{Corpus, ReferenceTaxonomy, UserId};
use crate::error::{FolkError, Result};
use crate::pipeline::{
    assemble_input, snowball, strategy_sapling_ids, StrategyReport, Strategy,
    DEFAULT_MAX_ROUNDS,
};
use crate::rap::{assemble_folksonomy, run as rap_run, FolkNode, RapConfig};
use crate::similarity::PreferenceStrategy;

/// One Table-III-style evaluation row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: String,
    pub strategy: String,
    pub depth: usize,
    pub lp: f64,
    pub to: f64,
    pub node_count: usize,
    pub pct_expert: f64,
}

impl EvalReport {
    pub fn csv_header() -> &'static str {
        "seed,strategy,depth,lp,to,node_count,pct_expert"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.seed, self.strategy, self.depth, self.lp, self.to, self.node_count,
            self.pct_expert
        )
    }
}

/// Fraction of the learned tree's distinct labels that appear in the
/// reference vocabulary.
pub fn lexical_precision(learned: &FolkNode, reference: &ReferenceTaxonomy) -> Result<f64> {
    let labels = learned.labels();
    if labels.is_empty() {
        return Err(FolkError::EmptyFolksonomy);
    }
    let names = reference.names();
    let hits = labels.iter().filter(|l| names.contains(*l)).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Semantic cotopy per label of a learned tree: ancestors, descendants,
/// and the term itself. Duplicate labels contribute the union of their
/// occurrences' cotopies.
fn tree_cotopies(root: &FolkNode) -> HashMap<String, BTreeSet<String>> {
    fn descendants(node: &FolkNode, out: &mut BTreeSet<String>) {
        out.insert(node.label.clone());
        for child in &node.children {
            descendants(child, out);
        }
    }
    fn walk(
        node: &FolkNode,
        ancestors: &mut Vec<String>,
        cotopies: &mut HashMap<String, BTreeSet<String>>,
    ) {
        let entry = cotopies.entry(node.label.clone()).or_default();
        entry.extend(ancestors.iter().cloned());
        let mut below = BTreeSet::new();
        descendants(node, &mut below);
        let entry = cotopies.get_mut(&node.label).unwrap();
        entry.extend(below);
        ancestors.push(node.label.clone());
        for child in &node.children {
            walk(child, ancestors, cotopies);
        }
        ancestors.pop();
    }
    let mut cotopies = HashMap::new();
    walk(root, &mut Vec::new(), &mut cotopies);
    cotopies
}

/// Semantic cotopy per name of the reference taxonomy (reachability over
/// the edge set in both directions, plus the term itself).
fn reference_cotopies(reference: &ReferenceTaxonomy) -> HashMap<String, BTreeSet<String>> {
    let mut children: HashMap<&str, Vec<&str>> = HashMap::new();
    let mut parents: HashMap<&str, Vec<&str>> = HashMap::new();
    for (p, c) in &reference.edges {
        children.entry(p).or_default().push(c);
        parents.entry(c).or_default().push(p);
    }
    let names = reference.names();
    let mut cotopies = HashMap::new();
    for name in &names {
        let mut set = BTreeSet::from([name.clone()]);
        for adjacency in [&children, &parents] {
            let mut stack = vec![name.as_str()];
            let mut seen: BTreeSet<&str> = BTreeSet::from([name.as_str()]);
            while let Some(cur) = stack.pop() {
                for &next in adjacency.get(cur).map(Vec::as_slice).unwrap_or(&[]) {
                    if seen.insert(next) {
                        set.insert(next.to_string());
                        stack.push(next);
                    }
                }
            }
        }
        cotopies.insert(name.clone(), set);
    }
    cotopies
}

fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.union(b).count();
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Mean Jaccard overlap of semantic cotopies over the shared vocabulary,
/// with each cotopy restricted to the shared vocabulary.
pub fn taxonomic_overlap(learned: &FolkNode, reference: &ReferenceTaxonomy) -> Result<f64> {
    let learned_cotopies = tree_cotopies(learned);
    let reference_cotopies = reference_cotopies(reference);
    let shared: BTreeSet<String> = learned_cotopies
        .keys()
        .filter(|l| reference_cotopies.contains_key(*l))
        .cloned()
        .collect();
    if shared.is_empty() {
        return Err(FolkError::NoSharedTerms);
    }
    let mut total = 0.0;
    for term in &shared {
        let sc_learned: BTreeSet<String> = learned_cotopies[term]
            .intersection(&shared)
            .cloned()
            .collect();
        let sc_reference: BTreeSet<String> = reference_cotopies[term]
            .intersection(&shared)
            .cloned()
            .collect();
        total += jaccard(&sc_learned, &sc_reference);
    }
    Ok(total / shared.len() as f64)
}

/// Secondary TO variant: mean over all learned labels; labels absent from
/// the reference contribute zero overlap.
pub fn taxonomic_overlap_all_learned(
    learned: &FolkNode,
    reference: &ReferenceTaxonomy,
) -> Result<f64> {
    let learned_cotopies = tree_cotopies(learned);
    if learned_cotopies.is_empty() {
        return Err(FolkError::EmptyFolksonomy);
    }
    let reference_cotopies = reference_cotopies(reference);
    let shared: BTreeSet<String> = learned_cotopies
        .keys()
        .filter(|l| reference_cotopies.contains_key(*l))
        .cloned()
        .collect();
    let mut total = 0.0;
    for (term, cotopy) in &learned_cotopies {
        if let Some(reference_cotopy) = reference_cotopies.get(term) {
            let sc_learned: BTreeSet<String> = cotopy.intersection(&shared).cloned().collect();
            let sc_reference: BTreeSet<String> =
                reference_cotopy.intersection(&shared).cloned().collect();
            total += jaccard(&sc_learned, &sc_reference);
        }
    }
    Ok(total / learned_cotopies.len() as f64)
}

/// Evaluate a strategy run against the reference taxonomy.
pub fn evaluate_report(
    report: &StrategyReport,
    reference: &ReferenceTaxonomy,
) -> Result<EvalReport> {
    let tree = report
        .folksonomy
        .most_popular()
        .ok_or(FolkError::EmptyFolksonomy)?;
    let lp = lexical_precision(&tree.root, reference)?;
    let to = match taxonomic_overlap(&tree.root, reference) {
        Ok(v) => v,
        Err(FolkError::NoSharedTerms) => 0.0,
        Err(e) => return Err(e),
    };
    Ok(EvalReport {
        seed: report.seed.clone(),
        strategy: report.strategy.name().to_string(),
        depth: report.depth,
        lp,
        to,
        node_count: report.node_count,
        pct_expert: report.pct_expert,
    })
}

// ---------------------------------------------------------------------------
// Tree reduction for human review
// ---------------------------------------------------------------------------

/// A subtree slated for manual comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReviewItem {
    pub question_id: usize,
    /// Indented text rendering of the subtree.
    pub rendered: String,
    /// Which input tree the segment came from.
    pub source: String,
}

fn leaf_signatures(node: &FolkNode, path: &mut Vec<String>, out: &mut BTreeMap<Vec<String>, usize>) {
    if node.children.is_empty() {
        let mut key = path.clone();
        key.push(node.label.clone());
        *out.entry(key).or_insert(0) += 1;
        return;
    }
    path.push(node.label.clone());
    for child in &node.children {
        leaf_signatures(child, path, out);
    }
    path.pop();
}

/// Remove up to `budget[signature]` leaves matching the shared signatures.
/// Returns true if anything was removed. The root is never removed.
fn remove_shared_leaves(
    node: &mut FolkNode,
    path: &mut Vec<String>,
    budget: &mut BTreeMap<Vec<String>, usize>,
) -> bool {
    path.push(node.label.clone());
    let mut removed = false;
    let mut kept = Vec::new();
    for mut child in node.children.drain(..) {
        let is_leaf = child.children.is_empty();
        if is_leaf {
            let mut key = path.clone();
            key.push(child.label.clone());
            if let Some(b) = budget.get_mut(&key) {
                if *b > 0 {
                    *b -= 1;
                    removed = true;
                    continue;
                }
            }
            kept.push(child);
        } else {
            removed |= remove_shared_leaves(&mut child, path, budget);
            kept.push(child);
        }
    }
    node.children = kept;
    path.pop();
    removed
}

/// Split any node with more than `max_children` children: the first
/// `max_children` child subtrees stay attached, the rest become separate
/// segments (recursively limited the same way).
fn segment(mut node: FolkNode, max_children: usize, segments: &mut Vec<FolkNode>) -> FolkNode {
    let children = std::mem::take(&mut node.children);
    for (i, child) in children.into_iter().enumerate() {
        let child = segment(child, max_children, segments);
        if i < max_children {
            node.children.push(child);
        } else {
            segments.push(child);
        }
    }
    node
}

/// Reduce a pair of trees for manual review: iteratively delete leaves
/// that have the same name and the same ancestor path in both trees, then
/// segment what remains into subtrees with at most `max_children` children
/// at any level.
pub fn reduce_tree_pair(
    t1: &FolkNode,
    t2: &FolkNode,
    max_children: usize,
) -> (FolkNode, FolkNode, Vec<ReviewItem>) {
    let mut a = t1.clone();
    let mut b = t2.clone();
    loop {
        let mut sig_a = BTreeMap::new();
        let mut sig_b = BTreeMap::new();
        leaf_signatures(&a, &mut Vec::new(), &mut sig_a);
        leaf_signatures(&b, &mut Vec::new(), &mut sig_b);
        // Shared budget: min count per (ancestor path, name) signature.
        let mut budget: BTreeMap<Vec<String>, usize> = BTreeMap::new();
        for (key, &count_a) in &sig_a {
            if let Some(&count_b) = sig_b.get(key) {
                budget.insert(key.clone(), count_a.min(count_b));
            }
        }
        if budget.is_empty() {
            break;
        }
        let mut budget_b = budget.clone();
        let removed_a = remove_shared_leaves(&mut a, &mut Vec::new(), &mut budget);
        let removed_b = remove_shared_leaves(&mut b, &mut Vec::new(), &mut budget_b);
        if !removed_a && !removed_b {
            break;
        }
    }
    let mut items = Vec::new();
    let mut question_id = 0;
    for (tree, source) in [(&a, "t1"), (&b, "t2")] {
        let mut segments = Vec::new();
        let trimmed = segment(tree.clone(), max_children, &mut segments);
        let mut all = vec![trimmed];
        all.extend(segments);
        for seg in &all {
            let mut rendered = String::new();
            seg.render_indented(&mut rendered, 0);
            items.push(ReviewItem {
                question_id,
                rendered,
                source: source.to_string(),
            });
            question_id += 1;
        }
    }
    (a, b, items)
}

// ---------------------------------------------------------------------------
// Robustness sweeps
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    PreferenceMultiplier,
    SwapPercent,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: SweepAxis,
    /// (x, TO) points, x strictly increasing.
    pub points: Vec<(f64, f64)>,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let axis = match self.axis {
            SweepAxis::PreferenceMultiplier => "preference_multiplier",
            SweepAxis::SwapPercent => "swap_percent",
        };
        let mut out = format!("{axis},to\n");
        for (x, to) in &self.points {
            out.push_str(&format!("{x},{to}\n"));
        }
        out
    }
}

fn check_strictly_increasing(xs: &[f64]) -> Result<()> {
    if xs.windows(2).any(|w| w[0] >= w[1]) {
        return Err(FolkError::InvalidInput(
            "sweep axis values must be strictly increasing".to_string(),
        ));
    }
    Ok(())
}

/// Shared per-point runner: build the M2/M3 sapling set, apply the given
/// per-node preference override, learn, and compute TO of the most popular
/// tree.
fn sweep_point(
    corpus: &Corpus,
    seed: &str,
    experts: &BTreeSet<UserId>,
    reference: &ReferenceTaxonomy,
    config: &RapConfig,
    adjust: impl Fn(&mut Vec<f64>, &[usize], &[usize]),
) -> Result<f64> {
    let mut corpus = corpus.clone();
    corpus.mark_expert_nodes(&experts.iter().cloned().collect());
    let sample = snowball(&corpus, seed, DEFAULT_MAX_ROUNDS);
    let ids = strategy_sapling_ids(&corpus, &sample, Strategy::M3, experts);
    let input = assemble_input(&corpus, &ids);
    let mut matrix = crate::pipeline::prepare_matrix(&input, PreferenceStrategy::uniform())?;
    let mut expert_idx: Vec<usize> = input.expert_indices.iter().copied().collect();
    expert_idx.sort_unstable();
    let novice_idx: Vec<usize> = (0..input.nodes.len())
        .filter(|i| !input.expert_indices.contains(i))
        .collect();
    adjust(&mut matrix.preferences, &expert_idx, &novice_idx);
    let (assignment, _) = rap_run(&matrix, &input.structure, config)?;
    let folksonomy = assemble_folksonomy(&assignment, &input.structure, &input.meta)?;
    let tree = folksonomy.most_popular().ok_or(FolkError::EmptyFolksonomy)?;
    match taxonomic_overlap(&tree.root, reference) {
        Ok(v) => Ok(v),
        Err(FolkError::NoSharedTerms) => Ok(0.0),
        Err(e) => Err(e),
    }
}

/// One M3-style run per multiplier x, with expert preferences set to
/// x * mean while novice preferences stay at the mean.
pub fn preference_sweep(
    corpus: &Corpus,
    seed: &str,
    experts: &BTreeSet<UserId>,
    reference: &ReferenceTaxonomy,
    multipliers: &[f64],
    config: &RapConfig,
) -> Result<SweepResult> {
    check_strictly_increasing(multipliers)?;
    let points: Result<Vec<(f64, f64)>> = multipliers
        .par_iter()
        .map(|&x| {
            let to = sweep_point(corpus, seed, experts, reference, config, |prefs, ex, _| {
                for &i in ex {
                    prefs[i] *= x;
                }
            })?;
            Ok((x, to))
        })
        .collect();
    Ok(SweepResult {
        axis: SweepAxis::PreferenceMultiplier,
        points: points?,
    })
}

/// For each percent p, swap the (boosted) preferences of p% of expert
/// nodes with an equal number of novice nodes, chosen by the seeded rng.
pub fn swap_sweep(
    corpus: &Corpus,
    seed: &str,
    experts: &BTreeSet<UserId>,
    reference: &ReferenceTaxonomy,
    percents: &[f64],
    rng_seed: u64,
    config: &RapConfig,
) -> Result<SweepResult> {
    if experts.is_empty() {
        return Err(FolkError::InvalidInput(
            "swap sweep requires a nonempty expert set".to_string(),
        ));
    }
    check_strictly_increasing(percents)?;
    if percents.iter().any(|&p| !(0.0..=100.0).contains(&p)) {
        return Err(FolkError::InvalidInput(
            "swap percents must lie in [0, 100]".to_string(),
        ));
    }
    let points: Result<Vec<(f64, f64)>> = percents
        .par_iter()
        .enumerate()
        .map(|(idx, &p)| {
            // Independent, deterministic stream per point.
            let point_seed = rng_seed ^ (idx as u64 + 1).wrapping_mul(0x9e3779b97f4a7c15);
            let to = sweep_point(corpus, seed, experts, reference, config, |prefs, ex, nov| {
                let mut rng = ChaCha8Rng::seed_from_u64(point_seed);
                for &i in ex {
                    prefs[i] *= crate::pipeline::DEFAULT_EXPERT_MULTIPLIER;
                }
                let k = ((p / 100.0) * ex.len() as f64).round() as usize;
                let k = k.min(ex.len()).min(nov.len());
                let mut ex_pool = ex.to_vec();
                let mut nov_pool = nov.to_vec();
                ex_pool.shuffle(&mut rng);
                nov_pool.shuffle(&mut rng);
                for (&e, &n) in ex_pool.iter().take(k).zip(nov_pool.iter().take(k)) {
                    prefs.swap(e, n);
                }
            })?;
            Ok((p, to))
        })
        .collect();
    Ok(SweepResult {
        axis: SweepAxis::SwapPercent,
        points: points?,
    })
}

/// Paired t statistic for matched samples; returns (t, degrees of freedom).
pub fn paired_t(xs: &[f64], ys: &[f64]) -> Result<(f64, usize)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(FolkError::InvalidInput(
            "paired t-test needs two equal-length samples of size >= 2".to_string(),
        ));
    }
    let n = xs.len() as f64;
    let diffs: Vec<f64> = xs.iter().zip(ys).map(|(a, b)| a - b).collect();
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    let t = if se == 0.0 { 0.0 } else { mean / se };
    Ok((t, xs.len() - 1))
}
