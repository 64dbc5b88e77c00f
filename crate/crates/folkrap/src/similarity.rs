//! Sparse node-similarity matrix and preference assignment.
//!
//! A pair of nodes is a merge candidate only if their stemmed names are
//! equal and they share at least one tag among their top tags. Similarity
//! is `min(1, common_top_tags / divisor)` with divisor 4 and a top-tag
//! cutoff of 40 by default.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::annotation::SaplingNode;
use crate::error::{FolkError, Result};

pub const DEFAULT_TOP_K: usize = 40;
pub const DEFAULT_DIVISOR: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PreferenceMode {
    UniformMean,
    ExpertBoosted,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PreferenceStrategy {
    pub mode: PreferenceMode,
    pub expert_multiplier: f64,
}

impl PreferenceStrategy {
    pub fn uniform() -> Self {
        Self {
            mode: PreferenceMode::UniformMean,
            expert_multiplier: 1.0,
        }
    }

    pub fn expert_boosted(multiplier: f64) -> Self {
        Self {
            mode: PreferenceMode::ExpertBoosted,
            expert_multiplier: multiplier,
        }
    }
}

/// Sparse symmetric similarity matrix over merge-candidate pairs, plus
/// per-node preferences. Indices are dense 0..n over the nodes under
/// consideration; absent entries mean the merge is disallowed.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub n: usize,
    entries: BTreeMap<(usize, usize), f64>,
    pub preferences: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            entries: BTreeMap::new(),
            preferences: vec![0.0; n],
        }
    }

    /// Insert a symmetric off-diagonal entry.
    pub fn insert(&mut self, i: usize, j: usize, s: f64) {
        assert!(i != j, "diagonal entries are preferences");
        self.entries.insert((i, j), s);
        self.entries.insert((j, i), s);
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        if i == j {
            Some(self.preferences[i])
        } else {
            self.entries.get(&(i, j)).copied()
        }
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        i == j || self.entries.contains_key(&(i, j))
    }

    /// Off-diagonal entries in (i, j) order; both orientations present.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.entries.iter().map(|(&(i, j), &s)| (i, j, s))
    }

    pub fn num_pairs(&self) -> usize {
        self.entries.len()
    }

    /// Candidate exemplars for row i, ascending, excluding i itself.
    pub fn candidates_of(&self, i: usize) -> Vec<usize> {
        self.entries
            .range((i, 0)..(i, usize::MAX))
            .map(|(&(_, j), _)| j)
            .collect()
    }

    /// Arithmetic mean of stored off-diagonal entries.
    pub fn mean_similarity(&self) -> Result<f64> {
        if self.entries.is_empty() {
            return Err(FolkError::EmptyMatrix);
        }
        // Each symmetric pair is stored twice; the mean is unaffected.
        Ok(self.entries.values().sum::<f64>() / self.entries.len() as f64)
    }

    /// Debug dump: `i j s` triples (i < j) then `pref j p` lines.
    pub fn dump<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        for (&(i, j), &s) in &self.entries {
            if i < j {
                writeln!(w, "{i} {j} {s}")?;
            }
        }
        for (j, p) in self.preferences.iter().enumerate() {
            writeln!(w, "pref {j} {p}")?;
        }
        Ok(())
    }
}

/// The k most frequent propagated tags of a node, frequency descending,
/// ties broken by name ascending.
pub fn top_tags(node: &SaplingNode, k: usize) -> Vec<String> {
    let mut tags: Vec<(&str, u64)> = node.tags.iter().collect();
    tags.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    tags.into_iter().take(k).map(|(t, _)| t.to_string()).collect()
}

/// Tag-overlap similarity `min(1, t_ij / divisor)` over top-k tags.
pub fn node_similarity(a: &SaplingNode, b: &SaplingNode, k: usize, divisor: f64) -> f64 {
    let tags_a: HashSet<String> = top_tags(a, k).into_iter().collect();
    let tags_b: HashSet<String> = top_tags(b, k).into_iter().collect();
    let common = tags_a.intersection(&tags_b).count();
    (common as f64 / divisor).min(1.0)
}

/// Build the sparse candidate matrix over a node slice. Pair (i, j) is a
/// candidate iff the stemmed names match and the tag similarity is > 0.
pub fn build_matrix(nodes: &[&SaplingNode], k: usize, divisor: f64) -> SimilarityMatrix {
    let mut matrix = SimilarityMatrix::new(nodes.len());
    let mut by_name: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (idx, node) in nodes.iter().enumerate() {
        by_name.entry(node.name.as_str()).or_default().push(idx);
    }
    for group in by_name.values() {
        for (a, &i) in group.iter().enumerate() {
            for &j in &group[a + 1..] {
                // Nodes from the same sapling never merge with each other.
                if nodes[i].sapling_id == nodes[j].sapling_id {
                    continue;
                }
                let s = node_similarity(nodes[i], nodes[j], k, divisor);
                if s > 0.0 {
                    matrix.insert(i, j, s);
                }
            }
        }
    }
    matrix
}

/// Set per-node preferences from the mean of stored similarities; expert
/// nodes get `expert_multiplier` times the mean under `ExpertBoosted`.
pub fn assign_preferences(
    matrix: &mut SimilarityMatrix,
    strategy: PreferenceStrategy,
    expert_nodes: &HashSet<usize>,
) -> Result<()> {
    let mean = matrix.mean_similarity()?;
    for j in 0..matrix.n {
        matrix.preferences[j] = match strategy.mode {
            PreferenceMode::UniformMean => mean,
            PreferenceMode::ExpertBoosted => {
                if expert_nodes.contains(&j) {
                    strategy.expert_multiplier * mean
                } else {
                    mean
                }
            }
        };
    }
    Ok(())
}
