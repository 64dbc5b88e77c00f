//! Shared helpers for the integration suites: independent brute-force
//! oracles for the clustering objective and random instance generators.
//!
//! The oracles deliberately re-implement validity and scoring from the
//! constraint definitions instead of calling the library, so that a bug in
//! the production code cannot hide inside its own reference.

use std::collections::BTreeMap;

use folkrap::rap::RapStructure;
use folkrap::similarity::SimilarityMatrix;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Score an assignment exactly as the objective defines it: preferences for
/// self-exemplars, similarity to the exemplar otherwise. Returns `None` for
/// configurations that break the E or F constraints.
pub fn oracle_score(
    ex: &[usize],
    matrix: &SimilarityMatrix,
    structure: &RapStructure,
) -> Option<f64> {
    let n = ex.len();
    // E: chosen exemplars must be self-exemplars, over candidate pairs only.
    for i in 0..n {
        let e = ex[i];
        if e != i && (ex[e] != e || matrix.get(i, e).is_none()) {
            return None;
        }
    }
    // F: all members of a cluster that have parents must agree on the
    // parent's cluster, the parent cluster must differ from the cluster
    // itself, and the induced cluster graph must be acyclic.
    let mut parent_of: BTreeMap<usize, usize> = BTreeMap::new();
    for i in 0..n {
        if let Some(p) = structure.parent[i] {
            let c = ex[i];
            let pc = ex[p];
            if pc == c {
                return None;
            }
            match parent_of.get(&c) {
                None => {
                    parent_of.insert(c, pc);
                }
                Some(&prev) if prev == pc => {}
                Some(_) => return None,
            }
        }
    }
    for &start in parent_of.keys() {
        let mut cur = start;
        let mut steps = 0;
        while let Some(&next) = parent_of.get(&cur) {
            cur = next;
            steps += 1;
            if steps > parent_of.len() {
                return None;
            }
        }
    }
    let mut total = 0.0;
    for (i, &e) in ex.iter().enumerate() {
        if e == i {
            total += matrix.preferences[i];
        } else {
            total += matrix.get(i, e).unwrap();
        }
    }
    Some(total)
}

/// Exhaustive optimum over every constraint-satisfying configuration.
/// Feasible for the small instances the acceptance suite uses (<= 8 nodes).
pub fn enumerate_optimum(matrix: &SimilarityMatrix, structure: &RapStructure) -> f64 {
    let n = matrix.n;
    let choices: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let mut c = vec![i];
            c.extend(matrix.candidates_of(i));
            c
        })
        .collect();
    let mut ex = vec![0usize; n];
    let mut best = f64::NEG_INFINITY;
    fn recurse(
        depth: usize,
        choices: &[Vec<usize>],
        ex: &mut Vec<usize>,
        matrix: &SimilarityMatrix,
        structure: &RapStructure,
        best: &mut f64,
    ) {
        if depth == choices.len() {
            if let Some(score) = oracle_score(ex, matrix, structure) {
                if score > *best {
                    *best = score;
                }
            }
            return;
        }
        for &c in &choices[depth] {
            ex[depth] = c;
            recurse(depth + 1, choices, ex, matrix, structure, best);
        }
    }
    recurse(0, &choices, &mut ex, matrix, structure, &mut best);
    best
}

/// Flat-instance optimum by enumerating exemplar subsets: every
/// non-exemplar joins its most similar candidate exemplar. With no parent
/// edges the F constraint is vacuous, so this is the plain clustering
/// objective.
pub fn flat_subset_optimum(matrix: &SimilarityMatrix) -> f64 {
    let n = matrix.n;
    let mut best = f64::NEG_INFINITY;
    for mask in 1u32..(1 << n) {
        let exemplars: Vec<usize> = (0..n).filter(|&i| mask & (1 << i) != 0).collect();
        let mut total: f64 = exemplars.iter().map(|&e| matrix.preferences[e]).sum();
        let mut feasible = true;
        for i in 0..n {
            if mask & (1 << i) != 0 {
                continue;
            }
            let mut top: Option<f64> = None;
            for &e in &exemplars {
                if let Some(s) = matrix.get(i, e) {
                    if top.map_or(true, |t| s > t) {
                        top = Some(s);
                    }
                }
            }
            match top {
                Some(s) => total += s,
                None => {
                    feasible = false;
                    break;
                }
            }
        }
        if feasible && total > best {
            best = total;
        }
    }
    best
}

/// A random multi-sapling instance: 2-3 saplings, at most `max_nodes` nodes
/// total, nodes grouped into name classes; candidate pairs connect
/// same-class nodes of different saplings.
pub fn random_instance(rng: &mut ChaCha8Rng, max_nodes: usize) -> (SimilarityMatrix, RapStructure) {
    let num_saplings = rng.gen_range(2..=3);
    let mut parent: Vec<Option<usize>> = Vec::new();
    let mut sapling_of: Vec<usize> = Vec::new();
    let mut class_of: Vec<usize> = Vec::new();
    let num_classes = rng.gen_range(2..=4);
    for s in 0..num_saplings {
        let remaining = max_nodes - parent.len();
        let budget_left = (num_saplings - s - 1) * 2;
        let hi = remaining.saturating_sub(budget_left).clamp(2, 4);
        let size = rng.gen_range(2..=hi.max(2));
        let base = parent.len();
        for k in 0..size {
            if k == 0 {
                parent.push(None);
            } else {
                parent.push(Some(base + rng.gen_range(0..k)));
            }
            sapling_of.push(s);
            class_of.push(rng.gen_range(0..num_classes));
        }
    }
    let n = parent.len();
    let mut matrix = SimilarityMatrix::new(n);
    for i in 0..n {
        for j in (i + 1)..n {
            if sapling_of[i] != sapling_of[j] && class_of[i] == class_of[j] {
                matrix.insert(i, j, rng.gen_range(0.05..=1.0));
            }
        }
    }
    // Guarantee at least one candidate pair so the instance is non-trivial.
    if matrix.num_pairs() == 0 {
        let i = 0;
        let j = sapling_of.iter().position(|&s| s != sapling_of[0]).unwrap();
        matrix.insert(i, j, rng.gen_range(0.05..=1.0));
    }
    matrix.preferences = (0..n).map(|_| rng.gen_range(0.05..=0.9)).collect();
    (matrix, RapStructure { parent })
}

/// A random flat instance (all roots) with dense random candidate pairs.
pub fn random_flat_instance(rng: &mut ChaCha8Rng, n: usize) -> (SimilarityMatrix, RapStructure) {
    let mut matrix = SimilarityMatrix::new(n);
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.gen_bool(0.7) {
                matrix.insert(i, j, rng.gen_range(0.05..=1.0));
            }
        }
    }
    matrix.preferences = (0..n).map(|_| rng.gen_range(0.05..=0.9)).collect();
    (matrix, RapStructure::flat(n))
}
