//! Relational affinity propagation: max-sum message passing on the binary
//! factor graph with row (I), column (E), and single-parent (F) constraints.
//!
//! Six message matrices (beta, eta, alpha, rho, tau, sigma) live on the
//! sparsity pattern of the candidate similarity matrix plus the diagonal.
//! Updates are synchronous (Jacobi) with damping, so a sweep is
//! order-independent and parallelizes with bitwise-identical results.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FolkError, Result};
use crate::similarity::SimilarityMatrix;

/// Stand-in for the max over an empty candidate set; large but finite so
/// arithmetic stays well-defined.
pub const NEG_LARGE: f64 = -1.0e12;

/// Net-similarity sentinel for constraint-violating assignments.
pub const INVALID_NET_SIMILARITY: f64 = f64::NEG_INFINITY;

/// Parent relation over the dense node indices of a similarity matrix.
#[derive(Debug, Clone, Default)]
pub struct RapStructure {
    pub parent: Vec<Option<usize>>,
}

impl RapStructure {
    pub fn flat(n: usize) -> Self {
        Self {
            parent: vec![None; n],
        }
    }

    pub fn is_root(&self, i: usize) -> bool {
        self.parent[i].is_none()
    }

    /// Distance from the root of a node's sapling. Roots are depth 0.
    pub fn depths(&self) -> Vec<usize> {
        let n = self.parent.len();
        let mut depth = vec![0usize; n];
        for i in 0..n {
            let mut d = 0;
            let mut cur = i;
            while let Some(p) = self.parent[cur] {
                d += 1;
                cur = p;
            }
            depth[i] = d;
        }
        depth
    }
}

/// A full (row-constraint-satisfying) exemplar assignment: `ex[i]` is the
/// exemplar node i selects; `ex[i] == i` means i is an exemplar.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentMatrix {
    pub ex: Vec<usize>,
}

impl AssignmentMatrix {
    pub fn exemplars(&self) -> BTreeSet<usize> {
        self.ex
            .iter()
            .enumerate()
            .filter(|&(i, &e)| i == e)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn members_of(&self, exemplar: usize) -> Vec<usize> {
        self.ex
            .iter()
            .enumerate()
            .filter(|&(_, &e)| e == exemplar)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Check the I, E, F constraints and candidate-mask membership.
pub fn is_valid(
    assignment: &AssignmentMatrix,
    matrix: &SimilarityMatrix,
    structure: &RapStructure,
) -> bool {
    let ex = &assignment.ex;
    let n = matrix.n;
    if ex.len() != n {
        return false;
    }
    for i in 0..n {
        let e = ex[i];
        if e >= n {
            return false;
        }
        // E: the chosen exemplar must choose itself; the pair must be a
        // merge candidate.
        if e != i && (ex[e] != e || !matrix.contains(i, e)) {
            return false;
        }
    }
    // F: all child members of a cluster share their parents' exemplar, and
    // no cluster is its own ancestor in the induced cluster parent graph.
    let mut parent_ex: HashMap<usize, usize> = HashMap::new();
    for i in 0..n {
        if let Some(p) = structure.parent[i] {
            let cluster = ex[i];
            let pex = ex[p];
            if pex == cluster {
                return false;
            }
            match parent_ex.get(&cluster) {
                None => {
                    parent_ex.insert(cluster, pex);
                }
                Some(&prev) if prev == pex => {}
                Some(_) => return false,
            }
        }
    }
    for &start in parent_ex.keys() {
        let mut steps = 0usize;
        let mut cur = start;
        while let Some(&next) = parent_ex.get(&cur) {
            cur = next;
            steps += 1;
            if steps > parent_ex.len() {
                return false;
            }
        }
    }
    true
}

/// Net similarity of a configuration: member-to-exemplar similarities plus
/// exemplar preferences; the sentinel for invalid configurations.
pub fn net_similarity(
    assignment: &AssignmentMatrix,
    matrix: &SimilarityMatrix,
    structure: &RapStructure,
) -> f64 {
    if !is_valid(assignment, matrix, structure) {
        return INVALID_NET_SIMILARITY;
    }
    let mut total = 0.0;
    for (i, &e) in assignment.ex.iter().enumerate() {
        if e == i {
            total += matrix.preferences[i];
        } else {
            total += matrix.get(i, e).unwrap();
        }
    }
    total
}

/// The six message matrices over the candidate sparsity pattern.
#[derive(Debug, Clone)]
pub struct MessageState {
    /// Pair list: all (i, i) diagonals plus the off-diagonal candidates,
    /// in (i, j) order.
    pairs: Vec<(usize, usize)>,
    index: HashMap<(usize, usize), usize>,
    /// Pair ids per row, ascending j.
    rows: Vec<Vec<usize>>,
    /// Pair ids per column, ascending i.
    cols: Vec<Vec<usize>>,
    pub beta: Vec<f64>,
    pub eta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub rho: Vec<f64>,
    pub tau: Vec<f64>,
    pub sigma: Vec<f64>,
    pub damping: f64,
    pub iteration: usize,
}

impl MessageState {
    pub fn new(matrix: &SimilarityMatrix, damping: f64) -> Self {
        let mut pairs: Vec<(usize, usize)> = (0..matrix.n).map(|i| (i, i)).collect();
        pairs.extend(matrix.entries().map(|(i, j, _)| (i, j)));
        pairs.sort();
        let index: HashMap<(usize, usize), usize> =
            pairs.iter().enumerate().map(|(k, &p)| (p, k)).collect();
        let mut rows = vec![Vec::new(); matrix.n];
        let mut cols = vec![Vec::new(); matrix.n];
        for (k, &(i, j)) in pairs.iter().enumerate() {
            rows[i].push(k);
            cols[j].push(k);
        }
        for col in &mut cols {
            col.sort_by_key(|&k| pairs[k].0);
        }
        let len = pairs.len();
        Self {
            pairs,
            index,
            rows,
            cols,
            beta: vec![0.0; len],
            eta: vec![0.0; len],
            alpha: vec![0.0; len],
            rho: vec![0.0; len],
            tau: vec![0.0; len],
            sigma: vec![0.0; len],
            damping,
            iteration: 0,
        }
    }

    pub fn pair(&self, k: usize) -> (usize, usize) {
        self.pairs[k]
    }

    pub fn pair_index(&self, i: usize, j: usize) -> Option<usize> {
        self.index.get(&(i, j)).copied()
    }
}

fn similarity_of(matrix: &SimilarityMatrix, i: usize, j: usize) -> f64 {
    matrix.get(i, j).unwrap()
}

/// Which nodes the single-parent constraint is imposed on. `Modified` (the
/// default) also lets an exemplar that is itself a child node commit its
/// parent's exemplar to the cluster; `Original` imposes the constraint on
/// joining child members only, which can yield non-tree configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FMode {
    Original,
    Modified,
}

/// Per-column context for the F-constraint messages, derived from the
/// previous sweep's extracted assignment.
struct ColumnContext {
    /// Parent exemplar shared by the child members of j's cluster, if any.
    parent_exemplar: Option<usize>,
}

fn column_contexts(
    n: usize,
    assignment: &AssignmentMatrix,
    structure: &RapStructure,
    f_mode: FMode,
) -> Vec<ColumnContext> {
    // Lowest-indexed child member per cluster decides the parent exemplar.
    let mut cluster_parent: HashMap<usize, usize> = HashMap::new();
    for i in 0..n {
        if f_mode == FMode::Original && assignment.ex[i] == i {
            continue;
        }
        if let Some(p) = structure.parent[i] {
            cluster_parent.entry(assignment.ex[i]).or_insert(assignment.ex[p]);
        }
    }
    (0..n)
        .map(|j| ColumnContext {
            parent_exemplar: cluster_parent.get(&assignment.ex[j]).copied(),
        })
        .collect()
}

/// Is node k an admissible co-child for column j given the current
/// exemplar structure?
fn in_support(
    k: usize,
    ctx: &ColumnContext,
    structure: &RapStructure,
    assignment: &AssignmentMatrix,
) -> bool {
    match structure.parent[k] {
        None => false,
        Some(p) => match ctx.parent_exemplar {
            None => true,
            Some(pe) => assignment.ex[p] == pe,
        },
    }
}

/// One synchronous damped sweep. All six matrices are recomputed from the
/// previous sweep's values; `assignment` is the previous sweep's extracted
/// exemplar structure used by the F-constraint messages.
pub fn sweep(
    state: &MessageState,
    matrix: &SimilarityMatrix,
    structure: &RapStructure,
    assignment: &AssignmentMatrix,
    f_mode: FMode,
) -> Result<MessageState> {
    let n = matrix.n;
    let lambda = state.damping;
    let contexts = column_contexts(n, assignment, structure, f_mode);

    // Eqs. 3, 6 and 8 define beta, rho and sigma as compositions of the
    // previous sweep's core messages (alpha, eta, tau); expanding them
    // inline keeps the iteration a genuine one-step Jacobi update instead
    // of a multi-sweep delay line through the stored composites.
    let s_of = |k: usize| -> f64 {
        let (i, j) = state.pairs[k];
        similarity_of(matrix, i, j)
    };
    let beta_prev = |k: usize| s_of(k) + state.alpha[k] + state.tau[k];
    let rho_prev = |k: usize| s_of(k) + state.eta[k] + state.tau[k];
    let sigma_prev = |k: usize| s_of(k) + state.eta[k] + state.alpha[k];

    // Row reductions over previous beta: best and second-best per row.
    let row_max: Vec<(f64, f64, usize)> = (0..n)
        .map(|i| {
            let mut best = NEG_LARGE;
            let mut second = NEG_LARGE;
            let mut best_j = usize::MAX;
            for &k in &state.rows[i] {
                let j = state.pairs[k].1;
                let v = beta_prev(k);
                if v > best {
                    second = best;
                    best = v;
                    best_j = j;
                } else if v > second {
                    second = v;
                }
            }
            (best, second, best_j)
        })
        .collect();

    // Column reductions: positive parts of previous rho and
    // (support-restricted) previous sigma, plus previous rho_jj.
    let mut col_rho_pos = vec![0.0f64; n];
    let mut col_sigma_pos = vec![0.0f64; n];
    let mut rho_diag = vec![0.0f64; n];
    for j in 0..n {
        for &k in &state.cols[j] {
            let i = state.pairs[k].0;
            if i == j {
                rho_diag[j] = rho_prev(k);
                continue;
            }
            col_rho_pos[j] += rho_prev(k).max(0.0);
            if in_support(i, &contexts[j], structure, assignment) {
                col_sigma_pos[j] += sigma_prev(k).max(0.0);
            }
        }
    }

    let compute = |k: usize| -> (f64, f64, f64, f64, f64, f64) {
        let (i, j) = state.pairs[k];
        let s = similarity_of(matrix, i, j);

        let beta = s + state.alpha[k] + state.tau[k];

        let (best, second, best_j) = row_max[i];
        let eta = -if j == best_j { second } else { best };

        let alpha = if i == j {
            col_rho_pos[j]
        } else {
            let others = col_rho_pos[j] - rho_prev(k).max(0.0);
            (rho_diag[j] + others).min(0.0)
        };

        let rho = s + state.eta[k] + state.tau[k];

        let tau = if structure.is_root(i) && i != j {
            0.0
        } else if i == j {
            col_sigma_pos[j]
        } else {
            let own = if in_support(i, &contexts[j], structure, assignment) {
                sigma_prev(k).max(0.0)
            } else {
                0.0
            };
            (rho_diag[j] + col_sigma_pos[j] - own).min(0.0)
        };

        let sigma = s + state.eta[k] + state.alpha[k];
        (beta, eta, alpha, rho, tau, sigma)
    };

    let computed: Vec<(f64, f64, f64, f64, f64, f64)> =
        (0..state.pairs.len()).into_par_iter().map(compute).collect();

    let mut next = state.clone();
    next.iteration += 1;
    for (k, &(beta, eta, alpha, rho, tau, sigma)) in computed.iter().enumerate() {
        next.beta[k] = lambda * state.beta[k] + (1.0 - lambda) * beta;
        next.eta[k] = lambda * state.eta[k] + (1.0 - lambda) * eta;
        next.alpha[k] = lambda * state.alpha[k] + (1.0 - lambda) * alpha;
        next.rho[k] = lambda * state.rho[k] + (1.0 - lambda) * rho;
        next.tau[k] = lambda * state.tau[k] + (1.0 - lambda) * tau;
        next.sigma[k] = lambda * state.sigma[k] + (1.0 - lambda) * sigma;
        for (name, v) in [
            ("beta", next.beta[k]),
            ("eta", next.eta[k]),
            ("alpha", next.alpha[k]),
            ("rho", next.rho[k]),
            ("tau", next.tau[k]),
            ("sigma", next.sigma[k]),
        ] {
            if !v.is_finite() {
                let (i, j) = state.pairs[k];
                return Err(FolkError::NonFiniteMessage {
                    message: name.to_string(),
                    i,
                    j,
                });
            }
        }
    }
    Ok(next)
}

/// Round the current messages to a valid assignment.
///
/// Exemplars are nodes with positive self-belief; every other node joins
/// the best-scoring exemplar that passes the F-check, or falls back to
/// being its own exemplar. Nodes are processed shallowest-first so a
/// child's parent always has a settled exemplar.
pub fn extract_assignment(
    state: &MessageState,
    matrix: &SimilarityMatrix,
    structure: &RapStructure,
    f_mode: FMode,
) -> AssignmentMatrix {
    let n = matrix.n;
    let mut exemplar: Vec<bool> = vec![false; n];
    for j in 0..n {
        let k = state.pair_index(j, j).unwrap();
        if state.rho[k] + state.alpha[k] + state.tau[k] > 0.0 {
            exemplar[j] = true;
        }
    }

    let depths = structure.depths();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (depths[i], i));

    let mut ex = vec![usize::MAX; n];
    // Parent exemplar committed by each cluster's child members so far.
    let mut cluster_parent: HashMap<usize, usize> = HashMap::new();

    let join =
        |i: usize, target: usize, ex: &mut Vec<usize>, cluster_parent: &mut HashMap<usize, usize>| {
            ex[i] = target;
            // Under the original F-constraint an exemplar's own parent does
            // not constrain the cluster.
            if f_mode == FMode::Original && i == target {
                return;
            }
            if let Some(p) = structure.parent[i] {
                cluster_parent.entry(target).or_insert(ex[p]);
            }
        };

    // Declared exemplars always choose themselves; settle that upfront so
    // members can join exemplars that appear later in the processing order.
    for i in 0..n {
        if exemplar[i] {
            ex[i] = i;
        }
    }
    // Whether a node's turn in the depth-ordered pass has happened (and so
    // its own parent constraint, if any, has been committed).
    let mut processed = vec![false; n];

    for &i in &order {
        if exemplar[i] {
            join(i, i, &mut ex, &mut cluster_parent);
            processed[i] = true;
            continue;
        }
        let mut best: Option<(f64, usize)> = None;
        for j in matrix.candidates_of(i) {
            if !exemplar[j] {
                continue;
            }
            // The parent constraint exemplar j itself will commit once its
            // turn comes, if it has not been committed yet.
            let pending: Option<usize> = if !processed[j] && f_mode == FMode::Modified {
                match structure.parent[j] {
                    Some(q) if ex[q] != usize::MAX => Some(ex[q]),
                    // Unknowable yet; joining could create a conflict, so
                    // skip this candidate.
                    Some(_) => continue,
                    None => None,
                }
            } else {
                None
            };
            let f_ok = match structure.parent[i] {
                None => pending.map_or(true, |pe| pe != j),
                Some(p) => {
                    // A cluster cannot be its own parent, and the committed
                    // or pending parent of cluster j must match ours.
                    if ex[p] == j || pending.is_some_and(|pe| pe != ex[p]) {
                        false
                    } else {
                        match cluster_parent.get(&j) {
                            None => {
                                // Joining would commit the edge j -> ex[p];
                                // reject it if that closes a cycle in the
                                // cluster parent graph.
                                let mut cur = ex[p];
                                let mut acyclic = true;
                                let mut steps = 0usize;
                                while let Some(&q) = cluster_parent.get(&cur) {
                                    if q == j || steps > n {
                                        acyclic = false;
                                        break;
                                    }
                                    cur = q;
                                    steps += 1;
                                }
                                acyclic
                            }
                            Some(&pe) => pe == ex[p],
                        }
                    }
                }
            };
            if !f_ok {
                continue;
            }
            let k = state.pair_index(i, j).unwrap();
            let score = similarity_of(matrix, i, j) + state.tau[k];
            if best.map_or(true, |(bs, _)| score > bs) {
                best = Some((score, j));
            }
        }
        match best {
            Some((_, j)) => join(i, j, &mut ex, &mut cluster_parent),
            None => {
                exemplar[i] = true;
                join(i, i, &mut ex, &mut cluster_parent);
            }
        }
        processed[i] = true;
    }
    AssignmentMatrix { ex }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RapConfig {
    pub damping: f64,
    pub max_sweeps: usize,
    pub stable_window: usize,
    pub f_mode: FMode,
}

impl Default for RapConfig {
    fn default() -> Self {
        Self {
            damping: 0.5,
            max_sweeps: 2000,
            stable_window: 10,
            f_mode: FMode::Modified,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepDiag {
    pub sweep: usize,
    pub exemplar_count: usize,
    pub net_similarity: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RapDiagnostics {
    pub sweeps: Vec<SweepDiag>,
    pub converged: bool,
    pub oscillation_bumps: usize,
}

impl RapDiagnostics {
    pub fn to_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "sweep,exemplar_count,net_similarity,lambda")?;
        for d in &self.sweeps {
            writeln!(
                w,
                "{},{},{},{}",
                d.sweep, d.exemplar_count, d.net_similarity, d.lambda
            )?;
        }
        Ok(())
    }
}

const NET_SIMILARITY_TOL: f64 = 1e-6;

/// Instances at or below this size get the multi-start intensification in
/// addition to the single greedy polish.
const INTENSIFY_MAX_NODES: usize = 64;

/// Deterministic greedy polish: coordinate ascent over single-node exemplar
/// moves (including promotion to self-exemplar), accepting only moves that
/// keep the configuration valid and strictly raise net similarity. Nodes
/// are visited in increasing id; passes repeat until a fixpoint.
fn polish(
    assignment: &AssignmentMatrix,
    matrix: &SimilarityMatrix,
    structure: &RapStructure,
) -> AssignmentMatrix {
    let n = matrix.n;
    let mut current = assignment.clone();
    let mut net = net_similarity(&current, matrix, structure);
    if net == INVALID_NET_SIMILARITY {
        return current;
    }
    loop {
        let mut improved = false;
        for i in 0..n {
            let original = current.ex[i];
            let mut best: Option<(f64, usize)> = None;
            let mut choices = vec![i];
            choices.extend(matrix.candidates_of(i));
            for e in choices {
                if e == original {
                    continue;
                }
                current.ex[i] = e;
                let candidate_net = net_similarity(&current, matrix, structure);
                if candidate_net > net + NET_SIMILARITY_TOL
                    && best.map_or(true, |(b, _)| candidate_net > b + NET_SIMILARITY_TOL)
                {
                    best = Some((candidate_net, e));
                }
            }
            match best {
                Some((new_net, e)) => {
                    current.ex[i] = e;
                    net = new_net;
                    improved = true;
                }
                None => current.ex[i] = original,
            }
        }
        // Whole-cluster merges: the F-constraint couples sibling members, so
        // single-node moves cannot cross between two established clusters.
        let exemplars: Vec<usize> = current.exemplars().into_iter().collect();
        for &a in &exemplars {
            if current.ex[a] != a {
                continue; // merged away earlier in this pass
            }
            let members = current.members_of(a);
            let mut best: Option<(f64, usize)> = None;
            for b in matrix.candidates_of(a) {
                if current.ex[b] != b || !members.iter().all(|&m| matrix.contains(m, b)) {
                    continue;
                }
                let mut candidate = current.clone();
                for &m in &members {
                    candidate.ex[m] = b;
                }
                let candidate_net = net_similarity(&candidate, matrix, structure);
                if candidate_net > net + NET_SIMILARITY_TOL
                    && best.map_or(true, |(bn, _)| candidate_net > bn + NET_SIMILARITY_TOL)
                {
                    best = Some((candidate_net, b));
                }
            }
            if let Some((new_net, b)) = best {
                for &m in &members {
                    current.ex[m] = b;
                }
                net = new_net;
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }
    current
}

/// Multi-start refinement for small instances: the F-constraint couples
/// members of a cluster, so message passing and local moves can both get
/// stuck when escaping requires a coordinated multi-node change. Re-running
/// the greedy polish from every "all singletons plus one pinned join" seed
/// explores those coordinated moves deterministically.
fn intensify(
    current: AssignmentMatrix,
    matrix: &SimilarityMatrix,
    structure: &RapStructure,
) -> AssignmentMatrix {
    let n = matrix.n;
    if n > INTENSIFY_MAX_NODES {
        return current;
    }
    let mut best_net = net_similarity(&current, matrix, structure);
    let mut best = current;
    let try_start = |start: AssignmentMatrix, best: &mut AssignmentMatrix, best_net: &mut f64| {
        let candidate = polish(&start, matrix, structure);
        let net = net_similarity(&candidate, matrix, structure);
        if net > *best_net + NET_SIMILARITY_TOL {
            *best_net = net;
            *best = candidate;
        }
    };
    let singletons: Vec<usize> = (0..n).collect();
    try_start(
        AssignmentMatrix {
            ex: singletons.clone(),
        },
        &mut best,
        &mut best_net,
    );
    for i in 0..n {
        for e in matrix.candidates_of(i) {
            let mut ex = singletons.clone();
            ex[i] = e;
            try_start(AssignmentMatrix { ex }, &mut best, &mut best_net);
        }
    }
    best
}

/// Run message passing to convergence.
///
/// Converged means the exemplar set is unchanged and net similarity moved
/// by less than 1e-6 for `stable_window` consecutive sweeps. Period-2
/// oscillation of the exemplar set raises the damping by 0.1 (up to 0.9).
pub fn run(
    matrix: &SimilarityMatrix,
    structure: &RapStructure,
    config: &RapConfig,
) -> Result<(AssignmentMatrix, RapDiagnostics)> {
    let n = matrix.n;
    if n == 0 {
        return Ok((
            AssignmentMatrix { ex: vec![] },
            RapDiagnostics {
                sweeps: vec![],
                converged: true,
                oscillation_bumps: 0,
            },
        ));
    }
    let mut state = MessageState::new(matrix, config.damping);
    let mut assignment = AssignmentMatrix {
        ex: (0..n).collect(),
    };
    let mut diagnostics = RapDiagnostics {
        sweeps: Vec::new(),
        converged: false,
        oscillation_bumps: 0,
    };
    let mut history: Vec<(BTreeSet<usize>, f64)> = Vec::new();
    let mut stable = 0usize;
    let mut oscillating = 0usize;
    let mut best: Option<(f64, AssignmentMatrix)> = None;

    for sweep_no in 1..=config.max_sweeps {
        state = sweep(&state, matrix, structure, &assignment, config.f_mode)?;
        assignment = extract_assignment(&state, matrix, structure, config.f_mode);
        let exemplars = assignment.exemplars();
        let net = net_similarity(&assignment, matrix, structure);
        // Ties and symmetric instances can make the exemplar set wander
        // without settling; keep the highest-scoring valid assignment
        // visited so the returned solution never regresses.
        if best.as_ref().map_or(true, |(b, _)| net > b + NET_SIMILARITY_TOL) {
            best = Some((net, assignment.clone()));
        }
        diagnostics.sweeps.push(SweepDiag {
            sweep: sweep_no,
            exemplar_count: exemplars.len(),
            net_similarity: net,
            lambda: state.damping,
        });

        // The zero-initialized messages keep every node a self-exemplar for
        // the first several sweeps; a burn-in prevents mistaking that
        // transient plateau for convergence.
        let burn_in = 5 * config.stable_window;
        if let Some((prev_set, prev_net)) = history.last() {
            if sweep_no > burn_in
                && *prev_set == exemplars
                && (net - prev_net).abs() < NET_SIMILARITY_TOL
            {
                stable += 1;
            } else {
                stable = 0;
            }
        }
        if history.len() >= 2 {
            let two_ago = &history[history.len() - 2].0;
            let one_ago = &history[history.len() - 1].0;
            if *two_ago == exemplars && *one_ago != exemplars {
                oscillating += 1;
            } else {
                oscillating = 0;
            }
        }
        history.push((exemplars, net));

        if stable >= config.stable_window {
            diagnostics.converged = true;
            break;
        }
        if oscillating > config.stable_window && state.damping < 0.9 {
            state.damping = (state.damping + 0.1).min(0.9);
            diagnostics.oscillation_bumps += 1;
            oscillating = 0;
        }
    }
    let final_assignment = match best {
        Some((best_net, best_assignment))
            if best_net > net_similarity(&assignment, matrix, structure) + NET_SIMILARITY_TOL =>
        {
            best_assignment
        }
        _ => assignment,
    };
    let polished = polish(&final_assignment, matrix, structure);
    Ok((intensify(polished, matrix, structure), diagnostics))
}

/// A cluster of merged nodes in the learned folksonomy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FolkNode {
    pub label: String,
    pub members: Vec<MemberRef>,
    pub children: Vec<FolkNode>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemberRef {
    pub user: String,
    pub sapling: String,
    pub node: u64,
    pub is_expert: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FolkTree {
    pub root: FolkNode,
    /// Number of distinct saplings contributing members to this tree.
    pub num_saplings: usize,
}

/// Learned folksonomy: a forest ordered most-popular-first.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Folksonomy {
    pub trees: Vec<FolkTree>,
}

impl FolkNode {
    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(FolkNode::node_count).sum::<usize>()
    }

    pub fn member_count(&self) -> usize {
        self.members.len()
            + self.children.iter().map(FolkNode::member_count).sum::<usize>()
    }

    pub fn depth(&self) -> usize {
        1 + self.children.iter().map(FolkNode::depth).max().unwrap_or(0)
    }

    pub fn labels(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_labels(&mut out);
        out
    }

    fn collect_labels(&self, out: &mut BTreeSet<String>) {
        out.insert(self.label.clone());
        for child in &self.children {
            child.collect_labels(out);
        }
    }

    pub fn render_indented(&self, out: &mut String, indent: usize) {
        out.push_str(&"  ".repeat(indent));
        out.push_str(&self.label);
        out.push_str(&format!(" [{}]\n", self.members.len()));
        for child in &self.children {
            child.render_indented(out, indent + 1);
        }
    }
}

impl FolkTree {
    pub fn render(&self) -> String {
        let mut out = String::new();
        self.root.render_indented(&mut out, 0);
        out
    }
}

impl Folksonomy {
    pub fn most_popular(&self) -> Option<&FolkTree> {
        self.trees.first()
    }

    pub fn total_members(&self) -> usize {
        self.trees.iter().map(|t| t.root.member_count()).sum()
    }
}

/// Metadata the assembler needs per dense node index.
#[derive(Debug, Clone)]
pub struct NodeMeta {
    pub label: String,
    pub user: String,
    pub sapling: String,
    pub node: u64,
    pub is_expert: bool,
}

/// Build the folksonomy forest from a valid assignment.
///
/// One folksonomy node per exemplar; the parent of an exemplar's cluster is
/// the exemplar of its child members' parents (unique by the F-constraint).
pub fn assemble_folksonomy(
    assignment: &AssignmentMatrix,
    structure: &RapStructure,
    meta: &[NodeMeta],
) -> Result<Folksonomy> {
    let n = assignment.ex.len();
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        members.entry(assignment.ex[i]).or_default().push(i);
    }
    // Parent cluster per cluster; child members must agree.
    let mut parent_of: BTreeMap<usize, Option<usize>> = BTreeMap::new();
    for (&e, nodes) in &members {
        let mut parent: Option<usize> = None;
        for &i in nodes {
            if let Some(p) = structure.parent[i] {
                let pex = assignment.ex[p];
                match parent {
                    None => parent = Some(pex),
                    Some(prev) if prev == pex => {}
                    Some(_) => return Err(FolkError::ConstraintViolation(e)),
                }
            }
        }
        if parent == Some(e) {
            return Err(FolkError::ConstraintViolation(e));
        }
        parent_of.insert(e, parent);
    }
    let mut children_of: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut roots: Vec<usize> = Vec::new();
    for (&e, &p) in &parent_of {
        match p {
            Some(p) => children_of.entry(p).or_default().push(e),
            None => roots.push(e),
        }
    }

    fn build(
        e: usize,
        members: &BTreeMap<usize, Vec<usize>>,
        children_of: &BTreeMap<usize, Vec<usize>>,
        meta: &[NodeMeta],
        seen: &mut BTreeSet<usize>,
    ) -> Result<FolkNode> {
        if !seen.insert(e) {
            return Err(FolkError::ConstraintViolation(e));
        }
        let node_members: Vec<MemberRef> = members[&e]
            .iter()
            .map(|&i| MemberRef {
                user: meta[i].user.clone(),
                sapling: meta[i].sapling.clone(),
                node: meta[i].node,
                is_expert: meta[i].is_expert,
            })
            .collect();
        let mut children = Vec::new();
        for &c in children_of.get(&e).map(Vec::as_slice).unwrap_or(&[]) {
            children.push(build(c, members, children_of, meta, seen)?);
        }
        Ok(FolkNode {
            label: meta[e].label.clone(),
            members: node_members,
            children,
        })
    }

    let mut seen = BTreeSet::new();
    let mut trees = Vec::new();
    for root in roots {
        let folk_root = build(root, &members, &children_of, meta, &mut seen)?;
        let saplings: BTreeSet<(String, String)> = collect_saplings(&folk_root);
        trees.push(FolkTree {
            root: folk_root,
            num_saplings: saplings.len(),
        });
    }
    if seen.len() != parent_of.len() {
        // A cycle in the exemplar graph left clusters unreachable.
        return Err(FolkError::ConstraintViolation(
            *parent_of.keys().find(|e| !seen.contains(e)).unwrap(),
        ));
    }
    trees.sort_by(|a, b| {
        b.num_saplings
            .cmp(&a.num_saplings)
            .then(b.root.node_count().cmp(&a.root.node_count()))
            .then(a.root.label.cmp(&b.root.label))
    });
    Ok(Folksonomy { trees })
}

fn collect_saplings(node: &FolkNode) -> BTreeSet<(String, String)> {
    let mut out = BTreeSet::new();
    fn walk(node: &FolkNode, out: &mut BTreeSet<(String, String)>) {
        for m in &node.members {
            out.insert((m.user.clone(), m.sapling.clone()));
        }
        for child in &node.children {
            walk(child, out);
        }
    }
    walk(node, &mut out);
    out
}
