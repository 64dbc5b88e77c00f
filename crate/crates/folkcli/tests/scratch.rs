mod common;

use folkrap::rap::{
    extract_assignment, sweep, AssignmentMatrix, FMode, MessageState, RapStructure,
};
use folkrap::similarity::SimilarityMatrix;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

#[test]
fn compare_with_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE02);
    let mut ours_opt = 0;
    let mut worst_gap = 0.0f64;
    for t in 0..30 {
        let n = 4 + t % 7;
        let (matrix, structure) = common::random_flat_instance(&mut rng, n);
        let opt = common::flat_subset_optimum(&matrix);
        let config = folkrap::rap::RapConfig::default();
        let (assignment, diag) = folkrap::rap::run(&matrix, &structure, &config).unwrap();
        let net = folkrap::rap::net_similarity(&assignment, &matrix, &structure);
        let gap = (opt - net) / opt.abs().max(1e-9);
        if gap < 1e-9 {
            ours_opt += 1;
        } else {
            println!(
                "t={t} n={n} opt={opt:.4} ours={net:.4} gap={gap:.4} conv={} sweeps={}",
                diag.converged,
                diag.sweeps.len()
            );
        }
        worst_gap = worst_gap.max(gap);
    }
    println!("ours optimal {ours_opt}/30 worst_gap={worst_gap:.4}");
}

#[test]
fn compare_tree_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7EE5);
    let mut ours_opt = 0;
    let mut valid = 0;
    let mut worst_gap = 0.0f64;
    for t in 0..50 {
        let (matrix, structure) = common::random_instance(&mut rng, 8);
        let opt = common::enumerate_optimum(&matrix, &structure);
        let config = folkrap::rap::RapConfig::default();
        let (assignment, diag) = folkrap::rap::run(&matrix, &structure, &config).unwrap();
        if folkrap::rap::is_valid(&assignment, &matrix, &structure) {
            valid += 1;
        }
        let net = folkrap::rap::net_similarity(&assignment, &matrix, &structure);
        let gap = (opt - net) / opt.abs().max(1e-9);
        if gap < 1e-9 {
            ours_opt += 1;
        } else {
            println!(
                "t={t} opt={opt:.4} ours={net:.4} gap={gap:.4} conv={} sweeps={}",
                diag.converged,
                diag.sweeps.len()
            );
        }
        worst_gap = worst_gap.max(gap);
    }
    println!("tree: ours optimal {ours_opt}/50 valid {valid}/50 worst_gap={worst_gap:.4}");
}

#[test]
fn inspect_tree_failure() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7EE5);
    for t in 0..50 {
        let (matrix, structure) = common::random_instance(&mut rng, 8);
        if t != 49 {
            continue;
        }
        let n = matrix.n;
        println!("parents={:?}", structure.parent);
        println!("prefs={:?}", matrix.preferences);
        for (i, j, s) in matrix.entries() {
            if i < j {
                println!("s({i},{j})={s:.4}");
            }
        }
        // find optimal assignment
        let choices: Vec<Vec<usize>> = (0..n)
            .map(|i| {
                let mut c = vec![i];
                c.extend(matrix.candidates_of(i));
                c
            })
            .collect();
        let mut ex = vec![0usize; n];
        let mut best = (f64::NEG_INFINITY, vec![]);
        fn rec(
            d: usize,
            choices: &[Vec<usize>],
            ex: &mut Vec<usize>,
            m: &SimilarityMatrix,
            st: &RapStructure,
            best: &mut (f64, Vec<usize>),
        ) {
            if d == choices.len() {
                if let Some(sc) = common::oracle_score(ex, m, st) {
                    if sc > best.0 {
                        *best = (sc, ex.clone());
                    }
                }
                return;
            }
            for &c in &choices[d] {
                ex[d] = c;
                rec(d + 1, choices, ex, m, st, best);
            }
        }
        rec(0, &choices, &mut ex, &matrix, &structure, &mut best);
        println!("opt={:.4} ex={:?}", best.0, best.1);
        let config = folkrap::rap::RapConfig::default();
        let (assignment, _) = folkrap::rap::run(&matrix, &structure, &config).unwrap();
        println!(
            "ours={:.4} ex={:?}",
            folkrap::rap::net_similarity(&assignment, &matrix, &structure),
            assignment.ex
        );
    }
}

#[test]
fn side_by_side() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE02);
    let (matrix, structure) = common::random_flat_instance(&mut rng, 4);
    let n = matrix.n;
    println!("prefs={:?}", matrix.preferences);
    for (i, j, s) in matrix.entries() {
        if i < j {
            println!("s({i},{j})={s:.4}");
        }
    }
    let opt = common::flat_subset_optimum(&matrix);
    println!("opt={opt:.4}");

    // textbook side
    let neg = -1e12f64;
    let mut s = vec![vec![neg; n]; n];
    for i in 0..n {
        s[i][i] = matrix.preferences[i];
        for j in 0..n {
            if i != j {
                if let Some(v) = matrix.get(i, j) {
                    s[i][j] = v;
                }
            }
        }
    }
    let mut r = vec![vec![0.0f64; n]; n];
    let mut a = vec![vec![0.0f64; n]; n];
    let lambda = 0.5;

    // ours side
    let mut state = MessageState::new(&matrix, lambda);
    let mut assignment = AssignmentMatrix {
        ex: (0..n).collect(),
    };

    for t in 1..=60 {
        // textbook sweep (jacobi)
        let mut new_r = vec![vec![0.0f64; n]; n];
        for i in 0..n {
            for j in 0..n {
                let mut best = neg;
                for k in 0..n {
                    if k != j {
                        let v = a[i][k] + s[i][k];
                        if v > best {
                            best = v;
                        }
                    }
                }
                new_r[i][j] = s[i][j] - best;
            }
        }
        let mut new_a = vec![vec![0.0f64; n]; n];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    new_a[j][j] = (0..n).filter(|&k| k != j).map(|k| r[k][j].max(0.0)).sum();
                } else {
                    let sum: f64 = (0..n)
                        .filter(|&k| k != i && k != j)
                        .map(|k| r[k][j].max(0.0))
                        .sum();
                    new_a[i][j] = (r[j][j] + sum).min(0.0);
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                r[i][j] = lambda * r[i][j] + (1.0 - lambda) * new_r[i][j];
                a[i][j] = lambda * a[i][j] + (1.0 - lambda) * new_a[i][j];
            }
        }

        // ours
        state = sweep(&state, &matrix, &structure, &assignment, FMode::Modified).unwrap();
        assignment = extract_assignment(&state, &matrix, &structure, FMode::Modified);

        if t % 5 == 0 || t <= 6 {
            let tex_diag: Vec<String> = (0..n)
                .map(|j| format!("{:+.3}", r[j][j] + a[j][j]))
                .collect();
            let our_diag: Vec<String> = (0..n)
                .map(|j| {
                    let k = state.pair_index(j, j).unwrap();
                    format!("{:+.3}", state.rho[k] + state.alpha[k] + state.tau[k])
                })
                .collect();
            println!(
                "t={t:2} textbook diag [{}] ours diag [{}] ex={:?}",
                tex_diag.join(" "),
                our_diag.join(" "),
                assignment.ex
            );
        }
    }
}

#[test]
fn probe_similarity_scale() {
    use folkrap::pipeline::*;
    use std::collections::BTreeSet;
    let data = generate_synthetic(&SyntheticSpec::default()).unwrap();
    let experts: BTreeSet<String> = data
        .labels
        .iter()
        .filter(|(_, &e)| e)
        .map(|(u, _)| u.clone())
        .collect();
    let mut corpus = data.corpus.clone();
    corpus.mark_expert_nodes(&experts.iter().cloned().collect());
    let sample = snowball(&corpus, &data.seed_term, DEFAULT_MAX_ROUNDS);
    let ids = strategy_sapling_ids(&corpus, &sample, Strategy::M3, &experts);
    let input = assemble_input(&corpus, &ids);
    let matrix = prepare_matrix(&input, folkrap::similarity::PreferenceStrategy::uniform()).unwrap();
    let sims: Vec<f64> = matrix
        .entries()
        .filter(|(i, j, _)| i < j)
        .map(|(_, _, s)| s)
        .collect();
    let mean = sims.iter().sum::<f64>() / sims.len() as f64;
    let mut sorted = sims.clone();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| sorted[((sorted.len() - 1) as f64 * p) as usize];
    println!(
        "n={} pairs={} mean={:.3} min={:.3} q25={:.3} med={:.3} q75={:.3} max={:.3} frac>=2mean={:.3}",
        matrix.n,
        sims.len(),
        mean,
        q(0.0),
        q(0.25),
        q(0.5),
        q(0.75),
        q(1.0),
        sims.iter().filter(|&&s| s >= 2.0 * mean).count() as f64 / sims.len() as f64
    );
    // Expert-expert pair similarity distribution.
    let ee: Vec<f64> = matrix
        .entries()
        .filter(|(i, j, _)| {
            i < j && input.expert_indices.contains(i) && input.expert_indices.contains(j)
        })
        .map(|(_, _, s)| s)
        .collect();
    let ee_mean = ee.iter().sum::<f64>() / ee.len() as f64;
    println!(
        "expert nodes={} expert-expert pairs={} ee_mean={:.3} ee_frac>=2mean={:.3}",
        input.expert_indices.len(),
        ee.len(),
        ee_mean,
        ee.iter().filter(|&&s| s >= 2.0 * mean).count() as f64 / ee.len() as f64
    );
}

#[test]
fn probe_directional() {
    use folkrap::evaluation::*;
    use folkrap::pipeline::*;
    use std::collections::BTreeSet;
    let config = folkrap::rap::RapConfig {
        max_sweeps: 300,
        ..Default::default()
    };
    for seed in [0u64, 1, 2] {
        let data = generate_synthetic(&SyntheticSpec {
            rng_seed: seed,
            ..Default::default()
        })
        .unwrap();
        let experts: BTreeSet<String> = data
            .labels
            .iter()
            .filter(|(_, &e)| e)
            .map(|(u, _)| u.clone())
            .collect();
        let strat = |s: Strategy| {
            let r = run_strategy(&data.corpus, &data.seed_term, s, &experts, &config).unwrap();
            let ev = evaluate_report(&r, &data.reference).unwrap();
            (ev.to, ev.depth, ev.pct_expert)
        };
        let m1 = strat(Strategy::M1);
        let m2 = strat(Strategy::M2);
        let m3 = strat(Strategy::M3);
        let swap = swap_sweep(
            &data.corpus,
            &data.seed_term,
            &experts,
            &data.reference,
            &[0.0, 50.0, 100.0],
            42,
            &config,
        )
        .unwrap();
        let pref = preference_sweep(
            &data.corpus,
            &data.seed_term,
            &experts,
            &data.reference,
            &[0.0, 1.0, 2.0, 3.0],
            &config,
        )
        .unwrap();
        println!(
            "seed {seed}: m1 {:.3}/{}/{:.0} m2 {:.3}/{}/{:.0} m3 {:.3}/{}/{:.0} swap {:?} pref {:?}",
            m1.0, m1.1, m1.2, m2.0, m2.1, m2.2, m3.0, m3.1, m3.2,
            swap.points.iter().map(|(x, v)| format!("{x}:{v:.3}")).collect::<Vec<_>>(),
            pref.points.iter().map(|(x, v)| format!("{x}:{v:.3}")).collect::<Vec<_>>(),
        );
    }
}

#[test]
fn probe_sim_histogram() {
    use folkrap::pipeline::*;
    use std::collections::BTreeSet;
    let data = generate_synthetic(&SyntheticSpec::default()).unwrap();
    let experts: BTreeSet<String> = data
        .labels
        .iter()
        .filter(|(_, &e)| e)
        .map(|(u, _)| u.clone())
        .collect();
    let mut corpus = data.corpus.clone();
    corpus.mark_expert_nodes(&experts.iter().cloned().collect());
    let sample = snowball(&corpus, &data.seed_term, DEFAULT_MAX_ROUNDS);
    let ids = strategy_sapling_ids(&corpus, &sample, Strategy::M3, &experts);
    let input = assemble_input(&corpus, &ids);
    let matrix = prepare_matrix(&input, folkrap::similarity::PreferenceStrategy::uniform()).unwrap();
    // Category of node i: expert / novice root / novice child.
    let cat = |i: usize| -> &'static str {
        if input.expert_indices.contains(&i) {
            "E"
        } else if input.structure.parent[i].is_none() {
            "R"
        } else {
            "C"
        }
    };
    let mut hist: std::collections::BTreeMap<(String, u64), usize> = Default::default();
    for (i, j, s) in matrix.entries() {
        if i >= j {
            continue;
        }
        let mut pair = [cat(i), cat(j)];
        pair.sort();
        *hist.entry((format!("{}{}", pair[0], pair[1]), (s * 100.0) as u64)).or_default() += 1;
    }
    for ((p, s), n) in &hist {
        println!("{p} sim {s}: {n}");
    }
}

#[test]
fn probe_m3_tree() {
    use folkrap::pipeline::*;
    use std::collections::BTreeSet;
    let data = generate_synthetic(&SyntheticSpec {
        noise_rate: 0.0,
        ..Default::default()
    })
    .unwrap();
    let experts: BTreeSet<String> = data
        .labels
        .iter()
        .filter(|(_, &e)| e)
        .map(|(u, _)| u.clone())
        .collect();
    let config = folkrap::rap::RapConfig {
        max_sweeps: 300,
        ..Default::default()
    };
    let r = run_strategy(&data.corpus, &data.seed_term, Strategy::M3, &experts, &config).unwrap();
    let ev = folkrap::evaluation::evaluate_report(&r, &data.reference).unwrap();
    println!("m3 zero-noise TO {:.3}", ev.to);
    // Print the popular tree with depths.
    fn dump(node: &folkrap::rap::FolkNode, depth: usize) {
        println!("{}{} [{}]", "  ".repeat(depth), node.label, node.members.len());
        for c in &node.children {
            dump(c, depth + 1);
        }
    }
    let tree = r.folksonomy.most_popular().unwrap();
    dump(&tree.root, 0);
}

#[test]
fn probe_term_damage() {
    use folkrap::pipeline::*;
    use std::collections::{BTreeMap, BTreeSet};
    let data = generate_synthetic(&SyntheticSpec::default()).unwrap();
    let experts: BTreeSet<String> = data
        .labels
        .iter()
        .filter(|(_, &e)| e)
        .map(|(u, _)| u.clone())
        .collect();
    let config = folkrap::rap::RapConfig {
        max_sweeps: 300,
        ..Default::default()
    };
    // Reference cotopies via public API: reuse taxonomic_overlap on
    // single-term... simpler: recompute here.
    let mut ref_children: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    let mut ref_parent: BTreeMap<&str, &str> = BTreeMap::new();
    for (p, c) in &data.reference.edges {
        ref_children.entry(p.as_str()).or_default().push(c);
        ref_parent.insert(c, p);
    }
    let ref_cotopy = |t: &str| -> BTreeSet<String> {
        let mut set = BTreeSet::from([t.to_string()]);
        let mut up = t;
        while let Some(&p) = ref_parent.get(up) {
            set.insert(p.to_string());
            up = p;
        }
        let mut stack = vec![t];
        while let Some(cur) = stack.pop() {
            for &c in ref_children.get(cur).map(Vec::as_slice).unwrap_or(&[]) {
                set.insert(c.to_string());
                stack.push(c);
            }
        }
        set
    };
    for strat in [Strategy::M1, Strategy::M3] {
        let r = run_strategy(&data.corpus, &data.seed_term, strat, &experts, &config).unwrap();
        let tree = r.folksonomy.most_popular().unwrap();
        // learned cotopies
        fn descendants(n: &folkrap::rap::FolkNode, out: &mut BTreeSet<String>) {
            out.insert(n.label.clone());
            for c in &n.children {
                descendants(c, out);
            }
        }
        fn walk(
            n: &folkrap::rap::FolkNode,
            anc: &mut Vec<String>,
            out: &mut BTreeMap<String, BTreeSet<String>>,
        ) {
            let e = out.entry(n.label.clone()).or_default();
            e.extend(anc.iter().cloned());
            let mut below = BTreeSet::new();
            descendants(n, &mut below);
            out.get_mut(&n.label).unwrap().extend(below);
            anc.push(n.label.clone());
            for c in &n.children {
                walk(c, anc, out);
            }
            anc.pop();
        }
        let mut learned = BTreeMap::new();
        walk(&tree.root, &mut Vec::new(), &mut learned);
        let shared: BTreeSet<String> = learned
            .keys()
            .filter(|t| ref_parent.contains_key(t.as_str()) || ref_children.contains_key(t.as_str()))
            .cloned()
            .collect();
        println!("== {:?}: shared {} ==", strat, shared.len());
        let mut total = 0.0;
        let mut rows: Vec<(f64, String, Vec<String>, Vec<String>)> = Vec::new();
        for t in &shared {
            let lc: BTreeSet<String> = learned[t].intersection(&shared).cloned().collect();
            let rc: BTreeSet<String> =
                ref_cotopy(t).intersection(&shared).cloned().collect();
            let inter = lc.intersection(&rc).count() as f64;
            let union = lc.union(&rc).count() as f64;
            let j = inter / union;
            total += j;
            if j < 0.999 {
                rows.push((
                    j,
                    t.clone(),
                    lc.difference(&rc).cloned().collect(),
                    rc.difference(&lc).cloned().collect(),
                ));
            }
        }
        rows.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for (j, t, extra, missing) in rows.iter().take(12) {
            println!("  {t} j={j:.2} extra={extra:?} missing={missing:?}");
        }
        println!("  TO = {:.3}", total / shared.len() as f64);
    }
}

#[test]
fn probe_trees() {
    use folkrap::evaluation::taxonomic_overlap;
    use folkrap::pipeline::*;
    use folkrap::rap::FolkNode;
    use std::collections::BTreeSet;
    let data = generate_synthetic(&SyntheticSpec::default()).unwrap();
    let experts: BTreeSet<String> = data
        .labels
        .iter()
        .filter(|(_, &e)| e)
        .map(|(u, _)| u.clone())
        .collect();
    let config = folkrap::rap::RapConfig {
        max_sweeps: 300,
        ..Default::default()
    };
    fn stats(n: &FolkNode, members: &mut usize, exp: &mut usize, depth: usize, maxd: &mut usize) {
        *members += n.members.len();
        *exp += n.members.iter().filter(|m| m.is_expert).count();
        *maxd = (*maxd).max(depth);
        for c in &n.children {
            stats(c, members, exp, depth + 1, maxd);
        }
    }
    for strat in [Strategy::M1, Strategy::M3] {
        let r = run_strategy(&data.corpus, &data.seed_term, strat, &experts, &config).unwrap();
        println!("== {:?}: {} trees ==", strat, r.folksonomy.trees.len());
        for t in r.folksonomy.trees.iter().take(8) {
            let (mut m, mut e, mut d) = (0usize, 0usize, 1usize);
            stats(&t.root, &mut m, &mut e, 1, &mut d);
            let to = taxonomic_overlap(&t.root, &data.reference).unwrap_or(-1.0);
            println!(
                "  root={} saplings={} members={} experts={} depth={} to={:.3}",
                t.root.label, t.num_saplings, m, e, d, to
            );
        }
    }
}
