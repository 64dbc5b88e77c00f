//! User-level and sapling-level expertise features, plus root-diversity
//! statistics, computed over an ingested corpus.
//!
//! All features are invariant under node-id relabeling and child reordering,
//! and use natural logarithms throughout.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::annotation::{Corpus, Sapling, TagBag, UserProfile};
use crate::error::{FolkError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UserFeatures {
    /// Number of saplings (N).
    pub variety: usize,
    /// Number of parent-child relations over all saplings.
    pub num_twigs: usize,
    /// Normalized entropy of sapling sizes, in [0,1].
    pub balance: f64,
    /// Sum of pairwise Jensen-Shannon divergences of sapling tag bags.
    pub disparity: f64,
    /// Disparity divided by the user's total node count.
    pub disparity_normalized: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SaplingFeatures {
    pub variety: usize,
    pub balance: f64,
    pub depth: u32,
    /// Maximum level width.
    pub breadth: usize,
    pub num_nodes: usize,
    pub num_leaves: usize,
    pub leaf_ratio: f64,
    pub num_children_of_root: usize,
    pub unique_twig_ratio: f64,
    pub unique_term_ratio: f64,
    /// Mean over twigs of cross-user support count.
    pub agreement: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RootDiversity {
    pub root_name: String,
    pub num_creators: usize,
    pub num_unique_children: usize,
    pub coverage_30: f64,
    pub coverage_50: f64,
    pub coverage_70: f64,
}

/// User-Balance: normalized entropy of sapling sizes.
/// Returns 0 for a single sapling (ln N normalizer is zero there).
pub fn user_balance(sapling_sizes: &[usize]) -> Result<f64> {
    if sapling_sizes.is_empty() {
        return Err(FolkError::InvalidInput("empty sapling size list".into()));
    }
    if sapling_sizes.iter().any(|&s| s == 0) {
        return Err(FolkError::InvalidInput("sapling size must be positive".into()));
    }
    let n = sapling_sizes.len();
    if n == 1 {
        return Ok(0.0);
    }
    let total: usize = sapling_sizes.iter().sum();
    let entropy: f64 = sapling_sizes
        .iter()
        .map(|&s| {
            let p = s as f64 / total as f64;
            -p * p.ln()
        })
        .sum();
    Ok(entropy / (n as f64).ln())
}

fn kl_divergence(p: &BTreeMap<String, f64>, q: &BTreeMap<String, f64>) -> f64 {
    p.iter()
        .filter(|(_, &pv)| pv > 0.0)
        .map(|(tag, &pv)| {
            let qv = q.get(tag).copied().unwrap_or(0.0);
            pv * (pv / qv).ln()
        })
        .sum()
}

/// Jensen-Shannon divergence between two tag distributions (natural log).
pub fn js_divergence(a: &TagBag, b: &TagBag) -> f64 {
    let p = a.distribution();
    let q = b.distribution();
    let mut m = BTreeMap::new();
    for (tag, &v) in p.iter().chain(q.iter()) {
        *m.entry(tag.clone()).or_insert(0.0) += 0.5 * v;
    }
    0.5 * kl_divergence(&p, &m) + 0.5 * kl_divergence(&q, &m)
}

/// User-Disparity: sum of JS divergences over all unordered sapling pairs,
/// plus the node-count-normalized variant. Zero for fewer than two saplings.
pub fn user_disparity(tag_dists: &[&TagBag], total_nodes: usize) -> Result<(f64, f64)> {
    if tag_dists.len() < 2 {
        return Ok((0.0, 0.0));
    }
    if tag_dists.iter().any(|b| b.is_empty()) {
        return Err(FolkError::InvalidInput("empty tag bag in disparity".into()));
    }
    let mut disparity = 0.0;
    for i in 0..tag_dists.len() {
        for j in (i + 1)..tag_dists.len() {
            disparity += js_divergence(tag_dists[i], tag_dists[j]);
        }
    }
    let normalized = if total_nodes > 0 {
        disparity / total_nodes as f64
    } else {
        0.0
    };
    Ok((disparity, normalized))
}

/// Sapling-Variety: sum over levels of level index times node count.
pub fn sapling_variety(sapling: &Sapling) -> usize {
    sapling
        .level_counts()
        .iter()
        .enumerate()
        .map(|(i, &n)| (i + 1) * n)
        .sum()
}

/// Sapling-Balance: per-level normalized entropy of the children-count
/// distribution, averaged over all levels. A level with a single node or
/// no children at all contributes 1.0.
pub fn sapling_balance(sapling: &Sapling) -> f64 {
    let depth = sapling.depth() as usize;
    let mut by_level: Vec<Vec<usize>> = vec![Vec::new(); depth];
    for node in sapling.nodes.values() {
        by_level[(node.depth_level - 1) as usize].push(node.children.len());
    }
    let mut total = 0.0;
    for counts in &by_level {
        total += level_balance_term(counts);
    }
    total / depth as f64
}

/// One level's term: normalized entropy of children emanating from the
/// level's nodes. `counts[j]` is the number of children of the j'th node.
pub fn level_balance_term(counts: &[usize]) -> f64 {
    let n = counts.len();
    let total: usize = counts.iter().sum();
    if n < 2 || total == 0 {
        return 1.0;
    }
    let entropy: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.ln()
        })
        .sum();
    entropy / (n as f64).ln()
}

/// Number of unordered name pairs {a,b} with edge a→b in one of the user's
/// saplings and b→a in another (or the same).
pub fn count_conflicts(corpus: &Corpus, user: &UserProfile) -> usize {
    let mut edges: HashSet<(String, String)> = HashSet::new();
    for sid in &user.saplings {
        for twig in corpus.saplings[sid].twigs() {
            edges.insert(twig);
        }
    }
    let mut conflicting: BTreeSet<(String, String)> = BTreeSet::new();
    for (a, b) in &edges {
        if a != b && edges.contains(&(b.clone(), a.clone())) {
            let key = if a < b {
                (a.clone(), b.clone())
            } else {
                (b.clone(), a.clone())
            };
            conflicting.insert(key);
        }
    }
    conflicting.len()
}

/// Per-twig distinct-user support over the whole corpus.
pub fn twig_agreement(corpus: &Corpus) -> HashMap<(String, String), usize> {
    let mut users_per_twig: HashMap<(String, String), HashSet<&str>> = HashMap::new();
    for sapling in corpus.saplings.values() {
        for twig in sapling.twigs() {
            users_per_twig
                .entry(twig)
                .or_default()
                .insert(sapling.owner.as_str());
        }
    }
    users_per_twig
        .into_iter()
        .map(|(twig, users)| (twig, users.len()))
        .collect()
}

/// Root-diversity statistics for all roots named `root_name` in the corpus.
///
/// coverage_q = 100 × (minimum number of most-frequent distinct children
/// whose occurrence counts reach q% of total occurrences) / (distinct
/// children). Ties in frequency are broken by name ascending.
pub fn root_diversity(corpus: &Corpus, root_name: &str) -> Result<RootDiversity> {
    let mut creators: HashSet<&str> = HashSet::new();
    let mut child_counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut found = false;
    for sapling in corpus.saplings.values() {
        let root = &sapling.nodes[&sapling.root];
        if root.name != root_name {
            continue;
        }
        found = true;
        creators.insert(sapling.owner.as_str());
        for child in &root.children {
            *child_counts
                .entry(sapling.nodes[child].name.clone())
                .or_insert(0) += 1;
        }
    }
    if !found {
        return Err(FolkError::UnknownRoot(root_name.to_string()));
    }
    let k = child_counts.len();
    let total: usize = child_counts.values().sum();
    let mut sorted: Vec<(&String, usize)> = child_counts.iter().map(|(n, &c)| (n, c)).collect();
    sorted.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));

    let coverage = |q: f64| -> f64 {
        if k == 0 || total == 0 {
            return 0.0;
        }
        let target = q * total as f64;
        let mut acc = 0usize;
        let mut needed = 0usize;
        for (_, count) in &sorted {
            needed += 1;
            acc += count;
            if acc as f64 >= target {
                break;
            }
        }
        100.0 * needed as f64 / k as f64
    };

    Ok(RootDiversity {
        root_name: root_name.to_string(),
        num_creators: creators.len(),
        num_unique_children: k,
        coverage_30: coverage(0.3),
        coverage_50: coverage(0.5),
        coverage_70: coverage(0.7),
    })
}

pub fn compute_sapling_features(
    sapling: &Sapling,
    agreement: &HashMap<(String, String), usize>,
) -> SaplingFeatures {
    let num_nodes = sapling.num_nodes();
    let num_leaves = sapling
        .nodes
        .values()
        .filter(|n| n.children.is_empty())
        .count();
    let twigs = sapling.twigs();
    let unique_twigs: HashSet<&(String, String)> = twigs.iter().collect();
    let unique_terms: HashSet<&str> = sapling.nodes.values().map(|n| n.name.as_str()).collect();
    let mean_support = if twigs.is_empty() {
        0.0
    } else {
        twigs
            .iter()
            .map(|t| agreement.get(t).copied().unwrap_or(1) as f64)
            .sum::<f64>()
            / twigs.len() as f64
    };
    SaplingFeatures {
        variety: sapling_variety(sapling),
        balance: sapling_balance(sapling),
        depth: sapling.depth(),
        breadth: sapling.level_counts().into_iter().max().unwrap_or(1),
        num_nodes,
        num_leaves,
        leaf_ratio: num_leaves as f64 / num_nodes as f64,
        num_children_of_root: sapling.nodes[&sapling.root].children.len(),
        unique_twig_ratio: if twigs.is_empty() {
            1.0
        } else {
            unique_twigs.len() as f64 / twigs.len() as f64
        },
        unique_term_ratio: unique_terms.len() as f64 / num_nodes as f64,
        agreement: mean_support,
    }
}

/// Fixed per-user feature schema. Column order is the export order.
pub const FEATURE_COLUMNS: &[&str] = &[
    "user_variety",
    "user_num_twigs",
    "user_balance",
    "user_disparity",
    "user_disparity_normalized",
    "user_num_conflicts",
    "sapling_variety_mean",
    "sapling_variety_max",
    "sapling_balance_mean",
    "sapling_balance_max",
    "sapling_depth_mean",
    "sapling_depth_max",
    "sapling_breadth_mean",
    "sapling_breadth_max",
    "sapling_num_nodes_mean",
    "sapling_num_nodes_max",
    "sapling_num_leaves_mean",
    "sapling_num_leaves_max",
    "sapling_leaf_ratio_mean",
    "sapling_leaf_ratio_max",
    "sapling_num_children_of_root_mean",
    "sapling_num_children_of_root_max",
    "sapling_unique_twig_ratio_mean",
    "sapling_unique_twig_ratio_max",
    "sapling_unique_term_ratio_mean",
    "sapling_unique_term_ratio_max",
    "sapling_agreement_mean",
    "sapling_agreement_max",
    "root_num_creators_mean",
    "root_num_unique_children_mean",
    "root_coverage_30_mean",
    "root_coverage_50_mean",
    "root_coverage_70_mean",
];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureRow {
    pub user_id: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureTable {
    pub columns: Vec<String>,
    pub rows: Vec<FeatureRow>,
}

impl FeatureTable {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn to_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["user_id".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header)?;
        for row in &self.rows {
            let mut record = vec![row.user_id.clone()];
            record.extend(row.values.iter().map(|v| format!("{v}")));
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn from_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        let columns: Vec<String> = header.iter().skip(1).map(|s| s.to_string()).collect();
        let mut rows = Vec::new();
        for record in r.records() {
            let record = record?;
            let user_id = record
                .get(0)
                .ok_or_else(|| FolkError::InvalidInput("missing user_id column".into()))?
                .to_string();
            let values = record
                .iter()
                .skip(1)
                .map(|v| v.parse::<f64>().unwrap_or(f64::NAN))
                .collect();
            rows.push(FeatureRow { user_id, values });
        }
        Ok(Self { columns, rows })
    }
}

fn mean_max(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let max = values.iter().cloned().fold(f64::MIN, f64::max);
    (mean, max)
}

/// One feature row per user, following `FEATURE_COLUMNS`.
pub fn extract_features(corpus: &Corpus) -> Result<FeatureTable> {
    let agreement = twig_agreement(corpus);
    let mut diversity_cache: HashMap<String, RootDiversity> = HashMap::new();
    let mut rows = Vec::new();
    for user in corpus.users.values() {
        let saplings: Vec<&Sapling> = corpus.user_saplings(&user.user_id).collect();
        if saplings.is_empty() {
            continue;
        }
        let sizes: Vec<usize> = saplings.iter().map(|s| s.num_nodes()).collect();
        let total_nodes: usize = sizes.iter().sum();
        let balance = user_balance(&sizes)?;
        let bags: Vec<&TagBag> = saplings
            .iter()
            .map(|s| &s.nodes[&s.root].tags)
            .collect();
        let (disparity, disparity_norm) = if bags.iter().any(|b| b.is_empty()) {
            (0.0, 0.0)
        } else {
            user_disparity(&bags, total_nodes)?
        };
        let num_twigs: usize = sizes.iter().map(|s| s - 1).sum();
        let conflicts = count_conflicts(corpus, user);

        let per_sapling: Vec<SaplingFeatures> = saplings
            .iter()
            .map(|s| compute_sapling_features(s, &agreement))
            .collect();
        let agg = |f: &dyn Fn(&SaplingFeatures) -> f64| {
            mean_max(&per_sapling.iter().map(f).collect::<Vec<f64>>())
        };
        let (var_mean, var_max) = agg(&|s| s.variety as f64);
        let (bal_mean, bal_max) = agg(&|s| s.balance);
        let (dep_mean, dep_max) = agg(&|s| s.depth as f64);
        let (bre_mean, bre_max) = agg(&|s| s.breadth as f64);
        let (nod_mean, nod_max) = agg(&|s| s.num_nodes as f64);
        let (lea_mean, lea_max) = agg(&|s| s.num_leaves as f64);
        let (lr_mean, lr_max) = agg(&|s| s.leaf_ratio);
        let (ncr_mean, ncr_max) = agg(&|s| s.num_children_of_root as f64);
        let (utw_mean, utw_max) = agg(&|s| s.unique_twig_ratio);
        let (ute_mean, ute_max) = agg(&|s| s.unique_term_ratio);
        let (agr_mean, agr_max) = agg(&|s| s.agreement);

        let mut root_stats: Vec<&RootDiversity> = Vec::new();
        let root_names: BTreeSet<String> = saplings
            .iter()
            .map(|s| s.nodes[&s.root].name.clone())
            .collect();
        for name in &root_names {
            if !diversity_cache.contains_key(name) {
                diversity_cache.insert(name.clone(), root_diversity(corpus, name)?);
            }
        }
        for name in &root_names {
            root_stats.push(&diversity_cache[name]);
        }
        let root_mean = |f: &dyn Fn(&RootDiversity) -> f64| {
            root_stats.iter().map(|r| f(r)).sum::<f64>() / root_stats.len() as f64
        };

        rows.push(FeatureRow {
            user_id: user.user_id.clone(),
            values: vec![
                saplings.len() as f64,
                num_twigs as f64,
                balance,
                disparity,
                disparity_norm,
                conflicts as f64,
                var_mean,
                var_max,
                bal_mean,
                bal_max,
                dep_mean,
                dep_max,
                bre_mean,
                bre_max,
                nod_mean,
                nod_max,
                lea_mean,
                lea_max,
                lr_mean,
                lr_max,
                ncr_mean,
                ncr_max,
                utw_mean,
                utw_max,
                ute_mean,
                ute_max,
                agr_mean,
                agr_max,
                root_mean(&|r| r.num_creators as f64),
                root_mean(&|r| r.num_unique_children as f64),
                root_mean(&|r| r.coverage_30),
                root_mean(&|r| r.coverage_50),
                root_mean(&|r| r.coverage_70),
            ],
        });
    }
    Ok(FeatureTable {
        columns: FEATURE_COLUMNS.iter().map(|s| s.to_string()).collect(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::ingest_saplings_str;

    fn approx(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() < tol, "{a} !~ {b}");
    }

    #[test]
    fn user_balance_uniform_is_one() {
        approx(user_balance(&[5, 5, 5, 5]).unwrap(), 1.0, 1e-12);
    }

    #[test]
    fn user_balance_nine_one() {
        approx(user_balance(&[9, 1]).unwrap(), 0.4690, 1e-4);
    }

    #[test]
    fn user_balance_single_is_zero() {
        approx(user_balance(&[7]).unwrap(), 0.0, 1e-12);
    }

    #[test]
    fn user_balance_zero_size_is_error() {
        assert!(user_balance(&[3, 0]).is_err());
    }

    fn bag(entries: &[(&str, u64)]) -> TagBag {
        let mut b = TagBag::new();
        for (t, c) in entries {
            b.add(t, *c);
        }
        b
    }

    #[test]
    fn disparity_identical_is_zero() {
        let a = bag(&[("x", 2), ("y", 1)]);
        let b = a.clone();
        let (d, _) = user_disparity(&[&a, &b], 4).unwrap();
        approx(d, 0.0, 1e-12);
    }

    #[test]
    fn disparity_disjoint_is_ln2() {
        let a = bag(&[("x", 3)]);
        let b = bag(&[("y", 5)]);
        let (d, _) = user_disparity(&[&a, &b], 2).unwrap();
        approx(d, std::f64::consts::LN_2, 1e-9);
    }

    #[test]
    fn disparity_pairwise_sum() {
        let a = bag(&[("x", 1)]);
        let b = bag(&[("x", 4)]);
        let c = bag(&[("y", 1)]);
        let (d, _) = user_disparity(&[&a, &b, &c], 3).unwrap();
        approx(d, 2.0 * std::f64::consts::LN_2, 1e-9);
    }

    fn corpus_from(text: &str) -> Corpus {
        ingest_saplings_str(text).unwrap()
    }

    #[test]
    fn sapling_variety_formula() {
        let corpus = corpus_from(
            r#"[{"user_id":"u","saplings":[{"sapling_id":"s","root":0,
            "nodes":[{"id":0,"name":"r","children":[1,2,3]},
                     {"id":1,"name":"a"},{"id":2,"name":"b"},{"id":3,"name":"c"}]}]}]"#,
        );
        assert_eq!(sapling_variety(&corpus.saplings["s"]), 7);
    }

    #[test]
    fn sapling_variety_chain() {
        let corpus = corpus_from(
            r#"[{"user_id":"u","saplings":[{"sapling_id":"s","root":0,
            "nodes":[{"id":0,"name":"r","children":[1]},
                     {"id":1,"name":"a","children":[2]},{"id":2,"name":"b"}]}]}]"#,
        );
        assert_eq!(sapling_variety(&corpus.saplings["s"]), 6);
    }

    #[test]
    fn sapling_variety_single_node() {
        let corpus = corpus_from(
            r#"[{"user_id":"u","saplings":[{"sapling_id":"s","root":0,
            "nodes":[{"id":0,"name":"r"}]}]}]"#,
        );
        assert_eq!(sapling_variety(&corpus.saplings["s"]), 1);
    }

    #[test]
    fn level_balance_worked_example() {
        // 4 nodes with 3, 3, 1, 2 children: entropy of (3/9,3/9,1/9,2/9) / ln 4
        approx(level_balance_term(&[3, 3, 1, 2]), 0.9455, 1e-4);
    }

    #[test]
    fn balance_star_is_one() {
        let corpus = corpus_from(
            r#"[{"user_id":"u","saplings":[{"sapling_id":"s","root":0,
            "nodes":[{"id":0,"name":"r","children":[1,2,3]},
                     {"id":1,"name":"a"},{"id":2,"name":"b"},{"id":3,"name":"c"}]}]}]"#,
        );
        approx(sapling_balance(&corpus.saplings["s"]), 1.0, 1e-12);
    }

    #[test]
    fn balance_perfect_binary_tree_is_one() {
        let corpus = corpus_from(
            r#"[{"user_id":"u","saplings":[{"sapling_id":"s","root":0,
            "nodes":[{"id":0,"name":"r","children":[1,2]},
                     {"id":1,"name":"a","children":[3,4]},
                     {"id":2,"name":"b","children":[5,6]},
                     {"id":3,"name":"c"},{"id":4,"name":"d"},
                     {"id":5,"name":"e"},{"id":6,"name":"f"}]}]}]"#,
        );
        approx(sapling_balance(&corpus.saplings["s"]), 1.0, 1e-12);
    }

    #[test]
    fn conflicts_reversed_edge() {
        let corpus = corpus_from(
            r#"[{"user_id":"u","saplings":[
            {"sapling_id":"s1","root":0,"nodes":[
                {"id":0,"name":"journey","children":[1]},{"id":1,"name":"los angeles"}]},
            {"sapling_id":"s2","root":0,"nodes":[
                {"id":0,"name":"los angeles","children":[1]},{"id":1,"name":"journey"}]}]}]"#,
        );
        assert_eq!(count_conflicts(&corpus, &corpus.users["u"]), 1);
    }

    #[test]
    fn conflicts_none() {
        let corpus = corpus_from(
            r#"[{"user_id":"u","saplings":[
            {"sapling_id":"s1","root":0,"nodes":[
                {"id":0,"name":"a","children":[1]},{"id":1,"name":"b"}]}]}]"#,
        );
        assert_eq!(count_conflicts(&corpus, &corpus.users["u"]), 0);
    }

    #[test]
    fn conflicts_counted_once_across_three_saplings() {
        let corpus = corpus_from(
            r#"[{"user_id":"u","saplings":[
            {"sapling_id":"s1","root":0,"nodes":[
                {"id":0,"name":"a","children":[1]},{"id":1,"name":"b"}]},
            {"sapling_id":"s2","root":0,"nodes":[
                {"id":0,"name":"b","children":[1]},{"id":1,"name":"a"}]},
            {"sapling_id":"s3","root":0,"nodes":[
                {"id":0,"name":"a","children":[1]},{"id":1,"name":"b"}]}]}]"#,
        );
        assert_eq!(count_conflicts(&corpus, &corpus.users["u"]), 1);
    }

    #[test]
    fn agreement_counts_distinct_users() {
        let corpus = corpus_from(
            r#"[{"user_id":"u1","saplings":[
            {"sapling_id":"s1","root":0,"nodes":[
                {"id":0,"name":"a","children":[1]},{"id":1,"name":"b"}]},
            {"sapling_id":"s2","root":0,"nodes":[
                {"id":0,"name":"a","children":[1]},{"id":1,"name":"b"}]}]},
            {"user_id":"u2","saplings":[
            {"sapling_id":"s3","root":0,"nodes":[
                {"id":0,"name":"a","children":[1]},{"id":1,"name":"b"}]}]},
            {"user_id":"u3","saplings":[
            {"sapling_id":"s4","root":0,"nodes":[
                {"id":0,"name":"a","children":[1]},{"id":1,"name":"b"}]}]}]"#,
        );
        let agreement = twig_agreement(&corpus);
        assert_eq!(agreement[&("a".to_string(), "b".to_string())], 3);
    }

    #[test]
    fn agreement_unique_twigs_is_one() {
        let corpus = corpus_from(
            r#"[{"user_id":"u1","saplings":[
            {"sapling_id":"s1","root":0,"nodes":[
                {"id":0,"name":"a","children":[1]},{"id":1,"name":"b"}]}]}]"#,
        );
        let agreement = twig_agreement(&corpus);
        let features = compute_sapling_features(&corpus.saplings["s1"], &agreement);
        approx(features.agreement, 1.0, 1e-12);
    }

    #[test]
    fn root_diversity_flat_closed_form() {
        // 5 roots named "misc", each with one distinct child occurring once.
        let corpus = corpus_from(
            r#"[{"user_id":"u1","saplings":[
            {"sapling_id":"s1","root":0,"nodes":[{"id":0,"name":"misc","children":[1]},{"id":1,"name":"c1"}]},
            {"sapling_id":"s2","root":0,"nodes":[{"id":0,"name":"misc","children":[1]},{"id":1,"name":"c2"}]},
            {"sapling_id":"s3","root":0,"nodes":[{"id":0,"name":"misc","children":[1]},{"id":1,"name":"c3"}]},
            {"sapling_id":"s4","root":0,"nodes":[{"id":0,"name":"misc","children":[1]},{"id":1,"name":"c4"}]},
            {"sapling_id":"s5","root":0,"nodes":[{"id":0,"name":"misc","children":[1]},{"id":1,"name":"c5"}]}]}]"#,
        );
        let diversity = root_diversity(&corpus, "misc").unwrap();
        let k = 5.0;
        approx(
            diversity.coverage_70,
            (0.7f64 * k).ceil() / k * 100.0,
            1e-9,
        );
        assert!(diversity.coverage_30 <= diversity.coverage_50);
        assert!(diversity.coverage_50 <= diversity.coverage_70);
        assert!(diversity.coverage_70 <= 100.0);
    }

    #[test]
    fn root_diversity_unknown_root() {
        let corpus = corpus_from(
            r#"[{"user_id":"u1","saplings":[
            {"sapling_id":"s1","root":0,"nodes":[{"id":0,"name":"a"}]}]}]"#,
        );
        assert!(matches!(
            root_diversity(&corpus, "nope"),
            Err(FolkError::UnknownRoot(_))
        ));
    }

    #[test]
    fn extract_features_degenerate_user() {
        let corpus = corpus_from(
            r#"[{"user_id":"u1","saplings":[
            {"sapling_id":"s1","root":0,"nodes":[{"id":0,"name":"a"}]}]}]"#,
        );
        let table = extract_features(&corpus).unwrap();
        assert_eq!(table.rows.len(), 1);
        let row = &table.rows[0];
        let get = |name: &str| row.values[table.column_index(name).unwrap()];
        assert_eq!(get("user_variety"), 1.0);
        assert_eq!(get("user_num_twigs"), 0.0);
        assert_eq!(get("user_balance"), 0.0);
        assert_eq!(get("user_disparity"), 0.0);
    }

    #[test]
    fn features_invariant_under_relabeling() {
        // Same structure, different ids and child order, disjoint vocab but
        // identical tag-distribution shape.
        let corpus_a = corpus_from(
            r#"[{"user_id":"u1","saplings":[{"sapling_id":"s1","root":0,"nodes":[
                {"id":0,"name":"aaa","tags":{"t1":2},"children":[1,2]},
                {"id":1,"name":"bbb","tags":{"t2":1}},{"id":2,"name":"ccc","tags":{"t3":1}}]}]}]"#,
        );
        let corpus_b = corpus_from(
            r#"[{"user_id":"u9","saplings":[{"sapling_id":"z","root":10,"nodes":[
                {"id":12,"name":"yyy","tags":{"q3":1}},
                {"id":10,"name":"xxx","tags":{"q1":2},"children":[12,11]},
                {"id":11,"name":"zzz","tags":{"q2":1}}]}]}]"#,
        );
        let ta = extract_features(&corpus_a).unwrap();
        let tb = extract_features(&corpus_b).unwrap();
        for (x, y) in ta.rows[0].values.iter().zip(tb.rows[0].values.iter()) {
            approx(*x, *y, 1e-12);
        }
    }

    #[test]
    fn schema_covers_ranked_feature_families() {
        for needle in [
            "sapling_depth",
            "sapling_num_leaves",
            "sapling_balance",
            "user_balance",
            "sapling_variety",
            "sapling_num_children_of_root",
            "root_coverage_50",
            "user_variety",
            "user_disparity_normalized",
            "user_num_twigs",
            "sapling_unique_twig_ratio",
            "sapling_unique_term_ratio",
            "user_num_conflicts",
        ] {
            assert!(
                FEATURE_COLUMNS.iter().any(|c| c.starts_with(needle)),
                "missing feature family {needle}"
            );
        }
    }
}
