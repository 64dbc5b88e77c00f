//! Binary expert/novice classification: L2-regularized logistic regression
//! trained by deterministic full-batch gradient descent, stratified cross
//! validation, iterative self-training, and feature ranking.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FolkError, Result};
use crate::features::FeatureTable;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabeledExample {
    pub user_id: String,
    /// Raw (unstandardized) feature vector; NaN marks a missing value.
    pub features: Vec<f64>,
    /// +1 expert, -1 novice.
    pub label: i8,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub stddevs: Vec<f64>,
}

impl Standardization {
    /// Column means and stddevs from training data only; missing values
    /// are ignored when computing the statistics.
    pub fn fit(examples: &[LabeledExample]) -> Self {
        let dim = examples[0].features.len();
        let mut means = vec![0.0; dim];
        let mut stddevs = vec![0.0; dim];
        for d in 0..dim {
            let values: Vec<f64> = examples
                .iter()
                .map(|e| e.features[d])
                .filter(|v| v.is_finite())
                .collect();
            let mean = if values.is_empty() {
                0.0
            } else {
                values.iter().sum::<f64>() / values.len() as f64
            };
            let var = if values.len() < 2 {
                0.0
            } else {
                values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64
            };
            means[d] = mean;
            stddevs[d] = var.sqrt();
        }
        Self { means, stddevs }
    }

    /// Standardize a raw vector; missing values are imputed with the
    /// training-column mean (standardized value 0).
    pub fn apply(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .enumerate()
            .map(|(d, &v)| {
                if !v.is_finite() {
                    0.0
                } else if self.stddevs[d] > 0.0 {
                    (v - self.means[d]) / self.stddevs[d]
                } else {
                    0.0
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub regularization: f64,
    pub standardization: Standardization,
    pub schema_hash: u64,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// FNV-1a over column names, to detect schema drift between training and
/// prediction time.
pub fn schema_hash(columns: &[String]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for column in columns {
        for byte in column.bytes() {
            hash ^= byte as u64;
            hash = hash.wrapping_mul(0x100000001b3);
        }
        hash ^= 0x1e;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

const MAX_ITERATIONS: usize = 10_000;
const GRADIENT_TOL: f64 = 1e-6;

/// Train by full-batch gradient descent from zero weights with a fixed
/// step schedule; converged when the gradient norm drops below 1e-6.
pub fn train(examples: &[LabeledExample], regularization: f64) -> Result<ClassifierModel> {
    let positives = examples.iter().filter(|e| e.label > 0).count();
    if positives == 0 || positives == examples.len() {
        return Err(FolkError::SingleClass);
    }
    let standardization = Standardization::fit(examples);
    let data: Vec<(Vec<f64>, f64)> = examples
        .iter()
        .map(|e| (standardization.apply(&e.features), e.label as f64))
        .collect();
    let dim = data[0].0.len();
    let n = data.len() as f64;

    let mut weights = vec![0.0; dim];
    let mut bias = 0.0;
    let step = 1.0;
    for iteration in 0..MAX_ITERATIONS {
        let mut grad_w = vec![0.0; dim];
        let mut grad_b = 0.0;
        for (x, y) in &data {
            let z = dot(&weights, x) + bias;
            // d/dz of log(1 + exp(-y z)) = -y * sigmoid(-y z)
            let g = -y * sigmoid(-y * z);
            for d in 0..dim {
                grad_w[d] += g * x[d];
            }
            grad_b += g;
        }
        for d in 0..dim {
            grad_w[d] = grad_w[d] / n + regularization * weights[d];
        }
        grad_b /= n;
        let norm = (grad_w.iter().map(|g| g * g).sum::<f64>() + grad_b * grad_b).sqrt();
        if norm < GRADIENT_TOL {
            break;
        }
        // 1/sqrt decay keeps the schedule fixed and deterministic.
        let lr = step / (1.0 + (iteration as f64).sqrt() * 0.01);
        for d in 0..dim {
            weights[d] -= lr * grad_w[d];
        }
        bias -= lr * grad_b;
    }
    Ok(ClassifierModel {
        weights,
        bias,
        regularization,
        standardization,
        schema_hash: 0,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Expert score in (0,1). Expert iff score >= 0.5 (the boundary counts as
/// expert).
pub fn classify(model: &ClassifierModel, features: &[f64]) -> Result<(bool, f64)> {
    if features.len() != model.weights.len() {
        return Err(FolkError::FeatureLengthMismatch {
            expected: model.weights.len(),
            got: features.len(),
        });
    }
    let x = model.standardization.apply(features);
    let score = sigmoid(dot(&model.weights, &x) + model.bias);
    Ok((score >= 0.5, score))
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
}

fn prf(tp: usize, fp: usize, fn_: usize) -> Metrics {
    let precision = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fn_ == 0 {
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    let f_score = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Metrics {
        precision,
        recall,
        f_score,
    }
}

/// Stratified k-fold cross validation; positive-class metrics averaged
/// over folds. Deterministic given the seed.
pub fn cross_validate(
    examples: &[LabeledExample],
    folds: usize,
    regularization: f64,
    seed: u64,
) -> Result<Metrics> {
    if folds < 2 {
        return Err(FolkError::InvalidInput("folds must be >= 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pos: Vec<usize> = (0..examples.len()).filter(|&i| examples[i].label > 0).collect();
    let mut neg: Vec<usize> = (0..examples.len()).filter(|&i| examples[i].label < 0).collect();
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);

    let mut fold_of = vec![0usize; examples.len()];
    for (k, &i) in pos.iter().enumerate() {
        fold_of[i] = k % folds;
    }
    for (k, &i) in neg.iter().enumerate() {
        fold_of[i] = k % folds;
    }

    let mut totals = (0.0, 0.0, 0.0);
    for fold in 0..folds {
        let train_set: Vec<LabeledExample> = examples
            .iter()
            .enumerate()
            .filter(|(i, _)| fold_of[*i] != fold)
            .map(|(_, e)| e.clone())
            .collect();
        let test_set: Vec<&LabeledExample> = examples
            .iter()
            .enumerate()
            .filter(|(i, _)| fold_of[*i] == fold)
            .map(|(_, e)| e)
            .collect();
        if test_set.is_empty() {
            continue;
        }
        let model = match train(&train_set, regularization) {
            Ok(m) => m,
            // A fold stripped of one class contributes zero-TP metrics.
            Err(FolkError::SingleClass) => {
                continue;
            }
            Err(e) => return Err(e),
        };
        let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
        for example in test_set {
            let (is_expert, _) = classify(&model, &example.features)?;
            match (is_expert, example.label > 0) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        let m = prf(tp, fp, fn_);
        totals.0 += m.precision;
        totals.1 += m.recall;
        totals.2 += m.f_score;
    }
    Ok(Metrics {
        precision: totals.0 / folds as f64,
        recall: totals.1 / folds as f64,
        f_score: totals.2 / folds as f64,
    })
}

/// Resolves queried user ids to expert/novice labels. In tests this is the
/// generator's ground truth; in production a human-edited file re-read per
/// iteration.
pub trait LabelOracle {
    fn label(&mut self, user_id: &str) -> Result<bool>;
}

/// Oracle backed by a `user_id,label` CSV, re-read at each call batch.
pub struct FileOracle {
    pub path: std::path::PathBuf,
}

impl LabelOracle for FileOracle {
    fn label(&mut self, user_id: &str) -> Result<bool> {
        let labels = read_labels(&self.path)?;
        labels
            .get(user_id)
            .copied()
            .ok_or_else(|| FolkError::OracleFailure(format!("no label for user `{user_id}`")))
    }
}

/// Parse a `user_id,label` CSV with label in {expert, novice}.
pub fn read_labels(path: &std::path::Path) -> Result<BTreeMap<String, bool>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)?;
    let mut labels = BTreeMap::new();
    for (lineno, record) in reader.records().enumerate() {
        let record = record?;
        let user = record.get(0).unwrap_or("").trim().to_string();
        if user.is_empty() || user == "user_id" {
            continue;
        }
        let label = record.get(1).unwrap_or("").trim();
        let is_expert = match label {
            "expert" => true,
            "novice" => false,
            other => {
                return Err(FolkError::MalformedRecord {
                    locator: format!("labels line {}", lineno + 1),
                    reason: format!("unknown label `{other}`"),
                })
            }
        };
        labels.insert(user, is_expert);
    }
    Ok(labels)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelfTrainState {
    pub iteration: usize,
    pub training_ids: Vec<String>,
    pub positives_found: usize,
    pub metrics_history: Vec<Metrics>,
    pub training_sizes: Vec<usize>,
    pub model: Option<ClassifierModel>,
}

/// Iterative self-training: train, predict positives on the pool, have the
/// oracle label the new positives, fold them in, repeat. Stops at
/// `max_iter` or when an iteration discovers no new positives.
pub fn self_train(
    initial: &[LabeledExample],
    pool: &[LabeledExample],
    oracle: &mut dyn LabelOracle,
    max_iter: usize,
    regularization: f64,
    cv_seed: u64,
) -> Result<SelfTrainState> {
    let mut training: Vec<LabeledExample> = initial.to_vec();
    let mut known: BTreeSet<String> = training.iter().map(|e| e.user_id.clone()).collect();
    let mut state = SelfTrainState {
        iteration: 0,
        training_ids: known.iter().cloned().collect(),
        positives_found: training.iter().filter(|e| e.label > 0).count(),
        metrics_history: Vec::new(),
        training_sizes: Vec::new(),
        model: None,
    };

    for _ in 0..max_iter {
        state.iteration += 1;
        let model = train(&training, regularization)?;
        let metrics = cross_validate(&training, 10.min(training.len()), regularization, cv_seed)?;
        state.metrics_history.push(metrics);
        state.training_sizes.push(training.len());

        let mut new_examples: Vec<LabeledExample> = Vec::new();
        for candidate in pool {
            if known.contains(&candidate.user_id) {
                continue;
            }
            let (is_expert, _) = classify(&model, &candidate.features)?;
            if !is_expert {
                continue;
            }
            let truth = match oracle.label(&candidate.user_id) {
                Ok(t) => t,
                Err(e) => {
                    // Keep the partial state on oracle failure.
                    state.model = Some(model);
                    state.training_ids = known.iter().cloned().collect();
                    return Err(e);
                }
            };
            let mut labeled = candidate.clone();
            labeled.label = if truth { 1 } else { -1 };
            new_examples.push(labeled);
        }
        state.model = Some(model);
        if new_examples.is_empty() {
            break;
        }
        for example in new_examples {
            known.insert(example.user_id.clone());
            if example.label > 0 {
                state.positives_found += 1;
            }
            training.push(example);
        }
    }
    state.training_ids = known.iter().cloned().collect();
    Ok(state)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureRanking {
    pub feature: String,
    pub info_gain: f64,
    pub chi_squared: f64,
    pub model_weight: f64,
    pub info_gain_rank: usize,
    pub chi_squared_rank: usize,
    pub model_weight_rank: usize,
    pub average_rank: f64,
}

const DISCRETIZATION_BINS: usize = 10;

/// Equal-frequency bin assignment for one feature column.
fn discretize(values: &[f64], bins: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut assignment = vec![0usize; values.len()];
    for (rank, &i) in order.iter().enumerate() {
        assignment[i] = rank * bins / values.len();
    }
    // Ties must land in the same bin.
    let mut by_value: Vec<(usize, usize)> = Vec::new();
    for window in order.windows(2) {
        if values[window[0]] == values[window[1]] {
            by_value.push((window[0], window[1]));
        }
    }
    for (a, b) in by_value {
        assignment[b] = assignment[a];
    }
    assignment
}

fn entropy_of_counts(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.ln()
        })
        .sum()
}

fn info_gain_and_chi2(bins: &[usize], labels: &[i8]) -> (f64, f64) {
    let n = labels.len();
    let num_bins = bins.iter().max().map_or(0, |&b| b + 1);
    let mut joint = vec![[0usize; 2]; num_bins];
    let mut label_counts = [0usize; 2];
    for (b, &y) in bins.iter().zip(labels) {
        let c = if y > 0 { 1 } else { 0 };
        joint[*b][c] += 1;
        label_counts[c] += 1;
    }
    let label_entropy = entropy_of_counts(&label_counts);
    let mut conditional = 0.0;
    let mut chi2 = 0.0;
    for row in &joint {
        let row_total = row[0] + row[1];
        if row_total == 0 {
            continue;
        }
        conditional += row_total as f64 / n as f64 * entropy_of_counts(row);
        for c in 0..2 {
            let expected = row_total as f64 * label_counts[c] as f64 / n as f64;
            if expected > 0.0 {
                chi2 += (row[c] as f64 - expected).powi(2) / expected;
            }
        }
    }
    ((label_entropy - conditional).max(0.0), chi2)
}

fn ranks_descending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let mut ranks = vec![0usize; scores.len()];
    for (rank, &i) in order.iter().enumerate() {
        ranks[i] = rank + 1;
    }
    ranks
}

/// Rank features by information gain, chi-squared (both on 10
/// equal-frequency bins), and absolute standardized model weight, plus the
/// average rank across the three methods. Sorted by average rank.
pub fn rank_features(
    examples: &[LabeledExample],
    columns: &[String],
    regularization: f64,
) -> Result<Vec<FeatureRanking>> {
    let positives = examples.iter().filter(|e| e.label > 0).count();
    if positives < 2 || examples.len() - positives < 2 {
        return Err(FolkError::InvalidInput(
            "need at least 2 examples per class".into(),
        ));
    }
    let model = train(examples, regularization)?;
    let labels: Vec<i8> = examples.iter().map(|e| e.label).collect();
    let dim = columns.len();
    let mut info_gains = vec![0.0; dim];
    let mut chi2s = vec![0.0; dim];
    for d in 0..dim {
        let values: Vec<f64> = examples
            .iter()
            .map(|e| {
                if e.features[d].is_finite() {
                    e.features[d]
                } else {
                    model.standardization.means[d]
                }
            })
            .collect();
        let constant = values.windows(2).all(|w| w[0] == w[1]);
        if constant {
            continue;
        }
        let bins = discretize(&values, DISCRETIZATION_BINS);
        let (gain, chi2) = info_gain_and_chi2(&bins, &labels);
        info_gains[d] = gain;
        chi2s[d] = chi2;
    }
    let weights: Vec<f64> = model.weights.iter().map(|w| w.abs()).collect();
    let gain_ranks = ranks_descending(&info_gains);
    let chi2_ranks = ranks_descending(&chi2s);
    let weight_ranks = ranks_descending(&weights);

    let mut rankings: Vec<FeatureRanking> = (0..dim)
        .map(|d| FeatureRanking {
            feature: columns[d].clone(),
            info_gain: info_gains[d],
            chi_squared: chi2s[d],
            model_weight: weights[d],
            info_gain_rank: gain_ranks[d],
            chi_squared_rank: chi2_ranks[d],
            model_weight_rank: weight_ranks[d],
            average_rank: (gain_ranks[d] + chi2_ranks[d] + weight_ranks[d]) as f64 / 3.0,
        })
        .collect();
    rankings.sort_by(|a, b| {
        a.average_rank
            .partial_cmp(&b.average_rank)
            .unwrap()
            .then(a.feature.cmp(&b.feature))
    });
    Ok(rankings)
}

/// Join a feature table with a label map into labeled examples.
pub fn labeled_examples(
    table: &FeatureTable,
    labels: &BTreeMap<String, bool>,
) -> (Vec<LabeledExample>, Vec<LabeledExample>) {
    let mut labeled = Vec::new();
    let mut unlabeled = Vec::new();
    for row in &table.rows {
        match labels.get(&row.user_id) {
            Some(&is_expert) => labeled.push(LabeledExample {
                user_id: row.user_id.clone(),
                features: row.values.clone(),
                label: if is_expert { 1 } else { -1 },
            }),
            None => unlabeled.push(LabeledExample {
                user_id: row.user_id.clone(),
                features: row.values.clone(),
                label: 0,
            }),
        }
    }
    (labeled, unlabeled)
}

/// In-memory oracle for tests and synthetic runs.
pub struct MapOracle {
    pub truth: HashMap<String, bool>,
}

impl LabelOracle for MapOracle {
    fn label(&mut self, user_id: &str) -> Result<bool> {
        self.truth
            .get(user_id)
            .copied()
            .ok_or_else(|| FolkError::OracleFailure(format!("unknown user `{user_id}`")))
    }
}
