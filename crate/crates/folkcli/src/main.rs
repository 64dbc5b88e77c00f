//! Batch front end: each subcommand reads plain files, writes plain files,
//! and records a manifest so runs can be reproduced byte-for-byte.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use folkrap::annotation::{ingest_saplings, ReferenceTaxonomy};
use folkrap::classifier::{
    self, read_labels, ClassifierModel, FileOracle, LabeledExample,
};
use folkrap::error::FolkError;
use folkrap::evaluation::{
    evaluate_report, preference_sweep, swap_sweep, EvalReport, SweepResult,
};
use folkrap::features::{extract_features, FeatureTable};
use folkrap::pipeline::{
    generate_synthetic, run_strategy, RunManifest, Strategy, StrategyReport, SyntheticSpec,
};
use folkrap::rap::RapConfig;

const EXIT_INPUT_ERROR: u8 = 2;
const EXIT_CONVERGENCE_WARNING: u8 = 3;
const EXIT_INVARIANT_VIOLATION: u8 = 4;

#[derive(Parser)]
#[command(
    name = "folkrap",
    about = "Folksonomy learning from user-created saplings",
    version
)]
struct Cli {
    /// Cap the worker thread count; 1 reproduces parallel results exactly.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RapArgs {
    /// Message damping factor λ.
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    /// Maximum message-passing sweeps.
    #[arg(long, default_value_t = 2000)]
    max_sweeps: usize,
    /// Sweeps of unchanged exemplars/net similarity required to converge.
    #[arg(long, default_value_t = 10)]
    stable_window: usize,
}

impl RapArgs {
    fn config(&self) -> RapConfig {
        RapConfig {
            damping: self.lambda,
            max_sweeps: self.max_sweeps,
            stable_window: self.stable_window,
            ..RapConfig::default()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Validate a corpus file and print a summary.
    Ingest { corpus: PathBuf },
    /// Extract per-user expertise features to CSV.
    Features {
        corpus: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Train the expert classifier on labeled features.
    TrainExperts {
        features: PathBuf,
        labels: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value_t = 1e-3)]
        regularization: f64,
    },
    /// Iterative self-training against a label oracle file.
    SelfTrain {
        features: PathBuf,
        /// Initial labeled users (user_id,label CSV).
        labels: PathBuf,
        /// Oracle consulted for newly predicted experts.
        #[arg(long)]
        oracle: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Metrics history CSV.
        #[arg(long)]
        history: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        max_iter: usize,
        #[arg(long, default_value_t = 1e-3)]
        regularization: f64,
    },
    /// Classify users with a trained model; writes a user_id,label CSV.
    Classify {
        features: PathBuf,
        model: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Learn a folksonomy for a seed term.
    Learn {
        corpus: PathBuf,
        #[arg(long)]
        seed: String,
        #[arg(long, default_value = "m1")]
        strategy: String,
        /// user_id,label CSV naming the experts (required for m2/m3).
        #[arg(long)]
        experts: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
        #[command(flatten)]
        rap: RapArgs,
    },
    /// Evaluate a learned folksonomy against a reference taxonomy.
    Evaluate {
        /// folksonomy.json written by `learn`.
        folksonomy: PathBuf,
        /// Tab-separated parent/child edge list.
        reference: PathBuf,
    },
    /// Robustness sweeps over preference multipliers or expert swaps.
    Sweep {
        #[command(subcommand)]
        kind: SweepKind,
    },
    /// Generate a synthetic corpus with planted ground truth.
    Synth {
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        rng: u64,
        #[arg(long, default_value_t = 10)]
        experts: usize,
        #[arg(long, default_value_t = 40)]
        novices: usize,
        #[arg(long, default_value_t = 0.3)]
        vagueness_rate: f64,
        #[arg(long, default_value_t = 0.2)]
        noise_rate: f64,
    },
}

#[derive(Subcommand)]
enum SweepKind {
    /// TO per expert preference multiplier.
    Preference {
        corpus: PathBuf,
        reference: PathBuf,
        #[arg(long)]
        seed: String,
        #[arg(long)]
        experts: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,0.5,1.0,1.5,2.0,3.0")]
        multipliers: Vec<f64>,
        #[arg(short, long)]
        output: PathBuf,
        #[command(flatten)]
        rap: RapArgs,
    },
    /// TO per percentage of expert/novice preference swaps.
    Swap {
        corpus: PathBuf,
        reference: PathBuf,
        #[arg(long)]
        seed: String,
        #[arg(long)]
        experts: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,25,50,75,100")]
        percents: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        rng: u64,
        #[arg(short, long)]
        output: PathBuf,
        #[command(flatten)]
        rap: RapArgs,
    },
}

/// Serialized model file: the trained model plus the feature schema it
/// expects.
#[derive(Serialize, serde::Deserialize)]
struct ModelFile {
    columns: Vec<String>,
    model: ClassifierModel,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .is_err()
        {
            eprintln!("error kind=invalid_input code=2 msg=\"failed to configure thread pool\"");
            return ExitCode::from(EXIT_INPUT_ERROR);
        }
    }
    match run(cli.command, cli.threads) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            let (code, kind) = classify_error(&e);
            let msg = e.to_string().replace('"', "'");
            eprintln!("error kind={kind} code={code} msg=\"{msg}\"");
            ExitCode::from(code)
        }
    }
}

fn classify_error(e: &FolkError) -> (u8, &'static str) {
    match e {
        FolkError::NonFiniteMessage { .. } => (EXIT_INVARIANT_VIOLATION, "non_finite_message"),
        FolkError::ConstraintViolation(_) => (EXIT_INVARIANT_VIOLATION, "constraint_violation"),
        FolkError::Io(_) => (EXIT_INPUT_ERROR, "io"),
        FolkError::Json(_) => (EXIT_INPUT_ERROR, "json"),
        FolkError::Csv(_) => (EXIT_INPUT_ERROR, "csv"),
        FolkError::MalformedRecord { .. } => (EXIT_INPUT_ERROR, "malformed_record"),
        FolkError::DuplicateSapling(_) => (EXIT_INPUT_ERROR, "duplicate_sapling"),
        FolkError::DanglingChild { .. } => (EXIT_INPUT_ERROR, "dangling_child"),
        FolkError::MissingRoot(_) => (EXIT_INPUT_ERROR, "missing_root"),
        FolkError::UnknownRoot(_) => (EXIT_INPUT_ERROR, "unknown_root"),
        FolkError::SingleClass => (EXIT_INPUT_ERROR, "single_class"),
        FolkError::FeatureLengthMismatch { .. } => (EXIT_INPUT_ERROR, "feature_length_mismatch"),
        FolkError::OracleFailure(_) => (EXIT_INPUT_ERROR, "oracle_failure"),
        FolkError::EmptyMatrix => (EXIT_INPUT_ERROR, "empty_matrix"),
        FolkError::EmptyFolksonomy => (EXIT_INPUT_ERROR, "empty_folksonomy"),
        FolkError::NoSharedTerms => (EXIT_INPUT_ERROR, "no_shared_terms"),
        FolkError::InvalidInput(_) => (EXIT_INPUT_ERROR, "invalid_input"),
    }
}

fn run(command: Command, threads: Option<usize>) -> Result<u8, FolkError> {
    match command {
        Command::Ingest { corpus } => {
            let c = ingest_saplings(&corpus)?;
            println!(
                "users={} saplings={} nodes={}",
                c.users.len(),
                c.saplings.len(),
                c.num_nodes()
            );
            Ok(0)
        }
        Command::Features { corpus, output } => {
            let c = ingest_saplings(&corpus)?;
            let table = extract_features(&c)?;
            let file = fs::File::create(&output)?;
            table.to_csv(file)?;
            let mut manifest = RunManifest::new("features");
            manifest.threads = threads;
            manifest
                .inputs
                .insert("corpus".into(), corpus.display().to_string());
            manifest
                .outputs
                .insert("features".into(), output.display().to_string());
            write_manifest(&sibling_manifest(&output), &manifest)?;
            println!("features users={} columns={}", table.rows.len(), table.columns.len());
            Ok(0)
        }
        Command::TrainExperts {
            features,
            labels,
            output,
            regularization,
        } => {
            let table = FeatureTable::from_csv(fs::File::open(&features)?)?;
            let label_map = read_labels(&labels)?;
            let (labeled, _) = classifier::labeled_examples(&table, &label_map);
            let model = classifier::train(&labeled, regularization)?;
            let folds = 10.min(labeled.len());
            let metrics = classifier::cross_validate(&labeled, folds, regularization, 7)?;
            let file = ModelFile {
                columns: table.columns.clone(),
                model,
            };
            fs::write(&output, serde_json::to_string_pretty(&file)? + "\n")?;
            println!(
                "trained examples={} precision={:.4} recall={:.4} f={:.4}",
                labeled.len(),
                metrics.precision,
                metrics.recall,
                metrics.f_score
            );
            Ok(0)
        }
        Command::SelfTrain {
            features,
            labels,
            oracle,
            output,
            history,
            max_iter,
            regularization,
        } => {
            let table = FeatureTable::from_csv(fs::File::open(&features)?)?;
            let label_map = read_labels(&labels)?;
            let (labeled, pool) = classifier::labeled_examples(&table, &label_map);
            let mut oracle = FileOracle { path: oracle };
            let state = classifier::self_train(
                &labeled,
                &pool,
                &mut oracle,
                max_iter,
                regularization,
                7,
            )?;
            let model = state.model.clone().ok_or(FolkError::SingleClass)?;
            let file = ModelFile {
                columns: table.columns.clone(),
                model,
            };
            fs::write(&output, serde_json::to_string_pretty(&file)? + "\n")?;
            if let Some(history_path) = history {
                let mut csv = String::from("iteration,training_size,precision,recall,f\n");
                for (i, (size, m)) in state
                    .training_sizes
                    .iter()
                    .zip(&state.metrics_history)
                    .enumerate()
                {
                    csv.push_str(&format!(
                        "{},{},{},{},{}\n",
                        i + 1,
                        size,
                        m.precision,
                        m.recall,
                        m.f_score
                    ));
                }
                fs::write(&history_path, csv)?;
            }
            println!(
                "self-train iterations={} training={} positives={}",
                state.iteration,
                state.training_ids.len(),
                state.positives_found
            );
            Ok(0)
        }
        Command::Classify {
            features,
            model,
            output,
        } => {
            let table = FeatureTable::from_csv(fs::File::open(&features)?)?;
            let file: ModelFile = serde_json::from_str(&fs::read_to_string(&model)?)?;
            if file.columns != table.columns {
                return Err(FolkError::InvalidInput(
                    "feature columns do not match the model's schema".to_string(),
                ));
            }
            let mut out = String::from("user_id,label\n");
            for row in &table.rows {
                let example = LabeledExample {
                    user_id: row.user_id.clone(),
                    features: row.values.clone(),
                    label: 0,
                };
                let (is_expert, _) = classifier::classify(&file.model, &example.features)?;
                out.push_str(&format!(
                    "{},{}\n",
                    row.user_id,
                    if is_expert { "expert" } else { "novice" }
                ));
            }
            match output {
                Some(path) => fs::write(path, out)?,
                None => print!("{out}"),
            }
            Ok(0)
        }
        Command::Learn {
            corpus,
            seed,
            strategy,
            experts,
            output,
            rap,
        } => {
            let c = ingest_saplings(&corpus)?;
            let strategy = Strategy::parse(&strategy)?;
            let expert_set: BTreeSet<String> = match &experts {
                Some(path) => read_labels(path)?
                    .into_iter()
                    .filter(|(_, e)| *e)
                    .map(|(u, _)| u)
                    .collect(),
                None => BTreeSet::new(),
            };
            if strategy != Strategy::M1 && expert_set.is_empty() {
                return Err(FolkError::InvalidInput(
                    "strategies m2/m3 need a nonempty expert set (--experts)".to_string(),
                ));
            }
            let config = rap.config();
            let report = run_strategy(&c, &seed, strategy, &expert_set, &config)?;
            fs::create_dir_all(&output)?;
            fs::write(
                output.join("folksonomy.json"),
                serde_json::to_string_pretty(&report)? + "\n",
            )?;
            let mut text = String::new();
            for tree in &report.folksonomy.trees {
                text.push_str(&tree.render());
                text.push('\n');
            }
            fs::write(output.join("folksonomy.txt"), text)?;
            let mut diag = Vec::new();
            report.diagnostics.to_csv(&mut diag)?;
            fs::write(output.join("diagnostics.csv"), diag)?;
            let mut manifest = RunManifest::new("learn");
            manifest.seed_term = Some(seed.clone());
            manifest.strategy = Some(strategy.name().to_string());
            manifest.rap = config;
            manifest.threads = threads;
            manifest
                .inputs
                .insert("corpus".into(), corpus.display().to_string());
            if let Some(e) = &experts {
                manifest.inputs.insert("experts".into(), e.display().to_string());
            }
            for name in ["folksonomy.json", "folksonomy.txt", "diagnostics.csv"] {
                manifest
                    .outputs
                    .insert(name.into(), output.join(name).display().to_string());
            }
            write_manifest(&output.join("manifest.json"), &manifest)?;
            println!(
                "learned trees={} depth={} nodes={} pct_expert={:.2}",
                report.folksonomy.trees.len(),
                report.depth,
                report.node_count,
                report.pct_expert
            );
            if !report.diagnostics.converged {
                eprintln!("warning kind=convergence code=3 msg=\"message passing hit max_sweeps without converging\"");
                return Ok(EXIT_CONVERGENCE_WARNING);
            }
            Ok(0)
        }
        Command::Evaluate {
            folksonomy,
            reference,
        } => {
            let report: StrategyReport =
                serde_json::from_str(&fs::read_to_string(&folksonomy)?)?;
            let taxonomy = ReferenceTaxonomy::from_edge_list(&reference)?;
            let row = evaluate_report(&report, &taxonomy)?;
            println!("{}", EvalReport::csv_header());
            println!("{}", row.csv_row());
            Ok(0)
        }
        Command::Sweep { kind } => {
            let (result, output, manifest) = match kind {
                SweepKind::Preference {
                    corpus,
                    reference,
                    seed,
                    experts,
                    multipliers,
                    output,
                    rap,
                } => {
                    let c = ingest_saplings(&corpus)?;
                    let taxonomy = ReferenceTaxonomy::from_edge_list(&reference)?;
                    let expert_set = expert_set_from(&experts)?;
                    let config = rap.config();
                    let result = preference_sweep(
                        &c,
                        &seed,
                        &expert_set,
                        &taxonomy,
                        &multipliers,
                        &config,
                    )?;
                    let mut manifest = RunManifest::new("sweep-preference");
                    manifest.seed_term = Some(seed);
                    manifest.rap = config;
                    manifest
                        .inputs
                        .insert("corpus".into(), corpus.display().to_string());
                    (result, output, manifest)
                }
                SweepKind::Swap {
                    corpus,
                    reference,
                    seed,
                    experts,
                    percents,
                    rng,
                    output,
                    rap,
                } => {
                    let c = ingest_saplings(&corpus)?;
                    let taxonomy = ReferenceTaxonomy::from_edge_list(&reference)?;
                    let expert_set = expert_set_from(&experts)?;
                    let config = rap.config();
                    let result = swap_sweep(
                        &c,
                        &seed,
                        &expert_set,
                        &taxonomy,
                        &percents,
                        rng,
                        &config,
                    )?;
                    let mut manifest = RunManifest::new("sweep-swap");
                    manifest.seed_term = Some(seed);
                    manifest.rng_seed = Some(rng);
                    manifest.rap = config;
                    manifest
                        .inputs
                        .insert("corpus".into(), corpus.display().to_string());
                    (result, output, manifest)
                }
            };
            write_sweep(&result, &output)?;
            let mut manifest = manifest;
            manifest.threads = threads;
            manifest
                .outputs
                .insert("sweep".into(), output.display().to_string());
            write_manifest(&sibling_manifest(&output), &manifest)?;
            Ok(0)
        }
        Command::Synth {
            output,
            rng,
            experts,
            novices,
            vagueness_rate,
            noise_rate,
        } => {
            let spec = SyntheticSpec {
                num_experts: experts,
                num_novices: novices,
                vagueness_rate,
                noise_rate,
                rng_seed: rng,
                ..SyntheticSpec::default()
            };
            let data = generate_synthetic(&spec)?;
            fs::create_dir_all(&output)?;
            fs::write(output.join("corpus.json"), &data.corpus_json)?;
            fs::write(output.join("labels.csv"), data.labels_csv())?;
            fs::write(output.join("reference.tsv"), &data.reference_text)?;
            let mut manifest = RunManifest::new("synth");
            manifest.rng_seed = Some(rng);
            manifest.seed_term = Some(data.seed_term.clone());
            manifest.threads = threads;
            for name in ["corpus.json", "labels.csv", "reference.tsv"] {
                manifest
                    .outputs
                    .insert(name.into(), output.join(name).display().to_string());
            }
            write_manifest(&output.join("manifest.json"), &manifest)?;
            println!(
                "synth users={} saplings={} seed_term={}",
                data.corpus.users.len(),
                data.corpus.saplings.len(),
                data.seed_term
            );
            Ok(0)
        }
    }
}

fn expert_set_from(path: &Path) -> Result<BTreeSet<String>, FolkError> {
    let set: BTreeSet<String> = read_labels(path)?
        .into_iter()
        .filter(|(_, e)| *e)
        .map(|(u, _)| u)
        .collect();
    if set.is_empty() {
        return Err(FolkError::InvalidInput(format!(
            "no experts found in {}",
            path.display()
        )));
    }
    Ok(set)
}

fn write_sweep(result: &SweepResult, output: &Path) -> Result<(), FolkError> {
    fs::write(output, result.to_csv())?;
    Ok(())
}

fn sibling_manifest(output: &Path) -> PathBuf {
    let mut name = output
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "output".to_string());
    name.push_str(".manifest.json");
    output.with_file_name(name)
}

fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<(), FolkError> {
    fs::write(path, serde_json::to_string_pretty(manifest)? + "\n")?;
    Ok(())
}
