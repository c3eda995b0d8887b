use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use radcal::calibration::write_range_csv;
use radcal::classifier::{ModelFile, TrainedModel};
use radcal::experiment::{
    aggregate, corruption_sweep, evaluate_model, render_table, train_all, write_reliability_csv,
    write_severity_csv, AggregateResult, ExperimentConfig, FailedRun, SeedEvaluation,
};
use radcal::labels::SmoothingPolicy;
use radcal::synth::io::{load_dataset, save_dataset};
use radcal::synth::{generate_dataset, Dataset, Split};
use radcal::{Error, Result};

/// Radar-spectra label smoothing and calibration toolkit.
#[derive(Parser)]
#[command(name = "radcal", version)]
struct Cli {
    #[command(flatten)]
    shared: Shared,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Shared {
    /// Experiment config (JSON). Bundled defaults are used when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the seed the subcommand uses (master, training base or
    /// corruption seed).
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output file or directory.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset.
    Generate,
    /// Train one model per seed for one policy, or for every configured policy.
    Train(TrainArgs),
    /// Evaluate models on a dataset split.
    Evaluate(EvalArgs),
    /// Evaluate models on every corrupted copy of the test split.
    CorruptSweep(SweepArgs),
    /// Render aggregate files as a comparison table and plot-ready CSVs.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyName {
    Hard,
    EpsSmooth,
    RSmooth,
    PSmooth,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value = "dataset.jsonl")]
    dataset: PathBuf,
    #[arg(long, value_enum)]
    policy: Option<PolicyName>,
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// Number of independent runs per policy.
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, default_value = "dataset.jsonl")]
    dataset: PathBuf,
    /// Model files or directories containing `*.model.json`.
    #[arg(long, num_args = 1.., default_value = "models")]
    models: Vec<PathBuf>,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    n_bins: Option<usize>,
    /// Comma-separated range bin edges in meters.
    #[arg(long, value_delimiter = ',')]
    range_edges: Option<Vec<f64>>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, default_value = "dataset.jsonl")]
    dataset: PathBuf,
    #[arg(long, num_args = 1.., default_value = "models")]
    models: Vec<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Aggregate JSON files written by `evaluate` or `corrupt-sweep`.
    #[arg(long, num_args = 1.., default_values = ["eval/aggregate.json"])]
    aggregates: Vec<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::NumericFailure { .. } => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = match &cli.shared.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let shared = &cli.shared;
    match cli.command {
        Command::Generate => cmd_generate(config, shared),
        Command::Train(args) => cmd_train(config, shared, args),
        Command::Evaluate(args) => cmd_evaluate(config, shared, args),
        Command::CorruptSweep(args) => cmd_corrupt_sweep(config, shared, args),
        Command::Report(args) => cmd_report(shared, args),
    }
}

fn out_path(shared: &Shared, default: &str) -> PathBuf {
    shared.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::json(path.display().to_string(), e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn open_dataset(path: &Path) -> Result<Dataset> {
    if !path.exists() {
        return Err(Error::invalid(format!(
            "dataset {} does not exist",
            path.display()
        )));
    }
    eprintln!("loading {}", path.display());
    load_dataset(path)
}

fn cmd_generate(mut config: ExperimentConfig, shared: &Shared) -> Result<()> {
    if let Some(seed) = shared.seed {
        config.dataset.master_seed = seed;
    }
    let out = out_path(shared, "dataset.jsonl");
    eprintln!("generating dataset");
    let dataset = generate_dataset(&config.dataset)?;
    let stats = dataset.stats()?;
    save_dataset(&dataset, &out)?;

    println!("wrote {}", out.display());
    for split in [Split::Train, Split::Val, Split::Test] {
        println!(
            "{:<5} {:>6} samples",
            split.name(),
            dataset.split(split).len()
        );
    }
    println!("train class counts:");
    for (spec, count) in dataset.config.classes.iter().zip(&stats.class_counts) {
        println!("  {:<20} {count}", spec.name);
    }
    println!("train range  [{}, {}] m", stats.r_min, stats.r_max);
    println!("train power  [{}, {}]", stats.pi_min, stats.pi_max);
    Ok(())
}

/// File-name friendly policy label, e.g. `p-smooth-0.5`.
fn slug(policy: &SmoothingPolicy) -> String {
    policy.label().replace(['(', '+'], "-").replace(')', "")
}

fn cmd_train(mut config: ExperimentConfig, shared: &Shared, args: TrainArgs) -> Result<()> {
    let policies = match args.policy {
        Some(PolicyName::Hard) => vec![SmoothingPolicy::hard()],
        Some(PolicyName::EpsSmooth) => vec![SmoothingPolicy::epsilon(args.epsilon)],
        Some(PolicyName::RSmooth) => vec![SmoothingPolicy::range_based(args.alpha)],
        Some(PolicyName::PSmooth) => vec![SmoothingPolicy::power_based(args.alpha)],
        None => config.policies.clone(),
    };
    for p in &policies {
        p.validate()?;
    }
    if let Some(seed) = shared.seed {
        config.train.seed = seed;
    }
    if let Some(epochs) = args.epochs {
        config.train.epochs = epochs;
    }
    let n_seeds = args.seeds.unwrap_or(config.n_seeds);
    if n_seeds == 0 {
        return Err(Error::invalid("--seeds must be at least 1"));
    }
    config.train.validate("train")?;

    let dataset = open_dataset(&args.dataset)?;
    let stats = dataset.stats()?;
    let out = out_path(shared, "models");
    create_dir(&out)?;

    eprintln!("training {} policies x {n_seeds} seeds", policies.len());
    let runs = train_all(&dataset, &stats, &policies, &config.train, n_seeds);
    let mut first_failure = None;
    for (i, run) in runs.iter().enumerate() {
        let index = i % n_seeds;
        match &run.model {
            Ok(model) => {
                let stem = format!("{}-seed{index:02}", slug(&run.policy));
                ModelFile::from_model(model).save(&out.join(format!("{stem}.model.json")))?;
                let log_path = out.join(format!("{stem}.log.csv"));
                model.log.write_csv(create(&log_path)?)?;
                eprintln!(
                    "{} seed {} -> {stem} (best epoch {})",
                    run.policy, run.seed, model.best_epoch
                );
            }
            Err(e) => {
                eprintln!("{} seed {} failed: {e}", run.policy, run.seed);
                if first_failure.is_none() {
                    first_failure = Some((run.policy.label(), run.seed, e));
                }
            }
        }
    }
    match first_failure {
        None => Ok(()),
        Some((policy, seed, Error::NumericFailure { epoch, message })) => {
            Err(Error::NumericFailure {
                epoch: *epoch,
                message: format!("{policy} seed {seed}: {message}"),
            })
        }
        Some((policy, seed, e)) => Err(Error::invalid(format!("{policy} seed {seed}: {e}"))),
    }
}

/// Model paths in a stable order: directories expand to their sorted
/// `*.model.json` entries.
fn collect_models(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(input)
                .map_err(|e| Error::io(input, e))?
                .filter_map(|entry| entry.ok().map(|e| e.path()))
                .filter(|p| p.to_string_lossy().ends_with(".model.json"))
                .collect();
            found.sort();
            paths.extend(found);
        } else if input.exists() {
            paths.push(input.clone());
        } else {
            return Err(Error::invalid(format!(
                "model path {} does not exist",
                input.display()
            )));
        }
    }
    if paths.is_empty() {
        return Err(Error::invalid("no model files found"));
    }
    Ok(paths)
}

fn load_models(inputs: &[PathBuf]) -> Result<Vec<(String, TrainedModel, u64)>> {
    collect_models(inputs)?
        .into_iter()
        .map(|path| {
            let file = ModelFile::load(&path)?;
            let seed = file.seed;
            let stem = path
                .file_name()
                .map(|n| {
                    n.to_string_lossy()
                        .trim_end_matches(".model.json")
                        .to_string()
                })
                .unwrap_or_default();
            Ok((stem, file.into_model()?, seed))
        })
        .collect()
}

/// Policies in order of first appearance.
fn policy_order<'a>(policies: impl Iterator<Item = &'a SmoothingPolicy>) -> Vec<SmoothingPolicy> {
    let mut out: Vec<SmoothingPolicy> = Vec::new();
    for p in policies {
        if !out.iter().any(|q| q.label() == p.label()) {
            out.push(p.clone());
        }
    }
    out
}

fn eval_split<'a>(
    dataset: &'a Dataset,
    name: &str,
    path: &Path,
) -> Result<&'a [radcal::synth::RoiSample]> {
    let split: Split = name.parse()?;
    let samples = dataset.split(split);
    if samples.is_empty() {
        return Err(Error::invalid(format!(
            "split `{name}` is missing from {}",
            path.display()
        )));
    }
    Ok(samples)
}

fn cmd_evaluate(mut config: ExperimentConfig, shared: &Shared, args: EvalArgs) -> Result<()> {
    if let Some(n) = args.n_bins {
        config.evaluation.n_bins = n;
    }
    if let Some(edges) = args.range_edges {
        config.evaluation.range_edges = edges;
    }
    config.evaluation.validate("evaluation")?;
    let dataset = open_dataset(&args.dataset)?;
    let samples = eval_split(&dataset, &args.split, &args.dataset)?;
    let models = load_models(&args.models)?;
    let out = out_path(shared, "eval");
    create_dir(&out)?;

    let mut evaluations = Vec::new();
    for (stem, model, seed) in &models {
        eprintln!("evaluating {stem}");
        let (report, range_groups) = evaluate_model(model, samples, &config.evaluation)?;
        write_json(&out.join(format!("{stem}.report.json")), &report)?;
        report.write_bins_csv(create(&out.join(format!("{stem}.bins.csv")))?)?;
        write_range_csv(
            &range_groups,
            create(&out.join(format!("{stem}.range.csv")))?,
        )?;
        evaluations.push(SeedEvaluation {
            policy: model.policy.clone(),
            seed: *seed,
            report,
            range_groups,
            corruption: Vec::new(),
        });
    }
    let policies = policy_order(evaluations.iter().map(|e| &e.policy));
    let result = aggregate(&policies, &evaluations, &[]);
    write_json(&out.join("aggregate.json"), &result)?;
    print!("{}", render_table(&result));
    Ok(())
}

fn cmd_corrupt_sweep(mut config: ExperimentConfig, shared: &Shared, args: SweepArgs) -> Result<()> {
    if !config.evaluation.corruption_sweep {
        return Err(Error::config(
            "evaluation.corruption_sweep",
            "the corruption suite is disabled in this config",
        ));
    }
    if let Some(seed) = shared.seed {
        config.evaluation.corruption_seed = seed;
    }
    let dataset = open_dataset(&args.dataset)?;
    let samples = eval_split(&dataset, "test", &args.dataset)?;
    let models = load_models(&args.models)?;
    let out = out_path(shared, "sweep");
    create_dir(&out)?;

    let refs: Vec<&TrainedModel> = models.iter().map(|(_, m, _)| m).collect();
    let cells = corruption_sweep(&refs, samples, &config.evaluation, |spec| {
        eprintln!("corruption {} severity {}", spec.kind, spec.severity)
    })?;

    let mut evaluations = Vec::new();
    let mut w = csv::Writer::from_writer(create(&out.join("cells.csv"))?);
    w.write_record([
        "model",
        "kind",
        "severity",
        "accuracy",
        "ece",
        "mmc",
        "mmc_incorrect",
    ])
    .map_err(|e| Error::csv("cells", e))?;
    for ((stem, model, seed), model_cells) in models.iter().zip(cells) {
        for c in &model_cells {
            w.write_record([
                stem.clone(),
                c.spec.kind.to_string(),
                c.spec.severity.to_string(),
                c.report.accuracy.to_string(),
                c.report.ece.to_string(),
                c.report.mmc_all.to_string(),
                c.report
                    .mmc_incorrect
                    .map(|v| v.to_string())
                    .unwrap_or_default(),
            ])
            .map_err(|e| Error::csv("cells", e))?;
        }
        let (report, range_groups) = evaluate_model(model, samples, &config.evaluation)?;
        evaluations.push(SeedEvaluation {
            policy: model.policy.clone(),
            seed: *seed,
            report,
            range_groups,
            corruption: model_cells,
        });
    }
    w.flush().map_err(|e| Error::io(out.join("cells.csv"), e))?;

    let policies = policy_order(evaluations.iter().map(|e| &e.policy));
    let result = aggregate(&policies, &evaluations, &[]);
    write_json(&out.join("aggregate.json"), &result)?;
    write_severity_csv(&result, create(&out.join("severity.csv"))?)?;
    print!("{}", render_table(&result));
    Ok(())
}

fn load_aggregate(path: &Path) -> Result<AggregateResult> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let result: AggregateResult = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    if result.policies.is_empty() {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: "aggregate lists no policies".into(),
        });
    }
    Ok(result)
}

/// Merges aggregate files; a policy seen again only contributes breakdowns
/// the earlier file lacked.
fn merge(results: Vec<AggregateResult>) -> AggregateResult {
    let mut merged = AggregateResult::default();
    for result in results {
        for p in result.policies {
            match merged.policies.iter_mut().find(|q| q.label == p.label) {
                Some(q) => {
                    if q.corruption.is_empty() {
                        q.corruption = p.corruption;
                    }
                    if q.severity.is_empty() {
                        q.severity = p.severity;
                    }
                    for f in p.failed {
                        if !q.failed.contains(&f) {
                            q.failed.push(f);
                        }
                    }
                }
                None => merged.policies.push(p),
            }
        }
    }
    merged
}

fn cmd_report(shared: &Shared, args: ReportArgs) -> Result<()> {
    let results = args
        .aggregates
        .iter()
        .map(|p| load_aggregate(p))
        .collect::<Result<Vec<_>>>()?;
    let result = merge(results);
    let out = out_path(shared, "report");
    create_dir(&out)?;

    let table = render_table(&result);
    fs::write(out.join("table.md"), &table).map_err(|e| Error::io(out.join("table.md"), e))?;
    for p in &result.policies {
        let path = out.join(format!("{}.reliability.csv", slug(&p.policy)));
        write_reliability_csv(p, create(&path)?)?;
    }
    if result.policies.iter().any(|p| !p.severity.is_empty()) {
        write_severity_csv(&result, create(&out.join("severity.csv"))?)?;
    }
    let failed: Vec<&FailedRun> = result.policies.iter().flat_map(|p| &p.failed).collect();
    if !failed.is_empty() {
        eprintln!("{} failed runs listed in the table", failed.len());
    }
    print!("{table}");
    Ok(())
}
