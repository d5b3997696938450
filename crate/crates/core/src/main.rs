//! Command-line front end over the staged pipeline. Every subcommand works
//! against a run directory and reads only the artifacts earlier stages wrote
//! there, so stages can be rerun, resumed or scripted individually.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ecoevo::community::DetectConfig;
use ecoevo::forest::ClassWeighting;
use ecoevo::pipeline::{
    self, run_pipeline, ExplainOptions, FeaturizeOptions, InputSpec, PipelineOptions,
    SnapshotOptions, TrainOptions,
};
use ecoevo::synth::{default_benchmark, load_script};
use ecoevo::tracker::TrackerConfig;
use ecoevo::Result;

#[derive(Parser)]
#[command(
    name = "ecoevo",
    version,
    about = "Reconstructs a service ecosystem's history from interaction events, tracks community evolution, predicts the next evolution event, and explains the predictions."
)]
struct Cli {
    /// Cap the worker threads used by parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic benchmark event log with a scripted schedule
    Synth(SynthArgs),
    /// Replay an event log into periodic weighted snapshots
    Snapshot(SnapshotArgs),
    /// Detect communities and member positions in every snapshot
    Detect(DetectArgs),
    /// Match communities across snapshots and label evolution events
    Track(TrackArgs),
    /// Compute community descriptors and windowed training samples
    Featurize(FeaturizeArgs),
    /// Train the forest and the baselines on a stratified split
    Train(TrainArgs),
    /// Score the trained models on the held-out rows
    Evaluate(EvaluateArgs),
    /// Attribute every held-out prediction to its features
    Explain(ExplainArgs),
    /// Collect plot-ready report tables from the run artifacts
    Report(ReportArgs),
    /// Run every stage in order against one run directory
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Directory to write nodes.csv, events.csv, mechanisms.cfg and schedule.json to
    #[arg(long)]
    out: PathBuf,
    /// Evolution script JSON; omitted means the built-in benchmark
    #[arg(long)]
    script: Option<PathBuf>,
    /// Override the script's generator seed
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SnapshotArgs {
    /// Run directory that receives the staged artifacts
    #[arg(long)]
    run: PathBuf,
    /// Node table CSV (id,label)
    #[arg(long)]
    nodes: PathBuf,
    /// Interaction event log CSV
    #[arg(long)]
    events: PathBuf,
    /// Mechanism config mapping relation types to edge update rules
    #[arg(long)]
    mechanisms: PathBuf,
    /// First snapshot instant, RFC 3339 (e.g. 2020-01-01T00:00:00Z)
    #[arg(long)]
    start: String,
    /// Last instant covered by the snapshot grid, RFC 3339
    #[arg(long)]
    end: String,
    /// Days between consecutive snapshots [default: 30]
    #[arg(long, default_value_t = 30)]
    period_days: u32,
}

#[derive(Args)]
struct DetectArgs {
    /// Run directory with a completed snapshot stage
    #[arg(long)]
    run: PathBuf,
    /// Seed for the detection tie-shuffling RNG [default: 0]
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Resolution of the modularity objective [default: 1]
    #[arg(long, default_value_t = 1.0)]
    resolution: f64,
    /// Drop communities smaller than this from the output [default: 4]
    #[arg(long, default_value_t = 4)]
    min_community_size: usize,
}

#[derive(Args)]
struct TrackArgs {
    /// Run directory with a completed detect stage
    #[arg(long)]
    run: PathBuf,
    /// Forward inclusion threshold for matching communities [default: 0.5]
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// Backward inclusion threshold for matching communities [default: 0.5]
    #[arg(long, default_value_t = 0.5)]
    beta: f64,
}

#[derive(Args)]
struct FeaturizeArgs {
    /// Run directory with completed detect and track stages
    #[arg(long)]
    run: PathBuf,
    /// Cohesion value used when a community has no external edges [default: 1e6]
    #[arg(long, default_value_t = 1e6)]
    cohesion_cap: f64,
    /// Emit consecutive differences instead of the two later raw feature blocks
    #[arg(long)]
    delta_features: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Run directory with a completed featurize stage
    #[arg(long)]
    run: PathBuf,
    /// Seed for bootstrap sampling, feature subsampling and the split [default: 0]
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of trees in the forest [default: 100]
    #[arg(long, default_value_t = 100)]
    trees: usize,
    /// Depth limit per tree; unlimited when omitted
    #[arg(long)]
    max_depth: Option<usize>,
    /// Minimum samples in a leaf [default: 2]
    #[arg(long, default_value_t = 2)]
    min_samples_leaf: usize,
    /// Candidate features per split; omitted means the square root of the feature count
    #[arg(long)]
    features_per_split: Option<usize>,
    /// Class weighting: balanced or uniform [default: balanced]
    #[arg(long, default_value = "balanced", value_parser = parse_weighting)]
    class_weighting: ClassWeighting,
    /// Fraction of samples held out for evaluation [default: 0.2]
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Run directory with a completed train stage
    #[arg(long)]
    run: PathBuf,
}

#[derive(Args)]
struct ExplainArgs {
    /// Run directory with a completed train stage
    #[arg(long)]
    run: PathBuf,
    /// Strongest contributions kept per class [default: 5]
    #[arg(long, default_value_t = 5)]
    top_k: usize,
    /// Base feature of the dependence table [default: size]
    #[arg(long, default_value = "size")]
    dependence_feature: String,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory with completed track and explain stages
    #[arg(long)]
    run: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    /// Run directory that receives all staged artifacts
    #[arg(long)]
    run: PathBuf,
    /// Generate a synthetic benchmark into the run directory first
    #[arg(long, conflicts_with_all = ["nodes", "events", "mechanisms"])]
    synth: bool,
    /// Evolution script JSON for --synth; omitted means the built-in benchmark
    #[arg(long, requires = "synth")]
    script: Option<PathBuf>,
    /// Override the synth script's generator seed
    #[arg(long, requires = "synth")]
    synth_seed: Option<u64>,
    /// Node table CSV (id,label); requires --events and --mechanisms
    #[arg(long, requires_all = ["events", "mechanisms", "start", "end"])]
    nodes: Option<PathBuf>,
    /// Interaction event log CSV
    #[arg(long)]
    events: Option<PathBuf>,
    /// Mechanism config mapping relation types to edge update rules
    #[arg(long)]
    mechanisms: Option<PathBuf>,
    /// First snapshot instant, RFC 3339; defaults to the script grid for --synth
    #[arg(long)]
    start: Option<String>,
    /// Last instant covered by the snapshot grid, RFC 3339
    #[arg(long)]
    end: Option<String>,
    /// Days between consecutive snapshots [default: 30]
    #[arg(long)]
    period_days: Option<u32>,
    /// Seed for detection, the split and forest training [default: 0]
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Resolution of the modularity objective [default: 1]
    #[arg(long, default_value_t = 1.0)]
    resolution: f64,
    /// Drop communities smaller than this from the output [default: 4]
    #[arg(long, default_value_t = 4)]
    min_community_size: usize,
    /// Forward inclusion threshold for matching communities [default: 0.5]
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// Backward inclusion threshold for matching communities [default: 0.5]
    #[arg(long, default_value_t = 0.5)]
    beta: f64,
    /// Cohesion value used when a community has no external edges [default: 1e6]
    #[arg(long, default_value_t = 1e6)]
    cohesion_cap: f64,
    /// Emit consecutive differences instead of the two later raw feature blocks
    #[arg(long)]
    delta_features: bool,
    /// Number of trees in the forest [default: 100]
    #[arg(long, default_value_t = 100)]
    trees: usize,
    /// Depth limit per tree; unlimited when omitted
    #[arg(long)]
    max_depth: Option<usize>,
    /// Minimum samples in a leaf [default: 2]
    #[arg(long, default_value_t = 2)]
    min_samples_leaf: usize,
    /// Candidate features per split; omitted means the square root of the feature count
    #[arg(long)]
    features_per_split: Option<usize>,
    /// Class weighting: balanced or uniform [default: balanced]
    #[arg(long, default_value = "balanced", value_parser = parse_weighting)]
    class_weighting: ClassWeighting,
    /// Fraction of samples held out for evaluation [default: 0.2]
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    /// Strongest contributions kept per class [default: 5]
    #[arg(long, default_value_t = 5)]
    top_k: usize,
    /// Base feature of the dependence table [default: size]
    #[arg(long, default_value = "size")]
    dependence_feature: String,
}

fn parse_weighting(s: &str) -> std::result::Result<ClassWeighting, String> {
    match s {
        "balanced" => Ok(ClassWeighting::Balanced),
        "uniform" => Ok(ClassWeighting::Uniform),
        other => Err(format!("unknown class weighting `{other}` (use balanced or uniform)")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: could not configure {threads} worker threads: {e}");
            return ExitCode::FAILURE;
        }
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Synth(args) => synth(args),
        Command::Snapshot(args) => snapshot(args),
        Command::Detect(args) => detect(args),
        Command::Track(args) => track(args),
        Command::Featurize(args) => featurize(args),
        Command::Train(args) => train(args),
        Command::Evaluate(args) => evaluate(args),
        Command::Explain(args) => explain(args),
        Command::Report(args) => report(args),
        Command::Pipeline(args) => run(args),
    }
}

fn synth(args: SynthArgs) -> Result<()> {
    let mut script = match &args.script {
        Some(path) => load_script(path)?,
        None => default_benchmark(),
    };
    if let Some(seed) = args.seed {
        script.seed = seed;
    }
    let truth = pipeline::stage_synth(&args.out, &script, args.script.as_deref())?;
    println!(
        "wrote benchmark to {}: {} snapshots, {} scheduled transitions (seed {})",
        args.out.display(),
        truth.n_snapshots,
        truth.entries.len(),
        script.seed
    );
    Ok(())
}

fn snapshot(args: SnapshotArgs) -> Result<()> {
    let manifest = pipeline::stage_snapshot(
        &args.run,
        &SnapshotOptions {
            nodes: args.nodes,
            events: args.events,
            mechanisms: args.mechanisms,
            start: args.start,
            end: args.end,
            period_days: args.period_days,
        },
    )?;
    println!(
        "built {} snapshots from {} to {} (every {} days)",
        manifest.files.len(),
        manifest.start,
        manifest.end,
        manifest.period_days
    );
    Ok(())
}

fn detect(args: DetectArgs) -> Result<()> {
    let config = DetectConfig {
        seed: args.seed,
        resolution: args.resolution,
        min_community_size: args.min_community_size,
    };
    let partitions = pipeline::stage_detect(&args.run, &config)?;
    let total: usize = partitions.iter().map(|p| p.communities.len()).sum();
    println!("detected {} communities across {} snapshots", total, partitions.len());
    Ok(())
}

fn track(args: TrackArgs) -> Result<()> {
    let config = TrackerConfig { alpha: args.alpha, beta: args.beta };
    config.validate()?;
    let events = pipeline::stage_track(&args.run, &config)?;
    let total: usize = events.transitions.iter().map(|t| t.records.len()).sum();
    println!("labeled {} evolution records across {} transitions", total, events.transitions.len());
    Ok(())
}

fn featurize(args: FeaturizeArgs) -> Result<()> {
    let opts = FeaturizeOptions { cohesion_cap: args.cohesion_cap, delta: args.delta_features };
    let summary = pipeline::stage_featurize(&args.run, &opts)?;
    println!(
        "emitted {} samples ({} lineages too short, {} without a labeled next event)",
        summary.emitted, summary.skipped_short, summary.skipped_unlabeled
    );
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    let opts = TrainOptions {
        seed: args.seed,
        n_trees: args.trees,
        max_depth: args.max_depth,
        min_samples_leaf: args.min_samples_leaf,
        features_per_split: args.features_per_split,
        class_weighting: args.class_weighting,
        test_fraction: args.test_fraction,
    };
    let (model, split) = pipeline::stage_train(&args.run, &opts)?;
    println!(
        "trained {} trees on {} samples; {} held out (seed {})",
        model.trees.len(),
        split.train.len(),
        split.test.len(),
        opts.seed
    );
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let outcome = pipeline::stage_evaluate(&args.run)?;
    println!(
        "forest   accuracy {:.3}  macro-F1 {:.3}",
        outcome.forest.accuracy, outcome.forest.macro_f1
    );
    println!(
        "tree     accuracy {:.3}  macro-F1 {:.3}",
        outcome.tree.accuracy, outcome.tree.macro_f1
    );
    println!(
        "majority accuracy {:.3}  macro-F1 {:.3}",
        outcome.majority.accuracy, outcome.majority.macro_f1
    );
    Ok(())
}

fn explain(args: ExplainArgs) -> Result<()> {
    let opts = ExplainOptions { top_k: args.top_k, dependence_feature: args.dependence_feature };
    let file = pipeline::stage_explain(&args.run, &opts)?;
    println!("explained {} held-out predictions", file.samples.len());
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    pipeline::stage_report(&args.run)?;
    println!("wrote report tables to {}", args.run.join("reports").display());
    Ok(())
}

fn run(args: PipelineArgs) -> Result<()> {
    let input = if args.synth {
        InputSpec::Synth { script: args.script.clone(), seed: args.synth_seed }
    } else {
        match (args.nodes.clone(), args.events.clone(), args.mechanisms.clone()) {
            (Some(nodes), Some(events), Some(mechanisms)) => {
                InputSpec::Files { nodes, events, mechanisms }
            }
            _ => {
                return Err(ecoevo::Error::InvalidArgument(
                    "pass --synth or all of --nodes, --events and --mechanisms".into(),
                ))
            }
        }
    };
    let opts = PipelineOptions {
        input,
        start: args.start,
        end: args.end,
        period_days: args.period_days,
        detect: DetectConfig {
            seed: args.seed,
            resolution: args.resolution,
            min_community_size: args.min_community_size,
        },
        tracker: TrackerConfig { alpha: args.alpha, beta: args.beta },
        features: FeaturizeOptions { cohesion_cap: args.cohesion_cap, delta: args.delta_features },
        train: TrainOptions {
            seed: args.seed,
            n_trees: args.trees,
            max_depth: args.max_depth,
            min_samples_leaf: args.min_samples_leaf,
            features_per_split: args.features_per_split,
            class_weighting: args.class_weighting,
            test_fraction: args.test_fraction,
        },
        explain: ExplainOptions {
            top_k: args.top_k,
            dependence_feature: args.dependence_feature,
        },
    };
    let summary = run_pipeline(&args.run, &opts)?;
    println!("pipeline finished in {}", args.run.display());
    println!(
        "  snapshots {}  samples {} (short {}, unlabeled {})",
        summary.n_snapshots,
        summary.sequences.emitted,
        summary.sequences.skipped_short,
        summary.sequences.skipped_unlabeled
    );
    println!("  train {}  test {}  explained {}", summary.n_train, summary.n_test, summary.n_explained);
    println!(
        "  macro-F1: forest {:.3}  tree {:.3}  majority {:.3}  (forest accuracy {:.3})",
        summary.forest_macro_f1, summary.tree_macro_f1, summary.majority_macro_f1, summary.forest_accuracy
    );
    Ok(())
}
