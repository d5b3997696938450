//! Staged artifact flow over a run directory.
//!
//! Every stage reads only files, writes only files, and records what it did
//! in the run manifest, so a full `run_pipeline` call and a sequence of
//! standalone stage invocations produce byte-identical directories. Stage
//! order:
//!
//! ```text
//! synth (optional) -> snapshot -> detect -> track -> featurize
//!                  -> train -> evaluate -> explain -> report
//! ```
//!
//! Layout of a run directory:
//!
//! ```text
//! manifest.json                    per-stage inputs/outputs/config hash/seed
//! nodes.csv events.csv mechanisms.cfg     copied (or generated) inputs
//! snapshots/manifest.json          instants + file list
//! snapshots/snapshot_NNNN.csv      one weighted edge list per instant
//! communities/partition_NNNN.json  communities, positions, key nodes
//! events.json event_distribution.csv     transition records and counts
//! features/community_features.csv  15 descriptors per community
//! features/features.csv            windowed training samples
//! features/sequence_summary.json   emitted/skipped sample counts
//! model/{split,model,baseline_tree,baseline}.json
//! model/{metrics,confusion}.csv
//! explanations/explanations.json   per-sample decision breakdowns
//! explanations/{importance_heatmap,dependence}.csv
//! reports/…                        plot-ready tables collected from the above
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::Duration;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::community::{
    communities_from_file, detect, partition_file, read_partition_file, write_partition_file,
    Community, DetectConfig, PartitionFile,
};
use crate::error::{Error, Result};
use crate::explain::{explain_sample, forest_shap, summarize_importance, ShapValues};
use crate::features::{
    build_sequences, extract_features_with, read_features_csv, snapshot_metrics,
    write_community_features_csv, write_features_csv, FeatureConfig, FeatureVector,
    SequenceConfig, SequenceSample, SequenceSummary,
};
use crate::forest::{
    self, load_model, majority_class, save_model, stratified_split, ClassWeighting, Dataset,
    Forest, Hyperparameters, Metrics,
};
use crate::report::{
    decision_report, dependence_rows, ecosystem_rows, event_distribution, heatmap_rows,
    read_explanations, write_decision_report, write_dependence_csv, write_ecosystem_csv,
    write_event_distribution_csv, write_explanations, write_heatmap_csv, DecisionRecord,
    ExplanationsFile,
};
use crate::snapshot::{
    format_instant, load_entities, load_events, parse_instant, read_snapshot_csv, snapshot_series,
    write_snapshot_csv, EntityRegistry, MechanismConfig, Snapshot,
};
use crate::synth::{default_benchmark, generate, load_script, EvolutionScript, GroundTruth};
use crate::tracker::{
    build_lineages, events_file, read_events_file, track_series, transitions_from_file,
    EventsFile, TrackerConfig,
};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const NODES_FILE: &str = "nodes.csv";
pub const EVENTS_FILE: &str = "events.csv";
pub const MECHANISMS_FILE: &str = "mechanisms.cfg";
pub const SCHEDULE_FILE: &str = "schedule.json";
pub const SNAPSHOT_DIR: &str = "snapshots";
pub const SNAPSHOT_MANIFEST: &str = "snapshots/manifest.json";
pub const COMMUNITY_DIR: &str = "communities";
pub const EVENTS_JSON: &str = "events.json";
pub const EVENT_DISTRIBUTION_CSV: &str = "event_distribution.csv";
pub const COMMUNITY_FEATURES_CSV: &str = "features/community_features.csv";
pub const FEATURES_CSV: &str = "features/features.csv";
pub const SEQUENCE_SUMMARY_JSON: &str = "features/sequence_summary.json";
pub const SPLIT_JSON: &str = "model/split.json";
pub const MODEL_JSON: &str = "model/model.json";
pub const BASELINE_TREE_JSON: &str = "model/baseline_tree.json";
pub const BASELINE_JSON: &str = "model/baseline.json";
pub const METRICS_CSV: &str = "model/metrics.csv";
pub const CONFUSION_CSV: &str = "model/confusion.csv";
pub const EXPLANATIONS_JSON: &str = "explanations/explanations.json";
pub const HEATMAP_CSV: &str = "explanations/importance_heatmap.csv";
pub const DEPENDENCE_CSV: &str = "explanations/dependence.csv";
pub const REPORT_DIR: &str = "reports";

// ---------------------------------------------------------------------------
// Run manifest

/// What each stage consumed and produced. Paths are relative to the run
/// directory where possible; external inputs keep their given form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub config_sha256: String,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunManifest {
    pub stages: BTreeMap<String, StageRecord>,
}

pub fn load_manifest(run: &Path) -> Result<RunManifest> {
    let path = run.join(MANIFEST_FILE);
    if !path.exists() {
        return Ok(RunManifest::default());
    }
    read_json(&path)
}

fn record_stage(run: &Path, name: &str, record: StageRecord) -> Result<()> {
    let mut manifest = load_manifest(run)?;
    manifest.stages.insert(name.to_string(), record);
    write_json(&run.join(MANIFEST_FILE), &manifest)
}

fn config_hash<T: Serialize>(config: &T) -> String {
    let bytes = serde_json::to_vec(config).expect("stage config serializes");
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    format!("{:x}", hasher.finalize())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| Error::Json { path: path.into(), source: e })?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json { path: path.into(), source: e })
}

/// Resolves a required artifact of an earlier stage, or says which stage to
/// run to produce it.
fn require(run: &Path, rel: &str, producer: &str) -> Result<PathBuf> {
    let path = run.join(rel);
    if !path.exists() {
        return Err(Error::MissingInput {
            path,
            hint: format!("run the `{producer}` stage first"),
        });
    }
    Ok(path)
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// synth stage

/// Generates a scripted benchmark into the run directory and records the
/// stage. The ground truth lands in `schedule.json`.
pub fn stage_synth(run: &Path, script: &EvolutionScript, source: Option<&Path>) -> Result<GroundTruth> {
    ensure_dir(run)?;
    let truth = generate(script, run)?;
    record_stage(
        run,
        "synth",
        StageRecord {
            inputs: vec![source.map_or("builtin script".to_string(), |p| p.display().to_string())],
            outputs: vec![
                NODES_FILE.into(),
                EVENTS_FILE.into(),
                MECHANISMS_FILE.into(),
                SCHEDULE_FILE.into(),
            ],
            config_sha256: config_hash(script),
            seed: Some(script.seed),
        },
    )?;
    Ok(truth)
}

// ---------------------------------------------------------------------------
// snapshot stage

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotOptions {
    pub nodes: PathBuf,
    pub events: PathBuf,
    pub mechanisms: PathBuf,
    /// First snapshot instant, RFC 3339.
    pub start: String,
    /// Last instant covered by the grid (inclusive).
    pub end: String,
    #[serde(default = "default_period_days")]
    pub period_days: u32,
}

fn default_period_days() -> u32 {
    30
}

/// Instants and file names of the reconstructed series; what `detect` and
/// later stages navigate by.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotManifest {
    pub start: String,
    pub end: String,
    pub period_days: u32,
    pub instants: Vec<String>,
    pub files: Vec<String>,
}

/// Renders a path relative to the run directory when it lies inside it, so
/// manifests of equivalent runs match regardless of where the runs live.
fn relativize(run: &Path, path: &Path) -> String {
    let run_c = run.canonicalize().unwrap_or_else(|_| run.to_path_buf());
    let path_c = path.canonicalize().unwrap_or_else(|_| path.to_path_buf());
    match path_c.strip_prefix(&run_c) {
        Ok(rel) => rel.to_string_lossy().into_owned(),
        Err(_) => path.display().to_string(),
    }
}

/// Copies `src` into the run directory under `name` unless it already is that
/// file.
fn import_input(run: &Path, src: &Path, name: &str) -> Result<()> {
    let dst = run.join(name);
    if !src.exists() {
        return Err(Error::io(src, std::io::Error::from(std::io::ErrorKind::NotFound)));
    }
    if let (Ok(a), Ok(b)) = (src.canonicalize(), dst.canonicalize()) {
        if a == b {
            return Ok(());
        }
    }
    fs::copy(src, &dst).map_err(|e| Error::io(&dst, e))?;
    Ok(())
}

/// Replays the event log into the periodic snapshot series and writes one
/// edge-list CSV per instant plus the series manifest.
pub fn stage_snapshot(run: &Path, opts: &SnapshotOptions) -> Result<SnapshotManifest> {
    ensure_dir(run)?;
    import_input(run, &opts.nodes, NODES_FILE)?;
    import_input(run, &opts.events, EVENTS_FILE)?;
    import_input(run, &opts.mechanisms, MECHANISMS_FILE)?;

    let registry = load_entities(&run.join(NODES_FILE))?;
    let events = load_events(&run.join(EVENTS_FILE), &registry)?;
    let config = MechanismConfig::load(&run.join(MECHANISMS_FILE))?;
    let start = parse_instant(&opts.start)?;
    let end = parse_instant(&opts.end)?;
    let snapshots = snapshot_series(&events, &config, start, opts.period_days, end)?;

    ensure_dir(&run.join(SNAPSHOT_DIR))?;
    let mut files = Vec::with_capacity(snapshots.len());
    let mut instants = Vec::with_capacity(snapshots.len());
    for (i, snapshot) in snapshots.iter().enumerate() {
        let rel = format!("{SNAPSHOT_DIR}/snapshot_{i:04}.csv");
        write_snapshot_csv(snapshot, &registry, &run.join(&rel))?;
        instants.push(format_instant(snapshot.instant));
        files.push(rel);
    }
    let manifest = SnapshotManifest {
        start: format_instant(start),
        end: format_instant(end),
        period_days: opts.period_days,
        instants,
        files,
    };
    write_json(&run.join(SNAPSHOT_MANIFEST), &manifest)?;

    let mut outputs = vec![
        NODES_FILE.to_string(),
        EVENTS_FILE.to_string(),
        MECHANISMS_FILE.to_string(),
        SNAPSHOT_MANIFEST.to_string(),
    ];
    outputs.extend(manifest.files.iter().cloned());
    let normalized = SnapshotOptions {
        nodes: PathBuf::from(relativize(run, &opts.nodes)),
        events: PathBuf::from(relativize(run, &opts.events)),
        mechanisms: PathBuf::from(relativize(run, &opts.mechanisms)),
        ..opts.clone()
    };
    record_stage(
        run,
        "snapshot",
        StageRecord {
            inputs: vec![
                relativize(run, &opts.nodes),
                relativize(run, &opts.events),
                relativize(run, &opts.mechanisms),
            ],
            outputs,
            config_sha256: config_hash(&normalized),
            seed: None,
        },
    )?;
    Ok(manifest)
}

/// Reloads the snapshot series a previous `snapshot` stage wrote.
pub fn load_snapshot_series(run: &Path) -> Result<(SnapshotManifest, EntityRegistry, Vec<Snapshot>)> {
    let manifest_path = require(run, SNAPSHOT_MANIFEST, "snapshot")?;
    let manifest: SnapshotManifest = read_json(&manifest_path)?;
    let registry = load_entities(&require(run, NODES_FILE, "snapshot")?)?;
    let mut snapshots = Vec::with_capacity(manifest.files.len());
    for (rel, instant) in manifest.files.iter().zip(&manifest.instants) {
        let path = require(run, rel, "snapshot")?;
        snapshots.push(read_snapshot_csv(&path, &registry, parse_instant(instant)?)?);
    }
    Ok((manifest, registry, snapshots))
}

// ---------------------------------------------------------------------------
// detect stage

/// Runs community detection on every snapshot in the run directory.
pub fn stage_detect(run: &Path, config: &DetectConfig) -> Result<Vec<PartitionFile>> {
    let (manifest, registry, snapshots) = load_snapshot_series(run)?;
    ensure_dir(&run.join(COMMUNITY_DIR))?;
    let mut outputs = Vec::with_capacity(snapshots.len());
    let mut partitions = Vec::with_capacity(snapshots.len());
    for (i, snapshot) in snapshots.iter().enumerate() {
        let partition = detect(snapshot, config)?;
        let file = partition_file(&partition, i, &manifest.instants[i], config, &registry);
        let rel = format!("{COMMUNITY_DIR}/partition_{i:04}.json");
        write_partition_file(&file, &run.join(&rel))?;
        outputs.push(rel);
        partitions.push(file);
    }
    let mut inputs = vec![NODES_FILE.to_string(), SNAPSHOT_MANIFEST.to_string()];
    inputs.extend(manifest.files.iter().cloned());
    record_stage(
        run,
        "detect",
        StageRecord {
            inputs,
            outputs,
            config_sha256: config_hash(config),
            seed: Some(config.seed),
        },
    )?;
    Ok(partitions)
}

/// Reloads the per-snapshot partitions a previous `detect` stage wrote.
pub fn load_partitions(run: &Path) -> Result<Vec<PartitionFile>> {
    let dir = require(run, COMMUNITY_DIR, "detect")?;
    let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|e| e == "json")
                && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("partition_"))
        })
        .collect();
    if paths.is_empty() {
        return Err(Error::MissingInput {
            path: dir,
            hint: "run the `detect` stage first".into(),
        });
    }
    paths.sort();
    let mut partitions = Vec::with_capacity(paths.len());
    for (i, path) in paths.iter().enumerate() {
        let file = read_partition_file(path)?;
        if file.snapshot_index != i {
            return Err(Error::InvalidArgument(format!(
                "partition files are not a contiguous series: {} has snapshot index {}",
                path.display(),
                file.snapshot_index
            )));
        }
        partitions.push(file);
    }
    Ok(partitions)
}

fn partition_inputs(n: usize) -> Vec<String> {
    let mut inputs = vec![NODES_FILE.to_string()];
    inputs.extend((0..n).map(|i| format!("{COMMUNITY_DIR}/partition_{i:04}.json")));
    inputs
}

// ---------------------------------------------------------------------------
// track stage

/// Matches communities across consecutive snapshots and writes the labeled
/// transition records plus per-snapshot event counts.
pub fn stage_track(run: &Path, config: &TrackerConfig) -> Result<EventsFile> {
    let partitions = load_partitions(run)?;
    let registry = load_entities(&require(run, NODES_FILE, "snapshot")?)?;
    let communities: Vec<Vec<Community>> = partitions
        .iter()
        .map(|p| communities_from_file(p, &registry))
        .collect::<Result<_>>()?;
    let transitions = track_series(&communities, config)?;
    let file = events_file(&transitions, config);
    crate::tracker::write_events_file(&file, &run.join(EVENTS_JSON))?;
    write_event_distribution_csv(&event_distribution(&file), &run.join(EVENT_DISTRIBUTION_CSV))?;
    record_stage(
        run,
        "track",
        StageRecord {
            inputs: partition_inputs(partitions.len()),
            outputs: vec![EVENTS_JSON.into(), EVENT_DISTRIBUTION_CSV.into()],
            config_sha256: config_hash(config),
            seed: None,
        },
    )?;
    Ok(file)
}

// ---------------------------------------------------------------------------
// featurize stage

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeaturizeOptions {
    pub cohesion_cap: f64,
    /// Emit consecutive differences instead of the two later raw blocks.
    pub delta: bool,
}

impl Default for FeaturizeOptions {
    fn default() -> Self {
        FeaturizeOptions { cohesion_cap: FeatureConfig::default().cohesion_cap, delta: false }
    }
}

/// Computes the per-community descriptors and the windowed training samples.
pub fn stage_featurize(run: &Path, opts: &FeaturizeOptions) -> Result<SequenceSummary> {
    let (_, registry, snapshots) = load_snapshot_series(run)?;
    let partitions = load_partitions(run)?;
    if partitions.len() != snapshots.len() {
        return Err(Error::InvalidArgument(format!(
            "{} snapshots but {} partitions; rerun the `detect` stage",
            snapshots.len(),
            partitions.len()
        )));
    }
    let events = read_events_file(&require(run, EVENTS_JSON, "track")?)?;
    let transitions = transitions_from_file(&events);
    let lineages = build_lineages(&transitions);

    let feature_config = FeatureConfig { cohesion_cap: opts.cohesion_cap };
    let mut features: Vec<Vec<FeatureVector>> = Vec::with_capacity(snapshots.len());
    for (snapshot, partition) in snapshots.iter().zip(&partitions) {
        let metrics = snapshot_metrics(snapshot);
        let communities = communities_from_file(partition, &registry)?;
        features.push(
            communities
                .iter()
                .map(|c| extract_features_with(c, snapshot, &metrics, &registry, &feature_config))
                .collect(),
        );
    }
    ensure_dir(&run.join("features"))?;
    write_community_features_csv(&features, &run.join(COMMUNITY_FEATURES_CSV))?;
    let (samples, summary) =
        build_sequences(&features, &transitions, &lineages, &SequenceConfig { delta: opts.delta });
    write_features_csv(&samples, &run.join(FEATURES_CSV))?;
    write_json(&run.join(SEQUENCE_SUMMARY_JSON), &summary)?;

    let mut inputs = partition_inputs(partitions.len());
    inputs.push(SNAPSHOT_MANIFEST.to_string());
    inputs.push(EVENTS_JSON.to_string());
    record_stage(
        run,
        "featurize",
        StageRecord {
            inputs,
            outputs: vec![
                COMMUNITY_FEATURES_CSV.into(),
                FEATURES_CSV.into(),
                SEQUENCE_SUMMARY_JSON.into(),
            ],
            config_sha256: config_hash(opts),
            seed: None,
        },
    )?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// train stage

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub seed: u64,
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// Candidate features per split; `None` means ⌊√d⌋.
    pub features_per_split: Option<usize>,
    pub class_weighting: ClassWeighting,
    pub test_fraction: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        let hp = Hyperparameters::default();
        TrainOptions {
            seed: hp.seed,
            n_trees: hp.n_trees,
            max_depth: hp.max_depth,
            min_samples_leaf: hp.min_samples_leaf,
            features_per_split: hp.features_per_split,
            class_weighting: hp.class_weighting,
            test_fraction: 0.2,
        }
    }
}

impl TrainOptions {
    fn hyperparameters(&self) -> Hyperparameters {
        Hyperparameters {
            n_trees: self.n_trees,
            max_depth: self.max_depth,
            min_samples_leaf: self.min_samples_leaf,
            features_per_split: self.features_per_split,
            seed: self.seed,
            class_weighting: self.class_weighting,
            bootstrap: true,
        }
    }
}

/// The train/test row split, persisted so evaluation and explanation work on
/// exactly the rows the model never saw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitFile {
    pub seed: u64,
    pub test_fraction: f64,
    pub n_samples: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub label_counts: BTreeMap<String, usize>,
}

/// The trivial baseline: always predict the training majority class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineFile {
    pub majority_class: String,
}

/// Trains the forest plus a single-tree and a majority-class baseline on a
/// stratified split of the sample table.
pub fn stage_train(run: &Path, opts: &TrainOptions) -> Result<(Forest, SplitFile)> {
    let samples = read_features_csv(&require(run, FEATURES_CSV, "featurize")?)?;
    let data = Dataset::from_samples(&samples)?;
    let (train_idx, test_idx) = stratified_split(&data.labels, opts.test_fraction, opts.seed)?;
    let train_set = data.subset(&train_idx);

    let model = forest::train(&train_set, &opts.hyperparameters())?;
    let mut tree_hp = Hyperparameters::single_tree(opts.seed);
    tree_hp.max_depth = opts.max_depth;
    tree_hp.min_samples_leaf = opts.min_samples_leaf;
    tree_hp.class_weighting = opts.class_weighting;
    let baseline_tree = forest::train(&train_set, &tree_hp)?;
    let majority = majority_class(&train_set.labels, data.n_classes());

    let mut label_counts: BTreeMap<String, usize> = BTreeMap::new();
    for &label in &data.labels {
        *label_counts.entry(data.class_names[label].clone()).or_insert(0) += 1;
    }
    let split = SplitFile {
        seed: opts.seed,
        test_fraction: opts.test_fraction,
        n_samples: data.labels.len(),
        train: train_idx,
        test: test_idx,
        label_counts,
    };

    ensure_dir(&run.join("model"))?;
    write_json(&run.join(SPLIT_JSON), &split)?;
    save_model(&model, &run.join(MODEL_JSON))?;
    save_model(&baseline_tree, &run.join(BASELINE_TREE_JSON))?;
    write_json(
        &run.join(BASELINE_JSON),
        &BaselineFile { majority_class: data.class_names[majority].clone() },
    )?;
    record_stage(
        run,
        "train",
        StageRecord {
            inputs: vec![FEATURES_CSV.into()],
            outputs: vec![
                SPLIT_JSON.into(),
                MODEL_JSON.into(),
                BASELINE_TREE_JSON.into(),
                BASELINE_JSON.into(),
            ],
            config_sha256: config_hash(opts),
            seed: Some(opts.seed),
        },
    )?;
    Ok((model, split))
}

// ---------------------------------------------------------------------------
// evaluate stage

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationOutcome {
    pub forest: Metrics,
    pub tree: Metrics,
    pub majority: Metrics,
}

fn push_metrics_rows(out: &mut String, model: &str, metrics: &Metrics) {
    out.push_str(&format!("{model},overall,accuracy,{}\n", metrics.accuracy));
    out.push_str(&format!("{model},overall,macro_f1,{}\n", metrics.macro_f1));
    for class in &metrics.per_class {
        let name = &class.class_name;
        out.push_str(&format!("{model},{name},precision,{}\n", class.precision));
        out.push_str(&format!("{model},{name},recall,{}\n", class.recall));
        out.push_str(&format!("{model},{name},f1,{}\n", class.f1));
        out.push_str(&format!("{model},{name},support,{}\n", class.support));
    }
}

fn push_confusion_rows(out: &mut String, model: &str, metrics: &Metrics, class_names: &[String]) {
    for (i, row) in metrics.confusion.iter().enumerate() {
        for (j, &count) in row.iter().enumerate() {
            out.push_str(&format!("{model},{},{},{count}\n", class_names[i], class_names[j]));
        }
    }
}

/// Scores the trained model and both baselines on the held-out rows.
pub fn stage_evaluate(run: &Path) -> Result<EvaluationOutcome> {
    let samples = read_features_csv(&require(run, FEATURES_CSV, "featurize")?)?;
    let data = Dataset::from_samples(&samples)?;
    let split: SplitFile = read_json(&require(run, SPLIT_JSON, "train")?)?;
    let model = load_model(&require(run, MODEL_JSON, "train")?)?;
    let baseline_tree = load_model(&require(run, BASELINE_TREE_JSON, "train")?)?;
    let baseline: BaselineFile = read_json(&require(run, BASELINE_JSON, "train")?)?;
    if split.test.is_empty() {
        return Err(Error::InvalidArgument(
            "test split is empty; lower the training test fraction or add data".into(),
        ));
    }
    let test = data.subset(&split.test);
    let majority = data
        .class_names
        .iter()
        .position(|c| *c == baseline.majority_class)
        .ok_or_else(|| {
            Error::InvalidArgument(format!("unknown baseline class `{}`", baseline.majority_class))
        })?;

    let forest_pred: Vec<usize> =
        test.features.iter().map(|x| model.predict(x)).collect::<Result<_>>()?;
    let tree_pred: Vec<usize> =
        test.features.iter().map(|x| baseline_tree.predict(x)).collect::<Result<_>>()?;
    let majority_pred = vec![majority; test.labels.len()];
    let outcome = EvaluationOutcome {
        forest: forest::evaluate(&test.labels, &forest_pred, &data.class_names)?,
        tree: forest::evaluate(&test.labels, &tree_pred, &data.class_names)?,
        majority: forest::evaluate(&test.labels, &majority_pred, &data.class_names)?,
    };

    let mut metrics_csv = String::from("model,scope,metric,value\n");
    push_metrics_rows(&mut metrics_csv, "forest", &outcome.forest);
    push_metrics_rows(&mut metrics_csv, "tree", &outcome.tree);
    push_metrics_rows(&mut metrics_csv, "majority", &outcome.majority);
    fs::write(run.join(METRICS_CSV), metrics_csv).map_err(|e| Error::io(run.join(METRICS_CSV), e))?;

    let mut confusion_csv = String::from("model,true,predicted,count\n");
    push_confusion_rows(&mut confusion_csv, "forest", &outcome.forest, &data.class_names);
    push_confusion_rows(&mut confusion_csv, "tree", &outcome.tree, &data.class_names);
    push_confusion_rows(&mut confusion_csv, "majority", &outcome.majority, &data.class_names);
    fs::write(run.join(CONFUSION_CSV), confusion_csv)
        .map_err(|e| Error::io(run.join(CONFUSION_CSV), e))?;

    record_stage(
        run,
        "evaluate",
        StageRecord {
            inputs: vec![
                FEATURES_CSV.into(),
                SPLIT_JSON.into(),
                MODEL_JSON.into(),
                BASELINE_TREE_JSON.into(),
                BASELINE_JSON.into(),
            ],
            outputs: vec![METRICS_CSV.into(), CONFUSION_CSV.into()],
            config_sha256: config_hash(&()),
            seed: None,
        },
    )?;
    Ok(outcome)
}

// ---------------------------------------------------------------------------
// explain stage

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainOptions {
    /// Strongest contributions kept per class in the decision breakdowns.
    pub top_k: usize,
    /// Base feature of the dependence table.
    pub dependence_feature: String,
}

impl Default for ExplainOptions {
    fn default() -> Self {
        ExplainOptions { top_k: 5, dependence_feature: "size".into() }
    }
}

/// Attributes every held-out prediction to its features and writes the
/// decision breakdowns, the attribution heatmap and the dependence table.
pub fn stage_explain(run: &Path, opts: &ExplainOptions) -> Result<ExplanationsFile> {
    let samples = read_features_csv(&require(run, FEATURES_CSV, "featurize")?)?;
    let split: SplitFile = read_json(&require(run, SPLIT_JSON, "train")?)?;
    let model = load_model(&require(run, MODEL_JSON, "train")?)?;
    if split.test.is_empty() {
        return Err(Error::InvalidArgument(
            "test split is empty; lower the training test fraction or add data".into(),
        ));
    }
    let out_of_range = split.test.iter().find(|&&i| i >= samples.len());
    if let Some(&i) = out_of_range {
        return Err(Error::InvalidArgument(format!(
            "split row {i} is outside the sample table; rerun the `train` stage"
        )));
    }
    let test_samples: Vec<SequenceSample> =
        split.test.iter().map(|&i| samples[i].clone()).collect();

    use rayon::prelude::*;
    let shap: Vec<ShapValues> = test_samples
        .par_iter()
        .map(|s| forest_shap(&model, &s.x))
        .collect::<Result<_>>()?;
    let mut records = Vec::with_capacity(test_samples.len());
    for sample in &test_samples {
        let predicted = model.predict(&sample.x)?;
        records.push(DecisionRecord {
            lineage_id: sample.lineage_id.clone(),
            t: sample.t,
            label: sample.label.as_str().to_string(),
            predicted: model.class_names[predicted].clone(),
            classes: explain_sample(&model, &sample.x, opts.top_k)?,
        });
    }
    let file = ExplanationsFile {
        dependence_feature: opts.dependence_feature.clone(),
        top_k: opts.top_k,
        samples: records,
    };

    ensure_dir(&run.join("explanations"))?;
    write_explanations(&file, &run.join(EXPLANATIONS_JSON))?;
    let importance = summarize_importance(&model.class_names, &model.feature_names, &shap)?;
    write_heatmap_csv(&heatmap_rows(&importance)?, &run.join(HEATMAP_CSV))?;
    let dependence = dependence_rows(&test_samples, &shap, &model.class_names, &opts.dependence_feature)?;
    write_dependence_csv(&dependence, &run.join(DEPENDENCE_CSV))?;

    record_stage(
        run,
        "explain",
        StageRecord {
            inputs: vec![FEATURES_CSV.into(), SPLIT_JSON.into(), MODEL_JSON.into()],
            outputs: vec![EXPLANATIONS_JSON.into(), HEATMAP_CSV.into(), DEPENDENCE_CSV.into()],
            config_sha256: config_hash(opts),
            seed: None,
        },
    )?;
    Ok(file)
}

// ---------------------------------------------------------------------------
// report stage

fn copy_artifact(run: &Path, from: &str, to: &str, producer: &str) -> Result<()> {
    let src = require(run, from, producer)?;
    let dst = run.join(to);
    fs::copy(&src, &dst).map_err(|e| Error::io(&dst, e))?;
    Ok(())
}

/// Collects the plot-ready tables into `reports/`.
pub fn stage_report(run: &Path) -> Result<()> {
    let (_, _, snapshots) = load_snapshot_series(run)?;
    let partitions = load_partitions(run)?;
    let events = read_events_file(&require(run, EVENTS_JSON, "track")?)?;
    let explanations = read_explanations(&require(run, EXPLANATIONS_JSON, "explain")?)?;

    ensure_dir(&run.join(REPORT_DIR))?;
    write_ecosystem_csv(
        &ecosystem_rows(&snapshots, &partitions)?,
        &run.join(REPORT_DIR).join("ecosystem_size.csv"),
    )?;
    write_event_distribution_csv(
        &event_distribution(&events),
        &run.join(REPORT_DIR).join("event_distribution.csv"),
    )?;
    copy_artifact(run, HEATMAP_CSV, "reports/importance_heatmap.csv", "explain")?;
    copy_artifact(run, DEPENDENCE_CSV, "reports/dependence.csv", "explain")?;
    write_decision_report(
        &decision_report(&explanations.samples)?,
        &run.join(REPORT_DIR).join("decision_report.json"),
    )?;

    let mut inputs = vec![SNAPSHOT_MANIFEST.to_string(), EVENTS_JSON.to_string()];
    inputs.extend((0..partitions.len()).map(|i| format!("{COMMUNITY_DIR}/partition_{i:04}.json")));
    inputs.push(EXPLANATIONS_JSON.to_string());
    inputs.push(HEATMAP_CSV.to_string());
    inputs.push(DEPENDENCE_CSV.to_string());
    record_stage(
        run,
        "report",
        StageRecord {
            inputs,
            outputs: vec![
                "reports/ecosystem_size.csv".into(),
                "reports/event_distribution.csv".into(),
                "reports/importance_heatmap.csv".into(),
                "reports/dependence.csv".into(),
                "reports/decision_report.json".into(),
            ],
            config_sha256: config_hash(&()),
            seed: None,
        },
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// full pipeline

/// Where a pipeline run gets its event log from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum InputSpec {
    /// Generate a scripted benchmark into the run directory first.
    Synth {
        #[serde(default)]
        script: Option<PathBuf>,
        /// Overrides the script's seed when set.
        #[serde(default)]
        seed: Option<u64>,
    },
    /// Use an existing node table, event log and mechanism config.
    Files {
        nodes: PathBuf,
        events: PathBuf,
        mechanisms: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOptions {
    pub input: InputSpec,
    /// Required for file inputs; defaults to the script grid for synth input.
    #[serde(default)]
    pub start: Option<String>,
    #[serde(default)]
    pub end: Option<String>,
    #[serde(default)]
    pub period_days: Option<u32>,
    #[serde(default)]
    pub detect: DetectConfig,
    #[serde(default)]
    pub tracker: TrackerConfig,
    #[serde(default)]
    pub features: FeaturizeOptions,
    #[serde(default)]
    pub train: TrainOptions,
    #[serde(default)]
    pub explain: ExplainOptions,
}

impl PipelineOptions {
    pub fn synth_defaults() -> Self {
        PipelineOptions {
            input: InputSpec::Synth { script: None, seed: None },
            start: None,
            end: None,
            period_days: None,
            detect: DetectConfig::default(),
            tracker: TrackerConfig::default(),
            features: FeaturizeOptions::default(),
            train: TrainOptions::default(),
            explain: ExplainOptions::default(),
        }
    }
}

/// Headline numbers of a finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub n_snapshots: usize,
    pub sequences: SequenceSummary,
    pub n_train: usize,
    pub n_test: usize,
    pub forest_accuracy: f64,
    pub forest_macro_f1: f64,
    pub tree_macro_f1: f64,
    pub majority_macro_f1: f64,
    pub n_explained: usize,
}

/// Runs every stage in order against one run directory. Each stage reads its
/// inputs back from disk, so the result is identical to invoking the stages
/// one by one.
pub fn run_pipeline(run: &Path, opts: &PipelineOptions) -> Result<PipelineSummary> {
    ensure_dir(run)?;
    let snapshot_opts = match &opts.input {
        InputSpec::Synth { script, seed } => {
            let mut script_cfg = match script {
                Some(path) => load_script(path)?,
                None => default_benchmark(),
            };
            if let Some(seed) = seed {
                script_cfg.seed = *seed;
            }
            stage_synth(run, &script_cfg, script.as_deref())?;
            let start = opts.start.clone().unwrap_or_else(|| script_cfg.start.clone());
            let period_days = opts.period_days.unwrap_or(script_cfg.period_days);
            let end = match &opts.end {
                Some(end) => end.clone(),
                None => {
                    let grid_end = parse_instant(&script_cfg.start)?
                        + Duration::days(script_cfg.period_days as i64 * (script_cfg.n_snapshots as i64 - 1));
                    format_instant(grid_end)
                }
            };
            SnapshotOptions {
                nodes: run.join(NODES_FILE),
                events: run.join(EVENTS_FILE),
                mechanisms: run.join(MECHANISMS_FILE),
                start,
                end,
                period_days,
            }
        }
        InputSpec::Files { nodes, events, mechanisms } => {
            let (start, end) = match (&opts.start, &opts.end) {
                (Some(s), Some(e)) => (s.clone(), e.clone()),
                _ => {
                    return Err(Error::InvalidArgument(
                        "file input needs an explicit start and end instant".into(),
                    ))
                }
            };
            SnapshotOptions {
                nodes: nodes.clone(),
                events: events.clone(),
                mechanisms: mechanisms.clone(),
                start,
                end,
                period_days: opts.period_days.unwrap_or_else(default_period_days),
            }
        }
    };

    let manifest = stage_snapshot(run, &snapshot_opts)?;
    stage_detect(run, &opts.detect)?;
    stage_track(run, &opts.tracker)?;
    let sequences = stage_featurize(run, &opts.features)?;
    let (_, split) = stage_train(run, &opts.train)?;
    let evaluation = stage_evaluate(run)?;
    let explanations = stage_explain(run, &opts.explain)?;
    stage_report(run)?;

    Ok(PipelineSummary {
        n_snapshots: manifest.files.len(),
        sequences,
        n_train: split.train.len(),
        n_test: split.test.len(),
        forest_accuracy: evaluation.forest.accuracy,
        forest_macro_f1: evaluation.forest.macro_f1,
        tree_macro_f1: evaluation.tree.macro_f1,
        majority_macro_f1: evaluation.majority.macro_f1,
        n_explained: explanations.samples.len(),
    })
}
