//! Command-line front end.
//!
//! Every subcommand resolves one [`RunConfig`] (defaults, then the optional
//! `--config` JSON file, then flags) and echoes it into its output directory.
//! Module seeds are always derived from the global `seed` plus the offsets in
//! [`crate::seeds`], so the echoed config reproduces the run.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::analyze::{
    cluster_report, compare_cluster_reports, end_state_deciles, test_mortality_association, test_pruning_uniformity,
    test_run_reward_loss_disparity, write_cluster_report_csv, write_deciles_csv, write_pairwise_csv, DisparityResult,
    TestResult, DEFAULT_PERMUTATIONS, DEFAULT_TOP_K,
};
use crate::discretize::{assign_states, build_trajectory_set, fit_state_space, ClusterModel, KMeansConfig, SubjectSequence};
use crate::error::{Error, Result};
use crate::ingest::{
    ingest_subjects, read_cohort_csv, read_ingested_csv, write_ingested_csv, ActionCodec, CohortSchema,
    DemographicGrouping, IngestedSchema, NormalValueTable, OutlierBounds,
};
use crate::io::{create_dir, read_json, write_json, Manifest};
use crate::maxent::{train_maxent_irl_logged, write_training_log, IrlConfig, Optimizer, RewardInit};
use crate::mdp::{write_expected_reward_csv, RewardModel, TransitionModel};
use crate::pipeline::{run_two_stage, TwoStageResult};
use crate::prune::{score_all, select_retained, write_scores_csv, PruneConfig, PruneMethod};
use crate::seeds;
use crate::synth::{
    evaluate_recovery, generate_population, generate_world, read_labels_csv, write_labels_csv, CorruptionMode,
    Population, PopulationConfig, SyntheticWorld,
};
use crate::trajectory::TrajectorySet;

pub const OUT_ROOT_ENV: &str = "CONSENSUS_IRL_OUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub states: usize,
    pub actions: usize,
    pub branching: usize,
    pub population: PopulationConfig,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            states: 100,
            actions: 4,
            branching: 4,
            population: PopulationConfig::default(),
        }
    }
}

/// Raw cohort inputs for the ingest stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortSection {
    pub path: PathBuf,
    pub normals: PathBuf,
    #[serde(default)]
    pub bounds: Option<PathBuf>,
    /// Built-in codec name (`hypotension` or `sepsis`).
    #[serde(default)]
    pub condition: Option<String>,
    /// Codec JSON file; takes precedence over `condition`.
    #[serde(default)]
    pub codec: Option<PathBuf>,
    #[serde(default)]
    pub grouping: Option<PathBuf>,
    #[serde(default)]
    pub schema: Option<CohortSchema>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeSection {
    pub permutations: usize,
    pub top_k: usize,
    /// Restrict the reward-loss disparity test to retained trajectories.
    pub retained_only: bool,
    /// Demographic tags to test; all tags when empty.
    pub attributes: Vec<String>,
    pub seed: u64,
}

impl Default for AnalyzeSection {
    fn default() -> Self {
        AnalyzeSection {
            permutations: DEFAULT_PERMUTATIONS,
            top_k: DEFAULT_TOP_K,
            retained_only: false,
            attributes: Vec::new(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub fractions: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            fractions: vec![0.2, 0.5, 0.8],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Directory holding `trajectories.csv` and `space.json`.
    pub input: Option<PathBuf>,
    pub synth: SynthSection,
    pub cohort: Option<CohortSection>,
    pub cluster: KMeansConfig,
    pub irl: IrlConfig,
    pub prune: PruneConfig,
    pub analyze: AnalyzeSection,
    pub sweep: SweepSection,
}

impl RunConfig {
    /// Overwrite every module seed with `seed` plus its offset.
    pub fn derive_seeds(&mut self) {
        let s = self.seed;
        self.synth.population.seed = s.wrapping_add(seeds::POPULATION);
        self.cluster.seed = s.wrapping_add(seeds::CLUSTER);
        self.irl.seed = s.wrapping_add(seeds::IRL);
        self.prune.seed = s.wrapping_add(seeds::PRUNE);
        self.analyze.seed = s.wrapping_add(seeds::ANALYZE);
    }

    pub fn world_seed(&self) -> u64 {
        self.seed.wrapping_add(seeds::WORLD)
    }

    fn seed_table(&self) -> BTreeMap<String, u64> {
        [
            ("global", self.seed),
            ("world", self.world_seed()),
            ("population", self.synth.population.seed),
            ("cluster", self.cluster.seed),
            ("irl", self.irl.seed),
            ("prune", self.prune.seed),
            ("analyze", self.analyze.seed),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

/// State and action counts of a trajectory directory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateSpace {
    pub n_states: usize,
    pub n_actions: usize,
}

#[derive(Parser, Debug)]
#[command(name = "consensus-irl", version, about = "Two-stage MaxEnt IRL with consensus-based trajectory pruning")]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root directory for default output locations.
    #[arg(long, global = true, env = OUT_ROOT_ENV, default_value = "runs")]
    out_root: PathBuf,
    /// Worker threads for parallel sections (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Global seed; module seeds are derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic world and a mixed expert population.
    Synth(SynthArgs),
    /// Clean a raw cohort CSV and encode treatments as actions.
    Ingest(IngestArgs),
    /// Fit the k-means state space and build trajectories.
    Cluster(ClusterArgs),
    /// Train a single MaxEnt IRL reward.
    Irl(IrlArgs),
    /// Score and select trajectories against a trained reward.
    Prune(PruneArgs),
    /// Two-stage IRL with pruning and all reports.
    Pipeline(PipelineArgs),
    /// Recompute reports for an existing pipeline run.
    Analyze(AnalyzeArgs),
    /// Run the pipeline for several retention fractions.
    Sweep(SweepArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum CorruptionArg {
    RandomPolicy,
    NegatedReward,
    LowTemperature,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    states: Option<usize>,
    #[arg(long)]
    actions: Option<usize>,
    #[arg(long)]
    branching: Option<usize>,
    #[arg(long)]
    trajectories: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    /// Fraction of corrupted experts.
    #[arg(long)]
    corrupted: Option<f64>,
    #[arg(long, value_enum)]
    corruption: Option<CorruptionArg>,
    /// Inverse temperature of low-temperature corrupted experts.
    #[arg(long, default_value_t = 0.5)]
    bad_beta: f64,
    /// Inverse temperature of competent experts.
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct CohortFlags {
    /// Raw cohort CSV.
    #[arg(long)]
    cohort: Option<PathBuf>,
    /// Normal-value table JSON.
    #[arg(long)]
    normals: Option<PathBuf>,
    /// Outlier bounds JSON.
    #[arg(long)]
    bounds: Option<PathBuf>,
    /// Built-in action codec.
    #[arg(long)]
    condition: Option<String>,
    /// Action codec JSON.
    #[arg(long)]
    codec: Option<PathBuf>,
    /// Demographic relabelling JSON.
    #[arg(long)]
    grouping: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct IngestArgs {
    #[command(flatten)]
    cohort: CohortFlags,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct ClusterFlags {
    /// Number of k-means clusters.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    min_size: Option<usize>,
    #[arg(long)]
    restarts: Option<usize>,
}

#[derive(Args, Debug)]
struct ClusterArgs {
    /// Ingest output directory.
    #[arg(long)]
    input: Option<PathBuf>,
    #[command(flatten)]
    cluster: ClusterFlags,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum OptimizerArg {
    Sga,
    Expsga,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum InitArg {
    Ones,
    Gaussian,
}

#[derive(Args, Debug, Default)]
struct IrlFlags {
    #[arg(long, value_enum)]
    optimizer: Option<OptimizerArg>,
    #[arg(long)]
    lr0: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, value_enum)]
    init: Option<InitArg>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    grad_tolerance: Option<f64>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum MethodArg {
    Deviation,
    Likelihood,
    Random,
}

#[derive(Args, Debug, Default)]
struct PruneFlags {
    /// Retention fraction in (0, 1].
    #[arg(long)]
    retain: Option<f64>,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    /// Likelihood pruning: keep this percentage.
    #[arg(long)]
    percentile: Option<f64>,
    /// Likelihood pruning: keep trajectories with likelihood at least this.
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Args, Debug, Default)]
struct AnalyzeFlags {
    #[arg(long)]
    permutations: Option<usize>,
    #[arg(long)]
    top_k: Option<usize>,
    /// Restrict the reward-loss disparity test to retained trajectories.
    #[arg(long)]
    retained_only: bool,
    /// Demographic tag to test (repeatable).
    #[arg(long = "attribute")]
    attributes: Vec<String>,
}

#[derive(Args, Debug)]
struct IrlArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    #[command(flatten)]
    irl: IrlFlags,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PruneArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    /// Reward model JSON to score against (default: `<out-root>/irl/rewards.json`).
    #[arg(long)]
    rewards: Option<PathBuf>,
    #[command(flatten)]
    prune: PruneFlags,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PipelineArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    #[command(flatten)]
    cohort: CohortFlags,
    #[command(flatten)]
    cluster: ClusterFlags,
    #[command(flatten)]
    irl: IrlFlags,
    #[command(flatten)]
    prune: PruneFlags,
    #[command(flatten)]
    analyze: AnalyzeFlags,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    /// Pipeline run directory.
    #[arg(long)]
    run: PathBuf,
    #[command(flatten)]
    analyze: AnalyzeFlags,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    /// Retention fractions, comma separated.
    #[arg(long, value_delimiter = ',')]
    fractions: Vec<f64>,
    #[command(flatten)]
    irl: IrlFlags,
    #[command(flatten)]
    prune: PruneFlags,
    #[command(flatten)]
    analyze: AnalyzeFlags,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parse `args` (including the program name), run, and return the exit code.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not configure the thread pool: {e}");
        }
    }
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn set<T>(target: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *target = v;
    }
}

impl IrlFlags {
    fn apply(&self, c: &mut IrlConfig) {
        set(
            &mut c.optimizer,
            self.optimizer.map(|o| match o {
                OptimizerArg::Sga => Optimizer::Sga,
                OptimizerArg::Expsga => Optimizer::ExpSga,
            }),
        );
        set(&mut c.lr0, self.lr0);
        set(&mut c.epochs, self.epochs);
        set(
            &mut c.init,
            self.init.map(|i| match i {
                InitArg::Ones => RewardInit::Ones,
                InitArg::Gaussian => RewardInit::Gaussian,
            }),
        );
        if self.horizon.is_some() {
            c.horizon = self.horizon;
        }
        set(&mut c.grad_tolerance, self.grad_tolerance);
    }
}

impl PruneFlags {
    fn apply(&self, c: &mut PruneConfig) {
        set(&mut c.retain_fraction, self.retain);
        set(
            &mut c.method,
            self.method.map(|m| match m {
                MethodArg::Deviation => PruneMethod::Deviation,
                MethodArg::Likelihood => PruneMethod::Likelihood,
                MethodArg::Random => PruneMethod::Random,
            }),
        );
        if self.percentile.is_some() {
            c.likelihood_percentile = self.percentile;
        }
        if self.threshold.is_some() {
            c.likelihood_threshold = self.threshold;
        }
    }
}

impl AnalyzeFlags {
    fn apply(&self, c: &mut AnalyzeSection) {
        set(&mut c.permutations, self.permutations);
        set(&mut c.top_k, self.top_k);
        c.retained_only |= self.retained_only;
        if !self.attributes.is_empty() {
            c.attributes = self.attributes.clone();
        }
    }
}

impl ClusterFlags {
    fn apply(&self, c: &mut KMeansConfig) {
        set(&mut c.k, self.k);
        set(&mut c.min_size, self.min_size);
        set(&mut c.restarts, self.restarts);
    }
}

impl CohortFlags {
    fn apply(&self, cohort: &mut Option<CohortSection>) -> Result<()> {
        let any = self.cohort.is_some()
            || self.normals.is_some()
            || self.bounds.is_some()
            || self.condition.is_some()
            || self.codec.is_some()
            || self.grouping.is_some();
        if !any {
            return Ok(());
        }
        if cohort.is_none() {
            let (Some(path), Some(normals)) = (self.cohort.clone(), self.normals.clone()) else {
                return Err(Error::param("cli", "cohort", "--cohort and --normals are both required"));
            };
            *cohort = Some(CohortSection {
                path,
                normals,
                bounds: None,
                condition: None,
                codec: None,
                grouping: None,
                schema: None,
            });
        }
        let c = cohort.as_mut().expect("set above");
        set(&mut c.path, self.cohort.clone());
        set(&mut c.normals, self.normals.clone());
        if self.bounds.is_some() {
            c.bounds = self.bounds.clone();
        }
        if self.condition.is_some() {
            c.condition = self.condition.clone();
        }
        if self.codec.is_some() {
            c.codec = self.codec.clone();
        }
        if self.grouping.is_some() {
            c.grouping = self.grouping.clone();
        }
        Ok(())
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut config: RunConfig = match &cli.config {
        Some(path) => read_json(path)?,
        None => RunConfig::default(),
    };
    set(&mut config.seed, cli.seed);
    let root = cli.out_root;
    let default_input = |c: &RunConfig, sub: &str| c.input.clone().unwrap_or_else(|| root.join(sub));
    match cli.command {
        Command::Synth(a) => {
            let s = &mut config.synth;
            set(&mut s.states, a.states);
            set(&mut s.actions, a.actions);
            set(&mut s.branching, a.branching);
            set(&mut s.population.n_trajectories, a.trajectories);
            set(&mut s.population.horizon, a.horizon);
            set(&mut s.population.corrupted_fraction, a.corrupted);
            set(&mut s.population.beta, a.beta);
            set(
                &mut s.population.corruption,
                a.corruption.map(|c| match c {
                    CorruptionArg::RandomPolicy => CorruptionMode::RandomPolicy,
                    CorruptionArg::NegatedReward => CorruptionMode::NegatedReward,
                    CorruptionArg::LowTemperature => CorruptionMode::LowTemperature { beta: a.bad_beta },
                }),
            );
            config.derive_seeds();
            cmd_synth(&config, &a.out.unwrap_or_else(|| root.join("synth")))
        }
        Command::Ingest(a) => {
            a.cohort.apply(&mut config.cohort)?;
            config.derive_seeds();
            cmd_ingest(&config, &a.out.unwrap_or_else(|| root.join("ingest")))
        }
        Command::Cluster(a) => {
            a.cluster.apply(&mut config.cluster);
            if a.input.is_some() {
                config.input = a.input;
            }
            config.input = Some(default_input(&config, "ingest"));
            config.derive_seeds();
            cmd_cluster(&config, &a.out.unwrap_or_else(|| root.join("cluster")))
        }
        Command::Irl(a) => {
            a.irl.apply(&mut config.irl);
            if a.input.is_some() {
                config.input = a.input;
            }
            config.input = Some(default_input(&config, "synth"));
            config.derive_seeds();
            cmd_irl(&config, &a.out.unwrap_or_else(|| root.join("irl")))
        }
        Command::Prune(a) => {
            a.prune.apply(&mut config.prune);
            if a.input.is_some() {
                config.input = a.input;
            }
            config.input = Some(default_input(&config, "synth"));
            config.derive_seeds();
            let rewards = a.rewards.unwrap_or_else(|| root.join("irl").join("rewards.json"));
            cmd_prune(&config, &rewards, &a.out.unwrap_or_else(|| root.join("prune")))
        }
        Command::Pipeline(a) => {
            a.cohort.apply(&mut config.cohort)?;
            a.cluster.apply(&mut config.cluster);
            a.irl.apply(&mut config.irl);
            a.prune.apply(&mut config.prune);
            a.analyze.apply(&mut config.analyze);
            if a.input.is_some() {
                config.input = a.input;
            }
            if config.cohort.is_none() {
                config.input = Some(default_input(&config, "synth"));
            }
            config.derive_seeds();
            run_pipeline(&config, &a.out.unwrap_or_else(|| root.join("pipeline"))).map(|_| ())
        }
        Command::Analyze(a) => {
            let mut config: RunConfig = read_json(&a.run.join("config.json"))?;
            set(&mut config.seed, cli.seed);
            a.analyze.apply(&mut config.analyze);
            config.derive_seeds();
            cmd_analyze(&config, &a.run, &a.out.unwrap_or_else(|| a.run.join("analysis")))
        }
        Command::Sweep(a) => {
            a.irl.apply(&mut config.irl);
            a.prune.apply(&mut config.prune);
            a.analyze.apply(&mut config.analyze);
            if !a.fractions.is_empty() {
                config.sweep.fractions = a.fractions;
            }
            if a.input.is_some() {
                config.input = a.input;
            }
            config.input = Some(default_input(&config, "synth"));
            config.derive_seeds();
            cmd_sweep(&config, &a.out.unwrap_or_else(|| root.join("sweep")))
        }
    }
}

fn finish(subcommand: &str, config: &RunConfig, dir: &Path, mut files: Vec<PathBuf>, notes: Vec<String>) -> Result<()> {
    let echo = dir.join("config.json");
    write_json(&echo, config)?;
    files.insert(0, echo);
    let mut manifest = Manifest::new(subcommand, serde_json::to_value(config).expect("config serializes"));
    manifest.seeds = config.seed_table();
    manifest.notes = notes;
    manifest.finish(dir, &files)
}

/// World and population for the `synth` section (seeds as already derived).
pub fn synthesize(config: &RunConfig) -> Result<(SyntheticWorld, Population)> {
    let s = &config.synth;
    s.population.validate()?;
    let world = generate_world(s.states, s.actions, s.branching, s.population.horizon, config.world_seed())?;
    let population = generate_population(&world, &s.population)?;
    Ok((world, population))
}

fn cmd_synth(config: &RunConfig, out: &Path) -> Result<()> {
    let (world, population) = synthesize(config)?;
    create_dir(out)?;
    let files = write_synth(out, &world, &population.trajectories, &population.labels)?;
    log::info!(
        "synth: {} trajectories, {} corrupted",
        population.trajectories.len(),
        population.corrupted_ids().len()
    );
    finish("synth", config, out, files, vec![])
}

/// Write a world and its population in the layout the pipeline reads.
pub fn write_synth(out: &Path, world: &SyntheticWorld, set: &TrajectorySet, labels: &[(String, bool)]) -> Result<Vec<PathBuf>> {
    let files = vec![out.join("world.json"), out.join("trajectories.csv"), out.join("labels.csv"), out.join("space.json")];
    write_json(&files[0], world)?;
    set.write_csv(&files[1])?;
    write_labels_csv(&files[2], labels)?;
    write_json(
        &files[3],
        &StateSpace {
            n_states: world.n_states,
            n_actions: world.n_actions,
        },
    )?;
    Ok(files)
}

fn load_codec(cohort: &CohortSection) -> Result<ActionCodec> {
    if let Some(path) = &cohort.codec {
        return read_json(path);
    }
    let name = cohort.condition.as_deref().unwrap_or("hypotension");
    ActionCodec::builtin(name).ok_or_else(|| Error::param("ingest", "condition", format!("no built-in codec `{name}`")))
}

fn ingest_into(config: &RunConfig, out: &Path) -> Result<(Vec<PathBuf>, Vec<String>)> {
    let cohort = config
        .cohort
        .as_ref()
        .ok_or_else(|| Error::param("ingest", "cohort", "no cohort given (--cohort/--normals or `cohort` in the config)"))?;
    let normals: NormalValueTable = read_json(&cohort.normals)?;
    let bounds: OutlierBounds = match &cohort.bounds {
        Some(p) => read_json(p)?,
        None => OutlierBounds::default(),
    };
    let grouping: DemographicGrouping = match &cohort.grouping {
        Some(p) => read_json(p)?,
        None => DemographicGrouping::default(),
    };
    let codec = load_codec(cohort)?;
    let (schema, subjects) = read_cohort_csv(&cohort.path, cohort.schema.as_ref(), &normals, &codec)?;
    let (rows, report) = ingest_subjects(&schema, subjects, &normals, &bounds, &codec, &grouping)?;
    let ingested = IngestedSchema {
        features: schema.features.clone(),
        demographics: schema.demographics.clone(),
        codec,
    };
    let files = vec![out.join("ingested.csv"), out.join("ingest_schema.json"), out.join("ingest_report.json")];
    write_ingested_csv(&files[0], &ingested, &rows)?;
    write_json(&files[1], &ingested)?;
    write_json(&files[2], &report)?;
    let notes = vec![format!(
        "{} of {} subjects kept, {} rows dropped as outliers",
        report.subjects_out, report.subjects_in, report.outliers.rows_dropped
    )];
    Ok((files, notes))
}

fn cmd_ingest(config: &RunConfig, out: &Path) -> Result<()> {
    create_dir(out)?;
    let (files, notes) = ingest_into(config, out)?;
    finish("ingest", config, out, files, notes)
}

fn cluster_into(config: &RunConfig, ingest_dir: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let schema: IngestedSchema = read_json(&ingest_dir.join("ingest_schema.json"))?;
    let rows = read_ingested_csv(&ingest_dir.join("ingested.csv"), &schema)?;
    let features: Vec<Vec<f64>> = rows.iter().map(|r| r.features.clone()).collect();
    let model = fit_state_space(&features, &schema.features, &config.cluster)?;
    let states = assign_states(&features, &model)?;

    let mut subjects: Vec<SubjectSequence> = Vec::new();
    for (row, state) in rows.iter().zip(states) {
        if subjects.last().is_none_or(|s| s.id != row.subject_id) {
            subjects.push(SubjectSequence {
                id: row.subject_id.clone(),
                states: Vec::new(),
                actions: Vec::new(),
                demographics: row.demographics.clone(),
                died_in_hospital: row.died_in_hospital,
            });
        }
        let s = subjects.last_mut().expect("pushed above");
        s.states.push(state);
        s.actions.push(row.action);
    }
    let (set, report) = build_trajectory_set(subjects, schema.demographics.clone())?;
    if !report.excluded.is_empty() {
        log::warn!("cluster: {} subjects with fewer than two steps excluded", report.excluded.len());
    }
    let files = vec![out.join("cluster_model.json"), out.join("trajectories.csv"), out.join("space.json"), out.join("build_report.json")];
    write_json(&files[0], &model)?;
    set.write_csv(&files[1])?;
    write_json(
        &files[2],
        &StateSpace {
            n_states: model.k,
            n_actions: schema.codec.n_actions(),
        },
    )?;
    write_json(&files[3], &report)?;
    Ok(files)
}

fn cmd_cluster(config: &RunConfig, out: &Path) -> Result<()> {
    create_dir(out)?;
    let input = config.input.as_deref().expect("resolved by caller");
    let files = cluster_into(config, input, out)?;
    finish("cluster", config, out, files, vec![])
}

/// Everything a trajectory directory can provide.
pub struct InputData {
    pub trajectories: TrajectorySet,
    pub space: StateSpace,
    pub world: Option<SyntheticWorld>,
    pub labels: Option<Vec<(String, bool)>>,
    pub cluster_model: Option<ClusterModel>,
}

pub fn load_input(dir: &Path) -> Result<InputData> {
    let trajectories = TrajectorySet::read_csv(&dir.join("trajectories.csv"))?;
    let space_path = dir.join("space.json");
    let space = if space_path.exists() {
        read_json(&space_path)?
    } else {
        let (n_states, n_actions) = trajectories.dims();
        log::warn!("{} missing; inferring {n_states} states and {n_actions} actions from the data", space_path.display());
        StateSpace { n_states, n_actions }
    };
    trajectories.validate(space.n_states, space.n_actions)?;
    let optional = |name: &str| Some(dir.join(name)).filter(|p| p.exists());
    let world = optional("world.json").map(|p| read_json(&p)).transpose()?;
    let labels = optional("labels.csv").map(|p| read_labels_csv(&p)).transpose()?;
    let cluster_model = optional("cluster_model.json").map(|p| read_json(&p)).transpose()?;
    Ok(InputData {
        trajectories,
        space,
        world,
        labels,
        cluster_model,
    })
}

fn cmd_irl(config: &RunConfig, out: &Path) -> Result<()> {
    let input = load_input(config.input.as_deref().expect("resolved by caller"))?;
    config.irl.validate()?;
    let transitions = TransitionModel::estimate(&input.trajectories, input.space.n_states, input.space.n_actions)?;
    let (reward, log) = train_maxent_irl_logged(&input.trajectories, &transitions, &config.irl, "single")?;
    create_dir(out)?;
    let files = vec![out.join("rewards.json"), out.join("training.csv"), out.join("expected_reward.csv")];
    write_json(&files[0], &reward)?;
    write_training_log(&files[1], &log)?;
    write_expected_reward_csv(&files[2], &transitions, &reward.rewards)?;
    finish("irl", config, out, files, vec![])
}

#[derive(Serialize)]
struct SelectionFile<'a> {
    method: PruneMethod,
    retained: &'a [String],
    pruned: &'a [String],
    cutoff: Option<f64>,
}

fn cmd_prune(config: &RunConfig, rewards: &Path, out: &Path) -> Result<()> {
    let input = load_input(config.input.as_deref().expect("resolved by caller"))?;
    let reward: RewardModel = read_json(rewards)?;
    if reward.n_states() != input.space.n_states {
        return Err(Error::schema(
            "prune",
            format!("reward has {} states, trajectories use {}", reward.n_states(), input.space.n_states),
        ));
    }
    let transitions = TransitionModel::estimate(&input.trajectories, input.space.n_states, input.space.n_actions)?;
    let (_, scores) = score_all(&input.trajectories, &transitions, &reward.rewards)?;
    let selection = select_retained(&scores, &config.prune)?;
    create_dir(out)?;
    let files = vec![out.join("scores.csv"), out.join("selection.json")];
    write_scores_csv(&files[0], &scores, &selection, &input.trajectories)?;
    write_json(
        &files[1],
        &SelectionFile {
            method: config.prune.method,
            retained: &selection.retained,
            pruned: &selection.pruned,
            cutoff: selection.cutoff,
        },
    )?;
    finish("prune", config, out, files, vec![])
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DemographicTests {
    pub pruning_uniformity: Vec<TestResult>,
    pub mortality_association: Option<TestResult>,
    pub reward_loss_disparity: Vec<DisparityResult>,
    /// Tests that could not run, with the reason.
    pub skipped: Vec<String>,
}

/// Deciles, demographic tests, cluster tables and recovery metrics for a run.
pub fn write_analysis(dir: &Path, input: &InputData, result: &TwoStageResult, section: &AnalyzeSection) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    let set = &input.trajectories;
    match end_state_deciles(&result.scores) {
        Ok(rows) => {
            let path = dir.join("deciles.csv");
            write_deciles_csv(&path, &rows)?;
            files.push(path);
        }
        Err(e) => log::warn!("deciles skipped: {e}"),
    }

    let attributes = if section.attributes.is_empty() {
        set.tags.clone()
    } else {
        section.attributes.clone()
    };
    let mut tests = DemographicTests::default();
    let n = section.permutations;
    for (i, attribute) in attributes.iter().enumerate() {
        let seed = section.seed.wrapping_add(2 * i as u64);
        match test_pruning_uniformity(set, &result.pruned, attribute, n, seed) {
            Ok(t) => tests.pruning_uniformity.push(t),
            Err(e @ Error::Parameter { .. }) => tests.skipped.push(format!("pruning_uniformity[{attribute}]: {e}")),
            Err(e) => return Err(e),
        }
        match test_run_reward_loss_disparity(set, result, attribute, section.retained_only, n, seed + 1) {
            Ok(d) => {
                let path = dir.join(format!("pairwise_{attribute}.csv"));
                write_pairwise_csv(&path, &d.pairwise)?;
                files.push(path);
                tests.reward_loss_disparity.push(d);
            }
            Err(e @ Error::Parameter { .. }) => tests.skipped.push(format!("reward_loss_disparity[{attribute}]: {e}")),
            Err(e) => return Err(e),
        }
    }
    let mortality_seed = section.seed.wrapping_add(2 * attributes.len() as u64);
    match test_mortality_association(set, &result.pruned, n, mortality_seed) {
        Ok(t) => tests.mortality_association = Some(t),
        Err(e @ Error::Parameter { .. }) => tests.skipped.push(format!("mortality_association: {e}")),
        Err(e) => return Err(e),
    }
    for s in &tests.skipped {
        log::warn!("{s}");
    }
    let path = dir.join("demographic_tests.json");
    write_json(&path, &tests)?;
    files.push(path);

    if let Some(model) = &input.cluster_model {
        let available = model.retained_ids().count();
        let top_k = section.top_k.min(available);
        if top_k < section.top_k {
            log::warn!("top_k lowered to {top_k}: only {available} retained clusters");
        }
        let r1 = cluster_report(model, &result.reward_stage1.rewards, "stage1", top_k)?;
        let r2 = cluster_report(model, &result.reward_stage2.rewards, "stage2", top_k)?;
        let paths = [dir.join("clusters_stage1.csv"), dir.join("clusters_stage2.csv"), dir.join("cluster_comparison.json")];
        write_cluster_report_csv(&paths[0], &r1)?;
        write_cluster_report_csv(&paths[1], &r2)?;
        write_json(&paths[2], &compare_cluster_reports(&r1, &r2))?;
        files.extend(paths);
    }

    if let (Some(world), Some(labels)) = (&input.world, &input.labels) {
        let path = dir.join("recovery.json");
        write_json(&path, &evaluate_recovery(world, result, labels)?)?;
        files.push(path);
    }
    Ok(files)
}

const SHARED_KERNEL_NOTE: &str = "transition model estimated once from all trajectories and shared by both stages";

/// Run the full pipeline into `out`; returns the two-stage result.
pub fn run_pipeline(config: &RunConfig, out: &Path) -> Result<TwoStageResult> {
    create_dir(out)?;
    let mut files = Vec::new();
    let mut notes = vec![SHARED_KERNEL_NOTE.to_string()];
    let input_dir = if config.cohort.is_some() {
        let (ingest_files, ingest_notes) = ingest_into(config, out)?;
        files.extend(ingest_files);
        notes.extend(ingest_notes);
        files.extend(cluster_into(config, out, out)?);
        out.to_path_buf()
    } else {
        config.input.clone().expect("resolved by caller")
    };
    let input = load_input(&input_dir)?;
    let result = run_two_stage(
        &input.trajectories,
        input.space.n_states,
        input.space.n_actions,
        &config.irl,
        &config.prune,
    )?;
    let result_path = out.join("result.json");
    write_json(&result_path, &result)?;
    files.push(result_path);
    files.extend(result.write_artifacts(out, &input.trajectories)?);
    files.extend(write_analysis(out, &input, &result, &config.analyze)?);
    files.sort();
    files.dedup();
    finish("pipeline", config, out, files, notes)?;
    Ok(result)
}

fn cmd_analyze(config: &RunConfig, run_dir: &Path, out: &Path) -> Result<()> {
    let input_dir = if config.cohort.is_some() {
        run_dir.to_path_buf()
    } else {
        config
            .input
            .clone()
            .ok_or_else(|| Error::param("analyze", "input", "run config has no input directory"))?
    };
    let input = load_input(&input_dir)?;
    let result: TwoStageResult = read_json(&run_dir.join("result.json"))?;
    create_dir(out)?;
    let files = write_analysis(out, &input, &result, &config.analyze)?;
    finish("analyze", config, out, files, vec![])
}

fn cmd_sweep(config: &RunConfig, out: &Path) -> Result<()> {
    if config.sweep.fractions.is_empty() {
        return Err(Error::param("cli", "sweep.fractions", "no retention fractions given"));
    }
    create_dir(out)?;
    let mut summary = Vec::new();
    for &f in &config.sweep.fractions {
        let mut run = config.clone();
        run.prune.retain_fraction = f;
        let dir = out.join(format!("retain_{f:.2}"));
        let result = run_pipeline(&run, &dir)?;
        summary.push(serde_json::json!({
            "retain_fraction": f,
            "dir": dir.file_name().map(|n| n.to_string_lossy().into_owned()),
            "retained": result.retained.len(),
            "pruned": result.pruned.len(),
            "policy_agreement": result.policy_agreement.iter().filter(|&&a| a).count() as f64
                / result.policy_agreement.len().max(1) as f64,
        }));
    }
    let path = out.join("sweep.json");
    write_json(&path, &summary)?;
    finish("sweep", config, out, vec![path], vec![SHARED_KERNEL_NOTE.to_string()])
}
