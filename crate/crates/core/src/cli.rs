//! Command-line driver: run configuration, subcommands and exit codes.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::diary::{
    generate_planted_corpus, parse_diary_corpus, write_activities_csv, write_demographics_csv, ActivityRecord,
    DiaryCorpus, Lexicons, PlantedSpec,
};
use crate::featurize::FeatureSet;
use crate::pipeline::{class_summary, classify_corpus, read_final_classes, write_bundle, write_classes_csv, PipelineParams};
use crate::svg::{heatmap_svg, scatter_svg};
use crate::synth::{read_sequences_csv, synthesize, write_sequences_csv, SynthParams, SyntheticSequence};
use crate::validate::{corpus_report, SimilarityReport};
use crate::window::{fit_cohort_model, BgmParams, CohortActivityModel};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVARIANT: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

/// A failed command: the message and the exit code class.
#[derive(Debug)]
pub enum CliError {
    /// Missing or malformed input (exit 2).
    Input(String),
    /// A stage or invariant failed on valid input (exit 1).
    Invariant(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Input(_) => EXIT_INPUT,
            Self::Invariant(_) => EXIT_INVARIANT,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Self::Input(m) | Self::Invariant(m) => m,
        }
    }
}

fn input(context: impl std::fmt::Display, e: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("{context}: {e}"))
}

fn invariant(context: impl std::fmt::Display, e: impl std::fmt::Display) -> CliError {
    CliError::Invariant(format!("{context}: {e}"))
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "cohort-synth", version, about = "Diary cohort classification and activity sequence synthesis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the planted archetype corpus and its truth labels.
    Plant(CommonArgs),
    /// Classify the corpus (both feature sets unless one is given).
    Classify(CommonArgs),
    /// Fit one activity model per class.
    Fit(CommonArgs),
    /// Synthesize sequences from the fitted models.
    Synth(CommonArgs),
    /// Compare real and synthetic sequences per class.
    Validate(CommonArgs),
}

impl Command {
    pub fn common(&self) -> &CommonArgs {
        match self {
            Self::Plant(a) | Self::Classify(a) | Self::Fit(a) | Self::Synth(a) | Self::Validate(a) => a,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads.
    #[arg(long, env = "COHORT_SYNTH_THREADS")]
    pub threads: Option<usize>,
    #[arg(long, value_enum)]
    pub feature_set: Option<FeatureSetArg>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FeatureSetArg {
    Demographic,
    Activity,
}

impl From<FeatureSetArg> for FeatureSet {
    fn from(a: FeatureSetArg) -> Self {
        match a {
            FeatureSetArg::Demographic => FeatureSet::DemographicOnly,
            FeatureSetArg::Activity => FeatureSet::DemographicPlusActivity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusPaths {
    pub activities: PathBuf,
    pub demographics: PathBuf,
    /// Default lexicons when absent.
    #[serde(default)]
    pub lexicons: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisConfig {
    /// Sequences per class; `None` matches the class size.
    pub n_per_class: Option<usize>,
    pub default_travel_minutes: u32,
    /// Sequences drawn per heatmap.
    pub heatmap_rows: usize,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self { n_per_class: None, default_travel_minutes: SynthParams::default().default_travel_minutes, heatmap_rows: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowConfig {
    pub k_max: usize,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        let b = BgmParams::default();
        Self { k_max: b.k_max, max_iterations: b.max_iterations, tolerance: b.tolerance }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; required.
    pub seed: u64,
    /// Archetype spec used by `plant`.
    #[serde(default)]
    pub planted_spec: Option<PathBuf>,
    pub corpus: CorpusPaths,
    pub output_dir: PathBuf,
    /// The seed and feature set inside are taken from the run.
    #[serde(default)]
    pub pipeline: PipelineParams,
    /// Classification whose classes are fitted, synthesized and validated.
    #[serde(default = "default_cohort_feature_set")]
    pub cohort_feature_set: FeatureSet,
    #[serde(default)]
    pub window: WindowConfig,
    #[serde(default)]
    pub synthesis: SynthesisConfig,
}

fn default_cohort_feature_set() -> FeatureSet {
    FeatureSet::DemographicPlusActivity
}

impl RunConfig {
    /// Parses the file and makes every path absolute relative to its folder.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| input(path.display(), e))?;
        let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|e| input(path.display(), e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let base = if base.as_os_str().is_empty() { PathBuf::from(".") } else { base };
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = cfg.planted_spec.as_mut() {
            resolve(p);
        }
        resolve(&mut cfg.corpus.activities);
        resolve(&mut cfg.corpus.demographics);
        if let Some(p) = cfg.corpus.lexicons.as_mut() {
            resolve(p);
        }
        resolve(&mut cfg.output_dir);
        cfg.pipeline.validate().map_err(|e| input(path.display(), e))?;
        Ok(cfg)
    }

    fn stage_dir(&self, stage: &str, fs: FeatureSet) -> PathBuf {
        self.output_dir.join(stage).join(fs.short_name())
    }

    pub fn classes_path(&self, fs: FeatureSet) -> PathBuf {
        self.stage_dir("classify", fs).join("classes.csv")
    }

    pub fn models_dir(&self, fs: FeatureSet) -> PathBuf {
        self.stage_dir("models", fs)
    }

    pub fn synth_dir(&self, fs: FeatureSet) -> PathBuf {
        self.stage_dir("synth", fs)
    }

    pub fn validate_dir(&self, fs: FeatureSet) -> PathBuf {
        self.stage_dir("validate", fs)
    }

    fn bgm_params(&self) -> BgmParams {
        BgmParams {
            k_max: self.window.k_max,
            max_iterations: self.window.max_iterations,
            tolerance: self.window.tolerance,
            seed: self.seed,
        }
    }
}

/// Parses arguments already split by the shell and runs the command.
pub fn run(cli: Cli) -> CliResult {
    let common = cli.command.common().clone();
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(k) = common.threads {
        // A pool may already exist in tests; the first setting wins.
        if rayon::ThreadPoolBuilder::new().num_threads(k).build_global().is_err() {
            log::debug!("thread pool already initialised");
        }
    }
    let chosen = common.feature_set.map(FeatureSet::from);
    match cli.command {
        Command::Plant(_) => cmd_plant(&cfg),
        Command::Classify(_) => cmd_classify(&cfg, chosen),
        Command::Fit(_) => cmd_fit(&cfg, chosen.unwrap_or(cfg.cohort_feature_set)),
        Command::Synth(_) => cmd_synth(&cfg, chosen.unwrap_or(cfg.cohort_feature_set)),
        Command::Validate(_) => cmd_validate(&cfg, chosen.unwrap_or(cfg.cohort_feature_set)).map(|_| ()),
    }
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| input(dir.display(), e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| input(path.display(), e))
}

fn write_text(path: &Path, text: &str) -> CliResult {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| input(dir.display(), e))?;
    }
    fs::write(path, text).map_err(|e| input(path.display(), e))
}

/// Replaces a stage's output folder so reruns leave no stale files.
fn fresh_dir(dir: &Path) -> CliResult {
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| input(dir.display(), e))?;
    }
    fs::create_dir_all(dir).map_err(|e| input(dir.display(), e))
}

pub fn cmd_plant(cfg: &RunConfig) -> CliResult {
    let spec_path = cfg.planted_spec.as_ref().ok_or_else(|| CliError::Input("config has no planted_spec".into()))?;
    let text = fs::read_to_string(spec_path).map_err(|e| input(spec_path.display(), e))?;
    let mut spec = PlantedSpec::from_json(&text).map_err(|e| input(spec_path.display(), e))?;
    spec.seed = cfg.seed;
    let (corpus, truth) = generate_planted_corpus(&spec).map_err(|e| input(spec_path.display(), e))?;

    let path = &cfg.corpus.activities;
    write_activities_csv(&corpus, create(path)?).map_err(|e| input(path.display(), e))?;
    let path = &cfg.corpus.demographics;
    write_demographics_csv(&corpus, create(path)?).map_err(|e| input(path.display(), e))?;
    let path = truth_path(cfg);
    let mut w = csv::Writer::from_writer(create(&path)?);
    let io = |e: csv::Error| input(path.display(), e);
    w.write_record(["case_id", "label"]).map_err(io)?;
    for d in &corpus.diaries {
        w.write_record([d.case_id(), truth[d.case_id()].as_str()]).map_err(io)?;
    }
    w.flush().map_err(|e| input(path.display(), e))?;
    log::info!("planted {} diaries from {} archetypes", corpus.len(), spec.archetypes.len());
    Ok(())
}

/// Truth labels sit next to the activity table.
pub fn truth_path(cfg: &RunConfig) -> PathBuf {
    cfg.corpus.activities.with_file_name("truth_labels.csv")
}

pub fn load_corpus(cfg: &RunConfig) -> CliResult<DiaryCorpus> {
    let lex = match &cfg.corpus.lexicons {
        Some(p) => Lexicons::load(p).map_err(|e| input(p.display(), e))?,
        None => Lexicons::default(),
    };
    let a = File::open(&cfg.corpus.activities).map_err(|e| input(cfg.corpus.activities.display(), e))?;
    let d = File::open(&cfg.corpus.demographics).map_err(|e| input(cfg.corpus.demographics.display(), e))?;
    parse_diary_corpus(a, d, &lex).map_err(|e| input("corpus", e))
}

pub fn cmd_classify(cfg: &RunConfig, only: Option<FeatureSet>) -> CliResult {
    let corpus = load_corpus(cfg)?;
    let sets = match only {
        Some(fs) => vec![fs],
        None => vec![FeatureSet::DemographicOnly, FeatureSet::DemographicPlusActivity],
    };
    for fs in sets {
        let params = PipelineParams { feature_set: fs, seed: cfg.seed, ..cfg.pipeline.clone() };
        let stage = format!("classify[{}]", fs.short_name());
        let assignment = classify_corpus(&corpus, &params).map_err(|e| invariant(&stage, e))?;
        let summary = class_summary(&assignment, &corpus);
        let dir = cfg.stage_dir("classify", fs);
        fresh_dir(&dir)?;
        write_classes_csv(&assignment, create(&cfg.classes_path(fs))?).map_err(|e| input(&stage, e))?;
        write_bundle(&dir, &assignment, &params, &summary).map_err(|e| input(&stage, e))?;
        println!(
            "{}: {} classes, median size {}, largest {}",
            fs.short_name(),
            summary.n_classes,
            summary.median_size,
            summary.max_size
        );
    }
    Ok(())
}

/// Real diaries per final class.
fn class_members<'a>(
    cfg: &RunConfig,
    corpus: &'a DiaryCorpus,
    fs: FeatureSet,
) -> CliResult<BTreeMap<u32, Vec<&'a crate::diary::ActivityDiary>>> {
    let path = cfg.classes_path(fs);
    if !path.exists() {
        return Err(CliError::Input(format!("{}: not found; run classify first", path.display())));
    }
    let labels = read_final_classes(&path).map_err(|e| input(path.display(), e))?;
    if labels.len() != corpus.len() {
        return Err(CliError::Input(format!(
            "{}: {} labelled diaries but the corpus has {}",
            path.display(),
            labels.len(),
            corpus.len()
        )));
    }
    let mut out: BTreeMap<u32, Vec<_>> = BTreeMap::new();
    for d in &corpus.diaries {
        let label = labels
            .get(d.case_id())
            .ok_or_else(|| CliError::Input(format!("{}: no label for {}", path.display(), d.case_id())))?;
        out.entry(*label).or_default().push(d);
    }
    Ok(out)
}

pub fn cmd_fit(cfg: &RunConfig, fs: FeatureSet) -> CliResult {
    let corpus = load_corpus(cfg)?;
    let members = class_members(cfg, &corpus, fs)?;
    let dir = cfg.models_dir(fs);
    fresh_dir(&dir)?;
    let params = cfg.bgm_params();
    for (&class_id, diaries) in &members {
        if diaries.len() < cfg.pipeline.merge_cutoff {
            return Err(CliError::Invariant(format!(
                "fit: class {class_id} has {} diaries, below the cutoff {}",
                diaries.len(),
                cfg.pipeline.merge_cutoff
            )));
        }
        let model = fit_cohort_model(class_id, diaries, &corpus.lexicons, &params)
            .map_err(|e| invariant(format!("fit[class {class_id}]"), e))?;
        model.validate().map_err(|e| invariant(format!("fit[class {class_id}]"), e))?;
        write_text(&model_path(&dir, class_id), &model.to_json())?;
    }
    println!("{}: fitted {} class models", fs.short_name(), members.len());
    Ok(())
}

fn model_path(dir: &Path, class_id: u32) -> PathBuf {
    dir.join(format!("class_{class_id}")).join("cohort_model.json")
}

/// Models in class order.
pub fn load_models(dir: &Path) -> CliResult<Vec<CohortActivityModel>> {
    let entries = fs::read_dir(dir).map_err(|e| input(format!("{}; run fit first", dir.display()), e))?;
    let mut paths: Vec<PathBuf> = Vec::new();
    for e in entries {
        let e = e.map_err(|e| input(dir.display(), e))?;
        let p = e.path().join("cohort_model.json");
        if e.file_name().to_string_lossy().starts_with("class_") {
            if !p.exists() {
                return Err(CliError::Input(format!("{}: missing model file", p.display())));
            }
            paths.push(p);
        }
    }
    let mut models = paths
        .iter()
        .map(|p| CohortActivityModel::load(p).map_err(|e| input(p.display(), e)))
        .collect::<CliResult<Vec<_>>>()?;
    if models.is_empty() {
        return Err(CliError::Input(format!("{}: no class models", dir.display())));
    }
    models.sort_by_key(|m| m.class_id);
    Ok(models)
}

pub fn cmd_synth(cfg: &RunConfig, fs: FeatureSet) -> CliResult {
    let models = load_models(&cfg.models_dir(fs))?;
    let params = SynthParams { default_travel_minutes: cfg.synthesis.default_travel_minutes };
    let dir = cfg.synth_dir(fs);
    fresh_dir(&dir)?;
    let mut all: Vec<SyntheticSequence> = Vec::new();
    for m in &models {
        let n = cfg.synthesis.n_per_class.unwrap_or(m.n_source_diaries).max(1);
        let seqs = synthesize(m, n, cfg.seed, &params);
        if let Some(bad) = seqs.iter().find(|s| !s.covers_day()) {
            return Err(CliError::Invariant(format!("synth: class {} sequence {} does not cover the day", m.class_id, bad.index)));
        }
        let waived = seqs.iter().filter(|s| s.waived_bounds).count();
        if waived > 0 {
            log::warn!("class {}: {waived} of {n} sequences needed a waived length bound", m.class_id);
        }
        let rows = seqs.iter().take(cfg.synthesis.heatmap_rows).map(|s| s.activities.as_slice());
        let svg = heatmap_svg(rows, &format!("class {} synthetic", m.class_id));
        write_text(&dir.join("heatmaps").join(format!("class_{}.svg", m.class_id)), &svg)?;
        all.extend(seqs);
    }
    let path = dir.join("sequences.csv");
    write_sequences_csv(&all, create(&path)?).map_err(|e| input(path.display(), e))?;
    println!("{}: {} sequences for {} classes", fs.short_name(), all.len(), models.len());
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationSummary {
    pub n_classes: usize,
    pub fraction_above_0_8: f64,
    pub fraction_above_0_6: f64,
    pub classes: Vec<SimilarityReport>,
}

pub fn cmd_validate(cfg: &RunConfig, fs: FeatureSet) -> CliResult<ValidationSummary> {
    let corpus = load_corpus(cfg)?;
    let members = class_members(cfg, &corpus, fs)?;
    let path = cfg.synth_dir(fs).join("sequences.csv");
    let file = File::open(&path).map_err(|e| input(format!("{}; run synth first", path.display()), e))?;
    let synth = read_sequences_csv(file).map_err(|e| input(path.display(), e))?;

    let real: BTreeMap<u32, Vec<&[ActivityRecord]>> =
        members.iter().map(|(&c, ds)| (c, ds.iter().map(|d| d.records()).collect())).collect();
    let synth_refs: BTreeMap<u32, Vec<&[ActivityRecord]>> =
        synth.iter().map(|(&c, seqs)| (c, seqs.iter().map(Vec::as_slice).collect())).collect();
    let report = corpus_report(&real, &synth_refs).map_err(|e| invariant("validate", e))?;

    let dir = cfg.validate_dir(fs);
    fresh_dir(&dir)?;
    let io = |p: &Path, e: std::io::Error| input(p.display(), e);
    let p = dir.join("report.csv");
    report.write_report_csv(create(&p)?).map_err(|e| io(&p, e))?;
    let p = dir.join("scatter.csv");
    report.write_scatter_csv(create(&p)?).map_err(|e| io(&p, e))?;
    let p = dir.join("gini_profiles.csv");
    report.write_gini_profiles_csv(create(&p)?).map_err(|e| io(&p, e))?;
    let reports: Vec<SimilarityReport> = report.reports().cloned().collect();
    write_text(&dir.join("scatter.svg"), &scatter_svg(&reports))?;

    let summary = ValidationSummary {
        n_classes: reports.len(),
        fraction_above_0_8: report.fraction_above(0.8),
        fraction_above_0_6: report.fraction_above(0.6),
        classes: reports,
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| input("summary", e))?;
    write_text(&dir.join("summary.json"), &json)?;
    println!(
        "{}: {} classes; both metrics > 0.8: {:.1}%; both > 0.6: {:.1}%",
        fs.short_name(),
        summary.n_classes,
        100.0 * summary.fraction_above_0_8,
        100.0 * summary.fraction_above_0_6
    );
    Ok(summary)
}
