use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use ovtad::dataset::{load_dataset, load_vocabulary};
use ovtad::featurestore::load_text_embeddings;
use ovtad::fsutil::write_atomic;
use ovtad::metrics::aggregate;
use ovtad::pipeline::{self, DetectorSource, E2eInputs, VideoError};
use ovtad::segfile::{read_segments, write_segments};
use ovtad::splits::{
    activitynet_smart_split, activitynet_vocabulary, apply_split, export_split, generate_random_split,
    import_split, validate_smart_split,
};
use ovtad::synth::{generate, SynthSpec};
use ovtad::taxonomy::load_taxonomy;
use ovtad::{AnnotatedDataset, LabelSplit, PipelineConfig, Preset, ScoreRule, Side, Subset};

#[derive(Parser)]
#[command(name = "ovtad", version, about = "Open-vocabulary temporal action detection toolkit")]
struct Cli {
    /// JSON file pinning pipeline constants; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for per-video work (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate or export label splits.
    #[command(subcommand)]
    Split(SplitCommand),
    /// Top-k classification accuracy of ground-truth segments.
    ClassifyGt(ClassifyGtArgs),
    /// Decode detector outputs into class-agnostic detections.
    Detect(DetectArgs),
    /// Evaluate a segments file against ground truth.
    Eval(EvalArgs),
    /// Detect, classify and evaluate in one run.
    E2e(E2eArgs),
    /// Write a synthetic dataset with known answers.
    Synth(SynthArgs),
}

#[derive(Subcommand)]
enum SplitCommand {
    /// Seeded random hold-out splits, one file per seed.
    Random(RandomSplitArgs),
    /// Export and optionally validate a taxonomy-paired split.
    Smart(SmartSplitArgs),
}

#[derive(Args)]
struct RandomSplitArgs {
    /// Vocabulary file (JSON array or one label per line). Defaults to ActivityNet 1.3.
    #[arg(long)]
    vocabulary: Option<PathBuf>,
    /// Fraction of labels held out for evaluation.
    #[arg(long, default_value_t = 0.25)]
    fraction: f64,
    /// Explicit seed list; duplicates produce duplicate files.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Number of consecutive seeds starting at --seed when --seeds is absent.
    #[arg(long, default_value_t = 12)]
    count: u64,
    #[arg(long, env = "OVTAD_SEED", default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SmartSplitArgs {
    /// Split file to validate. Defaults to the bundled ActivityNet Smart split.
    #[arg(long)]
    split: Option<PathBuf>,
    /// Taxonomy JSON; when given the split is validated against it.
    #[arg(long)]
    taxonomy: Option<PathBuf>,
    /// Output directory for the split file and validation report.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Common {
    #[arg(long, value_parser = parse_preset)]
    preset: Option<Preset>,
    /// Dataset subset to use: training, validation, testing or all.
    #[arg(long)]
    subset: Option<String>,
    /// Split file; repeat for several splits.
    #[arg(long)]
    split: Vec<PathBuf>,
    #[arg(long, value_parser = parse_side, default_value = "eval")]
    side: Side,
    #[arg(long)]
    nms_iou: Option<f64>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long, value_parser = parse_score_rule)]
    score_rule: Option<ScoreRule>,
}

#[derive(Args)]
struct ClassifyGtArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Feature directory; repeat to ensemble.
    #[arg(long, required = true)]
    features: Vec<PathBuf>,
    #[arg(long)]
    texts: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 5])]
    k: Vec<usize>,
    /// JSON report path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
#[group(id = "source", required = true, multiple = false)]
struct SourceArgs {
    /// Directory of CenterNet head files.
    #[arg(long, group = "source")]
    heads: Option<PathBuf>,
    /// Directory of DETR proposal files.
    #[arg(long, group = "source")]
    detr: Option<PathBuf>,
    /// Precomputed segments file.
    #[arg(long, group = "source")]
    segments: Option<PathBuf>,
}

impl SourceArgs {
    fn source(&self) -> DetectorSource {
        match (&self.heads, &self.detr, &self.segments) {
            (Some(p), _, _) => DetectorSource::CenterNet(p.clone()),
            (_, Some(p), _) => DetectorSource::Detr(p.clone()),
            (_, _, Some(p)) => DetectorSource::Segments(p.clone()),
            _ => unreachable!("clap enforces one source"),
        }
    }
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[command(flatten)]
    source: SourceArgs,
    /// Segments file to write.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Predictions segments file; give one, or one per split.
    #[arg(long, required = true)]
    predictions: Vec<PathBuf>,
    /// Ignore labels and evaluate class-agnostic proposals.
    #[arg(long)]
    agnostic: bool,
    /// Report mean and standard error across the given splits.
    #[arg(long)]
    multi_split: bool,
    /// JSON report path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct E2eArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Classifier feature directory; repeat to ensemble.
    #[arg(long, required = true)]
    features: Vec<PathBuf>,
    /// Detector feature directory; repeat to ensemble. Checked for coverage only.
    #[arg(long)]
    det_features: Vec<PathBuf>,
    #[arg(long)]
    texts: PathBuf,
    #[command(flatten)]
    source: SourceArgs,
    /// Output directory for the report and labeled detections.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, env = "OVTAD_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    videos: usize,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    /// Feature noise standard deviation.
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    /// Boundary jitter of the oracle detections, seconds.
    #[arg(long, default_value_t = 0.0)]
    jitter: f64,
    #[arg(long, default_value_t = 0.0)]
    score_noise: f64,
    #[arg(long, default_value_t = 0.0)]
    distractors: f64,
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    s.parse().map_err(|e: ovtad::Error| e.to_string())
}

fn parse_side(s: &str) -> Result<Side, String> {
    s.parse().map_err(|e: ovtad::Error| e.to_string())
}

fn parse_score_rule(s: &str) -> Result<ScoreRule, String> {
    s.parse().map_err(|e: ovtad::Error| e.to_string())
}

fn load_config(path: Option<&Path>, common: Option<&Common>) -> anyhow::Result<PipelineConfig> {
    let mut config = match path {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(c) = common {
        if let Some(p) = c.preset {
            config.preset = p;
        }
        if let Some(s) = &c.subset {
            config.subset = if s == "all" { None } else { Some(s.parse::<Subset>()?) };
        }
        if let Some(v) = c.nms_iou {
            config.nms_iou = v;
        }
        if let Some(v) = c.top_k {
            config.top_k = v;
        }
        if let Some(v) = c.temperature {
            config.temperature = v;
        }
        if let Some(v) = c.score_rule {
            config.score_rule = v;
        }
    }
    Ok(config)
}

fn subset_of(dataset: &AnnotatedDataset, config: &PipelineConfig) -> AnnotatedDataset {
    match config.subset {
        Some(s) => dataset.filter_subsets(&[s]),
        None => dataset.clone(),
    }
}

fn load_splits(paths: &[PathBuf]) -> anyhow::Result<Vec<LabelSplit>> {
    paths
        .iter()
        .map(|p| import_split(p).with_context(|| format!("loading split {}", p.display())))
        .collect()
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_atomic(path, s.as_bytes())?;
    Ok(())
}

/// Number of per-video errors; zero means success.
type Outcome = anyhow::Result<usize>;

fn report_errors(errors: &[VideoError]) -> usize {
    for e in errors {
        eprintln!("error: video {}: {}", e.video_id, e.message);
    }
    if !errors.is_empty() {
        eprintln!("{} per-video errors", errors.len());
    }
    errors.len()
}

fn cmd_split_random(args: &RandomSplitArgs) -> Outcome {
    let vocabulary = match &args.vocabulary {
        Some(p) => load_vocabulary(p)?,
        None => activitynet_vocabulary(),
    };
    let seeds: Vec<u64> = if args.seeds.is_empty() {
        (args.seed..args.seed + args.count).collect()
    } else {
        args.seeds.clone()
    };
    std::fs::create_dir_all(&args.out)?;
    let width = seeds.len().saturating_sub(1).to_string().len().max(2);
    for (i, seed) in seeds.iter().enumerate() {
        let split = generate_random_split(&vocabulary, args.fraction, *seed)?;
        let path = args.out.join(format!("{i:0width$}-{}.json", split.name));
        export_split(&split, &path)?;
        println!("{}\t{} train\t{} eval", path.display(), split.train.len(), split.eval.len());
    }
    Ok(0)
}

fn cmd_split_smart(args: &SmartSplitArgs) -> Outcome {
    let split = match &args.split {
        Some(p) => import_split(p)?,
        None => activitynet_smart_split(),
    };
    std::fs::create_dir_all(&args.out)?;
    let path = args.out.join(format!("{}.json", split.name));
    export_split(&split, &path)?;
    println!("{}\t{} train\t{} eval", path.display(), split.train.len(), split.eval.len());
    if let Some(t) = &args.taxonomy {
        let taxonomy = load_taxonomy(t)?;
        let report = validate_smart_split(&split, &taxonomy)?;
        write_json(&args.out.join("validation.json"), &report)?;
        println!(
            "validation: {} satisfied, {} unsatisfied",
            report.satisfied, report.unsatisfied
        );
        if !report.passed {
            bail!("split {} fails taxonomy validation", split.name);
        }
    }
    Ok(0)
}

fn cmd_classify_gt(args: &ClassifyGtArgs, config_path: Option<&Path>) -> Outcome {
    let config = load_config(config_path, Some(&args.common))?;
    let dataset = subset_of(&load_dataset(&args.dataset)?, &config);
    let texts = load_text_embeddings(&args.texts)?;
    let splits = load_splits(&args.common.split)?;
    if splits.len() > 1 {
        bail!("classify-gt takes at most one --split");
    }
    let ids: Vec<&str> = dataset
        .videos()
        .values()
        .filter(|v| !v.annotations.is_empty())
        .map(|v| v.video_id.as_str())
        .collect();
    let load = pipeline::load_features(&args.features, ids)?;
    let report = pipeline::classify_gt(
        &dataset,
        splits.first().map(|s| (s, args.common.side)),
        &load.features,
        &texts,
        &args.k,
        config.temperature,
    )?;
    print!("{}", report.to_table());
    if let Some(out) = &args.out {
        write_json(out, &report)?;
    }
    Ok(report_errors(&load.errors))
}

fn cmd_detect(args: &DetectArgs, config_path: Option<&Path>) -> Outcome {
    let config = load_config(config_path, Some(&args.common))?;
    let dataset = subset_of(&load_dataset(&args.dataset)?, &config);
    let dets = pipeline::detect(&dataset, &args.source.source(), &config)?;
    write_segments(&dets.detections, &args.out)?;
    let n: usize = dets.detections.values().map(Vec::len).sum();
    println!("{n} detections over {} videos -> {}", dets.detections.len(), args.out.display());
    Ok(report_errors(&dets.errors))
}

fn cmd_eval(args: &EvalArgs, config_path: Option<&Path>) -> Outcome {
    let config = load_config(config_path, Some(&args.common))?;
    let dataset = subset_of(&load_dataset(&args.dataset)?, &config);
    let splits = load_splits(&args.common.split)?;
    if splits.len() > 1 && !args.multi_split {
        bail!("several --split files need --multi-split");
    }
    if args.predictions.len() != 1 && args.predictions.len() != splits.len() {
        bail!("give one --predictions file or one per split");
    }
    let predictions = args
        .predictions
        .iter()
        .map(|p| read_segments(p).with_context(|| format!("reading {}", p.display())))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let restrict = |preds: &ovtad::VideoDetections| {
        preds.iter().filter(|(id, _)| dataset.video(id).is_some()).map(|(k, v)| (k.clone(), v.clone())).collect()
    };
    if splits.is_empty() {
        let report = pipeline::evaluate_dataset(&restrict(&predictions[0]), &dataset, &config, args.agnostic)?;
        print!("{}", report.to_table());
        if let Some(out) = &args.out {
            write_json(out, &report)?;
        }
        return Ok(0);
    }
    let mut runs = Vec::new();
    for (i, split) in splits.iter().enumerate() {
        let ds = apply_split(&dataset, split, args.common.side)?;
        let preds = restrict(&predictions[i.min(predictions.len() - 1)]);
        let report = pipeline::evaluate_dataset(&preds, &ds, &config, args.agnostic)?;
        println!("{} ({})", split.name, args.common.side);
        print!("{}", report.to_table());
        runs.push(pipeline::SplitRun { split: Some(split.name.clone()), side: args.common.side.to_string(), report });
    }
    let agg = if args.multi_split {
        let agg = aggregate(&runs.iter().map(|r| r.report.clone()).collect::<Vec<_>>())?;
        println!("mean ± sem over {} splits", agg.splits);
        print!("{}", agg.to_table(&runs[0].report.map.iou_thresholds));
        Some(agg)
    } else {
        None
    };
    if let Some(out) = &args.out {
        write_json(out, &serde_json::json!({ "runs": runs, "aggregate": agg }))?;
    }
    Ok(0)
}

fn cmd_e2e(args: &E2eArgs, config_path: Option<&Path>) -> Outcome {
    let config = load_config(config_path, Some(&args.common))?;
    let dataset = load_dataset(&args.dataset)?;
    let texts = load_text_embeddings(&args.texts)?;
    let splits = load_splits(&args.common.split)?;
    let source = args.source.source();
    let out = pipeline::e2e(
        &E2eInputs {
            dataset: &dataset,
            splits: &splits,
            side: args.common.side,
            source: &source,
            feature_dirs: &args.features,
            detector_feature_dirs: &args.det_features,
            texts: &texts,
        },
        &config,
    )?;
    std::fs::create_dir_all(&args.out)?;
    write_json(&args.out.join("report.json"), &out)?;
    for (run, labeled) in out.runs.iter().zip(&out.labeled) {
        let name = match &run.split {
            Some(s) => format!("labeled-{s}.jsonl"),
            None => "labeled.jsonl".to_string(),
        };
        write_segments(labeled, args.out.join(name))?;
    }
    print!("{}", out.to_table());
    Ok(report_errors(&out.errors))
}

fn cmd_synth(args: &SynthArgs) -> Outcome {
    let spec = SynthSpec {
        seed: args.seed,
        n_videos: args.videos,
        n_classes: args.classes,
        dim: args.dim,
        feature_sigma: args.sigma,
        boundary_jitter: args.jitter,
        score_noise: args.score_noise,
        distractor_rate: args.distractors,
        ..SynthSpec::default()
    };
    let data = generate(&spec)?;
    data.write(&args.out)?;
    println!(
        "{} videos, {} annotations, {} classes -> {}",
        data.dataset.videos().len(),
        data.dataset.annotation_count(),
        data.dataset.vocabulary().len(),
        args.out.display()
    );
    Ok(0)
}

fn run(cli: &Cli) -> Outcome {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            bail!("--jobs must be >= 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global()?;
    }
    let config = cli.config.as_deref();
    match &cli.command {
        Command::Split(SplitCommand::Random(a)) => cmd_split_random(a),
        Command::Split(SplitCommand::Smart(a)) => cmd_split_smart(a),
        Command::ClassifyGt(a) => cmd_classify_gt(a, config),
        Command::Detect(a) => cmd_detect(a, config),
        Command::Eval(a) => cmd_eval(a, config),
        Command::E2e(a) => cmd_e2e(a, config),
        Command::Synth(a) => cmd_synth(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(_) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
