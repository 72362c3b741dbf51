//! Command-line front end.

use std::collections::HashSet;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::baselines::{lop_fuse, logit_fuse, majority_vote, FusionWeights};
use crate::copula::CopulaFamily;
use crate::data::{BeliefTensor, LabelMap};
use crate::error::{Error, Result};
use crate::fitting::{Criterion, SelectionReport};
use crate::fusion::{build_class_models, BuildReport, BuildSettings, ClassModelSet, Fuser};
use crate::io::{self, DatasetManifest, LoadedImage, ManifestEntry};
use crate::metrics::{ConfusionMatrix, MetricsSummary};
use crate::seed::DEFAULT_SEED;
use crate::simulator::{benchmark, generate, Method, ScenarioConfig};

pub const LABEL_EXT: &str = "lbl";
pub const TENSOR_EXT: &str = "bel";

#[derive(Debug, Parser)]
#[command(name = "copula-fusion", version, about = "Class-specific copula fusion of segmentation classifiers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a class model file from a manifest split.
    Fit(FitArgs),
    /// Fit every candidate family per class and report the statistics.
    Select(SelectArgs),
    /// Fuse a manifest split with a model file.
    Fuse(FuseArgs),
    /// Fuse a manifest split with a baseline rule.
    Baseline(BaselineArgs),
    /// Score predicted label maps against a manifest split's labels.
    Eval(EvalArgs),
    /// Write a synthetic dataset and its manifest.
    Simulate(SimulateArgs),
    /// Compare fusion methods on a synthetic scenario.
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Dataset manifest (JSON).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Manifest split to read.
    #[arg(long)]
    pub split: Option<String>,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[arg(long, default_value = "aic")]
    pub criterion: Criterion,
    /// Use one family for every class instead of selecting.
    #[arg(long)]
    pub family: Option<CopulaFamily>,
    /// Candidate families, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub candidates: Option<Vec<CopulaFamily>>,
    #[arg(long, default_value_t = 100_000)]
    pub max_pixels: usize,
    #[arg(long, default_value_t = 500)]
    pub min_pixels: usize,
    /// Fixed KDE bandwidth (Silverman's rule otherwise).
    #[arg(long)]
    pub bandwidth: Option<f64>,
    /// Store KDE samples as 16-bit fixed point.
    #[arg(long)]
    pub quantize: bool,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
}

impl BuildArgs {
    fn settings(&self) -> BuildSettings {
        BuildSettings {
            criterion: self.criterion,
            family: self.family,
            candidates: self
                .candidates
                .clone()
                .unwrap_or_else(|| CopulaFamily::CANDIDATES.to_vec()),
            max_pixels_per_class: self.max_pixels,
            min_pixels: self.min_pixels,
            bandwidth: self.bandwidth,
            quantize: self.quantize,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: SplitArgs,
    #[command(flatten)]
    pub build: BuildArgs,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the per-class selection reports (JSON).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub input: SplitArgs,
    #[command(flatten)]
    pub build: BuildArgs,
    /// CSV of per-family fit statistics; stdout when absent.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// JSON selection reports.
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Also write the model file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    #[command(flatten)]
    pub input: SplitArgs,
    #[arg(long)]
    pub model: PathBuf,
    /// Directory for fused label maps.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Also write normalized fused posteriors.
    #[arg(long)]
    pub scores: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum BaselineMethod {
    Lop,
    Mv,
    Logit,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub input: SplitArgs,
    #[arg(long, value_enum)]
    pub method: BaselineMethod,
    /// LOP weights, comma separated (uniform by default).
    #[arg(long, value_delimiter = ',')]
    pub weights: Option<Vec<f64>>,
    /// Logit exponent.
    #[arg(long, default_value_t = 1.0)]
    pub logit_a: f64,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Also write the fused tensors (LOP and logit only).
    #[arg(long)]
    pub scores: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub input: SplitArgs,
    /// Directory holding `<image>.lbl` predictions.
    #[arg(long)]
    pub pred_dir: PathBuf,
    /// Extra ground-truth labels to exclude, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub ignore: Vec<u16>,
    /// Count classes absent from ground truth as 0 in the means.
    #[arg(long)]
    pub zero_absent: bool,
    /// Per-class CSV output.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// JSON summary output; stdout when absent.
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Per-image JSON breakdown.
    #[arg(long)]
    pub per_image: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario configuration (JSON); built-in defaults when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Overrides the configuration's seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Methods, comma separated, or `all`.
    #[arg(long, default_value = "all")]
    pub methods: String,
    /// Markdown table output; stdout when absent.
    #[arg(long)]
    pub markdown: Option<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

/// Parse `args` (program name first) and run; returns the exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit(a) => fit(a),
        Command::Select(a) => select(a),
        Command::Fuse(a) => fuse(a),
        Command::Baseline(a) => baseline(a),
        Command::Eval(a) => eval(a),
        Command::Simulate(a) => simulate(a),
        Command::Benchmark(a) => bench(a),
    }
}

fn build(input: &SplitArgs, args: &BuildArgs) -> Result<(ClassModelSet, BuildReport)> {
    eprintln!("seed {}", args.seed);
    let manifest = DatasetManifest::read(&input.manifest)?;
    let split = input.split.as_deref().unwrap_or("train");
    let images = manifest.load_training(split)?;
    let (set, report) = build_class_models(&images, &args.settings())?;
    for (m, cm) in set.models.iter().enumerate() {
        eprintln!(
            "class {m}: {} ({} pixels, {} fitted, prior {:.6})",
            cm.copula.family, cm.pixels, cm.fitted_rows, cm.prior
        );
        for w in &cm.warnings {
            eprintln!("class {m}: warning: {w}");
        }
    }
    Ok((set, report))
}

fn fit(a: FitArgs) -> Result<()> {
    let (set, report) = build(&a.input, &a.build)?;
    io::write_model(&set, &a.out)?;
    if let Some(p) = &a.report {
        io::write_json(&selections(&report), p)?;
    }
    Ok(())
}

fn selections(report: &BuildReport) -> Vec<&SelectionReport> {
    report.selections.iter().flatten().collect()
}

fn select(a: SelectArgs) -> Result<()> {
    let (set, report) = build(&a.input, &a.build)?;
    let mut csv = format!("{}\n", SelectionReport::csv_header());
    for s in selections(&report) {
        csv.push_str(&s.csv_rows());
    }
    match &a.csv {
        Some(p) => io::write_text(&csv, p)?,
        None => print!("{csv}"),
    }
    if let Some(p) = &a.json {
        io::write_json(&selections(&report), p)?;
    }
    if let Some(p) = &a.out {
        io::write_model(&set, p)?;
    }
    Ok(())
}

fn load_eval_split(input: &SplitArgs) -> Result<(DatasetManifest, Vec<LoadedImage>)> {
    let manifest = DatasetManifest::read(&input.manifest)?;
    let split = input.split.as_deref().unwrap_or("test");
    let images = manifest.load_split(split)?;
    let mut seen = HashSet::new();
    for img in &images {
        if !seen.insert(img.name.clone()) {
            return Err(Error::usage(format!(
                "{}: split {split} has two images named `{}`",
                input.manifest.display(),
                img.name
            )));
        }
    }
    Ok((manifest, images))
}

fn out_path(dir: &Path, name: &str, ext: &str) -> PathBuf {
    dir.join(format!("{name}.{ext}"))
}

fn fuse(a: FuseArgs) -> Result<()> {
    let set = io::read_model(&a.model)?;
    let (_, images) = load_eval_split(&a.input)?;
    let fuser = Fuser::new(&set)?;
    let mut fallbacks = 0;
    for img in &images {
        let r = fuser.fuse_image(&img.tensors, a.scores)?;
        fallbacks += r.fallbacks;
        io::write_label_map(&r.labels, out_path(&a.out_dir, &img.name, LABEL_EXT))?;
        if let Some(s) = &r.scores {
            io::write_belief_tensor(s, out_path(&a.out_dir, &img.name, TENSOR_EXT))?;
        }
    }
    eprintln!("fused {} images, {fallbacks} fallback pixels", images.len());
    Ok(())
}

fn baseline(a: BaselineArgs) -> Result<()> {
    let (manifest, images) = load_eval_split(&a.input)?;
    let l = manifest.classifiers.len();
    let weights = match &a.weights {
        Some(w) => FusionWeights::new(w.clone())
            .map_err(|e| Error::usage(format!("--weights: {e}")))?,
        None => FusionWeights::uniform(l)?,
    };
    if a.method == BaselineMethod::Mv && a.scores {
        return Err(Error::usage("--scores is not available for majority vote"));
    }
    for img in &images {
        let (labels, scores): (LabelMap, Option<BeliefTensor>) = match a.method {
            BaselineMethod::Lop => {
                let t = lop_fuse(&img.tensors, &weights)?;
                (t.argmax(), Some(t))
            }
            BaselineMethod::Logit => {
                let t = logit_fuse(&img.tensors, a.logit_a)
                    .map_err(|e| Error::usage(format!("--logit-a: {e}")))?;
                (t.argmax(), Some(t))
            }
            BaselineMethod::Mv => (majority_vote(&img.tensors)?, None),
        };
        io::write_label_map(&labels, out_path(&a.out_dir, &img.name, LABEL_EXT))?;
        if let (true, Some(t)) = (a.scores, scores) {
            io::write_belief_tensor(&t, out_path(&a.out_dir, &img.name, TENSOR_EXT))?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct ImageMetrics {
    image: String,
    #[serde(flatten)]
    metrics: MetricsSummary,
}

fn eval(a: EvalArgs) -> Result<()> {
    let (manifest, images) = load_eval_split(&a.input)?;
    let mut ignore = manifest.ignore.clone();
    ignore.extend(&a.ignore);
    let mut total = ConfusionMatrix::new(manifest.classes);
    let mut per_image = Vec::new();
    for img in &images {
        let gt = img.labels.as_ref().ok_or_else(|| {
            Error::usage(format!("{}: image `{}` has no labels", a.input.manifest.display(), img.name))
        })?;
        let path = out_path(&a.pred_dir, &img.name, LABEL_EXT);
        let pred = io::read_label_map(&path)?;
        let mut cm = ConfusionMatrix::new(manifest.classes);
        cm.accumulate(&pred, gt, &ignore)
            .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        if a.per_image.is_some() {
            per_image.push(ImageMetrics {
                image: img.name.clone(),
                metrics: MetricsSummary::from_confusion(&cm, a.zero_absent)?,
            });
        }
        total.merge(&cm)?;
    }
    let summary = MetricsSummary::from_confusion(&total, a.zero_absent)?;
    if let Some(p) = &a.csv {
        io::write_text(&summary.to_csv(), p)?;
    }
    match &a.json {
        Some(p) => io::write_json(&summary, p)?,
        None => print!("{}", String::from_utf8_lossy(&io::to_json_bytes(&summary))),
    }
    if let Some(p) = &a.per_image {
        io::write_json(&per_image, p)?;
    }
    Ok(())
}

fn scenario(config: &Option<PathBuf>, seed: Option<u64>) -> Result<ScenarioConfig> {
    let mut cfg: ScenarioConfig = match config {
        Some(p) => io::read_json(p)?,
        None => ScenarioConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    eprintln!("seed {}", cfg.seed);
    Ok(cfg)
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let cfg = scenario(&a.config, a.seed)?;
    let data = generate(&cfg)?;
    let mut splits = std::collections::BTreeMap::new();
    for (split, images) in [("train", &data.train), ("test", &data.test)] {
        let mut entries = Vec::with_capacity(images.len());
        for (k, img) in images.iter().enumerate() {
            let stem = format!("img{k:04}");
            let labels = PathBuf::from(split).join(format!("{stem}.{LABEL_EXT}"));
            io::write_label_map(&img.labels, a.out_dir.join(&labels))?;
            let mut tensors = Vec::with_capacity(img.tensors.len());
            for (i, t) in img.tensors.iter().enumerate() {
                let p = PathBuf::from(split).join(format!("{stem}.c{i}.{TENSOR_EXT}"));
                io::write_belief_tensor(t, a.out_dir.join(&p))?;
                tensors.push(p);
            }
            entries.push(ManifestEntry {
                tensors,
                labels: Some(labels),
            });
        }
        splits.insert(split.to_string(), entries);
    }
    let manifest = DatasetManifest {
        classifiers: (0..cfg.classifiers).map(|i| format!("classifier-{i}")).collect(),
        classes: cfg.classes(),
        ignore: vec![],
        splits,
        base: PathBuf::new(),
    };
    io::write_json(&manifest, a.out_dir.join("manifest.json"))?;
    io::write_json(&cfg, a.out_dir.join("scenario.json"))?;
    Ok(())
}

fn bench(a: BenchmarkArgs) -> Result<()> {
    let cfg = scenario(&a.config, a.seed)?;
    let methods = Method::parse_list(&a.methods, cfg.classifiers)
        .map_err(|e| Error::usage(format!("--methods: {e}")))?;
    let report = benchmark(&cfg, &methods)?;
    match &a.markdown {
        Some(p) => io::write_text(&report.to_markdown(), p)?,
        None => print!("{}", report.to_markdown()),
    }
    if let Some(p) = &a.csv {
        io::write_text(&report.to_csv(), p)?;
    }
    if let Some(p) = &a.json {
        io::write_json(&report, p)?;
    }
    Ok(())
}
