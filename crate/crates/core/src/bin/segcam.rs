//! `segcam`: synthesize data, train the toy network, explain images,
//! benchmark explanations and self-check gradients.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use segcam::cam::{explain, Method};
use segcam::config::ConfigFile;
use segcam::data::{self, generate_synthetic, render_overlay, Dataset, SyntheticSceneConfig};
use segcam::eval::{run_benchmark, BenchmarkConfig, ExplainerKind, FillRule, Methodology, RegionMode, TargetMode, ThresholdRule};
use segcam::gradcheck::{run_gradcheck, GradcheckConfig};
use segcam::graph::Primitive;
use segcam::pixels::PixelSet;
use segcam::segnet::{foreground_iou, train_toy_with_progress, Model, NetworkConfig, TrainConfig};
use segcam::Error;

#[derive(Parser)]
#[command(name = "segcam", version, about = "Class activation maps for semantic segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic rooftop dataset (train/ and test/ splits).
    Synth(SynthArgs),
    /// Train the segmentation network on a dataset directory.
    Train(TrainArgs),
    /// Write saliency maps and overlays for one image.
    Explain(ExplainArgs),
    /// Benchmark saliency methods over a dataset and write a CSV report.
    Evaluate(EvaluateArgs),
    /// Finite-difference check of every backward rule and layer tap.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// key = value file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training images [default: 200].
    #[arg(long)]
    train: Option<usize>,
    /// Test images [default: 20].
    #[arg(long)]
    test: Option<usize>,
    /// Image side length [default: 64].
    #[arg(long)]
    size: Option<usize>,
    /// [default: 7]
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Training dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Where to write the weights.
    #[arg(long)]
    out: PathBuf,
    /// Held-out directory for the reported foreground IoU.
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// [default: 4]
    #[arg(long)]
    epochs: Option<usize>,
    /// [default: 0.05]
    #[arg(long)]
    learning_rate: Option<f64>,
    /// [default: 0.9]
    #[arg(long)]
    momentum: Option<f64>,
    /// Shuffling seed [default: 7].
    #[arg(long)]
    seed: Option<u64>,
    /// Weight initialisation seed [default: 0].
    #[arg(long)]
    init_seed: Option<u64>,
}

#[derive(Args)]
struct ExplainArgs {
    #[arg(long)]
    model: PathBuf,
    /// Input PPM image.
    #[arg(long)]
    image: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated method ids, or `all` [default: all].
    #[arg(long)]
    methods: Option<String>,
    /// Inspected layer [default: dec0].
    #[arg(long)]
    layer: Option<String>,
    /// [default: 1]
    #[arg(long)]
    class: Option<usize>,
    /// predicted | ground-truth | rect:x,y,w,h [default: predicted].
    #[arg(long)]
    region: Option<String>,
    /// Label mask, required for the ground-truth region.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Overlay opacity [default: 0.6].
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Report CSV path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated method ids, `all`, `oracle-saliency`, `random-saliency` [default: all].
    #[arg(long)]
    methods: Option<String>,
    /// Comma-separated subset of m1, m2, m3, or `all` [default: all].
    #[arg(long)]
    policies: Option<String>,
    /// Absolute `τ` or top quantile `q:<fraction>` [default: 0.5].
    #[arg(long)]
    threshold: Option<String>,
    #[arg(long)]
    layer: Option<String>,
    /// [default: 1]
    #[arg(long)]
    class: Option<usize>,
    /// predicted | ground-truth | rect:x,y,w,h [default: predicted].
    #[arg(long)]
    region: Option<String>,
    /// Target set: ground-truth | predicted [default: ground-truth].
    #[arg(long)]
    target: Option<String>,
    /// Removed-pixel value: zeros | mean [default: zeros].
    #[arg(long)]
    fill: Option<String>,
    /// Images evaluated concurrently [default: 1].
    #[arg(long)]
    workers: Option<usize>,
    /// Seed of the random reference saliency [default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Dilation radius of the oracle reference saliency [default: 1].
    #[arg(long)]
    oracle_dilation: Option<usize>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Randomized trials per check [default: 50].
    #[arg(long)]
    trials: Option<usize>,
    /// [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Negate one primitive's backward rule (self-test of the checker).
    #[arg(long, hide = true)]
    inject_fault: Option<String>,
}

/// Usage errors exit with 2, everything else with 1.
enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn usage(e: impl ToString) -> Failure {
    Failure::Usage(e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Explain(a) => cmd_explain(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Gradcheck(a) => gradcheck(a),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn load_config(path: Option<&Path>, known: &[&str]) -> CliResult<ConfigFile> {
    let Some(path) = path else { return Ok(ConfigFile::default()) };
    let file = ConfigFile::load(path).map_err(|e| match e {
        Error::Io { .. } => Failure::Runtime(e),
        other => usage(other),
    })?;
    file.ensure_known(known).map_err(usage)?;
    Ok(file)
}

fn resolve<T: FromStr>(file: &ConfigFile, flag: Option<T>, key: &str, default: T) -> CliResult<T>
where
    T::Err: std::fmt::Display,
{
    file.resolve(flag, key, default).map_err(usage)
}

fn parse<T: FromStr>(value: &str, what: &str) -> CliResult<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| usage(format!("invalid {what} `{value}`: {e}")))
}

fn synth(a: SynthArgs) -> CliResult<ExitCode> {
    let file = load_config(a.config.as_deref(), &["train", "test", "size", "seed"])?;
    let n_train = resolve(&file, a.train, "train", 200)?;
    let n_test = resolve(&file, a.test, "test", 20)?;
    let size = resolve(&file, a.size, "size", 64)?;
    let seed = resolve(&file, a.seed, "seed", 7)?;
    let config = SyntheticSceneConfig { height: size, width: size, seed, ..Default::default() };
    let (train, test) = generate_synthetic(&config, n_train + n_test)?.split_at(n_train);
    train.save_dir(a.out.join("train"))?;
    test.save_dir(a.out.join("test"))?;
    println!("wrote {n_train} train and {n_test} test images ({size}×{size}, seed {seed}) to {}", a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn train(a: TrainArgs) -> CliResult<ExitCode> {
    let file = load_config(a.config.as_deref(), &["epochs", "learning-rate", "momentum", "seed", "init-seed"])?;
    let defaults = TrainConfig::default();
    let config = TrainConfig {
        epochs: resolve(&file, a.epochs, "epochs", defaults.epochs)?,
        learning_rate: resolve(&file, a.learning_rate, "learning-rate", defaults.learning_rate)?,
        momentum: resolve(&file, a.momentum, "momentum", defaults.momentum)?,
        seed: resolve(&file, a.seed, "seed", defaults.seed)?,
    };
    let init_seed = resolve(&file, a.init_seed, "init-seed", 0)?;
    let dataset = Dataset::load_dir(&a.data)?;
    let Some(first) = dataset.samples().first() else {
        return Err(Error::InvalidArgument(format!("no images in {}", a.data.display())).into());
    };
    let (height, width) = first.size();
    let net = NetworkConfig { height, width, seed: init_seed, ..Default::default() };
    dataset.check_labels(net.num_classes)?;
    let model = Model::build(net)?;
    eprintln!("training on {} images, {} parameters", dataset.len(), model.parameter_count());
    let (model, losses) = train_toy_with_progress(&model, &dataset, &config, |epoch, mean| {
        eprintln!("epoch {:>3}/{}  loss {mean:.6}", epoch + 1, config.epochs);
    })?;
    model.save(&a.out)?;
    println!("initial loss {:.6}", losses.initial);
    println!("final loss   {:.6}", losses.final_mean());
    println!("train IoU    {:.4}", foreground_iou(&model, &dataset)?);
    if let Some(test) = &a.test {
        println!("test IoU     {:.4}", foreground_iou(&model, &Dataset::load_dir(test)?)?);
    }
    Ok(ExitCode::SUCCESS)
}

/// Parses a comma-separated list where `all` expands to `all`.
fn parse_list<T: FromStr + PartialEq + Copy>(text: &str, all: &[T], what: &str) -> CliResult<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    let mut out = Vec::new();
    for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let items = if item.eq_ignore_ascii_case("all") { all.to_vec() } else { vec![parse(item, what)?] };
        for x in items {
            if !out.contains(&x) {
                out.push(x);
            }
        }
    }
    if out.is_empty() {
        return Err(usage(format!("empty {what} list")));
    }
    Ok(out)
}

fn parse_region(text: &str) -> CliResult<RegionMode> {
    let t = text.trim();
    match t {
        "predicted" => return Ok(RegionMode::Predicted),
        "ground-truth" | "gt" => return Ok(RegionMode::GroundTruth),
        _ => {}
    }
    let inner = t
        .strip_prefix("rect:")
        .or_else(|| t.strip_prefix("rect(").and_then(|r| r.strip_suffix(')')))
        .ok_or_else(|| usage(format!("invalid region `{text}` (predicted, ground-truth or rect:x,y,w,h)")))?;
    let v: Vec<usize> = inner.split(',').map(|s| parse(s.trim(), "rectangle coordinate")).collect::<CliResult<_>>()?;
    match v[..] {
        [x, y, w, h] if w > 0 && h > 0 => Ok(RegionMode::Rect(x, y, w, h)),
        _ => Err(usage(format!("invalid rectangle `{text}`: need x,y,w,h with w, h > 0"))),
    }
}

fn check_layer(model: &Model, layer: &str) -> CliResult<()> {
    if model.has_layer(layer) {
        Ok(())
    } else {
        Err(usage(format!("unknown layer `{layer}` (layers: {})", model.layer_names().join(", "))))
    }
}

fn check_class(model: &Model, class: usize) -> CliResult<()> {
    if class < model.num_classes() {
        Ok(())
    } else {
        Err(usage(Error::ClassOutOfRange { class, num_classes: model.num_classes() }))
    }
}

fn cmd_explain(a: ExplainArgs) -> CliResult<ExitCode> {
    let file = load_config(a.config.as_deref(), &["methods", "layer", "class", "region", "alpha"])?;
    let methods: Vec<Method> = parse_list(&resolve(&file, a.methods, "methods", "all".to_string())?, &Method::ALL, "method")?;
    let region_mode = parse_region(&resolve(&file, a.region, "region", "predicted".to_string())?)?;
    let class = resolve(&file, a.class, "class", 1)?;
    let alpha: f64 = resolve(&file, a.alpha, "alpha", 0.6)?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(usage(format!("alpha {alpha} not in [0, 1]")));
    }
    if region_mode == RegionMode::GroundTruth && a.mask.is_none() {
        return Err(usage("--region ground-truth needs --mask"));
    }
    let model = Model::load(&a.model)?;
    let layer = resolve(&file, a.layer, "layer", model.config().default_layer().to_string())?;
    check_layer(&model, &layer)?;
    check_class(&model, class)?;
    let image = data::read_ppm(&a.image)?;
    let (_, h, w) = image.chw()?;
    let region = match region_mode {
        RegionMode::Predicted => model.forward(&image)?.predicted_pixels(class),
        RegionMode::GroundTruth => {
            let mask = data::read_mask(a.mask.as_ref().expect("checked above"))?;
            let bitmap: Vec<bool> = mask.pixels.iter().map(|&l| l as usize == class).collect();
            PixelSet::from_bitmap(mask.height, mask.width, &bitmap)?
        }
        RegionMode::Rect(x, y, rw, rh) => PixelSet::rect(h, w, x, y, rw, rh),
    };
    let stem = a.image.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into());
    // compute everything before touching the output directory
    let maps = methods
        .iter()
        .map(|&m| explain(&model, &image, m, class, &region, &layer).map(|(map, _)| (m, map)))
        .collect::<segcam::Result<Vec<_>>>()?;
    fs::create_dir_all(&a.out).map_err(|e| Error::Io { path: a.out.clone(), source: e })?;
    for (method, map) in maps {
        let pgm = a.out.join(format!("{stem}_{method}.pgm"));
        let ppm = a.out.join(format!("{stem}_{method}_overlay.ppm"));
        data::write_pgm(&pgm, &map.values)?;
        data::write_ppm(&ppm, &render_overlay(&image, &map.values, alpha)?)?;
        println!("{}", pgm.display());
        println!("{}", ppm.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn evaluate(a: EvaluateArgs) -> CliResult<ExitCode> {
    let known = [
        "methods", "policies", "threshold", "layer", "class", "region", "target", "fill", "workers", "seed",
        "oracle-dilation",
    ];
    let file = load_config(a.config.as_deref(), &known)?;
    let all = ExplainerKind::all_cams();
    let explainers = parse_list(&resolve(&file, a.methods, "methods", "all".to_string())?, &all, "method")?;
    let methodologies =
        parse_list(&resolve(&file, a.policies, "policies", "all".to_string())?, &Methodology::ALL, "policy")?;
    let threshold: ThresholdRule = parse(&resolve(&file, a.threshold, "threshold", "0.5".to_string())?, "threshold")?;
    threshold.validate().map_err(usage)?;
    let region = parse_region(&resolve(&file, a.region, "region", "predicted".to_string())?)?;
    let target = match resolve(&file, a.target, "target", "ground-truth".to_string())?.as_str() {
        "ground-truth" | "gt" => TargetMode::GroundTruth,
        "predicted" => TargetMode::Predicted,
        other => return Err(usage(format!("invalid target `{other}` (ground-truth or predicted)"))),
    };
    let fill_mode = resolve(&file, a.fill, "fill", "zeros".to_string())?;
    if !matches!(fill_mode.as_str(), "zeros" | "mean") {
        return Err(usage(format!("invalid fill `{fill_mode}` (zeros or mean)")));
    }
    let workers = resolve(&file, a.workers, "workers", 1)?;
    if workers == 0 {
        return Err(usage("--workers must be at least 1"));
    }
    let class = resolve(&file, a.class, "class", 1)?;
    let seed = resolve(&file, a.seed, "seed", 0)?;
    let oracle_dilation = resolve(&file, a.oracle_dilation, "oracle-dilation", 1)?;
    let layer = resolve(&file, a.layer, "layer", String::new())?;

    let model = Model::load(&a.model)?;
    let layer = if layer.is_empty() { model.config().default_layer().to_string() } else { layer };
    check_layer(&model, &layer)?;
    check_class(&model, class)?;
    let dataset = Dataset::load_dir(&a.data)?;
    let fill = if fill_mode == "mean" { FillRule::ChannelMean(dataset.channel_means()) } else { FillRule::Zeros };
    let config = BenchmarkConfig {
        explainers,
        methodologies,
        threshold,
        class,
        layer: Some(layer),
        region,
        target,
        fill,
        workers,
        seed,
        oracle_dilation,
    };
    eprintln!("evaluating {} images on {workers} worker(s)", dataset.len());
    let report = run_benchmark(&model, &dataset, &config)?;
    for e in &report.errors {
        eprintln!("excluded {} / {}: {}", e.image, e.method, e.message);
    }
    data::export_report(&report, &a.out)?;
    print!("{}", report.summary_table());
    println!("{} rows written to {}", report.rows.len(), a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn gradcheck(a: GradcheckArgs) -> CliResult<ExitCode> {
    let file = load_config(a.config.as_deref(), &["trials", "seed"])?;
    let inject_fault = match &a.inject_fault {
        Some(name) => Some(Primitive::from_name(name).ok_or_else(|| usage(format!("unknown primitive `{name}`")))?),
        None => None,
    };
    let config = GradcheckConfig {
        trials: resolve(&file, a.trials, "trials", 50)?,
        seed: resolve(&file, a.seed, "seed", 0)?,
        inject_fault,
    };
    if config.trials == 0 {
        return Err(usage("--trials must be at least 1"));
    }
    let report = run_gradcheck(&config)?;
    print!("{report}");
    let failures: Vec<&str> = report.failures().map(|r| r.name.as_str()).collect();
    if failures.is_empty() {
        println!("gradcheck passed");
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("gradcheck failed: {}", failures.join(", "));
        Ok(ExitCode::from(1))
    }
}
