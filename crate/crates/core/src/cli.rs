//! Command-line interface. Exit codes: 0 success, 2 invalid input, 3 file errors.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::arch::{self, checkpoint, ghostify, Network, NetworkSpec};
use crate::cost;
use crate::error::{Error, Result};
use crate::image;
use crate::ops::softmax;
use crate::tensor::Scalar;
use crate::toyfit::{self, FeaturePair};
use crate::train::{self, data, Augment, DatasetKind, Normalization, Schedule, Split, SweepParam, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "ghostconv", version, about = "Ghost module networks: build, cost analysis, training, kernel fitting")]
pub struct Cli {
    /// Seed for weight init, shuffling and augmentation
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (results do not depend on it)
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = DTypeArg::F32)]
    pub dtype: DTypeArg,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DTypeArg {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ArchArg {
    Ghostnet,
    Vgg16,
    Tiny,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DatasetArg {
    Mnist,
    Cifar10,
}

impl From<DatasetArg> for DatasetKind {
    fn from(d: DatasetArg) -> Self {
        match d {
            DatasetArg::Mnist => DatasetKind::Mnist,
            DatasetArg::Cifar10 => DatasetKind::Cifar10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ParamArg {
    S,
    D,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScheduleArg {
    Step,
    Constant,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a network spec from the model zoo or rewrite an existing one
    Build(BuildArgs),
    /// Per-layer parameter and MAC report
    Analyze(AnalyzeArgs),
    /// Baseline-vs-variant cost comparison
    Compare(CompareArgs),
    /// Train a spec on MNIST or CIFAR-10
    Train(TrainArgs),
    /// Classify a PGM/PPM image with a checkpoint
    Infer(InferArgs),
    /// Ghostify a spec over a range of s or d and train each variant
    Sweep(SweepArgs),
    /// Fit depthwise kernels between feature map pairs
    Toyfit(ToyfitArgs),
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[arg(long, value_enum, conflicts_with = "spec")]
    pub arch: Option<ArchArg>,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Defaults to 1000 for ghostnet, 10 otherwise
    #[arg(long)]
    pub classes: Option<usize>,
    /// Input as CxHxW
    #[arg(long)]
    pub input: Option<String>,
    /// Start from an existing spec file
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Replace conv layers by Ghost modules
    #[arg(long)]
    pub ghostify: bool,
    #[arg(long, default_value_t = 2)]
    pub s: usize,
    #[arg(long, default_value_t = 3)]
    pub d: usize,
    /// Output file (stdout if omitted)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub spec: PathBuf,
    /// Spatial input size as HxW
    #[arg(long)]
    pub input: Option<String>,
    /// Per-layer CSV destination (stdout if omitted)
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Baseline then variant
    #[arg(long, num_args = 1, required = true)]
    pub spec: Vec<PathBuf>,
    #[arg(long)]
    pub input: Option<String>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long, value_enum, default_value_t = DatasetArg::Mnist)]
    pub dataset: DatasetArg,
    /// Dataset directory (default: $GHOSTCONV_DATA_DIR)
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Use a seeded subset of this many training samples
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, Args)]
pub struct OptimArgs {
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub weight_decay: f64,
    #[arg(long, value_enum, default_value_t = ScheduleArg::Step)]
    pub schedule: ScheduleArg,
    /// Random crop (pad 4) and horizontal mirroring
    #[arg(long)]
    pub augment: bool,
    /// Keep BN layers on their running statistics while training
    #[arg(long)]
    pub freeze_bn: bool,
}

impl OptimArgs {
    fn config(&self, seed: u64) -> TrainConfig {
        let schedule = match self.schedule {
            ScheduleArg::Step => Schedule::step_default(self.epochs),
            ScheduleArg::Constant => Schedule::Constant,
        };
        TrainConfig {
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed,
            augment: Augment {
                crop: self.augment,
                mirror: self.augment,
            },
            schedule,
            freeze_bn: self.freeze_bn,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub spec: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// Start from this checkpoint instead of fresh weights
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Directory for per-epoch checkpoints and normalization statistics
    #[arg(long, default_value = "checkpoints")]
    pub out_dir: PathBuf,
    /// History CSV (default: <out-dir>/history.csv)
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// PGM or PPM image
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub top_k: usize,
    /// Normalization file written by `train` (default: next to the checkpoint, if present)
    #[arg(long)]
    pub norm: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long, value_enum)]
    pub param: ParamArg,
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<usize>,
    /// The other hyperparameter (default d=3 when sweeping s, s=2 when sweeping d)
    #[arg(long)]
    pub fixed: Option<usize>,
    /// Leave out the unmodified baseline row
    #[arg(long)]
    pub no_baseline: bool,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ToyfitArgs {
    /// Explicit pair: source image
    #[arg(long, requires = "target", conflicts_with = "spec")]
    pub source: Option<PathBuf>,
    /// Explicit pair: target image
    #[arg(long, requires = "source")]
    pub target: Option<PathBuf>,
    /// Harvest pairs from this network
    #[arg(long, requires = "layer")]
    pub spec: Option<PathBuf>,
    #[arg(long, requires = "spec")]
    pub checkpoint: Option<PathBuf>,
    /// Layer whose output maps are paired
    #[arg(long)]
    pub layer: Option<usize>,
    /// Input image for harvesting (otherwise a dataset sample)
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// Dataset sample index used for harvesting without --image
    #[arg(long, default_value_t = 0)]
    pub sample: usize,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 4)]
    pub top_k: usize,
    #[arg(long, value_delimiter = ',', default_values_t = toyfit::KERNEL_SIZES.to_vec())]
    pub ds: Vec<usize>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Write source, target and fitted maps as PGM here
    #[arg(long)]
    pub pgm_dir: Option<PathBuf>,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    if let Some(n) = cli.threads {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let mut stdout = std::io::stdout().lock();
    match execute(&cli, &mut stdout) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_io() {
        EXIT_IO
    } else {
        EXIT_INVALID
    }
}

macro_rules! dispatch {
    ($dtype:expr, $f:ident($($arg:expr),*)) => {
        match $dtype {
            DTypeArg::F32 => $f::<f32>($($arg),*),
            DTypeArg::F64 => $f::<f64>($($arg),*),
        }
    };
}
/// Runs a parsed command, writing reports to `out`.
pub fn execute(cli: &Cli, out: &mut dyn std::io::Write) -> Result<()> {
    match &cli.command {
        Command::Build(a) => cmd_build(a, out),
        Command::Analyze(a) => cmd_analyze(a, out),
        Command::Compare(a) => cmd_compare(a, out),
        Command::Train(a) => dispatch!(cli.dtype, cmd_train(a, cli.seed, out)),
        Command::Infer(a) => dispatch!(cli.dtype, cmd_infer(a, cli.seed, out)),
        Command::Sweep(a) => dispatch!(cli.dtype, cmd_sweep(a, cli.seed, out)),
        Command::Toyfit(a) => dispatch!(cli.dtype, cmd_toyfit(a, cli.seed, out)),
    }
}

fn stdout_err(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

fn emit(out: &mut dyn std::io::Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes()).map_err(stdout_err)
}

fn write_file(path: &Path, text: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn load_spec(path: &Path) -> Result<NetworkSpec> {
    let spec: NetworkSpec = read_text(path)?.parse()?;
    spec.validate()?;
    Ok(spec)
}

fn parse_dims(text: &str, n: usize) -> Result<Vec<usize>> {
    let dims: Vec<usize> = text
        .split('x')
        .map(|d| d.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::config(format!("cannot parse `{text}` as dimensions")))?;
    if dims.len() != n || dims.contains(&0) {
        return Err(Error::config(format!("expected {n} positive dimensions separated by x, got `{text}`")));
    }
    Ok(dims)
}

fn with_input(spec: NetworkSpec, input: Option<&str>) -> Result<NetworkSpec> {
    match input {
        None => Ok(spec),
        Some(s) => {
            let d = parse_dims(s, 2)?;
            let spec = spec.with_input_size(d[0], d[1]);
            spec.validate()?;
            Ok(spec)
        }
    }
}

fn cmd_build(a: &BuildArgs, out: &mut dyn std::io::Write) -> Result<()> {
    let input = a
        .input
        .as_deref()
        .map(|s| parse_dims(s, 3).map(|d| (d[0], d[1], d[2])))
        .transpose()?;
    let mut spec = match (&a.spec, a.arch) {
        (Some(path), _) => load_spec(path)?,
        (None, Some(ArchArg::Ghostnet)) => {
            arch::build_ghostnet_for(a.alpha, a.classes.unwrap_or(1000), input.unwrap_or((3, 224, 224)))?
        }
        (None, Some(ArchArg::Vgg16)) => {
            if input.is_some_and(|i| i != (3, 32, 32)) {
                return Err(Error::config("vgg16 is defined for 3x32x32 inputs"));
            }
            arch::vgg16_cifar(a.alpha, a.classes.unwrap_or(10))?
        }
        (None, Some(ArchArg::Tiny)) => arch::tiny_ghost_cnn(input.unwrap_or((1, 28, 28)), a.classes.unwrap_or(10))?,
        (None, None) => return Err(Error::config("give --arch or --spec")),
    };
    if a.ghostify {
        spec = ghostify(&spec, a.s, a.d)?;
    }
    let text = spec.to_string();
    match &a.out {
        Some(path) => write_file(path, text.as_bytes()),
        None => emit(out, &text),
    }
}

fn cmd_analyze(a: &AnalyzeArgs, out: &mut dyn std::io::Write) -> Result<()> {
    let spec = with_input(load_spec(&a.spec)?, a.input.as_deref())?;
    let report = cost::analyze(&spec)?;
    match &a.csv {
        Some(path) => write_file(path, report.to_csv().as_bytes())?,
        None => emit(out, &report.to_csv())?,
    }
    emit(out, &format!("{}\n{}\n", report.summary_line(), report.detail_line()))
}

fn cmd_compare(a: &CompareArgs, out: &mut dyn std::io::Write) -> Result<()> {
    if a.spec.len() != 2 {
        return Err(Error::config(format!("compare needs exactly two --spec files, got {}", a.spec.len())));
    }
    let base = with_input(load_spec(&a.spec[0])?, a.input.as_deref())?;
    let variant = with_input(load_spec(&a.spec[1])?, a.input.as_deref())?;
    let cmp = cost::compare(&base, &variant)?;
    match &a.csv {
        Some(path) => write_file(path, cmp.to_csv().as_bytes())?,
        None => emit(out, &cmp.to_csv())?,
    }
    emit(
        out,
        &format!(
            "baseline {}\nvariant {}\nflops_ratio={} params_ratio={}\n",
            cmp.baseline.summary_line(),
            cmp.variant.summary_line(),
            cmp.flops_ratio(),
            cmp.params_ratio()
        ),
    )
}

fn load_split(d: &DataArgs, seed: u64) -> Result<Split> {
    let kind = DatasetKind::from(d.dataset);
    let dir = data::resolve_data_dir(d.data.as_deref(), kind)?;
    let (mut tr, te) = match kind {
        DatasetKind::Mnist => data::ingest_mnist(&dir)?,
        DatasetKind::Cifar10 => data::ingest_cifar10(&dir)?,
    };
    if let Some(n) = d.limit {
        tr = tr.subset(n, seed);
    }
    Ok(Split::new(tr, te))
}

fn check_input_matches(spec: &NetworkSpec, split: &Split) -> Result<()> {
    let t = &split.train;
    if spec.input != (t.channels, t.height, t.width) {
        let (c, h, w) = spec.input;
        return Err(Error::config(format!(
            "spec input {c}x{h}x{w} does not match dataset images {}x{}x{}",
            t.channels, t.height, t.width
        )));
    }
    Ok(())
}

pub const NORM_FILE: &str = "normalization.txt";

fn norm_text(n: &Normalization) -> String {
    let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
    format!("mean {}\nstd {}\n", join(&n.mean), join(&n.std))
}

fn parse_norm(text: &str, path: &Path) -> Result<Normalization> {
    let mut mean = None;
    let mut std = None;
    for (i, line) in text.lines().enumerate() {
        let mut it = line.split_whitespace();
        let key = it.next();
        let vals: Vec<f64> = it
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::format(path, 0, format!("bad number on line {}", i + 1)))?;
        match key {
            Some("mean") => mean = Some(vals),
            Some("std") => std = Some(vals),
            _ => {}
        }
    }
    match (mean, std) {
        (Some(mean), Some(std)) if mean.len() == std.len() => Ok(Normalization { mean, std }),
        _ => Err(Error::format(path, 0, "expected `mean ...` and `std ...` lines of equal length")),
    }
}

fn cmd_train<T: Scalar>(a: &TrainArgs, seed: u64, out: &mut dyn std::io::Write) -> Result<()> {
    let spec = load_spec(&a.spec)?;
    let split = load_split(&a.data, seed)?;
    check_input_matches(&spec, &split)?;
    let mut net = Network::<T>::materialize(&spec, seed)?;
    if let Some(init) = &a.init {
        checkpoint::load_into(&mut net, init)?;
    }
    let mut config = a.optim.config(seed);
    config.checkpoint_dir = Some(a.out_dir.clone());
    config.validate()?;
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    write_file(&a.out_dir.join(NORM_FILE), norm_text(&split.stats).as_bytes())?;
    let mut io_err = None;
    let history = train::train_with(&mut net, &split, &config, |e| {
        let test = e.test_acc.map(|t| format!(" test_acc={t:.4}")).unwrap_or_default();
        let line = format!("epoch={} loss={:.6} train_acc={:.4}{test}\n", e.epoch, e.loss, e.train_acc);
        if let Err(err) = out.write_all(line.as_bytes()) {
            io_err.get_or_insert(err);
        }
    })?;
    if let Some(e) = io_err {
        return Err(stdout_err(e));
    }
    let hist_path = a.history.clone().unwrap_or_else(|| a.out_dir.join("history.csv"));
    write_file(&hist_path, history.to_csv().as_bytes())
}

fn cmd_infer<T: Scalar>(a: &InferArgs, seed: u64, out: &mut dyn std::io::Write) -> Result<()> {
    let spec = load_spec(&a.spec)?;
    let mut net = Network::<T>::materialize(&spec, seed)?;
    checkpoint::load_into(&mut net, &a.checkpoint)?;
    let img = image::load(&a.image)?;
    if img.channels != spec.input.0 {
        return Err(Error::config(format!(
            "image has {} channels, network expects {}",
            img.channels, spec.input.0
        )));
    }
    let mut ds = data::Dataset::new((img.channels, img.height, img.width), img.pixels, vec![0], 1)?;
    let norm_path = a.norm.clone().or_else(|| {
        let p = a.checkpoint.with_file_name(NORM_FILE);
        p.exists().then_some(p)
    });
    if let Some(p) = norm_path {
        let n = parse_norm(&read_text(&p)?, &p)?;
        if n.mean.len() != ds.channels {
            return Err(Error::format(&p, 0, "normalization channel count does not match the image"));
        }
        ds.normalize(&n);
    }
    let (x, _) = ds.batch::<T>(&[0])?;
    let probs = softmax(&net.infer(&x)?);
    let mut ranked: Vec<(usize, f64)> = probs.data().iter().map(|p| p.as_f64()).enumerate().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut text = String::new();
    for (class, p) in ranked.into_iter().take(a.top_k.max(1)) {
        text.push_str(&format!("class={class} prob={p:.6}\n"));
    }
    emit(out, &text)
}

fn cmd_sweep<T: Scalar>(a: &SweepArgs, seed: u64, out: &mut dyn std::io::Write) -> Result<()> {
    let spec = load_spec(&a.spec)?;
    let split = load_split(&a.data, seed)?;
    check_input_matches(&spec, &split)?;
    let param = match a.param {
        ParamArg::S => SweepParam::S,
        ParamArg::D => SweepParam::D,
    };
    let config = a.optim.config(seed);
    let rows = train::sweep::<T>(
        &spec,
        param,
        &a.values,
        a.fixed.unwrap_or(param.default_fixed()),
        !a.no_baseline,
        &split,
        &config,
        seed,
    )?;
    let csv = train::sweep_csv(&rows);
    match &a.csv {
        Some(path) => write_file(path, csv.as_bytes()),
        None => emit(out, &csv),
    }
}

fn single_channel(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let img = image::load(path)?;
    let plane = img.height * img.width;
    Ok((img.height, img.width, img.pixels[..plane].iter().map(|&v| v as f64).collect()))
}

fn cmd_toyfit<T: Scalar>(a: &ToyfitArgs, seed: u64, out: &mut dyn std::io::Write) -> Result<()> {
    let pairs = if let (Some(src), Some(tgt)) = (&a.source, &a.target) {
        let (h, w, s) = single_channel(src)?;
        let (th, tw, t) = single_channel(tgt)?;
        if (h, w) != (th, tw) {
            return Err(Error::config(format!("source is {h}x{w} but target is {th}x{tw}")));
        }
        vec![FeaturePair::new(h, w, s, t, format!("{} -> {}", src.display(), tgt.display()))?]
    } else if let (Some(spec_path), Some(layer)) = (&a.spec, a.layer) {
        let spec = load_spec(spec_path)?;
        let mut net = Network::<T>::materialize(&spec, seed)?;
        if let Some(ck) = &a.checkpoint {
            checkpoint::load_into(&mut net, ck)?;
        }
        let x = match &a.image {
            Some(p) => image::load(p)?.to_tensor::<T>()?,
            None => {
                let split = load_split(&a.data, seed)?;
                if a.sample >= split.train.len() {
                    return Err(Error::config(format!(
                        "sample {} out of range for {} training images",
                        a.sample,
                        split.train.len()
                    )));
                }
                split.train.batch::<T>(&[a.sample])?.0
            }
        };
        toyfit::harvest_pairs(&net, &x, layer, a.top_k)?
    } else {
        return Err(Error::config("give --source and --target, or --spec with --layer"));
    };
    if pairs.is_empty() {
        return Err(Error::config("no non-constant channel pairs to fit"));
    }
    let rows = toyfit::mse_sweep(&pairs, &a.ds)?;
    if let Some(dir) = &a.pgm_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let dmax = a.ds.iter().copied().max().unwrap_or(1);
        for (i, p) in pairs.iter().enumerate() {
            let fit = toyfit::fit_depthwise(p, dmax)?;
            let fitted = toyfit::apply_kernel(&p.source, p.height, p.width, &fit.kernel, dmax);
            for (name, map) in [("source", &p.source), ("target", &p.target), ("fitted", &fitted)] {
                image::save_pgm(&dir.join(format!("pair{i}_{name}.pgm")), map, p.height, p.width)?;
            }
        }
    }
    let csv = toyfit::mse_csv(&rows);
    match &a.csv {
        Some(path) => write_file(path, csv.as_bytes())?,
        None => emit(out, &csv)?,
    }
    let mut text = String::new();
    for (i, p) in pairs.iter().enumerate() {
        let sim = p.similarity.map(|s| format!(" ncc={s:.4}")).unwrap_or_default();
        text.push_str(&format!("pair {i}: {}{sim}\n", p.tag));
    }
    emit(out, &text)
}
