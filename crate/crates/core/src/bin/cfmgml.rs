use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use cfmgml::graph::{ensure_trainable, read_dataset, write_dataset, VertexVariant};
use cfmgml::kernels::{compute_gram, kernel_value, GramCache, KernelConfig};
use cfmgml::metrics::evaluate;
use cfmgml::model::DualModel;
use cfmgml::predictor::{load_predictions, predict_dataset, save_predictions, BagMode, GraphMode};
use cfmgml::synthgen::{generate, SynthConfig};
use cfmgml::trainer::{train, LossMode, TrainConfig};
use cfmgml::{Error, Result};

/// Multi-graph multi-label learning with graph kernels.
///
/// Every subcommand also accepts `--config FILE`, a file of `key=value`
/// lines equivalent to `--key value` flags. Flags given on the command line
/// take precedence over the file.
#[derive(Parser, Debug)]
#[command(name = "cfmgml", version, args_override_self = true)]
struct Cli {
    /// Worker threads for gram/train/predict (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// File of `key=value` lines read as flags; explicit flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset with planted graph labels.
    Gen(GenArgs),
    /// Compute and store the Gram matrix of a dataset.
    Gram(GramArgs),
    /// Train a model.
    Train(TrainArgs),
    /// Predict bag and graph labels.
    Predict(PredictArgs),
    /// Score predictions against a labeled dataset.
    Eval(EvalArgs),
}

#[derive(Copy, Clone, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum VariantArg {
    Label,
    Attribute,
}

#[derive(Copy, Clone, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum KernelArg {
    Wl,
    Vh,
}

#[derive(Copy, Clone, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum LossArg {
    Full,
    Hamming,
}

#[derive(Copy, Clone, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum GraphModeArg {
    Argmax,
    Threshold,
}

#[derive(Copy, Clone, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum BagModeArg {
    Union,
    Threshold,
}

#[derive(Args, Debug, Serialize)]
struct GenArgs {
    /// Output dataset path.
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 60)]
    bags: usize,
    #[arg(long, default_value_t = 3)]
    min_graphs: usize,
    #[arg(long, default_value_t = 6)]
    max_graphs: usize,
    /// Maximum labels per bag (below the class count).
    #[arg(long, default_value_t = 2)]
    max_labels: usize,
    #[arg(long, default_value_t = 5)]
    min_motif_size: usize,
    #[arg(long, default_value_t = 8)]
    max_motif_size: usize,
    /// Per-pair edge flip probability.
    #[arg(long, default_value_t = 0.02)]
    edge_noise: f64,
    #[arg(long, value_enum, default_value_t = VariantArg::Label)]
    variant: VariantArg,
    /// Attribute dimension (attribute variant).
    #[arg(long, default_value_t = 4)]
    attr_dim: usize,
    /// Attribute perturbation standard deviation (attribute variant).
    #[arg(long, default_value_t = 0.1)]
    attr_noise: f64,
    /// Unlabeled random graphs added to each bag.
    #[arg(long, default_value_t = 0)]
    background_graphs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug, Serialize)]
struct KernelArgs {
    #[arg(long, value_enum, default_value_t = KernelArg::Wl)]
    kernel: KernelArg,
    /// WL relabeling rounds.
    #[arg(long, default_value_t = 2)]
    wl_iterations: usize,
    /// RBF bandwidth for attribute vertices (vertex-histogram kernel).
    #[arg(long)]
    bandwidth: Option<f64>,
    /// Cosine-normalize kernel values.
    #[arg(long, default_value_t = false)]
    normalize: bool,
}

impl KernelArgs {
    fn config(&self) -> KernelConfig {
        let cfg = match self.kernel {
            KernelArg::Wl => KernelConfig::wl_subtree(self.wl_iterations),
            KernelArg::Vh => match self.bandwidth {
                Some(b) => KernelConfig::vertex_rbf(b),
                None => KernelConfig::vertex_histogram(),
            },
        };
        cfg.normalized(self.normalize)
    }
}

#[derive(Args, Debug, Serialize)]
struct GramArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Output CSV path.
    #[arg(long)]
    output: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    kernel: KernelArgs,
}

#[derive(Args, Debug, Serialize)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Output model path.
    #[arg(long)]
    model: PathBuf,
    /// Precomputed Gram CSV to reuse.
    #[arg(long)]
    gram: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    kernel: KernelArgs,
    #[arg(long, default_value_t = 1e-4)]
    lambda: f64,
    #[arg(long, default_value_t = 10)]
    rounds: usize,
    #[arg(long, default_value_t = 100)]
    iterations: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = LossArg::Full)]
    loss: LossArg,
    /// Zero the counters at the start of each round.
    #[arg(long, default_value_t = false)]
    reset_counters: bool,
    /// Write the per-iteration objective and norm as CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct PredictArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Output prediction records path.
    #[arg(long)]
    output: PathBuf,
    #[arg(long, value_enum, default_value_t = GraphModeArg::Argmax)]
    graph_mode: GraphModeArg,
    #[arg(long, value_enum, default_value_t = BagModeArg::Union)]
    bag_mode: BagModeArg,
}

#[derive(Args, Debug, Serialize)]
struct EvalArgs {
    #[arg(long)]
    predictions: PathBuf,
    /// Labeled dataset the predictions were made on.
    #[arg(long)]
    truth: PathBuf,
    /// Also write the report as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Report coverage as a rank count instead of a fraction of classes.
    #[arg(long, default_value_t = false)]
    unnormalized_coverage: bool,
}

#[derive(Serialize)]
struct RunManifest<'a, T: Serialize> {
    subcommand: &'a str,
    version: &'a str,
    config: &'a T,
    inputs: Vec<&'a Path>,
    outputs: Vec<&'a Path>,
    seed: Option<u64>,
    threads: usize,
    wall_time_secs: f64,
}

fn manifest_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn write_manifest<T: Serialize>(m: &RunManifest<'_, T>) -> Result<()> {
    let Some(first) = m.outputs.first() else {
        return Ok(());
    };
    let path = manifest_path(first);
    let mut text = serde_json::to_string_pretty(m).map_err(|e| Error::Format(e.to_string()))?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

fn run_gen(a: &GenArgs) -> Result<Vec<&Path>> {
    let cfg = SynthConfig {
        num_classes: a.classes,
        num_bags: a.bags,
        min_graphs: a.min_graphs,
        max_graphs: a.max_graphs,
        max_labels: a.max_labels,
        min_motif_size: a.min_motif_size,
        max_motif_size: a.max_motif_size,
        edge_noise: a.edge_noise,
        vertex_variant: match a.variant {
            VariantArg::Label => VertexVariant::Label,
            VariantArg::Attribute => VertexVariant::Attribute,
        },
        attr_dim: a.attr_dim,
        attr_noise: a.attr_noise,
        background_graphs: a.background_graphs,
        seed: a.seed,
    };
    write_dataset(&generate(&cfg)?, &a.output)?;
    Ok(vec![])
}

fn run_gram(a: &GramArgs) -> Result<Vec<&Path>> {
    let ds = read_dataset(&a.dataset)?;
    compute_gram(&ds, &a.kernel.config())?.save_csv(&a.output)?;
    Ok(vec![&a.dataset])
}

fn run_train(a: &TrainArgs) -> Result<Vec<&Path>> {
    let ds = read_dataset(&a.dataset)?;
    ensure_trainable(&ds)?;
    let kernel = a.kernel.config();
    kernel.check(ds.vertex_variant)?;
    let mut inputs: Vec<&Path> = vec![&a.dataset];
    let gram = match &a.gram {
        Some(path) => {
            let gram = GramCache::load_csv(path, &ds)?;
            verify_diagonal(&gram, &ds, &kernel, path)?;
            inputs.push(path);
            gram
        }
        None => compute_gram(&ds, &kernel)?,
    };
    let cfg = TrainConfig {
        lambda: a.lambda,
        rounds: a.rounds,
        iterations: a.iterations,
        seed: a.seed,
        loss_mode: match a.loss {
            LossArg::Full => LossMode::Full,
            LossArg::Hamming => LossMode::HammingOnly,
        },
        record_objective: a.trace.is_some(),
        reset_counters: a.reset_counters,
    };
    let (model, trace) = train(&ds, &gram, &kernel, &cfg)?;
    model.save(&a.model)?;
    if let Some(path) = &a.trace {
        let f = fs::File::create(path).map_err(io_err(path))?;
        let mut w = BufWriter::new(f);
        let write = |w: &mut BufWriter<fs::File>| -> std::io::Result<()> {
            writeln!(w, "iteration,objective,norm")?;
            for (t, (obj, norm)) in trace.objective.iter().zip(&trace.norms).enumerate() {
                writeln!(w, "{},{obj:?},{norm:?}", t + 1)?;
            }
            w.flush()
        };
        write(&mut w).map_err(io_err(path))?;
    }
    Ok(inputs)
}

/// Guards against reusing a Gram matrix built with a different kernel.
fn verify_diagonal(gram: &GramCache, ds: &cfmgml::Dataset, kernel: &KernelConfig, path: &Path) -> Result<()> {
    for (a, g) in ds.graphs().enumerate() {
        let expected = kernel_value(kernel, g, g)?;
        if gram.get(a, a) != expected {
            return Err(Error::Format(format!(
                "{}: diagonal entry {a} is {:?} but the kernel gives {expected:?}; \
                 was it computed with a different kernel?",
                path.display(),
                gram.get(a, a)
            )));
        }
    }
    Ok(())
}

fn run_predict(a: &PredictArgs) -> Result<Vec<&Path>> {
    let model = DualModel::load(&a.model)?;
    let ds = read_dataset(&a.dataset)?;
    let bag_mode = match a.bag_mode {
        BagModeArg::Union => BagMode::Union,
        BagModeArg::Threshold => BagMode::ThresholdBag,
    };
    let graph_mode = match a.graph_mode {
        GraphModeArg::Argmax => GraphMode::Argmax,
        GraphModeArg::Threshold => GraphMode::Threshold,
    };
    let preds = predict_dataset(&model, &ds, bag_mode)?;
    save_predictions(&preds, graph_mode, &a.output)?;
    Ok(vec![&a.dataset, &a.model])
}

fn run_eval(a: &EvalArgs) -> Result<Vec<&Path>> {
    let preds = load_predictions(&a.predictions)?;
    let truth = read_dataset(&a.truth)?;
    let report = evaluate(&preds, &truth, !a.unnormalized_coverage)?;
    print!("{report}");
    if let Some(path) = &a.csv {
        let f = fs::File::create(path).map_err(io_err(path))?;
        report.write_csv(BufWriter::new(f)).map_err(io_err(path))?;
    }
    Ok(vec![&a.predictions, &a.truth])
}

fn execute(cli: &Cli) -> Result<()> {
    if cli.threads > 0 {
        // fails only if a pool already exists, which cannot happen here
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global();
    }
    let start = Instant::now();
    macro_rules! dispatch {
        ($name:literal, $args:expr, $run:ident, $outputs:expr, $seed:expr) => {{
            let inputs = $run($args)?;
            write_manifest(&RunManifest {
                subcommand: $name,
                version: env!("CARGO_PKG_VERSION"),
                config: $args,
                inputs,
                outputs: $outputs,
                seed: $seed,
                threads: cli.threads,
                wall_time_secs: start.elapsed().as_secs_f64(),
            })
        }};
    }
    match &cli.command {
        Command::Gen(a) => dispatch!("gen", a, run_gen, vec![a.output.as_path()], Some(a.seed)),
        Command::Gram(a) => dispatch!("gram", a, run_gram, vec![a.output.as_path()], None),
        Command::Train(a) => {
            let mut outputs = vec![a.model.as_path()];
            outputs.extend(a.trace.as_deref());
            dispatch!("train", a, run_train, outputs, Some(a.seed))
        }
        Command::Predict(a) => dispatch!("predict", a, run_predict, vec![a.output.as_path()], None),
        Command::Eval(a) => dispatch!("eval", a, run_eval, a.csv.as_deref().into_iter().collect(), None),
    }
}

/// Splices `--config FILE` into the argument list as flags placed before
/// the remaining subcommand arguments, so explicit flags win.
fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut out = Vec::with_capacity(args.len());
    let mut config = None;
    let mut iter = args.into_iter();
    while let Some(arg) = iter.next() {
        let s = arg.to_string_lossy();
        if s == "--config" {
            let path = iter
                .next()
                .ok_or_else(|| Error::Config("--config requires a file path".into()))?;
            config = Some((out.len(), PathBuf::from(path)));
        } else if let Some(p) = s.strip_prefix("--config=") {
            config = Some((out.len(), PathBuf::from(p)));
        } else {
            out.push(arg);
        }
    }
    let Some((pos, path)) = config else {
        return Ok(out);
    };
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let mut flags = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("{}:{}: expected key=value", path.display(), i + 1)))?;
        let key = format!("--{}", key.trim().replace('_', "-"));
        match value.trim() {
            "true" => flags.push(OsString::from(key)),
            "false" => {}
            v => {
                flags.push(OsString::from(key));
                flags.push(OsString::from(v));
            }
        }
    }
    // config flags go right after the subcommand name
    let sub = out
        .iter()
        .position(|a| ["gen", "gram", "train", "predict", "eval"].contains(&a.to_string_lossy().as_ref()))
        .map_or(pos, |p| p + 1);
    out.splice(sub..sub, flags);
    Ok(out)
}

fn report(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    if e.is_io() {
        ExitCode::from(2)
    } else {
        ExitCode::from(1)
    }
}

fn main() -> ExitCode {
    let args = match expand_config(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => return report(&e),
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e),
    }
}
