use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use lpcoreset::glm::{self, HingeConfig, HingeSpec, Loss, ProbitConfig, ProbitSpec};
use lpcoreset::io::{self, CoresetSummary, RowFormat};
use lpcoreset::offline::{self, IterOptions};
use lpcoreset::online;
use lpcoreset::sampling::{self, OnlineCoreset, OracleOptions, SamplingConfig, WeightMode};
use lpcoreset::window::{WindowConfig, WindowTree};
use lpcoreset::{linalg, synth, DenseMatrix, Error};

mod manifest;

#[derive(Parser, Debug, Serialize)]
#[command(name = "lpcoreset", version, about = "lp Lewis weights and streaming coresets")]
struct Cli {
    /// Print machine-readable JSON reports on stdout.
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
enum Command {
    /// Offline, online or tensor Lewis weights of a row stream.
    Weights(WeightsArgs),
    /// Online one-shot coreset of a row stream.
    Coreset(CoresetArgs),
    /// Sliding-window coresets at chosen query times.
    SlidingWindow(WindowArgs),
    /// Coreset for a hinge-type or p-probit loss on labeled rows.
    Glm(GlmArgs),
    /// Distortion of a coreset against its source matrix.
    Verify(VerifyArgs),
    /// Sweep the sampling constant on synthetic Gaussian streams.
    Calibrate(CalibrateArgs),
}

#[derive(Args, Debug, Serialize, Clone)]
struct InputArgs {
    #[arg(long)]
    input: PathBuf,
    /// Input format; detected from the LPRW magic when omitted.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize, PartialEq)]
enum FormatArg {
    Csv,
    Bin,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
enum WeightKind {
    Offline,
    Online,
    Leverage,
    Convex,
    Tensor,
}

#[derive(Args, Debug, Serialize)]
struct WeightsArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    p: f64,
    #[arg(long, value_enum, default_value = "offline")]
    mode: WeightKind,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, default_value_t = 100)]
    max_iters: usize,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct CoresetArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    p: f64,
    #[arg(long)]
    eps: f64,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    c_sample: f64,
    /// Use the sampling-based weight estimator (p < 2).
    #[arg(long)]
    estimator: bool,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct WindowArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    window: u64,
    #[arg(long)]
    p: f64,
    #[arg(long)]
    eps: f64,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    #[arg(long, default_value_t = 1 << 20)]
    nmax: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    c_sample: f64,
    #[arg(long, default_value_t = 0)]
    reduce_threshold: usize,
    /// Zero-based row indices after which a window coreset is emitted.
    #[arg(long, value_delimiter = ',', required = true)]
    query_at: Vec<u64>,
    #[arg(long)]
    output_dir: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
enum LossArg {
    Logistic,
    Hinge,
    Relu,
    Probit,
}

#[derive(Args, Debug, Serialize)]
struct GlmArgs {
    /// Labeled CSV: label(+1/-1), z1, ..., zd.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum)]
    loss: LossArg,
    /// Exponent of the probit loss.
    #[arg(long, default_value_t = 2.0)]
    probit_p: f64,
    /// Declared upper bound on the mu complexity of the data.
    #[arg(long, allow_hyphen_values = true)]
    mu: f64,
    #[arg(long, default_value_t = 0.3)]
    eps: f64,
    /// Reservoir size for probit coresets.
    #[arg(long, default_value_t = 400)]
    size: usize,
    #[arg(long, default_value_t = 1.0)]
    c_sample: f64,
    #[arg(long, default_value_t = 1.0)]
    c_sens: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct VerifyArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    coreset: PathBuf,
    #[arg(long)]
    eps: f64,
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug, Serialize)]
struct CalibrateArgs {
    #[arg(long)]
    p: f64,
    #[arg(long)]
    eps: f64,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    #[arg(long, default_value_t = 5000)]
    n: usize,
    #[arg(long, default_value_t = 8)]
    d: usize,
    /// First seed of the sweep; keep these disjoint from evaluation seeds.
    #[arg(long, default_value_t = 1000)]
    seed_start: u64,
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    #[arg(long, value_delimiter = ',', required = true)]
    grid: Vec<f64>,
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    /// Where to write the sweep table as JSON.
    #[arg(long)]
    output: Option<PathBuf>,
}

/// Outcome classes mapped to process exit codes.
enum Failure {
    Config(String),
    Io(String),
    Convergence(String),
    Verify(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Io(_) => 2,
            Failure::Convergence(_) => 3,
            Failure::Verify(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Io(m) | Failure::Convergence(m) | Failure::Verify(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let m = e.to_string();
        match e {
            Error::Config(_) | Error::Domain(_) | Error::Capacity(_) => Failure::Config(m),
            Error::Convergence { .. } => Failure::Convergence(m),
            Error::Io(_) | Error::Parse { .. } | Error::InvalidInput(_) => Failure::Io(m),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

type Outcome = Result<serde_json::Value, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(v) = std::env::var("LPCORESET_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("error: LPCORESET_THREADS must be a positive integer");
                return ExitCode::from(1);
            }
        }
    }
    let result = match &cli.command {
        Command::Weights(a) => cmd_weights(a),
        Command::Coreset(a) => cmd_coreset(a),
        Command::SlidingWindow(a) => cmd_window(a),
        Command::Glm(a) => cmd_glm(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Calibrate(a) => cmd_calibrate(a),
    };
    match result {
        Ok(report) => {
            print_report(cli.json, &report);
            ExitCode::SUCCESS
        }
        Err(f) => {
            if cli.json {
                println!("{}", json!({ "error": f.message(), "exit_code": f.code() }));
            }
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn print_report(as_json: bool, report: &serde_json::Value) {
    if as_json {
        println!("{}", serde_json::to_string_pretty(report).expect("reports serialize"));
    } else if let Some(obj) = report.as_object() {
        for (k, v) in obj {
            println!("{k}: {v}");
        }
    }
}

fn detect_format(path: &Path, format: Option<FormatArg>) -> Result<RowFormat, Failure> {
    if let Some(f) = format {
        return Ok(match f {
            FormatArg::Csv => RowFormat::Csv,
            FormatArg::Bin => RowFormat::Bin,
        });
    }
    let mut head = [0u8; 4];
    let mut f = std::fs::File::open(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    let n = std::io::Read::read(&mut f, &mut head)?;
    Ok(if n == 4 && &head == io::BINARY_MAGIC { RowFormat::Bin } else { RowFormat::Csv })
}

/// Row iterator over the input file, in either format.
fn open_rows(input: &InputArgs) -> Result<Box<dyn Iterator<Item = lpcoreset::Result<Vec<f64>>>>, Failure> {
    let fmt = detect_format(&input.input, input.format)?;
    let file = std::fs::File::open(&input.input).map_err(|e| Failure::Io(format!("{}: {e}", input.input.display())))?;
    let reader = std::io::BufReader::new(file);
    Ok(match fmt {
        RowFormat::Csv => Box::new(io::CsvRows::new(reader)),
        RowFormat::Bin => Box::new(io::BinRows::new(reader)?),
    })
}

fn read_matrix(input: &InputArgs) -> Result<DenseMatrix, Failure> {
    Ok(io::collect_rows(open_rows(input)?)?)
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>, Failure> {
    let f = std::fs::File::create(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    Ok(std::io::BufWriter::new(f))
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(v).expect("metadata serializes");
    std::fs::write(path, text + "\n").map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn cmd_weights(a: &WeightsArgs) -> Outcome {
    let m = read_matrix(&a.input)?;
    let opts = IterOptions { tol: a.tol, max_iters: a.max_iters };
    let w: Vec<f64> = match a.mode {
        WeightKind::Offline => offline::lewis_fixed_point(&m, a.p, None, opts)?.into_vec(),
        WeightKind::Leverage => linalg::leverage_scores(&m).into_vec(),
        WeightKind::Online => online::online_lewis_weights(&m, a.p)?.into_vec(),
        WeightKind::Convex => {
            let l = DenseMatrix::new(m.ncols())?;
            offline::lewis_convex(&m, &l, a.p, opts)?.into_vec()
        }
        WeightKind::Tensor => offline::lewis_highp(&m, a.p, opts)?.sensitivity_bounds(),
    };
    match &a.output {
        Some(path) => {
            io::write_weights_csv(create(path)?, &w)?;
            manifest::write(path, "weights", a, &a.input.input)?;
        }
        None => io::write_weights_csv(std::io::stdout().lock(), &w)?,
    }
    Ok(json!({ "rows": w.len(), "sum": w.iter().sum::<f64>() }))
}

fn cmd_coreset(a: &CoresetArgs) -> Outcome {
    let cfg = SamplingConfig::with_constant(a.p, a.eps, a.delta, a.c_sample)?;
    let mode = if a.estimator { WeightMode::Estimator } else { WeightMode::Exact };
    let mut builder: Option<OnlineCoreset> = None;
    for (i, row) in open_rows(&a.input)?.enumerate() {
        let row = row?;
        let b = match &mut builder {
            Some(b) => b,
            None => builder.insert(OnlineCoreset::with_mode(row.len(), cfg.clone(), a.seed, mode.clone())?),
        };
        b.push(&row).map_err(|e| Failure::Io(format!("line {}: {e}", i + 1)))?;
    }
    let c = builder.ok_or_else(|| Failure::Io("input has no rows".into()))?.into_coreset();
    io::write_coreset(create(&a.output)?, &c)?;
    let summary = CoresetSummary::of(&c);
    write_json(&with_suffix(&a.output, ".json"), &summary)?;
    manifest::write(&a.output, "coreset", a, &a.input.input)?;
    Ok(json!({ "rows": c.meta.n, "kept": summary.kept_count, "sum_weights": summary.sum_weights,
               "kappa_ol_estimate": summary.kappa_ol_estimate }))
}

fn cmd_window(a: &WindowArgs) -> Outcome {
    let mut cfg = WindowConfig::new(a.p, a.eps, a.delta, a.window);
    cfg.n_max = a.nmax;
    cfg.seed = a.seed;
    cfg.c = a.c_sample;
    cfg.reduce_threshold = a.reduce_threshold;
    let mut queries = a.query_at.clone();
    queries.sort_unstable();
    queries.dedup();
    std::fs::create_dir_all(&a.output_dir)?;
    let mut tree: Option<WindowTree> = None;
    let mut emitted = Vec::new();
    let mut next = 0;
    for (t, row) in open_rows(&a.input)?.enumerate() {
        let row = row?;
        let tr = match &mut tree {
            Some(tr) => tr,
            None => tree.insert(WindowTree::new(row.len(), cfg.clone())?),
        };
        tr.insert(&row, t as u64)?;
        while next < queries.len() && queries[next] == t as u64 {
            let c = tr.query(a.window)?;
            let path = a.output_dir.join(format!("window_{t}.coreset"));
            io::write_coreset(create(&path)?, &c)?;
            write_json(&with_suffix(&path, ".json"), &CoresetSummary::of(&c))?;
            emitted.push(json!({ "t": t, "kept": c.len(), "path": path }));
            next += 1;
        }
    }
    let tree = tree.ok_or_else(|| Failure::Io("input has no rows".into()))?;
    if next < queries.len() {
        return Err(Failure::Config(format!("query time {} is beyond the end of the stream", queries[next])));
    }
    manifest::write(&a.output_dir.join("run"), "sliding-window", a, &a.input.input)?;
    Ok(json!({ "queries": emitted, "peak_live_rows": tree.peak_live_rows() }))
}

fn cmd_glm(a: &GlmArgs) -> Outcome {
    if !(a.mu > 0.0) || !a.mu.is_finite() {
        return Err(Failure::Config(format!("mu must be positive, got {}", a.mu)));
    }
    let file = std::fs::File::open(&a.input).map_err(|e| Failure::Io(format!("{}: {e}", a.input.display())))?;
    let (labels, z) = io::read_labeled_csv(std::io::BufReader::new(file))?;
    let rows = glm::labeled_to_rows(&labels, &z)?;
    let (coreset, loss) = match a.loss {
        LossArg::Probit => {
            let spec = ProbitSpec::new(a.probit_p)?;
            let cfg = ProbitConfig { size: a.size, c_sens: a.c_sens, seed: a.seed, n_hint: None };
            (glm::probit_coreset(&rows, &spec, a.mu, &cfg)?, Loss::Probit(spec))
        }
        other => {
            let spec = match other {
                LossArg::Logistic => HingeSpec::logistic(),
                LossArg::Hinge => HingeSpec::hinge(),
                _ => HingeSpec::relu(),
            };
            let cfg = HingeConfig { epsilon: a.eps, c: a.c_sample, seed: a.seed, n_hint: None };
            (glm::hinge_coreset(&rows, &spec, a.mu, &cfg)?, Loss::Hinge(spec))
        }
    };
    let as_file = io::weighted_as_coreset(&coreset, a.eps);
    io::write_coreset(create(&a.output)?, &as_file)?;
    write_json(&with_suffix(&a.output, ".json"), &CoresetSummary::of(&as_file))?;
    manifest::write(&a.output, "glm", a, &a.input)?;
    let zero = vec![0.0; rows.ncols()];
    Ok(json!({ "rows": rows.nrows(), "kept": coreset.len(),
               "full_cost_at_zero": loss.total(&rows, &zero), "coreset_cost_at_zero": coreset.cost(&loss, &zero) }))
}

fn cmd_verify(a: &VerifyArgs) -> Outcome {
    let m = read_matrix(&a.input)?;
    let file = std::fs::File::open(&a.coreset).map_err(|e| Failure::Io(format!("{}: {e}", a.coreset.display())))?;
    let c = io::read_coreset(std::io::BufReader::new(file))?;
    if c.d != m.ncols() {
        return Err(Failure::Config(format!("coreset has d = {}, input has d = {}", c.d, m.ncols())));
    }
    let opts = OracleOptions { trials: a.trials, seed: a.seed, ..Default::default() };
    let dist = sampling::distortion_oracle(&m, &c, c.p, opts);
    let report = json!({ "distortion": dist, "eps": a.eps, "exact": c.p == 2.0, "kept": c.len(), "rows": m.nrows(),
                         "pass": dist <= a.eps });
    if dist <= a.eps {
        Ok(report)
    } else {
        println!("{}", serde_json::to_string(&report).expect("report serializes"));
        Err(Failure::Verify(format!("distortion {dist} exceeds eps {}", a.eps)))
    }
}

fn cmd_calibrate(a: &CalibrateArgs) -> Outcome {
    let mut table = Vec::new();
    for &c in &a.grid {
        let cfg = SamplingConfig::with_constant(a.p, a.eps, a.delta, c)?;
        let mut sizes = Vec::new();
        let mut dists = Vec::new();
        for s in a.seed_start..a.seed_start + a.seeds {
            let m = synth::gaussian(a.n, a.d, s);
            let cs = sampling::online_coreset(&m, &cfg, s)?;
            let opts = OracleOptions { trials: a.trials, seed: s, ..Default::default() };
            dists.push(sampling::distortion_oracle(&m, &cs, a.p, opts));
            sizes.push(cs.len());
        }
        let ok = dists.iter().filter(|&&x| x <= a.eps).count();
        let mean_size = sizes.iter().sum::<usize>() as f64 / sizes.len() as f64;
        table.push(json!({ "c": c, "mean_size": mean_size, "max_size": sizes.iter().max(),
                           "pass_fraction": ok as f64 / dists.len() as f64,
                           "max_distortion": dists.iter().cloned().fold(0.0, f64::max) }));
    }
    let report = json!({ "p": a.p, "eps": a.eps, "delta": a.delta, "n": a.n, "d": a.d, "sweep": table });
    if let Some(path) = &a.output {
        write_json(path, &report)?;
        manifest::write_synthetic(path, "calibrate", a)?;
    }
    Ok(report)
}
