use std::io::{self, BufReader, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use smoothcert::certify::{self, CertifyError, CertifyParams, Mode, OracleSet};
use smoothcert::dataset::{self, Dataset, DatasetError, SyntheticKind};
use smoothcert::oracle::{
    self, CentroidModel, ClassifierOracle, CountingOracle, EnsembleOracle, Endpoint, ExternalOptions, ExternalOracle,
    LinearModel, OracleError, Transport,
};
use smoothcert::partition::{make_diagonal_partition, Interpolation};
use smoothcert::report::{self, CertificateRow, DimRange, SigmaRule};

const EXIT_CONFIG: u8 = 2;
const EXIT_ORACLE: u8 = 3;
const EXIT_IO: u8 = 4;

/// Named noise levels: each profile runs one certification per sigma.
const SIGMA_PROFILES: &[(&str, &[f64])] = &[("rs-standard", &[0.25, 0.50]), ("drs-standard", &[0.18, 0.36])];

#[derive(Parser)]
#[command(name = "smoothcert", version, about = "Certify smoothed classifiers and compute radius bounds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Certify every stride-th image of a DRSD dataset.
    Certify(CertifyArgs),
    /// Emit the dimension-dependent radius upper bounds as CSV.
    Bounds(BoundsArgs),
    /// Write a synthetic dataset plus the model that labels it.
    GenSynthetic(GenArgs),
    /// Answer the oracle line protocol with an in-process model.
    Serve(ServeArgs),
}

#[derive(Args)]
struct CertifyArgs {
    /// rs, drs or drs-asym.
    #[arg(long, default_value = "drs")]
    mode: String,
    /// Noise level (both branches in drs mode).
    #[arg(long)]
    sigma: Option<f64>,
    /// Left-branch noise level in drs-asym mode.
    #[arg(long = "sigma-l")]
    sigma_l: Option<f64>,
    /// Right-branch noise level in drs-asym mode.
    #[arg(long = "sigma-r")]
    sigma_r: Option<f64>,
    /// Run once per sigma of a named profile (rs-standard, drs-standard).
    #[arg(long = "sigma-profile", conflicts_with_all = ["sigma", "sigma_l", "sigma_r"])]
    sigma_profile: Option<String>,
    #[arg(long, default_value_t = CertifyParams::DEFAULT_N0)]
    n0: u64,
    #[arg(long, default_value_t = CertifyParams::DEFAULT_N)]
    n: u64,
    #[arg(long, default_value_t = CertifyParams::DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[arg(long)]
    dataset: PathBuf,
    /// linear:PATH, centroid:PATH, exec:CMD or tcp:HOST:PORT. Repeat to
    /// form a vote-summing ensemble.
    #[arg(long, required = true)]
    oracle: Vec<String>,
    /// Separate oracle(s) for the right branch; defaults to --oracle.
    #[arg(long = "oracle-right")]
    oracle_right: Vec<String>,
    /// Certificate CSV path; the summary goes next to it with a .json extension.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "bilinear")]
    interp: String,
    #[arg(long = "radius-grid", default_value = "0,0.25,0.5,0.75,1,1.25,1.5,1.75,2")]
    radius_grid: String,
    #[arg(long = "batch-size", default_value_t = CertifyParams::DEFAULT_BATCH)]
    batch_size: usize,
    /// Worker threads; overrides SMOOTHCERT_THREADS (0 = automatic).
    #[arg(long)]
    threads: Option<usize>,
    /// Record wall-clock time per sample (makes output run-dependent).
    #[arg(long)]
    timing: bool,
    /// Handshake and response timeout for external oracles, in milliseconds.
    #[arg(long = "oracle-timeout-ms", default_value_t = 10_000)]
    oracle_timeout_ms: u64,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long = "d-range", default_value = "2:4096:2")]
    d_range: String,
    #[arg(long, default_value_t = 0.999)]
    p: f64,
    /// one-over-sqrt-d or fixed:VALUE.
    #[arg(long = "sigma-rule", default_value = "one-over-sqrt-d")]
    sigma_rule: String,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    /// gaussian-blobs or linear-margin.
    #[arg(long)]
    kind: String,
    #[arg(long)]
    d: usize,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Dataset path; the model is written to PATH.model.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    /// Model file: linear weights (default) or centroid:PATH.
    #[arg(long)]
    model: String,
    /// Listen on this TCP port instead of stdin/stdout.
    #[arg(long)]
    tcp: Option<u16>,
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(m: impl ToString) -> Self {
        Self { code: EXIT_CONFIG, message: m.to_string() }
    }
    fn io(m: impl ToString) -> Self {
        Self { code: EXIT_IO, message: m.to_string() }
    }
}

impl From<OracleError> for Failure {
    fn from(e: OracleError) -> Self {
        let code = match e {
            OracleError::Io(_) => EXIT_IO,
            OracleError::InvalidModel(_)
            | OracleError::InvalidEndpoint(_)
            | OracleError::Degenerate
            | OracleError::DuplicateCentroids(..)
            | OracleError::Heterogeneous(_) => EXIT_CONFIG,
            _ => EXIT_ORACLE,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<CertifyError> for Failure {
    fn from(e: CertifyError) -> Self {
        match e {
            CertifyError::Oracle(o) => o.into(),
            other => Self::config(other),
        }
    }
}

impl From<DatasetError> for Failure {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Io(_) => Self::io(e),
            other => Self::config(other),
        }
    }
}

impl From<report::ReportError> for Failure {
    fn from(e: report::ReportError) -> Self {
        match e {
            report::ReportError::Io(_) | report::ReportError::Csv(_) | report::ReportError::Json(_) => Self::io(e),
            other => Self::config(other),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Certify(a) => run_certify(a),
        Command::Bounds(a) => run_bounds(a),
        Command::GenSynthetic(a) => run_gen(a),
        Command::Serve(a) => run_serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load_model(spec: &str) -> Result<Arc<dyn ClassifierOracle>, Failure> {
    if let Some(path) = spec.strip_prefix("centroid:") {
        return Ok(Arc::new(CentroidModel::load(Path::new(path))?));
    }
    let path = spec.strip_prefix("linear:").unwrap_or(spec);
    Ok(Arc::new(LinearModel::load(Path::new(path))?))
}

fn open_oracle(spec: &str, input_dim: usize, fed: &str, options: ExternalOptions) -> Result<Arc<dyn ClassifierOracle>, Failure> {
    let oracle: Arc<dyn ClassifierOracle> = if spec.starts_with("linear:") || spec.starts_with("centroid:") {
        load_model(spec)?
    } else {
        let transport: Transport = spec.parse()?;
        Arc::new(ExternalOracle::connect(Endpoint::new(transport).expect_input_dim(input_dim), options)?)
    };
    if oracle.input_dim() != input_dim {
        return Err(Failure::config(format!(
            "oracle '{spec}' takes input_dim {}, but the certifier feeds it {input_dim} ({fed})",
            oracle.input_dim()
        )));
    }
    Ok(oracle)
}

fn open_counting(
    specs: &[String],
    input_dim: usize,
    fed: &str,
    options: ExternalOptions,
) -> Result<Box<dyn CountingOracle>, Failure> {
    let members = specs
        .iter()
        .map(|s| open_oracle(s, input_dim, fed, options))
        .collect::<Result<Vec<_>, _>>()?;
    if members.len() == 1 {
        let only = members.into_iter().next().expect("one member");
        Ok(Box::new(Shared(only)))
    } else {
        Ok(Box::new(EnsembleOracle::new(members)?))
    }
}

/// Lets an `Arc<dyn ClassifierOracle>` stand where a counting oracle is expected.
struct Shared(Arc<dyn ClassifierOracle>);

impl ClassifierOracle for Shared {
    fn num_classes(&self) -> usize {
        self.0.num_classes()
    }
    fn input_dim(&self) -> usize {
        self.0.input_dim()
    }
    fn classify_batch(&self, batch: &[f64], count: usize) -> oracle::Result<Vec<usize>> {
        self.0.classify_batch(batch, count)
    }
}

fn run_certify(a: CertifyArgs) -> Result<(), Failure> {
    let mode: Mode = a.mode.parse().map_err(Failure::config)?;
    let interpolation: Interpolation = a.interp.parse().map_err(Failure::config)?;
    let grid = report::parse_radius_grid(&a.radius_grid)?;
    if a.stride == 0 {
        return Err(Failure::config("--stride must be >= 1"));
    }

    // (sigma, sigma_right) per run
    let runs: Vec<(f64, Option<f64>)> = if let Some(name) = &a.sigma_profile {
        let (_, sigmas) = SIGMA_PROFILES
            .iter()
            .find(|(n, _)| n == name)
            .ok_or_else(|| Failure::config(format!("unknown sigma profile '{name}'")))?;
        if mode == Mode::DrsAsym {
            return Err(Failure::config("sigma profiles apply to rs and drs modes"));
        }
        sigmas.iter().map(|&s| (s, None)).collect()
    } else {
        match mode {
            Mode::DrsAsym => match (a.sigma_l.or(a.sigma), a.sigma_r) {
                (Some(l), Some(r)) => vec![(l, Some(r))],
                _ => return Err(Failure::config("drs-asym needs --sigma-l (or --sigma) and --sigma-r")),
            },
            _ => match a.sigma {
                Some(s) => vec![(s, None)],
                None => return Err(Failure::config("missing --sigma (or --sigma-profile)")),
            },
        }
    };

    let ds = Dataset::load(&a.dataset)?;
    if ds.is_empty() {
        return Err(Failure::config("dataset is empty"));
    }
    let (c, h, w) = ds.shape();
    let idx = make_diagonal_partition(h, w).map_err(Failure::config)?;
    let (ph, pw) = idx.padded_shape();
    let (input_dim, fed) = match mode {
        Mode::Rs => (c * h * w, format!("{c}x{h}x{w} images")),
        _ => (c * ph * pw, format!("{c}x{ph}x{pw} branch views")),
    };
    let workers = a.threads.unwrap_or_else(certify::workers_from_env);
    let options = ExternalOptions {
        timeout: Duration::from_millis(a.oracle_timeout_ms),
        max_connections: if workers == 0 {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        } else {
            workers
        },
    };
    let left = open_counting(&a.oracle, input_dim, &fed, options)?;
    let right = if a.oracle_right.is_empty() || mode == Mode::Rs {
        None
    } else {
        Some(open_counting(&a.oracle_right, input_dim, &fed, options)?)
    };
    let right_ref: &dyn CountingOracle = right.as_deref().unwrap_or(left.as_ref());
    let oracles = match mode {
        Mode::Rs => OracleSet::Rs(left.as_ref()),
        Mode::Drs => OracleSet::Drs { left: left.as_ref(), right: right_ref },
        Mode::DrsAsym => OracleSet::DrsAsym { left: left.as_ref(), right: right_ref },
    };

    for &(sigma, sigma_right) in &runs {
        let params = CertifyParams {
            sigma,
            sigma_right,
            n0: a.n0,
            n: a.n,
            alpha: a.alpha,
            seed: a.seed,
            batch_size: a.batch_size,
            workers,
            interpolation,
        };
        let samples = certify::evaluate_dataset(oracles, &ds, &params, a.stride, a.timing)?;
        let rows: Vec<CertificateRow> = samples.iter().map(CertificateRow::from).collect();
        let summary = report::summarize(&samples, &params, mode, &grid, a.stride, idx.is_padded());
        let csv_path = if runs.len() > 1 { suffixed(&a.out, sigma) } else { a.out.clone() };
        let json_path = csv_path.with_extension("json");
        report::write_report(&rows, &summary, &csv_path, &json_path)?;
        eprintln!(
            "sigma={sigma}: {} samples, acr={:.6}, abstain_rate={:.4} -> {}",
            summary.count,
            summary.acr,
            summary.abstain_rate,
            csv_path.display()
        );
    }
    Ok(())
}

/// `out.csv` → `out_sigma0.25.csv`.
fn suffixed(path: &Path, sigma: f64) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}_sigma{sigma}.{}", ext.to_string_lossy()),
        None => format!("{stem}_sigma{sigma}"),
    };
    path.with_file_name(name)
}

fn run_bounds(a: BoundsArgs) -> Result<(), Failure> {
    let range: DimRange = a.d_range.parse()?;
    let rule: SigmaRule = a.sigma_rule.parse()?;
    if !(a.p > 0.0 && a.p < 1.0) {
        return Err(Failure::config(format!("--p must be in (0, 1), got {}", a.p)));
    }
    let points = report::bound_curve(range, a.p, rule)?;
    match a.out {
        Some(path) => {
            let mut buf = Vec::new();
            report::write_bound_curve(&points, &mut buf)?;
            std::fs::write(&path, buf).map_err(Failure::io)?;
        }
        None => report::write_bound_curve(&points, io::stdout().lock())?,
    }
    Ok(())
}

fn run_gen(a: GenArgs) -> Result<(), Failure> {
    let kind: SyntheticKind = a.kind.parse()?;
    if a.count == 0 {
        return Err(Failure::config("--count must be >= 1"));
    }
    let (ds, model) = dataset::generate(kind, a.d, a.classes, a.count, a.seed)?;
    ds.save(&a.out).map_err(Failure::io)?;
    let mut model_path = a.out.clone().into_os_string();
    model_path.push(".model");
    std::fs::write(&model_path, model.to_text()).map_err(Failure::io)?;
    eprintln!(
        "wrote {} images to {} and {} model to {}",
        ds.len(),
        a.out.display(),
        model.oracle_prefix(),
        PathBuf::from(model_path).display()
    );
    Ok(())
}

fn run_serve(a: ServeArgs) -> Result<(), Failure> {
    let model = load_model(&a.model)?;
    match a.tcp {
        Some(port) => {
            let listener = TcpListener::bind(("127.0.0.1", port)).map_err(Failure::io)?;
            let addr = listener.local_addr().map_err(Failure::io)?;
            eprintln!("listening on {addr}");
            oracle::serve_tcp(model, listener, None).map_err(Failure::io)
        }
        None => {
            let stdin = io::stdin();
            let mut stdout = io::stdout().lock();
            oracle::serve(model.as_ref(), BufReader::new(stdin.lock()), &mut stdout).map_err(Failure::io)?;
            stdout.flush().map_err(Failure::io)
        }
    }
}
