//! Command-line frontend for differentially private prototype learning.
//!
//! One binary, verb subcommands. Machine-readable results go to standard
//! output as JSON (the sweep summary as CSV), human summaries to standard
//! error. Exit codes: 0 success, 2 usage error naming the offending flag,
//! 1 runtime error naming the failing pipeline stage.

use std::fmt;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use dppl_core::classify::predict_batch;
use dppl_core::data::{
    apply_imbalance, load_dataset, load_embeddings, median_of_counts, write_embeddings,
    write_labels, EmbeddingFormat, EmbeddingMatrix, ImbalanceSpec, LabeledDataset,
};
use dppl_core::eval::{
    accuracy_breakdown, minority_accuracy, run_sweep, sweep_csv, EvalReport, SweepGrid,
    REPORT_VERSION,
};
use dppl_core::mean::{
    coinpress_all, dppl_mean_all, pool_matrix, CoinPressConfig, MeanConfig, MeanDiagnostics,
};
use dppl_core::privacy::{exp_mech_zcdp, pure_dp_to_zcdp, zcdp_to_pure_dp_equivalent};
use dppl_core::prototype::{Provenance, PrototypeSet};
use dppl_core::select::{select_all_classes, SelectConfig};
use dppl_core::Error;

#[derive(Parser)]
#[command(
    name = "dppl",
    version,
    about = "Differentially private prototype learning over embedding vectors"
)]
struct Cli {
    /// Cap on worker threads. Results are independent of the cap.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Subsample a dataset onto the exponential long-tail profile
    Imbalance(ImbalanceArgs),
    /// Noisy clipped-mean prototypes (Gaussian mechanism, zCDP)
    ProtosMean(ProtosMeanArgs),
    /// Iterative private mean prototypes with divergence diagnostics
    ProtosCoinpress(ProtosCoinpressArgs),
    /// Select public candidates as prototypes (exponential mechanism, pure DP)
    ProtosPublic(ProtosPublicArgs),
    /// Label embeddings by nearest prototype
    Classify(ClassifyArgs),
    /// Score a prototype file on a labeled test set
    Eval(EvalArgs),
    /// Run a budget grid and summarize it as CSV
    Sweep(SweepArgs),
    /// Privacy budget conversions
    #[command(subcommand)]
    Budget(BudgetCmd),
}

#[derive(Args)]
struct ImbalanceArgs {
    /// Imbalance ratio: largest class size over smallest
    #[arg(long)]
    ir: f64,
    /// Largest-class target size; defaults to the largest input class
    #[arg(long = "n-max")]
    n_max: Option<u64>,
    /// Seed for within-class subsampling
    #[arg(long)]
    seed: u64,
    /// Input embeddings (binary or CSV)
    #[arg(long = "in")]
    input: PathBuf,
    /// Input label file
    #[arg(long)]
    labels: PathBuf,
    /// Output prefix; writes <prefix>.emb and <prefix>.lbl
    #[arg(long = "out-prefix")]
    out_prefix: PathBuf,
}

#[derive(Args)]
struct ProtosMeanArgs {
    /// zCDP budget per class
    #[arg(long)]
    rho: f64,
    /// Clip radius in the pooled space
    #[arg(long)]
    clip: f64,
    /// Average-pooling kernel size (1 disables pooling)
    #[arg(long, default_value_t = 1)]
    pool: usize,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Output prototype file (JSON sidecar written next to it)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ProtosCoinpressArgs {
    /// Total zCDP budget per class across all steps
    #[arg(long)]
    rho: f64,
    #[arg(long, default_value_t = 10)]
    steps: usize,
    /// Initial radius; defaults to sqrt(d)
    #[arg(long)]
    r0: Option<f64>,
    /// Tail quantile for the per-step confidence radius
    #[arg(long, default_value_t = 0.99)]
    quantile: f64,
    /// Comma-separated per-step budget fractions summing to 1
    #[arg(long, value_delimiter = ',')]
    fractions: Option<Vec<f64>>,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also write the per-class diagnostics JSON to this path
    #[arg(long)]
    diagnostics: Option<PathBuf>,
}

#[derive(Args)]
struct ProtosPublicArgs {
    /// Pure-DP budget per class
    #[arg(long)]
    epsilon: f64,
    /// Lower clip bound on the shifted cosine
    #[arg(long, default_value_t = 0.0)]
    dmin: f64,
    /// Upper clip bound on the shifted cosine
    #[arg(long, default_value_t = 2.0)]
    dmax: f64,
    /// Prototypes per class (joint top-K selection when above 1)
    #[arg(long, default_value_t = 1)]
    k: usize,
    /// Private embeddings
    #[arg(long)]
    private: PathBuf,
    /// Labels for the private embeddings
    #[arg(long)]
    labels: PathBuf,
    /// Public candidate embeddings
    #[arg(long)]
    public: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(long)]
    protos: PathBuf,
    /// Embeddings to label
    #[arg(long = "in")]
    input: PathBuf,
    /// Output CSV of predicted labels, one per line
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    protos: PathBuf,
    /// Test embeddings
    #[arg(long)]
    test: PathBuf,
    #[arg(long = "test-labels")]
    test_labels: PathBuf,
    /// JSON array of per-class training sizes, enables minority metrics
    #[arg(long = "train-sizes")]
    train_sizes: Option<PathBuf>,
    /// Output report JSON
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep grid JSON: data source, method grids, seeds
    #[arg(long)]
    grid: PathBuf,
    /// Directory for per-point reports and summary.csv
    #[arg(long = "out-dir")]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum BudgetCmd {
    /// Convert a budget value between privacy notions
    Convert(ConvertArgs),
    /// zCDP cost of one exponential-mechanism invocation at epsilon
    ExpMech(ExpMechArgs),
}

#[derive(Args)]
struct ConvertArgs {
    #[arg(long)]
    from: BudgetKind,
    #[arg(long)]
    to: BudgetKind,
    #[arg(long)]
    value: f64,
}

#[derive(Args)]
struct ExpMechArgs {
    #[arg(long)]
    epsilon: f64,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum BudgetKind {
    PureDp,
    Zcdp,
}

impl BudgetKind {
    fn name(self) -> &'static str {
        match self {
            BudgetKind::PureDp => "pure-dp",
            BudgetKind::Zcdp => "zcdp",
        }
    }
}

enum CliError {
    /// Bad flag value; exit 2. The message names the flag.
    Usage(String),
    /// Failure while running; exit 1. The message names the stage.
    Runtime(Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::Runtime(e) => write!(f, "{e}"),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

/// Maps a config validation error to a usage error naming the CLI flag.
fn usage(e: Error) -> CliError {
    match e {
        Error::InvalidParameter { name, detail } => {
            CliError::Usage(format!("invalid value for {}: {detail}", flag_for(name)))
        }
        other => CliError::Usage(other.to_string()),
    }
}

fn flag_for(name: &str) -> String {
    let flag = match name {
        "clip_radius" => "clip",
        "k_pool" => "pool",
        "d_min" => "dmin",
        "d_max" => "dmax",
        "tail_quantile" => "quantile",
        "budget_fractions" => "fractions",
        "n_max" => "n-max",
        other => other,
    };
    format!("--{flag}")
}

fn stage(label: &'static str) -> impl Fn(Error) -> CliError {
    move |e| CliError::Runtime(e.at_stage(label))
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Binary embedding files start with their magic; anything else is CSV.
fn detect_format(path: &Path) -> Result<EmbeddingFormat, Error> {
    let mut file = std::fs::File::open(path).map_err(|e| io_error(path, e))?;
    let mut magic = [0u8; 8];
    match file.read_exact(&mut magic) {
        Ok(()) if &magic == b"DPPLEMB1" => Ok(EmbeddingFormat::Binary),
        _ => Ok(EmbeddingFormat::Csv),
    }
}

fn load_input_dataset(emb: &Path, labels: &Path) -> Result<LabeledDataset, Error> {
    let format = detect_format(emb)?;
    load_dataset(emb, labels, format)
}

fn load_input_embeddings(path: &Path) -> Result<EmbeddingMatrix, Error> {
    let format = detect_format(path)?;
    load_embeddings(path, format)
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| stage("write-output")(io_error(path, e)))
}

fn print_json<T: Serialize>(value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Runtime(Error::Ledger(format!("serialization failed: {e}"))))?;
    println!("{text}");
    Ok(())
}

fn provenance_name(p: &Provenance) -> &'static str {
    match p {
        Provenance::DpMean => "dp-mean",
        Provenance::DpPublic => "dp-public",
        Provenance::CoinPress => "coinpress",
        Provenance::NonPrivate => "non-private",
    }
}

fn cmd_imbalance(args: ImbalanceArgs) -> CliResult<()> {
    let ds = load_input_dataset(&args.input, &args.labels).map_err(stage("load-data"))?;
    let n_max = args
        .n_max
        .or_else(|| ds.class_counts().into_iter().max())
        .unwrap_or(0);
    let spec = ImbalanceSpec {
        ir: args.ir,
        classes: ds.num_classes,
        n_max,
        seed: args.seed,
    };
    spec.validate().map_err(usage)?;

    let tail = apply_imbalance(&ds, &spec).map_err(stage("imbalance"))?;
    let sizes = tail.class_counts();
    let median = median_of_counts(&sizes).map_err(stage("imbalance"))?;

    let emb_path = args.out_prefix.with_extension("emb");
    let lbl_path = args.out_prefix.with_extension("lbl");
    write_embeddings(&emb_path, &tail.embeddings, EmbeddingFormat::Binary)
        .map_err(stage("write-output"))?;
    write_labels(&lbl_path, &tail.labels, tail.num_classes).map_err(stage("write-output"))?;

    print_json(&serde_json::json!({
        "out_embeddings": emb_path,
        "out_labels": lbl_path,
        "classes": tail.num_classes,
        "ir": spec.ir,
        "n_max": spec.n_max,
        "sizes": sizes,
        "median": median,
        "min": sizes.iter().min(),
    }))?;
    eprintln!(
        "subsampled {} rows over {} classes (median {median}, min {})",
        tail.labels.len(),
        tail.num_classes,
        sizes.iter().min().unwrap_or(&0)
    );
    Ok(())
}

fn cmd_protos_mean(args: ProtosMeanArgs) -> CliResult<()> {
    let cfg = MeanConfig {
        rho: args.rho,
        clip_radius: args.clip,
        k_pool: args.pool,
    };
    cfg.validate().map_err(usage)?;

    let ds = load_input_dataset(&args.input, &args.labels).map_err(stage("load-data"))?;
    let set = dppl_mean_all(&ds, &cfg, args.seed).map_err(stage("prototype"))?;
    let budget = set
        .ledger
        .compose_parallel()
        .map_err(stage("prototype"))?
        .total;
    set.write(&args.out).map_err(stage("write-output"))?;

    print_json(&serde_json::json!({
        "out": args.out,
        "classes": set.num_classes(),
        "dim": set.d(),
        "pool": set.pool,
        "budget": budget,
    }))?;
    eprintln!(
        "wrote {} mean prototypes of dim {} ({} zCDP per class)",
        set.num_classes(),
        set.d(),
        args.rho
    );
    Ok(())
}

#[derive(Serialize)]
struct DiagnosticsRow {
    class: u32,
    #[serde(flatten)]
    diagnostics: MeanDiagnostics,
}

fn cmd_protos_coinpress(args: ProtosCoinpressArgs) -> CliResult<()> {
    let mut cfg = CoinPressConfig::new(args.rho);
    cfg.steps = args.steps;
    cfg.r0 = args.r0;
    cfg.tail_quantile = args.quantile;
    cfg.budget_fractions = args.fractions.clone();
    cfg.validate().map_err(usage)?;

    let ds = load_input_dataset(&args.input, &args.labels).map_err(stage("load-data"))?;
    let (set, diags) = coinpress_all(&ds, &cfg, args.seed).map_err(stage("prototype"))?;
    let budget = set
        .ledger
        .compose_parallel()
        .map_err(stage("prototype"))?
        .total;

    let rows: Vec<DiagnosticsRow> = diags
        .into_iter()
        .enumerate()
        .map(|(c, diagnostics)| DiagnosticsRow {
            class: c as u32,
            diagnostics,
        })
        .collect();
    let diverged: Vec<u32> = rows
        .iter()
        .filter(|r| r.diagnostics.diverged)
        .map(|r| r.class)
        .collect();

    set.write(&args.out).map_err(stage("write-output"))?;
    if let Some(path) = &args.diagnostics {
        let text = serde_json::to_string_pretty(&rows)
            .map_err(|e| CliError::Runtime(Error::Ledger(format!("serialization failed: {e}"))))?;
        write_text(path, &format!("{text}\n"))?;
    }

    print_json(&serde_json::json!({
        "out": args.out,
        "classes": set.num_classes(),
        "dim": set.d(),
        "budget": budget,
        "diverged_classes": diverged,
        "diagnostics": rows,
    }))?;
    eprintln!(
        "wrote {} iterative mean prototypes ({} classes diverged)",
        set.num_classes(),
        diverged.len()
    );
    Ok(())
}

fn cmd_protos_public(args: ProtosPublicArgs) -> CliResult<()> {
    let cfg = SelectConfig {
        epsilon: args.epsilon,
        d_min: args.dmin,
        d_max: args.dmax,
        k: args.k,
    };
    cfg.validate().map_err(usage)?;

    let ds = load_input_dataset(&args.private, &args.labels).map_err(stage("load-data"))?;
    let public = load_input_embeddings(&args.public).map_err(stage("load-data"))?;
    let set = select_all_classes(&ds, &public, &cfg, args.seed).map_err(stage("prototype"))?;
    let budget = set
        .ledger
        .compose_parallel()
        .map_err(stage("prototype"))?
        .total;
    set.write(&args.out).map_err(stage("write-output"))?;

    print_json(&serde_json::json!({
        "out": args.out,
        "classes": set.num_classes(),
        "k": set.k(),
        "candidates": public.n(),
        "selected": set.candidate_ids,
        "budget": budget,
    }))?;
    eprintln!(
        "selected {} of {} public candidates per class (epsilon {})",
        set.k(),
        public.n(),
        args.epsilon
    );
    Ok(())
}

fn cmd_classify(args: ClassifyArgs) -> CliResult<()> {
    let protos = PrototypeSet::load(&args.protos).map_err(stage("load-protos"))?;
    let matrix = load_input_embeddings(&args.input).map_err(stage("load-data"))?;
    let queries = pool_matrix(&matrix, protos.pool).map_err(stage("predict"))?;
    let pred = predict_batch(&queries, &protos).map_err(stage("predict"))?;

    let mut csv = String::with_capacity(pred.len() * 4);
    for label in &pred {
        csv.push_str(&label.to_string());
        csv.push('\n');
    }
    write_text(&args.out, &csv)?;

    print_json(&serde_json::json!({ "out": args.out, "rows": pred.len() }))?;
    eprintln!("labeled {} rows with {} prototypes", pred.len(), protos.num_classes());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> CliResult<()> {
    let protos = PrototypeSet::load(&args.protos).map_err(stage("load-protos"))?;
    let test = load_input_dataset(&args.test, &args.test_labels).map_err(stage("load-data"))?;
    if test.num_classes != protos.num_classes() {
        return Err(stage("load-data")(Error::DimensionMismatch(format!(
            "test labels cover {} classes, prototypes {}",
            test.num_classes,
            protos.num_classes()
        ))));
    }
    let train_sizes: Option<Vec<u64>> = match &args.train_sizes {
        Some(path) => {
            let raw = std::fs::read_to_string(path)
                .map_err(|e| stage("load-data")(io_error(path, e)))?;
            let sizes: Vec<u64> = serde_json::from_str(&raw).map_err(|e| {
                stage("load-data")(Error::FileFormat {
                    path: path.display().to_string(),
                    detail: format!("expected a JSON array of class sizes: {e}"),
                })
            })?;
            if sizes.len() != protos.num_classes() as usize {
                return Err(stage("load-data")(Error::DimensionMismatch(format!(
                    "{} training sizes for {} classes",
                    sizes.len(),
                    protos.num_classes()
                ))));
            }
            Some(sizes)
        }
        None => None,
    };

    let queries = pool_matrix(&test.embeddings, protos.pool).map_err(stage("predict"))?;
    let pred = predict_batch(&queries, &protos).map_err(stage("predict"))?;
    let breakdown = accuracy_breakdown(&pred, &test.labels, test.num_classes)
        .map_err(stage("metrics"))?;
    let minority = match &train_sizes {
        Some(sizes) if sizes.len() >= 4 => Some(
            minority_accuracy(&pred, &test.labels, sizes).map_err(stage("metrics"))?,
        ),
        _ => None,
    };
    let budget = if protos.ledger.entries.is_empty() {
        None
    } else {
        Some(
            protos
                .ledger
                .compose_parallel()
                .map_err(stage("metrics"))?
                .total,
        )
    };
    let mut seeds: Vec<u64> = protos.reports.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();

    let report = EvalReport {
        format: REPORT_VERSION.to_string(),
        method: provenance_name(&protos.provenance).to_string(),
        balanced_accuracy: breakdown.balanced,
        per_class_accuracy: breakdown.per_class,
        absent_classes: breakdown.absent_classes,
        minority_accuracy: minority,
        budget,
        seeds,
        config: serde_json::json!({
            "protos": args.protos,
            "test": args.test,
            "test_labels": args.test_labels,
            "train_sizes": train_sizes,
        }),
    };
    let text = report.to_json().map_err(CliError::Runtime)?;
    write_text(&args.out, &format!("{text}\n"))?;
    println!("{text}");
    eprintln!(
        "balanced accuracy {:.4} over {} classes",
        report.balanced_accuracy,
        protos.num_classes()
    );
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> CliResult<()> {
    let raw = std::fs::read_to_string(&args.grid)
        .map_err(|e| stage("load-grid")(io_error(&args.grid, e)))?;
    let grid: SweepGrid = serde_json::from_str(&raw).map_err(|e| {
        stage("load-grid")(Error::FileFormat {
            path: args.grid.display().to_string(),
            detail: format!("invalid sweep grid: {e}"),
        })
    })?;

    let results = run_sweep(&grid).map_err(stage("sweep"))?;

    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| stage("write-output")(io_error(&args.out_dir, e)))?;
    for (i, (row, report)) in results.iter().enumerate() {
        let name = format!(
            "report-{i:03}-{}-{}-seed{}.json",
            row.method, row.eps_or_rho, row.seed
        );
        let text = report.to_json().map_err(CliError::Runtime)?;
        write_text(&args.out_dir.join(name), &format!("{text}\n"))?;
    }
    let rows: Vec<_> = results.iter().map(|(row, _)| row.clone()).collect();
    let csv = sweep_csv(&rows);
    write_text(&args.out_dir.join("summary.csv"), &csv)?;

    print!("{csv}");
    eprintln!(
        "ran {} grid points, reports in {}",
        results.len(),
        args.out_dir.display()
    );
    Ok(())
}

fn cmd_budget(cmd: BudgetCmd) -> CliResult<()> {
    let bad_value = |flag: &str| {
        CliError::Usage(format!(
            "invalid value for --{flag}: must be a positive finite number"
        ))
    };
    match cmd {
        BudgetCmd::Convert(args) => {
            let (output, formula) = match (args.from, args.to) {
                (BudgetKind::PureDp, BudgetKind::Zcdp) => (
                    pure_dp_to_zcdp(args.value).map_err(|_| bad_value("value"))?,
                    "rho = epsilon^2 / 2",
                ),
                (BudgetKind::Zcdp, BudgetKind::PureDp) => (
                    zcdp_to_pure_dp_equivalent(args.value).map_err(|_| bad_value("value"))?,
                    "epsilon = sqrt(2 * rho)",
                ),
                _ => {
                    if !(args.value.is_finite() && args.value > 0.0) {
                        return Err(bad_value("value"));
                    }
                    (args.value, "identity")
                }
            };
            print_json(&serde_json::json!({
                "from": args.from.name(),
                "to": args.to.name(),
                "input": args.value,
                "output": output,
                "formula": formula,
            }))
        }
        BudgetCmd::ExpMech(args) => {
            let rho = exp_mech_zcdp(args.epsilon).map_err(|_| bad_value("epsilon"))?;
            print_json(&serde_json::json!({
                "from": "pure-dp",
                "to": "zcdp",
                "input": args.epsilon,
                "output": rho,
                "formula": "rho = epsilon^2 / 8",
            }))
        }
    }
}

fn run(command: Cmd) -> CliResult<()> {
    match command {
        Cmd::Imbalance(args) => cmd_imbalance(args),
        Cmd::ProtosMean(args) => cmd_protos_mean(args),
        Cmd::ProtosCoinpress(args) => cmd_protos_coinpress(args),
        Cmd::ProtosPublic(args) => cmd_protos_public(args),
        Cmd::Classify(args) => cmd_classify(args),
        Cmd::Eval(args) => cmd_eval(args),
        Cmd::Sweep(args) => cmd_sweep(args),
        Cmd::Budget(cmd) => cmd_budget(cmd),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let kind = e.kind();
            let _ = e.print();
            if matches!(kind, ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                return ExitCode::SUCCESS;
            }
            if kind == ErrorKind::InvalidSubcommand {
                eprintln!(
                    "subcommands: imbalance, protos-mean, protos-coinpress, protos-public, \
                     classify, eval, sweep, budget"
                );
            }
            return ExitCode::from(2);
        }
    };

    if let Some(threads) = cli.threads {
        if threads == 0 {
            eprintln!("error: invalid value for --threads: must be at least 1");
            return ExitCode::from(2);
        }
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }

    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
