//! `spgd` — command-line driver for sparse separated-representation
//! regression: dataset ingestion, fitting, prediction, benchmark runs,
//! anchored-decomposition fits, and Lorenz system identification.
//!
//! Exit codes: 0 success, 1 usage / I-O / parse error, 2 fit failure
//! (rank-0 model or numerical breakdown), 3 benchmark acceptance failure.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};

use spgd::benchmarks::{
    self, eval_case_function, fit_case_models, integrate_lorenz, relative_l2_error,
    run_case, run_lorenz_identification, simulate_identified, slice_csv, CaseId, LorenzConfig,
    RunOptions, SINDY_FEATURE_NAMES,
};
use spgd::fit::{
    fit, fit_s2pgd_dimension_scan, log_grid, Dataset, FitConfig, FitError, Method, Selection,
    SparseDims,
};
use spgd::model::SeparatedModel;
use spgd::sampling::{self, CrossPlan};

const EXIT_USAGE: u8 = 1;
const EXIT_FIT: u8 = 2;
const EXIT_ACCEPTANCE: u8 = 3;

struct CliError {
    code: u8,
    msg: String,
}

impl CliError {
    fn usage(msg: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, msg: msg.into() }
    }

    fn fit_failure(msg: impl Into<String>) -> Self {
        Self { code: EXIT_FIT, msg: msg.into() }
    }

    fn acceptance(msg: impl Into<String>) -> Self {
        Self { code: EXIT_ACCEPTANCE, msg: msg.into() }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser)]
#[command(
    name = "spgd",
    about = "Sparse separated-representation regression toolkit",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a separated model to a CSV dataset
    Fit(FitArgs),
    /// Evaluate a fitted model on new points
    Predict(PredictArgs),
    /// Run the built-in benchmark cases
    Benchmark(BenchmarkArgs),
    /// Fit an anchored decomposition (univariate splines + coupling term)
    Anova(AnovaArgs),
    /// Identify the Lorenz system from trajectory samples
    Sindy(SindyArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    let result = match cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Benchmark(a) => cmd_benchmark(a),
        Command::Anova(a) => cmd_anova(a),
        Command::Sindy(a) => cmd_sindy(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.msg);
            ExitCode::from(e.code)
        }
    }
}

// ---------------------------------------------------------------------------
// CSV dataset layer
// ---------------------------------------------------------------------------

/// Parsed CSV table: header names plus numeric rows. A zero-byte or
/// whitespace-only file parses as a table with no header and no rows.
struct Table {
    headers: Vec<String>,
    rows: Vec<Vec<f64>>,
}

fn read_table(path: &Path) -> CliResult<Table> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
    if text.trim().is_empty() {
        return Ok(Table { headers: Vec::new(), rows: Vec::new() });
    }
    let mut lines = text.lines().enumerate();
    let (_, header_line) = lines.next().expect("non-empty text has a first line");
    let headers: Vec<String> = header_line.split(',').map(|h| h.trim().to_string()).collect();
    let mut rows = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != headers.len() {
            return Err(CliError::usage(format!(
                "{}: line {}: expected {} comma-separated fields, found {}",
                path.display(),
                idx + 1,
                headers.len(),
                fields.len()
            )));
        }
        let mut row = Vec::with_capacity(fields.len());
        for (col, field) in fields.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                CliError::usage(format!(
                    "{}: line {}: column '{}' has non-numeric value '{}'",
                    path.display(),
                    idx + 1,
                    headers[col],
                    field.trim()
                ))
            })?;
            row.push(v);
        }
        rows.push(row);
    }
    Ok(Table { headers, rows })
}

/// Validates the `s1..sd[,f]` header convention; returns (d, has_f_column).
fn check_headers(table: &Table, path: &Path) -> CliResult<(usize, bool)> {
    if table.headers.is_empty() {
        return Err(CliError::usage(format!("{}: missing header row", path.display())));
    }
    let has_f = table.headers.last().map(|h| h == "f").unwrap_or(false);
    let d = table.headers.len() - usize::from(has_f);
    if d == 0 {
        return Err(CliError::usage(format!(
            "{}: header must contain at least one coordinate column s1..sd",
            path.display()
        )));
    }
    for (i, h) in table.headers.iter().take(d).enumerate() {
        let expected = format!("s{}", i + 1);
        if *h != expected {
            return Err(CliError::usage(format!(
                "{}: header column {} is '{}', expected '{}' (convention: s1..sd followed by an optional 'f')",
                path.display(),
                i + 1,
                h,
                expected
            )));
        }
    }
    Ok((d, has_f))
}

fn points_matrix(table: &Table, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(table.rows.len(), d, |i, j| table.rows[i][j])
}

fn write_file(path: &Path, content: &str) -> CliResult {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)
                .map_err(|e| CliError::usage(format!("cannot create {}: {e}", dir.display())))?;
        }
    }
    std::fs::write(path, content)
        .map_err(|e| CliError::usage(format!("cannot write {}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

#[derive(Args)]
struct FitArgs {
    /// Training CSV with header s1..sd,f
    #[arg(long)]
    data: Option<PathBuf>,
    /// Optional config file (flat `key = value` lines, keys match flag names;
    /// command-line flags override file values)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Fitting method: spgd | rspgd | s2pgd
    #[arg(long)]
    method: Option<String>,
    /// Initial polynomial degree of the adaptivity schedule
    #[arg(long = "degree-init")]
    degree_init: Option<usize>,
    /// Maximum polynomial degree of the adaptivity schedule
    #[arg(long = "degree-max")]
    degree_max: Option<usize>,
    /// Elastic-Net mixing value or comma-separated candidate grid (rspgd)
    #[arg(long)]
    alpha: Option<String>,
    /// Penalty grid: "log:LO:HI:N" (geometric) or "v1,v2,..." — values are
    /// relative to the per-enrichment lambda_max
    #[arg(long = "lambda-grid")]
    lambda_grid: Option<String>,
    /// Penalty selection: cv:K | split:R | one-se:K
    #[arg(long)]
    select: Option<String>,
    /// s2pgd penalized dimensions: "auto" or a comma list of 1-based indices
    #[arg(long = "sparse-dims")]
    sparse_dims: Option<String>,
    /// Fixed basis degree in penalized dimensions (s2pgd)
    #[arg(long = "sparse-degree")]
    sparse_degree: Option<usize>,
    /// Per-dimension caps on nonzero coefficients, comma list (s2pgd)
    #[arg(long = "chi-lim")]
    chi_lim: Option<String>,
    /// Maximum number of enrichment modes
    #[arg(long = "max-modes")]
    max_modes: Option<usize>,
    /// RNG seed (cross-validation shuffles, multi-start initializations)
    #[arg(long)]
    seed: Option<u64>,
    /// Output path for the fitted model JSON
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output path for the fit report JSON
    #[arg(long)]
    report: Option<PathBuf>,
}

const CONFIG_KEYS: &[&str] = &[
    "data", "method", "degree-init", "degree-max", "alpha", "lambda-grid", "select",
    "sparse-dims", "sparse-degree", "chi-lim", "max-modes", "seed", "out", "report",
];

fn read_config_file(path: &Path) -> CliResult<HashMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
    let mut map = HashMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::usage(format!(
                "{}: line {}: expected 'key = value'",
                path.display(),
                idx + 1
            ))
        })?;
        let key = key.trim().to_string();
        if !CONFIG_KEYS.contains(&key.as_str()) {
            return Err(CliError::usage(format!(
                "{}: line {}: unknown key '{}' (valid keys: {})",
                path.display(),
                idx + 1,
                key,
                CONFIG_KEYS.join(", ")
            )));
        }
        map.insert(key, value.trim().to_string());
    }
    Ok(map)
}

/// Flag value if given, else the config-file value parsed with `FromStr`.
fn merged<T: FromStr>(
    flag: Option<T>,
    file: &HashMap<String, String>,
    key: &str,
) -> CliResult<Option<T>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match file.get(key) {
        Some(raw) => raw
            .parse::<T>()
            .map(Some)
            .map_err(|_| CliError::usage(format!("config key '{key}': invalid value '{raw}'"))),
        None => Ok(None),
    }
}

fn parse_lambda_spec(s: &str) -> CliResult<Vec<f64>> {
    if let Some(rest) = s.strip_prefix("log:") {
        let parts: Vec<&str> = rest.split(':').collect();
        if parts.len() != 3 {
            return Err(CliError::usage(format!(
                "lambda grid '{s}': expected log:LO:HI:N"
            )));
        }
        let lo: f64 = parts[0]
            .parse()
            .map_err(|_| CliError::usage(format!("lambda grid '{s}': bad LO '{}'", parts[0])))?;
        let hi: f64 = parts[1]
            .parse()
            .map_err(|_| CliError::usage(format!("lambda grid '{s}': bad HI '{}'", parts[1])))?;
        let n: usize = parts[2]
            .parse()
            .map_err(|_| CliError::usage(format!("lambda grid '{s}': bad N '{}'", parts[2])))?;
        if !(lo > 0.0 && hi >= lo && n >= 1) {
            return Err(CliError::usage(format!(
                "lambda grid '{s}': need 0 < LO <= HI and N >= 1"
            )));
        }
        Ok(log_grid(lo, hi, n))
    } else {
        parse_f64_list(s).map_err(|e| CliError::usage(format!("lambda grid '{s}': {e}")))
    }
}

fn parse_f64_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| format!("bad number '{}'", v.trim())))
        .collect()
}

fn parse_usize_list(s: &str) -> Result<Vec<usize>, String> {
    s.split(',')
        .map(|v| v.trim().parse::<usize>().map_err(|_| format!("bad integer '{}'", v.trim())))
        .collect()
}

fn parse_select(s: &str) -> CliResult<Selection> {
    let err = || {
        CliError::usage(format!(
            "selection '{s}': expected cv:K, split:R, or one-se:K"
        ))
    };
    let (kind, arg) = s.split_once(':').ok_or_else(err)?;
    match kind {
        "cv" => arg.parse().map(Selection::KFold).map_err(|_| err()),
        "one-se" => arg.parse().map(Selection::OneSeKFold).map_err(|_| err()),
        "split" => arg.parse().map(Selection::Split).map_err(|_| err()),
        _ => Err(err()),
    }
}

/// 1-based dimension list ("auto" for a scan); mirrors the s1..sd headers.
fn parse_sparse_dims(s: &str, d: usize) -> CliResult<SparseDims> {
    if s == "auto" {
        return Ok(SparseDims::Auto);
    }
    let dims = parse_usize_list(s).map_err(|e| CliError::usage(format!("sparse dims '{s}': {e}")))?;
    let mut zero_based = Vec::with_capacity(dims.len());
    for dim in dims {
        if dim == 0 || dim > d {
            return Err(CliError::usage(format!(
                "sparse dims '{s}': dimension {dim} out of range 1..={d}"
            )));
        }
        zero_based.push(dim - 1);
    }
    Ok(SparseDims::Dims(zero_based))
}

/// Bounding box of the data, column by column; degenerate columns are padded
/// so every interval has positive width.
fn infer_domain(points: &DMatrix<f64>) -> Vec<(f64, f64)> {
    (0..points.ncols())
        .map(|j| {
            let col = points.column(j);
            let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if lo < hi {
                (lo, hi)
            } else {
                (lo - 0.5, hi + 0.5)
            }
        })
        .collect()
}

fn map_fit_error(e: FitError) -> CliError {
    match e {
        FitError::InvalidConfig(_) | FitError::InvalidDataset(_) => CliError::usage(e.to_string()),
        other => CliError::fit_failure(other.to_string()),
    }
}

fn cmd_fit(args: FitArgs) -> CliResult {
    let file = match &args.config {
        Some(path) => read_config_file(path)?,
        None => HashMap::new(),
    };
    let data_path = merged(args.data, &file, "data")?
        .ok_or_else(|| CliError::usage("--data (or a 'data' config key) is required"))?;
    let table = read_table(&data_path)?;
    let (d, has_f) = check_headers(&table, &data_path)?;
    if !has_f {
        return Err(CliError::usage(format!(
            "{}: fitting requires a trailing 'f' target column",
            data_path.display()
        )));
    }
    if table.rows.is_empty() {
        return Err(CliError::usage(format!("{}: no data rows", data_path.display())));
    }
    let points = points_matrix(&table, d);
    let targets = DVector::from_iterator(table.rows.len(), table.rows.iter().map(|r| r[d]));
    let domain = infer_domain(&points);
    let dataset = Dataset::new(points, targets, domain).map_err(map_fit_error)?;

    let mut cfg = FitConfig::default();
    if let Some(m) = merged::<String>(args.method, &file, "method")? {
        cfg.method = m.parse().map_err(CliError::usage)?;
    }
    if let Some(v) = merged(args.degree_init, &file, "degree-init")? {
        cfg.mas.initial_degree = v;
    }
    if let Some(v) = merged(args.degree_max, &file, "degree-max")? {
        cfg.mas.max_degree = v;
    }
    if let Some(s) = merged::<String>(args.alpha, &file, "alpha")? {
        cfg.alpha = parse_f64_list(&s).map_err(|e| CliError::usage(format!("alpha '{s}': {e}")))?;
    }
    if let Some(s) = merged::<String>(args.lambda_grid, &file, "lambda-grid")? {
        cfg.lambda_grid = parse_lambda_spec(&s)?;
    }
    if let Some(s) = merged::<String>(args.select, &file, "select")? {
        cfg.selection = parse_select(&s)?;
    }
    if let Some(s) = merged::<String>(args.sparse_dims, &file, "sparse-dims")? {
        cfg.sparse_dims = Some(parse_sparse_dims(&s, d)?);
    }
    if let Some(v) = merged(args.sparse_degree, &file, "sparse-degree")? {
        cfg.sparse_degree = Some(v);
    }
    if let Some(s) = merged::<String>(args.chi_lim, &file, "chi-lim")? {
        let caps =
            parse_usize_list(&s).map_err(|e| CliError::usage(format!("chi-lim '{s}': {e}")))?;
        if caps.len() != d {
            return Err(CliError::usage(format!(
                "chi-lim '{s}': expected {d} entries, one per dimension"
            )));
        }
        cfg.chi_lim = Some(caps);
    }
    if let Some(v) = merged(args.max_modes, &file, "max-modes")? {
        cfg.max_modes = v;
    }
    if let Some(v) = merged(args.seed, &file, "seed")? {
        cfg.seed = v;
    }
    if cfg.method == Method::S2pgd && cfg.sparse_dims.is_none() {
        cfg.sparse_dims = Some(SparseDims::Auto);
    }

    let (model, report) = if cfg.method == Method::S2pgd {
        let (m, r, _) = fit_s2pgd_dimension_scan(&dataset, &cfg).map_err(map_fit_error)?;
        (m, r)
    } else {
        fit(&dataset, &cfg).map_err(map_fit_error)?
    };
    if model.rank() == 0 {
        return Err(CliError::fit_failure(
            "no enrichment mode improved the held-out error; the fitted model has rank 0",
        ));
    }

    println!(
        "fitted {} model: rank {}, training error {:.6e}",
        report.method,
        report.rank,
        report.training_error
    );
    if let Some(p) = report.penalized_dim {
        println!("penalized dimension: {p}");
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let out = merged(args.out, &file, "out")?;
    if let Some(path) = out {
        write_file(&path, &model.to_json())?;
        println!("model written to {}", path.display());
    }
    let report_path = merged(args.report, &file, "report")?;
    if let Some(path) = report_path {
        write_file(&path, &report.to_json())?;
        println!("report written to {}", path.display());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------------

#[derive(Args)]
struct PredictArgs {
    /// Fitted model JSON (written by `spgd fit --out`)
    #[arg(long)]
    model: PathBuf,
    /// Input CSV with header s1..sd and an optional trailing f column
    #[arg(long)]
    data: PathBuf,
    /// Output CSV: the input columns plus f_pred
    #[arg(long)]
    out: PathBuf,
}

fn cmd_predict(args: PredictArgs) -> CliResult {
    let text = std::fs::read_to_string(&args.model)
        .map_err(|e| CliError::usage(format!("cannot read {}: {e}", args.model.display())))?;
    let model = SeparatedModel::from_json(&text)
        .map_err(|e| CliError::usage(format!("{}: {e}", args.model.display())))?;
    let table = read_table(&args.data)?;
    if table.headers.is_empty() {
        write_file(&args.out, "")?;
        println!("0 predictions written to {}", args.out.display());
        return Ok(());
    }
    let (d, has_f) = check_headers(&table, &args.data)?;
    if d != model.d {
        return Err(CliError::usage(format!(
            "model expects {} coordinates but {} has {d}",
            model.d,
            args.data.display()
        )));
    }
    let mut out = String::new();
    let _ = writeln!(out, "{},f_pred", table.headers.join(","));
    if table.rows.is_empty() {
        write_file(&args.out, &out)?;
        println!("0 predictions written to {}", args.out.display());
        return Ok(());
    }
    let points = points_matrix(&table, d);
    let preds = model
        .evaluate_batch(&points)
        .map_err(|e| CliError::usage(e.to_string()))?;
    for (i, row) in table.rows.iter().enumerate() {
        let fields: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "{},{}", fields.join(","), preds[i]);
    }
    write_file(&args.out, &out)?;
    println!("{} predictions written to {}", table.rows.len(), args.out.display());
    if has_f {
        let truth = DVector::from_iterator(table.rows.len(), table.rows.iter().map(|r| r[d]));
        match relative_l2_error(&truth, &preds) {
            Ok(err) => println!("relative_l2_error = {err:e}"),
            Err(_) => println!("relative_l2_error undefined (zero reference norm)"),
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// benchmark
// ---------------------------------------------------------------------------

#[derive(Args)]
struct BenchmarkArgs {
    /// Case id or "all"
    #[arg(long)]
    case: String,
    /// Seeds: comma list and/or inclusive ranges, e.g. "1..5" or "0,7,9"
    #[arg(long, default_value = "0")]
    seeds: String,
    /// Write the aggregate JSON report here
    #[arg(long)]
    out: Option<PathBuf>,
    /// Emit per-case slice CSVs (x, f_true, f_spgd, f_candidate) into this
    /// directory
    #[arg(long)]
    plots: Option<PathBuf>,
    /// Override the test-set size of the expensive cases
    #[arg(long = "test-points")]
    test_points: Option<usize>,
}

fn parse_seeds(s: &str) -> CliResult<Vec<u64>> {
    let mut seeds = Vec::new();
    for part in s.split(',') {
        let part = part.trim();
        if let Some((lo, hi)) = part.split_once("..") {
            let lo: u64 = lo
                .trim()
                .parse()
                .map_err(|_| CliError::usage(format!("seeds '{s}': bad range start '{lo}'")))?;
            let hi: u64 = hi
                .trim()
                .parse()
                .map_err(|_| CliError::usage(format!("seeds '{s}': bad range end '{hi}'")))?;
            if hi < lo {
                return Err(CliError::usage(format!("seeds '{s}': empty range {lo}..{hi}")));
            }
            seeds.extend(lo..=hi);
        } else {
            let v: u64 = part
                .parse()
                .map_err(|_| CliError::usage(format!("seeds '{s}': bad seed '{part}'")))?;
            seeds.push(v);
        }
    }
    if seeds.is_empty() {
        return Err(CliError::usage("at least one seed is required"));
    }
    Ok(seeds)
}

fn cmd_benchmark(args: BenchmarkArgs) -> CliResult {
    let cases: Vec<CaseId> = if args.case == "all" {
        CaseId::ALL.to_vec()
    } else {
        vec![args.case.parse().map_err(|e: benchmarks::BenchError| CliError::usage(e.to_string()))?]
    };
    let seeds = parse_seeds(&args.seeds)?;
    let opts = RunOptions { test_points: args.test_points };

    let mut reports = Vec::new();
    let mut all_pass = true;
    for &case in &cases {
        let report = run_case(case, &seeds, opts)
            .map_err(|e| CliError::usage(format!("{}: {e}", case.as_str())))?;
        println!(
            "{}: {} — median baseline {:.4}, median candidate {:.4}, reduction {:.1}% ({})",
            report.case,
            if report.pass { "PASS" } else { "FAIL" },
            median(&report.baseline_err),
            median(&report.candidate_err),
            report.reduction_pct,
            report.criterion
        );
        for w in &report.warnings {
            eprintln!("warning: {}: {w}", report.case);
        }
        all_pass &= report.pass;
        reports.push(report);
    }

    if let Some(path) = &args.out {
        let array: Vec<serde_json::Value> = reports
            .iter()
            .map(|r| serde_json::from_str(&r.to_json()).expect("report JSON is valid"))
            .collect();
        let json = serde_json::to_string_pretty(&array).expect("array serialization cannot fail");
        write_file(path, &json)?;
        println!("report written to {}", path.display());
    }

    if let Some(dir) = &args.plots {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::usage(format!("cannot create {}: {e}", dir.display())))?;
        for &case in &cases {
            let Some((baseline, candidate)) = fit_case_models(case, seeds[0])
                .map_err(|e| CliError::usage(format!("{}: {e}", case.as_str())))?
            else {
                continue;
            };
            let domain = case.domain().expect("model-producing cases have a box");
            let mid: Vec<f64> = domain.iter().map(|&(lo, hi)| 0.5 * (lo + hi)).collect();
            let csv = slice_csv(case, &baseline, &candidate, &mid, 0, 201)
                .map_err(|e| CliError::usage(format!("{}: {e}", case.as_str())))?;
            let path = dir.join(format!("{}_slice_s1.csv", case.as_str()));
            write_file(&path, &csv)?;
            println!("slice data written to {}", path.display());
        }
    }

    if all_pass {
        Ok(())
    } else {
        Err(CliError::acceptance("one or more benchmark cases failed their acceptance check"))
    }
}

fn median(xs: &[f64]) -> f64 {
    let mut s: Vec<f64> = xs.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    match s.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => s[n / 2],
        n => 0.5 * (s[n / 2 - 1] + s[n / 2]),
    }
}

// ---------------------------------------------------------------------------
// anova
// ---------------------------------------------------------------------------

#[derive(Args)]
struct AnovaArgs {
    /// Built-in case id with a closed-form target (e.g. anova_2d)
    #[arg(long, conflicts_with = "data")]
    case: Option<String>,
    /// CSV of pre-evaluated samples: first row = anchor, rows differing from
    /// the anchor in exactly one coordinate = cross arms, the rest = coupling
    /// points; requires a trailing f column
    #[arg(long)]
    data: Option<PathBuf>,
    /// Anchor point: "center" or a comma list of coordinates (case mode only)
    #[arg(long, default_value = "center")]
    anchor: String,
    /// Cross-arm sample counts per dimension (case mode only)
    #[arg(long = "cross-counts", default_value = "10,10")]
    cross_counts: String,
    /// Number of Latin-hypercube coupling samples (case mode only)
    #[arg(long = "coupling-points", default_value_t = 4)]
    coupling_points: usize,
    /// Polynomial degree of the pairwise coupling model
    #[arg(long = "coupling-degree", default_value_t = 2)]
    coupling_degree: usize,
    /// Estimate Sobol indices with this many Monte-Carlo samples
    #[arg(long)]
    sobol: Option<usize>,
    /// RNG seed for the coupling design and Sobol sampling
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path for the fitted decomposition JSON
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_anova(args: AnovaArgs) -> CliResult {
    let (mut model, domain) = match (&args.case, &args.data) {
        (Some(case), None) => anova_from_case(&args, case)?,
        (None, Some(path)) => anova_from_data(&args, path)?,
        _ => return Err(CliError::usage("exactly one of --case or --data is required")),
    };

    println!("anchored decomposition fitted: f0 = {:.6e}", model.f0);
    for w in &model.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(n) = args.sobol {
        let sobol = model.compute_sobol(&domain, n, args.seed).to_vec();
        let d = domain.len();
        for (k, s) in sobol.iter().take(d).enumerate() {
            println!("S_{} = {:.4}", k + 1, s);
        }
        if let Some(s) = sobol.get(d) {
            println!("S_coupling = {s:.4}");
        }
    }
    if let Some(path) = &args.out {
        write_file(path, &model.to_json())?;
        println!("model written to {}", path.display());
    }
    Ok(())
}

fn anova_from_case(
    args: &AnovaArgs,
    case: &str,
) -> CliResult<(spgd::anova::AnovaModel, Vec<(f64, f64)>)> {
    let id: CaseId = case
        .parse()
        .map_err(|e: benchmarks::BenchError| CliError::usage(e.to_string()))?;
    let domain = id
        .domain()
        .ok_or_else(|| CliError::usage(format!("{case} has no sampling box")))?;
    let d = domain.len();
    let anchor: Vec<f64> = if args.anchor == "center" {
        domain.iter().map(|&(lo, hi)| 0.5 * (lo + hi)).collect()
    } else {
        let a = parse_f64_list(&args.anchor)
            .map_err(|e| CliError::usage(format!("anchor '{}': {e}", args.anchor)))?;
        if a.len() != d {
            return Err(CliError::usage(format!(
                "anchor '{}': expected {d} coordinates",
                args.anchor
            )));
        }
        a
    };
    let counts = parse_usize_list(&args.cross_counts)
        .map_err(|e| CliError::usage(format!("cross counts '{}': {e}", args.cross_counts)))?;
    if counts.len() != d {
        return Err(CliError::usage(format!(
            "cross counts '{}': expected {d} entries",
            args.cross_counts
        )));
    }
    let plan = sampling::cross_plan(&anchor, &counts, &domain)
        .map_err(|e| CliError::usage(e.to_string()))?;
    let coupling = sampling::lhs(args.coupling_points, d, &domain, args.seed)
        .map_err(|e| CliError::usage(e.to_string()))?;
    let f = |p: &[f64]| {
        eval_case_function(id, p).expect("case sampling boxes exclude singular points")
    };
    let model = spgd::anova::fit_anova_pgd(f, &plan, &coupling.points, args.coupling_degree)
        .map_err(|e| CliError::fit_failure(e.to_string()))?;
    Ok((model, domain))
}

fn anova_from_data(
    args: &AnovaArgs,
    path: &Path,
) -> CliResult<(spgd::anova::AnovaModel, Vec<(f64, f64)>)> {
    let table = read_table(path)?;
    let (d, has_f) = check_headers(&table, path)?;
    if !has_f {
        return Err(CliError::usage(format!(
            "{}: anchored fitting requires a trailing 'f' column",
            path.display()
        )));
    }
    if table.rows.is_empty() {
        return Err(CliError::usage(format!("{}: no data rows", path.display())));
    }
    let anchor: Vec<f64> = table.rows[0][..d].to_vec();
    let mut per_dim: Vec<Vec<f64>> = vec![Vec::new(); d];
    let mut coupling_rows: Vec<Vec<f64>> = Vec::new();
    // bit-exact lookup of the provided samples; the fit only ever evaluates
    // points listed in the file
    let mut lookup: HashMap<Vec<u64>, f64> = HashMap::new();
    for row in &table.rows {
        lookup.insert(row[..d].iter().map(|v| v.to_bits()).collect(), row[d]);
    }
    for row in table.rows.iter().skip(1) {
        let diff: Vec<usize> =
            (0..d).filter(|&k| row[k] != anchor[k]).collect();
        match diff.len() {
            0 => {} // duplicate anchor row; the lookup already holds it
            1 => per_dim[diff[0]].push(row[diff[0]]),
            _ => coupling_rows.push(row[..d].to_vec()),
        }
    }
    for coords in &mut per_dim {
        coords.sort_by(|a, b| a.total_cmp(b));
        coords.dedup();
    }
    let plan = CrossPlan { anchor, per_dim_coords: per_dim };
    let coupling =
        DMatrix::from_fn(coupling_rows.len(), d, |i, j| coupling_rows[i][j]);
    let f = {
        let lookup = lookup;
        move |p: &[f64]| -> f64 {
            let key: Vec<u64> = p.iter().map(|v| v.to_bits()).collect();
            *lookup.get(&key).expect("anchored fit only evaluates provided sample points")
        }
    };
    let model = spgd::anova::fit_anova_pgd(f, &plan, &coupling, args.coupling_degree)
        .map_err(|e| CliError::fit_failure(e.to_string()))?;
    let points = points_matrix(&table, d);
    Ok((model, infer_domain(&points)))
}

// ---------------------------------------------------------------------------
// sindy
// ---------------------------------------------------------------------------

#[derive(Args)]
struct SindyArgs {
    /// Dynamical system to identify (only "lorenz" is built in)
    #[arg(long, default_value = "lorenz")]
    system: String,
    /// Number of trajectory samples used for regression
    #[arg(long, default_value_t = 102)]
    samples: usize,
    /// Construction fraction of the sample split (rest validates the penalty)
    #[arg(long, default_value_t = 0.8)]
    split: f64,
    /// Sequential-thresholding cutoff applied to the ridge coefficients
    #[arg(long = "stls-threshold", default_value_t = 0.1)]
    stls_threshold: f64,
    /// RNG seed for the trajectory subsampling
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for the coefficient tables and trajectory CSV
    #[arg(long)]
    out: PathBuf,
}

fn coeff_table(coeffs: &[Vec<f64>]) -> String {
    let mut out = String::from("feature,xdot,ydot,zdot\n");
    for (j, name) in SINDY_FEATURE_NAMES.iter().enumerate() {
        let _ = writeln!(out, "{name},{},{},{}", coeffs[0][j], coeffs[1][j], coeffs[2][j]);
    }
    out
}

fn cmd_sindy(args: SindyArgs) -> CliResult {
    if args.system != "lorenz" {
        return Err(CliError::usage(format!(
            "unknown system '{}' (only 'lorenz' is built in)",
            args.system
        )));
    }
    if !(0.0 < args.split && args.split < 1.0) {
        return Err(CliError::usage("split must lie in (0, 1)"));
    }
    let cfg = LorenzConfig { samples: args.samples, seed: args.seed, ..Default::default() };
    let n_con = (args.samples as f64 * args.split).round() as usize;
    if n_con < SINDY_FEATURE_NAMES.len() {
        eprintln!(
            "warning: construction split has {n_con} rows for {} library terms; \
             the regression is underdetermined and uses the minimum-norm solution",
            SINDY_FEATURE_NAMES.len()
        );
    }
    let ident = run_lorenz_identification(&cfg, args.stls_threshold, args.split)
        .map_err(|e| CliError::usage(e.to_string()))?;
    for (eq, support) in ident.supports.iter().enumerate() {
        if support.is_empty() {
            eprintln!(
                "warning: thresholding removed every term from the {} equation",
                ["xdot", "ydot", "zdot"][eq]
            );
        }
    }

    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::usage(format!("cannot create {}: {e}", args.out.display())))?;
    write_file(&args.out.join("pre_stls.csv"), &coeff_table(&ident.pre_stls))?;
    write_file(&args.out.join("post_stls.csv"), &coeff_table(&ident.post_stls))?;

    let truth = integrate_lorenz(&cfg).map_err(|e| CliError::usage(e.to_string()))?;
    let sim = simulate_identified(&ident.post_stls, cfg.init, cfg.dt, cfg.horizon)
        .map_err(|e| CliError::fit_failure(format!("identified system blew up: {e}")))?;
    let mut csv = String::from("t,x_true,y_true,z_true,x_sim,y_sim,z_sim\n");
    let n = truth.states.len().min(sim.len());
    for i in (0..n).step_by(20) {
        let s = truth.states[i];
        let m = &sim[i];
        let _ = writeln!(csv, "{},{},{},{},{},{},{}", truth.times[i], s[0], s[1], s[2], m[0], m[1], m[2]);
    }
    write_file(&args.out.join("trajectory.csv"), &csv)?;

    println!(
        "identified supports: xdot {:?}, ydot {:?}, zdot {:?}",
        names(&ident.supports[0]),
        names(&ident.supports[1]),
        names(&ident.supports[2])
    );
    println!(
        "construction error {:.3e}, validation error {:.3e}",
        ident.construction_error, ident.validation_error
    );
    println!("tables and trajectory written to {}", args.out.display());
    Ok(())
}

fn names(support: &[usize]) -> Vec<&'static str> {
    support.iter().map(|&j| SINDY_FEATURE_NAMES[j]).collect()
}
