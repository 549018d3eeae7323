//! Command-line surface: `backtest`, `sweep`, `simulate`,
//! `validate-theory`.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 model failure,
//! 4 theorem-validation failure.
//!
//! Flag precedence is CLI > config file (TOML key/value) > built-in
//! defaults; the effective configuration is echoed into the run
//! manifest next to each output.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use tcp_risk::backtest::{
    run_benchmark, sensitivity_sweep, write_records_csv, write_sweep_csv, BacktestConfig,
    BacktestReport, QrMode, ThresholdMode,
};
use tcp_risk::benchmarks::GarchParams;
use tcp_risk::conformal::ModelId;
use tcp_risk::data::{load_prices, log_returns, ReturnSeries, ReturnUnit};
use tcp_risk::error::Error;
use tcp_risk::manifest::{sha256_hex, RunManifest};
use tcp_risk::quantile::GbtConfig;
use tcp_risk::synth;
use tcp_risk::validate::{validate_theorem1, validate_theorem2};

const OUT_DIR_ENV: &str = "TCP_RISK_OUT_DIR";

const EXIT_USAGE: i32 = 1;
const EXIT_DATA: i32 = 2;
const EXIT_MODEL: i32 = 3;
const EXIT_VALIDATION: i32 = 4;

#[derive(Parser)]
#[command(
    name = "tcp-risk",
    version,
    about = "Adaptive conformal prediction intervals for return series"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Backtest one model (or all four) on a price CSV
    Backtest(BacktestArgs),
    /// Run the (window, gamma0) sensitivity sweep
    Sweep(SweepArgs),
    /// Emit a synthetic price CSV
    Simulate(SimulateArgs),
    /// Run the coverage-guarantee validators on synthetic data
    ValidateTheory(ValidateArgs),
}

#[derive(Args, Clone)]
struct CommonModelArgs {
    /// Input price CSV (columns: date, price)
    #[arg(long)]
    input: PathBuf,
    /// Miscoverage level alpha
    #[arg(long)]
    alpha: Option<f64>,
    /// Rolling calibration window w
    #[arg(long)]
    window: Option<usize>,
    /// Learning-rate schedule: gamma0 / (1 + lambda t)^beta
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Decay-heuristic strength applied after covered steps (0 = pure
    /// Robbins-Monro)
    #[arg(long)]
    kappa: Option<f64>,
    /// Refit the quantile pair every this many steps
    #[arg(long)]
    refit_every: Option<usize>,
    /// additive | online_only | window_only
    #[arg(long)]
    threshold_mode: Option<String>,
    /// paper | causal
    #[arg(long)]
    qr_mode: Option<String>,
    /// percent | raw return units
    #[arg(long)]
    units: Option<String>,
    /// Master seed for model fitting
    #[arg(long)]
    seed: Option<u64>,
    /// TOML config file; CLI flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: $TCP_RISK_OUT_DIR or .)
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    n_trees: Option<usize>,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long)]
    shrinkage: Option<f64>,
    #[arg(long)]
    min_leaf: Option<usize>,
    #[arg(long)]
    subsample: Option<f64>,
}

#[derive(Args)]
struct BacktestArgs {
    /// tcp | qr | garch | hist | all
    #[arg(long, default_value = "tcp")]
    model: String,
    /// Initial learning rate gamma0
    #[arg(long)]
    gamma0: Option<f64>,
    #[command(flatten)]
    common: CommonModelArgs,
}

#[derive(Args)]
struct SweepArgs {
    /// Comma-separated window sizes (default 100,252,500)
    #[arg(long = "w", value_delimiter = ',')]
    windows: Option<Vec<usize>>,
    /// Comma-separated gamma0 values (default 0.005,0.01,0.05)
    #[arg(long = "gamma0", value_delimiter = ',')]
    gamma0s: Option<Vec<f64>>,
    #[command(flatten)]
    common: CommonModelArgs,
}

#[derive(Args)]
struct SimulateArgs {
    /// Generator: iid | garch | regime
    generator: String,
    /// Number of returns (prices emitted: n + 1)
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    mean: f64,
    #[arg(long, default_value_t = 1.0)]
    sd: f64,
    #[arg(long, default_value_t = 0.05)]
    omega: f64,
    #[arg(long, default_value_t = 0.1)]
    alpha_g: f64,
    #[arg(long, default_value_t = 0.85)]
    beta_g: f64,
    /// Regime segments as len:vol:mean[,len:vol:mean...]
    #[arg(long)]
    segments: Option<String>,
    /// Output CSV path (default: <out-dir>/simulated.csv)
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long, default_value_t = 50)]
    trials: usize,
    #[arg(long, default_value_t = 1000)]
    n_cal: usize,
    #[arg(long, default_value_t = 5000)]
    n_test: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Target coverage; must equal 1 - alpha when given
    #[arg(long)]
    coverage: Option<f64>,
    /// Steps for the long-run coverage validator
    #[arg(long, default_value_t = 200_000)]
    t2_steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };
    match cli.command {
        Command::Backtest(args) => cmd_backtest(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::ValidateTheory(args) => cmd_validate_theory(args),
    }
}

fn error_exit_code(e: &Error) -> i32 {
    match e {
        Error::Parse { .. }
        | Error::DuplicateTimestamp { .. }
        | Error::InsufficientData(_)
        | Error::Csv(_)
        | Error::Io(_) => EXIT_DATA,
        Error::Precondition(_) => EXIT_USAGE,
        _ => EXIT_MODEL,
    }
}

fn out_dir(flag: &Option<PathBuf>) -> PathBuf {
    flag.clone()
        .or_else(|| std::env::var(OUT_DIR_ENV).ok().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn toml_get<'a>(cfg: &'a Option<toml::Table>, key: &str) -> Option<&'a toml::Value> {
    cfg.as_ref().and_then(|t| t.get(key))
}

fn toml_f64(cfg: &Option<toml::Table>, key: &str) -> Option<f64> {
    toml_get(cfg, key).and_then(|v| v.as_float().or(v.as_integer().map(|i| i as f64)))
}

fn toml_usize(cfg: &Option<toml::Table>, key: &str) -> Option<usize> {
    toml_get(cfg, key).and_then(|v| v.as_integer()).map(|i| i as usize)
}

fn toml_str(cfg: &Option<toml::Table>, key: &str) -> Option<String> {
    toml_get(cfg, key).and_then(|v| v.as_str()).map(String::from)
}

struct ResolvedRun {
    cfg: BacktestConfig,
    unit: ReturnUnit,
    seed: u64,
    dir: PathBuf,
}

fn resolve_config(common: &CommonModelArgs, gamma0: Option<f64>) -> Result<ResolvedRun, String> {
    let file: Option<toml::Table> = match &common.config {
        None => None,
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| format!("config {path:?}: {e}"))?;
            Some(text.parse().map_err(|e| format!("config {path:?}: {e}"))?)
        }
    };

    let defaults = BacktestConfig::default();
    let seed = common.seed.or(toml_usize(&file, "seed").map(|s| s as u64)).unwrap_or(0);
    let mut cfg = BacktestConfig {
        alpha: common.alpha.or(toml_f64(&file, "alpha")).unwrap_or(defaults.alpha),
        window: common.window.or(toml_usize(&file, "window")).unwrap_or(defaults.window),
        gamma0: gamma0.or(toml_f64(&file, "gamma0")).unwrap_or(defaults.gamma0),
        lambda: common.lambda.or(toml_f64(&file, "lambda")).unwrap_or(defaults.lambda),
        beta: common.beta.or(toml_f64(&file, "beta")).unwrap_or(defaults.beta),
        kappa: common.kappa.or(toml_f64(&file, "kappa")).unwrap_or(defaults.kappa),
        refit_every: common
            .refit_every
            .or(toml_usize(&file, "refit_every"))
            .unwrap_or(defaults.refit_every),
        ..defaults
    };
    cfg.gbt = GbtConfig {
        n_trees: common.n_trees.or(toml_usize(&file, "n_trees")).unwrap_or(100),
        max_depth: common.max_depth.or(toml_usize(&file, "max_depth")).unwrap_or(3),
        shrinkage: common.shrinkage.or(toml_f64(&file, "shrinkage")).unwrap_or(0.1),
        min_leaf: common.min_leaf.or(toml_usize(&file, "min_leaf")).unwrap_or(20),
        subsample: common.subsample.or(toml_f64(&file, "subsample")).unwrap_or(1.0),
        seed,
    };
    cfg.threshold_mode = match common
        .threshold_mode
        .clone()
        .or(toml_str(&file, "threshold_mode"))
        .as_deref()
    {
        None | Some("additive") => ThresholdMode::Additive,
        Some("online_only") => ThresholdMode::OnlineOnly,
        Some("window_only") => ThresholdMode::WindowOnly,
        Some(other) => return Err(format!("unknown threshold mode {other:?}")),
    };
    cfg.qr_mode = match common.qr_mode.clone().or(toml_str(&file, "qr_mode")).as_deref() {
        None | Some("paper") => QrMode::Paper,
        Some("causal") => QrMode::Causal,
        Some(other) => return Err(format!("unknown QR mode {other:?}")),
    };
    let unit = match common.units.clone().or(toml_str(&file, "units")).as_deref() {
        None | Some("percent") => ReturnUnit::Percent,
        Some("raw") => ReturnUnit::Raw,
        Some(other) => return Err(format!("unknown units {other:?}")),
    };

    Ok(ResolvedRun {
        cfg,
        unit,
        seed,
        dir: out_dir(&common.out_dir),
    })
}

fn load_series(input: &Path, unit: ReturnUnit) -> Result<(ReturnSeries, String), (i32, String)> {
    let bytes = fs::read(input).map_err(|e| (EXIT_DATA, format!("{}: {e}", input.display())))?;
    let digest = sha256_hex(&bytes);
    let (prices, rejections) =
        load_prices(&bytes[..]).map_err(|e| (error_exit_code(&e), e.to_string()))?;
    for r in &rejections {
        eprintln!("{},{}", r.line, r.reason);
    }
    let series = log_returns(&prices, unit).map_err(|e| (error_exit_code(&e), e.to_string()))?;
    Ok((series, digest))
}

fn parse_models(spec: &str) -> Result<Vec<ModelId>, String> {
    match spec {
        "all" => Ok(vec![ModelId::Tcp, ModelId::Qr, ModelId::Garch, ModelId::Hist]),
        "tcp" => Ok(vec![ModelId::Tcp]),
        "qr" => Ok(vec![ModelId::Qr]),
        "garch" => Ok(vec![ModelId::Garch]),
        "hist" => Ok(vec![ModelId::Hist]),
        other => Err(format!("unknown model {other:?}")),
    }
}

fn write_report_files(
    report: &BacktestReport,
    series: &ReturnSeries,
    dir: &Path,
    manifest: &mut RunManifest,
) -> std::io::Result<()> {
    let name = report.model_id.as_str();
    let records_path = dir.join(format!("{name}_records.csv"));
    let summary_path = dir.join(format!("{name}_summary.json"));
    let manifest_name = format!("{name}_manifest.json");

    let mut buf = Vec::new();
    write_records_csv(report, series, &mut buf).expect("in-memory write");
    fs::write(&records_path, buf)?;

    let summary = serde_json::json!({
        "model": name,
        "empirical_coverage": report.empirical_coverage,
        "avg_width": report.avg_width,
        "n_predictions": report.n_predictions,
        "degenerate_count": report.degenerate_count,
        "crossing_count": report.crossing_count,
        "manifest": manifest_name,
    });
    fs::write(&summary_path, serde_json::to_string_pretty(&summary).unwrap())?;

    manifest.outputs.push(records_path.display().to_string());
    manifest.outputs.push(summary_path.display().to_string());
    Ok(())
}

fn cmd_backtest(args: BacktestArgs) -> i32 {
    let models = match parse_models(&args.model) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    let resolved = match resolve_config(&args.common, args.gamma0) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    let (series, digest) = match load_series(&args.common.input, resolved.unit) {
        Ok(x) => x,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            return code;
        }
    };
    if let Err(e) = fs::create_dir_all(&resolved.dir) {
        eprintln!("error: {e}");
        return EXIT_DATA;
    }

    let mut manifest = RunManifest::new(
        "backtest",
        serde_json::to_value(&resolved.cfg).unwrap(),
        resolved.seed,
    );
    manifest.input_digest = Some(digest);

    println!(
        "{:<8} {:>10} {:>12} {:>12}",
        "Model", "Coverage", "Avg Width", "Predictions"
    );
    for model in models {
        let mut cfg = resolved.cfg.clone();
        cfg.model_id = model;
        let report = match run_benchmark(&series, &cfg) {
            Ok(r) => r,
            Err(e) => {
                eprintln!("error: {e}");
                return error_exit_code(&e);
            }
        };
        println!(
            "{:<8} {:>10.4} {:>12.4} {:>12}",
            model.as_str().to_uppercase(),
            report.empirical_coverage,
            report.avg_width,
            report.n_predictions
        );
        if let Err(e) = write_report_files(&report, &series, &resolved.dir, &mut manifest) {
            eprintln!("error: {e}");
            return EXIT_DATA;
        }
        manifest.finish();
        let mname = resolved.dir.join(format!("{}_manifest.json", model.as_str()));
        if fs::write(&mname, serde_json::to_string_pretty(&manifest).unwrap()).is_err() {
            eprintln!("error: cannot write manifest");
            return EXIT_DATA;
        }
    }
    0
}

fn cmd_sweep(args: SweepArgs) -> i32 {
    let resolved = match resolve_config(&args.common, None) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    let (series, digest) = match load_series(&args.common.input, resolved.unit) {
        Ok(x) => x,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            return code;
        }
    };
    let windows = args.windows.unwrap_or_else(|| vec![100, 252, 500]);
    let gamma0s = args.gamma0s.unwrap_or_else(|| vec![0.005, 0.01, 0.05]);

    let result = sensitivity_sweep(&series, &windows, &gamma0s, &resolved.cfg, resolved.seed);
    let ok_cells = result.cells.iter().filter(|c| c.error.is_none()).count();

    if let Err(e) = fs::create_dir_all(&resolved.dir) {
        eprintln!("error: {e}");
        return EXIT_DATA;
    }
    let sweep_path = resolved.dir.join("sweep.csv");
    let mut buf = Vec::new();
    write_sweep_csv(&result, &mut buf).expect("in-memory write");
    if let Err(e) = fs::write(&sweep_path, &buf) {
        eprintln!("error: {e}");
        return EXIT_DATA;
    }
    print!("{}", String::from_utf8_lossy(&buf));

    let mut manifest = RunManifest::new(
        "sweep",
        serde_json::json!({
            "base": serde_json::to_value(&resolved.cfg).unwrap(),
            "windows": windows,
            "gamma0s": gamma0s,
        }),
        resolved.seed,
    );
    manifest.input_digest = Some(digest);
    manifest.outputs.push(sweep_path.display().to_string());
    manifest.finish();
    let _ = fs::write(
        resolved.dir.join("sweep_manifest.json"),
        serde_json::to_string_pretty(&manifest).unwrap(),
    );

    if ok_cells == 0 {
        eprintln!("error: every sweep cell failed");
        EXIT_MODEL
    } else {
        0
    }
}

fn parse_segments(spec: &str) -> Result<synth::RegimeSpec, String> {
    let mut segments = Vec::new();
    for part in spec.split(',') {
        let fields: Vec<&str> = part.split(':').collect();
        if fields.len() != 3 {
            return Err(format!("segment {part:?} is not len:vol:mean"));
        }
        let len: usize = fields[0].parse().map_err(|e| format!("{part:?}: {e}"))?;
        let vol: f64 = fields[1].parse().map_err(|e| format!("{part:?}: {e}"))?;
        let mean: f64 = fields[2].parse().map_err(|e| format!("{part:?}: {e}"))?;
        segments.push((len, vol, mean));
    }
    Ok(synth::RegimeSpec { segments })
}

fn cmd_simulate(args: SimulateArgs) -> i32 {
    let series = match args.generator.as_str() {
        "iid" => synth::gen_iid_gaussian(args.n, args.mean, args.sd, args.seed),
        "garch" => match GarchParams::new(args.omega, args.alpha_g, args.beta_g) {
            Ok(p) => synth::gen_garch(args.n, &p, args.seed),
            Err(e) => {
                eprintln!("error: {e}");
                return EXIT_USAGE;
            }
        },
        "regime" => {
            let Some(spec) = &args.segments else {
                eprintln!("error: regime generator requires --segments");
                return EXIT_USAGE;
            };
            match parse_segments(spec) {
                Ok(spec) => synth::gen_regime_shift(&spec, args.seed),
                Err(e) => {
                    eprintln!("error: {e}");
                    return EXIT_USAGE;
                }
            }
        }
        other => {
            eprintln!("error: unknown generator {other:?}");
            return EXIT_USAGE;
        }
    };
    let series = match series {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };

    let dir = out_dir(&args.out_dir);
    let path = args.out.unwrap_or_else(|| dir.join("simulated.csv"));
    if let Some(parent) = path.parent() {
        let _ = fs::create_dir_all(parent);
    }
    let prices = synth::returns_to_prices(&series);
    let base = series.timestamps[0] - chrono::Days::new(1);
    let mut out = String::from("date,price\n");
    for (i, p) in prices.iter().enumerate() {
        let date = base + chrono::Days::new(i as u64);
        out.push_str(&format!("{date},{p:.8}\n"));
    }
    if let Err(e) = fs::write(&path, out) {
        eprintln!("error: {e}");
        return EXIT_DATA;
    }
    eprintln!("wrote {} prices to {}", prices.len(), path.display());
    0
}

fn cmd_validate_theory(args: ValidateArgs) -> i32 {
    if let Some(cov) = args.coverage {
        if (cov - (1.0 - args.alpha)).abs() > 1e-12 {
            eprintln!(
                "error: --coverage {cov} does not match 1 - alpha = {}",
                1.0 - args.alpha
            );
            return EXIT_USAGE;
        }
    }
    let t1 = match validate_theorem1(args.n_cal, args.n_test, args.trials, args.alpha, args.seed) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return error_exit_code(&e);
        }
    };
    let t2 = match validate_theorem2(args.t2_steps, args.alpha, args.seed) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return error_exit_code(&e);
        }
    };

    let json = serde_json::json!({
        "finite_sample_validity": t1,
        "asymptotic_coverage": t2,
        "pass": t1.pass && t2.pass,
    });
    let text = serde_json::to_string_pretty(&json).unwrap();
    println!("{text}");

    let dir = out_dir(&args.out_dir);
    let _ = fs::create_dir_all(&dir);
    let _ = fs::write(dir.join("validation.json"), &text);

    if t1.pass && t2.pass {
        0
    } else {
        EXIT_VALIDATION
    }
}
