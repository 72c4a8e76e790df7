mod output;

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use hyperspread::calibration::{compute_ece, read_prediction_log, reliability_data, write_prediction_log, write_reliability_csv, DEFAULT_BINS};
use hyperspread::gradcheck::{run_suite, write_gradnorm_csv, SuiteConfig, SuiteReport};
use hyperspread::optim::{solve_tammes, OptimizerConfig, TammesConfig};
use hyperspread::sim::{generate_world, pareto_sweep, regime_experiment, run_episode, write_pareto_csv, write_regime_csv, SimConfig};
use hyperspread::svg::reliability_svg;
use hyperspread::tammes::lookup;
use hyperspread::Error;
use serde::{Deserialize, Serialize};

use output::{csv_bytes, sha256_hex, OutputSet};

/// Packing-oracle tolerance for `tammes`, in degrees.
const TAMMES_TOLERANCE_DEG: f64 = 1.0;

#[derive(Parser)]
#[command(name = "hyperspread", version, about = "Angular dispersion objectives, packing and calibration tools")]
struct Cli {
    /// Seed for every random draw; overrides a config file's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory receiving artifacts and manifest.json.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Number of equal-width confidence bins [default: 15].
    #[arg(long, global = true)]
    bins: Option<usize>,
    /// Print machine output on stdout instead of the human summary.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Finite-difference and gradient-norm verification of every objective.
    Gradcheck {
        /// JSON suite configuration; defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Best-packing of n points on the unit sphere in d dimensions.
    Tammes {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        d: usize,
        #[arg(long, default_value_t = 10)]
        restarts: usize,
        #[arg(long, default_value_t = 2000)]
        steps: usize,
        #[arg(long, default_value_t = 1e-2)]
        lr: f64,
    },
    /// Calibration report for a prediction log (true_class,p_0,...,p_{K-1}).
    Calibrate { log: PathBuf },
    /// Synthetic test-time tuning experiment described by a JSON config.
    Simulate { config: PathBuf },
}

enum Failure {
    /// Bad arguments, unreadable or invalid configuration or input.
    Usage(anyhow::Error),
    /// The computation itself failed.
    Runtime(anyhow::Error),
}

fn classify(e: Error) -> Failure {
    match e {
        Error::InvalidConfig(_)
        | Error::TooFewPoints(_)
        | Error::ZeroDimension
        | Error::UnsupportedDimension(_)
        | Error::Parse { .. }
        | Error::InvalidProbabilities { .. }
        | Error::RaggedProbabilities { .. }
        | Error::EmptyLog => Failure::Usage(e.into()),
        e => Failure::Runtime(e.into()),
    }
}

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn runtime(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

/// What a command shows on stdout, by format.
struct Report {
    human: String,
    json: String,
    csv: Vec<u8>,
    passed: bool,
}

fn read_input(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).with_context(|| format!("reading {}", path.display())).map_err(usage)
}

fn pct(x: f64) -> String {
    format!("{:.2}%", 100.0 * x)
}

fn cmd_gradcheck(cli: &Cli, config: Option<&Path>) -> Result<Report, Failure> {
    let (cfg, hash) = match config {
        Some(path) => {
            let bytes = read_input(path)?;
            let cfg: SuiteConfig = serde_json::from_slice(&bytes)
                .with_context(|| format!("parsing {}", path.display()))
                .map_err(usage)?;
            (cfg, sha256_hex(&bytes))
        }
        None => {
            let cfg = SuiteConfig::default();
            let hash = sha256_hex(serde_json::to_string(&cfg).map_err(runtime)?.as_bytes());
            (cfg, hash)
        }
    };
    let seed = cli.seed.unwrap_or(0);
    let report: SuiteReport = run_suite(&cfg, seed).map_err(classify)?;
    let mut out = OutputSet::create(&cli.out).map_err(runtime)?;
    out.json("gradcheck_report.json", &report).map_err(runtime)?;
    let curve = csv_bytes(|w| write_gradnorm_csv(&report.curve, w)).map_err(runtime)?;
    out.write("gradnorm_curve.csv", &curve).map_err(runtime)?;
    out.finish("gradcheck", hash, seed).map_err(runtime)?;

    let mut human = String::new();
    for o in &report.objectives {
        let _ = writeln!(
            human,
            "{:<18} checked {:>4}  skipped {:>3}  failures {}  max rel {:.3e}  max abs {:.3e}",
            o.objective.name(),
            o.checked,
            o.skipped_clamp_band + o.skipped_argmin_tie,
            o.failures,
            o.max_rel_error,
            o.max_abs_error
        );
    }
    let l = &report.laws;
    let _ = writeln!(
        human,
        "gradient-norm laws over {} pairs: angular max rel {:.3e}, std {:.3e}; cosine max rel {:.3e}",
        l.pairs, l.angular_max_rel_error, l.angular_std_at_fixed_norm, l.cosine_max_rel_error
    );
    let _ = writeln!(human, "{}", if report.passed { "PASS" } else { "FAIL" });
    Ok(Report {
        human,
        json: serde_json::to_string_pretty(&report).map_err(runtime)?,
        csv: curve,
        passed: report.passed,
    })
}

#[derive(Serialize)]
struct RunSummary {
    seed: u64,
    min_angle_radians: f64,
}

#[derive(Serialize)]
struct TammesReport {
    n: usize,
    d: usize,
    min_angle_radians: f64,
    min_angle_degrees: f64,
    optimal_min_angle_radians: Option<f64>,
    restarts_within_tolerance: Option<usize>,
    status: &'static str,
    runs: Vec<RunSummary>,
}

fn cmd_tammes(cli: &Cli, n: usize, d: usize, tc: TammesConfig) -> Result<Report, Failure> {
    let solution = solve_tammes(n, d, &tc).map_err(classify)?;
    let oracle = lookup(n, d);
    let within = |angle: f64, opt: f64| (angle - opt).abs().to_degrees() <= TAMMES_TOLERANCE_DEG;
    let status = match oracle {
        None => "UNVERIFIED",
        Some(c) if within(solution.min_angle, c.optimal_min_angle) => "PASS",
        Some(_) => "FAIL",
    };
    let report = TammesReport {
        n,
        d,
        min_angle_radians: solution.min_angle,
        min_angle_degrees: solution.min_angle.to_degrees(),
        optimal_min_angle_radians: oracle.map(|c| c.optimal_min_angle),
        restarts_within_tolerance: oracle.map(|c| {
            solution
                .runs
                .iter()
                .filter(|r| within(r.min_angle, c.optimal_min_angle))
                .count()
        }),
        status,
        runs: solution
            .runs
            .iter()
            .map(|r| RunSummary {
                seed: r.seed,
                min_angle_radians: r.min_angle,
            })
            .collect(),
    };
    let mut points = Vec::new();
    solution.features.write_csv(&mut points).map_err(runtime)?;
    let mut runs_csv = String::from("seed,min_angle_radians\n");
    for r in &report.runs {
        let _ = writeln!(runs_csv, "{},{}", r.seed, r.min_angle_radians);
    }

    let mut out = OutputSet::create(&cli.out).map_err(runtime)?;
    out.json("tammes.json", &report).map_err(runtime)?;
    out.write("tammes_points.csv", &points).map_err(runtime)?;
    out.write("tammes_runs.csv", runs_csv.as_bytes()).map_err(runtime)?;
    let resolved = serde_json::json!({ "n": n, "d": d, "tammes": tc });
    out.finish("tammes", sha256_hex(resolved.to_string().as_bytes()), tc.seed)
        .map_err(runtime)?;

    let optimal = match oracle {
        Some(c) => format!(" (optimal {:.2}°)", c.optimal_min_angle.to_degrees()),
        None => String::new(),
    };
    Ok(Report {
        human: format!(
            "n={n} d={d}: min pairwise angle {:.2}°{optimal} {status}\n",
            report.min_angle_degrees
        ),
        json: serde_json::to_string_pretty(&report).map_err(runtime)?,
        csv: runs_csv.into_bytes(),
        passed: status != "FAIL",
    })
}

fn cmd_calibrate(cli: &Cli, log: &Path) -> Result<Report, Failure> {
    let bytes = read_input(log)?;
    let records = read_prediction_log(bytes.as_slice())
        .with_context(|| format!("in {}", log.display()))
        .map_err(usage)?;
    let bins = cli.bins.unwrap_or(DEFAULT_BINS);
    let report = compute_ece(&records, bins).map_err(classify)?;
    let rows = reliability_data(&report);
    let csv = csv_bytes(|w| write_reliability_csv(&rows, w)).map_err(runtime)?;
    let title = log.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();

    let mut out = OutputSet::create(&cli.out).map_err(runtime)?;
    out.json("calibration.json", &report).map_err(runtime)?;
    out.write("reliability.csv", &csv).map_err(runtime)?;
    out.write("reliability.svg", reliability_svg(&report, &title).as_bytes())
        .map_err(runtime)?;
    let resolved = serde_json::json!({ "log_sha256": sha256_hex(&bytes), "bins": bins });
    out.finish("calibrate", sha256_hex(resolved.to_string().as_bytes()), cli.seed.unwrap_or(0))
        .map_err(runtime)?;

    Ok(Report {
        human: format!(
            "{} records: accuracy {}  ECE {}  SCE {}\n",
            records.len(),
            pct(report.accuracy),
            pct(report.ece),
            pct(report.sce)
        ),
        json: serde_json::to_string_pretty(&report).map_err(runtime)?,
        csv,
        passed: true,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Mode {
    #[default]
    Episode,
    Regime,
    Pareto,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct SimulateConfig {
    mode: Mode,
    #[serde(flatten)]
    sim: SimConfig,
    optimizer: OptimizerConfig,
    regimes: Vec<(usize, usize)>,
    lambdas: Vec<f64>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Episode,
            sim: SimConfig::default(),
            optimizer: OptimizerConfig::default(),
            regimes: vec![(200, 64), (10, 64)],
            lambdas: vec![0.0, 1.0, 10.0, 80.0, 200.0],
        }
    }
}

fn cmd_simulate(cli: &Cli, path: &Path) -> Result<Report, Failure> {
    let bytes = read_input(path)?;
    let mut cfg: SimulateConfig = serde_json::from_slice(&bytes)
        .with_context(|| format!("parsing {}", path.display()))
        .map_err(usage)?;
    if let Some(seed) = cli.seed {
        cfg.sim.master_seed = seed;
    }
    if let Some(bins) = cli.bins {
        cfg.sim.n_bins = bins;
    }
    cfg.sim.validate().map_err(classify)?;
    cfg.optimizer.validate().map_err(classify)?;

    let mut out = OutputSet::create(&cli.out).map_err(runtime)?;
    let report = match cfg.mode {
        Mode::Episode => {
            let world = generate_world(&cfg.sim).map_err(classify)?;
            let result = run_episode(&world, &cfg.sim, &cfg.optimizer).map_err(classify)?;
            let c = &result.calibration;
            let rows = reliability_data(c);
            let csv = csv_bytes(|w| write_reliability_csv(&rows, w)).map_err(runtime)?;
            let predictions = csv_bytes(|w| write_prediction_log(&result.records, w)).map_err(runtime)?;
            out.json("sim_result.json", &result).map_err(runtime)?;
            out.write("predictions.csv", &predictions).map_err(runtime)?;
            out.write("reliability.csv", &csv).map_err(runtime)?;
            out.write("reliability.svg", reliability_svg(c, "simulated episode").as_bytes())
                .map_err(runtime)?;
            Report {
                human: format!(
                    "episode N={} D={} {} lambda={}: accuracy {}  ECE {}  SCE {}  mean min angle {:.4} rad\n",
                    cfg.sim.n_classes,
                    cfg.sim.dim,
                    cfg.sim.regularizer.name(),
                    cfg.sim.lambda,
                    pct(c.accuracy),
                    pct(c.ece),
                    pct(c.sce),
                    result.mean_min_angle
                ),
                json: serde_json::to_string_pretty(&result).map_err(runtime)?,
                csv: predictions,
                passed: true,
            }
        }
        Mode::Regime => {
            let rows = regime_experiment(&cfg.regimes, &cfg.sim, &cfg.optimizer).map_err(classify)?;
            let csv = csv_bytes(|w| write_regime_csv(&rows, w)).map_err(runtime)?;
            out.json("regime.json", &rows).map_err(runtime)?;
            out.write("regime.csv", &csv).map_err(runtime)?;
            let mut human = String::new();
            for r in &rows {
                let _ = writeln!(
                    human,
                    "N={:<4} D={:<4} {:<18} ECE {:>7}  min angle {:.4}  cos mean {:+.4}  cos std {:.4}",
                    r.n_classes,
                    r.dim,
                    r.regularizer.name(),
                    pct(r.ece),
                    r.mean_min_angle,
                    r.cosine_mean,
                    r.cosine_std
                );
            }
            Report {
                human,
                json: serde_json::to_string_pretty(&rows).map_err(runtime)?,
                csv,
                passed: true,
            }
        }
        Mode::Pareto => {
            let world = generate_world(&cfg.sim).map_err(classify)?;
            let rows = pareto_sweep(&cfg.lambdas, &world, &cfg.sim, &cfg.optimizer).map_err(classify)?;
            let csv = csv_bytes(|w| write_pareto_csv(&rows, w)).map_err(runtime)?;
            out.json("pareto.json", &rows).map_err(runtime)?;
            out.write("pareto.csv", &csv).map_err(runtime)?;
            let mut human = String::new();
            for r in &rows {
                let _ = writeln!(
                    human,
                    "lambda {:<8} accuracy {:>7}  ECE {:>7}  min angle {:.4}",
                    r.lambda,
                    pct(r.accuracy),
                    pct(r.ece),
                    r.mean_min_angle
                );
            }
            Report {
                human,
                json: serde_json::to_string_pretty(&rows).map_err(runtime)?,
                csv,
                passed: true,
            }
        }
    };
    out.finish("simulate", sha256_hex(&bytes), cfg.sim.master_seed)
        .map_err(runtime)?;
    Ok(report)
}

fn run(cli: &Cli) -> Result<Report, Failure> {
    match &cli.command {
        Command::Gradcheck { config } => cmd_gradcheck(cli, config.as_deref()),
        Command::Tammes {
            n,
            d,
            restarts,
            steps,
            lr,
        } => {
            if *n < 2 || *d < 2 {
                return Err(usage(anyhow!("tammes needs n >= 2 and d >= 2, got n={n} d={d}")));
            }
            let tc = TammesConfig {
                restarts: *restarts,
                steps: *steps,
                learning_rate: *lr,
                seed: cli.seed.unwrap_or(0),
            };
            cmd_tammes(cli, *n, *d, tc)
        }
        Command::Calibrate { log } => cmd_calibrate(cli, log),
        Command::Simulate { config } => cmd_simulate(cli, config),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(report) => {
            let mut stdout = std::io::stdout().lock();
            let _ = match cli.format {
                None => stdout.write_all(report.human.as_bytes()),
                Some(Format::Json) => writeln!(stdout, "{}", report.json),
                Some(Format::Csv) => stdout.write_all(&report.csv),
            };
            if report.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
