//! `mcdl`: closed-form solves, network training, stationarity certification
//! and the deconvolution benchmark.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 numeric or solver failure.

mod manifest;
mod run_config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use mcdl_core::bench::{self, ExperimentConfig, Method};
use mcdl_core::network::Architecture;
use mcdl_core::optim::{minimize_model, TraceEntry};
use mcdl_core::stationarity::{certification_suite, Expectation};
use mcdl_core::training::{LossKind, Model, Objective, Problem};
use mcdl_core::{config, io, linalg, report, rng, solvers, Error, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use manifest::{load_config, RunManifest, RESOLVED_CONFIG_FILE};
use run_config::{load_problem, RunConfig};

/// Environment variable naming the default output directory.
const OUT_DIR_ENV: &str = "MCDL_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "mcdl-out";

#[derive(Parser)]
#[command(name = "mcdl", version, about = "Model-constrained learned inverse maps for linear inverse problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a closed-form inverse map (or run Tikhonov) and invert observations.
    Solve(SolveArgs),
    /// Train a network or autoencoder on one of the five objectives.
    Train(TrainArgs),
    /// Certify the analytic stationary points on bundled fixtures.
    Certify(CertifyArgs),
    /// Run the deconvolution benchmark.
    Bench(BenchArgs),
}

#[derive(Args)]
struct Common {
    /// Flat TOML config, or a manifest.json from an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory [default: $MCDL_OUT_DIR, else ./mcdl-out].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    common: Common,
    /// ndnn, mcdnn, mcdnn-unweighted or tikhonov.
    #[arg(long, value_parser = parse_method)]
    method: Option<Method>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    alpha1: Option<f64>,
    #[arg(long)]
    alpha2: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// ndnn, mcdnn, mcdecoder, mcdecodervar or mcencoder.
    #[arg(long, value_parser = parse_loss)]
    loss: Option<LossKind>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    alpha1: Option<f64>,
    #[arg(long)]
    alpha2: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Hidden layers then output activation, e.g. `16:tanh,linear`.
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Args)]
struct CertifyArgs {
    #[command(flatten)]
    common: Common,
    /// Certify every construction (the default when no --loss is given).
    #[arg(long, conflicts_with = "loss")]
    all: bool,
    /// Only certificates for this loss.
    #[arg(long, value_parser = parse_loss)]
    loss: Option<LossKind>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: Common,
    /// Worker threads; 0 uses every core. Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    parallelism: usize,
}

fn parse_loss(s: &str) -> std::result::Result<LossKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    Method::ALL
        .into_iter()
        .find(|m| m.as_str() == s)
        .ok_or_else(|| format!("unknown method '{s}'"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct CertifyConfig {
    seed: u64,
    /// Restrict to one loss; all when absent.
    loss: Option<LossKind>,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        CertifyConfig { seed: 0, loss: None }
    }
}

/// Output directory plus the list of files written so far.
struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    fn text(&mut self, name: &str, content: &str) -> Result<()> {
        io::write_text(&self.dir.join(name), content)?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn matrix(&mut self, name: &str, m: &DMatrix<f64>) -> Result<()> {
        self.text(name, &io::format_matrix(m))
    }
}

struct Outcome {
    metrics: Value,
    exit: ExitCode,
}

fn out_dir(common: &Common) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

fn resolve<T: serde::de::DeserializeOwned + Default>(common: &Common) -> Result<T> {
    match &common.config {
        Some(path) => load_config(path),
        None => Ok(T::default()),
    }
}

fn config_dir(common: &Common) -> PathBuf {
    common
        .config
        .as_deref()
        .and_then(Path::parent)
        .map(Path::to_path_buf)
        .unwrap_or_default()
}

/// Runs `body` in the output directory and writes the resolved config and the
/// manifest whatever the outcome.
fn execute<C: Serialize>(
    subcommand: &str,
    dir: PathBuf,
    cfg: &C,
    seeds: Value,
    parallelism: Option<usize>,
    body: impl FnOnce(&mut Outputs) -> Result<Outcome>,
) -> Result<ExitCode> {
    let start = Instant::now();
    io::ensure_dir(&dir)?;
    let mut outputs = Outputs { dir, files: Vec::new() };
    outputs.text(RESOLVED_CONFIG_FILE, &config::to_config_text(cfg)?)?;
    let result = body(&mut outputs);
    let (status, error, metrics) = match &result {
        Ok(o) => ("ok", None, o.metrics.clone()),
        Err(e) => ("failed", Some(e.to_string()), Value::Null),
    };
    let manifest = RunManifest {
        tool: "mcdl".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        subcommand: subcommand.into(),
        status: status.into(),
        error,
        config: serde_json::to_value(cfg).map_err(|e| Error::Internal(e.to_string()))?,
        seeds,
        parallelism,
        duration_seconds: start.elapsed().as_secs_f64(),
        outputs: outputs.files.clone(),
        metrics,
    };
    manifest.write(&outputs.dir)?;
    result.map(|o| o.exit)
}

fn solve(args: SolveArgs) -> Result<ExitCode> {
    let mut cfg: RunConfig = resolve(&args.common)?;
    cfg.absolutize(&config_dir(&args.common));
    if let Some(v) = args.method {
        cfg.method = v;
    }
    cfg.alpha = args.alpha.unwrap_or(cfg.alpha);
    cfg.alpha1 = args.alpha1.unwrap_or(cfg.alpha1);
    cfg.alpha2 = args.alpha2.unwrap_or(cfg.alpha2);
    cfg.seed = args.seed.unwrap_or(cfg.seed);

    let seeds = json!({ "seed": cfg.seed });
    execute("solve", out_dir(&args.common), &cfg, seeds, None, |out| {
        let problem = load_problem(&cfg)?;
        let p = &problem;
        let prediction = match cfg.method {
            Method::Tikhonov => {
                solvers::tikhonov_solve_columns(&p.fwd, &p.noise, &p.prior, cfg.alpha, &p.observations, p.prior.mean())?
            }
            method => {
                let map = match method {
                    Method::Ndnn => solvers::solve_ndnn_closed_form(&p.ts, cfg.alpha1, cfg.alpha2, cfg.pinv_tol)?,
                    Method::McdnnUnweighted => solvers::solve_mcdnn_unweighted(&p.ts, &p.fwd, cfg.alpha, cfg.pinv_tol)?,
                    _ => solvers::solve_mcdnn_closed_form(&p.ts, &p.fwd, &p.prior, &p.noise, cfg.alpha, cfg.pinv_tol)?,
                };
                out.matrix("weight.csv", &map.weight)?;
                out.matrix("bias.csv", &DMatrix::from_column_slice(map.bias.len(), 1, map.bias.as_slice()))?;
                map.predict_columns(&p.observations)?
            }
        };
        out.matrix("prediction.csv", &prediction)?;
        let mut metrics = json!({ "method": cfg.method.as_str(), "observations": p.observations.ncols() });
        if cfg.method != Method::Tikhonov {
            let y_bar = p.ts.centered().y_centered;
            let rank = linalg::numerical_rank(&y_bar, cfg.pinv_tol);
            metrics["centered_data_rank"] = json!(rank);
            metrics["centered_data_rank_deficient"] = json!(rank < y_bar.nrows().min(y_bar.ncols()));
        }
        if let Some(truth) = &p.truth {
            let err = bench::mean_relative_error(&prediction, truth)?;
            metrics["mean_relative_error"] = json!(err);
            println!("{}: mean relative error {err:.6} over {} observations", cfg.method, truth.ncols());
        }
        println!("wrote {} files to {}", out.files.len(), out.dir.display());
        Ok(Outcome {
            metrics,
            exit: ExitCode::SUCCESS,
        })
    })
}

fn trace_csv(trace: &[TraceEntry]) -> String {
    let mut s = String::from("iter,loss,grad_norm\n");
    for t in trace {
        let _ = writeln!(s, "{},{},{}", t.iter, t.loss, t.grad_norm);
    }
    s
}

fn train(args: TrainArgs) -> Result<ExitCode> {
    let mut cfg: RunConfig = resolve(&args.common)?;
    cfg.absolutize(&config_dir(&args.common));
    if let Some(v) = args.loss {
        cfg.loss = v;
    }
    cfg.alpha = args.alpha.unwrap_or(cfg.alpha);
    cfg.alpha1 = args.alpha1.unwrap_or(cfg.alpha1);
    cfg.alpha2 = args.alpha2.unwrap_or(cfg.alpha2);
    cfg.beta = args.beta.unwrap_or(cfg.beta);
    cfg.seed = args.seed.unwrap_or(cfg.seed);
    cfg.max_iters = args.max_iters.unwrap_or(cfg.max_iters);
    cfg.tol = args.tol.unwrap_or(cfg.tol);
    if let Some(a) = args.arch {
        cfg.arch = a;
    }
    let arch = Architecture::parse(&cfg.arch)?;
    cfg.arch = arch.to_string();
    let opt = cfg.optimizer();
    opt.validate()?;
    cfg.hyper().validate()?;

    let seeds = json!({ "seed": cfg.seed, "init_stream": [cfg.seed, 1] });
    execute("train", out_dir(&args.common), &cfg, seeds, None, |out| {
        let problem = load_problem(&cfg)?;
        let p = &problem;
        let mut r = rng::stream(cfg.seed, 1);
        let model = Model::init(cfg.loss, &arch, p.ts.param_dim(), p.ts.data_dim(), &mut r)?;
        let mut objective_problem = Problem::new(&p.ts, &p.fwd, cfg.hyper());
        if cfg.loss == LossKind::Mcdnn {
            objective_problem = objective_problem.weighted(&p.prior, &p.noise);
        }
        let objective = Objective::new(cfg.loss, objective_problem)?;
        let (trained, run) = match minimize_model(objective, &model, &opt) {
            Ok(v) => v,
            Err(Error::Divergence { trace }) => {
                out.text("trace.csv", &trace_csv(&trace))?;
                return Err(Error::Divergence { trace });
            }
            Err(e) => return Err(e),
        };
        out.text("trace.csv", &trace_csv(&run.trace))?;
        let theta = trained.flatten();
        out.matrix("params.csv", &DMatrix::from_column_slice(theta.len(), 1, theta.as_slice()))?;
        let prediction = trained.invert(cfg.loss, &p.observations)?;
        out.matrix("prediction.csv", &prediction)?;

        let mut metrics = json!({
            "loss": run.loss,
            "grad_norm": run.grad_norm,
            "iterations": run.iterations,
            "converged": run.converged,
            "num_params": theta.len(),
        });
        if let Some(truth) = &p.truth {
            metrics["mean_relative_error"] = json!(bench::mean_relative_error(&prediction, truth)?);
        }
        println!(
            "{} [{}]: loss {:.6e}, gradient norm {:.3e} after {} iterations{}",
            cfg.loss,
            cfg.arch,
            run.loss,
            run.grad_norm,
            run.iterations,
            if run.converged { "" } else { " (not converged)" }
        );
        println!("wrote {} files to {}", out.files.len(), out.dir.display());
        Ok(Outcome {
            metrics,
            exit: ExitCode::SUCCESS,
        })
    })
}

fn certify(args: CertifyArgs) -> Result<ExitCode> {
    let mut cfg: CertifyConfig = resolve(&args.common)?;
    cfg.seed = args.seed.unwrap_or(cfg.seed);
    if args.loss.is_some() {
        cfg.loss = args.loss;
    } else if args.all {
        cfg.loss = None;
    }
    let seeds = json!({ "seed": cfg.seed });
    execute("certify", out_dir(&args.common), &cfg, seeds, None, |out| {
        let certs: Vec<_> = certification_suite(cfg.seed)?
            .into_iter()
            .filter(|c| cfg.loss.is_none_or(|k| k == c.loss_kind))
            .collect();
        let mut csv = String::from(
            "loss_kind,construction,grad_norm,fd_grad_norm,loss,scale_reference,tol,pass,expectation,notes\n",
        );
        let mut summary = String::new();
        for c in &certs {
            let expectation = serde_json::to_value(c.expectation).expect("plain enum");
            let expectation = expectation.as_str().expect("string");
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{},{},{},\"{}\"",
                c.loss_kind,
                c.construction,
                c.grad_norm,
                c.fd_grad_norm,
                c.loss,
                c.scale_reference,
                c.tol,
                c.pass,
                expectation,
                c.notes.replace('"', "'")
            );
            let verdict = match (c.expectation, c.meets_expectation()) {
                (Expectation::Measure, _) => "MEASURED",
                (_, true) => "OK",
                (_, false) => "UNEXPECTED",
            };
            let _ = writeln!(
                summary,
                "{verdict:<10} {:<13} {:<42} loss {:.3e}  |grad| {:.3e}  rel {:.3e}  tol {:.0e}  pass={}",
                c.loss_kind.as_str(),
                c.construction,
                c.loss,
                c.grad_norm,
                c.relative_grad_norm(),
                c.tol,
                c.pass
            );
        }
        let asserted = certs.iter().filter(|c| c.expectation != Expectation::Measure).count();
        let met = certs
            .iter()
            .filter(|c| c.expectation != Expectation::Measure && c.meets_expectation())
            .count();
        let _ = writeln!(summary, "{met}/{asserted} asserted certificates as expected");
        out.text("certificates.csv", &csv)?;
        out.text("summary.txt", &summary)?;
        print!("{summary}");
        Ok(Outcome {
            metrics: json!({ "certificates": certs.len(), "asserted": asserted, "as_expected": met }),
            exit: if met == asserted {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            },
        })
    })
}

fn bench_cmd(args: BenchArgs) -> Result<ExitCode> {
    let cfg: ExperimentConfig = resolve(&args.common)?;
    cfg.validate()?;
    let seeds = json!({ "seed": cfg.seed, "repetition_streams": [cfg.seed, "0..repetitions"] });
    let parallelism = args.parallelism;
    execute("bench", out_dir(&args.common), &cfg, seeds, Some(parallelism), |out| {
        let report = bench::run_experiment(&cfg, parallelism)?;
        for path in report::emit_report(&report, &out.dir)? {
            out.files.push(path.file_name().expect("file").to_string_lossy().into_owned());
        }
        let aggregates = bench::aggregate(&report);
        let best = bench::best_by_cell(&aggregates);
        println!("{:<17} {:<10} {:>5} {:>12} {:>12} {:>10}", "method", "prior", "n_t", "alpha", "alpha2", "mean_err");
        for b in &best {
            println!(
                "{:<17} {:<10} {:>5} {:>12.4e} {:>12} {:>10.5}",
                b.method.as_str(),
                b.prior_kind.as_str(),
                b.n_t,
                b.alpha,
                b.alpha2.map(|v| format!("{v:.4e}")).unwrap_or_default(),
                b.mean
            );
        }
        if !report.failures.is_empty() {
            eprintln!("{} cells failed; see failures.csv", report.failures.len());
        }
        println!("wrote {} files to {}", out.files.len(), out.dir.display());
        Ok(Outcome {
            metrics: json!({
                "rows": report.rows.len(),
                "failures": report.failures.len(),
                "surface_axes": ["n_t", "alpha"],
                "best": best,
            }),
            exit: ExitCode::SUCCESS,
        })
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let result = match cli.command {
        Command::Solve(a) => solve(a),
        Command::Train(a) => train(a),
        Command::Certify(a) => certify(a),
        Command::Bench(a) => bench_cmd(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 2 } else { 1 })
        }
    }
}
