//! `pairkrr`: fit, persist and query pairwise kernel ridge regression models
//! on CSV matrices.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage error, 3 data error,
//! 4 numeric error (singular system, eigensolver failure).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pairkrr_core::io::{load_matrix, load_model, save_matrix, save_model, write_atomic, CsvOptions};
use pairkrr_core::kernels::{
    gip_default_bandwidth, gram_gip, gram_linear, gram_rbf, gram_smoother, validate_psd, ProfileAxis, PSD_TOLERANCE,
};
use pairkrr_core::models::{
    fit_filter, fit_it, fit_kron, fit_okkls, fit_two_step, predict_setting, sweep, training_predictions, tune_filter,
    SweepPoint, DEFAULT_GRID_STEP,
};
use pairkrr_core::verify::{run_suite, write_report, CheckKind, SuiteConfig};
use pairkrr_core::{Error, FilterWeights, GramMatrix, KernelKind, LabelMatrix, Method, Setting, TrainedModel};

#[derive(Parser, Debug)]
#[command(name = "pairkrr", version, about = "Pairwise kernel ridge regression on CSV matrices")]
struct Cli {
    /// Field delimiter of input CSV files.
    #[arg(long, global = true, default_value_t = ',')]
    delimiter: char,

    /// Input CSV files start with a header line to skip.
    #[arg(long, global = true)]
    header: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a model and write it to a model file.
    Fit(FitArgs),
    /// Predict with a saved model and write the prediction matrix.
    Predict(PredictArgs),
    /// Fit one model per regularization value, sharing the eigendecompositions.
    Sweep(SweepArgs),
    /// Select linear filter weights by leave-one-pair-out error.
    TuneFilter(TuneArgs),
    /// Run the numerical equivalence checks.
    Verify(VerifyArgs),
}

#[derive(Args, Debug)]
struct KernelArgs {
    /// Label matrix (instances x tasks).
    #[arg(long)]
    labels: PathBuf,

    /// Precomputed instance Gram matrix.
    #[arg(long)]
    kernel_u: Option<PathBuf>,
    /// Precomputed task Gram matrix.
    #[arg(long)]
    kernel_v: Option<PathBuf>,

    /// Instance features (one row per instance) for a built-in kernel.
    #[arg(long)]
    features_u: Option<PathBuf>,
    /// Task features (one row per task) for a built-in kernel.
    #[arg(long)]
    features_v: Option<PathBuf>,

    /// Built-in instance kernel: linear, rbf, gip or smoother.
    #[arg(long)]
    kernel_kind_u: Option<KernelKind>,
    /// Built-in task kernel: linear, rbf, gip or smoother.
    #[arg(long)]
    kernel_kind_v: Option<KernelKind>,

    /// Bandwidth γ of an rbf or gip instance kernel.
    #[arg(long)]
    bandwidth_u: Option<f64>,
    /// Bandwidth γ of an rbf or gip task kernel.
    #[arg(long)]
    bandwidth_v: Option<f64>,

    /// θ of a smoother instance kernel.
    #[arg(long)]
    theta_u: Option<f64>,
    /// θ of a smoother task kernel.
    #[arg(long)]
    theta_v: Option<f64>,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// it, kron, okkls, two-step or filter.
    #[arg(long)]
    method: Method,

    #[command(flatten)]
    kernels: KernelArgs,

    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    lambda_u: Option<f64>,
    #[arg(long)]
    lambda_v: Option<f64>,

    /// Filter weights a1,a2,a3,a4.
    #[arg(long)]
    alpha: Option<String>,

    /// Output model file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,

    /// A, B, C or D.
    #[arg(long)]
    setting: Setting,

    /// Kernel rows of test instances against the training instances.
    #[arg(long)]
    kernel_u_test: Option<PathBuf>,
    /// Kernel rows of test tasks against the training tasks.
    #[arg(long)]
    kernel_v_test: Option<PathBuf>,

    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// it, kron or two-step.
    #[arg(long)]
    method: Method,

    #[command(flatten)]
    kernels: KernelArgs,

    /// Comma-separated grid; each point is `λ` or, for two-step, `λu:λv`.
    #[arg(long)]
    lambda_grid: String,

    /// Directory receiving one model per point and `summary.csv`.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct TuneArgs {
    #[arg(long)]
    labels: PathBuf,

    #[arg(long, default_value_t = DEFAULT_GRID_STEP)]
    grid_step: f64,

    /// Optionally save the tuned filter as a model file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// thm1, thm2, thm3, smoother, veckron, solver, admissibility or all.
    #[arg(long, default_value = "all")]
    check: String,

    /// Number of random instances per check.
    #[arg(long, default_value_t = 10)]
    seeds: usize,

    /// Fixed instance size `m,q`; random in 2..=8 when omitted.
    #[arg(long)]
    size: Option<String>,

    /// First seed; instances use seed, seed + 1, ...
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// CSV report path.
    #[arg(long, default_value = "verify_report.csv")]
    report: PathBuf,

    /// Only run the admissibility check.
    #[arg(long)]
    admissibility: bool,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidParameter(_) | Error::Unsupported(_) | Error::HypothesisViolation(_) => 2,
        Error::Singular(_) | Error::Eigen(_) => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let opts = match csv_options(&cli) {
        Ok(o) => o,
        Err(e) => return report(&e),
    };
    let result = match cli.command {
        Command::Fit(a) => cmd_fit(&a, opts),
        Command::Predict(a) => cmd_predict(&a, opts),
        Command::Sweep(a) => cmd_sweep(&a, opts),
        Command::TuneFilter(a) => cmd_tune(&a, opts),
        Command::Verify(a) => cmd_verify(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => report(&e),
    }
}

fn report(err: &Error) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(exit_code(err))
}

fn csv_options(cli: &Cli) -> Result<CsvOptions, Error> {
    if !cli.delimiter.is_ascii() {
        return Err(Error::InvalidParameter(format!("delimiter must be ASCII, got {:?}", cli.delimiter)));
    }
    Ok(CsvOptions {
        delimiter: cli.delimiter as u8,
        header: cli.header,
    })
}

fn usage(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

fn load_labels(path: &Path, opts: CsvOptions) -> Result<LabelMatrix, Error> {
    LabelMatrix::new(load_matrix(path, opts)?)
}

#[derive(Clone, Copy)]
enum Side {
    U,
    V,
}

impl Side {
    fn name(self) -> &'static str {
        match self {
            Side::U => "u",
            Side::V => "v",
        }
    }
}

/// Resolves one side's Gram matrix from the flags, or `None` when no kernel
/// flag was given for that side.
fn side_kernel(a: &KernelArgs, y: &LabelMatrix, side: Side, opts: CsvOptions) -> Result<Option<GramMatrix>, Error> {
    let (file, features, kind, bandwidth, theta, size, axis) = match side {
        Side::U => (&a.kernel_u, &a.features_u, a.kernel_kind_u, a.bandwidth_u, a.theta_u, y.m(), ProfileAxis::Rows),
        Side::V => (&a.kernel_v, &a.features_v, a.kernel_kind_v, a.bandwidth_v, a.theta_v, y.q(), ProfileAxis::Cols),
    };
    let s = side.name();
    if let Some(path) = file {
        if kind.is_some() || features.is_some() {
            return Err(usage(format!("--kernel-{s} conflicts with --kernel-kind-{s}/--features-{s}")));
        }
        return Ok(Some(validate_psd(&load_matrix(path, opts)?, PSD_TOLERANCE)?));
    }
    let Some(kind) = kind else {
        if features.is_some() {
            return Err(usage(format!("--features-{s} needs --kernel-kind-{s}")));
        }
        return Ok(None);
    };
    let need_features = || {
        features
            .as_ref()
            .ok_or_else(|| usage(format!("--kernel-kind-{s} {kind} needs --features-{s}")))
            .and_then(|p| load_matrix(p, opts))
    };
    let gram = match kind {
        KernelKind::Linear => gram_linear(&need_features()?),
        KernelKind::Rbf => {
            let gamma = bandwidth.ok_or_else(|| usage(format!("rbf kernel needs --bandwidth-{s}")))?;
            gram_rbf(&need_features()?, gamma)?
        }
        KernelKind::Gip => {
            let gamma = bandwidth.unwrap_or_else(|| gip_default_bandwidth(y, axis));
            gram_gip(y, axis, gamma)?
        }
        KernelKind::Smoother => {
            let theta = theta.ok_or_else(|| usage(format!("smoother kernel needs --theta-{s}")))?;
            gram_smoother(size, theta)?
        }
        KernelKind::Precomputed | KernelKind::Delta => {
            return Err(usage(format!("--kernel-kind-{s} must be linear, rbf, gip or smoother")));
        }
    };
    Ok(Some(gram))
}

fn require(g: Option<GramMatrix>, side: Side, method: Method) -> Result<GramMatrix, Error> {
    g.ok_or_else(|| {
        let s = side.name();
        usage(format!("{method} needs --kernel-{s} or --kernel-kind-{s}"))
    })
}

fn parse_alpha(text: &str) -> Result<FilterWeights, Error> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| usage(format!("bad --alpha entry {t:?}"))))
        .collect::<Result<_, _>>()?;
    let alphas: [f64; 4] = parts
        .try_into()
        .map_err(|p: Vec<f64>| usage(format!("--alpha needs 4 weights, got {}", p.len())))?;
    FilterWeights::new(alphas)
}

fn cmd_fit(a: &FitArgs, opts: CsvOptions) -> Result<ExitCode, Error> {
    let y = load_labels(&a.kernels.labels, opts)?;
    let model = fit_from_args(a, &y, opts)?;
    save_model(&model, &a.out)?;
    Ok(ExitCode::SUCCESS)
}

fn fit_from_args(a: &FitArgs, y: &LabelMatrix, opts: CsvOptions) -> Result<TrainedModel, Error> {
    let method = a.method;
    if method != Method::Filter && a.alpha.is_some() {
        return Err(usage(format!("--alpha only applies to the filter method, not {method}")));
    }
    match method {
        Method::Filter => {
            let alpha = a.alpha.as_deref().ok_or_else(|| usage("filter needs --alpha a1,a2,a3,a4"))?;
            Ok(fit_filter(y, parse_alpha(alpha)?))
        }
        Method::IndependentTask => {
            let k = require(side_kernel(&a.kernels, y, Side::U, opts)?, Side::U, method)?;
            let lambda = match (a.lambda_u, a.lambda) {
                (Some(l), None) | (None, Some(l)) => l,
                _ => return Err(usage("it needs exactly one of --lambda-u or --lambda")),
            };
            fit_it(&k, y, lambda)
        }
        _ => {
            let k = require(side_kernel(&a.kernels, y, Side::U, opts)?, Side::U, method)?;
            let g = require(side_kernel(&a.kernels, y, Side::V, opts)?, Side::V, method)?;
            match method {
                Method::Kronecker => {
                    let lambda = a.lambda.ok_or_else(|| usage("kron needs --lambda"))?;
                    fit_kron(&k, &g, y, lambda)
                }
                Method::Okkls => {
                    if a.lambda.is_some() || a.lambda_u.is_some() || a.lambda_v.is_some() {
                        return Err(usage("okkls takes no regularization"));
                    }
                    fit_okkls(&k, &g, y)
                }
                _ => {
                    let (lu, lv) = match (a.lambda, a.lambda_u, a.lambda_v) {
                        (Some(l), None, None) => (l, l),
                        (None, Some(lu), Some(lv)) => (lu, lv),
                        _ => return Err(usage("two-step needs --lambda-u and --lambda-v, or --lambda")),
                    };
                    fit_two_step(&k, &g, y, lu, lv)
                }
            }
        }
    }
}

fn cmd_predict(a: &PredictArgs, opts: CsvOptions) -> Result<ExitCode, Error> {
    let model = load_model(&a.model)?;
    let k_test = a.kernel_u_test.as_deref().map(|p| load_matrix(p, opts)).transpose()?;
    let g_test = a.kernel_v_test.as_deref().map(|p| load_matrix(p, opts)).transpose()?;
    let f = predict_setting(&model, a.setting, k_test.as_ref(), g_test.as_ref())?;
    save_matrix(&f, &a.out)?;
    Ok(ExitCode::SUCCESS)
}

fn parse_grid(text: &str, method: Method) -> Result<Vec<SweepPoint>, Error> {
    let num = |t: &str| {
        t.trim()
            .parse::<f64>()
            .map_err(|_| usage(format!("bad --lambda-grid entry {t:?}")))
    };
    text.split(',')
        .map(|item| match item.split_once(':') {
            Some((u, v)) if method == Method::TwoStep => Ok(SweepPoint::Pair {
                lambda_u: num(u)?,
                lambda_v: num(v)?,
            }),
            Some(_) => Err(usage(format!("{method} grid points take a single λ, got {item:?}"))),
            None => Ok(SweepPoint::Lambda(num(item)?)),
        })
        .collect()
}

fn cmd_sweep(a: &SweepArgs, opts: CsvOptions) -> Result<ExitCode, Error> {
    let method = a.method;
    if !matches!(method, Method::IndependentTask | Method::Kronecker | Method::TwoStep) {
        return Err(Error::Unsupported(format!("{method} has no regularization path to sweep")));
    }
    let grid = parse_grid(&a.lambda_grid, method)?;
    let y = load_labels(&a.kernels.labels, opts)?;
    let k = require(side_kernel(&a.kernels, &y, Side::U, opts)?, Side::U, method)?;
    let g = match method {
        Method::IndependentTask => None,
        _ => Some(require(side_kernel(&a.kernels, &y, Side::V, opts)?, Side::V, method)?),
    };
    let models = sweep(&k, g.as_ref(), &y, method, &grid)?;
    std::fs::create_dir_all(&a.out_dir)?;

    let mut rows = vec!["point,lambda_u,lambda_v,training_mse,status".to_string()];
    let mut failures = 0;
    for (idx, (point, model)) in grid.iter().zip(&models).enumerate() {
        let (lu, lv) = match *point {
            SweepPoint::Lambda(l) if method == Method::IndependentTask => (l.to_string(), String::new()),
            SweepPoint::Lambda(l) => (l.to_string(), l.to_string()),
            SweepPoint::Pair { lambda_u, lambda_v } => (lambda_u.to_string(), lambda_v.to_string()),
        };
        let (mse, status) = match model {
            Ok(model) => {
                save_model(model, &a.out_dir.join(format!("model_{idx:03}.model")))?;
                (format!("{:.16e}", training_mse(model, &y)?), "ok".to_string())
            }
            Err(e) => {
                eprintln!("warning: grid point {idx}: {e}");
                failures += 1;
                (String::new(), e.to_string().replace([',', '\n'], ";"))
            }
        };
        rows.push(format!("{idx},{lu},{lv},{mse},{status}"));
    }
    let text = rows.join("\n") + "\n";
    write_atomic(&a.out_dir.join("summary.csv"), |w| Ok(w.write_all(text.as_bytes())?))?;
    if failures == grid.len() {
        return Err(Error::Singular(format!("all {failures} grid points failed")));
    }
    Ok(ExitCode::SUCCESS)
}

fn training_mse(model: &TrainedModel, y: &LabelMatrix) -> Result<f64, Error> {
    let f = training_predictions(model)?;
    let diff = f.as_matrix() - y.matrix().as_matrix();
    Ok(diff.norm_squared() / (y.m() * y.q()) as f64)
}

fn cmd_tune(a: &TuneArgs, opts: CsvOptions) -> Result<ExitCode, Error> {
    let y = load_labels(&a.labels, opts)?;
    let tuning = tune_filter(&y, a.grid_step)?;
    let w = tuning.weights.alphas();
    if let Some(out) = &a.out {
        save_model(&fit_filter(&y, tuning.weights), out)?;
    }
    println!("alpha = {},{},{},{}", w[0], w[1], w[2], w[3]);
    println!("loo_mse = {:.16e}", tuning.loo_mse);
    Ok(ExitCode::SUCCESS)
}

fn parse_size(text: &str) -> Result<(usize, usize), Error> {
    let (m, q) = text
        .split_once(',')
        .ok_or_else(|| usage(format!("--size expects m,q, got {text:?}")))?;
    let parse = |t: &str| {
        t.trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| usage(format!("bad --size entry {t:?}")))
    };
    Ok((parse(m)?, parse(q)?))
}

fn cmd_verify(a: &VerifyArgs) -> Result<ExitCode, Error> {
    let checks = if a.admissibility {
        vec![CheckKind::Admissibility]
    } else if a.check == "all" {
        CheckKind::ALL.to_vec()
    } else {
        a.check
            .split(',')
            .map(|c| c.trim().parse())
            .collect::<Result<Vec<CheckKind>, _>>()?
    };
    if a.seeds == 0 {
        return Err(usage("--seeds must be positive"));
    }
    let cfg = SuiteConfig {
        checks,
        seeds: a.seeds,
        base_seed: a.seed,
        size: a.size.as_deref().map(parse_size).transpose()?,
    };
    let results = run_suite(&cfg)?;
    write_atomic(&a.report, |w| write_report(w, &results))?;
    let bad: Vec<_> = results.iter().filter(|r| !r.as_expected()).collect();
    for r in &bad {
        eprintln!(
            "unexpected: {} {} seed {:?}: discrepancy {:e} vs tolerance {:e}",
            r.check,
            if r.variant.is_empty() { "check" } else { r.variant },
            r.instance.seed,
            r.discrepancy,
            r.tolerance
        );
    }
    println!("{} results, {} unexpected; report written to {}", results.len(), bad.len(), a.report.display());
    Ok(if bad.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_alpha() {
        assert_eq!(parse_alpha("1,0,0.5,0").unwrap().alphas(), [1.0, 0.0, 0.5, 0.0]);
        assert!(parse_alpha("1,0,0").is_err());
        assert!(parse_alpha("1,0,0,x").is_err());
        assert!(parse_alpha("2,0,0,0").is_err());
    }

    #[test]
    fn parses_grid() {
        let g = parse_grid("0.1,1:2", Method::TwoStep).unwrap();
        assert_eq!(g, vec![SweepPoint::Lambda(0.1), SweepPoint::Pair { lambda_u: 1.0, lambda_v: 2.0 }]);
        assert!(parse_grid("1:2", Method::Kronecker).is_err());
        assert!(parse_grid("a", Method::Kronecker).is_err());
    }

    #[test]
    fn parses_size() {
        assert_eq!(parse_size("5,4").unwrap(), (5, 4));
        assert!(parse_size("5").is_err());
        assert!(parse_size("0,4").is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Singular("x".into())), 4);
        assert_eq!(exit_code(&Error::Unsupported("x".into())), 2);
        assert_eq!(exit_code(&Error::EmptyInput("x".into())), 3);
    }
}
