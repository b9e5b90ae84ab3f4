//! Command-line front end: batch Monte-Carlo runs, timing-table and
//! convergence-figure reproduction, option pricing under the two-asset
//! model, and closed-form characteristic function evaluation.

mod config;
mod output;
mod presets;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_complex::Complex64;

use wishart_sim::matkernel::{ComplexSymMatrix, SymMatrix};
use wishart_sim::oracle::{
    self, charfn_functional, mc_estimate, mc_path_estimate, McEstimate, RngLayout,
};
use wishart_sim::schemes::{build_wishart_stepper, GourierouxStepper, SchemeKind, SchemeSpec};
use wishart_sim::wishart_exact::WishartParams;
use wishart_sim::SimError;

use config::{ExperimentConfig, FunctionalConfig, ModelConfig};
use output::{write_out, ResultRow};

#[derive(Debug)]
pub struct CliError {
    msg: String,
    code: u8,
}

impl CliError {
    fn config(msg: String) -> Self {
        Self { msg, code: 2 }
    }

    fn numerical(msg: String) -> Self {
        Self { msg, code: 3 }
    }

    fn io(e: std::io::Error) -> Self {
        Self { msg: format!("io error: {e}"), code: 3 }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.msg)
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::InsufficientSignal => Self { msg: e.to_string(), code: 4 },
            SimError::IncompatibleDims(_, _) | SimError::UnsupportedParams(_) => {
                Self { msg: e.to_string(), code: 2 }
            }
            other => Self::numerical(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "wishart",
    about = "Simulation engine for Wishart processes and affine diffusions on PSD matrices",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct CommonArgs {
    /// JSON experiment configuration
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in configuration name
    #[arg(long)]
    preset: Option<String>,
    /// Override the configuration seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the number of Monte-Carlo paths
    #[arg(long)]
    paths: Option<usize>,
    /// Worker threads (default: hardware parallelism)
    #[arg(long)]
    threads: Option<usize>,
    /// Output file (default: stdout)
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

impl CommonArgs {
    fn load(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), None) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    CliError::config(format!("cannot read {}: {e}", path.display()))
                })?;
                ExperimentConfig::from_json(&text)?
            }
            (None, Some(name)) => presets::load_preset(name)?,
            (None, None) => {
                return Err(CliError::config("give --config PATH or --preset NAME".to_string()))
            }
            (Some(_), Some(_)) => {
                return Err(CliError::config("give only one of --config / --preset".to_string()))
            }
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(paths) = self.paths {
            if paths < 2 {
                return Err(CliError::config("--paths must be at least 2".to_string()));
            }
            cfg.n_paths = paths;
        }
        if let Some(k) = self.threads {
            // ignore failure: the global pool can only be set once per process
            let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Draw terminal samples (or full paths) and write them out
    Sample {
        #[command(flatten)]
        common: CommonArgs,
        /// Write every grid point of every path instead of terminal values
        #[arg(long)]
        full_paths: bool,
    },
    /// Reproduce a timing-table row: every applicable scheme at N in {10, 30}
    /// plus the exact one-step sampler, against the closed-form value
    Table1 {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Convergence study over the configured N grid with fitted weak order
    Converge {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Put-on-max pricing under the two-asset covariance model
    Gourieroux {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Evaluate the closed-form characteristic / Laplace transform
    Charfn {
        #[command(flatten)]
        common: CommonArgs,
        /// Orientation: `table` evaluates E[exp(i Tr(v X_T))] (the reference
        /// tables), `laplace` evaluates E[exp(Tr(v X_T))] at the real v
        #[arg(long, default_value = "table")]
        orientation: String,
    },
}

fn wishart_model(cfg: &ExperimentConfig) -> Result<WishartParams, CliError> {
    match &cfg.model {
        ModelConfig::Wishart(w) => w.build(),
        _ => Err(CliError::config("this command needs a wishart model".to_string())),
    }
}

fn run_terminal_estimate(
    p: &WishartParams,
    spec: &SchemeSpec,
    v: &SymMatrix,
    t: f64,
    n: usize,
    n_paths: usize,
    seed: u64,
) -> Result<McEstimate, CliError> {
    let dt = t / n as f64;
    let stepper = build_wishart_stepper(p, dt, spec)?;
    let layout = RngLayout::new(seed);
    Ok(mc_estimate(
        &layout,
        n_paths,
        n,
        dt,
        &p.x,
        |rng, x, h| stepper.step(rng, x, h),
        |x| charfn_functional(v, x),
    )?)
}

fn cmd_sample(common: &CommonArgs, full_paths: bool) -> Result<(), CliError> {
    let cfg = common.load()?;
    let p = wishart_model(&cfg)?;
    let spec = cfg.scheme.build()?;
    let n_steps = if spec.kind == SchemeKind::Exact && !full_paths {
        1
    } else {
        *cfg.n_grid.last().unwrap()
    };
    let dt = cfg.t / n_steps as f64;
    let stepper = build_wishart_stepper(&p, dt, &spec)?;
    let d = p.d;

    let mut rows: Vec<(usize, usize, SymMatrix)> = Vec::new();
    for i in 0..cfg.n_paths {
        let mut rng = RngLayout::new(cfg.seed).path_stream(i);
        let mut x = p.x.clone();
        for k in 0..n_steps {
            x = stepper.step(&mut rng, &x, dt)?;
            if full_paths {
                rows.push((i, k + 1, x.clone()));
            }
        }
        if !full_paths {
            rows.push((i, n_steps, x));
        }
    }

    let header: Vec<String> = (0..d)
        .flat_map(|i| (i..d).map(move |j| format!("x_{i}_{j}")))
        .collect();
    let content = match common.format {
        Format::Csv => {
            let mut s = String::new();
            s.push_str(output::SAMPLES_SCHEMA);
            s.push('\n');
            s.push_str("path,step,");
            s.push_str(&header.join(","));
            s.push('\n');
            for (path, step, x) in &rows {
                s.push_str(&format!("{path},{step}"));
                for i in 0..d {
                    for j in i..d {
                        s.push_str(&format!(",{:.17e}", x.get(i, j)));
                    }
                }
                s.push('\n');
            }
            s
        }
        Format::Json => {
            let docs: Vec<serde_json::Value> = rows
                .iter()
                .map(|(path, step, x)| {
                    let vals: Vec<f64> = (0..d)
                        .flat_map(|i| (i..d).map(move |j| x.get(i, j)))
                        .collect();
                    serde_json::json!({"path": path, "step": step, "upper_triangle": vals})
                })
                .collect();
            serde_json::to_string_pretty(&docs).expect("serializable") + "\n"
        }
    };
    write_out(common.out.as_deref(), &content).map_err(CliError::io)
}

fn cmd_table1(common: &CommonArgs) -> Result<(), CliError> {
    let cfg = common.load()?;
    let p = wishart_model(&cfg)?;
    let v = cfg.charfn_v()?;
    let truth = oracle::wishart_charfn_table(&p, cfg.t, &v)?;

    let mut rows = Vec::new();
    let mut push = |name: &str, n: usize, est: &McEstimate| {
        rows.push(ResultRow {
            scheme: name.to_string(),
            n,
            re: est.mean.re,
            im: est.mean.im,
            std_error_re: est.std_error_re,
            std_error_im: est.std_error_im,
            elapsed_s: est.elapsed_s,
        });
    };

    let exact1 = run_terminal_estimate(
        &p,
        &SchemeSpec::new(SchemeKind::Exact),
        &v,
        cfg.t,
        1,
        cfg.n_paths,
        cfg.seed,
    )?;
    push("exact_1step", 1, &exact1);

    let d = p.d;
    for &n in &[10usize, 30] {
        if p.alpha >= d as f64 {
            let est = run_terminal_estimate(
                &p,
                &SchemeSpec::new(SchemeKind::Order2Bis),
                &v,
                cfg.t,
                n,
                cfg.n_paths,
                cfg.seed + 1,
            )?;
            push("order2bis", n, &est);
        }
        for (kind, name, seed_off) in [
            (SchemeKind::Order2, "order2", 2u64),
            (SchemeKind::Order3, "order3", 3),
            (SchemeKind::Exact, "exact_nsteps", 4),
            (SchemeKind::Euler, "euler", 5),
        ] {
            let est = run_terminal_estimate(
                &p,
                &SchemeSpec::new(kind),
                &v,
                cfg.t,
                n,
                cfg.n_paths,
                cfg.seed + seed_off,
            )?;
            push(name, n, &est);
        }
    }

    let content = match common.format {
        Format::Csv => output::result_rows_csv(&rows, Some((truth.re, truth.im))),
        Format::Json => output::result_rows_json(&rows, Some((truth.re, truth.im))),
    };
    write_out(common.out.as_deref(), &content).map_err(CliError::io)
}

fn cmd_converge(common: &CommonArgs) -> Result<(), CliError> {
    let cfg = common.load()?;
    let spec = cfg.scheme.build()?;
    let p = wishart_model(&cfg)?;

    match cfg.functional {
        FunctionalConfig::CharfnPoint { .. } => {}
        FunctionalConfig::MaxTrace => return cmd_converge_max_trace(common, &cfg, &p, &spec),
        _ => return Err(CliError::config("converge needs charfn_point or max_trace".to_string())),
    }
    let v = cfg.charfn_v()?;
    let truth = oracle::wishart_charfn_table(&p, cfg.t, &v)?;

    let mut rows = Vec::new();
    let report = oracle::convergence_study(truth, &cfg.n_grid, |n| {
        let est = run_terminal_estimate(&p, &spec, &v, cfg.t, n, cfg.n_paths, cfg.seed)
            .map_err(|e| SimError::UnsupportedParams(e.to_string()))?;
        rows.push((n, est.clone()));
        Ok(est)
    });

    let mut s = String::new();
    s.push_str(output::CONVERGE_SCHEMA);
    s.push('\n');
    s.push_str(&format!(
        "# scheme: {}; reference re={:.6} im={:.6}\n",
        spec.kind.name(),
        truth.re,
        truth.im
    ));
    s.push_str("n,dt,re,im,std_error_re,std_error_im,abs_error,ci_half_width,elapsed_s\n");
    for (n, est) in &rows {
        s.push_str(&format!(
            "{},{:.8},{:.6},{:.6},{:.2e},{:.2e},{:.3e},{:.3e},{:.3}\n",
            n,
            cfg.t / *n as f64,
            est.mean.re,
            est.mean.im,
            est.std_error_re,
            est.std_error_im,
            (est.mean - truth).norm(),
            2.0 * est.std_error(),
            est.elapsed_s
        ));
    }
    match report {
        Ok(rep) => {
            s.push_str(&format!(
                "# fitted weak order: {:.3} (2-sigma CI [{:.3}, {:.3}])\n",
                rep.slope, rep.slope_ci.0, rep.slope_ci.1
            ));
        }
        Err(SimError::InsufficientSignal) => {
            s.push_str("# fitted weak order: insufficient signal (errors within noise)\n");
            let blocks = vec![(
                spec.kind.name().to_string(),
                rows.iter()
                    .map(|(n, e)| (*n, e.mean.re, 2.0 * e.std_error()))
                    .collect::<Vec<_>>(),
            )];
            s.push_str(&output::converge_plot_data(cfg.t, &blocks));
            write_out(common.out.as_deref(), &s).map_err(CliError::io)?;
            return Err(SimError::InsufficientSignal.into());
        }
        Err(e) => return Err(e.into()),
    }
    let blocks = vec![(
        spec.kind.name().to_string(),
        rows.iter().map(|(n, e)| (*n, e.mean.re, 2.0 * e.std_error())).collect::<Vec<_>>(),
    )];
    s.push_str(&output::converge_plot_data(cfg.t, &blocks));
    write_out(common.out.as_deref(), &s).map_err(CliError::io)
}

fn cmd_converge_max_trace(
    common: &CommonArgs,
    cfg: &ExperimentConfig,
    p: &WishartParams,
    spec: &SchemeSpec,
) -> Result<(), CliError> {
    let layout = RngLayout::new(cfg.seed);
    let report = oracle::pathwise_max_trace_study(
        &layout,
        p,
        cfg.t,
        &cfg.n_grid,
        cfg.n_paths,
        |n| {
            let dt = cfg.t / n as f64;
            let stepper = build_wishart_stepper(p, dt, spec)
                .map_err(|e| SimError::UnsupportedParams(e.to_string()))?;
            mc_path_estimate(
                &layout,
                cfg.n_paths,
                n,
                dt,
                &p.x,
                |rng, x, h| stepper.step(rng, x, h),
                || f64::NEG_INFINITY,
                |acc, state, last| {
                    *acc = acc.max(state.trace());
                    if last {
                        Some(Complex64::new(*acc, 0.0))
                    } else {
                        None
                    }
                },
            )
        },
    )?;

    let mut s = String::new();
    s.push_str(output::CONVERGE_SCHEMA);
    s.push('\n');
    s.push_str(&format!("# pathwise max-trace study, scheme {}\n", spec.kind.name()));
    s.push_str("n,scheme_value,scheme_se,exact_value,exact_se,diff,diff_se\n");
    for (i, n) in report.n_grid.iter().enumerate() {
        s.push_str(&format!(
            "{},{:.6},{:.2e},{:.6},{:.2e},{:.3e},{:.2e}\n",
            n,
            report.scheme[i].mean.re,
            report.scheme[i].std_error_re,
            report.exact[i].mean.re,
            report.exact[i].std_error_re,
            report.diffs[i],
            report.diff_std_errors[i]
        ));
    }
    match report.slope {
        Some(sl) => s.push_str(&format!("# fitted decay order of the difference: {sl:.3}\n")),
        None => s.push_str("# fitted decay order: insufficient signal\n"),
    }
    write_out(common.out.as_deref(), &s).map_err(CliError::io)
}

fn cmd_gourieroux(common: &CommonArgs) -> Result<(), CliError> {
    let cfg = common.load()?;
    let model = match &cfg.model {
        ModelConfig::Gourieroux(g) => g.build()?,
        _ => return Err(CliError::config("gourieroux needs the gourieroux model".to_string())),
    };
    let strike = match cfg.functional {
        FunctionalConfig::PutOnMax { strike } => strike,
        _ => return Err(CliError::config("gourieroux needs the put_on_max functional".to_string())),
    };
    let spec = cfg.scheme.build()?;
    let rate = model.rate;
    let t = cfg.t;
    let discount = (-rate * t).exp();

    let mut rows: Vec<(usize, McEstimate)> = Vec::new();
    for &n in &cfg.n_grid {
        let dt = t / n as f64;
        let stepper = GourierouxStepper::new(&model, dt, &spec)?;
        let layout = RngLayout::new(cfg.seed);
        let init = (model.s0.clone(), model.wishart.x.clone());
        let est = mc_estimate(
            &layout,
            cfg.n_paths,
            n,
            dt,
            &init,
            |rng, state, _| stepper.step(rng, &state.0, &state.1),
            |state| {
                let smax = state.0.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                Complex64::new(discount * (strike - smax).max(0.0), 0.0)
            },
        )?;
        rows.push((n, est));
    }

    let reference = rows.last().unwrap().1.clone();
    let mut s = String::new();
    s.push_str(output::GOURIEROUX_SCHEMA);
    s.push('\n');
    s.push_str(&format!(
        "# put-on-max price, K={strike}, r={rate}, T={t}; reference = finest grid (N={})\n",
        rows.last().unwrap().0
    ));
    s.push_str("n,price,std_error,dev_from_reference,elapsed_s\n");
    for (n, est) in &rows {
        s.push_str(&format!(
            "{},{:.6},{:.2e},{:.3e},{:.3}\n",
            n,
            est.mean.re,
            est.std_error_re,
            (est.mean.re - reference.mean.re).abs(),
            est.elapsed_s
        ));
    }
    write_out(common.out.as_deref(), &s).map_err(CliError::io)
}

fn cmd_charfn(common: &CommonArgs, orientation: &str) -> Result<(), CliError> {
    let cfg = common.load()?;
    let p = wishart_model(&cfg)?;
    let v = cfg.charfn_v()?;
    let val = match orientation {
        "table" => oracle::wishart_charfn_table(&p, cfg.t, &v)?,
        "laplace" => {
            if !oracle::laplace_domain_check(&p, cfg.t, &v) {
                return Err(SimError::OutsideDomain.into());
            }
            oracle::wishart_charfn(&p, cfg.t, &ComplexSymMatrix::real(v.clone()))?
        }
        other => {
            return Err(CliError::config(format!(
                "unknown orientation '{other}' (expected table or laplace)"
            )))
        }
    };
    let content = match common.format {
        Format::Csv => format!("re,im\n{:.12},{:.12}\n", val.re, val.im),
        Format::Json => {
            serde_json::to_string_pretty(&serde_json::json!({
                "orientation": orientation,
                "re": val.re,
                "im": val.im,
            }))
            .expect("serializable")
                + "\n"
        }
    };
    write_out(common.out.as_deref(), &content).map_err(CliError::io)
}

fn run() -> Result<(), CliError> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Sample { common, full_paths } => cmd_sample(common, *full_paths),
        Command::Table1 { common } => cmd_table1(common),
        Command::Converge { common } => cmd_converge(common),
        Command::Gourieroux { common } => cmd_gourieroux(common),
        Command::Charfn { common, orientation } => cmd_charfn(common, orientation),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
