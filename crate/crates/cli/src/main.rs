//! `hybrid-averager` command-line runner.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hybrid_averager::averaging::{self, log_spaced};
use hybrid_averager::models::hopper::{self, Mode};
use hybrid_averager::models::Model;
use hybrid_averager::report::{csv_num, fmt_f64, Csv, Record};
use hybrid_averager::stability::{self, Verdict};
use hybrid_averager::suite;
use hybrid_averager::{flow, register_system, Error, Settings, SystemHandle};
use nalgebra::DVector;

const EXIT_NEGATIVE: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

/// Gap order a sweep must reach for a zero exit status.
const GAP_ORDER_MIN: f64 = 1.75;

#[derive(Parser, Debug)]
#[command(name = "hybrid-averager", version, about = "Averaging and stability analysis for single-mode hybrid systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate the hybrid system next to its averaged model.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10)]
        strides: usize,
        /// Initial slow state (hopper: touchdown amplitude in m). Defaults to x₂*.
        #[arg(long)]
        a_init: Option<f64>,
        /// Samples per stride for models without a physical simulator.
        #[arg(long, default_value_t = 40)]
        samples: usize,
    },
    /// Compute the first-order stability certificate at x₂*.
    Certify {
        #[command(flatten)]
        common: Common,
    },
    /// Continue the fixed point over log-spaced ε and fit convergence orders.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.01)]
        eps_min: f64,
        #[arg(long, default_value_t = 0.5)]
        eps_max: f64,
        #[arg(long, default_value_t = 8)]
        points: usize,
    },
    /// Run the property suite against one model.
    Check {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// hopper, nonhyperbolic or classical
    model: String,
    /// TOML file of numerical tolerances.
    #[arg(long)]
    settings: Option<PathBuf>,
    /// Directory for the report record and CSV series.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print nothing on success.
    #[arg(long)]
    quiet: bool,
    #[command(flatten)]
    params: ParamOverrides,
}

#[derive(Args, Debug, Default)]
struct ParamOverrides {
    #[arg(long, allow_negative_numbers = true)]
    omega: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    k: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    beta: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    g: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    z0: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    eps: Option<f64>,
    #[arg(long = "x1-star", allow_negative_numbers = true)]
    x1_star: Option<f64>,
}

impl ParamOverrides {
    fn apply(&self, model: &mut Model) -> Result<(), Error> {
        let pairs = [
            ("omega", self.omega),
            ("k", self.k),
            ("beta", self.beta),
            ("g", self.g),
            ("z0", self.z0),
            ("eps", self.eps),
            ("x1_star", self.x1_star),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                model.set(key, v)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_usage() {
            Failure::Usage(e.to_string())
        } else {
            Failure::Numerical(e.to_string())
        }
    }
}

/// Files produced by one command; written under `--out` or echoed to stdout.
struct Output {
    record_name: &'static str,
    record: Record,
    csv: Option<(&'static str, Csv)>,
    summary: String,
    positive: bool,
}

struct Context {
    model: Model,
    settings: Settings,
    system: SystemHandle,
}

fn load(common: &Common) -> Result<Context, Failure> {
    let settings = match &common.settings {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
            Settings::from_toml_str(&text)?
        }
        None => Settings::default(),
    };
    let mut model = Model::by_name(&common.model)?;
    common.params.apply(&mut model)?;
    let system = register_system(model.system()?, &settings)?;
    Ok(Context { model, settings, system })
}

fn header(kind: &str, ctx: &Context) -> Record {
    let mut r = Record::new(kind);
    r.str("model", ctx.model.name());
    r.section("params");
    for (k, v) in ctx.model.params() {
        r.num(k, v);
    }
    r
}

fn simulate(ctx: &Context, strides: usize, a_init: Option<f64>, samples: usize) -> Result<Output, Failure> {
    if strides == 0 {
        return Err(Failure::Usage("--strides must be at least 1".into()));
    }
    let sys = &ctx.system;
    let s = &ctx.settings;
    let eps = ctx.model.eps();
    let x0 = match a_init {
        Some(a) => DVector::from_element(sys.n, a),
        None => sys.x2_star().clone(),
    };
    sys.check_slow(&x0)?;

    let mut csv = Csv::new(&["t", "mode", "z", "zdot", "theta", "a", "a_averaged", "residual"]);
    let touchdowns: Vec<f64>;
    let mut max_residual: f64 = 0.0;

    if let Model::Hopper(p) = &ctx.model {
        let traj = hopper::simulate_physical_hopper(*p, x0[0], strides, s)?;
        let avg = averaging::averaged_hybrid_samples(sys, &x0, eps, &hopper::averaging_samples(&traj), s)?;
        for i in 0..traj.times.len() {
            let residual = traj.a[i] - avg[i][0];
            max_residual = max_residual.max(residual.abs());
            csv.row(&[
                fmt_f64(traj.times[i]),
                traj.mode[i].as_str().into(),
                fmt_f64(traj.z[i]),
                fmt_f64(traj.zdot[i]),
                if traj.mode[i] == Mode::Flight { String::new() } else { csv_num(traj.theta[i]) },
                fmt_f64(traj.a[i]),
                fmt_f64(avg[i][0]),
                fmt_f64(residual),
            ]);
        }
        touchdowns = traj.touchdown_amplitudes();
    } else {
        let run = flow::simulate_hybrid(sys, &x0, eps, strides, samples.max(2), s)?;
        let keys: Vec<(usize, f64)> = run
            .stride
            .iter()
            .zip(&run.states)
            .map(|(&k, x)| (k, x.x1.max(0.0)))
            .collect();
        let avg = averaging::averaged_hybrid_samples(sys, &x0, eps, &keys, s)?;
        for i in 0..run.times.len() {
            let residual = run.states[i].x2[0] - avg[i][0];
            max_residual = max_residual.max(residual.abs());
            csv.row(&[
                fmt_f64(run.times[i]),
                "flow".into(),
                String::new(),
                String::new(),
                fmt_f64(run.states[i].x1),
                fmt_f64(run.states[i].x2[0]),
                fmt_f64(avg[i][0]),
                fmt_f64(residual),
            ]);
        }
        touchdowns = run.section_states.iter().map(|v| v[0]).collect();
    }
    let keys: Vec<(usize, f64)> = (0..touchdowns.len()).map(|k| (k, 0.0)).collect();
    let stride_starts: Vec<f64> = averaging::averaged_hybrid_samples(sys, &x0, eps, &keys, s)?.iter().map(|v| v[0]).collect();
    let stride_residual = touchdowns.iter().zip(&stride_starts).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));

    let mut r = header("simulation", ctx);
    r.section("run").int("strides", strides as i64).num("a_init", x0[0]);
    r.section("result")
        .nums("a_stride", &touchdowns)
        .nums("a_averaged_stride", &stride_starts)
        .num("max_abs_residual_stride", stride_residual)
        .num("max_abs_residual", max_residual)
        .num("a_final", *touchdowns.last().unwrap_or(&f64::NAN));
    r.settings(s);
    Ok(Output {
        record_name: "simulation.toml",
        record: r,
        csv: Some(("trajectory.csv", csv)),
        summary: format!(
            "{} strides of {}: max |a − a_averaged| {:.3e} (per stride {:.3e})",
            strides,
            ctx.model.name(),
            max_residual,
            stride_residual
        ),
        positive: true,
    })
}

fn certify(ctx: &Context) -> Result<Output, Failure> {
    let sys = &ctx.system;
    let s = &ctx.settings;
    let grid = averaging::default_eps_grid(sys);
    let e = averaging::extract_taylor_expansion(sys, &grid, &sys.slow_samples(), s)?;
    let c = stability::certify_orthogonal_reset(sys, &e, s)?;

    let mut r = header("certificate", ctx);
    r.section("expansion")
        .matrix("s0", &c.s0)
        .matrix("s1", &c.s1)
        .matrix("s2", &e.s2)
        .num("residual_order", e.residual_order)
        .bool("residual_order_ok", e.order_ok(s))
        .num("s0_constancy_defect", e.s0_constancy_defect)
        .num("fit_residual", e.fit_residual)
        .nums("eps_grid", &e.eps_grid);
    r.section("certificate")
        .matrix("dfbar", &c.dfbar)
        .str("w_form", c.form.as_str())
        .matrix("w", &c.w)
        .nums("symmetric_part_eigs", &c.symmetric_part_eigs)
        .str("verdict", c.verdict.as_str())
        .matrix("w_expanded", &c.w_expanded)
        .nums("symmetric_part_eigs_expanded", &c.symmetric_part_eigs_expanded)
        .str("verdict_expanded", c.verdict_expanded.as_str())
        .bool("forms_disagree", c.forms_disagree)
        .num("s0_orthogonality_defect", c.s0_orthogonality_defect)
        .num("w_sigma_min", c.w_sigma_min)
        .bool("unity_blocks_diagonal", c.unity_blocks_diagonal);
    r.section("registration").strs("flags", &sys.report.flags);
    r.settings(s);

    let max_eig = c.symmetric_part_eigs.last().copied().unwrap_or(f64::NAN);
    Ok(Output {
        record_name: "certificate.toml",
        record: r,
        csv: None,
        summary: format!("{}: verdict {} (max eig of W + Wᵀ {:.6e})", ctx.model.name(), c.verdict.as_str(), max_eig),
        positive: c.verdict == Verdict::Stable,
    })
}

fn sweep(ctx: &Context, eps_min: f64, eps_max: f64, points: usize) -> Result<Output, Failure> {
    if points < 5 {
        return Err(Failure::Usage(format!("--points must be at least 5, got {points}")));
    }
    if !(eps_min > 0.0 && eps_max > eps_min) {
        return Err(Failure::Usage("need 0 < --eps-min < --eps-max".into()));
    }
    let s = &ctx.settings;
    let report = stability::epsilon_sweep(&ctx.system, &log_spaced(eps_min, eps_max, points), s)?;

    let mut csv = Csv::new(&["eps", "eig_gap", "drift", "fp_residual"]);
    for p in &report.points {
        csv.row(&[fmt_f64(p.eps), csv_num(p.eig_gap), csv_num(p.drift), csv_num(p.fp_residual)]);
    }
    let failures: Vec<String> = report
        .points
        .iter()
        .filter_map(|p| p.failure.as_ref().map(|f| format!("eps {}: {f}", fmt_f64(p.eps))))
        .collect();
    let gap = report.fitted_gap_order.unwrap_or(f64::NAN);

    let mut r = header("sweep", ctx);
    r.section("sweep")
        .nums("eps_values", &report.eps_values)
        .nums("eig_gaps", &report.eig_gaps)
        .nums("fixed_point_drifts", &report.fixed_point_drifts)
        .nums("fp_residuals", &report.points.iter().map(|p| p.fp_residual).collect::<Vec<_>>())
        .nums("spectral_radii", &report.points.iter().map(|p| p.spectral_radius).collect::<Vec<_>>())
        .num("fitted_gap_order", gap)
        .num("fitted_drift_order", report.fitted_drift_order)
        .bool("drift_below_resolution", report.drift_below_resolution)
        .num("continuation_constant", report.continuation_constant)
        .opt_num("quadratic_model_valid_to", report.quadratic_model_valid_to)
        .bool("non_hyperbolic", report.non_hyperbolic)
        .strs("failures", &failures);
    r.settings(s);

    Ok(Output {
        record_name: "sweep.toml",
        record: r,
        csv: Some(("sweep.csv", csv)),
        summary: format!(
            "{}: gap order {:.4}, drift order {:.4}, {} failed points",
            ctx.model.name(),
            gap,
            report.fitted_drift_order,
            failures.len()
        ),
        positive: gap >= GAP_ORDER_MIN,
    })
}

fn check(ctx: &Context) -> Result<Output, Failure> {
    let results = suite::run_property_suite(&ctx.system, ctx.model.eps(), &ctx.settings);
    let mut r = header("check", ctx);
    let mut lines = Vec::new();
    for p in &results {
        r.section(&format!("property.{}", p.name))
            .bool("passed", p.passed)
            .num("value", p.value)
            .num("tolerance", p.tolerance)
            .str("detail", &p.detail);
        let status = if p.passed { "PASS" } else { "FAIL" };
        lines.push(format!("{status} {}: {} ({})", p.name, fmt_f64(p.value), p.detail));
    }
    r.settings(&ctx.settings);
    if let Some(p) = results.iter().find(|p| p.errored) {
        return Err(Failure::Numerical(format!("{}: {}", p.name, p.detail)));
    }
    Ok(Output {
        record_name: "check.toml",
        record: r,
        csv: None,
        summary: lines.join("\n"),
        positive: results.iter().all(|p| p.passed),
    })
}

fn write_outputs(dir: &Path, out: &Output) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(out.record_name), out.record.render())?;
    if let Some((name, csv)) = &out.csv {
        fs::write(dir.join(name), csv.text())?;
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<(Output, Option<PathBuf>, bool), Failure> {
    let (common, output) = match &cli.command {
        Command::Simulate { common, strides, a_init, samples } => (common, simulate(&load(common)?, *strides, *a_init, *samples)),
        Command::Certify { common } => (common, certify(&load(common)?)),
        Command::Sweep { common, eps_min, eps_max, points } => (common, sweep(&load(common)?, *eps_min, *eps_max, *points)),
        Command::Check { common } => (common, check(&load(common)?)),
    };
    Ok((output?, common.out.clone(), common.quiet))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok((output, out_dir, quiet)) => {
            match &out_dir {
                Some(dir) => {
                    if let Err(e) = write_outputs(dir, &output) {
                        eprintln!("error: cannot write to {}: {e}", dir.display());
                        return ExitCode::from(EXIT_USAGE);
                    }
                    if !quiet {
                        println!("{}", output.summary);
                    }
                }
                None if !quiet => {
                    print!("{}", output.record.render());
                    eprintln!("{}", output.summary);
                }
                None => {}
            }
            if output.positive { ExitCode::SUCCESS } else { ExitCode::from(EXIT_NEGATIVE) }
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(EXIT_NUMERICAL)
        }
    }
}
