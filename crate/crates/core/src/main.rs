use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use treediff::calculus::{build_sequences, residual_integral_eq, TimeSeries};
use treediff::ctmc::{
    compare_to_diffusion, ctmc_snapshots, diffusion_snapshots, matched_start, simulate_ctmc,
    write_comparison_csv, AssignmentRule, CtmcConfig, ScalingSpec,
};
use treediff::det::{
    check_nonidling, geometric_times, growth_report, integrate_det_with, offtree_counterexample,
    ControlPath, StepScheme,
};
use treediff::grid::{Grid, PolicyField, ValueField};
use treediff::hjb::{boundary_sensitivity, extract_policy, solve_hjb, BoundaryMode, HjbOptions};
use treediff::io::{model_hash, write_paths_csv, ModelFile};
use treediff::model::{classify_case, ControlPoint, TreeCombinatorics, TreeModel};
use treediff::sim::{
    mc_cost, moment_curve, simulate_path, write_moments_csv, Interpolation, McConfig, Policy,
};
use treediff::Error;

#[derive(Parser)]
#[command(
    name = "treediff",
    version,
    about = "Controlled diffusions on buffer-station trees"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Model file (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Cap on worker threads.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Copy, Clone, ValueEnum)]
enum SchemeArg {
    Euler,
    Heun,
}

impl From<SchemeArg> for StepScheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Euler => StepScheme::Euler,
            SchemeArg::Heun => StepScheme::Heun,
        }
    }
}

#[derive(Copy, Clone, ValueEnum)]
enum BoundaryArg {
    Mc,
    Extrapolate,
}

#[derive(Copy, Clone, ValueEnum)]
enum InterpArg {
    Nearest,
    Linear,
}

#[derive(Subcommand)]
enum Command {
    /// Check the model and report its structure.
    Validate {
        #[command(flatten)]
        common: Common,
    },
    /// Simulate the controlled diffusion.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// `default`, `static:I,J` (labels), `random:RATE` or `field:PATH`.
        #[arg(long, default_value = "default")]
        policy: String,
        #[arg(long, value_enum, default_value_t = InterpArg::Nearest)]
        interp: InterpArg,
        /// Initial state, comma separated.
        #[arg(long)]
        x0: Option<String>,
        #[arg(long, default_value_t = 10.0)]
        horizon: f64,
        #[arg(long, default_value_t = 1e-2)]
        dt: f64,
        /// Paths for moment estimates at times 1, 2, 4, ... up to the horizon.
        #[arg(long, default_value_t = 0)]
        moment_paths: usize,
        #[arg(long, default_value_t = 2.0)]
        moment: f64,
    },
    /// Solve the HJB equation on a grid.
    SolveHjb {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.1)]
        h: f64,
        #[arg(long, value_enum, default_value_t = BoundaryArg::Mc)]
        boundary: BoundaryArg,
        #[arg(long, default_value_t = 200)]
        boundary_paths: usize,
        #[arg(long, default_value_t = 1e-2)]
        boundary_dt: f64,
        #[arg(long, default_value_t = 1e-8)]
        tolerance: f64,
        #[arg(long, default_value_t = 200)]
        max_iter: usize,
        /// Also re-solve on a box enlarged by this factor.
        #[arg(long)]
        sensitivity: Option<f64>,
    },
    /// Extract the minimizing control field from a solved value field.
    ExtractPolicy {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        value: PathBuf,
    },
    /// Monte Carlo discounted cost of a policy.
    EvaluatePolicy {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "default")]
        policy: String,
        #[arg(long, value_enum, default_value_t = InterpArg::Nearest)]
        interp: InterpArg,
        #[arg(long)]
        x0: Option<String>,
        #[arg(long, default_value_t = 1000)]
        paths: usize,
        #[arg(long, default_value_t = 1e-2)]
        dt: f64,
        #[arg(long)]
        horizon: Option<f64>,
        /// Value field to compare against.
        #[arg(long)]
        value: Option<PathBuf>,
        /// Allowed gap in standard errors.
        #[arg(long, default_value_t = 3.0)]
        k_se: f64,
        /// Allowed gap in grid spacings.
        #[arg(long, default_value_t = 5.0)]
        k_h: f64,
    },
    /// Integrate the deterministic system.
    DetRun {
        #[command(flatten)]
        common: Common,
        /// `w_i(t) = a_i + s_i t` given as `a1,a2,...:s1,s2,...`.
        #[arg(long)]
        driver: Option<String>,
        /// `smooth`, `vertices` or `static:I,J`.
        #[arg(long, default_value = "smooth")]
        control: String,
        #[arg(long, default_value_t = 5.0)]
        horizon: f64,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long, value_enum, default_value_t = SchemeArg::Euler)]
        scheme: SchemeArg,
    },
    /// Largest idleness under increasing drivers and random controls.
    NonidlingCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 50)]
        runs: usize,
        #[arg(long, default_value_t = 5.0)]
        horizon: f64,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
    },
    /// Closed-form trajectories of the non-tree counterexample.
    Counterexample {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10.0)]
        k: f64,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long, default_value_t = 5.0)]
        horizon: f64,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
    },
    /// Residual of the integral equation along an integrated trajectory.
    IntegralResidual {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 2e-3)]
        dt: f64,
        #[arg(long, default_value_t = 1.0)]
        horizon: f64,
        #[arg(long, value_enum, default_value_t = SchemeArg::Euler)]
        scheme: SchemeArg,
        /// Fail unless halving dt shrinks the residual by a factor in [1.7, 2.3].
        #[arg(long)]
        check_order: bool,
    },
    /// Simulate the n-th queueing system.
    Prelimit {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100)]
        n: u64,
        /// `default`, `static:I,J` or `track:U1,..|V1,..`.
        #[arg(long, default_value = "default")]
        rule: String,
        #[arg(long)]
        x0: Option<String>,
        #[arg(long, default_value_t = 1.0)]
        horizon: f64,
        #[arg(long, default_value_t = 1e-2)]
        sample_dt: f64,
    },
    /// Compare pre-limit and diffusion moments.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100)]
        n: u64,
        #[arg(long, default_value = "default")]
        rule: String,
        #[arg(long)]
        x0: Option<String>,
        #[arg(long, default_value = "1")]
        times: String,
        #[arg(long, default_value_t = 1000)]
        reps: usize,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        /// Fail when a gap exceeds this many combined standard errors.
        #[arg(long)]
        check: Option<f64>,
    },
}

/// Why a command stopped: a failed check (exit 1) or bad input (exit 2).
enum Failure {
    Check(String),
    Input(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NotConverged { .. } => Failure::Check(e.to_string()),
            other => Failure::Input(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

type Outcome = std::result::Result<(), Failure>;

fn bad(msg: impl Into<String>) -> Failure {
    Failure::Input(msg.into())
}

struct Run {
    out: PathBuf,
    seed: u64,
}

impl Run {
    fn start(
        name: &str,
        common: &Common,
        model: Option<&ModelFile>,
    ) -> std::result::Result<Self, Failure> {
        if let Some(n) = common.threads {
            if n == 0 {
                return Err(bad("--threads must be positive"));
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| bad(e.to_string()))?;
        }
        fs::create_dir_all(&common.out)?;
        let manifest = json!({
            "command": name,
            "arguments": std::env::args().skip(1).collect::<Vec<_>>(),
            "config": common.config.as_ref().map(|p| p.display().to_string()),
            "model_hash": model.map(|m| m.hash()),
            "seed": common.seed,
            "threads": common.threads,
            "version": env!("CARGO_PKG_VERSION"),
        });
        let run = Run {
            out: common.out.clone(),
            seed: common.seed,
        };
        run.write_json("manifest.json", &manifest)?;
        Ok(run)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn create(&self, name: &str) -> std::result::Result<BufWriter<File>, Failure> {
        Ok(BufWriter::new(File::create(self.path(name))?))
    }

    fn write_json(&self, name: &str, value: &Value) -> Outcome {
        let mut f = self.create(name)?;
        serde_json::to_writer_pretty(&mut f, value).map_err(|e| bad(e.to_string()))?;
        writeln!(f)?;
        Ok(())
    }
}

fn load_model(common: &Common) -> std::result::Result<ModelFile, Failure> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| bad("this command needs --config <model file>"))?;
    ModelFile::read(path).map_err(|e| bad(format!("{}: {e}", path.display())))
}

fn parse_list(text: &str) -> std::result::Result<Vec<f64>, Failure> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| bad(format!("not a number: {s:?}")))
        })
        .collect()
}

fn parse_x0(text: Option<&str>, classes: usize) -> std::result::Result<Vec<f64>, Failure> {
    let x = match text {
        Some(t) => parse_list(t)?,
        None => vec![0.0; classes],
    };
    if x.len() != classes {
        return Err(bad(format!(
            "--x0 needs {classes} entries, got {}",
            x.len()
        )));
    }
    Ok(x)
}

/// `I,J` in global labels to zero-based class and station indices.
fn parse_pair(text: &str, model: &TreeModel) -> std::result::Result<(usize, usize), Failure> {
    let parts: Vec<&str> = text.split(',').collect();
    let [i, j] = parts.as_slice() else {
        return Err(bad(format!("expected two labels `I,J`, got {text:?}")));
    };
    let i: usize = i
        .trim()
        .parse()
        .map_err(|_| bad(format!("bad class label {i:?}")))?;
    let j: usize = j
        .trim()
        .parse()
        .map_err(|_| bad(format!("bad station label {j:?}")))?;
    let classes = model.classes();
    if i == 0 || i > classes || j <= classes || j > classes + model.stations() {
        return Err(bad(format!(
            "labels must be a class in 1..={classes} and a station in {}..={}",
            classes + 1,
            classes + model.stations()
        )));
    }
    Ok((i - 1, j - classes - 1))
}

fn parse_policy(
    text: &str,
    interp: InterpArg,
    model: &TreeModel,
) -> std::result::Result<Policy, Failure> {
    if text == "default" {
        return Ok(Policy::default_static(model)?);
    }
    let (kind, rest) = text
        .split_once(':')
        .ok_or_else(|| bad(format!("unknown policy {text:?}")))?;
    let policy = match kind {
        "static" => {
            let (class, station) = parse_pair(rest, model)?;
            Policy::StaticPriority { class, station }
        }
        "random" => Policy::RandomSwitching {
            rate: rest
                .parse()
                .map_err(|_| bad(format!("bad switching rate {rest:?}")))?,
        },
        "field" => {
            let field = PolicyField::load(Path::new(rest))?;
            Policy::GridMarkov {
                field: Arc::new(field),
                interpolation: match interp {
                    InterpArg::Nearest => Interpolation::Nearest,
                    InterpArg::Linear => Interpolation::Multilinear,
                },
            }
        }
        _ => return Err(bad(format!("unknown policy kind {kind:?}"))),
    };
    policy.check(model)?;
    Ok(policy)
}

fn parse_rule(text: &str, model: &TreeModel) -> std::result::Result<AssignmentRule, Failure> {
    if text == "default" {
        return match Policy::default_static(model)? {
            Policy::StaticPriority { class, station } => {
                Ok(AssignmentRule::StaticPriority { class, station })
            }
            _ => unreachable!("the default policy is a static priority"),
        };
    }
    let (kind, rest) = text
        .split_once(':')
        .ok_or_else(|| bad(format!("unknown rule {text:?}")))?;
    match kind {
        "static" => {
            let (class, station) = parse_pair(rest, model)?;
            Ok(AssignmentRule::StaticPriority { class, station })
        }
        "track" => {
            let (u, v) = rest
                .split_once('|')
                .ok_or_else(|| bad("tracking rule needs `U1,..|V1,..`"))?;
            let point = ControlPoint::new(parse_list(u)?, parse_list(v)?)?;
            point.check_dims(model.classes(), model.stations())?;
            Ok(AssignmentRule::Tracking(point))
        }
        _ => Err(bad(format!("unknown rule kind {kind:?}"))),
    }
}

fn rule_as_policy(rule: &AssignmentRule) -> Policy {
    match rule {
        AssignmentRule::StaticPriority { class, station } => Policy::StaticPriority {
            class: *class,
            station: *station,
        },
        AssignmentRule::Tracking(p) => Policy::Fixed(p.clone()),
    }
}

fn samples(horizon: f64, dt: f64) -> std::result::Result<usize, Failure> {
    if !(dt > 0.0) || !(horizon > 0.0) || !dt.is_finite() || !horizon.is_finite() {
        return Err(bad("horizon and dt must be positive"));
    }
    Ok((horizon / dt).round() as usize + 1)
}

fn build_controls(
    spec: &str,
    model: &TreeModel,
    dt: f64,
    len: usize,
    rng: &mut ChaCha8Rng,
) -> std::result::Result<ControlPath, Failure> {
    let (classes, stations) = (model.classes(), model.stations());
    Ok(match spec {
        "smooth" => ControlPath::random_smooth(rng, classes, stations, dt, len)?,
        "vertices" => ControlPath::random_vertices(rng, classes, stations, dt, len, 8)?,
        other => {
            let rest = other
                .strip_prefix("static:")
                .ok_or_else(|| bad(format!("unknown control {other:?}")))?;
            let (i, j) = parse_pair(rest, model)?;
            ControlPath::constant(ControlPoint::vertex(classes, stations, i, j), dt, len)?
        }
    })
}

fn write_series_csv(run: &Run, name: &str, cols: &[(String, &TimeSeries)]) -> Outcome {
    let mut f = run.create(name)?;
    write_paths_csv(&mut f, cols)?;
    f.flush()?;
    Ok(())
}

fn write_value_csv(run: &Run, name: &str, value: &ValueField) -> Outcome {
    let mut f = run.create(name)?;
    let grid = &value.grid;
    let header: Vec<String> = (1..=grid.dims()).map(|i| format!("x_{i}")).collect();
    writeln!(f, "{},value", header.join(","))?;
    for (n, v) in value.values.iter().enumerate() {
        let coords: Vec<String> = grid.point(n).iter().map(|c| c.to_string()).collect();
        writeln!(f, "{},{v}", coords.join(","))?;
    }
    f.flush()?;
    Ok(())
}

fn write_policy_csv(run: &Run, name: &str, policy: &PolicyField) -> Outcome {
    let mut f = run.create(name)?;
    let grid = &policy.grid;
    let classes = policy.classes();
    let mut header: Vec<String> = (1..=grid.dims()).map(|i| format!("x_{i}")).collect();
    header.extend((1..=classes).map(|i| format!("u_{i}")));
    header.extend((1..=policy.stations()).map(|j| format!("v_{}", classes + j)));
    writeln!(f, "{}", header.join(","))?;
    for (n, c) in policy.controls.iter().enumerate() {
        let row: Vec<String> = grid
            .point(n)
            .iter()
            .chain(&c.u)
            .chain(&c.v)
            .map(|v| v.to_string())
            .collect();
        writeln!(f, "{}", row.join(","))?;
    }
    f.flush()?;
    Ok(())
}

fn validate(common: &Common) -> Outcome {
    let file = load_model(common)?;
    let run = Run::start("validate", common, Some(&file))?;
    let model = &file.model;
    let report = model.validate();
    let cases: Option<Vec<String>> = file.cost.as_ref().map(|c| {
        classify_case(model, c)
            .into_iter()
            .map(|r| r.roman().to_string())
            .collect()
    });
    println!("classes: {}", model.classes());
    println!("stations: {}", model.stations());
    match report.diameter {
        Some(d) => println!("diameter: {d}"),
        None => println!("diameter: undefined (not connected)"),
    }
    for m in report.messages() {
        println!("violation: {m}");
    }
    if let Some(c) = &cases {
        println!("regimes: {}", c.join(","));
    }
    run.write_json(
        "validate.json",
        &json!({
            "valid": report.is_valid(),
            "connected": report.connected,
            "diameter": report.diameter,
            "violations": report.messages(),
            "regimes": cases,
            "model_hash": file.hash(),
        }),
    )?;
    if report.is_valid() {
        println!("valid");
        Ok(())
    } else {
        Err(Failure::Check("model is not valid".into()))
    }
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    common: &Common,
    policy: &str,
    interp: InterpArg,
    x0: Option<&str>,
    horizon: f64,
    dt: f64,
    moment_paths: usize,
    moment: f64,
) -> Outcome {
    let file = load_model(common)?;
    let run = Run::start("simulate", common, Some(&file))?;
    let model = &file.model;
    let x0 = parse_x0(x0, model.classes())?;
    let policy = parse_policy(policy, interp, model)?;
    let path = simulate_path(model, &x0, &policy, horizon, dt, run.seed)?;
    let mut f = run.create("path.csv")?;
    path.write_csv(&mut f)?;
    f.flush()?;
    println!("policy: {}", policy.describe(model.classes()));
    println!("terminal state: {:?}", path.terminal());
    if moment_paths > 0 {
        let times: Vec<f64> = geometric_times(64)
            .into_iter()
            .take_while(|&t| t <= horizon + 1e-12)
            .collect();
        let curve = moment_curve(
            model,
            &policy,
            &x0,
            moment,
            &times,
            moment_paths,
            dt,
            run.seed,
        )?;
        let mut f = run.create("moments.csv")?;
        write_moments_csv(&mut f, &curve)?;
        f.flush()?;
        let means: Vec<f64> = curve.iter().map(|m| m.mean).collect();
        let growth = growth_report(&times, &means).ok();
        if let Some(g) = &growth {
            println!(
                "growth: polynomial rss {:.4e}, exponential rss {:.4e}",
                g.polynomial_rss, g.exponential_rss
            );
        }
        run.write_json(
            "growth.json",
            &json!({
                "moment": moment,
                "times": times,
                "means": means,
                "polynomial_rss": growth.map(|g| g.polynomial_rss),
                "exponential_rss": growth.map(|g| g.exponential_rss),
                "polynomial_slope": growth.map(|g| g.polynomial_slope),
                "polynomial_fits_better": growth.map(|g| g.polynomial_fits_better()),
            }),
        )?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn solve(
    common: &Common,
    h: f64,
    boundary: BoundaryArg,
    boundary_paths: usize,
    boundary_dt: f64,
    tolerance: f64,
    max_iter: usize,
    sensitivity: Option<f64>,
) -> Outcome {
    let file = load_model(common)?;
    let run = Run::start("solve-hjb", common, Some(&file))?;
    let model = &file.model;
    let cost = file.require_cost()?;
    let grid = Grid::default_box(model, h)?;
    let options = HjbOptions {
        boundary: match boundary {
            BoundaryArg::Mc => BoundaryMode::MonteCarlo {
                n_paths: boundary_paths,
                dt: boundary_dt,
                seed: run.seed,
            },
            BoundaryArg::Extrapolate => BoundaryMode::Extrapolate,
        },
        tolerance,
        max_iterations: max_iter,
    };
    let solution = match solve_hjb(model, cost, &grid, &options) {
        Ok(s) => s,
        Err(Error::NotConverged {
            iterations,
            last_update,
            history,
        }) => {
            run.write_json(
                "hjb_report.json",
                &json!({"converged": false, "iterations": iterations,
                        "last_update": last_update, "history": history}),
            )?;
            return Err(Failure::Check(format!(
                "no convergence after {iterations} iterations (last update {last_update:e})"
            )));
        }
        Err(e) => return Err(e.into()),
    };
    solution.value.save(&run.path("value.bin"))?;
    write_value_csv(&run, "value.csv", &solution.value)?;
    let sens = match sensitivity {
        Some(factor) => Some(boundary_sensitivity(model, cost, &grid, &options, factor)?),
        None => None,
    };
    let r = &solution.report;
    println!("grid points: {}", grid.len());
    println!("iterations: {}", r.iterations);
    println!(
        "last update: {:e}",
        r.history.last().copied().unwrap_or(0.0)
    );
    println!("interior residual: {:e}", r.interior_residual);
    if let Some(s) = sens {
        println!("boundary sensitivity: {s:e}");
    }
    run.write_json(
        "hjb_report.json",
        &json!({
            "converged": true,
            "grid_points": grid.len(),
            "h": h,
            "iterations": r.iterations,
            "history": r.history,
            "switches": r.switches,
            "linear_solver": format!("{:?}", r.linear_solver),
            "interior_residual": r.interior_residual,
            "boundary_sensitivity": sens,
        }),
    )
}

fn extract(common: &Common, value: &Path) -> Outcome {
    let file = load_model(common)?;
    let run = Run::start("extract-policy", common, Some(&file))?;
    let cost = file.require_cost()?;
    let field = ValueField::load(value)?;
    let hash = model_hash(&file.model, Some(cost));
    if field.model_hash != hash {
        return Err(bad("the value field was solved for a different model"));
    }
    let policy = extract_policy(&field, &file.model, cost)?;
    policy.save(&run.path("policy.bin"))?;
    write_policy_csv(&run, "policy.csv", &policy)?;
    let vertices = policy
        .controls
        .iter()
        .filter(|c| c.as_vertex().is_some())
        .count();
    println!("grid points: {}", policy.controls.len());
    println!("vertex controls: {vertices}");
    run.write_json(
        "policy_report.json",
        &json!({"grid_points": policy.controls.len(), "vertex_controls": vertices}),
    )
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    common: &Common,
    policy: &str,
    interp: InterpArg,
    x0: Option<&str>,
    paths: usize,
    dt: f64,
    horizon: Option<f64>,
    value: Option<&Path>,
    k_se: f64,
    k_h: f64,
) -> Outcome {
    let file = load_model(common)?;
    let run = Run::start("evaluate-policy", common, Some(&file))?;
    let model = &file.model;
    let cost = file.require_cost()?;
    let x0 = parse_x0(x0, model.classes())?;
    let policy = parse_policy(policy, interp, model)?;
    let config = McConfig {
        n_paths: paths,
        horizon,
        dt,
        seed: run.seed,
    };
    let est = mc_cost(model, cost, &x0, &policy, &config)?;
    println!("policy: {}", policy.describe(model.classes()));
    println!(
        "cost: {:.6} (standard error {:.2e}, tail bound {:.2e})",
        est.mean, est.std_error, est.tail_bound
    );
    let mut report = json!({
        "x0": x0,
        "policy": policy.describe(model.classes()),
        "mean": est.mean,
        "std_error": est.std_error,
        "tail_bound": est.tail_bound,
        "n_paths": est.n_paths,
        "horizon": est.horizon,
        "dt": est.dt,
    });
    let mut verdict = Ok(());
    if let Some(path) = value {
        let field = ValueField::load(path)?;
        if field.grid.dims() != model.classes() {
            return Err(bad("value field dimension does not match the model"));
        }
        let f = field.at(&x0);
        let h = (0..field.grid.dims())
            .map(|d| field.grid.h(d))
            .fold(0.0, f64::max);
        let tolerance = k_se * est.std_error + k_h * h;
        let gap = (f - est.mean).abs();
        println!("value: {f:.6}, gap {gap:.3e}, tolerance {tolerance:.3e}");
        report["value"] = json!(f);
        report["gap"] = json!(gap);
        report["tolerance"] = json!(tolerance);
        report["agrees"] = json!(gap <= tolerance);
        if gap > tolerance {
            verdict = Err(Failure::Check(format!(
                "value {f} and Monte Carlo cost {} differ by {gap:e} > {tolerance:e}",
                est.mean
            )));
        }
    }
    run.write_json("evaluation.json", &report)?;
    verdict
}

fn parse_driver(
    text: Option<&str>,
    classes: usize,
    dt: f64,
    horizon: f64,
) -> std::result::Result<Vec<TimeSeries>, Failure> {
    let (a, s) = match text {
        Some(t) => {
            let (a, s) = t
                .split_once(':')
                .ok_or_else(|| bad("driver must be `a1,..:s1,..`"))?;
            (parse_list(a)?, parse_list(s)?)
        }
        None => (vec![1.0; classes], vec![1.0; classes]),
    };
    if a.len() != classes || s.len() != classes {
        return Err(bad(format!("driver needs {classes} offsets and slopes")));
    }
    (0..classes)
        .map(|i| Ok(TimeSeries::from_fn(dt, horizon, |t| a[i] + s[i] * t)?))
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn det_run(
    common: &Common,
    driver: Option<&str>,
    control: &str,
    horizon: f64,
    dt: f64,
    scheme: SchemeArg,
) -> Outcome {
    let file = load_model(common)?;
    let run = Run::start("det-run", common, Some(&file))?;
    let model = &file.model;
    let w = parse_driver(driver, model.classes(), dt, horizon)?;
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
    let controls = build_controls(control, model, dt, w[0].len(), &mut rng)?;
    let traj = integrate_det_with(model, &w, &controls, scheme.into())?;
    let mut f = run.create("det.csv")?;
    traj.write_csv(model, &mut f)?;
    f.flush()?;
    let idle = traj.idleness_norm().into_iter().fold(0.0, f64::max);
    let state = traj.state_norm().into_iter().fold(0.0, f64::max);
    println!("max idleness: {idle:e}");
    println!("max state norm: {state:.6}");
    run.write_json(
        "det_report.json",
        &json!({"max_idleness": idle, "max_state_norm": state, "samples": traj.len()}),
    )
}

fn nonidling(common: &Common, runs: usize, horizon: f64, dt: f64, tol: f64) -> Outcome {
    let file = load_model(common)?;
    let run = Run::start("nonidling-check", common, Some(&file))?;
    let model = &file.model;
    let w = parse_driver(None, model.classes(), dt, horizon)?;
    let len = samples(horizon, dt)?;
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
    let mut worst = 0.0_f64;
    let mut hypotheses = true;
    let mut per_run = Vec::with_capacity(runs);
    for r in 0..runs {
        let controls = if r % 2 == 0 {
            ControlPath::random_smooth(&mut rng, model.classes(), model.stations(), dt, len)?
        } else {
            ControlPath::random_vertices(&mut rng, model.classes(), model.stations(), dt, len, 8)?
        };
        let report = check_nonidling(model, &w, &controls)?;
        hypotheses &= report.hypotheses_hold();
        worst = worst.max(report.max_idleness);
        per_run.push(report.max_idleness);
    }
    println!("runs: {runs}");
    println!("hypotheses hold: {hypotheses}");
    println!("max idleness: {worst:e}");
    run.write_json(
        "nonidling.json",
        &json!({"runs": runs, "hypotheses_hold": hypotheses, "max_idleness": worst,
                "per_run": per_run, "tolerance": tol}),
    )?;
    if hypotheses && worst > tol {
        return Err(Failure::Check(format!(
            "idleness {worst:e} exceeds {tol:e}"
        )));
    }
    Ok(())
}

fn counterexample(common: &Common, k: f64, dt: f64, horizon: f64, tol: f64) -> Outcome {
    let run = Run::start("counterexample", common, None)?;
    let ex = offtree_counterexample(k, dt, horizon)?;
    let names = ["psi_1_3", "psi_1_4", "psi_2_3", "psi_2_4"];
    let mut cols: Vec<(String, &TimeSeries)> =
        vec![("x_1".into(), &ex.x[0]), ("x_2".into(), &ex.x[1])];
    for (name, s) in names.iter().zip(ex.psi.iter().flatten()) {
        cols.push(((*name).into(), s));
    }
    write_series_csv(&run, "counterexample.csv", &cols)?;
    let res = ex.residuals.max();
    let in_band = ex.sup_state_norm >= 0.99 * k && ex.sup_state_norm <= 1.01 * k;
    println!("k: {k}");
    println!("max residual: {res:e}");
    println!("sup state norm: {:.6}", ex.sup_state_norm);
    println!("sup driver norm: {}", ex.sup_driver_norm);
    run.write_json(
        "counterexample.json",
        &json!({
            "k": k,
            "residuals": {
                "state": ex.residuals.state,
                "class_balance": ex.residuals.class_balance,
                "station_balance": ex.residuals.station_balance,
                "sign": ex.residuals.sign,
                "complementarity": ex.residuals.complementarity,
            },
            "max_residual": res,
            "sup_state_norm": ex.sup_state_norm,
            "sup_driver_norm": ex.sup_driver_norm,
            "tolerance": tol,
        }),
    )?;
    if res > tol || !in_band {
        return Err(Failure::Check(format!(
            "residual {res:e} or state norm {} outside tolerance",
            ex.sup_state_norm
        )));
    }
    Ok(())
}

fn residual_at(
    model: &TreeModel,
    seqs: &treediff::calculus::OperatorSequences,
    seed: u64,
    dt: f64,
    horizon: f64,
    scheme: StepScheme,
) -> std::result::Result<f64, Failure> {
    let len = samples(horizon, dt)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let controls =
        ControlPath::random_smooth(&mut rng, model.classes(), model.stations(), dt, len)?;
    let w: Vec<TimeSeries> = (0..model.classes())
        .map(|i| {
            let phase = i as f64;
            TimeSeries::from_fn(dt, horizon, move |t| {
                1.0 + t + 0.5 * (2.0 * t + phase).sin()
            })
        })
        .collect::<treediff::Result<_>>()?;
    let traj = integrate_det_with(model, &w, &controls, scheme)?;
    Ok(residual_integral_eq(seqs, &traj.w, &traj.y, &traj.z)?.sup_abs())
}

fn integral_residual(
    common: &Common,
    dt: f64,
    horizon: f64,
    scheme: SchemeArg,
    check_order: bool,
) -> Outcome {
    let file = load_model(common)?;
    let run = Run::start("integral-residual", common, Some(&file))?;
    let model = &file.model;
    let comb = TreeCombinatorics::rooted_at_first_class(model)?;
    let seqs = build_sequences(model, &comb)?;
    run.write_json("sequences.json", &seqs.to_json())?;
    let coarse = residual_at(model, &seqs, run.seed, dt, horizon, scheme.into())?;
    let fine = residual_at(model, &seqs, run.seed, dt / 2.0, horizon, scheme.into())?;
    let ratio = coarse / fine;
    println!("residual at dt={dt}: {coarse:e}");
    println!("residual at dt={}: {fine:e}", dt / 2.0);
    println!("ratio: {ratio:.4}");
    run.write_json(
        "residual.json",
        &json!({"dt": dt, "residual": coarse, "half_dt_residual": fine, "ratio": ratio}),
    )?;
    if check_order && !(1.7..=2.3).contains(&ratio) {
        return Err(Failure::Check(format!(
            "convergence ratio {ratio:.4} outside [1.7, 2.3]"
        )));
    }
    Ok(())
}

fn prelimit(
    common: &Common,
    n: u64,
    rule: &str,
    x0: Option<&str>,
    horizon: f64,
    sample_dt: f64,
) -> Outcome {
    let file = load_model(common)?;
    let run = Run::start("prelimit", common, Some(&file))?;
    let model = &file.model;
    let x0 = parse_x0(x0, model.classes())?;
    let rule = parse_rule(rule, model)?;
    let scaling = ScalingSpec::new(model, n)?;
    let config = CtmcConfig {
        horizon,
        sample_dt,
        seed: run.seed,
    };
    let path = simulate_ctmc(model, &scaling, &rule, &x0, &config, 0)?;
    let mut f = run.create("prelimit.csv")?;
    path.write_csv(&mut f)?;
    f.flush()?;
    println!("events: {}", path.events);
    println!("final headcounts: {:?}", path.final_state.x);
    run.write_json(
        "prelimit.json",
        &json!({
            "n": n,
            "events": path.events,
            "max_idle_while_waiting": path.max_idle_while_waiting,
            "final_headcounts": path.final_state.x,
            "servers": scaling.servers,
        }),
    )
}

#[allow(clippy::too_many_arguments)]
fn compare(
    common: &Common,
    n: u64,
    rule: &str,
    x0: Option<&str>,
    times: &str,
    reps: usize,
    dt: f64,
    check: Option<f64>,
) -> Outcome {
    let file = load_model(common)?;
    let run = Run::start("compare", common, Some(&file))?;
    let model = &file.model;
    let x0 = parse_x0(x0, model.classes())?;
    let rule = parse_rule(rule, model)?;
    let times = parse_list(times)?;
    let scaling = ScalingSpec::new(model, n)?;
    let ctmc = ctmc_snapshots(model, &scaling, &rule, &x0, &times, reps, run.seed)?;
    let start = matched_start(model, &scaling, &x0)?;
    let diffusion = diffusion_snapshots(
        model,
        &rule_as_policy(&rule),
        &start,
        &times,
        reps,
        dt,
        run.seed.wrapping_add(1),
    )?;
    let rows = compare_to_diffusion(&ctmc, &diffusion)?;
    let mut f = run.create("comparison.csv")?;
    write_comparison_csv(&mut f, &rows)?;
    f.flush()?;
    let mut worst = 0.0_f64;
    for r in &rows {
        let m = r.mean_gap().abs() / r.mean_se;
        let v = r.var_gap().abs() / r.var_se;
        worst = worst.max(m).max(v);
        println!(
            "t={} class {}: mean gap {:.4} ({:.2} se), variance gap {:.4} ({:.2} se)",
            r.t,
            r.class + 1,
            r.mean_gap(),
            m,
            r.var_gap(),
            v
        );
    }
    if let Some(k) = check {
        if worst > k {
            return Err(Failure::Check(format!(
                "a gap of {worst:.2} standard errors exceeds {k}"
            )));
        }
    }
    Ok(())
}

fn dispatch(command: Command) -> Outcome {
    match command {
        Command::Validate { common } => validate(&common),
        Command::Simulate {
            common,
            policy,
            interp,
            x0,
            horizon,
            dt,
            moment_paths,
            moment,
        } => simulate(
            &common,
            &policy,
            interp,
            x0.as_deref(),
            horizon,
            dt,
            moment_paths,
            moment,
        ),
        Command::SolveHjb {
            common,
            h,
            boundary,
            boundary_paths,
            boundary_dt,
            tolerance,
            max_iter,
            sensitivity,
        } => solve(
            &common,
            h,
            boundary,
            boundary_paths,
            boundary_dt,
            tolerance,
            max_iter,
            sensitivity,
        ),
        Command::ExtractPolicy { common, value } => extract(&common, &value),
        Command::EvaluatePolicy {
            common,
            policy,
            interp,
            x0,
            paths,
            dt,
            horizon,
            value,
            k_se,
            k_h,
        } => evaluate(
            &common,
            &policy,
            interp,
            x0.as_deref(),
            paths,
            dt,
            horizon,
            value.as_deref(),
            k_se,
            k_h,
        ),
        Command::DetRun {
            common,
            driver,
            control,
            horizon,
            dt,
            scheme,
        } => det_run(&common, driver.as_deref(), &control, horizon, dt, scheme),
        Command::NonidlingCheck {
            common,
            runs,
            horizon,
            dt,
            tol,
        } => nonidling(&common, runs, horizon, dt, tol),
        Command::Counterexample {
            common,
            k,
            dt,
            horizon,
            tol,
        } => counterexample(&common, k, dt, horizon, tol),
        Command::IntegralResidual {
            common,
            dt,
            horizon,
            scheme,
            check_order,
        } => integral_residual(&common, dt, horizon, scheme, check_order),
        Command::Prelimit {
            common,
            n,
            rule,
            x0,
            horizon,
            sample_dt,
        } => prelimit(&common, n, &rule, x0.as_deref(), horizon, sample_dt),
        Command::Compare {
            common,
            n,
            rule,
            x0,
            times,
            reps,
            dt,
            check,
        } => compare(&common, n, &rule, x0.as_deref(), &times, reps, dt, check),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
