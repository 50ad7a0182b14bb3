use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stochrk::harness::{
    cmd_compare, cmd_converge, cmd_qsd, cmd_run, write_csv, write_csv_file, CompareSpec, ConvergeSpec, Report,
    RunSpec, Stepper, Table, ERROR_FLOOR,
};
use stochrk::noise::parse_seed;
use stochrk::qsd::{AbsorberModel, EnsembleConfig, NoiseKind, Stepping};
use stochrk::{make_problem, BenchmarkProblem, ProblemId, SchemeId, SdeError, StepController};

/// Strong-order stochastic Runge-Kutta experiments with CSV output.
#[derive(Parser, Debug)]
#[command(name = "stochrk", version)]
struct Cli {
    /// Random seed, decimal or 0x-prefixed hex.
    #[arg(long, global = true, default_value = "0", value_parser = seed_arg)]
    seed: u64,

    /// Output CSV path; standard output if omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Keep every n-th step in trajectory output.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    stride: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Integrate one trajectory and record its error against the exact solution.
    Run(RunArgs),
    /// Error-vs-time of several schemes on a single shared Wiener path.
    Compare(CompareArgs),
    /// Fixed-path strong convergence study over dyadic step sizes.
    Converge(ConvergeArgs),
    /// Nonlinear absorber quantum-state-diffusion ensemble.
    Qsd(QsdArgs),
}

#[derive(Args, Debug)]
struct ProblemArgs {
    /// tan, geom2, rot23, nonauto, gl or sech.
    #[arg(long)]
    problem: ProblemId,

    /// Named parameter set (e.g. fig2-like for geom2).
    #[arg(long)]
    preset: Option<String>,

    /// Override a problem parameter, as name=value. Repeatable.
    #[arg(long = "param", value_name = "NAME=VALUE")]
    params: Vec<String>,

    /// End time.
    #[arg(long = "T", default_value_t = 1.0)]
    t_end: f64,

    /// Component (1-based) whose error is reported.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    component: u64,
}

impl ProblemArgs {
    fn build(&self) -> Result<BenchmarkProblem, SdeError> {
        let mut problem = make_problem(self.problem);
        if let Some(preset) = &self.preset {
            problem = problem.with_preset(preset)?;
        }
        for kv in &self.params {
            let (name, value) = kv
                .split_once('=')
                .ok_or_else(|| SdeError::Usage(format!("parameter override {kv:?} is not NAME=VALUE")))?;
            let value: f64 = value
                .parse()
                .map_err(|_| SdeError::Usage(format!("parameter {name} has a non-numeric value {value:?}")))?;
            problem = problem.with_param(name, value)?;
        }
        Ok(problem)
    }

    fn component(&self) -> usize {
        (self.component - 1) as usize
    }
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    problem: ProblemArgs,

    /// em, milstein, srk2 or srk4 (fixed-step runs).
    #[arg(long, default_value = "srk2", conflicts_with_all = ["atol", "rtol"])]
    scheme: SchemeId,

    /// Fixed step size; defaults to the problem's reference step.
    #[arg(long, conflicts_with_all = ["atol", "rtol"])]
    dt: Option<f64>,

    /// Absolute tolerance; selects the adaptive srk4 driver.
    #[arg(long)]
    atol: Option<f64>,

    /// Relative tolerance; selects the adaptive srk4 driver.
    #[arg(long)]
    rtol: Option<f64>,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[command(flatten)]
    problem: ProblemArgs,

    /// Comma-separated scheme list.
    #[arg(long, value_delimiter = ',', default_value = "em,milstein,srk2,srk4")]
    schemes: Vec<SchemeId>,

    /// Shared step size; defaults to the problem's reference step.
    #[arg(long)]
    dt: Option<f64>,
}

#[derive(Args, Debug)]
struct ConvergeArgs {
    #[command(flatten)]
    problem: ProblemArgs,

    #[arg(long, value_delimiter = ',', default_value = "srk2,srk4")]
    schemes: Vec<SchemeId>,

    /// Dyadic levels L (step 2^-L), as `8..13` or a comma list.
    #[arg(long, default_value = "8..13", value_parser = levels_arg)]
    levels: Levels,

    /// Draw the path this many levels below the finest step.
    #[arg(long, default_value_t = 0)]
    refine: u32,

    /// Number of independent paths; errors are pooled by the median.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    paths: u64,

    /// Integrate with the noise switched off.
    #[arg(long)]
    zero_noise: bool,

    /// Errors below this are left out of the slope fit.
    #[arg(long, default_value_t = ERROR_FLOOR)]
    floor: f64,
}

#[derive(Args, Debug)]
struct QsdArgs {
    /// Number of trajectories.
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    traj: u64,

    #[arg(long = "T", default_value_t = 5.0)]
    t_end: f64,

    /// Fock-space truncation.
    #[arg(long, default_value_t = 30)]
    nmax: usize,

    /// complex or real.
    #[arg(long, default_value = "complex")]
    noise: NoiseKind,

    #[arg(long, default_value_t = 0.1)]
    drive: f64,

    /// Number of output intervals on [0, T].
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    points: u64,

    #[arg(long, default_value_t = 1e-6)]
    atol: f64,

    #[arg(long, default_value_t = 1e-6)]
    rtol: f64,

    /// Fixed step size instead of adaptive stepping.
    #[arg(long)]
    dt: Option<f64>,

    /// Scheme for fixed-step ensembles.
    #[arg(long, default_value = "srk4", requires = "dt")]
    scheme: SchemeId,
}

#[derive(Debug, Clone)]
struct Levels(Vec<u32>);

fn levels_arg(s: &str) -> Result<Levels, String> {
    let bad = |_| format!("invalid level list {s:?}");
    if let Some((lo, hi)) = s.split_once("..") {
        let hi = hi.strip_prefix('=').unwrap_or(hi);
        let (lo, hi): (u32, u32) = (lo.trim().parse().map_err(bad)?, hi.trim().parse().map_err(bad)?);
        if lo > hi {
            return Err(format!("empty level range {s:?}"));
        }
        return Ok(Levels((lo..=hi).collect()));
    }
    s.split(',').map(|l| l.trim().parse().map_err(bad)).collect::<Result<_, _>>().map(Levels)
}

fn seed_arg(s: &str) -> Result<u64, String> {
    parse_seed(s).map_err(|e| e.to_string())
}

fn execute(cli: &Cli) -> Result<Report, SdeError> {
    let stride = cli.stride as usize;
    match &cli.command {
        Command::Run(args) => {
            let problem = args.problem.build()?;
            let stepper = match (args.atol, args.rtol) {
                (None, None) => Stepper::Fixed { scheme: args.scheme, dt: args.dt.unwrap_or(problem.step_size()) },
                (atol, rtol) => {
                    let tol = atol.or(rtol).expect("one tolerance given");
                    Stepper::Adaptive(StepController::new(atol.unwrap_or(tol), rtol.unwrap_or(tol)))
                }
            };
            cmd_run(&RunSpec {
                t_end: args.problem.t_end,
                component: args.problem.component(),
                problem,
                stepper,
                seed: cli.seed,
                stride,
            })
        }
        Command::Compare(args) => {
            let problem = args.problem.build()?;
            cmd_compare(&CompareSpec {
                dt: args.dt.unwrap_or(problem.step_size()),
                t_end: args.problem.t_end,
                component: args.problem.component(),
                problem,
                schemes: args.schemes.clone(),
                seed: cli.seed,
                stride,
            })
        }
        Command::Converge(args) => {
            let mut spec = ConvergeSpec::new(args.problem.build()?, args.schemes.clone(), args.levels.0.clone());
            spec.refine = args.refine;
            spec.t_end = args.problem.t_end;
            spec.seed = cli.seed;
            spec.paths = args.paths as usize;
            spec.zero_noise = args.zero_noise;
            spec.component = args.problem.component();
            spec.floor = args.floor;
            let report = cmd_converge(&spec)?;
            let mut notes = report.notes.clone();
            notes.push(format!("paths from streams {:?}", report.streams));
            Ok(Report { table: report.table(), notes, failure: None })
        }
        Command::Qsd(args) => {
            let model = AbsorberModel { drive: args.drive, noise_kind: args.noise, n_max: args.nmax };
            let mut cfg = EnsembleConfig::new(args.t_end, args.traj as usize, cli.seed);
            cfg.intervals = args.points as usize;
            cfg.stepping = match args.dt {
                Some(dt) => Stepping::Fixed { dt, scheme: args.scheme },
                None => match cfg.stepping {
                    Stepping::Adaptive(mut ctrl) => {
                        ctrl.atol = args.atol;
                        ctrl.rtol = args.rtol;
                        Stepping::Adaptive(ctrl)
                    }
                    fixed => fixed,
                },
            };
            cmd_qsd(&model, &cfg)
        }
    }
}

fn emit(table: &Table, out: Option<&PathBuf>) -> Result<(), SdeError> {
    match out {
        Some(path) => write_csv_file(table, path),
        None => write_csv(table, std::io::stdout().lock())
            .map_err(|source| SdeError::Io { path: PathBuf::from("<stdout>"), source }),
    }
}

fn exit_code(e: &SdeError) -> ExitCode {
    if e.is_numerical() {
        ExitCode::from(3)
    } else {
        ExitCode::from(2)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let report = match execute(&cli) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("stochrk: {e}");
            return exit_code(&e);
        }
    };
    for note in &report.notes {
        eprintln!("{note}");
    }
    if let Err(e) = emit(&report.table, cli.out.as_ref()) {
        eprintln!("stochrk: {e}");
        return exit_code(&e);
    }
    match &report.failure {
        Some(e) => {
            eprintln!("stochrk: {e}");
            exit_code(e)
        }
        None => ExitCode::SUCCESS,
    }
}
