mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use nalgebra::DVector;
use rompc::benchmarks::{heat_problem, HeatConfig};
use rompc::design::{rebound, synthesize, RompcDesign, SynthOptions};
use rompc::io::{
    load_design, load_problem, read_report, save_design, save_problem, write_report,
    write_trajectory, TrajectoryFormat,
};
use rompc::problem::ProblemSpec;
use rompc::runtime::{
    check_compatible, monte_carlo, simulate_closed_loop, DisturbancePolicy, MonteCarloSummary,
    SimConfig, CONSTRAINT_SLACK,
};
use rompc::RompcError;

use report::{
    bound_checks, render, Check, ConstraintOffsets, DesignSummary, RunReport, SimulationReport,
};

#[derive(Parser)]
#[command(
    name = "rompc",
    version,
    about = "Reduced order model predictive control: offline synthesis and closed-loop simulation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Reduce, synthesize gains, bound the error, tighten and build terminal ingredients.
    Synth(SynthArgs),
    /// Recompute the error bounds and tightening of a stored design.
    Bounds(BoundsArgs),
    /// Closed-loop simulation of a stored design on the full-order plant.
    Simulate(SimulateArgs),
    /// Render a stored run report as tables.
    Report(ReportArgs),
    /// Write the bundled heat-equation benchmark manifest.
    Generate(GenerateArgs),
}

#[derive(Args)]
struct Overrides {
    /// Bound horizon τ.
    #[arg(long)]
    tau: Option<usize>,
    /// Initial error bound η.
    #[arg(long)]
    eta: Option<f64>,
    /// Waive Δ⁽¹⁾ (bounds become Δ⁽²⁾ only).
    #[arg(long)]
    skip_delta1: bool,
    /// Worker threads for independent LPs and simulation runs.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct SynthArgs {
    manifest: PathBuf,
    /// Output directory for the design and report.json.
    #[arg(short, long)]
    out: PathBuf,
    #[command(flatten)]
    common: Overrides,
    /// Observer regularization γ.
    #[arg(long)]
    gamma_reg: Option<f64>,
    /// OCP horizon N.
    #[arg(long)]
    horizon: Option<usize>,
}

#[derive(Args)]
struct BoundsArgs {
    /// Stored design directory.
    design: PathBuf,
    manifest: PathBuf,
    /// Output directory; the input design is overwritten when omitted.
    #[arg(short, long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: Overrides,
}

#[derive(Clone, Copy, ValueEnum)]
enum Disturbance {
    Zero,
    Uniform,
    Vertex,
}

impl Disturbance {
    fn policy(self) -> DisturbancePolicy {
        match self {
            Disturbance::Zero => DisturbancePolicy::Zero,
            Disturbance::Uniform => DisturbancePolicy::Uniform,
            Disturbance::Vertex => DisturbancePolicy::Vertex,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Disturbance::Zero => "zero",
            Disturbance::Uniform => "uniform",
            Disturbance::Vertex => "vertex",
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct SimulateArgs {
    design: PathBuf,
    manifest: PathBuf,
    /// Output directory for trajectories and report.json.
    #[arg(short, long, default_value = ".")]
    out: PathBuf,
    /// Closed-loop steps after the handover time k0.
    #[arg(long, default_value_t = 400)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    runs: usize,
    /// Tracked output setpoint, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    setpoint: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value = "vertex")]
    disturbance: Disturbance,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Handover time; the design's k0 when omitted.
    #[arg(long)]
    k0: Option<usize>,
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    report: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(short, long)]
    out: PathBuf,
    /// Interior grid points (full-order dimension).
    #[arg(long, default_value_t = 200)]
    nf: usize,
    #[arg(long, default_value_t = 10)]
    rom_dim: usize,
    #[arg(long, default_value_t = 300)]
    tau: usize,
    #[arg(long, default_value_t = 20)]
    horizon: usize,
}

/// Exit 1: synthesis, validation or closed-loop failure. Exit 2: usage or compatibility.
enum Failure {
    Failed(String),
    Usage(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Failed(_) => 1,
            Failure::Usage(_) => 2,
        }
    }
}

type CmdResult = Result<(), Failure>;

/// Unreadable inputs are usage errors; inputs that read but do not validate are failures.
fn load_failure(e: RompcError) -> Failure {
    match e {
        RompcError::Io { .. } | RompcError::Parse { .. } => Failure::Usage(e.to_string()),
        _ => Failure::Failed(format!("validation failed: {e}")),
    }
}

fn write_failure(e: RompcError) -> Failure {
    Failure::Failed(e.to_string())
}

fn jobs(j: Option<usize>) -> usize {
    j.unwrap_or_else(|| {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    })
    .max(1)
}

fn apply_overrides(spec: &mut ProblemSpec, o: &Overrides) {
    if let Some(t) = o.tau {
        spec.bounds.tau = t;
    }
    if let Some(e) = o.eta {
        spec.bounds.eta_init = e;
    }
}

fn offsets(spec: &ProblemSpec) -> ConstraintOffsets {
    ConstraintOffsets {
        b_z: spec.sets.z.b.as_slice().to_vec(),
        b_u: spec.sets.u.b.as_slice().to_vec(),
    }
}

fn cmd_synth(args: &SynthArgs) -> CmdResult {
    let mut spec = load_problem(&args.manifest).map_err(load_failure)?;
    apply_overrides(&mut spec, &args.common);
    if let Some(g) = args.gamma_reg {
        spec.cost.gamma_reg = g;
    }
    if let Some(n) = args.horizon {
        spec.ocp.horizon = n;
    }
    spec.validate().map_err(load_failure)?;
    let opts = SynthOptions {
        jobs: jobs(args.common.jobs),
        skip_delta1: args.common.skip_delta1,
    };
    let (design, synth) = synthesize(&spec, &opts).map_err(|e| Failure::Failed(e.to_string()))?;
    save_design(&design, &args.out).map_err(write_failure)?;
    let mut report = RunReport::new("synth");
    report.design = Some(DesignSummary::new(&spec, &design, Some(&synth)));
    report.checks = bound_checks(&synth.bounds, &design);
    report.bounds = Some(synth.bounds);
    report.constraints = Some(offsets(&spec));
    report.timings = synth.timings;
    let path = args.out.join("report.json");
    write_report(&report, &path).map_err(write_failure)?;
    print!("{}", render(&report));
    println!("\ndesign written to {}", args.out.display());
    if report.all_passed() {
        Ok(())
    } else {
        Err(Failure::Failed("design checks failed".into()))
    }
}

fn load_pair(design: &Path, manifest: &Path) -> Result<(ProblemSpec, RompcDesign), Failure> {
    let spec = load_problem(manifest).map_err(load_failure)?;
    let design = load_design(design).map_err(load_failure)?;
    check_compatible(&spec, &design)
        .map_err(|e| Failure::Usage(format!("incompatible design and manifest: {e}")))?;
    if spec.fom.time_domain != design.rom.time_domain {
        return Err(Failure::Usage(
            "incompatible design and manifest: time domains differ".into(),
        ));
    }
    Ok((spec, design))
}

fn cmd_bounds(args: &BoundsArgs) -> CmdResult {
    let (mut spec, design) = load_pair(&args.design, &args.manifest)?;
    apply_overrides(&mut spec, &args.common);
    spec.validate().map_err(load_failure)?;
    let opts = SynthOptions {
        jobs: jobs(args.common.jobs),
        skip_delta1: args.common.skip_delta1,
    };
    let t = Instant::now();
    let (design, bounds) =
        rebound(&spec, &design, &opts).map_err(|e| Failure::Failed(e.to_string()))?;
    let out = args.out.clone().unwrap_or_else(|| args.design.clone());
    save_design(&design, &out).map_err(write_failure)?;
    let mut report = RunReport::new("bounds");
    report.design = Some(DesignSummary::new(&spec, &design, None));
    report.checks = bound_checks(&bounds, &design);
    report.bounds = Some(bounds);
    report.constraints = Some(offsets(&spec));
    report.timings = vec![("bounds".into(), t.elapsed().as_secs_f64())];
    write_report(&report, &out.join("report.json")).map_err(write_failure)?;
    print!("{}", render(&report));
    if report.all_passed() {
        Ok(())
    } else {
        Err(Failure::Failed("design checks failed".into()))
    }
}

fn cmd_simulate(args: &SimulateArgs) -> CmdResult {
    let (spec, design) = load_pair(&args.design, &args.manifest)?;
    if args.runs == 0 {
        return Err(Failure::Usage("--runs must be at least 1".into()));
    }
    let k0 = args.k0.unwrap_or(design.k0);
    let setpoint = args.setpoint.clone().map(DVector::from_vec);
    let cfg = SimConfig {
        steps: k0 + args.steps,
        k0: Some(k0),
        disturbance: args.disturbance.policy(),
        seed: args.seed,
        setpoint,
        ..SimConfig::default()
    };
    std::fs::create_dir_all(&args.out)
        .map_err(|e| Failure::Usage(format!("cannot create {}: {e}", args.out.display())))?;
    let t = Instant::now();
    let target_err = |e: RompcError| match e {
        RompcError::DimensionMismatch(_) | RompcError::InvalidArgument(_) => {
            Failure::Usage(e.to_string())
        }
        _ => Failure::Failed(e.to_string()),
    };
    let summary = if args.runs == 1 {
        let log = match simulate_closed_loop(&spec, &design, &cfg) {
            Ok(log) => log,
            Err(e @ (RompcError::Infeasible(_) | RompcError::Solver(_))) => {
                info!("closed loop stopped: {e}");
                return Err(Failure::Failed(format!("closed loop failed: {e}")));
            }
            Err(e) => return Err(target_err(e)),
        };
        let (file, format) = match args.format {
            Format::Csv => ("trajectory.csv", TrajectoryFormat::Csv),
            Format::Json => ("trajectory.json", TrajectoryFormat::Json),
        };
        write_trajectory(&log, &args.out.join(file), format).map_err(write_failure)?;
        let v = log.violations(k0);
        let (tz, tu) = log.tube_max(&spec.sets.z.h, &spec.sets.u.h, k0);
        MonteCarloSummary {
            runs: 1,
            steps: cfg.steps,
            k0,
            violating_runs: usize::from(v > 0),
            violation_steps: v,
            tube_max_z: tz,
            tube_max_u: tu,
            ..Default::default()
        }
    } else {
        monte_carlo(&spec, &design, &cfg, args.runs, jobs(args.jobs)).map_err(target_err)?
    };
    let mut report = RunReport::new("simulate");
    report.design = Some(DesignSummary::new(&spec, &design, None));
    report.constraints = Some(offsets(&spec));
    report.checks.push(Check::new(
        "no_constraint_violations",
        summary.violating_runs == 0,
        format!(
            "{} violating runs, {} steps",
            summary.violating_runs, summary.violation_steps
        ),
    ));
    report.checks.push(Check::new(
        "ocp_feasible",
        summary.failed_runs == 0,
        format!("{} failed runs", summary.failed_runs),
    ));
    let within = |tube: &[f64], delta: &DVector<f64>| {
        tube.iter()
            .zip(delta.iter())
            .all(|(t, d)| *t <= d + CONSTRAINT_SLACK)
    };
    report.checks.push(Check::new(
        "tube_within_bounds",
        within(&summary.tube_max_z, &design.delta_z)
            && within(&summary.tube_max_u, &design.delta_u),
        "",
    ));
    let clean = summary.is_clean();
    report.simulation = Some(SimulationReport {
        disturbance: args.disturbance.name().into(),
        seed: args.seed,
        setpoint: args.setpoint.clone(),
        summary,
    });
    report.timings = vec![("simulate".into(), t.elapsed().as_secs_f64())];
    write_report(&report, &args.out.join("report.json")).map_err(write_failure)?;
    print!("{}", render(&report));
    if clean {
        Ok(())
    } else {
        Err(Failure::Failed(
            "constraint violation or infeasible optimal control problem".into(),
        ))
    }
}

fn cmd_report(args: &ReportArgs) -> CmdResult {
    let report: RunReport = read_report(&args.report).map_err(|e| Failure::Usage(e.to_string()))?;
    print!("{}", render(&report));
    Ok(())
}

fn cmd_generate(args: &GenerateArgs) -> CmdResult {
    let cfg = HeatConfig {
        nf: args.nf,
        rom_dim: args.rom_dim,
        tau: args.tau,
        horizon: args.horizon,
        ..HeatConfig::default()
    };
    let spec = heat_problem(&cfg).map_err(|e| Failure::Usage(e.to_string()))?;
    let path = save_problem(&spec, &args.out).map_err(write_failure)?;
    println!("{}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ROMPC_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Bounds(a) => cmd_bounds(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Report(a) => cmd_report(a),
        Command::Generate(a) => cmd_generate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Failed(msg) | Failure::Usage(msg)) = &f;
            eprintln!("error: {msg}");
            ExitCode::from(f.code())
        }
    }
}
