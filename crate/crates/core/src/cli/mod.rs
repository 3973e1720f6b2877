//! Command-line entry points. Exit codes: 0 success, 1 configuration or I/O error (or a
//! failed validation suite), 2 planner abort.

pub mod validate;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::sim::{compare_runs, load_scenario_with, run, RunOptions, RunReport};

#[derive(Parser, Debug)]
#[command(name = "safe-manip", version, about = "Run, compare and benchmark manipulator safety scenarios")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Log verbosity on stderr (-v warnings, -vv info, -vvv debug).
    #[arg(short, long, action = ArgAction::Count, global = true)]
    pub verbose: u8,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate one scenario and write the report and CSV logs.
    Run(RunArgs),
    /// Run two scenarios (or one scenario against its baseline) and report the differences.
    Compare(CompareArgs),
    /// Time the planner for both shooting methods over several horizons.
    Bench(BenchArgs),
    /// Run the numerical property suites on the bundled models.
    Validate(ValidateArgs),
}

#[derive(Args, Debug)]
pub struct Common {
    /// Output directory.
    #[arg(short, long, default_value = "out")]
    pub output: PathBuf,
    /// Scenario override, e.g. `planner.N=10`; repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    pub scenario: PathBuf,
    #[command(flatten)]
    pub common: Common,
    /// Use the hard-constraint-only planner.
    #[arg(long)]
    pub baseline: bool,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    /// One scenario (with --baseline) or two scenarios of the same scene.
    #[arg(num_args = 1..=2, required = true)]
    pub scenarios: Vec<PathBuf>,
    #[command(flatten)]
    pub common: Common,
    /// Compare the scenario against its hard-constraint-only baseline.
    #[arg(long)]
    pub baseline: bool,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    pub scenario: PathBuf,
    #[command(flatten)]
    pub common: Common,
    /// Horizon lengths to time.
    #[arg(long, value_delimiter = ',', default_value = "10,30,50")]
    pub horizons: Vec<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum MutationArg {
    GravitySign,
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    /// Inject a known defect to check that the suites catch it.
    #[arg(long)]
    pub mutate: Option<MutationArg>,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::SolverAbort(_) => 2,
        _ => 1,
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Error,
        1 => log::LevelFilter::Warn,
        2 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
    let result = match cli.command {
        Command::Run(a) => cmd_run(&a),
        Command::Compare(a) => cmd_compare(&a),
        Command::Bench(a) => cmd_bench(&a),
        Command::Validate(a) => cmd_validate(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn with_baseline(overrides: &[String], baseline: bool) -> Vec<String> {
    let mut all = overrides.to_vec();
    if baseline {
        all.push("planner.task_oriented=false".into());
    }
    all
}

fn simulate(path: &Path, overrides: &[String], dir: &Path) -> Result<RunReport> {
    let scenario = load_scenario_with(path, overrides)?;
    let options = RunOptions { output_dir: Some(dir.to_path_buf()), keep_trace: false };
    Ok(run(&scenario, &options)?.report)
}

fn summarize(r: &RunReport) -> String {
    let mut s = format!(
        "scenario {} ({}, N = {}, {})\n",
        r.scenario,
        if r.task_oriented { "task-oriented" } else { "baseline" },
        r.planner_horizon,
        r.shooting
    );
    s += &format!("  ticks {}  min clearance {:.4} m", r.ticks, r.min_clearance());
    if let Some(l) = r.nearest_link() {
        s += &format!(" (link {l})");
    }
    s += &format!("\n  rms ee error {:.5}\n", r.rms_ee_error);
    for (i, w) in r.waypoint_errors.iter().enumerate() {
        s += &format!("  waypoint {i}: position {:.5} m, rotation {:.5} rad\n", w.position, w.rotation);
    }
    for d in &r.detections {
        match d.latency {
            Some(l) => s += &format!("  push {}: detected after {:.3} s on link {:?}\n", d.event, l, d.link),
            None => s += &format!("  push {}: not detected\n", d.event),
        }
    }
    s += &format!(
        "  planner: {} solves, mean {:.2} ms, p95 {:.2} ms, {} fallbacks\n",
        r.solver.calls, r.solver.mean_ms, r.solver.p95_ms, r.solver.fallbacks
    );
    s
}

pub fn cmd_run(a: &RunArgs) -> Result<i32> {
    let dir = &a.common.output;
    let report = simulate(&a.scenario, &with_baseline(&a.common.overrides, a.baseline), dir)?;
    print!("{}", summarize(&report));
    println!("  output in {}", dir.display());
    Ok(0)
}

pub fn cmd_compare(a: &CompareArgs) -> Result<i32> {
    let overrides = &a.common.overrides;
    let runs: Vec<(PathBuf, Vec<String>)> = match (a.scenarios.as_slice(), a.baseline) {
        ([one], true) => vec![(one.clone(), overrides.clone()), (one.clone(), with_baseline(overrides, true))],
        ([x, y], false) => vec![(x.clone(), overrides.clone()), (y.clone(), overrides.clone())],
        ([_], false) => return Err(Error::config("compare", "give two scenarios or one with --baseline")),
        _ => return Err(Error::config("compare", "--baseline takes exactly one scenario")),
    };
    let dir = &a.common.output;
    let mut reports = Vec::new();
    for ((path, ov), name) in runs.iter().zip(["a", "b"]) {
        let report = simulate(path, ov, &dir.join(name))?;
        print!("[{name}] {}", summarize(&report));
        reports.push(report);
    }
    let cmp = compare_runs(&reports[0], &reports[1])?;
    let text = cmp.to_text();
    write(&dir.join("comparison.txt"), &text)?;
    println!("differences a - b:\n{text}");
    Ok(0)
}

pub fn cmd_bench(a: &BenchArgs) -> Result<i32> {
    let dir = &a.common.output;
    fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.clone(), source })?;
    let mut csv = String::from("method,N,mean_ms,p95_ms,iterations\n");
    for &n in &a.horizons {
        for method in ["multiple", "single"] {
            let mut ov = a.common.overrides.clone();
            ov.push(format!("planner.N={n}"));
            ov.push(format!("planner.shooting=\"{method}\""));
            let scenario = load_scenario_with(&a.scenario, &ov)?;
            let r = run(&scenario, &RunOptions::default())?.report;
            let row = format!("{method},{n},{:.4},{:.4},{}\n", r.solver.mean_ms, r.solver.p95_ms, r.solver.mean_iterations);
            print!("{row}");
            csv += &row;
        }
    }
    write(&dir.join("bench.csv"), &csv)?;
    Ok(0)
}

pub fn cmd_validate(a: &ValidateArgs) -> Result<i32> {
    let mutation = a.mutate.map(|m| match m {
        MutationArg::GravitySign => validate::Mutation::GravitySign,
    });
    let results = validate::run_suites(a.seed, mutation);
    print!("{}", validate::summary(&results));
    Ok(if results.iter().all(|r| r.ok()) { 0 } else { 1 })
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}
