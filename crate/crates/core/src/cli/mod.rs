//! Batch front end: `solve`, `load`, `check` and `oracle` subcommands over a
//! JSON scenario, writing plot-ready CSV files and a plain-text summary.
//!
//! Exit codes: 0 converged or verified, 2 ran but did not converge or
//! verify (outputs still written), 1 bad input.

pub mod io;
pub mod scenario;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path as FsPath, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::grid::Profile;
use crate::oracle::{self, OracleConfig, TinyInstance};
use crate::solver::{self, Problem, SolveError, SolverConfig};
use crate::verify::{self, ResidualReport};

use scenario::{InputError, Scenario};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "edue",
    version,
    about = "Dynamic user equilibrium with elastic demand on point-queue networks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve for the equilibrium; writes flows, costs, gap history, residuals and a summary.
    Solve(SolveArgs),
    /// Load a flow file onto the network; writes cumulative link curves.
    Load(LoadArgs),
    /// Check a flow file against the equilibrium conditions; writes residuals and a summary.
    Check(CheckArgs),
    /// Brute-force reference equilibrium for a tiny scenario.
    Oracle(OracleArgs),
}

#[derive(Debug, Args)]
pub struct Overrides {
    /// Number of grid cells.
    #[arg(long)]
    pub n: Option<usize>,
    /// Step size.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Maximum number of gap evaluations.
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Gap tolerance.
    #[arg(long)]
    pub gap_tol: Option<f64>,
    /// Recorded in the summary; no part of the solver is random.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    pub scenario: PathBuf,
    /// Output directory (created if missing).
    #[arg(short, long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct LoadArgs {
    pub scenario: PathBuf,
    /// Flow file in the format written by `solve`.
    #[arg(long)]
    pub flows: PathBuf,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    pub scenario: PathBuf,
    #[arg(long)]
    pub flows: PathBuf,
    #[arg(short, long)]
    pub out: PathBuf,
    /// Bound on the relative complementarity and optimality residuals.
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// Bound on |v - Θ| relative to Θ.
    #[arg(long, default_value_t = 1e-3)]
    pub consistency_tol: f64,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    pub scenario: PathBuf,
    #[arg(short, long)]
    pub out: PathBuf,
    /// Number of grid cells (at most 6).
    #[arg(long)]
    pub n: Option<usize>,
    /// Lattice points per coordinate in the coarse sweep.
    #[arg(long, default_value_t = 9)]
    pub resolution: usize,
    /// Refinement levels after the coarse sweep.
    #[arg(long, default_value_t = 10)]
    pub rounds: usize,
}

/// Parses `args` (program name first) and runs the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let outcome = match &cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Load(a) => cmd_load(a),
        Command::Check(a) => cmd_check(a),
        Command::Oracle(a) => cmd_oracle(a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_INPUT
        }
    }
}

fn prepare_out(dir: &FsPath) -> Result<(), InputError> {
    std::fs::create_dir_all(dir).map_err(|e| InputError::at(dir.display().to_string(), e))
}

fn write_text(path: &FsPath, text: &str) -> Result<(), InputError> {
    std::fs::write(path, text).map_err(|e| InputError::at(path.display().to_string(), e))
}

fn file_name(path: &FsPath) -> String {
    path.file_name().map_or_else(
        || path.display().to_string(),
        |s| s.to_string_lossy().into_owned(),
    )
}

fn apply_overrides(cfg: &mut SolverConfig, o: &Overrides) -> Result<(), InputError> {
    if let Some(a) = o.alpha {
        cfg.alpha = a;
    }
    if let Some(k) = o.max_iters {
        cfg.max_iters = k;
    }
    if let Some(g) = o.gap_tol {
        cfg.gap_tol = g;
    }
    cfg.validate().map_err(|e| InputError::at("solver", e))
}

fn residual_lines(out: &mut String, pb: &Problem, res: &ResidualReport) {
    for r in &res.ods {
        let od = &pb.network().ods()[r.od];
        let _ = writeln!(
            out,
            "od {}: demand {} theta {} min_cost {} cap {}",
            od.id,
            r.demand,
            r.theta,
            r.min_cost,
            pb.demand().od(r.od).cap()
        );
        let _ = writeln!(
            out,
            "od {}: r1 {} r2 {} consistency {} rel_r1 {} rel_r2 {} rel_consistency {}",
            od.id,
            r.complementarity,
            r.optimality,
            r.consistency,
            r.relative_complementarity(),
            r.relative_optimality(),
            r.relative_consistency()
        );
    }
}

fn cmd_solve(a: &SolveArgs) -> Result<i32, InputError> {
    let sc = Scenario::read(&a.scenario)?;
    let n = a.overrides.n.unwrap_or(sc.solver.n);
    let pb = sc.problem(n)?;
    let mut cfg = sc.solver_config();
    apply_overrides(&mut cfg, &a.overrides)?;
    prepare_out(&a.out)?;

    let mut s = String::new();
    let _ = writeln!(s, "command: solve");
    let _ = writeln!(s, "scenario: {}", file_name(&a.scenario));
    let _ = writeln!(s, "cells: {n}");
    let _ = writeln!(s, "alpha: {}", cfg.alpha);
    let _ = writeln!(s, "max_iters: {}", cfg.max_iters);
    let _ = writeln!(s, "gap_tol: {}", cfg.gap_tol);
    match cfg.halve_after {
        Some(k) => {
            let _ = writeln!(s, "halve_after: {k}");
        }
        None => {
            let _ = writeln!(s, "halve_after: none");
        }
    }
    match a.overrides.seed {
        Some(seed) => {
            let _ = writeln!(s, "seed: {seed}");
        }
        None => {
            let _ = writeln!(s, "seed: none");
        }
    }
    let horizon_end = pb.horizon_end().map_err(|e| InputError::at("horizon", e))?;
    let _ = writeln!(s, "horizon_end: {horizon_end}");

    let report = match solver::solve(&pb, &cfg, None) {
        Ok(r) => r,
        Err(SolveError {
            source,
            iteration,
            last_iterate,
        }) => {
            let Some(x) = last_iterate else {
                return Err(InputError::at("solve", source));
            };
            io::write_flows(&a.out.join("flows.csv"), pb.network(), &x)?;
            let _ = writeln!(s, "status: aborted at iteration {iteration}: {source}");
            write_text(&a.out.join("summary.txt"), &s)?;
            eprintln!("solve aborted: {source}");
            return Ok(EXIT_NOT_CONVERGED);
        }
    };

    io::write_flows(&a.out.join("flows.csv"), pb.network(), &report.point)?;
    io::write_costs(&a.out.join("costs.csv"), pb.network(), &report.costs)?;
    io::write_gap(&a.out.join("gap.csv"), &report.history)?;
    io::write_residuals(
        &a.out.join("residuals.csv"),
        pb.network(),
        &report.residuals,
    )?;

    let status = if report.converged {
        "converged"
    } else {
        "not converged"
    };
    let _ = writeln!(s, "status: {status}");
    let _ = writeln!(s, "iterations: {}", report.iterations());
    let _ = writeln!(
        s,
        "final_alpha: {}",
        report.history.last().map_or(cfg.alpha, |r| r.alpha)
    );
    let _ = writeln!(s, "initial_gap: {}", report.initial_gap());
    let _ = writeln!(s, "gap: {}", report.gap);
    let _ = writeln!(s, "problem_scale: {}", pb.problem_scale(&report.costs));
    let _ = writeln!(
        s,
        "flow_bound: max_cell_flow {} bound {} {}",
        report.max_cell_flow,
        report.cell_flow_bound,
        if report.within_flow_bound() {
            "pass"
        } else {
            "FAIL"
        }
    );
    for (w, active) in report.cap_active.iter().enumerate() {
        if *active {
            let _ = writeln!(s, "od {}: demand cap active", pb.network().ods()[w].id);
        }
    }
    residual_lines(&mut s, &pb, &report.residuals);
    write_text(&a.out.join("summary.txt"), &s)?;
    eprintln!(
        "{status} after {} iterations in {:.3} s",
        report.iterations(),
        report.wall_time.as_secs_f64()
    );
    Ok(if report.converged {
        EXIT_OK
    } else {
        EXIT_NOT_CONVERGED
    })
}

/// Reads a flow file and builds the matching problem and point.
fn read_point(
    sc: &Scenario,
    flows: &FsPath,
) -> Result<(Problem, crate::grid::ExtendedPoint), InputError> {
    let probe = sc.problem(1)?;
    let table = io::read_flows(flows, probe.network(), sc.horizon.t0, sc.horizon.tf)?;
    let pb = sc.problem(table.cells)?;
    let profiles = table
        .values
        .into_iter()
        .map(|v| Profile::new(*pb.grid(), v))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| InputError::at(flows.display().to_string(), e))?;
    let x = pb.point_from_flows(profiles);
    pb.check_feasible(&x)
        .map_err(|e| InputError::at(flows.display().to_string(), e))?;
    Ok((pb, x))
}

fn cmd_load(a: &LoadArgs) -> Result<i32, InputError> {
    let sc = Scenario::read(&a.scenario)?;
    let (pb, x) = read_point(&sc, &a.flows)?;
    let loading = pb
        .load(&x.flows)
        .map_err(|e| InputError::at(a.flows.display().to_string(), e))?;
    prepare_out(&a.out)?;
    io::write_link_curves(&a.out.join("links.csv"), pb.network(), &loading)?;
    Ok(EXIT_OK)
}

fn cmd_check(a: &CheckArgs) -> Result<i32, InputError> {
    let sc = Scenario::read(&a.scenario)?;
    let (pb, x) = read_point(&sc, &a.flows)?;
    let costs =
        solver::f_map(&pb, &x).map_err(|e| InputError::at(a.flows.display().to_string(), e))?;
    let residuals = verify::due_residuals(pb.network(), &x, &costs, None);
    let gap = solver::compute_gap(&pb, &x, &costs);
    prepare_out(&a.out)?;
    io::write_residuals(&a.out.join("residuals.csv"), pb.network(), &residuals)?;

    let verified = residuals.ods.iter().all(|r| {
        r.relative_complementarity() <= a.tol
            && r.relative_optimality() <= a.tol
            && r.relative_consistency() <= a.consistency_tol
    });
    let mut s = String::new();
    let _ = writeln!(s, "command: check");
    let _ = writeln!(s, "scenario: {}", file_name(&a.scenario));
    let _ = writeln!(s, "flows: {}", file_name(&a.flows));
    let _ = writeln!(s, "cells: {}", pb.grid().cells());
    let _ = writeln!(s, "tol: {} consistency_tol: {}", a.tol, a.consistency_tol);
    let _ = writeln!(
        s,
        "status: {}",
        if verified { "verified" } else { "not verified" }
    );
    let _ = writeln!(s, "gap: {gap}");
    let _ = writeln!(s, "problem_scale: {}", pb.problem_scale(&costs));
    residual_lines(&mut s, &pb, &residuals);
    write_text(&a.out.join("summary.txt"), &s)?;
    Ok(if verified {
        EXIT_OK
    } else {
        EXIT_NOT_CONVERGED
    })
}

fn cmd_oracle(a: &OracleArgs) -> Result<i32, InputError> {
    let sc = Scenario::read(&a.scenario)?;
    let n = a.n.unwrap_or(sc.solver.n);
    let inst = TinyInstance::new(sc.problem(n)?).map_err(|e| InputError::at("scenario", e))?;
    let cfg = OracleConfig {
        resolution: a.resolution,
        rounds: a.rounds,
        ..OracleConfig::default()
    };
    let res =
        oracle::brute_force_equilibrium(&inst, &cfg).map_err(|e| InputError::at("oracle", e))?;
    let pb = inst.problem();
    let costs = solver::f_map(pb, &res.point).map_err(|e| InputError::at("oracle", e))?;
    let residuals = verify::due_residuals(pb.network(), &res.point, &costs, None);
    prepare_out(&a.out)?;
    io::write_flows(&a.out.join("flows.csv"), pb.network(), &res.point)?;
    io::write_residuals(&a.out.join("residuals.csv"), pb.network(), &residuals)?;

    let mut s = String::new();
    let _ = writeln!(s, "command: oracle");
    let _ = writeln!(s, "scenario: {}", file_name(&a.scenario));
    let _ = writeln!(s, "cells: {n}");
    let _ = writeln!(s, "resolution: {} rounds: {}", cfg.resolution, cfg.rounds);
    let _ = writeln!(
        s,
        "status: {}",
        if res.certified {
            "certified"
        } else {
            "not certified"
        }
    );
    let _ = writeln!(s, "gap: {}", res.gap);
    let _ = writeln!(s, "problem_scale: {}", res.scale);
    let _ = writeln!(s, "evaluations: {}", res.evaluations);
    residual_lines(&mut s, pb, &residuals);
    write_text(&a.out.join("summary.txt"), &s)?;
    Ok(if res.certified {
        EXIT_OK
    } else {
        EXIT_NOT_CONVERGED
    })
}
