//! Batch front end: reads a model file, runs analysis and/or simulation,
//! and emits machine-readable results and pass/fail validation reports.
//!
//! Exit codes are a stable contract:
//! 0 success · 1 threshold or numerical failure · 2 input error ·
//! 3 spectral precondition (assumption) violation.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use phmcd::error::Error;
use phmcd::model::{model_from_json_file, QueueModel};
use phmcd::sim::{compare, run_sim, write_sim_csv, CompareThresholds, SimConfig, SimEstimate};
use phmcd::solver::{
    diagnose_assumptions, solve, AssumptionReport, LoadSolution, SolverConfig, Verdict,
};
use phmcd::waiting::{
    proposition_bridge, wait_decomposition, write_density_grid, VirtualWaitDistribution,
};

#[derive(Parser)]
#[command(
    name = "phmcd",
    version,
    about = "Stationary loads and virtual waits in PH/M/c queues with a deterministic waiting-time bound"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the model and write solution.json, density.csv, summary.json.
    Analyze(RunSpec),
    /// Simulate the model and write sim.csv.
    Simulate(RunSpec),
    /// Solve and simulate, then write compare.json; exit 0 iff all
    /// thresholds pass.
    Compare(RunSpec),
    /// Print every spectral-precondition margin and solver residual with
    /// a pass/warn/fail verdict.
    Check(RunSpec),
}

/// Common run parameters.
#[derive(Args, Debug)]
struct RunSpec {
    /// Model JSON: {"gamma": [...], "T": [[...]], "c": n, "mu": x, "tau": x}.
    #[arg(long)]
    model: PathBuf,
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Number of interior grid points for densities and the empirical CDF.
    #[arg(long, default_value_t = 1000)]
    grid: usize,
    /// RNG seed controlling all randomness.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Measured arrivals per replication.
    #[arg(long, default_value_t = 250_000)]
    arrivals: usize,
    /// Independent replications (pooled).
    #[arg(long, default_value_t = 4)]
    replications: usize,
    /// Pass threshold for cross-route and representation residuals.
    #[arg(long, default_value_t = 1e-8)]
    tol_residual: f64,
    /// Pass threshold for the Kolmogorov–Smirnov distance.
    #[arg(long, default_value_t = 0.005)]
    tol_ks: f64,
}

impl RunSpec {
    fn validate(&self) -> Result<(), Error> {
        if self.grid < 2 {
            return Err(Error::InvalidModel(format!(
                "--grid must be at least 2, got {}",
                self.grid
            )));
        }
        if !(self.tol_residual > 0.0) || !(self.tol_ks >= 0.0) {
            return Err(Error::InvalidModel(
                "--tol-residual must be positive and --tol-ks nonnegative".into(),
            ));
        }
        if !self.model.exists() {
            return Err(Error::InvalidModel(format!(
                "model file {} does not exist",
                self.model.display()
            )));
        }
        Ok(())
    }

    fn load_model(&self) -> Result<QueueModel, Error> {
        self.validate()?;
        model_from_json_file(&self.model)
    }

    fn sim_config(&self, model: &QueueModel) -> Result<SimConfig, Error> {
        SimConfig::for_model(model, self.seed, self.arrivals, self.replications, self.grid)
    }
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Assumption { .. } => 3,
        Error::Dimension(_) | Error::InvalidModel(_) | Error::Io(_) | Error::Json(_) => 2,
        Error::Numerical(_) | Error::Threshold(_) => 1,
    }
}

#[derive(Serialize)]
struct Summary {
    atom0: f64,
    continuous: f64,
    tail: f64,
    p: f64,
    bridge_max_residual: f64,
    route_gap: f64,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn analyze_to_dir(model: &QueueModel, spec: &RunSpec) -> Result<(LoadSolution, Summary), Error> {
    fs::create_dir_all(&spec.out)?;
    let sol = solve(model)?;
    write_json(&spec.out.join("solution.json"), &sol.export())?;

    let (rep, bridge) = proposition_bridge(&sol)?;
    let mut density = Vec::new();
    write_density_grid(&sol, &rep, spec.grid, &mut density)?;
    fs::write(spec.out.join("density.csv"), density)?;

    let parts = wait_decomposition(&sol)?;
    let summary = Summary {
        atom0: parts.atom0,
        continuous: parts.continuous,
        tail: parts.tail,
        p: bridge.p,
        bridge_max_residual: bridge.max_residual,
        route_gap: sol.diagnostics.route_gap,
    };
    write_json(&spec.out.join("summary.json"), &summary)?;
    Ok((sol, summary))
}

fn simulate_to_dir(model: &QueueModel, spec: &RunSpec) -> Result<SimEstimate, Error> {
    fs::create_dir_all(&spec.out)?;
    let cfg = spec.sim_config(model)?;
    let est = run_sim(model, &cfg)?;
    let mut csv = Vec::new();
    write_sim_csv(&est, &mut csv)?;
    fs::write(spec.out.join("sim.csv"), csv)?;
    Ok(est)
}

fn cmd_analyze(spec: &RunSpec) -> Result<u8, Error> {
    let model = spec.load_model()?;
    let (sol, summary) = analyze_to_dir(&model, spec)?;
    if summary.route_gap > spec.tol_residual || summary.bridge_max_residual > spec.tol_residual {
        return Err(Error::Threshold(format!(
            "residuals exceed --tol-residual {:e}: route gap {:.3e}, bridge {:.3e}",
            spec.tol_residual, summary.route_gap, summary.bridge_max_residual
        )));
    }
    println!(
        "analyze: atom0 {:.6}, continuous {:.6}, tail {:.6} (modes m = {})",
        summary.atom0,
        summary.continuous,
        summary.tail,
        sol.spectral.eta.len()
    );
    for file in ["solution.json", "density.csv", "summary.json"] {
        println!("wrote {}", spec.out.join(file).display());
    }
    Ok(0)
}

fn cmd_simulate(spec: &RunSpec) -> Result<u8, Error> {
    let model = spec.load_model()?;
    let est = simulate_to_dir(&model, spec)?;
    println!(
        "simulate: atom0 {:.6} ± {:.1e}, loss {:.6} ± {:.1e} ({} arrivals)",
        est.atom0_hat, est.atom0_se, est.loss_hat, est.loss_se, est.measured_arrivals_total
    );
    println!("wrote {}", spec.out.join("sim.csv").display());
    Ok(0)
}

fn cmd_compare(spec: &RunSpec) -> Result<u8, Error> {
    let model = spec.load_model()?;
    let (sol, _) = analyze_to_dir(&model, spec)?;
    let est = simulate_to_dir(&model, spec)?;
    let dist = VirtualWaitDistribution::from_solution(&sol)?;
    let thresholds = CompareThresholds {
        ks: spec.tol_ks,
        ..CompareThresholds::default()
    };
    let report = compare(&dist, &est, thresholds)?;
    write_json(&spec.out.join("compare.json"), &report)?;
    println!(
        "compare: KS {:.5} ({}), atom z {:+.2} ({}), loss z {:+.2} ({})",
        report.ks_distance,
        verdict_word(report.ks_pass),
        report.atom_z,
        verdict_word(report.atom_pass),
        report.loss_z,
        verdict_word(report.loss_pass),
    );
    println!("wrote {}", spec.out.join("compare.json").display());
    Ok(if report.pass { 0 } else { 1 })
}

fn verdict_word(pass: bool) -> &'static str {
    if pass {
        "pass"
    } else {
        "FAIL"
    }
}

fn verdict_upper(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn print_clauses(report: &AssumptionReport) {
    for clause in report.clauses() {
        let verdict = match clause.verdict {
            Verdict::Pass => "PASS",
            Verdict::Warn => "WARN",
            Verdict::Fail => "FAIL",
        };
        match clause.margin {
            Some(m) => println!("{verdict} {} margin {:.3e}", clause.name, m),
            None => println!("{verdict} {}", clause.name),
        }
    }
}

fn cmd_check(spec: &RunSpec) -> Result<u8, Error> {
    let model = spec.load_model()?;
    let report = diagnose_assumptions(&model, &SolverConfig::default())?;
    print_clauses(&report);
    if !report.pass() {
        println!("overall: FAIL");
        let failed = report
            .clauses()
            .iter()
            .find(|c| c.verdict == Verdict::Fail)
            .map(|c| c.name.clone())
            .unwrap_or_default();
        return Err(Error::Assumption {
            clause: failed,
            detail: "see margins above".into(),
        });
    }

    let sol = solve(&model)?;
    let d = &sol.diagnostics;
    let tol = spec.tol_residual;
    let mut all_pass = true;
    {
        let mut residual = |name: &str, value: f64, limit: f64| {
            let ok = value <= limit;
            all_pass &= ok;
            println!("{} {name} residual {value:.3e} (tol {limit:.1e})", verdict_upper(ok));
        };
        residual("eta-root", d.eta_root_max_residual, 1e-10);
        residual("exit-eigenvector", d.r_exit_eigen_max_residual, 1e-9);
        residual("mode-system-sigma-min", d.mode_system_max_sigma_ratio, 1e-10);
        residual("balance-equation", d.balance_residual, 1e-9);
        residual("normalization", d.normalization_residual, 1e-10);
        residual("exit-rate-identity", d.exit_rate_identity_max_residual, 1e-9);
        residual(
            "resolvent-row-identity",
            d.resolvent_row_identity_max_residual,
            1e-9,
        );
        residual("conjugate-pairing", d.delta_conjugate_pairing_residual, 1e-9);
        residual("route-gap", d.route_gap, tol);
        residual("phi-imaginary", d.phi_imag_residual, 1e-10);
        residual("resolvent-form-gap", d.bdb_resolvent_gap, 1e-10);
    }

    let rank_ok = d.mode_system_min_second_sigma_ratio >= 1e-6
        && d.phi_system_sigma_ratio <= 1e-10
        && d.phi_system_second_sigma_ratio >= 1e-6
        && d.y_rows_rcond >= 1e-10;
    all_pass &= rank_ok;
    println!(
        "{} rank structure (mode second-sigma {:.3e}, bracket sigma {:.3e}/{:.3e}, rows rcond {:.3e})",
        verdict_upper(rank_ok),
        d.mode_system_min_second_sigma_ratio,
        d.phi_system_sigma_ratio,
        d.phi_system_second_sigma_ratio,
        d.y_rows_rcond
    );

    let (_, bridge) = proposition_bridge(&sol)?;
    let bridge_ok = bridge.max_residual <= tol;
    all_pass &= bridge_ok;
    println!(
        "{} representation-bridge residual {:.3e} (tol {tol:.1e})",
        verdict_upper(bridge_ok),
        bridge.max_residual
    );

    let warned = report.clauses().iter().any(|c| c.verdict == Verdict::Warn);
    println!(
        "overall: {}",
        if !all_pass {
            "FAIL"
        } else if warned {
            "PASS (with warnings)"
        } else {
            "PASS"
        }
    );
    if all_pass {
        Ok(0)
    } else {
        Err(Error::Numerical("residual checks failed".into()))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Analyze(spec) => cmd_analyze(spec),
        Command::Simulate(spec) => cmd_simulate(spec),
        Command::Compare(spec) => cmd_compare(spec),
        Command::Check(spec) => cmd_check(spec),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            let mut stderr = std::io::stderr();
            let _ = writeln!(stderr, "error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
