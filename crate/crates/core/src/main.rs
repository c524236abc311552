use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use habitdp::acceptance::{all_gating_passed, run_acceptance, AcceptanceOptions, Event};
use habitdp::config::{load_config, RunConfig};
use habitdp::dp::{backward_solve, policy_lookup, read_snapshot, write_snapshot, write_tables_csv, Problem, Solution};
use habitdp::experiment::{run_matrix, simulate_run, write_comparison, write_file, write_simulation};
use habitdp::fmt_f64;
use habitdp::manifest::Manifest;
use habitdp::merton::{merton_consumption, merton_solve};
use habitdp::sim::{calibrate_bequest, MertonPolicy};
use habitdp::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "habitdp", version, about = "Consumption and portfolio choice under habit formation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Config file of dotted `section.key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for the Monte Carlo ensemble.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for solving and simulating.
    #[arg(long, global = true, env = "HABITDP_THREADS")]
    threads: Option<usize>,
    /// Multiplies the wealth and habit node counts.
    #[arg(long, global = true)]
    grid_scale: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the dynamic program and write value and policy tables.
    Solve,
    /// Simulate the solved policy (solving first unless given a snapshot).
    Simulate {
        /// Binary snapshot written by `solve`.
        #[arg(long)]
        snapshot: Option<PathBuf>,
        /// Also write `tables.csv`.
        #[arg(long)]
        tables: bool,
    },
    /// Closed-form Merton values and a simulated Merton ensemble.
    Merton,
    /// Find the bequest weight that keeps expected terminal wealth at the target.
    Calibrate,
    /// Run every experiment cell and write side-by-side series.
    Compare,
    /// Run the acceptance suite and print one line per criterion.
    Check {
        /// Node-count scale for the zero-bequest matrix cells.
        #[arg(long, default_value_t = 1.0)]
        matrix_grid_scale: f64,
        /// Node-count scale for the calibrated matrix cells.
        #[arg(long, default_value_t = 0.5)]
        calibration_grid_scale: f64,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report_error("usage", e.to_string().lines().next().unwrap_or_default());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            report_error(e.kind(), &e.to_string());
            ExitCode::FAILURE
        }
    }
}

fn report_error(kind: &str, message: &str) {
    eprintln!("{}", json!({ "error": { "kind": kind, "message": message } }));
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => load_config(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.simulation.master_seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    if let Some(scale) = cli.grid_scale {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::invalid("--grid-scale", "must be finite and > 0"));
        }
        cfg.grid = cfg.grid.scaled(scale);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::invalid("--threads", "must be >= 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Precondition(format!("thread pool: {e}")))?;
    }
    let cfg = resolve_config(&cli)?;
    for w in cfg.market.warnings() {
        eprintln!("warning: {w}");
    }
    let out = cfg.output_dir.clone();
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let problem = Problem::new(cfg.market, cfg.prefs);

    let (name, files, code) = match &cli.command {
        Command::Solve => {
            let sol = backward_solve(&problem, &cfg.grid, &cfg.solver)?;
            let files = write_solution(&out, &sol)?;
            print_solution_summary(&cfg, &sol);
            ("solve", files, ExitCode::SUCCESS)
        }
        Command::Simulate { snapshot, tables } => {
            let sol = match snapshot {
                Some(path) => read_snapshot(path)?,
                None => backward_solve(&problem, &cfg.grid, &cfg.solver)?,
            };
            let run = simulate_run(&cfg, &sol.policy, &problem)?;
            let mut files = write_simulation(&out, &run)?;
            if *tables {
                files.push(write_file(&out.join("tables.csv"), |o| write_tables_csv(&sol, o))?);
            }
            let s = &run.stats;
            println!("paths = {}", s.n_paths);
            println!("master_seed = {}", s.master_seed);
            println!("terminal_mean_wealth = {}", fmt_f64(s.terminal_mean_wealth()));
            println!("min_wealth = {}", fmt_f64(s.min_wealth));
            println!("escape_fraction = {}", fmt_f64(s.escapes.fraction()));
            ("simulate", files, ExitCode::SUCCESS)
        }
        Command::Merton => {
            let sol = merton_solve(&cfg.market, &cfg.prefs);
            let horizon = cfg.prefs.horizon;
            let c0 = merton_consumption(0.0, cfg.prefs.w0, &sol, horizon)?;
            println!("omega_star = {}", sol.omega_star);
            println!("omega_star_clamped = {}", sol.omega_star_clamped);
            println!("nu = {}", sol.nu);
            println!("consumption_t0_w0 = {c0}");
            let policy = MertonPolicy {
                solution: sol,
                horizon,
                n_steps: cfg.grid.n_steps,
            };
            let mut files = vec![write_file(&out.join("merton_policy.csv"), |o| {
                writeln!(o, "step,t,C_over_W,omega")?;
                let dt = horizon / cfg.grid.n_steps as f64;
                for i in 1..=cfg.grid.n_steps {
                    let t = (i - 1) as f64 * dt;
                    let c = merton_consumption(t, 1.0, &sol, horizon).unwrap_or(f64::NAN);
                    writeln!(o, "{i},{},{},{}", fmt_f64(t), fmt_f64(c), fmt_f64(sol.omega_star_clamped))?;
                }
                Ok(())
            })?];
            let mut merton_problem = problem.clone();
            merton_problem.prefs.beta = 0.0;
            let run = simulate_run(&cfg, &policy, &merton_problem)?;
            files.extend(write_simulation(&out, &run)?);
            ("merton", files, ExitCode::SUCCESS)
        }
        Command::Calibrate => {
            let cal = calibrate_bequest(
                &problem,
                &cfg.grid,
                &cfg.solver,
                cfg.simulation.n_paths,
                cfg.simulation.master_seed,
                cfg.calibration_target,
            )?;
            let mut files = vec![write_file(&out.join("calibration.csv"), |o| {
                writeln!(o, "trial,b,E_W_T")?;
                for (k, (b, ew)) in cal.trials.iter().enumerate() {
                    writeln!(o, "{},{},{}", k + 1, fmt_f64(*b), fmt_f64(*ew))?;
                }
                Ok(())
            })?];
            let mut p = problem.clone();
            p.prefs.bequest_b = cal.b;
            let run = simulate_run(&cfg, &cal.solution.policy, &p)?;
            files.extend(write_simulation(&out, &run)?);
            println!("b = {}", cal.b);
            println!("expected_terminal_wealth = {}", cal.expected_terminal_wealth);
            println!("target = {}", cal.target);
            println!("trials = {}", cal.trials.len());
            ("calibrate", files, ExitCode::SUCCESS)
        }
        Command::Compare => {
            let runs = run_matrix(&cfg)?;
            for r in &runs {
                println!(
                    "{}: b = {}, terminal_mean_wealth = {}",
                    r.cell.name,
                    r.bequest_b,
                    r.run.stats.terminal_mean_wealth()
                );
            }
            let files = write_comparison(&out, &cfg, &runs)?;
            ("compare", files, ExitCode::SUCCESS)
        }
        Command::Check {
            matrix_grid_scale,
            calibration_grid_scale,
        } => {
            let opts = AcceptanceOptions {
                base: cfg.clone(),
                matrix_grid_scale: *matrix_grid_scale,
                calibration_grid_scale: *calibration_grid_scale,
                ..AcceptanceOptions::default()
            };
            let mut lines = Vec::new();
            let verdicts = run_acceptance(&opts, &mut |event| match event {
                Event::Progress(msg) => eprintln!("  .. {msg}"),
                Event::Verdict(v) => {
                    println!("{v}");
                    lines.push(v.to_string());
                }
            });
            let file = write_file(&out.join("check.txt"), |o| {
                lines.iter().try_for_each(|l| writeln!(o, "{l}"))
            })?;
            let code = if all_gating_passed(&verdicts) {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            };
            ("check", vec![file], code)
        }
    };
    let manifest = Manifest::new(name, &cfg, &out, &files)?;
    let path = manifest.write(&out)?;
    eprintln!("wrote {} files and {}", manifest.files.len(), path.display());
    Ok(code)
}

fn write_solution(out: &Path, sol: &Solution) -> Result<Vec<PathBuf>> {
    let bin = out.join("tables.bin");
    write_snapshot(sol, &bin)?;
    Ok(vec![
        write_file(&out.join("tables.csv"), |o| write_tables_csv(sol, o))?,
        bin,
    ])
}

fn print_solution_summary(cfg: &RunConfig, sol: &Solution) {
    let d = policy_lookup(&sol.policy, 1, cfg.prefs.w0, 0.0);
    let g = sol.grid();
    println!("grid = {} x {} x {} steps", g.w.len(), g.cbar.len(), g.n_steps());
    println!("consumption_t1_w0 = {}", d.c);
    println!("omega_t1_w0 = {}", d.omega);
    println!("escape_fraction = {}", sol.diagnostics.escapes.fraction());
    println!(
        "max_monotonicity_violations = {}",
        sol.diagnostics.max_monotonicity_violations
    );
}
