//! Experiment runner: parses a TOML config, executes one named experiment,
//! emits CSV/plot-data artifacts plus a run manifest.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 verdict failure (a
//! mathematical check ran fine but its claim did not hold).

mod config;
mod manifest;
mod plotdata;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use bdsde_core::calculus::{ito_residual_profile, AdaptednessTag, IntegrandField, ProcessFields, SquareFn};
use bdsde_core::coefficients::{build_family, ComparisonHypothesis};
use bdsde_core::comparison::{
    compare_pair, compare_pair_holder, nonpositivity_check, ComparisonConfig,
};
use bdsde_core::drivers::{simulate_drivers, SpaceSet, TimeGrid};
use bdsde_core::envelope::{envelope_solve, SearchSpec};
use bdsde_core::solver::picard_solve;

use config::ExperimentConfig;
use manifest::RunManifest;

#[derive(Parser)]
#[command(name = "bdsde", version, about = "Numerical experiments for backward doubly stochastic differential equations with jumps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate driver paths and export them as CSV.
    Simulate(RunArgs),
    /// Run the Picard solver on the configured equation.
    Solve(RunArgs),
    /// Check that the pathwise change-of-variable residual shrinks with
    /// the step count.
    ItoCheck(RunArgs),
    /// Run an ordering comparison between two coefficient sets.
    Compare(RunArgs),
    /// Check non-positivity of the solution for a non-positive terminal.
    Nonpos(RunArgs),
    /// Bracket a non-Lipschitz equation between regularized solutions.
    Envelope(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Path to the TOML experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override the driver seed (also read from BDSDE_SEED).
    #[arg(long, env = "BDSDE_SEED")]
    seed: Option<u64>,
    /// Override the Monte Carlo path count.
    #[arg(long)]
    paths: Option<usize>,
    /// Override the time-step count.
    #[arg(long)]
    steps: Option<usize>,
    /// Output directory for CSVs, plot data and the manifest.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Skip hypothesis validation on coefficient sets.
    #[arg(long)]
    force: bool,
    /// Override the regression mode: lsmc or exact_tree.
    #[arg(long)]
    mode: Option<String>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (name, args): (&str, &RunArgs) = match &cli.command {
        Command::Simulate(a) => ("simulate", a),
        Command::Solve(a) => ("solve", a),
        Command::ItoCheck(a) => ("ito-check", a),
        Command::Compare(a) => ("compare", a),
        Command::Nonpos(a) => ("nonpos", a),
        Command::Envelope(a) => ("envelope", a),
    };
    match run(name, args) {
        Ok(true) => ExitCode::from(0),
        Ok(false) => {
            eprintln!("verdict failure: see manifest.json for details");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn load_config(args: &RunArgs) -> Result<(ExperimentConfig, String)> {
    let text = fs::read_to_string(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))?;
    let mut cfg = ExperimentConfig::parse(&text)?;
    if let Some(seed) = args.seed {
        cfg.driver.seed = seed;
    }
    if let Some(paths) = args.paths {
        cfg.driver.paths = paths;
    }
    if let Some(steps) = args.steps {
        cfg.grid.steps = steps;
    }
    if let Some(mode) = &args.mode {
        if !matches!(mode.as_str(), "lsmc" | "exact_tree") {
            bail!("--mode must be lsmc or exact_tree");
        }
        cfg.driver.mode = mode.clone();
    }
    if args.force {
        cfg.solve.force = true;
    }
    let effective = cfg.serialize()?;
    Ok((cfg, effective))
}

fn write_artifact(
    dir: &Path,
    name: &str,
    bytes: &[u8],
    manifest: &mut RunManifest,
) -> Result<()> {
    fs::write(dir.join(name), bytes).with_context(|| format!("writing {name}"))?;
    manifest.record_output(name);
    Ok(())
}

fn run(subcommand: &str, args: &RunArgs) -> Result<bool> {
    let started = Instant::now();
    let (cfg, effective) = load_config(args)?;
    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let mut manifest = RunManifest::new(&effective, cfg.driver.seed);
    write_artifact(&args.out, "effective_config.toml", effective.as_bytes(), &mut manifest)?;

    match subcommand {
        "simulate" => cmd_simulate(&cfg, &args.out, &mut manifest)?,
        "solve" => cmd_solve(&cfg, &args.out, &mut manifest)?,
        "ito-check" => cmd_ito_check(&cfg, &args.out, &mut manifest)?,
        "compare" => cmd_compare(&cfg, &args.out, &mut manifest)?,
        "nonpos" => cmd_nonpos(&cfg, &args.out, &mut manifest)?,
        "envelope" => cmd_envelope(&cfg, &args.out, &mut manifest)?,
        other => bail!("unknown subcommand '{other}'"),
    }

    manifest.wall_time_secs = started.elapsed().as_secs_f64();
    manifest.write(&args.out)?;
    Ok(manifest.all_pass())
}

fn cmd_simulate(cfg: &ExperimentConfig, out: &Path, manifest: &mut RunManifest) -> Result<()> {
    let drivers = cfg.drivers()?;
    let mut csv = Vec::new();
    drivers.export_csv(&mut csv)?;
    write_artifact(out, "drivers.csv", &csv, manifest)?;
    Ok(())
}

fn cmd_solve(cfg: &ExperimentConfig, out: &Path, manifest: &mut RunManifest) -> Result<()> {
    let drivers = cfg.drivers()?;
    let coeffs = cfg.coefficients()?;
    let terminal = cfg.terminal.build(&drivers)?;
    let (solution, diag) = picard_solve(
        &coeffs,
        &terminal,
        &drivers,
        &cfg.regression_spec()?,
        cfg.solve.tolerance,
        cfg.solve.max_iterations,
        cfg.solve.force,
    )?;
    let mut csv = Vec::new();
    solution.export_csv(&drivers, &mut csv)?;
    write_artifact(out, "solution.csv", &csv, manifest)?;
    let mut csv = Vec::new();
    diag.export_csv(&mut csv)?;
    write_artifact(out, "picard.csv", &csv, manifest)?;
    let mut dat = Vec::new();
    plotdata::convergence(&diag, &mut dat)?;
    write_artifact(out, "convergence.dat", &dat, manifest)?;
    manifest.record_verdict("picard_converged", diag.converged);
    Ok(())
}

fn cmd_ito_check(cfg: &ExperimentConfig, out: &Path, manifest: &mut RunManifest) -> Result<()> {
    if cfg.driver.mode != "lsmc" {
        bail!("ito-check requires driver.mode = \"lsmc\"");
    }
    let n = cfg.driver.paths;
    let mut rows = Vec::new();
    for steps in [cfg.grid.steps, cfg.grid.steps * 2] {
        let grid = TimeGrid::uniform(cfg.grid.horizon, steps)?;
        let d = simulate_drivers(&grid, &SpaceSet::all_empty(), n, cfg.driver.seed)?;
        let terminal: Vec<f64> = (0..n).map(|p| d.b_level(steps, p)).collect();
        let mut fields = ProcessFields::zeros(&d, terminal);
        fields.z = IntegrandField::constant(AdaptednessTag::Forward, 1.0, steps, n, 1);
        let profile = ito_residual_profile(&SquareFn, &fields, &d)?;
        let mut acc = 0.0;
        for k in 0..steps {
            for p in 0..n {
                acc += (profile[[k, p]] - profile[[k + 1, p]]).abs();
            }
        }
        rows.push((steps, acc / (steps * n) as f64));
    }
    let ratio = rows[1].1 / rows[0].1;
    let mut dat = Vec::new();
    use std::io::Write;
    writeln!(dat, "# steps mean_residual_increment")?;
    for (steps, mean) in &rows {
        writeln!(dat, "{steps} {mean}")?;
    }
    writeln!(dat, "# ratio={ratio}")?;
    write_artifact(out, "ito.dat", &dat, manifest)?;
    manifest.record_verdict("residual_halves", (0.3..=0.7).contains(&ratio));
    Ok(())
}

fn comparison_config(cfg: &ExperimentConfig, slack: f64, ceiling: f64) -> ComparisonConfig {
    ComparisonConfig {
        slack,
        ceiling,
        tol: cfg.solve.tolerance,
        max_iter: cfg.solve.max_iterations,
        force: cfg.solve.force,
        ..ComparisonConfig::default()
    }
}

fn cmd_compare(cfg: &ExperimentConfig, out: &Path, manifest: &mut RunManifest) -> Result<()> {
    let Some(cmp) = &cfg.compare else {
        bail!("compare requires a [compare] section");
    };
    let hypothesis: ComparisonHypothesis = cmp.hypothesis.parse()?;
    let drivers = cfg.drivers()?;
    let spec = cfg.regression_spec()?;
    let ccfg = comparison_config(cfg, cmp.slack, cmp.ceiling);
    let coeffs1 = cfg.coefficients()?;
    let terminal1 = cfg.terminal.build(&drivers)?;

    let report = match hypothesis {
        ComparisonHypothesis::NonPositivity => {
            nonpositivity_check(&coeffs1, &terminal1, &drivers, &spec, &ccfg)?
        }
        _ => {
            let Some(family2) = &cmp.family2 else {
                bail!("hypothesis '{}' compares two sets; set compare.family2", cmp.hypothesis);
            };
            let coeffs2 = build_family(family2, &cmp.params2)?;
            let terminal2 = cmp
                .terminal2
                .clone()
                .unwrap_or_else(|| cfg.terminal.clone())
                .build(&drivers)?;
            match hypothesis {
                ComparisonHypothesis::LipschitzLower | ComparisonHypothesis::LipschitzUpper => {
                    compare_pair(
                        &coeffs1, &coeffs2, hypothesis, &terminal1, &terminal2, &drivers, &spec,
                        &ccfg,
                    )?
                }
                ComparisonHypothesis::HolderLower | ComparisonHypothesis::HolderUpper => {
                    compare_pair_holder(
                        &coeffs1, &coeffs2, hypothesis, &terminal1, &terminal2, &drivers, &spec,
                        &ccfg,
                    )?
                }
                other => bail!("hypothesis '{}' is not runnable from the CLI", other.label()),
            }
        }
    };

    let mut csv = Vec::new();
    report.export_csv(&mut csv)?;
    write_artifact(out, "comparison.csv", &csv, manifest)?;
    let mut dat = Vec::new();
    plotdata::gap_profile(&report, &mut dat)?;
    write_artifact(out, "gap_profile.dat", &dat, manifest)?;
    manifest.record_verdict("ordering", report.pass);
    Ok(())
}

fn cmd_nonpos(cfg: &ExperimentConfig, out: &Path, manifest: &mut RunManifest) -> Result<()> {
    let (slack, ceiling) = cfg
        .compare
        .as_ref()
        .map(|c| (c.slack, c.ceiling))
        .unwrap_or((1e-6, 0.01));
    let drivers = cfg.drivers()?;
    let coeffs = cfg.coefficients()?;
    let terminal = cfg.terminal.build(&drivers)?;
    let report = nonpositivity_check(
        &coeffs,
        &terminal,
        &drivers,
        &cfg.regression_spec()?,
        &comparison_config(cfg, slack, ceiling),
    )?;
    let mut csv = Vec::new();
    report.export_csv(&mut csv)?;
    write_artifact(out, "comparison.csv", &csv, manifest)?;
    let mut dat = Vec::new();
    plotdata::gap_profile(&report, &mut dat)?;
    write_artifact(out, "gap_profile.dat", &dat, manifest)?;
    manifest.record_verdict("nonpositive", report.pass);
    Ok(())
}

fn cmd_envelope(cfg: &ExperimentConfig, out: &Path, manifest: &mut RunManifest) -> Result<()> {
    let Some(env) = &cfg.envelope else {
        bail!("envelope requires an [envelope] section");
    };
    let drivers = cfg.drivers()?;
    let coeffs = cfg.coefficients()?;
    let terminal = cfg.terminal.build(&drivers)?;
    let record = envelope_solve(
        &coeffs,
        &terminal,
        &drivers,
        &cfg.regression_spec()?,
        &env.levels,
        SearchSpec::default(),
        cfg.solve.tolerance,
        cfg.solve.max_iterations,
        env.slack,
    )?;
    let mut csv = Vec::new();
    record.export_csv(&mut csv)?;
    write_artifact(out, "envelope.csv", &csv, manifest)?;
    let mut dat = Vec::new();
    plotdata::envelope(&record, &mut dat)?;
    write_artifact(out, "envelope.dat", &dat, manifest)?;
    manifest.record_verdict("monotone", record.monotone());
    Ok(())
}
