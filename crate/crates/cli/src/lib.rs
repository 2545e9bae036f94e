//! Command-line driver for heatsteer scenarios.
//!
//! Exit codes: 0 success, 1 invalid configuration, 2 unreadable or
//! unparsable configuration, 3 output I/O failure, 4 simulation failure,
//! 5 sweep with no successful cell.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use heatsteer::{assemble_grammian, write_report_csv, SteeringMode, SweepCell};

use crate::config::{LoadError, Prepared, ScenarioConfig, Violation};

#[derive(Debug, Parser)]
#[command(
    name = "heatsteer",
    version,
    about = "Steer the controlled heat equation on [0, pi]"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a scenario file and list every violated requirement.
    Validate { config: PathBuf },
    /// Assemble the Grammian for the first configured tail length.
    Grammian {
        config: PathBuf,
        /// Also report the eigenvalues (to `<out>.eigvals.csv` with --out, else to stdout).
        #[arg(long)]
        eigvals: bool,
        /// Write the matrix as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one steering experiment with the first configured alpha and tail.
    Steer {
        config: PathBuf,
        #[command(flatten)]
        mode: ModeFlags,
        #[arg(long)]
        traj_out: Option<PathBuf>,
        #[arg(long)]
        report_out: Option<PathBuf>,
        /// Write 0 in the runtime column so reports are byte-stable.
        #[arg(long)]
        no_timing: bool,
    },
    /// Run every configured (alpha, tail) cell.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        no_timing: bool,
    },
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct ModeFlags {
    #[arg(long)]
    pub linear: bool,
    #[arg(long)]
    pub semilinear: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("invalid configuration:\n{}", list(.0))]
    Invalid(Vec<Violation>),
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    Io(String),
    #[error("simulation failed: {0}")]
    Simulation(#[from] heatsteer::Error),
    #[error("{0}")]
    Sweep(String),
}

fn list(v: &[Violation]) -> String {
    v.iter()
        .map(|x| format!("  {x}"))
        .collect::<Vec<_>>()
        .join("\n")
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Invalid(_) => 1,
            Self::Parse(_) => 2,
            Self::Io(_) => 3,
            Self::Simulation(_) => 4,
            Self::Sweep(_) => 5,
        }
    }
}

impl From<LoadError> for Failure {
    fn from(e: LoadError) -> Self {
        Self::Parse(e.to_string())
    }
}

fn io_failure(path: &Path) -> impl FnOnce(io::Error) -> Failure + '_ {
    move |e| Failure::Io(format!("{}: {e}", path.display()))
}

fn stdout_failure(e: io::Error) -> Failure {
    Failure::Io(format!("standard output: {e}"))
}

/// Creates `path` and hands a buffered writer to `write`.
fn write_file(
    path: &Path,
    write: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>,
) -> Result<(), Failure> {
    let file = File::create(path).map_err(io_failure(path))?;
    let mut out = BufWriter::new(file);
    write(&mut out).map_err(io_failure(path))?;
    out.flush().map_err(io_failure(path))
}

pub fn prepare(path: &Path) -> Result<Prepared, Failure> {
    ScenarioConfig::load(path)?
        .prepare()
        .map_err(Failure::Invalid)
}

fn first(values: &[f64], field: &str) -> Result<f64, Failure> {
    values.first().copied().ok_or_else(|| {
        Failure::Invalid(vec![Violation {
            field: field.to_string(),
            message: "at least one value is required".to_string(),
        }])
    })
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<(), Failure> {
    match &cli.command {
        Command::Validate { config } => validate(config, out),
        Command::Grammian {
            config,
            eigvals,
            out: path,
        } => grammian(config, *eigvals, path.as_deref(), out),
        Command::Steer {
            config,
            mode,
            traj_out,
            report_out,
            no_timing,
        } => {
            let mode = if mode.linear {
                SteeringMode::Linear
            } else {
                SteeringMode::Semilinear
            };
            steer(
                config,
                mode,
                traj_out.as_deref(),
                report_out.as_deref(),
                !no_timing,
                out,
            )
        }
        Command::Sweep {
            config,
            out: path,
            no_timing,
        } => sweep(config, path, !no_timing, out),
    }
}

pub fn validate(config: &Path, out: &mut dyn Write) -> Result<(), Failure> {
    prepare(config)?;
    writeln!(out, "{}: valid", config.display()).map_err(stdout_failure)
}

pub fn grammian(
    config: &Path,
    eigvals: bool,
    path: Option<&Path>,
    out: &mut dyn Write,
) -> Result<(), Failure> {
    let prepared = prepare(config)?;
    let tail = first(&prepared.tails, "steering.tail")?;
    let spec = &prepared.scenario.spec;
    let n = prepared.scenario.discretization.n_modes;
    let q = assemble_grammian(&spec.theta, spec.horizon(), tail, n)?;
    let ev = q.eigenvalues();

    writeln!(out, "modes = {n}, tail = {tail:.8e}").map_err(stdout_failure)?;
    writeln!(out, "lambda_min = {:.8e}", q.min_eigenvalue()).map_err(stdout_failure)?;
    let mut alphas = prepared.alphas.clone();
    alphas.sort_by(|a, b| b.total_cmp(a));
    for alpha in alphas {
        writeln!(
            out,
            "alpha = {alpha:.8e}, cond(alpha I + Q) = {:.8e}",
            q.condition_number(alpha)
        )
        .map_err(stdout_failure)?;
    }

    if let Some(path) = path {
        write_file(path, |w| {
            for row in q.matrix().row_iter() {
                let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
                writeln!(w, "{}", line.join(","))?;
            }
            Ok(())
        })?;
        if eigvals {
            let ev_path = path.with_extension("eigvals.csv");
            write_file(&ev_path, |w| write_eigenvalues(w, &ev))?;
        }
    } else if eigvals {
        write_eigenvalues(out, &ev).map_err(stdout_failure)?;
    }
    Ok(())
}

fn write_eigenvalues(w: &mut dyn Write, ev: &[f64]) -> io::Result<()> {
    writeln!(w, "index,eigenvalue")?;
    for (i, v) in ev.iter().enumerate() {
        writeln!(w, "{},{v:.16e}", i + 1)?;
    }
    Ok(())
}

pub fn steer(
    config: &Path,
    mode: SteeringMode,
    traj_out: Option<&Path>,
    report_out: Option<&Path>,
    with_runtime: bool,
    out: &mut dyn Write,
) -> Result<(), Failure> {
    let mut prepared = prepare(config)?;
    let alpha = first(&prepared.alphas, "steering.alpha")?;
    let tail = first(&prepared.tails, "steering.tail")?;
    prepared.scenario.mode = mode;
    let run = prepared.scenario.run(alpha, tail)?;
    let r = &run.report;

    let mut lines = vec![
        format!("alpha = {:.8e}", r.alpha),
        format!("tail = {:.8e}", r.tail),
        format!("achieved_error = {:.8e}", r.achieved_error),
        format!("predicted_error = {:.8e}", r.linear_predicted_error),
        format!("tail_perturbation = {:.8e}", r.tail_perturbation),
        format!("tail_bound = {:.8e}", r.tail_bound),
    ];
    if let Some(m) = r.hypothesis_margin {
        lines.push(format!("hypothesis_margin = {m:.8e}"));
    }
    for line in lines {
        writeln!(out, "{line}").map_err(stdout_failure)?;
    }

    if let Some(path) = traj_out {
        write_file(path, |w| run.trajectory.write_csv(w))?;
    }
    if let Some(path) = report_out {
        let cell = SweepCell {
            alpha,
            tail,
            outcome: Ok(run.report.clone()),
            runtime_s: run.runtime_s,
        };
        write_file(path, |w| write_report_csv(w, &[cell], with_runtime))?;
    }
    Ok(())
}

pub fn sweep(
    config: &Path,
    path: &Path,
    with_runtime: bool,
    out: &mut dyn Write,
) -> Result<(), Failure> {
    let prepared = prepare(config)?;
    let pairs = prepared.pairs();
    if pairs.is_empty() {
        return Err(Failure::Sweep(
            "the sweep has no (alpha, tail) cells".to_string(),
        ));
    }
    let cells = heatsteer::sweep_pairs(&prepared.scenario, &pairs);
    write_file(path, |w| write_report_csv(w, &cells, with_runtime))?;
    let ok = cells.iter().filter(|c| c.outcome.is_ok()).count();
    writeln!(out, "{ok} of {} cells succeeded", cells.len()).map_err(stdout_failure)?;
    for cell in &cells {
        if let Err(e) = &cell.outcome {
            writeln!(
                out,
                "alpha = {:.8e}, tail = {:.8e}: {e}",
                cell.alpha, cell.tail
            )
            .map_err(stdout_failure)?;
        }
    }
    if ok == 0 {
        return Err(Failure::Sweep("every sweep cell failed".to_string()));
    }
    Ok(())
}
