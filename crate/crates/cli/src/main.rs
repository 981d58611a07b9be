use clap::{Args, Parser, Subcommand};
use kinlab_cli::{exit_code, run, ExperimentConfig, Task, PRESETS};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Linear kinetic equations with degenerate thermalisation.
#[derive(Parser)]
#[command(name = "kinlab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve the model, fit the decay rate and certify it.
    Simulate(RunArgs),
    /// Spectral gap of the discretized generator.
    Gap(RunArgs),
    /// Geometric control condition and the ψ weight.
    Gcc(RunArgs),
    /// Kernel batteries: Cheeger inequality or the Γ₂ sign.
    Cheeger(RunArgs),
    /// Divergence, Poincaré–Lions, Korn and Stokes constants.
    Ineq(RunArgs),
    /// Commutator identities and the gap-vs-degeneracy scan.
    Hypo(RunArgs),
    /// Hypothesis checklist H1–H6.
    Validate(RunArgs),
    /// List the bundled presets, or print one.
    Presets { name: Option<String> },
}

#[derive(Args)]
struct RunArgs {
    /// Configuration file.
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    /// Bundled preset name.
    #[arg(long)]
    preset: Option<String>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default `out/<name>`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long)]
    threads: Option<usize>,
}

fn execute(task: Task, a: RunArgs) -> kinlab::Result<bool> {
    if let Some(n) = a.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| kinlab::Error::Invalid(format!("thread pool: {e}")))?;
    }
    let (mut cfg, base) = match (&a.config, &a.preset) {
        (Some(p), _) => {
            let text = std::fs::read_to_string(p)?;
            (ExperimentConfig::from_toml(&text)?, p.parent().unwrap_or(Path::new(".")).to_path_buf())
        }
        (None, Some(name)) => (kinlab_cli::preset(name)?, PathBuf::from(".")),
        (None, None) => unreachable!("clap requires one source"),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let summary = run(&cfg, task, &base)?;
    let out = a
        .out
        .or_else(|| cfg.output.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| Path::new("out").join(&cfg.name));
    summary.write(&out)?;
    if cfg.output.plot_script && summary.artifacts.iter().any(|f| f.file == "decay.csv") {
        std::fs::write(out.join("plot_decay.py"), PLOT)?;
    }
    for c in &summary.checks {
        println!("{} {:<36} {:>14.6e}  {}", c.label(), c.name, c.value, c.detail);
    }
    println!("{} ({:.2} s) → {}", if summary.pass { "all checks passed" } else { "some checks failed" }, summary.wall_clock_s, out.display());
    Ok(summary.pass)
}

const PLOT: &str = r#"import sys
import matplotlib.pyplot as plt
import numpy as np

d = np.loadtxt(sys.argv[1] if len(sys.argv) > 1 else "decay.csv", delimiter=",", skiprows=2)
plt.semilogy(d[:, 0], d[:, 1])
plt.xlabel("t")
plt.ylabel("distance to equilibrium")
plt.savefig("decay.png", dpi=150)
"#;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (task, args) = match cli.command {
        Command::Presets { name } => {
            match name {
                None => PRESETS.iter().for_each(|(n, _)| println!("{n}")),
                Some(n) => match kinlab_cli::presets::preset_text(&n) {
                    Ok(t) => print!("{t}"),
                    Err(e) => {
                        eprintln!("error: {e}");
                        return ExitCode::from(2);
                    }
                },
            }
            return ExitCode::SUCCESS;
        }
        Command::Simulate(a) => (Task::Simulate, a),
        Command::Gap(a) => (Task::Gap, a),
        Command::Gcc(a) => (Task::Gcc, a),
        Command::Cheeger(a) => (Task::Cheeger, a),
        Command::Ineq(a) => (Task::Ineq, a),
        Command::Hypo(a) => (Task::Hypo, a),
        Command::Validate(a) => (Task::Validate, a),
    };
    match execute(task, args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
