//! Command-line front end for the flow laboratory.
//!
//! Exit codes: 0 success (all requested checks pass), 2 configuration or
//! validation error, 3 numerical abort (snapshot written), 4 a requested
//! acceptance-style check failed.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use teichflow::expcli::{self, Config, Outcome};

#[derive(Parser)]
#[command(name = "teichflow", version, about = "coupled map/metric flow experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file (defaults apply when omitted).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (falls back to config, then $TEICHFLOW_OUT).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Resume a flow from a snapshot.json written on abort.
    #[arg(long, global = true)]
    resume: Option<PathBuf>,
    /// Worker threads for sweeps (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Mesh construction and serialization.
    Mesh {
        #[command(subcommand)]
        action: MeshAction,
    },
    /// Coupled flow runs.
    Flow {
        #[command(subcommand)]
        action: FlowAction,
    },
    /// Parameter sweeps.
    Sweep {
        #[command(subcommand)]
        action: SweepAction,
    },
    /// The limit flow through harmonic maps.
    Limit {
        #[command(subcommand)]
        action: LimitAction,
    },
    /// Discretization diagnostics.
    Diag {
        #[command(subcommand)]
        action: DiagAction,
    },
    /// Aggregate run manifests into a report.
    Report {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Subcommand)]
enum MeshAction {
    /// Build the genus-2 octagon surface and print structure checks.
    Gen {
        #[command(flatten)]
        common: Common,
        /// Midpoint subdivision level (overrides config).
        #[arg(long)]
        level: Option<u32>,
    },
}

#[derive(Subcommand)]
enum FlowAction {
    /// Run the coupled flow and emit a trajectory.
    Run {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Subcommand)]
enum SweepAction {
    /// Sweep the metric coupling η against the pure harmonic map flow.
    Eta {
        #[command(flatten)]
        common: Common,
    },
    /// Sweep the map speed κ of the rescaled flow against the limit flow.
    Kappa {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Subcommand)]
enum LimitAction {
    /// Run the limit flow (alternating harmonic solve and metric step).
    Run {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Subcommand)]
enum DiagAction {
    /// Holomorphic quadratic differential basis diagnostics.
    Hqd {
        #[command(flatten)]
        common: Common,
    },
}

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = Cli::parse();
    let result = dispatch(cli);
    match result {
        Ok(Outcome::Pass) => 0,
        Ok(Outcome::ChecksFailed) => {
            eprintln!("one or more requested checks failed");
            4
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<Outcome, expcli::CliError> {
    match cli.command {
        Command::Mesh {
            action: MeshAction::Gen { common, level },
        } => {
            let mut cfg = setup(&common)?;
            if let Some(l) = level {
                cfg.mesh.level = Some(l);
                cfg.mesh.path = None;
                cfg.validate()?;
            }
            let out = expcli::resolve_out_dir(common.out.as_deref(), &cfg);
            expcli::cmd_mesh_gen(&cfg, &out)
        }
        Command::Flow {
            action: FlowAction::Run { common },
        } => {
            let cfg = setup(&common)?;
            let out = expcli::resolve_out_dir(common.out.as_deref(), &cfg);
            expcli::cmd_flow_run(&cfg, &out, common.resume.as_deref())
        }
        Command::Sweep {
            action: SweepAction::Eta { common },
        } => {
            let cfg = setup(&common)?;
            let out = expcli::resolve_out_dir(common.out.as_deref(), &cfg);
            expcli::cmd_sweep_eta(&cfg, &out)
        }
        Command::Sweep {
            action: SweepAction::Kappa { common },
        } => {
            let cfg = setup(&common)?;
            let out = expcli::resolve_out_dir(common.out.as_deref(), &cfg);
            expcli::cmd_sweep_kappa(&cfg, &out)
        }
        Command::Limit {
            action: LimitAction::Run { common },
        } => {
            let cfg = setup(&common)?;
            let out = expcli::resolve_out_dir(common.out.as_deref(), &cfg);
            expcli::cmd_limit_run(&cfg, &out, common.resume.as_deref())
        }
        Command::Diag {
            action: DiagAction::Hqd { common },
        } => {
            let cfg = setup(&common)?;
            let out = expcli::resolve_out_dir(common.out.as_deref(), &cfg);
            expcli::cmd_diag_hqd(&cfg, &out)
        }
        Command::Report { common } => {
            let cfg = setup(&common)?;
            let out = expcli::resolve_out_dir(common.out.as_deref(), &cfg);
            expcli::cmd_report(&out)
        }
    }
}

fn setup(common: &Common) -> Result<Config, expcli::CliError> {
    if let Some(jobs) = common.jobs {
        // only effective once; later calls in the same process are ignored
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }
    Config::load(common.config.as_deref())
}
