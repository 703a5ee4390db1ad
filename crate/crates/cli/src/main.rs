use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use slac_cli::commands::{self, Artifact, EvaluateOptions, ExportOptions, Reference, RolloutOptions, TrainOptions};
use slac_cli::{exec_mode, CliError, CliResult, RunConfig};
use slac_core::rollout::Lattice2;

#[derive(Parser)]
#[command(name = "slac", version, about = "Semi-Lagrangian actor-critic for minimum-time style control problems")]
struct Cli {
    /// Worker threads; 1 runs everything sequentially.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigSource {
    /// TOML run configuration.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,

    /// Bundled configuration: double_integrator, dubins or trace.
    #[arg(long)]
    preset: Option<String>,
}

impl ConfigSource {
    fn load(&self) -> CliResult<Option<RunConfig>> {
        match (&self.config, &self.preset) {
            (Some(path), _) => RunConfig::load(path).map(Some),
            (None, Some(name)) => RunConfig::preset(name).map(Some),
            (None, None) => Ok(None),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train actor and critic into a run directory.
    Train {
        #[command(flatten)]
        source: ConfigSource,
        /// Run directory [default: out_dir from the config, else $SLAC_OUT_DIR/<problem>-seed<seed>].
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides train.seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from the checkpoint in the run directory.
        #[arg(long)]
        resume: bool,
    },
    /// Solve the grid reference of the config's [grid] section.
    GridSolve {
        #[command(flatten)]
        source: ConfigSource,
        /// Output directory [default: out_dir, else $SLAC_OUT_DIR/<problem>-grid].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the trained critic with a reference and report residuals.
    Evaluate {
        run: PathBuf,
        /// Grid file [default: value.grid in the run directory, if present].
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t)]
        reference: Reference,
        /// Number of test points.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Closed-loop simulations from sampled initial states.
    Rollout {
        run: PathBuf,
        /// Number of rollouts.
        #[arg(long)]
        n: Option<usize>,
        /// Seed for the initial states [default: train.seed].
        #[arg(long)]
        seed: Option<u64>,
        /// Integration step in place of the configured one.
        #[arg(long)]
        dt_override: Option<f64>,
        /// Steer with this grid table instead of the actor.
        #[arg(long)]
        grid: Option<PathBuf>,
        /// Output directory [default: <run>/rollouts].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a raster over a 2D slice of the state space.
    Export {
        run: PathBuf,
        #[arg(long, value_enum)]
        artifact: Artifact,
        /// Free coordinates, e.g. `0,1`.
        #[arg(long, value_parser = commands::parse_pair::<usize>)]
        free: Option<[usize; 2]>,
        /// Fixed coordinate, e.g. `2=0.5`; repeatable.
        #[arg(long = "fix", value_parser = commands::parse_fixed)]
        fixed: Vec<(usize, f64)>,
        /// Range of the first free coordinate, e.g. `--x-range=-5,5`.
        #[arg(long, value_parser = commands::parse_pair::<f64>, allow_hyphen_values = true)]
        x_range: Option<[f64; 2]>,
        #[arg(long, value_parser = commands::parse_pair::<f64>, allow_hyphen_values = true)]
        y_range: Option<[f64; 2]>,
        /// Lattice size, e.g. `200,200`.
        #[arg(long, value_parser = commands::parse_pair::<usize>)]
        res: Option<[usize; 2]>,
        /// Control component for switching_raster.
        #[arg(long, default_value_t = 0)]
        component: usize,
        /// Value slices as cost-to-go instead of the transformed value.
        #[arg(long)]
        cost_to_go: bool,
        /// Read values or controls from a grid file.
        #[arg(long)]
        grid: Option<PathBuf>,
        /// Output file [default: <run>/exports/<artifact>.csv].
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn require(cfg: Option<RunConfig>) -> CliResult<RunConfig> {
    cfg.ok_or_else(|| CliError::config("one of --config or --preset is required"))
}

fn run(cli: Cli) -> CliResult<()> {
    let mode = exec_mode(cli.workers);
    match cli.command {
        Command::Train {
            source,
            out,
            seed,
            resume,
        } => {
            let cfg = match (source.load()?, resume, &out) {
                (Some(c), _, _) => c,
                (None, true, Some(dir)) => RunConfig::load(&dir.join(commands::CONFIG_FILE))?,
                (None, _, _) => return Err(CliError::config("one of --config or --preset is required")),
            };
            let mut cfg = cfg;
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            let leaf = format!("{}-seed{}", cfg.problem.name(), cfg.train.seed);
            let out = out.unwrap_or_else(|| commands::default_out_dir(&cfg, &leaf));
            let s = commands::train(&cfg, &out, &TrainOptions { mode, resume })?;
            println!("trained {} iterations into {}", s.iterations, out.display());
            if let Some(r) = s.last {
                println!(
                    "final actor loss {:.6e}, critic loss {:.6e}, mean |residual| {:.3e}",
                    r.actor_loss, r.critic_loss, r.residual.mean_abs
                );
            }
        }
        Command::GridSolve { source, out } => {
            let cfg = require(source.load()?)?;
            let out = out.unwrap_or_else(|| commands::default_out_dir(&cfg, &format!("{}-grid", cfg.problem.name())));
            let r = commands::grid_solve(&cfg, &out, mode)?;
            println!(
                "{} sweeps, final change {:.3e}, converged {}, {:.1} s; wrote {}",
                r.sweeps,
                r.final_change,
                r.converged,
                r.runtime_s,
                out.join(commands::GRID_FILE).display()
            );
        }
        Command::Evaluate { run, grid, reference, n } => {
            let r = commands::evaluate(&run, &EvaluateOptions { mode, grid, reference, n })?;
            println!("reference {} on {} points", r.reference, r.test_points);
            if let Some(e) = r.error {
                println!("mse {:.6e}, max abs error {:.4}", e.mse, e.max_abs);
            }
            println!("bellman residual mean |r| {:.4e}, max |r| {:.4e}", r.residual.mean_abs, r.residual.max_abs);
            if let Some(s) = r.sign_agreement {
                println!("sign agreement {:.4} ({}/{})", s.fraction, s.agreeing, s.points);
            }
        }
        Command::Rollout {
            run,
            n,
            seed,
            dt_override,
            grid,
            out,
        } => {
            let r = commands::rollout(
                &run,
                &RolloutOptions {
                    mode,
                    n,
                    seed,
                    dt_override,
                    grid,
                    out,
                },
            )?;
            let s = &r.summary;
            println!("success fraction {:.4} ({}/{})", s.success_fraction, s.successes, s.runs);
            if let Some(st) = &s.settling {
                println!("settled fraction {:.4} at tolerance {}", st.settled_fraction, st.tolerance);
            }
            println!("max |u| {:.4}", r.max_abs_control);
        }
        Command::Export {
            run,
            artifact,
            free,
            fixed,
            x_range,
            y_range,
            res,
            component,
            cost_to_go,
            grid,
            out,
        } => {
            let any = free.is_some() || !fixed.is_empty() || x_range.is_some() || y_range.is_some() || res.is_some();
            let slice = if any {
                let cfg = RunConfig::load(&run.join(commands::CONFIG_FILE))?;
                let d = commands::default_slice(&cfg.problem);
                let free = free.unwrap_or(d.free);
                Some(Lattice2 {
                    fixed: if fixed.is_empty() && free == d.free { d.fixed } else { fixed },
                    free,
                    x_range: x_range.unwrap_or(d.x_range),
                    y_range: y_range.unwrap_or(d.y_range),
                    resolution: res.unwrap_or(d.resolution),
                })
            } else {
                None
            };
            let files = commands::export(
                &run,
                &ExportOptions {
                    mode,
                    artifact,
                    slice,
                    component,
                    cost_to_go,
                    grid,
                    out,
                },
            )?;
            for f in files {
                println!("wrote {}", f.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    // exit quietly when stdout is closed early, e.g. piped into `head`
    std::panic::set_hook(Box::new(|info| {
        let msg = info.payload().downcast_ref::<String>().map(String::as_str).unwrap_or("");
        if !msg.contains("Broken pipe") {
            eprintln!("{info}");
        }
    }));
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
