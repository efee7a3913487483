use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dfs_expcli::commands;
use dfs_expcli::{CliError, CliResult, Overrides, Scenario, ScenarioConfig, Tomography};
use log::error;

#[derive(Parser)]
#[command(name = "dfs-sim", version, about = "Entanglement distribution over reciprocal collective-noise channels")]
struct Cli {
    /// Worker threads for sweeps and ensembles (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output root; files go to `<out>/<id>/`.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Use exact click probabilities.
    #[arg(long, conflicts_with = "shots")]
    exact: bool,
    /// Sampled tomography with this many shots per setting.
    #[arg(long)]
    shots: Option<u64>,
    /// Photon-number cutoff per mode.
    #[arg(long)]
    cutoff: Option<usize>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            cutoff: self.cutoff,
            tomography: match (self.exact, self.shots) {
                (true, _) => Some(Tomography::Exact),
                (false, Some(n)) => Some(Tomography::Shots(n)),
                _ => None,
            },
        }
    }

    fn load(&self) -> CliResult<(Scenario, String)> {
        let (cfg, text) = ScenarioConfig::load(&self.config)?;
        Ok((cfg.resolve(&self.overrides())?, text))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate one scenario.
    Run(Common),
    /// Transmittance sweep with a power-law fit of the rate.
    SweepT {
        #[command(flatten)]
        common: Common,
        /// Transmittances (default: the scenario's `sweep.transmittances`).
        #[arg(long, value_delimiter = ',')]
        t: Option<Vec<f64>>,
    },
    /// Fidelity between initial and shared states over |α|².
    AlphaSweep {
        #[command(flatten)]
        common: Common,
        #[arg(long = "alpha-sq", value_delimiter = ',')]
        alpha_sq: Option<Vec<f64>>,
    },
    /// Forward and backward process matrices of the channel.
    ProcessTomo(Common),
    /// Check backward = Z·forwardᵀ·Z over random waveplate settings.
    ReciprocityCheck {
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Insert a non-reciprocal rotation of this angle (radians) as a negative control.
        #[arg(long)]
        inject_faraday: Option<f64>,
        /// Also write the report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the mode-matching visibility to a target fidelity.
    Calibrate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.85)]
        target: f64,
    },
    /// Parse and validate a scenario without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn print_json<T: serde::Serialize>(v: &T) -> CliResult<()> {
    let s = serde_json::to_string_pretty(v).map_err(|e| CliError::Serialize(e.to_string()))?;
    println!("{s}");
    Ok(())
}

fn done(path: &Path) {
    eprintln!("wrote {}", path.display());
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Run(c) => {
            let (scn, text) = c.load()?;
            let (ev, path) = commands::cmd_run(&scn, &text, &c.out)?;
            print_json(&ev.record)?;
            done(&path);
        }
        Command::SweepT { common, t } => {
            let (scn, text) = common.load()?;
            let ts = t.unwrap_or_else(|| scn.sweep_t.clone());
            let (rep, path) = commands::cmd_sweep_t(&scn, &ts, &text, &common.out)?;
            print_json(&rep.fit)?;
            done(&path);
        }
        Command::AlphaSweep { common, alpha_sq } => {
            let (scn, text) = common.load()?;
            let values = alpha_sq.unwrap_or_else(|| scn.sweep_alpha.clone());
            let (rep, path) = commands::cmd_alpha_sweep(&scn, &values, &text, &common.out)?;
            print_json(&rep.min_fidelity)?;
            done(&path);
        }
        Command::ProcessTomo(c) => {
            let (scn, text) = c.load()?;
            let (rep, path) = commands::cmd_process_tomo(&scn, &text, &c.out)?;
            print_json(&(&rep.forward, &rep.backward))?;
            done(&path);
        }
        Command::ReciprocityCheck {
            samples,
            seed,
            inject_faraday,
            out,
        } => {
            let rep = commands::reciprocity_check(samples, seed, inject_faraday)?;
            print_json(&rep)?;
            if let Some(p) = out {
                dfs_expcli::output::atomic_write(&p, &dfs_expcli::output::json_bytes(&rep)?)?;
                done(&p);
            }
            if !rep.reciprocal {
                eprintln!("non-reciprocal: max residual {:e}", rep.max_residual.max(rep.pauli_max_residual));
            }
        }
        Command::Calibrate { common, target } => {
            let (scn, text) = common.load()?;
            let (rep, path) = commands::cmd_calibrate(&scn, target, &text, &common.out)?;
            print_json(&rep)?;
            done(&path);
        }
        Command::Validate { config } => {
            let (cfg, _) = ScenarioConfig::load(&config)?;
            let scn = cfg.resolve(&Overrides::default())?;
            println!("{}: ok ({:?} tier, {:?} channel)", scn.id, scn.tier, scn.mode);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DFS_SIM_LOG", "warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            error!("cannot size the worker pool: {e}");
        }
    }
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
