use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use super::config::{ExperimentConfig, FileConfig};
use super::{
    cmd_coupling_sweep, cmd_depth_sweep, cmd_make_bundle, cmd_nfe_compare, cmd_run, cmd_sync_demo, load_dataset,
    write_effective_config,
};
use crate::error::{Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "kuramoto-gnn",
    version,
    about = "Kuramoto-driven graph neural network experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train and evaluate over splits and seeds.
    Run(Flags),
    /// Accuracy against terminal time T.
    DepthSweep(Flags),
    /// Accuracy against coupling strength K or labels per class.
    CouplingSweep(Flags),
    /// Adaptive-solver cost of Kuramoto against linear diffusion.
    NfeCompare(Flags),
    /// Synchronization time series on a fixed coupling.
    SyncDemo(Flags),
    /// Write a synthetic graph as a bundle directory.
    MakeBundle(Flags),
}

#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// TOML file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Bundle directory or synthetic:KIND[:k=v,...].
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub dynamics: Option<String>,
    #[arg(long = "K")]
    pub k: Option<f64>,
    #[arg(long = "T")]
    pub t: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    /// euler, rk4 or dopri5.
    #[arg(long)]
    pub solver: Option<String>,
    #[arg(long)]
    pub rtol: Option<f64>,
    #[arg(long)]
    pub atol: Option<f64>,
    #[arg(long)]
    pub splits: Option<usize>,
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub out: Option<String>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Sweep axis: T, K or per_class.
    #[arg(long)]
    pub axis: Option<String>,
    /// Comma-separated sweep values.
    #[arg(long, value_delimiter = ',')]
    pub values: Option<Vec<f64>>,
}

impl Flags {
    /// Reads `--config` (if any) and overlays the flags on top.
    pub fn file_config(&self) -> Result<FileConfig> {
        let mut fc = match &self.config {
            Some(path) => FileConfig::from_path(path)?,
            None => FileConfig::default(),
        };
        macro_rules! overlay {
            ($($src:ident => $dst:expr),* $(,)?) => {
                $(if let Some(v) = &self.$src { $dst = Some(v.clone()); })*
            };
        }
        overlay!(
            dataset => fc.data.dataset,
            dynamics => fc.model.dynamics,
            k => fc.model.k,
            t => fc.model.t,
            dt => fc.model.dt,
            hidden => fc.model.hidden,
            solver => fc.solver.method,
            rtol => fc.solver.rtol,
            atol => fc.solver.atol,
            splits => fc.run.splits,
            seeds => fc.run.seeds,
            out => fc.run.out,
            workers => fc.run.workers,
            epochs => fc.train.epochs,
            axis => fc.sweep.axis,
            values => fc.sweep.values,
        );
        Ok(fc)
    }
}

fn is_config_error(e: &Error) -> bool {
    matches!(e, Error::Config(_) | Error::InvalidArgument(_))
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code: 0 on success, 2 for usage or
/// configuration errors, 3 when the dataset cannot be loaded, 1 otherwise.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let (flags, command) = match &cli.command {
        Command::Run(f) => (f, "run"),
        Command::DepthSweep(f) => (f, "depth-sweep"),
        Command::CouplingSweep(f) => (f, "coupling-sweep"),
        Command::NfeCompare(f) => (f, "nfe-compare"),
        Command::SyncDemo(f) => (f, "sync-demo"),
        Command::MakeBundle(f) => (f, "make-bundle"),
    };
    let resolved = flags
        .file_config()
        .and_then(|fc| ExperimentConfig::resolve(&fc).map(|cfg| (fc, cfg)));
    let (fc, cfg) = match resolved {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    if let Command::MakeBundle(_) = cli.command {
        return match cmd_make_bundle(&cfg) {
            Ok(g) => {
                println!("wrote {} nodes to {}", g.num_nodes(), cfg.out.display());
                0
            }
            Err(e) => {
                eprintln!("error: {e}");
                if is_config_error(&e) {
                    2
                } else {
                    1
                }
            }
        };
    }
    let g = match load_dataset(&cfg.dataset, cfg.lcc) {
        Ok(g) => g,
        Err(e) => {
            eprintln!("error: loading dataset: {e}");
            return if is_config_error(&e) { 2 } else { 3 };
        }
    };
    let outcome = write_effective_config(&cfg, &fc).and_then(|_| match command {
        "run" => cmd_run(&cfg, &g).map(|r| format!("mean_acc {:.4} std_acc {:.4}", r.mean_acc, r.std_acc)),
        "depth-sweep" => cmd_depth_sweep(&cfg, &g).map(|r| format!("{} rows", r.len())),
        "coupling-sweep" => cmd_coupling_sweep(&cfg, &g).map(|r| format!("{} rows", r.len())),
        "nfe-compare" => cmd_nfe_compare(&cfg, &g).map(|r| {
            let nfe = |i: usize| r[i].nfe.map_or("failed".to_string(), |n| n.to_string());
            format!("nfe kuramoto {} grand_linear {}", nfe(0), nfe(1))
        }),
        _ => cmd_sync_demo(&cfg, &g).map(|r| format!("{} rows", r.len())),
    });
    match outcome {
        Ok(msg) => {
            println!("{command}: {msg} -> {}", cfg.out.display());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            if is_config_error(&e) {
                2
            } else {
                1
            }
        }
    }
}
