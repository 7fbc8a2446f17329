use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use wpm_cli::config::RunConfig;
use wpm_cli::gen::cmd_gen_topology;
use wpm_cli::plot::{cmd_plot, Metric};
use wpm_cli::{cmd_run, cmd_verify, thread_count, CliError, VerifyOptions};

#[derive(Parser)]
#[command(name = "wpm", version, about = "Weighted power-p mean decentralized training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment (or p sweep) described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// WPMT or .csv topology file to use instead of generating one.
        #[arg(long)]
        topology: Option<PathBuf>,
        /// Caps the number of training samples.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Run the numerical self-checks.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Samples per exponent for the sampled checks.
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        /// Comma-separated exponents.
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,5,9,15")]
        p: Vec<u32>,
    },
    /// Plot one metric of one or more trace.csv files.
    Plot {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "accuracy")]
        metric: Metric,
        #[arg(required = true)]
        traces: Vec<PathBuf>,
    },
    /// Generate a topology sequence file (WPMT, or CSV for a .csv path).
    GenTopology {
        #[arg(long)]
        out: PathBuf,
        /// Take devices, density, iterations, window and seed from a config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        devices: Option<usize>,
        #[arg(long)]
        density: Option<f64>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn execute(cli: Cli) -> Result<i32, CliError> {
    if let Some(n) = thread_count(std::env::var("WPM_THREADS").ok().as_deref())? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    match cli.command {
        Command::Run { config, out, seed, topology, limit } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.experiment.seed = s;
            }
            if topology.is_some() {
                cfg.topology = topology;
            }
            if limit.is_some() {
                cfg.train_limit = limit;
            }
            let manifest = cmd_run(&cfg, &out)?;
            for (p, acc, conv) in &manifest.results {
                let conv = conv.map_or_else(|| "not reached".to_string(), |t| format!("iteration {t}"));
                println!("p={p}: final mean accuracy {acc:.4}, target {}: {conv}", cfg.target_accuracy);
            }
            println!(
                "wrote {} files to {} in {:.1}s",
                manifest.files.len(),
                manifest.out_dir.display(),
                manifest.duration.as_secs_f64()
            );
            Ok(0)
        }
        Command::Verify { seed, samples, p } => {
            if p.contains(&0) {
                return Err(CliError::Config("p must be positive".into()));
            }
            let report = cmd_verify(&VerifyOptions { p_values: p, seed, samples, ..Default::default() });
            for c in &report.checks {
                println!("{c}");
            }
            Ok(report.exit_code())
        }
        Command::Plot { out, metric, traces } => {
            cmd_plot(&traces, &out, metric)?;
            println!("wrote {}", out.display());
            Ok(0)
        }
        Command::GenTopology { out, config, devices, density, iterations, window, seed } => {
            let base = match config {
                Some(path) => RunConfig::load(&path)?.experiment,
                None => RunConfig::default().experiment,
            };
            let seq = cmd_gen_topology(
                devices.unwrap_or(base.devices),
                density.unwrap_or(base.density),
                iterations.unwrap_or(base.iterations),
                window.unwrap_or(base.window),
                seed.unwrap_or(base.seed),
                &out,
            )?;
            println!("wrote {} snapshots over {} devices to {}", seq.len(), seq.num_nodes(), out.display());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
