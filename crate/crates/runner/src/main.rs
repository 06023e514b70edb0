use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use runner::{emit_outputs, load_config, run_experiment, ConfigError, Lab, Mode};

const OUT_ENV: &str = "UNLEARN_LAB_OUT";

#[derive(Parser)]
#[command(name = "unlearn-lab", about = "Cross-lingual unlearning experiments on a toy recall model")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run an experiment and write its outputs
    Run {
        #[arg(long)]
        config: PathBuf,
        /// seed panel, e.g. `0..19` (inclusive) or `1,4,9`
        #[arg(long)]
        seeds: Option<String>,
        /// output directory (overrides $UNLEARN_LAB_OUT and the config)
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        mode: Option<String>,
        /// worker threads (default: all cores)
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Check a config without running it
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn parse_seeds(s: &str) -> Result<Vec<u64>, String> {
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| format!("bad seed range start in {s}"))?;
        let b: u64 = b.trim().trim_start_matches('=').parse().map_err(|_| format!("bad seed range end in {s}"))?;
        if b < a {
            return Err(format!("empty seed range {s}"));
        }
        return Ok((a..=b).collect());
    }
    s.split(',').map(|x| x.trim().parse::<u64>().map_err(|_| format!("bad seed {x}"))).collect()
}

fn config_error(e: impl std::fmt::Display) -> ExitCode {
    eprintln!("config error: {e}");
    ExitCode::from(2)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Validate { config } => match load_config(&config) {
            Ok(cfg) => {
                println!("ok: {} config, {} seed(s), hash {}", cfg.mode.name(), cfg.seeds.len(), cfg.hash());
                ExitCode::SUCCESS
            }
            Err(e) => config_error(e),
        },
        Cmd::Run { config, seeds, out, mode, jobs } => {
            let mut cfg = match load_config(&config) {
                Ok(c) => c,
                Err(e) => return config_error(e),
            };
            if let Some(s) = seeds {
                match parse_seeds(&s) {
                    Ok(v) => cfg.seeds = v,
                    Err(e) => return config_error(ConfigError::Invalid { field: "--seeds".into(), message: e }),
                }
            }
            if let Some(m) = mode {
                match m.parse::<Mode>() {
                    Ok(m) => cfg.mode = m,
                    Err(e) => return config_error(ConfigError::Invalid { field: "--mode".into(), message: e }),
                }
            }
            if let Some(o) = out.or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from)) {
                cfg.output_dir = o;
            }
            if let Err(e) = cfg.validate() {
                return config_error(e);
            }
            let mut pool = rayon::ThreadPoolBuilder::new();
            if let Some(j) = jobs {
                pool = pool.num_threads(j.max(1));
            }
            let pool = match pool.build() {
                Ok(p) => p,
                Err(e) => return config_error(format!("--jobs: {e}")),
            };
            let lab = Lab::new();
            let outcome = match pool.install(|| run_experiment(&lab, &cfg)) {
                Ok(o) => o,
                Err(e) => {
                    eprintln!("{e}");
                    return ExitCode::from(3);
                }
            };
            match emit_outputs(&outcome, &cfg, &cfg.output_dir) {
                Ok(files) => {
                    for f in files {
                        println!("wrote {}", f.display());
                    }
                }
                Err(e) => {
                    eprintln!("{e}");
                    return ExitCode::from(1);
                }
            }
            let errors = outcome.errors();
            if errors > 0 {
                eprintln!("{errors} record(s) failed numerically; see the error column of results.csv");
                return ExitCode::from(3);
            }
            ExitCode::SUCCESS
        }
    }
}
