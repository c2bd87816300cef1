//! Command line front end: sample-set generation, cache maintenance,
//! and the three experiment commands, each emitting deterministic CSV.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lcdsym::cache::{self, CacheKey};
use lcdsym::cylinder;
use lcdsym::eval::{
    self, parse_scheme_list, MomentStudyConfig, SchemeEnv, SymmetricScenarioConfig, TrackingConfig,
};
use lcdsym::Error;

#[derive(Parser)]
#[command(
    name = "lcdsym",
    version,
    about = "Optimal point-symmetric sample sets for Gaussians, with sigma-point \
             baselines and sample-based Kalman filtering experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Cache directory for optimized sample sets
    /// (default: $LCDSYM_CACHE_DIR or ./sample-cache).
    #[arg(long, global = true, value_name = "DIR")]
    cache_dir: Option<PathBuf>,

    /// Base seed for every random draw.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,

    /// Gauss-Legendre nodes for the kernel-width quadrature.
    #[arg(long, global = true, default_value_t = 200)]
    quad_nodes: usize,

    /// Kernel-width bound; defaults to a dimension-aware choice.
    #[arg(long, global = true, value_name = "B")]
    b_max: Option<f64>,

    /// Optimize sample sets afresh even when a cached file exists.
    #[arg(long, global = true)]
    force_recompute: bool,

    /// Write the result CSV here instead of stdout.
    #[arg(short, long, global = true, value_name = "CSV")]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize a standard-normal sample set and store it in the cache.
    Generate {
        /// Dimension of the standard normal.
        #[arg(short = 'n', long)]
        dim: usize,
        /// Total sample count (odd adds a center sample).
        #[arg(short = 'm', long)]
        samples: usize,
    },
    /// Inspect or clear the sample cache.
    Cache {
        #[command(subcommand)]
        action: CacheAction,
    },
    /// Moment-accuracy study across sampling schemes.
    Moments {
        /// Dimensions to evaluate.
        #[arg(short = 'n', long = "dims", value_delimiter = ',', default_values_t = vec![3usize, 6])]
        dims: Vec<usize>,
        /// Moment orders to evaluate.
        #[arg(long, value_delimiter = ',', default_values_t = vec![4u32, 6, 8])]
        orders: Vec<u32>,
        /// Schemes: ukf, ckf5, ghkf, s2kf:<samples>, rukf:<iterations>.
        #[arg(long, default_value = "s2kf:25,ukf,ckf5,ghkf,rukf:5")]
        schemes: String,
        /// Averaging runs for stochastic schemes.
        #[arg(long, default_value_t = 20)]
        runs: usize,
    },
    /// Symmetric range-measurement scenario: posterior must equal prior.
    Symmetric {
        /// Monte Carlo measurement draws.
        #[arg(long, default_value_t = 100)]
        runs: usize,
        /// Joint-space samples for the optimized set and the surrogate.
        #[arg(long, default_value_t = 11)]
        samples: usize,
    },
    /// Extended-object tracking of a simulated cylinder.
    Track {
        #[arg(long, default_value_t = 50)]
        steps: usize,
        #[arg(long, default_value_t = 5)]
        runs: usize,
        /// Surface points observed per step.
        #[arg(long, default_value_t = cylinder::DEFAULT_BATCH)]
        batch: usize,
        /// Schemes driving the measurement update.
        #[arg(long, default_value = "s2kf:461,rukf:5,rukf:10,ckf5")]
        schemes: String,
        /// Skip the pure-prediction reference row.
        #[arg(long)]
        no_baseline: bool,
        /// Full-length experiment: 500 steps, 100 runs, unscaled
        /// shape schedule. Expect a long runtime.
        #[arg(long)]
        full_scale: bool,
    },
}

#[derive(Subcommand)]
enum CacheAction {
    /// List cached sample sets.
    List,
    /// Check every cached file for corruption.
    Validate,
    /// Delete all cached sample sets.
    Purge,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidConfig(_) | Error::Domain(_) | Error::DimensionMismatch(_) => 2,
        Error::Numerical(_) | Error::Degenerate(_) => 3,
        Error::CacheIntegrity(_) => 4,
        Error::Io(_) => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn run(cli: Cli) -> lcdsym::Result<()> {
    let root = cache::resolve_root(cli.cache_dir.as_deref());
    let env = SchemeEnv {
        cache_root: root.clone(),
        b_max: cli.b_max,
        quad_nodes: cli.quad_nodes,
        seed: cli.seed,
        force_recompute: cli.force_recompute,
    };

    match cli.command {
        Command::Generate { dim, samples } => {
            let key = CacheKey::new(dim, samples)?;
            let cfg = env.optimizer_for(dim);
            let (set, report) = cache::load_or_optimize(&key, &root, &cfg, cli.force_recompute)?;
            let path = key.path_in(&root);
            if let Some(r) = &report {
                if !r.converged {
                    log::warn!(
                        "gradient norm {:.3e} after {} iterations; stored the best \
                         iterate anyway (raise max iterations or loosen the tolerance)",
                        r.final_grad_norm,
                        r.iterations
                    );
                }
            }
            match report {
                Some(r) => println!(
                    "optimized {} samples in {} dims: distance {:.12e}, {} iterations, \
                     converged: {} -> {}",
                    set.total_samples(),
                    set.dim(),
                    r.final_distance,
                    r.iterations,
                    r.converged,
                    path.display()
                ),
                None => println!(
                    "cache hit: {} ({} samples in {} dims)",
                    path.display(),
                    set.total_samples(),
                    set.dim()
                ),
            }
            Ok(())
        }
        Command::Cache { action } => run_cache(action, &root),
        Command::Moments {
            dims,
            orders,
            schemes,
            runs,
        } => {
            let cfg = MomentStudyConfig {
                dims,
                orders,
                schemes: parse_scheme_list(&schemes)?,
                runs,
                seed: cli.seed,
            };
            let records = eval::run_moment_study(&cfg, &env)?;
            emit(cli.output.as_deref(), &eval::moment_csv(&records))
        }
        Command::Symmetric { runs, samples } => {
            let cfg = SymmetricScenarioConfig {
                runs,
                samples,
                seed: cli.seed,
            };
            let records = eval::run_symmetric_scenario(&cfg, &env)?;
            emit(cli.output.as_deref(), &eval::symmetric_csv(&records))
        }
        Command::Track {
            steps,
            runs,
            batch,
            schemes,
            no_baseline,
            full_scale,
        } => {
            let cfg = TrackingConfig {
                steps,
                runs,
                batch,
                schemes: parse_scheme_list(&schemes)?,
                include_baseline: !no_baseline,
                full_scale,
                seed: cli.seed,
            };
            let (records, summaries) = eval::run_cylinder_tracking(&cfg, &env)?;
            let diverged = summaries.iter().filter(|s| s.diverged).count();
            if diverged > 0 {
                log::warn!("{diverged} of {} estimator runs diverged", summaries.len());
            }
            emit(cli.output.as_deref(), &eval::tracking_csv(&records))
        }
    }
}

fn run_cache(action: CacheAction, root: &std::path::Path) -> lcdsym::Result<()> {
    match action {
        CacheAction::List => {
            let entries = cache::list(root)?;
            for e in &entries {
                println!(
                    "{}  dim {}  samples {}  {} bytes",
                    e.key.file_name(),
                    e.key.dim,
                    e.key.total_samples,
                    e.bytes
                );
            }
            println!("{} cached set(s) in {}", entries.len(), root.display());
            Ok(())
        }
        CacheAction::Validate => {
            let results = cache::validate_all(root)?;
            let mut bad = 0usize;
            for (entry, problem) in &results {
                match problem {
                    None => println!("{}  ok", entry.key.file_name()),
                    Some(msg) => {
                        bad += 1;
                        println!("{}  CORRUPT: {msg}", entry.key.file_name());
                    }
                }
            }
            if bad > 0 {
                return Err(Error::CacheIntegrity(format!(
                    "{bad} of {} cache files failed validation",
                    results.len()
                )));
            }
            println!("{} cache file(s) validated", results.len());
            Ok(())
        }
        CacheAction::Purge => {
            let removed = cache::purge(root)?;
            println!("removed {removed} cached set(s) from {}", root.display());
            Ok(())
        }
    }
}

fn emit(path: Option<&std::path::Path>, csv: &str) -> lcdsym::Result<()> {
    match path {
        Some(p) => {
            fs::write(p, csv)?;
            log::info!("wrote {}", p.display());
            Ok(())
        }
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn global_flags_and_delimited_lists_parse() {
        let cli = Cli::try_parse_from([
            "lcdsym", "moments", "-n", "3,6", "--orders", "4,8", "--seed", "7",
        ])
        .unwrap();
        assert_eq!(cli.seed, 7);
        match cli.command {
            Command::Moments { dims, orders, .. } => {
                assert_eq!(dims, vec![3, 6]);
                assert_eq!(orders, vec![4, 8]);
            }
            _ => panic!("parsed the wrong subcommand"),
        }
        assert!(Cli::try_parse_from(["lcdsym", "generate", "-n", "3"]).is_err());
    }

    #[test]
    fn error_exit_codes_are_stable() {
        assert_eq!(exit_code(&Error::InvalidConfig(String::new())), 2);
        assert_eq!(exit_code(&Error::Domain(String::new())), 2);
        assert_eq!(exit_code(&Error::DimensionMismatch(String::new())), 2);
        assert_eq!(exit_code(&Error::Numerical(String::new())), 3);
        assert_eq!(exit_code(&Error::Degenerate(String::new())), 3);
        assert_eq!(exit_code(&Error::CacheIntegrity(String::new())), 4);
        assert_eq!(exit_code(&Error::Io(std::io::Error::other("disk"))), 1);
    }
}
