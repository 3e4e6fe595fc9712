//! `frugal`: generate pools, run simulated sessions, ablate, report, serve.
//!
//! Exit codes: 0 success, 1 runtime error, 2 usage error.

use std::fs;
use std::io::BufReader;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};

use frugal_core::pool::{load_pool, split_train_test, Pool, SyntheticSpec};
use frugal_core::report::{compare_runs, run_ablation, ReportTable};
use frugal_core::{run_simulated, PoolSource, RunConfig, RunLog};
use frugal_server::AppState;

#[derive(Debug, Parser)]
#[command(
    name = "frugal",
    version,
    about = "Frugal active learning for binary change detection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic two-blob pool (manifest + CSV).
    Gen {
        #[arg(long, default_value_t = 2200)]
        n: usize,
        #[arg(long, default_value_t = 8)]
        dim: usize,
        #[arg(long, default_value_t = 0.0177)]
        pos_frac: f64,
        #[arg(long, default_value_t = 5.0)]
        sep: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// File stem for `<stem>.json` and `<stem>.csv`.
        #[arg(long, default_value = "pool")]
        name: String,
    },
    /// One simulated session; writes its run log as JSON lines.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Every criterion combination plus both RL variants, per display size.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long, value_delimiter = ',', default_values_t = [8usize, 16, 32])]
        sizes: Vec<usize>,
        /// Output directory for ablation.txt and ablation.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Strategy comparison table from run logs of the same pool.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        /// Output directory for comparison.txt and comparison.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Start the HTTP service.
    Serve {
        /// Pool manifests to register at startup.
        #[arg(long)]
        pool: Vec<PathBuf>,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
    },
}

enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();

    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Gen {
            n,
            dim,
            pos_frac,
            sep,
            seed,
            out,
            name,
        } => {
            let spec = SyntheticSpec {
                n,
                d: dim,
                pos_fraction: pos_frac,
                separation: sep,
                seed,
            };
            let pool = spec.generate().map_err(|e| Failure::Usage(e.into()))?;
            let manifest = pool.write(&out, &name).map_err(anyhow::Error::from)?;
            let (neg, pos) = pool.class_counts();
            println!(
                "{} ({} items, {pos} positive, {neg} negative)",
                manifest.display(),
                pool.len()
            );
            Ok(())
        }
        Command::Run { config, seed, out } => {
            let (mut cfg, base) = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let (train, test) = load_split(&cfg, &base)?;
            let log = run_simulated(&train, &test, &cfg, cfg.seed).map_err(anyhow::Error::from)?;
            write_file(&out, &log.to_jsonl())?;
            match log.final_eer() {
                Some(e) => println!(
                    "{} iterations, final test EER {:.2}% -> {}",
                    log.records.len(),
                    100.0 * e,
                    out.display()
                ),
                None => println!("{} iterations -> {}", log.records.len(), out.display()),
            }
            Ok(())
        }
        Command::Ablate {
            config,
            seeds,
            sizes,
            out,
        } => {
            if seeds == 0 {
                return Err(Failure::Usage(anyhow!("--seeds must be at least 1")));
            }
            if sizes.is_empty() || sizes.contains(&0) {
                return Err(Failure::Usage(anyhow!("--sizes must be positive")));
            }
            let (cfg, base) = load_config(config.as_deref())?;
            let (train, test) = load_split(&cfg, &base)?;
            let seed_list: Vec<u64> = (0..seeds).map(|i| cfg.seed + i).collect();
            let table = run_ablation(&train, &test, &cfg, &sizes, &seed_list)
                .map_err(anyhow::Error::from)?;
            write_table(&table, &out, "ablation")?;
            Ok(())
        }
        Command::Report { runs, out } => {
            let logs = runs
                .iter()
                .map(|p| {
                    let f = fs::File::open(p)
                        .with_context(|| format!("cannot open {}", p.display()))?;
                    RunLog::read_jsonl(BufReader::new(f))
                        .with_context(|| format!("cannot parse {}", p.display()))
                })
                .collect::<anyhow::Result<Vec<_>>>()?;
            let table = compare_runs(&logs).map_err(anyhow::Error::from)?;
            write_table(&table, &out, "comparison")?;
            Ok(())
        }
        Command::Serve { pool, port, host } => serve(&pool, SocketAddr::new(host, port)),
    }
}

/// The config and the directory its relative paths resolve against.
fn load_config(path: Option<&Path>) -> Result<(RunConfig, PathBuf), Failure> {
    match path {
        Some(p) => {
            let cfg = RunConfig::load(p).with_context(|| format!("config {}", p.display()))?;
            let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
            Ok((cfg, base))
        }
        None => Ok((RunConfig::default(), PathBuf::from("."))),
    }
}

fn load_split(cfg: &RunConfig, base: &Path) -> anyhow::Result<(Pool, Pool)> {
    let source = cfg
        .pool
        .clone()
        .unwrap_or(PoolSource::Synthetic(SyntheticSpec::default()));
    let pool = source.load(base)?;
    let split = split_train_test(&pool, cfg.split_seed)?;
    if let Some(w) = &split.warning {
        tracing::warn!("{w}");
    }
    Ok((split.train, split.test))
}

fn write_file(path: &Path, body: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    fs::write(path, body).with_context(|| format!("cannot write {}", path.display()))
}

fn write_table(table: &ReportTable, dir: &Path, stem: &str) -> anyhow::Result<()> {
    let text = table.render_text();
    write_file(&dir.join(format!("{stem}.txt")), &text)?;
    write_file(&dir.join(format!("{stem}.csv")), &table.render_csv())?;
    print!("{text}");
    Ok(())
}

fn serve(pools: &[PathBuf], addr: SocketAddr) -> Result<(), Failure> {
    let state = AppState::from_env();
    for path in pools {
        let pool = load_pool(path).with_context(|| format!("pool {}", path.display()))?;
        let entry = state.register_pool(pool);
        println!("pool {} -> {}", path.display(), entry.id);
    }
    let runtime = tokio::runtime::Runtime::new().context("cannot start runtime")?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .with_context(|| format!("cannot bind {addr}"))?;
        println!("listening on http://{}", listener.local_addr()?);
        frugal_server::serve(listener, state)
            .await
            .context("server failed")?;
        Ok::<_, anyhow::Error>(())
    })?;
    Ok(())
}
