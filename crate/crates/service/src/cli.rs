use std::fs::File;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use consent_core::bench::{
    run_gas_bench, run_minimization, run_scalability, write_gas_csv, write_minimization_csv, write_scale_csv,
    DEFAULT_BATCH_SIZES, DEFAULT_GAS_ITERATIONS,
};
use consent_core::engine::replay;
use consent_core::etl::{build_stats, export_stats, ExportFormat, TimeRange};
use consent_core::gas::{calibrate, per_operation_targets, minimization_targets, NEWBORNTIME_V1};
use consent_core::ledger::{read_chain_file, verify_chain_file};
use consent_core::secrets::InstallSecret;
use consent_core::{GasSchedule, SystemClock};

use crate::config::ServiceConfig;
use crate::error::ServiceError;
use crate::routes::GateDecision;
use crate::state::AppState;

#[derive(Debug, Parser)]
#[command(name = "consentchain", version, about = "Consent ledger service and tools")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    /// Gas schedule profile name.
    #[arg(long, default_value = NEWBORNTIME_V1)]
    pub gas_profile: String,
    /// Directory holding `<name>.gas` files. Built-in profiles are used otherwise.
    #[arg(long)]
    pub profile_dir: Option<PathBuf>,
}

impl ProfileArgs {
    fn load(&self) -> Result<GasSchedule, ServiceError> {
        Ok(GasSchedule::load(&self.gas_profile, self.profile_dir.as_deref())?)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP service. The install secret is read from CONSENT_MASTER_KEY
    /// unless --master-key-file is given.
    Serve {
        #[arg(long)]
        config: PathBuf,
        /// File holding the 32-byte install secret as hex.
        #[arg(long)]
        master_key_file: Option<PathBuf>,
        #[arg(long)]
        chain: PathBuf,
        #[arg(long)]
        vault: PathBuf,
        #[command(flatten)]
        profile: ProfileArgs,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        bind: String,
    },
    /// Export anonymized statistics from a chain file.
    Etl {
        #[arg(long)]
        chain: PathBuf,
        #[arg(long)]
        from: Option<NaiveDate>,
        #[arg(long)]
        to: Option<NaiveDate>,
        #[arg(long, default_value = "json")]
        format: ExportFormat,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Gas and throughput benchmarks.
    Bench {
        #[command(subcommand)]
        which: BenchCommand,
    },
    /// Check a chain file's hashes, then replay it against the contract.
    Verify {
        #[arg(long)]
        chain: PathBuf,
        #[command(flatten)]
        profile: ProfileArgs,
    },
    /// Fit a gas schedule to the reference per-operation costs.
    Calibrate {
        #[arg(long, default_value = NEWBORNTIME_V1)]
        name: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Poll the media gate and print allow/deny decisions.
    MediaPoll {
        /// Service base URL.
        #[arg(long, default_value = "http://127.0.0.1:8080")]
        url: String,
        #[arg(long, env = "CONSENT_AGENT_KEY", hide_env_values = true)]
        key: String,
        #[arg(long = "study-id", required = true)]
        study_ids: Vec<String>,
        #[arg(long, default_value_t = 60)]
        interval_secs: u64,
        /// Number of polling rounds; 0 polls forever.
        #[arg(long, default_value_t = 1)]
        rounds: u64,
    },
}

#[derive(Debug, Subcommand)]
pub enum BenchCommand {
    /// Per-operation gas: first add, adds, query, revokes by scan position.
    Gas {
        #[arg(long, default_value_t = DEFAULT_GAS_ITERATIONS)]
        iterations: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        profile: ProfileArgs,
    },
    /// Batch totals and cumulative wall time per batch size.
    Scale {
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_BATCH_SIZES)]
        sizes: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        profile: ProfileArgs,
    },
    /// Full versus minimal record cost.
    Minimize {
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        profile: ProfileArgs,
    },
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, ServiceError> {
    Ok(match path {
        Some(p) => Box::new(File::create(p)?),
        None => Box::new(std::io::stdout().lock()),
    })
}

pub fn run(cli: Cli) -> Result<ExitCode, ServiceError> {
    match cli.command {
        Command::Serve {
            config,
            master_key_file,
            chain,
            vault,
            profile,
            port,
            bind,
        } => {
            let cfg = ServiceConfig::load(&config)?;
            let secret = match master_key_file {
                Some(p) => InstallSecret::from_file(&p)?,
                None => InstallSecret::from_env()?,
            };
            let state = AppState::open(cfg, secret, &chain, &vault, profile.load()?, Arc::new(SystemClock))?;
            let addr: SocketAddr = format!("{bind}:{port}")
                .parse()
                .map_err(|e| ServiceError::Config(format!("bind address: {e}")))?;
            runtime()?.block_on(serve(state, addr))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Etl {
            chain,
            from,
            to,
            format,
            out,
        } => {
            let blocks = read_chain_file(&chain)?;
            let stats = build_stats(&blocks, TimeRange::new(from, to))?;
            let bytes = export_stats(&stats, format)?;
            output(out.as_deref())?.write_all(&bytes)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Bench { which } => {
            bench(which)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { chain, profile } => {
            let report = verify_chain_file(&chain)?;
            println!("{}", serde_json::to_string(&report).expect("report serializes"));
            if !report.is_ok() {
                return Ok(ExitCode::from(1));
            }
            let blocks = read_chain_file(&chain)?;
            match replay(&blocks, &profile.load()?) {
                Ok(_) => Ok(ExitCode::SUCCESS),
                Err(e) => {
                    eprintln!("replay failed: {e}");
                    Ok(ExitCode::from(2))
                }
            }
        }
        Command::Calibrate { name, out } => {
            let mut targets = per_operation_targets();
            targets.extend(minimization_targets());
            let mut schedule = calibrate(&targets)?;
            schedule.profile_name = name;
            output(out.as_deref())?.write_all(schedule.to_config_string().as_bytes())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::MediaPoll {
            url,
            key,
            study_ids,
            interval_secs,
            rounds,
        } => {
            runtime()?.block_on(media_poll(&url, &key, &study_ids, interval_secs, rounds))?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn runtime() -> Result<tokio::runtime::Runtime, ServiceError> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

async fn serve(state: Arc<AppState>, addr: SocketAddr) -> Result<(), ServiceError> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, crate::router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

fn bench(which: BenchCommand) -> Result<(), ServiceError> {
    match which {
        BenchCommand::Gas {
            iterations,
            out,
            profile,
        } => {
            let rows = run_gas_bench(&profile.load()?, iterations)?;
            write_gas_csv(output(out.as_deref())?, &rows)?;
        }
        BenchCommand::Scale { sizes, out, profile } => {
            let result = run_scalability(&profile.load()?, &sizes)?;
            for r in &result.rows {
                eprintln!("n={:<6} total_gas={:<12} wall_ms={:.1}", r.n, r.total_gas, r.wall_ms);
            }
            write_scale_csv(output(out.as_deref())?, &result)?;
        }
        BenchCommand::Minimize { out, profile } => {
            let r = run_minimization(&profile.load()?)?;
            write_minimization_csv(output(out.as_deref())?, &r)?;
        }
    }
    Ok(())
}

/// Prints one tab-separated line per decision: checked_at, study id, allow|deny.
pub async fn media_poll(url: &str, key: &str, study_ids: &[String], interval_secs: u64, rounds: u64) -> Result<(), ServiceError> {
    let client = reqwest::Client::new();
    let base = url.trim_end_matches('/');
    let mut round = 0;
    loop {
        for id in study_ids {
            let resp = client
                .get(format!("{base}/media-gate"))
                .query(&[("study_id", id)])
                .bearer_auth(key)
                .send()
                .await
                .map_err(|e| ServiceError::Http(e.to_string()))?;
            let status = resp.status();
            if status.is_success() {
                let d: GateDecision = resp.json().await.map_err(|e| ServiceError::Http(e.to_string()))?;
                println!("{}\t{}\t{}", d.checked_at, d.study_id, if d.allowed { "allow" } else { "deny" });
            } else {
                println!("-\t{id}\tdeny ({status})");
            }
        }
        round += 1;
        if rounds != 0 && round >= rounds {
            return Ok(());
        }
        tokio::time::sleep(Duration::from_secs(interval_secs)).await;
    }
}
