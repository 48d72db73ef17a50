use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;

use ctxbroker::qoc::{validate_profile, IndicatorCatalog, RequirementProfile, ServiceOffer};
use ctxbroker::selection::{build_decision_matrix, DecisionMatrix};
use ctxbroker::service::{serve, ServiceConfig};
use ctxbroker::sim::report::table;
use ctxbroker::sim::{emit_report, generate_random_scenario, load_scenario, run, GenParams, ReportFormat, RunMode};

#[derive(Parser)]
#[command(name = "ctxbroker", version, about = "Context broker with QoC/QoS-driven service selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the broker service.
    Serve {
        /// TOML config file; flags below override its values.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, env = "CTXBROKER_LISTEN")]
        listen: Option<String>,
        /// JSON indicator catalog.
        #[arg(long)]
        catalog: Option<PathBuf>,
        /// Snapshot file, restored on start and rewritten after each mutation.
        #[arg(long, env = "CTXBROKER_PERSIST")]
        persist: Option<PathBuf>,
        #[arg(long)]
        log_level: Option<String>,
    },
    /// Print the decision matrix for a profile against a list of offers.
    Score { profile: PathBuf, offers: PathBuf },
    #[command(subcommand)]
    Sim(SimCommand),
}

#[derive(Subcommand)]
enum SimCommand {
    /// Replay a scenario file and print its report.
    Run {
        scenario: PathBuf,
        #[arg(long, value_enum, default_value = "in-process")]
        mode: Mode,
        /// `table`, `json`, or a file path that receives the JSON report.
        #[arg(long, default_value = "table")]
        out: String,
    },
    /// Generate a random scenario as JSON on stdout.
    Gen {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        services: usize,
        #[arg(long, default_value_t = 3)]
        topics: usize,
        #[arg(long, default_value_t = 3)]
        qoc: usize,
        #[arg(long, default_value_t = 2)]
        qos: usize,
        #[arg(long, default_value_t = 50)]
        events: usize,
        #[arg(long, default_value_t = 2)]
        consumers: usize,
        #[arg(long, default_value_t = 3)]
        clouds: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    InProcess,
    OverWire,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Serve { config, listen, catalog, persist, log_level } => {
            let mut cfg = match &config {
                Some(path) => ServiceConfig::from_file(path)?,
                None => ServiceConfig::default(),
            };
            if let Some(v) = listen {
                cfg.listen = v;
            }
            if let Some(v) = catalog {
                cfg.catalog = v;
            }
            if persist.is_some() {
                cfg.persist = persist;
            }
            if let Some(v) = log_level {
                cfg.log_level = v;
            }
            tracing_subscriber::fmt()
                .with_env_filter(EnvFilter::try_new(&cfg.log_level).context("bad --log-level")?)
                .with_writer(std::io::stderr)
                .init();
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let handle = serve(&cfg).await?;
                tracing::info!(addr = %handle.addr, "listening");
                tokio::signal::ctrl_c().await?;
                handle.shutdown().await;
                Ok::<_, anyhow::Error>(())
            })?;
        }
        Command::Score { profile, offers } => {
            let profile: RequirementProfile = read_json(&profile)?;
            let offers: Vec<ServiceOffer> = read_json(&offers)?;
            check_inputs(&profile, &offers)?;
            let decision = build_decision_matrix(&offers, &profile)?;
            print!("{}", decision_table(&decision));
            println!();
            println!("{}", serde_json::to_string_pretty(&decision)?);
        }
        Command::Sim(SimCommand::Run { scenario, mode, out }) => {
            let scenario = load_scenario(&scenario)?;
            let mode = match mode {
                Mode::InProcess => RunMode::InProcess,
                Mode::OverWire => RunMode::OverWire,
            };
            let report = run(&scenario, mode)?;
            match out.as_str() {
                "table" => print!("{}", emit_report(&report, ReportFormat::Table)),
                "json" | "-" => println!("{}", emit_report(&report, ReportFormat::Json)),
                path => {
                    std::fs::write(path, emit_report(&report, ReportFormat::Json))
                        .with_context(|| format!("writing {path}"))?;
                    print!("{}", emit_report(&report, ReportFormat::Table));
                }
            }
        }
        Command::Sim(SimCommand::Gen { seed, services, topics, qoc, qos, events, consumers, clouds }) => {
            let params = GenParams { consumers, clouds, ..GenParams::new(seed, services, topics, qoc, qos, events) };
            println!("{}", serde_json::to_string_pretty(&generate_random_scenario(params))?);
        }
    }
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// The catalog is implied by the profile's shape; offers must agree with it.
fn check_inputs(profile: &RequirementProfile, offers: &[ServiceOffer]) -> Result<()> {
    let m = profile.weights.first().map_or(0, Vec::len);
    let catalog = IndicatorCatalog {
        qoc_indicators: (1..=m).map(|i| format!("qoc{i}")).collect(),
        qos_indicators: (1..=profile.qos_min.len()).map(|k| format!("qos{k}")).collect(),
    };
    validate_profile(profile, &catalog).context("profile")?;
    for offer in offers {
        if let Err(e) = offer.validate(&catalog) {
            bail!("offer `{}`: {e}", offer.service_id);
        }
    }
    Ok(())
}

fn decision_table(d: &DecisionMatrix) -> String {
    let mut header: Vec<&str> = vec!["topic"];
    header.extend(d.services.iter().map(String::as_str));
    header.extend(["selected", "max"]);
    let rows: Vec<Vec<String>> = d
        .topics
        .iter()
        .enumerate()
        .map(|(j, topic)| {
            let mut row = vec![topic.to_string()];
            for r in 0..d.services.len() {
                row.push(if d.feasible[j][r] { format!("{:.4}", d.scores[j][r]) } else { "-".to_string() });
            }
            row.push(d.selected[j].clone().unwrap_or_else(|| "-".to_string()));
            row.push(format!("{:.4}", d.max_score[j]));
            row
        })
        .collect();
    table(&header, &rows)
}
