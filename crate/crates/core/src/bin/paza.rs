use std::io::{BufReader, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use paza_core::alerts::cost::{call_volume_projection, cost_model, CostParams, Range};
use paza_core::alerts::AlertStore;
use paza_core::config::Config;
use paza_core::evaluate::{evaluate_clips, evaluate_verdict_log, load_manifest};
use paza_core::gateway::transport::HttpTransport;
use paza_core::gateway::Transport;
use paza_core::pipeline::{behavior_tags, replay, Pipeline};
use paza_core::service::{serve_with, AppState, ServeOptions};
use paza_core::sim::mock::{serve_mock, shared, MockScript, ScriptedTransport};
use paza_core::sim::trace::{generate_trace, read_events, read_truth, read_truth_file, write_trace, GroundTruth, ScenarioConfig};

#[derive(Parser)]
#[command(name = "paza", version, about = "Retail concealment detection orchestrator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a recorded trace through the pipeline on its own clock.
    Replay(ReplayArgs),
    /// Generate a synthetic multi-camera trace plus ground truth.
    Simulate(SimulateArgs),
    /// Score the VLM on labelled clips, or score a recorded verdict log.
    Evaluate(EvaluateArgs),
    /// Monthly cost per store and call-volume projection.
    Cost(CostArgs),
    /// Run the ingest and review HTTP service.
    Serve(ServeArgs),
    /// Run a scripted OpenAI-compatible VLM stand-in.
    MockVlm(MockVlmArgs),
    /// Print the effective configuration as TOML.
    Config(PipelineArgs),
}

/// Flags shared by commands that build a pipeline. They override the
/// environment, which overrides the config file.
#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// OpenAI-compatible base URL.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// VLM calls allowed per sliding minute.
    #[arg(long)]
    rate_limit: Option<u32>,
    /// Persist alerts and snapshots here.
    #[arg(long)]
    alerts_dir: Option<PathBuf>,
    /// Answer VLM requests in-process from this mock script.
    #[arg(long)]
    mock_script: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    /// Trace file (JSONL FrameEvents), or `-` for stdin.
    trace: String,
    /// Ground truth; defaults to the sidecar written by `simulate`.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Also write the report here.
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 4)]
    cameras: u32,
    #[arg(long, default_value_t = 10)]
    fps: u32,
    /// Seconds of footage per camera.
    #[arg(long, default_value_t = 60.0)]
    duration: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Shopper arrivals per minute per camera.
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long)]
    browse: Option<f64>,
    #[arg(long)]
    pickup: Option<f64>,
    #[arg(long)]
    conceal: Option<f64>,
    /// Start from the high-traffic scenario instead of the default one.
    #[arg(long)]
    busy: bool,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long, conflicts_with = "verdicts", requires = "endpoint")]
    manifest: Option<PathBuf>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// JSONL of recorded verdicts: {"id","label","response"|"category"}.
    #[arg(long, required_unless_present = "manifest")]
    verdicts: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Also write the report here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct CostArgs {
    #[arg(long, default_value_t = 0.40)]
    gpu_hr: f64,
    #[arg(long, default_value_t = 12.0)]
    hours: f64,
    #[arg(long, default_value_t = 30.0)]
    days: f64,
    #[arg(long, default_value_t = 10)]
    stores: u32,
    /// Monthly database cost, `5` or `5-15`.
    #[arg(long, default_value = "5-15")]
    db: Range,
    #[arg(long, default_value = "5-10")]
    network: Range,
    /// Explicit monthly VLM cost range, replacing the GPU-share figure.
    #[arg(long)]
    vlm_range: Option<Range>,
    /// VLM calls per hour for the volume projection.
    #[arg(long, default_value = "10-60")]
    calls_per_hour: Range,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    /// Seconds between stats-tick events.
    #[arg(long, default_value_t = 5)]
    stats_interval: u64,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Args)]
struct MockVlmArgs {
    #[arg(long)]
    script: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 8000)]
    port: u16,
}

fn load_config(args: &PipelineArgs) -> Result<Config> {
    let mut cfg = Config::load(args.config.as_deref())?;
    if let Some(u) = &args.endpoint {
        cfg.gateway.api_url = u.clone();
    }
    if let Some(m) = &args.model {
        cfg.gateway.model_name = m.clone();
    }
    if let Some(r) = args.rate_limit {
        cfg.set_rate_limit(r);
    }
    if let Some(d) = &args.alerts_dir {
        cfg.alerts.dir = Some(d.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn transport(cfg: &Config, mock_script: Option<&Path>) -> Result<Box<dyn Transport>> {
    let timeout_ms = (cfg.gateway.request_timeout_s * 1000.0).round() as u64;
    Ok(match mock_script {
        Some(p) => {
            let script = MockScript::load(p).with_context(|| format!("loading {}", p.display()))?;
            Box::new(ScriptedTransport::new(shared(script), timeout_ms))
        }
        None => Box::new(HttpTransport::new(
            &cfg.gateway.api_url,
            Duration::from_millis(timeout_ms),
            cfg.gateway.api_key.clone(),
        )?),
    })
}

fn build_pipeline(args: &PipelineArgs) -> Result<Pipeline> {
    let cfg = load_config(args)?;
    let store = match &cfg.alerts.dir {
        Some(d) => AlertStore::open(d, cfg.alerts.obfuscate_snapshots)?,
        None => AlertStore::in_memory(),
    };
    let t = transport(&cfg, args.mock_script.as_deref())?;
    Ok(Pipeline::new(cfg, t, store))
}

/// Prints to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.write_all(b"\n")).and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn write_out(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run_replay(a: ReplayArgs) -> Result<()> {
    let events = if a.trace == "-" {
        read_events(std::io::stdin().lock(), "<stdin>")?
    } else {
        let f = std::fs::File::open(&a.trace).with_context(|| format!("opening {}", a.trace))?;
        read_events(BufReader::new(f), &a.trace)?
    };
    let truth: Option<GroundTruth> = match (&a.truth, a.trace.as_str()) {
        (Some(p), _) => Some(read_truth_file(p)?),
        (None, "-") => None,
        (None, t) => read_truth(Path::new(t))?,
    };
    let mut p = build_pipeline(&a.pipeline)?;
    if let Some(t) = &truth {
        p.set_tags(behavior_tags(t));
    }
    let started = Instant::now();
    let mut report = replay(&mut p, &events, truth.as_ref())?;
    let json = report.to_json();
    if let Some(path) = &a.report {
        write_out(path, &json)?;
    }
    report.wall_clock_ms = Some(started.elapsed().as_millis() as u64);
    emit(&report.to_json())?;
    Ok(())
}

fn run_simulate(a: SimulateArgs) -> Result<()> {
    let base = if a.busy { ScenarioConfig::busy(a.seed) } else { ScenarioConfig::default() };
    let cfg = ScenarioConfig {
        cameras: a.cameras,
        fps: a.fps,
        duration_s: a.duration,
        arrival_rate_per_min: a.rate.unwrap_or(base.arrival_rate_per_min),
        browse_fraction: a.browse.unwrap_or(base.browse_fraction),
        pickup_fraction: a.pickup.unwrap_or(base.pickup_fraction),
        conceal_fraction: a.conceal.unwrap_or(base.conceal_fraction),
        seed: a.seed,
    };
    let (events, truth) = generate_trace(&cfg).map_err(anyhow::Error::msg)?;
    write_trace(&a.output, &events, &truth).with_context(|| format!("writing {}", a.output.display()))?;
    eprintln!("{} frames, {} shoppers -> {}", events.len(), truth.shoppers.len(), a.output.display());
    Ok(())
}

fn run_evaluate(a: EvaluateArgs) -> Result<()> {
    let report = match (&a.manifest, &a.verdicts) {
        (Some(m), _) => {
            let manifest = load_manifest(m)?;
            let pa = PipelineArgs {
                config: a.config.clone(),
                endpoint: a.endpoint.clone(),
                model: a.model.clone(),
                rate_limit: None,
                alerts_dir: None,
                mock_script: None,
            };
            let cfg = load_config(&pa)?;
            let mut t = transport(&cfg, None)?;
            evaluate_clips(&manifest, t.as_mut(), &cfg.gateway)
        }
        (None, Some(v)) => evaluate_verdict_log(v)?,
        (None, None) => bail!("need --manifest or --verdicts"),
    };
    let json = serde_json::to_string_pretty(&report)?;
    if let Some(p) = &a.report {
        write_out(p, &json)?;
    }
    emit(&json)?;
    Ok(())
}

fn run_cost(a: CostArgs) -> Result<()> {
    let params = CostParams {
        gpu_usd_per_hr: a.gpu_hr,
        hours_per_day: a.hours,
        days_per_month: a.days,
        stores_sharing: a.stores,
        db_usd_month: a.db,
        network_usd_month: a.network,
        vlm_usd_month: a.vlm_range,
    };
    let breakdown = cost_model(&params)?;
    let calls = call_volume_projection(a.calls_per_hour.low, a.calls_per_hour.high, a.hours, a.days);
    if a.json {
        let v = serde_json::json!({ "cost": breakdown, "calls_per_month": calls });
        emit(&serde_json::to_string_pretty(&v)?)?;
    } else {
        emit(&format!("{}VLM calls/month: {:.0}-{:.0}", breakdown.table(), calls.low, calls.high))?;
    }
    Ok(())
}

fn socket(host: &str, port: u16) -> Result<SocketAddr> {
    format!("{host}:{port}").parse().with_context(|| format!("bad address {host}:{port}"))
}

fn run_serve(a: ServeArgs) -> Result<()> {
    let pipeline = build_pipeline(&a.pipeline)?;
    let addr = socket(&a.host, a.port)?;
    let opts = ServeOptions { stats_interval: Duration::from_secs(a.stats_interval.max(1)), ..ServeOptions::default() };
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        serve_with(listener, AppState::new(pipeline), opts, shutdown).await?;
        Ok(())
    })
}

fn run_mock_vlm(a: MockVlmArgs) -> Result<()> {
    let script = MockScript::load(&a.script).with_context(|| format!("loading {}", a.script.display()))?;
    let server = serve_mock(script, socket(&a.host, a.port)?)?;
    eprintln!("mock VLM on {}", server.base_url());
    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build()?;
    rt.block_on(tokio::signal::ctrl_c())?;
    eprintln!("served {} requests", server.request_count());
    Ok(())
}

fn run_config(a: PipelineArgs) -> Result<()> {
    let cfg = load_config(&a)?;
    emit(cfg.to_toml().trim_end())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let r = match cli.command {
        Command::Replay(a) => run_replay(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Evaluate(a) => run_evaluate(a),
        Command::Cost(a) => run_cost(a),
        Command::Serve(a) => run_serve(a),
        Command::MockVlm(a) => run_mock_vlm(a),
        Command::Config(a) => run_config(a),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
