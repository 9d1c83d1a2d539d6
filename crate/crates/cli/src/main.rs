//! `poolsim` command-line front end.

mod inputs;
mod output;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use log::info;

use poolsim::config::{parse_config, parse_config_text, SimConfig};
use poolsim::engine::Simulation;
use poolsim::metrics::{compute_metrics, Metrics};
use poolsim::plot::export_plot;
use poolsim::scaling::{fit_scaling, predict_performance, ScalingParams};
use poolsim::trace::{load_trace, to_jsonl};

use output::{Manifest, OutputDir};

/// Process exit codes, one per error class.
pub mod exit {
    pub const OK: u8 = 0;
    pub const USAGE: u8 = 2;
    pub const CONFIG: u8 = 3;
    pub const INPUT: u8 = 4;
    pub const IO: u8 = 5;
    pub const MISMATCH: u8 = 6;
    pub const SCALING: u8 = 7;
    pub const LOCKED: u8 = 8;
    pub const TRACE: u8 = 9;
}

#[derive(Debug)]
struct Failure {
    code: u8,
    error: anyhow::Error,
}

trait Classify<T> {
    fn code(self, code: u8) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn code(self, code: u8) -> Result<T, Failure> {
        self.map_err(|e| Failure { code, error: e.into() })
    }
}

#[derive(Parser)]
#[command(name = "poolsim", version, about = "Pooled and solo ride-hailing fleet simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation and write trace, metrics and manifest.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// `key=value` override, repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        /// Also write every epoch's assignment instance to instances.jsonl.
        #[arg(long)]
        dump_instances: bool,
    },
    /// Print the scaling-law prediction (u, R, C̄) for each load.
    Predict {
        #[arg(long = "u", required = true, num_args = 1..)]
        loads: Vec<f64>,
        #[arg(long, default_value_t = 4)]
        capacity: u32,
        /// Overrides the capacity's default exponent.
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
    },
    /// Fit the scaling law to measured (u, R) samples.
    Fit {
        /// CSV with `u,service_rate` columns.
        #[arg(long)]
        samples: Option<PathBuf>,
        /// Traces to measure samples from.
        #[arg(long, num_args = 1..)]
        traces: Vec<PathBuf>,
        #[arg(long)]
        capacity: u32,
    },
    /// Recompute metrics from a trace, optionally checking a metrics file.
    Replay {
        #[arg(long)]
        trace: PathBuf,
        /// Expected metrics JSON; any difference exits nonzero.
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Config whose emission factor applies; defaults to config.ini beside the trace.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Write per-epoch aggregates and vehicle position samples as CSV.
    ExportPlot {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 60.0)]
        sample_s: f64,
    },
    /// Check input files without simulating.
    Validate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        nodes: Option<PathBuf>,
        #[arg(long)]
        edges: Option<PathBuf>,
        #[arg(long)]
        requests: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::USAGE } else { exit::OK });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::from(exit::OK),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Simulate {
            config,
            overrides,
            out,
            dump_instances,
        } => simulate(config.as_deref(), &overrides, &out, dump_instances),
        Command::Predict {
            loads,
            capacity,
            alpha,
            beta,
        } => predict(&loads, capacity, alpha, beta),
        Command::Fit {
            samples,
            traces,
            capacity,
        } => fit(samples.as_deref(), &traces, capacity),
        Command::Replay { trace, metrics, config } => replay(&trace, metrics.as_deref(), config.as_deref()),
        Command::ExportPlot { trace, out, sample_s } => export(&trace, &out, sample_s),
        Command::Validate {
            config,
            overrides,
            nodes,
            edges,
            requests,
        } => validate(config.as_deref(), &overrides, nodes, edges, requests),
    }
}

fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<SimConfig, Failure> {
    match path {
        Some(p) => parse_config(p, overrides).code(exit::CONFIG),
        None => parse_config_text("", Path::new("."), overrides).code(exit::CONFIG),
    }
}

fn simulate(config: Option<&Path>, overrides: &[String], out: &Path, dump_instances: bool) -> Result<(), Failure> {
    let cfg = load_config(config, overrides)?;
    let dir = OutputDir::lock(out)?;
    let mut manifest = Manifest::start(&cfg).code(exit::INPUT)?;

    let net = inputs::network(&cfg)?;
    let requests = inputs::requests(&net, &cfg)?;
    let surface = cfg.surface().code(exit::INPUT)?;
    info!("{} nodes, {} requests, {} vehicles", net.node_count(), requests.len(), cfg.fleet_size);

    let mut sim = Simulation::new(&net, cfg.clone(), surface, requests);
    if dump_instances {
        sim.record_instances();
    }
    let outcome = sim
        .run()
        .map_err(|e| anyhow!("engine produced an invalid trace: {e}"))
        .code(exit::TRACE)?;
    if outcome.inexact_epochs > 0 {
        log::warn!(
            "{} epochs stopped at the assignment node limit; their matchings may be suboptimal",
            outcome.inexact_epochs
        );
    }

    dir.write(&mut manifest, "config.ini", cfg.to_text().as_bytes())?;
    dir.write(&mut manifest, "trace.jsonl", &to_jsonl(&outcome.events))?;
    dir.write(&mut manifest, "metrics.json", &metrics_json(&outcome.metrics))?;
    dir.write(&mut manifest, "metrics.txt", outcome.metrics.to_kv().as_bytes())?;
    if dump_instances {
        let mut buf = Vec::new();
        for rec in &outcome.instances {
            serde_json::to_writer(&mut buf, rec).code(exit::IO)?;
            buf.push(b'\n');
        }
        dir.write(&mut manifest, "instances.jsonl", &buf)?;
    }
    manifest.finish();
    let json = serde_json::to_vec_pretty(&manifest).code(exit::IO)?;
    dir.write_untracked("manifest.json", &json)?;
    print!("{}", outcome.metrics.to_kv());
    Ok(())
}

fn metrics_json(m: &Metrics) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(m).expect("metrics serialize");
    v.push(b'\n');
    v
}

fn predict(loads: &[f64], capacity: u32, alpha: Option<f64>, beta: Option<f64>) -> Result<(), Failure> {
    let mut params = match (ScalingParams::<f64>::defaults(capacity), alpha, beta) {
        (Ok(p), _, _) => p,
        (Err(_), Some(alpha), Some(beta)) => ScalingParams { capacity, alpha, beta },
        (Err(e), _, _) => return Err(e).context("pass --alpha and --beta for this capacity").code(exit::SCALING),
    };
    if let Some(a) = alpha {
        params.alpha = a;
    }
    if let Some(b) = beta {
        params.beta = b;
    }
    println!("u,capacity,alpha,beta,service_rate,avg_scheduled");
    for &u in loads {
        let (r, c) = predict_performance(u, &params).code(exit::SCALING)?;
        println!("{u},{capacity},{},{},{r:.6},{c:.6}", params.alpha, params.beta);
    }
    Ok(())
}

fn fit(samples: Option<&Path>, traces: &[PathBuf], capacity: u32) -> Result<(), Failure> {
    let mut pts: Vec<(f64, f64)> = Vec::new();
    if let Some(path) = samples {
        pts.extend(inputs::samples(path)?);
    }
    for t in traces {
        let events = load_trace(t).code(exit::TRACE)?;
        let m = compute_metrics(&events, &Default::default()).code(exit::TRACE)?;
        let load = m
            .system_load
            .ok_or_else(|| anyhow!("{}: no completed trips, load undefined", t.display()))
            .code(exit::TRACE)?;
        pts.push((load.u, m.service_rate));
    }
    let f = fit_scaling(&pts, capacity).code(exit::SCALING)?;
    println!("capacity = {}", f.params.capacity);
    println!("alpha = {}", f.params.alpha);
    println!("beta = {}", f.params.beta);
    println!("rmse = {}", f.rmse);
    println!("samples_used = {}", f.used);
    Ok(())
}

fn replay(trace: &Path, expected: Option<&Path>, config: Option<&Path>) -> Result<(), Failure> {
    let beside = trace.parent().map(|d| d.join("config.ini"));
    let config = config.map(Path::to_path_buf).or(beside.filter(|p| p.exists()));
    let cfg = load_config(config.as_deref(), &[])?;
    let events = load_trace(trace).code(exit::TRACE)?;
    let m = compute_metrics(&events, &cfg.emission).code(exit::TRACE)?;
    print!("{}", m.to_kv());
    if let Some(path) = expected {
        let text = fs::read_to_string(path)
            .with_context(|| path.display().to_string())
            .code(exit::IO)?;
        let want: Metrics = serde_json::from_str(&text)
            .with_context(|| format!("{}: not a metrics file", path.display()))
            .code(exit::INPUT)?;
        if want != m {
            return Err(anyhow!("replayed metrics differ from {}", path.display())).code(exit::MISMATCH);
        }
        println!("# replay matches {}", path.display());
    }
    Ok(())
}

fn export(trace: &Path, out: &Path, sample_s: f64) -> Result<(), Failure> {
    if !sample_s.is_finite() || sample_s <= 0.0 {
        return Err(anyhow!("--sample-s must be positive")).code(exit::USAGE);
    }
    let events = load_trace(trace).code(exit::TRACE)?;
    let plot = export_plot(&events, (sample_s * 1000.0).round() as i64).code(exit::TRACE)?;
    let dir = OutputDir::lock(out)?;
    dir.write_untracked("epochs.csv", plot.epochs_csv().as_bytes())?;
    dir.write_untracked("positions.csv", plot.positions_csv().as_bytes())?;
    println!("{} epochs, {} position samples", plot.epochs.len(), plot.positions.len());
    Ok(())
}

fn validate(
    config: Option<&Path>,
    overrides: &[String],
    nodes: Option<PathBuf>,
    edges: Option<PathBuf>,
    requests: Option<PathBuf>,
) -> Result<(), Failure> {
    let mut cfg = load_config(config, overrides)?;
    if nodes.is_some() || edges.is_some() {
        cfg.network.nodes = Some(nodes.ok_or_else(|| anyhow!("--edges needs --nodes")).code(exit::USAGE)?);
        cfg.network.edges = Some(edges.ok_or_else(|| anyhow!("--nodes needs --edges")).code(exit::USAGE)?);
    }
    if let Some(r) = requests {
        cfg.demand.source = poolsim::config::DemandKind::File;
        cfg.demand.file = Some(r);
    }
    let net = inputs::network(&cfg)?;
    println!("network: {} nodes, {} edges", net.node_count(), net.edge_count());
    if cfg.demand.source == poolsim::config::DemandKind::File {
        let reqs = inputs::requests(&net, &cfg)?;
        println!("requests: {}", reqs.len());
    }
    cfg.surface().code(exit::INPUT)?;
    println!("ok");
    Ok(())
}
