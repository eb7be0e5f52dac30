//! Command-line driver: configuration parsing, the `run` and `check`
//! commands, and their output files.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy::DiagnosticsReport;
use crate::flow::{self, FlowConfig, ObservedError, Snapshot, StopReason};
use crate::grid::{EndpointMode, GridError, KnotData, SplineState};
use crate::init::{self, CompatibilityReport, InitError};
use crate::sun::{self, ComplexMatrix, UnitaryPoint};

pub const EXIT_OK: i32 = 0;
pub const EXIT_NOT_CONVERGED: i32 = 1;
pub const EXIT_BLOWUP: i32 = 2;
pub const EXIT_ENERGY_VIOLATION: i32 = 3;
pub const EXIT_USAGE: i32 = 4;

/// Knots further than this from SU(N) are rejected unless retraction is
/// explicitly allowed.
pub const KNOT_TOL: f64 = 1e-8;

#[derive(Debug, Parser)]
#[command(name = "qspline", version, about = "Quantum splines in SU(N) by gradient flow")]
pub struct Cli {
    /// Worker threads (falls back to QSPLINE_THREADS, then all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the flow and write snapshots, energy trace and manifest.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `snapshot_every` from the configuration.
        #[arg(long)]
        snapshot_every: Option<usize>,
    },
    /// Build the initial data and print its compatibility report.
    Check { config: PathBuf },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid configuration: {0}")]
    Parse(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Init(#[from] InitError),
    #[error(transparent)]
    Flow(#[from] flow::FlowError),
    #[error("could not set up threads: {0}")]
    Threads(String),
}

impl CliError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EndpointName {
    Natural,
    Clamped,
}

impl From<EndpointName> for EndpointMode {
    fn from(e: EndpointName) -> Self {
        match e {
            EndpointName::Natural => EndpointMode::NaturalSecondDerivative,
            EndpointName::Clamped => EndpointMode::ClampedVelocity,
        }
    }
}

/// The on-disk configuration. Matrices are row-major lists of `[re, im]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(rename = "N")]
    pub n: usize,
    pub q: usize,
    pub sigma: f64,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub t_max: f64,
    pub z1_stop: f64,
    pub endpoint_mode: EndpointName,
    pub knots: Vec<ComplexMatrix>,
    pub phi0_prime: ComplexMatrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phiq_prime: Option<ComplexMatrix>,
    pub seed: u64,
    #[serde(default)]
    pub allow_retract_knots: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stability_factor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_every: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unitarity_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bc_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic_tol: Option<f64>,
}

/// A validated configuration: the flow settings plus the fully resolved
/// echo that reproduces them.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub flow: FlowConfig,
    pub echo: RunConfig,
}

pub fn read_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<RunConfig, CliError> {
    serde_json::from_str(text).map_err(|e| CliError::Parse(e.to_string()))
}

fn knot_point(m: &ComplexMatrix, index: usize, n: usize, allow_retract: bool) -> Result<UnitaryPoint, CliError> {
    if m.dim() != n {
        return Err(CliError::Config(format!("knot {index} is {0}x{0}, expected {n}x{n}", m.dim())));
    }
    match UnitaryPoint::new(m.clone(), KNOT_TOL) {
        Ok(p) => Ok(p),
        Err(e) if allow_retract => sun::retract(m).map_err(|_| CliError::Config(format!("knot {index} cannot be retracted: {e}"))),
        Err(e) => Err(CliError::Config(format!(
            "knot {index} is not in SU({n}) within {KNOT_TOL:e}: {e} (set allow_retract_knots to project it)"
        ))),
    }
}

/// Check and fill a configuration. `snapshot_every` from the command line
/// wins over the file.
pub fn resolve(cfg: &RunConfig, snapshot_override: Option<usize>) -> Result<Resolved, CliError> {
    let bad = |m: String| Err(CliError::Config(m));
    if cfg.n < 2 {
        return bad(format!("N must be at least 2, got {}", cfg.n));
    }
    if cfg.q < 1 {
        return bad("q must be at least 1".into());
    }
    if cfg.knots.len() != cfg.q + 1 {
        return bad(format!("expected q + 1 = {} knots, got {}", cfg.q + 1, cfg.knots.len()));
    }
    let knots = cfg
        .knots
        .iter()
        .enumerate()
        .map(|(i, k)| knot_point(k, i, cfg.n, cfg.allow_retract_knots))
        .collect::<Result<Vec<_>, _>>()?;
    let tangent = |v: &ComplexMatrix, name: &str, at: &UnitaryPoint| -> Result<ComplexMatrix, CliError> {
        if v.dim() != cfg.n {
            return Err(CliError::Config(format!("{name} is {0}x{0}, expected {1}x{1}", v.dim(), cfg.n)));
        }
        Ok(if cfg.allow_retract_knots { sun::project_tangent(v, at) } else { v.clone() })
    };
    let phi0 = tangent(&cfg.phi0_prime, "phi0_prime", &knots[0])?;
    let mode: EndpointMode = cfg.endpoint_mode.into();
    let phiq = match (mode, &cfg.phiq_prime) {
        (EndpointMode::ClampedVelocity, None) => return bad("endpoint_mode \"clamped\" requires phiq_prime".into()),
        (EndpointMode::ClampedVelocity, Some(v)) => Some(tangent(v, "phiq_prime", &knots[cfg.q])?),
        (EndpointMode::NaturalSecondDerivative, Some(_)) => {
            return bad("phiq_prime is only meaningful with endpoint_mode \"clamped\"".into())
        }
        (EndpointMode::NaturalSecondDerivative, None) => None,
    };
    let knot_data = KnotData::new(knots.clone(), phi0.clone(), mode, phiq.clone()).map_err(|e| match e {
        GridError::InvalidKnots(m) => CliError::Config(m),
        other => CliError::Config(other.to_string()),
    })?;

    let mut flow = FlowConfig::new(knot_data, cfg.sigma, cfg.m, cfg.t_max, cfg.z1_stop);
    flow.seed = cfg.seed;
    if let Some(f) = cfg.stability_factor {
        flow.stability_factor = f;
    }
    flow.dt = cfg.dt.unwrap_or_else(|| flow::default_dt(cfg.m.max(1), flow.stability_factor));
    if let Some(v) = cfg.unitarity_tol {
        flow.unitarity_tol = v;
    }
    if let Some(v) = cfg.bc_tol {
        flow.bc_tol = v;
    }
    if let Some(v) = cfg.diagnostic_tol {
        flow.diagnostic_tol = v;
    }
    if let Some(v) = snapshot_override.or(cfg.snapshot_every) {
        flow.snapshot_every = v;
    }
    flow.validate().map_err(|e| CliError::Config(e.to_string()))?;

    let echo = RunConfig {
        n: cfg.n,
        q: cfg.q,
        sigma: flow.sigma,
        m: flow.m,
        dt: Some(flow.dt),
        t_max: flow.t_max,
        z1_stop: flow.z1_stop,
        endpoint_mode: cfg.endpoint_mode,
        knots: knots.iter().map(|k| k.matrix().clone()).collect(),
        phi0_prime: phi0,
        phiq_prime: phiq,
        seed: flow.seed,
        allow_retract_knots: cfg.allow_retract_knots,
        stability_factor: Some(flow.stability_factor),
        snapshot_every: Some(flow.snapshot_every),
        unitarity_tol: Some(flow.unitarity_tol),
        bc_tol: Some(flow.bc_tol),
        diagnostic_tol: Some(flow.diagnostic_tol),
    };
    Ok(Resolved { flow, echo })
}

/// Parse and resolve a configuration file.
pub fn parse_config(path: &Path) -> Result<Resolved, CliError> {
    resolve(&read_config(path)?, None)
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub config_echo: RunConfig,
    pub tool_version: String,
    pub started: String,
    pub finished: String,
    pub stop_reason: StopReason,
    pub converged: bool,
    pub steps: usize,
    pub exit_code: i32,
    pub message: Option<String>,
    pub initial_compatibility: CompatibilityReport,
    pub terminal_diagnostics: DiagnosticsReport,
}

#[derive(Serialize)]
struct SnapshotLine<'a> {
    t: f64,
    diagnostics: &'a DiagnosticsReport,
    u_segments: Vec<&'a [UnitaryPoint]>,
    v_segments: Vec<&'a [UnitaryPoint]>,
}

pub const TRACE_HEADER: &str = "t,F_sigma,bending,tension,z1,cubic_residual_sup,unitarity_drift";

fn trace_row(d: &DiagnosticsReport) -> String {
    format!(
        "{},{},{},{},{},{},{}",
        d.t, d.total_energy, d.bending_energy, d.tension_energy, d.z1_speed, d.cubic_residual_sup, d.unitarity_drift
    )
}

struct Outputs {
    snapshots: BufWriter<File>,
    trace: BufWriter<File>,
    snapshots_path: PathBuf,
    trace_path: PathBuf,
}

impl Outputs {
    fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let open = |name: &str| -> Result<(BufWriter<File>, PathBuf), CliError> {
            let p = dir.join(name);
            let f = File::create(&p).map_err(|e| CliError::io(&p, e))?;
            Ok((BufWriter::new(f), p))
        };
        let (snapshots, snapshots_path) = open("snapshots.jsonl")?;
        let (mut trace, trace_path) = open("energy_trace.csv")?;
        writeln!(trace, "{TRACE_HEADER}").map_err(|e| CliError::io(&trace_path, e))?;
        Ok(Self { snapshots, trace, snapshots_path, trace_path })
    }

    fn write(&mut self, s: &Snapshot) -> Result<(), CliError> {
        let line = SnapshotLine {
            t: s.t,
            diagnostics: &s.diagnostics,
            u_segments: s.state.u_segments.iter().map(|c| c.samples.as_slice()).collect(),
            v_segments: s.state.v_segments.iter().map(|c| c.samples.as_slice()).collect(),
        };
        let json = serde_json::to_string(&line).map_err(|e| CliError::Parse(e.to_string()))?;
        writeln!(self.snapshots, "{json}").map_err(|e| CliError::io(&self.snapshots_path, e))?;
        writeln!(self.trace, "{}", trace_row(&s.diagnostics)).map_err(|e| CliError::io(&self.trace_path, e))?;
        Ok(())
    }

    fn finish(mut self) -> Result<(), CliError> {
        self.snapshots.flush().map_err(|e| CliError::io(&self.snapshots_path, e))?;
        self.trace.flush().map_err(|e| CliError::io(&self.trace_path, e))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Parse(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

/// Exit status for a finished run.
pub fn exit_code(stop: StopReason, converged: bool, terminal: &DiagnosticsReport, bc_tol: f64) -> i32 {
    match stop {
        StopReason::Blowup => EXIT_BLOWUP,
        StopReason::EnergyViolation => EXIT_ENERGY_VIOLATION,
        _ if converged && terminal.max_bc_residual() <= bc_tol => EXIT_OK,
        _ => EXIT_NOT_CONVERGED,
    }
}

/// `qspline run`: returns the manifest that was written.
pub fn run_command(config: &Path, out: &Path, snapshot_every: Option<usize>) -> Result<RunManifest, CliError> {
    let resolved = resolve(&read_config(config)?, snapshot_every)?;
    let cfg = &resolved.flow;
    let started = chrono::Utc::now().to_rfc3339();
    let initial = init::build_initial(&cfg.knot_data, cfg.m)?;
    let compat = init::check_compatibility(&initial, &cfg.knot_data, cfg.sigma)?;

    let mut outputs = Outputs::create(out)?;
    let traj = flow::run_observed(cfg, &initial, |s| outputs.write(s)).map_err(|e| match e {
        ObservedError::Flow(f) => CliError::Flow(f),
        ObservedError::Observer(o) => o,
    })?;
    outputs.finish()?;
    write_json(&out.join("terminal_state.json"), &traj.terminal_state)?;

    let code = exit_code(traj.stop_reason, traj.converged, &traj.terminal_diagnostics, cfg.bc_tol);
    let manifest = RunManifest {
        config_echo: resolved.echo.clone(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        started,
        finished: chrono::Utc::now().to_rfc3339(),
        stop_reason: traj.stop_reason,
        converged: traj.converged,
        steps: traj.steps,
        exit_code: code,
        message: traj.message.clone(),
        initial_compatibility: compat,
        terminal_diagnostics: traj.terminal_diagnostics.clone(),
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// `qspline check`: the compatibility report of the initial data.
pub fn check_command(config: &Path) -> Result<CompatibilityReport, CliError> {
    let resolved = parse_config(config)?;
    let cfg = &resolved.flow;
    let initial = init::build_initial(&cfg.knot_data, cfg.m)?;
    Ok(init::check_compatibility(&initial, &cfg.knot_data, cfg.sigma)?)
}

/// Reload a `terminal_state.json`.
pub fn load_state(path: &Path) -> Result<SplineState, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let state: SplineState = serde_json::from_str(&text).map_err(|e| CliError::Parse(e.to_string()))?;
    state.check_shape().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(state)
}

/// Thread count from the flag, then `QSPLINE_THREADS`.
pub fn thread_count(flag: Option<usize>, env: Option<&str>) -> Result<Option<usize>, CliError> {
    if let Some(k) = flag {
        return if k == 0 { Err(CliError::Threads("--threads must be at least 1".into())) } else { Ok(Some(k)) };
    }
    match env.map(str::trim).filter(|s| !s.is_empty()) {
        None => Ok(None),
        Some(s) => match s.parse::<usize>() {
            Ok(k) if k > 0 => Ok(Some(k)),
            _ => Err(CliError::Threads(format!("QSPLINE_THREADS must be a positive integer, got {s:?}"))),
        },
    }
}

/// Entry point behind `main`; returns the process exit code.
pub fn main_with(cli: Cli) -> i32 {
    let env = std::env::var("QSPLINE_THREADS").ok();
    let threads = match thread_count(cli.threads, env.as_deref()) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    if let Some(k) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            eprintln!("error: {}", CliError::Threads(e.to_string()));
            return EXIT_USAGE;
        }
    }
    match cli.command {
        Command::Run { config, out, snapshot_every } => match run_command(&config, &out, snapshot_every) {
            Ok(m) => {
                eprintln!(
                    "{:?} after {} steps at t = {}; F_sigma = {:e}",
                    m.stop_reason, m.steps, m.terminal_diagnostics.t, m.terminal_diagnostics.total_energy
                );
                if let Some(msg) = &m.message {
                    eprintln!("{msg}");
                }
                m.exit_code
            }
            Err(e) => {
                eprintln!("error: {e}");
                EXIT_USAGE
            }
        },
        Command::Check { config } => match check_command(&config) {
            Ok(report) => {
                match serde_json::to_string_pretty(&report) {
                    Ok(s) => println!("{s}"),
                    Err(e) => {
                        eprintln!("error: {e}");
                        return EXIT_USAGE;
                    }
                }
                if report.pass {
                    EXIT_OK
                } else {
                    EXIT_NOT_CONVERGED
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                EXIT_USAGE
            }
        },
    }
}
