//! Command line front end: configuration, the `analyze`, `branch` and
//! `verify` subcommands, and the CSV/JSON files they write.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{degree_g_on_grid, scan_zeros, AnalysisError, DegreeReport};
use crate::certify::{multiplicity_report_on_grid, MultiplicityReport, DEFAULT_BOX_GRID};
use crate::chain::{expand, ChainError, ExpandedField, ProblemSpec, StatePoint};
use crate::oracle::{direct_residual, verify_lift, PeriodicTrack};
use crate::orbit::{
    trace_from_zero, trajectory, Branch, BranchPoint, ContinuationError, ContinuationParams, OrbitError, StartingPoint, Termination,
};

/// Acceptance thresholds for `verify`.
pub const LIFT_THRESHOLD: f64 = 1e-4;
pub const DIRECT_THRESHOLD: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("interval is not admissible: {0}")]
    Admissibility(AnalysisError),
    #[error("{0}")]
    Numerical(String),
    #[error("{path}: {message}")]
    Schema { path: PathBuf, message: String },
}

impl CliError {
    /// 1 configuration or I/O, 2 admissibility, 3 numerical, 4 CSV schema.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io { .. } => 1,
            CliError::Admissibility(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Schema { .. } => 4,
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::EndpointZero { .. } | AnalysisError::Interval { .. } => CliError::Admissibility(e),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<ChainError> for CliError {
    fn from(e: ChainError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<OrbitError> for CliError {
    fn from(e: OrbitError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

fn io_error(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub g: String,
    pub phi: String,
    pub f: String,
    pub a: f64,
    pub b: u32,
    #[serde(rename = "T")]
    pub period: f64,
}

fn default_grid_n() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntervalConfig {
    pub alpha: f64,
    pub beta: f64,
    #[serde(default = "default_grid_n")]
    pub grid_n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertifyConfig {
    /// Box half-width; `0.1 (1 + |P|)` per zero when absent.
    pub radius: Option<f64>,
    pub grid: usize,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        CertifyConfig {
            radius: None,
            grid: DEFAULT_BOX_GRID,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub interval: IntervalConfig,
    #[serde(default)]
    pub continuation: ContinuationParams,
    #[serde(default)]
    pub certify: CertifyConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::Config(format!("at `{path}`: {}", e.into_inner()))
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn problem_spec(&self) -> Result<ProblemSpec, CliError> {
        let p = &self.problem;
        ProblemSpec::parse(&p.g, &p.phi, &p.f, p.a, p.b, p.period).map_err(|e| CliError::Config(format!("at `problem`: {e}")))
    }

    fn validate(&self) -> Result<(), CliError> {
        self.problem_spec()?;
        let i = &self.interval;
        if !(i.alpha.is_finite() && i.beta.is_finite() && i.alpha < i.beta) {
            return Err(CliError::Config(format!("at `interval`: need alpha < beta, got ({}, {})", i.alpha, i.beta)));
        }
        if i.grid_n < 2 {
            return Err(CliError::Config("at `interval.grid_n`: need at least 2".into()));
        }
        self.continuation
            .validate()
            .map_err(|e| CliError::Config(format!("at `continuation`: {e}")))?;
        if let Some(r) = self.certify.radius {
            if !(r.is_finite() && r > 0.0) {
                return Err(CliError::Config(format!("at `certify.radius`: must be positive, got {r}")));
            }
        }
        if self.certify.grid < 2 {
            return Err(CliError::Config("at `certify.grid`: need at least 2".into()));
        }
        Ok(())
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path).map_err(io_error(path))?;
    RunConfig::from_json(&text).map_err(|e| match e {
        CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOutput {
    pub degree: DegreeReport,
    pub multiplicity: MultiplicityReport,
}

/// Degree and multiplicity reports for the configured interval.
pub fn cmd_analyze(config: &RunConfig) -> Result<AnalysisOutput, CliError> {
    let p = config.problem_spec()?;
    let i = &config.interval;
    let degree = degree_g_on_grid(&p, i.alpha, i.beta, i.grid_n)?;
    let multiplicity = multiplicity_report_on_grid(&p, i.alpha, i.beta, i.grid_n, config.certify.radius, config.certify.grid)?;
    Ok(AnalysisOutput { degree, multiplicity })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedStatus {
    Traced,
    /// The λ = 0 slice is degenerate; only the trivial point is written.
    Degenerate,
    /// The corrector gave up; the points traced so far are written.
    CorrectorFailure,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fold {
    pub index: usize,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub zero_index: usize,
    pub u_bar: f64,
    pub status: SeedStatus,
    pub message: Option<String>,
    pub csv: Option<PathBuf>,
    pub points: usize,
    pub start: Option<Termination>,
    pub end: Option<Termination>,
    pub max_lambda: Option<f64>,
    pub folds: Vec<Fold>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchSummary {
    pub seeds: Vec<SeedSummary>,
    /// Largest λ at a fold over all traced seeds.
    pub lambda_star_hint: Option<f64>,
}

/// `lambda,q,p0,...,pb,sup_norm,diameter,arclength,residual`.
pub fn csv_header(b: u32) -> Vec<String> {
    let mut h = vec!["lambda".to_string(), "q".to_string()];
    h.extend((0..=b).map(|i| format!("p{i}")));
    h.extend(["sup_norm", "diameter", "arclength", "residual"].map(String::from));
    h
}

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_branch_csv(path: &Path, b: u32, points: &[BranchPoint]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(csv_header(b)).map_err(|e| csv_io(path, e))?;
    for pt in points {
        let mut row = vec![fmt(pt.sp.lambda)];
        row.extend(pt.sp.xi0.as_slice().iter().map(|x| fmt(*x)));
        row.extend([pt.sup_norm, pt.diameter, pt.arclength, pt.sp.residual].map(fmt));
        w.write_record(&row).map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(io_error(path))
}

fn csv_io(path: &Path, e: csv::Error) -> CliError {
    CliError::Io {
        path: path.to_path_buf(),
        source: io::Error::other(e),
    }
}

/// Trivial starting point at the lifted zero, used as the only row of a
/// degenerate seed.
fn trivial_point(field: &ExpandedField, u: f64, tol: f64) -> Result<BranchPoint, CliError> {
    let sp = StartingPoint {
        lambda: 0.0,
        xi0: field.lifted_zero(u)?,
        residual: 0.0,
    };
    Ok(BranchPoint::evaluate(field, sp, 0.0, tol)?)
}

fn summarize(branch: &Branch, index: usize, u_bar: f64, status: SeedStatus, csv: PathBuf) -> SeedSummary {
    SeedSummary {
        zero_index: index,
        u_bar,
        status,
        message: None,
        csv: Some(csv),
        points: branch.points.len(),
        start: Some(branch.start),
        end: Some(branch.end),
        max_lambda: (!branch.points.is_empty()).then(|| branch.max_lambda()),
        folds: branch
            .folds()
            .into_iter()
            .map(|i| Fold {
                index: i,
                lambda: branch.points[i].sp.lambda,
            })
            .collect(),
    }
}

/// Traces a branch off every zero of Φ in the interval (or only the one at
/// `seed_zero`) and writes `branch_<k>.csv` plus `branch_summary.json` into
/// `out`. A failing seed is recorded and does not stop the others.
pub fn cmd_branch(config: &RunConfig, out: &Path, seed_zero: Option<usize>) -> Result<BranchSummary, CliError> {
    let p = config.problem_spec()?;
    let i = &config.interval;
    let zeros = scan_zeros(&p, i.alpha, i.beta, i.grid_n)?;
    if let Some(k) = seed_zero {
        if k >= zeros.len() {
            return Err(CliError::Config(format!("--seed-zero {k}: only {} zeros in the interval", zeros.len())));
        }
    }
    fs::create_dir_all(out).map_err(io_error(out))?;
    let field = expand(p.clone());
    let b = p.kernel().shape();
    let params = &config.continuation;
    let mut seeds = Vec::new();
    for (k, z) in zeros.iter().enumerate() {
        if seed_zero.is_some_and(|s| s != k) {
            continue;
        }
        let csv = out.join(format!("branch_{k}.csv"));
        let summary = match trace_from_zero(&field, z.u_bar, params) {
            Ok(branch) => {
                write_branch_csv(&csv, b, &branch.points)?;
                summarize(&branch, k, z.u_bar, SeedStatus::Traced, csv)
            }
            Err(ContinuationError::CorrectorFailed { partial }) => {
                write_branch_csv(&csv, b, &partial.points)?;
                let mut s = summarize(&partial, k, z.u_bar, SeedStatus::CorrectorFailure, csv);
                s.message = Some("corrector failed at the minimum step".into());
                s
            }
            Err(e @ ContinuationError::Degenerate { .. }) => {
                let seed = trivial_point(&field, z.u_bar, params.integration_tol)?;
                write_branch_csv(&csv, b, std::slice::from_ref(&seed))?;
                SeedSummary {
                    zero_index: k,
                    u_bar: z.u_bar,
                    status: SeedStatus::Degenerate,
                    message: Some(e.to_string()),
                    csv: Some(csv),
                    points: 1,
                    start: None,
                    end: None,
                    max_lambda: Some(0.0),
                    folds: Vec::new(),
                }
            }
            Err(e) => SeedSummary {
                zero_index: k,
                u_bar: z.u_bar,
                status: SeedStatus::Failed,
                message: Some(e.to_string()),
                csv: None,
                points: 0,
                start: None,
                end: None,
                max_lambda: None,
                folds: Vec::new(),
            },
        };
        seeds.push(summary);
    }
    let lambda_star_hint = seeds
        .iter()
        .flat_map(|s| s.folds.iter().map(|f| f.lambda))
        .fold(None, |m: Option<f64>, l| Some(m.map_or(l, |m| m.max(l))));
    let summary = BranchSummary { seeds, lambda_star_hint };
    write_json(&out.join("branch_summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowCheck {
    pub row: usize,
    pub lambda: f64,
    pub lift_discrepancy: f64,
    pub direct_residual: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub rows: Vec<RowCheck>,
    pub all_pass: bool,
}

/// Reads a branch CSV. Returns no rows for an empty file.
pub fn read_branch_csv(path: &Path, b: u32) -> Result<Vec<StartingPoint>, CliError> {
    let text = fs::read_to_string(path).map_err(io_error(path))?;
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let schema = |message: String| CliError::Schema {
        path: path.to_path_buf(),
        message,
    };
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header: Vec<String> = r
        .headers()
        .map_err(|e| schema(e.to_string()))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    let expected = csv_header(b);
    if header != expected {
        return Err(schema(format!("header is `{}`, expected `{}`", header.join(","), expected.join(","))));
    }
    let dim = b as usize + 2;
    let mut rows = Vec::new();
    for (k, record) in r.records().enumerate() {
        let record = record.map_err(|e| schema(format!("row {k}: {e}")))?;
        let values = record
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|e| schema(format!("row {k}: {e}")))?;
        if values.len() != expected.len() {
            return Err(schema(format!("row {k} has {} fields, expected {}", values.len(), expected.len())));
        }
        rows.push(StartingPoint {
            lambda: values[0],
            xi0: StatePoint(values[1..1 + dim].to_vec()),
            residual: values[dim + 4],
        });
    }
    Ok(rows)
}

/// Checks each row of a branch CSV against the history-integral oracle.
pub fn cmd_verify(config: &RunConfig, csv: &Path) -> Result<VerifyReport, CliError> {
    let p = config.problem_spec()?;
    let rows = read_branch_csv(csv, p.kernel().shape())?;
    let field = expand(p.clone());
    let tol = config.continuation.integration_tol;
    let mut checks = Vec::with_capacity(rows.len());
    for (row, sp) in rows.iter().enumerate() {
        let lift = verify_lift(&p, sp)?;
        let traj = trajectory(&field, sp.lambda, sp.xi0.as_slice(), 0.0, p.period(), tol)?;
        let x = PeriodicTrack::from_trajectory(&traj, 0).map_err(|e| CliError::Numerical(e.to_string()))?;
        let direct = direct_residual(&p, sp.lambda, &x)?;
        checks.push(RowCheck {
            row,
            lambda: sp.lambda,
            lift_discrepancy: lift,
            direct_residual: direct,
            pass: lift <= LIFT_THRESHOLD && direct <= DIRECT_THRESHOLD,
        });
    }
    let all_pass = checks.iter().all(|c| c.pass);
    Ok(VerifyReport { rows: checks, all_pass })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Numerical(e.to_string()))?;
    fs::write(path, text + "\n").map_err(io_error(path))
}

#[derive(Debug, Parser)]
#[command(name = "chaintrick", version, about = "Forced periodic solutions of second order equations with gamma distributed delay")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Zeros of Φ, degrees and ejecting certification.
    Analyze,
    /// Trace branches of periodic solutions off the zeros of Φ.
    Branch {
        /// Only branch off the zero with this index.
        #[arg(long)]
        seed_zero: Option<usize>,
    },
    /// Check a branch CSV against the history-integral oracle.
    Verify {
        /// Branch CSV written by `branch`.
        csv: PathBuf,
    },
}

/// Runs the parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> Result<i32, CliError> {
    let Some(config_path) = cli.config.as_deref() else {
        return Err(CliError::Config("--config PATH is required".into()));
    };
    let config = load_config(config_path)?;
    let out = cli.out.clone().unwrap_or_else(|| config.output.dir.clone());
    match cli.command {
        Command::Analyze => {
            let report = cmd_analyze(&config)?;
            fs::create_dir_all(&out).map_err(io_error(&out))?;
            write_json(&out.join("analysis.json"), &report)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("reports serialize"));
            Ok(0)
        }
        Command::Branch { seed_zero } => {
            let summary = cmd_branch(&config, &out, seed_zero)?;
            println!("{}", serde_json::to_string_pretty(&summary).expect("reports serialize"));
            let failed = summary.seeds.iter().any(|s| s.status == SeedStatus::Failed);
            Ok(if failed { 3 } else { 0 })
        }
        Command::Verify { csv } => {
            let report = cmd_verify(&config, &csv)?;
            fs::create_dir_all(&out).map_err(io_error(&out))?;
            write_json(&out.join("verify.json"), &report)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("reports serialize"));
            Ok(if report.all_pass { 0 } else { 3 })
        }
    }
}
