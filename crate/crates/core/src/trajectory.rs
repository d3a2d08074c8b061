//! Append-only JSONL trajectory log, coverage accounting and replay.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agents::{DecisionRecord, Weights};
use crate::execsim::ExecutionOutcome;
use crate::metrics::{self, MetricsBundle, MetricsError};
use crate::riskgate::RiskReport;
use crate::synthmarket::MarketPanel;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("sequence-violation: expected step {expected}, got {got}")]
    SequenceViolation { expected: usize, got: usize },
    #[error("io-error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("unsupported-schema: version {0:?} at line {1}")]
    UnsupportedSchema(Option<u64>, usize),
    #[error("corrupt-record at line {line}: {message}")]
    CorruptRecord { line: usize, message: String },
    #[error("empty-log")]
    Empty,
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> TrajectoryError {
    TrajectoryError::Io { path: path.display().to_string(), message: e.to_string() }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PortfolioState {
    pub cash: f64,
    /// Signed units held per symbol.
    pub positions: BTreeMap<String, f64>,
    pub equity: f64,
}

impl PortfolioState {
    pub fn with_cash(cash: f64) -> Self {
        Self { cash, positions: BTreeMap::new(), equity: cash }
    }

    /// Recompute equity at the closes of `step`.
    pub fn mark(&mut self, panel: &MarketPanel, step: usize) {
        let mut equity = self.cash;
        for (i, sym) in panel.symbols.iter().enumerate() {
            if let Some(q) = self.positions.get(sym) {
                equity += q * panel.bars[i][step].close;
            }
        }
        self.equity = equity;
    }

    /// Position values as fractions of equity at the given closes.
    pub fn weights_at(&self, closes: &BTreeMap<String, f64>) -> Weights {
        self.positions
            .iter()
            .map(|(s, q)| (s.clone(), q * closes.get(s).copied().unwrap_or(0.0) / self.equity))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BarSnapshot {
    pub symbol: String,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: f64,
}

pub fn snapshot(panel: &MarketPanel, step: usize) -> Vec<BarSnapshot> {
    panel
        .symbols
        .iter()
        .zip(&panel.bars)
        .map(|(s, bars)| {
            let b = &bars[step];
            BarSnapshot { symbol: s.clone(), open: b.open, high: b.high, low: b.low, close: b.close, volume: b.volume }
        })
        .collect()
}

pub fn closes_of(obs: &[BarSnapshot]) -> BTreeMap<String, f64> {
    obs.iter().map(|b| (b.symbol.clone(), b.close)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReproInfo {
    pub seed: u64,
    pub config_hash: String,
    pub schema_version: u32,
    pub template_version: String,
    pub initial_capital: f64,
    pub periods_per_year: f64,
}

/// One lifecycle record. Sections are optional so that coverage can detect
/// a missing stage rather than failing to parse.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub schema_version: u32,
    pub step: usize,
    pub observation: Option<Vec<BarSnapshot>>,
    /// Feedback block shown to the analyst, if any.
    #[serde(default)]
    pub feedback: String,
    /// FNV-1a hash of the analyst prompt when one was built.
    #[serde(default)]
    pub prompt_hash: Option<String>,
    pub decision: Option<DecisionRecord>,
    /// Cause when the analyst failed and the step was held.
    #[serde(default)]
    pub decision_error: Option<String>,
    pub risk_report: Option<RiskReport>,
    pub execution: Option<ExecutionOutcome>,
    pub portfolio: Option<PortfolioState>,
    /// Post-fill weights breaching an enabled cap.
    #[serde(default)]
    pub realized_violations: u64,
    pub reflection: Option<String>,
    #[serde(default)]
    pub memory_events: Vec<String>,
    /// Tool calls made while planning; no built-in analyst uses tools.
    #[serde(default)]
    pub tool_trace: Vec<String>,
    pub repro: Option<ReproInfo>,
}

impl TrajectoryStep {
    pub fn empty(step: usize) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            step,
            observation: None,
            feedback: String::new(),
            prompt_hash: None,
            decision: None,
            decision_error: None,
            risk_report: None,
            execution: None,
            portfolio: None,
            realized_violations: 0,
            reflection: None,
            memory_events: Vec::new(),
            tool_trace: Vec::new(),
            repro: None,
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("trajectory step serializes")
    }
}

/// Append-only writer with step-sequence checking and a running SHA-256.
pub struct TrajectoryLog {
    path: PathBuf,
    file: File,
    next_step: Option<usize>,
    hasher: Sha256,
    lines: usize,
}

impl TrajectoryLog {
    pub fn create(path: &Path) -> Result<Self, TrajectoryError> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        }
        let file = File::create(path).map_err(|e| io_err(path, e))?;
        Ok(Self { path: path.to_path_buf(), file, next_step: None, hasher: Sha256::new(), lines: 0 })
    }

    pub fn append_step(&mut self, step: &TrajectoryStep) -> Result<(), TrajectoryError> {
        if let Some(expected) = self.next_step {
            if step.step != expected {
                return Err(TrajectoryError::SequenceViolation { expected, got: step.step });
            }
        }
        let mut line = step.to_json_line();
        line.push('\n');
        self.file.write_all(line.as_bytes()).map_err(|e| io_err(&self.path, e))?;
        self.hasher.update(line.as_bytes());
        self.next_step = Some(step.step + 1);
        self.lines += 1;
        Ok(())
    }

    pub fn lines(&self) -> usize {
        self.lines
    }

    /// Running content hash of everything appended so far.
    pub fn content_hash(&self) -> String {
        hex::encode(self.hasher.clone().finalize())
    }

    /// Flush and write the `.sha256` sidecar; returns the content hash.
    pub fn finish(mut self) -> Result<String, TrajectoryError> {
        self.file.flush().map_err(|e| io_err(&self.path, e))?;
        let hash = self.content_hash();
        let side = sidecar(&self.path, "sha256");
        std::fs::write(&side, format!("{hash}\n")).map_err(|e| io_err(&side, e))?;
        Ok(hash)
    }
}

pub fn sidecar(path: &Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// Write a whole trajectory; returns the content hash.
pub fn write_log(path: &Path, steps: &[TrajectoryStep]) -> Result<String, TrajectoryError> {
    let mut log = TrajectoryLog::create(path)?;
    for s in steps {
        log.append_step(s)?;
    }
    log.finish()
}

pub fn parse_lines(reader: impl BufRead) -> Result<Vec<TrajectoryStep>, TrajectoryError> {
    let mut steps = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let n = i + 1;
        let line = line.map_err(|e| TrajectoryError::CorruptRecord { line: n, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line)
            .map_err(|e| TrajectoryError::CorruptRecord { line: n, message: e.to_string() })?;
        let version = value.get("schema_version").and_then(serde_json::Value::as_u64);
        if version != Some(u64::from(SCHEMA_VERSION)) {
            return Err(TrajectoryError::UnsupportedSchema(version, n));
        }
        let step: TrajectoryStep = serde_json::from_value(value)
            .map_err(|e| TrajectoryError::CorruptRecord { line: n, message: e.to_string() })?;
        steps.push(step);
    }
    Ok(steps)
}

pub fn read_log(path: &Path) -> Result<Vec<TrajectoryStep>, TrajectoryError> {
    let f = File::open(path).map_err(|e| io_err(path, e))?;
    parse_lines(BufReader::new(f))
}

/// Reload a log and recompute its metrics from logged fields alone.
pub fn replay(path: &Path) -> Result<(Vec<TrajectoryStep>, MetricsBundle), TrajectoryError> {
    let steps = read_log(path)?;
    if steps.is_empty() {
        return Err(TrajectoryError::Empty);
    }
    let bundle = metrics::bundle_from_steps(&steps)?;
    Ok((steps, bundle))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub risk_lifecycle: f64,
    pub reproducibility: f64,
    pub agent_trace: f64,
}

/// Required fields per coverage category (documented in docs/schema.md).
pub fn has_risk_lifecycle(s: &TrajectoryStep) -> bool {
    s.risk_report.is_some() && s.execution.is_some() && s.portfolio.is_some()
}

pub fn has_reproducibility(s: &TrajectoryStep) -> bool {
    s.schema_version == SCHEMA_VERSION
        && s.repro.as_ref().is_some_and(|r| {
            r.schema_version == SCHEMA_VERSION && !r.config_hash.is_empty() && !r.template_version.is_empty()
        })
}

pub fn has_agent_trace(s: &TrajectoryStep) -> bool {
    s.observation.as_ref().is_some_and(|o| !o.is_empty())
        && s.decision.as_ref().is_some_and(|d| d.cot_free || !d.rationale.is_empty())
        && s.reflection.as_ref().is_some_and(|r| !r.is_empty())
}

pub fn coverage(steps: &[TrajectoryStep]) -> Coverage {
    let n = steps.len().max(1) as f64;
    let frac = |f: fn(&TrajectoryStep) -> bool| steps.iter().filter(|s| f(s)).count() as f64 / n;
    Coverage {
        risk_lifecycle: frac(has_risk_lifecycle),
        reproducibility: frac(has_reproducibility),
        agent_trace: frac(has_agent_trace),
    }
}
