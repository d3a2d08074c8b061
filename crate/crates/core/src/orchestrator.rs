//! Experiment configs and the observe → plan → risk → act → reflect loop,
//! plus the directory-level pipelines (family runs, replay, diagnostics,
//! stats, reports) the CLI is a thin shell over.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    self, AgentError, CacheMode, DecisionRecord, FeedbackCondition, LlmCache, ParseMode, RecentPerformance,
    RiskMemory, SignalConfig, SignalMode, StepEvents, Weights, OVERLAY_LOOKBACK, PROMPT_TEMPLATE_VERSION,
};
use crate::dataio::{self, DataError, FileFormat};
use crate::execsim::{self, ExecConfig, ExecQueue};
use crate::halluprobe::{self, AuditCorrelations, ProxyScore};
use crate::metrics::{self, MetricsBundle, MetricsError, DEFAULT_PERIODS_PER_YEAR};
use crate::reprdiag::{self, AnchorMode, DiagnosticsConfig, DiagnosticsRow};
use crate::report;
use crate::riskgate::{self, RiskPolicy, RiskReport};
use crate::rng;
use crate::stats::{self, SeedRuns, StatsError, SweepTables};
use crate::synthmarket::{
    self, Bar, MarketPanel, PanelManifest, RegimeSpec, SynthError, TailState, TrendSign, VolatilityState,
};
use crate::trajectory::{
    self, closes_of, snapshot, Coverage, PortfolioState, ReproInfo, TrajectoryError, TrajectoryStep, SCHEMA_VERSION,
};

/// Environment variable overriding the default output root.
pub const OUT_ROOT_ENV: &str = "TRADEBENCH_OUT_ROOT";

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("invalid-config: {0}")]
    InvalidConfig(String),
    #[error("unknown-family: {0}")]
    UnknownFamily(String),
    #[error("invalid-input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("io error at {path}: {message}")]
    Io { path: String, message: String },
}

impl OrchestratorError {
    /// Validation problems (exit status 1) as opposed to run failures.
    pub fn is_validation(&self) -> bool {
        matches!(self, Self::InvalidConfig(_) | Self::UnknownFamily(_) | Self::InvalidInput(_))
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> OrchestratorError {
    OrchestratorError::Io { path: path.display().to_string(), message: e.to_string() }
}

// ---------------------------------------------------------------------------
// Configuration

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PanelSource {
    /// One regime; each run seed generates its own market.
    Regime {
        volatility: VolatilityState,
        tail: TailState,
        trend: TrendSign,
        #[serde(default)]
        base_seed: u64,
    },
    /// Heterogeneous grid; run seed `i` selects grid market `i`.
    RegimeGrid {
        count: usize,
        #[serde(default)]
        base_seed: u64,
    },
    /// OHLCV file (CSV or JSON), optionally sliced to `[start, end)`.
    File {
        path: String,
        #[serde(default)]
        start: Option<usize>,
        #[serde(default)]
        end: Option<usize>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnalystSpec {
    BuyHold,
    Signal {
        mode: SignalMode,
    },
    Markowitz {
        window: usize,
        per_name_cap: f64,
    },
    /// Cached model analyst. Misses are handled per `cache_mode`; without a
    /// cache file every step is a miss.
    Llm {
        model: String,
        #[serde(default)]
        cache: Option<String>,
        #[serde(default)]
        cache_mode: CacheMode,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RiskSpec {
    Named(String),
    Custom(RiskPolicy),
}

impl Default for RiskSpec {
    fn default() -> Self {
        Self::Named("default".into())
    }
}

impl RiskSpec {
    pub fn resolve(&self) -> Result<RiskPolicy, OrchestratorError> {
        let p = match self {
            Self::Named(n) => RiskPolicy::by_name(n)
                .ok_or_else(|| OrchestratorError::InvalidConfig(format!("unknown risk policy {n:?}")))?,
            Self::Custom(p) => *p,
        };
        p.validate().map_err(|e| OrchestratorError::InvalidConfig(e.to_string()))?;
        Ok(p)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExecSpec {
    Named(String),
    Custom(ExecConfig),
}

impl Default for ExecSpec {
    fn default() -> Self {
        Self::Named("realistic".into())
    }
}

impl ExecSpec {
    pub fn resolve(&self) -> Result<ExecConfig, OrchestratorError> {
        match self {
            Self::Named(n) => ExecConfig::by_name(n)
                .ok_or_else(|| OrchestratorError::InvalidConfig(format!("unknown execution config {n:?}"))),
            Self::Custom(c) => Ok(*c),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseConfig {
    pub name: String,
    pub analyst: AnalystSpec,
    #[serde(default)]
    pub risk: RiskSpec,
    #[serde(default)]
    pub execution: ExecSpec,
    #[serde(default)]
    pub feedback: FeedbackCondition,
    #[serde(default)]
    pub cot_free: bool,
    #[serde(default)]
    pub memory_overlay: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SignalParams {
    pub lookback: usize,
    pub gross_cap: f64,
    /// AR(1) coefficient of the macro/news sentiment series.
    pub macro_persistence: f64,
}

impl Default for SignalParams {
    fn default() -> Self {
        let d = SignalConfig::default();
        Self { lookback: d.lookback, gross_cap: d.gross_cap, macro_persistence: d.macro_persistence }
    }
}

fn default_symbols() -> Vec<String> {
    ["A", "B", "C"].iter().map(|s| s.to_string()).collect()
}

fn default_steps() -> usize {
    120
}

fn default_capital() -> f64 {
    2e7
}

fn default_ppy() -> f64 {
    DEFAULT_PERIODS_PER_YEAR
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub panel: PanelSource,
    /// Universe for synthetic panels; file panels use the file's symbols.
    #[serde(default = "default_symbols")]
    pub symbols: Vec<String>,
    /// Horizon for synthetic panels.
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_capital")]
    pub initial_capital: f64,
    #[serde(default = "default_ppy")]
    pub periods_per_year: f64,
    /// Empty means `0..count` for a regime grid.
    #[serde(default)]
    pub seeds: Vec<u64>,
    pub cases: Vec<CaseConfig>,
    /// Case the paired tables compare against; defaults to the first case.
    #[serde(default)]
    pub baseline: Option<String>,
    #[serde(default)]
    pub signal: SignalParams,
    /// Output root; `--out` and the environment override take precedence.
    #[serde(default)]
    pub output_dir: Option<String>,
}

/// A config file holds one family or a list of them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ConfigFile {
    Suite { families: Vec<ExperimentConfig> },
    Single(ExperimentConfig),
}

impl ConfigFile {
    pub fn families(self) -> Vec<ExperimentConfig> {
        match self {
            Self::Suite { families } => families,
            Self::Single(c) => vec![c],
        }
    }
}

/// Load a config file; relative panel and cache paths resolve against the
/// file's directory.
pub fn load_config(path: &Path) -> Result<Vec<ExperimentConfig>, OrchestratorError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| OrchestratorError::InvalidConfig(format!("{}: {e}", path.display())))?;
    let file: ConfigFile = serde_json::from_str(&text)
        .map_err(|e| OrchestratorError::InvalidConfig(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let resolve = |p: &mut String| {
        if Path::new(p.as_str()).is_relative() {
            *p = base.join(p.as_str()).to_string_lossy().into_owned();
        }
    };
    let mut fams = file.families();
    for f in &mut fams {
        if let PanelSource::File { path, .. } = &mut f.panel {
            resolve(path);
        }
        for c in &mut f.cases {
            if let AnalystSpec::Llm { cache: Some(p), .. } = &mut c.analyst {
                resolve(p);
            }
        }
        f.validate()?;
    }
    Ok(fams)
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), OrchestratorError> {
        let bad = |m: String| Err(OrchestratorError::InvalidConfig(m));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return bad(format!("family name {:?} must be a non-empty path component", self.name));
        }
        if self.cases.is_empty() {
            return bad("no cases".into());
        }
        let mut names = BTreeSet::new();
        for c in &self.cases {
            if !names.insert(c.name.as_str()) {
                return bad(format!("duplicate case name {:?}", c.name));
            }
            if c.name.is_empty() || c.name.contains(['/', '\\']) {
                return bad(format!("case name {:?} must be a non-empty path component", c.name));
            }
            c.risk.resolve()?;
            c.execution.resolve()?;
            if let AnalystSpec::Markowitz { window, per_name_cap } = c.analyst {
                if window < 2 || !(per_name_cap > 0.0) {
                    return bad(format!("case {}: markowitz needs window ≥ 2 and a positive cap", c.name));
                }
            }
        }
        if let Some(b) = &self.baseline {
            if !names.contains(b.as_str()) {
                return bad(format!("baseline {b:?} is not a case"));
            }
        }
        if !(self.initial_capital > 0.0 && self.initial_capital.is_finite()) {
            return bad(format!("initial_capital must be positive, got {}", self.initial_capital));
        }
        if !(self.periods_per_year > 0.0) {
            return bad("periods_per_year must be positive".into());
        }
        if self.signal.lookback == 0 || !(self.signal.gross_cap > 0.0) {
            return bad("signal lookback and gross_cap must be positive".into());
        }
        if !(0.0..1.0).contains(&self.signal.macro_persistence) {
            return bad(format!("macro_persistence must lie in [0, 1), got {}", self.signal.macro_persistence));
        }
        match &self.panel {
            PanelSource::RegimeGrid { count, .. } => {
                if *count == 0 {
                    return bad("regime_grid count must be positive".into());
                }
                if let Some(s) = self.seeds.iter().find(|s| **s >= *count as u64) {
                    return bad(format!("seed {s} outside the {count}-market grid"));
                }
            }
            _ if self.seeds.is_empty() => return bad("seeds must be non-empty".into()),
            _ => {}
        }
        if !matches!(self.panel, PanelSource::File { .. }) {
            if self.steps < 2 {
                return bad(format!("steps must be at least 2, got {}", self.steps));
            }
            if self.symbols.is_empty() {
                return bad("symbols must be non-empty".into());
            }
        }
        Ok(())
    }

    pub fn case(&self, name: &str) -> Result<&CaseConfig, OrchestratorError> {
        self.cases
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| OrchestratorError::InvalidConfig(format!("unknown case {name:?}")))
    }

    pub fn run_seeds(&self) -> Vec<u64> {
        match (&self.panel, self.seeds.is_empty()) {
            (PanelSource::RegimeGrid { count, .. }, true) => (0..*count as u64).collect(),
            _ => self.seeds.clone(),
        }
    }

    pub fn baseline_case(&self) -> &str {
        self.baseline.as_deref().unwrap_or(&self.cases[0].name)
    }

    /// SHA-256 of the canonical JSON form, output location excluded.
    pub fn config_hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        rng::sha256_hex(serde_json::to_string(&c).expect("config serializes").as_bytes())
    }

    /// Market for one run seed.
    pub fn build_panel(&self, seed: u64) -> Result<MarketPanel, OrchestratorError> {
        Ok(match &self.panel {
            PanelSource::Regime { volatility, tail, trend, base_seed } => {
                let spec = RegimeSpec::new(*volatility, *tail, *trend, rng::mix(*base_seed, seed));
                synthmarket::generate_market(&spec, &self.symbols, self.steps)?
            }
            PanelSource::RegimeGrid { count, base_seed } => {
                let grid = synthmarket::build_regime_grid(*count, *base_seed);
                let spec = grid.get(seed as usize).ok_or_else(|| {
                    OrchestratorError::InvalidConfig(format!("seed {seed} outside the {count}-market grid"))
                })?;
                synthmarket::generate_market(spec, &self.symbols, self.steps)?
            }
            PanelSource::File { path, start, end } => {
                let p = Path::new(path);
                let fmt = FileFormat::from_path(p).ok_or_else(|| {
                    OrchestratorError::InvalidConfig(format!("{path}: unknown panel format (use .csv or .json)"))
                })?;
                let panel = dataio::align_panels(&dataio::load_ohlcv(p, fmt)?)?;
                slice_panel(&panel, start.unwrap_or(0), end.unwrap_or(panel.n_steps()))?
            }
        })
    }
}

/// Steps `[start, end)` of a panel, re-indexed from zero.
pub fn slice_panel(panel: &MarketPanel, start: usize, end: usize) -> Result<MarketPanel, OrchestratorError> {
    let end = end.min(panel.n_steps());
    if end < start + 2 {
        return Err(OrchestratorError::InvalidConfig(format!("panel window [{start}, {end}) has fewer than 2 steps")));
    }
    let mut out = panel.clone();
    for bars in &mut out.bars {
        *bars = bars[start..end].iter().enumerate().map(|(i, b)| Bar { step: i, ..*b }).collect();
    }
    if start > 0 || end < panel.n_steps() {
        out.manifest.notes.push(format!("window [{start}, {end})"));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// The per-step loop

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub case: String,
    pub seed: u64,
    pub steps: Vec<TrajectoryStep>,
    /// Absent when the run stopped early.
    pub bundle: Option<MetricsBundle>,
    /// Cause of an early stop; the partial steps are kept, never imputed.
    pub incomplete: Option<String>,
    /// Prompt/response pairs answered by the synthetic responder in record mode.
    pub recorded: Vec<(String, String)>,
}

/// Current holdings plus queued orders, as weights of equity.
fn book_weights(p: &PortfolioState, outstanding: &BTreeMap<String, f64>, closes: &BTreeMap<String, f64>) -> Weights {
    let mut units = p.positions.clone();
    for (s, q) in outstanding {
        *units.entry(s.clone()).or_insert(0.0) += q;
    }
    units
        .into_iter()
        .filter(|(_, q)| *q != 0.0)
        .map(|(s, q)| {
            let w = q * closes.get(&s).copied().unwrap_or(0.0) / p.equity;
            (s, w)
        })
        .collect()
}

fn hold_decision(step: usize, book: &Weights, reason: &str) -> DecisionRecord {
    DecisionRecord {
        step,
        intended_weights: book.clone(),
        rationale: format!("Holding the current book: {reason}."),
        confidence: 0.0,
        ..DecisionRecord::default()
    }
}

/// Summary events of one step, as folded into risk memory.
pub fn step_events(s: &TrajectoryStep) -> StepEvents {
    let r = s.risk_report.as_ref();
    let e = s.execution.as_ref();
    StepEvents {
        step: s.step,
        clipped: r.map_or(0, |r| r.clipped_count),
        blocked: r.map_or(0, |r| r.blocked_count),
        violations: s.realized_violations,
        rejected: e.map_or(0, |e| e.rejected),
        pending: e.map_or(0, |e| e.pending),
        slippage: e.map_or(0.0, |e| e.slippage_total),
    }
}

fn cached_reflection(response: &str) -> Option<String> {
    let v: serde_json::Value = serde_json::from_str(response).ok()?;
    let r = v.get("reflection")?.as_str()?.trim();
    (!r.is_empty()).then(|| r.to_string())
}

struct ReflectionInput<'a> {
    step: usize,
    outcome: &'a execsim::ExecutionOutcome,
    report: &'a RiskReport,
    realized: u64,
    equity_prev: f64,
    equity: f64,
    top: Option<(String, f64)>,
}

/// Fixed template over audited fields: attribution, execution outcome,
/// rejects/pending, slippage and violations.
fn reflection_text(r: &ReflectionInput) -> String {
    let o = r.outcome;
    let mut s = format!(
        "Step {} reflection: equity {:.2} ({:+.4} on the step).",
        r.step,
        r.equity,
        r.equity / r.equity_prev - 1.0
    );
    if let Some((sym, pnl)) = &r.top {
        s.push_str(&format!(" Largest contributor {sym} {pnl:+.2}."));
    }
    s.push_str(&format!(
        " Submitted {} orders, {} fills ({} partial), {} rejected, {} pending; fill ratio {:.3}.",
        o.orders.len(),
        o.fills.len(),
        o.partial_fills,
        o.rejected,
        o.pending,
        o.fill_ratio
    ));
    s.push_str(&format!(" Slippage {:.2}, commission {:.2}.", o.slippage_total, o.commission_total));
    s.push_str(&format!(
        " Risk gate clipped {}, blocked {}, calibration score {:.3}; realized violations {}.",
        r.report.clipped_count, r.report.blocked_count, r.report.calibration_score, r.realized
    ));
    s
}

/// Run one (case, seed) on its configured panel.
pub fn run_case(
    cfg: &ExperimentConfig,
    case: &str,
    seed: u64,
    cache: Option<&LlmCache>,
) -> Result<RunOutput, OrchestratorError> {
    let panel = cfg.build_panel(seed)?;
    run_case_on_panel(cfg, case, seed, &panel, cache)
}

pub fn run_case_on_panel(
    cfg: &ExperimentConfig,
    case_name: &str,
    seed: u64,
    panel: &MarketPanel,
    cache: Option<&LlmCache>,
) -> Result<RunOutput, OrchestratorError> {
    let case = cfg.case(case_name)?;
    let policy = case.risk.resolve()?;
    let exec = case.execution.resolve()?;
    // Realized violations are audited against the reference caps even when
    // the gate is off.
    let audit_policy = if policy.enabled { policy } else { RiskPolicy::default_policy() };
    let signal = SignalConfig {
        lookback: cfg.signal.lookback,
        gross_cap: cfg.signal.gross_cap,
        macro_seed: seed,
        macro_persistence: cfg.signal.macro_persistence,
    };
    let repro = ReproInfo {
        seed,
        config_hash: cfg.config_hash(),
        schema_version: SCHEMA_VERSION,
        template_version: PROMPT_TEMPLATE_VERSION.to_string(),
        initial_capital: cfg.initial_capital,
        periods_per_year: cfg.periods_per_year,
    };
    let empty_cache;
    let cache = match (&case.analyst, cache) {
        (_, Some(c)) => c,
        (AnalystSpec::Llm { model, .. }, None) => {
            empty_cache = LlmCache::new(model);
            &empty_cache
        }
        _ => {
            empty_cache = LlmCache::default();
            &empty_cache
        }
    };

    let mut out = RunOutput {
        case: case_name.to_string(),
        seed,
        steps: Vec::with_capacity(panel.n_steps()),
        bundle: None,
        incomplete: None,
        recorded: vec![],
    };
    let mut portfolio = PortfolioState::with_cash(cfg.initial_capital);
    let mut queue = ExecQueue::default();
    let mut memory = RiskMemory::default();
    let mut last_report: Option<RiskReport> = None;
    let mut equity_hist = vec![cfg.initial_capital];

    for t in 0..panel.n_steps() {
        let mut st = TrajectoryStep::empty(t);
        let obs = snapshot(panel, t);
        let closes = closes_of(&obs);
        portfolio.mark(panel, t);
        let prev_weights = portfolio.weights_at(&closes);
        let book = book_weights(&portfolio, &queue.outstanding(), &closes);

        let mut reflection_override = None;
        let mut decision = match &case.analyst {
            AnalystSpec::BuyHold if t == 0 => agents::buy_hold_equal(&panel.symbols)?,
            AnalystSpec::BuyHold => agents::buy_hold_continue(t, &book),
            AnalystSpec::Signal { mode } => match agents::signal_weights(panel, t, *mode, &signal) {
                Ok(d) => d,
                Err(e) => {
                    st.decision_error = Some(e.to_string());
                    hold_decision(t, &book, &format!("insufficient history for a {}-step lookback", signal.lookback))
                }
            },
            AnalystSpec::Markowitz { window, per_name_cap } => {
                match agents::markowitz_weights(panel, t, *window, *per_name_cap) {
                    Ok(d) => d,
                    Err(e) => {
                        st.decision_error = Some(e.to_string());
                        hold_decision(t, &book, &e.to_string())
                    }
                }
            }
            AnalystSpec::Llm { cache_mode, .. } => {
                st.feedback = agents::build_feedback_block(&memory, last_report.as_ref(), case.feedback, t);
                let parse = if case.cot_free { ParseMode::WeightsOnlyJson } else { ParseMode::RationaleJson };
                let prompt = agents::build_prompt(panel, t, &st.feedback, parse);
                st.prompt_hash = Some(rng::fnv1a64_hex(prompt.as_bytes()));
                let response = match (cache.get(&prompt), cache_mode) {
                    (Some(r), _) => r.response.clone(),
                    (None, CacheMode::Strict) => {
                        let key = agents::cache_key(&cache.model, &prompt);
                        out.incomplete = Some(AgentError::MissingCacheEntry { key }.to_string());
                        return Ok(out);
                    }
                    (None, CacheMode::Fallback) => agents::synthetic_response(panel, t, &prompt, parse, &signal),
                    (None, CacheMode::Record) => {
                        let r = agents::synthetic_response(panel, t, &prompt, parse, &signal);
                        out.recorded.push((prompt.clone(), r.clone()));
                        r
                    }
                };
                reflection_override = cached_reflection(&response);
                match agents::parse_response(&response, parse, t) {
                    Ok(d) => d,
                    Err(e) => {
                        st.decision_error = Some(e.to_string());
                        let mut d = hold_decision(t, &book, "unparseable analyst response");
                        d.cot_free = case.cot_free;
                        if case.cot_free {
                            d.rationale.clear();
                        }
                        d
                    }
                }
            }
        };
        decision.step = t;
        decision.feedback_condition = case.feedback;
        if case.cot_free {
            decision.rationale.clear();
            decision.cot_free = true;
        }
        if case.memory_overlay {
            let from = equity_hist.len().saturating_sub(OVERLAY_LOOKBACK + 1);
            let perf = RecentPerformance { equity: equity_hist[from..].to_vec() };
            decision = agents::memory_overlay(&decision, &memory, &perf);
        }

        let report = riskgate::evaluate(&decision, &prev_weights, &policy);
        let mut notes = Vec::new();
        let orders = execsim::targets_to_orders(
            &report.approved_weights,
            &portfolio,
            panel,
            t,
            &queue.outstanding(),
            exec.effective().min_notional,
            &mut notes,
        );
        let mut outcome = execsim::execute(orders, panel, t, &exec, &mut queue);
        notes.append(&mut outcome.notes);
        outcome.notes = notes;

        let held_before = portfolio.positions.clone();
        execsim::apply_fills(&mut portfolio, &outcome.fills);
        portfolio.mark(panel, t);
        let realized = riskgate::count_violations(&portfolio.weights_at(&closes), &audit_policy);

        let top = (t > 0)
            .then(|| {
                panel
                    .symbols
                    .iter()
                    .enumerate()
                    .filter_map(|(i, s)| {
                        let q = held_before.get(s)?;
                        Some((s.clone(), q * (panel.bars[i][t].close - panel.bars[i][t - 1].close)))
                    })
                    .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then_with(|| b.0.cmp(&a.0)))
            })
            .flatten();
        let equity_prev = *equity_hist.last().expect("seeded with capital");
        st.reflection = Some(reflection_override.unwrap_or_else(|| {
            reflection_text(&ReflectionInput {
                step: t,
                outcome: &outcome,
                report: &report,
                realized,
                equity_prev,
                equity: portfolio.equity,
                top,
            })
        }));

        st.observation = Some(obs);
        st.decision = Some(decision);
        st.risk_report = Some(report.clone());
        st.execution = Some(outcome);
        st.portfolio = Some(portfolio.clone());
        st.realized_violations = realized;
        st.repro = Some(repro.clone());
        st.memory_events = memory.record(step_events(&st), portfolio.equity);
        last_report = Some(report);
        equity_hist.push(portfolio.equity);
        out.steps.push(st);
    }
    out.bundle = Some(metrics::bundle_from_steps(&out.steps)?);
    Ok(out)
}

// ---------------------------------------------------------------------------
// Families

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub case: String,
    pub seed: u64,
    /// Log file name relative to the family directory.
    pub log: String,
    pub content_hash: Option<String>,
    pub steps: usize,
    pub bundle: Option<MetricsBundle>,
    pub coverage: Option<Coverage>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilySummary {
    pub family: String,
    pub config_hash: String,
    pub cases: Vec<String>,
    pub seeds: Vec<u64>,
    pub baseline: String,
    pub runs: Vec<RunRecord>,
    pub tables: SweepTables,
    /// Seeds left out of the paired tables because some case failed.
    pub excluded_seeds: Vec<u64>,
    pub coverage_complete: bool,
    pub notes: Vec<String>,
}

impl FamilySummary {
    pub fn ok_runs(&self) -> impl Iterator<Item = &RunRecord> {
        self.runs.iter().filter(|r| r.error.is_none())
    }
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub out_root: PathBuf,
    pub jobs: usize,
    pub seeds: Option<Vec<u64>>,
}

/// `--out`, then the environment override, then the config, then `out`.
pub fn resolve_out_root(flag: Option<&Path>, cfg: Option<&ExperimentConfig>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Ok(p) = std::env::var(OUT_ROOT_ENV) {
        if !p.is_empty() {
            return PathBuf::from(p);
        }
    }
    cfg.and_then(|c| c.output_dir.as_ref()).map_or_else(|| PathBuf::from("out"), PathBuf::from)
}

/// Metrics summarized in the sweep tables.
pub const SWEEP_METRICS: [&str; 16] = [
    "total_return",
    "sharpe",
    "volatility",
    "max_drawdown",
    "order_count",
    "hold_ratio",
    "fill_rate",
    "partial_fill_rate",
    "rejected",
    "pending",
    "slippage",
    "clipped",
    "blocked",
    "violations",
    "mean_calibration_score",
    "herfindahl",
];

pub fn log_name(case: &str, seed: u64) -> String {
    format!("{case}_seed{seed}.jsonl")
}

/// Inverse of `log_name`.
pub fn parse_log_name(name: &str) -> Option<(String, u64)> {
    let stem = name.strip_suffix(".jsonl")?;
    let (case, seed) = stem.rsplit_once("_seed")?;
    Some((case.to_string(), seed.parse().ok()?))
}

fn load_caches(cfg: &ExperimentConfig) -> Result<BTreeMap<String, LlmCache>, OrchestratorError> {
    let mut out = BTreeMap::new();
    for c in &cfg.cases {
        if let AnalystSpec::Llm { model, cache, .. } = &c.analyst {
            let lc = match cache {
                Some(p) => LlmCache::open(Path::new(p), model)?,
                None => LlmCache::new(model),
            };
            out.insert(c.name.clone(), lc);
        }
    }
    Ok(out)
}

/// Execute every (case, seed), write logs, tables, charts and summary.json
/// under `{out_root}/{family}/`.
pub fn run_family(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<FamilySummary, OrchestratorError> {
    cfg.validate()?;
    let seeds = opts.seeds.clone().unwrap_or_else(|| cfg.run_seeds());
    if seeds.is_empty() {
        return Err(OrchestratorError::InvalidConfig("no seeds to run".into()));
    }
    if let PanelSource::RegimeGrid { count, .. } = cfg.panel {
        if let Some(s) = seeds.iter().find(|s| **s >= count as u64) {
            return Err(OrchestratorError::InvalidConfig(format!("seed {s} outside the {count}-market grid")));
        }
    }
    let dir = opts.out_root.join(&cfg.name);
    std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    let caches = load_caches(cfg)?;

    let jobs: Vec<(String, u64)> =
        seeds.iter().flat_map(|s| cfg.cases.iter().map(move |c| (c.name.clone(), *s))).collect();
    let results: Vec<Mutex<Option<(RunRecord, Vec<f64>, Vec<(String, String)>)>>> =
        jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let work = || {
        loop {
            let i = next.fetch_add(1, Ordering::Relaxed);
            if i >= jobs.len() {
                break;
            }
            let (case, seed) = &jobs[i];
            let res = execute_and_write(cfg, case, *seed, caches.get(case), &dir);
            *results[i].lock().expect("result slot") = Some(res);
        }
    };
    let workers = opts.jobs.max(1).min(jobs.len());
    if workers <= 1 {
        work();
    } else {
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(&work);
            }
        });
    }

    let mut runs = Vec::with_capacity(jobs.len());
    let mut curves = Vec::new();
    let mut recorded: BTreeMap<String, Vec<(String, String)>> = BTreeMap::new();
    for (slot, (case, _)) in results.into_iter().zip(&jobs) {
        let (rec, curve, rec_pairs) = slot.into_inner().expect("result slot").expect("every job ran");
        if !curve.is_empty() {
            curves.push((rec.case.clone(), rec.seed, curve));
        }
        recorded.entry(case.clone()).or_default().extend(rec_pairs);
        runs.push(rec);
    }

    // Record-mode caches are written back once all runs are done.
    for c in &cfg.cases {
        if let AnalystSpec::Llm { cache: Some(path), cache_mode: CacheMode::Record, .. } = &c.analyst {
            let pairs = recorded.remove(&c.name).unwrap_or_default();
            if pairs.is_empty() {
                continue;
            }
            let mut lc = LlmCache::open(Path::new(path), &caches[&c.name].model)?;
            for (p, r) in pairs {
                lc.insert(&p, &r);
            }
            lc.save(Path::new(path))?;
        }
    }

    let summary = summarize(cfg, &seeds, runs)?;
    report::emit_family(&summary, &curves, &dir).map_err(|e| io_err(&dir, e))?;
    Ok(summary)
}

fn execute_and_write(
    cfg: &ExperimentConfig,
    case: &str,
    seed: u64,
    cache: Option<&LlmCache>,
    dir: &Path,
) -> (RunRecord, Vec<f64>, Vec<(String, String)>) {
    let log = log_name(case, seed);
    let path = dir.join(&log);
    let marker = trajectory::sidecar(&path, "incomplete");
    let mut rec = RunRecord {
        case: case.to_string(),
        seed,
        log,
        content_hash: None,
        steps: 0,
        bundle: None,
        coverage: None,
        error: None,
    };
    let out = match run_case(cfg, case, seed, cache) {
        Ok(o) => o,
        Err(e) => {
            rec.error = Some(e.to_string());
            let _ = std::fs::write(&marker, format!("{e}\n"));
            return (rec, vec![], vec![]);
        }
    };
    rec.steps = out.steps.len();
    match trajectory::write_log(&path, &out.steps) {
        Ok(h) => rec.content_hash = Some(h),
        Err(e) => rec.error = Some(e.to_string()),
    }
    if let Some(cause) = &out.incomplete {
        rec.error = Some(format!("incomplete after {} steps: {cause}", out.steps.len()));
    }
    let cov = trajectory::coverage(&out.steps);
    if rec.error.is_none() && (cov.risk_lifecycle < 1.0 || cov.reproducibility < 1.0 || cov.agent_trace < 1.0) {
        rec.error = Some(format!("coverage below 1.0: {cov:?}"));
    }
    rec.coverage = Some(cov);
    match &rec.error {
        Some(e) => {
            let _ = std::fs::write(&marker, format!("{e}\n"));
        }
        None => {
            let _ = std::fs::remove_file(&marker);
        }
    }
    rec.bundle = out.bundle;
    let curve = std::iter::once(cfg.initial_capital)
        .chain(out.steps.iter().filter_map(|s| s.portfolio.as_ref().map(|p| p.equity)))
        .collect();
    (rec, curve, out.recorded)
}

/// Aggregate run records over the seeds on which every case succeeded.
pub fn summarize(cfg: &ExperimentConfig, seeds: &[u64], runs: Vec<RunRecord>) -> Result<FamilySummary, OrchestratorError> {
    let failed: BTreeSet<u64> = runs.iter().filter(|r| r.error.is_some() || r.bundle.is_none()).map(|r| r.seed).collect();
    let mut per_case: Vec<(String, SeedRuns)> = cfg.cases.iter().map(|c| (c.name.clone(), SeedRuns::new())).collect();
    for r in runs.iter().filter(|r| !failed.contains(&r.seed)) {
        if let (Some((_, m)), Some(b)) = (per_case.iter_mut().find(|(c, _)| *c == r.case), &r.bundle) {
            m.insert(r.seed, b.clone());
        }
    }
    let tables = if failed.len() == seeds.len() {
        SweepTables::default()
    } else {
        stats::sweep_aggregate(&per_case, cfg.baseline_case(), &SWEEP_METRICS)?
    };
    let mut notes = Vec::new();
    for r in runs.iter().filter(|r| r.error.is_some()) {
        notes.push(format!("{} seed {}: {}", r.case, r.seed, r.error.as_deref().unwrap_or_default()));
    }
    Ok(FamilySummary {
        family: cfg.name.clone(),
        config_hash: cfg.config_hash(),
        cases: cfg.cases.iter().map(|c| c.name.clone()).collect(),
        seeds: seeds.to_vec(),
        baseline: cfg.baseline_case().to_string(),
        coverage_complete: runs.iter().all(|r| r.error.is_none()),
        runs,
        tables,
        excluded_seeds: failed.into_iter().collect(),
        notes,
    })
}

// ---------------------------------------------------------------------------
// Directory pipelines

/// Trajectory logs in `dir` (not recursive), sorted by file name.
pub fn list_logs(dir: &Path) -> Result<Vec<PathBuf>, OrchestratorError> {
    let rd = std::fs::read_dir(dir).map_err(|e| io_err(dir, e))?;
    let mut out: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    out.sort();
    if out.is_empty() {
        return Err(OrchestratorError::InvalidInput(format!("no .jsonl trajectories in {}", dir.display())));
    }
    Ok(out)
}

/// Rebuild the market a trajectory observed from its logged bars.
pub fn observation_panel(steps: &[TrajectoryStep]) -> Result<MarketPanel, OrchestratorError> {
    let first = steps
        .first()
        .and_then(|s| s.observation.as_ref())
        .ok_or_else(|| OrchestratorError::InvalidInput("trajectory has no observations".into()))?;
    let symbols: Vec<String> = first.iter().map(|b| b.symbol.clone()).collect();
    let mut bars = vec![Vec::with_capacity(steps.len()); symbols.len()];
    for (t, s) in steps.iter().enumerate() {
        let obs = s
            .observation
            .as_ref()
            .ok_or_else(|| OrchestratorError::InvalidInput(format!("step {t} has no observation")))?;
        if obs.len() != symbols.len() || obs.iter().zip(&symbols).any(|(b, s)| &b.symbol != s) {
            return Err(OrchestratorError::InvalidInput(format!("step {t}: observation universe changed")));
        }
        for (i, b) in obs.iter().enumerate() {
            bars[i].push(Bar { step: t, open: b.open, high: b.high, low: b.low, close: b.close, volume: b.volume });
        }
    }
    Ok(MarketPanel {
        symbols,
        bars,
        manifest: PanelManifest {
            seed: steps[0].repro.as_ref().map(|r| r.seed),
            source: "trajectory-observations".into(),
            generated_at: synthmarket::SYNTHETIC_TIMESTAMP.into(),
            content_hash: None,
            notes: vec![],
        },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplaySummary {
    pub path: String,
    pub steps: usize,
    pub content_hash: String,
    pub coverage: Coverage,
    pub bundle: MetricsBundle,
}

pub fn replay_file(path: &Path) -> Result<ReplaySummary, OrchestratorError> {
    let (steps, bundle) = trajectory::replay(path)?;
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    Ok(ReplaySummary {
        path: path.display().to_string(),
        steps: steps.len(),
        content_hash: rng::sha256_hex(&bytes),
        coverage: trajectory::coverage(&steps),
        bundle,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReprOptions {
    /// View-name prefixes to keep (`hash64`, `lsa`, `intent`, ...); empty keeps all.
    pub views: Vec<String>,
    pub modes: Vec<AnchorMode>,
    pub noise: Option<f64>,
    pub noise_seed: u64,
    pub config: DiagnosticsConfig,
}

impl Default for ReprOptions {
    fn default() -> Self {
        Self {
            views: vec![],
            modes: vec![AnchorMode::MaxAnchor, AnchorMode::Rolling],
            noise: None,
            noise_seed: 0,
            config: DiagnosticsConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReprRow {
    pub trajectory: String,
    pub epsilon: f64,
    pub row: DiagnosticsRow,
}

fn view_selected(name: &str, views: &[String]) -> bool {
    views.is_empty() || views.iter().any(|v| name.contains(v.as_str()))
}

/// Representation diagnostics for one trajectory. With `noise`, the market
/// features of the fused view come from a noise-injected copy of the logged
/// bars; text and labels come from the trajectory itself.
pub fn repr_rows(name: &str, steps: &[TrajectoryStep], opts: &ReprOptions) -> Result<Vec<ReprRow>, OrchestratorError> {
    let panel = observation_panel(steps)?;
    let eps = opts.noise.unwrap_or(0.0);
    let feature_panel = if eps > 0.0 { dataio::inject_noise(&panel, eps, opts.noise_seed)? } else { panel };
    Ok(reprdiag::run_diagnostics(steps, &feature_panel, &opts.config)
        .into_iter()
        .filter(|r| view_selected(&r.view, &opts.views))
        .filter(|r| opts.modes.iter().any(|m| m.name() == r.mode))
        .map(|row| ReprRow { trajectory: name.to_string(), epsilon: eps, row })
        .collect())
}

pub fn diag_repr_dir(dir: &Path, opts: &ReprOptions) -> Result<Vec<ReprRow>, OrchestratorError> {
    let mut rows = Vec::new();
    for p in list_logs(dir)? {
        let steps = trajectory::read_log(&p)?;
        let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        rows.extend(repr_rows(&name, &steps, opts)?);
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HallucReport {
    pub trajectory: String,
    pub scores: Vec<ProxyScore>,
    pub correlations: AuditCorrelations,
}

/// Proxy scores for a trajectory. Prompts are rebuilt from logged bars and
/// feedback; memory is replayed from the logged audit fields.
pub fn halluc_report(name: &str, steps: &[TrajectoryStep]) -> Result<HallucReport, OrchestratorError> {
    let panel = observation_panel(steps)?;
    let mut memory = RiskMemory::default();
    let mut scores = Vec::with_capacity(steps.len());
    for s in steps {
        let cot = s.decision.as_ref().is_some_and(|d| d.cot_free);
        let parse = if cot { ParseMode::WeightsOnlyJson } else { ParseMode::RationaleJson };
        let prompt = agents::build_prompt(&panel, s.step, &s.feedback, parse);
        scores.push(halluprobe::proxy_score(s, &prompt, &memory));
        memory.record(step_events(s), s.portfolio.as_ref().map_or(0.0, |p| p.equity));
    }
    let correlations = halluprobe::audit_correlations(&scores, steps);
    Ok(HallucReport { trajectory: name.to_string(), scores, correlations })
}

pub fn diag_halluc_dir(dir: &Path) -> Result<Vec<(HallucReport, Vec<TrajectoryStep>)>, OrchestratorError> {
    let mut out = Vec::new();
    for p in list_logs(dir)? {
        let steps = trajectory::read_log(&p)?;
        let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        out.push((halluc_report(&name, &steps)?, steps));
    }
    Ok(out)
}

/// Replay every `{case}_seed{n}.jsonl` in `dir` and aggregate against
/// `baseline`. Case order and the default baseline come from the family's
/// summary.json when present, otherwise name order and the first case.
pub fn stats_dir(dir: &Path, baseline: Option<&str>) -> Result<SweepTables, OrchestratorError> {
    let mut per_case: BTreeMap<String, SeedRuns> = BTreeMap::new();
    for p in list_logs(dir)? {
        let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let Some((case, seed)) = parse_log_name(&name) else { continue };
        if trajectory::sidecar(&p, "incomplete").exists() {
            continue;
        }
        let (_, bundle) = trajectory::replay(&p)?;
        per_case.entry(case).or_default().insert(seed, bundle);
    }
    let family: Option<FamilySummary> =
        std::fs::read_to_string(dir.join("summary.json")).ok().and_then(|t| serde_json::from_str(&t).ok());
    let rank = |c: &str| family.as_ref().and_then(|f| f.cases.iter().position(|x| x == c)).unwrap_or(usize::MAX);
    let base = match baseline {
        Some(b) => b.to_string(),
        None => match family.as_ref().map(|f| f.baseline.clone()).filter(|b| per_case.contains_key(b)) {
            Some(b) => b,
            None => per_case
                .keys()
                .next()
                .cloned()
                .ok_or_else(|| OrchestratorError::InvalidInput(format!("no case logs in {}", dir.display())))?,
        },
    };
    let common: BTreeSet<u64> = per_case
        .values()
        .map(|r| r.keys().copied().collect::<BTreeSet<u64>>())
        .reduce(|a, b| a.intersection(&b).copied().collect())
        .unwrap_or_default();
    let mut runs: Vec<(String, SeedRuns)> = per_case
        .into_iter()
        .map(|(c, r)| (c, r.into_iter().filter(|(s, _)| common.contains(s)).collect()))
        .collect();
    runs.sort_by_key(|(c, _)| rank(c));
    Ok(stats::sweep_aggregate(&runs, &base, &SWEEP_METRICS)?)
}

/// Re-emit tables and charts for a family directory from its summary.json
/// and logs.
pub fn report_dir(dir: &Path) -> Result<FamilySummary, OrchestratorError> {
    let path = dir.join("summary.json");
    let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let summary: FamilySummary =
        serde_json::from_str(&text).map_err(|e| OrchestratorError::InvalidInput(format!("{}: {e}", path.display())))?;
    let mut curves = Vec::new();
    for r in &summary.runs {
        let p = dir.join(&r.log);
        if !p.exists() {
            continue;
        }
        let steps = trajectory::read_log(&p)?;
        let Some(capital) = steps.first().and_then(|s| s.repro.as_ref()).map(|r| r.initial_capital) else { continue };
        let curve = std::iter::once(capital)
            .chain(steps.iter().filter_map(|s| s.portfolio.as_ref().map(|p| p.equity)))
            .collect();
        curves.push((r.case.clone(), r.seed, curve));
    }
    report::emit_family(&summary, &curves, dir).map_err(|e| io_err(dir, e))?;
    Ok(summary)
}
