//! Analysts that turn market state into intended target weights: signal
//! analysts, an equal-weight baseline, a memory overlay, a rolling
//! minimum-variance optimizer and a cached-replay LLM analyst.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt::Write as _;
use std::io::{BufRead, Write as _};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::riskgate::RiskReport;
use crate::rng;
use crate::synthmarket::MarketPanel;

/// Symbol → signed fraction of equity. Ordered so serialization is stable.
pub type Weights = BTreeMap<String, f64>;

pub const MOMENTUM_LOOKBACK: usize = 16;
pub const MACRO_PERSISTENCE: f64 = 0.95;
pub const DEFAULT_GROSS_CAP: f64 = 1.5;
pub const OVERLAY_F_MIN: f64 = 0.5;
pub const OVERLAY_F_MAX: f64 = 1.1;
pub const OVERLAY_LOOKBACK: usize = 8;
pub const MEMORY_WINDOW: usize = 52;
pub const PROMPT_TEMPLATE_VERSION: &str = "prompt-v1";

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("insufficient-history: step {step} < lookback {lookback}")]
    InsufficientHistory { step: usize, lookback: usize },
    #[error("empty-universe")]
    EmptyUniverse,
    #[error("optimizer-failure: {0}")]
    OptimizerFailure(String),
    #[error("missing-cache-entry: {key}")]
    MissingCacheEntry { key: String },
    #[error("unparseable-response ({message}): {raw}")]
    UnparseableResponse { raw: String, message: String },
    #[error("cache io error: {0}")]
    CacheIo(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackCondition {
    TrueFeedback,
    Placebo,
    Hidden,
    Contrarian,
    #[default]
    None,
}

impl FeedbackCondition {
    pub const ALL: [FeedbackCondition; 5] = [
        FeedbackCondition::TrueFeedback,
        FeedbackCondition::Placebo,
        FeedbackCondition::Hidden,
        FeedbackCondition::Contrarian,
        FeedbackCondition::None,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeedbackCondition::TrueFeedback => "true_feedback",
            FeedbackCondition::Placebo => "placebo",
            FeedbackCondition::Hidden => "hidden",
            FeedbackCondition::Contrarian => "contrarian",
            FeedbackCondition::None => "none",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub step: usize,
    pub intended_weights: Weights,
    pub rationale: String,
    pub confidence: f64,
    pub directional_scores: Weights,
    pub feedback_condition: FeedbackCondition,
    pub cot_free: bool,
}

impl DecisionRecord {
    pub fn from_weights(step: usize, intended_weights: Weights) -> Self {
        Self { step, intended_weights, ..Self::default() }
    }

    /// Gross intended exposure `Σ|w|`.
    pub fn exposure(&self) -> f64 {
        self.intended_weights.values().map(|v| v.abs()).sum()
    }
}

// ---------------------------------------------------------------------------
// Signal analysts

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalMode {
    Momentum,
    MacroNews,
    Full,
}

impl SignalMode {
    pub fn name(self) -> &'static str {
        match self {
            SignalMode::Momentum => "momentum",
            SignalMode::MacroNews => "macro_news",
            SignalMode::Full => "full",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalConfig {
    pub lookback: usize,
    pub gross_cap: f64,
    /// Seed of the per-symbol sentiment series.
    pub macro_seed: u64,
    pub macro_persistence: f64,
}

impl Default for SignalConfig {
    fn default() -> Self {
        Self {
            lookback: MOMENTUM_LOOKBACK,
            gross_cap: DEFAULT_GROSS_CAP,
            macro_seed: 0,
            macro_persistence: MACRO_PERSISTENCE,
        }
    }
}

/// `tanh` of the trailing log return over `lookback`, in units of its own
/// volatility-scaled standard error.
pub fn momentum_score(closes: &[f64], step: usize, lookback: usize) -> f64 {
    let window = &closes[step - lookback..=step];
    let rets: Vec<f64> = window.windows(2).map(|w| (w[1] / w[0]).ln()).collect();
    let total: f64 = (closes[step] / closes[step - lookback]).ln();
    let sd = sample_std(&rets);
    if sd < 1e-12 {
        return if total.abs() < 1e-12 { 0.0 } else { total.signum() };
    }
    (total / (sd * (lookback as f64).sqrt())).tanh()
}

/// Seeded AR(1) sentiment series `x_t = φ x_{t-1} + sqrt(1-φ²) ε_t`, returned
/// as `tanh(x_step)`.
pub fn macro_score(seed: u64, symbol: &str, step: usize, persistence: f64) -> f64 {
    let mut r = rng::stream(rng::mix(seed, rng::fnv1a64(symbol.as_bytes())));
    let innov = (1.0 - persistence * persistence).sqrt();
    let mut x: f64 = StandardNormal.sample(&mut r);
    for _ in 0..step {
        let e: f64 = StandardNormal.sample(&mut r);
        x = persistence * x + innov * e;
    }
    x.tanh()
}

fn sample_std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Scale `scores` down (never up) so that `Σ|w| ≤ gross_cap`.
pub fn cap_gross(scores: &Weights, gross_cap: f64) -> Weights {
    let g: f64 = scores.values().map(|v| v.abs()).sum();
    let k = if g > gross_cap { gross_cap / g } else { 1.0 };
    scores.iter().map(|(s, v)| (s.clone(), v * k)).collect()
}

pub fn signal_weights(
    panel: &MarketPanel,
    step: usize,
    mode: SignalMode,
    cfg: &SignalConfig,
) -> Result<DecisionRecord, AgentError> {
    if panel.symbols.is_empty() {
        return Err(AgentError::EmptyUniverse);
    }
    if step < cfg.lookback {
        return Err(AgentError::InsufficientHistory { step, lookback: cfg.lookback });
    }
    let mut scores = Weights::new();
    let mut dominant = (0.0f64, 0.0f64);
    for (i, sym) in panel.symbols.iter().enumerate() {
        let mom = || momentum_score(&panel.closes(i), step, cfg.lookback);
        let mac = || macro_score(cfg.macro_seed, sym, step, cfg.macro_persistence);
        let s = match mode {
            SignalMode::Momentum => mom(),
            SignalMode::MacroNews => mac(),
            SignalMode::Full => {
                let (m, n) = (mom(), mac());
                dominant.0 += m.abs();
                dominant.1 += n.abs();
                0.5 * (m + n)
            }
        };
        scores.insert(sym.clone(), s);
    }
    let weights = cap_gross(&scores, cfg.gross_cap);
    let confidence = scores.values().map(|v| v.abs()).sum::<f64>() / scores.len() as f64;
    let signal = match mode {
        SignalMode::Full if dominant.0 >= dominant.1 => "momentum",
        SignalMode::Full => "macro/news sentiment",
        SignalMode::Momentum => "momentum",
        SignalMode::MacroNews => "macro/news sentiment",
    };
    let (top, top_score) = scores
        .iter()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then_with(|| b.0.cmp(a.0)))
        .map(|(s, v)| (s.clone(), *v))
        .unwrap_or_default();
    let rationale = format!(
        "Dominant signal is {signal}; strongest view {top} ({top_score:+.3}) over a {}-step lookback.",
        cfg.lookback
    );
    Ok(DecisionRecord {
        step,
        intended_weights: weights,
        rationale,
        confidence: confidence.clamp(0.0, 1.0),
        directional_scores: scores,
        feedback_condition: FeedbackCondition::None,
        cot_free: false,
    })
}

// ---------------------------------------------------------------------------
// Baseline

/// Equal weight `1/n` across `symbols`.
pub fn buy_hold_equal(symbols: &[String]) -> Result<DecisionRecord, AgentError> {
    if symbols.is_empty() {
        return Err(AgentError::EmptyUniverse);
    }
    let w = 1.0 / symbols.len() as f64;
    Ok(DecisionRecord {
        step: 0,
        intended_weights: symbols.iter().map(|s| (s.clone(), w)).collect(),
        rationale: "Equal-weight buy-and-hold allocation.".into(),
        confidence: 1.0,
        ..DecisionRecord::default()
    })
}

/// After the initial allocation a buy-and-hold book intends exactly its
/// drifted holdings.
pub fn buy_hold_continue(step: usize, current: &Weights) -> DecisionRecord {
    DecisionRecord {
        step,
        intended_weights: current.clone(),
        rationale: "Holding drifted buy-and-hold weights; no rebalancing.".into(),
        confidence: 1.0,
        ..DecisionRecord::default()
    }
}

// ---------------------------------------------------------------------------
// Risk memory and overlay

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepEvents {
    pub step: usize,
    pub clipped: u64,
    pub blocked: u64,
    pub violations: u64,
    pub rejected: u64,
    pub pending: u64,
    pub slippage: f64,
}

impl StepEvents {
    /// Events that count against the overlay (clips alone are routine).
    pub fn is_failure(&self) -> bool {
        self.blocked + self.violations + self.rejected > 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskMemory {
    pub window: usize,
    pub clipped_total: u64,
    pub blocked_total: u64,
    pub violations_total: u64,
    pub rejected_total: u64,
    pub pending_total: u64,
    pub slippage_total: f64,
    pub equity: f64,
    pub recent_failures: VecDeque<StepEvents>,
}

impl Default for RiskMemory {
    fn default() -> Self {
        Self::new(MEMORY_WINDOW)
    }
}

impl RiskMemory {
    pub fn new(window: usize) -> Self {
        Self {
            window,
            clipped_total: 0,
            blocked_total: 0,
            violations_total: 0,
            rejected_total: 0,
            pending_total: 0,
            slippage_total: 0.0,
            equity: 0.0,
            recent_failures: VecDeque::new(),
        }
    }

    /// Fold one step's audit events into the totals. Returns the memory event
    /// strings that describe what was recorded.
    pub fn record(&mut self, ev: StepEvents, equity: f64) -> Vec<String> {
        self.clipped_total += ev.clipped;
        self.blocked_total += ev.blocked;
        self.violations_total += ev.violations;
        self.rejected_total += ev.rejected;
        self.pending_total += ev.pending;
        self.slippage_total += ev.slippage;
        self.equity = equity;
        let mut out = Vec::new();
        if ev.is_failure() {
            out.push(format!(
                "failure@{}: blocked={} violations={} rejected={}",
                ev.step, ev.blocked, ev.violations, ev.rejected
            ));
            self.recent_failures.push_back(ev);
            while self.recent_failures.len() > self.window {
                self.recent_failures.pop_front();
            }
        }
        out
    }

    pub fn failures_since(&self, step: usize) -> usize {
        self.recent_failures.iter().filter(|e| e.step >= step).count()
    }
}

/// Recent equity path used by the overlay, oldest first.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RecentPerformance {
    pub equity: Vec<f64>,
}

impl RecentPerformance {
    pub fn returns(&self) -> Vec<f64> {
        self.equity.windows(2).map(|w| w[1] / w[0] - 1.0).collect()
    }

    /// Drawdown of the last point from the window peak (≤ 0).
    pub fn drawdown(&self) -> f64 {
        let peak = self.equity.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        match self.equity.last() {
            Some(last) if peak > 0.0 => last / peak - 1.0,
            _ => 0.0,
        }
    }
}

/// Drawdown from the recent peak beyond which the overlay de-risks.
pub const OVERLAY_DRAWDOWN_TRIGGER: f64 = -0.01;

/// Exposure multiplier from recent memory and performance.
pub fn overlay_factor(step: usize, memory: &RiskMemory, perf: &RecentPerformance) -> (f64, String) {
    let since = step.saturating_sub(OVERLAY_LOOKBACK);
    let failures = memory.failures_since(since);
    let dd = perf.drawdown();
    let events = failures + usize::from(dd < OVERLAY_DRAWDOWN_TRIGGER);
    if events > 0 {
        let f = (1.0 - 0.15 * events as f64).max(OVERLAY_F_MIN);
        return (f, format!("de-risk x{f:.2}: {failures} recent failure step(s), drawdown {dd:.4}"));
    }
    let rets = perf.returns();
    if rets.len() >= OVERLAY_LOOKBACK && rets.iter().all(|r| *r >= 0.0) && rets.iter().any(|r| *r > 0.0) {
        return (OVERLAY_F_MAX, format!("re-risk x{OVERLAY_F_MAX:.2}: stable positive recent window"));
    }
    (1.0, String::new())
}

pub fn memory_overlay(
    decision: &DecisionRecord,
    memory: &RiskMemory,
    perf: &RecentPerformance,
) -> DecisionRecord {
    let (f, reason) = overlay_factor(decision.step, memory, perf);
    let mut out = decision.clone();
    if f == 1.0 {
        return out;
    }
    out.intended_weights.values_mut().for_each(|v| *v *= f);
    if !out.cot_free {
        if !out.rationale.is_empty() {
            out.rationale.push(' ');
        }
        let _ = write!(out.rationale, "Memory overlay: {reason}.");
    }
    out
}

// ---------------------------------------------------------------------------
// Minimum variance

/// Long-only minimum-variance weights for covariance `cov` with ridge
/// `1e-4·trace/n`, negative weights clipped and a per-name cap enforced by
/// water-filling.
pub fn min_variance_weights(cov: &DMatrix<f64>, per_name_cap: f64) -> Result<Vec<f64>, AgentError> {
    let n = cov.nrows();
    if n == 0 {
        return Err(AgentError::EmptyUniverse);
    }
    if per_name_cap * (n as f64) < 1.0 - 1e-12 {
        return Err(AgentError::OptimizerFailure(format!(
            "cap {per_name_cap} infeasible for {n} names"
        )));
    }
    let lambda = 1e-4 * cov.trace() / n as f64;
    let reg = cov + DMatrix::identity(n, n) * lambda;
    let chol = reg
        .cholesky()
        .ok_or_else(|| AgentError::OptimizerFailure("covariance not positive definite after ridge".into()))?;
    let raw = chol.solve(&DVector::from_element(n, 1.0));
    let mut w: Vec<f64> = raw.iter().map(|v| v.max(0.0)).collect();
    let total: f64 = w.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(AgentError::OptimizerFailure("no positive minimum-variance weight".into()));
    }
    w.iter_mut().for_each(|v| *v /= total);
    water_fill(&mut w, per_name_cap);
    Ok(w)
}

/// Cap each weight at `cap` and redistribute the excess proportionally over
/// uncapped names until feasible. Weights must sum to 1.
pub fn water_fill(w: &mut [f64], cap: f64) {
    let n = w.len();
    let mut capped = vec![false; n];
    for _ in 0..=n {
        let over: Vec<usize> = (0..n).filter(|&i| !capped[i] && w[i] > cap).collect();
        if over.is_empty() {
            break;
        }
        for &i in &over {
            capped[i] = true;
            w[i] = cap;
        }
        let fixed: f64 = (0..n).filter(|&i| capped[i]).map(|i| w[i]).sum();
        let free: f64 = (0..n).filter(|&i| !capped[i]).map(|i| w[i]).sum();
        let remaining = 1.0 - fixed;
        let free_count = capped.iter().filter(|c| !**c).count();
        for i in (0..n).filter(|&i| !capped[i]) {
            w[i] = if free > 0.0 { w[i] * remaining / free } else { remaining / free_count as f64 };
        }
    }
}

pub fn sample_covariance(returns: &[Vec<f64>]) -> DMatrix<f64> {
    let n = returns.len();
    let t = returns.first().map_or(0, Vec::len);
    let means: Vec<f64> = returns.iter().map(|r| r.iter().sum::<f64>() / t as f64).collect();
    DMatrix::from_fn(n, n, |i, j| {
        (0..t).map(|k| (returns[i][k] - means[i]) * (returns[j][k] - means[j])).sum::<f64>()
            / (t as f64 - 1.0)
    })
}

pub fn markowitz_weights(
    panel: &MarketPanel,
    step: usize,
    window: usize,
    per_name_cap: f64,
) -> Result<DecisionRecord, AgentError> {
    if panel.symbols.is_empty() {
        return Err(AgentError::EmptyUniverse);
    }
    let start = step.saturating_sub(window);
    if step < start + 2 {
        return Err(AgentError::InsufficientHistory { step, lookback: 2 });
    }
    let returns: Vec<Vec<f64>> = (0..panel.n_symbols())
        .map(|i| panel.closes(i)[start..=step].windows(2).map(|w| w[1] / w[0] - 1.0).collect())
        .collect();
    let w = min_variance_weights(&sample_covariance(&returns), per_name_cap)?;
    Ok(DecisionRecord {
        step,
        intended_weights: panel.symbols.iter().cloned().zip(w).collect(),
        rationale: format!(
            "Rolling minimum-variance allocation over {} returns, single-name cap {per_name_cap:.3}.",
            step - start
        ),
        confidence: 1.0,
        ..DecisionRecord::default()
    })
}

// ---------------------------------------------------------------------------
// Feedback block

const FEEDBACK_HEADER: &str = "[risk feedback]";

fn push_kv(out: &mut String, key: &str, value: impl std::fmt::Display) {
    let _ = writeln!(out, "{key}: {value}");
}

/// Deterministic counterfactual value in `0..range` keyed by step and field,
/// never equal to `truth`.
fn placebo_count(step: usize, key: &str, range: u64, truth: u64) -> u64 {
    let h = rng::mix(rng::fnv1a64(key.as_bytes()), step as u64);
    let v = h % range;
    if v == truth { v + 1 } else { v }
}

fn placebo_unit(step: usize, key: &str) -> f64 {
    let h = rng::mix(rng::fnv1a64(key.as_bytes()), step as u64);
    (h >> 11) as f64 / (1u64 << 53) as f64
}

pub fn build_feedback_block(
    memory: &RiskMemory,
    last_report: Option<&RiskReport>,
    condition: FeedbackCondition,
    step: usize,
) -> String {
    let mut out = String::new();
    match condition {
        FeedbackCondition::Hidden | FeedbackCondition::None => {}
        FeedbackCondition::TrueFeedback => {
            out.push_str(FEEDBACK_HEADER);
            out.push('\n');
            push_kv(&mut out, "clipped", memory.clipped_total);
            push_kv(&mut out, "blocked", memory.blocked_total);
            push_kv(&mut out, "violations", memory.violations_total);
            push_kv(&mut out, "rejected", memory.rejected_total);
            push_kv(&mut out, "pending", memory.pending_total);
            push_kv(&mut out, "slippage", format!("{:.2}", memory.slippage_total));
            push_kv(&mut out, "equity", format!("{:.2}", memory.equity));
            if let Some(r) = last_report {
                push_kv(&mut out, "last_calibration_score", format!("{:.6}", r.calibration_score));
            }
        }
        FeedbackCondition::Placebo => {
            out.push_str(FEEDBACK_HEADER);
            out.push('\n');
            push_kv(&mut out, "clipped", placebo_count(step, "clipped", 20, memory.clipped_total));
            push_kv(&mut out, "blocked", placebo_count(step, "blocked", 5, memory.blocked_total));
            push_kv(&mut out, "violations", placebo_count(step, "violations", 5, memory.violations_total));
            push_kv(&mut out, "rejected", placebo_count(step, "rejected", 10, memory.rejected_total));
            push_kv(&mut out, "pending", placebo_count(step, "pending", 10, memory.pending_total));
            let hi = 2.0 * memory.slippage_total.max(1.0);
            let mut slip = placebo_unit(step, "slippage") * hi;
            if format!("{slip:.2}") == format!("{:.2}", memory.slippage_total) {
                slip += 1.0;
            }
            push_kv(&mut out, "slippage", format!("{slip:.2}"));
            push_kv(&mut out, "equity", format!("{:.2}", memory.equity));
            if last_report.is_some() {
                push_kv(&mut out, "last_calibration_score", format!("{:.6}", placebo_unit(step, "calibration")));
            }
        }
        FeedbackCondition::Contrarian => {
            out.push_str(FEEDBACK_HEADER);
            out.push('\n');
            push_kv(&mut out, "status", "SEVERE RISK BREACH");
            push_kv(&mut out, "clipped", 48);
            push_kv(&mut out, "blocked", 12);
            push_kv(&mut out, "violations", 9);
            push_kv(&mut out, "rejected", 25);
            push_kv(&mut out, "pending", 17);
            push_kv(&mut out, "slippage", "250000.00");
            push_kv(&mut out, "last_calibration_score", "0.050000");
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Cached LLM analyst

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseMode {
    RationaleJson,
    WeightsOnlyJson,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheMode {
    /// A miss is an error.
    #[default]
    Strict,
    /// A miss falls back to the deterministic full-signal analyst.
    Fallback,
    /// A miss is answered by the synthetic responder and stored.
    Record,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub key: String,
    pub model: String,
    pub prompt_sha: String,
    pub response: String,
    pub created: String,
}

pub fn cache_key(model: &str, prompt: &str) -> String {
    format!("{model}:{}", rng::fnv1a64_hex(prompt.as_bytes()))
}

/// Read-only during runs; `insert` is used only when recording.
#[derive(Clone, Debug, Default)]
pub struct LlmCache {
    pub model: String,
    entries: HashMap<String, CacheRecord>,
    /// Insertion order, so written caches are byte-stable.
    order: Vec<String>,
}

impl LlmCache {
    pub fn new(model: &str) -> Self {
        Self { model: model.to_string(), ..Self::default() }
    }

    pub fn open(path: &Path, model: &str) -> Result<Self, AgentError> {
        let mut cache = Self::new(model);
        if !path.exists() {
            return Ok(cache);
        }
        let file = std::fs::File::open(path).map_err(|e| AgentError::CacheIo(e.to_string()))?;
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| AgentError::CacheIo(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: CacheRecord = serde_json::from_str(&line)
                .map_err(|e| AgentError::CacheIo(format!("line {}: {e}", i + 1)))?;
            cache.put(rec);
        }
        Ok(cache)
    }

    fn put(&mut self, rec: CacheRecord) {
        if !self.entries.contains_key(&rec.key) {
            self.order.push(rec.key.clone());
        }
        self.entries.insert(rec.key.clone(), rec);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, prompt: &str) -> Option<&CacheRecord> {
        self.entries.get(&cache_key(&self.model, prompt))
    }

    pub fn insert(&mut self, prompt: &str, response: &str) {
        self.put(CacheRecord {
            key: cache_key(&self.model, prompt),
            model: self.model.clone(),
            prompt_sha: rng::sha256_hex(prompt.as_bytes()),
            response: response.to_string(),
            created: "1970-01-01T00:00:00Z".into(),
        });
    }

    pub fn merge(&mut self, other: &LlmCache) {
        for k in &other.order {
            self.put(other.entries[k].clone());
        }
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for k in &self.order {
            out.push_str(&serde_json::to_string(&self.entries[k]).expect("cache record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), AgentError> {
        let mut f = std::fs::File::create(path).map_err(|e| AgentError::CacheIo(e.to_string()))?;
        f.write_all(self.to_jsonl().as_bytes()).map_err(|e| AgentError::CacheIo(e.to_string()))
    }
}

#[derive(Deserialize)]
struct RationaleResponse {
    weights: Weights,
    #[serde(default)]
    rationale: String,
    #[serde(default = "half")]
    confidence: f64,
    #[serde(default)]
    directional_scores: Weights,
    #[serde(default)]
    risk_note: Option<String>,
}

fn half() -> f64 {
    0.5
}

#[derive(Deserialize)]
struct WeightsOnlyResponse {
    weights: Weights,
}

pub fn parse_response(raw: &str, mode: ParseMode, step: usize) -> Result<DecisionRecord, AgentError> {
    let bad = |e: serde_json::Error| AgentError::UnparseableResponse { raw: raw.to_string(), message: e.to_string() };
    let d = match mode {
        ParseMode::RationaleJson => {
            let r: RationaleResponse = serde_json::from_str(raw).map_err(bad)?;
            let mut rationale = r.rationale;
            if let Some(note) = r.risk_note.filter(|n| !n.is_empty()) {
                let _ = write!(rationale, " Risk note: {note}");
            }
            DecisionRecord {
                step,
                intended_weights: r.weights,
                rationale,
                confidence: r.confidence.clamp(0.0, 1.0),
                directional_scores: r.directional_scores,
                ..DecisionRecord::default()
            }
        }
        ParseMode::WeightsOnlyJson => {
            let r: WeightsOnlyResponse = serde_json::from_str(raw).map_err(bad)?;
            DecisionRecord { step, intended_weights: r.weights, cot_free: true, ..DecisionRecord::default() }
        }
    };
    if let Some((s, _)) = d.intended_weights.iter().find(|(_, v)| !v.is_finite()) {
        return Err(AgentError::UnparseableResponse {
            raw: raw.to_string(),
            message: format!("non-finite weight for {s}"),
        });
    }
    Ok(d)
}

pub fn cached_llm_decide(
    prompt: &str,
    cache: &LlmCache,
    parse_mode: ParseMode,
    step: usize,
) -> Result<DecisionRecord, AgentError> {
    let rec = cache
        .get(prompt)
        .ok_or_else(|| AgentError::MissingCacheEntry { key: cache_key(&cache.model, prompt) })?;
    parse_response(&rec.response, parse_mode, step)
}

/// Prompt for the LLM analyst: market snapshot, optional feedback block and a
/// response-format instruction.
pub fn build_prompt(panel: &MarketPanel, step: usize, feedback_block: &str, parse_mode: ParseMode) -> String {
    let mut p = String::new();
    let _ = writeln!(p, "template: {PROMPT_TEMPLATE_VERSION}");
    let _ = writeln!(p, "step: {step}");
    let _ = writeln!(p, "[market]");
    for (i, sym) in panel.symbols.iter().enumerate() {
        let b = &panel.bars[i][step];
        let back = step.saturating_sub(MOMENTUM_LOOKBACK);
        let ret = b.close / panel.bars[i][back].close - 1.0;
        let _ = writeln!(p, "{sym}: close={:.4} volume={:.0} ret_{}={:+.4}", b.close, b.volume, step - back, ret);
    }
    if !feedback_block.is_empty() {
        p.push_str(feedback_block);
    }
    p.push_str(match parse_mode {
        ParseMode::RationaleJson => {
            "Respond with JSON {\"weights\", \"rationale\", \"confidence\", \"directional_scores\", \"risk_note\"}.\n"
        }
        ParseMode::WeightsOnlyJson => "Return only JSON target weights: {\"weights\": {...}}.\n",
    });
    p
}

/// Deterministic stand-in for a model: answers with the full-signal analyst's
/// decision, shrunk when the prompt carries a severe or non-trivial feedback
/// block.
pub fn synthetic_response(
    panel: &MarketPanel,
    step: usize,
    prompt: &str,
    parse_mode: ParseMode,
    cfg: &SignalConfig,
) -> String {
    let base = if step >= cfg.lookback {
        signal_weights(panel, step, SignalMode::Full, cfg).ok()
    } else {
        None
    };
    let (mut weights, scores, rationale) = match base {
        Some(d) => (d.intended_weights, d.directional_scores, d.rationale),
        None => (Weights::new(), Weights::new(), "Insufficient history; staying flat.".to_string()),
    };
    let shrink = if prompt.contains("SEVERE RISK BREACH") {
        0.25
    } else if prompt.contains(FEEDBACK_HEADER) {
        0.9
    } else {
        1.0
    };
    weights.values_mut().for_each(|v| *v = (*v * shrink * 1e6).round() / 1e6);
    let json = match parse_mode {
        ParseMode::WeightsOnlyJson => serde_json::json!({ "weights": weights }),
        ParseMode::RationaleJson => serde_json::json!({
            "weights": weights,
            "rationale": rationale,
            "confidence": 0.6,
            "directional_scores": scores,
            "risk_note": if shrink < 1.0 { "exposure reduced after feedback" } else { "" },
        }),
    };
    json.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthmarket::{Bar, PanelManifest};
    use proptest::prelude::*;

    fn panel_from_closes(series: &[(&str, Vec<f64>)]) -> MarketPanel {
        MarketPanel {
            symbols: series.iter().map(|(s, _)| s.to_string()).collect(),
            bars: series
                .iter()
                .map(|(_, c)| {
                    c.iter()
                        .enumerate()
                        .map(|(t, &p)| Bar { step: t, open: p, high: p, low: p, close: p, volume: 1e6 })
                        .collect()
                })
                .collect(),
            manifest: PanelManifest {
                seed: None,
                source: "test".into(),
                generated_at: String::new(),
                content_hash: None,
                notes: vec![],
            },
        }
    }

    #[test]
    fn rising_close_gets_positive_momentum_weight() {
        let p = panel_from_closes(&[("A", (0..30).map(|t| 100.0 + t as f64 + (t % 3) as f64 * 0.1).collect())]);
        let d = signal_weights(&p, 20, SignalMode::Momentum, &SignalConfig::default()).unwrap();
        assert!(d.intended_weights["A"] > 0.0);
    }

    #[test]
    fn flat_prices_give_zero_momentum() {
        let p = panel_from_closes(&[("A", vec![50.0; 30]), ("B", vec![7.0; 30])]);
        let d = signal_weights(&p, 20, SignalMode::Momentum, &SignalConfig::default()).unwrap();
        assert!(d.intended_weights.values().all(|v| *v == 0.0));
    }

    #[test]
    fn insufficient_history() {
        let p = panel_from_closes(&[("A", vec![50.0; 30])]);
        assert!(matches!(
            signal_weights(&p, 3, SignalMode::Full, &SignalConfig::default()),
            Err(AgentError::InsufficientHistory { step: 3, lookback: 16 })
        ));
    }

    #[test]
    fn full_mode_is_mean_of_components() {
        let a: Vec<f64> = (0..25).map(|t| 100.0 * (1.0 + 0.01 * ((t * 7 % 5) as f64 - 1.5))).collect();
        let b: Vec<f64> = (0..25).map(|t| 20.0 - 0.2 * t as f64 + 0.05 * ((t % 2) as f64)).collect();
        let p = panel_from_closes(&[("A", a.clone()), ("B", b.clone())]);
        let cfg = SignalConfig { gross_cap: 10.0, macro_seed: 5, ..SignalConfig::default() };
        let d = signal_weights(&p, 20, SignalMode::Full, &cfg).unwrap();
        for (sym, closes) in [("A", &a), ("B", &b)] {
            // brute force: rebuild both components from scratch
            let lr: Vec<f64> = (5..=20).map(|t| (closes[t] / closes[t - 1]).ln()).collect();
            let mean = lr.iter().sum::<f64>() / 16.0;
            let sd = (lr.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 15.0).sqrt();
            let mom = ((closes[20] / closes[4]).ln() / (sd * 4.0)).tanh();
            let mut r = rng::stream(rng::mix(5, rng::fnv1a64(sym.as_bytes())));
            let mut x: f64 = StandardNormal.sample(&mut r);
            for _ in 0..20 {
                let e: f64 = StandardNormal.sample(&mut r);
                x = 0.95 * x + (1.0f64 - 0.9025).sqrt() * e;
            }
            let expect = 0.5 * (mom + x.tanh());
            assert!((d.intended_weights[sym] - expect).abs() < 1e-12, "{sym}");
        }
    }

    #[test]
    fn gross_cap_applies() {
        let p = panel_from_closes(&[
            ("A", (0..30).map(|t| 100.0 * 1.01f64.powi(t) * (1.0 + 0.001 * (t % 2) as f64)).collect()),
            ("B", (0..30).map(|t| 100.0 * 1.02f64.powi(t) * (1.0 + 0.001 * (t % 3) as f64)).collect()),
        ]);
        let cfg = SignalConfig { gross_cap: 1.0, ..SignalConfig::default() };
        let d = signal_weights(&p, 25, SignalMode::Momentum, &cfg).unwrap();
        assert!(d.exposure() <= 1.0 + 1e-12);
    }

    #[test]
    fn baselines() {
        let three: Vec<String> = ["A", "B", "C"].iter().map(|s| s.to_string()).collect();
        let d = buy_hold_equal(&three).unwrap();
        assert!(d.intended_weights.values().all(|v| (*v - 1.0 / 3.0).abs() < 1e-15));
        assert_eq!(buy_hold_equal(&["X".to_string()]).unwrap().intended_weights["X"], 1.0);
        let many: Vec<String> = (0..51).map(|i| format!("S{i}")).collect();
        let d = buy_hold_equal(&many).unwrap();
        let h: f64 = d.intended_weights.values().map(|v| v * v).sum();
        assert!((h - 1.0 / 51.0).abs() < 1e-12);
        assert!(buy_hold_equal(&[]).is_err());
    }

    fn decision(pairs: &[(&str, f64)]) -> DecisionRecord {
        DecisionRecord::from_weights(20, pairs.iter().map(|(s, v)| (s.to_string(), *v)).collect())
    }

    #[test]
    fn overlay_branches() {
        let d = decision(&[("A", 0.4), ("B", -0.3)]);
        let flat = RecentPerformance { equity: vec![100.0; 9] };
        let mem = RiskMemory::default();
        assert_eq!(memory_overlay(&d, &mem, &flat), d);

        let mut rejected = RiskMemory::default();
        rejected.record(StepEvents { step: 18, rejected: 2, ..StepEvents::default() }, 100.0);
        let o = memory_overlay(&d, &rejected, &flat);
        assert!(o.exposure() < d.exposure());
        assert!(o.rationale.contains("Memory overlay"));

        let rising = RecentPerformance { equity: (0..9).map(|i| 100.0 + i as f64).collect() };
        let o = memory_overlay(&d, &mem, &rising);
        assert!(o.exposure() > d.exposure());
        assert!(o.exposure() <= d.exposure() * 1.1 + 1e-12);
    }

    #[test]
    fn memory_window_bounds_failures() {
        let mut m = RiskMemory::new(4);
        for s in 0..10 {
            m.record(StepEvents { step: s, violations: 1, slippage: 1.5, ..StepEvents::default() }, 1.0);
        }
        assert_eq!(m.recent_failures.len(), 4);
        assert_eq!(m.violations_total, 10);
        assert!((m.slippage_total - 15.0).abs() < 1e-12);
    }

    #[test]
    fn two_uncorrelated_assets() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 4.0]);
        let w = min_variance_weights(&cov, 1.0).unwrap();
        assert!((w[0] - 0.8).abs() < 1e-4 && (w[1] - 0.2).abs() < 1e-4);
    }

    #[test]
    fn identical_assets_equal_weights() {
        let cov = DMatrix::from_fn(4, 4, |i, j| if i == j { 2.0 } else { 0.5 });
        let w = min_variance_weights(&cov, 1.0).unwrap();
        assert!(w.iter().all(|v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn eight_percent_cap_over_51_names() {
        let syms: Vec<String> = (0..51).map(|i| format!("S{i:02}")).collect();
        let r = crate::synthmarket::RegimeSpec::new(
            crate::synthmarket::VolatilityState::Medium,
            crate::synthmarket::TailState::Gaussian,
            crate::synthmarket::TrendSign::Up,
            3,
        );
        let p = crate::synthmarket::generate_market(&r, &syms, 40).unwrap();
        let d = markowitz_weights(&p, 30, 20, 0.08).unwrap();
        let sum: f64 = d.intended_weights.values().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!(d.intended_weights.values().all(|v| *v >= 0.0 && *v <= 0.08 + 1e-9));
        assert!(matches!(markowitz_weights(&p, 30, 20, 0.01), Err(AgentError::OptimizerFailure(_))));
    }

    #[test]
    fn feedback_conditions() {
        let mut m = RiskMemory::default();
        m.clipped_total = 3;
        m.blocked_total = 1;
        assert_eq!(build_feedback_block(&m, None, FeedbackCondition::Hidden, 4), "");
        let t = build_feedback_block(&m, None, FeedbackCondition::TrueFeedback, 4);
        assert!(t.contains("clipped: 3\n") && t.contains("blocked: 1\n"));
        let p1 = build_feedback_block(&m, None, FeedbackCondition::Placebo, 4);
        assert_eq!(p1, build_feedback_block(&m, None, FeedbackCondition::Placebo, 4));
        assert_ne!(p1, t);
        let c = build_feedback_block(&m, None, FeedbackCondition::Contrarian, 4);
        assert_eq!(c, build_feedback_block(&RiskMemory::default(), None, FeedbackCondition::Contrarian, 99));
    }

    #[test]
    fn cache_round_trip_and_errors() {
        let mut cache = LlmCache::new("m1");
        cache.insert("p1", r#"{"weights":{"A":0.5},"rationale":"momentum","confidence":0.7}"#);
        cache.insert("p2", r#"{"weights":{"A":0.2,"B":-0.1}}"#);
        cache.insert("p3", "{not json");
        let d = cached_llm_decide("p1", &cache, ParseMode::RationaleJson, 3).unwrap();
        assert_eq!(d.intended_weights["A"], 0.5);
        assert_eq!(d.rationale, "momentum");
        assert_eq!(d.confidence, 0.7);
        let d = cached_llm_decide("p2", &cache, ParseMode::WeightsOnlyJson, 3).unwrap();
        assert!(d.cot_free && d.rationale.is_empty());
        assert_eq!(d.intended_weights["B"], -0.1);
        match cached_llm_decide("p3", &cache, ParseMode::RationaleJson, 3) {
            Err(AgentError::UnparseableResponse { raw, .. }) => assert_eq!(raw, "{not json"),
            other => panic!("{other:?}"),
        }
        match cached_llm_decide("p4", &cache, ParseMode::RationaleJson, 3) {
            Err(AgentError::MissingCacheEntry { key }) => assert_eq!(key, cache_key("m1", "p4")),
            other => panic!("{other:?}"),
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        cache.save(&path).unwrap();
        let again = LlmCache::open(&path, "m1").unwrap();
        assert_eq!(again.len(), 3);
        assert_eq!(again.to_jsonl(), cache.to_jsonl());
        assert!(cache_key("m1", "p1").starts_with("m1:"));
        assert_eq!(cache_key("m1", "p1").len(), 3 + 16);
    }

    proptest! {
        #[test]
        fn overlay_preserves_signs(ws in proptest::collection::vec(-1.0f64..1.0, 1..6), fails in 0u64..4, up in proptest::bool::ANY) {
            let d = DecisionRecord::from_weights(30, ws.iter().enumerate().map(|(i, v)| (format!("S{i}"), *v)).collect());
            let mut m = RiskMemory::default();
            m.record(StepEvents { step: 28, rejected: fails, ..StepEvents::default() }, 1.0);
            let perf = RecentPerformance { equity: (0..9).map(|i| if up { 100.0 + i as f64 } else { 100.0 - i as f64 }).collect() };
            let o = memory_overlay(&d, &m, &perf);
            for (s, v) in &d.intended_weights {
                let nv = o.intended_weights[s];
                prop_assert!(nv == 0.0 && *v == 0.0 || nv.signum() == v.signum());
                prop_assert!(nv.abs() <= v.abs() * OVERLAY_F_MAX + 1e-12);
                prop_assert!(nv.abs() >= v.abs() * OVERLAY_F_MIN - 1e-12);
            }
        }

        #[test]
        fn placebo_never_matches_nonzero_truth(step in 0usize..10_000, c in 0u64..30, b in 0u64..6, r in 0u64..12, slip in 0.0f64..1e5) {
            let mut m = RiskMemory::default();
            m.clipped_total = c;
            m.blocked_total = b;
            m.rejected_total = r;
            m.slippage_total = slip;
            let t = build_feedback_block(&m, None, FeedbackCondition::TrueFeedback, step);
            let p = build_feedback_block(&m, None, FeedbackCondition::Placebo, step);
            prop_assert_ne!(t, p);
        }

        #[test]
        fn min_variance_feasible(vars in proptest::collection::vec(0.1f64..5.0, 3..12), rho in -0.05f64..0.5, cap in 0.2f64..1.0) {
            let n = vars.len();
            let cap = cap.max(1.0 / n as f64);
            let cov = DMatrix::from_fn(n, n, |i, j| if i == j { vars[i] } else { rho * (vars[i] * vars[j]).sqrt() });
            let w = min_variance_weights(&cov, cap).unwrap();
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(w.iter().all(|v| *v >= 0.0 && *v <= cap + 1e-9));
        }
    }
}
