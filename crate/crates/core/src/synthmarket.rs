//! Seeded synthetic OHLCV panels over heterogeneous volatility, tail, jump and
//! trend regimes.
//!
//! Per-symbol log returns follow `r_t = mu(trend) + sigma(vol) * z_t + J_t`,
//! where `z_t` is a unit-variance Gaussian or Student-t shock and `J_t` is a
//! compound jump that is only active in the jump tail states. The open of each
//! bar is the previous close, high/low are widened around the body by a seeded
//! half-spread, and volumes are lognormal.

use std::fmt;
use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

/// Timestamp recorded in synthetic manifests. Synthetic panels carry no wall
/// clock so that regeneration is byte-identical.
pub const SYNTHETIC_TIMESTAMP: &str = "1970-01-01T00:00:00Z";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid-horizon: need at least 2 steps, got {0}")]
    InvalidHorizon(usize),
    #[error("invalid-regime: {0}")]
    InvalidRegime(String),
    #[error("empty-universe: at least one symbol is required")]
    EmptyUniverse,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VolatilityState {
    Calm,
    Low,
    Medium,
    High,
    Crisis,
}

impl VolatilityState {
    pub const ALL: [VolatilityState; 5] = [
        VolatilityState::Calm,
        VolatilityState::Low,
        VolatilityState::Medium,
        VolatilityState::High,
        VolatilityState::Crisis,
    ];

    fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            VolatilityState::Calm => "calm",
            VolatilityState::Low => "low",
            VolatilityState::Medium => "medium",
            VolatilityState::High => "high",
            VolatilityState::Crisis => "crisis",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailState {
    Gaussian,
    StudentT,
    Jump,
    StudentTJump,
}

impl TailState {
    pub const ALL: [TailState; 4] = [
        TailState::Gaussian,
        TailState::StudentT,
        TailState::Jump,
        TailState::StudentTJump,
    ];

    pub fn has_jumps(self) -> bool {
        matches!(self, TailState::Jump | TailState::StudentTJump)
    }

    pub fn is_student_t(self) -> bool {
        matches!(self, TailState::StudentT | TailState::StudentTJump)
    }

    pub fn name(self) -> &'static str {
        match self {
            TailState::Gaussian => "gaussian",
            TailState::StudentT => "student_t",
            TailState::Jump => "jump",
            TailState::StudentTJump => "student_t_jump",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrendSign {
    Up,
    Down,
}

impl TrendSign {
    pub const ALL: [TrendSign; 2] = [TrendSign::Up, TrendSign::Down];

    pub fn sign(self) -> f64 {
        match self {
            TrendSign::Up => 1.0,
            TrendSign::Down => -1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TrendSign::Up => "up",
            TrendSign::Down => "down",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RegimeSpec {
    pub volatility_state: VolatilityState,
    pub tail_state: TailState,
    pub trend_sign: TrendSign,
    pub seed: u64,
}

impl RegimeSpec {
    pub fn new(vol: VolatilityState, tail: TailState, trend: TrendSign, seed: u64) -> Self {
        Self { volatility_state: vol, tail_state: tail, trend_sign: trend, seed }
    }

    /// Short label without the seed, e.g. `crisis/student_t_jump/down`.
    pub fn label(&self) -> String {
        format!(
            "{}/{}/{}",
            self.volatility_state.name(),
            self.tail_state.name(),
            self.trend_sign.name()
        )
    }
}

impl fmt::Display for RegimeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.label(), self.seed)
    }
}

/// Generator coefficients. The defaults are the values every experiment uses;
/// the struct exists so tests can probe invalid settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    /// Per-step log-return volatility for calm, low, medium, high, crisis.
    pub sigma: [f64; 5],
    /// Absolute per-step drift; the trend sign picks the direction.
    pub drift: f64,
    pub student_t_dof: f64,
    pub jump_probability: f64,
    /// Jump size standard deviation as a multiple of sigma.
    pub jump_scale: f64,
    pub volume_log_mean: f64,
    pub volume_log_sd: f64,
    /// AR(1) coefficient of standardized log volume; the marginal stays
    /// lognormal, so this only controls how liquidity clusters in time.
    pub volume_persistence: f64,
    pub start_price: f64,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        Self {
            sigma: [0.004, 0.008, 0.015, 0.03, 0.06],
            drift: 0.0005,
            student_t_dof: 4.0,
            jump_probability: 0.02,
            jump_scale: 4.0,
            volume_log_mean: 1.0e6_f64.ln(),
            volume_log_sd: 0.5,
            volume_persistence: 0.0,
            start_price: 100.0,
        }
    }
}

impl GeneratorParams {
    pub fn sigma_for(&self, state: VolatilityState) -> f64 {
        self.sigma[state.index()]
    }

    pub fn mean_for(&self, trend: TrendSign) -> f64 {
        trend.sign() * self.drift
    }

    fn validate(&self) -> Result<(), SynthError> {
        for (i, s) in self.sigma.iter().enumerate() {
            if !(s.is_finite() && *s > 0.0) {
                return Err(SynthError::InvalidRegime(format!(
                    "volatility scale for {} must be positive, got {s}",
                    VolatilityState::ALL[i].name()
                )));
            }
        }
        if self.sigma.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SynthError::InvalidRegime(
                "volatility scales must be strictly increasing from calm to crisis".into(),
            ));
        }
        if self.student_t_dof <= 2.0 {
            return Err(SynthError::InvalidRegime(format!(
                "student-t degrees of freedom must exceed 2, got {}",
                self.student_t_dof
            )));
        }
        if !(0.0..=1.0).contains(&self.jump_probability) {
            return Err(SynthError::InvalidRegime("jump probability outside [0,1]".into()));
        }
        if !(self.start_price > 0.0) {
            return Err(SynthError::InvalidRegime("start price must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.volume_persistence) {
            return Err(SynthError::InvalidRegime("volume persistence outside [0,1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bar {
    pub step: usize,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: f64,
}

impl Bar {
    /// Checks `low <= min(open, close)`, `high >= max(open, close)`, positive
    /// prices and non-negative volume.
    pub fn is_valid(&self) -> bool {
        let prices = [self.open, self.high, self.low, self.close];
        prices.iter().all(|p| p.is_finite() && *p > 0.0)
            && self.volume.is_finite()
            && self.volume >= 0.0
            && self.low <= self.open.min(self.close)
            && self.high >= self.open.max(self.close)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanelManifest {
    /// Generator seed for synthetic panels.
    pub seed: Option<u64>,
    /// Regime label or source file path.
    pub source: String,
    pub generated_at: String,
    /// SHA-256 of the source bytes for loaded panels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarketPanel {
    pub symbols: Vec<String>,
    /// `bars[i]` is the bar sequence for `symbols[i]`.
    pub bars: Vec<Vec<Bar>>,
    pub manifest: PanelManifest,
}

impl MarketPanel {
    /// Number of steps of the first symbol (all symbols agree once aligned).
    pub fn n_steps(&self) -> usize {
        self.bars.first().map_or(0, Vec::len)
    }

    pub fn n_symbols(&self) -> usize {
        self.symbols.len()
    }

    pub fn symbol_index(&self, symbol: &str) -> Option<usize> {
        self.symbols.iter().position(|s| s == symbol)
    }

    pub fn closes(&self, symbol_idx: usize) -> Vec<f64> {
        self.bars[symbol_idx].iter().map(|b| b.close).collect()
    }

    /// True when all symbols share the same step sequence.
    pub fn is_aligned(&self) -> bool {
        let Some(first) = self.bars.first() else { return true };
        self.bars.iter().all(|series| {
            series.len() == first.len()
                && series.iter().zip(first).all(|(a, b)| a.step == b.step)
        })
    }

    /// First invalid bar as `(symbol, step)`.
    pub fn first_invalid_bar(&self) -> Option<(String, usize)> {
        for (sym, series) in self.symbols.iter().zip(&self.bars) {
            if let Some(bar) = series.iter().find(|b| !b.is_valid()) {
                return Some((sym.clone(), bar.step));
            }
        }
        None
    }

    /// Columnar CSV: `step,symbol,open,high,low,close,volume`, step-major.
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record(["step", "symbol", "open", "high", "low", "close", "volume"])?;
        let n = self.bars.iter().map(Vec::len).max().unwrap_or(0);
        for t in 0..n {
            for (sym, series) in self.symbols.iter().zip(&self.bars) {
                if let Some(b) = series.get(t) {
                    w.write_record([
                        b.step.to_string(),
                        sym.clone(),
                        b.open.to_string(),
                        b.high.to_string(),
                        b.low.to_string(),
                        b.close.to_string(),
                        b.volume.to_string(),
                    ])?;
                }
            }
        }
        w.flush()
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    pub fn manifest_json(&self) -> String {
        serde_json::to_string_pretty(&self.manifest).expect("manifest serializes")
    }
}

/// Generate a panel with the default coefficients.
pub fn generate_market(
    regime: &RegimeSpec,
    symbols: &[String],
    steps: usize,
) -> Result<MarketPanel, SynthError> {
    generate_market_with(&GeneratorParams::default(), regime, symbols, steps)
}

pub fn generate_market_with(
    params: &GeneratorParams,
    regime: &RegimeSpec,
    symbols: &[String],
    steps: usize,
) -> Result<MarketPanel, SynthError> {
    if steps < 2 {
        return Err(SynthError::InvalidHorizon(steps));
    }
    if symbols.is_empty() {
        return Err(SynthError::EmptyUniverse);
    }
    params.validate()?;

    let sigma = params.sigma_for(regime.volatility_state);
    let mu = params.mean_for(regime.trend_sign);
    let dof = params.student_t_dof;
    let t_dist = StudentT::new(dof).map_err(|e| SynthError::InvalidRegime(e.to_string()))?;
    let t_scale = ((dof - 2.0) / dof).sqrt();

    let bars = symbols
        .iter()
        .enumerate()
        .map(|(i, _)| {
            let mut rng = rng::stream(rng::mix(regime.seed, i as u64));
            let mut prev_close = params.start_price;
            let phi = params.volume_persistence;
            let innov = (1.0 - phi * phi).sqrt();
            let mut log_vol_z = 0.0f64;
            (0..steps)
                .map(|t| {
                    // Every draw is taken each step so the streams stay aligned
                    // across tail states.
                    let gauss: f64 = StandardNormal.sample(&mut rng);
                    let student: f64 = t_dist.sample(&mut rng) * t_scale;
                    let jump_u: f64 = rng.random();
                    let jump_z: f64 = StandardNormal.sample(&mut rng);
                    let spread_z: f64 = StandardNormal.sample(&mut rng);
                    let volume_z: f64 = StandardNormal.sample(&mut rng);

                    let shock = if regime.tail_state.is_student_t() { student } else { gauss };
                    let jump = if regime.tail_state.has_jumps() && jump_u < params.jump_probability {
                        params.jump_scale * sigma * jump_z
                    } else {
                        0.0
                    };
                    log_vol_z = if t == 0 { volume_z } else { phi * log_vol_z + innov * volume_z };
                    let open = prev_close;
                    let close = open * (mu + sigma * shock + jump).exp();
                    let half_spread = (0.5 * sigma * spread_z.abs()).min(0.5);
                    let bar = Bar {
                        step: t,
                        open,
                        high: open.max(close) * (1.0 + half_spread),
                        low: open.min(close) * (1.0 - half_spread),
                        close,
                        volume: (params.volume_log_mean + params.volume_log_sd * log_vol_z).exp(),
                    };
                    prev_close = close;
                    bar
                })
                .collect()
        })
        .collect();

    Ok(MarketPanel {
        symbols: symbols.to_vec(),
        bars,
        manifest: PanelManifest {
            seed: Some(regime.seed),
            source: format!("synthetic:{}", regime.label()),
            generated_at: SYNTHETIC_TIMESTAMP.to_string(),
            content_hash: None,
            notes: Vec::new(),
        },
    })
}

/// Number of distinct (volatility, tail, trend) combinations.
pub const GRID_COMBINATIONS: usize = 5 * 4 * 2;

/// Enumerate `count` regimes over the volatility x tail x trend grid.
///
/// Trend varies fastest, then tail, then volatility. Element `i` uses the
/// seed `base_seed + i * SPLITMIX_GAMMA` (the i-th SplitMix64 state), so the
/// first element carries `base_seed` itself and later cycles of the grid get
/// fresh seeds.
pub fn build_regime_grid(count: usize, base_seed: u64) -> Vec<RegimeSpec> {
    (0..count)
        .map(|i| {
            let combo = i % GRID_COMBINATIONS;
            RegimeSpec {
                volatility_state: VolatilityState::ALL[combo / 8],
                tail_state: TailState::ALL[(combo / 2) % 4],
                trend_sign: TrendSign::ALL[combo % 2],
                seed: base_seed.wrapping_add((i as u64).wrapping_mul(rng::SPLITMIX_GAMMA)),
            }
        })
        .collect()
}
