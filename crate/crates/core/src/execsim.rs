//! Order generation and fill simulation under ideal or friction-realistic
//! execution: commissions, square-root impact, participation caps, latency,
//! price-tolerance rejects and a single-retry pending queue.
//!
//! Fill sizing: an order first waits `latency_steps`. At execution it is
//! rejected outright if the bar close has already moved more than
//! `reject_price_tolerance` from the decision close. Otherwise it fills the
//! largest whole quantity that both respects the participation cap and keeps
//! the impacted fill price within the tolerance band; the remainder goes to
//! the pending queue, is retried once on the next bar and is then rejected.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::agents::Weights;
use crate::synthmarket::MarketPanel;
use crate::trajectory::PortfolioState;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecMode {
    Ideal,
    Realistic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StressPreset {
    HighCost,
    LowLiquidity,
    Latency,
    Fragile,
}

impl StressPreset {
    pub const ALL: [StressPreset; 4] =
        [StressPreset::HighCost, StressPreset::LowLiquidity, StressPreset::Latency, StressPreset::Fragile];

    pub fn name(self) -> &'static str {
        match self {
            StressPreset::HighCost => "high_cost",
            StressPreset::LowLiquidity => "low_liquidity",
            StressPreset::Latency => "latency",
            StressPreset::Fragile => "fragile",
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExecConfig {
    pub mode: ExecMode,
    pub commission_rate: f64,
    pub commission_fixed: f64,
    pub impact_coef: f64,
    pub impact_exponent: f64,
    pub latency_steps: usize,
    /// Fraction of bar volume fillable per step; `None` is unlimited.
    pub participation_cap: Option<f64>,
    pub reject_price_tolerance: f64,
    pub min_notional: f64,
}

impl ExecConfig {
    pub fn ideal() -> Self {
        Self {
            mode: ExecMode::Ideal,
            commission_rate: 0.0,
            commission_fixed: 0.0,
            impact_coef: 0.0,
            impact_exponent: 0.5,
            latency_steps: 0,
            participation_cap: None,
            reject_price_tolerance: f64::INFINITY,
            min_notional: 0.0,
        }
    }

    pub fn realistic() -> Self {
        Self {
            mode: ExecMode::Realistic,
            commission_rate: 0.001,
            commission_fixed: 0.1,
            impact_coef: 0.1,
            impact_exponent: 0.5,
            latency_steps: 0,
            participation_cap: Some(0.1),
            reject_price_tolerance: 0.02,
            min_notional: 50.0,
        }
    }

    pub fn stress(preset: StressPreset) -> Self {
        let base = Self::realistic();
        match preset {
            StressPreset::HighCost => Self {
                commission_rate: base.commission_rate * 3.0,
                commission_fixed: base.commission_fixed * 3.0,
                impact_coef: base.impact_coef * 3.0,
                ..base
            },
            StressPreset::LowLiquidity => {
                Self { participation_cap: base.participation_cap.map(|c| c * 0.5), ..base }
            }
            StressPreset::Latency => Self { latency_steps: 2, ..base },
            StressPreset::Fragile => Self {
                impact_coef: base.impact_coef * 4.0,
                participation_cap: base.participation_cap.map(|c| c * 0.25),
                ..base
            },
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "ideal" => Some(Self::ideal()),
            "realistic" => Some(Self::realistic()),
            other => StressPreset::by_name(other).map(Self::stress),
        }
    }

    /// The configuration actually used for simulation: ideal mode zeroes all
    /// frictions regardless of the stored fields.
    pub fn effective(&self) -> Self {
        match self.mode {
            ExecMode::Ideal => Self { min_notional: self.min_notional, ..Self::ideal() },
            ExecMode::Realistic => *self,
        }
    }
}

impl Default for ExecConfig {
    fn default() -> Self {
        Self::realistic()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Order {
    pub symbol: String,
    /// Signed whole units; positive buys.
    pub qty: f64,
    pub decision_step: usize,
    pub decision_close: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fill {
    pub symbol: String,
    pub qty: f64,
    pub fill_price: f64,
    pub commission: f64,
    pub slippage_cost: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExecutionOutcome {
    pub orders: Vec<Order>,
    pub fills: Vec<Fill>,
    pub partial_fills: u64,
    pub rejected: u64,
    pub pending: u64,
    pub latency_applied: u64,
    /// Units newly requested by this step's orders.
    pub requested_qty: f64,
    /// Units filled this step (new orders, delayed orders and retries).
    pub filled_qty: f64,
    /// Units attempted this step.
    pub attempted_qty: f64,
    /// `filled_qty / attempted_qty`, 1.0 when nothing was attempted.
    pub fill_ratio: f64,
    pub commission_total: f64,
    pub slippage_total: f64,
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueuedOrder {
    pub order: Order,
    pub remaining: f64,
    pub due_step: usize,
    /// True once the order has been attempted and carried over.
    pub retry: bool,
}

/// Orders waiting on latency or a retry. Owned by a single run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExecQueue {
    pub items: Vec<QueuedOrder>,
}

impl ExecQueue {
    /// Signed units still outstanding per symbol.
    pub fn outstanding(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        for q in &self.items {
            *out.entry(q.order.symbol.clone()).or_insert(0.0) += q.remaining;
        }
        out
    }
}

/// Orders that move current holdings (plus anything still queued) to the
/// approved weights at `step` prices.
pub fn targets_to_orders(
    approved: &Weights,
    portfolio: &PortfolioState,
    panel: &MarketPanel,
    step: usize,
    outstanding: &BTreeMap<String, f64>,
    min_notional: f64,
    notes: &mut Vec<String>,
) -> Vec<Order> {
    let mut orders = Vec::new();
    if !(portfolio.equity > 0.0) {
        notes.push(format!("no orders: non-positive equity {:.2}", portfolio.equity));
        return orders;
    }
    for (i, sym) in panel.symbols.iter().enumerate() {
        let close = panel.bars[i][step].close;
        let target = approved.get(sym).copied().unwrap_or(0.0);
        let held = portfolio.positions.get(sym).copied().unwrap_or(0.0)
            + outstanding.get(sym).copied().unwrap_or(0.0);
        let qty = order_qty(target, portfolio.equity, held, close);
        if qty == 0.0 {
            continue;
        }
        if (qty * close).abs() < min_notional {
            notes.push(format!("drop: {sym} qty {qty} notional {:.2} below min_notional", qty * close));
            continue;
        }
        orders.push(Order { symbol: sym.clone(), qty, decision_step: step, decision_close: close });
    }
    orders
}

/// `(target·equity − held·close) / close`, truncated toward zero.
pub fn order_qty(target: f64, equity: f64, held: f64, close: f64) -> f64 {
    let q = ((target * equity - held * close) / close).trunc();
    if q == 0.0 { 0.0 } else { q }
}

/// Relative price impact of trading `qty` against `volume`.
pub fn impact(cfg: &ExecConfig, qty: f64, volume: f64) -> f64 {
    if cfg.impact_coef == 0.0 || qty == 0.0 {
        return 0.0;
    }
    cfg.impact_coef * (qty.abs() / volume).powf(cfg.impact_exponent)
}

/// Largest whole quantity whose impact stays within `budget`.
fn impact_limited_qty(cfg: &ExecConfig, volume: f64, budget: f64) -> f64 {
    if cfg.impact_coef == 0.0 {
        return f64::INFINITY;
    }
    if budget <= 0.0 {
        return 0.0;
    }
    let mut q = (volume * (budget / cfg.impact_coef).powf(1.0 / cfg.impact_exponent)).floor();
    // Guard against round-off pushing the boundary quantity over budget.
    while q > 0.0 && impact(cfg, q, volume) > budget {
        q -= 1.0;
    }
    q
}

/// Simulate one step: submit `orders` decided at `step`, then work every
/// queued order due at `step`. Orders still queued when `step` is the last
/// bar expire as pending.
pub fn execute(
    orders: Vec<Order>,
    panel: &MarketPanel,
    step: usize,
    config: &ExecConfig,
    queue: &mut ExecQueue,
) -> ExecutionOutcome {
    let cfg = config.effective();
    let mut out = ExecutionOutcome::default();
    let index: BTreeMap<&str, usize> =
        panel.symbols.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();

    for o in &orders {
        out.requested_qty += o.qty.abs();
        if cfg.latency_steps > 0 {
            out.latency_applied += 1;
        }
        queue.items.push(QueuedOrder {
            order: o.clone(),
            remaining: o.qty,
            due_step: step + cfg.latency_steps,
            retry: false,
        });
    }
    out.orders = orders;

    let (due, later): (Vec<QueuedOrder>, Vec<QueuedOrder>) =
        std::mem::take(&mut queue.items).into_iter().partition(|q| q.due_step <= step);
    queue.items = later;

    for q in due {
        let Some(&i) = index.get(q.order.symbol.as_str()) else {
            out.rejected += 1;
            out.notes.push(format!("reject: unknown symbol {}", q.order.symbol));
            continue;
        };
        let bar = &panel.bars[i][step];
        let want = q.remaining.abs();
        let side = q.remaining.signum();
        out.attempted_qty += want;
        let c0 = q.order.decision_close;
        let drift = bar.close / c0 - 1.0;
        let tol = cfg.reject_price_tolerance;

        if drift.abs() > tol {
            out.rejected += 1;
            out.notes.push(format!(
                "reject: {} price moved {:+.4} from decision close (tolerance {tol})",
                q.order.symbol, drift
            ));
            continue;
        }
        let budget = if side > 0.0 { (1.0 + tol) / (1.0 + drift) - 1.0 } else { 1.0 - (1.0 - tol) / (1.0 + drift) };
        let by_volume = cfg.participation_cap.map_or(f64::INFINITY, |cap| (cap * bar.volume).floor());
        let fill_qty = want.min(by_volume).min(impact_limited_qty(&cfg, bar.volume, budget));

        if fill_qty > 0.0 {
            let imp = impact(&cfg, fill_qty, bar.volume);
            let price = bar.close * (1.0 + side * imp);
            let notional = fill_qty * price;
            let commission = cfg.commission_rate * notional + cfg.commission_fixed;
            let slippage = (price - c0).abs() * fill_qty;
            out.filled_qty += fill_qty;
            out.commission_total += commission;
            out.slippage_total += slippage;
            out.fills.push(Fill {
                symbol: q.order.symbol.clone(),
                qty: side * fill_qty,
                fill_price: price,
                commission,
                slippage_cost: slippage,
            });
        }
        let rest = want - fill_qty;
        if rest > 0.0 {
            if fill_qty > 0.0 {
                out.partial_fills += 1;
            }
            if q.retry {
                out.rejected += 1;
                out.notes.push(format!("reject: {} {rest} units unfilled after retry", q.order.symbol));
            } else {
                out.pending += 1;
                out.notes.push(format!("pending: {} {rest} units carried to next step", q.order.symbol));
                queue.items.push(QueuedOrder {
                    order: q.order.clone(),
                    remaining: side * rest,
                    due_step: step + 1,
                    retry: true,
                });
            }
        }
    }

    if step + 1 >= panel.n_steps() && !queue.items.is_empty() {
        for q in queue.items.drain(..) {
            out.pending += 1;
            out.notes.push(format!(
                "horizon-exhausted: {} {} units expire as pending",
                q.order.symbol,
                q.remaining.abs()
            ));
        }
    }

    out.fill_ratio = if out.attempted_qty > 0.0 { out.filled_qty / out.attempted_qty } else { 1.0 };
    out
}

/// Book fills into the portfolio: positions move by the filled units and cash
/// pays the fill notional plus commission.
pub fn apply_fills(portfolio: &mut PortfolioState, fills: &[Fill]) {
    for f in fills {
        *portfolio.positions.entry(f.symbol.clone()).or_insert(0.0) += f.qty;
        portfolio.cash -= f.qty * f.fill_price + f.commission;
    }
    portfolio.positions.retain(|_, q| *q != 0.0);
}
