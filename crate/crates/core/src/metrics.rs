//! Performance, execution-realism, risk-audit and concentration metrics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::Weights;
use crate::trajectory::{closes_of, TrajectoryStep};

pub const DEFAULT_PERIODS_PER_YEAR: f64 = 52.0;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("invalid-curve: {0}")]
    InvalidCurve(String),
    #[error("undefined-concentration: all weights are zero")]
    UndefinedConcentration,
    #[error("missing-field: {0}")]
    MissingField(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Performance {
    pub total_return: f64,
    /// Absent when return volatility is zero.
    pub sharpe: Option<f64>,
    pub volatility: f64,
    pub max_drawdown: f64,
    pub final_equity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsBundle {
    pub steps: usize,
    pub periods_per_year: f64,
    pub total_return: f64,
    pub sharpe: Option<f64>,
    pub volatility: f64,
    pub max_drawdown: f64,
    pub final_equity: f64,
    pub order_count: u64,
    pub fill_count: u64,
    pub turnover_events: u64,
    pub hold_ratio: f64,
    pub requested_qty: f64,
    pub filled_qty: f64,
    pub fill_rate: f64,
    pub partial_fill_rate: f64,
    pub rejected: u64,
    pub pending: u64,
    pub commissions: f64,
    pub slippage: f64,
    pub clipped: u64,
    pub blocked: u64,
    pub failed_checks: u64,
    pub warnings: u64,
    pub violations: u64,
    pub mean_calibration_score: f64,
    pub mean_intended_exposure: f64,
    /// Mean Herfindahl over invested steps; absent if never invested.
    pub herfindahl: Option<f64>,
}

/// `min_t (e_t / max_{s≤t} e_s − 1)` in one pass.
pub fn max_drawdown(curve: &[f64]) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    let mut worst = 0.0f64;
    for &e in curve {
        peak = peak.max(e);
        worst = worst.min(e / peak - 1.0);
    }
    worst
}

pub fn returns(curve: &[f64]) -> Vec<f64> {
    curve.windows(2).map(|w| w[1] / w[0] - 1.0).collect()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (n−1); 0 for fewer than two points.
pub fn sample_std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

pub fn performance_metrics(curve: &[f64], periods_per_year: f64) -> Result<Performance, MetricsError> {
    if curve.len() < 2 {
        return Err(MetricsError::InvalidCurve(format!("need at least 2 points, got {}", curve.len())));
    }
    if let Some((i, e)) = curve.iter().enumerate().find(|(_, e)| !(**e > 0.0 && e.is_finite())) {
        return Err(MetricsError::InvalidCurve(format!("non-positive equity {e} at index {i}")));
    }
    let r = returns(curve);
    let vol = sample_std(&r);
    let sharpe = (vol > 0.0).then(|| mean(&r) / vol * periods_per_year.sqrt());
    Ok(Performance {
        total_return: curve[curve.len() - 1] / curve[0] - 1.0,
        sharpe,
        volatility: vol,
        max_drawdown: max_drawdown(curve),
        final_equity: curve[curve.len() - 1],
    })
}

/// `Σ u_i²` with `u_i = |w_i| / Σ|w|`.
pub fn herfindahl(weights: &Weights) -> Result<f64, MetricsError> {
    let g: f64 = weights.values().map(|v| v.abs()).sum();
    if !(g > 0.0) {
        return Err(MetricsError::UndefinedConcentration);
    }
    Ok(weights.values().map(|v| (v.abs() / g).powi(2)).sum())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExecutionSummary {
    pub order_count: u64,
    pub fill_count: u64,
    pub turnover_events: u64,
    pub hold_ratio: f64,
    pub requested_qty: f64,
    pub filled_qty: f64,
    pub fill_rate: f64,
    pub partial_fill_rate: f64,
    pub partial_fills: u64,
    pub rejected: u64,
    pub pending: u64,
    pub commissions: f64,
    pub slippage: f64,
}

pub fn execution_metrics(steps: &[TrajectoryStep]) -> ExecutionSummary {
    let mut s = ExecutionSummary::default();
    let mut holds = 0usize;
    for e in steps.iter().filter_map(|t| t.execution.as_ref()) {
        s.order_count += e.orders.len() as u64;
        s.fill_count += e.fills.len() as u64;
        s.turnover_events += u64::from(!e.fills.is_empty());
        holds += usize::from(e.orders.is_empty());
        s.requested_qty += e.requested_qty;
        s.filled_qty += e.filled_qty;
        s.partial_fills += e.partial_fills;
        s.rejected += e.rejected;
        s.pending += e.pending;
        s.commissions += e.commission_total;
        s.slippage += e.slippage_total;
    }
    s.hold_ratio = if steps.is_empty() { 1.0 } else { holds as f64 / steps.len() as f64 };
    s.fill_rate = if s.requested_qty > 0.0 { (s.filled_qty / s.requested_qty).min(1.0) } else { 1.0 };
    s.partial_fill_rate = if s.order_count > 0 { s.partial_fills as f64 / s.order_count as f64 } else { 0.0 };
    s
}

/// Full bundle from logged fields only; the equity curve is the initial
/// capital followed by every step's marked equity.
pub fn bundle_from_steps(steps: &[TrajectoryStep]) -> Result<MetricsBundle, MetricsError> {
    let repro = steps
        .first()
        .and_then(|s| s.repro.as_ref())
        .ok_or_else(|| MetricsError::MissingField("repro".into()))?;
    let mut curve = Vec::with_capacity(steps.len() + 1);
    curve.push(repro.initial_capital);
    for s in steps {
        let p = s
            .portfolio
            .as_ref()
            .ok_or_else(|| MetricsError::MissingField(format!("portfolio at step {}", s.step)))?;
        curve.push(p.equity);
    }
    let perf = performance_metrics(&curve, repro.periods_per_year)?;
    let ex = execution_metrics(steps);

    let (mut clipped, mut blocked, mut failed, mut warnings) = (0, 0, 0, 0);
    let mut cal = Vec::with_capacity(steps.len());
    for r in steps.iter().filter_map(|s| s.risk_report.as_ref()) {
        clipped += r.clipped_count;
        blocked += r.blocked_count;
        failed += r.failed_checks;
        warnings += r.warning_checks;
        cal.push(r.calibration_score);
    }
    let exposures: Vec<f64> = steps.iter().filter_map(|s| s.decision.as_ref()).map(|d| d.exposure()).collect();
    let hhi: Vec<f64> = steps
        .iter()
        .filter_map(|s| {
            let (p, o) = (s.portfolio.as_ref()?, s.observation.as_ref()?);
            herfindahl(&p.weights_at(&closes_of(o))).ok()
        })
        .collect();

    Ok(MetricsBundle {
        steps: steps.len(),
        periods_per_year: repro.periods_per_year,
        total_return: perf.total_return,
        sharpe: perf.sharpe,
        volatility: perf.volatility,
        max_drawdown: perf.max_drawdown,
        final_equity: perf.final_equity,
        order_count: ex.order_count,
        fill_count: ex.fill_count,
        turnover_events: ex.turnover_events,
        hold_ratio: ex.hold_ratio,
        requested_qty: ex.requested_qty,
        filled_qty: ex.filled_qty,
        fill_rate: ex.fill_rate,
        partial_fill_rate: ex.partial_fill_rate,
        rejected: ex.rejected,
        pending: ex.pending,
        commissions: ex.commissions,
        slippage: ex.slippage,
        clipped,
        blocked,
        failed_checks: failed,
        warnings,
        violations: steps.iter().map(|s| s.realized_violations).sum(),
        mean_calibration_score: if cal.is_empty() { 1.0 } else { mean(&cal) },
        mean_intended_exposure: if exposures.is_empty() { 0.0 } else { mean(&exposures) },
        herfindahl: (!hhi.is_empty()).then(|| mean(&hhi)),
    })
}

/// Column order of the per-run metric table.
pub const TABLE_COLUMNS: [&str; 27] = [
    "steps",
    "periods_per_year",
    "total_return",
    "sharpe",
    "volatility",
    "max_drawdown",
    "final_equity",
    "order_count",
    "fill_count",
    "turnover_events",
    "hold_ratio",
    "requested_qty",
    "filled_qty",
    "fill_rate",
    "partial_fill_rate",
    "rejected",
    "pending",
    "commissions",
    "slippage",
    "clipped",
    "blocked",
    "failed_checks",
    "warnings",
    "violations",
    "mean_calibration_score",
    "mean_intended_exposure",
    "herfindahl",
];

impl MetricsBundle {
    /// Numeric value of a named metric; absent optionals map to `None`.
    pub fn get(&self, name: &str) -> Option<f64> {
        Some(match name {
            "steps" => self.steps as f64,
            "periods_per_year" => self.periods_per_year,
            "total_return" => self.total_return,
            "sharpe" => return self.sharpe,
            "volatility" => self.volatility,
            "max_drawdown" => self.max_drawdown,
            "final_equity" => self.final_equity,
            "order_count" => self.order_count as f64,
            "fill_count" => self.fill_count as f64,
            "turnover_events" => self.turnover_events as f64,
            "hold_ratio" => self.hold_ratio,
            "requested_qty" => self.requested_qty,
            "filled_qty" => self.filled_qty,
            "fill_rate" => self.fill_rate,
            "partial_fill_rate" => self.partial_fill_rate,
            "rejected" => self.rejected as f64,
            "pending" => self.pending as f64,
            "commissions" => self.commissions,
            "slippage" => self.slippage,
            "clipped" => self.clipped as f64,
            "blocked" => self.blocked as f64,
            "failed_checks" => self.failed_checks as f64,
            "warnings" => self.warnings as f64,
            "violations" => self.violations as f64,
            "mean_calibration_score" => self.mean_calibration_score,
            "mean_intended_exposure" => self.mean_intended_exposure,
            "herfindahl" => return self.herfindahl,
            _ => return None,
        })
    }

    /// Table cells in `TABLE_COLUMNS` order; absent values are empty.
    pub fn row(&self) -> Vec<String> {
        TABLE_COLUMNS.iter().map(|c| self.get(c).map(|v| v.to_string()).unwrap_or_default()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_curve() {
        let p = performance_metrics(&[100.0; 5], 52.0).unwrap();
        assert_eq!(p.total_return, 0.0);
        assert_eq!(p.max_drawdown, 0.0);
        assert_eq!(p.sharpe, None);
    }

    #[test]
    fn rise_then_fall() {
        let p = performance_metrics(&[100.0, 110.0, 99.0], 52.0).unwrap();
        assert!((p.total_return + 0.01).abs() < 1e-12);
        assert!((p.max_drawdown - (99.0 / 110.0 - 1.0)).abs() < 1e-15);
        assert!((p.max_drawdown + 0.1).abs() < 1e-12);
        let p = performance_metrics(&[100.0, 120.0], 52.0).unwrap();
        assert!((p.total_return - 0.2).abs() < 1e-12);
        assert_eq!(p.max_drawdown, 0.0);
    }

    #[test]
    fn invalid_curves() {
        assert!(matches!(performance_metrics(&[100.0], 52.0), Err(MetricsError::InvalidCurve(_))));
        assert!(matches!(performance_metrics(&[100.0, 0.0], 52.0), Err(MetricsError::InvalidCurve(_))));
        assert!(matches!(performance_metrics(&[100.0, -5.0], 52.0), Err(MetricsError::InvalidCurve(_))));
    }

    #[test]
    fn herfindahl_examples() {
        let eq: Weights = (0..51).map(|i| (format!("S{i}"), 1.0 / 51.0)).collect();
        assert!((herfindahl(&eq).unwrap() - 1.0 / 51.0).abs() < 1e-12);
        assert_eq!(herfindahl(&[("A".to_string(), 0.4)].into()).unwrap(), 1.0);
        let ls: Weights = [("A".to_string(), 0.5), ("B".to_string(), -0.5)].into();
        assert_eq!(herfindahl(&ls).unwrap(), 0.5);
        assert_eq!(herfindahl(&[("A".to_string(), 0.0)].into()), Err(MetricsError::UndefinedConcentration));
    }

    #[test]
    fn no_orders_convention() {
        let steps: Vec<TrajectoryStep> = (0..3)
            .map(|i| TrajectoryStep { execution: Some(Default::default()), ..TrajectoryStep::empty(i) })
            .collect();
        let e = execution_metrics(&steps);
        assert_eq!(e.hold_ratio, 1.0);
        assert_eq!(e.fill_rate, 1.0);
    }

    #[test]
    fn ten_requested_nine_filled() {
        use crate::execsim::{ExecutionOutcome, Order};
        let o = Order { symbol: "A".into(), qty: 10.0, decision_step: 0, decision_close: 1.0 };
        let step = TrajectoryStep {
            execution: Some(ExecutionOutcome {
                orders: vec![o],
                requested_qty: 10.0,
                filled_qty: 9.0,
                rejected: 1,
                ..ExecutionOutcome::default()
            }),
            ..TrajectoryStep::empty(0)
        };
        let e = execution_metrics(&[step]);
        assert!((e.fill_rate - 0.9).abs() < 1e-15);
        assert_eq!(e.rejected, 1);
        assert_eq!(e.hold_ratio, 0.0);
    }

    fn brute_force_mdd(c: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for t in 0..c.len() {
            for s in 0..=t {
                worst = worst.min(c[t] / c[s] - 1.0);
            }
        }
        worst
    }

    proptest! {
        #[test]
        fn streaming_drawdown_matches_brute_force(c in proptest::collection::vec(1.0f64..1000.0, 1..60)) {
            prop_assert_eq!(max_drawdown(&c), brute_force_mdd(&c));
        }

        #[test]
        fn sharpe_sign_follows_mean(c in proptest::collection::vec(50.0f64..150.0, 3..40)) {
            let p = performance_metrics(&c, 52.0).unwrap();
            let m = mean(&returns(&c));
            if let Some(s) = p.sharpe {
                prop_assert!(s == 0.0 && m == 0.0 || s.signum() == m.signum());
            }
            prop_assert!((-1.0..=0.0).contains(&p.max_drawdown));
        }
    }
}
