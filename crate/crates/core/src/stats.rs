//! Paired comparisons across seeds, normal-approximation p-values, quartile
//! learning diagnostics and sweep aggregation.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::MetricsBundle;
use crate::trajectory::TrajectoryStep;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("shape-error: lengths {0} and {1} differ")]
    ShapeError(usize, usize),
    #[error("insufficient-data: need at least 2 pairs, got {0}")]
    InsufficientData(usize),
    #[error("insufficient-horizon: need at least 8 steps, got {0}")]
    InsufficientHorizon(usize),
    #[error("unbalanced-design: case {case} seeds differ from baseline {baseline}")]
    UnbalancedDesign { case: String, baseline: String },
    #[error("unknown baseline case {0}")]
    UnknownBaseline(String),
}

// W. J. Cody's rational Chebyshev approximations for erf/erfc
// (relative error below 1e-16 over the whole line).
const ERF_A: [f64; 5] = [
    3.16112374387056560e00,
    1.13864154151050156e02,
    3.77485237685302021e02,
    3.20937758913846947e03,
    1.85777706184603153e-1,
];
const ERF_B: [f64; 4] = [2.36012909523441209e01, 2.44024637934444173e02, 1.28261652607737228e03, 2.84423683343917062e03];
const ERF_C: [f64; 9] = [
    5.64188496988670089e-1,
    8.88314979438837594e00,
    6.61191906371416295e01,
    2.98635138197400131e02,
    8.81952221241769090e02,
    1.71204761263407058e03,
    2.05107837782607147e03,
    1.23033935479799725e03,
    2.15311535474403846e-8,
];
const ERF_D: [f64; 8] = [
    1.57449261107098347e01,
    1.17693950891312499e02,
    5.37181101862009858e02,
    1.62138957456669019e03,
    3.29079923573345963e03,
    4.36261909014324716e03,
    3.43936767414372164e03,
    1.23033935480374942e03,
];
const ERF_P: [f64; 6] = [
    3.05326634961232344e-1,
    3.60344899949804439e-1,
    1.25781726111229246e-1,
    1.60837851487422766e-2,
    6.58749161529837803e-4,
    1.63153871373020978e-2,
];
const ERF_Q: [f64; 5] = [2.56852019228982242e00, 1.87295284992346725e00, 5.27905102951428412e-1, 6.05183413124413191e-2, 2.33520497626869185e-3];
const FRAC_1_SQRT_PI: f64 = 5.6418958354775628695e-1;

/// `exp(-y²)` split to limit cancellation error for large `y`.
fn exp_neg_sq(y: f64) -> f64 {
    let ysq = (y * 16.0).trunc() / 16.0;
    let del = (y - ysq) * (y + ysq);
    (-ysq * ysq).exp() * (-del).exp()
}

/// Complementary error function for `y ≥ 0.46875`.
fn erfc_tail(y: f64) -> f64 {
    if y <= 4.0 {
        let mut num = ERF_C[8] * y;
        let mut den = y;
        for i in 0..7 {
            num = (num + ERF_C[i]) * y;
            den = (den + ERF_D[i]) * y;
        }
        exp_neg_sq(y) * (num + ERF_C[7]) / (den + ERF_D[7])
    } else {
        if y >= 26.6 {
            return 0.0;
        }
        let z = 1.0 / (y * y);
        let mut num = ERF_P[5] * z;
        let mut den = z;
        for i in 0..4 {
            num = (num + ERF_P[i]) * z;
            den = (den + ERF_Q[i]) * z;
        }
        let r = z * (num + ERF_P[4]) / (den + ERF_Q[4]);
        exp_neg_sq(y) * (FRAC_1_SQRT_PI - r) / y
    }
}

pub fn erf(x: f64) -> f64 {
    let y = x.abs();
    if y <= 0.46875 {
        let z = y * y;
        let mut num = ERF_A[4] * z;
        let mut den = z;
        for i in 0..3 {
            num = (num + ERF_A[i]) * z;
            den = (den + ERF_B[i]) * z;
        }
        x * (num + ERF_A[3]) / (den + ERF_B[3])
    } else {
        let r = 1.0 - erfc_tail(y);
        if x < 0.0 { -r } else { r }
    }
}

pub fn erfc(x: f64) -> f64 {
    let y = x.abs();
    if y <= 0.46875 {
        return 1.0 - erf(x);
    }
    let r = erfc_tail(y);
    if x < 0.0 { 2.0 - r } else { r }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

pub const Z_95: f64 = 1.96;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedStats {
    pub n: usize,
    pub mean_diff: f64,
    pub sd: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub win_rate: f64,
    pub loss_rate: f64,
    pub tie_rate: f64,
    pub ties: usize,
    /// Absent when `sd = 0`.
    pub t_stat: Option<f64>,
    pub p_value: f64,
    /// Set when `sd = 0`; `p` is then 0 for a non-zero mean and 1 otherwise.
    pub degenerate: bool,
}

pub fn paired_stats(a: &[f64], b: &[f64]) -> Result<PairedStats, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::ShapeError(a.len(), b.len()));
    }
    let n = a.len();
    if n < 2 {
        return Err(StatsError::InsufficientData(n));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let sd = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let se = sd / (n as f64).sqrt();
    let wins = d.iter().filter(|v| **v > 0.0).count();
    let losses = d.iter().filter(|v| **v < 0.0).count();
    let ties = n - wins - losses;
    let (t_stat, p_value, degenerate) = if sd > 0.0 {
        let t = mean / se;
        (Some(t), (2.0 * (1.0 - normal_cdf(t.abs()))).clamp(0.0, 1.0), false)
    } else {
        (None, if mean != 0.0 { 0.0 } else { 1.0 }, true)
    };
    Ok(PairedStats {
        n,
        mean_diff: mean,
        sd,
        ci_low: mean - Z_95 * se,
        ci_high: mean + Z_95 * se,
        win_rate: wins as f64 / n as f64,
        loss_rate: losses as f64 / n as f64,
        tie_rate: ties as f64 / n as f64,
        ties,
        t_stat,
        p_value,
        degenerate,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuartileLearning {
    pub quartile_len: usize,
    pub early_risk_rate: f64,
    pub late_risk_rate: f64,
    pub risk_delta: f64,
    pub early_cal: f64,
    pub late_cal: f64,
    pub cal_delta: f64,
    pub intent_drift: f64,
}

/// A step counts as gated when the gate clipped or blocked, or post-fill
/// weights breached a cap.
pub fn gated(s: &TrajectoryStep) -> bool {
    s.realized_violations > 0
        || s.risk_report.as_ref().is_some_and(|r| r.clipped_count + r.blocked_count > 0)
}

pub fn quartile_learning(steps: &[TrajectoryStep]) -> Result<QuartileLearning, StatsError> {
    let n = steps.len();
    if n < 8 {
        return Err(StatsError::InsufficientHorizon(n));
    }
    let q = n.div_ceil(4);
    let (early, late) = (&steps[..q], &steps[n - q..]);
    let rate = |w: &[TrajectoryStep]| w.iter().filter(|s| gated(s)).count() as f64 / q as f64;
    let cal = |w: &[TrajectoryStep]| {
        w.iter().map(|s| s.risk_report.as_ref().map_or(1.0, |r| r.calibration_score)).sum::<f64>() / q as f64
    };
    let exposure = |w: &[TrajectoryStep]| {
        w.iter().map(|s| s.decision.as_ref().map_or(0.0, |d| d.exposure())).sum::<f64>() / q as f64
    };
    let (er, lr, ec, lc) = (rate(early), rate(late), cal(early), cal(late));
    Ok(QuartileLearning {
        quartile_len: q,
        early_risk_rate: er,
        late_risk_rate: lr,
        risk_delta: lr - er,
        early_cal: ec,
        late_cal: lc,
        cal_delta: lc - ec,
        intent_drift: exposure(late) - exposure(early),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseSummaryRow {
    pub case: String,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedRow {
    pub case: String,
    pub baseline: String,
    pub metric: String,
    pub stats: PairedStats,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepTables {
    pub summary: Vec<CaseSummaryRow>,
    pub paired: Vec<PairedRow>,
}

pub type SeedRuns = BTreeMap<u64, MetricsBundle>;

/// Per-case means with 95% intervals and paired comparisons of every other
/// case against `baseline`. Rows follow the order of `runs`, then `metrics`.
/// Seeds where a metric is absent are skipped for that metric.
pub fn sweep_aggregate(
    runs: &[(String, SeedRuns)],
    baseline: &str,
    metrics: &[&str],
) -> Result<SweepTables, StatsError> {
    let base = runs
        .iter()
        .find(|(c, _)| c == baseline)
        .map(|(_, r)| r)
        .ok_or_else(|| StatsError::UnknownBaseline(baseline.to_string()))?;
    let base_seeds: BTreeSet<u64> = base.keys().copied().collect();
    for (case, r) in runs {
        if r.keys().copied().collect::<BTreeSet<_>>() != base_seeds {
            return Err(StatsError::UnbalancedDesign { case: case.clone(), baseline: baseline.to_string() });
        }
    }
    let mut out = SweepTables::default();
    for (case, r) in runs {
        for &m in metrics {
            let vals: Vec<f64> = r.values().filter_map(|b| b.get(m)).collect();
            if vals.is_empty() {
                continue;
            }
            let n = vals.len();
            let mean = vals.iter().sum::<f64>() / n as f64;
            let sd = if n > 1 {
                (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            let half = Z_95 * sd / (n as f64).sqrt();
            out.summary.push(CaseSummaryRow {
                case: case.clone(),
                metric: m.to_string(),
                n,
                mean,
                ci_low: mean - half,
                ci_high: mean + half,
            });
        }
    }
    for (case, r) in runs.iter().filter(|(c, _)| c != baseline) {
        for &m in metrics {
            let (a, b): (Vec<f64>, Vec<f64>) = r
                .iter()
                .filter_map(|(seed, bundle)| Some((bundle.get(m)?, base[seed].get(m)?)))
                .unzip();
            if let Ok(stats) = paired_stats(&a, &b) {
                out.paired.push(PairedRow {
                    case: case.clone(),
                    baseline: baseline.to_string(),
                    metric: m.to_string(),
                    stats,
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn phi_matches_reference_on_grid() {
        for i in 0..1000 {
            let x = -8.0 + 16.0 * i as f64 / 999.0;
            let want = 0.5 * libm::erfc(-x / std::f64::consts::SQRT_2);
            assert!((normal_cdf(x) - want).abs() < 1e-12, "x={x}");
        }
        for i in 0..400 {
            let x = -6.0 + 12.0 * i as f64 / 399.0;
            assert!((erf(x) - libm::erf(x)).abs() < 1e-15, "erf x={x}");
            assert!((erfc(x) - libm::erfc(x)).abs() <= 1e-15 * libm::erfc(x).max(1e-300) + 1e-300, "erfc x={x}");
        }
        // 40-digit reference at a point inside the mid-range rational branch.
        let x = -1.9939939939939944;
        assert!((normal_cdf(x) / 0.023076355439699600629 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn hand_derived_example() {
        let a = [0.1, 0.2, -0.05, 0.15, 0.1];
        let s = paired_stats(&a, &[0.0; 5]).unwrap();
        let sd = (0.035f64 / 4.0).sqrt();
        let t = 0.1 / (sd / 5f64.sqrt());
        let p = libm::erfc(t / std::f64::consts::SQRT_2);
        assert!((s.mean_diff - 0.1).abs() < 1e-12);
        assert!((s.sd - 0.0935414).abs() < 1e-6);
        assert!((s.t_stat.unwrap() - t).abs() < 1e-9);
        assert!((s.t_stat.unwrap() - 2.390457).abs() < 1e-6);
        assert!((s.p_value - p).abs() < 1e-9);
        assert!((s.p_value - 0.016827).abs() < 1e-6);
        assert_eq!(s.win_rate, 0.8);
    }

    #[test]
    fn degenerate_cases() {
        let a = [1.0, 2.0, 3.0];
        let s = paired_stats(&a, &a).unwrap();
        assert_eq!((s.mean_diff, s.p_value, s.win_rate, s.degenerate), (0.0, 1.0, 0.0, true));
        let s = paired_stats(&[2.0; 4], &[1.0; 4]).unwrap();
        assert_eq!((s.mean_diff, s.sd, s.p_value, s.degenerate), (1.0, 0.0, 0.0, true));
        assert_eq!(paired_stats(&[1.0], &[1.0, 2.0]), Err(StatsError::ShapeError(1, 2)));
    }

    fn gate_steps(hits: &[bool], exposure: f64) -> Vec<TrajectoryStep> {
        use crate::agents::DecisionRecord;
        use crate::riskgate::RiskReport;
        hits.iter()
            .enumerate()
            .map(|(i, &h)| TrajectoryStep {
                risk_report: Some(RiskReport {
                    clipped_count: u64::from(h),
                    calibration_score: if h { 0.5 } else { 1.0 },
                    ..RiskReport::default()
                }),
                decision: Some(DecisionRecord::from_weights(i, [("A".to_string(), exposure)].into())),
                ..TrajectoryStep::empty(i)
            })
            .collect()
    }

    #[test]
    fn quartile_examples() {
        let mut hits = vec![true; 13];
        hits.extend(vec![false; 26]);
        hits.extend((0..13).map(|i| i < 10));
        let q = quartile_learning(&gate_steps(&hits, 0.7)).unwrap();
        assert_eq!(q.quartile_len, 13);
        assert_eq!(q.early_risk_rate, 1.0);
        assert!((q.late_risk_rate - 10.0 / 13.0).abs() < 1e-12);
        assert!((q.risk_delta + 0.231).abs() < 5e-4);
        assert_eq!(q.intent_drift, 0.0);

        let mut hits = vec![true; 4];
        hits.extend(vec![false; 12]);
        assert_eq!(quartile_learning(&gate_steps(&hits, 1.0)).unwrap().risk_delta, -1.0);
        assert_eq!(quartile_learning(&gate_steps(&hits[..7], 1.0)), Err(StatsError::InsufficientHorizon(7)));
    }

    fn bundle(v: f64) -> MetricsBundle {
        MetricsBundle {
            steps: 10,
            periods_per_year: 52.0,
            total_return: v,
            sharpe: None,
            volatility: v.abs(),
            max_drawdown: -v.abs(),
            final_equity: 100.0 * (1.0 + v),
            order_count: 0,
            fill_count: 0,
            turnover_events: 0,
            hold_ratio: 1.0,
            requested_qty: 0.0,
            filled_qty: 0.0,
            fill_rate: 1.0,
            partial_fill_rate: 0.0,
            rejected: 0,
            pending: 0,
            commissions: 0.0,
            slippage: 0.0,
            clipped: 0,
            blocked: 0,
            failed_checks: 0,
            warnings: 0,
            violations: 0,
            mean_calibration_score: 1.0,
            mean_intended_exposure: 0.0,
            herfindahl: None,
        }
    }

    #[test]
    fn sweep_shapes() {
        let seeds = |off: f64| -> SeedRuns { (1..=30).map(|s| (s, bundle(s as f64 * 0.01 + off))).collect() };
        let runs: Vec<(String, SeedRuns)> =
            (0..5).map(|i| (format!("case{i}"), seeds(if i == 1 { 0.0 } else { i as f64 }))).collect();
        let t = sweep_aggregate(&runs, "case0", &["total_return", "sharpe"]).unwrap();
        let paired: Vec<_> = t.paired.iter().filter(|r| r.metric == "total_return").collect();
        assert_eq!(paired.len(), 4);
        assert_eq!(paired[0].case, "case1");
        assert_eq!(paired[0].stats.mean_diff, 0.0);
        assert!(t.summary.iter().all(|r| r.metric != "sharpe"));

        let mut bad = runs.clone();
        bad[2].1.remove(&7);
        assert!(matches!(sweep_aggregate(&bad, "case0", &["total_return"]), Err(StatsError::UnbalancedDesign { .. })));
    }

    #[test]
    fn ci_width_scales_with_root_n() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let mut width = |n: usize| {
            let mut total = 0.0;
            for _ in 0..400 {
                let a: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
                let s = paired_stats(&a, &vec![0.0; n]).unwrap();
                total += s.ci_high - s.ci_low;
            }
            total / 400.0
        };
        let (w30, w120) = (width(30), width(120));
        assert!((w120 / w30 - 0.5).abs() < 0.05, "{}", w120 / w30);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn antisymmetry_and_identity(pairs in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 2..20)) {
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let ab = paired_stats(&a, &b).unwrap();
            let ba = paired_stats(&b, &a).unwrap();
            prop_assert!((ab.mean_diff + ba.mean_diff).abs() <= 1e-12 * (1.0 + ab.mean_diff.abs()));
            prop_assert!((ab.p_value - ba.p_value).abs() <= 1e-12);
            prop_assert_eq!(paired_stats(&a, &a).unwrap().mean_diff, 0.0);
            prop_assert!((ab.win_rate + ab.loss_rate + ab.tie_rate - 1.0).abs() < 1e-12);
            prop_assert!(ab.ci_low <= ab.mean_diff && ab.mean_diff <= ab.ci_high);
            prop_assert!((0.0..=1.0).contains(&ab.p_value));
        }
    }
}
