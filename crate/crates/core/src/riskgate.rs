//! Pre-trade risk gate: per-name, gross and turnover caps on intended
//! weights, with clip/block accounting and a calibration score.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{DecisionRecord, Weights};

/// Slack below which a cap counts as satisfied; keeps the gate idempotent
/// under floating-point round-off.
const CAP_EPS: f64 = 1e-12;

/// Breach size (in weight units) that counts as a violation. Smaller
/// overshoots come from price drift and round-off and are simply recapped.
pub const VIOLATION_TOL: f64 = 0.01;

/// Material cap breaches in a book: names over `max_position` plus one for
/// gross over `max_gross`, each beyond `VIOLATION_TOL`.
pub fn count_violations(w: &Weights, policy: &RiskPolicy) -> u64 {
    w.values().filter(|v| v.abs() > policy.max_position + VIOLATION_TOL).count() as u64
        + u64::from(gross(w) > policy.max_gross + VIOLATION_TOL)
}

/// Intended gross above `BLOCK_FACTOR * max_gross` blocks the decision.
pub const BLOCK_FACTOR: f64 = 2.0;

#[derive(Debug, Error, PartialEq)]
pub enum RiskError {
    #[error("invalid-policy: {0}")]
    InvalidPolicy(String),
    #[error("inconsistent-report: symbol {0} present in the decision but not in the report")]
    InconsistentReport(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskPolicy {
    pub max_position: f64,
    pub max_turnover: f64,
    pub max_gross: f64,
    pub enabled: bool,
}

impl RiskPolicy {
    pub const fn new(max_position: f64, max_turnover: f64, max_gross: f64) -> Self {
        Self { max_position, max_turnover, max_gross, enabled: true }
    }

    pub fn strict() -> Self {
        Self::new(0.20, 0.03, 1.0)
    }

    pub fn default_policy() -> Self {
        Self::new(0.35, 0.05, 1.0)
    }

    pub fn loose() -> Self {
        Self::new(0.50, 0.08, 1.0)
    }

    /// Tight single-name cap for wide intraday universes.
    pub fn intraday() -> Self {
        Self::new(0.08, 0.095, 1.0)
    }

    pub fn disabled() -> Self {
        Self { enabled: false, ..Self::default_policy() }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "strict" => Some(Self::strict()),
            "default" => Some(Self::default_policy()),
            "loose" => Some(Self::loose()),
            "intraday" => Some(Self::intraday()),
            "disabled" | "none" => Some(Self::disabled()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), RiskError> {
        if !self.enabled {
            return Ok(());
        }
        for (name, v) in [
            ("max_position", self.max_position),
            ("max_turnover", self.max_turnover),
            ("max_gross", self.max_gross),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(RiskError::InvalidPolicy(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// True when `w` satisfies the position and gross caps within `tol`.
    pub fn admits(&self, w: &Weights, tol: f64) -> bool {
        !self.enabled
            || (w.values().all(|v| v.abs() <= self.max_position + tol) && gross(w) <= self.max_gross + tol)
    }
}

impl Default for RiskPolicy {
    fn default() -> Self {
        Self::default_policy()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub approved_weights: Weights,
    pub clipped_count: u64,
    pub blocked_count: u64,
    pub failed_checks: u64,
    pub warning_checks: u64,
    pub violations: u64,
    pub calibration_gap: f64,
    pub calibration_score: f64,
    /// Gross intended exposure `Σ|w_intended|`.
    pub intended_exposure: f64,
    pub notes: Vec<String>,
}

pub fn gross(w: &Weights) -> f64 {
    w.values().map(|v| v.abs()).sum()
}

fn weight(w: &Weights, s: &str) -> f64 {
    w.get(s).copied().unwrap_or(0.0)
}

/// `1 − min(1, gap / max(1, exposure))`.
pub fn calibration_score(gap: f64, exposure: f64) -> f64 {
    1.0 - (gap / exposure.max(1.0)).min(1.0)
}

fn turnover(a: &Weights, prev: &Weights, symbols: &BTreeSet<String>) -> f64 {
    symbols.iter().map(|s| (weight(a, s) - weight(prev, s)).abs()).sum()
}

fn clip_positions(w: &mut Weights, cap: f64) -> Vec<String> {
    let mut clipped = Vec::new();
    for (s, v) in w.iter_mut() {
        if v.abs() > cap + CAP_EPS {
            *v = cap.copysign(*v);
            clipped.push(s.clone());
        }
    }
    clipped
}

fn scale_gross(w: &mut Weights, cap: f64) -> Option<f64> {
    let g = gross(w);
    if g > cap + CAP_EPS {
        let k = cap / g;
        w.values_mut().for_each(|v| *v *= k);
        Some(g)
    } else {
        None
    }
}

pub fn evaluate(intended: &DecisionRecord, prev_weights: &Weights, policy: &RiskPolicy) -> RiskReport {
    let exposure = gross(&intended.intended_weights);
    if !policy.enabled {
        return RiskReport {
            approved_weights: intended.intended_weights.clone(),
            calibration_score: 1.0,
            intended_exposure: exposure,
            notes: vec!["gate disabled".into()],
            ..RiskReport::default()
        };
    }

    let symbols: BTreeSet<String> =
        intended.intended_weights.keys().chain(prev_weights.keys()).cloned().collect();
    let full = |w: &Weights| -> Weights { symbols.iter().map(|s| (s.clone(), weight(w, s))).collect() };
    let intent = full(&intended.intended_weights);
    let prev = full(prev_weights);

    let mut r = RiskReport { intended_exposure: exposure, ..RiskReport::default() };
    r.violations = count_violations(&prev, policy);

    let mut approved;
    if exposure > BLOCK_FACTOR * policy.max_gross {
        r.blocked_count += 1;
        r.failed_checks += 1;
        r.notes.push(format!(
            "block: intended gross {exposure:.6} exceeds {BLOCK_FACTOR}x max_gross {:.6}; holding previous weights",
            policy.max_gross
        ));
        approved = prev.clone();
    } else {
        approved = intent.clone();
        for s in clip_positions(&mut approved, policy.max_position) {
            r.clipped_count += 1;
            r.notes.push(format!(
                "clip: {s} {:.6} -> {:.6} (max_position {:.6})",
                intent[&s], approved[&s], policy.max_position
            ));
        }
        if let Some(g) = scale_gross(&mut approved, policy.max_gross) {
            r.warning_checks += 1;
            r.notes.push(format!("gross: {g:.6} scaled to max_gross {:.6}", policy.max_gross));
        }
        let t = turnover(&approved, &prev, &symbols);
        if t > policy.max_turnover + CAP_EPS {
            let k = policy.max_turnover / t;
            for (s, v) in approved.iter_mut() {
                let p = prev[s];
                *v = p + (*v - p) * k;
            }
            r.warning_checks += 1;
            r.notes.push(format!("turnover: {t:.6} shrunk to max_turnover {:.6}", policy.max_turnover));
        }
    }

    // Holding a previous book that already breaches the caps: caps win over
    // the turnover limit.
    if !policy.admits(&approved, CAP_EPS) {
        clip_positions(&mut approved, policy.max_position);
        scale_gross(&mut approved, policy.max_gross);
        r.failed_checks += 1;
        r.notes.push("recap: previous weights breach caps; forced back inside".into());
    }

    r.calibration_gap = symbols.iter().map(|s| (intent[s] - approved[s]).abs()).sum();
    r.calibration_score = calibration_score(r.calibration_gap, exposure);
    approved.retain(|s, v| *v != 0.0 || intended.intended_weights.contains_key(s));
    r.approved_weights = approved;
    r
}

/// Recompute `(gap, score)` from a decision and the report it produced.
pub fn calibration(intended: &DecisionRecord, report: &RiskReport) -> Result<(f64, f64), RiskError> {
    if let Some(s) = intended.intended_weights.keys().find(|s| !report.approved_weights.contains_key(*s)) {
        return Err(RiskError::InconsistentReport(s.clone()));
    }
    let symbols: BTreeSet<&String> =
        intended.intended_weights.keys().chain(report.approved_weights.keys()).collect();
    let gap = symbols
        .iter()
        .map(|s| (weight(&intended.intended_weights, s) - weight(&report.approved_weights, s)).abs())
        .sum();
    let exposure = gross(&intended.intended_weights);
    Ok((gap, calibration_score(gap, exposure)))
}
