//! Closed-log unsupported-claim proxy: four mechanically auditable rule
//! families over recorded rationales, their correlation with the risk and
//! execution audit, and the blind annotation export with κ / IoU scoring.
//!
//! Constants: directional threshold 0.2, confidence 0.7, weak bar move 0.2%,
//! equal component weights 0.25.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::SeedableRng;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::RiskMemory;
use crate::text::find_term;
use crate::trajectory::TrajectoryStep;

pub const DIRECTION_MIN: f64 = 0.2;
pub const CONFIDENCE_MIN: f64 = 0.7;
pub const WEAK_MOVE: f64 = 0.002;
pub const COMPONENT_WEIGHT: f64 = 0.25;
pub const HIGH_PROXY: f64 = 0.25;
pub const EXCERPT_CHARS: usize = 200;

/// External-context lexicon; a term counts as unsupported when the prompt
/// does not contain it.
pub const CONTEXT_LEXICON: &[&str] = &[
    "news",
    "headline",
    "headlines",
    "earnings",
    "guidance",
    "regulation",
    "regulatory",
    "regulator",
    "macro",
    "macroeconomic",
    "fed",
    "inflation",
    "on-chain",
    "onchain",
    "support",
    "resistance",
    "breakout",
    "breakdown",
];

/// Phrases asserting a clean risk history.
pub const NO_PRIOR_RISK_PATTERNS: &[&str] = &[
    "no risk so far",
    "no prior risk",
    "no previous risk",
    "no risk events",
    "no risk issues",
    "no violations",
    "no prior violations",
    "no rejections",
    "no rejected orders",
    "clean risk record",
];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProxyComponents {
    pub unsupported_context: bool,
    pub directional_contradiction: bool,
    pub overconfident_weak: bool,
    pub stale_no_risk: bool,
}

impl ProxyComponents {
    pub fn count(&self) -> usize {
        [self.unsupported_context, self.directional_contradiction, self.overconfident_weak, self.stale_no_risk]
            .iter()
            .filter(|c| **c)
            .count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub component: String,
    /// Field the evidence came from (`rationale`, `directional_scores.X`, ...).
    pub field: String,
    /// Byte span into the rationale for lexical matches.
    pub span: Option<(usize, usize)>,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProxyScore {
    pub step: usize,
    /// False for steps without a rationale (held, CoT-free or empty).
    pub eligible: bool,
    pub components: ProxyComponents,
    pub score: f64,
    pub evidence: Vec<Evidence>,
}

fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// `memory` is the state before this step.
pub fn proxy_score(step: &TrajectoryStep, prompt: &str, memory: &RiskMemory) -> ProxyScore {
    let mut out =
        ProxyScore { step: step.step, eligible: false, components: ProxyComponents::default(), score: 0.0, evidence: vec![] };
    let Some(d) = step.decision.as_ref().filter(|d| !d.cot_free && !d.rationale.trim().is_empty()) else {
        return out;
    };
    out.eligible = true;
    let r = &d.rationale;
    let mut ev = Vec::new();
    let mut c = ProxyComponents::default();

    for term in CONTEXT_LEXICON {
        let hits = find_term(r, term);
        if !hits.is_empty() && find_term(prompt, term).is_empty() {
            c.unsupported_context = true;
            for (a, b) in hits {
                ev.push(Evidence { component: "unsupported_context".into(), field: "rationale".into(), span: Some((a, b)), text: r[a..b].to_string() });
            }
        }
    }

    let bars = step.observation.as_deref().unwrap_or(&[]);
    for b in bars {
        if let Some(&s) = d.directional_scores.get(&b.symbol) {
            let mv = sign(b.close - b.open);
            // A flat bar carries no direction to contradict.
            if s.abs() >= DIRECTION_MIN && mv != 0 && sign(s) != mv {
                c.directional_contradiction = true;
                ev.push(Evidence {
                    component: "directional_contradiction".into(),
                    field: format!("directional_scores.{}", b.symbol),
                    span: None,
                    text: format!("score {s:+.4} vs bar move {:+.6}", b.close / b.open - 1.0),
                });
            }
        }
    }

    // Weak evidence: even the largest intrabar move is below the threshold.
    let strongest = bars.iter().map(|b| (b.close / b.open - 1.0).abs()).fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.max(x))));
    if let Some(mv) = strongest.filter(|mv| d.confidence >= CONFIDENCE_MIN && *mv < WEAK_MOVE) {
        c.overconfident_weak = true;
        ev.push(Evidence {
            component: "overconfident_weak".into(),
            field: "confidence".into(),
            span: None,
            text: format!("confidence {:.3} with max bar move {:.6}", d.confidence, mv),
        });
    }

    let prior = memory.violations_total + memory.rejected_total;
    if prior >= 1 {
        for pat in NO_PRIOR_RISK_PATTERNS {
            for (a, b) in find_term(r, pat) {
                c.stale_no_risk = true;
                ev.push(Evidence { component: "stale_no_risk".into(), field: "rationale".into(), span: Some((a, b)), text: r[a..b].to_string() });
            }
        }
        if c.stale_no_risk {
            ev.push(Evidence {
                component: "stale_no_risk".into(),
                field: "memory".into(),
                span: None,
                text: format!("{} violations, {} rejects before this step", memory.violations_total, memory.rejected_total),
            });
        }
    }

    out.score = (COMPONENT_WEIGHT * c.count() as f64).min(1.0);
    out.components = c;
    out.evidence = ev;
    out
}

// ---------------------------------------------------------------------------
// Audit correlations

/// Pearson correlation; `None` when either series has zero variance or
/// fewer than three points.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    if n < 3 || y.len() != n {
        return None;
    }
    let (mx, my) = (x.iter().sum::<f64>() / n as f64, y.iter().sum::<f64>() / n as f64);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditCorrelations {
    pub n: usize,
    pub mean_score: f64,
    /// Absent (`None`) means zero variance in one of the series.
    pub corr_risk_gate: Option<f64>,
    pub corr_violations: Option<f64>,
    pub corr_calibration_gap: Option<f64>,
    pub corr_rejected: Option<f64>,
    pub gate_rate_high_proxy: Option<f64>,
    pub gate_rate_low_proxy: Option<f64>,
    pub notes: Vec<String>,
}

pub fn gate_indicator(s: &TrajectoryStep) -> f64 {
    let r = s.risk_report.as_ref();
    let hit = r.is_some_and(|r| r.clipped_count > 0 || r.blocked_count > 0 || r.violations > 0) || s.realized_violations > 0;
    if hit { 1.0 } else { 0.0 }
}

/// Correlates eligible scores with the audit series of the matching steps.
pub fn audit_correlations(scores: &[ProxyScore], steps: &[TrajectoryStep]) -> AuditCorrelations {
    let by_step: BTreeMap<usize, &TrajectoryStep> = steps.iter().map(|s| (s.step, s)).collect();
    let pairs: Vec<(f64, &TrajectoryStep)> =
        scores.iter().filter(|p| p.eligible).filter_map(|p| by_step.get(&p.step).map(|s| (p.score, *s))).collect();
    let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let series = |f: &dyn Fn(&TrajectoryStep) -> f64| -> Vec<f64> { pairs.iter().map(|p| f(p.1)).collect() };
    let gate = series(&gate_indicator);
    let viol = series(&|s| (s.realized_violations + s.risk_report.as_ref().map_or(0, |r| r.violations)) as f64);
    let gap = series(&|s| s.risk_report.as_ref().map_or(0.0, |r| r.calibration_gap));
    let rej = series(&|s| s.execution.as_ref().map_or(0.0, |e| e.rejected as f64));

    let rate = |high: bool| {
        let g: Vec<f64> = pairs.iter().zip(&gate).filter(|((sc, _), _)| (*sc >= HIGH_PROXY) == high).map(|(_, g)| *g).collect();
        (!g.is_empty()).then(|| g.iter().sum::<f64>() / g.len() as f64)
    };
    let mut out = AuditCorrelations {
        n: x.len(),
        mean_score: if x.is_empty() { 0.0 } else { x.iter().sum::<f64>() / x.len() as f64 },
        corr_risk_gate: pearson(&x, &gate),
        corr_violations: pearson(&x, &viol),
        corr_calibration_gap: pearson(&x, &gap),
        corr_rejected: pearson(&x, &rej),
        gate_rate_high_proxy: rate(true),
        gate_rate_low_proxy: rate(false),
        notes: vec![],
    };
    if x.len() < 3 {
        out.notes.push(format!("only {} eligible steps; correlations absent", x.len()));
    }
    for (name, v) in [
        ("risk_gate", out.corr_risk_gate),
        ("violations", out.corr_violations),
        ("calibration_gap", out.corr_calibration_gap),
        ("rejected", out.corr_rejected),
    ] {
        if v.is_none() && x.len() >= 3 {
            out.notes.push(format!("{name}: absent (zero variance; tabulated as 0.000)"));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Annotation export and agreement

pub const ANNOTATION_COLUMNS: [&str; 6] = ["step_id", "rationale_excerpt", "proxy_label", "annotator_1", "annotator_2", "adjudicated"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRow {
    pub step_id: usize,
    pub rationale_excerpt: String,
    pub proxy_label: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSample {
    pub rows: Vec<AnnotationRow>,
    pub notes: Vec<String>,
}

impl AnnotationSample {
    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(ANNOTATION_COLUMNS)?;
        for r in &self.rows {
            wr.write_record([r.step_id.to_string(), r.rationale_excerpt.clone(), r.proxy_label.to_string(), String::new(), String::new(), String::new()])?;
        }
        wr.flush()
    }
}

/// Seeded sample without replacement, split as evenly as the strata allow
/// between high-proxy (score ≥ 0.25) and low-proxy steps; rows in step order.
pub fn export_annotation_sample(steps: &[TrajectoryStep], scores: &[ProxyScore], n: usize, seed: u64) -> AnnotationSample {
    let by_step: BTreeMap<usize, &TrajectoryStep> = steps.iter().map(|s| (s.step, s)).collect();
    let eligible: Vec<&ProxyScore> = scores.iter().filter(|p| p.eligible && by_step.contains_key(&p.step)).collect();
    let mut notes = Vec::new();
    if eligible.len() < n {
        notes.push(format!("warning: only {} eligible steps for a sample of {n}", eligible.len()));
    }
    let k = n.min(eligible.len());
    let (mut high, mut low): (Vec<&ProxyScore>, Vec<&ProxyScore>) = eligible.into_iter().partition(|p| p.score >= HIGH_PROXY);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    high.shuffle(&mut rng);
    low.shuffle(&mut rng);
    let h0 = high.len().min(k.div_ceil(2));
    let l = low.len().min(k - h0);
    let h = high.len().min(k - l);
    let mut picked: Vec<&ProxyScore> = high.into_iter().take(h).chain(low.into_iter().take(l)).collect();
    picked.sort_by_key(|p| p.step);
    let rows = picked
        .into_iter()
        .map(|p| {
            let r = by_step[&p.step].decision.as_ref().map_or("", |d| d.rationale.as_str());
            AnnotationRow {
                step_id: p.step,
                rationale_excerpt: r.chars().take(EXCERPT_CHARS).collect(),
                proxy_label: u8::from(p.score >= HIGH_PROXY),
            }
        })
        .collect();
    AnnotationSample { rows, notes }
}

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("incomplete annotation: rows {0:?} lack binary labels")]
    Incomplete(Vec<usize>),
    #[error("malformed annotation file: {0}")]
    Malformed(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub n: usize,
    pub kappa: f64,
    pub iou: f64,
}

/// Cohen's κ for two binary label columns. When chance agreement is 1 (both
/// annotators constant and equal) κ is defined as 1.
pub fn cohen_kappa(a: &[bool], b: &[bool]) -> f64 {
    let n = a.len() as f64;
    let mut t = [[0.0f64; 2]; 2];
    for (x, y) in a.iter().zip(b) {
        t[usize::from(*x)][usize::from(*y)] += 1.0;
    }
    let po = (t[0][0] + t[1][1]) / n;
    let pa1 = (t[1][0] + t[1][1]) / n;
    let pb1 = (t[0][1] + t[1][1]) / n;
    let pe = pa1 * pb1 + (1.0 - pa1) * (1.0 - pb1);
    if (1.0 - pe).abs() < 1e-15 { 1.0 } else { (po - pe) / (1.0 - pe) }
}

/// |A ∩ B| / |A ∪ B|; two empty sets give 1.
pub fn iou(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count();
    if union == 0 { 1.0 } else { inter as f64 / union as f64 }
}

/// Reads a completed annotation CSV; row numbers in errors are 1-based data rows.
pub fn annotation_agreement<R: Read>(r: R) -> Result<Agreement, AnnotationError> {
    let mut rd = csv::Reader::from_reader(r);
    let headers = rd.headers().map_err(|e| AnnotationError::Malformed(e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| AnnotationError::Malformed(format!("missing column {name}")));
    let (cp, c1, c2, ca) = (col("proxy_label")?, col("annotator_1")?, col("annotator_2")?, col("adjudicated")?);
    let label = |s: &str| match s.trim() {
        "0" => Some(false),
        "1" => Some(true),
        _ => None,
    };
    let (mut proxy, mut a1, mut a2, mut adj, mut missing) = (vec![], vec![], vec![], vec![], vec![]);
    for (i, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| AnnotationError::Malformed(e.to_string()))?;
        let get = |c: usize| label(rec.get(c).unwrap_or(""));
        match (get(cp), get(c1), get(c2), get(ca)) {
            (Some(p), Some(x), Some(y), Some(z)) => {
                proxy.push(p);
                a1.push(x);
                a2.push(y);
                adj.push(z);
            }
            _ => missing.push(i + 1),
        }
    }
    if !missing.is_empty() {
        return Err(AnnotationError::Incomplete(missing));
    }
    if a1.is_empty() {
        return Err(AnnotationError::Malformed("no annotated rows".into()));
    }
    Ok(Agreement { n: a1.len(), kappa: cohen_kappa(&a1, &a2), iou: iou(&proxy, &adj) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{DecisionRecord, StepEvents};
    use crate::riskgate::RiskReport;
    use crate::trajectory::BarSnapshot;
    use proptest::prelude::*;
    use rand::Rng;

    fn bar(sym: &str, open: f64, close: f64) -> BarSnapshot {
        BarSnapshot { symbol: sym.into(), open, high: open.max(close), low: open.min(close), close, volume: 1e6 }
    }

    fn step_with(rationale: &str, confidence: f64, score: f64, open: f64, close: f64) -> TrajectoryStep {
        let mut s = TrajectoryStep::empty(3);
        let mut d = DecisionRecord::from_weights(3, [("A".to_string(), 0.1)].into());
        d.rationale = rationale.into();
        d.confidence = confidence;
        d.directional_scores = [("A".to_string(), score)].into();
        s.decision = Some(d);
        s.observation = Some(vec![bar("A", open, close)]);
        s
    }

    fn memory_with_violations(k: u64) -> RiskMemory {
        let mut m = RiskMemory::default();
        for i in 0..k {
            m.record(StepEvents { step: i as usize, violations: 1, ..StepEvents::default() }, 1e6);
        }
        m
    }

    #[test]
    fn stale_no_risk_fires_after_violations() {
        let s = step_with("No risk so far, adding exposure.", 0.5, 0.1, 100.0, 101.0);
        let p = proxy_score(&s, "prompt", &memory_with_violations(2));
        assert!(p.components.stale_no_risk);
        assert_eq!(p.score, 0.25);
        assert!(p.evidence.iter().any(|e| e.component == "stale_no_risk" && e.span == Some((0, 14))));
        let clean = proxy_score(&s, "prompt", &RiskMemory::default());
        assert!(!clean.components.stale_no_risk);
    }

    #[test]
    fn empty_rationale_scores_zero() {
        let s = step_with("", 0.95, -0.9, 100.0, 100.01);
        let p = proxy_score(&s, "", &memory_with_violations(3));
        assert!(!p.eligible);
        assert_eq!(p.score, 0.0);
        let mut cot = step_with("earnings", 0.95, -0.9, 100.0, 100.01);
        cot.decision.as_mut().unwrap().cot_free = true;
        assert_eq!(proxy_score(&cot, "", &RiskMemory::default()).score, 0.0);
    }

    #[test]
    fn two_components_give_half() {
        // earnings absent from the prompt; confidence 0.9 on a 0.05% move
        let s = step_with("Strong EARNINGS beat supports the view.", 0.9, 0.1, 100.0, 100.05);
        let p = proxy_score(&s, "A: close=100.05", &RiskMemory::default());
        assert!(p.components.unsupported_context && p.components.overconfident_weak);
        assert!(!p.components.directional_contradiction && !p.components.stale_no_risk);
        assert_eq!(p.score, 0.5);
    }

    #[test]
    fn rule_families_positive_and_negative() {
        let m = RiskMemory::default();
        // unsupported context vs the same term present in the prompt
        let s = step_with("Breakout above resistance.", 0.5, 0.1, 100.0, 101.0);
        assert!(proxy_score(&s, "no context", &m).components.unsupported_context);
        assert!(!proxy_score(&s, "breakout and resistance levels", &m).components.unsupported_context);
        // directional contradiction vs agreement
        assert!(proxy_score(&step_with("trend", 0.5, -0.5, 100.0, 101.0), "", &m).components.directional_contradiction);
        assert!(!proxy_score(&step_with("trend", 0.5, 0.5, 100.0, 101.0), "", &m).components.directional_contradiction);
        assert!(!proxy_score(&step_with("trend", 0.5, -0.1, 100.0, 101.0), "", &m).components.directional_contradiction);
        // overconfidence on a weak vs strong bar
        assert!(proxy_score(&step_with("trend", 0.7, 0.1, 100.0, 100.1), "", &m).components.overconfident_weak);
        assert!(!proxy_score(&step_with("trend", 0.7, 0.1, 100.0, 101.0), "", &m).components.overconfident_weak);
        assert!(!proxy_score(&step_with("trend", 0.69, 0.1, 100.0, 100.1), "", &m).components.overconfident_weak);
        // every firing component carries evidence
        let all = step_with("News says no risk so far.", 0.9, -0.5, 100.0, 100.1);
        let p = proxy_score(&all, "", &memory_with_violations(1));
        assert_eq!(p.components.count(), 4);
        assert_eq!(p.score, 1.0);
        for c in ["unsupported_context", "directional_contradiction", "overconfident_weak", "stale_no_risk"] {
            assert!(p.evidence.iter().any(|e| e.component == c), "{c}");
        }
    }

    fn audited(score_rej: &[(f64, u64)]) -> (Vec<ProxyScore>, Vec<TrajectoryStep>) {
        let mut scores = vec![];
        let mut steps = vec![];
        for (i, (sc, rej)) in score_rej.iter().enumerate() {
            let mut s = TrajectoryStep::empty(i);
            s.risk_report = Some(RiskReport::default());
            s.execution = Some(crate::execsim::ExecutionOutcome { rejected: *rej, ..Default::default() });
            steps.push(s);
            scores.push(ProxyScore { step: i, eligible: true, components: ProxyComponents::default(), score: *sc, evidence: vec![] });
        }
        (scores, steps)
    }

    #[test]
    fn correlation_cases() {
        let (sc, st) = audited(&[(0.0, 0), (0.25, 1), (0.5, 2), (0.75, 3)]);
        let c = audit_correlations(&sc, &st);
        assert!((c.corr_rejected.unwrap() - 1.0).abs() < 1e-12);
        // gate never fires: absent, as in a no-risk run
        assert_eq!(c.corr_risk_gate, None);
        assert!(c.notes.iter().any(|n| n.starts_with("risk_gate: absent")));
        let (sc, st) = audited(&[(0.25, 0), (0.25, 1), (0.25, 2)]);
        let c = audit_correlations(&sc, &st);
        assert!(c.corr_rejected.is_none() && c.corr_calibration_gap.is_none() && c.corr_violations.is_none());
    }

    fn eligible_run(n: usize) -> (Vec<ProxyScore>, Vec<TrajectoryStep>) {
        let steps: Vec<TrajectoryStep> =
            (0..n).map(|i| { let mut s = step_with(&format!("view {i}"), 0.5, 0.1, 100.0, 101.0); s.step = i; s }).collect();
        let scores = steps
            .iter()
            .map(|s| ProxyScore { step: s.step, eligible: true, components: ProxyComponents::default(), score: if s.step % 3 == 0 { 0.25 } else { 0.0 }, evidence: vec![] })
            .collect();
        (scores, steps)
    }

    #[test]
    fn annotation_export() {
        let (sc, st) = eligible_run(52);
        let a = export_annotation_sample(&st, &sc, 50, 9);
        assert_eq!(a.rows.len(), 50);
        assert!(a.notes.is_empty());
        assert!(a.rows.iter().any(|r| r.proxy_label == 1) && a.rows.iter().any(|r| r.proxy_label == 0));
        let (mut x, mut y) = (vec![], vec![]);
        a.write_csv(&mut x).unwrap();
        export_annotation_sample(&st, &sc, 50, 9).write_csv(&mut y).unwrap();
        assert_eq!(x, y);
        let text = String::from_utf8(x).unwrap();
        assert!(text.starts_with("step_id,rationale_excerpt,proxy_label,annotator_1,annotator_2,adjudicated\n"));

        let mut empty = st.clone();
        empty.iter_mut().for_each(|s| s.decision.as_mut().unwrap().rationale.clear());
        let sc0: Vec<ProxyScore> = empty.iter().map(|s| proxy_score(s, "", &RiskMemory::default())).collect();
        let a = export_annotation_sample(&empty, &sc0, 50, 9);
        assert!(a.rows.is_empty());
        assert!(a.notes[0].starts_with("warning"));
    }

    #[test]
    fn agreement_from_csv() {
        let full = "step_id,rationale_excerpt,proxy_label,annotator_1,annotator_2,adjudicated\n1,a,1,1,1,1\n2,b,0,0,0,0\n3,c,1,1,1,1\n";
        let g = annotation_agreement(full.as_bytes()).unwrap();
        assert_eq!((g.kappa, g.iou, g.n), (1.0, 1.0, 3));
        let partial = "step_id,rationale_excerpt,proxy_label,annotator_1,annotator_2,adjudicated\n1,a,1,1,,1\n2,b,0,0,0,0\n3,c,1,x,1,1\n";
        match annotation_agreement(partial.as_bytes()) {
            Err(AnnotationError::Incomplete(rows)) => assert_eq!(rows, vec![1, 3]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn independent_annotators_kappa_near_zero() {
        let mut r = ChaCha8Rng::seed_from_u64(11);
        // Under the null κ ≈ N(0, 1/n): P(|κ| ≥ 0.3) ≈ 0.034 at n = 50.
        let (mut big, mut sum) = (0, 0.0);
        for _ in 0..200 {
            let a: Vec<bool> = (0..50).map(|_| r.random_bool(0.5)).collect();
            let b: Vec<bool> = (0..50).map(|_| r.random_bool(0.5)).collect();
            let k = cohen_kappa(&a, &b);
            sum += k;
            if k.abs() >= 0.3 {
                big += 1;
            }
        }
        assert!(big <= 14, "{big} of 200 null draws had |κ| ≥ 0.3");
        assert!((sum / 200.0).abs() < 0.05);
    }

    /// κ from the explicit 2×2 contingency table.
    fn kappa_table(n00: usize, n01: usize, n10: usize, n11: usize) -> f64 {
        let n = (n00 + n01 + n10 + n11) as f64;
        let po = (n00 + n11) as f64 / n;
        let row1 = (n10 + n11) as f64 / n;
        let col1 = (n01 + n11) as f64 / n;
        let pe = row1 * col1 + (1.0 - row1) * (1.0 - col1);
        if pe == 1.0 { 1.0 } else { (po - pe) / (1.0 - pe) }
    }

    #[test]
    fn kappa_matches_contingency_tables() {
        for n00 in 0..=10 {
            for n01 in 0..=10 {
                for n10 in 0..=10 {
                    for n11 in 0..=10 {
                        if n00 + n01 + n10 + n11 == 0 {
                            continue;
                        }
                        let mut a = vec![];
                        let mut b = vec![];
                        for (k, x, y) in [(n00, false, false), (n01, false, true), (n10, true, false), (n11, true, true)] {
                            a.extend(std::iter::repeat_n(x, k));
                            b.extend(std::iter::repeat_n(y, k));
                        }
                        let got = cohen_kappa(&a, &b);
                        let want = kappa_table(n00, n01, n10, n11);
                        assert!((got - want).abs() < 1e-12, "{n00} {n01} {n10} {n11}: {got} vs {want}");
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn adding_a_component_never_lowers_the_score(conf in 0.0f64..1.0, sc in -1.0f64..1.0, mv in -0.01f64..0.01) {
            let base = step_with("holding the trend", conf, sc, 100.0, 100.0 * (1.0 + mv));
            let with_term = step_with("holding the trend after earnings", conf, sc, 100.0, 100.0 * (1.0 + mv));
            let m = RiskMemory::default();
            let a = proxy_score(&base, "", &m);
            let b = proxy_score(&with_term, "", &m);
            prop_assert!(b.score >= a.score);
            prop_assert_eq!(b.components.count(), a.components.count() + 1);
            prop_assert_eq!(proxy_score(&base, "", &m), a);
        }
    }
}
