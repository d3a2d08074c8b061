//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Runs without the libtest harness so every line is printed
//! regardless of outcome.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tradebench::agents::{DecisionRecord, RiskMemory, StepEvents, Weights};
use tradebench::dataio::effective_independent_count;
use tradebench::halluprobe::{cohen_kappa, iou, proxy_score};
use tradebench::metrics::{herfindahl, max_drawdown, MetricsBundle};
use tradebench::orchestrator::{load_config, run_case, run_family, ExperimentConfig, ReprOptions, RunOptions, RunOutput};
use tradebench::reprdiag::{
    loo_balanced_accuracy, manifold_diagnostics, token_entropy, type_token_ratio, lexical_controls, EmbeddingView,
    Phase, PhaseLabeling, ViewKind, ViewSource,
};
use tradebench::riskgate::{calibration_score, evaluate, RiskPolicy};
use tradebench::stats::paired_stats;
use tradebench::trajectory::{self, BarSnapshot, TrajectoryStep};

type Outcome = Result<String, String>;

fn config() -> Vec<ExperimentConfig> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/experiments.json");
    load_config(&path).expect("experiments config loads")
}

fn family(name: &str) -> ExperimentConfig {
    config().into_iter().find(|f| f.name == name).expect("family present")
}

fn run(cfg: &ExperimentConfig, case: &str, seed: u64) -> RunOutput {
    let out = run_case(cfg, case, seed, None).expect("run succeeds");
    assert!(out.incomplete.is_none(), "{case} seed {seed} incomplete");
    out
}

fn bundle(out: &RunOutput) -> &MetricsBundle {
    out.bundle.as_ref().expect("complete run has a bundle")
}

/// Every run made for criteria 1–4, kept for the replay check.
#[derive(Default)]
struct Runs(Vec<RunOutput>);

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_1(runs: &mut Runs) -> Outcome {
    let t0 = Instant::now();
    let cfg = family("core_sweep");
    let (mut ra, mut bh) = (vec![], vec![]);
    for s in cfg.run_seeds() {
        let a = run(&cfg, "risk_aware", s);
        let b = run(&cfg, "buy_hold", s);
        ra.push(bundle(&a).max_drawdown);
        bh.push(bundle(&b).max_drawdown);
        runs.0.extend([a, b]);
    }
    let elapsed = t0.elapsed();
    let wins = ra.iter().zip(&bh).filter(|(a, b)| a > b).count();
    let p = paired_stats(&ra, &bh).map_err(|e| e.to_string())?;
    let excludes_zero = p.ci_low > 0.0 || p.ci_high < 0.0;
    check(
        wins >= 27 && excludes_zero && elapsed < Duration::from_secs(120),
        format!(
            "drawdown wins {wins}/{}; paired CI [{:.4}, {:.4}]; {:.1}s",
            ra.len(),
            p.ci_low,
            p.ci_high,
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_2(runs: &mut Runs) -> Outcome {
    let t0 = Instant::now();
    let cfg = family("stress");
    let (mut fill_wins, mut rej_wins, mut n) = (0, 0, 0);
    for s in cfg.run_seeds() {
        let a = run(&cfg, "risk_aware", s);
        let b = run(&cfg, "no_risk", s);
        n += 1;
        fill_wins += usize::from(bundle(&a).fill_rate > bundle(&b).fill_rate);
        rej_wins += usize::from(bundle(&a).rejected < bundle(&b).rejected);
        runs.0.extend([a, b]);
    }
    let elapsed = t0.elapsed();
    check(
        n == 120 && fill_wins >= 115 && rej_wins >= 115 && elapsed < Duration::from_secs(300),
        format!("fill-rate wins {fill_wins}/{n}; fewer-rejects wins {rej_wins}/{n}; {:.1}s", elapsed.as_secs_f64()),
    )
}

fn criterion_3(runs: &mut Runs) -> Outcome {
    let cfg = family("execution");
    let mut ok = true;
    let mut parts = vec![];
    for s in cfg.run_seeds() {
        let i = run(&cfg, "ideal", s);
        let r = run(&cfg, "realistic", s);
        let l = run(&cfg, "latency", s);
        let (bi, br, bl) = (bundle(&i), bundle(&r), bundle(&l));
        ok &= bi.fill_rate > br.fill_rate && br.fill_rate > bl.fill_rate && bi.slippage == 0.0;
        parts.push(format!(
            "seed {s}: {:.4} / {:.4} / {:.4}, ideal slippage {}",
            bi.fill_rate, br.fill_rate, bl.fill_rate, bi.slippage
        ));
        runs.0.extend([i, r, l]);
    }
    check(ok, format!("fill rate ideal/realistic/latency; {}", parts.join("; ")))
}

fn criterion_4(runs: &mut Runs) -> Outcome {
    let cfg = family("sensitivity");
    let seeds = cfg.run_seeds();
    let mut vol = BTreeMap::new();
    let mut stream: Vec<DecisionRecord> = vec![];
    for case in ["strict", "default", "loose"] {
        let mut total = 0.0;
        for &s in &seeds {
            let out = run(&cfg, case, s);
            total += bundle(&out).volatility;
            if case == "default" {
                stream.extend(out.steps.iter().filter_map(|t| t.decision.clone()));
            }
            runs.0.push(out);
        }
        vol.insert(case, total / seeds.len() as f64);
    }
    let clipped = |p: RiskPolicy| -> u64 { stream.iter().map(|d| evaluate(d, &Weights::new(), &p).clipped_count).sum() };
    let (cs, cd, cl) = (clipped(RiskPolicy::strict()), clipped(RiskPolicy::default_policy()), clipped(RiskPolicy::loose()));
    check(
        vol["strict"] < vol["default"] && vol["default"] < vol["loose"] && cs >= cd && cd >= cl,
        format!(
            "volatility {:.6} < {:.6} < {:.6}; clipped {cs} >= {cd} >= {cl} over {} decisions",
            vol["strict"],
            vol["default"],
            vol["loose"],
            stream.len()
        ),
    )
}

fn criterion_5() -> Outcome {
    let w: Weights = (0..51).map(|i| (format!("S{i:02}"), 1.0 / 51.0)).collect();
    let h = herfindahl(&w).map_err(|e| e.to_string())?;
    let n_eff = effective_independent_count(0.219);
    check(
        (h - 1.0 / 51.0).abs() <= 1e-12 && (n_eff - 4.566).abs() <= 0.01,
        format!("herfindahl {h:.15}; effective count {n_eff:.4}"),
    )
}

fn criterion_6() -> Outcome {
    let mut intent: Weights = (0..49).map(|i| (format!("S{i:02}"), 0.0)).collect();
    intent.insert("GOOG".into(), 0.8);
    intent.insert("GOOGL".into(), 0.8);
    let policy = RiskPolicy::intraday();
    let r = evaluate(&DecisionRecord::from_weights(0, intent), &Weights::new(), &policy);
    let pair = r.approved_weights["GOOG"] + r.approved_weights["GOOGL"];
    check(
        policy.max_position == 0.08 && pair <= 0.16 && r.calibration_score < 0.1,
        format!("intent 1.600 -> approved {pair:.3}; calibration score {:.4}", r.calibration_score),
    )
}

fn brute_force_mdd(c: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for j in 0..c.len() {
        for i in 0..=j {
            worst = worst.min(c[j] / c[i] - 1.0);
        }
    }
    worst
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..200);
        let mut e = 100.0;
        let curve: Vec<f64> = (0..n)
            .map(|_| {
                e *= 1.0 + rng.random_range(-0.05..0.05);
                e
            })
            .collect();
        mismatches += usize::from(max_drawdown(&curve) != brute_force_mdd(&curve));
    }
    check(mismatches == 0, format!("{mismatches} mismatches over 1000 curves"))
}

fn criterion_8() -> Outcome {
    let a = [0.1, 0.2, -0.05, 0.15, 0.1];
    let s = paired_stats(&a, &[0.0; 5]).map_err(|e| e.to_string())?;
    let hand = (s.mean_diff - 0.1).abs() < 1e-6
        && (s.sd - 0.0935414).abs() < 1e-6
        && (s.t_stat.unwrap_or(f64::NAN) - 2.390457).abs() < 1e-6
        && (s.p_value - 0.016827).abs() < 1e-6
        && s.win_rate == 0.8;

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut bad = 0;
    for _ in 0..10_000 {
        let n = rng.random_range(2..30);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (Ok(ab), Ok(ba), Ok(aa)) = (paired_stats(&x, &y), paired_stats(&y, &x), paired_stats(&x, &x)) else {
            bad += 1;
            continue;
        };
        let anti = ab.mean_diff == -ba.mean_diff
            && ab.ci_low == -ba.ci_high
            && ab.ci_high == -ba.ci_low
            && ab.win_rate == ba.loss_rate
            && ab.tie_rate == ba.tie_rate
            && ab.p_value == ba.p_value;
        let ident = aa.mean_diff == 0.0 && aa.tie_rate == 1.0 && aa.win_rate == 0.0 && aa.p_value == 1.0;
        bad += usize::from(!(anti && ident));
    }
    check(hand && bad == 0, format!("hand-derived match {hand}; invariant failures {bad}/10000"))
}

/// Ten blocks of 12 normal steps, 4 pre steps and 2 drawdown steps. Normal
/// rows are isotropic in 16 dims, pre rows live in a 2-dim subspace.
fn collapse_fixture() -> (EmbeddingView, PhaseLabeling) {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut vectors, mut labels, mut anchors) = (vec![], vec![], vec![]);
    for _ in 0..10 {
        for _ in 0..12 {
            vectors.push((0..16).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>());
            labels.push(Phase::Normal);
        }
        for _ in 0..4 {
            let mut v = vec![0.0; 16];
            v[0] = rng.random_range(-1.0..1.0);
            v[1] = rng.random_range(-1.0..1.0);
            vectors.push(v);
            labels.push(Phase::PreDrawdown);
        }
        anchors.push(labels.len());
        for _ in 0..2 {
            vectors.push((0..16).map(|_| rng.random_range(-1.0..1.0)).collect());
            labels.push(Phase::Drawdown);
        }
    }
    let view = EmbeddingView {
        kind: ViewKind::External,
        source: ViewSource::External,
        dims: 16,
        vectors,
        zero_rows: vec![],
        notes: vec![],
    };
    (view, PhaseLabeling { labels, anchors, pre_window: 4 })
}

fn criterion_9() -> Outcome {
    let (view, labels) = collapse_fixture();
    let m = manifold_diagnostics(&view, &labels, 8).map_err(|e| e.to_string())?;
    let delta = m.rank_delta.unwrap_or(f64::NAN);
    let defined = m.anchor_rank_deltas.iter().flatten().count();
    check(
        delta > 0.0 && defined == 10 && m.contraction_rate == Some(1.0),
        format!("rank delta {delta:.3}; contraction {:?} over {defined} anchors", m.contraction_rate),
    )
}

fn criterion_10() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut vectors: Vec<Vec<f64>> = vec![];
    for center in [0.0, 5.0] {
        for _ in 0..40 {
            vectors.push((0..8).map(|_| center + rng.random_range(-1.0..1.0)).collect());
        }
    }
    let normal: Vec<usize> = (0..40).collect();
    let pre: Vec<usize> = (40..80).collect();
    let ba = loo_balanced_accuracy(&vectors, &normal, &pre);
    let mut idx: Vec<usize> = (0..80).collect();
    let mut total = 0.0;
    for _ in 0..200 {
        idx.shuffle(&mut rng);
        total += loo_balanced_accuracy(&vectors, &idx[..40], &idx[40..]);
    }
    let null = total / 200.0;
    check(ba >= 0.95 && (null - 0.5).abs() <= 0.05, format!("separated BA {ba:.3}; permutation-null mean {null:.3}"))
}

fn criterion_11() -> Outcome {
    let cfg = family("core");
    let out = run(&cfg, "risk_aware", 3);
    let rows = |noise: Option<f64>| -> Result<Vec<_>, String> {
        let opts = ReprOptions { noise, ..ReprOptions::default() };
        tradebench::orchestrator::repr_rows("risk_aware_seed3", &out.steps, &opts).map_err(|e| e.to_string())
    };
    let json = |v: &tradebench::reprdiag::DiagnosticsRow| serde_json::to_string(v).expect("row serializes");
    let base = rows(None)?;
    let zero = rows(Some(0.0))?;
    let bit_identical = base.len() == zero.len()
        && base.iter().zip(&zero).all(|(a, b)| json(&a.row) == json(&b.row) && b.epsilon == 0.0);
    let (mut text_same, mut fused_changed) = (true, true);
    for eps in [0.05, 0.10, 0.20] {
        let noisy = rows(Some(eps))?;
        let mut fused_diff = false;
        for (a, b) in base.iter().zip(&noisy) {
            if a.row.view.starts_with("fused") {
                fused_diff |= json(&a.row) != json(&b.row);
            } else {
                text_same &= json(&a.row) == json(&b.row);
            }
        }
        fused_changed &= fused_diff;
    }
    check(
        bit_identical && text_same && fused_changed,
        format!("eps 0 identical {bit_identical}; text views invariant {text_same}; fused view changes {fused_changed}"),
    )
}

fn criterion_12() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut bad = 0;
    for _ in 0..1000 {
        let k = rng.random_range(1..8);
        let intent: Weights = (0..k).map(|i| (format!("S{i}"), rng.random_range(-0.9..0.9))).collect();
        let prev: Weights = (0..k).map(|i| (format!("S{i}"), rng.random_range(-0.3..0.3))).collect();
        let policy = RiskPolicy::new(rng.random_range(0.05..0.6), rng.random_range(0.05..2.0), rng.random_range(0.3..2.0));
        let d = DecisionRecord::from_weights(0, intent.clone());
        let r = evaluate(&d, &prev, &policy);
        let mut keys: Vec<&String> = intent.keys().chain(r.approved_weights.keys()).collect();
        keys.sort();
        keys.dedup();
        let get = |w: &Weights, s: &str| w.get(s).copied().unwrap_or(0.0);
        let gap: f64 = keys.iter().map(|s| (get(&intent, s) - get(&r.approved_weights, s)).abs()).sum();
        let exposure: f64 = intent.values().map(|v| v.abs()).sum();
        let score = 1.0 - (gap / exposure.max(1.0)).min(1.0);
        bad += usize::from(gap != r.calibration_gap || score != r.calibration_score);
    }
    let ends = calibration_score(0.0, 1.3) == 1.0 && calibration_score(2.0, 1.5) == 0.0;
    check(bad == 0 && ends, format!("{bad} mismatches over 1000 pairs; endpoint scores {ends}"))
}

fn toks(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn criterion_14() -> Outcome {
    let aab = toks(&["buy", "buy", "sell"]);
    let abc = toks(&["buy", "hold", "sell"]);
    let third = 1.0f64 / 3.0;
    let fixtures = (type_token_ratio(&aab) - 2.0 / 3.0).abs() < 1e-12
        && (token_entropy(&aab) - -(2.0 * third * (2.0 * third).ln() + third * third.ln())).abs() < 1e-12
        && (type_token_ratio(&abc) - 1.0).abs() < 1e-12
        && (token_entropy(&abc) - 3f64.ln()).abs() < 1e-12;

    let texts: Vec<String> = (0..12)
        .map(|i| if i % 6 >= 4 { "risk risk cut exposure now".to_string() } else { format!("trend up buy more s{i} now") })
        .collect();
    let labels = PhaseLabeling {
        labels: (0..12).map(|i| if i % 6 >= 4 { Phase::PreDrawdown } else { Phase::Normal }).collect(),
        anchors: vec![6],
        pre_window: 2,
    };
    let base = lexical_controls(&texts, &labels).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut same = true;
    for _ in 0..50 {
        let permuted: Vec<String> = texts
            .iter()
            .map(|t| {
                let mut w: Vec<&str> = t.split(' ').collect();
                w.shuffle(&mut rng);
                w.join(" ")
            })
            .collect();
        let p = lexical_controls(&permuted, &labels).map_err(|e| e.to_string())?;
        same &= p == base;
    }
    check(
        fixtures && same,
        format!("fixtures match {fixtures}; permutation-invariant deltas {same} (ttr {:.4}, entropy {:.4})", base.ttr_delta, base.entropy_delta),
    )
}

fn step_with(rationale: &str, confidence: f64, score: f64, open: f64, close: f64) -> TrajectoryStep {
    let mut s = TrajectoryStep::empty(3);
    let mut d = DecisionRecord::from_weights(3, [("A".to_string(), 0.1)].into());
    d.rationale = rationale.into();
    d.confidence = confidence;
    d.directional_scores = [("A".to_string(), score)].into();
    s.decision = Some(d);
    s.observation =
        Some(vec![BarSnapshot { symbol: "A".into(), open, high: open.max(close), low: open.min(close), close, volume: 1e6 }]);
    s
}

fn criterion_15() -> Outcome {
    let clean = RiskMemory::default();
    let mut violated = RiskMemory::default();
    violated.record(StepEvents { step: 0, violations: 1, ..StepEvents::default() }, 1e6);
    let ctx = step_with("Breakout above resistance.", 0.5, 0.1, 100.0, 101.0);
    let stale = step_with("No risk so far, adding exposure.", 0.5, 0.1, 100.0, 101.0);
    let pairs = [
        (
            "unsupported_context",
            proxy_score(&ctx, "no context", &clean).components.unsupported_context,
            proxy_score(&ctx, "breakout and resistance levels", &clean).components.unsupported_context,
        ),
        (
            "directional_contradiction",
            proxy_score(&step_with("trend", 0.5, -0.5, 100.0, 101.0), "", &clean).components.directional_contradiction,
            proxy_score(&step_with("trend", 0.5, 0.5, 100.0, 101.0), "", &clean).components.directional_contradiction,
        ),
        (
            "overconfident_weak",
            proxy_score(&step_with("trend", 0.7, 0.1, 100.0, 100.1), "", &clean).components.overconfident_weak,
            proxy_score(&step_with("trend", 0.7, 0.1, 100.0, 101.0), "", &clean).components.overconfident_weak,
        ),
        (
            "stale_no_risk",
            proxy_score(&stale, "", &violated).components.stale_no_risk,
            proxy_score(&stale, "", &clean).components.stale_no_risk,
        ),
    ];
    let rules_ok = pairs.iter().all(|(_, pos, neg)| *pos && !*neg);
    let a = [true, false, true, true, false, false, true];
    let (k, j) = (cohen_kappa(&a, &a), iou(&a, &a));
    let failed: Vec<&str> = pairs.iter().filter(|(_, p, n)| !(*p && !*n)).map(|(c, _, _)| *c).collect();
    check(rules_ok && k == 1.0 && j == 1.0, format!("rule fixtures failing {failed:?}; kappa {k}; IoU {j}"))
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = vec![];
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).expect("readable dir").flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).expect("under dir").to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn criterion_16(emitted: &mut Vec<PathBuf>, tmp: &Path) -> Outcome {
    let cfg = family("core");
    let a = tmp.join("a");
    let b = tmp.join("b");
    run_family(&cfg, &RunOptions { out_root: a.clone(), jobs: 1, seeds: None }).map_err(|e| e.to_string())?;
    run_family(&cfg, &RunOptions { out_root: b.clone(), jobs: 4, seeds: None }).map_err(|e| e.to_string())?;
    let (fa, fb) = (files_under(&a), files_under(&b));
    let kinds = |ext: &str| fa.iter().filter(|p| p.extension().is_some_and(|e| e == ext)).count();
    let differing: Vec<_> = fa
        .iter()
        .filter(|p| std::fs::read(a.join(p)).ok() != std::fs::read(b.join(p)).ok())
        .map(|p| p.display().to_string())
        .collect();
    emitted.extend(fa.iter().filter(|p| p.extension().is_some_and(|e| e == "jsonl")).map(|p| a.join(p)));
    check(
        fa == fb && differing.is_empty() && kinds("jsonl") > 0 && kinds("csv") > 0 && kinds("svg") > 0,
        format!(
            "{} files ({} logs, {} CSVs, {} SVGs); differing {differing:?}",
            fa.len(),
            kinds("jsonl"),
            kinds("csv"),
            kinds("svg")
        ),
    )
}

fn close(a: &serde_json::Value, b: &serde_json::Value) -> bool {
    use serde_json::Value;
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => match (x.as_u64(), y.as_u64()) {
            (Some(i), Some(j)) => i == j,
            _ => (x.as_f64().unwrap_or(f64::NAN) - y.as_f64().unwrap_or(f64::NAN)).abs() <= 1e-9,
        },
        (Value::Object(x), Value::Object(y)) => {
            x.len() == y.len() && x.iter().all(|(k, v)| y.get(k).is_some_and(|w| close(v, w)))
        }
        (Value::Array(x), Value::Array(y)) => x.len() == y.len() && x.iter().zip(y).all(|(v, w)| close(v, w)),
        _ => a == b,
    }
}

fn full_coverage(steps: &[TrajectoryStep]) -> bool {
    let c = trajectory::coverage(steps);
    c.risk_lifecycle == 1.0 && c.reproducibility == 1.0 && c.agent_trace == 1.0
}

fn criterion_13(runs: &Runs, emitted: &[PathBuf], tmp: &Path) -> Outcome {
    let dir = tmp.join("replay");
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let (mut mismatched, mut uncovered) = (0, 0);
    for (i, out) in runs.0.iter().enumerate() {
        let path = dir.join(format!("run{i}.jsonl"));
        trajectory::write_log(&path, &out.steps).map_err(|e| e.to_string())?;
        let (steps, replayed) = trajectory::replay(&path).map_err(|e| e.to_string())?;
        let a = serde_json::to_value(bundle(out)).map_err(|e| e.to_string())?;
        let b = serde_json::to_value(&replayed).map_err(|e| e.to_string())?;
        mismatched += usize::from(!close(&a, &b));
        uncovered += usize::from(!full_coverage(&steps));
    }
    for p in emitted {
        let steps = trajectory::read_log(p).map_err(|e| e.to_string())?;
        uncovered += usize::from(!full_coverage(&steps));
    }
    check(
        !runs.0.is_empty() && !emitted.is_empty() && mismatched == 0 && uncovered == 0,
        format!(
            "{} runs replayed, {mismatched} bundle mismatches; {} logs checked, {uncovered} below full coverage",
            runs.0.len(),
            runs.0.len() + emitted.len()
        ),
    )
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let mut runs = Runs::default();
    let mut emitted = vec![];
    let mut results: Vec<(u32, &str, Outcome)> = vec![];
    let mut report = |n: u32, name: &'static str, o: Outcome| {
        let (tag, detail) = match &o {
            Ok(d) => ("PASS", d.as_str()),
            Err(d) => ("FAIL", d.as_str()),
        };
        println!("criterion {n:2} {tag}  {name}: {detail}");
        results.push((n, name, o));
    };
    report(1, "core sweep drawdown", criterion_1(&mut runs));
    report(2, "stress fill/rejects", criterion_2(&mut runs));
    report(3, "execution ordering", criterion_3(&mut runs));
    report(4, "risk sensitivity", criterion_4(&mut runs));
    report(5, "concentration arithmetic", criterion_5());
    report(6, "cap cascade", criterion_6());
    report(7, "drawdown oracle", criterion_7());
    report(8, "paired stats", criterion_8());
    report(9, "rank collapse", criterion_9());
    report(10, "balanced accuracy", criterion_10());
    report(11, "noise invariance", criterion_11());
    report(12, "calibration round trip", criterion_12());
    let c16 = criterion_16(&mut emitted, tmp.path());
    report(13, "replay and coverage", criterion_13(&runs, &emitted, tmp.path()));
    report(14, "lexical controls", criterion_14());
    report(15, "hallucination proxy", criterion_15());
    report(16, "determinism", c16);
    let failed: Vec<u32> = results.iter().filter(|r| r.2.is_err()).map(|r| r.0).collect();
    println!("{} of {} criteria passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        std::process::exit(1);
    }
}
