//! CSV tables and hand-written SVG charts for family summaries and
//! diagnostics. Output is byte-deterministic: fixed column order, shortest
//! round-trip floats, fixed-precision chart coordinates.

use std::io;
use std::path::Path;

use crate::halluprobe::ProxyScore;
use crate::metrics::{MetricsBundle, TABLE_COLUMNS};
use crate::orchestrator::{FamilySummary, HallucReport, ReprRow};
use crate::reprdiag::{self, AnchorMode};
use crate::stats::SweepTables;

pub const RUNS_COLUMNS_PREFIX: [&str; 3] = ["case", "seed", "log"];
pub const SUMMARY_COLUMNS: [&str; 7] = ["case", "metric", "n", "mean", "ci_low", "ci_high", "display"];
pub const PAIRED_COLUMNS: [&str; 15] = [
    "case",
    "baseline",
    "metric",
    "n",
    "mean_diff",
    "sd",
    "ci_low",
    "ci_high",
    "win_rate",
    "loss_rate",
    "tie_rate",
    "t_stat",
    "p_value",
    "degenerate",
    "display",
];
pub const HEADLINE_COLUMNS: [&str; 14] = [
    "case",
    "return_mean",
    "return_ci_low",
    "return_ci_high",
    "max_drawdown_mean",
    "max_drawdown_ci_low",
    "max_drawdown_ci_high",
    "return_diff",
    "return_diff_ci_low",
    "return_diff_ci_high",
    "max_drawdown_diff",
    "max_drawdown_diff_ci_low",
    "max_drawdown_diff_ci_high",
    "display",
];
pub const REPR_COLUMNS: [&str; 20] = [
    "trajectory",
    "epsilon",
    "view",
    "mode",
    "anchors",
    "dims",
    "window",
    "path_length",
    "velocity_ratio",
    "normal_rank",
    "pre_rank",
    "rank_delta",
    "contraction_rate",
    "phase_purity",
    "balanced_accuracy",
    "d_normal_pre",
    "d_normal_draw",
    "ttr_delta",
    "entropy_delta",
    "error",
];
pub const HALLUC_COLUMNS: [&str; 8] = [
    "trajectory",
    "step",
    "eligible",
    "unsupported_context",
    "directional_contradiction",
    "overconfident_weak",
    "stale_no_risk",
    "score",
];
pub const AUDIT_COLUMNS: [&str; 9] = [
    "trajectory",
    "n",
    "mean_score",
    "corr_risk_gate",
    "corr_violations",
    "corr_calibration_gap",
    "corr_rejected",
    "gate_rate_high_proxy",
    "gate_rate_low_proxy",
];

/// Full-precision cell: shortest representation that round-trips.
pub fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// Absent correlations are tabulated as 0.000 in display form.
fn disp(v: Option<f64>) -> String {
    format!("{:.3}", v.unwrap_or(0.0))
}

/// RFC-4180 style CSV with LF line endings.
pub fn csv_string<I, R>(header: &[&str], rows: I) -> String
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut wr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    wr.write_record(header).expect("in-memory write");
    for r in rows {
        wr.write_record(r).expect("in-memory write");
    }
    String::from_utf8(wr.into_inner().expect("in-memory flush")).expect("utf-8 cells")
}

fn bundle_display(b: &MetricsBundle) -> String {
    format!(
        "ret {:+.4} dd {:.4} fill {:.3} rej {} clip {}",
        b.total_return, b.max_drawdown, b.fill_rate, b.rejected, b.clipped
    )
}

/// One row per (case, seed): every metric column plus a display column.
pub fn runs_csv(s: &FamilySummary) -> String {
    let header: Vec<&str> = RUNS_COLUMNS_PREFIX.iter().chain(TABLE_COLUMNS.iter()).chain(["error", "display"].iter()).copied().collect();
    let rows = s.runs.iter().map(|r| {
        let mut row = vec![r.case.clone(), r.seed.to_string(), r.log.clone()];
        match &r.bundle {
            Some(b) => row.extend(b.row()),
            None => row.extend(TABLE_COLUMNS.iter().map(|_| String::new())),
        }
        row.push(r.error.clone().unwrap_or_default());
        row.push(r.bundle.as_ref().map(bundle_display).unwrap_or_default());
        row
    });
    csv_string(&header, rows)
}

pub fn summary_csv(t: &SweepTables) -> String {
    let rows = t.summary.iter().map(|r| {
        vec![
            r.case.clone(),
            r.metric.clone(),
            r.n.to_string(),
            num(r.mean),
            num(r.ci_low),
            num(r.ci_high),
            format!("{:.4} [{:.4}, {:.4}]", r.mean, r.ci_low, r.ci_high),
        ]
    });
    csv_string(&SUMMARY_COLUMNS, rows)
}

pub fn paired_csv(t: &SweepTables) -> String {
    let rows = t.paired.iter().map(|r| {
        let p = &r.stats;
        vec![
            r.case.clone(),
            r.baseline.clone(),
            r.metric.clone(),
            p.n.to_string(),
            num(p.mean_diff),
            num(p.sd),
            num(p.ci_low),
            num(p.ci_high),
            num(p.win_rate),
            num(p.loss_rate),
            num(p.tie_rate),
            opt(p.t_stat),
            num(p.p_value),
            p.degenerate.to_string(),
            format!("{:+.4} [{:+.4}, {:+.4}] win {:.2}", p.mean_diff, p.ci_low, p.ci_high, p.win_rate),
        ]
    });
    csv_string(&PAIRED_COLUMNS, rows)
}

/// Return and drawdown means with intervals plus paired differences
/// against the baseline, one row per case.
pub fn headline_csv(s: &FamilySummary) -> String {
    let summ = |case: &str, m: &str| s.tables.summary.iter().find(|r| r.case == case && r.metric == m);
    let pair = |case: &str, m: &str| s.tables.paired.iter().find(|r| r.case == case && r.metric == m).map(|r| &r.stats);
    let rows = s.cases.iter().filter(|c| summ(c, "total_return").is_some()).map(|c| {
        let mut row = vec![c.clone()];
        let mut display = Vec::new();
        for m in ["total_return", "max_drawdown"] {
            let r = summ(c, m);
            row.extend([r.map(|r| num(r.mean)), r.map(|r| num(r.ci_low)), r.map(|r| num(r.ci_high))].map(Option::unwrap_or_default));
            if let Some(r) = r {
                display.push(format!("{:.4} [{:.4}, {:.4}]", r.mean, r.ci_low, r.ci_high));
            }
        }
        for m in ["total_return", "max_drawdown"] {
            let p = pair(c, m);
            row.extend([p.map(|p| num(p.mean_diff)), p.map(|p| num(p.ci_low)), p.map(|p| num(p.ci_high))].map(Option::unwrap_or_default));
            if let Some(p) = p {
                display.push(format!("Δ{:+.4} [{:+.4}, {:+.4}]", p.mean_diff, p.ci_low, p.ci_high));
            }
        }
        row.push(display.join("; "));
        row
    });
    csv_string(&HEADLINE_COLUMNS, rows)
}

pub fn repr_csv(rows: &[ReprRow]) -> String {
    let out = rows.iter().map(|r| {
        let m = r.row.manifold.as_ref();
        let l = r.row.lexical.as_ref();
        vec![
            r.trajectory.clone(),
            num(r.epsilon),
            r.row.view.clone(),
            r.row.mode.clone(),
            r.row.anchors.to_string(),
            r.row.dims.to_string(),
            m.map(|m| m.window.to_string()).unwrap_or_default(),
            opt(m.map(|m| m.path_length)),
            opt(m.and_then(|m| m.velocity_ratio)),
            opt(m.and_then(|m| m.normal_rank)),
            opt(m.and_then(|m| m.pre_rank)),
            opt(m.and_then(|m| m.rank_delta)),
            opt(m.and_then(|m| m.contraction_rate)),
            opt(m.and_then(|m| m.phase_purity)),
            opt(m.and_then(|m| m.balanced_accuracy)),
            opt(m.and_then(|m| m.centroid_distances.map(|c| c.normal_pre))),
            opt(m.and_then(|m| m.centroid_distances.and_then(|c| c.normal_draw))),
            opt(l.map(|l| l.ttr_delta)),
            opt(l.map(|l| l.entropy_delta)),
            r.row.error.clone().unwrap_or_default(),
        ]
    });
    csv_string(&REPR_COLUMNS, out)
}

pub fn halluc_csv(reports: &[HallucReport]) -> String {
    let rows = reports.iter().flat_map(|r| {
        r.scores.iter().map(move |p: &ProxyScore| {
            let c = &p.components;
            vec![
                r.trajectory.clone(),
                p.step.to_string(),
                p.eligible.to_string(),
                u8::from(c.unsupported_context).to_string(),
                u8::from(c.directional_contradiction).to_string(),
                u8::from(c.overconfident_weak).to_string(),
                u8::from(c.stale_no_risk).to_string(),
                num(p.score),
            ]
        })
    });
    csv_string(&HALLUC_COLUMNS, rows)
}

pub fn audit_csv(reports: &[HallucReport]) -> String {
    let rows = reports.iter().map(|r| {
        let c = &r.correlations;
        vec![
            r.trajectory.clone(),
            c.n.to_string(),
            num(c.mean_score),
            disp(c.corr_risk_gate),
            disp(c.corr_violations),
            disp(c.corr_calibration_gap),
            disp(c.corr_rejected),
            opt(c.gate_rate_high_proxy),
            opt(c.gate_rate_low_proxy),
        ]
    });
    csv_string(&AUDIT_COLUMNS, rows)
}

// ---------------------------------------------------------------------------
// SVG

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn f2(v: f64) -> String {
    format!("{v:.2}")
}

fn svg_open(w: f64, h: f64, title: &str) -> String {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"11\">\n<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n<text x=\"{}\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        w / 2.0,
        esc(title)
    )
}

fn finite_range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in vals.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        let pad = lo.abs().max(1.0) * 0.01;
        return (lo - pad, hi + pad);
    }
    (lo, hi)
}

/// Equity curves with shaded drawdown from the running peak and markers
/// at the deepest drawdown anchors of each curve.
pub fn equity_svg(title: &str, curves: &[(String, Vec<f64>)]) -> String {
    let (w, h) = (760.0, 380.0);
    let (l, r, t, b) = (80.0, 150.0, 34.0, 40.0);
    let (pw, ph) = (w - l - r, h - t - b);
    let n = curves.iter().map(|(_, c)| c.len()).max().unwrap_or(0).max(2);
    let (lo, hi) = finite_range(curves.iter().flat_map(|(_, c)| c.iter().copied()));
    let x = |i: usize| l + pw * i as f64 / (n - 1) as f64;
    let y = |v: f64| t + ph * (1.0 - (v - lo) / (hi - lo));
    let mut s = svg_open(w, h, title);
    s.push_str(&format!(
        "<rect x=\"{l}\" y=\"{t}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"#999\"/>\n"
    ));
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.0}</text>\n",
            f2(l - 6.0),
            f2(y(v) + 4.0),
            v
        ));
    }
    s.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">step</text>\n",
        f2(l + pw / 2.0),
        f2(h - 10.0)
    ));
    for (k, (name, c)) in curves.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        // Drawdown shading: the band between running peak and equity.
        let mut peak = f64::NEG_INFINITY;
        let peaks: Vec<f64> = c.iter().map(|&e| {
            peak = peak.max(e);
            peak
        }).collect();
        if c.iter().zip(&peaks).any(|(e, p)| e < p) {
            let upper: Vec<String> = peaks.iter().enumerate().map(|(i, p)| format!("{},{}", f2(x(i)), f2(y(*p)))).collect();
            let lower: Vec<String> = c.iter().enumerate().rev().map(|(i, e)| format!("{},{}", f2(x(i)), f2(y(*e)))).collect();
            s.push_str(&format!(
                "<polygon points=\"{} {}\" fill=\"{color}\" fill-opacity=\"0.12\" stroke=\"none\"/>\n",
                upper.join(" "),
                lower.join(" ")
            ));
        }
        let pts: Vec<String> = c.iter().enumerate().map(|(i, e)| format!("{},{}", f2(x(i)), f2(y(*e)))).collect();
        s.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            pts.join(" ")
        ));
        if let Ok(lab) = reprdiag::label_phases(c, AnchorMode::Rolling, 3, reprdiag::PRE_WINDOW) {
            for a in lab.anchors {
                s.push_str(&format!(
                    "<circle cx=\"{}\" cy=\"{}\" r=\"3\" fill=\"white\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
                    f2(x(a)),
                    f2(y(c[a]))
                ));
            }
        }
        let ly = t + 14.0 + 16.0 * k as f64;
        s.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{color}\" stroke-width=\"2\"/>\n<text x=\"{}\" y=\"{}\">{}</text>\n",
            f2(w - r + 10.0),
            f2(ly - 4.0),
            f2(w - r + 28.0),
            f2(ly - 4.0),
            f2(w - r + 32.0),
            f2(ly),
            esc(name)
        ));
    }
    s.push_str("</svg>\n");
    s
}

fn bar_panel(s: &mut String, x0: f64, y0: f64, pw: f64, ph: f64, title: &str, groups: &[String], series: &[(String, Vec<f64>)]) {
    let (lo, hi) = finite_range(series.iter().flat_map(|(_, v)| v.iter().copied()).chain([0.0]));
    let y = |v: f64| y0 + ph * (1.0 - (v - lo) / (hi - lo));
    s.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\">{}</text>\n",
        f2(x0 + pw / 2.0),
        f2(y0 - 6.0),
        esc(title)
    ));
    s.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#444\"/>\n",
        f2(x0),
        f2(y(0.0)),
        f2(x0 + pw),
        f2(y(0.0))
    ));
    for v in [lo, hi] {
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n",
            f2(x0 - 4.0),
            f2(y(v) + 4.0),
            format_tick(v)
        ));
    }
    let ng = groups.len().max(1) as f64;
    let gw = pw / ng;
    let bw = gw * 0.8 / series.len().max(1) as f64;
    for (g, name) in groups.iter().enumerate() {
        let gx = x0 + gw * g as f64 + gw * 0.1;
        for (k, (_, vals)) in series.iter().enumerate() {
            let Some(v) = vals.get(g).copied().filter(|v| v.is_finite()) else { continue };
            let (top, bottom) = if v >= 0.0 { (y(v), y(0.0)) } else { (y(0.0), y(v)) };
            s.push_str(&format!(
                "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\"><title>{}</title></rect>\n",
                f2(gx + bw * k as f64),
                f2(top),
                f2(bw),
                f2((bottom - top).max(0.0)),
                PALETTE[k % PALETTE.len()],
                format_tick(v)
            ));
        }
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            f2(gx + gw * 0.4),
            f2(y0 + ph + 14.0),
            esc(name)
        ));
    }
}

fn format_tick(v: f64) -> String {
    if v.abs() >= 100.0 || v == v.trunc() {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

fn legend(s: &mut String, x: f64, y: f64, names: &[&str]) {
    for (k, n) in names.iter().enumerate() {
        let ly = y + 16.0 * k as f64;
        s.push_str(&format!(
            "<rect x=\"{}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{}\"/>\n<text x=\"{}\" y=\"{}\">{}</text>\n",
            f2(x),
            f2(ly - 9.0),
            PALETTE[k % PALETTE.len()],
            f2(x + 14.0),
            f2(ly),
            esc(n)
        ));
    }
}

/// Grouped bars: one group per metric, one bar per series (case).
pub fn grouped_bar_svg(title: &str, groups: &[String], series: &[(String, Vec<f64>)]) -> String {
    let (w, h) = (760.0, 360.0);
    let mut s = svg_open(w, h, title);
    bar_panel(&mut s, 70.0, 50.0, w - 240.0, h - 100.0, "", groups, series);
    let names: Vec<&str> = series.iter().map(|(n, _)| n.as_str()).collect();
    legend(&mut s, w - 150.0, 60.0, &names);
    s.push_str("</svg>\n");
    s
}

/// Three side-by-side panels (concentration, risk pressure, execution
/// pressure), one bar per case in each.
pub fn three_panel_svg(title: &str, cases: &[String], panels: [(&str, Vec<f64>); 3]) -> String {
    let (w, h) = (900.0, 320.0);
    let mut s = svg_open(w, h, title);
    let pw = 230.0;
    for (i, (name, vals)) in panels.into_iter().enumerate() {
        let series: Vec<(String, Vec<f64>)> =
            vals.iter().enumerate().map(|(k, v)| (cases[k].clone(), vec![*v])).collect();
        bar_panel(&mut s, 60.0 + i as f64 * (pw + 60.0), 56.0, pw, h - 110.0, name, &[String::new()], &series);
    }
    let names: Vec<&str> = cases.iter().map(String::as_str).collect();
    for (k, n) in names.iter().enumerate() {
        let x = 60.0 + 150.0 * k as f64;
        s.push_str(&format!(
            "<rect x=\"{}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{}\"/>\n<text x=\"{}\" y=\"{}\">{}</text>\n",
            f2(x),
            f2(h - 26.0),
            PALETTE[k % PALETTE.len()],
            f2(x + 14.0),
            f2(h - 17.0),
            esc(n)
        ));
    }
    s.push_str("</svg>\n");
    s
}

// ---------------------------------------------------------------------------
// Family emission

/// Equity curves keyed by (case, seed), starting at initial capital.
pub type Curves = [(String, u64, Vec<f64>)];

fn write(path: &Path, text: &str) -> io::Result<()> {
    if let Some(p) = path.parent() {
        std::fs::create_dir_all(p)?;
    }
    std::fs::write(path, text)
}

pub fn emit_tables(s: &FamilySummary, dir: &Path) -> io::Result<()> {
    let t = dir.join("tables");
    write(&t.join("runs.csv"), &runs_csv(s))?;
    write(&t.join("summary.csv"), &summary_csv(&s.tables))?;
    write(&t.join("paired.csv"), &paired_csv(&s.tables))?;
    write(&t.join(format!("{}.csv", s.family)), &headline_csv(s))
}

fn case_means(s: &FamilySummary, metric: &str) -> Vec<f64> {
    s.cases
        .iter()
        .map(|c| {
            s.tables.summary.iter().find(|r| &r.case == c && r.metric == metric).map_or(f64::NAN, |r| r.mean)
        })
        .collect()
}

/// Charts drawn only from summary means and logged equity.
pub fn emit_charts(s: &FamilySummary, curves: &Curves, dir: &Path) -> io::Result<()> {
    let c = dir.join("charts");
    if let Some(seed) = s.seeds.iter().find(|seed| curves.iter().any(|(_, x, _)| x == *seed)) {
        let sel: Vec<(String, Vec<f64>)> = s
            .cases
            .iter()
            .filter_map(|case| curves.iter().find(|(k, x, _)| k == case && x == seed).map(|(k, _, v)| (k.clone(), v.clone())))
            .collect();
        write(&c.join(format!("equity_seed{seed}.svg")), &equity_svg(&format!("{} — equity, seed {seed}", s.family), &sel))?;
    }
    let metrics = ["total_return", "max_drawdown", "fill_rate", "partial_fill_rate"];
    let groups: Vec<String> = metrics.iter().map(|m| m.to_string()).collect();
    let per_case: Vec<Vec<f64>> = metrics.iter().map(|m| case_means(s, m)).collect();
    let series: Vec<(String, Vec<f64>)> = s
        .cases
        .iter()
        .enumerate()
        .map(|(k, case)| (case.clone(), per_case.iter().map(|v| v[k]).collect()))
        .collect();
    write(&c.join("comparison.svg"), &grouped_bar_svg(&format!("{} — seed means", s.family), &groups, &series))?;
    write(
        &c.join("risk_panels.svg"),
        &three_panel_svg(
            &format!("{} — concentration and risk pressure", s.family),
            &s.cases,
            [
                ("herfindahl", case_means(s, "herfindahl")),
                ("clipped", case_means(s, "clipped")),
                ("rejected", case_means(s, "rejected")),
            ],
        ),
    )
}

/// summary.json, tables and charts.
pub fn emit_family(s: &FamilySummary, curves: &Curves, dir: &Path) -> io::Result<()> {
    let json = serde_json::to_string_pretty(s).map_err(io::Error::other)?;
    write(&dir.join("summary.json"), &(json + "\n"))?;
    emit_tables(s, dir)?;
    emit_charts(s, curves, dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empty_summary() -> FamilySummary {
        FamilySummary {
            family: "empty".into(),
            config_hash: String::new(),
            cases: vec![],
            seeds: vec![],
            baseline: String::new(),
            runs: vec![],
            tables: SweepTables::default(),
            excluded_seeds: vec![],
            coverage_complete: true,
            notes: vec![],
        }
    }

    #[test]
    fn empty_family_gives_header_only_csvs() {
        let s = empty_summary();
        assert_eq!(summary_csv(&s.tables), SUMMARY_COLUMNS.join(",") + "\n");
        assert_eq!(paired_csv(&s.tables), PAIRED_COLUMNS.join(",") + "\n");
        assert_eq!(headline_csv(&s), HEADLINE_COLUMNS.join(",") + "\n");
        assert_eq!(runs_csv(&s).lines().count(), 1);
    }

    #[test]
    fn csv_quotes_and_uses_lf() {
        let out = csv_string(&["a", "b"], [vec!["x,y".to_string(), "say \"hi\"".to_string()]]);
        assert_eq!(out, "a,b\n\"x,y\",\"say \"\"hi\"\"\"\n");
        assert!(!out.contains('\r'));
    }

    #[test]
    fn full_precision_round_trips() {
        let v = 0.1 + 0.2;
        assert_eq!(num(v).parse::<f64>().unwrap(), v);
    }

    #[test]
    fn equity_svg_is_well_formed_and_deterministic() {
        let curve: Vec<f64> = (0..121).map(|i| 1e6 * (1.0 + 0.05 * (i as f64 / 7.0).sin() + 0.0005 * i as f64)).collect();
        let curves = vec![("a<&>".to_string(), curve.clone()), ("flat".to_string(), vec![1e6; 121])];
        let a = equity_svg("t", &curves);
        assert_eq!(a, equity_svg("t", &curves));
        let doc = roxmltree::Document::parse(&a).unwrap();
        assert_eq!(doc.root_element().tag_name().name(), "svg");
        assert!(doc.descendants().any(|n| n.has_tag_name("polygon")));
        assert!(doc.descendants().any(|n| n.has_tag_name("circle")));
    }

    #[test]
    fn bar_charts_parse() {
        let g = vec!["r".to_string(), "d".to_string()];
        let s = grouped_bar_svg("x", &g, &[("a".into(), vec![0.1, -0.2]), ("b".into(), vec![f64::NAN, 0.3])]);
        roxmltree::Document::parse(&s).unwrap();
        let p = three_panel_svg("y", &["a".into(), "b".into()], [("h", vec![0.3, 0.5]), ("c", vec![0.0, 4.0]), ("r", vec![1.0, 0.0])]);
        let doc = roxmltree::Document::parse(&p).unwrap();
        assert_eq!(doc.descendants().filter(|n| n.has_tag_name("rect")).count(), 1 + 6 + 2);
    }
}
