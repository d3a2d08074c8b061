//! Browser bindings: generate a synthetic market, pass a decision through
//! the risk gate, and run one case to an equity chart. Every entry point
//! takes and returns JSON strings so the page needs no glue beyond
//! `JSON.parse`.

use serde::Serialize;
use serde_json::json;
use tradebench::agents::{DecisionRecord, Weights};
use tradebench::orchestrator::{run_case_on_panel, ExperimentConfig};
use tradebench::report::equity_svg;
use tradebench::riskgate::{evaluate, RiskPolicy};
use wasm_bindgen::prelude::*;

fn parse<T: serde::de::DeserializeOwned>(what: &str, text: &str) -> Result<T, String> {
    serde_json::from_str(text).map_err(|e| format!("{what}: {e}"))
}

fn to_json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

fn experiment(config: &str) -> Result<ExperimentConfig, String> {
    let cfg: ExperimentConfig = parse("config", config)?;
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn market(config: &str, seed: u64) -> Result<String, String> {
    let cfg = experiment(config)?;
    let panel = cfg.build_panel(seed).map_err(|e| e.to_string())?;
    let closes: Vec<Vec<f64>> = panel.bars.iter().map(|b| b.iter().map(|x| x.close).collect()).collect();
    to_json(&json!({
        "symbols": panel.symbols,
        "closes": closes,
        "manifest": panel.manifest,
    }))
}

fn gate(intended: &str, prev: &str, policy: &str) -> Result<String, String> {
    let intended: Weights = parse("intended", intended)?;
    let prev: Weights = parse("prev", prev)?;
    let policy: RiskPolicy = parse("policy", policy)?;
    policy.validate().map_err(|e| e.to_string())?;
    to_json(&evaluate(&DecisionRecord::from_weights(0, intended), &prev, &policy))
}

fn cases_chart(config: &str, cases: &str, seed: u64) -> Result<String, String> {
    let cfg = experiment(config)?;
    let names: Vec<String> = parse("cases", cases)?;
    let panel = cfg.build_panel(seed).map_err(|e| e.to_string())?;
    let mut curves = Vec::new();
    let mut metrics = serde_json::Map::new();
    for name in &names {
        let out = run_case_on_panel(&cfg, name, seed, &panel, None).map_err(|e| e.to_string())?;
        let curve = std::iter::once(cfg.initial_capital)
            .chain(out.steps.iter().filter_map(|s| s.portfolio.as_ref().map(|p| p.equity)))
            .collect();
        curves.push((name.clone(), curve));
        metrics.insert(name.clone(), serde_json::to_value(&out.bundle).map_err(|e| e.to_string())?);
    }
    let svg = equity_svg(&format!("{} seed {seed}", cfg.name), &curves);
    to_json(&json!({ "svg": svg, "metrics": metrics }))
}

/// Close series per symbol for one seed of the configured panel:
/// `{"symbols": [...], "closes": [[...], ...], "manifest": {...}}`.
#[wasm_bindgen]
pub fn generate_market(config: &str, seed: u64) -> Result<String, JsError> {
    market(config, seed).map_err(|e| JsError::new(&e))
}

/// Risk report for `intended` given the held book `prev` (both weight maps).
#[wasm_bindgen]
pub fn risk_gate(intended: &str, prev: &str, policy: &str) -> Result<String, JsError> {
    gate(intended, prev, policy).map_err(|e| JsError::new(&e))
}

/// Run the named cases on one seed; returns `{"svg": ..., "metrics": {case: bundle}}`.
#[wasm_bindgen]
pub fn run_cases(config: &str, cases: &str, seed: u64) -> Result<String, JsError> {
    cases_chart(config, cases, seed).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const CONFIG: &str = r#"{
        "name": "demo",
        "panel": {"kind": "regime", "volatility": "calm", "tail": "gaussian", "trend": "down", "base_seed": 0},
        "steps": 60,
        "seeds": [3],
        "cases": [
            {"name": "risk_aware", "analyst": {"kind": "signal", "mode": "full"}, "risk": "default"},
            {"name": "buy_hold", "analyst": {"kind": "buy_hold"}, "risk": "disabled"}
        ]
    }"#;

    #[test]
    fn market_has_one_series_per_symbol() {
        let v: serde_json::Value = serde_json::from_str(&market(CONFIG, 3).unwrap()).unwrap();
        let closes = v["closes"].as_array().unwrap();
        assert_eq!(closes.len(), 3);
        assert!(closes.iter().all(|c| c.as_array().unwrap().len() == 60));
        assert_eq!(market(CONFIG, 3).unwrap(), market(CONFIG, 3).unwrap());
    }

    #[test]
    fn gate_clips_single_name() {
        let policy = r#"{"max_position": 0.35, "max_turnover": 1.0, "max_gross": 1.0, "enabled": true}"#;
        let v: serde_json::Value = serde_json::from_str(&gate(r#"{"A": 0.5}"#, "{}", policy).unwrap()).unwrap();
        assert_eq!(v["approved_weights"]["A"], 0.35);
        assert_eq!(v["clipped_count"], 1);
    }

    #[test]
    fn run_returns_chart_and_metrics() {
        let v: serde_json::Value =
            serde_json::from_str(&cases_chart(CONFIG, r#"["risk_aware", "buy_hold"]"#, 3).unwrap()).unwrap();
        assert!(v["svg"].as_str().unwrap().contains("<svg"));
        assert!(v["metrics"]["buy_hold"]["max_drawdown"].as_f64().unwrap() <= 0.0);
    }

    #[test]
    fn errors_are_messages() {
        assert!(market("{", 0).unwrap_err().starts_with("config:"));
        assert!(gate(r#"{"A": 0.5}"#, "{}", r#"{"max_position": -1, "max_turnover": 1, "max_gross": 1, "enabled": true}"#).is_err());
        assert!(cases_chart(CONFIG, r#"["nope"]"#, 3).is_err());
    }
}
