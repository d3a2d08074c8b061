//! OHLCV ingestion, panel alignment, observation-noise injection and
//! cross-asset correlation summaries.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;
use crate::synthmarket::{Bar, MarketPanel, PanelManifest};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed-input at line {line}, column {column}: {message}")]
    MalformedInput { line: u64, column: String, message: String },
    #[error("invalid-bar for {symbol} at step {step}")]
    InvalidBar { symbol: String, step: usize },
    #[error("insufficient-bars: {symbol} has {count} bar(s), need at least 2")]
    InsufficientBars { symbol: String, count: usize },
    #[error("empty-panel")]
    EmptyPanel,
    #[error("no-overlap: symbols share no common step")]
    NoOverlap,
    #[error("invalid-noise: epsilon must be non-negative, got {0}")]
    InvalidNoise(f64),
    #[error("unaligned-panel: align the panel before computing correlations")]
    Unaligned,
    #[error("insufficient-data: {0}")]
    InsufficientData(String),
    #[error("degenerate-series: {0} has zero return variance")]
    DegenerateSeries(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileFormat {
    Csv,
    Json,
}

impl FileFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "csv" => Some(FileFormat::Csv),
            "json" => Some(FileFormat::Json),
            _ => None,
        }
    }
}

/// One row of the columnar OHLCV schema shared by CSV and JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OhlcvRow {
    pub step: usize,
    pub symbol: String,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: f64,
}

pub fn load_ohlcv(path: &Path, format: FileFormat) -> Result<MarketPanel, DataError> {
    let bytes = std::fs::read(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let rows = match format {
        FileFormat::Csv => parse_csv(&bytes)?,
        FileFormat::Json => parse_json(&bytes)?,
    };
    let mut panel = panel_from_rows(rows)?;
    panel.manifest = PanelManifest {
        seed: None,
        source: path.display().to_string(),
        generated_at: String::new(),
        content_hash: Some(rng::sha256_hex(&bytes)),
        notes: Vec::new(),
    };
    Ok(panel)
}

pub fn parse_csv(bytes: &[u8]) -> Result<Vec<OhlcvRow>, DataError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes);
    let headers = reader
        .headers()
        .map_err(|e| csv_error(&e, None))?
        .clone();
    let mut rows = Vec::new();
    for record in reader.deserialize::<OhlcvRow>() {
        rows.push(record.map_err(|e| csv_error(&e, Some(&headers)))?);
    }
    Ok(rows)
}

fn csv_error(err: &csv::Error, headers: Option<&csv::StringRecord>) -> DataError {
    let line = err.position().map_or(0, csv::Position::line);
    let column = match err.kind() {
        csv::ErrorKind::Deserialize { err: de, .. } => de
            .field()
            .and_then(|f| headers.and_then(|h| h.get(f as usize)).map(str::to_string))
            .unwrap_or_else(|| "?".to_string()),
        _ => "?".to_string(),
    };
    DataError::MalformedInput { line, column, message: err.to_string() }
}

pub fn parse_json(bytes: &[u8]) -> Result<Vec<OhlcvRow>, DataError> {
    serde_json::from_slice(bytes).map_err(|e| DataError::MalformedInput {
        line: e.line() as u64,
        column: e.column().to_string(),
        message: e.to_string(),
    })
}

/// Group rows by symbol (lexicographic order), sort each series by step and
/// validate every bar.
pub fn panel_from_rows(rows: Vec<OhlcvRow>) -> Result<MarketPanel, DataError> {
    let mut grouped: BTreeMap<String, Vec<Bar>> = BTreeMap::new();
    for r in rows {
        grouped.entry(r.symbol).or_default().push(Bar {
            step: r.step,
            open: r.open,
            high: r.high,
            low: r.low,
            close: r.close,
            volume: r.volume,
        });
    }
    if grouped.is_empty() {
        return Err(DataError::EmptyPanel);
    }
    let mut symbols = Vec::with_capacity(grouped.len());
    let mut bars = Vec::with_capacity(grouped.len());
    for (symbol, mut series) in grouped {
        series.sort_by_key(|b| b.step);
        if let Some(w) = series.windows(2).find(|w| w[0].step == w[1].step) {
            return Err(DataError::MalformedInput {
                line: 0,
                column: "step".into(),
                message: format!("duplicate step {} for {symbol}", w[0].step),
            });
        }
        if let Some(bad) = series.iter().find(|b| !b.is_valid()) {
            return Err(DataError::InvalidBar { symbol, step: bad.step });
        }
        if series.len() < 2 {
            return Err(DataError::InsufficientBars { symbol, count: series.len() });
        }
        symbols.push(symbol);
        bars.push(series);
    }
    Ok(MarketPanel {
        symbols,
        bars,
        manifest: PanelManifest {
            seed: None,
            source: "rows".into(),
            generated_at: String::new(),
            content_hash: None,
            notes: Vec::new(),
        },
    })
}

/// Keep only the steps present for every symbol, preserving order.
pub fn align_panels(panel: &MarketPanel) -> Result<MarketPanel, DataError> {
    if panel.symbols.is_empty() || panel.bars.iter().all(Vec::is_empty) {
        return Err(DataError::EmptyPanel);
    }
    let mut common: BTreeSet<usize> = panel.bars[0].iter().map(|b| b.step).collect();
    for series in &panel.bars[1..] {
        let steps: BTreeSet<usize> = series.iter().map(|b| b.step).collect();
        common = common.intersection(&steps).copied().collect();
    }
    if common.is_empty() {
        return Err(DataError::NoOverlap);
    }
    let bars = panel
        .bars
        .iter()
        .map(|series| series.iter().filter(|b| common.contains(&b.step)).copied().collect())
        .collect();
    let mut out = MarketPanel { symbols: panel.symbols.clone(), bars, manifest: panel.manifest.clone() };
    let dropped: usize = panel.bars.iter().map(Vec::len).sum::<usize>()
        - out.bars.iter().map(Vec::len).sum::<usize>();
    if dropped > 0 {
        out.manifest.notes.push(format!("aligned: dropped {dropped} bar(s) outside the common step set"));
    }
    Ok(out)
}

const PRICE_FIELDS: [&str; 4] = ["open", "high", "low", "close"];

/// Multiply each price field by `1 + epsilon * z`, with `z` a standard normal
/// drawn from a stream keyed by `(seed, symbol, step, field)`. Prices are
/// floored at a thousandth of their original value and high/low are widened
/// to cover the perturbed open and close.
pub fn inject_noise(panel: &MarketPanel, epsilon: f64, seed: u64) -> Result<MarketPanel, DataError> {
    if !(epsilon >= 0.0) {
        return Err(DataError::InvalidNoise(epsilon));
    }
    if epsilon == 0.0 {
        return Ok(panel.clone());
    }
    let mut out = panel.clone();
    for (symbol, series) in out.symbols.iter().zip(out.bars.iter_mut()) {
        let sym_seed = rng::mix(seed, rng::fnv1a64(symbol.as_bytes()));
        for bar in series.iter_mut() {
            let step_seed = rng::mix(sym_seed, bar.step as u64);
            let mut perturbed = [bar.open, bar.high, bar.low, bar.close];
            for (field, p) in perturbed.iter_mut().enumerate() {
                let z: f64 = StandardNormal.sample(&mut rng::stream(rng::mix(step_seed, field as u64)));
                *p = (*p * (1.0 + epsilon * z)).max(*p * 1e-3);
            }
            let [open, high, low, close] = perturbed;
            bar.open = open;
            bar.close = close;
            bar.high = high.max(open).max(close).max(low);
            bar.low = low.min(open).min(close).min(high);
        }
    }
    out.manifest.notes.push(format!(
        "noise: epsilon={epsilon} seed={seed} fields={}",
        PRICE_FIELDS.join("|")
    ));
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSummary {
    pub n_symbols: usize,
    pub n_pairs: usize,
    pub mean_abs_corr: f64,
    pub p90_abs_corr: f64,
    pub pc1_share: f64,
    pub effective_independent_count: f64,
    /// Formula used for `effective_independent_count`.
    pub effective_count_formula: String,
}

/// `1 / mean |rho|`.
pub fn effective_independent_count(mean_abs_corr: f64) -> f64 {
    1.0 / mean_abs_corr
}

pub fn simple_returns(closes: &[f64]) -> Vec<f64> {
    closes.windows(2).map(|w| w[1] / w[0] - 1.0).collect()
}

/// Pearson correlation matrix of close-to-close simple returns.
pub fn correlation_matrix(panel: &MarketPanel) -> Result<DMatrix<f64>, DataError> {
    if !panel.is_aligned() {
        return Err(DataError::Unaligned);
    }
    let n = panel.n_symbols();
    if n < 2 {
        return Err(DataError::InsufficientData(format!("need at least 2 symbols, got {n}")));
    }
    if panel.n_steps() < 3 {
        return Err(DataError::InsufficientData(format!(
            "need at least 3 steps, got {}",
            panel.n_steps()
        )));
    }
    let mut centered = Vec::with_capacity(n);
    for i in 0..n {
        let r = simple_returns(&panel.closes(i));
        let mean = r.iter().sum::<f64>() / r.len() as f64;
        let c: Vec<f64> = r.iter().map(|v| v - mean).collect();
        let ss = c.iter().map(|v| v * v).sum::<f64>();
        if ss <= 0.0 {
            return Err(DataError::DegenerateSeries(panel.symbols[i].clone()));
        }
        centered.push((c, ss.sqrt()));
    }
    let mut corr = DMatrix::<f64>::identity(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let dot: f64 = centered[i].0.iter().zip(&centered[j].0).map(|(a, b)| a * b).sum();
            let rho = (dot / (centered[i].1 * centered[j].1)).clamp(-1.0, 1.0);
            corr[(i, j)] = rho;
            corr[(j, i)] = rho;
        }
    }
    Ok(corr)
}

/// Linear-interpolation percentile (`q` in `[0, 1]`) of unsorted data.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub fn correlation_summary(panel: &MarketPanel) -> Result<CorrelationSummary, DataError> {
    let corr = correlation_matrix(panel)?;
    let n = corr.nrows();
    let mut abs = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            abs.push(corr[(i, j)].abs());
        }
    }
    let mean_abs = abs.iter().sum::<f64>() / abs.len() as f64;
    let sym = (&corr + corr.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let total: f64 = eig.eigenvalues.iter().sum();
    let max = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(CorrelationSummary {
        n_symbols: n,
        n_pairs: abs.len(),
        mean_abs_corr: mean_abs,
        p90_abs_corr: percentile(&abs, 0.9),
        pc1_share: (max / total).clamp(0.0, 1.0),
        effective_independent_count: effective_independent_count(mean_abs),
        effective_count_formula: "1/mean_abs_corr".into(),
    })
}
