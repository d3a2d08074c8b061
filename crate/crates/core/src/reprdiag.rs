//! Representation diagnostics over trajectories: deterministic text
//! embeddings (feature hashing, LSA), failure-phase labelling, centroid
//! separation, local manifold geometry and lexical controls.
//!
//! Local neighbourhoods are temporal: the neighbourhood of step `t` within a
//! phase is the `window` same-phase steps nearest to `t` in time (ties go to
//! the earlier step). A phase with fewer than `window` steps has no rank.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::DecisionRecord;
use crate::rng;
use crate::synthmarket::MarketPanel;
use crate::text::tokenize;
use crate::trajectory::TrajectoryStep;

pub const HASH_DIMS: usize = 64;
pub const LSA_DIMS: usize = 32;
pub const PRE_WINDOW: usize = 4;
pub const ROLLING_ANCHORS: usize = 10;
pub const RANK_WINDOW: usize = 8;
pub const PURITY_K: usize = 5;

#[derive(Debug, Error, PartialEq)]
pub enum ReprError {
    #[error("empty-corpus")]
    EmptyCorpus,
    #[error("shape-error: {0}")]
    ShapeError(String),
    #[error("no-drawdown: equity never falls below its running peak")]
    NoDrawdown,
    #[error("insufficient-horizon: {len} points, need more than {need}")]
    InsufficientHorizon { len: usize, need: usize },
    #[error("insufficient-phase: no {0} steps")]
    InsufficientPhase(&'static str),
    #[error("insufficient-text: no tokens in the {0} phase")]
    InsufficientText(&'static str),
    #[error("universe-error: symbol {0} outside the fixed universe")]
    UniverseError(String),
    #[error("malformed external embedding: {0}")]
    MalformedExternal(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewKind {
    Hash64,
    Lsa,
    IntentWeights,
    External,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewSource {
    Plan,
    Reflection,
    Fused,
    Intent,
    External,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingView {
    pub kind: ViewKind,
    pub source: ViewSource,
    pub dims: usize,
    pub vectors: Vec<Vec<f64>>,
    /// Rows that were all-zero and could not be normalized.
    pub zero_rows: Vec<usize>,
    pub notes: Vec<String>,
}

impl EmbeddingView {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

fn l2_normalize(v: &mut [f64]) -> bool {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
        true
    } else {
        false
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Signed feature hashing of lowercase alphanumeric tokens into 64 buckets.
pub fn hash_embed(texts: &[String]) -> EmbeddingView {
    let mut zero_rows = Vec::new();
    let vectors = texts
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let mut v = vec![0.0; HASH_DIMS];
            for tok in tokenize(t) {
                let h = rng::fnv1a64(tok.as_bytes());
                let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
                v[(h % HASH_DIMS as u64) as usize] += sign;
            }
            if !l2_normalize(&mut v) {
                zero_rows.push(i);
            }
            v
        })
        .collect();
    EmbeddingView { kind: ViewKind::Hash64, source: ViewSource::Plan, dims: HASH_DIMS, vectors, zero_rows, notes: vec![] }
}

/// TF-IDF (raw counts, smooth idf `ln((1+N)/(1+df)) + 1`) followed by a
/// truncated SVD; rows are document loadings `u_j σ_j`, L2-normalized. Each
/// component's sign makes its largest-magnitude term loading positive.
pub fn lsa_embed(texts: &[String], dims: usize) -> Result<EmbeddingView, ReprError> {
    let docs: Vec<Vec<String>> = texts.iter().map(|t| tokenize(t)).collect();
    let vocab: BTreeSet<&str> = docs.iter().flatten().map(String::as_str).collect();
    if vocab.is_empty() {
        return Err(ReprError::EmptyCorpus);
    }
    let index: BTreeMap<&str, usize> = vocab.iter().enumerate().map(|(i, t)| (*t, i)).collect();
    let (n, m) = (docs.len(), vocab.len());
    let mut tf = DMatrix::<f64>::zeros(n, m);
    for (i, d) in docs.iter().enumerate() {
        for t in d {
            tf[(i, index[t.as_str()])] += 1.0;
        }
    }
    for j in 0..m {
        let df = (0..n).filter(|&i| tf[(i, j)] > 0.0).count() as f64;
        let idf = ((1.0 + n as f64) / (1.0 + df)).ln() + 1.0;
        for i in 0..n {
            tf[(i, j)] *= idf;
        }
    }
    let svd = tf.svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let smax = svd.singular_values[order[0]];
    let rank = order.iter().filter(|&&k| svd.singular_values[k] > smax * 1e-10).count();
    let k = dims.min(rank);

    let mut vectors = vec![vec![0.0; k]; n];
    for (c, &j) in order.iter().take(k).enumerate() {
        let row = vt.row(j);
        let (mut best, mut best_abs) = (0, -1.0);
        for (t, v) in row.iter().enumerate() {
            if v.abs() > best_abs + 1e-12 {
                best = t;
                best_abs = v.abs();
            }
        }
        let sign = if row[best] < 0.0 { -1.0 } else { 1.0 };
        let s = svd.singular_values[j];
        for (i, vec) in vectors.iter_mut().enumerate() {
            vec[c] = sign * u[(i, j)] * s;
        }
    }
    let mut zero_rows = Vec::new();
    for (i, v) in vectors.iter_mut().enumerate() {
        if !l2_normalize(v) {
            zero_rows.push(i);
        }
    }
    let mut notes = vec![format!("lsa: vocabulary {m}, rank {rank}, dims {k}")];
    if k < dims {
        notes.push(format!("lsa: dims reduced from {dims} to rank {k}"));
    }
    Ok(EmbeddingView { kind: ViewKind::Lsa, source: ViewSource::Plan, dims: k, vectors, zero_rows, notes })
}

/// Append standardized feature columns (zero mean, unit population
/// variance); zero-variance columns are dropped with a note.
pub fn fuse(view: &EmbeddingView, features: &[Vec<f64>], names: &[String]) -> Result<EmbeddingView, ReprError> {
    if features.len() != view.len() {
        return Err(ReprError::ShapeError(format!("{} feature rows for {} vectors", features.len(), view.len())));
    }
    let k = features.first().map_or(0, Vec::len);
    if features.iter().any(|r| r.len() != k) {
        return Err(ReprError::ShapeError("ragged feature rows".into()));
    }
    let mut out = view.clone();
    out.source = ViewSource::Fused;
    let n = features.len() as f64;
    for j in 0..k {
        let col: Vec<f64> = features.iter().map(|r| r[j]).collect();
        let mean = col.iter().sum::<f64>() / n;
        let sd = (col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        let name = names.get(j).cloned().unwrap_or_else(|| format!("f{j}"));
        if !(sd > 1e-12) {
            out.notes.push(format!("fuse: dropped zero-variance feature {name}"));
            continue;
        }
        for (v, x) in out.vectors.iter_mut().zip(&col) {
            v.push((x - mean) / sd);
        }
        out.dims += 1;
    }
    Ok(out)
}

/// Intended weights over a fixed symbol order, unnormalized.
pub fn intent_view(decisions: &[DecisionRecord], universe: &[String]) -> Result<EmbeddingView, ReprError> {
    let known: BTreeSet<&String> = universe.iter().collect();
    let mut vectors = Vec::with_capacity(decisions.len());
    for d in decisions {
        if let Some(s) = d.intended_weights.keys().find(|s| !known.contains(s)) {
            return Err(ReprError::UniverseError(s.clone()));
        }
        vectors.push(universe.iter().map(|s| d.intended_weights.get(s).copied().unwrap_or(0.0)).collect());
    }
    Ok(EmbeddingView {
        kind: ViewKind::IntentWeights,
        source: ViewSource::Intent,
        dims: universe.len(),
        vectors,
        zero_rows: vec![],
        notes: vec![],
    })
}

/// External embedding CSV: header `step,e0,e1,...`, one row per step in
/// step order.
pub fn external_view_from_csv(bytes: &[u8]) -> Result<EmbeddingView, ReprError> {
    let mut r = csv::Reader::from_reader(bytes);
    let bad = |e: csv::Error| ReprError::MalformedExternal(e.to_string());
    let dims = r.headers().map_err(bad)?.len().saturating_sub(1);
    let mut vectors = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(bad)?;
        let step: usize = rec[0].trim().parse().map_err(|_| ReprError::MalformedExternal(format!("row {}: bad step", i + 1)))?;
        if step != i {
            return Err(ReprError::MalformedExternal(format!("row {}: expected step {i}, got {step}", i + 1)));
        }
        let v = rec
            .iter()
            .skip(1)
            .map(|c| c.trim().parse::<f64>().ok().filter(|x| x.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| ReprError::MalformedExternal(format!("row {}: non-finite value", i + 1)))?;
        vectors.push(v);
    }
    Ok(EmbeddingView { kind: ViewKind::External, source: ViewSource::External, dims, vectors, zero_rows: vec![], notes: vec![] })
}

// ---------------------------------------------------------------------------
// Phase labelling

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Normal,
    PreDrawdown,
    Drawdown,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorMode {
    MaxAnchor,
    Rolling,
}

impl AnchorMode {
    pub fn name(self) -> &'static str {
        match self {
            AnchorMode::MaxAnchor => "max_anchor",
            AnchorMode::Rolling => "rolling",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseLabeling {
    pub labels: Vec<Phase>,
    pub anchors: Vec<usize>,
    pub pre_window: usize,
}

impl PhaseLabeling {
    pub fn steps_in(&self, p: Phase) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == p).collect()
    }

    /// Pre-drawdown steps belonging to `anchor`.
    pub fn pre_steps_of(&self, anchor: usize) -> Vec<usize> {
        (anchor.saturating_sub(self.pre_window)..anchor).filter(|&i| self.labels[i] == Phase::PreDrawdown).collect()
    }
}

pub fn label_phases(
    curve: &[f64],
    mode: AnchorMode,
    anchors_per_traj: usize,
    pre_window: usize,
) -> Result<PhaseLabeling, ReprError> {
    let n = curve.len();
    if n <= pre_window + 1 {
        return Err(ReprError::InsufficientHorizon { len: n, need: pre_window + 1 });
    }
    let mut peak = f64::NEG_INFINITY;
    let mut peaks = Vec::with_capacity(n);
    let dd: Vec<f64> = curve
        .iter()
        .map(|&e| {
            peak = peak.max(e);
            peaks.push(peak);
            e / peak - 1.0
        })
        .collect();

    let mut anchors = match mode {
        AnchorMode::MaxAnchor => {
            let (t, d) = dd.iter().enumerate().fold((0, 0.0), |acc, (t, &d)| if d < acc.1 { (t, d) } else { acc });
            if d < 0.0 { vec![t] } else { vec![] }
        }
        AnchorMode::Rolling => {
            let mut troughs: Vec<usize> = (0..n)
                .filter(|&t| {
                    dd[t] < 0.0 && (t == 0 || curve[t] <= curve[t - 1]) && (t + 1 == n || curve[t] < curve[t + 1])
                })
                .collect();
            troughs.sort_by(|&a, &b| dd[a].total_cmp(&dd[b]).then(a.cmp(&b)));
            let mut chosen: Vec<usize> = Vec::new();
            for t in troughs {
                if chosen.len() == anchors_per_traj {
                    break;
                }
                if chosen.iter().all(|&s| s.abs_diff(t) > pre_window) {
                    chosen.push(t);
                }
            }
            chosen
        }
    };
    if anchors.is_empty() {
        return Err(ReprError::NoDrawdown);
    }
    anchors.sort_unstable();

    let mut labels = vec![Phase::Normal; n];
    for &a in &anchors {
        let pre_peak = peaks[a];
        let mut t = a;
        while t < n && (t == a || curve[t] < pre_peak) {
            labels[t] = Phase::Drawdown;
            t += 1;
        }
    }
    for &a in &anchors {
        for l in &mut labels[a.saturating_sub(pre_window)..a] {
            *l = Phase::PreDrawdown;
        }
    }
    Ok(PhaseLabeling { labels, anchors, pre_window })
}

// ---------------------------------------------------------------------------
// Centroids and balanced accuracy

fn centroid(vectors: &[Vec<f64>], idx: impl IntoIterator<Item = usize>) -> Option<Vec<f64>> {
    let mut c: Option<Vec<f64>> = None;
    let mut count = 0usize;
    for i in idx {
        let v = &vectors[i];
        match &mut c {
            None => c = Some(v.clone()),
            Some(acc) => acc.iter_mut().zip(v).for_each(|(a, x)| *a += x),
        }
        count += 1;
    }
    c.map(|mut acc| {
        acc.iter_mut().for_each(|a| *a /= count as f64);
        acc
    })
}

/// `1 − cos`; 0 for two equal vectors, 1 when exactly one is zero.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    if a == b {
        return 0.0;
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (1.0 - dot / (na * nb)).max(0.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CentroidDistances {
    pub normal_pre: f64,
    pub normal_draw: Option<f64>,
    pub pre_draw: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CentroidReport {
    pub distances: CentroidDistances,
    pub balanced_accuracy: f64,
}

/// Leave-one-out nearest-centroid balanced accuracy for normal vs pre
/// steps (Euclidean; ties predict normal).
pub fn loo_balanced_accuracy(vectors: &[Vec<f64>], normal: &[usize], pre: &[usize]) -> f64 {
    let sum = |idx: &[usize]| {
        let mut s = vec![0.0; vectors[idx[0]].len()];
        for &i in idx {
            s.iter_mut().zip(&vectors[i]).for_each(|(a, x)| *a += x);
        }
        s
    };
    let (sn, sp) = (sum(normal), sum(pre));
    let loo = |total: &[f64], count: usize, v: &[f64]| -> Option<Vec<f64>> {
        (count > 1).then(|| total.iter().zip(v).map(|(t, x)| (t - x) / (count - 1) as f64).collect())
    };
    let full = |total: &[f64], count: usize| -> Vec<f64> { total.iter().map(|t| t / count as f64).collect() };
    let recall = |own: &[usize], own_sum: &[f64], other: &[usize], other_sum: &[f64], own_is_normal: bool| {
        let other_c = full(other_sum, other.len());
        let hits = own
            .iter()
            .filter(|&&i| {
                let v = &vectors[i];
                let Some(own_c) = loo(own_sum, own.len(), v) else { return false };
                let (d_own, d_other) = (dist(v, &own_c), dist(v, &other_c));
                if own_is_normal { d_own <= d_other } else { d_own < d_other }
            })
            .count();
        hits as f64 / own.len() as f64
    };
    0.5 * (recall(normal, &sn, pre, &sp, true) + recall(pre, &sp, normal, &sn, false))
}

pub fn centroid_analysis(view: &EmbeddingView, labels: &PhaseLabeling) -> Result<CentroidReport, ReprError> {
    if labels.labels.len() != view.len() {
        return Err(ReprError::ShapeError(format!("{} labels for {} vectors", labels.labels.len(), view.len())));
    }
    let normal = labels.steps_in(Phase::Normal);
    let pre = labels.steps_in(Phase::PreDrawdown);
    let draw = labels.steps_in(Phase::Drawdown);
    if normal.is_empty() {
        return Err(ReprError::InsufficientPhase("normal"));
    }
    if pre.is_empty() {
        return Err(ReprError::InsufficientPhase("pre_drawdown"));
    }
    let cn = centroid(&view.vectors, normal.iter().copied()).expect("non-empty");
    let cp = centroid(&view.vectors, pre.iter().copied()).expect("non-empty");
    let cd = centroid(&view.vectors, draw.iter().copied());
    Ok(CentroidReport {
        distances: CentroidDistances {
            normal_pre: cosine_distance(&cn, &cp),
            normal_draw: cd.as_ref().map(|c| cosine_distance(&cn, c)),
            pre_draw: cd.as_ref().map(|c| cosine_distance(&cp, c)),
        },
        balanced_accuracy: loo_balanced_accuracy(&view.vectors, &normal, &pre),
    })
}

// ---------------------------------------------------------------------------
// Manifold geometry

/// `exp` of the Shannon entropy of normalized singular values of the
/// mean-centered rows; 1 when every singular value is zero.
pub fn effective_rank(rows: &[&[f64]]) -> f64 {
    let (n, d) = (rows.len(), rows.first().map_or(0, |r| r.len()));
    if n == 0 || d == 0 {
        return 1.0;
    }
    let mut m = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
    for j in 0..d {
        let mean = m.column(j).mean();
        m.column_mut(j).add_scalar_mut(-mean);
    }
    let s = m.singular_values();
    let total: f64 = s.iter().sum();
    let smax = s.iter().copied().fold(0.0, f64::max);
    if !(total > 0.0) || smax < 1e-12 {
        return 1.0;
    }
    let h: f64 = s.iter().map(|x| x / total).filter(|p| *p > 0.0).map(|p| -p * p.ln()).sum();
    h.exp().clamp(1.0, d as f64)
}

/// The `window` steps of `members` nearest to `t` in time.
fn temporal_neighbourhood(members: &[usize], t: usize, window: usize) -> Vec<usize> {
    let mut m = members.to_vec();
    m.sort_by_key(|&s| (s.abs_diff(t), s));
    m.truncate(window);
    m
}

fn phase_rank_at(view: &EmbeddingView, members: &[usize], t: usize, window: usize) -> f64 {
    let nb = temporal_neighbourhood(members, t, window);
    let rows: Vec<&[f64]> = nb.iter().map(|&i| view.vectors[i].as_slice()).collect();
    effective_rank(&rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifoldDiagnostics {
    pub window: usize,
    pub path_length: f64,
    pub normal_step: Option<f64>,
    pub pre_step: Option<f64>,
    pub velocity_ratio: Option<f64>,
    pub normal_rank: Option<f64>,
    pub pre_rank: Option<f64>,
    pub rank_delta: Option<f64>,
    /// `normal_rank − pre_rank(anchor)` per anchor, absent where undefined.
    pub anchor_rank_deltas: Vec<Option<f64>>,
    /// Share of anchors with a positive rank delta.
    pub contraction_rate: Option<f64>,
    pub phase_purity: Option<f64>,
    pub balanced_accuracy: Option<f64>,
    pub centroid_distances: Option<CentroidDistances>,
    pub notes: Vec<String>,
}

pub fn manifold_diagnostics(view: &EmbeddingView, labels: &PhaseLabeling, window: usize) -> Result<ManifoldDiagnostics, ReprError> {
    let n = view.len();
    if labels.labels.len() != n {
        return Err(ReprError::ShapeError(format!("{} labels for {n} vectors", labels.labels.len())));
    }
    if n < window {
        return Err(ReprError::InsufficientHorizon { len: n, need: window });
    }
    let steps: Vec<f64> = view.vectors.windows(2).map(|w| dist(&w[0], &w[1])).collect();
    let path_length = steps.iter().sum();
    let normal = labels.steps_in(Phase::Normal);
    let pre = labels.steps_in(Phase::PreDrawdown);
    let local = |idx: &[usize]| {
        let v: Vec<f64> = idx.iter().filter(|&&t| t + 1 < n).map(|&t| steps[t]).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let (normal_step, pre_step) = (local(&normal), local(&pre));
    let velocity_ratio = match (normal_step, pre_step) {
        (Some(a), Some(b)) if a > 0.0 => Some(b / a),
        _ => None,
    };

    let mut notes = vec![format!("neighbourhood: temporal, window {window}")];
    let mean_rank = |members: &[usize], at: &[usize]| -> Option<f64> {
        if members.len() < window || at.is_empty() {
            return None;
        }
        Some(at.iter().map(|&t| phase_rank_at(view, members, t, window)).sum::<f64>() / at.len() as f64)
    };
    let normal_rank = mean_rank(&normal, &normal);
    let pre_rank = mean_rank(&pre, &pre);
    if normal_rank.is_none() {
        notes.push(format!("insufficient-window: {} normal steps < window {window}", normal.len()));
    }
    if pre_rank.is_none() {
        notes.push(format!("insufficient-window: {} pre steps < window {window}", pre.len()));
    }
    let anchor_rank_deltas: Vec<Option<f64>> = labels
        .anchors
        .iter()
        .map(|&a| {
            let own = labels.pre_steps_of(a);
            Some(normal_rank? - mean_rank(&pre, &own)?)
        })
        .collect();
    let defined: Vec<f64> = anchor_rank_deltas.iter().flatten().copied().collect();
    let contraction_rate =
        (!defined.is_empty()).then(|| defined.iter().filter(|d| **d > 0.0).count() as f64 / defined.len() as f64);

    let phase_purity = (!pre.is_empty() && n > PURITY_K).then(|| {
        pre.iter()
            .map(|&i| {
                let mut others: Vec<(f64, usize)> =
                    (0..n).filter(|&j| j != i).map(|j| (dist(&view.vectors[i], &view.vectors[j]), j)).collect();
                others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                others.iter().take(PURITY_K).filter(|(_, j)| labels.labels[*j] == labels.labels[i]).count() as f64
                    / PURITY_K as f64
            })
            .sum::<f64>()
            / pre.len() as f64
    });
    let centroids = centroid_analysis(view, labels).ok();

    Ok(ManifoldDiagnostics {
        window,
        path_length,
        normal_step,
        pre_step,
        velocity_ratio,
        normal_rank,
        pre_rank,
        rank_delta: normal_rank.zip(pre_rank).map(|(a, b)| a - b),
        anchor_rank_deltas,
        contraction_rate,
        phase_purity,
        balanced_accuracy: centroids.map(|c| c.balanced_accuracy),
        centroid_distances: centroids.map(|c| c.distances),
        notes,
    })
}

// ---------------------------------------------------------------------------
// Lexical controls

pub fn type_token_ratio(tokens: &[String]) -> f64 {
    let unique: BTreeSet<&String> = tokens.iter().collect();
    unique.len() as f64 / tokens.len() as f64
}

/// Shannon entropy (nats) of the token-frequency distribution.
pub fn token_entropy(tokens: &[String]) -> f64 {
    let mut counts: BTreeMap<&String, usize> = BTreeMap::new();
    for t in tokens {
        *counts.entry(t).or_default() += 1;
    }
    let n = tokens.len() as f64;
    counts.values().map(|&c| c as f64 / n).map(|p| -p * p.ln()).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LexicalControls {
    pub ttr_delta: f64,
    pub entropy_delta: f64,
}

pub fn lexical_controls(texts: &[String], labels: &PhaseLabeling) -> Result<LexicalControls, ReprError> {
    if texts.len() != labels.labels.len() {
        return Err(ReprError::ShapeError(format!("{} texts for {} labels", texts.len(), labels.labels.len())));
    }
    let per_phase = |p: Phase, name: &'static str| -> Result<(f64, f64), ReprError> {
        let toks: Vec<Vec<String>> = labels
            .steps_in(p)
            .into_iter()
            .map(|i| tokenize(&texts[i]))
            .filter(|t| !t.is_empty())
            .collect();
        if toks.is_empty() {
            return Err(ReprError::InsufficientText(name));
        }
        let k = toks.len() as f64;
        Ok((
            toks.iter().map(|t| type_token_ratio(t)).sum::<f64>() / k,
            toks.iter().map(|t| token_entropy(t)).sum::<f64>() / k,
        ))
    };
    let (pn, pe) = per_phase(Phase::PreDrawdown, "pre_drawdown")?;
    let (nn, ne) = per_phase(Phase::Normal, "normal")?;
    Ok(LexicalControls { ttr_delta: pn - nn, entropy_delta: pe - ne })
}

// ---------------------------------------------------------------------------
// Trajectory-level runs

/// Structured market features per step: mean intrabar return, mean
/// close-to-close return and mean log volume across symbols.
pub fn market_features(panel: &MarketPanel, steps: &[TrajectoryStep]) -> Vec<Vec<f64>> {
    let k = panel.n_symbols() as f64;
    steps
        .iter()
        .map(|s| {
            let t = s.step;
            let (mut intrabar, mut ret, mut vol) = (0.0, 0.0, 0.0);
            for bars in &panel.bars {
                let b = &bars[t];
                intrabar += b.close / b.open - 1.0;
                ret += if t > 0 { b.close / bars[t - 1].close - 1.0 } else { 0.0 };
                vol += b.volume.ln();
            }
            vec![intrabar / k, ret / k, vol / k]
        })
        .collect()
}

pub const MARKET_FEATURES: [&str; 3] = ["mean_intrabar_return", "mean_return", "mean_log_volume"];

/// Structured risk features per step from the audit trail.
pub fn risk_features(steps: &[TrajectoryStep]) -> Vec<Vec<f64>> {
    steps
        .iter()
        .map(|s| {
            let r = s.risk_report.as_ref();
            let e = s.execution.as_ref();
            vec![
                r.map_or(0.0, |r| (r.clipped_count + r.blocked_count) as f64),
                r.map_or(0.0, |r| r.calibration_gap),
                e.map_or(1.0, |e| e.fill_ratio),
                e.map_or(0.0, |e| e.rejected as f64),
            ]
        })
        .collect()
}

pub const RISK_FEATURES: [&str; 4] = ["gate_events", "calibration_gap", "fill_ratio", "rejected"];

pub fn plan_texts(steps: &[TrajectoryStep]) -> Vec<String> {
    steps.iter().map(|s| s.decision.as_ref().map(|d| d.rationale.clone()).unwrap_or_default()).collect()
}

pub fn reflection_texts(steps: &[TrajectoryStep]) -> Vec<String> {
    steps.iter().map(|s| s.reflection.clone().unwrap_or_default()).collect()
}

pub fn equity_curve(steps: &[TrajectoryStep]) -> Vec<f64> {
    steps.iter().map(|s| s.portfolio.as_ref().map_or(f64::NAN, |p| p.equity)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRow {
    pub view: String,
    pub mode: String,
    pub anchors: usize,
    pub dims: usize,
    pub manifold: Option<ManifoldDiagnostics>,
    pub lexical: Option<LexicalControls>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsConfig {
    pub anchors_per_traj: usize,
    pub pre_window: usize,
    pub rolling_window: usize,
    /// Neighbourhood size for the single max anchor, whose pre phase has
    /// only `pre_window` steps.
    pub max_anchor_window: usize,
    pub lsa_dims: usize,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            anchors_per_traj: ROLLING_ANCHORS,
            pre_window: PRE_WINDOW,
            rolling_window: RANK_WINDOW,
            max_anchor_window: PRE_WINDOW,
            lsa_dims: LSA_DIMS,
        }
    }
}

/// Named views of one trajectory. `feature_panel` supplies the market
/// features for the fused view (pass a noise-injected panel to perturb only
/// those columns).
pub fn trajectory_views(
    steps: &[TrajectoryStep],
    feature_panel: &MarketPanel,
    cfg: &DiagnosticsConfig,
) -> Vec<(String, Result<EmbeddingView, ReprError>)> {
    let plan = plan_texts(steps);
    let reflection = reflection_texts(steps);
    let plan_hash = hash_embed(&plan);
    let mut refl_hash = hash_embed(&reflection);
    refl_hash.source = ViewSource::Reflection;
    let mut feats = market_features(feature_panel, steps);
    for (row, r) in feats.iter_mut().zip(risk_features(steps)) {
        row.extend(r);
    }
    let names: Vec<String> = MARKET_FEATURES.iter().chain(RISK_FEATURES.iter()).map(|s| s.to_string()).collect();
    let fused = fuse(&plan_hash, &feats, &names);
    let decisions: Vec<DecisionRecord> = steps.iter().map(|s| s.decision.clone().unwrap_or_default()).collect();
    vec![
        ("plan_hash64".into(), Ok(plan_hash)),
        ("plan_lsa".into(), lsa_embed(&plan, cfg.lsa_dims)),
        ("reflection_hash64".into(), Ok(refl_hash)),
        ("fused_hash64".into(), fused),
        ("intent".into(), intent_view(&decisions, &feature_panel.symbols)),
    ]
}

pub fn run_diagnostics(
    steps: &[TrajectoryStep],
    feature_panel: &MarketPanel,
    cfg: &DiagnosticsConfig,
) -> Vec<DiagnosticsRow> {
    let curve = equity_curve(steps);
    let plan = plan_texts(steps);
    let views = trajectory_views(steps, feature_panel, cfg);
    let mut rows = Vec::new();
    for (mode, window) in [(AnchorMode::MaxAnchor, cfg.max_anchor_window), (AnchorMode::Rolling, cfg.rolling_window)] {
        let labels = label_phases(&curve, mode, cfg.anchors_per_traj, cfg.pre_window);
        for (name, view) in &views {
            let row = match (&labels, view) {
                (Ok(l), Ok(v)) => {
                    let manifold = manifold_diagnostics(v, l, window);
                    let lexical = if name.starts_with("plan") { lexical_controls(&plan, l).ok() } else { None };
                    DiagnosticsRow {
                        view: name.clone(),
                        mode: mode.name().into(),
                        anchors: l.anchors.len(),
                        dims: v.dims,
                        error: manifold.as_ref().err().map(ToString::to_string),
                        manifold: manifold.ok(),
                        lexical,
                    }
                }
                (l, v) => DiagnosticsRow {
                    view: name.clone(),
                    mode: mode.name().into(),
                    anchors: l.as_ref().map_or(0, |l| l.anchors.len()),
                    dims: v.as_ref().map_or(0, |v| v.dims),
                    manifold: None,
                    lexical: None,
                    error: Some(
                        l.as_ref().err().or(v.as_ref().err()).map(ToString::to_string).unwrap_or_default(),
                    ),
                },
            };
            rows.push(row);
        }
    }
    rows
}
