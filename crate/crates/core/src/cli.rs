//! Command-line shell. Every subcommand delegates to a library call in
//! `orchestrator`/`report`, prints one summary line and writes files under
//! `--out`. Exit status: 0 success, 1 validation error, 2 run failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::halluprobe;
use crate::orchestrator::{self, OrchestratorError, ReprOptions, RunOptions};
use crate::report;
use crate::reprdiag::AnchorMode;

#[derive(Debug, Parser)]
#[command(name = "tradebench", version, about = "Deterministic benchmark runner for trading agents")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one or all experiment families of a config file.
    Run {
        config: PathBuf,
        #[arg(long)]
        family: Option<String>,
        /// Comma-separated seed override.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads for (case, seed) runs.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Recompute metrics and coverage from a trajectory log.
    Replay {
        trajectory: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Trajectory diagnostics.
    Diag {
        #[command(subcommand)]
        kind: DiagCommand,
    },
    /// Paired statistics over the logs of a family directory.
    Stats {
        dir: PathBuf,
        #[arg(long)]
        baseline: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-emit tables and charts for a family directory.
    Report { dir: PathBuf },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    Max,
    Rolling,
}

#[derive(Debug, Subcommand)]
pub enum DiagCommand {
    /// Phase-conditioned representation diagnostics.
    Repr {
        dir: PathBuf,
        /// View filter (hash64, lsa, intent, fused, plan, reflection); repeatable.
        #[arg(long)]
        view: Vec<String>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Relative noise on the market features; adds a perturbed pass.
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long, default_value_t = 0)]
        noise_seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Hallucination-risk proxy audit.
    Halluc {
        dir: PathBuf,
        /// Write a stratified annotation sample of this many rows.
        #[arg(long)]
        export_annotations: Option<usize>,
        #[arg(long, default_value_t = 0)]
        sample_seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Agreement between two completed annotation columns.
    Agreement { annotations: PathBuf },
}

#[derive(Debug)]
enum CliError {
    Validation(String),
    Run(String),
}

impl From<OrchestratorError> for CliError {
    fn from(e: OrchestratorError) -> Self {
        if e.is_validation() {
            Self::Validation(e.to_string())
        } else {
            Self::Run(e.to_string())
        }
    }
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(p) = path.parent() {
        std::fs::create_dir_all(p).map_err(|e| CliError::Run(format!("{}: {e}", p.display())))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::Run(format!("{}: {e}", path.display())))
}

/// Parse and execute; returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(line) => {
            println!("{line}");
            0
        }
        Err(CliError::Validation(m)) => {
            eprintln!("error: {m}");
            1
        }
        Err(CliError::Run(m)) => {
            eprintln!("error: {m}");
            2
        }
    }
}

fn execute(cmd: Command) -> Result<String, CliError> {
    match cmd {
        Command::Run { config, family, seeds, out, jobs } => {
            let fams = orchestrator::load_config(&config)?;
            let selected: Vec<_> = match &family {
                Some(name) => {
                    let f: Vec<_> = fams.into_iter().filter(|f| &f.name == name).collect();
                    if f.is_empty() {
                        return Err(OrchestratorError::UnknownFamily(name.clone()).into());
                    }
                    f
                }
                None => fams,
            };
            let mut lines = Vec::new();
            let mut failed = 0;
            for cfg in &selected {
                let opts = RunOptions {
                    out_root: orchestrator::resolve_out_root(out.as_deref(), Some(cfg)),
                    jobs,
                    seeds: seeds.clone(),
                };
                let s = orchestrator::run_family(cfg, &opts)?;
                let bad = s.runs.iter().filter(|r| r.error.is_some()).count();
                failed += bad;
                lines.push(format!(
                    "{}: {} runs, {} failed, coverage {} -> {}",
                    s.family,
                    s.runs.len(),
                    bad,
                    if s.coverage_complete { "1.0" } else { "incomplete" },
                    opts.out_root.join(&s.family).display()
                ));
            }
            let line = lines.join("; ");
            if failed > 0 {
                return Err(CliError::Run(format!("{line} ({failed} incomplete runs)")));
            }
            Ok(line)
        }
        Command::Replay { trajectory, out } => {
            let r = orchestrator::replay_file(&trajectory)?;
            let dir = out.unwrap_or_else(|| trajectory.parent().unwrap_or(Path::new(".")).to_path_buf());
            let stem = trajectory.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let path = dir.join(format!("{stem}.replay.json"));
            let json = serde_json::to_string_pretty(&r).map_err(|e| CliError::Run(e.to_string()))?;
            write(&path, &(json + "\n"))?;
            Ok(format!(
                "replayed {} steps: return {:.6}, max drawdown {:.6}, coverage {}/{}/{} -> {}",
                r.steps,
                r.bundle.total_return,
                r.bundle.max_drawdown,
                r.coverage.risk_lifecycle,
                r.coverage.reproducibility,
                r.coverage.agent_trace,
                path.display()
            ))
        }
        Command::Diag { kind: DiagCommand::Repr { dir, view, mode, noise, noise_seed, out } } => {
            let modes = match mode {
                Some(ModeArg::Max) => vec![AnchorMode::MaxAnchor],
                Some(ModeArg::Rolling) => vec![AnchorMode::Rolling],
                None => vec![AnchorMode::MaxAnchor, AnchorMode::Rolling],
            };
            if let Some(e) = noise.filter(|e| !(e.is_finite() && *e >= 0.0)) {
                return Err(CliError::Validation(format!("noise must be a non-negative number, got {e}")));
            }
            let mut opts = ReprOptions { views: view, modes, noise: None, noise_seed, ..ReprOptions::default() };
            let mut rows = orchestrator::diag_repr_dir(&dir, &opts)?;
            if noise.is_some_and(|e| e > 0.0) {
                opts.noise = noise;
                rows.extend(orchestrator::diag_repr_dir(&dir, &opts)?);
            }
            let path = out.unwrap_or(dir).join("diagnostics").join("repr.csv");
            write(&path, &report::repr_csv(&rows))?;
            let anchors: usize = rows
                .iter()
                .filter(|r| r.epsilon == 0.0)
                .map(|r| (&r.trajectory, &r.row.mode, r.row.anchors))
                .collect::<std::collections::BTreeSet<_>>()
                .into_iter()
                .map(|(_, _, a)| a)
                .sum();
            Ok(format!("{} diagnostic rows, {anchors} anchors -> {}", rows.len(), path.display()))
        }
        Command::Diag { kind: DiagCommand::Halluc { dir, export_annotations, sample_seed, out } } => {
            let reports = orchestrator::diag_halluc_dir(&dir)?;
            let base = out.unwrap_or(dir).join("diagnostics");
            let (reps, trajs): (Vec<_>, Vec<_>) = reports.into_iter().unzip();
            write(&base.join("halluc_steps.csv"), &report::halluc_csv(&reps))?;
            write(&base.join("halluc_audit.csv"), &report::audit_csv(&reps))?;
            let json = serde_json::to_string_pretty(&reps).map_err(|e| CliError::Run(e.to_string()))?;
            write(&base.join("halluc_evidence.json"), &(json + "\n"))?;
            let eligible: usize = reps.iter().map(|r| r.scores.iter().filter(|s| s.eligible).count()).sum();
            let mut line = format!("{} trajectories, {eligible} eligible steps -> {}", reps.len(), base.display());
            if let Some(n) = export_annotations {
                // Pool steps across trajectories; step ids are made unique by
                // offsetting each trajectory.
                let (steps, scores) = pooled(&reps, &trajs);
                let sample = halluprobe::export_annotation_sample(&steps, &scores, n, sample_seed);
                let mut buf = Vec::new();
                sample.write_csv(&mut buf).map_err(|e| CliError::Run(e.to_string()))?;
                write(&base.join("annotations.csv"), &String::from_utf8_lossy(&buf))?;
                line.push_str(&format!("; {} annotation rows", sample.rows.len()));
                for n in &sample.notes {
                    eprintln!("{n}");
                }
            }
            Ok(line)
        }
        Command::Diag { kind: DiagCommand::Agreement { annotations } } => {
            let f = std::fs::File::open(&annotations)
                .map_err(|e| CliError::Validation(format!("{}: {e}", annotations.display())))?;
            let a = halluprobe::annotation_agreement(f).map_err(|e| CliError::Validation(e.to_string()))?;
            Ok(format!("{} rows: kappa {:.3}, IoU {:.3}", a.n, a.kappa, a.iou))
        }
        Command::Stats { dir, baseline, out } => {
            let t = orchestrator::stats_dir(&dir, baseline.as_deref())?;
            let base = out.unwrap_or(dir).join("tables");
            write(&base.join("stats_summary.csv"), &report::summary_csv(&t))?;
            write(&base.join("stats_paired.csv"), &report::paired_csv(&t))?;
            Ok(format!("{} summary rows, {} paired rows -> {}", t.summary.len(), t.paired.len(), base.display()))
        }
        Command::Report { dir } => {
            let s = orchestrator::report_dir(&dir)?;
            Ok(format!("{}: tables and charts for {} runs -> {}", s.family, s.runs.len(), dir.display()))
        }
    }
}

/// Concatenate trajectories with step ids offset so they stay unique.
fn pooled(
    reps: &[orchestrator::HallucReport],
    trajs: &[Vec<crate::trajectory::TrajectoryStep>],
) -> (Vec<crate::trajectory::TrajectoryStep>, Vec<halluprobe::ProxyScore>) {
    let mut steps = Vec::new();
    let mut scores = Vec::new();
    let mut offset = 0;
    for (r, t) in reps.iter().zip(trajs) {
        for s in t {
            let mut s = s.clone();
            s.step += offset;
            steps.push(s);
        }
        for p in &r.scores {
            let mut p = p.clone();
            p.step += offset;
            scores.push(p);
        }
        offset += t.len();
    }
    (steps, scores)
}
