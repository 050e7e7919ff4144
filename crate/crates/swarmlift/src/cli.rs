//! Plumbing behind the `swarmlift` binary: run manifests, checkpoint
//! inspection, and consolidation of run artifacts into summary tables.
//!
//! Everything here is ordinary library code so the binary stays a thin
//! argument-parsing shell and the behaviour is testable without spawning
//! processes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::Config;
use crate::nn::Checkpoint;
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// Run manifests
// ---------------------------------------------------------------------------

/// Writes `manifest.toml` into `out_dir` (creating it if needed) and returns
/// the manifest path.
///
/// The manifest records everything needed to reproduce the run: the crate
/// version, the subcommand, the root seed, the hash of the resolved
/// configuration, and the full configuration snapshot with file values and
/// command-line overrides already merged. The seed is stored as a string so
/// the full `u64` range survives TOML's signed integers.
pub fn write_manifest(
    out_dir: &Path,
    subcommand: &str,
    seed: u64,
    threads: usize,
    config: &Config,
) -> Result<PathBuf> {
    let snapshot: toml::Table = config
        .canonical_toml()
        .parse()
        .map_err(|e| Error::Config(format!("config snapshot did not round-trip: {e}")))?;
    let mut root = toml::Table::new();
    root.insert(
        "version".into(),
        toml::Value::String(env!("CARGO_PKG_VERSION").into()),
    );
    root.insert("subcommand".into(), toml::Value::String(subcommand.into()));
    root.insert("seed".into(), toml::Value::String(seed.to_string()));
    root.insert(
        "config_hash".into(),
        toml::Value::String(format!("{:016x}", config.hash())),
    );
    root.insert("threads".into(), toml::Value::Integer(threads as i64));
    root.insert("config".into(), toml::Value::Table(snapshot));
    fs::create_dir_all(out_dir)?;
    let path = out_dir.join("manifest.toml");
    let text = toml::to_string(&root)
        .map_err(|e| Error::Config(format!("manifest serialization failed: {e}")))?;
    fs::write(&path, text)?;
    Ok(path)
}

// ---------------------------------------------------------------------------
// Checkpoint inspection
// ---------------------------------------------------------------------------

/// Renders a human-readable summary of a checkpoint: what it controls, the
/// network shape, training progress, per-tensor sizes, and input-scaler
/// statistics.
pub fn inspect_text(path: &Path) -> Result<String> {
    let ckpt = Checkpoint::load(path)?;
    let m = &ckpt.meta;
    let mut s = String::new();
    let _ = writeln!(s, "checkpoint {}", path.display());
    let _ = writeln!(s, "  team size      {} MAVs", m.n_mavs);
    let _ = writeln!(s, "  action space   {} ({} dims)", m.action_kind, m.action_dim);
    let _ = writeln!(
        s,
        "  observation    {} x {} frames -> {} dims per agent",
        m.observation, m.history, m.obs_dim
    );
    let _ = writeln!(s, "  critic         {} ({} input dims)", m.critic, m.global_dim);
    let mut arch = format!("{}", m.obs_dim);
    for h in &m.hidden {
        let _ = write!(arch, " -> {h}");
    }
    let _ = write!(arch, " -> {}", m.action_dim);
    let _ = writeln!(s, "  actor          {arch} ({})", m.activation);
    let _ = writeln!(
        s,
        "  trained        iteration {}, {} env steps",
        m.iteration, m.env_steps
    );
    let _ = writeln!(s, "  seed           {}", m.seed);
    let _ = writeln!(s, "  config hash    {}", m.config_hash);
    let _ = writeln!(s, "  tensors");
    let mut total = 0usize;
    for (name, data) in ckpt.tensors() {
        let _ = writeln!(s, "    {name:<22} {} values", data.len());
        total += data.len();
    }
    let _ = writeln!(s, "  total          {total} values");
    if let (Some(mean), Some(var), Some(count)) = (
        ckpt.tensor("scaler.obs.mean"),
        ckpt.tensor("scaler.obs.var"),
        ckpt.tensor("scaler.obs.count"),
    ) {
        let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in var {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let _ = writeln!(
            s,
            "  obs scaler     count {:.0}, mean norm {:.4}, var range [{:.4}, {:.4}]",
            count[0], norm, lo, hi
        );
    }
    Ok(s)
}

// ---------------------------------------------------------------------------
// Export: consolidate run artifacts
// ---------------------------------------------------------------------------

/// What [`export_runs`] found and wrote.
#[derive(Debug)]
pub struct ExportReport {
    /// Summary tables written, in a deterministic order.
    pub written: Vec<PathBuf>,
    /// Number of source CSV files that contributed rows.
    pub sources: usize,
}

/// Walks `run_dir` recursively, classifies every CSV it recognises (training
/// metrics, evaluation metrics, ablation comparisons), and merges each class
/// into one summary table under `out_dir`.
///
/// Sources are visited in sorted path order and outputs are plain overwrites,
/// so re-exporting the same tree is byte-identical. Returns an empty
/// `written` list when the tree contains nothing recognisable.
pub fn export_runs(run_dir: &Path, out_dir: &Path) -> Result<ExportReport> {
    let mut csvs = Vec::new();
    collect_csvs(run_dir, out_dir, &mut csvs)?;
    csvs.sort();

    let mut train = vec!["source,iterations,env_steps,ep_return_first,ep_return_final".to_string()];
    let mut eval =
        vec!["source,runs,completed,reached,pos_rmse,att_rmse_deg,time_to_target".to_string()];
    let mut ablation: Vec<String> = Vec::new();
    let mut sources = 0usize;

    for path in &csvs {
        let text = fs::read_to_string(path)?;
        let mut lines = text.lines();
        let Some(header) = lines.next() else { continue };
        let source = path
            .strip_prefix(run_dir)
            .unwrap_or(path)
            .display()
            .to_string();
        if header.starts_with("iteration,") {
            if let Some(row) = summarize_training(header, lines, &source) {
                train.push(row);
                sources += 1;
            }
        } else if header.starts_with("repeat,") {
            if let Some(row) = summarize_eval(header, lines, &source) {
                eval.push(row);
                sources += 1;
            }
        } else if header.starts_with("variant,") {
            if ablation.is_empty() {
                ablation.push(format!("source,{header}"));
            }
            let mut any = false;
            for line in lines.filter(|l| !l.trim().is_empty()) {
                ablation.push(format!("{source},{line}"));
                any = true;
            }
            if any {
                sources += 1;
            }
        }
    }

    let mut written = Vec::new();
    let tables: [(&str, &[String]); 3] = [
        ("training_summary.csv", &train),
        ("eval_summary.csv", &eval),
        ("ablation_summary.csv", &ablation),
    ];
    for (name, rows) in tables {
        if rows.len() > 1 {
            fs::create_dir_all(out_dir)?;
            let path = out_dir.join(name);
            fs::write(&path, rows.join("\n") + "\n")?;
            written.push(path);
        }
    }
    Ok(ExportReport { written, sources })
}

/// Recursively collects `.csv` paths under `dir`, skipping `skip` (the export
/// output directory) so re-exports never consume their own outputs.
fn collect_csvs(dir: &Path, skip: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path == skip {
            continue;
        }
        if path.is_dir() {
            collect_csvs(&path, skip, out)?;
        } else if path.extension().is_some_and(|e| e == "csv") {
            out.push(path);
        }
    }
    Ok(())
}

/// Column index of `name` in a comma-separated header.
fn column(header: &str, name: &str) -> Option<usize> {
    header.split(',').position(|c| c.trim() == name)
}

fn field(line: &str, idx: usize) -> Option<f64> {
    line.split(',').nth(idx)?.trim().parse().ok()
}

/// One row per training log: iteration count plus first/final mean returns.
fn summarize_training<'a>(
    header: &str,
    lines: impl Iterator<Item = &'a str>,
    source: &str,
) -> Option<String> {
    let it = column(header, "iteration")?;
    let steps = column(header, "env_steps")?;
    let ret = column(header, "ep_return_mean")?;
    let rows: Vec<&str> = lines.filter(|l| !l.trim().is_empty()).collect();
    let (first, last) = (rows.first()?, rows.last()?);
    Some(format!(
        "{source},{},{},{},{}",
        field(last, it)?,
        field(last, steps)?,
        field(first, ret)?,
        field(last, ret)?,
    ))
}

/// One row per evaluation log: run counts plus means over completed runs.
fn summarize_eval<'a>(
    header: &str,
    lines: impl Iterator<Item = &'a str>,
    source: &str,
) -> Option<String> {
    let completed = column(header, "completed")?;
    let reached = column(header, "reached")?;
    let cols = [
        column(header, "pos_rmse")?,
        column(header, "att_rmse_deg")?,
        column(header, "time_to_target")?,
    ];
    let (mut runs, mut done, mut hit) = (0usize, 0usize, 0usize);
    let mut sums = [0.0f64; 3];
    for line in lines.filter(|l| !l.trim().is_empty()) {
        runs += 1;
        if field(line, completed)? != 0.0 {
            done += 1;
            for (s, &c) in sums.iter_mut().zip(&cols) {
                *s += field(line, c)?;
            }
        }
        if field(line, reached)? != 0.0 {
            hit += 1;
        }
    }
    if runs == 0 {
        return None;
    }
    let n = done.max(1) as f64;
    Some(format!(
        "{source},{runs},{done},{hit},{},{},{}",
        sums[0] / n,
        sums[1] / n,
        sums[2] / n,
    ))
}
