//! Output directory layout: per-trial logs, results and summary files.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use thiserror::Error;

use super::metrics::{binned_detection_curve, summarize, FrameRecord, MetricsError, TrialResult, JUMP_BIN_PX, JUMP_THRESHOLD_PX};
use super::{TaskConfig, TaskRun};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{file}:{line}: {source}")]
    Parse {
        file: String,
        line: usize,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

pub const CONFIG_FILE: &str = "config.json";
pub const RESULTS_FILE: &str = "results.ndjson";

fn trial_stem(i: usize) -> String {
    format!("trial_{i:03}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "na".to_string(), |x| format!("{x:.4}"))
}

fn ndjson<T: serde::Serialize>(items: impl IntoIterator<Item = T>) -> String {
    let mut out = String::new();
    for it in items {
        out.push_str(&serde_json::to_string(&it).expect("serializable"));
        out.push('\n');
    }
    out
}

/// Writes config, results, per-trial logs and wire dumps, then the report files.
pub fn write_outputs(dir: &Path, run: &TaskRun) -> Result<(), ReportError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(CONFIG_FILE), serde_json::to_string_pretty(&run.config).expect("serializable") + "\n")?;
    fs::write(dir.join(RESULTS_FILE), ndjson(&run.results))?;
    for (r, wire) in run.results.iter().zip(&run.wire) {
        let stem = trial_stem(r.trial_index);
        fs::write(dir.join(format!("{stem}.ndjson")), ndjson(&r.log))?;
        fs::write(dir.join(format!("{stem}.wire")), wire)?;
    }
    write_report(dir, Some(&run.config), &run.results)
}

fn parse_lines<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, ReportError> {
    let f = fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| ReportError::Parse {
            file: path.display().to_string(),
            line: i + 1,
            source,
        })?);
    }
    Ok(out)
}

/// Loads results and their frame logs from an output directory.
pub fn read_results_dir(dir: &Path) -> Result<(Option<TaskConfig>, Vec<TrialResult>), ReportError> {
    let cfg_path = dir.join(CONFIG_FILE);
    let config = if cfg_path.exists() {
        let text = fs::read_to_string(&cfg_path)?;
        Some(serde_json::from_str(&text).map_err(|source| ReportError::Parse {
            file: cfg_path.display().to_string(),
            line: 0,
            source,
        })?)
    } else {
        None
    };
    let mut results: Vec<TrialResult> = parse_lines(&dir.join(RESULTS_FILE))?;
    for r in &mut results {
        let p = dir.join(format!("{}.ndjson", trial_stem(r.trial_index)));
        if p.exists() {
            r.log = parse_lines::<FrameRecord>(&p)?;
        }
    }
    Ok((config, results))
}

/// report.txt, metrics.csv, curve.csv and jumps_hist.csv.
pub fn write_report(dir: &Path, config: Option<&TaskConfig>, results: &[TrialResult]) -> Result<(), ReportError> {
    let s = summarize(results)?;
    let mut txt = String::new();
    if let Some(c) = config {
        let kind = serde_json::to_value(c.kind).expect("serializable");
        let mode = serde_json::to_value(c.mode).expect("serializable");
        let agent = serde_json::to_value(c.agent.kind).expect("serializable");
        writeln!(txt, "task: {}", kind.as_str().unwrap_or("?")).unwrap();
        writeln!(txt, "seed: {}", c.seed).unwrap();
        writeln!(txt, "mode: {}", mode.as_str().unwrap_or("?")).unwrap();
        writeln!(txt, "agent: {}", agent.as_str().unwrap_or("?")).unwrap();
    }
    writeln!(txt, "trials: {}", s.trials).unwrap();
    writeln!(txt, "successes: {}", s.successes).unwrap();
    writeln!(txt, "success_fraction: {:.4}", s.success_fraction).unwrap();
    writeln!(txt, "duration_mean_s: {}", fmt_opt(s.duration_mean_s)).unwrap();
    writeln!(txt, "duration_sd_s: {}", fmt_opt(s.duration_sd_s)).unwrap();
    writeln!(txt, "detection_mean: {}", fmt_opt(s.detection_mean)).unwrap();
    writeln!(txt, "jumps: {}", s.jump_count).unwrap();
    writeln!(txt, "jumps_first_bin_fraction: {}", fmt_opt(s.first_bin_fraction())).unwrap();
    writeln!(txt, "jumps_over_{JUMP_THRESHOLD_PX}px: {}", s.jumps_over_threshold).unwrap();
    if s.failures.is_empty() {
        writeln!(txt, "failures: none").unwrap();
    } else {
        let parts: Vec<String> = s.failures.iter().map(|(k, v)| format!("{}={v}", k.as_str())).collect();
        writeln!(txt, "failures: {}", parts.join(" ")).unwrap();
    }
    fs::write(dir.join("report.txt"), txt)?;

    let mut csv = String::from(
        "trial,target,success,failure_reason,navigation_duration_s,detection_percentage,grasp_pulses,move_back_pulses,depth_kind,planned_detour,jumps,max_jump_px\n",
    );
    let kind_str = |k: Option<super::DepthTrialKind>| {
        k.map_or(String::new(), |k| serde_json::to_value(k).unwrap().as_str().unwrap().to_string())
    };
    for r in results {
        let max_jump = r.jump_magnitudes_px.iter().copied().fold(0.0, f64::max);
        writeln!(
            csv,
            "{},{},{},{},{:.4},{:.4},{},{},{},{},{},{:.3}",
            r.trial_index,
            r.target_id,
            r.success,
            r.failure_reason.map_or("", |f| f.as_str()),
            r.navigation_duration_s,
            r.detection_percentage,
            r.grasp_pulses,
            r.move_back_pulses,
            kind_str(r.depth_kind),
            kind_str(r.planned_detour),
            r.jump_magnitudes_px.len(),
            max_jump,
        )
        .unwrap();
    }
    fs::write(dir.join("metrics.csv"), csv)?;

    // trials that never navigated have no curve contribution
    let logs: Vec<Vec<FrameRecord>> = results
        .iter()
        .filter(|r| r.log.iter().any(|f| f.navigating))
        .map(|r| r.log.clone())
        .collect();
    let mut curve = String::from("bin,u_start,u_end,detection\n");
    if !logs.is_empty() {
        for (b, v) in binned_detection_curve(&logs)?.into_iter().enumerate() {
            writeln!(curve, "{b},{:.2},{:.2},{}", b as f64 / 50.0, (b + 1) as f64 / 50.0, fmt_opt(v)).unwrap();
        }
    }
    fs::write(dir.join("curve.csv"), curve)?;

    let mut hist = String::from("bin_start_px,bin_end_px,count\n");
    for (b, c) in s.jump_histogram.iter().enumerate() {
        writeln!(hist, "{},{},{c}", b as f64 * JUMP_BIN_PX, (b + 1) as f64 * JUMP_BIN_PX).unwrap();
    }
    fs::write(dir.join("jumps_hist.csv"), hist)?;
    Ok(())
}
