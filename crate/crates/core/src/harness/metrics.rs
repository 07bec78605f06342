//! Per-frame trial records and the metrics computed from them.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::PixelBox;
use crate::guidance::{Phase, TargetSource, VibrationCommand};

use super::layout::DepthTrialKind;

/// Histogram bin width for target-center jumps.
pub const JUMP_BIN_PX: f64 = 10.0;
/// Jumps above this are taken as a switch between object instances.
pub const JUMP_THRESHOLD_PX: f64 = 90.0;
pub const CURVE_BINS: usize = 50;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum MetricsError {
    #[error("log has no navigation frames")]
    EmptyNavigation,
    #[error("no trial results to summarize")]
    NoResults,
}

/// One processed frame of a trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub trial: usize,
    pub frame: u64,
    pub t: f64,
    pub phase: Phase,
    pub navigating: bool,
    pub hand: Option<PixelBox>,
    pub target: Option<PixelBox>,
    pub source: Option<TargetSource>,
    pub target_track: Option<u64>,
    pub theta: Option<f64>,
    pub command: Option<VibrationCommand>,
    /// Hex of the bracelet frame sent this frame.
    pub wire: Option<String>,
}

impl FrameRecord {
    pub fn live(&self) -> bool {
        self.source == Some(TargetSource::Live)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    MissedGrasp,
    Timeout,
    Collision,
    TargetLost,
    HandLost,
}

impl FailureReason {
    pub fn as_str(self) -> &'static str {
        match self {
            FailureReason::MissedGrasp => "missed_grasp",
            FailureReason::Timeout => "timeout",
            FailureReason::Collision => "collision",
            FailureReason::TargetLost => "target_lost",
            FailureReason::HandLost => "hand_lost",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial_index: usize,
    pub target_id: String,
    pub success: bool,
    pub failure_reason: Option<FailureReason>,
    pub navigation_duration_s: f64,
    /// Zero when the trial never reached navigation.
    pub detection_percentage: f64,
    pub jump_magnitudes_px: Vec<f64>,
    pub grasp_pulses: u32,
    pub move_back_pulses: u32,
    pub depth_kind: Option<DepthTrialKind>,
    /// Detour the guidance planned, if any ("back" or "above").
    pub planned_detour: Option<DepthTrialKind>,
    #[serde(skip)]
    pub log: Vec<FrameRecord>,
}

/// Live-target frames over navigation frames. Frozen frames count as undetected.
pub fn detection_percentage(log: &[FrameRecord]) -> Result<f64, MetricsError> {
    let nav = log.iter().filter(|r| r.navigating).count();
    if nav == 0 {
        return Err(MetricsError::EmptyNavigation);
    }
    let live = log.iter().filter(|r| r.navigating && r.live()).count();
    Ok(live as f64 / nav as f64)
}

/// Detection indicator over normalized navigation time, 50 bins, averaged
/// across logs. `None` marks bins no log reached.
pub fn binned_detection_curve(logs: &[Vec<FrameRecord>]) -> Result<Vec<Option<f64>>, MetricsError> {
    let mut sum = vec![0.0; CURVE_BINS];
    let mut count = vec![0usize; CURVE_BINS];
    for log in logs {
        let nav: Vec<bool> = log.iter().filter(|r| r.navigating).map(FrameRecord::live).collect();
        if nav.is_empty() {
            return Err(MetricsError::EmptyNavigation);
        }
        let n = nav.len();
        let mut hits = [0usize; CURVE_BINS];
        let mut seen = [0usize; CURVE_BINS];
        for (i, live) in nav.iter().enumerate() {
            // floor(50 * i / (n - 1)) in integers; a float product can land a bin low
            let b = if n == 1 { 0 } else { (i * CURVE_BINS / (n - 1)).min(CURVE_BINS - 1) };
            seen[b] += 1;
            hits[b] += *live as usize;
        }
        for b in 0..CURVE_BINS {
            if seen[b] > 0 {
                sum[b] += hits[b] as f64 / seen[b] as f64;
                count[b] += 1;
            }
        }
    }
    Ok((0..CURVE_BINS).map(|b| (count[b] > 0).then(|| sum[b] / count[b] as f64)).collect())
}

/// |Δcx| between consecutive frames that carry an effective target.
pub fn jump_magnitudes(log: &[FrameRecord]) -> Vec<f64> {
    let centers: Vec<f64> = log.iter().filter_map(|r| r.target.map(|b| b.cx)).collect();
    centers.windows(2).map(|w| (w[1] - w[0]).abs()).collect()
}

/// Counts per 10-px bin; the last bin holds the largest magnitude.
pub fn jump_histogram(mags: &[f64]) -> Vec<u64> {
    let mut h: Vec<u64> = Vec::new();
    for m in mags {
        let b = (m / JUMP_BIN_PX).floor() as usize;
        if h.len() <= b {
            h.resize(b + 1, 0);
        }
        h[b] += 1;
    }
    h
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub trials: usize,
    pub successes: usize,
    pub success_fraction: f64,
    /// Over successful trials.
    pub duration_mean_s: Option<f64>,
    /// Sample standard deviation over successful trials.
    pub duration_sd_s: Option<f64>,
    /// Mean detection percentage over successful trials.
    pub detection_mean: Option<f64>,
    pub jump_count: usize,
    pub jump_histogram: Vec<u64>,
    pub jumps_over_threshold: usize,
    pub failures: BTreeMap<FailureReason, usize>,
}

impl Summary {
    pub fn first_bin_fraction(&self) -> Option<f64> {
        (self.jump_count > 0).then(|| self.jump_histogram.first().copied().unwrap_or(0) as f64 / self.jump_count as f64)
    }
}

fn mean_sd(v: &[f64]) -> (Option<f64>, Option<f64>) {
    if v.is_empty() {
        return (None, None);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = (v.len() > 1).then(|| (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (Some(m), sd)
}

pub fn summarize(results: &[TrialResult]) -> Result<Summary, MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::NoResults);
    }
    let ok: Vec<&TrialResult> = results.iter().filter(|r| r.success).collect();
    let durations: Vec<f64> = ok.iter().map(|r| r.navigation_duration_s).collect();
    let (duration_mean_s, duration_sd_s) = mean_sd(&durations);
    let dets: Vec<f64> = ok.iter().map(|r| r.detection_percentage).collect();
    let (detection_mean, _) = mean_sd(&dets);
    let mags: Vec<f64> = results.iter().flat_map(|r| r.jump_magnitudes_px.iter().copied()).collect();
    let mut failures = BTreeMap::new();
    for r in results {
        if let Some(f) = r.failure_reason {
            *failures.entry(f).or_insert(0) += 1;
        }
    }
    Ok(Summary {
        trials: results.len(),
        successes: ok.len(),
        success_fraction: ok.len() as f64 / results.len() as f64,
        duration_mean_s,
        duration_sd_s,
        detection_mean,
        jump_count: mags.len(),
        jump_histogram: jump_histogram(&mags),
        jumps_over_threshold: mags.iter().filter(|m| **m > JUMP_THRESHOLD_PX).count(),
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(i: u64, navigating: bool, source: Option<TargetSource>, cx: f64) -> FrameRecord {
        FrameRecord {
            trial: 0,
            frame: i,
            t: i as f64 / 30.0,
            phase: if navigating { Phase::Navigate2d } else { Phase::AwaitingDetection },
            navigating,
            hand: None,
            target: source.map(|_| PixelBox::new(cx, 100.0, 20.0, 20.0).unwrap()),
            source,
            target_track: None,
            theta: None,
            command: None,
            wire: None,
        }
    }

    fn log_of(pattern: &[bool]) -> Vec<FrameRecord> {
        pattern
            .iter()
            .enumerate()
            .map(|(i, l)| rec(i as u64, true, Some(if *l { TargetSource::Live } else { TargetSource::Frozen }), 100.0))
            .collect()
    }

    fn result(success: bool, d: f64) -> TrialResult {
        TrialResult {
            trial_index: 0,
            target_id: "x".into(),
            success,
            failure_reason: (!success).then_some(FailureReason::MissedGrasp),
            navigation_duration_s: d,
            detection_percentage: 1.0,
            jump_magnitudes_px: vec![],
            grasp_pulses: 1,
            move_back_pulses: 0,
            depth_kind: None,
            planned_detour: None,
            log: vec![],
        }
    }

    #[test]
    fn detection_fixtures() {
        let mut p = vec![true; 10];
        p[3] = false;
        assert_eq!(detection_percentage(&log_of(&p)).unwrap(), 0.9);
        assert_eq!(detection_percentage(&log_of(&[false; 7])).unwrap(), 0.0);
        let p: Vec<bool> = (0..1000).map(|i| i < 888).collect();
        assert!((detection_percentage(&log_of(&p)).unwrap() - 0.888).abs() < 1e-12);
        let idle = vec![rec(0, false, None, 0.0)];
        assert_eq!(detection_percentage(&idle), Err(MetricsError::EmptyNavigation));
    }

    #[test]
    fn non_navigation_frames_are_ignored() {
        let mut log = log_of(&[true, false]);
        log.insert(0, rec(0, false, None, 0.0));
        log.push(rec(9, false, Some(TargetSource::Live), 0.0));
        assert_eq!(detection_percentage(&log).unwrap(), 0.5);
    }

    #[test]
    fn curve_fixtures() {
        let c = binned_detection_curve(&[log_of(&[true; 200])]).unwrap();
        assert!(c.iter().all(|b| *b == Some(1.0)));
        let half: Vec<bool> = (0..100).map(|i| i < 50).collect();
        let c = binned_detection_curve(&[log_of(&half)]).unwrap();
        for (b, v) in c.iter().enumerate() {
            assert_eq!(*v, Some(if b < 25 { 1.0 } else { 0.0 }), "bin {b}");
        }
        let c = binned_detection_curve(&[log_of(&[true])]).unwrap();
        assert_eq!(c[0], Some(1.0));
        assert!(c[1..].iter().all(Option::is_none));
        assert!(binned_detection_curve(&[vec![rec(0, false, None, 0.0)]]).is_err());
    }

    #[test]
    fn curve_averages_across_logs() {
        let c = binned_detection_curve(&[log_of(&[true; 50]), log_of(&[false; 50])]).unwrap();
        assert!(c.iter().all(|b| *b == Some(0.5)));
    }

    #[test]
    fn jump_fixtures() {
        let still: Vec<FrameRecord> = (0..10).map(|i| rec(i, true, Some(TargetSource::Live), 320.0)).collect();
        let m = jump_magnitudes(&still);
        assert_eq!(m, vec![0.0; 9]);
        assert_eq!(jump_histogram(&m), vec![9]);
        let log = vec![rec(0, true, Some(TargetSource::Live), 100.0), rec(1, true, Some(TargetSource::Live), 413.5)];
        assert_eq!(jump_magnitudes(&log), vec![313.5]);
        // frames without a target are skipped, not treated as zero
        let log = vec![
            rec(0, true, Some(TargetSource::Live), 100.0),
            rec(1, true, None, 0.0),
            rec(2, true, Some(TargetSource::Frozen), 104.0),
        ];
        assert_eq!(jump_magnitudes(&log), vec![4.0]);
        assert_eq!(jump_histogram(&[9.99, 10.0, 35.0]), vec![1, 1, 0, 1]);
    }

    #[test]
    fn summary_fixtures() {
        let s = summarize(&[result(true, 4.0), result(true, 6.0)]).unwrap();
        assert_eq!(s.success_fraction, 1.0);
        assert_eq!(s.duration_mean_s, Some(5.0));
        assert!((s.duration_sd_s.unwrap() - 2f64.sqrt()).abs() < 1e-12);
        assert!(s.failures.is_empty());
        let s = summarize(&[result(true, 4.0), result(false, 30.0)]).unwrap();
        assert_eq!(s.success_fraction, 0.5);
        assert_eq!(s.duration_mean_s, Some(4.0));
        assert_eq!(s.duration_sd_s, None);
        assert_eq!(s.failures[&FailureReason::MissedGrasp], 1);
        assert_eq!(summarize(&[]), Err(MetricsError::NoResults));
    }
}
