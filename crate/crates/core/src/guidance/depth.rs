//! Depth-map obstacle check along the hand-to-target corridor.

use serde::{Deserialize, Serialize};

use super::{GuidanceConfig, GuidanceError};
use crate::geometry::{DepthMap, DepthMode, PixelBox};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DetourKind {
    Above { clearance_row_px: f64 },
    Back,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetourPlan {
    #[serde(flatten)]
    pub kind: DetourKind,
    /// Highest image row reached by the obstacle in the corridor columns.
    pub obstacle_top_row: f64,
    /// Leftmost and rightmost obstacle columns seen in the corridor.
    pub obstacle_cols: (f64, f64),
    /// Nearest obstacle value in the corridor.
    pub obstacle_near_depth: f64,
    pub target_depth: f64,
}

fn readable(v: f32, mode: DepthMode) -> bool {
    v.is_finite() && (mode == DepthMode::Relative || v > 0.0)
}

/// True when `v` lies in front of `reference` by more than `margin`.
/// Relative maps hold disparity, so nearer means larger.
pub fn nearer_than(v: f64, reference: f64, margin: f64, mode: DepthMode) -> bool {
    match mode {
        DepthMode::Metric => v < reference - margin,
        DepthMode::Relative => v > reference + margin,
    }
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Median value over the central half (in each axis) of a box.
pub fn box_depth(depth: &DepthMap, b: &PixelBox) -> Option<f64> {
    let x0 = (b.cx - b.w / 4.0).floor().max(0.0) as i64;
    let x1 = (b.cx + b.w / 4.0).floor() as i64;
    let y0 = (b.cy - b.h / 4.0).floor().max(0.0) as i64;
    let y1 = (b.cy + b.h / 4.0).floor() as i64;
    let mut vals = Vec::new();
    for row in y0..=y1 {
        for col in x0..=x1 {
            if let Some(v) = depth.get(col as u32, row as u32) {
                if readable(v, depth.mode) {
                    vals.push(v as f64);
                }
            }
        }
    }
    median(vals)
}

/// Value at the pixel under the box center.
pub fn center_depth(depth: &DepthMap, b: &PixelBox) -> Option<f64> {
    depth.sample(b.cx, b.cy).filter(|v| readable(*v, depth.mode)).map(f64::from)
}

fn inside(b: &PixelBox, col: i64, row: i64) -> bool {
    let (x, y) = (col as f64 + 0.5, row as f64 + 0.5);
    x >= b.left() && x <= b.right() && y >= b.top() && y <= b.bottom()
}

/// Pixels of a band `hand.h` tall following the segment from the hand
/// center to the target center, minus the hand and target boxes.
fn corridor(depth: &DepthMap, hand: &PixelBox, target: &PixelBox) -> Vec<(i64, i64)> {
    let (w, h) = (depth.width_px as i64, depth.height_px as i64);
    let (dx, dy) = (target.cx - hand.cx, target.cy - hand.cy);
    let steps = dx.abs().max(dy.abs()).ceil().max(1.0) as usize;
    let half = hand.h / 2.0;
    let mut seen = vec![false; (w * h) as usize];
    let mut out = Vec::new();
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let (x, y) = (hand.cx + t * dx, hand.cy + t * dy);
        let col = x.floor() as i64;
        if col < 0 || col >= w {
            continue;
        }
        let r0 = (y - half).floor().max(0.0) as i64;
        let r1 = ((y + half).floor() as i64).min(h - 1);
        for row in r0..=r1 {
            let k = (row * w + col) as usize;
            if seen[k] || inside(hand, col, row) || inside(target, col, row) {
                continue;
            }
            seen[k] = true;
            out.push((col, row));
        }
    }
    out
}

/// Decides between proceeding, going above an obstacle, or moving back.
/// `Ok(None)` means the corridor is clear.
pub fn plan_depth_detour(
    depth: &DepthMap,
    hand: &PixelBox,
    target: &PixelBox,
    cfg: &GuidanceConfig,
) -> Result<Option<DetourPlan>, GuidanceError> {
    let target_depth = box_depth(depth, target).ok_or(GuidanceError::DegenerateDepth)?;
    let mode = depth.mode;
    let is_obstacle = |col: i64, row: i64| -> bool {
        depth
            .get(col as u32, row as u32)
            .filter(|v| readable(*v, mode))
            .is_some_and(|v| nearer_than(v as f64, target_depth, cfg.depth_margin_m, mode))
    };

    let mut cols: Vec<i64> = Vec::new();
    let mut near = match mode {
        DepthMode::Metric => f64::INFINITY,
        DepthMode::Relative => f64::NEG_INFINITY,
    };
    let mut top_in_corridor: std::collections::BTreeMap<i64, i64> = Default::default();
    for (col, row) in corridor(depth, hand, target) {
        if !is_obstacle(col, row) {
            continue;
        }
        let v = depth.get(col as u32, row as u32).unwrap() as f64;
        near = match mode {
            DepthMode::Metric => near.min(v),
            DepthMode::Relative => near.max(v),
        };
        cols.push(col);
        let e = top_in_corridor.entry(col).or_insert(row);
        *e = (*e).min(row);
    }
    if top_in_corridor.is_empty() {
        return Ok(None);
    }

    let mut top = i64::MAX;
    for (&col, &start) in &top_in_corridor {
        let mut row = start;
        while row > 0 && is_obstacle(col, row - 1) {
            row -= 1;
        }
        top = top.min(row);
    }
    let top = top as f64;
    let lo = *cols.iter().min().unwrap() as f64;
    let hi = *cols.iter().max().unwrap() as f64 + 1.0;
    let kind = if top < cfg.above_max_top_row_px {
        DetourKind::Back
    } else {
        DetourKind::Above {
            clearance_row_px: top - cfg.clearance_px,
        }
    };
    Ok(Some(DetourPlan {
        kind,
        obstacle_top_row: top,
        obstacle_cols: (lo, hi),
        obstacle_near_depth: near,
        target_depth,
    }))
}

/// Nearest obstacle value along its lowest image row inside the plan's
/// columns, skipping the hand box. That row is where the obstacle meets the
/// table, the same surface the hand moves on, so the two depths compare
/// like with like.
pub fn obstacle_base_depth(depth: &DepthMap, plan: &DetourPlan, hand: &PixelBox, margin: f64) -> Option<f64> {
    let (lo, hi) = plan.obstacle_cols;
    let c0 = lo.floor().max(0.0) as i64;
    let c1 = (hi.ceil() as i64).min(depth.width_px as i64);
    let obstacle_at = |col: i64, row: i64| -> Option<f64> {
        if inside(hand, col, row) {
            return None;
        }
        let v = depth.get(col as u32, row as u32)?;
        (readable(v, depth.mode) && nearer_than(v as f64, plan.target_depth, margin, depth.mode)).then_some(v as f64)
    };
    for row in (0..depth.height_px as i64).rev() {
        let vals: Vec<f64> = (c0..c1).filter_map(|col| obstacle_at(col, row)).collect();
        if !vals.is_empty() {
            return Some(match depth.mode {
                DepthMode::Metric => vals.into_iter().fold(f64::INFINITY, f64::min),
                DepthMode::Relative => vals.into_iter().fold(f64::NEG_INFINITY, f64::max),
            });
        }
    }
    None
}
