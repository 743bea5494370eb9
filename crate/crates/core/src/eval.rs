//! Per-level overlap metrics, foveal distance statistics and 2D gaze scoring
//! by back-projection.
//!
//! All metrics are pure functions of grid pairs; [`evaluate`] folds them over
//! a sample split with a caller-supplied forecast function so the same
//! aggregation path serves trained models and the non-learned baselines.

use nalgebra::{Unit, Vector3};
use serde::Serialize;

use crate::dataset::SpanSample;
use crate::error::{Error, Result};
use crate::forecaster::Forecast;
use crate::geom::{GazeSample, Pose, SpanLevel};
use crate::voxel::OccupancyGrid;

/// Set-overlap scores of one grid pair. `both_empty` marks the pair where
/// pred and truth are both empty; such pairs score 1 by convention and are
/// counted separately by [`evaluate`].
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct GridMetrics {
    pub iou: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub both_empty: bool,
}

/// Popcount-based IoU, F1, precision and recall of `pred` against `truth`.
pub fn grid_metrics(pred: &OccupancyGrid, truth: &OccupancyGrid) -> Result<GridMetrics> {
    let i = pred.intersection_count(truth)? as f64;
    let p = pred.count() as f64;
    let t = truth.count() as f64;
    if p == 0.0 && t == 0.0 {
        return Ok(GridMetrics {
            iou: 1.0,
            f1: 1.0,
            precision: 1.0,
            recall: 1.0,
            both_empty: true,
        });
    }
    let precision = if p > 0.0 { i / p } else { 0.0 };
    let recall = if t > 0.0 { i / t } else { 0.0 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(GridMetrics {
        iou: i / (p + t - i),
        f1,
        precision,
        recall,
        both_empty: false,
    })
}

/// Distance statistics between two occupied-cell sets, in centimeters:
/// minimum pairwise distance, symmetric Chamfer mean and symmetric Hausdorff
/// maximum, all over cell centers.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DistanceStats {
    pub min_cm: f64,
    pub avg_cm: f64,
    pub max_cm: f64,
}

/// Foveal localization error between `pred` and `truth`. Returns `None` when
/// either grid is empty; callers count such samples as dropped.
pub fn foveal_distance_stats(
    pred: &OccupancyGrid,
    truth: &OccupancyGrid,
) -> Result<Option<DistanceStats>> {
    // Geometry must match even when a side is empty.
    pred.intersection_count(truth)?;
    if pred.is_empty() || truth.is_empty() {
        return Ok(None);
    }
    let a: Vec<Vector3<f64>> = pred
        .occupied_cells()
        .into_iter()
        .map(|(x, y, z)| pred.cell_center(x, y, z))
        .collect();
    let b: Vec<Vector3<f64>> = truth
        .occupied_cells()
        .into_iter()
        .map(|(x, y, z)| truth.cell_center(x, y, z))
        .collect();
    let nearest = |from: &[Vector3<f64>], to: &[Vector3<f64>]| -> Vec<f64> {
        from.iter()
            .map(|p| to.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min))
            .collect()
    };
    let na = nearest(&a, &b);
    let nb = nearest(&b, &a);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let peak = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
    Ok(Some(DistanceStats {
        min_cm: 100.0 * na.iter().copied().fold(f64::INFINITY, f64::min),
        avg_cm: 100.0 * 0.5 * (mean(&na) + mean(&nb)),
        max_cm: 100.0 * peak(&na).max(peak(&nb)),
    }))
}

/// Pinhole camera used to back-project 3D forecasts onto the 2D image plane.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CameraModel {
    pub focal_px: f64,
    pub principal_point_px: [f64; 2],
    pub image_size_px: [f64; 2],
}

impl Default for CameraModel {
    fn default() -> Self {
        Self {
            focal_px: 320.0,
            principal_point_px: [320.0, 240.0],
            image_size_px: [640.0, 480.0],
        }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.focal_px > 0.0) {
            return Err(Error::InvalidConfig("focal length must be positive".into()));
        }
        for a in 0..2 {
            if !(self.principal_point_px[a] >= 0.0
                && self.principal_point_px[a] <= self.image_size_px[a])
            {
                return Err(Error::InvalidConfig(
                    "principal point must lie inside the image".into(),
                ));
            }
        }
        Ok(())
    }

    /// Project a local-frame direction; `None` for directions at or behind
    /// the image plane (z <= 0).
    pub fn project(&self, dir: &Vector3<f64>) -> Option<[f64; 2]> {
        if dir.z <= 0.0 {
            return None;
        }
        Some([
            self.principal_point_px[0] + self.focal_px * dir.x / dir.z,
            self.principal_point_px[1] + self.focal_px * dir.y / dir.z,
        ])
    }

    /// Pixel radius subtended by `deg` of eccentricity at the image center.
    pub fn radius_for_deg(&self, deg: f64) -> f64 {
        self.focal_px * deg.to_radians().tan()
    }
}

/// Back-project the forecast's strongest foveal cell and emit `n_steps`
/// image points swept along the great circle from the current gaze direction
/// to that cell. Entries are `None` where the swept direction points at or
/// behind the camera; a target behind the camera voids the whole sequence.
pub fn project_to_2d(
    forecast: &Forecast,
    head_pose: &Pose,
    cam: &CameraModel,
    current_gaze: &GazeSample,
    n_steps: usize,
) -> Result<Vec<Option<[f64; 2]>>> {
    cam.validate()?;
    if n_steps == 0 {
        return Err(Error::InvalidConfig("n_steps must be positive".into()));
    }
    let fov = forecast.level_soft(SpanLevel::Foveal);
    let first = fov[0];
    if fov.iter().all(|&v| v == first) {
        return Err(Error::Eval(
            "foveal forecast is degenerate (all cells equal)".into(),
        ));
    }
    let mut best = 0;
    for (i, &v) in fov.iter().enumerate() {
        if v > fov[best] {
            best = i;
        }
    }
    let r = forecast.resolution;
    let (x, y, z) = (best / (r * r), best / r % r, best % r);
    let grid = &forecast.binarized[0];
    let local = head_pose.to_local(&grid.cell_center(x, y, z));
    if local.z <= 0.0 {
        return Ok(vec![None; n_steps]);
    }
    let target = Unit::new_normalize(local);
    let start = Unit::new_normalize(current_gaze.direction);
    let mut out = Vec::with_capacity(n_steps);
    for k in 1..=n_steps {
        let t = k as f64 / n_steps as f64;
        // Antipodal start/target has no unique great circle; jump to the
        // target rather than picking an arbitrary plane.
        let dir = start.try_slerp(&target, t, 1e-9).unwrap_or(target);
        out.push(cam.project(&dir));
    }
    Ok(out)
}

/// 2D anticipation scores under one-to-one time alignment.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Score2d {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Score a predicted 2D sequence against time-aligned truth points. A step
/// is a hit when the prediction exists and lands within `radius_px` of the
/// truth point; out-of-frame predictions never hit.
pub fn score_2d(
    pred: &[Option<[f64; 2]>],
    truth: &[[f64; 2]],
    radius_px: f64,
) -> Result<Score2d> {
    if pred.len() != truth.len() {
        return Err(Error::Shape {
            expected: format!("{} prediction steps", truth.len()),
            got: format!("{}", pred.len()),
        });
    }
    if truth.is_empty() {
        return Err(Error::Eval("empty 2D sequences".into()));
    }
    let mut hits = 0usize;
    let mut made = 0usize;
    for (p, t) in pred.iter().zip(truth) {
        if let Some(p) = p {
            made += 1;
            if (p[0] - t[0]).hypot(p[1] - t[1]) <= radius_px {
                hits += 1;
            }
        }
    }
    let precision = if made > 0 { hits as f64 / made as f64 } else { 0.0 };
    let recall = hits as f64 / truth.len() as f64;
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(Score2d { f1, precision, recall })
}

/// Mean per-level scores of one split.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct LevelReport {
    pub iou: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Aggregated evaluation of one split: arithmetic means of per-sample
/// metrics, foveal distance statistics over the samples where both sides are
/// non-empty, and the bookkeeping counts behind them.
#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    pub levels: [LevelReport; 4],
    /// `None` when every sample was dropped from distance scoring.
    pub foveal_distance_cm: Option<DistanceStats>,
    pub sample_count: usize,
    /// Samples excluded from `foveal_distance_cm` (empty pred or truth).
    pub dropped_count: usize,
    /// Per level, how many samples scored 1 via the both-empty convention.
    pub both_empty_counts: [usize; 4],
}

impl MetricReport {
    /// One `level,metric,value` row per scalar, plus the counters.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("level,metric,value\n");
        for level in SpanLevel::ALL {
            let m = &self.levels[level.index()];
            for (name, v) in [
                ("iou", m.iou),
                ("f1", m.f1),
                ("precision", m.precision),
                ("recall", m.recall),
            ] {
                out.push_str(&format!("{},{name},{v}\n", level.name()));
            }
        }
        if let Some(d) = &self.foveal_distance_cm {
            out.push_str(&format!("foveal,distance_min_cm,{}\n", d.min_cm));
            out.push_str(&format!("foveal,distance_avg_cm,{}\n", d.avg_cm));
            out.push_str(&format!("foveal,distance_max_cm,{}\n", d.max_cm));
        }
        out.push_str(&format!("all,sample_count,{}\n", self.sample_count));
        out.push_str(&format!("all,dropped_count,{}\n", self.dropped_count));
        for level in SpanLevel::ALL {
            out.push_str(&format!(
                "{},both_empty_count,{}\n",
                level.name(),
                self.both_empty_counts[level.index()]
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Evaluate `forecast` over a split. Samples are visited in slice order and
/// reduced sequentially, so reports are deterministic for a fixed split.
pub fn evaluate<F>(samples: &[&SpanSample], mut forecast: F) -> Result<MetricReport>
where
    F: FnMut(&SpanSample) -> Result<Forecast>,
{
    if samples.is_empty() {
        return Err(Error::Eval("empty evaluation split".into()));
    }
    let mut levels = [LevelReport::default(); 4];
    let mut both_empty_counts = [0usize; 4];
    let mut dist_sum = DistanceStats { min_cm: 0.0, avg_cm: 0.0, max_cm: 0.0 };
    let mut dist_n = 0usize;
    for sample in samples {
        let fc = forecast(sample)?;
        for level in SpanLevel::ALL {
            let li = level.index();
            let m = grid_metrics(&fc.binarized[li], &sample.target[li])?;
            levels[li].iou += m.iou;
            levels[li].f1 += m.f1;
            levels[li].precision += m.precision;
            levels[li].recall += m.recall;
            if m.both_empty {
                both_empty_counts[li] += 1;
            }
        }
        if let Some(d) = foveal_distance_stats(&fc.binarized[0], &sample.target[0])? {
            dist_sum.min_cm += d.min_cm;
            dist_sum.avg_cm += d.avg_cm;
            dist_sum.max_cm += d.max_cm;
            dist_n += 1;
        }
    }
    let n = samples.len() as f64;
    for l in &mut levels {
        l.iou /= n;
        l.f1 /= n;
        l.precision /= n;
        l.recall /= n;
    }
    let foveal_distance_cm = (dist_n > 0).then(|| DistanceStats {
        min_cm: dist_sum.min_cm / dist_n as f64,
        avg_cm: dist_sum.avg_cm / dist_n as f64,
        max_cm: dist_sum.max_cm / dist_n as f64,
    });
    Ok(MetricReport {
        levels,
        foveal_distance_cm,
        sample_count: samples.len(),
        dropped_count: samples.len() - dist_n,
        both_empty_counts,
    })
}
