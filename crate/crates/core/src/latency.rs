//! Staged latency harness: times the four pipeline stages in isolation over
//! replayed windows and reports per-stage statistics plus the real-time
//! factor against the 2 s forecasting window.
//!
//! Stage boundaries follow the processing order of one window: temporal and
//! spatial point preprocessing, angular span localization, voxelization and
//! model inference. Timing is single-threaded on the monotonic clock; every
//! stage consumes inputs captured outside its timer.

use std::hint::black_box;
use std::time::Instant;

use serde::Serialize;

use crate::dataset::{build_samples, SampleSpec, Streams};
use crate::error::{Error, Result};
use crate::forecaster::Forecaster;
use crate::geom::{classify_span, level_axis, select_observed, SpanLevel};
use crate::voxel::{anchor_origin, voxelize};

/// The timed stages, in pipeline order.
pub const STAGE_NAMES: [&str; 4] = [
    "point preprocessing",
    "3d visual span localization",
    "voxelization",
    "model inference",
];

/// Forecast window the real-time factor is measured against.
pub const WINDOW_MS: f64 = 2000.0;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct StageStats {
    pub mean_ms: f64,
    pub std_ms: f64,
    pub p95_ms: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StageRow {
    pub name: String,
    #[serde(flatten)]
    pub stats: StageStats,
}

/// Benchmark outcome. `total_mean_ms` is the sum of stage means and
/// `real_time_factor` that total divided by the 2000 ms window.
#[derive(Debug, Clone, Serialize)]
pub struct LatencyReport {
    pub stages: Vec<StageRow>,
    pub total_mean_ms: f64,
    pub real_time_factor: f64,
    pub windows: usize,
    pub warmup: usize,
    pub point_count: usize,
}

/// Population statistics of one stage's wall times.
pub fn stage_stats(ms: &[f64]) -> StageStats {
    assert!(!ms.is_empty(), "stage timings must be non-empty");
    let n = ms.len() as f64;
    let mean = ms.iter().sum::<f64>() / n;
    let var = ms.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let mut sorted = ms.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite timings"));
    let idx = ((0.95 * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
    StageStats {
        mean_ms: mean,
        std_ms: var.sqrt(),
        p95_ms: sorted[idx],
    }
}

/// Assemble a report from per-stage raw times (milliseconds, one entry per
/// window per stage). Pure so the additivity and real-time-factor contracts
/// are testable without a wall clock.
pub fn report_from_times(
    times: &[Vec<f64>; 4],
    warmup: usize,
    point_count: usize,
) -> Result<LatencyReport> {
    let windows = times[0].len();
    if windows == 0 || times.iter().any(|t| t.len() != windows) {
        return Err(Error::Eval(
            "stage timing vectors must be non-empty and equal-length".into(),
        ));
    }
    let stages: Vec<StageRow> = STAGE_NAMES
        .iter()
        .zip(times)
        .map(|(name, t)| StageRow {
            name: (*name).into(),
            stats: stage_stats(t),
        })
        .collect();
    let total_mean_ms = stages.iter().map(|s| s.stats.mean_ms).sum();
    Ok(LatencyReport {
        stages,
        total_mean_ms,
        real_time_factor: total_mean_ms / WINDOW_MS,
        windows,
        warmup,
        point_count,
    })
}

impl LatencyReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Fixed-width table, one row per stage plus total and real-time factor.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<30} {:>10} {:>10} {:>10}\n",
            "stage", "mean ms", "std ms", "p95 ms"
        ));
        for row in &self.stages {
            out.push_str(&format!(
                "{:<30} {:>10.3} {:>10.3} {:>10.3}\n",
                row.name, row.stats.mean_ms, row.stats.std_ms, row.stats.p95_ms
            ));
        }
        out.push_str(&format!("{:<30} {:>10.3}\n", "total", self.total_mean_ms));
        out.push_str(&format!(
            "real-time factor (over {WINDOW_MS} ms window): {:.4}\n",
            self.real_time_factor
        ));
        out
    }
}

/// Replay `windows` sample windows (cycling when the stream is shorter) and
/// time each stage in isolation; the first `warmup` iterations are discarded.
pub fn run_benchmark(
    streams: &Streams,
    spec: &SampleSpec,
    model: &Forecaster,
    windows: usize,
    warmup: usize,
) -> Result<LatencyReport> {
    if windows == 0 {
        return Err(Error::InvalidConfig("windows must be positive".into()));
    }
    let built = build_samples(streams, "bench", spec)?;
    if built.samples.is_empty() {
        return Err(Error::Eval("stream yields no benchmark windows".into()));
    }
    model.check_sample(&built.samples[0])?;
    let cfg = &spec.cfg;

    let mut times: [Vec<f64>; 4] = Default::default();
    for i in 0..warmup + windows {
        let sample = &built.samples[i % built.samples.len()];
        let pose = sample.anchor;
        let gaze = sample.current_gaze.direction;

        let t0 = Instant::now();
        let survivors = select_observed(&streams.points, &pose, sample.sample_time, cfg);
        let d0 = t0.elapsed();

        let t1 = Instant::now();
        let selections: Vec<_> = SpanLevel::ALL
            .iter()
            .map(|&level| {
                let axis = level_axis(level, &gaze);
                classify_span(&survivors, &pose, &axis, cfg.eccentricities.get(level))
            })
            .collect();
        let d1 = t1.elapsed();

        let t2 = Instant::now();
        let anchor = pose.translation;
        let mut grids = Vec::with_capacity(5);
        for sel in &selections {
            grids.push(voxelize(&sel.points, &anchor, cfg));
        }
        grids.push(voxelize(&survivors, &anchor, cfg));
        let d2 = t2.elapsed();

        let t3 = Instant::now();
        let forecast = model.predict(sample)?;
        let d3 = t3.elapsed();

        black_box((&grids, &forecast));
        if i >= warmup {
            for (slot, d) in times.iter_mut().zip([d0, d1, d2, d3]) {
                slot.push(d.as_secs_f64() * 1e3);
            }
        }
    }
    debug_assert_eq!(
        anchor_origin(&built.samples[0].anchor.translation, cfg.cube_length_m),
        built.samples[0].target[0].origin(),
        "bench voxelization must anchor like the dataset"
    );
    report_from_times(&times, warmup, streams.points.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forecaster::ModelConfig;
    use crate::synth::{generate, standard_behavior, standard_scene};

    #[test]
    fn stats_closed_forms() {
        let s = stage_stats(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert!((s.mean_ms - 5.0).abs() < 1e-12);
        assert!((s.std_ms - 2.0).abs() < 1e-12);
        assert_eq!(s.p95_ms, 9.0);

        let one = stage_stats(&[3.5]);
        assert_eq!((one.mean_ms, one.std_ms, one.p95_ms), (3.5, 0.0, 3.5));
    }

    #[test]
    fn report_total_is_sum_and_rtf_matches_formula() {
        // One window, stage times summing to 71.241 ms: real-time factor
        // must come out near 0.0356.
        let times = [vec![4.541], vec![1.811], vec![45.406], vec![19.483]];
        let r = report_from_times(&times, 0, 0).unwrap();
        assert!((r.total_mean_ms - 71.241).abs() < 1e-9);
        assert!((r.real_time_factor - 0.0356205).abs() < 1e-4);
        let sum: f64 = r.stages.iter().map(|s| s.stats.mean_ms).sum();
        assert!((r.total_mean_ms - sum).abs() < 1e-12);
        assert!(r.real_time_factor > 0.0);

        assert!(report_from_times(&[vec![], vec![], vec![], vec![]], 0, 0).is_err());
        assert!(report_from_times(&[vec![1.0], vec![1.0], vec![1.0], vec![]], 0, 0).is_err());
    }

    #[test]
    fn benchmark_runs_and_keeps_contracts() {
        let spec = SampleSpec::default();
        let gen = generate(&standard_scene(1), &standard_behavior(1, 6.0), &spec.cfg).unwrap();
        let streams = Streams {
            points: gen.points,
            poses: gen.poses,
            gazes: gen.gazes,
            warnings: vec![],
        };
        let model = Forecaster::new(ModelConfig::default()).unwrap();
        let r = run_benchmark(&streams, &spec, &model, 5, 1).unwrap();
        assert_eq!(r.stages.len(), 4);
        assert_eq!(r.windows, 5);
        let sum: f64 = r.stages.iter().map(|s| s.stats.mean_ms).sum();
        assert!((r.total_mean_ms - sum).abs() < 1e-9);
        assert!(r.real_time_factor > 0.0);
        for row in &r.stages {
            assert!(row.stats.mean_ms >= 0.0 && row.stats.p95_ms >= row.stats.mean_ms - 1e-9 || row.stats.std_ms == 0.0);
        }
        let table = r.to_table();
        assert!(table.contains("point preprocessing"));
        assert!(table.contains("real-time factor"));
        let parsed: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(parsed["stages"].as_array().unwrap().len(), 4);

        assert!(run_benchmark(&streams, &spec, &model, 0, 0).is_err());
    }

    #[test]
    fn doubling_points_increases_preprocessing_mean() {
        let spec = SampleSpec::default();
        let gen = generate(&standard_scene(2), &standard_behavior(2, 6.0), &spec.cfg).unwrap();
        let base = Streams {
            points: gen.points,
            poses: gen.poses,
            gazes: gen.gazes,
            warnings: vec![],
        };
        let mut doubled = base.clone();
        doubled.points.extend(base.points.iter().copied());
        // Re-sort by observation time to keep the stream contract.
        doubled
            .points
            .sort_by(|a, b| a.observed_at.partial_cmp(&b.observed_at).unwrap());
        let model = Forecaster::new(ModelConfig::default()).unwrap();
        let r1 = run_benchmark(&base, &spec, &model, 20, 2).unwrap();
        let r2 = run_benchmark(&doubled, &spec, &model, 20, 2).unwrap();
        assert_eq!(r2.point_count, 2 * r1.point_count);
        assert!(
            r2.stages[0].stats.mean_ms > r1.stages[0].stats.mean_ms,
            "preprocessing {} ms on doubled points vs {} ms",
            r2.stages[0].stats.mean_ms,
            r1.stages[0].stats.mean_ms
        );
    }
}
