//! Stream ingestion, sliding-window sample construction, and split
//! management.
//!
//! All windowing arithmetic runs on integer frame-quantum bins (a bundle at
//! time `t` lives in bin `round(t / quantum)`), so window membership never
//! depends on floating-point drift in accumulated timestamps. Window
//! durations, strides and frame durations must therefore be integer
//! multiples of the quantum.

use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{
    align_streams, latest_at_or_before, nearest_index, FrameBundle, GazeSample, Keypoint, Pose,
    SpanConfig,
};
use crate::voxel::{anchor_origin, build_multilevel_at, MultiLevelSpan, OccupancyGrid};

/// Sliding-window protocol parameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SampleSpec {
    pub t_past_s: f64,
    pub t_future_s: f64,
    pub stride_s: f64,
    pub frame_duration_s: f64,
    pub cfg: SpanConfig,
}

impl Default for SampleSpec {
    fn default() -> Self {
        Self {
            t_past_s: 2.0,
            t_future_s: 2.0,
            stride_s: 1.0,
            frame_duration_s: 1.0,
            cfg: SpanConfig::default(),
        }
    }
}

fn exact_multiple(value: f64, base: f64) -> Option<usize> {
    let k = value / base;
    let rounded = k.round();
    if rounded >= 1.0 && (k - rounded).abs() < 1e-9 {
        Some(rounded as usize)
    } else {
        None
    }
}

impl SampleSpec {
    pub fn validate(&self) -> Result<()> {
        self.cfg.validate()?;
        if self.stride_s <= 0.0 {
            return Err(Error::InvalidConfig("stride_s must be > 0".into()));
        }
        for (name, v) in [
            ("t_past_s", self.t_past_s),
            ("t_future_s", self.t_future_s),
        ] {
            if exact_multiple(v, self.frame_duration_s).is_none() {
                return Err(Error::InvalidConfig(format!(
                    "{name} = {v} is not an integer multiple of frame_duration_s = {}",
                    self.frame_duration_s
                )));
            }
        }
        let q = self.cfg.frame_quantum_s;
        for (name, v) in [
            ("frame_duration_s", self.frame_duration_s),
            ("stride_s", self.stride_s),
        ] {
            if exact_multiple(v, q).is_none() {
                return Err(Error::InvalidConfig(format!(
                    "{name} = {v} is not an integer multiple of the frame quantum {q}"
                )));
            }
        }
        Ok(())
    }

    /// Number of input history frames, T_p.
    pub fn past_frames(&self) -> usize {
        (self.t_past_s / self.frame_duration_s).round() as usize
    }

    /// Number of future frames unioned into the target.
    pub fn future_frames(&self) -> usize {
        (self.t_future_s / self.frame_duration_s).round() as usize
    }

    fn quanta_per_frame(&self) -> i64 {
        (self.frame_duration_s / self.cfg.frame_quantum_s).round() as i64
    }

    fn stride_quanta(&self) -> i64 {
        (self.stride_s / self.cfg.frame_quantum_s).round() as i64
    }
}

/// One training/evaluation sample: T_p history spans, the per-level future
/// union target, and the prediction-time pose/gaze. All grids share the
/// origin anchored at the input window's starting pose.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanSample {
    pub inputs: Vec<MultiLevelSpan>,
    pub target: [OccupancyGrid; 4],
    /// Pose at prediction time (the boundary between history and future).
    pub anchor: Pose,
    pub current_gaze: GazeSample,
    pub recording: String,
    pub sample_time: f64,
}

/// Parsed, validated, time-sorted streams.
#[derive(Debug, Clone, Default)]
pub struct Streams {
    pub points: Vec<Keypoint>,
    pub poses: Vec<Pose>,
    pub gazes: Vec<GazeSample>,
    pub warnings: Vec<String>,
}

fn split_fields(line: &str) -> Vec<&str> {
    line.split(',').map(str::trim).collect()
}

fn parse_field(path: &Path, line: usize, what: &str, s: &str) -> Result<f64> {
    s.parse::<f64>().map_err(|_| Error::Parse {
        path: path.display().to_string(),
        line,
        message: format!("invalid {what}: {s:?}"),
    })
}

fn content_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let file = std::fs::File::open(path).map_err(|e| Error::Stream(format!(
        "cannot open {}: {e}",
        path.display()
    )))?;
    let reader = std::io::BufReader::new(file);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        out.push((i + 1, trimmed.to_string()));
    }
    Ok(out)
}

/// Unit-norm policy shared by quaternions and gaze vectors: deviation up to
/// 1e-6 is accepted verbatim (bit-preserving), up to 1e-3 renormalized with
/// a warning, beyond that rejected.
fn check_unit(
    norm: f64,
    path: &Path,
    line: usize,
    what: &str,
    warnings: &mut Vec<String>,
) -> Result<bool> {
    let dev = (norm - 1.0).abs();
    if dev <= 1e-6 {
        Ok(false)
    } else if dev <= 1e-3 {
        warnings.push(format!(
            "{}:{line}: {what} norm deviates by {dev:.2e}, renormalized",
            path.display()
        ));
        Ok(true)
    } else {
        Err(Error::Parse {
            path: path.display().to_string(),
            line,
            message: format!("{what} norm deviates from 1 by {dev:.2e} (limit 1e-3)"),
        })
    }
}

pub fn read_points_file(path: &Path) -> Result<Vec<Keypoint>> {
    let mut points = Vec::new();
    for (lineno, line) in content_lines(path)? {
        let f = split_fields(&line);
        if f.len() != 5 {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: lineno,
                message: format!("expected 5 fields t,x,y,z,inv_dist_var, got {}", f.len()),
            });
        }
        let t = parse_field(path, lineno, "timestamp", f[0])?;
        let x = parse_field(path, lineno, "x", f[1])?;
        let y = parse_field(path, lineno, "y", f[2])?;
        let z = parse_field(path, lineno, "z", f[3])?;
        let v = parse_field(path, lineno, "inv_dist_var", f[4])?;
        if v < 0.0 {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: lineno,
                message: format!("inv_dist_var must be >= 0, got {v}"),
            });
        }
        points.push(Keypoint::new(Vector3::new(x, y, z), v, t));
    }
    if points.is_empty() {
        return Err(Error::Stream(format!("points stream empty: {}", path.display())));
    }
    points.sort_by(|a, b| a.observed_at.total_cmp(&b.observed_at));
    Ok(points)
}

pub fn read_trajectory_file(path: &Path, warnings: &mut Vec<String>) -> Result<Vec<Pose>> {
    let mut poses = Vec::new();
    for (lineno, line) in content_lines(path)? {
        let f = split_fields(&line);
        if f.len() != 8 {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: lineno,
                message: format!("expected 8 fields t,qw,qx,qy,qz,tx,ty,tz, got {}", f.len()),
            });
        }
        let t = parse_field(path, lineno, "timestamp", f[0])?;
        let qw = parse_field(path, lineno, "qw", f[1])?;
        let qx = parse_field(path, lineno, "qx", f[2])?;
        let qy = parse_field(path, lineno, "qy", f[3])?;
        let qz = parse_field(path, lineno, "qz", f[4])?;
        let tx = parse_field(path, lineno, "tx", f[5])?;
        let ty = parse_field(path, lineno, "ty", f[6])?;
        let tz = parse_field(path, lineno, "tz", f[7])?;
        let q = Quaternion::new(qw, qx, qy, qz);
        let rotation = if check_unit(q.norm(), path, lineno, "quaternion", warnings)? {
            UnitQuaternion::from_quaternion(q)
        } else {
            UnitQuaternion::new_unchecked(q)
        };
        poses.push(Pose::new(rotation, Vector3::new(tx, ty, tz), t));
    }
    if poses.is_empty() {
        return Err(Error::Stream(format!(
            "trajectory stream empty: {}",
            path.display()
        )));
    }
    if let Some(w) = poses.windows(2).find(|w| w[1].at <= w[0].at) {
        return Err(Error::Stream(format!(
            "non-monotonic pose timestamps in {}: {} then {}",
            path.display(),
            w[0].at,
            w[1].at
        )));
    }
    Ok(poses)
}

pub fn read_gaze_file(path: &Path, warnings: &mut Vec<String>) -> Result<Vec<GazeSample>> {
    let mut gazes = Vec::new();
    for (lineno, line) in content_lines(path)? {
        let f = split_fields(&line);
        if f.len() != 4 {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: lineno,
                message: format!("expected 4 fields t,gx,gy,gz, got {}", f.len()),
            });
        }
        let t = parse_field(path, lineno, "timestamp", f[0])?;
        let gx = parse_field(path, lineno, "gx", f[1])?;
        let gy = parse_field(path, lineno, "gy", f[2])?;
        let gz = parse_field(path, lineno, "gz", f[3])?;
        let mut dir = Vector3::new(gx, gy, gz);
        if check_unit(dir.norm(), path, lineno, "gaze direction", warnings)? {
            dir.normalize_mut();
        }
        gazes.push(GazeSample::new(dir, t));
    }
    if gazes.is_empty() {
        return Err(Error::Stream(format!("gaze stream empty: {}", path.display())));
    }
    gazes.sort_by(|a, b| a.at.total_cmp(&b.at));
    Ok(gazes)
}

/// Parse the three stream files. Malformed rows are reported with their line
/// numbers; mild unit-norm violations are renormalized and recorded in
/// `warnings`.
pub fn ingest(points_path: &Path, trajectory_path: &Path, gaze_path: &Path) -> Result<Streams> {
    let mut warnings = Vec::new();
    let points = read_points_file(points_path)?;
    let poses = read_trajectory_file(trajectory_path, &mut warnings)?;
    let gazes = read_gaze_file(gaze_path, &mut warnings)?;
    Ok(Streams {
        points,
        poses,
        gazes,
        warnings,
    })
}

/// Shortest-round-trip float formatting keeps write→ingest lossless.
pub fn write_points_file(path: &Path, points: &[Keypoint]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "# t_sec,x,y,z,inv_dist_var")?;
    for p in points {
        writeln!(
            w,
            "{},{},{},{},{}",
            p.observed_at, p.position.x, p.position.y, p.position.z, p.inv_dist_variance
        )?;
    }
    Ok(())
}

pub fn write_trajectory_file(path: &Path, poses: &[Pose]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "# t_sec,qw,qx,qy,qz,tx,ty,tz")?;
    for p in poses {
        let q = p.rotation.quaternion();
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            p.at, q.w, q.i, q.j, q.k, p.translation.x, p.translation.y, p.translation.z
        )?;
    }
    Ok(())
}

pub fn write_gaze_file(path: &Path, gazes: &[GazeSample]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "# t_sec,gx,gy,gz")?;
    for g in gazes {
        writeln!(w, "{},{},{},{}", g.at, g.direction.x, g.direction.y, g.direction.z)?;
    }
    Ok(())
}

/// Outcome of windowing one recording.
#[derive(Debug, Clone, Default)]
pub struct SampleBuild {
    pub samples: Vec<SpanSample>,
    /// Samples discarded because their future window saw no keypoints.
    pub dropped_empty_future: usize,
    /// Samples discarded for having no pose coverage at the anchor time.
    pub dropped_no_anchor: usize,
    /// Frame times with keypoints but no pose/gaze within tolerance.
    pub unaligned_frames: Vec<f64>,
}

fn bin_of(t: f64, q: f64) -> i64 {
    (t / q).round() as i64
}

/// Slide the window protocol over one recording and lift every window.
///
/// The recording extent is taken from the pose stream. One sample is
/// emitted per stride position, minus those with an empty future scene.
pub fn build_samples(streams: &Streams, recording: &str, spec: &SampleSpec) -> Result<SampleBuild> {
    spec.validate()?;
    let cfg = &spec.cfg;
    let q = cfg.frame_quantum_s;

    let first = streams.poses.first().ok_or_else(|| Error::Stream("no poses".into()))?;
    let last = streams.poses.last().expect("non-empty checked");
    let duration = last.at - first.at;
    if duration + 1e-9 < spec.t_past_s + spec.t_future_s {
        return Err(Error::InvalidConfig(format!(
            "recording lasts {duration:.3}s, shorter than t_past + t_future = {:.3}s",
            spec.t_past_s + spec.t_future_s
        )));
    }

    let aligned = align_streams(&streams.points, &streams.poses, &streams.gazes, q);
    let bundle_bins: Vec<i64> = aligned.bundles.iter().map(|b| bin_of(b.t, q)).collect();
    let pose_times: Vec<f64> = streams.poses.iter().map(|p| p.at).collect();
    let gaze_times: Vec<f64> = streams.gazes.iter().map(|g| g.at).collect();

    let t0_bin = bin_of(first.at, q);
    let t1_bin = bin_of(last.at, q);
    let fpf = spec.quanta_per_frame();
    let past_q = fpf * spec.past_frames() as i64;
    let future_q = fpf * spec.future_frames() as i64;
    let stride_q = spec.stride_quanta();

    // Bundles for bins [lo, hi); bundle_bins is sorted.
    let bundles_in = |lo: i64, hi: i64| -> &[FrameBundle] {
        let a = bundle_bins.partition_point(|&b| b < lo);
        let b = bundle_bins.partition_point(|&b| b < hi);
        &aligned.bundles[a..b]
    };

    let mut positions = Vec::new();
    let mut p_bin = t0_bin + past_q;
    while p_bin + future_q <= t1_bin {
        positions.push(p_bin);
        p_bin += stride_q;
    }

    enum Outcome {
        Sample(Box<SpanSample>),
        EmptyFuture,
        NoAnchor,
    }

    let outcomes: Vec<Outcome> = positions
        .par_iter()
        .map(|&p_bin| {
            let p_time = p_bin as f64 * q;
            let window_start_time = (p_bin - past_q) as f64 * q;
            // Grid anchor: the pose at the input window start.
            let anchor_idx = match nearest_index(&pose_times, window_start_time) {
                Some(i) if (pose_times[i] - window_start_time).abs() <= q / 2.0 + 1e-9 => i,
                _ => return Outcome::NoAnchor,
            };
            let grid_anchor = streams.poses[anchor_idx].translation;
            let origin = anchor_origin(&grid_anchor, cfg.cube_length_m);

            let frame_span = |start_bin: i64| -> MultiLevelSpan {
                let bundles = bundles_in(start_bin, start_bin + fpf);
                let window = (start_bin as f64 * q, (start_bin + fpf - 1) as f64 * q);
                match build_multilevel_at(bundles, &grid_anchor, cfg) {
                    Ok(mut span) => {
                        span.window = window;
                        span
                    }
                    Err(_) => MultiLevelSpan::empty(cfg, origin, window),
                }
            };

            let inputs: Vec<MultiLevelSpan> = (0..spec.past_frames())
                .map(|i| frame_span(p_bin - past_q + i as i64 * fpf))
                .collect();

            let mut future = frame_span(p_bin);
            for j in 1..spec.future_frames() {
                let next = frame_span(p_bin + j as i64 * fpf);
                future.union_with(&next).expect("shared geometry");
            }
            if future.scene.is_empty() {
                return Outcome::EmptyFuture;
            }

            let anchor_pose = match latest_at_or_before(&pose_times, p_time + 1e-9) {
                Some(i) => streams.poses[i],
                None => streams.poses[0],
            };
            let gaze = match nearest_index(&gaze_times, p_time) {
                Some(i) => streams.gazes[i],
                None => return Outcome::NoAnchor,
            };

            Outcome::Sample(Box::new(SpanSample {
                inputs,
                target: future.levels,
                anchor: anchor_pose,
                current_gaze: gaze,
                recording: recording.to_string(),
                sample_time: p_time,
            }))
        })
        .collect();

    let mut build = SampleBuild {
        unaligned_frames: aligned.dropped,
        ..SampleBuild::default()
    };
    for o in outcomes {
        match o {
            Outcome::Sample(s) => build.samples.push(*s),
            Outcome::EmptyFuture => build.dropped_empty_future += 1,
            Outcome::NoAnchor => build.dropped_no_anchor += 1,
        }
    }
    Ok(build)
}

/// Split policies over an assembled sample set.
#[derive(Debug, Clone)]
pub enum SplitPolicy {
    /// Hold out whole recordings: samples with a test tag go to test, val
    /// tags to val, the rest to train.
    ByRecordingTag {
        test_tags: Vec<String>,
        val_tags: Vec<String>,
    },
    /// Seeded shuffle within each recording, largest-remainder allocation
    /// so global split sizes are exact.
    RandomStratified {
        seed: u64,
        val_fraction: f64,
        test_fraction: f64,
    },
}

/// Index-based split: disjoint cover of `0..n`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn split(samples: &[SpanSample], policy: &SplitPolicy) -> Result<Split> {
    match policy {
        SplitPolicy::ByRecordingTag { test_tags, val_tags } => {
            for tag in test_tags.iter().chain(val_tags.iter()) {
                if !samples.iter().any(|s| &s.recording == tag) {
                    return Err(Error::Split(format!("no samples tagged {tag:?}")));
                }
            }
            let mut out = Split::default();
            for (i, s) in samples.iter().enumerate() {
                if test_tags.contains(&s.recording) {
                    out.test.push(i);
                } else if val_tags.contains(&s.recording) {
                    out.val.push(i);
                } else {
                    out.train.push(i);
                }
            }
            Ok(out)
        }
        SplitPolicy::RandomStratified { seed, val_fraction, test_fraction } => {
            if !(0.0..1.0).contains(val_fraction)
                || !(0.0..1.0).contains(test_fraction)
                || val_fraction + test_fraction >= 1.0
            {
                return Err(Error::Split(format!(
                    "fractions val={val_fraction} test={test_fraction} must be in [0,1) and sum below 1"
                )));
            }
            Ok(stratified_split(samples, *seed, *val_fraction, *test_fraction))
        }
    }
}

fn stratified_split(samples: &[SpanSample], seed: u64, val_f: f64, test_f: f64) -> Split {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    // Strata in sorted tag order for determinism.
    let mut tags: Vec<&str> = samples.iter().map(|s| s.recording.as_str()).collect();
    tags.sort_unstable();
    tags.dedup();

    let mut strata: Vec<Vec<usize>> = tags
        .iter()
        .map(|tag| {
            let mut idx: Vec<usize> = samples
                .iter()
                .enumerate()
                .filter(|(_, s)| s.recording == *tag)
                .map(|(i, _)| i)
                .collect();
            idx.sort_by(|&a, &b| samples[a].sample_time.total_cmp(&samples[b].sample_time));
            idx
        })
        .collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    for s in &mut strata {
        s.shuffle(&mut rng);
    }

    let n = samples.len();
    // Largest-remainder allocation per split class, exact global sizes.
    let allocate = |target: usize, quotas: &[f64], taken: &mut [usize]| {
        let mut floors: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
        let assigned: usize = floors.iter().sum();
        let mut order: Vec<usize> = (0..quotas.len()).collect();
        order.sort_by(|&a, &b| {
            let fa = quotas[a] - quotas[a].floor();
            let fb = quotas[b] - quotas[b].floor();
            fb.total_cmp(&fa).then(a.cmp(&b))
        });
        for &i in order.iter().take(target.saturating_sub(assigned)) {
            floors[i] += 1;
        }
        for (t, f) in taken.iter_mut().zip(floors.iter()) {
            *t += f;
        }
        floors
    };

    let sizes: Vec<usize> = strata.iter().map(Vec::len).collect();
    let mut taken = vec![0usize; strata.len()];
    let test_target = (n as f64 * test_f).round() as usize;
    let val_target = (n as f64 * val_f).round() as usize;
    let test_quota: Vec<f64> = sizes.iter().map(|&s| s as f64 * test_f).collect();
    let test_counts = allocate(test_target, &test_quota, &mut taken);
    let val_quota: Vec<f64> = sizes.iter().map(|&s| s as f64 * val_f).collect();
    let val_counts = allocate(val_target, &val_quota, &mut taken);

    let mut out = Split::default();
    for ((stratum, &nt), &nv) in strata.iter().zip(test_counts.iter()).zip(val_counts.iter()) {
        out.test.extend_from_slice(&stratum[..nt]);
        out.val.extend_from_slice(&stratum[nt..nt + nv]);
        out.train.extend_from_slice(&stratum[nt + nv..]);
    }
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    out
}

/// Materialize a subset of samples in index order.
pub fn gather<'a>(samples: &'a [SpanSample], indices: &[usize]) -> Vec<&'a SpanSample> {
    indices.iter().map(|&i| &samples[i]).collect()
}
