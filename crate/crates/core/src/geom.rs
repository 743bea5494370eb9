//! SE(3) pose algebra, stream alignment and keypoint selection.
//!
//! Selection runs in two stages: [`select_observed`] keeps the points seen at
//! a given frame inside the user's vicinity cube and drops statistical
//! outliers, then [`classify_span`] intersects the survivors with an angular
//! cone around the gaze (or head-forward) axis. Both stages are pure and keep
//! their inputs untouched.

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One SLAM semidense observation: world position, inverse-distance variance
/// and the time it was seen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub position: Vector3<f64>,
    pub inv_dist_variance: f64,
    pub observed_at: f64,
}

impl Keypoint {
    pub fn new(position: Vector3<f64>, inv_dist_variance: f64, observed_at: f64) -> Self {
        Self {
            position,
            inv_dist_variance,
            observed_at,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.position.iter().all(|c| c.is_finite()) && self.inv_dist_variance >= 0.0
    }
}

/// Rigid transform from the local central-pupil frame to world coordinates at
/// time `at`. The local z axis points forward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
    pub at: f64,
}

impl Pose {
    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>, at: f64) -> Self {
        Self {
            rotation,
            translation,
            at,
        }
    }

    pub fn identity(at: f64) -> Self {
        Self::new(UnitQuaternion::identity(), Vector3::zeros(), at)
    }

    /// World point -> local frame: `R^T (p - t)`.
    pub fn to_local(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.inverse_transform_vector(&(point - self.translation))
    }

    /// Local point -> world frame: `R p + t`.
    pub fn to_world(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transform_vector(point) + self.translation
    }

    /// Head-forward direction in world coordinates (local +z).
    pub fn forward_world(&self) -> Vector3<f64> {
        self.rotation.transform_vector(&Vector3::z())
    }

    pub fn inverse(&self) -> Pose {
        let rotation = self.rotation.inverse();
        let translation = -(rotation.transform_vector(&self.translation));
        Pose::new(rotation, translation, self.at)
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.rotation * other.rotation,
            self.rotation.transform_vector(&other.translation) + self.translation,
            other.at,
        )
    }
}

/// Unit gaze direction in the local central-pupil frame at time `at`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GazeSample {
    pub direction: Vector3<f64>,
    pub at: f64,
}

impl GazeSample {
    pub fn new(direction: Vector3<f64>, at: f64) -> Self {
        Self { direction, at }
    }
}

/// The four eccentricity levels, ordered narrow to wide. The first three are
/// cones around the gaze direction; `Orientation` is the head-forward cone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SpanLevel {
    Foveal,
    Central,
    Peripheral,
    Orientation,
}

impl SpanLevel {
    pub const ALL: [SpanLevel; 4] = [
        SpanLevel::Foveal,
        SpanLevel::Central,
        SpanLevel::Peripheral,
        SpanLevel::Orientation,
    ];

    pub fn index(self) -> usize {
        match self {
            SpanLevel::Foveal => 0,
            SpanLevel::Central => 1,
            SpanLevel::Peripheral => 2,
            SpanLevel::Orientation => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SpanLevel::Foveal => "foveal",
            SpanLevel::Central => "central",
            SpanLevel::Peripheral => "peripheral",
            SpanLevel::Orientation => "orientation",
        }
    }

    pub fn from_name(name: &str) -> Option<SpanLevel> {
        Self::ALL.iter().copied().find(|l| l.name() == name)
    }
}

/// Per-level eccentricity thresholds in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Eccentricities {
    pub foveal_deg: f64,
    pub central_deg: f64,
    pub peripheral_deg: f64,
    pub orientation_deg: f64,
}

impl Eccentricities {
    pub fn get(&self, level: SpanLevel) -> f64 {
        match level {
            SpanLevel::Foveal => self.foveal_deg,
            SpanLevel::Central => self.central_deg,
            SpanLevel::Peripheral => self.peripheral_deg,
            SpanLevel::Orientation => self.orientation_deg,
        }
    }
}

impl Default for Eccentricities {
    fn default() -> Self {
        Self {
            foveal_deg: 2.0,
            central_deg: 8.0,
            peripheral_deg: 30.0,
            orientation_deg: 55.0,
        }
    }
}

/// Spatial and filtering parameters shared across the pipeline.
///
/// `outlier_neighbors == 0` disables statistical outlier filtering entirely.
/// `frame_quantum_s` is the temporal bin width within which two timestamps
/// count as the same frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpanConfig {
    pub cube_length_m: f64,
    pub resolution: usize,
    pub eccentricities: Eccentricities,
    pub outlier_neighbors: usize,
    pub outlier_std_ratio: f64,
    pub frame_quantum_s: f64,
}

impl Default for SpanConfig {
    fn default() -> Self {
        Self {
            cube_length_m: 3.2,
            resolution: 16,
            eccentricities: Eccentricities::default(),
            outlier_neighbors: 16,
            outlier_std_ratio: 2.0,
            frame_quantum_s: 0.1,
        }
    }
}

impl SpanConfig {
    pub fn validate(&self) -> Result<()> {
        let e = &self.eccentricities;
        if !(e.foveal_deg < e.central_deg
            && e.central_deg < e.peripheral_deg
            && e.peripheral_deg < e.orientation_deg)
        {
            return Err(Error::InvalidConfig(format!(
                "eccentricities must be strictly increasing, got {}/{}/{}/{}",
                e.foveal_deg, e.central_deg, e.peripheral_deg, e.orientation_deg
            )));
        }
        if !(self.cube_length_m > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "cube_length_m must be > 0, got {}",
                self.cube_length_m
            )));
        }
        if self.resolution < 2 {
            return Err(Error::InvalidConfig(format!(
                "resolution must be >= 2, got {}",
                self.resolution
            )));
        }
        if !(self.frame_quantum_s > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "frame_quantum_s must be > 0, got {}",
                self.frame_quantum_s
            )));
        }
        if !(self.outlier_std_ratio > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "outlier_std_ratio must be > 0, got {}",
                self.outlier_std_ratio
            )));
        }
        Ok(())
    }

    /// Cell edge in meters, `D / R`.
    pub fn cell_edge_m(&self) -> f64 {
        self.cube_length_m / self.resolution as f64
    }
}

/// World point -> local frame under `pose`.
pub fn transform_to_local(pose: &Pose, point: &Vector3<f64>) -> Vector3<f64> {
    pose.to_local(point)
}

/// Local point -> world frame under `pose`.
pub fn transform_to_world(pose: &Pose, point: &Vector3<f64>) -> Vector3<f64> {
    pose.to_world(point)
}

/// Keypoints observed at frame time `t`: same frame quantum, inside the
/// axis-aligned cube of side `D` centered on the user, and not a statistical
/// outlier. Temporal equality is `|t_i - t| <= frame_quantum_s / 2`; the cube
/// test is strict per axis (`|p - t_t| < D/2`).
pub fn select_observed(
    points: &[Keypoint],
    pose: &Pose,
    t: f64,
    cfg: &SpanConfig,
) -> Vec<Keypoint> {
    let half = cfg.cube_length_m / 2.0;
    let half_quantum = cfg.frame_quantum_s / 2.0;
    let candidates: Vec<Keypoint> = points
        .iter()
        .filter(|p| (p.observed_at - t).abs() <= half_quantum)
        .filter(|p| {
            let d = p.position - pose.translation;
            d.x.abs() < half && d.y.abs() < half && d.z.abs() < half
        })
        .copied()
        .collect();
    filter_outliers(&candidates, cfg)
}

/// Neighbor-based statistical outlier removal.
///
/// For every point, the mean distance to its `k = outlier_neighbors` nearest
/// neighbors is computed (distances sorted ascending before summation, then
/// divided by `k`). Points whose mean exceeds
/// `global_mean + outlier_std_ratio * global_std` of those per-point means
/// are discarded. Sets with at most `k` points are returned unchanged, as is
/// everything when `k == 0`.
pub fn filter_outliers(points: &[Keypoint], cfg: &SpanConfig) -> Vec<Keypoint> {
    let k = cfg.outlier_neighbors;
    if k == 0 || points.len() <= k {
        return points.to_vec();
    }
    let means = knn_mean_distances(points, k);
    let n = means.len() as f64;
    let global_mean = means.iter().sum::<f64>() / n;
    let var = means.iter().map(|m| (m - global_mean).powi(2)).sum::<f64>() / n;
    let threshold = global_mean + cfg.outlier_std_ratio * var.sqrt();
    points
        .iter()
        .zip(means.iter())
        .filter(|(_, m)| **m <= threshold)
        .map(|(p, _)| *p)
        .collect()
}

/// Exact k-nearest-neighbor mean distances, accelerated with a uniform grid.
///
/// The grid only prunes candidates; the returned values are identical to a
/// quadratic scan (k smallest Euclidean distances, sorted ascending, summed,
/// divided by k).
fn knn_mean_distances(points: &[Keypoint], k: usize) -> Vec<f64> {
    let n = points.len();
    debug_assert!(n > k && k > 0);

    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(p.position[a]);
            hi[a] = hi[a].max(p.position[a]);
        }
    }
    let extent = hi - lo;
    let max_extent = extent.x.max(extent.y).max(extent.z);

    // Aim for a couple of points per cell; degenerate clouds fall back to a
    // single cell which degrades to the quadratic scan.
    let target_cells = (n as f64 / 2.0).cbrt().ceil().max(1.0);
    let edge = if max_extent > 0.0 {
        max_extent / target_cells
    } else {
        1.0
    };

    let dims: [i64; 3] = [
        ((extent.x / edge).floor() as i64 + 1).max(1),
        ((extent.y / edge).floor() as i64 + 1).max(1),
        ((extent.z / edge).floor() as i64 + 1).max(1),
    ];
    let cell_of = |p: &Vector3<f64>| -> [i64; 3] {
        let mut c = [0i64; 3];
        for a in 0..3 {
            c[a] = (((p[a] - lo[a]) / edge).floor() as i64).clamp(0, dims[a] - 1);
        }
        c
    };

    let mut cells: std::collections::HashMap<[i64; 3], Vec<usize>> =
        std::collections::HashMap::new();
    for (i, p) in points.iter().enumerate() {
        cells.entry(cell_of(&p.position)).or_default().push(i);
    }

    let max_ring = dims[0].max(dims[1]).max(dims[2]);
    let mut dists: Vec<f64> = Vec::with_capacity(64);
    let mut means = Vec::with_capacity(n);
    for (i, p) in points.iter().enumerate() {
        let c = cell_of(&p.position);
        dists.clear();
        let mut ring = 0i64;
        loop {
            // Scan the shell of cells at Chebyshev distance `ring`.
            for dx in -ring..=ring {
                for dy in -ring..=ring {
                    for dz in -ring..=ring {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                            continue;
                        }
                        let key = [c[0] + dx, c[1] + dy, c[2] + dz];
                        if key[0] < 0
                            || key[1] < 0
                            || key[2] < 0
                            || key[0] >= dims[0]
                            || key[1] >= dims[1]
                            || key[2] >= dims[2]
                        {
                            continue;
                        }
                        if let Some(idxs) = cells.get(&key) {
                            for &j in idxs {
                                if j != i {
                                    dists.push((points[j].position - p.position).norm_squared());
                                }
                            }
                        }
                    }
                }
            }
            if dists.len() >= k {
                let (_, kth, _) = dists.select_nth_unstable_by(k - 1, |a, b| a.total_cmp(b));
                // Everything outside scanned rings is farther than ring*edge.
                let covered = ring as f64 * edge;
                if *kth <= covered * covered || ring >= max_ring {
                    break;
                }
            } else if ring >= max_ring {
                break;
            }
            ring += 1;
        }
        let take = k.min(dists.len());
        dists.select_nth_unstable_by(take - 1, |a, b| a.total_cmp(b));
        let mut nearest: Vec<f64> = dists[..take].iter().map(|d| d.sqrt()).collect();
        nearest.sort_by(|a, b| a.total_cmp(b));
        means.push(nearest.iter().sum::<f64>() / take as f64);
    }
    means
}

/// Result of a cone classification: surviving points plus the count of
/// degenerate points (coincident with the eye position) that were excluded.
#[derive(Debug, Clone, Default)]
pub struct SpanSelection {
    pub points: Vec<Keypoint>,
    pub degenerate: usize,
}

/// Points whose local-frame direction lies within `theta_deg` of `axis`
/// (Eq. form: `<E^-1 p, axis> / ||E^-1 p|| > cos(theta)` for unit `axis`).
/// Points with zero local norm cannot be classified and are tallied in
/// `degenerate`.
pub fn classify_span(
    points: &[Keypoint],
    pose: &Pose,
    axis: &Vector3<f64>,
    theta_deg: f64,
) -> SpanSelection {
    debug_assert!((axis.norm() - 1.0).abs() < 1e-9, "axis must be unit");
    debug_assert!(theta_deg > 0.0 && theta_deg < 180.0);
    let cos_theta = theta_deg.to_radians().cos();
    let mut out = SpanSelection::default();
    for p in points {
        let local = pose.to_local(&p.position);
        let norm = local.norm();
        if norm == 0.0 {
            out.degenerate += 1;
            continue;
        }
        if local.dot(axis) > cos_theta * norm {
            out.points.push(*p);
        }
    }
    out
}

/// Cone axis for a span level: the gaze direction for the three gaze levels,
/// local +z (head forward) for the orientation level.
pub fn level_axis(level: SpanLevel, gaze_local: &Vector3<f64>) -> Vector3<f64> {
    match level {
        SpanLevel::Orientation => Vector3::z(),
        _ => *gaze_local,
    }
}

/// One time-aligned frame: keypoints observed in this quantum plus the
/// nearest pose and gaze samples.
#[derive(Debug, Clone)]
pub struct FrameBundle {
    pub t: f64,
    pub pose: Pose,
    pub gaze: GazeSample,
    pub points: Vec<Keypoint>,
}

/// Outcome of [`align_streams`]: bundles ordered by time, plus the frame
/// times that had no pose or gaze within tolerance.
#[derive(Debug, Clone, Default)]
pub struct Alignment {
    pub bundles: Vec<FrameBundle>,
    pub dropped: Vec<f64>,
}

/// Associate each keypoint observation with the nearest pose/gaze pair.
///
/// Observations are binned into frames of width `frame_quantum`; each frame
/// takes the pose and gaze samples nearest its nominal time. Frames with no
/// pose or gaze within `frame_quantum / 2` are dropped and reported.
pub fn align_streams(
    points: &[Keypoint],
    poses: &[Pose],
    gazes: &[GazeSample],
    frame_quantum: f64,
) -> Alignment {
    let mut bins: std::collections::BTreeMap<i64, Vec<Keypoint>> = std::collections::BTreeMap::new();
    for p in points {
        let bin = (p.observed_at / frame_quantum).round() as i64;
        bins.entry(bin).or_default().push(*p);
    }

    let pose_times: Vec<f64> = poses.iter().map(|p| p.at).collect();
    let gaze_times: Vec<f64> = gazes.iter().map(|g| g.at).collect();
    debug_assert!(pose_times.windows(2).all(|w| w[0] <= w[1]));
    debug_assert!(gaze_times.windows(2).all(|w| w[0] <= w[1]));

    let tol = frame_quantum / 2.0;
    let mut out = Alignment::default();
    for (bin, pts) in bins {
        let t = bin as f64 * frame_quantum;
        let pi = nearest_index(&pose_times, t);
        let gi = nearest_index(&gaze_times, t);
        match (pi, gi) {
            (Some(pi), Some(gi))
                if (poses[pi].at - t).abs() <= tol && (gazes[gi].at - t).abs() <= tol =>
            {
                out.bundles.push(FrameBundle {
                    t,
                    pose: poses[pi],
                    gaze: gazes[gi],
                    points: pts,
                });
            }
            _ => out.dropped.push(t),
        }
    }
    out
}

/// Index of the element of a sorted slice nearest to `t` (first one on ties).
pub fn nearest_index(sorted_times: &[f64], t: f64) -> Option<usize> {
    if sorted_times.is_empty() {
        return None;
    }
    let i = sorted_times.partition_point(|&x| x < t);
    if i == 0 {
        return Some(0);
    }
    if i == sorted_times.len() {
        return Some(sorted_times.len() - 1);
    }
    if (t - sorted_times[i - 1]) <= (sorted_times[i] - t) {
        Some(i - 1)
    } else {
        Some(i)
    }
}

/// Index of the latest element with time `<= t`, if any.
pub fn latest_at_or_before(sorted_times: &[f64], t: f64) -> Option<usize> {
    let i = sorted_times.partition_point(|&x| x <= t);
    if i == 0 {
        None
    } else {
        Some(i - 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pose(rng: &mut ChaCha8Rng, at: f64) -> Pose {
        let axis = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let angle = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        let rotation = UnitQuaternion::from_scaled_axis(axis.normalize() * angle);
        let translation = Vector3::new(
            rng.gen_range(-5.0..5.0),
            rng.gen_range(-5.0..5.0),
            rng.gen_range(-5.0..5.0),
        );
        Pose::new(rotation, translation, at)
    }

    #[test]
    fn transform_identity_pose() {
        let pose = Pose::identity(0.0);
        let p = Vector3::new(1.0, 2.0, 3.0);
        assert_eq!(transform_to_local(&pose, &p), p);
    }

    #[test]
    fn transform_translation_cancels() {
        let pose = Pose::new(UnitQuaternion::identity(), Vector3::new(1.0, 0.0, 0.0), 0.0);
        let p = Vector3::new(1.0, 0.0, 0.0);
        assert_eq!(transform_to_local(&pose, &p), Vector3::zeros());
    }

    #[test]
    fn transform_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let pose = random_pose(&mut rng, 0.0);
            let p = Vector3::new(
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-10.0..10.0),
            );
            let back = transform_to_local(&pose, &transform_to_world(&pose, &p));
            assert!((back - p).norm() < 1e-9, "round trip error {}", (back - p).norm());
        }
    }

    #[test]
    fn pose_inverse_composes_to_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let pose = random_pose(&mut rng, 0.0);
            let id = pose.compose(&pose.inverse());
            assert!(id.translation.norm() < 1e-9);
            assert!(id.rotation.angle() < 1e-9);
        }
    }

    #[test]
    fn select_observed_temporal_filter() {
        let cfg = SpanConfig {
            outlier_neighbors: 0,
            ..SpanConfig::default()
        };
        let pose = Pose::identity(1.0);
        let points = vec![
            Keypoint::new(Vector3::new(0.1, 0.0, 0.5), 0.0, 1.0),
            Keypoint::new(Vector3::new(0.1, 0.0, 0.5), 0.0, 2.0),
        ];
        let got = select_observed(&points, &pose, 1.0, &cfg);
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].observed_at, 1.0);
    }

    #[test]
    fn select_observed_spatial_boundary() {
        let cfg = SpanConfig {
            outlier_neighbors: 0,
            ..SpanConfig::default()
        };
        let d = cfg.cube_length_m;
        let pose = Pose::identity(0.0);
        let far = Keypoint::new(Vector3::new(d, 0.0, 0.0), 0.0, 0.0);
        let near = Keypoint::new(Vector3::new(d / 4.0, 0.0, 0.0), 0.0, 0.0);
        let edge = Keypoint::new(Vector3::new(d / 2.0, 0.0, 0.0), 0.0, 0.0);
        let got = select_observed(&[far, near, edge], &pose, 0.0, &cfg);
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].position.x, d / 4.0);
    }

    #[test]
    fn filter_removes_gross_outlier() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut points: Vec<Keypoint> = (0..50)
            .map(|_| {
                let dir = Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                );
                Keypoint::new(dir * 0.1, 0.0, 0.0)
            })
            .collect();
        points.push(Keypoint::new(Vector3::new(10.0, 0.0, 0.0), 0.0, 0.0));
        let cfg = SpanConfig::default();
        let kept = filter_outliers(&points, &cfg);
        assert_eq!(kept.len(), 50);
        assert!(kept.iter().all(|p| p.position.norm() < 1.0));
    }

    #[test]
    fn filter_keeps_homogeneous_set() {
        // Unit-cube motifs replicated on a sparse integer lattice: with k = 7
        // every point's nearest neighbors are the rest of its own motif, and
        // integer coordinates make all per-point means bitwise identical, so
        // the std of neighbor means is exactly zero and nothing is removed.
        let mut points = Vec::new();
        for mx in 0..2 {
            for my in 0..2 {
                let base = Vector3::new(mx as f64 * 64.0, my as f64 * 64.0, 0.0);
                for corner in 0..8u32 {
                    let offset = Vector3::new(
                        f64::from(corner & 1),
                        f64::from(corner >> 1 & 1),
                        f64::from(corner >> 2 & 1),
                    );
                    points.push(Keypoint::new(base + offset, 0.0, 0.0));
                }
            }
        }
        let cfg = SpanConfig {
            outlier_neighbors: 7,
            ..SpanConfig::default()
        };
        let kept = filter_outliers(&points, &cfg);
        assert_eq!(kept.len(), points.len());
    }

    #[test]
    fn filter_small_sets_unchanged() {
        let cfg = SpanConfig::default();
        let points: Vec<Keypoint> = (0..10)
            .map(|i| Keypoint::new(Vector3::new(i as f64 * 100.0, 0.0, 0.0), 0.0, 0.0))
            .collect();
        assert_eq!(filter_outliers(&points, &cfg).len(), 10);
    }

    #[test]
    fn classify_point_on_axis() {
        let pose = Pose::identity(0.0);
        let gaze = Vector3::z();
        let p = [Keypoint::new(Vector3::new(0.0, 0.0, 1.0), 0.0, 0.0)];
        for theta in [2.0, 8.0, 30.0, 55.0] {
            let got = classify_span(&p, &pose, &gaze, theta);
            assert_eq!(got.points.len(), 1, "theta={theta}");
        }
    }

    #[test]
    fn classify_ten_degrees_off() {
        let pose = Pose::identity(0.0);
        let gaze = Vector3::z();
        let a = 10.0f64.to_radians();
        let p = [Keypoint::new(
            Vector3::new(a.sin(), 0.0, a.cos()),
            0.0,
            0.0,
        )];
        for (theta, included) in [(2.0, false), (8.0, false), (30.0, true), (55.0, true)] {
            let got = classify_span(&p, &pose, &gaze, theta);
            assert_eq!(got.points.len(), usize::from(included), "theta={theta}");
        }
    }

    #[test]
    fn classify_counts_degenerate_points() {
        let pose = Pose::identity(0.0);
        let p = [Keypoint::new(Vector3::zeros(), 0.0, 0.0)];
        let got = classify_span(&p, &pose, &Vector3::z(), 30.0);
        assert!(got.points.is_empty());
        assert_eq!(got.degenerate, 1);
    }

    #[test]
    fn align_exact_timestamps() {
        let q = 0.1;
        let poses: Vec<Pose> = (0..10).map(|i| Pose::identity(i as f64 * q)).collect();
        let gazes: Vec<GazeSample> = (0..10)
            .map(|i| GazeSample::new(Vector3::z(), i as f64 * q))
            .collect();
        let points: Vec<Keypoint> = (0..10)
            .map(|i| Keypoint::new(Vector3::new(0.0, 0.0, 1.0), 0.0, i as f64 * q))
            .collect();
        let aligned = align_streams(&points, &poses, &gazes, q);
        assert_eq!(aligned.bundles.len(), 10);
        assert!(aligned.dropped.is_empty());
        for (i, b) in aligned.bundles.iter().enumerate() {
            assert_eq!(b.pose.at, i as f64 * q);
            assert_eq!(b.points.len(), 1);
        }
    }

    #[test]
    fn align_offset_stream_picks_nearest() {
        let q = 0.1;
        let poses: Vec<Pose> = (0..10).map(|i| Pose::identity(i as f64 * q)).collect();
        // Gaze offset by a quarter quantum still associates with each frame.
        let gazes: Vec<GazeSample> = (0..10)
            .map(|i| GazeSample::new(Vector3::z(), i as f64 * q + q / 4.0))
            .collect();
        let points = vec![Keypoint::new(Vector3::z(), 0.0, 3.0 * q)];
        let aligned = align_streams(&points, &poses, &gazes, q);
        assert_eq!(aligned.bundles.len(), 1);
        let b = &aligned.bundles[0];
        assert!((b.gaze.at - (3.0 * q + q / 4.0)).abs() < 1e-12);
    }

    #[test]
    fn align_drops_uncovered_frames() {
        let q = 0.1;
        let poses = vec![Pose::identity(0.0)];
        let gazes = vec![GazeSample::new(Vector3::z(), 0.0)];
        let points = vec![
            Keypoint::new(Vector3::z(), 0.0, 0.0),
            Keypoint::new(Vector3::z(), 0.0, 5.0),
        ];
        let aligned = align_streams(&points, &poses, &gazes, q);
        assert_eq!(aligned.bundles.len(), 1);
        assert_eq!(aligned.dropped.len(), 1);
        assert!((aligned.dropped[0] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn config_validation_rejects_bad_eccentricities() {
        let mut cfg = SpanConfig::default();
        cfg.eccentricities.central_deg = 1.0;
        assert!(cfg.validate().is_err());
    }
}
