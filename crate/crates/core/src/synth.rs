//! Deterministic synthetic egocentric recordings with exact span ground
//! truth.
//!
//! A [`SceneSpec`] describes static room geometry (object clusters, walls,
//! optionally moving objects); a [`BehaviorSpec`] scripts the agent: a walk
//! path plus a gaze program of fixation/saccade segments that repeats until
//! the recording ends. Fixations land on actual generated surface points of
//! the target object, not abstract centers, so the foveal cone always
//! contains at least the fixated feature while it stays visible.
//!
//! Everything is driven by two `ChaCha8` streams (scene seed for geometry,
//! behavior seed for fixation picks and per-frame observation noise) with a
//! fixed draw order, so identical specs reproduce bit-identical streams.

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geom::{
    classify_span, level_axis, select_observed, GazeSample, Keypoint, Pose, SpanConfig, SpanLevel,
};
use crate::voxel::{anchor_origin, MultiLevelSpan, OccupancyGrid};

/// A blob of surface points: `point_count` samples on a sphere of `radius`
/// around `center`, each pushed along its normal by uniform noise within
/// `±surface_noise_m`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSpec {
    pub center: Vector3<f64>,
    pub radius: f64,
    pub point_count: usize,
    pub surface_noise_m: f64,
}

/// A cluster translated along a piecewise-linear path of `(t, center)`
/// waypoints; before the first and after the last waypoint the object holds
/// still.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicObjectSpec {
    pub waypoints: Vec<(f64, Vector3<f64>)>,
    pub cluster: ClusterSpec,
}

/// Static world description. The room is the axis-aligned box
/// `[0, room_extent_m]`; walls are point-sampled at `wall_point_density`
/// per square meter on all six faces.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub room_extent_m: Vector3<f64>,
    pub object_clusters: Vec<ClusterSpec>,
    pub wall_point_density: f64,
    pub dynamic_objects: Vec<DynamicObjectSpec>,
    /// Per-frame re-observation jitter amplitude, at most 1 cm.
    pub observation_jitter_m: f64,
}

/// One gaze segment: fixate object `target` (ids index static clusters
/// first, then dynamic objects) for `fixation_s`, then saccade toward the
/// next segment's pick over `saccade_s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GazeSegment {
    pub target: usize,
    pub fixation_s: f64,
    pub saccade_s: f64,
}

/// Constant-speed polyline walk; a single waypoint means a stationary agent.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkSpec {
    pub waypoints: Vec<Vector3<f64>>,
    pub speed_mps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorSpec {
    pub seed: u64,
    pub duration_s: f64,
    pub walk: WalkSpec,
    pub gaze_program: Vec<GazeSegment>,
    /// Maximum angle the head forward axis may trail behind gaze.
    pub head_lag_deg: f64,
}

/// Head re-orientation rate while catching up with gaze.
const HEAD_RATE_DEG_S: f64 = 240.0;
/// Angular z-buffer bin width.
const ZBUF_BIN_DEG: f64 = 3.0;
/// Depth slack behind the nearest return in an angular bin.
const ZBUF_DEPTH_TOL_M: f64 = 0.35;

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let ext = self.room_extent_m;
        if !(ext.x > 0.0 && ext.y > 0.0 && ext.z > 0.0) {
            return Err(Error::InvalidConfig(format!("room extent must be positive, got {ext:?}")));
        }
        if !(0.0..=0.01).contains(&self.observation_jitter_m) {
            return Err(Error::InvalidConfig(format!(
                "observation_jitter_m must be in [0, 0.01], got {}",
                self.observation_jitter_m
            )));
        }
        if self.wall_point_density < 0.0 {
            return Err(Error::InvalidConfig("wall_point_density must be >= 0".into()));
        }
        for (i, c) in self.object_clusters.iter().enumerate() {
            check_cluster_in_room(c, &ext, &format!("object_clusters[{i}]"))?;
        }
        for (i, d) in self.dynamic_objects.iter().enumerate() {
            if d.waypoints.is_empty() {
                return Err(Error::InvalidConfig(format!(
                    "dynamic_objects[{i}] needs at least one waypoint"
                )));
            }
            if d.waypoints.windows(2).any(|w| w[1].0 <= w[0].0) {
                return Err(Error::InvalidConfig(format!(
                    "dynamic_objects[{i}] waypoint times must increase"
                )));
            }
            for (t, center) in &d.waypoints {
                let c = ClusterSpec { center: *center, ..d.cluster.clone() };
                check_cluster_in_room(&c, &ext, &format!("dynamic_objects[{i}] at t={t}"))?;
            }
        }
        Ok(())
    }

    fn object_count(&self) -> usize {
        self.object_clusters.len() + self.dynamic_objects.len()
    }
}

fn check_cluster_in_room(c: &ClusterSpec, ext: &Vector3<f64>, what: &str) -> Result<()> {
    if c.radius <= 0.0 || c.surface_noise_m < 0.0 || c.point_count == 0 {
        return Err(Error::InvalidConfig(format!("{what}: degenerate cluster spec")));
    }
    let reach = c.radius + c.surface_noise_m;
    for a in 0..3 {
        if c.center[a] - reach < 0.0 || c.center[a] + reach > ext[a] {
            return Err(Error::InvalidConfig(format!(
                "{what}: cluster reaches outside the room on axis {a}"
            )));
        }
    }
    Ok(())
}

impl BehaviorSpec {
    pub fn validate(&self, scene: &SceneSpec) -> Result<()> {
        if !(self.duration_s > 0.0) {
            return Err(Error::InvalidConfig("duration_s must be > 0".into()));
        }
        if self.walk.waypoints.is_empty() {
            return Err(Error::InvalidConfig("walk needs at least one waypoint".into()));
        }
        if self.walk.speed_mps < 0.0 {
            return Err(Error::InvalidConfig("walk speed must be >= 0".into()));
        }
        for (i, w) in self.walk.waypoints.iter().enumerate() {
            for a in 0..3 {
                if w[a] < 0.0 || w[a] > scene.room_extent_m[a] {
                    return Err(Error::InvalidConfig(format!(
                        "walk waypoint {i} outside the room"
                    )));
                }
            }
        }
        if self.gaze_program.is_empty() {
            return Err(Error::InvalidConfig("gaze_program must be non-empty".into()));
        }
        let total: f64 = self
            .gaze_program
            .iter()
            .map(|s| s.fixation_s + s.saccade_s)
            .sum();
        if total > self.duration_s {
            return Err(Error::InvalidConfig(format!(
                "gaze program lasts {total}s, longer than duration {}s",
                self.duration_s
            )));
        }
        for (i, s) in self.gaze_program.iter().enumerate() {
            if s.target >= scene.object_count() {
                return Err(Error::InvalidConfig(format!(
                    "gaze_program[{i}] targets object {} but the scene has {}",
                    s.target,
                    scene.object_count()
                )));
            }
            if !(s.fixation_s > 0.0) || s.saccade_s < 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "gaze_program[{i}] needs fixation > 0 and saccade >= 0"
                )));
            }
        }
        if !(0.0..90.0).contains(&self.head_lag_deg) {
            return Err(Error::InvalidConfig("head_lag_deg must be in [0, 90)".into()));
        }
        Ok(())
    }
}

/// Exact per-frame truth: the observed (temporal + vicinity cube, no outlier
/// filter) keypoints at their true positions, and per-level indices into
/// them selected by the gaze cones.
#[derive(Debug, Clone)]
pub struct FrameTruth {
    pub t: f64,
    pub pose: Pose,
    pub gaze: GazeSample,
    pub observed: Vec<Keypoint>,
    pub classified: [Vec<u32>; 4],
}

#[derive(Debug, Clone, Default)]
pub struct GroundTruth {
    pub frames: Vec<FrameTruth>,
}

impl GroundTruth {
    /// Span grids for `frames[start..start + len]` anchored at the window's
    /// first pose.
    pub fn window_span(&self, start: usize, len: usize, cfg: &SpanConfig) -> Result<MultiLevelSpan> {
        let anchor = self
            .frames
            .get(start)
            .ok_or(Error::EmptyWindow { t_begin: f64::NAN, t_end: f64::NAN })?
            .pose
            .translation;
        self.window_span_at(start, len, &anchor, cfg)
    }

    /// Same, co-registered to an external anchor.
    pub fn window_span_at(
        &self,
        start: usize,
        len: usize,
        anchor: &Vector3<f64>,
        cfg: &SpanConfig,
    ) -> Result<MultiLevelSpan> {
        let frames = self.frames.get(start..start + len).ok_or(Error::EmptyWindow {
            t_begin: f64::NAN,
            t_end: f64::NAN,
        })?;
        let (first, last) = match (frames.first(), frames.last()) {
            (Some(f), Some(l)) => (f, l),
            _ => return Err(Error::EmptyWindow { t_begin: f64::NAN, t_end: f64::NAN }),
        };
        let origin = anchor_origin(anchor, cfg.cube_length_m);
        let mut span = MultiLevelSpan::empty(cfg, origin, (first.t, last.t));
        for f in frames {
            for kp in &f.observed {
                span.scene.mark(&kp.position);
            }
            for level in SpanLevel::ALL {
                let grid: &mut OccupancyGrid = &mut span.levels[level.index()];
                for &i in &f.classified[level.index()] {
                    grid.mark(&f.observed[i as usize].position);
                }
            }
        }
        Ok(span)
    }
}

/// Output of [`generate`]: the three raw streams plus exact truth.
#[derive(Debug, Clone)]
pub struct Generated {
    pub points: Vec<Keypoint>,
    pub poses: Vec<Pose>,
    pub gazes: Vec<GazeSample>,
    pub truth: GroundTruth,
}

struct Visit {
    t0: f64,
    fixation_s: f64,
    saccade_s: f64,
    /// Object id and index of the fixated point within that object's points.
    target: usize,
    point: usize,
}

struct World {
    /// Static cluster points, grouped: `cluster_ranges[i]` indexes into
    /// `static_points`.
    static_points: Vec<Vector3<f64>>,
    cluster_ranges: Vec<(usize, usize)>,
    wall_points: Vec<Vector3<f64>>,
    /// Per dynamic object, point offsets from its moving center.
    dyn_offsets: Vec<Vec<Vector3<f64>>>,
}

fn sample_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

fn build_world(scene: &SceneSpec) -> World {
    let mut rng = ChaCha8Rng::seed_from_u64(scene.seed);
    let mut static_points = Vec::new();
    let mut cluster_ranges = Vec::new();
    for c in &scene.object_clusters {
        let start = static_points.len();
        for _ in 0..c.point_count {
            let dir = sample_unit(&mut rng);
            let r = c.radius + rng.gen_range(-c.surface_noise_m..=c.surface_noise_m);
            static_points.push(c.center + dir * r);
        }
        cluster_ranges.push((start, static_points.len()));
    }

    let ext = scene.room_extent_m;
    // Fixed face order: z=0, z=ez, y=0, y=ey, x=0, x=ex.
    let faces: [(usize, f64, usize, usize); 6] = [
        (2, 0.0, 0, 1),
        (2, ext.z, 0, 1),
        (1, 0.0, 0, 2),
        (1, ext.y, 0, 2),
        (0, 0.0, 1, 2),
        (0, ext.x, 1, 2),
    ];
    let mut wall_points = Vec::new();
    for (axis, value, ua, va) in faces {
        let area = ext[ua] * ext[va];
        let count = (scene.wall_point_density * area).ceil() as usize;
        for _ in 0..count {
            let mut p = Vector3::zeros();
            p[axis] = value;
            p[ua] = rng.gen_range(0.0..ext[ua]);
            p[va] = rng.gen_range(0.0..ext[va]);
            wall_points.push(p);
        }
    }

    let dyn_offsets = scene
        .dynamic_objects
        .iter()
        .map(|d| {
            (0..d.cluster.point_count)
                .map(|_| {
                    let dir = sample_unit(&mut rng);
                    let r = d.cluster.radius
                        + rng.gen_range(-d.cluster.surface_noise_m..=d.cluster.surface_noise_m);
                    dir * r
                })
                .collect()
        })
        .collect();

    World { static_points, cluster_ranges, wall_points, dyn_offsets }
}

fn dynamic_center(d: &DynamicObjectSpec, t: f64) -> Vector3<f64> {
    let wp = &d.waypoints;
    if t <= wp[0].0 {
        return wp[0].1;
    }
    for w in wp.windows(2) {
        let (t0, p0) = w[0];
        let (t1, p1) = w[1];
        if t <= t1 {
            let s = (t - t0) / (t1 - t0);
            return p0 + (p1 - p0) * s;
        }
    }
    wp[wp.len() - 1].1
}

fn walk_position(walk: &WalkSpec, t: f64) -> Vector3<f64> {
    let wp = &walk.waypoints;
    if wp.len() == 1 || walk.speed_mps == 0.0 {
        return wp[0];
    }
    let mut remaining = walk.speed_mps * t.max(0.0);
    for w in wp.windows(2) {
        let leg = w[1] - w[0];
        let len = leg.norm();
        if remaining <= len {
            return if len == 0.0 { w[0] } else { w[0] + leg * (remaining / len) };
        }
        remaining -= len;
    }
    wp[wp.len() - 1]
}

/// Position of object `target`'s `point`-th surface point at time `t`.
fn object_point(world: &World, scene: &SceneSpec, target: usize, point: usize, t: f64) -> Vector3<f64> {
    let n_static = scene.object_clusters.len();
    if target < n_static {
        let (start, _) = world.cluster_ranges[target];
        world.static_points[start + point]
    } else {
        let d = &scene.dynamic_objects[target - n_static];
        dynamic_center(d, t) + world.dyn_offsets[target - n_static][point]
    }
}

fn object_center(scene: &SceneSpec, target: usize, t: f64) -> Vector3<f64> {
    let n_static = scene.object_clusters.len();
    if target < n_static {
        scene.object_clusters[target].center
    } else {
        dynamic_center(&scene.dynamic_objects[target - n_static], t)
    }
}

fn object_point_count(scene: &SceneSpec, target: usize) -> usize {
    let n_static = scene.object_clusters.len();
    if target < n_static {
        scene.object_clusters[target].point_count
    } else {
        scene.dynamic_objects[target - n_static].cluster.point_count
    }
}

/// Pick a front-facing surface point of the visit's target: a point whose
/// outward normal has positive dot with the direction to the viewer.
fn pick_front_point(
    rng: &mut ChaCha8Rng,
    world: &World,
    scene: &SceneSpec,
    target: usize,
    eye: &Vector3<f64>,
    t: f64,
) -> usize {
    let center = object_center(scene, target, t);
    let to_eye = eye - center;
    let n = object_point_count(scene, target);
    // Deterministic bounded retry; falls back to the last draw.
    let mut pick = 0;
    for _ in 0..64 {
        pick = rng.gen_range(0..n);
        let p = object_point(world, scene, target, pick, t);
        if (p - center).dot(&to_eye) > 0.0 {
            break;
        }
    }
    pick
}

fn build_visits(
    rng: &mut ChaCha8Rng,
    world: &World,
    scene: &SceneSpec,
    behavior: &BehaviorSpec,
) -> Vec<Visit> {
    let mut visits = Vec::new();
    let mut t0 = 0.0;
    let mut k = 0usize;
    // One extra visit past the end so saccades always have a destination.
    while t0 <= behavior.duration_s || visits.len() < 2 {
        let seg = behavior.gaze_program[k % behavior.gaze_program.len()];
        let eye = walk_position(&behavior.walk, t0.min(behavior.duration_s));
        let point = pick_front_point(rng, world, scene, seg.target, &eye, t0);
        visits.push(Visit {
            t0,
            fixation_s: seg.fixation_s,
            saccade_s: seg.saccade_s,
            target: seg.target,
            point,
        });
        t0 += seg.fixation_s + seg.saccade_s;
        k += 1;
    }
    visits
}

/// Spherical interpolation between two unit directions.
fn slerp_dir(a: &Vector3<f64>, b: &Vector3<f64>, s: f64) -> Vector3<f64> {
    match UnitQuaternion::rotation_between(a, b) {
        Some(q) => q.powf(s).transform_vector(a),
        // Antiparallel or identical: snap halfway through.
        None => if s < 0.5 { *a } else { *b },
    }
}

/// Rotate `from` toward `to` by at most `max_step_rad`.
fn rotate_towards(from: &Vector3<f64>, to: &Vector3<f64>, max_step_rad: f64) -> Vector3<f64> {
    match UnitQuaternion::rotation_between(from, to) {
        Some(q) => {
            let angle = q.angle();
            if angle <= max_step_rad {
                *to
            } else {
                q.powf(max_step_rad / angle).transform_vector(from)
            }
        }
        None => *to,
    }
}

fn head_quaternion(forward: &Vector3<f64>) -> UnitQuaternion<f64> {
    let up = if forward.z.abs() > 0.999 { Vector3::x() } else { Vector3::z() };
    UnitQuaternion::face_towards(forward, &up)
}

/// Generate the three streams plus exact ground truth.
///
/// `cfg` supplies the frame quantum, the eccentricity taxonomy used for the
/// truth labels, and the visibility cone (`orientation_deg`); its outlier
/// parameters are ignored for truth computation, which never filters.
pub fn generate(scene: &SceneSpec, behavior: &BehaviorSpec, cfg: &SpanConfig) -> Result<Generated> {
    scene.validate()?;
    behavior.validate(scene)?;
    cfg.validate()?;

    let world = build_world(scene);
    let mut rng = ChaCha8Rng::seed_from_u64(behavior.seed);
    let visits = build_visits(&mut rng, &world, scene, behavior);

    let q = cfg.frame_quantum_s;
    let n_frames = (behavior.duration_s / q).floor() as usize + 1;
    let truth_cfg = SpanConfig { outlier_neighbors: 0, ..*cfg };
    let cos_vis = cfg.eccentricities.orientation_deg.to_radians().cos();
    let head_step = (HEAD_RATE_DEG_S * q).to_radians();
    let lag = behavior.head_lag_deg.to_radians();

    let mut out = Generated {
        points: Vec::new(),
        poses: Vec::with_capacity(n_frames),
        gazes: Vec::with_capacity(n_frames),
        truth: GroundTruth { frames: Vec::with_capacity(n_frames) },
    };

    let mut head_fwd: Option<Vector3<f64>> = None;
    let mut zbuf: std::collections::HashMap<(i32, i32), f64> = std::collections::HashMap::new();
    let mut candidates: Vec<Vector3<f64>> = Vec::new();

    for i in 0..n_frames {
        let t = i as f64 * q;
        let eye = walk_position(&behavior.walk, t);

        // Gaze phase: last visit starting at or before t.
        let vi = match visits.iter().rposition(|v| v.t0 <= t) {
            Some(vi) => vi,
            None => 0,
        };
        let v = &visits[vi];
        let dir_to = |visit: &Visit| -> Vector3<f64> {
            (object_point(&world, scene, visit.target, visit.point, t) - eye).normalize()
        };
        let gaze_world = if t < v.t0 + v.fixation_s || vi + 1 >= visits.len() || v.saccade_s == 0.0
        {
            dir_to(v)
        } else {
            let s = ((t - v.t0 - v.fixation_s) / v.saccade_s).clamp(0.0, 1.0);
            slerp_dir(&dir_to(v), &dir_to(&visits[vi + 1]), s)
        };

        // Head follows gaze, rate-limited then clamped to the lag cone.
        let mut fwd = match head_fwd {
            Some(prev) => rotate_towards(&prev, &gaze_world, head_step),
            None => gaze_world,
        };
        if let Some(qrot) = UnitQuaternion::rotation_between(&gaze_world, &fwd) {
            let angle = qrot.angle();
            if angle > lag {
                fwd = if lag == 0.0 {
                    gaze_world
                } else {
                    qrot.powf(lag / angle).transform_vector(&gaze_world)
                };
            }
        }
        head_fwd = Some(fwd);

        let pose = Pose::new(head_quaternion(&fwd), eye, t);
        let gaze_local = pose.rotation.inverse_transform_vector(&gaze_world).normalize();
        out.poses.push(pose);
        out.gazes.push(GazeSample::new(gaze_local, t));

        // Visibility: candidates inside the head cone, then a coarse angular
        // z-buffer keeps returns within a depth slack of the nearest one.
        candidates.clear();
        collect_candidates(&mut candidates, &world, scene, t);
        zbuf.clear();
        let mut locals: Vec<(Vector3<f64>, f64, (i32, i32))> = Vec::with_capacity(candidates.len());
        for p in &candidates {
            let local = pose.to_local(p);
            let norm = local.norm();
            if norm == 0.0 || local.z <= cos_vis * norm {
                locals.push((Vector3::zeros(), f64::NAN, (i32::MIN, i32::MIN)));
                continue;
            }
            let az = local.x.atan2(local.z).to_degrees();
            let el = (local.y / norm).asin().to_degrees();
            let bin = ((az / ZBUF_BIN_DEG).floor() as i32, (el / ZBUF_BIN_DEG).floor() as i32);
            locals.push((local, norm, bin));
            zbuf.entry(bin)
                .and_modify(|d| *d = d.min(norm))
                .or_insert(norm);
        }

        let mut visible_true: Vec<Keypoint> = Vec::new();
        for (p, (_, norm, bin)) in candidates.iter().zip(locals.iter()) {
            if norm.is_nan() {
                continue;
            }
            let nearest = zbuf[bin];
            if *norm <= nearest + ZBUF_DEPTH_TOL_M {
                visible_true.push(Keypoint::new(*p, 0.0, t));
            }
        }

        // Emit jittered observations; variance and jitter draws happen in
        // visible-point order.
        for kp in &mut visible_true {
            let dist = (kp.position - eye).norm().max(0.1);
            let variance = rng.gen_range(0.5..1.5) / (dist * dist);
            let jittered = if scene.observation_jitter_m > 0.0 {
                kp.position + sample_unit(&mut rng) * rng.gen_range(0.0..scene.observation_jitter_m)
            } else {
                kp.position
            };
            kp.inv_dist_variance = variance;
            out.points.push(Keypoint::new(jittered, variance, t));
        }

        // Truth: observed = temporal + vicinity cube on true positions, no
        // outlier filter; classified = per-level cone membership.
        let observed = select_observed(&visible_true, &pose, t, &truth_cfg);
        let classified = SpanLevel::ALL.map(|level| {
            let axis = level_axis(level, &gaze_local);
            let theta = cfg.eccentricities.get(level);
            let sel = classify_span(&observed, &pose, &axis, theta);
            // classify_span preserves input order, so indices recover with a
            // single forward walk.
            let mut idx = Vec::with_capacity(sel.points.len());
            let mut j = 0usize;
            for sp in &sel.points {
                while observed[j] != *sp {
                    j += 1;
                }
                idx.push(j as u32);
                j += 1;
            }
            idx
        });
        out.truth.frames.push(FrameTruth {
            t,
            pose,
            gaze: GazeSample::new(gaze_local, t),
            observed,
            classified,
        });
    }

    Ok(out)
}

fn collect_candidates(out: &mut Vec<Vector3<f64>>, world: &World, scene: &SceneSpec, t: f64) {
    out.extend_from_slice(&world.static_points);
    out.extend_from_slice(&world.wall_points);
    for (d, offsets) in scene.dynamic_objects.iter().zip(world.dyn_offsets.iter()) {
        let center = dynamic_center(d, t);
        out.extend(offsets.iter().map(|o| center + o));
    }
}

/// Result of [`inject_outliers`]: the augmented stream plus a parallel mask
/// marking which entries are injected.
#[derive(Debug, Clone)]
pub struct Injection {
    pub points: Vec<Keypoint>,
    pub injected: Vec<bool>,
}

/// Append `ceil(rate * N)` isolated points, each at least `magnitude_m` from
/// every true point, then stably re-sort the stream by observation time.
///
/// Isolation is guaranteed geometrically: injected points are placed outside
/// the bounding sphere of the input inflated by `magnitude_m`.
pub fn inject_outliers(stream: &[Keypoint], rate: f64, magnitude_m: f64, seed: u64) -> Result<Injection> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::InvalidConfig(format!("rate must be in [0,1], got {rate}")));
    }
    if magnitude_m <= 0.0 {
        return Err(Error::InvalidConfig("magnitude_m must be > 0".into()));
    }
    let n_add = (rate * stream.len() as f64).ceil() as usize;
    if n_add == 0 || stream.is_empty() {
        return Ok(Injection {
            points: stream.to_vec(),
            injected: vec![false; stream.len()],
        });
    }

    let centroid = stream.iter().map(|p| p.position).sum::<Vector3<f64>>() / stream.len() as f64;
    let bound = stream
        .iter()
        .map(|p| (p.position - centroid).norm())
        .fold(0.0f64, f64::max);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tagged: Vec<(Keypoint, bool)> = stream.iter().map(|p| (*p, false)).collect();
    for _ in 0..n_add {
        let t = stream[rng.gen_range(0..stream.len())].observed_at;
        let dir = sample_unit(&mut rng);
        let r = bound + magnitude_m * rng.gen_range(1.0..2.0);
        tagged.push((Keypoint::new(centroid + dir * r, 0.0, t), true));
    }
    tagged.sort_by(|a, b| a.0.observed_at.total_cmp(&b.0.observed_at));
    Ok(Injection {
        injected: tagged.iter().map(|(_, tag)| *tag).collect(),
        points: tagged.into_iter().map(|(p, _)| p).collect(),
    })
}

/// The standard desk-scale scene: six object clusters on a ring around a
/// seated agent, walls at wall density, slight re-observation jitter.
pub fn standard_scene(seed: u64) -> SceneSpec {
    let center = Vector3::new(2.0, 2.0, 0.0);
    let clusters = (0..6)
        .map(|i| {
            let phi = i as f64 / 6.0 * std::f64::consts::TAU;
            let height = if i % 2 == 0 { 1.15 } else { 1.55 };
            ClusterSpec {
                center: center + Vector3::new(1.1 * phi.cos(), 1.1 * phi.sin(), height),
                radius: 0.22,
                point_count: 160,
                surface_noise_m: 0.02,
            }
        })
        .collect();
    SceneSpec {
        seed,
        room_extent_m: Vector3::new(4.0, 4.0, 2.7),
        object_clusters: clusters,
        wall_point_density: 12.0,
        dynamic_objects: vec![],
        observation_jitter_m: 0.005,
    }
}

/// The matching behavior: stationary agent at the ring center cycling
/// fixations over the six clusters in a fixed order, so the next span is
/// predictable from history. Short recordings get a truncated program (the
/// cycle still repeats over whatever segments fit).
pub fn standard_behavior(seed: u64, duration_s: f64) -> BehaviorSpec {
    let segments = ((duration_s / 1.5).floor() as usize).clamp(1, 6);
    BehaviorSpec {
        seed,
        duration_s,
        walk: WalkSpec {
            waypoints: vec![Vector3::new(2.0, 2.0, 1.35)],
            speed_mps: 0.0,
        },
        gaze_program: (0..segments)
            .map(|i| GazeSegment { target: i, fixation_s: 1.2, saccade_s: 0.3 })
            .collect(),
        head_lag_deg: 12.0,
    }
}
