//! Shared fixtures for the integration suites: seeded random windows and
//! quadratic brute-force oracles for the geometry pipeline. The oracles
//! reimplement the documented math directly (full pairwise scans, no grid
//! acceleration) so the library's fast paths can be checked bit for bit.

#![allow(dead_code)]

use std::collections::BTreeSet;

use nalgebra::{UnitQuaternion, Vector3};
use rand::Rng;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};

use fovs_core::geom::Eccentricities;
use fovs_core::{Keypoint, Pose, SpanConfig};

pub struct RandomWindow {
    pub points: Vec<Keypoint>,
    pub pose: Pose,
    pub gaze: Vector3<f64>,
    pub t: f64,
    pub cfg: SpanConfig,
}

/// A seeded window of `n` keypoints scattered around a random pose. Points
/// straddle the temporal gate, the cube boundary, and include exact
/// duplicates plus eye-coincident degenerates so every filter branch fires.
pub fn random_window(seed: u64, n: usize) -> RandomWindow {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = SpanConfig::default();
    let t = rng.gen_range(10.0..1000.0);
    let translation = Vector3::new(
        rng.gen_range(-5.0..5.0),
        rng.gen_range(-5.0..5.0),
        rng.gen_range(0.0..3.0),
    );
    let rotation = UnitQuaternion::from_euler_angles(
        rng.gen_range(-0.4..0.4),
        rng.gen_range(-0.4..0.4),
        rng.gen_range(-3.1..3.1),
    );
    let pose = Pose::new(rotation, translation, t);

    let spread = cfg.cube_length_m * 0.75;
    let mut points: Vec<Keypoint> = Vec::with_capacity(n);
    for i in 0..n {
        let position = if i % 97 == 0 {
            // Eye-coincident: degenerate for cone classification.
            translation
        } else if i % 13 == 0 && i > 0 {
            // Exact duplicate of an earlier point: distance ties in the SOR.
            points[i - 1 - (i % 7)].position
        } else {
            translation
                + Vector3::new(
                    rng.gen_range(-spread..spread),
                    rng.gen_range(-spread..spread),
                    rng.gen_range(-spread..spread),
                )
        };
        let observed_at = t + rng.gen_range(-cfg.frame_quantum_s..cfg.frame_quantum_s);
        points.push(Keypoint::new(position, rng.gen_range(0.0..10.0), observed_at));
    }

    let gaze = {
        let v = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(0.2..1.0),
        );
        v / v.norm()
    };
    RandomWindow { points, pose, gaze, t, cfg }
}

/// Window sizes for the 100-window oracle sweep: mostly small and mid-sized
/// windows, a tail of large ones, capped at the criterion's 10^4.
pub fn oracle_window_sizes() -> Vec<usize> {
    let mut sizes = Vec::with_capacity(100);
    for i in 0..60 {
        sizes.push(17 + i * 8);
    }
    for i in 0..25 {
        sizes.push(500 + i * 90);
    }
    for i in 0..12 {
        sizes.push(3000 + i * 580);
    }
    sizes.extend([10_000, 10_000, 5]);
    assert_eq!(sizes.len(), 100);
    sizes
}

pub fn keypoint_bits(p: &Keypoint) -> [u64; 5] {
    [
        p.position.x.to_bits(),
        p.position.y.to_bits(),
        p.position.z.to_bits(),
        p.inv_dist_variance.to_bits(),
        p.observed_at.to_bits(),
    ]
}

pub fn same_keypoints(a: &[Keypoint], b: &[Keypoint]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| keypoint_bits(x) == keypoint_bits(y))
}

/// Brute-force select_observed: closed temporal gate, strict per-axis cube
/// gate, then statistical outlier removal with a full quadratic k-NN scan.
pub fn oracle_select(points: &[Keypoint], pose: &Pose, t: f64, cfg: &SpanConfig) -> Vec<Keypoint> {
    let half_quantum = cfg.frame_quantum_s / 2.0;
    let half = cfg.cube_length_m / 2.0;
    let gated: Vec<Keypoint> = points
        .iter()
        .filter(|p| (p.observed_at - t).abs() <= half_quantum)
        .filter(|p| {
            let d = p.position - pose.translation;
            d.x.abs() < half && d.y.abs() < half && d.z.abs() < half
        })
        .copied()
        .collect();

    let k = cfg.outlier_neighbors;
    if k == 0 || gated.len() <= k {
        return gated;
    }
    let means: Vec<f64> = (0..gated.len())
        .map(|i| {
            let mut d2: Vec<f64> = (0..gated.len())
                .filter(|&j| j != i)
                .map(|j| (gated[j].position - gated[i].position).norm_squared())
                .collect();
            d2.sort_by(|a, b| a.total_cmp(b));
            let nearest: Vec<f64> = d2[..k].iter().map(|d| d.sqrt()).collect();
            nearest.iter().sum::<f64>() / k as f64
        })
        .collect();
    let n = means.len() as f64;
    let mean = means.iter().sum::<f64>() / n;
    let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / n;
    let threshold = mean + cfg.outlier_std_ratio * var.sqrt();
    gated.iter().zip(&means).filter(|(_, m)| **m <= threshold).map(|(p, _)| *p).collect()
}

/// Brute-force cone classification. The local-frame transform is the shared
/// pose primitive; the membership inequality is recomputed from scratch.
pub fn oracle_classify(
    points: &[Keypoint],
    pose: &Pose,
    axis: &Vector3<f64>,
    theta_deg: f64,
) -> (Vec<Keypoint>, usize) {
    let cos_theta = theta_deg.to_radians().cos();
    let mut kept = Vec::new();
    let mut degenerate = 0usize;
    for p in points {
        let local = pose.to_local(&p.position);
        let norm = local.norm();
        if norm == 0.0 {
            degenerate += 1;
        } else if local.dot(axis) > cos_theta * norm {
            kept.push(*p);
        }
    }
    (kept, degenerate)
}

/// Brute-force voxelization: floor indexing against an origin half a cube
/// below the anchor, out-of-domain points dropped.
pub fn oracle_voxel_cells(
    points: &[Keypoint],
    anchor: &Vector3<f64>,
    cfg: &SpanConfig,
) -> (Vector3<f64>, BTreeSet<(usize, usize, usize)>) {
    let half = cfg.cube_length_m / 2.0;
    let origin = Vector3::new(anchor.x - half, anchor.y - half, anchor.z - half);
    let cell = cfg.cube_length_m / cfg.resolution as f64;
    let r = cfg.resolution as i64;
    let mut cells = BTreeSet::new();
    for p in points {
        let idx = (p.position - origin).map(|c| (c / cell).floor() as i64);
        if idx.x >= 0 && idx.x < r && idx.y >= 0 && idx.y < r && idx.z >= 0 && idx.z < r {
            cells.insert((idx.x as usize, idx.y as usize, idx.z as usize));
        }
    }
    (origin, cells)
}

/// Levels in ascending eccentricity for nesting checks.
pub fn gaze_level_thetas(ecc: &Eccentricities) -> [f64; 3] {
    [ecc.foveal_deg, ecc.central_deg, ecc.peripheral_deg]
}
