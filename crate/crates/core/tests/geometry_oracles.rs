//! Bit-level equivalence of the geometry fast paths against quadratic
//! brute-force oracles, plus the cone and rigid-motion properties that the
//! selection math promises exactly.

mod common;

use common::{
    gaze_level_thetas, oracle_classify, oracle_select, oracle_voxel_cells, oracle_window_sizes,
    random_window, same_keypoints,
};
use nalgebra::{UnitQuaternion, Vector3};
use rand::Rng;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};

use fovs_core::geom::{classify_span, level_axis, select_observed, Pose};
use fovs_core::voxel::voxelize;
use fovs_core::SpanLevel;

#[test]
fn select_observed_matches_quadratic_oracle_on_100_windows() {
    for (i, n) in oracle_window_sizes().into_iter().enumerate() {
        let w = random_window(1000 + i as u64, n);
        let fast = select_observed(&w.points, &w.pose, w.t, &w.cfg);
        let slow = oracle_select(&w.points, &w.pose, w.t, &w.cfg);
        assert!(
            same_keypoints(&fast, &slow),
            "window {i} (n={n}): fast {} vs oracle {} survivors",
            fast.len(),
            slow.len()
        );
    }
}

#[test]
fn classify_span_matches_oracle_on_100_windows() {
    for (i, n) in oracle_window_sizes().into_iter().enumerate() {
        let w = random_window(2000 + i as u64, n);
        let survivors = select_observed(&w.points, &w.pose, w.t, &w.cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(5000 + i as u64);
        let mut axes: Vec<(Vector3<f64>, f64)> = SpanLevel::ALL
            .iter()
            .map(|&l| (level_axis(l, &w.gaze), w.cfg.eccentricities.get(l)))
            .collect();
        let v = Vector3::new(
            rng.gen_range(-1.0..1.0_f64),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        if v.norm() > 1e-3 {
            axes.push((v / v.norm(), rng.gen_range(1.0..150.0)));
        }
        for (axis, theta) in axes {
            let fast = classify_span(&survivors, &w.pose, &axis, theta);
            let (slow, degenerate) = oracle_classify(&survivors, &w.pose, &axis, theta);
            assert!(
                same_keypoints(&fast.points, &slow) && fast.degenerate == degenerate,
                "window {i} theta {theta}: fast {}/{} vs oracle {}/{}",
                fast.points.len(),
                fast.degenerate,
                slow.len(),
                degenerate
            );
        }
    }
}

#[test]
fn voxelize_matches_cell_oracle_on_100_windows() {
    for (i, n) in oracle_window_sizes().into_iter().enumerate() {
        let w = random_window(3000 + i as u64, n);
        let survivors = select_observed(&w.points, &w.pose, w.t, &w.cfg);
        let grid = voxelize(&survivors, &w.pose.translation, &w.cfg);
        let (origin, cells) = oracle_voxel_cells(&survivors, &w.pose.translation, &w.cfg);
        assert_eq!(origin.x.to_bits(), grid.origin().x.to_bits());
        assert_eq!(origin.y.to_bits(), grid.origin().y.to_bits());
        assert_eq!(origin.z.to_bits(), grid.origin().z.to_bits());
        let got: std::collections::BTreeSet<_> = grid.occupied_cells().into_iter().collect();
        assert_eq!(got, cells, "window {i} (n={n}) cell mismatch");
    }
}

#[test]
fn widening_the_cone_never_drops_points() {
    for i in 0..40 {
        let w = random_window(4000 + i, 600);
        let survivors = select_observed(&w.points, &w.pose, w.t, &w.cfg);
        let thetas = gaze_level_thetas(&w.cfg.eccentricities);
        let mut previous: Option<Vec<[u64; 5]>> = None;
        for theta in thetas {
            let sel = classify_span(&survivors, &w.pose, &w.gaze, theta);
            let ids: Vec<[u64; 5]> = sel.points.iter().map(common::keypoint_bits).collect();
            if let Some(prev) = &previous {
                assert!(
                    prev.iter().all(|p| ids.contains(p)),
                    "window {i}: narrower cone kept a point the wider one lost"
                );
            }
            previous = Some(ids);
        }
    }
}

/// A global rigid motion applied to both the cloud and the pose preserves
/// every local-frame quantity up to roundoff, so classification can only
/// flip for points sitting within float noise of the cone surface.
#[test]
fn classification_survives_rigid_motion_away_from_the_boundary() {
    let margin = 1e-9;
    for i in 0..30 {
        let w = random_window(6000 + i, 800);
        let survivors = select_observed(&w.points, &w.pose, w.t, &w.cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(9000 + i);
        let motion_r = UnitQuaternion::from_euler_angles(
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-3.0..3.0),
        );
        let motion_t = Vector3::new(
            rng.gen_range(-20.0..20.0),
            rng.gen_range(-20.0..20.0),
            rng.gen_range(-20.0..20.0),
        );
        let moved_pose = Pose::new(
            motion_r * w.pose.rotation,
            motion_r * w.pose.translation + motion_t,
            w.t,
        );
        let moved: Vec<_> = survivors
            .iter()
            .map(|p| {
                let mut q = *p;
                q.position = motion_r * p.position + motion_t;
                q
            })
            .collect();

        let theta = w.cfg.eccentricities.central_deg;
        let cos_theta = theta.to_radians().cos();
        let margin_of = |pose: &Pose, pt: &Vector3<f64>| -> f64 {
            let local = pose.to_local(pt);
            let n = local.norm();
            if n == 0.0 {
                f64::INFINITY
            } else {
                (local.dot(&w.gaze) - cos_theta * n).abs() / n
            }
        };

        for (a, b) in survivors.iter().zip(&moved) {
            if margin_of(&w.pose, &a.position).min(margin_of(&moved_pose, &b.position)) < margin {
                continue;
            }
            let before = classify_span(std::slice::from_ref(a), &w.pose, &w.gaze, theta);
            let after = classify_span(std::slice::from_ref(b), &moved_pose, &w.gaze, theta);
            assert_eq!(
                before.points.len(),
                after.points.len(),
                "window {i}: rigid motion flipped a point {margin:e} away from the cone"
            );
        }
    }
}

#[test]
fn tiny_and_degenerate_sets_match_oracle() {
    // At most k survivors: the outlier filter must pass everything through.
    for i in 0..20 {
        let w = random_window(7000 + i, (i as usize % 17) + 1);
        let fast = select_observed(&w.points, &w.pose, w.t, &w.cfg);
        let slow = oracle_select(&w.points, &w.pose, w.t, &w.cfg);
        assert!(same_keypoints(&fast, &slow), "window {i}");
    }
    // All points identical: every pairwise distance ties at zero.
    let w = random_window(7100, 40);
    let mut pile = w.points.clone();
    let anchor_pos = w.pose.translation + Vector3::new(0.3, 0.2, 0.1);
    for p in &mut pile {
        p.position = anchor_pos;
        p.observed_at = w.t;
    }
    let fast = select_observed(&pile, &w.pose, w.t, &w.cfg);
    let slow = oracle_select(&pile, &w.pose, w.t, &w.cfg);
    assert!(same_keypoints(&fast, &slow));
    assert_eq!(fast.len(), pile.len(), "identical points must all survive");
}
