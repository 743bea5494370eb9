//! Cross-module pipeline checks: stream files survive a write/read cycle bit
//! for bit, archives reproduce samples exactly, curated samples agree with
//! the generator's exact truth, and injected outliers get filtered.

mod common;

use nalgebra::{UnitQuaternion, Vector3};
use rand::Rng;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};

use fovs_core::archive::{read_archive, write_archive};
use fovs_core::dataset::{
    build_samples, read_gaze_file, read_points_file, read_trajectory_file, write_gaze_file,
    write_points_file, write_trajectory_file, SampleSpec, Streams,
};
use fovs_core::geom::select_observed;
use fovs_core::synth::{generate, inject_outliers, standard_behavior, standard_scene};
use fovs_core::{GazeSample, Keypoint, Pose, SpanLevel};

fn pose_bits(p: &Pose) -> [u64; 8] {
    let q = p.rotation.quaternion();
    [
        q.w.to_bits(),
        q.i.to_bits(),
        q.j.to_bits(),
        q.k.to_bits(),
        p.translation.x.to_bits(),
        p.translation.y.to_bits(),
        p.translation.z.to_bits(),
        p.at.to_bits(),
    ]
}

#[test]
fn stream_files_round_trip_bit_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut points = Vec::new();
    let mut poses = Vec::new();
    let mut gazes = Vec::new();
    let mut t = 0.0;
    for _ in 0..500 {
        t += rng.gen_range(0.001..0.3);
        points.push(Keypoint::new(
            Vector3::new(
                rng.gen_range(-50.0..50.0),
                rng.gen_range(-50.0..50.0) * 1e-7,
                rng.gen_range(-1e9..1e9),
            ),
            rng.gen_range(0.0..1e4),
            t,
        ));
        poses.push(Pose::new(
            UnitQuaternion::from_euler_angles(
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-1.5..1.5),
                rng.gen_range(-3.0..3.0),
            ),
            Vector3::new(rng.gen(), rng.gen(), rng.gen()),
            t,
        ));
        let g = Vector3::new(rng.gen_range(-1.0..1.0_f64), rng.gen(), rng.gen_range(0.1..1.0));
        gazes.push(GazeSample::new(g / g.norm(), t));
    }

    let dir = tempfile::tempdir().unwrap();
    let (pp, tp, gp) =
        (dir.path().join("p.csv"), dir.path().join("t.csv"), dir.path().join("g.csv"));
    write_points_file(&pp, &points).unwrap();
    write_trajectory_file(&tp, &poses).unwrap();
    write_gaze_file(&gp, &gazes).unwrap();

    let rp = read_points_file(&pp).unwrap();
    assert!(common::same_keypoints(&rp, &points));
    let mut warnings = Vec::new();
    let rt = read_trajectory_file(&tp, &mut warnings).unwrap();
    assert_eq!(rt.len(), poses.len());
    for (a, b) in rt.iter().zip(&poses) {
        assert_eq!(pose_bits(a), pose_bits(b));
    }
    let rg = read_gaze_file(&gp, &mut warnings).unwrap();
    assert_eq!(rg.len(), gazes.len());
    for (a, b) in rg.iter().zip(&gazes) {
        assert_eq!(a.direction.x.to_bits(), b.direction.x.to_bits());
        assert_eq!(a.direction.y.to_bits(), b.direction.y.to_bits());
        assert_eq!(a.direction.z.to_bits(), b.direction.z.to_bits());
        assert_eq!(a.at.to_bits(), b.at.to_bits());
    }
    assert!(warnings.is_empty(), "clean round-trip must not warn: {warnings:?}");
}

fn synth_build(duration: f64) -> (Vec<fovs_core::dataset::SpanSample>, SampleSpec) {
    let spec = SampleSpec::default();
    let gen = generate(&standard_scene(5), &standard_behavior(5, duration), &spec.cfg).unwrap();
    let streams = Streams {
        points: gen.points,
        poses: gen.poses,
        gazes: gen.gazes,
        warnings: vec![],
    };
    let build = build_samples(&streams, "rt", &spec).unwrap();
    (build.samples, spec)
}

#[test]
fn archive_round_trips_samples_bit_exactly() {
    let (samples, spec) = synth_build(14.0);
    assert!(!samples.is_empty());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rt.fovs");
    write_archive(&path, &samples, &spec).unwrap();
    let (back, back_spec) = read_archive(&path).unwrap();

    assert_eq!(back_spec, spec);
    assert_eq!(back.len(), samples.len());
    for (a, b) in back.iter().zip(&samples) {
        assert_eq!(a.inputs, b.inputs);
        assert_eq!(a.target, b.target);
        assert_eq!(pose_bits(&a.anchor), pose_bits(&b.anchor));
        assert_eq!(a.current_gaze.direction, b.current_gaze.direction);
        assert_eq!(a.current_gaze.at.to_bits(), b.current_gaze.at.to_bits());
        assert_eq!(a.recording, b.recording);
        assert_eq!(a.sample_time.to_bits(), b.sample_time.to_bits());
    }

    // Writing the reread samples again must reproduce the file bytes.
    let path2 = dir.path().join("rt2.fovs");
    write_archive(&path2, &back, &back_spec).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
}

/// With observation jitter off and the outlier filter disabled, the lifting
/// pipeline sees exactly the generator's true points, so curated sample
/// grids must equal the generator's own truth spans.
#[test]
fn curated_samples_match_generator_truth() {
    let mut scene = standard_scene(9);
    scene.observation_jitter_m = 0.0;
    let mut spec = SampleSpec::default();
    spec.cfg.outlier_neighbors = 0;
    let gen = generate(&scene, &standard_behavior(9, 16.0), &spec.cfg).unwrap();
    let truth = gen.truth;
    let streams = Streams {
        points: gen.points,
        poses: gen.poses,
        gazes: gen.gazes,
        warnings: vec![],
    };
    let build = build_samples(&streams, "truth", &spec).unwrap();
    assert!(!build.samples.is_empty());
    assert_eq!(build.dropped_empty_future, 0);

    let q = spec.cfg.frame_quantum_s;
    let future_quanta = (spec.t_future_s / q).round() as usize;
    for sample in &build.samples {
        // Grids are co-registered to the pose at the input window start.
        let window_start = sample.sample_time - spec.t_past_s;
        let anchor_pose = streams
            .poses
            .iter()
            .min_by(|a, b| {
                (a.at - window_start).abs().partial_cmp(&(b.at - window_start).abs()).unwrap()
            })
            .unwrap();
        let start = (sample.sample_time / q).round() as usize;
        assert!((truth.frames[start].t - sample.sample_time).abs() < q / 2.0);
        let expected = truth
            .window_span_at(start, future_quanta, &anchor_pose.translation, &spec.cfg)
            .unwrap();
        for level in SpanLevel::ALL {
            assert_eq!(
                sample.target[level.index()],
                expected.levels[level.index()],
                "target mismatch at level {} t={}",
                level.name(),
                sample.sample_time
            );
        }
    }
}

#[test]
fn injected_outliers_are_filtered_and_structure_kept() {
    let spec = SampleSpec::default();
    let gen = generate(&standard_scene(3), &standard_behavior(3, 10.0), &spec.cfg).unwrap();
    let injection = inject_outliers(&gen.points, 0.05, 0.5, 77).unwrap();
    assert_eq!(injection.points.len(), injection.injected.len());
    let n_injected = injection.injected.iter().filter(|&&b| b).count();
    assert!(n_injected > 0);

    let mut kept_true = 0usize;
    let mut total_true = 0usize;
    let mut kept_outliers = 0usize;
    for pose in gen.poses.iter().step_by(2) {
        let survivors = select_observed(&injection.points, pose, pose.at, &spec.cfg);
        let originals = select_observed(&gen.points, pose, pose.at, &spec.cfg);
        total_true += originals.len();
        let outlier_bits: std::collections::HashSet<[u64; 5]> = injection
            .points
            .iter()
            .zip(&injection.injected)
            .filter(|(_, &inj)| inj)
            .map(|(p, _)| common::keypoint_bits(p))
            .collect();
        for s in &survivors {
            if outlier_bits.contains(&common::keypoint_bits(s)) {
                kept_outliers += 1;
            } else {
                kept_true += 1;
            }
        }
    }
    assert!(total_true > 1000, "scene too sparse for a rate check");
    let retention = kept_true as f64 / total_true as f64;
    assert!(retention >= 0.95, "kept only {retention:.3} of true points");
    let leak = kept_outliers as f64 / kept_true.max(1) as f64;
    assert!(leak <= 0.01, "outliers leaked through the filter: {leak:.4}");
}

/// Raw stream -> files -> ingest -> curate equals curating the raw streams
/// directly, so the text format itself never perturbs the pipeline.
#[test]
fn file_ingest_curation_equals_in_memory_curation() {
    let spec = SampleSpec::default();
    let gen = generate(&standard_scene(13), &standard_behavior(13, 12.0), &spec.cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (pp, tp, gp) =
        (dir.path().join("p.csv"), dir.path().join("t.csv"), dir.path().join("g.csv"));
    write_points_file(&pp, &gen.points).unwrap();
    write_trajectory_file(&tp, &gen.poses).unwrap();
    write_gaze_file(&gp, &gen.gazes).unwrap();
    let ingested = fovs_core::dataset::ingest(&pp, &tp, &gp).unwrap();
    assert!(ingested.warnings.is_empty());

    let direct = Streams {
        points: gen.points,
        poses: gen.poses,
        gazes: gen.gazes,
        warnings: vec![],
    };
    let a = build_samples(&ingested, "x", &spec).unwrap();
    let b = build_samples(&direct, "x", &spec).unwrap();
    assert_eq!(a.samples.len(), b.samples.len());
    for (s, t) in a.samples.iter().zip(&b.samples) {
        assert_eq!(s.inputs, t.inputs);
        assert_eq!(s.target, t.target);
        assert_eq!(pose_bits(&s.anchor), pose_bits(&t.anchor));
    }
}
