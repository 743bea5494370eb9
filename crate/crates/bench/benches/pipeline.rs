//! Micro-benchmarks for the per-window hot paths: temporal/spatial point
//! selection with outlier rejection, gaze-cone classification, voxelization,
//! and a full forecaster forward pass.

use criterion::{black_box, criterion_group, criterion_main, Criterion};

use fovs_core::dataset::{build_samples, SampleSpec, Streams};
use fovs_core::forecaster::{Forecaster, ModelConfig};
use fovs_core::geom::{classify_span, level_axis, select_observed};
use fovs_core::synth::{generate, standard_behavior, standard_scene};
use fovs_core::voxel::voxelize;
use fovs_core::{SpanConfig, SpanLevel};

fn bench_pipeline(c: &mut Criterion) {
    let cfg = SpanConfig::default();
    let gen = generate(&standard_scene(42), &standard_behavior(42, 20.0), &cfg).expect("synth");
    let streams = Streams {
        points: gen.points,
        poses: gen.poses,
        gazes: gen.gazes,
        warnings: Vec::new(),
    };

    // A mid-recording window so both temporal tails have points to reject.
    let pose = streams.poses[streams.poses.len() / 2];
    let t = pose.at;
    let gaze = streams
        .gazes
        .iter()
        .min_by(|a, b| (a.at - t).abs().partial_cmp(&(b.at - t).abs()).unwrap())
        .expect("gaze stream");

    c.bench_function("select_observed", |b| {
        b.iter(|| select_observed(black_box(&streams.points), &pose, t, &cfg))
    });

    let survivors = select_observed(&streams.points, &pose, t, &cfg);
    let foveal_axis = level_axis(SpanLevel::Foveal, &gaze.direction);
    c.bench_function("classify_span_foveal", |b| {
        b.iter(|| {
            classify_span(
                black_box(&survivors),
                &pose,
                &foveal_axis,
                cfg.eccentricities.get(SpanLevel::Foveal),
            )
        })
    });

    c.bench_function("voxelize", |b| {
        b.iter(|| voxelize(black_box(&survivors), &pose.translation, &cfg))
    });

    let spec = SampleSpec {
        cfg,
        ..SampleSpec::default()
    };
    let build = build_samples(&streams, "bench", &spec).expect("samples");
    let sample = &build.samples[build.samples.len() / 2];
    let model = Forecaster::new(ModelConfig::default()).expect("model");
    c.bench_function("forecaster_predict", |b| {
        b.iter(|| model.predict(black_box(sample)).expect("forward"))
    });
}

criterion_group!(benches, bench_pipeline);
criterion_main!(benches);
