use criterion::{criterion_group, criterion_main, Criterion};
use nowcast_core::config::PipelineConfig;
use nowcast_core::estimate::{profile_mle_rho_sigma, EstimationConfig};
use nowcast_core::motion::{smooth_velocity, trec, MotionConfig};
use nowcast_core::pipeline::{fit_sequence, forecast_sequence};
use nowcast_core::raster::build_layout;
use nowcast_core::stcar::{
    lattice_points, neighbour_sets, sample_stcar, CarParams, CarStructure, StcarProcess, WeightFn,
};
use nowcast_core::synth::{generate_scene, GrowthKind, SceneSpec};

fn scene() -> Vec<nowcast_core::raster::ReflectivityField> {
    generate_scene(&SceneSpec {
        growth: GrowthKind::Stcar,
        growth_rate: 1.0,
        growth_blobs: 3,
        sigma: 0.5,
        ..Default::default()
    })
    .unwrap()
    .fields
}

fn motion(c: &mut Criterion) {
    let fields = scene();
    let cfg = MotionConfig::default();
    let layout = build_layout(128, 128, 19, 5).unwrap();
    c.bench_function("trec_128", |b| {
        b.iter(|| trec(&fields[0], &fields[1], &layout, &cfg).unwrap())
    });
    let raw = trec(&fields[0], &fields[1], &layout, &cfg).unwrap();
    c.bench_function("smooth_22x22", |b| b.iter(|| smooth_velocity(&raw, &cfg).unwrap()));
}

fn estimation(c: &mut Criterion) {
    let pts = lattice_points(20, 20, 2.5);
    let s = CarStructure::from_neighbours(neighbour_sets(&pts, 3.75).unwrap(), &pts, 3.75, WeightFn::Binary).unwrap();
    let process = StcarProcess::stationary(s.clone(), CarParams { rho: 0.6, sigma: 1.0 }, vec![]).unwrap();
    let y = sample_stcar(&process, 1, 0, 7).unwrap().remove(0);
    let cfg = EstimationConfig::default();
    c.bench_function("profile_mle_400", |b| {
        b.iter(|| profile_mle_rho_sigma(&y, &s, &cfg).unwrap())
    });
}

fn pipeline(c: &mut Criterion) {
    let fields = scene();
    let cfg = PipelineConfig::default();
    let mut g = c.benchmark_group("pipeline");
    g.sample_size(10);
    g.bench_function("fit_forecast_7x128", |b| {
        b.iter(|| {
            let run = fit_sequence(&fields, &cfg).unwrap();
            forecast_sequence(&run.prepared, &run.fit, 6).unwrap()
        })
    });
    g.finish();
}

criterion_group!(benches, motion, estimation, pipeline);
criterion_main!(benches);
