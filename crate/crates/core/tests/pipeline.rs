use std::path::Path;

use nowcast_core::config::PipelineConfig;
use nowcast_core::eval::evaluate;
use nowcast_core::pipeline::{fit_sequence, forecast_rows, forecast_sequence, read_fit, write_fit};
use nowcast_core::raster::{build_layout, format_field, parse_field, GridSpec, ReflectivityField};
use nowcast_core::synth::{compare_vectors, generate_scene, truth_compare, GrowthKind, MotionKind, SceneSpec};
use proptest::prelude::*;

fn small_cfg() -> PipelineConfig {
    PipelineConfig {
        array_size: 9,
        spacing: 4,
        kernels: 4,
        bandwidth: 6.0,
        ..Default::default()
    }
}

fn small_scene(seed: u64, growth: GrowthKind, steps: usize) -> SceneSpec {
    SceneSpec {
        seed,
        width: 64,
        height: 64,
        steps,
        array_size: 9,
        spacing: 4,
        blobs: 10,
        growth,
        growth_rate: 1.0,
        growth_blobs: 2,
        sigma: 0.3,
        ..Default::default()
    }
}

#[test]
fn tracked_motion_matches_truth() {
    let spec = small_scene(3, GrowthKind::Constant, 5);
    let scene = generate_scene(&spec).unwrap();
    let run = fit_sequence(&scene.fields, &small_cfg()).unwrap();
    for (k, v) in run.prepared.velocities.iter().enumerate() {
        let report = compare_vectors(&v.smooth, &scene.truth.node_velocity[k], Some(&v.valid), 1e-9).unwrap();
        assert!(report.mismatch_fraction < 0.05, "pair {k}: {report:?}");
    }
}

#[test]
fn extracted_growth_tracks_truth_on_active_arrays() {
    let spec = small_scene(4, GrowthKind::Stcar, 7);
    let scene = generate_scene(&spec).unwrap();
    let run = fit_sequence(&scene.fields, &small_cfg()).unwrap();
    for g in &run.prepared.growth {
        let truth = scene.truth.growth.iter().find(|x| x.t == g.t).unwrap();
        let est: Vec<f64> = run.fit.active.iter().map(|&i| g.values[i]).collect();
        let tru: Vec<f64> = run.fit.active.iter().map(|&i| truth.values[i]).collect();
        let stats = truth_compare(&est, &tru, None).unwrap();
        assert!(stats.rmse < 0.05, "t = {}: {stats:?}", g.t);
    }
}

#[test]
fn fit_survives_a_disk_round_trip_and_forecasts_identically() {
    let spec = small_scene(5, GrowthKind::Stcar, 7);
    let scene = generate_scene(&spec).unwrap();
    let run = fit_sequence(&scene.fields, &small_cfg()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fit.txt");
    write_fit(&run.fit, &path).unwrap();
    let back = read_fit(&path).unwrap();
    assert_eq!(back, run.fit);
    let a = forecast_sequence(&run.prepared, &run.fit, 3).unwrap();
    let b = forecast_sequence(&run.prepared, &back, 3).unwrap();
    assert_eq!(a.stcar, b.stcar);
}

#[test]
fn forecast_of_mismatched_sequence_is_rejected() {
    let scene = generate_scene(&small_scene(6, GrowthKind::Constant, 8)).unwrap();
    let run = fit_sequence(&scene.fields[..7], &small_cfg()).unwrap();
    let longer = fit_sequence(&scene.fields, &small_cfg()).unwrap();
    assert!(forecast_sequence(&longer.prepared, &run.fit, 2).is_err());
}

#[test]
fn growth_scene_forecast_beats_persistence() {
    let spec = small_scene(7, GrowthKind::Stcar, 10);
    let scene = generate_scene(&spec).unwrap();
    let run = fit_sequence(&scene.fields[..7], &small_cfg()).unwrap();
    let set = forecast_sequence(&run.prepared, &run.fit, 3).unwrap();
    let metrics = evaluate(&forecast_rows(&set), &scene.fields[7..], 9, 0.2, 35.0).unwrap();
    for h in 1..=3 {
        let get = |m: &str| {
            metrics
                .iter()
                .find(|x| x.method == m && x.horizon == h)
                .unwrap()
                .acc_mse_all
        };
        assert!(get("stcar") < get("persistence"), "horizon {h}");
    }
}

#[test]
fn rotational_scene_runs_end_to_end() {
    let spec = SceneSpec {
        motion: MotionKind::Rotational,
        omega: 0.03,
        u: 0.0,
        v: 0.0,
        ..small_scene(8, GrowthKind::Constant, 7)
    };
    let scene = generate_scene(&spec).unwrap();
    let run = fit_sequence(&scene.fields, &small_cfg()).unwrap();
    let set = forecast_sequence(&run.prepared, &run.fit, 2).unwrap();
    assert!(set.stcar.variance.iter().flatten().all(|v| v.is_finite() && *v >= 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn layout_is_maximal_and_centred(w in 19usize..200, h in 19usize..200, spacing in 1usize..12) {
        let l = build_layout(w, h, 19, spacing).unwrap();
        prop_assert_eq!(l.cols, (w - 19) / spacing + 1);
        prop_assert_eq!(l.rows, (h - 19) / spacing + 1);
        let (c0, r0) = l.centers_px[0];
        let (c1, r1) = l.centers_px[l.len() - 1];
        prop_assert!(c0 >= 9 && r0 >= 9 && c1 + 9 < w && r1 + 9 < h);
        // Left and right margins differ by at most one pixel.
        prop_assert!((c0 as i64 - 9 - (w as i64 - 1 - c1 as i64 - 9)).abs() <= 1);
    }

    #[test]
    fn raster_text_round_trips(vals in proptest::collection::vec(prop_oneof![Just(f64::NAN), -30.0f64..80.0], 12)) {
        let grid = GridSpec::new(4, 3, -1.5, 2.25, 0.5).unwrap();
        let f = ReflectivityField::new(grid, 600, vals.clone()).unwrap();
        let (back, trailer) = parse_field(&format_field(&f, Some("note")), Path::new("x")).unwrap();
        prop_assert_eq!(trailer.as_deref(), Some("note"));
        for (a, b) in back.values().iter().zip(&vals) {
            prop_assert!((a.is_nan() && b.is_nan()) || a == b);
        }
    }
}
