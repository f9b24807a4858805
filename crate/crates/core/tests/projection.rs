use nalgebra::{Point3, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scenefill::geometry::{Camera, Pose};
use scenefill::projection::{
    expected_depth_along, expected_depth_pixel, hit_probabilities, project_backward_with, project_expected_depth_with,
    traverse, VoxelGrid,
};
use scenefill::Exec;

fn grid(rng: &mut ChaCha8Rng, n: usize) -> VoxelGrid {
    let values = (0..n * n * n).map(|_| rng.random_range(0.05..0.95)).collect();
    VoxelGrid::new([n; 3], Point3::new(-1.0, -1.0, -1.0), 2.0 / n as f64, values).unwrap()
}

fn camera(w: usize) -> Camera {
    let pose = Pose::look_at(&Point3::new(2.6, 1.1, 0.7), &Point3::origin(), &Vector3::z()).unwrap();
    Camera::from_fov(w, w, 55.0, pose).unwrap()
}

/// Dense fixed-step march, recording each voxel the first time it is seen.
fn march(grid: &VoxelGrid, o: &Point3<f64>, d: &Vector3<f64>, step: f64) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::new();
    let mut t = 0.0;
    while t < 20.0 {
        if let Some(idx) = grid.cell_of(&(o + d * t)) {
            if out.last() != Some(&idx) {
                out.push(idx);
            }
        }
        t += step;
    }
    out
}

#[test]
fn traversal_matches_dense_march() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let g = grid(&mut rng, 6);
    for _ in 0..300 {
        let o = Point3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let d = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
            .normalize();
        let samples = traverse(&o, &d, &g, 100.0);
        for w in samples.windows(2) {
            assert!(w[1].entry_distance > w[0].entry_distance);
            assert_eq!(w[1].entry_distance, w[0].exit_distance);
        }
        // the march can skip sliver crossings shorter than its step, so compare
        // against the segments that are comfortably longer than one step
        let step = 1e-4;
        let marched = march(&g, &o, &d, step);
        let long: Vec<usize> =
            samples.iter().filter(|s| s.exit_distance - s.entry_distance > 3.0 * step).map(|s| s.voxel_index).collect();
        let all: Vec<usize> = samples.iter().map(|s| s.voxel_index).collect();
        let mut it = marched.iter();
        for idx in &long {
            assert!(it.any(|m| m == idx), "voxel {idx} missing from march");
        }
        let mut it = all.iter();
        for idx in &marched {
            assert!(it.any(|m| m == idx), "marched voxel {idx} not traversed");
        }
    }
}

#[test]
fn traversal_stops_at_d_max() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let g = grid(&mut rng, 8);
    let o = Point3::new(-2.0, 0.1, 0.05);
    let d = Vector3::x();
    let full = traverse(&o, &d, &g, 100.0);
    assert_eq!(full.len(), 8);
    let cut = traverse(&o, &d, &g, 1.6);
    assert!(cut.len() < full.len());
    assert!(cut.last().unwrap().entry_distance < 1.6);
}

#[test]
fn backward_matches_finite_differences_of_weighted_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut g = grid(&mut rng, 4);
    let cam = camera(12);
    let d_bg = g.farthest_corner_distance(&cam.center()) + 1.0;
    let upstream: Vec<f64> = (0..cam.pixel_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let objective = |g: &VoxelGrid| -> f64 {
        let mut s = 0.0;
        for row in 0..cam.height {
            for col in 0..cam.width {
                s += upstream[row * cam.width + col] * expected_depth_pixel(g, &cam, col, row, d_bg);
            }
        }
        s
    };
    let analytic = project_backward_with(Exec::Sequential, &g, &cam, d_bg, &upstream).unwrap();
    let h = 1e-5;
    for (k, a) in analytic.iter().enumerate() {
        let base = g.values[k];
        g.values[k] = base + h;
        let plus = objective(&g);
        g.values[k] = base - h;
        let minus = objective(&g);
        g.values[k] = base;
        let fd = (plus - minus) / (2.0 * h);
        assert!((fd - a).abs() <= 1e-5 * fd.abs().max(1.0), "voxel {k}: fd {fd} analytic {a}");
    }
}

#[test]
fn sequential_and_parallel_agree_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let g = grid(&mut rng, 8);
    let cam = camera(40);
    let d_bg = g.farthest_corner_distance(&cam.center()) + 0.5;
    let a = project_expected_depth_with(Exec::Sequential, &g, &cam, d_bg).unwrap();
    let b = project_expected_depth_with(Exec::Parallel, &g, &cam, d_bg).unwrap();
    assert_eq!(a, b);
    let up: Vec<f64> = (0..cam.pixel_count()).map(|i| (i % 7) as f64 - 3.0).collect();
    let ga = project_backward_with(Exec::Sequential, &g, &cam, d_bg, &up).unwrap();
    let gb = project_backward_with(Exec::Parallel, &g, &cam, d_bg, &up).unwrap();
    assert_eq!(ga, gb);
}

#[test]
fn empty_grid_renders_background() {
    let g = VoxelGrid::filled([4; 3], Point3::new(-1.0, -1.0, -1.0), 0.5, 1.0).unwrap();
    let cam = camera(8);
    let d = project_expected_depth_with(Exec::Parallel, &g, &cam, 9.0).unwrap();
    assert!(d.data.iter().all(|v| *v == 9.0));
}

proptest! {
    #[test]
    fn probabilities_close_to_one(values in prop::collection::vec(0.0f64..=1.0, 0..60)) {
        let (p, esc) = hit_probabilities(&values);
        prop_assert!(p.iter().all(|x| *x >= 0.0));
        prop_assert!((p.iter().sum::<f64>() + esc - 1.0).abs() < 1e-12);
    }

    #[test]
    fn expected_depth_bounded(values in prop::collection::vec(0.0f64..=1.0, 1..40), start in 0.0f64..5.0) {
        let entries: Vec<f64> = (0..values.len()).map(|k| start + 0.1 * k as f64).collect();
        let d_bg = start + 0.1 * values.len() as f64 + 1.0;
        let d = expected_depth_along(&values, &entries, d_bg);
        prop_assert!(d >= start - 1e-12 && d <= d_bg + 1e-12);
    }
}
