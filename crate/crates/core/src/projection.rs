//! Differentiable expected-depth projection of a probability-empty voxel grid.
//!
//! For a pixel ray crossing voxels `l_1 .. l_N` with emptiness `V_k` and entry
//! distances `d_k`, the first-hit probability is
//! `P_k = (1 - V_k) * prod_{j<k} V_j` and the rendered depth is
//! `D = sum_k P_k d_k + (prod_j V_j) * d_bg`. The last term is the escape event
//! (the ray crosses every voxel without a hit); with it the hit probabilities
//! sum to one and the telescoped derivative
//! `dD/dV_k = sum_{i>=k} (d_{i+1} - d_i) prod_{t<=i, t!=k} V_t`, `d_{N+1} = d_bg`,
//! is exact.

use nalgebra::{Point3, Vector3};
use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{Aabb, Camera, DepthMap};
use crate::par::Exec;

/// Grid of per-voxel probabilities of being empty (0 = surely occupied).
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub dims: [usize; 3],
    /// World position of the min corner.
    pub origin: Point3<f64>,
    pub voxel_size: f64,
    /// x fastest, then y, then z.
    pub values: Vec<f64>,
}

impl VoxelGrid {
    pub fn new(dims: [usize; 3], origin: Point3<f64>, voxel_size: f64, mut values: Vec<f64>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::contract("voxel grid dims must be positive"));
        }
        if !(voxel_size > 0.0) || !voxel_size.is_finite() {
            return Err(Error::contract("voxel size must be positive"));
        }
        if values.len() != dims[0] * dims[1] * dims[2] {
            return Err(Error::contract("voxel value count does not match dims"));
        }
        if values.iter().any(|v| v.is_nan()) || origin.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("voxel grid has non-finite entries"));
        }
        for v in &mut values {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(VoxelGrid { dims, origin, voxel_size, values })
    }

    pub fn filled(dims: [usize; 3], origin: Point3<f64>, voxel_size: f64, value: f64) -> Result<Self> {
        let n = dims.iter().product();
        VoxelGrid::new(dims, origin, voxel_size, vec![value; n])
    }

    /// Same geometry, different values.
    pub fn like(&self, value: f64) -> VoxelGrid {
        VoxelGrid { values: vec![value.clamp(0.0, 1.0); self.values.len()], ..self.clone() }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let x = idx % self.dims[0];
        let y = (idx / self.dims[0]) % self.dims[1];
        let z = idx / (self.dims[0] * self.dims[1]);
        [x, y, z]
    }

    pub fn aabb(&self) -> Aabb {
        let ext = Vector3::new(self.dims[0] as f64, self.dims[1] as f64, self.dims[2] as f64) * self.voxel_size;
        Aabb::new(self.origin, self.origin + ext)
    }

    pub fn same_geometry(&self, other: &VoxelGrid) -> bool {
        self.dims == other.dims && self.origin == other.origin && self.voxel_size == other.voxel_size
    }

    /// Linear index of the voxel containing `p`, if inside the grid.
    pub fn cell_of(&self, p: &Point3<f64>) -> Option<usize> {
        let mut c = [0usize; 3];
        for i in 0..3 {
            let f = ((p[i] - self.origin[i]) / self.voxel_size).floor();
            if !(f >= 0.0 && f < self.dims[i] as f64) {
                return None;
            }
            c[i] = f as usize;
        }
        Some(self.index(c[0], c[1], c[2]))
    }

    pub fn voxel_center(&self, idx: usize) -> Point3<f64> {
        let [x, y, z] = self.coords(idx);
        self.origin + Vector3::new(x as f64 + 0.5, y as f64 + 0.5, z as f64 + 0.5) * self.voxel_size
    }

    /// Distance from `p` to the farthest grid corner.
    pub fn farthest_corner_distance(&self, p: &Point3<f64>) -> f64 {
        let bb = self.aabb();
        let mut best: f64 = 0.0;
        for mask in 0..8 {
            let c = Point3::new(
                if mask & 1 == 0 { bb.min.x } else { bb.max.x },
                if mask & 2 == 0 { bb.min.y } else { bb.max.y },
                if mask & 4 == 0 { bb.min.z } else { bb.max.z },
            );
            best = best.max((c - p).norm());
        }
        best
    }
}

/// One voxel crossed by a ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RaySample {
    pub voxel_index: usize,
    /// Distance from the ray origin where the ray enters the voxel.
    pub entry_distance: f64,
    /// Distance where it leaves (clipped to the grid exit).
    pub exit_distance: f64,
}

/// Slab test; returns the parametric interval of the ray inside `bb`.
pub fn ray_box_interval(origin: &Point3<f64>, dir: &Vector3<f64>, bb: &Aabb) -> Option<(f64, f64)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for i in 0..3 {
        if dir[i] == 0.0 {
            if origin[i] < bb.min[i] || origin[i] > bb.max[i] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[i];
        let a = (bb.min[i] - origin[i]) * inv;
        let b = (bb.max[i] - origin[i]) * inv;
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        t0 = t0.max(lo);
        t1 = t1.min(hi);
    }
    (t0 <= t1).then_some((t0, t1))
}

/// Grid walk (Amanatides-Woo) listing the voxels a ray passes through in
/// order, truncated at `d_max` or the grid exit. Zero-length corner
/// crossings are dropped, so entry distances strictly increase.
pub fn traverse(origin: &Point3<f64>, direction: &Vector3<f64>, grid: &VoxelGrid, d_max: f64) -> Vec<RaySample> {
    debug_assert!((direction.norm() - 1.0).abs() <= 1e-6, "direction must be unit length");
    let mut out = Vec::new();
    let Some((t_in, t_out)) = ray_box_interval(origin, direction, &grid.aabb()) else {
        return out;
    };
    let t_start = t_in.max(0.0);
    if t_out <= t_start || t_start >= d_max {
        return out;
    }

    let size = grid.voxel_size;
    let entry = origin + direction * t_start;
    let mut cell = [0i64; 3];
    let mut step = [0i64; 3];
    let mut t_next = [f64::INFINITY; 3];
    let mut t_delta = [f64::INFINITY; 3];
    for i in 0..3 {
        let n = grid.dims[i] as i64;
        let f = ((entry[i] - grid.origin[i]) / size).floor() as i64;
        cell[i] = f.clamp(0, n - 1);
        if direction[i] > 0.0 {
            step[i] = 1;
            let boundary = grid.origin[i] + (cell[i] + 1) as f64 * size;
            t_next[i] = (boundary - origin[i]) / direction[i];
            t_delta[i] = size / direction[i];
        } else if direction[i] < 0.0 {
            step[i] = -1;
            let boundary = grid.origin[i] + cell[i] as f64 * size;
            t_next[i] = (boundary - origin[i]) / direction[i];
            t_delta[i] = -size / direction[i];
        }
    }

    let mut t = t_start;
    loop {
        let axis = if t_next[0] <= t_next[1] && t_next[0] <= t_next[2] {
            0
        } else if t_next[1] <= t_next[2] {
            1
        } else {
            2
        };
        let exit = t_next[axis].min(t_out);
        if exit > t {
            let idx = grid.index(cell[0] as usize, cell[1] as usize, cell[2] as usize);
            out.push(RaySample { voxel_index: idx, entry_distance: t, exit_distance: exit });
            t = exit;
        }
        if t >= t_out || t >= d_max {
            break;
        }
        cell[axis] += step[axis];
        if cell[axis] < 0 || cell[axis] >= grid.dims[axis] as i64 {
            break;
        }
        t_next[axis] += t_delta[axis];
    }
    out
}

/// First-hit probabilities `P_k` and the escape probability `prod V`.
pub fn hit_probabilities(values: &[f64]) -> (Vec<f64>, f64) {
    let mut transmit = 1.0;
    let probs = values
        .iter()
        .map(|v| {
            let p = (1.0 - v) * transmit;
            transmit *= v;
            p
        })
        .collect();
    (probs, transmit)
}

/// Expected depth of one ray given on-ray emptiness values and entry distances.
pub fn expected_depth_along(values: &[f64], entries: &[f64], d_bg: f64) -> f64 {
    debug_assert_eq!(values.len(), entries.len());
    let mut transmit = 1.0;
    let mut depth = 0.0;
    for (v, d) in values.iter().zip(entries) {
        depth += (1.0 - v) * transmit * d;
        transmit *= v;
    }
    depth + transmit * d_bg
}

/// `dD/dV_k` for one ray, evaluated without divisions:
/// `dD/dV_k = T_k * S_k`, `T_k = prod_{j<k} V_j`,
/// `S_N = d_bg - d_N`, `S_k = (d_{k+1} - d_k) + V_{k+1} S_{k+1}`.
pub fn expected_depth_grad_along(values: &[f64], entries: &[f64], d_bg: f64) -> Vec<f64> {
    let n = values.len();
    let mut grad = vec![0.0; n];
    if n == 0 {
        return grad;
    }
    let mut suffix = d_bg - entries[n - 1];
    grad[n - 1] = suffix;
    for k in (0..n - 1).rev() {
        suffix = (entries[k + 1] - entries[k]) + values[k + 1] * suffix;
        grad[k] = suffix;
    }
    let mut transmit = 1.0;
    for k in 0..n {
        grad[k] *= transmit;
        transmit *= values[k];
    }
    grad
}

fn check_background(grid: &VoxelGrid, cam: &Camera, d_bg: f64) -> Result<()> {
    let need = grid.farthest_corner_distance(&cam.center());
    if !(d_bg > need) {
        return Err(Error::contract(format!(
            "background depth {d_bg} must exceed the farthest grid corner distance {need}"
        )));
    }
    Ok(())
}

/// Samples along the ray of pixel `(col, row)`.
pub fn pixel_samples(grid: &VoxelGrid, cam: &Camera, col: usize, row: usize, d_bg: f64) -> Vec<RaySample> {
    let (o, d) = cam.pixel_ray(col, row);
    traverse(&o, &d, grid, d_bg)
}

fn ray_values(grid: &VoxelGrid, samples: &[RaySample]) -> (Vec<f64>, Vec<f64>) {
    samples.iter().map(|s| (grid.values[s.voxel_index], s.entry_distance)).unzip()
}

/// Expected depth of one pixel, in f64.
pub fn expected_depth_pixel(grid: &VoxelGrid, cam: &Camera, col: usize, row: usize, d_bg: f64) -> f64 {
    let samples = pixel_samples(grid, cam, col, row, d_bg);
    let (v, d) = ray_values(grid, &samples);
    expected_depth_along(&v, &d, d_bg)
}

pub fn project_expected_depth(grid: &VoxelGrid, cam: &Camera, d_bg: f64) -> Result<DepthMap> {
    project_expected_depth_with(Exec::default(), grid, cam, d_bg)
}

/// Dense expected-depth raster; rays missing the grid read `d_bg`.
pub fn project_expected_depth_with(exec: Exec, grid: &VoxelGrid, cam: &Camera, d_bg: f64) -> Result<DepthMap> {
    check_background(grid, cam, d_bg)?;
    let w = cam.width;
    let rows = exec.map(cam.height, |row| {
        (0..w).map(|col| expected_depth_pixel(grid, cam, col, row, d_bg) as f32).collect::<Vec<_>>()
    });
    Ok(DepthMap { width: w, height: cam.height, data: rows.concat() })
}

/// Per-pixel escape probability `prod V` (1.0 for rays missing the grid).
pub fn escape_probability_map(exec: Exec, grid: &VoxelGrid, cam: &Camera, d_max: f64) -> Vec<f64> {
    let w = cam.width;
    let rows = exec.map(cam.height, |row| {
        (0..w)
            .map(|col| {
                let (o, d) = cam.pixel_ray(col, row);
                traverse(&o, &d, grid, d_max).iter().map(|s| grid.values[s.voxel_index]).product::<f64>()
            })
            .collect::<Vec<_>>()
    });
    rows.concat()
}

pub fn project_backward(grid: &VoxelGrid, cam: &Camera, d_bg: f64, upstream: &[f64]) -> Result<Vec<f64>> {
    project_backward_with(Exec::default(), grid, cam, d_bg, upstream)
}

/// Accumulates `upstream(x) * dD(x)/dV_k` over all pixel rays into a
/// per-voxel gradient. Row contributions are reduced in row order, so the
/// result is bitwise identical for any thread count.
pub fn project_backward_with(
    exec: Exec,
    grid: &VoxelGrid,
    cam: &Camera,
    d_bg: f64,
    upstream: &[f64],
) -> Result<Vec<f64>> {
    if upstream.len() != cam.pixel_count() {
        return Err(Error::contract("upstream gradient size does not match the camera image"));
    }
    check_background(grid, cam, d_bg)?;
    let w = cam.width;
    let per_row = exec.map(cam.height, |row| {
        let mut contrib = Vec::new();
        for col in 0..w {
            let up = upstream[row * w + col];
            if up == 0.0 {
                continue;
            }
            let samples = pixel_samples(grid, cam, col, row, d_bg);
            let (v, d) = ray_values(grid, &samples);
            let g = expected_depth_grad_along(&v, &d, d_bg);
            contrib.extend(samples.iter().zip(g).map(|(s, g)| (s.voxel_index, up * g)));
        }
        contrib
    });
    let mut grad = vec![0.0; grid.len()];
    for row in per_row {
        for (idx, g) in row {
            grad[idx] += g;
        }
    }
    Ok(grad)
}

/// Per-ray analytic gradient routine, swappable for harness self-tests.
pub type RayGradFn = dyn Fn(&[f64], &[f64], f64) -> Vec<f64> + Sync;

pub fn grad_check<R: Rng>(grid: &VoxelGrid, cam: &Camera, d_bg: f64, n_rays: usize, h: f64, rng: &mut R) -> Result<f64> {
    grad_check_with(grid, cam, d_bg, n_rays, h, rng, &expected_depth_grad_along)
}

/// Max relative error between the analytic ray gradient and central finite
/// differences of the forward, over `n_rays` random pixels that hit the grid
/// and every voxel on them. Relative error is `|a - fd| / max(|fd|, 1e-8)`.
pub fn grad_check_with<R: Rng>(
    grid: &VoxelGrid,
    cam: &Camera,
    d_bg: f64,
    n_rays: usize,
    h: f64,
    rng: &mut R,
    analytic: &RayGradFn,
) -> Result<f64> {
    check_background(grid, cam, d_bg)?;
    if !(h > 0.0) || grid.values.iter().any(|v| *v <= h || *v >= 1.0 - h) {
        return Err(Error::contract("grad check needs every value strictly inside (h, 1 - h)"));
    }
    let mut worst: f64 = 0.0;
    let mut done = 0;
    let mut attempts = 0;
    let mut work = grid.clone();
    while done < n_rays {
        attempts += 1;
        if attempts > 1000 * n_rays.max(1) {
            return Err(Error::contract("too few camera rays hit the grid"));
        }
        let col = rng.random_range(0..cam.width);
        let row = rng.random_range(0..cam.height);
        let samples = pixel_samples(grid, cam, col, row, d_bg);
        if samples.is_empty() {
            continue;
        }
        let (v, d) = ray_values(grid, &samples);
        let a = analytic(&v, &d, d_bg);
        for (k, s) in samples.iter().enumerate() {
            let base = work.values[s.voxel_index];
            work.values[s.voxel_index] = base + h;
            let plus = expected_depth_pixel(&work, cam, col, row, d_bg);
            work.values[s.voxel_index] = base - h;
            let minus = expected_depth_pixel(&work, cam, col, row, d_bg);
            work.values[s.voxel_index] = base;
            let fd = (plus - minus) / (2.0 * h);
            worst = worst.max((a[k] - fd).abs() / fd.abs().max(1e-8));
        }
        done += 1;
    }
    Ok(worst)
}
