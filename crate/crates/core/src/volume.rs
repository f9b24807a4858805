//! Volumetric scene completion behind a pluggable interface.
//!
//! A [`VolumeObservation`] pairs surface occupancy with ray-carved free space;
//! a [`Completer`] turns it into a coarse probability-empty grid. Both built-in
//! completers are deterministic and keep known voxels on their side of 0.5.

use crate::error::{Error, Result};
use crate::geometry::{Camera, DepthMap};
use crate::par::Exec;
use crate::projection::{traverse, VoxelGrid};

/// Geometry of a voxel grid without values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub dims: [usize; 3],
    pub origin: nalgebra::Point3<f64>,
    pub voxel_size: f64,
}

impl GridSpec {
    pub fn of(grid: &VoxelGrid) -> Self {
        GridSpec { dims: grid.dims, origin: grid.origin, voxel_size: grid.voxel_size }
    }

    pub fn grid(&self, value: f64) -> Result<VoxelGrid> {
        VoxelGrid::filled(self.dims, self.origin, self.voxel_size, value)
    }
}

pub fn carve_freespace(depth: &DepthMap, cam: &Camera, spec: &GridSpec) -> Result<VoxelGrid> {
    carve_freespace_with(Exec::default(), depth, cam, spec)
}

/// Marks every voxel a valid pixel ray leaves strictly before its observed
/// range as known-free (0.0); everything else stays 1.0.
pub fn carve_freespace_with(exec: Exec, depth: &DepthMap, cam: &Camera, spec: &GridSpec) -> Result<VoxelGrid> {
    if !depth.same_size(cam.width, cam.height) {
        return Err(Error::contract("depth does not match camera size"));
    }
    let mut grid = spec.grid(1.0)?;
    let w = depth.width;
    let carved = exec.map(depth.height, |row| {
        let mut idx = Vec::new();
        for col in 0..w {
            let d = depth.get(col, row) as f64;
            if d <= 0.0 {
                continue;
            }
            let (o, dir) = cam.pixel_ray(col, row);
            idx.extend(traverse(&o, &dir, &grid, d).iter().filter(|s| s.exit_distance < d).map(|s| s.voxel_index));
        }
        idx
    });
    for i in carved.into_iter().flatten() {
        grid.values[i] = 0.0;
    }
    Ok(grid)
}

/// Partial volumetric observation of a scene.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeObservation {
    /// 0 where surface points were observed, 1 elsewhere.
    pub occupied: VoxelGrid,
    /// 0 where known empty, 1 where unknown.
    pub freespace: VoxelGrid,
}

impl VolumeObservation {
    /// Builds an observation; a voxel that is both occupied and carved is kept
    /// occupied.
    pub fn new(occupied: VoxelGrid, mut freespace: VoxelGrid) -> Result<Self> {
        if !occupied.same_geometry(&freespace) {
            return Err(Error::contract("occupied and freespace grids differ in geometry"));
        }
        for (f, o) in freespace.values.iter_mut().zip(&occupied.values) {
            if *o == 0.0 {
                *f = 1.0;
            }
        }
        Ok(VolumeObservation { occupied, freespace })
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec::of(&self.occupied)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Label {
    Occupied,
    Free,
    Unknown,
}

impl Label {
    fn value(self) -> f64 {
        match self {
            Label::Occupied => 0.0,
            Label::Free => 1.0,
            Label::Unknown => 0.5,
        }
    }
}

/// Built-in completers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Completer {
    /// Pools the observation down by `factor`; unknown voxels read 0.5.
    Identity { factor: usize },
    /// Pools like `Identity`, then runs `iters` Jacobi sweeps of the 6-neighbor
    /// Laplace equation on unknown voxels with known voxels as Dirichlet data.
    Diffusion { factor: usize, iters: usize },
}

impl Completer {
    pub fn parse(id: &str, factor: usize, iters: usize) -> Result<Self> {
        match id {
            "identity" => Ok(Completer::Identity { factor }),
            "diffusion" => Ok(Completer::Diffusion { factor, iters }),
            other => Err(Error::config(format!("unknown completer '{other}'"))),
        }
    }

    pub fn factor(&self) -> usize {
        match *self {
            Completer::Identity { factor } | Completer::Diffusion { factor, .. } => factor,
        }
    }
}

/// Block pooling: a block is occupied if any sub-voxel is, free only if all
/// sub-voxels are carved, unknown otherwise.
fn pool_labels(obs: &VolumeObservation, factor: usize) -> Result<(GridSpec, Vec<Label>)> {
    if factor == 0 {
        return Err(Error::contract("pooling factor must be positive"));
    }
    let src = &obs.occupied;
    let dims = src.dims.map(|d| d.div_ceil(factor));
    let spec = GridSpec { dims, origin: src.origin, voxel_size: src.voxel_size * factor as f64 };
    let mut labels = Vec::with_capacity(dims.iter().product());
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let mut any_occ = false;
                let mut all_free = true;
                for sz in z * factor..((z + 1) * factor).min(src.dims[2]) {
                    for sy in y * factor..((y + 1) * factor).min(src.dims[1]) {
                        for sx in x * factor..((x + 1) * factor).min(src.dims[0]) {
                            let i = src.index(sx, sy, sz);
                            any_occ |= obs.occupied.values[i] == 0.0;
                            all_free &= obs.freespace.values[i] == 0.0;
                        }
                    }
                }
                labels.push(if any_occ {
                    Label::Occupied
                } else if all_free {
                    Label::Free
                } else {
                    Label::Unknown
                });
            }
        }
    }
    Ok((spec, labels))
}

pub fn complete(obs: &VolumeObservation, method: &Completer) -> Result<VoxelGrid> {
    complete_with(Exec::default(), obs, method)
}

pub fn complete_with(exec: Exec, obs: &VolumeObservation, method: &Completer) -> Result<VoxelGrid> {
    let (spec, labels) = pool_labels(obs, method.factor())?;
    let mut grid = spec.grid(0.5)?;
    for (v, l) in grid.values.iter_mut().zip(&labels) {
        *v = l.value();
    }
    if let Completer::Diffusion { iters, .. } = *method {
        diffuse(exec, &mut grid, &labels, iters);
    }
    Ok(grid)
}

fn diffuse(exec: Exec, grid: &mut VoxelGrid, labels: &[Label], iters: usize) {
    if !labels.contains(&Label::Unknown) {
        return;
    }
    let [nx, ny, nz] = grid.dims;
    let slab = nx * ny;
    let mut next = grid.values.clone();
    for _ in 0..iters {
        let cur = &grid.values;
        exec.for_each_chunk_mut(&mut next, slab, |z, out| {
            for y in 0..ny {
                for x in 0..nx {
                    let i = x + nx * (y + ny * z);
                    if labels[i] != Label::Unknown {
                        continue;
                    }
                    let mut sum = 0.0;
                    let mut n = 0u32;
                    let mut add = |j: usize| {
                        sum += cur[j];
                        n += 1;
                    };
                    if x > 0 {
                        add(i - 1);
                    }
                    if x + 1 < nx {
                        add(i + 1);
                    }
                    if y > 0 {
                        add(i - nx);
                    }
                    if y + 1 < ny {
                        add(i + nx);
                    }
                    if z > 0 {
                        add(i - slab);
                    }
                    if z + 1 < nz {
                        add(i + slab);
                    }
                    out[x + nx * y] = if n > 0 { sum / n as f64 } else { cur[i] };
                }
            }
        });
        std::mem::swap(&mut grid.values, &mut next);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Point3;

    fn line_obs(occ: &[f64], free: &[f64]) -> VolumeObservation {
        let n = occ.len();
        let o = VoxelGrid::new([n, 1, 1], Point3::origin(), 1.0, occ.to_vec()).unwrap();
        let f = VoxelGrid::new([n, 1, 1], Point3::origin(), 1.0, free.to_vec()).unwrap();
        VolumeObservation::new(o, f).unwrap()
    }

    #[test]
    fn harmonic_run_of_three() {
        let obs = line_obs(&[0.0, 1.0, 1.0, 1.0, 1.0], &[1.0, 1.0, 1.0, 1.0, 0.0]);
        let g = complete(&obs, &Completer::Diffusion { factor: 1, iters: 2000 }).unwrap();
        let expect = [0.0, 0.25, 0.5, 0.75, 1.0];
        for (v, e) in g.values.iter().zip(expect) {
            assert!((v - e).abs() < 1e-12, "{v} vs {e}");
        }
    }

    #[test]
    fn fully_known_is_boundary_values() {
        let obs = line_obs(&[0.0, 1.0, 0.0], &[1.0, 0.0, 1.0]);
        let g = complete(&obs, &Completer::Diffusion { factor: 1, iters: 50 }).unwrap();
        assert_eq!(g.values, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn identity_all_unknown_is_half() {
        let spec = GridSpec { dims: [8, 8, 8], origin: Point3::origin(), voxel_size: 0.1 };
        let obs = VolumeObservation::new(spec.grid(1.0).unwrap(), spec.grid(1.0).unwrap()).unwrap();
        let g = complete(&obs, &Completer::Identity { factor: 4 }).unwrap();
        assert_eq!(g.dims, [2, 2, 2]);
        assert!((g.voxel_size - 0.4).abs() < 1e-15);
        assert!(g.values.iter().all(|v| *v == 0.5));
    }

    #[test]
    fn pooling_rules() {
        // block 0: one occupied; block 1: all free; block 2: mixed free/unknown
        let occ = [1.0, 0.0, 1.0, 1.0, 1.0, 1.0];
        let free = [1.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let g = complete(&line_obs(&occ, &free), &Completer::Identity { factor: 2 }).unwrap();
        assert_eq!(g.values, vec![0.0, 1.0, 0.5]);
    }

    #[test]
    fn conflicting_voxel_stays_occupied() {
        let obs = line_obs(&[0.0, 1.0], &[0.0, 0.0]);
        assert_eq!(obs.freespace.values, vec![1.0, 0.0]);
    }

    #[test]
    fn unknown_completer_is_rejected() {
        assert!(matches!(Completer::parse("bogus", 4, 1), Err(Error::Config(_))));
    }

    #[test]
    fn carve_nothing_from_holes() {
        let cam = Camera::from_fov(8, 8, 60.0, crate::geometry::Pose::identity()).unwrap();
        let spec = GridSpec { dims: [4, 4, 4], origin: Point3::new(-1.0, -1.0, 1.0), voxel_size: 0.5 };
        let g = carve_freespace(&DepthMap::holes(8, 8), &cam, &spec).unwrap();
        assert!(g.values.iter().all(|v| *v == 1.0));
    }
}
