//! Point-cloud evaluation: symmetric Chamfer distance and completeness,
//! backed by a uniform-grid nearest-neighbor index.

use nalgebra::Point3;

use crate::error::{Error, Result};
use crate::geometry::{bounding_sphere, Aabb, PointCloud};
use crate::par::Exec;

/// Euclidean distance; every metric in this module goes through it.
#[inline]
pub fn point_distance(a: &Point3<f64>, b: &Point3<f64>) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Uniform-grid spatial hash over a point set. Queries return exactly what a
/// linear scan would.
#[derive(Debug, Clone)]
pub struct NNIndex {
    points: Vec<Point3<f64>>,
    bounds: Aabb,
    cell: f64,
    dims: [usize; 3],
    /// CSR layout: points of cell `c` are `order[start[c]..start[c + 1]]`.
    start: Vec<usize>,
    order: Vec<usize>,
}

impl NNIndex {
    pub fn new(points: &[Point3<f64>]) -> Result<Self> {
        let cloud = PointCloud::new(points.to_vec());
        let bounds = cloud.aabb().ok_or_else(|| Error::contract("cannot index an empty point set"))?;
        let ext = bounds.extent();
        let n = points.len() as f64;
        let max_ext = ext.max().max(1e-9);
        let per_axis = (n.sqrt() / 2.0).clamp(1.0, 512.0);
        let mut cell = max_ext / per_axis;
        let dims_for = |cell: f64| ext.map(|e| ((e / cell).floor() as usize + 1).max(1));
        let mut dims = dims_for(cell);
        while (dims[0] * dims[1] * dims[2]) as f64 > 8.0 * n + 64.0 {
            cell *= 1.25;
            dims = dims_for(cell);
        }
        let dims = [dims[0], dims[1], dims[2]];
        let ncell = dims[0] * dims[1] * dims[2];
        let mut idx = NNIndex { points: cloud.points, bounds, cell, dims, start: vec![0; ncell + 1], order: Vec::new() };
        let cells: Vec<usize> = idx.points.iter().map(|p| idx.cell_index(idx.cell_coords(p))).collect();
        for &c in &cells {
            idx.start[c + 1] += 1;
        }
        for c in 0..ncell {
            idx.start[c + 1] += idx.start[c];
        }
        let mut fill = idx.start.clone();
        idx.order = vec![0; cells.len()];
        for (i, &c) in cells.iter().enumerate() {
            idx.order[fill[c]] = i;
            fill[c] += 1;
        }
        Ok(idx)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Cell coordinates of `p` after clamping it into the indexed box.
    fn cell_coords(&self, p: &Point3<f64>) -> [i64; 3] {
        let mut c = [0i64; 3];
        for i in 0..3 {
            let f = ((p[i] - self.bounds.min[i]) / self.cell).floor();
            c[i] = (f.max(0.0) as i64).min(self.dims[i] as i64 - 1);
        }
        c
    }

    fn cell_index(&self, c: [i64; 3]) -> usize {
        c[0] as usize + self.dims[0] * (c[1] as usize + self.dims[1] * c[2] as usize)
    }

    fn scan_cell(&self, c: [i64; 3], q: &Point3<f64>, best: &mut (usize, f64)) {
        let ci = self.cell_index(c);
        for &i in &self.order[self.start[ci]..self.start[ci + 1]] {
            let d = point_distance(q, &self.points[i]);
            if d < best.1 || (d == best.1 && i < best.0) {
                *best = (i, d);
            }
        }
    }

    /// Index and distance of the nearest indexed point (lowest index on ties).
    pub fn nearest(&self, q: &Point3<f64>) -> (usize, f64) {
        let center = self.cell_coords(q);
        let mut best = (usize::MAX, f64::INFINITY);
        let max_ring = *self.dims.iter().max().unwrap() as i64;
        for s in 0..=max_ring {
            self.for_each_ring_cell(center, s, |c| self.scan_cell(c, q, &mut best));
            // any point in ring s + 1 or beyond is at least s * cell away from
            // the clamped query, and clamping onto the box never increases
            // distances to points inside it
            if best.1 < s as f64 * self.cell {
                break;
            }
        }
        best
    }

    fn for_each_ring_cell(&self, c: [i64; 3], s: i64, mut f: impl FnMut([i64; 3])) {
        let lo = |i: usize| (c[i] - s).max(0);
        let hi = |i: usize| (c[i] + s).min(self.dims[i] as i64 - 1);
        for z in lo(2)..=hi(2) {
            for y in lo(1)..=hi(1) {
                for x in lo(0)..=hi(0) {
                    let on_shell = (x - c[0]).abs() == s || (y - c[1]).abs() == s || (z - c[2]).abs() == s;
                    if on_shell {
                        f([x, y, z]);
                    }
                }
            }
        }
    }

    /// Indices of points with distance `< r`, ascending.
    pub fn within_radius(&self, q: &Point3<f64>, r: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if !(r > 0.0) {
            return out;
        }
        let lo = self.cell_coords(&(q - nalgebra::Vector3::repeat(r)));
        let hi = self.cell_coords(&(q + nalgebra::Vector3::repeat(r)));
        for z in lo[2]..=hi[2] {
            for y in lo[1]..=hi[1] {
                for x in lo[0]..=hi[0] {
                    let ci = self.cell_index([x, y, z]);
                    for &i in &self.order[self.start[ci]..self.start[ci + 1]] {
                        if point_distance(q, &self.points[i]) < r {
                            out.push(i);
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

/// Distance from each query point to its nearest neighbor in `index`.
pub fn nn_distances(exec: Exec, queries: &[Point3<f64>], index: &NNIndex) -> Vec<f64> {
    exec.map_slice(queries, |q| index.nearest(q).1)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn chamfer(p: &PointCloud, gt: &PointCloud) -> Result<f64> {
    chamfer_with(Exec::default(), p, gt)
}

/// `0.5 * (mean_p min_gt |x - y| + mean_gt min_p |x - y|)`.
pub fn chamfer_with(exec: Exec, p: &PointCloud, gt: &PointCloud) -> Result<f64> {
    if p.is_empty() || gt.is_empty() {
        return Err(Error::contract("chamfer distance of an empty cloud"));
    }
    let gi = NNIndex::new(&gt.points)?;
    let pi = NNIndex::new(&p.points)?;
    let a = mean(&nn_distances(exec, &p.points, &gi));
    let b = mean(&nn_distances(exec, &gt.points, &pi));
    Ok(0.5 * (a + b))
}

pub fn completeness(p: &PointCloud, gt: &PointCloud, r: f64) -> Result<f64> {
    Ok(completeness_multi(Exec::default(), p, gt, &[r])?[0])
}

/// Percentage of ground-truth points strictly closer than each `r` to `p`.
pub fn completeness_multi(exec: Exec, p: &PointCloud, gt: &PointCloud, radii: &[f64]) -> Result<Vec<f64>> {
    if gt.is_empty() {
        return Err(Error::contract("completeness against an empty ground truth"));
    }
    if radii.iter().any(|r| !(*r > 0.0)) {
        return Err(Error::contract("completeness radius must be positive"));
    }
    if p.is_empty() {
        return Ok(vec![0.0; radii.len()]);
    }
    let pi = NNIndex::new(&p.points)?;
    let d = nn_distances(exec, &gt.points, &pi);
    Ok(radii.iter().map(|r| 100.0 * d.iter().filter(|x| **x < *r).count() as f64 / d.len() as f64).collect())
}

/// Chamfer distance and completeness values for one prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct CloudScores {
    pub chamfer: f64,
    pub completeness: Vec<f64>,
}

/// Scores `p` against `gt` after scaling both by the inverse diameter of
/// the ground truth's bounding sphere.
pub fn normalized_scores(exec: Exec, p: &PointCloud, gt: &PointCloud, radii: &[f64]) -> Result<CloudScores> {
    let diameter = bounding_sphere(gt)?.diameter();
    let s = if diameter > 0.0 { 1.0 / diameter } else { 1.0 };
    let (ps, gs) = (p.scaled(s), gt.scaled(s));
    Ok(CloudScores { chamfer: chamfer_with(exec, &ps, &gs)?, completeness: completeness_multi(exec, &ps, &gs, radii)? })
}
