//! Cameras, depth rasters, point clouds and the fixed action-view set.
//!
//! Conventions used everywhere in the crate:
//! - world frame is right-handed with +Z up;
//! - camera frame follows the pinhole/OpenCV layout (x right, y down, z forward);
//! - a camera pose maps world to camera, `p_cam = R * p_world + t`;
//! - pixel `(col, row)` has its center at image coordinates `(col, row)`;
//! - depth rasters store the range along the pixel ray (distance from the
//!   camera center), with `0.0` marking a hole.

use std::sync::atomic::{AtomicU32, Ordering};

use nalgebra::{Matrix3, Point3, Vector3};

use crate::error::{Error, Result};
use crate::par::Exec;
use crate::projection::VoxelGrid;

/// Number of scene-centric cameras in the action space.
pub const ACTION_COUNT: usize = 20;
/// Cameras per latitude circle.
pub const VIEWS_PER_CIRCLE: usize = 10;

pub type ActionViews = [Camera; ACTION_COUNT];

/// Rigid world-to-camera transform.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Pose { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let orth = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if !(orth <= 1e-6) || (rotation.determinant() - 1.0).abs() > 1e-6 {
            return Err(Error::contract("pose rotation is not a proper rotation"));
        }
        if translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("pose translation is not finite"));
        }
        Ok(Pose { rotation, translation })
    }

    /// Camera placed at `eye` looking at `target`, with `up` as the world up hint.
    pub fn look_at(eye: &Point3<f64>, target: &Point3<f64>, up: &Vector3<f64>) -> Result<Self> {
        let forward = target - eye;
        let norm = forward.norm();
        if !(norm > 1e-12) {
            return Err(Error::contract("look_at eye and target coincide"));
        }
        let forward = forward / norm;
        let right = forward.cross(up);
        if right.norm() < 1e-9 {
            return Err(Error::contract("look_at direction is parallel to up"));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye.coords);
        Ok(Pose { rotation, translation })
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Point3<f64> {
        Point3::from(-(self.rotation.transpose() * self.translation))
    }
}

/// Pinhole camera with square-pixel intrinsics and a world-to-camera pose.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub pose: Pose,
}

impl Camera {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize, pose: Pose) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::contract("focal lengths must be positive"));
        }
        if width == 0 || height == 0 {
            return Err(Error::contract("image size must be positive"));
        }
        if !(cx >= 0.0 && cx < width as f64 && cy >= 0.0 && cy < height as f64) {
            return Err(Error::contract("principal point outside the image"));
        }
        let pose = Pose::new(pose.rotation, pose.translation)?;
        Ok(Camera { fx, fy, cx, cy, width, height, pose })
    }

    /// Camera with a vertical field of view in degrees and centered principal point.
    pub fn from_fov(width: usize, height: usize, vfov_deg: f64, pose: Pose) -> Result<Self> {
        if !(vfov_deg > 0.0 && vfov_deg < 180.0) {
            return Err(Error::contract("field of view must be in (0, 180) degrees"));
        }
        let f = (height as f64 / 2.0) / (vfov_deg.to_radians() / 2.0).tan();
        // the image spans [-0.5, w - 0.5], so this centers the frustum
        let cx = (width as f64 - 1.0) / 2.0;
        let cy = (height as f64 - 1.0) / 2.0;
        Camera::new(f, f, cx, cy, width, height, pose)
    }

    /// Same pose and field of view at another resolution.
    pub fn with_resolution(&self, width: usize, height: usize) -> Camera {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Camera {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: (self.cx + 0.5) * sx - 0.5,
            cy: (self.cy + 0.5) * sy - 0.5,
            width,
            height,
            pose: self.pose.clone(),
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn center(&self) -> Point3<f64> {
        self.pose.center()
    }

    pub fn world_to_camera(&self, p: &Point3<f64>) -> Vector3<f64> {
        self.pose.rotation * p.coords + self.pose.translation
    }

    /// Unit ray direction through pixel `(col, row)`, in the camera frame.
    pub fn pixel_dir_camera(&self, col: usize, row: usize) -> Vector3<f64> {
        Vector3::new((col as f64 - self.cx) / self.fx, (row as f64 - self.cy) / self.fy, 1.0).normalize()
    }

    /// World-space origin and unit direction of the ray through pixel `(col, row)`.
    pub fn pixel_ray(&self, col: usize, row: usize) -> (Point3<f64>, Vector3<f64>) {
        let dir = self.pose.rotation.transpose() * self.pixel_dir_camera(col, row);
        (self.center(), dir)
    }

    /// Projects a world point; returns continuous image coordinates and range
    /// for points in front of the camera.
    pub fn project(&self, p: &Point3<f64>) -> Option<(f64, f64, f64)> {
        let c = self.world_to_camera(p);
        if !(c.z > 0.0) {
            return None;
        }
        let u = self.fx * c.x / c.z + self.cx;
        let v = self.fy * c.y / c.z + self.cy;
        Some((u, v, c.norm()))
    }

    /// Pixel containing a projected point, if inside the image.
    pub fn pixel_of(&self, u: f64, v: f64) -> Option<(usize, usize)> {
        let col = u.round();
        let row = v.round();
        if col < 0.0 || row < 0.0 || col >= self.width as f64 || row >= self.height as f64 {
            return None;
        }
        Some((col as usize, row as usize))
    }

    /// True when the whole sphere lies inside the four side planes of the
    /// frustum and in front of the camera.
    pub fn contains_sphere(&self, center: &Point3<f64>, radius: f64, slack: f64) -> bool {
        let c = self.world_to_camera(center);
        let left = -self.cx - 0.5;
        let right = self.width as f64 - 0.5 - self.cx;
        let top = -self.cy - 0.5;
        let bottom = self.height as f64 - 0.5 - self.cy;
        // inward normals of the side planes through the optical center
        let planes = [
            Vector3::new(self.fx, 0.0, -left),
            Vector3::new(-self.fx, 0.0, right),
            Vector3::new(0.0, self.fy, -top),
            Vector3::new(0.0, -self.fy, bottom),
        ];
        c.z - radius >= -slack && planes.iter().all(|n| n.dot(&c) / n.norm() >= radius - slack)
    }
}

/// Field of view and raster size shared by generated cameras.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewConfig {
    pub width: usize,
    pub height: usize,
    pub vfov_deg: f64,
}

impl Default for ViewConfig {
    fn default() -> Self {
        ViewConfig { width: 128, height: 128, vfov_deg: 60.0 }
    }
}

/// Range raster; `0.0` is a hole, valid values are strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl DepthMap {
    pub fn holes(width: usize, height: usize) -> Self {
        DepthMap { width, height, data: vec![0.0; width * height] }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::contract(format!(
                "depth data length {} does not match {width}x{height}",
                data.len()
            )));
        }
        if data.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::contract("depth values must be finite and non-negative"));
        }
        Ok(DepthMap { width, height, data })
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> f32 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, col: usize, row: usize, value: f32) {
        self.data[row * self.width + col] = value;
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|d| **d > 0.0).count()
    }

    /// Turns every value beyond the far plane into a hole.
    pub fn clip_far(&mut self, d_max: f32) {
        for d in &mut self.data {
            if *d > d_max {
                *d = 0.0;
            }
        }
    }

    pub fn same_size(&self, width: usize, height: usize) -> bool {
        self.width == width && self.height == height
    }
}

/// Per-pixel boolean raster; `true` marks a pixel inside the hole set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn empty(width: usize, height: usize) -> Self {
        Mask { width, height, bits: vec![false; width * height] }
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn same_size(&self, width: usize, height: usize) -> bool {
        self.width == width && self.height == height
    }

    pub fn is_clear(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    pub fn and(&self, other: &Mask) -> Result<Mask> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::contract("mask dimensions differ"));
        }
        let bits = self.bits.iter().zip(&other.bits).map(|(a, b)| *a && *b).collect();
        Ok(Mask { width: self.width, height: self.height, bits })
    }
}

/// Valid-pixel set of a depth map.
pub fn valid_mask(depth: &DepthMap) -> Mask {
    Mask { width: depth.width, height: depth.height, bits: depth.data.iter().map(|d| *d > 0.0).collect() }
}

pub fn hole_mask(depth: &DepthMap) -> Mask {
    Mask { width: depth.width, height: depth.height, bits: depth.data.iter().map(|d| *d == 0.0).collect() }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3<f64>>,
    /// Iteration index at which each point was added, when tracked.
    pub provenance: Option<Vec<u32>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3<f64>>) -> Self {
        PointCloud { points, provenance: None }
    }

    pub fn with_provenance(points: Vec<Point3<f64>>, iteration: u32) -> Self {
        let provenance = Some(vec![iteration; points.len()]);
        PointCloud { points, provenance }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Appends `other`'s points tagged with `iteration`.
    pub fn append(&mut self, other: &PointCloud, iteration: u32) {
        if let Some(prov) = &mut self.provenance {
            prov.extend(std::iter::repeat_n(iteration, other.len()));
        }
        self.points.extend_from_slice(&other.points);
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.iter().any(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::contract("point cloud has non-finite coordinates"));
        }
        if let Some(prov) = &self.provenance {
            if prov.len() != self.points.len() {
                return Err(Error::contract("provenance length differs from point count"));
            }
            if prov.windows(2).any(|w| w[0] > w[1]) {
                return Err(Error::contract("provenance is not non-decreasing"));
            }
        }
        Ok(())
    }

    pub fn aabb(&self) -> Option<Aabb> {
        let first = self.points.first()?;
        let mut bb = Aabb { min: *first, max: *first };
        for p in &self.points[1..] {
            bb.min = bb.min.inf(p);
            bb.max = bb.max.sup(p);
        }
        Some(bb)
    }

    /// Uniform scaling about the origin.
    pub fn scaled(&self, s: f64) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| Point3::from(p.coords * s)).collect(),
            provenance: self.provenance.clone(),
        }
    }
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Point3<f64>,
    pub max: Point3<f64>,
}

impl Aabb {
    pub fn new(min: Point3<f64>, max: Point3<f64>) -> Self {
        Aabb { min, max }
    }

    pub fn center(&self) -> Point3<f64> {
        nalgebra::center(&self.min, &self.max)
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.max - self.min
    }

    pub fn contains(&self, p: &Point3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    /// Cube with the given center and half side.
    pub fn cube(center: Point3<f64>, half: f64) -> Self {
        let h = Vector3::repeat(half);
        Aabb { min: center - h, max: center + h }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingSphere {
    pub center: Point3<f64>,
    pub radius: f64,
}

impl BoundingSphere {
    pub fn diameter(&self) -> f64 {
        2.0 * self.radius
    }
}

/// Sphere centered on the cloud's AABB center, with radius reaching the farthest point.
pub fn bounding_sphere(cloud: &PointCloud) -> Result<BoundingSphere> {
    let bb = cloud.aabb().ok_or_else(|| Error::contract("bounding sphere of an empty cloud"))?;
    let center = bb.center();
    let radius = cloud.points.iter().map(|p| (p - center).norm()).fold(0.0, f64::max);
    Ok(BoundingSphere { center, radius })
}

/// Back-projects valid pixels (optionally restricted to `only_mask`) into world points.
pub fn unproject(depth: &DepthMap, cam: &Camera, only_mask: Option<&Mask>) -> Result<PointCloud> {
    if !depth.same_size(cam.width, cam.height) {
        return Err(Error::contract(format!(
            "depth {}x{} does not match camera {}x{}",
            depth.width, depth.height, cam.width, cam.height
        )));
    }
    if let Some(m) = only_mask {
        if m.width != depth.width || m.height != depth.height {
            return Err(Error::contract("mask does not match depth dimensions"));
        }
    }
    let rt = cam.pose.rotation.transpose();
    let center = cam.center();
    let mut points = Vec::new();
    for row in 0..depth.height {
        for col in 0..depth.width {
            let d = depth.get(col, row);
            if d <= 0.0 || only_mask.is_some_and(|m| !m.get(col, row)) {
                continue;
            }
            let dir = rt * cam.pixel_dir_camera(col, row);
            points.push(center + dir * d as f64);
        }
    }
    Ok(PointCloud::new(points))
}

pub fn render_depth(cloud: &PointCloud, cam: &Camera, splat_radius: usize) -> DepthMap {
    render_depth_with(Exec::default(), cloud, cam, splat_radius)
}

/// Z-buffered nearest-range splatting. Each point covers the
/// `(2r+1)^2` block around its pixel; untouched pixels stay holes.
pub fn render_depth_with(exec: Exec, cloud: &PointCloud, cam: &Camera, splat_radius: usize) -> DepthMap {
    let (w, h) = (cam.width, cam.height);
    let r = splat_radius as isize;
    let footprint = |p: &Point3<f64>| -> Option<(usize, usize, f32)> {
        let (u, v, range) = cam.project(p)?;
        let (col, row) = cam.pixel_of(u, v)?;
        Some((col, row, range as f32))
    };
    let block = move |col: usize, row: usize| {
        let c0 = (col as isize - r).max(0) as usize;
        let c1 = ((col as isize + r) as usize).min(w - 1);
        let r0 = (row as isize - r).max(0) as usize;
        let r1 = ((row as isize + r) as usize).min(h - 1);
        (c0, c1, r0, r1)
    };

    if exec.is_parallel() {
        // positive f32 bit patterns order like the floats themselves
        let zbuf: Vec<AtomicU32> = (0..w * h).map(|_| AtomicU32::new(u32::MAX)).collect();
        exec.for_each(cloud.points.len(), |i| {
            if let Some((col, row, range)) = footprint(&cloud.points[i]) {
                if !(range > 0.0) {
                    return;
                }
                let bits = range.to_bits();
                let (c0, c1, r0, r1) = block(col, row);
                for y in r0..=r1 {
                    for x in c0..=c1 {
                        zbuf[y * w + x].fetch_min(bits, Ordering::Relaxed);
                    }
                }
            }
        });
        let data = zbuf
            .into_iter()
            .map(|a| {
                let b = a.into_inner();
                if b == u32::MAX { 0.0 } else { f32::from_bits(b) }
            })
            .collect();
        return DepthMap { width: w, height: h, data };
    }

    let mut out = DepthMap::holes(w, h);
    for p in &cloud.points {
        if let Some((col, row, range)) = footprint(p) {
            if !(range > 0.0) {
                continue;
            }
            let (c0, c1, r0, r1) = block(col, row);
            for y in r0..=r1 {
                for x in c0..=c1 {
                    let cur = &mut out.data[y * w + x];
                    if *cur == 0.0 || range < *cur {
                        *cur = range;
                    }
                }
            }
        }
    }
    out
}

/// The 20 scene-centric action cameras: indices 0..9 on the equator, 10..19
/// on the +45 degree latitude circle, azimuths starting at +X in 36 degree
/// steps, all looking at the sphere center with +Z up.
pub fn sample_action_views(sphere: &BoundingSphere, distance_scale: f64, view: &ViewConfig) -> Result<ActionViews> {
    if !(sphere.radius > 1e-9) || !sphere.radius.is_finite() {
        return Err(Error::contract("action views need a sphere with positive radius"));
    }
    if !(distance_scale >= 1.0) {
        return Err(Error::contract("distance scale must be at least 1"));
    }
    let dist = distance_scale * sphere.radius;
    let up = Vector3::z();
    let mut cams = Vec::with_capacity(ACTION_COUNT);
    for (circle, elevation) in [0.0f64, 45.0].into_iter().enumerate() {
        for k in 0..VIEWS_PER_CIRCLE {
            let az = (k as f64 * 360.0 / VIEWS_PER_CIRCLE as f64).to_radians();
            let el = elevation.to_radians();
            let offset = Vector3::new(az.cos() * el.cos(), az.sin() * el.cos(), el.sin()) * dist;
            let eye = sphere.center + offset;
            let pose = Pose::look_at(&eye, &sphere.center, &up)?;
            let cam = Camera::from_fov(view.width, view.height, view.vfov_deg, pose)?;
            debug_assert_eq!(cams.len(), circle * VIEWS_PER_CIRCLE + k);
            cams.push(cam);
        }
    }
    Ok(cams.try_into().expect("exactly 20 action views"))
}

/// Marks voxels containing at least one point as occupied (0.0); all others
/// stay 1.0. Cubic voxels sized so the grid covers `bounds`.
pub fn voxelize(cloud: &PointCloud, dims: [usize; 3], bounds: &Aabb) -> Result<VoxelGrid> {
    if dims.contains(&0) {
        return Err(Error::contract("voxel dims must be positive"));
    }
    let ext = bounds.extent();
    if (0..3).any(|i| !(ext[i] > 0.0)) {
        return Err(Error::contract("degenerate voxelization bounds"));
    }
    let voxel_size = (0..3).map(|i| ext[i] / dims[i] as f64).fold(0.0, f64::max);
    let mut grid = VoxelGrid::filled(dims, bounds.min, voxel_size, 1.0)?;
    for p in &cloud.points {
        if let Some(idx) = grid.cell_of(p) {
            grid.values[idx] = 0.0;
        }
    }
    Ok(grid)
}
