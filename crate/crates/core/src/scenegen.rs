//! Procedural indoor scenes with exact analytic ray casting.
//!
//! A scene is a floor rectangle at `z = 0`, two to four wall rectangles on the
//! room boundary and a set of non-overlapping furniture boxes resting on the
//! floor. Surfaces are two-sided.

use nalgebra::{Point3, Rotation3, Unit, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    bounding_sphere, sample_action_views, unproject, ActionViews, Camera, DepthMap, Pose, ViewConfig,
};
use crate::par::Exec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Primitive {
    /// Solid axis-aligned box.
    Box { min: [f64; 3], max: [f64; 3] },
    /// Finite rectangle perpendicular to `axis` at `offset`; `min`/`max` bound
    /// the two remaining axes in ascending axis order.
    Rect { axis: usize, offset: f64, min: [f64; 2], max: [f64; 2] },
}

const HIT_EPS: f64 = 1e-9;

impl Primitive {
    /// Nearest hit distance along a unit ray, if any.
    pub fn intersect(&self, o: &Point3<f64>, d: &Vector3<f64>) -> Option<f64> {
        match self {
            Primitive::Box { min, max } => {
                let mut t0 = f64::NEG_INFINITY;
                let mut t1 = f64::INFINITY;
                for i in 0..3 {
                    if d[i] == 0.0 {
                        if o[i] < min[i] || o[i] > max[i] {
                            return None;
                        }
                        continue;
                    }
                    let a = (min[i] - o[i]) / d[i];
                    let b = (max[i] - o[i]) / d[i];
                    t0 = t0.max(a.min(b));
                    t1 = t1.min(a.max(b));
                }
                if t0 > t1 || t1 <= HIT_EPS {
                    None
                } else if t0 > HIT_EPS {
                    Some(t0)
                } else {
                    // origin inside the box
                    Some(t1)
                }
            }
            Primitive::Rect { axis, offset, min, max } => {
                let a = *axis;
                if d[a] == 0.0 {
                    return None;
                }
                let t = (offset - o[a]) / d[a];
                if t <= HIT_EPS {
                    return None;
                }
                let p = o + d * t;
                let (u, v) = other_axes(a);
                (p[u] >= min[0] && p[u] <= max[0] && p[v] >= min[1] && p[v] <= max[1]).then_some(t)
            }
        }
    }
}

fn other_axes(axis: usize) -> (usize, usize) {
    match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub seed: u64,
    /// Room extent along x, y, z; the room spans `[0, size]`.
    pub room: [f64; 3],
    pub primitives: Vec<Primitive>,
}

impl Scene {
    pub fn furniture(&self) -> impl Iterator<Item = (&[f64; 3], &[f64; 3])> {
        self.primitives.iter().filter_map(|p| match p {
            Primitive::Box { min, max } => Some((min, max)),
            _ => None,
        })
    }

    /// Nearest hit along a unit ray.
    pub fn cast(&self, o: &Point3<f64>, d: &Vector3<f64>) -> Option<f64> {
        self.primitives.iter().filter_map(|p| p.intersect(o, d)).min_by(|a, b| a.total_cmp(b))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneParams {
    pub room_xy: (f64, f64),
    pub room_height: (f64, f64),
    pub walls: (usize, usize),
    pub furniture: (usize, usize),
    pub box_footprint: (f64, f64),
    pub box_height: (f64, f64),
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            room_xy: (4.0, 7.0),
            room_height: (2.6, 3.0),
            walls: (2, 4),
            furniture: (3, 8),
            box_footprint: (0.4, 1.6),
            box_height: (0.4, 1.8),
        }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<()> {
        let range = |(a, b): (f64, f64), name: &str| {
            if !(a > 0.0 && a <= b && b.is_finite()) {
                return Err(Error::config(format!("invalid {name} range")));
            }
            Ok(())
        };
        range(self.room_xy, "room size")?;
        range(self.room_height, "room height")?;
        range(self.box_footprint, "box footprint")?;
        range(self.box_height, "box height")?;
        if self.walls.0 < 2 || self.walls.1 > 4 || self.walls.0 > self.walls.1 {
            return Err(Error::config("wall count range must lie within 2..=4"));
        }
        if self.furniture.0 > self.furniture.1 {
            return Err(Error::config("invalid furniture count range"));
        }
        if self.box_footprint.1 + 0.2 >= self.room_xy.0 {
            return Err(Error::config("furniture does not fit in the smallest room"));
        }
        Ok(())
    }
}

const PLACEMENT_ATTEMPTS: usize = 1000;
const WALL_MARGIN: f64 = 0.1;

fn uniform<R: Rng>(rng: &mut R, (a, b): (f64, f64)) -> f64 {
    if a == b { a } else { rng.random_range(a..b) }
}

/// Deterministic in `seed`.
pub fn generate_scene(seed: u64, params: &SceneParams) -> Result<Scene> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let room = [uniform(&mut rng, params.room_xy), uniform(&mut rng, params.room_xy), uniform(&mut rng, params.room_height)];
    let mut primitives = vec![Primitive::Rect { axis: 2, offset: 0.0, min: [0.0, 0.0], max: [room[0], room[1]] }];

    let n_walls = rng.random_range(params.walls.0..=params.walls.1);
    let mut sides = [(0usize, 0.0), (0, room[0]), (1, 0.0), (1, room[1])];
    sides.shuffle(&mut rng);
    let mut chosen: Vec<_> = sides[..n_walls].to_vec();
    chosen.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    for (axis, offset) in chosen {
        let (u, _) = other_axes(axis);
        primitives.push(Primitive::Rect { axis, offset, min: [0.0, 0.0], max: [room[u], room[2]] });
    }

    let n_boxes = rng.random_range(params.furniture.0..=params.furniture.1);
    let mut boxes: Vec<([f64; 3], [f64; 3])> = Vec::with_capacity(n_boxes);
    for k in 0..n_boxes {
        let mut placed = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let sx = uniform(&mut rng, params.box_footprint);
            let sy = uniform(&mut rng, params.box_footprint);
            let sz = uniform(&mut rng, params.box_height).min(room[2] - 0.1);
            let x_hi = room[0] - sx - WALL_MARGIN;
            let y_hi = room[1] - sy - WALL_MARGIN;
            if x_hi <= WALL_MARGIN || y_hi <= WALL_MARGIN {
                continue;
            }
            let x = rng.random_range(WALL_MARGIN..x_hi);
            let y = rng.random_range(WALL_MARGIN..y_hi);
            let cand = ([x, y, 0.0], [x + sx, y + sy, sz]);
            if boxes.iter().all(|b| !boxes_overlap(b, &cand)) {
                boxes.push(cand);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::contract(format!("could not place furniture box {k} after {PLACEMENT_ATTEMPTS} attempts")));
        }
    }
    primitives.extend(boxes.into_iter().map(|(min, max)| Primitive::Box { min, max }));
    Ok(Scene { seed, room, primitives })
}

/// Open-interior overlap of two boxes.
pub fn boxes_overlap(a: &([f64; 3], [f64; 3]), b: &([f64; 3], [f64; 3])) -> bool {
    (0..3).all(|i| a.0[i] < b.1[i] && b.0[i] < a.1[i])
}

pub fn ray_cast_scene(scene: &Scene, cam: &Camera, d_max: f64) -> DepthMap {
    ray_cast_scene_with(Exec::default(), scene, cam, d_max)
}

/// Exact nearest-hit range per pixel; misses and hits beyond `d_max` are holes.
pub fn ray_cast_scene_with(exec: Exec, scene: &Scene, cam: &Camera, d_max: f64) -> DepthMap {
    let w = cam.width;
    let rows = exec.map(cam.height, |row| {
        (0..w)
            .map(|col| {
                let (o, d) = cam.pixel_ray(col, row);
                match scene.cast(&o, &d) {
                    Some(t) if t <= d_max => t as f32,
                    _ => 0.0,
                }
            })
            .collect::<Vec<f32>>()
    });
    DepthMap { width: w, height: cam.height, data: rows.concat() }
}

/// Fraction thresholds used to reject input views blocked by a nearby wall.
const NEAR_RANGE: f32 = 0.5;
const MAX_NEAR_FRACTION: f64 = 0.8;
const MIN_VALID_FRACTION: f64 = 0.5;

fn acceptable_view(depth: &DepthMap) -> bool {
    let n = depth.len() as f64;
    let near = depth.data.iter().filter(|d| **d > 0.0 && **d < NEAR_RANGE).count() as f64;
    let valid = depth.valid_count() as f64;
    near / n <= MAX_NEAR_FRACTION && valid / n >= MIN_VALID_FRACTION
}

/// Picks an input camera inside the room at head height looking toward the
/// furniture, rejecting views occluded by walls.
pub fn sample_input_camera<R: Rng>(scene: &Scene, view: &ViewConfig, d_max: f64, rng: &mut R) -> Result<Camera> {
    let [rx, ry, _] = scene.room;
    for _ in 0..200 {
        let eye = Point3::new(rng.random_range(0.3..rx - 0.3), rng.random_range(0.3..ry - 0.3), rng.random_range(1.2..1.8));
        let inside_box = scene.furniture().any(|(mn, mx)| (0..2).all(|i| eye[i] >= mn[i] && eye[i] <= mx[i]));
        if inside_box {
            continue;
        }
        let target = Point3::new(
            rx / 2.0 + rng.random_range(-1.0..1.0),
            ry / 2.0 + rng.random_range(-1.0..1.0),
            rng.random_range(0.3..1.0),
        );
        let Ok(pose) = Pose::look_at(&eye, &target, &Vector3::z()) else {
            continue;
        };
        let cam = Camera::from_fov(view.width, view.height, view.vfov_deg, pose)?;
        if acceptable_view(&ray_cast_scene(scene, &cam, d_max)) {
            return Ok(cam);
        }
    }
    Err(Error::contract(format!("no acceptable input view found for scene {}", scene.seed)))
}

/// Perturbs a camera by a rotation of at most `max_deg` about a random axis
/// and a translation of at most `max_m`.
pub fn jitter_camera<R: Rng>(cam: &Camera, max_deg: f64, max_m: f64, rng: &mut R) -> Camera {
    if max_deg <= 0.0 && max_m <= 0.0 {
        return cam.clone();
    }
    let axis = Unit::new_normalize(random_unit(rng));
    let angle = if max_deg > 0.0 { rng.random_range(0.0..max_deg).to_radians() } else { 0.0 };
    let rj = Rotation3::from_axis_angle(&axis, angle).into_inner();
    let shift = if max_m > 0.0 { random_unit(rng) * rng.random_range(0.0..max_m) } else { Vector3::zeros() };
    let rotation = rj * cam.pose.rotation;
    let translation = rj * cam.pose.translation - rotation * shift;
    Camera { pose: Pose { rotation, translation }, ..cam.clone() }
}

fn random_unit<R: Rng>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JitterParams {
    pub max_deg: f64,
    pub max_m: f64,
}

impl Default for JitterParams {
    fn default() -> Self {
        JitterParams { max_deg: 15.0, max_m: 0.3 }
    }
}

/// Input view, jittered nearby views and ground truth at the action views.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub input_cam: Camera,
    pub input: DepthMap,
    pub nearby: Vec<(Camera, DepthMap)>,
    pub action_views: ActionViews,
    pub action_gt: Vec<DepthMap>,
}

#[allow(clippy::too_many_arguments)]
pub fn make_training_sample<R: Rng>(
    scene: &Scene,
    base_cam: &Camera,
    m: usize,
    jitter: &JitterParams,
    action_view: &ViewConfig,
    distance_scale: f64,
    d_max: f64,
    rng: &mut R,
) -> Result<TrainingSample> {
    if m == 0 {
        return Err(Error::contract("at least one nearby view is required"));
    }
    let input = ray_cast_scene(scene, base_cam, d_max);
    let nearby = (0..m)
        .map(|_| {
            let cam = jitter_camera(base_cam, jitter.max_deg, jitter.max_m, rng);
            let depth = ray_cast_scene(scene, &cam, d_max);
            (cam, depth)
        })
        .collect();
    let cloud = unproject(&input, base_cam, None)?;
    let sphere = bounding_sphere(&cloud)?;
    let action_views = sample_action_views(&sphere, distance_scale, action_view)?;
    let action_gt = action_views.iter().map(|c| ray_cast_scene(scene, c, d_max)).collect();
    Ok(TrainingSample { input_cam: base_cam.clone(), input, nearby, action_views, action_gt })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_in_seed() {
        let p = SceneParams::default();
        assert_eq!(generate_scene(11, &p).unwrap(), generate_scene(11, &p).unwrap());
        assert_ne!(generate_scene(11, &p).unwrap(), generate_scene(12, &p).unwrap());
    }

    #[test]
    fn counts_and_no_overlap() {
        let p = SceneParams::default();
        for seed in 0..30 {
            let s = generate_scene(seed, &p).unwrap();
            let boxes: Vec<_> = s.furniture().map(|(a, b)| (*a, *b)).collect();
            assert!((3..=8).contains(&boxes.len()));
            for i in 0..boxes.len() {
                for j in i + 1..boxes.len() {
                    assert!(!boxes_overlap(&boxes[i], &boxes[j]));
                }
            }
            let walls = s.primitives.iter().filter(|p| matches!(p, Primitive::Rect { axis, .. } if *axis < 2)).count();
            assert!((2..=4).contains(&walls));
        }
    }

    #[test]
    fn wall_facing_camera() {
        let scene = Scene {
            seed: 0,
            room: [4.0, 4.0, 3.0],
            primitives: vec![Primitive::Rect { axis: 0, offset: 4.0, min: [0.0, 0.0], max: [4.0, 3.0] }],
        };
        let pose = Pose::look_at(&Point3::new(1.5, 2.0, 1.5), &Point3::new(4.0, 2.0, 1.5), &Vector3::z()).unwrap();
        let cam = Camera::from_fov(9, 9, 60.0, pose).unwrap();
        let d = ray_cast_scene(&scene, &cam, 20.0);
        assert!((d.get(4, 4) - 2.5).abs() < 1e-6);
        let empty = Scene { primitives: vec![], ..scene };
        assert_eq!(ray_cast_scene(&empty, &cam, 20.0).valid_count(), 0);
    }

    #[test]
    fn zero_jitter_reproduces_base() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pose = Pose::look_at(&Point3::new(1.0, 1.0, 1.5), &Point3::new(3.0, 3.0, 0.5), &Vector3::z()).unwrap();
        let cam = Camera::from_fov(16, 16, 60.0, pose).unwrap();
        assert_eq!(jitter_camera(&cam, 0.0, 0.0, &mut rng), cam);
        let j = jitter_camera(&cam, 15.0, 0.3, &mut rng);
        assert!((j.center() - cam.center()).norm() <= 0.3 + 1e-12);
        assert!(Pose::new(j.pose.rotation, j.pose.translation).is_ok());
    }

    #[test]
    fn scene_json_roundtrip() {
        let s = generate_scene(3, &SceneParams::default()).unwrap();
        let txt = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<Scene>(&txt).unwrap(), s);
    }
}
