//! Progressive completion: render the partial cloud from a chosen view,
//! inpaint its holes under the volume guide, lift the filled pixels back to
//! 3D and repeat until the hole area drops below the termination ratio.

use std::collections::HashSet;
use std::sync::Arc;

use nalgebra::Point3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    bounding_sphere, hole_mask, render_depth_with, sample_action_views, unproject, voxelize, ActionViews, Aabb,
    BoundingSphere, Camera, DepthMap, Mask, PointCloud, ViewConfig, ACTION_COUNT,
};
use crate::inpaint::{inpaint_with, InpaintRequest, Inpainter};
use crate::par::Exec;
use crate::planner::{
    argmax, encode_state, hole_area_per_view, reward_acc, reward_hole, step_reward, DqnAgent, QNetwork, StateEncoding,
    Transition,
};
use crate::projection::{escape_probability_map, project_expected_depth_with, VoxelGrid};
use crate::volume::{carve_freespace_with, complete_with, Completer, GridSpec, VolumeObservation};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub view: ViewConfig,
    pub distance_scale: f64,
    pub d_max: f64,
    pub splat_radius: usize,
    /// Fine voxel grid resolution per axis before completion.
    pub grid_dim: usize,
    /// Half side of the volume cube as a multiple of the sphere radius.
    pub grid_margin: f64,
    pub completer: Completer,
    pub inpainter: Inpainter,
    pub max_iters: usize,
    pub termination_ratio: f64,
    /// Voxel size for thinning newly added points; `None` keeps every point.
    pub dedup_voxel: Option<f64>,
    pub recomplete: bool,
    pub encode_res: usize,
    pub net_pool: usize,
    pub reward_weight: f64,
    /// Seeds the inpainter noise.
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            view: ViewConfig::default(),
            distance_scale: 2.0,
            d_max: 20.0,
            splat_radius: 1,
            grid_dim: 64,
            grid_margin: 1.1,
            completer: Completer::Diffusion { factor: 4, iters: 200 },
            inpainter: Inpainter::GuidedFill,
            max_iters: 20,
            termination_ratio: 0.05,
            dedup_voxel: None,
            recomplete: false,
            encode_res: 64,
            net_pool: 4,
            reward_weight: 0.7,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(m.to_string()));
        if self.view.width == 0 || self.view.height == 0 || !(self.view.vfov_deg > 0.0 && self.view.vfov_deg < 180.0) {
            return bad("view size must be positive and fov in (0, 180)");
        }
        if !(self.distance_scale >= 1.0) {
            return bad("distance_scale must be at least 1");
        }
        if !(self.d_max > 0.0) {
            return bad("d_max must be positive");
        }
        if self.grid_dim == 0 || !(self.grid_margin >= 1.0) {
            return bad("grid_dim must be positive and grid_margin at least 1");
        }
        if self.completer.factor() == 0 {
            return bad("completion pooling factor must be positive");
        }
        if !(self.termination_ratio > 0.0 && self.termination_ratio < 1.0) {
            return bad("termination_ratio must lie in (0, 1)");
        }
        if self.dedup_voxel.is_some_and(|r| !(r > 0.0)) {
            return bad("dedup voxel size must be positive");
        }
        if self.encode_res == 0 || self.net_pool == 0 || !self.encode_res.is_multiple_of(self.net_pool) {
            return bad("net_pool must divide encode_res");
        }
        if !(0.0..=1.0).contains(&self.reward_weight) {
            return bad("reward weight must lie in [0, 1]");
        }
        Ok(())
    }

    /// Flattened input width of the planner network.
    pub fn net_input_dim(&self) -> usize {
        let r = self.encode_res / self.net_pool;
        r * r
    }
}

/// What a policy sees before choosing the next view.
pub struct PolicyContext<'a> {
    /// Iterations already performed.
    pub iter: usize,
    pub cloud: &'a PointCloud,
    pub views: &'a ActionViews,
    pub sphere: &'a BoundingSphere,
    pub cfg: &'a PipelineConfig,
    pub exec: Exec,
}

impl PolicyContext<'_> {
    pub fn encode(&self) -> Result<StateEncoding> {
        encode_for(self.exec, self.cloud, self.views, self.sphere, self.cfg)
    }
}

/// Chooses the next view, or `None` to stop early.
pub trait Policy {
    fn next_view(&mut self, ctx: &PolicyContext) -> Result<Option<usize>>;
}

/// Visits `k` views at equal index spacing, equator first, then stops.
#[derive(Debug, Clone)]
pub struct UniformPolicy {
    order: Vec<usize>,
}

impl UniformPolicy {
    pub fn new(k: usize) -> Result<Self> {
        if !(1..=ACTION_COUNT).contains(&k) {
            return Err(Error::config(format!("uniform view count must be in 1..=20, got {k}")));
        }
        Ok(UniformPolicy { order: (0..k).map(|i| i * ACTION_COUNT / k).collect() })
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

impl Policy for UniformPolicy {
    fn next_view(&mut self, ctx: &PolicyContext) -> Result<Option<usize>> {
        Ok(self.order.get(ctx.iter).copied())
    }
}

#[derive(Debug, Clone)]
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        RandomPolicy { rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl Policy for RandomPolicy {
    fn next_view(&mut self, _ctx: &PolicyContext) -> Result<Option<usize>> {
        Ok(Some(self.rng.random_range(0..ACTION_COUNT)))
    }
}

/// Greedy action of a trained Q-network.
#[derive(Debug, Clone)]
pub struct DqnPolicy {
    pub net: QNetwork,
}

impl Policy for DqnPolicy {
    fn next_view(&mut self, ctx: &PolicyContext) -> Result<Option<usize>> {
        Ok(Some(argmax(&self.net.q_values(&ctx.encode()?)?)))
    }
}

fn encode_for(
    exec: Exec,
    cloud: &PointCloud,
    views: &ActionViews,
    sphere: &BoundingSphere,
    cfg: &PipelineConfig,
) -> Result<StateEncoding> {
    let norm = (cfg.distance_scale + 1.0) * sphere.radius;
    encode_state(exec, cloud, views, cfg.encode_res, cfg.splat_radius, norm)?.pooled(cfg.net_pool)
}

/// One completion iteration as written to the trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub view: usize,
    pub holes_before: usize,
    pub holes_after: usize,
    pub r_acc: Option<f64>,
    pub r_hole: Option<f64>,
    pub r_total: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionTrace {
    pub initial_holes: usize,
    pub records: Vec<IterationRecord>,
}

impl CompletionTrace {
    /// Remaining hole area over initial hole area after each iteration,
    /// starting with iteration 0.
    pub fn hole_ratios(&self) -> Vec<f64> {
        let a0 = self.initial_holes.max(1) as f64;
        std::iter::once(self.initial_holes as f64 / a0)
            .chain(self.records.iter().map(|r| r.holes_after as f64 / a0))
            .collect()
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Points of `cloud` added up to and including iteration `iter`.
pub fn cloud_at_iteration(cloud: &PointCloud, iter: u32) -> Result<PointCloud> {
    let prov = cloud.provenance.as_ref().ok_or_else(|| Error::contract("cloud carries no provenance"))?;
    let points = cloud.points.iter().zip(prov).filter(|(_, it)| **it <= iter).map(|(p, _)| *p).collect();
    Ok(PointCloud::new(points))
}

/// Union of the unprojected ground-truth action views.
pub fn gt_cloud(views: &[Camera], gt: &[DepthMap]) -> Result<PointCloud> {
    if views.len() != gt.len() {
        return Err(Error::contract("one ground-truth map per view is required"));
    }
    let mut all = PointCloud::default();
    for (cam, d) in views.iter().zip(gt) {
        all.points.extend(unproject(d, cam, None)?.points);
    }
    Ok(all)
}

/// Mutable state of one completion run.
struct Session<'a> {
    cfg: &'a PipelineConfig,
    exec: Exec,
    input: (&'a DepthMap, &'a Camera),
    gt: Option<&'a [DepthMap]>,
    sphere: BoundingSphere,
    views: ActionViews,
    volume: VoxelGrid,
    silhouettes: Vec<Mask>,
    cloud: PointCloud,
    per_view: Vec<usize>,
    area0: usize,
    occupied_cells: Option<HashSet<[i64; 3]>>,
    rng: ChaCha8Rng,
    iter: usize,
}

impl<'a> Session<'a> {
    fn new(
        d0: &'a DepthMap,
        cam0: &'a Camera,
        gt: Option<&'a [DepthMap]>,
        cfg: &'a PipelineConfig,
        exec: Exec,
    ) -> Result<Self> {
        cfg.validate()?;
        if d0.valid_count() == 0 {
            return Err(Error::contract("input depth has no valid pixels"));
        }
        let mut cloud = unproject(d0, cam0, None)?;
        cloud.provenance = Some(vec![0; cloud.len()]);
        let sphere = bounding_sphere(&cloud)?;
        if !(sphere.radius > 0.0) {
            return Err(Error::contract("input cloud is degenerate"));
        }
        let views = sample_action_views(&sphere, cfg.distance_scale, &cfg.view)?;
        if let Some(gt) = gt {
            if gt.len() != ACTION_COUNT || gt.iter().any(|g| !g.same_size(cfg.view.width, cfg.view.height)) {
                return Err(Error::contract("ground truth must hold one map per action view at the pipeline resolution"));
            }
        }
        if cfg.inpainter.needs_ground_truth() && gt.is_none() {
            return Err(Error::contract("the oracle inpainter needs ground-truth action views"));
        }
        let volume = build_volume(exec, &cloud, &[(d0, cam0)], &sphere, cfg)?;
        let silhouettes: Vec<Mask> = match gt {
            Some(gt) => gt.iter().map(crate::geometry::valid_mask).collect(),
            None => views
                .iter()
                .map(|cam| {
                    let esc = escape_probability_map(exec, &volume, cam, cfg.d_max);
                    Mask { width: cam.width, height: cam.height, bits: esc.iter().map(|e| *e < 0.5).collect() }
                })
                .collect(),
        };
        let per_view = hole_area_per_view(exec, &cloud, &views, &silhouettes, cfg.splat_radius)?;
        let area0 = per_view.iter().sum();
        let occupied_cells = cfg.dedup_voxel.map(|rho| cloud.points.iter().map(|p| cell_key(p, rho)).collect());
        Ok(Session {
            cfg,
            exec,
            input: (d0, cam0),
            gt,
            sphere,
            views,
            volume,
            silhouettes,
            cloud,
            per_view,
            area0,
            occupied_cells,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            iter: 0,
        })
    }

    fn area(&self) -> usize {
        self.per_view.iter().sum()
    }

    fn finished(&self) -> bool {
        self.area0 == 0 || (self.area() as f64) < self.cfg.termination_ratio * self.area0 as f64
    }

    fn context(&self) -> PolicyContext<'_> {
        PolicyContext {
            iter: self.iter,
            cloud: &self.cloud,
            views: &self.views,
            sphere: &self.sphere,
            cfg: self.cfg,
            exec: self.exec,
        }
    }

    fn encode(&self) -> Result<StateEncoding> {
        encode_for(self.exec, &self.cloud, &self.views, &self.sphere, self.cfg)
    }

    /// Runs one iteration on view `v`. Reward fields are filled when ground
    /// truth is present; `r_total` already applies the terminal rule.
    fn step(&mut self, v: usize) -> Result<IterationRecord> {
        if v >= ACTION_COUNT {
            return Err(Error::contract(format!("view index {v} out of range")));
        }
        let cfg = self.cfg;
        let exec = self.exec;
        let cam = &self.views[v];
        let holes_before = self.area();
        let rendered = render_depth_with(exec, &self.cloud, cam, cfg.splat_radius);
        let omega = hole_mask(&rendered).and(&self.silhouettes[v])?;

        let mut filled = rendered.clone();
        if !omega.is_clear() {
            let d_bg = self.volume.farthest_corner_distance(&cam.center()) + self.volume.voxel_size;
            let guide = project_expected_depth_with(exec, &self.volume, cam, d_bg)?;
            let req = InpaintRequest::new(&rendered, &guide, &omega)?;
            let gt_v = self.gt.map(|g| &g[v]);
            filled = inpaint_with(exec, &req, &cfg.inpainter, gt_v, &mut self.rng)?;
            filled.clip_far(cfg.d_max as f32);
        }
        self.iter += 1;
        let mut added = unproject(&filled, cam, Some(&omega))?;
        if let (Some(cells), Some(rho)) = (self.occupied_cells.as_mut(), cfg.dedup_voxel) {
            added.points.retain(|p| cells.insert(cell_key(p, rho)));
        }
        self.cloud.append(&added, self.iter as u32);
        if cfg.recomplete {
            self.volume = build_volume(exec, &self.cloud, &[self.input], &self.sphere, cfg)?;
        }
        self.per_view = hole_area_per_view(exec, &self.cloud, &self.views, &self.silhouettes, cfg.splat_radius)?;
        let holes_after = self.area();

        let (mut r_acc, mut r_hole, mut r_total) = (None, None, None);
        if let Some(gt) = self.gt {
            let acc = if omega.is_clear() { 0.0 } else { reward_acc(&filled, &gt[v], &omega, self.sphere.diameter())? };
            let hole = reward_hole(holes_before, holes_after, self.area0)?;
            r_acc = Some(acc);
            r_hole = Some(hole);
            r_total = Some(step_reward(acc, hole, cfg.reward_weight, self.finished()));
        }
        Ok(IterationRecord { iter: self.iter, view: v, holes_before, holes_after, r_acc, r_hole, r_total })
    }
}

fn cell_key(p: &Point3<f64>, rho: f64) -> [i64; 3] {
    [(p.x / rho).floor() as i64, (p.y / rho).floor() as i64, (p.z / rho).floor() as i64]
}

/// Voxelizes the cloud into a cube around the sphere, carves the observed
/// free space and completes it.
fn build_volume(
    exec: Exec,
    cloud: &PointCloud,
    observations: &[(&DepthMap, &Camera)],
    sphere: &BoundingSphere,
    cfg: &PipelineConfig,
) -> Result<VoxelGrid> {
    let n = cfg.grid_dim;
    let bounds = Aabb::cube(sphere.center, cfg.grid_margin * sphere.radius);
    let occupied = voxelize(cloud, [n; 3], &bounds)?;
    let spec = GridSpec::of(&occupied);
    let mut free = spec.grid(1.0)?;
    for (d, cam) in observations {
        let carved = carve_freespace_with(exec, d, cam, &spec)?;
        for (f, c) in free.values.iter_mut().zip(&carved.values) {
            *f = f.min(*c);
        }
    }
    complete_with(exec, &VolumeObservation::new(occupied, free)?, &cfg.completer)
}

/// Runs the completion loop with `policy` until the hole ratio drops below
/// the termination threshold, the policy stops or `max_iters` is reached.
/// `gt` enables rewards in the trace and is required by the oracle inpainter.
pub fn complete_scene(
    exec: Exec,
    d0: &DepthMap,
    cam0: &Camera,
    policy: &mut dyn Policy,
    gt: Option<&[DepthMap]>,
    cfg: &PipelineConfig,
) -> Result<(PointCloud, CompletionTrace)> {
    let mut s = Session::new(d0, cam0, gt, cfg, exec)?;
    let mut records = Vec::new();
    while !s.finished() && s.iter < cfg.max_iters {
        let Some(v) = policy.next_view(&s.context())? else {
            break;
        };
        records.push(s.step(v)?);
    }
    Ok((s.cloud, CompletionTrace { initial_holes: s.area0, records }))
}

/// Action views of the pipeline for a given input, as used for ground truth.
pub fn action_views_for(d0: &DepthMap, cam0: &Camera, cfg: &PipelineConfig) -> Result<ActionViews> {
    let sphere = bounding_sphere(&unproject(d0, cam0, None)?)?;
    sample_action_views(&sphere, cfg.distance_scale, &cfg.view)
}

/// How the agent picks actions during an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exploration {
    /// Uniform random views, used to pre-fill the replay buffer.
    Random,
    EpsilonGreedy,
}

#[derive(Debug, Clone)]
pub struct Episode {
    pub transitions: Vec<Transition>,
    pub trace: CompletionTrace,
    pub final_hole_ratio: f64,
}

/// Runs one training episode on a scene with ground truth and returns its
/// transitions. The agent is only used to act; storing and training are up
/// to the caller.
pub fn run_episode(
    exec: Exec,
    d0: &DepthMap,
    cam0: &Camera,
    gt: &[DepthMap],
    agent: &mut DqnAgent,
    explore: Exploration,
    cfg: &PipelineConfig,
) -> Result<Episode> {
    let mut s = Session::new(d0, cam0, Some(gt), cfg, exec)?;
    let mut transitions = Vec::new();
    let mut records = Vec::new();
    if !s.finished() {
        let mut state = Arc::new(s.encode()?);
        while s.iter < cfg.max_iters {
            let action = match explore {
                Exploration::Random => agent.random_action(),
                Exploration::EpsilonGreedy => agent.act(&state)?,
            };
            let rec = s.step(action)?;
            let reward = rec.r_total.expect("ground truth present");
            let next = if s.finished() { None } else { Some(Arc::new(s.encode()?)) };
            records.push(rec);
            transitions.push(Transition { state, action, reward, next_state: next.clone() });
            match next {
                Some(n) => state = n,
                None => break,
            }
        }
    }
    let trace = CompletionTrace { initial_holes: s.area0, records };
    let final_hole_ratio = *trace.hole_ratios().last().expect("at least the initial ratio");
    Ok(Episode { transitions, trace, final_hole_ratio })
}

/// Recomputes the hole area of a cloud over the pipeline's action views and
/// the given silhouettes.
pub fn hole_area_of(exec: Exec, cloud: &PointCloud, views: &ActionViews, silhouettes: &[Mask], cfg: &PipelineConfig) -> Result<usize> {
    Ok(hole_area_per_view(exec, cloud, views, silhouettes, cfg.splat_radius)?.iter().sum())
}
