//! On-disk dataset layout, one directory per scene:
//!
//! ```text
//! <root>/scene_0000/scene.json
//!                  /input.dpm, cam_input.txt
//!                  /nearby_<k>.dpm, nearby_<k>_cam.txt
//!                  /action_<j>.dpm, action_<j>_cam.txt
//! ```

use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::geometry::{Camera, DepthMap, ACTION_COUNT};
use crate::io::{atomic_write, read_camera, read_depth, read_string, write_camera, write_depth};
use crate::par::Exec;
use crate::scenegen::{generate_scene, make_training_sample, sample_input_camera, Scene, TrainingSample};

const SCENE_RETRIES: usize = 32;

pub fn scene_id(i: usize) -> String {
    format!("scene_{i:04}")
}

/// One scene as stored on disk.
#[derive(Debug, Clone)]
pub struct SceneRecord {
    pub id: String,
    pub scene: Scene,
    pub input_cam: Camera,
    pub input: DepthMap,
    pub nearby: Vec<(Camera, DepthMap)>,
    pub action_views: Vec<Camera>,
    pub action_gt: Vec<DepthMap>,
}

pub fn write_scene(dir: &Path, scene: &Scene, sample: &TrainingSample) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    atomic_write(&dir.join("scene.json"), serde_json::to_string_pretty(scene)?.as_bytes())?;
    write_depth(&dir.join("input.dpm"), &sample.input)?;
    write_camera(&dir.join("cam_input.txt"), &sample.input_cam)?;
    for (k, (cam, depth)) in sample.nearby.iter().enumerate() {
        write_depth(&dir.join(format!("nearby_{k}.dpm")), depth)?;
        write_camera(&dir.join(format!("nearby_{k}_cam.txt")), cam)?;
    }
    for (j, (cam, depth)) in sample.action_views.iter().zip(&sample.action_gt).enumerate() {
        write_depth(&dir.join(format!("action_{j}.dpm")), depth)?;
        write_camera(&dir.join(format!("action_{j}_cam.txt")), cam)?;
    }
    Ok(())
}

pub fn read_scene(dir: &Path) -> Result<SceneRecord> {
    let id = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
    let scene: Scene = serde_json::from_str(&read_string(&dir.join("scene.json"))?)?;
    let input = read_depth(&dir.join("input.dpm"))?;
    let input_cam = read_camera(&dir.join("cam_input.txt"))?;
    let mut nearby = Vec::new();
    for k in 0.. {
        let d = dir.join(format!("nearby_{k}.dpm"));
        if !d.exists() {
            break;
        }
        nearby.push((read_camera(&dir.join(format!("nearby_{k}_cam.txt")))?, read_depth(&d)?));
    }
    let mut action_views = Vec::with_capacity(ACTION_COUNT);
    let mut action_gt = Vec::with_capacity(ACTION_COUNT);
    for j in 0..ACTION_COUNT {
        action_views.push(read_camera(&dir.join(format!("action_{j}_cam.txt")))?);
        action_gt.push(read_depth(&dir.join(format!("action_{j}.dpm")))?);
    }
    Ok(SceneRecord { id, scene, input_cam, input, nearby, action_views, action_gt })
}

/// Scene directories under `root`, sorted by name.
pub fn list_scenes(root: &Path) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut dirs = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let path = entry.path();
        if path.is_dir() && entry.file_name().to_string_lossy().starts_with("scene_") {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

/// Builds scene `i` from its own RNG stream, retrying with fresh draws when
/// furniture placement or input-view sampling fails.
pub fn build_scene(cfg: &Config, i: usize) -> Result<(Scene, TrainingSample)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(i as u64);
    let p = &cfg.pipeline;
    let mut last = None;
    for _ in 0..SCENE_RETRIES {
        let scene = match generate_scene(rng.next_u64(), &cfg.dataset.scene) {
            Ok(s) => s,
            Err(e) => {
                last = Some(e);
                continue;
            }
        };
        let cam = match sample_input_camera(&scene, &p.view, p.d_max, &mut rng) {
            Ok(c) => c,
            Err(e) => {
                last = Some(e);
                continue;
            }
        };
        let sample = make_training_sample(
            &scene,
            &cam,
            cfg.dataset.nearby_views,
            &cfg.dataset.jitter,
            &p.view,
            p.distance_scale,
            p.d_max,
            &mut rng,
        )?;
        return Ok((scene, sample));
    }
    Err(last.unwrap_or_else(|| Error::contract("scene generation failed")))
}

/// Generates `n_scenes` scenes into `root`. Scenes are built in parallel and
/// written in index order.
pub fn generate_dataset(exec: Exec, cfg: &Config, root: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let built = exec.map(cfg.dataset.n_scenes, |i| build_scene(cfg, i));
    let mut dirs = Vec::with_capacity(built.len());
    for (i, b) in built.into_iter().enumerate() {
        let (scene, sample) = b?;
        let dir = root.join(scene_id(i));
        write_scene(&dir, &scene, &sample)?;
        dirs.push(dir);
    }
    Ok(dirs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_and_read_back() {
        let cfg = Config::parse("width = 24\nheight = 24\nnearby_views = 2\nn_scenes = 1\nn_train = 1").unwrap();
        let (scene, sample) = build_scene(&cfg, 0).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join(scene_id(0));
        write_scene(&dir, &scene, &sample).unwrap();
        let rec = read_scene(&dir).unwrap();
        assert_eq!(rec.id, "scene_0000");
        assert_eq!(rec.scene, scene);
        assert_eq!(rec.input, sample.input);
        assert_eq!(rec.nearby.len(), 2);
        assert_eq!(rec.action_gt, sample.action_gt);
        assert_eq!(rec.action_views, sample.action_views.to_vec());
        assert_eq!(list_scenes(tmp.path()).unwrap(), vec![dir]);
    }
}
