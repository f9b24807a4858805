use crate::error::{Error, Result};
use crate::geometry::{render_depth_with, Camera, DepthMap, Mask, PointCloud};
use crate::par::Exec;

/// Negative mean absolute depth error over `mask`, in units of `depth_unit`.
pub fn reward_acc(pred: &DepthMap, gt: &DepthMap, mask: &Mask, depth_unit: f64) -> Result<f64> {
    if !pred.same_size(gt.width, gt.height) || !pred.same_size(mask.width, mask.height) {
        return Err(Error::contract("reward inputs differ in size"));
    }
    if !(depth_unit > 0.0) {
        return Err(Error::contract("depth unit must be positive"));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, bit) in mask.bits.iter().enumerate() {
        if *bit {
            sum += (pred.data[i] as f64 - gt.data[i] as f64).abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::contract("accuracy reward needs a non-empty hole mask"));
    }
    Ok(-sum / n as f64 / depth_unit)
}

/// Hole pixels inside each view's silhouette after rendering `cloud`.
pub fn hole_area_per_view(
    exec: Exec,
    cloud: &PointCloud,
    views: &[Camera],
    silhouettes: &[Mask],
    splat_radius: usize,
) -> Result<Vec<usize>> {
    if views.len() != silhouettes.len() {
        return Err(Error::contract("one silhouette per view is required"));
    }
    views
        .iter()
        .zip(silhouettes)
        .map(|(cam, sil)| {
            if !sil.same_size(cam.width, cam.height) {
                return Err(Error::contract("silhouette size differs from view size"));
            }
            if sil.is_clear() {
                return Ok(0);
            }
            let d = render_depth_with(exec, cloud, cam, splat_radius);
            Ok(sil.bits.iter().zip(&d.data).filter(|(s, z)| **s && **z <= 0.0).count())
        })
        .collect()
}

pub fn hole_area(
    exec: Exec,
    cloud: &PointCloud,
    views: &[Camera],
    silhouettes: &[Mask],
    splat_radius: usize,
) -> Result<usize> {
    Ok(hole_area_per_view(exec, cloud, views, silhouettes, splat_radius)?.iter().sum())
}

/// `(area_prev - area_new) / area_0 - 1`.
pub fn reward_hole(area_prev: usize, area_new: usize, area_0: usize) -> Result<f64> {
    if area_0 == 0 {
        return Err(Error::contract("initial hole area is zero"));
    }
    Ok((area_prev as f64 - area_new as f64) / area_0 as f64 - 1.0)
}

pub fn reward_total(r_acc: f64, r_hole: f64, w: f64) -> f64 {
    w * r_acc + (1.0 - w) * r_hole
}

/// Reward stored in a transition: terminal steps carry 0.
pub fn step_reward(r_acc: f64, r_hole: f64, w: f64, terminal: bool) -> f64 {
    if terminal {
        0.0
    } else {
        reward_total(r_acc, r_hole, w)
    }
}
