//! Volume-guided depth inpainting.
//!
//! An [`InpaintRequest`] carries the rendered view with holes, the dense depth
//! guide projected from the completed volume, and the hole set to fill. The
//! built-in inpainters fill each 4-connected hole component independently;
//! pixels outside the mask are never touched.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::{DepthMap, Mask};
use crate::par::Exec;

#[derive(Debug, Clone)]
pub struct InpaintRequest<'a> {
    pub observed: &'a DepthMap,
    pub guide: &'a DepthMap,
    pub mask: &'a Mask,
}

impl<'a> InpaintRequest<'a> {
    pub fn new(observed: &'a DepthMap, guide: &'a DepthMap, mask: &'a Mask) -> Result<Self> {
        let (w, h) = (observed.width, observed.height);
        if !guide.same_size(w, h) || mask.width != w || mask.height != h {
            return Err(Error::contract("inpaint inputs differ in size"));
        }
        if guide.data.iter().any(|g| !(*g > 0.0)) {
            return Err(Error::contract("guide must be dense"));
        }
        if mask.bits.iter().zip(&observed.data).any(|(m, d)| *m && *d != 0.0) {
            return Err(Error::contract("mask must lie inside the observed holes"));
        }
        Ok(InpaintRequest { observed, guide, mask })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Inpainter {
    /// Guide plus the median boundary offset of each hole.
    GuidedFill,
    /// Solves `lap(D) = lambda * lap(guide)` inside each hole with the observed
    /// boundary ring as Dirichlet data.
    LaplacianFill { lambda: f64, tol: f64, max_sweeps: usize },
    /// Ground truth plus Gaussian noise; needs the true view.
    Oracle { sigma: f64 },
}

impl Inpainter {
    pub fn laplacian(lambda: f64) -> Self {
        Inpainter::LaplacianFill { lambda, tol: 1e-6, max_sweeps: 100_000 }
    }

    pub fn parse(id: &str, lambda: f64, sigma: f64) -> Result<Self> {
        match id {
            "guided" | "guided_fill" => Ok(Inpainter::GuidedFill),
            "laplacian" | "laplacian_fill" => Ok(Inpainter::laplacian(lambda)),
            "oracle" => Ok(Inpainter::Oracle { sigma }),
            other => Err(Error::config(format!("unknown inpainter '{other}'"))),
        }
    }

    pub fn needs_ground_truth(&self) -> bool {
        matches!(self, Inpainter::Oracle { .. })
    }
}

/// A 4-connected hole component and its valid boundary ring.
#[derive(Debug, Clone)]
struct Component {
    pixels: Vec<usize>,
    ring: Vec<usize>,
}

fn components(mask: &Mask, observed: &DepthMap) -> Vec<Component> {
    let (w, h) = (mask.width, mask.height);
    let mut label = vec![usize::MAX; w * h];
    let mut ring_seen = vec![usize::MAX; w * h];
    let mut out = Vec::new();
    for start in 0..w * h {
        if !mask.bits[start] || label[start] != usize::MAX {
            continue;
        }
        let id = out.len();
        let mut comp = Component { pixels: Vec::new(), ring: Vec::new() };
        let mut stack = vec![start];
        label[start] = id;
        while let Some(p) = stack.pop() {
            comp.pixels.push(p);
            for q in neighbors4(p, w, h).into_iter().flatten() {
                if mask.bits[q] {
                    if label[q] == usize::MAX {
                        label[q] = id;
                        stack.push(q);
                    }
                } else if observed.data[q] > 0.0 && ring_seen[q] != id {
                    ring_seen[q] = id;
                    comp.ring.push(q);
                }
            }
        }
        comp.pixels.sort_unstable();
        comp.ring.sort_unstable();
        out.push(comp);
    }
    out
}

#[inline]
fn neighbors4(p: usize, w: usize, h: usize) -> [Option<usize>; 4] {
    let (x, y) = (p % w, p / w);
    [
        (x > 0).then(|| p - 1),
        (x + 1 < w).then(|| p + 1),
        (y > 0).then(|| p - w),
        (y + 1 < h).then(|| p + w),
    ]
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

fn guided_values(req: &InpaintRequest, comp: &Component) -> Vec<f64> {
    let delta = median(comp.ring.iter().map(|&q| req.observed.data[q] as f64 - req.guide.data[q] as f64).collect())
        .unwrap_or(0.0);
    comp.pixels.iter().map(|&p| req.guide.data[p] as f64 + delta).collect()
}

fn laplacian_values(req: &InpaintRequest, comp: &Component, lambda: f64, tol: f64, max_sweeps: usize) -> Vec<f64> {
    let mut u = guided_values(req, comp);
    if comp.ring.is_empty() {
        // no Dirichlet data: the system is singular, keep the guide
        return comp.pixels.iter().map(|&p| req.guide.data[p] as f64).collect();
    }
    let (w, h) = (req.observed.width, req.observed.height);
    let slot: std::collections::HashMap<usize, usize> = comp.pixels.iter().enumerate().map(|(i, &p)| (p, i)).collect();
    enum Nb {
        Unknown(usize),
        Fixed(f64),
    }
    struct Row {
        nbs: Vec<Nb>,
        rhs: f64,
    }
    let g = |p: usize| req.guide.data[p] as f64;
    let rows: Vec<Row> = comp
        .pixels
        .iter()
        .map(|&p| {
            let mut nbs = Vec::with_capacity(4);
            let mut rhs = 0.0;
            for q in neighbors4(p, w, h).into_iter().flatten() {
                if let Some(&j) = slot.get(&q) {
                    nbs.push(Nb::Unknown(j));
                } else if req.observed.data[q] > 0.0 {
                    nbs.push(Nb::Fixed(req.observed.data[q] as f64));
                } else {
                    continue;
                }
                rhs += lambda * (g(q) - g(p));
            }
            Row { nbs, rhs }
        })
        .collect();

    let (mut x0, mut x1, mut y0, mut y1) = (usize::MAX, 0, usize::MAX, 0);
    for &p in &comp.pixels {
        x0 = x0.min(p % w);
        x1 = x1.max(p % w);
        y0 = y0.min(p / w);
        y1 = y1.max(p / w);
    }
    let span = (x1 - x0).max(y1 - y0) + 2;
    let omega = 2.0 / (1.0 + (std::f64::consts::PI / span as f64).sin());

    for _ in 0..max_sweeps {
        let mut worst: f64 = 0.0;
        for (i, row) in rows.iter().enumerate() {
            if row.nbs.is_empty() {
                continue;
            }
            let mut s = 0.0;
            for nb in &row.nbs {
                s += match *nb {
                    Nb::Unknown(j) => u[j],
                    Nb::Fixed(v) => v,
                };
            }
            let target = (s - row.rhs) / row.nbs.len() as f64;
            let r = target - u[i];
            worst = worst.max(r.abs());
            u[i] += omega * r;
        }
        if worst < tol {
            break;
        }
    }
    u
}

pub fn inpaint<R: Rng>(req: &InpaintRequest, method: &Inpainter, gt: Option<&DepthMap>, rng: &mut R) -> Result<DepthMap> {
    inpaint_with(Exec::default(), req, method, gt, rng)
}

/// Fills the masked pixels of `req.observed`. Filled values that come out
/// non-positive are left as holes.
pub fn inpaint_with<R: Rng>(
    exec: Exec,
    req: &InpaintRequest,
    method: &Inpainter,
    gt: Option<&DepthMap>,
    rng: &mut R,
) -> Result<DepthMap> {
    let mut out = req.observed.clone();
    if req.mask.is_clear() {
        return Ok(out);
    }
    let write = |out: &mut DepthMap, p: usize, v: f64| {
        out.data[p] = if v > 0.0 && v.is_finite() { v as f32 } else { 0.0 };
    };
    match *method {
        Inpainter::Oracle { sigma } => {
            let gt = gt.ok_or_else(|| Error::contract("oracle inpainter needs ground truth"))?;
            if !gt.same_size(out.width, out.height) {
                return Err(Error::contract("ground truth size differs"));
            }
            let noise = Normal::new(0.0, sigma.max(0.0)).map_err(|e| Error::contract(e.to_string()))?;
            for p in 0..out.len() {
                if !req.mask.bits[p] || gt.data[p] <= 0.0 {
                    continue;
                }
                let n = if sigma > 0.0 { noise.sample(rng) } else { 0.0 };
                write(&mut out, p, gt.data[p] as f64 + n);
            }
        }
        Inpainter::GuidedFill | Inpainter::LaplacianFill { .. } => {
            let comps = components(req.mask, req.observed);
            let filled = exec.map_slice(&comps, |c| match *method {
                Inpainter::LaplacianFill { lambda, tol, max_sweeps } => laplacian_values(req, c, lambda, tol, max_sweeps),
                _ => guided_values(req, c),
            });
            for (c, vals) in comps.iter().zip(filled) {
                for (&p, v) in c.pixels.iter().zip(vals) {
                    write(&mut out, p, v);
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InpaintScores {
    pub l1_omega: f64,
    pub psnr: f64,
    pub ssim: f64,
}

/// Reported PSNR for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;

/// Mean absolute error over the mask.
pub fn l1_omega(pred: &DepthMap, gt: &DepthMap, mask: &Mask) -> Result<f64> {
    if !pred.same_size(gt.width, gt.height) || mask.width != gt.width || mask.height != gt.height {
        return Err(Error::contract("metric inputs differ in size"));
    }
    let n = mask.count();
    if n == 0 {
        return Err(Error::contract("L1 over an empty hole set is undefined"));
    }
    let mut sum = 0.0;
    for p in 0..gt.len() {
        if mask.bits[p] {
            sum += (pred.data[p] as f64 - gt.data[p] as f64).abs();
        }
    }
    Ok(sum / n as f64)
}

/// PSNR over pixels valid in both maps, with peak `d_max`, capped at 99 dB.
pub fn psnr(pred: &DepthMap, gt: &DepthMap, d_max: f64) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (a, b) in pred.data.iter().zip(&gt.data) {
        if *a > 0.0 && *b > 0.0 {
            let e = *a as f64 - *b as f64;
            sum += e * e;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::contract("no pixel is valid in both maps"));
    }
    let mse = sum / n as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (d_max * d_max / mse).log10()).min(PSNR_CAP_DB))
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let x = i as f64 - c;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Valid-mode separable Gaussian filter.
fn filter_valid(img: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            let mut s = 0.0;
            for (i, kv) in k.iter().enumerate() {
                s += kv * img[y * w + x + i];
            }
            tmp[y * ow + x] = s;
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut s = 0.0;
            for (i, kv) in k.iter().enumerate() {
                s += kv * tmp[(y + i) * ow + x];
            }
            out[y * ow + x] = s;
        }
    }
    out
}

/// Mean SSIM over all fully-inside 11x11 Gaussian windows (sigma 1.5),
/// constants `(0.01 L)^2`, `(0.03 L)^2` with `L = d_max`. Holes count as 0.
pub fn ssim(pred: &DepthMap, gt: &DepthMap, d_max: f64) -> Result<f64> {
    let (w, h) = (gt.width, gt.height);
    if !pred.same_size(w, h) {
        return Err(Error::contract("metric inputs differ in size"));
    }
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::contract("image smaller than the SSIM window"));
    }
    let k = gaussian_kernel();
    let a: Vec<f64> = pred.data.iter().map(|v| *v as f64).collect();
    let b: Vec<f64> = gt.data.iter().map(|v| *v as f64).collect();
    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
    let [ma, mb, saa, sbb, sab] = [&a, &b, &aa, &bb, &ab].map(|img| filter_valid(img, w, h, &k));
    let c1 = (0.01 * d_max).powi(2);
    let c2 = (0.03 * d_max).powi(2);
    let mut total = 0.0;
    for i in 0..ma.len() {
        let (mx, my) = (ma[i], mb[i]);
        let vx = saa[i] - mx * mx;
        let vy = sbb[i] - my * my;
        let cxy = sab[i] - mx * my;
        total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
    Ok(total / ma.len() as f64)
}

pub fn inpaint_metrics(pred: &DepthMap, gt: &DepthMap, mask: &Mask, d_max: f64) -> Result<InpaintScores> {
    Ok(InpaintScores { l1_omega: l1_omega(pred, gt, mask)?, psnr: psnr(pred, gt, d_max)?, ssim: ssim(pred, gt, d_max)? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::hole_mask;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn single_hole_takes_neighbor_mean() {
        #[rustfmt::skip]
        let obs = DepthMap::from_data(3, 3, vec![
            5.0, 1.0, 5.0,
            1.0, 0.0, 3.0,
            5.0, 3.0, 5.0,
        ]).unwrap();
        let guide = DepthMap::from_data(3, 3, vec![2.0; 9]).unwrap();
        let mask = hole_mask(&obs);
        let req = InpaintRequest::new(&obs, &guide, &mask).unwrap();
        let out = inpaint(&req, &Inpainter::laplacian(0.0), None, &mut rng()).unwrap();
        assert!((out.get(1, 1) - 2.0).abs() < 1e-6);
    }

    #[test]
    fn empty_mask_returns_observed() {
        let obs = DepthMap::from_data(2, 2, vec![1.0, 0.0, 2.0, 3.0]).unwrap();
        let guide = DepthMap::from_data(2, 2, vec![4.0; 4]).unwrap();
        let mask = Mask::empty(2, 2);
        let req = InpaintRequest::new(&obs, &guide, &mask).unwrap();
        for m in [Inpainter::GuidedFill, Inpainter::laplacian(1.0)] {
            assert_eq!(inpaint(&req, &m, None, &mut rng()).unwrap(), obs);
        }
    }

    #[test]
    fn guided_fill_copies_consistent_guide() {
        let guide = DepthMap::from_data(4, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let obs = DepthMap::from_data(4, 1, vec![1.0, 0.0, 0.0, 4.0]).unwrap();
        let mask = hole_mask(&obs);
        let req = InpaintRequest::new(&obs, &guide, &mask).unwrap();
        let out = inpaint(&req, &Inpainter::GuidedFill, None, &mut rng()).unwrap();
        assert_eq!(out.data, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn ringless_hole_falls_back_to_guide() {
        let guide = DepthMap::from_data(2, 1, vec![1.5, 2.5]).unwrap();
        let obs = DepthMap::holes(2, 1);
        let mask = hole_mask(&obs);
        let req = InpaintRequest::new(&obs, &guide, &mask).unwrap();
        for m in [Inpainter::GuidedFill, Inpainter::laplacian(1.0)] {
            assert_eq!(inpaint(&req, &m, None, &mut rng()).unwrap().data, vec![1.5, 2.5]);
        }
    }

    #[test]
    fn oracle_requires_ground_truth() {
        let obs = DepthMap::from_data(2, 1, vec![1.0, 0.0]).unwrap();
        let guide = DepthMap::from_data(2, 1, vec![1.0, 1.0]).unwrap();
        let mask = hole_mask(&obs);
        let req = InpaintRequest::new(&obs, &guide, &mask).unwrap();
        assert!(inpaint(&req, &Inpainter::Oracle { sigma: 0.0 }, None, &mut rng()).is_err());
        let gt = DepthMap::from_data(2, 1, vec![1.0, 7.0]).unwrap();
        let out = inpaint(&req, &Inpainter::Oracle { sigma: 0.0 }, Some(&gt), &mut rng()).unwrap();
        assert_eq!(out.data, vec![1.0, 7.0]);
    }

    #[test]
    fn request_validation() {
        let obs = DepthMap::from_data(2, 1, vec![1.0, 0.0]).unwrap();
        let sparse = DepthMap::from_data(2, 1, vec![1.0, 0.0]).unwrap();
        let mask = hole_mask(&obs);
        assert!(InpaintRequest::new(&obs, &sparse, &mask).is_err());
        let guide = DepthMap::from_data(2, 1, vec![1.0, 1.0]).unwrap();
        let bad = Mask { width: 2, height: 1, bits: vec![true, true] };
        assert!(InpaintRequest::new(&obs, &guide, &bad).is_err());
        assert!(Inpainter::parse("unet", 1.0, 0.0).is_err());
    }

    #[test]
    fn metrics_identical_and_offset() {
        let gt = DepthMap::from_data(12, 12, (0..144).map(|i| 1.0 + (i % 7) as f32 * 0.25).collect()).unwrap();
        let mask = Mask { width: 12, height: 12, bits: (0..144).map(|i| i % 3 == 0).collect() };
        let s = inpaint_metrics(&gt, &gt, &mask, 10.0).unwrap();
        assert_eq!(s.l1_omega, 0.0);
        assert_eq!(s.psnr, PSNR_CAP_DB);
        assert!((s.ssim - 1.0).abs() < 1e-12);
        let shifted = DepthMap { data: gt.data.iter().map(|v| v + 0.1).collect(), ..gt.clone() };
        assert!((l1_omega(&shifted, &gt, &mask).unwrap() - 0.1).abs() < 1e-6);
        assert!(l1_omega(&gt, &gt, &Mask::empty(12, 12)).is_err());
    }
}
