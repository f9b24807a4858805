//! On-disk formats: depth rasters (`DPM1`), voxel grids (`VXG1`), ASCII PLY
//! point clouds and key=value camera files. Every writer goes through
//! [`atomic_write`], so an interrupted run never leaves a truncated file
//! under the final name.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Point3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{Camera, DepthMap, PointCloud, Pose};
use crate::projection::VoxelGrid;

pub const DEPTH_MAGIC: &[u8; 4] = b"DPM1";
pub const VOXEL_MAGIC: &[u8; 4] = b"VXG1";

/// Writes to a temporary file in the destination directory, then renames.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Little-endian cursor over a byte slice.
struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    kind: &'static str,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], kind: &'static str, magic: &[u8; 4]) -> Result<Self> {
        if buf.len() < 4 || &buf[..4] != magic {
            return Err(Error::format(kind, "bad magic"));
        }
        Ok(Reader { buf, pos: 4, kind })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len());
        let end = end.ok_or_else(|| Error::format(self.kind, "unexpected end of data"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::format(self.kind, "size overflow"))?)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::format(self.kind, "trailing bytes"));
        }
        Ok(())
    }
}

pub fn encode_depth(depth: &DepthMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * depth.len());
    out.extend_from_slice(DEPTH_MAGIC);
    out.extend_from_slice(&(depth.width as u32).to_le_bytes());
    out.extend_from_slice(&(depth.height as u32).to_le_bytes());
    for v in &depth.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_depth(buf: &[u8]) -> Result<DepthMap> {
    let mut r = Reader::new(buf, "depth raster", DEPTH_MAGIC)?;
    let w = r.u32()? as usize;
    let h = r.u32()? as usize;
    let data = r.f32s(w.checked_mul(h).ok_or_else(|| Error::format("depth raster", "size overflow"))?)?;
    r.finish()?;
    DepthMap::from_data(w, h, data).map_err(|e| Error::format("depth raster", e.to_string()))
}

pub fn write_depth(path: &Path, depth: &DepthMap) -> Result<()> {
    atomic_write(path, &encode_depth(depth))
}

pub fn read_depth(path: &Path) -> Result<DepthMap> {
    decode_depth(&read_bytes(path)?)
}

pub fn encode_voxels(grid: &VoxelGrid) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + 4 * grid.len());
    out.extend_from_slice(VOXEL_MAGIC);
    for d in grid.dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for o in grid.origin.iter() {
        out.extend_from_slice(&(*o as f32).to_le_bytes());
    }
    out.extend_from_slice(&(grid.voxel_size as f32).to_le_bytes());
    for v in &grid.values {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_voxels(buf: &[u8]) -> Result<VoxelGrid> {
    let mut r = Reader::new(buf, "voxel grid", VOXEL_MAGIC)?;
    let dims = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
    let origin = Point3::new(r.f32()? as f64, r.f32()? as f64, r.f32()? as f64);
    let size = r.f32()? as f64;
    let n = dims
        .iter()
        .try_fold(1usize, |a, d| a.checked_mul(*d))
        .ok_or_else(|| Error::format("voxel grid", "size overflow"))?;
    let values = r.f32s(n)?.into_iter().map(f64::from).collect();
    r.finish()?;
    VoxelGrid::new(dims, origin, size, values).map_err(|e| Error::format("voxel grid", e.to_string()))
}

pub fn write_voxels(path: &Path, grid: &VoxelGrid) -> Result<()> {
    atomic_write(path, &encode_voxels(grid))
}

pub fn read_voxels(path: &Path) -> Result<VoxelGrid> {
    decode_voxels(&read_bytes(path)?)
}

/// ASCII PLY with float x, y, z and, when provenance is present, uchar iter
/// (saturating at 255).
pub fn encode_ply(cloud: &PointCloud) -> String {
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", cloud.len());
    s.push_str("property float x\nproperty float y\nproperty float z\n");
    if cloud.provenance.is_some() {
        s.push_str("property uchar iter\n");
    }
    s.push_str("end_header\n");
    for (i, p) in cloud.points.iter().enumerate() {
        let _ = write!(s, "{} {} {}", p.x as f32, p.y as f32, p.z as f32);
        if let Some(prov) = &cloud.provenance {
            let _ = write!(s, " {}", prov[i].min(255));
        }
        s.push('\n');
    }
    s
}

pub fn decode_ply(text: &str) -> Result<PointCloud> {
    let bad = |m: &str| Error::format("ply", m.to_string());
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(bad("missing ply signature"));
    }
    let mut count = None;
    let mut props: Vec<String> = Vec::new();
    let mut ascii = false;
    for line in lines.by_ref() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "ascii", _] => ascii = true,
            ["format", ..] => return Err(bad("only ascii PLY is supported")),
            ["element", "vertex", n] => count = Some(n.parse::<usize>().map_err(|_| bad("bad vertex count"))?),
            ["element", ..] => {}
            ["property", _ty, name] if count.is_some() => props.push(name.to_string()),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["end_header"] => break,
            ["property", ..] => {}
            _ => return Err(bad(&format!("unexpected header line '{line}'"))),
        }
    }
    if !ascii {
        return Err(bad("missing format line"));
    }
    let count = count.ok_or_else(|| bad("missing vertex element"))?;
    let col = |name: &str| props.iter().position(|p| p == name);
    let (xi, yi, zi) = match (col("x"), col("y"), col("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(bad("vertex needs x, y, z")),
    };
    let ii = col("iter");
    let mut points = Vec::with_capacity(count);
    let mut prov = ii.map(|_| Vec::with_capacity(count));
    for _ in 0..count {
        let line = lines.next().ok_or_else(|| bad("fewer vertices than declared"))?;
        let vals: Vec<&str> = line.split_whitespace().collect();
        if vals.len() != props.len() {
            return Err(bad("vertex row has the wrong number of fields"));
        }
        let f = |i: usize| vals[i].parse::<f32>().map(f64::from).map_err(|_| bad("bad coordinate"));
        points.push(Point3::new(f(xi)?, f(yi)?, f(zi)?));
        if let (Some(i), Some(p)) = (ii, prov.as_mut()) {
            p.push(vals[i].parse::<u32>().map_err(|_| bad("bad iter value"))?);
        }
    }
    let cloud = PointCloud { points, provenance: prov };
    cloud.validate().map_err(|e| Error::format("ply", e.to_string()))?;
    Ok(cloud)
}

pub fn write_ply(path: &Path, cloud: &PointCloud) -> Result<()> {
    atomic_write(path, encode_ply(cloud).as_bytes())
}

pub fn read_ply(path: &Path) -> Result<PointCloud> {
    decode_ply(&read_string(path)?)
}

const CAMERA_KEYS: [&str; 18] = [
    "fx", "fy", "cx", "cy", "width", "height", "r00", "r01", "r02", "r10", "r11", "r12", "r20", "r21", "r22", "tx",
    "ty", "tz",
];

pub fn encode_camera(cam: &Camera) -> String {
    let r = &cam.pose.rotation;
    let t = &cam.pose.translation;
    let vals = [
        cam.fx,
        cam.fy,
        cam.cx,
        cam.cy,
        cam.width as f64,
        cam.height as f64,
        r[(0, 0)],
        r[(0, 1)],
        r[(0, 2)],
        r[(1, 0)],
        r[(1, 1)],
        r[(1, 2)],
        r[(2, 0)],
        r[(2, 1)],
        r[(2, 2)],
        t.x,
        t.y,
        t.z,
    ];
    let mut s = String::new();
    for (k, v) in CAMERA_KEYS.iter().zip(vals) {
        let _ = writeln!(s, "{k}={v}");
    }
    s
}

pub fn decode_camera(text: &str) -> Result<Camera> {
    let mut vals = [f64::NAN; 18];
    let mut seen = [false; 18];
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::format("camera", format!("bad line '{line}'")))?;
        let i = CAMERA_KEYS
            .iter()
            .position(|c| *c == k.trim())
            .ok_or_else(|| Error::format("camera", format!("unknown key '{}'", k.trim())))?;
        vals[i] = v.trim().parse().map_err(|_| Error::format("camera", format!("bad value for '{k}'")))?;
        seen[i] = true;
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(Error::format("camera", format!("missing key '{}'", CAMERA_KEYS[i])));
    }
    let dim = |v: f64| -> Result<usize> {
        if v >= 1.0 && v.fract() == 0.0 {
            Ok(v as usize)
        } else {
            Err(Error::format("camera", "image size must be a positive integer"))
        }
    };
    let rotation = Matrix3::new(vals[6], vals[7], vals[8], vals[9], vals[10], vals[11], vals[12], vals[13], vals[14]);
    let pose = Pose::new(rotation, Vector3::new(vals[15], vals[16], vals[17]))
        .map_err(|e| Error::format("camera", e.to_string()))?;
    Camera::new(vals[0], vals[1], vals[2], vals[3], dim(vals[4])?, dim(vals[5])?, pose)
        .map_err(|e| Error::format("camera", e.to_string()))
}

pub fn write_camera(path: &Path, cam: &Camera) -> Result<()> {
    atomic_write(path, encode_camera(cam).as_bytes())
}

pub fn read_camera(path: &Path) -> Result<Camera> {
    decode_camera(&read_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_layout_is_exact() {
        let d = DepthMap::from_data(2, 1, vec![0.0, 1.5]).unwrap();
        let b = encode_depth(&d);
        assert_eq!(&b[..4], b"DPM1");
        assert_eq!(&b[4..12], &[2, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&b[16..20], &1.5f32.to_le_bytes());
        assert_eq!(decode_depth(&b).unwrap(), d);
        assert!(decode_depth(&b[..b.len() - 1]).is_err());
        assert!(decode_depth(b"DPM2\0\0\0\0\0\0\0\0").is_err());
    }

    #[test]
    fn voxel_layout() {
        let g = VoxelGrid::new([2, 1, 1], Point3::new(1.0, 2.0, 3.0), 0.5, vec![0.25, 1.0]).unwrap();
        let b = encode_voxels(&g);
        assert_eq!(b.len(), 4 + 12 + 16 + 8);
        assert_eq!(decode_voxels(&b).unwrap(), g);
    }

    #[test]
    fn ply_with_and_without_provenance() {
        let c = PointCloud::new(vec![Point3::new(1.0, 2.0, 3.0), Point3::new(-0.5, 0.25, 8.0)]);
        let back = decode_ply(&encode_ply(&c)).unwrap();
        assert_eq!(back, c);
        let c = PointCloud::with_provenance(c.points.clone(), 3);
        let txt = encode_ply(&c);
        assert!(txt.contains("property uchar iter"));
        assert_eq!(decode_ply(&txt).unwrap().provenance, Some(vec![3, 3]));
        assert!(decode_ply("ply\nformat binary_little_endian 1.0\nend_header\n").is_err());
    }

    #[test]
    fn camera_text_roundtrip() {
        let pose = Pose::look_at(&Point3::new(1.0, 2.0, 1.5), &Point3::new(3.0, 1.0, 0.2), &Vector3::z()).unwrap();
        let cam = Camera::from_fov(64, 48, 60.0, pose).unwrap();
        let back = decode_camera(&encode_camera(&cam)).unwrap();
        assert_eq!(back, cam);
        assert!(decode_camera("fx=1\n").is_err());
        assert!(decode_camera(&(encode_camera(&cam) + "bogus=1\n")).is_err());
    }
}
