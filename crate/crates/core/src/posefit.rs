//! Mesh rasterization and silhouette-based pose fitting.
//!
//! Poses are a translation plus an axis-angle rotation (angle < pi). The
//! rasterizer is a z-buffer over projected triangles with perspective-correct
//! attribute interpolation; it backs silhouette rendering, ground-truth
//! normal rendering, and the mesh surface in the scene renderer. Pose fitting
//! minimizes the mean squared silhouette difference with a derivative-free
//! coordinate search.

use nalgebra::{Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::CameraModel;
use crate::image::Mask;
use crate::mesh::TriMesh;
use crate::photostereo::NormalMap;

/// Rigid pose: rotate by the axis-angle vector `r`, then translate by `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseParams {
    pub t: Vector3<f64>,
    pub r: Vector3<f64>,
}

impl PoseParams {
    pub fn identity() -> PoseParams {
        PoseParams {
            t: Vector3::zeros(),
            r: Vector3::zeros(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t.iter().all(|v| v.is_finite()) && self.r.iter().all(|v| v.is_finite())) {
            return Err(Error::argument("pose parameters must be finite"));
        }
        if self.r.norm() >= std::f64::consts::PI {
            return Err(Error::argument("rotation angle must be below pi radians"));
        }
        Ok(())
    }

    pub fn rotation(&self) -> Rotation3<f64> {
        Rotation3::new(self.r)
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * p + self.t
    }
}

/// Nearest-surface raster of a mesh: coverage, hit depth (camera z), and
/// interpolated unit normals. Depth is infinite and normals are zero where
/// nothing was hit.
#[derive(Debug, Clone)]
pub struct RasterOutput {
    pub mask: Mask,
    pub depth: Vec<f64>,
    pub normals: Vec<Vector3<f64>>,
}

#[inline]
fn edge(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
}

/// Z-buffer rasterization. A pixel is covered when its center falls inside a
/// projected triangle whose vertices all sit in front of the camera; depth
/// ties keep the lowest triangle index. Triangles crossing the image plane
/// are skipped rather than clipped.
pub fn rasterize(mesh: &TriMesh, pose: &PoseParams, camera: &CameraModel) -> RasterOutput {
    let (w, h) = (camera.width, camera.height);
    let rot = pose.rotation();
    let verts: Vec<Vector3<f64>> = mesh.vertices.iter().map(|v| rot * v + pose.t).collect();
    let vnormals: Vec<Vector3<f64>> = mesh.vertex_normals.iter().map(|n| rot * n).collect();

    let mut mask = Mask::zeros(w, h);
    let mut depth = vec![f64::INFINITY; w * h];
    let mut normals = vec![Vector3::zeros(); w * h];

    for tri in &mesh.triangles {
        let [i0, i1, i2] = *tri;
        let (v0, v1, v2) = (&verts[i0], &verts[i1], &verts[i2]);
        if v0.z <= 1e-6 || v1.z <= 1e-6 || v2.z <= 1e-6 {
            continue;
        }
        let project = |v: &Vector3<f64>| {
            (
                camera.fx * v.x / v.z + camera.cx,
                camera.fy * v.y / v.z + camera.cy,
            )
        };
        let (p0, p1, p2) = (project(v0), project(v1), project(v2));
        let area = edge(p0, p1, p2);
        if area.abs() < 1e-18 {
            continue;
        }
        let xs = [p0.0, p1.0, p2.0];
        let ys = [p0.1, p1.1, p2.1];
        let x_min = xs
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
            .ceil()
            .max(0.0) as usize;
        let x_max = xs
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
            .floor()
            .min((w - 1) as f64);
        let y_min = ys
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
            .ceil()
            .max(0.0) as usize;
        let y_max = ys
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
            .floor()
            .min((h - 1) as f64);
        if x_max < 0.0 || y_max < 0.0 || x_min >= w || y_min >= h {
            continue;
        }
        let (x_max, y_max) = (x_max as usize, y_max as usize);

        for y in y_min..=y_max {
            for x in x_min..=x_max {
                let pt = (x as f64, y as f64);
                let l0 = edge(p1, p2, pt) / area;
                let l1 = edge(p2, p0, pt) / area;
                let l2 = edge(p0, p1, pt) / area;
                if l0 < 0.0 || l1 < 0.0 || l2 < 0.0 {
                    continue;
                }
                let inv_z = l0 / v0.z + l1 / v1.z + l2 / v2.z;
                let z = 1.0 / inv_z;
                let idx = y * w + x;
                if z < depth[idx] {
                    depth[idx] = z;
                    mask.set(x, y, 1.0);
                    let n = (vnormals[i0] * (l0 / v0.z)
                        + vnormals[i1] * (l1 / v1.z)
                        + vnormals[i2] * (l2 / v2.z))
                        * z;
                    normals[idx] = match n.try_normalize(1e-12) {
                        Some(n) => n,
                        None => {
                            let face = (v1 - v0).cross(&(v2 - v0));
                            face.try_normalize(1e-12).unwrap_or_else(Vector3::zeros)
                        }
                    };
                }
            }
        }
    }
    RasterOutput {
        mask,
        depth,
        normals,
    }
}

/// Binary coverage image of the posed mesh.
pub fn rasterize_silhouette(
    mesh: &TriMesh,
    pose: &PoseParams,
    camera: &CameraModel,
) -> Result<Mask> {
    pose.validate()?;
    camera.validate()?;
    Ok(rasterize(mesh, pose, camera).mask)
}

/// Interpolated surface normals of the posed mesh, unit length on the mask.
pub fn render_gt_normals(
    mesh: &TriMesh,
    pose: &PoseParams,
    camera: &CameraModel,
) -> Result<NormalMap> {
    pose.validate()?;
    camera.validate()?;
    let raster = rasterize(mesh, pose, camera);
    let (w, h) = (camera.width, camera.height);
    let mut map = NormalMap::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            if raster.mask.is_on(x, y) {
                map.set(x, y, raster.normals[y * w + x]);
            }
        }
    }
    map.valid = raster.mask;
    Ok(map)
}

/// Mean squared difference between the rendered silhouette and a target mask.
pub fn silhouette_mse(
    mesh: &TriMesh,
    pose: &PoseParams,
    camera: &CameraModel,
    target: &Mask,
) -> Result<f64> {
    pose.validate()?;
    camera.validate()?;
    if target.width() != camera.width || target.height() != camera.height {
        return Err(Error::argument("target mask does not match camera size"));
    }
    let sil = rasterize(mesh, pose, camera).mask;
    let mut differ = 0usize;
    for (a, b) in sil.data().iter().zip(target.data()) {
        if (a > &0.5) != (b > &0.5) {
            differ += 1;
        }
    }
    Ok(differ as f64 / (camera.width * camera.height) as f64)
}

const INIT_STEP_T: f64 = 0.02;
const INIT_STEP_R: f64 = 0.05;
const MIN_STEP: f64 = 1e-5;
const MAX_SWEEPS: usize = 120;

fn mask_bbox(mask: &Mask) -> Option<(f64, f64, f64, f64)> {
    let (mut x0, mut y0) = (usize::MAX, usize::MAX);
    let (mut x1, mut y1) = (0usize, 0usize);
    let mut any = false;
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.is_on(x, y) {
                any = true;
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    any.then(|| (x0 as f64, y0 as f64, x1 as f64, y1 as f64))
}

/// Translation candidate that moves the projected bounding box onto the
/// target's: depth from the size ratio, then an image-space recentering.
fn aligned_candidate(
    mesh: &TriMesh,
    init: &PoseParams,
    camera: &CameraModel,
    target_bbox: (f64, f64, f64, f64),
) -> Option<PoseParams> {
    let sil = rasterize(mesh, init, camera).mask;
    let (sx0, sy0, sx1, sy1) = mask_bbox(&sil)?;
    let (tx0, ty0, tx1, ty1) = target_bbox;
    let rot = init.rotation();
    let mean_z = mesh
        .vertices
        .iter()
        .map(|v| (rot * v + init.t).z)
        .sum::<f64>()
        / mesh.vertices.len() as f64;
    if mean_z <= 1e-6 {
        return None;
    }
    let s_area = ((sx1 - sx0 + 1.0) * (sy1 - sy0 + 1.0)).max(1.0);
    let t_area = ((tx1 - tx0 + 1.0) * (ty1 - ty0 + 1.0)).max(1.0);
    let scale = (s_area / t_area).sqrt().clamp(0.2, 5.0);
    let mut cand = *init;
    cand.t.z += mean_z * (scale - 1.0);

    let sil2 = rasterize(mesh, &cand, camera).mask;
    let (sx0, sy0, sx1, sy1) = mask_bbox(&sil2)?;
    let z_new = mean_z * scale;
    cand.t.x += (((tx0 + tx1) - (sx0 + sx1)) / 2.0) * z_new / camera.fx;
    cand.t.y += (((ty0 + ty1) - (sy0 + sy1)) / 2.0) * z_new / camera.fy;
    Some(cand)
}

/// Derivative-free silhouette alignment over the six pose parameters.
///
/// Starts from the better of the initial pose and a bounding-box-aligned
/// variant, then runs a coordinate pattern search with shrinking steps. The
/// returned pose never scores worse than the initial one.
pub fn fit_pose(
    mesh: &TriMesh,
    target: &Mask,
    camera: &CameraModel,
    init: &PoseParams,
) -> Result<PoseParams> {
    init.validate()?;
    camera.validate()?;
    if target.width() != camera.width || target.height() != camera.height {
        return Err(Error::argument("target mask does not match camera size"));
    }
    if target.count_on() == 0 {
        return Err(Error::argument("target mask is empty"));
    }

    let cost = |q: &[f64; 6]| -> f64 {
        let pose = PoseParams {
            t: Vector3::new(q[0], q[1], q[2]),
            r: Vector3::new(q[3], q[4], q[5]),
        };
        let sil = rasterize(mesh, &pose, camera).mask;
        let mut differ = 0usize;
        for (a, b) in sil.data().iter().zip(target.data()) {
            if (a > &0.5) != (b > &0.5) {
                differ += 1;
            }
        }
        differ as f64 / (camera.width * camera.height) as f64
    };
    let as_q = |p: &PoseParams| [p.t.x, p.t.y, p.t.z, p.r.x, p.r.y, p.r.z];

    let mut best_q = as_q(init);
    let mut best_cost = cost(&best_q);
    if let Some(bbox) = mask_bbox(target) {
        if let Some(cand) = aligned_candidate(mesh, init, camera, bbox) {
            let q = as_q(&cand);
            let c = cost(&q);
            if c < best_cost {
                best_q = q;
                best_cost = c;
            }
        }
    }

    let mut steps = [
        INIT_STEP_T,
        INIT_STEP_T,
        INIT_STEP_T,
        INIT_STEP_R,
        INIT_STEP_R,
        INIT_STEP_R,
    ];
    for _ in 0..MAX_SWEEPS {
        if best_cost == 0.0 {
            break;
        }
        let mut improved = false;
        for dim in 0..6 {
            for sign in [1.0, -1.0] {
                let mut q = best_q;
                q[dim] += sign * steps[dim];
                let r_norm = (q[3] * q[3] + q[4] * q[4] + q[5] * q[5]).sqrt();
                if r_norm >= std::f64::consts::PI - 1e-9 {
                    continue;
                }
                let c = cost(&q);
                if c < best_cost {
                    best_q = q;
                    best_cost = c;
                    improved = true;
                }
            }
        }
        if !improved {
            for s in &mut steps {
                *s *= 0.5;
            }
            if steps.iter().all(|s| *s < MIN_STEP) {
                break;
            }
        }
    }

    Ok(PoseParams {
        t: Vector3::new(best_q[0], best_q[1], best_q[2]),
        r: Vector3::new(best_q[3], best_q[4], best_q[5]),
    })
}
