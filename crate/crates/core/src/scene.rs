//! Synthetic capture rendering: one basis image per superpixel.
//!
//! A basis image holds the response to that superpixel alone at unit drive,
//! so a capture under any pattern is the pattern-weighted sum of the stack.
//! Shading is Lambertian per channel, `B_j^c = rho^c * max(0, n . l_j)`,
//! optionally multiplied by the inverse-square falloff `(plane_depth / r_j)^2`
//! so superpixels farther from the surface point contribute less. An optional
//! Blinn-Phong lobe renders a second, separately stored specular stack.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{light_dir_and_dist, pixel_ray, CameraModel, DisplayGrid};
use crate::image::{ImageRgb, Mask};
use crate::mesh::TriMesh;
use crate::patterns::{PatternSet, Space};
use crate::photostereo::{CaptureSet, NormalMap};
use crate::posefit::{rasterize, PoseParams};

/// One image per superpixel, all the same resolution.
#[derive(Debug, Clone)]
pub struct BasisStack {
    images: Vec<ImageRgb>,
}

impl BasisStack {
    pub fn new(images: Vec<ImageRgb>) -> Result<BasisStack> {
        let first = images
            .first()
            .ok_or_else(|| Error::argument("basis stack is empty"))?;
        let (w, h) = (first.width(), first.height());
        for img in &images {
            if img.width() != w || img.height() != h {
                return Err(Error::argument("basis image shapes differ"));
            }
            if img.data().iter().any(|&v| !(v >= 0.0)) {
                return Err(Error::argument("basis images must be nonnegative"));
            }
        }
        Ok(BasisStack { images })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn width(&self) -> usize {
        self.images[0].width()
    }

    pub fn height(&self) -> usize {
        self.images[0].height()
    }

    pub fn get(&self, j: usize) -> &ImageRgb {
        &self.images[j]
    }

    pub fn images(&self) -> &[ImageRgb] {
        &self.images
    }
}

/// Mean of the stack, the all-superpixels-at-equal-drive preview.
pub fn average_image(b: &BasisStack) -> ImageRgb {
    let mut out = ImageRgb::zeros(b.width(), b.height());
    for img in b.images() {
        for (dst, &src) in out.data_mut().iter_mut().zip(img.data()) {
            *dst += src;
        }
    }
    let scale = 1.0 / b.len() as f64;
    out.map(|v| v * scale)
}

#[derive(Debug, Clone)]
pub enum Surface {
    Sphere {
        center: Vector3<f64>,
        radius: f64,
    },
    /// Plane through `(0, 0, depth)` with the given (non-unit-ok) normal.
    Plane {
        normal: Vector3<f64>,
        depth: f64,
    },
    Mesh {
        mesh: TriMesh,
        pose: PoseParams,
    },
}

#[derive(Debug, Clone)]
pub enum AlbedoModel {
    Uniform([f64; 3]),
    /// World-space checkerboard over x/y with the given cell size in meters.
    Checker {
        a: [f64; 3],
        b: [f64; 3],
        cell: f64,
    },
}

impl AlbedoModel {
    pub fn at(&self, p: &Vector3<f64>) -> [f64; 3] {
        match self {
            AlbedoModel::Uniform(rgb) => *rgb,
            AlbedoModel::Checker { a, b, cell } => {
                let ix = (p.x / cell).floor() as i64;
                let iy = (p.y / cell).floor() as i64;
                if (ix + iy).rem_euclid(2) == 0 {
                    *a
                } else {
                    *b
                }
            }
        }
    }
}

/// Blinn-Phong highlight: `strength * max(0, n . h)^exponent` per superpixel,
/// with `h` the half vector between light and view directions.
#[derive(Debug, Clone, Copy)]
pub struct SpecularLobe {
    pub strength: f64,
    pub exponent: f64,
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub surface: Surface,
    pub albedo: AlbedoModel,
    pub specular: Option<SpecularLobe>,
}

#[derive(Debug, Clone, Copy)]
pub struct RenderOpts {
    /// Apply the inverse-square distance falloff `(plane_depth / r)^2`.
    pub falloff: bool,
    /// Reference depth the falloff is normalized to.
    pub plane_depth: f64,
}

/// Everything the reconstruction and training stages need from one scene.
#[derive(Debug, Clone)]
pub struct SceneSample {
    pub basis: BasisStack,
    pub specular_basis: Option<BasisStack>,
    pub gt_normals: NormalMap,
    pub mask: Mask,
    pub camera: CameraModel,
    pub grid: DisplayGrid,
}

/// Ray hits for every pixel: surface point and unit normal.
fn surface_hits(
    surface: &Surface,
    camera: &CameraModel,
) -> Result<Vec<Option<(Vector3<f64>, Vector3<f64>)>>> {
    let (w, h) = (camera.width, camera.height);
    match surface {
        Surface::Sphere { center, radius } => {
            if !(*radius > 0.0) {
                return Err(Error::argument("sphere radius must be positive"));
            }
            let mut hits = Vec::with_capacity(w * h);
            for y in 0..h {
                for x in 0..w {
                    let d = pixel_ray(camera, (x as f64, y as f64))?;
                    let b = d.dot(center);
                    let disc = b * b - (center.norm_squared() - radius * radius);
                    if disc < 0.0 {
                        hits.push(None);
                        continue;
                    }
                    let t = b - disc.sqrt();
                    if t <= 1e-9 {
                        hits.push(None);
                        continue;
                    }
                    let p = d * t;
                    hits.push(Some((p, (p - center) / *radius)));
                }
            }
            Ok(hits)
        }
        Surface::Plane { normal, depth } => {
            let n = normal
                .try_normalize(1e-12)
                .ok_or_else(|| Error::argument("plane normal is degenerate"))?;
            let p0 = Vector3::new(0.0, 0.0, *depth);
            let mut hits = Vec::with_capacity(w * h);
            for y in 0..h {
                for x in 0..w {
                    let d = pixel_ray(camera, (x as f64, y as f64))?;
                    let denom = n.dot(&d);
                    if denom.abs() < 1e-12 {
                        hits.push(None);
                        continue;
                    }
                    let t = n.dot(&p0) / denom;
                    if t <= 1e-9 {
                        hits.push(None);
                        continue;
                    }
                    hits.push(Some((d * t, n)));
                }
            }
            Ok(hits)
        }
        Surface::Mesh { mesh, pose } => {
            let raster = rasterize(mesh, pose, camera);
            let mut hits = Vec::with_capacity(w * h);
            for y in 0..h {
                for x in 0..w {
                    let idx = y * w + x;
                    if !raster.mask.is_on(x, y) {
                        hits.push(None);
                        continue;
                    }
                    let d = pixel_ray(camera, (x as f64, y as f64))?;
                    let p = d * (raster.depth[idx] / d.z);
                    hits.push(Some((p, raster.normals[idx])));
                }
            }
            Ok(hits)
        }
    }
}

fn shade_diffuse(albedo: [f64; 3], n: &Vector3<f64>, l: &Vector3<f64>, weight: f64) -> [f64; 3] {
    let lambert = n.dot(l).max(0.0) * weight;
    [
        albedo[0] * lambert,
        albedo[1] * lambert,
        albedo[2] * lambert,
    ]
}

fn shade_specular(
    lobe: &SpecularLobe,
    n: &Vector3<f64>,
    l: &Vector3<f64>,
    view: &Vector3<f64>,
    weight: f64,
) -> f64 {
    let h = (l + view).try_normalize(1e-12);
    match h {
        Some(h) => lobe.strength * n.dot(&h).max(0.0).powf(lobe.exponent) * weight,
        None => 0.0,
    }
}

/// Renders the per-superpixel basis stack plus ground-truth geometry.
///
/// The mask keeps pixels where the surface was hit front-facing
/// (`n . d < 0`); the ground-truth normals come from the same hit pass that
/// shades the basis images. An all-off mask is a valid result (the caller
/// decides whether to warn), not an error.
pub fn render_basis(
    scene: &Scene,
    camera: &CameraModel,
    grid: &DisplayGrid,
    opts: &RenderOpts,
) -> Result<SceneSample> {
    camera.validate()?;
    if !(opts.plane_depth > 0.0) {
        return Err(Error::argument("plane depth must be positive"));
    }
    let (w, h) = (camera.width, camera.height);
    let hits = surface_hits(&scene.surface, camera)?;

    let mut mask = Mask::zeros(w, h);
    let mut gt = NormalMap::zeros(w, h);
    let mut rays = vec![Vector3::zeros(); w * h];
    for y in 0..h {
        for x in 0..w {
            let d = pixel_ray(camera, (x as f64, y as f64))?;
            rays[y * w + x] = d;
            if let Some((_, n)) = &hits[y * w + x] {
                if n.dot(&d) < 0.0 {
                    mask.set(x, y, 1.0);
                    gt.set(x, y, *n);
                    gt.valid.set(x, y, 1.0);
                }
            }
        }
    }

    let p = grid.num_superpixels();
    let rendered: Vec<(ImageRgb, ImageRgb)> = (0..p)
        .into_par_iter()
        .map(|j| {
            let mut diff = ImageRgb::zeros(w, h);
            let mut spec = ImageRgb::zeros(w, h);
            for y in 0..h {
                for x in 0..w {
                    if !mask.is_on(x, y) {
                        continue;
                    }
                    let (pt, n) = hits[y * w + x].as_ref().expect("hit under mask");
                    let (l, r) = light_dir_and_dist(grid, pt, j);
                    let weight = if opts.falloff {
                        (opts.plane_depth / r).powi(2)
                    } else {
                        1.0
                    };
                    diff.set(x, y, shade_diffuse(scene.albedo.at(pt), n, &l, weight));
                    if let Some(lobe) = &scene.specular {
                        let view = -rays[y * w + x];
                        let s = shade_specular(lobe, n, &l, &view, weight);
                        spec.set(x, y, [s, s, s]);
                    }
                }
            }
            (diff, spec)
        })
        .collect();

    let mut diffuse = Vec::with_capacity(p);
    let mut specular = Vec::with_capacity(p);
    for (d, s) in rendered {
        diffuse.push(d);
        specular.push(s);
    }
    Ok(SceneSample {
        basis: BasisStack::new(diffuse)?,
        specular_basis: if scene.specular.is_some() {
            Some(BasisStack::new(specular)?)
        } else {
            None
        },
        gt_normals: gt,
        mask,
        camera: camera.clone(),
        grid: grid.clone(),
    })
}

/// Shades captures for each pattern directly, without going through a basis
/// stack. Serves as an independent reference for the light-transport
/// linearity of [`render_basis`] + weighted summing.
pub fn render_under_pattern(
    scene: &Scene,
    camera: &CameraModel,
    grid: &DisplayGrid,
    opts: &RenderOpts,
    m: &PatternSet,
) -> Result<CaptureSet> {
    if m.space != Space::Intensity {
        return Err(Error::argument("patterns must be in intensity space"));
    }
    if m.num_superpixels() != grid.num_superpixels() {
        return Err(Error::argument("pattern and grid superpixel counts differ"));
    }
    camera.validate()?;
    if !(opts.plane_depth > 0.0) {
        return Err(Error::argument("plane depth must be positive"));
    }
    let (w, h) = (camera.width, camera.height);
    let hits = surface_hits(&scene.surface, camera)?;
    let p = grid.num_superpixels();

    let mut images = vec![ImageRgb::zeros(w, h); m.k];
    for y in 0..h {
        for x in 0..w {
            let Some((pt, n)) = &hits[y * w + x] else {
                continue;
            };
            let d = pixel_ray(camera, (x as f64, y as f64))?;
            if n.dot(&d) >= 0.0 {
                continue;
            }
            let albedo = scene.albedo.at(pt);
            let view = -d;
            for j in 0..p {
                let (l, r) = light_dir_and_dist(grid, pt, j);
                let weight = if opts.falloff {
                    (opts.plane_depth / r).powi(2)
                } else {
                    1.0
                };
                let base = shade_diffuse(albedo, n, &l, weight);
                let s = match &scene.specular {
                    Some(lobe) => shade_specular(lobe, n, &l, &view, weight),
                    None => 0.0,
                };
                for (i, img) in images.iter_mut().enumerate() {
                    let mut px = img.get(x, y);
                    for c in 0..3 {
                        px[c] += (base[c] + s) * m.value(i, j, c);
                    }
                    img.set(x, y, px);
                }
            }
        }
    }
    CaptureSet::new(images, None)
}
