//! Image formation under display patterns and the analytic normal
//! reconstructor.
//!
//! Per pixel the Lambertian model stacks the three color channels into one
//! linear system: rows are ordered R_1..R_K, G_1..G_K, B_1..B_K, each row
//! being `I_i^c = rho^c * (sum_j M_{i,j}^c l_j) . N`. The albedo vector is the
//! per-channel max capture intensity, and N comes from the normal equations of
//! that 3K x 3 system, normalized to unit length.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::IlluminationField;
use crate::image::{ImageGray, ImageRgb, Mask};
use crate::patterns::{PatternSet, Space};
use crate::scene::BasisStack;

/// Pixels darker than this fraction of the image maximum are excluded.
pub const INTENSITY_REL_THRESHOLD: f64 = 1e-4;
/// Relative eigenvalue floor below which the 3x3 normal-equations system is
/// treated as rank-deficient.
pub const RANK_REL_THRESHOLD: f64 = 1e-10;
/// Solutions shorter than this are invalidated instead of normalized.
pub const NORM_GUARD: f64 = 1e-12;

/// K captures under the display patterns, plus a validity mask carried along
/// from upstream steps (polarization clamping, saturation).
#[derive(Debug, Clone)]
pub struct CaptureSet {
    images: Vec<ImageRgb>,
    pub valid: Mask,
}

impl CaptureSet {
    pub fn new(images: Vec<ImageRgb>, valid: Option<Mask>) -> Result<CaptureSet> {
        let first = images
            .first()
            .ok_or_else(|| Error::argument("capture set is empty"))?;
        let (w, h) = (first.width(), first.height());
        for img in &images {
            if img.width() != w || img.height() != h {
                return Err(Error::argument("capture shapes differ"));
            }
            if img.data().iter().any(|&v| !(v >= 0.0)) {
                return Err(Error::argument("captures must be nonnegative"));
            }
        }
        let valid = match valid {
            Some(m) => {
                if m.width() != w || m.height() != h {
                    return Err(Error::argument("validity mask shape differs"));
                }
                m
            }
            None => Mask::constant(w, h, 1.0),
        };
        Ok(CaptureSet { images, valid })
    }

    pub fn k(&self) -> usize {
        self.images.len()
    }

    pub fn width(&self) -> usize {
        self.images[0].width()
    }

    pub fn height(&self) -> usize {
        self.images[0].height()
    }

    pub fn image(&self, i: usize) -> &ImageRgb {
        &self.images[i]
    }

    pub fn images(&self) -> &[ImageRgb] {
        &self.images
    }
}

/// Per-pixel unit normals with a validity mask; zero vectors off-mask.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalMap {
    width: usize,
    height: usize,
    normals: Vec<Vector3<f64>>,
    pub valid: Mask,
}

impl NormalMap {
    pub fn zeros(width: usize, height: usize) -> NormalMap {
        NormalMap {
            width,
            height,
            normals: vec![Vector3::zeros(); width * height],
            valid: Mask::zeros(width, height),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Vector3<f64> {
        self.normals[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, n: Vector3<f64>) {
        self.normals[y * self.width + x] = n;
    }

    /// Components packed as RGB channels for PFM storage.
    pub fn to_rgb(&self) -> ImageRgb {
        let mut img = ImageRgb::zeros(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                let n = self.get(x, y);
                img.set(x, y, [n.x, n.y, n.z]);
            }
        }
        img
    }

    /// Inverse of [`to_rgb`]; validity comes from the supplied mask.
    pub fn from_rgb(img: &ImageRgb, valid: Mask) -> Result<NormalMap> {
        if img.width() != valid.width() || img.height() != valid.height() {
            return Err(Error::argument("normal image and mask shapes differ"));
        }
        let mut map = NormalMap::zeros(img.width(), img.height());
        for y in 0..img.height() {
            for x in 0..img.width() {
                if valid.is_on(x, y) {
                    let [nx, ny, nz] = img.get(x, y);
                    map.set(x, y, Vector3::new(nx, ny, nz));
                }
            }
        }
        map.valid = valid;
        Ok(map)
    }
}

/// Per-pixel RGB diffuse albedo plus the capture index that produced each
/// channel's max, kept for routing the training gradient.
#[derive(Debug, Clone)]
pub struct AlbedoMap {
    pub rgb: ImageRgb,
    /// `(y * width + x) * 3 + channel` -> capture index.
    pub argmax: Vec<u16>,
}

/// Weighted sum of basis images under each pattern: `I_i = sum_j B_j M_{i,j}`
/// per channel. Exactly linear in both arguments.
pub fn simulate_captures(m: &PatternSet, b: &BasisStack) -> Result<CaptureSet> {
    if m.space != Space::Intensity {
        return Err(Error::argument("patterns must be in intensity space"));
    }
    if m.num_superpixels() != b.len() {
        return Err(Error::argument(format!(
            "pattern grid has {} superpixels, basis stack has {}",
            m.num_superpixels(),
            b.len()
        )));
    }
    let (w, h) = (b.width(), b.height());
    let p = b.len();
    let images = (0..m.k)
        .map(|i| {
            let mut out = ImageRgb::zeros(w, h);
            for j in 0..p {
                let weights = [m.value(i, j, 0), m.value(i, j, 1), m.value(i, j, 2)];
                let src = b.get(j).data();
                for (dst, s) in out.data_mut().chunks_exact_mut(3).zip(src.chunks_exact(3)) {
                    dst[0] += s[0] * weights[0];
                    dst[1] += s[1] * weights[1];
                    dst[2] += s[2] * weights[2];
                }
            }
            out
        })
        .collect();
    CaptureSet::new(images, None)
}

/// Max capture intensity per pixel per channel; ties keep the lowest index.
pub fn estimate_albedo_max(c: &CaptureSet) -> AlbedoMap {
    let (w, h) = (c.width(), c.height());
    let mut rgb = c.images[0].clone();
    let mut argmax = vec![0u16; w * h * 3];
    for (i, img) in c.images.iter().enumerate().skip(1) {
        for (idx, (&v, best)) in img.data().iter().zip(rgb.data_mut()).enumerate() {
            if v > *best {
                *best = v;
                argmax[idx] = i as u16;
            }
        }
    }
    AlbedoMap { rgb, argmax }
}

/// Eigenvalues of a symmetric 3x3 matrix, ascending, by the trigonometric
/// closed form.
pub(crate) fn sym3_eigenvalues(g: &Matrix3<f64>) -> [f64; 3] {
    let p1 = g[(0, 1)].powi(2) + g[(0, 2)].powi(2) + g[(1, 2)].powi(2);
    if p1 == 0.0 {
        let mut d = [g[(0, 0)], g[(1, 1)], g[(2, 2)]];
        d.sort_by(|a, b| a.partial_cmp(b).expect("finite diagonal"));
        return d;
    }
    let q = g.trace() / 3.0;
    let p2 = (g[(0, 0)] - q).powi(2) + (g[(1, 1)] - q).powi(2) + (g[(2, 2)] - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let b = (g - Matrix3::identity() * q) / p;
    let r = (b.determinant() / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let hi = q + 2.0 * p * phi.cos();
    let lo = q + 2.0 * p * (phi + 2.0 * std::f64::consts::FRAC_PI_3).cos();
    let mid = 3.0 * q - hi - lo;
    [lo, mid, hi]
}

/// Per-pixel reconstruction state shared with the training gradient.
pub(crate) struct PixelSolve {
    pub g_inv: Matrix3<f64>,
    pub u: Vector3<f64>,
    pub u_norm: f64,
    pub normal: Vector3<f64>,
}

/// Builds and solves one pixel's normal-equations system. `None` when the
/// pixel is rank-deficient or the solution collapses.
#[inline]
pub(crate) fn solve_pixel(
    captures: &[ImageRgb],
    m: &PatternSet,
    lights: &[Vector3<f64>],
    rho: [f64; 3],
    x: usize,
    y: usize,
) -> Option<PixelSolve> {
    let k = captures.len();
    let p = lights.len();
    let mv = m.values();
    let mut g = Matrix3::<f64>::zeros();
    let mut h = Vector3::<f64>::zeros();
    for c in 0..3 {
        for i in 0..k {
            let mut s = Vector3::zeros();
            let base = (i * p) * 3 + c;
            for (j, l) in lights.iter().enumerate() {
                s += mv[base + j * 3] * l;
            }
            let a = rho[c] * s;
            g += a * a.transpose();
            h += a * captures[i].get(x, y)[c];
        }
    }
    let eig = sym3_eigenvalues(&g);
    if !(eig[2] > 0.0) || eig[0] < RANK_REL_THRESHOLD * eig[2] {
        return None;
    }
    let g_inv = g.try_inverse()?;
    let u = g_inv * h;
    let u_norm = u.norm();
    if u_norm <= NORM_GUARD {
        return None;
    }
    Some(PixelSolve {
        g_inv,
        u,
        u_norm,
        normal: u / u_norm,
    })
}

/// Closed-form least-squares surface normals from K captures.
///
/// Pixels are invalidated when the capture validity mask is off, the signal
/// is below [`INTENSITY_REL_THRESHOLD`] of the image max, the system is
/// rank-deficient, or the solution norm collapses.
pub fn reconstruct_normals(
    c: &CaptureSet,
    m: &PatternSet,
    field: &IlluminationField,
    rho: &AlbedoMap,
) -> Result<NormalMap> {
    if c.k() < 2 {
        return Err(Error::argument("need at least 2 captures"));
    }
    if m.space != Space::Intensity {
        return Err(Error::argument("patterns must be in intensity space"));
    }
    if m.k != c.k() {
        return Err(Error::argument("pattern count differs from capture count"));
    }
    let (w, h) = (c.width(), c.height());
    if field.width() != w || field.height() != h {
        return Err(Error::argument("illumination field resolution differs"));
    }
    if field.num_superpixels() != m.num_superpixels() {
        return Err(Error::argument("superpixel counts differ"));
    }
    if rho.rgb.width() != w || rho.rgb.height() != h {
        return Err(Error::argument("albedo resolution differs"));
    }

    let global_max = c
        .images
        .iter()
        .map(|img| img.max_value())
        .fold(f64::NEG_INFINITY, f64::max);
    let mut map = NormalMap::zeros(w, h);
    if !(global_max > 0.0) {
        return Ok(map);
    }
    let threshold = INTENSITY_REL_THRESHOLD * global_max;

    let rows: Vec<Vec<(Vector3<f64>, f64)>> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| {
                    if !c.valid.is_on(x, y) {
                        return (Vector3::zeros(), 0.0);
                    }
                    let pixel_max = c
                        .images
                        .iter()
                        .flat_map(|img| img.get(x, y))
                        .fold(f64::NEG_INFINITY, f64::max);
                    if pixel_max < threshold {
                        return (Vector3::zeros(), 0.0);
                    }
                    let rho_px = rho.rgb.get(x, y);
                    match solve_pixel(&c.images, m, field.at(x, y), rho_px, x, y) {
                        Some(sol) => (sol.normal, 1.0),
                        None => (Vector3::zeros(), 0.0),
                    }
                })
                .collect()
        })
        .collect();
    for (y, row) in rows.into_iter().enumerate() {
        for (x, (n, v)) in row.into_iter().enumerate() {
            map.set(x, y, n);
            map.valid.set(x, y, v);
        }
    }
    Ok(map)
}

/// Per-channel scalar least-squares albedo given fixed normals:
/// `rho^c = <I^c, d> / <d, d>` with `d_i = (sum_j M_{i,j}^c l_j) . N`,
/// clamped at zero. Pixels where the denominator collapses (or the normal is
/// invalid) keep the prior albedo.
pub fn refine_albedo(
    c: &CaptureSet,
    m: &PatternSet,
    field: &IlluminationField,
    n: &NormalMap,
    prior: &AlbedoMap,
) -> AlbedoMap {
    let (w, h) = (c.width(), c.height());
    let k = c.k();
    let p = field.num_superpixels();
    let mv = m.values();
    let mut rgb = prior.rgb.clone();
    for y in 0..h {
        for x in 0..w {
            if !n.valid.is_on(x, y) {
                continue;
            }
            let normal = n.get(x, y);
            let lights = field.at(x, y);
            let mut px = rgb.get(x, y);
            for c_idx in 0..3 {
                let mut num = 0.0;
                let mut den = 0.0;
                for i in 0..k {
                    let mut s = Vector3::zeros();
                    let base = (i * p) * 3 + c_idx;
                    for (j, l) in lights.iter().enumerate() {
                        s += mv[base + j * 3] * l;
                    }
                    let d = s.dot(&normal);
                    num += c.images[i].get(x, y)[c_idx] * d;
                    den += d * d;
                }
                if den >= 1e-12 {
                    px[c_idx] = (num / den).max(0.0);
                }
            }
            rgb.set(x, y, px);
        }
    }
    AlbedoMap {
        rgb,
        argmax: prior.argmax.clone(),
    }
}

/// Mean of `(1 - N . N_gt) / 2` over mask pixels valid in both maps. The dot
/// product is clamped to [-1, 1] so stored normals that are unit only up to
/// file precision cannot push a loss outside [0, 1].
pub fn cosine_loss(n: &NormalMap, gt: &NormalMap, mask: &Mask) -> Result<f64> {
    if n.width() != gt.width()
        || n.height() != gt.height()
        || mask.width() != n.width()
        || mask.height() != n.height()
    {
        return Err(Error::argument("normal map shapes differ"));
    }
    if mask.count_on() == 0 {
        return Err(Error::argument("empty evaluation mask"));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for y in 0..n.height() {
        for x in 0..n.width() {
            if mask.is_on(x, y) && n.valid.is_on(x, y) && gt.valid.is_on(x, y) {
                sum += (1.0 - n.get(x, y).dot(&gt.get(x, y)).clamp(-1.0, 1.0)) / 2.0;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::argument("no valid pixels under the mask"));
    }
    Ok(sum / count as f64)
}

/// Per-pixel cosine loss on mask-and-valid pixels, zero elsewhere.
pub fn cosine_loss_map(n: &NormalMap, gt: &NormalMap, mask: &Mask) -> ImageGray {
    let mut out = ImageGray::zeros(n.width(), n.height());
    for y in 0..n.height() {
        for x in 0..n.width() {
            if mask.is_on(x, y) && n.valid.is_on(x, y) && gt.valid.is_on(x, y) {
                let dot = n.get(x, y).dot(&gt.get(x, y)).clamp(-1.0, 1.0);
                out.set(x, y, (1.0 - dot) / 2.0);
            }
        }
    }
    out
}
