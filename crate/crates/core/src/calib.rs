//! Mirror-based calibration of superpixel positions and radiometric response
//! fitting.
//!
//! The camera cannot see the display directly, so each superpixel is observed
//! through planar mirrors at known poses: the camera ray through an observed
//! pixel reflects off the mirror plane, and the superpixel sits at the
//! least-squares intersection of those reflected rays across mirror poses.
//! Sparse triangulated positions are densified by bilinear interpolation over
//! the grid's index space. Response curves map commanded pixel values to
//! measured intensity per channel.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{pixel_ray, CameraModel, DisplayGrid};

/// Mirror plane in camera space, as the set of points with `n . x = d`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MirrorPlane {
    pub n: [f64; 3],
    pub d: f64,
}

impl MirrorPlane {
    pub fn normal(&self) -> Vector3<f64> {
        Vector3::from(self.n)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.n.iter().all(|v| v.is_finite()) || !self.d.is_finite() {
            return Err(Error::argument("mirror plane must be finite"));
        }
        if (self.normal().norm() - 1.0).abs() > 1e-6 {
            return Err(Error::argument("mirror plane normal must be unit length"));
        }
        Ok(())
    }
}

/// One superpixel seen in one mirror image.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObservedPoint {
    pub j: usize,
    pub px: [f64; 2],
}

/// All superpixels identified in one mirror pose.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MirrorObservation {
    pub plane: MirrorPlane,
    pub points: Vec<ObservedPoint>,
}

impl MirrorObservation {
    pub fn validate(&self) -> Result<()> {
        self.plane.validate()?;
        if self.points.is_empty() {
            return Err(Error::argument("mirror observation has no points"));
        }
        if self
            .points
            .iter()
            .any(|p| !(p.px[0].is_finite() && p.px[1].is_finite()))
        {
            return Err(Error::argument("observed pixel coordinates must be finite"));
        }
        Ok(())
    }
}

pub fn load_observations(path: impl AsRef<Path>) -> Result<Vec<MirrorObservation>> {
    let path = path.as_ref();
    let text =
        fs::read_to_string(path).map_err(|e| Error::io(format!("{}: {e}", path.display())))?;
    let obs: Vec<MirrorObservation> = serde_json::from_str(&text)?;
    for o in &obs {
        o.validate()?;
    }
    Ok(obs)
}

pub fn save_observations(path: impl AsRef<Path>, obs: &[MirrorObservation]) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(obs)?;
    fs::write(path, text).map_err(|e| Error::io(format!("{}: {e}", path.display())))
}

/// Reflection of a point across the plane.
pub fn mirror_image(plane: &MirrorPlane, p: &Vector3<f64>) -> Vector3<f64> {
    let n = plane.normal();
    p - n * (2.0 * (n.dot(p) - plane.d))
}

/// Intersects the ray with the mirror plane and reflects its direction.
/// Returns the hit point and the unit reflected direction.
pub fn reflect_ray(
    plane: &MirrorPlane,
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
) -> Result<(Vector3<f64>, Vector3<f64>)> {
    plane.validate()?;
    let norm = dir.norm();
    if norm <= 1e-12 {
        return Err(Error::argument("zero-length ray direction"));
    }
    let d = dir / norm;
    let n = plane.normal();
    let dn = d.dot(&n);
    if dn.abs() < 1e-12 {
        return Err(Error::numerical("ray is parallel to the mirror plane"));
    }
    let t = (plane.d - n.dot(origin)) / dn;
    let hit = origin + d * t;
    let reflected = (d - n * (2.0 * dn)).normalize();
    Ok((hit, reflected))
}

/// One triangulated superpixel with its root-mean-square distance to the
/// reflected rays.
#[derive(Debug, Clone)]
pub struct TriangulatedPoint {
    pub j: usize,
    pub position: Vector3<f64>,
    pub rms_distance: f64,
}

#[derive(Debug, Clone)]
pub struct Triangulation {
    /// Sorted by superpixel index; superpixels without enough observations
    /// are absent.
    pub points: Vec<TriangulatedPoint>,
    pub warnings: Vec<String>,
}

/// Angle below which a set of reflected rays is flagged as ill-conditioned.
pub const MIN_RAY_ANGLE_DEG: f64 = 0.5;

/// Least-squares intersection of the reflected camera rays for every
/// superpixel that appears in at least two mirror poses.
pub fn triangulate_superpixels(
    observations: &[MirrorObservation],
    camera: &CameraModel,
) -> Result<Triangulation> {
    camera.validate()?;
    if observations.is_empty() {
        return Err(Error::argument("no mirror observations"));
    }
    let mut max_j = 0usize;
    for obs in observations {
        obs.validate()?;
        for p in &obs.points {
            max_j = max_j.max(p.j);
        }
    }
    let mut rays: Vec<Vec<(Vector3<f64>, Vector3<f64>)>> = vec![Vec::new(); max_j + 1];
    for obs in observations {
        for p in &obs.points {
            let dir = pixel_ray(camera, (p.px[0], p.px[1]))?;
            rays[p.j].push(reflect_ray(&obs.plane, &Vector3::zeros(), &dir)?);
        }
    }

    let mut points = Vec::new();
    let mut warnings = Vec::new();
    for (j, list) in rays.iter().enumerate() {
        if list.is_empty() {
            continue;
        }
        if list.len() < 2 {
            warnings.push(format!(
                "superpixel {j}: only {} observation, omitted",
                list.len()
            ));
            continue;
        }
        let mut max_angle = 0.0f64;
        for a in 0..list.len() {
            for b in a + 1..list.len() {
                let cos = list[a].1.dot(&list[b].1).abs().clamp(0.0, 1.0);
                max_angle = max_angle.max(cos.acos());
            }
        }
        if max_angle.to_degrees() < MIN_RAY_ANGLE_DEG {
            warnings.push(format!(
                "superpixel {j}: reflected rays nearly parallel ({:.4} degrees)",
                max_angle.to_degrees()
            ));
        }
        // Minimize the summed squared distance to the lines x = o + t d:
        // sum (I - d d^T) x = sum (I - d d^T) o.
        let mut a = Matrix3::<f64>::zeros();
        let mut b = Vector3::<f64>::zeros();
        for (o, d) in list {
            let proj = Matrix3::identity() - d * d.transpose();
            a += proj;
            b += proj * o;
        }
        let Some(inv) = a.try_inverse() else {
            warnings.push(format!("superpixel {j}: degenerate ray system, omitted"));
            continue;
        };
        let x = inv * b;
        let mut sq = 0.0;
        for (o, d) in list {
            let v = x - o;
            sq += (v - d * v.dot(d)).norm_squared();
        }
        points.push(TriangulatedPoint {
            j,
            position: x,
            rms_distance: (sq / list.len() as f64).sqrt(),
        });
    }
    Ok(Triangulation { points, warnings })
}

/// Fills a full cols x rows grid from sparse positions by bilinear
/// interpolation over (row, col) index space, per coordinate. The sparse set
/// must form a complete coarse grid of sampled rows x sampled columns that
/// spans both index ranges.
pub fn interpolate_grid(
    sparse: &[(usize, Vector3<f64>)],
    cols: usize,
    rows: usize,
) -> Result<DisplayGrid> {
    let p = cols * rows;
    if p < 2 {
        return Err(Error::argument("display grid needs at least 2 superpixels"));
    }
    let mut by_cell = vec![None; p];
    let mut row_set = Vec::new();
    let mut col_set = Vec::new();
    for &(j, pos) in sparse {
        if j >= p {
            return Err(Error::argument(format!(
                "superpixel {j} outside a {cols}x{rows} grid"
            )));
        }
        if by_cell[j].is_some() {
            return Err(Error::argument(format!("superpixel {j} given twice")));
        }
        by_cell[j] = Some(pos);
        let (r, c) = (j / cols, j % cols);
        if !row_set.contains(&r) {
            row_set.push(r);
        }
        if !col_set.contains(&c) {
            col_set.push(c);
        }
    }
    row_set.sort_unstable();
    col_set.sort_unstable();
    if row_set.first() != Some(&0)
        || row_set.last() != Some(&(rows - 1))
        || col_set.first() != Some(&0)
        || col_set.last() != Some(&(cols - 1))
    {
        return Err(Error::argument(
            "sparse positions do not span the grid's index range",
        ));
    }
    for &r in &row_set {
        for &c in &col_set {
            if by_cell[r * cols + c].is_none() {
                return Err(Error::argument(format!(
                    "interpolation needs a complete coarse grid; ({r}, {c}) is missing"
                )));
            }
        }
    }
    let sample = |r: usize, c: usize| by_cell[r * cols + c].expect("coarse grid checked");
    let bracket = |set: &[usize], v: usize| -> (usize, usize, f64) {
        let hi = set.iter().position(|&s| s >= v).expect("span checked");
        if set[hi] == v {
            return (set[hi], set[hi], 0.0);
        }
        let (lo, hi) = (set[hi - 1], set[hi]);
        (lo, hi, (v - lo) as f64 / (hi - lo) as f64)
    };

    let mut positions = Vec::with_capacity(p);
    for r in 0..rows {
        let (r0, r1, t) = bracket(&row_set, r);
        for c in 0..cols {
            let (c0, c1, s) = bracket(&col_set, c);
            let pos = sample(r0, c0) * (1.0 - s) * (1.0 - t)
                + sample(r0, c1) * s * (1.0 - t)
                + sample(r1, c0) * (1.0 - s) * t
                + sample(r1, c1) * s * t;
            positions.push([pos.x, pos.y, pos.z]);
        }
    }
    DisplayGrid::new(cols, rows, positions)
}

/// Functional form of a display response curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseModel {
    /// `y = a * u^gamma + b`
    Power,
    /// `y = a * exp(gamma * u) + b`
    Exponential,
}

/// Monotone map from commanded pixel value in [0,1] to measured intensity.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ResponseCurve {
    pub model: ResponseModel,
    pub a: f64,
    pub gamma: f64,
    pub b: f64,
}

impl ResponseCurve {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.gamma > 0.0 && self.b.is_finite()) {
            return Err(Error::argument(
                "response curve must have positive gain and exponent",
            ));
        }
        Ok(())
    }
}

pub fn apply_response(curve: &ResponseCurve, u: f64) -> f64 {
    match curve.model {
        ResponseModel::Power => curve.a * u.powf(curve.gamma) + curve.b,
        ResponseModel::Exponential => curve.a * (curve.gamma * u).exp() + curve.b,
    }
}

/// Inverse of [`apply_response`]. The boolean is set when the input fell
/// outside the curve's range over [0,1] and the result was clamped.
pub fn invert_response(curve: &ResponseCurve, y: f64) -> (f64, bool) {
    let t = (y - curve.b) / curve.a;
    let u = match curve.model {
        ResponseModel::Power => {
            if t <= 0.0 {
                return (0.0, t < 0.0);
            }
            t.powf(1.0 / curve.gamma)
        }
        ResponseModel::Exponential => {
            if t <= 0.0 {
                return (0.0, true);
            }
            t.ln() / curve.gamma
        }
    };
    if u < 0.0 {
        (0.0, true)
    } else if u > 1.0 {
        (1.0, true)
    } else {
        (u, false)
    }
}

fn model_jacobian(model: ResponseModel, a: f64, g: f64, u: f64) -> Vector3<f64> {
    match model {
        ResponseModel::Power => {
            let ug = u.powf(g);
            let dg = if u > 0.0 { a * ug * u.ln() } else { 0.0 };
            Vector3::new(ug, dg, 1.0)
        }
        ResponseModel::Exponential => {
            let e = (g * u).exp();
            Vector3::new(e, a * u * e, 1.0)
        }
    }
}

fn linreg(pts: &[(f64, f64)]) -> Option<(f64, f64)> {
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-18 {
        return None;
    }
    let slope = (n * sxy - sx * sy) / denom;
    Some((slope, (sy - slope * sx) / n))
}

fn initial_guess(model: ResponseModel, samples: &[(f64, f64)]) -> (f64, f64, f64) {
    let (u_min, y_at_umin) = samples
        .iter()
        .copied()
        .min_by(|a, b| a.0.partial_cmp(&b.0).expect("finite"))
        .expect("nonempty");
    let y_max = samples
        .iter()
        .map(|s| s.1)
        .fold(f64::NEG_INFINITY, f64::max);
    // Near u = 0 the measurement is approximately the offset itself.
    let b0 = if u_min <= 0.05 { y_at_umin } else { 0.0 };
    let pts: Vec<(f64, f64)> = samples
        .iter()
        .filter(|&&(u, y)| y - b0 > 1e-9 && (model == ResponseModel::Exponential || u > 1e-9))
        .map(|&(u, y)| {
            let x = match model {
                ResponseModel::Power => u.ln(),
                ResponseModel::Exponential => u,
            };
            (x, (y - b0).ln())
        })
        .collect();
    if pts.len() >= 2 {
        if let Some((slope, intercept)) = linreg(&pts) {
            return (intercept.exp().max(1e-6), slope.max(1e-3), b0);
        }
    }
    ((y_max - b0).max(0.1), 1.0, b0)
}

/// Least-squares response fit: log-domain initialization followed by
/// Gauss-Newton. Returns the curve and its root-mean-square residual.
pub fn fit_response(samples: &[(f64, f64)], model: ResponseModel) -> Result<(ResponseCurve, f64)> {
    if samples.len() < 4 {
        return Err(Error::argument("response fit needs at least 4 samples"));
    }
    for &(u, y) in samples {
        if !(0.0..=1.0).contains(&u) || !y.is_finite() {
            return Err(Error::argument(
                "response samples need u in [0,1] and finite intensity",
            ));
        }
    }
    let mut distinct: Vec<f64> = samples.iter().map(|s| s.0).collect();
    distinct.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    distinct.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    if distinct.len() < 4 {
        return Err(Error::argument(
            "response fit needs 4 distinct pixel values",
        ));
    }

    let (a0, g0, b0) = initial_guess(model, samples);
    let mut th = Vector3::new(a0, g0, b0);
    for _ in 0..50 {
        let mut jtj = Matrix3::<f64>::zeros();
        let mut jtr = Vector3::<f64>::zeros();
        for &(u, y) in samples {
            let r = apply_response(
                &ResponseCurve {
                    model,
                    a: th.x,
                    gamma: th.y,
                    b: th.z,
                },
                u,
            ) - y;
            let j = model_jacobian(model, th.x, th.y, u);
            jtj += j * j.transpose();
            jtr += j * r;
        }
        let inv = jtj.try_inverse().or_else(|| {
            (jtj + Matrix3::identity() * (1e-9 * jtj.trace().abs().max(1e-12))).try_inverse()
        });
        let Some(inv) = inv else { break };
        let delta = -(inv * jtr);
        let mut scale = 1.0;
        while scale > 1e-12 && (th.x + scale * delta.x <= 0.0 || th.y + scale * delta.y <= 0.0) {
            scale *= 0.5;
        }
        let step = delta * scale;
        th += step;
        if step.norm() < 1e-10 * (1.0 + th.norm()) {
            break;
        }
    }
    let curve = ResponseCurve {
        model,
        a: th.x,
        gamma: th.y,
        b: th.z,
    };
    curve
        .validate()
        .map_err(|_| Error::numerical("response fit did not converge to an increasing curve"))?;
    let rms = (samples
        .iter()
        .map(|&(u, y)| (apply_response(&curve, u) - y).powi(2))
        .sum::<f64>()
        / samples.len() as f64)
        .sqrt();
    Ok((curve, rms))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_illumination_field;
    use crate::patterns::{init_heuristic, PatternKind};
    use crate::photostereo::{
        cosine_loss, estimate_albedo_max, reconstruct_normals, simulate_captures,
    };
    use crate::scene::{render_basis, AlbedoModel, RenderOpts, Scene, Surface};
    use nalgebra::Rotation3;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, Normal};
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn calib_camera() -> CameraModel {
        CameraModel {
            fx: 400.0,
            fy: 400.0,
            cx: 320.0,
            cy: 240.0,
            width: 640,
            height: 480,
        }
    }

    fn plane(n: Vector3<f64>, d: f64) -> MirrorPlane {
        let n = n.normalize();
        MirrorPlane {
            n: [n.x, n.y, n.z],
            d,
        }
    }

    /// Pixel where the camera sees `p` through the mirror: the virtual image
    /// is the reflection of the point across the plane.
    fn observe(camera: &CameraModel, plane: &MirrorPlane, p: &Vector3<f64>) -> [f64; 2] {
        let image = mirror_image(plane, p);
        let (x, y) = camera.project(&image).expect("virtual image in front");
        [x, y]
    }

    #[test]
    fn normal_incidence_reflects_straight_back() {
        let pl = plane(Vector3::new(0.0, 0.0, 1.0), 0.3);
        let (hit, dir) = reflect_ray(&pl, &Vector3::zeros(), &Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert!((hit - Vector3::new(0.0, 0.0, 0.3)).norm() < 1e-12);
        assert!((dir - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
    }

    #[test]
    fn forty_five_degree_incidence() {
        let pl = plane(Vector3::new(0.0, 0.0, 1.0), 0.3);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let (_, dir) = reflect_ray(&pl, &Vector3::zeros(), &Vector3::new(0.0, s, s)).unwrap();
        assert!((dir - Vector3::new(0.0, s, -s)).norm() < 1e-12);
    }

    #[test]
    fn reflection_law_holds_for_random_rays() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(8);
        let unit = |rng: &mut Xoshiro256PlusPlus| loop {
            let v = Vector3::new(
                rng.random_range(-1.0..1.0f64),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            if v.norm() > 1e-2 {
                break v.normalize();
            }
        };
        for _ in 0..100 {
            let n = unit(&mut rng);
            let pl = plane(n, rng.random_range(0.2..0.5));
            let o = unit(&mut rng) * 0.1;
            let d = loop {
                let d = unit(&mut rng);
                if d.dot(&n).abs() > 1e-3 {
                    break d;
                }
            };
            let (hit, refl) = reflect_ray(&pl, &o, &d).unwrap();
            assert!((refl.norm() - 1.0).abs() < 1e-12);
            assert!((pl.normal().dot(&hit) - pl.d).abs() < 1e-9);
            assert!((d.dot(&n).abs() - refl.dot(&n).abs()).abs() < 1e-12);
        }
    }

    #[test]
    fn parallel_ray_is_rejected() {
        let pl = plane(Vector3::new(0.0, 0.0, 1.0), 0.3);
        let err = reflect_ray(&pl, &Vector3::zeros(), &Vector3::new(1.0, 0.0, 0.0)).unwrap_err();
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn mirror_image_involution() {
        let pl = plane(Vector3::new(0.2, -0.1, 1.0), 0.4);
        let p = Vector3::new(0.05, 0.1, 0.02);
        let twice = mirror_image(&pl, &mirror_image(&pl, &p));
        assert!((twice - p).norm() < 1e-12);
        let on_plane = pl.normal() * pl.d;
        assert!((mirror_image(&pl, &on_plane) - on_plane).norm() < 1e-12);
    }

    #[test]
    fn two_mirror_poses_recover_a_known_point() {
        let camera = calib_camera();
        let p = Vector3::new(0.08, -0.04, 0.01);
        let planes = [
            plane(Vector3::new(0.0, 0.0, 1.0), 0.3),
            plane(Vector3::new(0.15, 0.05, 1.0), 0.32),
        ];
        let obs: Vec<MirrorObservation> = planes
            .iter()
            .map(|pl| MirrorObservation {
                plane: *pl,
                points: vec![ObservedPoint {
                    j: 0,
                    px: observe(&camera, pl, &p),
                }],
            })
            .collect();
        let tri = triangulate_superpixels(&obs, &camera).unwrap();
        assert!(tri.warnings.is_empty(), "{:?}", tri.warnings);
        assert_eq!(tri.points.len(), 1);
        assert!((tri.points[0].position - p).norm() < 1e-9);
        assert!(tri.points[0].rms_distance < 1e-9);
    }

    #[test]
    fn pixel_noise_keeps_millimeter_accuracy() {
        let camera = CameraModel {
            fx: 800.0,
            fy: 800.0,
            cx: 320.0,
            cy: 240.0,
            width: 640,
            height: 480,
        };
        let p = Vector3::new(0.03, 0.015, 0.0);
        let planes = [
            plane(Vector3::new(0.0, 0.0, 1.0), 0.3),
            plane(Vector3::new(0.3, 0.1, 1.0), 0.33),
            plane(Vector3::new(-0.2, -0.15, 1.0), 0.28),
        ];
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(42);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let (mut worst, mut sum) = (0.0f64, 0.0f64);
        for _ in 0..100 {
            let obs: Vec<MirrorObservation> = planes
                .iter()
                .map(|pl| {
                    let mut px = observe(&camera, pl, &p);
                    px[0] += noise.sample(&mut rng);
                    px[1] += noise.sample(&mut rng);
                    MirrorObservation {
                        plane: *pl,
                        points: vec![ObservedPoint { j: 0, px }],
                    }
                })
                .collect();
            let tri = triangulate_superpixels(&obs, &camera).unwrap();
            let err = (tri.points[0].position - p).norm();
            worst = worst.max(err);
            sum += err;
        }
        assert!(worst < 5e-3, "worst error {worst} m");
        assert!(sum / 100.0 < 2e-3, "mean error {} m", sum / 100.0);
    }

    #[test]
    fn single_observation_is_omitted_with_warning() {
        let camera = calib_camera();
        let p0 = Vector3::new(0.05, 0.0, 0.0);
        let p1 = Vector3::new(-0.05, 0.02, 0.0);
        let planes = [
            plane(Vector3::new(0.0, 0.0, 1.0), 0.3),
            plane(Vector3::new(0.1, -0.05, 1.0), 0.31),
        ];
        let obs = vec![
            MirrorObservation {
                plane: planes[0],
                points: vec![
                    ObservedPoint {
                        j: 0,
                        px: observe(&camera, &planes[0], &p0),
                    },
                    ObservedPoint {
                        j: 5,
                        px: observe(&camera, &planes[0], &p1),
                    },
                ],
            },
            MirrorObservation {
                plane: planes[1],
                points: vec![ObservedPoint {
                    j: 0,
                    px: observe(&camera, &planes[1], &p0),
                }],
            },
        ];
        let tri = triangulate_superpixels(&obs, &camera).unwrap();
        assert_eq!(tri.points.len(), 1);
        assert_eq!(tri.points[0].j, 0);
        assert!(tri.warnings.iter().any(|w| w.contains("superpixel 5")));
    }

    #[test]
    fn near_parallel_rays_warn() {
        let camera = calib_camera();
        let p = Vector3::new(0.05, 0.0, 0.0);
        let planes = [
            plane(Vector3::new(0.0, 0.0, 1.0), 0.3),
            plane(Vector3::new(0.0, 0.0, 1.0), 0.300001),
        ];
        let obs: Vec<MirrorObservation> = planes
            .iter()
            .map(|pl| MirrorObservation {
                plane: *pl,
                points: vec![ObservedPoint {
                    j: 0,
                    px: observe(&camera, pl, &p),
                }],
            })
            .collect();
        let tri = triangulate_superpixels(&obs, &camera).unwrap();
        assert!(
            tri.warnings.iter().any(|w| w.contains("parallel")),
            "{:?}",
            tri.warnings
        );
    }

    #[test]
    fn triangulation_is_rigid_equivariant() {
        let camera = calib_camera();
        let p = Vector3::new(0.07, -0.03, 0.015);
        let planes = [
            plane(Vector3::new(0.0, 0.0, 1.0), 0.3),
            plane(Vector3::new(0.12, 0.06, 1.0), 0.31),
            plane(Vector3::new(-0.08, -0.04, 1.0), 0.29),
        ];
        let solve = |planes: &[MirrorPlane], p: &Vector3<f64>| {
            let obs: Vec<MirrorObservation> = planes
                .iter()
                .map(|pl| MirrorObservation {
                    plane: *pl,
                    points: vec![ObservedPoint {
                        j: 0,
                        px: observe(&camera, pl, p),
                    }],
                })
                .collect();
            triangulate_superpixels(&obs, &camera).unwrap().points[0].position
        };
        let base = solve(&planes, &p);

        let rot = Rotation3::from_euler_angles(0.08, -0.05, 0.04);
        let t = Vector3::new(0.02, -0.01, 0.04);
        let moved_planes: Vec<MirrorPlane> = planes
            .iter()
            .map(|pl| {
                let n = rot * pl.normal();
                MirrorPlane {
                    n: [n.x, n.y, n.z],
                    d: pl.d + n.dot(&t),
                }
            })
            .collect();
        let moved = solve(&moved_planes, &(rot * p + t));
        assert!((moved - (rot * base + t)).norm() < 1e-9);
    }

    #[test]
    fn interpolation_is_identity_when_all_points_given() {
        let grid = DisplayGrid::cylindrical(8, 4, 0.5, 0.6, 0.3);
        let sparse: Vec<(usize, Vector3<f64>)> = (0..32).map(|j| (j, grid.position(j))).collect();
        let out = interpolate_grid(&sparse, 8, 4).unwrap();
        for j in 0..32 {
            assert!((out.position(j) - grid.position(j)).norm() < 1e-15);
        }
    }

    #[test]
    fn four_corners_of_a_plane_interpolate_exactly() {
        let grid = DisplayGrid::planar(4, 3, 0.4, 0.3, 0.12);
        let corners = [0usize, 3, 8, 11];
        let sparse: Vec<(usize, Vector3<f64>)> =
            corners.iter().map(|&j| (j, grid.position(j))).collect();
        let out = interpolate_grid(&sparse, 4, 3).unwrap();
        for j in 0..12 {
            assert!(
                (out.position(j) - grid.position(j)).norm() < 1e-12,
                "superpixel {j}"
            );
        }
    }

    #[test]
    fn curved_grid_interpolation_stays_within_the_chord_bound() {
        let (radius, span) = (0.5, 0.6);
        let grid = DisplayGrid::cylindrical(8, 4, radius, span, 0.3);
        let corners = [0usize, 7, 24, 31];
        let sparse: Vec<(usize, Vector3<f64>)> =
            corners.iter().map(|&j| (j, grid.position(j))).collect();
        let out = interpolate_grid(&sparse, 8, 4).unwrap();
        // Sampled columns subtend 7/8 of the arc; the sagitta of that chord
        // bounds how far the straight interpolant can sit from the surface.
        let half_angle = 0.4375 * span;
        let sagitta = radius * (1.0 - half_angle.cos());
        for j in 0..32 {
            let pos = out.position(j);
            let to_axis = (pos.x.powi(2) + (pos.z - radius).powi(2)).sqrt();
            assert!(
                (to_axis - radius).abs() <= sagitta + 1e-12,
                "superpixel {j}: {} vs sagitta {sagitta}",
                (to_axis - radius).abs()
            );
        }
    }

    #[test]
    fn interpolation_rejects_bad_sparse_sets() {
        let grid = DisplayGrid::planar(4, 3, 0.4, 0.3, 0.0);
        let pos = |j: usize| grid.position(j);
        // Missing the last column.
        let err = interpolate_grid(
            &[(0, pos(0)), (2, pos(2)), (8, pos(8)), (10, pos(10))],
            4,
            3,
        )
        .unwrap_err();
        assert_eq!(err.exit_code(), 2);
        // Incomplete coarse grid: rows {0,2} x cols {0,3} with one cell absent.
        let err = interpolate_grid(&[(0, pos(0)), (3, pos(3)), (8, pos(8))], 4, 3).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        // Duplicate superpixel.
        let err = interpolate_grid(
            &[
                (0, pos(0)),
                (0, pos(0)),
                (3, pos(3)),
                (8, pos(8)),
                (11, pos(11)),
            ],
            4,
            3,
        )
        .unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    fn power_samples(a: f64, gamma: f64, b: f64, n: usize) -> Vec<(f64, f64)> {
        (0..n)
            .map(|i| {
                let u = i as f64 / (n - 1) as f64;
                (u, a * u.powf(gamma) + b)
            })
            .collect()
    }

    #[test]
    fn gamma_curve_is_recovered_exactly() {
        let samples = power_samples(1.0, 2.2, 0.0, 12);
        let (curve, rms) = fit_response(&samples, ResponseModel::Power).unwrap();
        assert!((curve.gamma - 2.2).abs() < 1e-3, "gamma {}", curve.gamma);
        assert!((curve.a - 1.0).abs() < 1e-3);
        assert!(curve.b.abs() < 1e-3);
        assert!(rms < 1e-10, "rms {rms}");
    }

    #[test]
    fn linear_data_fits_gamma_one() {
        let samples = power_samples(1.0, 1.0, 0.0, 8);
        let (curve, rms) = fit_response(&samples, ResponseModel::Power).unwrap();
        assert!((curve.gamma - 1.0).abs() < 1e-3);
        assert!(rms < 1e-10);
    }

    #[test]
    fn gain_and_offset_are_recovered() {
        let samples = power_samples(0.7, 1.8, 0.12, 16);
        let (curve, rms) = fit_response(&samples, ResponseModel::Power).unwrap();
        assert!((curve.a - 0.7).abs() < 1e-6);
        assert!((curve.gamma - 1.8).abs() < 1e-6);
        assert!((curve.b - 0.12).abs() < 1e-6);
        assert!(rms < 1e-10);
    }

    #[test]
    fn noisy_samples_recover_gamma_within_five_percent() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(17);
        let noise = Normal::new(0.0, 0.01).unwrap();
        for trial in 0..20 {
            let mut samples = power_samples(1.0, 2.2, 0.0, 24);
            for s in &mut samples {
                s.1 = (s.1 + noise.sample(&mut rng)).max(0.0);
            }
            let (curve, _) = fit_response(&samples, ResponseModel::Power).unwrap();
            let rel = (curve.gamma - 2.2).abs() / 2.2;
            assert!(
                rel < 0.05,
                "trial {trial}: gamma {} off by {rel}",
                curve.gamma
            );
        }
    }

    #[test]
    fn exponential_model_fits_its_own_data() {
        let samples: Vec<(f64, f64)> = (0..12)
            .map(|i| {
                let u = i as f64 / 11.0;
                (u, 0.2 * (1.5 * u).exp() + 0.05)
            })
            .collect();
        let (curve, rms) = fit_response(&samples, ResponseModel::Exponential).unwrap();
        assert!((curve.a - 0.2).abs() < 1e-6, "a {}", curve.a);
        assert!((curve.gamma - 1.5).abs() < 1e-6, "rate {}", curve.gamma);
        assert!((curve.b - 0.05).abs() < 1e-6);
        assert!(rms < 1e-10);
    }

    #[test]
    fn degenerate_sample_sets_are_rejected() {
        let three = power_samples(1.0, 2.0, 0.0, 3);
        assert!(fit_response(&three, ResponseModel::Power).is_err());
        let repeated = vec![(0.5, 0.2); 6];
        assert!(fit_response(&repeated, ResponseModel::Power).is_err());
        let out_of_range = vec![(1.2, 0.5), (0.1, 0.1), (0.4, 0.3), (0.9, 0.8)];
        assert!(fit_response(&out_of_range, ResponseModel::Power).is_err());
    }

    #[test]
    fn identity_curve_applies_and_inverts_trivially() {
        let curve = ResponseCurve {
            model: ResponseModel::Power,
            a: 1.0,
            gamma: 1.0,
            b: 0.0,
        };
        for x in [0.0, 0.25, 0.5, 1.0] {
            assert_eq!(apply_response(&curve, x), x);
            assert_eq!(invert_response(&curve, x), (x, false));
        }
        let offset = ResponseCurve {
            model: ResponseModel::Power,
            a: 0.8,
            gamma: 2.0,
            b: 0.1,
        };
        assert_eq!(apply_response(&offset, 0.0), 0.1);
        assert!((apply_response(&offset, 1.0) - 0.9).abs() < 1e-15);
    }

    #[test]
    fn response_round_trip() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(3);
        for _ in 0..20 {
            let curve = ResponseCurve {
                model: ResponseModel::Power,
                a: rng.random_range(0.5..1.5),
                gamma: rng.random_range(1.0..3.0),
                b: rng.random_range(0.0..0.2),
            };
            for _ in 0..50 {
                let x = rng.random_range(0.0..1.0);
                let (back, clamped) = invert_response(&curve, apply_response(&curve, x));
                assert!(!clamped);
                assert!((back - x).abs() < 1e-9, "{back} vs {x}");
            }
        }
    }

    #[test]
    fn out_of_range_inversions_clamp_and_flag() {
        let curve = ResponseCurve {
            model: ResponseModel::Power,
            a: 0.8,
            gamma: 2.2,
            b: 0.1,
        };
        assert_eq!(invert_response(&curve, 0.05), (0.0, true));
        assert_eq!(invert_response(&curve, 1.2), (1.0, true));
    }

    /// Mirror-calibrates a curved display from a 3x3 subset, then checks that
    /// reconstruction with the interpolated geometry stays close to what the
    /// true geometry achieves under the same depth-mismatch conditions.
    #[test]
    fn calibrated_curved_display_reconstructs_comparably() {
        let (cols, rows) = (8usize, 4usize);
        let true_grid = DisplayGrid::cylindrical(cols, rows, 0.5, 0.6, 0.3);

        // Mirror stage: observe a 3x3 index subset through three poses.
        let calib_cam = calib_camera();
        let planes = [
            plane(Vector3::new(0.0, 0.0, 1.0), 0.35),
            plane(Vector3::new(0.14, 0.05, 1.0), 0.37),
            plane(Vector3::new(-0.1, -0.08, 1.0), 0.33),
        ];
        let subset: Vec<usize> = [0usize, 2, 3]
            .iter()
            .flat_map(|&r| [0usize, 3, 7].iter().map(move |&c| r * cols + c))
            .collect();
        let obs: Vec<MirrorObservation> = planes
            .iter()
            .map(|pl| MirrorObservation {
                plane: *pl,
                points: subset
                    .iter()
                    .map(|&j| ObservedPoint {
                        j,
                        px: observe(&calib_cam, pl, &true_grid.position(j)),
                    })
                    .collect(),
            })
            .collect();
        let tri = triangulate_superpixels(&obs, &calib_cam).unwrap();
        assert_eq!(tri.points.len(), subset.len());
        let sparse: Vec<(usize, Vector3<f64>)> =
            tri.points.iter().map(|p| (p.j, p.position)).collect();
        let calibrated = interpolate_grid(&sparse, cols, rows).unwrap();

        // Reconstruction stage: render with the true curved grid under
        // falloff and an off-plane surface, then reconstruct with each grid.
        let camera = CameraModel {
            fx: 80.0,
            fy: 80.0,
            cx: 16.0,
            cy: 16.0,
            width: 32,
            height: 32,
        };
        let scene = Scene {
            surface: Surface::Plane {
                normal: Vector3::new(0.25, -0.2, -1.0),
                depth: 0.55,
            },
            albedo: AlbedoModel::Uniform([0.7, 0.6, 0.5]),
            specular: None,
        };
        let opts = RenderOpts {
            falloff: true,
            plane_depth: 0.5,
        };
        let sample = render_basis(&scene, &camera, &true_grid, &opts).unwrap();
        let m = init_heuristic(PatternKind::MonoRandom, 4, &true_grid, 6).unwrap();
        let captures = simulate_captures(&m, &sample.basis).unwrap();
        let albedo = estimate_albedo_max(&captures);

        let mut losses = [0.0f64; 2];
        for (slot, grid) in [&true_grid, &calibrated].iter().enumerate() {
            let field = build_illumination_field(&camera, grid, 0.5).unwrap();
            let normals = reconstruct_normals(&captures, &m, &field, &albedo).unwrap();
            losses[slot] = cosine_loss(&normals, &sample.gt_normals, &sample.mask).unwrap();
        }
        assert!(losses[0] > 1e-6, "true-geometry loss suspiciously exact");
        assert!(losses[0] < 0.2, "true-geometry loss {}", losses[0]);
        assert!(
            losses[1] <= 2.0 * losses[0],
            "calibrated {} vs true {}",
            losses[1],
            losses[0]
        );
    }
}
