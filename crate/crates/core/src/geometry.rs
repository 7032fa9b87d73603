//! Camera model, display superpixel geometry, and per-pixel illumination.
//!
//! Coordinates are camera space: right-handed, x right, y down, z forward,
//! camera at the origin. Front-facing surface normals satisfy `n·d < 0` for a
//! viewing ray `d`. Distances are meters.

use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole camera intrinsics. No lens distortion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::argument("camera focal lengths must be positive"));
        }
        if !(0.0 <= self.cx && self.cx < self.width as f64)
            || !(0.0 <= self.cy && self.cy < self.height as f64)
        {
            return Err(Error::argument("camera principal point outside image"));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<CameraModel> {
        let path = path.as_ref();
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(format!("{}: {e}", path.display())))?;
        let cam: CameraModel = serde_json::from_str(&text)?;
        cam.validate()?;
        Ok(cam)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(format!("{}: {e}", path.display())))?;
        Ok(())
    }

    /// Projects a camera-space point to pixel coordinates. `None` when the
    /// point is on or behind the camera plane.
    #[inline]
    pub fn project(&self, p: &Vector3<f64>) -> Option<(f64, f64)> {
        if p.z <= 1e-12 {
            return None;
        }
        Some((self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }
}

/// Display superpixel centers in camera space, row-major with the row index
/// varying slowest: superpixel `j = row * cols + col`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplayGrid {
    pub cols: usize,
    pub rows: usize,
    pub positions: Vec<[f64; 3]>,
}

impl DisplayGrid {
    pub fn new(cols: usize, rows: usize, positions: Vec<[f64; 3]>) -> Result<DisplayGrid> {
        let grid = DisplayGrid {
            cols,
            rows,
            positions,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Flat rectangular display centered on the optical axis at depth `z`,
    /// spanning `width_m` by `height_m`. Superpixel centers sit at cell
    /// midpoints.
    pub fn planar(cols: usize, rows: usize, width_m: f64, height_m: f64, z: f64) -> DisplayGrid {
        let mut positions = Vec::with_capacity(cols * rows);
        for r in 0..rows {
            for c in 0..cols {
                let x = ((c as f64 + 0.5) / cols as f64 - 0.5) * width_m;
                let y = ((r as f64 + 0.5) / rows as f64 - 0.5) * height_m;
                positions.push([x, y, z]);
            }
        }
        DisplayGrid {
            cols,
            rows,
            positions,
        }
    }

    /// Display bent around a vertical cylinder: tangent to the z=0 plane at
    /// its center column and curving toward +z at the edges. `arc_span` is the
    /// total subtended angle in radians.
    pub fn cylindrical(
        cols: usize,
        rows: usize,
        radius: f64,
        arc_span: f64,
        height_m: f64,
    ) -> DisplayGrid {
        let mut positions = Vec::with_capacity(cols * rows);
        for r in 0..rows {
            for c in 0..cols {
                let theta = ((c as f64 + 0.5) / cols as f64 - 0.5) * arc_span;
                let y = ((r as f64 + 0.5) / rows as f64 - 0.5) * height_m;
                positions.push([radius * theta.sin(), y, radius * (1.0 - theta.cos())]);
            }
        }
        DisplayGrid {
            cols,
            rows,
            positions,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.cols * self.rows;
        if p < 2 {
            return Err(Error::argument("display grid needs at least 2 superpixels"));
        }
        if self.positions.len() != p {
            return Err(Error::argument(format!(
                "display grid has {} positions for {}x{} cells",
                self.positions.len(),
                self.cols,
                self.rows
            )));
        }
        if self
            .positions
            .iter()
            .any(|p| p.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::argument("display grid positions must be finite"));
        }
        Ok(())
    }

    pub fn num_superpixels(&self) -> usize {
        self.positions.len()
    }

    #[inline]
    pub fn position(&self, j: usize) -> Vector3<f64> {
        Vector3::from(self.positions[j])
    }

    pub fn load(path: impl AsRef<Path>) -> Result<DisplayGrid> {
        let path = path.as_ref();
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(format!("{}: {e}", path.display())))?;
        let grid: DisplayGrid = serde_json::from_str(&text)?;
        grid.validate()?;
        Ok(grid)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(format!("{}: {e}", path.display())))?;
        Ok(())
    }
}

/// Unit direction from a scene point toward superpixel `j`, plus the distance.
#[inline]
pub fn light_dir_and_dist(grid: &DisplayGrid, p: &Vector3<f64>, j: usize) -> (Vector3<f64>, f64) {
    let d = grid.position(j) - p;
    let r = d.norm();
    (d / r, r)
}

/// Per-pixel light directions toward every superpixel, under the assumption
/// that the scene lies on the fronto-parallel plane `z = plane_depth`.
#[derive(Debug, Clone)]
pub struct IlluminationField {
    width: usize,
    height: usize,
    p: usize,
    plane_depth: f64,
    /// `(y * width + x) * p + j`
    dirs: Vec<Vector3<f64>>,
}

impl IlluminationField {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_superpixels(&self) -> usize {
        self.p
    }

    pub fn plane_depth(&self) -> f64 {
        self.plane_depth
    }

    /// All P directions for one pixel.
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> &[Vector3<f64>] {
        let base = (y * self.width + x) * self.p;
        &self.dirs[base..base + self.p]
    }

    /// Same direction set at every pixel; inputs are normalized. Useful for
    /// distant-light setups and tests.
    pub fn uniform(
        width: usize,
        height: usize,
        directions: &[Vector3<f64>],
        plane_depth: f64,
    ) -> Result<IlluminationField> {
        if directions.len() < 2 {
            return Err(Error::argument("need at least 2 light directions"));
        }
        let unit: Vec<Vector3<f64>> = directions
            .iter()
            .map(|d| {
                let n = d.norm();
                if n <= 1e-12 {
                    Err(Error::argument("zero-length light direction"))
                } else {
                    Ok(d / n)
                }
            })
            .collect::<Result<_>>()?;
        let p = unit.len();
        let mut dirs = Vec::with_capacity(width * height * p);
        for _ in 0..width * height {
            dirs.extend_from_slice(&unit);
        }
        Ok(IlluminationField {
            width,
            height,
            p,
            plane_depth,
            dirs,
        })
    }
}

/// Back-projects a pixel to its unit viewing ray (`d_z > 0`).
#[inline]
pub fn pixel_ray(camera: &CameraModel, px: (f64, f64)) -> Result<Vector3<f64>> {
    let (x, y) = px;
    if !(0.0 <= x && x < camera.width as f64 && 0.0 <= y && y < camera.height as f64) {
        return Err(Error::argument(format!(
            "pixel ({x}, {y}) outside {}x{} image",
            camera.width, camera.height
        )));
    }
    Ok(Vector3::new(
        (x - camera.cx) / camera.fx,
        (y - camera.cy) / camera.fy,
        1.0,
    )
    .normalize())
}

/// Builds the reconstruction-side illumination field: each pixel's ray is
/// pushed out to the plane `z = plane_depth` and connected to every superpixel
/// center.
pub fn build_illumination_field(
    camera: &CameraModel,
    grid: &DisplayGrid,
    plane_depth: f64,
) -> Result<IlluminationField> {
    camera.validate()?;
    grid.validate()?;
    if !(plane_depth > 0.0) {
        return Err(Error::argument("plane depth must be positive"));
    }
    let p = grid.num_superpixels();
    let mut dirs = Vec::with_capacity(camera.width * camera.height * p);
    for y in 0..camera.height {
        for x in 0..camera.width {
            let ray = pixel_ray(camera, (x as f64, y as f64))?;
            let point = ray * (plane_depth / ray.z);
            for j in 0..p {
                let d = grid.position(j) - point;
                let r = d.norm();
                if r < 1e-9 {
                    return Err(Error::numerical(format!(
                        "superpixel {j} coincides with the scene point at pixel ({x}, {y})"
                    )));
                }
                dirs.push(d / r);
            }
        }
    }
    Ok(IlluminationField {
        width: camera.width,
        height: camera.height,
        p,
        plane_depth,
        dirs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn test_camera() -> CameraModel {
        CameraModel {
            fx: 100.0,
            fy: 100.0,
            cx: 32.0,
            cy: 32.0,
            width: 256,
            height: 64,
        }
    }

    #[test]
    fn ray_at_principal_point_is_optical_axis() {
        let d = pixel_ray(&test_camera(), (32.0, 32.0)).unwrap();
        assert_relative_eq!(d, Vector3::new(0.0, 0.0, 1.0), epsilon = 1e-12);
    }

    #[test]
    fn ray_off_axis() {
        let d = pixel_ray(&test_camera(), (132.0, 32.0)).unwrap();
        assert_relative_eq!(d, Vector3::new(0.7071, 0.0, 0.7071), epsilon = 1e-4);
    }

    #[test]
    fn ray_out_of_bounds_is_argument_error() {
        let err = pixel_ray(&test_camera(), (-1.0, 0.0)).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn field_directions_for_unit_offsets() {
        // Center pixel looks straight down the axis; the plane point is
        // (0, 0, 0.5). One light a meter above it, one at the display origin.
        let camera = CameraModel {
            fx: 100.0,
            fy: 100.0,
            cx: 4.0,
            cy: 4.0,
            width: 8,
            height: 8,
        };
        let grid = DisplayGrid::new(2, 1, vec![[0.0, 1.0, 0.5], [0.0, 0.0, 0.0]]).unwrap();
        let field = build_illumination_field(&camera, &grid, 0.5).unwrap();
        let l = field.at(4, 4);
        assert_relative_eq!(l[0], Vector3::new(0.0, 1.0, 0.0), epsilon = 1e-12);
        assert_relative_eq!(l[1], Vector3::new(0.0, 0.0, -1.0), epsilon = 1e-12);
    }

    #[test]
    fn field_shape_and_norms() {
        let camera = CameraModel {
            fx: 160.0,
            fy: 160.0,
            cx: 32.0,
            cy: 32.0,
            width: 64,
            height: 64,
        };
        let grid = DisplayGrid::new(2, 1, vec![[-0.1, 0.0, 0.0], [0.1, 0.0, 0.0]]).unwrap();
        let field = build_illumination_field(&camera, &grid, 0.5).unwrap();
        assert_eq!(
            (field.width(), field.height(), field.num_superpixels()),
            (64, 64, 2)
        );
        for y in 0..64 {
            for x in 0..64 {
                for d in field.at(x, y) {
                    assert!((d.norm() - 1.0).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn coincident_superpixel_is_numerical_error() {
        let camera = CameraModel {
            fx: 100.0,
            fy: 100.0,
            cx: 4.0,
            cy: 4.0,
            width: 8,
            height: 8,
        };
        let grid = DisplayGrid::new(2, 1, vec![[0.0, 0.0, 0.5], [0.0, 1.0, 0.0]]).unwrap();
        let err = build_illumination_field(&camera, &grid, 0.5).unwrap_err();
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn permuting_positions_permutes_field() {
        let camera = CameraModel {
            fx: 120.0,
            fy: 130.0,
            cx: 3.0,
            cy: 2.0,
            width: 7,
            height: 5,
        };
        let positions = vec![[-0.2, 0.1, 0.0], [0.3, -0.1, 0.05], [0.0, 0.2, -0.02]];
        let grid = DisplayGrid::new(3, 1, positions.clone()).unwrap();
        let perm = [2usize, 0, 1];
        let permuted =
            DisplayGrid::new(3, 1, perm.iter().map(|&k| positions[k]).collect()).unwrap();
        let f0 = build_illumination_field(&camera, &grid, 0.5).unwrap();
        let f1 = build_illumination_field(&camera, &permuted, 0.5).unwrap();
        for y in 0..5 {
            for x in 0..7 {
                let a = f0.at(x, y);
                let b = f1.at(x, y);
                for (jb, &ja) in perm.iter().enumerate() {
                    assert_eq!(a[ja], b[jb]);
                }
            }
        }
    }

    #[test]
    fn depth_perturbation_moves_directions_proportionally() {
        let camera = CameraModel {
            fx: 120.0,
            fy: 120.0,
            cx: 8.0,
            cy: 8.0,
            width: 16,
            height: 16,
        };
        let grid = DisplayGrid::planar(4, 2, 0.6, 0.3, 0.0);
        let eps = 1e-4;
        let f0 = build_illumination_field(&camera, &grid, 0.5).unwrap();
        let f1 = build_illumination_field(&camera, &grid, 0.5 + eps).unwrap();
        let mut max_angle: f64 = 0.0;
        for y in 0..16 {
            for x in 0..16 {
                for (a, b) in f0.at(x, y).iter().zip(f1.at(x, y)) {
                    max_angle = max_angle.max(a.dot(b).clamp(-1.0, 1.0).acos());
                }
            }
        }
        // Directions drift at a rate bounded by geometry, so the angle is
        // proportional to the depth step.
        assert!(max_angle < 10.0 * eps, "max angle {max_angle}");
    }

    #[test]
    fn grid_json_matches_interface() {
        let grid = DisplayGrid::new(2, 1, vec![[0.0, 0.1, 0.2], [0.3, 0.4, 0.5]]).unwrap();
        let json = serde_json::to_value(&grid).unwrap();
        assert_eq!(json["cols"], 2);
        assert_eq!(json["rows"], 1);
        assert_eq!(json["positions"][1][2], 0.5);
        let camera = test_camera();
        let cam_json = serde_json::to_value(camera).unwrap();
        for key in ["fx", "fy", "cx", "cy", "width", "height"] {
            assert!(cam_json.get(key).is_some(), "missing {key}");
        }
    }

    #[test]
    fn invalid_inputs_rejected() {
        assert!(DisplayGrid::new(1, 1, vec![[0.0; 3]]).is_err());
        assert!(DisplayGrid::new(2, 1, vec![[f64::NAN, 0.0, 0.0], [0.0; 3]]).is_err());
        let bad = CameraModel {
            fx: -1.0,
            ..test_camera()
        };
        assert!(bad.validate().is_err());
        let grid = DisplayGrid::planar(2, 2, 0.6, 0.3, 0.0);
        assert!(build_illumination_field(&test_camera(), &grid, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn ray_projects_back_to_pixel(
            x in 0.0..255.0f64,
            y in 0.0..63.0f64,
        ) {
            let camera = test_camera();
            let d = pixel_ray(&camera, (x, y)).unwrap();
            let (px, py) = camera.project(&d).unwrap();
            prop_assert!((px - x).abs() < 1e-9);
            prop_assert!((py - y).abs() < 1e-9);
        }
    }
}
