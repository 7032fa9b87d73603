//! 8-bit PNG visualizations of normals, loss maps, and display patterns.

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{ImageGray, ImageRgb};
use crate::patterns::{PatternSet, Space};
use crate::photostereo::NormalMap;

fn to_byte(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

fn save_png(path: &Path, bytes: &[u8], w: usize, h: usize, color: image::ColorType) -> Result<()> {
    image::save_buffer(path, bytes, w as u32, h as u32, color)
        .map_err(|e| Error::io(format!("{}: {e}", path.display())))
}

/// Normal components mapped to `((n_x+1)/2, (n_y+1)/2, (-n_z+1)/2)`;
/// invalid pixels are black.
pub fn save_normal_png(n: &NormalMap, path: impl AsRef<Path>) -> Result<()> {
    let (w, h) = (n.width(), n.height());
    let mut bytes = vec![0u8; w * h * 3];
    for y in 0..h {
        for x in 0..w {
            if !n.valid.is_on(x, y) {
                continue;
            }
            let v = n.get(x, y);
            let o = (y * w + x) * 3;
            bytes[o] = to_byte((v.x + 1.0) / 2.0);
            bytes[o + 1] = to_byte((v.y + 1.0) / 2.0);
            bytes[o + 2] = to_byte((-v.z + 1.0) / 2.0);
        }
    }
    save_png(path.as_ref(), &bytes, w, h, image::ColorType::Rgb8)
}

/// Linear [0,1] values clamped into 8-bit RGB, for albedo and capture images.
pub fn save_rgb_png(img: &ImageRgb, path: impl AsRef<Path>) -> Result<()> {
    let bytes: Vec<u8> = img.data().iter().map(|&v| to_byte(v)).collect();
    save_png(
        path.as_ref(),
        &bytes,
        img.width(),
        img.height(),
        image::ColorType::Rgb8,
    )
}

/// Per-pixel loss scaled by 2 and clamped, as grayscale.
pub fn save_loss_png(map: &ImageGray, path: impl AsRef<Path>) -> Result<()> {
    let (w, h) = (map.width(), map.height());
    let bytes: Vec<u8> = map
        .data()
        .iter()
        .map(|&v| to_byte((v * 2.0).clamp(0.0, 1.0)))
        .collect();
    save_png(path.as_ref(), &bytes, w, h, image::ColorType::L8)
}

/// Cell edge length, in pixels, of one superpixel in pattern PNGs.
pub const PATTERN_CELL_PX: usize = 16;

/// All K patterns stacked vertically with a 2-pixel divider, each superpixel
/// drawn as a [`PATTERN_CELL_PX`]-sized block.
pub fn save_pattern_sheet_png(m: &PatternSet, path: impl AsRef<Path>) -> Result<()> {
    if m.space != Space::Intensity {
        return Err(Error::argument(
            "pattern visualization needs intensity space",
        ));
    }
    let cell = PATTERN_CELL_PX;
    let gap = 2usize;
    let w = m.grid_cols * cell;
    let pattern_h = m.grid_rows * cell;
    let h = m.k * pattern_h + (m.k - 1) * gap;
    let mut bytes = vec![0u8; w * h * 3];
    for i in 0..m.k {
        let y0 = i * (pattern_h + gap);
        for r in 0..m.grid_rows {
            for c in 0..m.grid_cols {
                let j = r * m.grid_cols + c;
                let px = [
                    to_byte(m.value(i, j, 0)),
                    to_byte(m.value(i, j, 1)),
                    to_byte(m.value(i, j, 2)),
                ];
                for dy in 0..cell {
                    for dx in 0..cell {
                        let o = ((y0 + r * cell + dy) * w + c * cell + dx) * 3;
                        bytes[o..o + 3].copy_from_slice(&px);
                    }
                }
            }
        }
    }
    save_png(path.as_ref(), &bytes, w, h, image::ColorType::Rgb8)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::DisplayGrid;
    use crate::image::Mask;
    use crate::patterns::{init_heuristic, PatternKind};
    use nalgebra::Vector3;

    #[test]
    fn facing_normal_encodes_to_blue() {
        let mut n = NormalMap::zeros(2, 2);
        for y in 0..2 {
            for x in 0..2 {
                n.set(x, y, Vector3::new(0.0, 0.0, -1.0));
                n.valid.set(x, y, 1.0);
            }
        }
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("n.png");
        save_normal_png(&n, &path).unwrap();
        let img = image::open(&path).unwrap().to_rgb8();
        let px = img.get_pixel(0, 0);
        assert!((px[0] as i32 - 128).abs() <= 1);
        assert!((px[1] as i32 - 128).abs() <= 1);
        assert_eq!(px[2], 255);
    }

    #[test]
    fn rgb_png_clamps_out_of_range_values() {
        let mut img = ImageRgb::zeros(2, 1);
        img.set(0, 0, [0.5, 1.4, -0.2]);
        img.set(1, 0, [1.0, 0.0, 0.25]);
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("rgb.png");
        save_rgb_png(&img, &path).unwrap();
        let out = image::open(&path).unwrap().to_rgb8();
        assert_eq!(*out.get_pixel(0, 0), image::Rgb([128, 255, 0]));
        assert_eq!(*out.get_pixel(1, 0), image::Rgb([255, 0, 64]));
    }

    #[test]
    fn zero_loss_map_is_black() {
        let map = ImageGray::zeros(3, 2);
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("loss.png");
        save_loss_png(&map, &path).unwrap();
        let img = image::open(&path).unwrap().to_luma8();
        assert!(img.pixels().all(|p| p[0] == 0));
        assert_eq!(img.dimensions(), (3, 2));
    }

    #[test]
    fn loss_map_doubles_and_clamps() {
        let mut map = ImageGray::zeros(2, 1);
        map.set(0, 0, 0.25);
        map.set(1, 0, 0.8);
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("loss.png");
        save_loss_png(&map, &path).unwrap();
        let img = image::open(&path).unwrap().to_luma8();
        assert_eq!(img.get_pixel(0, 0)[0], 128);
        assert_eq!(img.get_pixel(1, 0)[0], 255);
    }

    #[test]
    fn pattern_sheet_has_upscaled_dimensions() {
        let grid = DisplayGrid::planar(8, 4, 0.6, 0.3, 0.0);
        let m = init_heuristic(PatternKind::FlatGray, 2, &grid, 1).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("patterns.png");
        save_pattern_sheet_png(&m, &path).unwrap();
        let img = image::open(&path).unwrap();
        assert_eq!(img.width(), 8 * 16);
        assert_eq!(img.height(), (2 * 4 * 16 + 2) as u32);
    }

    #[test]
    fn invalid_pixels_render_black() {
        let mut n = NormalMap::zeros(2, 1);
        n.set(0, 0, Vector3::new(1.0, 0.0, 0.0));
        n.valid = Mask::zeros(2, 1);
        n.valid.set(0, 0, 1.0);
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("n.png");
        save_normal_png(&n, &path).unwrap();
        let img = image::open(&path).unwrap().to_rgb8();
        assert_eq!(img.get_pixel(0, 0)[0], 255);
        assert_eq!(*img.get_pixel(1, 0), image::Rgb([0, 0, 0]));
    }
}
