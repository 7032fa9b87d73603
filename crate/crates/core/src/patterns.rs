//! Display pattern sets: logit/intensity parameterization and the catalog of
//! heuristic initializers.
//!
//! Optimization runs on unconstrained logits; the display shows the sigmoid of
//! them. Catalog initializers keep intensities inside [0.1, 0.9] so no pattern
//! starts in the saturated, zero-gradient region of the sigmoid.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::DisplayGrid;
use crate::image::ImageRgb;

/// Domain of the stored values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Space {
    Logit,
    Intensity,
}

/// The nine catalog initializers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PatternKind {
    Olat,
    GroupOlat,
    MonoGradient,
    MonoComplementary,
    TriGradient,
    TriComplementary,
    FlatGray,
    MonoRandom,
    TriRandom,
}

impl PatternKind {
    pub const ALL: [PatternKind; 9] = [
        PatternKind::Olat,
        PatternKind::GroupOlat,
        PatternKind::MonoGradient,
        PatternKind::MonoComplementary,
        PatternKind::TriGradient,
        PatternKind::TriComplementary,
        PatternKind::FlatGray,
        PatternKind::MonoRandom,
        PatternKind::TriRandom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PatternKind::Olat => "olat",
            PatternKind::GroupOlat => "group-olat",
            PatternKind::MonoGradient => "mono-gradient",
            PatternKind::MonoComplementary => "mono-complementary",
            PatternKind::TriGradient => "tri-gradient",
            PatternKind::TriComplementary => "tri-complementary",
            PatternKind::FlatGray => "flat-gray",
            PatternKind::MonoRandom => "mono-random",
            PatternKind::TriRandom => "tri-random",
        }
    }

    /// Pattern count used in the standard comparison: the trichromatic kinds
    /// carry their information in color and need only two patterns.
    pub fn default_k(self) -> usize {
        match self {
            PatternKind::TriGradient | PatternKind::TriComplementary | PatternKind::TriRandom => 2,
            _ => 4,
        }
    }
}

impl fmt::Display for PatternKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PatternKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<PatternKind> {
        let lower = s.to_ascii_lowercase();
        PatternKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == lower)
            .ok_or_else(|| Error::argument(format!("unknown pattern kind {s:?}")))
    }
}

/// K display patterns over a cols×rows superpixel grid, stored flat as
/// `(pattern * P + superpixel) * 3 + channel`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternSet {
    pub k: usize,
    pub grid_cols: usize,
    pub grid_rows: usize,
    pub space: Space,
    pub seed: u64,
    values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridDims {
    pub cols: usize,
    pub rows: usize,
}

/// JSON representation of a pattern set: values indexed `[K][P][channel]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatternFile {
    pub grid: GridDims,
    #[serde(rename = "K")]
    pub k: usize,
    pub space: Space,
    pub seed: u64,
    pub values: Vec<Vec<[f64; 3]>>,
}

impl PatternSet {
    pub fn new(
        k: usize,
        grid_cols: usize,
        grid_rows: usize,
        space: Space,
        seed: u64,
        values: Vec<f64>,
    ) -> Result<PatternSet> {
        let p = grid_cols * grid_rows;
        if p < 2 {
            return Err(Error::argument("pattern grid needs at least 2 superpixels"));
        }
        if values.len() != k * p * 3 {
            return Err(Error::argument(format!(
                "pattern buffer length {} does not match K={k}, P={p}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::argument("pattern values must be finite"));
        }
        if space == Space::Intensity && values.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::argument("intensity values must lie in [0,1]"));
        }
        Ok(PatternSet {
            k,
            grid_cols,
            grid_rows,
            space,
            seed,
            values,
        })
    }

    pub fn num_superpixels(&self) -> usize {
        self.grid_cols * self.grid_rows
    }

    #[inline]
    pub fn value(&self, pattern: usize, superpixel: usize, channel: usize) -> f64 {
        self.values[(pattern * self.num_superpixels() + superpixel) * 3 + channel]
    }

    #[inline]
    pub fn set_value(&mut self, pattern: usize, superpixel: usize, channel: usize, v: f64) {
        let p = self.num_superpixels();
        self.values[(pattern * p + superpixel) * 3 + channel] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Sigmoid of every value when in logit space; identity otherwise.
    pub fn to_intensity(&self) -> PatternSet {
        match self.space {
            Space::Intensity => self.clone(),
            Space::Logit => PatternSet {
                space: Space::Intensity,
                values: self.values.iter().map(|&x| sigmoid(x)).collect(),
                ..*self
            },
        }
    }

    /// Inverse sigmoid of every value when in intensity space; identity
    /// otherwise. Intensities are clamped to [0.01, 0.99] first so the
    /// logits stay finite.
    pub fn to_logits(&self) -> PatternSet {
        match self.space {
            Space::Logit => self.clone(),
            Space::Intensity => PatternSet {
                space: Space::Logit,
                values: self
                    .values
                    .iter()
                    .map(|&y| {
                        let y = y.clamp(0.01, 0.99);
                        (y / (1.0 - y)).ln()
                    })
                    .collect(),
                ..*self
            },
        }
    }

    /// Averages each grid cell's covered image pixels into a superpixel
    /// intensity, one pattern per input image.
    pub fn from_image_stack(images: &[ImageRgb], grid: &DisplayGrid) -> Result<PatternSet> {
        let first = images
            .first()
            .ok_or_else(|| Error::argument("empty image stack"))?;
        let (w, h) = (first.width(), first.height());
        let (cols, rows) = (grid.cols, grid.rows);
        if w < cols || h < rows {
            return Err(Error::argument(format!(
                "{w}x{h} image cannot cover a {cols}x{rows} grid"
            )));
        }
        let mut values = Vec::with_capacity(images.len() * cols * rows * 3);
        for img in images {
            if img.width() != w || img.height() != h {
                return Err(Error::argument("image stack sizes differ"));
            }
            for r in 0..rows {
                for c in 0..cols {
                    let x0 = c * w / cols;
                    let x1 = (c + 1) * w / cols;
                    let y0 = r * h / rows;
                    let y1 = (r + 1) * h / rows;
                    let mut sum = [0.0f64; 3];
                    for y in y0..y1 {
                        for x in x0..x1 {
                            let px = img.get(x, y);
                            for ch in 0..3 {
                                sum[ch] += px[ch];
                            }
                        }
                    }
                    let n = ((x1 - x0) * (y1 - y0)) as f64;
                    for s in sum {
                        values.push((s / n).clamp(0.0, 1.0));
                    }
                }
            }
        }
        PatternSet::new(images.len(), cols, rows, Space::Intensity, 0, values)
    }

    pub fn from_file_repr(file: &PatternFile) -> Result<PatternSet> {
        let p = file.grid.cols * file.grid.rows;
        if file.values.len() != file.k || file.values.iter().any(|pat| pat.len() != p) {
            return Err(Error::argument(
                "pattern values array does not match K and grid",
            ));
        }
        let mut values = Vec::with_capacity(file.k * p * 3);
        for pat in &file.values {
            for px in pat {
                values.extend_from_slice(px);
            }
        }
        PatternSet::new(
            file.k,
            file.grid.cols,
            file.grid.rows,
            file.space,
            file.seed,
            values,
        )
    }

    pub fn to_file_repr(&self) -> PatternFile {
        let p = self.num_superpixels();
        let values = (0..self.k)
            .map(|i| {
                (0..p)
                    .map(|j| {
                        [
                            self.value(i, j, 0),
                            self.value(i, j, 1),
                            self.value(i, j, 2),
                        ]
                    })
                    .collect()
            })
            .collect();
        PatternFile {
            grid: GridDims {
                cols: self.grid_cols,
                rows: self.grid_rows,
            },
            k: self.k,
            space: self.space,
            seed: self.seed,
            values,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<PatternSet> {
        let path = path.as_ref();
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(format!("{}: {e}", path.display())))?;
        let file: PatternFile = serde_json::from_str(&text)?;
        PatternSet::from_file_repr(&file).map_err(|e| Error::io(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&self.to_file_repr())?;
        fs::write(path, text).map_err(|e| Error::io(format!("{}: {e}", path.display())))?;
        Ok(())
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Perimeter cells as (row, col), clockwise from the top-left corner.
fn boundary_cells(cols: usize, rows: usize) -> Vec<(usize, usize)> {
    if rows == 1 {
        return (0..cols).map(|c| (0, c)).collect();
    }
    if cols == 1 {
        return (0..rows).map(|r| (r, 0)).collect();
    }
    let mut cells = Vec::with_capacity(2 * (cols + rows) - 4);
    cells.extend((0..cols).map(|c| (0, c)));
    cells.extend((1..rows).map(|r| (r, cols - 1)));
    cells.extend((0..cols - 1).rev().map(|c| (rows - 1, c)));
    cells.extend((1..rows - 1).rev().map(|r| (r, 0)));
    cells
}

/// K group centers spread over the grid on a small lattice whose aspect ratio
/// follows the grid's.
fn group_centers(k: usize, cols: usize, rows: usize) -> Vec<(usize, usize)> {
    let aspect = (cols as f64 / rows as f64).ln();
    let mut best = (f64::INFINITY, 1, k);
    for gy in 1..=k {
        let gx = k.div_ceil(gy);
        let waste = (gx * gy - k) as f64;
        let score = waste * 1000.0 + ((gx as f64 / gy as f64).ln() - aspect).abs();
        if score <= best.0 {
            best = (score, gx, gy);
        }
    }
    let (_, gx, gy) = best;
    let mut centers = Vec::with_capacity(k);
    for ri in 0..gy {
        for ci in 0..gx {
            if centers.len() == k {
                break;
            }
            let c = (((ci as f64 + 0.5) / gx as f64) * cols as f64) as usize;
            let r = (((ri as f64 + 0.5) / gy as f64) * rows as f64) as usize;
            centers.push((r.min(rows - 1), c.min(cols - 1)));
        }
    }
    centers
}

fn require_2d(kind: PatternKind, cols: usize, rows: usize) -> Result<()> {
    if cols < 2 || rows < 2 {
        return Err(Error::argument(format!(
            "{kind} needs at least a 2x2 grid, got {cols}x{rows}"
        )));
    }
    Ok(())
}

/// Ramp over `n` cells from 0.1 to 0.9 (or reversed).
fn ramp(idx: usize, n: usize, forward: bool) -> f64 {
    let t = idx as f64 / (n - 1) as f64;
    let t = if forward { t } else { 1.0 - t };
    0.1 + 0.8 * t
}

/// Binary split over `n` cells: 0.9 on the forward half, 0.1 on the other.
fn binary(idx: usize, n: usize, forward: bool) -> f64 {
    let high = idx >= n / 2;
    if high == forward {
        0.9
    } else {
        0.1
    }
}

/// Builds one of the nine catalog pattern sets. Deterministic for a fixed
/// seed; only the random families consume it.
pub fn init_heuristic(
    kind: PatternKind,
    k: usize,
    grid: &DisplayGrid,
    seed: u64,
) -> Result<PatternSet> {
    if k < 2 {
        return Err(Error::argument("need at least 2 patterns"));
    }
    grid.validate()?;
    let (cols, rows) = (grid.cols, grid.rows);
    let p = cols * rows;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut set = PatternSet::new(k, cols, rows, Space::Intensity, seed, vec![0.5; k * p * 3])?;
    let cell = |j: usize| (j / cols, j % cols);

    match kind {
        PatternKind::Olat => {
            let boundary = boundary_cells(cols, rows);
            if k > boundary.len() {
                return Err(Error::argument(format!(
                    "{k} one-light patterns need {k} boundary superpixels, grid has {}",
                    boundary.len()
                )));
            }
            for i in 0..k {
                let (br, bc) = boundary[i * boundary.len() / k];
                let active = br * cols + bc;
                for j in 0..p {
                    let v = if j == active { 0.9 } else { 0.1 };
                    for c in 0..3 {
                        set.set_value(i, j, c, v);
                    }
                }
            }
        }
        PatternKind::GroupOlat => {
            let centers = group_centers(k, cols, rows);
            for (i, &(gr, gc)) in centers.iter().enumerate() {
                for j in 0..p {
                    let (r, c) = cell(j);
                    let active = r.abs_diff(gr) <= 1 && c.abs_diff(gc) <= 1;
                    let v = if active { 0.9 } else { 0.1 };
                    for ch in 0..3 {
                        set.set_value(i, j, ch, v);
                    }
                }
            }
        }
        PatternKind::MonoGradient => {
            require_2d(kind, cols, rows)?;
            for i in 0..k {
                for j in 0..p {
                    let (r, c) = cell(j);
                    // x-forward, x-backward, y-forward, y-backward, repeating.
                    let v = match i % 4 {
                        0 => ramp(c, cols, true),
                        1 => ramp(c, cols, false),
                        2 => ramp(r, rows, true),
                        _ => ramp(r, rows, false),
                    };
                    for ch in 0..3 {
                        set.set_value(i, j, ch, v);
                    }
                }
            }
        }
        PatternKind::MonoComplementary => {
            require_2d(kind, cols, rows)?;
            for i in 0..k {
                for j in 0..p {
                    let (r, c) = cell(j);
                    let v = match i % 4 {
                        0 => binary(c, cols, true),
                        1 => binary(c, cols, false),
                        2 => binary(r, rows, true),
                        _ => binary(r, rows, false),
                    };
                    for ch in 0..3 {
                        set.set_value(i, j, ch, v);
                    }
                }
            }
        }
        PatternKind::TriGradient => {
            require_2d(kind, cols, rows)?;
            if k != 2 {
                return Err(Error::argument(format!("{kind} requires K=2, got {k}")));
            }
            let cxm = (cols - 1) as f64 / 2.0;
            let cym = (rows - 1) as f64 / 2.0;
            let rmax = cxm.hypot(cym);
            for i in 0..2 {
                let forward = i == 0;
                for j in 0..p {
                    let (r, c) = cell(j);
                    let radial = (c as f64 - cxm).hypot(r as f64 - cym) / rmax;
                    let radial = if forward { radial } else { 1.0 - radial };
                    set.set_value(i, j, 0, ramp(c, cols, forward));
                    set.set_value(i, j, 1, 0.1 + 0.8 * radial);
                    set.set_value(i, j, 2, ramp(r, rows, forward));
                }
            }
        }
        PatternKind::TriComplementary => {
            require_2d(kind, cols, rows)?;
            if k != 2 {
                return Err(Error::argument(format!("{kind} requires K=2, got {k}")));
            }
            for i in 0..2 {
                let forward = i == 0;
                for j in 0..p {
                    let (r, c) = cell(j);
                    // Green switches on opposite quadrant pairs per pattern.
                    let quad = (c >= cols / 2) == (r >= rows / 2);
                    let green = if quad == forward { 0.9 } else { 0.1 };
                    set.set_value(i, j, 0, binary(c, cols, forward));
                    set.set_value(i, j, 1, green);
                    set.set_value(i, j, 2, binary(r, rows, forward));
                }
            }
        }
        PatternKind::FlatGray => {
            let normal = Normal::new(0.5, 0.01).expect("valid stddev");
            for i in 0..k {
                for j in 0..p {
                    let v: f64 = normal.sample(&mut rng);
                    let v = v.clamp(0.0, 1.0);
                    for ch in 0..3 {
                        set.set_value(i, j, ch, v);
                    }
                }
            }
        }
        PatternKind::MonoRandom => {
            for i in 0..k {
                for j in 0..p {
                    let v = 0.1 + 0.8 * rng.random_range(0.0..1.0);
                    for ch in 0..3 {
                        set.set_value(i, j, ch, v);
                    }
                }
            }
        }
        PatternKind::TriRandom => {
            for i in 0..k {
                for j in 0..p {
                    for ch in 0..3 {
                        let v = 0.1 + 0.8 * rng.random_range(0.0..1.0);
                        set.set_value(i, j, ch, v);
                    }
                }
            }
        }
    }
    Ok(set)
}
