//! Synthetic dataset generation and loading.
//!
//! A dataset is a directory of per-scene folders, each holding the basis
//! stack (`basis_###.pfm`), ground-truth normals, coverage mask, and camera,
//! plus a shared display geometry and a manifest describing the train/test
//! split. Scene content is sampled from a seeded generator mixing spheres and
//! tilted planes (plus user meshes), with the true surface depth optionally
//! jittered around the plane the reconstruction later assumes.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraModel, DisplayGrid};
use crate::image::{ImageRgb, Mask};
use crate::mesh::TriMesh;
use crate::pfm;
use crate::photostereo::NormalMap;
use crate::posefit::PoseParams;
use crate::scene::{
    render_basis, AlbedoModel, BasisStack, RenderOpts, Scene, SceneSample, Surface,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Split> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::argument(format!("unknown split '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub train_scenes: usize,
    pub test_scenes: usize,
    pub width: usize,
    pub height: usize,
    /// Focal length in pixels (same for both axes; principal point centered).
    pub focal_px: f64,
    pub grid_cols: usize,
    pub grid_rows: usize,
    pub display_width_m: f64,
    pub display_height_m: f64,
    /// Depth of the working plane the reconstruction assumes.
    pub plane_depth: f64,
    /// Render with inverse-square distance falloff.
    pub falloff: bool,
    /// True surface depths vary by this relative amount around `plane_depth`.
    pub depth_jitter: f64,
    /// Additive Gaussian noise on the stored basis images.
    pub noise_sigma: f64,
    /// Fronto-parallel planes exactly at `plane_depth` instead of the mixed
    /// sampler; pairs with `falloff: false` for exact-model datasets.
    pub on_plane_only: bool,
    /// Extra OBJ meshes cycled into the scene mix.
    pub meshes: Vec<PathBuf>,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> DatasetConfig {
        DatasetConfig {
            train_scenes: 12,
            test_scenes: 4,
            width: 64,
            height: 64,
            focal_px: 160.0,
            grid_cols: 8,
            grid_rows: 4,
            display_width_m: 0.6,
            display_height_m: 0.3,
            plane_depth: 0.5,
            falloff: true,
            depth_jitter: 0.2,
            noise_sigma: 0.0,
            on_plane_only: false,
            meshes: Vec::new(),
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<DatasetConfig> {
        let path = path.as_ref();
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(format!("{}: {e}", path.display())))?;
        let cfg: DatasetConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Exact-model preset: fronto-parallel planes on the assumed plane, no
    /// falloff, no jitter, no noise.
    pub fn on_plane() -> DatasetConfig {
        DatasetConfig {
            falloff: false,
            depth_jitter: 0.0,
            on_plane_only: true,
            ..DatasetConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.train_scenes + self.test_scenes == 0 {
            return Err(Error::argument("dataset needs at least one scene"));
        }
        if self.width < 2 || self.height < 2 {
            return Err(Error::argument("resolution too small"));
        }
        if self.grid_cols * self.grid_rows < 2 {
            return Err(Error::argument("display grid needs at least 2 cells"));
        }
        if !(self.focal_px > 0.0
            && self.display_width_m > 0.0
            && self.display_height_m > 0.0
            && self.plane_depth > 0.0)
        {
            return Err(Error::argument("camera and display sizes must be positive"));
        }
        if !(0.0..1.0).contains(&self.depth_jitter) {
            return Err(Error::argument("depth jitter must be in [0, 1)"));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::argument("noise sigma must be nonnegative"));
        }
        Ok(())
    }

    pub fn camera(&self) -> CameraModel {
        CameraModel {
            fx: self.focal_px,
            fy: self.focal_px,
            cx: self.width as f64 / 2.0,
            cy: self.height as f64 / 2.0,
            width: self.width,
            height: self.height,
        }
    }

    pub fn grid(&self) -> DisplayGrid {
        DisplayGrid::planar(
            self.grid_cols,
            self.grid_rows,
            self.display_width_m,
            self.display_height_m,
            0.0,
        )
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestScene {
    dir: String,
    split: Split,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    grid_geometry: String,
    scenes: Vec<ManifestScene>,
}

fn sample_scene(cfg: &DatasetConfig, meshes: &[TriMesh], rng: &mut Xoshiro256PlusPlus) -> Scene {
    let depth = if cfg.depth_jitter > 0.0 {
        cfg.plane_depth * (1.0 + cfg.depth_jitter * rng.random_range(-1.0..1.0))
    } else {
        cfg.plane_depth
    };
    let surface = if cfg.on_plane_only {
        Surface::Plane {
            normal: Vector3::new(0.0, 0.0, -1.0),
            depth: cfg.plane_depth,
        }
    } else {
        let choice = rng.random_range(0.0..1.0);
        if !meshes.is_empty() && choice < 0.25 {
            let mesh = meshes[rng.random_range(0..meshes.len())].clone();
            let pose = PoseParams {
                t: Vector3::new(
                    rng.random_range(-0.02..0.02),
                    rng.random_range(-0.02..0.02),
                    depth,
                ),
                r: Vector3::new(
                    rng.random_range(-0.3..0.3),
                    rng.random_range(-0.3..0.3),
                    rng.random_range(-0.3..0.3),
                ),
            };
            Surface::Mesh { mesh, pose }
        } else if choice < 0.625 {
            Surface::Sphere {
                center: Vector3::new(
                    rng.random_range(-0.03..0.03),
                    rng.random_range(-0.03..0.03),
                    depth,
                ),
                radius: rng.random_range(0.025..0.06),
            }
        } else {
            Surface::Plane {
                normal: Vector3::new(
                    rng.random_range(-0.6..0.6),
                    rng.random_range(-0.6..0.6),
                    -1.0,
                ),
                depth,
            }
        }
    };
    let albedo = if rng.random_range(0.0..1.0) < 0.5 {
        AlbedoModel::Uniform([
            rng.random_range(0.2..0.95),
            rng.random_range(0.2..0.95),
            rng.random_range(0.2..0.95),
        ])
    } else {
        AlbedoModel::Checker {
            a: [
                rng.random_range(0.4..0.95),
                rng.random_range(0.4..0.95),
                rng.random_range(0.4..0.95),
            ],
            b: [
                rng.random_range(0.1..0.5),
                rng.random_range(0.1..0.5),
                rng.random_range(0.1..0.5),
            ],
            cell: rng.random_range(0.01..0.03),
        }
    };
    Scene {
        surface,
        albedo,
        specular: None,
    }
}

fn add_noise(stack: &mut [ImageRgb], sigma: f64, seed: u64) {
    if sigma <= 0.0 {
        return;
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("positive sigma");
    for img in stack {
        for v in img.data_mut() {
            *v = (*v + normal.sample(&mut rng)).max(0.0);
        }
    }
}

/// Renders every scene to `out_dir` and returns the manifest path.
pub fn dataset_generate(cfg: &DatasetConfig, out_dir: &Path) -> Result<PathBuf> {
    cfg.validate()?;
    let camera = cfg.camera();
    let grid = cfg.grid();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(format!("{}: {e}", out_dir.display())))?;
    grid.save(out_dir.join("geometry.json"))?;

    let meshes: Vec<TriMesh> = cfg
        .meshes
        .iter()
        .map(TriMesh::load_obj)
        .collect::<Result<_>>()?;

    let total = cfg.train_scenes + cfg.test_scenes;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(cfg.seed);
    let scenes: Vec<(Scene, u64)> = (0..total)
        .map(|_| {
            let scene = sample_scene(cfg, &meshes, &mut rng);
            let noise_seed = rng.random::<u64>();
            (scene, noise_seed)
        })
        .collect();

    let opts = RenderOpts {
        falloff: cfg.falloff,
        plane_depth: cfg.plane_depth,
    };
    let rendered: Vec<Result<(SceneSample, u64)>> = scenes
        .par_iter()
        .map(|(scene, noise_seed)| {
            render_basis(scene, &camera, &grid, &opts).map(|s| (s, *noise_seed))
        })
        .collect();

    let mut manifest = Manifest {
        grid_geometry: "geometry.json".into(),
        scenes: Vec::with_capacity(total),
    };
    for (i, item) in rendered.into_iter().enumerate() {
        let (sample, noise_seed) = item?;
        let dir_name = format!("scene_{i:03}");
        let dir = out_dir.join(&dir_name);
        fs::create_dir_all(&dir).map_err(|e| Error::io(format!("{}: {e}", dir.display())))?;
        let mut basis: Vec<ImageRgb> = sample.basis.images().to_vec();
        add_noise(&mut basis, cfg.noise_sigma, noise_seed);
        for (j, img) in basis.iter().enumerate() {
            pfm::write_rgb(dir.join(format!("basis_{j:03}.pfm")), img)?;
        }
        pfm::write_rgb(dir.join("normals.pfm"), &sample.gt_normals.to_rgb())?;
        pfm::write_gray(dir.join("mask.pfm"), &sample.mask)?;
        camera.save(dir.join("camera.json"))?;
        manifest.scenes.push(ManifestScene {
            dir: dir_name,
            split: if i < cfg.train_scenes {
                Split::Train
            } else {
                Split::Test
            },
        });
    }

    let manifest_path = out_dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&manifest_path, text + "\n")
        .map_err(|e| Error::io(format!("{}: {e}", manifest_path.display())))?;
    Ok(manifest_path)
}

/// One scene as loaded from disk.
#[derive(Debug, Clone)]
pub struct DatasetScene {
    pub dir: PathBuf,
    pub split: Split,
    pub sample: SceneSample,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub grid: DisplayGrid,
    pub scenes: Vec<DatasetScene>,
}

impl Dataset {
    pub fn load(manifest_path: impl AsRef<Path>) -> Result<Dataset> {
        let manifest_path = manifest_path.as_ref();
        let text = fs::read_to_string(manifest_path)
            .map_err(|e| Error::io(format!("{}: {e}", manifest_path.display())))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        let root = manifest_path.parent().unwrap_or(Path::new("."));
        let grid = DisplayGrid::load(root.join(&manifest.grid_geometry))?;
        let p = grid.num_superpixels();

        let mut scenes = Vec::with_capacity(manifest.scenes.len());
        for entry in &manifest.scenes {
            let dir = root.join(&entry.dir);
            let camera = CameraModel::load(dir.join("camera.json"))?;
            let mask: Mask = pfm::read_gray(dir.join("mask.pfm"))?;
            let normals_img = pfm::read_rgb(dir.join("normals.pfm"))?;
            let gt_normals = NormalMap::from_rgb(&normals_img, mask.clone())?;
            let images: Vec<ImageRgb> = (0..p)
                .map(|j| pfm::read_rgb(dir.join(format!("basis_{j:03}.pfm"))))
                .collect::<Result<_>>()?;
            scenes.push(DatasetScene {
                dir,
                split: entry.split,
                sample: SceneSample {
                    basis: BasisStack::new(images)?,
                    specular_basis: None,
                    gt_normals,
                    mask,
                    camera,
                    grid: grid.clone(),
                },
            });
        }
        Ok(Dataset { grid, scenes })
    }

    pub fn split(&self, split: Split) -> Vec<&DatasetScene> {
        self.scenes.iter().filter(|s| s.split == split).collect()
    }
}
