//! Scoring of pattern sets on dataset splits and the initialization-versus-K
//! sweep that compares heuristic starts with their end-to-end trained
//! counterparts.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::geometry::build_illumination_field;
use crate::learner::{train, TrainConfig};
use crate::patterns::{PatternKind, PatternSet, Space};
use crate::photostereo::{
    cosine_loss, estimate_albedo_max, reconstruct_normals, simulate_captures,
};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Serialize)]
pub struct SceneLoss {
    pub scene: String,
    /// Absent when the scene has no valid pixels under these patterns.
    pub loss: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalSummary {
    /// Mean over the scenes that produced a loss.
    pub mean_loss: f64,
    pub per_scene: Vec<SceneLoss>,
}

/// Scores a pattern set on one split: simulate captures, estimate albedo,
/// reconstruct normals, and average the cosine loss per scene and across
/// scenes. Logit-space patterns are mapped to intensities first.
pub fn evaluate_dataset(
    m: &PatternSet,
    dataset: &Dataset,
    split: Split,
    plane_depth: f64,
) -> Result<EvalSummary> {
    let intensities = match m.space {
        Space::Intensity => m.clone(),
        Space::Logit => m.to_intensity(),
    };
    let scenes = dataset.split(split);
    if scenes.is_empty() {
        return Err(Error::argument("dataset split is empty"));
    }
    let mut per_scene = Vec::with_capacity(scenes.len());
    let (mut total, mut used) = (0.0f64, 0usize);
    for sc in scenes {
        let name = sc
            .dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| sc.dir.display().to_string());
        let field = build_illumination_field(&sc.sample.camera, &sc.sample.grid, plane_depth)?;
        let captures = simulate_captures(&intensities, &sc.sample.basis)?;
        let albedo = estimate_albedo_max(&captures);
        let normals = reconstruct_normals(&captures, &intensities, &field, &albedo)?;
        match cosine_loss(&normals, &sc.sample.gt_normals, &sc.sample.mask) {
            Ok(loss) => {
                total += loss;
                used += 1;
                per_scene.push(SceneLoss {
                    scene: name,
                    loss: Some(loss),
                });
            }
            Err(_) => per_scene.push(SceneLoss {
                scene: name,
                loss: None,
            }),
        }
    }
    if used == 0 {
        return Err(Error::argument("no scene in the split has valid pixels"));
    }
    Ok(EvalSummary {
        mean_loss: total / used as f64,
        per_scene,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenePair {
    pub scene: String,
    pub initial: Option<f64>,
    pub learned: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalRow {
    pub name: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub initial_test_loss: f64,
    pub learned_test_loss: f64,
    /// Training epoch the learned patterns came from; 0 is the initialization.
    pub best_epoch: usize,
    pub per_scene: Vec<ScenePair>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepConfig {
    pub kinds: Vec<PatternKind>,
    #[serde(rename = "Ks")]
    pub ks: Vec<usize>,
    /// Shared training hyperparameters; each cell overrides kind and K.
    pub train: TrainConfig,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub tool_version: String,
    pub config: SweepConfig,
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(format!("{}: {e}", path.display())))
    }

    /// Aligned text table with one row per (kind, K) cell.
    pub fn to_table(&self) -> String {
        let name_w = self
            .rows
            .iter()
            .map(|r| r.name.len())
            .chain(std::iter::once("name".len()))
            .max()
            .expect("nonempty");
        let mut out = format!("{:<name_w$}   K     initial     learned\n", "name");
        for r in &self.rows {
            out.push_str(&format!(
                "{:<name_w$}  {:>2}  {:>10.6}  {:>10.6}\n",
                r.name, r.k, r.initial_test_loss, r.learned_test_loss
            ));
        }
        out
    }
}

/// Trains every (kind, K) cell on the dataset and reports its heuristic
/// initialization against the best-epoch result, both scored on the test
/// split. Cells run sequentially unless `jobs > 1`, in which case each cell
/// writes to its own subdirectory of `out_dir`.
pub fn sweep(
    dataset: &Dataset,
    kinds: &[PatternKind],
    ks: &[usize],
    base: &TrainConfig,
    out_dir: Option<&Path>,
    jobs: usize,
) -> Result<EvalReport> {
    if kinds.is_empty() || ks.is_empty() {
        return Err(Error::argument("sweep needs at least one kind and one K"));
    }
    if jobs == 0 {
        return Err(Error::argument("jobs must be at least 1"));
    }
    base.validate()?;
    let mut cells = Vec::new();
    for &kind in kinds {
        for &k in ks {
            cells.push((kind, k));
        }
    }
    let run_cell = |&(kind, k): &(PatternKind, usize)| -> Result<EvalRow> {
        let config = TrainConfig {
            kind,
            k: Some(k),
            ..base.clone()
        };
        let cell_dir = out_dir.map(|d| d.join(format!("{}-K{k}", kind.name())));
        if let Some(dir) = &cell_dir {
            fs::create_dir_all(dir).map_err(|e| Error::io(format!("{}: {e}", dir.display())))?;
        }
        let report = train(&config, dataset, cell_dir.as_deref())?;
        let initial = evaluate_dataset(
            &report.initial_patterns,
            dataset,
            Split::Test,
            config.plane_depth,
        )?;
        let learned = evaluate_dataset(
            &report.best_patterns,
            dataset,
            Split::Test,
            config.plane_depth,
        )?;
        let per_scene = initial
            .per_scene
            .into_iter()
            .zip(learned.per_scene)
            .map(|(a, b)| ScenePair {
                scene: a.scene,
                initial: a.loss,
                learned: b.loss,
            })
            .collect();
        Ok(EvalRow {
            name: kind.name().to_string(),
            k,
            initial_test_loss: initial.mean_loss,
            learned_test_loss: learned.mean_loss,
            best_epoch: report.best_epoch,
            per_scene,
        })
    };
    let rows: Result<Vec<EvalRow>> = if jobs == 1 {
        cells.iter().map(run_cell).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::argument(format!("thread pool: {e}")))?;
        pool.install(|| cells.par_iter().map(run_cell).collect())
    };
    let mut rows = rows?;
    rows.sort_by(|a, b| a.name.cmp(&b.name).then(a.k.cmp(&b.k)));
    Ok(EvalReport {
        tool_version: TOOL_VERSION.to_string(),
        config: SweepConfig {
            kinds: kinds.to_vec(),
            ks: ks.to_vec(),
            train: base.clone(),
        },
        rows,
    })
}
