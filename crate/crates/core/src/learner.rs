//! Gradient-based optimization of display patterns.
//!
//! The training objective is the cosine loss of the analytic reconstruction
//! against ground-truth normals, averaged per pixel, then per scene, then
//! over the batch. Its gradient with respect to the pattern logits is
//! evaluated in closed form by differentiating through the sigmoid, the
//! capture simulation, the max-intensity albedo estimate (routed to the
//! recorded argmax capture), and the per-pixel least-squares solve with
//! normalization. A central-difference oracle cross-checks the closed form.

use std::fs;
use std::path::Path;
use std::time::Instant;

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::geometry::{build_illumination_field, IlluminationField};
use crate::patterns::{init_heuristic, PatternFile, PatternKind, PatternSet, Space};
use crate::photostereo::{
    estimate_albedo_max, reconstruct_normals, simulate_captures, solve_pixel,
    INTENSITY_REL_THRESHOLD,
};
use crate::scene::SceneSample;
use crate::viz;

/// One batch element: a rendered scene plus the illumination field cached for
/// its camera.
pub type BatchScene<'a> = (&'a SceneSample, &'a IlluminationField);

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Catalog initializer for the starting patterns.
    pub kind: PatternKind,
    /// Pattern count; `None` uses the kind's standard K.
    #[serde(rename = "K")]
    pub k: Option<usize>,
    pub init_seed: u64,
    pub learning_rate: f64,
    pub decay_factor: f64,
    pub decay_step_epochs: usize,
    pub epochs: usize,
    pub batch_size: usize,
    /// Working-plane depth assumed by the reconstruction.
    pub plane_depth: f64,
    /// Seed for the per-epoch batch shuffle.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            kind: PatternKind::FlatGray,
            k: None,
            init_seed: 0,
            learning_rate: 0.3,
            decay_factor: 0.3,
            decay_step_epochs: 5,
            epochs: 30,
            batch_size: 2,
            plane_depth: 0.5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn resolved_k(&self) -> usize {
        self.k.unwrap_or_else(|| self.kind.default_k())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::argument("learning rate must be positive"));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::argument("decay factor must lie in (0, 1]"));
        }
        if self.decay_step_epochs < 1 {
            return Err(Error::argument("decay step must be at least 1 epoch"));
        }
        if self.epochs < 1 {
            return Err(Error::argument("need at least 1 epoch"));
        }
        if self.batch_size < 1 {
            return Err(Error::argument("batch size must be at least 1"));
        }
        if self.resolved_k() < 2 {
            return Err(Error::argument("need at least 2 patterns"));
        }
        if !(self.plane_depth > 0.0) {
            return Err(Error::argument("plane depth must be positive"));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<TrainConfig> {
        let path = path.as_ref();
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(format!("{}: {e}", path.display())))?;
        let cfg: TrainConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Bias-corrected first- and second-moment estimates, one slot per logit.
#[derive(Debug, Clone, Serialize)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> AdamState {
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One in-place Adam update of `logits`.
pub fn adam_step(state: &mut AdamState, logits: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
    if state.m.len() != logits.len() || grad.len() != logits.len() {
        return Err(Error::argument("gradient shape differs from the logits"));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::numerical("non-finite gradient"));
    }
    state.step += 1;
    let bc1 = 1.0 - state.beta1.powi(state.step as i32);
    let bc2 = 1.0 - state.beta2.powi(state.step as i32);
    for i in 0..logits.len() {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grad[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grad[i] * grad[i];
        let mhat = state.m[i] / bc1;
        let vhat = state.v[i] / bc2;
        logits[i] -= lr * mhat / (vhat.sqrt() + state.epsilon);
    }
    Ok(())
}

fn ensure_logits(m: &PatternSet) -> Result<()> {
    if m.space != Space::Logit {
        return Err(Error::argument("patterns must be in logit space"));
    }
    Ok(())
}

fn check_scene_shapes(
    m: &PatternSet,
    sample: &SceneSample,
    field: &IlluminationField,
) -> Result<()> {
    let (w, h) = (sample.basis.width(), sample.basis.height());
    if sample.gt_normals.width() != w
        || sample.gt_normals.height() != h
        || sample.mask.width() != w
        || sample.mask.height() != h
    {
        return Err(Error::argument("scene image shapes differ"));
    }
    if field.width() != w || field.height() != h {
        return Err(Error::argument("illumination field resolution differs"));
    }
    if field.num_superpixels() != m.num_superpixels() || sample.basis.len() != m.num_superpixels() {
        return Err(Error::argument("superpixel counts differ"));
    }
    Ok(())
}

/// Mean masked cosine loss over the batch scenes, through the full public
/// reconstruction pipeline. Scenes without any valid pixel drop out of the
/// mean; a batch where every scene drops out is an error.
pub fn batch_loss(logits: &PatternSet, batch: &[BatchScene]) -> Result<f64> {
    ensure_logits(logits)?;
    if batch.is_empty() {
        return Err(Error::argument("empty batch"));
    }
    let m_int = logits.to_intensity();
    let mut sum = 0.0;
    let mut used = 0usize;
    for &(sample, field) in batch {
        check_scene_shapes(&m_int, sample, field)?;
        let captures = simulate_captures(&m_int, &sample.basis)?;
        let albedo = estimate_albedo_max(&captures);
        let normals = reconstruct_normals(&captures, &m_int, field, &albedo)?;
        if let Ok(loss) =
            crate::photostereo::cosine_loss(&normals, &sample.gt_normals, &sample.mask)
        {
            sum += loss;
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::argument("no scene in the batch has valid pixels"));
    }
    Ok(sum / used as f64)
}

/// Unscaled per-scene loss sum, valid-pixel count, and gradient sum with
/// respect to the pattern intensities.
fn scene_loss_grad(
    m_int: &PatternSet,
    sample: &SceneSample,
    field: &IlluminationField,
) -> Result<(f64, usize, Vec<f64>)> {
    check_scene_shapes(m_int, sample, field)?;
    let captures = simulate_captures(m_int, &sample.basis)?;
    let albedo = estimate_albedo_max(&captures);
    let (w, h) = (captures.width(), captures.height());
    let k = captures.k();
    let p = m_int.num_superpixels();
    let len = m_int.values().len();

    let global_max = captures
        .images()
        .iter()
        .map(|img| img.max_value())
        .fold(f64::NEG_INFINITY, f64::max);
    if !(global_max > 0.0) {
        return Ok((0.0, 0, Vec::new()));
    }
    let threshold = INTENSITY_REL_THRESHOLD * global_max;
    let mv = m_int.values();

    let rows: Vec<(f64, usize, Vec<f64>)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut grad = vec![0.0; len];
            let mut loss_sum = 0.0;
            let mut count = 0usize;
            let mut cap_bar = vec![[0.0f64; 3]; k];
            for x in 0..w {
                if !(sample.mask.is_on(x, y) && sample.gt_normals.valid.is_on(x, y)) {
                    continue;
                }
                let pixel_max = captures
                    .images()
                    .iter()
                    .flat_map(|img| img.get(x, y))
                    .fold(f64::NEG_INFINITY, f64::max);
                if pixel_max < threshold {
                    continue;
                }
                let rho = albedo.rgb.get(x, y);
                let lights = field.at(x, y);
                let Some(sol) = solve_pixel(captures.images(), m_int, lights, rho, x, y) else {
                    continue;
                };
                let gt = sample.gt_normals.get(x, y);
                loss_sum += (1.0 - sol.normal.dot(&gt).clamp(-1.0, 1.0)) / 2.0;
                count += 1;

                // Backward pass. With the system rows A_r = rho^c S_i^c and
                // right-hand sides b_r = I_i^c, the solve u = G^-1 h with
                // G = sum A_r A_r^T, h = sum A_r b_r has the adjoint
                //   wv = G^-1 ubar,
                //   Abar_r = wv (b_r - A_r.u) - u (wv.A_r),
                //   bbar_r = A_r.wv,
                // and normalization contributes
                //   ubar = (nbar - N (N.nbar)) / |u|.
                let nbar = -gt / 2.0;
                let ubar = (nbar - sol.normal * sol.normal.dot(&nbar)) / sol.u_norm;
                let wv = sol.g_inv * ubar;
                let mut rho_bar = [0.0f64; 3];
                for slot in cap_bar.iter_mut() {
                    *slot = [0.0; 3];
                }
                for c in 0..3 {
                    for i in 0..k {
                        let base = (i * p) * 3 + c;
                        let mut s = Vector3::zeros();
                        for (j, l) in lights.iter().enumerate() {
                            s += mv[base + j * 3] * l;
                        }
                        let a = s * rho[c];
                        let b_r = captures.image(i).get(x, y)[c];
                        let wa = wv.dot(&a);
                        let abar = wv * (b_r - a.dot(&sol.u)) - sol.u * wa;
                        let sbar = abar * rho[c];
                        rho_bar[c] += s.dot(&abar);
                        cap_bar[i][c] += wa;
                        for (j, l) in lights.iter().enumerate() {
                            grad[(i * p + j) * 3 + c] += sbar.dot(l);
                        }
                    }
                }
                // The albedo is the argmax capture's intensity, so its
                // gradient flows into that capture alone.
                let am = (y * w + x) * 3;
                for c in 0..3 {
                    cap_bar[albedo.argmax[am + c] as usize][c] += rho_bar[c];
                }
                // Captures are linear in the pattern: I_i^c = sum_j M_ij^c B_j^c.
                for j in 0..p {
                    let bpx = sample.basis.get(j).get(x, y);
                    for (i, cb) in cap_bar.iter().enumerate() {
                        let o = (i * p + j) * 3;
                        grad[o] += cb[0] * bpx[0];
                        grad[o + 1] += cb[1] * bpx[1];
                        grad[o + 2] += cb[2] * bpx[2];
                    }
                }
            }
            (loss_sum, count, grad)
        })
        .collect();

    let mut grad = vec![0.0; len];
    let mut loss_sum = 0.0;
    let mut count = 0usize;
    for (ls, c, rg) in rows {
        loss_sum += ls;
        count += c;
        for (g, r) in grad.iter_mut().zip(&rg) {
            *g += r;
        }
    }
    Ok((loss_sum, count, grad))
}

/// Batch loss and its exact gradient with respect to the logits, flat in the
/// pattern layout `(pattern * P + superpixel) * 3 + channel`.
pub fn loss_and_grad(logits: &PatternSet, batch: &[BatchScene]) -> Result<(f64, Vec<f64>)> {
    ensure_logits(logits)?;
    if batch.is_empty() {
        return Err(Error::argument("empty batch"));
    }
    let m_int = logits.to_intensity();
    let len = logits.values().len();
    let mut grad = vec![0.0; len];
    let mut total = 0.0;
    let mut used = 0usize;
    for &(sample, field) in batch {
        let (loss_sum, count, scene_grad) = scene_loss_grad(&m_int, sample, field)?;
        if count == 0 {
            continue;
        }
        used += 1;
        let inv = 1.0 / count as f64;
        total += loss_sum * inv;
        for (g, s) in grad.iter_mut().zip(&scene_grad) {
            *g += s * inv;
        }
    }
    if used == 0 {
        return Err(Error::argument("no scene in the batch has valid pixels"));
    }
    let inv = 1.0 / used as f64;
    let loss = total * inv;
    for (g, &mi) in grad.iter_mut().zip(m_int.values()) {
        *g *= inv * mi * (1.0 - mi);
    }
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::numerical("non-finite loss or gradient"));
    }
    Ok((loss, grad))
}

fn finite_diff_of(f: impl Fn(&[f64]) -> Result<f64>, x: &[f64], h: f64) -> Result<Vec<f64>> {
    let mut xs = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let x0 = xs[i];
        xs[i] = x0 + h;
        let fp = f(&xs)?;
        xs[i] = x0 - h;
        let fm = f(&xs)?;
        xs[i] = x0;
        grad.push((fp - fm) / (2.0 * h));
    }
    Ok(grad)
}

/// Central-difference gradient of the batch loss, one logit at a time.
pub fn finite_diff_grad(logits: &PatternSet, batch: &[BatchScene], h: f64) -> Result<Vec<f64>> {
    ensure_logits(logits)?;
    if !(h > 0.0) {
        return Err(Error::argument("step size must be positive"));
    }
    finite_diff_of(
        |values| {
            let m = PatternSet::new(
                logits.k,
                logits.grid_cols,
                logits.grid_rows,
                Space::Logit,
                logits.seed,
                values.to_vec(),
            )?;
            batch_loss(&m, batch)
        },
        logits.values(),
        h,
    )
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub test_loss: f64,
}

/// Optimizer constants echoed into the report.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct AdamConstants {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

/// Everything a training run produced. The JSON form holds the final patterns
/// in both spaces; wall-clock time stays out of it so reruns of the same
/// config serialize to identical bytes.
#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub adam: AdamConstants,
    pub initial_train_loss: f64,
    pub initial_test_loss: f64,
    pub epochs: Vec<EpochStats>,
    /// Epoch with the lowest test loss; 0 is the initialization.
    pub best_epoch: usize,
    pub best_test_loss: f64,
    pub final_test_loss: f64,
    pub final_logits: PatternFile,
    pub final_intensities: PatternFile,
    #[serde(skip)]
    pub wall_clock_s: f64,
    #[serde(skip)]
    pub initial_patterns: PatternSet,
    #[serde(skip)]
    pub best_patterns: PatternSet,
    #[serde(skip)]
    pub final_patterns: PatternSet,
}

fn write_epoch_artifacts(dir: &Path, epoch: usize, m_int: &PatternSet) -> Result<()> {
    m_int.save(dir.join(format!("patterns_epoch_{epoch}.json")))?;
    viz::save_pattern_sheet_png(m_int, dir.join(format!("patterns_epoch_{epoch}.png")))
}

/// Optimizes the patterns on the dataset's train split, evaluating on the
/// test split each epoch. With `out_dir` set, writes per-epoch pattern JSON
/// and PNG sheets plus `patterns_final.json` and `report.json`.
pub fn train(
    config: &TrainConfig,
    dataset: &Dataset,
    out_dir: Option<&Path>,
) -> Result<TrainReport> {
    config.validate()?;
    let start = Instant::now();
    let train_idx: Vec<usize> = (0..dataset.scenes.len())
        .filter(|&i| dataset.scenes[i].split == Split::Train)
        .collect();
    let test_idx: Vec<usize> = (0..dataset.scenes.len())
        .filter(|&i| dataset.scenes[i].split == Split::Test)
        .collect();
    if train_idx.is_empty() || test_idx.is_empty() {
        return Err(Error::argument(
            "training needs at least one train and one test scene",
        ));
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("{}: {e}", dir.display())))?;
    }

    // One illumination field per distinct camera+grid pair; generated
    // datasets share a single camera, so this is usually one field.
    let mut fields: Vec<IlluminationField> = Vec::new();
    let mut owners: Vec<usize> = Vec::new();
    let mut scene_field = Vec::with_capacity(dataset.scenes.len());
    for (i, sc) in dataset.scenes.iter().enumerate() {
        let found = owners.iter().position(|&o| {
            dataset.scenes[o].sample.camera == sc.sample.camera
                && dataset.scenes[o].sample.grid == sc.sample.grid
        });
        let idx = match found {
            Some(pos) => pos,
            None => {
                fields.push(build_illumination_field(
                    &sc.sample.camera,
                    &sc.sample.grid,
                    config.plane_depth,
                )?);
                owners.push(i);
                fields.len() - 1
            }
        };
        scene_field.push(idx);
    }
    let batch_for = |idx: &[usize]| -> Vec<BatchScene> {
        idx.iter()
            .map(|&i| (&dataset.scenes[i].sample, &fields[scene_field[i]]))
            .collect()
    };
    let all_train = batch_for(&train_idx);
    let all_test = batch_for(&test_idx);

    let k = config.resolved_k();
    let mut theta = init_heuristic(config.kind, k, &dataset.grid, config.init_seed)?.to_logits();
    let initial_patterns = theta.to_intensity();
    let initial_train_loss = batch_loss(&theta, &all_train)?;
    let initial_test_loss = batch_loss(&theta, &all_test)?;
    if let Some(dir) = out_dir {
        write_epoch_artifacts(dir, 0, &initial_patterns)?;
    }

    let mut adam = AdamState::new(theta.values().len());
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..all_train.len()).collect();
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut best_epoch = 0usize;
    let mut best_test_loss = initial_test_loss;
    let mut best_patterns = initial_patterns.clone();

    for epoch in 1..=config.epochs {
        let lr = config.learning_rate
            * config
                .decay_factor
                .powi(((epoch - 1) / config.decay_step_epochs) as i32);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<BatchScene> = chunk.iter().map(|&i| all_train[i]).collect();
            let (loss, grad) = loss_and_grad(&theta, &batch)?;
            adam_step(&mut adam, theta.values_mut(), &grad, lr)?;
            loss_sum += loss;
            batches += 1;
        }
        let train_loss = loss_sum / batches as f64;
        let test_loss = batch_loss(&theta, &all_test)?;
        if test_loss < best_test_loss {
            best_test_loss = test_loss;
            best_epoch = epoch;
            best_patterns = theta.to_intensity();
        }
        epochs.push(EpochStats {
            epoch,
            learning_rate: lr,
            train_loss,
            test_loss,
        });
        if let Some(dir) = out_dir {
            write_epoch_artifacts(dir, epoch, &theta.to_intensity())?;
        }
    }

    let final_patterns = theta.to_intensity();
    let report = TrainReport {
        config: config.clone(),
        adam: AdamConstants {
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
        },
        initial_train_loss,
        initial_test_loss,
        final_test_loss: epochs
            .last()
            .map(|e| e.test_loss)
            .unwrap_or(initial_test_loss),
        epochs,
        best_epoch,
        best_test_loss,
        final_logits: theta.to_file_repr(),
        final_intensities: final_patterns.to_file_repr(),
        wall_clock_s: start.elapsed().as_secs_f64(),
        initial_patterns,
        best_patterns,
        final_patterns,
    };
    if let Some(dir) = out_dir {
        report
            .final_patterns
            .save(dir.join("patterns_final.json"))?;
        let text = serde_json::to_string_pretty(&report)?;
        let path = dir.join("report.json");
        fs::write(&path, text + "\n").map_err(|e| Error::io(format!("{}: {e}", path.display())))?;
    }
    Ok(report)
}

/// [`train`] on a dataset loaded from its manifest.
pub fn train_from_manifest(
    config: &TrainConfig,
    manifest: impl AsRef<Path>,
    out_dir: Option<&Path>,
) -> Result<TrainReport> {
    let dataset = Dataset::load(manifest)?;
    train(config, &dataset, out_dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{dataset_generate, DatasetConfig};
    use crate::geometry::{CameraModel, DisplayGrid};
    use crate::image::{ImageRgb, Mask};
    use crate::photostereo::NormalMap;
    use crate::scene::BasisStack;
    use tempfile::TempDir;

    fn generated(cfg: &DatasetConfig) -> (TempDir, Dataset) {
        let tmp = tempfile::tempdir().unwrap();
        let manifest = dataset_generate(cfg, tmp.path()).unwrap();
        let ds = Dataset::load(manifest).unwrap();
        (tmp, ds)
    }

    fn oracle_dataset_config(seed: u64) -> DatasetConfig {
        DatasetConfig {
            train_scenes: 2,
            test_scenes: 0,
            width: 16,
            height: 16,
            focal_px: 40.0,
            grid_cols: 4,
            grid_rows: 2,
            seed,
            ..DatasetConfig::default()
        }
    }

    fn field_for(ds: &Dataset, plane_depth: f64) -> IlluminationField {
        build_illumination_field(&ds.scenes[0].sample.camera, &ds.grid, plane_depth).unwrap()
    }

    fn whole_batch<'a>(ds: &'a Dataset, field: &'a IlluminationField) -> Vec<BatchScene<'a>> {
        ds.scenes.iter().map(|s| (&s.sample, field)).collect()
    }

    fn max_rel_discrepancy(analytic: &[f64], fd: &[f64]) -> (f64, usize) {
        let mut worst = 0.0f64;
        let mut checked = 0usize;
        for (a, f) in analytic.iter().zip(fd) {
            if f.abs() > 1e-6 {
                worst = worst.max((a - f).abs() / f.abs());
                checked += 1;
            }
        }
        (worst, checked)
    }

    #[test]
    fn adam_first_step_matches_closed_form() {
        let mut state = AdamState::new(1);
        let mut logits = [0.0];
        adam_step(&mut state, &mut logits, &[0.2], 0.3).unwrap();
        let expect = -0.3 * 0.2 / (0.2 + 1e-8);
        assert!((logits[0] - expect).abs() < 1e-6, "{}", logits[0]);
        assert!((logits[0] + 0.3).abs() < 1e-6);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn adam_zero_gradient_is_identity() {
        let mut state = AdamState::new(3);
        let mut logits = [0.4, -1.1, 2.0];
        adam_step(&mut state, &mut logits, &[0.0; 3], 0.3).unwrap();
        assert_eq!(logits, [0.4, -1.1, 2.0]);
    }

    #[test]
    fn adam_is_deterministic() {
        let grads = [[0.3, -0.2], [-0.1, 0.5], [0.02, 0.02]];
        let run = || {
            let mut state = AdamState::new(2);
            let mut logits = [0.0, 1.0];
            for g in &grads {
                adam_step(&mut state, &mut logits, g, 0.1).unwrap();
            }
            (logits, state.m, state.v)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let mut state = AdamState::new(1);
        let mut logits = [0.0];
        let err = adam_step(&mut state, &mut logits, &[f64::NAN], 0.1).unwrap_err();
        assert_eq!(err.exit_code(), 4);
        let err = adam_step(&mut state, &mut logits, &[0.1, 0.2], 0.1).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn train_config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig {
                learning_rate: 0.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                decay_factor: 0.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                decay_factor: 1.5,
                ..TrainConfig::default()
            },
            TrainConfig {
                decay_step_epochs: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                epochs: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                batch_size: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                plane_depth: 0.0,
                ..TrainConfig::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let (_tmp, ds) = generated(&oracle_dataset_config(11));
        let field = field_for(&ds, 0.5);
        let batch = whole_batch(&ds, &field);
        let logits = init_heuristic(PatternKind::TriRandom, 2, &ds.grid, 11)
            .unwrap()
            .to_logits();

        let (loss, grad) = loss_and_grad(&logits, &batch).unwrap();
        let composed = batch_loss(&logits, &batch).unwrap();
        assert!((loss - composed).abs() < 1e-12, "{loss} vs {composed}");

        let fd = finite_diff_grad(&logits, &batch, 1e-4).unwrap();
        let (worst, checked) = max_rel_discrepancy(&grad, &fd);
        assert!(
            checked > grad.len() / 2,
            "only {checked} comparable entries"
        );
        assert!(worst < 1e-3, "max relative discrepancy {worst}");
    }

    #[test]
    fn gradient_matches_oracle_across_seeds() {
        for seed in 0..20u64 {
            let cfg = DatasetConfig {
                train_scenes: 1,
                test_scenes: 0,
                width: 12,
                height: 12,
                focal_px: 30.0,
                grid_cols: 2,
                grid_rows: 2,
                seed,
                ..DatasetConfig::default()
            };
            let (_tmp, ds) = generated(&cfg);
            let field = field_for(&ds, 0.5);
            let batch = whole_batch(&ds, &field);
            let logits = init_heuristic(PatternKind::TriRandom, 2, &ds.grid, seed + 101)
                .unwrap()
                .to_logits();
            let (_, grad) = loss_and_grad(&logits, &batch).unwrap();
            let fd = finite_diff_grad(&logits, &batch, 1e-4).unwrap();
            let (worst, checked) = max_rel_discrepancy(&grad, &fd);
            assert!(checked > 0, "seed {seed}: nothing comparable");
            assert!(worst < 1e-3, "seed {seed}: discrepancy {worst}");
        }
    }

    #[test]
    fn stationary_point_has_zero_gradient() {
        // Exact-model scene and monochromatic patterns reconstruct perfectly,
        // so the loss sits at its global minimum of zero.
        let cfg = DatasetConfig {
            train_scenes: 1,
            test_scenes: 0,
            width: 16,
            height: 16,
            focal_px: 40.0,
            grid_cols: 2,
            grid_rows: 2,
            seed: 5,
            ..DatasetConfig::on_plane()
        };
        let (_tmp, ds) = generated(&cfg);
        let field = field_for(&ds, 0.5);
        let batch = whole_batch(&ds, &field);
        let logits = init_heuristic(PatternKind::MonoRandom, 4, &ds.grid, 9)
            .unwrap()
            .to_logits();
        let fd = finite_diff_grad(&logits, &batch, 1e-4).unwrap();
        let fd_max = fd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(fd_max < 1e-6, "finite differences see slope {fd_max}");
        let (loss, grad) = loss_and_grad(&logits, &batch).unwrap();
        assert!(loss < 1e-10, "loss {loss}");
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        assert!(norm < 1e-5, "gradient norm {norm}");
    }

    #[test]
    fn duplicated_scenes_leave_loss_and_grad_unchanged() {
        let (_tmp, ds) = generated(&oracle_dataset_config(19));
        let field = field_for(&ds, 0.5);
        let s0 = (&ds.scenes[0].sample, &field);
        let s1 = (&ds.scenes[1].sample, &field);
        let logits = init_heuristic(PatternKind::TriRandom, 2, &ds.grid, 3)
            .unwrap()
            .to_logits();
        let (l1, g1) = loss_and_grad(&logits, &[s0, s1]).unwrap();
        let (l2, g2) = loss_and_grad(&logits, &[s0, s1, s0, s1]).unwrap();
        assert!((l1 - l2).abs() < 1e-15);
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn finite_differences_recover_linear_coefficients() {
        let c = [0.3, -1.2, 2.0, 0.07];
        let x = [0.5, -0.25, 1.5, 3.0];
        let g =
            finite_diff_of(|v| Ok(v.iter().zip(&c).map(|(a, b)| a * b).sum()), &x, 1e-3).unwrap();
        for (a, b) in g.iter().zip(&c) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn finite_difference_error_is_second_order() {
        // For f(x) = sum x^3 the central-difference error is exactly h^2 per
        // coordinate, so halving h divides the error by four.
        let f = |v: &[f64]| Ok(v.iter().map(|a| a * a * a).sum());
        let x = [1.0, -2.0];
        let err = |h: f64| {
            let g = finite_diff_of(f, &x, h).unwrap();
            (g[0] - 3.0).abs().max((g[1] - 12.0).abs())
        };
        let ratio = err(1e-2) / err(5e-3);
        assert!((3.8..4.2).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn finite_diff_grad_rejects_bad_step() {
        let (_tmp, ds) = generated(&oracle_dataset_config(2));
        let field = field_for(&ds, 0.5);
        let batch = whole_batch(&ds, &field);
        let logits = init_heuristic(PatternKind::TriRandom, 2, &ds.grid, 1)
            .unwrap()
            .to_logits();
        assert_eq!(
            finite_diff_grad(&logits, &batch, 0.0)
                .unwrap_err()
                .exit_code(),
            2
        );
    }

    #[test]
    fn all_dark_batch_is_an_error() {
        let camera = CameraModel {
            fx: 10.0,
            fy: 10.0,
            cx: 2.0,
            cy: 2.0,
            width: 4,
            height: 4,
        };
        let grid = DisplayGrid::planar(2, 2, 0.2, 0.2, 0.0);
        let mut gt = NormalMap::zeros(4, 4);
        for y in 0..4 {
            for x in 0..4 {
                gt.set(x, y, Vector3::new(0.0, 0.0, -1.0));
                gt.valid.set(x, y, 1.0);
            }
        }
        let sample = SceneSample {
            basis: BasisStack::new(vec![ImageRgb::zeros(4, 4); 4]).unwrap(),
            specular_basis: None,
            gt_normals: gt,
            mask: Mask::constant(4, 4, 1.0),
            camera,
            grid: grid.clone(),
        };
        let field = build_illumination_field(&camera, &grid, 0.5).unwrap();
        let logits = init_heuristic(PatternKind::TriRandom, 2, &grid, 1)
            .unwrap()
            .to_logits();
        let err = loss_and_grad(&logits, &[(&sample, &field)]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(batch_loss(&logits, &[(&sample, &field)]).is_err());
    }

    fn tiny_dataset() -> (TempDir, Dataset) {
        generated(&DatasetConfig {
            train_scenes: 2,
            test_scenes: 1,
            width: 12,
            height: 12,
            focal_px: 30.0,
            grid_cols: 2,
            grid_rows: 2,
            seed: 3,
            ..DatasetConfig::default()
        })
    }

    fn tiny_train_config() -> TrainConfig {
        TrainConfig {
            kind: PatternKind::TriRandom,
            init_seed: 4,
            epochs: 2,
            batch_size: 1,
            seed: 7,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn near_zero_learning_rate_keeps_patterns() {
        let (_tmp, ds) = tiny_dataset();
        let config = TrainConfig {
            epochs: 1,
            learning_rate: 1e-12,
            ..tiny_train_config()
        };
        let report = train(&config, &ds, None).unwrap();
        let worst = report
            .final_patterns
            .values()
            .iter()
            .zip(report.initial_patterns.values())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(worst <= 1e-12, "intensities moved by {worst}");
    }

    #[test]
    fn repeated_runs_are_bit_identical() {
        let (_tmp, ds) = tiny_dataset();
        let config = tiny_train_config();
        let out1 = tempfile::tempdir().unwrap();
        let out2 = tempfile::tempdir().unwrap();
        let r1 = train(&config, &ds, Some(out1.path())).unwrap();
        let r2 = train(&config, &ds, Some(out2.path())).unwrap();
        assert_eq!(
            serde_json::to_string(&r1).unwrap(),
            serde_json::to_string(&r2).unwrap()
        );
        for name in [
            "report.json",
            "patterns_final.json",
            "patterns_epoch_0.json",
            "patterns_epoch_2.json",
            "patterns_epoch_1.png",
        ] {
            let a = fs::read(out1.path().join(name)).unwrap();
            let b = fs::read(out2.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between runs");
        }
    }

    #[test]
    fn train_writes_expected_artifacts_and_sane_report() {
        let (_tmp, ds) = tiny_dataset();
        let config = tiny_train_config();
        let out = tempfile::tempdir().unwrap();
        let report = train(&config, &ds, Some(out.path())).unwrap();

        for e in 0..=2 {
            assert!(out
                .path()
                .join(format!("patterns_epoch_{e}.json"))
                .is_file());
            assert!(out.path().join(format!("patterns_epoch_{e}.png")).is_file());
        }
        assert!(out.path().join("patterns_final.json").is_file());
        assert!(out.path().join("report.json").is_file());

        assert_eq!(report.epochs.len(), 2);
        for stats in &report.epochs {
            assert!((0.0..=1.0).contains(&stats.train_loss));
            assert!((0.0..=1.0).contains(&stats.test_loss));
        }
        assert!((0.0..=1.0).contains(&report.initial_train_loss));
        assert!((0.0..=1.0).contains(&report.initial_test_loss));
        assert!(report.best_test_loss <= report.initial_test_loss);
        assert!(report.wall_clock_s > 0.0);

        let saved = PatternSet::load(out.path().join("patterns_final.json")).unwrap();
        assert_eq!(saved.space, Space::Intensity);
        assert_eq!(saved.values(), report.final_patterns.values());

        // The serialized report leaves wall-clock out.
        let text = fs::read_to_string(out.path().join("report.json")).unwrap();
        assert!(!text.contains("wall_clock"));
        assert!(text.contains("final_logits"));
        assert!(text.contains("final_intensities"));
    }

    #[test]
    fn learning_rate_decays_on_schedule() {
        let (_tmp, ds) = tiny_dataset();
        let config = TrainConfig {
            epochs: 5,
            decay_step_epochs: 2,
            decay_factor: 0.5,
            ..tiny_train_config()
        };
        let report = train(&config, &ds, None).unwrap();
        let lrs: Vec<f64> = report.epochs.iter().map(|e| e.learning_rate).collect();
        assert_eq!(lrs, vec![0.3, 0.3, 0.15, 0.15, 0.075]);
    }

    #[test]
    fn missing_manifest_is_io_error() {
        let err = train_from_manifest(&tiny_train_config(), "/nonexistent/manifest.json", None)
            .unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn train_requires_both_splits() {
        let (_tmp, ds) = generated(&DatasetConfig {
            train_scenes: 1,
            test_scenes: 0,
            width: 12,
            height: 12,
            focal_px: 30.0,
            grid_cols: 2,
            grid_rows: 2,
            seed: 1,
            ..DatasetConfig::default()
        });
        let err = train(&tiny_train_config(), &ds, None).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
