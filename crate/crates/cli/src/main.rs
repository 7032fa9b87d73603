//! Command-line surface for the display photometric stereo toolkit:
//! dataset synthesis, pattern initialization and training, reconstruction,
//! evaluation sweeps, polarimetric separation, pose fitting, mirror and
//! response calibration, and PNG export of the intermediate maps.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use panelps_core::calib::{
    fit_response, interpolate_grid, load_observations, triangulate_superpixels, ResponseCurve,
    ResponseModel,
};
use panelps_core::dataset::{dataset_generate, Dataset, DatasetConfig, Split};
use panelps_core::eval::{evaluate_dataset, sweep};
use panelps_core::geometry::{build_illumination_field, CameraModel, DisplayGrid};
use panelps_core::image::Mask;
use panelps_core::learner::{train_from_manifest, TrainConfig};
use panelps_core::mesh::TriMesh;
use panelps_core::patterns::{init_heuristic, PatternKind, PatternSet, Space};
use panelps_core::pfm;
use panelps_core::photostereo::{
    cosine_loss, cosine_loss_map, estimate_albedo_max, reconstruct_normals, refine_albedo,
    simulate_captures, NormalMap,
};
use panelps_core::polarimetry::{
    ambient_subtract, separate, stokes_decompose, PolarizedCaptures, StokesMode,
};
use panelps_core::posefit::{fit_pose, silhouette_mse, PoseParams};
use panelps_core::viz;
use panelps_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "panelps",
    version,
    about = "Photometric stereo with a display as the light source"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Override the active config's random seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON config file, for commands that accept one
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print only warnings and errors
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic capture datasets
    Dataset {
        #[command(subcommand)]
        cmd: DatasetCmd,
    },
    /// Display pattern files
    Patterns {
        #[command(subcommand)]
        cmd: PatternsCmd,
    },
    /// Optimize display patterns end to end on a dataset
    Train(TrainArgs),
    /// Reconstruct normals and albedo for one scene
    Reconstruct(ReconstructArgs),
    /// Score a pattern set on a dataset split
    Eval(EvalArgs),
    /// Train and score a grid of initializations and pattern counts
    Sweep(SweepArgs),
    /// Split polarized captures into diffuse and specular images
    Separate(SeparateArgs),
    /// Align a mesh pose to a target silhouette
    Posefit(PosefitArgs),
    /// Display geometry and response calibration
    Calib {
        #[command(subcommand)]
        cmd: CalibCmd,
    },
    /// Export PNG visualizations of data files
    Viz(VizArgs),
}

#[derive(Subcommand)]
enum DatasetCmd {
    /// Render a dataset of basis captures with ground truth
    Gen {
        /// Output dataset directory
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum PatternsCmd {
    /// Write a heuristic pattern set for a display geometry
    Init {
        /// Initialization kind, e.g. olat, flat-gray, mono-random, tri-random
        #[arg(long)]
        kind: String,
        /// Number of patterns; defaults to the kind's standard count
        #[arg(long)]
        k: Option<usize>,
        /// Display geometry JSON
        #[arg(long)]
        geometry: PathBuf,
        /// Output pattern JSON
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset manifest JSON
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory for the report and per-epoch patterns
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReconstructArgs {
    /// Dataset manifest JSON
    #[arg(long)]
    manifest: PathBuf,
    /// Scene directory name from the manifest, e.g. scene_003
    #[arg(long)]
    scene: String,
    /// Pattern set JSON
    #[arg(long)]
    patterns: PathBuf,
    /// Depth of the assumed reconstruction plane in meters
    #[arg(long, default_value_t = 0.5)]
    plane_depth: f64,
    /// Albedo refinement iterations after the initial solve
    #[arg(long, default_value_t = 0)]
    refine: usize,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Dataset manifest JSON
    #[arg(long)]
    manifest: PathBuf,
    /// Pattern set JSON
    #[arg(long)]
    patterns: PathBuf,
    /// Dataset split to score: train or test
    #[arg(long, default_value = "test")]
    split: String,
    /// Depth of the assumed reconstruction plane in meters
    #[arg(long, default_value_t = 0.5)]
    plane_depth: f64,
    /// Optional JSON summary output
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Dataset manifest JSON
    #[arg(long)]
    manifest: PathBuf,
    /// Comma-separated initialization kinds
    #[arg(long)]
    kinds: String,
    /// Comma-separated pattern counts
    #[arg(long)]
    ks: String,
    /// Parallel training jobs
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Output directory; each cell writes to its own subdirectory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SeparateArgs {
    /// Capture through the polarizer at 0 degrees (PFM)
    #[arg(long)]
    i0: PathBuf,
    /// Capture at 45 degrees (PFM)
    #[arg(long)]
    i45: PathBuf,
    /// Capture at 90 degrees (PFM)
    #[arg(long)]
    i90: PathBuf,
    /// Capture at 135 degrees (PFM)
    #[arg(long)]
    i135: PathBuf,
    /// Ambient frame subtracted from every capture (PFM)
    #[arg(long)]
    ambient: Option<PathBuf>,
    /// Stokes mode: standard or paper
    #[arg(long, default_value = "standard")]
    mode: String,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PosefitArgs {
    /// Mesh OBJ file
    #[arg(long)]
    mesh: PathBuf,
    /// Target silhouette mask (PFM)
    #[arg(long)]
    mask: PathBuf,
    /// Camera intrinsics JSON
    #[arg(long)]
    camera: PathBuf,
    /// Initial pose JSON; identity when absent
    #[arg(long)]
    init: Option<PathBuf>,
    /// Output pose JSON
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum CalibCmd {
    /// Triangulate superpixel positions from mirror observations
    Mirror {
        /// Mirror observations JSON
        #[arg(long)]
        obs: PathBuf,
        /// Camera intrinsics JSON
        #[arg(long)]
        camera: PathBuf,
        /// Display grid dimensions as COLSxROWS, e.g. 8x4
        #[arg(long)]
        grid: String,
        /// Output display geometry JSON
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit per-channel response curves from measured samples
    Response {
        /// CSV of channel,u,y sample rows
        #[arg(long)]
        samples: PathBuf,
        /// Curve model: power or exponential
        #[arg(long, default_value = "power")]
        model: String,
        /// Output response JSON
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct VizArgs {
    /// Normal map to export (PFM)
    #[arg(long)]
    normals: Option<PathBuf>,
    /// Reference normals for an error map (PFM); needs --normals
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Albedo or capture image to export (PFM)
    #[arg(long)]
    albedo: Option<PathBuf>,
    /// Pattern set to export as an upscaled sheet (JSON)
    #[arg(long)]
    patterns: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Dataset {
            cmd: DatasetCmd::Gen { out },
        } => dataset_gen(g, out),
        Command::Patterns {
            cmd:
                PatternsCmd::Init {
                    kind,
                    k,
                    geometry,
                    out,
                },
        } => patterns_init(g, kind, *k, geometry, out),
        Command::Train(a) => train_cmd(g, a),
        Command::Reconstruct(a) => reconstruct_cmd(g, a),
        Command::Eval(a) => eval_cmd(g, a),
        Command::Sweep(a) => sweep_cmd(g, a),
        Command::Separate(a) => separate_cmd(g, a),
        Command::Posefit(a) => posefit_cmd(g, a),
        Command::Calib { cmd } => match cmd {
            CalibCmd::Mirror {
                obs,
                camera,
                grid,
                out,
            } => calib_mirror(g, obs, camera, grid, out),
            CalibCmd::Response {
                samples,
                model,
                out,
            } => calib_response(g, samples, model, out),
        },
        Command::Viz(a) => viz_cmd(g, a),
    }
}

fn no_config(g: &Global, cmd: &str) -> Result<()> {
    match g.config {
        Some(_) => Err(Error::argument(format!("{cmd} does not take --config"))),
        None => Ok(()),
    }
}

fn no_seed(g: &Global, cmd: &str) -> Result<()> {
    match g.seed {
        Some(_) => Err(Error::argument(format!("{cmd} does not take --seed"))),
        None => Ok(()),
    }
}

fn make_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(format!("{}: {e}", path.display())))
}

fn as_intensity(m: PatternSet) -> PatternSet {
    match m.space {
        Space::Intensity => m,
        Space::Logit => m.to_intensity(),
    }
}

fn dataset_gen(g: &Global, out: &Path) -> Result<()> {
    let mut cfg = match &g.config {
        Some(p) => DatasetConfig::load(p)?,
        None => DatasetConfig::default(),
    };
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    let manifest = dataset_generate(&cfg, out)?;
    if !g.quiet {
        println!(
            "wrote {} ({} train, {} test scenes)",
            manifest.display(),
            cfg.train_scenes,
            cfg.test_scenes
        );
    }
    Ok(())
}

fn patterns_init(
    g: &Global,
    kind: &str,
    k: Option<usize>,
    geometry: &Path,
    out: &Path,
) -> Result<()> {
    no_config(g, "patterns init")?;
    let kind: PatternKind = kind.parse()?;
    let grid = DisplayGrid::load(geometry)?;
    let k = k.unwrap_or_else(|| kind.default_k());
    let m = init_heuristic(kind, k, &grid, g.seed.unwrap_or(0))?;
    m.save(out)?;
    if !g.quiet {
        println!("wrote {} ({} {} patterns)", out.display(), k, kind.name());
    }
    Ok(())
}

fn train_cmd(g: &Global, a: &TrainArgs) -> Result<()> {
    let mut cfg = match &g.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    make_dir(&a.out)?;
    let report = train_from_manifest(&cfg, &a.manifest, Some(&a.out))?;
    if !g.quiet {
        println!("initial test loss {:.6}", report.initial_test_loss);
        println!(
            "best epoch {} test loss {:.6}",
            report.best_epoch, report.best_test_loss
        );
        println!("wrote {}", a.out.join("report.json").display());
    }
    Ok(())
}

#[derive(Serialize)]
struct ReconSummary<'a> {
    scene: &'a str,
    plane_depth: f64,
    refine: usize,
    loss: f64,
}

fn reconstruct_cmd(g: &Global, a: &ReconstructArgs) -> Result<()> {
    no_config(g, "reconstruct")?;
    no_seed(g, "reconstruct")?;
    let ds = Dataset::load(&a.manifest)?;
    let scene = ds
        .scenes
        .iter()
        .find(|s| s.dir.file_name().is_some_and(|n| n == a.scene.as_str()))
        .ok_or_else(|| Error::argument(format!("scene '{}' is not in the manifest", a.scene)))?;
    let m = as_intensity(PatternSet::load(&a.patterns)?);
    let sample = &scene.sample;
    let field = build_illumination_field(&sample.camera, &sample.grid, a.plane_depth)?;
    let captures = simulate_captures(&m, &sample.basis)?;
    let mut albedo = estimate_albedo_max(&captures);
    let mut normals = reconstruct_normals(&captures, &m, &field, &albedo)?;
    for _ in 0..a.refine {
        albedo = refine_albedo(&captures, &m, &field, &normals, &albedo);
        normals = reconstruct_normals(&captures, &m, &field, &albedo)?;
    }
    make_dir(&a.out)?;
    pfm::write_rgb(a.out.join("normals.pfm"), &normals.to_rgb())?;
    viz::save_normal_png(&normals, a.out.join("normals.png"))?;
    viz::save_rgb_png(&albedo.rgb, a.out.join("albedo.png"))?;
    let loss_map = cosine_loss_map(&normals, &sample.gt_normals, &sample.mask);
    viz::save_loss_png(&loss_map, a.out.join("error.png"))?;
    let loss = cosine_loss(&normals, &sample.gt_normals, &sample.mask)?;
    write_json(
        &a.out.join("recon.json"),
        &ReconSummary {
            scene: &a.scene,
            plane_depth: a.plane_depth,
            refine: a.refine,
            loss,
        },
    )?;
    if !g.quiet {
        println!("scene {} loss {:.6}", a.scene, loss);
    }
    Ok(())
}

fn eval_cmd(g: &Global, a: &EvalArgs) -> Result<()> {
    no_config(g, "eval")?;
    no_seed(g, "eval")?;
    let ds = Dataset::load(&a.manifest)?;
    let m = as_intensity(PatternSet::load(&a.patterns)?);
    let split: Split = a.split.parse()?;
    let summary = evaluate_dataset(&m, &ds, split, a.plane_depth)?;
    if let Some(out) = &a.out {
        write_json(out, &summary)?;
    }
    if !g.quiet {
        println!("mean loss {:.6}", summary.mean_loss);
        for s in &summary.per_scene {
            match s.loss {
                Some(l) => println!("  {} {:.6}", s.scene, l),
                None => println!("  {} no valid pixels", s.scene),
            }
        }
    }
    Ok(())
}

fn sweep_cmd(g: &Global, a: &SweepArgs) -> Result<()> {
    let mut cfg = match &g.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    let ds = Dataset::load(&a.manifest)?;
    let kinds = a
        .kinds
        .split(',')
        .map(|t| t.trim().parse::<PatternKind>())
        .collect::<Result<Vec<_>>>()?;
    let ks =
        a.ks.split(',')
            .map(|t| {
                t.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::argument(format!("bad pattern count '{t}'")))
            })
            .collect::<Result<Vec<_>>>()?;
    make_dir(&a.out)?;
    let report = sweep(&ds, &kinds, &ks, &cfg, Some(&a.out), a.jobs)?;
    report.save(a.out.join("report.json"))?;
    if !g.quiet {
        print!("{}", report.to_table());
        println!("wrote {}", a.out.join("report.json").display());
    }
    Ok(())
}

fn separate_cmd(g: &Global, a: &SeparateArgs) -> Result<()> {
    no_config(g, "separate")?;
    no_seed(g, "separate")?;
    let mode: StokesMode = a.mode.parse()?;
    let mut imgs = [
        pfm::read_rgb(&a.i0)?,
        pfm::read_rgb(&a.i45)?,
        pfm::read_rgb(&a.i90)?,
        pfm::read_rgb(&a.i135)?,
    ];
    if let Some(path) = &a.ambient {
        let ambient = pfm::read_rgb(path)?;
        for img in &mut imgs {
            *img = ambient_subtract(img, &ambient)?;
        }
    }
    let [i0, i45, i90, i135] = imgs;
    let captures = PolarizedCaptures::new(i0, i45, i90, i135)?;
    let stokes = stokes_decompose(&captures, mode);
    let sep = separate(&stokes);
    make_dir(&a.out)?;
    pfm::write_rgb(a.out.join("diffuse.pfm"), &sep.diffuse)?;
    pfm::write_rgb(a.out.join("specular.pfm"), &sep.specular)?;
    pfm::write_gray(a.out.join("valid.pfm"), &sep.valid)?;
    viz::save_rgb_png(&sep.diffuse, a.out.join("diffuse.png"))?;
    viz::save_rgb_png(&sep.specular, a.out.join("specular.png"))?;
    if !g.quiet {
        let total = sep.valid.data().len();
        let clipped = total - sep.valid.count_on();
        println!(
            "wrote {} ({clipped}/{total} pixels clipped)",
            a.out.display()
        );
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct PoseFile {
    t: [f64; 3],
    r: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mse: Option<f64>,
}

fn posefit_cmd(g: &Global, a: &PosefitArgs) -> Result<()> {
    no_config(g, "posefit")?;
    no_seed(g, "posefit")?;
    let mesh = TriMesh::load_obj(&a.mesh)?;
    let camera = CameraModel::load(&a.camera)?;
    let mask: Mask = pfm::read_gray(&a.mask)?;
    let init = match &a.init {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::io(format!("{}: {e}", path.display())))?;
            let file: PoseFile = serde_json::from_str(&text)?;
            PoseParams {
                t: file.t.into(),
                r: file.r.into(),
            }
        }
        None => PoseParams::identity(),
    };
    let pose = fit_pose(&mesh, &mask, &camera, &init)?;
    let mse = silhouette_mse(&mesh, &pose, &camera, &mask)?;
    write_json(
        &a.out,
        &PoseFile {
            t: [pose.t.x, pose.t.y, pose.t.z],
            r: [pose.r.x, pose.r.y, pose.r.z],
            mse: Some(mse),
        },
    )?;
    if !g.quiet {
        println!("silhouette mse {mse:.6}, wrote {}", a.out.display());
    }
    Ok(())
}

fn parse_grid_dims(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::argument(format!("grid '{s}' is not COLSxROWS"));
    let (c, r) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let cols = c.trim().parse().map_err(|_| bad())?;
    let rows = r.trim().parse().map_err(|_| bad())?;
    Ok((cols, rows))
}

fn calib_mirror(g: &Global, obs: &Path, camera: &Path, grid: &str, out: &Path) -> Result<()> {
    no_config(g, "calib mirror")?;
    no_seed(g, "calib mirror")?;
    let (cols, rows) = parse_grid_dims(grid)?;
    let observations = load_observations(obs)?;
    let camera = CameraModel::load(camera)?;
    let tri = triangulate_superpixels(&observations, &camera)?;
    for warning in &tri.warnings {
        eprintln!("warning: {warning}");
    }
    let sparse: Vec<_> = tri.points.iter().map(|p| (p.j, p.position)).collect();
    let display = interpolate_grid(&sparse, cols, rows)?;
    display.save(out)?;
    if !g.quiet {
        let worst = tri
            .points
            .iter()
            .map(|p| p.rms_distance)
            .fold(0.0f64, f64::max);
        println!(
            "triangulated {} superpixels (worst rms {:.2e} m), wrote {}",
            tri.points.len(),
            worst,
            out.display()
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct ChannelFit {
    a: f64,
    gamma: f64,
    b: f64,
    rms: f64,
}

#[derive(Serialize)]
struct ResponseFile {
    model: String,
    r: ChannelFit,
    g: ChannelFit,
    b: ChannelFit,
}

fn read_samples_csv(path: &Path) -> Result<[Vec<(f64, f64)>; 3]> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::io(format!("{}: {e}", path.display())))?;
    let mut channels: [Vec<(f64, f64)>; 3] = Default::default();
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::argument(format!("{}: {e}", path.display())))?;
        let bad = || {
            Error::argument(format!(
                "{}:{}: expected channel,u,y",
                path.display(),
                idx + 1
            ))
        };
        if record.len() != 3 {
            return Err(bad());
        }
        let first = record.get(0).ok_or_else(bad)?;
        if idx == 0 && first.eq_ignore_ascii_case("channel") {
            continue;
        }
        let channel = match first {
            "0" | "r" | "R" => 0usize,
            "1" | "g" | "G" => 1,
            "2" | "b" | "B" => 2,
            _ => return Err(bad()),
        };
        let u: f64 = record.get(1).ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let y: f64 = record.get(2).ok_or_else(bad)?.parse().map_err(|_| bad())?;
        channels[channel].push((u, y));
    }
    Ok(channels)
}

fn calib_response(g: &Global, samples: &Path, model: &str, out: &Path) -> Result<()> {
    no_config(g, "calib response")?;
    no_seed(g, "calib response")?;
    let model = match model {
        "power" => ResponseModel::Power,
        "exponential" | "exp" => ResponseModel::Exponential,
        other => return Err(Error::argument(format!("unknown response model '{other}'"))),
    };
    let channels = read_samples_csv(samples)?;
    let mut fits: Vec<(ResponseCurve, f64)> = Vec::with_capacity(3);
    for (name, rows) in ["r", "g", "b"].iter().zip(&channels) {
        if rows.len() < 4 {
            return Err(Error::argument(format!(
                "channel {name} has {} samples, needs at least 4",
                rows.len()
            )));
        }
        fits.push(fit_response(rows, model)?);
    }
    let entry = |i: usize| ChannelFit {
        a: fits[i].0.a,
        gamma: fits[i].0.gamma,
        b: fits[i].0.b,
        rms: fits[i].1,
    };
    write_json(
        out,
        &ResponseFile {
            model: match model {
                ResponseModel::Power => "power".into(),
                ResponseModel::Exponential => "exponential".into(),
            },
            r: entry(0),
            g: entry(1),
            b: entry(2),
        },
    )?;
    if !g.quiet {
        println!(
            "exponents r {:.4} g {:.4} b {:.4}, wrote {}",
            fits[0].0.gamma,
            fits[1].0.gamma,
            fits[2].0.gamma,
            out.display()
        );
    }
    Ok(())
}

/// Reads packed normals, marking pixels valid where a unit vector is stored.
fn load_normal_pfm(path: &Path) -> Result<NormalMap> {
    let img = pfm::read_rgb(path)?;
    let mut valid = Mask::zeros(img.width(), img.height());
    for y in 0..img.height() {
        for x in 0..img.width() {
            let [nx, ny, nz] = img.get(x, y);
            if (nx * nx + ny * ny + nz * nz).sqrt() > 0.5 {
                valid.set(x, y, 1.0);
            }
        }
    }
    NormalMap::from_rgb(&img, valid)
}

fn viz_cmd(g: &Global, a: &VizArgs) -> Result<()> {
    no_config(g, "viz")?;
    no_seed(g, "viz")?;
    if a.normals.is_none() && a.albedo.is_none() && a.patterns.is_none() {
        return Err(Error::argument(
            "viz needs at least one of --normals, --albedo, --patterns",
        ));
    }
    if a.gt.is_some() && a.normals.is_none() {
        return Err(Error::argument("--gt needs --normals"));
    }
    make_dir(&a.out)?;
    let mut written = Vec::new();
    if let Some(path) = &a.normals {
        let normals = load_normal_pfm(path)?;
        viz::save_normal_png(&normals, a.out.join("normals.png"))?;
        written.push("normals.png");
        if let Some(gt_path) = &a.gt {
            let gt = load_normal_pfm(gt_path)?;
            let everywhere = Mask::constant(normals.width(), normals.height(), 1.0);
            let map = cosine_loss_map(&normals, &gt, &everywhere);
            viz::save_loss_png(&map, a.out.join("error.png"))?;
            written.push("error.png");
        }
    }
    if let Some(path) = &a.albedo {
        viz::save_rgb_png(&pfm::read_rgb(path)?, a.out.join("albedo.png"))?;
        written.push("albedo.png");
    }
    if let Some(path) = &a.patterns {
        let m = as_intensity(PatternSet::load(path)?);
        viz::save_pattern_sheet_png(&m, a.out.join("patterns.png"))?;
        written.push("patterns.png");
    }
    if !g.quiet {
        println!("wrote {} in {}", written.join(", "), a.out.display());
    }
    Ok(())
}
