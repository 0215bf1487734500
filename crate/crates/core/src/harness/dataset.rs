use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::formats::{
    read_depth, read_flo, read_intrinsics, read_pose, write_depth, write_flo, write_flow_image, write_intrinsics,
    write_pose, write_segmentation, PoseFile,
};
use super::{ExperimentConfig, HarnessError};
use crate::geometry::{ego_flow_field, factorize, FILE_FLOW_QUANTUM};
use crate::midlevel::frame_flows;
use crate::sac::episode_seed;
use crate::scene::{raycast_render, Action, EnvironmentSpec, SpeedMode, WorldState};

/// Pin every pedestrian at its starting pose so that only the camera moves.
pub fn freeze_dynamic_objects(mut spec: EnvironmentSpec) -> EnvironmentSpec {
    let world = WorldState::new(Arc::new(spec.clone()));
    for (o, p) in spec.objects.iter_mut().zip(world.object_poses()) {
        o.pose = *p;
        o.velocity = Vector3::zeros();
    }
    spec.pedestrian_routes.clear();
    spec
}

#[derive(Debug, Clone)]
pub struct DatasetOptions {
    pub frames: usize,
    pub seed: u64,
    pub fps: f64,
    pub speed: SpeedMode,
    pub freeze: bool,
    /// Fixed action index; uniformly random actions when `None`.
    pub action: Option<usize>,
    /// Also write color-coded flow images.
    pub images: bool,
}

impl DatasetOptions {
    pub fn from_config(cfg: &ExperimentConfig, frames: usize) -> Result<Self, HarnessError> {
        Ok(Self {
            frames,
            seed: cfg.experiment.eval_seed,
            fps: cfg.experiment.train_fps,
            speed: cfg.train_speed()?,
            freeze: false,
            action: None,
            images: true,
        })
    }
}

/// Files written for one exported frame pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FramePaths {
    pub dir: PathBuf,
    pub raw: PathBuf,
    pub ego: PathBuf,
    pub obj: PathBuf,
    pub depth: PathBuf,
    pub seg: PathBuf,
    pub pose: PathBuf,
    pub intrinsics: PathBuf,
}

impl FramePaths {
    fn in_dir(dir: PathBuf) -> Self {
        Self {
            raw: dir.join("raw.flo"),
            ego: dir.join("ego.flo"),
            obj: dir.join("obj.flo"),
            depth: dir.join("depth.dpf"),
            seg: dir.join("seg.png"),
            pose: dir.join("pose.toml"),
            intrinsics: dir.join("intrinsics.toml"),
            dir,
        }
    }
}

#[derive(Serialize)]
struct DatasetManifest<'a> {
    config_hash: String,
    environment: String,
    classes: Vec<String>,
    fps: f64,
    seed: u64,
    frozen: bool,
    frames: &'a [FramePaths],
}

fn create_dir(dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::Io(format!("{}: {e}", dir.display())))
}

/// Run simulator episodes and export `frames` consecutive frame pairs as
/// raw/ego/object flow, current depth and segmentation, the current-to-prior
/// camera pose and the intrinsics. Flow files are snapped to the file grid
/// before factorizing, so the written ego and object files sum bitwise to
/// the written raw file.
pub fn render_dataset(
    cfg: &ExperimentConfig,
    opts: &DatasetOptions,
    out: &Path,
) -> Result<Vec<FramePaths>, HarnessError> {
    let name = cfg.environment()?;
    create_dir(out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut written = Vec::with_capacity(opts.frames);
    let mut episode = 0u64;
    let mut last_spec = None;
    while written.len() < opts.frames {
        let mut spec = crate::scene::build_environment(name, opts.speed, opts.fps, episode_seed(opts.seed, episode), &cfg.scene)?;
        if opts.freeze {
            spec = freeze_dynamic_objects(spec);
        }
        let mut world = WorldState::new(Arc::new(spec));
        let mut prev = raycast_render(&world, &cfg.camera);
        while written.len() < opts.frames && !world.is_done() {
            let a = opts.action.unwrap_or_else(|| rng.gen_range(0..3));
            let a = Action::from_index(a).ok_or_else(|| HarnessError::Config(format!("action {a} out of range")))?;
            world.step(a)?;
            let curr = raycast_render(&world, &cfg.camera);
            let dt = world.spec().dt();
            let flows = frame_flows(&prev, &curr, dt, cfg.midlevel.far_plane)?;
            let raw = flows.raw.quantized(FILE_FLOW_QUANTUM);
            let ego = flows.ego.quantized(FILE_FLOW_QUANTUM);
            let obj = factorize(&raw, &ego)?;

            let paths = FramePaths::in_dir(out.join(format!("frame_{:05}", written.len())));
            create_dir(&paths.dir)?;
            write_flo(&paths.raw, &raw)?;
            write_flo(&paths.ego, &ego)?;
            write_flo(&paths.obj, &obj)?;
            write_depth(&paths.depth, &curr.depth)?;
            write_segmentation(&paths.seg, &curr.seg)?;
            write_pose(&paths.pose, &PoseFile::from_transform(&curr.relative_to(&prev), dt))?;
            write_intrinsics(&paths.intrinsics, &curr.intrinsics)?;
            if opts.images {
                let scale = cfg.midlevel.flow_scale;
                write_flow_image(&paths.dir.join("raw.png"), &raw, scale)?;
                write_flow_image(&paths.dir.join("ego.png"), &ego, scale)?;
                write_flow_image(&paths.dir.join("obj.png"), &obj, scale)?;
            }
            written.push(paths);
            prev = curr;
        }
        last_spec = Some(world.spec_arc().clone());
        episode += 1;
    }
    let classes = last_spec
        .map(|s| s.categories().iter().map(|c| format!("{c:?}")).collect())
        .unwrap_or_default();
    let manifest = DatasetManifest {
        config_hash: cfg.hash(),
        environment: name.to_string(),
        classes,
        fps: opts.fps,
        seed: opts.seed,
        frozen: opts.freeze,
        frames: &written,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    let path = out.join("dataset.json");
    std::fs::write(&path, text).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    Ok(written)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorizeOutput {
    pub ego: PathBuf,
    pub obj: PathBuf,
    pub ego_image: PathBuf,
    pub obj_image: PathBuf,
    pub raw_image: PathBuf,
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Split a raw flow file into ego and object flow using a depth map, the
/// current-to-prior camera pose and the intrinsics. Writes
/// `<prefix>_ego.flo`, `<prefix>_obj.flo` and color-coded images.
pub fn factorize_files(
    flow: &Path,
    depth: &Path,
    pose: &Path,
    intrinsics: &Path,
    out_prefix: &Path,
    far_plane: f64,
    flow_scale: f64,
) -> Result<FactorizeOutput, HarnessError> {
    let k = read_intrinsics(intrinsics)?;
    let d = read_depth(depth)?;
    let size_err = |file: &Path, w: usize, h: usize| HarnessError::Format {
        file: file.display().to_string(),
        offset: 4,
        message: format!("size {w}x{h} does not match intrinsics {}x{}", k.width, k.height),
    };
    if (d.width(), d.height()) != (k.width, k.height) {
        return Err(size_err(depth, d.width(), d.height()));
    }
    let p = read_pose(pose)?;
    let m = p.transform().map_err(|e| HarnessError::Format {
        file: pose.display().to_string(),
        offset: 0,
        message: e.to_string(),
    })?;
    if !(p.dt > 0.0 && p.dt.is_finite()) {
        return Err(HarnessError::Format {
            file: pose.display().to_string(),
            offset: 0,
            message: format!("dt must be positive, got {}", p.dt),
        });
    }
    let raw = read_flo(flow, p.dt)?;
    if (raw.width(), raw.height()) != (k.width, k.height) {
        return Err(size_err(flow, raw.width(), raw.height()));
    }
    let ego = ego_flow_field(&d, &m, &k, p.dt, far_plane)?.quantized(FILE_FLOW_QUANTUM);
    let obj = factorize(&raw, &ego)?;
    let out = FactorizeOutput {
        ego: with_suffix(out_prefix, "_ego.flo"),
        obj: with_suffix(out_prefix, "_obj.flo"),
        ego_image: with_suffix(out_prefix, "_ego.png"),
        obj_image: with_suffix(out_prefix, "_obj.png"),
        raw_image: with_suffix(out_prefix, "_raw.png"),
    };
    if let Some(dir) = out.ego.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_flo(&out.ego, &ego)?;
    write_flo(&out.obj, &obj)?;
    write_flow_image(&out.ego_image, &ego, flow_scale)?;
    write_flow_image(&out.obj_image, &obj, flow_scale)?;
    write_flow_image(&out.raw_image, &raw, flow_scale)?;
    Ok(out)
}
