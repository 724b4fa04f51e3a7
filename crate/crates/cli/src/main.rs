//! `larm` command-line entry points.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use larm::camera::{JointKind, JointSpec};
use larm::dataset::{self, GenConfig};
use larm::joint::{
    self, CorrespondenceProvider, EstimateConfig, FrameSynthesizer, GtSynthesizer, JointResultJson, JsonMatcher,
    ModelSynthesizer, SyntheticMatcher,
};
use larm::metrics::{self, EvalConfig, EvalObject, MeshObject, SceneObject};
use larm::model::{self, ModelConfig, Params};
use larm::recon::{self, ReconConfig, Reconstruction};
use larm::synth::{self, ArticulatedScene};
use larm::train::{Stage, TrainConfig};
use larm::{pipeline, LarmError, SampleFrame};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Parser, Debug)]
#[command(name = "larm", version, about = "Articulated-object view synthesis, joint estimation and reconstruction")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// Seed for every random choice of the command.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker cap (the pipeline runs on one worker).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Render a synthetic dataset tree.
    GenData {
        #[arg(long)]
        scenes: Option<usize>,
        #[arg(long)]
        resolution: Option<usize>,
        #[arg(long)]
        views_per_state: Option<usize>,
        #[arg(long)]
        target_views: Option<usize>,
        #[arg(long)]
        no_augment: bool,
    },
    /// RGB-only training of a 3-channel model.
    Pretrain(TrainArgs),
    /// Training with depth and mask heads (optionally warm-started).
    Finetune(TrainArgs),
    /// Predict frames for a scene at novel poses and states.
    Infer {
        #[command(flatten)]
        scene: SceneArgs,
        #[arg(long, default_value_t = 8)]
        views: usize,
        #[arg(long, value_delimiter = ',', default_value = "0,0.5,1")]
        thetas: Vec<f64>,
    },
    /// Fit the joint from synthesized frames.
    EstimateJoint {
        #[command(flatten)]
        scene: SceneArgs,
        /// Directory of `matches_p{pose}_s{u}_s{v}.json` files.
        #[arg(long)]
        matches: Option<PathBuf>,
        #[arg(long)]
        kind: Option<JointKind>,
        #[arg(long)]
        n_states: Option<usize>,
        #[arg(long)]
        n_poses: Option<usize>,
    },
    /// Fuse canonical-state views into body and movable meshes.
    Reconstruct {
        #[command(flatten)]
        scene: SceneArgs,
        #[arg(long)]
        views: Option<usize>,
        /// Joint result JSON; estimated when absent.
        #[arg(long)]
        joint: Option<PathBuf>,
        #[arg(long)]
        matches: Option<PathBuf>,
    },
    /// Score a reconstructed object (or a scene file) against a GT scene.
    Evaluate {
        /// Object directory (with object.json) or a scene.json.
        #[arg(long)]
        pred: PathBuf,
        /// GT scene.json.
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        n_points: Option<usize>,
        #[arg(long)]
        n_states: Option<usize>,
    },
    /// Frames at uniformly spaced states for fixed poses.
    InterpVideo {
        #[command(flatten)]
        scene: SceneArgs,
        #[arg(long, default_value_t = 2)]
        poses: usize,
        #[arg(long, default_value_t = 25)]
        frames: usize,
    },
    /// Cabinet with several parts, 3K+3 input views.
    MultiPart {
        #[arg(long, value_delimiter = ',', default_value = "prismatic,prismatic")]
        kinds: Vec<JointKind>,
        #[arg(long)]
        ckpt: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    scenes: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Checkpoint to start from.
    #[arg(long)]
    init: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SceneArgs {
    /// Dataset scene directory (scene.json, 0/input_*).
    #[arg(long)]
    scene_dir: PathBuf,
    /// Model checkpoint; ground-truth rendering when absent.
    #[arg(long)]
    ckpt: Option<PathBuf>,
}

/// Everything a command may read from `--config`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
struct CliConfig {
    seed: u64,
    gen: GenConfig,
    model: ModelConfig,
    train: TrainConfig,
    estimate: EstimateConfig,
    recon: ReconConfig,
    eval: EvalConfig,
}

impl CliConfig {
    fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.gen.seed = seed;
        self.train.seed = seed;
        self.estimate.ransac.seed = seed;
        self.eval.seed = seed;
    }
}

enum Failure {
    Usage(String),
    Pipeline(LarmError),
}

impl From<LarmError> for Failure {
    fn from(e: LarmError) -> Self {
        match e {
            LarmError::Usage(m) => Failure::Usage(m),
            e => Failure::Pipeline(e),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn schema() -> String {
    serde_json::to_string_pretty(&CliConfig::default()).expect("serializable")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            eprintln!("config schema (--config):\n{}", schema());
            return ExitCode::from(1);
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("usage error: {m}\nconfig schema (--config):\n{}", schema());
            ExitCode::from(1)
        }
        Err(Failure::Pipeline(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn load_config(cli: &Cli) -> CliResult<CliConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?
        }
        None => CliConfig::default(),
    };
    let seed = cli.seed.unwrap_or(cfg.seed);
    cfg.set_seed(seed);
    if cli.threads == Some(0) {
        return Err(Failure::Usage("--threads must be positive".into()));
    }
    Ok(cfg)
}

fn require(path: &Path) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("{} does not exist", path.display())))
    }
}

fn create_out(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|source| LarmError::DiskWrite { path: dir.display().to_string(), source })?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(LarmError::from)?;
    fs::write(path, text + "\n").map_err(|source| LarmError::DiskWrite { path: path.display().to_string(), source })?;
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = load_config(&cli)?;
    let out = cli.out.clone();
    create_out(&out)?;
    match cli.cmd {
        Cmd::GenData { scenes, resolution, views_per_state, target_views, no_augment } => {
            let g = &mut cfg.gen;
            g.scenes = scenes.unwrap_or(g.scenes);
            g.resolution = resolution.unwrap_or(g.resolution);
            g.views_per_state = views_per_state.unwrap_or(g.views_per_state);
            g.target_views = target_views.unwrap_or(g.target_views);
            if no_augment {
                g.augment.enabled = false;
            }
            write_json(&out.join("config.json"), &cfg)?;
            let index = dataset::make_dataset(&out, &cfg.gen)?;
            log::info!("wrote {} frames for {} scenes", index.records.len(), index.scene_ids().len());
        }
        Cmd::Pretrain(a) => train_cmd(&mut cfg, &out, a, Stage::Pretrain)?,
        Cmd::Finetune(a) => train_cmd(&mut cfg, &out, a, Stage::Finetune)?,
        Cmd::Infer { scene, views, thetas } => {
            let ctx = SceneContext::load(&scene)?;
            write_json(&out.join("config.json"), &cfg)?;
            let synth = ctx.synthesizer(0);
            let size = ctx.image_size(cfg.model.width);
            let cams = synth::fibonacci_cameras(synth::default_intrinsics(size), views, synth::ELEVATION_RANGE);
            for (v, cam) in cams.iter().enumerate() {
                for (t, &theta) in thetas.iter().enumerate() {
                    let frame = synth.synthesize(cam, theta)?;
                    dataset::write_sample(&frame, &out.join(format!("pred_v{v:03}_t{t:02}")))?;
                }
            }
        }
        Cmd::EstimateJoint { scene, matches, kind, n_states, n_poses } => {
            let ctx = SceneContext::load(&scene)?;
            cfg.estimate.n_states = n_states.unwrap_or(cfg.estimate.n_states);
            cfg.estimate.n_poses = n_poses.unwrap_or(cfg.estimate.n_poses);
            write_json(&out.join("config.json"), &cfg)?;
            let fit = ctx.estimate(&cfg, matches.as_deref(), kind)?;
            write_json(&out.join("joint.json"), &JointResultJson::from(&fit))?;
        }
        Cmd::Reconstruct { scene, views, joint, matches } => {
            let ctx = SceneContext::load(&scene)?;
            cfg.recon.n_views = views.unwrap_or(cfg.recon.n_views);
            cfg.recon.image_size = ctx.image_size(cfg.recon.image_size);
            write_json(&out.join("config.json"), &cfg)?;
            let spec = match joint {
                Some(p) => {
                    let text = fs::read_to_string(&p).map_err(LarmError::from)?;
                    let j: JointResultJson = serde_json::from_str(&text).map_err(LarmError::from)?;
                    j.to_result()?.spec
                }
                None => ctx.estimate(&cfg, matches.as_deref(), None)?.spec,
            };
            let rec = recon::reconstruct(ctx.synthesizer(0).as_ref(), &cfg.recon)?;
            recon::write_object(&out, &rec.body, &[(rec.movable, spec)])?;
        }
        Cmd::Evaluate { pred, gt, n_points, n_states } => {
            cfg.eval.n_points = n_points.unwrap_or(cfg.eval.n_points);
            cfg.eval.n_states = n_states.unwrap_or(cfg.eval.n_states);
            require(&pred)?;
            require(&gt)?;
            write_json(&out.join("config.json"), &cfg)?;
            let gt_scene = dataset::load_scene(&gt)?;
            let gt_obj = SceneObject { scene: &gt_scene, joint_id: 0 };
            let pred_scene;
            let pred_mesh;
            let pred_obj: &dyn EvalObject = if pred.is_dir() {
                let (body, mut parts) = recon::read_object(&pred)?;
                if parts.len() != 1 {
                    return Err(Failure::Usage(format!("expected one movable part, found {}", parts.len())));
                }
                let (movable, joint) = parts.remove(0);
                pred_mesh = MeshObject { meshes: Reconstruction { body, movable }, joint };
                &pred_mesh
            } else {
                pred_scene = dataset::load_scene(&pred)?;
                &SceneObject { scene: &pred_scene, joint_id: 0 }
            };
            let name = gt.parent().and_then(|p| p.file_name()).map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let report = metrics::aggregate(vec![metrics::evaluate_object(&name, pred_obj, &gt_obj, &cfg.eval)?])?;
            write_json(&out.join("report.json"), &report)?;
            fs::write(out.join("report.csv"), metrics::report_csv(&report)).map_err(LarmError::from)?;
        }
        Cmd::InterpVideo { scene, poses, frames } => {
            if frames < 2 {
                return Err(Failure::Usage("--frames must be at least 2".into()));
            }
            let ctx = SceneContext::load(&scene)?;
            write_json(&out.join("config.json"), &cfg)?;
            let synth = ctx.synthesizer(0);
            let size = ctx.image_size(cfg.model.width);
            let cams = joint::query_cameras(size, poses);
            let mut consistency = Vec::new();
            for (p, cam) in cams.iter().enumerate() {
                let dir = out.join(format!("pose_{p:02}"));
                create_out(&dir)?;
                let mut video = Vec::with_capacity(frames);
                for k in 0..frames {
                    let f = synth.synthesize(cam, k as f64 / (frames - 1) as f64)?;
                    dataset::write_rgb_png(&dir.join(format!("frame_{k:03}.png")), &f.rgb, f.width(), f.height())?;
                    video.push(metrics::composite_over_white(&f.rgb, &f.fg_mask));
                }
                consistency.push(metrics::temporal_consistency(&video)?);
            }
            write_json(&out.join("video.json"), &serde_json::json!({ "frames": frames, "temporal_consistency": consistency }))?;
        }
        Cmd::MultiPart { kinds, ckpt } => {
            write_json(&out.join("config.json"), &cfg)?;
            multi_part_cmd(&cfg, &out, &kinds, ckpt.as_deref())?;
        }
    }
    Ok(())
}

fn train_cmd(cfg: &mut CliConfig, out: &Path, a: TrainArgs, stage: Stage) -> CliResult<()> {
    let t = &mut cfg.train;
    t.stage = stage;
    t.steps = a.steps.unwrap_or(t.steps);
    t.batch_size = a.batch_size.unwrap_or(t.batch_size);
    t.scenes = a.scenes.unwrap_or(t.scenes);
    t.lr = a.lr.unwrap_or(t.lr);
    cfg.model.out_channels = match stage {
        Stage::Pretrain => 3,
        Stage::Finetune => 6,
    };
    let init = match &a.init {
        Some(p) => {
            require(p)?;
            let ck = dataset::load_params(p, None)?;
            Some(if ck.params.cfg.out_channels == 3 && stage == Stage::Finetune {
                model::init_finetune_heads(&ck.params, cfg.model)?
            } else {
                ck.params
            })
        }
        None => None,
    };
    if let Some(p) = &init {
        if p.cfg != cfg.model {
            return Err(Failure::Usage(format!("--init model {:?} differs from configured {:?}", p.cfg, cfg.model)));
        }
    }
    write_json(&out.join("config.json"), cfg)?;
    pipeline::train_run(out, cfg.model, &cfg.train, init, true)?;
    Ok(())
}

/// A dataset scene with either GT rendering or a trained model as frame source.
struct SceneContext {
    scene: Option<ArticulatedScene>,
    inputs: Vec<SampleFrame>,
    params: Option<Params<f32>>,
}

impl SceneContext {
    fn load(a: &SceneArgs) -> CliResult<Self> {
        require(&a.scene_dir)?;
        let scene_path = a.scene_dir.join("scene.json");
        let scene = if scene_path.exists() { Some(dataset::load_scene(&scene_path)?) } else { None };
        let (params, inputs) = match &a.ckpt {
            Some(p) => {
                require(p)?;
                let ck = dataset::load_params(p, None)?;
                (Some(ck.params), read_inputs(&a.scene_dir.join("0"))?)
            }
            None => (None, Vec::new()),
        };
        if params.is_none() && scene.is_none() {
            return Err(Failure::Usage(format!("{} has no scene.json and no --ckpt was given", a.scene_dir.display())));
        }
        Ok(Self { scene, inputs, params })
    }

    fn synthesizer(&self, joint_id: usize) -> Box<dyn FrameSynthesizer + '_> {
        match (&self.params, &self.scene) {
            (Some(params), _) => Box::new(ModelSynthesizer { params, inputs: &self.inputs, joint_id }),
            (None, Some(scene)) => Box::new(GtSynthesizer { scene, joint_id }),
            (None, None) => unreachable!("checked in load"),
        }
    }

    /// Model resolution when a model is loaded.
    fn image_size(&self, default: usize) -> usize {
        self.params.as_ref().map_or(default, |p| p.cfg.width)
    }

    fn estimate(&self, cfg: &CliConfig, matches: Option<&Path>, kind: Option<JointKind>) -> CliResult<joint::JointFitResult> {
        let kind = match (kind, &self.scene) {
            (Some(k), _) => k,
            (None, Some(s)) => s.parts[0].joint.kind,
            (None, None) => return Err(Failure::Usage("--kind is required without scene.json".into())),
        };
        let matcher: Box<dyn CorrespondenceProvider + '_> = match (matches, &self.scene) {
            (Some(dir), _) => Box::new(JsonMatcher { dir: dir.to_path_buf() }),
            (None, Some(scene)) => Box::new(SyntheticMatcher { scene, joint_id: 0, stride: 2 }),
            (None, None) => return Err(Failure::Usage("--matches is required without scene.json".into())),
        };
        let cams = joint::query_cameras(self.image_size(cfg.recon.image_size), cfg.estimate.n_poses);
        Ok(joint::estimate_joint(self.synthesizer(0).as_ref(), matcher.as_ref(), &cams, kind, &cfg.estimate)?)
    }
}

fn read_inputs(dir: &Path) -> CliResult<Vec<SampleFrame>> {
    let mut stems: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(LarmError::from)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json") && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("input_")))
        .map(|p| p.with_extension(""))
        .collect();
    stems.sort();
    Ok(stems.iter().map(|s| dataset::read_sample(s)).collect::<larm::Result<Vec<_>>>()?)
}

fn multi_part_cmd(cfg: &CliConfig, out: &Path, kinds: &[JointKind], ckpt: Option<&Path>) -> CliResult<()> {
    if kinds.is_empty() {
        return Err(Failure::Usage("--kinds needs at least one joint kind".into()));
    }
    let scene = synth::sample_multi_part_scene(cfg.seed, kinds);
    dataset::save_scene(&out.join("scene.json"), &scene)?;
    let params = ckpt.map(|p| dataset::load_params(p, None)).transpose()?.map(|c| c.params);
    let size = params.as_ref().map_or(cfg.recon.image_size, |p| p.cfg.width);
    let mut recon_cfg = cfg.recon;
    recon_cfg.image_size = size;
    // Rest triplet shared by every part, plus one maximal-state triplet per part.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let intr = synth::default_intrinsics(size);
    let rest_cams = synth::spread_cameras(&mut rng, intr, 3);
    let inputs: Vec<Vec<SampleFrame>> = (0..kinds.len())
        .map(|k| {
            let max_cams = synth::spread_cameras(&mut rng, intr, 3);
            let rest = rest_cams.iter().map(|c| synth::rasterize(&scene, c, 0.0, k));
            rest.chain(max_cams.iter().map(|c| synth::rasterize(&scene, c, 1.0, k))).collect()
        })
        .collect();
    for (k, frames) in inputs.iter().enumerate() {
        for (i, f) in frames.iter().enumerate() {
            dataset::write_sample(f, &out.join(format!("inputs/part_{k}/input_{i:03}")))?;
        }
    }
    let synths: Vec<Box<dyn FrameSynthesizer>> = (0..kinds.len())
        .map(|k| -> Box<dyn FrameSynthesizer> {
            match &params {
                Some(p) => Box::new(ModelSynthesizer { params: p, inputs: &inputs[k], joint_id: k }),
                None => Box::new(GtSynthesizer { scene: &scene, joint_id: k }),
            }
        })
        .collect();
    let matchers: Vec<SyntheticMatcher> = (0..kinds.len()).map(|k| SyntheticMatcher { scene: &scene, joint_id: k, stride: 2 }).collect();
    let parts: Vec<(&dyn FrameSynthesizer, &dyn CorrespondenceProvider, JointKind)> =
        (0..kinds.len()).map(|k| (synths[k].as_ref(), &matchers[k] as &dyn CorrespondenceProvider, kinds[k])).collect();
    let cams = joint::query_cameras(size, cfg.estimate.n_poses);
    let res = recon::multi_part_reconstruct(&parts, &cams, &cfg.estimate, &recon_cfg)?;
    let meshes: Vec<(recon::PartMesh, JointSpec)> = res.parts.iter().map(|(m, f)| (m.clone(), f.spec)).collect();
    recon::write_object(out, &res.body, &meshes)?;
    let joints: Vec<JointResultJson> = res.parts.iter().map(|(_, f)| JointResultJson::from(f)).collect();
    write_json(&out.join("joints.json"), &joints)?;
    Ok(())
}
