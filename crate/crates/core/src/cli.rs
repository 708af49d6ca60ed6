//! Command-line front end. Every command writes JSON to stdout (or `--out`)
//! and diagnostics to stderr.
//!
//! Exit codes: 0 success, 1 invalid input, 2 numerical failure.

use std::fs;
use std::io::{Read, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;
use rand::Rng;
use serde_json::json;

use crate::consistency::{all_pair_residuals, cam_loss, ConsistencyWeights};
use crate::crops::{self, CropMode, CropSpec};
use crate::encoding::Encoder;
use crate::error::Error;
use crate::features::contrast::{contrastive_loss, ContrastNet, ContrastiveConfig};
use crate::features::fusion::{fused_mean, FusionConfig, FusionNet, FusionVariant};
use crate::features::gradcheck::{grad_check, Tolerance};
use crate::features::random_matrix;
use crate::geometry::{crop_pixel_map, local_to_full, project_crop_all, project_full_all, BBox, CropIntrinsics, ImageSize};
use crate::gradsuite;
use crate::rng;
use crate::solver::{refine_cameras, SolveConfig};
use crate::synth::{make_scene, perturb, Scene, SceneConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "multicrop", version, about = "Multi-crop camera model toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the crop boxes around a base box.
    GenCrops(GenCropsArgs),
    /// Generate a synthetic scene, optionally with noisy local cameras.
    MakeScene(MakeSceneArgs),
    /// Project a scene's joints through every crop and the implied full cameras.
    Project(SceneInput),
    /// Pairwise camera-consistency residuals and L_cam of a scene.
    CheckConsistency(SceneInput),
    /// Refine a scene's local cameras with the consistency + 2D objective.
    RecoverCamera(RecoverArgs),
    /// Run the randomized finite-difference gradient suite.
    GradCheck(GradCheckArgs),
    /// Evaluate the contrastive head and loss on random features.
    DemoContrastive(DemoContrastiveArgs),
    /// Evaluate crop-aware fusion on a scene's boxes with random features.
    DemoFusion(DemoFusionArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Fixed,
    Random,
}

impl From<ModeArg> for CropMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Fixed => CropMode::Fixed,
            ModeArg::Random => CropMode::Random,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum VariantArg {
    Mlp,
    Linear,
}

#[derive(Debug, Args)]
struct GenCropsArgs {
    /// Base box as cx,cy,b
    #[arg(long, value_parser = parse_bbox, allow_hyphen_values = true)]
    bbox: BBox,
    #[arg(long, value_enum, default_value = "fixed")]
    mode: ModeArg,
    #[arg(long, default_value_t = 5)]
    m: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Image size WxH; enables out-of-image warnings.
    #[arg(long, value_parser = parse_image)]
    image: Option<ImageSize>,
    #[arg(long, default_value_t = 0.1)]
    shift_range: f64,
    /// Scale range as low,high
    #[arg(long, value_parser = parse_pair, default_value = "0.65,1.5")]
    scale_range: [f64; 2],
    #[arg(long)]
    no_scale: bool,
    #[arg(long)]
    no_shift: bool,
}

#[derive(Debug, Args)]
struct MakeSceneArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    m: usize,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, value_parser = parse_image, default_value = "1920x1080")]
    image: ImageSize,
    /// Std dev of Gaussian noise added to each local scale.
    #[arg(long, default_value_t = 0.0)]
    sigma_s: f64,
    /// Std dev of Gaussian noise added to each local translation (meters).
    #[arg(long, default_value_t = 0.0)]
    sigma_t: f64,
    /// Seed of the camera noise; defaults to the scene seed.
    #[arg(long)]
    noise_seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SceneInput {
    /// Scene JSON path; `-` or absent reads stdin.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RecoverArgs {
    #[command(flatten)]
    input: SceneInput,
    /// Solver config JSON; missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Print a CSV of the loss per iteration on stdout instead of JSON.
    #[arg(long)]
    plot_data: bool,
}

#[derive(Debug, Args)]
struct GradCheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random configurations per checked function.
    #[arg(long, default_value_t = 20)]
    configs: usize,
}

#[derive(Debug, Args)]
struct DemoContrastiveArgs {
    #[arg(long, default_value_t = 4)]
    n: usize,
    #[arg(long, default_value_t = 5)]
    m: usize,
    #[arg(long, default_value_t = 32)]
    d: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    /// Use raw dot products instead of cosine similarity.
    #[arg(long)]
    no_normalize: bool,
}

#[derive(Debug, Args)]
struct DemoFusionArgs {
    #[command(flatten)]
    input: SceneInput,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 32)]
    d: usize,
    #[arg(long, value_enum, default_value = "mlp")]
    variant: VariantArg,
    /// Highest positional-encoding frequency exponent.
    #[arg(long, default_value_t = 32)]
    bands: u32,
    /// Multiplier applied to box coordinates before encoding.
    #[arg(long, default_value_t = 1.0)]
    prescale: f64,
}

fn parse_floats(s: &str, sep: char, n: usize) -> Result<Vec<f64>, String> {
    let parts: Vec<f64> = s
        .split(sep)
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    if parts.len() != n {
        return Err(format!("expected {n} values separated by '{sep}', got {}", parts.len()));
    }
    Ok(parts)
}

fn parse_bbox(s: &str) -> Result<BBox, String> {
    let v = parse_floats(s, ',', 3)?;
    Ok(BBox::new(v[0], v[1], v[2]))
}

fn parse_pair(s: &str) -> Result<[f64; 2], String> {
    let v = parse_floats(s, ',', 2)?;
    Ok([v[0], v[1]])
}

fn parse_image(s: &str) -> Result<ImageSize, String> {
    let v = parse_floats(&s.to_lowercase(), 'x', 2)?;
    Ok(ImageSize::new(v[0], v[1]))
}

/// Failure of a command, already mapped to an exit code.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: if e.is_numerical() { EXIT_NUMERICAL } else { EXIT_INVALID },
            message: e.to_string(),
        }
    }
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_INVALID,
        message: message.into(),
    }
}

type CmdResult = std::result::Result<(), Failure>;

struct Io<'a> {
    stdin: &'a mut dyn Read,
    stdout: &'a mut dyn Write,
    stderr: &'a mut dyn Write,
}

impl Io<'_> {
    fn read_input(&mut self, path: Option<&PathBuf>) -> Result<(String, String), Failure> {
        match path {
            Some(p) if p.as_os_str() != "-" => fs::read_to_string(p)
                .map(|s| (s, p.display().to_string()))
                .map_err(|e| invalid(format!("{}: {e}", p.display()))),
            _ => {
                let mut s = String::new();
                self.stdin
                    .read_to_string(&mut s)
                    .map_err(|e| invalid(format!("stdin: {e}")))?;
                Ok((s, "<stdin>".into()))
            }
        }
    }

    fn emit<T: Serialize>(&mut self, value: &T, out: Option<&PathBuf>) -> CmdResult {
        let text = to_json(value)?;
        match out {
            Some(p) => fs::write(p, text).map_err(|e| invalid(format!("{}: {e}", p.display()))),
            None => self.stdout.write_all(text.as_bytes()).map_err(|e| invalid(format!("stdout: {e}"))),
        }
    }

    fn warn(&mut self, msg: &str) {
        let _ = writeln!(self.stderr, "warning: {msg}");
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String, Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| invalid(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

/// Parse JSON, reporting schema violations with the offending field path.
pub fn parse_json<T: DeserializeOwned>(text: &str, source: &str) -> Result<T, String> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        if path == "?" || path == "." {
            format!("{source}: {}", e.into_inner())
        } else {
            format!("{source}: invalid value at `{path}`: {}", e.into_inner())
        }
    })
}

fn load_scene(io: &mut Io, path: Option<&PathBuf>) -> Result<Scene, Failure> {
    let (text, source) = io.read_input(path)?;
    let scene: Scene = parse_json(&text, &source).map_err(invalid)?;
    scene.validate()?;
    Ok(scene)
}

fn gen_crops(io: &mut Io, a: GenCropsArgs) -> CmdResult {
    let spec = CropSpec {
        mode: a.mode.into(),
        m: a.m,
        shift_range: a.shift_range,
        scale_range: a.scale_range,
        seed: a.seed,
        no_shift: a.no_shift,
        no_scale: a.no_scale,
    };
    let boxes = crops::generate(&a.bbox, &spec)?;
    if let Some(img) = a.image {
        img.validate()?;
        for (k, b) in boxes.iter().enumerate() {
            if b.exceeds(img) {
                io.warn(&format!("crop {k} extends past the {}x{} image", img.width, img.height));
            }
        }
    }
    io.emit(&boxes, None)
}

fn make_scene_cmd(io: &mut Io, a: MakeSceneArgs) -> CmdResult {
    let mode = a.mode.map(CropMode::from).unwrap_or(if a.m == 5 { CropMode::Fixed } else { CropMode::Random });
    let cfg = SceneConfig {
        image: a.image,
        crops: CropSpec {
            mode,
            m: a.m,
            ..CropSpec::default()
        },
        ..SceneConfig::default()
    };
    let mut scene = make_scene(a.seed, &cfg)?;
    if a.sigma_s > 0.0 || a.sigma_t > 0.0 {
        scene = perturb(&scene, a.sigma_s, a.sigma_t, a.noise_seed.unwrap_or(a.seed))?;
    }
    for (k, b) in scene.bboxes.iter().enumerate() {
        if b.exceeds(cfg.image) {
            io.warn(&format!("crop {k} extends past the image"));
        }
    }
    io.emit(&scene, a.out.as_ref())
}

fn project(io: &mut Io, a: SceneInput) -> CmdResult {
    let scene = load_scene(io, a.scene.as_ref())?;
    let intr = CropIntrinsics::default();
    let img = scene.image();
    let mut crops = Vec::with_capacity(scene.bboxes.len());
    for (bbox, cam) in scene.bboxes.iter().zip(&scene.local_cams) {
        let full = local_to_full(cam, bbox, img)?;
        let full_joints = project_full_all(&scene.joints3d, &full)?;
        let mapped = full_joints
            .iter()
            .map(|p| crop_pixel_map(p, bbox, img, &intr))
            .collect::<crate::Result<Vec<_>>>()?;
        crops.push(json!({
            "bbox": bbox,
            "local_cam": cam,
            "full_cam": full,
            "crop_joints": project_crop_all(&scene.joints3d, cam, &intr)?,
            "full_joints": full_joints,
            "full_joints_in_crop": mapped,
        }));
    }
    io.emit(&json!({ "intrinsics": intr, "crops": crops }), a.out.as_ref())
}

fn check_consistency(io: &mut Io, a: SceneInput) -> CmdResult {
    let scene = load_scene(io, a.scene.as_ref())?;
    let w = ConsistencyWeights::default();
    let pairs: Vec<_> = all_pair_residuals(&scene.local_cams, &scene.bboxes)?
        .into_iter()
        .map(|((i, j), r)| json!({ "i": i, "j": j, "r_x": r.r_x, "r_y": r.r_y, "r_s": r.r_s }))
        .collect();
    let l_cam = cam_loss(&scene.local_cams, &scene.bboxes, &w)?;
    io.emit(&json!({ "weights": w, "pairs": pairs, "L_cam": l_cam }), a.out.as_ref())
}

fn recover(io: &mut Io, a: RecoverArgs) -> CmdResult {
    let scene = load_scene(io, a.input.scene.as_ref())?;
    let cfg: SolveConfig = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| invalid(format!("{}: {e}", p.display())))?;
            parse_json(&text, &p.display().to_string()).map_err(invalid)?
        }
        None => SolveConfig::default(),
    };
    let (cams, report) = refine_cameras(&scene, &cfg)?;
    let out = json!({ "config": cfg, "local_cams": cams, "report": report });
    if a.plot_data {
        let mut csv = String::from("iteration,total_loss\n");
        for (k, v) in report.history.iter().enumerate() {
            csv.push_str(&format!("{k},{v:e}\n"));
        }
        io.stdout.write_all(csv.as_bytes()).map_err(|e| invalid(format!("stdout: {e}")))?;
        if let Some(p) = &a.input.out {
            fs::write(p, to_json(&out)?).map_err(|e| invalid(format!("{}: {e}", p.display())))?;
        }
        return Ok(());
    }
    io.emit(&out, a.input.out.as_ref())
}

fn grad_check_cmd(io: &mut Io, a: GradCheckArgs) -> CmdResult {
    if a.configs == 0 {
        return Err(invalid("--configs must be >= 1"));
    }
    let report = gradsuite::run_suite(a.seed, a.configs)?;
    io.emit(&report, None)?;
    if !report.passed {
        return Err(Failure {
            code: EXIT_NUMERICAL,
            message: "gradient check failed".into(),
        });
    }
    Ok(())
}

fn demo_contrastive(io: &mut Io, a: DemoContrastiveArgs) -> CmdResult {
    if a.n < 2 || a.m < 2 {
        return Err(Error::NotEnoughSamples { n: a.n, m: a.m }.into());
    }
    let net = ContrastNet::new(a.d, a.seed)?;
    let cfg = ContrastiveConfig {
        tau: a.tau,
        normalize: !a.no_normalize,
    };
    let mut seeds = rng::seeded(a.seed);
    let mut z = Vec::with_capacity(a.n);
    for _ in 0..a.n {
        // crops of one sample share a base feature plus small per-crop noise
        let base = random_matrix(1, a.d, seeds.random()).remove(0);
        let noise = random_matrix(a.m, a.d, seeds.random());
        let sample: Vec<Vec<f64>> = noise
            .iter()
            .map(|n| base.iter().zip(n).map(|(b, e)| b + 0.3 * e).collect())
            .collect();
        z.push(sample.iter().map(|v| net.project(v)).collect::<crate::Result<Vec<_>>>()?);
    }
    let loss = contrastive_loss(&z, &cfg)?;
    let (_, grad) = crate::features::contrastive_loss_grad(&z, &cfg)?;
    let (n, m, d) = (a.n, a.m, a.d);
    let x0: Vec<f64> = z.iter().flatten().flatten().copied().collect();
    let g: Vec<f64> = grad.iter().flatten().flatten().copied().collect();
    let check = grad_check(
        |x| {
            let mut rows = x.chunks_exact(d).map(<[f64]>::to_vec);
            let b: Vec<Vec<Vec<f64>>> = (0..n).map(|_| rows.by_ref().take(m).collect()).collect();
            contrastive_loss(&b, &cfg)
        },
        &x0,
        &g,
        None,
        Tolerance::new(1e-5, 1e-8),
    )?;
    let k = (n * m) as f64;
    io.emit(
        &json!({
            "n": n, "m": m, "d": d, "tau": cfg.tau, "normalize": cfg.normalize,
            "loss": loss,
            "uniform_reference": k * (k - 1.0).ln(),
            "grad_check": check,
        }),
        None,
    )
}

fn demo_fusion(io: &mut Io, a: DemoFusionArgs) -> CmdResult {
    let scene = load_scene(io, a.input.scene.as_ref())?;
    let m = scene.bboxes.len();
    let cfg = FusionConfig {
        encoder: Encoder {
            bands: a.bands,
            prescale: a.prescale,
        },
        variant: match a.variant {
            VariantArg::Mlp => FusionVariant::Mlp,
            VariantArg::Linear => FusionVariant::Linear,
        },
        ..FusionConfig::new(a.d, m, a.seed)
    };
    let net = FusionNet::new(cfg)?;
    let h = random_matrix(m, a.d, a.seed.wrapping_add(1));
    let out = net.fuse(&h, &scene.bboxes)?;
    let mean = fused_mean(&out.u)?;
    let c = random_matrix(m, a.d, a.seed.wrapping_add(2));
    let (gp, _) = net.fuse_backward(&h, &scene.bboxes, &c)?;
    let params = net.params();
    let mut pick_rng = rng::seeded(a.seed.wrapping_add(3));
    let picks = rand::seq::index::sample(&mut pick_rng, params.len(), 40.min(params.len())).into_vec();
    let check = grad_check(
        |p| {
            let mut probe = net.clone();
            probe.set_params(p)?;
            let u = probe.fuse(&h, &scene.bboxes)?.u;
            Ok(u.iter().flatten().zip(c.iter().flatten()).map(|(x, y)| x * y).sum())
        },
        &params,
        &gp,
        Some(&picks),
        Tolerance::new(1e-4, 1e-8),
    )?;
    io.emit(
        &json!({
            "m": m, "d": a.d, "params": net.param_count(),
            "w": out.w, "u": out.u, "u_mean": mean,
            "grad_check": check,
        }),
        a.input.out.as_ref(),
    )
}

/// Run the CLI on `argv` (including the program name) and return the exit code.
pub fn run<I, T>(argv: I, stdin: &mut dyn Read, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = stdout.write_all(text.as_bytes());
                    EXIT_OK
                }
                _ => {
                    let _ = stderr.write_all(text.as_bytes());
                    EXIT_INVALID
                }
            };
        }
    };
    let mut io = Io { stdin, stdout, stderr };
    let result = match cli.command {
        Command::GenCrops(a) => gen_crops(&mut io, a),
        Command::MakeScene(a) => make_scene_cmd(&mut io, a),
        Command::Project(a) => project(&mut io, a),
        Command::CheckConsistency(a) => check_consistency(&mut io, a),
        Command::RecoverCamera(a) => recover(&mut io, a),
        Command::GradCheck(a) => grad_check_cmd(&mut io, a),
        Command::DemoContrastive(a) => demo_contrastive(&mut io, a),
        Command::DemoFusion(a) => demo_fusion(&mut io, a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(io.stderr, "error: {}", f.message);
            f.code
        }
    }
}
