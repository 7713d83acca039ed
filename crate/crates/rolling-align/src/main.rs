//! Command-line front end: builds snippet schedules, aligns and merges
//! snippet directories, refines and evaluates depth videos, and generates
//! synthetic fixtures. Arrays travel as NPY (little-endian float32,
//! C-order), everything else as JSON.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rolling_align::coalign::{merge, solve, CoalignConfig};
use rolling_align::depth::{DepthSnippet, DepthSpace, DepthVideo};
use rolling_align::error::{Error, Result};
use rolling_align::evalkit::{evaluate, FlowField};
use rolling_align::manifest::{
    read_json, schedule_sha256, tool_version, write_json, Manifest, ManifestSnippet,
    ScheduleFile, SolutionFile, TrueParamsFile, FORMAT_VERSION,
};
use rolling_align::npy::{self, NpyArray};
use rolling_align::refine::{hook_by_name, refine, RefineConfig};
use rolling_align::scheduler::{build_schedule, SnippetSchedule};
use rolling_align::synth::{corrupt, generate, CorruptionSpec, SceneKind, SceneSpec};

#[derive(Parser)]
#[command(name = "rolling-align", version, about = "Temporally consistent depth video assembly")]
struct Cli {
    /// Worker threads; 0 means hardware concurrency. Falls back to the
    /// ROLLING_ALIGN_THREADS environment variable.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a dilated rolling-kernel snippet schedule.
    Schedule(ScheduleArgs),
    /// Generate a synthetic scene with ground truth, flow and corrupted snippets.
    Synth(SynthArgs),
    /// Co-align a snippet directory and merge it into one depth video.
    Align(AlignArgs),
    /// Run the snippet-wise refinement pass over a depth video.
    Refine(RefineArgs),
    /// Evaluate a depth video against ground truth.
    Eval(EvalArgs),
}

#[derive(clap::Args)]
struct ScheduleArgs {
    #[arg(long)]
    frames: usize,
    #[arg(long, default_value_t = 3)]
    snippet_len: usize,
    /// Comma-separated dilation rates.
    #[arg(long, default_value = "1,10,25", value_delimiter = ',')]
    dilations: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct SynthArgs {
    #[arg(long, value_enum)]
    scene: SceneArg,
    #[arg(long)]
    frames: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 96)]
    width: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Corruption spec JSON; omit for identity corruption.
    #[arg(long)]
    corrupt: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    snippet_len: usize,
    #[arg(long, default_value = "1,10,25", value_delimiter = ',')]
    dilations: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Scene velocity in pixels per frame, as "vx,vy".
    #[arg(long, value_delimiter = ',', num_args = 2)]
    velocity: Option<Vec<f64>>,
    /// Rotation in radians per frame (orbiting scene).
    #[arg(long)]
    angular_velocity: Option<f64>,
    /// Frame of the intrusion / range jump.
    #[arg(long)]
    event_frame: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum SceneArg {
    TranslatingPlane,
    OrbitingSphereField,
    NearObjectIntrusion,
    DepthRangeJump,
}

impl From<SceneArg> for SceneKind {
    fn from(v: SceneArg) -> Self {
        match v {
            SceneArg::TranslatingPlane => SceneKind::TranslatingPlane,
            SceneArg::OrbitingSphereField => SceneKind::OrbitingSphereField,
            SceneArg::NearObjectIntrusion => SceneKind::NearObjectIntrusion,
            SceneArg::DepthRangeJump => SceneKind::DepthRangeJump,
        }
    }
}

#[derive(clap::Args)]
struct AlignArgs {
    /// Snippet directory containing manifest.json.
    #[arg(long)]
    snippets: PathBuf,
    #[arg(long)]
    schedule: PathBuf,
    /// Co-alignment config JSON; omit for defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    solution: PathBuf,
}

#[derive(clap::Args)]
struct RefineArgs {
    #[arg(long, name = "in")]
    input: PathBuf,
    #[arg(long, default_value = "identity")]
    hook: String,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Ground-truth value space.
    #[arg(long, value_enum, default_value = "inverse-depth")]
    gt_space: SpaceArg,
    #[arg(long)]
    flow: Option<PathBuf>,
    /// Optional uint8 NPY validity mask for the flow, shape (N_F-1, H, W).
    #[arg(long)]
    flow_mask: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum SpaceArg {
    InverseDepth,
    Depth,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli
        .threads
        .or_else(|| {
            std::env::var("ROLLING_ALIGN_THREADS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or(0);
    if threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: cannot configure {threads} threads: {e}");
            return ExitCode::from(2);
        }
    }

    let result = match cli.command {
        Command::Schedule(args) => cmd_schedule(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Align(args) => cmd_align(args),
        Command::Refine(args) => cmd_refine(args),
        Command::Eval(args) => cmd_eval(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 = invalid input, 3 = numerical failure, 4 = protocol mismatch.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidSchedule(_)
        | Error::InvalidSpec(_)
        | Error::DegenerateValue(_)
        | Error::EmptyMask(_)
        | Error::Format(_)
        | Error::Io(_) => 2,
        Error::NonFinite { .. } | Error::SingularFit(_) | Error::HookFailure(_) => 3,
        Error::ShapeMismatch(_) | Error::ProtocolMismatch(_) => 4,
    }
}

fn cmd_schedule(args: ScheduleArgs) -> Result<()> {
    let (schedule, skipped) =
        build_schedule(args.frames, args.snippet_len, &args.dilations, args.stride)?;
    for g in skipped {
        eprintln!(
            "warning: dilation {g} skipped, no snippet of length {} fits in {} frames",
            args.snippet_len, args.frames
        );
    }
    write_json(&args.out, &ScheduleFile::from_schedule(&schedule))?;
    println!(
        "schedule: {} snippets over {} frames -> {}",
        schedule.snippet_count(),
        schedule.frame_count(),
        args.out.display()
    );
    Ok(())
}

fn video_to_npy(video: &DepthVideo) -> NpyArray<f32> {
    NpyArray {
        shape: vec![video.frame_count(), video.height(), video.width()],
        data: video.data().to_vec(),
    }
}

fn video_from_npy(path: &Path, space: DepthSpace) -> Result<DepthVideo> {
    let arr = npy::read_f32(path)?;
    if arr.shape.len() != 3 {
        return Err(Error::ShapeMismatch(format!(
            "{}: expected a (frames, height, width) array, got shape {:?}",
            path.display(),
            arr.shape
        )));
    }
    DepthVideo::new(arr.data, arr.shape[0], arr.shape[1], arr.shape[2], space)
}

fn flow_from_npy(path: &Path, mask_path: Option<&Path>) -> Result<FlowField> {
    let arr = npy::read_f32(path)?;
    if arr.shape.len() != 4 || arr.shape[1] != 2 {
        return Err(Error::ShapeMismatch(format!(
            "{}: expected a (pairs, 2, height, width) array, got shape {:?}",
            path.display(),
            arr.shape
        )));
    }
    let (pairs, h, w) = (arr.shape[0], arr.shape[2], arr.shape[3]);
    let valid = match mask_path {
        None => vec![true; pairs * h * w],
        Some(mp) => {
            let mask = npy::read_u8(mp)?;
            if mask.shape != vec![pairs, h, w] {
                return Err(Error::ShapeMismatch(format!(
                    "{}: flow mask shape {:?} does not match flow {:?}",
                    mp.display(),
                    mask.shape,
                    arr.shape
                )));
            }
            mask.data.iter().map(|&b| b != 0).collect()
        }
    };
    FlowField::new(arr.data, valid, pairs, h, w)
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let mut spec = SceneSpec::new(args.scene.into(), args.frames, args.height, args.width, args.seed);
    if let Some(v) = &args.velocity {
        spec.velocity = (v[0], v[1]);
    }
    if let Some(w) = args.angular_velocity {
        spec.angular_velocity = w;
    }
    spec.event_frame = args.event_frame;

    let corruption = match &args.corrupt {
        Some(path) => read_json::<CorruptionSpec>(path)?,
        None => CorruptionSpec::identity(args.seed),
    };

    let (gt, flow) = generate(&spec)?;
    let (schedule, skipped) =
        build_schedule(args.frames, args.snippet_len, &args.dilations, args.stride)?;
    for g in &skipped {
        eprintln!("warning: dilation {g} skipped");
    }
    let (snippets, hidden) = corrupt(&gt, &schedule, &corruption)?;

    std::fs::create_dir_all(args.out.join("snippets"))?;
    npy::write_f32(&args.out.join("gt.npy"), &video_to_npy(&gt))?;
    npy::write_f32(
        &args.out.join("flow.npy"),
        &NpyArray {
            shape: vec![flow.pairs(), 2, flow.height(), flow.width()],
            data: flow.data().to_vec(),
        },
    )?;
    npy::write_u8(
        &args.out.join("flow_mask.npy"),
        &NpyArray {
            shape: vec![flow.pairs(), flow.height(), flow.width()],
            data: flow.validity().iter().map(|&b| b as u8).collect(),
        },
    )?;
    write_json(&args.out.join("schedule.json"), &ScheduleFile::from_schedule(&schedule))?;
    write_json(&args.out.join("true_params.json"), &TrueParamsFile::new(&hidden))?;
    write_json(&args.out.join("scene.json"), &spec)?;
    write_json(&args.out.join("corruption.json"), &corruption)?;

    let mut entries = Vec::with_capacity(snippets.len());
    for snip in &snippets {
        let file = format!("snippets/snippet_{:04}.npy", snip.snippet_id());
        npy::write_f32(
            &args.out.join(&file),
            &NpyArray {
                shape: vec![snip.len(), snip.height(), snip.width()],
                data: snip.data().to_vec(),
            },
        )?;
        entries.push(ManifestSnippet {
            id: snip.snippet_id(),
            file,
            dilation: snip.dilation(),
            frames: snip.frame_indices().to_vec(),
        });
    }
    let manifest = Manifest {
        version: FORMAT_VERSION.to_string(),
        tool: tool_version(),
        frame_count: args.frames,
        height: args.height,
        width: args.width,
        space_tag: DepthSpace::InverseDepth,
        snippet_len: args.snippet_len,
        schedule_sha256: schedule_sha256(&schedule),
        seed: args.seed,
        snippets: entries,
    };
    write_json(&args.out.join("manifest.json"), &manifest)?;
    println!(
        "synth: {} frames, {} snippets -> {}",
        args.frames,
        snippets.len(),
        args.out.display()
    );
    Ok(())
}

fn load_snippet_dir(dir: &Path, schedule: &SnippetSchedule) -> Result<Vec<DepthSnippet>> {
    let manifest: Manifest = read_json(&dir.join("manifest.json"))?;
    let mismatch = |msg: String| Error::ProtocolMismatch(format!("{}: {msg}", dir.display()));
    if manifest.schedule_sha256 != schedule_sha256(schedule) {
        return Err(mismatch("schedule hash does not match manifest".into()));
    }
    if manifest.snippets.len() != schedule.snippet_count() {
        return Err(mismatch(format!(
            "manifest lists {} snippets, schedule has {}",
            manifest.snippets.len(),
            schedule.snippet_count()
        )));
    }
    let mut snippets = Vec::with_capacity(manifest.snippets.len());
    for (entry, spec) in manifest.snippets.iter().zip(schedule.snippets()) {
        if entry.id != spec.id || entry.frames != spec.frames || entry.dilation != spec.dilation {
            return Err(mismatch(format!("snippet {} disagrees with schedule", entry.id)));
        }
        let arr = npy::read_f32(&dir.join(&entry.file))?;
        if arr.shape != vec![entry.frames.len(), manifest.height, manifest.width] {
            return Err(mismatch(format!(
                "{}: shape {:?} does not match manifest ({}x{}x{})",
                entry.file,
                arr.shape,
                entry.frames.len(),
                manifest.height,
                manifest.width
            )));
        }
        snippets.push(DepthSnippet::new(
            arr.data,
            entry.frames.clone(),
            entry.dilation,
            entry.id,
            manifest.height,
            manifest.width,
        )?);
    }
    Ok(snippets)
}

fn cmd_align(args: AlignArgs) -> Result<()> {
    let schedule: SnippetSchedule = read_json::<ScheduleFile>(&args.schedule)?.into_schedule()?;
    let snippets = load_snippet_dir(&args.snippets, &schedule)?;
    let cfg = match &args.config {
        Some(path) => read_json::<CoalignConfig>(path)?,
        None => CoalignConfig::default(),
    };
    let solution = solve(&schedule, &snippets, &cfg)?;
    let merged = merge(&schedule, &snippets, &solution.params)?;
    npy::write_f32(&args.out, &video_to_npy(&merged))?;
    write_json(&args.solution, &SolutionFile::from_solution(&solution))?;
    println!("final objective: {:.6}", solution.final_objective);
    if solution.clamped_pixels > 0 {
        eprintln!(
            "warning: {} aligned pixels clamped to eps_inv during the best step",
            solution.clamped_pixels
        );
    }
    Ok(())
}

fn cmd_refine(args: RefineArgs) -> Result<()> {
    let video = video_from_npy(&args.input, DepthSpace::InverseDepth)?;
    let cfg = match &args.config {
        Some(path) => read_json::<RefineConfig>(path)?,
        None => RefineConfig::default(),
    };
    let hook = hook_by_name(&args.hook).ok_or_else(|| {
        Error::InvalidSpec(format!(
            "unknown hook {:?}; available: identity, gaussian_smooth, snippet_mean",
            args.hook
        ))
    })?;
    let refined = refine(&video, &cfg, hook.as_ref())?;
    npy::write_f32(&args.out, &video_to_npy(&refined))?;
    println!("refined {} frames -> {}", refined.frame_count(), args.out.display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let pred = video_from_npy(&args.pred, DepthSpace::InverseDepth)?;
    let gt_space = match args.gt_space {
        SpaceArg::InverseDepth => DepthSpace::InverseDepth,
        SpaceArg::Depth => DepthSpace::Depth,
    };
    let gt = video_from_npy(&args.gt, gt_space)?;
    let flow = match &args.flow {
        Some(path) => Some(flow_from_npy(path, args.flow_mask.as_deref())?),
        None => None,
    };
    let report = evaluate(&pred, &gt, flow.as_ref(), None)?;
    write_json(&args.out, &report)?;
    match report.opw_x1000 {
        Some(opw) => println!(
            "AbsRel {:.6}  delta1 {:.6}  OPW(x1000) {:.6}",
            report.abs_rel, report.delta1, opw
        ),
        None => println!("AbsRel {:.6}  delta1 {:.6}", report.abs_rel, report.delta1),
    }
    Ok(())
}
