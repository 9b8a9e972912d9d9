//! `labelkit`: the annotation pipeline from the command line.
//!
//! Exit codes: 0 success, 1 domain error (one line `error: <code>: <message>`
//! on standard error), 2 usage error.

mod commands;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "labelkit", version, about = "Object 6D-pose annotation pipeline")]
struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a scene config from an image folder and a camera trajectory.
    Import(ImportArgs),
    /// Fuse the scene's depth images into a TSDF and write surface points as PLY.
    Fuse(FuseArgs),
    /// Refine one object's pose against reference masks.
    Refine(RefineArgs),
    /// Run the synthetic annotation simulation and write a report.
    Simulate(SimulateArgs),
    /// Compare a predicted label manifest against a ground-truth one.
    Evaluate(EvaluateArgs),
    /// Render masks, boxes and camera-frame poses for every frame.
    Export(ExportArgs),
    /// Start the annotation HTTP service.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum TrajectoryKind {
    Tum,
    Colmap,
}

#[derive(Args, Debug)]
pub struct ImportArgs {
    /// Folder of RGB images (png/jpg), taken in file-name order for TUM.
    #[arg(long)]
    pub rgb_dir: PathBuf,
    /// TUM trajectory or COLMAP images.txt.
    #[arg(long)]
    pub trajectory: PathBuf,
    #[arg(long, value_enum)]
    pub format: TrajectoryKind,
    /// JSON camera intrinsics (fx, fy, cx, cy, width, height, depth_scale).
    #[arg(long)]
    pub intrinsics: PathBuf,
    /// Folder of 16-bit depth images with the same file names as the RGB images.
    #[arg(long)]
    pub depth_dir: Option<PathBuf>,
    /// COLMAP points3D.txt, needed for scale solving and plane alignment.
    #[arg(long)]
    pub points3d: Option<PathBuf>,
    /// Solve the reconstruction scale from depth (COLMAP only).
    #[arg(long)]
    pub solve_scale: bool,
    /// Align the dominant plane of the sparse points to z = 0, using this inlier tolerance.
    #[arg(long)]
    pub align_plane_tol_mm: Option<f64>,
    #[arg(long, default_value_t = 1000)]
    pub ransac_iterations: usize,
    /// Object to add, as ID:NAME:MESH_PATH[:UNIT_SCALE]; repeatable.
    #[arg(long = "object", value_parser = commands::parse_object_spec)]
    pub objects: Vec<labelkit_core::ingest::ObjectConfig>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Scene config to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct FuseArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long, default_value_t = 5.0)]
    pub voxel_size_mm: f64,
    #[arg(long, default_value_t = 20.0)]
    pub truncation_mm: f64,
    /// Volume corner, meters, as x,y,z.
    #[arg(long, allow_hyphen_values = true, value_parser = commands::parse_triple)]
    pub bounds_min_m: [f64; 3],
    /// Opposite volume corner, meters, as x,y,z.
    #[arg(long, allow_hyphen_values = true, value_parser = commands::parse_triple)]
    pub bounds_max_m: [f64; 3],
    /// PLY file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct RefineArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub object: u16,
    /// Reference mask as FRAME_ID=PATH; repeatable.
    #[arg(long = "mask", required = true, value_parser = commands::parse_mask_spec)]
    pub masks: Vec<(u32, PathBuf)>,
    /// JSON refine config; defaults apply to missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    /// JSON result (final pose and trace) to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Folder of .obj/.ply meshes in meters; the built-in procedural set when omitted.
    #[arg(long)]
    pub meshes: Option<PathBuf>,
    #[arg(long, default_value_t = 40)]
    pub cameras: usize,
    /// Standard deviation of the initial position noise per axis.
    #[arg(long, default_value_t = 10.0)]
    pub noise_sigma_cm: f64,
    #[arg(long, default_value_t = 10)]
    pub runs_per_mesh: usize,
    /// Start at the true orientation instead of a random one.
    #[arg(long)]
    pub keep_orientation: bool,
    #[arg(long, default_value_t = 640)]
    pub width: u32,
    #[arg(long, default_value_t = 480)]
    pub height: u32,
    #[arg(long, default_value_t = 600.0)]
    pub focal_px: f64,
    /// Camera sphere radius in mesh diameters.
    #[arg(long, default_value_t = 4.0)]
    pub radius_factor: f64,
    /// JSON refine config; defaults apply to missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON report to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Predicted labels.json.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth labels.json.
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, default_value_t = 1001)]
    pub auc_steps: usize,
    /// JSON report to write; only a summary is printed when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum BitDepth {
    #[value(name = "8")]
    Eight,
    #[value(name = "16")]
    Sixteen,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub scene_id: Option<String>,
    #[arg(long, value_enum, default_value = "16")]
    pub mask_bit_depth: BitDepth,
    /// Comma-separated frame ids; all frames when omitted.
    #[arg(long, value_delimiter = ',')]
    pub frames: Option<Vec<u32>>,
    /// Also write per-object full-footprint masks.
    #[arg(long)]
    pub amodal_masks: bool,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    /// Directory whose subdirectories each hold a scene.json.
    #[arg(long)]
    pub scene_root: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: SocketAddr,
}

/// Domain failure, reported as `error: <code>: <message>`.
#[derive(Debug)]
pub struct CliError {
    pub code: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(code: &'static str, message: impl std::fmt::Display) -> Self {
        CliError {
            code,
            message: message.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    let result = match cli.command {
        Command::Import(a) => commands::import(a),
        Command::Fuse(a) => commands::fuse(a),
        Command::Refine(a) => commands::refine(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Export(a) => commands::export(a, cli.jobs),
        Command::Serve(a) => commands::serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = e.message.replace('\n', " ");
            eprintln!("error: {}: {}", e.code, message);
            ExitCode::from(1)
        }
    }
}
