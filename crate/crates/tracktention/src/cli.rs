//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage errors, 2 data/processing errors.

use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::baselines::{conv3d, joint_st_attention, spatial_attention, temporal_attention, BaselineAttnParams, BaselineKind};
use crate::bench::{bench_scaling, result_to_csv, BenchConfig, BenchTarget, SweepAxis};
use crate::denoise::denoise_demo;
use crate::error::{Error, Result};
use crate::eval::{eval_depth, AlignMode};
use crate::layer::{init_layer, tracktention_forward, LayerConfig};
use crate::rng::Rng;
use crate::ten1;
use crate::tensor::{DType, Scalar, Tensor};
use crate::trackatt::{bias_grad_check, TracktentionParams};
use crate::tracks::{
    constant_tracks, coverage, generate_tracks, read_motion, read_tracks, sample_queries,
    write_tracks, MotionField, QuerySpec, QueryStrategy,
};
use crate::video::FeatureMap;

#[derive(Parser)]
#[command(
    name = "tracktention",
    version,
    about = "Track-guided temporal attention over video feature volumes"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate point tracks for a synthetic motion field
    GenTracks(GenTracksArgs),
    /// Apply the layer (or a baseline operator) to a feature volume
    Run(RunArgs),
    /// Time an operator over a size sweep and fit the scaling exponent
    Bench(BenchArgs),
    /// Score a predicted depth volume against ground truth
    EvalDepth(EvalDepthArgs),
    /// Run the synthetic track-denoising demonstration
    DenoiseDemo(DenoiseDemoArgs),
    /// Compare analytic position gradients against finite differences
    Gradcheck(GradcheckArgs),
    /// Report how much of a frame lies near a visible track point
    Coverage(CoverageArgs),
}

#[derive(Args)]
struct GenTracksArgs {
    /// Frame count (ignored when --motion is given)
    #[arg(long, default_value_t = 8)]
    frames: usize,
    /// Grid height (ignored when --motion is given)
    #[arg(long, default_value_t = 16)]
    height: usize,
    /// Grid width (ignored when --motion is given)
    #[arg(long, default_value_t = 16)]
    width: usize,
    /// Where query points are seeded
    #[arg(long, value_enum, default_value = "grid_t0")]
    strategy: QueryStrategy,
    /// Number of queries (grid_t0 rounds to a square count)
    #[arg(long, default_value_t = 64)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Motion description (JSON); identity motion when absent
    #[arg(long)]
    motion: Option<PathBuf>,
    /// Output track file (JSON)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Input feature volume, TEN1 [T, H, W, d]
    #[arg(long)]
    features: PathBuf,
    /// Track file (JSON); required for the track-attention path
    #[arg(long, required_unless_present = "baseline")]
    tracks: Option<PathBuf>,
    /// Layer configuration (JSON); defaults adapt to the input width
    #[arg(long)]
    config: Option<PathBuf>,
    /// Apply a dense baseline operator instead of the layer
    #[arg(long, value_enum)]
    baseline: Option<BaselineKind>,
    /// Convolution kernel, TEN1 [k_t, k_h, k_w, d, d]
    #[arg(long, required_if_eq("baseline", "conv3d"))]
    kernel: Option<PathBuf>,
    /// Output feature volume (TEN1, same dtype as the input)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Swept size axis
    #[arg(long, value_enum, default_value = "hw")]
    sweep: SweepAxis,
    /// Operator to time
    #[arg(long, value_enum, default_value = "tracktention")]
    op: BenchTarget,
    /// Shorthand for timing one of the dense baselines
    #[arg(long, value_enum, conflicts_with = "op")]
    baseline: Option<BaselineKind>,
    /// Ascending sweep sizes, comma separated (at least 4)
    #[arg(long, value_delimiter = ',', required = true)]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Timed repetitions per point
    #[arg(long, default_value_t = 5)]
    runs: usize,
    /// Frame count when T is not swept
    #[arg(long, default_value_t = 4)]
    frames: usize,
    /// Track count when M is not swept
    #[arg(long, default_value_t = 16)]
    tracks: usize,
    /// Feature width
    #[arg(long, default_value_t = 32)]
    d_f: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    /// Emit zero timings and no slope (byte-stable output)
    #[arg(long)]
    no_timing: bool,
    /// Token budget for joint space-time attention
    #[arg(long, default_value_t = crate::baselines::DEFAULT_JOINT_TOKEN_GUARD)]
    joint_guard: usize,
    /// Worker threads (only 1 is supported; timing stays unconfounded)
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// CSV destination; stdout when absent
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalDepthArgs {
    /// Predicted depth, TEN1 [T, H, W]
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth depth, TEN1 [T, H, W]; entries <= 0 are ignored
    #[arg(long)]
    gt: PathBuf,
    /// Validity mask, TEN1 [T, H, W]; nonzero entries are valid
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "per_video")]
    mode: AlignMode,
    /// Threshold for the ratio-accuracy metric
    #[arg(long, default_value_t = 1.25)]
    tau: f64,
}

#[derive(Args)]
struct DenoiseDemoArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 16)]
    frames: usize,
    #[arg(long, default_value_t = 16)]
    height: usize,
    #[arg(long, default_value_t = 16)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    tracks: usize,
    #[arg(long, default_value_t = 1.0)]
    noise_std: f64,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 6)]
    frames: usize,
    #[arg(long, default_value_t = 8)]
    height: usize,
    #[arg(long, default_value_t = 8)]
    width: usize,
    #[arg(long, default_value_t = 8)]
    tracks: usize,
}

#[derive(Args)]
struct CoverageArgs {
    /// Track file (JSON)
    #[arg(long)]
    tracks: PathBuf,
    /// Frame to measure
    #[arg(long)]
    frame: usize,
    /// Distance within which a pixel counts as covered
    #[arg(long, default_value_t = 1.0)]
    radius: f64,
    #[arg(long)]
    height: usize,
    #[arg(long)]
    width: usize,
}

pub fn cli_main<I: IntoIterator<Item = String>>(argv: I) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli.cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: &Command) -> Result<i32> {
    match cmd {
        Command::GenTracks(a) => gen_tracks_cmd(a),
        Command::Run(a) => run_cmd(a),
        Command::Bench(a) => bench_cmd(a),
        Command::EvalDepth(a) => eval_depth_cmd(a),
        Command::DenoiseDemo(a) => denoise_demo_cmd(a),
        Command::Gradcheck(a) => gradcheck_cmd(a),
        Command::Coverage(a) => coverage_cmd(a),
    }
}

fn gen_tracks_cmd(a: &GenTracksArgs) -> Result<i32> {
    let field = match &a.motion {
        Some(path) => read_motion(path)?,
        None => MotionField::identity(a.frames, a.height, a.width),
    };
    let spec = QuerySpec {
        strategy: a.strategy,
        count: a.count,
        seed: a.seed,
    };
    let tracks = generate_tracks(&field, &spec)?;
    write_tracks(&a.out, &tracks)?;
    println!(
        "wrote {} tracks over {} frames to {}",
        tracks.track_count(),
        tracks.frames(),
        a.out.display()
    );
    Ok(0)
}

fn run_cmd(a: &RunArgs) -> Result<i32> {
    let any = ten1::read_file(&a.features)?;
    match any.dtype() {
        DType::F32 => run_typed::<f32>(a, any.into_tensor()),
        DType::F64 => run_typed::<f64>(a, any.into_tensor()),
    }
}

fn run_typed<S: Scalar>(a: &RunArgs, data: Tensor<S>) -> Result<i32> {
    let features = FeatureMap::new(data)?;
    let mut cfg = match &a.config {
        Some(path) => LayerConfig::read(path)?,
        None => {
            let mut c = LayerConfig::default();
            c.d_f = features.channels();
            c.d_k = features.channels();
            c
        }
    };
    let out = match a.baseline {
        None => {
            let tracks = read_tracks::<S>(a.tracks.as_ref().expect("enforced by clap"))?;
            let layer = init_layer::<S>(&cfg)?;
            tracktention_forward(&features, &tracks, &layer)?
        }
        Some(kind) => {
            if a.config.is_none() {
                cfg.d_k = 64; // baselines carry no per-head width constraints
            }
            let params =
                BaselineAttnParams::<S>::init(cfg.seed, features.channels(), cfg.d_k, cfg.heads)?;
            match kind {
                BaselineKind::Temporal => temporal_attention(&features, &params)?,
                BaselineKind::Spatial => spatial_attention(&features, &params)?,
                BaselineKind::Joint => joint_st_attention(&features, &params)?,
                BaselineKind::Conv3d => {
                    let kernel = ten1::read_file(a.kernel.as_ref().expect("enforced by clap"))?;
                    conv3d(&features, &kernel.into_tensor::<S>())?
                }
            }
        }
    };
    ten1::write_file(&a.out, out.tensor())?;
    println!("wrote {:?} features to {}", out.tensor().shape(), a.out.display());
    Ok(0)
}

fn bench_cmd(a: &BenchArgs) -> Result<i32> {
    if a.threads != 1 {
        return Err(Error::Config(format!(
            "this build times single-threaded only; got --threads {}",
            a.threads
        )));
    }
    let target = match a.baseline {
        Some(kind) => BenchTarget::from_baseline(kind),
        None => a.op,
    };
    let cfg = BenchConfig {
        frames: a.frames,
        tracks: a.tracks,
        d_f: a.d_f,
        heads: a.heads,
        seed: a.seed,
        runs: a.runs,
        no_timing: a.no_timing,
        joint_token_guard: a.joint_guard,
    };
    let result = bench_scaling(a.sweep, target, &a.sizes, &cfg)?;
    let csv = result_to_csv(&result);
    match &a.out {
        Some(path) => {
            std::fs::write(path, &csv).map_err(|e| Error::io(path, e))?;
            match result.slope {
                Some(s) => println!("wrote {} ({} rows, slope {s:.4})", path.display(), result.rows.len()),
                None => println!("wrote {} ({} rows)", path.display(), result.rows.len()),
            }
        }
        None => print!("{csv}"),
    }
    Ok(0)
}

fn read_depth(path: &Path) -> Result<Tensor<f64>> {
    Ok(ten1::read_file(path)?.into_tensor::<f64>())
}

fn eval_depth_cmd(a: &EvalDepthArgs) -> Result<i32> {
    let pred = read_depth(&a.pred)?;
    let gt = read_depth(&a.gt)?;
    let mask = match &a.mask {
        Some(path) => Some(
            read_depth(path)?
                .data()
                .iter()
                .map(|&v| v != 0.0)
                .collect::<Vec<bool>>(),
        ),
        None => None,
    };
    let result = eval_depth(&pred, &gt, mask.as_deref(), a.mode, a.tau)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&result).expect("report serializes")
    );
    Ok(0)
}

fn denoise_demo_cmd(a: &DenoiseDemoArgs) -> Result<i32> {
    let report = denoise_demo(a.seed, a.frames, a.height, a.width, a.tracks, a.noise_std)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("report serializes")
    );
    Ok(0)
}

fn gradcheck_cmd(a: &GradcheckArgs) -> Result<i32> {
    let (d_f, d_k, heads) = (16, 16, 2);
    let rng = Rng::new(a.seed);
    let features = FeatureMap::new(rng.substream(1).uniform(
        &[a.frames, a.height, a.width, d_f],
        -1.0,
        1.0,
    ))?;
    let queries = sample_queries(
        a.frames,
        a.height,
        a.width,
        &QuerySpec {
            strategy: QueryStrategy::RandomT0,
            count: a.tracks,
            seed: rng.substream(2).next_u64(),
        },
    )?;
    let tracks = constant_tracks(a.frames, &queries)?;
    let params = TracktentionParams {
        d_f,
        d_k,
        heads,
        w_q: Tensor::zeros(&[d_f, d_k]),
        w_k: rng.substream(3).normal(&[d_f, d_k], 0.2),
        w_out: Tensor::zeros(&[d_f, d_f]),
        embed_proj: rng.substream(4).normal(&[d_f, d_f], 0.2),
        q_norm_gain: Tensor::filled(&[d_k], 1.0),
        k_norm_gain: Tensor::filled(&[d_k], 1.0),
        sigma: 0.5,
        rope_base: 100.0,
        rope_on_values: true,
    };
    let mut dir_rng = rng.substream(5);
    let direction = (dir_rng.next_normal(), dir_rng.next_normal());
    let track = (rng.substream(6).next_u64() % tracks.track_count() as u64) as usize;
    let frame = (rng.substream(7).next_u64() % a.frames as u64) as usize;
    let check = bias_grad_check(&features, &tracks, &params, track, frame, direction)?;
    println!("analytic    = {:+.9e}", check.analytic);
    println!("finite_diff = {:+.9e}", check.finite_diff);
    println!("rel_err     = {:.3e}", check.rel_err);
    if check.rel_err < 1e-3 {
        println!("PASS");
        Ok(0)
    } else {
        println!("FAIL");
        Ok(2)
    }
}

fn coverage_cmd(a: &CoverageArgs) -> Result<i32> {
    let tracks = read_tracks::<f64>(&a.tracks)?;
    let value = coverage(&tracks, a.frame, a.radius, a.height, a.width)?;
    println!("{value:.6}");
    Ok(0)
}
