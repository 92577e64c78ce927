//! `ppc`: simulate single-photon LiDAR frames, extract probabilistic
//! point clouds, filter and sample them, and grade the results.
//!
//! Exit codes: 0 success, 2 invalid input/configuration, 3 I/O failure.

mod config;

use std::fmt::Display;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use ppc_core::cloud::{self, CloudMetadata, PlyFormat, ProbabilisticPointCloud};
use ppc_core::eval::{self, EvalConfig, PointLabel};
use ppc_core::histogram::{self, EstimateMode, RealFrame};
use ppc_core::scene::{self, CameraIntrinsics};
use ppc_core::spad::{self, PulseModel, SbrTarget, SensorConfig};
use ppc_core::spatial::{self, FppsParams, NpdParams};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "ppc", version, about = "Single-photon LiDAR simulation and probabilistic point cloud pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a scene and simulate a photon-timing histogram frame.
    Simulate(SimulateArgs),
    /// Extract a probabilistic point cloud from a histogram frame.
    Extract(ExtractArgs),
    /// Remove low neighbor-probability-density points from a cloud.
    Filter(FilterArgs),
    /// Sample keypoints with FPS or FPPS.
    Sample(SampleArgs),
    /// Grade a cloud against ground truth.
    Eval(EvalArgs),
    /// Measure stage runtimes and the probabilistic-pipeline overhead.
    Bench(BenchArgs),
    /// Compress a frame to truncated Fourier coefficients.
    Compress(CompressArgs),
    /// Reconstruct a histogram frame from Fourier coefficients.
    Decompress(DecompressArgs),
    /// Run an evaluation grid over filter/sampler hyperparameters.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// key = value configuration file (flags take precedence).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Cap worker threads (results do not depend on this).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Where to write the resolved configuration.
    #[arg(long, global = true)]
    emit_config: Option<PathBuf>,
    /// Skip writing the resolved configuration.
    #[arg(long, global = true)]
    no_emit_config: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Matched,
    Raw,
}

impl From<ModeArg> for EstimateMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Matched => EstimateMode::Matched,
            ModeArg::Raw => EstimateMode::Raw,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PlyFormatArg {
    Binary,
    Ascii,
}

impl From<PlyFormatArg> for PlyFormat {
    fn from(f: PlyFormatArg) -> Self {
        match f {
            PlyFormatArg::Binary => PlyFormat::BinaryLittleEndian,
            PlyFormatArg::Ascii => PlyFormat::Ascii,
        }
    }
}

// ── simulate ──────────────────────────────────────────────────────────

#[derive(Args)]
struct SimulateArgs {
    /// Scene description file.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Output histogram frame (SPADHST1).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Mean signal:background photons per pixel, e.g. 5:50.
    #[arg(long)]
    sbr: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Image width when the scene file has no [camera] section.
    #[arg(long)]
    width: Option<u32>,
    #[arg(long)]
    height: Option<u32>,
    /// Histogram bins per pixel.
    #[arg(long)]
    bins: Option<usize>,
    /// Bin width in seconds.
    #[arg(long)]
    bin_width: Option<f64>,
    /// Laser repetition period in seconds.
    #[arg(long)]
    rep_period: Option<f64>,
    /// Pulse FWHM in seconds.
    #[arg(long)]
    fwhm: Option<f64>,
    #[arg(long)]
    quantum_efficiency: Option<f64>,
    /// Expected dark counts per bin.
    #[arg(long)]
    dark_count: Option<f64>,
    /// Also write the rendered ground-truth depth map.
    #[arg(long)]
    depth_out: Option<PathBuf>,
    /// Also write the rendered ground-truth albedo map.
    #[arg(long)]
    albedo_out: Option<PathBuf>,
    #[command(flatten)]
    common: CommonArgs,
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let mut cfg = RunConfig::load(args.common.config.as_deref())?;
    let scene_path = cfg.pick_path(args.scene, "scene")?;
    let out = cfg.pick_path(args.out, "out")?;
    let sbr_text = cfg.pick(args.sbr, "sbr", "5:50".to_string())?;
    let sbr = parse_sbr(&sbr_text)?;
    let seed = cfg.pick_seed(args.seed, 0)?;
    let bins = cfg.pick(args.bins, "bins", 1024usize)?;
    let bin_width = cfg.pick(args.bin_width, "bin_width", 97e-12)?;
    let rep_period = cfg.pick(args.rep_period, "rep_period", 100e-9)?;
    let fwhm = cfg.pick(args.fwhm, "fwhm", 350e-12)?;
    let eta = cfg.pick(args.quantum_efficiency, "quantum_efficiency", 0.9)?;
    let dark = cfg.pick(args.dark_count, "dark_count", 0.0)?;
    let depth_out = cfg.pick_path_opt(args.depth_out, "depth_out");
    let albedo_out = cfg.pick_path_opt(args.albedo_out, "albedo_out");

    let (spec, camera) = scene::read_scene_file(&scene_path)?;
    let width = cfg.pick(args.width, "width", camera.as_ref().map_or(128, |c| c.width))?;
    let height = cfg.pick(args.height, "height", camera.as_ref().map_or(96, |c| c.height))?;
    let intrinsics = match camera {
        Some(c) if c.width == width && c.height == height => c,
        _ => CameraIntrinsics::with_defaults(width, height),
    };

    let pulse = PulseModel::new(bins, bin_width, rep_period, fwhm)?;
    let sensor = SensorConfig {
        quantum_efficiency: eta,
        dark_count: dark,
        ambient_flux: 0.0,
    };

    let (depth, albedo) = scene::render_scene(&spec, &intrinsics)?;
    let frame = spad::simulate_frame(&depth, &albedo, &pulse, &sensor, &sbr, seed)?;
    spad::write_frame(&frame, &out)?;
    if let Some(path) = depth_out {
        scene::write_depth_map(&depth, &path)?;
    }
    if let Some(path) = albedo_out {
        scene::write_albedo_map(&albedo, &path)?;
    }

    maybe_emit(&cfg, "simulate", &out, &args.common)?;
    println!(
        "simulated {}x{}x{} frame at SBR {}:{} (seed {seed}) -> {}",
        width,
        height,
        bins,
        sbr.signal,
        sbr.background,
        out.display()
    );
    Ok(())
}

// ── extract ───────────────────────────────────────────────────────────

#[derive(Args)]
struct ExtractArgs {
    /// Input frame: SPADHST1 histograms or SPADFOU1 Fourier codes.
    #[arg(long)]
    frame: Option<PathBuf>,
    /// Output point cloud (PLY).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Peak detection domain.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Minimum peak height; `auto` rejects isolated single photons.
    #[arg(long)]
    min_height: Option<String>,
    #[arg(long, value_enum)]
    ply_format: Option<PlyFormatArg>,
    /// Focal length overrides (defaults: fx = fy = width, centered).
    #[arg(long)]
    fx: Option<f64>,
    #[arg(long)]
    fy: Option<f64>,
    #[arg(long)]
    cx: Option<f64>,
    #[arg(long)]
    cy: Option<f64>,
    /// Spatial Gaussian denoise window (odd; 0 disables).
    #[arg(long)]
    denoise_size: Option<usize>,
    #[arg(long)]
    denoise_sigma: Option<f64>,
    /// Pulse parameters for SPADFOU1 inputs (which carry none).
    #[arg(long)]
    bin_width: Option<f64>,
    #[arg(long)]
    rep_period: Option<f64>,
    #[arg(long)]
    fwhm: Option<f64>,
    #[command(flatten)]
    common: CommonArgs,
}

fn sniff_magic(path: &Path) -> Result<[u8; 8]> {
    use std::io::Read;
    let mut f = std::fs::File::open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic)
        .with_context(|| format!("reading magic of {}", path.display()))?;
    Ok(magic)
}

fn cmd_extract(args: ExtractArgs) -> Result<()> {
    let mut cfg = RunConfig::load(args.common.config.as_deref())?;
    let frame_path = cfg.pick_path(args.frame, "frame")?;
    let out = cfg.pick_path(args.out, "out")?;
    let mode: EstimateMode = cfg.pick(args.mode.map(|m| mode_name(m).to_string()), "mode", "matched".into())
        .and_then(|s| parse_mode(&s))?;
    let min_height_text = cfg.pick(args.min_height, "min_height", "auto".to_string())?;
    let format: PlyFormat = cfg
        .pick(
            args.ply_format.map(|f| format_name(f).to_string()),
            "ply_format",
            "binary".into(),
        )
        .and_then(|s| parse_format(&s))?;
    let denoise_size = cfg.pick(args.denoise_size, "denoise_size", 0usize)?;
    let denoise_sigma = cfg.pick(args.denoise_sigma, "denoise_sigma", 1.0)?;

    let magic = sniff_magic(&frame_path)?;
    let (estimates, width, height, pulse, seed) = match &magic {
        b"SPADHST1" => {
            let frame = spad::read_frame(&frame_path)?;
            let min_height = resolve_min_height(&min_height_text, frame.pulse.filter_kernel())?;
            let estimates = if denoise_size > 0 {
                let real = histogram::spatial_gaussian_denoise(&frame, denoise_size, denoise_sigma)?;
                histogram::estimate_real_frame(&real, mode, min_height)?
            } else {
                histogram::estimate_frame(&frame, mode, min_height)?
            };
            (estimates, frame.width, frame.height, frame.pulse.clone(), Some(frame.seed))
        }
        b"SPADFOU1" => {
            let code = histogram::read_fourier_frame(&frame_path)?;
            let bin_width = cfg.pick(args.bin_width, "bin_width", 97e-12)?;
            let rep_period = cfg.pick(args.rep_period, "rep_period", 100e-9)?;
            let fwhm = cfg.pick(args.fwhm, "fwhm", 350e-12)?;
            let pulse = PulseModel::new(code.num_bins, bin_width, rep_period, fwhm)?;
            if denoise_size > 0 {
                bail!("spatial denoising applies to SPADHST1 frames only");
            }
            let real = histogram::decompress_frame(&code, &pulse, 0)?;
            let min_height = resolve_min_height(&min_height_text, pulse.filter_kernel())?;
            let estimates = histogram::estimate_real_frame(&real, mode, min_height)?;
            (estimates, code.width, code.height, pulse, None)
        }
        other => bail!(
            "unrecognized frame magic {:?} in {}",
            String::from_utf8_lossy(other),
            frame_path.display()
        ),
    };

    let mut intrinsics = CameraIntrinsics::with_defaults(width, height);
    if let Some(v) = cfg.pick_opt(args.fx, "fx")? {
        intrinsics.fx = v;
    }
    if let Some(v) = cfg.pick_opt(args.fy, "fy")? {
        intrinsics.fy = v;
    }
    if let Some(v) = cfg.pick_opt(args.cx, "cx")? {
        intrinsics.cx = v;
    }
    if let Some(v) = cfg.pick_opt(args.cy, "cy")? {
        intrinsics.cy = v;
    }

    let metadata = CloudMetadata {
        seed,
        bin_width: Some(pulse.bin_width()),
        num_bins: Some(pulse.num_bins()),
        sbr: None,
        missing_probability: false,
    };
    let ppc = cloud::build_ppc(&estimates, &intrinsics, metadata)?;
    cloud::write_ply(&ppc, &out, format)?;

    maybe_emit(&cfg, "extract", &out, &args.common)?;
    println!(
        "extracted {} points from {} pixels -> {}",
        ppc.len(),
        (width as usize) * (height as usize),
        out.display()
    );
    Ok(())
}

// ── filter ────────────────────────────────────────────────────────────

#[derive(Args)]
struct FilterArgs {
    /// Input point cloud (PLY).
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// NPD score threshold.
    #[arg(long)]
    alpha: Option<f64>,
    /// Ball radius in meters.
    #[arg(long)]
    radius: Option<f64>,
    /// Neighbor cap L.
    #[arg(long)]
    max_neighbors: Option<usize>,
    /// Leave the query point out of its own neighborhood.
    #[arg(long)]
    exclude_self: bool,
    #[arg(long, value_enum)]
    ply_format: Option<PlyFormatArg>,
    #[command(flatten)]
    common: CommonArgs,
}

fn npd_params(
    cfg: &mut RunConfig,
    alpha: Option<f64>,
    radius: Option<f64>,
    max_neighbors: Option<usize>,
    exclude_self: bool,
) -> Result<NpdParams> {
    let defaults = NpdParams::default();
    let params = NpdParams {
        alpha: cfg.pick(alpha, "alpha", defaults.alpha)?,
        radius: cfg.pick(radius, "radius", defaults.radius)?,
        max_neighbors: cfg.pick(max_neighbors, "max_neighbors", defaults.max_neighbors)?,
        include_self: cfg.pick(
            if exclude_self { Some(false) } else { None },
            "include_self",
            defaults.include_self,
        )?,
    };
    params.validate()?;
    Ok(params)
}

fn cmd_filter(args: FilterArgs) -> Result<()> {
    let mut cfg = RunConfig::load(args.common.config.as_deref())?;
    let input = cfg.pick_path(args.input, "input")?;
    let out = cfg.pick_path(args.out, "out")?;
    let params = npd_params(&mut cfg, args.alpha, args.radius, args.max_neighbors, args.exclude_self)?;
    let format: PlyFormat = cfg
        .pick(
            args.ply_format.map(|f| format_name(f).to_string()),
            "ply_format",
            "binary".into(),
        )
        .and_then(|s| parse_format(&s))?;

    let ppc = cloud::read_ply(&input)?;
    let filtered = spatial::npd_filter(&ppc, &params)?;
    cloud::write_ply(&filtered, &out, format)?;

    maybe_emit(&cfg, "filter", &out, &args.common)?;
    println!(
        "kept {} of {} points at alpha {} -> {}",
        filtered.len(),
        ppc.len(),
        params.alpha,
        out.display()
    );
    Ok(())
}

// ── sample ────────────────────────────────────────────────────────────

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Fps,
    Fpps,
}

#[derive(Args)]
struct SampleArgs {
    /// Input point cloud (PLY).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output keypoint cloud (PLY).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional text file of selected indices (one per line).
    #[arg(long)]
    indices: Option<PathBuf>,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    /// Number of keypoints.
    #[arg(long)]
    count: Option<usize>,
    /// FPPS probability cutoff.
    #[arg(long)]
    beta: Option<f64>,
    /// Start from this cloud index instead of the lowest index.
    #[arg(long)]
    start_index: Option<u32>,
    /// Start from a seeded random point.
    #[arg(long)]
    random_start: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    ply_format: Option<PlyFormatArg>,
    #[command(flatten)]
    common: CommonArgs,
}

fn cmd_sample(args: SampleArgs) -> Result<()> {
    let mut cfg = RunConfig::load(args.common.config.as_deref())?;
    let input = cfg.pick_path(args.input, "input")?;
    let out = cfg.pick_path(args.out, "out")?;
    let indices_out = cfg.pick_path_opt(args.indices, "indices");
    let method = cfg.pick(
        args.method.map(|m| match m {
            MethodArg::Fps => "fps".to_string(),
            MethodArg::Fpps => "fpps".to_string(),
        }),
        "method",
        "fpps".into(),
    )?;
    let count = cfg.pick(args.count, "count", 1024usize)?;
    let beta = cfg.pick(args.beta, "beta", 0.01)?;
    let random_start = cfg.pick(
        if args.random_start { Some(true) } else { None },
        "random_start",
        false,
    )?;
    let start_index = cfg.pick_opt(args.start_index, "start_index")?;
    let format: PlyFormat = cfg
        .pick(
            args.ply_format.map(|f| format_name(f).to_string()),
            "ply_format",
            "binary".into(),
        )
        .and_then(|s| parse_format(&s))?;

    let ppc = cloud::read_ply(&input)?;
    if ppc.is_empty() {
        bail!("cannot sample from an empty cloud");
    }

    let start = if random_start {
        let seed = cfg.pick_seed(args.seed, 0)?;
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        match method.as_str() {
            "fps" => Some(rng.gen_range(0..ppc.len() as u32)),
            _ => {
                // FPPS starts must come from the candidate set.
                let candidates: Vec<u32> = (0..ppc.len() as u32)
                    .filter(|i| ppc.points[*i as usize].probability >= beta)
                    .collect();
                candidates
                    .get(rng.gen_range(0..candidates.len().max(1)))
                    .copied()
            }
        }
    } else {
        start_index
    };

    let picks = match method.as_str() {
        "fps" => spatial::fps(&ppc.positions(), count, start.map(|s| s as usize))?,
        "fpps" => spatial::fpps(&ppc, &FppsParams { beta, count }, start)?,
        other => bail!("unknown sampling method `{other}` (use fps or fpps)"),
    };

    let keypoints = ppc.select(&picks);
    cloud::write_ply(&keypoints, &out, format)?;
    if let Some(path) = indices_out {
        let text: String = picks.iter().map(|i| format!("{i}\n")).collect();
        std::fs::write(&path, text)?;
    }

    maybe_emit(&cfg, "sample", &out, &args.common)?;
    println!(
        "sampled {} keypoints ({method}) from {} points -> {}",
        picks.len(),
        ppc.len(),
        out.display()
    );
    Ok(())
}

// ── eval ──────────────────────────────────────────────────────────────

#[derive(Args)]
struct EvalArgs {
    /// Point cloud to grade (PLY with pixel provenance).
    #[arg(long)]
    cloud: Option<PathBuf>,
    /// Ground-truth depth map (DPTHMAP1).
    #[arg(long)]
    gt_depth: Option<PathBuf>,
    /// Output report (JSON). Score-histogram CSVs are written alongside.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Ground-truth tolerance in bins.
    #[arg(long)]
    eps_bins: Option<f64>,
    /// Bin width in seconds (defaults to the cloud's recorded value).
    #[arg(long)]
    bin_width: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    max_neighbors: Option<usize>,
    #[arg(long)]
    exclude_self: bool,
    #[arg(long)]
    beta: Option<f64>,
    /// Keypoints for the purity measurement.
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    hist_bins: Option<usize>,
    #[arg(long)]
    sweep_points: Option<usize>,
    #[command(flatten)]
    common: CommonArgs,
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let mut cfg = RunConfig::load(args.common.config.as_deref())?;
    let cloud_path = cfg.pick_path(args.cloud, "cloud")?;
    let gt_path = cfg.pick_path(args.gt_depth, "gt_depth")?;
    let out = cfg.pick_path(args.out, "out")?;

    let ppc = cloud::read_ply(&cloud_path)?;
    let gt = scene::read_depth_map(&gt_path)?;
    let bin_width = match cfg.pick_opt(args.bin_width, "bin_width")? {
        Some(v) => v,
        None => {
            let v = ppc.metadata.bin_width.unwrap_or(97e-12);
            cfg.note("bin_width", format!("{v:e}"));
            v
        }
    };

    let config = EvalConfig {
        eps_bins: cfg.pick(args.eps_bins, "eps_bins", 3.0)?,
        npd: npd_params(&mut cfg, args.alpha, args.radius, args.max_neighbors, args.exclude_self)?,
        fpps: FppsParams {
            beta: cfg.pick(args.beta, "beta", 0.01)?,
            count: cfg.pick(args.count, "count", 1024usize)?,
        },
        histogram_bins: cfg.pick(args.hist_bins, "hist_bins", 50usize)?,
        sweep_points: cfg.pick(args.sweep_points, "sweep_points", 50usize)?,
    };

    let report = eval::evaluate_cloud(&ppc, &gt, bin_width, &config)?;
    std::fs::write(&out, serde_json::to_string_pretty(&report)?)?;
    let npd_csv = out.with_extension("npd_hist.csv");
    let prob_csv = out.with_extension("prob_hist.csv");
    std::fs::write(&npd_csv, report.histogram_npd.to_csv())?;
    std::fs::write(&prob_csv, report.histogram_probability.to_csv())?;

    maybe_emit(&cfg, "eval", &out, &args.common)?;
    println!(
        "evaluated {} points: precision {:.4}, recall {:.4}, f1 {:.4} -> {}",
        report.cloud_points,
        report.precision,
        report.recall,
        report.f1,
        out.display()
    );
    Ok(())
}

// ── bench ─────────────────────────────────────────────────────────────

#[derive(Args)]
struct BenchArgs {
    /// Input histogram frame (SPADHST1).
    #[arg(long)]
    frame: Option<PathBuf>,
    /// Output report (JSON).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    min_height: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    max_neighbors: Option<usize>,
    #[arg(long)]
    exclude_self: bool,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    count: Option<usize>,
    #[command(flatten)]
    common: CommonArgs,
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let mut cfg = RunConfig::load(args.common.config.as_deref())?;
    let frame_path = cfg.pick_path(args.frame, "frame")?;
    let out = cfg.pick_path(args.out, "out")?;
    let repetitions = cfg.pick(args.repetitions, "repetitions", 5usize)?;
    let mode: EstimateMode = cfg
        .pick(args.mode.map(|m| mode_name(m).to_string()), "mode", "matched".into())
        .and_then(|s| parse_mode(&s))?;
    let min_height_text = cfg.pick(args.min_height, "min_height", "auto".to_string())?;
    let npd = npd_params(&mut cfg, args.alpha, args.radius, args.max_neighbors, args.exclude_self)?;
    let fpps = FppsParams {
        beta: cfg.pick(args.beta, "beta", 0.01)?,
        count: cfg.pick(args.count, "count", 1024usize)?,
    };

    let frame = spad::read_frame(&frame_path)?;
    let min_height = resolve_min_height(&min_height_text, frame.pulse.filter_kernel())?;
    let intrinsics = CameraIntrinsics::with_defaults(frame.width, frame.height);
    let report =
        eval::benchmark_pipeline(&frame, &intrinsics, mode, min_height, &npd, &fpps, repetitions)?;
    std::fs::write(&out, serde_json::to_string_pretty(&report)?)?;

    maybe_emit(&cfg, "bench", &out, &args.common)?;
    println!(
        "bench on {} points: extract {:.1} ms, fps {:.1} ms, npd {:.1} ms, fpps {:.1} ms, overhead {:.2}% -> {}",
        report.cloud_points,
        report.extract_ms,
        report.fps_ms,
        report.npd_ms,
        report.fpps_ms,
        report.overhead_pct,
        out.display()
    );
    Ok(())
}

// ── compress / decompress ─────────────────────────────────────────────

#[derive(Args)]
struct CompressArgs {
    /// Input histogram frame (SPADHST1).
    #[arg(long)]
    frame: Option<PathBuf>,
    /// Output Fourier code (SPADFOU1).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Retained low-frequency coefficients per pixel.
    #[arg(long)]
    k: Option<usize>,
    #[command(flatten)]
    common: CommonArgs,
}

fn cmd_compress(args: CompressArgs) -> Result<()> {
    let mut cfg = RunConfig::load(args.common.config.as_deref())?;
    let frame_path = cfg.pick_path(args.frame, "frame")?;
    let out = cfg.pick_path(args.out, "out")?;
    let k = cfg.pick(args.k, "k", 32usize)?;

    let frame = spad::read_frame(&frame_path)?;
    let code = histogram::compress_frame(&frame, k)?;
    histogram::write_fourier_frame(&code, &out)?;

    maybe_emit(&cfg, "compress", &out, &args.common)?;
    println!(
        "compressed {}x{}x{} to k={k} coefficients -> {}",
        frame.width,
        frame.height,
        frame.pulse.num_bins(),
        out.display()
    );
    Ok(())
}

#[derive(Args)]
struct DecompressArgs {
    /// Input Fourier code (SPADFOU1).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output histogram frame (SPADHST1). Counts are rounded to
    /// integers; for lossless peak extraction feed the SPADFOU1 file to
    /// `extract` directly.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Pulse parameters to stamp on the frame (the code carries none).
    #[arg(long)]
    bin_width: Option<f64>,
    #[arg(long)]
    rep_period: Option<f64>,
    #[arg(long)]
    fwhm: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    common: CommonArgs,
}

fn cmd_decompress(args: DecompressArgs) -> Result<()> {
    let mut cfg = RunConfig::load(args.common.config.as_deref())?;
    let input = cfg.pick_path(args.input, "input")?;
    let out = cfg.pick_path(args.out, "out")?;
    let bin_width = cfg.pick(args.bin_width, "bin_width", 97e-12)?;
    let rep_period = cfg.pick(args.rep_period, "rep_period", 100e-9)?;
    let fwhm = cfg.pick(args.fwhm, "fwhm", 350e-12)?;
    let seed = cfg.pick_seed(args.seed, 0)?;

    let code = histogram::read_fourier_frame(&input)?;
    let pulse = PulseModel::new(code.num_bins, bin_width, rep_period, fwhm)?;
    let real = histogram::decompress_frame(&code, &pulse, seed)?;
    let frame = round_real_frame(&real);
    spad::write_frame(&frame, &out)?;

    maybe_emit(&cfg, "decompress", &out, &args.common)?;
    println!(
        "decompressed {}x{}x{} (k={}) -> {}",
        code.width,
        code.height,
        code.num_bins,
        code.k,
        out.display()
    );
    Ok(())
}

fn round_real_frame(real: &RealFrame) -> spad::HistogramFrame {
    spad::HistogramFrame {
        width: real.width,
        height: real.height,
        pulse: real.pulse.clone(),
        seed: real.seed,
        counts: real.values.iter().map(|v| v.round().max(0.0) as u32).collect(),
    }
}

// ── sweep ─────────────────────────────────────────────────────────────

#[derive(Args)]
struct SweepArgs {
    /// Input histogram frame (SPADHST1).
    #[arg(long)]
    frame: Option<PathBuf>,
    /// Ground-truth depth map.
    #[arg(long)]
    gt_depth: Option<PathBuf>,
    /// Directory for the per-cell reports.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Comma-separated NPD thresholds.
    #[arg(long)]
    alphas: Option<String>,
    /// Comma-separated FPPS cutoffs.
    #[arg(long)]
    betas: Option<String>,
    /// Comma-separated ball radii.
    #[arg(long)]
    radii: Option<String>,
    /// Comma-separated neighbor caps.
    #[arg(long)]
    neighbor_counts: Option<String>,
    /// Comma-separated peak-height thresholds for the baseline.
    #[arg(long)]
    thresholds: Option<String>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    min_height: Option<String>,
    #[arg(long)]
    eps_bins: Option<f64>,
    #[arg(long)]
    count: Option<usize>,
    #[command(flatten)]
    common: CommonArgs,
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|e| anyhow!("bad {what} entry `{s}`: {e}"))
        })
        .collect()
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let mut cfg = RunConfig::load(args.common.config.as_deref())?;
    let frame_path = cfg.pick_path(args.frame, "frame")?;
    let gt_path = cfg.pick_path(args.gt_depth, "gt_depth")?;
    let out_dir = cfg.pick_path(args.out_dir, "out_dir")?;
    let mode: EstimateMode = cfg
        .pick(args.mode.map(|m| mode_name(m).to_string()), "mode", "matched".into())
        .and_then(|s| parse_mode(&s))?;
    let min_height_text = cfg.pick(args.min_height, "min_height", "auto".to_string())?;
    let eps_bins = cfg.pick(args.eps_bins, "eps_bins", 3.0)?;
    let count = cfg.pick(args.count, "count", 1024usize)?;
    let defaults = NpdParams::default();
    let alphas: Vec<f64> = parse_list(&cfg.pick(args.alphas, "alphas", defaults.alpha.to_string())?, "alpha")?;
    let betas: Vec<f64> = parse_list(&cfg.pick(args.betas, "betas", "0.01".to_string())?, "beta")?;
    let radii: Vec<f64> = parse_list(&cfg.pick(args.radii, "radii", defaults.radius.to_string())?, "radius")?;
    let neighbor_counts: Vec<usize> = parse_list(
        &cfg.pick(args.neighbor_counts, "neighbor_counts", defaults.max_neighbors.to_string())?,
        "neighbor count",
    )?;
    let thresholds: Vec<f64> = parse_list(
        &cfg.pick(args.thresholds, "thresholds", cfg_threshold_default())?,
        "threshold",
    )?;

    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;

    let frame = spad::read_frame(&frame_path)?;
    let gt = scene::read_depth_map(&gt_path)?;
    let min_height = resolve_min_height(&min_height_text, frame.pulse.filter_kernel())?;
    let intrinsics = CameraIntrinsics::with_defaults(frame.width, frame.height);
    let estimates = histogram::estimate_frame(&frame, mode, min_height)?;
    let metadata = CloudMetadata {
        seed: Some(frame.seed),
        bin_width: Some(frame.pulse.bin_width()),
        num_bins: Some(frame.pulse.num_bins()),
        sbr: None,
        missing_probability: false,
    };
    let ppc = cloud::build_ppc(&estimates, &intrinsics, metadata)?;
    let bin_width = frame.pulse.bin_width();

    let mut cells = 0usize;
    for &alpha in &alphas {
        for &radius in &radii {
            for &max_neighbors in &neighbor_counts {
                for &beta in &betas {
                    let config = EvalConfig {
                        eps_bins,
                        npd: NpdParams { alpha, radius, max_neighbors, include_self: true },
                        fpps: FppsParams { beta, count },
                        ..Default::default()
                    };
                    let report = eval::evaluate_cloud(&ppc, &gt, bin_width, &config)?;
                    let name = format!(
                        "eval_alpha{alpha}_r{radius}_L{max_neighbors}_beta{beta}.json"
                    );
                    std::fs::write(out_dir.join(name), serde_json::to_string_pretty(&report)?)?;
                    cells += 1;
                }
            }
        }
    }

    for &threshold in &thresholds {
        let kept = histogram::threshold_baseline(&estimates, threshold);
        let cell_cloud = cloud::build_ppc(&kept, &intrinsics, ppc.metadata.clone())?;
        let report = threshold_cell_report(&cell_cloud, &ppc, &gt, bin_width, eps_bins, threshold)?;
        std::fs::write(
            out_dir.join(format!("threshold{threshold}.json")),
            serde_json::to_string_pretty(&report)?,
        )?;
        cells += 1;
    }

    maybe_emit(&cfg, "sweep", &out_dir.join("sweep"), &args.common)?;
    println!("wrote {cells} sweep cells -> {}", out_dir.display());
    Ok(())
}

fn cfg_threshold_default() -> String {
    histogram::DEFAULT_BASELINE_THRESHOLD.to_string()
}

#[derive(serde::Serialize)]
struct ThresholdCell {
    threshold: f64,
    kept: usize,
    total: usize,
    precision: f64,
    recall: f64,
    f1: f64,
}

fn threshold_cell_report(
    kept_cloud: &ProbabilisticPointCloud,
    full_cloud: &ProbabilisticPointCloud,
    gt: &ppc_core::scene::DepthMap,
    bin_width: f64,
    eps_bins: f64,
    threshold: f64,
) -> Result<ThresholdCell> {
    let kept_labels = eval::label_points(kept_cloud, gt, bin_width, eps_bins)?;
    let full_labels = eval::label_points(full_cloud, gt, bin_width, eps_bins)?;
    let kept_gt = kept_labels.iter().filter(|l| **l == PointLabel::GroundTruth).count();
    let total_gt = full_labels.iter().filter(|l| **l == PointLabel::GroundTruth).count();
    let kept = kept_cloud.len();
    let precision = if kept == 0 { 1.0 } else { kept_gt as f64 / kept as f64 };
    let recall = if total_gt == 0 { 1.0 } else { kept_gt as f64 / total_gt as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(ThresholdCell {
        threshold,
        kept,
        total: full_cloud.len(),
        precision,
        recall,
        f1,
    })
}

// ── shared helpers ────────────────────────────────────────────────────

fn parse_sbr(text: &str) -> Result<SbrTarget> {
    let (s, b) = text
        .split_once(':')
        .ok_or_else(|| anyhow!("SBR must be written S:B, e.g. 5:50"))?;
    let signal: f64 = s.trim().parse().context("SBR signal part")?;
    let background: f64 = b.trim().parse().context("SBR background part")?;
    Ok(SbrTarget::new(signal, background)?)
}

fn resolve_min_height(text: &str, kernel: &[f64]) -> Result<f64> {
    if text.eq_ignore_ascii_case("auto") {
        return Ok(histogram::default_min_height(kernel));
    }
    let value: f64 = text
        .parse()
        .map_err(|_| anyhow!("min_height must be `auto` or a number, got `{text}`"))?;
    if value < 0.0 {
        bail!("min_height must be non-negative");
    }
    Ok(value)
}

fn parse_mode(text: &str) -> Result<EstimateMode> {
    match text {
        "matched" => Ok(EstimateMode::Matched),
        "raw" => Ok(EstimateMode::Raw),
        other => bail!("mode must be `matched` or `raw`, got `{other}`"),
    }
}

fn mode_name(mode: ModeArg) -> &'static str {
    match mode {
        ModeArg::Matched => "matched",
        ModeArg::Raw => "raw",
    }
}

fn parse_format(text: &str) -> Result<PlyFormat> {
    match text {
        "binary" => Ok(PlyFormat::BinaryLittleEndian),
        "ascii" => Ok(PlyFormat::Ascii),
        other => bail!("ply_format must be `binary` or `ascii`, got `{other}`"),
    }
}

fn format_name(format: PlyFormatArg) -> &'static str {
    match format {
        PlyFormatArg::Binary => "binary",
        PlyFormatArg::Ascii => "ascii",
    }
}

fn maybe_emit(cfg: &RunConfig, command: &str, out: &Path, common: &CommonArgs) -> Result<()> {
    if common.no_emit_config {
        return Ok(());
    }
    let path = common
        .emit_config
        .clone()
        .unwrap_or_else(|| config::default_emit_path(out));
    cfg.emit(command, &path)
}

fn run(cli: Cli) -> Result<()> {
    let workers = match &cli.command {
        Command::Simulate(a) => a.common.workers,
        Command::Extract(a) => a.common.workers,
        Command::Filter(a) => a.common.workers,
        Command::Sample(a) => a.common.workers,
        Command::Eval(a) => a.common.workers,
        Command::Bench(a) => a.common.workers,
        Command::Compress(a) => a.common.workers,
        Command::Decompress(a) => a.common.workers,
        Command::Sweep(a) => a.common.workers,
    };
    if let Some(workers) = workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
            .context("configuring worker pool")?;
    }

    match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Extract(args) => cmd_extract(args),
        Command::Filter(args) => cmd_filter(args),
        Command::Sample(args) => cmd_sample(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Compress(args) => cmd_compress(args),
        Command::Decompress(args) => cmd_decompress(args),
        Command::Sweep(args) => cmd_sweep(args),
    }
}

/// Exit code for a failed run: 3 for I/O, 2 for everything else.
fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 3;
        }
        if let Some(core) = cause.downcast_ref::<ppc_core::Error>() {
            return match core {
                ppc_core::Error::Io(_) => 3,
                _ => 2,
            };
        }
    }
    2
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(exit_code(&err));
    }
}
