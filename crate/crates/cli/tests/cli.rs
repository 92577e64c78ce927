//! End-to-end tests of the `ppc` binary: determinism, config precedence,
//! exit codes, and agreement with direct library calls.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ppc_core::cloud::{self, CloudMetadata, PlyFormat};
use ppc_core::histogram::{self, EstimateMode};
use ppc_core::scene::{self, CameraIntrinsics};
use ppc_core::spad::{self, PulseModel, SbrTarget, SensorConfig};
use ppc_core::spatial::{self, NpdParams};

fn ppc() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ppc"));
    cmd.env_remove("PPC_SEED");
    cmd
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawning ppc");
    assert!(
        out.status.success(),
        "command failed: {:?}\nstdout: {}\nstderr: {}",
        cmd,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn scene_file(dir: &Path) -> PathBuf {
    let path = dir.join("scene.scene");
    std::fs::write(
        &path,
        "\
[camera]
width = 32
height = 24

[sphere]
center = -0.4 0.2 1.8
radius = 0.3
albedo = 0.85

[box]
center = 0.5 0.3 2.4
size = 0.5 0.6 0.4
albedo = 0.55

[background]
far_plane = 5.0
albedo = 0.8
",
    )
    .unwrap();
    path
}

fn simulate(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let scene = scene_file(dir);
    let out = dir.join(name);
    let mut cmd = ppc();
    cmd.args([
        "simulate",
        "--scene",
        scene.to_str().unwrap(),
        "--sbr",
        "5:50",
        "--seed",
        "7",
        "--out",
        out.to_str().unwrap(),
    ]);
    cmd.args(extra);
    run_ok(&mut cmd);
    out
}

#[test]
fn simulate_is_deterministic_across_runs_and_workers() {
    let dir = tempfile::tempdir().unwrap();
    let a = simulate(dir.path(), "a.sph", &["--workers", "1"]);
    let b = simulate(dir.path(), "b.sph", &["--workers", "4"]);
    let c = simulate(dir.path(), "c.sph", &[]);
    let bytes_a = std::fs::read(a).unwrap();
    assert_eq!(bytes_a, std::fs::read(b).unwrap());
    assert_eq!(bytes_a, std::fs::read(c).unwrap());
}

#[test]
fn invalid_sbr_fails_validation_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let scene = scene_file(dir.path());
    let out = dir.path().join("x.sph");
    let result = ppc()
        .args([
            "simulate",
            "--scene",
            scene.to_str().unwrap(),
            "--sbr",
            "0:50",
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(result.status.code(), Some(2), "{result:?}");
    assert!(!out.exists());
}

#[test]
fn missing_input_file_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let result = ppc()
        .args([
            "extract",
            "--frame",
            dir.path().join("absent.sph").to_str().unwrap(),
            "--out",
            dir.path().join("x.ply").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(result.status.code(), Some(3), "{result:?}");
}

#[test]
fn cli_pipeline_matches_library_calls() {
    let dir = tempfile::tempdir().unwrap();
    let frame_path = simulate(dir.path(), "frame.sph", &[]);
    let cloud_path = dir.path().join("cloud.ply");
    let filtered_path = dir.path().join("filtered.ply");
    run_ok(ppc().args([
        "extract",
        "--frame",
        frame_path.to_str().unwrap(),
        "--out",
        cloud_path.to_str().unwrap(),
    ]));
    run_ok(ppc().args([
        "filter",
        "--input",
        cloud_path.to_str().unwrap(),
        "--out",
        filtered_path.to_str().unwrap(),
    ]));

    // The same pipeline as direct library calls.
    let (spec, camera) = scene::read_scene_file(&scene_file(dir.path())).unwrap();
    let intr = camera.unwrap();
    let (depth, albedo) = scene::render_scene(&spec, &intr).unwrap();
    let pulse = PulseModel::default_protocol();
    let sensor = SensorConfig::default();
    let sbr = SbrTarget::new(5.0, 50.0).unwrap();
    let frame = spad::simulate_frame(&depth, &albedo, &pulse, &sensor, &sbr, 7).unwrap();
    let mut frame_bytes = Vec::new();
    spad::write_frame_to(&frame, &mut frame_bytes).unwrap();
    assert_eq!(frame_bytes, std::fs::read(&frame_path).unwrap());

    let estimates = histogram::estimate_frame(
        &frame,
        EstimateMode::Matched,
        histogram::default_min_height(pulse.filter_kernel()),
    )
    .unwrap();
    let metadata = CloudMetadata {
        seed: Some(7),
        bin_width: Some(pulse.bin_width()),
        num_bins: Some(pulse.num_bins()),
        sbr: None,
        missing_probability: false,
    };
    // The CLI derives default intrinsics from the frame dimensions.
    let default_intr = CameraIntrinsics::with_defaults(frame.width, frame.height);
    let ppc_cloud = cloud::build_ppc(&estimates, &default_intr, metadata).unwrap();
    let mut cloud_bytes = Vec::new();
    cloud::write_ply_to(&ppc_cloud, &mut cloud_bytes, PlyFormat::BinaryLittleEndian).unwrap();
    assert_eq!(cloud_bytes, std::fs::read(&cloud_path).unwrap());

    let filtered = spatial::npd_filter(&ppc_cloud, &NpdParams::default()).unwrap();
    let mut filtered_bytes = Vec::new();
    cloud::write_ply_to(&filtered, &mut filtered_bytes, PlyFormat::BinaryLittleEndian).unwrap();
    assert_eq!(filtered_bytes, std::fs::read(&filtered_path).unwrap());
}

#[test]
fn fpps_with_zero_beta_equals_fps() {
    let dir = tempfile::tempdir().unwrap();
    let frame_path = simulate(dir.path(), "frame.sph", &[]);
    let cloud_path = dir.path().join("cloud.ply");
    run_ok(ppc().args([
        "extract",
        "--frame",
        frame_path.to_str().unwrap(),
        "--out",
        cloud_path.to_str().unwrap(),
    ]));

    let via_fps = dir.path().join("fps.ply");
    let via_fpps = dir.path().join("fpps.ply");
    run_ok(ppc().args([
        "sample",
        "--input",
        cloud_path.to_str().unwrap(),
        "--method",
        "fps",
        "--count",
        "64",
        "--out",
        via_fps.to_str().unwrap(),
    ]));
    run_ok(ppc().args([
        "sample",
        "--input",
        cloud_path.to_str().unwrap(),
        "--method",
        "fpps",
        "--beta",
        "0",
        "--count",
        "64",
        "--out",
        via_fpps.to_str().unwrap(),
    ]));
    assert_eq!(
        std::fs::read(via_fps).unwrap(),
        std::fs::read(via_fpps).unwrap()
    );
}

#[test]
fn seed_precedence_is_flag_env_file() {
    let dir = tempfile::tempdir().unwrap();
    let scene = scene_file(dir.path());
    let config = dir.path().join("run.cfg");
    std::fs::write(&config, "seed = 1\nsbr = 5:50\n").unwrap();

    let run_with = |name: &str, env_seed: Option<&str>, flag_seed: Option<&str>| -> Vec<u8> {
        let out = dir.path().join(name);
        let mut cmd = ppc();
        cmd.args([
            "simulate",
            "--scene",
            scene.to_str().unwrap(),
            "--config",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        if let Some(seed) = env_seed {
            cmd.env("PPC_SEED", seed);
        }
        if let Some(seed) = flag_seed {
            cmd.args(["--seed", seed]);
        }
        run_ok(&mut cmd);
        std::fs::read(out).unwrap()
    };

    let from_file = run_with("file.sph", None, None);
    let from_env = run_with("env.sph", Some("2"), None);
    let from_flag = run_with("flag.sph", Some("2"), Some("3"));
    let seed_of = |bytes: &[u8]| u64::from_le_bytes(bytes[44..52].try_into().unwrap());
    assert_eq!(seed_of(&from_file), 1);
    assert_eq!(seed_of(&from_env), 2);
    assert_eq!(seed_of(&from_flag), 3);
}

#[test]
fn resolved_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let first = simulate(dir.path(), "first.sph", &[]);
    let emitted = dir.path().join("first.sph.cfg");
    assert!(emitted.exists(), "resolved config not written");

    let again = dir.path().join("again.sph");
    run_ok(ppc().args([
        "simulate",
        "--config",
        emitted.to_str().unwrap(),
        "--out",
        again.to_str().unwrap(),
    ]));
    assert_eq!(std::fs::read(first).unwrap(), std::fs::read(again).unwrap());
}

#[test]
fn compress_decompress_extract_matches_clean_depths() {
    let dir = tempfile::tempdir().unwrap();
    let scene = scene_file(dir.path());
    let frame = dir.path().join("clean.sph");
    // Nearly background-free: the signal dominates every histogram.
    run_ok(ppc().args([
        "simulate",
        "--scene",
        scene.to_str().unwrap(),
        "--sbr",
        "50:0.5",
        "--seed",
        "3",
        "--out",
        frame.to_str().unwrap(),
    ]));

    let full_cloud = dir.path().join("full.ply");
    run_ok(ppc().args([
        "extract",
        "--frame",
        frame.to_str().unwrap(),
        "--out",
        full_cloud.to_str().unwrap(),
    ]));

    let code = dir.path().join("clean.sfc");
    let rebuilt_cloud = dir.path().join("rebuilt.ply");
    run_ok(ppc().args([
        "compress",
        "--frame",
        frame.to_str().unwrap(),
        "--k",
        "32",
        "--out",
        code.to_str().unwrap(),
    ]));
    // Extraction reads the Fourier code natively, peak-finding on the
    // real-valued reconstruction.
    run_ok(ppc().args([
        "extract",
        "--frame",
        code.to_str().unwrap(),
        "--out",
        rebuilt_cloud.to_str().unwrap(),
    ]));

    // The decompress subcommand rounds back to integer counts; check the
    // frame is well-formed tooling-wise.
    let rebuilt_frame = dir.path().join("rebuilt.sph");
    run_ok(ppc().args([
        "decompress",
        "--input",
        code.to_str().unwrap(),
        "--out",
        rebuilt_frame.to_str().unwrap(),
    ]));
    let reread = spad::read_frame(&rebuilt_frame).unwrap();
    assert_eq!((reread.width, reread.height), (32, 24));
    assert_eq!(reread.pulse.num_bins(), 1024);

    let full = cloud::read_ply(&full_cloud).unwrap();
    let rebuilt = cloud::read_ply(&rebuilt_cloud).unwrap();
    // Compare depths pixel by pixel; compression must not move clean
    // pixels by more than one bin for the overwhelming majority.
    let by_pixel = |c: &cloud::ProbabilisticPointCloud| -> std::collections::HashMap<(u16, u16), f64> {
        c.points
            .iter()
            .map(|p| (p.pixel.unwrap(), p.position[2]))
            .collect()
    };
    let full_map = by_pixel(&full);
    let rebuilt_map = by_pixel(&rebuilt);
    // PLY stores binary32 positions, so allow their quantization on top
    // of the one-bin depth budget.
    let bin_m = histogram::depth_from_bin(1, 97e-12) + 1e-5;
    let mut matched = 0usize;
    let mut shared = 0usize;
    for (pixel, z) in &full_map {
        if let Some(z2) = rebuilt_map.get(pixel) {
            shared += 1;
            if (z - z2).abs() <= bin_m + 1e-12 {
                matched += 1;
            }
        }
    }
    assert!(shared as f64 >= 0.95 * full_map.len() as f64);
    assert!(
        matched as f64 >= 0.95 * shared as f64,
        "only {matched}/{shared} depths preserved"
    );
}

#[test]
fn eval_writes_report_and_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let scene = scene_file(dir.path());
    let frame = dir.path().join("f.sph");
    let gt = dir.path().join("gt.dpth");
    run_ok(ppc().args([
        "simulate",
        "--scene",
        scene.to_str().unwrap(),
        "--sbr",
        "5:50",
        "--seed",
        "4",
        "--out",
        frame.to_str().unwrap(),
        "--depth-out",
        gt.to_str().unwrap(),
    ]));
    let cloud_path = dir.path().join("c.ply");
    run_ok(ppc().args([
        "extract",
        "--frame",
        frame.to_str().unwrap(),
        "--out",
        cloud_path.to_str().unwrap(),
    ]));
    let report = dir.path().join("report.json");
    run_ok(ppc().args([
        "eval",
        "--cloud",
        cloud_path.to_str().unwrap(),
        "--gt-depth",
        gt.to_str().unwrap(),
        "--count",
        "64",
        "--out",
        report.to_str().unwrap(),
    ]));

    let text = std::fs::read_to_string(&report).unwrap();
    let parsed: ppc_core::eval::EvalReport = serde_json::from_str(&text).unwrap();
    assert!(parsed.cloud_points > 0);
    assert!(report.with_extension("npd_hist.csv").exists());
    assert!(report.with_extension("prob_hist.csv").exists());
}

#[test]
fn sweep_writes_one_report_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let scene = scene_file(dir.path());
    let frame = dir.path().join("f.sph");
    let gt = dir.path().join("gt.dpth");
    run_ok(ppc().args([
        "simulate",
        "--scene",
        scene.to_str().unwrap(),
        "--sbr",
        "5:50",
        "--seed",
        "4",
        "--out",
        frame.to_str().unwrap(),
        "--depth-out",
        gt.to_str().unwrap(),
    ]));
    let out_dir = dir.path().join("cells");
    run_ok(ppc().args([
        "sweep",
        "--frame",
        frame.to_str().unwrap(),
        "--gt-depth",
        gt.to_str().unwrap(),
        "--alphas",
        "0.001,0.003",
        "--betas",
        "0.01",
        "--thresholds",
        "1.1,2.0",
        "--count",
        "64",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]));
    let cells: Vec<_> = std::fs::read_dir(&out_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".json"))
        .collect();
    // 2 alphas x 1 beta + 2 thresholds.
    assert_eq!(cells.len(), 4, "cells: {cells:?}");
}
