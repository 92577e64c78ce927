//! Ground-truth-aware evaluation: true-scene/noise labeling, filter
//! precision-recall, score distributions, keypoint purity, and wall-clock
//! benchmarking of the processing stages.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cloud::ProbabilisticPointCloud;
use crate::error::{Error, Result};
use crate::histogram::{self, EstimateMode};
use crate::scene::{CameraIntrinsics, DepthMap};
use crate::spad::{HistogramFrame, SPEED_OF_LIGHT};
use crate::spatial::{self, FppsParams, NpdParams};

/// Whether a point sits on the true scene surface or is a noise return.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PointLabel {
    GroundTruth,
    Noise,
}

/// Label every point by comparing its depth against the ground-truth map
/// at its source pixel: within `eps_bins` bins is ground truth, otherwise
/// noise. Points from sentinel pixels are always noise. Points without
/// pixel provenance are an error.
pub fn label_points(
    cloud: &ProbabilisticPointCloud,
    gt_depth: &DepthMap,
    bin_width: f64,
    eps_bins: f64,
) -> Result<Vec<PointLabel>> {
    if !(eps_bins >= 0.0) {
        return Err(Error::invalid("eps_bins must be non-negative"));
    }
    let tolerance = eps_bins * bin_width * SPEED_OF_LIGHT / 2.0;
    cloud
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let (u, v) = p.pixel.ok_or_else(|| {
                Error::invalid(format!("point {i} has no pixel provenance"))
            })?;
            if u as u32 >= gt_depth.width || v as u32 >= gt_depth.height {
                return Err(Error::invalid(format!(
                    "point {i} references pixel ({u}, {v}) outside the map"
                )));
            }
            Ok(match gt_depth.depth_at(u as u32, v as u32) {
                None => PointLabel::Noise,
                Some(d) if (p.position[2] - d).abs() <= tolerance => PointLabel::GroundTruth,
                Some(_) => PointLabel::Noise,
            })
        })
        .collect()
}

// ── precision / recall ────────────────────────────────────────────────

/// One point of a threshold sweep. `empty_kept` flags the convention that
/// an empty kept set reports precision 1.0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub kept: usize,
    pub empty_kept: bool,
}

/// Precision/recall of keeping points with `score >= threshold`, for each
/// threshold in turn.
pub fn filter_pr_curve(
    labels: &[PointLabel],
    scores: &[f64],
    thresholds: &[f64],
) -> Result<Vec<PrPoint>> {
    if labels.len() != scores.len() {
        return Err(Error::dimension("labels and scores differ in length"));
    }
    let total_gt = labels.iter().filter(|l| **l == PointLabel::GroundTruth).count();
    let points = thresholds
        .iter()
        .map(|&threshold| {
            let mut kept = 0usize;
            let mut kept_gt = 0usize;
            for (label, score) in labels.iter().zip(scores) {
                if *score >= threshold {
                    kept += 1;
                    if *label == PointLabel::GroundTruth {
                        kept_gt += 1;
                    }
                }
            }
            let empty_kept = kept == 0;
            PrPoint {
                threshold,
                precision: if empty_kept { 1.0 } else { kept_gt as f64 / kept as f64 },
                recall: if total_gt == 0 { 1.0 } else { kept_gt as f64 / total_gt as f64 },
                kept,
                empty_kept,
            }
        })
        .collect();
    Ok(points)
}

/// Evenly spaced thresholds from 0 to the maximum score (inclusive).
pub fn uniform_thresholds(scores: &[f64], count: usize) -> Vec<f64> {
    let max = scores.iter().cloned().fold(0.0, f64::max);
    if count <= 1 {
        return vec![0.0];
    }
    (0..count)
        .map(|i| max * i as f64 / (count - 1) as f64)
        .collect()
}

/// Best precision among sweep points that reach the target recall.
pub fn precision_at_recall(curve: &[PrPoint], target_recall: f64) -> Option<f64> {
    curve
        .iter()
        .filter(|p| p.recall >= target_recall)
        .map(|p| p.precision)
        .fold(None, |acc: Option<f64>, p| Some(acc.map_or(p, |a| a.max(p))))
}

// ── score distributions ───────────────────────────────────────────────

/// Per-class normalized score histograms (the two rows sum to 1 each,
/// unless a class is empty).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreHistogram {
    /// `bins + 1` edges.
    pub bin_edges: Vec<f64>,
    pub gt_frac: Vec<f64>,
    pub noise_frac: Vec<f64>,
}

impl ScoreHistogram {
    /// CSV rows `bin_left,bin_right,gt_frac,noise_frac`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_left,bin_right,gt_frac,noise_frac\n");
        for i in 0..self.gt_frac.len() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                self.bin_edges[i],
                self.bin_edges[i + 1],
                self.gt_frac[i],
                self.noise_frac[i]
            ));
        }
        out
    }

    /// Index of the most populated bin for a class, if the class is nonempty.
    pub fn mode_bin(fracs: &[f64]) -> Option<usize> {
        let (idx, max) = fracs
            .iter()
            .enumerate()
            .fold((0, 0.0), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
        (max > 0.0).then_some(idx)
    }
}

/// Bin the scores of each class over `range` (defaults to the data range).
pub fn score_histogram(
    scores: &[f64],
    labels: &[PointLabel],
    bins: usize,
    range: Option<(f64, f64)>,
) -> Result<ScoreHistogram> {
    if bins < 2 {
        return Err(Error::invalid("need at least 2 bins"));
    }
    if scores.len() != labels.len() {
        return Err(Error::dimension("labels and scores differ in length"));
    }
    let (mut lo, mut hi) = range.unwrap_or_else(|| {
        scores.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| {
            (lo.min(s), hi.max(s))
        })
    });
    if !lo.is_finite() || !hi.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi <= lo {
        hi = lo + 1e-9;
    }

    let width = (hi - lo) / bins as f64;
    let bin_edges: Vec<f64> = (0..=bins).map(|i| lo + width * i as f64).collect();
    let mut gt = vec![0usize; bins];
    let mut noise = vec![0usize; bins];
    for (score, label) in scores.iter().zip(labels) {
        let idx = (((score - lo) / width) as usize).min(bins - 1);
        match label {
            PointLabel::GroundTruth => gt[idx] += 1,
            PointLabel::Noise => noise[idx] += 1,
        }
    }
    let normalize = |counts: Vec<usize>| -> Vec<f64> {
        let total: usize = counts.iter().sum();
        if total == 0 {
            vec![0.0; bins]
        } else {
            counts.iter().map(|c| *c as f64 / total as f64).collect()
        }
    };
    Ok(ScoreHistogram {
        bin_edges,
        gt_frac: normalize(gt),
        noise_frac: normalize(noise),
    })
}

/// Fraction of keypoints labeled ground truth (vacuously 1 for no keypoints).
pub fn sampling_purity(keypoints: &[u32], labels: &[PointLabel]) -> f64 {
    if keypoints.is_empty() {
        return 1.0;
    }
    let gt = keypoints
        .iter()
        .filter(|i| labels[**i as usize] == PointLabel::GroundTruth)
        .count();
    gt as f64 / keypoints.len() as f64
}

// ── evaluation report ─────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterCounts {
    pub gt_kept: usize,
    pub gt_removed: usize,
    pub noise_kept: usize,
    pub noise_removed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTimingsMs {
    pub label_ms: f64,
    pub npd_ms: f64,
    pub filter_ms: f64,
    pub fps_ms: f64,
    pub fpps_ms: f64,
}

/// Everything `cmd eval` reports, serialized as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub cloud_points: usize,
    pub gt_points: usize,
    pub noise_points: usize,
    pub eps_bins: f64,
    pub alpha: f64,
    pub radius: f64,
    pub max_neighbors: usize,
    pub beta: f64,
    pub sample_count: usize,
    pub filter: FilterCounts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub empty_kept: bool,
    /// RMSE over kept ground-truth points; absent when none were kept.
    pub depth_rmse_kept_gt_m: Option<f64>,
    pub sampling_purity_fps: Option<f64>,
    pub sampling_purity_fpps: Option<f64>,
    pub pr_curve_npd: Vec<PrPoint>,
    pub pr_curve_probability: Vec<PrPoint>,
    pub histogram_npd: ScoreHistogram,
    pub histogram_probability: ScoreHistogram,
    pub timings: StageTimingsMs,
}

/// Evaluation knobs beyond the NPD/FPPS hyperparameters themselves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub eps_bins: f64,
    pub npd: NpdParams,
    pub fpps: FppsParams,
    pub histogram_bins: usize,
    pub sweep_points: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            eps_bins: 3.0,
            npd: NpdParams::default(),
            fpps: FppsParams::new(1024),
            histogram_bins: 50,
            sweep_points: 50,
        }
    }
}

fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Label a cloud against ground truth, grade the NPD filter against the
/// probability-only alternative, and measure keypoint purity for FPS vs
/// FPPS. `bin_width` converts `eps_bins` to meters.
pub fn evaluate_cloud(
    cloud: &ProbabilisticPointCloud,
    gt_depth: &DepthMap,
    bin_width: f64,
    config: &EvalConfig,
) -> Result<EvalReport> {
    config.npd.validate()?;
    let t = Instant::now();
    let labels = label_points(cloud, gt_depth, bin_width, config.eps_bins)?;
    let label_ms = ms_since(t);

    let t = Instant::now();
    let npd = spatial::npd_scores_cloud(cloud, &config.npd)?;
    let npd_ms = ms_since(t);
    let probabilities = cloud.probabilities();

    let t = Instant::now();
    let mut counts = FilterCounts { gt_kept: 0, gt_removed: 0, noise_kept: 0, noise_removed: 0 };
    for (label, score) in labels.iter().zip(&npd) {
        let kept = *score >= config.npd.alpha;
        match (label, kept) {
            (PointLabel::GroundTruth, true) => counts.gt_kept += 1,
            (PointLabel::GroundTruth, false) => counts.gt_removed += 1,
            (PointLabel::Noise, true) => counts.noise_kept += 1,
            (PointLabel::Noise, false) => counts.noise_removed += 1,
        }
    }
    let filter_ms = ms_since(t);

    let kept = counts.gt_kept + counts.noise_kept;
    let total_gt = counts.gt_kept + counts.gt_removed;
    let empty_kept = kept == 0;
    let precision = if empty_kept { 1.0 } else { counts.gt_kept as f64 / kept as f64 };
    let recall = if total_gt == 0 { 1.0 } else { counts.gt_kept as f64 / total_gt as f64 };

    let mut rmse_acc = 0.0;
    let mut rmse_n = 0usize;
    for ((point, label), score) in cloud.points.iter().zip(&labels).zip(&npd) {
        if *label == PointLabel::GroundTruth && *score >= config.npd.alpha {
            let (u, v) = point.pixel.expect("labeled points have provenance");
            let gt = gt_depth.depth_at(u as u32, v as u32).expect("GT label implies a return");
            rmse_acc += (point.position[2] - gt).powi(2);
            rmse_n += 1;
        }
    }
    let depth_rmse_kept_gt_m = (rmse_n > 0).then(|| (rmse_acc / rmse_n as f64).sqrt());

    // Keypoint purity, FPS vs FPPS, on the unfiltered cloud.
    let sample_count = config.fpps.count.min(cloud.len());
    let (mut fps_ms, mut fpps_ms) = (0.0, 0.0);
    let (mut purity_fps, mut purity_fpps) = (None, None);
    if sample_count >= 1 {
        let positions = cloud.positions();
        let t = Instant::now();
        let picks = spatial::fps(&positions, sample_count, None)?;
        fps_ms = ms_since(t);
        purity_fps = Some(sampling_purity(&picks, &labels));

        let t = Instant::now();
        let picks = spatial::fpps(
            cloud,
            &FppsParams { beta: config.fpps.beta, count: sample_count },
            None,
        )?;
        fpps_ms = ms_since(t);
        purity_fpps = Some(sampling_purity(&picks, &labels));
    }

    let npd_thresholds = uniform_thresholds(&npd, config.sweep_points);
    let prob_thresholds = uniform_thresholds(&probabilities, config.sweep_points);
    Ok(EvalReport {
        cloud_points: cloud.len(),
        gt_points: total_gt,
        noise_points: cloud.len() - total_gt,
        eps_bins: config.eps_bins,
        alpha: config.npd.alpha,
        radius: config.npd.radius,
        max_neighbors: config.npd.max_neighbors,
        beta: config.fpps.beta,
        sample_count,
        filter: counts,
        precision,
        recall,
        f1: f1_score(precision, recall),
        empty_kept,
        depth_rmse_kept_gt_m,
        sampling_purity_fps: purity_fps,
        sampling_purity_fpps: purity_fpps,
        pr_curve_npd: filter_pr_curve(&labels, &npd, &npd_thresholds)?,
        pr_curve_probability: filter_pr_curve(&labels, &probabilities, &prob_thresholds)?,
        histogram_npd: score_histogram(&npd, &labels, config.histogram_bins, None)?,
        histogram_probability: score_histogram(&probabilities, &labels, config.histogram_bins, None)?,
        timings: StageTimingsMs { label_ms, npd_ms, filter_ms, fps_ms, fpps_ms },
    })
}

// ── benchmarking ──────────────────────────────────────────────────────

/// Median stage timings for the extraction pipeline with and without the
/// probabilistic additions.
///
/// The reference pipeline is extract + FPS (keypoint sampling is part of
/// every inference stack); the probabilistic pipeline swaps FPS for FPPS
/// and adds NPD filtering. `overhead_pct` compares those two;
/// `overhead_vs_extract_only_pct` relates the added stages to extraction
/// alone. File I/O is excluded throughout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub cloud_points: usize,
    pub filtered_points: usize,
    pub sample_count: usize,
    pub repetitions: usize,
    pub extract_ms: f64,
    pub fps_ms: f64,
    pub npd_ms: f64,
    pub fpps_ms: f64,
    pub baseline_ms: f64,
    pub ppc_ms: f64,
    pub overhead_pct: f64,
    pub overhead_vs_extract_only_pct: f64,
}

fn median(samples: &mut [f64]) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    samples[samples.len() / 2]
}

/// Benchmark extraction, FPS, NPD filtering, and FPPS on a frame.
pub fn benchmark_pipeline(
    frame: &HistogramFrame,
    intrinsics: &CameraIntrinsics,
    mode: EstimateMode,
    min_height: f64,
    npd: &NpdParams,
    fpps_params: &FppsParams,
    repetitions: usize,
) -> Result<BenchReport> {
    if repetitions < 3 {
        return Err(Error::invalid("need at least 3 repetitions"));
    }
    npd.validate()?;

    let mut extract = Vec::with_capacity(repetitions);
    let mut fps_t = Vec::with_capacity(repetitions);
    let mut npd_t = Vec::with_capacity(repetitions);
    let mut fpps_t = Vec::with_capacity(repetitions);
    let mut cloud_points = 0;
    let mut filtered_points = 0;
    let mut sample_count = 0;

    for _ in 0..repetitions {
        let t = Instant::now();
        let estimates = histogram::estimate_frame(frame, mode, min_height)?;
        let cloud = crate::cloud::build_ppc(&estimates, intrinsics, Default::default())?;
        extract.push(ms_since(t));
        cloud_points = cloud.len();
        sample_count = fpps_params.count.min(cloud.len());

        if cloud.is_empty() {
            fps_t.push(0.0);
            npd_t.push(0.0);
            fpps_t.push(0.0);
            continue;
        }

        let positions = cloud.positions();
        let t = Instant::now();
        let _ = spatial::fps(&positions, sample_count, None)?;
        fps_t.push(ms_since(t));

        let t = Instant::now();
        let filtered = spatial::npd_filter(&cloud, npd)?;
        npd_t.push(ms_since(t));
        filtered_points = filtered.len();

        let t = Instant::now();
        if !filtered.is_empty() {
            let params = FppsParams {
                beta: fpps_params.beta,
                count: fpps_params.count.min(filtered.len()),
            };
            let _ = spatial::fpps(&filtered, &params, None)?;
        }
        fpps_t.push(ms_since(t));
    }

    let extract_ms = median(&mut extract);
    let fps_ms = median(&mut fps_t);
    let npd_ms = median(&mut npd_t);
    let fpps_ms = median(&mut fpps_t);
    let baseline_ms = extract_ms + fps_ms;
    let ppc_ms = extract_ms + npd_ms + fpps_ms;
    Ok(BenchReport {
        cloud_points,
        filtered_points,
        sample_count,
        repetitions,
        extract_ms,
        fps_ms,
        npd_ms,
        fpps_ms,
        baseline_ms,
        ppc_ms,
        overhead_pct: (ppc_ms - baseline_ms) / baseline_ms * 100.0,
        overhead_vs_extract_only_pct: (npd_ms + fpps_ms) / extract_ms * 100.0,
    })
}

/// Median NPD/FPS/FPPS timings on an existing cloud (for size sweeps).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CloudStageTimings {
    pub npd_ms: f64,
    pub fps_ms: f64,
    pub fpps_ms: f64,
}

pub fn benchmark_cloud_stages(
    cloud: &ProbabilisticPointCloud,
    npd: &NpdParams,
    fpps_params: &FppsParams,
    repetitions: usize,
) -> Result<CloudStageTimings> {
    if repetitions < 3 {
        return Err(Error::invalid("need at least 3 repetitions"));
    }
    let mut npd_t = Vec::new();
    let mut fps_t = Vec::new();
    let mut fpps_t = Vec::new();
    let count = fpps_params.count.min(cloud.len());
    for _ in 0..repetitions {
        if cloud.is_empty() {
            npd_t.push(0.0);
            fps_t.push(0.0);
            fpps_t.push(0.0);
            continue;
        }
        let t = Instant::now();
        let _ = spatial::npd_scores_cloud(cloud, npd)?;
        npd_t.push(ms_since(t));

        let positions = cloud.positions();
        let t = Instant::now();
        let _ = spatial::fps(&positions, count, None)?;
        fps_t.push(ms_since(t));

        let t = Instant::now();
        let _ = spatial::fpps(cloud, &FppsParams { beta: fpps_params.beta, count }, None)?;
        fpps_t.push(ms_since(t));
    }
    Ok(CloudStageTimings {
        npd_ms: median(&mut npd_t),
        fps_ms: median(&mut fps_t),
        fpps_ms: median(&mut fpps_t),
    })
}

// ══════════════════════════════════════════════════════════════════════
// Tests
// ══════════════════════════════════════════════════════════════════════
