//! From raw timing histograms to per-pixel depth and probability: matched
//! filtering, peak detection with a minimum-height gate, the probability
//! attribute (peak mass over total mass), the peak-height thresholding
//! baseline, spatial Gaussian denoising, and truncated-Fourier compression.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::binio;
use crate::error::{Error, Result};
use crate::spad::{HistogramFrame, PulseModel, SPEED_OF_LIGHT};

// ── matched filter ────────────────────────────────────────────────────

/// Matched-filter response for one pixel (photon units: an isolated photon
/// produces a peak of 1 under the pulse's `filter_kernel`).
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredHistogram {
    pub values: Vec<f64>,
}

/// How the correlation treats the ends of the histogram.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryMode {
    /// Wrap around the laser period (the default; the period is circular).
    Circular,
    /// Zero-pad past the ends instead of wrapping.
    ZeroPadded,
}

/// Correlate counts with the time-reversed pulse kernel (equivalently,
/// convolve with the symmetric kernel), wrapping around the period.
///
/// `kernel` must have odd length (taps centered on zero lag) and must not
/// be longer than the histogram.
pub fn matched_filter(counts: &[u32], kernel: &[f64]) -> Result<FilteredHistogram> {
    let values: Vec<f64> = counts.iter().map(|c| *c as f64).collect();
    matched_filter_values(&values, kernel, BoundaryMode::Circular)
}

/// [`matched_filter`] over real-valued histograms with a selectable
/// boundary rule.
pub fn matched_filter_values(
    values: &[f64],
    kernel: &[f64],
    mode: BoundaryMode,
) -> Result<FilteredHistogram> {
    let n = values.len();
    if kernel.is_empty() || kernel.len().is_multiple_of(2) {
        return Err(Error::invalid("kernel must have odd length"));
    }
    if kernel.len() > n {
        return Err(Error::invalid(format!(
            "kernel of {} taps is longer than the {n}-bin histogram",
            kernel.len()
        )));
    }
    let radius = kernel.len() / 2;
    let n_i = n as i64;
    let mut out = vec![0.0; n];

    // out[idx] = sum_t kernel[t] * values[idx + radius - t]; only bins
    // within `radius` of either end ever need the boundary rule.
    for idx in radius..n - radius {
        let window = &values[idx - radius..=idx + radius];
        let mut acc = 0.0;
        for (w, v) in kernel.iter().zip(window.iter().rev()) {
            acc += w * v;
        }
        out[idx] = acc;
    }
    let boundary: Vec<usize> = (0..radius).chain(n - radius..n).collect();
    for idx in boundary {
        let mut acc = 0.0;
        for (t, w) in kernel.iter().enumerate() {
            let src = idx as i64 + radius as i64 - t as i64;
            match mode {
                BoundaryMode::Circular => {
                    acc += w * values[src.rem_euclid(n_i) as usize];
                }
                BoundaryMode::ZeroPadded => {
                    if src >= 0 && src < n_i {
                        acc += w * values[src as usize];
                    }
                }
            }
        }
        out[idx] = acc;
    }
    Ok(FilteredHistogram { values: out })
}

// ── peak detection & probability ──────────────────────────────────────

/// Outcome of peak detection on one histogram.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakDetection {
    /// Lowest bin index achieving the maximum.
    pub bin: usize,
    pub height: f64,
    /// Whether `height` clears the minimum-height gate.
    pub valid: bool,
}

/// Find the peak (lowest index on ties) and apply the minimum-height gate.
/// `min_height` must be non-negative; an all-zero histogram is never valid.
pub fn detect_peak(values: &[f64], min_height: f64) -> PeakDetection {
    debug_assert!(min_height >= 0.0);
    let mut bin = 0;
    let mut height = f64::NEG_INFINITY;
    for (i, v) in values.iter().enumerate() {
        if *v > height {
            height = *v;
            bin = i;
        }
    }
    if values.is_empty() {
        return PeakDetection { bin: 0, height: 0.0, valid: false };
    }
    PeakDetection { bin, height, valid: height > min_height }
}

/// The minimum-height gate that rejects isolated single-photon responses:
/// one kernel peak plus a hair.
pub fn default_min_height(kernel: &[f64]) -> f64 {
    kernel.iter().cloned().fold(0.0, f64::max) + 1e-9
}

/// Peak-bin depth: `(dt * C / 2) * bin`.
pub fn depth_from_bin(bin: usize, bin_width: f64) -> f64 {
    bin_width * SPEED_OF_LIGHT / 2.0 * bin as f64
}

/// Probability attribute: response mass at the peak over total response
/// mass. Undefined (domain error) when the histogram is empty of mass.
pub fn point_probability(values: &[f64], peak_bin: usize) -> Result<f64> {
    let total: f64 = values.iter().sum();
    if !(total > 0.0) {
        return Err(Error::domain(
            "probability is undefined for a histogram with no mass",
        ));
    }
    Ok(values[peak_bin] / total)
}

// ── per-pixel estimation ──────────────────────────────────────────────

/// Which domain peak detection and the probability run on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimateMode {
    /// Raw counts.
    Raw,
    /// Matched-filtered counts (the pipeline default).
    Matched,
}

/// Depth estimate and probability attribute for one pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelEstimate {
    pub depth: f64,
    pub peak_bin: usize,
    pub peak_height: f64,
    pub probability: f64,
    pub valid: bool,
}

/// Estimate a pixel from real-valued histogram values. The probability is
/// computed on the same values used for peak detection.
pub fn estimate_values(values: &[f64], bin_width: f64, min_height: f64) -> PixelEstimate {
    let peak = detect_peak(values, min_height);
    let probability = if peak.valid {
        point_probability(values, peak.bin).unwrap_or(0.0)
    } else {
        0.0
    };
    PixelEstimate {
        depth: depth_from_bin(peak.bin, bin_width),
        peak_bin: peak.bin,
        peak_height: peak.height,
        probability,
        valid: peak.valid,
    }
}

/// Estimate a pixel from raw counts in the requested mode.
pub fn estimate_pixel(
    counts: &[u32],
    pulse: &PulseModel,
    mode: EstimateMode,
    min_height: f64,
) -> Result<PixelEstimate> {
    let estimate = match mode {
        EstimateMode::Raw => {
            let values: Vec<f64> = counts.iter().map(|c| *c as f64).collect();
            estimate_values(&values, pulse.bin_width(), min_height)
        }
        EstimateMode::Matched => {
            let filtered = matched_filter(counts, pulse.filter_kernel())?;
            estimate_values(&filtered.values, pulse.bin_width(), min_height)
        }
    };
    Ok(estimate)
}

/// Estimate every pixel of a frame (row-major order).
pub fn estimate_frame(
    frame: &HistogramFrame,
    mode: EstimateMode,
    min_height: f64,
) -> Result<Vec<PixelEstimate>> {
    if frame.pulse.filter_kernel().len() > frame.pulse.num_bins() {
        return Err(Error::invalid("kernel longer than the histogram"));
    }
    Ok((0..frame.num_pixels())
        .into_par_iter()
        .map(|i| {
            estimate_pixel(frame.histogram(i), &frame.pulse, mode, min_height)
                .expect("kernel length validated above")
        })
        .collect())
}

/// Estimate every pixel of a real-valued frame.
pub fn estimate_real_frame(
    frame: &RealFrame,
    mode: EstimateMode,
    min_height: f64,
) -> Result<Vec<PixelEstimate>> {
    let kernel = frame.pulse.filter_kernel();
    if kernel.len() > frame.pulse.num_bins() {
        return Err(Error::invalid("kernel longer than the histogram"));
    }
    Ok((0..frame.num_pixels())
        .into_par_iter()
        .map(|i| {
            let values = frame.values_at(i);
            match mode {
                EstimateMode::Raw => {
                    estimate_values(values, frame.pulse.bin_width(), min_height)
                }
                EstimateMode::Matched => {
                    let filtered =
                        matched_filter_values(values, kernel, BoundaryMode::Circular)
                            .expect("kernel length validated above");
                    estimate_values(&filtered.values, frame.pulse.bin_width(), min_height)
                }
            }
        })
        .collect())
}

/// The thresholding baseline: estimates whose peak height is at or below
/// `threshold` are dropped (marked invalid; grid alignment is preserved).
pub fn threshold_baseline(estimates: &[PixelEstimate], threshold: f64) -> Vec<PixelEstimate> {
    debug_assert!(threshold >= 0.0);
    estimates
        .iter()
        .map(|e| PixelEstimate {
            valid: e.valid && e.peak_height > threshold,
            ..*e
        })
        .collect()
}

/// Default peak-height threshold for the baseline.
pub const DEFAULT_BASELINE_THRESHOLD: f64 = 1.1;

// ── spatial Gaussian denoising ────────────────────────────────────────

/// A frame of real-valued histograms (denoised or decompressed counts).
#[derive(Debug, Clone, PartialEq)]
pub struct RealFrame {
    pub width: u32,
    pub height: u32,
    pub pulse: PulseModel,
    pub seed: u64,
    /// Pixel-major values, like [`HistogramFrame::counts`].
    pub values: Vec<f64>,
}

impl RealFrame {
    pub fn num_pixels(&self) -> usize {
        (self.width as usize) * (self.height as usize)
    }

    pub fn values_at(&self, pixel: usize) -> &[f64] {
        let n = self.pulse.num_bins();
        &self.values[pixel * n..(pixel + 1) * n]
    }
}

/// Denoise a frame with a `size x size` spatial Gaussian, bin by bin. The
/// temporal axis is untouched. Near the borders the kernel is renormalized
/// over in-bounds pixels so edges are not darkened.
pub fn spatial_gaussian_denoise(
    frame: &HistogramFrame,
    size: usize,
    sigma: f64,
) -> Result<RealFrame> {
    if size == 0 || size.is_multiple_of(2) {
        return Err(Error::invalid("spatial filter size must be odd"));
    }
    if size > frame.width.min(frame.height) as usize {
        return Err(Error::invalid(
            "spatial filter size exceeds the frame dimensions",
        ));
    }
    if !(sigma > 0.0) {
        return Err(Error::invalid("spatial sigma must be positive"));
    }

    let radius = (size / 2) as i64;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|k| (-0.5 * (k as f64 / sigma).powi(2)).exp())
        .collect();

    let (w, h) = (frame.width as i64, frame.height as i64);
    let n = frame.pulse.num_bins();
    let mut values = vec![0.0; frame.num_pixels() * n];
    values
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(pixel, out)| {
            let (u, v) = (pixel as i64 % w, pixel as i64 / w);
            let mut weight_sum = 0.0;
            for dv in -radius..=radius {
                let sv = v + dv;
                if sv < 0 || sv >= h {
                    continue;
                }
                for du in -radius..=radius {
                    let su = u + du;
                    if su < 0 || su >= w {
                        continue;
                    }
                    let weight =
                        taps[(du + radius) as usize] * taps[(dv + radius) as usize];
                    weight_sum += weight;
                    let src = frame.histogram((sv * w + su) as usize);
                    for (o, c) in out.iter_mut().zip(src) {
                        *o += weight * *c as f64;
                    }
                }
            }
            for o in out.iter_mut() {
                *o /= weight_sum;
            }
        });

    Ok(RealFrame {
        width: frame.width,
        height: frame.height,
        pulse: frame.pulse.clone(),
        seed: frame.seed,
        values,
    })
}

// ── truncated Fourier compression ─────────────────────────────────────

/// Keep the `k` lowest-frequency DFT coefficients of a histogram.
pub fn compress_histogram(counts: &[u32], k: usize) -> Result<Vec<Complex64>> {
    let n = counts.len();
    validate_k(k, n)?;
    let mut buf: Vec<Complex64> = counts
        .iter()
        .map(|c| Complex64::new(*c as f64, 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    buf.truncate(k);
    Ok(buf)
}

/// Inverse of [`compress_histogram`]: missing coefficients are zero, the
/// spectrum is completed by Hermitian symmetry, and negative reconstructed
/// values are clamped to 0.
pub fn decompress_histogram(coefficients: &[Complex64], n: usize) -> Result<FilteredHistogram> {
    let k = coefficients.len();
    validate_k(k, n)?;
    let mut spectrum = vec![Complex64::new(0.0, 0.0); n];
    spectrum[..k].copy_from_slice(coefficients);
    for j in 1..k {
        let mirror = n - j;
        if mirror == j {
            // Nyquist bin of an even-length real signal must be real.
            spectrum[j].im = 0.0;
        } else if mirror >= k {
            spectrum[mirror] = coefficients[j].conj();
        }
    }
    FftPlanner::new().plan_fft_inverse(n).process(&mut spectrum);
    let scale = 1.0 / n as f64;
    let values = spectrum.iter().map(|c| (c.re * scale).max(0.0)).collect();
    Ok(FilteredHistogram { values })
}

fn validate_k(k: usize, n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("histogram must be non-empty"));
    }
    if k < 1 || k > n / 2 + 1 {
        return Err(Error::invalid(format!(
            "k must be in [1, {}], got {k}",
            n / 2 + 1
        )));
    }
    Ok(())
}

/// Per-frame truncated-Fourier code.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierFrame {
    pub width: u32,
    pub height: u32,
    pub num_bins: usize,
    pub k: usize,
    /// Pixel-major: `k` coefficients per pixel.
    pub coefficients: Vec<Complex64>,
}

pub fn compress_frame(frame: &HistogramFrame, k: usize) -> Result<FourierFrame> {
    let n = frame.pulse.num_bins();
    validate_k(k, n)?;
    let coefficients: Vec<Complex64> = (0..frame.num_pixels())
        .into_par_iter()
        .flat_map_iter(|i| {
            compress_histogram(frame.histogram(i), k)
                .expect("k validated above")
                .into_iter()
        })
        .collect();
    Ok(FourierFrame {
        width: frame.width,
        height: frame.height,
        num_bins: n,
        k,
        coefficients,
    })
}

/// Reconstruct real-valued histograms from a Fourier frame. The pulse model
/// (which the code file does not carry) must be supplied by the caller and
/// must agree on the bin count.
pub fn decompress_frame(code: &FourierFrame, pulse: &PulseModel, seed: u64) -> Result<RealFrame> {
    if pulse.num_bins() != code.num_bins {
        return Err(Error::dimension(format!(
            "pulse has {} bins but the code was built over {}",
            pulse.num_bins(),
            code.num_bins
        )));
    }
    let n = code.num_bins;
    let k = code.k;
    let values: Vec<f64> = (0..(code.width as usize * code.height as usize))
        .into_par_iter()
        .flat_map_iter(|i| {
            decompress_histogram(&code.coefficients[i * k..(i + 1) * k], n)
                .expect("k validated at construction")
                .values
                .into_iter()
        })
        .collect();
    Ok(RealFrame {
        width: code.width,
        height: code.height,
        pulse: pulse.clone(),
        seed,
        values,
    })
}

// ── Fourier code file ─────────────────────────────────────────────────

const FOURIER_MAGIC: &[u8; 8] = b"SPADFOU1";

pub fn write_fourier_frame(code: &FourierFrame, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(FOURIER_MAGIC)?;
    binio::write_u32(&mut w, code.height)?;
    binio::write_u32(&mut w, code.width)?;
    binio::write_u32(&mut w, code.num_bins as u32)?;
    binio::write_u32(&mut w, code.k as u32)?;
    for c in &code.coefficients {
        binio::write_f32(&mut w, c.re as f32)?;
        binio::write_f32(&mut w, c.im as f32)?;
    }
    Ok(())
}

pub fn read_fourier_frame(path: &Path) -> Result<FourierFrame> {
    let mut r = BufReader::new(File::open(path)?);
    binio::expect_magic(&mut r, FOURIER_MAGIC)?;
    let height = binio::read_u32(&mut r)?;
    let width = binio::read_u32(&mut r)?;
    let num_bins = binio::read_u32(&mut r)? as usize;
    let k = binio::read_u32(&mut r)? as usize;
    validate_k(k, num_bins)?;
    let total = (height as usize)
        .checked_mul(width as usize)
        .and_then(|p| p.checked_mul(k))
        .ok_or_else(|| Error::parse("code dimensions overflow"))?;
    let mut coefficients = Vec::with_capacity(total);
    for _ in 0..total {
        let re = binio::read_f32(&mut r)? as f64;
        let im = binio::read_f32(&mut r)? as f64;
        coefficients.push(Complex64::new(re, im));
    }
    Ok(FourierFrame { width, height, num_bins, k, coefficients })
}

// ══════════════════════════════════════════════════════════════════════
// Tests
// ══════════════════════════════════════════════════════════════════════
