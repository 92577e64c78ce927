//! Forward sensing model for a pulsed single-photon LiDAR.
//!
//! A laser pulse (Gaussian, described by its FWHM) reflects off the scene
//! and lands in a timing histogram of `N` bins of width `dt`. The expected
//! photon rate per bin combines a depth-shifted copy of the pulse, ambient
//! background, and dark counts; observed counts are independent Poisson
//! draws around those rates.
//!
//! Timing convention: bin `n` is centered on `n * dt` (it spans
//! `(n - 0.5) * dt .. (n + 0.5) * dt`), so the peak-bin depth estimator
//! `(dt * C / 2) * argmax` is unbiased for a pulse centered at an exact bin.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use crate::binio;
use crate::error::{Error, Result};
use crate::rng::pixel_stream;
use crate::scene::{AlbedoMap, DepthMap};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// FWHM = 2 * sqrt(2 ln 2) * sigma for a Gaussian.
const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;

/// The pulse is truncated at +/- 4 sigma and renormalized to unit mass.
const TRUNCATION_SIGMAS: f64 = 4.0;

// ── pulse model ───────────────────────────────────────────────────────

/// Temporal axis of the sensor: bin count, bin width, repetition period,
/// and the Gaussian pulse shape.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseModel {
    num_bins: usize,
    bin_width: f64,
    repetition_period: f64,
    fwhm: f64,
    sigma: f64,
    /// Unit-area binned pulse, taps at offsets `-K ..= K` from the center bin.
    mass_kernel: Vec<f64>,
    /// `mass_kernel` rescaled to peak 1, so an isolated photon produces a
    /// matched-filter peak of exactly 1.
    filter_kernel: Vec<f64>,
}

impl PulseModel {
    pub fn new(num_bins: usize, bin_width: f64, repetition_period: f64, fwhm: f64) -> Result<Self> {
        if num_bins == 0 {
            return Err(Error::invalid("num_bins must be at least 1"));
        }
        if !(bin_width > 0.0) || !(fwhm > 0.0) || !(repetition_period > 0.0) {
            return Err(Error::invalid(
                "bin_width, fwhm, and repetition_period must be positive",
            ));
        }
        if num_bins as f64 * bin_width > repetition_period * (1.0 + 1e-12) {
            return Err(Error::invalid(
                "histogram span N * dt must not exceed the repetition period",
            ));
        }
        let sigma = fwhm / FWHM_PER_SIGMA;
        let radius = ((TRUNCATION_SIGMAS * sigma / bin_width).ceil() as usize).max(1);
        let mut mass_kernel = Vec::with_capacity(2 * radius + 1);
        for k in -(radius as i64)..=(radius as i64) {
            let lo = (k as f64 - 0.5) * bin_width;
            let hi = (k as f64 + 0.5) * bin_width;
            mass_kernel.push(truncated_gaussian_cdf(hi, sigma) - truncated_gaussian_cdf(lo, sigma));
        }
        let total: f64 = mass_kernel.iter().sum();
        for w in &mut mass_kernel {
            *w /= total;
        }
        let peak = mass_kernel.iter().cloned().fold(0.0, f64::max);
        let filter_kernel = mass_kernel.iter().map(|w| w / peak).collect();
        Ok(Self {
            num_bins,
            bin_width,
            repetition_period,
            fwhm,
            sigma,
            mass_kernel,
            filter_kernel,
        })
    }

    /// The simulation protocol defaults: 1024 bins of 97 ps, a 100 ns
    /// repetition period, and a 350 ps FWHM pulse.
    pub fn default_protocol() -> Self {
        Self::new(1024, 97e-12, 100e-9, 350e-12).expect("protocol defaults are valid")
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    pub fn bin_width(&self) -> f64 {
        self.bin_width
    }

    pub fn repetition_period(&self) -> f64 {
        self.repetition_period
    }

    pub fn fwhm(&self) -> f64 {
        self.fwhm
    }

    /// Unit-area binned pulse (sums to 1 within 1e-9). Taps run from offset
    /// `-kernel_radius()` to `+kernel_radius()`.
    pub fn mass_kernel(&self) -> &[f64] {
        &self.mass_kernel
    }

    /// Peak-normalized binned pulse used as the matched-filter kernel.
    pub fn filter_kernel(&self) -> &[f64] {
        &self.filter_kernel
    }

    pub fn kernel_radius(&self) -> usize {
        (self.mass_kernel.len() - 1) / 2
    }

    /// Maximum unambiguous depth `C * T_r / 2`.
    pub fn unambiguous_range(&self) -> f64 {
        SPEED_OF_LIGHT * self.repetition_period / 2.0
    }

    /// Signal mass falling in bin `n` for a pulse centered at time `t0`.
    fn bin_mass(&self, n: usize, t0: f64) -> f64 {
        let lo = (n as f64 - 0.5) * self.bin_width - t0;
        let hi = (n as f64 + 0.5) * self.bin_width - t0;
        truncated_gaussian_cdf(hi, self.sigma) - truncated_gaussian_cdf(lo, self.sigma)
    }
}

/// CDF of the zero-mean Gaussian truncated to +/- 4 sigma.
fn truncated_gaussian_cdf(x: f64, sigma: f64) -> f64 {
    let s = x / sigma;
    if s <= -TRUNCATION_SIGMAS {
        return 0.0;
    }
    if s >= TRUNCATION_SIGMAS {
        return 1.0;
    }
    let phi = |z: f64| 0.5 * (1.0 + libm::erf(z / std::f64::consts::SQRT_2));
    let lo = phi(-TRUNCATION_SIGMAS);
    let hi = phi(TRUNCATION_SIGMAS);
    (phi(s) - lo) / (hi - lo)
}

// ── sensor & calibration ──────────────────────────────────────────────

/// Detector parameters: quantum efficiency in [0, 1), expected dark counts
/// and ambient photons per bin.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorConfig {
    pub quantum_efficiency: f64,
    pub dark_count: f64,
    pub ambient_flux: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            quantum_efficiency: 0.9,
            dark_count: 0.0,
            ambient_flux: 0.0,
        }
    }
}

impl SensorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.quantum_efficiency >= 0.0 && self.quantum_efficiency < 1.0) {
            return Err(Error::invalid("quantum efficiency must be in [0, 1)"));
        }
        if !(self.dark_count >= 0.0) || !(self.ambient_flux >= 0.0) {
            return Err(Error::invalid("dark count and ambient flux must be >= 0"));
        }
        Ok(())
    }
}

/// Target mean signal and background photons per pixel per acquisition.
/// Written `S:B` on the command line; the SBR is `S / B`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SbrTarget {
    pub signal: f64,
    pub background: f64,
}

impl SbrTarget {
    pub fn new(signal: f64, background: f64) -> Result<Self> {
        if !(signal > 0.0) {
            return Err(Error::invalid("mean signal photons must be > 0"));
        }
        if !(background > 0.0) {
            return Err(Error::invalid("mean background photons must be > 0"));
        }
        Ok(Self { signal, background })
    }

    pub fn ratio(&self) -> f64 {
        self.signal / self.background
    }
}

/// Scene illumination solved by [`calibrate`]: the scale `k` of the
/// per-pixel flux `k * albedo / d^2`, and the uniform ambient level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    /// Scale of the returned-signal flux.
    pub flux_scale: f64,
    /// Ambient photons per bin reaching the detector.
    pub ambient_flux: f64,
}

impl Calibration {
    /// Calibration taken directly from a sensor's configured ambient level.
    pub fn manual(flux_scale: f64, sensor: &SensorConfig) -> Self {
        Self {
            flux_scale,
            ambient_flux: sensor.ambient_flux,
        }
    }
}

/// Solve for the flux scale and ambient level that realize an SBR target
/// on a given scene (scene-mean semantics: the *mean* expected signal over
/// valid pixels equals `S`; every pixel's expected background equals `B`).
pub fn calibrate(
    sbr: &SbrTarget,
    pulse: &PulseModel,
    sensor: &SensorConfig,
    depth: &DepthMap,
    albedo: &AlbedoMap,
) -> Result<Calibration> {
    calibrate_levels(sbr.signal, sbr.background, pulse, sensor, depth, albedo)
}

/// Like [`calibrate`] but accepts `background_total = 0` for clean,
/// signal-only scenes.
pub fn calibrate_levels(
    signal_mean: f64,
    background_total: f64,
    pulse: &PulseModel,
    sensor: &SensorConfig,
    depth: &DepthMap,
    albedo: &AlbedoMap,
) -> Result<Calibration> {
    sensor.validate()?;
    if !(signal_mean > 0.0) {
        return Err(Error::invalid("mean signal photons must be > 0"));
    }
    if !(background_total >= 0.0) {
        return Err(Error::invalid("mean background photons must be >= 0"));
    }
    if depth.width != albedo.width || depth.height != albedo.height {
        return Err(Error::dimension("depth and albedo maps are not aligned"));
    }
    let eta = sensor.quantum_efficiency;
    if eta == 0.0 {
        return Err(Error::invalid(
            "cannot calibrate a signal level with zero quantum efficiency",
        ));
    }

    let mut sum = 0.0;
    let mut count = 0usize;
    for (d, a) in depth.values.iter().zip(&albedo.values) {
        if *d >= 0.0 && *a >= 0.0 {
            if *d == 0.0 {
                return Err(Error::domain("zero depth in scene"));
            }
            sum += a / (d * d);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::domain("cannot calibrate an all-sentinel scene"));
    }
    let mean_falloff = sum / count as f64;
    let flux_scale = signal_mean / (eta * mean_falloff);

    let per_bin = background_total / pulse.num_bins() as f64;
    if per_bin < sensor.dark_count {
        return Err(Error::invalid(
            "dark counts alone exceed the background budget",
        ));
    }
    let ambient_flux = (per_bin - sensor.dark_count) / eta;
    Ok(Calibration { flux_scale, ambient_flux })
}

// ── expected flux ─────────────────────────────────────────────────────

/// Expected photons per bin for one pixel:
/// `lambda[n] = eta * Phi * mass_n(2 d / C) + eta * ambient + dark`,
/// with `Phi = flux_scale * albedo / d^2`. Pulse mass outside the gated
/// window `[0, N * dt)` is lost (no wrap-around).
pub fn expected_flux(
    depth: f64,
    albedo: f64,
    pulse: &PulseModel,
    sensor: &SensorConfig,
    calib: &Calibration,
) -> Result<Vec<f64>> {
    if !(depth > 0.0) {
        return Err(Error::domain("depth must be positive"));
    }
    if depth >= pulse.unambiguous_range() {
        return Err(Error::domain(format!(
            "depth {depth} m is at or beyond the unambiguous range {} m",
            pulse.unambiguous_range()
        )));
    }
    if !(albedo > 0.0 && albedo <= 1.0) {
        return Err(Error::domain("albedo must be in (0, 1]"));
    }

    let eta = sensor.quantum_efficiency;
    let mut lambda = background_flux(pulse, sensor, calib);
    let phi = calib.flux_scale * albedo / (depth * depth);
    let t0 = 2.0 * depth / SPEED_OF_LIGHT;

    let support = TRUNCATION_SIGMAS * pulse.sigma;
    let lo_bin = (((t0 - support) / pulse.bin_width) - 0.5).floor().max(0.0) as usize;
    let hi_bin = ((((t0 + support) / pulse.bin_width) + 0.5).ceil() as usize).min(pulse.num_bins - 1);
    for (n, rate) in lambda.iter_mut().enumerate().take(hi_bin + 1).skip(lo_bin) {
        *rate += eta * phi * pulse.bin_mass(n, t0);
    }
    Ok(lambda)
}

/// Background-only rate vector (used for no-return pixels).
pub fn background_flux(pulse: &PulseModel, sensor: &SensorConfig, calib: &Calibration) -> Vec<f64> {
    let per_bin = sensor.quantum_efficiency * calib.ambient_flux + sensor.dark_count;
    vec![per_bin; pulse.num_bins()]
}

// ── histograms ────────────────────────────────────────────────────────

/// Photon counts for one pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Histogram {
    pub counts: Vec<u32>,
}

/// Draw independent Poisson counts around the expected rates, consuming
/// draws from the provided stream only.
pub fn simulate_histogram<R: Rng>(lambda: &[f64], rng: &mut R) -> Histogram {
    let counts = lambda
        .iter()
        .map(|&l| {
            if l <= 0.0 {
                0
            } else {
                let draw: f64 = Poisson::new(l).expect("positive rate").sample(rng);
                draw as u32
            }
        })
        .collect();
    Histogram { counts }
}

/// A full sensor frame: per-pixel histograms in row-major pixel order,
/// together with the pulse model and the seed that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramFrame {
    pub width: u32,
    pub height: u32,
    pub pulse: PulseModel,
    pub seed: u64,
    /// Pixel-major counts: all bins of pixel (0,0), then (0,1), ...
    pub counts: Vec<u32>,
}

impl HistogramFrame {
    pub fn num_pixels(&self) -> usize {
        (self.width as usize) * (self.height as usize)
    }

    /// Counts for the pixel with row-major index `pixel`.
    pub fn histogram(&self, pixel: usize) -> &[u32] {
        let n = self.pulse.num_bins();
        &self.counts[pixel * n..(pixel + 1) * n]
    }
}

/// Simulate a frame at an SBR target. Deterministic in `(inputs, seed)`
/// regardless of worker count: every pixel draws from its own stream.
pub fn simulate_frame(
    depth: &DepthMap,
    albedo: &AlbedoMap,
    pulse: &PulseModel,
    sensor: &SensorConfig,
    sbr: &SbrTarget,
    seed: u64,
) -> Result<HistogramFrame> {
    let calib = calibrate(sbr, pulse, sensor, depth, albedo)?;
    simulate_frame_calibrated(depth, albedo, pulse, sensor, &calib, seed)
}

/// Simulate a frame from an explicit calibration.
pub fn simulate_frame_calibrated(
    depth: &DepthMap,
    albedo: &AlbedoMap,
    pulse: &PulseModel,
    sensor: &SensorConfig,
    calib: &Calibration,
    seed: u64,
) -> Result<HistogramFrame> {
    sensor.validate()?;
    if depth.width != albedo.width || depth.height != albedo.height {
        return Err(Error::dimension("depth and albedo maps are not aligned"));
    }
    let num_pixels = (depth.width as usize) * (depth.height as usize);
    let n = pulse.num_bins();

    // Validate every pixel up front so parallel workers cannot fail.
    for i in 0..num_pixels {
        let (d, a) = (depth.values[i], albedo.values[i]);
        if d >= 0.0 {
            if !(d > 0.0) || d >= pulse.unambiguous_range() {
                return Err(Error::domain(format!(
                    "pixel {i}: depth {d} outside (0, {})",
                    pulse.unambiguous_range()
                )));
            }
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::domain(format!("pixel {i}: albedo {a} outside (0, 1]")));
            }
        }
    }

    let mut counts = vec![0u32; num_pixels * n];
    counts
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(i, out)| {
            let d = depth.values[i];
            let lambda = if d >= 0.0 {
                expected_flux(d, albedo.values[i], pulse, sensor, calib)
                    .expect("pixels validated above")
            } else {
                background_flux(pulse, sensor, calib)
            };
            let mut rng = pixel_stream(seed, i as u64);
            let h = simulate_histogram(&lambda, &mut rng);
            out.copy_from_slice(&h.counts);
        });

    Ok(HistogramFrame {
        width: depth.width,
        height: depth.height,
        pulse: pulse.clone(),
        seed,
        counts,
    })
}

// ── frame file ────────────────────────────────────────────────────────

const FRAME_MAGIC: &[u8; 8] = b"SPADHST1";

pub fn write_frame(frame: &HistogramFrame, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_frame_to(frame, &mut w)
}

pub fn write_frame_to<W: Write>(frame: &HistogramFrame, w: &mut W) -> Result<()> {
    w.write_all(FRAME_MAGIC)?;
    binio::write_u32(w, frame.height)?;
    binio::write_u32(w, frame.width)?;
    binio::write_u32(w, frame.pulse.num_bins() as u32)?;
    binio::write_f64(w, frame.pulse.bin_width())?;
    binio::write_f64(w, frame.pulse.repetition_period())?;
    binio::write_f64(w, frame.pulse.fwhm())?;
    binio::write_u64(w, frame.seed)?;
    for c in &frame.counts {
        binio::write_u32(w, *c)?;
    }
    Ok(())
}

pub fn read_frame(path: &Path) -> Result<HistogramFrame> {
    let mut r = BufReader::new(File::open(path)?);
    read_frame_from(&mut r)
}

pub fn read_frame_from<R: Read>(r: &mut R) -> Result<HistogramFrame> {
    binio::expect_magic(r, FRAME_MAGIC)?;
    let height = binio::read_u32(r)?;
    let width = binio::read_u32(r)?;
    let num_bins = binio::read_u32(r)? as usize;
    let bin_width = binio::read_f64(r)?;
    let repetition_period = binio::read_f64(r)?;
    let fwhm = binio::read_f64(r)?;
    let seed = binio::read_u64(r)?;
    let pulse = PulseModel::new(num_bins, bin_width, repetition_period, fwhm)?;
    let total = (height as usize)
        .checked_mul(width as usize)
        .and_then(|p| p.checked_mul(num_bins))
        .ok_or_else(|| Error::parse("frame dimensions overflow"))?;
    let mut counts = vec![0u32; total];
    let mut buf = vec![0u8; total.min(1 << 16) * 4];
    let mut filled = 0usize;
    while filled < total {
        let take = (total - filled).min(buf.len() / 4);
        r.read_exact(&mut buf[..take * 4])?;
        for (j, chunk) in buf[..take * 4].chunks_exact(4).enumerate() {
            counts[filled + j] = u32::from_le_bytes(chunk.try_into().unwrap());
        }
        filled += take;
    }
    Ok(HistogramFrame { width, height, pulse, seed, counts })
}

// ══════════════════════════════════════════════════════════════════════
// Tests
// ══════════════════════════════════════════════════════════════════════

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::NO_RETURN;

    fn uniform_scene(w: u32, h: u32, depth: f64, albedo: f64) -> (DepthMap, AlbedoMap) {
        (
            DepthMap { width: w, height: h, values: vec![depth; (w * h) as usize] },
            AlbedoMap { width: w, height: h, values: vec![albedo; (w * h) as usize] },
        )
    }

    #[test]
    fn mass_kernel_is_unit_area() {
        let pulse = PulseModel::default_protocol();
        let sum: f64 = pulse.mass_kernel().iter().sum();
        assert!((sum - 1.0).abs() < 1e-9, "kernel sum {sum}");
        // 350 ps FWHM over 97 ps bins: sigma ~ 1.53 bins, radius 7.
        assert_eq!(pulse.kernel_radius(), 7);
        let peak = pulse.filter_kernel()[pulse.kernel_radius()];
        assert_eq!(peak, 1.0);
    }

    #[test]
    fn invalid_pulse_parameters_are_rejected() {
        assert!(PulseModel::new(0, 97e-12, 100e-9, 350e-12).is_err());
        assert!(PulseModel::new(1024, 0.0, 100e-9, 350e-12).is_err());
        assert!(PulseModel::new(1024, 97e-12, 100e-9, 0.0).is_err());
        // N * dt > T_r
        assert!(PulseModel::new(2048, 97e-12, 100e-9, 350e-12).is_err());
    }

    #[test]
    fn delta_pulse_limit_concentrates_in_one_bin() {
        let pulse = PulseModel::new(1024, 97e-12, 100e-9, 1e-16).unwrap();
        let sensor = SensorConfig { quantum_efficiency: 0.9, dark_count: 0.0, ambient_flux: 0.0 };
        let calib = Calibration { flux_scale: 1.0, ambient_flux: 0.0 };
        // Depth that puts the pulse center exactly at bin 100.
        let depth = 100.0 * pulse.bin_width() * SPEED_OF_LIGHT / 2.0;
        let lambda = expected_flux(depth, 1.0, &pulse, &sensor, &calib).unwrap();
        let total: f64 = lambda.iter().sum();
        assert!((lambda[100] - total).abs() < 1e-15, "mass leaked out of bin 100");
        assert!(lambda[100] > 0.0);
    }

    #[test]
    fn signal_part_integrates_to_eta_phi() {
        let pulse = PulseModel::default_protocol();
        let sensor = SensorConfig { quantum_efficiency: 0.7, dark_count: 0.0, ambient_flux: 0.0 };
        let calib = Calibration { flux_scale: 2.5, ambient_flux: 0.0 };
        let depth = 3.17;
        let albedo = 0.6;
        let lambda = expected_flux(depth, albedo, &pulse, &sensor, &calib).unwrap();
        let total: f64 = lambda.iter().sum();
        let phi = calib.flux_scale * albedo / (depth * depth);
        assert!((total - 0.7 * phi).abs() < 1e-9 * (0.7 * phi), "total {total}");
    }

    #[test]
    fn pulse_position_matches_round_trip_bin() {
        let pulse = PulseModel::default_protocol();
        let sensor = SensorConfig::default();
        let calib = Calibration { flux_scale: 100.0, ambient_flux: 0.0 };
        for depth in [0.5, 1.234, 2.0, 5.5, 9.87, 14.2] {
            let lambda = expected_flux(depth, 0.8, &pulse, &sensor, &calib).unwrap();
            let argmax = lambda
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            let expected =
                (2.0 * depth / (SPEED_OF_LIGHT * pulse.bin_width())).round() as usize;
            assert_eq!(argmax, expected, "depth {depth}");
        }
    }

    #[test]
    fn depth_out_of_range_is_a_domain_error() {
        let pulse = PulseModel::default_protocol();
        let sensor = SensorConfig::default();
        let calib = Calibration { flux_scale: 1.0, ambient_flux: 0.0 };
        assert!(expected_flux(15.1, 0.5, &pulse, &sensor, &calib).is_err());
        assert!(expected_flux(0.0, 0.5, &pulse, &sensor, &calib).is_err());
        assert!(expected_flux(1.0, 0.0, &pulse, &sensor, &calib).is_err());
    }

    #[test]
    fn calibration_hits_sbr_target_on_uniform_scene() {
        let pulse = PulseModel::default_protocol();
        let sensor = SensorConfig::default();
        let (depth, albedo) = uniform_scene(8, 8, 2.5, 0.6);
        let sbr = SbrTarget::new(5.0, 50.0).unwrap();
        let calib = calibrate(&sbr, &pulse, &sensor, &depth, &albedo).unwrap();

        let lambda = expected_flux(2.5, 0.6, &pulse, &sensor, &calib).unwrap();
        let bg_per_bin = sensor.quantum_efficiency * calib.ambient_flux + sensor.dark_count;
        let total_signal: f64 = lambda.iter().map(|l| l - bg_per_bin).sum();
        assert!((total_signal - 5.0).abs() < 1e-9, "signal {total_signal}");
        assert!((bg_per_bin - 50.0 / 1024.0).abs() < 1e-12);
    }

    #[test]
    fn farther_pixels_get_inverse_square_signal() {
        let pulse = PulseModel::default_protocol();
        let sensor = SensorConfig::default();
        let (d1, d2) = (2.0, 5.0);
        let depth = DepthMap { width: 2, height: 1, values: vec![d1, d2] };
        let albedo = AlbedoMap { width: 2, height: 1, values: vec![0.5, 0.5] };
        let sbr = SbrTarget::new(5.0, 50.0).unwrap();
        let calib = calibrate(&sbr, &pulse, &sensor, &depth, &albedo).unwrap();

        let sig = |d: f64| -> f64 {
            let lambda = expected_flux(d, 0.5, &pulse, &sensor, &calib).unwrap();
            let bg = sensor.quantum_efficiency * calib.ambient_flux;
            lambda.iter().map(|l| l - bg).sum()
        };
        let ratio = sig(d1) / sig(d2);
        assert!((ratio - (d2 / d1).powi(2)).abs() < 1e-9, "ratio {ratio}");
        // Scene-mean signal equals S.
        assert!(((sig(d1) + sig(d2)) / 2.0 - 5.0).abs() < 1e-9);
    }

    #[test]
    fn calibration_rejects_empty_scenes() {
        let pulse = PulseModel::default_protocol();
        let sensor = SensorConfig::default();
        let depth = DepthMap { width: 2, height: 1, values: vec![NO_RETURN, NO_RETURN] };
        let albedo = AlbedoMap { width: 2, height: 1, values: vec![NO_RETURN, NO_RETURN] };
        let sbr = SbrTarget::new(5.0, 50.0).unwrap();
        assert!(calibrate(&sbr, &pulse, &sensor, &depth, &albedo).is_err());
    }

    #[test]
    fn zero_flux_yields_all_zero_histogram() {
        let mut rng = pixel_stream(1, 0);
        let h = simulate_histogram(&[0.0; 64], &mut rng);
        assert!(h.counts.iter().all(|c| *c == 0));
    }

    #[test]
    fn poisson_mean_and_variance_match_rate() {
        let trials = 10_000;
        let lambda = 2.0;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut rng = pixel_stream(42, 0);
        for _ in 0..trials {
            let h = simulate_histogram(&[lambda], &mut rng);
            let x = h.counts[0] as f64;
            sum += x;
            sum_sq += x * x;
        }
        let n = trials as f64;
        let mean = sum / n;
        let var = (sum_sq - n * mean * mean) / (n - 1.0);
        let mean_tol = 3.0 * (lambda / n).sqrt();
        // Var(sample variance) ~= (mu4 - sigma^4) / n = (lambda + 2 lambda^2) / n.
        let var_tol = 3.0 * ((lambda + 2.0 * lambda * lambda) / n).sqrt();
        assert!((mean - lambda).abs() < mean_tol, "mean {mean}");
        assert!((var - lambda).abs() < var_tol, "var {var}");
    }

    #[test]
    fn frames_are_deterministic_and_seed_sensitive() {
        let pulse = PulseModel::new(256, 97e-12, 100e-9, 350e-12).unwrap();
        let sensor = SensorConfig::default();
        let (depth, albedo) = uniform_scene(16, 12, 3.0, 0.8);
        let sbr = SbrTarget::new(5.0, 50.0).unwrap();
        let f1 = simulate_frame(&depth, &albedo, &pulse, &sensor, &sbr, 7).unwrap();
        let f2 = simulate_frame(&depth, &albedo, &pulse, &sensor, &sbr, 7).unwrap();
        let f3 = simulate_frame(&depth, &albedo, &pulse, &sensor, &sbr, 8).unwrap();
        assert_eq!(f1, f2);
        assert_ne!(f1.counts, f3.counts);
    }

    #[test]
    fn sentinel_pixels_see_background_only() {
        let pulse = PulseModel::new(1024, 97e-12, 100e-9, 350e-12).unwrap();
        let sensor = SensorConfig::default();
        let mut depth = DepthMap { width: 4, height: 4, values: vec![2.0; 16] };
        let albedo = AlbedoMap { width: 4, height: 4, values: vec![0.5; 16] };
        depth.values[5] = NO_RETURN;
        let sbr = SbrTarget::new(5.0, 100.0).unwrap();
        let frame = simulate_frame(&depth, &albedo, &pulse, &sensor, &sbr, 3).unwrap();
        // Mean count over the sentinel pixel's bins ~ B / N.
        let h = frame.histogram(5);
        let mean = h.iter().map(|c| *c as f64).sum::<f64>() / h.len() as f64;
        let expect = 100.0 / 1024.0;
        let tol = 3.0 * (expect / 1024.0f64).sqrt();
        assert!((mean - expect).abs() < tol, "mean {mean} vs {expect}");
    }

    #[test]
    fn mismatched_maps_are_rejected() {
        let pulse = PulseModel::default_protocol();
        let sensor = SensorConfig::default();
        let depth = DepthMap { width: 2, height: 2, values: vec![1.0; 4] };
        let albedo = AlbedoMap { width: 3, height: 2, values: vec![0.5; 6] };
        let sbr = SbrTarget::new(5.0, 50.0).unwrap();
        assert!(simulate_frame(&depth, &albedo, &pulse, &sensor, &sbr, 0).is_err());
    }

    #[test]
    fn sbr_target_validates() {
        assert!(SbrTarget::new(0.0, 50.0).is_err());
        assert!(SbrTarget::new(5.0, 0.0).is_err());
        let sbr = SbrTarget::new(5.0, 50.0).unwrap();
        assert!((sbr.ratio() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn frame_file_roundtrip() {
        let pulse = PulseModel::new(64, 97e-12, 100e-9, 350e-12).unwrap();
        let sensor = SensorConfig::default();
        let (depth, albedo) = uniform_scene(3, 2, 1.5, 0.9);
        let sbr = SbrTarget::new(5.0, 50.0).unwrap();
        let frame = simulate_frame(&depth, &albedo, &pulse, &sensor, &sbr, 99).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.sph");
        write_frame(&frame, &path).unwrap();
        let back = read_frame(&path).unwrap();
        assert_eq!(back, frame);
    }
}
