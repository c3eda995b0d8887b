//! Spectra corruptions for robustness sweeps.
//!
//! Seven corruption kinds, each with three severities. Severity `s` scales the
//! kind's strength parameter by 1, 2 or 4.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma};
use serde::{Deserialize, Serialize};

use super::RoiSample;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorruptionKind {
    /// Unit-mean multiplicative gamma noise.
    Speckle,
    /// Extra exponential noise power on every pixel.
    AdditiveNoiseFloor,
    /// Uniform power loss.
    Attenuation,
    /// A band of azimuth columns replaced by bare noise floor.
    Occlusion,
    /// Gaussian smearing of the spectrum.
    Blur,
    /// Spurious multipath peaks relative to the strongest return.
    GhostPeaks,
    /// Receiver saturation below the strongest return.
    Clipping,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 7] = [
        CorruptionKind::Speckle,
        CorruptionKind::AdditiveNoiseFloor,
        CorruptionKind::Attenuation,
        CorruptionKind::Occlusion,
        CorruptionKind::Blur,
        CorruptionKind::GhostPeaks,
        CorruptionKind::Clipping,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CorruptionKind::Speckle => "speckle",
            CorruptionKind::AdditiveNoiseFloor => "additive-noise-floor",
            CorruptionKind::Attenuation => "attenuation",
            CorruptionKind::Occlusion => "occlusion",
            CorruptionKind::Blur => "blur",
            CorruptionKind::GhostPeaks => "ghost-peaks",
            CorruptionKind::Clipping => "clipping",
        }
    }

    /// Stable index used for seed derivation.
    pub fn index(self) -> u64 {
        Self::ALL.iter().position(|k| *k == self).expect("listed") as u64
    }
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CorruptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown corruption kind `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub severity: u8,
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, severity: u8) -> Result<Self> {
        let spec = Self { kind, severity };
        spec.scale()?;
        Ok(spec)
    }

    /// Strength multiplier: 1, 2 or 4 for severities 1, 2, 3.
    pub fn scale(&self) -> Result<f64> {
        match self.severity {
            1 => Ok(1.0),
            2 => Ok(2.0),
            3 => Ok(4.0),
            s => Err(Error::invalid(format!(
                "severity must be 1, 2 or 3, got {s}"
            ))),
        }
    }

    /// All 21 (kind, severity) cells in kind-major order.
    pub fn catalog() -> Vec<CorruptionSpec> {
        CorruptionKind::ALL
            .into_iter()
            .flat_map(|kind| (1..=3).map(move |severity| CorruptionSpec { kind, severity }))
            .collect()
    }
}

/// Base (severity 1) strength of every corruption kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorruptionParams {
    /// Noise floor of the sensor the samples came from.
    pub noise_floor: f64,
    pub speckle_variance: f64,
    /// Added noise power as a multiple of `noise_floor`.
    pub noise_rise: f64,
    pub attenuation_db: f64,
    /// Fraction of azimuth columns occluded.
    pub occlusion_fraction: f64,
    pub blur_sigma: f64,
    pub ghost_count: f64,
    /// Ghost peak power relative to the strongest pixel.
    pub ghost_level: f64,
    /// Clip level in dB below the strongest pixel.
    pub clipping_db: f64,
}

impl Default for CorruptionParams {
    fn default() -> Self {
        Self {
            noise_floor: 1.0,
            speckle_variance: 0.25,
            noise_rise: 1.0,
            attenuation_db: 3.0,
            occlusion_fraction: 0.1,
            blur_sigma: 0.5,
            ghost_count: 1.0,
            ghost_level: 0.25,
            clipping_db: 6.0,
        }
    }
}

/// Attenuation factor applied at the given spec. Only meaningful for
/// [`CorruptionKind::Attenuation`].
pub fn attenuation_factor(params: &CorruptionParams, spec: &CorruptionSpec) -> Result<f64> {
    Ok(10f64.powf(-params.attenuation_db * spec.scale()? / 10.0))
}

/// Applies one corruption. Range, class and ids are carried over unchanged;
/// the output depends only on the arguments.
pub fn corrupt(
    sample: &RoiSample,
    spec: &CorruptionSpec,
    params: &CorruptionParams,
    seed: u64,
) -> Result<RoiSample> {
    let scale = spec.scale()?;
    let (h, w) = (sample.height, sample.width);
    if sample.pixels.len() != h * w || sample.pixels.is_empty() {
        return Err(Error::invalid("sample pixel grid does not match its shape"));
    }
    let mut rng = seed::rng_for(seed, &[]);
    let mut pixels = sample.pixels.clone();
    let peak = pixels.iter().copied().fold(0.0, f64::max);
    let bad = |e: &dyn fmt::Display| Error::invalid(format!("{}: {e}", spec.kind));

    match spec.kind {
        CorruptionKind::Speckle => {
            let var = params.speckle_variance * scale;
            let gamma = Gamma::new(1.0 / var, var).map_err(|e| bad(&e))?;
            for p in pixels.iter_mut() {
                *p *= gamma.sample(&mut rng);
            }
        }
        CorruptionKind::AdditiveNoiseFloor => {
            let mean = params.noise_rise * scale * params.noise_floor;
            let exp = Exp::new(1.0 / mean).map_err(|e| bad(&e))?;
            for p in pixels.iter_mut() {
                *p += exp.sample(&mut rng);
            }
        }
        CorruptionKind::Attenuation => {
            let f = attenuation_factor(params, spec)?;
            for p in pixels.iter_mut() {
                *p *= f;
            }
        }
        CorruptionKind::Occlusion => {
            let cols =
                ((params.occlusion_fraction * scale * w as f64).round() as usize).clamp(1, w);
            let start = rng.random_range(0..=w - cols);
            let exp = Exp::new(1.0 / params.noise_floor).map_err(|e| bad(&e))?;
            for r in 0..h {
                for c in start..start + cols {
                    pixels[r * w + c] = exp.sample(&mut rng);
                }
            }
        }
        CorruptionKind::Blur => {
            pixels = gaussian_blur(&pixels, h, w, params.blur_sigma * scale);
        }
        CorruptionKind::GhostPeaks => {
            let n = (params.ghost_count * scale).round() as usize;
            let amp = params.ghost_level * peak;
            for _ in 0..n {
                let row = rng.random::<f64>() * h as f64;
                let col = rng.random::<f64>() * w as f64;
                let sigma = 1.0 + rng.random::<f64>();
                let inv = 1.0 / (2.0 * sigma * sigma);
                for r in 0..h {
                    let dr = r as f64 + 0.5 - row;
                    for c in 0..w {
                        let dc = c as f64 + 0.5 - col;
                        pixels[r * w + c] += amp * (-(dr * dr + dc * dc) * inv).exp();
                    }
                }
            }
        }
        CorruptionKind::Clipping => {
            let level = peak * 10f64.powf(-params.clipping_db * scale / 10.0);
            for p in pixels.iter_mut() {
                *p = p.min(level);
            }
        }
    }

    Ok(RoiSample {
        pixels,
        ..sample.clone()
    })
}

/// Separable Gaussian blur with edge replication; the kernel is normalised so
/// a constant image is left unchanged.
fn gaussian_blur(pixels: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.into_iter().map(|k| k / norm).collect();
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;

    let mut tmp = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            tmp[r * w + c] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * pixels[r * w + clamp(c as isize + k as isize - radius, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            out[r * w + c] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * tmp[clamp(r as isize + k as isize - radius, h) * w + c])
                .sum();
        }
    }
    out
}

/// Mean relative pixel change, `sum |b - a| / sum a`.
pub fn relative_change(original: &RoiSample, corrupted: &RoiSample) -> f64 {
    let diff: f64 = original
        .pixels
        .iter()
        .zip(&corrupted.pixels)
        .map(|(a, b)| (b - a).abs())
        .sum();
    let total: f64 = original.pixels.iter().sum();
    if total > 0.0 {
        diff / total
    } else {
        diff
    }
}
