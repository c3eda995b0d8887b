//! Synthetic range-azimuth ROI power spectra.
//!
//! Each ROI is a small grid of linear-scale received power. Targets are a
//! handful of point scatterers whose peak power follows the point-target
//! radar range equation, `power = transmit_constant * rcs / R^4`, rendered as
//! Gaussian blobs on top of an exponentially distributed noise floor. Far and
//! weakly reflecting objects therefore sink towards the noise floor, which is
//! the regime where the class becomes ambiguous.

mod corrupt;
pub mod io;

pub use corrupt::{corrupt, relative_change, CorruptionKind, CorruptionParams, CorruptionSpec};

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{self, stream};

/// One region-of-interest power patch with its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiSample {
    pub sample_id: u64,
    pub class_id: usize,
    pub range_m: f64,
    pub provenance_seed: u64,
    pub height: usize,
    pub width: usize,
    /// Row-major, `height * width` linear-scale power values.
    pub pixels: Vec<f64>,
}

impl RoiSample {
    pub fn validate(&self, n_classes: usize) -> Result<()> {
        if self.pixels.is_empty() || self.pixels.len() != self.height * self.width {
            return Err(Error::invalid(format!(
                "sample {}: pixel grid has {} values, expected {}x{}",
                self.sample_id,
                self.pixels.len(),
                self.height,
                self.width
            )));
        }
        if let Some(p) = self.pixels.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::invalid(format!(
                "sample {}: pixel value {p} is not a finite non-negative power",
                self.sample_id
            )));
        }
        if !(self.range_m.is_finite() && self.range_m > 0.0) {
            return Err(Error::invalid(format!(
                "sample {}: range {} m must be positive",
                self.sample_id, self.range_m
            )));
        }
        if self.class_id >= n_classes {
            return Err(Error::invalid(format!(
                "sample {}: class {} out of range for {n_classes} classes",
                self.sample_id, self.class_id
            )));
        }
        Ok(())
    }
}

/// Reflectivity model of one object class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub class_id: usize,
    pub name: String,
    /// Inclusive `[min, max]` number of scatterers per sample.
    pub scatterer_count_range: [u32; 2],
    /// Mean per-scatterer radar cross section (relative units).
    pub rcs_mean: f64,
    /// Log-normal spread of the per-scatterer RCS; 0 means every scatterer
    /// reflects exactly `rcs_mean`.
    pub rcs_spread: f64,
    /// Physical `[length, width]` in meters: extent along and across the
    /// line of sight. Scatterers are spread uniformly over this footprint.
    pub extent_m: [f64; 2],
    /// Inclusive `[min, max]` blob standard deviation in pixels: how widely a
    /// single scatterer of this class smears across cells.
    pub blob_sigma: [f64; 2],
}

impl ClassSpec {
    pub fn validate(&self, field: &str) -> Result<()> {
        let [lo, hi] = self.scatterer_count_range;
        if lo < 1 || lo > hi {
            return Err(Error::config(
                format!("{field}.scatterer_count_range"),
                format!("need 1 <= min <= max, got [{lo}, {hi}]"),
            ));
        }
        if !(self.rcs_mean.is_finite() && self.rcs_mean > 0.0) {
            return Err(Error::config(
                format!("{field}.rcs_mean"),
                format!("must be positive, got {}", self.rcs_mean),
            ));
        }
        if !(self.rcs_spread.is_finite() && self.rcs_spread >= 0.0) {
            return Err(Error::config(
                format!("{field}.rcs_spread"),
                format!("must be >= 0, got {}", self.rcs_spread),
            ));
        }
        let [s_lo, s_hi] = self.blob_sigma;
        if !(s_lo.is_finite() && s_hi.is_finite() && s_lo > 0.0 && s_lo <= s_hi) {
            return Err(Error::config(
                format!("{field}.blob_sigma"),
                format!("need 0 < min <= max, got [{s_lo}, {s_hi}]"),
            ));
        }
        if self.extent_m.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err(Error::config(
                format!("{field}.extent_m"),
                format!("must be finite and >= 0, got {:?}", self.extent_m),
            ));
        }
        Ok(())
    }
}

/// Sensor and rendering parameters shared by all classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub height: usize,
    pub width: usize,
    /// Ranges are drawn uniformly from `[min, max]` meters.
    pub range_interval_m: [f64; 2],
    /// Folds transmit power, antenna gains, wavelength and `(4 pi)^3` into one
    /// constant: peak power of a scatterer is `transmit_constant * rcs / R^4`.
    pub transmit_constant: f64,
    /// Mean of the exponentially distributed noise power per pixel.
    pub noise_floor: f64,
    /// Meters per pixel row.
    pub range_resolution_m: f64,
    /// Radians per pixel column; an object's width in columns therefore
    /// shrinks as `1 / R`.
    pub azimuth_resolution_rad: f64,
    /// The object centre is offset from the ROI centre by up to this many
    /// pixels in each direction.
    pub center_jitter_px: f64,
    /// Knee of the logarithmic receiver. When set, the target return `s` of
    /// each pixel is mapped to `c * ln(1 + s / c)` before the noise floor is
    /// added: linear below `c`, logarithmic far above it.
    pub compression_power: Option<f64>,
}

impl GeneratorConfig {
    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn validate(&self, field: &str) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::config(
                format!("{field}.height/width"),
                "pixel grid must be non-empty",
            ));
        }
        let [lo, hi] = self.range_interval_m;
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo < hi) {
            return Err(Error::config(
                format!("{field}.range_interval_m"),
                format!("need 0 < min < max, got [{lo}, {hi}]"),
            ));
        }
        if !(self.transmit_constant.is_finite() && self.transmit_constant > 0.0) {
            return Err(Error::config(
                format!("{field}.transmit_constant"),
                "must be positive",
            ));
        }
        if !(self.noise_floor.is_finite() && self.noise_floor > 0.0) {
            return Err(Error::config(
                format!("{field}.noise_floor"),
                "must be positive",
            ));
        }
        for (name, v) in [
            ("range_resolution_m", self.range_resolution_m),
            ("azimuth_resolution_rad", self.azimuth_resolution_rad),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("{field}.{name}"), "must be positive"));
            }
        }
        if !(self.center_jitter_px.is_finite() && self.center_jitter_px >= 0.0) {
            return Err(Error::config(
                format!("{field}.center_jitter_px"),
                "must be >= 0",
            ));
        }
        if let Some(c) = self.compression_power {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::config(
                    format!("{field}.compression_power"),
                    "must be positive when set",
                ));
            }
        }
        Ok(())
    }
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        let noise_floor = 1.0;
        let range_interval_m = [3.0, 43.0];
        let weakest_rcs = 1.0;
        Self {
            height: 16,
            width: 16,
            range_interval_m,
            transmit_constant: transmit_constant_for_snr(
                DEFAULT_EDGE_SNR_DB,
                noise_floor,
                weakest_rcs,
                range_interval_m[1],
            ),
            noise_floor,
            range_resolution_m: 0.4,
            azimuth_resolution_rad: 0.1,
            center_jitter_px: 1.0,
            compression_power: Some(DEFAULT_COMPRESSION_DB_ABOVE_NOISE_FLOOR)
                .map(|db| noise_floor * 10f64.powf(db / 10.0)),
        }
    }
}

/// Peak SNR of the weakest default class at the far edge of the range interval.
pub const DEFAULT_EDGE_SNR_DB: f64 = 3.0;
/// Default gain change of the test environment relative to training.
pub const DEFAULT_TEST_GAIN_DB: f64 = -15.0;
const DEFAULT_COMPRESSION_DB_ABOVE_NOISE_FLOOR: f64 = 10.0;

/// Transmit constant that puts a scatterer of `rcs` at `range_m` exactly
/// `snr_db` above the noise floor.
pub fn transmit_constant_for_snr(snr_db: f64, noise_floor: f64, rcs: f64, range_m: f64) -> f64 {
    noise_floor * 10f64.powf(snr_db / 10.0) * range_m.powi(4) / rcs
}

/// The seven default classes, ordered from most to least reflective.
///
/// RCS means are log-spaced over two decades; scatterer counts shrink from
/// 4..8 for the car to 1..2 for the stop sign. Footprints give each class a
/// shape that is resolved near the sensor and collapses in azimuth with
/// range.
pub fn default_class_specs() -> Vec<ClassSpec> {
    // log-normal spread of about 5 dB, close to fluctuating (Swerling) targets
    const RCS_SPREAD: f64 = 1.2;
    // (name, scatterers, rcs spread, [length, width] m, blob sigma px)
    let table: [(&str, [u32; 2], f64, [f64; 2], [f64; 2]); 7] = [
        ("car", [4, 8], RCS_SPREAD, [4.5, 1.8], [1.1, 1.3]),
        ("motorbike", [3, 6], RCS_SPREAD, [2.2, 0.8], [0.9, 1.0]),
        (
            "construction barrier",
            [3, 5],
            RCS_SPREAD,
            [0.3, 1.6],
            [0.7, 0.8],
        ),
        ("baby carriage", [2, 4], RCS_SPREAD, [1.0, 0.6], [1.0, 1.1]),
        ("bicycle", [2, 4], RCS_SPREAD, [1.8, 0.6], [0.8, 0.9]),
        ("pedestrian", [1, 3], RCS_SPREAD, [0.5, 0.5], [1.3, 1.5]),
        ("stop sign", [1, 2], RCS_SPREAD, [0.1, 0.6], [0.5, 0.6]),
    ];
    let n = table.len();
    table
        .iter()
        .enumerate()
        .map(|(i, (name, count, spread, extent, sigma))| ClassSpec {
            class_id: i,
            name: (*name).to_string(),
            scatterer_count_range: *count,
            // 100 .. 1, log-spaced
            rcs_mean: 10f64.powf(2.0 * (n - 1 - i) as f64 / (n - 1) as f64),
            rcs_spread: *spread,
            extent_m: *extent,
            blob_sigma: *sigma,
        })
        .collect()
}

/// Renders one ROI for `class_spec` at `range_m`. The output depends only on
/// the arguments; `seed` is recorded as the sample's provenance seed.
pub fn generate_sample(
    class_spec: &ClassSpec,
    range_m: f64,
    physics: &GeneratorConfig,
    seed: u64,
) -> Result<RoiSample> {
    if !(range_m.is_finite() && range_m > 0.0) {
        return Err(Error::invalid(format!(
            "range must be positive, got {range_m}"
        )));
    }
    if physics.pixel_count() == 0 {
        return Err(Error::invalid("empty pixel grid"));
    }
    class_spec
        .validate("class_spec")
        .map_err(|e| Error::invalid(e.to_string()))?;

    let mut rng = seed::rng_for(seed, &[]);
    let (h, w) = (physics.height, physics.width);
    let mut signal = vec![0.0; h * w];

    let [k_lo, k_hi] = class_spec.scatterer_count_range;
    let count = rng.random_range(k_lo..=k_hi);
    let path_loss = physics.transmit_constant / range_m.powi(4);
    let jitter = physics.center_jitter_px;
    let center_row = h as f64 / 2.0 + jitter * (2.0 * rng.random::<f64>() - 1.0);
    let center_col = w as f64 / 2.0 + jitter * (2.0 * rng.random::<f64>() - 1.0);
    let [length, width] = class_spec.extent_m;
    let rows = length / physics.range_resolution_m;
    let cols = width / (range_m * physics.azimuth_resolution_rad);
    for _ in 0..count {
        let row = center_row + rows * (rng.random::<f64>() - 0.5);
        let col = center_col + cols * (rng.random::<f64>() - 0.5);
        let [s_lo, s_hi] = class_spec.blob_sigma;
        let sigma = s_lo + (s_hi - s_lo) * rng.random::<f64>();
        let z: f64 = StandardNormal.sample(&mut rng);
        let spread = class_spec.rcs_spread;
        // unit-mean log-normal fluctuation
        let rcs = class_spec.rcs_mean * (spread * z - 0.5 * spread * spread).exp();
        let peak = path_loss * rcs;
        let inv_two_var = 1.0 / (2.0 * sigma * sigma);
        for r in 0..h {
            let dr = r as f64 + 0.5 - row;
            for c in 0..w {
                let dc = c as f64 + 0.5 - col;
                signal[r * w + c] += peak * (-(dr * dr + dc * dc) * inv_two_var).exp();
            }
        }
    }

    if let Some(limit) = physics.compression_power {
        for s in signal.iter_mut() {
            *s = limit * (*s / limit).ln_1p();
        }
    }

    let noise = Exp::new(1.0 / physics.noise_floor)
        .map_err(|e| Error::invalid(format!("noise floor: {e}")))?;
    let pixels = signal
        .into_iter()
        .map(|s| s + noise.sample(&mut rng))
        .collect();

    Ok(RoiSample {
        sample_id: 0,
        class_id: class_spec.class_id,
        range_m,
        provenance_seed: seed,
        height: h,
        width: w,
        pixels,
    })
}

/// Average received power of a sample: arithmetic mean of its linear-scale
/// pixels.
pub fn mean_power(sample: &RoiSample) -> f64 {
    if sample.pixels.is_empty() {
        return 0.0;
    }
    sample.pixels.iter().sum::<f64>() / sample.pixels.len() as f64
}

/// Normalisation extrema for range- and power-based smoothing. Always computed
/// from the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub r_min: f64,
    pub r_max: f64,
    pub pi_min: f64,
    pub pi_max: f64,
    pub class_counts: Vec<usize>,
}

impl DatasetStats {
    pub fn n_classes(&self) -> usize {
        self.class_counts.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r_min < self.r_max) {
            return Err(Error::DegenerateStats(format!(
                "r_min {} must be below r_max {}",
                self.r_min, self.r_max
            )));
        }
        if !(self.pi_min < self.pi_max) {
            return Err(Error::DegenerateStats(format!(
                "pi_min {} must be below pi_max {}",
                self.pi_min, self.pi_max
            )));
        }
        Ok(())
    }
}

pub fn dataset_stats(train_split: &[RoiSample], n_classes: usize) -> Result<DatasetStats> {
    if train_split.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    let mut stats = DatasetStats {
        r_min: f64::INFINITY,
        r_max: f64::NEG_INFINITY,
        pi_min: f64::INFINITY,
        pi_max: f64::NEG_INFINITY,
        class_counts: vec![0; n_classes],
    };
    for s in train_split {
        s.validate(n_classes)?;
        let pi = mean_power(s);
        stats.r_min = stats.r_min.min(s.range_m);
        stats.r_max = stats.r_max.max(s.range_m);
        stats.pi_min = stats.pi_min.min(pi);
        stats.pi_max = stats.pi_max.max(pi);
        stats.class_counts[s.class_id] += 1;
    }
    stats.validate()?;
    Ok(stats)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        Self {
            train: 20_000,
            val: 2_000,
            test: 10_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!(
                "unknown split `{other}` (expected train, val or test)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub classes: Vec<ClassSpec>,
    pub physics: GeneratorConfig,
    pub sizes: SplitSizes,
    pub master_seed: u64,
    /// Optional generator override for the test split. `None` draws the
    /// test split from `physics`.
    pub test_physics: Option<GeneratorConfig>,
    /// Gain change of the test environment in dB, applied to the transmit
    /// constant of the test generator. Negative values give weaker returns
    /// than seen in training; 0 keeps the test split in distribution.
    pub test_gain_db: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            classes: default_class_specs(),
            physics: GeneratorConfig::default(),
            sizes: SplitSizes::default(),
            master_seed: 20_210_901,
            test_physics: None,
            test_gain_db: DEFAULT_TEST_GAIN_DB,
        }
    }
}

impl DatasetConfig {
    /// Generator of the test split: `test_physics` (or `physics`) with the
    /// transmit constant scaled by `test_gain_db`.
    pub fn effective_test_physics(&self) -> GeneratorConfig {
        let mut physics = self
            .test_physics
            .clone()
            .unwrap_or_else(|| self.physics.clone());
        physics.transmit_constant *= 10f64.powf(self.test_gain_db / 10.0);
        physics
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    /// Checks the config, naming the offending field path on failure.
    pub fn validate(&self, field: &str) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::config(
                format!("{field}.classes"),
                "at least one class is required",
            ));
        }
        for (i, c) in self.classes.iter().enumerate() {
            let cfield = format!("{field}.classes[{i}]");
            c.validate(&cfield)?;
            if c.class_id != i {
                return Err(Error::config(
                    format!("{cfield}.class_id"),
                    format!(
                        "class ids must be 0..C in order, found {} at {i}",
                        c.class_id
                    ),
                ));
            }
        }
        self.physics.validate(&format!("{field}.physics"))?;
        if !self.test_gain_db.is_finite() {
            return Err(Error::config(
                format!("{field}.test_gain_db"),
                "must be finite",
            ));
        }
        if let Some(tp) = &self.test_physics {
            tp.validate(&format!("{field}.test_physics"))?;
            if tp.height != self.physics.height || tp.width != self.physics.width {
                return Err(Error::config(
                    format!("{field}.test_physics"),
                    "test grid size must match the training grid",
                ));
            }
        }
        for (name, n) in [
            ("train", self.sizes.train),
            ("val", self.sizes.val),
            ("test", self.sizes.test),
        ] {
            if n == 0 {
                return Err(Error::config(
                    format!("{field}.sizes.{name}"),
                    "split sizes must be positive",
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub train: Vec<RoiSample>,
    pub val: Vec<RoiSample>,
    pub test: Vec<RoiSample>,
}

impl Dataset {
    pub fn n_classes(&self) -> usize {
        self.config.n_classes()
    }

    pub fn split(&self, split: Split) -> &[RoiSample] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn stats(&self) -> Result<DatasetStats> {
        dataset_stats(&self.train, self.n_classes())
    }
}

/// Draws one sample by id. Class, range and pixels all derive from
/// `(master_seed, sample_id)`, so samples can be generated in any order.
fn sample_by_id(config: &DatasetConfig, physics: &GeneratorConfig, id: u64) -> Result<RoiSample> {
    let mut rng = seed::rng_for(config.master_seed, &[stream::SAMPLE, id, 0]);
    let class_id = rng.random_range(0..config.classes.len());
    let [lo, hi] = physics.range_interval_m;
    let range_m = lo + (hi - lo) * rng.random::<f64>();
    let pixel_seed = seed::derive(config.master_seed, &[stream::SAMPLE, id, 1]);
    let mut sample = generate_sample(&config.classes[class_id], range_m, physics, pixel_seed)?;
    sample.sample_id = id;
    Ok(sample)
}

/// Generates train, validation and test splits. Sample ids are consecutive
/// across the splits (train first), so the splits are disjoint by id.
pub fn generate_dataset(config: &DatasetConfig) -> Result<Dataset> {
    if config.classes.is_empty() {
        return Err(Error::invalid("no class specs given"));
    }
    config
        .validate("dataset")
        .map_err(|e| Error::invalid(e.to_string()))?;

    let sizes = config.sizes;
    let test_physics = config.effective_test_physics();
    let spans = [
        (0, sizes.train, &config.physics),
        (sizes.train, sizes.val, &config.physics),
        (sizes.train + sizes.val, sizes.test, &test_physics),
    ];
    let mut splits = spans.into_iter().map(|(start, len, physics)| {
        (start as u64..(start + len) as u64)
            .into_par_iter()
            .map(|id| sample_by_id(config, physics, id))
            .collect::<Result<Vec<_>>>()
    });
    let train = splits.next().expect("three splits")?;
    let val = splits.next().expect("three splits")?;
    let test = splits.next().expect("three splits")?;

    Ok(Dataset {
        config: config.clone(),
        train,
        val,
        test,
    })
}
