//! Feedforward softmax classifier over ROI pixels.

mod mlp;
mod train;

pub use mlp::{argmax, softmax_in_place, Gradients, Mlp};
pub use train::{
    multi_seed_train, run_seed, train, EpochLog, ModelFile, SgdMomentum, TrainConfig, TrainLog,
    TrainedModel,
};

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::{mean_power, RoiSample};

/// One evaluated sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub probs: Vec<f64>,
    pub predicted_class: usize,
    pub true_class: usize,
    pub range_m: f64,
    pub mean_power: f64,
}

impl PredictionRecord {
    pub fn new(probs: Vec<f64>, true_class: usize, range_m: f64, mean_power: f64) -> Self {
        let predicted_class = argmax(&probs);
        Self {
            probs,
            predicted_class,
            true_class,
            range_m,
            mean_power,
        }
    }

    /// Maximum predicted class probability.
    pub fn confidence(&self) -> f64 {
        self.probs[self.predicted_class]
    }

    pub fn is_correct(&self) -> bool {
        self.predicted_class == self.true_class
    }
}

/// Log-scale per-pixel standardisation fitted on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNorm {
    /// Added before `log10` so noise-only pixels near zero stay bounded.
    pub floor_offset: f64,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

fn log_pixels(sample: &RoiSample, floor_offset: f64) -> impl Iterator<Item = f64> + '_ {
    sample
        .pixels
        .iter()
        .map(move |p| (p + floor_offset).log10())
}

impl FeatureNorm {
    pub fn fit(train: &[RoiSample], floor_offset: f64) -> Result<Self> {
        let first = train
            .first()
            .ok_or_else(|| Error::invalid("cannot fit features on an empty split"))?;
        if !(floor_offset >= 0.0 && floor_offset.is_finite()) {
            return Err(Error::invalid("feature floor offset must be >= 0"));
        }
        let dim = first.pixels.len();
        let n = train.len() as f64;
        let mut sum = vec![0.0; dim];
        let mut sum_sq = vec![0.0; dim];
        for s in train {
            if s.pixels.len() != dim {
                return Err(Error::invalid("samples have differing pixel counts"));
            }
            for ((acc, acc2), v) in sum
                .iter_mut()
                .zip(sum_sq.iter_mut())
                .zip(log_pixels(s, floor_offset))
            {
                *acc += v;
                *acc2 += v * v;
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sum_sq
            .iter()
            .zip(&mean)
            .map(|(s2, m)| {
                let var = (s2 / n - m * m).max(0.0);
                // constant pixels: leave them centred but unscaled
                if var > 1e-24 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self {
            floor_offset,
            mean,
            std,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn write_features(&self, sample: &RoiSample, out: &mut [f64]) {
        for (((o, v), m), s) in out
            .iter_mut()
            .zip(log_pixels(sample, self.floor_offset))
            .zip(&self.mean)
            .zip(&self.std)
        {
            *o = (v - m) / s;
        }
    }
}

/// `(log10(pixel + offset) - mean) / std`, per pixel.
pub fn featurize(sample: &RoiSample, norm: &FeatureNorm) -> Result<Vec<f64>> {
    if sample.pixels.len() != norm.dim() {
        return Err(Error::invalid(format!(
            "sample has {} pixels, features expect {}",
            sample.pixels.len(),
            norm.dim()
        )));
    }
    let mut out = vec![0.0; norm.dim()];
    norm.write_features(sample, &mut out);
    Ok(out)
}

/// Features for a batch of samples as rows of a matrix.
pub fn featurize_batch(samples: &[&RoiSample], norm: &FeatureNorm) -> Result<Array2<f64>> {
    let dim = norm.dim();
    let mut x = Array2::zeros((samples.len(), dim));
    for (mut row, s) in x.rows_mut().into_iter().zip(samples) {
        if s.pixels.len() != dim {
            return Err(Error::invalid(format!(
                "sample {} has {} pixels, features expect {dim}",
                s.sample_id,
                s.pixels.len()
            )));
        }
        norm.write_features(s, row.as_slice_mut().expect("standard layout"));
    }
    Ok(x)
}

const PREDICT_CHUNK: usize = 512;

/// One record per sample, in input order.
pub fn predict_all(
    params: &Mlp,
    samples: &[RoiSample],
    norm: &FeatureNorm,
) -> Result<Vec<PredictionRecord>> {
    if norm.dim() != params.input_dim() {
        return Err(Error::invalid(format!(
            "feature dimension {} does not match network input {}",
            norm.dim(),
            params.input_dim()
        )));
    }
    let chunks: Vec<Vec<PredictionRecord>> = samples
        .par_chunks(PREDICT_CHUNK)
        .map(|chunk| {
            let refs: Vec<&RoiSample> = chunk.iter().collect();
            let x = featurize_batch(&refs, norm)?;
            let probs = params.forward_batch(x.view())?;
            Ok(chunk
                .iter()
                .zip(probs.rows())
                .map(|(s, p)| {
                    PredictionRecord::new(p.to_vec(), s.class_id, s.range_m, mean_power(s))
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_dataset, DatasetConfig, SplitSizes};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_dataset() -> crate::synth::Dataset {
        generate_dataset(&DatasetConfig {
            sizes: SplitSizes {
                train: 60,
                val: 10,
                test: 30,
            },
            ..DatasetConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn sample_at_the_mean_featurizes_to_zero() {
        let ds = small_dataset();
        let norm = FeatureNorm::fit(&ds.train, 0.1).unwrap();
        let mut s = ds.train[0].clone();
        s.pixels = norm.mean.iter().map(|m| 10f64.powf(*m) - 0.1).collect();
        for f in featurize(&s, &norm).unwrap() {
            assert!(f.abs() < 1e-9, "{f}");
        }
    }

    #[test]
    fn tenfold_power_shifts_features_by_inverse_std() {
        let ds = small_dataset();
        let norm = FeatureNorm::fit(&ds.train, 0.0).unwrap();
        let a = ds.test[0].clone();
        let mut b = a.clone();
        b.pixels.iter_mut().for_each(|p| *p *= 10.0);
        let fa = featurize(&a, &norm).unwrap();
        let fb = featurize(&b, &norm).unwrap();
        for ((x, y), s) in fa.iter().zip(&fb).zip(&norm.std) {
            assert!((y - x - 1.0 / s).abs() < 1e-9);
        }
    }

    #[test]
    fn featurize_is_deterministic() {
        let ds = small_dataset();
        let norm = FeatureNorm::fit(&ds.train, 0.1).unwrap();
        assert_eq!(
            featurize(&ds.val[3], &norm).unwrap(),
            featurize(&ds.val[3], &norm).unwrap()
        );
    }

    #[test]
    fn predict_all_composes_featurize_and_forward() {
        let ds = small_dataset();
        let norm = FeatureNorm::fit(&ds.train, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mlp = Mlp::init(&[256, 16, 7], 2.0, &mut rng).unwrap();
        assert!(predict_all(&mlp, &[], &norm).unwrap().is_empty());

        let one = predict_all(&mlp, &ds.test[..1], &norm).unwrap();
        let direct = mlp
            .forward(&featurize(&ds.test[0], &norm).unwrap())
            .unwrap();
        assert_eq!(one.len(), 1);
        for (a, b) in one[0].probs.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-14);
        }
        assert_eq!(one[0].true_class, ds.test[0].class_id);
        assert_eq!(one[0].range_m, ds.test[0].range_m);

        let bad = Mlp::zeros(&[100, 7]).unwrap();
        assert!(matches!(
            predict_all(&bad, &ds.test, &norm),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn many_records_satisfy_invariants() {
        let ds = generate_dataset(&DatasetConfig {
            sizes: SplitSizes {
                train: 200,
                val: 10,
                test: 10_000,
            },
            ..DatasetConfig::default()
        })
        .unwrap();
        let norm = FeatureNorm::fit(&ds.train, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mlp = Mlp::init(&[256, 32, 32, 7], 2.4, &mut rng).unwrap();
        let records = predict_all(&mlp, &ds.test, &norm).unwrap();
        assert_eq!(records.len(), 10_000);
        for (r, s) in records.iter().zip(&ds.test) {
            let sum: f64 = r.probs.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert_eq!(r.predicted_class, argmax(&r.probs));
            assert_eq!(r.true_class, s.class_id);
        }
    }
}
