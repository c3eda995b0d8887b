//! Dense ReLU network with a softmax head and soft-target cross-entropy.
//!
//! Weights of layer `l` are stored as a `(fan_in, fan_out)` matrix so a batch
//! of row vectors propagates as `X W + b`.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use crate::error::{Error, Result};
use crate::labels::SoftLabel;

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layer_dims: Vec<usize>,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
}

/// Parameter-shaped gradient (or momentum) buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Self {
            weights: mlp
                .weights
                .iter()
                .map(|w| Array2::zeros(w.raw_dim()))
                .collect(),
            biases: mlp
                .biases
                .iter()
                .map(|b| Array1::zeros(b.raw_dim()))
                .collect(),
        }
    }

    /// Flattened view in parameter order: per layer, weights row-major then
    /// biases.
    pub fn flatten(&self) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
            .collect()
    }
}

impl Mlp {
    /// Uniform `(-s, s)` initialisation with `s = init_scale / sqrt(fan_in)`;
    /// biases start at zero.
    pub fn init(layer_dims: &[usize], init_scale: f64, rng: &mut impl Rng) -> Result<Self> {
        check_dims(layer_dims)?;
        let mut weights = Vec::with_capacity(layer_dims.len() - 1);
        let mut biases = Vec::with_capacity(layer_dims.len() - 1);
        for pair in layer_dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let s = init_scale / (fan_in as f64).sqrt();
            weights.push(Array2::from_shape_simple_fn((fan_in, fan_out), || {
                rng.random_range(-s..s)
            }));
            biases.push(Array1::zeros(fan_out));
        }
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
        })
    }

    pub fn zeros(layer_dims: &[usize]) -> Result<Self> {
        check_dims(layer_dims)?;
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            weights: layer_dims
                .windows(2)
                .map(|p| Array2::zeros((p[0], p[1])))
                .collect(),
            biases: layer_dims.windows(2).map(|p| Array1::zeros(p[1])).collect(),
        })
    }

    /// Rebuilds a network from row-major `(fan_in, fan_out)` weight arrays.
    pub fn from_parts(
        layer_dims: &[usize],
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
    ) -> Result<Self> {
        check_dims(layer_dims)?;
        let n = layer_dims.len() - 1;
        if weights.len() != n || biases.len() != n {
            return Err(Error::invalid(format!(
                "expected {n} weight and bias arrays"
            )));
        }
        let mut ws = Vec::with_capacity(n);
        let mut bs = Vec::with_capacity(n);
        for (l, (w, b)) in weights.into_iter().zip(biases).enumerate() {
            let (fi, fo) = (layer_dims[l], layer_dims[l + 1]);
            let w = Array2::from_shape_vec((fi, fo), w)
                .map_err(|e| Error::invalid(format!("layer {l} weights: {e}")))?;
            if b.len() != fo {
                return Err(Error::invalid(format!(
                    "layer {l} bias has {} entries, expected {fo}",
                    b.len()
                )));
            }
            ws.push(w);
            bs.push(Array1::from(b));
        }
        let mlp = Self {
            layer_dims: layer_dims.to_vec(),
            weights: ws,
            biases: bs,
        };
        if !mlp.is_finite() {
            return Err(Error::invalid("parameters must be finite"));
        }
        Ok(mlp)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn n_classes(&self) -> usize {
        *self.layer_dims.last().expect("at least two layers")
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Array1<f64>] {
        &mut self.biases
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Parameters flattened in the same order as [`Gradients::flatten`].
    pub fn flatten(&self) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
            .collect()
    }

    /// Mutable access to parameter `index` in flattened order.
    pub fn param_mut(&mut self, mut index: usize) -> &mut f64 {
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            if index < w.len() {
                return w.iter_mut().nth(index).expect("in bounds");
            }
            index -= w.len();
            if index < b.len() {
                return &mut b[index];
            }
            index -= b.len();
        }
        panic!("parameter index out of range");
    }

    /// `params -= lr * grads` style update: `self += scale * delta`.
    pub fn add_scaled(&mut self, scale: f64, delta: &Gradients) {
        for (w, d) in self.weights.iter_mut().zip(&delta.weights) {
            w.scaled_add(scale, d);
        }
        for (b, d) in self.biases.iter_mut().zip(&delta.biases) {
            b.scaled_add(scale, d);
        }
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_dim() {
            return Err(Error::invalid(format!(
                "feature dimension {cols} does not match network input {}",
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Hidden activations for a batch; the last element holds the logits.
    fn activations(&self, x: ArrayView2<f64>) -> Vec<Array2<f64>> {
        let last = self.weights.len() - 1;
        let mut acts: Vec<Array2<f64>> = Vec::with_capacity(self.weights.len());
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let input = if l == 0 { x } else { acts[l - 1].view() };
            let mut z = input.dot(w);
            z += b;
            if l < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            acts.push(z);
        }
        acts
    }

    pub fn logits_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        Ok(self.activations(x).pop().expect("non-empty"))
    }

    /// Row-wise softmax probabilities for a batch of feature rows.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut logits = self.logits_batch(x)?;
        for mut row in logits.rows_mut() {
            softmax_in_place(row.as_slice_mut().expect("standard layout"));
        }
        Ok(logits)
    }

    pub fn forward(&self, features: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, features.len()), features)
            .map_err(|e| Error::invalid(e.to_string()))?;
        Ok(self.forward_batch(x)?.into_raw_vec_and_offset().0)
    }

    /// Mean soft-target cross-entropy over the batch and its exact gradient.
    pub fn loss_and_grad_batch(
        &self,
        x: ArrayView2<f64>,
        targets: ArrayView2<f64>,
    ) -> Result<(f64, Gradients)> {
        self.check_input(x.ncols())?;
        let batch = x.nrows();
        if batch == 0 || targets.dim() != (batch, self.n_classes()) {
            return Err(Error::invalid(format!(
                "targets have shape {:?}, expected ({batch}, {})",
                targets.dim(),
                self.n_classes()
            )));
        }
        let mut acts = self.activations(x);
        let mut delta = acts.pop().expect("non-empty");
        let inv_b = 1.0 / batch as f64;

        // delta becomes (softmax - target) / B; loss from log-softmax
        let mut loss = 0.0;
        for (mut row, y) in delta.rows_mut().into_iter().zip(targets.rows()) {
            let z = row.as_slice_mut().expect("standard layout");
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let log_norm = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for (zc, &yc) in z.iter_mut().zip(y.iter()) {
                let log_p = *zc - log_norm;
                if yc > 0.0 {
                    loss -= yc * log_p;
                }
                *zc = (log_p.exp() - yc) * inv_b;
            }
        }
        loss *= inv_b;
        if !loss.is_finite() {
            return Err(Error::NumericFailure {
                epoch: 0,
                message: format!("loss is {loss}"),
            });
        }

        let n = self.weights.len();
        let mut grad_w = Vec::with_capacity(n);
        let mut grad_b = Vec::with_capacity(n);
        for l in (0..n).rev() {
            let input = if l == 0 { x } else { acts[l - 1].view() };
            grad_w.push(input.t().dot(&delta));
            grad_b.push(delta.sum_axis(Axis(0)));
            if l > 0 {
                let mut back = delta.dot(&self.weights[l].t());
                Zip::from(&mut back).and(&acts[l - 1]).for_each(|d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = back;
            }
        }
        grad_w.reverse();
        grad_b.reverse();
        Ok((
            loss,
            Gradients {
                weights: grad_w,
                biases: grad_b,
            },
        ))
    }

    /// Single-example loss and gradient.
    pub fn loss_and_grad(&self, features: &[f64], target: &SoftLabel) -> Result<(f64, Gradients)> {
        let x = ArrayView2::from_shape((1, features.len()), features)
            .map_err(|e| Error::invalid(e.to_string()))?;
        let y = ArrayView2::from_shape((1, target.probs.len()), &target.probs)
            .map_err(|e| Error::invalid(e.to_string()))?;
        self.loss_and_grad_batch(x, y)
    }
}

fn check_dims(layer_dims: &[usize]) -> Result<()> {
    if layer_dims.len() < 2 || layer_dims.contains(&0) {
        return Err(Error::invalid(format!(
            "layer dims must list at least input and output sizes, all positive; got {layer_dims:?}"
        )));
    }
    Ok(())
}

/// Max-subtracted softmax.
pub fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, proptest, ProptestConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    }

    #[test]
    fn zero_network_predicts_uniform() {
        let mlp = Mlp::zeros(&[5, 4, 7]).unwrap();
        let p = mlp.forward(&[0.3, -1.0, 2.0, 0.0, 9.0]).unwrap();
        for v in p {
            assert!((v - 1.0 / 7.0).abs() < 1e-15);
        }
    }

    #[test]
    fn final_bias_shift_leaves_probs_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut mlp = Mlp::init(&[6, 8, 8, 7], 2.0, &mut rng).unwrap();
        let x: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
        let before = mlp.forward(&x).unwrap();
        let last = mlp.biases_mut().last_mut().unwrap();
        *last += 13.7;
        let after = mlp.forward(&x).unwrap();
        for (a, b) in before.iter().zip(&after) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_is_invalid_argument() {
        let mlp = Mlp::zeros(&[4, 3]).unwrap();
        assert!(matches!(
            mlp.forward(&[1.0, 2.0]),
            Err(Error::InvalidArgument(_))
        ));
        let target = SoftLabel::one_hot(0, 5);
        assert!(mlp.loss_and_grad(&[0.0; 4], &target).is_err());
    }

    #[test]
    fn uniform_prediction_one_hot_target_costs_ln_c() {
        let mlp = Mlp::zeros(&[3, 7]).unwrap();
        let (loss, _) = mlp
            .loss_and_grad(&[1.0, 2.0, 3.0], &SoftLabel::one_hot(2, 7))
            .unwrap();
        assert!((loss - 7f64.ln()).abs() < 1e-14);
        assert!((loss - 1.945_910_1).abs() < 1e-7);
    }

    #[test]
    fn confident_correct_logits_drive_loss_to_zero() {
        let mut mlp = Mlp::zeros(&[1, 3]).unwrap();
        mlp.biases_mut()[0][1] = 60.0;
        let (loss, _) = mlp
            .loss_and_grad(&[0.0], &SoftLabel::one_hot(1, 3))
            .unwrap();
        assert!(loss < 1e-20, "{loss}");
    }

    #[test]
    fn logit_gradient_is_p_minus_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut mlp = Mlp::zeros(&[1, 5]).unwrap();
        for j in 0..5 {
            mlp.biases_mut()[0][j] = rng.random_range(-1.0..1.0);
        }
        let target = SoftLabel {
            probs: random_simplex(&mut rng, 5),
        };
        let p = mlp.forward(&[0.0]).unwrap();
        let (_, g) = mlp.loss_and_grad(&[0.0], &target).unwrap();
        for j in 0..5 {
            assert!((g.biases[0][j] - (p[j] - target.probs[j])).abs() < 1e-15);
        }
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.1, 0.3, 0.6]), 2);
    }

    #[test]
    fn random_networks_output_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let mlp = Mlp::init(&[4, 6, 7], 3.0, &mut rng).unwrap();
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-5.0..5.0)).collect();
            let p = mlp.forward(&x).unwrap();
            let s: f64 = p.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        /// Cross-entropy minus target entropy is a KL divergence.
        #[test]
        fn loss_bounded_below_by_target_entropy(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = rng.random_range(2..9);
            let mut mlp = Mlp::zeros(&[1, c]).unwrap();
            for j in 0..c {
                mlp.biases_mut()[0][j] = rng.random_range(-4.0..4.0);
            }
            let target = SoftLabel { probs: random_simplex(&mut rng, c) };
            let (loss, _) = mlp.loss_and_grad(&[0.0], &target).unwrap();
            prop_assert!(loss - target.entropy() >= -1e-12);
        }
    }

    #[test]
    fn loss_equals_entropy_when_prediction_matches_target() {
        let target = SoftLabel {
            probs: vec![0.7, 0.2, 0.1],
        };
        let mut mlp = Mlp::zeros(&[1, 3]).unwrap();
        for (j, p) in target.probs.iter().enumerate() {
            mlp.biases_mut()[0][j] = p.ln();
        }
        let (loss, _) = mlp.loss_and_grad(&[0.0], &target).unwrap();
        assert!((loss - target.entropy()).abs() < 1e-14);
    }
}
