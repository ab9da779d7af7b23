//! Fully connected ReLU classifiers with hand-written backpropagation.

mod format;
mod shape;

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

pub use format::{load_model, save_model, FORMAT_VERSION};
pub use shape::{make_submodel_shape, WidthSchedule};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, ParamView, Vector};

/// One dense layer; `weight` is `out × in`, one row per output neuron.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vector,
}

impl Layer {
    pub fn new(weight: Matrix, bias: Vector) -> Result<Self> {
        if weight.rows() != bias.len() {
            return Err(Error::ShapeMismatch {
                op: "Layer::new",
                left: weight.shape(),
                right: (bias.len(), 1),
            });
        }
        Ok(Self { weight, bias })
    }

    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weight: Matrix::zeros(out_dim, in_dim),
            bias: Vector::zeros(out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    /// Weight rows with the bias appended as a last column.
    pub fn augmented(&self) -> Matrix {
        self.weight
            .with_column(self.bias.as_slice())
            .expect("layer invariant")
    }
}

/// An MLP: ReLU after every layer except the last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStack {
    layers: Vec<Layer>,
}

impl LayerStack {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::LayerCount {
                op: "LayerStack::new",
                left: 0,
                right: 1,
            });
        }
        for (l, pair) in layers.windows(2).enumerate() {
            if pair[1].in_dim() != pair[0].out_dim() {
                return Err(Error::ShapeMismatch {
                    op: "LayerStack::new",
                    left: pair[0].weight.shape(),
                    right: pair[1].weight.shape(),
                })
                .map_err(|e| e.at_layer(l + 1));
            }
        }
        Ok(Self { layers })
    }

    /// Kaiming-uniform weights (bound `sqrt(6 / fan_in)`), zero biases.
    pub fn init(dims: &[usize], rng: &mut impl Rng) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let layers = dims
            .windows(2)
            .map(|d| {
                let (fan_in, fan_out) = (d[0], d[1]);
                let bound = (6.0 / fan_in as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                Layer {
                    weight: Matrix::from_fn(fan_out, fan_in, |_, _| dist.sample(rng)),
                    bias: Vector::zeros(fan_out),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self {
            layers: dims.windows(2).map(|d| Layer::zeros(d[1], d[0])).collect(),
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn into_layers(self) -> Vec<Layer> {
        self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// `[d_0, d_1, ..., d_L]`.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].in_dim())
            .chain(self.layers.iter().map(Layer::out_dim))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.rows() * (l.weight.cols() + 1))
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.is_finite() && l.bias.0.iter().all(|v| v.is_finite()))
    }

    pub fn same_shape(&self, other: &LayerStack) -> bool {
        self.dims() == other.dims()
    }

    fn check_same(&self, op: &'static str, other: &LayerStack) -> Result<()> {
        if self.depth() != other.depth() {
            return Err(Error::LayerCount {
                op,
                left: self.depth(),
                right: other.depth(),
            });
        }
        for (a, b) in self.layers.iter().zip(&other.layers) {
            if a.weight.shape() != b.weight.shape() {
                return Err(Error::ShapeMismatch {
                    op,
                    left: a.weight.shape(),
                    right: b.weight.shape(),
                });
            }
        }
        Ok(())
    }

    /// Parameterwise `a * self + b * other`.
    pub fn lincomb(&self, a: f64, other: &LayerStack, b: f64) -> Result<LayerStack> {
        self.check_same("lincomb", other)?;
        let layers = self
            .layers
            .iter()
            .zip(&other.layers)
            .map(|(x, y)| {
                Ok(Layer {
                    weight: x.weight.lincomb(a, &y.weight, b)?,
                    bias: Vector(
                        x.bias
                            .0
                            .iter()
                            .zip(&y.bias.0)
                            .map(|(p, q)| a * p + b * q)
                            .collect(),
                    ),
                })
            })
            .collect::<Result<_>>()?;
        Ok(LayerStack { layers })
    }

    /// In-place `self += scale * other`.
    pub fn add_scaled(&mut self, other: &LayerStack, scale: f64) -> Result<()> {
        self.check_same("add_scaled", other)?;
        for (x, y) in self.layers.iter_mut().zip(&other.layers) {
            for (p, q) in x.weight.as_mut_slice().iter_mut().zip(y.weight.as_slice()) {
                *p += scale * q;
            }
            for (p, q) in x.bias.0.iter_mut().zip(&y.bias.0) {
                *p += scale * q;
            }
        }
        Ok(())
    }

    /// Largest absolute parameter difference.
    pub fn max_abs_diff(&self, other: &LayerStack) -> Result<f64> {
        self.check_same("max_abs_diff", other)?;
        let mut worst = 0.0f64;
        for (x, y) in self.segments().into_iter().zip(other.segments()) {
            for (p, q) in x.iter().zip(y) {
                worst = worst.max((p - q).abs());
            }
        }
        Ok(worst)
    }
}

impl ParamView for LayerStack {
    fn segments(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }
}

/// Features with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub features: Matrix,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(features: Matrix, labels: Vec<usize>) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::ShapeMismatch {
                op: "Batch::new",
                left: features.shape(),
                right: (labels.len(), 1),
            });
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Rows selected by index, in the given order.
    pub fn subset(&self, idx: &[usize]) -> Batch {
        let cols = self.features.cols();
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            data.extend_from_slice(self.features.row(i));
        }
        Batch {
            features: Matrix::new(idx.len(), cols, data).expect("finite rows"),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

fn affine(layer: &Layer, input: &Matrix) -> Matrix {
    Matrix::from_fn(input.rows(), layer.out_dim(), |b, o| {
        let mut z = layer.bias[o];
        for (x, w) in input.row(b).iter().zip(layer.weight.row(o)) {
            z += x * w;
        }
        z
    })
}

fn relu(m: &Matrix) -> Matrix {
    m.map(|v| v.max(0.0))
}

pub fn forward(model: &LayerStack, features: &Matrix) -> Result<Matrix> {
    if features.cols() != model.input_dim() {
        return Err(Error::ShapeMismatch {
            op: "forward",
            left: features.shape(),
            right: model.layers[0].weight.shape(),
        });
    }
    let last = model.depth() - 1;
    let mut act = features.clone();
    for (l, layer) in model.layers.iter().enumerate() {
        let z = affine(layer, &act);
        act = if l == last { z } else { relu(&z) };
    }
    Ok(act)
}

fn check_labels(batch: &Batch, classes: usize) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if let Some(&label) = batch.labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    Ok(())
}

/// Row-wise softmax with max subtraction; also returns per-row log-sum-exp.
fn softmax_rows(logits: &Matrix) -> (Matrix, Vec<f64>) {
    let mut probs = logits.clone();
    let mut lse = Vec::with_capacity(logits.rows());
    for b in 0..logits.rows() {
        let row = probs.row_mut(b);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            s += *v;
        }
        row.iter_mut().for_each(|v| *v /= s);
        lse.push(max + s.ln());
    }
    (probs, lse)
}

/// Mean cross-entropy of the softmax of the logits.
pub fn ce_loss(model: &LayerStack, batch: &Batch) -> Result<f64> {
    check_labels(batch, model.output_dim())?;
    let logits = forward(model, &batch.features)?;
    let (_, lse) = softmax_rows(&logits);
    let total: f64 = batch
        .labels
        .iter()
        .enumerate()
        .map(|(b, &y)| lse[b] - logits[(b, y)])
        .sum();
    Ok(total / batch.len() as f64)
}

/// Mean cross-entropy and its gradient with respect to every parameter.
pub fn ce_loss_and_grads(model: &LayerStack, batch: &Batch) -> Result<(f64, LayerStack)> {
    check_labels(batch, model.output_dim())?;
    if batch.features.cols() != model.input_dim() {
        return Err(Error::ShapeMismatch {
            op: "ce_loss_and_grads",
            left: batch.features.shape(),
            right: model.layers[0].weight.shape(),
        });
    }
    let n = batch.len() as f64;
    let last = model.depth() - 1;

    // activations[l] is the input to layer l; pre[l] its pre-activation output
    let mut activations = Vec::with_capacity(model.depth());
    let mut pre = Vec::with_capacity(model.depth());
    let mut act = batch.features.clone();
    for (l, layer) in model.layers.iter().enumerate() {
        let z = affine(layer, &act);
        let next = if l == last { z.clone() } else { relu(&z) };
        activations.push(act);
        pre.push(z);
        act = next;
    }
    let logits = act;
    let (probs, lse) = softmax_rows(&logits);
    let loss = batch
        .labels
        .iter()
        .enumerate()
        .map(|(b, &y)| lse[b] - logits[(b, y)])
        .sum::<f64>()
        / n;

    let mut delta = probs;
    for (b, &y) in batch.labels.iter().enumerate() {
        delta[(b, y)] -= 1.0;
    }
    delta = delta.scale(1.0 / n);

    let mut grads: Vec<Layer> = Vec::with_capacity(model.depth());
    for l in (0..model.depth()).rev() {
        let layer = &model.layers[l];
        let input = &activations[l];
        let weight = crate::linalg::matmul_tn(&delta, input)?;
        let bias = Vector(delta.col_sums());
        if l > 0 {
            let mut back = crate::linalg::matmul(&delta, &layer.weight)?;
            let z_prev = &pre[l - 1];
            for (d, z) in back.as_mut_slice().iter_mut().zip(z_prev.as_slice()) {
                if *z <= 0.0 {
                    *d = 0.0;
                }
            }
            delta = back;
        }
        grads.push(Layer { weight, bias });
    }
    grads.reverse();
    Ok((loss, LayerStack { layers: grads }))
}

/// `model − lr · grads`.
pub fn sgd_step(model: &LayerStack, grads: &LayerStack, lr: f64) -> Result<LayerStack> {
    if !(lr > 0.0) {
        return Err(Error::InvalidConfig {
            field: "lr",
            reason: format!("must be > 0, got {lr}"),
        });
    }
    let mut next = model.clone();
    next.add_scaled(grads, -lr)?;
    Ok(next)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of samples whose argmax logit equals the label.
pub fn evaluate(model: &LayerStack, data: &Batch) -> Result<f64> {
    check_labels(data, model.output_dim())?;
    let logits = forward(model, &data.features)?;
    let correct = data
        .labels
        .iter()
        .enumerate()
        .filter(|(b, &y)| argmax(logits.row(*b)) == y)
        .count();
    Ok(correct as f64 / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_batch(n: usize, dim: usize, classes: usize, rng: &mut ChaCha8Rng) -> Batch {
        Batch {
            features: Matrix::from_fn(n, dim, |_, _| rng.random_range(-1.0..1.0)),
            labels: (0..n).map(|_| rng.random_range(0..classes)).collect(),
        }
    }

    /// Straight scalar loops, no shared helpers with `forward`.
    fn reference_forward(model: &LayerStack, x: &[f64]) -> Vec<f64> {
        let mut act = x.to_vec();
        let last = model.depth() - 1;
        for (l, layer) in model.layers().iter().enumerate() {
            let mut out = vec![0.0; layer.out_dim()];
            for o in 0..layer.out_dim() {
                let mut z = layer.bias[o];
                for i in 0..layer.in_dim() {
                    z += layer.weight[(o, i)] * act[i];
                }
                out[o] = if l == last { z } else { z.max(0.0) };
            }
            act = out;
        }
        act
    }

    #[test]
    fn zero_model_gives_zero_logits() {
        let model = LayerStack::zeros(&[3, 4, 2]);
        let x = Matrix::filled(5, 3, 0.7);
        assert_eq!(forward(&model, &x).unwrap(), Matrix::zeros(5, 2));
    }

    #[test]
    fn identity_layer_passes_features() {
        let model = LayerStack::new(vec![Layer {
            weight: Matrix::identity(3),
            bias: Vector::zeros(3),
        }])
        .unwrap();
        let x = Matrix::from_rows(&[[1.0, -2.0, 3.0], [0.5, 0.0, -0.5]]);
        assert_eq!(forward(&model, &x).unwrap(), x);
    }

    #[test]
    fn forward_matches_scalar_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut model = LayerStack::init(&[4, 6, 3], &mut rng);
        for layer in model.layers_mut() {
            layer.bias = Vector((0..layer.out_dim()).map(|_| rng.random_range(-0.5..0.5)).collect());
        }
        let batch = random_batch(7, 4, 3, &mut rng);
        let logits = forward(&model, &batch.features).unwrap();
        for b in 0..7 {
            let r = reference_forward(&model, batch.features.row(b));
            for c in 0..3 {
                assert!((logits[(b, c)] - r[c]).abs() < 1e-12);
            }
        }
        assert!(forward(&model, &Matrix::zeros(2, 5)).is_err());
    }

    #[test]
    fn uniform_logits_loss_is_log_classes() {
        let model = LayerStack::zeros(&[3, 5]);
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let batch = random_batch(4, 3, 5, &mut rng);
        let (loss, _) = ce_loss_and_grads(&model, &batch).unwrap();
        assert!((loss - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn saturated_softmax_has_near_zero_loss() {
        let model = LayerStack::new(vec![Layer {
            weight: Matrix::identity(3).scale(100.0),
            bias: Vector::zeros(3),
        }])
        .unwrap();
        let batch = Batch::new(Matrix::identity(3), vec![0, 1, 2]).unwrap();
        let (loss, _) = ce_loss_and_grads(&model, &batch).unwrap();
        assert!(loss < 1e-6);
        assert_eq!(evaluate(&model, &batch).unwrap(), 1.0);
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let mut model = LayerStack::init(&[3, 4, 4, 3], &mut rng);
        for layer in model.layers_mut() {
            layer.bias = Vector((0..layer.out_dim()).map(|_| rng.random_range(-0.3..0.3)).collect());
        }
        let batch = random_batch(6, 3, 3, &mut rng);
        let (_, grads) = ce_loss_and_grads(&model, &batch).unwrap();
        let h = 1e-5;
        for l in 0..model.depth() {
            let (rows, cols) = model.layers()[l].weight.shape();
            for i in 0..rows {
                for j in 0..=cols {
                    let perturb = |delta: f64| {
                        let mut m = model.clone();
                        let layer = &mut m.layers_mut()[l];
                        if j < cols {
                            layer.weight[(i, j)] += delta;
                        } else {
                            layer.bias.0[i] += delta;
                        }
                        ce_loss(&m, &batch).unwrap()
                    };
                    let numeric = (perturb(h) - perturb(-h)) / (2.0 * h);
                    let analytic = if j < cols {
                        grads.layers()[l].weight[(i, j)]
                    } else {
                        grads.layers()[l].bias[i]
                    };
                    let scale = numeric.abs().max(analytic.abs()).max(1e-6);
                    assert!(
                        (numeric - analytic).abs() / scale < 1e-4,
                        "layer {l} ({i},{j}): {numeric} vs {analytic}"
                    );
                }
            }
        }
    }

    #[test]
    fn empty_batch_rejected() {
        let model = LayerStack::zeros(&[2, 2]);
        let batch = Batch::new(Matrix::zeros(0, 2), vec![]).unwrap();
        assert!(matches!(ce_loss_and_grads(&model, &batch), Err(Error::EmptyBatch)));
        assert!(matches!(evaluate(&model, &batch), Err(Error::EmptyBatch)));
    }

    #[test]
    fn sgd_step_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let model = LayerStack::init(&[3, 4, 2], &mut rng);
        let zero = LayerStack::zeros(&[3, 4, 2]);
        assert_eq!(sgd_step(&model, &zero, 0.1).unwrap(), model);
        assert_eq!(sgd_step(&model, &model, 1.0).unwrap(), zero);

        let grads = LayerStack::init(&[3, 4, 2], &mut rng);
        let once = sgd_step(&model, &grads, 0.5).unwrap();
        let twice = sgd_step(&sgd_step(&model, &grads, 0.25).unwrap(), &grads, 0.25).unwrap();
        assert!(once.max_abs_diff(&twice).unwrap() < 1e-15);

        assert!(sgd_step(&model, &LayerStack::zeros(&[3, 5, 2]), 0.1).is_err());
        assert!(sgd_step(&model, &zero, 0.0).is_err());
    }

    #[test]
    fn constant_logits_pick_lowest_class() {
        let model = LayerStack::zeros(&[2, 4]);
        let labels: Vec<usize> = (0..8).map(|i| i % 4).collect();
        let batch = Batch::new(Matrix::filled(8, 2, 1.0), labels).unwrap();
        assert_eq!(evaluate(&model, &batch).unwrap(), 0.25);
    }

    #[test]
    fn evaluate_matches_reference_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let model = LayerStack::init(&[5, 8, 4], &mut rng);
        let batch = random_batch(50, 5, 4, &mut rng);
        let mut correct = 0;
        for b in 0..50 {
            let r = reference_forward(&model, batch.features.row(b));
            let mut best = 0;
            for c in 1..4 {
                if r[c] > r[best] {
                    best = c;
                }
            }
            if best == batch.labels[b] {
                correct += 1;
            }
        }
        assert_eq!(evaluate(&model, &batch).unwrap(), correct as f64 / 50.0);
    }

    #[test]
    fn last_layer_homogeneity() {
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        let model = LayerStack::init(&[3, 5, 2], &mut rng);
        let x = Matrix::from_fn(4, 3, |_, _| rng.random_range(-1.0..1.0));
        let mut scaled = model.clone();
        let last = scaled.depth() - 1;
        scaled.layers_mut()[last].weight = model.layers()[last].weight.scale(2.0);
        let a = forward(&model, &x).unwrap();
        let b = forward(&scaled, &x).unwrap();
        assert_eq!(b, a.scale(2.0));
    }
}
