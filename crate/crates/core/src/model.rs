//! Layered classifiers where every layer is one matrix product followed by an
//! entrywise activation. Biases are folded in as an extra constant-1 input row.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{argmax_columns, LabelVector, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Square,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Square => x * x,
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative with respect to the pre-activation `x`.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => {
                let s = self.apply(x);
                s * (1.0 - s)
            }
            Activation::Square => 2.0 * x,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    /// Non-decreasing activations leave the column argmax unchanged.
    pub fn is_monotone(self) -> bool {
        !matches!(self, Activation::Square)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerKind {
    FullyConnected,
    /// Single-channel `height x width` input, `kernel x kernel` filters, stride 1,
    /// no padding. Output features are channel-major.
    ConvAsMatmul {
        height: usize,
        width: usize,
        kernel: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_size: usize,
    pub out_size: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn dense(in_size: usize, out_size: usize, activation: Activation) -> Self {
        LayerSpec { kind: LayerKind::FullyConnected, in_size, out_size, activation }
    }

    pub fn conv(height: usize, width: usize, kernel: usize, channels: usize, activation: Activation) -> Result<Self> {
        if kernel == 0 || kernel > height || kernel > width {
            return Err(Error::Shape(format!("{kernel}x{kernel} kernel on a {height}x{width} image")));
        }
        let positions = (height - kernel + 1) * (width - kernel + 1);
        Ok(LayerSpec {
            kind: LayerKind::ConvAsMatmul { height, width, kernel },
            in_size: height * width,
            out_size: channels * positions,
            activation,
        })
    }

    /// Rows of the weight matrix (`d_out` of the layer's matmul).
    pub fn weight_rows(&self) -> usize {
        match self.kind {
            LayerKind::FullyConnected => self.out_size,
            LayerKind::ConvAsMatmul { .. } => self.out_size / self.positions(),
        }
    }

    /// Columns of the weight matrix, bias included (`d_in` of the layer's matmul).
    pub fn weight_cols(&self) -> usize {
        match self.kind {
            LayerKind::FullyConnected => self.in_size + 1,
            LayerKind::ConvAsMatmul { kernel, .. } => kernel * kernel + 1,
        }
    }

    pub fn positions(&self) -> usize {
        match self.kind {
            LayerKind::FullyConnected => 1,
            LayerKind::ConvAsMatmul { height, width, kernel } => (height - kernel + 1) * (width - kernel + 1),
        }
    }

    /// Columns of the matmul operand per input sample.
    pub fn columns_per_sample(&self) -> usize {
        self.positions()
    }

    /// Builds the right-hand matmul operand from layer input `x` (`in_size x m`).
    /// `bias` fills the constant row: 1 for plaintext or the share holder that
    /// owns the constant, 0 for the other share.
    pub fn linear_operand(&self, x: &Matrix, bias: f64) -> Result<Matrix> {
        if x.rows() != self.in_size {
            return Err(Error::Shape(format!("layer expects {} inputs, got {}", self.in_size, x.rows())));
        }
        match self.kind {
            LayerKind::FullyConnected => {
                let mut data = x.data().to_vec();
                data.extend(std::iter::repeat_n(bias, x.cols()));
                Matrix::from_vec(x.rows() + 1, x.cols(), data)
            }
            LayerKind::ConvAsMatmul { height: _, width, kernel } => {
                let p = self.positions();
                let out_w = width - kernel + 1;
                let m = x.cols();
                let mut b = Matrix::zeros(kernel * kernel + 1, m * p);
                for s in 0..m {
                    for pos in 0..p {
                        let (r0, c0) = (pos / out_w, pos % out_w);
                        let col = s * p + pos;
                        for dr in 0..kernel {
                            for dc in 0..kernel {
                                b.set(dr * kernel + dc, col, x.get((r0 + dr) * width + c0 + dc, s));
                            }
                        }
                        b.set(kernel * kernel, col, bias);
                    }
                }
                Ok(b)
            }
        }
    }

    /// Reshapes the matmul result into `out_size x m` features.
    pub fn features_from_product(&self, r: &Matrix, m: usize) -> Result<Matrix> {
        match self.kind {
            LayerKind::FullyConnected => Ok(r.clone()),
            LayerKind::ConvAsMatmul { .. } => {
                let p = self.positions();
                if r.cols() != m * p {
                    return Err(Error::Shape(format!("conv product has {} columns, want {}", r.cols(), m * p)));
                }
                Ok(Matrix::from_fn(self.out_size, m, |f, s| r.get(f / p, s * p + f % p)))
            }
        }
    }

    /// Inverse of [`Self::features_from_product`].
    fn product_from_features(&self, g: &Matrix) -> Matrix {
        match self.kind {
            LayerKind::FullyConnected => g.clone(),
            LayerKind::ConvAsMatmul { .. } => {
                let p = self.positions();
                let m = g.cols();
                Matrix::from_fn(self.weight_rows(), m * p, |c, col| g.get(c * p + col % p, col / p))
            }
        }
    }

    /// Gradient w.r.t. the layer input given the gradient w.r.t. the operand.
    fn input_grad_from_operand(&self, g_op: &Matrix, m: usize) -> Matrix {
        match self.kind {
            LayerKind::FullyConnected => g_op.row_range(0, self.in_size),
            LayerKind::ConvAsMatmul { width, kernel, .. } => {
                let p = self.positions();
                let out_w = width - kernel + 1;
                let mut gx = Matrix::zeros(self.in_size, m);
                for s in 0..m {
                    for pos in 0..p {
                        let (r0, c0) = (pos / out_w, pos % out_w);
                        for dr in 0..kernel {
                            for dc in 0..kernel {
                                let idx = (r0 + dr) * width + c0 + dc;
                                let v = gx.get(idx, s) + g_op.get(dr * kernel + dc, s * p + pos);
                                gx.set(idx, s, v);
                            }
                        }
                    }
                }
                gx
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    specs: Vec<LayerSpec>,
    weights: Vec<Matrix>,
}

impl Model {
    pub fn new(specs: Vec<LayerSpec>, weights: Vec<Matrix>) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::Shape("a model needs at least one layer".into()));
        }
        if specs.len() != weights.len() {
            return Err(Error::Length(specs.len(), weights.len()));
        }
        for (l, (s, w)) in specs.iter().zip(&weights).enumerate() {
            if w.shape() != (s.weight_rows(), s.weight_cols()) {
                return Err(Error::Shape(format!(
                    "layer {l}: weights {}x{}, spec wants {}x{}",
                    w.rows(),
                    w.cols(),
                    s.weight_rows(),
                    s.weight_cols()
                )));
            }
            if l > 0 && specs[l - 1].out_size != s.in_size {
                return Err(Error::Shape(format!(
                    "layer {l} takes {} inputs but layer {} emits {}",
                    s.in_size,
                    l - 1,
                    specs[l - 1].out_size
                )));
            }
        }
        if !specs.last().expect("non-empty").activation.is_monotone() {
            return Err(Error::Shape("the final activation must be monotone".into()));
        }
        Ok(Model { specs, weights })
    }

    /// Uniform Glorot-style initialisation.
    pub fn random<R: Rng + ?Sized>(specs: Vec<LayerSpec>, rng: &mut R) -> Result<Self> {
        let weights = specs
            .iter()
            .map(|s| {
                let (r, c) = (s.weight_rows(), s.weight_cols());
                let limit = (6.0 / (r + c) as f64).sqrt();
                Matrix::from_fn(r, c, |_, _| rng.random_range(-limit..limit))
            })
            .collect();
        Model::new(specs, weights)
    }

    pub fn zeros_like(&self) -> Model {
        Model {
            specs: self.specs.clone(),
            weights: self.weights.iter().map(|w| Matrix::zeros(w.rows(), w.cols())).collect(),
        }
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [Matrix] {
        &mut self.weights
    }

    pub fn depth(&self) -> usize {
        self.specs.len()
    }

    pub fn input_size(&self) -> usize {
        self.specs[0].in_size
    }

    pub fn classes(&self) -> usize {
        self.specs.last().expect("non-empty").out_size
    }

    pub fn same_architecture(&self, other: &Model) -> bool {
        self.specs == other.specs
    }

    /// One linear map: `W_l * operand(x)` reshaped into features (no activation).
    pub fn linear(&self, l: usize, x: &Matrix) -> Result<Matrix> {
        let spec = &self.specs[l];
        let b = spec.linear_operand(x, 1.0)?;
        spec.features_from_product(&self.weights[l].matmul(&b)?, x.cols())
    }

    /// Final-layer pre-activation scores (`c x m`).
    pub fn logits(&self, x: &Matrix) -> Result<Matrix> {
        let mut h = x.clone();
        for l in 0..self.depth() {
            let z = self.linear(l, &h)?;
            if l + 1 == self.depth() {
                return Ok(z);
            }
            h = z.map(|v| self.specs[l].activation.apply(v));
        }
        unreachable!("depth >= 1")
    }

    /// Full forward pass, final activation included.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let act = self.specs.last().expect("non-empty").activation;
        Ok(self.logits(x)?.map(|v| act.apply(v)))
    }

    /// Predicted labels: argmax of the final pre-activation (equal to the argmax
    /// after any monotone final activation, without saturation ties).
    pub fn predict(&self, x: &Matrix) -> Result<LabelVector> {
        Ok(argmax_columns(&self.logits(x)?))
    }

    /// Entrywise `sum_i w_i * models_i`.
    pub fn weighted_sum(models: &[&Model], weights: &[f64]) -> Result<Model> {
        if models.is_empty() {
            return Err(Error::Shape("cannot aggregate zero models".into()));
        }
        if models.len() != weights.len() {
            return Err(Error::Length(models.len(), weights.len()));
        }
        let mut out = models[0].zeros_like();
        for (m, &w) in models.iter().zip(weights) {
            if !m.same_architecture(models[0]) {
                return Err(Error::Shape("aggregating models with different architectures".into()));
            }
            for (acc, layer) in out.weights.iter_mut().zip(&m.weights) {
                acc.add_assign_scaled(layer, w)?;
            }
        }
        Ok(out)
    }

    /// One SGD step of softmax cross-entropy on the final pre-activation.
    /// Returns the mean loss before the step.
    pub fn sgd_step(&mut self, x: &Matrix, labels: &[usize], lr: f64) -> Result<f64> {
        let m = x.cols();
        if labels.len() != m {
            return Err(Error::Length(labels.len(), m));
        }
        let depth = self.depth();
        let mut inputs = Vec::with_capacity(depth);
        let mut pre = Vec::with_capacity(depth);
        let mut h = x.clone();
        for l in 0..depth {
            let z = self.linear(l, &h)?;
            inputs.push(h);
            h = z.map(|v| self.specs[l].activation.apply(v));
            pre.push(z);
        }
        let z = pre.last().expect("depth >= 1");
        let c = z.rows();
        let mut grad = Matrix::zeros(c, m);
        let mut loss = 0.0;
        for s in 0..m {
            let mx = (0..c).map(|r| z.get(r, s)).fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = (0..c).map(|r| (z.get(r, s) - mx).exp()).sum();
            for r in 0..c {
                let p = (z.get(r, s) - mx).exp() / denom;
                let y = if r == labels[s] { 1.0 } else { 0.0 };
                grad.set(r, s, (p - y) / m as f64);
            }
            loss -= ((z.get(labels[s], s) - mx).exp() / denom).ln();
        }
        loss /= m as f64;
        if !loss.is_finite() {
            return Err(Error::Training(format!("loss became {loss}")));
        }
        for l in (0..depth).rev() {
            let spec = self.specs[l];
            if l + 1 < depth {
                let zl = &pre[l];
                grad = Matrix::from_fn(grad.rows(), grad.cols(), |i, j| {
                    grad.get(i, j) * spec.activation.derivative(zl.get(i, j))
                });
            }
            let g_prod = spec.product_from_features(&grad);
            let operand = spec.linear_operand(&inputs[l], 1.0)?;
            let g_w = g_prod.matmul(&operand.transpose())?;
            if l > 0 {
                let g_op = self.weights[l].transpose().matmul(&g_prod)?;
                grad = spec.input_grad_from_operand(&g_op, m);
            }
            self.weights[l].add_assign_scaled(&g_w, -lr)?;
        }
        if self.weights.iter().any(|w| w.data().iter().any(|v| !v.is_finite())) {
            return Err(Error::Training("parameters became non-finite".into()));
        }
        Ok(loss)
    }

    /// Writes each weight matrix in text form, one file per layer, plus the specs.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let specs = serde_json::to_string_pretty(&self.specs).map_err(|e| Error::Parse(e.to_string()))?;
        std::fs::write(dir.join("layers.json"), specs)?;
        for (l, w) in self.weights.iter().enumerate() {
            w.write_text(std::fs::File::create(dir.join(format!("layer{l}.txt")))?)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Model> {
        let text = std::fs::read_to_string(dir.join("layers.json"))?;
        let specs: Vec<LayerSpec> = serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
        let weights = (0..specs.len())
            .map(|l| {
                let f = std::fs::File::open(dir.join(format!("layer{l}.txt")))?;
                Matrix::read_text(std::io::BufReader::new(f))
            })
            .collect::<Result<Vec<_>>>()?;
        Model::new(specs, weights)
    }
}

/// Architectures available to experiments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    /// One sigmoid layer.
    Logistic,
    /// Hidden layers of equal width, then a sigmoid output layer.
    Mlp { hidden_layers: usize, width: usize, activation: Activation },
    /// `side x side` single-channel image, 3x3 conv with `channels` filters,
    /// square, dense to `width`, square, dense to classes.
    Cnn { side: usize, channels: usize, width: usize },
}

impl Architecture {
    pub fn layer_specs(&self, features: usize, classes: usize) -> Result<Vec<LayerSpec>> {
        Ok(match self {
            Architecture::Logistic => vec![LayerSpec::dense(features, classes, Activation::Sigmoid)],
            Architecture::Mlp { hidden_layers, width, activation } => {
                let mut specs = Vec::with_capacity(hidden_layers + 1);
                let mut prev = features;
                for _ in 0..*hidden_layers {
                    specs.push(LayerSpec::dense(prev, *width, *activation));
                    prev = *width;
                }
                specs.push(LayerSpec::dense(prev, classes, Activation::Sigmoid));
                specs
            }
            Architecture::Cnn { side, channels, width } => {
                if side * side != features {
                    return Err(Error::Shape(format!("cnn expects {} features, data has {features}", side * side)));
                }
                let conv = LayerSpec::conv(*side, *side, 3, *channels, Activation::Square)?;
                vec![
                    conv,
                    LayerSpec::dense(conv.out_size, *width, Activation::Square),
                    LayerSpec::dense(*width, classes, Activation::Identity),
                ]
            }
        })
    }

    pub fn depth(&self) -> usize {
        match self {
            Architecture::Logistic => 1,
            Architecture::Mlp { hidden_layers, .. } => hidden_layers + 1,
            Architecture::Cnn { .. } => 3,
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, features: usize, classes: usize, rng: &mut R) -> Result<Model> {
        Model::random(self.layer_specs(features, classes)?, rng)
    }
}

/// Correct predictions under the `|y_hat - y| < 0.5` tolerance.
pub fn correct_count(predicted: &[f64], labels: &[usize]) -> Result<usize> {
    if predicted.len() != labels.len() {
        return Err(Error::Length(predicted.len(), labels.len()));
    }
    Ok(predicted.iter().zip(labels).filter(|(p, &y)| (*p - y as f64).abs() < 0.5).count())
}

/// `(correct, correct / total)`; the utility of an empty test set is 0.
pub fn accuracy(predicted: &[f64], labels: &[usize], total: usize) -> Result<(usize, f64)> {
    let c = correct_count(predicted, labels)?;
    Ok((c, if total == 0 { 0.0 } else { c as f64 / total as f64 }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(21)
    }

    #[test]
    fn identity_weights_copy_inputs() {
        let spec = LayerSpec::dense(3, 2, Activation::Identity);
        let w = Matrix::from_rows(&[[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]]);
        let model = Model::new(vec![spec], vec![w]).unwrap();
        let x = Matrix::from_fn(3, 4, |i, j| (i * 4 + j) as f64);
        assert_eq!(model.forward(&x).unwrap(), x.row_range(0, 2));
    }

    #[test]
    fn sigmoid_keeps_argmax() {
        let mut r = rng();
        let model = Architecture::Logistic.init(5, 3, &mut r).unwrap();
        let x = Matrix::from_fn(5, 20, |_, _| r.random_range(-2.0..2.0));
        assert_eq!(argmax_columns(&model.forward(&x).unwrap()), model.predict(&x).unwrap());
    }

    #[test]
    fn mlp_forward_matches_hand_rolled() {
        let mut r = rng();
        let arch = Architecture::Mlp { hidden_layers: 1, width: 4, activation: Activation::Relu };
        let model = arch.init(3, 2, &mut r).unwrap();
        let x = Matrix::from_fn(3, 5, |_, _| r.random_range(-1.0..1.0));
        let got = model.forward(&x).unwrap();
        let (w1, w2) = (&model.weights()[0], &model.weights()[1]);
        for s in 0..5 {
            let mut hidden = [0.0; 4];
            for (h, out) in hidden.iter_mut().enumerate() {
                let mut acc = w1.get(h, 3);
                for i in 0..3 {
                    acc += w1.get(h, i) * x.get(i, s);
                }
                *out = acc.max(0.0);
            }
            for c in 0..2 {
                let mut acc = w2.get(c, 4);
                for (h, v) in hidden.iter().enumerate() {
                    acc += w2.get(c, h) * v;
                }
                let expect = 1.0 / (1.0 + (-acc).exp());
                assert!((got.get(c, s) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_matches_direct_convolution() {
        let mut r = rng();
        let arch = Architecture::Cnn { side: 6, channels: 4, width: 16 };
        let model = arch.init(36, 3, &mut r).unwrap();
        assert_eq!(model.specs()[0].out_size, 64);
        assert_eq!(model.weights()[0].shape(), (4, 10));
        let x = Matrix::from_fn(36, 2, |_, _| r.random_range(-1.0..1.0));
        let feats = model.linear(0, &x).unwrap();
        let w = &model.weights()[0];
        for ch in 0..4 {
            for pos in 0..16 {
                let (r0, c0) = (pos / 4, pos % 4);
                for s in 0..2 {
                    let mut acc = w.get(ch, 9);
                    for dr in 0..3 {
                        for dc in 0..3 {
                            acc += w.get(ch, dr * 3 + dc) * x.get((r0 + dr) * 6 + c0 + dc, s);
                        }
                    }
                    assert!((feats.get(ch * 16 + pos, s) - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut r = rng();
        for arch in [
            Architecture::Mlp { hidden_layers: 2, width: 3, activation: Activation::Sigmoid },
            Architecture::Cnn { side: 4, channels: 2, width: 3 },
        ] {
            let features = if matches!(arch, Architecture::Cnn { .. }) { 16 } else { 4 };
            let model = arch.init(features, 2, &mut r).unwrap();
            let x = Matrix::from_fn(features, 3, |_, _| r.random_range(-1.0..1.0));
            let labels = [0usize, 1, 1];
            let loss_of = |m: &Model| {
                let mut c = m.clone();
                c.sgd_step(&x, &labels, 0.0).unwrap()
            };
            let lr = 1e-3;
            let mut stepped = model.clone();
            stepped.sgd_step(&x, &labels, lr).unwrap();
            for l in 0..model.depth() {
                for idx in [0usize, 1] {
                    let analytic = (model.weights()[l].data()[idx] - stepped.weights()[l].data()[idx]) / lr;
                    let eps = 1e-6;
                    let mut plus = model.clone();
                    plus.weights_mut()[l].data_mut()[idx] += eps;
                    let mut minus = model.clone();
                    minus.weights_mut()[l].data_mut()[idx] -= eps;
                    let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * eps);
                    assert!((analytic - numeric).abs() < 1e-5, "{arch:?} layer {l}: {analytic} vs {numeric}");
                }
            }
        }
    }

    #[test]
    fn tolerance_rule() {
        assert_eq!(correct_count(&[0.0, 1.0, 2.0], &[0, 1, 2]).unwrap(), 3);
        assert_eq!(correct_count(&[1.4], &[1]).unwrap(), 1);
        assert_eq!(correct_count(&[1.5], &[1]).unwrap(), 0);
        assert_eq!(accuracy(&[0.0, 1.0], &[0, 1], 2).unwrap(), (2, 1.0));
        assert!(correct_count(&[0.0], &[0, 1]).is_err());
    }

    #[test]
    fn weighted_sum_rules() {
        let mut r = rng();
        let a = Architecture::Logistic.init(3, 2, &mut r).unwrap();
        let b = Architecture::Logistic.init(3, 2, &mut r).unwrap();
        assert_eq!(Model::weighted_sum(&[&a], &[1.0]).unwrap(), a);
        let same = Model::weighted_sum(&[&a, &a], &[0.5, 0.5]).unwrap();
        for (x, y) in same.weights()[0].data().iter().zip(a.weights()[0].data()) {
            assert!((x - y).abs() < 1e-15);
        }
        let mix = Model::weighted_sum(&[&a, &b], &[0.25, 0.75]).unwrap();
        let expect = 0.25 * a.weights()[0].get(1, 2) + 0.75 * b.weights()[0].get(1, 2);
        assert!((mix.weights()[0].get(1, 2) - expect).abs() < 1e-15);
        let other = Architecture::Logistic.init(4, 2, &mut r).unwrap();
        assert!(Model::weighted_sum(&[&a, &other], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn rejects_non_monotone_output_and_bad_shapes() {
        let spec = LayerSpec::dense(2, 2, Activation::Square);
        assert!(Model::new(vec![spec], vec![Matrix::zeros(2, 3)]).is_err());
        let spec = LayerSpec::dense(2, 2, Activation::Sigmoid);
        assert!(Model::new(vec![spec], vec![Matrix::zeros(2, 2)]).is_err());
    }

    #[test]
    fn save_and_load() {
        let mut r = rng();
        let model = Architecture::Cnn { side: 6, channels: 4, width: 16 }.init(36, 3, &mut r).unwrap();
        let dir = tempfile::tempdir().unwrap();
        model.save(dir.path()).unwrap();
        assert_eq!(Model::load(dir.path()).unwrap(), model);
    }
}
