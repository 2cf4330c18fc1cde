use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Layer, LayerKind};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` inside the loss.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Fc,
    Cnn1d,
    Cnn2d,
}

impl Arch {
    pub fn tag(self) -> &'static str {
        match self {
            Arch::Fc => "fc",
            Arch::Cnn1d => "cnn1d",
            Arch::Cnn2d => "cnn2d",
        }
    }
}

/// Network architecture bound to a per-sample input shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub arch: Arch,
    pub input_shape: Vec<usize>,
    pub filters: usize,
}

impl ModelSpec {
    /// Default architecture: 64 filters for the convolutional variants.
    pub fn new(arch: Arch, input_shape: Vec<usize>) -> Self {
        ModelSpec {
            arch,
            input_shape,
            filters: 64,
        }
    }

    pub fn with_filters(mut self, filters: usize) -> Self {
        self.filters = filters;
        self
    }

    pub fn layer_kinds(&self) -> Vec<LayerKind> {
        let f = self.filters;
        match self.arch {
            Arch::Fc => vec![LayerKind::Flatten, LayerKind::Dense { outputs: 1 }, LayerKind::Sigmoid],
            Arch::Cnn1d => vec![
                LayerKind::Conv1d { filters: f, width: 3 },
                LayerKind::Relu,
                LayerKind::MaxPool1d { pool: 2 },
                LayerKind::Flatten,
                LayerKind::Dense { outputs: 1 },
                LayerKind::Sigmoid,
            ],
            Arch::Cnn2d => vec![
                LayerKind::Conv2d { filters: f, kernel: [3, 3] },
                LayerKind::Relu,
                LayerKind::MaxPool2d { pool: 2 },
                LayerKind::Flatten,
                LayerKind::Dense { outputs: 1 },
                LayerKind::Sigmoid,
            ],
        }
    }

    pub fn build_layers(&self) -> Result<Vec<Layer>> {
        let mut shape = self.input_shape.clone();
        let mut layers = Vec::new();
        for kind in self.layer_kinds() {
            let layer = Layer::new(kind, &shape)?;
            shape = layer.out_shape.clone();
            layers.push(layer);
        }
        Ok(layers)
    }
}

/// Network with all parameters in one flat vector (layer by layer, weights then biases).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub spec: ModelSpec,
    pub layers: Vec<Layer>,
    pub params: Vec<f64>,
    offsets: Vec<usize>,
}

/// Per-layer activations of a batch; `activations[0]` is the input.
#[derive(Clone, Debug)]
pub struct Forward {
    pub activations: Vec<Tensor>,
}

impl Forward {
    pub fn probabilities(&self) -> &[f64] {
        self.activations.last().expect("non-empty").data()
    }
}

impl Model {
    /// Model with all parameters zero.
    pub fn zeros(spec: ModelSpec) -> Result<Self> {
        let layers = spec.build_layers()?;
        let mut offsets = Vec::with_capacity(layers.len() + 1);
        let mut total = 0;
        for l in &layers {
            offsets.push(total);
            total += l.param_count();
        }
        offsets.push(total);
        Ok(Model {
            spec,
            layers,
            params: vec![0.0; total],
            offsets,
        })
    }

    /// Glorot-uniform weights from `seed`, zero biases.
    pub fn glorot(spec: ModelSpec, seed: u64) -> Result<Self> {
        let mut model = Model::zeros(spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (i, layer) in model.layers.iter().enumerate() {
            let (nw, _) = layer.param_counts();
            if nw == 0 {
                continue;
            }
            let (fan_in, fan_out) = layer.fans();
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let start = model.offsets[i];
            for w in &mut model.params[start..start + nw] {
                *w = rng.random_range(-limit..limit);
            }
        }
        Ok(model)
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Parameter range owned by layer `i`.
    pub fn layer_params(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![self.params.len()],
                got: vec![params.len()],
            });
        }
        self.params = params;
        Ok(())
    }

    fn check_input(&self, batch: &Tensor) -> Result<()> {
        if batch.sample_shape() != self.spec.input_shape.as_slice() {
            return Err(Error::ShapeMismatch {
                expected: self.spec.input_shape.clone(),
                got: batch.sample_shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, batch: &Tensor) -> Result<Forward> {
        self.check_input(batch)?;
        let n = batch.batch();
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(batch.clone());
        for (i, layer) in self.layers.iter().enumerate() {
            let params = &self.params[self.layer_params(i)];
            let input = activations.last().expect("non-empty");
            let (il, ol) = (layer.in_len(), layer.out_len());
            let mut out = vec![0.0; n * ol];
            for b in 0..n {
                layer.forward(params, &input.data()[b * il..(b + 1) * il], &mut out[b * ol..(b + 1) * ol]);
            }
            let mut shape = vec![n];
            shape.extend_from_slice(&layer.out_shape);
            activations.push(Tensor::from_parts(shape, out));
        }
        Ok(Forward { activations })
    }

    /// Sigmoid outputs, one per sample.
    pub fn predict_proba(&self, batch: &Tensor) -> Result<Vec<f64>> {
        Ok(self.forward(batch)?.probabilities().to_vec())
    }

    /// Mean binary cross-entropy and its gradient for every parameter.
    ///
    /// The final sigmoid is fused with the loss, so the gradient at the output
    /// pre-activation is exactly `(p - y) / batch`.
    pub fn gradients(&self, batch: &Tensor, labels: &[f64]) -> Result<(f64, Vec<f64>)> {
        let fwd = self.forward(batch)?;
        self.backward(&fwd, labels)
    }

    pub fn backward(&self, fwd: &Forward, labels: &[f64]) -> Result<(f64, Vec<f64>)> {
        let n = fwd.activations[0].batch();
        if labels.len() != n {
            return Err(Error::ShapeMismatch {
                expected: vec![n],
                got: vec![labels.len()],
            });
        }
        let probs = fwd.probabilities();
        let loss = bce(probs, labels);
        let mut grads = vec![0.0; self.params.len()];

        let last = self.layers.len() - 1;
        debug_assert!(matches!(self.layers[last].kind, LayerKind::Sigmoid));
        let mut gout: Vec<f64> = probs
            .iter()
            .zip(labels)
            .map(|(p, y)| (p - y) / n as f64)
            .collect();
        for i in (0..last).rev() {
            let layer = &self.layers[i];
            let range = self.layer_params(i);
            let params = &self.params[range.clone()];
            let gparams = &mut grads[range];
            let (il, ol) = (layer.in_len(), layer.out_len());
            let x = fwd.activations[i].data();
            let y = fwd.activations[i + 1].data();
            if i == 0 {
                // the network input needs no gradient
                for b in 0..n {
                    let (xb, yb, gb) = (&x[b * il..(b + 1) * il], &y[b * ol..(b + 1) * ol], &gout[b * ol..(b + 1) * ol]);
                    layer.backward(params, xb, yb, gb, None, gparams);
                }
                break;
            }
            let mut gin = vec![0.0; n * il];
            for b in 0..n {
                layer.backward(
                    params,
                    &x[b * il..(b + 1) * il],
                    &y[b * ol..(b + 1) * ol],
                    &gout[b * ol..(b + 1) * ol],
                    Some(&mut gin[b * il..(b + 1) * il]),
                    gparams,
                );
            }
            gout = gin;
        }
        Ok((loss, grads))
    }

    /// Mean binary cross-entropy of the model on a batch.
    pub fn loss(&self, batch: &Tensor, labels: &[f64]) -> Result<f64> {
        let probs = self.predict_proba(batch)?;
        Ok(bce(&probs, labels))
    }
}

/// Mean binary cross-entropy with probabilities clamped away from 0 and 1.
pub fn bce(probs: &[f64], labels: &[f64]) -> f64 {
    let n = probs.len().max(1) as f64;
    probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum::<f64>()
        / n
}
