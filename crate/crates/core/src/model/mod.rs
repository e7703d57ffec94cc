//! ReLU MLP parameters, permutation specification, forward/loss evaluation
//! and dataset container.

mod bundle;

pub use bundle::{deserialize, serialize, serialize_with_provenance, FORMAT_VERSION};

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::perm::Permutation;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<S: Scalar> {
    pub weight: Array2<S>,
    pub bias: Array1<S>,
}

/// Ordered layer weights and biases of a ReLU MLP. Layer `i` maps
/// `dims[i] -> dims[i+1]`; every layer but the last is followed by ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams<S: Scalar> {
    layers: Vec<Layer<S>>,
}

impl<S: Scalar> MlpParams<S> {
    pub fn new(layers: Vec<Layer<S>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidInput("model must have at least one layer".into()));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.weight.nrows() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {i}: bias length {} vs weight rows {}",
                    layer.bias.len(),
                    layer.weight.nrows()
                )));
            }
            if i > 0 && layer.weight.ncols() != layers[i - 1].weight.nrows() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {i}: input dim {} vs previous output dim {}",
                    layer.weight.ncols(),
                    layers[i - 1].weight.nrows()
                )));
            }
            if layer.weight.iter().any(|x| !x.is_finite())
                || layer.bias.iter().any(|x| !x.is_finite())
            {
                return Err(Error::InvalidInput(format!("layer {i} has non-finite entries")));
            }
        }
        Ok(Self { layers })
    }

    pub fn into_layers(self) -> Vec<Layer<S>> {
        self.layers
    }

    pub fn layers(&self) -> &[Layer<S>] {
        &self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// `[d_0, ..., d_L]`
    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].weight.ncols()];
        d.extend(self.layers.iter().map(|l| l.weight.nrows()));
        d
    }

    pub fn same_architecture(&self, other: &Self) -> bool {
        self.dims() == other.dims()
    }

    /// Batched forward pass; `x` is `M x d_0`. Pre-activations of every
    /// hidden layer are recorded before ReLU.
    pub fn forward(&self, x: &Array2<S>) -> Result<ForwardPass<S>> {
        if x.ncols() != self.layers[0].weight.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "input dim {} vs model input dim {}",
                x.ncols(),
                self.layers[0].weight.ncols()
            )));
        }
        let last = self.layers.len() - 1;
        let mut z = x.clone();
        let mut pre_activations = Vec::with_capacity(last);
        for (i, layer) in self.layers.iter().enumerate() {
            let pre = z.dot(&layer.weight.t()) + &layer.bias;
            if i == last {
                return Ok(ForwardPass { logits: pre, pre_activations });
            }
            z = pre.mapv(|v| if v > S::zero() { v } else { S::zero() });
            pre_activations.push(pre);
        }
        unreachable!()
    }

    /// Post-activation hidden outputs for each hidden layer, used for
    /// representation similarity.
    pub fn hidden_representations(&self, x: &Array2<S>) -> Result<Vec<Array2<S>>> {
        let pass = self.forward(x)?;
        Ok(pass
            .pre_activations
            .into_iter()
            .map(|pre| pre.mapv(|v| if v > S::zero() { v } else { S::zero() }))
            .collect())
    }

    /// Mean cross-entropy and argmax accuracy over a dataset.
    pub fn loss_and_accuracy(&self, data: &Dataset<S>) -> Result<Metrics> {
        let dims = self.dims();
        if *dims.last().unwrap() != data.n_classes {
            return Err(Error::ShapeMismatch(format!(
                "model outputs {} classes, dataset has {}",
                dims.last().unwrap(),
                data.n_classes
            )));
        }
        let logits = self.forward(&data.features)?.logits;
        let m = logits.nrows();
        let mut loss = 0.0f64;
        let mut correct = 0usize;
        for (row, &label) in logits.rows().into_iter().zip(&data.labels) {
            let mut max = S::neg_infinity();
            let mut argmax = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > max {
                    max = v;
                    argmax = j;
                }
            }
            let lse = max.as_f64()
                + row.iter().map(|&v| (v - max).as_f64().exp()).sum::<f64>().ln();
            loss += lse - row[label].as_f64();
            if argmax == label {
                correct += 1;
            }
        }
        Ok(Metrics { loss: loss / m as f64, accuracy: correct as f64 / m as f64 })
    }

    /// Permute hidden neurons: `W_i <- P_i W_i P_{i-1}^T`, `b_i <- P_i b_i`
    /// with identity at both endpoints. The returned model computes the same
    /// function as the original.
    pub fn apply_permutations(&self, perms: &[Permutation]) -> Result<MlpParams<S>> {
        let spec = PermSpec::of(self);
        spec.check(perms)?;
        let last = self.layers.len() - 1;
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(i, layer)| {
                let mut w = layer.weight.clone();
                let mut b = layer.bias.clone();
                if i < last {
                    w = w.select(Axis(0), perms[i].map());
                    b = b.select(Axis(0), perms[i].map());
                }
                if i > 0 {
                    w = w.select(Axis(1), perms[i - 1].map());
                }
                Layer { weight: w, bias: b }
            })
            .collect();
        Ok(MlpParams { layers })
    }

    /// All parameters as one flat vector (weights row-major, then bias,
    /// layer by layer).
    pub fn flatten(&self) -> Vec<S> {
        let mut v = Vec::new();
        for layer in &self.layers {
            v.extend(layer.weight.iter().copied());
            v.extend(layer.bias.iter().copied());
        }
        v
    }

    /// Elementwise combination with an architecture-identical model.
    pub fn zip_with(&self, other: &Self, mut f: impl FnMut(S, S) -> S) -> Result<MlpParams<S>> {
        if !self.same_architecture(other) {
            return Err(Error::ShapeMismatch("models have different architectures".into()));
        }
        let layers = self
            .layers
            .iter()
            .zip(&other.layers)
            .map(|(a, b)| Layer {
                weight: ndarray::Zip::from(&a.weight)
                    .and(&b.weight)
                    .map_collect(|&x, &y| f(x, y)),
                bias: ndarray::Zip::from(&a.bias).and(&b.bias).map_collect(|&x, &y| f(x, y)),
            })
            .collect();
        Ok(MlpParams { layers })
    }
}

#[derive(Debug, Clone)]
pub struct ForwardPass<S: Scalar> {
    pub logits: Array2<S>,
    /// Pre-ReLU values per hidden layer, `M x d_{i+1}` each.
    pub pre_activations: Vec<Array2<S>>,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Metrics {
    pub loss: f64,
    pub accuracy: f64,
}

/// Sizes of the permutable hidden axes `d_1 .. d_{L-1}`; input and output
/// dimensions are never permuted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermSpec {
    hidden: Vec<usize>,
}

impl PermSpec {
    pub fn of<S: Scalar>(model: &MlpParams<S>) -> Self {
        let dims = model.dims();
        Self { hidden: dims[1..dims.len() - 1].to_vec() }
    }

    pub fn hidden_sizes(&self) -> &[usize] {
        &self.hidden
    }

    pub fn num_hidden(&self) -> usize {
        self.hidden.len()
    }

    pub fn check(&self, perms: &[Permutation]) -> Result<()> {
        if perms.len() != self.hidden.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} hidden permutations, got {}",
                self.hidden.len(),
                perms.len()
            )));
        }
        for (i, (p, &d)) in perms.iter().zip(&self.hidden).enumerate() {
            if p.size() != d {
                return Err(Error::ShapeMismatch(format!(
                    "permutation {i} has size {} but hidden layer has {d} units",
                    p.size()
                )));
            }
        }
        Ok(())
    }

    pub fn identity_perms(&self) -> Vec<Permutation> {
        self.hidden.iter().map(|&d| Permutation::identity(d)).collect()
    }
}

/// Feature matrix plus integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<S: Scalar> {
    pub features: Array2<S>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    pub name: String,
}

impl<S: Scalar> Dataset<S> {
    pub fn new(
        features: Array2<S>,
        labels: Vec<usize>,
        n_classes: usize,
        name: impl Into<String>,
    ) -> Result<Self> {
        if features.nrows() == 0 {
            return Err(Error::EmptyDataset);
        }
        if labels.len() != features.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "{} feature rows vs {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::InvalidInput(format!(
                "label {bad} out of range for {n_classes} classes"
            )));
        }
        Ok(Self { features, labels, n_classes, name: name.into() })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    /// Row subset in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(Self {
            features: self.features.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
            name: self.name.clone(),
        })
    }
}

/// Per-hidden-layer mean and population standard deviation of the
/// pre-activations over some dataset.
#[derive(Debug, Clone)]
pub struct ActivationStats<S: Scalar> {
    pub mean: Vec<Array1<S>>,
    pub std: Vec<Array1<S>>,
}
