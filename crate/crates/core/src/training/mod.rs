//! Desk-scale model production: synthetic datasets, deterministic SGD
//! training with hand-rolled backprop for the ReLU MLP family, and CSV
//! dataset ingestion.

use std::io::Read;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{Dataset, Layer, MlpParams};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataKind {
    GaussianBlobs,
    Spirals,
}

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub kind: DataKind,
    pub n_samples: usize,
    pub n_classes: usize,
    pub input_dim: usize,
    pub noise: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::InvalidInput("need at least 2 classes".into()));
        }
        if self.n_samples < self.n_classes {
            return Err(Error::InvalidInput(format!(
                "{} samples cannot cover {} classes",
                self.n_samples, self.n_classes
            )));
        }
        if self.input_dim == 0 {
            return Err(Error::InvalidInput("input_dim must be positive".into()));
        }
        if self.kind == DataKind::Spirals && self.input_dim != 2 {
            return Err(Error::InvalidInput("spirals are generated in 2 dimensions".into()));
        }
        if self.noise.is_nan() || self.noise < 0.0 {
            return Err(Error::InvalidInput("noise must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Split<S: Scalar> {
    pub train: Dataset<S>,
    pub test: Dataset<S>,
}

/// Generate a seeded synthetic dataset: balanced labels (sizes within one),
/// a stratified 80/20 split, and features standardized with the train
/// statistics.
pub fn make_dataset<S: Scalar>(spec: &SyntheticSpec) -> Result<Split<S>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let counts: Vec<usize> = (0..spec.n_classes)
        .map(|c| spec.n_samples / spec.n_classes + usize::from(c < spec.n_samples % spec.n_classes))
        .collect();
    // class centers for the blobs: scaled gaussian directions
    let centers: Vec<Vec<f64>> = (0..spec.n_classes)
        .map(|_| {
            (0..spec.input_dim)
                .map(|_| {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    3.0 * g
                })
                .collect()
        })
        .collect();
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(spec.n_samples);
    let mut labels: Vec<usize> = Vec::with_capacity(spec.n_samples);
    for (c, &count) in counts.iter().enumerate() {
        for k in 0..count {
            let point: Vec<f64> = match spec.kind {
                DataKind::GaussianBlobs => centers[c]
                    .iter()
                    .map(|&mu| {
                        let g: f64 = StandardNormal.sample(&mut rng);
                        mu + spec.noise * g
                    })
                    .collect(),
                DataKind::Spirals => {
                    let t = (k as f64 + 0.5) / count as f64;
                    let angle = 3.0 * std::f64::consts::PI * t
                        + 2.0 * std::f64::consts::PI * c as f64 / spec.n_classes as f64;
                    let r = 0.2 + 0.8 * t;
                    let gx: f64 = StandardNormal.sample(&mut rng);
                    let gy: f64 = StandardNormal.sample(&mut rng);
                    vec![
                        r * angle.cos() + spec.noise * gx,
                        r * angle.sin() + spec.noise * gy,
                    ]
                }
            };
            rows.push(point);
            labels.push(c);
        }
    }
    // stratified split: shuffle within each class, 80% to train
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for c in 0..spec.n_classes {
        let mut idx: Vec<usize> = (0..rows.len()).filter(|&i| labels[i] == c).collect();
        idx.shuffle(&mut rng);
        let n_train = ((idx.len() as f64) * 0.8).round() as usize;
        train_idx.extend_from_slice(&idx[..n_train]);
        test_idx.extend_from_slice(&idx[n_train..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    // standardize with train statistics
    let d = spec.input_dim;
    let mut mean = vec![0.0; d];
    for &i in &train_idx {
        for j in 0..d {
            mean[j] += rows[i][j];
        }
    }
    for m in &mut mean {
        *m /= train_idx.len() as f64;
    }
    let mut std = vec![0.0; d];
    for &i in &train_idx {
        for j in 0..d {
            let v = rows[i][j] - mean[j];
            std[j] += v * v;
        }
    }
    for s in &mut std {
        *s = (*s / train_idx.len() as f64).sqrt();
        if *s == 0.0 {
            *s = 1.0;
        }
    }
    let build = |idx: &[usize], name: &str| -> Result<Dataset<S>> {
        let features = Array2::from_shape_fn((idx.len(), d), |(r, j)| {
            S::of_f64((rows[idx[r]][j] - mean[j]) / std[j])
        });
        let lab: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        Dataset::new(features, lab, spec.n_classes, name)
    };
    Ok(Split {
        train: build(&train_idx, "train")?,
        test: build(&test_idx, "test")?,
    })
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            seed: 0,
            init_scale: 1.0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.lr.is_nan() || self.lr <= 0.0 {
            return Err(Error::InvalidInput("lr must be positive".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidInput("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Seeded uniform(−s, s) weight init with `s = init_scale / sqrt(fan_in)`
/// and zero biases.
pub fn init_mlp<S: Scalar>(dims: &[usize], seed: u64, init_scale: f64) -> Result<MlpParams<S>> {
    if dims.len() < 2 {
        return Err(Error::InvalidInput("need at least one layer".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = dims
        .windows(2)
        .map(|w| {
            let s = init_scale / (w[0] as f64).sqrt();
            Layer {
                weight: Array2::from_shape_fn((w[1], w[0]), |_| {
                    S::of_f64((rng.random::<f64>() * 2.0 - 1.0) * s)
                }),
                bias: Array1::zeros(w[1]),
            }
        })
        .collect();
    MlpParams::new(layers)
}

/// Minibatch SGD with momentum and weight decay (weights only), continuing
/// from an existing model. Deterministic given inputs and config.
pub fn train_from<S: Scalar>(
    initial: &MlpParams<S>,
    data: &Dataset<S>,
    config: &TrainConfig,
) -> Result<MlpParams<S>> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let dims = initial.dims();
    if dims[0] != data.feature_dim() || *dims.last().unwrap() != data.n_classes {
        return Err(Error::ShapeMismatch(format!(
            "model dims {dims:?} incompatible with data ({} features, {} classes)",
            data.feature_dim(),
            data.n_classes
        )));
    }
    let mut layers = initial.clone().into_layers();
    let mut vel_w: Vec<Array2<S>> =
        layers.iter().map(|l| Array2::zeros(l.weight.dim())).collect();
    let mut vel_b: Vec<Array1<S>> = layers.iter().map(|l| Array1::zeros(l.bias.len())).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let nl = layers.len();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let bsz = batch.len();
            let x = data.features.select(Axis(0), batch);
            // forward, keeping inputs to every layer
            let mut acts: Vec<Array2<S>> = Vec::with_capacity(nl);
            let mut pres: Vec<Array2<S>> = Vec::with_capacity(nl);
            let mut z = x;
            for (i, layer) in layers.iter().enumerate() {
                acts.push(z.clone());
                let pre = z.dot(&layer.weight.t()) + &layer.bias;
                if i + 1 < nl {
                    z = pre.mapv(|v| if v > S::zero() { v } else { S::zero() });
                }
                pres.push(pre);
            }
            let logits = &pres[nl - 1];
            // softmax cross-entropy gradient, mean over the batch
            let inv_b = S::of_f64(1.0 / bsz as f64);
            let mut delta: Array2<S> = Array2::zeros(logits.dim());
            for (r, &i) in batch.iter().enumerate() {
                let row = logits.row(r);
                let max = row.iter().fold(S::neg_infinity(), |m, &v| if v > m { v } else { m });
                let denom: f64 = row.iter().map(|&v| (v - max).as_f64().exp()).sum();
                epoch_loss += denom.ln() + max.as_f64() - logits[(r, data.labels[i])].as_f64();
                for (j, &v) in row.iter().enumerate() {
                    let p = (v - max).as_f64().exp() / denom;
                    let y = if j == data.labels[i] { 1.0 } else { 0.0 };
                    delta[(r, j)] = S::of_f64(p - y) * inv_b;
                }
            }
            // backward
            for i in (0..nl).rev() {
                let grad_w = delta.t().dot(&acts[i]);
                let grad_b = delta.sum_axis(Axis(0));
                if i > 0 {
                    let mut back = delta.dot(&layers[i].weight);
                    back.zip_mut_with(&pres[i - 1], |g, &pre| {
                        if pre <= S::zero() {
                            *g = S::zero();
                        }
                    });
                    delta = back;
                }
                let wd = S::of_f64(config.weight_decay);
                let mom = S::of_f64(config.momentum);
                let lr = S::of_f64(config.lr);
                vel_w[i].zip_mut_with(&(grad_w + &layers[i].weight * wd), |v, &g| {
                    *v = mom * *v + g
                });
                layers[i].weight.zip_mut_with(&vel_w[i], |w, &v| *w -= lr * v);
                vel_b[i].zip_mut_with(&grad_b, |v, &g| *v = mom * *v + g);
                layers[i].bias.zip_mut_with(&vel_b[i], |b, &v| *b -= lr * v);
            }
        }
        if !epoch_loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
    }
    MlpParams::new(layers)
}

/// Train a freshly initialized MLP; see [`train_from`].
pub fn train_mlp<S: Scalar>(
    data: &Dataset<S>,
    dims: &[usize],
    config: &TrainConfig,
) -> Result<MlpParams<S>> {
    let initial = init_mlp(dims, config.seed, config.init_scale)?;
    train_from(&initial, data, config)
}

/// Parse a CSV dataset: header row, numeric feature columns, one integer
/// label column selected by name. Classes are `0..=max(label)`.
pub fn read_csv_dataset<S: Scalar, R: Read>(reader: R, label_column: &str) -> Result<Dataset<S>> {
    let mut csv = csv::Reader::from_reader(reader);
    let headers = csv.headers()?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::Format(format!("label column {label_column:?} not found")))?;
    let mut features: Vec<Vec<S>> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    for (row, record) in csv.records().enumerate() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(row as u64 + 2);
        if record.len() != headers.len() {
            return Err(Error::Format(format!(
                "line {line}: expected {} fields, got {}",
                headers.len(),
                record.len()
            )));
        }
        let mut feat = Vec::with_capacity(headers.len() - 1);
        for (col, field) in record.iter().enumerate() {
            if col == label_idx {
                labels.push(field.trim().parse::<usize>().map_err(|_| {
                    Error::Format(format!("line {line}: label {field:?} is not an integer"))
                })?);
            } else {
                feat.push(S::of_f64(field.trim().parse::<f64>().map_err(|_| {
                    Error::Format(format!("line {line}: feature {field:?} is not numeric"))
                })?));
            }
        }
        features.push(feat);
    }
    if features.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let d = features[0].len();
    let flat: Vec<S> = features.into_iter().flatten().collect();
    let features = Array2::from_shape_vec((labels.len(), d), flat)
        .map_err(|e| Error::Format(e.to_string()))?;
    let n_classes = labels.iter().max().copied().unwrap_or(0) + 1;
    Dataset::new(features, labels, n_classes.max(2), "csv")
}

pub fn load_csv_dataset<S: Scalar>(path: &Path, label_column: &str) -> Result<Dataset<S>> {
    read_csv_dataset(std::fs::File::open(path)?, label_column)
}

/// Write a dataset in the same CSV layout (`f0..f{d-1}` plus the label
/// column); [`read_csv_dataset`] round-trips it exactly.
pub fn write_csv_dataset<S: Scalar>(data: &Dataset<S>, label_column: &str) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = (0..data.feature_dim()).map(|j| format!("f{j}")).collect();
    header.push(label_column.to_string());
    w.write_record(&header)?;
    for (row, &label) in data.features.rows().into_iter().zip(&data.labels) {
        let mut rec: Vec<String> = row.iter().map(|x| x.as_f64().to_string()).collect();
        rec.push(label.to_string());
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| Error::Format(e.to_string()))
}
