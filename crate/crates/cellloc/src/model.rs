//! Feed-forward fingerprint classifier trained with mini-batch SGD.
//!
//! The network maps an M-dimensional RSS vector to K logits, one per grid
//! cell. Hidden layers use ReLU followed by inverted dropout in training
//! mode; the output layer is linear and feeds a softmax. The loss is the mean
//! cross-entropy against one-hot cell labels, and its gradient at the logits
//! is `p - onehot`.

use std::io::{Read, Write};

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::LabeledSample;
use crate::geo::{CellId, GeoPoint, VirtualGrid};
use crate::ingest::{RssRange, TowerIndex};

pub const DEFAULT_HIDDEN: [usize; 3] = [40, 256, 40];
/// Lower clamp on probabilities inside the cross-entropy log.
pub const PROB_FLOOR: f64 = 1e-12;

pub const MODEL_FORMAT: &str = "cellloc-fingerprint-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("layer dimensions must all be positive, got {0:?}")]
    InvalidDims(Vec<usize>),
    #[error("dropout rate must lie in [0, 1), got {0}")]
    InvalidDropout(f64),
    #[error("input has length {got}, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("label {label} out of range for K = {k}")]
    InvalidLabel { label: usize, k: usize },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("no training samples")]
    EmptyTrainingSet,
    #[error("non-finite loss or gradient at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize },
    #[error("model file: {0}")]
    Format(String),
    #[error("model file i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Fully connected layer; `weights` is `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub dropout_rate: f64,
}

/// Probability vector over grid cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior(pub Vec<f64>);

impl Posterior {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        -self.0.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
    }
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Posterior {
    let mut p = logits.to_vec();
    softmax_in_place(&mut p);
    Posterior(p)
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

pub fn cross_entropy(p: &Posterior, label: CellId) -> f64 {
    -p.0[label.0].max(PROB_FLOOR).ln()
}

/// Intermediate values of a batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer (post-dropout activations for hidden inputs).
    pub inputs: Vec<Array2<f64>>,
    /// Pre-activation of each layer; the last entry holds the logits.
    pub pre_activations: Vec<Array2<f64>>,
    /// Inverted-dropout multipliers per hidden layer (train mode only).
    pub masks: Vec<Option<Array2<f64>>>,
}

impl ForwardCache {
    pub fn logits(&self) -> &Array2<f64> {
        self.pre_activations.last().expect("at least one layer")
    }
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub bias: Vec<Array1<f64>>,
}

impl Mlp {
    /// Uniform `±sqrt(6 / (fan_in + fan_out))` weights, zero biases.
    pub fn init(
        input_dim: usize,
        output_dim: usize,
        hidden: &[usize],
        dropout_rate: f64,
        seed: u64,
    ) -> Result<Self, ModelError> {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(output_dim);
        if dims.contains(&0) {
            return Err(ModelError::InvalidDims(dims));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(ModelError::InvalidDropout(dropout_rate));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weights =
                    Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-limit..=limit));
                Dense { weights, bias: Array1::zeros(fan_out) }
            })
            .collect();
        Ok(Mlp { layers, dropout_rate })
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(|l| l.weights.ncols()));
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.weights.ncols()).unwrap_or(0)
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().all(|w| w.is_finite()) && l.bias.iter().all(|b| b.is_finite()))
    }

    /// Batched forward pass over the rows of `x`.
    pub fn forward_batch<R: Rng + ?Sized>(
        &self,
        x: ArrayView2<'_, f64>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<ForwardCache, ModelError> {
        if x.ncols() != self.input_dim() {
            return Err(ModelError::DimensionMismatch { expected: self.input_dim(), got: x.ncols() });
        }
        let n = self.layers.len();
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(n),
            pre_activations: Vec::with_capacity(n),
            masks: Vec::with_capacity(n.saturating_sub(1)),
        };
        let mut a = x.to_owned();
        let keep = 1.0 - self.dropout_rate;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = a.dot(&layer.weights);
            z += &layer.bias;
            cache.inputs.push(a);
            if i + 1 == n {
                cache.pre_activations.push(z);
                break;
            }
            let mut next = z.mapv(|v| v.max(0.0));
            let mask = if mode == Mode::Train && self.dropout_rate > 0.0 {
                let scale = 1.0 / keep;
                let m = Array2::from_shape_simple_fn(next.raw_dim(), || {
                    if rng.random::<f64>() < self.dropout_rate {
                        0.0
                    } else {
                        scale
                    }
                });
                next *= &m;
                Some(m)
            } else {
                None
            };
            cache.pre_activations.push(z);
            cache.masks.push(mask);
            a = next;
        }
        Ok(cache)
    }

    /// Single-vector forward pass returning the logits and the cache.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        x: &[f64],
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Vec<f64>, ForwardCache), ModelError> {
        let view = ArrayView2::from_shape((1, x.len()), x)
            .map_err(|_| ModelError::DimensionMismatch { expected: self.input_dim(), got: x.len() })?;
        let cache = self.forward_batch(view, mode, rng)?;
        Ok((cache.logits().row(0).to_vec(), cache))
    }

    /// Deterministic eval-mode logits.
    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        // Eval mode never draws from the rng.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        self.forward(x, Mode::Eval, &mut rng).map(|(l, _)| l)
    }

    pub fn posterior(&self, x: &[f64]) -> Result<Posterior, ModelError> {
        self.logits(x).map(|l| softmax(&l))
    }

    /// Gradients of the batch-mean cross-entropy; also returns the summed loss.
    pub fn backward(&self, cache: &ForwardCache, labels: &[usize]) -> (Gradients, f64) {
        let logits = cache.logits();
        let batch = logits.nrows();
        let mut delta = logits.clone();
        let mut loss_sum = 0.0;
        for (mut row, &label) in delta.axis_iter_mut(Axis(0)).zip(labels) {
            let r = row.as_slice_mut().expect("contiguous logits row");
            softmax_in_place(r);
            loss_sum -= r[label].max(PROB_FLOOR).ln();
            r[label] -= 1.0;
        }
        delta /= batch as f64;

        let n = self.layers.len();
        let mut gw = Vec::with_capacity(n);
        let mut gb = Vec::with_capacity(n);
        for i in (0..n).rev() {
            gw.push(cache.inputs[i].t().dot(&delta));
            gb.push(delta.sum_axis(Axis(0)));
            if i == 0 {
                break;
            }
            let mut upstream = delta.dot(&self.layers[i].weights.t());
            if let Some(mask) = &cache.masks[i - 1] {
                upstream *= mask;
            }
            Zip::from(&mut upstream).and(&cache.pre_activations[i - 1]).for_each(|g, &z| {
                if z <= 0.0 {
                    *g = 0.0;
                }
            });
            delta = upstream;
        }
        gw.reverse();
        gb.reverse();
        (Gradients { weights: gw, bias: gb }, loss_sum)
    }

    fn apply(&mut self, grads: &Gradients, learning_rate: f64) {
        for (layer, (gw, gb)) in self.layers.iter_mut().zip(grads.weights.iter().zip(&grads.bias)) {
            layer.weights.scaled_add(-learning_rate, gw);
            layer.bias.scaled_add(-learning_rate, gb);
        }
    }

    /// Mini-batch SGD on the mean cross-entropy. Deterministic given
    /// `cfg.seed`; sets the network's dropout rate from the config.
    pub fn train(
        &mut self,
        samples: &[LabeledSample],
        cfg: &TrainingConfig,
    ) -> Result<TrainReport, ModelError> {
        cfg.validate()?;
        if samples.is_empty() {
            return Err(ModelError::EmptyTrainingSet);
        }
        let m = self.input_dim();
        let k = self.output_dim();
        let mut features = Array2::<f64>::zeros((samples.len(), m));
        let mut labels = Vec::with_capacity(samples.len());
        for (mut row, s) in features.axis_iter_mut(Axis(0)).zip(samples) {
            if s.features.len() != m {
                return Err(ModelError::DimensionMismatch { expected: m, got: s.features.len() });
            }
            if s.label.0 >= k {
                return Err(ModelError::InvalidLabel { label: s.label.0, k });
            }
            row.assign(&ndarray::aview1(s.features.as_slice()));
            labels.push(s.label.0);
        }
        self.train_matrix(features.view(), &labels, cfg)
    }

    /// As [`Mlp::train`], over a pre-assembled `N x M` feature matrix.
    pub fn train_matrix(
        &mut self,
        features: ArrayView2<'_, f64>,
        labels: &[usize],
        cfg: &TrainingConfig,
    ) -> Result<TrainReport, ModelError> {
        cfg.validate()?;
        let n = features.nrows();
        if n == 0 {
            return Err(ModelError::EmptyTrainingSet);
        }
        self.dropout_rate = cfg.dropout_rate;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = (0..n).collect();
        let mut batch_x = Array2::<f64>::zeros((cfg.batch_size.min(n), features.ncols()));
        let mut batch_y = Vec::with_capacity(cfg.batch_size);
        let mut loss_history = Vec::with_capacity(cfg.epochs);
        for epoch in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
                if chunk.len() != batch_x.nrows() {
                    batch_x = Array2::zeros((chunk.len(), features.ncols()));
                }
                batch_y.clear();
                for (row, &i) in chunk.iter().enumerate() {
                    batch_x.row_mut(row).assign(&features.row(i));
                    batch_y.push(labels[i]);
                }
                let cache = self.forward_batch(batch_x.view(), Mode::Train, &mut rng)?;
                let (grads, loss_sum) = self.backward(&cache, &batch_y);
                if !loss_sum.is_finite() || !grads_finite(&grads) {
                    return Err(ModelError::NonFinite { epoch, batch: b });
                }
                self.apply(&grads, cfg.learning_rate);
                epoch_loss += loss_sum;
            }
            let mean = epoch_loss / n as f64;
            log::debug!("epoch {epoch}: mean loss {mean:.6}");
            loss_history.push(mean);
        }
        if !self.is_finite() {
            return Err(ModelError::NonFinite { epoch: cfg.epochs, batch: 0 });
        }
        Ok(TrainReport { loss_history })
    }

    /// Mean eval-mode cross-entropy and argmax accuracy over `samples`.
    pub fn evaluate(&self, samples: &[LabeledSample]) -> Result<(f64, f64), ModelError> {
        if samples.is_empty() {
            return Err(ModelError::EmptyTrainingSet);
        }
        let mut loss = 0.0;
        let mut correct = 0usize;
        for s in samples {
            let p = self.posterior(s.features.as_slice())?;
            loss += cross_entropy(&p, s.label);
            if argmax(&p.0) == s.label.0 {
                correct += 1;
            }
        }
        Ok((loss / samples.len() as f64, correct as f64 / samples.len() as f64))
    }
}

fn grads_finite(g: &Gradients) -> bool {
    g.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
        && g.bias.iter().all(|b| b.iter().all(|v| v.is_finite()))
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig { epochs: 3000, learning_rate: 0.005, batch_size: 8, dropout_rate: 0.2, seed: 7 }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.epochs < 1 {
            return Err(ModelError::InvalidConfig("epochs must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(ModelError::InvalidConfig(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size < 1 {
            return Err(ModelError::InvalidConfig("batch size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(ModelError::InvalidDropout(self.dropout_rate));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Epoch-mean training loss (train mode, with dropout).
    pub loss_history: Vec<f64>,
}

/// A trained network together with everything needed to apply it to raw
/// scans: the tower index, the RSS normalization, and the grid geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct FingerprintModel {
    pub network: Mlp,
    pub towers: TowerIndex,
    pub rss_range: RssRange,
    pub grid: VirtualGrid,
}

impl FingerprintModel {
    pub fn new(
        network: Mlp,
        towers: TowerIndex,
        rss_range: RssRange,
        grid: VirtualGrid,
    ) -> Result<Self, ModelError> {
        if network.input_dim() != towers.len() {
            return Err(ModelError::DimensionMismatch {
                expected: towers.len(),
                got: network.input_dim(),
            });
        }
        if network.output_dim() != grid.len() {
            return Err(ModelError::DimensionMismatch { expected: grid.len(), got: network.output_dim() });
        }
        Ok(FingerprintModel { network, towers, rss_range, grid })
    }

    pub fn save<W: Write>(&self, mut sink: W) -> Result<(), ModelError> {
        let file = ModelFile::from_model(self);
        serde_json::to_writer(&mut sink, &file).map_err(|e| ModelError::Format(e.to_string()))?;
        sink.write_all(b"\n")?;
        Ok(())
    }

    pub fn load<R: Read>(source: R) -> Result<Self, ModelError> {
        let file: ModelFile =
            serde_json::from_reader(source).map_err(|e| ModelError::Format(e.to_string()))?;
        file.into_model()
    }

    pub fn to_json_string(&self) -> Result<String, ModelError> {
        let mut buf = Vec::new();
        self.save(&mut buf)?;
        String::from_utf8(buf).map_err(|e| ModelError::Format(e.to_string()))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerFile {
    /// Row-major `in x out`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct GridFile {
    origin_lat_deg: f64,
    origin_lon_deg: f64,
    cell_length_m: f64,
    n_cols: usize,
    n_rows: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    layer_dims: Vec<usize>,
    layers: Vec<LayerFile>,
    dropout_rate: f64,
    rss_floor_dbm: f64,
    rss_ceil_dbm: f64,
    towers: Vec<String>,
    grid: GridFile,
}

impl ModelFile {
    fn from_model(m: &FingerprintModel) -> Self {
        ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            layer_dims: m.network.layer_dims(),
            layers: m
                .network
                .layers
                .iter()
                .map(|l| LayerFile {
                    weights: l.weights.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
            dropout_rate: m.network.dropout_rate,
            rss_floor_dbm: m.rss_range.floor_dbm,
            rss_ceil_dbm: m.rss_range.ceil_dbm,
            towers: m.towers.ids().to_vec(),
            grid: GridFile {
                origin_lat_deg: m.grid.origin.lat_deg,
                origin_lon_deg: m.grid.origin.lon_deg,
                cell_length_m: m.grid.cell_length_m,
                n_cols: m.grid.n_cols,
                n_rows: m.grid.n_rows,
            },
        }
    }

    fn into_model(self) -> Result<FingerprintModel, ModelError> {
        if self.format != MODEL_FORMAT {
            return Err(ModelError::Format(format!("unexpected format tag '{}'", self.format)));
        }
        if self.version != MODEL_VERSION {
            return Err(ModelError::Format(format!("unsupported version {}", self.version)));
        }
        let dims = &self.layer_dims;
        if dims.len() < 2 || dims.contains(&0) || self.layers.len() != dims.len() - 1 {
            return Err(ModelError::Format(format!("inconsistent layer_dims {dims:?}")));
        }
        let layers = self
            .layers
            .into_iter()
            .zip(dims.windows(2))
            .map(|(l, w)| {
                let weights = Array2::from_shape_vec((w[0], w[1]), l.weights)
                    .map_err(|e| ModelError::Format(format!("weights: {e}")))?;
                if l.bias.len() != w[1] {
                    return Err(ModelError::Format("bias length mismatch".into()));
                }
                Ok(Dense { weights, bias: Array1::from(l.bias) })
            })
            .collect::<Result<Vec<_>, _>>()?;
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(ModelError::InvalidDropout(self.dropout_rate));
        }
        let network = Mlp { layers, dropout_rate: self.dropout_rate };
        if !network.is_finite() {
            return Err(ModelError::Format("non-finite parameters".into()));
        }
        let rss_range = RssRange::new(self.rss_floor_dbm, self.rss_ceil_dbm)
            .map_err(|e| ModelError::Format(e.to_string()))?;
        let n_towers = self.towers.len();
        let towers = TowerIndex::from_ids(self.towers);
        if towers.len() != n_towers {
            return Err(ModelError::Format("duplicate tower ids".into()));
        }
        let origin = GeoPoint { lat_deg: self.grid.origin_lat_deg, lon_deg: self.grid.origin_lon_deg };
        let grid =
            VirtualGrid::from_parts(origin, self.grid.cell_length_m, self.grid.n_cols, self.grid.n_rows)
                .map_err(|e| ModelError::Format(e.to_string()))?;
        FingerprintModel::new(network, towers, rss_range, grid)
            .map_err(|e| ModelError::Format(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::FeatureVector;

    #[test]
    fn softmax_examples() {
        let p = softmax(&[2.0, 2.0, 2.0, 2.0]);
        assert!(p.0.iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let p = softmax(&[0.0, 3f64.ln()]);
        assert!((p.0[0] - 0.25).abs() < 1e-15 && (p.0[1] - 0.75).abs() < 1e-15);
        let p = softmax(&[1000.0, 0.0]);
        assert!(p.0.iter().all(|v| v.is_finite()));
        assert!((p.0[0] - 1.0).abs() < 1e-15 && p.0[1] < 1e-300);
    }

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(cross_entropy(&Posterior(vec![0.0, 1.0]), CellId(1)), 0.0);
        let u = Posterior(vec![0.25; 4]);
        assert!((cross_entropy(&u, CellId(2)) - 4f64.ln()).abs() < 1e-15);
        let l = cross_entropy(&Posterior(vec![1.0, 0.0]), CellId(1));
        assert!((l - 27.631_021_115_928_547).abs() < 1e-9);
    }

    #[test]
    fn init_is_deterministic_and_shaped() {
        let a = Mlp::init(185, 120, &DEFAULT_HIDDEN, 0.2, 11).unwrap();
        let b = Mlp::init(185, 120, &DEFAULT_HIDDEN, 0.2, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.layers[0].weights.dim(), (185, 40));
        assert_eq!(a.layer_dims(), vec![185, 40, 256, 40, 120]);
        let limit = (6.0f64 / 225.0).sqrt();
        assert!(a.layers[0].weights.iter().all(|w| w.abs() <= limit));
        assert!(a.layers.iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));

        let lr = Mlp::init(7, 3, &[], 0.0, 1).unwrap();
        assert_eq!(lr.layers.len(), 1);
        assert_eq!(lr.layers[0].weights.dim(), (7, 3));
        assert!(Mlp::init(0, 3, &[], 0.0, 1).is_err());
        assert!(Mlp::init(3, 3, &[], 1.0, 1).is_err());
    }

    #[test]
    fn forward_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::init(5, 4, &[8, 6], 0.0, 2).unwrap();
        let x = [0.1, 0.5, 0.0, 0.9, 0.3];
        let (t, _) = net.forward(&x, Mode::Train, &mut rng).unwrap();
        let (e, _) = net.forward(&x, Mode::Eval, &mut rng).unwrap();
        assert_eq!(t, e);
        assert!(matches!(
            net.forward(&x[..3], Mode::Eval, &mut rng),
            Err(ModelError::DimensionMismatch { .. })
        ));

        let mut lr = Mlp::init(3, 2, &[], 0.0, 2).unwrap();
        lr.layers[0].bias = Array1::from(vec![0.7, -1.5]);
        assert_eq!(lr.logits(&[0.0; 3]).unwrap(), vec![0.7, -1.5]);

        let drop = Mlp::init(5, 4, &[8, 6], 0.5, 2).unwrap();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            (0..5)
                .map(|_| drop.forward(&x, Mode::Train, &mut rng).unwrap().0)
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn zero_learning_rate_leaves_model_unchanged() {
        let mut net = Mlp::init(3, 2, &[4], 0.2, 5).unwrap();
        let before = net.clone();
        let samples = vec![
            LabeledSample { features: FeatureVector(vec![0.1, 0.2, 0.3]), label: CellId(1) },
            LabeledSample { features: FeatureVector(vec![0.9, 0.0, 0.3]), label: CellId(0) },
        ];
        let cfg = TrainingConfig { epochs: 5, learning_rate: 0.0, batch_size: 1, ..Default::default() };
        net.train(&samples, &cfg).unwrap();
        assert_eq!(net.layers, before.layers);
    }

    #[test]
    fn single_sample_memorized() {
        let mut net = Mlp::init(4, 6, &[10], 0.0, 5).unwrap();
        let s = LabeledSample { features: FeatureVector(vec![0.2, 0.8, 0.0, 0.5]), label: CellId(4) };
        let cfg = TrainingConfig { epochs: 300, learning_rate: 0.1, batch_size: 1, dropout_rate: 0.0, seed: 1 };
        net.train(std::slice::from_ref(&s), &cfg).unwrap();
        let p = net.posterior(s.features.as_slice()).unwrap();
        assert_eq!(argmax(&p.0), 4);
    }

    #[test]
    fn train_rejects_bad_input() {
        let mut net = Mlp::init(2, 2, &[], 0.0, 5).unwrap();
        let cfg = TrainingConfig { epochs: 1, ..Default::default() };
        assert!(matches!(net.train(&[], &cfg), Err(ModelError::EmptyTrainingSet)));
        let bad = [LabeledSample { features: FeatureVector(vec![0.1, 0.2]), label: CellId(2) }];
        assert!(matches!(net.train(&bad, &cfg), Err(ModelError::InvalidLabel { .. })));
        let cfg0 = TrainingConfig { epochs: 0, ..Default::default() };
        assert!(net.train(&bad, &cfg0).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let mut net = Mlp::init(2, 2, &[3], 0.0, 5).unwrap();
        let samples = [
            LabeledSample { features: FeatureVector(vec![1.0, 0.0]), label: CellId(0) },
            LabeledSample { features: FeatureVector(vec![0.0, 1.0]), label: CellId(1) },
        ];
        let cfg = TrainingConfig { epochs: 50, learning_rate: 1e300, batch_size: 1, dropout_rate: 0.0, seed: 1 };
        assert!(matches!(net.train(&samples, &cfg), Err(ModelError::NonFinite { .. })));
    }
}
