//! Quantized MLP training with weights realized as device conductances.
//!
//! The network is input-hidden-output with sigmoid hidden units, softmax
//! outputs, no biases, and a squared-error loss (summed over classes,
//! averaged over the batch). In device mode every weight lives on a
//! simulated device: reads map conductance to weight through an affine map,
//! updates are converted to signed pulse counts and applied one stochastic
//! pulse at a time, and weights, activations, errors, and gradients are all
//! quantized to a fixed word length. Ideal-float mode bypasses devices and
//! quantization entirely and serves as the reference.

use crate::device::{ConductanceBounds, Direction, JumpTablePair, Profile};
use crate::error::{Error, Result};
use crate::mnist::ReducedMnist;
use crate::rng::{self, Stream};
use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

pub const HIDDEN_UNITS: usize = 50;
pub const NUM_CLASSES: usize = 10;

/// Fixed-point word length and rounding behavior. Each tensor gets the
/// minimal power-of-two scale that fits its largest magnitude; values round
/// to nearest with ties to even.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantSpec {
    pub word_bits: u32,
}

impl Default for QuantSpec {
    fn default() -> Self {
        Self { word_bits: 6 }
    }
}

impl QuantSpec {
    /// Largest representable integer level: 2^(bits-1) - 1.
    pub fn qmax(&self) -> f64 {
        ((1u64 << (self.word_bits - 1)) - 1) as f64
    }
}

/// Quantizes a tensor in place. An all-zero tensor is left untouched.
pub fn quantize(xs: &mut [f64], spec: &QuantSpec) {
    assert!(spec.word_bits >= 2);
    let qmax = spec.qmax();
    let maxabs = xs.iter().fold(0.0_f64, |a, &x| a.max(x.abs()));
    if maxabs == 0.0 {
        return;
    }
    // Minimal integer exponent with qmax * 2^e >= maxabs.
    let mut e = (maxabs / qmax).log2().ceil() as i32;
    while qmax * 2f64.powi(e) < maxabs {
        e += 1;
    }
    while qmax * 2f64.powi(e - 1) >= maxabs {
        e -= 1;
    }
    let scale = 2f64.powi(e);
    for x in xs.iter_mut() {
        *x = (*x / scale).round_ties_even().clamp(-qmax, qmax) * scale;
    }
}

fn quantize_array(a: &mut Array2<f64>, spec: &QuantSpec) {
    quantize(a.as_slice_mut().expect("standard layout"), spec);
}

/// Weight value of a conductance under the symmetric affine map that sends
/// the window endpoints to -w_max and +w_max exactly.
pub fn weight_from_g(g: f64, bounds: &ConductanceBounds, w_max: f64) -> f64 {
    w_max * ((g - bounds.g_min) - (bounds.g_max - g)) / bounds.range()
}

/// Inverse of [`weight_from_g`], clipped into the window.
pub fn g_from_weight(w: f64, bounds: &ConductanceBounds, w_max: f64) -> f64 {
    bounds.clip(bounds.g_min + (w + w_max) * bounds.range() / (2.0 * w_max))
}

/// One weight matrix realized as device conductances.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossbarLayer {
    pub conductances: Array2<f64>,
    /// Weight magnitude at the window edges: sqrt(1 / fan_in).
    pub w_max: f64,
    /// Pulse cap: pulses needed to traverse the window along the mean
    /// profiles.
    pub p_max: usize,
}

impl CrossbarLayer {
    /// Initializes conductances so the mapped weights match `weights`.
    pub fn from_weights(
        weights: &Array2<f64>,
        bounds: &ConductanceBounds,
        w_max: f64,
        p_max: usize,
    ) -> Self {
        Self {
            conductances: weights.mapv(|w| g_from_weight(w, bounds, w_max)),
            w_max,
            p_max,
        }
    }

    pub fn read_weights(&self, bounds: &ConductanceBounds) -> Array2<f64> {
        self.conductances
            .mapv(|g| weight_from_g(g, bounds, self.w_max))
    }
}

/// Signed pulse count for one gradient entry: the desired weight motion
/// eta * (-grad), expressed as a fraction of the full weight span 2*w_max,
/// scaled by the device's pulse range and truncated toward zero. Magnitude
/// caps at p_max.
pub fn pulses_from_gradient(grad: f64, eta: f64, w_max: f64, p_max: usize) -> i64 {
    let raw = p_max as f64 * eta * (-grad) / (2.0 * w_max);
    (raw.trunc() as i64).clamp(-(p_max as i64), p_max as i64)
}

/// Pulses needed to cross the conductance window along the mean profile,
/// separately per direction; the larger count wins. Errors out at 10^5
/// pulses (unreachable far bound, e.g. a mean profile crossing zero).
pub fn compute_p_max(tables: &JumpTablePair) -> Result<usize> {
    const CAP: usize = 100_000;
    let b = tables.bounds;
    let tol = 1e-6 * b.range();
    let walk = |profile: &Profile, start: f64, goal: f64| -> Result<usize> {
        let mut g = start;
        for k in 0..=CAP {
            if (g - goal).abs() <= tol {
                return Ok(k);
            }
            g = b.clip(g + profile.eval(g).0);
        }
        Err(Error::PulseCapExceeded { cap: CAP as u64 })
    };
    let set = walk(&tables.set_table, b.g_min, b.g_max)?;
    let reset = walk(&tables.reset_table, b.g_max, b.g_min)?;
    Ok(set.max(reset))
}

/// Applies each device's pulses sequentially in row-major order, one
/// stochastic draw per pulse.
pub fn apply_update(
    layer: &mut CrossbarLayer,
    tables: &JumpTablePair,
    pulses: &Array2<i64>,
    rng: &mut Stream,
) -> Result<()> {
    if layer.conductances.shape() != pulses.shape() {
        return Err(Error::ShapeMismatch(format!(
            "conductances {:?} vs pulses {:?}",
            layer.conductances.shape(),
            pulses.shape()
        )));
    }
    for (g, &p) in layer.conductances.iter_mut().zip(pulses.iter()) {
        let dir = if p > 0 { Direction::Set } else { Direction::Reset };
        for _ in 0..p.unsigned_abs() {
            *g = tables.apply_pulse(dir, *g, rng::open_unit(rng))?;
        }
    }
    Ok(())
}

/// Activations of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub hidden: Array2<f64>,
    pub output: Array2<f64>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn softmax_rows(z: &mut Array2<f64>) {
    for mut row in z.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
}

fn check_dims(w1: &Array2<f64>, w2: &Array2<f64>, x: &Array2<f64>) -> Result<()> {
    if x.ncols() != w1.nrows() || w1.ncols() != w2.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "x {:?}, w1 {:?}, w2 {:?}",
            x.shape(),
            w1.shape(),
            w2.shape()
        )));
    }
    Ok(())
}

/// Forward pass; `quant` of None is the ideal-float path, Some quantizes
/// both activation tensors.
pub fn forward(
    w1: &Array2<f64>,
    w2: &Array2<f64>,
    x: &Array2<f64>,
    quant: Option<&QuantSpec>,
) -> Result<ForwardPass> {
    check_dims(w1, w2, x)?;
    let mut hidden = x.dot(w1);
    hidden.mapv_inplace(sigmoid);
    if let Some(q) = quant {
        quantize_array(&mut hidden, q);
    }
    let mut output = hidden.dot(w2);
    softmax_rows(&mut output);
    if let Some(q) = quant {
        quantize_array(&mut output, q);
    }
    Ok(ForwardPass { hidden, output })
}

/// Squared-error loss: summed over classes, averaged over the batch.
pub fn mse_loss(output: &Array2<f64>, targets: &Array2<f64>) -> f64 {
    let diff = output - targets;
    diff.mapv(|d| d * d).sum() / output.nrows() as f64
}

/// Gradients of [`mse_loss`] w.r.t. both weight matrices. `quant` of Some
/// quantizes the backpropagated error tensors and the gradients.
pub fn backward(
    w2: &Array2<f64>,
    x: &Array2<f64>,
    targets: &Array2<f64>,
    fwd: &ForwardPass,
    quant: Option<&QuantSpec>,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if targets.shape() != fwd.output.shape() || x.nrows() != fwd.output.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "targets {:?} vs output {:?}",
            targets.shape(),
            fwd.output.shape()
        )));
    }
    let batch = x.nrows() as f64;
    let dldy = (&fwd.output - targets) * (2.0 / batch);
    // Softmax backward: dz_k = y_k (dldy_k - sum_c dldy_c y_c).
    let inner = (&dldy * &fwd.output).sum_axis(Axis(1)).insert_axis(Axis(1));
    let mut dz2 = &fwd.output * &(&dldy - &inner);
    if let Some(q) = quant {
        quantize_array(&mut dz2, q);
    }
    let mut grad_w2 = fwd.hidden.t().dot(&dz2);
    let dh = dz2.dot(&w2.t());
    let mut dz1 = dh * &fwd.hidden * &fwd.hidden.mapv(|h| 1.0 - h);
    if let Some(q) = quant {
        quantize_array(&mut dz1, q);
    }
    let mut grad_w1 = x.t().dot(&dz1);
    if let Some(q) = quant {
        quantize_array(&mut grad_w1, q);
        quantize_array(&mut grad_w2, q);
    }
    Ok((grad_w1, grad_w2))
}

fn one_hot(labels: &[u8]) -> Array2<f64> {
    let mut t = Array2::zeros((labels.len(), NUM_CLASSES));
    for (i, &l) in labels.iter().enumerate() {
        t[[i, l as usize]] = 1.0;
    }
    t
}

fn argmax_accuracy(output: &Array2<f64>, labels: &[u8]) -> f64 {
    let hits = output
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &label)| {
            let mut best = 0usize;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best == label as usize
        })
        .count();
    hits as f64 / labels.len() as f64
}

/// What realizes the weights during training.
#[derive(Debug, Clone, Copy)]
pub enum ModelSource<'a> {
    /// Plain float SGD, no quantization. The reference network.
    IdealFloat,
    /// Conductance-backed weights updated through the given jump tables.
    Device(&'a JumpTablePair),
}

/// Which model produced a run; carried through to bias computations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProvenanceTag {
    Target,
    Binning,
    Optimized,
    IdealFloat,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub quant: QuantSpec,
    /// Pulse cap to use instead of walking the trained tables' mean
    /// profiles. The cap is a property of the physical device, so runs
    /// that simulate a fitted model of some device should carry the
    /// device's own cap; a fitted mean profile can stall (wrong-sign bins)
    /// even though the underlying device crosses its window fine.
    pub p_max_override: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            batch_size: 4096,
            epochs: 100,
            seed: 0,
            quant: QuantSpec::default(),
            p_max_override: None,
        }
    }
}

/// Per-epoch accuracy traces of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub train_accuracy: Vec<f64>,
    pub test_accuracy: Vec<f64>,
    pub config: TrainConfig,
    pub provenance: ProvenanceTag,
}

impl RunRecord {
    pub fn final_test_accuracy(&self) -> f64 {
        *self.test_accuracy.last().expect("at least one epoch")
    }
}

enum NetState {
    Float {
        w1: Array2<f64>,
        w2: Array2<f64>,
    },
    Device {
        l1: CrossbarLayer,
        l2: CrossbarLayer,
        tables: JumpTablePair,
    },
}

impl NetState {
    fn weights(&self, quant: &QuantSpec) -> (Array2<f64>, Array2<f64>) {
        match self {
            NetState::Float { w1, w2 } => (w1.clone(), w2.clone()),
            NetState::Device { l1, l2, tables } => {
                let mut w1 = l1.read_weights(&tables.bounds);
                let mut w2 = l2.read_weights(&tables.bounds);
                quantize_array(&mut w1, quant);
                quantize_array(&mut w2, quant);
                (w1, w2)
            }
        }
    }

    fn quant_spec<'a>(&self, quant: &'a QuantSpec) -> Option<&'a QuantSpec> {
        match self {
            NetState::Float { .. } => None,
            NetState::Device { .. } => Some(quant),
        }
    }
}

fn uniform_matrix(rng: &mut Stream, rows: usize, cols: usize, w_max: f64) -> Array2<f64> {
    let mut m = Array2::zeros((rows, cols));
    for v in m.iter_mut() {
        *v = rng::uniform(rng, -w_max, w_max);
    }
    m
}

fn batched_accuracy(
    w1: &Array2<f64>,
    w2: &Array2<f64>,
    images: &Array2<f64>,
    labels: &[u8],
    quant: Option<&QuantSpec>,
    batch: usize,
) -> Result<f64> {
    let n = images.nrows();
    let mut hits = 0.0;
    let mut start = 0;
    while start < n {
        let end = (start + batch).min(n);
        let x = images.slice(ndarray::s![start..end, ..]).to_owned();
        let fwd = forward(w1, w2, &x, quant)?;
        hits += argmax_accuracy(&fwd.output, &labels[start..end]) * (end - start) as f64;
        start = end;
    }
    Ok(hits / n as f64)
}

/// Trains the classifier with mini-batch gradient descent and records
/// full train/test accuracy after every epoch.
pub fn train(
    source: ModelSource,
    provenance: ProvenanceTag,
    cfg: &TrainConfig,
    data: &ReducedMnist,
) -> Result<RunRecord> {
    if cfg.learning_rate <= 0.0 || cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::InvalidSpec(format!(
            "learning_rate {}, epochs {}, batch_size {} must all be positive",
            cfg.learning_rate, cfg.epochs, cfg.batch_size
        )));
    }
    let input_dim = data.train_images.ncols();
    let w_max1 = (1.0 / input_dim as f64).sqrt();
    let w_max2 = (1.0 / HIDDEN_UNITS as f64).sqrt();

    let mut init1 = rng::stream(cfg.seed, "init", &[0]);
    let mut init2 = rng::stream(cfg.seed, "init", &[1]);
    let w1 = uniform_matrix(&mut init1, input_dim, HIDDEN_UNITS, w_max1);
    let w2 = uniform_matrix(&mut init2, HIDDEN_UNITS, NUM_CLASSES, w_max2);

    let mut state = match source {
        ModelSource::IdealFloat => NetState::Float { w1, w2 },
        ModelSource::Device(tables) => {
            let p_max = match cfg.p_max_override {
                Some(p) => p,
                None => compute_p_max(tables)?,
            };
            NetState::Device {
                l1: CrossbarLayer::from_weights(&w1, &tables.bounds, w_max1, p_max),
                l2: CrossbarLayer::from_weights(&w2, &tables.bounds, w_max2, p_max),
                tables: tables.clone(),
            }
        }
    };

    let n = data.train_images.nrows();
    let mut record = RunRecord {
        train_accuracy: Vec::with_capacity(cfg.epochs),
        test_accuracy: Vec::with_capacity(cfg.epochs),
        config: *cfg,
        provenance,
    };

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        let mut shuffle_rng = rng::stream(cfg.seed, "shuffle", &[epoch as u64]);
        rng::shuffle(&mut shuffle_rng, &mut order);

        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let x = data.train_images.select(Axis(0), chunk);
            let labels: Vec<u8> = chunk.iter().map(|&i| data.train_labels[i]).collect();
            let targets = one_hot(&labels);

            let (w1, w2) = state.weights(&cfg.quant);
            let quant = state.quant_spec(&cfg.quant);
            let fwd = forward(&w1, &w2, &x, quant)?;
            let (g1, g2) = backward(&w2, &x, &targets, &fwd, quant)?;

            match &mut state {
                NetState::Float { w1, w2 } => {
                    *w1 -= &(&g1 * cfg.learning_rate);
                    *w2 -= &(&g2 * cfg.learning_rate);
                }
                NetState::Device { l1, l2, tables } => {
                    for (layer_idx, (layer, grad)) in [(&mut *l1, &g1), (&mut *l2, &g2)]
                        .into_iter()
                        .enumerate()
                    {
                        let pulses = grad.mapv(|g| {
                            pulses_from_gradient(g, cfg.learning_rate, layer.w_max, layer.p_max)
                        });
                        let mut update_rng = rng::stream(
                            cfg.seed,
                            "update",
                            &[epoch as u64, batch_idx as u64, layer_idx as u64],
                        );
                        apply_update(layer, tables, &pulses, &mut update_rng)?;
                    }
                }
            }
        }

        let (w1, w2) = state.weights(&cfg.quant);
        let quant = state.quant_spec(&cfg.quant);
        record.train_accuracy.push(batched_accuracy(
            &w1,
            &w2,
            &data.train_images,
            &data.train_labels,
            quant,
            cfg.batch_size,
        )?);
        record.test_accuracy.push(batched_accuracy(
            &w1,
            &w2,
            &data.test_images,
            &data.test_labels,
            quant,
            cfg.batch_size,
        )?);
    }
    Ok(record)
}
