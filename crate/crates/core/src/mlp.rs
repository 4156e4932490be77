//! Dense forward charting network and its three training modes: supervised
//! fingerprinting, Siamese channel charting and bearing-augmented charting.
//!
//! Training runs in single precision; the network is generic over the float
//! type so gradients can be checked in double precision. A training step
//! sends every distinct cluster of the batch through the network once, so
//! both branches of a Siamese pair always read the same parameters.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis, LinalgScalar, ScalarOperand, Zip};
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aoa::{log_bessel_i0, AoAEstimate, TriangulationResult};
use crate::datamodel::ScenarioGeometry;
use crate::dissim::DissimilarityMatrix;
use crate::error::{Error, Result};
use crate::io::{put_f64, put_u32, Reader};

pub trait Real: LinalgScalar + Float + ScalarOperand + Send + Sync + std::fmt::Debug + 'static {}

impl Real for f32 {}
impl Real for f64 {}

fn cast<T: Real>(v: f64) -> T {
    <T as num_traits::NumCast>::from(v).unwrap()
}

fn to_f64<T: Real>(v: T) -> f64 {
    v.to_f64().unwrap()
}

pub const HIDDEN_WIDTHS: [usize; 5] = [1024, 512, 256, 128, 64];

/// Fully connected layer `y = x W + b`, `W` stored input-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub weights: Array2<T>,
    pub bias: Array1<T>,
}

/// ReLU hidden layers followed by a linear output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    pub layers: Vec<Dense<T>>,
}

fn check_widths(widths: &[usize]) -> Result<()> {
    if widths.len() < 2 || widths.contains(&0) {
        return Err(Error::invalid(format!("invalid layer widths {widths:?}")));
    }
    Ok(())
}

impl<T: Real> Mlp<T> {
    pub fn zeros(widths: &[usize]) -> Result<Self> {
        check_widths(widths)?;
        let layers = widths
            .windows(2)
            .map(|w| Dense { weights: Array2::zeros((w[0], w[1])), bias: Array1::zeros(w[1]) })
            .collect();
        Ok(Self { layers })
    }

    /// He-style uniform initialization, `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`,
    /// zero biases. The draws are made in double precision so every float type
    /// starts from the same values.
    pub fn he_uniform(widths: &[usize], seed: u64) -> Result<Self> {
        let mut net = Self::zeros(widths)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut net.layers {
            let limit = (6.0 / layer.weights.nrows() as f64).sqrt();
            layer.weights.mapv_inplace(|_| cast(rng.random_range(-limit..limit)));
        }
        Ok(net)
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].weights.nrows()];
        w.extend(self.layers.iter().map(|l| l.weights.ncols()));
        w
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Outputs of every layer for a batch of rows; the last entry is the chart.
    fn trace(&self, x: ArrayView2<T>) -> Result<Vec<Array2<T>>> {
        if x.ncols() != self.input_width() {
            return Err(Error::shape(format!("input width {} != {}", x.ncols(), self.input_width())));
        }
        let last = self.layers.len() - 1;
        let mut outs: Vec<Array2<T>> = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let input = if l == 0 { x } else { outs[l - 1].view() };
            let mut h = input.dot(&layer.weights) + &layer.bias;
            if l < last {
                h.mapv_inplace(|v| v.max(T::zero()));
            }
            outs.push(h);
        }
        Ok(outs)
    }

    pub fn forward(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        Ok(self.trace(x)?.pop().unwrap())
    }

    /// Parameter gradients given the loss gradient at the output.
    fn backward(&self, x: ArrayView2<T>, outs: &[Array2<T>], grad_out: Array2<T>) -> Vec<Dense<T>> {
        let mut delta = grad_out;
        let mut grads = Vec::with_capacity(self.layers.len());
        for l in (0..self.layers.len()).rev() {
            let input = if l == 0 { x } else { outs[l - 1].view() };
            let weights = input.t().dot(&delta);
            let bias = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut d = delta.dot(&self.layers[l].weights.t());
                Zip::from(&mut d).and(&outs[l - 1]).for_each(|d, &h| {
                    if h <= T::zero() {
                        *d = T::zero();
                    }
                });
                delta = d;
            }
            grads.push(Dense { weights, bias });
        }
        grads.reverse();
        grads
    }
}

/// Adam with per-parameter step sizes.
struct Adam<T> {
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Dense<T>>,
    v: Vec<Dense<T>>,
}

impl<T: Real> Adam<T> {
    fn new(net: &Mlp<T>) -> Self {
        let zeros = |net: &Mlp<T>| {
            net.layers
                .iter()
                .map(|l| Dense { weights: Array2::zeros(l.weights.raw_dim()), bias: Array1::zeros(l.bias.len()) })
                .collect()
        };
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: zeros(net), v: zeros(net) }
    }

    fn step(&mut self, net: &mut Mlp<T>, grads: &[Dense<T>], lr: f64) {
        self.t += 1;
        let step = lr * (1.0 - self.beta2.powi(self.t)).sqrt() / (1.0 - self.beta1.powi(self.t));
        let (b1, b2, eps, step) = (cast::<T>(self.beta1), cast::<T>(self.beta2), cast::<T>(self.eps), cast::<T>(step));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let update = |p: &mut T, m: &mut T, v: &mut T, g: &T| {
            *m = b1 * *m + one_b1 * *g;
            *v = b2 * *v + one_b2 * *g * *g;
            *p = *p - step * *m / (v.sqrt() + eps);
        };
        for (((layer, m), v), g) in net.layers.iter_mut().zip(&mut self.m).zip(&mut self.v).zip(grads) {
            Zip::from(&mut layer.weights).and(&mut m.weights).and(&mut v.weights).and(&g.weights).for_each(update);
            Zip::from(&mut layer.bias).and(&mut m.bias).and(&mut v.bias).and(&g.bias).for_each(update);
        }
    }
}

/// `(d - |y - x|)^2 / (d + beta)`.
pub fn siamese_loss(d: f64, x: [f64; 2], y: [f64; 2], beta: f64) -> f64 {
    siamese_loss_with_grad(d, x, y, beta).0
}

/// Siamese loss and its gradients with respect to `x` and `y`. At `x = y` the
/// zero subgradient is used.
pub fn siamese_loss_with_grad(d: f64, x: [f64; 2], y: [f64; 2], beta: f64) -> (f64, [f64; 2], [f64; 2]) {
    let diff = [y[0] - x[0], y[1] - x[1]];
    let r = diff[0].hypot(diff[1]);
    let denom = d + beta;
    let loss = (d - r) * (d - r) / denom;
    if r == 0.0 {
        return (loss, [0.0; 2], [0.0; 2]);
    }
    let c = -2.0 * (d - r) / (denom * r);
    let gy = [c * diff[0], c * diff[1]];
    (loss, [-gy[0], -gy[1]], gy)
}

/// Per-cluster bearing estimates and the geometry needed to score a chart
/// position against them.
#[derive(Clone, Debug)]
pub struct BearingContext {
    pub geometry: ScenarioGeometry,
    /// Height at which chart positions are lifted to 3-D.
    pub height: f64,
    pub clusters: Vec<Vec<AoAEstimate>>,
}

impl BearingContext {
    pub fn from_triangulation(geometry: ScenarioGeometry, height: f64, results: &[TriangulationResult]) -> Self {
        let clusters = results.iter().map(|r| r.estimates.iter().flatten().copied().collect()).collect();
        Self { geometry, height, clusters }
    }

    /// Log of the von Mises bearing likelihood of cluster `c` at `xy` and its
    /// gradient. A cluster without estimates contributes zero; so does an array
    /// whose azimuth is undefined at `xy`.
    pub fn log_likelihood(&self, c: usize, xy: [f64; 2]) -> (f64, [f64; 2]) {
        let point = [xy[0], xy[1], self.height];
        let (mut value, mut grad) = (0.0, [0.0; 2]);
        for e in &self.clusters[c] {
            if let Some((theta, g)) = self.geometry.azimuth_with_gradient(e.array, point) {
                let delta = theta - e.azimuth;
                value += e.kappa * delta.cos() - (2.0 * std::f64::consts::PI).ln() - log_bessel_i0(e.kappa);
                let s = -e.kappa * delta.sin();
                grad[0] += s * g[0];
                grad[1] += s * g[1];
            }
        }
        (value, grad)
    }
}

/// `(1 - lambda) L_siam - lambda (log L_tri(y) + log L_tri(x))` for clusters `i` (at `x`) and `j` (at `y`).
#[allow(clippy::too_many_arguments)]
pub fn combined_loss(
    d: f64,
    x: [f64; 2],
    y: [f64; 2],
    beta: f64,
    lambda: f64,
    bearings: &BearingContext,
    i: usize,
    j: usize,
) -> f64 {
    combined_loss_with_grad(d, x, y, beta, lambda, bearings, i, j).0
}

/// [`combined_loss`] and its gradients with respect to both chart points.
#[allow(clippy::too_many_arguments)]
pub fn combined_loss_with_grad(
    d: f64,
    x: [f64; 2],
    y: [f64; 2],
    beta: f64,
    lambda: f64,
    bearings: &BearingContext,
    i: usize,
    j: usize,
) -> (f64, [f64; 2], [f64; 2]) {
    let (ls, gx, gy) = siamese_loss_with_grad(d, x, y, beta);
    if lambda == 0.0 {
        return (ls, gx, gy);
    }
    let (tx, tgx) = bearings.log_likelihood(i, x);
    let (ty, tgy) = bearings.log_likelihood(j, y);
    let w = 1.0 - lambda;
    (
        w * ls - lambda * (tx + ty),
        [w * gx[0] - lambda * tgx[0], w * gx[1] - lambda * tgx[1]],
        [w * gy[0] - lambda * tgy[0], w * gy[1] - lambda * tgy[1]],
    )
}

/// Mean pair loss over `pairs` and its parameter gradient. `objective` maps
/// `(i, j, chart_i, chart_j)` to the pair loss and its gradients.
pub fn pair_batch_gradient<T: Real>(
    net: &Mlp<T>,
    x: ArrayView2<T>,
    pairs: &[(usize, usize)],
    objective: &dyn Fn(usize, usize, [f64; 2], [f64; 2]) -> (f64, [f64; 2], [f64; 2]),
) -> Result<(f64, Vec<Dense<T>>)> {
    let mut rows: Vec<usize> = pairs.iter().flat_map(|&(i, j)| [i, j]).collect();
    rows.sort_unstable();
    rows.dedup();
    let xb = x.select(Axis(0), &rows);
    let outs = net.trace(xb.view())?;
    let out = outs.last().unwrap();
    let at = |i: usize| rows.binary_search(&i).unwrap();
    let point = |r: usize| [to_f64(out[(r, 0)]), to_f64(out[(r, 1)])];
    let mut grad = Array2::<f64>::zeros((rows.len(), 2));
    let mut loss = 0.0;
    for &(i, j) in pairs {
        let (a, b) = (at(i), at(j));
        let (l, gi, gj) = objective(i, j, point(a), point(b));
        loss += l;
        for k in 0..2 {
            grad[(a, k)] += gi[k];
            grad[(b, k)] += gj[k];
        }
    }
    let scale = 1.0 / pairs.len() as f64;
    let grad_out = grad.mapv(|g| cast::<T>(g * scale));
    Ok((loss * scale, net.backward(xb.view(), &outs, grad_out)))
}

/// Mean squared position error over `rows` and its parameter gradient.
pub fn regression_batch_gradient<T: Real>(
    net: &Mlp<T>,
    x: ArrayView2<T>,
    labels: &[[f64; 2]],
    rows: &[usize],
) -> Result<(f64, Vec<Dense<T>>)> {
    let xb = x.select(Axis(0), rows);
    let outs = net.trace(xb.view())?;
    let out = outs.last().unwrap();
    let scale = 1.0 / rows.len() as f64;
    let mut loss = 0.0;
    let mut grad = Array2::<T>::zeros((rows.len(), 2));
    for (r, &i) in rows.iter().enumerate() {
        for k in 0..2 {
            let e = to_f64(out[(r, k)]) - labels[i][k];
            loss += e * e;
            grad[(r, k)] = cast(2.0 * e * scale);
        }
    }
    Ok((loss * scale, net.backward(xb.view(), &outs, grad)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairSampling {
    /// Both clusters of a pair drawn uniformly, distinct.
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Learning rate multiplier applied after every epoch.
    pub lr_decay: f64,
    /// Pairs per step for charting, samples per step for fingerprinting.
    pub batch_size: usize,
    pub epochs: usize,
    pub beta: f64,
    pub lambda: f64,
    pub seed: u64,
    pub pair_sampling: PairSampling,
    pub hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            lr_decay: 1.0,
            batch_size: 256,
            epochs: 200,
            beta: 0.1,
            lambda: 0.1,
            seed: 0,
            pair_sampling: PairSampling::Uniform,
            hidden: HIDDEN_WIDTHS.to_vec(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::invalid("learning rate must be positive and its decay in (0, 1]"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::invalid("batch size and epochs must be at least 1"));
        }
        if !(self.beta > 0.0) {
            return Err(Error::invalid(format!("beta must be positive, got {}", self.beta)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::invalid(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        if self.hidden.contains(&0) {
            return Err(Error::invalid("hidden widths must be positive"));
        }
        Ok(())
    }

    fn widths(&self, input: usize) -> Vec<usize> {
        let mut w = vec![input];
        w.extend(&self.hidden);
        w.push(2);
        w
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrainingMode {
    #[serde(rename = "fingerprint")]
    Fingerprint,
    #[serde(rename = "cc")]
    Siamese,
    #[serde(rename = "cc-aug")]
    Augmented,
}

impl TrainingMode {
    fn tag(self) -> u32 {
        match self {
            Self::Fingerprint => 0,
            Self::Siamese => 1,
            Self::Augmented => 2,
        }
    }

    fn from_tag(t: u32) -> Result<Self> {
        Ok(match t {
            0 => Self::Fingerprint,
            1 => Self::Siamese,
            2 => Self::Augmented,
            _ => return Err(Error::format(format!("unknown training mode {t}"))),
        })
    }
}

/// Per-feature centering followed by one global scale giving unit mean
/// square, fitted on the training features.
#[derive(Clone, Debug, PartialEq)]
pub struct InputScaler {
    pub mean: Vec<f64>,
    pub scale: f64,
}

impl InputScaler {
    pub fn fit(rows: &[&[f32]]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(Error::invalid("no feature vectors"));
        };
        let d = first.len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::shape("feature vectors differ in length"));
        }
        if rows.iter().any(|r| r.iter().any(|v| !v.is_finite())) {
            return Err(Error::invalid("feature vectors contain non-finite values"));
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, &v) in mean.iter_mut().zip(r.iter()) {
                *m += f64::from(v);
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut ms = 0.0;
        for r in rows {
            for (m, &v) in mean.iter().zip(r.iter()) {
                ms += (f64::from(v) - m).powi(2);
            }
        }
        ms /= n * d as f64;
        let scale = if ms > 0.0 { 1.0 / ms.sqrt() } else { 1.0 };
        Ok(Self { mean, scale })
    }

    pub fn transform(&self, rows: &[&[f32]]) -> Result<Array2<f32>> {
        let d = self.mean.len();
        let mut x = Array2::<f32>::zeros((rows.len(), d));
        for (mut out, r) in x.outer_iter_mut().zip(rows) {
            if r.len() != d {
                return Err(Error::shape(format!("feature length {} != {d}", r.len())));
            }
            for ((o, &v), m) in out.iter_mut().zip(r.iter()).zip(&self.mean) {
                *o = ((f64::from(v) - m) * self.scale) as f32;
            }
        }
        Ok(x)
    }
}

/// A trained network with its input scaling.
#[derive(Clone, Debug, PartialEq)]
pub struct ChartModel {
    pub mode: TrainingMode,
    pub scaler: InputScaler,
    pub net: Mlp<f32>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: ChartModel,
    /// Mean step loss of every epoch.
    pub loss_history: Vec<f64>,
}

impl ChartModel {
    pub fn predict(&self, rows: &[&[f32]]) -> Result<Vec<[f64; 2]>> {
        let mut out = Vec::with_capacity(rows.len());
        for chunk in rows.chunks(512) {
            let x = self.scaler.transform(chunk)?;
            let y = self.net.forward(x.view())?;
            out.extend(y.outer_iter().map(|r| [f64::from(r[0]), f64::from(r[1])]));
        }
        Ok(out)
    }

    /// Writes the model with every parameter in double precision.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        w.write_all(MAGIC)?;
        put_u32(&mut w, VERSION)?;
        put_u32(&mut w, self.mode.tag())?;
        let widths = self.net.widths();
        put_u32(&mut w, widths.len() as u32)?;
        for &width in &widths {
            put_u32(&mut w, width as u32)?;
        }
        put_f64(&mut w, self.scaler.scale)?;
        for &m in &self.scaler.mean {
            put_f64(&mut w, m)?;
        }
        for layer in &self.net.layers {
            for &v in layer.weights.iter().chain(layer.bias.iter()) {
                put_f64(&mut w, f64::from(v))?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        let mut r = Reader::new(&bytes, "model checkpoint");
        r.magic(MAGIC, VERSION)?;
        let mode = TrainingMode::from_tag(r.u32()?)?;
        let count = r.u32()? as usize;
        if count > 64 {
            return Err(Error::format(format!("model checkpoint: {count} layer widths")));
        }
        let widths = (0..count).map(|_| r.u32().map(|w| w as usize)).collect::<Result<Vec<_>>>()?;
        let mut net = Mlp::<f32>::zeros(&widths).map_err(|e| Error::format(e.to_string()))?;
        let scale = r.f64()?;
        let mean = (0..widths[0]).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        for layer in &mut net.layers {
            for v in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *v = r.f64()? as f32;
            }
        }
        r.finish()?;
        Ok(Self { mode, scaler: InputScaler { mean, scale }, net })
    }
}

const MAGIC: &[u8; 4] = b"PCCN";
const VERSION: u32 = 1;

pub fn write_loss_history(history: &[f64], path: &Path) -> Result<()> {
    let mut s = String::from("epoch,loss\n");
    for (e, l) in history.iter().enumerate() {
        writeln!(s, "{},{l}", e + 1).unwrap();
    }
    fs::write(path, s)?;
    Ok(())
}

fn prepare(features: &[&[f32]], cfg: &TrainConfig) -> Result<(InputScaler, Array2<f32>, Mlp<f32>)> {
    cfg.validate()?;
    let scaler = InputScaler::fit(features)?;
    let x = scaler.transform(features)?;
    let net = Mlp::he_uniform(&cfg.widths(x.ncols()), cfg.seed)?;
    Ok((scaler, x, net))
}

fn check_loss(loss: f64, epoch: usize, step: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Numerical(format!("loss became {loss} at epoch {} step {}", epoch + 1, step + 1)))
    }
}

/// Supervised regression of cluster positions with mean squared error. The
/// output bias starts at the label mean.
pub fn train_fingerprint(features: &[&[f32]], labels: &[[f64; 2]], cfg: &TrainConfig) -> Result<TrainOutcome> {
    if features.len() != labels.len() {
        return Err(Error::shape(format!("{} feature vectors for {} labels", features.len(), labels.len())));
    }
    let (scaler, x, mut net) = prepare(features, cfg)?;
    let n = labels.len();
    let last = net.layers.last_mut().unwrap();
    for k in 0..2 {
        last.bias[k] = (labels.iter().map(|l| l[k]).sum::<f64>() / n as f64) as f32;
    }
    let mut adam = Adam::new(&net);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut lr = cfg.learning_rate;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut steps = 0;
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let (loss, grads) = regression_batch_gradient(&net, x.view(), labels, batch)?;
            check_loss(loss, epoch, step)?;
            adam.step(&mut net, &grads, lr);
            total += loss;
            steps += 1;
        }
        history.push(total / steps as f64);
        lr *= cfg.lr_decay;
    }
    Ok(TrainOutcome { model: ChartModel { mode: TrainingMode::Fingerprint, scaler, net }, loss_history: history })
}

fn sample_pairs(rng: &mut ChaCha8Rng, n: usize, count: usize) -> Vec<(usize, usize)> {
    (0..count)
        .map(|_| {
            let i = rng.random_range(0..n);
            let j = (i + rng.random_range(1..n)) % n;
            (i, j)
        })
        .collect()
}

fn train_pairs(
    features: &[&[f32]],
    cfg: &TrainConfig,
    mode: TrainingMode,
    objective: &dyn Fn(usize, usize, [f64; 2], [f64; 2]) -> (f64, [f64; 2], [f64; 2]),
) -> Result<TrainOutcome> {
    let n = features.len();
    if n < 2 {
        return Err(Error::invalid("charting needs at least two clusters"));
    }
    let (scaler, x, mut net) = prepare(features, cfg)?;
    let mut adam = Adam::new(&net);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let steps = n.div_ceil(2 * cfg.batch_size);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut lr = cfg.learning_rate;
    for epoch in 0..cfg.epochs {
        let mut total = 0.0;
        for step in 0..steps {
            let pairs = sample_pairs(&mut rng, n, cfg.batch_size);
            let (loss, grads) = pair_batch_gradient(&net, x.view(), &pairs, objective)?;
            check_loss(loss, epoch, step)?;
            adam.step(&mut net, &grads, lr);
            total += loss;
        }
        history.push(total / steps as f64);
        lr *= cfg.lr_decay;
    }
    Ok(TrainOutcome { model: ChartModel { mode, scaler, net }, loss_history: history })
}

fn check_matrix(n: usize, d: &DissimilarityMatrix) -> Result<()> {
    if d.n != n {
        return Err(Error::shape(format!("{n} feature vectors for a {}x{} dissimilarity matrix", d.n, d.n)));
    }
    Ok(())
}

/// Siamese channel charting. An epoch is `ceil(n / (2 batch))` steps, so it
/// visits about as many cluster slots as there are clusters.
pub fn train_siamese(features: &[&[f32]], d: &DissimilarityMatrix, cfg: &TrainConfig) -> Result<TrainOutcome> {
    check_matrix(features.len(), d)?;
    let beta = cfg.beta;
    train_pairs(features, cfg, TrainingMode::Siamese, &|i, j, x, y| siamese_loss_with_grad(d.get(i, j), x, y, beta))
}

/// Channel charting with the bearing likelihood term; `d` should be in metres.
pub fn train_augmented(
    features: &[&[f32]],
    d: &DissimilarityMatrix,
    bearings: &BearingContext,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    check_matrix(features.len(), d)?;
    if bearings.clusters.len() != features.len() {
        return Err(Error::shape(format!(
            "{} bearing sets for {} feature vectors",
            bearings.clusters.len(),
            features.len()
        )));
    }
    let (beta, lambda) = (cfg.beta, cfg.lambda);
    train_pairs(features, cfg, TrainingMode::Augmented, &|i, j, x, y| {
        combined_loss_with_grad(d.get(i, j), x, y, beta, lambda, bearings, i, j)
    })
}
