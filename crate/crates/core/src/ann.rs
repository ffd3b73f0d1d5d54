//! Feedforward networks (tanh hidden layers, linear output) trained in batch
//! mode with Møller's scaled conjugate gradient and validation-based early
//! stopping.

use std::path::Path;
use std::time::Instant;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::database::{sha256_hex, Database, HYPER_DIM};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream};
use crate::stats::{kde_on_grid, linspace, pearson, robust_sigma, silverman_bandwidth_1d, trapezoid};

pub const MODEL_FORMAT_VERSION: &str = "1";

const TAG_SPLIT: u64 = 0x7370_6c74;
const TAG_RESTART: u64 = 0x7273_7472;
const TAG_INIT: u64 = 0x696e_6974;

/// Per-component affine map of `[min, max]` onto `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Normalization {
    pub fn dim(&self) -> usize {
        self.min.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(self.min.iter().zip(&self.max)).map(|(v, (lo, hi))| 2.0 * (v - lo) / (hi - lo) - 1.0).collect()
    }

    pub fn invert(&self, y: &[f64]) -> Vec<f64> {
        y.iter().zip(self.min.iter().zip(&self.max)).map(|(v, (lo, hi))| lo + 0.5 * (v + 1.0) * (hi - lo)).collect()
    }

    fn apply_rows(&self, rows: &Array2<f64>) -> Array2<f64> {
        let mut out = rows.clone();
        for (c, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            let (lo, hi) = (self.min[c], self.max[c]);
            col.mapv_inplace(|v| 2.0 * (v - lo) / (hi - lo) - 1.0);
        }
        out
    }

    fn validate(&self) -> Result<()> {
        if self.min.len() != self.max.len() {
            return Err(Error::domain("normalization bounds have different lengths"));
        }
        for (c, (lo, hi)) in self.min.iter().zip(&self.max).enumerate() {
            if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::config(format!("column {c} has no spread (min {lo}, max {hi})")));
            }
        }
        Ok(())
    }
}

/// Column-wise min/max of `rows`.
pub fn fit_normalization<R: AsRef<[f64]>>(rows: &[R]) -> Result<Normalization> {
    let first = rows.first().ok_or_else(|| Error::config("cannot fit a normalization to no data"))?.as_ref();
    let mut min = first.to_vec();
    let mut max = first.to_vec();
    for r in rows {
        for (c, &v) in r.as_ref().iter().enumerate() {
            min[c] = min[c].min(v);
            max[c] = max[c].max(v);
        }
    }
    let n = Normalization { min, max };
    n.validate()?;
    Ok(n)
}

/// A fully connected network; weights of layer `l` are stored row-major with
/// one row per output unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub format_version: String,
    pub layer_sizes: Vec<usize>,
    pub hidden_activation: String,
    pub output_activation: String,
    pub weights: Vec<Vec<Vec<f64>>>,
    pub biases: Vec<Vec<f64>>,
    pub input_norm: Normalization,
    pub output_norm: Normalization,
    pub training_manifest_sha256: Option<String>,
}

impl MlpModel {
    /// Zero-weight network with identity-like normalizations.
    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::config(format!("invalid layer sizes {layer_sizes:?}")));
        }
        let unit = |n: usize| Normalization { min: vec![-1.0; n], max: vec![1.0; n] };
        Ok(MlpModel {
            format_version: MODEL_FORMAT_VERSION.into(),
            layer_sizes: layer_sizes.to_vec(),
            hidden_activation: "tanh".into(),
            output_activation: "linear".into(),
            weights: layer_sizes.windows(2).map(|w| vec![vec![0.0; w[0]]; w[1]]).collect(),
            biases: layer_sizes[1..].iter().map(|&n| vec![0.0; n]).collect(),
            input_norm: unit(layer_sizes[0]),
            output_norm: unit(*layer_sizes.last().expect("nonempty")),
            training_manifest_sha256: None,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("nonempty")
    }

    pub fn n_params(&self) -> usize {
        param_count(&self.layer_sizes)
    }

    /// Parameters flattened layer by layer as `[W (row-major), b]`.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            w.iter().for_each(|row| p.extend_from_slice(row));
            p.extend_from_slice(b);
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.n_params());
        let mut off = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            for row in w.iter_mut() {
                let n = row.len();
                row.copy_from_slice(&p[off..off + n]);
                off += n;
            }
            let n = b.len();
            b.copy_from_slice(&p[off..off + n]);
            off += n;
        }
    }

    /// Network output for one physical-unit input.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::domain(format!("input has {} components, model expects {}", x.len(), self.input_dim())));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("non-finite network input"));
        }
        let xn = Array2::from_shape_vec((1, x.len()), self.input_norm.apply(x)).expect("shape");
        let y = forward_normalized(&self.layer_sizes, &self.params(), xn.view());
        Ok(self.output_norm.invert(y.row(0).as_slice().expect("contiguous")))
    }

    /// Batched forward pass on physical-unit rows.
    pub fn forward_batch<R: AsRef<[f64]>>(&self, xs: &[R]) -> Result<Vec<Vec<f64>>> {
        let rows = to_array(xs, self.input_dim())?;
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("non-finite network input"));
        }
        let y = forward_normalized(&self.layer_sizes, &self.params(), self.input_norm.apply_rows(&rows).view());
        Ok(y.rows().into_iter().map(|r| self.output_norm.invert(r.as_slice().expect("contiguous"))).collect())
    }

    /// Nguyen-Widrow initialization: every hidden weight row is rescaled to
    /// norm `0.7 n^{1/f}` (n units, fan-in f), biases are uniform in
    /// `[-0.7 n^{1/f}, 0.7 n^{1/f}]`, output weights are small uniform.
    pub fn init_nguyen_widrow(&mut self, seed: u64) {
        let mut rng = stream(seed, &[TAG_INIT]);
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter_mut().zip(self.biases.iter_mut()).enumerate() {
            let fan_in = self.layer_sizes[l] as f64;
            let n = self.layer_sizes[l + 1] as f64;
            if l == last {
                for row in w.iter_mut() {
                    row.iter_mut().for_each(|v| *v = rng.random_range(-0.1..0.1));
                }
                b.iter_mut().for_each(|v| *v = rng.random_range(-0.1..0.1));
                continue;
            }
            let beta = 0.7 * n.powf(1.0 / fan_in);
            for row in w.iter_mut() {
                row.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                row.iter_mut().for_each(|v| *v *= beta / norm);
            }
            b.iter_mut().for_each(|v| *v = rng.random_range(-beta..=beta));
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let m: MlpModel = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        if m.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Version { expected: MODEL_FORMAT_VERSION.into(), found: m.format_version });
        }
        m.check_shapes().map_err(|msg| Error::Parse { path: path.to_path_buf(), line: 0, msg })?;
        Ok(m)
    }

    fn check_shapes(&self) -> std::result::Result<(), String> {
        let s = &self.layer_sizes;
        if s.len() < 2 || s.contains(&0) {
            return Err(format!("invalid layer sizes {s:?}"));
        }
        if self.hidden_activation != "tanh" || self.output_activation != "linear" {
            return Err("unsupported activation".into());
        }
        if self.weights.len() != s.len() - 1 || self.biases.len() != s.len() - 1 {
            return Err("layer count does not match layer sizes".into());
        }
        for l in 0..s.len() - 1 {
            if self.weights[l].len() != s[l + 1]
                || self.weights[l].iter().any(|r| r.len() != s[l])
                || self.biases[l].len() != s[l + 1]
            {
                return Err(format!("layer {l} has the wrong shape"));
            }
        }
        if self.input_norm.dim() != s[0] || self.output_norm.dim() != s[s.len() - 1] {
            return Err("normalization width does not match the network".into());
        }
        self.input_norm.validate().map_err(|e| e.to_string())?;
        self.output_norm.validate().map_err(|e| e.to_string())?;
        if self.params().iter().any(|v| !v.is_finite()) {
            return Err("non-finite parameter".into());
        }
        Ok(())
    }
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
}

fn to_array<R: AsRef<[f64]>>(rows: &[R], width: usize) -> Result<Array2<f64>> {
    let mut flat = Vec::with_capacity(rows.len() * width);
    for r in rows {
        let r = r.as_ref();
        if r.len() != width {
            return Err(Error::domain(format!("row has {} components, expected {width}", r.len())));
        }
        flat.extend_from_slice(r);
    }
    Ok(Array2::from_shape_vec((rows.len(), width), flat).expect("shape"))
}

fn layer_views<'a>(sizes: &[usize], theta: &'a [f64]) -> Vec<(ArrayView2<'a, f64>, ArrayView1<'a, f64>)> {
    let mut off = 0;
    sizes
        .windows(2)
        .map(|w| {
            let (n_in, n_out) = (w[0], w[1]);
            let wv = ArrayView2::from_shape((n_out, n_in), &theta[off..off + n_out * n_in]).expect("shape");
            off += n_out * n_in;
            let bv = ArrayView1::from(&theta[off..off + n_out]);
            off += n_out;
            (wv, bv)
        })
        .collect()
}

/// Activations of every layer (input included) in normalized units.
fn activations(sizes: &[usize], theta: &[f64], x: ArrayView2<f64>) -> Vec<Array2<f64>> {
    let layers = layer_views(sizes, theta);
    let mut acts = Vec::with_capacity(layers.len() + 1);
    acts.push(x.to_owned());
    for (l, (w, b)) in layers.iter().enumerate() {
        let mut z = acts[l].dot(&w.t());
        z += b;
        if l + 1 < layers.len() {
            z.mapv_inplace(f64::tanh);
        }
        acts.push(z);
    }
    acts
}

fn forward_normalized(sizes: &[usize], theta: &[f64], x: ArrayView2<f64>) -> Array2<f64> {
    activations(sizes, theta, x).pop().expect("output layer")
}

/// Mean of squared normalized-output errors and, if requested, its exact
/// gradient by backpropagation.
pub fn loss_and_gradient(
    sizes: &[usize],
    theta: &[f64],
    x: ArrayView2<f64>,
    t: ArrayView2<f64>,
    grad: Option<&mut [f64]>,
) -> f64 {
    let acts = activations(sizes, theta, x);
    let y = acts.last().expect("output");
    let resid = y - &t;
    let count = resid.len() as f64;
    let loss = resid.iter().map(|r| r * r).sum::<f64>() / count;
    let Some(grad) = grad else { return loss };

    let layers = layer_views(sizes, theta);
    let mut offsets = Vec::with_capacity(layers.len());
    let mut off = 0;
    for w in sizes.windows(2) {
        offsets.push(off);
        off += w[1] * (w[0] + 1);
    }
    let mut delta = resid * (2.0 / count);
    for l in (0..layers.len()).rev() {
        let (n_in, n_out) = (sizes[l], sizes[l + 1]);
        let gw = delta.t().dot(&acts[l]);
        let gb = delta.sum_axis(Axis(0));
        let o = offsets[l];
        for (g, v) in grad[o..o + n_out * n_in].iter_mut().zip(gw.iter()) {
            *g = *v;
        }
        for (g, v) in grad[o + n_out * n_in..o + n_out * (n_in + 1)].iter_mut().zip(gb.iter()) {
            *g = *v;
        }
        if l > 0 {
            let mut back = delta.dot(&layers[l].0);
            back.zip_mut_with(&acts[l], |d, a| *d *= 1.0 - a * a);
            delta = back;
        }
    }
    loss
}

/// Gradient of the batch loss of `model` on physical-unit rows.
pub fn gradient<R: AsRef<[f64]>, S: AsRef<[f64]>>(model: &MlpModel, xs: &[R], targets: &[S]) -> Result<Vec<f64>> {
    if xs.is_empty() || xs.len() != targets.len() {
        return Err(Error::domain("gradient needs a nonempty batch of aligned inputs and targets"));
    }
    let x = model.input_norm.apply_rows(&to_array(xs, model.input_dim())?);
    let t = model.output_norm.apply_rows(&to_array(targets, model.output_dim())?);
    let mut g = vec![0.0; model.n_params()];
    loss_and_gradient(&model.layer_sizes, &model.params(), x.view(), t.view(), Some(&mut g));
    Ok(g)
}

/// `(1/D) Σ_j (1/N) Σ_i ((y_ij - t_ij) / (max_i t_ij - min_i t_ij))²`.
pub fn normalized_mse<R: AsRef<[f64]>, S: AsRef<[f64]>>(outputs: &[R], targets: &[S]) -> Result<f64> {
    if outputs.is_empty() || outputs.len() != targets.len() {
        return Err(Error::domain("normalized mse needs equally many nonzero outputs and targets"));
    }
    let d = targets[0].as_ref().len();
    let norm = fit_normalization(targets).map_err(|_| Error::domain("constant target column"))?;
    let mut total = 0.0;
    for j in 0..d {
        let range = norm.max[j] - norm.min[j];
        let s: f64 = outputs.iter().zip(targets).map(|(y, t)| ((y.as_ref()[j] - t.as_ref()[j]) / range).powi(2)).sum();
        total += s / outputs.len() as f64;
    }
    Ok(total / d as f64)
}

/// Pearson correlation between each output component and its target.
pub fn regression_r<R: AsRef<[f64]>, S: AsRef<[f64]>>(outputs: &[R], targets: &[S]) -> Result<Vec<f64>> {
    if outputs.is_empty() || outputs.len() != targets.len() {
        return Err(Error::domain("regression needs aligned nonempty samples"));
    }
    let d = targets[0].as_ref().len();
    (0..d)
        .map(|j| {
            let y: Vec<f64> = outputs.iter().map(|r| r.as_ref()[j]).collect();
            let t: Vec<f64> = targets.iter().map(|r| r.as_ref()[j]).collect();
            pearson(&y, &t)
        })
        .collect()
}

/// Validation-patience rule: stop once the monitored value has failed to
/// improve on its best for `patience` consecutive checks.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_iteration: usize,
    fails: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping { patience, best: f64::INFINITY, best_iteration: 0, fails: 0 }
    }

    /// Record a check; returns `true` when training should stop.
    pub fn update(&mut self, iteration: usize, value: f64) -> bool {
        if value < self.best {
            self.best = value;
            self.best_iteration = iteration;
            self.fails = 0;
        } else {
            self.fails += 1;
        }
        self.fails >= self.patience
    }

    pub fn best(&self) -> (usize, f64) {
        (self.best_iteration, self.best)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Hidden layer widths, e.g. `[50]` or `[25, 10]`.
    pub hidden: Vec<usize>,
    pub max_iterations: usize,
    pub validation_patience: usize,
    pub restarts: usize,
    /// Train / validation / test fractions.
    pub split: [f64; 3],
    pub seed: u64,
    pub sigma0: f64,
    pub lambda0: f64,
    /// Stop when the gradient norm falls below this value.
    pub min_gradient: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: vec![50],
            max_iterations: 20_000,
            validation_patience: 6,
            restarts: 5,
            split: [0.70, 0.15, 0.15],
            seed: 0,
            sigma0: 5e-5,
            lambda0: 5e-7,
            min_gradient: 1e-10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 || self.split.iter().any(|f| *f < 0.0) {
            return Err(Error::config("split fractions must be nonnegative and sum to 1"));
        }
        if self.validation_patience == 0 || self.restarts == 0 || self.max_iterations == 0 {
            return Err(Error::config("patience, restarts and max_iterations must be at least 1"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::config("at least one nonempty hidden layer is required"));
        }
        if !(self.sigma0 > 0.0 && self.lambda0 > 0.0) {
            return Err(Error::config("SCG parameters must be positive"));
        }
        Ok(())
    }
}

/// Index partition into training, validation and test sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Random partition of `0..n` with sizes `⌊f₀ n⌋`, `⌊f₁ n⌋` and the remainder.
pub fn split_indices(n: usize, fractions: [f64; 3], seed: u64) -> Split {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream(seed, &[TAG_SPLIT]));
    let n_train = (fractions[0] * n as f64).floor() as usize;
    let n_val = (fractions[1] * n as f64).floor() as usize;
    Split {
        train: idx[..n_train].to_vec(),
        validation: idx[n_train..n_train + n_val].to_vec(),
        test: idx[n_train + n_val..].to_vec(),
    }
}

/// Normalized-mse triple after one training iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    ValidationPatience,
    MaxIterations,
    MinGradient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub history: Vec<IterationRecord>,
    pub best_iteration: usize,
    pub iterations: usize,
    pub stop_reason: StopReason,
    /// Normalized mse of the returned weights on each split.
    pub train_mse: f64,
    pub validation_mse: f64,
    pub test_mse: f64,
    /// Regression R per output on the test split and on all rows.
    pub r_test: Vec<f64>,
    pub r_all: Vec<f64>,
    /// Not serialized, so reports stay reproducible byte for byte.
    #[serde(skip)]
    pub wall_time_s: f64,
}

/// Normalized training data and the split it came from.
pub struct TrainingData {
    pub split: Split,
    input_norm: Normalization,
    output_norm: Normalization,
    x: [Array2<f64>; 3],
    t: [Array2<f64>; 3],
    /// Target range ratio `(train range / 2)² / split range²` per output and split.
    range_factor: [Vec<f64>; 3],
    raw_x: Vec<Vec<f64>>,
    raw_t: Vec<Vec<f64>>,
}

impl TrainingData {
    /// Split the rows and fit normalizations on the training part.
    pub fn new<R: AsRef<[f64]>, S: AsRef<[f64]>>(inputs: &[R], targets: &[S], fractions: [f64; 3], seed: u64) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::domain("inputs and targets have different lengths"));
        }
        let split = split_indices(inputs.len(), fractions, seed);
        if split.train.len() < 2 || split.validation.is_empty() || split.test.len() < 2 {
            return Err(Error::config(format!("{} rows are too few to split", inputs.len())));
        }
        let raw_x: Vec<Vec<f64>> = inputs.iter().map(|r| r.as_ref().to_vec()).collect();
        let raw_t: Vec<Vec<f64>> = targets.iter().map(|r| r.as_ref().to_vec()).collect();
        let pick = |rows: &[Vec<f64>], idx: &[usize]| idx.iter().map(|&i| rows[i].clone()).collect::<Vec<_>>();
        let input_norm = fit_normalization(&pick(&raw_x, &split.train))?;
        let output_norm = fit_normalization(&pick(&raw_t, &split.train))?;
        let parts = [&split.train, &split.validation, &split.test];
        let x = parts.map(|p| input_norm.apply_rows(&to_array(&pick(&raw_x, p), input_norm.dim()).expect("width")));
        let t = parts.map(|p| output_norm.apply_rows(&to_array(&pick(&raw_t, p), output_norm.dim()).expect("width")));
        let range_factor = parts.map(|p| {
            let rows = pick(&raw_t, p);
            (0..output_norm.dim())
                .map(|j| {
                    let (lo, hi) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| (a.min(r[j]), b.max(r[j])));
                    let train_half = 0.5 * (output_norm.max[j] - output_norm.min[j]);
                    if hi > lo { (train_half / (hi - lo)).powi(2) } else { f64::NAN }
                })
                .collect()
        });
        Ok(TrainingData { split, input_norm, output_norm, x, t, range_factor, raw_x, raw_t })
    }

    pub fn from_database(db: &Database, fractions: [f64; 3], seed: u64) -> Result<Self> {
        Self::new(&db.q, &db.h, fractions, seed)
    }

    /// Range-normalized mse of split `s` for parameters `theta`.
    fn split_mse(&self, sizes: &[usize], theta: &[f64], s: usize) -> f64 {
        let y = forward_normalized(sizes, theta, self.x[s].view());
        let d = y.ncols();
        let n = y.nrows() as f64;
        let mut total = 0.0;
        for j in 0..d {
            let ss: f64 = y.column(j).iter().zip(self.t[s].column(j)).map(|(a, b)| (a - b).powi(2)).sum();
            total += ss / n * self.range_factor[s][j];
        }
        total / d as f64
    }
}

/// Møller's scaled conjugate gradient on the training split, with early
/// stopping on the validation split. Returns the best-validation weights.
pub fn train_scg(model: &MlpModel, data: &TrainingData, cfg: &TrainConfig, seed: u64) -> Result<(MlpModel, TrainReport)> {
    let start = Instant::now();
    let sizes = model.layer_sizes.clone();
    let (x, t) = (data.x[0].view(), data.t[0].view());
    let np = model.n_params();
    let norm2 = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>();
    let dotp = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();

    let mut w = model.params();
    let mut g = vec![0.0; np];
    let mut e = loss_and_gradient(&sizes, &w, x, t, Some(&mut g));
    if !e.is_finite() {
        return Err(Error::Numerical("initial training loss is not finite".into()));
    }
    let mut r: Vec<f64> = g.iter().map(|v| -v).collect();
    let mut p = r.clone();
    let (mut lambda, mut lambda_bar) = (cfg.lambda0, 0.0);
    let mut success = true;
    let mut delta = 0.0;
    let mut trial = vec![0.0; np];
    let mut g_trial = vec![0.0; np];

    let mut stopper = EarlyStopping::new(cfg.validation_patience);
    let record = |it: usize, w: &[f64]| IterationRecord {
        iteration: it,
        train: data.split_mse(&sizes, w, 0),
        validation: data.split_mse(&sizes, w, 1),
        test: data.split_mse(&sizes, w, 2),
    };
    let first = record(0, &w);
    stopper.update(0, first.validation);
    let mut history = vec![first];
    let mut best_w = w.clone();
    let mut stop_reason = StopReason::MaxIterations;
    let mut iterations = 0;

    for k in 1..=cfg.max_iterations {
        iterations = k;
        let p2 = norm2(&p);
        if success {
            let sigma = cfg.sigma0 / p2.sqrt();
            for i in 0..np {
                trial[i] = w[i] + sigma * p[i];
            }
            loss_and_gradient(&sizes, &trial, x, t, Some(&mut g_trial));
            delta = (0..np).map(|i| p[i] * (g_trial[i] - g[i])).sum::<f64>() / sigma;
        }
        delta += (lambda - lambda_bar) * p2;
        if delta <= 0.0 {
            lambda_bar = 2.0 * (lambda - delta / p2);
            delta = -delta + lambda * p2;
            lambda = lambda_bar;
        }
        let mu = dotp(&p, &r);
        let alpha = mu / delta;
        for i in 0..np {
            trial[i] = w[i] + alpha * p[i];
        }
        let e_new = loss_and_gradient(&sizes, &trial, x, t, Some(&mut g_trial));
        if !e_new.is_finite() && !alpha.is_finite() {
            return Err(Error::Numerical(format!("training diverged at iteration {k}")));
        }
        let comparison = if e_new.is_finite() { 2.0 * delta * (e - e_new) / (mu * mu) } else { -1.0 };
        if comparison >= 0.0 {
            w.copy_from_slice(&trial);
            e = e_new;
            g.copy_from_slice(&g_trial);
            let r_new: Vec<f64> = g.iter().map(|v| -v).collect();
            lambda_bar = 0.0;
            success = true;
            if k % np == 0 {
                p.copy_from_slice(&r_new);
            } else {
                let beta = (norm2(&r_new) - dotp(&r_new, &r)) / mu;
                for i in 0..np {
                    p[i] = r_new[i] + beta * p[i];
                }
            }
            r = r_new;
            if comparison >= 0.75 {
                lambda *= 0.25;
            }
        } else {
            lambda_bar = lambda;
            success = false;
        }
        if comparison < 0.25 {
            lambda += delta * (1.0 - comparison) / norm2(&p);
        }
        if !lambda.is_finite() || lambda > 1e100 {
            return Err(Error::Numerical(format!("SCG scale parameter diverged at iteration {k}")));
        }

        if success {
            let rec = record(k, &w);
            history.push(rec);
            let stop = stopper.update(k, rec.validation);
            if stopper.best().0 == k {
                best_w.copy_from_slice(&w);
            }
            if stop {
                stop_reason = StopReason::ValidationPatience;
                break;
            }
            if norm2(&r).sqrt() < cfg.min_gradient {
                stop_reason = StopReason::MinGradient;
                break;
            }
        }
    }

    let mut best = model.clone();
    best.set_params(&best_w);
    let (best_iteration, _) = stopper.best();
    let mse = [0, 1, 2].map(|s| data.split_mse(&sizes, &best_w, s));
    let predict = |idx: &[usize]| -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let xs: Vec<&Vec<f64>> = idx.iter().map(|&i| &data.raw_x[i]).collect();
        let ts: Vec<Vec<f64>> = idx.iter().map(|&i| data.raw_t[i].clone()).collect();
        Ok((best.forward_batch(&xs)?, ts))
    };
    let (yt, tt) = predict(&data.split.test)?;
    let all: Vec<usize> = (0..data.raw_x.len()).collect();
    let (ya, ta) = predict(&all)?;
    let report = TrainReport {
        seed,
        history,
        best_iteration,
        iterations,
        stop_reason,
        train_mse: mse[0],
        validation_mse: mse[1],
        test_mse: mse[2],
        r_test: regression_r(&yt, &tt).unwrap_or_default(),
        r_all: regression_r(&ya, &ta).unwrap_or_default(),
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    Ok((best, report))
}

/// Result of a full training run with restarts.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MlpModel,
    pub report: TrainReport,
    /// Reports of every restart, including the selected one; `None` for
    /// restarts that diverged.
    pub restarts: Vec<Option<TrainReport>>,
    pub split: Split,
}

/// Train `cfg.restarts` independently initialized networks and keep the one
/// with the lowest test mse (ties: validation mse, then restart order).
pub fn train<R: AsRef<[f64]>, S: AsRef<[f64]>>(inputs: &[R], targets: &[S], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let data = TrainingData::new(inputs, targets, cfg.split, cfg.seed)?;
    let mut sizes = vec![data.input_norm.dim()];
    sizes.extend(&cfg.hidden);
    sizes.push(data.output_norm.dim());
    let runs = crate::par::map_indexed(cfg.restarts, |r| {
        let seed = derive_seed(cfg.seed, &[TAG_RESTART, r as u64]);
        let mut model = MlpModel::zeros(&sizes).expect("validated sizes");
        model.input_norm = data.input_norm.clone();
        model.output_norm = data.output_norm.clone();
        model.init_nguyen_widrow(seed);
        match train_scg(&model, &data, cfg, seed) {
            Ok(out) => Some(out),
            Err(e) => {
                log::warn!("restart {r} failed: {e}");
                None
            }
        }
    });
    let mut best: Option<usize> = None;
    for (i, run) in runs.iter().enumerate() {
        let Some((_, rep)) = run else { continue };
        if !rep.test_mse.is_finite() {
            continue;
        }
        let better = match best {
            None => true,
            Some(b) => {
                let cur = &runs[b].as_ref().expect("selected").1;
                (rep.test_mse, rep.validation_mse) < (cur.test_mse, cur.validation_mse)
            }
        };
        if better {
            best = Some(i);
        }
    }
    let b = best.ok_or_else(|| Error::Numerical("every training restart diverged".into()))?;
    let reports: Vec<Option<TrainReport>> = runs.iter().map(|r| r.as_ref().map(|(_, rep)| rep.clone())).collect();
    let (model, report) = runs.into_iter().nth(b).flatten().expect("selected");
    Ok(TrainOutcome { model, report, restarts: reports, split: data.split })
}

/// Train on a database (`q` inputs, `h` targets) and stamp the model with
/// the hash of the data and configuration.
pub fn train_on_database(db: &Database, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let mut out = train(&db.q, &db.h, cfg)?;
    let manifest = format!("{}\n{}", db.data_sha256(), serde_json::to_string(cfg)?);
    out.model.training_manifest_sha256 = Some(sha256_hex(manifest.as_bytes()));
    Ok(out)
}

/// Density estimates of one output component over network outputs and over
/// the targets, on a shared grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdfComparison {
    pub component: usize,
    pub grid: Vec<f64>,
    pub output_pdf: Vec<f64>,
    pub target_pdf: Vec<f64>,
    /// `∫ |p_out - p_target|`.
    pub l1_distance: f64,
}

/// Univariate Gaussian KDE of each hyperparameter over the model outputs
/// for every database row and over the database targets.
pub fn output_pdf_comparison(model: &MlpModel, db: &Database, points: usize) -> Result<Vec<PdfComparison>> {
    let outputs = model.forward_batch(&db.q)?;
    (0..HYPER_DIM)
        .map(|j| {
            let y: Vec<f64> = outputs.iter().map(|r| r[j]).collect();
            let t = db.h_column(j);
            let by = silverman_bandwidth_1d(robust_sigma(&y), y.len()).max(1e-12 * t[0].abs());
            let bt = silverman_bandwidth_1d(robust_sigma(&t), t.len()).max(1e-12 * t[0].abs());
            let lo = y.iter().chain(&t).copied().fold(f64::INFINITY, f64::min) - 4.0 * by.max(bt);
            let hi = y.iter().chain(&t).copied().fold(f64::NEG_INFINITY, f64::max) + 4.0 * by.max(bt);
            let grid = linspace(lo, hi, points.max(64));
            let py = kde_on_grid(&y, by, grid.clone());
            let pt = kde_on_grid(&t, bt, grid.clone());
            let diff: Vec<f64> = py.density.iter().zip(&pt.density).map(|(a, b)| (a - b).abs()).collect();
            Ok(PdfComparison {
                component: j,
                l1_distance: trapezoid(&grid, &diff),
                grid,
                output_pdf: py.density,
                target_pdf: pt.density,
            })
        })
        .collect()
}
