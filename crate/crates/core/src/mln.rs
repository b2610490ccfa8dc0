//! Fully connected sigmoid networks trained by full-batch gradient descent.
//!
//! A network maps an n×M input batch to an n×c output batch. Every non-input
//! layer computes `a = σ(W · a_prev + θ)` with the logistic function σ. The
//! training objective is the squared error `½ Σ_h (d_h − y_h)²` averaged over
//! the rows of the batch.

use std::fmt::Write as _;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::seeded;

/// Layer sizes `[M, H₁, …, c]`; at least one hidden layer.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MlnArchitecture {
    layer_sizes: Vec<usize>,
}

impl MlnArchitecture {
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self> {
        if layer_sizes.is_empty() {
            return Err(Error::invalid("architecture has no layers"));
        }
        if layer_sizes.len() < 3 {
            return Err(Error::invalid(
                "architecture needs an input, at least one hidden and an output layer",
            ));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::invalid("architecture has a zero-size layer"));
        }
        Ok(MlnArchitecture { layer_sizes })
    }

    /// One hidden layer of `max(4, 2·outputs)` units.
    pub fn with_default_hidden(inputs: usize, outputs: usize) -> Result<Self> {
        MlnArchitecture::new(vec![inputs, (2 * outputs).max(4), outputs])
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn inputs(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn outputs(&self) -> usize {
        *self.layer_sizes.last().expect("non-empty")
    }

    /// Number of weight layers.
    pub fn depth(&self) -> usize {
        self.layer_sizes.len() - 1
    }
}

/// Weights and bias of one layer: `weights` is (size_ℓ × size_{ℓ−1}).
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlnModel {
    arch: MlnArchitecture,
    layers: Vec<Layer>,
}

/// Logistic sigmoid.
pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl MlnModel {
    /// Builds a model from explicit layers, checking their shapes against `arch`.
    pub fn from_layers(arch: MlnArchitecture, layers: Vec<Layer>) -> Result<Self> {
        let sizes = arch.layer_sizes();
        if layers.len() != arch.depth() {
            return Err(Error::shape(format!(
                "{} layers for an architecture of depth {}",
                layers.len(),
                arch.depth()
            )));
        }
        for (l, layer) in layers.iter().enumerate() {
            if layer.weights.dim() != (sizes[l + 1], sizes[l]) || layer.bias.len() != sizes[l + 1] {
                return Err(Error::shape(format!("layer {l} does not match the architecture")));
            }
            if layer.weights.iter().chain(layer.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("parameters of layer {l}")));
            }
        }
        Ok(MlnModel { arch, layers })
    }

    /// Model with every weight and bias set to zero.
    pub fn zeros(arch: MlnArchitecture) -> Self {
        let layers = arch
            .layer_sizes()
            .windows(2)
            .map(|w| Layer {
                weights: Array2::zeros((w[1], w[0])),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        MlnModel { arch, layers }
    }

    pub fn arch(&self) -> &MlnArchitecture {
        &self.arch
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn into_layers(self) -> Vec<Layer> {
        self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Writes the model in the plain text format: a header line with the
    /// layer sizes, then for every layer one line per weight row followed by
    /// one line holding the bias.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let sizes: Vec<String> = self.arch.layer_sizes().iter().map(|s| s.to_string()).collect();
        writeln!(out, "{}", sizes.join(" ")).unwrap();
        let row_line = |out: &mut String, row: ArrayView1<f64>| {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            writeln!(out, "{}", cells.join(" ")).unwrap();
        };
        for layer in &self.layers {
            for row in layer.weights.rows() {
                row_line(&mut out, row);
            }
            row_line(&mut out, layer.bias.view());
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "missing header".into(),
        })?;
        let sizes = parse_numbers::<usize>(header, 1)?;
        let arch = MlnArchitecture::new(sizes)?;
        let mut next_row = |expected: usize| -> Result<Vec<f64>> {
            let (idx, line) = lines.next().ok_or(Error::Parse {
                line: 0,
                message: "unexpected end of model".into(),
            })?;
            let values = parse_numbers::<f64>(line, idx + 1)?;
            if values.len() != expected {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: format!("expected {expected} values, found {}", values.len()),
                });
            }
            Ok(values)
        };
        let mut layers = Vec::with_capacity(arch.depth());
        for w in arch.layer_sizes().windows(2) {
            let mut weights = Vec::with_capacity(w[0] * w[1]);
            for _ in 0..w[1] {
                weights.extend(next_row(w[0])?);
            }
            let bias = next_row(w[1])?;
            layers.push(Layer {
                weights: Array2::from_shape_vec((w[1], w[0]), weights)
                    .map_err(|e| Error::shape(e.to_string()))?,
                bias: Array1::from(bias),
            });
        }
        MlnModel::from_layers(arch, layers)
    }
}

fn parse_numbers<T: std::str::FromStr>(line: &str, line_no: usize) -> Result<Vec<T>> {
    line.split_whitespace()
        .map(|tok| {
            tok.parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("invalid number {tok:?}"),
            })
        })
        .collect()
}

/// Weights uniform in `[−r, r]` with `r = √(6 / (fan_in + fan_out))`, zero
/// biases.
pub fn init_model(arch: &MlnArchitecture, seed: u64) -> MlnModel {
    let mut rng = seeded(seed);
    let layers = arch
        .layer_sizes()
        .windows(2)
        .map(|w| {
            let r = (6.0 / (w[0] + w[1]) as f64).sqrt();
            Layer {
                weights: Array2::from_shape_simple_fn((w[1], w[0]), || rng.random_range(-r..=r)),
                bias: Array1::zeros(w[1]),
            }
        })
        .collect();
    MlnModel {
        arch: arch.clone(),
        layers,
    }
}

fn check_input(model: &MlnModel, x: ArrayView2<f64>) -> Result<()> {
    if x.ncols() != model.arch.inputs() {
        return Err(Error::shape(format!(
            "input has {} columns, network expects {}",
            x.ncols(),
            model.arch.inputs()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("network input".into()));
    }
    Ok(())
}

/// Activations of every layer, input first.
fn activations(model: &MlnModel, x: ArrayView2<f64>) -> Vec<Array2<f64>> {
    let mut acts = Vec::with_capacity(model.layers.len() + 1);
    acts.push(x.to_owned());
    for layer in &model.layers {
        let prev = acts.last().expect("input pushed");
        let mut z = prev.dot(&layer.weights.t());
        z += &layer.bias;
        z.mapv_inplace(sigmoid);
        acts.push(z);
    }
    acts
}

/// Network outputs for a batch, one row per input row.
pub fn forward(model: &MlnModel, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    check_input(model, x)?;
    Ok(activations(model, x).pop().expect("output layer"))
}

/// `½ Σ_h (d_h − y_h)²` for one row.
pub fn loss(d: ArrayView1<f64>, y: ArrayView1<f64>) -> Result<f64> {
    if d.len() != y.len() {
        return Err(Error::shape(format!(
            "target of length {} against output of length {}",
            d.len(),
            y.len()
        )));
    }
    Ok(0.5 * d.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
}

/// Row mean of [`loss`].
pub fn batch_loss(d: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<f64> {
    if d.dim() != y.dim() {
        return Err(Error::shape("targets and outputs differ in shape"));
    }
    if d.nrows() == 0 {
        return Err(Error::EmptyDataset);
    }
    let total: f64 = d
        .rows()
        .into_iter()
        .zip(y.rows())
        .map(|(a, b)| loss(a, b))
        .sum::<Result<f64>>()?;
    Ok(total / d.nrows() as f64)
}

/// One-hot or soft target rows for training, entries in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTargets(Array2<f64>);

impl TrainingTargets {
    pub fn new(targets: Array2<f64>) -> Result<Self> {
        if targets.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::invalid("targets must lie in [0, 1]"));
        }
        Ok(TrainingTargets(targets))
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }
}

fn check_targets(model: &MlnModel, x: ArrayView2<f64>, d: &TrainingTargets) -> Result<()> {
    check_input(model, x)?;
    if d.0.dim() != (x.nrows(), model.arch.outputs()) {
        return Err(Error::shape(format!(
            "targets are {:?}, expected ({}, {})",
            d.0.dim(),
            x.nrows(),
            model.arch.outputs()
        )));
    }
    if x.nrows() == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok(())
}

/// Gradients of the mean batch loss, laid out like the model's layers.
pub fn backprop_gradients(model: &MlnModel, x: ArrayView2<f64>, d: &TrainingTargets) -> Result<Vec<Layer>> {
    check_targets(model, x, d)?;
    Ok(gradients(model, &activations(model, x), d.view()))
}

fn gradients(model: &MlnModel, acts: &[Array2<f64>], d: ArrayView2<f64>) -> Vec<Layer> {
    let n = d.nrows() as f64;
    let out = acts.last().expect("output layer");
    // δ = ∂L/∂z at the output: (y − d) ⊙ y(1 − y) / n
    let mut delta = (out - &d) * out.mapv(|y| y * (1.0 - y)) / n;
    let mut grads = Vec::with_capacity(model.layers.len());
    for l in (0..model.layers.len()).rev() {
        let prev = &acts[l];
        grads.push(Layer {
            weights: delta.t().dot(prev),
            bias: delta.sum_axis(Axis(0)),
        });
        if l > 0 {
            delta = delta.dot(&model.layers[l].weights) * prev.mapv(|a| a * (1.0 - a));
        }
    }
    grads.reverse();
    grads
}

/// Outcome of gradient-descent training.
#[derive(Debug, Clone)]
pub struct Training {
    pub model: MlnModel,
    /// Mean batch loss before training and after every epoch.
    pub history: Vec<f64>,
}

/// Full-batch gradient descent: one update `W ← W − lr·∇W`, `θ ← θ − lr·∇θ`
/// per epoch.
pub fn train_gd(
    model: &MlnModel,
    x: ArrayView2<f64>,
    d: &TrainingTargets,
    lr: f64,
    epochs: usize,
) -> Result<Training> {
    check_targets(model, x, d)?;
    if !(lr >= 0.0) || !lr.is_finite() {
        return Err(Error::invalid(format!("learning rate {lr} must be non-negative")));
    }
    let mut model = model.clone();
    let mut acts = activations(&model, x);
    let mut history = Vec::with_capacity(epochs + 1);
    history.push(batch_loss(d.view(), acts.last().unwrap().view())?);
    for epoch in 1..=epochs {
        let grads = gradients(&model, &acts, d.view());
        for (layer, g) in model.layers.iter_mut().zip(grads) {
            layer.weights.scaled_add(-lr, &g.weights);
            layer.bias.scaled_add(-lr, &g.bias);
        }
        acts = activations(&model, x);
        let current = batch_loss(d.view(), acts.last().unwrap().view())?;
        let params_finite = model
            .layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()));
        if !current.is_finite() || !params_finite {
            return Err(Error::Diverged { epoch, loss: current });
        }
        history.push(current);
    }
    Ok(Training { model, history })
}
