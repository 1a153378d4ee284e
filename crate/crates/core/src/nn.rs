//! Dense feedforward networks with ELU hidden units.
//!
//! Used for both the two-sample classifiers and the reparameterization
//! channel. Everything is batched: a batch is a row-major matrix with one
//! sample per row. Besides parameter gradients for training, the backward
//! pass returns gradients with respect to the inputs, which the pathwise
//! estimators need.

use std::io::{BufRead, Write};

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::distributions::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

const CHECKPOINT_MAGIC: &str = "itene-dense-net";
const CHECKPOINT_VERSION: u32 = 1;

/// Exponential linear unit with unit scale.
#[inline]
pub fn elu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        z.exp_m1()
    }
}

/// Derivative of [`elu`]; equals 1 at the origin from both sides.
#[inline]
pub fn elu_derivative(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        z.exp()
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `ln(1 + e^z)`.
#[inline]
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// How the caller interprets the final linear layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    /// One output, read as a logit.
    LogitScalar,
    /// `2n` outputs: the first `n` are means, the last `n` are log standard deviations.
    MeanAndLogStd,
}

impl OutputKind {
    fn as_str(self) -> &'static str {
        match self {
            OutputKind::LogitScalar => "logit_scalar",
            OutputKind::MeanAndLogStd => "mean_and_logstd",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "logit_scalar" => Some(OutputKind::LogitScalar),
            "mean_and_logstd" => Some(OutputKind::MeanAndLogStd),
            _ => None,
        }
    }
}

/// Weights and biases of a dense network.
///
/// Layer `l` maps width `layer_sizes[l]` to `layer_sizes[l + 1]` with a
/// weight matrix of shape `(out, in)`. Hidden layers apply ELU; the last
/// layer is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNetParams {
    layer_sizes: Vec<usize>,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    output_kind: OutputKind,
}

/// Activations retained from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Array2<f64>,
    /// Pre-activations of every layer.
    pre: Vec<Array2<f64>>,
    /// Post-activations of every hidden layer.
    hidden: Vec<Array2<f64>>,
}

impl ForwardCache {
    /// Network outputs (pre-activations of the last layer).
    pub fn output(&self) -> &Array2<f64> {
        self.pre.last().expect("at least one layer")
    }
}

/// Gradient with the same shapes as a [`DenseNetParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl ParamGrads {
    pub fn zeros_like(params: &DenseNetParams) -> Self {
        ParamGrads {
            weights: params
                .weights
                .iter()
                .map(|w| Array2::zeros(w.raw_dim()))
                .collect(),
            biases: params
                .biases
                .iter()
                .map(|b| Array1::zeros(b.raw_dim()))
                .collect(),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for w in &mut self.weights {
            *w *= factor;
        }
        for b in &mut self.biases {
            *b *= factor;
        }
    }

    /// `self += factor * other`.
    pub fn add_scaled(&mut self, other: &ParamGrads, factor: f64) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::Shape("gradient structures differ".into()));
        }
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.scaled_add(factor, b);
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            a.scaled_add(factor, b);
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &ParamGrads) -> bool {
        self.weights.len() == other.weights.len()
            && self
                .weights
                .iter()
                .zip(&other.weights)
                .all(|(a, b)| a.dim() == b.dim())
            && self
                .biases
                .iter()
                .zip(&other.biases)
                .all(|(a, b)| a.dim() == b.dim())
    }

    /// Flattens in the same order as [`DenseNetParams::to_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn norm(&self) -> f64 {
        self.to_flat().iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

fn validate_layer_sizes(layer_sizes: &[usize], output_kind: OutputKind) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::Config(format!(
            "a network needs at least an input and an output width, got {layer_sizes:?}"
        )));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::Config(format!(
            "layer widths must be positive, got {layer_sizes:?}"
        )));
    }
    let out = *layer_sizes.last().unwrap();
    match output_kind {
        OutputKind::LogitScalar if out != 1 => Err(Error::Config(format!(
            "logit output needs width 1, got {out}"
        ))),
        OutputKind::MeanAndLogStd if !out.is_multiple_of(2) => Err(Error::Config(format!(
            "mean/log-std output needs an even width, got {out}"
        ))),
        _ => Ok(()),
    }
}

impl DenseNetParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init(layer_sizes: &[usize], output_kind: OutputKind, seed: u64) -> Result<Self> {
        validate_layer_sizes(layer_sizes, output_kind)?;
        let mut rng = rng_from_seed(seed);
        let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
        let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
        for pair in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit);
            let w = Array2::from_shape_simple_fn((fan_out, fan_in), || dist.sample(&mut rng));
            weights.push(w);
            biases.push(Array1::zeros(fan_out));
        }
        Ok(DenseNetParams {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            output_kind,
        })
    }

    /// All weights and biases zero.
    pub fn zeros(layer_sizes: &[usize], output_kind: OutputKind) -> Result<Self> {
        validate_layer_sizes(layer_sizes, output_kind)?;
        let weights = layer_sizes
            .windows(2)
            .map(|p| Array2::zeros((p[1], p[0])))
            .collect();
        let biases = layer_sizes
            .windows(2)
            .map(|p| Array1::zeros(p[1]))
            .collect();
        Ok(DenseNetParams {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            output_kind,
        })
    }

    /// Builds a network from explicit matrices (shape `(out, in)`) and biases.
    pub fn from_parts(
        weights: Vec<Array2<f64>>,
        biases: Vec<Array1<f64>>,
        output_kind: OutputKind,
    ) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::Shape(format!(
                "{} weight matrices and {} bias vectors",
                weights.len(),
                biases.len()
            )));
        }
        let mut layer_sizes = vec![weights[0].ncols()];
        for (l, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.ncols() != *layer_sizes.last().unwrap() || b.len() != w.nrows() {
                return Err(Error::Shape(format!(
                    "layer {l} has inconsistent dimensions"
                )));
            }
            layer_sizes.push(w.nrows());
        }
        validate_layer_sizes(&layer_sizes, output_kind)?;
        let params = DenseNetParams {
            layer_sizes,
            weights,
            biases,
            output_kind,
        };
        params.ensure_finite()?;
        Ok(params)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn output_kind(&self) -> OutputKind {
        self.output_kind
    }

    pub fn input_width(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Array1<f64>] {
        &mut self.biases
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut it = flat.iter().copied();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            w.iter_mut().for_each(|v| *v = it.next().unwrap());
            b.iter_mut().for_each(|v| *v = it.next().unwrap());
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    fn ensure_finite(&self) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::Numeric(
                "network parameters contain NaN or Inf".into(),
            ))
        }
    }

    fn check_input(&self, inputs: &ArrayView2<'_, f64>) -> Result<()> {
        if inputs.ncols() != self.input_width() {
            return Err(Error::Shape(format!(
                "input width {} does not match network input width {}",
                inputs.ncols(),
                self.input_width()
            )));
        }
        Ok(())
    }

    /// Evaluates the network on a single input vector.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, input.len()), input)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Ok(self.forward_batch(view)?.into_raw_vec_and_offset().0)
    }

    /// Evaluates the network on every row of `inputs`.
    pub fn forward_batch(&self, inputs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(&inputs)?;
        let last = self.num_layers() - 1;
        let mut act = inputs.to_owned();
        for l in 0..=last {
            let mut z = act.dot(&self.weights[l].t());
            z += &self.biases[l];
            if l < last {
                z.mapv_inplace(elu);
            }
            act = z;
        }
        if act.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("network output is not finite".into()));
        }
        Ok(act)
    }

    /// Forward pass that keeps what [`DenseNetParams::backward`] needs.
    pub fn forward_cached(&self, inputs: ArrayView2<'_, f64>) -> Result<ForwardCache> {
        self.check_input(&inputs)?;
        let last = self.num_layers() - 1;
        let mut pre = Vec::with_capacity(self.num_layers());
        let mut hidden: Vec<Array2<f64>> = Vec::with_capacity(last);
        for l in 0..=last {
            let input = if l == 0 {
                inputs.view()
            } else {
                hidden[l - 1].view()
            };
            let mut z = input.dot(&self.weights[l].t());
            z += &self.biases[l];
            if l < last {
                hidden.push(z.mapv(elu));
            }
            pre.push(z);
        }
        let cache = ForwardCache {
            inputs: inputs.to_owned(),
            pre,
            hidden,
        };
        if cache.output().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("network output is not finite".into()));
        }
        Ok(cache)
    }

    /// Reverse accumulation of an upstream gradient `d_out` (one row per
    /// sample, one column per output).
    ///
    /// Returns the parameter gradient summed over the batch (when
    /// `want_params`) and the gradient with respect to each input row.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        d_out: ArrayView2<'_, f64>,
        want_params: bool,
    ) -> Result<(Option<ParamGrads>, Array2<f64>)> {
        if d_out.dim() != cache.output().dim() {
            return Err(Error::Shape(format!(
                "upstream gradient {:?} does not match output {:?}",
                d_out.dim(),
                cache.output().dim()
            )));
        }
        let mut grads = want_params.then(|| ParamGrads::zeros_like(self));
        let mut delta = d_out.to_owned();
        for l in (0..self.num_layers()).rev() {
            let input = if l == 0 {
                cache.inputs.view()
            } else {
                cache.hidden[l - 1].view()
            };
            if let Some(g) = grads.as_mut() {
                g.weights[l] = delta.t().dot(&input);
                g.biases[l] = delta.sum_axis(Axis(0));
            }
            let mut d_input = delta.dot(&self.weights[l]);
            if l > 0 {
                Zip::from(&mut d_input)
                    .and(&cache.pre[l - 1])
                    .for_each(|d, &z| *d *= elu_derivative(z));
            }
            delta = d_input;
        }
        Ok((grads, delta))
    }

    /// Mean binary cross-entropy between `sigmoid(output)` and `labels`, and
    /// its gradient with respect to the parameters.
    pub fn grad_params_crossentropy(
        &self,
        inputs: ArrayView2<'_, f64>,
        labels: &[f64],
    ) -> Result<(f64, ParamGrads)> {
        if self.output_width() != 1 {
            return Err(Error::Shape("cross-entropy needs a scalar output".into()));
        }
        if inputs.nrows() == 0 {
            return Err(Error::Empty("cross-entropy batch".into()));
        }
        if labels.len() != inputs.nrows() {
            return Err(Error::Shape(format!(
                "{} labels for {} samples",
                labels.len(),
                inputs.nrows()
            )));
        }
        if labels.iter().any(|&a| a != 0.0 && a != 1.0) {
            return Err(Error::Config("labels must be 0 or 1".into()));
        }
        let cache = self.forward_cached(inputs)?;
        let logits = cache.output();
        let scale = 1.0 / labels.len() as f64;
        let mut loss = 0.0;
        let mut d_out = Array2::zeros(logits.raw_dim());
        for ((i, &z), &a) in logits.column(0).indexed_iter().zip(labels) {
            loss += softplus(z) - a * z;
            d_out[[i, 0]] = (sigmoid(z) - a) * scale;
        }
        loss *= scale;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("cross-entropy loss is {loss}")));
        }
        let (grads, _) = self.backward(&cache, d_out.view(), true)?;
        Ok((loss, grads.expect("requested")))
    }

    /// Mean binary cross-entropy without gradients.
    pub fn crossentropy(&self, inputs: ArrayView2<'_, f64>, labels: &[f64]) -> Result<f64> {
        if labels.len() != inputs.nrows() || labels.is_empty() {
            return Err(Error::Shape("labels do not match inputs".into()));
        }
        let logits = self.forward_batch(inputs)?;
        let loss = logits
            .column(0)
            .iter()
            .zip(labels)
            .map(|(&z, &a)| softplus(z) - a * z)
            .sum::<f64>()
            / labels.len() as f64;
        Ok(loss)
    }

    /// Jacobian of the outputs with respect to one input, shape `(out, in)`.
    pub fn grad_input(&self, input: &[f64]) -> Result<Array2<f64>> {
        let out = self.output_width();
        let row = ArrayView2::from_shape((1, input.len()), input)
            .map_err(|e| Error::Shape(e.to_string()))?;
        self.check_input(&row)?;
        let batch = row
            .broadcast((out, input.len()))
            .expect("row broadcasts")
            .to_owned();
        let cache = self.forward_cached(batch.view())?;
        let seed = Array2::eye(out);
        let (_, jac) = self.backward(&cache, seed.view(), false)?;
        Ok(jac)
    }

    /// Writes the versioned text checkpoint.
    ///
    /// ```text
    /// itene-dense-net 1
    /// output_kind logit_scalar
    /// layer_sizes 2 100 100 1
    /// weights 0
    /// <one line per row, space separated>
    /// bias 0
    /// <one line>
    /// ...
    /// ```
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}")?;
        writeln!(w, "output_kind {}", self.output_kind.as_str())?;
        let sizes: Vec<String> = self.layer_sizes.iter().map(|s| s.to_string()).collect();
        writeln!(w, "layer_sizes {}", sizes.join(" "))?;
        for (l, (wm, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            writeln!(w, "weights {l}")?;
            for row in wm.rows() {
                let vals: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                writeln!(w, "{}", vals.join(" "))?;
            }
            writeln!(w, "bias {l}")?;
            let vals: Vec<String> = b.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", vals.join(" "))?;
        }
        Ok(())
    }

    /// Reads a checkpoint written by [`DenseNetParams::write_checkpoint`].
    pub fn read_checkpoint<R: BufRead>(r: R) -> Result<Self> {
        fn bad(line: usize, msg: impl Into<String>) -> Error {
            Error::Parse {
                path: "<checkpoint>".into(),
                line,
                message: msg.into(),
            }
        }
        let mut lines = r.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |what: &str| -> Result<(usize, String)> {
            match lines.next() {
                Some((i, Ok(s))) => Ok((i, s)),
                Some((i, Err(e))) => Err(bad(i, e.to_string())),
                None => Err(bad(
                    0,
                    format!("unexpected end of checkpoint, expected {what}"),
                )),
            }
        };
        let parse_row = |i: usize, s: &str| -> Result<Vec<f64>> {
            s.split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| bad(i, format!("{t:?}: {e}"))))
                .collect()
        };

        let (i, header) = next("header")?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some(CHECKPOINT_MAGIC) {
            return Err(bad(i, "not a dense network checkpoint"));
        }
        let version: u32 = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad(i, "missing version"))?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(i, format!("unsupported checkpoint version {version}")));
        }
        let (i, kind_line) = next("output_kind")?;
        let output_kind = kind_line
            .strip_prefix("output_kind ")
            .and_then(OutputKind::parse)
            .ok_or_else(|| bad(i, "bad output_kind line"))?;
        let (i, sizes_line) = next("layer_sizes")?;
        let layer_sizes: Vec<usize> = sizes_line
            .strip_prefix("layer_sizes ")
            .ok_or_else(|| bad(i, "bad layer_sizes line"))?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| bad(i, format!("bad width {t:?}"))))
            .collect::<Result<_>>()?;
        validate_layer_sizes(&layer_sizes, output_kind)?;

        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (l, pair) in layer_sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let (i, tag) = next("weights tag")?;
            if tag != format!("weights {l}") {
                return Err(bad(i, format!("expected 'weights {l}'")));
            }
            let mut data = Vec::with_capacity(fan_in * fan_out);
            for _ in 0..fan_out {
                let (i, row) = next("weight row")?;
                let vals = parse_row(i, &row)?;
                if vals.len() != fan_in {
                    return Err(bad(
                        i,
                        format!("expected {fan_in} values, got {}", vals.len()),
                    ));
                }
                data.extend(vals);
            }
            weights.push(Array2::from_shape_vec((fan_out, fan_in), data).expect("sized"));
            let (i, tag) = next("bias tag")?;
            if tag != format!("bias {l}") {
                return Err(bad(i, format!("expected 'bias {l}'")));
            }
            let (i, row) = next("bias row")?;
            let vals = parse_row(i, &row)?;
            if vals.len() != fan_out {
                return Err(bad(
                    i,
                    format!("expected {fan_out} values, got {}", vals.len()),
                ));
            }
            biases.push(Array1::from(vals));
        }
        DenseNetParams::from_parts(weights, biases, output_kind)
    }
}

/// Parameter update rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateRule {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl UpdateRule {
    /// Adam with the usual defaults: beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
    pub fn adam() -> Self {
        UpdateRule::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            UpdateRule::Sgd => "sgd",
            UpdateRule::Adam { .. } => "adam",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "sgd" => Some(UpdateRule::Sgd),
            "adam" => Some(UpdateRule::adam()),
            _ => None,
        }
    }
}

/// Optimizer accumulators for one network.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    rule: UpdateRule,
    learning_rate: f64,
    first_moment: Option<ParamGrads>,
    second_moment: Option<ParamGrads>,
    step_count: u64,
}

impl OptimizerState {
    pub fn new(rule: UpdateRule, learning_rate: f64, params: &DenseNetParams) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        let (first_moment, second_moment) = match rule {
            UpdateRule::Sgd => (None, None),
            UpdateRule::Adam { .. } => (
                Some(ParamGrads::zeros_like(params)),
                Some(ParamGrads::zeros_like(params)),
            ),
        };
        Ok(OptimizerState {
            rule,
            learning_rate,
            first_moment,
            second_moment,
            step_count: 0,
        })
    }

    pub fn rule(&self) -> UpdateRule {
        self.rule
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Applies one descent step in place.
    pub fn step(&mut self, params: &mut DenseNetParams, grads: &ParamGrads) -> Result<()> {
        let template = ParamGrads::zeros_like(params);
        if !template.same_shape(grads) {
            return Err(Error::Shape("gradient does not match parameters".into()));
        }
        if let Some(m) = &self.first_moment {
            if !m.same_shape(grads) {
                return Err(Error::Shape(
                    "optimizer state does not match parameters".into(),
                ));
            }
        }
        self.step_count += 1;
        let lr = self.learning_rate;
        match self.rule {
            UpdateRule::Sgd => {
                for (w, g) in params.weights.iter_mut().zip(&grads.weights) {
                    w.scaled_add(-lr, g);
                }
                for (b, g) in params.biases.iter_mut().zip(&grads.biases) {
                    b.scaled_add(-lr, g);
                }
            }
            UpdateRule::Adam { beta1, beta2, eps } => {
                let t = self.step_count as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                let m = self.first_moment.as_mut().expect("adam state");
                let v = self.second_moment.as_mut().expect("adam state");
                let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                };
                for l in 0..params.weights.len() {
                    Zip::from(&mut params.weights[l])
                        .and(&grads.weights[l])
                        .and(&mut m.weights[l])
                        .and(&mut v.weights[l])
                        .for_each(|p, &g, m, v| update(p, g, m, v));
                    Zip::from(&mut params.biases[l])
                        .and(&grads.biases[l])
                        .and(&mut m.biases[l])
                        .and(&mut v.biases[l])
                        .for_each(|p, &g, m, v| update(p, g, m, v));
                }
            }
        }
        params.ensure_finite()
    }
}
