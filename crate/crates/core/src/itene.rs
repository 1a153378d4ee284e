//! Intrinsic transfer entropy estimation.
//!
//! The target past `y-` is passed through a Gaussian channel
//!
//! ```text
//! ybar = mu(y-) + sigma(y-) * eps,   eps ~ N(0, I)
//! ```
//!
//! whose mean and log standard deviation come from a small network. The
//! channel is tuned to minimize `I(x-; y0, ybar) - I(x-; ybar)`, alternating
//! classifier refits for the two mutual information terms with pathwise
//! gradient steps on the channel parameters. The classifiers stay fixed
//! during the channel steps; gradients flow through the classifier inputs
//! and the sampling path only.

use std::io::Write;
use std::path::Path;

use ndarray::{s, Array2, ArrayView2};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mine::{
    batch_ratios, clip_ratio, concat_pairs, dv_from_ratios, fit_on_plan, odds_from_logit,
    sigmoid_in_band, MineConfig, MineSeeds, PairPlan,
};
use crate::nn::{DenseNetParams, ForwardCache, OptimizerState, OutputKind, ParamGrads, UpdateRule};
use crate::rng::{derive_named, derive_seed, rng_from_seed};
use crate::te::{
    embed, estimate_te_embedded, estimate_te_with_seeds, EmbeddedDataset, EmbeddingConfig,
    FlowEstimates, SeriesPair, TeEstimate, TeSeeds,
};

/// Gaussian channel on the target past.
#[derive(Debug, Clone, PartialEq)]
pub struct ReparamChannel {
    net: DenseNetParams,
    /// Add `y-` to the mean output.
    identity_skip: bool,
    log_std_floor: f64,
    log_std_ceiling: f64,
}

/// Channel outputs for one batch, with what the backward pass needs.
#[derive(Debug, Clone)]
pub struct ChannelSample {
    pub bar_y: Array2<f64>,
    cache: ForwardCache,
    sigma: Array2<f64>,
    /// Whether log sigma lies strictly inside the clamp range.
    log_std_free: Array2<bool>,
}

impl ReparamChannel {
    /// Near-identity channel: small random weights, identity skip on the
    /// mean, log sigma starting at `init_log_std`.
    pub fn near_identity(n: usize, hidden: &[usize], init_log_std: f64, seed: u64) -> Result<Self> {
        let mut sizes = vec![n];
        sizes.extend(hidden);
        sizes.push(2 * n);
        let mut net = DenseNetParams::init(&sizes, OutputKind::MeanAndLogStd, seed)?;
        let last = net.num_layers() - 1;
        net.weights_mut()[last].mapv_inplace(|w| 0.01 * w);
        net.biases_mut()[last].slice_mut(s![n..]).fill(init_log_std);
        let channel = ReparamChannel {
            net,
            identity_skip: true,
            log_std_floor: -6.0,
            log_std_ceiling: 2.0,
        };
        channel.validate()?;
        Ok(channel)
    }

    /// Exact identity mean with log sigma pinned at the floor.
    pub fn degenerate_identity(n: usize, hidden: &[usize]) -> Result<Self> {
        let mut sizes = vec![n];
        sizes.extend(hidden);
        sizes.push(2 * n);
        let mut net = DenseNetParams::zeros(&sizes, OutputKind::MeanAndLogStd)?;
        let last = net.num_layers() - 1;
        net.biases_mut()[last].slice_mut(s![n..]).fill(-6.0);
        Ok(ReparamChannel {
            net,
            identity_skip: true,
            log_std_floor: -6.0,
            log_std_ceiling: 2.0,
        })
    }

    /// Ignores its input: `ybar = mean + e^log_std * eps`.
    pub fn constant(n: usize, hidden: &[usize], mean: f64, log_std: f64) -> Result<Self> {
        let mut sizes = vec![n];
        sizes.extend(hidden);
        sizes.push(2 * n);
        let mut net = DenseNetParams::zeros(&sizes, OutputKind::MeanAndLogStd)?;
        let last = net.num_layers() - 1;
        net.biases_mut()[last].slice_mut(s![..n]).fill(mean);
        net.biases_mut()[last].slice_mut(s![n..]).fill(log_std);
        let channel = ReparamChannel {
            net,
            identity_skip: false,
            log_std_floor: -6.0,
            log_std_ceiling: 2.0,
        };
        channel.validate()?;
        Ok(channel)
    }

    pub fn from_net(
        net: DenseNetParams,
        identity_skip: bool,
        log_std_floor: f64,
        log_std_ceiling: f64,
    ) -> Result<Self> {
        let channel = ReparamChannel {
            net,
            identity_skip,
            log_std_floor,
            log_std_ceiling,
        };
        channel.validate()?;
        Ok(channel)
    }

    pub fn with_log_std_range(mut self, floor: f64, ceiling: f64) -> Result<Self> {
        self.log_std_floor = floor;
        self.log_std_ceiling = ceiling;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        if self.net.output_kind() != OutputKind::MeanAndLogStd
            || self.net.output_width() != 2 * self.net.input_width()
        {
            return Err(Error::Config(
                "channel network must map n inputs to n means and n log-stds".into(),
            ));
        }
        if !(self.log_std_floor < self.log_std_ceiling) {
            return Err(Error::Config(format!(
                "log-std range [{}, {}] is empty",
                self.log_std_floor, self.log_std_ceiling
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.net.input_width()
    }

    pub fn net(&self) -> &DenseNetParams {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut DenseNetParams {
        &mut self.net
    }

    pub fn log_std_range(&self) -> (f64, f64) {
        (self.log_std_floor, self.log_std_ceiling)
    }

    /// Draws `ybar` for every row of `y_minus` with the given noise.
    pub fn sample(
        &self,
        y_minus: ArrayView2<'_, f64>,
        noise: &NoiseBatch,
    ) -> Result<ChannelSample> {
        let n = self.dim();
        if y_minus.ncols() != n || noise.epsilon.dim() != y_minus.dim() {
            return Err(Error::Shape(format!(
                "channel of width {n} got y- {:?} and noise {:?}",
                y_minus.dim(),
                noise.epsilon.dim()
            )));
        }
        let cache = self.net.forward_cached(y_minus)?;
        let out = cache.output();
        let mut mu = out.slice(s![.., ..n]).to_owned();
        if self.identity_skip {
            mu += &y_minus;
        }
        let raw_log_std = out.slice(s![.., n..]);
        let log_std_free = raw_log_std.mapv(|v| v > self.log_std_floor && v < self.log_std_ceiling);
        let sigma = raw_log_std.mapv(|v| v.clamp(self.log_std_floor, self.log_std_ceiling).exp());
        let bar_y = mu + &sigma * &noise.epsilon;
        if bar_y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("channel output is not finite".into()));
        }
        Ok(ChannelSample {
            bar_y,
            cache,
            sigma,
            log_std_free,
        })
    }

    /// Mean log sigma over the rows of `y_minus`, after clamping.
    pub fn mean_log_std(&self, y_minus: ArrayView2<'_, f64>) -> Result<f64> {
        let n = self.dim();
        let out = self.net.forward_batch(y_minus)?;
        let v = out
            .slice(s![.., n..])
            .mapv(|v| v.clamp(self.log_std_floor, self.log_std_ceiling));
        Ok(v.mean().unwrap_or(0.0))
    }

    /// Pulls an upstream gradient on `ybar` back to the channel parameters.
    pub fn backward(
        &self,
        sample: &ChannelSample,
        noise: &NoiseBatch,
        d_bar_y: ArrayView2<'_, f64>,
    ) -> Result<ParamGrads> {
        let n = self.dim();
        if d_bar_y.dim() != sample.bar_y.dim() {
            return Err(Error::Shape("upstream gradient does not match ybar".into()));
        }
        let mut d_out = Array2::zeros((d_bar_y.nrows(), 2 * n));
        d_out.slice_mut(s![.., ..n]).assign(&d_bar_y);
        let mut d_log_std = &d_bar_y * &sample.sigma * &noise.epsilon;
        ndarray::Zip::from(&mut d_log_std)
            .and(&sample.log_std_free)
            .for_each(|d, &free| {
                if !free {
                    *d = 0.0;
                }
            });
        d_out.slice_mut(s![.., n..]).assign(&d_log_std);
        let (grads, _) = self.net.backward(&sample.cache, d_out.view(), true)?;
        Ok(grads.expect("requested"))
    }
}

/// Standard normal noise, one row per time step.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBatch {
    pub epsilon: Array2<f64>,
    pub seed: u64,
}

impl NoiseBatch {
    pub fn draw(rows: usize, n: usize, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let epsilon = Array2::from_shape_simple_fn((rows, n), || StandardNormal.sample(&mut rng));
        NoiseBatch { epsilon, seed }
    }

    pub fn zeros(rows: usize, n: usize) -> Self {
        NoiseBatch {
            epsilon: Array2::zeros((rows, n)),
            seed: 0,
        }
    }
}

/// `ybar = mu(y-) + sigma(y-) * eps` for every row.
pub fn sample_bar_y(
    channel: &ReparamChannel,
    y_minus: ArrayView2<'_, f64>,
    noise: &NoiseBatch,
) -> Result<Array2<f64>> {
    Ok(channel.sample(y_minus, noise)?.bar_y)
}

/// Which mutual information term a classifier belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Term {
    /// `I(x-; y0, ybar)`, classifier inputs `[x-, y0, ybar]`.
    A,
    /// `I(x-; ybar)`, classifier inputs `[x-, ybar]`.
    B,
}

impl Term {
    fn v_side(self, data: &EmbeddedDataset, bar_y: &Array2<f64>) -> Array2<f64> {
        match self {
            Term::A => data.y0_with(bar_y.view()),
            Term::B => bar_y.clone(),
        }
    }
}

/// A fitted classifier and the row plan it is evaluated on.
#[derive(Debug, Clone, Copy)]
pub struct TermModel<'a> {
    pub classifier: &'a DenseNetParams,
    pub plan: &'a PairPlan,
}

fn term_value(
    data: &EmbeddedDataset,
    bar_y: &Array2<f64>,
    term: Term,
    model: TermModel<'_>,
    tau: f64,
) -> Result<f64> {
    let v = term.v_side(data, bar_y);
    let u = data.x_minus.view();
    let joint = batch_ratios(
        model.classifier,
        concat_pairs(u, v.view(), &model.plan.eval_joint_pairs()).view(),
    )?;
    let product = batch_ratios(
        model.classifier,
        concat_pairs(u, v.view(), &model.plan.eval_product).view(),
    )?;
    dv_from_ratios(&joint, &product, tau)
}

/// Held-out estimate of `I(x-; y0, ybar)` for the current channel.
pub fn estimate_mi_a_phi(
    channel: &ReparamChannel,
    data: &EmbeddedDataset,
    noise: &NoiseBatch,
    model: TermModel<'_>,
    tau: f64,
) -> Result<f64> {
    let bar_y = sample_bar_y(channel, data.y_minus.view(), noise)?;
    term_value(data, &bar_y, Term::A, model, tau)
}

/// Held-out estimate of `I(x-; ybar)` for the current channel.
pub fn estimate_mi_b_phi(
    channel: &ReparamChannel,
    data: &EmbeddedDataset,
    noise: &NoiseBatch,
    model: TermModel<'_>,
    tau: f64,
) -> Result<f64> {
    let bar_y = sample_bar_y(channel, data.y_minus.view(), noise)?;
    term_value(data, &bar_y, Term::B, model, tau)
}

/// Normalizer of the product-side term in the channel gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Denominator {
    /// Mean of the unclipped ratios.
    Unclipped,
    /// Mean of the clipped ratios: the exact derivative of the clipped estimate.
    Clipped,
}

/// Channel gradient and the objective it was taken at.
#[derive(Debug, Clone)]
pub struct PhiGradient {
    pub grads: ParamGrads,
    pub mi_a: f64,
    pub mi_b: f64,
}

impl PhiGradient {
    pub fn objective(&self) -> f64 {
        self.mi_a - self.mi_b
    }
}

/// Accumulates `d term / d ybar` into `acc` (rows indexed by time step)
/// and returns the term value.
#[allow(clippy::too_many_arguments)]
fn term_gradient(
    data: &EmbeddedDataset,
    bar_y: &Array2<f64>,
    term: Term,
    model: TermModel<'_>,
    tau: f64,
    denominator: Denominator,
    sign: f64,
    acc: &mut Array2<f64>,
) -> Result<f64> {
    let n = bar_y.ncols();
    let v = term.v_side(data, bar_y);
    let u = data.x_minus.view();
    let width = u.ncols() + v.ncols();
    let joint_pairs = model.plan.eval_joint_pairs();
    let product_pairs = &model.plan.eval_product;

    let joint_cache = model
        .classifier
        .forward_cached(concat_pairs(u, v.view(), &joint_pairs).view())?;
    let product_cache = model
        .classifier
        .forward_cached(concat_pairs(u, v.view(), product_pairs).view())?;
    let joint_logits = joint_cache.output().column(0).to_owned();
    let product_logits = product_cache.output().column(0).to_owned();
    let joint_ratios: Vec<f64> = joint_logits.iter().map(|&z| odds_from_logit(z)).collect();
    let product_ratios: Vec<f64> = product_logits.iter().map(|&z| odds_from_logit(z)).collect();
    let value = dv_from_ratios(&joint_ratios, &product_ratios, tau)?;

    let n_joint = joint_ratios.len() as f64;
    let n_product = product_ratios.len() as f64;
    let norm = match denominator {
        Denominator::Unclipped => product_ratios.iter().sum::<f64>() / n_product,
        Denominator::Clipped => {
            product_ratios
                .iter()
                .map(|&r| clip_ratio(r, tau))
                .sum::<f64>()
                / n_product
        }
    };

    // ln r = logit while the probability is unclamped, so d ln r = d logit
    // and d r = r d logit.
    let d_joint = Array2::from_shape_fn((joint_pairs.len(), 1), |(i, _)| {
        if sigmoid_in_band(joint_logits[i]) {
            1.0 / n_joint
        } else {
            0.0
        }
    });
    let (lo, hi) = ((-tau).exp(), tau.exp());
    let d_product = Array2::from_shape_fn((product_pairs.len(), 1), |(j, _)| {
        let r = product_ratios[j];
        if sigmoid_in_band(product_logits[j]) && r > lo && r < hi {
            -r / (n_product * norm)
        } else {
            0.0
        }
    });

    let (_, g_joint) = model
        .classifier
        .backward(&joint_cache, d_joint.view(), false)?;
    let (_, g_product) = model
        .classifier
        .backward(&product_cache, d_product.view(), false)?;
    let cols = s![width - n..];
    for (row, &(_, j)) in g_joint.rows().into_iter().zip(&joint_pairs) {
        acc.row_mut(j).scaled_add(sign, &row.slice(cols));
    }
    for (row, &(_, j)) in g_product.rows().into_iter().zip(product_pairs) {
        acc.row_mut(j).scaled_add(sign, &row.slice(cols));
    }

    let bad = acc.iter().any(|v| !v.is_finite()) || !norm.is_finite();
    if bad {
        let max_ratio = product_ratios
            .iter()
            .chain(&joint_ratios)
            .fold(0.0f64, |m, &r| m.max(r));
        let min_one_minus_p = product_ratios
            .iter()
            .chain(&joint_ratios)
            .map(|&r| 1.0 / (1.0 + r))
            .fold(1.0f64, f64::min);
        return Err(Error::Numeric(format!(
            "channel gradient is not finite (max ratio {max_ratio:e}, min 1-p {min_one_minus_p:e})"
        )));
    }
    Ok(value)
}

/// Pathwise gradient of `I_A(phi) - I_B(phi)` with respect to the channel
/// parameters, holding classifiers, noise and row plans fixed.
pub fn pathwise_grad_phi(
    channel: &ReparamChannel,
    data: &EmbeddedDataset,
    noise: &NoiseBatch,
    model_a: TermModel<'_>,
    model_b: TermModel<'_>,
    tau: f64,
    denominator: Denominator,
) -> Result<PhiGradient> {
    let sample = channel.sample(data.y_minus.view(), noise)?;
    let mut d_bar_y = Array2::zeros(sample.bar_y.raw_dim());
    let mi_a = term_gradient(
        data,
        &sample.bar_y,
        Term::A,
        model_a,
        tau,
        denominator,
        1.0,
        &mut d_bar_y,
    )?;
    let mi_b = term_gradient(
        data,
        &sample.bar_y,
        Term::B,
        model_b,
        tau,
        denominator,
        -1.0,
        &mut d_bar_y,
    )?;
    let grads = channel.backward(&sample, noise, d_bar_y.view())?;
    if !grads.is_finite() {
        return Err(Error::Numeric(
            "channel parameter gradient is not finite".into(),
        ));
    }
    Ok(PhiGradient { grads, mi_a, mi_b })
}

/// Objective value for fixed classifiers, without gradients.
pub fn phi_objective(
    channel: &ReparamChannel,
    data: &EmbeddedDataset,
    noise: &NoiseBatch,
    model_a: TermModel<'_>,
    model_b: TermModel<'_>,
    tau: f64,
) -> Result<f64> {
    let bar_y = sample_bar_y(channel, data.y_minus.view(), noise)?;
    Ok(term_value(data, &bar_y, Term::A, model_a, tau)?
        - term_value(data, &bar_y, Term::B, model_b, tau)?)
}

/// Fits both classifiers from scratch on channel outputs with the given
/// seeds, exactly as the transfer entropy estimator does on raw data.
pub fn objective_cold(
    channel: &ReparamChannel,
    data: &EmbeddedDataset,
    noise: &NoiseBatch,
    mine_cfg: &MineConfig,
    seeds: TeSeeds,
) -> Result<TeEstimate> {
    let bar_y = sample_bar_y(channel, data.y_minus.view(), noise)?;
    let v_a = data.y0_with(bar_y.view());
    estimate_te_embedded(data, v_a.view(), bar_y.view(), mine_cfg, seeds)
}

/// Settings of the alternating optimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IteneConfig {
    pub outer_iterations: usize,
    pub phi_steps_per_iter: usize,
    pub phi_learning_rate: f64,
    pub phi_optimizer: UpdateRule,
    pub phi_hidden: Vec<usize>,
    pub init_log_std: f64,
    pub log_std_floor: f64,
    pub log_std_ceiling: f64,
    /// Warm-start each classifier refit from the previous iterate.
    pub warm_start: bool,
    /// Epoch budget of warm refits; cold refits use `mine.epochs`.
    pub refit_epochs: usize,
    pub denominator: Denominator,
    /// Stop when the last `smoothing_window` objectives span less than this.
    pub tolerance: f64,
    pub smoothing_window: usize,
    pub mine: MineConfig,
    pub rng_seed: u64,
}

impl Default for IteneConfig {
    fn default() -> Self {
        IteneConfig {
            outer_iterations: 50,
            phi_steps_per_iter: 5,
            phi_learning_rate: 0.001,
            phi_optimizer: UpdateRule::Sgd,
            phi_hidden: vec![200],
            init_log_std: -3.0,
            log_std_floor: -6.0,
            log_std_ceiling: 2.0,
            warm_start: true,
            refit_epochs: 20,
            denominator: Denominator::Unclipped,
            tolerance: 1e-3,
            smoothing_window: 5,
            mine: MineConfig::default(),
            rng_seed: 0,
        }
    }
}

impl IteneConfig {
    pub fn validate(&self) -> Result<()> {
        self.mine.validate()?;
        if self.outer_iterations == 0 || self.phi_steps_per_iter == 0 || self.refit_epochs == 0 {
            return Err(Error::Config(
                "outer_iterations, phi_steps_per_iter and refit_epochs must be positive".into(),
            ));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if self.smoothing_window == 0 {
            return Err(Error::Config("smoothing_window must be positive".into()));
        }
        if !(self.phi_learning_rate > 0.0) {
            return Err(Error::Config("phi_learning_rate must be positive".into()));
        }
        if !(self.log_std_floor < self.log_std_ceiling)
            || self.init_log_std < self.log_std_floor
            || self.init_log_std > self.log_std_ceiling
        {
            return Err(Error::Config(format!(
                "init_log_std {} must lie in [{}, {}]",
                self.init_log_std, self.log_std_floor, self.log_std_ceiling
            )));
        }
        Ok(())
    }
}

/// One outer iteration of the fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub mi_a: f64,
    pub mi_b: f64,
    pub objective: f64,
    pub mean_log_std: f64,
}

/// Result of [`fit_itene`].
#[derive(Debug, Clone)]
pub struct IteneFit {
    pub flow: FlowEstimates,
    pub trace: Vec<IterationRecord>,
    pub channel: ReparamChannel,
    pub te: TeEstimate,
}

/// Minimum over the trajectory of the `window`-point moving average. Shorter
/// trajectories are averaged whole.
pub fn min_moving_average(values: &[f64], window: usize) -> Option<f64> {
    if values.is_empty() || window == 0 {
        return None;
    }
    if values.len() <= window {
        return Some(values.iter().sum::<f64>() / values.len() as f64);
    }
    values
        .windows(window)
        .map(|w| w.iter().sum::<f64>() / window as f64)
        .reduce(f64::min)
}

fn converged(objectives: &[f64], window: usize, tolerance: f64) -> bool {
    if objectives.len() < window.max(2) {
        return false;
    }
    let tail = &objectives[objectives.len() - window..];
    let (lo, hi) = tail
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    hi - lo < tolerance
}

/// Transfer entropy, intrinsic transfer entropy and their difference.
///
/// The transfer entropy comes from the usual two-classifier estimate on the
/// raw embedding with seed `icfg.rng_seed`. The channel starts near the
/// identity, so the first objective value is close to it; the reported
/// intrinsic value is the minimum of the moving average of the objective.
pub fn fit_itene(
    series: &SeriesPair,
    cfg: &EmbeddingConfig,
    icfg: &IteneConfig,
) -> Result<IteneFit> {
    let data = embed(series, cfg)?;
    fit_itene_embedded(&data, icfg)
}

pub fn fit_itene_embedded(data: &EmbeddedDataset, icfg: &IteneConfig) -> Result<IteneFit> {
    icfg.validate()?;
    let seed = icfg.rng_seed;
    let te_seeds = TeSeeds::from_base(seed);
    let te = estimate_te_with_seeds(data, &icfg.mine, te_seeds)?;
    let split = te.split.clone();

    let n = data.y_minus.ncols();
    let mut channel = ReparamChannel::near_identity(
        n,
        &icfg.phi_hidden,
        icfg.init_log_std,
        derive_named(seed, "channel-init"),
    )?
    .with_log_std_range(icfg.log_std_floor, icfg.log_std_ceiling)?;
    let mut opt = OptimizerState::new(icfg.phi_optimizer, icfg.phi_learning_rate, channel.net())?;

    let mut theta_a = te.mi_a.classifier.net.clone();
    let mut theta_b = te.mi_b.classifier.net.clone();
    let mut trace = Vec::with_capacity(icfg.outer_iterations);
    let mut objectives = Vec::with_capacity(icfg.outer_iterations);
    let tau = icfg.mine.clip_tau;

    for k in 0..icfg.outer_iterations {
        let iter_seed = derive_seed(derive_named(seed, "outer"), k as u64);
        let noise = NoiseBatch::draw(data.len(), n, derive_named(iter_seed, "noise"));
        let bar_y = sample_bar_y(&channel, data.y_minus.view(), &noise)?;
        let v_a = data.y0_with(bar_y.view());

        let seeds_a = MineSeeds::from_base(derive_named(iter_seed, "a"));
        let seeds_b = MineSeeds::from_base(derive_named(iter_seed, "b"));
        let plan_a = PairPlan::build(
            data.len(),
            &icfg.mine,
            &split,
            te_seeds.split,
            seeds_a.resample,
        )?;
        let plan_b = PairPlan::build(
            data.len(),
            &icfg.mine,
            &split,
            te_seeds.split,
            seeds_b.resample,
        )?;
        let (warm_a, warm_b) = if icfg.warm_start {
            (
                Some((&theta_a, icfg.refit_epochs)),
                Some((&theta_b, icfg.refit_epochs)),
            )
        } else {
            (None, None)
        };
        let u = data.x_minus.view();
        let (fit_a, fit_b) = rayon::join(
            || fit_on_plan(u, v_a.view(), plan_a, &icfg.mine, seeds_a, warm_a),
            || fit_on_plan(u, bar_y.view(), plan_b, &icfg.mine, seeds_b, warm_b),
        );
        let (fit_a, fit_b) = (fit_a?, fit_b?);
        let objective = fit_a.value_nats - fit_b.value_nats;
        if !objective.is_finite() {
            return Err(Error::Numeric(format!(
                "objective at iteration {k} is {objective}"
            )));
        }
        trace.push(IterationRecord {
            iteration: k,
            mi_a: fit_a.value_nats,
            mi_b: fit_b.value_nats,
            objective,
            mean_log_std: channel.mean_log_std(data.y_minus.view())?,
        });
        objectives.push(objective);
        theta_a = fit_a.classifier.net;
        theta_b = fit_b.classifier.net;

        if converged(&objectives, icfg.smoothing_window, icfg.tolerance) {
            break;
        }
        if k + 1 == icfg.outer_iterations {
            break;
        }
        let model_a = TermModel {
            classifier: &theta_a,
            plan: &fit_a.plan,
        };
        let model_b = TermModel {
            classifier: &theta_b,
            plan: &fit_b.plan,
        };
        for _ in 0..icfg.phi_steps_per_iter {
            let g = pathwise_grad_phi(
                &channel,
                data,
                &noise,
                model_a,
                model_b,
                tau,
                icfg.denominator,
            )?;
            opt.step(channel.net_mut(), &g.grads)?;
        }
    }

    let ite_nats = min_moving_average(&objectives, icfg.smoothing_window)
        .ok_or_else(|| Error::Numeric("empty objective trajectory".into()))?;
    Ok(IteneFit {
        flow: FlowEstimates::new(te.te_nats, ite_nats, seed, data.len()),
        trace,
        channel,
        te,
    })
}

/// Writes the per-iteration trace as comma-separated text.
pub fn write_trace(path: &Path, trace: &[IterationRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(
        w,
        "iteration,mi_a_nats,mi_b_nats,objective_nats,mean_log_std"
    )
    .map_err(io)?;
    for r in trace {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.iteration, r.mi_a, r.mi_b, r.objective, r.mean_log_std
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}
