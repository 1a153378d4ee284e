//! Classifier-based mutual information estimation.
//!
//! A binary classifier learns to tell samples of the joint distribution
//! `p(u, v)` from samples of the product of marginals `p(u)p(v)`, the latter
//! obtained by resampling `v` with replacement. Its odds `p / (1 - p)`
//! estimate the likelihood ratio, which is plugged into the Donsker-Varadhan
//! representation on held-out rows:
//!
//! ```text
//! I(U; V) ~= mean_joint[ ln r(u, v) ] - ln mean_product[ clip_tau(r(u, v')) ]
//! ```
//!
//! with `clip_tau(r) = max(min(r, e^tau), e^-tau)`. Only the product-side
//! average is clipped.

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{sigmoid, DenseNetParams, OptimizerState, OutputKind, UpdateRule};
use crate::rng::{derive_named, derive_seed, rng_from_seed};

/// Classifier probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]`
/// before forming odds.
pub const PROB_CLAMP: f64 = 1e-6;

/// Which distribution a [`PairDataset`] is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    /// Drawn from `p(u, v)`, classifier target 1.
    Joint,
    /// Drawn from `p(u)p(v)`, classifier target 0.
    Product,
}

impl Label {
    pub fn target(self) -> f64 {
        match self {
            Label::Joint => 1.0,
            Label::Product => 0.0,
        }
    }
}

/// Rows of `(u, v)` pairs sharing one label.
#[derive(Debug, Clone, PartialEq)]
pub struct PairDataset {
    u: Array2<f64>,
    v: Array2<f64>,
    label: Label,
}

impl PairDataset {
    pub fn new(u: Array2<f64>, v: Array2<f64>, label: Label) -> Result<Self> {
        if u.nrows() != v.nrows() {
            return Err(Error::Shape(format!(
                "{} u rows but {} v rows",
                u.nrows(),
                v.nrows()
            )));
        }
        if u.ncols() == 0 || v.ncols() == 0 {
            return Err(Error::Shape("u and v need at least one column".into()));
        }
        if u.iter().chain(v.iter()).any(|x| !x.is_finite()) {
            return Err(Error::Numeric("dataset contains non-finite values".into()));
        }
        Ok(PairDataset { u, v, label })
    }

    pub fn len(&self) -> usize {
        self.u.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn u(&self) -> ArrayView2<'_, f64> {
        self.u.view()
    }

    pub fn v(&self) -> ArrayView2<'_, f64> {
        self.v.view()
    }

    pub fn label(&self) -> Label {
        self.label
    }

    pub fn input_width(&self) -> usize {
        self.u.ncols() + self.v.ncols()
    }

    /// Classifier inputs: each row is `u` followed by `v`.
    pub fn inputs(&self) -> Array2<f64> {
        let identity: Vec<(usize, usize)> = (0..self.len()).map(|i| (i, i)).collect();
        concat_pairs(self.u.view(), self.v.view(), &identity)
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> PairDataset {
        PairDataset {
            u: self.u.select(Axis(0), indices),
            v: self.v.select(Axis(0), indices),
            label: self.label,
        }
    }
}

/// Builds classifier inputs `[u[i], v[j]]` for each `(i, j)`.
pub fn concat_pairs(
    u: ArrayView2<'_, f64>,
    v: ArrayView2<'_, f64>,
    pairs: &[(usize, usize)],
) -> Array2<f64> {
    let (du, dv) = (u.ncols(), v.ncols());
    let mut out = Array2::zeros((pairs.len(), du + dv));
    for (row, &(i, j)) in out.rows_mut().into_iter().zip(pairs) {
        let mut row = row;
        row.slice_mut(s![..du]).assign(&u.row(i));
        row.slice_mut(s![du..]).assign(&v.row(j));
    }
    out
}

/// Draws `len` indices i.i.d. uniformly from `pool` (with replacement).
pub fn resample_from(pool: &[usize], len: usize, seed: u64) -> Vec<usize> {
    let mut rng = rng_from_seed(seed);
    (0..len)
        .map(|_| pool[rng.gen_range(0..pool.len())])
        .collect()
}

/// Product-of-marginals sample `{(u_n, v_pi(n))}` with `pi(n)` i.i.d.
/// uniform over all rows.
pub fn resample_product(joint: &PairDataset, seed: u64) -> Result<PairDataset> {
    if joint.is_empty() {
        return Err(Error::Empty("cannot resample an empty dataset".into()));
    }
    let all: Vec<usize> = (0..joint.len()).collect();
    let pi = resample_from(&all, joint.len(), seed);
    Ok(PairDataset {
        u: joint.u.clone(),
        v: joint.v.select(Axis(0), &pi),
        label: Label::Product,
    })
}

/// Disjoint train/eval partition of row indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexSplit {
    pub train: Vec<usize>,
    pub eval: Vec<usize>,
}

impl IndexSplit {
    /// Random partition with `round(train_fraction * len)` training rows.
    pub fn random(len: usize, train_fraction: f64, seed: u64) -> Result<Self> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train fraction must lie in (0, 1), got {train_fraction}"
            )));
        }
        if len < 2 {
            return Err(Error::Config(format!(
                "need at least 2 rows to split, got {len}"
            )));
        }
        let n_train = (train_fraction * len as f64).round() as usize;
        if n_train == 0 || n_train == len {
            return Err(Error::Config(format!(
                "train fraction {train_fraction} leaves an empty side for {len} rows"
            )));
        }
        let mut idx: Vec<usize> = (0..len).collect();
        idx.shuffle(&mut rng_from_seed(seed));
        let eval = idx.split_off(n_train);
        Ok(IndexSplit { train: idx, eval })
    }
}

/// Splits one dataset into train and eval parts.
pub fn split_train_eval(
    dataset: &PairDataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(PairDataset, PairDataset)> {
    let split = IndexSplit::random(dataset.len(), train_fraction, seed)?;
    Ok((dataset.select(&split.train), dataset.select(&split.eval)))
}

/// Classifier and estimator hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MineConfig {
    pub hidden_widths: Vec<usize>,
    /// Clipping parameter tau.
    pub clip_tau: f64,
    pub learning_rate: f64,
    pub optimizer: UpdateRule,
    pub train_fraction: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Early stopping window, in epochs.
    pub patience: usize,
    /// Early stopping threshold on the epoch loss improvement over `patience` epochs.
    pub min_improvement: f64,
    /// Partition joint and product rows with one shared index split and
    /// resample the product side within each part. When false, the joint
    /// and product sets are resampled over all rows and split independently.
    pub coupled_split: bool,
    pub rng_seed: u64,
}

impl Default for MineConfig {
    fn default() -> Self {
        MineConfig {
            hidden_widths: vec![100, 100],
            clip_tau: 0.9,
            learning_rate: 0.001,
            optimizer: UpdateRule::adam(),
            train_fraction: 0.75,
            epochs: 200,
            batch_size: 256,
            patience: 10,
            min_improvement: 1e-5,
            coupled_split: true,
            rng_seed: 0,
        }
    }
}

impl MineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        if !(self.clip_tau >= 0.0) {
            return Err(Error::Config(format!(
                "clip_tau must be nonnegative, got {}",
                self.clip_tau
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config(
                "epochs and batch_size must be positive".into(),
            ));
        }
        if self.hidden_widths.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        Ok(())
    }

    pub fn layer_sizes(&self, input_width: usize) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.hidden_widths.len() + 2);
        sizes.push(input_width);
        sizes.extend(&self.hidden_widths);
        sizes.push(1);
        sizes
    }
}

/// Loss trajectory of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Full training-set loss before the first update.
    pub initial_loss: f64,
    /// Full training-set loss of the returned parameters.
    pub final_loss: f64,
    pub epochs_run: usize,
    /// Mean minibatch loss per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Trains `net` in place on the labelled rows of `inputs`.
///
/// Minibatches are drawn from a seeded shuffle each epoch. Training stops
/// after `epochs`, or earlier when the epoch loss has improved by less than
/// `min_improvement` over the last `patience` epochs.
pub fn train_in_place(
    net: &mut DenseNetParams,
    inputs: ArrayView2<'_, f64>,
    labels: &[f64],
    cfg: &MineConfig,
    epochs: usize,
    shuffle_seed: u64,
) -> Result<TrainReport> {
    if inputs.nrows() == 0 {
        return Err(Error::Empty("training set".into()));
    }
    if labels.len() != inputs.nrows() {
        return Err(Error::Shape(format!(
            "{} labels for {} rows",
            labels.len(),
            inputs.nrows()
        )));
    }
    let initial_loss = net.crossentropy(inputs, labels)?;
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.learning_rate, net)?;
    let n = inputs.nrows();
    let width = inputs.ncols();
    let batch_size = cfg.batch_size.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_losses = Vec::with_capacity(epochs);
    let mut batch = Array2::zeros((batch_size, width));
    let mut batch_labels = vec![0.0; batch_size];

    for epoch in 0..epochs {
        order.shuffle(&mut rng_from_seed(derive_seed(shuffle_seed, epoch as u64)));
        let mut total = 0.0;
        for chunk in order.chunks(batch_size) {
            let rows = chunk.len();
            if rows != batch.nrows() {
                batch = Array2::zeros((rows, width));
                batch_labels.resize(rows, 0.0);
            }
            for (k, &i) in chunk.iter().enumerate() {
                batch.row_mut(k).assign(&inputs.row(i));
                batch_labels[k] = labels[i];
            }
            let (loss, grads) = net
                .grad_params_crossentropy(batch.view(), &batch_labels)
                .map_err(|_| Error::Divergence {
                    epoch,
                    loss: f64::NAN,
                })?;
            if !grads.is_finite() {
                return Err(Error::Divergence { epoch, loss });
            }
            opt.step(net, &grads)
                .map_err(|_| Error::Divergence { epoch, loss })?;
            total += loss * rows as f64;
        }
        let epoch_loss = total / n as f64;
        if !epoch_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                loss: epoch_loss,
            });
        }
        epoch_losses.push(epoch_loss);
        if cfg.patience > 0 && epoch_losses.len() > cfg.patience {
            let past = epoch_losses[epoch_losses.len() - 1 - cfg.patience];
            if past - epoch_loss < cfg.min_improvement {
                break;
            }
        }
    }
    let final_loss = net.crossentropy(inputs, labels)?;
    Ok(TrainReport {
        initial_loss,
        final_loss,
        epochs_run: epoch_losses.len(),
        epoch_losses,
    })
}

/// A trained two-sample classifier.
#[derive(Debug, Clone)]
pub struct Classifier {
    pub net: DenseNetParams,
    pub report: TrainReport,
}

/// Trains a classifier from scratch on joint (label 1) versus product
/// (label 0) rows, seeded by `cfg.rng_seed`.
pub fn train_classifier(
    train_joint: &PairDataset,
    train_product: &PairDataset,
    cfg: &MineConfig,
) -> Result<Classifier> {
    cfg.validate()?;
    if train_joint.is_empty() || train_product.is_empty() {
        return Err(Error::Empty("both classes need training rows".into()));
    }
    if train_joint.input_width() != train_product.input_width() {
        return Err(Error::Shape(
            "joint and product rows differ in width".into(),
        ));
    }
    let inputs = ndarray::concatenate(
        Axis(0),
        &[train_joint.inputs().view(), train_product.inputs().view()],
    )
    .expect("equal widths");
    let labels: Vec<f64> = std::iter::repeat_n(train_joint.label().target(), train_joint.len())
        .chain(std::iter::repeat_n(
            train_product.label().target(),
            train_product.len(),
        ))
        .collect();
    let mut net = DenseNetParams::init(
        &cfg.layer_sizes(inputs.ncols()),
        OutputKind::LogitScalar,
        derive_named(cfg.rng_seed, "init"),
    )?;
    let report = train_in_place(
        &mut net,
        inputs.view(),
        &labels,
        cfg,
        cfg.epochs,
        derive_named(cfg.rng_seed, "shuffle"),
    )?;
    Ok(Classifier { net, report })
}

/// Clamped classifier probabilities for a batch of logits.
pub fn clamped_probability(logit: f64) -> f64 {
    sigmoid(logit).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Whether the probability at `logit` lies strictly inside the clamp band,
/// where the odds are differentiable.
pub fn sigmoid_in_band(logit: f64) -> bool {
    let p = sigmoid(logit);
    p > PROB_CLAMP && p < 1.0 - PROB_CLAMP
}

/// Odds `p / (1 - p)` of the clamped probability for one logit.
pub fn odds_from_logit(logit: f64) -> f64 {
    let p = clamped_probability(logit);
    p / (1.0 - p)
}

/// Likelihood-ratio estimate `p / (1 - p)` at the pair `(u, v)`.
pub fn ratio_estimate(classifier: &DenseNetParams, u: &[f64], v: &[f64]) -> Result<f64> {
    let input: Vec<f64> = u.iter().chain(v).copied().collect();
    let logit = classifier.forward(&input)?;
    if logit.len() != 1 {
        return Err(Error::Shape("classifier must have a scalar output".into()));
    }
    Ok(odds_from_logit(logit[0]))
}

/// `max(min(r, e^tau), e^-tau)`.
pub fn clip_ratio(r: f64, tau: f64) -> f64 {
    let hi = tau.exp();
    r.min(hi).max(1.0 / hi)
}

/// Clipped Donsker-Varadhan plug-in from precomputed ratios.
pub fn dv_from_ratios(joint: &[f64], product: &[f64], tau: f64) -> Result<f64> {
    if joint.is_empty() || product.is_empty() {
        return Err(Error::Empty("evaluation sets must be nonempty".into()));
    }
    let joint_term = joint.iter().map(|r| r.ln()).sum::<f64>() / joint.len() as f64;
    let product_mean =
        product.iter().map(|&r| clip_ratio(r, tau)).sum::<f64>() / product.len() as f64;
    let value = joint_term - product_mean.ln();
    if !value.is_finite() {
        return Err(Error::Numeric(format!(
            "mutual information estimate is {value}"
        )));
    }
    Ok(value)
}

/// Odds for every row of `inputs`.
pub fn batch_ratios(classifier: &DenseNetParams, inputs: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
    let logits = classifier.forward_batch(inputs)?;
    Ok(logits
        .column(0)
        .iter()
        .map(|&z| odds_from_logit(z))
        .collect())
}

/// Clipped plug-in estimate on held-out joint and product rows, in nats.
pub fn estimate_mi(
    eval_joint: &PairDataset,
    eval_product: &PairDataset,
    classifier: &DenseNetParams,
    tau: f64,
) -> Result<f64> {
    if eval_joint.is_empty() || eval_product.is_empty() {
        return Err(Error::Empty("evaluation sets must be nonempty".into()));
    }
    let joint = batch_ratios(classifier, eval_joint.inputs().view())?;
    let product = batch_ratios(classifier, eval_product.inputs().view())?;
    dv_from_ratios(&joint, &product, tau)
}

/// Index plan of one estimator run: which `(u row, v row)` pairs train and
/// evaluate the classifier on each side.
#[derive(Debug, Clone, PartialEq)]
pub struct PairPlan {
    pub train_joint: Vec<usize>,
    pub train_product: Vec<(usize, usize)>,
    pub eval_joint: Vec<usize>,
    pub eval_product: Vec<(usize, usize)>,
}

impl PairPlan {
    /// Shared index partition; the product side of each part resamples `v`
    /// only from rows of that same part.
    pub fn coupled(split: &IndexSplit, resample_seed: u64) -> Self {
        let pi_train = resample_from(
            &split.train,
            split.train.len(),
            derive_seed(resample_seed, 0),
        );
        let pi_eval = resample_from(&split.eval, split.eval.len(), derive_seed(resample_seed, 1));
        PairPlan {
            train_joint: split.train.clone(),
            train_product: split.train.iter().copied().zip(pi_train).collect(),
            eval_joint: split.eval.clone(),
            eval_product: split.eval.iter().copied().zip(pi_eval).collect(),
        }
    }

    /// Resample over all rows, then split the joint and product sets with
    /// independent partitions.
    pub fn independent(
        len: usize,
        train_fraction: f64,
        split_seed: u64,
        resample_seed: u64,
    ) -> Result<Self> {
        let all: Vec<usize> = (0..len).collect();
        let pi = resample_from(&all, len, resample_seed);
        let joint_split = IndexSplit::random(len, train_fraction, split_seed)?;
        let product_split = IndexSplit::random(len, train_fraction, derive_seed(split_seed, 1))?;
        let pair = |i: usize| (i, pi[i]);
        Ok(PairPlan {
            train_joint: joint_split.train,
            train_product: product_split.train.iter().map(|&i| pair(i)).collect(),
            eval_joint: joint_split.eval,
            eval_product: product_split.eval.iter().map(|&i| pair(i)).collect(),
        })
    }

    pub fn build(
        len: usize,
        cfg: &MineConfig,
        split: &IndexSplit,
        split_seed: u64,
        resample_seed: u64,
    ) -> Result<Self> {
        if cfg.coupled_split {
            Ok(PairPlan::coupled(split, resample_seed))
        } else {
            PairPlan::independent(len, cfg.train_fraction, split_seed, resample_seed)
        }
    }

    pub fn training_set(
        &self,
        u: ArrayView2<'_, f64>,
        v: ArrayView2<'_, f64>,
    ) -> (Array2<f64>, Vec<f64>) {
        let joint: Vec<(usize, usize)> = self.train_joint.iter().map(|&i| (i, i)).collect();
        let inputs = ndarray::concatenate(
            Axis(0),
            &[
                concat_pairs(u, v, &joint).view(),
                concat_pairs(u, v, &self.train_product).view(),
            ],
        )
        .expect("equal widths");
        let labels = std::iter::repeat_n(1.0, joint.len())
            .chain(std::iter::repeat_n(0.0, self.train_product.len()))
            .collect();
        (inputs, labels)
    }

    pub fn eval_joint_pairs(&self) -> Vec<(usize, usize)> {
        self.eval_joint.iter().map(|&i| (i, i)).collect()
    }
}

/// Seeds for the stochastic steps of one estimator run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MineSeeds {
    pub split: u64,
    pub resample: u64,
    pub init: u64,
    pub shuffle: u64,
}

impl MineSeeds {
    pub fn from_base(seed: u64) -> Self {
        MineSeeds {
            split: derive_named(seed, "split"),
            resample: derive_named(seed, "resample"),
            init: derive_named(seed, "init"),
            shuffle: derive_named(seed, "shuffle"),
        }
    }
}

/// Result of one run of the estimator.
#[derive(Debug, Clone)]
pub struct MiEstimate {
    pub value_nats: f64,
    pub n_train: usize,
    pub n_eval: usize,
    pub config: MineConfig,
    pub classifier: Classifier,
    pub plan: PairPlan,
}

/// Trains on the plan's training pairs (optionally warm-starting from
/// `warm_start` with a custom epoch budget) and evaluates on its eval pairs.
pub fn fit_on_plan(
    u: ArrayView2<'_, f64>,
    v: ArrayView2<'_, f64>,
    plan: PairPlan,
    cfg: &MineConfig,
    seeds: MineSeeds,
    warm_start: Option<(&DenseNetParams, usize)>,
) -> Result<MiEstimate> {
    cfg.validate()?;
    if plan.train_joint.is_empty() || plan.eval_joint.is_empty() {
        return Err(Error::Empty("both train and eval sides need rows".into()));
    }
    let (inputs, labels) = plan.training_set(u, v);
    let (mut net, epochs) = match warm_start {
        Some((net, epochs)) => {
            if net.input_width() != inputs.ncols() {
                return Err(Error::Shape(
                    "warm-start network has the wrong input width".into(),
                ));
            }
            (net.clone(), epochs)
        }
        None => (
            DenseNetParams::init(
                &cfg.layer_sizes(inputs.ncols()),
                OutputKind::LogitScalar,
                seeds.init,
            )?,
            cfg.epochs,
        ),
    };
    let report = train_in_place(&mut net, inputs.view(), &labels, cfg, epochs, seeds.shuffle)?;
    let joint = batch_ratios(&net, concat_pairs(u, v, &plan.eval_joint_pairs()).view())?;
    let product = batch_ratios(&net, concat_pairs(u, v, &plan.eval_product).view())?;
    let value_nats = dv_from_ratios(&joint, &product, cfg.clip_tau)?;
    Ok(MiEstimate {
        value_nats,
        n_train: labels.len(),
        n_eval: joint.len() + product.len(),
        config: cfg.clone(),
        classifier: Classifier { net, report },
        plan,
    })
}

/// Full estimator on one joint sample: resample, split, train, evaluate.
pub fn run_mine(joint: &PairDataset, cfg: &MineConfig) -> Result<MiEstimate> {
    cfg.validate()?;
    if joint.label() != Label::Joint {
        return Err(Error::Config(
            "run_mine expects a joint-labelled dataset".into(),
        ));
    }
    let seeds = MineSeeds::from_base(cfg.rng_seed);
    let split = IndexSplit::random(joint.len(), cfg.train_fraction, seeds.split)?;
    let plan = PairPlan::build(joint.len(), cfg, &split, seeds.split, seeds.resample)?;
    fit_on_plan(joint.u(), joint.v(), plan, cfg, seeds, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn column(values: &[f64]) -> Array2<f64> {
        Array2::from_shape_vec((values.len(), 1), values.to_vec()).unwrap()
    }

    fn constant_classifier(width: usize) -> DenseNetParams {
        DenseNetParams::zeros(&[width, 3, 1], OutputKind::LogitScalar).unwrap()
    }

    #[test]
    fn resample_single_row_maps_to_itself() {
        let ds = PairDataset::new(column(&[1.0]), column(&[2.0]), Label::Joint).unwrap();
        let p = resample_product(&ds, 5).unwrap();
        assert_eq!(p.v(), ds.v());
        assert_eq!(p.label(), Label::Product);
    }

    #[test]
    fn resample_is_reproducible_and_rejects_empty() {
        let vals: Vec<f64> = (0..50).map(f64::from).collect();
        let ds = PairDataset::new(column(&vals), column(&vals), Label::Joint).unwrap();
        assert_eq!(
            resample_product(&ds, 3).unwrap(),
            resample_product(&ds, 3).unwrap()
        );
        assert_ne!(
            resample_product(&ds, 3).unwrap(),
            resample_product(&ds, 4).unwrap()
        );
        let empty =
            PairDataset::new(Array2::zeros((0, 1)), Array2::zeros((0, 1)), Label::Joint).unwrap();
        assert!(matches!(resample_product(&empty, 0), Err(Error::Empty(_))));
    }

    #[test]
    fn self_match_rate_is_about_one_over_t() {
        // P(pi(n) = n) = 1/T for each n, so the expected number of fixed
        // points is exactly 1 for every T.
        let t = 1000;
        let all: Vec<usize> = (0..t).collect();
        let mut fixed = 0usize;
        let reps = 400;
        for seed in 0..reps {
            let pi = resample_from(&all, t, seed);
            fixed += pi.iter().enumerate().filter(|(n, &p)| *n == p).count();
        }
        let mean = fixed as f64 / reps as f64;
        // Poisson(1) mean over 400 reps: standard error 0.05.
        assert!((mean - 1.0).abs() < 0.2, "mean fixed points {mean}");
    }

    #[test]
    fn split_sizes_and_errors() {
        let s = IndexSplit::random(100, 0.75, 1).unwrap();
        assert_eq!((s.train.len(), s.eval.len()), (75, 25));
        let mut all: Vec<usize> = s.train.iter().chain(&s.eval).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(s, IndexSplit::random(100, 0.75, 1).unwrap());
        assert!(matches!(
            IndexSplit::random(2, 0.9, 0),
            Err(Error::Config(_))
        ));
        assert!(IndexSplit::random(1, 0.5, 0).is_err());
        assert!(IndexSplit::random(10, 1.0, 0).is_err());
        assert!(IndexSplit::random(10, 0.0, 0).is_err());
    }

    #[test]
    fn split_train_eval_partitions_rows() {
        let vals: Vec<f64> = (0..20).map(f64::from).collect();
        let ds = PairDataset::new(column(&vals), column(&vals), Label::Joint).unwrap();
        let (tr, ev) = split_train_eval(&ds, 0.75, 9).unwrap();
        assert_eq!((tr.len(), ev.len()), (15, 5));
        let mut seen: Vec<f64> = tr.u().iter().chain(ev.u().iter()).copied().collect();
        seen.sort_by(f64::total_cmp);
        assert_eq!(seen, vals);
    }

    #[test]
    fn coupled_plan_keeps_eval_rows_held_out() {
        let split = IndexSplit::random(200, 0.75, 3).unwrap();
        let plan = PairPlan::coupled(&split, 8);
        let eval: std::collections::HashSet<_> = split.eval.iter().copied().collect();
        assert!(plan
            .eval_product
            .iter()
            .all(|(i, j)| eval.contains(i) && eval.contains(j)));
        assert!(plan
            .train_product
            .iter()
            .all(|(i, j)| !eval.contains(i) && !eval.contains(j)));
    }

    #[test]
    fn ratio_values() {
        let net = constant_classifier(2);
        assert_eq!(ratio_estimate(&net, &[1.0], &[3.0]).unwrap(), 1.0);
        // logit ln 4 gives p = 0.8
        let net = DenseNetParams::from_parts(
            vec![ndarray::array![[0.0, 0.0]]],
            vec![ndarray::array![4f64.ln()]],
            OutputKind::LogitScalar,
        )
        .unwrap();
        assert!((ratio_estimate(&net, &[0.0], &[0.0]).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn ratio_is_clamped() {
        let big = odds_from_logit(1e3);
        let small = odds_from_logit(-1e3);
        assert!(big.is_finite() && big > 0.0);
        assert!((big - (1.0 - PROB_CLAMP) / PROB_CLAMP).abs() < 1e-3);
        assert!(small > 0.0);
    }

    #[test]
    fn clip_values() {
        assert_eq!(clip_ratio(5.0, 0.0), 1.0);
        assert!((clip_ratio(10.0, 0.9) - 2.459_603_111_156_95).abs() < 1e-12);
        assert_eq!(clip_ratio(1.0, 0.9), 1.0);
        assert!((clip_ratio(1e-9, 0.9) - (-0.9f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn constant_classifier_gives_exactly_zero() {
        let vals: Vec<f64> = (0..30).map(|i| (i as f64 * 0.37).sin()).collect();
        let joint = PairDataset::new(column(&vals), column(&vals), Label::Joint).unwrap();
        let prod = resample_product(&joint, 1).unwrap();
        let mi = estimate_mi(&joint, &prod, &constant_classifier(2), 0.9).unwrap();
        assert_eq!(mi, 0.0);
    }

    #[test]
    fn estimate_rejects_empty_eval() {
        let joint = PairDataset::new(column(&[1.0]), column(&[1.0]), Label::Joint).unwrap();
        let empty =
            PairDataset::new(Array2::zeros((0, 1)), Array2::zeros((0, 1)), Label::Product).unwrap();
        assert!(matches!(
            estimate_mi(&joint, &empty, &constant_classifier(2), 0.9),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn config_validation() {
        assert!(MineConfig::default().validate().is_ok());
        let bad = MineConfig {
            train_fraction: 1.0,
            ..MineConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = MineConfig {
            clip_tau: -1.0,
            ..MineConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn dataset_rejects_mismatch() {
        assert!(PairDataset::new(column(&[1.0, 2.0]), column(&[1.0]), Label::Joint).is_err());
        assert!(PairDataset::new(column(&[f64::NAN]), column(&[1.0]), Label::Joint).is_err());
    }
}
