//! Transfer entropy as a difference of two mutual informations.
//!
//! With `x-` the last `m` source samples, `y-` the last `n` target samples
//! and `y0` the current target sample,
//!
//! ```text
//! TE = I(x-; y0, y-) - I(x-; y-)
//! ```
//!
//! and each term is estimated with the classifier-based estimator in
//! [`crate::mine`].

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mine::{fit_on_plan, IndexSplit, MiEstimate, MineConfig, MineSeeds, PairPlan};
use crate::rng::derive_named;

/// Two aligned scalar time series.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesPair {
    x: Vec<f64>,
    y: Vec<f64>,
}

impl SeriesPair {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::Shape(format!(
                "source has {} samples, target has {}",
                x.len(),
                y.len()
            )));
        }
        if let Some(t) = x.iter().chain(&y).position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("series value {t} is not finite")));
        }
        Ok(SeriesPair { x, y })
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// The pair with source and target exchanged.
    pub fn reversed(&self) -> SeriesPair {
        SeriesPair {
            x: self.y.clone(),
            y: self.x.clone(),
        }
    }
}

/// Memory orders of the source (`m`) and target (`n`) pasts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    pub m: usize,
    pub n: usize,
    /// Drop the first `max(m, n)` rows, which contain zero padding.
    #[serde(default)]
    pub drop_padded: bool,
}

impl EmbeddingConfig {
    pub fn new(m: usize, n: usize) -> Self {
        EmbeddingConfig {
            m,
            n,
            drop_padded: false,
        }
    }

    pub fn validate(&self, len: usize) -> Result<()> {
        if self.m == 0 || self.n == 0 {
            return Err(Error::Config(format!(
                "memory orders must be positive, got m={} n={}",
                self.m, self.n
            )));
        }
        let needed = self.m.max(self.n) + 1;
        if len < needed {
            return Err(Error::Config(format!(
                "series of length {len} is too short for m={} n={} (need {needed})",
                self.m, self.n
            )));
        }
        Ok(())
    }
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig::new(1, 1)
    }
}

/// Sliding-window rows `(x-, y0, y-)`, one per time step.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedDataset {
    /// `(x_{t-m}, ..., x_{t-1})`, shape `(rows, m)`.
    pub x_minus: Array2<f64>,
    /// `y_t`, shape `(rows, 1)`.
    pub y0: Array2<f64>,
    /// `(y_{t-n}, ..., y_{t-1})`, shape `(rows, n)`.
    pub y_minus: Array2<f64>,
}

impl EmbeddedDataset {
    pub fn len(&self) -> usize {
        self.y0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(y0, y-)` side by side, shape `(rows, 1 + n)`.
    pub fn y0_and_minus(&self) -> Array2<f64> {
        ndarray::concatenate(Axis(1), &[self.y0.view(), self.y_minus.view()])
            .expect("same row count")
    }

    /// `y0` followed by an arbitrary replacement of `y-`.
    pub fn y0_with(&self, y_minus: ArrayView2<'_, f64>) -> Array2<f64> {
        ndarray::concatenate(Axis(1), &[self.y0.view(), y_minus.view()]).expect("same row count")
    }
}

/// Window of `k` samples ending just before `t`, zero for indices before the start.
fn window(series: &[f64], t: usize, k: usize) -> impl Iterator<Item = f64> + '_ {
    (0..k).map(move |j| {
        // index t - k + j, in 0-based time
        let back = k - j;
        if back > t {
            0.0
        } else {
            series[t - back]
        }
    })
}

/// Sliding-window embedding with zero padding for out-of-range indices.
pub fn embed(series: &SeriesPair, cfg: &EmbeddingConfig) -> Result<EmbeddedDataset> {
    let len = series.len();
    cfg.validate(len)?;
    let start = if cfg.drop_padded { cfg.m.max(cfg.n) } else { 0 };
    let rows = len - start;
    let mut x_minus = Array2::zeros((rows, cfg.m));
    let mut y_minus = Array2::zeros((rows, cfg.n));
    let mut y0 = Array2::zeros((rows, 1));
    for (r, t) in (start..len).enumerate() {
        for (dst, v) in x_minus
            .row_mut(r)
            .iter_mut()
            .zip(window(series.x(), t, cfg.m))
        {
            *dst = v;
        }
        for (dst, v) in y_minus
            .row_mut(r)
            .iter_mut()
            .zip(window(series.y(), t, cfg.n))
        {
            *dst = v;
        }
        y0[[r, 0]] = series.y()[t];
    }
    Ok(EmbeddedDataset {
        x_minus,
        y0,
        y_minus,
    })
}

/// Seeds of one transfer entropy estimate. Both sub-estimators share the
/// index split; resampling and training streams are independent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeSeeds {
    pub split: u64,
    pub a: MineSeeds,
    pub b: MineSeeds,
}

impl TeSeeds {
    pub fn from_base(seed: u64) -> Self {
        let split = derive_named(seed, "te-split");
        let with_split = |tag: &str| MineSeeds {
            split,
            ..MineSeeds::from_base(derive_named(seed, tag))
        };
        TeSeeds {
            split,
            a: with_split("te-a"),
            b: with_split("te-b"),
        }
    }

    /// The same seeds with the two sub-estimators exchanged.
    pub fn swapped(self) -> Self {
        TeSeeds {
            split: self.split,
            a: self.b,
            b: self.a,
        }
    }
}

/// Transfer entropy estimate and its two terms.
#[derive(Debug, Clone)]
pub struct TeEstimate {
    pub te_nats: f64,
    /// Estimate of `I(x-; y0, y-)`.
    pub mi_a: MiEstimate,
    /// Estimate of `I(x-; y-)`.
    pub mi_b: MiEstimate,
    pub split: IndexSplit,
}

/// Estimates `I(x-; y0, y-) - I(x-; y-)` on an embedded dataset.
///
/// `v_a` and `v_b` replace `(y0, y-)` and `y-` respectively when given; the
/// intrinsic estimator passes channel outputs through here.
pub fn estimate_te_embedded(
    data: &EmbeddedDataset,
    v_a: ArrayView2<'_, f64>,
    v_b: ArrayView2<'_, f64>,
    mine_cfg: &MineConfig,
    seeds: TeSeeds,
) -> Result<TeEstimate> {
    mine_cfg.validate()?;
    let split = IndexSplit::random(data.len(), mine_cfg.train_fraction, seeds.split)?;
    let plan_a = PairPlan::build(
        data.len(),
        mine_cfg,
        &split,
        seeds.a.split,
        seeds.a.resample,
    )?;
    let plan_b = PairPlan::build(
        data.len(),
        mine_cfg,
        &split,
        seeds.b.split,
        seeds.b.resample,
    )?;
    let u = data.x_minus.view();
    let (mi_a, mi_b) = rayon::join(
        || fit_on_plan(u, v_a, plan_a, mine_cfg, seeds.a, None),
        || fit_on_plan(u, v_b, plan_b, mine_cfg, seeds.b, None),
    );
    let (mi_a, mi_b) = (mi_a?, mi_b?);
    Ok(TeEstimate {
        te_nats: mi_a.value_nats - mi_b.value_nats,
        mi_a,
        mi_b,
        split,
    })
}

/// Transfer entropy from `x` to `y`, seeded by `mine_cfg.rng_seed`.
pub fn estimate_te(
    series: &SeriesPair,
    cfg: &EmbeddingConfig,
    mine_cfg: &MineConfig,
) -> Result<TeEstimate> {
    let data = embed(series, cfg)?;
    estimate_te_with_seeds(&data, mine_cfg, TeSeeds::from_base(mine_cfg.rng_seed))
}

pub fn estimate_te_with_seeds(
    data: &EmbeddedDataset,
    mine_cfg: &MineConfig,
    seeds: TeSeeds,
) -> Result<TeEstimate> {
    let v_a = data.y0_and_minus();
    estimate_te_embedded(data, v_a.view(), data.y_minus.view(), mine_cfg, seeds)
}

/// Estimates of transfer entropy and its intrinsic and synergistic parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowEstimates {
    pub te_nats: f64,
    pub ite_nats: f64,
    /// Always `te_nats - ite_nats`.
    pub ste_nats: f64,
    pub seed: u64,
    pub len: usize,
}

impl FlowEstimates {
    pub fn new(te_nats: f64, ite_nats: f64, seed: u64, len: usize) -> Self {
        FlowEstimates {
            te_nats,
            ite_nats,
            ste_nats: te_nats - ite_nats,
            seed,
            len,
        }
    }
}

/// Nats to bits.
pub fn nats_to_bits(nats: f64) -> f64 {
    nats / std::f64::consts::LN_2
}

/// Pearson correlation of two equal-length slices.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let a = Array1::from(a.to_vec());
    let b = Array1::from(b.to_vec());
    let (ma, mb) = (a.mean().unwrap_or(0.0), b.mean().unwrap_or(0.0));
    let da = &a - ma;
    let db = &b - mb;
    da.dot(&db) / (da.dot(&da) * db.dot(&db)).sqrt()
}
