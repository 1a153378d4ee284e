//! Seeded benchmark processes and their closed-form values.

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mine::{Label, PairDataset};
use crate::rng::{derive_named, rng_from_seed};
use crate::te::SeriesPair;

fn normals(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Standard normal upper tail probability `Q(x) = 0.5 erfc(x / sqrt 2)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// Threshold-switched Gaussian process.
///
/// `X_t, Z_t` are i.i.d. N(0, 1) and
///
/// ```text
/// Y_t = Z_t                                   if Y_{t-1} <  lambda
/// Y_t = rho X_{t-1} + sqrt(1 - rho^2) Z_t     if Y_{t-1} >= lambda
/// ```
///
/// with `Y_1 = Z_1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdProcessSpec {
    pub rho: f64,
    pub lambda: f64,
    pub len: usize,
    pub seed: u64,
}

impl ThresholdProcessSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho.abs() < 1.0) {
            return Err(Error::Config(format!(
                "|rho| must be < 1, got {}",
                self.rho
            )));
        }
        if self.lambda.is_nan() {
            return Err(Error::Config("lambda is NaN".into()));
        }
        if self.len < 2 {
            return Err(Error::Config(format!(
                "length must be >= 2, got {}",
                self.len
            )));
        }
        Ok(())
    }
}

pub fn gen_threshold_process(spec: &ThresholdProcessSpec) -> Result<SeriesPair> {
    spec.validate()?;
    let x = normals(spec.len, derive_named(spec.seed, "threshold-x"));
    let z = normals(spec.len, derive_named(spec.seed, "threshold-z"));
    let gain = (1.0 - spec.rho * spec.rho).sqrt();
    let mut y = Vec::with_capacity(spec.len);
    y.push(z[0]);
    for t in 1..spec.len {
        let next = if y[t - 1] < spec.lambda {
            z[t]
        } else {
            spec.rho * x[t - 1] + gain * z[t]
        };
        y.push(next);
    }
    SeriesPair::new(x, y)
}

/// Transfer entropy of the threshold process for `m = n = 1`:
/// `-0.5 Q(lambda) ln(1 - rho^2)` nats.
pub fn closed_form_te(rho: f64, lambda: f64) -> Result<f64> {
    if !(rho.abs() < 1.0) {
        return Err(Error::Config(format!("|rho| must be < 1, got {rho}")));
    }
    Ok(-0.5 * q_function(lambda) * (1.0 - rho * rho).ln())
}

/// Mutual information of a standard bivariate normal pair with correlation `rho`.
pub fn gaussian_mi(rho: f64) -> f64 {
    -0.5 * (1.0 - rho * rho).ln()
}

/// I.i.d. standard bivariate normal rows with correlation `rho`.
pub fn gen_gaussian_pair(rho: f64, len: usize, seed: u64) -> Result<PairDataset> {
    if !(rho.abs() < 1.0) {
        return Err(Error::Config(format!("|rho| must be < 1, got {rho}")));
    }
    let a = normals(len, derive_named(seed, "gauss-u"));
    let b = normals(len, derive_named(seed, "gauss-noise"));
    let gain = (1.0 - rho * rho).sqrt();
    let v: Vec<f64> = a.iter().zip(&b).map(|(a, b)| rho * a + gain * b).collect();
    PairDataset::new(
        Array2::from_shape_vec((len, 1), a).expect("sized"),
        Array2::from_shape_vec((len, 1), v).expect("sized"),
        Label::Joint,
    )
}

/// Binary XOR process with Gaussian dither.
///
/// Clean bits: `X_t` i.i.d. fair, `Y_1` fair, `Y_t = X_{t-1} xor Y_{t-1}`.
/// Every emitted value gets independent N(0, noise_std^2) noise.
pub fn gen_xor_process(noise_std: f64, len: usize, seed: u64) -> Result<SeriesPair> {
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(Error::Config(format!(
            "noise_std must be nonnegative, got {noise_std}"
        )));
    }
    if len < 2 {
        return Err(Error::Config(format!("length must be >= 2, got {len}")));
    }
    let mut rng = rng_from_seed(derive_named(seed, "xor-bits"));
    let x_bits: Vec<u8> = (0..len).map(|_| rng.gen_range(0..2)).collect();
    let mut y_bits = Vec::with_capacity(len);
    y_bits.push(rng.gen_range(0..2u8));
    for t in 1..len {
        y_bits.push(x_bits[t - 1] ^ y_bits[t - 1]);
    }
    let dx = normals(len, derive_named(seed, "xor-dither-x"));
    let dy = normals(len, derive_named(seed, "xor-dither-y"));
    let x = x_bits
        .iter()
        .zip(&dx)
        .map(|(&b, d)| f64::from(b) + noise_std * d)
        .collect();
    let y = y_bits
        .iter()
        .zip(&dy)
        .map(|(&b, d)| f64::from(b) + noise_std * d)
        .collect();
    SeriesPair::new(x, y)
}

/// Two independent i.i.d. N(0, 1) series.
pub fn gen_independent(len: usize, seed: u64) -> Result<SeriesPair> {
    SeriesPair::new(
        normals(len, derive_named(seed, "indep-x")),
        normals(len, derive_named(seed, "indep-y")),
    )
}
