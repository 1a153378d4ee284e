//! Shared oracles for the integration and acceptance tests.

#![allow(dead_code)]

use itene::itene::{
    pathwise_grad_phi, phi_objective, Denominator, NoiseBatch, ReparamChannel, TermModel,
};
use itene::mine::{IndexSplit, PairPlan};
use itene::nn::{DenseNetParams, OutputKind};
use itene::rng::{derive_seed, rng_from_seed};
use itene::te::{embed, EmbeddedDataset, EmbeddingConfig, SeriesPair};
use ndarray::Array2;
use rand::Rng;

pub const FD_STEP: f64 = 1e-5;

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn central_differences(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + FD_STEP;
            let up = f(&probe);
            probe[i] = orig - FD_STEP;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// `||a - b|| / max(||a||, ||b||)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Random network with widths in `1..=4` per hidden layer.
pub fn tiny_net(input: usize, output: usize, kind: OutputKind, seed: u64) -> DenseNetParams {
    let mut rng = rng_from_seed(seed);
    let depth = rng.gen_range(1..=2);
    let mut sizes = vec![input];
    for _ in 0..depth {
        sizes.push(rng.gen_range(1..=4));
    }
    sizes.push(output);
    let mut net = DenseNetParams::init(&sizes, kind, derive_seed(seed, 1)).unwrap();
    for b in net.biases_mut() {
        b.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
    }
    net
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = rng_from_seed(seed);
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-2.0..2.0))
}

/// Maximum relative error of the cross-entropy parameter gradient.
pub fn crossentropy_fd_error(seed: u64) -> f64 {
    let mut rng = rng_from_seed(derive_seed(seed, 7));
    let input = rng.gen_range(1..=4);
    let net = tiny_net(input, 1, OutputKind::LogitScalar, seed);
    let batch = rng.gen_range(1..=6);
    let x = random_matrix(batch, input, derive_seed(seed, 8));
    let labels: Vec<f64> = (0..batch)
        .map(|_| f64::from(rng.gen_range(0..2u8)))
        .collect();
    let (_, g) = net.grad_params_crossentropy(x.view(), &labels).unwrap();
    let fd = central_differences(&net.to_flat(), |p| {
        let mut n = net.clone();
        n.set_flat(p).unwrap();
        n.crossentropy(x.view(), &labels).unwrap()
    });
    relative_error(&g.to_flat(), &fd)
}

/// Maximum relative error of the input Jacobian.
pub fn input_gradient_fd_error(seed: u64) -> f64 {
    let mut rng = rng_from_seed(derive_seed(seed, 9));
    let input = rng.gen_range(1..=4);
    let output = rng.gen_range(1..=2) * 2;
    let net = tiny_net(input, output, OutputKind::MeanAndLogStd, seed);
    let x: Vec<f64> = (0..input).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let jac = net.grad_input(&x).unwrap();
    let mut worst = 0.0f64;
    for k in 0..output {
        let fd = central_differences(&x, |p| net.forward(p).unwrap()[k]);
        worst = worst.max(relative_error(jac.row(k).as_slice().unwrap(), &fd));
    }
    worst
}

/// A tiny frozen instance of the channel objective.
pub struct TinyInstance {
    pub data: EmbeddedDataset,
    pub noise: NoiseBatch,
    pub channel: ReparamChannel,
    pub theta_a: DenseNetParams,
    pub theta_b: DenseNetParams,
    pub plan_a: PairPlan,
    pub plan_b: PairPlan,
}

impl TinyInstance {
    pub fn new(seed: u64) -> Self {
        let mut rng = rng_from_seed(derive_seed(seed, 11));
        let len = 8;
        let n = rng.gen_range(1..=2);
        let m = rng.gen_range(1..=2);
        let x: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let y: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let data = embed(&SeriesPair::new(x, y).unwrap(), &EmbeddingConfig::new(m, n)).unwrap();
        let noise = NoiseBatch::draw(len, n, derive_seed(seed, 12));
        let mut net = tiny_net(n, 2 * n, OutputKind::MeanAndLogStd, derive_seed(seed, 13));
        let last = net.num_layers() - 1;
        for v in net.biases_mut()[last].iter_mut().skip(n) {
            *v = rng.gen_range(-1.5..-0.5);
        }
        let channel = ReparamChannel::from_net(net, true, -6.0, 2.0).unwrap();
        let theta_a = tiny_net(m + 1 + n, 1, OutputKind::LogitScalar, derive_seed(seed, 14));
        let theta_b = tiny_net(m + n, 1, OutputKind::LogitScalar, derive_seed(seed, 15));
        let split = IndexSplit::random(len, 0.5, derive_seed(seed, 16)).unwrap();
        let plan_a = PairPlan::coupled(&split, derive_seed(seed, 17));
        let plan_b = PairPlan::coupled(&split, derive_seed(seed, 18));
        TinyInstance {
            data,
            noise,
            channel,
            theta_a,
            theta_b,
            plan_a,
            plan_b,
        }
    }

    pub fn models(&self) -> (TermModel<'_>, TermModel<'_>) {
        (
            TermModel {
                classifier: &self.theta_a,
                plan: &self.plan_a,
            },
            TermModel {
                classifier: &self.theta_b,
                plan: &self.plan_b,
            },
        )
    }

    pub fn objective_at(&self, flat: &[f64], tau: f64) -> f64 {
        let mut ch = self.channel.clone();
        ch.net_mut().set_flat(flat).unwrap();
        let (a, b) = self.models();
        phi_objective(&ch, &self.data, &self.noise, a, b, tau).unwrap()
    }

    /// Relative error between the pathwise gradient and central differences
    /// of the clipped objective.
    pub fn fd_error(&self, tau: f64, denominator: Denominator) -> f64 {
        let (a, b) = self.models();
        let g = pathwise_grad_phi(
            &self.channel,
            &self.data,
            &self.noise,
            a,
            b,
            tau,
            denominator,
        )
        .unwrap();
        let fd = central_differences(&self.channel.net().to_flat(), |p| self.objective_at(p, tau));
        relative_error(&g.grads.to_flat(), &fd)
    }
}
