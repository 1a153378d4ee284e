//! End-to-end acceptance checks. Prints one PASS/FAIL line per check and
//! exits nonzero if any check fails.

mod common;

use std::fs;
use std::time::Instant;

use common::{crossentropy_fd_error, TinyInstance};
use itene::harness::{
    emit_report, median, quantize_returns, run_experiment, Band, ExperimentConfig,
    ExperimentReport, QuantizeSpec, Sweep, SweepParam, TrialRow,
};
use itene::itene::{objective_cold, Denominator, IteneConfig, NoiseBatch, ReparamChannel};
use itene::mine::{batch_ratios, clip_ratio, concat_pairs, dv_from_ratios, run_mine, MineConfig};
use itene::nn::UpdateRule;
use itene::synthetic::{
    closed_form_te, gaussian_mi, gen_gaussian_pair, gen_threshold_process, ThresholdProcessSpec,
};
use itene::te::{embed, estimate_te_with_seeds, EmbeddingConfig, TeSeeds};

const TRIALS: usize = 10;
const LEN: usize = 20_000;
const RHO: f64 = 0.9;

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn check(name: &'static str, pass: bool, detail: String) -> Outcome {
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("{tag}  {name}: {detail}");
    Outcome { name, pass, detail }
}

/// Classifier settings used for the transfer entropy checks.
fn te_mine() -> MineConfig {
    MineConfig::default()
}

/// Settings of the intrinsic estimator runs. The classifiers are narrower and
/// warm refits shorter than the defaults to fit the single-core budget.
fn itene_config(clip_tau: f64) -> IteneConfig {
    IteneConfig {
        outer_iterations: 10,
        refit_epochs: 3,
        phi_optimizer: UpdateRule::adam(),
        phi_learning_rate: 0.01,
        mine: MineConfig {
            hidden_widths: vec![32, 32],
            clip_tau,
            ..MineConfig::default()
        },
        ..IteneConfig::default()
    }
}

fn experiment(source: &str, len: usize, te_only: bool, itene: IteneConfig) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.set("source", source).unwrap();
    cfg.set("len", &len.to_string()).unwrap();
    cfg.trials = TRIALS;
    cfg.te_only = te_only;
    cfg.itene = itene;
    cfg
}

fn with_lambda_sweep(mut cfg: ExperimentConfig, values: &[f64]) -> ExperimentConfig {
    cfg.sweep = Some(Sweep {
        param: SweepParam::Lambda,
        values: values.to_vec(),
    });
    cfg
}

fn rows_at(report: &ExperimentReport, point: f64) -> Vec<&TrialRow> {
    report
        .rows
        .iter()
        .filter(|r| r.sweep_value == Some(point))
        .collect()
}

fn run_logged(label: &str, cfg: &ExperimentConfig) -> ExperimentReport {
    let start = Instant::now();
    let report = run_experiment(cfg).expect("valid configuration");
    for f in &report.failures {
        eprintln!("  {label}: trial {} failed: {}", f.trial, f.message);
    }
    eprintln!("  {label}: {:.0}s", start.elapsed().as_secs_f64());
    report
}

fn gaussian_oracle() -> Outcome {
    let start = Instant::now();
    let truth = gaussian_mi(RHO);
    let estimates: Vec<f64> = (0..TRIALS as u64)
        .map(|seed| {
            let joint = gen_gaussian_pair(RHO, LEN, seed).unwrap();
            let cfg = MineConfig {
                rng_seed: seed,
                ..te_mine()
            };
            run_mine(&joint, &cfg).unwrap().value_nats
        })
        .collect();
    let secs = start.elapsed().as_secs_f64();
    let med = median(&estimates).unwrap();
    check(
        "gaussian mutual information",
        (med - truth).abs() <= 0.10 && secs <= 300.0,
        format!("median {med:.4} vs {truth:.4} (tolerance 0.10), {secs:.0}s of 300s"),
    )
}

fn threshold_sweep(report: &ExperimentReport, secs: f64) -> Outcome {
    let mut ok = secs <= 1800.0;
    let mut parts = Vec::new();
    for lambda in [-3.0, -1.0, 0.0, 1.0, 3.0] {
        let te: Vec<f64> = rows_at(report, lambda).iter().map(|r| r.te_nats).collect();
        let truth = closed_form_te(RHO, lambda).unwrap();
        let Some(band) = Band::of(&te) else {
            ok = false;
            parts.push(format!("lambda {lambda}: no trials"));
            continue;
        };
        let inside = band.min <= truth && truth <= band.max;
        ok &= te.len() == TRIALS && (band.median - truth).abs() <= 0.12 && inside;
        parts.push(format!(
            "lambda {lambda}: {:.3} [{:.3}, {:.3}] vs {truth:.3}",
            band.median, band.min, band.max
        ));
    }
    check(
        "threshold transfer entropy sweep",
        ok,
        format!("{}; {secs:.0}s of 1800s", parts.join("; ")),
    )
}

fn ite_endpoints(report: &ExperimentReport) -> Outcome {
    let ste = |lambda: f64| {
        let v: Vec<f64> = rows_at(report, lambda)
            .iter()
            .filter_map(|r| r.ste_nats)
            .collect();
        median(&v).unwrap_or(f64::NAN)
    };
    let (lo, mid, hi) = (ste(-3.0), ste(0.0), ste(3.0));
    check(
        "synergy near zero at the threshold extremes",
        lo.abs() < 0.10 && hi.abs() < 0.10 && mid > lo && mid > hi,
        format!("median STE {lo:.3} (lambda -3), {mid:.3} (lambda 0), {hi:.3} (lambda 3)"),
    )
}

fn consistency(long: &ExperimentReport) -> Outcome {
    let truth = closed_form_te(RHO, 0.0).unwrap();
    let abs_err = |rows: Vec<&TrialRow>| {
        let v: Vec<f64> = rows.iter().map(|r| (r.te_nats - truth).abs()).collect();
        median(&v).unwrap_or(f64::NAN)
    };
    let short_cfg = with_lambda_sweep(
        experiment(
            "threshold",
            2000,
            true,
            IteneConfig {
                mine: te_mine(),
                ..IteneConfig::default()
            },
        ),
        &[0.0],
    );
    let short = run_logged("length 2000", &short_cfg);
    let (e_short, e_long) = (abs_err(rows_at(&short, 0.0)), abs_err(rows_at(long, 0.0)));
    check(
        "accuracy improves with length",
        e_long < e_short,
        format!("median |error| {e_short:.4} at 2000, {e_long:.4} at {LEN}"),
    )
}

fn xor_separation() -> Outcome {
    let tau = 5.0;
    let cfg = experiment("xor", LEN, false, itene_config(tau));
    let report = run_logged("xor", &cfg);
    let te = median(&report.rows.iter().map(|r| r.te_nats).collect::<Vec<_>>()).unwrap_or(f64::NAN);
    let ite = median(
        &report
            .rows
            .iter()
            .filter_map(|r| r.ite_nats)
            .collect::<Vec<_>>(),
    )
    .unwrap_or(f64::NAN);
    let ln2 = std::f64::consts::LN_2;
    check(
        "xor synergy separation",
        report.rows.len() == TRIALS && (te - ln2).abs() <= 0.12 && ite < 0.15,
        format!("median TE {te:.3} vs {ln2:.3} (tolerance 0.12), median ITE {ite:.3} (< 0.15), tau {tau}"),
    )
}

fn null_control() -> Outcome {
    let cfg = experiment("independent", 10_000, false, itene_config(0.9));
    let report = run_logged("independent", &cfg);
    let te = median(&report.rows.iter().map(|r| r.te_nats).collect::<Vec<_>>()).unwrap_or(f64::NAN);
    let ite = median(
        &report
            .rows
            .iter()
            .filter_map(|r| r.ite_nats)
            .collect::<Vec<_>>(),
    )
    .unwrap_or(f64::NAN);
    check(
        "independent series null control",
        report.rows.len() == TRIALS && te.abs() < 0.05 && ite.abs() < 0.05,
        format!("median TE {te:.4}, median ITE {ite:.4} (both |.| < 0.05)"),
    )
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let instances = 120u64;
    let ce = (0..instances)
        .map(crossentropy_fd_error)
        .fold(0.0, f64::max);
    let clipped = (0..instances)
        .map(|s| TinyInstance::new(s).fd_error(0.9, Denominator::Clipped))
        .fold(0.0, f64::max);
    let unclipped = (0..instances)
        .map(|s| TinyInstance::new(s).fd_error(10.0, Denominator::Unclipped))
        .fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    let pathwise = clipped.max(unclipped);
    check(
        "gradients against finite differences",
        ce <= 1e-4 && pathwise <= 1e-3 && secs < 60.0,
        format!(
            "{instances} instances: cross-entropy max rel {ce:.1e} (<= 1e-4), pathwise max rel {pathwise:.1e} (<= 1e-3), {secs:.1}s"
        ),
    )
}

fn sample_variance(v: &[f64]) -> f64 {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

fn clipping_variance() -> Outcome {
    let rho = 0.95;
    // The clip level only enters evaluation, so one classifier serves both.
    let (mut clipped, mut loose, mut product_clipped, mut product_loose) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for seed in 0..TRIALS as u64 {
        let joint = gen_gaussian_pair(rho, LEN, seed).unwrap();
        let cfg = MineConfig {
            rng_seed: seed,
            ..te_mine()
        };
        let est = run_mine(&joint, &cfg).unwrap();
        let net = &est.classifier.net;
        let pairs = |p: &[(usize, usize)]| concat_pairs(joint.u(), joint.v(), p);
        let jr = batch_ratios(net, pairs(&est.plan.eval_joint_pairs()).view()).unwrap();
        let pr = batch_ratios(net, pairs(&est.plan.eval_product).view()).unwrap();
        clipped.push(dv_from_ratios(&jr, &pr, 0.9).unwrap());
        loose.push(dv_from_ratios(&jr, &pr, 10.0).unwrap());
        let log_mean =
            |tau: f64| (pr.iter().map(|&r| clip_ratio(r, tau)).sum::<f64>() / pr.len() as f64).ln();
        product_clipped.push(log_mean(0.9));
        product_loose.push(log_mean(10.0));
    }
    let (vc, vl) = (sample_variance(&clipped), sample_variance(&loose));
    check(
        "clipping reduces variance",
        vc <= vl,
        format!(
            "estimate variance {vc:.2e} at tau 0.9, {vl:.2e} at tau 10; product term alone {:.2e} vs {:.2e}",
            sample_variance(&product_clipped),
            sample_variance(&product_loose)
        ),
    )
}

fn identity_reduction() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..3u64 {
        let series = gen_threshold_process(&ThresholdProcessSpec {
            rho: RHO,
            lambda: 0.0,
            len: LEN,
            seed,
        })
        .unwrap();
        let data = embed(&series, &EmbeddingConfig::default()).unwrap();
        let cfg = MineConfig {
            rng_seed: seed,
            ..te_mine()
        };
        let seeds = TeSeeds::from_base(seed);
        let te = estimate_te_with_seeds(&data, &cfg, seeds).unwrap().te_nats;
        let channel = ReparamChannel::degenerate_identity(1, &[200]).unwrap();
        let noise = NoiseBatch::draw(data.len(), 1, seed);
        let obj = objective_cold(&channel, &data, &noise, &cfg, seeds)
            .unwrap()
            .te_nats;
        worst = worst.max((obj - te).abs());
    }
    check(
        "identity channel reproduces transfer entropy",
        worst <= 0.02,
        format!("max |objective - TE| {worst:.2e} over 3 seeds (<= 0.02)"),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = Vec::new();
    for name in ["a", "b"] {
        let mut cfg = ExperimentConfig::default();
        for (k, v) in [
            ("len", "1000"),
            ("trials", "3"),
            ("hidden", "16,16"),
            ("epochs", "10"),
            ("outer_iterations", "4"),
            ("refit_epochs", "2"),
            ("phi_hidden", "16"),
            ("sweep_param", "lambda"),
            ("sweep_values", "-1,1"),
        ] {
            cfg.set(k, v).unwrap();
        }
        let out = dir.path().join(name);
        let report = run_experiment(&cfg).unwrap();
        emit_report(&report, &out).unwrap();
        bytes.push(fs::read(out.join("trials.csv")).unwrap());
    }
    let identical = bytes[0] == bytes[1] && !bytes[0].is_empty();
    let spec = QuantizeSpec::default();
    let examples = [
        ([100.0, 101.0], 1.0),
        ([100.0, 100.5], 0.0),
        ([100.0, 99.0], -1.0),
    ];
    let quantize_ok = examples
        .iter()
        .all(|(p, l)| quantize_returns(p, &spec).unwrap() == [*l]);
    check(
        "determinism and quantization",
        identical && quantize_ok,
        format!("trials.csv identical: {identical}; quantize examples exact: {quantize_ok}"),
    )
}

fn main() {
    let start = Instant::now();
    let icfg = itene_config(0.9);
    println!(
        "classifiers: {} lr {} widths {:?} (transfer entropy), {:?} (intrinsic); channel: {} lr {}",
        te_mine().optimizer.name(),
        te_mine().learning_rate,
        te_mine().hidden_widths,
        icfg.mine.hidden_widths,
        icfg.phi_optimizer.name(),
        icfg.phi_learning_rate
    );

    let mut results = vec![gradients(), determinism(), gaussian_oracle()];

    let sweep_start = Instant::now();
    let sweep_cfg = with_lambda_sweep(
        experiment(
            "threshold",
            LEN,
            true,
            IteneConfig {
                mine: te_mine(),
                ..IteneConfig::default()
            },
        ),
        &[-3.0, -1.0, 0.0, 1.0, 3.0],
    );
    let sweep = run_logged("lambda sweep", &sweep_cfg);
    results.push(threshold_sweep(&sweep, sweep_start.elapsed().as_secs_f64()));
    results.push(consistency(&sweep));

    let ite_cfg = with_lambda_sweep(experiment("threshold", LEN, false, icfg), &[-3.0, 0.0, 3.0]);
    let ite = run_logged("intrinsic sweep", &ite_cfg);
    results.push(ite_endpoints(&ite));

    results.push(xor_separation());
    results.push(null_control());
    results.push(clipping_variance());
    results.push(identity_reduction());

    let failed: Vec<&Outcome> = results.iter().filter(|o| !o.pass).collect();
    println!(
        "{} of {} checks passed in {:.0}s",
        results.len() - failed.len(),
        results.len(),
        start.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        for o in failed {
            println!("failed: {} ({})", o.name, o.detail);
        }
        std::process::exit(1);
    }
}
