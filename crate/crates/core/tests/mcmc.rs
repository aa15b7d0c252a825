mod common;

use nalgebra::Matrix3;
use proptest::prelude::*;
use rand::Rng;

use radloc::likelihood::{FeasibleBox, Vec3};
use radloc::mcmc::{
    covariance, dram_run, dram_sample, dream_run, dream_sample, mean, AdaptiveCovariance, ChainSet, DramConfig,
    DreamConfig,
};
use radloc::rng::seeded;
use radloc::transport::SourceParams;

fn gaussian(x: &Vec3) -> f64 {
    let z = [(x[0] - 5.0) / 1.0, (x[1] - 5.0) / 0.5, (x[2] - 5.0) / 2.0];
    -0.5 * (z[0] * z[0] + z[1] * z[1] + z[2] * z[2])
}

fn wide_box() -> FeasibleBox {
    FeasibleBox::new([-20.0; 3], [30.0; 3]).unwrap()
}

fn check_bookkeeping(chains: &ChainSet, prior: &FeasibleBox) {
    for c in 0..chains.n_chains() {
        assert!(chains.samples[c].iter().all(|x| prior.contains(x)));
        assert_eq!(chains.acceptance[c].total() as usize, chains.samples[c].len());
        let r = chains.acceptance[c].rate();
        assert!((0.0..=1.0).contains(&r));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn factor_reproduces_scaled_covariance(
        pts in prop::collection::vec(prop::array::uniform3(-50.0..50.0f64), 5..200),
        scale in 0.1..5.0f64,
    ) {
        let mut acc = AdaptiveCovariance::default();
        for p in &pts {
            acc.push(p);
        }
        let direct = covariance(&pts);
        let reg = 1e-10;
        let l = acc.factor(scale, reg).unwrap();
        let want = Matrix3::from_fn(|i, j| scale * direct[i][j] + if i == j { reg } else { 0.0 });
        prop_assert!((l * l.transpose() - want).norm() < 1e-8 * want.norm().max(1.0));
    }
}

#[test]
fn dram_on_reference_keeps_its_books() {
    let ctx = common::reference_ctx();
    let config = DramConfig {
        n_iterations: 2000,
        burn_in: 500,
        ..DramConfig::default()
    };
    let chains = dram_run(&ctx, &config, &SourceParams::new(150.0, 90.0, 3.0e9), &mut seeded(2)).unwrap();
    check_bookkeeping(&chains, &ctx.scenario().feasible_box);
    check_log_posteriors(&ctx, &chains, 5);
    assert_eq!(chains.n_iterations(), 2500);
    assert_eq!(chains.pooled().len(), 2000);
}

#[test]
fn dream_on_reference_keeps_its_books() {
    let ctx = common::reference_ctx();
    let config = DreamConfig {
        n_iterations: 600,
        ..DreamConfig::default()
    };
    let chains = dream_run(&ctx, &config, &mut seeded(3)).unwrap();
    check_bookkeeping(&chains, &ctx.scenario().feasible_box);
    check_log_posteriors(&ctx, &chains, 6);
    assert_eq!(chains.n_chains(), 10);
    assert_eq!(chains.r_trace.len(), 600);
    assert!(chains.outliers.iter().all(|o| o.iteration < config.burn_in()));
}

/// Re-evaluates the likelihood at 100 stored samples.
fn check_log_posteriors(ctx: &radloc::ObjectiveContext, chains: &ChainSet, seed: u64) {
    let mut rng = seeded(seed);
    for _ in 0..100 {
        let c = rng.random_range(0..chains.n_chains());
        let i = rng.random_range(0..chains.n_iterations());
        let x = chains.samples[c][i];
        let again = ctx.log_likelihood(&SourceParams::from_array(x));
        let stored = chains.log_posteriors[c][i];
        assert!((again - stored).abs() <= 1e-10 * stored.abs(), "{stored} vs {again}");
    }
}

#[test]
fn delayed_rejection_rescues_oversized_proposals() {
    // Start with a proposal far wider than the target so stage one rarely
    // lands; the shrunken second stage must then accept some moves.
    let narrow = |x: &Vec3| -0.5 * ((x[0] - 1.0) / 0.05).powi(2) - 0.5 * (x[1] * x[1] + x[2] * x[2]);
    let config = DramConfig {
        n_iterations: 3000,
        burn_in: 1000,
        adapt_interval: 100_000,
        initial_covariance: Some([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]),
        ..DramConfig::default()
    };
    let chains = dram_sample(&narrow, &wide_box(), &config, &[1.0, 0.0, 0.0], &mut seeded(8)).unwrap();
    let acc = chains.acceptance_total();
    assert!(acc.stage2_accepted > 0);
    assert!(acc.stage2_accepted as f64 > 0.2 * acc.stage1_accepted as f64);
    let xs: Vec<f64> = chains.pooled().iter().map(|x| x[0]).collect();
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    assert!((m - 1.0).abs() < 0.02, "mean {m}");
}

#[test]
fn dream_recovers_a_gaussian() {
    let config = DreamConfig {
        n_iterations: 4000,
        ..DreamConfig::default()
    };
    let chains = dream_sample(&gaussian, &wide_box(), &config, &mut seeded(12)).unwrap();
    check_bookkeeping(&chains, &wide_box());
    let r = chains.r_trace.last().unwrap();
    assert!(r.iter().all(|v| *v < 1.1), "R {r:?}");
    let tail = chains.tail(0.25);
    let m = mean(&tail);
    let c = covariance(&tail);
    let sd = [1.0, 0.5, 2.0];
    for k in 0..3 {
        assert!((m[k] - 5.0).abs() < 0.5 * sd[k], "mean {m:?}");
        assert!((c[k][k].sqrt() / sd[k] - 1.0).abs() < 0.2, "cov {c:?}");
    }
}

#[test]
fn samplers_are_reproducible() {
    let config = DramConfig {
        n_iterations: 500,
        burn_in: 100,
        ..DramConfig::default()
    };
    let a = dram_sample(&gaussian, &wide_box(), &config, &[4.0; 3], &mut seeded(1)).unwrap();
    let b = dram_sample(&gaussian, &wide_box(), &config, &[4.0; 3], &mut seeded(1)).unwrap();
    assert_eq!(a, b);
    let config = DreamConfig {
        n_iterations: 300,
        ..DreamConfig::default()
    };
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| dream_sample(&gaussian, &wide_box(), &config, &mut seeded(5)).unwrap())
    };
    let (one, three) = (run(1), run(3));
    assert_eq!(one.samples, three.samples);
    assert_eq!(one.log_posteriors, three.log_posteriors);
    assert_eq!(one.acceptance, three.acceptance);
    let bits = |c: &ChainSet| -> Vec<u64> { c.r_trace.iter().flatten().map(|v| v.to_bits()).collect() };
    assert_eq!(bits(&one), bits(&three));
}
