//! Delayed-rejection adaptive Metropolis.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{log_posterior, AcceptanceStats, ChainSet, LogDensity, ScaledPosterior};
use crate::error::{Error, Result};
use crate::likelihood::{FeasibleBox, ObjectiveContext, Vec3};
use crate::rng::SimRng;
use crate::transport::SourceParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DramConfig {
    /// Retained iterations.
    pub n_iterations: usize,
    pub burn_in: usize,
    pub adapt_interval: usize,
    pub scale: f64,
    pub dr_scale: f64,
    /// Initial proposal covariance; `None` uses `diag((0.05 * start)^2)`.
    #[serde(default)]
    pub initial_covariance: Option<[[f64; 3]; 3]>,
    pub regularization: f64,
}

impl Default for DramConfig {
    fn default() -> Self {
        Self {
            n_iterations: 10_000,
            burn_in: 3000,
            adapt_interval: 100,
            scale: 2.38 * 2.38 / 3.0,
            dr_scale: 0.2,
            initial_covariance: None,
            regularization: 1e-10,
        }
    }
}

impl DramConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_iterations == 0 {
            return Err(Error::Config("n_iterations must be positive".into()));
        }
        if self.adapt_interval < 2 {
            return Err(Error::Config("adapt_interval must be at least 2".into()));
        }
        if !(self.dr_scale > 0.0 && self.dr_scale < 1.0) {
            return Err(Error::Config(format!("dr_scale must lie in (0, 1), got {}", self.dr_scale)));
        }
        if !(self.scale > 0.0) || !(self.regularization >= 0.0) {
            return Err(Error::Config("scale must be positive and regularization >= 0".into()));
        }
        if let Some(v) = self.initial_covariance {
            if Matrix3::from(v).transpose() != Matrix3::from(v) || Matrix3::from(v).cholesky().is_none() {
                return Err(Error::Config("initial covariance must be symmetric positive definite".into()));
            }
        }
        Ok(())
    }
}

/// Running mean and covariance of the chain history.
#[derive(Debug, Clone, Default)]
pub struct AdaptiveCovariance {
    n: usize,
    mean: Vector3<f64>,
    comoment: Matrix3<f64>,
}

impl AdaptiveCovariance {
    pub fn push(&mut self, x: &Vec3) {
        let x = Vector3::from(*x);
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.comoment += d * (x - self.mean).transpose();
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Sample covariance with divisor `n - 1`.
    pub fn covariance(&self) -> Matrix3<f64> {
        if self.n < 2 {
            return Matrix3::zeros();
        }
        let c = self.comoment / (self.n - 1) as f64;
        (c + c.transpose()) * 0.5
    }

    /// Lower Cholesky factor of `scale * cov + reg * I`.
    pub fn factor(&self, scale: f64, reg: f64) -> Option<Matrix3<f64>> {
        (self.covariance() * scale + Matrix3::identity() * reg)
            .cholesky()
            .map(|c| c.l())
    }
}

fn normal3(rng: &mut SimRng) -> Vector3<f64> {
    Vector3::from_fn(|_, _| rng.sample(StandardNormal))
}

fn step(x: &Vec3, l: &Matrix3<f64>, scale: f64, z: &Vector3<f64>) -> Vec3 {
    let d = l * z * scale;
    [x[0] + d[0], x[1] + d[1], x[2] + d[2]]
}

/// `log q(a -> b)` up to a constant for the Gaussian with covariance `l l^T`.
fn log_jump(a: &Vec3, b: &Vec3, l: &Matrix3<f64>) -> f64 {
    let d = Vector3::new(b[0] - a[0], b[1] - a[1], b[2] - a[2]);
    match l.solve_lower_triangular(&d) {
        Some(w) => -0.5 * w.norm_squared(),
        None => f64::NEG_INFINITY,
    }
}

/// First-stage Metropolis probability from `lp_from` to `lp_to`.
fn alpha1(lp_from: f64, lp_to: f64) -> f64 {
    if lp_to == f64::NEG_INFINITY {
        0.0
    } else if lp_from == f64::NEG_INFINITY {
        1.0
    } else {
        (lp_to - lp_from).exp().min(1.0)
    }
}

/// Second-stage acceptance probability for `x -> y2` after `x -> y1` was rejected.
pub fn dr_acceptance(x: (&Vec3, f64), y1: (&Vec3, f64), y2: (&Vec3, f64), l: &Matrix3<f64>) -> f64 {
    let (x, lpx) = x;
    let (y1, lp1) = y1;
    let (y2, lp2) = y2;
    if lp2 == f64::NEG_INFINITY {
        return 0.0;
    }
    let num = 1.0 - alpha1(lp2, lp1);
    let den = 1.0 - alpha1(lpx, lp1);
    if num <= 0.0 {
        return 0.0;
    }
    if den <= 0.0 {
        return 1.0;
    }
    let log_ratio = lp2 - lpx + log_jump(y2, y1, l) - log_jump(x, y1, l) + num.ln() - den.ln();
    log_ratio.exp().min(1.0)
}

/// Delayed-rejection stage. Returns the new state, its log density and
/// whether it moved.
#[allow(clippy::too_many_arguments)]
pub fn dram_dr_step<D: LogDensity + ?Sized>(
    target: &D,
    prior: &FeasibleBox,
    current: &Vec3,
    current_lp: f64,
    rejected: &Vec3,
    rejected_lp: f64,
    factor: &Matrix3<f64>,
    dr_scale: f64,
    rng: &mut SimRng,
) -> (Vec3, f64, bool) {
    let y2 = step(current, factor, dr_scale, &normal3(rng));
    let lp2 = log_posterior(target, prior, &y2);
    let a = dr_acceptance((current, current_lp), (rejected, rejected_lp), (&y2, lp2), factor);
    let u: f64 = rng.random();
    if u < a {
        (y2, lp2, true)
    } else {
        (*current, current_lp, false)
    }
}

fn initial_factor(config: &DramConfig, start: &Vec3, prior: &FeasibleBox) -> Result<Matrix3<f64>> {
    let v = match config.initial_covariance {
        Some(v) => Matrix3::from(v),
        None => {
            let w = prior.width();
            Matrix3::from_diagonal(&Vector3::from_fn(|i, _| {
                let s = 0.05 * start[i].abs();
                if s > 0.0 {
                    s * s
                } else {
                    (0.05 * w[i]).powi(2)
                }
            }))
        }
    };
    v.cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::Config("initial covariance is not positive definite".into()))
}

/// Single adaptive chain from `start` under a uniform prior on `prior`.
pub fn dram_sample<D: LogDensity + ?Sized>(
    target: &D,
    prior: &FeasibleBox,
    config: &DramConfig,
    start: &Vec3,
    rng: &mut SimRng,
) -> Result<ChainSet> {
    config.validate()?;
    if !prior.contains(start) {
        return Err(Error::InvalidInput(format!("start {start:?} outside the prior support")));
    }
    let mut x = *start;
    let mut lp = log_posterior(target, prior, &x);
    if lp == f64::NEG_INFINITY {
        return Err(Error::Degenerate(format!("zero posterior density at start {start:?}")));
    }
    let mut l = initial_factor(config, start, prior)?;
    let total = config.burn_in + config.n_iterations;
    let mut history = AdaptiveCovariance::default();
    let mut stats = AcceptanceStats::default();
    let mut samples = Vec::with_capacity(total);
    let mut lps = Vec::with_capacity(total);

    for k in 0..total {
        let y1 = step(&x, &l, 1.0, &normal3(rng));
        let lp1 = log_posterior(target, prior, &y1);
        let u: f64 = rng.random();
        if u < alpha1(lp, lp1) {
            x = y1;
            lp = lp1;
            stats.stage1_accepted += 1;
        } else {
            let (nx, nlp, moved) = dram_dr_step(target, prior, &x, lp, &y1, lp1, &l, config.dr_scale, rng);
            if moved {
                x = nx;
                lp = nlp;
                stats.stage2_accepted += 1;
            } else {
                stats.rejected += 1;
            }
        }
        samples.push(x);
        lps.push(lp);
        history.push(&x);
        if (k + 1) % config.adapt_interval == 0 {
            match history.factor(config.scale, config.regularization) {
                Some(f) => l = f,
                None => log::warn!("proposal covariance not positive definite at iteration {}; keeping previous factor", k + 1),
            }
        }
    }

    Ok(ChainSet {
        samples: vec![samples],
        log_posteriors: vec![lps],
        burn_in: config.burn_in,
        acceptance: vec![stats],
        outliers: Vec::new(),
        r_trace: Vec::new(),
    })
}

/// DRAM on the scenario posterior. Sampling runs in scaled coordinates; the
/// returned chain is in physical units.
pub fn dram_run(ctx: &ObjectiveContext, config: &DramConfig, start: &SourceParams, rng: &mut SimRng) -> Result<ChainSet> {
    let prior = ctx.scaled_box();
    let target = ScaledPosterior::new(ctx);
    let mut chains = dram_sample(&target, &prior, config, &ctx.to_scaled(start), rng)?;
    chains.rescale([1.0, 1.0, ctx.scenario().intensity_scale]);
    Ok(chains)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mcmc::covariance;
    use crate::rng::seeded;

    #[test]
    fn running_covariance_matches_direct() {
        let mut r = seeded(5);
        let xs: Vec<Vec3> = (0..500).map(|_| [r.random::<f64>() * 3.0, r.random(), r.random::<f64>() * 0.1]).collect();
        let mut h = AdaptiveCovariance::default();
        xs.iter().for_each(|x| h.push(x));
        let direct = covariance(&xs);
        let running = h.covariance();
        for i in 0..3 {
            for j in 0..3 {
                assert!((direct[i][j] - running[(i, j)]).abs() < 1e-12);
            }
        }
        let l = h.factor(2.0, 1e-10).unwrap();
        let target = running * 2.0 + Matrix3::identity() * 1e-10;
        assert!((l * l.transpose() - target).norm() < 1e-8);
    }

    #[test]
    fn second_stage_zero_outside_support() {
        let l = Matrix3::identity();
        let a = dr_acceptance((&[0.0; 3], -1.0), (&[1.0; 3], -3.0), (&[2.0; 3], f64::NEG_INFINITY), &l);
        assert_eq!(a, 0.0);
    }

    #[test]
    fn second_stage_at_rejected_point_never_moves() {
        let l = Matrix3::identity();
        let y = [0.5, 0.0, 0.0];
        let a = dr_acceptance((&[0.0; 3], -1.0), (&y, -2.0), (&y, -2.0), &l);
        assert_eq!(a, 0.0);
    }

    #[test]
    fn second_stage_hand_value() {
        let l = Matrix3::identity();
        let x = [0.0; 3];
        let y1 = [2.0, 0.0, 0.0];
        let y2 = [0.5, 0.0, 0.0];
        let (lpx, lp1, lp2): (f64, f64, f64) = (-1.0, -3.0, -1.2);
        let num = lp2.exp() * (-0.5 * 1.5f64 * 1.5).exp() * (1.0 - (lp1 - lp2).exp());
        let den = lpx.exp() * (-0.5 * 4.0f64).exp() * (1.0 - (lp1 - lpx).exp());
        let a = dr_acceptance((&x, lpx), (&y1, lp1), (&y2, lp2), &l);
        assert!((a - (num / den).min(1.0)).abs() < 1e-14);
    }

    #[test]
    fn uphill_first_stage_always_accepted() {
        assert_eq!(alpha1(-5.0, -4.0), 1.0);
        assert_eq!(alpha1(-5.0, -5.0), 1.0);
        assert_eq!(alpha1(-5.0, f64::NEG_INFINITY), 0.0);
    }

    #[test]
    fn counts_add_up() {
        let target = |x: &Vec3| -0.5 * (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]);
        let prior = FeasibleBox::new([-10.0; 3], [10.0; 3]).unwrap();
        let cfg = DramConfig {
            n_iterations: 600,
            burn_in: 100,
            ..DramConfig::default()
        };
        let c = dram_sample(&target, &prior, &cfg, &[1.0, 1.0, 1.0], &mut seeded(1)).unwrap();
        assert_eq!(c.acceptance_total().total(), 700);
        assert_eq!(c.n_iterations(), 700);
        assert!(c.samples[0].iter().all(|x| prior.contains(x)));
    }

    #[test]
    fn rejects_bad_start() {
        let target = |_: &Vec3| 0.0;
        let prior = FeasibleBox::new([0.0; 3], [1.0; 3]).unwrap();
        assert!(dram_sample(&target, &prior, &DramConfig::default(), &[2.0; 3], &mut seeded(0)).is_err());
    }
}
