//! Differential-evolution adaptive Metropolis with randomized subspace
//! sampling, crossover adaptation, outlier repair and delayed rejection.
//!
//! All random draws happen on the calling thread; only the likelihood
//! evaluations of a generation run in parallel, against a snapshot of the
//! previous generation.

use nalgebra::{Matrix3, Vector3};
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::diagnostics::gelman_rubin;
use super::dram::dr_acceptance;
use super::{covariance, log_posterior, AcceptanceStats, ChainSet, LogDensity, OutlierReplacement, ScaledPosterior};
use crate::error::{Error, Result};
use crate::likelihood::{FeasibleBox, ObjectiveContext, Vec3};
use crate::rng::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JumpRate {
    /// Same rate for every proposal.
    Fixed(f64),
    /// `2.38 / sqrt(2 * pairs * d)` with `d` the number of updated coordinates.
    Dimensional,
}

impl JumpRate {
    fn value(&self, pairs: usize, updated: usize) -> f64 {
        match *self {
            JumpRate::Fixed(g) => g,
            JumpRate::Dimensional => 2.38 / ((2 * pairs * updated) as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DreamConfig {
    pub n_chains: usize,
    pub n_iterations: usize,
    pub n_pairs: usize,
    pub jump: JumpRate,
    /// Half-width of the uniform multiplicative perturbation.
    pub e_bound: f64,
    /// Standard deviation of the additive Gaussian noise.
    pub noise_sd: f64,
    pub n_cr: usize,
    pub burn_in_fraction: f64,
    pub outlier_interval: usize,
    pub dr_scale: f64,
    pub regularization: f64,
}

impl Default for DreamConfig {
    fn default() -> Self {
        Self {
            n_chains: 10,
            n_iterations: 10_000,
            n_pairs: 3,
            jump: JumpRate::Fixed(2.38 / 6f64.sqrt()),
            e_bound: 0.05,
            noise_sd: 1e-6,
            n_cr: 3,
            burn_in_fraction: 0.5,
            outlier_interval: 10,
            dr_scale: 0.2,
            regularization: 1e-10,
        }
    }
}

impl DreamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_pairs == 0 || self.n_chains < 2 * self.n_pairs + 1 {
            return Err(Error::Config(format!(
                "{} chains cannot supply {} distinct donor pairs",
                self.n_chains, self.n_pairs
            )));
        }
        if self.n_iterations == 0 || self.n_cr == 0 || self.outlier_interval == 0 {
            return Err(Error::Config("iterations, crossover levels and outlier interval must be positive".into()));
        }
        if let JumpRate::Fixed(g) = self.jump {
            if !(g >= 0.0 && g.is_finite()) {
                return Err(Error::Config(format!("jump rate must be finite and >= 0, got {g}")));
            }
        }
        if !(self.e_bound >= 0.0 && self.noise_sd >= 0.0) {
            return Err(Error::Config("perturbation bounds must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.burn_in_fraction) {
            return Err(Error::Config(format!("burn_in_fraction must lie in [0, 1), got {}", self.burn_in_fraction)));
        }
        if !(self.dr_scale > 0.0 && self.dr_scale < 1.0) {
            return Err(Error::Config(format!("dr_scale must lie in (0, 1), got {}", self.dr_scale)));
        }
        Ok(())
    }

    pub fn burn_in(&self) -> usize {
        (self.n_iterations as f64 * self.burn_in_fraction).round() as usize
    }
}

/// `2 * pairs` distinct chain indices, none equal to `own`.
pub(crate) fn pick_donors(own: usize, n_chains: usize, pairs: usize, rng: &mut SimRng) -> Vec<usize> {
    sample_indices(rng, n_chains - 1, 2 * pairs)
        .into_iter()
        .map(|j| if j >= own { j + 1 } else { j })
        .collect()
}

fn quartiles(values: &[f64]) -> (f64, f64) {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let h = p * (v.len() - 1) as f64;
        let lo = h.floor() as usize;
        let hi = h.ceil() as usize;
        v[lo] + (h - lo as f64) * (v[hi] - v[lo])
    };
    (q(0.25), q(0.75))
}

/// Chains whose mean log density over the last half of their history sits
/// below `Q1 - 2 IQR`.
pub(crate) fn outlier_chains(histories: &[Vec<f64>]) -> Vec<usize> {
    let omega: Vec<f64> = histories
        .iter()
        .map(|h| {
            let tail = &h[h.len() / 2..];
            tail.iter().sum::<f64>() / tail.len().max(1) as f64
        })
        .collect();
    let (q1, q3) = quartiles(&omega);
    let cut = q1 - 2.0 * (q3 - q1);
    (0..omega.len()).filter(|&i| omega[i] < cut || omega[i].is_nan()).collect()
}

struct Proposal {
    point: Vec3,
    cr: usize,
}

/// Runs DREAM from the given initial states.
pub fn dream_sample_from<D: LogDensity + ?Sized>(
    target: &D,
    prior: &FeasibleBox,
    config: &DreamConfig,
    initial: Vec<Vec3>,
    rng: &mut SimRng,
) -> Result<ChainSet> {
    config.validate()?;
    let p = config.n_chains;
    if initial.len() != p {
        return Err(Error::InvalidInput(format!("{} initial states for {p} chains", initial.len())));
    }
    if let Some(x) = initial.iter().find(|x| !prior.contains(x)) {
        return Err(Error::InvalidInput(format!("initial state {x:?} outside the prior support")));
    }
    let burn_in = config.burn_in();
    let cr_values: Vec<f64> = (1..=config.n_cr).map(|m| m as f64 / config.n_cr as f64).collect();
    let mut cr_prob = vec![1.0 / config.n_cr as f64; config.n_cr];
    let mut cr_jump = vec![0.0; config.n_cr];
    let mut cr_count = vec![0usize; config.n_cr];

    let mut state = initial;
    let mut lps: Vec<f64> = state.par_iter().map(|x| log_posterior(target, prior, x)).collect();
    let mut samples: Vec<Vec<Vec3>> = vec![Vec::with_capacity(config.n_iterations); p];
    let mut lp_hist: Vec<Vec<f64>> = vec![Vec::with_capacity(config.n_iterations); p];
    let mut stats = vec![AcceptanceStats::default(); p];
    let mut outliers = Vec::new();
    let mut r_trace = Vec::with_capacity(config.n_iterations);

    for t in 0..config.n_iterations {
        let snapshot = state.clone();
        let cr_pick = WeightedIndex::new(&cr_prob).map_err(|e| Error::Degenerate(format!("crossover weights: {e}")))?;

        let proposals: Vec<Proposal> = (0..p)
            .map(|i| {
                let cr = cr_pick.sample(rng);
                let mut mask = [false; 3];
                for m in mask.iter_mut() {
                    *m = rng.random::<f64>() <= cr_values[cr];
                }
                if !mask.iter().any(|&m| m) {
                    mask[rng.random_range(0..3)] = true;
                }
                let updated = mask.iter().filter(|&&m| m).count();
                let gamma = config.jump.value(config.n_pairs, updated);
                let donors = pick_donors(i, p, config.n_pairs, rng);
                let mut point = snapshot[i];
                for k in 0..3 {
                    let e = config.e_bound * (2.0 * rng.random::<f64>() - 1.0);
                    let eps = config.noise_sd * rng.sample::<f64, _>(StandardNormal);
                    if !mask[k] {
                        continue;
                    }
                    let diff: f64 = (0..config.n_pairs)
                        .map(|q| snapshot[donors[q]][k] - snapshot[donors[config.n_pairs + q]][k])
                        .sum();
                    point[k] += (1.0 + e) * gamma * diff + eps;
                }
                Proposal { point, cr }
            })
            .collect();
        let uniforms: Vec<f64> = (0..p).map(|_| rng.random()).collect();

        let prop_lp: Vec<f64> = proposals.par_iter().map(|q| log_posterior(target, prior, &q.point)).collect();

        let mut rejected = Vec::new();
        for i in 0..p {
            let a = if prop_lp[i] == f64::NEG_INFINITY {
                0.0
            } else {
                (prop_lp[i] - lps[i]).exp().min(1.0)
            };
            if uniforms[i] < a {
                state[i] = proposals[i].point;
                lps[i] = prop_lp[i];
                stats[i].stage1_accepted += 1;
            } else {
                rejected.push(i);
            }
        }

        if !rejected.is_empty() {
            let gamma = config.jump.value(config.n_pairs, 3);
            let sigma = Matrix3::from(covariance(&snapshot));
            let cov = sigma * (gamma * gamma * 2.0 * config.n_pairs as f64) + Matrix3::identity() * config.regularization;
            match cov.cholesky().map(|c| c.l()) {
                Some(l) => {
                    let second: Vec<Vec3> = rejected
                        .iter()
                        .map(|&i| {
                            let z = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
                            let d = l * z * config.dr_scale;
                            [snapshot[i][0] + d[0], snapshot[i][1] + d[1], snapshot[i][2] + d[2]]
                        })
                        .collect();
                    let u2: Vec<f64> = rejected.iter().map(|_| rng.random()).collect();
                    let lp2: Vec<f64> = second.par_iter().map(|x| log_posterior(target, prior, x)).collect();
                    for (j, &i) in rejected.iter().enumerate() {
                        let a = dr_acceptance(
                            (&snapshot[i], lps[i]),
                            (&proposals[i].point, prop_lp[i]),
                            (&second[j], lp2[j]),
                            &l,
                        );
                        if u2[j] < a {
                            state[i] = second[j];
                            lps[i] = lp2[j];
                            stats[i].stage2_accepted += 1;
                        } else {
                            stats[i].rejected += 1;
                        }
                    }
                }
                None => {
                    log::warn!("population covariance not positive definite at generation {t}; skipping delayed rejection");
                    for &i in &rejected {
                        stats[i].rejected += 1;
                    }
                }
            }
        }

        if t < burn_in {
            let sd: Vec3 = {
                let c = covariance(&snapshot);
                std::array::from_fn(|k| c[k][k].sqrt())
            };
            for i in 0..p {
                let jump: f64 = (0..3)
                    .filter(|&k| sd[k] > 0.0)
                    .map(|k| ((state[i][k] - snapshot[i][k]) / sd[k]).powi(2))
                    .sum();
                cr_jump[proposals[i].cr] += jump;
                cr_count[proposals[i].cr] += 1;
            }
            if (t + 1) % 10 == 0 && cr_count.iter().all(|&c| c > 0) {
                let w: Vec<f64> = cr_jump.iter().zip(&cr_count).map(|(d, &c)| d / c as f64).collect();
                let s: f64 = w.iter().sum();
                if s > 0.0 {
                    cr_prob = w.iter().map(|x| x / s).collect();
                }
            }
        }

        for i in 0..p {
            samples[i].push(state[i]);
            lp_hist[i].push(lps[i]);
        }

        if t < burn_in && (t + 1) % config.outlier_interval == 0 {
            let bad = outlier_chains(&lp_hist);
            if !bad.is_empty() {
                let best = (0..p).max_by(|&a, &b| lps[a].total_cmp(&lps[b])).unwrap_or(0);
                for i in bad.into_iter().filter(|&i| i != best) {
                    state[i] = state[best];
                    lps[i] = lps[best];
                    outliers.push(OutlierReplacement {
                        iteration: t,
                        chain: i,
                        replaced_by: best,
                    });
                }
            }
        }

        r_trace.push(r_statistic(&samples));
    }

    Ok(ChainSet {
        samples,
        log_posteriors: lp_hist,
        burn_in,
        acceptance: stats,
        outliers,
        r_trace,
    })
}

/// Potential scale reduction per coordinate over the last half of the chains.
fn r_statistic(samples: &[Vec<Vec3>]) -> Vec3 {
    if samples[0].len() < 4 {
        return [f64::NAN; 3];
    }
    std::array::from_fn(|k| {
        let cs: Vec<Vec<f64>> = samples
            .iter()
            .map(|c| c[c.len() - c.len() / 2..].iter().map(|x| x[k]).collect())
            .collect();
        gelman_rubin(&cs, 1.0).map_or(f64::NAN, |g| g.r)
    })
}

/// DREAM with starting states drawn from the uniform prior.
pub fn dream_sample<D: LogDensity + ?Sized>(
    target: &D,
    prior: &FeasibleBox,
    config: &DreamConfig,
    rng: &mut SimRng,
) -> Result<ChainSet> {
    config.validate()?;
    let initial = (0..config.n_chains).map(|_| prior.sample(rng)).collect();
    dream_sample_from(target, prior, config, initial, rng)
}

/// DREAM on the scenario posterior; returned chains are in physical units.
pub fn dream_run(ctx: &ObjectiveContext, config: &DreamConfig, rng: &mut SimRng) -> Result<ChainSet> {
    let prior = ctx.scaled_box();
    let target = ScaledPosterior::new(ctx);
    let mut chains = dream_sample(&target, &prior, config, rng)?;
    chains.rescale([1.0, 1.0, ctx.scenario().intensity_scale]);
    Ok(chains)
}
