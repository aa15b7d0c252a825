//! Multi-start adaptive simulated annealing.
//!
//! `P` independent trajectories advance in lock-step. Each proposes a
//! uniform move scaled by per-coordinate temperatures, repairs infeasible
//! proposals by pulling them toward the current point, and accepts uphill
//! moves with a logistic probability. After every `r_p` accepted moves the
//! annealing counters are reset from finite-difference sensitivities so that
//! sensitive coordinates are searched with higher temperature.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{argmin, relative_change, OptResult, StopReason, StoppingCriteria, TraceRow};
use crate::error::{Error, Result};
use crate::likelihood::{evaluate_batch, FeasibleBox, Objective, Vec3};
use crate::rng::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SaConfig {
    pub initial_temperatures: Vec3,
    /// Accepted moves between reannealing steps.
    pub reanneal_interval: usize,
    pub cooling_base: f64,
    pub n_starts: usize,
    /// Step for the forward-difference sensitivities.
    pub fd_delta: f64,
}

impl Default for SaConfig {
    fn default() -> Self {
        Self {
            initial_temperatures: [240.0, 180.0, 99.0],
            reanneal_interval: 50,
            cooling_base: 0.95,
            n_starts: 16,
            fd_delta: 1e-3,
        }
    }
}

impl SaConfig {
    /// 70 trajectories, reannealing every 30 acceptances, used with
    /// target-value stopping.
    pub fn many_starts() -> Self {
        Self {
            initial_temperatures: [240.0, 180.0, 100.0],
            reanneal_interval: 30,
            n_starts: 70,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.initial_temperatures.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::Config("SA temperatures must be positive".into()));
        }
        if self.reanneal_interval == 0 {
            return Err(Error::Config("reanneal_interval must be >= 1".into()));
        }
        if !(self.cooling_base > 0.0 && self.cooling_base < 1.0) {
            return Err(Error::Config("cooling_base must lie in (0, 1)".into()));
        }
        if self.n_starts == 0 {
            return Err(Error::Config("n_starts must be >= 1".into()));
        }
        if !(self.fd_delta > 0.0) {
            return Err(Error::Config("fd_delta must be positive".into()));
        }
        Ok(())
    }
}

/// Candidate for `old` given the uniform draws `r` in `[-1, 1]^3` and the
/// repair weight `alpha`.
pub fn sa_propose_with(old: &Vec3, temps: &Vec3, bx: &FeasibleBox, r: &Vec3, alpha: f64) -> Vec3 {
    let trial: Vec3 = std::array::from_fn(|i| old[i] + r[i] * temps[i]);
    if bx.contains(&trial) {
        return trial;
    }
    let bar = bx.project(&trial);
    let mixed: Vec3 = std::array::from_fn(|i| alpha * bar[i] + (1.0 - alpha) * old[i]);
    bx.project(&mixed)
}

pub fn sa_propose(old: &Vec3, temps: &Vec3, bx: &FeasibleBox, rng: &mut SimRng) -> Vec3 {
    let r: Vec3 = std::array::from_fn(|_| rng.random_range(-1.0..=1.0));
    let alpha: f64 = rng.random();
    sa_propose_with(old, temps, bx, &r, alpha)
}

/// Probability of moving from `j_old` to `j_new`.
pub fn sa_accept_probability(j_new: f64, j_old: f64, temps: &Vec3) -> f64 {
    if j_new < j_old {
        return 1.0;
    }
    let dj = j_new - j_old;
    if dj.is_nan() {
        return 0.0;
    }
    if dj == 0.0 {
        return 0.5;
    }
    let t_max = temps.iter().copied().fold(0.0, f64::max);
    1.0 / (1.0 + (dj / t_max).exp())
}

/// `T_i = T0_i * base^k_i`.
pub fn sa_temperatures(t0: &Vec3, k: &Vec3, base: f64) -> Vec3 {
    std::array::from_fn(|i| t0[i] * base.powf(k[i]))
}

/// Annealing counters after reannealing with sensitivities `s`.
pub fn sa_reanneal(t0: &Vec3, temps: &Vec3, s: &Vec3) -> Vec3 {
    let s: Vec3 = std::array::from_fn(|i| {
        if s[i].is_finite() {
            s[i].max(f64::EPSILON)
        } else {
            f64::MAX.sqrt()
        }
    });
    let s_max = s.iter().copied().fold(0.0, f64::max);
    std::array::from_fn(|i| {
        let t = temps[i].max(f64::MIN_POSITIVE);
        (t0[i] / t * s_max / s[i]).ln()
    })
}

/// Forward-difference probe points, stepping backward when the forward
/// point leaves the box. Returns the points and the signed steps.
fn fd_probes(x: &Vec3, delta: f64, bx: &FeasibleBox) -> ([Vec3; 3], Vec3) {
    let mut pts = [*x; 3];
    let mut steps = [delta; 3];
    for i in 0..3 {
        if x[i] + delta > bx.upper[i] {
            steps[i] = -delta;
        }
        pts[i][i] += steps[i];
    }
    (pts, steps)
}

#[derive(Debug, Clone)]
struct Trajectory {
    x: Vec3,
    value: f64,
    k: Vec3,
    temps: Vec3,
    accepted: usize,
    snapshots: Vec<Vec3>,
}

fn stalled(snapshots: &[Vec3], window: usize, tol: f64) -> bool {
    if snapshots.len() <= window {
        return false;
    }
    let now = snapshots[snapshots.len() - 1];
    let then = snapshots[snapshots.len() - 1 - window];
    (0..3).all(|i| relative_change(now[i], then[i]) < tol)
}

pub fn sa_run<O: Objective + ?Sized>(
    obj: &O,
    bx: &FeasibleBox,
    config: &SaConfig,
    stopping: &StoppingCriteria,
    rng: &mut SimRng,
) -> Result<OptResult> {
    config.validate()?;
    stopping.validate()?;
    let p = config.n_starts;
    let t0 = config.initial_temperatures;

    let starts: Vec<Vec3> = (0..p).map(|_| bx.sample(rng)).collect();
    let values = evaluate_batch(obj, &starts);
    let mut evals = p as u64;
    let mut trajs: Vec<Trajectory> = starts
        .iter()
        .zip(&values)
        .map(|(x, v)| Trajectory {
            x: *x,
            value: *v,
            k: [1.0; 3],
            temps: t0,
            accepted: 0,
            snapshots: Vec::new(),
        })
        .collect();

    let i0 = argmin(&values);
    let mut best = (starts[i0], values[i0]);
    let mut trace = vec![TraceRow::from_population(0, evals, best.1, &starts, &values)];

    let mut iteration = 0;
    let mut stall = false;
    let stop_reason = loop {
        if stopping.target_met(best.1) {
            break StopReason::Target;
        }
        if evals >= stopping.max_evaluations {
            break StopReason::Budget;
        }
        if stall {
            break StopReason::Stall;
        }
        iteration += 1;

        let candidates: Vec<Vec3> = trajs
            .iter()
            .map(|t| sa_propose(&t.x, &t.temps, bx, rng))
            .collect();
        let cand_values = evaluate_batch(obj, &candidates);
        evals += p as u64;

        let mut reanneal = Vec::new();
        for (idx, t) in trajs.iter_mut().enumerate() {
            let (c, v) = (candidates[idx], cand_values[idx]);
            if v < best.1 {
                best = (c, v);
            }
            let pa = sa_accept_probability(v, t.value, &t.temps);
            let accept = pa >= 1.0 || rng.random::<f64>() < pa;
            if accept {
                t.x = c;
                t.value = v;
                t.accepted += 1;
            }
            t.temps = sa_temperatures(&t0, &t.k, config.cooling_base);
            if accept && t.accepted % config.reanneal_interval == 0 {
                reanneal.push(idx);
            } else {
                for k in t.k.iter_mut() {
                    *k += 1.0;
                }
            }
        }

        if !reanneal.is_empty() {
            let mut probes = Vec::with_capacity(3 * reanneal.len());
            let mut steps = Vec::with_capacity(reanneal.len());
            for &idx in &reanneal {
                let (pts, st) = fd_probes(&trajs[idx].x, config.fd_delta, bx);
                probes.extend_from_slice(&pts);
                steps.push(st);
            }
            let probe_values = evaluate_batch(obj, &probes);
            evals += probes.len() as u64;
            for (n, &idx) in reanneal.iter().enumerate() {
                let t = &mut trajs[idx];
                let s: Vec3 = std::array::from_fn(|i| {
                    ((probe_values[3 * n + i] - t.value) / steps[n][i]).abs()
                });
                t.k = sa_reanneal(&t0, &t.temps, &s);
                t.snapshots.push(t.x);
            }
        }

        let xs: Vec<Vec3> = trajs.iter().map(|t| t.x).collect();
        let vs: Vec<f64> = trajs.iter().map(|t| t.value).collect();
        trace.push(TraceRow::from_population(iteration, evals, best.1, &xs, &vs));

        if let Some(w) = stopping.stall_window {
            stall = trajs
                .iter()
                .any(|t| stalled(&t.snapshots, w, stopping.stall_tolerance));
        }
    };

    Ok(OptResult {
        best: best.0,
        best_objective: best.1,
        n_evaluations: evals,
        trace,
        stop_reason,
        budget_exhausted: stop_reason == StopReason::Budget,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use approx::assert_relative_eq;

    fn unit_box() -> FeasibleBox {
        FeasibleBox::new([0.0; 3], [10.0; 3]).unwrap()
    }

    #[test]
    fn zero_temperature_keeps_point() {
        let old = [1.0, 2.0, 3.0];
        let c = sa_propose(&old, &[0.0; 3], &unit_box(), &mut seeded(1));
        assert_eq!(c, old);
    }

    #[test]
    fn full_step_inside_box() {
        let old = [1.0, 2.0, 3.0];
        let c = sa_propose_with(&old, &[1.0, 1.0, 1.0], &unit_box(), &[1.0; 3], 0.3);
        assert_eq!(c, [2.0, 3.0, 4.0]);
    }

    #[test]
    fn repair_with_unit_alpha_hits_bound() {
        let old = [9.0, 2.0, 3.0];
        let c = sa_propose_with(&old, &[5.0, 1.0, 1.0], &unit_box(), &[1.0, 0.5, 0.5], 1.0);
        assert_eq!(c[0], 10.0);
        assert_eq!(c[1], 2.5);
        let c = sa_propose_with(&old, &[5.0, 1.0, 1.0], &unit_box(), &[1.0, 0.5, 0.5], 0.0);
        assert_eq!(c, old);
    }

    #[test]
    fn acceptance_examples() {
        let t = [2.0, 1.0, 0.5];
        assert_eq!(sa_accept_probability(1.0, 1.0, &t), 0.5);
        assert_relative_eq!(
            sa_accept_probability(3.0, 1.0, &t),
            1.0 / (1.0 + std::f64::consts::E),
            max_relative = 1e-15
        );
        assert_eq!(sa_accept_probability(0.0, 1.0, &t), 1.0);
        assert_eq!(sa_accept_probability(f64::INFINITY, 1.0, &t), 0.0);
    }

    #[test]
    fn annealing_schedule() {
        let t0 = [240.0, 180.0, 99.0];
        assert_relative_eq!(sa_temperatures(&t0, &[1.0; 3], 0.95)[0], 228.0, max_relative = 1e-15);
        assert_relative_eq!(
            sa_temperatures(&t0, &[14.0; 3], 0.95)[0],
            240.0 * 0.95f64.powi(14),
            max_relative = 1e-14
        );
    }

    #[test]
    fn reanneal_equal_sensitivities() {
        let t0 = [240.0, 180.0, 99.0];
        let temps = sa_temperatures(&t0, &[10.0, 20.0, 30.0], 0.95);
        let k = sa_reanneal(&t0, &temps, &[2.0; 3]);
        for i in 0..3 {
            assert_relative_eq!(k[i], (t0[i] / temps[i]).ln(), max_relative = 1e-12);
        }
        // the most sensitive coordinate gets the smallest counter
        let k = sa_reanneal(&t0, &[1.0; 3].map(|x: f64| x * 10.0), &[100.0, 1.0, 0.0]);
        assert!(k[0] < k[1] && k[1] < k[2]);
    }

    #[test]
    fn one_round_budget() {
        let f = |x: &Vec3| x[0] * x[0];
        let cfg = SaConfig {
            n_starts: 5,
            ..SaConfig::default()
        };
        let r = sa_run(&f, &unit_box(), &cfg, &StoppingCriteria::budget(5), &mut seeded(0)).unwrap();
        assert!(r.n_evaluations <= 10);
        assert!(r.budget_exhausted);
    }
}
