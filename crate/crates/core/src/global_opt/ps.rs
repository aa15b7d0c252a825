//! Particle swarm with random neighbourhoods and adaptive inertia.
//!
//! The swarm shares an inertia `W`, a stall counter `c` and a neighbourhood
//! size `N`, updated once per iteration. An iteration that lowers the swarm
//! best decrements `c` and shrinks `N` back to `Ns`; otherwise `c` grows and
//! `N` grows by `Ns`. `W` then doubles while `c < 2` and halves while
//! `c > 5`, so a stalled swarm slows down and contracts.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{argmin, OptResult, StallMonitor, StopReason, StoppingCriteria, TraceRow};
use crate::error::{Error, Result};
use crate::likelihood::{evaluate_batch, FeasibleBox, Objective, Vec3};
use crate::rng::SimRng;

pub const INERTIA_RANGE: (f64, f64) = (0.1, 1.1);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsConfig {
    pub swarm_size: usize,
    pub min_neighborhood: usize,
    pub inertia: f64,
    pub self_weight: f64,
    pub social_weight: f64,
}

impl Default for PsConfig {
    fn default() -> Self {
        Self {
            swarm_size: 16,
            min_neighborhood: 4,
            inertia: 1.1,
            self_weight: 1.49,
            social_weight: 1.49,
        }
    }
}

impl PsConfig {
    /// 70 particles with a minimum neighbourhood of 17, used with
    /// target-value stopping.
    pub fn large_swarm() -> Self {
        Self {
            swarm_size: 70,
            min_neighborhood: 17,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.swarm_size < 2 {
            return Err(Error::Config("swarm_size must be >= 2".into()));
        }
        if self.min_neighborhood < 1 || self.min_neighborhood >= self.swarm_size {
            return Err(Error::Config(format!(
                "min_neighborhood must lie in [1, {}), got {}",
                self.swarm_size, self.min_neighborhood
            )));
        }
        if !(INERTIA_RANGE.0..=INERTIA_RANGE.1).contains(&self.inertia) {
            return Err(Error::Config(format!(
                "inertia must lie in [0.1, 1.1], got {}",
                self.inertia
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub position: Vec3,
    pub velocity: Vec3,
    pub personal_best: Vec3,
    pub personal_value: f64,
}

/// Adaptive parameters shared by the swarm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwarmState {
    pub inertia: f64,
    pub stall: usize,
    pub neighborhood: usize,
}

impl SwarmState {
    pub fn new(config: &PsConfig) -> Self {
        Self {
            inertia: config.inertia,
            stall: 0,
            neighborhood: config.min_neighborhood,
        }
    }
}

/// `W v + y1 u1 .* (p - x) + y2 u2 .* (g - x)`.
#[allow(clippy::too_many_arguments)]
pub fn ps_velocity_with(
    v: &Vec3,
    x: &Vec3,
    p: &Vec3,
    g: &Vec3,
    w: f64,
    y1: f64,
    y2: f64,
    u1: &Vec3,
    u2: &Vec3,
) -> Vec3 {
    std::array::from_fn(|i| w * v[i] + y1 * u1[i] * (p[i] - x[i]) + y2 * u2[i] * (g[i] - x[i]))
}

/// Moves `x` by `v` and clamps onto the box. Velocity components that
/// point out through a bound that was hit are zeroed.
pub fn ps_move(x: &Vec3, v: &Vec3, bx: &FeasibleBox) -> (Vec3, Vec3) {
    let mut pos: Vec3 = std::array::from_fn(|i| x[i] + v[i]);
    let mut vel = *v;
    for i in 0..3 {
        if pos[i] < bx.lower[i] {
            pos[i] = bx.lower[i];
            vel[i] = vel[i].max(0.0);
        } else if pos[i] > bx.upper[i] {
            pos[i] = bx.upper[i];
            vel[i] = vel[i].min(0.0);
        }
    }
    (pos, vel)
}

/// Updates the shared counters after an iteration.
pub fn ps_adapt(state: &mut SwarmState, improved_swarm_best: bool, config: &PsConfig) {
    if improved_swarm_best {
        state.stall = state.stall.saturating_sub(1);
        state.neighborhood = config.min_neighborhood;
    } else {
        state.stall += 1;
        state.neighborhood = (state.neighborhood + config.min_neighborhood).min(config.swarm_size - 1);
    }
    if state.stall < 2 {
        state.inertia *= 2.0;
    } else if state.stall > 5 {
        state.inertia /= 2.0;
    }
    state.inertia = state.inertia.clamp(INERTIA_RANGE.0, INERTIA_RANGE.1);
}

/// Best personal best among `n` random particles other than `me`.
fn neighbourhood_best(me: usize, n: usize, swarm: &[Particle], rng: &mut SimRng) -> Vec3 {
    let others = swarm.len() - 1;
    let picks = sample(rng, others, n.min(others));
    let mut best: Option<usize> = None;
    for k in picks.iter() {
        let j = if k >= me { k + 1 } else { k };
        match best {
            Some(b)
                if swarm[b].personal_value < swarm[j].personal_value
                    || (swarm[b].personal_value == swarm[j].personal_value && b < j) => {}
            _ => best = Some(j),
        }
    }
    swarm[best.expect("at least one neighbour")].personal_best
}

pub fn ps_run<O: Objective + ?Sized>(
    obj: &O,
    bx: &FeasibleBox,
    config: &PsConfig,
    stopping: &StoppingCriteria,
    rng: &mut SimRng,
) -> Result<OptResult> {
    config.validate()?;
    stopping.validate()?;
    let p = config.swarm_size;
    let center = bx.center();

    let positions: Vec<Vec3> = (0..p).map(|_| bx.sample(rng)).collect();
    let velocities: Vec<Vec3> = (0..p)
        .map(|_| {
            let u = bx.sample(rng);
            std::array::from_fn(|i| u[i] - center[i])
        })
        .collect();
    let values = evaluate_batch(obj, &positions);
    let mut evals = p as u64;
    let mut swarm: Vec<Particle> = (0..p)
        .map(|i| Particle {
            position: positions[i],
            velocity: velocities[i],
            personal_best: positions[i],
            personal_value: values[i],
        })
        .collect();
    let i0 = argmin(&values);
    let mut best = (positions[i0], values[i0]);
    let mut trace = vec![TraceRow::from_population(0, evals, best.1, &positions, &values)];
    let mut monitor = StallMonitor::new(stopping);
    let mut state = SwarmState::new(config);

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

        for i in 0..p {
            let g = neighbourhood_best(i, state.neighborhood, &swarm, rng);
            let u1: Vec3 = std::array::from_fn(|_| rng.random());
            let u2: Vec3 = std::array::from_fn(|_| rng.random());
            let part = &swarm[i];
            let v = ps_velocity_with(
                &part.velocity,
                &part.position,
                &part.personal_best,
                &g,
                state.inertia,
                config.self_weight,
                config.social_weight,
                &u1,
                &u2,
            );
            let (pos, vel) = ps_move(&part.position, &v, bx);
            swarm[i].position = pos;
            swarm[i].velocity = vel;
        }
        let positions: Vec<Vec3> = swarm.iter().map(|s| s.position).collect();
        let values = evaluate_batch(obj, &positions);
        evals += p as u64;

        let mut improved = false;
        for (part, &v) in swarm.iter_mut().zip(&values) {
            if v < part.personal_value {
                part.personal_best = part.position;
                part.personal_value = v;
            }
            if v < best.1 {
                best = (part.position, v);
                improved = true;
            }
        }
        ps_adapt(&mut state, improved, config);

        trace.push(TraceRow::from_population(iteration, evals, best.1, &positions, &values));
        stall = monitor.push(best.1);
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

    #[test]
    fn ballistic_step() {
        let x = [1.0, 2.0, 3.0];
        let v = [0.5, -0.5, 1.0];
        let nv = ps_velocity_with(&v, &x, &[9.0; 3], &[7.0; 3], 1.0, 1.49, 1.49, &[0.0; 3], &[0.0; 3]);
        assert_eq!(nv, v);
        let bx = FeasibleBox::new([0.0; 3], [10.0; 3]).unwrap();
        assert_eq!(ps_move(&x, &nv, &bx).0, [1.5, 1.5, 4.0]);
    }

    #[test]
    fn fixed_point_stays_and_stalls() {
        let cfg = PsConfig::default();
        let x = [1.0, 2.0, 3.0];
        let nv = ps_velocity_with(&[0.0; 3], &x, &x, &x, 1.1, 1.49, 1.49, &[0.7; 3], &[0.2; 3]);
        assert_eq!(nv, [0.0; 3]);
        let mut state = SwarmState::new(&cfg);
        ps_adapt(&mut state, false, &cfg);
        assert_eq!((state.stall, state.neighborhood), (1, 8));
    }

    #[test]
    fn clamp_hits_bound_exactly() {
        let bx = FeasibleBox::new([0.0; 3], [10.0; 3]).unwrap();
        let (pos, vel) = ps_move(&[9.0, 1.0, 5.0], &[3.0, -4.0, 1.0], &bx);
        assert_eq!(pos, [10.0, 0.0, 6.0]);
        assert_eq!(vel, [0.0, 0.0, 1.0]);
    }

    #[test]
    fn inertia_adaptation() {
        let cfg = PsConfig::default();
        let mut state = SwarmState {
            inertia: 0.4,
            stall: 1,
            neighborhood: 12,
        };
        ps_adapt(&mut state, true, &cfg);
        assert_eq!((state.stall, state.neighborhood, state.inertia), (0, 4, 0.8));
        state.stall = 8;
        ps_adapt(&mut state, true, &cfg);
        assert_eq!((state.stall, state.inertia), (7, 0.4));
        for _ in 0..10 {
            ps_adapt(&mut state, false, &cfg);
        }
        assert_eq!(state.neighborhood, cfg.swarm_size - 1);
        assert_eq!(state.inertia, INERTIA_RANGE.0);
        let mut fresh = SwarmState::new(&cfg);
        ps_adapt(&mut fresh, true, &cfg);
        assert_eq!(fresh.inertia, INERTIA_RANGE.1);
    }

    #[test]
    fn neighbours_exclude_self() {
        let mut rng = seeded(5);
        let swarm: Vec<Particle> = (0..4)
            .map(|i| Particle {
                position: [i as f64; 3],
                velocity: [0.0; 3],
                personal_best: [i as f64; 3],
                personal_value: if i == 2 { -100.0 } else { i as f64 },
            })
            .collect();
        for _ in 0..50 {
            // particle 2 is the global best, so it can only see the others
            assert_eq!(neighbourhood_best(2, 3, &swarm, &mut rng), [0.0; 3]);
        }
    }
}
