//! Real-coded genetic algorithm with elitism.
//!
//! Each generation keeps the `r_e` best points, breeds `r_c` children as
//! random componentwise convex combinations of two parents, and makes `r_m`
//! mutants by blending a parent with a uniform point of the box. Parents are
//! drawn by roulette over objective ranks with weight `1/sqrt(rank)`, so the
//! lowest objective gets the largest share.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{OptResult, StallMonitor, StopReason, StoppingCriteria, TraceRow};
use crate::error::{Error, Result};
use crate::likelihood::{evaluate_batch, FeasibleBox, Objective, Vec3};
use crate::rng::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaConfig {
    pub population: usize,
    pub elite_count: usize,
    pub crossover_count: usize,
    pub mutation_count: usize,
}

impl GaConfig {
    /// `r_e = floor(0.05 P) + 1`, `r_c = round(0.2 (P - r_e))`, rest mutants.
    pub fn with_population(population: usize) -> Self {
        let elite_count = (population / 20 + 1).min(population);
        let crossover_count = (0.2 * (population - elite_count) as f64).round() as usize;
        Self {
            population,
            elite_count,
            crossover_count,
            mutation_count: population - elite_count - crossover_count,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.population < 2 {
            return Err(Error::Config("GA population must be >= 2".into()));
        }
        if self.elite_count < 1 {
            return Err(Error::Config("GA needs at least one elite".into()));
        }
        if self.elite_count + self.crossover_count + self.mutation_count != self.population {
            return Err(Error::Config(format!(
                "elite + crossover + mutation = {} != population {}",
                self.elite_count + self.crossover_count + self.mutation_count,
                self.population
            )));
        }
        Ok(())
    }
}

impl Default for GaConfig {
    fn default() -> Self {
        Self::with_population(16)
    }
}

/// `lambda .* a + (1 - lambda) .* b`.
pub fn blend(a: &Vec3, b: &Vec3, lambda: &Vec3) -> Vec3 {
    std::array::from_fn(|i| lambda[i] * a[i] + (1.0 - lambda[i]) * b[i])
}

/// Indices sorted by ascending objective; NaN sorts last, ties keep index order.
pub fn rank_order(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| {
        let (va, vb) = (values[a], values[b]);
        match (va.is_nan(), vb.is_nan()) {
            (true, false) => std::cmp::Ordering::Greater,
            (false, true) => std::cmp::Ordering::Less,
            _ => va.total_cmp(&vb),
        }
        .then(a.cmp(&b))
    });
    idx
}

/// Roulette wheel over ranks: the point of rank `r` (1 = best) owns a
/// segment proportional to `1/sqrt(r)`.
#[derive(Debug, Clone)]
pub struct RankRoulette {
    order: Vec<usize>,
    cumulative: Vec<f64>,
}

impl RankRoulette {
    pub fn new(values: &[f64]) -> Self {
        let order = rank_order(values);
        let mut acc = 0.0;
        let cumulative = (1..=order.len())
            .map(|r| {
                acc += 1.0 / (r as f64).sqrt();
                acc
            })
            .collect();
        Self { order, cumulative }
    }

    /// Selection probability of each population index.
    pub fn probabilities(&self) -> Vec<f64> {
        let total = *self.cumulative.last().unwrap_or(&1.0);
        let mut p = vec![0.0; self.order.len()];
        for (r, &i) in self.order.iter().enumerate() {
            p[i] = 1.0 / ((r + 1) as f64).sqrt() / total;
        }
        p
    }

    pub fn pick(&self, rng: &mut SimRng) -> usize {
        let total = *self.cumulative.last().expect("non-empty population");
        let u = rng.random::<f64>() * total;
        let r = self.cumulative.partition_point(|&c| c <= u);
        self.order[r.min(self.order.len() - 1)]
    }
}

/// Next population: elites, then crossover children, then mutants.
pub fn ga_next_generation(
    population: &[Vec3],
    fitness: &[f64],
    config: &GaConfig,
    bx: &FeasibleBox,
    rng: &mut SimRng,
) -> Vec<Vec3> {
    let wheel = RankRoulette::new(fitness);
    let mut next: Vec<Vec3> = wheel
        .order
        .iter()
        .take(config.elite_count)
        .map(|&i| population[i])
        .collect();
    for _ in 0..config.crossover_count {
        let a = population[wheel.pick(rng)];
        let b = population[wheel.pick(rng)];
        let lambda: Vec3 = std::array::from_fn(|_| rng.random());
        next.push(bx.project(&blend(&a, &b, &lambda)));
    }
    for _ in 0..config.mutation_count {
        let parent = population[wheel.pick(rng)];
        let lambda: Vec3 = std::array::from_fn(|_| rng.random());
        let eps = bx.sample(rng);
        next.push(bx.project(&blend(&parent, &eps, &lambda)));
    }
    next
}

pub fn ga_run<O: Objective + ?Sized>(
    obj: &O,
    bx: &FeasibleBox,
    config: &GaConfig,
    stopping: &StoppingCriteria,
    rng: &mut SimRng,
) -> Result<OptResult> {
    config.validate()?;
    stopping.validate()?;
    let mut population: Vec<Vec3> = (0..config.population).map(|_| bx.sample(rng)).collect();
    let mut fitness = evaluate_batch(obj, &population);
    let mut evals = config.population as u64;
    let first = rank_order(&fitness)[0];
    let mut best = (population[first], fitness[first]);
    let mut trace = vec![TraceRow::from_population(0, evals, best.1, &population, &fitness)];
    let mut monitor = StallMonitor::new(stopping);

    let mut generation = 0;
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
        generation += 1;

        let order = rank_order(&fitness);
        let elite_values: Vec<f64> = order
            .iter()
            .take(config.elite_count)
            .map(|&i| fitness[i])
            .collect();
        let next = ga_next_generation(&population, &fitness, config, bx, rng);
        let fresh = evaluate_batch(obj, &next[config.elite_count..]);
        evals += fresh.len() as u64;
        population = next;
        fitness = elite_values.into_iter().chain(fresh).collect();

        let gi = rank_order(&fitness)[0];
        if fitness[gi] < best.1 {
            best = (population[gi], fitness[gi]);
        }
        trace.push(TraceRow::from_population(generation, evals, best.1, &population, &fitness));
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

    fn bx() -> FeasibleBox {
        FeasibleBox::new([0.0; 3], [10.0; 3]).unwrap()
    }

    #[test]
    fn split_for_sixteen() {
        let c = GaConfig::with_population(16);
        assert_eq!((c.elite_count, c.crossover_count, c.mutation_count), (1, 3, 12));
        let c = GaConfig::with_population(70);
        assert_eq!((c.elite_count, c.crossover_count, c.mutation_count), (4, 13, 53));
        assert!(c.validate().is_ok());
    }

    #[test]
    fn all_elite_copies_sorted_population() {
        let pop = vec![[3.0; 3], [1.0; 3], [2.0; 3]];
        let fit = vec![3.0, 1.0, 2.0];
        let cfg = GaConfig {
            population: 3,
            elite_count: 3,
            crossover_count: 0,
            mutation_count: 0,
        };
        let next = ga_next_generation(&pop, &fit, &cfg, &bx(), &mut seeded(0));
        assert_eq!(next, vec![[1.0; 3], [2.0; 3], [3.0; 3]]);
    }

    #[test]
    fn blend_extremes() {
        let a = [1.0, 2.0, 3.0];
        let b = [7.0, 8.0, 9.0];
        assert_eq!(blend(&a, &b, &[1.0; 3]), a);
        assert_eq!(blend(&a, &b, &[0.0; 3]), b);
    }

    #[test]
    fn roulette_favours_low_objective() {
        let w = RankRoulette::new(&[5.0, 1.0, 3.0]);
        let p = w.probabilities();
        assert!(p[1] > p[2] && p[2] > p[0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let mut rng = seeded(2);
        let mut counts = [0usize; 3];
        for _ in 0..30_000 {
            counts[w.pick(&mut rng)] += 1;
        }
        assert!(counts[1] > counts[2] && counts[2] > counts[0]);
    }
}
