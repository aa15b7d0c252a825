//! Poisson likelihood and the objectives minimized by the optimizers.
//!
//! Optimizers and samplers work in scaled coordinates `(x, y, s0 / scale)`;
//! [`ObjectiveContext`] converts to physical units before each model run and
//! counts every run.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::transport::{ObservationSet, Scenario, SourceParams};

pub type Vec3 = [f64; 3];

/// Product of closed intervals `[lower_i, upper_i]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeasibleBox {
    pub lower: Vec3,
    pub upper: Vec3,
}

impl FeasibleBox {
    pub fn new(lower: Vec3, upper: Vec3) -> Result<Self> {
        let b = Self { lower, upper };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..3 {
            if !(self.lower[i].is_finite() && self.upper[i].is_finite())
                || self.lower[i] >= self.upper[i]
            {
                return Err(Error::InvalidInput(format!(
                    "box coordinate {i}: need lower < upper, got [{}, {}]",
                    self.lower[i], self.upper[i]
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, x: &Vec3) -> bool {
        (0..3).all(|i| x[i] >= self.lower[i] && x[i] <= self.upper[i])
    }

    /// Componentwise clamp onto the box.
    pub fn project(&self, x: &Vec3) -> Vec3 {
        std::array::from_fn(|i| x[i].clamp(self.lower[i], self.upper[i]))
    }

    pub fn width(&self) -> Vec3 {
        std::array::from_fn(|i| self.upper[i] - self.lower[i])
    }

    pub fn center(&self) -> Vec3 {
        std::array::from_fn(|i| 0.5 * (self.lower[i] + self.upper[i]))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec3 {
        std::array::from_fn(|i| self.lower[i] + rng.random::<f64>() * (self.upper[i] - self.lower[i]))
    }

    /// Intersection with `other`, or `None` when empty.
    pub fn intersect(&self, other: &FeasibleBox) -> Option<FeasibleBox> {
        let lower: Vec3 = std::array::from_fn(|i| self.lower[i].max(other.lower[i]));
        let upper: Vec3 = std::array::from_fn(|i| self.upper[i].min(other.upper[i]));
        (0..3)
            .all(|i| lower[i] < upper[i])
            .then_some(FeasibleBox { lower, upper })
    }
}

/// Anything that maps a point to an objective value.
pub trait Objective: Sync {
    fn evaluate(&self, x: &Vec3) -> f64;
}

impl<F> Objective for F
where
    F: Fn(&Vec3) -> f64 + Sync,
{
    fn evaluate(&self, x: &Vec3) -> f64 {
        self(x)
    }
}

/// Evaluates every point concurrently; output order matches input order.
pub fn evaluate_batch<O: Objective + ?Sized>(obj: &O, xs: &[Vec3]) -> Vec<f64> {
    xs.par_iter().map(|x| obj.evaluate(x)).collect()
}

/// `sum_ij log(v_ij!)`.
pub fn log_factorial_sum(obs: &ObservationSet) -> f64 {
    obs.iter().map(|&v| ln_gamma(v as f64 + 1.0)).sum()
}

/// `log pi(V | f)` for per-detector means `f`.
pub fn poisson_log_likelihood(means: &[f64], obs: &ObservationSet) -> Result<f64> {
    check_dims(means, obs)?;
    let mut acc = 0.0;
    for (i, &f) in means.iter().enumerate() {
        if !(f > 0.0) {
            return Err(Error::DegenerateMean { detector: i, mean: f });
        }
        let row = obs.row(i);
        let total: f64 = row.iter().map(|&v| v as f64).sum();
        acc += total * f.ln() - row.len() as f64 * f;
    }
    Ok(acc - log_factorial_sum(obs))
}

/// `J = 1/2 sum_ij (f_i - v_ij log f_i)`; `+inf` for a non-positive mean.
pub fn neg_log_objective_from_means(means: &[f64], obs: &ObservationSet) -> Result<f64> {
    check_dims(means, obs)?;
    let mut acc = 0.0;
    for (i, &f) in means.iter().enumerate() {
        if !(f > 0.0) {
            return Ok(f64::INFINITY);
        }
        let row = obs.row(i);
        let total: f64 = row.iter().map(|&v| v as f64).sum();
        acc += row.len() as f64 * f - total * f.ln();
    }
    Ok(0.5 * acc)
}

/// `sum_ij (v_ij - f_i)^2`.
pub fn ols_from_means(means: &[f64], obs: &ObservationSet) -> Result<f64> {
    check_dims(means, obs)?;
    Ok(means
        .iter()
        .enumerate()
        .flat_map(|(i, &f)| obs.row(i).iter().map(move |&v| (v as f64 - f).powi(2)))
        .sum())
}

fn check_dims(means: &[f64], obs: &ObservationSet) -> Result<()> {
    if means.len() != obs.n_det() {
        return Err(Error::InvalidInput(format!(
            "{} means for {} detectors",
            means.len(),
            obs.n_det()
        )));
    }
    Ok(())
}

/// Scenario, data and a counter of model runs.
#[derive(Debug)]
pub struct ObjectiveContext {
    scenario: Scenario,
    observations: ObservationSet,
    evaluations: AtomicU64,
}

impl ObjectiveContext {
    pub fn new(scenario: Scenario, observations: ObservationSet) -> Result<Self> {
        scenario.validate()?;
        if observations.n_det() != scenario.detectors.len() {
            return Err(Error::InvalidInput(format!(
                "observations cover {} detectors, scenario has {}",
                observations.n_det(),
                scenario.detectors.len()
            )));
        }
        Ok(Self {
            scenario,
            observations,
            evaluations: AtomicU64::new(0),
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn observations(&self) -> &ObservationSet {
        &self.observations
    }

    /// Number of model runs so far.
    pub fn evaluations(&self) -> u64 {
        self.evaluations.load(Ordering::Relaxed)
    }

    pub fn reset_evaluations(&self) {
        self.evaluations.store(0, Ordering::Relaxed);
    }

    fn count(&self) {
        self.evaluations.fetch_add(1, Ordering::Relaxed);
    }

    pub fn to_source(&self, scaled: &Vec3) -> SourceParams {
        SourceParams::new(scaled[0], scaled[1], scaled[2] * self.scenario.intensity_scale)
    }

    pub fn to_scaled(&self, theta: &SourceParams) -> Vec3 {
        [theta.x, theta.y, theta.s0 / self.scenario.intensity_scale]
    }

    /// The feasible box in scaled coordinates.
    pub fn scaled_box(&self) -> FeasibleBox {
        let b = &self.scenario.feasible_box;
        let s = self.scenario.intensity_scale;
        FeasibleBox {
            lower: [b.lower[0], b.lower[1], b.lower[2] / s],
            upper: [b.upper[0], b.upper[1], b.upper[2] / s],
        }
    }

    /// Mean counts at a scaled point; counts as one model run.
    pub fn mean_counts_scaled(&self, scaled: &Vec3) -> Result<Vec<f64>> {
        self.count();
        self.scenario.mean_counts(&self.to_source(scaled))
    }

    /// Log-likelihood, or the error that makes it undefined.
    pub fn log_likelihood_checked(&self, theta: &SourceParams) -> Result<f64> {
        self.count();
        let means = self.scenario.mean_counts(theta)?;
        poisson_log_likelihood(&means, &self.observations)
    }

    /// Log-likelihood with `-inf` standing in for degenerate parameters.
    pub fn log_likelihood(&self, theta: &SourceParams) -> f64 {
        match self.log_likelihood_checked(theta) {
            Ok(v) => v,
            Err(e) => {
                log::debug!("log-likelihood undefined at {theta:?}: {e}");
                f64::NEG_INFINITY
            }
        }
    }

    /// Negative log objective at a scaled point; `+inf` where undefined.
    pub fn neg_log_objective(&self, scaled: &Vec3) -> f64 {
        self.count();
        let theta = self.to_source(scaled);
        self.scenario
            .mean_counts(&theta)
            .and_then(|m| neg_log_objective_from_means(&m, &self.observations))
            .unwrap_or(f64::INFINITY)
    }

    /// Least-squares misfit at a scaled point.
    pub fn ols_objective(&self, scaled: &Vec3) -> f64 {
        self.count();
        let theta = self.to_source(scaled);
        self.scenario
            .mean_counts(&theta)
            .and_then(|m| ols_from_means(&m, &self.observations))
            .unwrap_or(f64::INFINITY)
    }

    /// Adapter that evaluates the least-squares misfit.
    pub fn ols(&self) -> OlsObjective<'_> {
        OlsObjective(self)
    }
}

impl Objective for ObjectiveContext {
    fn evaluate(&self, x: &Vec3) -> f64 {
        self.neg_log_objective(x)
    }
}

pub struct OlsObjective<'a>(&'a ObjectiveContext);

impl Objective for OlsObjective<'_> {
    fn evaluate(&self, x: &Vec3) -> f64 {
        self.0.ols_objective(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn obs(rows: Vec<Vec<u64>>) -> ObservationSet {
        ObservationSet::new(rows).unwrap()
    }

    #[test]
    fn log_likelihood_closed_forms() {
        assert_relative_eq!(
            poisson_log_likelihood(&[1.0], &obs(vec![vec![0]])).unwrap(),
            -1.0,
            max_relative = 1e-14
        );
        let l2 = 2.0f64.ln();
        assert_relative_eq!(
            poisson_log_likelihood(&[2.0], &obs(vec![vec![2]])).unwrap(),
            2.0 * l2 - 2.0 - l2,
            max_relative = 1e-14
        );
    }

    #[test]
    fn degenerate_mean_is_an_error() {
        assert!(matches!(
            poisson_log_likelihood(&[0.0], &obs(vec![vec![1]])),
            Err(Error::DegenerateMean { detector: 0, .. })
        ));
        assert_eq!(
            neg_log_objective_from_means(&[-1.0], &obs(vec![vec![1]])).unwrap(),
            f64::INFINITY
        );
    }

    #[test]
    fn zero_counts_objective() {
        let o = obs(vec![vec![0; 10]; 10]);
        let c = 7.5;
        assert_relative_eq!(
            neg_log_objective_from_means(&[c; 10], &o).unwrap(),
            50.0 * c,
            max_relative = 1e-15
        );
    }

    #[test]
    fn ols_closed_forms() {
        assert_eq!(ols_from_means(&[7.0], &obs(vec![vec![10]])).unwrap(), 9.0);
        assert_eq!(ols_from_means(&[4.0, 2.0], &obs(vec![vec![4, 4], vec![2, 2]])).unwrap(), 0.0);
    }

    #[test]
    fn box_project_examples() {
        let b = FeasibleBox::new([0.0, 0.0, 1.0], [250.0, 180.0, 100.0]).unwrap();
        assert_eq!(b.project(&[-5.0, 999.0, 50.0]), [0.0, 180.0, 50.0]);
        let p = [10.0, 20.0, 30.0];
        assert_eq!(b.project(&p), p);
        let q = b.project(&[300.0, -1.0, 0.0]);
        assert_eq!(b.project(&q), q);
    }

    #[test]
    fn box_validation_and_intersection() {
        assert!(FeasibleBox::new([0.0, 0.0, 1.0], [0.0, 1.0, 2.0]).is_err());
        let a = FeasibleBox::new([0.0; 3], [1.0; 3]).unwrap();
        let b = FeasibleBox::new([0.5; 3], [2.0; 3]).unwrap();
        assert_eq!(a.intersect(&b).unwrap().lower, [0.5; 3]);
        let c = FeasibleBox::new([3.0; 3], [4.0; 3]).unwrap();
        assert!(a.intersect(&c).is_none());
    }

    #[test]
    fn batch_preserves_order() {
        let f = |x: &Vec3| x[0] * 2.0;
        let xs: Vec<Vec3> = (0..100).map(|i| [i as f64, 0.0, 0.0]).collect();
        let ys = evaluate_batch(&f, &xs);
        assert!(ys.iter().enumerate().all(|(i, y)| *y == 2.0 * i as f64));
    }
}
