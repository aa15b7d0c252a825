//! Population-based global optimizers over a box.
//!
//! All three methods draw random numbers only on the calling thread and hand
//! whole populations to [`evaluate_batch`](crate::likelihood::evaluate_batch),
//! so a fixed seed gives the same result for any worker count.

pub mod ga;
pub mod ps;
pub mod sa;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{FeasibleBox, Objective, Vec3};
use crate::rng::SimRng;

pub use ga::{ga_next_generation, ga_run, GaConfig};
pub use ps::{ps_run, PsConfig};
pub use sa::{sa_accept_probability, sa_propose, sa_run, SaConfig};

/// When to stop a run. The evaluation budget is always active.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoppingCriteria {
    /// Total objective evaluations over the whole population.
    pub max_evaluations: u64,
    #[serde(default)]
    pub target_objective: Option<f64>,
    /// Number of checkpoints over which progress is measured; `None` disables it.
    #[serde(default)]
    pub stall_window: Option<usize>,
    #[serde(default = "default_stall_tolerance")]
    pub stall_tolerance: f64,
}

fn default_stall_tolerance() -> f64 {
    1e-6
}

impl StoppingCriteria {
    pub fn budget(max_evaluations: u64) -> Self {
        Self {
            max_evaluations,
            target_objective: None,
            stall_window: None,
            stall_tolerance: default_stall_tolerance(),
        }
    }

    pub fn with_target(mut self, target: f64) -> Self {
        self.target_objective = Some(target);
        self
    }

    pub fn with_stall(mut self, window: usize, tolerance: f64) -> Self {
        self.stall_window = Some(window);
        self.stall_tolerance = tolerance;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_evaluations == 0 {
            return Err(Error::Config("max_evaluations must be positive".into()));
        }
        if self.stall_window == Some(0) {
            return Err(Error::Config("stall_window must be positive".into()));
        }
        if !(self.stall_tolerance >= 0.0) {
            return Err(Error::Config("stall_tolerance must be >= 0".into()));
        }
        Ok(())
    }

    pub(crate) fn target_met(&self, value: f64) -> bool {
        self.target_objective.is_some_and(|t| value <= t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Target,
    Budget,
    Stall,
    /// Local search ran through all its stencil scales.
    ScalesExhausted,
    /// Simplex collapsed below its size tolerance.
    Converged,
}

/// Population summary after one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub evaluations: u64,
    pub best: f64,
    /// Mean over the finite objective values of the current population.
    pub mean: f64,
    pub lower: Vec3,
    pub upper: Vec3,
}

impl TraceRow {
    pub(crate) fn from_population(
        iteration: usize,
        evaluations: u64,
        best: f64,
        points: &[Vec3],
        values: &[f64],
    ) -> Self {
        let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        let mean = if finite.is_empty() {
            f64::INFINITY
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        };
        let mut lower = [f64::INFINITY; 3];
        let mut upper = [f64::NEG_INFINITY; 3];
        for p in points {
            for i in 0..3 {
                lower[i] = lower[i].min(p[i]);
                upper[i] = upper[i].max(p[i]);
            }
        }
        Self {
            iteration,
            evaluations,
            best,
            mean,
            lower,
            upper,
        }
    }

    /// Per-coordinate range of the population.
    pub fn spread(&self) -> Vec3 {
        std::array::from_fn(|i| self.upper[i] - self.lower[i])
    }
}

/// Outcome of an optimizer run, in the optimizer's coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptResult {
    pub best: Vec3,
    pub best_objective: f64,
    pub n_evaluations: u64,
    pub trace: Vec<TraceRow>,
    pub stop_reason: StopReason,
    pub budget_exhausted: bool,
}

/// A global optimizer together with its settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum GlobalMethod {
    Sa(SaConfig),
    Ps(PsConfig),
    Ga(GaConfig),
}

impl GlobalMethod {
    pub fn name(&self) -> &'static str {
        match self {
            GlobalMethod::Sa(_) => "sa",
            GlobalMethod::Ps(_) => "ps",
            GlobalMethod::Ga(_) => "ga",
        }
    }

    /// Trajectories, particles or individuals per iteration.
    pub fn population(&self) -> usize {
        match self {
            GlobalMethod::Sa(c) => c.n_starts,
            GlobalMethod::Ps(c) => c.swarm_size,
            GlobalMethod::Ga(c) => c.population,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            GlobalMethod::Sa(c) => c.validate(),
            GlobalMethod::Ps(c) => c.validate(),
            GlobalMethod::Ga(c) => c.validate(),
        }
    }

    pub fn run<O: Objective + ?Sized>(
        &self,
        obj: &O,
        bx: &FeasibleBox,
        stopping: &StoppingCriteria,
        rng: &mut SimRng,
    ) -> Result<OptResult> {
        match self {
            GlobalMethod::Sa(c) => sa_run(obj, bx, c, stopping, rng),
            GlobalMethod::Ps(c) => ps_run(obj, bx, c, stopping, rng),
            GlobalMethod::Ga(c) => ga_run(obj, bx, c, stopping, rng),
        }
    }
}

/// Index of the smallest value; the lowest index wins ties and NaN never wins.
pub(crate) fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] || values[best].is_nan() {
            best = i;
        }
    }
    best
}

/// Relative change `|a - b| / max(1, |b|)`.
pub(crate) fn relative_change(a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    (a - b).abs() / b.abs().max(1.0)
}

/// Tracks a scalar over checkpoints and reports a stall when it has moved
/// less than the tolerance over the last `window` checkpoints.
#[derive(Debug, Clone)]
pub(crate) struct StallMonitor {
    window: Option<usize>,
    tolerance: f64,
    history: Vec<f64>,
}

impl StallMonitor {
    pub(crate) fn new(stopping: &StoppingCriteria) -> Self {
        Self {
            window: stopping.stall_window,
            tolerance: stopping.stall_tolerance,
            history: Vec::new(),
        }
    }

    pub(crate) fn push(&mut self, value: f64) -> bool {
        let Some(w) = self.window else {
            return false;
        };
        self.history.push(value);
        if self.history.len() <= w {
            return false;
        }
        let old = self.history[self.history.len() - 1 - w];
        relative_change(value, old) < self.tolerance
    }
}
