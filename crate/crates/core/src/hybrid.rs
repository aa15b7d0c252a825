//! Global search with early stopping followed by implicit filtering on a
//! small box around the global pseudo-optimum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::global_opt::{GlobalMethod, OptResult, StoppingCriteria};
use crate::likelihood::{FeasibleBox, ObjectiveContext};
use crate::local_opt::implicit_filtering::{if_run, IfConfig, LocalStep};
use crate::rng::SimRng;
use crate::transport::SourceParams;

/// Half-widths of the refinement box in physical units (m, m, Bq).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SubdomainSpec {
    pub half_widths: [f64; 3],
}

impl Default for SubdomainSpec {
    fn default() -> Self {
        Self {
            half_widths: [10.0, 10.0, 1e10],
        }
    }
}

impl SubdomainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.half_widths.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
            return Err(Error::Config(format!(
                "sub-domain half-widths must be positive, got {:?}",
                self.half_widths
            )));
        }
        Ok(())
    }
}

/// `[theta - a, theta + a]` clipped to `omega`, all in physical units.
pub fn make_subdomain(theta: &SourceParams, spec: &SubdomainSpec, omega: &FeasibleBox) -> Result<FeasibleBox> {
    spec.validate()?;
    let t = theta.to_array();
    if !omega.contains(&t) {
        return Err(Error::InvalidInput(format!("pseudo-optimum {t:?} lies outside the feasible box")));
    }
    let a = spec.half_widths;
    let around = FeasibleBox {
        lower: std::array::from_fn(|i| t[i] - a[i]),
        upper: std::array::from_fn(|i| t[i] + a[i]),
    };
    around
        .intersect(omega)
        .ok_or_else(|| Error::Degenerate("empty sub-domain".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HybridConfig {
    pub global: GlobalMethod,
    pub stopping: StoppingCriteria,
    pub local: IfConfig,
    pub subdomain: SubdomainSpec,
}

impl HybridConfig {
    pub fn validate(&self) -> Result<()> {
        self.global.validate()?;
        self.stopping.validate()?;
        self.local.validate()?;
        self.subdomain.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridReport {
    pub method: String,
    pub global: OptResult,
    /// Global pseudo-optimum in physical units.
    pub pseudo_optimum: SourceParams,
    /// Refinement box in physical units.
    pub subdomain: FeasibleBox,
    pub local: OptResult,
    pub local_steps: Vec<LocalStep>,
    pub estimate: SourceParams,
    pub objective: f64,
    pub total_evaluations: u64,
    /// Whether the true source lies in the refinement box, when known.
    pub truth_in_subdomain: Option<bool>,
}

pub fn hybrid_run(ctx: &ObjectiveContext, config: &HybridConfig, rng: &mut SimRng) -> Result<HybridReport> {
    config.validate()?;
    let scaled_box = ctx.scaled_box();
    let global = config.global.run(ctx, &scaled_box, &config.stopping, rng)?;
    if global.budget_exhausted {
        log::warn!(
            "{} stopped on its budget of {} evaluations before any other criterion",
            config.global.name(),
            config.stopping.max_evaluations
        );
    }
    let pseudo = ctx.to_source(&global.best);
    let subdomain = make_subdomain(&pseudo, &config.subdomain, &ctx.scenario().feasible_box)?;
    let scale = ctx.scenario().intensity_scale;
    let local_box = FeasibleBox {
        lower: [subdomain.lower[0], subdomain.lower[1], subdomain.lower[2] / scale],
        upper: [subdomain.upper[0], subdomain.upper[1], subdomain.upper[2] / scale],
    };
    let start = local_box.project(&global.best);
    let local = if_run(ctx, &start, &config.local, &local_box)?;
    let truth_in_subdomain = ctx
        .scenario()
        .true_source
        .map(|t| subdomain.contains(&t.to_array()));

    Ok(HybridReport {
        method: format!("{}+if", config.global.name()),
        pseudo_optimum: pseudo,
        subdomain,
        estimate: ctx.to_source(&local.result.best),
        objective: local.result.best_objective,
        total_evaluations: global.n_evaluations + local.result.n_evaluations,
        global,
        local: local.result,
        local_steps: local.steps,
        truth_in_subdomain,
    })
}
