//! Implicit filtering: a projected quasi-Newton method driven by a
//! coordinate stencil whose scale `h` shrinks geometrically.
//!
//! At each scale the inner loop polls `x +- h e_i`, uses the same values for
//! a central-difference gradient, takes a projected BFGS step with a
//! simple-decrease backtracking line search and falls back to the best
//! stencil point when the line search fails. The loop ends on stencil
//! failure, on the projected-gradient test, after `maxit` iterations or when
//! the budget runs out. [`if_run`] maps the box onto the unit cube first so
//! one `h` serves every coordinate.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::global_opt::{OptResult, StopReason, TraceRow};
use crate::likelihood::{evaluate_batch, FeasibleBox, Objective, Vec3};

/// Width of the binding set used by the projected BFGS update.
pub const EPS_ACTIVE: f64 = 1e-6;

pub const STENCIL_FAILED: i32 = -1;
pub const LINE_SEARCH_FAILED: i32 = -2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IfConfig {
    pub budget: u64,
    pub maxit: usize,
    pub maxitarm: usize,
    /// `tau = tau_factor * |J|` at entry to each inner loop.
    pub tau_factor: f64,
    pub beta: f64,
    pub h0: f64,
    pub h_min: f64,
}

impl Default for IfConfig {
    fn default() -> Self {
        Self {
            budget: 300,
            maxit: 50,
            maxitarm: 3,
            tau_factor: 1.2e-20,
            beta: 1.0,
            h0: 0.5,
            h_min: 2f64.powi(-15),
        }
    }
}

impl IfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::Config("IF budget must be >= 1".into()));
        }
        if !(self.h_min > 0.0 && self.h_min < self.h0 && self.h0 <= 1.0) {
            return Err(Error::Config(format!(
                "need 0 < h_min < h0 <= 1, got h_min = {}, h0 = {}",
                self.h_min, self.h0
            )));
        }
        if !(self.beta > 0.0) {
            return Err(Error::Config("line-search beta must be positive".into()));
        }
        if !(self.tau_factor >= 0.0) {
            return Err(Error::Config("tau_factor must be >= 0".into()));
        }
        Ok(())
    }

    /// Scales visited by the outer loop.
    pub fn scales(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut h = self.h0;
        while h >= self.h_min {
            out.push(h);
            h /= 2.0;
        }
        out
    }
}

/// Why an inner loop stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InnerExit {
    StencilFailure,
    ProjectedGradient,
    MaxIterations,
    Budget,
}

/// One inner iteration, for plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalStep {
    pub scale: f64,
    pub objective: f64,
    pub gradient_norm: f64,
    /// Step reductions used by a successful line search, `-2` when it failed
    /// and the best stencil point was taken, `-1` on stencil failure.
    pub line_search: i32,
    pub evaluations: u64,
}

/// Stencil values and the gradient built from them.
#[derive(Debug, Clone)]
struct Stencil {
    points: Vec<Vec3>,
    values: Vec<f64>,
    gradient: Vec3,
}

fn stencil_points(x: &Vec3, h: f64, bx: &FeasibleBox) -> [Option<Vec3>; 6] {
    std::array::from_fn(|k| {
        let (i, sign) = (k / 2, if k % 2 == 0 { 1.0 } else { -1.0 });
        let mut p = *x;
        p[i] += sign * h;
        bx.contains(&p).then_some(p)
    })
}

fn gradient_from(fx: f64, h: f64, plus: [Option<f64>; 3], minus: [Option<f64>; 3]) -> Vec3 {
    std::array::from_fn(|i| match (plus[i], minus[i]) {
        (Some(fp), Some(fm)) => (fp - fm) / (2.0 * h),
        (Some(fp), None) => (fp - fx) / h,
        (None, Some(fm)) => (fx - fm) / h,
        (None, None) => 0.0,
    })
}

fn poll<O: Objective + ?Sized>(obj: &O, x: &Vec3, fx: f64, h: f64, bx: &FeasibleBox) -> Stencil {
    let slots = stencil_points(x, h, bx);
    let points: Vec<Vec3> = slots.iter().flatten().copied().collect();
    let values = evaluate_batch(obj, &points);
    let mut plus = [None; 3];
    let mut minus = [None; 3];
    let mut n = 0;
    for (k, slot) in slots.iter().enumerate() {
        if slot.is_some() {
            if k % 2 == 0 {
                plus[k / 2] = Some(values[n]);
            } else {
                minus[k / 2] = Some(values[n]);
            }
            n += 1;
        }
    }
    Stencil {
        points,
        values,
        gradient: gradient_from(fx, h, plus, minus),
    }
}

/// Central-difference gradient on the `h` stencil; one-sided where a stencil
/// point leaves the box, zero where both do.
pub fn stencil_gradient<O: Objective + ?Sized>(obj: &O, x: &Vec3, h: f64, bx: &FeasibleBox) -> Vec3 {
    let fx = obj.evaluate(x);
    poll(obj, x, fx, h, bx).gradient
}

fn active_set(x: &Vec3, g: &Vec3, bx: &FeasibleBox) -> [bool; 3] {
    std::array::from_fn(|i| {
        (x[i] - bx.lower[i] <= EPS_ACTIVE && g[i] > 0.0)
            || (bx.upper[i] - x[i] <= EPS_ACTIVE && g[i] < 0.0)
    })
}

/// Projected quasi-Newton direction: steepest descent on the binding
/// coordinates, `-H^{-1} g` on the rest.
fn qn_direction(h: &Matrix3<f64>, g: &Vec3, active: &[bool; 3]) -> Vec3 {
    let mut m = *h;
    for i in 0..3 {
        if active[i] {
            for j in 0..3 {
                m[(i, j)] = 0.0;
                m[(j, i)] = 0.0;
            }
            m[(i, i)] = 1.0;
        }
    }
    let gv = Vector3::from(*g);
    let d = m
        .cholesky()
        .map(|c| c.solve(&gv))
        .unwrap_or(gv);
    [-d[0], -d[1], -d[2]]
}

/// BFGS update restricted to the inactive coordinates; resets to the
/// identity when the curvature condition fails.
fn bfgs_update(h: &Matrix3<f64>, s: &Vec3, y: &Vec3, active: &[bool; 3]) -> Matrix3<f64> {
    let mask = |v: &Vec3| Vector3::from_fn(|i, _| if active[i] { 0.0 } else { v[i] });
    let s = mask(s);
    let y = mask(y);
    let ys = y.dot(&s);
    let hs = h * s;
    let shs = s.dot(&hs);
    if !(ys > 0.0 && shs > 0.0) || !ys.is_finite() {
        return Matrix3::identity();
    }
    let next = h + (y * y.transpose()) / ys - (hs * hs.transpose()) / shs;
    if next.cholesky().is_some() {
        next
    } else {
        Matrix3::identity()
    }
}

fn norm(v: &Vec3) -> f64 {
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}

#[derive(Debug, Clone)]
pub struct InnerOutcome {
    pub x: Vec3,
    pub value: f64,
    pub evaluations: u64,
    pub exit: InnerExit,
    pub steps: Vec<LocalStep>,
}

/// Inner iteration at fixed scale `h`. `remaining` caps the evaluations
/// this call may start.
pub fn if_inner<O: Objective + ?Sized>(
    obj: &O,
    x0: &Vec3,
    f0: f64,
    h: f64,
    config: &IfConfig,
    bx: &FeasibleBox,
    remaining: u64,
) -> InnerOutcome {
    let mut x = *x0;
    let mut fx = f0;
    let mut evals = 0u64;
    let mut steps = Vec::new();
    let tau = config.tau_factor * fx.abs();
    let mut hess = Matrix3::<f64>::identity();

    if remaining == 0 {
        return InnerOutcome {
            x,
            value: fx,
            evaluations: 0,
            exit: InnerExit::Budget,
            steps,
        };
    }
    let mut st = poll(obj, &x, fx, h, bx);
    evals += st.points.len() as u64;

    let mut iter = 1;
    let exit = loop {
        if iter > config.maxit {
            break InnerExit::MaxIterations;
        }
        let g = st.gradient;
        let pg: Vec3 = {
            let stepped: Vec3 = std::array::from_fn(|i| x[i] - g[i]);
            let p = bx.project(&stepped);
            std::array::from_fn(|i| x[i] - p[i])
        };
        if norm(&pg) < tau * h {
            break InnerExit::ProjectedGradient;
        }
        let kmin = (0..st.values.len()).fold(None::<usize>, |b, k| match b {
            Some(b) if st.values[b] <= st.values[k] || st.values[k].is_nan() => Some(b),
            _ => Some(k),
        });
        let Some(kmin) = kmin.filter(|&k| st.values[k] < fx) else {
            steps.push(LocalStep {
                scale: h,
                objective: fx,
                gradient_norm: norm(&g),
                line_search: STENCIL_FAILED,
                evaluations: evals,
            });
            break InnerExit::StencilFailure;
        };
        let (x_min, f_min) = (st.points[kmin], st.values[kmin]);

        let active = active_set(&x, &g, bx);
        let d = qn_direction(&hess, &g, &active);
        let mut accepted = None;
        let mut reductions = 0;
        let mut out_of_budget = false;
        for m in 0..=config.maxitarm {
            if evals >= remaining {
                out_of_budget = true;
                break;
            }
            let lambda = config.beta * 0.5f64.powi(m as i32);
            let trial = bx.project(&std::array::from_fn(|i| x[i] + lambda * d[i]));
            let ft = obj.evaluate(&trial);
            evals += 1;
            reductions = m;
            if ft < fx {
                accepted = Some((trial, ft));
                break;
            }
        }
        let (x_new, f_new, code) = match accepted {
            Some((t, ft)) => (t, ft, reductions as i32),
            None => (x_min, f_min, LINE_SEARCH_FAILED),
        };

        let s: Vec3 = std::array::from_fn(|i| x_new[i] - x[i]);
        x = x_new;
        fx = f_new;
        steps.push(LocalStep {
            scale: h,
            objective: fx,
            gradient_norm: norm(&g),
            line_search: code,
            evaluations: evals,
        });
        if out_of_budget || evals >= remaining {
            break InnerExit::Budget;
        }
        st = poll(obj, &x, fx, h, bx);
        evals += st.points.len() as u64;
        let y: Vec3 = std::array::from_fn(|i| st.gradient[i] - g[i]);
        hess = bfgs_update(&hess, &s, &y, &active_set(&x, &st.gradient, bx));
        iter += 1;
    };

    InnerOutcome {
        x,
        value: fx,
        evaluations: evals,
        exit,
        steps,
    }
}

/// Result of [`if_run`] with the per-iteration log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IfOutcome {
    pub result: OptResult,
    pub steps: Vec<LocalStep>,
}

/// Runs the inner loop at `h0, h0/2, ...` down to `h_min` on the unit-cube
/// image of `bx`, starting from `x0`.
pub fn if_run<O: Objective + ?Sized>(
    obj: &O,
    x0: &Vec3,
    config: &IfConfig,
    bx: &FeasibleBox,
) -> Result<IfOutcome> {
    config.validate()?;
    if !bx.contains(x0) {
        return Err(Error::InvalidInput(format!("IF start {x0:?} outside the box")));
    }
    let width = bx.width();
    let to_unit = |x: &Vec3| -> Vec3 { std::array::from_fn(|i| (x[i] - bx.lower[i]) / width[i]) };
    let from_unit = |z: &Vec3| -> Vec3 { std::array::from_fn(|i| bx.lower[i] + z[i] * width[i]) };
    let scaled = |z: &Vec3| obj.evaluate(&from_unit(z));
    let cube = FeasibleBox::new([0.0; 3], [1.0; 3])?;

    let mut z = cube.project(&to_unit(x0));
    let mut fz = obj.evaluate(x0);
    let mut count = 1u64;
    let mut steps = Vec::new();
    let mut trace = vec![TraceRow::from_population(0, count, fz, &[*x0], &[fz])];
    let mut stop_reason = StopReason::ScalesExhausted;

    for (n, h) in config.scales().into_iter().enumerate() {
        if count > config.budget {
            stop_reason = StopReason::Budget;
            break;
        }
        let out = if_inner(&scaled, &z, fz, h, config, &cube, config.budget.saturating_sub(count));
        count += out.evaluations;
        debug_assert!(out.value <= fz);
        z = out.x;
        fz = out.value;
        for mut s in out.steps {
            s.evaluations += count - out.evaluations;
            steps.push(s);
        }
        let x = from_unit(&z);
        trace.push(TraceRow::from_population(n + 1, count, fz, &[x], &[fz]));
        if out.exit == InnerExit::Budget {
            stop_reason = StopReason::Budget;
            break;
        }
    }

    let best = bx.project(&from_unit(&z));
    Ok(IfOutcome {
        result: OptResult {
            best,
            best_objective: fz,
            n_evaluations: count,
            trace,
            stop_reason,
            budget_exhausted: stop_reason == StopReason::Budget,
        },
        steps,
    })
}
