//! Nelder-Mead simplex search with every vertex projected onto the box.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{FeasibleBox, Objective, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NelderMeadConfig {
    /// Relative size of the initial simplex edges.
    pub initial_step: f64,
    /// Stop when every vertex lies within this distance of the best one.
    pub diameter_tol: f64,
    pub max_evaluations: u64,
}

impl Default for NelderMeadConfig {
    fn default() -> Self {
        Self {
            initial_step: 0.05,
            diameter_tol: 1e-6,
            max_evaluations: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NelderMeadResult {
    pub best: Vec3,
    pub best_objective: f64,
    pub n_evaluations: u64,
    pub converged: bool,
}

fn lin(a: &Vec3, b: &Vec3, t: f64) -> Vec3 {
    std::array::from_fn(|i| a[i] + t * (b[i] - a[i]))
}

fn diameter(simplex: &[(Vec3, f64)]) -> f64 {
    let best = simplex[0].0;
    simplex[1..]
        .iter()
        .map(|(v, _)| (0..3).map(|i| (v[i] - best[i]).abs()).fold(0.0, f64::max))
        .fold(0.0, f64::max)
}

fn sort(simplex: &mut [(Vec3, f64)]) {
    simplex.sort_by(|a, b| match (a.1.is_nan(), b.1.is_nan()) {
        (true, false) => std::cmp::Ordering::Greater,
        (false, true) => std::cmp::Ordering::Less,
        _ => a.1.total_cmp(&b.1),
    });
}

/// Minimises `obj` from `x0` inside `bx`.
pub fn nelder_mead<O: Objective + ?Sized>(
    obj: &O,
    x0: &Vec3,
    bx: &FeasibleBox,
    config: &NelderMeadConfig,
) -> Result<NelderMeadResult> {
    if !(config.initial_step > 0.0 && config.diameter_tol > 0.0) || config.max_evaluations < 4 {
        return Err(Error::Config(format!("invalid Nelder-Mead settings {config:?}")));
    }
    let x0 = bx.project(x0);
    let evals = std::cell::Cell::new(0u64);
    let eval = |x: &Vec3| {
        evals.set(evals.get() + 1);
        obj.evaluate(x)
    };

    let mut simplex: Vec<(Vec3, f64)> = Vec::with_capacity(4);
    simplex.push((x0, eval(&x0)));
    for i in 0..3 {
        let mut v = x0;
        let step = if x0[i] != 0.0 {
            config.initial_step * x0[i]
        } else {
            config.initial_step * bx.width()[i]
        };
        v[i] += step;
        if !bx.contains(&v) {
            v[i] = x0[i] - step;
        }
        let v = bx.project(&v);
        simplex.push((v, eval(&v)));
    }
    sort(&mut simplex);

    let mut converged = false;
    loop {
        if diameter(&simplex) < config.diameter_tol {
            converged = true;
            break;
        }
        if evals.get() >= config.max_evaluations {
            break;
        }
        let centroid: Vec3 = std::array::from_fn(|i| simplex[..3].iter().map(|(v, _)| v[i]).sum::<f64>() / 3.0);
        let (worst, f_worst) = simplex[3];
        let f_best = simplex[0].1;
        let f_second = simplex[2].1;

        let xr = bx.project(&lin(&centroid, &worst, -1.0));
        let fr = eval(&xr);
        if fr < f_best {
            let xe = bx.project(&lin(&centroid, &worst, -2.0));
            let fe = eval(&xe);
            simplex[3] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < f_second {
            simplex[3] = (xr, fr);
        } else {
            let (xc, fc) = if fr < f_worst {
                let xc = bx.project(&lin(&centroid, &xr, 0.5));
                (xc, eval(&xc))
            } else {
                let xc = bx.project(&lin(&centroid, &worst, 0.5));
                (xc, eval(&xc))
            };
            if fc < fr.min(f_worst) {
                simplex[3] = (xc, fc);
            } else {
                let best = simplex[0].0;
                for vertex in simplex.iter_mut().skip(1) {
                    let v = bx.project(&lin(&best, &vertex.0, 0.5));
                    *vertex = (v, eval(&v));
                }
            }
        }
        sort(&mut simplex);
    }

    Ok(NelderMeadResult {
        best: simplex[0].0,
        best_objective: simplex[0].1,
        n_evaluations: evals.get(),
        converged,
    })
}
