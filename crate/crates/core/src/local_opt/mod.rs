//! Bound-constrained local refinement.

pub mod implicit_filtering;
pub mod nelder_mead;

use crate::likelihood::{FeasibleBox, Vec3};

pub use implicit_filtering::{if_inner, if_run, stencil_gradient, IfConfig, InnerExit, LocalStep};
pub use nelder_mead::{nelder_mead, NelderMeadConfig};

/// Componentwise clamp onto `bx`.
pub fn project(x: &Vec3, bx: &FeasibleBox) -> Vec3 {
    bx.project(x)
}

use crate::error::Result;
use crate::likelihood::ObjectiveContext;
use rayon::prelude::*;

/// Least-squares fit over a square grid of candidate locations. The counts
/// are linear in intensity, so each grid point gets its best intensity in
/// closed form from a single model run at unit scaled intensity. Returns the
/// best grid point in scaled coordinates.
pub fn ols_grid_search(ctx: &ObjectiveContext, spacing: f64) -> Result<Vec3> {
    if !(spacing > 0.0) {
        return Err(crate::Error::InvalidInput(format!("grid spacing must be positive, got {spacing}")));
    }
    let bx = ctx.scaled_box();
    let scn = ctx.scenario();
    let obs = ctx.observations();
    let background: Vec<f64> = scn.detectors.iter().map(|d| scn.background * d.dwell_time).collect();
    let excess: Vec<f64> = (0..obs.n_det())
        .map(|i| {
            let row = obs.row(i);
            row.iter().map(|&v| v as f64).sum::<f64>() / row.len() as f64 - background[i]
        })
        .collect();
    let nx = ((bx.upper[0] - bx.lower[0]) / spacing).floor() as usize;
    let ny = ((bx.upper[1] - bx.lower[1]) / spacing).floor() as usize;
    let points: Vec<(f64, f64)> = (0..=nx)
        .flat_map(|i| (0..=ny).map(move |j| (i, j)))
        .map(|(i, j)| (bx.lower[0] + i as f64 * spacing, bx.lower[1] + j as f64 * spacing))
        .collect();
    let fits: Vec<Option<(f64, Vec3)>> = points
        .par_iter()
        .map(|&(x, y)| {
            let unit = ctx.mean_counts_scaled(&[x, y, 1.0]).ok()?;
            let a: Vec<f64> = unit.iter().zip(&background).map(|(m, b)| m - b).collect();
            let aa: f64 = a.iter().map(|v| v * v).sum();
            if !(aa > 0.0) {
                return None;
            }
            let s = (a.iter().zip(&excess).map(|(a, e)| a * e).sum::<f64>() / aa)
                .clamp(bx.lower[2], bx.upper[2]);
            let means: Vec<f64> = a.iter().zip(&background).map(|(a, b)| a * s + b).collect();
            let misfit = crate::likelihood::ols_from_means(&means, obs).ok()?;
            Some((misfit, [x, y, s]))
        })
        .collect();
    fits.into_iter()
        .flatten()
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, x)| x)
        .ok_or_else(|| crate::Error::Degenerate("no grid point gives a finite misfit".into()))
}

/// Nelder-Mead on the least-squares misfit, seeded from [`ols_grid_search`].
pub fn ols_estimate(ctx: &ObjectiveContext, spacing: f64, config: &NelderMeadConfig) -> Result<Vec3> {
    let start = ols_grid_search(ctx, spacing)?;
    Ok(nelder_mead(&ctx.ols(), &start, &ctx.scaled_box(), config)?.best)
}
