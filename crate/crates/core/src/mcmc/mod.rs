//! Posterior sampling under a uniform prior on the feasible box.
//!
//! Samplers work in whatever coordinates the target density uses. The
//! scenario-level entry points sample in scaled coordinates and convert the
//! stored chains to physical units before returning.

pub mod diagnostics;
pub mod dram;
pub mod dream;

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{FeasibleBox, ObjectiveContext, Vec3};

pub use diagnostics::{
    effective_sample_size, gelman_rubin, geweke, stationarity_start, DiagnosticsReport, GelmanRubin, Geweke,
};
pub use dram::{dram_dr_step, dram_run, dram_sample, AdaptiveCovariance, DramConfig};
pub use dream::{dream_run, dream_sample, dream_sample_from, DreamConfig, JumpRate};

/// Unnormalized log density; `-inf` outside the support.
pub trait LogDensity: Sync {
    fn log_density(&self, x: &Vec3) -> f64;
}

impl<F> LogDensity for F
where
    F: Fn(&Vec3) -> f64 + Sync,
{
    fn log_density(&self, x: &Vec3) -> f64 {
        self(x)
    }
}

/// Log density restricted to a box: the uniform prior times the target.
pub(crate) fn log_posterior<D: LogDensity + ?Sized>(target: &D, prior: &FeasibleBox, x: &Vec3) -> f64 {
    if !prior.contains(x) {
        return f64::NEG_INFINITY;
    }
    let v = target.log_density(x);
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

/// Poisson log-likelihood of the scenario data at a scaled point.
pub struct ScaledPosterior<'a> {
    ctx: &'a ObjectiveContext,
}

impl<'a> ScaledPosterior<'a> {
    pub fn new(ctx: &'a ObjectiveContext) -> Self {
        Self { ctx }
    }
}

impl LogDensity for ScaledPosterior<'_> {
    fn log_density(&self, x: &Vec3) -> f64 {
        self.ctx.log_likelihood(&self.ctx.to_source(x))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceptanceStats {
    pub stage1_accepted: u64,
    pub stage2_accepted: u64,
    pub rejected: u64,
}

impl AcceptanceStats {
    pub fn total(&self) -> u64 {
        self.stage1_accepted + self.stage2_accepted + self.rejected
    }

    pub fn rate(&self) -> f64 {
        let t = self.total();
        if t == 0 {
            0.0
        } else {
            (self.stage1_accepted + self.stage2_accepted) as f64 / t as f64
        }
    }

    pub(crate) fn add(&mut self, other: &AcceptanceStats) {
        self.stage1_accepted += other.stage1_accepted;
        self.stage2_accepted += other.stage2_accepted;
        self.rejected += other.rejected;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutlierReplacement {
    pub iteration: usize,
    pub chain: usize,
    pub replaced_by: usize,
}

/// Stored chains. Every iteration is kept, burn-in included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSet {
    /// `samples[chain][iteration]`.
    pub samples: Vec<Vec<Vec3>>,
    pub log_posteriors: Vec<Vec<f64>>,
    /// Leading iterations of each chain treated as burn-in.
    pub burn_in: usize,
    /// Per-chain acceptance counts over all iterations.
    pub acceptance: Vec<AcceptanceStats>,
    pub outliers: Vec<OutlierReplacement>,
    /// Per-iteration potential scale reduction, when several chains ran.
    pub r_trace: Vec<Vec3>,
}

impl ChainSet {
    pub fn n_chains(&self) -> usize {
        self.samples.len()
    }

    pub fn n_iterations(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn acceptance_total(&self) -> AcceptanceStats {
        let mut a = AcceptanceStats::default();
        for s in &self.acceptance {
            a.add(s);
        }
        a
    }

    /// Post-burn-in samples of one chain.
    pub fn retained(&self, chain: usize) -> &[Vec3] {
        &self.samples[chain][self.burn_in.min(self.samples[chain].len())..]
    }

    /// Samples from the last `fraction` of every chain, pooled.
    pub fn tail(&self, fraction: f64) -> Vec<Vec3> {
        let n = self.n_iterations();
        let start = n - ((n as f64 * fraction).round() as usize).min(n);
        self.samples.iter().flat_map(|c| c[start..].iter().copied()).collect()
    }

    /// Pooled post-burn-in samples.
    pub fn pooled(&self) -> Vec<Vec3> {
        (0..self.n_chains()).flat_map(|c| self.retained(c).iter().copied()).collect()
    }

    /// One coordinate of the post-burn-in part of a chain.
    pub fn component(&self, chain: usize, k: usize) -> Vec<f64> {
        self.retained(chain).iter().map(|x| x[k]).collect()
    }

    /// Multiplies every stored coordinate by `factors`.
    pub fn rescale(&mut self, factors: Vec3) {
        for c in &mut self.samples {
            for x in c.iter_mut() {
                for k in 0..3 {
                    x[k] *= factors[k];
                }
            }
        }
    }

    /// Writes `chain,iteration,x,y,s0,log_posterior` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["chain", "iteration", "x", "y", "s0", "log_posterior"])
            .map_err(csv_err)?;
        for (c, (xs, lps)) in self.samples.iter().zip(&self.log_posteriors).enumerate() {
            for (i, (x, lp)) in xs.iter().zip(lps).enumerate() {
                w.serialize((c, i, x[0], x[1], x[2], lp)).map_err(csv_err)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads rows written by [`ChainSet::write_csv`]. Acceptance counts are
    /// not stored in the file and come back empty.
    pub fn read_csv<R: Read>(input: R, burn_in: usize) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let mut samples: Vec<Vec<Vec3>> = Vec::new();
        let mut lps: Vec<Vec<f64>> = Vec::new();
        for row in r.deserialize() {
            let (c, i, x, y, s, lp): (usize, usize, f64, f64, f64, f64) = row.map_err(csv_err)?;
            if c == samples.len() {
                samples.push(Vec::new());
                lps.push(Vec::new());
            }
            if c + 1 != samples.len() || i != samples[c].len() {
                return Err(Error::InvalidInput(format!("chain rows out of order at chain {c}, iteration {i}")));
            }
            samples[c].push([x, y, s]);
            lps[c].push(lp);
        }
        if samples.is_empty() {
            return Err(Error::InvalidInput("chain file has no samples".into()));
        }
        if samples.iter().any(|c| c.len() != samples[0].len()) {
            return Err(Error::InvalidInput("chains have different lengths".into()));
        }
        Ok(Self {
            acceptance: vec![AcceptanceStats::default(); samples.len()],
            samples,
            log_posteriors: lps,
            burn_in,
            outliers: Vec::new(),
            r_trace: Vec::new(),
        })
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

pub fn mean(xs: &[Vec3]) -> Vec3 {
    let n = xs.len().max(1) as f64;
    std::array::from_fn(|k| xs.iter().map(|x| x[k]).sum::<f64>() / n)
}

/// Sample covariance with divisor `n - 1`.
pub fn covariance(xs: &[Vec3]) -> [[f64; 3]; 3] {
    let m = mean(xs);
    let d = (xs.len().max(2) - 1) as f64;
    std::array::from_fn(|i| {
        std::array::from_fn(|j| xs.iter().map(|x| (x[i] - m[i]) * (x[j] - m[j])).sum::<f64>() / d)
    })
}
