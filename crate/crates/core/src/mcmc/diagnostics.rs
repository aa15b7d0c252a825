//! Convergence diagnostics.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::ChainSet;
use crate::error::{Error, Result};
use crate::likelihood::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geweke {
    pub z: f64,
    /// `2 (1 - Phi(|z|))`.
    pub score: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GelmanRubin {
    pub r: f64,
    pub degenerate: bool,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Spectral density at frequency zero with a Bartlett window of width sqrt(n).
fn spectral_zero(x: &[f64]) -> f64 {
    let n = x.len();
    let m = mean(x);
    let acov = |k: usize| (0..n - k).map(|i| (x[i] - m) * (x[i + k] - m)).sum::<f64>() / n as f64;
    let lags = (n as f64).sqrt().floor() as usize;
    let mut s = acov(0);
    for k in 1..=lags.min(n - 1) {
        s += 2.0 * (1.0 - k as f64 / (lags + 1) as f64) * acov(k);
    }
    s.max(0.0)
}

/// Compares the mean of the first `first_frac` of a chain with the mean of
/// its last `last_frac`.
pub fn geweke(chain: &[f64], first_frac: f64, last_frac: f64) -> Result<Geweke> {
    if chain.len() < 100 {
        return Err(Error::InvalidInput(format!(
            "Geweke needs at least 100 samples, got {}",
            chain.len()
        )));
    }
    if !(first_frac > 0.0 && last_frac > 0.0 && first_frac + last_frac <= 1.0) {
        return Err(Error::Config(format!(
            "invalid Geweke fractions {first_frac}, {last_frac}"
        )));
    }
    let n = chain.len();
    let n1 = ((n as f64 * first_frac).round() as usize).max(2);
    let n2 = ((n as f64 * last_frac).round() as usize).max(2);
    let (a, b) = (&chain[..n1], &chain[n - n2..]);
    let (sa, sb) = (spectral_zero(a), spectral_zero(b));
    if sa <= 0.0 || sb <= 0.0 {
        return Ok(Geweke {
            z: f64::NAN,
            score: f64::NAN,
            degenerate: true,
        });
    }
    let z = (mean(a) - mean(b)) / (sa / n1 as f64 + sb / n2 as f64).sqrt();
    let phi = Normal::standard().cdf(z.abs());
    Ok(Geweke {
        z,
        score: 2.0 * (1.0 - phi),
        degenerate: false,
    })
}

/// Potential scale reduction over the last `last_frac` of each chain.
pub fn gelman_rubin(chains: &[Vec<f64>], last_frac: f64) -> Result<GelmanRubin> {
    if chains.len() < 2 {
        return Err(Error::InvalidInput("Gelman-Rubin needs at least two chains".into()));
    }
    let len = chains[0].len();
    if chains.iter().any(|c| c.len() != len) {
        return Err(Error::InvalidInput("chains have different lengths".into()));
    }
    if !(last_frac > 0.0 && last_frac <= 1.0) {
        return Err(Error::Config(format!("invalid fraction {last_frac}")));
    }
    let n = ((len as f64 * last_frac).round() as usize).min(len);
    if n < 2 {
        return Err(Error::InvalidInput("too few samples for Gelman-Rubin".into()));
    }
    let m = chains.len() as f64;
    let nf = n as f64;
    let tails: Vec<&[f64]> = chains.iter().map(|c| &c[len - n..]).collect();
    let means: Vec<f64> = tails.iter().map(|t| mean(t)).collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = nf / (m - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let w = tails
        .iter()
        .zip(&means)
        .map(|(t, mu)| t.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (nf - 1.0))
        .sum::<f64>()
        / m;
    if !(w > 0.0) {
        let r = if b > 0.0 { f64::INFINITY } else { f64::NAN };
        return Ok(GelmanRubin { r, degenerate: true });
    }
    let r = (((nf - 1.0) / nf * w + b / nf) / w).sqrt();
    Ok(GelmanRubin { r, degenerate: false })
}

/// Effective sample size from Geyer's initial positive sequence, capped at `n`.
pub fn effective_sample_size(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return n as f64;
    }
    let m = mean(x);
    let acov = |k: usize| (0..n - k).map(|i| (x[i] - m) * (x[i + k] - m)).sum::<f64>() / n as f64;
    let g0 = acov(0);
    if g0 <= 0.0 {
        return n as f64;
    }
    let mut tau = -1.0;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = (acov(2 * k) + acov(2 * k + 1)) / g0;
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        k += 1;
    }
    (n as f64 / tau.max(1e-12)).min(n as f64)
}

/// Smallest burn-in, in steps of 10% up to half the chain, after which every
/// coordinate passes Geweke at |z| < 2.
pub fn stationarity_start(chain: &[Vec3]) -> Option<usize> {
    let n = chain.len();
    (0..=5).map(|i| i * n / 10).find(|&b| {
        let rest = &chain[b..];
        (0..3).all(|k| {
            let xs: Vec<f64> = rest.iter().map(|x| x[k]).collect();
            geweke(&xs, 0.1, 0.5).is_ok_and(|g| !g.degenerate && g.z.abs() < 2.0)
        })
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    /// Per chain, per coordinate, on the post-burn-in samples.
    pub geweke: Vec<[Geweke; 3]>,
    pub gelman_rubin: Option<[GelmanRubin; 3]>,
    /// Summed over chains.
    pub ess: Vec3,
    /// Per chain.
    pub stationarity_start: Vec<Option<usize>>,
}

impl DiagnosticsReport {
    pub fn from_chains(chains: &ChainSet) -> Result<Self> {
        let nc = chains.n_chains();
        let mut gw = Vec::with_capacity(nc);
        let mut ess = [0.0; 3];
        for c in 0..nc {
            let mut row = [Geweke {
                z: f64::NAN,
                score: f64::NAN,
                degenerate: true,
            }; 3];
            for (k, slot) in row.iter_mut().enumerate() {
                let xs = chains.component(c, k);
                *slot = geweke(&xs, 0.1, 0.5)?;
                ess[k] += effective_sample_size(&xs);
            }
            gw.push(row);
        }
        let gr = if nc >= 2 {
            let mut out = [GelmanRubin {
                r: f64::NAN,
                degenerate: true,
            }; 3];
            for (k, slot) in out.iter_mut().enumerate() {
                let cs: Vec<Vec<f64>> = (0..nc).map(|c| chains.component(c, k)).collect();
                *slot = gelman_rubin(&cs, 0.5)?;
            }
            Some(out)
        } else {
            None
        };
        Ok(Self {
            geweke: gw,
            gelman_rubin: gr,
            ess,
            stationarity_start: (0..nc).map(|c| stationarity_start(chains.retained(c))).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn normals(seed: u64, n: usize, shift: f64) -> Vec<f64> {
        let mut r = seeded(seed);
        (0..n).map(|_| shift + r.sample::<f64, _>(StandardNormal)).collect()
    }

    #[test]
    fn geweke_detects_mean_shift() {
        let mut x = normals(1, 5000, 0.0);
        x.extend(normals(2, 5000, 5.0));
        assert!(geweke(&x, 0.1, 0.5).unwrap().z.abs() > 10.0);
    }

    #[test]
    fn geweke_constant_is_degenerate() {
        let g = geweke(&[3.0; 200], 0.1, 0.5).unwrap();
        assert!(g.degenerate);
        assert!(geweke(&[1.0; 50], 0.1, 0.5).is_err());
    }

    #[test]
    fn geweke_score_matches_normal_tail() {
        let g = geweke(&normals(9, 10_000, 0.0), 0.1, 0.5).unwrap();
        let expect = statrs::function::erf::erfc(g.z.abs() / std::f64::consts::SQRT_2);
        assert!((g.score - expect).abs() < 1e-12);
    }

    #[test]
    fn gelman_rubin_hand_value() {
        // chains [0,2] and [2,4]: W = 2, B = 2*2 = 4, n = 2
        let r = gelman_rubin(&[vec![0.0, 2.0], vec![2.0, 4.0]], 1.0).unwrap();
        let expect = ((0.5 * 2.0 + 4.0 / 2.0) / 2.0f64).sqrt();
        assert!((r.r - expect).abs() < 1e-14);
    }

    #[test]
    fn gelman_rubin_identical_chains_degenerate() {
        let c = vec![1.0; 100];
        let r = gelman_rubin(&[c.clone(), c], 0.5).unwrap();
        assert!(r.degenerate);
        assert!(gelman_rubin(&[vec![1.0; 10]], 0.5).is_err());
        assert!(gelman_rubin(&[vec![1.0; 10], vec![1.0; 11]], 0.5).is_err());
    }

    #[test]
    fn ess_of_iid_and_ar1() {
        let x = normals(3, 20_000, 0.0);
        let e = effective_sample_size(&x);
        assert!(e > 15_000.0, "{e}");
        let mut r = seeded(4);
        let mut y = vec![0.0];
        for _ in 1..20_000 {
            let prev = *y.last().unwrap();
            y.push(0.9 * prev + r.sample::<f64, _>(StandardNormal));
        }
        // AR(1) with phi = 0.9 has n (1 - phi) / (1 + phi) effective draws
        let e = effective_sample_size(&y);
        let expect = 20_000.0 * 0.1 / 1.9;
        assert!((e / expect - 1.0).abs() < 0.3, "{e} vs {expect}");
    }
}
