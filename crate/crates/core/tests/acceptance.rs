//! Acceptance checks against the reference city. Prints one PASS/FAIL line
//! per criterion and exits non-zero if any criterion fails.

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use nalgebra::Matrix3;
use rand::Rng;
use rand_distr::StandardNormal;

use radloc::experiment::{run_experiment, ExperimentConfig, MethodKind};
use radloc::geometry::{point_in_polygon, segment_polygon_clip, Building, DomainBounds, DomainGeometry, Point2};
use radloc::global_opt::{GaConfig, GlobalMethod, PsConfig, SaConfig, StoppingCriteria};
use radloc::hybrid::{hybrid_run, HybridConfig, HybridReport, SubdomainSpec};
use radloc::likelihood::{log_factorial_sum, neg_log_objective_from_means, poisson_log_likelihood, FeasibleBox, Vec3};
use radloc::local_opt::{if_run, ols_estimate, IfConfig, NelderMeadConfig};
use radloc::mcmc::{
    covariance, dram_run, dram_sample, dream_run, effective_sample_size, gelman_rubin, geweke, mean, DramConfig,
    DreamConfig,
};
use radloc::reference::{reference_observations, reference_scenario, reference_source};
use radloc::rng::seeded;
use radloc::transport::{detector_response, simulate_observations, Detector, SourceParams};
use radloc::ObjectiveContext;

/// Minimum of the reference objective in scaled units, from a long annealing
/// run refined by implicit filtering.
const J_STAR: f64 = -149653.694;

/// "Near-optimal" level for target-value stopping.
fn target() -> f64 {
    J_STAR + 1e-4 * J_STAR.abs()
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn reference_ctx() -> ObjectiveContext {
    let scn = reference_scenario().unwrap();
    let obs = reference_observations(&scn).unwrap();
    ObjectiveContext::new(scn, obs).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    (a - b).abs() / a.abs().max(b.abs())
}

fn median(v: &[f64]) -> f64 {
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

const SEEDS: std::ops::Range<u64> = 0..10;

// Hand evaluation of the response: S0 dt eps A / (4 pi d^2) exp(-tau).
fn hand_response(s0: f64, d: f64, tau: f64) -> f64 {
    let area = PI * 0.0381 * 0.0381;
    s0 * 1.0 * 0.62 * area / (4.0 * PI * d * d) * (-tau).exp()
}

fn response_exactness() -> Outcome {
    let air = 9.3e-3;
    let bounds = DomainBounds { width: 100.0, height: 100.0 };
    let free = DomainGeometry::free_space(bounds, air).unwrap();
    let square = Building::new(
        vec![
            Point2::new(40.0, 40.0),
            Point2::new(60.0, 40.0),
            Point2::new(60.0, 60.0),
            Point2::new(40.0, 60.0),
        ],
        0.2,
    )
    .unwrap();
    let diamond = Building::new(
        vec![
            Point2::new(50.0, 40.0),
            Point2::new(60.0, 50.0),
            Point2::new(50.0, 60.0),
            Point2::new(40.0, 50.0),
        ],
        0.35,
    )
    .unwrap();
    let boxed = DomainGeometry::new(bounds, vec![square], air).unwrap();
    let tilted = DomainGeometry::new(bounds, vec![diamond], air).unwrap();
    let det = |x: f64, y: f64| Detector::standard(Point2::new(x, y));
    let cases = [
        // Free space, 3-4-5 triangle: d = 50.
        (detector_response(&det(0.0, 0.0), &SourceParams::new(30.0, 40.0, 1e9), &free), hand_response(1e9, 50.0, air * 50.0)),
        (detector_response(&det(5.0, 5.0), &SourceParams::new(5.0, 95.0, 3.2e9), &free), hand_response(3.2e9, 90.0, air * 90.0)),
        // Axis-aligned block: 20 m of 0.2/m, 50 m of air.
        (detector_response(&det(10.0, 50.0), &SourceParams::new(80.0, 50.0, 5e9), &boxed), hand_response(5e9, 70.0, 0.2 * 20.0 + air * 50.0)),
        // Source inside the block at x = 55: 15 m of block, 30 m of air.
        (detector_response(&det(10.0, 50.0), &SourceParams::new(55.0, 50.0, 5e9), &boxed), hand_response(5e9, 45.0, 0.2 * 15.0 + air * 30.0)),
        // Rotated square cut at y = 52: chord from x = 42 to x = 58.
        (detector_response(&det(0.0, 52.0), &SourceParams::new(90.0, 52.0, 2e9), &tilted), hand_response(2e9, 90.0, 0.35 * 16.0 + air * 74.0)),
    ];
    let worst = cases
        .iter()
        .map(|(got, want)| rel(*got.as_ref().unwrap(), *want))
        .fold(0.0, f64::max);
    outcome(worst <= 1e-12, format!("max relative error {worst:.2e} over {} cases (tol 1e-12)", cases.len()))
}

fn geometry_oracle() -> Outcome {
    let mut rng = seeded(2024);
    let n_samples = 100_000;
    let mut worst: f64 = 0.0;
    let mut hits = 0;
    for _ in 0..1000 {
        // Star-shaped polygon with sorted angles, so it is simple.
        let n = rng.random_range(5..12);
        let poly: Vec<Point2> = (0..n)
            .map(|i| {
                let a = 2.0 * PI * (i as f64 + 0.5 * rng.random::<f64>()) / n as f64;
                let r = 20.0 * rng.random_range(0.4..1.0);
                Point2::new(50.0 + r * a.cos(), 50.0 + r * a.sin())
            })
            .collect();
        let b = Building::new(poly.clone(), 0.1).unwrap();
        let a0 = rng.random_range(0.0..2.0 * PI);
        let a1 = a0 + PI + rng.random_range(-0.4..0.4);
        let p0 = Point2::new(50.0 + 30.0 * a0.cos(), 50.0 + 30.0 * a0.sin());
        let p1 = Point2::new(50.0 + 30.0 * a1.cos(), 50.0 + 30.0 * a1.sin());
        let clipped: f64 = segment_polygon_clip(&p0, &p1, &b).unwrap().iter().map(|(t0, t1)| t1 - t0).sum();
        let inside = (0..n_samples)
            .filter(|&i| point_in_polygon(&p0.lerp(&p1, (i as f64 + 0.5) / n_samples as f64), &poly))
            .count();
        let sampled = inside as f64 / n_samples as f64;
        hits += (clipped > 0.0) as usize;
        worst = worst.max(rel(clipped, sampled));
    }
    outcome(
        worst <= 1e-3,
        format!("max relative difference {worst:.2e} over 1000 cases, {hits} crossing (tol 1e-3)"),
    )
}

fn likelihood_identity() -> Outcome {
    let ctx = reference_ctx();
    let scn = ctx.scenario();
    let bx = scn.feasible_box;
    let mut rng = seeded(7);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let draw = SourceParams::from_array(bx.sample(&mut rng));
        let n_rep = rng.random_range(1..15);
        let obs = simulate_observations(scn, &draw, n_rep, &mut rng).unwrap();
        let at = SourceParams::from_array(bx.sample(&mut rng));
        let Ok(means) = scn.mean_counts(&at) else { continue };
        let j = neg_log_objective_from_means(&means, &obs).unwrap();
        let log_l = poisson_log_likelihood(&means, &obs).unwrap();
        let c = log_factorial_sum(&obs);
        let scale = (2.0 * j).abs().max(log_l.abs()).max(c.abs());
        worst = worst.max((2.0 * j + log_l + c).abs() / scale);
    }
    outcome(worst <= 1e-10, format!("max relative residual {worst:.2e} (tol 1e-10)"))
}

fn global_recovery() -> Outcome {
    let ctx = reference_ctx();
    let bx = ctx.scaled_box();
    let truth = reference_source();
    let runs = [
        (GlobalMethod::Sa(SaConfig::default()), 3),
        (GlobalMethod::Ps(PsConfig::default()), 20),
        (GlobalMethod::Ga(GaConfig::default()), 50),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (m, window) in runs {
        let stop = StoppingCriteria::budget(10_000).with_stall(window, 1e-6);
        let mut ok = 0;
        let mut errs = Vec::new();
        for seed in SEEDS {
            let r = m.run(&ctx, &bx, &stop, &mut seeded(seed)).unwrap();
            let th = ctx.to_source(&r.best);
            let e = th.location_error(&truth);
            ok += (e < 1.0 && th.relative_intensity_error(&truth) < 0.05) as usize;
            errs.push(e);
        }
        pass &= ok >= 7;
        parts.push(format!("{} {ok}/10 (median error {:.2} m)", m.name(), median(&errs)));
    }
    outcome(pass, format!("{} (need >= 7/10 each)", parts.join(", ")))
}

fn hybrid_methods() -> [GlobalMethod; 3] {
    [
        GlobalMethod::Sa(SaConfig::many_starts()),
        GlobalMethod::Ps(PsConfig::large_swarm()),
        GlobalMethod::Ga(GaConfig::with_population(70)),
    ]
}

/// Target-stopped hybrid runs over the ten seeds, one vector per method.
fn hybrid_runs(ctx: &ObjectiveContext) -> Vec<Vec<HybridReport>> {
    hybrid_methods()
        .iter()
        .map(|&global| {
            let config = HybridConfig {
                global,
                stopping: StoppingCriteria::budget(20_000).with_target(target()),
                local: IfConfig::default(),
                subdomain: SubdomainSpec::default(),
            };
            SEEDS.map(|s| hybrid_run(ctx, &config, &mut seeded(s)).unwrap()).collect()
        })
        .collect()
}

fn hybrid_accuracy(runs: &[Vec<HybridReport>]) -> Outcome {
    let truth = reference_source();
    let mut pass = true;
    let mut parts = Vec::new();
    for reports in runs {
        let loc: Vec<f64> = reports.iter().map(|r| r.estimate.location_error(&truth)).collect();
        let s0: Vec<f64> = reports.iter().map(|r| r.estimate.relative_intensity_error(&truth)).collect();
        let (ml, ms) = (median(&loc), median(&s0));
        pass &= ml <= 0.5 && ms <= 0.03;
        parts.push(format!("{} {ml:.3} m / {:.2}%", reports[0].method, 100.0 * ms));
    }
    outcome(pass, format!("median errors {} (tol 0.5 m / 3%)", parts.join(", ")))
}

fn hybrid_efficiency(ctx: &ObjectiveContext, runs: &[Vec<HybridReport>]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (method, reports) in hybrid_methods().iter().zip(runs) {
        // The pure method chases the value its hybrid reached; runs that hit
        // the budget are counted at the budget.
        let pure: Vec<f64> = SEEDS
            .zip(reports)
            .map(|(s, r)| {
                let stop = StoppingCriteria::budget(200_000).with_target(r.objective);
                method.run(ctx, &ctx.scaled_box(), &stop, &mut seeded(s)).unwrap().n_evaluations as f64
            })
            .collect();
        let hybrid: Vec<f64> = reports.iter().map(|r| r.total_evaluations as f64).collect();
        let ratio = median(&pure) / median(&hybrid);
        let need = if method.name() == "sa" { 5.0 } else { 1.5 };
        pass &= ratio >= need;
        parts.push(format!(
            "{} {:.0}/{:.0} = {ratio:.1}x (need {need}x)",
            method.name(),
            median(&pure),
            median(&hybrid)
        ));
    }
    outcome(pass, format!("pure/hybrid median evaluations: {}", parts.join(", ")))
}

fn containment(runs: &[Vec<HybridReport>]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for reports in runs {
        let inside = reports.iter().filter(|r| r.truth_in_subdomain == Some(true)).count();
        pass &= inside == reports.len();
        parts.push(format!("{} {inside}/{}", reports[0].method, reports.len()));
    }
    outcome(pass, format!("truth inside the refinement box: {}", parts.join(", ")))
}

fn if_quadratic() -> Outcome {
    let ctx = reference_ctx();
    let bx = ctx.scaled_box();
    let xstar = [131.3, 47.9, 22.2];
    let f = |x: &Vec3| {
        let d = [(x[0] - xstar[0]) / 250.0, (x[1] - xstar[1]) / 180.0, (x[2] - xstar[2]) / 99.0];
        d[0] * d[0] + 2.0 * d[1] * d[1] + 0.5 * d[2] * d[2] + 0.3 * d[0] * d[1]
    };
    let config = IfConfig {
        budget: 100_000,
        ..IfConfig::default()
    };
    // Distances in the unit-cube coordinates the stencil scales refer to.
    let w = bx.width();
    let mut worst: f64 = 0.0;
    let mut worst_param: f64 = 0.0;
    let mut all_scales = true;
    for start in [[10.0, 170.0, 90.0], [240.0, 5.0, 1.5], bx.center()] {
        let out = if_run(&f, &start, &config, &bx).unwrap();
        let d = |scale: &dyn Fn(usize) -> f64| {
            (0..3).map(|i| ((out.result.best[i] - xstar[i]) / scale(i)).powi(2)).sum::<f64>().sqrt()
        };
        worst = worst.max(d(&|i| w[i]));
        worst_param = worst_param.max(d(&|_| 1.0));
        all_scales &= out.steps.iter().any(|s| s.scale == config.h_min);
    }
    outcome(
        worst <= 1e-3 && all_scales,
        format!(
            "max distance to optimum {worst:.2e} in unit-box coordinates ({worst_param:.2e} in parameter units), \
             finest scale reached: {all_scales} (tol 1e-3)"
        ),
    )
}

fn dram_calibration() -> Outcome {
    let mu = [2.0, -1.0, 4.0];
    let cov = Matrix3::new(1.0, 0.6, 0.0, 0.6, 2.0, -0.5, 0.0, -0.5, 0.5);
    let prec = cov.try_inverse().unwrap();
    let target = move |x: &Vec3| {
        let d = nalgebra::Vector3::new(x[0] - mu[0], x[1] - mu[1], x[2] - mu[2]);
        -0.5 * (d.transpose() * prec * d)[(0, 0)]
    };
    let bx = FeasibleBox::new([-20.0; 3], [20.0; 3]).unwrap();
    let chains = dram_sample(&target, &bx, &DramConfig::default(), &[3.0, 0.0, 5.0], &mut seeded(31)).unwrap();
    let kept = chains.pooled();
    let m = mean(&kept);
    let c = covariance(&kept);
    let mut mean_ok = true;
    let mut z_max: f64 = 0.0;
    for k in 0..3 {
        let ess = effective_sample_size(&chains.component(0, k));
        let z = (m[k] - mu[k]).abs() / (cov[(k, k)].sqrt() / ess.sqrt());
        z_max = z_max.max(z);
        mean_ok &= z < 4.0;
    }
    let c_hat = Matrix3::from_fn(|i, j| c[i][j]);
    let frob = (c_hat - cov).norm() / cov.norm();

    let ctx = reference_ctx();
    let x0 = ols_estimate(&ctx, 5.0, &NelderMeadConfig::default()).unwrap();
    let real = dram_run(&ctx, &DramConfig::default(), &ctx.to_source(&x0), &mut seeded(0)).unwrap();
    let pm = mean(&real.pooled());
    let truth = reference_source();
    let (ex, ey, es) = ((pm[0] - truth.x).abs(), (pm[1] - truth.y).abs(), rel(pm[2], truth.s0));
    let ref_ok = ex <= 0.5 && ey <= 0.5 && es <= 0.02;
    outcome(
        mean_ok && frob <= 0.15 && ref_ok,
        format!(
            "gaussian: max |mean error| {z_max:.2} sd/sqrt(ess) (tol 4), covariance {:.1}% (tol 15%); \
             reference: mean ({:.3}, {:.3}, {:.4e}), errors {ex:.3} m, {ey:.3} m, {:.2}%",
            100.0 * frob,
            pm[0],
            pm[1],
            pm[2],
            100.0 * es
        ),
    )
}

fn dream_calibration() -> Outcome {
    let ctx = reference_ctx();
    let chains = dream_run(&ctx, &DreamConfig::default(), &mut seeded(0)).unwrap();
    let r = *chains.r_trace.last().unwrap();
    let m = mean(&chains.tail(0.25));
    let truth = reference_source();
    let (ex, ey, es) = ((m[0] - truth.x).abs(), (m[1] - truth.y).abs(), rel(m[2], truth.s0));
    let pass = r.iter().all(|v| *v < 1.2) && ex <= 0.5 && ey <= 0.5 && es <= 0.02;
    outcome(
        pass,
        format!(
            "final R ({:.3}, {:.3}, {:.3}) (tol 1.2); last-quarter mean ({:.3}, {:.3}, {:.4e}), errors {ex:.3} m, {ey:.3} m, {:.2}%",
            r[0],
            r[1],
            r[2],
            m[0],
            m[1],
            m[2],
            100.0 * es
        ),
    )
}

fn normal_chain(rng: &mut radloc::rng::SimRng, n: usize, shift_from: usize, shift: f64) -> Vec<f64> {
    (0..n)
        .map(|i| rng.sample::<f64, _>(StandardNormal) + if i >= shift_from { shift } else { 0.0 })
        .collect()
}

fn diagnostics_sanity() -> Outcome {
    let n = 2000;
    let mut rng = seeded(99);
    let trials = 200;
    let calm = (0..trials)
        .filter(|_| geweke(&normal_chain(&mut rng, n, n, 0.0), 0.1, 0.5).unwrap().z.abs() < 3.0)
        .count();
    let calm_frac = calm as f64 / trials as f64;
    let shifted_min = (0..20)
        .map(|_| geweke(&normal_chain(&mut rng, n, n / 2, 2.0), 0.1, 0.5).unwrap().z.abs())
        .fold(f64::INFINITY, f64::min);
    let same_max = (0..20)
        .map(|_| {
            let chains: Vec<Vec<f64>> = (0..4).map(|_| normal_chain(&mut rng, n, n, 0.0)).collect();
            gelman_rubin(&chains, 1.0).unwrap().r
        })
        .fold(0.0, f64::max);
    let apart_min = (0..20)
        .map(|_| {
            let chains: Vec<Vec<f64>> = (0..4).map(|c| normal_chain(&mut rng, n, 0, 3.0 * c as f64)).collect();
            gelman_rubin(&chains, 1.0).unwrap().r
        })
        .fold(f64::INFINITY, f64::min);
    let pass = calm_frac >= 0.99 && shifted_min > 10.0 && same_max < 1.05 && apart_min > 1.2;
    outcome(
        pass,
        format!(
            "geweke |z|<3 on {:.1}% of iid chains, min |z| {shifted_min:.1} on shifted; \
             R max {same_max:.4} same, min {apart_min:.2} separated",
            100.0 * calm_frac
        ),
    )
}

fn results_without_wall_time(dir: &std::path::Path) -> String {
    let text = std::fs::read_to_string(dir.join("results.csv")).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    let col = header.split(',').position(|h| h == "wall_time_s").unwrap();
    let mut out = vec![header.to_string()];
    for l in lines {
        let mut cells: Vec<&str> = l.split(',').collect();
        cells[col] = "";
        out.push(cells.join(","));
    }
    out.join("\n")
}

fn determinism() -> Outcome {
    let ctx = reference_ctx();
    let mut same = true;
    let mut checked = Vec::new();
    for method in [MethodKind::SaIf, MethodKind::PsIf, MethodKind::GaIf, MethodKind::Dram, MethodKind::Dream] {
        let mut config = ExperimentConfig::new(method, SEEDS.take(3).collect());
        config.stopping = StoppingCriteria::budget(5000);
        config.dream = (method == MethodKind::Dream).then(|| DreamConfig {
            n_iterations: 1000,
            ..DreamConfig::default()
        });
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        for d in &dirs {
            run_experiment(&ctx, &config, Some(d.path())).unwrap();
        }
        same &= results_without_wall_time(dirs[0].path()) == results_without_wall_time(dirs[1].path());
        checked.push(method.name());
    }
    outcome(same, format!("results.csv identical across repeated runs for {}", checked.join(", ")))
}

fn main() {
    let mut failed = 0;
    let mut report = |id: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let t0 = Instant::now();
        let o = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        failed += (!o.pass) as usize;
        println!(
            "{} [{id:>2}] {name}: {} ({:.1} s)",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t0.elapsed().as_secs_f64()
        );
    };
    report(1, "response model", &mut response_exactness);
    report(2, "geometry oracle", &mut geometry_oracle);
    report(3, "likelihood identity", &mut likelihood_identity);
    report(4, "global recovery", &mut global_recovery);
    let ctx = reference_ctx();
    let mut runs = None;
    report(5, "hybrid accuracy", &mut || {
        let r = runs.insert(hybrid_runs(&ctx));
        hybrid_accuracy(r)
    });
    let runs = runs.unwrap_or_default();
    report(6, "hybrid efficiency", &mut || hybrid_efficiency(&ctx, &runs));
    report(7, "subdomain containment", &mut || containment(&runs));
    report(8, "implicit filtering on a quadratic", &mut if_quadratic);
    report(9, "DRAM calibration", &mut dram_calibration);
    report(10, "DREAM calibration", &mut dream_calibration);
    report(11, "diagnostics sanity", &mut diagnostics_sanity);
    report(12, "determinism", &mut determinism);
    println!("{} of 12 criteria passed", 12 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
