//! Seeded batches of estimation runs and their tabular outputs.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::global_opt::{GaConfig, GlobalMethod, OptResult, PsConfig, SaConfig, StoppingCriteria, TraceRow};
use crate::hybrid::{hybrid_run, HybridConfig, SubdomainSpec};
use crate::likelihood::{ObjectiveContext, Vec3};
use crate::local_opt::{ols_estimate, IfConfig, NelderMeadConfig};
use crate::mcmc::{dram_run, dream_run, mean, ChainSet, DramConfig, DreamConfig};
use crate::rng::seeded;
use crate::transport::SourceParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MethodKind {
    #[serde(rename = "sa")]
    Sa,
    #[serde(rename = "ps")]
    Ps,
    #[serde(rename = "ga")]
    Ga,
    #[serde(rename = "sa+if")]
    SaIf,
    #[serde(rename = "ps+if")]
    PsIf,
    #[serde(rename = "ga+if")]
    GaIf,
    #[serde(rename = "dram")]
    Dram,
    #[serde(rename = "dream")]
    Dream,
    #[serde(rename = "nelder-mead")]
    NelderMead,
}

impl MethodKind {
    pub const ALL: [MethodKind; 9] = [
        MethodKind::Sa,
        MethodKind::Ps,
        MethodKind::Ga,
        MethodKind::SaIf,
        MethodKind::PsIf,
        MethodKind::GaIf,
        MethodKind::Dram,
        MethodKind::Dream,
        MethodKind::NelderMead,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            MethodKind::Sa => "sa",
            MethodKind::Ps => "ps",
            MethodKind::Ga => "ga",
            MethodKind::SaIf => "sa+if",
            MethodKind::PsIf => "ps+if",
            MethodKind::GaIf => "ga+if",
            MethodKind::Dram => "dram",
            MethodKind::Dream => "dream",
            MethodKind::NelderMead => "nelder-mead",
        }
    }

    fn base(&self) -> Option<char> {
        match self {
            MethodKind::Sa | MethodKind::SaIf => Some('s'),
            MethodKind::Ps | MethodKind::PsIf => Some('p'),
            MethodKind::Ga | MethodKind::GaIf => Some('g'),
            _ => None,
        }
    }

    fn is_hybrid(&self) -> bool {
        matches!(self, MethodKind::SaIf | MethodKind::PsIf | MethodKind::GaIf)
    }
}

impl FromStr for MethodKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        MethodKind::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method '{s}'")))
    }
}

impl std::fmt::Display for MethodKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn default_stopping() -> StoppingCriteria {
    StoppingCriteria::budget(10_000)
}

fn default_grid() -> f64 {
    5.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: MethodKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sa: Option<SaConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ps: Option<PsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ga: Option<GaConfig>,
    #[serde(default = "default_stopping")]
    pub stopping: StoppingCriteria,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub implicit_filtering: Option<IfConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subdomain: Option<SubdomainSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nelder_mead: Option<NelderMeadConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dram: Option<DramConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dream: Option<DreamConfig>,
    #[serde(default = "default_grid")]
    pub ols_grid_spacing_m: f64,
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(method: MethodKind, seeds: Vec<u64>) -> Self {
        Self {
            method,
            sa: None,
            ps: None,
            ga: None,
            stopping: default_stopping(),
            implicit_filtering: None,
            subdomain: None,
            nelder_mead: None,
            dram: None,
            dream: None,
            ols_grid_spacing_m: default_grid(),
            seeds,
            output_dir: None,
        }
    }

    /// Checks the seed list and that only blocks used by `method` are present.
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("experiment needs at least one seed".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        if !(self.ols_grid_spacing_m > 0.0) {
            return Err(Error::Config("ols_grid_spacing_m must be positive".into()));
        }
        let m = self.method;
        let blocks = [
            ("sa", self.sa.is_some(), m.base() == Some('s')),
            ("ps", self.ps.is_some(), m.base() == Some('p')),
            ("ga", self.ga.is_some(), m.base() == Some('g')),
            ("implicit_filtering", self.implicit_filtering.is_some(), m.is_hybrid()),
            ("subdomain", self.subdomain.is_some(), m.is_hybrid()),
            ("nelder_mead", self.nelder_mead.is_some(), matches!(m, MethodKind::NelderMead | MethodKind::Dram)),
            ("dram", self.dram.is_some(), m == MethodKind::Dram),
            ("dream", self.dream.is_some(), m == MethodKind::Dream),
        ];
        for (name, present, allowed) in blocks {
            if present && !allowed {
                return Err(Error::Config(format!("'{name}' settings do not apply to method {m}")));
            }
        }
        self.stopping.validate()?;
        if let Some(g) = self.global() {
            g.validate()?;
        }
        if let Some(c) = &self.implicit_filtering {
            c.validate()?;
        }
        if let Some(c) = &self.subdomain {
            c.validate()?;
        }
        if let Some(c) = &self.dram {
            c.validate()?;
        }
        if let Some(c) = &self.dream {
            c.validate()?;
        }
        Ok(())
    }

    pub fn global(&self) -> Option<GlobalMethod> {
        match self.method.base()? {
            's' => Some(GlobalMethod::Sa(self.sa.unwrap_or_default())),
            'p' => Some(GlobalMethod::Ps(self.ps.unwrap_or_default())),
            _ => Some(GlobalMethod::Ga(self.ga.unwrap_or_default())),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// One row of a results table. Summary rows carry `median` or `mean` in the
/// seed column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scenario: String,
    pub method: String,
    pub seed: String,
    pub x_m: f64,
    pub y_m: f64,
    pub s0_bq: f64,
    pub error_x_m: Option<f64>,
    pub error_y_m: Option<f64>,
    pub location_error_m: Option<f64>,
    pub rel_error_s0: Option<f64>,
    pub objective: f64,
    pub n_evaluations: f64,
    pub wall_time_s: f64,
}

/// Everything one seed produced besides its table row.
#[derive(Debug, Clone)]
pub enum RunArtifacts {
    Optimizer { trace: Vec<TraceRow> },
    Chains(Box<ChainSet>),
    None,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub row: ResultRow,
    pub artifacts: RunArtifacts,
}

fn row_for(ctx: &ObjectiveContext, method: MethodKind, seed: u64, est: &SourceParams, objective: f64, evals: u64, secs: f64) -> ResultRow {
    let truth = ctx.scenario().true_source;
    ResultRow {
        scenario: ctx.scenario().name.clone(),
        method: method.name().into(),
        seed: seed.to_string(),
        x_m: est.x,
        y_m: est.y,
        s0_bq: est.s0,
        error_x_m: truth.map(|t| (est.x - t.x).abs()),
        error_y_m: truth.map(|t| (est.y - t.y).abs()),
        location_error_m: truth.map(|t| est.location_error(&t)),
        rel_error_s0: truth.map(|t| est.relative_intensity_error(&t)),
        objective,
        n_evaluations: evals as f64,
        wall_time_s: secs,
    }
}

fn global_trace(r: &OptResult) -> RunArtifacts {
    RunArtifacts::Optimizer { trace: r.trace.clone() }
}

/// One seed of an experiment.
pub fn run_one(ctx: &ObjectiveContext, config: &ExperimentConfig, seed: u64) -> Result<RunOutput> {
    let mut rng = seeded(seed);
    ctx.reset_evaluations();
    let start = Instant::now();
    let m = config.method;
    let (est, objective, artifacts) = match m {
        MethodKind::Sa | MethodKind::Ps | MethodKind::Ga => {
            let g = config.global().expect("global method");
            let r = g.run(ctx, &ctx.scaled_box(), &config.stopping, &mut rng)?;
            (ctx.to_source(&r.best), r.best_objective, global_trace(&r))
        }
        MethodKind::SaIf | MethodKind::PsIf | MethodKind::GaIf => {
            let h = HybridConfig {
                global: config.global().expect("global method"),
                stopping: config.stopping,
                local: config.implicit_filtering.unwrap_or_default(),
                subdomain: config.subdomain.unwrap_or_default(),
            };
            let r = hybrid_run(ctx, &h, &mut rng)?;
            let mut trace = r.global.trace.clone();
            trace.extend(r.local.trace.iter().cloned());
            (r.estimate, r.objective, RunArtifacts::Optimizer { trace })
        }
        MethodKind::NelderMead => {
            let x = ols_estimate(ctx, config.ols_grid_spacing_m, &config.nelder_mead.unwrap_or_default())?;
            (ctx.to_source(&x), ctx.ols_objective(&x), RunArtifacts::None)
        }
        MethodKind::Dram => {
            let x0 = ols_estimate(ctx, config.ols_grid_spacing_m, &config.nelder_mead.unwrap_or_default())?;
            let chains = dram_run(ctx, &config.dram.unwrap_or_default(), &ctx.to_source(&x0), &mut rng)?;
            let est = SourceParams::from_array(mean(&chains.pooled()));
            let j = ctx.neg_log_objective(&ctx.to_scaled(&est));
            (est, j, RunArtifacts::Chains(Box::new(chains)))
        }
        MethodKind::Dream => {
            let chains = dream_run(ctx, &config.dream.unwrap_or_default(), &mut rng)?;
            let est = SourceParams::from_array(mean(&chains.tail(0.25)));
            let j = ctx.neg_log_objective(&ctx.to_scaled(&est));
            (est, j, RunArtifacts::Chains(Box::new(chains)))
        }
    };
    let evals = ctx.evaluations();
    let secs = start.elapsed().as_secs_f64();
    Ok(RunOutput {
        row: row_for(ctx, m, seed, &est, objective, evals, secs),
        artifacts,
    })
}

/// Runs every seed and, when `out_dir` is given, writes the results table and
/// per-seed artifacts there.
pub fn run_experiment(ctx: &ObjectiveContext, config: &ExperimentConfig, out_dir: Option<&Path>) -> Result<Vec<ResultRow>> {
    config.validate()?;
    if let Some(d) = out_dir {
        fs::create_dir_all(d)?;
    }
    let mut rows = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let out = run_one(ctx, config, seed)?;
        log::info!(
            "{} seed {seed}: ({:.3}, {:.3}, {:.4e}) after {} evaluations",
            config.method,
            out.row.x_m,
            out.row.y_m,
            out.row.s0_bq,
            out.row.n_evaluations
        );
        if let Some(d) = out_dir {
            write_artifacts(d, config.method, seed, &out.artifacts)?;
        }
        rows.push(out.row);
    }
    if let Some(d) = out_dir {
        write_results(&rows, fs::File::create(d.join("results.csv"))?)?;
    }
    Ok(rows)
}

fn file_tag(method: MethodKind) -> String {
    method.name().replace('+', "_")
}

fn write_artifacts(dir: &Path, method: MethodKind, seed: u64, art: &RunArtifacts) -> Result<()> {
    let tag = file_tag(method);
    match art {
        RunArtifacts::Optimizer { trace } => {
            write_trace(trace, fs::File::create(dir.join(format!("trace_{tag}_{seed}.csv")))?)?;
        }
        RunArtifacts::Chains(chains) => {
            chains.write_csv(fs::File::create(dir.join(format!("chains_{tag}_{seed}.csv")))?)?;
            write_histograms(&histograms(&chains.pooled(), 50), fs::File::create(dir.join(format!("histogram_{tag}_{seed}.csv")))?)?;
            if !chains.r_trace.is_empty() {
                let mut w = csv::Writer::from_writer(fs::File::create(dir.join(format!("rhat_{tag}_{seed}.csv")))?);
                w.write_record(["iteration", "r_x", "r_y", "r_s0"]).map_err(csv_err)?;
                for (i, r) in chains.r_trace.iter().enumerate() {
                    w.serialize((i, r[0], r[1], r[2])).map_err(csv_err)?;
                }
                w.flush()?;
            }
        }
        RunArtifacts::None => {}
    }
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

pub fn write_trace<W: Write>(trace: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "iteration", "evaluations", "best", "mean", "x_min", "x_max", "y_min", "y_max", "s_min", "s_max",
    ])
    .map_err(csv_err)?;
    for t in trace {
        w.serialize((
            t.iteration, t.evaluations, t.best, t.mean, t.lower[0], t.upper[0], t.lower[1], t.upper[1], t.lower[2], t.upper[2],
        ))
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median and mean rows over per-seed rows of one method.
pub fn summary_rows(rows: &[ResultRow]) -> Vec<ResultRow> {
    let Some(first) = rows.first() else {
        return Vec::new();
    };
    let col = |f: &dyn Fn(&ResultRow) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
    let opt = |f: &dyn Fn(&ResultRow) -> Option<f64>| -> Option<Vec<f64>> { rows.iter().map(f).collect() };
    let stat = |label: &str, agg: &dyn Fn(&mut Vec<f64>) -> f64| ResultRow {
        scenario: first.scenario.clone(),
        method: first.method.clone(),
        seed: label.into(),
        x_m: agg(&mut col(&|r| r.x_m)),
        y_m: agg(&mut col(&|r| r.y_m)),
        s0_bq: agg(&mut col(&|r| r.s0_bq)),
        error_x_m: opt(&|r| r.error_x_m).map(|mut v| agg(&mut v)),
        error_y_m: opt(&|r| r.error_y_m).map(|mut v| agg(&mut v)),
        location_error_m: opt(&|r| r.location_error_m).map(|mut v| agg(&mut v)),
        rel_error_s0: opt(&|r| r.rel_error_s0).map(|mut v| agg(&mut v)),
        objective: agg(&mut col(&|r| r.objective)),
        n_evaluations: agg(&mut col(&|r| r.n_evaluations)),
        wall_time_s: agg(&mut col(&|r| r.wall_time_s)),
    };
    vec![
        stat("median", &|v| median(v)),
        stat("mean", &|v| v.iter().sum::<f64>() / v.len() as f64),
    ]
}

/// Per-seed rows followed by the median and mean rows.
pub fn write_results<W: Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows.iter().chain(summary_rows(rows).iter()) {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub parameter: String,
    pub lower: f64,
    pub upper: f64,
    pub count: u64,
}

/// Equal-width histograms of each coordinate over its sample range.
pub fn histograms(samples: &[Vec3], bins: usize) -> Vec<HistogramBin> {
    let names = ["x", "y", "s0"];
    let mut out = Vec::with_capacity(3 * bins);
    if samples.is_empty() || bins == 0 {
        return out;
    }
    for (k, name) in names.iter().enumerate() {
        let lo = samples.iter().map(|x| x[k]).fold(f64::INFINITY, f64::min);
        let hi = samples.iter().map(|x| x[k]).fold(f64::NEG_INFINITY, f64::max);
        let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
        let mut counts = vec![0u64; bins];
        for x in samples {
            let b = (((x[k] - lo) / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
        for (b, c) in counts.into_iter().enumerate() {
            out.push(HistogramBin {
                parameter: (*name).into(),
                lower: lo + b as f64 * width,
                upper: lo + (b + 1) as f64 * width,
                count: c,
            });
        }
    }
    out
}

pub fn write_histograms<W: Write>(bins: &[HistogramBin], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for b in bins {
        w.serialize(b).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Method-level comparison row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    pub runs: usize,
    pub median_evaluations: f64,
    pub mean_evaluations: f64,
    pub median_location_error_m: Option<f64>,
    pub median_rel_error_s0: Option<f64>,
}

/// Merges per-seed rows from several experiments into one row per method.
pub fn compare(rows: &[ResultRow]) -> Result<Vec<ComparisonRow>> {
    let per_seed: Vec<&ResultRow> = rows.iter().filter(|r| r.seed != "median" && r.seed != "mean").collect();
    if per_seed.is_empty() {
        return Err(Error::InvalidInput("no result rows to compare".into()));
    }
    let scenario = &per_seed[0].scenario;
    if let Some(r) = per_seed.iter().find(|r| &r.scenario != scenario) {
        return Err(Error::InvalidInput(format!(
            "results mix scenarios '{scenario}' and '{}'; compare runs on one scenario at a time",
            r.scenario
        )));
    }
    let mut methods: Vec<&str> = Vec::new();
    for r in &per_seed {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    Ok(methods
        .into_iter()
        .map(|m| {
            let rs: Vec<ResultRow> = per_seed.iter().filter(|r| r.method == m).map(|r| (*r).clone()).collect();
            let s = summary_rows(&rs);
            ComparisonRow {
                method: m.into(),
                runs: rs.len(),
                median_evaluations: s[0].n_evaluations,
                mean_evaluations: s[1].n_evaluations,
                median_location_error_m: s[0].location_error_m,
                median_rel_error_s0: s[0].rel_error_s0,
            }
        })
        .collect())
}

/// Reads `results.csv` from each experiment directory and writes the
/// comparison table plus merged trace and histogram series into `out_dir`.
pub fn report(inputs: &[PathBuf], out_dir: &Path) -> Result<Vec<ComparisonRow>> {
    if inputs.is_empty() {
        return Err(Error::InvalidInput("report needs at least one experiment directory".into()));
    }
    let mut rows = Vec::new();
    for d in inputs {
        rows.extend(read_results(d.join("results.csv"))?);
    }
    let table = compare(&rows)?;
    fs::create_dir_all(out_dir)?;
    let mut w = csv::Writer::from_path(out_dir.join("comparison.csv")).map_err(csv_err)?;
    for r in &table {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;

    let mut traces = csv::Writer::from_path(out_dir.join("traces.csv")).map_err(csv_err)?;
    traces
        .write_record(["source", "iteration", "evaluations", "best", "mean", "x_min", "x_max", "y_min", "y_max", "s_min", "s_max"])
        .map_err(csv_err)?;
    let mut hist = csv::Writer::from_path(out_dir.join("histograms.csv")).map_err(csv_err)?;
    hist.write_record(["source", "parameter", "lower", "upper", "count"]).map_err(csv_err)?;
    for d in inputs {
        let mut entries: Vec<PathBuf> = fs::read_dir(d)?.filter_map(|e| e.ok().map(|e| e.path())).collect();
        entries.sort();
        for p in entries {
            let name = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            let target = if name.starts_with("trace_") {
                &mut traces
            } else if name.starts_with("histogram_") {
                &mut hist
            } else {
                continue;
            };
            let mut r = csv::Reader::from_path(&p).map_err(csv_err)?;
            for rec in r.records() {
                let rec = rec.map_err(csv_err)?;
                let mut fields = vec![name.as_str()];
                fields.extend(rec.iter());
                target.write_record(&fields).map_err(csv_err)?;
            }
        }
    }
    traces.flush()?;
    hist.flush()?;
    Ok(table)
}
