use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use radloc::city::{generate_city, CitySpec};
use radloc::experiment::{report, run_experiment, ExperimentConfig, MethodKind};
use radloc::geometry::Point2;
use radloc::mcmc::{ChainSet, DiagnosticsReport};
use radloc::reference::{reference_scenario, OBSERVATION_STREAM, REFERENCE_REPLICATES};
use radloc::rng::substream;
use radloc::scenario::{load_observations, load_scenario, save_observations, save_scenario, ObservationFile};
use radloc::transport::{simulate_observations, SourceParams};
use radloc::ObjectiveContext;

/// Exit code for bad arguments, files or settings.
const EXIT_CONFIG: u8 = 2;
/// Exit code for failures while a computation runs.
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "radloc", version, about = "Locate a point gamma source from detector counts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic city scenario.
    Generate(GenerateArgs),
    /// Draw Poisson counts for a scenario.
    Simulate(SimulateArgs),
    /// Run an optimizer or hybrid over a list of seeds.
    Optimize(RunArgs),
    /// Run DRAM or DREAM over a list of seeds.
    Sample(RunArgs),
    /// Convergence diagnostics for a chain file.
    Diagnose(DiagnoseArgs),
    /// Merge experiment outputs into comparison tables.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Write the built-in reference city instead of a random one.
    #[arg(long)]
    reference: bool,
    #[arg(long, default_value_t = 250.0)]
    width: f64,
    #[arg(long, default_value_t = 180.0)]
    height: f64,
    #[arg(long, default_value_t = 12)]
    buildings: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// True source as `x,y,s0`; its position is kept free of buildings.
    #[arg(long, value_parser = parse_source)]
    source: Option<SourceParams>,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Source as `x,y,s0`; defaults to the scenario's true source.
    #[arg(long, value_parser = parse_source)]
    source: Option<SourceParams>,
    #[arg(long, default_value_t = REFERENCE_REPLICATES)]
    replicates: usize,
    /// Defaults to the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = OBSERVATION_STREAM)]
    stream: u64,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    observations: PathBuf,
    /// Experiment document; the flags below override its fields.
    #[arg(long)]
    experiment: Option<PathBuf>,
    #[arg(long)]
    method: Option<MethodKind>,
    /// Seeds as a comma list or a half-open range `a..b`.
    #[arg(long, value_parser = parse_seeds)]
    seeds: Option<Seeds>,
    #[arg(long)]
    max_evaluations: Option<u64>,
    #[arg(long, allow_hyphen_values = true)]
    target: Option<f64>,
    #[arg(long)]
    stall_window: Option<usize>,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long)]
    chains: PathBuf,
    /// Leading iterations of each chain to discard.
    #[arg(long, default_value_t = 0)]
    burn_in: usize,
}

#[derive(Args)]
struct ReportArgs {
    /// Experiment output directories.
    inputs: Vec<PathBuf>,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Clone, Debug)]
struct Seeds(Vec<u64>);

fn parse_source(s: &str) -> Result<SourceParams, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("'{p}': {e}")))
        .collect::<Result<_, _>>()?;
    match v.as_slice() {
        [x, y, s0] => Ok(SourceParams::new(*x, *y, *s0)),
        _ => Err("expected x,y,s0".into()),
    }
}

fn parse_seeds(s: &str) -> Result<Seeds, String> {
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.parse().map_err(|e| format!("{e}"))?;
        let b: u64 = b.parse().map_err(|e| format!("{e}"))?;
        if b <= a {
            return Err(format!("empty seed range {s}"));
        }
        return Ok(Seeds((a..b).collect()));
    }
    s.split(',')
        .map(|p| p.trim().parse::<u64>().map_err(|e| format!("'{p}': {e}")))
        .collect::<Result<_, _>>()
        .map(Seeds)
}

/// Error tagged with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn config<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        error: e.into(),
    }
}

fn runtime<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure {
        code: EXIT_RUNTIME,
        error: e.into(),
    }
}

fn write_json<T: serde::Serialize>(value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(runtime)?;
    println!("{text}");
    Ok(())
}

fn generate(a: GenerateArgs) -> Result<(), Failure> {
    let scn = if a.reference {
        reference_scenario().map_err(runtime)?
    } else {
        let mut spec = CitySpec::new(a.width, a.height, a.buildings, a.seed);
        if let Some(s) = a.source {
            spec.keep_clear.push(Point2::new(s.x, s.y));
            spec.true_source = Some(s);
        }
        generate_city(&spec).map_err(runtime)?
    };
    save_scenario(&scn, &a.out)
        .with_context(|| format!("writing {}", a.out.display()))
        .map_err(runtime)
}

fn simulate(a: SimulateArgs) -> Result<(), Failure> {
    let scn = load_scenario(&a.scenario)
        .with_context(|| format!("reading {}", a.scenario.display()))
        .map_err(config)?;
    let source = a
        .source
        .or(scn.true_source)
        .ok_or_else(|| config(anyhow!("scenario has no true source; pass --source")))?;
    let seed = a.seed.unwrap_or(scn.seed);
    let obs = simulate_observations(&scn, &source, a.replicates, &mut substream(seed, a.stream)).map_err(runtime)?;
    save_observations(&ObservationFile::new(&scn.name, seed, &obs), &a.out)
        .with_context(|| format!("writing {}", a.out.display()))
        .map_err(runtime)
}

fn load_context(scenario: &Path, observations: &Path) -> Result<ObjectiveContext, Failure> {
    let scn = load_scenario(scenario)
        .with_context(|| format!("reading {}", scenario.display()))
        .map_err(config)?;
    let file = load_observations(observations)
        .with_context(|| format!("reading {}", observations.display()))
        .map_err(config)?;
    if file.scenario != scn.name {
        return Err(config(anyhow!(
            "observations belong to scenario '{}', not '{}'",
            file.scenario,
            scn.name
        )));
    }
    let obs = file.to_observations().map_err(config)?;
    ObjectiveContext::new(scn, obs).map_err(config)
}

fn run(a: RunArgs, sampling: bool) -> Result<(), Failure> {
    let mut exp = match &a.experiment {
        Some(p) => ExperimentConfig::load(p)
            .with_context(|| format!("reading {}", p.display()))
            .map_err(config)?,
        None => {
            let method = a
                .method
                .ok_or_else(|| config(anyhow!("pass --method or --experiment")))?;
            ExperimentConfig::new(method, vec![0])
        }
    };
    if let Some(m) = a.method {
        exp.method = m;
    }
    if let Some(Seeds(s)) = a.seeds {
        exp.seeds = s;
    }
    if let Some(n) = a.max_evaluations {
        exp.stopping.max_evaluations = n;
    }
    if let Some(t) = a.target {
        exp.stopping.target_objective = Some(t);
    }
    if let Some(w) = a.stall_window {
        exp.stopping.stall_window = Some(w);
    }
    if let Some(o) = a.out {
        exp.output_dir = Some(o);
    }
    let is_sampler = matches!(exp.method, MethodKind::Dram | MethodKind::Dream);
    if sampling != is_sampler {
        let verb = if sampling { "sample" } else { "optimize" };
        return Err(config(anyhow!("method {} cannot be run with '{verb}'", exp.method)));
    }
    exp.validate().map_err(config)?;
    let ctx = load_context(&a.scenario, &a.observations)?;
    let rows = run_experiment(&ctx, &exp, exp.output_dir.as_deref()).map_err(runtime)?;
    if exp.output_dir.is_none() {
        radloc::experiment::write_results(&rows, std::io::stdout()).map_err(runtime)?;
    }
    Ok(())
}

fn diagnose(a: DiagnoseArgs) -> Result<(), Failure> {
    let file = fs::File::open(&a.chains)
        .with_context(|| format!("reading {}", a.chains.display()))
        .map_err(config)?;
    let chains = ChainSet::read_csv(file, a.burn_in).map_err(config)?;
    let report = DiagnosticsReport::from_chains(&chains).map_err(runtime)?;
    write_json(&report)
}

fn report_cmd(a: ReportArgs) -> Result<(), Failure> {
    if a.inputs.is_empty() {
        return Err(config(anyhow!("report needs at least one experiment directory")));
    }
    let table = report(&a.inputs, &a.out).map_err(|e| match e {
        radloc::Error::InvalidInput(_) | radloc::Error::Io(_) => config(e),
        other => runtime(other),
    })?;
    write_json(&table)
}

fn init_threads() -> Result<(), Failure> {
    if let Ok(v) = std::env::var("RADLOC_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| config(anyhow!("RADLOC_THREADS must be a positive integer, got '{v}'")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(runtime)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = init_threads().and_then(|_| match cli.command {
        Command::Generate(a) => generate(a),
        Command::Simulate(a) => simulate(a),
        Command::Optimize(a) => run(a, false),
        Command::Sample(a) => run(a, true),
        Command::Diagnose(a) => diagnose(a),
        Command::Report(a) => report_cmd(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_lists_and_ranges() {
        assert_eq!(parse_seeds("0..3").unwrap().0, vec![0, 1, 2]);
        assert_eq!(parse_seeds("4, 7").unwrap().0, vec![4, 7]);
        assert!(parse_seeds("3..3").is_err());
        assert!(parse_seeds("a").is_err());
    }

    #[test]
    fn source_triplet() {
        let s = parse_source("158,98,3.219e9").unwrap();
        assert_eq!((s.x, s.y, s.s0), (158.0, 98.0, 3.219e9));
        assert!(parse_source("1,2").is_err());
    }
}
