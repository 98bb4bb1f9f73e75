//! Experiment runner: loads and validates a configuration, runs one pipeline
//! inside a worker pool of the requested size, and writes a run directory
//! whose `manifest.json` is written last.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure.

pub mod output;

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use neurofield::config::{apply_override, Config};
use neurofield::diagnostics::{chaos_sweep, convergence_sweep, identity_suite, IdentitySizes, ProbeSet, SweepReport};
use neurofield::io::{read_ensemble_binary, read_ensemble_csv, write_ensemble_binary, write_ensemble_csv};
use neurofield::measure::{field_stats, wasserstein2, Method};
use neurofield::meanfield::{picard_solve, PicardOptions};
use neurofield::network::{simulate_realization, Ensemble, TimeGrid};
use neurofield::{build_model, rng, ModelParams};

use output::{RunDir, RunManifest, Stage};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Runtime(format!("{}: {e}", path.display()))
    }
}

impl From<neurofield::Error> for CliError {
    fn from(e: neurofield::Error) -> Self {
        if e.is_config() {
            CliError::Config(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepKind {
    Convergence,
    Chaos,
    Both,
}

impl SweepKind {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        match s {
            "convergence" => Ok(SweepKind::Convergence),
            "chaos" => Ok(SweepKind::Chaos),
            "both" => Ok(SweepKind::Both),
            other => Err(CliError::Config(format!("unknown sweep kind `{other}` (convergence, chaos or both)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Command {
    Simulate,
    Meanfield,
    Compare { inputs: Vec<PathBuf> },
    Sweep { kind: Option<String> },
    Check,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Meanfield => "meanfield",
            Command::Compare { .. } => "compare",
            Command::Sweep { .. } => "sweep",
            Command::Check => "check",
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunArgs {
    pub command: Command,
    pub config: Option<PathBuf>,
    pub overrides: Vec<String>,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

/// Validated inputs of a run.
pub struct Prepared {
    pub config: Config,
    pub snapshot: serde_json::Value,
    pub config_hash: String,
    pub params: ModelParams,
    pub grid: TimeGrid,
}

/// Read the configuration, apply overrides and the seed flag, and validate.
pub fn prepare(args: &RunArgs) -> Result<Prepared, CliError> {
    let mut doc = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        None => serde_json::json!({}),
    };
    for o in &args.overrides {
        apply_override(&mut doc, o)?;
    }
    if let Some(seed) = args.seed {
        apply_override(&mut doc, &format!("run.seed={seed}"))?;
    }
    let config = Config::from_value(doc)?;
    let params = build_model(&config)?;
    let grid = TimeGrid::for_model(&params, config.grid.dt)?;
    let snapshot = serde_json::to_value(&config).map_err(|e| CliError::Runtime(e.to_string()))?;
    let canonical = serde_json::to_string(&config).map_err(|e| CliError::Runtime(e.to_string()))?;
    let config_hash = output::hex_digest(canonical.as_bytes());
    Ok(Prepared { config, snapshot, config_hash, params, grid })
}

/// Run one subcommand end to end. Nothing is written unless the
/// configuration validates.
pub fn run(args: &RunArgs) -> Result<RunManifest, CliError> {
    let prepared = prepare(args)?;
    let inputs = match &args.command {
        Command::Compare { inputs } => {
            if inputs.len() != 2 {
                return Err(CliError::Config(format!("compare needs exactly two --input ensembles, got {}", inputs.len())));
            }
            Some([load_ensemble(&inputs[0])?, load_ensemble(&inputs[1])?])
        }
        _ => None,
    };
    let kind = match &args.command {
        Command::Sweep { kind } => Some(SweepKind::parse(kind.as_deref().unwrap_or(&prepared.config.run.sweep))?),
        _ => None,
    };

    let threads = args.threads.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Config(format!("cannot build worker pool: {e}")))?;
    let threads = pool.current_num_threads();

    let mut dir = RunDir::new(&args.out);
    let mut stages = Vec::new();
    let status = pool.install(|| match &args.command {
        Command::Simulate => simulate(&prepared, &mut dir, &mut stages),
        Command::Meanfield => meanfield(&prepared, &mut dir, &mut stages),
        Command::Compare { .. } => compare(&prepared, inputs.as_ref().expect("inputs"), &mut dir, &mut stages),
        Command::Sweep { .. } => sweep(&prepared, kind.expect("kind"), &mut dir, &mut stages),
        Command::Check => check(&prepared, &mut dir, &mut stages),
    });

    let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let manifest = RunManifest {
        run_id: format!("{stamp}-{}", &prepared.config_hash[..12]),
        command: args.command.name().to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        master_seed: prepared.config.run.seed,
        threads,
        config_hash: prepared.config_hash.clone(),
        config: prepared.snapshot.clone(),
        stages,
        files: dir.inventory()?,
    };
    if status.is_ok() || matches!(status, Err(CliError::Runtime(_))) {
        dir.write_json("manifest.json", &manifest)?;
    }
    status.map(|_| manifest)
}

fn load_ensemble(path: &Path) -> Result<Ensemble, CliError> {
    let file = File::open(path).map_err(|e| CliError::Config(format!("missing input ensemble {}: {e}", path.display())))?;
    let reader = BufReader::new(file);
    let ens = if path.extension().is_some_and(|e| e == "bin") {
        read_ensemble_binary(reader)?
    } else {
        read_ensemble_csv(reader)?
    };
    Ok(ens)
}

fn timed<T>(stages: &mut Vec<Stage>, name: &str, f: impl FnOnce() -> Result<T, CliError>) -> Result<T, CliError> {
    let start = Instant::now();
    let out = f();
    stages.push(Stage { name: name.to_string(), seconds: start.elapsed().as_secs_f64() });
    out
}

fn write_ensemble(p: &Prepared, dir: &mut RunDir, stem: &str, ens: &Ensemble) -> Result<(), CliError> {
    dir.write_with(&format!("{stem}.csv"), |w| Ok(write_ensemble_csv(w, ens)?))?;
    if p.config.run.binary_output {
        dir.write_with(&format!("{stem}.bin"), |w| Ok(write_ensemble_binary(w, ens)?))?;
    }
    Ok(())
}

fn simulate(p: &Prepared, dir: &mut RunDir, stages: &mut Vec<Stage>) -> Result<(), CliError> {
    let seed = rng::derive(p.config.run.seed, &[rng::NETWORK]);
    let start = Instant::now();
    let ens = timed(stages, "simulate", || Ok(simulate_realization(&p.params, p.config.run.n_neurons, &p.grid, seed)?))?;
    let wall = start.elapsed().as_secs_f64();
    timed(stages, "write", || {
        write_ensemble(p, dir, "ensemble", &ens)?;
        dir.write_json(
            "simulate.json",
            &serde_json::json!({
                "seed": p.config.run.seed,
                "config_hash": p.config_hash,
                "grid": { "dt": p.grid.dt, "n_hist": p.grid.n_hist, "n_main": p.grid.n_main },
                "n_neurons": p.config.run.n_neurons,
                "wall_seconds": wall,
            }),
        )
    })
}

fn solve(p: &Prepared, stages: &mut Vec<Stage>) -> Result<neurofield::meanfield::MeanFieldSolution, CliError> {
    timed(stages, "picard", || {
        Ok(picard_solve(&p.params, &p.grid, &PicardOptions::from_config(&p.config.run), p.config.run.seed)?)
    })
}

fn meanfield(p: &Prepared, dir: &mut RunDir, stages: &mut Vec<Stage>) -> Result<(), CliError> {
    let sol = solve(p, stages)?;
    timed(stages, "write", || {
        dir.write_with("iterates.csv", |w| Ok(output::write_iterates(w, &sol.iterates)?))?;
        dir.write_with("stats.csv", |w| Ok(output::write_stats(w, None, &sol.stats, true)?))?;
        let keep = match p.config.run.output_paths {
            0 => sol.ensemble.len(),
            k => k.min(sol.ensemble.len()),
        };
        let shown = sol.ensemble.select(&(0..keep).collect::<Vec<_>>());
        write_ensemble(p, dir, "meanfield_ensemble", &shown)?;
        dir.write_json(
            "meanfield.json",
            &serde_json::json!({
                "seed": p.config.run.seed,
                "config_hash": p.config_hash,
                "converged": sol.converged,
                "iterations": sol.iterates.len(),
                "iterate_seconds": sol.iterates.iter().map(|i| i.seconds).collect::<Vec<_>>(),
                "n_particles": sol.ensemble.len(),
                "paths_written": keep,
            }),
        )
    })?;
    if !sol.converged {
        log::warn!("Picard iteration stopped after {} iterations without reaching tol", sol.iterates.len());
    }
    Ok(())
}

fn probe_set(p: &Prepared) -> ProbeSet {
    ProbeSet { times: p.config.run.probe_times.clone(), nodes: p.config.run.probe_nodes }
}

fn compare(p: &Prepared, inputs: &[Ensemble; 2], dir: &mut RunDir, stages: &mut Vec<Stage>) -> Result<(), CliError> {
    let probes = probe_set(p);
    let nodes = p.params.domain.nodes(probes.nodes);
    let (stats, distances) = timed(stages, "compare", || {
        let stats = inputs
            .iter()
            .map(|e| field_stats(e, &p.params, &nodes, &probes.times))
            .collect::<Result<Vec<_>, _>>()?;
        let seed = rng::derive(p.config.run.seed, &[rng::COMPARE]);
        let k_tau = p.params.constants.k_tau;
        let distances = [Method::ExactAssignment, Method::IndexCoupling]
            .into_iter()
            .map(|m| wasserstein2(&inputs[0], &inputs[1], k_tau, p.config.run.subsample, m, seed))
            .collect::<Result<Vec<_>, _>>()?;
        Ok((stats, distances))
    })?;
    timed(stages, "write", || {
        dir.write_with("compare_stats.csv", |w| {
            output::write_stats(w, Some("a"), &stats[0], true)?;
            output::write_stats(w, Some("b"), &stats[1], false)?;
            Ok(())
        })?;
        dir.write_with("distances.csv", |w| Ok(output::write_distances(w, &distances)?))
    })
}

fn sweep(p: &Prepared, kind: SweepKind, dir: &mut RunDir, stages: &mut Vec<Stage>) -> Result<(), CliError> {
    let run = &p.config.run;
    let mut reports: Vec<(&str, SweepReport)> = Vec::new();
    if matches!(kind, SweepKind::Convergence | SweepKind::Both) {
        let sol = solve(p, stages)?;
        let report = timed(stages, "convergence_sweep", || {
            Ok(convergence_sweep(
                &p.params,
                &p.grid,
                &run.n_list,
                run.replicates,
                &sol,
                &probe_set(p),
                run.subsample,
                run.seed,
            )?)
        })?;
        reports.push(("convergence", report));
    }
    if matches!(kind, SweepKind::Chaos | SweepKind::Both) {
        let report = timed(stages, "chaos_sweep", || {
            Ok(chaos_sweep(&p.params, &p.grid, &run.chaos_n_list, run.chaos_replicates, run.pair_count, &run.probe_times, run.seed)?)
        })?;
        reports.push(("chaos", report));
    }
    timed(stages, "write", || {
        for (name, report) in &mut reports {
            report.config_hash = p.config_hash.clone();
            for w in &report.warnings {
                log::warn!("{name} sweep: {w}");
            }
            dir.write_with(&format!("sweep_{name}.csv"), |w| Ok(output::write_sweep(w, report)?))?;
            dir.write_json(
                &format!("sweep_{name}.json"),
                &serde_json::json!({
                    "config_hash": report.config_hash,
                    "master_seed": report.master_seed,
                    "seeds": report.seeds,
                    "warnings": report.warnings,
                }),
            )?;
        }
        Ok(())
    })
}

fn check(p: &Prepared, dir: &mut RunDir, stages: &mut Vec<Stage>) -> Result<(), CliError> {
    let mut report = timed(stages, "identities", || {
        Ok(identity_suite(&p.params, p.grid.dt, &IdentitySizes::default(), p.config.run.seed)?)
    })?;
    report.config_hash = p.config_hash.clone();
    timed(stages, "write", || dir.write_with("identities.csv", |w| Ok(output::write_identities(w, &report)?)))?;
    let failed: Vec<&str> =
        report.rows.iter().filter(|r| r.pass == Some(false)).map(|r| r.statistic.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime(format!("identity checks failed: {}", failed.join(", "))))
    }
}
