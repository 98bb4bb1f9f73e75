//! The mean-field map `μ ↦ Q_μ` and its Picard iteration.
//!
//! `Q_μ` is sampled as a mixture: each particle draws a location `r`, one
//! Gaussian path `G(r)` with the interaction statistics of `μ` at `r`, and
//! then integrates `dx = (f(r, t, x) + G_t(r)) dt + λ(r) dB` from its own
//! initial history. `G` is frozen along the particle's trajectory.
//!
//! Every map application inside [`picard_solve`] reuses the same particle
//! seed, so iterates share positions, initial histories, Gaussian innovations
//! and Brownian increments. Successive iterates then differ only through the
//! change in the interaction statistics.

use std::time::Instant;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{cholesky_factor, draw_path, CholeskyFactor};
use crate::measure::{field_stats, field_stats_at_steps, mean_profile, wasserstein2, FieldStats, Method, RateTable};
use crate::model::ModelParams;
use crate::network::{
    build_initial, check_state, euler_step, noise_stream, sample_positions, simulate_uncoupled, Ensemble, PathSample,
    TimeGrid,
};
use crate::rng;

/// Interaction path for each particle, one value per step `k < n_main`.
///
/// The mean is evaluated exactly at each particle's location; the covariance
/// factor is taken from the nearest of `m_nodes` nodes per axis.
pub fn sample_interactions(
    params: &ModelParams,
    prev: &Ensemble,
    positions: &[Vec<f64>],
    m_nodes: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if prev.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    if m_nodes == 0 {
        return Err(Error::InvalidArgument("m_nodes must be >= 1".into()));
    }
    let grid = *prev.grid();
    let steps: Vec<usize> = (0..grid.n_main).collect();
    let nodes = params.domain.nodes(m_nodes);
    let node_stats = field_stats_at_steps(prev, params, &nodes, &steps)?;
    let factors = (0..nodes.len())
        .map(|k| cholesky_factor(&node_stats.cov_matrix(k)?))
        .collect::<Result<Vec<CholeskyFactor>>>()?;
    let rates = RateTable::new(prev, params);
    positions
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            let mean = mean_profile(prev, &rates, params, r, &steps)?;
            let factor = &factors[params.domain.nearest_node(r, m_nodes)];
            let mut rng = rng::stream(seed, &[rng::GAUSSIAN, i as u64]);
            let mut xi = vec![0.0; steps.len()];
            let mut g = vec![0.0; steps.len()];
            draw_path(factor, &mean, &mut rng, &mut xi, &mut g);
            Ok(g)
        })
        .collect()
}

/// Euler–Maruyama for one particle driven by a frozen interaction path.
fn integrate_particle(
    params: &ModelParams,
    index: usize,
    r: &[f64],
    history: &[f64],
    interaction: &[f64],
    grid: &TimeGrid,
    seed: u64,
) -> Result<Vec<f64>> {
    let dt = grid.dt;
    let sqrt_dt = dt.sqrt();
    let lambda = params.lambda(r);
    let mut rng = noise_stream(seed, index);
    let mut values = Vec::with_capacity(grid.len());
    values.extend_from_slice(history);
    let mut x = *values.last().expect("history has at least one point");
    for (k, g) in interaction.iter().enumerate() {
        let drift = params.f(r, k as f64 * dt, x) + g;
        let z: f64 = StandardNormal.sample(&mut rng);
        x = euler_step(x, drift, lambda, dt, sqrt_dt, z);
        check_state(x, index, k)?;
        values.push(x);
    }
    Ok(values)
}

/// One application of the mean-field map to `prev`. Particles use the
/// same position, initial-history and noise substreams as network neurons
/// with the same seed.
pub fn meanfield_map(
    params: &ModelParams,
    prev: &Ensemble,
    n_particles: usize,
    grid: &TimeGrid,
    m_nodes: usize,
    seed: u64,
) -> Result<Ensemble> {
    if prev.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    if !prev.grid().matches(grid) {
        return Err(Error::GridMismatch("previous iterate lives on a different grid".into()));
    }
    let positions = sample_positions(params, n_particles, seed)?;
    let histories = build_initial(&params.initial, &positions, grid, seed);
    let interactions = sample_interactions(params, prev, &positions, m_nodes, seed)?;
    let members = positions
        .into_par_iter()
        .zip(histories.par_iter().zip(interactions.par_iter()))
        .enumerate()
        .map(|(i, (r, (h, g)))| {
            let values = integrate_particle(params, i, &r, h, g, grid, seed)?;
            Ok(PathSample { r, values })
        })
        .collect::<Result<Vec<_>>>()?;
    Ensemble::new(*grid, members)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Iterate {
    pub iteration: usize,
    /// Estimated distance to the previous iterate.
    pub w2: f64,
    pub subsample: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct MeanFieldSolution {
    pub ensemble: Ensemble,
    /// Statistics of the final iterate at the covariance nodes, all steps.
    pub stats: FieldStats,
    pub iterates: Vec<Iterate>,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PicardOptions {
    pub n_particles: usize,
    pub m_nodes: usize,
    pub tol: f64,
    pub max_iter: usize,
    /// Atoms per side in the distance estimate between iterates.
    pub subsample: usize,
}

impl PicardOptions {
    pub fn from_config(run: &crate::config::RunConfig) -> Self {
        Self {
            n_particles: run.n_particles,
            m_nodes: run.m_nodes,
            tol: run.tol,
            max_iter: run.max_iter,
            subsample: run.subsample,
        }
    }
}

/// Seed shared by every map application of one solve.
pub fn particle_seed(seed: u64) -> u64 {
    rng::derive(seed, &[rng::MEANFIELD])
}

/// Iterate the mean-field map from the uncoupled law until successive
/// iterates are within `tol` or `max_iter` applications have been made.
pub fn picard_solve(params: &ModelParams, grid: &TimeGrid, opts: &PicardOptions, seed: u64) -> Result<MeanFieldSolution> {
    if !(opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(Error::Config(format!("need tol > 0 and max_iter >= 1 (tol = {}, max_iter = {})", opts.tol, opts.max_iter)));
    }
    if opts.n_particles == 0 {
        return Err(Error::EmptyNetwork);
    }
    if opts.subsample == 0 {
        return Err(Error::Config("subsample must be >= 1".into()));
    }
    let particles = particle_seed(seed);
    let compare = rng::derive(seed, &[rng::COMPARE]);
    let mut current = simulate_uncoupled(params, opts.n_particles, grid, particles)?;
    let mut iterates = Vec::new();
    let mut converged = false;
    for iteration in 1..=opts.max_iter {
        let start = Instant::now();
        let next = meanfield_map(params, &current, opts.n_particles, grid, opts.m_nodes, particles)?;
        let report = wasserstein2(&next, &current, params.constants.k_tau, opts.subsample, Method::ExactAssignment, compare)?;
        iterates.push(Iterate {
            iteration,
            w2: report.value,
            subsample: report.subsample,
            seconds: start.elapsed().as_secs_f64(),
        });
        log::info!("picard iteration {iteration}: w2 = {:.5}", report.value);
        current = next;
        if report.value <= opts.tol {
            converged = true;
            break;
        }
    }
    let steps: Vec<usize> = (0..grid.n_main).collect();
    let stats = field_stats_at_steps(&current, params, &params.domain.nodes(opts.m_nodes), &steps)?;
    Ok(MeanFieldSolution { ensemble: current, stats, iterates, converged })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualRow {
    pub time: f64,
    pub r: Vec<f64>,
    /// `m` or `K` (diagonal).
    pub statistic: String,
    pub before: f64,
    pub after: f64,
    /// `|after - before|` in combined standard errors.
    pub z: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub rows: Vec<ResidualRow>,
    pub max_z: f64,
}

/// Apply the map once more to a solution with an independent seed and
/// compare scaled statistics at the probes.
pub fn fixed_point_residual(
    params: &ModelParams,
    solution: &MeanFieldSolution,
    m_nodes: usize,
    probe_times: &[f64],
    probe_nodes: usize,
    seed: u64,
) -> Result<Residual> {
    let grid = *solution.ensemble.grid();
    let extra = meanfield_map(params, &solution.ensemble, solution.ensemble.len(), &grid, m_nodes, seed)?;
    let nodes = params.domain.nodes(probe_nodes);
    let a = field_stats(&solution.ensemble, params, &nodes, probe_times)?;
    let b = field_stats(&extra, params, &nodes, probe_times)?;
    let mut rows = Vec::new();
    for (n, r) in nodes.iter().enumerate() {
        let l = a.lambda[n];
        for (t, time) in a.times().into_iter().enumerate() {
            let z = |before: f64, after: f64, se_a: f64, se_b: f64| {
                let se = (se_a * se_a + se_b * se_b).sqrt();
                let diff = (after - before).abs();
                if se > 0.0 {
                    diff / se
                } else if diff == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            };
            rows.push(ResidualRow {
                time,
                r: r.clone(),
                statistic: "m".into(),
                before: a.m(n, t),
                after: b.m(n, t),
                z: z(a.m(n, t), b.m(n, t), a.mean_se[n][t] / l, b.mean_se[n][t] / l),
            });
            rows.push(ResidualRow {
                time,
                r: r.clone(),
                statistic: "K".into(),
                before: a.k(n, t, t),
                after: b.k(n, t, t),
                z: z(a.k(n, t, t), b.k(n, t, t), a.var_se[n][t] / (l * l), b.var_se[n][t] / (l * l)),
            });
        }
    }
    let max_z = rows.iter().map(|r| r.z).fold(0.0, f64::max);
    Ok(Residual { rows, max_z })
}
