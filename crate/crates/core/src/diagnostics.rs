//! Experiment drivers: finite-size convergence towards the mean-field law,
//! asymptotic independence of neuron pairs, and the identity checks.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::gaussian::{
    check_ktilde_identity, cholesky_sample, exp_quadratic_moment, exp_quadratic_moment_mc, lambda_weight,
    tilted_covariance, CovMatrix,
};
use crate::measure::{field_stats, field_stats_at_steps, subsample_indices, wasserstein2, FieldStats, Method};
use crate::meanfield::MeanFieldSolution;
use crate::model::ModelParams;
use crate::network::{girsanov_average_check, simulate_realization, simulate_uncoupled, TimeGrid};
use crate::rng;

const CONVERGENCE: u64 = 1;
const CHAOS: u64 = 2;

/// One line of a sweep table. Rows that aggregate over replicates leave
/// `replicate` empty; rows that aggregate over network sizes use `n = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub replicate: Option<usize>,
    pub pair: Option<[usize; 2]>,
    pub statistic: String,
    pub value: f64,
    pub std_error: Option<f64>,
    pub pass: Option<bool>,
}

impl SweepRow {
    fn new(n: usize, statistic: impl Into<String>, value: f64) -> Self {
        Self { n, replicate: None, pair: None, statistic: statistic.into(), value, std_error: None, pass: None }
    }

    fn replicate(mut self, rep: usize) -> Self {
        self.replicate = Some(rep);
        self
    }

    fn se(mut self, se: f64) -> Self {
        self.std_error = Some(se);
        self
    }

    fn pass(mut self, pass: bool) -> Self {
        self.pass = Some(pass);
        self
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// Filled in by the caller that owns the configuration document.
    pub config_hash: String,
    pub master_seed: u64,
    /// Derived seed of every replicate, in row order.
    pub seeds: Vec<u64>,
    pub warnings: Vec<String>,
}

impl SweepReport {
    pub fn find(&self, n: usize, statistic: &str) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.n == n && r.statistic == statistic)
    }

    pub fn values(&self, n: usize, statistic: &str) -> Vec<f64> {
        self.rows.iter().filter(|r| r.n == n && r.statistic == statistic).map(|r| r.value).collect()
    }

    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass != Some(false))
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrendTest {
    pub statistic: f64,
    pub z: f64,
    /// One-sided p-value for a decreasing trend.
    pub p_value: f64,
}

/// Jonckheere–Terpstra test against the alternative that values decrease
/// from one group to the next (normal approximation, ties count one half).
pub fn decreasing_trend_test(groups: &[Vec<f64>]) -> TrendTest {
    let mut stat = 0.0;
    for (a, earlier) in groups.iter().enumerate() {
        for later in &groups[a + 1..] {
            for &x in earlier {
                for &y in later {
                    if y < x {
                        stat += 1.0;
                    } else if y == x {
                        stat += 0.5;
                    }
                }
            }
        }
    }
    let sizes: Vec<f64> = groups.iter().map(|g| g.len() as f64).collect();
    let n: f64 = sizes.iter().sum();
    let mean = (n * n - sizes.iter().map(|s| s * s).sum::<f64>()) / 4.0;
    let var = (n * n * (2.0 * n + 3.0) - sizes.iter().map(|s| s * s * (2.0 * s + 3.0)).sum::<f64>()) / 72.0;
    let z = if var > 0.0 { (stat - mean) / var.sqrt() } else { 0.0 };
    let p_value = 1.0 - Normal::standard().cdf(z);
    TrendTest { statistic: stat, z, p_value }
}

fn strictly_decreasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] < w[0])
}

fn check_sizes(n_list: &[usize], min: usize) -> Result<()> {
    if n_list.is_empty() {
        return Err(Error::Config("empty list of network sizes".into()));
    }
    if let Some(&n) = n_list.iter().find(|&&n| n < min) {
        return Err(Error::Config(format!("network size {n} is below the minimum of {min}")));
    }
    if !n_list.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::Config(format!("network sizes must be increasing: {n_list:?}")));
    }
    Ok(())
}

fn replicate_seed(seed: u64, kind: u64, n: usize, rep: usize) -> u64 {
    rng::derive(seed, &[rng::REPLICATE, kind, n as u64, rep as u64])
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeSet {
    pub times: Vec<f64>,
    /// Probe locations per axis.
    pub nodes: usize,
}

/// `max` over probes of `|m_N - m_Q| + |K_N - K_Q|` with diagonal `K`.
fn stats_gap(a: &FieldStats, b: &FieldStats) -> f64 {
    let mut gap = 0.0f64;
    for n in 0..a.n_nodes() {
        for t in 0..a.n_times() {
            gap = gap.max((a.m(n, t) - b.m(n, t)).abs() + (a.k(n, t, t) - b.k(n, t, t)).abs());
        }
    }
    gap
}

/// For each network size and replicate, simulate a fresh network and measure
/// its distance to the mean-field solution.
#[allow(clippy::too_many_arguments)]
pub fn convergence_sweep(
    params: &ModelParams,
    grid: &TimeGrid,
    n_list: &[usize],
    replicates: usize,
    meanfield: &MeanFieldSolution,
    probes: &ProbeSet,
    subsample: usize,
    seed: u64,
) -> Result<SweepReport> {
    check_sizes(n_list, 1)?;
    if replicates == 0 || subsample == 0 {
        return Err(Error::Config("replicates and subsample must be >= 1".into()));
    }
    if !meanfield.converged {
        return Err(Error::InvalidArgument("the mean-field solution has not converged".into()));
    }
    let nodes = params.domain.nodes(probes.nodes);
    let target = field_stats(&meanfield.ensemble, params, &nodes, &probes.times)?;
    let k_tau = params.constants.k_tau;

    let jobs: Vec<(usize, usize)> = n_list.iter().flat_map(|&n| (0..replicates).map(move |r| (n, r))).collect();
    let results: Vec<(u64, std::result::Result<(f64, f64), String>)> = jobs
        .par_iter()
        .map(|&(n, rep)| {
            let s = replicate_seed(seed, CONVERGENCE, n, rep);
            let run = || -> Result<(f64, f64)> {
                let ens = simulate_realization(params, n, grid, s)?;
                let stats = field_stats(&ens, params, &nodes, &probes.times)?;
                let w2 = wasserstein2(&ens, &meanfield.ensemble, k_tau, subsample, Method::ExactAssignment, s)?;
                Ok((stats_gap(&stats, &target), w2.value))
            };
            (s, run().map_err(|e| e.to_string()))
        })
        .collect();

    let mut report = SweepReport { master_seed: seed, ..Default::default() };
    let mut d_groups = Vec::new();
    let mut w_groups = Vec::new();
    for &n in n_list {
        let mut d = Vec::new();
        let mut w = Vec::new();
        for (rep, ((_, _), (s, res))) in jobs.iter().zip(&results).filter(|((m, _), _)| *m == n).enumerate() {
            report.seeds.push(*s);
            match res {
                Ok((gap, w2)) => {
                    report.rows.push(SweepRow::new(n, "D", *gap).replicate(rep));
                    report.rows.push(SweepRow::new(n, "w2", *w2).replicate(rep));
                    d.push(*gap);
                    w.push(*w2);
                }
                Err(msg) => {
                    report.rows.push(SweepRow::new(n, "D", f64::NAN).replicate(rep).pass(false));
                    report.rows.push(SweepRow::new(n, "w2", f64::NAN).replicate(rep).pass(false));
                    report.warnings.push(format!("N = {n}, replicate {rep}: {msg}"));
                }
            }
        }
        report.rows.push(SweepRow::new(n, "median_D", median(&d)));
        report.rows.push(SweepRow::new(n, "median_w2", median(&w)));
        d_groups.push(d);
        w_groups.push(w);
    }
    for (name, groups) in [("trend_D", &d_groups), ("trend_w2", &w_groups)] {
        let test = decreasing_trend_test(groups);
        let medians: Vec<f64> = groups.iter().map(|g| median(g)).collect();
        let ok = n_list.len() < 2 || (test.p_value < 0.05 && strictly_decreasing(&medians));
        report.rows.push(SweepRow::new(0, name, test.p_value).pass(ok));
    }
    Ok(report)
}

/// `E|r|` for the sample correlation of `n` independent normal pairs.
pub fn null_abs_correlation(n: usize) -> f64 {
    if n < 3 {
        return 1.0;
    }
    let n = n as f64;
    (ln_gamma((n - 1.0) / 2.0) - ln_gamma(n / 2.0)).exp() / std::f64::consts::PI.sqrt()
}

/// Pearson correlation; zero when either side is constant.
fn correlation(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx > 0.0 && syy > 0.0 {
        sxy / (sxx * syy).sqrt()
    } else {
        0.0
    }
}

fn pair_from_index(n: usize, mut k: usize) -> [usize; 2] {
    let mut i = 0;
    while k >= n - 1 - i {
        k -= n - 1 - i;
        i += 1;
    }
    [i, i + 1 + k]
}

/// For each network size, the average over sampled neuron pairs and probe
/// times of `|Corr(S(x^a_t), S(x^b_t))|` across independent replicates.
pub fn chaos_sweep(
    params: &ModelParams,
    grid: &TimeGrid,
    n_list: &[usize],
    replicates: usize,
    pair_count: usize,
    probe_times: &[f64],
    seed: u64,
) -> Result<SweepReport> {
    check_sizes(n_list, 2).map_err(|e| match e {
        Error::Config(msg) if msg.contains("minimum") => Error::InvalidArgument("fewer than 2 neurons".into()),
        other => other,
    })?;
    if replicates < 3 || pair_count == 0 {
        return Err(Error::Config("need at least 3 replicates and 1 pair".into()));
    }
    let steps = probe_times.iter().map(|&t| grid.step_index(t)).collect::<Result<Vec<_>>>()?;
    if steps.is_empty() {
        return Err(Error::Config("no probe times".into()));
    }
    let mut report = SweepReport { master_seed: seed, ..Default::default() };
    let mut groups = Vec::new();
    let mut rhos = Vec::new();
    let floor = null_abs_correlation(replicates);

    for &n in n_list {
        let max_pairs = n * (n - 1) / 2;
        let count = if pair_count > max_pairs {
            report.warnings.push(format!("N = {n}: pair_count {pair_count} capped at {max_pairs}"));
            max_pairs
        } else {
            pair_count
        };
        let pairs: Vec<[usize; 2]> = subsample_indices(max_pairs, count, rng::derive(seed, &[rng::PAIRS, n as u64]))
            .into_iter()
            .map(|k| pair_from_index(n, k))
            .collect();

        let seeds: Vec<u64> = (0..replicates).map(|rep| replicate_seed(seed, CHAOS, n, rep)).collect();
        // rates[rep][neuron * n_probe + probe]
        let samples = seeds
            .par_iter()
            .map(|&s| -> Result<Vec<f64>> {
                let ens = simulate_realization(params, n, grid, s)?;
                let mut out = Vec::with_capacity(n * steps.len());
                for m in ens.members() {
                    out.extend(steps.iter().map(|&k| params.s(m.values[grid.origin() + k])));
                }
                Ok(out)
            })
            .collect::<Result<Vec<_>>>()?;
        report.seeds.extend(&seeds);

        let np = steps.len();
        for (rep, rates) in samples.iter().enumerate() {
            let last = np - 1;
            let mean_rate = (0..n).map(|i| rates[i * np + last]).sum::<f64>() / n as f64;
            report.rows.push(SweepRow::new(n, "mean_rate", mean_rate).replicate(rep));
        }
        let mut abs_corr = Vec::with_capacity(pairs.len());
        for &[a, b] in &pairs {
            let mut total = 0.0;
            for t in 0..np {
                let x: Vec<f64> = samples.iter().map(|r| r[a * np + t]).collect();
                let y: Vec<f64> = samples.iter().map(|r| r[b * np + t]).collect();
                total += correlation(&x, &y).abs();
            }
            let v = total / np as f64;
            abs_corr.push(v);
            let mut row = SweepRow::new(n, "abs_corr", v);
            row.pair = Some([a, b]);
            report.rows.push(row);
        }
        let k = abs_corr.len() as f64;
        let rho = abs_corr.iter().sum::<f64>() / k;
        let se = if abs_corr.len() > 1 {
            (abs_corr.iter().map(|v| (v - rho).powi(2)).sum::<f64>() / (k - 1.0) / k).sqrt()
        } else {
            f64::NAN
        };
        report.rows.push(SweepRow::new(n, "rho", rho).se(se));
        let z = (rho - floor) / se;
        report.rows.push(SweepRow::new(n, "rho_vs_floor", z).pass(z.abs() < 2.576));
        rhos.push(rho);
        groups.push(abs_corr);
    }
    report.rows.push(SweepRow::new(0, "noise_floor", floor));
    let test = decreasing_trend_test(&groups);
    report.rows.push(SweepRow::new(0, "trend_rho", test.p_value).pass(n_list.len() < 2 || test.p_value < 0.05));
    Ok(report)
}

/// Per-identity tolerances used by [`identity_suite`].
pub const KTILDE_TOL_SMALL: f64 = 0.02;
pub const KTILDE_TOL_LARGE: f64 = 0.05;
pub const MOMENT_Z_TOL: f64 = 5.0;
pub const GIRSANOV_TOL: f64 = 0.05;

/// Sample counts for [`identity_suite`].
#[derive(Clone, Debug, PartialEq)]
pub struct IdentitySizes {
    pub ktilde_samples: usize,
    pub ktilde_steps: usize,
    pub moment_samples: usize,
    pub girsanov_samples: usize,
    pub lambda_samples: usize,
}

impl Default for IdentitySizes {
    fn default() -> Self {
        Self {
            ktilde_samples: 100_000,
            ktilde_steps: 1000,
            moment_samples: 1_000_000,
            girsanov_samples: 100_000,
            lambda_samples: 10_000,
        }
    }
}

pub fn moment_grid() -> Vec<(f64, f64)> {
    let mut g = Vec::new();
    for m in [0.0, 0.5, 1.0] {
        for v in [0.0, 0.25, 0.5] {
            g.push((m, v));
        }
    }
    g
}

/// One row per identity: measured error and pass/fail against its tolerance.
pub fn identity_suite(params: &ModelParams, dt: f64, sizes: &IdentitySizes, seed: u64) -> Result<SweepReport> {
    let mut report = SweepReport { master_seed: seed, ..Default::default() };
    let sub = |k: u64| rng::derive(seed, &[rng::IDENTITY, k]);

    for (k, (v, horizon, tol)) in [(1.0, 1.0, KTILDE_TOL_SMALL), (4.0, 2.0, KTILDE_TOL_LARGE)].into_iter().enumerate() {
        let c = check_ktilde_identity(v, horizon, sizes.ktilde_samples, sizes.ktilde_steps, sub(k as u64))?;
        report.rows.push(SweepRow::new(0, format!("ktilde_v{v}_T{horizon}"), c.relative_error).pass(c.relative_error < tol));
    }

    for (k, (m, v)) in moment_grid().into_iter().enumerate() {
        let exact = exp_quadratic_moment(m, v)?;
        let (mc, se) = exp_quadratic_moment_mc(m, v, sizes.moment_samples, sub(10 + k as u64))?;
        let diff = (mc - exact).abs();
        let (z, ok) = if se > 0.0 { (diff / se, diff / se < MOMENT_Z_TOL) } else { (0.0, diff <= 1e-9 * exact) };
        report.rows.push(SweepRow::new(0, format!("quadratic_moment_m{m}_v{v}"), z).se(se).pass(ok));
    }

    // Two neurons, centred random couplings, half the horizon.
    let girsanov_params = params.with_coupling(0.0, 0.5)?.with_horizon(0.5)?;
    let ggrid = TimeGrid::for_model(&girsanov_params, dt)?;
    let gseed = sub(30);
    let frozen = simulate_uncoupled(&girsanov_params, 2, &ggrid, gseed)?;
    let positions: Vec<Vec<f64>> = frozen.members().iter().map(|m| m.r.clone()).collect();
    let g = girsanov_average_check(&girsanov_params, &positions, &frozen, sizes.girsanov_samples, sizes.girsanov_samples, gseed)?;
    report.rows.push(SweepRow::new(0, "girsanov_average", g.relative_error).pass(g.relative_error < GIRSANOV_TOL));

    lambda_rows(params, dt, sizes.lambda_samples, sub(40), &mut report)?;
    report.seeds = (0..5).map(sub).collect();
    Ok(report)
}

/// Reweighting checks on centred draws with the model covariance at the
/// centre of the domain, estimated from an uncoupled ensemble.
fn lambda_rows(params: &ModelParams, dt: f64, samples: usize, seed: u64, report: &mut SweepReport) -> Result<()> {
    let grid = TimeGrid::for_model(params, dt)?;
    let ens = simulate_uncoupled(params, 512, &grid, seed)?;
    let centre: Vec<f64> = params.domain.bounds().iter().map(|(a, b)| 0.5 * (a + b)).collect();
    let steps: Vec<usize> = (0..grid.n_main).collect();
    let stats = field_stats_at_steps(&ens, params, &[centre], &steps)?;
    let scaled = stats.scaled_cov_matrix(0)?;
    let cov = CovMatrix::new(vec![0.0; steps.len()], scaled.entries().to_vec())?;
    let draws = cholesky_sample(&cov, samples, seed)?;

    let last = steps.len() - 1;
    let t = last as f64 * dt;
    let w = lambda_weight(&draws, last, dt)?;
    let mean_w = w.iter().sum::<f64>() / w.len() as f64;
    report.rows.push(SweepRow::new(0, "lambda_normalization", (mean_w - 1.0).abs()).pass((mean_w - 1.0).abs() < 1e-12));

    let max_w = w.iter().copied().fold(0.0, f64::max);
    let energy = draws
        .paths()
        .map(|g| 0.5 * g[..last].iter().map(|x| x * x * dt).sum::<f64>())
        .sum::<f64>()
        / samples as f64;
    let jensen = energy.exp();
    report.rows.push(SweepRow::new(0, "lambda_jensen_bound", max_w / jensen).pass(max_w <= jensen * (1.0 + 1e-12)));

    let c = &params.constants;
    let ratio = c.sigma_sup.powi(2) / c.lambda_min.powi(2);
    let bound = (ratio * t / 2.0).exp();
    report.rows.push(SweepRow::new(0, "lambda_bound", max_w / bound).pass(max_w <= bound));

    let mut ktilde_max = 0.0f64;
    let probe: Vec<usize> = (0..=4).map(|i| i * last / 4).collect();
    for &s in &probe {
        for &u in &probe {
            ktilde_max = ktilde_max.max(tilted_covariance(&draws, last, s, u, dt)?.abs());
        }
    }
    let kbound = ratio * bound;
    report.rows.push(SweepRow::new(0, "ktilde_bound", ktilde_max / kbound).pass(ktilde_max <= kbound));
    Ok(())
}
