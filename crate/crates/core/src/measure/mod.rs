//! Statistics of path-space measures: the interaction mean and covariance at
//! arbitrary locations, the delay-aware path metric and an empirical 2-Wasserstein
//! estimate between ensembles.

pub mod assignment;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::CovMatrix;
use crate::model::{distance, ModelParams};
use crate::network::{Ensemble, PathSample, TimeGrid};
use crate::rng;

/// `S(x)` for every member on the full grid, member-major.
pub(crate) struct RateTable {
    len: usize,
    rates: Vec<f64>,
}

impl RateTable {
    pub(crate) fn new(ensemble: &Ensemble, params: &ModelParams) -> Self {
        let len = ensemble.grid().len();
        let mut rates = Vec::with_capacity(len * ensemble.len());
        for m in ensemble.members() {
            rates.extend(m.values.iter().map(|&x| params.s(x)));
        }
        Self { len, rates }
    }

    #[inline]
    pub(crate) fn member(&self, j: usize) -> &[f64] {
        &self.rates[j * self.len..(j + 1) * self.len]
    }
}

/// Kernel values between a location and every ensemble member, with delays
/// in grid steps.
struct Weights {
    mean: Vec<f64>,
    std: Vec<f64>,
    delay: Vec<usize>,
}

fn weights(ensemble: &Ensemble, params: &ModelParams, r: &[f64]) -> Result<Weights> {
    let grid = ensemble.grid();
    let n = ensemble.len();
    let mut w = Weights { mean: Vec::with_capacity(n), std: Vec::with_capacity(n), delay: Vec::with_capacity(n) };
    for m in ensemble.members() {
        let (jm, sd, tau) = params.kernels_at(distance(r, &m.r));
        let d = grid.delay_steps(tau);
        if d > grid.n_hist {
            return Err(Error::DelayExceedsHistory { delay: tau, window: grid.n_hist as f64 * grid.dt });
        }
        w.mean.push(jm);
        w.std.push(sd);
        w.delay.push(d);
    }
    Ok(w)
}

fn check_steps(grid: &TimeGrid, steps: &[usize]) -> Result<()> {
    match steps.iter().find(|&&k| k > grid.n_main) {
        Some(k) => Err(Error::InvalidArgument(format!("step {k} beyond the horizon ({} steps)", grid.n_main))),
        None => Ok(()),
    }
}

/// Unscaled interaction mean `M(t, r) = mean_j J(r, r_j) S(x^j_{t - τ(r, r_j)})`
/// at one location and the given step indices.
pub(crate) fn mean_profile(
    ensemble: &Ensemble,
    rates: &RateTable,
    params: &ModelParams,
    r: &[f64],
    steps: &[usize],
) -> Result<Vec<f64>> {
    let w = weights(ensemble, params, r)?;
    let n_hist = ensemble.grid().n_hist;
    let mut out = vec![0.0; steps.len()];
    let contiguous = steps.windows(2).all(|p| p[1] == p[0] + 1);
    for j in 0..ensemble.len() {
        let jm = w.mean[j];
        if jm == 0.0 {
            continue;
        }
        let path = rates.member(j);
        let shift = n_hist - w.delay[j];
        if contiguous && !steps.is_empty() {
            let start = shift + steps[0];
            for (o, s) in out.iter_mut().zip(&path[start..start + steps.len()]) {
                *o += jm * s;
            }
        } else {
            for (o, &k) in out.iter_mut().zip(steps) {
                *o += jm * path[shift + k];
            }
        }
    }
    let inv = 1.0 / ensemble.len() as f64;
    out.iter_mut().for_each(|o| *o *= inv);
    Ok(out)
}

/// Interaction statistics of an ensemble at a set of locations and times.
///
/// Stored unscaled: `M(t, r)` and `Σ(s, t, r)` are the mean and covariance of
/// the Gaussian field added to the drift. The scaled versions `m = M / λ(r)`
/// and `K = Σ / λ(r)²` are available through [`FieldStats::m`] and
/// [`FieldStats::k`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldStats {
    pub r_nodes: Vec<Vec<f64>>,
    /// Grid step indices; time of entry `i` is `steps[i] * dt`.
    pub steps: Vec<usize>,
    pub dt: f64,
    pub lambda: Vec<f64>,
    /// `M` per node, one value per time.
    pub mean: Vec<Vec<f64>>,
    /// `Σ` per node, row-major `n_t × n_t`.
    pub cov: Vec<Vec<f64>>,
    /// Standard error of each `M` value.
    pub mean_se: Vec<Vec<f64>>,
    /// Standard error of each diagonal value `Σ(t, t)`.
    pub var_se: Vec<Vec<f64>>,
    pub n_samples: usize,
}

impl FieldStats {
    pub fn n_nodes(&self) -> usize {
        self.r_nodes.len()
    }

    pub fn n_times(&self) -> usize {
        self.steps.len()
    }

    pub fn times(&self) -> Vec<f64> {
        self.steps.iter().map(|&k| k as f64 * self.dt).collect()
    }

    /// Unscaled `Σ(s, t)` at a node.
    pub fn sigma(&self, node: usize, s: usize, t: usize) -> f64 {
        self.cov[node][s * self.n_times() + t]
    }

    /// Scaled mean `m = M / λ`.
    pub fn m(&self, node: usize, t: usize) -> f64 {
        self.mean[node][t] / self.lambda[node]
    }

    /// Scaled covariance `K = Σ / λ²`.
    pub fn k(&self, node: usize, s: usize, t: usize) -> f64 {
        self.sigma(node, s, t) / (self.lambda[node] * self.lambda[node])
    }

    /// Unscaled Gaussian law of the interaction field at a node.
    pub fn cov_matrix(&self, node: usize) -> Result<CovMatrix> {
        CovMatrix::new(self.mean[node].clone(), self.cov[node].clone())
    }

    /// Scaled law `(m, K)` at a node.
    pub fn scaled_cov_matrix(&self, node: usize) -> Result<CovMatrix> {
        let l = self.lambda[node];
        CovMatrix::new(
            self.mean[node].iter().map(|v| v / l).collect(),
            self.cov[node].iter().map(|v| v / (l * l)).collect(),
        )
    }
}

/// [`field_stats_at_steps`] with times in `[0, T]` mapped to the nearest grid step.
pub fn field_stats(ensemble: &Ensemble, params: &ModelParams, r_nodes: &[Vec<f64>], times: &[f64]) -> Result<FieldStats> {
    let steps = times.iter().map(|&t| ensemble.grid().step_index(t)).collect::<Result<Vec<_>>>()?;
    field_stats_at_steps(ensemble, params, r_nodes, &steps)
}

/// Empirical `M(t, r)` and `Σ(s, t, r)` with delays rounded to the grid.
pub fn field_stats_at_steps(
    ensemble: &Ensemble,
    params: &ModelParams,
    r_nodes: &[Vec<f64>],
    steps: &[usize],
) -> Result<FieldStats> {
    if ensemble.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let grid = *ensemble.grid();
    check_steps(&grid, steps)?;
    let rates = RateTable::new(ensemble, params);
    let n = ensemble.len();
    let nt = steps.len();
    let inv = 1.0 / n as f64;

    let per_node = r_nodes
        .par_iter()
        .map(|r| -> Result<_> {
            let w = weights(ensemble, params, r)?;
            let mut sum = vec![0.0; nt];
            let mut sum_sq = vec![0.0; nt];
            let mut cov = vec![0.0; nt * nt];
            let mut diag_sq = vec![0.0; nt];
            let mut a = vec![0.0; nt];
            for j in 0..n {
                let path = rates.member(j);
                let shift = grid.n_hist - w.delay[j];
                for (t, &k) in steps.iter().enumerate() {
                    let s = path[shift + k];
                    let v = w.mean[j] * s;
                    sum[t] += v;
                    sum_sq[t] += v * v;
                    a[t] = w.std[j] * s;
                }
                for s in 0..nt {
                    let row = &mut cov[s * nt..(s + 1) * nt];
                    for t in s..nt {
                        row[t] += a[s] * a[t];
                    }
                    diag_sq[s] += a[s].powi(4);
                }
            }
            let se = |total: f64, total_sq: f64| {
                let mean = total * inv;
                if n < 2 {
                    return 0.0;
                }
                let var = ((total_sq * inv - mean * mean) * n as f64 / (n - 1) as f64).max(0.0);
                (var * inv).sqrt()
            };
            let mean_se: Vec<f64> = sum.iter().zip(&sum_sq).map(|(&s, &q)| se(s, q)).collect();
            let var_se: Vec<f64> = (0..nt).map(|t| se(cov[t * nt + t], diag_sq[t])).collect();
            for s in 0..nt {
                for t in s..nt {
                    cov[s * nt + t] *= inv;
                    cov[t * nt + s] = cov[s * nt + t];
                }
            }
            let mean: Vec<f64> = sum.iter().map(|v| v * inv).collect();
            Ok((params.lambda(r), mean, cov, mean_se, var_se))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut stats = FieldStats {
        r_nodes: r_nodes.to_vec(),
        steps: steps.to_vec(),
        dt: grid.dt,
        lambda: Vec::new(),
        mean: Vec::new(),
        cov: Vec::new(),
        mean_se: Vec::new(),
        var_se: Vec::new(),
        n_samples: n,
    };
    for (l, m, c, ms, vs) in per_node {
        stats.lambda.push(l);
        stats.mean.push(m);
        stats.cov.push(c);
        stats.mean_se.push(ms);
        stats.var_se.push(vs);
    }
    Ok(stats)
}

/// Largest admissible index shift between two paths at spatial distance `dist`.
fn shift_window(dist: f64, k_tau: f64, grid: &TimeGrid) -> usize {
    let w = (k_tau * dist / grid.dt).ceil();
    if w.is_finite() {
        (w.max(0.0) as usize).min(grid.n_hist)
    } else {
        grid.n_hist
    }
}

/// Delay-aware distance between two located paths:
///
/// ```text
/// d_T = sqrt( |r - r'|² + sup |x_{t+a} - y_{t+b}|² )
/// ```
///
/// the sup running over `t ∈ [0, T]` and history shifts `a, b ∈ [-τ̄, 0]`
/// with `|b - a| ≤ K_τ |r - r'|`. On the grid this is the max of
/// `|x_p - y_q|` over index pairs with `|p - q| ≤ ceil(K_τ |r - r'| / dt)`.
pub fn path_distance(a: &PathSample, b: &PathSample, k_tau: f64, grid: &TimeGrid) -> Result<f64> {
    if a.values.len() != grid.len() || b.values.len() != grid.len() {
        return Err(Error::GridMismatch(format!(
            "paths of length {} and {} on a grid of {} points",
            a.values.len(),
            b.values.len(),
            grid.len()
        )));
    }
    let dist = distance(&a.r, &b.r);
    let w = shift_window(dist, k_tau, grid);
    let (x, y) = (&a.values, &b.values);
    let len = x.len();
    let mut sup = 0.0f64;
    for p in 0..len {
        let lo = p.saturating_sub(w);
        let hi = (p + w).min(len - 1);
        let xp = x[p];
        for &yq in &y[lo..=hi] {
            sup = sup.max((xp - yq).abs());
        }
    }
    Ok((dist * dist + sup * sup).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Optimal matching between the two subsamples.
    ExactAssignment,
    /// Match atom `i` with atom `i` (an upper bound).
    IndexCoupling,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::ExactAssignment => "exact_assignment",
            Method::IndexCoupling => "index_coupling",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    pub value: f64,
    pub method: Method,
    /// Sizes of the two input ensembles.
    pub sample_sizes: (usize, usize),
    /// Number of atoms matched.
    pub subsample: usize,
}

/// First `n` entries of a seeded random permutation of `0..len` (partial
/// Fisher–Yates). Equal `len` and `seed` give identical index sets.
pub fn subsample_indices(len: usize, n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    if n >= len {
        return idx;
    }
    let mut rng = rng::stream(seed, &[rng::SUBSAMPLE, len as u64]);
    for i in 0..n {
        let j = rng.random_range(i..len);
        idx.swap(i, j);
    }
    idx.truncate(n);
    idx
}

/// Empirical 2-Wasserstein distance for the metric [`path_distance`] between
/// equal-size subsamples of two ensembles.
pub fn wasserstein2(
    a: &Ensemble,
    b: &Ensemble,
    k_tau: f64,
    subsample: usize,
    method: Method,
    seed: u64,
) -> Result<DistanceReport> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    if subsample == 0 {
        return Err(Error::InvalidArgument("subsample size must be >= 1".into()));
    }
    if !a.grid().matches(b.grid()) {
        return Err(Error::GridMismatch("ensembles live on different grids".into()));
    }
    let n = subsample.min(a.len()).min(b.len());
    let ia = subsample_indices(a.len(), n, seed);
    let ib = subsample_indices(b.len(), n, seed);
    let grid = a.grid();
    let cost = |i: usize, j: usize| -> Result<f64> {
        let d = path_distance(&a.members()[ia[i]], &b.members()[ib[j]], k_tau, grid)?;
        Ok(d * d)
    };
    let mean_cost = match method {
        Method::IndexCoupling => (0..n).map(|i| cost(i, i)).sum::<Result<f64>>()? / n as f64,
        Method::ExactAssignment => {
            let rows = (0..n)
                .into_par_iter()
                .map(|i| (0..n).map(|j| cost(i, j)).collect::<Result<Vec<f64>>>())
                .collect::<Result<Vec<_>>>()?;
            let matrix: Vec<f64> = rows.concat();
            assignment::solve(n, &matrix).1 / n as f64
        }
    };
    Ok(DistanceReport { value: mean_cost.max(0.0).sqrt(), method, sample_sizes: (a.len(), b.len()), subsample: n })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Config;
    use crate::model::build_model;
    use crate::network::{simulate_realization, simulate_uncoupled};
    use proptest::prelude::*;

    fn constant_kernel_model(j0: f64, s0: f64) -> ModelParams {
        let mut cfg = Config::default();
        cfg.coupling.mean.family = "constant".into();
        cfg.coupling.mean.amplitude = j0;
        cfg.coupling.std.family = "constant".into();
        cfg.coupling.std.amplitude = s0;
        cfg.coupling.delay.c_tau = 0.0;
        cfg.coupling.delay.tau0 = 0.0;
        build_model(&cfg).unwrap()
    }

    fn constant_ensemble(n: usize, value: f64, grid: TimeGrid) -> Ensemble {
        let members = (0..n)
            .map(|i| PathSample { r: vec![i as f64 / n as f64], values: vec![value; grid.len()] })
            .collect();
        Ensemble::new(grid, members).unwrap()
    }

    #[test]
    fn constant_paths_closed_form() {
        let p = constant_kernel_model(0.8, 0.6);
        let grid = TimeGrid::new(0.01, 0.0, 1.0).unwrap();
        let ens = constant_ensemble(7, 0.0, grid);
        let st = field_stats(&ens, &p, &[vec![0.2], vec![0.9]], &[0.0, 0.5, 1.0]).unwrap();
        for node in 0..2 {
            for s in 0..3 {
                assert!((st.mean[node][s] - 0.4).abs() < 1e-15);
                for t in 0..3 {
                    assert!((st.sigma(node, s, t) - 0.25 * 0.36).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn vanishing_kernels_vanish() {
        let p = constant_kernel_model(0.0, 0.0);
        let grid = TimeGrid::new(0.01, 0.0, 1.0).unwrap();
        let st = field_stats(&constant_ensemble(3, 1.0, grid), &p, &[vec![0.5]], &[0.3]).unwrap();
        assert_eq!((st.mean[0][0], st.cov[0][0]), (0.0, 0.0));
        let empty = Ensemble::new(grid, vec![]).unwrap();
        assert!(matches!(field_stats(&empty, &p, &[vec![0.5]], &[0.3]), Err(Error::EmptyEnsemble)));
    }

    #[test]
    fn stats_are_bounded_and_symmetric() {
        let p = build_model(&Config::default()).unwrap();
        let grid = TimeGrid::for_model(&p, 0.01).unwrap();
        let ens = simulate_realization(&p, 60, &grid, 3).unwrap();
        let nodes = p.domain.nodes(4);
        let st = field_stats(&ens, &p, &nodes, &[0.0, 0.25, 0.5, 0.75, 1.0]).unwrap();
        let c = &p.constants;
        for node in 0..nodes.len() {
            for s in 0..5 {
                assert!(st.mean[node][s].abs() <= c.j_sup);
                assert!(st.sigma(node, s, s) >= 0.0 && st.sigma(node, s, s) <= c.sigma_sup.powi(2));
                assert!(st.m(node, s).abs() <= c.j_sup / c.lambda_min);
                for t in 0..5 {
                    assert_eq!(st.sigma(node, s, t), st.sigma(node, t, s));
                }
            }
            crate::gaussian::cholesky_factor(&st.cov_matrix(node).unwrap()).unwrap();
        }
    }

    #[test]
    fn mean_profile_matches_field_stats() {
        let p = build_model(&Config::default()).unwrap();
        let grid = TimeGrid::for_model(&p, 0.01).unwrap();
        let ens = simulate_realization(&p, 30, &grid, 5).unwrap();
        let rates = RateTable::new(&ens, &p);
        let steps: Vec<usize> = (0..grid.n_main).collect();
        let r = vec![0.37];
        let prof = mean_profile(&ens, &rates, &p, &r, &steps).unwrap();
        let sparse = mean_profile(&ens, &rates, &p, &r, &[3, 50, 7]).unwrap();
        let st = field_stats_at_steps(&ens, &p, &[r], &steps).unwrap();
        for (a, b) in prof.iter().zip(&st.mean[0]) {
            assert!((a - b).abs() < 1e-14);
        }
        assert_eq!(sparse, vec![prof[3], prof[50], prof[7]]);
    }

    #[test]
    fn scaling_is_one_division() {
        let mut cfg = Config::default();
        cfg.noise.lambda0 = 2.0;
        let p = build_model(&cfg).unwrap();
        let grid = TimeGrid::for_model(&p, 0.01).unwrap();
        let ens = simulate_realization(&p, 10, &grid, 1).unwrap();
        let st = field_stats(&ens, &p, &[vec![0.5]], &[0.5, 1.0]).unwrap();
        assert_eq!(st.m(0, 1), st.mean[0][1] / 2.0);
        assert_eq!(st.k(0, 0, 1), st.sigma(0, 0, 1) / 4.0);
        let scaled = st.scaled_cov_matrix(0).unwrap();
        assert_eq!(scaled.get(0, 1), st.k(0, 0, 1));
    }

    fn sample(r: f64, values: Vec<f64>) -> PathSample {
        PathSample { r: vec![r], values }
    }

    /// Sup over admissible `(t, a, b)` grid triples, straight from the definition.
    fn brute_force_distance(a: &PathSample, b: &PathSample, k_tau: f64, grid: &TimeGrid) -> f64 {
        let dist = distance(&a.r, &b.r);
        let h = grid.n_hist as i64;
        let limit = (k_tau * dist / grid.dt).ceil();
        let mut sup = 0.0f64;
        for t in 0..=grid.n_main as i64 {
            for sa in -h..=0 {
                for sb in -h..=0 {
                    if ((sb - sa).abs() as f64) <= limit {
                        let p = (h + t + sa) as usize;
                        let q = (h + t + sb) as usize;
                        sup = sup.max((a.values[p] - b.values[q]).abs());
                    }
                }
            }
        }
        (dist * dist + sup * sup).sqrt()
    }

    #[test]
    fn three_point_toy() {
        let grid = TimeGrid { dt: 1.0, n_hist: 1, n_main: 1 };
        let x = sample(0.0, vec![0.0, 1.0, 0.0]);
        let y = sample(1.0, vec![0.0, 0.0, 1.0]);
        let d = path_distance(&x, &y, 1.0, &grid).unwrap();
        assert_eq!(d, brute_force_distance(&x, &y, 1.0, &grid));
        assert_eq!(d, 2f64.sqrt());
        // Without shifts only equal indices are compared.
        let y0 = sample(0.0, y.values.clone());
        assert_eq!(path_distance(&x, &y0, 1.0, &grid).unwrap(), 1.0);
    }

    #[test]
    fn same_location_is_sup_norm() {
        let grid = TimeGrid { dt: 0.1, n_hist: 3, n_main: 5 };
        let x = sample(0.3, (0..9).map(|i| (i as f64).sin()).collect());
        let y = sample(0.3, (0..9).map(|i| (i as f64).cos()).collect());
        let sup = x.values.iter().zip(&y.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert_eq!(path_distance(&x, &y, 5.0, &grid).unwrap(), sup);
        assert_eq!(path_distance(&x, &x, 5.0, &grid).unwrap(), 0.0);
        let short = sample(0.3, vec![0.0; 4]);
        assert!(matches!(path_distance(&x, &short, 5.0, &grid), Err(Error::GridMismatch(_))));
    }

    fn arb_path(len: usize) -> impl Strategy<Value = PathSample> {
        (0.0..1.0f64, proptest::collection::vec(-3.0..3.0f64, len)).prop_map(|(r, values)| sample(r, values))
    }

    proptest! {
        #[test]
        fn brute_force_agreement(a in arb_path(6), b in arb_path(6), k_tau in 0.0..5.0f64) {
            let grid = TimeGrid { dt: 0.25, n_hist: 3, n_main: 2 };
            prop_assert_eq!(path_distance(&a, &b, k_tau, &grid).unwrap(), brute_force_distance(&a, &b, k_tau, &grid));
        }

        #[test]
        fn metric_axioms(a in arb_path(12), b in arb_path(12), c in arb_path(12), k_tau in 0.0..3.0f64) {
            let grid = TimeGrid { dt: 0.1, n_hist: 4, n_main: 7 };
            let d = |x: &PathSample, y: &PathSample| path_distance(x, y, k_tau, &grid).unwrap();
            prop_assert_eq!(d(&a, &b), d(&b, &a));
            prop_assert_eq!(d(&a, &a), 0.0);
            prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-12);
        }

        #[test]
        fn monotone_in_delay_constant(a in arb_path(12), b in arb_path(12), k1 in 0.0..3.0f64, extra in 0.0..3.0f64) {
            let grid = TimeGrid { dt: 0.1, n_hist: 4, n_main: 7 };
            prop_assert!(path_distance(&a, &b, k1, &grid).unwrap() <= path_distance(&a, &b, k1 + extra, &grid).unwrap());
        }
    }

    fn ou_ensemble(n: usize, seed: u64) -> (ModelParams, Ensemble) {
        let p = build_model(&Config::default()).unwrap();
        let grid = TimeGrid::for_model(&p, 0.01).unwrap();
        let e = simulate_uncoupled(&p, n, &grid, seed).unwrap();
        (p, e)
    }

    #[test]
    fn wasserstein_trivial_cases() {
        let (p, a) = ou_ensemble(40, 1);
        let k = p.constants.k_tau;
        let same = wasserstein2(&a, &a, k, 40, Method::IndexCoupling, 3).unwrap();
        assert_eq!(same.value, 0.0);
        assert_eq!(same.subsample, 40);

        let perm: Vec<usize> = (0..40).map(|i| (i * 7 + 3) % 40).collect();
        let b = a.select(&perm);
        assert_eq!(wasserstein2(&a, &b, k, 40, Method::ExactAssignment, 3).unwrap().value, 0.0);
        assert!(wasserstein2(&a, &b, k, 40, Method::IndexCoupling, 3).unwrap().value > 0.0);

        let one_a = a.select(&[0]);
        let one_b = a.select(&[5]);
        let atoms = path_distance(&one_a.members()[0], &one_b.members()[0], k, a.grid()).unwrap();
        for m in [Method::ExactAssignment, Method::IndexCoupling] {
            assert!((wasserstein2(&one_a, &one_b, k, 10, m, 0).unwrap().value - atoms).abs() < 1e-15);
        }
        assert!(wasserstein2(&a, &b, k, 0, Method::IndexCoupling, 0).is_err());
    }

    #[test]
    fn assignment_never_exceeds_index_coupling() {
        let (p, a) = ou_ensemble(30, 1);
        let (_, b) = ou_ensemble(30, 2);
        for seed in 0..5 {
            let exact = wasserstein2(&a, &b, p.constants.k_tau, 20, Method::ExactAssignment, seed).unwrap();
            let index = wasserstein2(&a, &b, p.constants.k_tau, 20, Method::IndexCoupling, seed).unwrap();
            assert!(exact.value >= 0.0 && exact.value <= index.value + 1e-12);
        }
    }

    #[test]
    fn subsample_is_a_partial_permutation() {
        let idx = subsample_indices(100, 30, 9);
        let mut sorted = idx.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 30);
        assert_eq!(idx, subsample_indices(100, 30, 9));
        assert_eq!(subsample_indices(5, 10, 9), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn mean_stat_regularity_under_perturbation() {
        let p = build_model(&Config::default()).unwrap();
        let grid = TimeGrid::for_model(&p, 0.01).unwrap();
        let a = simulate_realization(&p, 200, &grid, 4).unwrap();
        let nodes = p.domain.nodes(4);
        let times = [0.2, 0.4, 0.6, 0.8, 1.0];
        let base = field_stats(&a, &p, &nodes, &times).unwrap();
        let mut ratios = Vec::new();
        let mut last = f64::INFINITY;
        for eps in [0.4, 0.2, 0.1, 0.05] {
            let members = a
                .members()
                .iter()
                .map(|m| PathSample { r: m.r.clone(), values: m.values.iter().map(|x| x + eps).collect() })
                .collect();
            let b = Ensemble::new(grid, members).unwrap();
            let st = field_stats(&b, &p, &nodes, &times).unwrap();
            let dm = (0..nodes.len())
                .flat_map(|n| (0..times.len()).map(move |t| (n, t)))
                .map(|(n, t)| (st.m(n, t) - base.m(n, t)).abs())
                .fold(0.0, f64::max);
            let w = wasserstein2(&a, &b, p.constants.k_tau, 64, Method::ExactAssignment, 1).unwrap().value;
            assert!(dm < last);
            last = dm;
            ratios.push(dm / w);
        }
        // Lipschitz bound: |Δm| ≤ ‖J‖∞ K_S ε / λ* and ŵ2 ≥ ε.
        let c = &p.constants;
        assert!(ratios.iter().all(|r| r.is_finite() && *r <= c.j_sup * c.k_s / c.lambda_min + 1e-12), "{ratios:?}");
    }
}
