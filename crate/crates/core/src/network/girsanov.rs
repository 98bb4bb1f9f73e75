//! Averaging the network Girsanov density over the couplings.
//!
//! For uncoupled paths `xⁱ` with Brownian drivers `Wⁱ`, the density of the
//! coupled network against the uncoupled one is
//! `exp Σᵢ [∫ Gⁱ dWⁱ − ½ ∫ (Gⁱ)² dt]` with `Gⁱ_t = λ⁻¹ Σⱼ Jᵢⱼ S(xʲ_{t−τᵢⱼ})`.
//! Conditionally on the paths, `Gⁱ` is Gaussian with the scaled mean and
//! covariance of the empirical measure of the paths at `rᵢ`, so averaging over
//! `J` equals a product of Gaussian averages. Both sides are estimated here.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{sample_coupling_row, Ensemble};
use crate::error::{Error, Result};
use crate::gaussian::{cholesky_factor, draw_path};
use crate::measure::{field_stats_at_steps, RateTable};
use crate::model::{distance, ModelParams};
use crate::rng;

const MAX_NEURONS: usize = 4;
const CHUNK: usize = 1024;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GirsanovCheck {
    /// Average over coupling draws of the joint density.
    pub lhs: f64,
    pub lhs_se: f64,
    /// Product over neurons of Gaussian-path averages.
    pub rhs: f64,
    pub rhs_se: f64,
    pub relative_error: f64,
}

/// Discretized path data shared by both estimators.
struct Frozen<'a> {
    params: &'a ModelParams,
    positions: &'a [Vec<f64>],
    rates: RateTable,
    /// Brownian increments per neuron.
    dw: Vec<Vec<f64>>,
    /// Delay in steps per (i, j).
    delays: Vec<usize>,
    lambdas: Vec<f64>,
    n_hist: usize,
    n_main: usize,
    dt: f64,
}

impl<'a> Frozen<'a> {
    fn new(params: &'a ModelParams, positions: &'a [Vec<f64>], frozen: &Ensemble) -> Result<Self> {
        let grid = *frozen.grid();
        let n = positions.len();
        let lambdas: Vec<f64> = positions.iter().map(|r| params.lambda(r)).collect();
        let dw = frozen
            .members()
            .iter()
            .enumerate()
            .map(|(i, m)| {
                (0..grid.n_main)
                    .map(|k| {
                        let p = grid.n_hist + k;
                        let x = m.values[p];
                        let t = k as f64 * grid.dt;
                        (m.values[p + 1] - x - grid.dt * params.f(&m.r, t, x)) / lambdas[i]
                    })
                    .collect()
            })
            .collect();
        let mut delays = Vec::with_capacity(n * n);
        for ri in positions {
            for rj in positions {
                let tau = params.delay.eval(distance(ri, rj));
                let d = grid.delay_steps(tau);
                if d > grid.n_hist {
                    return Err(Error::DelayExceedsHistory { delay: tau, window: grid.n_hist as f64 * grid.dt });
                }
                delays.push(d);
            }
        }
        Ok(Self {
            params,
            positions,
            rates: RateTable::new(frozen, params),
            dw,
            delays,
            lambdas,
            n_hist: grid.n_hist,
            n_main: grid.n_main,
            dt: grid.dt,
        })
    }

    /// `∫ G dW − ½ ∫ G² dt` along the increments of neuron `i`.
    fn exponent(&self, i: usize, g: impl Fn(usize) -> f64) -> f64 {
        let mut acc = 0.0;
        for (k, dw) in self.dw[i].iter().enumerate() {
            let gk = g(k);
            acc += gk * dw - 0.5 * gk * gk * self.dt;
        }
        acc
    }

    /// Density exponent of neuron `i` for one draw of its coupling row.
    fn row_exponent(&self, i: usize, row: &[f64]) -> f64 {
        let n = self.positions.len();
        let shifts: Vec<usize> = (0..n).map(|j| self.n_hist - self.delays[i * n + j]).collect();
        let inv_lambda = 1.0 / self.lambdas[i];
        self.exponent(i, |k| {
            let mut s = 0.0;
            for j in 0..n {
                s += row[j] * self.rates.member(j)[shifts[j] + k];
            }
            s * inv_lambda
        })
    }

    fn row_factors<R: Rng + ?Sized>(&self, rng: &mut R, row: &mut [f64]) -> f64 {
        let mut total = 0.0;
        for i in 0..self.positions.len() {
            sample_coupling_row(self.params, self.positions, i, rng, row);
            total += self.row_exponent(i, row);
        }
        total
    }
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn chunked<F>(count: usize, seed: u64, tag: u64, f: F) -> Vec<f64>
where
    F: Fn(&mut rand_chacha::ChaCha8Rng) -> f64 + Sync,
{
    let chunks = count.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = rng::stream(seed, &[rng::IDENTITY, tag, c as u64]);
            let len = CHUNK.min(count - c * CHUNK);
            (0..len).map(|_| f(&mut rng)).collect::<Vec<_>>()
        })
        .collect()
}

/// Compare the coupling-averaged network density with the product of
/// Gaussian averages under the empirical statistics of `frozen`.
pub fn girsanov_average_check(
    params: &ModelParams,
    positions: &[Vec<f64>],
    frozen: &Ensemble,
    n_j: usize,
    n_g: usize,
    seed: u64,
) -> Result<GirsanovCheck> {
    let n = positions.len();
    if n == 0 {
        return Err(Error::EmptyNetwork);
    }
    if n > MAX_NEURONS {
        return Err(Error::NetworkTooLarge(n));
    }
    if n_j == 0 || n_g == 0 {
        return Err(Error::InvalidArgument("sample counts must be >= 1".into()));
    }
    if frozen.len() != n || frozen.members().iter().zip(positions).any(|(m, r)| &m.r != r) {
        return Err(Error::InvalidArgument("frozen paths must be located at the given positions".into()));
    }
    let data = Frozen::new(params, positions, frozen)?;

    let lhs_draws = chunked(n_j, seed, 1, |rng| {
        let mut row = vec![0.0; n];
        data.row_factors(rng, &mut row).exp()
    });
    let (lhs, lhs_se) = mean_and_se(&lhs_draws);

    let steps: Vec<usize> = (0..data.n_main).collect();
    let stats = field_stats_at_steps(frozen, params, positions, &steps)?;
    let mut rhs = 1.0;
    let mut rel_var = 0.0;
    for i in 0..n {
        let cov = stats.scaled_cov_matrix(i)?;
        let factor = cholesky_factor(&cov)?;
        let draws = chunked(n_g, seed, 2 + i as u64, |rng| {
            let mut xi = vec![0.0; data.n_main];
            let mut g = vec![0.0; data.n_main];
            draw_path(&factor, cov.mean(), rng, &mut xi, &mut g);
            data.exponent(i, |k| g[k]).exp()
        });
        let (mean, se) = mean_and_se(&draws);
        rhs *= mean;
        rel_var += (se / mean).powi(2);
    }
    let rhs_se = rhs * rel_var.sqrt();
    Ok(GirsanovCheck { lhs, lhs_se, rhs, rhs_se, relative_error: (lhs - rhs).abs() / rhs })
}

/// Per-neuron density factors for `n_draws` independent draws of row `i`.
#[cfg(test)]
fn row_factor_draws(
    params: &ModelParams,
    positions: &[Vec<f64>],
    frozen: &Ensemble,
    i: usize,
    n_draws: usize,
    seed: u64,
) -> Vec<f64> {
    let data = Frozen::new(params, positions, frozen).unwrap();
    let mut rng = rng::stream(seed, &[rng::IDENTITY, 100, i as u64]);
    let mut row = vec![0.0; positions.len()];
    (0..n_draws)
        .map(|_| {
            sample_coupling_row(params, positions, i, &mut rng, &mut row);
            data.row_exponent(i, &row).exp()
        })
        .collect()
}
