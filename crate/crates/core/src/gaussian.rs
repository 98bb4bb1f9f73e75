//! Gaussian-process machinery on a time grid: covariance sampling, the
//! reweighting functional `Λ_t`, the tilted covariance `K̃ᵗ` and closed-form
//! Gaussian moments.
//!
//! Time integrals are left-endpoint Riemann sums, the same convention as the
//! Euler–Maruyama integrator. `Λ_t` is the plug-in self-normalized estimator
//! over a fixed draw set, so every Λ-weighted quantity carries an
//! `O(1/√m)` Monte Carlo error.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng;

/// Jitter ladder, as multiples of the largest diagonal entry.
const JITTER_LADDER: [f64; 6] = [0.0, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8];
const SYMMETRY_TOL: f64 = 1e-12;

/// Mean vector and covariance matrix of a process sampled on `n` grid times.
#[derive(Clone, Debug, PartialEq)]
pub struct CovMatrix {
    n: usize,
    /// Row-major `n × n`.
    entries: Vec<f64>,
    mean: Vec<f64>,
}

impl CovMatrix {
    pub fn new(mean: Vec<f64>, entries: Vec<f64>) -> Result<Self> {
        let n = mean.len();
        if entries.len() != n * n {
            return Err(Error::InvalidArgument(format!(
                "covariance has {} entries, expected {n}x{n}",
                entries.len()
            )));
        }
        let scale = entries.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..n {
            for j in 0..i {
                let (a, b) = (entries[i * n + j], entries[j * n + i]);
                if (a - b).abs() > SYMMETRY_TOL * scale {
                    return Err(Error::InvalidArgument(format!("covariance is not symmetric at ({i}, {j})")));
                }
            }
        }
        if entries.iter().chain(&mean).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("covariance has non-finite entries".into()));
        }
        Ok(Self { n, entries, mean })
    }

    pub fn from_fn(mean: Vec<f64>, cov: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let n = mean.len();
        let entries = (0..n * n).map(|k| cov(k / n, k % n)).collect();
        Self::new(mean, entries)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }
}

/// Lower-triangular factor `L` with `L Lᵀ = C + jitter · max(diag C) · I`.
#[derive(Clone, Debug)]
pub struct CholeskyFactor {
    n: usize,
    lower: Vec<f64>,
    jitter: f64,
}

impl CholeskyFactor {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Relative jitter that was needed (0 when the matrix factored as is).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.lower[i * self.n + j]
    }

    /// `out = L · xi`.
    pub fn apply(&self, xi: &[f64], out: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let row = &self.lower[i * n..i * n + i + 1];
            out[i] = row.iter().zip(&xi[..=i]).map(|(l, z)| l * z).sum();
        }
    }
}

/// Factor a covariance matrix, escalating diagonal jitter from `1e-12` to
/// `1e-8` times the largest variance before giving up.
pub fn cholesky_factor(cov: &CovMatrix) -> Result<CholeskyFactor> {
    let n = cov.n;
    let max_diag = (0..n).map(|i| cov.get(i, i)).fold(0.0f64, f64::max);
    if max_diag <= 0.0 {
        // Only the zero matrix is PSD with a non-positive diagonal.
        if cov.entries.iter().all(|&v| v == 0.0) {
            return Ok(CholeskyFactor { n, lower: vec![0.0; n * n], jitter: 0.0 });
        }
        return Err(Error::Cholesky { size: n, jitter: 0.0 });
    }
    let base = DMatrix::from_row_slice(n, n, &cov.entries);
    for &eps in &JITTER_LADDER {
        let mut m = base.clone();
        if eps > 0.0 {
            for i in 0..n {
                m[(i, i)] += eps * max_diag;
            }
        }
        if let Some(chol) = m.cholesky() {
            let l = chol.l();
            let mut lower = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..=i {
                    lower[i * n + j] = l[(i, j)];
                }
            }
            return Ok(CholeskyFactor { n, lower, jitter: eps });
        }
    }
    Err(Error::Cholesky { size: n, jitter: *JITTER_LADDER.last().unwrap() })
}

/// Realizations of a Gaussian process on the time grid, one row per draw.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianDraws {
    m_samples: usize,
    n: usize,
    paths: Vec<f64>,
}

impl GaussianDraws {
    pub fn from_rows(n: usize, paths: Vec<f64>) -> Result<Self> {
        if n == 0 || paths.len() % n != 0 {
            return Err(Error::InvalidArgument("draw matrix has inconsistent shape".into()));
        }
        Ok(Self { m_samples: paths.len() / n, n, paths })
    }

    pub fn m_samples(&self) -> usize {
        self.m_samples
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn path(&self, i: usize) -> &[f64] {
        &self.paths[i * self.n..(i + 1) * self.n]
    }

    pub fn paths(&self) -> impl Iterator<Item = &[f64]> {
        self.paths.chunks(self.n)
    }
}

/// Fill `out` with `mean + L ξ` for a fresh standard normal vector `ξ`
/// drawn from `rng`.
pub(crate) fn draw_path<R: rand::Rng + ?Sized>(
    factor: &CholeskyFactor,
    mean: &[f64],
    rng: &mut R,
    xi: &mut [f64],
    out: &mut [f64],
) {
    for z in xi.iter_mut() {
        *z = StandardNormal.sample(rng);
    }
    factor.apply(xi, out);
    for (o, m) in out.iter_mut().zip(mean) {
        *o += m;
    }
}

/// `m_samples` independent draws of `N(mean, entries)`. Draw `i` uses the
/// substream `(seed, GAUSSIAN, i)`, so the result does not depend on the
/// number of worker threads.
pub fn cholesky_sample(cov: &CovMatrix, m_samples: usize, seed: u64) -> Result<GaussianDraws> {
    let factor = cholesky_factor(cov)?;
    let n = cov.n;
    let mut paths = vec![0.0; m_samples * n];
    if n > 0 {
        paths.par_chunks_mut(n).enumerate().for_each_init(
            || vec![0.0; n],
            |xi, (i, out)| {
                let mut rng = rng::stream(seed, &[rng::GAUSSIAN, i as u64]);
                draw_path(&factor, &cov.mean, &mut rng, xi, out);
            },
        );
    }
    Ok(GaussianDraws { m_samples, n, paths })
}

/// Left-endpoint integral `Σ_{k < t_index} G_k² dt` for every draw.
fn half_energy(draws: &GaussianDraws, t_index: usize, dt: f64) -> Vec<f64> {
    draws
        .paths()
        .map(|g| 0.5 * g[..t_index].iter().map(|x| x * x).sum::<f64>() * dt)
        .collect()
}

/// Self-normalized weights from the exponents `e_i = ½∫₀ᵗ G_i² ds`.
fn normalized_weights(energy: &[f64]) -> Vec<f64> {
    let floor = energy.iter().copied().fold(f64::INFINITY, f64::min);
    let raw: Vec<f64> = energy.iter().map(|e| (floor - e).exp()).collect();
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    raw.into_iter().map(|w| w / mean).collect()
}

/// `Λ_t(G) = exp{-½∫₀ᵗ G²} / mean over draws of the same numerator`.
pub fn lambda_weight(draws: &GaussianDraws, t_index: usize, dt: f64) -> Result<Vec<f64>> {
    if draws.m_samples == 0 {
        return Err(Error::EmptyDraws);
    }
    if t_index >= draws.n {
        return Err(Error::IndexOrder(format!("t_index {t_index} outside grid of {}", draws.n)));
    }
    Ok(normalized_weights(&half_energy(draws, t_index, dt)))
}

/// Tilted covariance `K̃ᵗ(s, u) = mean of G_u G_s Λ_t(G)`.
pub fn tilted_covariance(
    draws: &GaussianDraws,
    t_index: usize,
    s_index: usize,
    u_index: usize,
    dt: f64,
) -> Result<f64> {
    if s_index > t_index || u_index > t_index {
        return Err(Error::IndexOrder(format!(
            "need s ({s_index}) and u ({u_index}) not after t ({t_index})"
        )));
    }
    let w = lambda_weight(draws, t_index, dt)?;
    let acc: f64 = draws.paths().zip(&w).map(|(g, wi)| g[s_index] * g[u_index] * wi).sum();
    Ok(acc / draws.m_samples as f64)
}

/// `E[exp{½ X²}]` for `X ~ N(m, v)`: `(1-v)^{-1/2} exp{m² / (2(1-v))}`.
pub fn exp_quadratic_moment(m: f64, v: f64) -> Result<f64> {
    if !(v < 1.0) {
        return Err(Error::MomentDiverges(v));
    }
    if v < 0.0 {
        return Err(Error::InvalidArgument(format!("variance must be >= 0, got {v}")));
    }
    Ok((1.0 - v).powf(-0.5) * (m * m / (2.0 * (1.0 - v))).exp())
}

/// Monte Carlo mean and standard error of `exp{½ X²}`, `X ~ N(m, v)`.
pub fn exp_quadratic_moment_mc(m: f64, v: f64, samples: usize, seed: u64) -> Result<(f64, f64)> {
    if samples < 2 {
        return Err(Error::InvalidArgument("need at least two samples".into()));
    }
    if v < 0.0 {
        return Err(Error::InvalidArgument(format!("variance must be >= 0, got {v}")));
    }
    const CHUNK: usize = 4096;
    let sd = v.sqrt();
    let chunks = samples.div_ceil(CHUNK);
    let (sum, sum_sq) = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng::stream(seed, &[rng::GAUSSIAN, c as u64]);
            let len = CHUNK.min(samples - c * CHUNK);
            let mut s = 0.0;
            let mut s2 = 0.0;
            for _ in 0..len {
                let z: f64 = StandardNormal.sample(&mut rng);
                let x = m + sd * z;
                let y = (0.5 * x * x).exp();
                s += y;
                s2 += y * y;
            }
            (s, s2)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let n = samples as f64;
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok((mean, (var / n).sqrt()))
}

/// Both sides of the tilted-covariance expectation identity for the
/// constant-in-time process `G_t = Z`, `Z ~ N(0, v)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KtildeCheck {
    /// Monte Carlo `E[exp{-½∫₀ᵀ G² dt}]`.
    pub direct: f64,
    /// `exp{-½∫₀ᵀ K̃ᵗ(t, t) dt}` from the same draws.
    pub tilted: f64,
    /// Closed form `(1 + vT)^{-1/2}`.
    pub truth: f64,
    pub relative_error: f64,
}

/// Evaluate the identity `E[exp{-½∫G²}] = exp{-½∫K̃ᵗ(t,t)dt}` on draws of a
/// constant-in-time process with variance `v` over `[0, horizon]`.
pub fn check_ktilde_identity(v: f64, horizon: f64, m_samples: usize, n_steps: usize, seed: u64) -> Result<KtildeCheck> {
    if !(v >= 0.0) || !(horizon > 0.0) {
        return Err(Error::InvalidArgument(format!("need v >= 0 and T > 0 (v = {v}, T = {horizon})")));
    }
    if m_samples == 0 || n_steps == 0 {
        return Err(Error::EmptyDraws);
    }
    let scalar = CovMatrix::new(vec![0.0], vec![v])?;
    let z = cholesky_sample(&scalar, m_samples, seed)?;
    let z = z.paths;
    let dt = horizon / n_steps as f64;

    let direct = z.iter().map(|g| (-0.5 * g * g * horizon).exp()).sum::<f64>() / m_samples as f64;
    let tilted = (-0.5 * tilted_diag_integral(n_steps, dt, |_| z.as_slice())).exp();
    let truth = (1.0 + v * horizon).powf(-0.5);
    Ok(KtildeCheck { direct, tilted, truth, relative_error: (direct - tilted).abs() / truth })
}

/// `Σ_k K̃^{t_k}(t_k, t_k) dt` where `column(k)` returns the values `G_{t_k}`
/// of all draws.
pub(crate) fn tilted_diag_integral<'a, F>(n_steps: usize, dt: f64, column: F) -> f64
where
    F: Fn(usize) -> &'a [f64],
{
    let m = column(0).len();
    let mut energy = vec![0.0; m];
    let mut total = 0.0;
    for k in 0..n_steps {
        let g = column(k);
        let w = normalized_weights(&energy);
        let ktilde = g.iter().zip(&w).map(|(x, wi)| x * x * wi).sum::<f64>() / m as f64;
        total += ktilde * dt;
        for (e, x) in energy.iter_mut().zip(g) {
            *e += 0.5 * x * x * dt;
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn column_variance(d: &GaussianDraws, j: usize) -> f64 {
        let m = d.m_samples() as f64;
        let mean = d.paths().map(|p| p[j]).sum::<f64>() / m;
        d.paths().map(|p| (p[j] - mean).powi(2)).sum::<f64>() / (m - 1.0)
    }

    #[test]
    fn degenerate_gaussian_returns_the_mean() {
        let mean = vec![0.5, -1.0, 2.0];
        let cov = CovMatrix::new(mean.clone(), vec![0.0; 9]).unwrap();
        let d = cholesky_sample(&cov, 50, 3).unwrap();
        assert!(d.paths().all(|p| p == mean.as_slice()));
    }

    #[test]
    fn identity_covariance_has_unit_column_variance() {
        let n = 4;
        let cov = CovMatrix::from_fn(vec![0.0; n], |i, j| if i == j { 1.0 } else { 0.0 }).unwrap();
        let d = cholesky_sample(&cov, 100_000, 11).unwrap();
        for j in 0..n {
            let v = column_variance(&d, j);
            assert!((0.98..=1.02).contains(&v), "column {j}: {v}");
            let mean = d.paths().map(|p| p[j]).sum::<f64>() / 1e5;
            assert!(mean.abs() < 4.0 / (1e5f64).sqrt());
        }
    }

    #[test]
    fn sampled_covariance_matches_target() {
        let cov = CovMatrix::new(vec![1.0, -1.0], vec![2.0, 0.6, 0.6, 0.5]).unwrap();
        let d = cholesky_sample(&cov, 200_000, 5).unwrap();
        let m = d.m_samples() as f64;
        let c01 = d.paths().map(|p| (p[0] - 1.0) * (p[1] + 1.0)).sum::<f64>() / m;
        assert!((c01 - 0.6).abs() < 0.02);
        assert!((column_variance(&d, 0) - 2.0).abs() < 0.04);
    }

    #[test]
    fn indefinite_matrix_fails_after_jitter_cap() {
        let cov = CovMatrix::new(vec![0.0; 2], vec![1.0, 1.001, 1.001, 1.0]).unwrap();
        assert!(matches!(cholesky_factor(&cov), Err(Error::Cholesky { .. })));
    }

    #[test]
    fn rank_deficient_matrix_factors_with_jitter() {
        let v = [1.0, 0.5, 0.25, 0.125];
        let cov = CovMatrix::from_fn(vec![0.0; 4], |i, j| v[i] * v[j]).unwrap();
        let f = cholesky_factor(&cov).unwrap();
        assert!(f.jitter() <= 1e-8);
    }

    #[test]
    fn asymmetric_matrix_is_rejected() {
        assert!(CovMatrix::new(vec![0.0; 2], vec![1.0, 0.5, 0.4, 1.0]).is_err());
    }

    #[test]
    fn sampling_is_reproducible() {
        let cov = CovMatrix::from_fn(vec![0.0; 5], |i, j| (-((i as f64) - (j as f64)).abs()).exp()).unwrap();
        let a = cholesky_sample(&cov, 300, 9).unwrap();
        let b = cholesky_sample(&cov, 300, 9).unwrap();
        assert_eq!(a, b);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let c = pool.install(|| cholesky_sample(&cov, 300, 9).unwrap());
        assert_eq!(a, c);
    }

    #[test]
    fn zero_process_has_unit_weights_and_zero_tilted_covariance() {
        let d = GaussianDraws::from_rows(3, vec![0.0; 30]).unwrap();
        let w = lambda_weight(&d, 2, 0.1).unwrap();
        assert!(w.iter().all(|&x| x == 1.0));
        assert_eq!(tilted_covariance(&d, 2, 1, 2, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn lambda_rejects_bad_inputs() {
        let d = GaussianDraws::from_rows(3, vec![]).unwrap();
        assert!(matches!(lambda_weight(&d, 0, 0.1), Err(Error::EmptyDraws)));
        let d = GaussianDraws::from_rows(3, vec![0.0; 3]).unwrap();
        assert!(lambda_weight(&d, 3, 0.1).is_err());
        assert!(matches!(tilted_covariance(&d, 1, 2, 0, 0.1), Err(Error::IndexOrder(_))));
    }

    #[test]
    fn tilted_variance_of_constant_process() {
        // Closed form: E[Z² e^{-Z²t/2}] / E[e^{-Z²t/2}] = v / (1 + v t); 0.5 at v = t = 1.
        let n = 11;
        let dt = 0.1;
        let z = cholesky_sample(&CovMatrix::new(vec![0.0], vec![1.0]).unwrap(), 100_000, 17).unwrap();
        let rows: Vec<f64> = z.paths().flat_map(|p| std::iter::repeat(p[0]).take(n)).collect();
        let d = GaussianDraws::from_rows(n, rows).unwrap();
        let k = tilted_covariance(&d, 10, 10, 10, dt).unwrap();
        // sd of Z² Λ_1(Z) is sqrt(2 E[Z⁴ e^{-Z²}] - 1/4) = 0.367; 5 standard errors.
        assert!((k - 0.5).abs() < 5.0 * 0.367 / (1e5f64).sqrt(), "{k}");
    }

    #[test]
    fn streaming_integral_matches_pointwise_definition() {
        let cov = CovMatrix::from_fn(vec![0.1; 6], |i, j| 0.3 * (-0.5 * ((i as f64) - (j as f64)).abs()).exp()).unwrap();
        let d = cholesky_sample(&cov, 400, 2).unwrap();
        let dt = 0.2;
        let columns: Vec<Vec<f64>> = (0..6).map(|k| d.paths().map(|p| p[k]).collect()).collect();
        let streamed = tilted_diag_integral(6, dt, |k| columns[k].as_slice());
        let pointwise: f64 = (0..6).map(|k| tilted_covariance(&d, k, k, k, dt).unwrap() * dt).sum();
        assert!((streamed - pointwise).abs() < 1e-12);
    }

    #[test]
    fn quadratic_moment_closed_form() {
        assert_eq!(exp_quadratic_moment(0.0, 0.0).unwrap(), 1.0);
        assert!((exp_quadratic_moment(0.0, 0.5).unwrap() - 2f64.sqrt()).abs() < 1e-12);
        let v = exp_quadratic_moment(1.0, 0.5).unwrap();
        assert!((v - 2f64.sqrt() * 1f64.exp()).abs() < 1e-12);
        assert!((v - 3.84423).abs() < 1e-5);
        assert!(matches!(exp_quadratic_moment(0.0, 1.0), Err(Error::MomentDiverges(_))));
    }

    #[test]
    fn quadratic_moment_agrees_with_sampler() {
        let (mc, se) = exp_quadratic_moment_mc(1.0, 0.5, 1_000_000, 8).unwrap();
        let cf = exp_quadratic_moment(1.0, 0.5).unwrap();
        assert!((mc - cf).abs() <= 5.0 * se, "mc {mc} se {se} cf {cf}");
    }

    #[test]
    fn ktilde_identity_cases() {
        let zero = check_ktilde_identity(0.0, 1.0, 1000, 100, 1).unwrap();
        assert_eq!(zero.relative_error, 0.0);
        assert_eq!(zero.direct, 1.0);

        let c = check_ktilde_identity(1.0, 1.0, 100_000, 1000, 21).unwrap();
        assert!((c.truth - 0.5f64.sqrt()).abs() < 1e-15);
        assert!(c.relative_error < 0.02);
        assert!((c.direct - c.truth).abs() / c.truth < 0.02);

        let c = check_ktilde_identity(4.0, 2.0, 100_000, 1000, 22).unwrap();
        assert!((c.truth - 1.0 / 3.0).abs() < 1e-15);
        assert!(c.relative_error < 0.05);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn weights_are_self_normalized(seed in any::<u64>(), t in 0usize..8, scale in 0.0f64..3.0) {
            let cov = CovMatrix::from_fn(vec![0.0; 8], |i, j| scale * (-((i as f64) - (j as f64)).abs() / 3.0).exp()).unwrap();
            let d = cholesky_sample(&cov, 64, seed).unwrap();
            let w = lambda_weight(&d, t, 0.1).unwrap();
            let mean = w.iter().sum::<f64>() / w.len() as f64;
            prop_assert!((mean - 1.0).abs() < 1e-12);
        }

        #[test]
        fn tilted_covariance_is_symmetric(seed in any::<u64>(), s in 0usize..6, u in 0usize..6) {
            let cov = CovMatrix::from_fn(vec![0.2; 6], |i, j| 0.5 * (-((i as f64) - (j as f64)).abs()).exp()).unwrap();
            let d = cholesky_sample(&cov, 32, seed).unwrap();
            let a = tilted_covariance(&d, 5, s, u, 0.1).unwrap();
            let b = tilted_covariance(&d, 5, u, s, 0.1).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
