//! Validated model: intrinsic dynamics, sigmoid, coupling kernels, delays,
//! diffusion, spatial domain and initial law.

use std::f64::consts::PI;

use rand::Rng;

use crate::config::{Config, KernelConfig};
use crate::error::{Error, Result};
use crate::rng;

const DOMAIN_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Density {
    Uniform,
}

/// Compact box `D ⊂ ℝ^d` with a location density.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialDomain {
    bounds: Vec<(f64, f64)>,
    density: Density,
}

impl SpatialDomain {
    pub fn new(bounds: Vec<(f64, f64)>, density: Density) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::Config("domain dimension must be at least 1".into()));
        }
        for (axis, &(lo, hi)) in bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Config(format!("domain axis {axis} has degenerate interval [{lo}, {hi}]")));
            }
        }
        Ok(Self { bounds, density })
    }

    pub fn unit(dim: usize) -> Self {
        Self { bounds: vec![(0.0, 1.0); dim], density: Density::Uniform }
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn density(&self) -> Density {
        self.density
    }

    pub fn contains(&self, r: &[f64]) -> bool {
        r.len() == self.dim()
            && r.iter().zip(&self.bounds).all(|(&x, &(lo, hi))| x >= lo - DOMAIN_TOL && x <= hi + DOMAIN_TOL)
    }

    pub fn diameter(&self) -> f64 {
        self.bounds.iter().map(|(lo, hi)| (hi - lo) * (hi - lo)).sum::<f64>().sqrt()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self.density {
            Density::Uniform => self.bounds.iter().map(|&(lo, hi)| lo + (hi - lo) * rng.random::<f64>()).collect(),
        }
    }

    /// Cell-centred nodes, `per_axis` along every axis, first axis fastest.
    pub fn nodes(&self, per_axis: usize) -> Vec<Vec<f64>> {
        let per_axis = per_axis.max(1);
        let total = per_axis.pow(self.dim() as u32);
        (0..total)
            .map(|mut flat| {
                self.bounds
                    .iter()
                    .map(|&(lo, hi)| {
                        let i = flat % per_axis;
                        flat /= per_axis;
                        lo + (hi - lo) * (i as f64 + 0.5) / per_axis as f64
                    })
                    .collect()
            })
            .collect()
    }

    /// Index into [`Self::nodes`] of the node nearest to `r`.
    pub fn nearest_node(&self, r: &[f64], per_axis: usize) -> usize {
        let per_axis = per_axis.max(1);
        let mut flat = 0;
        let mut stride = 1;
        for (&x, &(lo, hi)) in r.iter().zip(&self.bounds) {
            let cell = (((x - lo) / (hi - lo)) * per_axis as f64).floor();
            let cell = cell.clamp(0.0, per_axis as f64 - 1.0) as usize;
            flat += cell * stride;
            stride *= per_axis;
        }
        flat
    }
}

#[inline]
pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Intrinsic dynamics `f(r, t, x)`.
#[derive(Clone, Debug, PartialEq)]
pub enum Intrinsic {
    LeakyCosine { decay: f64, amplitude: f64, frequency: f64, wavevector: Vec<f64> },
}

impl Intrinsic {
    #[inline]
    pub fn eval(&self, r: &[f64], t: f64, x: f64) -> f64 {
        match self {
            Intrinsic::LeakyCosine { decay, amplitude, frequency, wavevector } => {
                if *amplitude == 0.0 {
                    return -decay * x;
                }
                let phase: f64 = wavevector.iter().zip(r).map(|(k, ri)| k * ri).sum();
                -decay * x + amplitude * (2.0 * PI * (frequency * t + phase)).cos()
            }
        }
    }

    /// Lipschitz constant in `(r, t, x)` jointly (Euclidean norm of the gradient bound).
    fn lipschitz(&self) -> f64 {
        match self {
            Intrinsic::LeakyCosine { decay, amplitude, frequency, wavevector } => {
                let k_norm = wavevector.iter().map(|k| k * k).sum::<f64>().sqrt();
                let dt = 2.0 * PI * amplitude.abs() * frequency.abs();
                let dr = 2.0 * PI * amplitude.abs() * k_norm;
                (decay * decay + dt * dt + dr * dr).sqrt()
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Sigmoid {
    Logistic { gain: f64 },
}

impl Sigmoid {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Sigmoid::Logistic { gain } => 1.0 / (1.0 + (-gain * x).exp()),
        }
    }

    fn lipschitz(&self) -> f64 {
        match *self {
            Sigmoid::Logistic { gain } => gain / 4.0,
        }
    }
}

/// Radial coupling kernel as a function of `|r - r'|`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Kernel {
    Exponential { amplitude: f64, length: f64 },
    Constant { amplitude: f64 },
}

impl Kernel {
    #[inline]
    pub fn eval(&self, dist: f64) -> f64 {
        match *self {
            Kernel::Exponential { amplitude, length } => {
                if amplitude == 0.0 {
                    0.0
                } else {
                    amplitude * (-dist / length).exp()
                }
            }
            Kernel::Constant { amplitude } => amplitude,
        }
    }

    pub fn amplitude(&self) -> f64 {
        match *self {
            Kernel::Exponential { amplitude, .. } | Kernel::Constant { amplitude } => amplitude,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.amplitude() == 0.0
    }

    fn sup(&self) -> f64 {
        self.amplitude().abs()
    }

    fn lipschitz(&self) -> f64 {
        match *self {
            Kernel::Exponential { amplitude, length } => amplitude.abs() / length,
            Kernel::Constant { .. } => 0.0,
        }
    }

    pub(crate) fn with_amplitude(self, amplitude: f64) -> Self {
        match self {
            Kernel::Exponential { length, .. } => Kernel::Exponential { amplitude, length },
            Kernel::Constant { .. } => Kernel::Constant { amplitude },
        }
    }
}

/// `τ(r, r') = tau0 + c_tau * |r - r'|`
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Delay {
    pub tau0: f64,
    pub c_tau: f64,
}

impl Delay {
    #[inline]
    pub fn eval(&self, dist: f64) -> f64 {
        self.tau0 + self.c_tau * dist
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Diffusion {
    Constant { lambda0: f64 },
}

impl Diffusion {
    #[inline]
    pub fn eval(&self, _r: &[f64]) -> f64 {
        match *self {
            Diffusion::Constant { lambda0 } => lambda0,
        }
    }

    fn lower_bound(&self) -> f64 {
        match *self {
            Diffusion::Constant { lambda0 } => lambda0,
        }
    }
}

/// Law of the initial history segment: `x̄⁰_s(r) = ψ(r) + s0 * η_s` with
/// `ψ(r) = offset + <slope, r>` and `η` a Brownian path on `[-τ̄, 0]`
/// started at zero.
#[derive(Clone, Debug, PartialEq)]
pub struct InitialLaw {
    pub offset: f64,
    pub slope: Vec<f64>,
    pub noise_scale: f64,
    pub lipschitz_c0: f64,
}

impl InitialLaw {
    /// Mean profile `ψ(r)`.
    #[inline]
    pub fn profile(&self, r: &[f64]) -> f64 {
        self.offset + self.slope.iter().zip(r).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn profile_lipschitz(&self) -> f64 {
        self.slope.iter().map(|a| a * a).sum::<f64>().sqrt()
    }
}

/// Regularity constants of the model, derived from the coefficients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Constants {
    pub k_f: f64,
    pub k_s: f64,
    pub k_j: f64,
    pub k_sigma: f64,
    pub k_tau: f64,
    pub k_lambda: f64,
    pub j_sup: f64,
    pub sigma_sup: f64,
    /// Maximal delay `τ̄`.
    pub tau_bar: f64,
    /// Diffusion lower bound `λ*`.
    pub lambda_min: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub domain: SpatialDomain,
    pub intrinsic: Intrinsic,
    pub sigmoid: Sigmoid,
    pub mean_kernel: Kernel,
    pub std_kernel: Kernel,
    pub delay: Delay,
    pub diffusion: Diffusion,
    pub horizon: f64,
    pub initial: InitialLaw,
    pub constants: Constants,
}

impl ModelParams {
    #[inline]
    pub fn f(&self, r: &[f64], t: f64, x: f64) -> f64 {
        self.intrinsic.eval(r, t, x)
    }

    #[inline]
    pub fn s(&self, x: f64) -> f64 {
        self.sigmoid.eval(x)
    }

    #[inline]
    pub fn lambda(&self, r: &[f64]) -> f64 {
        self.diffusion.eval(r)
    }

    /// `(J, σ, τ)` at a given receiver-sender distance.
    #[inline]
    pub fn kernels_at(&self, dist: f64) -> (f64, f64, f64) {
        (self.mean_kernel.eval(dist), self.std_kernel.eval(dist), self.delay.eval(dist))
    }

    /// True when both coupling kernels vanish identically.
    pub fn is_decoupled(&self) -> bool {
        self.mean_kernel.is_zero() && self.std_kernel.is_zero()
    }

    /// Copy with the coupling amplitudes replaced.
    pub fn with_coupling(&self, j0: f64, sigma0: f64) -> Result<Self> {
        let mut out = self.clone();
        out.mean_kernel = out.mean_kernel.with_amplitude(j0);
        out.std_kernel = out.std_kernel.with_amplitude(sigma0);
        if sigma0 < 0.0 {
            return Err(Error::Assumption { assumption: 3, detail: "coupling std amplitude must be >= 0".into() });
        }
        out.constants.j_sup = out.mean_kernel.sup();
        out.constants.k_j = out.mean_kernel.lipschitz();
        out.constants.sigma_sup = out.std_kernel.sup();
        out.constants.k_sigma = out.std_kernel.lipschitz();
        Ok(out)
    }

    /// Copy with a different horizon.
    pub fn with_horizon(&self, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Config(format!("horizon T = {horizon} must be > 0")));
        }
        let mut out = self.clone();
        out.horizon = horizon;
        Ok(out)
    }
}

/// Pointwise kernel values `(J(r, r2), σ(r, r2), τ(r, r2))`.
pub fn eval_kernels(params: &ModelParams, r: &[f64], r2: &[f64]) -> Result<(f64, f64, f64)> {
    for p in [r, r2] {
        if !params.domain.contains(p) {
            return Err(Error::OutsideDomain(p.to_vec()));
        }
    }
    Ok(params.kernels_at(distance(r, r2)))
}

fn build_kernel(kind: &'static str, cfg: &KernelConfig) -> Result<Kernel> {
    if !cfg.amplitude.is_finite() {
        return Err(Error::Config(format!("{kind} kernel amplitude must be finite")));
    }
    match cfg.family.as_str() {
        "exponential" => {
            let length = cfg
                .length
                .ok_or_else(|| Error::Config(format!("{kind} kernel: exponential family needs `length`")))?;
            if !(length > 0.0 && length.is_finite()) {
                return Err(Error::Config(format!("{kind} kernel length must be > 0, got {length}")));
            }
            Ok(Kernel::Exponential { amplitude: cfg.amplitude, length })
        }
        "constant" => Ok(Kernel::Constant { amplitude: cfg.amplitude }),
        other => Err(Error::UnknownFamily { kind, id: other.to_string() }),
    }
}

fn per_axis(name: &str, v: &Option<Vec<f64>>, dim: usize, default: f64) -> Result<Vec<f64>> {
    match v {
        None => Ok(vec![default; dim]),
        Some(v) if v.len() == dim && v.iter().all(|x| x.is_finite()) => Ok(v.clone()),
        Some(v) => Err(Error::Config(format!("`{name}` must have {dim} finite entries, got {}", v.len()))),
    }
}

/// Build and validate the model described by a configuration document.
pub fn build_model(config: &Config) -> Result<ModelParams> {
    let dim = config.domain.dim;
    let bounds = match &config.domain.bounds {
        None => vec![(0.0, 1.0); dim],
        Some(b) => {
            if b.len() != dim {
                return Err(Error::Config(format!("domain has dim {dim} but {} bounds", b.len())));
            }
            b.iter().map(|&[lo, hi]| (lo, hi)).collect()
        }
    };
    let density = match config.domain.density.as_str() {
        "uniform" => Density::Uniform,
        other => return Err(Error::UnknownFamily { kind: "density", id: other.to_string() }),
    };
    let domain = SpatialDomain::new(bounds, density)?;

    let ic = &config.dynamics.intrinsic;
    let intrinsic = match ic.family.as_str() {
        "leaky_cosine" => {
            if !(ic.decay > 0.0 && ic.decay.is_finite()) {
                return Err(Error::Config(format!("intrinsic decay a must be > 0, got {}", ic.decay)));
            }
            if !(ic.amplitude.is_finite() && ic.frequency.is_finite()) {
                return Err(Error::Config("intrinsic amplitude and frequency must be finite".into()));
            }
            Intrinsic::LeakyCosine {
                decay: ic.decay,
                amplitude: ic.amplitude,
                frequency: ic.frequency,
                wavevector: per_axis("dynamics.intrinsic.wavevector", &ic.wavevector, dim, 1.0)?,
            }
        }
        other => return Err(Error::UnknownFamily { kind: "intrinsic", id: other.to_string() }),
    };

    let sc = &config.dynamics.sigmoid;
    let sigmoid = match sc.family.as_str() {
        "logistic" => {
            if !(sc.gain > 0.0 && sc.gain.is_finite()) {
                return Err(Error::Config(format!("sigmoid gain g must be > 0, got {}", sc.gain)));
            }
            Sigmoid::Logistic { gain: sc.gain }
        }
        other => return Err(Error::UnknownFamily { kind: "sigmoid", id: other.to_string() }),
    };

    let mean_kernel = build_kernel("mean coupling", &config.coupling.mean)?;
    let std_kernel = build_kernel("coupling std", &config.coupling.std)?;
    if std_kernel.amplitude() < 0.0 {
        return Err(Error::Assumption {
            assumption: 3,
            detail: format!("coupling std amplitude must be >= 0, got {}", std_kernel.amplitude()),
        });
    }

    let dc = &config.coupling.delay;
    if !(dc.tau0 >= 0.0 && dc.c_tau >= 0.0 && dc.tau0.is_finite() && dc.c_tau.is_finite()) {
        return Err(Error::Assumption {
            assumption: 4,
            detail: format!("delay coefficients must be >= 0 (tau0 = {}, c_tau = {})", dc.tau0, dc.c_tau),
        });
    }
    let delay = Delay { tau0: dc.tau0, c_tau: dc.c_tau };

    let diffusion = match config.noise.family.as_str() {
        "constant" => {
            let l = config.noise.lambda0;
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::Assumption {
                    assumption: 5,
                    detail: format!("lambda lower bound: diffusion lower bound violated, lambda0 = {l} must be > 0"),
                });
            }
            Diffusion::Constant { lambda0: l }
        }
        other => return Err(Error::UnknownFamily { kind: "noise", id: other.to_string() }),
    };

    let horizon = config.grid.horizon;
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::Config(format!("horizon T = {horizon} must be > 0")));
    }

    let init = &config.initial;
    let slope = per_axis("initial.slope", &init.slope, dim, 0.0)?;
    if !(init.noise_scale >= 0.0 && init.noise_scale.is_finite() && init.offset.is_finite()) {
        return Err(Error::Config("initial noise_scale must be >= 0 and offset finite".into()));
    }
    let k_psi_sq: f64 = slope.iter().map(|a| a * a).sum();
    let c0 = init.lipschitz_c0.unwrap_or(k_psi_sq);
    if c0 < k_psi_sq * (1.0 - 1e-12) {
        return Err(Error::Config(format!(
            "initial condition regularity: declared C0 = {c0} is below |slope|^2 = {k_psi_sq}"
        )));
    }
    let initial = InitialLaw { offset: init.offset, slope, noise_scale: init.noise_scale, lipschitz_c0: c0 };

    let constants = Constants {
        k_f: intrinsic.lipschitz(),
        k_s: sigmoid.lipschitz(),
        k_j: mean_kernel.lipschitz(),
        k_sigma: std_kernel.lipschitz(),
        k_tau: delay.c_tau,
        k_lambda: 0.0,
        j_sup: mean_kernel.sup(),
        sigma_sup: std_kernel.sup(),
        tau_bar: delay.tau0 + delay.c_tau * domain.diameter(),
        lambda_min: diffusion.lower_bound(),
    };

    let params = ModelParams {
        domain,
        intrinsic,
        sigmoid,
        mean_kernel,
        std_kernel,
        delay,
        diffusion,
        horizon,
        initial,
        constants,
    };
    check_sampled_invariants(&params)?;
    Ok(params)
}

/// Sampled checks of the regularity assumptions for the derived constants.
fn check_sampled_invariants(p: &ModelParams) -> Result<()> {
    let c = &p.constants;
    // Sigmoid range and monotonicity on a wide grid.
    let n = 2001;
    let span = 60.0 / c.k_s.max(1e-3);
    let mut prev = f64::NEG_INFINITY;
    for i in 0..n {
        let x = -span + 2.0 * span * i as f64 / (n - 1) as f64;
        let s = p.s(x);
        if !(0.0..=1.0).contains(&s) || s < prev {
            return Err(Error::Assumption { assumption: 2, detail: format!("sigmoid leaves [0,1] or decreases at x = {x}") });
        }
        prev = s;
    }

    let mut rng = rng::stream(0, &[u64::MAX]);
    let mut points: Vec<Vec<f64>> = (0..64).map(|_| p.domain.sample(&mut rng)).collect();
    points.push(p.domain.bounds().iter().map(|b| b.0).collect());
    points.push(p.domain.bounds().iter().map(|b| b.1).collect());
    let slack = 1e-12;
    for r in &points {
        if p.lambda(r) < c.lambda_min - slack {
            return Err(Error::Assumption { assumption: 5, detail: "lambda lower bound violated at a sampled point".into() });
        }
        for r2 in &points {
            let (j, s, tau) = p.kernels_at(distance(r, r2));
            if j.abs() > c.j_sup + slack || s < -slack || s > c.sigma_sup + slack {
                return Err(Error::Assumption { assumption: 3, detail: "kernel exceeds declared sup-norm".into() });
            }
            if tau < 0.0 || tau > c.tau_bar + slack {
                return Err(Error::Assumption { assumption: 4, detail: "delay outside [0, tau_bar]".into() });
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trivial() -> Config {
        let mut cfg = Config::default();
        cfg.dynamics.intrinsic.decay = 1.0;
        cfg.dynamics.intrinsic.amplitude = 0.0;
        cfg.dynamics.sigmoid.gain = 1.0;
        cfg.coupling.mean.amplitude = 0.0;
        cfg.coupling.std.amplitude = 0.0;
        cfg.coupling.delay.tau0 = 0.0;
        cfg.coupling.delay.c_tau = 0.0;
        cfg.noise.lambda0 = 1.0;
        cfg.grid.horizon = 1.0;
        cfg
    }

    #[test]
    fn decoupled_delay_free_model() {
        let p = build_model(&trivial()).unwrap();
        assert_eq!(p.constants.tau_bar, 0.0);
        assert_eq!(p.constants.j_sup, 0.0);
        assert!(p.is_decoupled());
    }

    #[test]
    fn zero_diffusion_is_rejected() {
        let mut cfg = trivial();
        cfg.noise.lambda0 = 0.0;
        let err = build_model(&cfg).unwrap_err().to_string();
        assert!(err.contains("diffusion lower bound violated"), "{err}");
        assert!(err.contains("assumption (5)"), "{err}");
    }

    #[test]
    fn exponential_kernel_constants() {
        let mut cfg = trivial();
        cfg.coupling.mean.amplitude = 2.0;
        cfg.coupling.mean.length = Some(0.5);
        let p = build_model(&cfg).unwrap();
        assert_eq!(p.constants.j_sup, 2.0);
        assert_eq!(p.constants.k_j, 4.0);
        // Finite-difference slope of J(0, ·) at r' = 0 matches the analytic maximum.
        let h = 1e-7;
        let slope = (p.mean_kernel.eval(0.0) - p.mean_kernel.eval(h)) / h;
        assert!((slope - 4.0).abs() < 1e-5);
    }

    #[test]
    fn invalid_coefficients_are_rejected() {
        let cases: Vec<Box<dyn Fn(&mut Config)>> = vec![
            Box::new(|c| c.coupling.delay.tau0 = -0.1),
            Box::new(|c| c.coupling.delay.c_tau = -0.1),
            Box::new(|c| c.dynamics.intrinsic.decay = 0.0),
            Box::new(|c| c.dynamics.sigmoid.gain = -1.0),
            Box::new(|c| c.dynamics.sigmoid.family = "tanh".into()),
            Box::new(|c| c.coupling.mean.family = "gaussian".into()),
            Box::new(|c| c.grid.horizon = 0.0),
            Box::new(|c| c.domain.bounds = Some(vec![[1.0, 1.0]])),
            Box::new(|c| c.initial.slope = Some(vec![2.0, 1.0])),
        ];
        for mutate in cases {
            let mut cfg = Config::default();
            mutate(&mut cfg);
            assert!(build_model(&cfg).is_err(), "{cfg:?}");
        }
        let mut cfg = Config::default();
        cfg.coupling.mean.family = "mexican_hat".into();
        assert!(matches!(build_model(&cfg), Err(Error::UnknownFamily { .. })));
    }

    #[test]
    fn kernel_evaluation() {
        let mut cfg = trivial();
        cfg.coupling.mean = KernelConfig { family: "exponential".into(), amplitude: 1.0, length: Some(1.0) };
        cfg.coupling.std = KernelConfig { family: "exponential".into(), amplitude: 0.3, length: Some(2.0) };
        cfg.coupling.delay.tau0 = 0.1;
        cfg.coupling.delay.c_tau = 0.2;
        cfg.domain.dim = 2;
        cfg.domain.bounds = Some(vec![[0.0, 2.0], [0.0, 2.0]]);
        let p = build_model(&cfg).unwrap();

        let r = [0.3, 0.4];
        let (j, s, tau) = eval_kernels(&p, &r, &r).unwrap();
        assert_eq!((j, s, tau), (1.0, 0.3, 0.1));

        let (j, _, _) = eval_kernels(&p, &[0.0, 0.0], &[0.6, 0.8]).unwrap();
        assert!((j - (-1.0f64).exp()).abs() < 1e-15);
        assert!((j - 0.36788).abs() < 1e-5);

        let (_, _, tau) = eval_kernels(&p, &[0.0, 0.0], &[0.3, 0.4]).unwrap();
        assert!((tau - 0.2).abs() < 1e-15);
        assert!(tau <= p.constants.tau_bar);

        assert!(matches!(eval_kernels(&p, &[0.0, 2.5], &r), Err(Error::OutsideDomain(_))));
    }

    #[test]
    fn logistic_is_odd_around_one_half() {
        let p = build_model(&Config::default()).unwrap();
        for i in 0..=2000 {
            let x = -20.0 + 0.02 * i as f64;
            assert!((p.s(x) + p.s(-x) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn kernel_values_respect_declared_sup_norms() {
        let p = build_model(&Config::default()).unwrap();
        let mut rng = rng::stream(3, &[0]);
        for _ in 0..500 {
            let a = p.domain.sample(&mut rng);
            let b = p.domain.sample(&mut rng);
            let (j, s, tau) = eval_kernels(&p, &a, &b).unwrap();
            assert!(j.abs() <= p.constants.j_sup);
            assert!((0.0..=p.constants.sigma_sup).contains(&s));
            assert!((0.0..=p.constants.tau_bar).contains(&tau));
        }
    }

    #[test]
    fn nearest_node_matches_brute_force() {
        let d = SpatialDomain::new(vec![(0.0, 1.0), (-1.0, 1.0)], Density::Uniform).unwrap();
        let nodes = d.nodes(3);
        assert_eq!(nodes.len(), 9);
        let mut rng = rng::stream(5, &[0]);
        for _ in 0..200 {
            let r = d.sample(&mut rng);
            let brute = (0..nodes.len())
                .min_by(|&a, &b| distance(&r, &nodes[a]).partial_cmp(&distance(&r, &nodes[b])).unwrap())
                .unwrap();
            assert_eq!(d.nearest_node(&r, 3), brute);
        }
    }

    #[test]
    fn initial_profile_regularity() {
        let mut cfg = Config::default();
        cfg.initial.slope = Some(vec![0.5]);
        cfg.initial.lipschitz_c0 = Some(0.1);
        assert!(build_model(&cfg).is_err());
        cfg.initial.lipschitz_c0 = Some(0.25);
        let p = build_model(&cfg).unwrap();
        let (a, b) = ([0.2], [0.9]);
        let gap = (p.initial.profile(&a) - p.initial.profile(&b)).powi(2);
        assert!(gap <= p.initial.lipschitz_c0 * distance(&a, &b).powi(2) + 1e-15);
    }
}
