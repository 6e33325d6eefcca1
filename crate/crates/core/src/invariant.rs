//! Invariant measures of bridges: the ground state of −½Δ + 𝒰 in one
//! dimension, convergence of the time-0 marginals as T grows, and
//! Wasserstein contraction of those marginals.

use serde::Serialize;

use crate::bridge::{sample_reciprocal_mixture, BridgeProblem, DiscretePairLaw, DriftMode, PathSimulator};
use crate::error::{arg, Error, Result};
use crate::hyper::sech;
use crate::linalg::solve_tridiagonal;
use crate::mc::{bootstrap_wasserstein, ks_two_sample, sorted, wasserstein_sorted, Engine, RngStream};
use crate::potentials::{ConvexityCertificate, PotentialModel};

/// Principal eigenpair of −½ d²/dz² + 𝒰 on [−L, L] with Dirichlet ends.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct GroundState {
    pub length: f64,
    /// Interior nodes −L + jh, j = 1..=n.
    pub nodes: Vec<f64>,
    pub h: f64,
    /// Positive, scaled to max 1.
    pub psi: Vec<f64>,
    /// Discrete eigenvalue (Rayleigh quotient).
    pub k: f64,
    /// Richardson extrapolation of k from grids h and h/2.
    pub k_extrapolated: f64,
    /// −log ψ.
    pub v: Vec<f64>,
    /// ψ² normalized to unit mass.
    pub m: Vec<f64>,
    pub normalization: f64,
    /// max |−½ψ'' + 𝒰ψ − kψ| over interior nodes.
    pub residual: f64,
    pub iterations: usize,
}

const MAX_ITER: usize = 20_000;
const TOL: f64 = 1e-10;

struct Eigenpair {
    psi: Vec<f64>,
    k: f64,
    residual: f64,
    iterations: usize,
}

fn inverse_iteration(u: &[f64], h: f64) -> Result<Eigenpair> {
    let n = u.len();
    let c = 1.0 / (h * h);
    let umin = u.iter().copied().fold(f64::INFINITY, f64::min);
    // k_guess from the local curvature at the minimum, shifted strictly below
    // the spectrum (the discrete Laplacian is positive).
    let j = u.iter().position(|v| *v == umin).unwrap_or(0);
    let curvature = if j > 0 && j + 1 < n { ((u[j + 1] - 2.0 * u[j] + u[j - 1]) * c).max(0.0) } else { 0.0 };
    let k_guess = umin + 0.5 * curvature.sqrt();
    let shift = (k_guess - 1.0).min(umin);
    let diag: Vec<f64> = u.iter().map(|v| c + v - shift).collect();
    let off = vec![-0.5 * c; n - 1];
    let apply = |x: &[f64], i: usize| {
        let left = if i > 0 { x[i - 1] } else { 0.0 };
        let right = if i + 1 < n { x[i + 1] } else { 0.0 };
        -0.5 * c * (left + right) + (c + u[i]) * x[i]
    };
    let mut psi = vec![1.0; n];
    let mut residual = f64::INFINITY;
    for it in 1..=MAX_ITER {
        let next = solve_tridiagonal(&off, &diag, &off, &psi).ok_or_else(|| Error::Singular("shifted Schrödinger matrix".into()))?;
        let scale = next.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        psi = next.iter().map(|v| v / scale).collect();
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..n {
            num += psi[i] * apply(&psi, i);
            den += psi[i] * psi[i];
        }
        let k = num / den;
        residual = (0..n).map(|i| (apply(&psi, i) - k * psi[i]).abs()).fold(0.0, f64::max);
        if residual <= TOL {
            return Ok(Eigenpair { psi, k, residual, iterations: it });
        }
    }
    Err(Error::NoConvergence { iterations: MAX_ITER, residual })
}

/// Finite-difference ground state with n interior nodes.
pub fn solve_ground_state(script_u: &dyn Fn(f64) -> f64, length: f64, n: usize) -> Result<GroundState> {
    if !(length > 0.0 && length.is_finite()) {
        return arg("domain half-width must be positive");
    }
    if n < 200 {
        return arg("ground state needs at least 200 nodes");
    }
    let grid = |n: usize| {
        let h = 2.0 * length / (n + 1) as f64;
        ((1..=n).map(|j| -length + j as f64 * h).collect::<Vec<f64>>(), h)
    };
    let (nodes, h) = grid(n);
    let u: Vec<f64> = nodes.iter().map(|z| script_u(*z)).collect();
    if u.iter().any(|v| !v.is_finite()) {
        return arg("reciprocal potential is not finite on the grid");
    }
    let pair = inverse_iteration(&u, h)?;
    let (fine_nodes, fine_h) = grid(2 * n + 1);
    let fine_u: Vec<f64> = fine_nodes.iter().map(|z| script_u(*z)).collect();
    let fine = inverse_iteration(&fine_u, fine_h)?;
    let k_extrapolated = (4.0 * fine.k - pair.k) / 3.0;
    let psi = pair.psi;
    if psi.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::NoConvergence { iterations: pair.iterations, residual: pair.residual });
    }
    let mass: f64 = psi.iter().map(|p| p * p).sum::<f64>() * h;
    let m: Vec<f64> = psi.iter().map(|p| p * p / mass).collect();
    let v: Vec<f64> = psi.iter().map(|p| -p.ln()).collect();
    Ok(GroundState {
        length,
        nodes,
        h,
        psi,
        k: pair.k,
        k_extrapolated,
        v,
        m,
        normalization: mass,
        residual: pair.residual,
        iterations: pair.iterations,
    })
}

/// Smallest L (doubling from 1) with 𝒰(±L) ≥ min 𝒰 + 50 on a probe grid.
pub fn truncation_length(script_u: &dyn Fn(f64) -> f64) -> Result<f64> {
    let mut length = 1.0;
    while length < 1e6 {
        let umin = (0..=400).map(|j| script_u(-length + 2.0 * length * j as f64 / 400.0)).fold(f64::INFINITY, f64::min);
        if script_u(length).min(script_u(-length)) >= umin + 50.0 {
            return Ok(length);
        }
        length *= 2.0;
    }
    Err(Error::Precondition("reciprocal potential does not grow enough for a truncated domain".into()))
}

/// Ground state of a time-homogeneous 1D model's reciprocal potential.
pub fn ground_state_for(model: &PotentialModel, length: Option<f64>, n: usize) -> Result<GroundState> {
    if model.dim() != 1 || !model.time_homogeneous() {
        return Err(Error::Precondition("ground states need a time-homogeneous one-dimensional model".into()));
    }
    let f = |z: f64| model.reciprocal_potential(0.0, &[z]).unwrap_or(f64::NAN);
    let length = match length {
        Some(l) => l,
        None => truncation_length(&f)?,
    };
    solve_ground_state(&f, length, n)
}

/// Monotone cubic (Fritsch–Carlson) interpolant through increasing knots.
#[derive(Debug, Clone)]
struct MonotoneCubic {
    x: Vec<f64>,
    y: Vec<f64>,
    slope: Vec<f64>,
}

impl MonotoneCubic {
    fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        let n = x.len();
        let secant: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / (x[i + 1] - x[i])).collect();
        let mut slope = vec![0.0; n];
        slope[0] = secant[0];
        slope[n - 1] = secant[n - 2];
        for i in 1..n - 1 {
            let (a, b) = (secant[i - 1], secant[i]);
            slope[i] = if a * b <= 0.0 {
                0.0
            } else {
                let (wa, wb) = (2.0 * (x[i + 1] - x[i]) + (x[i] - x[i - 1]), (x[i + 1] - x[i]) + 2.0 * (x[i] - x[i - 1]));
                (wa + wb) / (wa / a + wb / b)
            };
        }
        Self { x, y, slope }
    }

    fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        let t = t.clamp(self.x[0], self.x[n - 1]);
        let i = match self.x.binary_search_by(|v| v.total_cmp(&t)) {
            Ok(i) => return self.y[i],
            Err(i) => i.clamp(1, n - 1) - 1,
        };
        let hx = self.x[i + 1] - self.x[i];
        let s = (t - self.x[i]) / hx;
        let (h00, h10, h01, h11) =
            (2.0 * s.powi(3) - 3.0 * s * s + 1.0, s.powi(3) - 2.0 * s * s + s, -2.0 * s.powi(3) + 3.0 * s * s, s.powi(3) - s * s);
        h00 * self.y[i] + h10 * hx * self.slope[i] + h01 * self.y[i + 1] + h11 * hx * self.slope[i + 1]
    }
}

impl GroundState {
    pub fn mean(&self) -> f64 {
        self.nodes.iter().zip(&self.m).map(|(z, m)| z * m).sum::<f64>() * self.h
    }

    pub fn variance(&self) -> f64 {
        let mu = self.mean();
        self.nodes.iter().zip(&self.m).map(|(z, m)| (z - mu).powi(2) * m).sum::<f64>() * self.h
    }

    pub fn total_mass(&self) -> f64 {
        self.m.iter().sum::<f64>() * self.h
    }

    /// Quantile function of m: monotone cubic through the trapezoid CDF
    /// (boundary values 0 included), with repeated CDF levels dropped.
    fn quantile_interpolant(&self) -> MonotoneCubic {
        let mut zs = vec![-self.length];
        let mut fs = vec![0.0];
        let mut acc = 0.0;
        let mut prev = 0.0;
        for (z, m) in self.nodes.iter().zip(&self.m).chain(std::iter::once((&self.length, &0.0))) {
            acc += 0.5 * self.h * (prev + m);
            prev = *m;
            if acc > *fs.last().expect("non-empty") {
                fs.push(acc);
                zs.push(*z);
            }
        }
        let total = *fs.last().expect("non-empty");
        let fs = fs.into_iter().map(|f| f / total).collect();
        MonotoneCubic::new(fs, zs)
    }

    pub fn quantile(&self, u: f64) -> f64 {
        self.quantile_interpolant().eval(u)
    }

    /// Stratified inverse-CDF sample Q((i + ½)/count), sorted.
    pub fn quantile_sample(&self, count: usize) -> Vec<f64> {
        let q = self.quantile_interpolant();
        (0..count).map(|i| q.eval((i as f64 + 0.5) / count as f64)).collect()
    }

    /// Second differences of V at nodes with |z| ≤ L/2.
    pub fn v_second_differences(&self) -> Vec<(f64, f64)> {
        (1..self.nodes.len() - 1)
            .filter(|&j| self.nodes[j].abs() <= 0.5 * self.length)
            .map(|j| (self.nodes[j], (self.v[j + 1] - 2.0 * self.v[j] + self.v[j - 1]) / (self.h * self.h)))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("z,psi,V,m\n");
        for j in 0..self.nodes.len() {
            s.push_str(&format!("{},{},{},{}\n", self.nodes[j], self.psi[j], self.v[j], self.m[j]));
        }
        s
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct MarginalRow {
    pub horizon: f64,
    pub n_steps: usize,
    pub samples: u64,
    pub w1: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct MarginalConvergenceReport {
    pub rows: Vec<MarginalRow>,
    /// Point estimates strictly decrease along the ladder.
    pub decreasing: bool,
}

fn steps_for(horizon: f64, dt: f64) -> usize {
    let n = (2.0 * horizon / dt).round() as usize;
    (n + n % 2).max(2)
}

/// ω₀ samples of the bridge from x to y on [−T, T].
#[allow(clippy::too_many_arguments)]
pub fn time_zero_samples(
    model: &PotentialModel,
    x: f64,
    y: f64,
    horizon: f64,
    dt: f64,
    mode: &DriftMode,
    budget: u64,
    seed: u64,
    engine: &Engine,
) -> Result<Vec<f64>> {
    let problem = BridgeProblem::new(vec![x], vec![y], horizon, model.clone())?;
    let n = steps_for(horizon, dt);
    let sim = PathSimulator::new(&problem, n, mode)?;
    engine.collect(budget, seed, |s| Ok(sim.marginal(s, n / 2)?[0]))
}

/// W₁ between the ω₀-marginal and m for each horizon of the ladder.
#[allow(clippy::too_many_arguments)]
pub fn verify_marginal_convergence(
    model: &PotentialModel,
    x: f64,
    y: f64,
    horizons: &[f64],
    ground: &GroundState,
    budget: u64,
    seed: u64,
    engine: &Engine,
    dt: f64,
    mode: &DriftMode,
    resamples: usize,
) -> Result<MarginalConvergenceReport> {
    if model.dim() != 1 {
        return Err(Error::Precondition("marginal convergence is implemented for one-dimensional models".into()));
    }
    let reference = ground.quantile_sample(budget as usize);
    let mut rows = Vec::with_capacity(horizons.len());
    for (j, &horizon) in horizons.iter().enumerate() {
        let samples = sorted(&time_zero_samples(model, x, y, horizon, dt, mode, budget, seed.wrapping_add(j as u64), engine)?)?;
        let boot = bootstrap_wasserstein(&samples, &reference, 1.0, true, false, resamples, RngStream::new(seed, u64::MAX - j as u64))?;
        rows.push(MarginalRow {
            horizon,
            n_steps: steps_for(horizon, dt),
            samples: budget,
            w1: boot.estimate,
            std_error: boot.std_error,
            ci_low: boot.ci_low,
            ci_high: boot.ci_high,
        });
    }
    let decreasing = rows.windows(2).all(|w| w[1].w1 < w[0].w1);
    Ok(MarginalConvergenceReport { rows, decreasing })
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct KsRow {
    pub horizon: f64,
    pub statistic: f64,
    pub p_value: f64,
    pub pass: bool,
}

/// Two-sample KS comparison of ω₀-marginals of two models (each with its
/// own drift mode) at each horizon; passes when p ≥ level.
#[allow(clippy::too_many_arguments)]
pub fn compare_time_zero_marginals(
    first: (&PotentialModel, &DriftMode, u64),
    second: (&PotentialModel, &DriftMode, u64),
    x: f64,
    y: f64,
    horizons: &[f64],
    dt: f64,
    seed: u64,
    engine: &Engine,
    level: f64,
) -> Result<Vec<KsRow>> {
    horizons
        .iter()
        .enumerate()
        .map(|(j, &horizon)| {
            let base = seed.wrapping_add(2 * j as u64);
            let a = time_zero_samples(first.0, x, y, horizon, dt, first.1, first.2, base, engine)?;
            let b = time_zero_samples(second.0, x, y, horizon, dt, second.1, second.2, base.wrapping_add(1) ^ 0x9E37_79B9, engine)?;
            let ks = ks_two_sample(&a, &b)?;
            Ok(KsRow { horizon, statistic: ks.statistic, p_value: ks.p_value, pass: ks.p_value >= level })
        })
        .collect()
}

/// (√2 cosh αT)^{−1}, overflow-safe.
pub fn contraction_coefficient(alpha: f64, horizon: f64) -> f64 {
    sech(alpha * horizon) / std::f64::consts::SQRT_2
}

/// W̃_p between finitely supported laws on endpoint pairs with the
/// Euclidean cost on (x, y), by successive shortest paths on the bipartite
/// transport network.
pub fn pair_wasserstein(mu: &DiscretePairLaw, nu: &DiscretePairLaw, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return arg("p must be at least 1");
    }
    let (s, t) = (mu.atoms.len(), nu.atoms.len());
    let mut cost = vec![0.0; s * t];
    for (i, (x, y)) in mu.atoms.iter().enumerate() {
        for (j, (x2, y2)) in nu.atoms.iter().enumerate() {
            if x.len() != x2.len() {
                return arg("laws live in different dimensions");
            }
            let d2: f64 = x.iter().zip(x2).chain(y.iter().zip(y2)).map(|(a, b)| (a - b) * (a - b)).sum();
            cost[i * t + j] = d2.sqrt().powf(p);
        }
    }
    let plan = transport_plan(&mu.weights, &nu.weights, &cost)?;
    Ok(plan.iter().zip(&cost).map(|(f, c)| f * c).sum::<f64>().max(0.0).powf(1.0 / p))
}

/// Minimum-cost transport plan (row-major) by successive shortest paths
/// with Bellman–Ford on the residual graph.
pub fn transport_plan(supply: &[f64], demand: &[f64], cost: &[f64]) -> Result<Vec<f64>> {
    let (s, t) = (supply.len(), demand.len());
    if cost.len() != s * t || s == 0 || t == 0 {
        return arg("cost matrix does not match the marginals");
    }
    if (supply.iter().sum::<f64>() - demand.iter().sum::<f64>()).abs() > 1e-9 {
        return Err(Error::Infeasible("marginals have different masses".into()));
    }
    let mut flow = vec![0.0; s * t];
    let mut left = supply.to_vec();
    let mut need = demand.to_vec();
    let eps = 1e-15;
    // Nodes: 0..s sources, s..s+t sinks.
    for _ in 0..4 * (s + t) * (s + t) {
        if left.iter().all(|v| *v <= eps) {
            break;
        }
        let nn = s + t;
        let mut dist = vec![f64::INFINITY; nn];
        let mut pred = vec![usize::MAX; nn];
        for i in 0..s {
            if left[i] > eps {
                dist[i] = 0.0;
            }
        }
        for _ in 0..nn {
            let mut changed = false;
            for i in 0..s {
                for j in 0..t {
                    let c = cost[i * t + j];
                    if dist[i] + c < dist[s + j] - 1e-15 {
                        dist[s + j] = dist[i] + c;
                        pred[s + j] = i;
                        changed = true;
                    }
                    if flow[i * t + j] > eps && dist[s + j] - c < dist[i] - 1e-15 {
                        dist[i] = dist[s + j] - c;
                        pred[i] = s + j;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let Some(sink) = (0..t).filter(|&j| need[j] > eps && dist[s + j].is_finite()).min_by(|&a, &b| dist[s + a].total_cmp(&dist[s + b])) else {
            return Err(Error::Infeasible("no augmenting path".into()));
        };
        let mut amount = need[sink];
        let mut node = s + sink;
        while pred[node] != usize::MAX {
            let prev = pred[node];
            if node < s {
                amount = amount.min(flow[node * t + (prev - s)]);
            }
            node = prev;
        }
        amount = amount.min(left[node]);
        let origin = node;
        let mut node = s + sink;
        while pred[node] != usize::MAX {
            let prev = pred[node];
            if node >= s {
                flow[prev * t + (node - s)] += amount;
            } else {
                flow[node * t + (prev - s)] -= amount;
            }
            node = prev;
        }
        left[origin] -= amount;
        need[sink] -= amount;
    }
    if left.iter().any(|v| *v > 1e-9) {
        return Err(Error::NoConvergence { iterations: 4 * (s + t) * (s + t), residual: left.iter().sum() });
    }
    Ok(flow)
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ContractionReport {
    pub horizon: f64,
    pub p: f64,
    pub alpha_hat: f64,
    pub measured: f64,
    pub measured_std_error: f64,
    pub coefficient: f64,
    pub pair_distance: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Measured W_p between ω₀-marginals of the mixtures under μ and ν against
/// (√2 cosh αT)^{−1}·W̃_p(μ, ν). Both mixtures use the same random streams.
#[allow(clippy::too_many_arguments)]
pub fn verify_contraction(
    mu: &DiscretePairLaw,
    nu: &DiscretePairLaw,
    model: &PotentialModel,
    horizon: f64,
    p: f64,
    budget: u64,
    seed: u64,
    engine: &Engine,
    dt: f64,
    mode: &DriftMode,
    certificate: &ConvexityCertificate,
    resamples: usize,
) -> Result<ContractionReport> {
    let alpha = certificate.alpha_hat;
    if !(alpha > 0.0) {
        return Err(Error::Precondition(format!(
            "convexity scan gives alpha_hat = 0 (min eigenvalue {} at {:?})",
            certificate.min_eigenvalue, certificate.min_eigenvalue_location
        )));
    }
    if model.dim() != 1 {
        return Err(Error::Precondition("contraction is implemented for one-dimensional models".into()));
    }
    let n = steps_for(horizon, dt);
    let draw = |law: &DiscretePairLaw| -> Result<Vec<f64>> {
        let v = engine.collect(budget, seed, |s| Ok(sample_reciprocal_mixture(law, horizon, model, n, s, mode)?.position(n / 2)[0]))?;
        sorted(&v)
    };
    let (a, b) = (draw(mu)?, draw(nu)?);
    let boot = bootstrap_wasserstein(&a, &b, p, true, true, resamples, RngStream::new(seed, u64::MAX))?;
    let coefficient = contraction_coefficient(alpha, horizon);
    let pair_distance = pair_wasserstein(mu, nu, p)?;
    let bound = coefficient * pair_distance;
    let measured = wasserstein_sorted(&a, &b, p);
    Ok(ContractionReport {
        horizon,
        p,
        alpha_hat: alpha,
        measured,
        measured_std_error: boot.std_error,
        coefficient,
        pair_distance,
        bound,
        pass: measured <= bound + 3.0 * boot.std_error + 1e-12,
    })
}

/// Exact W̃₂ between the stationary Gaussian endpoint law and m ⊗ m, with
/// the two readings of the integral bound.
#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct DecorrelationReport {
    pub alpha: f64,
    pub horizon: f64,
    pub covariance: f64,
    pub exact_w2: f64,
    /// e^{−2αT}·∫(∫|x − y|² m(dy))^{1/2} m(dx).
    pub bound_inner_root: f64,
    /// e^{−2αT}·(∫∫|x − y|² m(dx) m(dy))^{1/2}.
    pub bound_outer_root: f64,
    pub pass_inner_root: bool,
    pub pass_outer_root: bool,
}

pub fn gaussian_endpoint_decorrelation(alpha: f64, horizon: f64) -> Result<DecorrelationReport> {
    if !(alpha > 0.0) || !(horizon >= 0.0) {
        return arg("need alpha > 0 and T ≥ 0");
    }
    let v = 1.0 / (2.0 * alpha);
    let decay = (-2.0 * alpha * horizon).exp();
    let c = decay * v;
    // Σ₁ has eigenvalues v ± c, Σ₂ = v·I commutes with it.
    let w2sq = 4.0 * v - 2.0 * v.sqrt() * ((v + c).sqrt() + (v - c).max(0.0).sqrt());
    let exact = w2sq.max(0.0).sqrt();
    // E_m √(X² + v) for X ~ N(0, v) by Simpson on ±12 sd.
    let sd = v.sqrt();
    let n = 4000;
    let (a, b) = (-12.0 * sd, 12.0 * sd);
    let hh = (b - a) / n as f64;
    let f = |x: f64| (x * x + v).sqrt() * (-x * x / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt();
    let simpson: f64 = (0..=n).map(|i| f(a + i as f64 * hh) * if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 }).sum::<f64>() * hh / 3.0;
    let inner = decay * simpson;
    let outer = decay * (2.0 * v).sqrt();
    Ok(DecorrelationReport {
        alpha,
        horizon,
        covariance: c,
        exact_w2: exact,
        bound_inner_root: inner,
        bound_outer_root: outer,
        pass_inner_root: exact <= inner,
        pass_outer_root: exact <= outer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::convexity_certificate;
    use approx::assert_abs_diff_eq;
    use nalgebra::{DMatrix, SymmetricEigen};

    fn dense_oracle(u: &dyn Fn(f64) -> f64, length: f64, n: usize) -> (f64, Vec<f64>) {
        let h = 2.0 * length / (n + 1) as f64;
        let c = 1.0 / (h * h);
        let mut a = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            a[(i, i)] = c + u(-length + (i + 1) as f64 * h);
            if i + 1 < n {
                a[(i, i + 1)] = -0.5 * c;
                a[(i + 1, i)] = -0.5 * c;
            }
        }
        let eig = SymmetricEigen::new(a);
        let j = eig.eigenvalues.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        let v: Vec<f64> = eig.eigenvectors.column(j).iter().copied().collect();
        let top = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        (eig.eigenvalues[j], v.iter().map(|x| x / top).collect())
    }

    #[test]
    fn harmonic_matches_dense_oracle_and_closed_form() {
        let u = |z: f64| 0.5 * z * z;
        let g = solve_ground_state(&u, 8.0, 300).unwrap();
        let (k, psi) = dense_oracle(&u, 8.0, 300);
        assert_abs_diff_eq!(g.k, k, epsilon = 1e-9);
        for (a, b) in g.psi.iter().zip(&psi) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-8);
        }
        assert!(g.residual <= 1e-8);
        assert!((g.k - 0.5).abs() < 1e-3);
        assert!((g.k_extrapolated - 0.5).abs() < (g.k - 0.5).abs() / 10.0);
        assert_abs_diff_eq!(g.total_mass(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g.variance(), 0.5, epsilon = 1e-3);
    }

    #[test]
    fn double_well_matches_dense_oracle() {
        let u = |z: f64| (z * z - 1.0).powi(2);
        let g = solve_ground_state(&u, 4.0, 400).unwrap();
        let (k, psi) = dense_oracle(&u, 4.0, 400);
        assert_abs_diff_eq!(g.k, k, epsilon = 1e-8);
        for (a, b) in g.psi.iter().zip(&psi) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-8);
        }
    }

    #[test]
    fn shift_moves_only_the_eigenvalue() {
        let u = |z: f64| 0.5 * z * z + 0.1 * z.sin();
        let a = solve_ground_state(&u, 8.0, 400).unwrap();
        let b = solve_ground_state(&|z| u(z) + 3.0, 8.0, 400).unwrap();
        assert_abs_diff_eq!(b.k - a.k, 3.0, epsilon = 1e-9);
        for (x, y) in a.m.iter().zip(&b.m) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-9);
        }
    }

    #[test]
    fn v_is_convex_for_harmonic() {
        let g = solve_ground_state(&|z| 0.5 * z * z, 10.0, 2000).unwrap();
        assert!(g.v_second_differences().iter().all(|(_, d)| *d >= 1.0 - 1e-3));
        assert!((g.k_extrapolated - 0.5).abs() < 1e-6);
        assert!(solve_ground_state(&|z| z * z, 1.0, 10).is_err());
    }

    #[test]
    fn quantiles_are_monotone_and_gaussian() {
        let g = solve_ground_state(&|z| 0.5 * z * z, 10.0, 2000).unwrap();
        let q = g.quantile_sample(1001);
        assert!(q.windows(2).all(|w| w[1] >= w[0]));
        assert_abs_diff_eq!(g.quantile(0.5), 0.0, epsilon = 1e-9);
        // Φ⁻¹(0.975)·√0.5
        assert_abs_diff_eq!(g.quantile(0.975), 1.959_963_984_540_054 * 0.5f64.sqrt(), epsilon = 1e-4);
        assert!(g.to_csv().starts_with("z,psi,V,m\n"));
    }

    #[test]
    fn truncation_rule() {
        let l = truncation_length(&|z| 0.5 * z * z).unwrap();
        assert_eq!(l, 16.0);
        assert!(truncation_length(&|z: f64| z.sin()).is_err());
    }

    #[test]
    fn transport_small_cases() {
        let a = DiscretePairLaw::dirac(vec![0.0], vec![0.0]);
        let b = DiscretePairLaw::dirac(vec![1.0], vec![1.0]);
        assert_abs_diff_eq!(pair_wasserstein(&a, &b, 1.0).unwrap(), 2f64.sqrt(), epsilon = 1e-14);
        assert_eq!(pair_wasserstein(&a, &a, 2.0).unwrap(), 0.0);
        // Brute force over the one-parameter family of 2×2 plans.
        let mu = DiscretePairLaw::new(vec![(vec![0.0], vec![0.0]), (vec![2.0], vec![1.0])], vec![0.3, 0.7]).unwrap();
        let nu = DiscretePairLaw::new(vec![(vec![1.0], vec![1.0]), (vec![-1.0], vec![0.5])], vec![0.6, 0.4]).unwrap();
        let c = |i: usize, j: usize| {
            let (x, y) = &mu.atoms[i];
            let (x2, y2) = &nu.atoms[j];
            (((x[0] - x2[0]).powi(2) + (y[0] - y2[0]).powi(2)).sqrt()).powi(2)
        };
        let mut best = f64::INFINITY;
        for k in 0..=30_000 {
            let f00 = 0.3 * k as f64 / 30_000.0;
            let (f01, f10) = (0.3 - f00, 0.6 - f00);
            let f11 = 0.4 - f01;
            if f10 < -1e-15 || f11 < -1e-15 {
                continue;
            }
            best = best.min(f00 * c(0, 0) + f01 * c(0, 1) + f10 * c(1, 0) + f11 * c(1, 1));
        }
        assert_abs_diff_eq!(pair_wasserstein(&mu, &nu, 2.0).unwrap(), best.sqrt(), epsilon = 1e-6);
    }

    #[test]
    fn coefficient_values() {
        assert_abs_diff_eq!(contraction_coefficient(1.0, 1.0) * 2f64.sqrt(), 0.648_054_273_663_885_4, epsilon = 1e-12);
        let ratio = contraction_coefficient(1.0, 2.0) / contraction_coefficient(1.0, 1.0);
        assert_abs_diff_eq!(ratio, 1f64.cosh() / 2f64.cosh(), epsilon = 1e-14);
        assert!(contraction_coefficient(1.0, 1000.0) >= 0.0);
    }

    #[test]
    fn contraction_dirac_and_equal() {
        let model = PotentialModel::quadratic(1.0, 1);
        let cert = convexity_certificate(&model, &[(-3.0, 3.0)], 9).unwrap();
        let engine = Engine::new(1).unwrap();
        let mu = DiscretePairLaw::dirac(vec![0.0], vec![0.0]);
        let nu = DiscretePairLaw::dirac(vec![1.0], vec![1.0]);
        let r = verify_contraction(&mu, &nu, &model, 1.0, 1.0, 2000, 1, &engine, 0.01, &DriftMode::Equivalent, &cert, 50).unwrap();
        assert!(r.pass, "{r:?}");
        assert_abs_diff_eq!(r.bound, 1.0 / 1f64.cosh(), epsilon = 1e-6);
        let same = verify_contraction(&mu, &mu, &model, 1.0, 1.0, 500, 1, &engine, 0.01, &DriftMode::Equivalent, &cert, 20).unwrap();
        assert_eq!(same.measured, 0.0);
        assert!(same.pass);
    }

    #[test]
    fn decorrelation_values() {
        let r = gaussian_endpoint_decorrelation(1.0, 1.0).unwrap();
        assert_abs_diff_eq!(r.covariance, (-2.0f64).exp() / 2.0, epsilon = 1e-15);
        assert!(r.pass_inner_root && r.pass_outer_root);
        let far = gaussian_endpoint_decorrelation(1.0, 30.0).unwrap();
        assert!(far.exact_w2 < 1e-12 && far.bound_outer_root < 1e-12);
        let zero = gaussian_endpoint_decorrelation(1.0, 0.0).unwrap();
        assert_abs_diff_eq!(zero.exact_w2, (0.5 * (4.0 - 2.0 * 2f64.sqrt())).sqrt(), epsilon = 1e-12);
        let mut prev = zero.exact_w2;
        for j in 1..20 {
            let w = gaussian_endpoint_decorrelation(1.0, j as f64 * 0.1).unwrap().exact_w2;
            assert!(w < prev);
            prev = w;
        }
    }

    #[test]
    fn marginal_ladder_small() {
        let model = PotentialModel::quadratic(1.0, 1);
        let g = ground_state_for(&model, Some(8.0), 400).unwrap();
        assert_abs_diff_eq!(g.k, 0.0, epsilon = 1e-3);
        let engine = Engine::new(1).unwrap();
        let rep = verify_marginal_convergence(&model, 0.0, 0.0, &[0.25, 1.0], &g, 3000, 2, &engine, 0.01, &DriftMode::Equivalent, 20).unwrap();
        assert!(rep.decreasing, "{rep:?}");
    }
}
