//! Ornstein–Uhlenbeck semigroup on path space, its generator, and the W₁
//! comparison between Langevin bridges and Brownian bridges.
//!
//! The semigroup mixes a path ω with an independent Brownian bridge ω̃ from
//! 0 to 0 around the anchor line φ:
//! `S_u F(ω) = E F(e^{−u}ω + σ(u)ω̃ + (1 − e^{−u})φ)`, σ(u) = √(1 − e^{−2u}).
//!
//! Bridge expectations of the Langevin model are computed by reweighting
//! exact Brownian bridges with `exp(−∫𝒰(s, ω_s) ds)`, which is the density of
//! P^{x,y} with respect to W^{x,y} up to normalization.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::bridge::{grid_time, sample_brownian_bridge, BridgeProblem, DiscretizedPath, DriftMode};
use crate::couplings::couple_synchronous;
use crate::error::{arg, Error, Result};
use crate::mc::{Engine, RngStream, SampleStats, StatSummary};
use crate::pathspace::{stochastic_integrals, GridFunction, SimpleFunctional};
use crate::potentials::{reciprocal_gradient_scan, PotentialModel};

/// Endpoints and horizon shared by the semigroup and the generator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SteinContext {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub horizon: f64,
}

impl SteinContext {
    pub fn new(x: Vec<f64>, y: Vec<f64>, horizon: f64) -> Result<Self> {
        if x.len() != y.len() || x.is_empty() {
            return arg("endpoints need a common positive dimension");
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return arg("horizon must be positive");
        }
        Ok(Self { x, y, horizon })
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    /// φ_t = ((T − t)x + (T + t)y)/(2T).
    pub fn anchor(&self, t: f64) -> Vec<f64> {
        let h = self.horizon;
        self.x.iter().zip(&self.y).map(|(x, y)| ((h - t) * x + (h + t) * y) / (2.0 * h)).collect()
    }

    pub fn anchor_path(&self, n_steps: usize) -> DiscretizedPath {
        let mut positions = Vec::with_capacity((n_steps + 1) * self.dim());
        for k in 0..=n_steps {
            positions.extend(self.anchor(grid_time(self.horizon, n_steps, k)));
        }
        DiscretizedPath { horizon: self.horizon, n_steps, dim: self.dim(), positions }
    }

    pub fn sigma(u: f64) -> f64 {
        (-(-2.0 * u).exp_m1()).sqrt()
    }

    /// e^{−u}ω + σ(u)ω̃ + (1 − e^{−u})φ.
    pub fn mix(&self, path: &DiscretizedPath, noise: &DiscretizedPath, u: f64) -> DiscretizedPath {
        let decay = (-u).exp();
        let s = Self::sigma(u);
        let anchor = self.anchor_path(path.n_steps);
        let positions = path
            .positions
            .iter()
            .zip(&noise.positions)
            .zip(&anchor.positions)
            .map(|((w, n), a)| decay * w + s * n + (1.0 - decay) * a)
            .collect();
        DiscretizedPath { positions, ..*path }
    }

    fn check_path(&self, path: &DiscretizedPath) -> Result<()> {
        if path.dim != self.dim() || (path.horizon - self.horizon).abs() > 1e-12 * self.horizon {
            return arg("path does not match the context horizon or dimension");
        }
        if path.len() != path.n_steps + 1 {
            return arg("path is incomplete");
        }
        Ok(())
    }
}

/// Path functional: simple ones get an exact generator.
#[derive(Clone)]
pub enum PathFunctional {
    /// f(∫h¹·d(ω − φ), …).
    Simple(SimpleFunctional),
    Opaque { name: String, f: Arc<dyn Fn(&DiscretizedPath) -> f64 + Send + Sync> },
}

impl std::fmt::Debug for PathFunctional {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.name())
    }
}

impl PathFunctional {
    pub fn name(&self) -> String {
        match self {
            PathFunctional::Simple(s) => format!("{}(n={})", s.outer.name(), s.directions.len()),
            PathFunctional::Opaque { name, .. } => name.clone(),
        }
    }

    pub fn value(&self, path: &DiscretizedPath, context: &SteinContext) -> Result<f64> {
        match self {
            PathFunctional::Simple(s) => Ok(s.outer.value(&centred_integrals(&s.directions, path, context)?)),
            PathFunctional::Opaque { f, .. } => Ok(f(path)),
        }
    }
}

/// ∫h·d(ω − φ) by left-point sums.
pub fn centred_integrals(directions: &[GridFunction], path: &DiscretizedPath, context: &SteinContext) -> Result<Vec<f64>> {
    context.check_path(path)?;
    let mut ints = stochastic_integrals(directions, path)?;
    let dt = path.dt();
    for (v, h) in ints.iter_mut().zip(directions) {
        for i in 0..h.dim {
            let slope = (context.y[i] - context.x[i]) / (2.0 * context.horizon);
            let mass: f64 = (0..path.n_steps).map(|k| h.right(k, i)).sum::<f64>() * dt;
            *v -= slope * mass;
        }
    }
    Ok(ints)
}

/// Monte Carlo S_u F(path).
#[allow(clippy::too_many_arguments)]
pub fn semigroup_apply(
    functional: &PathFunctional,
    path: &DiscretizedPath,
    u: f64,
    context: &SteinContext,
    budget: u64,
    seed: u64,
    engine: &Engine,
) -> Result<StatSummary> {
    if !(u >= 0.0) {
        return arg("semigroup time must be non-negative");
    }
    context.check_path(path)?;
    let zero = vec![0.0; context.dim()];
    let stats = engine.run_batches(budget, seed, |s| {
        let noise = sample_brownian_bridge(&zero, &zero, context.horizon, path.n_steps, &mut s.rng());
        functional.value(&context.mix(path, &noise, u), context)
    })?;
    Ok(stats.summary())
}

/// Discrete Brownian-bridge structure of a family of directions: with
/// increments Δω̃ of the exact bridge, Cov(Σ h_k Δω̃_k, Σ g_k Δω̃_k) is
/// Σ h_k g_k Δt − (Σ h_k Δt)(Σ g_k Δt)/(2T), and Cov(ω̃_{t_k}, Σ h Δω̃)
/// is the cumulative version. Using these exact grid covariances keeps the
/// generator identities free of quadrature bias.
struct Prepared {
    /// Row-major n × n covariance.
    covariance: Vec<f64>,
    /// Per direction, node-major (n_steps + 1) × d cross covariances.
    cross: Vec<Vec<f64>>,
}

fn prepare(directions: &[GridFunction], context: &SteinContext) -> Result<Prepared> {
    let Some(first) = directions.first() else {
        return arg("no directions");
    };
    if first.dim != context.dim() || (first.grid.horizon - context.horizon).abs() > 1e-12 * context.horizon {
        return arg("directions do not match the context");
    }
    let (n, d, dt) = (first.grid.n, first.dim, first.grid.dt());
    let two_t = 2.0 * context.horizon;
    let mass: Vec<Vec<f64>> =
        directions.iter().map(|h| (0..d).map(|i| (0..n).map(|k| h.right(k, i)).sum::<f64>() * dt).collect()).collect();
    let m = directions.len();
    let mut covariance = vec![0.0; m * m];
    for a in 0..m {
        for b in 0..m {
            let mut s = 0.0;
            for i in 0..d {
                s += (0..n).map(|k| directions[a].right(k, i) * directions[b].right(k, i)).sum::<f64>() * dt;
                s -= mass[a][i] * mass[b][i] / two_t;
            }
            covariance[a * m + b] = s;
        }
    }
    let cross = directions
        .iter()
        .zip(&mass)
        .map(|(h, mass)| {
            let mut out = vec![0.0; (n + 1) * d];
            let mut acc = vec![0.0; d];
            for k in 0..=n {
                for i in 0..d {
                    out[k * d + i] = acc[i] - (k as f64 * dt) * mass[i] / two_t;
                }
                if k < n {
                    for i in 0..d {
                        acc[i] += h.right(k, i) * dt;
                    }
                }
            }
            out
        })
        .collect();
    Ok(Prepared { covariance, cross })
}

fn generator_prepared(functional: &SimpleFunctional, prep: &Prepared, ints: &[f64], grad: &mut [f64], hess: &mut [f64]) -> f64 {
    let m = ints.len();
    functional.outer.gradient(ints, grad);
    functional.outer.hessian(ints, hess);
    let drift: f64 = grad.iter().zip(ints).map(|(g, u)| g * u).sum();
    let trace: f64 = hess.iter().zip(&prep.covariance).map(|(h, c)| h * c).sum();
    debug_assert_eq!(hess.len(), m * m);
    trace - drift
}

/// 𝒜F(ω) = −DF(ω)[ω − φ] + E D²F(ω)[ω̃, ω̃] for simple F.
pub fn generator_apply(functional: &PathFunctional, path: &DiscretizedPath, context: &SteinContext) -> Result<f64> {
    let PathFunctional::Simple(f) = functional else {
        return Err(Error::Unsupported(format!("generator of non-simple functional {}", functional.name())));
    };
    let ints = centred_integrals(&f.directions, path, context)?;
    let prep = prepare(&f.directions, context)?;
    let m = ints.len();
    let (mut g, mut h) = (vec![0.0; m], vec![0.0; m * m]);
    Ok(generator_prepared(f, &prep, &ints, &mut g, &mut h))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Pass,
    Fail,
    /// The standard error stayed above the requested resolution.
    Inconclusive,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct IdentityCheck {
    pub functional: String,
    /// "a": E_W 𝒜F = 0; "b": E_P 𝒜_𝒰F = 0.
    pub identity: &'static str,
    pub mean: f64,
    pub std_error: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct GeneratorReport {
    pub horizon: f64,
    pub budget: u64,
    pub n_steps: usize,
    pub checks: Vec<IdentityCheck>,
    pub verdict: Verdict,
}

/// Linear, quadratic, product and bounded functionals on the grid.
pub fn functional_battery(horizon: f64, n_steps: usize, dim: usize) -> Result<Vec<SimpleFunctional>> {
    use crate::pathspace::{Identity, Product, SinOuter, Square, TimeGrid};
    let grid = TimeGrid::new(horizon, n_steps)?;
    let pi = std::f64::consts::PI;
    let step = GridFunction::indicator(grid, -horizon, 0.0, dim, 0)?;
    let wave = GridFunction::from_fn(grid, dim, |t, out| {
        out.fill(0.0);
        out[0] = (pi * t / horizon).sin();
    })?;
    let ramp = GridFunction::from_fn(grid, dim, |t, out| {
        for (i, o) in out.iter_mut().enumerate() {
            *o = if i == 0 { 1.0 } else { t / horizon };
        }
    })?;
    Ok(vec![
        SimpleFunctional::new(Arc::new(Identity), vec![step.clone()])?,
        SimpleFunctional::new(Arc::new(Square), vec![step.clone()])?,
        SimpleFunctional::new(Arc::new(Product), vec![step, wave.clone()])?,
        SimpleFunctional::new(Arc::new(SinOuter), vec![wave.clone()])?,
        SimpleFunctional::new(Arc::new(Square), vec![ramp])?,
    ])
}

fn classify(mean: f64, se: f64, target_se: f64) -> Verdict {
    if se > target_se {
        Verdict::Inconclusive
    } else if mean.abs() <= 3.0 * se + 1e-12 {
        Verdict::Pass
    } else {
        Verdict::Fail
    }
}

fn trapezoid_weight(k: usize, n: usize, dt: f64) -> f64 {
    if k == 0 || k == n {
        0.5 * dt
    } else {
        dt
    }
}

/// Checks E_W[𝒜F] = 0 on exact Brownian bridges and E_P[𝒜_𝒰F] = 0 for
/// the model bridge, where 𝒜_𝒰F = 𝒜F − E_ω̃[DF[ω̃]·∫∇𝒰(s, ω_s)·ω̃_s ds].
/// Model expectations use self-normalized weights exp(−∫𝒰).
#[allow(clippy::too_many_arguments)]
pub fn verify_generator_identities(
    context: &SteinContext,
    model: &PotentialModel,
    battery: &[SimpleFunctional],
    budget: u64,
    seed: u64,
    engine: &Engine,
    target_se: f64,
) -> Result<GeneratorReport> {
    let Some(first) = battery.first() else {
        return arg("empty functional battery");
    };
    if model.dim() != context.dim() {
        return arg("model dimension differs from the context");
    }
    if budget < 2 {
        return arg("budget must be at least 2");
    }
    let n = first.grid().n;
    if battery.iter().any(|f| f.grid().n != n) {
        return arg("battery functionals must share one grid");
    }
    let preps: Vec<Prepared> = battery.iter().map(|f| prepare(&f.directions, context)).collect::<Result<_>>()?;
    let d = context.dim();
    let dt = 2.0 * context.horizon / n as f64;
    let m = battery.len();
    let rows = engine.collect(budget, seed, |s| {
        let path = sample_brownian_bridge(&context.x, &context.y, context.horizon, n, &mut s.rng());
        let mut log_w = 0.0;
        let mut grad_u = vec![0.0; (n + 1) * d];
        for k in 0..=n {
            let t = grid_time(context.horizon, n, k);
            let z = path.position(k);
            log_w -= trapezoid_weight(k, n, dt) * model.reciprocal_potential(t, z)?;
            model.reciprocal_characteristic_into(t, z, &mut grad_u[k * d..(k + 1) * d])?;
        }
        let mut row = Vec::with_capacity(1 + 2 * m);
        row.push(log_w);
        let mut corrections = Vec::with_capacity(m);
        for (f, prep) in battery.iter().zip(&preps) {
            let ints = centred_integrals(&f.directions, &path, context)?;
            let a = ints.len();
            let (mut g, mut h) = (vec![0.0; a], vec![0.0; a * a]);
            let gen = generator_prepared(f, prep, &ints, &mut g, &mut h);
            let mut corr = 0.0;
            for (gi, cross) in g.iter().zip(&prep.cross) {
                let mut s = 0.0;
                for k in 0..=n {
                    let w = trapezoid_weight(k, n, dt);
                    for i in 0..d {
                        s += w * grad_u[k * d + i] * cross[k * d + i];
                    }
                }
                corr += gi * s;
            }
            row.push(gen);
            corrections.push(gen - corr);
        }
        row.extend(corrections);
        Ok(row)
    })?;
    let max_lw = rows.iter().map(|r| r[0]).fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = rows.iter().map(|r| (r[0] - max_lw).exp()).collect();
    let wbar = weights.iter().sum::<f64>() / weights.len() as f64;
    let mut checks = Vec::with_capacity(2 * m);
    for (j, f) in battery.iter().enumerate() {
        let name = PathFunctional::Simple(f.clone()).name();
        let plain = SampleStats::from_slice(&rows.iter().map(|r| r[1 + j]).collect::<Vec<_>>());
        checks.push(IdentityCheck {
            functional: name.clone(),
            identity: "a",
            mean: plain.mean(),
            std_error: plain.std_error(),
            verdict: classify(plain.mean(), plain.std_error(), target_se),
        });
        let vals: Vec<f64> = rows.iter().map(|r| r[1 + m + j]).collect();
        let mean = weights.iter().zip(&vals).map(|(w, v)| w * v).sum::<f64>() / (wbar * vals.len() as f64);
        let influence: Vec<f64> = weights.iter().zip(&vals).map(|(w, v)| w / wbar * (v - mean)).collect();
        let se = SampleStats::from_slice(&influence).std_error();
        checks.push(IdentityCheck { functional: name, identity: "b", mean, std_error: se, verdict: classify(mean, se, target_se) });
    }
    let verdict = if checks.iter().any(|c| c.verdict == Verdict::Fail) {
        Verdict::Fail
    } else if checks.iter().any(|c| c.verdict == Verdict::Inconclusive) {
        Verdict::Inconclusive
    } else {
        Verdict::Pass
    };
    Ok(GeneratorReport { horizon: context.horizon, budget, n_steps: n, checks, verdict })
}

/// Monte Carlo estimate of E_W^{0,0}_{−1,1}(‖ω‖_∞ ∫|ω_s| ds).
#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct SteinConstant {
    pub estimate: f64,
    pub std_error: f64,
    pub budget: u64,
    pub n_steps: usize,
    pub dim: usize,
}

impl SteinConstant {
    pub fn relative_error(&self) -> f64 {
        self.std_error / self.estimate
    }
}

/// Sup of |ω| over the continuous bridge given its grid values (d = 1).
/// Each interval whose endpoints come within 8 standard deviations of the
/// grid maximum gets an exact draw of the Brownian-bridge maximum on it,
/// taken on the side of the larger endpoint.
fn continuous_sup(values: &[f64], delta: f64, rng: &mut ChaCha8Rng) -> f64 {
    let grid_max = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let threshold = grid_max - 8.0 * delta.sqrt();
    let mut best = grid_max;
    for w in values.windows(2) {
        let (a, b) = (w[0], w[1]);
        if a.abs().max(b.abs()) <= threshold {
            continue;
        }
        let (a, b) = if a + b >= 0.0 { (a, b) } else { (-a, -b) };
        let u: f64 = 1.0 - rng.random::<f64>();
        let top = 0.5 * (a + b + ((b - a) * (b - a) - 2.0 * delta * u.ln()).sqrt());
        best = best.max(top);
    }
    best
}

fn stein_functional(positions: &[f64], n: usize, d: usize, correction: Option<&mut ChaCha8Rng>) -> f64 {
    let dt = 2.0 / n as f64;
    let norm = |k: usize| positions[k * d..(k + 1) * d].iter().map(|v| v * v).sum::<f64>().sqrt();
    let integral: f64 = (0..n).map(|k| 0.5 * dt * (norm(k) + norm(k + 1))).sum();
    let sup = match correction {
        Some(rng) if d == 1 => continuous_sup(positions, dt, rng),
        _ => (0..=n).map(norm).fold(0.0, f64::max),
    };
    sup * integral
}

fn bridge_on_unit(rng: &mut ChaCha8Rng, d: usize, n: usize) -> Vec<f64> {
    let zero = vec![0.0; d];
    sample_brownian_bridge(&zero, &zero, 1.0, n, rng).positions
}

/// C by Monte Carlo over exact Brownian bridges on [−1, 1]. In one
/// dimension the grid sup is replaced by the continuous sup.
pub fn estimate_stein_constant(budget: u64, seed: u64, dim: usize, n_steps: usize, engine: &Engine) -> Result<SteinConstant> {
    if dim == 0 || n_steps < 2 || budget < 2 {
        return arg("need dim ≥ 1, n_steps ≥ 2 and budget ≥ 2");
    }
    let stats = engine.run_batches(budget, seed, |s| {
        let p = bridge_on_unit(&mut s.rng(), dim, n_steps);
        Ok(stein_functional(&p, n_steps, dim, Some(&mut s.child(1).rng())))
    })?;
    Ok(SteinConstant { estimate: stats.mean(), std_error: stats.std_error(), budget, n_steps, dim })
}

#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct SteinRefinement {
    pub coarse: SteinConstant,
    pub fine: SteinConstant,
    pub difference: f64,
    pub difference_se: f64,
}

/// Coarse and Lévy-midpoint refined estimates from common random numbers.
pub fn stein_constant_refinement(budget: u64, seed: u64, n_steps: usize, engine: &Engine) -> Result<SteinRefinement> {
    if n_steps < 2 || budget < 2 {
        return arg("need n_steps ≥ 2 and budget ≥ 2");
    }
    let delta = 2.0 / n_steps as f64;
    let stats = engine.run_batches_vec(budget, seed, 3, |s| {
        let coarse = bridge_on_unit(&mut s.rng(), 1, n_steps);
        let mut mid = s.child(0).rng();
        let mut fine = Vec::with_capacity(2 * n_steps + 1);
        for w in coarse.windows(2) {
            let z: f64 = mid.sample(StandardNormal);
            fine.push(w[0]);
            fine.push(0.5 * (w[0] + w[1]) + 0.5 * delta.sqrt() * z);
        }
        fine.push(coarse[n_steps]);
        let c = stein_functional(&coarse, n_steps, 1, Some(&mut s.child(1).rng()));
        let f = stein_functional(&fine, 2 * n_steps, 1, Some(&mut s.child(2).rng()));
        Ok(vec![c, f, f - c])
    })?;
    let mk = |st: &SampleStats, n| SteinConstant { estimate: st.mean(), std_error: st.std_error(), budget, n_steps: n, dim: 1 };
    Ok(SteinRefinement {
        coarse: mk(&stats[0], n_steps),
        fine: mk(&stats[1], 2 * n_steps),
        difference: stats[2].mean(),
        difference_se: stats[2].std_error(),
    })
}

/// Budgets and grids of [`verify_stein_bound`].
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct SteinSettings {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Exact Brownian bridges for the lower battery.
    pub budget: u64,
    pub n_steps: usize,
    /// Synchronous-coupling paths for the upper side.
    pub coupling_paths: u64,
    pub coupling_steps: usize,
    pub coupling_drift: crate::bridge::FkSettings,
    pub scan_region: Vec<(f64, f64)>,
    pub scan_resolution: usize,
}

impl SteinSettings {
    pub fn new(dim: usize) -> Self {
        Self {
            x: vec![0.0; dim],
            y: vec![0.0; dim],
            budget: 100_000,
            n_steps: 1000,
            coupling_paths: 64,
            coupling_steps: 100,
            coupling_drift: crate::bridge::FkSettings { inner_budget: 100, dt: 0.02, base: crate::bridge::BaseKind::Brownian },
            scan_region: vec![(-std::f64::consts::PI, std::f64::consts::PI); dim],
            scan_resolution: 65,
        }
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct LowerTerm {
    pub functional: String,
    pub difference: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct SteinReport {
    pub horizon: f64,
    /// Declared global sup of |∇𝒰|.
    pub sup_grad_reciprocal: f64,
    /// Largest |∇𝒰| seen on the scan grid at t = 0.
    pub sup_scan: f64,
    pub c_estimate: f64,
    pub c_std_error: f64,
    pub bound: f64,
    pub bound_std_error: f64,
    pub w1_lower: f64,
    pub w1_lower_std_error: f64,
    pub lower_terms: Vec<LowerTerm>,
    pub w1_upper: f64,
    pub w1_upper_std_error: f64,
    /// w1_lower ≤ w1_upper within 3 combined standard errors.
    pub consistent: bool,
    pub pass: bool,
}

type Lipschitz = (&'static str, Box<dyn Fn(&DiscretizedPath, &DiscretizedPath) -> f64 + Send + Sync>);

/// 1-Lipschitz functionals for the sup norm (second argument is φ).
fn lipschitz_battery(horizon: f64, n: usize) -> Vec<Lipschitz> {
    let node = move |t: f64| (((t + horizon) / (2.0 * horizon)) * n as f64).round() as usize;
    let (a, b, c) = (node(-horizon / 2.0), node(0.0), node(horizon / 2.0));
    let sup_dev = |p: &DiscretizedPath, phi: &DiscretizedPath| {
        (0..p.len())
            .map(|k| p.position(k).iter().zip(phi.position(k)).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    };
    vec![
        ("coordinate(-T/2)", Box::new(move |p: &DiscretizedPath, _: &DiscretizedPath| p.position(a)[0])),
        ("coordinate(0)", Box::new(move |p: &DiscretizedPath, _: &DiscretizedPath| p.position(b)[0])),
        ("coordinate(T/2)", Box::new(move |p: &DiscretizedPath, _: &DiscretizedPath| p.position(c)[0])),
        (
            "mean",
            Box::new(|p: &DiscretizedPath, _: &DiscretizedPath| {
                let dt = p.dt();
                (0..p.n_steps).map(|k| 0.5 * dt * (p.position(k)[0] + p.position(k + 1)[0])).sum::<f64>() / (2.0 * p.horizon)
            }),
        ),
        ("sup_deviation_cap1", Box::new(move |p: &DiscretizedPath, phi: &DiscretizedPath| sup_dev(p, phi).min(1.0))),
        (
            "sup_positive_part",
            Box::new(|p: &DiscretizedPath, phi: &DiscretizedPath| {
                (0..p.len()).map(|k| (p.position(k)[0] - phi.position(k)[0]).max(0.0)).fold(0.0, f64::max)
            }),
        ),
    ]
}

/// Sandwiches W₁(P^{x,y}, W^{x,y}) for each horizon and checks the lower
/// side against C·T²·sup|∇𝒰|.
pub fn verify_stein_bound(
    model: &PotentialModel,
    horizons: &[f64],
    constant: &SteinConstant,
    settings: &SteinSettings,
    seed: u64,
    engine: &Engine,
) -> Result<Vec<SteinReport>> {
    let Some(sup) = model.reciprocal_gradient_bound() else {
        return Err(Error::Precondition("model declares no global bound on the reciprocal characteristic".into()));
    };
    let sup_scan = reciprocal_gradient_scan(model, 0.0, &settings.scan_region, settings.scan_resolution)?;
    if sup_scan > sup * (1.0 + 1e-9) + 1e-12 {
        return Err(Error::Precondition(format!("declared bound {sup} is below the scanned value {sup_scan}")));
    }
    let mut reports = Vec::with_capacity(horizons.len());
    for (j, &horizon) in horizons.iter().enumerate() {
        let context = SteinContext::new(settings.x.clone(), settings.y.clone(), horizon)?;
        let n = settings.n_steps;
        let anchor = context.anchor_path(n);
        let battery = lipschitz_battery(horizon, n);
        let dt = 2.0 * horizon / n as f64;
        let rows = engine.collect(settings.budget, seed.wrapping_add(j as u64), |s| {
            let path = sample_brownian_bridge(&context.x, &context.y, horizon, n, &mut s.rng());
            let mut log_w = 0.0;
            for k in 0..=n {
                log_w -= trapezoid_weight(k, n, dt) * model.reciprocal_potential(grid_time(horizon, n, k), path.position(k))?;
            }
            let mut row = vec![log_w];
            row.extend(battery.iter().map(|(_, f)| f(&path, &anchor)));
            Ok(row)
        })?;
        let max_lw = rows.iter().map(|r| r[0]).fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = rows.iter().map(|r| (r[0] - max_lw).exp()).collect();
        let wbar = weights.iter().sum::<f64>() / weights.len() as f64;
        let mut lower_terms = Vec::with_capacity(battery.len());
        for (i, (name, _)) in battery.iter().enumerate() {
            let vals: Vec<f64> = rows.iter().map(|r| r[1 + i]).collect();
            let plain = vals.iter().sum::<f64>() / vals.len() as f64;
            let model_mean = weights.iter().zip(&vals).map(|(w, v)| w * v).sum::<f64>() / (wbar * vals.len() as f64);
            let influence: Vec<f64> =
                weights.iter().zip(&vals).map(|(w, v)| w / wbar * (v - model_mean) - (v - plain)).collect();
            let se = SampleStats::from_slice(&influence).std_error();
            lower_terms.push(LowerTerm { functional: name.to_string(), difference: (model_mean - plain).abs(), std_error: se });
        }
        let best = lower_terms
            .iter()
            .max_by(|a, b| a.difference.total_cmp(&b.difference))
            .cloned()
            .expect("battery is non-empty");

        let problem = BridgeProblem::new(context.x.clone(), context.y.clone(), horizon, model.clone())?;
        let fk = DriftMode::FeynmanKac(settings.coupling_drift);
        let upper = engine.run_batches(settings.coupling_paths, seed.wrapping_add(1000 + j as u64), |s| {
            let pair = couple_synchronous(&problem, &problem, settings.coupling_steps, s, &fk, &DriftMode::Brownian)?;
            Ok(pair.gaps().into_iter().fold(0.0, f64::max))
        })?;

        let scale = horizon * horizon * sup;
        let bound = constant.estimate * scale;
        let bound_se = constant.std_error * scale;
        let sigma = (best.std_error.powi(2) + bound_se.powi(2)).sqrt();
        let consistent = best.difference <= upper.mean() + 3.0 * (best.std_error.powi(2) + upper.std_error().powi(2)).sqrt();
        reports.push(SteinReport {
            horizon,
            sup_grad_reciprocal: sup,
            sup_scan,
            c_estimate: constant.estimate,
            c_std_error: constant.std_error,
            bound,
            bound_std_error: bound_se,
            w1_lower: best.difference,
            w1_lower_std_error: best.std_error,
            lower_terms,
            w1_upper: upper.mean(),
            w1_upper_std_error: upper.std_error(),
            consistent,
            pass: best.difference - 3.0 * sigma <= bound,
        });
    }
    Ok(reports)
}

/// Draws one exact Brownian bridge for the context (handy for callers
/// that evaluate functionals directly).
pub fn sample_context_bridge(context: &SteinContext, n_steps: usize, stream: RngStream) -> DiscretizedPath {
    sample_brownian_bridge(&context.x, &context.y, context.horizon, n_steps, &mut stream.rng())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pathspace::{Identity, Square, TimeGrid};
    use approx::assert_abs_diff_eq;

    fn linear(horizon: f64, n: usize) -> SimpleFunctional {
        let grid = TimeGrid::new(horizon, n).unwrap();
        let h = GridFunction::scalar(grid, |t| 1.0 + t * t).unwrap();
        SimpleFunctional::new(Arc::new(Identity), vec![h]).unwrap()
    }

    #[test]
    fn anchor_and_sigma() {
        let c = SteinContext::new(vec![1.0, 2.0], vec![3.0, -2.0], 0.5).unwrap();
        assert_eq!(c.anchor(-0.5), vec![1.0, 2.0]);
        assert_eq!(c.anchor(0.5), vec![3.0, -2.0]);
        assert_eq!(SteinContext::sigma(0.0), 0.0);
        assert_abs_diff_eq!(SteinContext::sigma(1.0), (1.0 - (-2.0f64).exp()).sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn eigen_relation_is_exact() {
        let ctx = SteinContext::new(vec![0.3], vec![-0.7], 1.0).unwrap();
        let f = PathFunctional::Simple(linear(1.0, 200));
        for i in 0..5 {
            let p = sample_context_bridge(&ctx, 200, RngStream::new(9, i));
            let v = f.value(&p, &ctx).unwrap();
            let a = generator_apply(&f, &p, &ctx).unwrap();
            assert!((a + v).abs() < 1e-12, "{a} vs {v}");
        }
    }

    #[test]
    fn quadratic_generator_and_unsupported() {
        let ctx = SteinContext::new(vec![0.0], vec![1.0], 1.0).unwrap();
        let grid = TimeGrid::new(1.0, 100).unwrap();
        let h = GridFunction::scalar(grid, |t| t.cos()).unwrap();
        let f = PathFunctional::Simple(SimpleFunctional::new(Arc::new(Square), vec![h.clone()]).unwrap());
        let p = sample_context_bridge(&ctx, 100, RngStream::new(1, 0));
        let dt = grid.dt();
        let right: Vec<f64> = (0..100).map(|k| h.right(k, 0)).collect();
        let k0 = right.iter().map(|v| v * v).sum::<f64>() * dt - (right.iter().sum::<f64>() * dt).powi(2) / 2.0;
        let v = f.value(&p, &ctx).unwrap();
        assert_abs_diff_eq!(generator_apply(&f, &p, &ctx).unwrap(), -2.0 * v + 2.0 * k0, epsilon = 1e-12);
        let opaque = PathFunctional::Opaque { name: "sup".into(), f: Arc::new(|p| p.positions.iter().fold(0.0, |m: f64, v| m.max(v.abs()))) };
        assert!(matches!(generator_apply(&opaque, &p, &ctx), Err(Error::Unsupported(_))));
    }

    #[test]
    fn semigroup_on_linear_functional() {
        let engine = Engine::new(1).unwrap();
        let ctx = SteinContext::new(vec![0.0], vec![0.5], 1.0).unwrap();
        let f = PathFunctional::Simple(linear(1.0, 100));
        let p = sample_context_bridge(&ctx, 100, RngStream::new(2, 0));
        let v = f.value(&p, &ctx).unwrap();
        let s0 = semigroup_apply(&f, &p, 0.0, &ctx, 10, 1, &engine).unwrap();
        assert_abs_diff_eq!(s0.mean, v, epsilon = 1e-12);
        let s = semigroup_apply(&f, &p, 0.7, &ctx, 4000, 1, &engine).unwrap();
        assert!((s.mean - (-0.7f64).exp() * v).abs() < 4.0 * s.std_error, "{s:?} vs {}", (-0.7f64).exp() * v);
    }

    #[test]
    fn semigroup_property_in_law() {
        let engine = Engine::new(1).unwrap();
        let ctx = SteinContext::new(vec![0.0], vec![0.0], 1.0).unwrap();
        let p = sample_context_bridge(&ctx, 50, RngStream::new(4, 0));
        let sup = PathFunctional::Opaque { name: "sup".into(), f: Arc::new(|p| p.positions.iter().fold(0.0, |m: f64, v| m.max(v.abs()))) };
        let direct = semigroup_apply(&sup, &p, 0.5, &ctx, 20_000, 5, &engine).unwrap();
        let zero = vec![0.0];
        let nested = engine
            .run_batches(20_000, 6, |s| {
                let n1 = sample_brownian_bridge(&zero, &zero, 1.0, 50, &mut s.child(0).rng());
                let n2 = sample_brownian_bridge(&zero, &zero, 1.0, 50, &mut s.child(1).rng());
                sup.value(&ctx.mix(&ctx.mix(&p, &n1, 0.2), &n2, 0.3), &ctx)
            })
            .unwrap();
        let se = (direct.std_error.powi(2) + nested.std_error().powi(2)).sqrt();
        assert!((direct.mean - nested.mean()).abs() < 4.0 * se);
    }

    #[test]
    fn identities_hold_for_zero_and_sine() {
        let engine = Engine::new(1).unwrap();
        let ctx = SteinContext::new(vec![0.2], vec![-0.4], 0.5).unwrap();
        let battery = functional_battery(0.5, 100, 1).unwrap();
        let zero = verify_generator_identities(&ctx, &PotentialModel::zero(1), &battery, 4000, 1, &engine, 1.0).unwrap();
        assert_eq!(zero.verdict, Verdict::Pass, "{zero:#?}");
        for pair in zero.checks.chunks(2) {
            assert_abs_diff_eq!(pair[0].mean, pair[1].mean, epsilon = 1e-12);
        }
        let sine = verify_generator_identities(&ctx, &PotentialModel::sine(0.2, 1), &battery, 4000, 2, &engine, 1.0).unwrap();
        assert_eq!(sine.verdict, Verdict::Pass, "{sine:#?}");
        let tight = verify_generator_identities(&ctx, &PotentialModel::zero(1), &battery, 100, 1, &engine, 1e-9).unwrap();
        assert_eq!(tight.verdict, Verdict::Inconclusive);
    }

    #[test]
    fn continuous_sup_matches_fine_grid() {
        let engine = Engine::new(1).unwrap();
        let c = estimate_stein_constant(4000, 3, 1, 50, &engine).unwrap();
        let fine = estimate_stein_constant(4000, 4, 1, 2000, &engine).unwrap();
        assert!(c.estimate > 0.0 && c.estimate.is_finite());
        let se = (c.std_error.powi(2) + fine.std_error.powi(2)).sqrt();
        assert!((c.estimate - fine.estimate).abs() < 4.0 * se, "{c:?} {fine:?}");
        let r = stein_constant_refinement(2000, 3, 100, &engine).unwrap();
        assert!(r.difference.abs() < 4.0 * r.difference_se.max(1e-12), "{r:?}");
    }

    #[test]
    fn stein_bound_refuses_unbounded_and_scales() {
        let engine = Engine::new(1).unwrap();
        let constant = SteinConstant { estimate: 1.0, std_error: 0.0, budget: 1, n_steps: 1, dim: 1 };
        let settings = SteinSettings { budget: 200, n_steps: 50, coupling_paths: 2, coupling_steps: 20, ..SteinSettings::new(1) };
        let q = PotentialModel::quadratic(1.0, 1);
        assert!(matches!(verify_stein_bound(&q, &[1.0], &constant, &settings, 1, &engine), Err(Error::Precondition(_))));
        let zero = verify_stein_bound(&PotentialModel::zero(1), &[0.5, 1.0], &constant, &settings, 1, &engine).unwrap();
        assert!(zero.iter().all(|r| r.w1_lower.abs() < 1e-12 && r.pass && r.bound == 0.0));
        assert!(zero.iter().all(|r| r.w1_upper.abs() < 1e-12));
        let sine = PotentialModel::sine(0.2, 1);
        let reps = verify_stein_bound(&sine, &[0.5, 1.0], &constant, &settings, 1, &engine).unwrap();
        assert_abs_diff_eq!(reps[1].bound / reps[0].bound, 4.0, epsilon = 1e-12);
        assert!(reps.iter().all(|r| r.pass));
    }
}
