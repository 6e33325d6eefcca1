//! Functions on [−T, T], the α-inner product and the Gaussian structure of
//! the OU bridge.
//!
//! `⟨h, g⟩_α = ⟨φ, g⟩` where φ solves
//! `φ − α²∬φ + (α²/2T)∭φ = h − (1/2T)∫h`. The integral equation is
//! discretized directly with cumulative trapezoid sums so that indicators
//! need no smoothing.
//!
//! Grid functions carry one-sided limits at their nodes: the stored value is
//! the midpoint and `jumps[k]` the right limit minus the left limit. Products
//! of two step functions are then integrated with one-sided trapezoid sums,
//! which keeps the quadrature second order when a jump sits on a node.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::bridge::{ou_bridge_variance, BridgeProblem, DiscretizedPath, DriftMode, PathSimulator};
use crate::error::{arg, Error, Result};
use crate::mc::{empirical_tail, Engine, SampleStats};
use crate::potentials::{ConvexityCertificate, PotentialModel};

/// Uniform grid on [−T, T] with `n` intervals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeGrid {
    pub horizon: f64,
    pub n: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, n: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return arg(format!("horizon must be positive, got {horizon}"));
        }
        if n < 2 {
            return arg("grid needs at least 2 intervals");
        }
        Ok(Self { horizon, n })
    }

    pub fn dt(&self) -> f64 {
        2.0 * self.horizon / self.n as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        crate::bridge::grid_time(self.horizon, self.n, k)
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.n).map(|k| self.time(k)).collect()
    }

    /// Composite trapezoid weights.
    pub fn weights(&self) -> Vec<f64> {
        let dt = self.dt();
        let mut w = vec![dt; self.n + 1];
        w[0] = dt / 2.0;
        w[self.n] = dt / 2.0;
        w
    }

    fn same(&self, other: &TimeGrid) -> bool {
        self.n == other.n && (self.horizon - other.horizon).abs() <= 1e-12 * self.horizon
    }

    /// Index of a node at time t, if t is one.
    fn node_at(&self, t: f64) -> Option<usize> {
        let x = (t + self.horizon) / self.dt();
        let k = x.round();
        ((x - k).abs() < 1e-9 && k >= 0.0 && k <= self.n as f64).then_some(k as usize)
    }
}

/// ℝ^d-valued function sampled on a [`TimeGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub grid: TimeGrid,
    pub dim: usize,
    /// Node-major midpoint values.
    pub values: Vec<f64>,
    /// Node-major jumps (right limit minus left limit).
    pub jumps: Vec<f64>,
}

impl GridFunction {
    /// Continuous function sampled at the nodes.
    pub fn from_fn(grid: TimeGrid, dim: usize, f: impl Fn(f64, &mut [f64])) -> Result<Self> {
        if dim == 0 {
            return arg("dimension must be positive");
        }
        let mut values = vec![0.0; (grid.n + 1) * dim];
        for k in 0..=grid.n {
            f(grid.time(k), &mut values[k * dim..(k + 1) * dim]);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return arg("grid function values must be finite");
        }
        Ok(Self { grid, dim, jumps: vec![0.0; values.len()], values })
    }

    pub fn scalar(grid: TimeGrid, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::from_fn(grid, 1, |t, out| out[0] = f(t))
    }

    pub fn constant(grid: TimeGrid, c: &[f64]) -> Result<Self> {
        Self::from_fn(grid, c.len(), |_, out| out.copy_from_slice(c))
    }

    /// `1_{[from, to]}(t)·e_component`. Endpoints that fall on interior nodes
    /// are stored as jumps; others are rounded into the enclosing interval.
    pub fn indicator(grid: TimeGrid, from: f64, to: f64, dim: usize, component: usize) -> Result<Self> {
        if component >= dim {
            return arg("component out of range");
        }
        if !(from <= to) {
            return arg(format!("empty indicator interval [{from}, {to}]"));
        }
        let mut f = Self::from_fn(grid, dim, |_, _| {})?;
        let h = grid.horizon;
        let edge = |t: f64| grid.node_at(t).filter(|&k| k > 0 && k < grid.n);
        let (a, b) = (edge(from), edge(to));
        for k in 0..=grid.n {
            let t = grid.time(k);
            let idx = k * dim + component;
            if Some(k) == a && Some(k) == b {
                continue;
            }
            if Some(k) == a {
                f.values[idx] = 0.5;
                f.jumps[idx] = 1.0;
            } else if Some(k) == b {
                f.values[idx] = 0.5;
                f.jumps[idx] = -1.0;
            } else if t >= from.max(-h) - 1e-12 * h && t <= to.min(h) + 1e-12 * h {
                f.values[idx] = 1.0;
            }
        }
        Ok(f)
    }

    pub fn value(&self, k: usize, i: usize) -> f64 {
        self.values[k * self.dim + i]
    }

    pub fn left(&self, k: usize, i: usize) -> f64 {
        self.values[k * self.dim + i] - 0.5 * self.jumps[k * self.dim + i]
    }

    pub fn right(&self, k: usize, i: usize) -> f64 {
        self.values[k * self.dim + i] + 0.5 * self.jumps[k * self.dim + i]
    }

    /// ∫ component i over [−T, T].
    pub fn integral(&self, i: usize) -> f64 {
        let dt = self.grid.dt();
        (0..self.grid.n).map(|k| 0.5 * dt * (self.right(k, i) + self.left(k + 1, i))).sum()
    }

    /// ∫ ⟨self, other⟩ dt with one-sided limits.
    pub fn dot(&self, other: &GridFunction) -> Result<f64> {
        self.check_compatible(other)?;
        let dt = self.grid.dt();
        let mut s = 0.0;
        for k in 0..self.grid.n {
            for i in 0..self.dim {
                s += 0.5 * dt * (self.right(k, i) * other.right(k, i) + self.left(k + 1, i) * other.left(k + 1, i));
            }
        }
        Ok(s)
    }

    fn check_compatible(&self, other: &GridFunction) -> Result<()> {
        if !self.grid.same(&other.grid) || self.dim != other.dim {
            return arg("grid functions live on different grids or dimensions");
        }
        Ok(())
    }

    /// Σ cᵢ fᵢ over functions on a shared grid.
    pub fn linear_combination(terms: &[(f64, &GridFunction)]) -> Result<Self> {
        let Some((_, first)) = terms.first() else {
            return arg("empty combination");
        };
        let mut out = Self { values: vec![0.0; first.values.len()], jumps: vec![0.0; first.values.len()], ..(*first).clone() };
        for (c, f) in terms {
            first.check_compatible(f)?;
            for (o, v) in out.values.iter_mut().zip(&f.values) {
                *o += c * v;
            }
            for (o, v) in out.jumps.iter_mut().zip(&f.jumps) {
                *o += c * v;
            }
        }
        Ok(out)
    }
}

/// Scalar profiles used by the verification batteries.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Profile {
    Indicator { from: f64, to: f64 },
    Constant(f64),
    /// sin(ω t + phase).
    Sine { omega: f64, phase: f64 },
    /// a·t + b.
    Linear { slope: f64, offset: f64 },
}

impl Profile {
    pub fn sample(&self, grid: TimeGrid) -> Result<GridFunction> {
        match *self {
            Profile::Indicator { from, to } => GridFunction::indicator(grid, from, to, 1, 0),
            Profile::Constant(c) => GridFunction::constant(grid, &[c]),
            Profile::Sine { omega, phase } => GridFunction::scalar(grid, |t| (omega * t + phase).sin()),
            Profile::Linear { slope, offset } => GridFunction::scalar(grid, |t| slope * t + offset),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Profile::Indicator { from, to } => format!("1[{from},{to}]"),
            Profile::Constant(c) => format!("const({c})"),
            Profile::Sine { omega, phase } => format!("sin({omega}t+{phase})"),
            Profile::Linear { slope, offset } => format!("{slope}t+{offset}"),
        }
    }
}

/// Factorized discrete operator h ↦ φ for one (α, T, grid).
#[derive(Debug)]
pub struct AlphaInnerProduct {
    pub alpha: f64,
    pub grid: TimeGrid,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

fn operator_cache() -> &'static Mutex<HashMap<(u64, u64, usize), Arc<AlphaInnerProduct>>> {
    static CACHE: OnceLock<Mutex<HashMap<(u64, u64, usize), Arc<AlphaInnerProduct>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

impl AlphaInnerProduct {
    pub fn new(alpha: f64, grid: TimeGrid) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return arg(format!("alpha must be finite and non-negative, got {alpha}"));
        }
        if grid.n < 16 {
            return arg("grid resolution must be at least 16");
        }
        let n = grid.n + 1;
        let dt = grid.dt();
        let a2 = alpha * alpha;
        let w = grid.weights();
        let scale = a2 / (2.0 * grid.horizon);
        let mut a = DMatrix::<f64>::identity(n, n);
        // Column j of C² is the cumulative trapezoid of column j of C.
        let mut col = vec![0.0; n];
        let mut col2 = vec![0.0; n];
        for j in 0..n {
            col[0] = 0.0;
            for k in 1..n {
                let step = 0.5 * dt * ((k - 1 == j) as u8 as f64 + (k == j) as u8 as f64);
                col[k] = col[k - 1] + step;
            }
            col2[0] = 0.0;
            for k in 1..n {
                col2[k] = col2[k - 1] + 0.5 * dt * (col[k - 1] + col[k]);
            }
            let triple: f64 = w.iter().zip(&col2).map(|(w, c)| w * c).sum();
            for k in 0..n {
                a[(k, j)] += -a2 * col2[k] + scale * triple;
            }
        }
        let lu = a.lu();
        if !lu.is_invertible() {
            return Err(Error::Singular(format!("α-operator at alpha={alpha}, n={}", grid.n)));
        }
        Ok(Self { alpha, grid, lu })
    }

    /// Shared factorization for (α, T, n).
    pub fn cached(alpha: f64, grid: TimeGrid) -> Result<Arc<Self>> {
        let key = (alpha.to_bits(), grid.horizon.to_bits(), grid.n);
        if let Some(op) = operator_cache().lock().expect("cache poisoned").get(&key) {
            return Ok(op.clone());
        }
        let op = Arc::new(Self::new(alpha, grid)?);
        operator_cache().lock().expect("cache poisoned").entry(key).or_insert_with(|| op.clone());
        Ok(op)
    }

    pub fn solve_phi(&self, h: &GridFunction) -> Result<GridFunction> {
        if !h.grid.same(&self.grid) {
            return arg("function grid does not match the operator grid");
        }
        let n = self.grid.n + 1;
        let d = h.dim;
        let mut phi = h.clone();
        for i in 0..d {
            let mean = h.integral(i) / (2.0 * self.grid.horizon);
            let rhs = DVector::from_iterator(n, (0..n).map(|k| h.value(k, i) - mean));
            let sol = self.lu.solve(&rhs).ok_or_else(|| Error::Singular("α-operator solve failed".into()))?;
            for k in 0..n {
                phi.values[k * d + i] = sol[k];
            }
        }
        // φ − h is continuous, so φ inherits the jumps of h.
        Ok(phi)
    }

    pub fn inner(&self, h: &GridFunction, g: &GridFunction) -> Result<f64> {
        h.check_compatible(g)?;
        self.solve_phi(h)?.dot(g)
    }
}

/// φ for `h` on its own grid; T must match the grid.
pub fn solve_phi(h: &GridFunction, alpha: f64, horizon: f64) -> Result<GridFunction> {
    check_horizon(h, horizon)?;
    AlphaInnerProduct::cached(alpha, h.grid)?.solve_phi(h)
}

/// ⟨h, g⟩_α by trapezoid quadrature of φ·g.
pub fn inner_product_alpha(h: &GridFunction, g: &GridFunction, alpha: f64, horizon: f64) -> Result<f64> {
    check_horizon(h, horizon)?;
    h.check_compatible(g)?;
    AlphaInnerProduct::cached(alpha, h.grid)?.inner(h, g)
}

fn check_horizon(h: &GridFunction, horizon: f64) -> Result<()> {
    if (h.grid.horizon - horizon).abs() > 1e-12 * horizon.abs().max(1.0) {
        return arg(format!("grid horizon {} differs from T = {horizon}", h.grid.horizon));
    }
    Ok(())
}

/// Gaussian concentration rate ξ_α(t) = 1/(2 Var ω_t) of the OU bridge.
/// Returns +∞ for |t| ≥ T, where the bridge is pinned.
pub fn xi_alpha(t: f64, alpha: f64, horizon: f64) -> f64 {
    if t.abs() >= horizon {
        return f64::INFINITY;
    }
    1.0 / (2.0 * ou_bridge_variance(alpha, horizon, t))
}

/// Smooth outer function of a simple functional.
pub trait SmoothFunction: Send + Sync {
    fn arity(&self) -> usize;
    fn value(&self, u: &[f64]) -> f64;
    fn gradient(&self, u: &[f64], out: &mut [f64]);
    /// Row-major `arity × arity`.
    fn hessian(&self, u: &[f64], out: &mut [f64]);
    fn name(&self) -> String;
}

/// f(u) = u.
#[derive(Debug, Clone, Copy)]
pub struct Identity;

impl SmoothFunction for Identity {
    fn arity(&self) -> usize {
        1
    }
    fn value(&self, u: &[f64]) -> f64 {
        u[0]
    }
    fn gradient(&self, _: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
    }
    fn hessian(&self, _: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
    }
    fn name(&self) -> String {
        "u".into()
    }
}

/// f(u) = u².
#[derive(Debug, Clone, Copy)]
pub struct Square;

impl SmoothFunction for Square {
    fn arity(&self) -> usize {
        1
    }
    fn value(&self, u: &[f64]) -> f64 {
        u[0] * u[0]
    }
    fn gradient(&self, u: &[f64], out: &mut [f64]) {
        out[0] = 2.0 * u[0];
    }
    fn hessian(&self, _: &[f64], out: &mut [f64]) {
        out[0] = 2.0;
    }
    fn name(&self) -> String {
        "u^2".into()
    }
}

/// f(u, v) = uv.
#[derive(Debug, Clone, Copy)]
pub struct Product;

impl SmoothFunction for Product {
    fn arity(&self) -> usize {
        2
    }
    fn value(&self, u: &[f64]) -> f64 {
        u[0] * u[1]
    }
    fn gradient(&self, u: &[f64], out: &mut [f64]) {
        out[0] = u[1];
        out[1] = u[0];
    }
    fn hessian(&self, _: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&[0.0, 1.0, 1.0, 0.0]);
    }
    fn name(&self) -> String {
        "uv".into()
    }
}

/// f(u) = sin u.
#[derive(Debug, Clone, Copy)]
pub struct SinOuter;

impl SmoothFunction for SinOuter {
    fn arity(&self) -> usize {
        1
    }
    fn value(&self, u: &[f64]) -> f64 {
        u[0].sin()
    }
    fn gradient(&self, u: &[f64], out: &mut [f64]) {
        out[0] = u[0].cos();
    }
    fn hessian(&self, u: &[f64], out: &mut [f64]) {
        out[0] = -u[0].sin();
    }
    fn name(&self) -> String {
        "sin(u)".into()
    }
}

/// F(ω) = f(∫h¹·dω, …, ∫hⁿ·dω).
#[derive(Clone)]
pub struct SimpleFunctional {
    pub outer: Arc<dyn SmoothFunction>,
    pub directions: Vec<GridFunction>,
}

impl std::fmt::Debug for SimpleFunctional {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SimpleFunctional").field("outer", &self.outer.name()).field("n", &self.directions.len()).finish()
    }
}

impl SimpleFunctional {
    pub fn new(outer: Arc<dyn SmoothFunction>, directions: Vec<GridFunction>) -> Result<Self> {
        let Some(first) = directions.first() else {
            return arg("a simple functional needs at least one direction");
        };
        if outer.arity() != directions.len() {
            return arg(format!("outer function takes {} arguments, got {} directions", outer.arity(), directions.len()));
        }
        for h in &directions {
            first.check_compatible(h)?;
        }
        Ok(Self { outer, directions })
    }

    pub fn grid(&self) -> TimeGrid {
        self.directions[0].grid
    }

    pub fn dim(&self) -> usize {
        self.directions[0].dim
    }

    pub fn integrals(&self, path: &DiscretizedPath) -> Result<Vec<f64>> {
        stochastic_integrals(&self.directions, path)
    }

    pub fn value(&self, path: &DiscretizedPath) -> Result<f64> {
        Ok(self.outer.value(&self.integrals(path)?))
    }
}

/// Left-point sums Σ_k h(t_k⁺)·(ω_{k+1} − ω_k) for each direction.
pub fn stochastic_integrals(directions: &[GridFunction], path: &DiscretizedPath) -> Result<Vec<f64>> {
    directions
        .iter()
        .map(|h| {
            if h.grid.n != path.n_steps || (h.grid.horizon - path.horizon).abs() > 1e-12 * path.horizon || h.dim != path.dim {
                return arg("direction grid does not match the path grid");
            }
            if path.len() != path.n_steps + 1 {
                return arg("path is incomplete");
            }
            let d = h.dim;
            let mut s = 0.0;
            for k in 0..path.n_steps {
                let (a, b) = (path.position(k), path.position(k + 1));
                for i in 0..d {
                    s += h.right(k, i) * (b[i] - a[i]);
                }
            }
            Ok(s)
        })
        .collect()
}

/// DF = Σ ∂ᵢf(∫h·dω) hⁱ.
pub fn malliavin_derivative(functional: &SimpleFunctional, path: &DiscretizedPath) -> Result<GridFunction> {
    let u = functional.integrals(path)?;
    let mut g = vec![0.0; u.len()];
    functional.outer.gradient(&u, &mut g);
    let terms: Vec<(f64, &GridFunction)> = g.iter().copied().zip(&functional.directions).collect();
    GridFunction::linear_combination(&terms)
}

/// One (h, g) pair of the covariance battery.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct CovarianceCheck {
    pub h: String,
    pub g: String,
    pub monte_carlo: f64,
    pub std_error: f64,
    pub quadrature: f64,
    pub z_score: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct CovarianceReport {
    pub alpha: f64,
    pub horizon: f64,
    pub budget: u64,
    pub n_steps: usize,
    pub quadrature_intervals: usize,
    pub checks: Vec<CovarianceCheck>,
    pub pass: bool,
}

/// Five (h, g) pairs: indicator with itself, disjoint symmetric indicators,
/// a constant, two smooth profiles, and an indicator against a ramp.
pub fn covariance_battery(horizon: f64) -> Vec<(Profile, Profile)> {
    let t = horizon;
    let pi = std::f64::consts::PI;
    vec![
        (Profile::Indicator { from: -t, to: 0.0 }, Profile::Indicator { from: -t, to: 0.0 }),
        (Profile::Indicator { from: -t, to: -t / 2.0 }, Profile::Indicator { from: t / 2.0, to: t }),
        (Profile::Constant(1.0), Profile::Indicator { from: -t, to: 0.0 }),
        (Profile::Sine { omega: pi / t, phase: 0.0 }, Profile::Sine { omega: pi / (2.0 * t), phase: pi / 2.0 }),
        (Profile::Indicator { from: -t / 2.0, to: t / 2.0 }, Profile::Linear { slope: 1.0, offset: 0.5 }),
    ]
}

/// Monte Carlo E[∫h·dω ∫g·dω] under the OU bridge from 0 to 0 against
/// ⟨h, g⟩_α by quadrature, for each pair, at 3 standard errors.
#[allow(clippy::too_many_arguments)]
pub fn verify_covariance_identity(
    alpha: f64,
    horizon: f64,
    pairs: &[(Profile, Profile)],
    budget: u64,
    seed: u64,
    engine: &Engine,
    n_steps: usize,
    quadrature_intervals: usize,
) -> Result<CovarianceReport> {
    if !(alpha > 0.0) {
        return arg("covariance identity needs alpha > 0");
    }
    if pairs.is_empty() || budget < 2 {
        return arg("need at least one pair and a budget of 2");
    }
    let path_grid = TimeGrid::new(horizon, n_steps)?;
    let quad_grid = TimeGrid::new(horizon, quadrature_intervals)?;
    let problem = BridgeProblem::new(vec![0.0], vec![0.0], horizon, PotentialModel::quadratic(alpha, 1))?;
    let sim = PathSimulator::new(&problem, n_steps, &DriftMode::ExactOu(alpha))?;
    let mut profiles: Vec<Profile> = Vec::new();
    let mut index = |p: &Profile| match profiles.iter().position(|q| q == p) {
        Some(i) => i,
        None => {
            profiles.push(p.clone());
            profiles.len() - 1
        }
    };
    let slots: Vec<(usize, usize)> = pairs.iter().map(|(h, g)| (index(h), index(g))).collect();
    let right: Vec<Vec<f64>> = profiles
        .iter()
        .map(|p| p.sample(path_grid).map(|f| (0..n_steps).map(|k| f.right(k, 0)).collect()))
        .collect::<Result<_>>()?;
    let stats = engine.run_batches_vec(budget, seed, slots.len(), |s| {
        let mut integrals = vec![0.0; right.len()];
        let mut prev = 0.0;
        sim.walk(s, n_steps, |k, z| {
            if k > 0 {
                let dw = z[0] - prev;
                for (acc, h) in integrals.iter_mut().zip(&right) {
                    *acc += h[k - 1] * dw;
                }
            }
            prev = z[0];
        })?;
        Ok(slots.iter().map(|&(a, b)| integrals[a] * integrals[b]).collect())
    })?;
    let op = AlphaInnerProduct::cached(alpha, quad_grid)?;
    let mut checks = Vec::with_capacity(pairs.len());
    for ((h, g), st) in pairs.iter().zip(&stats) {
        let quadrature = op.inner(&h.sample(quad_grid)?, &g.sample(quad_grid)?)?;
        let (mc, se) = (st.mean(), st.std_error());
        let diff = mc - quadrature;
        let (z_score, pass) = if se > 0.0 { (diff / se, diff.abs() <= 3.0 * se) } else { (0.0, diff.abs() <= 1e-10) };
        checks.push(CovarianceCheck { h: h.label(), g: g.label(), monte_carlo: mc, std_error: se, quadrature, z_score, pass });
    }
    let pass = checks.iter().all(|c| c.pass);
    Ok(CovarianceReport { alpha, horizon, budget, n_steps, quadrature_intervals, checks, pass })
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ConcentrationRow {
    pub r: f64,
    pub bound: f64,
    pub empirical: f64,
    pub count: u64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ConcentrationReport {
    pub t: f64,
    pub alpha_hat: f64,
    pub xi: f64,
    pub budget: u64,
    pub mean: f64,
    pub rows: Vec<ConcentrationRow>,
    pub pass: bool,
}

impl ConcentrationReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("R,bound,empirical,ci_low,ci_high\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{},{}\n", r.r, r.bound, r.empirical, r.ci_low, r.ci_high));
        }
        s
    }
}

/// Empirical upper tail of the first coordinate at time t against
/// exp(−ξ_α(t) R²) with α the certified convexity constant.
#[allow(clippy::too_many_arguments)]
pub fn verify_concentration(
    problem: &BridgeProblem,
    t: f64,
    budget: u64,
    r_grid: &[f64],
    seed: u64,
    engine: &Engine,
    n_steps: usize,
    mode: &DriftMode,
    certificate: &ConvexityCertificate,
) -> Result<ConcentrationReport> {
    let alpha = certificate.alpha_hat;
    if !(alpha > 0.0) {
        return Err(Error::Precondition(format!(
            "convexity scan gives alpha_hat = 0 (min eigenvalue {} at {:?})",
            certificate.min_eigenvalue, certificate.min_eigenvalue_location
        )));
    }
    let h = problem.horizon;
    if !(t.abs() < h) {
        return arg("concentration needs |t| < T");
    }
    if r_grid.iter().any(|r| !(*r >= 0.0)) {
        return arg("R values must be non-negative");
    }
    let sim = PathSimulator::new(problem, n_steps, mode)?;
    let k = (((t + h) / (2.0 * h)) * n_steps as f64).round() as usize;
    let t_node = crate::bridge::grid_time(h, n_steps, k);
    let samples = engine.collect(budget, seed, |s| Ok(sim.marginal(s, k)?[0]))?;
    let mean = SampleStats::from_slice(&samples).mean();
    let centred: Vec<f64> = samples.iter().map(|x| x - mean).collect();
    let xi = xi_alpha(t_node, alpha, h);
    let mut rows = Vec::with_capacity(r_grid.len());
    for &r in r_grid {
        let tail = empirical_tail(&centred, r)?;
        let bound = (-xi * r * r).exp();
        rows.push(ConcentrationRow {
            r,
            bound,
            empirical: tail.probability,
            count: tail.count,
            ci_low: tail.ci_low,
            ci_high: tail.ci_high,
            pass: tail.ci_high <= bound,
        });
    }
    let pass = rows.iter().all(|r| r.pass);
    Ok(ConcentrationReport { t: t_node, alpha_hat: alpha, xi, budget, mean, rows, pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::convexity_certificate;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn phi_indicator(alpha: f64, big_t: f64, t: f64, s: f64) -> f64 {
        let base = f64::sinh(alpha * (big_t - t)) / f64::sinh(2.0 * alpha * big_t) * f64::cosh(alpha * (big_t + s));
        if s > t {
            base - f64::cosh(alpha * (s - t))
        } else if s == t {
            base - 0.5
        } else {
            base
        }
    }

    fn max_phi_error(n: usize) -> f64 {
        let grid = TimeGrid::new(1.0, n).unwrap();
        let h = GridFunction::indicator(grid, -1.0, 0.0, 1, 0).unwrap();
        let phi = solve_phi(&h, 1.0, 1.0).unwrap();
        (0..=n).map(|k| (phi.values[k] - phi_indicator(1.0, 1.0, 0.0, grid.time(k))).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn indicator_phi_second_order() {
        let (e1, e2) = (max_phi_error(64), max_phi_error(128));
        let ratio = e1 / e2;
        assert!((ratio - 4.0).abs() < 0.5, "ratio {ratio} ({e1}, {e2})");
    }

    #[test]
    fn indicator_variance() {
        let grid = TimeGrid::new(1.0, 512).unwrap();
        let h = GridFunction::indicator(grid, -1.0, 0.0, 1, 0).unwrap();
        let v = inner_product_alpha(&h, &h, 1.0, 1.0).unwrap();
        assert_abs_diff_eq!(v, f64::sinh(1.0).powi(2) / f64::sinh(2.0), epsilon = 2e-5);
        assert_abs_diff_eq!(v, ou_bridge_variance(1.0, 1.0, 0.0), epsilon = 2e-5);
        let grid = TimeGrid::new(1.0, 256).unwrap();
        for &t in &[-0.5, 0.25, 0.75] {
            let h = GridFunction::indicator(grid, -1.0, t, 1, 0).unwrap();
            let v = inner_product_alpha(&h, &h, 0.7, 1.0).unwrap();
            assert_abs_diff_eq!(v, ou_bridge_variance(0.7, 1.0, t), epsilon = 1e-4);
        }
    }

    #[test]
    fn alpha_zero_is_centred_l2() {
        let grid = TimeGrid::new(1.0, 256).unwrap();
        let h = GridFunction::indicator(grid, -1.0, 0.0, 1, 0).unwrap();
        assert_abs_diff_eq!(inner_product_alpha(&h, &h, 0.0, 1.0).unwrap(), 0.5, epsilon = 1e-12);
        let g = GridFunction::scalar(grid, |t| t * t).unwrap();
        let phi = solve_phi(&g, 0.0, 1.0).unwrap();
        let mean = g.integral(0) / 2.0;
        for k in 0..=grid.n {
            assert_abs_diff_eq!(phi.values[k], g.values[k] - mean, epsilon = 1e-12);
        }
    }

    #[test]
    fn constant_maps_to_zero_and_phi_is_centred() {
        let grid = TimeGrid::new(1.5, 128).unwrap();
        let c = GridFunction::constant(grid, &[2.0, -1.0]).unwrap();
        let phi = solve_phi(&c, 0.8, 1.5).unwrap();
        assert!(phi.values.iter().all(|v| v.abs() < 1e-12));
        let h = GridFunction::scalar(grid, |t| (3.0 * t).exp()).unwrap();
        let phi = solve_phi(&h, 0.8, 1.5).unwrap();
        assert!(phi.integral(0).abs() < 1e-10);
    }

    #[test]
    fn grid_mismatch_rejected() {
        let a = GridFunction::constant(TimeGrid::new(1.0, 32).unwrap(), &[1.0]).unwrap();
        let b = GridFunction::constant(TimeGrid::new(1.0, 64).unwrap(), &[1.0]).unwrap();
        assert!(matches!(inner_product_alpha(&a, &b, 1.0, 1.0), Err(Error::Argument(_))));
        assert!(matches!(inner_product_alpha(&a, &a, 1.0, 2.0), Err(Error::Argument(_))));
        assert!(AlphaInnerProduct::new(1.0, TimeGrid::new(1.0, 8).unwrap()).is_err());
    }

    #[test]
    fn xi_values() {
        assert_abs_diff_eq!(xi_alpha(0.0, 1.0, 1.0), 1.0 / f64::tanh(1.0), epsilon = 1e-12);
        assert_abs_diff_eq!(xi_alpha(0.0, 1.0, 1.0), 1.313_035_285_499_331, epsilon = 1e-12);
        assert_abs_diff_eq!(xi_alpha(0.0, 0.0, 1.0), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(xi_alpha(0.3, 0.0, 1.0), 1.0 / (1.3 * 0.7), epsilon = 1e-12);
        for &(a, h) in &[(0.3, 2.0), (2.0, 0.5), (1.0, 1.0)] {
            let direct = |t: f64| a * f64::sinh(2.0 * a * h) / (2.0 * f64::sinh(a * (h + t)) * f64::sinh(a * (h - t)));
            assert_abs_diff_eq!(xi_alpha(0.4 * h, a, h), direct(0.4 * h), epsilon = 1e-10);
            assert_abs_diff_eq!(xi_alpha(0.0, a, h), a / f64::tanh(a * h), epsilon = 1e-12);
            let mut prev = xi_alpha(0.0, a, h);
            for j in 1..100 {
                let t = h * j as f64 / 100.0;
                let x = xi_alpha(t, a, h);
                assert!(x > prev);
                assert_abs_diff_eq!(x, xi_alpha(-t, a, h), epsilon = 1e-9 * x);
                prev = x;
            }
        }
        assert_eq!(xi_alpha(1.0, 1.0, 1.0), f64::INFINITY);
    }

    fn random_fn(grid: TimeGrid, c: &[f64]) -> GridFunction {
        let mut f = GridFunction::scalar(grid, |t| c[0] + c[1] * t + c[2] * (3.0 * t).sin() + c[3] * (t * t)).unwrap();
        let jump_at = grid.n / 3;
        f.values[jump_at] += c[4] / 2.0;
        f.jumps[jump_at] = c[4];
        for k in jump_at + 1..=grid.n {
            f.values[k] += c[4];
        }
        f
    }

    proptest! {
        #[test]
        fn symmetric_and_positive(c1 in proptest::collection::vec(-2.0..2.0f64, 5), c2 in proptest::collection::vec(-2.0..2.0f64, 5), alpha in 0.0..3.0f64) {
            let grid = TimeGrid::new(1.0, 64).unwrap();
            let (h, g) = (random_fn(grid, &c1), random_fn(grid, &c2));
            let hg = inner_product_alpha(&h, &g, alpha, 1.0).unwrap();
            let gh = inner_product_alpha(&g, &h, alpha, 1.0).unwrap();
            prop_assert!((hg - gh).abs() < 1e-10 * (1.0 + hg.abs()));
            prop_assert!(inner_product_alpha(&h, &h, alpha, 1.0).unwrap() >= -1e-12);
        }
    }

    #[test]
    fn malliavin_rules() {
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let path = DiscretizedPath {
            horizon: 1.0,
            n_steps: 10,
            dim: 1,
            positions: (0..=10).map(|k| ((k * k) as f64 * 0.1).sin()).collect(),
        };
        let h1 = GridFunction::indicator(grid, -1.0, 0.0, 1, 0).unwrap();
        let h2 = GridFunction::scalar(grid, |t| t).unwrap();
        let i1: f64 = (0..5).map(|k| path.positions[k + 1] - path.positions[k]).sum();
        let i2: f64 = (0..10).map(|k| grid.time(k) * (path.positions[k + 1] - path.positions[k])).sum();
        let ints = stochastic_integrals(&[h1.clone(), h2.clone()], &path).unwrap();
        assert_abs_diff_eq!(ints[0], i1, epsilon = 1e-14);
        assert_abs_diff_eq!(ints[1], i2, epsilon = 1e-14);

        let id = SimpleFunctional::new(Arc::new(Identity), vec![h1.clone()]).unwrap();
        assert_eq!(malliavin_derivative(&id, &path).unwrap(), h1);
        let sq = SimpleFunctional::new(Arc::new(Square), vec![h2.clone()]).unwrap();
        let d = malliavin_derivative(&sq, &path).unwrap();
        for k in 0..=10 {
            assert_abs_diff_eq!(d.values[k], 2.0 * i2 * h2.values[k], epsilon = 1e-14);
        }
        let pr = SimpleFunctional::new(Arc::new(Product), vec![h1.clone(), h2.clone()]).unwrap();
        let d = malliavin_derivative(&pr, &path).unwrap();
        for k in 0..=10 {
            assert_abs_diff_eq!(d.values[k], i2 * h1.values[k] + i1 * h2.values[k], epsilon = 1e-14);
            assert_abs_diff_eq!(d.jumps[k], i2 * h1.jumps[k], epsilon = 1e-14);
        }
        assert!(SimpleFunctional::new(Arc::new(Product), vec![h1]).is_err());
    }

    #[test]
    fn covariance_identity_small() {
        let engine = Engine::new(1).unwrap();
        let pairs = covariance_battery(1.0);
        let rep = verify_covariance_identity(1.0, 1.0, &pairs, 4000, 3, &engine, 200, 256).unwrap();
        assert!(rep.pass, "{rep:#?}");
        assert_abs_diff_eq!(rep.checks[2].monte_carlo, 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(rep.checks[2].quadrature, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(rep.checks[0].quadrature, 0.380_797_077_977_882_4, epsilon = 1e-4);
    }

    #[test]
    fn concentration_small() {
        let model = PotentialModel::quadratic(1.0, 1);
        let cert = convexity_certificate(&model, &[(-2.0, 2.0)], 9).unwrap();
        let p = BridgeProblem::new(vec![0.0], vec![0.0], 1.0, model).unwrap();
        let engine = Engine::new(1).unwrap();
        let rep = verify_concentration(&p, 0.0, 5000, &[0.0, 0.5, 1.0], 1, &engine, 200, &DriftMode::Equivalent, &cert).unwrap();
        assert!(rep.pass, "{rep:#?}");
        assert_eq!(rep.rows[0].bound, 1.0);
        assert_abs_diff_eq!(rep.rows[2].bound, (-1.313_035_285_499_331f64).exp(), epsilon = 1e-12);
        assert!(rep.to_csv().starts_with("R,bound,empirical,ci_low,ci_high\n"));

        let flat = PotentialModel::zero(1);
        let cert = convexity_certificate(&flat, &[(-2.0, 2.0)], 9).unwrap();
        let p = BridgeProblem::new(vec![0.0], vec![0.0], 1.0, flat).unwrap();
        let r = verify_concentration(&p, 0.0, 10, &[1.0], 1, &engine, 20, &DriftMode::Brownian, &cert);
        assert!(matches!(r, Err(Error::Precondition(_))));
    }
}
