//! Bridges of the Langevin dynamics dX = −∇U dt + dB pinned at x (time −T)
//! and y (time T).
//!
//! Drifts come in three flavours: the Brownian bridge drift, the exact
//! Ornstein–Uhlenbeck bridge drift, and the generic representation
//! `(y − z)/(T − t) + ∇ log ψ(t, z)` with ψ a Feynman–Kac expectation of
//! `exp(−∫ 𝒰)` over base bridges. Paths are integrated by Euler–Maruyama with
//! the last step clamped to y.

use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{arg, Error, Result};
use crate::hyper::{coth, csch, sinh_ratio};
use crate::mc::{Engine, RngStream, SampleStats};
use crate::potentials::PotentialModel;

/// The bridge P^{x,y} on [−T, T] of a potential.
#[derive(Debug, Clone)]
pub struct BridgeProblem {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub horizon: f64,
    pub model: PotentialModel,
}

impl BridgeProblem {
    pub fn new(x: Vec<f64>, y: Vec<f64>, horizon: f64, model: PotentialModel) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return arg(format!("horizon must be positive and finite, got {horizon}"));
        }
        if x.len() != model.dim() || y.len() != model.dim() {
            return arg(format!("endpoints must have dimension {}", model.dim()));
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return arg("endpoints must be finite");
        }
        Ok(Self { x, y, horizon, model })
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    /// Same potential with the endpoints swapped.
    pub fn swapped(&self) -> Self {
        Self { x: self.y.clone(), y: self.x.clone(), horizon: self.horizon, model: self.model.clone() }
    }
}

/// Uniform-grid path on [−T, T]; positions are stored node-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizedPath {
    pub horizon: f64,
    pub n_steps: usize,
    pub dim: usize,
    pub positions: Vec<f64>,
}

impl DiscretizedPath {
    pub fn dt(&self) -> f64 {
        2.0 * self.horizon / self.n_steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        grid_time(self.horizon, self.n_steps, k)
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|k| self.time(k)).collect()
    }

    /// Number of stored nodes (`n_steps + 1` for a complete path).
    pub fn len(&self) -> usize {
        self.positions.len() / self.dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn position(&self, k: usize) -> &[f64] {
        &self.positions[k * self.dim..(k + 1) * self.dim]
    }

    pub fn component(&self, i: usize) -> Vec<f64> {
        self.positions.iter().skip(i).step_by(self.dim).copied().collect()
    }

    /// ω*_t = ω_{−t}.
    pub fn reversed(&self) -> Self {
        let mut positions = Vec::with_capacity(self.positions.len());
        for k in (0..self.len()).rev() {
            positions.extend_from_slice(self.position(k));
        }
        Self { positions, ..*self }
    }

    /// CSV with columns `t, x_1..x_d`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t");
        for i in 1..=self.dim {
            s.push_str(&format!(",x_{i}"));
        }
        s.push('\n');
        for k in 0..self.len() {
            s.push_str(&format!("{}", self.time(k)));
            for v in self.position(k) {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
        s
    }
}

pub(crate) fn grid_time(horizon: f64, n: usize, k: usize) -> f64 {
    if k == n {
        horizon
    } else {
        -horizon + 2.0 * horizon * k as f64 / n as f64
    }
}

pub fn reverse_path(path: &DiscretizedPath) -> DiscretizedPath {
    path.reversed()
}

/// Base process for the ψ representation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum BaseKind {
    /// Brownian bridges; integrand 𝒰.
    Brownian,
    /// Ornstein–Uhlenbeck bridges with this rate; integrand 𝒰 − ½α²|z|².
    Ou(f64),
}

impl fmt::Display for BaseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BaseKind::Brownian => write!(f, "brownian"),
            BaseKind::Ou(a) => write!(f, "ou({a})"),
        }
    }
}

/// Inner Monte Carlo settings of the Feynman–Kac drift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FkSettings {
    pub inner_budget: usize,
    /// Target step of the inner quadrature grid.
    pub dt: f64,
    pub base: BaseKind,
}

impl Default for FkSettings {
    fn default() -> Self {
        Self { inner_budget: 10_000, dt: 1e-3, base: BaseKind::Brownian }
    }
}

/// Monte Carlo estimate of ψ(t, z).
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct PsiEstimate {
    pub value: f64,
    pub log_value: f64,
    pub std_error: f64,
    pub inner_budget: usize,
    pub base: String,
    /// Paths discarded because the integrand was not finite.
    pub rejected: usize,
}

impl PsiEstimate {
    pub fn is_valid(&self) -> bool {
        self.rejected == 0
    }
}

/// (y − z)/(T − t).
pub fn brownian_bridge_drift(z: &[f64], t: f64, y: &[f64], horizon: f64) -> Result<Vec<f64>> {
    if !(t < horizon) {
        return arg(format!("drift needs t < T (t={t}, T={horizon})"));
    }
    if z.len() != y.len() {
        return arg("dimension mismatch");
    }
    let tau = horizon - t;
    Ok(z.iter().zip(y).map(|(z, y)| (y - z) / tau).collect())
}

/// −α[coth(α(T−t))·z − y/sinh(α(T−t))].
pub fn ou_bridge_drift(alpha: f64, z: &[f64], t: f64, y: &[f64], horizon: f64) -> Result<Vec<f64>> {
    if !(t < horizon) {
        return arg(format!("drift needs t < T (t={t}, T={horizon})"));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return arg(format!("alpha must be positive, got {alpha}"));
    }
    if z.len() != y.len() {
        return arg("dimension mismatch");
    }
    let u = alpha * (horizon - t);
    let (c, s) = (coth(u), csch(u));
    Ok(z.iter().zip(y).map(|(z, y)| -alpha * (c * z - y * s)).collect())
}

/// Var(ω_t) for the OU bridge pinned at 0 at both ends:
/// sinh(α(T−t))·sinh(α(T+t))/(α·sinh 2αT); Brownian limit (T²−t²)/(2T) at α = 0.
pub fn ou_bridge_variance(alpha: f64, horizon: f64, t: f64) -> f64 {
    if t.abs() >= horizon {
        return 0.0;
    }
    let a = alpha.abs() * (horizon - t);
    let b = alpha.abs() * (horizon + t);
    if alpha.abs() * horizon < 1e-8 {
        return (horizon - t) * (horizon + t) / (2.0 * horizon);
    }
    let em = |u: f64| -(-2.0 * u).exp_m1();
    em(a) * em(b) / (2.0 * alpha.abs() * em(a + b))
}

fn inner_steps(span: f64, dt: f64) -> usize {
    ((span / dt) - 1e-9).ceil().max(1.0) as usize
}

/// Base bridges from (t, z) to (T, y) written as
/// `wz[k]·z + wy[k]·y + noise_k` with pinned, centred noise.
struct BaseBridge {
    base: BaseKind,
    m: usize,
    d: usize,
    delta: f64,
    times: Vec<f64>,
    wz: Vec<f64>,
    wy: Vec<f64>,
    /// OU recursion coefficients and end-correction factors.
    decay: f64,
    step_sd: f64,
    pin: Vec<f64>,
}

impl BaseBridge {
    fn new(base: BaseKind, t: f64, horizon: f64, dt: f64, d: usize) -> Result<Self> {
        let span = horizon - t;
        let m = inner_steps(span, dt);
        let delta = span / m as f64;
        let times: Vec<f64> = (0..=m).map(|k| if k == m { horizon } else { t + k as f64 * delta }).collect();
        let mut bb = Self { base, m, d, delta, times, wz: vec![], wy: vec![], decay: 0.0, step_sd: 0.0, pin: vec![] };
        match base {
            BaseKind::Brownian => {
                bb.wz = (0..=m).map(|k| 1.0 - k as f64 / m as f64).collect();
                bb.wy = (0..=m).map(|k| k as f64 / m as f64).collect();
            }
            BaseKind::Ou(a) => {
                if !(a > 0.0 && a.is_finite()) {
                    return arg(format!("ou base needs a positive rate, got {a}"));
                }
                let full = a * span;
                bb.wz = (0..=m).map(|k| sinh_ratio(a * (horizon - bb.times[k]), full)).collect();
                bb.wy = (0..=m).map(|k| sinh_ratio(a * (bb.times[k] - t), full)).collect();
                bb.decay = (-a * delta).exp();
                bb.step_sd = (-(-2.0 * a * delta).exp_m1() / (2.0 * a)).sqrt();
                let var = |k: usize| -(-2.0 * a * k as f64 * delta).exp_m1() / (2.0 * a);
                let vm = var(m);
                bb.pin = (0..=m).map(|k| (-a * (m - k) as f64 * delta).exp() * var(k) / vm).collect();
            }
        }
        Ok(bb)
    }

    fn noise(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        let (m, d) = (self.m, self.d);
        for i in 0..d {
            out[i] = 0.0;
        }
        match self.base {
            BaseKind::Brownian => {
                let sd = self.delta.sqrt();
                for k in 1..=m {
                    for i in 0..d {
                        let xi: f64 = rng.sample(StandardNormal);
                        out[k * d + i] = out[(k - 1) * d + i] + sd * xi;
                    }
                }
                for k in 1..=m {
                    let frac = k as f64 / m as f64;
                    for i in 0..d {
                        out[k * d + i] -= frac * out[m * d + i];
                    }
                }
            }
            BaseKind::Ou(_) => {
                for k in 1..=m {
                    for i in 0..d {
                        let xi: f64 = rng.sample(StandardNormal);
                        out[k * d + i] = self.decay * out[(k - 1) * d + i] + self.step_sd * xi;
                    }
                }
                for k in 1..=m {
                    for i in 0..d {
                        out[k * d + i] -= self.pin[k] * out[m * d + i];
                    }
                }
            }
        }
        for i in 0..d {
            out[m * d + i] = 0.0;
        }
    }

    /// ∫ₜᵀ 𝒰̄(s, ω_s) ds by the trapezoid rule; NaN when not finite.
    fn integral(&self, model: &PotentialModel, z: &[f64], y: &[f64], noise: &[f64], point: &mut [f64]) -> f64 {
        let (m, d) = (self.m, self.d);
        let mut acc = 0.0;
        for k in 0..=m {
            let mut sq = 0.0;
            for i in 0..d {
                let v = self.wz[k] * z[i] + self.wy[k] * y[i] + noise[k * d + i];
                point[i] = v;
                sq += v * v;
            }
            let mut f = match model.reciprocal_potential(self.times[k], point) {
                Ok(v) => v,
                Err(_) => return f64::NAN,
            };
            if let BaseKind::Ou(a) = self.base {
                f -= 0.5 * a * a * sq;
            }
            acc += if k == 0 || k == m { 0.5 * f } else { f };
        }
        let r = acc * self.delta;
        if r.is_finite() {
            r
        } else {
            f64::NAN
        }
    }
}

fn check_point(problem: &BridgeProblem, t: f64, z: &[f64], settings: &FkSettings) -> Result<()> {
    if !(t < problem.horizon) || t < -problem.horizon {
        return arg(format!("need −T ≤ t < T, got t={t}"));
    }
    if z.len() != problem.dim() {
        return arg("state dimension mismatch");
    }
    if settings.inner_budget == 0 || !(settings.dt > 0.0) {
        return arg("inner budget and dt must be positive");
    }
    Ok(())
}

/// ψ(t, z) = E[exp(−∫ₜᵀ 𝒰̄(s, ω_s) ds)] over base bridges from (t, z) to (T, y).
pub fn estimate_psi(problem: &BridgeProblem, t: f64, z: &[f64], settings: &FkSettings, stream: RngStream) -> Result<PsiEstimate> {
    check_point(problem, t, z, settings)?;
    let d = problem.dim();
    let bb = BaseBridge::new(settings.base, t, problem.horizon, settings.dt, d)?;
    let mut rng = stream.rng();
    let mut noise = vec![0.0; (bb.m + 1) * d];
    let mut point = vec![0.0; d];
    let mut logs = Vec::with_capacity(settings.inner_budget);
    let mut rejected = 0;
    for _ in 0..settings.inner_budget {
        bb.noise(&mut rng, &mut noise);
        let i = bb.integral(&problem.model, z, &problem.y, &noise, &mut point);
        if i.is_nan() {
            rejected += 1;
        } else {
            logs.push(-i);
        }
    }
    if logs.is_empty() {
        return Err(Error::Rejected { budget: settings.inner_budget });
    }
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let stats = SampleStats::from_slice(&logs.iter().map(|l| (l - top).exp()).collect::<Vec<_>>());
    let scale = top.exp();
    Ok(PsiEstimate {
        value: stats.mean() * scale,
        log_value: stats.mean().ln() + top,
        std_error: stats.std_error() * scale,
        inner_budget: settings.inner_budget,
        base: settings.base.to_string(),
        rejected,
    })
}

/// Feynman–Kac drift with per-coordinate standard errors.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct DriftEstimate {
    pub drift: Vec<f64>,
    pub std_error: Vec<f64>,
    pub rejected: usize,
}

/// Drift of the base bridge at (t, z).
fn base_drift(base: BaseKind, z: &[f64], t: f64, y: &[f64], horizon: f64) -> Result<Vec<f64>> {
    match base {
        BaseKind::Brownian => brownian_bridge_drift(z, t, y, horizon),
        BaseKind::Ou(a) => ou_bridge_drift(a, z, t, y, horizon),
    }
}

/// Base bridge drift + ∇ log ψ(t, z); the gradient uses central differences
/// with identical base noise for every perturbed start.
pub fn bridge_drift_estimate(problem: &BridgeProblem, t: f64, z: &[f64], settings: &FkSettings, stream: RngStream) -> Result<DriftEstimate> {
    check_point(problem, t, z, settings)?;
    let d = problem.dim();
    let bb = BaseBridge::new(settings.base, t, problem.horizon, settings.dt, d)?;
    let mut rng = stream.rng();
    let mut noise = vec![0.0; (bb.m + 1) * d];
    let mut point = vec![0.0; d];
    let mut zp = z.to_vec();
    let steps: Vec<f64> = z.iter().map(|v| problem.model.h_fd() * (1.0 + v.abs())).collect();
    // per accepted sample: log w0 followed by d pairs (log w+, log w−)
    let width = 1 + 2 * d;
    let mut logs = Vec::with_capacity(settings.inner_budget * width);
    let mut rejected = 0;
    let mut row = vec![0.0; width];
    for _ in 0..settings.inner_budget {
        bb.noise(&mut rng, &mut noise);
        row[0] = -bb.integral(&problem.model, z, &problem.y, &noise, &mut point);
        for i in 0..d {
            zp[i] = z[i] + steps[i];
            row[1 + 2 * i] = -bb.integral(&problem.model, &zp, &problem.y, &noise, &mut point);
            zp[i] = z[i] - steps[i];
            row[2 + 2 * i] = -bb.integral(&problem.model, &zp, &problem.y, &noise, &mut point);
            zp[i] = z[i];
        }
        if row.iter().any(|v| v.is_nan()) {
            rejected += 1;
        } else {
            logs.extend_from_slice(&row);
        }
    }
    let n = logs.len() / width;
    if n == 0 {
        return Err(Error::Rejected { budget: settings.inner_budget });
    }
    let top = logs.chunks(width).map(|r| r[0]).fold(f64::NEG_INFINITY, f64::max);
    let w0: Vec<f64> = logs.chunks(width).map(|r| (r[0] - top).exp()).collect();
    let mean_w = w0.iter().sum::<f64>() / n as f64;
    let mut drift = base_drift(settings.base, z, t, &problem.y, problem.horizon)?;
    let mut std_error = vec![0.0; d];
    for i in 0..d {
        let diff: Vec<f64> = logs
            .chunks(width)
            .map(|r| ((r[1 + 2 * i] - top).exp() - (r[2 + 2 * i] - top).exp()) / (2.0 * steps[i]))
            .collect();
        let mean_d = diff.iter().sum::<f64>() / n as f64;
        let ratio = mean_d / mean_w;
        let influence: Vec<f64> = diff.iter().zip(&w0).map(|(dv, w)| (dv - ratio * w) / mean_w).collect();
        drift[i] += ratio;
        std_error[i] = SampleStats::from_slice(&influence).std_error();
    }
    Ok(DriftEstimate { drift, std_error, rejected })
}

/// Which drift the Euler integrator uses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum DriftMode {
    /// Brownian bridge drift; the potential is ignored.
    Brownian,
    /// Exact OU bridge drift with this rate, centred at 0.
    ExactOu(f64),
    /// Exact OU bridge drift of the model's declared OU equivalent.
    Equivalent,
    FeynmanKac(FkSettings),
}

enum Plan {
    /// drift_k(z)ᵢ = a[k]·zᵢ + b[k·d + i].
    Affine { a: Vec<f64>, b: Vec<f64> },
    Fk(FkSettings),
}

/// Euler–Maruyama integrator for one bridge problem and grid.
pub struct PathSimulator<'a> {
    problem: &'a BridgeProblem,
    n: usize,
    dt: f64,
    plan: Plan,
}

impl<'a> PathSimulator<'a> {
    pub fn new(problem: &'a BridgeProblem, n_steps: usize, mode: &DriftMode) -> Result<Self> {
        if n_steps < 2 {
            return arg("n_steps must be at least 2");
        }
        let d = problem.dim();
        let h = problem.horizon;
        let dt = 2.0 * h / n_steps as f64;
        let tau = |k: usize| (h - grid_time(h, n_steps, k)).max(dt);
        let ou_plan = |alpha: f64, center: &[f64]| -> Result<Plan> {
            if !(alpha > 0.0 && alpha.is_finite()) {
                return arg(format!("OU rate must be positive, got {alpha}"));
            }
            let mut a = Vec::with_capacity(n_steps);
            let mut b = Vec::with_capacity(n_steps * d);
            for k in 0..n_steps {
                let u = alpha * tau(k);
                let (c, s) = (coth(u), csch(u));
                a.push(-alpha * c);
                for i in 0..d {
                    b.push(alpha * c * center[i] + alpha * (problem.y[i] - center[i]) * s);
                }
            }
            Ok(Plan::Affine { a, b })
        };
        let plan = match mode {
            DriftMode::Brownian => {
                let mut a = Vec::with_capacity(n_steps);
                let mut b = Vec::with_capacity(n_steps * d);
                for k in 0..n_steps {
                    let t = tau(k);
                    a.push(-1.0 / t);
                    b.extend(problem.y.iter().map(|y| y / t));
                }
                Plan::Affine { a, b }
            }
            DriftMode::ExactOu(alpha) => ou_plan(*alpha, &vec![0.0; d])?,
            DriftMode::Equivalent => {
                let ou = problem
                    .model
                    .ou_equivalent()
                    .ok_or_else(|| Error::Precondition("model declares no OU-equivalent bridge".into()))?;
                ou_plan(ou.alpha, &ou.center)?
            }
            DriftMode::FeynmanKac(s) => {
                if s.inner_budget == 0 || !(s.dt > 0.0) {
                    return arg("Feynman-Kac settings need a positive budget and dt");
                }
                Plan::Fk(*s)
            }
        };
        Ok(Self { problem, n: n_steps, dt, plan })
    }

    pub fn n_steps(&self) -> usize {
        self.n
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Integrates from node 0 to node `stop`, calling `visit(k, state)` at
    /// every node. `next_increment` fills standard normals for one step.
    fn integrate(
        &self,
        mut next_increment: impl FnMut(usize, &mut [f64]),
        fk: RngStream,
        stop: usize,
        record: bool,
        mut visit: impl FnMut(usize, &[f64]),
    ) -> Result<Option<DiscretizedPath>> {
        let p = self.problem;
        let d = p.dim();
        let stop = stop.min(self.n);
        let sq = self.dt.sqrt();
        let mut state = p.x.clone();
        let mut xi = vec![0.0; d];
        let mut positions = if record { Vec::with_capacity((stop + 1) * d) } else { Vec::new() };
        visit(0, &state);
        if record {
            positions.extend_from_slice(&state);
        }
        for k in 0..stop {
            next_increment(k, &mut xi);
            if k + 1 == self.n {
                state.copy_from_slice(&p.y);
            } else {
                match &self.plan {
                    Plan::Affine { a, b } => {
                        for i in 0..d {
                            state[i] += (a[k] * state[i] + b[k * d + i]) * self.dt + sq * xi[i];
                        }
                    }
                    Plan::Fk(s) => {
                        let t = grid_time(p.horizon, self.n, k);
                        let est = match bridge_drift_estimate(p, t, &state, s, fk.child(k as u64)) {
                            Ok(e) => e,
                            Err(e) => {
                                return Err(Error::DriftExhausted {
                                    step: k,
                                    reason: e.to_string(),
                                    partial: Box::new(DiscretizedPath { horizon: p.horizon, n_steps: self.n, dim: d, positions }),
                                })
                            }
                        };
                        for i in 0..d {
                            state[i] += est.drift[i] * self.dt + sq * xi[i];
                        }
                    }
                }
            }
            visit(k + 1, &state);
            if record {
                positions.extend_from_slice(&state);
            }
        }
        Ok(record.then(|| DiscretizedPath { horizon: p.horizon, n_steps: self.n, dim: d, positions }))
    }

    fn normals(rng: &mut ChaCha8Rng) -> impl FnMut(usize, &mut [f64]) + '_ {
        move |_, xi: &mut [f64]| {
            for v in xi.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
        }
    }

    pub fn simulate(&self, stream: RngStream) -> Result<DiscretizedPath> {
        let mut rng = stream.rng();
        let path = self.integrate(Self::normals(&mut rng), stream, self.n, true, |_, _| {})?;
        Ok(path.expect("recorded"))
    }

    /// State at node `k`; identical to `simulate(stream).position(k)`.
    pub fn marginal(&self, stream: RngStream, k: usize) -> Result<Vec<f64>> {
        let mut rng = stream.rng();
        let mut out = vec![];
        self.integrate(Self::normals(&mut rng), stream, k, false, |j, s| {
            if j == k {
                out = s.to_vec();
            }
        })?;
        Ok(out)
    }

    /// Visits every node without storing the path.
    pub fn walk(&self, stream: RngStream, stop: usize, visit: impl FnMut(usize, &[f64])) -> Result<()> {
        let mut rng = stream.rng();
        self.integrate(Self::normals(&mut rng), stream, stop, false, visit)?;
        Ok(())
    }

    /// Drives the path with the given standard normals (`n_steps × d`).
    pub fn simulate_with_normals(&self, normals: &[f64], fk: RngStream) -> Result<DiscretizedPath> {
        let d = self.problem.dim();
        if normals.len() < self.n * d {
            return arg("not enough increments for the grid");
        }
        let path = self.integrate(|k, xi| xi.copy_from_slice(&normals[k * d..(k + 1) * d]), fk, self.n, true, |_, _| {})?;
        Ok(path.expect("recorded"))
    }
}

/// Euler–Maruyama bridge path with the final point pinned to y.
pub fn simulate_bridge(problem: &BridgeProblem, n_steps: usize, stream: RngStream, mode: &DriftMode) -> Result<DiscretizedPath> {
    PathSimulator::new(problem, n_steps, mode)?.simulate(stream)
}

/// Exact Brownian bridge from x to y on the uniform grid: a random walk
/// pinned by subtracting its linear interpolation.
pub fn sample_brownian_bridge(x: &[f64], y: &[f64], horizon: f64, n_steps: usize, rng: &mut ChaCha8Rng) -> DiscretizedPath {
    let d = x.len();
    let sq = (2.0 * horizon / n_steps as f64).sqrt();
    let mut positions = vec![0.0; (n_steps + 1) * d];
    for k in 1..=n_steps {
        for i in 0..d {
            let xi: f64 = rng.sample(StandardNormal);
            positions[k * d + i] = positions[(k - 1) * d + i] + sq * xi;
        }
    }
    let end: Vec<f64> = positions[n_steps * d..].to_vec();
    for k in 0..=n_steps {
        let r = k as f64 / n_steps as f64;
        for i in 0..d {
            positions[k * d + i] += (1.0 - r) * x[i] + r * (y[i] - end[i]);
        }
    }
    positions[n_steps * d..].copy_from_slice(y);
    DiscretizedPath { horizon, n_steps, dim: d, positions }
}

/// Law of the endpoint pair (ω_{−T}, ω_T).
pub trait EndpointLaw: Send + Sync {
    fn dim(&self) -> usize;
    fn sample(&self, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>);
}

/// δ_x ⊗ δ_y.
#[derive(Debug, Clone)]
pub struct DiracPair {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl EndpointLaw for DiracPair {
    fn dim(&self) -> usize {
        self.x.len()
    }
    fn sample(&self, _rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
        (self.x.clone(), self.y.clone())
    }
}

/// Finitely supported law on endpoint pairs.
#[derive(Debug, Clone)]
pub struct DiscretePairLaw {
    pub atoms: Vec<(Vec<f64>, Vec<f64>)>,
    pub weights: Vec<f64>,
}

impl DiscretePairLaw {
    pub fn new(atoms: Vec<(Vec<f64>, Vec<f64>)>, weights: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() || atoms.len() != weights.len() {
            return arg("need one weight per atom");
        }
        if weights.iter().any(|w| !(*w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return arg("weights must be nonnegative and sum to 1");
        }
        let d = atoms[0].0.len();
        if atoms.iter().any(|(x, y)| x.len() != d || y.len() != d || x.iter().chain(y).any(|v| !v.is_finite())) {
            return arg("atoms must be finite with a common dimension");
        }
        Ok(Self { atoms, weights })
    }

    pub fn dirac(x: Vec<f64>, y: Vec<f64>) -> Self {
        Self { atoms: vec![(x, y)], weights: vec![1.0] }
    }
}

impl EndpointLaw for DiscretePairLaw {
    fn dim(&self) -> usize {
        self.atoms[0].0.len()
    }
    fn sample(&self, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (a, w) in self.atoms.iter().zip(&self.weights) {
            acc += w;
            if u < acc {
                return a.clone();
            }
        }
        self.atoms.last().cloned().expect("non-empty")
    }
}

/// Independent Gaussian endpoints N(mx, sx²·I) ⊗ N(my, sy²·I).
#[derive(Debug, Clone)]
pub struct GaussianPairLaw {
    pub mean_x: Vec<f64>,
    pub sd_x: f64,
    pub mean_y: Vec<f64>,
    pub sd_y: f64,
}

impl EndpointLaw for GaussianPairLaw {
    fn dim(&self) -> usize {
        self.mean_x.len()
    }
    fn sample(&self, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
        let x = self.mean_x.iter().map(|m| m + self.sd_x * rng.sample::<f64, _>(StandardNormal)).collect();
        let y = self.mean_y.iter().map(|m| m + self.sd_y * rng.sample::<f64, _>(StandardNormal)).collect();
        (x, y)
    }
}

/// Draws (x, y) from `law`, then the bridge between them (a path of the
/// reciprocal mixture ∫ P^{x,y} μ(dx dy)).
pub fn sample_reciprocal_mixture(
    law: &dyn EndpointLaw,
    horizon: f64,
    model: &PotentialModel,
    n_steps: usize,
    stream: RngStream,
    mode: &DriftMode,
) -> Result<DiscretizedPath> {
    let (x, y) = law.sample(&mut stream.child(0).rng());
    let problem = BridgeProblem::new(x, y, horizon, model.clone())?;
    simulate_bridge(&problem, n_steps, stream.child(1), mode)
}

/// JSON batch statistic.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct BatchRecord {
    pub quantity: String,
    pub t: f64,
    pub mean: f64,
    pub std_error: f64,
    pub n: u64,
}

/// Mean of the first coordinate at the requested nodes over `budget` paths.
pub fn marginal_means(
    problem: &BridgeProblem,
    n_steps: usize,
    mode: &DriftMode,
    nodes: &[usize],
    budget: u64,
    seed: u64,
    engine: &Engine,
) -> Result<Vec<BatchRecord>> {
    let sim = PathSimulator::new(problem, n_steps, mode)?;
    if nodes.iter().any(|&k| k > n_steps) {
        return arg("node index beyond the grid");
    }
    let last = nodes.iter().copied().max().unwrap_or(0);
    let stats = engine.run_batches_vec(budget, seed, nodes.len(), |s| {
        let mut vals = vec![0.0; nodes.len()];
        sim.walk(s, last, |k, st| {
            for (j, &node) in nodes.iter().enumerate() {
                if node == k {
                    vals[j] = st[0];
                }
            }
        })?;
        Ok(vals)
    })?;
    Ok(nodes
        .iter()
        .zip(stats)
        .map(|(&k, s)| BatchRecord { quantity: "position_1".into(), t: grid_time(problem.horizon, n_steps, k), mean: s.mean(), std_error: s.std_error(), n: s.n() })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::{Quadratic, TimeLinear};
    use approx::assert_abs_diff_eq;

    #[test]
    fn ou_variance_closed_form() {
        assert_abs_diff_eq!(ou_bridge_variance(1.0, 1.0, 0.0), 0.380_797_077_977_882_4, epsilon = 1e-15);
        let (a, h, t) = (0.7, 1.3, 0.4);
        let direct = f64::sinh(a * (h - t)) * f64::sinh(a * (h + t)) / (a * f64::sinh(2.0 * a * h));
        assert_abs_diff_eq!(ou_bridge_variance(a, h, t), direct, epsilon = 1e-15);
        assert_abs_diff_eq!(ou_bridge_variance(0.0, 1.0, 0.0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(ou_bridge_variance(1e-6, 1.0, 0.0), 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(ou_bridge_variance(400.0, 1.0, 0.0), 1.0 / 800.0, epsilon = 1e-15);
        assert_eq!(ou_bridge_variance(1.0, 1.0, 1.0), 0.0);
    }

    #[test]
    fn exact_brownian_bridge_moments() {
        let mut stats = SampleStats::new();
        let mut ends = 0.0f64;
        for i in 0..20_000 {
            let p = sample_brownian_bridge(&[1.0], &[-1.0], 1.0, 10, &mut RngStream::new(5, i).rng());
            ends = ends.max((p.position(0)[0] - 1.0).abs()).max((p.position(10)[0] + 1.0).abs());
            stats.push(p.position(5)[0]);
        }
        assert_eq!(ends, 0.0);
        assert!(stats.mean().abs() < 4.0 * stats.std_error());
        assert!((stats.variance() - 0.5).abs() < 0.02);
    }

    #[test]
    fn drift_closed_forms() {
        assert_eq!(brownian_bridge_drift(&[0.0], 0.0, &[1.0], 1.0).unwrap(), vec![1.0]);
        assert_eq!(brownian_bridge_drift(&[0.3], 0.2, &[0.3], 1.0).unwrap(), vec![0.0]);
        assert_eq!(brownian_bridge_drift(&[0.0, 0.0], 0.5, &[1.0, 2.0], 1.0).unwrap(), vec![2.0, 4.0]);
        assert!(brownian_bridge_drift(&[0.0], 1.0, &[1.0], 1.0).is_err());
        assert_abs_diff_eq!(ou_bridge_drift(1.0, &[0.0], 0.0, &[1.0], 1.0).unwrap()[0], 0.850_918_128_239_321_5, epsilon = 1e-15);
        let z0 = 1.0 / 1f64.cosh();
        assert_abs_diff_eq!(ou_bridge_drift(1.0, &[z0], 0.0, &[1.0], 1.0).unwrap()[0], 0.0, epsilon = 1e-15);
        assert!(ou_bridge_drift(1.0, &[0.0], 2.0, &[1.0], 1.0).is_err());
        let big = ou_bridge_drift(500.0, &[0.3], -1.0, &[1.0], 1.0).unwrap()[0];
        assert_abs_diff_eq!(big, -500.0 * 0.3, epsilon = 1e-9);
    }

    #[test]
    fn ou_drift_small_rate_limit() {
        let a = 1e-4;
        let (z, y, t, h) = (0.4, -1.3, -0.2, 1.0);
        let ou = ou_bridge_drift(a, &[z], t, &[y], h).unwrap()[0];
        let bb = brownian_bridge_drift(&[z], t, &[y], h).unwrap()[0];
        // series: α coth(ατ) = 1/τ + α²τ/3 + …, α csch(ατ) = 1/τ − α²τ/6 + …
        let tau = h - t;
        let second = -a * a * tau * (z / 3.0 + y / 6.0);
        assert!((ou - bb - second).abs() < 1e-12, "{}", ou - bb);
        assert!((ou - bb).abs() < 10.0 * a * a);
    }

    #[test]
    fn psi_constant_reciprocal_potential() {
        let c = 0.7;
        let p = BridgeProblem::new(vec![0.0], vec![0.5], 1.0, PotentialModel::new(TimeLinear { c, d: 1 })).unwrap();
        let s = FkSettings { inner_budget: 200, dt: 1e-2, base: BaseKind::Brownian };
        let e = estimate_psi(&p, -0.25, &[0.1], &s, RngStream::new(1, 0)).unwrap();
        assert_abs_diff_eq!(e.value, (-c * 1.25f64).exp(), epsilon = 1e-14);
        assert!(e.std_error < 1e-14);
        assert!(e.is_valid());
    }

    #[test]
    fn psi_ou_base_matching_rate_is_deterministic() {
        let p = BridgeProblem::new(vec![0.0], vec![1.0], 1.0, PotentialModel::quadratic(1.0, 1)).unwrap();
        let s = FkSettings { inner_budget: 100, dt: 1e-2, base: BaseKind::Ou(1.0) };
        let e = estimate_psi(&p, 0.0, &[0.3], &s, RngStream::new(2, 0)).unwrap();
        // 𝒰 − ½z² = −½ on the whole path
        assert_abs_diff_eq!(e.value, 0.5f64.exp(), epsilon = 1e-12);
        assert!(e.std_error < 1e-12);
        let d = bridge_drift_estimate(&p, 0.0, &[0.3], &s, RngStream::new(2, 1)).unwrap();
        let exact = ou_bridge_drift(1.0, &[0.3], 0.0, &[1.0], 1.0).unwrap()[0];
        assert_abs_diff_eq!(d.drift[0], exact, epsilon = 1e-9);
    }

    #[test]
    fn psi_rejections_are_counted() {
        use crate::potentials::FnPotential;
        let m = PotentialModel::new(FnPotential { d: 1, homogeneous: true, f: |_t: f64, z: &[f64]| if z[0] > 0.4 { f64::INFINITY } else { 0.0 } });
        let p = BridgeProblem::new(vec![0.0], vec![0.0], 1.0, m).unwrap();
        let s = FkSettings { inner_budget: 400, dt: 1e-2, base: BaseKind::Brownian };
        let e = estimate_psi(&p, 0.0, &[0.0], &s, RngStream::new(3, 0)).unwrap();
        assert!(e.rejected > 0 && !e.is_valid());
        assert!(e.value > 0.0);
    }

    #[test]
    fn zero_potential_drift_is_brownian() {
        let p = BridgeProblem::new(vec![0.0], vec![1.0], 1.0, PotentialModel::zero(1)).unwrap();
        let s = FkSettings { inner_budget: 50, dt: 1e-2, base: BaseKind::Brownian };
        let d = bridge_drift_estimate(&p, -0.3, &[0.2], &s, RngStream::new(4, 0)).unwrap();
        assert_abs_diff_eq!(d.drift[0], 0.8 / 1.3, epsilon = 1e-12);
    }

    #[test]
    fn endpoint_pinning_and_reversal() {
        let p = BridgeProblem::new(vec![0.2], vec![-0.7], 0.5, PotentialModel::quadratic(1.0, 1)).unwrap();
        for seed in 0..20 {
            let path = simulate_bridge(&p, 50, RngStream::new(seed, 0), &DriftMode::ExactOu(1.0)).unwrap();
            assert_eq!(path.position(0), &[0.2]);
            assert_eq!(path.position(50), &[-0.7]);
            assert_eq!(path.reversed().reversed(), path);
            assert_eq!(path.reversed().position(0), &[-0.7]);
        }
    }

    #[test]
    fn marginal_matches_full_simulation() {
        let p = BridgeProblem::new(vec![0.0], vec![1.0], 1.0, PotentialModel::quadratic(1.0, 1)).unwrap();
        let sim = PathSimulator::new(&p, 40, &DriftMode::Equivalent).unwrap();
        let s = RngStream::new(9, 3);
        assert_eq!(sim.marginal(s, 17).unwrap(), sim.simulate(s).unwrap().position(17));
    }

    #[test]
    fn normals_driven_path_matches_stream() {
        let p = BridgeProblem::new(vec![0.0, 1.0], vec![1.0, 0.0], 1.0, PotentialModel::zero(2)).unwrap();
        let sim = PathSimulator::new(&p, 30, &DriftMode::Brownian).unwrap();
        let s = RngStream::new(1, 1);
        let mut rng = s.rng();
        let normals: Vec<f64> = (0..60).map(|_| rng.sample(StandardNormal)).collect();
        assert_eq!(sim.simulate_with_normals(&normals, s).unwrap(), sim.simulate(s).unwrap());
    }

    #[test]
    fn equivalent_mode_uses_shift_center() {
        let m = PotentialModel::new(Quadratic { a: 2.0, beta: vec![1.0] });
        let p = BridgeProblem::new(vec![-0.5], vec![-0.5], 1.0, m).unwrap();
        // starting at the centre −β/a with y at the centre, the mean path stays there
        let e = Engine::new(1).unwrap();
        let rec = marginal_means(&p, 200, &DriftMode::Equivalent, &[100], 4000, 5, &e).unwrap();
        assert!((rec[0].mean + 0.5).abs() < 4.0 * rec[0].std_error);
        assert!(PathSimulator::new(&BridgeProblem::new(vec![0.0], vec![0.0], 1.0, PotentialModel::zero(1)).unwrap(), 10, &DriftMode::Equivalent).is_err());
    }

    #[test]
    fn csv_layout() {
        let path = DiscretizedPath { horizon: 1.0, n_steps: 2, dim: 2, positions: vec![0.0, 1.0, 0.5, 0.5, 1.0, 0.0] };
        assert_eq!(path.to_csv(), "t,x_1,x_2\n-1,0,1\n0,0.5,0.5\n1,1,0\n");
    }

    #[test]
    fn dirac_mixture_is_the_plain_bridge() {
        let m = PotentialModel::quadratic(1.0, 1);
        let law = DiracPair { x: vec![0.3], y: vec![-0.2] };
        let a = sample_reciprocal_mixture(&law, 1.0, &m, 20, RngStream::new(4, 4), &DriftMode::ExactOu(1.0)).unwrap();
        let p = BridgeProblem::new(vec![0.3], vec![-0.2], 1.0, m).unwrap();
        let b = simulate_bridge(&p, 20, RngStream::new(4, 4).child(1), &DriftMode::ExactOu(1.0)).unwrap();
        assert_eq!(a, b);
    }
}
