//! Synchronous couplings of bridges: the sinh contraction envelope, gradient
//! estimates for bridge expectations, and the 1D comparison principle.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::bridge::{grid_time, BridgeProblem, DiscretizedPath, DriftMode, PathSimulator};
use crate::error::{arg, Error, Result};
use crate::hyper::sinh_ratio;
use crate::mc::{Engine, RngStream, SampleStats};
use crate::potentials::{ConvexityCertificate, PotentialModel};

/// sinh(α(T−t))/sinh(2αT)·dx + sinh(α(T+t))/sinh(2αT)·dy.
pub fn coupling_bound_envelope(alpha: f64, horizon: f64, t: f64, dx: f64, dy: f64) -> Result<f64> {
    if !(alpha > 0.0) || !(horizon > 0.0) {
        return arg("alpha and T must be positive");
    }
    if t.abs() > horizon * (1.0 + 1e-12) {
        return arg(format!("|t| must not exceed T (t={t}, T={horizon})"));
    }
    if !(dx >= 0.0 && dy >= 0.0) {
        return arg("endpoint gaps must be nonnegative");
    }
    let full = 2.0 * alpha * horizon;
    let left = (alpha * (horizon - t)).max(0.0);
    let right = (alpha * (horizon + t)).max(0.0);
    Ok(sinh_ratio(left, full) * dx + sinh_ratio(right, full) * dy)
}

/// sinh(α(2T−t))/sinh(2αT), which tends to e^{−αt} as T grows.
pub fn envelope_decay_coefficient(alpha: f64, horizon: f64, t: f64) -> f64 {
    sinh_ratio(alpha * (2.0 * horizon - t), 2.0 * alpha * horizon)
}

/// Two bridges on one grid driven by the same Brownian increments.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledPaths {
    pub path_1: DiscretizedPath,
    pub path_2: DiscretizedPath,
    pub shared_seed: RngStream,
}

impl CoupledPaths {
    /// Euclidean gap |X¹ₜ − X²ₜ| per node.
    pub fn gaps(&self) -> Vec<f64> {
        (0..self.path_1.len())
            .map(|k| {
                self.path_1.position(k).iter().zip(self.path_2.position(k)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
            })
            .collect()
    }
}

fn shared_normals(stream: RngStream, count: usize) -> Vec<f64> {
    let mut rng = stream.rng();
    (0..count).map(|_| rng.sample(StandardNormal)).collect()
}

/// Each problem integrates its own drift against identical increments.
pub fn couple_synchronous(
    problem_1: &BridgeProblem,
    problem_2: &BridgeProblem,
    n_steps: usize,
    stream: RngStream,
    mode_1: &DriftMode,
    mode_2: &DriftMode,
) -> Result<CoupledPaths> {
    if problem_1.horizon != problem_2.horizon || problem_1.dim() != problem_2.dim() {
        return arg("coupled problems need the same horizon and dimension");
    }
    let s1 = PathSimulator::new(problem_1, n_steps, mode_1)?;
    let s2 = PathSimulator::new(problem_2, n_steps, mode_2)?;
    let normals = shared_normals(stream, n_steps * problem_1.dim());
    Ok(CoupledPaths {
        path_1: s1.simulate_with_normals(&normals, stream.child(0))?,
        path_2: s2.simulate_with_normals(&normals, stream.child(1))?,
        shared_seed: stream,
    })
}

/// Observed coupling gaps against the sinh envelope.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct EnvelopeReport {
    pub alpha: f64,
    pub horizon: f64,
    pub dt: f64,
    pub trials: u64,
    pub times: Vec<f64>,
    /// Largest |X¹ₜ − X²ₜ| over trials at each node.
    pub max_abs_diff: Vec<f64>,
    pub bound: Vec<f64>,
    pub tolerance: f64,
    pub slack: f64,
    pub violations: u64,
    pub checks: u64,
    pub violation_fraction: f64,
}

impl EnvelopeReport {
    /// Largest excess of the observed gap over the bare envelope.
    pub fn worst_excess(&self) -> f64 {
        self.max_abs_diff.iter().zip(&self.bound).map(|(m, b)| m - b).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Runs `trials` synchronous couplings and counts (trial, node) pairs with
/// gap > bound·(1 + tol) + slack_c·√Δt.
#[allow(clippy::too_many_arguments)]
pub fn envelope_check(
    alpha: f64,
    problem_1: &BridgeProblem,
    problem_2: &BridgeProblem,
    n_steps: usize,
    trials: u64,
    seed: u64,
    engine: &Engine,
    mode: &DriftMode,
    tolerance: f64,
    slack_c: f64,
) -> Result<EnvelopeReport> {
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt();
    let dx = dist(&problem_1.x, &problem_2.x);
    let dy = dist(&problem_1.y, &problem_2.y);
    let h = problem_1.horizon;
    let times: Vec<f64> = (0..=n_steps).map(|k| grid_time(h, n_steps, k)).collect();
    let bound = times.iter().map(|&t| coupling_bound_envelope(alpha, h, t, dx, dy)).collect::<Result<Vec<_>>>()?;
    let dt = 2.0 * h / n_steps as f64;
    let slack = slack_c * dt.sqrt();
    let per_trial = engine.collect(trials, seed, |s| {
        let c = couple_synchronous(problem_1, problem_2, n_steps, s, mode, mode)?;
        Ok(c.gaps())
    })?;
    let mut max_abs_diff = vec![0.0f64; n_steps + 1];
    let mut violations = 0u64;
    for gaps in &per_trial {
        for (k, g) in gaps.iter().enumerate() {
            max_abs_diff[k] = max_abs_diff[k].max(*g);
            if *g > bound[k] * (1.0 + tolerance) + slack {
                violations += 1;
            }
        }
    }
    let checks = trials * (n_steps as u64 + 1);
    Ok(EnvelopeReport {
        alpha,
        horizon: h,
        dt,
        trials,
        times,
        max_abs_diff,
        bound,
        tolerance,
        slack,
        violations,
        checks,
        violation_fraction: violations as f64 / checks as f64,
    })
}

/// Smooth test function for gradient estimates.
pub trait TestFunction: Send + Sync {
    fn value(&self, z: &[f64]) -> f64;
    fn gradient(&self, z: &[f64], out: &mut [f64]);
    fn name(&self) -> String;
}

/// f(z) = v·z.
#[derive(Debug, Clone)]
pub struct LinearFunction {
    pub v: Vec<f64>,
}

impl TestFunction for LinearFunction {
    fn value(&self, z: &[f64]) -> f64 {
        self.v.iter().zip(z).map(|(a, b)| a * b).sum()
    }
    fn gradient(&self, _z: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.v);
    }
    fn name(&self) -> String {
        "linear".into()
    }
}

/// f(z) = tanh(z₁).
#[derive(Debug, Clone)]
pub struct TanhFunction;

impl TestFunction for TanhFunction {
    fn value(&self, z: &[f64]) -> f64 {
        z[0].tanh()
    }
    fn gradient(&self, z: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        out[0] = 1.0 / z[0].cosh().powi(2);
    }
    fn name(&self) -> String {
        "tanh".into()
    }
}

/// Which endpoint is perturbed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Perturb {
    Initial,
    Final,
}

/// Both sides of |∇ E f(ω_t)| ≤ coefficient · E|∇f(ω_t)|.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct GradientReport {
    pub function: String,
    pub t: f64,
    pub perturb: Perturb,
    pub alpha_hat: f64,
    pub coefficient: f64,
    pub lhs: f64,
    pub lhs_se: f64,
    pub rhs: f64,
    pub rhs_se: f64,
    pub holds: bool,
}

/// Central differences in x (or y) with common random numbers.
#[allow(clippy::too_many_arguments)]
pub fn verify_gradient_estimate(
    problem: &BridgeProblem,
    f: &dyn TestFunction,
    t: f64,
    perturb: Perturb,
    h: f64,
    n_steps: usize,
    budget: u64,
    seed: u64,
    engine: &Engine,
    mode: &DriftMode,
    certificate: &ConvexityCertificate,
) -> Result<GradientReport> {
    let alpha = certificate.alpha_hat;
    if !(alpha > 0.0) {
        return Err(Error::Precondition(format!(
            "convexity scan gives alpha_hat = 0 (min eigenvalue {} at {:?})",
            certificate.min_eigenvalue, certificate.min_eigenvalue_location
        )));
    }
    let big_t = problem.horizon;
    if t.abs() > big_t || !(h > 0.0) {
        return arg("need |t| ≤ T and h > 0");
    }
    let d = problem.dim();
    let k = (((t + big_t) / (2.0 * big_t)) * n_steps as f64).round() as usize;
    let t_node = grid_time(big_t, n_steps, k);
    let base = PathSimulator::new(problem, n_steps, mode)?;
    let shifted: Vec<(BridgeProblem, BridgeProblem)> = (0..d)
        .map(|i| {
            let mut up = problem.clone();
            let mut dn = problem.clone();
            match perturb {
                Perturb::Initial => {
                    up.x[i] += h;
                    dn.x[i] -= h;
                }
                Perturb::Final => {
                    up.y[i] += h;
                    dn.y[i] -= h;
                }
            }
            (up, dn)
        })
        .collect();
    let sims: Vec<(PathSimulator, PathSimulator)> = shifted
        .iter()
        .map(|(u, v)| Ok((PathSimulator::new(u, n_steps, mode)?, PathSimulator::new(v, n_steps, mode)?)))
        .collect::<Result<_>>()?;
    let stats = engine.run_batches_vec(budget, seed, d + 1, |s| {
        let normals = shared_normals(s, n_steps * d);
        let mut out = Vec::with_capacity(d + 1);
        for (su, sd) in &sims {
            let pu = su.simulate_with_normals(&normals, s.child(0))?;
            let pd = sd.simulate_with_normals(&normals, s.child(0))?;
            out.push((f.value(pu.position(k)) - f.value(pd.position(k))) / (2.0 * h));
        }
        let p0 = base.simulate_with_normals(&normals, s.child(0))?;
        let mut g = vec![0.0; d];
        f.gradient(p0.position(k), &mut g);
        out.push(g.iter().map(|v| v * v).sum::<f64>().sqrt());
        Ok(out)
    })?;
    let grad: Vec<f64> = stats[..d].iter().map(SampleStats::mean).collect();
    let lhs = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    let lhs_se = if lhs > 0.0 {
        grad.iter().zip(&stats[..d]).map(|(g, s)| (g / lhs * s.std_error()).powi(2)).sum::<f64>().sqrt()
    } else {
        stats[..d].iter().map(|s| s.std_error().powi(2)).sum::<f64>().sqrt()
    };
    let full = 2.0 * alpha * big_t;
    let coefficient = match perturb {
        Perturb::Initial => sinh_ratio((alpha * (big_t - t_node)).max(0.0), full),
        Perturb::Final => sinh_ratio((alpha * (big_t + t_node)).max(0.0), full),
    };
    let rhs = coefficient * stats[d].mean();
    let rhs_se = coefficient * stats[d].std_error();
    let sigma = (lhs_se * lhs_se + rhs_se * rhs_se).sqrt();
    let holds = lhs <= rhs + 3.0 * sigma + 1e-9 * rhs.abs().max(1e-300);
    Ok(GradientReport { function: f.name(), t: t_node, perturb, alpha_hat: alpha, coefficient, lhs, lhs_se, rhs, rhs_se, holds })
}

/// Result of one comparison coupling.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonOutcome {
    pub coupled: CoupledPaths,
    pub violations: u64,
    pub fraction: f64,
    pub slack: f64,
}

/// Aggregate over many comparison couplings.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ComparisonReport {
    pub trials: u64,
    pub dt: f64,
    pub slack: f64,
    pub violations: u64,
    pub checks: u64,
    pub fraction: f64,
    /// min over grid of (𝒰¹ − 𝒰²)′ in the gate scan.
    pub gate_min: f64,
}

/// Checks (𝒰¹ − 𝒰²)′ ≥ 0 on a grid of `region` (and of [−T, T] when a model
/// depends on time). Returns the minimum found.
pub fn comparison_gate(model_1: &PotentialModel, model_2: &PotentialModel, horizon: f64, region: (f64, f64), resolution: usize) -> Result<f64> {
    if model_1.dim() != 1 || model_2.dim() != 1 {
        return arg("comparison is one-dimensional");
    }
    if !(region.1 > region.0) || resolution < 2 {
        return arg("degenerate gate region");
    }
    let times: Vec<f64> = if model_1.time_homogeneous() && model_2.time_homogeneous() {
        vec![0.0]
    } else {
        (0..=20).map(|j| -horizon + 2.0 * horizon * j as f64 / 20.0).collect()
    };
    let mut lowest = f64::INFINITY;
    for &t in &times {
        for j in 0..resolution {
            let z = region.0 + (region.1 - region.0) * j as f64 / (resolution - 1) as f64;
            let g1 = model_1.reciprocal_characteristic(t, &[z])?[0];
            let g2 = model_2.reciprocal_characteristic(t, &[z])?[0];
            let diff = g1 - g2;
            if diff < -1e-9 * (1.0 + g1.abs() + g2.abs()) {
                return Err(Error::Precondition(format!("(U1 - U2)' = {diff:e} < 0 at t={t}, z={z}")));
            }
            lowest = lowest.min(diff);
        }
    }
    Ok(lowest)
}

fn count_disorder(c: &CoupledPaths, slack: f64) -> u64 {
    (0..c.path_1.len()).filter(|&k| c.path_2.position(k)[0] < c.path_1.position(k)[0] - slack).count() as u64
}

/// One gated comparison coupling; the verdict counts nodes with X² < X¹ − slack.
#[allow(clippy::too_many_arguments)]
pub fn couple_comparison_1d(
    model_1: &PotentialModel,
    model_2: &PotentialModel,
    x: f64,
    y: f64,
    horizon: f64,
    n_steps: usize,
    stream: RngStream,
    region: (f64, f64),
    modes: (&DriftMode, &DriftMode),
    slack_c: f64,
) -> Result<ComparisonOutcome> {
    comparison_gate(model_1, model_2, horizon, region, 201)?;
    let p1 = BridgeProblem::new(vec![x], vec![y], horizon, model_1.clone())?;
    let p2 = BridgeProblem::new(vec![x], vec![y], horizon, model_2.clone())?;
    let coupled = couple_synchronous(&p1, &p2, n_steps, stream, modes.0, modes.1)?;
    let slack = slack_c * (2.0 * horizon / n_steps as f64).sqrt();
    let violations = count_disorder(&coupled, slack);
    let fraction = violations as f64 / (n_steps + 1) as f64;
    Ok(ComparisonOutcome { coupled, violations, fraction, slack })
}

/// Many gated comparison couplings.
#[allow(clippy::too_many_arguments)]
pub fn comparison_study(
    model_1: &PotentialModel,
    model_2: &PotentialModel,
    x: f64,
    y: f64,
    horizon: f64,
    n_steps: usize,
    trials: u64,
    seed: u64,
    engine: &Engine,
    region: (f64, f64),
    modes: (&DriftMode, &DriftMode),
    slack_c: f64,
) -> Result<ComparisonReport> {
    let gate_min = comparison_gate(model_1, model_2, horizon, region, 201)?;
    let p1 = BridgeProblem::new(vec![x], vec![y], horizon, model_1.clone())?;
    let p2 = BridgeProblem::new(vec![x], vec![y], horizon, model_2.clone())?;
    let dt = 2.0 * horizon / n_steps as f64;
    let slack = slack_c * dt.sqrt();
    let counts = engine.collect(trials, seed, |s| {
        let c = couple_synchronous(&p1, &p2, n_steps, s, modes.0, modes.1)?;
        Ok(count_disorder(&c, slack))
    })?;
    let violations: u64 = counts.iter().sum();
    let checks = trials * (n_steps as u64 + 1);
    Ok(ComparisonReport { trials, dt, slack, violations, checks, fraction: violations as f64 / checks as f64, gate_min })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::{convexity_certificate, Offset, Quadratic};
    use approx::assert_abs_diff_eq;

    fn quad() -> PotentialModel {
        PotentialModel::quadratic(1.0, 1)
    }

    #[test]
    fn envelope_values() {
        assert_abs_diff_eq!(coupling_bound_envelope(1.0, 1.0, -1.0, 0.7, 0.3).unwrap(), 0.7, epsilon = 1e-15);
        assert_abs_diff_eq!(coupling_bound_envelope(1.0, 1.0, 1.0, 0.7, 0.3).unwrap(), 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(coupling_bound_envelope(1.0, 1.0, 0.0, 1.0, 0.0).unwrap(), 0.324_027_136_831_943, epsilon = 1e-14);
        assert!(coupling_bound_envelope(0.0, 1.0, 0.0, 1.0, 0.0).is_err());
        assert!(coupling_bound_envelope(1.0, 1.0, 1.5, 1.0, 0.0).is_err());
    }

    #[test]
    fn bakry_emery_limit() {
        for t in [0.1, 0.5, 1.0, 3.0] {
            let alpha = 1.0;
            let horizon = 20.0 / alpha;
            assert!((envelope_decay_coefficient(alpha, horizon, t) - (-alpha * t).exp()).abs() < 1e-6);
        }
    }

    #[test]
    fn identical_problems_couple_identically() {
        let p = BridgeProblem::new(vec![0.0], vec![0.5], 1.0, quad()).unwrap();
        let c = couple_synchronous(&p, &p, 100, RngStream::new(1, 2), &DriftMode::ExactOu(1.0), &DriftMode::ExactOu(1.0)).unwrap();
        assert_eq!(c.path_1, c.path_2);
        let q = BridgeProblem::new(vec![1.0], vec![0.5], 1.0, quad()).unwrap();
        let c = couple_synchronous(&p, &q, 100, RngStream::new(1, 2), &DriftMode::ExactOu(1.0), &DriftMode::ExactOu(1.0)).unwrap();
        assert_eq!(c.gaps()[0], 1.0);
    }

    #[test]
    fn envelope_holds_for_ou_pairs() {
        let e = Engine::new(2).unwrap();
        let p1 = BridgeProblem::new(vec![0.0], vec![0.0], 1.0, quad()).unwrap();
        let p2 = BridgeProblem::new(vec![1.0], vec![0.0], 1.0, quad()).unwrap();
        let r = envelope_check(1.0, &p1, &p2, 500, 50, 3, &e, &DriftMode::ExactOu(1.0), 0.0, 0.05).unwrap();
        assert_eq!(r.violations, 0, "worst excess {}", r.worst_excess());
        assert!(r.worst_excess() < 0.01);
    }

    #[test]
    fn gradient_linear_is_deterministic_translation() {
        let e = Engine::new(1).unwrap();
        let p = BridgeProblem::new(vec![0.0], vec![0.0], 1.0, quad()).unwrap();
        let cert = convexity_certificate(&quad(), &[(-5.0, 5.0)], 101).unwrap();
        let f = LinearFunction { v: vec![1.0] };
        let r = verify_gradient_estimate(&p, &f, 0.0, Perturb::Initial, 1e-3, 1000, 8, 1, &e, &DriftMode::ExactOu(1.0), &cert).unwrap();
        assert!(r.lhs_se < 1e-9);
        assert!((r.lhs - 1f64.sinh() / 2f64.sinh()).abs() < 2e-3, "{r:?}");
        assert!(r.holds);
        let r = verify_gradient_estimate(&p, &f, -1.0, Perturb::Initial, 1e-3, 1000, 8, 1, &e, &DriftMode::ExactOu(1.0), &cert).unwrap();
        assert!((r.lhs - 1.0).abs() < 1e-9 && (r.rhs - 1.0).abs() < 1e-9 && r.holds);
    }

    #[test]
    fn gradient_estimate_refuses_without_convexity() {
        let e = Engine::new(1).unwrap();
        let m = PotentialModel::sine(0.5, 1);
        let p = BridgeProblem::new(vec![0.0], vec![0.0], 1.0, m.clone()).unwrap();
        let cert = convexity_certificate(&m, &[(-5.0, 5.0)], 101).unwrap();
        let r = verify_gradient_estimate(&p, &TanhFunction, 0.0, Perturb::Initial, 1e-3, 100, 4, 1, &e, &DriftMode::Brownian, &cert);
        assert!(matches!(r, Err(Error::Precondition(_))));
    }

    #[test]
    fn comparison_gate_and_verdict() {
        let e = Engine::new(1).unwrap();
        let m1 = quad();
        let m2 = PotentialModel::new(Quadratic { a: 1.0, beta: vec![-0.5] });
        let modes = (&DriftMode::Equivalent, &DriftMode::Equivalent);
        let r = comparison_study(&m1, &m2, 0.0, 0.0, 1.0, 400, 30, 2, &e, (-5.0, 5.0), modes, 1.0).unwrap();
        assert_eq!(r.violations, 0);
        assert!((r.gate_min - 0.5).abs() < 1e-12);
        let same = comparison_study(&m1, &m1, 0.0, 0.0, 1.0, 400, 5, 2, &e, (-5.0, 5.0), modes, 1.0).unwrap();
        assert_eq!(same.violations, 0);
        let m3 = PotentialModel::new(Quadratic { a: 1.0, beta: vec![0.5] });
        assert!(matches!(comparison_study(&m1, &m3, 0.0, 0.0, 1.0, 400, 5, 2, &e, (-5.0, 5.0), modes, 1.0), Err(Error::Precondition(_))));
    }

    #[test]
    fn comparison_ignores_constant_offsets() {
        let m1 = quad();
        let m2 = PotentialModel::new(Quadratic { a: 1.0, beta: vec![-0.5] });
        let m1c = PotentialModel::new(Offset { inner: Quadratic::centered(1.0, 1), c: 3.0 });
        let m2c = PotentialModel::new(Offset { inner: Quadratic { a: 1.0, beta: vec![-0.5] }, c: -7.0 });
        let modes = (&DriftMode::Equivalent, &DriftMode::Equivalent);
        let a = couple_comparison_1d(&m1, &m2, 0.2, -0.1, 1.0, 200, RngStream::new(5, 5), (-4.0, 4.0), modes, 1.0).unwrap();
        let b = couple_comparison_1d(&m1c, &m2c, 0.2, -0.1, 1.0, 200, RngStream::new(5, 5), (-4.0, 4.0), modes, 1.0).unwrap();
        assert_eq!(a.violations, b.violations);
        assert_eq!(a.coupled, b.coupled);
    }
}
