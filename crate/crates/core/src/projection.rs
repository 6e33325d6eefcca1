//! Convex-cost projections of a Markov path measure on a finite state space
//! onto endpoint-marginal constraints.
//!
//! Paths are enumerated in full, indexed in base S with x₀ most significant.
//! The solvers work on the endpoint matrix K(a, b) = P(x₀ = a, x_N = b),
//! because the optimal density dQ/dP depends on the endpoints only; the
//! oracle in [`full_simplex_oracle`] works on path-indexed Q instead and is
//! started from a density that is not endpoint-measurable.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use crate::error::{arg, Error, Result};
use crate::mc::RngStream;

const MAX_PATHS: usize = 100_000;

/// Transition kernels of the reference chain, each S × S row-major.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelSpec {
    Homogeneous(Vec<f64>),
    PerStep(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscretePathMeasure {
    pub states: usize,
    pub steps: usize,
    /// Probability of each enumerated path.
    pub prob: Vec<f64>,
}

impl DiscretePathMeasure {
    pub fn len(&self) -> usize {
        self.prob.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prob.is_empty()
    }

    pub fn path(&self, index: usize) -> Vec<usize> {
        let mut out = vec![0; self.steps + 1];
        let mut r = index;
        for slot in out.iter_mut().rev() {
            *slot = r % self.states;
            r /= self.states;
        }
        out
    }

    /// (x₀, x_N) of a path.
    pub fn endpoints(&self, index: usize) -> (usize, usize) {
        let last = index % self.states;
        let first = index / self.states.pow(self.steps as u32);
        (first, last)
    }

    /// Row-major S × S endpoint matrix.
    pub fn endpoint_matrix(&self) -> Vec<f64> {
        let s = self.states;
        let mut k = vec![0.0; s * s];
        for (i, p) in self.prob.iter().enumerate() {
            let (a, b) = self.endpoints(i);
            k[a * s + b] += p;
        }
        k
    }

    /// P(path)·α(x₀)·β(x_N), renormalized.
    pub fn reweight_endpoints(&self, alpha: &[f64], beta: &[f64]) -> Result<Self> {
        if alpha.len() != self.states || beta.len() != self.states || alpha.iter().chain(beta).any(|v| !(*v > 0.0)) {
            return arg("endpoint factors must be positive with one entry per state");
        }
        let mut prob: Vec<f64> = (0..self.len())
            .map(|i| {
                let (a, b) = self.endpoints(i);
                self.prob[i] * alpha[a] * beta[b]
            })
            .collect();
        let z: f64 = prob.iter().sum();
        prob.iter_mut().for_each(|p| *p /= z);
        Ok(Self { prob, ..*self })
    }
}

fn check_kernel(k: &[f64], s: usize) -> Result<()> {
    if k.len() != s * s {
        return arg("kernel must be S × S");
    }
    for row in k.chunks(s) {
        if row.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Precondition("kernel has a zero transition; absolute continuity would fail".into()));
        }
        if (row.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return arg("kernel rows must sum to 1");
        }
    }
    Ok(())
}

/// P(path) = μ₀(x₀)·Π kernel_i(x_i, x_{i+1}).
pub fn build_reference(kernels: &KernelSpec, initial: &[f64], states: usize, steps: usize) -> Result<DiscretePathMeasure> {
    if states < 1 || steps < 1 {
        return arg("need at least one state and one step");
    }
    let count = (states as u128).pow(steps as u32 + 1);
    if count > MAX_PATHS as u128 {
        return arg(format!("{count} paths exceed the enumeration limit {MAX_PATHS}"));
    }
    if initial.len() != states || initial.iter().any(|v| !(*v > 0.0)) || (initial.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
        return arg("initial law must be a strictly positive probability vector");
    }
    let kernel_at = |i: usize| -> &[f64] {
        match kernels {
            KernelSpec::Homogeneous(k) => k,
            KernelSpec::PerStep(ks) => &ks[i],
        }
    };
    match kernels {
        KernelSpec::Homogeneous(k) => check_kernel(k, states)?,
        KernelSpec::PerStep(ks) => {
            if ks.len() != steps {
                return arg("need one kernel per step");
            }
            ks.iter().try_for_each(|k| check_kernel(k, states))?;
        }
    }
    let mut measure = DiscretePathMeasure { states, steps, prob: Vec::with_capacity(count as usize) };
    for index in 0..count as usize {
        let path = measure.path(index);
        let mut p = initial[path[0]];
        for i in 0..steps {
            p *= kernel_at(i)[path[i] * states + path[i + 1]];
        }
        measure.prob.push(p);
    }
    Ok(measure)
}

/// Cost integrands c with the conventions used here:
/// entropy z log z, square z², and the Hellinger integrand (√z − 1)²,
/// whose minimization is equivalent to maximizing Σ P √(Q/P) because
/// Σ P·z = 1 is fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CostKind {
    Entropy,
    Square,
    Hellinger,
}

impl CostKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "entropy" => Ok(Self::Entropy),
            "square" => Ok(Self::Square),
            "hellinger" => Ok(Self::Hellinger),
            other => arg(format!("unknown cost '{other}' (entropy, square, hellinger)")),
        }
    }

    pub fn value(&self, z: f64) -> f64 {
        match self {
            Self::Entropy => {
                if z > 0.0 {
                    z * z.ln()
                } else {
                    0.0
                }
            }
            Self::Square => z * z,
            Self::Hellinger => (z.sqrt() - 1.0).powi(2),
        }
    }

    fn derivative(&self, z: f64) -> f64 {
        match self {
            Self::Entropy => z.ln() + 1.0,
            Self::Square => 2.0 * z,
            Self::Hellinger => 1.0 - 1.0 / z.sqrt(),
        }
    }

    fn second(&self, z: f64) -> f64 {
        match self {
            Self::Entropy => 1.0 / z,
            Self::Square => 2.0,
            Self::Hellinger => 0.5 * z.powf(-1.5),
        }
    }

    /// Convex conjugate restricted to z ≥ 0: (c*, (c*)', (c*)''), or None
    /// outside its domain.
    fn conjugate(&self, s: f64) -> Option<(f64, f64, f64)> {
        match self {
            Self::Entropy => {
                let e = (s - 1.0).exp();
                Some((e, e, e))
            }
            Self::Square => {
                if s > 0.0 {
                    Some((0.25 * s * s, 0.5 * s, 0.5))
                } else {
                    Some((0.0, 0.0, 0.0))
                }
            }
            Self::Hellinger => {
                if s < 1.0 {
                    let r = 1.0 - s;
                    Some((s / r, 1.0 / (r * r), 2.0 / (r * r * r)))
                } else {
                    None
                }
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ProjectionResult {
    pub cost_kind: CostKind,
    /// Path-indexed optimal Q.
    pub q: Vec<f64>,
    /// Σ P·c(Q/P).
    pub cost: f64,
    /// Max within-endpoint-class spread of Q/P.
    pub residual: f64,
    /// Max absolute error over both endpoint marginals.
    pub marginal_error: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn check_marginals(p: &DiscretePathMeasure, mu: &[f64], nu: &[f64]) -> Result<()> {
    let s = p.states;
    if mu.len() != s || nu.len() != s {
        return arg("marginals need one entry per state");
    }
    if mu.iter().chain(nu).any(|v| !(*v >= 0.0)) {
        return Err(Error::Infeasible("marginals must be nonnegative".into()));
    }
    if (mu.iter().sum::<f64>() - 1.0).abs() > 1e-12 || (nu.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
        return Err(Error::Infeasible("marginals must each have unit mass".into()));
    }
    let k = p.endpoint_matrix();
    for a in 0..s {
        if mu[a] > 0.0 && (0..s).all(|b| k[a * s + b] <= 0.0 || nu[b] <= 0.0) {
            return Err(Error::Infeasible(format!("initial state {a} cannot reach the final marginal")));
        }
    }
    Ok(())
}

/// Max absolute deviation of Q's endpoint marginals from (μ, ν).
pub fn marginal_error(p: &DiscretePathMeasure, q: &[f64], mu: &[f64], nu: &[f64]) -> f64 {
    let s = p.states;
    let (mut m0, mut m1) = (vec![0.0; s], vec![0.0; s]);
    for (i, v) in q.iter().enumerate() {
        let (a, b) = p.endpoints(i);
        m0[a] += v;
        m1[b] += v;
    }
    m0.iter().zip(mu).chain(m1.iter().zip(nu)).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn finish(p: &DiscretePathMeasure, kind: CostKind, density: &[f64], mu: &[f64], nu: &[f64], iterations: usize, converged: bool) -> Result<ProjectionResult> {
    let s = p.states;
    let q: Vec<f64> = (0..p.len())
        .map(|i| {
            let (a, b) = p.endpoints(i);
            p.prob[i] * density[a * s + b]
        })
        .collect();
    let cost = p.prob.iter().zip(&q).map(|(pp, qq)| pp * kind.value(qq / pp)).sum();
    let residual = verify_endpoint_measurability(&q, p)?;
    Ok(ProjectionResult { cost_kind: kind, marginal_error: marginal_error(p, &q, mu, nu), q, cost, residual, iterations, converged })
}

/// Sinkhorn scaling on the endpoint matrix; Q = P·a(x₀)·b(x_N). Updates are
/// damped geometrically when the marginal error stops decreasing.
pub fn project_entropic(p: &DiscretePathMeasure, mu: &[f64], nu: &[f64], max_iter: usize) -> Result<ProjectionResult> {
    check_marginals(p, mu, nu)?;
    let s = p.states;
    let k = p.endpoint_matrix();
    let (mut a, mut b) = (vec![1.0; s], vec![1.0; s]);
    let error = |a: &[f64], b: &[f64]| {
        let mut e = 0.0f64;
        for i in 0..s {
            let row: f64 = (0..s).map(|j| a[i] * k[i * s + j] * b[j]).sum();
            let col: f64 = (0..s).map(|j| a[j] * k[j * s + i] * b[i]).sum();
            e = e.max((row - mu[i]).abs()).max((col - nu[i]).abs());
        }
        e
    };
    let mut err = error(&a, &b);
    let mut iterations = 0;
    let mut damping = 1.0f64;
    while err >= 1e-12 && iterations < max_iter {
        iterations += 1;
        let (old_a, old_b) = (a.clone(), b.clone());
        for i in 0..s {
            let kb: f64 = (0..s).map(|j| k[i * s + j] * b[j]).sum();
            let target = if mu[i] > 0.0 { mu[i] / kb } else { 0.0 };
            a[i] = if damping < 1.0 && a[i] > 0.0 && target > 0.0 { a[i].powf(1.0 - damping) * target.powf(damping) } else { target };
        }
        for j in 0..s {
            let ka: f64 = (0..s).map(|i| k[i * s + j] * a[i]).sum();
            let target = if nu[j] > 0.0 { nu[j] / ka } else { 0.0 };
            b[j] = if damping < 1.0 && b[j] > 0.0 && target > 0.0 { b[j].powf(1.0 - damping) * target.powf(damping) } else { target };
        }
        let next = error(&a, &b);
        if next > err && damping > 0.125 {
            damping *= 0.5;
            a = old_a;
            b = old_b;
            continue;
        }
        err = next;
    }
    let density: Vec<f64> = (0..s * s).map(|ij| a[ij / s] * b[ij % s]).collect();
    finish(p, CostKind::Entropy, &density, mu, nu, iterations, err < 1e-12)
}

/// KKT reduction for a general convex cost: dual Newton on (f, g) with
/// c'(z(a, b)) = f(a) + g(b) on the endpoint matrix.
pub fn project_convex(p: &DiscretePathMeasure, mu: &[f64], nu: &[f64], kind: CostKind, max_iter: usize) -> Result<ProjectionResult> {
    if kind == CostKind::Entropy {
        return project_entropic(p, mu, nu, max_iter.max(10_000));
    }
    check_marginals(p, mu, nu)?;
    let s = p.states;
    let k = p.endpoint_matrix();
    // g[s − 1] is pinned to 0 to remove the shift invariance.
    let nv = 2 * s - 1;
    let start = kind.derivative(1.0);
    let mut x = vec![0.0; nv];
    x[..s].fill(start);
    let sum_of = |x: &[f64], a: usize, b: usize| x[a] + if b + 1 < s { x[s + b] } else { 0.0 };
    let dual = |x: &[f64]| -> Option<f64> {
        let mut v: f64 = (0..s).map(|a| mu[a] * x[a]).sum::<f64>() + (0..s - 1).map(|b| nu[b] * x[s + b]).sum::<f64>();
        for a in 0..s {
            for b in 0..s {
                v -= k[a * s + b] * kind.conjugate(sum_of(x, a, b))?.0;
            }
        }
        Some(v)
    };
    let mut iterations = 0;
    let mut err = f64::INFINITY;
    let mut lambda = 1e-12;
    while iterations < max_iter {
        let mut grad = vec![0.0; nv];
        let mut hess = DMatrix::<f64>::zeros(nv, nv);
        grad[..s].copy_from_slice(mu);
        for b in 0..s - 1 {
            grad[s + b] = nu[b];
        }
        let (mut row, mut col) = (vec![0.0; s], vec![0.0; s]);
        for a in 0..s {
            for b in 0..s {
                let (_, z, dz) = kind.conjugate(sum_of(&x, a, b)).ok_or_else(|| Error::Singular("dual iterate left the domain".into()))?;
                let kab = k[a * s + b];
                row[a] += kab * z;
                col[b] += kab * z;
                grad[a] -= kab * z;
                hess[(a, a)] += kab * dz;
                if b + 1 < s {
                    grad[s + b] -= kab * z;
                    hess[(s + b, s + b)] += kab * dz;
                    hess[(a, s + b)] += kab * dz;
                    hess[(s + b, a)] += kab * dz;
                }
            }
        }
        err = (0..s).map(|i| (row[i] - mu[i]).abs().max((col[i] - nu[i]).abs())).fold(0.0, f64::max);
        if err < 1e-13 {
            break;
        }
        iterations += 1;
        let current = dual(&x).expect("iterate is in the domain");
        let slope_norm: f64 = grad.iter().map(|g| g * g).sum();
        let mut accepted = false;
        for _ in 0..60 {
            let m = &hess + DMatrix::<f64>::identity(nv, nv) * lambda;
            let Some(step) = m.lu().solve(&DVector::from_column_slice(&grad)) else {
                lambda = (lambda * 10.0).max(1e-12);
                continue;
            };
            let decrement: f64 = step.iter().zip(&grad).map(|(d, g)| d * g).sum();
            let mut t = 1.0;
            while t > 1e-12 {
                let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(xi, di)| xi + t * di).collect();
                if let Some(v) = dual(&trial) {
                    if v >= current + 1e-4 * t * decrement - 1e-15 * current.abs().max(1.0) {
                        x = trial;
                        accepted = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            if accepted {
                lambda = (lambda * 0.1).max(1e-14);
                break;
            }
            lambda *= 10.0;
            if slope_norm == 0.0 {
                break;
            }
        }
        if !accepted {
            break;
        }
    }
    let density: Vec<f64> = (0..s * s)
        .map(|ij| kind.conjugate(sum_of(&x, ij / s, ij % s)).map(|c| c.1).unwrap_or(f64::NAN))
        .collect();
    finish(p, kind, &density, mu, nu, iterations, err < 1e-12)
}

/// Max within-endpoint-class spread of Q/P.
pub fn verify_endpoint_measurability(q: &[f64], p: &DiscretePathMeasure) -> Result<f64> {
    if q.len() != p.len() {
        return arg("Q and P index different path sets");
    }
    let s = p.states;
    let mut lo = vec![f64::INFINITY; s * s];
    let mut hi = vec![f64::NEG_INFINITY; s * s];
    for (i, (qi, pi)) in q.iter().zip(&p.prob).enumerate() {
        if *qi < 0.0 || !qi.is_finite() {
            return arg("Q must be finite and nonnegative");
        }
        if *pi <= 0.0 {
            if *qi > 0.0 {
                return Err(Error::Precondition(format!("Q charges path {i} where P vanishes")));
            }
            continue;
        }
        let (a, b) = p.endpoints(i);
        let r = qi / pi;
        lo[a * s + b] = lo[a * s + b].min(r);
        hi[a * s + b] = hi[a * s + b].max(r);
    }
    Ok(lo.iter().zip(&hi).filter(|(l, _)| l.is_finite()).map(|(l, h)| h - l).fold(0.0, f64::max))
}

/// Adds `amount` to one path of Q and renormalizes.
pub fn perturb_path(q: &[f64], index: usize, amount: f64) -> Vec<f64> {
    let mut out = q.to_vec();
    out[index] += amount;
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= z);
    out
}

/// First path whose endpoint class has another member (needs N ≥ 2).
pub fn interior_path(p: &DiscretePathMeasure) -> Option<usize> {
    (p.steps >= 2 && p.states >= 1 && p.len() > 1).then(|| p.states.pow(p.steps as u32 - 1).min(p.len() - 1) / 2)
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct OracleResult {
    pub q: Vec<f64>,
    pub cost: f64,
    pub marginal_error: f64,
    pub newton_steps: usize,
}

/// Independent solve over path-indexed Q: barrier path following with
/// infeasible-start Newton steps on Σ P·c(Q/P) − t Σ log Q subject to the
/// endpoint-marginal equalities, starting from a random positive Q that is
/// not endpoint-measurable.
pub fn full_simplex_oracle(p: &DiscretePathMeasure, mu: &[f64], nu: &[f64], kind: CostKind, stream: RngStream) -> Result<OracleResult> {
    check_marginals(p, mu, nu)?;
    let n = p.len();
    let s = p.states;
    // Constraint rows: x₀ = a for all a, x_N = b for b < S − 1 (the last is implied).
    let m = 2 * s - 1;
    let rows: Vec<(usize, usize)> = (0..n).map(|i| p.endpoints(i)).collect();
    let rhs: Vec<f64> = mu.iter().chain(&nu[..s - 1]).copied().collect();
    let apply = |q: &[f64]| {
        let mut out = vec![0.0; m];
        for (i, (a, b)) in rows.iter().enumerate() {
            out[*a] += q[i];
            if *b + 1 < s {
                out[s + b] += q[i];
            }
        }
        out
    };
    let mut rng = stream.rng();
    let mut q: Vec<f64> = (0..n).map(|_| 0.5 + rng.random::<f64>()).collect();
    let z: f64 = q.iter().sum();
    q.iter_mut().for_each(|v| *v /= z);
    let mut w = vec![0.0; m];
    let mut steps = 0;
    let mut t = 1.0;
    while t >= 1e-13 {
        for _ in 0..200 {
            let grad: Vec<f64> = (0..n).map(|i| kind.derivative(q[i] / p.prob[i]) - t / q[i]).collect();
            let hdiag: Vec<f64> = (0..n).map(|i| kind.second(q[i] / p.prob[i]) / p.prob[i] + t / (q[i] * q[i])).collect();
            let primal: Vec<f64> = apply(&q).iter().zip(&rhs).map(|(x, y)| x - y).collect();
            let dual_res = |q: &[f64], w: &[f64]| -> f64 {
                let mut r = 0.0;
                for i in 0..n {
                    let (a, b) = rows[i];
                    let g = kind.derivative(q[i] / p.prob[i]) - t / q[i] + w[a] + if b + 1 < s { w[s + b] } else { 0.0 };
                    r += g * g;
                }
                let pr: f64 = apply(q).iter().zip(&rhs).map(|(x, y)| (x - y).powi(2)).sum();
                (r + pr).sqrt()
            };
            let norm = dual_res(&q, &w);
            if norm < 1e-13 {
                break;
            }
            // Schur complement (A H⁻¹ Aᵀ) w⁺ = −A H⁻¹ ∇F + (A q − b).
            let mut schur = DMatrix::<f64>::zeros(m, m);
            let mut r = DVector::<f64>::zeros(m);
            for i in 0..n {
                let (a, b) = rows[i];
                let hi = 1.0 / hdiag[i];
                let idx: Vec<usize> = if b + 1 < s { vec![a, s + b] } else { vec![a] };
                for &u in &idx {
                    r[u] -= hi * grad[i];
                    for &v in &idx {
                        schur[(u, v)] += hi;
                    }
                }
            }
            for u in 0..m {
                r[u] += primal[u];
            }
            let w_new = schur.lu().solve(&r).ok_or_else(|| Error::Singular("oracle Schur complement".into()))?;
            let dq: Vec<f64> = (0..n)
                .map(|i| {
                    let (a, b) = rows[i];
                    let aw = w_new[a] + if b + 1 < s { w_new[s + b] } else { 0.0 };
                    -(grad[i] + aw) / hdiag[i]
                })
                .collect();
            let dw: Vec<f64> = (0..m).map(|u| w_new[u] - w[u]).collect();
            let mut step = 1.0;
            while (0..n).any(|i| q[i] + step * dq[i] <= 0.0) {
                step *= 0.5;
            }
            loop {
                let qt: Vec<f64> = (0..n).map(|i| q[i] + step * dq[i]).collect();
                let wt: Vec<f64> = (0..m).map(|u| w[u] + step * dw[u]).collect();
                if dual_res(&qt, &wt) <= (1.0 - 0.01 * step) * norm || step < 1e-12 {
                    q = qt;
                    w = wt;
                    break;
                }
                step *= 0.5;
            }
            steps += 1;
        }
        t *= 0.1;
    }
    let cost = p.prob.iter().zip(&q).map(|(pp, qq)| pp * kind.value(qq / pp)).sum();
    Ok(OracleResult { marginal_error: marginal_error(p, &q, mu, nu), q, cost, newton_steps: steps })
}

/// Random strictly positive instance: kernel, initial law and target
/// marginals with entries bounded away from zero.
pub fn random_instance(states: usize, steps: usize, stream: RngStream) -> Result<(DiscretePathMeasure, Vec<f64>, Vec<f64>)> {
    let mut rng = stream.rng();
    let mut prob_vec = |n: usize| {
        let v: Vec<f64> = (0..n).map(|_| 0.1 + rng.random::<f64>()).collect();
        let z: f64 = v.iter().sum();
        v.into_iter().map(|x| x / z).collect::<Vec<f64>>()
    };
    let kernel: Vec<f64> = (0..states).flat_map(|_| prob_vec(states)).collect();
    let initial = prob_vec(states);
    let mu = prob_vec(states);
    let nu = prob_vec(states);
    Ok((build_reference(&KernelSpec::Homogeneous(kernel), &initial, states, steps)?, mu, nu))
}

/// Endpoint marginals of P.
pub fn endpoint_marginals(p: &DiscretePathMeasure) -> (Vec<f64>, Vec<f64>) {
    let s = p.states;
    let k = p.endpoint_matrix();
    ((0..s).map(|a| (0..s).map(|b| k[a * s + b]).sum()).collect(), (0..s).map(|b| (0..s).map(|a| k[a * s + b]).sum()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn reference_enumeration() {
        let p = build_reference(&KernelSpec::Homogeneous(vec![0.5; 4]), &[0.5, 0.5], 2, 1).unwrap();
        assert_eq!(p.prob, vec![0.25; 4]);
        let (p, _, _) = random_instance(3, 3, RngStream::new(1, 0)).unwrap();
        assert_eq!(p.len(), 81);
        assert_abs_diff_eq!(p.prob.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        let sticky = vec![0.98, 0.01, 0.01, 0.01, 0.98, 0.01, 0.01, 0.01, 0.98];
        let p = build_reference(&KernelSpec::Homogeneous(sticky), &[1.0 / 3.0; 3], 3, 3).unwrap();
        assert!(p.prob.iter().all(|v| *v > 0.0));
        let zero = vec![1.0, 0.0, 0.5, 0.5];
        assert!(matches!(build_reference(&KernelSpec::Homogeneous(zero), &[0.5, 0.5], 2, 2), Err(Error::Precondition(_))));
        assert_eq!(p.path(5), vec![0, 0, 1, 2]);
        assert_eq!(p.endpoints(5), (0, 2));
    }

    #[test]
    fn own_marginals_return_reference() {
        let (p, _, _) = random_instance(3, 2, RngStream::new(2, 0)).unwrap();
        let (mu, nu) = endpoint_marginals(&p);
        let e = project_entropic(&p, &mu, &nu, 1000).unwrap();
        assert_eq!(e.iterations, 0);
        assert!(e.q.iter().zip(&p.prob).all(|(a, b)| (a - b).abs() < 1e-15));
        let sq = project_convex(&p, &mu, &nu, CostKind::Square, 100).unwrap();
        assert!(sq.q.iter().zip(&p.prob).all(|(a, b)| (a - b).abs() < 1e-12));
        assert_eq!(verify_endpoint_measurability(&p.prob, &p).unwrap(), 0.0);
    }

    #[test]
    fn projections_match_oracle() {
        for seed in 0..4 {
            let (s, n) = (2 + seed % 2, 2 + (seed / 2) % 2);
            let (p, mu, nu) = random_instance(s, n, RngStream::new(10, seed as u64)).unwrap();
            for kind in [CostKind::Entropy, CostKind::Square, CostKind::Hellinger] {
                let r = project_convex(&p, &mu, &nu, kind, 200).unwrap();
                assert!(r.converged, "{kind:?} {r:?}");
                assert!(r.marginal_error < 1e-10);
                assert!(r.residual < 1e-8);
                let o = full_simplex_oracle(&p, &mu, &nu, kind, RngStream::new(11, seed as u64)).unwrap();
                assert!(o.marginal_error < 1e-10, "{o:?}");
                assert!((o.cost - r.cost).abs() < 1e-6, "{kind:?}: {} vs {}", o.cost, r.cost);
                // The oracle starts non-measurable and ends (nearly) measurable.
                assert!(verify_endpoint_measurability(&o.q, &p).unwrap() < 1e-4);
            }
        }
    }

    #[test]
    fn detector_fires() {
        let (p, mu, nu) = random_instance(3, 3, RngStream::new(3, 0)).unwrap();
        let r = project_entropic(&p, &mu, &nu, 10_000).unwrap();
        let i = interior_path(&p).unwrap();
        let q = perturb_path(&r.q, i, 1e-3);
        assert!(verify_endpoint_measurability(&q, &p).unwrap() >= 1e-4);
        let (p1, _, _) = random_instance(2, 1, RngStream::new(3, 0)).unwrap();
        assert!(interior_path(&p1).is_none());
    }

    #[test]
    fn infeasible_marginals() {
        let (p, mu, _) = random_instance(2, 2, RngStream::new(4, 0)).unwrap();
        assert!(matches!(project_entropic(&p, &mu, &[0.7, 0.7], 10), Err(Error::Infeasible(_))));
        assert!(matches!(project_convex(&p, &mu, &[-0.1, 1.1], CostKind::Square, 10), Err(Error::Infeasible(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn entropic_optimizer_is_reweighting_invariant(seed in 0u64..1000, a in proptest::collection::vec(0.2..5.0f64, 3), b in proptest::collection::vec(0.2..5.0f64, 3)) {
            let (p, mu, nu) = random_instance(3, 2, RngStream::new(seed, 1)).unwrap();
            let p2 = p.reweight_endpoints(&a, &b).unwrap();
            let r1 = project_entropic(&p, &mu, &nu, 10_000).unwrap();
            let r2 = project_entropic(&p2, &mu, &nu, 10_000).unwrap();
            for (x, y) in r1.q.iter().zip(&r2.q) {
                prop_assert!((x - y).abs() < 1e-10);
            }
            // KL(Q|P') = KL(Q|P) − Σμ log a − Σν log b + log Z.
            let z: f64 = (0..p.len()).map(|i| { let (x, y) = p.endpoints(i); p.prob[i] * a[x] * b[y] }).sum();
            let shift = -mu.iter().zip(&a).map(|(m, v)| m * v.ln()).sum::<f64>() - nu.iter().zip(&b).map(|(m, v)| m * v.ln()).sum::<f64>() + z.ln();
            prop_assert!((r2.cost - (r1.cost + shift)).abs() < 1e-9);
        }
    }
}
