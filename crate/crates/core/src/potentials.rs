//! Drift potentials U(t, z), the reciprocal potential
//! 𝒰 = ½|∇U|² − ½ΔU − ∂ₜU and its gradient (the reciprocal characteristic).
//!
//! A [`Potential`] provides U and whichever derivatives it knows in closed
//! form; [`PotentialModel`] fills in the rest by central finite differences.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;
use smallvec::SmallVec;

use crate::error::{arg, Error, Result};
use crate::linalg::sym_eigenvalues;

pub(crate) type Buf = SmallVec<[f64; 4]>;

/// Bridges of this potential coincide with those of an Ornstein–Uhlenbeck
/// process with rate `alpha` pulled towards `center`: ∇𝒰 = α²(z − center).
#[derive(Debug, Clone, PartialEq)]
pub struct OuEquivalent {
    pub alpha: f64,
    pub center: Vec<f64>,
}

/// A drift potential. Every derivative hook returns `false`/`None` when no
/// closed form is known; callers then fall back to finite differences.
pub trait Potential: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn time_homogeneous(&self) -> bool {
        true
    }
    fn value(&self, t: f64, z: &[f64]) -> f64;
    fn gradient(&self, _t: f64, _z: &[f64], _out: &mut [f64]) -> bool {
        false
    }
    fn laplacian(&self, _t: f64, _z: &[f64]) -> Option<f64> {
        None
    }
    fn time_derivative(&self, _t: f64, _z: &[f64]) -> Option<f64> {
        None
    }
    /// Row-major d × d.
    fn hessian(&self, _t: f64, _z: &[f64], _out: &mut [f64]) -> bool {
        false
    }
    /// ∇(ΔU).
    fn laplacian_gradient(&self, _t: f64, _z: &[f64], _out: &mut [f64]) -> bool {
        false
    }
    /// ∂ₜ∇U.
    fn time_gradient(&self, _t: f64, _z: &[f64], _out: &mut [f64]) -> bool {
        false
    }
    /// ∇𝒰 in closed form.
    fn reciprocal_gradient(&self, _t: f64, _z: &[f64], _out: &mut [f64]) -> bool {
        false
    }
    /// A proven global bound on |∇𝒰| (Euclidean norm), if one exists.
    fn reciprocal_gradient_bound(&self) -> Option<f64> {
        None
    }
    fn ou_equivalent(&self) -> Option<OuEquivalent> {
        None
    }
}

/// U ≡ 0.
#[derive(Debug, Clone)]
pub struct Zero {
    pub d: usize,
}

impl Potential for Zero {
    fn dim(&self) -> usize {
        self.d
    }
    fn value(&self, _t: f64, _z: &[f64]) -> f64 {
        0.0
    }
    fn gradient(&self, _t: f64, _z: &[f64], out: &mut [f64]) -> bool {
        out.fill(0.0);
        true
    }
    fn laplacian(&self, _t: f64, _z: &[f64]) -> Option<f64> {
        Some(0.0)
    }
    fn hessian(&self, _t: f64, _z: &[f64], out: &mut [f64]) -> bool {
        out.fill(0.0);
        true
    }
    fn laplacian_gradient(&self, _t: f64, _z: &[f64], out: &mut [f64]) -> bool {
        out.fill(0.0);
        true
    }
    fn reciprocal_gradient(&self, _t: f64, _z: &[f64], out: &mut [f64]) -> bool {
        out.fill(0.0);
        true
    }
    fn reciprocal_gradient_bound(&self) -> Option<f64> {
        Some(0.0)
    }
}

/// U(z) = (a/2)|z|² + β·z. `a < 0` gives mean repulsion.
#[derive(Debug, Clone)]
pub struct Quadratic {
    pub a: f64,
    pub beta: Vec<f64>,
}

impl Quadratic {
    pub fn centered(a: f64, d: usize) -> Self {
        Self { a, beta: vec![0.0; d] }
    }
}

impl Potential for Quadratic {
    fn dim(&self) -> usize {
        self.beta.len()
    }
    fn value(&self, _t: f64, z: &[f64]) -> f64 {
        z.iter().zip(&self.beta).map(|(x, b)| 0.5 * self.a * x * x + b * x).sum()
    }
    fn gradient(&self, _t: f64, z: &[f64], out: &mut [f64]) -> bool {
        for ((o, x), b) in out.iter_mut().zip(z).zip(&self.beta) {
            *o = self.a * x + b;
        }
        true
    }
    fn laplacian(&self, _t: f64, _z: &[f64]) -> Option<f64> {
        Some(self.a * self.dim() as f64)
    }
    fn hessian(&self, _t: f64, _z: &[f64], out: &mut [f64]) -> bool {
        let d = self.dim();
        out.fill(0.0);
        for i in 0..d {
            out[i * d + i] = self.a;
        }
        true
    }
    fn laplacian_gradient(&self, _t: f64, _z: &[f64], out: &mut [f64]) -> bool {
        out.fill(0.0);
        true
    }
    fn reciprocal_gradient(&self, _t: f64, z: &[f64], out: &mut [f64]) -> bool {
        for ((o, x), b) in out.iter_mut().zip(z).zip(&self.beta) {
            *o = self.a * (self.a * x + b);
        }
        true
    }
    fn reciprocal_gradient_bound(&self) -> Option<f64> {
        (self.a == 0.0).then_some(0.0)
    }
    fn ou_equivalent(&self) -> Option<OuEquivalent> {
        (self.a != 0.0).then(|| OuEquivalent {
            alpha: self.a.abs(),
            center: self.beta.iter().map(|b| -b / self.a).collect(),
        })
    }
}

/// U(z) = ε Σᵢ sin zᵢ.
#[derive(Debug, Clone)]
pub struct Sine {
    pub eps: f64,
    pub d: usize,
}

impl Sine {
    /// sup over ℝ of |ε cos z (½ − ε sin z)|.
    fn scalar_sup(&self) -> f64 {
        let e = self.eps.abs();
        if e == 0.0 {
            return 0.0;
        }
        // stationary points of (1 − s²)(½ − εs)² in s = sin z
        let disc = (0.25 + 8.0 * e * e).sqrt();
        [(0.5 - disc) / (4.0 * e), (0.5 + disc) / (4.0 * e), -1.0, 1.0]
            .into_iter()
            .filter(|s| s.abs() <= 1.0)
            .map(|s| e * (1.0 - s * s).sqrt() * (0.5 - e * s).abs())
            .fold(0.0, f64::max)
    }
}

impl Potential for Sine {
    fn dim(&self) -> usize {
        self.d
    }
    fn value(&self, _t: f64, z: &[f64]) -> f64 {
        self.eps * z.iter().map(|x| x.sin()).sum::<f64>()
    }
    fn gradient(&self, _t: f64, z: &[f64], out: &mut [f64]) -> bool {
        for (o, x) in out.iter_mut().zip(z) {
            *o = self.eps * x.cos();
        }
        true
    }
    fn laplacian(&self, _t: f64, z: &[f64]) -> Option<f64> {
        Some(-self.value(0.0, z))
    }
    fn hessian(&self, _t: f64, z: &[f64], out: &mut [f64]) -> bool {
        out.fill(0.0);
        for (i, x) in z.iter().enumerate() {
            out[i * self.d + i] = -self.eps * x.sin();
        }
        true
    }
    fn laplacian_gradient(&self, _t: f64, z: &[f64], out: &mut [f64]) -> bool {
        for (o, x) in out.iter_mut().zip(z) {
            *o = -self.eps * x.cos();
        }
        true
    }
    fn reciprocal_gradient(&self, _t: f64, z: &[f64], out: &mut [f64]) -> bool {
        let e = self.eps;
        for (o, x) in out.iter_mut().zip(z) {
            *o = e * x.cos() * (0.5 - e * x.sin());
        }
        true
    }
    fn reciprocal_gradient_bound(&self) -> Option<f64> {
        Some(self.scalar_sup() * (self.d as f64).sqrt())
    }
}

/// U(z) = Σᵢ p(zᵢ) for a polynomial p with coefficients `coeffs[k]` of xᵏ.
#[derive(Debug, Clone)]
pub struct SeparablePolynomial {
    pub coeffs: Vec<f64>,
    pub d: usize,
}

impl SeparablePolynomial {
    fn deriv(&self, order: usize, x: f64) -> f64 {
        let mut acc = 0.0;
        for k in (order..self.coeffs.len()).rev() {
            let falling: f64 = (0..order).map(|j| (k - j) as f64).product();
            acc = acc * x + self.coeffs[k] * falling;
        }
        // Horner over the shifted powers: acc = Σ c_k k!/(k−order)! x^{k−order}
        acc
    }

    fn degree(&self) -> usize {
        self.coeffs.iter().rposition(|c| *c != 0.0).unwrap_or(0)
    }
}

impl Potential for SeparablePolynomial {
    fn dim(&self) -> usize {
        self.d
    }
    fn value(&self, _t: f64, z: &[f64]) -> f64 {
        z.iter().map(|&x| self.deriv(0, x)).sum()
    }
    fn gradient(&self, _t: f64, z: &[f64], out: &mut [f64]) -> bool {
        for (o, &x) in out.iter_mut().zip(z) {
            *o = self.deriv(1, x);
        }
        true
    }
    fn laplacian(&self, _t: f64, z: &[f64]) -> Option<f64> {
        Some(z.iter().map(|&x| self.deriv(2, x)).sum())
    }
    fn hessian(&self, _t: f64, z: &[f64], out: &mut [f64]) -> bool {
        out.fill(0.0);
        for (i, &x) in z.iter().enumerate() {
            out[i * self.d + i] = self.deriv(2, x);
        }
        true
    }
    fn laplacian_gradient(&self, _t: f64, z: &[f64], out: &mut [f64]) -> bool {
        for (o, &x) in out.iter_mut().zip(z) {
            *o = self.deriv(3, x);
        }
        true
    }
    fn reciprocal_gradient(&self, _t: f64, z: &[f64], out: &mut [f64]) -> bool {
        for (o, &x) in out.iter_mut().zip(z) {
            *o = self.deriv(1, x) * self.deriv(2, x) - 0.5 * self.deriv(3, x);
        }
        true
    }
    fn reciprocal_gradient_bound(&self) -> Option<f64> {
        (self.degree() <= 1).then_some(0.0)
    }
    fn ou_equivalent(&self) -> Option<OuEquivalent> {
        if self.degree() != 2 {
            return None;
        }
        let a = 2.0 * self.coeffs[2];
        let b = self.coeffs.get(1).copied().unwrap_or(0.0);
        Some(OuEquivalent { alpha: a.abs(), center: vec![-b / a; self.d] })
    }
}

/// U(t, z) = −c·t, whose reciprocal potential is the constant c.
#[derive(Debug, Clone)]
pub struct TimeLinear {
    pub c: f64,
    pub d: usize,
}

impl Potential for TimeLinear {
    fn dim(&self) -> usize {
        self.d
    }
    fn time_homogeneous(&self) -> bool {
        false
    }
    fn value(&self, t: f64, _z: &[f64]) -> f64 {
        -self.c * t
    }
    fn gradient(&self, _t: f64, _z: &[f64], out: &mut [f64]) -> bool {
        out.fill(0.0);
        true
    }
    fn laplacian(&self, _t: f64, _z: &[f64]) -> Option<f64> {
        Some(0.0)
    }
    fn time_derivative(&self, _t: f64, _z: &[f64]) -> Option<f64> {
        Some(-self.c)
    }
    fn hessian(&self, _t: f64, _z: &[f64], out: &mut [f64]) -> bool {
        out.fill(0.0);
        true
    }
    fn laplacian_gradient(&self, _t: f64, _z: &[f64], out: &mut [f64]) -> bool {
        out.fill(0.0);
        true
    }
    fn time_gradient(&self, _t: f64, _z: &[f64], out: &mut [f64]) -> bool {
        out.fill(0.0);
        true
    }
    fn reciprocal_gradient(&self, _t: f64, _z: &[f64], out: &mut [f64]) -> bool {
        out.fill(0.0);
        true
    }
    fn reciprocal_gradient_bound(&self) -> Option<f64> {
        Some(0.0)
    }
}

/// `inner + c`.
#[derive(Debug, Clone)]
pub struct Offset<P> {
    pub inner: P,
    pub c: f64,
}

impl<P: Potential> Potential for Offset<P> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn time_homogeneous(&self) -> bool {
        self.inner.time_homogeneous()
    }
    fn value(&self, t: f64, z: &[f64]) -> f64 {
        self.inner.value(t, z) + self.c
    }
    fn gradient(&self, t: f64, z: &[f64], out: &mut [f64]) -> bool {
        self.inner.gradient(t, z, out)
    }
    fn laplacian(&self, t: f64, z: &[f64]) -> Option<f64> {
        self.inner.laplacian(t, z)
    }
    fn time_derivative(&self, t: f64, z: &[f64]) -> Option<f64> {
        self.inner.time_derivative(t, z)
    }
    fn hessian(&self, t: f64, z: &[f64], out: &mut [f64]) -> bool {
        self.inner.hessian(t, z, out)
    }
    fn laplacian_gradient(&self, t: f64, z: &[f64], out: &mut [f64]) -> bool {
        self.inner.laplacian_gradient(t, z, out)
    }
    fn time_gradient(&self, t: f64, z: &[f64], out: &mut [f64]) -> bool {
        self.inner.time_gradient(t, z, out)
    }
    fn reciprocal_gradient(&self, t: f64, z: &[f64], out: &mut [f64]) -> bool {
        self.inner.reciprocal_gradient(t, z, out)
    }
    fn reciprocal_gradient_bound(&self) -> Option<f64> {
        self.inner.reciprocal_gradient_bound()
    }
    fn ou_equivalent(&self) -> Option<OuEquivalent> {
        self.inner.ou_equivalent()
    }
}

/// A potential known only through its values.
pub struct FnPotential<F> {
    pub d: usize,
    pub homogeneous: bool,
    pub f: F,
}

impl<F> fmt::Debug for FnPotential<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnPotential").field("d", &self.d).finish()
    }
}

impl<F> Potential for FnPotential<F>
where
    F: Fn(f64, &[f64]) -> f64 + Send + Sync,
{
    fn dim(&self) -> usize {
        self.d
    }
    fn time_homogeneous(&self) -> bool {
        self.homogeneous
    }
    fn value(&self, t: f64, z: &[f64]) -> f64 {
        (self.f)(t, z)
    }
}

/// Where derivatives come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Derivatives {
    /// Closed forms where declared, finite differences otherwise.
    ClosedForm,
    /// Everything synthesized from U by central differences.
    FiniteDifference,
}

pub const DEFAULT_H_FD: f64 = 1e-4;

/// A potential together with its differentiation policy.
///
/// Step sizes scale with `1 + |zᵢ|`: first differences of U use `h_fd`,
/// second differences and differences of already synthesized quantities use
/// `10·h_fd`, and Hessians of 𝒰 use `100·h_fd`.
#[derive(Clone)]
pub struct PotentialModel {
    potential: Arc<dyn Potential>,
    mode: Derivatives,
    h_fd: f64,
}

impl fmt::Debug for PotentialModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PotentialModel")
            .field("potential", &self.potential)
            .field("mode", &self.mode)
            .field("h_fd", &self.h_fd)
            .finish()
    }
}

fn check(term: &'static str, t: f64, z: &[f64], v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Evaluation { term, t, z: z.to_vec() })
    }
}

impl PotentialModel {
    pub fn new(potential: impl Potential + 'static) -> Self {
        Self { potential: Arc::new(potential), mode: Derivatives::ClosedForm, h_fd: DEFAULT_H_FD }
    }

    pub fn from_arc(potential: Arc<dyn Potential>) -> Self {
        Self { potential, mode: Derivatives::ClosedForm, h_fd: DEFAULT_H_FD }
    }

    pub fn with_mode(mut self, mode: Derivatives) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_h_fd(mut self, h: f64) -> Self {
        self.h_fd = h;
        self
    }

    pub fn quadratic(alpha: f64, d: usize) -> Self {
        Self::new(Quadratic::centered(alpha, d))
    }

    pub fn zero(d: usize) -> Self {
        Self::new(Zero { d })
    }

    pub fn sine(eps: f64, d: usize) -> Self {
        Self::new(Sine { eps, d })
    }

    pub fn potential(&self) -> &dyn Potential {
        self.potential.as_ref()
    }

    pub fn mode(&self) -> Derivatives {
        self.mode
    }

    pub fn h_fd(&self) -> f64 {
        self.h_fd
    }

    pub fn dim(&self) -> usize {
        self.potential.dim()
    }

    pub fn time_homogeneous(&self) -> bool {
        self.potential.time_homogeneous()
    }

    pub fn ou_equivalent(&self) -> Option<OuEquivalent> {
        self.potential.ou_equivalent()
    }

    pub fn reciprocal_gradient_bound(&self) -> Option<f64> {
        self.potential.reciprocal_gradient_bound()
    }

    fn closed(&self) -> bool {
        self.mode == Derivatives::ClosedForm
    }

    fn step(&self, factor: f64, x: f64) -> f64 {
        factor * self.h_fd * (1.0 + x.abs())
    }

    pub fn u(&self, t: f64, z: &[f64]) -> f64 {
        self.potential.value(t, z)
    }

    pub fn grad_u(&self, t: f64, z: &[f64], out: &mut [f64]) {
        if self.closed() && self.potential.gradient(t, z, out) {
            return;
        }
        let mut w: Buf = z.iter().copied().collect();
        for i in 0..z.len() {
            let h = self.step(1.0, z[i]);
            w[i] = z[i] + h;
            let up = self.u(t, &w);
            w[i] = z[i] - h;
            let dn = self.u(t, &w);
            w[i] = z[i];
            out[i] = (up - dn) / (2.0 * h);
        }
    }

    pub fn laplacian_u(&self, t: f64, z: &[f64]) -> f64 {
        if self.closed() {
            if let Some(v) = self.potential.laplacian(t, z) {
                return v;
            }
        }
        let mut w: Buf = z.iter().copied().collect();
        let c = self.u(t, z);
        let mut acc = 0.0;
        for i in 0..z.len() {
            let h = self.step(10.0, z[i]);
            w[i] = z[i] + h;
            let up = self.u(t, &w);
            w[i] = z[i] - h;
            let dn = self.u(t, &w);
            w[i] = z[i];
            acc += (up - 2.0 * c + dn) / (h * h);
        }
        acc
    }

    pub fn dt_u(&self, t: f64, z: &[f64]) -> f64 {
        if self.time_homogeneous() {
            return 0.0;
        }
        if self.closed() {
            if let Some(v) = self.potential.time_derivative(t, z) {
                return v;
            }
        }
        let h = self.step(1.0, t);
        (self.u(t + h, z) - self.u(t - h, z)) / (2.0 * h)
    }

    pub fn hessian_u(&self, t: f64, z: &[f64], out: &mut [f64]) {
        if self.closed() && self.potential.hessian(t, z, out) {
            return;
        }
        let d = z.len();
        let mut w: Buf = z.iter().copied().collect();
        let c = self.u(t, z);
        for i in 0..d {
            let hi = self.step(10.0, z[i]);
            w[i] = z[i] + hi;
            let up = self.u(t, &w);
            w[i] = z[i] - hi;
            let dn = self.u(t, &w);
            w[i] = z[i];
            out[i * d + i] = (up - 2.0 * c + dn) / (hi * hi);
            for j in 0..i {
                let hj = self.step(10.0, z[j]);
                let mut corner = |si: f64, sj: f64| {
                    w[i] = z[i] + si * hi;
                    w[j] = z[j] + sj * hj;
                    let v = self.u(t, &w);
                    w[i] = z[i];
                    w[j] = z[j];
                    v
                };
                let v = (corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0) + corner(-1.0, -1.0)) / (4.0 * hi * hj);
                out[i * d + j] = v;
                out[j * d + i] = v;
            }
        }
    }

    /// ∇(ΔU).
    pub fn grad_laplacian_u(&self, t: f64, z: &[f64], out: &mut [f64]) {
        if self.closed() && self.potential.laplacian_gradient(t, z, out) {
            return;
        }
        let mut w: Buf = z.iter().copied().collect();
        for i in 0..z.len() {
            let h = self.step(10.0, z[i]);
            w[i] = z[i] + h;
            let up = self.laplacian_u(t, &w);
            w[i] = z[i] - h;
            let dn = self.laplacian_u(t, &w);
            w[i] = z[i];
            out[i] = (up - dn) / (2.0 * h);
        }
    }

    /// ∂ₜ∇U.
    pub fn dt_grad_u(&self, t: f64, z: &[f64], out: &mut [f64]) {
        if self.time_homogeneous() {
            out.fill(0.0);
            return;
        }
        if self.closed() && self.potential.time_gradient(t, z, out) {
            return;
        }
        let d = z.len();
        let h = self.step(10.0, t);
        let mut up: Buf = smallvec::smallvec![0.0; d];
        let mut dn: Buf = smallvec::smallvec![0.0; d];
        self.grad_u(t + h, z, &mut up);
        self.grad_u(t - h, z, &mut dn);
        for i in 0..d {
            out[i] = (up[i] - dn[i]) / (2.0 * h);
        }
    }

    /// 𝒰(t, z) = ½|∇U|² − ½ΔU − ∂ₜU.
    pub fn reciprocal_potential(&self, t: f64, z: &[f64]) -> Result<f64> {
        let mut g: Buf = smallvec::smallvec![0.0; z.len()];
        self.grad_u(t, z, &mut g);
        let mut sq = 0.0;
        for &gi in &g {
            check("grad_U", t, z, gi)?;
            sq += gi * gi;
        }
        let lap = check("laplacian_U", t, z, self.laplacian_u(t, z))?;
        let dt = check("dt_U", t, z, self.dt_u(t, z))?;
        check("reciprocal potential", t, z, 0.5 * sq - 0.5 * lap - dt)
    }

    /// ∇𝒰, closed form when declared, else central differences of 𝒰.
    pub fn reciprocal_characteristic(&self, t: f64, z: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; z.len()];
        self.reciprocal_characteristic_into(t, z, &mut out)?;
        Ok(out)
    }

    pub fn reciprocal_characteristic_into(&self, t: f64, z: &[f64], out: &mut [f64]) -> Result<()> {
        if self.closed() && self.potential.reciprocal_gradient(t, z, out) {
            for &v in out.iter() {
                check("reciprocal characteristic", t, z, v)?;
            }
            return Ok(());
        }
        let mut w: Buf = z.iter().copied().collect();
        for i in 0..z.len() {
            let h = self.step(1.0, z[i]);
            w[i] = z[i] + h;
            let up = self.reciprocal_potential(t, &w)?;
            w[i] = z[i] - h;
            let dn = self.reciprocal_potential(t, &w)?;
            w[i] = z[i];
            out[i] = (up - dn) / (2.0 * h);
        }
        Ok(())
    }

    /// ∇𝒰 assembled as −(𝓛 + ∂ₜ)∇U with 𝓛 = ½Δ − ∇U·∇:
    /// component i is ∇U·∇(∂ᵢU) − ½∂ᵢΔU − ∂ₜ∂ᵢU.
    pub fn reciprocal_characteristic_via_generator(&self, t: f64, z: &[f64]) -> Result<Vec<f64>> {
        let d = z.len();
        let mut g = vec![0.0; d];
        let mut hess = vec![0.0; d * d];
        let mut gl = vec![0.0; d];
        let mut tg = vec![0.0; d];
        self.grad_u(t, z, &mut g);
        self.hessian_u(t, z, &mut hess);
        self.grad_laplacian_u(t, z, &mut gl);
        self.dt_grad_u(t, z, &mut tg);
        for v in &g {
            check("grad_U", t, z, *v)?;
        }
        for v in &hess {
            check("hessian_U", t, z, *v)?;
        }
        for v in &gl {
            check("grad_laplacian_U", t, z, *v)?;
        }
        for v in &tg {
            check("dt_grad_U", t, z, *v)?;
        }
        (0..d)
            .map(|i| {
                let adv: f64 = (0..d).map(|j| g[j] * hess[j * d + i]).sum();
                check("reciprocal characteristic", t, z, adv - 0.5 * gl[i] - tg[i])
            })
            .collect()
    }

    /// Hessian of 𝒰 by central second differences.
    pub fn reciprocal_hessian(&self, t: f64, z: &[f64]) -> Result<Vec<f64>> {
        let d = z.len();
        let mut out = vec![0.0; d * d];
        let mut w: Vec<f64> = z.to_vec();
        let c = self.reciprocal_potential(t, z)?;
        for i in 0..d {
            let hi = self.step(100.0, z[i]);
            w[i] = z[i] + hi;
            let up = self.reciprocal_potential(t, &w)?;
            w[i] = z[i] - hi;
            let dn = self.reciprocal_potential(t, &w)?;
            w[i] = z[i];
            out[i * d + i] = (up - 2.0 * c + dn) / (hi * hi);
            for j in 0..i {
                let hj = self.step(100.0, z[j]);
                let mut acc = 0.0;
                for (si, sj, sg) in [(1.0, 1.0, 1.0), (1.0, -1.0, -1.0), (-1.0, 1.0, -1.0), (-1.0, -1.0, 1.0)] {
                    w[i] = z[i] + si * hi;
                    w[j] = z[j] + sj * hj;
                    acc += sg * self.reciprocal_potential(t, &w)?;
                    w[i] = z[i];
                    w[j] = z[j];
                }
                out[i * d + j] = acc / (4.0 * hi * hj);
                out[j * d + i] = out[i * d + j];
            }
        }
        Ok(out)
    }
}

/// Grid scan result for the convexity hypothesis ∇²𝒰 ⪰ α²·I.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ConvexityCertificate {
    pub region: Vec<(f64, f64)>,
    pub resolution: usize,
    pub alpha_hat: f64,
    pub min_eigenvalue: f64,
    pub min_eigenvalue_location: Vec<f64>,
}

fn box_grid(region: &[(f64, f64)], resolution: usize) -> Result<Vec<Vec<f64>>> {
    if resolution < 2 {
        return arg("grid resolution must be at least 2");
    }
    for &(lo, hi) in region {
        if !(lo.is_finite() && hi.is_finite()) || hi <= lo {
            return arg(format!("degenerate region axis [{lo}, {hi}]"));
        }
    }
    let d = region.len();
    let total = resolution.checked_pow(d as u32).filter(|&n| n <= 10_000_000);
    let Some(total) = total else {
        return arg("grid too large");
    };
    let mut pts = Vec::with_capacity(total);
    for mut k in 0..total {
        let mut p = Vec::with_capacity(d);
        for &(lo, hi) in region {
            let j = k % resolution;
            k /= resolution;
            p.push(lo + (hi - lo) * j as f64 / (resolution - 1) as f64);
        }
        pts.push(p);
    }
    Ok(pts)
}

/// Scans the smallest Hessian eigenvalue of 𝒰 over a box grid.
pub fn convexity_certificate(model: &PotentialModel, region: &[(f64, f64)], resolution: usize) -> Result<ConvexityCertificate> {
    if !model.time_homogeneous() {
        return Err(Error::Precondition("convexity certificate needs a time-homogeneous model".into()));
    }
    if region.len() != model.dim() {
        return arg(format!("region has {} axes, model dimension is {}", region.len(), model.dim()));
    }
    let d = model.dim();
    let mut best = f64::INFINITY;
    let mut at = vec![0.0; d];
    for p in box_grid(region, resolution)? {
        let h = model.reciprocal_hessian(0.0, &p)?;
        let lo = sym_eigenvalues(&h, d)[0];
        if lo < best {
            best = lo;
            at = p;
        }
    }
    Ok(ConvexityCertificate {
        region: region.to_vec(),
        resolution,
        alpha_hat: best.max(0.0).sqrt(),
        min_eigenvalue: best,
        min_eigenvalue_location: at,
    })
}

/// Minimum of 𝒰 over a box grid (the only check offered for the
/// lower-boundedness hypothesis).
pub fn reciprocal_lower_bound_scan(model: &PotentialModel, t: f64, region: &[(f64, f64)], resolution: usize) -> Result<(f64, Vec<f64>)> {
    if region.len() != model.dim() {
        return arg("region dimension mismatch");
    }
    let mut best = (f64::INFINITY, vec![]);
    for p in box_grid(region, resolution)? {
        let v = model.reciprocal_potential(t, &p)?;
        if v < best.0 {
            best = (v, p);
        }
    }
    Ok(best)
}

/// Max of |∇𝒰| over a box grid. Never a certificate of a global bound.
pub fn reciprocal_gradient_scan(model: &PotentialModel, t: f64, region: &[(f64, f64)], resolution: usize) -> Result<f64> {
    if region.len() != model.dim() {
        return arg("region dimension mismatch");
    }
    let mut best: f64 = 0.0;
    for p in box_grid(region, resolution)? {
        let g = model.reciprocal_characteristic(t, &p)?;
        best = best.max(g.iter().map(|x| x * x).sum::<f64>().sqrt());
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn sine_value_only(eps: f64) -> PotentialModel {
        PotentialModel::new(FnPotential { d: 1, homogeneous: true, f: move |_t: f64, z: &[f64]| eps * z[0].sin() })
    }

    #[test]
    fn quadratic_reciprocal_values() {
        let m = PotentialModel::quadratic(1.0, 1);
        assert_abs_diff_eq!(m.reciprocal_potential(0.0, &[2.0]).unwrap(), 1.5, epsilon = 1e-14);
        assert_abs_diff_eq!(m.reciprocal_characteristic(0.0, &[2.0]).unwrap()[0], 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(m.reciprocal_characteristic_via_generator(0.0, &[2.0]).unwrap()[0], 2.0, epsilon = 1e-14);
    }

    #[test]
    fn zero_potential_is_flat() {
        let m = PotentialModel::zero(2);
        assert_eq!(m.reciprocal_potential(0.3, &[1.0, -2.0]).unwrap(), 0.0);
        assert_eq!(m.reciprocal_characteristic(0.3, &[1.0, -2.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(m.reciprocal_characteristic_via_generator(0.3, &[1.0, -2.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn sine_values_against_symbolic_forms() {
        let eps = 0.37;
        let m = PotentialModel::sine(eps, 1);
        assert_abs_diff_eq!(m.reciprocal_potential(0.0, &[0.0]).unwrap(), 0.5 * eps * eps, epsilon = 1e-15);
        let pi2 = std::f64::consts::FRAC_PI_2;
        assert_abs_diff_eq!(m.reciprocal_characteristic(0.0, &[pi2]).unwrap()[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.reciprocal_characteristic_via_generator(0.0, &[pi2]).unwrap()[0], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn shifted_quadratic_characteristic() {
        let beta = 0.7;
        let m = PotentialModel::new(Quadratic { a: 1.0, beta: vec![beta] });
        assert_abs_diff_eq!(m.reciprocal_characteristic(0.0, &[0.0]).unwrap()[0], beta, epsilon = 1e-15);
        let ou = m.ou_equivalent().unwrap();
        assert_eq!(ou.alpha, 1.0);
        assert_eq!(ou.center, vec![-beta]);
    }

    #[test]
    fn time_linear_gives_constant_reciprocal_potential() {
        let m = PotentialModel::new(TimeLinear { c: 0.8, d: 1 });
        assert_abs_diff_eq!(m.reciprocal_potential(0.4, &[3.0]).unwrap(), 0.8, epsilon = 1e-15);
        let fd = m.clone().with_mode(Derivatives::FiniteDifference);
        assert_abs_diff_eq!(fd.reciprocal_potential(0.4, &[3.0]).unwrap(), 0.8, epsilon = 1e-9);
    }

    #[test]
    fn non_finite_term_is_named() {
        let m = PotentialModel::new(FnPotential { d: 1, homogeneous: true, f: |_t: f64, z: &[f64]| if z[0] > 0.5 { f64::NAN } else { 0.0 } });
        match m.reciprocal_potential(0.0, &[1.0]) {
            Err(Error::Evaluation { term, .. }) => assert_eq!(term, "grad_U"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn polynomial_matches_quadratic_closed_forms() {
        // p(x) = 0.3 + 0.2x + 0.5x² is U = z²/2 + 0.2z + 0.3
        let p = PotentialModel::new(SeparablePolynomial { coeffs: vec![0.3, 0.2, 0.5], d: 1 });
        let q = PotentialModel::new(Quadratic { a: 1.0, beta: vec![0.2] });
        for z in [-2.0, 0.0, 1.3] {
            assert_abs_diff_eq!(p.reciprocal_potential(0.0, &[z]).unwrap(), q.reciprocal_potential(0.0, &[z]).unwrap(), epsilon = 1e-13);
            assert_abs_diff_eq!(p.reciprocal_characteristic(0.0, &[z]).unwrap()[0], q.reciprocal_characteristic(0.0, &[z]).unwrap()[0], epsilon = 1e-13);
        }
        assert_eq!(p.ou_equivalent(), q.ou_equivalent());
    }

    #[test]
    fn polynomial_derivatives() {
        let p = SeparablePolynomial { coeffs: vec![1.0, -2.0, 0.0, 3.0, 0.5], d: 1 };
        let x = 1.7f64;
        assert_abs_diff_eq!(p.deriv(0, x), 1.0 - 2.0 * x + 3.0 * x.powi(3) + 0.5 * x.powi(4), epsilon = 1e-12);
        assert_abs_diff_eq!(p.deriv(1, x), -2.0 + 9.0 * x * x + 2.0 * x.powi(3), epsilon = 1e-12);
        assert_abs_diff_eq!(p.deriv(2, x), 18.0 * x + 6.0 * x * x, epsilon = 1e-12);
        assert_abs_diff_eq!(p.deriv(3, x), 18.0 + 12.0 * x, epsilon = 1e-12);
        assert_abs_diff_eq!(p.deriv(4, x), 12.0, epsilon = 1e-12);
        assert_eq!(p.deriv(5, x), 0.0);
    }

    #[test]
    fn finite_difference_routes_agree() {
        let closed = PotentialModel::sine(0.5, 2);
        let fd = closed.clone().with_mode(Derivatives::FiniteDifference);
        for z in [[0.3, -1.1], [2.0, 0.7], [-3.0, 4.0]] {
            let a = closed.reciprocal_characteristic(0.0, &z).unwrap();
            let b = fd.reciprocal_characteristic(0.0, &z).unwrap();
            let c = fd.reciprocal_characteristic_via_generator(0.0, &z).unwrap();
            for i in 0..2 {
                assert!((a[i] - b[i]).abs() < 1e-5, "{a:?} {b:?}");
                assert!((a[i] - c[i]).abs() < 1e-5, "{a:?} {c:?}");
            }
        }
    }

    #[test]
    fn finite_difference_error_is_second_order() {
        // the quadratic is differenced exactly, so the sine model carries the rate
        let exact = PotentialModel::sine(0.5, 1);
        let err = |h: f64| {
            let fd = sine_value_only(0.5).with_h_fd(h);
            [0.4, 1.3, -2.2]
                .iter()
                .map(|&z| (fd.reciprocal_characteristic(0.0, &[z]).unwrap()[0] - exact.reciprocal_characteristic(0.0, &[z]).unwrap()[0]).abs())
                .fold(0.0, f64::max)
        };
        let ratio = err(1e-2) / err(5e-3);
        assert!((ratio - 4.0).abs() < 0.3, "ratio {ratio}");
    }

    #[test]
    fn quadratic_finite_difference_is_accurate() {
        let fd = PotentialModel::quadratic(1.3, 1).with_mode(Derivatives::FiniteDifference);
        for z in [-3.0, 0.5, 4.0] {
            assert_abs_diff_eq!(fd.reciprocal_characteristic(0.0, &[z]).unwrap()[0], 1.69 * z, epsilon = 1e-5);
        }
    }

    #[test]
    fn certificates() {
        let c = convexity_certificate(&PotentialModel::quadratic(1.0, 1), &[(-5.0, 5.0)], 101).unwrap();
        assert!((c.alpha_hat - 1.0).abs() < 1e-4, "{c:?}");
        let c = convexity_certificate(&PotentialModel::zero(1), &[(-5.0, 5.0)], 101).unwrap();
        assert_eq!(c.alpha_hat, 0.0);
        let c = convexity_certificate(&PotentialModel::sine(0.5, 1), &[(-5.0, 5.0)], 101).unwrap();
        assert_eq!(c.alpha_hat, 0.0);
        assert!(c.min_eigenvalue < 0.0);
        assert!(convexity_certificate(&PotentialModel::quadratic(1.0, 1), &[(1.0, 1.0)], 11).is_err());
        let c = convexity_certificate(&PotentialModel::quadratic(0.7, 2), &[(-2.0, 2.0), (-1.0, 3.0)], 9).unwrap();
        assert!((c.alpha_hat - 0.7).abs() < 1e-4);
        assert!(convexity_certificate(&PotentialModel::new(TimeLinear { c: 1.0, d: 1 }), &[(-1.0, 1.0)], 5).is_err());
    }

    #[test]
    fn sine_gradient_bound_is_the_supremum() {
        for eps in [0.05, 0.2, 0.5, 1.0, 3.0] {
            let s = Sine { eps, d: 1 };
            let m = PotentialModel::sine(eps, 1);
            let scan = reciprocal_gradient_scan(&m, 0.0, &[(-std::f64::consts::PI, std::f64::consts::PI)], 200_001).unwrap();
            let b = s.reciprocal_gradient_bound().unwrap();
            assert!(b >= scan - 1e-12 && b - scan < 1e-8, "eps {eps}: {b} vs {scan}");
        }
        assert!((Sine { eps: 0.2, d: 1 }.scalar_sup() - 0.10687).abs() < 1e-4);
    }

    proptest! {
        #[test]
        fn constant_offset_keeps_characteristic(c in -50.0f64..50.0, z in -4.0f64..4.0, eps in 0.05f64..1.0) {
            let base = PotentialModel::sine(eps, 1);
            let shifted = PotentialModel::new(Offset { inner: Sine { eps, d: 1 }, c });
            prop_assert_eq!(base.reciprocal_characteristic(0.0, &[z]).unwrap(), shifted.reciprocal_characteristic(0.0, &[z]).unwrap());
            prop_assert_eq!(base.reciprocal_potential(0.0, &[z]).unwrap(), shifted.reciprocal_potential(0.0, &[z]).unwrap());
            let fd_base = base.clone().with_mode(Derivatives::FiniteDifference);
            let fd_shift = shifted.clone().with_mode(Derivatives::FiniteDifference);
            let a = fd_base.reciprocal_characteristic(0.0, &[z]).unwrap()[0];
            let b = fd_shift.reciprocal_characteristic(0.0, &[z]).unwrap()[0];
            prop_assert!((a - b).abs() < 1e-4 * (1.0 + c.abs()));
        }

        #[test]
        fn cross_derivation_identity(z in -6.0f64..6.0, w in -6.0f64..6.0, a in -2.0f64..2.0, b in -1.0f64..1.0) {
            let models = [
                PotentialModel::new(Quadratic { a, beta: vec![b, -b] }),
                PotentialModel::sine(a.abs() + 0.01, 2),
                PotentialModel::new(SeparablePolynomial { coeffs: vec![0.0, b, a, 0.1, -0.05], d: 2 }),
            ];
            for m in &models {
                let x = m.reciprocal_characteristic(0.0, &[z, w]).unwrap();
                let y = m.reciprocal_characteristic_via_generator(0.0, &[z, w]).unwrap();
                for i in 0..2 {
                    prop_assert!((x[i] - y[i]).abs() <= 1e-9 * (1.0 + x[i].abs()));
                }
            }
        }
    }
}
