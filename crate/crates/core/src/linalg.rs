//! Small dense helpers: symmetric eigenvalues and tridiagonal solves.

/// Eigenvalues of a symmetric `d × d` row-major matrix, ascending.
/// Closed forms up to `d = 3`, cyclic Jacobi beyond.
pub fn sym_eigenvalues(a: &[f64], d: usize) -> Vec<f64> {
    assert_eq!(a.len(), d * d);
    let mut ev = match d {
        0 => vec![],
        1 => vec![a[0]],
        2 => {
            let (p, q, r) = (a[0], 0.5 * (a[1] + a[2]), a[3]);
            let m = 0.5 * (p + r);
            let h = (0.25 * (p - r) * (p - r) + q * q).sqrt();
            vec![m - h, m + h]
        }
        3 => sym3(a),
        _ => jacobi(a, d),
    };
    ev.sort_by(f64::total_cmp);
    ev
}

fn sym3(a: &[f64]) -> Vec<f64> {
    let s = |i: usize, j: usize| 0.5 * (a[3 * i + j] + a[3 * j + i]);
    let p1 = s(0, 1).powi(2) + s(0, 2).powi(2) + s(1, 2).powi(2);
    if p1 == 0.0 {
        return vec![s(0, 0), s(1, 1), s(2, 2)];
    }
    let q = (s(0, 0) + s(1, 1) + s(2, 2)) / 3.0;
    let p2 = (s(0, 0) - q).powi(2) + (s(1, 1) - q).powi(2) + (s(2, 2) - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let b = |i: usize, j: usize| (s(i, j) - if i == j { q } else { 0.0 }) / p;
    let det = b(0, 0) * (b(1, 1) * b(2, 2) - b(1, 2) * b(2, 1)) - b(0, 1) * (b(1, 0) * b(2, 2) - b(1, 2) * b(2, 0))
        + b(0, 2) * (b(1, 0) * b(2, 1) - b(1, 1) * b(2, 0));
    let r = (0.5 * det).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let e1 = q + 2.0 * p * phi.cos();
    let e3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
    let e2 = 3.0 * q - e1 - e3;
    vec![e1, e2, e3]
}

fn jacobi(a: &[f64], d: usize) -> Vec<f64> {
    let mut m: Vec<f64> = (0..d * d).map(|k| 0.5 * (a[k] + a[(k % d) * d + k / d])).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..d).flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| m[i * d + j].powi(2)).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = m[p * d + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q * d + q] - m[p * d + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let mkp = m[k * d + p];
                    let mkq = m[k * d + q];
                    m[k * d + p] = c * mkp - s * mkq;
                    m[k * d + q] = s * mkp + c * mkq;
                }
                for k in 0..d {
                    let mpk = m[p * d + k];
                    let mqk = m[q * d + k];
                    m[p * d + k] = c * mpk - s * mqk;
                    m[q * d + k] = s * mpk + c * mqk;
                }
            }
        }
    }
    (0..d).map(|i| m[i * d + i]).collect()
}

/// Solves a tridiagonal system (Thomas algorithm). `lower[i]` couples row
/// `i+1` to column `i`, `upper[i]` couples row `i` to column `i+1`.
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Option<Vec<f64>> {
    let n = diag.len();
    if n == 0 || lower.len() + 1 != n || upper.len() + 1 != n || rhs.len() != n {
        return None;
    }
    let mut c = vec![0.0; n];
    let mut x = vec![0.0; n];
    let mut piv = diag[0];
    if piv == 0.0 {
        return None;
    }
    x[0] = rhs[0] / piv;
    for i in 1..n {
        c[i - 1] = upper[i - 1] / piv;
        piv = diag[i] - lower[i - 1] * c[i - 1];
        if piv == 0.0 || !piv.is_finite() {
            return None;
        }
        x[i] = (rhs[i] - lower[i - 1] * x[i - 1]) / piv;
    }
    for i in (0..n - 1).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    Some(x)
}
