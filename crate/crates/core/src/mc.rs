//! Deterministic parallel Monte Carlo.
//!
//! Every task gets its own [`RngStream`] keyed by `(seed, index)`; tasks are
//! grouped into fixed-size chunks, each chunk is folded sequentially and the
//! chunk results are merged in index order. The worker count therefore only
//! changes wall-clock time, never a single bit of output.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{arg, Error, Result};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

const CHUNK: u64 = 1024;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based random stream: a ChaCha8 key derived from `seed`, with the
/// 64-bit ChaCha stream id set to `index`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub index: u64,
}

impl RngStream {
    pub fn new(seed: u64, index: u64) -> Self {
        Self { seed, index }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(self.index);
        r
    }

    /// Independent stream family nested under this one.
    pub fn child(&self, k: u64) -> RngStream {
        let key = splitmix64(self.seed ^ splitmix64(self.index.wrapping_add(0x5851_F42D_4C95_7F2D)));
        RngStream { seed: key, index: k }
    }
}

/// Running mean/variance with Chan's parallel merge.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SampleStats {
    n: u64,
    mean: f64,
    m2: f64,
}

/// Serializable snapshot of [`SampleStats`].
#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct StatSummary {
    pub n: u64,
    pub mean: f64,
    pub variance: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl SampleStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_slice(xs: &[f64]) -> Self {
        let mut s = Self::new();
        for &x in xs {
            s.push(x);
        }
        s
    }

    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&self, other: &SampleStats) -> SampleStats {
        if self.n == 0 {
            return *other;
        }
        if other.n == 0 {
            return *self;
        }
        let n = self.n + other.n;
        let (na, nb) = (self.n as f64, other.n as f64);
        let d = other.mean - self.mean;
        let mean = self.mean + d * nb / n as f64;
        let m2 = self.m2 + other.m2 + d * d * na * nb / n as f64;
        SampleStats { n, mean, m2 }
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; zero below two samples.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64).max(0.0)
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.n == 0 {
            return f64::INFINITY;
        }
        (self.variance() / self.n as f64).sqrt()
    }

    pub fn ci95(&self) -> (f64, f64) {
        let h = Z95 * self.std_error();
        (self.mean - h, self.mean + h)
    }

    pub fn summary(&self) -> StatSummary {
        let (ci_low, ci_high) = self.ci95();
        StatSummary {
            n: self.n,
            mean: self.mean,
            variance: self.variance(),
            std_error: self.std_error(),
            ci_low,
            ci_high,
        }
    }
}

/// Owner of the worker pool.
pub struct Engine {
    pool: rayon::ThreadPool,
    workers: usize,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine").field("workers", &self.workers).finish()
    }
}

impl Engine {
    pub fn new(workers: usize) -> Result<Self> {
        if workers == 0 {
            return arg("workers must be positive");
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Argument(format!("thread pool: {e}")))?;
        Ok(Self { pool, workers })
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    /// Ordered parallel map over `0..n`.
    pub fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        self.pool.install(|| (0..n).into_par_iter().map(&f).collect())
    }

    /// Ordered parallel map; collects every failing index.
    pub fn try_map<T, F>(&self, n: usize, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize) -> Result<T> + Sync + Send,
    {
        let raw = self.map(n, f);
        let mut out = Vec::with_capacity(n);
        let mut failed = Vec::new();
        let mut first = None;
        for (i, r) in raw.into_iter().enumerate() {
            match r {
                Ok(v) => out.push(v),
                Err(e) => {
                    failed.push(i as u64);
                    if first.is_none() {
                        first = Some(e.to_string());
                    }
                }
            }
        }
        if failed.is_empty() {
            Ok(out)
        } else {
            Err(Error::Tasks { failed, first: first.unwrap_or_default() })
        }
    }

    /// Runs `task(RngStream::new(seed, i))` for `i in 0..n` and aggregates a
    /// vector of `dim` statistics.
    pub fn run_batches_vec<F>(&self, n: u64, seed: u64, dim: usize, task: F) -> Result<Vec<SampleStats>>
    where
        F: Fn(RngStream) -> Result<Vec<f64>> + Sync + Send,
    {
        let chunks = n.div_ceil(CHUNK) as usize;
        let parts = self.map(chunks, |c| {
            let lo = c as u64 * CHUNK;
            let hi = (lo + CHUNK).min(n);
            let mut stats = vec![SampleStats::new(); dim];
            let mut failed = Vec::new();
            let mut first = None;
            for i in lo..hi {
                match task(RngStream::new(seed, i)) {
                    Ok(v) if v.len() == dim => {
                        for (s, x) in stats.iter_mut().zip(v) {
                            s.push(x);
                        }
                    }
                    Ok(v) => {
                        failed.push(i);
                        first.get_or_insert_with(|| format!("task returned {} values, expected {dim}", v.len()));
                    }
                    Err(e) => {
                        failed.push(i);
                        first.get_or_insert_with(|| e.to_string());
                    }
                }
            }
            (stats, failed, first)
        });
        let mut total = vec![SampleStats::new(); dim];
        let mut failed = Vec::new();
        let mut first = None;
        for (s, f, e) in parts {
            for (t, x) in total.iter_mut().zip(&s) {
                *t = t.merge(x);
            }
            failed.extend(f);
            if first.is_none() {
                first = e;
            }
        }
        if failed.is_empty() {
            Ok(total)
        } else {
            Err(Error::Tasks { failed, first: first.unwrap_or_default() })
        }
    }

    /// Scalar version of [`Engine::run_batches_vec`].
    pub fn run_batches<F>(&self, n: u64, seed: u64, task: F) -> Result<SampleStats>
    where
        F: Fn(RngStream) -> Result<f64> + Sync + Send,
    {
        let v = self.run_batches_vec(n, seed, 1, |s| task(s).map(|x| vec![x]))?;
        Ok(v[0])
    }

    /// Collects raw per-task outputs in index order.
    pub fn collect<T, F>(&self, n: u64, seed: u64, task: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(RngStream) -> Result<T> + Sync + Send,
    {
        self.try_map(n as usize, |i| task(RngStream::new(seed, i as u64)))
    }
}

/// Sorts a copy, rejecting NaN.
pub fn sorted(xs: &[f64]) -> Result<Vec<f64>> {
    if xs.iter().any(|x| x.is_nan()) {
        return arg("NaN in sample");
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Exact empirical W_p in 1D. Equal sizes use the sorted pairing; unequal
/// sizes integrate |F⁻¹ − G⁻¹|^p over the merged quantile breakpoints.
pub fn wasserstein_1d(a: &[f64], b: &[f64], p: f64) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return arg("wasserstein_1d needs non-empty samples");
    }
    if !(p >= 1.0) || !p.is_finite() {
        return arg(format!("p must be finite and >= 1, got {p}"));
    }
    let sa = sorted(a)?;
    let sb = sorted(b)?;
    Ok(wasserstein_sorted(&sa, &sb, p))
}

/// As [`wasserstein_1d`] for inputs already sorted ascending.
pub fn wasserstein_sorted(a: &[f64], b: &[f64], p: f64) -> f64 {
    let cost = if a.len() == b.len() {
        a.iter().zip(b).map(|(x, y)| (x - y).abs().powf(p)).sum::<f64>() / a.len() as f64
    } else {
        let wa = vec![1.0 / a.len() as f64; a.len()];
        let wb = vec![1.0 / b.len() as f64; b.len()];
        weighted_cost(a, &wa, b, &wb, p)
    };
    cost.powf(1.0 / p)
}

/// ∫₀¹ |F⁻¹(u) − G⁻¹(u)|^p du for weighted sorted atoms.
fn weighted_cost(a: &[f64], wa: &[f64], b: &[f64], wb: &[f64], p: f64) -> f64 {
    let (mut i, mut j) = (0usize, 0usize);
    let (mut ra, mut rb) = (wa.first().copied().unwrap_or(0.0), wb.first().copied().unwrap_or(0.0));
    let mut total = 0.0;
    while i < a.len() && j < b.len() {
        if ra <= 0.0 {
            i += 1;
            if i < a.len() {
                ra = wa[i];
            }
            continue;
        }
        if rb <= 0.0 {
            j += 1;
            if j < b.len() {
                rb = wb[j];
            }
            continue;
        }
        let m = ra.min(rb);
        total += m * (a[i] - b[j]).abs().powf(p);
        ra -= m;
        rb -= m;
        if ra <= 1e-15 {
            ra = 0.0;
        }
        if rb <= 1e-15 {
            rb = 0.0;
        }
    }
    total
}

/// Bootstrap summary for a resampled statistic.
#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct Bootstrap {
    pub estimate: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub resamples: usize,
}

fn resample_weights(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    use rand::Rng;
    let mut w = vec![0.0; n];
    let inc = 1.0 / n as f64;
    for _ in 0..n {
        w[rng.random_range(0..n)] += inc;
    }
    w
}

/// Nonparametric bootstrap of W_p between two sorted samples. Either side
/// may be held fixed (for example a deterministic quantile sample of a
/// reference law). Resamples are represented by multiplicity weights on the
/// sorted atoms, so each replicate costs O(n + m).
pub fn bootstrap_wasserstein(
    a: &[f64],
    b: &[f64],
    p: f64,
    resample_a: bool,
    resample_b: bool,
    resamples: usize,
    stream: RngStream,
) -> Result<Bootstrap> {
    if a.is_empty() || b.is_empty() || resamples < 2 {
        return arg("bootstrap needs non-empty samples and at least two resamples");
    }
    let estimate = wasserstein_sorted(a, b, p);
    let mut rng = stream.rng();
    let ua = vec![1.0 / a.len() as f64; a.len()];
    let ub = vec![1.0 / b.len() as f64; b.len()];
    let mut reps = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let wa = if resample_a { resample_weights(a.len(), &mut rng) } else { ua.clone() };
        let wb = if resample_b { resample_weights(b.len(), &mut rng) } else { ub.clone() };
        reps.push(weighted_cost(a, &wa, b, &wb, p).powf(1.0 / p));
    }
    let stats = SampleStats::from_slice(&reps);
    reps.sort_by(f64::total_cmp);
    let q = |u: f64| reps[((u * resamples as f64).floor() as usize).min(resamples - 1)];
    Ok(Bootstrap {
        estimate,
        std_error: stats.variance().sqrt(),
        ci_low: q(0.025),
        ci_high: q(0.975),
        resamples,
    })
}

/// Wilson score interval for `k` successes in `n` trials.
pub fn wilson_interval(k: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let ph = k as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let centre = (ph + z2 / (2.0 * nf)) / denom;
    let half = z * (ph * (1.0 - ph) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Tail frequency with a Wilson 95% interval.
#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct TailEstimate {
    pub probability: f64,
    pub count: u64,
    pub n: u64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Fraction of samples `>= r`.
pub fn empirical_tail(samples: &[f64], r: f64) -> Result<TailEstimate> {
    if samples.is_empty() {
        return arg("empirical_tail needs at least one sample");
    }
    let n = samples.len() as u64;
    let count = samples.iter().filter(|&&x| x >= r).count() as u64;
    let (ci_low, ci_high) = wilson_interval(count, n, Z95);
    Ok(TailEstimate { probability: count as f64 / n as f64, count, n, ci_low, ci_high })
}

/// Two-sample Kolmogorov–Smirnov result.
#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct KsTest {
    pub statistic: f64,
    pub p_value: f64,
}

/// Two-sample KS test with the asymptotic Kolmogorov p-value
/// (Stephens' small-sample correction of the scale).
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsTest> {
    if a.is_empty() || b.is_empty() {
        return arg("ks_two_sample needs non-empty samples");
    }
    let sa = sorted(a)?;
    let sb = sorted(b)?;
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < sa.len() && j < sb.len() {
        let x = sa[i].min(sb[j]);
        while i < sa.len() && sa[i] <= x {
            i += 1;
        }
        while j < sb.len() && sb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let en = (na * nb / (na + nb)).sqrt();
    let lambda = (en + 0.12 + 0.11 / en) * d;
    Ok(KsTest { statistic: d, p_value: kolmogorov_q(lambda) })
}

fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn streams_are_reproducible_and_distinct() {
        use rand::RngCore;
        let a = RngStream::new(7, 3).rng().next_u64();
        let b = RngStream::new(7, 3).rng().next_u64();
        let c = RngStream::new(7, 4).rng().next_u64();
        let d = RngStream::new(7, 3).child(0).rng().next_u64();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn constant_task_has_zero_variance() {
        let e = Engine::new(2).unwrap();
        let s = e.run_batches(5000, 1, |_| Ok(3.5)).unwrap();
        assert_eq!(s.n(), 5000);
        assert_eq!(s.mean(), 3.5);
        assert_eq!(s.variance(), 0.0);
    }

    #[test]
    fn worker_count_does_not_change_bits() {
        let task = |s: RngStream| -> Result<f64> {
            let x: f64 = StandardNormal.sample(&mut s.rng());
            Ok(x)
        };
        let m: Vec<u64> = [1, 4, 16]
            .iter()
            .map(|&w| Engine::new(w).unwrap().run_batches(10_000, 42, task).unwrap().mean().to_bits())
            .collect();
        assert!(m.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn standard_normal_mean() {
        let e = Engine::new(2).unwrap();
        let s = e
            .run_batches(1_000_000, 11, |s| {
                let x: f64 = StandardNormal.sample(&mut s.rng());
                Ok(x)
            })
            .unwrap();
        assert!(s.mean().abs() < 4.0 * s.std_error(), "{:?}", s.summary());
        assert!((s.variance() - 1.0).abs() < 0.01);
    }

    #[test]
    fn task_failures_are_collected() {
        let e = Engine::new(2).unwrap();
        let r = e.run_batches(3000, 0, |s| if s.index % 1000 == 7 { arg("boom") } else { Ok(1.0) });
        match r {
            Err(Error::Tasks { failed, .. }) => assert_eq!(failed, vec![7, 1007, 2007]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn wasserstein_basics() {
        assert_eq!(wasserstein_1d(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0], 1.0).unwrap(), 0.0);
        assert_eq!(wasserstein_1d(&[0.5], &[2.0], 2.0).unwrap(), 1.5);
        assert!(wasserstein_1d(&[], &[1.0], 1.0).is_err());
        // unequal sizes: {0,1} vs {0}: quantile functions differ on half the mass by 1
        let w = wasserstein_1d(&[0.0, 1.0], &[0.0], 1.0).unwrap();
        assert!((w - 0.5).abs() < 1e-15);
        // {0,1,2} vs {0,2}: pieces of mass 1/3,1/6,1/6,1/3 with gaps 0,1,1,0
        let w = wasserstein_1d(&[0.0, 1.0, 2.0], &[0.0, 2.0], 1.0).unwrap();
        assert!((w - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn wasserstein_translated_gaussians() {
        let mut rng = RngStream::new(5, 0).rng();
        let n = 100_000;
        let delta = 0.3;
        let a: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let b: Vec<f64> = (0..n).map(|_| { let x: f64 = StandardNormal.sample(&mut rng); delta + x }).collect();
        let sa = sorted(&a).unwrap();
        let sb = sorted(&b).unwrap();
        let bs = bootstrap_wasserstein(&sa, &sb, 1.0, true, true, 200, RngStream::new(5, 1)).unwrap();
        assert!(bs.ci_low - 3.0 * bs.std_error < delta && delta < bs.ci_high + 3.0 * bs.std_error, "{bs:?}");
        assert!((bs.estimate - delta).abs() < 0.03);
    }

    #[test]
    fn tails_and_wilson() {
        let s = [0.0, 1.0, 2.0];
        assert_eq!(empirical_tail(&s, -1.0).unwrap().probability, 1.0);
        let t = empirical_tail(&s, 5.0).unwrap();
        assert_eq!(t.probability, 0.0);
        assert!(t.ci_high > 0.0);
        let mut rng = RngStream::new(9, 0).rng();
        let xs: Vec<f64> = (0..100_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let t = empirical_tail(&xs, 1.6449).unwrap();
        assert!(t.ci_low <= 0.05 && 0.05 <= t.ci_high, "{t:?}");
    }

    #[test]
    fn wilson_matches_closed_form_at_zero_count() {
        let (lo, hi) = wilson_interval(0, 100_000, Z95);
        let z2 = Z95 * Z95;
        assert_eq!(lo, 0.0);
        assert!((hi - z2 / (100_000.0 + z2)).abs() < 1e-15);
    }

    #[test]
    fn ks_detects_shift_and_accepts_same_law() {
        let mut rng = RngStream::new(3, 0).rng();
        let a: Vec<f64> = (0..5000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let b: Vec<f64> = (0..5000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let c: Vec<f64> = b.iter().map(|x| x + 0.2).collect();
        assert!(ks_two_sample(&a, &b).unwrap().p_value > 1e-3);
        assert!(ks_two_sample(&a, &c).unwrap().p_value < 1e-6);
        assert_eq!(ks_two_sample(&a, &a).unwrap().statistic, 0.0);
    }

    #[test]
    fn kolmogorov_tail_value() {
        // Q_KS(1.36) ≈ 0.049 (classical 5% critical value)
        assert!((kolmogorov_q(1.358) - 0.05).abs() < 1e-3);
    }
}
