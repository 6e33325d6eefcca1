//! The acceptance battery run by `verify-all`. Criterion 12 (determinism
//! across worker counts) compares two whole runs, so it lives in the
//! acceptance test rather than here.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use bridgelab::bridge::{bridge_drift_estimate, ou_bridge_drift, ou_bridge_variance, BaseKind, BridgeProblem, DiscretePairLaw, DriftMode, FkSettings};
use bridgelab::couplings::{comparison_study, envelope_check, envelope_decay_coefficient, verify_gradient_estimate, LinearFunction, Perturb, TanhFunction, TestFunction};
use bridgelab::hyper::coth;
use bridgelab::invariant::{compare_time_zero_marginals, contraction_coefficient, gaussian_endpoint_decorrelation, solve_ground_state, verify_contraction, verify_marginal_convergence};
use bridgelab::mc::{Engine, RngStream};
use bridgelab::pathspace::{covariance_battery, inner_product_alpha, solve_phi, verify_concentration, verify_covariance_identity, xi_alpha, GridFunction, Identity, SimpleFunctional, TimeGrid};
use bridgelab::potentials::{convexity_certificate, PotentialModel, Quadratic};
use bridgelab::projection::{full_simplex_oracle, interior_path, perturb_path, project_convex, random_instance, verify_endpoint_measurability, CostKind};
use bridgelab::stein::{estimate_stein_constant, functional_battery, generator_apply, sample_context_bridge, verify_generator_identities, verify_stein_bound, PathFunctional, SteinContext, SteinSettings, Verdict};
use serde_json::json;
use statrs::function::erf::erfc;

use crate::config::ExperimentConfig;
use crate::experiments::{characteristic_errors, grid, parse_potential};
use crate::report::{verdict_word, VerdictReport};
use crate::CliError;

pub struct Criterion {
    pub number: u32,
    pub title: &'static str,
    /// Wall-clock limit in seconds.
    pub limit: f64,
    run: fn(&Ctx) -> Result<VerdictReport, CliError>,
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    engine: &'a Engine,
    number: u32,
    title: &'static str,
}

impl Ctx<'_> {
    fn report(&self) -> VerdictReport {
        VerdictReport::new(format!("criterion-{}", self.number), self.title, self.cfg)
    }

    /// A seed private to this criterion and `tag`.
    fn seed(&self, tag: u64) -> u64 {
        let mut z = self.cfg.seed() ^ (u64::from(self.number) << 40) ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
}

pub const CRITERIA: &[Criterion] = &[
    Criterion { number: 1, title: "reciprocal characteristic: closed form vs generator route vs finite differences", limit: 1.0, run: c1 },
    Criterion { number: 2, title: "Feynman-Kac drift vs exact OU bridge drift", limit: 60.0, run: c2 },
    Criterion { number: 3, title: "synchronous coupling stays under the sinh envelope", limit: 300.0, run: c3 },
    Criterion { number: 4, title: "gradient estimate and its Bakry-Emery limit", limit: 300.0, run: c4 },
    Criterion { number: 5, title: "comparison principle for ordered characteristics", limit: 120.0, run: c5 },
    Criterion { number: 6, title: "alpha-inner product: solver order, covariance identity, value", limit: 120.0, run: c6 },
    Criterion { number: 7, title: "Gaussian concentration of bridge marginals", limit: 60.0, run: c7 },
    Criterion { number: 8, title: "Stein bound, generator identities, eigen-relation", limit: 600.0, run: c8 },
    Criterion { number: 9, title: "invariant measure: ground state, convexity of V, marginal ladder, mean repulsion", limit: 300.0, run: c9 },
    Criterion { number: 10, title: "contraction of time-zero marginals", limit: 120.0, run: c10 },
    Criterion { number: 11, title: "convex projections on finite path spaces", limit: 60.0, run: c11 },
];

fn max_abs(xs: impl IntoIterator<Item = f64>) -> f64 {
    xs.into_iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn c1(ctx: &Ctx) -> Result<VerdictReport, CliError> {
    let zs = grid(-3.0, 3.0, 100);
    let mut r = ctx.report();
    let mut ok = true;
    for spec in ["quadratic:1", "shifted:1,0.5", "sine:0.5"] {
        let model = parse_potential(spec, 1)?;
        let (closed, fd, _) = characteristic_errors(&model, 0.0, &zs, 1e-4)?;
        ok &= closed < 1e-6 && fd < 1e-3;
        r = r.measure(spec, json!({ "closed_form_error": closed, "finite_difference_error": fd }));
    }
    Ok(r.bound("closed_form_error", 1e-6).bound("finite_difference_error", 1e-3).require(ok))
}

fn c2(ctx: &Ctx) -> Result<VerdictReport, CliError> {
    let problem = BridgeProblem::new(vec![0.0], vec![1.0], 1.0, PotentialModel::quadratic(1.0, 1))?;
    let fk = FkSettings { inner_budget: 10_000, dt: 1e-3, base: BaseKind::Brownian };
    let mut probes = Vec::new();
    let mut ok = true;
    let mut j = 0;
    for t in [-0.5, 0.0, 0.5] {
        for z in [-1.0, 0.0, 1.0] {
            let est = bridge_drift_estimate(&problem, t, &[z], &fk, RngStream::new(ctx.seed(0), j))?;
            let exact = ou_bridge_drift(1.0, &[z], t, &[1.0], 1.0)?[0];
            let (diff, se) = (est.drift[0] - exact, est.std_error[0]);
            ok &= diff.abs() <= 2.0 * se;
            probes.push(json!({ "t": t, "z": z, "feynman_kac": est.drift[0], "std_error": se, "exact": exact, "z_score": diff / se }));
            j += 1;
        }
    }
    let reference = ou_bridge_drift(1.0, &[0.0], 0.0, &[1.0], 1.0)?[0];
    let reference_ok = (reference - 0.85092).abs() <= 1e-5;
    Ok(ctx
        .report()
        .measure("probes", probes)
        .measure("ou_drift_at_origin", reference)
        .bound("z_score", 2.0)
        .bound("ou_drift_at_origin", 0.85092)
        .require(ok && reference_ok))
}

fn c3(ctx: &Ctx) -> Result<VerdictReport, CliError> {
    let model = PotentialModel::quadratic(1.0, 1);
    let a = BridgeProblem::new(vec![0.0], vec![0.0], 1.0, model.clone())?;
    let mut r = ctx.report();
    let mut ok = true;
    for (j, (x2, y2)) in [(1.0, 0.0), (0.0, 1.0)].into_iter().enumerate() {
        let b = BridgeProblem::new(vec![x2], vec![y2], 1.0, model.clone())?;
        let run = |n: usize| envelope_check(1.0, &a, &b, n, 1000, ctx.seed(j as u64), ctx.engine, &DriftMode::ExactOu(1.0), 0.0, 5.0);
        let (full, half) = (run(2000)?, run(4000)?);
        ok &= full.violation_fraction <= 1e-3 && half.violation_fraction <= full.violation_fraction;
        r = r.measure(
            &format!("pair_{x2}_{y2}"),
            json!({ "fraction_dt": full.violation_fraction, "fraction_half_dt": half.violation_fraction, "worst_excess": full.worst_excess() }),
        );
    }
    Ok(r.bound("violation_fraction", 1e-3).require(ok))
}

fn c4(ctx: &Ctx) -> Result<VerdictReport, CliError> {
    let model = PotentialModel::quadratic(1.0, 1);
    let cert = convexity_certificate(&model, &[(-5.0, 5.0)], 201)?;
    let problem = BridgeProblem::new(vec![0.3], vec![-0.2], 1.0, model)?;
    let functions: [Box<dyn TestFunction>; 2] = [Box::new(LinearFunction { v: vec![1.0] }), Box::new(TanhFunction)];
    let mut rows = Vec::new();
    let mut ok = true;
    let mut j = 0;
    for f in &functions {
        for t in [-0.5, 0.0, 0.5] {
            let g = verify_gradient_estimate(&problem, f.as_ref(), t, Perturb::Initial, 1e-3, 1000, 10_000, ctx.seed(j), ctx.engine, &DriftMode::ExactOu(1.0), &cert)?;
            ok &= g.holds;
            rows.push(g);
            j += 1;
        }
    }
    let limit = max_abs([0.5, 1.0, 2.0].map(|t| envelope_decay_coefficient(1.0, 20.0, t) - (-t).exp()));
    Ok(ctx
        .report()
        .measure("gradient_checks", &rows)
        .measure("bakry_emery_gap", limit)
        .bound("bakry_emery_gap", 1e-6)
        .require(ok && limit < 1e-6))
}

fn c5(ctx: &Ctx) -> Result<VerdictReport, CliError> {
    let lower = PotentialModel::quadratic(1.0, 1);
    let upper = PotentialModel::new(Quadratic { a: 1.0, beta: vec![-0.5] });
    let modes = (&DriftMode::Equivalent, &DriftMode::Equivalent);
    let c = comparison_study(&lower, &upper, 0.0, 0.0, 1.0, 2000, 1000, ctx.seed(0), ctx.engine, (-5.0, 5.0), modes, 1.0)?;
    Ok(ctx.report().measure("violation_fraction", c.fraction).bound("violation_fraction", 1e-3).details(&c).require(c.fraction <= 1e-3))
}

/// Closed-form φ for h = 1_[−1, 0] at α = T = 1, with the midpoint at the jump.
fn indicator_phi(s: f64) -> f64 {
    let b = 1f64.sinh() / 2f64.sinh() * (1.0 + s).cosh();
    if s > 0.0 {
        b - s.cosh()
    } else if s == 0.0 {
        b - 0.5
    } else {
        b
    }
}

fn c6(ctx: &Ctx) -> Result<VerdictReport, CliError> {
    let err = |n: usize| -> Result<f64, CliError> {
        let g = TimeGrid::new(1.0, n)?;
        let phi = solve_phi(&GridFunction::indicator(g, -1.0, 0.0, 1, 0)?, 1.0, 1.0)?;
        Ok(max_abs((0..=n).map(|k| phi.values[k] - indicator_phi(g.time(k)))))
    };
    let (coarse, fine) = (err(512)?, err(1024)?);
    let ratio = coarse / fine;
    let cov = verify_covariance_identity(1.0, 1.0, &covariance_battery(1.0), 100_000, ctx.seed(0), ctx.engine, 1000, 1024)?;
    let h = GridFunction::indicator(TimeGrid::new(1.0, 1024)?, -1.0, 0.0, 1, 0)?;
    let value = inner_product_alpha(&h, &h, 1.0, 1.0)?;
    let value_ok = (value - 0.38080).abs() <= 2e-4;
    Ok(ctx
        .report()
        .measure("refinement_ratio", ratio)
        .measure("covariance", &cov.checks)
        .measure("inner_product", value)
        .measure("ou_bridge_variance", ou_bridge_variance(1.0, 1.0, 0.0))
        .bound("refinement_ratio", [3.5, 4.5])
        .bound("inner_product", 0.38080)
        .require((ratio - 4.0).abs() <= 0.5 && cov.pass && value_ok))
}

fn c7(ctx: &Ctx) -> Result<VerdictReport, CliError> {
    let model = PotentialModel::quadratic(1.0, 1);
    let cert = convexity_certificate(&model, &[(-5.0, 5.0)], 201)?;
    let problem = BridgeProblem::new(vec![0.0], vec![0.0], 1.0, model)?;
    let r_grid = [0.25, 0.5, 1.0, 1.5, 2.0];
    let mut r = ctx.report();
    let mut ok = true;
    for (j, t) in [0.0, 0.9].into_iter().enumerate() {
        let c = verify_concentration(&problem, t, 100_000, &r_grid, ctx.seed(j as u64), ctx.engine, 1000, &DriftMode::ExactOu(1.0), &cert)?;
        ok &= c.pass;
        r = r.measure(&format!("t={t}"), &c.rows);
    }
    let xi0 = xi_alpha(0.0, 1.0, 1.0);
    let xi_ok = (xi0 - 1.31304).abs() <= 1e-5 && (xi0 - coth(1.0)).abs() <= 1e-12;
    let sd = ou_bridge_variance(1.0, 1.0, 0.0).sqrt();
    let gaussian_tail = 0.5 * erfc(1.0 / (sd * std::f64::consts::SQRT_2));
    let bound_at_1 = (-xi0).exp();
    Ok(r
        .measure("xi_at_0", xi0)
        .measure("gaussian_tail_at_1", gaussian_tail)
        .bound("xi_at_0", 1.31304)
        .bound("tail_bound_at_1", bound_at_1)
        .require(ok && xi_ok && gaussian_tail <= bound_at_1))
}

fn c8(ctx: &Ctx) -> Result<VerdictReport, CliError> {
    let constant = estimate_stein_constant(1_000_000, ctx.seed(0), 1, 2000, ctx.engine)?;
    let model = PotentialModel::sine(0.2, 1);
    let reports = verify_stein_bound(&model, &[0.25, 0.5, 1.0], &constant, &SteinSettings::new(1), ctx.seed(1), ctx.engine)?;
    let context = SteinContext::new(vec![0.0], vec![0.0], 1.0)?;
    let battery = functional_battery(1.0, 200, 1)?;
    let identities = verify_generator_identities(&context, &model, &battery, 20_000, ctx.seed(2), ctx.engine, 1.0)?;
    let g = TimeGrid::new(1.0, 200)?;
    let linear = PathFunctional::Simple(SimpleFunctional::new(Arc::new(Identity), vec![GridFunction::scalar(g, |t| 1.0 + t * t)?])?);
    let mut eigen_gap = 0.0f64;
    for i in 0..5 {
        let p = sample_context_bridge(&context, 200, RngStream::new(ctx.seed(3), i));
        eigen_gap = eigen_gap.max((generator_apply(&linear, &p, &context)? + linear.value(&p, &context)?).abs());
    }
    let ok = constant.relative_error() < 0.01 && reports.iter().all(|r| r.pass) && identities.verdict == Verdict::Pass && eigen_gap <= 1e-12;
    Ok(ctx
        .report()
        .measure("stein_constant", constant.estimate)
        .measure("stein_constant_relative_error", constant.relative_error())
        .measure("w1_lower", reports.iter().map(|r| r.w1_lower).collect::<Vec<_>>())
        .measure("w1_lower_std_error", reports.iter().map(|r| r.w1_lower_std_error).collect::<Vec<_>>())
        .measure("w1_upper", reports.iter().map(|r| r.w1_upper).collect::<Vec<_>>())
        .measure("generator_identities", verdict_word(identities.verdict))
        .measure("eigen_relation_gap", eigen_gap)
        .bound("stein_bound", reports.iter().map(|r| r.bound).collect::<Vec<_>>())
        .details(json!({ "stein": reports, "identities": identities }))
        .require(ok))
}

fn c9(ctx: &Ctx) -> Result<VerdictReport, CliError> {
    let ground = solve_ground_state(&|z: f64| 0.5 * z * z, 10.0, 2000)?;
    let model = PotentialModel::quadratic(1.0, 1);
    let alpha_hat = convexity_certificate(&model, &[(-5.0, 5.0)], 201)?.alpha_hat;
    let min_v2 = ground.v_second_differences().iter().map(|(_, d)| *d).fold(f64::INFINITY, f64::min);
    let ladder = verify_marginal_convergence(&model, 0.0, 0.0, &[0.5, 1.0, 2.0, 4.0], &ground, 100_000, ctx.seed(0), ctx.engine, 0.01, &DriftMode::Equivalent, 200)?;
    let last = ladder.rows.last().map(|r| r.w1).unwrap_or(f64::INFINITY);
    let repulsive = PotentialModel::new(Quadratic::centered(-1.0, 1));
    let fk = DriftMode::FeynmanKac(FkSettings { inner_budget: 1, dt: 0.1, base: BaseKind::Ou(1.0) });
    let ks = compare_time_zero_marginals((&model, &DriftMode::Equivalent, 5000), (&repulsive, &fk, 5000), 0.0, 0.0, &[0.5, 1.0, 2.0], 0.01, ctx.seed(1), ctx.engine, 1e-3)?;
    let k_ok = (ground.k_extrapolated - 0.5).abs() <= 1e-6;
    let var_ok = (ground.variance() - 0.5).abs() <= 1e-4;
    let v_ok = min_v2 >= alpha_hat - 1e-3;
    let ok = k_ok && var_ok && v_ok && ladder.decreasing && last < 0.02 && ks.iter().all(|r| r.pass);
    Ok(ctx
        .report()
        .measure("k", ground.k)
        .measure("k_extrapolated", ground.k_extrapolated)
        .measure("m_variance", ground.variance())
        .measure("min_v_second_difference", min_v2)
        .measure("w1_ladder", ladder.rows.iter().map(|r| r.w1).collect::<Vec<_>>())
        .measure("ks_p_values", ks.iter().map(|r| r.p_value).collect::<Vec<_>>())
        .bound("k", 0.5)
        .bound("m_variance", 0.5)
        .bound("alpha_hat", alpha_hat)
        .bound("final_w1", 0.02)
        .bound("ks_level", 1e-3)
        .require(ok))
}

fn c10(ctx: &Ctx) -> Result<VerdictReport, CliError> {
    let model = PotentialModel::quadratic(1.0, 1);
    let cert = convexity_certificate(&model, &[(-5.0, 5.0)], 201)?;
    let mu = DiscretePairLaw::dirac(vec![0.0], vec![0.0]);
    let nu = DiscretePairLaw::dirac(vec![1.0], vec![1.0]);
    let c = verify_contraction(&mu, &nu, &model, 1.0, 1.0, 20_000, ctx.seed(0), ctx.engine, 0.01, &DriftMode::Equivalent, &cert, 200)?;
    let bound_ok = (c.bound - 0.64805).abs() <= 1e-5;
    // Doubling T multiplies the coefficient by cosh(αT)/cosh(2αT).
    let ratio = contraction_coefficient(1.0, 2.0) / contraction_coefficient(1.0, 1.0);
    let evaluated = 1f64.cosh() / 2f64.cosh();
    let ratio_ok = (ratio - evaluated).abs() <= 1e-5;
    let decorrelation = gaussian_endpoint_decorrelation(1.0, 1.0)?;
    Ok(ctx
        .report()
        .measure("wasserstein", c.measured)
        .measure("wasserstein_std_error", c.measured_std_error)
        .measure("coefficient_ratio", ratio)
        .measure("printed_coefficient_ratio", 0.41997)
        .bound("contraction_bound", c.bound)
        .bound("coefficient_ratio", evaluated)
        .details(json!({ "contraction": c, "decorrelation": decorrelation }))
        .require(c.pass && bound_ok && ratio_ok))
}

fn c11(ctx: &Ctx) -> Result<VerdictReport, CliError> {
    let mut worst_gap = 0.0f64;
    let mut worst_residual = 0.0f64;
    let mut smallest_detection = f64::INFINITY;
    let mut hellinger_gap = 0.0f64;
    let mut converged = true;
    for i in 0..20u64 {
        let (states, steps) = (2 + (i % 2) as usize, 1 + ((i / 2) % 3) as usize);
        let (p, mu, nu) = random_instance(states, steps, RngStream::new(ctx.seed(0), i))?;
        for kind in [CostKind::Entropy, CostKind::Square, CostKind::Hellinger] {
            let r = project_convex(&p, &mu, &nu, kind, 10_000)?;
            let o = full_simplex_oracle(&p, &mu, &nu, kind, RngStream::new(ctx.seed(1), i))?;
            let gap = (r.cost - o.cost).abs();
            if kind == CostKind::Hellinger {
                hellinger_gap = hellinger_gap.max(gap);
                continue;
            }
            converged &= r.converged;
            worst_gap = worst_gap.max(gap);
            worst_residual = worst_residual.max(r.residual);
            if let (CostKind::Entropy, Some(k)) = (kind, interior_path(&p)) {
                smallest_detection = smallest_detection.min(verify_endpoint_measurability(&perturb_path(&r.q, k, 1e-3), &p)?);
            }
        }
    }
    Ok(ctx
        .report()
        .measure("worst_oracle_gap", worst_gap)
        .measure("worst_measurability_residual", worst_residual)
        .measure("smallest_detected_residual", smallest_detection)
        .measure("hellinger_oracle_gap", hellinger_gap)
        .bound("oracle_gap", 1e-6)
        .bound("measurability_residual", 1e-8)
        .bound("detection_threshold", 1e-4)
        .require(converged && worst_gap <= 1e-6 && worst_residual <= 1e-8 && smallest_detection >= 1e-4))
}

/// Parses the `only` key: empty means every criterion.
fn selection(cfg: &ExperimentConfig) -> Result<Vec<u32>, CliError> {
    let raw = cfg.str("only");
    if raw.trim().is_empty() {
        return Ok(CRITERIA.iter().map(|c| c.number).collect());
    }
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse::<u32>()
                .ok()
                .filter(|n| CRITERIA.iter().any(|c| c.number == *n))
                .ok_or_else(|| CliError::Usage(format!("only: '{s}' is not a criterion number (1-{})", CRITERIA.len())))
        })
        .collect()
}

/// Runs the selected criteria in order. Each finished criterion gets one
/// progress line on `progress` with its wall-clock time.
pub fn run_battery(cfg: &ExperimentConfig, engine: &Engine, progress: &mut dyn Write) -> Result<Vec<VerdictReport>, CliError> {
    let chosen = selection(cfg)?;
    let mut out = Vec::new();
    for c in CRITERIA.iter().filter(|c| chosen.contains(&c.number)) {
        let ctx = Ctx { cfg, engine, number: c.number, title: c.title };
        let start = Instant::now();
        let report = (c.run)(&ctx)?;
        let secs = start.elapsed().as_secs_f64();
        let _ = writeln!(progress, "criterion {} {} {:.2}s limit {}s", c.number, verdict_word(report.verdict), secs, c.limit);
        out.push(report);
    }
    Ok(out)
}
