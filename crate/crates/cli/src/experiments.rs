//! Single-experiment runners behind each subcommand.

use bridgelab::bridge::{marginal_means, BaseKind, BridgeProblem, DiscretePairLaw, DriftMode, FkSettings, PathSimulator};
use bridgelab::couplings::{comparison_study, coupling_bound_envelope, envelope_check, verify_gradient_estimate, LinearFunction, Perturb, TanhFunction, TestFunction};
use bridgelab::invariant::{ground_state_for, verify_contraction, verify_marginal_convergence};
use bridgelab::mc::{Engine, RngStream};
use bridgelab::pathspace::{covariance_battery, verify_concentration, verify_covariance_identity};
use bridgelab::potentials::{convexity_certificate, ConvexityCertificate, Derivatives, PotentialModel, Quadratic, SeparablePolynomial, Sine, TimeLinear, Zero};
use bridgelab::projection::{build_reference, full_simplex_oracle, project_convex, random_instance, CostKind, KernelSpec};
use bridgelab::stein::{estimate_stein_constant, verify_stein_bound, SteinSettings};

use crate::catalog::Experiment;
use crate::config::ExperimentConfig;
use crate::report::{Table, VerdictReport};
use crate::CliError;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn numbers(s: &str, what: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| usage(format!("{what}: '{v}' is not a finite number"))))
        .collect()
}

/// `quadratic:A`, `shifted:A,B`, `sine:EPS`, `zero`, `poly:C0,C1,...`, `timelinear:C`.
pub fn parse_potential(spec: &str, dim: usize) -> Result<PotentialModel, CliError> {
    let (kind, params) = spec.split_once(':').unwrap_or((spec, ""));
    let p = if params.is_empty() { Vec::new() } else { numbers(params, "potential")? };
    let want = |n: usize| if p.len() == n { Ok(()) } else { Err(usage(format!("potential '{kind}' takes {n} parameter(s), got {}", p.len()))) };
    Ok(match kind {
        "quadratic" => {
            want(1)?;
            PotentialModel::new(Quadratic::centered(p[0], dim))
        }
        "shifted" => {
            want(2)?;
            PotentialModel::new(Quadratic { a: p[0], beta: vec![p[1]; dim] })
        }
        "sine" => {
            want(1)?;
            PotentialModel::new(Sine { eps: p[0], d: dim })
        }
        "zero" => {
            want(0)?;
            PotentialModel::new(Zero { d: dim })
        }
        "poly" => {
            if p.is_empty() {
                return Err(usage("poly needs coefficients"));
            }
            PotentialModel::new(SeparablePolynomial { coeffs: p, d: dim })
        }
        "timelinear" => {
            want(1)?;
            PotentialModel::new(TimeLinear { c: p[0], d: dim })
        }
        other => return Err(usage(format!("unknown potential '{other}'"))),
    })
}

fn parse_base(s: &str) -> Result<BaseKind, CliError> {
    match s.split_once(':') {
        None if s == "brownian" => Ok(BaseKind::Brownian),
        Some(("ou", r)) => r.parse().ok().filter(|v: &f64| *v > 0.0).map(BaseKind::Ou).ok_or_else(|| usage(format!("bad OU base rate '{r}'"))),
        _ => Err(usage(format!("unknown base '{s}'"))),
    }
}

/// `equivalent`, `ou:RATE`, `brownian`, or `fk` (inner settings from the
/// config when it declares them).
pub fn parse_drift(cfg: &ExperimentConfig) -> Result<DriftMode, CliError> {
    let s = cfg.str("drift");
    match s.split_once(':') {
        Some(("ou", r)) => r.parse().ok().filter(|v: &f64| *v > 0.0).map(DriftMode::ExactOu).ok_or_else(|| usage(format!("bad OU drift rate '{r}'"))),
        None if s == "equivalent" => Ok(DriftMode::Equivalent),
        None if s == "brownian" => Ok(DriftMode::Brownian),
        None if s == "fk" => {
            let mut fk = FkSettings::default();
            if cfg.values.contains_key("inner_budget") {
                fk.inner_budget = cfg.count("inner_budget")? as usize;
                fk.dt = cfg.positive("fk_dt")?;
                fk.base = parse_base(cfg.str("base"))?;
            }
            Ok(DriftMode::FeynmanKac(fk))
        }
        _ => Err(usage(format!("unknown drift '{s}'"))),
    }
}

fn certificate(model: &PotentialModel, half_width: f64) -> Result<ConvexityCertificate, CliError> {
    let region = vec![(-half_width, half_width); model.dim()];
    let resolution = if model.dim() == 1 { 201 } else { 21 };
    Ok(convexity_certificate(model, &region, resolution)?)
}

/// Max deviations of the generator route and of the finite-difference
/// routes from the closed-form characteristic, with the per-point table.
pub fn characteristic_errors(model: &PotentialModel, t: f64, zs: &[f64], h_fd: f64) -> Result<(f64, f64, Table), CliError> {
    let fd = model.clone().with_mode(Derivatives::FiniteDifference).with_h_fd(h_fd);
    let mut table = Table::new(&["z", "closed", "generator", "fd_generator", "fd_direct"]);
    let (mut closed_err, mut fd_err) = (0.0f64, 0.0f64);
    for &z in zs {
        let a = model.reciprocal_characteristic(t, &[z])?[0];
        let b = model.reciprocal_characteristic_via_generator(t, &[z])?[0];
        let c = fd.reciprocal_characteristic_via_generator(t, &[z])?[0];
        let d = fd.reciprocal_characteristic(t, &[z])?[0];
        closed_err = closed_err.max((a - b).abs());
        fd_err = fd_err.max((a - c).abs()).max((a - d).abs());
        table.push(vec![z, a, b, c, d]);
    }
    Ok((closed_err, fd_err, table))
}

pub fn grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    (0..points).map(|j| lo + (hi - lo) * j as f64 / (points.max(2) - 1) as f64).collect()
}

fn characteristic(exp: &Experiment, cfg: &ExperimentConfig) -> Result<Vec<VerdictReport>, CliError> {
    let model = parse_potential(cfg.str("potential"), 1)?;
    let points = cfg.usize("points")?;
    if points < 2 {
        return Err(usage("points must be at least 2"));
    }
    let zs = grid(cfg.f64("z_min")?, cfg.f64("z_max")?, points);
    let (closed, fd, table) = characteristic_errors(&model, cfg.f64("t")?, &zs, cfg.positive("h_fd")?)?;
    Ok(vec![VerdictReport::new(exp.name, exp.anchor, cfg)
        .measure("closed_form_error", closed)
        .measure("finite_difference_error", fd)
        .bound("closed_form_error", 1e-6)
        .bound("finite_difference_error", 1e-3)
        .require(closed < 1e-6 && fd < 1e-3)
        .table(table)])
}

fn simulate(exp: &Experiment, cfg: &ExperimentConfig, engine: &Engine) -> Result<Vec<VerdictReport>, CliError> {
    let dim = cfg.usize("dim")?;
    let model = parse_potential(cfg.str("potential"), dim)?;
    let problem = BridgeProblem::new(vec![cfg.f64("x")?; dim], vec![cfg.f64("y")?; dim], cfg.positive("T")?, model)?;
    let n = cfg.usize("n_steps")?;
    let mode = parse_drift(cfg)?;
    let path = PathSimulator::new(&problem, n, &mode)?.simulate(RngStream::new(cfg.seed(), 0))?;
    let mut table = Table::new(&["t", "position_1"]);
    for k in 0..path.len() {
        table.push(vec![path.time(k), path.position(k)[0]]);
    }
    let pinned = path.position(0) == problem.x.as_slice() && path.position(n) == problem.y.as_slice();
    let means = marginal_means(&problem, n, &mode, &[n / 4, n / 2, 3 * n / 4], cfg.count("paths")?.max(2), cfg.seed(), engine)?;
    Ok(vec![VerdictReport::new(exp.name, exp.anchor, cfg).measure("marginal_means", &means).measure("endpoints_pinned", pinned).require(pinned).table(table)])
}

fn coupling(exp: &Experiment, cfg: &ExperimentConfig, engine: &Engine) -> Result<Vec<VerdictReport>, CliError> {
    let (alpha, horizon, t) = (cfg.positive("alpha")?, cfg.positive("T")?, cfg.f64("t")?);
    let (dx, dy) = (cfg.f64("dx")?, cfg.f64("dy")?);
    let bound = coupling_bound_envelope(alpha, horizon, t, dx, dy)?;
    let mut r = VerdictReport::new(exp.name, exp.anchor, cfg).bound("envelope", bound);
    let trials = cfg.count("trials")?;
    if trials > 0 {
        let model = PotentialModel::quadratic(alpha, 1);
        let p1 = BridgeProblem::new(vec![0.0], vec![0.0], horizon, model.clone())?;
        let p2 = BridgeProblem::new(vec![dx], vec![dy], horizon, model)?;
        let n = cfg.usize("n_steps")?;
        let e = envelope_check(alpha, &p1, &p2, n, trials, cfg.seed(), engine, &DriftMode::ExactOu(alpha), 0.0, cfg.f64("slack")?)?;
        let mut table = Table::new(&["t", "max_gap", "envelope"]);
        for k in 0..e.times.len() {
            table.push(vec![e.times[k], e.max_abs_diff[k], e.bound[k]]);
        }
        r = r
            .measure("violation_fraction", e.violation_fraction)
            .measure("worst_excess", e.worst_excess())
            .bound("violation_fraction", 1e-3)
            .require(e.violation_fraction <= 1e-3)
            .table(table);
    }
    Ok(vec![r])
}

fn gradient(exp: &Experiment, cfg: &ExperimentConfig, engine: &Engine) -> Result<Vec<VerdictReport>, CliError> {
    let model = parse_potential(cfg.str("potential"), 1)?;
    let cert = certificate(&model, cfg.positive("region")?)?;
    let problem = BridgeProblem::new(vec![cfg.f64("x")?], vec![cfg.f64("y")?], cfg.positive("T")?, model)?;
    let f: Box<dyn TestFunction> = match cfg.str("function") {
        "linear" => Box::new(LinearFunction { v: vec![1.0] }),
        "tanh" => Box::new(TanhFunction),
        other => return Err(usage(format!("unknown test function '{other}'"))),
    };
    let perturb = match cfg.str("perturb") {
        "initial" => Perturb::Initial,
        "final" => Perturb::Final,
        other => return Err(usage(format!("perturb must be initial or final, got '{other}'"))),
    };
    let mode = parse_drift(cfg)?;
    let g = verify_gradient_estimate(&problem, f.as_ref(), cfg.f64("t")?, perturb, cfg.positive("h")?, cfg.usize("n_steps")?, cfg.count("budget")?, cfg.seed(), engine, &mode, &cert)?;
    Ok(vec![VerdictReport::new(exp.name, exp.anchor, cfg).measure("gradient", g.lhs).bound("sinh_ratio_bound", g.rhs).require(g.holds).details(&g)])
}

fn comparison(exp: &Experiment, cfg: &ExperimentConfig, engine: &Engine) -> Result<Vec<VerdictReport>, CliError> {
    let m1 = parse_potential(cfg.str("potential"), 1)?;
    let m2 = parse_potential(cfg.str("potential2"), 1)?;
    let mode = parse_drift(cfg)?;
    let r = cfg.positive("region")?;
    let c = comparison_study(&m1, &m2, cfg.f64("x")?, cfg.f64("y")?, cfg.positive("T")?, cfg.usize("n_steps")?, cfg.count("trials")?, cfg.seed(), engine, (-r, r), (&mode, &mode), cfg.f64("slack")?)?;
    Ok(vec![VerdictReport::new(exp.name, exp.anchor, cfg).measure("violation_fraction", c.fraction).bound("violation_fraction", 1e-3).require(c.fraction <= 1e-3).details(&c)])
}

fn concentration(exp: &Experiment, cfg: &ExperimentConfig, engine: &Engine) -> Result<Vec<VerdictReport>, CliError> {
    let model = parse_potential(cfg.str("potential"), 1)?;
    let cert = certificate(&model, cfg.positive("region")?)?;
    let problem = BridgeProblem::new(vec![cfg.f64("x")?], vec![cfg.f64("y")?], cfg.positive("T")?, model)?;
    let c = verify_concentration(&problem, cfg.f64("t")?, cfg.count("budget")?, &cfg.list("R")?, cfg.seed(), engine, cfg.usize("n_steps")?, &parse_drift(cfg)?, &cert)?;
    let mut table = Table::new(&["R", "bound", "empirical", "ci_low", "ci_high"]);
    for row in &c.rows {
        table.push(vec![row.r, row.bound, row.empirical, row.ci_low, row.ci_high]);
    }
    Ok(vec![VerdictReport::new(exp.name, exp.anchor, cfg)
        .measure("wilson_upper", c.rows.iter().map(|r| r.ci_high).collect::<Vec<_>>())
        .bound("tail_bound", c.rows.iter().map(|r| r.bound).collect::<Vec<_>>())
        .require(c.pass)
        .details(&c)
        .table(table)])
}

fn covariance(exp: &Experiment, cfg: &ExperimentConfig, engine: &Engine) -> Result<Vec<VerdictReport>, CliError> {
    let (alpha, horizon) = (cfg.positive("alpha")?, cfg.positive("T")?);
    let c = verify_covariance_identity(alpha, horizon, &covariance_battery(horizon), cfg.count("budget")?, cfg.seed(), engine, cfg.usize("n_steps")?, cfg.usize("quadrature")?)?;
    let mut table = Table::new(&["pair", "monte_carlo", "std_error", "quadrature", "z_score"]);
    for (i, ch) in c.checks.iter().enumerate() {
        table.push(vec![i as f64, ch.monte_carlo, ch.std_error, ch.quadrature, ch.z_score]);
    }
    Ok(vec![VerdictReport::new(exp.name, exp.anchor, cfg)
        .measure("max_abs_z", c.checks.iter().map(|ch| ch.z_score.abs()).fold(0.0, f64::max))
        .bound("max_abs_z", 3.0)
        .require(c.pass)
        .details(&c)
        .table(table)])
}

fn stein(exp: &Experiment, cfg: &ExperimentConfig, engine: &Engine) -> Result<Vec<VerdictReport>, CliError> {
    let model = parse_potential(cfg.str("potential"), 1)?;
    let constant = estimate_stein_constant(cfg.count("c_budget")?, cfg.seed(), 1, cfg.usize("c_steps")?, engine)?;
    let mut settings = SteinSettings::new(1);
    settings.budget = cfg.count("budget")?;
    settings.n_steps = cfg.usize("n_steps")?;
    settings.coupling_paths = cfg.count("coupling_paths")?;
    let reports = verify_stein_bound(&model, &cfg.list("horizons")?, &constant, &settings, cfg.seed().wrapping_add(1), engine)?;
    let mut table = Table::new(&["T", "bound", "w1_lower", "w1_lower_se", "w1_upper", "w1_upper_se"]);
    for r in &reports {
        table.push(vec![r.horizon, r.bound, r.w1_lower, r.w1_lower_std_error, r.w1_upper, r.w1_upper_std_error]);
    }
    Ok(vec![VerdictReport::new(exp.name, exp.anchor, cfg)
        .measure("stein_constant", constant.estimate)
        .measure("stein_constant_std_error", constant.std_error)
        .measure("w1_lower", reports.iter().map(|r| r.w1_lower).collect::<Vec<_>>())
        .bound("stein_bound", reports.iter().map(|r| r.bound).collect::<Vec<_>>())
        .require(reports.iter().all(|r| r.pass))
        .details(&reports)
        .table(table)])
}

fn invariant(exp: &Experiment, cfg: &ExperimentConfig, engine: &Engine) -> Result<Vec<VerdictReport>, CliError> {
    let model = parse_potential(cfg.str("potential"), 1)?;
    let length = cfg.f64("length")?;
    let ground = ground_state_for(&model, (length > 0.0).then_some(length), cfg.usize("n")?)?;
    let mut gtable = Table::new(&["z", "psi", "V", "m"]);
    for j in 0..ground.nodes.len() {
        gtable.push(vec![ground.nodes[j], ground.psi[j], ground.v[j], ground.m[j]]);
    }
    let gs = VerdictReport::new(format!("{}/ground-state", exp.name), exp.anchor, cfg)
        .measure("k", ground.k)
        .measure("k_extrapolated", ground.k_extrapolated)
        .measure("mean", ground.mean())
        .measure("variance", ground.variance())
        .measure("residual", ground.residual)
        .require(ground.residual.is_finite())
        .table(gtable);
    let ladder = verify_marginal_convergence(&model, cfg.f64("x")?, cfg.f64("y")?, &cfg.list("horizons")?, &ground, cfg.count("budget")?, cfg.seed(), engine, cfg.positive("dt")?, &parse_drift(cfg)?, cfg.usize("resamples")?)?;
    let mut table = Table::new(&["T", "w1", "ci_low", "ci_high"]);
    for r in &ladder.rows {
        table.push(vec![r.horizon, r.w1, r.ci_low, r.ci_high]);
    }
    let lr = VerdictReport::new(format!("{}/ladder", exp.name), exp.anchor, cfg)
        .measure("w1", ladder.rows.iter().map(|r| r.w1).collect::<Vec<_>>())
        .measure("decreasing", ladder.decreasing)
        .require(ladder.decreasing)
        .details(&ladder)
        .table(table);
    Ok(vec![gs, lr])
}

/// `x:y@w;x:y@w` for one-dimensional endpoint pairs.
pub fn parse_pair_law(s: &str) -> Result<DiscretePairLaw, CliError> {
    let mut atoms = Vec::new();
    let mut weights = Vec::new();
    for atom in s.split(';').filter(|a| !a.trim().is_empty()) {
        let (pair, w) = atom.split_once('@').unwrap_or((atom, "1"));
        let (x, y) = pair.split_once(':').ok_or_else(|| usage(format!("endpoint atom '{atom}' needs x:y")))?;
        let v = numbers(&format!("{x},{y},{w}"), "endpoint law")?;
        atoms.push((vec![v[0]], vec![v[1]]));
        weights.push(v[2]);
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(usage("endpoint law needs positive total weight"));
    }
    weights.iter_mut().for_each(|w| *w /= total);
    Ok(DiscretePairLaw::new(atoms, weights)?)
}

fn contraction(exp: &Experiment, cfg: &ExperimentConfig, engine: &Engine) -> Result<Vec<VerdictReport>, CliError> {
    let model = parse_potential(cfg.str("potential"), 1)?;
    let cert = certificate(&model, cfg.positive("region")?)?;
    let (mu, nu) = (parse_pair_law(cfg.str("mu"))?, parse_pair_law(cfg.str("nu"))?);
    let c = verify_contraction(&mu, &nu, &model, cfg.positive("T")?, cfg.f64("p")?, cfg.count("budget")?, cfg.seed(), engine, cfg.positive("dt")?, &parse_drift(cfg)?, &cert, cfg.usize("resamples")?)?;
    Ok(vec![VerdictReport::new(exp.name, exp.anchor, cfg).measure("wasserstein", c.measured).bound("contraction_bound", c.bound).require(c.pass).details(&c)])
}

fn project(exp: &Experiment, cfg: &ExperimentConfig) -> Result<Vec<VerdictReport>, CliError> {
    let (s, n) = (cfg.usize("states")?, cfg.usize("steps")?);
    let cost = CostKind::parse(cfg.str("cost"))?;
    let explicit = ["kernel", "initial", "mu", "nu"].map(|k| !cfg.str(k).trim().is_empty());
    let (p, mu, nu) = if explicit.iter().all(|e| !e) {
        random_instance(s, n, RngStream::new(cfg.seed(), 0))?
    } else if explicit.iter().all(|e| *e) {
        let p = build_reference(&KernelSpec::Homogeneous(cfg.list("kernel")?), &cfg.list("initial")?, s, n)?;
        (p, cfg.list("mu")?, cfg.list("nu")?)
    } else {
        return Err(usage("give all of kernel, initial, mu, nu or none of them"));
    };
    let r = project_convex(&p, &mu, &nu, cost, 10_000)?;
    let oracle = full_simplex_oracle(&p, &mu, &nu, cost, RngStream::new(cfg.seed(), 1))?;
    let mut table = Table::new(&["path", "x0", "xN", "P", "Q"]);
    for i in 0..p.len() {
        let (a, b) = p.endpoints(i);
        table.push(vec![i as f64, a as f64, b as f64, p.prob[i], r.q[i]]);
    }
    let gap = (r.cost - oracle.cost).abs();
    Ok(vec![VerdictReport::new(exp.name, exp.anchor, cfg)
        .measure("cost", r.cost)
        .measure("oracle_cost", oracle.cost)
        .measure("measurability_residual", r.residual)
        .measure("marginal_error", r.marginal_error)
        .measure("iterations", r.iterations)
        .bound("oracle_gap", 1e-6)
        .bound("measurability_residual", 1e-8)
        .require(r.converged && gap <= 1e-6 && r.residual <= 1e-8)
        .table(table)])
}

pub fn run_experiment(exp: &Experiment, cfg: &ExperimentConfig, engine: &Engine) -> Result<Vec<VerdictReport>, CliError> {
    match exp.name {
        "characteristic" => characteristic(exp, cfg),
        "simulate" => simulate(exp, cfg, engine),
        "coupling" => coupling(exp, cfg, engine),
        "gradient" => gradient(exp, cfg, engine),
        "comparison" => comparison(exp, cfg, engine),
        "concentration" => concentration(exp, cfg, engine),
        "covariance" => covariance(exp, cfg, engine),
        "stein" => stein(exp, cfg, engine),
        "invariant" => invariant(exp, cfg, engine),
        "contraction" => contraction(exp, cfg, engine),
        "project" => project(exp, cfg),
        other => Err(usage(format!("'{other}' is not a single experiment"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn potential_specs() {
        let q = parse_potential("quadratic:2", 1).unwrap();
        assert_eq!(q.reciprocal_characteristic(0.0, &[1.0]).unwrap(), vec![4.0]);
        let s = parse_potential("shifted:1,-0.5", 1).unwrap();
        assert!((s.reciprocal_characteristic(0.0, &[0.5]).unwrap()[0] - 0.0).abs() < 1e-12);
        assert_eq!(parse_potential("sine:0.2", 2).unwrap().dim(), 2);
        assert!(parse_potential("quadratic", 1).is_err());
        assert!(parse_potential("cubic:1", 1).is_err());
        assert!(parse_potential("poly:0,0,0.5", 1).is_ok());
    }

    #[test]
    fn pair_laws() {
        let l = parse_pair_law("0:0@1;1:2@3").unwrap();
        assert_eq!(l.weights, vec![0.25, 0.75]);
        assert_eq!(l.atoms[1], (vec![1.0], vec![2.0]));
        assert!(parse_pair_law("0@1").is_err());
        assert!(parse_pair_law("").is_err());
    }
}
