use bridgelab::bridge::{ou_bridge_variance, simulate_bridge, BridgeProblem, DriftMode};
use bridgelab::mc::Engine;
use bridgelab::potentials::PotentialModel;

// Euler paths of the OU bridge pinned at 0 reproduce the closed-form
// marginal variance, and reversing the time axis gives the same law.
#[test]
fn ou_bridge_marginal_variance() {
    let horizon = 1.0;
    let problem = BridgeProblem::new(vec![0.0], vec![0.0], horizon, PotentialModel::quadratic(1.0, 1)).unwrap();
    let engine = Engine::new(2).unwrap();
    let steps = 400;
    for k in [100usize, 200, 300] {
        let stats = engine
            .run_batches(20_000, 5, |s| {
                let p = simulate_bridge(&problem, steps, s, &DriftMode::Equivalent)?;
                Ok(p.position(k)[0].powi(2))
            })
            .unwrap();
        let t = -horizon + 2.0 * horizon * k as f64 / steps as f64;
        let exact = ou_bridge_variance(1.0, horizon, t);
        let tol = 4.0 * stats.std_error() + 2.0 * (2.0 * horizon / steps as f64);
        assert!((stats.mean() - exact).abs() < tol, "t={t}: {} vs {exact}", stats.mean());
    }
}

#[test]
fn endpoints_are_pinned() {
    let problem = BridgeProblem::new(vec![0.5, -1.0], vec![2.0, 0.25], 0.75, PotentialModel::quadratic(2.0, 2)).unwrap();
    let engine = Engine::new(1).unwrap();
    let paths = engine.collect(20, 9, |s| simulate_bridge(&problem, 50, s, &DriftMode::Equivalent)).unwrap();
    for p in paths {
        assert_eq!(p.position(0), &[0.5, -1.0]);
        assert_eq!(p.position(p.len() - 1), &[2.0, 0.25]);
    }
}
