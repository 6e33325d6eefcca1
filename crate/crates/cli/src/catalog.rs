//! Registered experiments, the result each one checks, and their keys.

/// (key, default, help)
pub type Key = (&'static str, &'static str, &'static str);

#[derive(Debug)]
pub struct Experiment {
    pub name: &'static str,
    /// The result the experiment checks.
    pub anchor: &'static str,
    pub summary: &'static str,
    pub keys: &'static [Key],
}

const POTENTIAL_HELP: &str = "quadratic:A | shifted:A,B | sine:EPS | zero | poly:C0,C1,... | timelinear:C";
const DRIFT_HELP: &str = "equivalent | ou:RATE | brownian | fk";

pub const EXPERIMENTS: &[Experiment] = &[
    Experiment {
        name: "characteristic",
        anchor: "reciprocal characteristic identity: grad of the reciprocal potential equals -[L + d/dt] grad U",
        summary: "Cross-check the closed-form reciprocal characteristic against the generator route and finite differences",
        keys: &[
            ("potential", "sine:0.5", POTENTIAL_HELP),
            ("t", "0", "time"),
            ("z_min", "-3", "left end of the z grid"),
            ("z_max", "3", "right end of the z grid"),
            ("points", "100", "grid points"),
            ("h_fd", "1e-4", "finite-difference base step"),
        ],
    },
    Experiment {
        name: "simulate",
        anchor: "bridge drift representation: Brownian bridge drift plus grad log psi (Feynman-Kac)",
        summary: "Simulate bridges by Euler-Maruyama and report the first path and marginal means",
        keys: &[
            ("potential", "quadratic:1", POTENTIAL_HELP),
            ("dim", "1", "state dimension"),
            ("x", "0", "start point (all coordinates)"),
            ("y", "0", "end point (all coordinates)"),
            ("T", "1", "half horizon; paths live on [-T, T]"),
            ("n_steps", "1000", "Euler steps"),
            ("drift", "equivalent", DRIFT_HELP),
            ("inner_budget", "1000", "Feynman-Kac inner paths (drift=fk)"),
            ("fk_dt", "0.01", "Feynman-Kac inner step (drift=fk)"),
            ("base", "brownian", "Feynman-Kac base: brownian | ou:RATE"),
            ("paths", "1000", "paths for marginal means"),
        ],
    },
    Experiment {
        name: "coupling",
        anchor: "synchronous coupling contraction with the sinh envelope (uniform convexity of the reciprocal potential)",
        summary: "Evaluate the sinh coupling envelope; with trials > 0, also check synchronous couplings of OU bridges against it",
        keys: &[
            ("alpha", "1", "convexity rate"),
            ("T", "1", "half horizon"),
            ("dx", "1", "initial gap |x2 - x1|"),
            ("dy", "0", "final gap |y2 - y1|"),
            ("t", "0", "time for the envelope value"),
            ("trials", "0", "coupled path pairs (0: evaluate only)"),
            ("n_steps", "2000", "Euler steps"),
            ("slack", "5", "slack constant c in c*sqrt(dt)"),
        ],
    },
    Experiment {
        name: "gradient",
        anchor: "gradient estimate |grad E f(w_t)| <= sinh ratio * E|grad f(w_t)|",
        summary: "Central-difference gradient of a bridge marginal against the sinh-ratio bound",
        keys: &[
            ("potential", "quadratic:1", POTENTIAL_HELP),
            ("x", "0.3", "start point"),
            ("y", "-0.2", "end point"),
            ("T", "1", "half horizon"),
            ("t", "0", "marginal time"),
            ("function", "tanh", "linear | tanh"),
            ("perturb", "initial", "initial | final"),
            ("h", "1e-3", "difference step"),
            ("n_steps", "1000", "Euler steps"),
            ("budget", "10000", "paths"),
            ("drift", "equivalent", DRIFT_HELP),
            ("region", "5", "convexity scan half-width"),
        ],
    },
    Experiment {
        name: "comparison",
        anchor: "comparison principle for one-dimensional bridges ordered by their reciprocal characteristics",
        summary: "Couple two one-dimensional bridges and count order violations",
        keys: &[
            ("potential", "quadratic:1", POTENTIAL_HELP),
            ("potential2", "shifted:1,-0.5", POTENTIAL_HELP),
            ("x", "0", "start point"),
            ("y", "0", "end point"),
            ("T", "1", "half horizon"),
            ("n_steps", "2000", "Euler steps"),
            ("trials", "1000", "coupled pairs"),
            ("slack", "1", "slack constant c in c*sqrt(dt)"),
            ("drift", "equivalent", DRIFT_HELP),
            ("region", "5", "gate scan half-width"),
        ],
    },
    Experiment {
        name: "concentration",
        anchor: "Gaussian concentration of bridge marginals (corollary of the path-space log-Sobolev inequality)",
        summary: "Empirical tails of a bridge marginal against exp(-xi R^2)",
        keys: &[
            ("potential", "quadratic:1", POTENTIAL_HELP),
            ("x", "0", "start point"),
            ("y", "0", "end point"),
            ("T", "1", "half horizon"),
            ("t", "0", "marginal time"),
            ("budget", "100000", "paths"),
            ("R", "0.25,0.5,1,1.5,2", "deviation grid"),
            ("n_steps", "1000", "Euler steps"),
            ("drift", "equivalent", DRIFT_HELP),
            ("region", "5", "convexity scan half-width"),
        ],
    },
    Experiment {
        name: "covariance",
        anchor: "OU bridge covariance identity E[int h dw int g dw] = <h, g>_alpha",
        summary: "Monte Carlo covariance of stochastic integrals against the alpha-inner product",
        keys: &[
            ("alpha", "1", "OU rate"),
            ("T", "1", "half horizon"),
            ("budget", "100000", "paths"),
            ("n_steps", "1000", "Euler steps"),
            ("quadrature", "1024", "intervals of the inner-product quadrature"),
        ],
    },
    Experiment {
        name: "stein",
        anchor: "Stein bound W1(bridge, Brownian bridge) <= C T^2 sup|grad of the reciprocal potential|",
        summary: "Estimate the Stein constant and sandwich W1 between the model bridge and the Brownian bridge",
        keys: &[
            ("potential", "sine:0.2", POTENTIAL_HELP),
            ("horizons", "0.25,0.5,1", "half horizons"),
            ("c_budget", "1000000", "paths for the Stein constant"),
            ("c_steps", "2000", "grid of the Stein constant"),
            ("budget", "100000", "Brownian bridges for the lower side"),
            ("n_steps", "1000", "grid of the lower side"),
            ("coupling_paths", "64", "coupled paths for the upper side"),
        ],
    },
    Experiment {
        name: "invariant",
        anchor: "bridge-invariant measure m from the ground state of -1/2 Laplacian + reciprocal potential",
        summary: "Ground state, m, and the W1 ladder of time-zero marginals towards m",
        keys: &[
            ("potential", "quadratic:1", POTENTIAL_HELP),
            ("length", "0", "truncation half-width (0: automatic)"),
            ("n", "2000", "interior grid nodes"),
            ("horizons", "0.5,1,2,4", "half horizons of the ladder"),
            ("x", "0", "start point"),
            ("y", "0", "end point"),
            ("budget", "100000", "paths per horizon"),
            ("dt", "0.01", "Euler step"),
            ("drift", "equivalent", DRIFT_HELP),
            ("resamples", "200", "bootstrap resamples"),
        ],
    },
    Experiment {
        name: "contraction",
        anchor: "contraction of time-zero marginals of reciprocal mixtures with rate 1/(sqrt 2 cosh(alpha T))",
        summary: "Measured W_p between time-zero marginals of two mixtures against the contraction bound",
        keys: &[
            ("potential", "quadratic:1", POTENTIAL_HELP),
            ("mu", "0:0@1", "endpoint law: x:y@weight;..."),
            ("nu", "1:1@1", "endpoint law: x:y@weight;..."),
            ("T", "1", "half horizon"),
            ("p", "1", "Wasserstein order"),
            ("budget", "20000", "paths per mixture"),
            ("dt", "0.01", "Euler step"),
            ("drift", "equivalent", DRIFT_HELP),
            ("resamples", "200", "bootstrap resamples"),
            ("region", "5", "convexity scan half-width"),
        ],
    },
    Experiment {
        name: "project",
        anchor: "convex-cost projection onto endpoint marginals stays in the reciprocal class",
        summary: "Project a Markov path measure on a finite state space onto endpoint marginals",
        keys: &[
            ("states", "3", "state count S"),
            ("steps", "3", "path length N"),
            ("cost", "entropy", "entropy | square | hellinger"),
            ("kernel", "", "row-major S x S kernel (empty: random instance)"),
            ("initial", "", "initial law (empty: random instance)"),
            ("mu", "", "initial marginal (empty: random instance)"),
            ("nu", "", "final marginal (empty: random instance)"),
        ],
    },
    Experiment {
        name: "verify-all",
        anchor: "all twelve acceptance criteria",
        summary: "Run the acceptance battery",
        keys: &[("only", "", "comma-separated criterion numbers (empty: all)")],
    },
];

pub fn find(name: &str) -> Option<&'static Experiment> {
    EXPERIMENTS.iter().find(|e| e.name == name)
}

/// One line per experiment: name, then the result it checks.
pub fn render_catalog() -> String {
    let width = EXPERIMENTS.iter().map(|e| e.name.len()).max().unwrap_or(0);
    EXPERIMENTS.iter().map(|e| format!("{:width$}  {}\n", e.name, e.anchor)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_is_consistent() {
        assert_eq!(render_catalog().lines().count(), EXPERIMENTS.len());
        let mut names: Vec<_> = EXPERIMENTS.iter().map(|e| e.name).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), EXPERIMENTS.len());
        assert!(find("concentration").unwrap().anchor.contains("log-Sobolev"));
        assert!(find("stein").unwrap().anchor.contains("Stein bound"));
        for e in EXPERIMENTS {
            for (k, _, _) in e.keys {
                assert!(crate::config::COMMON_KEYS.iter().all(|(c, _, _)| c != k), "{} redeclares {k}", e.name);
            }
        }
    }
}
