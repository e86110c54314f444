//! Fast invariant suite behind `hdqkd selftest`.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::entropy::{primal_oracle, solve_dual, DualBounds, SolverOptions};
use crate::params::{budget_for, ProtocolParams, Regime};
use crate::statistics::mu_fixed;
use crate::witness::WitnessSet;

/// Radius under test: `(x, m, eps) -> mu`.
pub type RadiusFn = fn(f64, u64, f64) -> f64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelftestReport {
    pub checks: Vec<Check>,
    pub seconds: f64,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

const COVERAGE_TRIALS: usize = 20_000;

/// Largest violation count compatible with rate `eps` at 99% one-sided confidence.
pub fn coverage_limit(eps: f64, trials: usize) -> f64 {
    let t = trials as f64;
    eps * t + 2.326 * (eps * (1.0 - eps) * t).sqrt()
}

/// Violation counts of `|mean - E| > mu` for the two witness outcome laws:
/// Bernoulli (error witness) and `+-x` (coherence witness).
fn coverage(mu: RadiusFn, eps: f64, seed: u64) -> Vec<(String, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = 200u64;
    let mut out = Vec::new();
    for &(label, p, x) in &[("bernoulli p=0.1", 0.1, 1.0), ("+-x x=1.9", 0.5, 1.9)] {
        let bin = Binomial::new(m, p).expect("valid binomial");
        let (mean, width) = if label.starts_with("bern") { (p, 1.0) } else { (x * (2.0 * p - 1.0), x) };
        let r = mu(width, m, eps);
        let mut bad = 0;
        for _ in 0..COVERAGE_TRIALS {
            let k = bin.sample(&mut rng) as f64 / m as f64;
            let obs = if label.starts_with("bern") { k } else { x * (2.0 * k - 1.0) };
            if (obs - mean).abs() > r {
                bad += 1;
            }
        }
        out.push((format!("{label} eps={eps}"), bad));
    }
    out
}

fn weak_duality(seed: u64) -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opts = SolverOptions::default();
    let mut worst = f64::NEG_INFINITY;
    let mut cases = 0;
    for d in 2..=3 {
        let set = WitnessSet::new(d).expect("valid dimension");
        for _ in 0..6 {
            let v = rng.random_range(0.6..1.0);
            let centers = set.expected_isotropic(v);
            let widths: Vec<f64> = (0..set.len()).map(|_| rng.random_range(0.0..0.1)).collect();
            let Ok(b) = DualBounds::from_intervals(&set, &centers, &widths) else {
                return (false, "bound construction failed".into());
            };
            let (Ok(dual), Ok(primal)) = (solve_dual(&b, &set, &opts), primal_oracle(&b, &set, 1500, rng.random())) else {
                return (false, "solver error".into());
            };
            worst = worst.max(primal.p_guess - dual.objective);
            cases += 1;
        }
        let ideal = DualBounds::from_intervals(&set, &set.expected_isotropic(1.0), &vec![0.0; set.len()]);
        match ideal.and_then(|b| solve_dual(&b, &set, &opts)) {
            Ok(sol) if (sol.objective - 1.0 / d as f64).abs() <= 1e-4 => {}
            _ => return (false, format!("ideal point at d={d} not within 1e-4 of 1/d")),
        }
    }
    (worst <= 1e-9, format!("{cases} cases, max(primal - dual) = {worst:.3e}"))
}

fn recomposition() -> (bool, String) {
    let mut worst: f64 = 0.0;
    for n in [1_000_000u128, 1_000_000_000] {
        let Ok(p) = ProtocolParams::new(4, n, 0.1) else {
            return (false, "invalid protocol".into());
        };
        for regime in Regime::ALL {
            match budget_for(regime, 1e-10, 1e-3, 1e-3, &p) {
                Ok(b) => worst = worst.max((b.recompose() - 1e-10).abs() / 1e-10),
                Err(e) => return (false, e.to_string()),
            }
        }
    }
    (worst <= 1e-9, format!("max relative error {worst:.3e}"))
}

/// Runs the suite with the radius `mu` in place of the fixed-length Hoeffding radius.
pub fn run_with(mu: RadiusFn) -> SelftestReport {
    let start = Instant::now();
    let mut checks = Vec::new();
    for (i, eps) in [0.1, 0.01].into_iter().enumerate() {
        for (label, bad) in coverage(mu, eps, 17 + i as u64) {
            let limit = coverage_limit(eps, COVERAGE_TRIALS);
            checks.push(Check {
                name: format!("hoeffding coverage {label}"),
                passed: (bad as f64) <= limit,
                detail: format!("{bad} of {COVERAGE_TRIALS} outside (limit {limit:.1})"),
            });
        }
    }
    let (passed, detail) = weak_duality(5);
    checks.push(Check {
        name: "weak duality d<=3".into(),
        passed,
        detail,
    });
    let (passed, detail) = recomposition();
    checks.push(Check {
        name: "budget recomposition".into(),
        passed,
        detail,
    });
    SelftestReport {
        checks,
        seconds: start.elapsed().as_secs_f64(),
    }
}

pub fn run() -> SelftestReport {
    run_with(mu_fixed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_build_passes() {
        let r = run();
        assert!(r.passed(), "{r:#?}");
        assert!(r.seconds < 60.0);
    }

    #[test]
    fn corrupted_radius_fails() {
        let r = run_with(|x, m, eps| mu_fixed(x, m, eps) / 4.0);
        assert!(!r.passed());
        assert!(r.checks.iter().any(|c| c.name.starts_with("hoeffding") && !c.passed));
    }
}
