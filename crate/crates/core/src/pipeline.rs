//! End-to-end key-length evaluation: budget, statistics, dual bound, length.

use serde::{Deserialize, Serialize};

use crate::entropy::{solve_dual, DualBounds, DualSolution, SolverOptions};
use crate::error::{invalid, Result};
use crate::keylength::{
    alpha_choice, fixed_coherent_length, fixed_collective_length, leak_ec, theta, varlen_coherent_length,
    varlen_collective_length, KeyLengthReport, LeakIr, LeakageModel, VarlenInputs,
};
use crate::params::{budget_for, derive_counts, EpsilonBudget, ProtocolParams, Regime, RoundCounts};
use crate::statistics::{
    accept, confidence_set_varlen, feasible_bounds_fixed, witness_counts, AcceptanceOutcome, AcceptanceSpec,
    ObservationVector,
};
use crate::witness::WitnessSet;

/// Target security parameter and its split knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Security {
    /// epsilon (collective) or nu (coherent).
    pub total: f64,
    pub r: f64,
    pub s: f64,
}

impl Default for Security {
    fn default() -> Self {
        Self {
            total: 1e-10,
            r: 1e-3,
            s: 1e-3,
        }
    }
}

/// Fixed-length protocol frozen before execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedDesign {
    pub budget: EpsilonBudget,
    pub spec: AcceptanceSpec,
    pub bounds: DualBounds,
    pub solution: DualSolution,
    /// Length delivered whenever the acceptance test passes.
    pub report: KeyLengthReport,
}

/// Outcome of one protocol run on observed statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub report: KeyLengthReport,
    pub acceptance: Option<AcceptanceOutcome>,
    pub solution: DualSolution,
}

#[derive(Debug, Clone)]
pub struct Calculator {
    pub params: ProtocolParams,
    pub counts: RoundCounts,
    pub witnesses: WitnessSet,
    pub security: Security,
    pub leakage: LeakageModel,
    pub solver: SolverOptions,
}

impl Calculator {
    pub fn new(params: ProtocolParams, security: Security, leakage: LeakageModel, solver: SolverOptions) -> Result<Self> {
        let counts = derive_counts(&params)?;
        let witnesses = WitnessSet::new(params.dim)?;
        Ok(Self {
            params,
            counts,
            witnesses,
            security,
            leakage,
            solver,
        })
    }

    pub fn budget(&self, regime: Regime) -> Result<EpsilonBudget> {
        budget_for(regime, self.security.total, self.security.r, self.security.s, &self.params)
    }

    /// Per-witness test counts of this protocol.
    pub fn test_counts(&self) -> Vec<Option<u64>> {
        witness_counts(&self.witnesses, &self.counts)
    }

    /// Isotropic expectations at visibility `v`, carrying this protocol's test counts.
    pub fn expected_observations(&self, v: f64) -> Result<ObservationVector> {
        ObservationVector::new(crate::witness::expected_isotropic(self.params.dim, v)?, self.test_counts())
    }

    fn leak(&self, error_rate: f64) -> f64 {
        leak_ec(self.counts.key_rounds, self.params.dim, error_rate, self.leakage)
    }

    /// Freezes a fixed-length protocol around `centers` with margins `t_F mu`.
    ///
    /// `counts` defaults to the protocol's own allocation; pass `None` entries
    /// for the idealised infinite-sample limit.
    pub fn fixed_design(&self, regime: Regime, centers: Vec<f64>, counts: Option<&[Option<u64>]>) -> Result<FixedDesign> {
        if regime.is_variable_length() {
            return Err(invalid("regime", format!("{regime} is not a fixed-length regime")));
        }
        let budget = self.budget(regime)?;
        let own = self.test_counts();
        let counts = counts.unwrap_or(&own);
        let spec = AcceptanceSpec::new(&self.witnesses, centers, counts, budget.eps_at, self.params.margin_factor)?;
        let bounds = feasible_bounds_fixed(&spec, &self.witnesses)?;
        let solution = solve_dual(&bounds, &self.witnesses, &self.solver)?;
        let leak = LeakIr::new(self.leak(spec.centers[0]), budget.eps_ev);
        let n = self.counts.key_rounds;
        let mut report = match regime {
            Regime::FixedCollective => fixed_collective_length(n, solution.hmin, leak, budget.eps_pa),
            _ => fixed_coherent_length(n, solution.hmin, leak, budget.eps_pa, budget.lift),
        };
        report.log2_security = Some(budget.log2_composite());
        Ok(FixedDesign {
            budget,
            spec,
            bounds,
            solution,
            report,
        })
    }

    /// Runs the acceptance test of a frozen design on observed statistics.
    pub fn run_fixed(&self, design: &FixedDesign, obs: &ObservationVector) -> Result<Evaluation> {
        obs.validate(&self.witnesses)?;
        let outcome = accept(obs, &design.spec)?;
        let report = if outcome.accepted {
            design.report.clone()
        } else {
            design.report.aborted()
        };
        Ok(Evaluation {
            report,
            acceptance: Some(outcome),
            solution: design.solution.clone(),
        })
    }

    /// Dual bounds from the variable-length confidence set around `obs`.
    pub fn varlen_bounds(&self, budget: &EpsilonBudget, obs: &ObservationVector) -> Result<DualBounds> {
        confidence_set_varlen(obs, &self.witnesses, budget.eps_at)?.to_bounds(&self.witnesses)
    }

    /// Variable-length key from observed statistics.
    pub fn run_varlen(&self, regime: Regime, obs: &ObservationVector) -> Result<Evaluation> {
        if !regime.is_variable_length() {
            return Err(invalid("regime", format!("{regime} is not a variable-length regime")));
        }
        let budget = self.budget(regime)?;
        let bounds = self.varlen_bounds(&budget, obs)?;
        let solution = solve_dual(&bounds, &self.witnesses, &self.solver)?;
        let n = self.counts.key_rounds;
        let d = self.params.dim;
        let alpha = alpha_choice(d, n, budget.eps_pa);
        let inputs = VarlenInputs {
            key_rounds: n,
            hmin_rate: solution.hmin,
            alpha,
            dim: d,
            lambda_ec: self.leak(obs.values[0]),
            theta: theta(alpha.alpha, budget.eps_pa, budget.eps_ev)?,
        };
        let mut report = match regime {
            Regime::VarlenCollective => varlen_collective_length(&inputs),
            _ => {
                let tilde = budget
                    .eps_tilde
                    .ok_or_else(|| invalid("eps_tilde", "coherent variable-length budget lacks eps_tilde"))?;
                varlen_coherent_length(&inputs, budget.lift, tilde)
            }
        };
        report.log2_security = Some(budget.log2_composite());
        Ok(Evaluation {
            report,
            acceptance: None,
            solution,
        })
    }

    /// One report for `regime`. Fixed-length regimes centre their acceptance
    /// test on `centers` (default: the observations themselves).
    pub fn evaluate(&self, regime: Regime, obs: &ObservationVector, centers: Option<Vec<f64>>) -> Result<Evaluation> {
        if regime.is_variable_length() {
            self.run_varlen(regime, obs)
        } else {
            let centers = centers.unwrap_or_else(|| obs.values.clone());
            let design = self.fixed_design(regime, centers, None)?;
            self.run_fixed(&design, obs)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keylength::KeyStatus;

    fn calc(n: u128, r_s: f64) -> Calculator {
        let p = ProtocolParams::new(16, n, r_s).unwrap().with_visibility(0.95).unwrap();
        Calculator::new(p, Security::default(), LeakageModel::Ideal, SolverOptions::default()).unwrap()
    }

    #[test]
    fn fixed_design_accepts_its_centres() {
        let c = calc(1_000_000_000_000, 0.01);
        let centers = c.witnesses.expected_isotropic(0.95);
        let design = c.fixed_design(Regime::FixedCollective, centers.clone(), None).unwrap();
        assert_eq!(design.report.status, KeyStatus::Key);
        let obs = ObservationVector::new(centers, c.test_counts()).unwrap();
        let ev = c.run_fixed(&design, &obs).unwrap();
        assert!(ev.acceptance.unwrap().accepted);
        assert_eq!(ev.report.ell, design.report.ell);
    }

    #[test]
    fn fixed_design_aborts_far_from_centres() {
        let c = calc(1_000_000_000_000, 0.01);
        let design = c
            .fixed_design(Regime::FixedCollective, c.witnesses.expected_isotropic(0.95), None)
            .unwrap();
        let obs = ObservationVector::new(c.witnesses.expected_isotropic(0.9), c.test_counts()).unwrap();
        let ev = c.run_fixed(&design, &obs).unwrap();
        assert_eq!(ev.report.status, KeyStatus::Abort);
        assert_eq!(ev.report.ell, 0);
    }

    #[test]
    fn varlen_positive_at_simulation_scale() {
        let c = calc(100_000_000, 0.4);
        let obs = ObservationVector::new(c.witnesses.expected_isotropic(0.95), c.test_counts()).unwrap();
        let ev = c.run_varlen(Regime::VarlenCollective, &obs).unwrap();
        assert_eq!(ev.report.status, KeyStatus::Key);
        let raw: f64 = ev.report.terms.raw();
        assert_eq!(raw, ev.report.raw);
        assert!(c.run_varlen(Regime::FixedCollective, &obs).is_err());
    }
}
