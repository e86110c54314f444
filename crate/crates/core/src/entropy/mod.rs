//! Certified min-entropy bounds from the dual of the guessing-probability SDP.
//!
//! Eve's guessing probability is bounded by
//!
//! ```text
//! min  y0 + z0U * U - z0L * L - sum_k z_k c_k
//! s.t. y0 >= lambda_max(M_l),  M_l = |l><l| (x) 1 - (z0U - z0L) W0 + sum_k z_k W_k
//! ```
//!
//! with `L <= <W0> <= U` and `<W_k> >= c_k`. Any nonnegative multipliers give
//! a valid upper bound, so every point the solver returns is sound.
//!
//! All matrices are block diagonal between the correlated subspace
//! `span{|i,i>}` and the individual anti-correlated vectors `|i,j>`, `i != j`.
//! On the anti-correlated part `M_l` has top eigenvalue `1 - (z0U - z0L)`; on
//! the correlated part it is the `d x d` matrix `E_ll + sum_k z_k B_k`.

mod oracle;
mod solver;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::witness::{Witness, WitnessSet};

pub use oracle::{primal_oracle, OracleResult};
pub use solver::{solve_dual, SolverOptions};

/// Relative slack added to `y0` so that eigenvalue round-off stays on the safe side.
pub const SAFETY_SLACK: f64 = 1e-9;

/// Constraint intervals handed to the dual program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualBounds {
    pub dim: usize,
    pub w0_lower: f64,
    pub w0_upper: f64,
    /// Lower bounds on `<W_k>`, `k = 1..d-1`.
    pub wk_lower: Vec<f64>,
}

impl DualBounds {
    pub fn new(dim: usize, w0_lower: f64, w0_upper: f64, wk_lower: Vec<f64>) -> Result<Self> {
        if dim < 2 {
            return Err(invalid("d", "dimension must be >= 2"));
        }
        if wk_lower.len() != dim - 1 {
            return Err(Error::DimensionMismatch {
                expected: dim - 1,
                got: wk_lower.len(),
            });
        }
        if !(w0_lower <= w0_upper) {
            return Err(invalid("w0", format!("empty interval [{w0_lower}, {w0_upper}]")));
        }
        if wk_lower.iter().any(|c| c.is_nan()) {
            return Err(invalid("wk_lower", "NaN bound"));
        }
        Ok(Self {
            dim,
            w0_lower,
            w0_upper,
            wk_lower,
        })
    }

    /// Bounds that every state satisfies.
    pub fn vacuous(set: &WitnessSet) -> Self {
        Self {
            dim: set.dim,
            w0_lower: 0.0,
            w0_upper: 1.0,
            wk_lower: set.inf_norm[1..].iter().map(|x| -x).collect(),
        }
    }

    /// Intervals `center +- radius` (W0 two-sided, coherence lower side),
    /// intersected with each witness's spectral range.
    pub fn from_intervals(set: &WitnessSet, centers: &[f64], radii: &[f64]) -> Result<Self> {
        if centers.len() != set.len() || radii.len() != set.len() {
            return Err(Error::DimensionMismatch {
                expected: set.len(),
                got: centers.len().min(radii.len()),
            });
        }
        let lo = centers[0] - radii[0];
        let hi = centers[0] + radii[0];
        let wk = (1..set.len()).map(|j| centers[j] - radii[j]).collect();
        Self::new(set.dim, lo.min(hi), hi.max(lo), wk).map(|b| b.clipped(set))
    }

    /// Intersects every interval with the spectral range of its witness.
    pub fn clipped(mut self, set: &WitnessSet) -> Self {
        let w0 = set.witnesses[0];
        self.w0_lower = self.w0_lower.clamp(w0.spectral_min(), w0.spectral_max());
        self.w0_upper = self.w0_upper.clamp(self.w0_lower, w0.spectral_max());
        for (c, w) in self.wk_lower.iter_mut().zip(&set.witnesses[1..]) {
            *c = c.clamp(w.spectral_min(), w.spectral_max());
        }
        self
    }

    fn check(&self, set: &WitnessSet) -> Result<()> {
        if set.dim != self.dim {
            return Err(Error::DimensionMismatch {
                expected: set.dim,
                got: self.dim,
            });
        }
        Ok(())
    }
}

/// Dual multipliers without `y0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualPoint {
    pub z0_lower: f64,
    pub z0_upper: f64,
    pub z: Vec<f64>,
}

impl DualPoint {
    pub fn zero(dim: usize) -> Self {
        Self {
            z0_lower: 0.0,
            z0_upper: 0.0,
            z: vec![0.0; dim - 1],
        }
    }

    fn check(&self, dim: usize) -> Result<()> {
        if self.z.len() != dim - 1 {
            return Err(Error::DimensionMismatch {
                expected: dim - 1,
                got: self.z.len(),
            });
        }
        let all = [self.z0_lower, self.z0_upper].into_iter().chain(self.z.iter().copied());
        for v in all {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid("z", format!("multipliers must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// A certified dual point. Everything needed to re-verify the bound is stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualSolution {
    pub dim: usize,
    pub y0: f64,
    pub z0_lower: f64,
    pub z0_upper: f64,
    pub z: Vec<f64>,
    /// Upper bound on the guessing probability, within `[1/d, 1]`.
    pub objective: f64,
    pub hmin: f64,
    /// `y0 - max_l lambda_max(M_l)`, recomputed after solving.
    pub certificate_slack: f64,
    pub converged: bool,
    pub evaluations: usize,
}

impl DualSolution {
    pub fn point(&self) -> DualPoint {
        DualPoint {
            z0_lower: self.z0_lower,
            z0_upper: self.z0_upper,
            z: self.z.clone(),
        }
    }
}

/// `M_l` as a dense `d^2 x d^2` matrix.
pub fn build_m(set: &WitnessSet, point: &DualPoint, ell: usize) -> Result<DMatrix<f64>> {
    let d = set.dim;
    point.check(d)?;
    if ell >= d {
        return Err(invalid("ell", format!("must lie in 0..{d}, got {ell}")));
    }
    let n = d * d;
    let mut m = DMatrix::zeros(n, n);
    for j in 0..d {
        m[(ell * d + j, ell * d + j)] = 1.0;
    }
    let a = point.z0_upper - point.z0_lower;
    for (r, c, v) in set.witnesses[0].triplets() {
        m[(r, c)] -= a * v;
    }
    for (w, &zk) in set.witnesses[1..].iter().zip(&point.z) {
        if zk != 0.0 {
            for (r, c, v) in w.triplets() {
                m[(r, c)] += zk * v;
            }
        }
    }
    Ok(m)
}

/// `E_ll + sum_k z_k B_k` on the correlated subspace.
pub(crate) fn correlated_block(set: &WitnessSet, z: &[f64], ell: usize) -> DMatrix<f64> {
    let d = set.dim;
    let mut m = DMatrix::zeros(d, d);
    m[(ell, ell)] = 1.0;
    for (k, &zk) in (1..d).zip(z) {
        for i in 0..d - k {
            m[(i, i + k)] += zk;
            m[(i + k, i)] += zk;
        }
    }
    m
}

/// `max_l lambda_max` of the correlated blocks. The map `l -> d-1-l` is a
/// symmetry of every `B_k`, so half of the blocks suffice.
pub(crate) fn correlated_lambda(set: &WitnessSet, z: &[f64]) -> f64 {
    let d = set.dim;
    (0..d.div_ceil(2))
        .map(|ell| {
            correlated_block(set, z, ell)
                .symmetric_eigenvalues()
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `max_l lambda_max(M_l)` through the block decomposition.
pub fn max_eigenvalue_blocks(set: &WitnessSet, point: &DualPoint) -> Result<f64> {
    point.check(set.dim)?;
    let anti = 1.0 - (point.z0_upper - point.z0_lower);
    Ok(correlated_lambda(set, &point.z).max(anti))
}

/// `max_l lambda_max(M_l)` from the full `d^2 x d^2` matrices.
pub fn max_eigenvalue_dense(set: &WitnessSet, point: &DualPoint) -> Result<f64> {
    let mut best = f64::NEG_INFINITY;
    for ell in 0..set.dim {
        let m = build_m(set, point, ell)?;
        best = best.max(linalg::extreme_eigenvalues(&m).1);
    }
    Ok(best)
}

/// `y0` certified against `lambda` with the safety slack.
pub fn certified_y0(lambda: f64) -> f64 {
    lambda + SAFETY_SLACK * (1.0 + lambda.abs())
}

/// Linear part of the dual objective.
pub fn linear_term(bounds: &DualBounds, point: &DualPoint) -> f64 {
    point.z0_upper * bounds.w0_upper - point.z0_lower * bounds.w0_lower
        - point.z.iter().zip(&bounds.wk_lower).map(|(z, c)| z * c).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualValue {
    pub y0: f64,
    pub objective: f64,
}

/// Dual objective at `point` with `y0` set to the certified top eigenvalue.
/// Valid for every nonnegative `point`.
pub fn dual_value(bounds: &DualBounds, set: &WitnessSet, point: &DualPoint) -> Result<DualValue> {
    bounds.check(set)?;
    let y0 = certified_y0(max_eigenvalue_blocks(set, point)?);
    Ok(DualValue {
        y0,
        objective: y0 + linear_term(bounds, point),
    })
}

/// Fills in the optimal W0 multipliers for coherence multipliers `z`.
pub(crate) fn complete_point(set: &WitnessSet, z: Vec<f64>) -> (DualPoint, f64) {
    let lambda = correlated_lambda(set, &z);
    let point = DualPoint {
        z0_lower: (lambda - 1.0).max(0.0),
        z0_upper: 0.0,
        z,
    };
    (point, lambda)
}

/// Re-verifies a solution from its stored variables alone.
///
/// Returns `y0 - max_l lambda_max(M_l)` computed from the dense matrices
/// when they are small enough, else from the exact block decomposition.
pub fn certificate_slack(set: &WitnessSet, sol: &DualSolution) -> Result<f64> {
    let point = sol.point();
    let lam = if set.dim * set.dim <= linalg::DENSE_LIMIT {
        max_eigenvalue_dense(set, &point)?
    } else {
        max_eigenvalue_blocks(set, &point)?
    };
    Ok(sol.y0 - lam)
}

/// Certified per-round min-entropy, clamped to `[0, log2 d]`.
pub fn hmin_rate(bounds: &DualBounds, set: &WitnessSet, opts: &SolverOptions) -> Result<f64> {
    Ok(solve_dual(bounds, set, opts)?.hmin)
}

/// Assembles a [`DualSolution`] from coherence multipliers.
pub(crate) fn finish(
    bounds: &DualBounds,
    set: &WitnessSet,
    z: Vec<f64>,
    converged: bool,
    evaluations: usize,
) -> Result<DualSolution> {
    let d = set.dim as f64;
    let (point, lambda) = complete_point(set, z);
    let y0 = certified_y0(lambda.max(1.0 - (point.z0_upper - point.z0_lower)));
    // p_guess lies in [1/d, 1] for every state, so clamping keeps the bound valid.
    let objective = (y0 + linear_term(bounds, &point)).clamp(1.0 / d, 1.0);
    let mut sol = DualSolution {
        dim: set.dim,
        y0,
        z0_lower: point.z0_lower,
        z0_upper: point.z0_upper,
        z: point.z,
        objective,
        hmin: (-objective.log2()).clamp(0.0, d.log2()) + 0.0,
        certificate_slack: 0.0,
        converged,
        evaluations,
    };
    sol.certificate_slack = certificate_slack(set, &sol)?;
    Ok(sol)
}

/// Witness expectations `Tr[W rho]` for a dense state.
pub fn expectations(set: &WitnessSet, rho: &DMatrix<f64>) -> Vec<f64> {
    set.witnesses
        .iter()
        .map(|w: &Witness| w.triplets().iter().map(|&(r, c, v)| v * rho[(c, r)]).sum())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_multipliers_give_projector() {
        let set = WitnessSet::new(3).unwrap();
        let p = DualPoint::zero(3);
        for ell in 0..3 {
            let m = build_m(&set, &p, ell).unwrap();
            assert_eq!(linalg::extreme_eigenvalues(&m).1, 1.0);
        }
        let v = dual_value(&DualBounds::vacuous(&set), &set, &p).unwrap();
        assert!((v.objective - 1.0).abs() < 1e-8);
    }

    #[test]
    fn d2_w0_multiplier() {
        let set = WitnessSet::new(2).unwrap();
        let p = DualPoint {
            z0_lower: 0.0,
            z0_upper: 1.0,
            z: vec![0.0],
        };
        let m = build_m(&set, &p, 0).unwrap();
        let (lo, hi) = linalg::extreme_eigenvalues(&m);
        assert!((hi - 1.0).abs() < 1e-14);
        assert!((lo + 1.0).abs() < 1e-14);
    }

    #[test]
    fn d2_large_coherence_multiplier_has_unit_slope() {
        let set = WitnessSet::new(2).unwrap();
        let lam = |z: f64| {
            let p = DualPoint {
                z0_lower: 0.0,
                z0_upper: 0.0,
                z: vec![z],
            };
            max_eigenvalue_dense(&set, &p).unwrap()
        };
        let slope = (lam(2e4) - lam(1e4)) / 1e4;
        assert!((slope - 1.0).abs() < 1e-6);
    }

    #[test]
    fn blocks_agree_with_dense() {
        for d in 2..=5 {
            let set = WitnessSet::new(d).unwrap();
            let p = DualPoint {
                z0_lower: 0.3,
                z0_upper: 1.1,
                z: (1..d).map(|k| 0.7 / k as f64).collect(),
            };
            let a = max_eigenvalue_blocks(&set, &p).unwrap();
            let b = max_eigenvalue_dense(&set, &p).unwrap();
            assert!((a - b).abs() < 1e-12, "d={d}: {a} vs {b}");
        }
    }

    #[test]
    fn expectations_of_isotropic_state() {
        let set = WitnessSet::new(4).unwrap();
        let rho = crate::witness::isotropic_state(4, 0.5);
        let e = expectations(&set, &rho);
        let exact = set.expected_isotropic(0.5);
        for (a, b) in e.iter().zip(&exact) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        let set = WitnessSet::new(3).unwrap();
        assert!(DualBounds::new(3, 0.0, 1.0, vec![0.0]).is_err());
        assert!(DualBounds::new(3, 0.5, 0.1, vec![0.0, 0.0]).is_err());
        assert!(build_m(&set, &DualPoint::zero(3), 3).is_err());
        let bad = DualPoint {
            z0_lower: -1.0,
            z0_upper: 0.0,
            z: vec![0.0, 0.0],
        };
        assert!(dual_value(&DualBounds::vacuous(&set), &set, &bad).is_err());
    }
}
