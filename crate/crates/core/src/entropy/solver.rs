//! Minimisation of the reduced dual objective
//! `h(z) = L + (1 - L) lam(z) - c.z` over `z >= 0`, where `lam(z)` is the
//! largest eigenvalue over the correlated blocks `E_ll + sum_k z_k B_k`.
//!
//! The max-eigenvalue is smoothed by a log-sum-exp over the block spectra and
//! the temperature is lowered stage by stage; each stage is a BFGS run in the
//! coordinates `z = w^2`. A ray search and a coordinate pattern search on the
//! exact objective finish the job. Every evaluation also yields the exact
//! certified score, and the best one seen is what gets returned, so stopping
//! at any point still produces a valid bound.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{certified_y0, correlated_block, finish, DualBounds, DualSolution};
use crate::error::Result;
use crate::witness::WitnessSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Maximum number of objective evaluations.
    pub iteration_budget: usize,
    /// Number of starting points (two deterministic, the rest random).
    pub starts: usize,
    pub seed: u64,
    /// Relative step size at which the final pattern search stops.
    pub tolerance: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            iteration_budget: 6000,
            starts: 3,
            seed: 0x5eed_0001,
            tolerance: 1e-9,
        }
    }
}

const TEMPERATURES: [f64; 9] = [0.3, 0.1, 3e-2, 1e-2, 3e-3, 1e-3, 1e-4, 1e-5, 1e-6];
const STAGE_ITERS: usize = 80;

struct Problem<'a> {
    set: &'a WitnessSet,
    lower: f64,
    c: Vec<f64>,
    evals: usize,
    budget: usize,
    best_score: f64,
    best_z: Vec<f64>,
}

struct Eval {
    value: f64,
    grad: Vec<f64>,
}

impl<'a> Problem<'a> {
    fn exhausted(&self) -> bool {
        self.evals >= self.budget
    }

    fn record(&mut self, z: &[f64], lambda: f64) -> f64 {
        let cz: f64 = z.iter().zip(&self.c).map(|(a, b)| a * b).sum();
        let score = certified_y0(lambda) - (lambda - 1.0).max(0.0) * self.lower - cz;
        if score < self.best_score {
            self.best_score = score;
            self.best_z = z.to_vec();
        }
        self.lower + (1.0 - self.lower) * lambda - cz
    }

    /// Exact objective only.
    fn exact(&mut self, z: &[f64]) -> Option<f64> {
        if self.exhausted() {
            return None;
        }
        self.evals += 1;
        let lambda = super::correlated_lambda(self.set, z);
        Some(self.record(z, lambda))
    }

    /// Smoothed objective and gradient at temperature `tau`.
    fn smooth(&mut self, z: &[f64], tau: f64) -> Option<Eval> {
        if self.exhausted() {
            return None;
        }
        self.evals += 1;
        let d = self.set.dim;
        let mut pairs: Vec<(f64, f64, DVector<f64>)> = Vec::with_capacity(d * d);
        for ell in 0..d.div_ceil(2) {
            let mult = if ell == d - 1 - ell { 1.0 } else { 2.0 };
            let eig = SymmetricEigen::new(correlated_block(self.set, z, ell));
            for (i, &lam) in eig.eigenvalues.iter().enumerate() {
                pairs.push((lam, mult, eig.eigenvectors.column(i).into_owned()));
            }
        }
        let lambda = pairs.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        let exact = self.record(z, lambda);

        let mut total = 0.0;
        let mut grad_lam = vec![0.0; d - 1];
        for (lam, mult, u) in &pairs {
            let t = (lam - lambda) / tau;
            if t < -60.0 {
                continue;
            }
            let w = mult * t.exp();
            total += w;
            for (k, g) in grad_lam.iter_mut().enumerate() {
                let off = k + 1;
                let mut s = 0.0;
                for i in 0..d - off {
                    s += u[i] * u[i + off];
                }
                *g += w * 2.0 * s;
            }
        }
        let smooth_lambda = lambda + tau * total.ln();
        let value = exact + (1.0 - self.lower) * (smooth_lambda - lambda);
        let grad = grad_lam
            .iter()
            .zip(&self.c)
            .map(|(g, c)| (1.0 - self.lower) * g / total - c)
            .collect();
        Some(Eval { value, grad })
    }

    /// BFGS in `w` with `z = w^2`. Returns the final `w` or `None` once the
    /// budget runs out.
    fn bfgs(&mut self, w0: &[f64], tau: f64) -> Option<Vec<f64>> {
        let n = w0.len();
        let to_z = |w: &[f64]| w.iter().map(|x| x * x).collect::<Vec<f64>>();
        let chain = |w: &[f64], gz: &[f64]| -> DVector<f64> {
            DVector::from_iterator(n, w.iter().zip(gz).map(|(wi, gi)| 2.0 * wi * gi))
        };

        let mut x = DVector::from_column_slice(w0);
        let e = self.smooth(&to_z(x.as_slice()), tau)?;
        let mut f = e.value;
        let mut g = chain(x.as_slice(), &e.grad);
        let scale = 1.0 / g.amax().max(1.0);
        let mut h = DMatrix::identity(n, n) * scale;
        let mut stalls = 0;

        for _ in 0..STAGE_ITERS {
            if g.amax() < 1e-12 {
                break;
            }
            let mut p = -(&h * &g);
            let mut slope = g.dot(&p);
            if slope >= 0.0 {
                h = DMatrix::identity(n, n) * scale;
                p = -&g * scale;
                slope = g.dot(&p);
            }
            let mut step = 1.0;
            let mut accepted = None;
            for _ in 0..30 {
                let xn = &x + &p * step;
                let e = self.smooth(&to_z(xn.as_slice()), tau)?;
                if e.value <= f + 1e-4 * step * slope {
                    accepted = Some((xn, e));
                    break;
                }
                step *= 0.5;
            }
            let Some((xn, e)) = accepted else { break };
            let gn = chain(xn.as_slice(), &e.grad);
            let s = &xn - &x;
            let y = &gn - &g;
            let sy = s.dot(&y);
            if sy > 1e-18 * s.norm() * y.norm() && sy > 0.0 {
                let rho = 1.0 / sy;
                let hy = &h * &y;
                let yhy = y.dot(&hy);
                h += (&s * s.transpose()) * (rho * rho * yhy + rho) - (&hy * s.transpose() + &s * hy.transpose()) * rho;
            }
            let improvement = f - e.value;
            x = xn;
            f = e.value;
            g = gn;
            if improvement <= 1e-13 * (1.0 + f.abs()) {
                stalls += 1;
                if stalls >= 3 {
                    break;
                }
            } else {
                stalls = 0;
            }
        }
        Some(x.as_slice().to_vec())
    }

    /// Scales `z` along its own ray while the exact objective improves.
    fn ray_search(&mut self, z: &[f64]) -> Option<Vec<f64>> {
        let mut best = z.to_vec();
        let mut fbest = self.exact(z)?;
        for factor in [2.0, 1.25, 1.03] {
            loop {
                let trial: Vec<f64> = best.iter().map(|x| x * factor).collect();
                let f = self.exact(&trial)?;
                if f < fbest {
                    best = trial;
                    fbest = f;
                } else {
                    break;
                }
            }
        }
        Some(best)
    }

    /// Coordinate pattern search on the exact objective. Returns whether the
    /// step size fell below `tol` before the budget ran out.
    fn pattern_search(&mut self, z: &[f64], tol: f64) -> bool {
        let mut z = z.to_vec();
        let Some(mut f) = self.exact(&z) else { return false };
        let mut delta = 0.1;
        while delta > tol {
            let mut improved = false;
            for k in 0..z.len() {
                for sign in [1.0, -1.0] {
                    let mut trial = z.clone();
                    trial[k] = (z[k] + sign * delta * (z[k].abs() + 1e-3)).max(0.0);
                    if trial[k] == z[k] {
                        continue;
                    }
                    let Some(ft) = self.exact(&trial) else { return false };
                    if ft < f {
                        z = trial;
                        f = ft;
                        improved = true;
                        break;
                    }
                }
            }
            if !improved {
                delta *= 0.5;
            }
        }
        true
    }
}

/// Minimises the dual program for `bounds` and returns a certified solution.
///
/// The search path does not depend on the budget, so a smaller budget
/// returns a prefix of the same trajectory and never a better objective.
pub fn solve_dual(bounds: &DualBounds, set: &WitnessSet, opts: &SolverOptions) -> Result<DualSolution> {
    bounds.check(set)?;
    let d = set.dim;
    let mut prob = Problem {
        set,
        lower: bounds.w0_lower.clamp(0.0, 1.0),
        c: bounds.wk_lower.clone(),
        evals: 0,
        budget: opts.iteration_budget,
        best_score: f64::INFINITY,
        best_z: vec![0.0; d - 1],
    };
    // z = 0 is always available and certifies the trivial bound.
    let zero = vec![0.0; d - 1];
    prob.exact(&zero);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut starts: Vec<Vec<f64>> = vec![vec![0.1; d - 1]];
    let norm_c: Vec<f64> = bounds.wk_lower.iter().map(|c| c.max(0.0) + 0.01).collect();
    starts.push(norm_c);
    while starts.len() < opts.starts.max(1) {
        starts.push((0..d - 1).map(|_| 10f64.powf(rng.random_range(-2.0..1.0))).collect());
    }
    starts.truncate(opts.starts.max(1));

    let mut converged = false;
    'outer: for start in &starts {
        let mut w: Vec<f64> = start.iter().map(|z| z.sqrt()).collect();
        for &tau in &TEMPERATURES {
            match prob.bfgs(&w, tau) {
                Some(next) => w = next,
                None => break 'outer,
            }
        }
        let z: Vec<f64> = w.iter().map(|x| x * x).collect();
        if prob.ray_search(&z).is_none() {
            break;
        }
    }
    if !prob.exhausted() {
        let best = prob.best_z.clone();
        if let Some(z) = prob.ray_search(&best) {
            converged = prob.pattern_search(&z, opts.tolerance);
        }
    }
    let evals = prob.evals;
    finish(bounds, set, prob.best_z, converged, evals)
}
