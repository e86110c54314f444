//! Brute-force primal search for small dimensions.
//!
//! Candidate attacks are classical-quantum ensembles: with probability
//! `p_err` Eve holds an anti-correlated pair `|i,j>` (`i != j`) and knows `i`;
//! with probability `p_e` she holds label `e` while Alice and Bob share the
//! pure correlated state `sum_i psi_{e,i} |i,i>`. Her best guess given `e` is
//! the largest `psi_{e,i}^2`. Every reported point satisfies the constraints
//! exactly as evaluated, so it is a lower bound on the optimal guessing
//! probability and can never exceed a valid dual objective.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::DualBounds;
use crate::error::{invalid, Result};
use crate::witness::WitnessSet;

/// Largest dimension the oracle accepts.
pub const ORACLE_MAX_DIM: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    /// Best feasible guessing probability found (at least `1/d`).
    pub p_guess: f64,
    /// Whether any explicit feasible ensemble was found.
    pub feasible: bool,
    pub p_err: f64,
    pub weights: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

#[derive(Clone)]
struct Ensemble {
    p_err: f64,
    weights: Vec<f64>,
    states: Vec<Vec<f64>>,
}

fn coherences(psi: &[f64]) -> Vec<f64> {
    let d = psi.len();
    (1..d)
        .map(|k| (0..d - k).map(|i| 2.0 * psi[i] * psi[i + k]).sum())
        .collect()
}

impl Ensemble {
    fn guess(&self) -> f64 {
        self.p_err
            + self
                .weights
                .iter()
                .zip(&self.states)
                .map(|(p, s)| p * s.iter().map(|x| x * x).fold(0.0, f64::max))
                .sum::<f64>()
    }

    fn feasible(&self, b: &DualBounds) -> bool {
        if self.p_err < b.w0_lower || self.p_err > b.w0_upper {
            return false;
        }
        let mut coh = vec![0.0; b.dim - 1];
        for (p, s) in self.weights.iter().zip(&self.states) {
            for (c, x) in coh.iter_mut().zip(coherences(s)) {
                *c += p * x;
            }
        }
        coh.iter().zip(&b.wk_lower).all(|(c, lo)| c >= lo)
    }
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Biased superposition `a|l> + b sum_{i != l} |i>` (normalised).
fn biased(d: usize, ell: usize, bias: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..d).map(|i| if i == ell { 1.0 + bias } else { 1.0 }).collect();
    normalize(&mut v);
    v
}

/// Structured families: `p_err` mixed with `d` biased superpositions, one per label.
fn structured(d: usize, b: &DualBounds) -> Option<Ensemble> {
    let mut best: Option<Ensemble> = None;
    let p_errs = [b.w0_lower, 0.5 * (b.w0_lower + b.w0_upper), b.w0_upper];
    for &p_err in &p_errs {
        for step in 0..=400 {
            let bias = if step == 0 { 0.0 } else { (step as f64 / 40.0).exp2() - 1.0 };
            let e = Ensemble {
                p_err,
                weights: vec![(1.0 - p_err) / d as f64; d],
                states: (0..d).map(|l| biased(d, l, bias)).collect(),
            };
            if e.feasible(b) && best.as_ref().is_none_or(|x| e.guess() > x.guess()) {
                best = Some(e);
            }
        }
    }
    best
}

fn random_ensemble(d: usize, b: &DualBounds, rng: &mut ChaCha8Rng) -> Ensemble {
    let comps = d + 1;
    let p_err = if b.w0_upper > b.w0_lower {
        rng.random_range(b.w0_lower..=b.w0_upper)
    } else {
        b.w0_lower
    };
    let mut weights: Vec<f64> = (0..comps).map(|_| rng.random::<f64>() + 1e-3).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w *= (1.0 - p_err) / total);
    let states = (0..comps)
        .map(|_| {
            let mut v: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            normalize(&mut v);
            v
        })
        .collect();
    Ensemble {
        p_err,
        weights,
        states,
    }
}

fn perturb(e: &Ensemble, b: &DualBounds, sigma: f64, rng: &mut ChaCha8Rng) -> Ensemble {
    let mut out = e.clone();
    let comps = out.states.len();
    match rng.random_range(0..3) {
        0 => {
            let i = rng.random_range(0..comps);
            for x in out.states[i].iter_mut() {
                *x += sigma * rng.sample::<f64, _>(StandardNormal);
            }
            normalize(&mut out.states[i]);
        }
        1 => {
            let (i, j) = (rng.random_range(0..comps), rng.random_range(0..comps));
            let amount = (sigma * rng.random::<f64>() * out.weights[i]).min(out.weights[i]);
            out.weights[i] -= amount;
            out.weights[j] += amount;
        }
        _ => {
            let delta = sigma * rng.sample::<f64, _>(StandardNormal) * 0.1;
            let p_new = (out.p_err + delta).clamp(b.w0_lower, b.w0_upper).clamp(0.0, 1.0);
            let rest: f64 = out.weights.iter().sum();
            if rest > 0.0 {
                let scale = (1.0 - p_new) / rest;
                out.weights.iter_mut().for_each(|w| *w *= scale);
                out.p_err = p_new;
            }
        }
    }
    out
}

/// Searches explicit feasible attacks and returns the best guessing probability.
///
/// Falls back to `1/d` when no feasible ensemble is found. `search_budget`
/// counts random proposals; the search is deterministic given `seed`.
pub fn primal_oracle(bounds: &DualBounds, set: &WitnessSet, search_budget: usize, seed: u64) -> Result<OracleResult> {
    let d = set.dim;
    if d > ORACLE_MAX_DIM {
        return Err(invalid("d", format!("primal oracle supports d <= {ORACLE_MAX_DIM}, got {d}")));
    }
    bounds.check(set)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = structured(d, bounds);

    let restarts = 8;
    let per = search_budget / (restarts + 1);
    // random feasible seeds
    for _ in 0..per {
        let e = random_ensemble(d, bounds, &mut rng);
        if e.feasible(bounds) && best.as_ref().is_none_or(|x| e.guess() > x.guess()) {
            best = Some(e);
        }
    }
    // hill climbing from the incumbent, restarting with shrinking steps
    if let Some(mut cur) = best.clone() {
        for r in 0..restarts {
            let mut sigma = 0.3 / (1 << r) as f64;
            for it in 0..per {
                let cand = perturb(&cur, bounds, sigma, &mut rng);
                if cand.feasible(bounds) && cand.guess() >= cur.guess() {
                    cur = cand;
                }
                if it % 200 == 199 {
                    sigma *= 0.7;
                }
            }
            if best.as_ref().is_none_or(|x| cur.guess() > x.guess()) {
                best = Some(cur.clone());
            }
        }
    }

    Ok(match best {
        Some(e) if e.guess() > 1.0 / d as f64 => OracleResult {
            p_guess: e.guess(),
            feasible: true,
            p_err: e.p_err,
            weights: e.weights,
            states: e.states,
        },
        found => OracleResult {
            p_guess: 1.0 / d as f64,
            feasible: found.is_some(),
            p_err: 0.0,
            weights: vec![],
            states: vec![],
        },
    })
}
